"""Independent reference computations shared by the unit and acceptance tests."""
import numpy as np

from probstruct.ekf import Linearization, update_linearized
from probstruct.model import StateEstimate


def linear_update(prior_mean, prior_cov, H, z, r):
    """Kalman update for an exactly linear measurement ``z = H x + v``."""
    state = StateEstimate(prior_mean, prior_cov)
    H = np.atleast_2d(np.asarray(H, dtype=float))
    HC = H @ state.cov
    lin = Linearization(state, ((0, 0),) * H.shape[0], H, H @ state.mean, HC, HC @ H.T)
    return update_linearized(lin, np.atleast_1d(z), np.atleast_1d(r))


def conjugate(m, v, z, r):
    """Closed-form posterior of a scalar Gaussian prior and Gaussian measurement."""
    post_var = 1.0 / (1.0 / v + 1.0 / r)
    return post_var * (m / v + z / r), post_var
