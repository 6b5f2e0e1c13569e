"""Pure-numpy mixture-velocity kernel (fallback for the compiled one).

Math, for each latent row z and diagonal mixture component k with mean
mu_k, per-dim data variance s_k and log weight log pi_k, on the linear
path z_t = (1-t) x0 + t x1 with x0 ~ N(0, I):

    a_k      = (1-t)^2 + t^2 s_k                     (per-dim variance of z_t | k)
    r_k(z,t) ~ pi_k N(z; t mu_k, a_k)                 (responsibilities)
    v_k(z,t) = mu_k + (t s_k - (1-t)) / a_k * (z - t mu_k)
    v(z,t)   = sum_k r_k v_k

Responsibilities are normalized in log space with max subtraction, so the
kernel never underflows to an all-zero weight vector.
"""

from __future__ import annotations

import numpy as np


def mixture_velocity(
    means: np.ndarray,
    variances: np.ndarray,
    log_weights: np.ndarray,
    z: np.ndarray,
    t: float,
) -> np.ndarray:
    """Marginal flow velocity for a batch of flattened latents.

    means, variances: (components, dims); log_weights: (components,);
    z: (batch, dims).  Returns (batch, dims).
    """
    one_t = 1.0 - t
    a = one_t * one_t + (t * t) * variances
    diff = z[:, None, :] - t * means[None, :, :]
    log_det = np.sum(np.log(a), axis=1)
    loglik = log_weights[None, :] - 0.5 * (np.sum(diff * diff / a[None, :, :], axis=2) + log_det[None, :])
    loglik -= loglik.max(axis=1, keepdims=True)
    resp = np.exp(loglik)
    resp /= resp.sum(axis=1, keepdims=True)
    coef = (t * variances - one_t) / a
    per_comp = means[None, :, :] + coef[None, :, :] * diff
    return np.einsum("bc,bcn->bn", resp, per_comp)
