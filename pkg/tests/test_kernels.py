"""Parity and numerics of the mixture-velocity kernel implementations."""

import numpy as np
import pytest

from counterflow import kernels
from counterflow._velocity_py import mixture_velocity as py_kernel


def random_problem(rng, components=3, dims=10, batch=7):
    means = rng.normal(size=(components, dims))
    variances = rng.uniform(0.05, 2.0, size=(components, dims))
    w = rng.uniform(0.1, 1.0, size=components)
    log_weights = np.log(w / w.sum())
    z = rng.normal(size=(batch, dims), scale=2.0)
    return means, variances, log_weights, z


def brute_force_velocity(means, variances, log_weights, z, t):
    """Direct per-sample loop over the posterior-velocity formulas."""
    out = np.empty_like(z)
    a = (1.0 - t) ** 2 + t * t * variances
    for b in range(z.shape[0]):
        logliks = []
        for k in range(means.shape[0]):
            diff = z[b] - t * means[k]
            q = float(np.sum(diff * diff / a[k]) + np.sum(np.log(a[k])))
            logliks.append(log_weights[k] - 0.5 * q)
        logliks = np.array(logliks)
        r = np.exp(logliks - logliks.max())
        r /= r.sum()
        v = np.zeros(z.shape[1])
        for k in range(means.shape[0]):
            diff = z[b] - t * means[k]
            e_x1 = means[k] + t * variances[k] / a[k] * diff
            e_x0 = (1.0 - t) / a[k] * diff
            v += r[k] * (e_x1 - e_x0)
        out[b] = v
    return out


@pytest.mark.parametrize("t", [0.0, 0.25, 0.5, 0.9, 1.0])
def test_python_kernel_matches_brute_force(t):
    rng = np.random.default_rng(1)
    means, variances, log_weights, z = random_problem(rng)
    got = py_kernel(means, variances, log_weights, z, t)
    want = brute_force_velocity(means, variances, log_weights, z, t)
    np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-12)


def test_implementations_agree():
    impls = kernels.available_implementations()
    rng = np.random.default_rng(2)
    means, variances, log_weights, z = random_problem(rng, components=5, dims=40, batch=16)
    results = {
        name: fn(means, variances, log_weights, z, 0.6) for name, fn in impls.items()
    }
    baseline = results["python"]
    for name, out in results.items():
        np.testing.assert_allclose(out, baseline, rtol=1e-10, atol=1e-13, err_msg=name)


def test_selected_kernel_reported():
    impls = kernels.available_implementations()
    assert kernels.KERNEL_IMPL in impls
    assert "python" in impls


def test_extreme_latents_do_not_underflow():
    # far-away z would underflow naive responsibility normalization
    rng = np.random.default_rng(3)
    means, variances, log_weights, _ = random_problem(rng)
    z = np.full((2, means.shape[1]), 1e3)
    for name, fn in kernels.available_implementations().items():
        v = fn(means, variances, log_weights, z, 0.5)
        assert np.isfinite(v).all(), name


def test_single_component_reduces_to_affine():
    mu = np.array([[1.0, -2.0, 0.5]])
    s = np.array([[0.25, 0.25, 0.25]])
    logw = np.array([0.0])
    z = np.array([[0.3, 0.3, 0.3]])
    t = 0.4
    a = (1 - t) ** 2 + t * t * s
    diff = z - t * mu
    want = mu + (t * s - (1 - t)) / a * diff
    got = kernels.mixture_velocity(mu, s, logw, z, t)
    np.testing.assert_allclose(got, want, rtol=1e-12)
