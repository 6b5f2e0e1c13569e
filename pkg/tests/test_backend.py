import numpy as np
import pytest

from counterflow.backend import (
    F32BoundaryBackend,
    FieldBackend,
    VelocityBatch,
    VelocityRequest,
)
from counterflow.core import ConditionId, ConditionPair, init_latent, null_text, null_video
from counterflow.errors import ConditionError, ParameterError, ShapeError
from counterflow.gmm import conditional_mixture


def pair(v=None, t=None):
    return ConditionPair(
        ConditionId("video", v),
        ConditionId("text", t),
    )


def test_zero_field_backend():
    backend = FieldBackend(lambda z, t, v, x: np.zeros_like(z))
    z = init_latent((3, 2), 0)
    batch = VelocityBatch([VelocityRequest(z, 0.5, pair())])
    (v,) = backend.evaluate(batch)
    assert np.array_equal(v, np.zeros((3, 2)))


def test_duplicate_pairs_identical_outputs(gmm_backend, scene):
    z = init_latent(scene.shape, 3)
    p = pair("vidA", "texA")
    batch = VelocityBatch([VelocityRequest(z, 0.4, p)] * 4)
    out = gmm_backend.evaluate(batch)
    assert len(out) == 4
    for v in out[1:]:
        assert np.array_equal(out[0], v)


def test_gmm_single_component_t0_velocity(scene, gmm_backend):
    # single congruent component N(mu, diag): at t=0 the velocity is mu - z
    p = pair("vidA", "texA")
    mix = conditional_mixture(scene, p)
    assert len(mix) == 1
    z = init_latent(scene.shape, 11)
    (v,) = gmm_backend.evaluate(VelocityBatch([VelocityRequest(z, 0.0, p)]))
    np.testing.assert_allclose(v, mix[0].mean.reshape(scene.shape) - z, rtol=0, atol=1e-12)


def test_batch_loop_equivalence(gmm_backend, scene):
    z = init_latent(scene.shape, 5)
    pairs = [pair(), pair("vidA", None), pair(None, "texB"), pair("vidB", "texC")]
    batch = VelocityBatch([VelocityRequest(z, 0.3, p) for p in pairs])
    together = gmm_backend.evaluate(batch)
    single = [
        gmm_backend.evaluate(VelocityBatch([VelocityRequest(z, 0.3, p)]))[0] for p in pairs
    ]
    for a, b in zip(together, single):
        assert np.array_equal(a, b)


def test_purity(gmm_backend, scene):
    z = init_latent(scene.shape, 9)
    batch = VelocityBatch([VelocityRequest(z, 0.7, pair("vidA", "texB"))])
    a = gmm_backend.evaluate(batch)[0]
    b = gmm_backend.evaluate(batch)[0]
    assert np.array_equal(a, b)


def test_unknown_condition_error(gmm_backend, scene):
    z = init_latent(scene.shape, 0)
    batch = VelocityBatch([VelocityRequest(z, 0.0, pair("nope", None))])
    with pytest.raises(ConditionError):
        gmm_backend.evaluate(batch)


def test_batch_invariants():
    z = init_latent((3, 2), 0)
    with pytest.raises(ParameterError):
        VelocityBatch([])
    with pytest.raises(ShapeError):
        VelocityBatch(
            [
                VelocityRequest(z, 0.5, pair()),
                VelocityRequest(init_latent((4, 2), 0), 0.5, pair()),
            ]
        )
    with pytest.raises(ParameterError):
        VelocityBatch(
            [VelocityRequest(z, 0.5, pair()), VelocityRequest(z, 0.6, pair())]
        )


def test_field_backend_shape_check():
    backend = FieldBackend(lambda z, t, v, x: np.zeros((1, 2)))
    z = init_latent((3, 2), 0)
    with pytest.raises(ShapeError):
        backend.evaluate(VelocityBatch([VelocityRequest(z, 0.1, pair())]))


def test_f32_boundary_backend(gmm_backend, scene):
    rounded = F32BoundaryBackend(gmm_backend)
    z = init_latent(scene.shape, 21)
    batch = VelocityBatch([VelocityRequest(z, 0.5, pair("vidB", "texA"))])
    v32 = rounded.evaluate(batch)[0]
    z_rt = z.astype(np.float32).astype(np.float64)
    expected = gmm_backend.evaluate(
        VelocityBatch([VelocityRequest(z_rt, 0.5, pair("vidB", "texA"))])
    )[0].astype(np.float32).astype(np.float64)
    assert np.array_equal(v32, expected)
