import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from counterflow.backend import FieldBackend
from counterflow.core import (
    ConditionId,
    GuidanceWeights,
    init_latent,
    null_text,
    null_video,
)
from counterflow.errors import ParameterError, ShapeError
from counterflow.guidance import (
    DECOMPOSED,
    NEGATIVE_TEXT,
    UNGUIDED,
    VANILLA_CFG,
    GuidanceSpec,
    PhaseSchedule,
    compose_decomposed,
    compose_negative,
    compose_vanilla,
    guided_velocity,
    select_spec,
)
from tests.conftest import CountingBackend

VID = ConditionId.video("vidA")
TAR = ConditionId.text("texB")
SRC = ConditionId.text("texA")


def spec(form, w=None, video=VID, target=TAR, source=SRC):
    return GuidanceSpec(form, w or GuidanceWeights(), video, target, source)


class TestComposeVanilla:
    def test_weight_one_is_joint(self):
        j, n = np.array([[2.0, 3.0]]), np.array([[1.0, -1.0]])
        assert np.array_equal(compose_vanilla(j, n, 1.0), j)

    def test_weight_zero_is_null(self):
        j, n = np.array([[2.0, 3.0]]), np.array([[1.0, -1.0]])
        assert np.array_equal(compose_vanilla(j, n, 0.0), n)

    def test_arithmetic(self):
        assert compose_vanilla(np.array([2.0]), np.array([1.0]), 3.0) == np.array([4.0])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            compose_vanilla(np.zeros((2, 2)), np.zeros((3, 2)), 1.0)


class TestComposeDecomposed:
    def test_vanishing_corrections(self):
        n = np.array([[0.5, -0.5]])
        tar = np.array([[2.0, 2.0]])
        out = compose_decomposed(n, np.array([[9.0, 9.0]]), tar, tar, 0.0, 5.0)
        assert np.array_equal(out, n)

    def test_video_only(self):
        n, v = np.array([[0.0, 0.0]]), np.array([[1.0, 2.0]])
        t = np.array([[3.0, 3.0]])
        assert np.array_equal(compose_decomposed(n, v, t, t, 1.0, 0.0), v)

    def test_reference_weights_arithmetic(self):
        out = compose_decomposed(
            np.array([0.0]), np.array([1.0]), np.array([2.0]), np.array([1.0]), 3.0, 5.0
        )
        assert out == np.array([8.0])


class TestComposeNegative:
    def test_equal_texts_is_null(self):
        n, x = np.array([[1.0, 1.0]]), np.array([[4.0, 4.0]])
        assert np.array_equal(compose_negative(n, x, x, 4.5), n)

    def test_weight_zero(self):
        n = np.array([[1.0, 1.0]])
        assert np.array_equal(
            compose_negative(n, np.array([[2.0, 0.0]]), np.array([[0.0, 2.0]]), 0.0), n
        )

    def test_reference_weight_arithmetic(self):
        out = compose_negative(np.array([1.0]), np.array([3.0]), np.array([2.0]), 4.5)
        assert out == np.array([5.5])


class TestLinearity:
    @given(st.floats(-4, 4, allow_nan=False))
    def test_scaling_all_inputs_scales_output(self, alpha):
        rng = np.random.default_rng(0)
        vs = [rng.normal(size=(3, 2)) for _ in range(4)]
        base = compose_decomposed(*vs, 3.0, 5.0)
        scaled = compose_decomposed(*[alpha * v for v in vs], 3.0, 5.0)
        np.testing.assert_allclose(scaled, alpha * base, rtol=1e-9, atol=1e-9)


class TestGuidedVelocity:
    def test_unguided_single_call(self, gmm_backend, scene):
        z = init_latent(scene.shape, 1)
        counting = CountingBackend(gmm_backend)
        v = guided_velocity(counting, z, 0.3, spec(UNGUIDED))
        assert counting.requests == 1
        direct = gmm_backend.evaluate.__self__  # same backend object
        assert v.shape == scene.shape

    def test_decomposed_issues_four_distinct_pairs(self, gmm_backend, scene):
        z = init_latent(scene.shape, 1)
        counting = CountingBackend(gmm_backend)
        guided_velocity(counting, z, 0.3, spec(DECOMPOSED))
        assert counting.batches == 1
        assert counting.requests == 4
        assert len(set(counting.seen_pairs[0])) == 4

    def test_negative_issues_three_distinct_pairs(self, gmm_backend, scene):
        z = init_latent(scene.shape, 1)
        counting = CountingBackend(gmm_backend)
        guided_velocity(counting, z, 0.3, spec(NEGATIVE_TEXT))
        assert counting.requests == 3

    def test_null_source_dedupes_to_null(self, gmm_backend, scene):
        z = init_latent(scene.shape, 1)
        counting = CountingBackend(gmm_backend)
        guided_velocity(counting, z, 0.3, spec(DECOMPOSED, source=null_text()))
        assert counting.requests == 3  # (0,0) reused as the source conditional

    def test_decomposed_matches_manual_composition(self, gmm_backend, scene):
        # oracle: four explicit evaluations + the guidance arithmetic
        from counterflow.backend import VelocityBatch, VelocityRequest
        from counterflow.core import ConditionPair

        z = init_latent(scene.shape, 13)
        t = 0.44
        w = GuidanceWeights()

        def ev(video, text):
            p = ConditionPair(ConditionId("video", video), ConditionId("text", text))
            return gmm_backend.evaluate(VelocityBatch([VelocityRequest(z, t, p)]))[0]

        v_null = ev(None, None)
        v_vid = ev("vidA", None)
        v_tar = ev(None, "texB")
        v_src = ev(None, "texA")
        oracle = (v_null + w.w_vid * (v_vid - v_null)) + w.w_txt * (v_tar - v_src)
        got = guided_velocity(gmm_backend, z, t, spec(DECOMPOSED))
        assert np.array_equal(got, oracle)  # bit-exact: same evaluation order

    def test_all_conditionals_equal_collapses(self):
        const = np.full((2, 2), 1.5)
        backend = FieldBackend(lambda z, t, v, x: const)
        z = init_latent((2, 2), 0)
        for form in (VANILLA_CFG, DECOMPOSED, NEGATIVE_TEXT):
            out = guided_velocity(backend, z, 0.5, spec(form))
            np.testing.assert_allclose(out, const, rtol=0, atol=1e-12)

    def test_weight_zero_collapse_to_null(self, gmm_backend, scene):
        z = init_latent(scene.shape, 2)
        zero = GuidanceWeights(0.0, 0.0, 0.0, 0.0)
        from counterflow.backend import VelocityBatch, VelocityRequest
        from counterflow.core import ConditionPair

        v_null = gmm_backend.evaluate(
            VelocityBatch([VelocityRequest(z, 0.2, ConditionPair(null_video(), null_text()))])
        )[0]
        for form in (VANILLA_CFG, DECOMPOSED, NEGATIVE_TEXT):
            out = guided_velocity(gmm_backend, z, 0.2, spec(form, w=zero))
            assert np.array_equal(out, v_null)

    def test_vanilla_decomposed_agreement_on_factorizing_backend(self):
        # backend where v(c_vid, c_tar) - v(0,0) splits exactly into the
        # video and text corrections
        base = np.array([[0.1, -0.2], [0.3, 0.0]])
        g = np.array([[1.0, 0.5], [-0.5, 2.0]])
        h = np.array([[-1.0, 0.25], [0.75, 1.0]])

        def field(z, t, video, text):
            out = base.copy()
            if video is not None:
                out = out + g
            if text is not None:
                out = out + h
            return out

        backend = FieldBackend(field)
        z = init_latent((2, 2), 0)
        w = 2.5
        weights = GuidanceWeights(w_vid=w, w_txt=w, w_vanilla=w)
        dec = guided_velocity(
            backend, z, 0.5, spec(DECOMPOSED, w=weights, source=null_text())
        )
        van = guided_velocity(backend, z, 0.5, spec(VANILLA_CFG, w=weights))
        np.testing.assert_allclose(dec, van, rtol=1e-12, atol=1e-12)


class TestSpecValidation:
    def test_negative_text_forces_null_video(self):
        s = spec(NEGATIVE_TEXT, video=VID)
        assert s.video.is_null

    def test_negative_text_requires_target(self):
        with pytest.raises(ParameterError):
            spec(NEGATIVE_TEXT, target=null_text())

    def test_wrong_slot_kinds(self):
        with pytest.raises(ParameterError):
            GuidanceSpec(DECOMPOSED, GuidanceWeights(), TAR, TAR, SRC)

    def test_unknown_form(self):
        with pytest.raises(ParameterError):
            GuidanceSpec("mystery", GuidanceWeights(), VID, TAR, SRC)


class TestSelectSpec:
    def test_boundary_convention(self):
        p1 = spec(DECOMPOSED)
        p2 = spec(NEGATIVE_TEXT)
        sched = PhaseSchedule(17, p1, p2)
        assert select_spec(sched, 16, 25) is p1
        assert select_spec(sched, 17, 25) is p2

    def test_zero_transition_always_phase2(self):
        sched = PhaseSchedule(0, spec(DECOMPOSED), spec(NEGATIVE_TEXT))
        for i in range(25):
            assert select_spec(sched, i, 25).form == NEGATIVE_TEXT

    def test_out_of_range(self):
        sched = PhaseSchedule(2, spec(DECOMPOSED), spec(NEGATIVE_TEXT))
        with pytest.raises(ParameterError):
            select_spec(sched, -1, 25)
        with pytest.raises(ParameterError):
            select_spec(sched, 25, 25)

    def test_schedule_validation(self):
        sched = PhaseSchedule(30, spec(DECOMPOSED), spec(NEGATIVE_TEXT))
        with pytest.raises(ParameterError):
            sched.validate_for(25)
        with pytest.raises(ParameterError):
            PhaseSchedule(-1, spec(DECOMPOSED), spec(NEGATIVE_TEXT))
