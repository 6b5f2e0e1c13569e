"""Guided velocity composition and the two-phase schedule.

Four composition forms are supported:

* unguided          v(c_vid, c_txt)
* vanilla_cfg       v(0,0) + w * (v(c_vid, c_tar) - v(0,0))
* decomposed        v(0,0) + w_vid * (v(c_vid, 0) - v(0,0))
                           + w_txt * (v(0, c_tar) - v(0, c_src))
* negative_text     v(0,0) + w_cfg * (v(0, c_tar) - v(0, c_src))

where 0 denotes the null condition of the matching kind.  When the source
text of a decomposed or negative_text spec is null, its contrast term
degrades to (v(0, c_tar) - v(0,0)) - the "no negative prompting" ablation.

Terms are always summed left to right in the order written above, so a
given set of input velocities composes bit-identically on every run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backend import VelocityBackend, VelocityBatch, VelocityRequest
from .core import (
    ConditionId,
    ConditionPair,
    GuidanceWeights,
    check_same_shape,
    null_text,
    null_video,
)
from .errors import ParameterError

UNGUIDED = "unguided"
VANILLA_CFG = "vanilla_cfg"
DECOMPOSED = "decomposed"
NEGATIVE_TEXT = "negative_text"

FORMS = (UNGUIDED, VANILLA_CFG, DECOMPOSED, NEGATIVE_TEXT)


@dataclass(frozen=True)
class GuidanceSpec:
    """One composed velocity evaluation: form, weights, condition slots.

    negative_text forces the video slot to null; the other forms take the
    slots as given (nulled slots express ablations, not errors).
    """

    form: str
    weights: GuidanceWeights
    video: ConditionId
    target_text: ConditionId
    source_text: ConditionId

    def __post_init__(self):
        if self.form not in FORMS:
            raise ParameterError(f"unknown guidance form {self.form!r}")
        for slot, kind in (("video", "video"), ("target_text", "text"), ("source_text", "text")):
            if getattr(self, slot).kind != kind:
                raise ParameterError(f"{slot} slot holds a {getattr(self, slot).kind} condition")
        if self.form == NEGATIVE_TEXT:
            if self.target_text.is_null:
                raise ParameterError("negative_text requires a non-null target text")
            object.__setattr__(self, "video", null_video())


@dataclass(frozen=True)
class PhaseSchedule:
    """Phase-1 spec for steps [0, n_trans), phase-2 spec for [n_trans, N]."""

    n_trans: int
    phase1: GuidanceSpec
    phase2: GuidanceSpec

    def __post_init__(self):
        if self.n_trans < 0:
            raise ParameterError(f"n_trans must be >= 0, got {self.n_trans}")

    def validate_for(self, n_steps: int) -> None:
        if self.n_trans > n_steps:
            raise ParameterError(f"n_trans={self.n_trans} exceeds grid step count {n_steps}")


def select_spec(schedule: PhaseSchedule, step_index: int, n_steps: int | None = None) -> GuidanceSpec:
    """Spec in effect at a step.  The boundary step n_trans is phase 2."""
    if step_index < 0 or (n_steps is not None and step_index >= n_steps):
        raise ParameterError(f"step index {step_index} out of range")
    return schedule.phase1 if step_index < schedule.n_trans else schedule.phase2


def compose_vanilla(v_joint: np.ndarray, v_null: np.ndarray, w: float) -> np.ndarray:
    check_same_shape(v_joint, v_null)
    return v_null + w * (v_joint - v_null)


def compose_decomposed(
    v_null: np.ndarray,
    v_vid: np.ndarray,
    v_tar: np.ndarray,
    v_src: np.ndarray,
    w_vid: float,
    w_txt: float,
) -> np.ndarray:
    check_same_shape(v_null, v_vid, v_tar, v_src)
    return (v_null + w_vid * (v_vid - v_null)) + w_txt * (v_tar - v_src)


def compose_negative(
    v_null: np.ndarray, v_tar: np.ndarray, v_src: np.ndarray, w_cfg: float
) -> np.ndarray:
    check_same_shape(v_null, v_tar, v_src)
    return v_null + w_cfg * (v_tar - v_src)


def _evaluate_pairs(
    backend: VelocityBackend, latent: np.ndarray, t: float, pairs: list[ConditionPair]
) -> dict[ConditionPair, np.ndarray]:
    """One backend call for the distinct pairs, fanned back out."""
    distinct = list(dict.fromkeys(pairs))
    batch = VelocityBatch([VelocityRequest(latent, t, p) for p in distinct])
    velocities = backend.evaluate(batch)
    return dict(zip(distinct, velocities))


def guided_velocity(
    backend: VelocityBackend, latent: np.ndarray, t: float, spec: GuidanceSpec
) -> np.ndarray:
    """Evaluate the minimal set of conditionals for `spec` and compose them."""
    w = spec.weights
    nv, nt = null_video(), null_text()
    if spec.form == UNGUIDED:
        pair = ConditionPair(spec.video, spec.target_text)
        return _evaluate_pairs(backend, latent, t, [pair])[pair]

    if spec.form == VANILLA_CFG:
        p_null = ConditionPair(nv, nt)
        p_joint = ConditionPair(spec.video, spec.target_text)
        got = _evaluate_pairs(backend, latent, t, [p_null, p_joint])
        return compose_vanilla(got[p_joint], got[p_null], w.w_vanilla)

    p_null = ConditionPair(nv, nt)
    p_tar = ConditionPair(nv, spec.target_text)
    p_src = ConditionPair(nv, spec.source_text)  # == p_null when source is null

    if spec.form == NEGATIVE_TEXT:
        got = _evaluate_pairs(backend, latent, t, [p_null, p_tar, p_src])
        return compose_negative(got[p_null], got[p_tar], got[p_src], w.w_cfg)

    # decomposed
    p_vid = ConditionPair(spec.video, nt)
    got = _evaluate_pairs(backend, latent, t, [p_null, p_vid, p_tar, p_src])
    return compose_decomposed(got[p_null], got[p_vid], got[p_tar], got[p_src], w.w_vid, w.w_txt)
