"""Shared domain types: latents, conditions, timestep grids, guidance weights.

Conventions fixed package-wide:

* A latent is a 2-D float64 array of shape (frames, dims), frame-major.
  t = 0 is pure noise, t = 1 is data (rectified-flow direction).
* Randomness comes from the Philox4x64-10 counter-based generator keyed
  directly by the 64-bit seed; standard normals are produced by pushing
  53-bit uniforms through the inverse normal CDF.  Both choices are made
  once, here, so seeded runs are bit-identical across platforms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .errors import ParameterError, ShapeError

VIDEO = "video"
TEXT = "text"

MAX_SEED = 2**64 - 1


@dataclass(frozen=True)
class ConditionId:
    """One conditioning slot: a video or text id, or the null condition."""

    kind: str
    id: str | None

    def __post_init__(self):
        if self.kind not in (VIDEO, TEXT):
            raise ParameterError(f"unknown condition kind {self.kind!r}")
        if self.id == "":
            raise ParameterError("condition id must be None or a non-empty string")

    @property
    def is_null(self) -> bool:
        return self.id is None

    @classmethod
    def video(cls, id: str) -> "ConditionId":
        return cls(VIDEO, id)

    @classmethod
    def text(cls, id: str) -> "ConditionId":
        return cls(TEXT, id)


def null_video() -> ConditionId:
    return ConditionId(VIDEO, None)


def null_text() -> ConditionId:
    return ConditionId(TEXT, None)


@dataclass(frozen=True)
class ConditionPair:
    """The (video, text) tuple a velocity backend is conditioned on."""

    video: ConditionId
    text: ConditionId

    def __post_init__(self):
        if self.video.kind != VIDEO:
            raise ParameterError("video slot holds a non-video condition")
        if self.text.kind != TEXT:
            raise ParameterError("text slot holds a non-text condition")


@dataclass(frozen=True)
class TimestepGrid:
    """Ordered sampling times t_0 < ... < t_N within [0, 1]."""

    steps: tuple[float, ...]

    def __post_init__(self):
        if len(self.steps) < 2:
            raise ParameterError("grid needs at least two timesteps")
        for t in self.steps:
            if not (0.0 <= t <= 1.0) or not math.isfinite(t):
                raise ParameterError(f"timestep {t} outside [0, 1]")
        if any(b <= a for a, b in zip(self.steps, self.steps[1:])):
            raise ParameterError("timesteps must be strictly increasing")

    @property
    def n_steps(self) -> int:
        return len(self.steps) - 1


def uniform_grid(n: int) -> TimestepGrid:
    """N+1 evenly spaced timesteps over [0, 1]: t_i = i / n."""
    if n < 1:
        raise ParameterError(f"need n >= 1, got {n}")
    return TimestepGrid(tuple(i / n for i in range(n + 1)))


@dataclass(frozen=True)
class GuidanceWeights:
    """Guidance strengths for the composed velocity forms.

    w_vid and w_txt weight the two correction terms of decomposed guidance,
    w_cfg weights the negative-prompt text contrast, and w_vanilla is the
    single weight of plain classifier-free guidance.
    """

    w_vid: float = 3.0
    w_txt: float = 5.0
    w_cfg: float = 4.5
    w_vanilla: float = 4.5

    def __post_init__(self):
        for name in ("w_vid", "w_txt", "w_cfg", "w_vanilla"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ParameterError(f"{name} must be finite and >= 0, got {v}")


def check_seed(seed: int) -> int:
    if not isinstance(seed, (int, np.integer)) or not (0 <= seed <= MAX_SEED):
        raise ParameterError(f"seed must be an integer in [0, 2^64), got {seed!r}")
    return int(seed)


def init_latent(shape: tuple[int, int], seed: int) -> np.ndarray:
    """Seeded standard-normal initial latent of shape (frames, dims).

    Entries are i.i.d. N(0, 1): Philox4x64-10 keyed by `seed` supplies raw
    64-bit words, the top 53 bits become uniforms on (0, 1), and the inverse
    normal CDF maps them to normals.  Identical (shape, seed) gives a
    bit-identical array.
    """
    f, d = shape
    if f < 1 or d < 2:
        raise ShapeError(f"latent shape needs frames >= 1 and dims >= 2, got {shape}")
    check_seed(seed)
    raw = np.random.Philox(key=seed).random_raw(f * d)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u).reshape(f, d)


def check_latent(z: np.ndarray, name: str = "latent") -> np.ndarray:
    """Validate the (frames, dims) float64 latent convention."""
    z = np.asarray(z)
    if z.ndim != 2 or z.shape[0] < 1 or z.shape[1] < 2:
        raise ShapeError(f"{name} must be 2-D (frames >= 1, dims >= 2), got shape {z.shape}")
    if not np.isfinite(z).all():
        raise ShapeError(f"{name} contains non-finite entries")
    return np.ascontiguousarray(z, dtype=np.float64)


def check_same_shape(*arrays: np.ndarray) -> None:
    shapes = {a.shape for a in arrays}
    if len(shapes) > 1:
        raise ShapeError(f"operands disagree on shape: {sorted(shapes)}")
