"""Velocity-backend interface: batched, order-preserving, pure.

A backend answers "what is the velocity at (z, t) under condition pair c"
for a batch of requests sharing one latent shape and one t.  Everything
downstream (guidance, sampler) only talks to this interface, so the
analytic mixture world and a remote model are interchangeable.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass

import numpy as np

from .core import ConditionPair, check_latent
from .errors import ParameterError, ShapeError


@dataclass(frozen=True)
class VelocityRequest:
    latent: np.ndarray
    t: float
    cond: ConditionPair

    def __post_init__(self):
        check_latent(self.latent)
        if not (0.0 <= self.t <= 1.0):
            raise ParameterError(f"t={self.t} outside [0, 1]")


class VelocityBatch:
    """Non-empty list of requests sharing latent shape and t."""

    def __init__(self, requests: list[VelocityRequest]):
        if not requests:
            raise ParameterError("velocity batch must be non-empty")
        shape = requests[0].latent.shape
        t = requests[0].t
        for r in requests[1:]:
            if r.latent.shape != shape:
                raise ShapeError("all batch latents must share one shape")
            if r.t != t:
                raise ParameterError("all batch requests must share one t")
        self.requests = list(requests)
        self.shape = shape
        self.t = t

    def __len__(self) -> int:
        return len(self.requests)

    def __iter__(self):
        return iter(self.requests)


class VelocityBackend(abc.ABC):
    """Abstract velocity field v(z, t, c).

    evaluate must be deterministic and order-preserving.  `thread_safe`
    declares whether concurrent evaluate calls are allowed; callers must
    serialize access to backends that set it False.
    """

    thread_safe: bool = True

    @abc.abstractmethod
    def evaluate(self, batch: VelocityBatch) -> list[np.ndarray]:
        """One velocity array per request, same shape as its latent."""


class FieldBackend(VelocityBackend):
    """Wrap a plain function f(z, t, video_id, text_id) -> velocity.

    Handy for synthetic fields in tests (zero field, -z, factorizing
    conditionals).  Ids arrive as strings or None for the null condition.
    """

    def __init__(self, fn, thread_safe: bool = True):
        self._fn = fn
        self.thread_safe = thread_safe

    def evaluate(self, batch: VelocityBatch) -> list[np.ndarray]:
        out = []
        for r in batch:
            v = np.asarray(self._fn(r.latent, r.t, r.cond.video.id, r.cond.text.id), dtype=np.float64)
            if v.shape != r.latent.shape:
                raise ShapeError(f"field returned shape {v.shape}, expected {r.latent.shape}")
            out.append(v)
        return out


class F32BoundaryBackend(VelocityBackend):
    """Apply the wire protocol's float32 boundary to an in-process backend.

    Latents are cast f64 -> f32 -> f64 before evaluation and velocities on
    the way back, reproducing exactly what a remote round trip does to the
    numbers.  Conformance tests compare remote trajectories against this.
    """

    def __init__(self, inner: VelocityBackend):
        self.inner = inner
        self.thread_safe = inner.thread_safe

    def evaluate(self, batch: VelocityBatch) -> list[np.ndarray]:
        rounded = VelocityBatch(
            [
                VelocityRequest(r.latent.astype(np.float32).astype(np.float64), r.t, r.cond)
                for r in batch
            ]
        )
        return [v.astype(np.float32).astype(np.float64) for v in self.inner.evaluate(rounded)]
