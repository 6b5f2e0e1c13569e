import numpy as np
import pytest

from counterflow.backend import VelocityBackend, VelocityBatch
from counterflow.gmm import GMMBackend, SceneRegistry, default_scene


class CountingBackend(VelocityBackend):
    """Wrapper counting requests and batches, for call-minimality tests."""

    def __init__(self, inner):
        self.inner = inner
        self.thread_safe = inner.thread_safe
        self.batches = 0
        self.requests = 0
        self.seen_pairs = []

    def evaluate(self, batch: VelocityBatch):
        self.batches += 1
        self.requests += len(batch)
        self.seen_pairs.append([r.cond for r in batch])
        return self.inner.evaluate(batch)


@pytest.fixture(scope="session")
def scene():
    return default_scene()


@pytest.fixture(scope="session")
def gmm_backend(scene):
    return GMMBackend(scene)


@pytest.fixture()
def tiny_scene():
    """Two videos, two texts, four frames: fast and easy to reason about."""
    return SceneRegistry(
        frames=4,
        identity_dims=2,
        videos={
            "va": np.array([1.0, 1.0, 0.0, 0.0]),
            "vb": np.array([0.0, 0.0, 1.0, 1.0]),
        },
        texts={"ta": np.array([2.0, 0.0]), "tb": np.array([0.0, 2.0])},
        congruence={"va": "ta", "vb": "tb"},
        noise_std_energy=0.2,
        noise_std_identity=0.5,
        dominance=0.9,
    )
