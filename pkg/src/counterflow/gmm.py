"""Analytic desk-scale world: Gaussian-mixture scenes with exact velocities.

A scene couples video conditions (per-frame activity envelopes) with text
conditions (identity vectors).  Latent dimension 0 of each frame carries
energy, dimensions 1..K carry identity scaled by the envelope, so identity
exists only where events occur.  Every conditional the guidance engine can
request maps to an explicit diagonal Gaussian mixture, whose flow velocity
is available in closed form: this is the ground-truth backend the whole
engine is verified against.

Conditional semantics:

* (v, x) congruent          single component for that scene
* (v, null)                 uniform mixture over all identities under v's envelope
* (null, x)                 uniform mixture over all envelopes carrying identity x
* (null, null)              uniform mixture over the congruent scenes
* (v, x) conflicting        dominance-weighted blend: weight lambda on the
                            congruent scene of v, 1 - lambda on (v, x);
                            models a backbone trained only on congruent data
                            whose joint conditional sides with the video
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

try:
    import tomllib
except ModuleNotFoundError:  # python 3.10
    import tomli as tomllib

from .backend import VelocityBackend, VelocityBatch
from .core import ConditionPair, check_latent, check_seed
from .errors import ConditionError, ConfigError, ParameterError
from .kernels import mixture_velocity

DEFAULT_ACTIVITY_LEVELS = (0.0, 0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class MixtureComponent:
    """Diagonal Gaussian over flattened (frames * dims) latents."""

    weight: float
    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        if not (self.weight > 0):
            raise ParameterError(f"component weight must be > 0, got {self.weight}")
        if not np.isfinite(self.mean).all() or not (self.var > 0).all():
            raise ParameterError("component mean must be finite and variances > 0")


@dataclass(frozen=True)
class SceneRegistry:
    """Immutable toy world: envelopes, identities, congruence, noise model.

    Noise is per-dimension: dimension 0 (energy) and dimensions 1..K
    (identity) carry separate standard deviations.  The identity one sets
    how far a text contrast can still move identity content late in the
    trajectory, the energy one how crisply envelopes separate.
    """

    frames: int
    identity_dims: int
    videos: dict
    texts: dict
    congruence: dict
    noise_std_energy: float
    noise_std_identity: float
    dominance: float
    activity_threshold: float = 0.2
    gate_floor: float = 0.1
    activity_levels: tuple = DEFAULT_ACTIVITY_LEVELS

    def __post_init__(self):
        if self.frames < 1 or self.identity_dims < 1:
            raise ConfigError("frames and identity_dims must be >= 1")
        if not (self.noise_std_energy > 0) or not (self.noise_std_identity > 0):
            raise ConfigError("noise stds must be > 0")
        if not (0.0 <= self.dominance <= 1.0):
            raise ConfigError(f"dominance must lie in [0, 1], got {self.dominance}")
        for vid, env in self.videos.items():
            env = np.asarray(env, dtype=np.float64)
            if env.shape != (self.frames,) or not np.isfinite(env).all():
                raise ConfigError(f"envelope for {vid!r} must be {self.frames} finite values")
            if env.min() < 0.0 or env.max() > 1.0:
                raise ConfigError(f"envelope for {vid!r} must lie in [0, 1]")
            self.videos[vid] = env
        for tex, mu in self.texts.items():
            mu = np.asarray(mu, dtype=np.float64)
            if mu.shape != (self.identity_dims,) or not np.isfinite(mu).all():
                raise ConfigError(f"identity mean for {tex!r} must be {self.identity_dims} finite values")
            self.texts[tex] = mu
        for vid, tex in self.congruence.items():
            if vid not in self.videos:
                raise ConfigError(f"congruence references unknown video {vid!r}")
            if tex not in self.texts:
                raise ConfigError(f"congruence references unknown text {tex!r}")
        for vid in self.videos:
            if vid not in self.congruence:
                raise ConfigError(f"video {vid!r} has no congruent text")

    @property
    def dims(self) -> int:
        return 1 + self.identity_dims

    @property
    def shape(self) -> tuple[int, int]:
        return (self.frames, self.dims)

    def video_ids(self) -> list:
        return sorted(self.videos)

    def text_ids(self) -> list:
        return sorted(self.texts)


def scene_mean(reg: SceneRegistry, video_id: str, text_id: str) -> np.ndarray:
    """Flattened mean of the (video, text) scene: energy e, identity e * mu."""
    env = reg.videos[video_id]
    mu = reg.texts[text_id]
    mean = np.zeros((reg.frames, reg.dims))
    mean[:, 0] = env
    mean[:, 1:] = env[:, None] * mu[None, :]
    return mean.reshape(-1)


def _component(reg: SceneRegistry, video_id: str, text_id: str, weight: float) -> MixtureComponent:
    var = np.empty((reg.frames, reg.dims))
    var[:, 0] = reg.noise_std_energy**2
    var[:, 1:] = reg.noise_std_identity**2
    return MixtureComponent(weight, scene_mean(reg, video_id, text_id), var.reshape(-1))


def conditional_mixture(reg: SceneRegistry, cond: ConditionPair) -> list[MixtureComponent]:
    """Gaussian mixture realized by a (video, text) condition pair."""
    vid = cond.video.id
    tex = cond.text.id
    if vid is not None and vid not in reg.videos:
        raise ConditionError(f"unknown video id {vid!r}")
    if tex is not None and tex not in reg.texts:
        raise ConditionError(f"unknown text id {tex!r}")

    if vid is None and tex is None:
        vids = reg.video_ids()
        return [_component(reg, v, reg.congruence[v], 1.0 / len(vids)) for v in vids]
    if vid is None:
        vids = reg.video_ids()
        return [_component(reg, v, tex, 1.0 / len(vids)) for v in vids]
    if tex is None:
        texs = reg.text_ids()
        return [_component(reg, vid, x, 1.0 / len(texs)) for x in texs]

    congruent = reg.congruence[vid]
    if tex == congruent:
        return [_component(reg, vid, tex, 1.0)]
    lam = reg.dominance
    comps = []
    if lam > 0.0:
        comps.append(_component(reg, vid, congruent, lam))
    if lam < 1.0:
        comps.append(_component(reg, vid, tex, 1.0 - lam))
    return comps


def pack_mixture(mixture: list[MixtureComponent]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack a mixture into (means, variances, log_weights) kernel inputs."""
    if not mixture:
        raise ParameterError("mixture must be non-empty")
    means = np.stack([c.mean for c in mixture])
    variances = np.stack([c.var for c in mixture])
    log_weights = np.log(np.array([c.weight for c in mixture]))
    return means, variances, log_weights


def marginal_velocity(mixture: list[MixtureComponent], z: np.ndarray, t: float) -> np.ndarray:
    """Exact flow velocity of the mixture at one latent (see kernel docs)."""
    if not (0.0 <= t <= 1.0):
        raise ParameterError(f"t={t} outside [0, 1]")
    z = check_latent(z)
    means, variances, log_weights = pack_mixture(mixture)
    flat = mixture_velocity(means, variances, log_weights, z.reshape(1, -1), t)
    return flat.reshape(z.shape)


def marginal_velocity_batch(mixture: list[MixtureComponent], zs: np.ndarray, t: float) -> np.ndarray:
    """Vectorized marginal_velocity over a (batch, frames, dims) stack."""
    if not (0.0 <= t <= 1.0):
        raise ParameterError(f"t={t} outside [0, 1]")
    zs = np.asarray(zs, dtype=np.float64)
    means, variances, log_weights = pack_mixture(mixture)
    flat = mixture_velocity(means, variances, log_weights, zs.reshape(zs.shape[0], -1), t)
    return flat.reshape(zs.shape)


class GMMBackend(VelocityBackend):
    """Velocity backend answering every conditional from the analytic scene."""

    thread_safe = True

    def __init__(self, registry: SceneRegistry):
        self.registry = registry
        self._packed: dict = {}
        # warm the cache so concurrent first calls cannot race on it
        for v in [None] + self.registry.video_ids():
            for x in [None] + self.registry.text_ids():
                self._pack(v, x)

    def _pack(self, vid, tex):
        key = (vid, tex)
        if key not in self._packed:
            from .core import ConditionId

            pair = ConditionPair(ConditionId("video", vid), ConditionId("text", tex))
            self._packed[key] = pack_mixture(conditional_mixture(self.registry, pair))
        return self._packed[key]

    def evaluate(self, batch: VelocityBatch) -> list[np.ndarray]:
        out = []
        for r in batch:
            means, variances, log_weights = self._pack(r.cond.video.id, r.cond.text.id)
            flat = mixture_velocity(means, variances, log_weights, r.latent.reshape(1, -1), r.t)
            out.append(flat.reshape(r.latent.shape))
        return out


def sample_data(mixture: list[MixtureComponent], n: int, seed: int) -> np.ndarray:
    """n i.i.d. draws from the mixture, shape (n, frames, dims) ordering
    preserved as flattened means; deterministic under the seed."""
    if n < 1:
        raise ParameterError(f"need n >= 1, got {n}")
    check_seed(seed)
    means, variances, log_weights = pack_mixture(mixture)
    weights = np.exp(log_weights)
    weights = weights / weights.sum()
    rng = np.random.Generator(np.random.Philox(key=seed))
    comps = rng.choice(len(mixture), size=n, p=weights)
    noise = rng.standard_normal((n, means.shape[1]))
    return means[comps] + np.sqrt(variances[comps]) * noise


def sample_components(mixture: list[MixtureComponent], n: int, seed: int) -> np.ndarray:
    """Component indices drawn exactly as sample_data draws them."""
    if n < 1:
        raise ParameterError(f"need n >= 1, got {n}")
    check_seed(seed)
    _, _, log_weights = pack_mixture(mixture)
    weights = np.exp(log_weights)
    weights = weights / weights.sum()
    rng = np.random.Generator(np.random.Philox(key=seed))
    return rng.choice(len(mixture), size=n, p=weights)


def classify_identity(reg: SceneRegistry, z: np.ndarray, frame: int) -> dict:
    """Posterior over text identities for one frame's identity dims.

    Likelihood per identity x marginalizes the unknown activity level over
    reg.activity_levels: p(y | x) = mean_e N(y; e * mu_x, sigma^2 I).
    Frames whose |energy| falls below the activity threshold are gated to
    the uniform prior scaled by gate_floor (so every gated score is at most
    gate_floor); active frames return a proper posterior summing to 1.
    """
    z = check_latent(z)
    if z.shape != reg.shape:
        raise ParameterError(f"latent shape {z.shape} does not match scene shape {reg.shape}")
    if not (0 <= frame < reg.frames):
        raise ParameterError(f"frame {frame} out of range [0, {reg.frames})")

    texts = reg.text_ids()
    if abs(z[frame, 0]) < reg.activity_threshold:
        return {x: reg.gate_floor / len(texts) for x in texts}

    y = z[frame, 1:]
    inv_two_var = 1.0 / (2.0 * reg.noise_std_identity**2)
    levels = np.asarray(reg.activity_levels)
    logls = np.empty(len(texts))
    for i, x in enumerate(texts):
        mu = reg.texts[x]
        sq = np.sum((y[None, :] - levels[:, None] * mu[None, :]) ** 2, axis=1)
        logls[i] = logsumexp(-sq * inv_two_var)
    logls -= logsumexp(logls)
    probs = np.exp(logls)
    return dict(zip(texts, probs))


def load_scene(path) -> SceneRegistry:
    """Read a scene definition from a TOML file."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"scene file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"scene file {path}: {exc}") from exc
    return scene_from_dict(data, origin=str(path))


def scene_from_dict(data: dict, origin: str = "<dict>") -> SceneRegistry:
    required = ("frames", "identity_dims", "dominance", "videos", "texts", "congruence")
    for key in required:
        if key not in data:
            raise ConfigError(f"{origin}: missing key {key!r}")
    if "noise_std" in data:  # scalar shorthand for both
        sigma_e = sigma_i = float(data["noise_std"])
    else:
        try:
            sigma_e = float(data["noise_std_energy"])
            sigma_i = float(data["noise_std_identity"])
        except KeyError as exc:
            raise ConfigError(
                f"{origin}: give noise_std, or both noise_std_energy and noise_std_identity"
            ) from exc
    kwargs = {}
    for key in ("activity_threshold", "gate_floor"):
        if key in data:
            kwargs[key] = float(data[key])
    if "activity_levels" in data:
        kwargs["activity_levels"] = tuple(float(v) for v in data["activity_levels"])
    try:
        return SceneRegistry(
            frames=int(data["frames"]),
            identity_dims=int(data["identity_dims"]),
            videos={str(k): np.asarray(v, dtype=np.float64) for k, v in data["videos"].items()},
            texts={str(k): np.asarray(v, dtype=np.float64) for k, v in data["texts"].items()},
            congruence={str(k): str(v) for k, v in data["congruence"].items()},
            noise_std_energy=sigma_e,
            noise_std_identity=sigma_i,
            dominance=float(data["dominance"]),
            **kwargs,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{origin}: {exc}") from exc


def default_scene() -> SceneRegistry:
    """The frozen bundled scene used by defaults, tests, and the benchmark."""
    ref = resources.files("counterflow") / "configs" / "default_scene.cfg"
    with resources.as_file(ref) as path:
        return load_scene(path)
