"""Replacement metrics over frame-level detection scores.

The scoring pipeline is source-agnostic: a FrameScoreMatrix may come from
the toy classifier (score_clip) or from real detector output files (the
read/write pair below), and the same pooling / delta / ratio machinery
applies.  Frame-score files hold one clip each:

    line 1: clip_id,frames,prompts          e.g.  clip007,16,3
    line 2: comma-separated prompt ids
    then `frames` rows of `prompts` probabilities, 6-decimal fixed

Values are clamped to [0, 1] on read; the reader reports how many entries
it had to clamp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import check_latent
from .errors import AlignmentUndefined, ConfigError, ParameterError
from .gmm import SceneRegistry, classify_identity


@dataclass
class FrameScoreMatrix:
    """frames x prompts probability matrix for one clip."""

    scores: np.ndarray
    prompt_ids: list
    clip_id: str = ""

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 2 or self.scores.shape[0] < 1:
            raise ParameterError("scores must be a frames x prompts matrix with >= 1 frame")
        if self.scores.shape[1] != len(self.prompt_ids):
            raise ParameterError("prompt_ids length must match score columns")
        if len(set(self.prompt_ids)) != len(self.prompt_ids):
            raise ParameterError("prompt ids must be unique")
        if not np.isfinite(self.scores).all() or self.scores.min() < 0 or self.scores.max() > 1:
            raise ParameterError("scores must be finite and within [0, 1]")

    def column(self, prompt_id) -> np.ndarray:
        try:
            idx = self.prompt_ids.index(prompt_id)
        except ValueError:
            raise ParameterError(f"unknown prompt id {prompt_id!r}") from None
        return self.scores[:, idx]


@dataclass(frozen=True)
class DeltaRecord:
    """Pooled target/source evidence and their difference for one clip."""

    clip_id: str
    target_id: str
    source_id: str
    p_target: float
    p_source: float
    delta: float


def pool_max(m: FrameScoreMatrix, prompt_id) -> float:
    """Maximum frame-level probability across all frames for one prompt."""
    return float(m.column(prompt_id).max())


def delta_flam(m: FrameScoreMatrix, target_id, source_id) -> DeltaRecord:
    """Pooled target evidence minus pooled source evidence."""
    if target_id == source_id:
        raise ParameterError("target and source prompt must differ")
    p_target = pool_max(m, target_id)
    p_source = pool_max(m, source_id)
    return DeltaRecord(m.clip_id, target_id, source_id, p_target, p_source, p_target - p_source)


def positive_ratio(records: list[DeltaRecord]) -> float:
    """Fraction of records with strictly positive delta (zero counts as failure)."""
    if not records:
        raise ParameterError("positive_ratio needs at least one record")
    return sum(1 for r in records if r.delta > 0.0) / len(records)


def envelope_alignment(reg: SceneRegistry, z: np.ndarray, video_id: str) -> float:
    """Pearson correlation between per-frame energy |z[:, 0]| and the
    video's activity envelope; order-sensitive by design."""
    z = check_latent(z)
    if video_id not in reg.videos:
        raise ParameterError(f"unknown video id {video_id!r}")
    energy = np.abs(z[:, 0])
    env = reg.videos[video_id]
    if len(energy) != len(env):
        raise ParameterError("latent frame count does not match scene")
    if len(env) < 2:
        raise ParameterError("alignment needs at least two frames")
    de = energy - energy.mean()
    dv = env - env.mean()
    se = float(np.sqrt(np.sum(de * de)))
    sv = float(np.sqrt(np.sum(dv * dv)))
    if se == 0.0 or sv == 0.0:
        raise AlignmentUndefined("constant series, correlation undefined")
    return float(np.sum(de * dv) / (se * sv))


def frame_scores(reg: SceneRegistry, z: np.ndarray, clip_id: str = "") -> FrameScoreMatrix:
    """Per-frame identity posteriors of a latent, as a score matrix."""
    texts = reg.text_ids()
    rows = np.empty((reg.frames, len(texts)))
    for f in range(reg.frames):
        scores = classify_identity(reg, z, f)
        rows[f] = [scores[x] for x in texts]
    return FrameScoreMatrix(rows, texts, clip_id=clip_id)


def score_clip(
    reg: SceneRegistry,
    z: np.ndarray,
    target_id: str,
    source_id: str,
    video_id: str,
    clip_id: str = "",
) -> tuple[DeltaRecord, float]:
    """Full per-clip scoring: replacement delta plus envelope alignment."""
    matrix = frame_scores(reg, z, clip_id=clip_id)
    record = delta_flam(matrix, target_id, source_id)
    alignment = envelope_alignment(reg, z, video_id)
    return record, alignment


# --- frame-score files ----------------------------------------------------


def write_frame_scores(m: FrameScoreMatrix, path) -> None:
    lines = [f"{m.clip_id},{m.scores.shape[0]},{m.scores.shape[1]}"]
    lines.append(",".join(str(p) for p in m.prompt_ids))
    for row in m.scores:
        lines.append(",".join(f"{v:.6f}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_frame_scores(path) -> tuple[FrameScoreMatrix, int]:
    """Parse a frame-score file; returns (matrix, clamped_entry_count)."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except FileNotFoundError as exc:
        raise ConfigError(f"frame-score file not found: {path}") from exc
    if len(lines) < 3:
        raise ConfigError(f"{path}: too short to be a frame-score file")
    head = lines[0].split(",")
    if len(head) != 3:
        raise ConfigError(f"{path}: header must be clip_id,frames,prompts")
    clip_id = head[0]
    try:
        n_frames, n_prompts = int(head[1]), int(head[2])
    except ValueError as exc:
        raise ConfigError(f"{path}: bad frame/prompt counts in header") from exc
    prompt_ids = lines[1].split(",")
    if len(prompt_ids) != n_prompts:
        raise ConfigError(f"{path}: expected {n_prompts} prompt ids, found {len(prompt_ids)}")
    if len(lines) < 2 + n_frames:
        raise ConfigError(f"{path}: expected {n_frames} score rows")
    clamped = 0
    rows = np.empty((n_frames, n_prompts))
    for i in range(n_frames):
        cells = lines[2 + i].split(",")
        if len(cells) != n_prompts:
            raise ConfigError(f"{path}: row {i} has {len(cells)} values, expected {n_prompts}")
        try:
            values = [float(c) for c in cells]
        except ValueError as exc:
            raise ConfigError(f"{path}: row {i}: {exc}") from exc
        for j, v in enumerate(values):
            if not math.isfinite(v):
                raise ConfigError(f"{path}: row {i} has a non-finite score")
            if v < 0.0 or v > 1.0:
                clamped += 1
                values[j] = min(1.0, max(0.0, v))
        rows[i] = values
    return FrameScoreMatrix(rows, prompt_ids, clip_id=clip_id), clamped


# --- aggregate reports ------------------------------------------------------


def write_delta_report(records: list[DeltaRecord], path) -> None:
    """Per-clip CSV, no footer; aggregates belong in the summary file."""
    lines = ["clip_id,target_id,source_id,p_target,p_source,delta"]
    for r in records:
        lines.append(
            f"{r.clip_id},{r.target_id},{r.source_id},"
            f"{r.p_target:.6f},{r.p_source:.6f},{r.delta:.6f}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def write_delta_summary(records: list[DeltaRecord], path, excluded: int = 0) -> None:
    lines = ["mean_delta,positive_ratio,M,excluded_count"]
    mean_delta = sum(r.delta for r in records) / len(records) if records else float("nan")
    ratio = positive_ratio(records) if records else float("nan")
    lines.append(f"{mean_delta:.6f},{ratio:.6f},{len(records)},{excluded}")
    Path(path).write_text("\n".join(lines) + "\n")
