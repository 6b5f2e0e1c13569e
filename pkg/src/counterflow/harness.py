"""Experiment grid: variants, triplet expansion, seeded runs, CSV emission.

A run = (variant, triplet, seed): build the variant's phase schedule,
Euler-sample from seeded noise, score the endpoint.  Sweeps and ablations
reuse identical seed lists per triplet, so every comparison is paired.
Emitted CSVs are byte-deterministic: rows are ordered by (triplet, seed),
all floats are 6-decimal fixed, and aggregates are computed from the same
rounded values an external reader would parse back out of clips.csv.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python 3.10
    import tomli as tomllib

from .backend import VelocityBackend
from .core import ConditionId, GuidanceWeights, null_text, null_video, uniform_grid
from .errors import ConfigError, CounterflowError, ParameterError
from .gmm import GMMBackend, SceneRegistry, default_scene, load_scene
from .guidance import DECOMPOSED, NEGATIVE_TEXT, VANILLA_CFG, GuidanceSpec, PhaseSchedule
from .metrics import AlignmentUndefined, DeltaRecord, positive_ratio, score_clip
from .sampler import euler_sample

VARIANTS = (
    "counterflow",
    "no_p2_neg",
    "no_p1_decomp",
    "no_p1_neg",
    "phase_swap",
    "vanilla_only",
)

CLIPS_HEADER = "clip_id,video_id,target_id,source_id,seed,variant,n_trans,p_target,p_source,delta,alignment,error"
SUMMARY_HEADER = "variant,n_trans,runs,failed,mean_delta,positive_ratio,mean_alignment,alignment_excluded"
SWEEP_HEADER = "n_trans,mean_delta,positive_ratio,mean_alignment,runs,excluded"


def build_schedule(
    variant: str,
    weights: GuidanceWeights,
    video_id: str,
    target_id: str,
    source_id: str,
    n_trans: int,
) -> PhaseSchedule:
    """Map a variant tag onto its two phase specs (pure configuration)."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    video = ConditionId.video(video_id)
    target = ConditionId.text(target_id)
    source = ConditionId.text(source_id)

    p1_decomposed = GuidanceSpec(DECOMPOSED, weights, video, target, source)
    p1_no_neg = GuidanceSpec(DECOMPOSED, weights, video, target, null_text())
    p2_negative = GuidanceSpec(NEGATIVE_TEXT, weights, null_video(), target, source)
    p2_no_neg = GuidanceSpec(NEGATIVE_TEXT, weights, null_video(), target, null_text())
    vanilla = GuidanceSpec(VANILLA_CFG, weights, video, target, source)

    phases = {
        "counterflow": (p1_decomposed, p2_negative),
        "no_p2_neg": (p1_decomposed, p2_no_neg),
        "no_p1_decomp": (vanilla, p2_negative),
        "no_p1_neg": (p1_no_neg, p2_negative),
        "phase_swap": (p2_negative, p1_decomposed),
        "vanilla_only": (vanilla, vanilla),
    }[variant]
    return PhaseSchedule(n_trans, phases[0], phases[1])


def expand_triplets(reg: SceneRegistry) -> list[tuple[str, str, str]]:
    """All conflicting (video, target, source) triplets, lexicographic order.

    Source is always the video's congruent text; targets run over every
    other registered text.
    """
    if len(reg.texts) < 2:
        raise ParameterError("triplet expansion needs at least 2 texts")
    triplets = []
    for vid in reg.video_ids():
        source = reg.congruence[vid]
        for tex in reg.text_ids():
            if tex != source:
                triplets.append((vid, tex, source))
    return triplets


@dataclass
class RunRecord:
    clip_id: str
    video_id: str
    target_id: str
    source_id: str
    seed: int
    variant: str
    n_trans: int
    p_target: float | None = None
    p_source: float | None = None
    delta: float | None = None
    alignment: float | None = None
    error: str = ""

    def csv_row(self) -> str:
        def fmt(v):
            return "" if v is None else f"{v:.6f}"

        return (
            f"{self.clip_id},{self.video_id},{self.target_id},{self.source_id},"
            f"{self.seed},{self.variant},{self.n_trans},"
            f"{fmt(self.p_target)},{fmt(self.p_source)},{fmt(self.delta)},"
            f"{fmt(self.alignment)},{self.error}"
        )


@dataclass
class ExperimentConfig:
    scene: SceneRegistry
    variant: str = "counterflow"
    n: int = 25
    n_trans: int = 17
    weights: GuidanceWeights = field(default_factory=GuidanceWeights)
    triplets: list[tuple[str, str, str]] | None = None
    seeds: list[int] = field(default_factory=lambda: list(range(50)))
    jobs: int = 1

    def resolved_triplets(self) -> list[tuple[str, str, str]]:
        if self.triplets is None:
            return expand_triplets(self.scene)
        return list(self.triplets)


@dataclass
class ExperimentResult:
    records: list[RunRecord]
    variant: str
    n_trans: int

    @property
    def ok_records(self) -> list[RunRecord]:
        return [r for r in self.records if not r.error]

    def summary(self) -> dict:
        ok = self.ok_records
        deltas = [r.delta for r in ok]
        alignments = [r.alignment for r in ok if r.alignment is not None]
        delta_records = [
            DeltaRecord(r.clip_id, r.target_id, r.source_id, r.p_target, r.p_source, r.delta)
            for r in ok
        ]
        return {
            "variant": self.variant,
            "n_trans": self.n_trans,
            "runs": len(ok),
            "failed": len(self.records) - len(ok),
            "mean_delta": float(np.mean(deltas)) if deltas else float("nan"),
            "positive_ratio": positive_ratio(delta_records) if delta_records else float("nan"),
            "mean_alignment": float(np.mean(alignments)) if alignments else float("nan"),
            "alignment_excluded": len(ok) - len(alignments),
        }


def run_one(
    backend: VelocityBackend,
    reg: SceneRegistry,
    cfg: ExperimentConfig,
    triplet: tuple[str, str, str],
    seed: int,
) -> RunRecord:
    video_id, target_id, source_id = triplet
    clip_id = f"{video_id}-{target_id}-{source_id}-s{seed}"
    record = RunRecord(clip_id, video_id, target_id, source_id, seed, cfg.variant, cfg.n_trans)
    try:
        schedule = build_schedule(cfg.variant, cfg.weights, video_id, target_id, source_id, cfg.n_trans)
        grid = uniform_grid(cfg.n)
        traj = euler_sample(backend, schedule, grid, reg.shape, seed, keep_trajectory=False)
        delta_rec, alignment = score_clip(
            reg, traj.final, target_id, source_id, video_id, clip_id=clip_id
        )
        record.p_target = round(delta_rec.p_target, 6)
        record.p_source = round(delta_rec.p_source, 6)
        record.delta = round(delta_rec.delta, 6)
        record.alignment = round(alignment, 6)
    except AlignmentUndefined:
        # metric rows stay; alignment excluded from aggregates with a count
        pass
    except CounterflowError as exc:
        record.error = f"{type(exc).__name__}: {exc}".replace(",", ";")
        record.p_target = record.p_source = record.delta = record.alignment = None
    return record


def run_experiment(cfg: ExperimentConfig, backend: VelocityBackend | None = None) -> ExperimentResult:
    """Run triplet x seed grid for one variant; deterministic row order."""
    if backend is None:
        backend = GMMBackend(cfg.scene)
    tasks = [(triplet, seed) for triplet in sorted(cfg.resolved_triplets()) for seed in cfg.seeds]

    def work(task):
        triplet, seed = task
        return run_one(backend, cfg.scene, cfg, triplet, seed)

    if cfg.jobs > 1 and backend.thread_safe:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            records = list(pool.map(work, tasks))
    else:
        records = [work(t) for t in tasks]
    return ExperimentResult(records, cfg.variant, cfg.n_trans)


@dataclass
class SweepPoint:
    n_trans: int
    mean_delta: float
    positive_ratio: float
    mean_alignment: float
    runs: int
    excluded: int


def sweep_transition(
    cfg: ExperimentConfig,
    n_trans_list: list[int],
    backend: VelocityBackend | None = None,
) -> tuple[list[SweepPoint], list[ExperimentResult]]:
    """run_experiment per transition step with shared seeds (paired)."""
    if not n_trans_list:
        raise ParameterError("n_trans_list must be non-empty")
    for n_trans in n_trans_list:
        if not (0 <= n_trans <= cfg.n):
            raise ParameterError(f"n_trans={n_trans} outside [0, {cfg.n}]")
    if backend is None:
        backend = GMMBackend(cfg.scene)
    points, results = [], []
    for n_trans in n_trans_list:
        point_cfg = ExperimentConfig(
            scene=cfg.scene,
            variant=cfg.variant,
            n=cfg.n,
            n_trans=n_trans,
            weights=cfg.weights,
            triplets=cfg.triplets,
            seeds=cfg.seeds,
            jobs=cfg.jobs,
        )
        result = run_experiment(point_cfg, backend)
        s = result.summary()
        points.append(
            SweepPoint(
                n_trans,
                s["mean_delta"],
                s["positive_ratio"],
                s["mean_alignment"],
                s["runs"],
                s["alignment_excluded"] + s["failed"],
            )
        )
        results.append(result)
    return points, results


def paired_bootstrap_se(
    xs, ys, n_boot: int = 1000, seed: int = 0, stat=np.mean
) -> float:
    """Standard error of stat(x) - stat(y) under paired resampling."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.size == 0:
        raise ParameterError("paired bootstrap needs equal-length non-empty samples")
    rng = np.random.Generator(np.random.Philox(key=seed))
    idx = rng.integers(0, xs.size, size=(n_boot, xs.size))
    diffs = stat(xs[idx], axis=1) - stat(ys[idx], axis=1)
    return float(np.std(diffs))


# --- CSV emission -----------------------------------------------------------


def _fmt(v) -> str:
    return f"{v:.6f}" if v == v else "nan"  # v != v catches NaN


def write_clips_csv(results: list[ExperimentResult], path) -> None:
    lines = [CLIPS_HEADER]
    for result in results:
        lines.extend(r.csv_row() for r in result.records)
    Path(path).write_text("\n".join(lines) + "\n")


def write_summary_csv(results: list[ExperimentResult], path) -> None:
    lines = [SUMMARY_HEADER]
    for result in results:
        s = result.summary()
        lines.append(
            f"{s['variant']},{s['n_trans']},{s['runs']},{s['failed']},"
            f"{_fmt(s['mean_delta'])},{_fmt(s['positive_ratio'])},"
            f"{_fmt(s['mean_alignment'])},{s['alignment_excluded']}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def write_sweep_csv(points: list[SweepPoint], path) -> None:
    lines = [SWEEP_HEADER]
    for p in points:
        lines.append(
            f"{p.n_trans},{_fmt(p.mean_delta)},{_fmt(p.positive_ratio)},"
            f"{_fmt(p.mean_alignment)},{p.runs},{p.excluded}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


# --- config files -----------------------------------------------------------


@dataclass
class ParsedConfig:
    """A parsed experiment config file (shared by experiment and sweep)."""

    scene: SceneRegistry
    scene_ref: str
    variants: list[str]
    n: int
    n_trans: int
    weights: GuidanceWeights
    seeds: list[int]
    triplets: list[tuple[str, str, str]] | None
    out_dir: Path | None
    n_trans_list: list[int] | None

    def experiment_config(self, variant: str, jobs: int = 1) -> ExperimentConfig:
        return ExperimentConfig(
            scene=self.scene,
            variant=variant,
            n=self.n,
            n_trans=self.n_trans,
            weights=self.weights,
            triplets=self.triplets,
            seeds=self.seeds,
            jobs=jobs,
        )


def _parse_seeds(raw) -> list[int]:
    if isinstance(raw, list):
        return [int(s) for s in raw]
    if isinstance(raw, dict):
        start = int(raw.get("start", 0))
        count = int(raw["count"])
        return list(range(start, start + count))
    raise ConfigError("seeds must be a list or a {start, count} table")


def load_experiment_config(path) -> ParsedConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path}: {exc}") from exc

    scene_ref = data.get("scene", "default")
    if scene_ref == "default":
        scene = default_scene()
    else:
        scene = load_scene((path.parent / scene_ref).resolve())

    if "variants" in data:
        variants = [str(v) for v in data["variants"]]
    else:
        variants = [str(data.get("variant", "counterflow"))]
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"{path}: unknown variant {v!r}")

    w = data.get("weights", {})
    weights = GuidanceWeights(
        w_vid=float(w.get("vid", 3.0)),
        w_txt=float(w.get("txt", 5.0)),
        w_cfg=float(w.get("cfg", 4.5)),
        w_vanilla=float(w.get("vanilla", 4.5)),
    )

    raw_triplets = data.get("triplets", "all")
    if raw_triplets == "all":
        triplets = None
    else:
        triplets = [tuple(str(x) for x in t) for t in raw_triplets]
        if any(len(t) != 3 for t in triplets):
            raise ConfigError(f"{path}: triplets must be [video, target, source] triples")

    out_dir = None
    if "output" in data and "dir" in data["output"]:
        out_dir = Path(data["output"]["dir"])

    n_trans_list = None
    if "sweep" in data and "n_trans_list" in data["sweep"]:
        n_trans_list = [int(v) for v in data["sweep"]["n_trans_list"]]

    try:
        return ParsedConfig(
            scene=scene,
            scene_ref=str(scene_ref),
            variants=variants,
            n=int(data.get("n", 25)),
            n_trans=int(data.get("n_trans", 17)),
            weights=weights,
            seeds=_parse_seeds(data.get("seeds", list(range(50)))),
            triplets=triplets,
            out_dir=out_dir,
            n_trans_list=n_trans_list,
        )
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
