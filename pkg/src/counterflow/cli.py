"""Command-line entry points: sample, experiment, sweep, score.

Exit codes are a stable contract: 0 success, 2 usage/config errors,
3 backend/transport errors.  Numeric defaults follow the method's
reference configuration (N=25, transition step 17, guidance weights
3.0 / 5.0 / 4.5); every flag states its default in --help.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import harness, metrics
from .core import GuidanceWeights, uniform_grid
from .errors import (
    AlignmentUndefined,
    ConditionError,
    ConfigError,
    CounterflowError,
    ParameterError,
    SamplingError,
    ShapeError,
    WireError,
)
from .gmm import GMMBackend, default_scene, load_scene
from .sampler import euler_sample
from .wire import RemoteBackend

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BACKEND = 3

CONFIG_ERRORS = (ConfigError, ParameterError, ConditionError, ShapeError, AlignmentUndefined)
BACKEND_ERRORS = (WireError, SamplingError)


def _default_seed() -> int:
    env = os.environ.get("COUNTERFLOW_SEED")
    return int(env) if env is not None else 0


def _load_scene(ref: str):
    return default_scene() if ref == "default" else load_scene(ref)


def _make_backend(spec: str, scene):
    if spec == "gmm":
        return GMMBackend(scene)
    if spec.startswith("remote:"):
        return RemoteBackend(spec[len("remote:") :])
    raise ConfigError(f"unknown backend {spec!r}; expected gmm or remote:<host:port>")


def _require_ids(scene, video, target, source):
    if video not in scene.videos:
        raise ConfigError(f"unknown video id {video!r}; scene has {scene.video_ids()}")
    for name, tex in (("target", target), ("source", source)):
        if tex not in scene.texts:
            raise ConfigError(f"unknown {name} id {tex!r}; scene has {scene.text_ids()}")


def cmd_sample(args) -> int:
    scene = _load_scene(args.scene)
    video = args.video or scene.video_ids()[0]
    source = args.source or scene.congruence.get(video)
    if source is None:
        raise ConfigError(f"no congruent text for video {video!r}; pass --source")
    target = args.target
    if target is None:
        others = [t for t in scene.text_ids() if t != source]
        if not others:
            raise ConfigError("scene has no non-congruent text to target; pass --target")
        target = others[0]
    _require_ids(scene, video, target, source)

    weights = GuidanceWeights(args.w_vid, args.w_txt, args.w_cfg, args.w_vanilla)
    schedule = harness.build_schedule(args.variant, weights, video, target, source, args.n_trans)
    backend = _make_backend(args.backend, scene)
    grid = uniform_grid(args.n)

    trace_fn = None
    if args.trace:

        def trace_fn(step, t, spec, v):
            w = spec.weights
            print(
                f"step={step} t={t:.6f} form={spec.form} "
                f"w=({w.w_vid},{w.w_txt},{w.w_cfg},{w.w_vanilla}) "
                f"|v|={float(np.linalg.norm(v)):.6f}",
                file=sys.stderr,
            )

    traj = euler_sample(
        backend, schedule, grid, scene.shape, args.seed,
        keep_trajectory=False, trace_fn=trace_fn,
    )
    clip_id = f"{video}-{target}-{source}-s{args.seed}"
    record, alignment = metrics.score_clip(
        scene, traj.final, target, source, video, clip_id=clip_id
    )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.savetxt(out / "latent.csv", traj.final, delimiter=",", fmt="%.17g")
    row = harness.RunRecord(
        clip_id, video, target, source, args.seed, args.variant, args.n_trans,
        p_target=round(record.p_target, 6),
        p_source=round(record.p_source, 6),
        delta=round(record.delta, 6),
        alignment=round(alignment, 6),
    )
    (out / "clip.csv").write_text(harness.CLIPS_HEADER + "\n" + row.csv_row() + "\n")
    print(f"wrote {out / 'latent.csv'} and {out / 'clip.csv'} (delta={record.delta:.6f})")
    return EXIT_OK


def cmd_experiment(args) -> int:
    parsed = harness.load_experiment_config(args.config)
    out_dir = Path(args.out) if args.out else parsed.out_dir
    if out_dir is None:
        raise ConfigError("config declares no [output].dir and --out was not given")
    out_dir.mkdir(parents=True, exist_ok=True)

    backend = GMMBackend(parsed.scene)
    results = []
    for variant in parsed.variants:
        cfg = parsed.experiment_config(variant, jobs=args.jobs)
        results.append(harness.run_experiment(cfg, backend))
    harness.write_clips_csv(results, out_dir / "clips.csv")
    harness.write_summary_csv(results, out_dir / "summary.csv")
    print(f"wrote {out_dir / 'clips.csv'} and {out_dir / 'summary.csv'}")
    for result in results:
        s = result.summary()
        print(
            f"  {s['variant']}: mean_delta={s['mean_delta']:.6f} "
            f"positive_ratio={s['positive_ratio']:.6f} "
            f"mean_alignment={s['mean_alignment']:.6f} ({s['runs']} runs)"
        )
    return EXIT_OK


def cmd_sweep(args) -> int:
    parsed = harness.load_experiment_config(args.config)
    if args.n_trans_list:
        try:
            n_trans_list = [int(v) for v in args.n_trans_list.split(",") if v.strip() != ""]
        except ValueError as exc:
            raise ConfigError(f"bad --n-trans-list: {exc}") from exc
    else:
        n_trans_list = parsed.n_trans_list
    if not n_trans_list:
        raise ConfigError("no transition list: pass --n-trans-list or add [sweep].n_trans_list")
    out_dir = Path(args.out) if args.out else parsed.out_dir
    if out_dir is None:
        raise ConfigError("config declares no [output].dir and --out was not given")
    out_dir.mkdir(parents=True, exist_ok=True)

    cfg = parsed.experiment_config(parsed.variants[0], jobs=args.jobs)
    points, _ = harness.sweep_transition(cfg, n_trans_list)
    harness.write_sweep_csv(points, out_dir / "sweep.csv")
    print(f"wrote {out_dir / 'sweep.csv'} ({len(points)} points)")
    return EXIT_OK


def cmd_score(args) -> int:
    pairs_path = Path(args.pairs)
    try:
        lines = pairs_path.read_text().splitlines()
    except FileNotFoundError as exc:
        raise ConfigError(f"pairs file not found: {pairs_path}") from exc
    if not lines or lines[0].strip() != "clip_id,target,source":
        raise ConfigError(f"{pairs_path}: first line must be 'clip_id,target,source'")
    rows = [ln.split(",") for ln in lines[1:] if ln.strip()]
    if not rows:
        raise ConfigError(f"{pairs_path}: no data rows")

    scores_dir = Path(args.scores_dir)
    records = []
    skipped = 0
    clamped_total = 0
    for row in rows:
        if len(row) != 3:
            print(f"skipping malformed pairs row: {','.join(row)}", file=sys.stderr)
            skipped += 1
            continue
        clip_id, target, source = (c.strip() for c in row)
        try:
            matrix, clamped = metrics.read_frame_scores(scores_dir / f"{clip_id}.csv")
            clamped_total += clamped
            records.append(metrics.delta_flam(matrix, target, source))
        except CounterflowError as exc:
            print(f"skipping {clip_id}: {exc}", file=sys.stderr)
            skipped += 1
    if clamped_total:
        print(f"warning: clamped {clamped_total} out-of-range scores", file=sys.stderr)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics.write_delta_report(records, out / "deltas.csv")
    metrics.write_delta_summary(records, out / "summary.csv", excluded=skipped)
    print(f"wrote {out / 'deltas.csv'} and {out / 'summary.csv'} ({len(records)} clips, {skipped} skipped)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="counterflow",
        description="Two-phase guided sampling, experiments, and replacement metrics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="run one guided sampling run and score it")
    p.add_argument("--scene", default="default", help="scene file, or 'default' (default: default)")
    p.add_argument("--video", default=None, help="video id (default: first id in the scene)")
    p.add_argument("--target", default=None, help="target text id (default: first non-congruent text)")
    p.add_argument("--source", default=None, help="source text id (default: the video's congruent text)")
    p.add_argument("--n", type=int, default=25, help="total Euler steps (default: 25, reference setting)")
    p.add_argument("--n-trans", type=int, default=17, help="phase transition step (default: 17, reference setting)")
    p.add_argument("--w-vid", type=float, default=3.0, help="video guidance weight (default: 3.0, reference setting)")
    p.add_argument("--w-txt", type=float, default=5.0, help="text contrast weight (default: 5.0, reference setting)")
    p.add_argument("--w-cfg", type=float, default=4.5, help="phase-2 contrast weight (default: 4.5, reference setting)")
    p.add_argument("--w-vanilla", type=float, default=4.5, help="vanilla CFG weight (default: 4.5)")
    p.add_argument("--seed", type=int, default=None,
                   help="run seed (default: COUNTERFLOW_SEED env var, else 0; flag wins)")
    p.add_argument("--variant", default="counterflow", choices=harness.VARIANTS,
                   help="guidance variant (default: counterflow)")
    p.add_argument("--backend", default="gmm", help="gmm or remote:<host:port> (default: gmm)")
    p.add_argument("--out", default="out/sample", help="output directory (default: out/sample)")
    p.add_argument("--trace", action="store_true", help="log per-step form and velocity norm to stderr")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("experiment", help="run an experiment config (one or more variants)")
    p.add_argument("--config", required=True, help="experiment config file")
    p.add_argument("--out", default=None, help="override the config's output directory")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                   help="parallel runs (default: available cores)")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("sweep", help="sweep the phase-transition step")
    p.add_argument("--config", required=True, help="experiment config file")
    p.add_argument("--n-trans-list", default=None, help="comma-separated transition steps")
    p.add_argument("--out", default=None, help="override the config's output directory")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                   help="parallel runs (default: available cores)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("score", help="score externally produced frame-score files")
    p.add_argument("--scores-dir", required=True, help="directory of <clip_id>.csv frame-score files")
    p.add_argument("--pairs", required=True, help="CSV of clip_id,target,source rows")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_score)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "seed", None) is None and args.command == "sample":
        try:
            args.seed = _default_seed()
        except ValueError:
            print("COUNTERFLOW_SEED must be an integer", file=sys.stderr)
            return EXIT_CONFIG
    try:
        return args.func(args)
    except BACKEND_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CounterflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
