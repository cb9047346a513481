"""``glocalnet`` command line: synth-data, train, synthesize, evaluate, embed, render.

Exit codes: 0 success, 2 usage error, 1 runtime failure. Failures print a
single ``error: ...`` line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import (
    MotionFile,
    load_motion,
    load_split,
    make_rotating_arm_dataset,
    make_synthetic_dataset,
    preprocess,
    save_motion,
    save_split,
)
from .objectives import (
    MmdConfig,
    bone_length_stats,
    euclid_per_frame,
    horizon_frames,
    mmd_avg,
    mmd_seq,
    resolve_bandwidths,
)
from .pipeline import PaceConfig, densify_and_refine, export_embeddings, multi_activity_rollout
from .render import render_motion
from .skeleton import arm, stick_figure
from .training import Checkpoint, TrainConfig, load_checkpoint, save_checkpoint, train_glogen, train_locgen

METRICS = ("mmd_avg", "mmd_seq", "euclid", "bone")
SKELETONS = {"stick2d": lambda: stick_figure(2), "stick3d": lambda: stick_figure(3), "arm": lambda: arm(2)}


class UsageError(Exception):
    pass


def _digest(args: argparse.Namespace) -> str:
    items = {k: v for k, v in vars(args).items() if k != "func"}
    return hashlib.sha256(json.dumps(items, sort_keys=True, default=str).encode()).hexdigest()[:16]


# --- synth-data -----------------------------------------------------------------


def cmd_synth_data(args) -> int:
    if args.classes < 1:
        raise UsageError("--classes must be >= 1")
    if args.per_class < 1 or args.length < 1:
        raise UsageError("--per-class and --length must be >= 1")
    if args.kind == "arm":
        split = make_rotating_arm_dataset(args.classes * args.per_class, args.length, args.seed)
    else:
        split = make_synthetic_dataset(args.classes, args.per_class, args.length,
                                       SKELETONS[args.skeleton](), args.seed)
    written = save_split(split, args.out_dir)
    print(f"wrote {len(written)} motion files and manifest.json to {args.out_dir}")
    return 0


# --- train ------------------------------------------------------------------------

_TRAIN_FLAGS = ("t", "k", "epochs", "batch_size", "lr", "dropout_p", "hidden", "lambda1", "lambda2",
                "seed", "weight_decay", "clip_norm", "lr_schedule", "M", "convention")


def _train_config(args) -> TrainConfig:
    cfg = {}
    if args.config:
        cfg.update(json.loads(Path(args.config).read_text()))
    for name in _TRAIN_FLAGS:
        v = getattr(args, name)
        if v is not None:
            cfg[name] = v
    if args.no_class_prior:
        cfg["use_class_prior"] = False
    return TrainConfig.from_dict(cfg)


def cmd_train(args) -> int:
    try:
        cfg = _train_config(args)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"bad training config: {exc}") from exc
    split = load_split(args.data_dir)
    if not split.train:
        raise RuntimeError(f"no training sequences found in {args.data_dir}")
    if args.preprocess:
        split.train = [preprocess(m) for m in split.train]
        split.test = [preprocess(m) for m in split.test]
    print(
        f"# {args.stage} training: lr={cfg.lr} dropout={cfg.dropout_p} "
        f"encoder_width={2 * cfg.hidden} batch_size={cfg.batch_size} t={cfg.t} k={cfg.k} "
        f"M={cfg.M} epochs={cfg.epochs} class_prior={'on' if cfg.use_class_prior else 'off'} "
        f"seed={cfg.seed} digest={cfg.digest()}"
    )
    if args.stage == "glogen":
        result = train_glogen(split, cfg)
        class_names = next((m.class_names for m in split.train if m.class_names), None)
    else:
        result = train_locgen(split, cfg)
        class_names = None
    ckpt = Checkpoint.from_result(result, class_names)
    out = Path(args.out)
    save_checkpoint(ckpt, out)
    log_path = Path(args.loss_log) if args.loss_log else out.with_suffix(".loss.csv")
    with log_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_joint_l2"])
        for i, loss in enumerate(result.history):
            val = result.val_history[i] if i < len(result.val_history) else ""
            w.writerow([i + 1, repr(loss), repr(val) if val != "" else ""])
    print(f"wrote checkpoint {out} and loss log {log_path}")
    return 0


# --- synthesize -------------------------------------------------------------------


def parse_schedule(text: str, class_names: Optional[Sequence[str]], n_classes: int) -> List[Tuple[int, int]]:
    """``"classA:3,1:2"`` -> ``[(id, iterations), ...]``; classes by name or id."""
    schedule = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        if ":" not in item:
            raise UsageError(f"schedule entry {item!r} is not class:iterations")
        name, k = item.rsplit(":", 1)
        try:
            k = int(k)
        except ValueError:
            raise UsageError(f"schedule entry {item!r}: iterations must be an integer") from None
        if k < 1:
            raise UsageError(f"schedule entry {item!r}: iterations must be >= 1")
        if class_names and name in class_names:
            cid = list(class_names).index(name)
        else:
            try:
                cid = int(name)
            except ValueError:
                raise RuntimeError(f"unknown class {name!r}") from None
        if not 0 <= cid < n_classes:
            raise RuntimeError(f"class {name!r} outside the model's {n_classes} classes")
        schedule.append((cid, k))
    if not schedule:
        raise UsageError("empty schedule")
    return schedule


def cmd_synthesize(args) -> int:
    glo = load_checkpoint(args.glogen)
    loc = load_checkpoint(args.locgen) if args.locgen else None
    seed_motion = load_motion(args.seed_motion)
    if args.preprocess:
        seed_motion = preprocess(seed_motion)
    model = glo.model
    t = model.window
    if seed_motion.skeleton.pose_dim != model.pose_dim:
        raise RuntimeError(
            f"seed motion pose width {seed_motion.skeleton.pose_dim} does not match "
            f"checkpoint pose_dim {model.pose_dim}"
        )
    if loc is not None and loc.model.pose_dim != model.pose_dim:
        raise RuntimeError(
            f"refiner pose_dim {loc.model.pose_dim} incompatible with generator pose_dim {model.pose_dim}"
        )
    if len(seed_motion) < t:
        raise RuntimeError(f"seed motion has {len(seed_motion)} frames, needs at least t={t}")
    schedule = parse_schedule(args.schedule, glo.class_names, model.n_classes)
    traj = multi_activity_rollout(seed_motion.frames[:t], schedule, model)
    if args.sparse_only:
        frames, step = traj.frames, 1
        stage = "sparse"
    else:
        pace = PaceConfig(args.M, args.convention)
        frames = densify_and_refine(traj.frames, pace, loc.model if loc else None)
        step = args.M + 1
        stage = "dense" if loc else "interpolated"
    meta = {
        "stage": stage,
        "schedule": [list(s) for s in schedule],
        "boundaries": traj.boundaries,
        "dense_boundaries": [b * step for b in traj.boundaries],
        "M": 0 if args.sparse_only else args.M,
        "convention": args.convention,
        "t": t,
    }
    out = MotionFile(seed_motion.skeleton, seed_motion.fps, frames,
                     class_id=schedule[0][0] if len(schedule) == 1 else None,
                     class_names=glo.class_names, name=Path(args.out).stem, meta=meta)
    save_motion(out, args.out)
    print(f"wrote {len(frames)} {stage} frames to {args.out}")
    return 0


# --- evaluate ---------------------------------------------------------------------


def _load_dir(path) -> List[MotionFile]:
    files = sorted(p for p in Path(path).glob("*.json") if p.name != "manifest.json")
    if not files:
        raise RuntimeError(f"no motion files in {path}")
    return [load_motion(p) for p in files]


def _check_aligned(gen: List[MotionFile], ref: List[MotionFile]):
    lengths = {}
    for m in gen + ref:
        lengths.setdefault(m.frames.shape, []).append(m.name)
    if len(lengths) > 1:
        desc = "; ".join(f"{shape}: {', '.join(names[:3])}" for shape, names in lengths.items())
        raise RuntimeError(f"MMD needs equal-length sequences; shapes differ ({desc})")


def cmd_evaluate(args) -> int:
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    for m in metrics:
        if m not in METRICS:
            raise UsageError(f"unknown metric {m!r}; choose from {', '.join(METRICS)}")
    gen = _load_dir(args.generated)
    ref = _load_dir(args.reference)
    cfg = MmdConfig(estimator=args.estimator)
    report: Dict[str, object] = {}
    meta: Dict[str, object] = {"estimator": args.estimator, "joint_aggregation": "mean", "loss_mode": "l2",
                               "config_digest": _digest(args)}
    if "mmd_avg" in metrics or "mmd_seq" in metrics:
        _check_aligned(gen, ref)
        A = [m.frames for m in gen]
        B = [m.frames for m in ref]
        flatA = np.stack(A).reshape(len(A), -1)
        flatB = np.stack(B).reshape(len(B), -1)
        meta["bandwidths_seq"] = ";".join(repr(b) for b in resolve_bandwidths(flatA, flatB))
        if "mmd_avg" in metrics:
            report["mmd_avg"] = mmd_avg(A, B, cfg)
        if "mmd_seq" in metrics:
            report["mmd_seq"] = mmd_seq(A, B, cfg)
    if "euclid" in metrics:
        by_name = {m.name: m for m in ref}
        pairs = [(g, by_name[g.name]) for g in gen if g.name in by_name]
        if not pairs:
            if len(gen) != len(ref):
                raise RuntimeError("euclid: no matching file names and set sizes differ")
            pairs = list(zip(gen, ref))
        per_frame = []
        for g, r in pairs:
            n = min(len(g), len(r))
            pf, _ = euclid_per_frame(g.frames[:n], r.frames[:n], g.skeleton)
            per_frame.append(pf)
        n = min(len(pf) for pf in per_frame)
        mean_pf = np.mean([pf[:n] for pf in per_frame], axis=0)
        report["euclid_mean"] = float(mean_pf.mean())
        if args.horizons:
            ms = [float(h.strip().removesuffix("ms")) for h in args.horizons.split(",") if h.strip()]
            frames = horizon_frames(ms, gen[0].fps)
            meta["horizon_frames"] = ";".join(str(f) for f in frames)
            for h, f in zip(ms, frames):
                if not 1 <= f <= n:
                    raise RuntimeError(f"horizon {h:g}ms maps to frame {f}, outside 1..{n}")
                # frame f is the f-th generated frame
                report[f"euclid@{h:g}ms"] = float(mean_pf[f - 1])
    if "bone" in metrics:
        for label, files in (("generated", gen), ("reference", ref)):
            stds = [bone_length_stats(m.frames, m.skeleton)[1].mean() for m in files]
            report[f"bone_std_{label}"] = float(np.mean(stds))
    for k, v in report.items():
        if not np.isfinite(v):
            raise RuntimeError(f"metric {k} is not finite")
    with Path(args.out).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["key", "value"])
        for k, v in report.items():
            w.writerow([k, repr(float(v))])
        for k, v in meta.items():
            w.writerow([f"meta.{k}", v])
    for k, v in report.items():
        print(f"{k}: {v:.6g}")
    return 0


# --- embed / render ---------------------------------------------------------------


def cmd_embed(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    split = load_split(args.data_dir)
    files = split.train + split.test
    if not files:
        raise RuntimeError(f"no motion files in {args.data_dir}")
    seqs = [(m.frames, m.class_id) for m in files]
    E = export_embeddings(seqs, ckpt.model, names=[m.name for m in files])
    with Path(args.out).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"e{i}" for i in range(E.shape[1])])
        for m, row in zip(files, E):
            w.writerow(["" if m.class_id is None else m.class_id] + [repr(float(x)) for x in row])
    print(f"wrote {len(E)} x {E.shape[1]} embedding matrix to {args.out}")
    return 0


def cmd_render(args) -> int:
    m = load_motion(args.motion)
    written = render_motion(m, args.out_dir, args.size, args.stride, args.points_only)
    print(f"wrote {len(written)} SVG frames and index.html to {args.out_dir}")
    return 0


# --- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glocalnet", description="Two-stage class-aware motion synthesis.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="write a seeded synthetic dataset")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--per-class", type=int, default=20)
    p.add_argument("--length", type=int, default=80)
    p.add_argument("--skeleton", choices=sorted(SKELETONS), default="stick2d")
    p.add_argument("--kind", choices=("oscillation", "arm"), default="oscillation")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train the sparse generator or the refiner")
    p.add_argument("--stage", choices=("glogen", "locgen"), required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--config", help="JSON file with training config keys")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--loss-log", help="per-epoch loss CSV (default: <out>.loss.csv)")
    p.add_argument("--t", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--dropout", dest="dropout_p", type=float)
    p.add_argument("--hidden", type=int, help="per-direction LSTM width (encoder output is twice this)")
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--clip-norm", type=float)
    p.add_argument("--lr-schedule", choices=("constant", "cosine"))
    p.add_argument("--M", type=int, help="interpolated poses per anchor pair (refiner)")
    p.add_argument("--convention", choices=("forward_interior", "literal_eq3"))
    p.add_argument("--seed", type=int)
    p.add_argument("--no-class-prior", action="store_true")
    p.add_argument("--preprocess", action="store_true", help="root-center and scale-normalize inputs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synthesize", help="generate a motion from a seed and a class schedule")
    p.add_argument("--glogen", required=True)
    p.add_argument("--locgen")
    p.add_argument("--seed-motion", required=True)
    p.add_argument("--schedule", required=True, help='e.g. "0:3" or "class0:2,class1:2"')
    p.add_argument("--M", type=int, default=4)
    p.add_argument("--convention", choices=("forward_interior", "literal_eq3"), default="forward_interior")
    p.add_argument("--sparse-only", action="store_true")
    p.add_argument("--preprocess", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("evaluate", help="compare generated and reference motion sets")
    p.add_argument("--generated", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--metrics", default="mmd_avg,mmd_seq,euclid")
    p.add_argument("--horizons", default="", help='e.g. "80ms,160ms"')
    p.add_argument("--estimator", choices=("biased", "unbiased"), default="biased")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("embed", help="export encoder embeddings as CSV")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("render", help="draw frames as SVG")
    p.add_argument("--motion", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--points-only", action="store_true")
    p.set_defaults(func=cmd_render)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
