"""Motion files, preprocessing, sparse sampling, training windows and synthetic data.

The on-disk motion document is JSON::

    {"version": 1,
     "skeleton": {"joints": J, "dims": D, "bones": [[a, b], ...]},
     "fps": 12.5,
     "class_id": 2,                 # optional
     "class_names": ["wave", ...],  # optional
     "frames": [[x0, y0, x1, y1, ...], ...],
     "meta": {...}}                 # optional, free-form

Python's float repr round-trips exactly, so save/load is lossless.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .skeleton import SkeletonSpec, arm, rest_pose, stick_figure

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


class MotionFormatError(ValueError):
    """Malformed motion document."""


@dataclass
class MotionFile:
    skeleton: SkeletonSpec
    fps: float
    frames: np.ndarray
    class_id: Optional[int] = None
    class_names: Optional[List[str]] = None
    name: str = ""
    meta: Dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.atleast_2d(np.asarray(self.frames, dtype=np.float64))
        if self.frames.size and self.frames.shape[1] != self.skeleton.pose_dim:
            raise MotionFormatError(
                f"frames have width {self.frames.shape[1]}, skeleton expects {self.skeleton.pose_dim}"
            )
        if not (self.fps > 0 and math.isfinite(self.fps)):
            raise MotionFormatError(f"fps must be positive, got {self.fps}")

    def __len__(self):
        return len(self.frames)

    def replace(self, **changes) -> "MotionFile":
        kw = dict(
            skeleton=self.skeleton,
            fps=self.fps,
            frames=self.frames,
            class_id=self.class_id,
            class_names=None if self.class_names is None else list(self.class_names),
            name=self.name,
            meta=dict(self.meta),
        )
        kw.update(changes)
        return MotionFile(**kw)

    def to_dict(self) -> dict:
        doc = {"version": FORMAT_VERSION, "skeleton": self.skeleton.to_dict(), "fps": float(self.fps)}
        if self.class_id is not None:
            doc["class_id"] = int(self.class_id)
        if self.class_names is not None:
            doc["class_names"] = list(self.class_names)
        if self.name:
            doc["name"] = self.name
        doc["frames"] = self.frames.tolist()
        if self.meta:
            doc["meta"] = self.meta
        return doc


@dataclass
class DatasetSplit:
    train: List[MotionFile]
    test: List[MotionFile]
    seed: int = 0

    def __post_init__(self):
        overlap = {m.name for m in self.train if m.name} & {m.name for m in self.test if m.name}
        if overlap:
            raise ValueError(f"train and test share sequences: {sorted(overlap)[:5]}")


def motion_from_dict(doc: dict, source: str = "<document>") -> MotionFile:
    if not isinstance(doc, dict):
        raise MotionFormatError(f"{source}: top level must be an object")
    version = doc.get("version")
    if version != FORMAT_VERSION:
        raise MotionFormatError(f"{source}: unsupported version {version!r} (expected {FORMAT_VERSION})")
    for key in ("skeleton", "fps", "frames"):
        if key not in doc:
            raise MotionFormatError(f"{source}: missing field '{key}'")
    try:
        skeleton = SkeletonSpec.from_dict(doc["skeleton"])
    except (KeyError, TypeError, ValueError) as exc:
        raise MotionFormatError(f"{source}: bad field 'skeleton': {exc}") from exc
    frames = doc["frames"]
    if not isinstance(frames, list):
        raise MotionFormatError(f"{source}: field 'frames' must be a list")
    for i, fr in enumerate(frames):
        if not isinstance(fr, list) or len(fr) != skeleton.pose_dim:
            n = len(fr) if isinstance(fr, list) else type(fr).__name__
            raise MotionFormatError(
                f"{source}: frame {i} has {n} values, expected {skeleton.pose_dim} (J*D)"
            )
    arr = np.array(frames, dtype=np.float64).reshape(len(frames), skeleton.pose_dim)
    try:
        fps = float(doc["fps"])
    except (TypeError, ValueError) as exc:
        raise MotionFormatError(f"{source}: bad field 'fps': {exc}") from exc
    class_id = doc.get("class_id")
    return MotionFile(
        skeleton=skeleton,
        fps=fps,
        frames=arr,
        class_id=None if class_id is None else int(class_id),
        class_names=doc.get("class_names"),
        name=doc.get("name", ""),
        meta=doc.get("meta", {}),
    )


def load_motion(path) -> MotionFile:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise MotionFormatError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    m = motion_from_dict(doc, str(path))
    if not m.name:
        m.name = path.stem
    return m


def save_motion(m: MotionFile, path) -> None:
    path = Path(path)
    path.write_text(json.dumps(m.to_dict(), separators=(",", ":")) + "\n")


def load_motion_csv(
    path,
    skeleton: SkeletonSpec,
    fps: float,
    class_id: Optional[int] = None,
) -> MotionFile:
    """Headerless CSV: one frame per line, ``J*D`` comma-separated values."""
    path = Path(path)
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            vals = [float(v) for v in line.split(",")]
        except ValueError as exc:
            raise MotionFormatError(f"{path}: line {lineno}: {exc}") from exc
        if len(vals) != skeleton.pose_dim:
            raise MotionFormatError(
                f"{path}: line {lineno} (frame {len(rows)}) has {len(vals)} values, "
                f"expected {skeleton.pose_dim}"
            )
        rows.append(vals)
    return MotionFile(skeleton, fps, np.array(rows).reshape(-1, skeleton.pose_dim),
                      class_id=class_id, name=path.stem)


def preprocess(m: MotionFile, tol: float = 1e-12) -> MotionFile:
    """Root-center on frame 0 and divide by the frame-0 skeleton radius.

    The applied offset and scale are recorded in ``meta`` so the transform can
    be inverted with :func:`unpreprocess`. Input already within ``tol`` of
    normalized is returned unchanged, which makes the transform idempotent.
    """
    if m.skeleton.J < 2:
        raise ValueError("preprocess needs at least 2 joints")
    joints = m.skeleton.joints(m.frames)
    root = joints[0, 0].copy()
    scale = float(np.max(np.linalg.norm(joints[0] - root, axis=-1)))
    if scale <= 0.0:
        raise ValueError(f"{m.name or 'motion'}: degenerate skeleton (all joints coincide in frame 0)")
    meta = dict(m.meta)
    if np.max(np.abs(root)) <= tol and abs(scale - 1.0) <= tol:
        meta.setdefault("preprocess", {"offset": [0.0] * m.skeleton.D, "scale": 1.0})
        return m.replace(frames=m.frames.copy(), meta=meta)
    out = (joints - root) / scale
    meta["preprocess"] = {"offset": root.tolist(), "scale": scale}
    return m.replace(frames=out.reshape(len(m), -1), meta=meta)


def unpreprocess(m: MotionFile) -> MotionFile:
    info = m.meta.get("preprocess")
    if info is None:
        return m
    joints = m.skeleton.joints(m.frames) * info["scale"] + np.asarray(info["offset"])
    meta = {k: v for k, v in m.meta.items() if k != "preprocess"}
    return m.replace(frames=joints.reshape(len(m), -1), meta=meta)


def sparse_sample(m: MotionFile, stride: int) -> MotionFile:
    """Keep every ``stride``-th frame starting at 0 and divide fps accordingly."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    return m.replace(frames=m.frames[::stride].copy(), fps=m.fps / stride)


def make_training_windows(m, t: int, k: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Sliding (stride ``t``) pairs of ``t`` input poses and ``k`` target windows.

    Each target has shape ``(k, t, pose_dim)``. Returns an empty list when the
    sequence is shorter than ``t*(k+1)``.
    """
    if t < 1 or k < 1:
        raise ValueError(f"t and k must be >= 1, got t={t}, k={k}")
    frames = m.frames if isinstance(m, MotionFile) else np.atleast_2d(m)
    n = len(frames)
    out = []
    for start in range(0, n - t * (k + 1) + 1, t):
        inp = frames[start : start + t]
        tgt = frames[start + t : start + t * (k + 1)].reshape(k, t, -1)
        out.append((inp.copy(), tgt.copy()))
    return out


def collect_windows(
    files: Sequence[MotionFile], t: int, k: int
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack windows across files: inputs ``(N, t, dim)``, targets ``(N, k, t, dim)``, class ids ``(N,)``.

    Too-short files are skipped and counted in a warning.
    """
    inputs, targets, classes = [], [], []
    skipped = 0
    for m in files:
        wins = make_training_windows(m, t, k)
        if not wins:
            skipped += 1
        for inp, tgt in wins:
            inputs.append(inp)
            targets.append(tgt)
            classes.append(-1 if m.class_id is None else m.class_id)
    if skipped:
        logger.warning("skipped %d sequence(s) shorter than t*(k+1)=%d", skipped, t * (k + 1))
    if not inputs:
        return np.zeros((0, t, 0)), np.zeros((0, k, t, 0)), np.zeros(0, dtype=int)
    return np.stack(inputs), np.stack(targets), np.array(classes)


def _split_by_instance(files_per_class, seed, train_frac=0.8):
    rng = np.random.default_rng(seed)
    train, test = [], []
    for files in files_per_class:
        order = rng.permutation(len(files))
        n_train = int(math.floor(train_frac * len(files) + 1e-9))
        train.extend(files[i] for i in sorted(order[:n_train]))
        test.extend(files[i] for i in sorted(order[n_train:]))
    return train, test


def make_synthetic_dataset(
    n_classes: int,
    n_per_class: int,
    length: int,
    skeleton: Optional[SkeletonSpec] = None,
    seed: int = 0,
    fps: float = 12.5,
    jitter: float = 0.03,
) -> DatasetSplit:
    """Seeded multi-class oscillation dataset.

    Every joint of class ``c`` follows ``rest + A_c * sin(2*pi*f_c*n + phi_c)``.
    Class frequencies are spread evenly (0.04 + 0.03*c cycles per frame) and
    amplitudes/phases are class-specific draws; each instance perturbs them by
    a relative ``jitter``. 80% of each class's instances go to train.
    """
    if n_classes < 1:
        raise ValueError("n_classes must be >= 1")
    skeleton = skeleton or stick_figure()
    rest = rest_pose(skeleton)
    names = [f"class{c}" for c in range(n_classes)]
    n = np.arange(length)[:, None, None]
    per_class = []
    for c in range(n_classes):
        crng = np.random.default_rng([seed, c])
        freq = 0.04 + 0.03 * c
        amp = crng.uniform(0.05, 0.3, size=(skeleton.J, skeleton.D))
        phase = crng.uniform(0.0, 2.0 * np.pi, size=(skeleton.J, skeleton.D))
        files = []
        for i in range(n_per_class):
            irng = np.random.default_rng([seed, c, i])
            f_i = freq * (1.0 + jitter * irng.standard_normal())
            a_i = amp * (1.0 + jitter * irng.standard_normal(amp.shape))
            p_i = phase + 2.0 * np.pi * jitter * irng.standard_normal(phase.shape)
            joints = rest + a_i * np.sin(2.0 * np.pi * f_i * n + p_i)
            files.append(
                MotionFile(skeleton, fps, joints.reshape(length, -1), class_id=c,
                           class_names=list(names), name=f"c{c:02d}_i{i:03d}")
            )
        per_class.append(files)
    train, test = _split_by_instance(per_class, seed)
    return DatasetSplit(train, test, seed)


def make_rotating_arm_dataset(
    n_sequences: int,
    length: int,
    seed: int = 0,
    fps: float = 30.0,
    speed_range: Tuple[float, float] = (0.15, 0.35),
) -> DatasetSplit:
    """Rigid two-segment arm whose joints rotate at constant angular rates.

    Bone lengths are exactly constant, so any bone-length variation in a
    reconstruction comes from the reconstruction itself.
    """
    spec = arm()
    rng = np.random.default_rng(seed)
    files = []
    n = np.arange(length)
    for i in range(n_sequences):
        th0, ps0 = rng.uniform(0.0, 2.0 * np.pi, size=2)
        w1 = rng.uniform(*speed_range) * rng.choice([-1.0, 1.0])
        w2 = rng.uniform(*speed_range) * rng.choice([-1.0, 1.0])
        upper, fore = 1.0, 0.8
        th = th0 + w1 * n
        ps = ps0 + w2 * n
        elbow = upper * np.stack([np.cos(th), np.sin(th)], axis=1)
        wrist = elbow + fore * np.stack([np.cos(th + ps), np.sin(th + ps)], axis=1)
        joints = np.stack([np.zeros_like(elbow), elbow, wrist], axis=1)
        files.append(MotionFile(spec, fps, joints.reshape(length, -1), name=f"arm_{i:03d}"))
    train, test = _split_by_instance([files], seed)
    return DatasetSplit(train, test, seed)


def save_split(split: DatasetSplit, out_dir) -> List[Path]:
    """Write one motion file per sequence plus ``manifest.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for m in split.train + split.test:
        p = out_dir / f"{m.name}.json"
        save_motion(m, p)
        written.append(p)
    manifest = {
        "version": FORMAT_VERSION,
        "seed": split.seed,
        "train": [m.name for m in split.train],
        "test": [m.name for m in split.test],
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    return written


def load_split(data_dir) -> DatasetSplit:
    """Read a directory written by :func:`save_split`.

    Without a manifest every ``*.json`` motion file goes to ``train``.
    """
    data_dir = Path(data_dir)
    manifest_path = data_dir / "manifest.json"
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        train = [load_motion(data_dir / f"{name}.json") for name in manifest["train"]]
        test = [load_motion(data_dir / f"{name}.json") for name in manifest["test"]]
        return DatasetSplit(train, test, int(manifest.get("seed", 0)))
    files = [load_motion(p) for p in sorted(data_dir.glob("*.json"))]
    return DatasetSplit(files, [], 0)
