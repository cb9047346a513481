"""Two-stage synthesis: sparse class-conditioned rollout, then interpolation and refinement.

Pose sequences are ``(n, pose_dim)`` float64 arrays throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Node, ShapeError, Tape
from .recurrent import Seq2SeqParams, encode, seq2seq_nodes

CONVENTIONS = ("forward_interior", "literal_eq3")


@dataclass
class MotionModel:
    """A sequence-to-sequence network plus the window it was trained for.

    For the sparse generator ``n_classes`` is the width of the class indicator
    appended to every pose; the refiner has ``n_classes == 0``. With
    ``use_class_prior`` off the indicator channel is fed zeros.
    """

    params: Seq2SeqParams
    window: int
    n_classes: int = 0
    use_class_prior: bool = True

    def __post_init__(self):
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        if self.params.input_dim != self.params.pose_dim + self.n_classes:
            raise ShapeError(
                f"encoder input width {self.params.input_dim} != pose_dim "
                f"{self.params.pose_dim} + classes {self.n_classes}"
            )

    @property
    def pose_dim(self) -> int:
        return self.params.pose_dim

    @classmethod
    def create(cls, pose_dim: int, window: int, n_classes: int = 0, hidden: int = 100,
               dropout_p: float = 0.25, seed: int = 0, use_class_prior: bool = True) -> "MotionModel":
        params = Seq2SeqParams.init(pose_dim + n_classes, pose_dim, hidden, dropout_p, seed)
        return cls(params, window, n_classes, use_class_prior)


@dataclass(frozen=True)
class PaceConfig:
    M: int = 4
    convention: str = "forward_interior"

    def __post_init__(self):
        if self.M < 0:
            raise ValueError(f"M must be >= 0, got {self.M}")
        if self.convention not in CONVENTIONS:
            raise ValueError(f"unknown interpolation convention {self.convention!r}")


class Trajectory(NamedTuple):
    frames: np.ndarray
    boundaries: List[int]  # start index of every segment after the first
    frame_classes: np.ndarray


def one_hot(class_ids, n_classes: int) -> np.ndarray:
    """``(C, B)`` indicator columns for a batch of class ids."""
    ids = np.atleast_1d(np.asarray(class_ids, dtype=int))
    if np.any(ids < 0) or np.any(ids >= n_classes):
        raise ValueError(f"class id(s) {ids[(ids < 0) | (ids >= n_classes)].tolist()} outside [0, {n_classes})")
    out = np.zeros((n_classes, len(ids)))
    out[ids, np.arange(len(ids))] = 1.0
    return out


def _check_window(window: np.ndarray, model: MotionModel, what: str) -> np.ndarray:
    window = np.atleast_2d(np.asarray(window, dtype=np.float64))
    if window.shape[0] != model.window:
        raise ValueError(f"{what}: window has {window.shape[0]} poses, model expects {model.window}")
    if window.shape[1] != model.pose_dim:
        raise ShapeError(f"{what}: pose width {window.shape[1]} != model pose_dim {model.pose_dim}")
    return window


def prior_columns(class_ids, model: MotionModel) -> Optional[np.ndarray]:
    if model.n_classes == 0:
        return None
    prior = one_hot(class_ids, model.n_classes)
    return prior if model.use_class_prior else np.zeros_like(prior)


def conditioned_inputs(poses: Sequence, prior: Optional[np.ndarray]) -> List:
    """Append the class channel to each ``(pose_dim, B)`` step."""
    if prior is None:
        return list(poses)
    tape = ad.tape_of(poses)
    return [ad.concat([ad.lift(tape, p), prior], axis=0) for p in poses]


def window_nodes(poses: Sequence, class_ids, model: MotionModel, params=None,
                 train_mode: bool = False, rng=None) -> List[Node]:
    """One generator step on a batch: ``t`` nodes of shape ``(pose_dim, B)``."""
    params = model.params if params is None else params
    inputs = conditioned_inputs(poses, prior_columns(class_ids, model))
    return seq2seq_nodes(inputs, params, train_mode, rng)


def glogen_step(window, class_id: int, model: MotionModel) -> np.ndarray:
    """Predict the next ``t`` poses from ``t`` poses under a class prior."""
    window = _check_window(window, model, "glogen_step")
    tape = Tape()
    poses = [tape.constant(p[:, None]) for p in window]
    outs = window_nodes(poses, [class_id], model)
    return np.stack([o.value[:, 0] for o in outs])


def glogen_rollout(seed, class_id: int, k: int, model: MotionModel) -> np.ndarray:
    """``k`` chained steps; returns the ``t*k`` generated poses (seed excluded)."""
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    window = _check_window(seed, model, "glogen_rollout")
    out = []
    for _ in range(k):
        window = glogen_step(window, class_id, model)
        out.append(window)
    if not out:
        return np.zeros((0, model.pose_dim))
    return np.concatenate(out)


def multi_activity_rollout(seed, schedule: Sequence[Tuple[int, int]], model: MotionModel) -> Trajectory:
    """Chain per-class rollouts; each segment is seeded with the last ``t`` poses so far."""
    if not schedule:
        raise ValueError("schedule must be non-empty")
    for class_id, k in schedule:
        if k < 1:
            raise ValueError(f"schedule iterations must be >= 1, got {k} for class {class_id}")
    t = model.window
    window = _check_window(seed, model, "multi_activity_rollout")
    segments, classes, boundaries = [], [], []
    total = 0
    for j, (class_id, k) in enumerate(schedule):
        if j > 0:
            boundaries.append(total)
            window = np.concatenate(segments)[-t:]
        seg = glogen_rollout(window, class_id, k, model)
        segments.append(seg)
        classes.append(np.full(len(seg), class_id))
        total += len(seg)
    return Trajectory(np.concatenate(segments), boundaries, np.concatenate(classes))


def interpolate_pair(a, b, M: int, convention: str = "forward_interior") -> np.ndarray:
    """``M`` poses between ``a`` and ``b``.

    ``forward_interior`` gives ``(1 - j/(M+1)) a + j/(M+1) b`` for ``j = 1..M``.
    ``literal_eq3`` gives ``(j/M) a + (1 - j/M) b``, which ends exactly on ``a``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"interpolate_pair: shapes {a.shape} and {b.shape} differ")
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown interpolation convention {convention!r}")
    if M <= 0:
        return np.zeros((0,) + a.shape)
    j = np.arange(1, M + 1, dtype=np.float64).reshape((M,) + (1,) * a.ndim)
    if convention == "literal_eq3":
        alpha = j / M
        return alpha * a + (1.0 - alpha) * b
    beta = j / (M + 1)
    return (1.0 - beta) * a + beta * b


def densify(sparse, pace: PaceConfig = PaceConfig()) -> np.ndarray:
    """Insert ``M`` interpolated poses between adjacent anchors.

    Anchor ``i`` lands at dense index ``i*(M+1)``; the length is ``S + (S-1)*M``.
    """
    sparse = np.atleast_2d(np.asarray(sparse, dtype=np.float64))
    S, M = len(sparse), pace.M
    if M == 0:
        return sparse.copy()
    if S < 2:
        raise ValueError(f"densify needs at least 2 sparse poses when M > 0, got {S}")
    dense = np.empty((S + (S - 1) * M, sparse.shape[1]))
    dense[:: M + 1] = sparse
    j = np.arange(1, M + 1, dtype=np.float64)[:, None, None]
    a, b = sparse[:-1][None], sparse[1:][None]
    if pace.convention == "literal_eq3":
        alpha = j / M
        inner = alpha * a + (1.0 - alpha) * b
    else:
        beta = j / (M + 1)
        inner = (1.0 - beta) * a + beta * b
    # inner is (M, S-1, dim); span s occupies dense rows s*(M+1)+1 .. s*(M+1)+M
    rows = (np.arange(S - 1)[None, :] * (M + 1) + np.arange(1, M + 1)[:, None])
    dense[rows] = inner
    return dense


def refine_windows(windows: np.ndarray, model: MotionModel) -> np.ndarray:
    """Batch refinement of ``(N, L, dim)`` windows with the end poses pinned."""
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 3 or windows.shape[1] != model.window:
        raise ValueError(
            f"locgen: windows of shape {windows.shape} do not have length {model.window}"
        )
    if windows.shape[2] != model.pose_dim:
        raise ShapeError(f"locgen: pose width {windows.shape[2]} != model pose_dim {model.pose_dim}")
    if len(windows) == 0:
        return windows.copy()
    tape = Tape()
    steps = [tape.constant(windows[:, i, :].T) for i in range(windows.shape[1])]
    outs = window_nodes(steps, None, model)
    refined = np.stack([o.value.T for o in outs], axis=1)
    refined[:, 0] = windows[:, 0]
    refined[:, -1] = windows[:, -1]
    return refined


def locgen_refine(window, model: MotionModel) -> np.ndarray:
    """Refine one interpolated span; first and last poses keep the anchors."""
    window = _check_window(window, model, "locgen_refine")
    return refine_windows(window[None], model)[0]


def refine_dense(dense, M: int, model: MotionModel) -> np.ndarray:
    """Refine every anchor-to-anchor span (length ``M+2``) of a densified sequence."""
    dense = np.atleast_2d(np.asarray(dense, dtype=np.float64))
    if M == 0:
        return dense.copy()
    L = M + 2
    n_spans = (len(dense) - 1) // (M + 1)
    starts = np.arange(n_spans) * (M + 1)
    windows = np.stack([dense[s : s + L] for s in starts])
    refined = refine_windows(windows, model)
    out = dense.copy()
    for s, w in zip(starts, refined):
        out[s + 1 : s + L - 1] = w[1:-1]
    return out


def synthesize(
    seed,
    class_id: int,
    k: int,
    pace: PaceConfig,
    glogen: MotionModel,
    locgen: Optional[MotionModel] = None,
) -> np.ndarray:
    """Sparse rollout, densify, then refine each span if a refiner is given."""
    sparse = glogen_rollout(seed, class_id, k, glogen)
    return densify_and_refine(sparse, pace, locgen)


def densify_and_refine(sparse, pace: PaceConfig, locgen: Optional[MotionModel] = None) -> np.ndarray:
    dense = densify(sparse, pace)
    if locgen is None or pace.M == 0:
        return dense
    if locgen.window != pace.M + 2:
        raise ValueError(
            f"refiner was trained for M={locgen.window - 2}, cannot refine with M={pace.M}"
        )
    return refine_dense(dense, pace.M, locgen)


def export_embeddings(sequences: Sequence[Tuple[np.ndarray, Optional[int]]], model: MotionModel,
                      names: Optional[Sequence[str]] = None) -> np.ndarray:
    """Concatenated encoder states over each sequence's first window.

    Args:
        sequences: ``(frames, class_id)`` pairs; ``class_id`` may be ``None``
            for a refiner-style model without a class channel.
        model: The generator whose encoder is read.
        names: Optional labels used in error messages.

    Returns:
        ``(N, t * 2 * h_enc)`` matrix.
    """
    t = model.window
    firsts, classes = [], []
    for idx, (frames, class_id) in enumerate(sequences):
        frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
        if len(frames) < t:
            label = names[idx] if names is not None else f"sequence {idx}"
            raise ValueError(f"{label} has {len(frames)} poses, needs at least {t}")
        firsts.append(frames[:t])
        classes.append(0 if class_id is None else class_id)
    if not firsts:
        return np.zeros((0, t * 2 * model.params.encoder.h))
    batch = np.stack(firsts)  # (N, t, dim)
    tape = Tape()
    steps = [tape.constant(batch[:, i, :].T) for i in range(t)]
    prior = prior_columns(classes, model)
    params, _ = model.params.bind(tape, constant=True)
    states = encode(conditioned_inputs(steps, prior), params)
    return np.concatenate([s.value.T for s in states], axis=1)
