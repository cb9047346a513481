"""Joint and motion-flow losses, MMD metrics, per-frame error and bone diagnostics.

Sequences are ``(n, pose_dim)`` arrays. Loss functions come in two flavours:
plain numpy (reporting, both ``l2`` and ``squared`` modes) and graph builders
over :mod:`glocalnet.autodiff` nodes (training, ``squared`` mode).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist, pdist

from . import autodiff as ad
from .autodiff import Node
from .skeleton import SkeletonSpec

LOSS_MODES = ("l2", "squared")


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 1.0

    def __post_init__(self):
        for name in ("lambda1", "lambda2"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


def _pair(pred, gt, min_len: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    gt = np.atleast_2d(np.asarray(gt, dtype=np.float64))
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    if pred.shape[0] < min_len:
        raise ValueError(f"need at least {min_len} frames, got {pred.shape[0]}")
    return pred, gt


def _frame_norms(diff: np.ndarray, mode: str) -> float:
    if mode not in LOSS_MODES:
        raise ValueError(f"unknown loss mode {mode!r}; expected one of {LOSS_MODES}")
    sq = np.sum(diff * diff, axis=-1)
    return float(np.sum(sq if mode == "squared" else np.sqrt(sq)))


def joint_loss(pred, gt, mode: str = "squared") -> float:
    """Sum over frames of the pose-vector distance (``l2``) or its square."""
    pred, gt = _pair(pred, gt)
    return _frame_norms(pred - gt, mode)


def motion_flow(seq) -> np.ndarray:
    """Frame-to-frame differences ``X[i+1] - X[i]``; ``n`` frames give ``n-1`` flows."""
    seq = np.atleast_2d(np.asarray(seq, dtype=np.float64))
    if seq.shape[0] < 2:
        raise ValueError(f"motion flow needs at least 2 frames, got {seq.shape[0]}")
    return np.diff(seq, axis=0)


def motion_flow_loss(pred, gt, mode: str = "squared") -> float:
    pred, gt = _pair(pred, gt, min_len=2)
    return _frame_norms(motion_flow(pred) - motion_flow(gt), mode)


def combined_loss(pred, gt, w: LossWeights = LossWeights(), mode: str = "squared") -> float:
    return w.lambda1 * joint_loss(pred, gt, mode) + w.lambda2 * motion_flow_loss(pred, gt, mode)


# graph versions, squared mode; each frame node is (pose_dim, B), targets are arrays


def graph_joint_loss(pred: Sequence[Node], gt: Sequence[np.ndarray]) -> Node:
    terms = [ad.sq_norm(ad.sub(p, g)) for p, g in zip(pred, gt)]
    total = terms[0]
    for term in terms[1:]:
        total = ad.add(total, term)
    return total


def graph_flow_loss(pred: Sequence, gt: Sequence[np.ndarray]) -> Node:
    if len(pred) < 2:
        raise ValueError("motion flow loss needs at least 2 frames")
    tape = ad.tape_of(pred)
    total = None
    for i in range(len(pred) - 1):
        v_pred = ad.sub(ad.lift(tape, pred[i + 1]), pred[i])
        v_gt = np.asarray(gt[i + 1]) - np.asarray(gt[i])
        term = ad.sq_norm(ad.sub(v_pred, v_gt))
        total = term if total is None else ad.add(total, term)
    return total


def graph_combined_loss(pred: Sequence, gt: Sequence[np.ndarray], w: LossWeights) -> Node:
    """``lambda1 * L_J + lambda2 * L_MF`` in squared mode, summed over the batch."""
    if len(pred) != len(gt):
        raise ValueError(f"prediction length {len(pred)} != target length {len(gt)}")
    tape = ad.tape_of(pred)
    pred = [ad.lift(tape, p) for p in pred]
    loss = ad.scale(graph_joint_loss(pred, gt), w.lambda1)
    if w.lambda2 != 0.0 and len(pred) >= 2:
        loss = ad.add(loss, ad.scale(graph_flow_loss(pred, gt), w.lambda2))
    return loss


# --- MMD ---------------------------------------------------------------------


@dataclass(frozen=True)
class MmdConfig:
    """RBF-mixture MMD settings.

    ``bandwidths=None`` selects the median heuristic on the pooled sample:
    ``{m/2, m, 2m}`` with ``m`` the median pairwise distance.
    """

    bandwidths: Optional[Tuple[float, ...]] = None
    estimator: str = "biased"

    def __post_init__(self):
        if self.estimator not in ("biased", "unbiased"):
            raise ValueError(f"unknown MMD estimator {self.estimator!r}")
        if self.bandwidths is not None:
            bws = tuple(float(b) for b in self.bandwidths)
            if not bws or any(not np.isfinite(b) or b <= 0 for b in bws):
                raise ValueError(f"bandwidths must be a non-empty list of positive reals, got {bws}")
            object.__setattr__(self, "bandwidths", bws)


def _as_samples(X, name: str) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError(f"{name}: expected a non-empty (n, d) sample array, got shape {X.shape}")
    return X


def median_bandwidths(pooled: np.ndarray) -> Tuple[float, float, float]:
    d = pdist(pooled) if len(pooled) > 1 else np.zeros(1)
    med = float(np.median(d))
    if med <= 0.0 or not np.isfinite(med):
        med = 1.0
    return (med / 2.0, med, 2.0 * med)


def resolve_bandwidths(A, B, cfg: MmdConfig = MmdConfig()) -> Tuple[float, ...]:
    if cfg.bandwidths is not None:
        return cfg.bandwidths
    return median_bandwidths(np.concatenate([_as_samples(A, "A"), _as_samples(B, "B")]))


def rbf_mixture(X: np.ndarray, Y: np.ndarray, bandwidths: Sequence[float]) -> np.ndarray:
    sq = cdist(X, Y, "sqeuclidean")
    return sum(np.exp(-sq / (2.0 * bw * bw)) for bw in bandwidths)


def mmd2(A, B, cfg: MmdConfig = MmdConfig()) -> float:
    """Squared MMD between sample sets ``A`` (m, d) and ``B`` (n, d)."""
    A = _as_samples(A, "A")
    B = _as_samples(B, "B")
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"sample widths differ: {A.shape[1]} vs {B.shape[1]}")
    bws = resolve_bandwidths(A, B, cfg)
    m, n = len(A), len(B)
    Kaa = rbf_mixture(A, A, bws)
    Kbb = rbf_mixture(B, B, bws)
    Kab = rbf_mixture(A, B, bws)
    if cfg.estimator == "biased":
        return float(Kaa.mean() + Kbb.mean() - 2.0 * Kab.mean())
    if m < 2 or n < 2:
        raise ValueError("unbiased MMD needs at least 2 samples per set")
    saa = (Kaa.sum() - np.trace(Kaa)) / (m * (m - 1))
    sbb = (Kbb.sum() - np.trace(Kbb)) / (n * (n - 1))
    return float(saa + sbb - 2.0 * Kab.mean())


def _stack_sequences(seqs, name: str) -> np.ndarray:
    arrs = [np.atleast_2d(np.asarray(s, dtype=np.float64)) for s in seqs]
    if not arrs:
        raise ValueError(f"{name}: empty sequence set")
    shapes = {a.shape for a in arrs}
    if len(shapes) != 1:
        raise ValueError(f"{name}: ragged sequence shapes {sorted(shapes)}")
    return np.stack(arrs)


def _aligned(setA, setB) -> Tuple[np.ndarray, np.ndarray]:
    A = _stack_sequences(setA, "setA")
    B = _stack_sequences(setB, "setB")
    if A.shape[1:] != B.shape[1:]:
        raise ValueError(f"sequence shapes differ between sets: {A.shape[1:]} vs {B.shape[1:]}")
    return A, B


def mmd_avg(setA, setB, cfg: MmdConfig = MmdConfig()) -> float:
    """Mean over frames of the per-frame MMD."""
    A, B = _aligned(setA, setB)
    T = A.shape[1]
    return float(sum(mmd2(A[:, k], B[:, k], cfg) for k in range(T)) / T)


def mmd_seq(setA, setB, cfg: MmdConfig = MmdConfig()) -> float:
    """MMD between whole sequences flattened to ``T * pose_dim`` vectors."""
    A, B = _aligned(setA, setB)
    return mmd2(A.reshape(len(A), -1), B.reshape(len(B), -1), cfg)


# --- per-frame error and skeleton diagnostics ---------------------------------


def euclid_per_frame(pred, gt, spec: SkeletonSpec) -> Tuple[np.ndarray, float]:
    """Mean per-joint Euclidean distance for each frame, and its mean over frames."""
    pred, gt = _pair(pred, gt)
    d = np.linalg.norm(spec.joints(pred) - spec.joints(gt), axis=-1)
    per_frame = d.mean(axis=1)
    return per_frame, float(per_frame.mean())


def bone_lengths(seq, spec: SkeletonSpec) -> np.ndarray:
    """``(n_frames, n_bones)`` bone lengths."""
    if not spec.bones:
        raise ValueError("skeleton has no bones")
    joints = spec.joints(np.atleast_2d(seq))
    a = np.array([b[0] for b in spec.bones])
    b = np.array([b[1] for b in spec.bones])
    return np.linalg.norm(joints[:, a] - joints[:, b], axis=-1)


def bone_length_stats(seq, spec: SkeletonSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Per-bone mean length and standard deviation over frames."""
    lengths = bone_lengths(seq, spec)
    return lengths.mean(axis=0), lengths.std(axis=0)


def mean_flow_discrepancy(pred, gt) -> float:
    """Mean over flow vectors of ``||V_pred - V_gt||``."""
    pred, gt = _pair(pred, gt, min_len=2)
    diff = motion_flow(pred) - motion_flow(gt)
    return float(np.linalg.norm(diff, axis=-1).mean())


def horizon_frames(horizons_ms: Sequence[float], fps: float) -> List[int]:
    """Milliseconds to frame indices, rounding to the nearest frame."""
    if fps <= 0:
        raise ValueError("fps must be positive")
    return [int(np.floor(ms * fps / 1000.0 + 0.5)) for ms in horizons_ms]
