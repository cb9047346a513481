"""AdamW, the two training loops, and checkpoint persistence.

Checkpoint layout (all integers little-endian)::

    b"GLCLNT\\x00\\x01"        8-byte magic
    u32 version                  currently 1
    u32 n, then n bytes          UTF-8 JSON header: kind, model shape, config,
                                 loss histories, optimizer scalars, array table
    for each array in the table: u64 byte count, then float64 LE data
    u32 crc32 of everything above

The array table lists parameters in :meth:`Seq2SeqParams.arrays` order, then
(when present) the AdamW first moments and second moments in the same order.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .data import DatasetSplit, MotionFile, collect_windows
from .objectives import LossWeights, graph_combined_loss, joint_loss
from .pipeline import MotionModel, PaceConfig, densify, refine_windows, window_nodes
from .recurrent import Seq2SeqParams

logger = logging.getLogger(__name__)

MAGIC = b"GLCLNT\x00\x01"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable, truncated or incompatible checkpoint."""


# --- optimizer ----------------------------------------------------------------


@dataclass
class OptimState:
    lr: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def hyper(self) -> dict:
        return {k: getattr(self, k) for k in ("lr", "beta1", "beta2", "eps", "weight_decay", "step")}


def adamw_step(
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    state: OptimState,
    lr: Optional[float] = None,
) -> Dict[str, np.ndarray]:
    """One decoupled-weight-decay Adam update.

    ``state`` is advanced in place; a new parameter dict is returned.
    ``lr`` overrides ``state.lr`` for this step (learning-rate schedules).
    """
    lr = state.lr if lr is None else lr
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    out = {}
    for name, theta in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        theta = np.asarray(theta, dtype=np.float64)
        if g.shape != theta.shape:
            raise ValueError(f"adamw: gradient shape {g.shape} != parameter shape {theta.shape} for {name}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(theta)
            v = np.zeros_like(theta)
        elif m.shape != theta.shape:
            raise ValueError(f"adamw: moment shape {m.shape} != parameter shape {theta.shape} for {name}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name] = m
        state.v[name] = v
        m_hat = m / c1
        v_hat = v / c2
        out[name] = theta - lr * (m_hat / (np.sqrt(v_hat) + state.eps) + state.weight_decay * theta)
    return out


def clip_global_norm(grads: Dict[str, np.ndarray], max_norm: float) -> Dict[str, np.ndarray]:
    if max_norm is None or max_norm <= 0:
        return grads
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm:
        return grads
    factor = max_norm / total
    return {k: g * factor for k, g in grads.items()}


# --- configuration --------------------------------------------------------------


@dataclass
class TrainConfig:
    t: int = 5
    k: int = 3
    epochs: int = 200
    batch_size: int = 100
    lr: float = 0.002
    dropout_p: float = 0.25
    hidden: int = 100
    lambda1: float = 1.0
    lambda2: float = 1.0
    loss_mode: str = "squared"
    use_class_prior: bool = True
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    clip_norm: float = 5.0
    lr_schedule: str = "constant"
    M: int = 4
    convention: str = "forward_interior"

    def __post_init__(self):
        if self.t < 1 or self.k < 1 or self.batch_size < 1:
            raise ValueError(f"t, k and batch_size must be >= 1 (got {self.t}, {self.k}, {self.batch_size})")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.loss_mode != "squared":
            raise ValueError(
                f"training supports loss_mode='squared' only (got {self.loss_mode!r}); "
                "'l2' is available for reporting"
            )
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")
        LossWeights(self.lambda1, self.lambda2)
        PaceConfig(self.M, self.convention)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda1, self.lambda2)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class TrainResult:
    model: MotionModel
    history: List[float]
    val_history: List[float]
    state: OptimState
    config: TrainConfig
    kind: str


def _epoch_lr(cfg: TrainConfig, epoch: int) -> float:
    if cfg.lr_schedule == "cosine" and cfg.epochs > 0:
        return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * epoch / cfg.epochs))
    return cfg.lr


def _n_classes(files: Sequence[MotionFile]) -> int:
    for m in files:
        if m.class_names:
            return len(m.class_names)
    ids = [m.class_id for m in files if m.class_id is not None]
    return max(ids) + 1 if ids else 1


def _run_epochs(model, cfg, n_items, batch_loss, evaluate, kind) -> TrainResult:
    """Shared minibatch loop; ``batch_loss(bound_params, idx, rng)`` builds the loss node."""
    state = OptimState(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    dropout_rng = np.random.default_rng([cfg.seed, 2])
    history, val_history = [], []
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n_items)
        lr = _epoch_lr(cfg, epoch)
        total = 0.0
        for start in range(0, n_items, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            tape = Tape()
            bound, nodes = model.params.bind(tape)
            loss = batch_loss(bound, idx, dropout_rng)
            loss = ad.scale(loss, 1.0 / len(idx))
            tape.backward(loss)
            grads = clip_global_norm({k: n.grad for k, n in nodes.items()}, cfg.clip_norm)
            new = adamw_step(model.params.arrays(), grads, state, lr)
            model.params = model.params.with_arrays(new)
            total += float(loss.value) * len(idx)
        history.append(total / n_items)
        if evaluate is not None:
            val_history.append(evaluate(model))
        logger.info("%s epoch %d/%d loss %.6g", kind, epoch + 1, cfg.epochs, history[-1])
    return TrainResult(model, history, val_history, state, cfg, kind)


def rollout_nodes(inputs: np.ndarray, classes, model: MotionModel, params=None,
                  train_mode: bool = False, rng=None, k: int = 1):
    """Chained generator steps on a batch ``(B, t, dim)``; returns ``k*t`` nodes ``(dim, B)``."""
    tape = ad.tape_of([params.out_W]) if params is not None and isinstance(params.out_W, ad.Node) else Tape()
    window = [tape.constant(inputs[:, i, :].T) for i in range(inputs.shape[1])]
    preds = []
    for _ in range(k):
        window = window_nodes(window, classes, model, params, train_mode, rng)
        preds.extend(window)
    return preds


def rollout_batch(inputs: np.ndarray, classes, model: MotionModel, k: int) -> np.ndarray:
    """Inference rollout for a batch; returns ``(B, k*t, dim)``."""
    preds = rollout_nodes(inputs, classes, model, k=k)
    return np.stack([p.value.T for p in preds], axis=1)


def glogen_test_error(model: MotionModel, files: Sequence[MotionFile], t: int, k: int) -> float:
    """Mean per-window joint loss (l2 mode) of ``k``-step rollouts on ``files``."""
    inputs, targets, classes = collect_windows(files, t, k)
    if len(inputs) == 0:
        return float("nan")
    pred = rollout_batch(inputs, np.maximum(classes, 0), model, k)
    gt = targets.reshape(len(targets), k * t, -1)
    return float(np.mean([joint_loss(p, g, "l2") for p, g in zip(pred, gt)]))


def train_glogen(split: DatasetSplit, cfg: TrainConfig, n_classes: Optional[int] = None) -> TrainResult:
    """Train the sparse generator with chained ``k``-window rollout supervision."""
    n_classes = n_classes or _n_classes(split.train)
    inputs, targets, classes = collect_windows(split.train, cfg.t, cfg.k)
    if len(inputs) == 0:
        raise ValueError(f"no training windows of length t*(k+1)={cfg.t * (cfg.k + 1)} in the dataset")
    if np.any(classes < 0) and cfg.use_class_prior:
        raise ValueError("class-prior training needs class_id on every training sequence")
    classes = np.maximum(classes, 0)
    pose_dim = inputs.shape[2]
    model = MotionModel.create(pose_dim, cfg.t, n_classes, cfg.hidden, cfg.dropout_p, cfg.seed,
                               cfg.use_class_prior)
    weights = cfg.weights
    t, k = cfg.t, cfg.k

    def batch_loss(bound, idx, rng):
        preds = rollout_nodes(inputs[idx], classes[idx], model, bound, True, rng, k)
        gt = [targets[idx, w, i, :].T for w in range(k) for i in range(t)]
        return graph_combined_loss(preds, gt, weights)

    evaluate = (lambda mdl: glogen_test_error(mdl, split.test, t, k)) if split.test else None
    return _run_epochs(model, cfg, len(inputs), batch_loss, evaluate, "glogen")


def make_locgen_windows(files: Sequence[MotionFile], M: int, convention: str = "forward_interior"
                        ) -> Tuple[np.ndarray, np.ndarray]:
    """Disjoint anchor spans of length ``M+2``: (interpolated input, true frames)."""
    pace = PaceConfig(M, convention)
    L = M + 2
    inputs, targets = [], []
    for m in files:
        for s in range(0, len(m) - L + 1, M + 1):
            true = m.frames[s : s + L]
            inputs.append(densify(true[[0, -1]], pace))
            targets.append(true)
    if not inputs:
        return np.zeros((0, L, 0)), np.zeros((0, L, 0))
    return np.stack(inputs), np.stack(targets)


def train_locgen(split: DatasetSplit, cfg: TrainConfig) -> TrainResult:
    """Train the refiner to map interpolated spans to true dense frames."""
    if cfg.M < 1:
        raise ValueError("refiner training needs M >= 1")
    inputs, targets = make_locgen_windows(split.train, cfg.M, cfg.convention)
    if len(inputs) == 0:
        raise ValueError(f"no sequence has the {cfg.M + 2} frames needed for one refiner window")
    pose_dim = inputs.shape[2]
    L = cfg.M + 2
    model = MotionModel.create(pose_dim, L, 0, cfg.hidden, cfg.dropout_p, cfg.seed)
    weights = cfg.weights

    def batch_loss(bound, idx, rng):
        tape = ad.tape_of([bound.out_W])
        x = inputs[idx]
        steps = [tape.constant(x[:, i, :].T) for i in range(L)]
        outs = window_nodes(steps, None, model, bound, True, rng)
        # anchors are pinned at inference, so they enter the loss as constants
        pred = [steps[0]] + outs[1:-1] + [steps[-1]]
        gt = [targets[idx, i, :].T for i in range(L)]
        return graph_combined_loss(pred, gt, weights)

    test_in, test_gt = make_locgen_windows(split.test, cfg.M, cfg.convention)

    def evaluate(mdl):
        refined = refine_windows(test_in, mdl)
        return float(np.mean([joint_loss(r, g, "l2") for r, g in zip(refined, test_gt)]))

    return _run_epochs(model, cfg, len(inputs), batch_loss, evaluate if len(test_in) else None, "locgen")


# --- checkpoints ----------------------------------------------------------------


@dataclass
class Checkpoint:
    model: MotionModel
    config: TrainConfig
    kind: str = "glogen"
    history: List[float] = field(default_factory=list)
    val_history: List[float] = field(default_factory=list)
    state: Optional[OptimState] = None
    class_names: Optional[List[str]] = None
    version: int = CHECKPOINT_VERSION

    @classmethod
    def from_result(cls, r: TrainResult, class_names: Optional[List[str]] = None) -> "Checkpoint":
        return cls(r.model, r.config, r.kind, list(r.history), list(r.val_history), r.state, class_names)


def _array_table(ckpt: Checkpoint) -> List[Tuple[str, np.ndarray]]:
    params = ckpt.model.params.arrays()
    table = [(f"param/{k}", np.asarray(v, dtype="<f8")) for k, v in params.items()]
    if ckpt.state is not None and ckpt.state.m:
        table += [(f"adam_m/{k}", np.asarray(ckpt.state.m[k], dtype="<f8")) for k in params]
        table += [(f"adam_v/{k}", np.asarray(ckpt.state.v[k], dtype="<f8")) for k in params]
    return table


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    table = _array_table(ckpt)
    model = ckpt.model
    header = {
        "kind": ckpt.kind,
        "model": {
            "window": model.window,
            "n_classes": model.n_classes,
            "use_class_prior": model.use_class_prior,
            "dropout_p": model.params.dropout_p,
        },
        "config": ckpt.config.to_dict(),
        "class_names": ckpt.class_names,
        "history": ckpt.history,
        "val_history": ckpt.val_history,
        "optimizer": None if ckpt.state is None else ckpt.state.hyper(),
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in table],
    }
    blob = json.dumps(header).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", CHECKPOINT_VERSION), struct.pack("<I", len(blob)), blob]
    for _, arr in table:
        data = np.ascontiguousarray(arr).tobytes()
        parts.append(struct.pack("<Q", len(data)))
        parts.append(data)
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(ckpt))


def checkpoint_from_bytes(raw: bytes, source: str = "<bytes>") -> Checkpoint:
    if len(raw) < len(MAGIC) + 12:
        raise CheckpointError(f"{source}: truncated checkpoint ({len(raw)} bytes)")
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint (bad magic)")
    body, crc = raw[:-4], struct.unpack("<I", raw[-4:])[0]
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointError(f"{source}: checksum mismatch (truncated or corrupted)")
    pos = len(MAGIC)
    (version,) = struct.unpack_from("<I", body, pos)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{source}: unsupported checkpoint version {version}")
    (n,) = struct.unpack_from("<I", body, pos + 4)
    pos += 8
    try:
        header = json.loads(body[pos : pos + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{source}: corrupted header: {exc}") from exc
    pos += n
    arrays = {}
    for entry in header["arrays"]:
        (nbytes,) = struct.unpack_from("<Q", body, pos)
        pos += 8
        shape = tuple(entry["shape"])
        if nbytes != 8 * int(np.prod(shape, dtype=np.int64)) or pos + nbytes > len(body):
            raise CheckpointError(f"{source}: array {entry['name']} has inconsistent length")
        arrays[entry["name"]] = np.frombuffer(body, dtype="<f8", count=nbytes // 8, offset=pos).reshape(shape).astype(np.float64)
        pos += nbytes
    if pos != len(body):
        raise CheckpointError(f"{source}: {len(body) - pos} trailing bytes")

    mh = header["model"]
    params = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
    template = Seq2SeqParams.zeros(1, 1, 1)
    template.dropout_p = mh["dropout_p"]
    seq = template.with_arrays(params)
    model = MotionModel(seq, mh["window"], mh["n_classes"], mh["use_class_prior"])
    state = None
    if header["optimizer"] is not None:
        state = OptimState(**header["optimizer"])
        state.m = {k[len("adam_m/"):]: v for k, v in arrays.items() if k.startswith("adam_m/")}
        state.v = {k[len("adam_v/"):]: v for k, v in arrays.items() if k.startswith("adam_v/")}
    return Checkpoint(
        model=model,
        config=TrainConfig.from_dict(header["config"]),
        kind=header["kind"],
        history=list(header["history"]),
        val_history=list(header["val_history"]),
        state=state,
        class_names=header.get("class_names"),
        version=version,
    )


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    return checkpoint_from_bytes(path.read_bytes(), str(path))
