"""LSTM cell, bi-directional LSTM and the all-states sequence-to-sequence block.

Activations are laid out feature-major: a batch of ``B`` vectors of width
``d`` is a ``(d, B)`` array. Gate blocks in the stacked weights are ordered
(input, forget, candidate, output).

Every function here works on :mod:`glocalnet.autodiff` nodes so the same code
path serves inference and training. Parameter leaves may be plain arrays
(inference) or nodes bound to a tape (training, see :meth:`Seq2SeqParams.bind`).
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Node, ShapeError, Tape


@dataclass
class LstmParams:
    W_x: np.ndarray  # (4h, d)
    W_h: np.ndarray  # (4h, h)
    b: np.ndarray  # (4h, 1)

    @property
    def h(self) -> int:
        return ad.value_of(self.W_h).shape[1]

    @property
    def d(self) -> int:
        return ad.value_of(self.W_x).shape[1]

    @classmethod
    def init(cls, d: int, h: int, rng: np.random.Generator) -> "LstmParams":
        bound = 1.0 / np.sqrt(h)
        b = np.zeros((4 * h, 1))
        b[h : 2 * h] = 1.0
        return cls(
            W_x=rng.uniform(-bound, bound, size=(4 * h, d)),
            W_h=rng.uniform(-bound, bound, size=(4 * h, h)),
            b=b,
        )

    @classmethod
    def zeros(cls, d: int, h: int) -> "LstmParams":
        return cls(np.zeros((4 * h, d)), np.zeros((4 * h, h)), np.zeros((4 * h, 1)))


@dataclass
class BiLstmParams:
    fwd: LstmParams
    bwd: LstmParams

    def __post_init__(self):
        if self.fwd.h != self.bwd.h or self.fwd.d != self.bwd.d:
            raise ShapeError(
                f"bilstm: direction shapes differ (d={self.fwd.d}/{self.bwd.d}, "
                f"h={self.fwd.h}/{self.bwd.h})"
            )

    @property
    def h(self) -> int:
        return self.fwd.h

    @property
    def d(self) -> int:
        return self.fwd.d


@dataclass
class Seq2SeqParams:
    encoder: BiLstmParams
    decoder: BiLstmParams
    out_W: np.ndarray  # (pose_dim, 2*h_dec)
    out_b: np.ndarray  # (pose_dim, 1)
    dropout_p: float = 0.25

    def __post_init__(self):
        if self.decoder.d != 2 * self.encoder.h:
            raise ShapeError(
                f"seq2seq: decoder input width {self.decoder.d} != encoder output "
                f"width {2 * self.encoder.h}"
            )
        if ad.value_of(self.out_W).shape[1] != 2 * self.decoder.h:
            raise ShapeError(
                f"seq2seq: out_W shape {ad.value_of(self.out_W).shape} does not take "
                f"decoder width {2 * self.decoder.h}"
            )
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")

    @property
    def input_dim(self) -> int:
        return self.encoder.d

    @property
    def pose_dim(self) -> int:
        return ad.value_of(self.out_W).shape[0]

    @classmethod
    def init(
        cls,
        input_dim: int,
        pose_dim: int,
        hidden: int = 100,
        dropout_p: float = 0.25,
        seed: int = 0,
    ) -> "Seq2SeqParams":
        """Randomly initialise a model.

        ``hidden`` is the per-direction width, so encoder states are ``2*hidden``
        wide (100 gives the 200-wide encoder output).
        """
        rng = np.random.default_rng(seed)
        enc = BiLstmParams(LstmParams.init(input_dim, hidden, rng), LstmParams.init(input_dim, hidden, rng))
        dec = BiLstmParams(LstmParams.init(2 * hidden, hidden, rng), LstmParams.init(2 * hidden, hidden, rng))
        bound = 1.0 / np.sqrt(2 * hidden)
        out_W = rng.uniform(-bound, bound, size=(pose_dim, 2 * hidden))
        return cls(enc, dec, out_W, np.zeros((pose_dim, 1)), dropout_p)

    @classmethod
    def zeros(cls, input_dim: int, pose_dim: int, hidden: int) -> "Seq2SeqParams":
        enc = BiLstmParams(LstmParams.zeros(input_dim, hidden), LstmParams.zeros(input_dim, hidden))
        dec = BiLstmParams(LstmParams.zeros(2 * hidden, hidden), LstmParams.zeros(2 * hidden, hidden))
        return cls(enc, dec, np.zeros((pose_dim, 2 * hidden)), np.zeros((pose_dim, 1)), 0.0)

    def arrays(self) -> Dict[str, np.ndarray]:
        """Parameter arrays keyed by dotted name, in the canonical order."""
        out = {}
        for part in ("encoder", "decoder"):
            bi = getattr(self, part)
            for direction in ("fwd", "bwd"):
                cell = getattr(bi, direction)
                for f in fields(LstmParams):
                    out[f"{part}.{direction}.{f.name}"] = getattr(cell, f.name)
        out["out_W"] = self.out_W
        out["out_b"] = self.out_b
        return out

    def with_arrays(self, arrays: Dict[str, object]) -> "Seq2SeqParams":
        """Rebuild with leaves taken from ``arrays`` (same keys as :meth:`arrays`)."""
        parts = {}
        for part in ("encoder", "decoder"):
            cells = {}
            for direction in ("fwd", "bwd"):
                cells[direction] = LstmParams(
                    **{f.name: arrays[f"{part}.{direction}.{f.name}"] for f in fields(LstmParams)}
                )
            parts[part] = BiLstmParams(**cells)
        return Seq2SeqParams(
            parts["encoder"], parts["decoder"], arrays["out_W"], arrays["out_b"], self.dropout_p
        )

    def bind(self, tape: Tape, constant: bool = False) -> Tuple["Seq2SeqParams", Dict[str, Node]]:
        """Register every array as a leaf on ``tape``; returns the bound copy and the name map.

        ``constant=True`` skips gradient tracking (inference).
        """
        leaf = tape.constant if constant else tape.input
        nodes = {name: leaf(arr) for name, arr in self.arrays().items()}
        return self.with_arrays(nodes), nodes

    def copy(self) -> "Seq2SeqParams":
        return self.with_arrays({k: np.array(v, dtype=np.float64) for k, v in self.arrays().items()})


def _as_column(x) -> Tuple[object, bool]:
    if isinstance(x, Node):
        return x, False
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        return arr[:, None], True
    return arr, False


def lstm_cell(x, h_prev, c_prev, p: LstmParams) -> Tuple[Node, Node]:
    """One LSTM step.

    ``x`` is ``(d, B)`` (or ``(d,)``); ``h_prev``/``c_prev`` are ``(h, B)``.
    Returns node pair ``(h, c)``; 1-D inputs are treated as a batch of one and
    the returned nodes keep the ``(h, 1)`` layout.
    """
    x, h_prev, c_prev = (_as_column(v)[0] for v in (x, h_prev, c_prev))
    tape = ad.tape_of([x, h_prev, c_prev, p.W_x, p.W_h, p.b])
    x, h_prev, c_prev = (ad.lift(tape, v) for v in (x, h_prev, c_prev))
    p = _bind_cell(p, tape)
    h = p.h
    if ad.value_of(x).shape[0] != p.d:
        raise ShapeError(f"lstm_cell: input width {ad.value_of(x).shape[0]} != d={p.d}")
    if ad.value_of(h_prev).shape[0] != h or ad.value_of(c_prev).shape[0] != h:
        raise ShapeError(
            f"lstm_cell: state shapes {ad.value_of(h_prev).shape}/{ad.value_of(c_prev).shape} "
            f"do not match h={h}"
        )
    z = ad.add(ad.add(ad.matmul(p.W_x, x), ad.matmul(p.W_h, h_prev)), p.b)
    i = ad.sigmoid(ad.slice_(z, 0, h))
    f = ad.sigmoid(ad.slice_(z, h, 2 * h))
    g = ad.tanh(ad.slice_(z, 2 * h, 3 * h))
    o = ad.sigmoid(ad.slice_(z, 3 * h, 4 * h))
    c = ad.add(ad.hadamard(f, c_prev), ad.hadamard(i, g))
    h_new = ad.hadamard(o, ad.tanh(c))
    return h_new, c


def _bind_cell(p: LstmParams, tape: Tape) -> LstmParams:
    return LstmParams(*(ad.lift(tape, getattr(p, f.name)) for f in fields(LstmParams)))


def _scan(seq: Sequence, p: LstmParams, reverse: bool) -> List[Node]:
    batch = ad.value_of(seq[0]).shape[1]
    h = np.zeros((p.h, batch))
    c = np.zeros((p.h, batch))
    order = range(len(seq) - 1, -1, -1) if reverse else range(len(seq))
    out: List[Optional[Node]] = [None] * len(seq)
    for k in order:
        h, c = lstm_cell(seq[k], h, c, p)
        out[k] = h
    return out


def bilstm(seq: Sequence, p: BiLstmParams) -> List[Node]:
    """Run both directions from zero state; element k is ``[fwd_k; bwd_k]``."""
    if len(seq) == 0:
        raise ValueError("bilstm: empty sequence")
    seq = [_as_column(x)[0] for x in seq]
    tape = ad.tape_of(list(seq) + [p.fwd.W_x, p.bwd.W_x])
    seq = [ad.lift(tape, x) for x in seq]
    p = BiLstmParams(_bind_cell(p.fwd, tape), _bind_cell(p.bwd, tape))
    widths = {ad.value_of(x).shape for x in seq}
    if len(widths) != 1:
        raise ShapeError(f"bilstm: non-uniform element shapes {sorted(widths)}")
    fwd = _scan(seq, p.fwd, reverse=False)
    bwd = _scan(seq, p.bwd, reverse=True)
    return [ad.concat([a, b], axis=0) for a, b in zip(fwd, bwd)]


def _dropout(x: Node, p: float, rng: np.random.Generator) -> Node:
    mask = (rng.random(x.value.shape) >= p) / (1.0 - p)
    return ad.hadamard(x, mask)


def encode(input_seq: Sequence, p: Seq2SeqParams) -> List[Node]:
    if len(input_seq) == 0:
        raise ValueError("seq2seq: empty input sequence")
    return bilstm(input_seq, p.encoder)


def seq2seq_nodes(
    input_seq: Sequence,
    p: Seq2SeqParams,
    train_mode: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> List[Node]:
    """Graph-building forward pass; returns one ``(pose_dim, B)`` node per input step.

    The decoder reads the whole encoder state sequence, so output length always
    equals input length.
    """
    tape = ad.tape_of(list(input_seq) + [p.out_W])
    if not isinstance(p.out_W, Node):
        p = p.bind(tape, constant=True)[0]
    input_seq = [ad.lift(tape, _as_column(x)[0]) for x in input_seq]
    states = encode(input_seq, p)
    drop = train_mode and p.dropout_p > 0.0
    if drop:
        rng = rng if rng is not None else np.random.default_rng()
        states = [_dropout(s, p.dropout_p, rng) for s in states]
    dec = bilstm(states, p.decoder)
    if drop:
        dec = [_dropout(s, p.dropout_p, rng) for s in dec]
    return [ad.add(ad.matmul(p.out_W, s), p.out_b) for s in dec]


def seq2seq_forward(
    input_seq: Sequence[np.ndarray],
    p: Seq2SeqParams,
    train_mode: bool = False,
    rng_seed: Optional[int] = None,
) -> List[np.ndarray]:
    """Array-in, array-out forward pass.

    Args:
        input_seq: ``t`` vectors of width ``p.input_dim`` (or ``(d, B)`` batches).
        p: Model parameters.
        train_mode: Apply dropout masks drawn from ``rng_seed``.
        rng_seed: Seed for dropout; ignored in inference mode.

    Returns:
        ``t`` predicted poses, 1-D if the inputs were 1-D.
    """
    if len(input_seq) == 0:
        raise ValueError("seq2seq: empty input sequence")
    squeeze = np.asarray(ad.value_of(input_seq[0])).ndim == 1
    rng = np.random.default_rng(rng_seed) if train_mode else None
    outs = seq2seq_nodes(input_seq, p, train_mode, rng)
    return [o.value[:, 0].copy() if squeeze else o.value for o in outs]
