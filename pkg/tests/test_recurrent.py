import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from glocalnet import autodiff as ad
from glocalnet.autodiff import ShapeError, Tape, grad_check
from glocalnet.recurrent import (
    BiLstmParams,
    LstmParams,
    Seq2SeqParams,
    bilstm,
    lstm_cell,
    seq2seq_forward,
    seq2seq_nodes,
)


def reference_cell(x, h, c, W_x, W_h, b):
    """Direct transcription of the cell equations, gates stacked (i, f, g, o)."""
    n = h.shape[0]
    Wi, Wf, Wg, Wo = (W_x[k * n : (k + 1) * n] for k in range(4))
    Ui, Uf, Ug, Uo = (W_h[k * n : (k + 1) * n] for k in range(4))
    bi, bf, bg, bo = (b[k * n : (k + 1) * n] for k in range(4))
    i = expit(Wi @ x + Ui @ h + bi)
    f = expit(Wf @ x + Uf @ h + bf)
    g = np.tanh(Wg @ x + Ug @ h + bg)
    o = expit(Wo @ x + Uo @ h + bo)
    c_new = f * c + i * g
    return o * np.tanh(c_new), c_new


def random_cell(d, h, seed):
    rng = np.random.default_rng(seed)
    return LstmParams(rng.normal(size=(4 * h, d)), rng.normal(size=(4 * h, h)), rng.normal(size=(4 * h, 1)))


def test_zero_params_zero_state():
    h, c = lstm_cell(np.ones(3), np.zeros(2), np.zeros(2), LstmParams.zeros(3, 2))
    np.testing.assert_array_equal(h.value, 0.0)
    np.testing.assert_array_equal(c.value, 0.0)


def test_saturated_forget_gate_keeps_cell():
    p = LstmParams.zeros(3, 2)
    p.b[2:4] = 100.0
    c_prev = np.array([[0.7], [-1.3]])
    h, c = lstm_cell(np.ones(3), np.zeros(2), c_prev, p)
    assert np.max(np.abs(c.value - c_prev)) < 1e-10
    np.testing.assert_allclose(h.value, 0.5 * np.tanh(c.value), rtol=0, atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_cell_matches_reference(seed):
    rng = np.random.default_rng(100 + seed)
    p = random_cell(4, 3, seed)
    x, h0, c0 = rng.normal(size=(4, 2)), rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
    h, c = lstm_cell(x, h0, c0, p)
    h_ref, c_ref = reference_cell(x, h0, c0, p.W_x, p.W_h, p.b)
    assert np.max(np.abs(h.value - h_ref)) < 1e-12
    assert np.max(np.abs(c.value - c_ref)) < 1e-12


def test_cell_grad_check():
    rng = np.random.default_rng(7)
    x, h0, c0 = rng.normal(size=(3, 1)), rng.normal(size=(2, 1)), rng.normal(size=(2, 1))
    p = random_cell(3, 2, 1)

    def fn(n):
        h, c = lstm_cell(n[0], n[1], n[2], LstmParams(n[3], n[4], n[5]))
        return ad.sq_norm(h)

    assert grad_check(fn, [x, h0, c0, p.W_x, p.W_h, p.b]) < 1e-4


def test_cell_shape_errors():
    with pytest.raises(ShapeError):
        lstm_cell(np.ones(4), np.zeros(2), np.zeros(2), LstmParams.zeros(3, 2))
    with pytest.raises(ShapeError):
        lstm_cell(np.ones(3), np.zeros(5), np.zeros(2), LstmParams.zeros(3, 2))


def test_init_ranges_and_forget_bias():
    p = LstmParams.init(6, 10, np.random.default_rng(0))
    bound = 1 / np.sqrt(10)
    assert np.all(np.abs(p.W_x) <= bound) and np.all(np.abs(p.W_h) <= bound)
    np.testing.assert_array_equal(p.b[10:20], 1.0)
    assert np.count_nonzero(p.b) == 10


# --- bi-directional ---------------------------------------------------------------


def rand_bi(d, h, seed):
    return BiLstmParams(random_cell(d, h, seed), random_cell(d, h, seed + 1))


def test_bilstm_length_one():
    p = rand_bi(3, 2, 0)
    x = np.array([0.3, -0.2, 0.9])
    out = bilstm([x], p)
    z = np.zeros((2, 1))
    hf, _ = reference_cell(x[:, None], z, z, p.fwd.W_x, p.fwd.W_h, p.fwd.b)
    hb, _ = reference_cell(x[:, None], z, z, p.bwd.W_x, p.bwd.W_h, p.bwd.b)
    np.testing.assert_allclose(out[0].value, np.vstack([hf, hb]), rtol=0, atol=1e-14)


def test_bilstm_zero_params():
    p = BiLstmParams(LstmParams.zeros(3, 2), LstmParams.zeros(3, 2))
    for o in bilstm([np.ones(3)] * 4, p):
        np.testing.assert_array_equal(o.value, 0.0)


def test_bilstm_empty_rejected():
    with pytest.raises(ValueError):
        bilstm([], rand_bi(3, 2, 0))


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10_000))
def test_bilstm_time_reversal_symmetry(T, seed):
    p = rand_bi(3, 2, seed)
    swapped = BiLstmParams(p.bwd, p.fwd)
    seq = list(np.random.default_rng(seed).normal(size=(T, 3)))
    a = [o.value for o in bilstm(seq, p)]
    b = [o.value for o in bilstm(seq[::-1], swapped)][::-1]
    for x, y in zip(a, b):
        np.testing.assert_allclose(np.vstack([x[2:], x[:2]]), y, rtol=0, atol=1e-14)


# --- seq2seq ----------------------------------------------------------------------


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 8))
def test_seq2seq_length_law(t):
    p = Seq2SeqParams.init(4, 3, hidden=5, seed=1)
    out = seq2seq_forward(list(np.ones((t, 4))), p)
    assert len(out) == t and all(o.shape == (3,) for o in out)


def test_seq2seq_zero_params_emits_bias():
    p = Seq2SeqParams.zeros(4, 3, 5)
    p.out_b[:] = [[1.0], [-2.0], [0.5]]
    for o in seq2seq_forward(list(np.random.default_rng(0).normal(size=(4, 4))), p):
        np.testing.assert_array_equal(o, [1.0, -2.0, 0.5])


def test_encoder_width_default():
    p = Seq2SeqParams.init(6, 4)
    assert p.encoder.fwd.h == 100
    assert p.out_W.shape == (4, 200)


def test_inference_ignores_rng_seed():
    p = Seq2SeqParams.init(3, 3, hidden=4, seed=2)
    seq = list(np.random.default_rng(1).normal(size=(5, 3)))
    a = seq2seq_forward(seq, p, rng_seed=1)
    b = seq2seq_forward(seq, p, rng_seed=99)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a, b))


def test_zero_dropout_train_mode_equals_inference():
    p = Seq2SeqParams.init(3, 3, hidden=4, dropout_p=0.0, seed=2)
    seq = list(np.random.default_rng(1).normal(size=(5, 3)))
    a = seq2seq_forward(seq, p, train_mode=True, rng_seed=5)
    b = seq2seq_forward(seq, p)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a, b))


def test_dropout_changes_train_output_and_is_seeded():
    p = Seq2SeqParams.init(3, 3, hidden=4, seed=2)
    seq = list(np.random.default_rng(1).normal(size=(5, 3)))
    a = seq2seq_forward(seq, p, train_mode=True, rng_seed=5)
    b = seq2seq_forward(seq, p, train_mode=True, rng_seed=5)
    c = seq2seq_forward(seq, p)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a, b))
    assert any(not np.array_equal(x, y) for x, y in zip(a, c))


def test_seq2seq_grad_check():
    p = Seq2SeqParams.init(2, 2, hidden=2, seed=4)
    names = list(p.arrays())
    seq = np.random.default_rng(0).normal(size=(3, 2, 1))

    def fn(nodes):
        bound = p.with_arrays(dict(zip(names, nodes)))
        outs = seq2seq_nodes(list(seq), bound)
        total = ad.sq_norm(outs[0])
        for o in outs[1:]:
            total = ad.add(total, ad.sq_norm(o))
        return ad.scale(total, 1.0 / (2 * len(outs)))

    assert grad_check(fn, list(p.arrays().values())) < 1e-4


def test_arrays_round_trip_and_copy():
    p = Seq2SeqParams.init(3, 2, hidden=2, seed=0)
    q = p.with_arrays(p.arrays())
    assert list(q.arrays()) == list(p.arrays())
    c = p.copy()
    c.out_W[0, 0] += 1.0
    assert c.out_W[0, 0] != p.out_W[0, 0]


def test_bind_constant_has_no_grad():
    tape = Tape()
    p = Seq2SeqParams.init(2, 2, hidden=2, seed=0)
    _, nodes = p.bind(tape, constant=True)
    assert not any(n.requires_grad for n in nodes.values())
