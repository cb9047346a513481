import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from glocalnet.autodiff import ShapeError
from glocalnet.pipeline import (
    MotionModel,
    PaceConfig,
    densify,
    densify_and_refine,
    export_embeddings,
    glogen_rollout,
    glogen_step,
    interpolate_pair,
    locgen_refine,
    multi_activity_rollout,
    one_hot,
    refine_dense,
    synthesize,
)
from glocalnet.recurrent import Seq2SeqParams

POSE = 4


@pytest.fixture(scope="module")
def glo():
    return MotionModel.create(POSE, window=5, n_classes=3, hidden=6, seed=1)


@pytest.fixture(scope="module")
def loc():
    return MotionModel.create(POSE, window=6, hidden=6, seed=2)


def seed_window(t=5, seed=0):
    return np.random.default_rng(seed).normal(size=(t, POSE))


def test_one_hot():
    np.testing.assert_array_equal(one_hot([2, 0], 3), [[0, 1], [0, 0], [1, 0]])
    with pytest.raises(ValueError):
        one_hot([3], 3)


def test_model_validates_widths():
    with pytest.raises(ShapeError):
        MotionModel(Seq2SeqParams.init(5, 4, hidden=2), window=5, n_classes=2)


# --- generator --------------------------------------------------------------------


def test_step_emits_t_poses(glo):
    assert glogen_step(seed_window(), 0, glo).shape == (5, POSE)


def test_zero_model_emits_bias():
    p = Seq2SeqParams.zeros(POSE + 2, POSE, 3)
    p.out_b[:, 0] = [1.0, 2.0, 3.0, 4.0]
    out = glogen_step(seed_window(), 1, MotionModel(p, 5, 2))
    np.testing.assert_array_equal(out, np.tile([1.0, 2.0, 3.0, 4.0], (5, 1)))


def test_class_changes_output(glo):
    a = glogen_step(seed_window(), 0, glo)
    b = glogen_step(seed_window(), 1, glo)
    assert np.any(a != b)


def test_prior_off_ignores_class(glo):
    off = MotionModel(glo.params, glo.window, glo.n_classes, use_class_prior=False)
    a = glogen_step(seed_window(), 0, off)
    b = glogen_step(seed_window(), 2, off)
    assert a.tobytes() == b.tobytes()


def test_step_rejects_bad_input(glo):
    with pytest.raises(ValueError):
        glogen_step(seed_window(4), 0, glo)
    with pytest.raises(ShapeError):
        glogen_step(np.zeros((5, POSE + 1)), 0, glo)
    with pytest.raises(ValueError):
        glogen_step(seed_window(), 3, glo)


@pytest.mark.parametrize("t,k,n", [(5, 3, 15), (10, 5, 50)])
def test_rollout_lengths_match_configs(t, k, n):
    model = MotionModel.create(POSE, window=t, n_classes=2, hidden=4, seed=0)
    assert glogen_rollout(seed_window(t), 1, k, model).shape == (n, POSE)


def test_rollout_k_zero_and_chaining(glo):
    assert glogen_rollout(seed_window(), 0, 0, glo).shape == (0, POSE)
    out = glogen_rollout(seed_window(), 2, 3, glo)
    np.testing.assert_array_equal(out[5:10], glogen_step(out[:5], 2, glo))


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 6))
def test_rollout_length_law(k):
    model = MotionModel.create(POSE, window=3, n_classes=2, hidden=3, seed=0)
    assert len(glogen_rollout(seed_window(3), 0, k, model)) == 3 * k


def test_multi_activity_seam(glo):
    traj = multi_activity_rollout(seed_window(), [(0, 2), (1, 2)], glo)
    assert traj.frames.shape == (20, POSE)
    assert traj.boundaries == [10]
    assert traj.frame_classes.tolist() == [0] * 10 + [1] * 10
    seed2 = traj.frames[5:10]
    np.testing.assert_array_equal(traj.frames[10:], glogen_rollout(seed2, 1, 2, glo))


def test_single_segment_equals_rollout(glo):
    traj = multi_activity_rollout(seed_window(), [(2, 3)], glo)
    assert traj.frames.tobytes() == glogen_rollout(seed_window(), 2, 3, glo).tobytes()
    assert traj.boundaries == []


def test_schedule_validation(glo):
    with pytest.raises(ValueError):
        multi_activity_rollout(seed_window(), [], glo)
    with pytest.raises(ValueError):
        multi_activity_rollout(seed_window(), [(0, 0)], glo)


# --- interpolation ----------------------------------------------------------------


def test_literal_convention_ends_on_a():
    a, b = np.array([1.0, -2.0]), np.array([5.0, 7.0])
    for M in (1, 3, 4):
        out = interpolate_pair(a, b, M, "literal_eq3")
        assert out[-1].tobytes() == a.tobytes()


def test_forward_interior_values():
    np.testing.assert_array_equal(interpolate_pair([0.0, 0.0], [2.0, 2.0], 1), [[1.0, 1.0]])
    np.testing.assert_array_equal(interpolate_pair(0.0, 4.0, 3), [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        interpolate_pair(0.0, 1.0, 2, "cubic")


vec = arrays(np.float64, (3,), elements=st.floats(-100, 100))


@settings(max_examples=60, deadline=None)
@given(vec, vec, st.integers(1, 12))
def test_forward_interior_strictly_interior_and_monotone(a, b, M):
    out = interpolate_pair(a, b, M)
    assert len(out) == M
    for d in range(3):
        col = out[:, d]
        if a[d] < b[d]:
            assert np.all(np.diff(col) >= 0) and col.min() >= a[d] and col.max() <= b[d]
        elif a[d] > b[d]:
            assert np.all(np.diff(col) <= 0) and col.max() <= a[d] and col.min() >= b[d]


def test_forward_interior_strict_on_separated_points():
    out = interpolate_pair(0.0, 1.0, 6)
    assert np.all(out > 0) and np.all(out < 1) and np.all(np.diff(out) > 0)


@settings(max_examples=60, deadline=None)
@given(st.integers(-64, 64), st.integers(-64, 64), st.integers(-64, 64), st.sampled_from([1, 3, 7, 15]))
def test_forward_interior_affine(a, b, c, M):
    # dyadic-friendly values and M+1 a power of two keep every product exact
    base = interpolate_pair(float(a), float(b), M)
    shifted = interpolate_pair(float(a + c), float(b + c), M)
    np.testing.assert_array_equal(shifted, base + c)


def test_densify_lengths_and_anchors():
    sp = np.random.default_rng(0).normal(size=(16, 3))
    assert densify(sp[:2], PaceConfig(4)).shape == (6, 3)
    assert densify(sp, PaceConfig(0)).tobytes() == sp.tobytes()
    d = densify(sp, PaceConfig(4))
    assert d.shape == (76, 3)
    assert d[::5].tobytes() == sp.tobytes()
    np.testing.assert_array_equal(d[1:5], interpolate_pair(sp[0], sp[1], 4))


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 10_000), st.integers(0, 6), st.sampled_from(["forward_interior", "literal_eq3"]))
def test_densify_length_law(S, M, conv):
    sp = np.arange(S, dtype=float)[:, None]
    d = densify(sp, PaceConfig(M, conv))
    assert len(d) == S + (S - 1) * M
    assert d[:: M + 1].tobytes() == sp.tobytes()


def test_pace_config_validation():
    with pytest.raises(ValueError):
        PaceConfig(-1)
    with pytest.raises(ValueError):
        PaceConfig(2, "spline")


# --- refiner ----------------------------------------------------------------------


def test_refine_keeps_length_and_anchors(loc):
    w = densify(seed_window(2), PaceConfig(4))
    out = locgen_refine(w, loc)
    assert out.shape == w.shape
    assert out[0].tobytes() == w[0].tobytes() and out[-1].tobytes() == w[-1].tobytes()


def test_zero_refiner_fills_bias():
    p = Seq2SeqParams.zeros(POSE, POSE, 3)
    p.out_b[:, 0] = 0.5
    w = densify(seed_window(2), PaceConfig(4))
    out = locgen_refine(w, MotionModel(p, 6))
    np.testing.assert_array_equal(out[1:-1], 0.5)


def test_refine_dense_spans_independent(loc):
    sparse = seed_window(4)
    dense = densify(sparse, PaceConfig(4))
    out = refine_dense(dense, 4, loc)
    assert out[::5].tobytes() == sparse.tobytes()
    for s in range(3):
        span = dense[5 * s : 5 * s + 6]
        # batched and single-span matmuls may round differently in the last bit
        np.testing.assert_allclose(out[5 * s : 5 * s + 6], locgen_refine(span, loc), rtol=0, atol=1e-13)


def test_synthesize_lengths_and_determinism(glo, loc):
    out = synthesize(seed_window(), 0, 3, PaceConfig(4), glo, loc)
    assert out.shape == (71, POSE)
    again = synthesize(seed_window(), 0, 3, PaceConfig(4), glo, loc)
    assert out.tobytes() == again.tobytes()
    wide = synthesize(seed_window(), 0, 3, PaceConfig(8), glo)
    assert wide.shape == (127, POSE)
    assert wide[::9].tobytes() == out[::5].tobytes()


def test_refiner_window_must_match_M(glo, loc):
    sparse = glogen_rollout(seed_window(), 0, 1, glo)
    with pytest.raises(ValueError, match="M=4"):
        densify_and_refine(sparse, PaceConfig(3), loc)


def test_export_embeddings(glo):
    seqs = [(seed_window(8, s), s % 3) for s in range(4)] + [(seed_window(8, 0), 0)]
    E = export_embeddings(seqs, glo)
    assert E.shape == (5, 5 * 2 * 6)
    assert E[0].tobytes() == E[4].tobytes()
    with pytest.raises(ValueError, match="short"):
        export_embeddings([(seed_window(3), 0)], glo, names=["short"])


def test_embedding_row_width_default_model():
    model = MotionModel.create(POSE, window=5, n_classes=2)
    assert export_embeddings([(seed_window(), 0)], model).shape == (1, 1000)
