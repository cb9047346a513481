import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from glocalnet.autodiff import Tape, grad_check
from glocalnet.data import make_synthetic_dataset
from glocalnet.objectives import (
    LossWeights,
    MmdConfig,
    bone_length_stats,
    combined_loss,
    euclid_per_frame,
    graph_combined_loss,
    horizon_frames,
    joint_loss,
    mean_flow_discrepancy,
    median_bandwidths,
    mmd2,
    mmd_avg,
    mmd_seq,
    motion_flow,
    motion_flow_loss,
)
from glocalnet.pipeline import interpolate_pair
from glocalnet.skeleton import SkeletonSpec

TWO = SkeletonSpec(2, 2, ((0, 1),))
ONE = SkeletonSpec(1, 2, ())


def naive_mmd2(A, B, bws, unbiased=False):
    """Pairwise double loop, no vectorisation."""

    def k(x, y):
        d2 = sum((xi - yi) ** 2 for xi, yi in zip(x, y))
        return sum(math.exp(-d2 / (2 * s * s)) for s in bws)

    m, n = len(A), len(B)
    if unbiased:
        saa = sum(k(A[i], A[j]) for i in range(m) for j in range(m) if i != j) / (m * (m - 1))
        sbb = sum(k(B[i], B[j]) for i in range(n) for j in range(n) if i != j) / (n * (n - 1))
    else:
        saa = sum(k(a, b) for a in A for b in A) / m**2
        sbb = sum(k(a, b) for a in B for b in B) / n**2
    sab = sum(k(a, b) for a in A for b in B) / (m * n)
    return saa + sbb - 2 * sab


def naive_median(A, B):
    pooled = list(A) + list(B)
    d = [math.dist(p, q) for p, q in itertools.combinations(pooled, 2)]
    return float(np.median(d))


# --- joint and flow losses --------------------------------------------------------


def test_joint_loss_values():
    gt = np.zeros((1, 2))
    assert joint_loss(gt, gt) == 0.0
    assert joint_loss([[3.0, 4.0]], gt, "l2") == 5.0
    assert joint_loss([[3.0, 4.0]], gt, "squared") == 25.0
    assert joint_loss([[3.0, 4.0]] * 2, np.zeros((2, 2)), "l2") == 10.0


def test_joint_loss_rejects_mismatch_and_mode():
    with pytest.raises(ValueError):
        joint_loss(np.zeros((2, 2)), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        joint_loss(np.zeros((2, 2)), np.zeros((2, 2)), "l1")


def test_motion_flow():
    assert np.all(motion_flow(np.ones((4, 3))) == 0)
    delta = np.array([0.5, -1.0])
    seq = np.arange(5)[:, None] * delta
    flows = motion_flow(seq)
    assert flows.shape == (4, 2)
    np.testing.assert_array_equal(flows, np.tile(delta, (4, 1)))
    with pytest.raises(ValueError):
        motion_flow(np.ones((1, 2)))


def test_flow_loss_identities():
    rng = np.random.default_rng(0)
    gt = rng.normal(size=(6, 4))
    assert motion_flow_loss(gt, gt) == 0.0
    assert motion_flow_loss(gt + np.array([1.0, -2.0, 3.0, 0.5]), gt, "l2") == pytest.approx(0.0, abs=1e-12)
    pred = gt.copy()
    pred[3, 2] += 0.37
    assert abs(motion_flow_loss(pred, gt, "l2") - 2 * 0.37) < 1e-12


def test_combined_loss_weights():
    rng = np.random.default_rng(1)
    p, g = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    assert combined_loss(p, g, LossWeights(1.0, 0.0)) == joint_loss(p, g)
    assert combined_loss(p, g, LossWeights(0.0, 0.0)) == 0.0
    assert combined_loss(p, g) == joint_loss(p, g) + motion_flow_loss(p, g)


def test_loss_weights_validated():
    with pytest.raises(ValueError):
        LossWeights(-1.0, 1.0)


# rounded so squared differences cannot underflow to zero
seqs = arrays(np.float64, (5, 4), elements=st.floats(-10, 10).map(lambda x: round(x, 6)))


@settings(max_examples=50, deadline=None)
@given(seqs, seqs)
def test_combined_loss_nonnegative_zero_iff_equal(p, g):
    assert combined_loss(p, g) >= 0
    assert combined_loss(g, g) == 0
    if not np.array_equal(p, g):
        assert combined_loss(p, g) > 0


@settings(max_examples=50, deadline=None)
@given(seqs, seqs, arrays(np.float64, (4,), elements=st.floats(-5, 5)))
def test_flow_loss_translation_invariant(p, g, c):
    base = motion_flow_loss(p, g)
    assert motion_flow_loss(p + c, g) == pytest.approx(base, rel=1e-9, abs=1e-9)
    assert motion_flow_loss(p + c, g + c) == pytest.approx(base, rel=1e-9, abs=1e-9)


def test_graph_loss_matches_numpy_and_grad():
    rng = np.random.default_rng(2)
    pred, gt = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    w = LossWeights(0.7, 1.3)
    tape = Tape()
    nodes = [tape.input(p[:, None]) for p in pred]
    loss = graph_combined_loss(nodes, [g[:, None] for g in gt], w)
    assert float(loss.value) == pytest.approx(combined_loss(pred, gt, w), rel=1e-12)
    err = grad_check(lambda n: graph_combined_loss(n, [g[:, None] for g in gt], w),
                     [p[:, None] for p in pred])
    assert err < 1e-4


# --- MMD --------------------------------------------------------------------------


def test_mmd_matches_naive_oracle_on_50_instances():
    rng = np.random.default_rng(123)
    for trial in range(50):
        m, n, d = rng.integers(2, 7), rng.integers(2, 7), rng.integers(1, 4)
        A = rng.normal(size=(m, d))
        B = rng.normal(loc=rng.normal(), size=(n, d))
        unbiased = trial % 2 == 1
        cfg = MmdConfig(estimator="unbiased" if unbiased else "biased")
        med = naive_median(A, B)
        expected = naive_mmd2(A, B, (med / 2, med, 2 * med), unbiased)
        assert abs(mmd2(A, B, cfg) - expected) < 1e-10


def test_fixed_bandwidths_used_verbatim():
    rng = np.random.default_rng(5)
    A, B = rng.normal(size=(4, 2)), rng.normal(size=(3, 2))
    cfg = MmdConfig(bandwidths=(0.3, 1.1))
    assert abs(mmd2(A, B, cfg) - naive_mmd2(A, B, (0.3, 1.1))) < 1e-12


def test_biased_identical_sets_zero():
    A = np.random.default_rng(0).normal(size=(30, 3))
    assert mmd2(A, A) == 0.0
    assert mmd2(A, A[::-1].copy()) == pytest.approx(0.0, abs=1e-15)


def test_unbiased_same_distribution_small():
    rng = np.random.default_rng(2024)
    A, B = rng.standard_normal((2000, 1)), rng.standard_normal((2000, 1))
    assert abs(mmd2(A, B, MmdConfig(estimator="unbiased"))) < 0.01


def test_mmd_shape_errors():
    with pytest.raises(ValueError):
        mmd2(np.ones((3, 2)), np.ones((3, 3)))
    with pytest.raises(ValueError):
        mmd2(np.ones((1, 2)), np.ones((3, 2)), MmdConfig(estimator="unbiased"))
    with pytest.raises(ValueError):
        MmdConfig(estimator="linear")


def test_median_fallback_for_degenerate_sample():
    assert median_bandwidths(np.ones((4, 2))) == (0.5, 1.0, 2.0)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (5, 2), elements=st.floats(-5, 5)), arrays(np.float64, (4, 2), elements=st.floats(-5, 5)))
def test_mmd_symmetric_and_biased_nonnegative(A, B):
    assert mmd2(A, B) == pytest.approx(mmd2(B, A), abs=1e-12)
    assert mmd2(A, B) >= -1e-12


def test_sequence_mmd():
    rng = np.random.default_rng(3)
    A = [rng.normal(size=(6, 4)) for _ in range(5)]
    B = [rng.normal(size=(6, 4)) for _ in range(4)]
    assert mmd_avg(A, A) == pytest.approx(0.0, abs=1e-15)
    assert mmd_seq(A, A) == 0.0
    one_a, one_b = [a[:1] for a in A], [b[:1] for b in B]
    assert mmd_avg(one_a, one_b) == mmd_seq(one_a, one_b)
    with pytest.raises(ValueError, match="ragged"):
        mmd_seq(A + [np.zeros((5, 4))], B)
    with pytest.raises(ValueError):
        mmd_avg(A, [np.zeros((7, 4))] * 3)


def test_cross_class_mmd_exceeds_same_class():
    split = make_synthetic_dataset(2, 12, 40, seed=4)
    by = {}
    for m in split.train + split.test:
        by.setdefault(m.class_id, []).append(m.frames)
    cfg = MmdConfig(estimator="unbiased")
    same = mmd_seq(by[0][:6], by[0][6:], cfg)
    cross = mmd_seq(by[0][:6], by[1][6:], cfg)
    assert cross > same


# --- diagnostics ------------------------------------------------------------------


def test_euclid_per_frame():
    gt = np.zeros((1, 4))
    pf, mean = euclid_per_frame(gt, gt, TWO)
    assert pf.tolist() == [0.0] and mean == 0.0
    pf, _ = euclid_per_frame([[3.0, 4.0, 0.0, 0.0]], gt, TWO)
    assert pf.tolist() == [2.5]
    pf, mean = euclid_per_frame(np.tile([3.0, 4.0], (3, 2)), np.zeros((3, 4)), TWO)
    assert pf.tolist() == [5.0, 5.0, 5.0] and mean == 5.0


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-5, 5)), arrays(np.float64, (3, 4), elements=st.floats(-5, 5)))
def test_euclid_triangle(u, v):
    gt = np.zeros((3, 4))
    both, _ = euclid_per_frame(u + v, gt, TWO)
    a, _ = euclid_per_frame(u, gt, TWO)
    b, _ = euclid_per_frame(v, gt, TWO)
    assert np.all(both <= a + b + 1e-12)


def test_bone_stats():
    rigid = np.array([[0.0, 0.0, 1.0, 0.0]]) + np.arange(5)[:, None] * np.array([0.3, -0.1, 0.3, -0.1])
    means, stds = bone_length_stats(rigid, TWO)
    assert means.tolist() == pytest.approx([1.0]) and stds.tolist() == pytest.approx([0.0], abs=1e-15)
    stretch = np.array([[0, 0, 1, 0], [0, 0, 1.5, 0], [0, 0, 2, 0]], dtype=float)
    assert bone_length_stats(stretch, TWO)[0].tolist() == [1.5]
    with pytest.raises(ValueError):
        bone_length_stats(np.zeros((2, 2)), ONE)


def test_interpolation_shortens_rotated_bone():
    a = np.array([0.0, 0.0, 1.0, 0.0])
    b = np.array([0.0, 0.0, 0.0, 1.0])
    _, std = bone_length_stats(np.vstack([a, interpolate_pair(a, b, 4), b]), TWO)
    assert std[0] > 0.1
    mid = interpolate_pair(a, b, 1)[0]
    assert np.linalg.norm(mid[2:]) == pytest.approx(math.sqrt(0.5), abs=1e-15)


def test_mean_flow_discrepancy():
    gt = np.zeros((3, 2))
    pred = np.array([[0.0, 0.0], [3.0, 4.0], [3.0, 4.0]])
    assert mean_flow_discrepancy(pred, gt) == 2.5


def test_horizon_frames_rounding():
    assert horizon_frames([80, 160, 320, 400], 12.5) == [1, 2, 4, 5]
    assert horizon_frames([40], 12.5) == [1]  # 0.5 rounds up
    with pytest.raises(ValueError):
        horizon_frames([80], 0)
