import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from mcnoma.ma_schemes import (
    DetectionError,
    SymbolFrame,
    ThresholdTree,
    compose_means,
    compose_means_tdma,
    detect_scalar,
    mean_mdma,
    mean_noma,
    mean_tdma,
    sic_detect,
    sic_detect_batch,
    subtraction_sic_detect,
    tdma_owner,
    tree_from_subtraction,
)

gain_arrays = st.integers(1, 3).flatmap(
    lambda k: st.integers(0, 2).flatmap(
        lambda L: hnp.arrays(float, (k, k, L + 1), elements=st.floats(0, 500))
    )
)


def _frames(k, L):
    for flat in itertools.product((0, 1), repeat=k * (L + 1)):
        yield SymbolFrame.from_vector(flat, k)


def test_frame_vector_is_slot_major():
    f = SymbolFrame(np.array([[1, 0], [0, 1]]))
    assert f.vector.tolist() == [1, 0, 0, 1]
    assert SymbolFrame.from_vector(f.vector, 2) == f
    assert SymbolFrame.zeros(2, 1) != f
    with pytest.raises(DetectionError):
        SymbolFrame(np.array([[2, 0]]))


def test_tree_shape_and_prefix_order():
    t = ThresholdTree.constant(3, 1)
    assert [len(lv) for lv in t.levels] == [1, 2, 4]
    assert ThresholdTree.prefix_index([1, 0]) == 2
    t2 = ThresholdTree.from_flat(3, range(7))
    assert t2.threshold(2, [1, 0]) == 3 + 2
    assert np.array_equal(t2.flat(), np.arange(7))
    with pytest.raises(DetectionError):
        ThresholdTree([[1], [1]])
    with pytest.raises(DetectionError):
        ThresholdTree([[-1]])


def test_mean_examples():
    g = np.zeros((2, 2, 2))
    g[0, 0] = [300, 3]
    g[1, 0] = [40, 2]
    g[0, 1] = [50, 4]
    g[1, 1] = [310, 5]
    zero = SymbolFrame.zeros(2, 1)
    ones = SymbolFrame(np.ones((2, 2)))
    assert mean_mdma(0, zero, g, 7.0) == 7.0
    assert mean_noma(1, zero, g, 7.0) == 7.0
    assert mean_mdma(0, ones, g, 7.0) == 7 + 300 + 3
    assert mean_noma(0, ones, g, 7.0) == 7 + 300 + 3 + 40 + 2
    with pytest.raises(IndexError):
        mean_noma(2, ones, g, 0.0)


def test_tdma_owner_descending_wraps():
    # 0-based owners of slot l when the current slot belongs to TX j.
    assert tdma_owner(0, 1, 3) == 2
    assert tdma_owner(2, 1, 3) == 1
    assert tdma_owner(1, 0, 3) == 1


@given(g=gain_arrays, noise=st.floats(0, 100), data=st.data())
def test_noma_dot_product_and_bookkeeping(g, noise, data):
    k, _, nl = g.shape
    bits = data.draw(hnp.arrays(np.int8, (k, nl), elements=st.integers(0, 1)))
    frame = SymbolFrame(bits)
    for j in range(k):
        lam_vec = g[:, j, :].T.ravel()
        ref = noise + sum(float(a) * float(b) for a, b in zip(frame.vector, lam_vec))
        assert mean_noma(j, frame, g, noise) == pytest.approx(ref, rel=1e-12, abs=1e-9)
        cross = sum(bits[i, l] * g[i, j, l] for i in range(k) for l in range(nl) if i != j)
        assert mean_noma(j, frame, g, noise) - mean_mdma(j, frame, g, noise) == pytest.approx(cross, abs=1e-9)
        if nl == 1:
            assert mean_tdma(j, frame, g, noise) == pytest.approx(mean_mdma(j, frame, g, noise))
    if k == 1:
        assert mean_noma(0, frame, g, noise) == mean_mdma(0, frame, g, noise)


def test_detect_scalar_boundary():
    assert detect_scalar(5, 5) == 1
    assert detect_scalar(4, 5) == 0
    assert detect_scalar(0, 0) == 1


def test_sic_hand_traces():
    tree = ThresholdTree([[10], [3, 13]])
    assert sic_detect([12, 12], tree).tolist() == [1, 0]
    assert sic_detect([9, 4], tree).tolist() == [0, 1]
    assert sic_detect([7], ThresholdTree([[7]])).tolist() == [1]
    with pytest.raises(DetectionError):
        sic_detect([1, 2, 3], tree)


@given(
    flat=st.lists(st.integers(0, 40), min_size=7, max_size=7),
    counts=hnp.arrays(np.int64, (50, 3), elements=st.integers(0, 50)),
)
def test_batch_equals_scalar(flat, counts):
    tree = ThresholdTree.from_flat(3, flat)
    batch = sic_detect_batch(counts, tree)
    for row, out in zip(counts, batch):
        assert np.array_equal(sic_detect(row, tree), out)


@given(flat=st.lists(st.integers(0, 40), min_size=3, max_size=3), j=st.integers(0, 1), c=st.integers(0, 60),
       c0=st.integers(0, 60))
def test_raising_threshold_never_turns_zero_into_one(flat, j, c, c0):
    tree = ThresholdTree.from_flat(2, flat)
    before = sic_detect([c0, c], tree)
    levels = [lv.copy() for lv in tree.levels]
    idx = 0 if j == 0 else int(before[0])
    levels[j][idx] += 1
    after = sic_detect([c0, c], ThresholdTree(levels))
    assert not (before[j] == 0 and after[j] == 1)


def test_subtraction_equivalence_exhaustive_k2():
    contrib = np.array([[0.0, 97.4], [0.0, 0.0]])
    base = [120, 80]
    tree = tree_from_subtraction(base, contrib)
    rounded = np.rint(contrib)
    for a in range(201):
        for b in range(201):
            assert np.array_equal(sic_detect([a, b], tree), subtraction_sic_detect([a, b], base, rounded))


def test_subtraction_degenerate_cases():
    assert subtraction_sic_detect([4], [5], np.zeros((1, 1))).tolist() == [0]
    out = subtraction_sic_detect([10, 3], [5, 4], np.zeros((2, 2)))
    assert out.tolist() == [detect_scalar(10, 5), detect_scalar(3, 4)]


@given(
    base=st.lists(st.integers(0, 60), min_size=3, max_size=3),
    contrib=hnp.arrays(float, (3, 3), elements=st.floats(0, 80)),
    samples=st.lists(st.integers(0, 250), min_size=3, max_size=3),
)
def test_subtraction_equivalence_property(base, contrib, samples):
    c = np.triu(np.rint(contrib), 1)
    tree = tree_from_subtraction(base, c)
    assert np.array_equal(sic_detect(samples, tree), subtraction_sic_detect(samples, base, c))


@given(g=gain_arrays, noise=st.floats(0, 50), data=st.data())
def test_vectorised_means_match_frame_means(g, noise, data):
    k, _, nl = g.shape
    L = nl - 1
    n = 6
    bits = data.draw(hnp.arrays(np.int8, (L + n, k), elements=st.integers(0, 1)))
    noma = compose_means(bits, g, noise, "noma")
    mdma = compose_means(bits, g, noise, "mdma")
    owners = np.arange(L + n) % k
    tdma = compose_means_tdma(bits[np.arange(L + n), owners], owners, g, noise)
    for t in range(n):
        frame = SymbolFrame(np.stack([bits[L + t - l] for l in range(nl)], axis=1))
        for j in range(k):
            assert noma[t, j] == pytest.approx(mean_noma(j, frame, g, noise), rel=1e-12, abs=1e-9)
            assert mdma[t, j] == pytest.approx(mean_mdma(j, frame, g, noise), rel=1e-12, abs=1e-9)
        j = owners[L + t]
        tdma_frame = np.zeros((k, nl), dtype=np.int8)
        for l in range(nl):
            tdma_frame[tdma_owner(j, l, k), l] = bits[L + t - l, tdma_owner(j, l, k)]
        assert tdma[t] == pytest.approx(mean_tdma(j, SymbolFrame(tdma_frame), g, noise), rel=1e-12, abs=1e-9)
    with pytest.raises(ValueError):
        compose_means(bits, g, noise, "tdma")
