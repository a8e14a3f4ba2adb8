import numpy as np
import pytest

from scrl.selection import (kmeans, map_nn, map_rs, map_sa, map_sc,
                            soft_positive, strategy_from_name,
                            NearestNeighbor, SoftSceneConsistency)


def unit_rows(rng, shape):
    x = rng.standard_normal(shape)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


# --- brute-force oracles, deliberately written without the library helpers ---

def oracle_rs(i, j, batch_len):
    out = i + j
    if out < 0:
        out = 0
    if out > batch_len - 1:
        out = batch_len - 1
    return out


def oracle_nn(i, m, emb):
    b = emb.shape[0]
    best_idx = None
    best_sim = None
    for j in list(range(i - m, i)) + list(range(i + 1, i + m + 1)):
        cj = min(max(j, 0), b - 1)
        sim = float(np.dot(emb[i], emb[cj]))
        if best_sim is None or sim > best_sim or (sim == best_sim and cj < best_idx):
            best_sim = sim
            best_idx = cj
    return best_idx


def oracle_sc(i, center_samples, emb):
    best_idx = None
    best_d = None
    for c in sorted(int(c) for c in center_samples):
        d = float(np.sum((emb[i] - emb[c]) ** 2))
        if best_d is None or d < best_d or (d == best_d and c < best_idx):
            best_d = d
            best_idx = c
    return best_idx


def test_map_sa_identity_and_bounds():
    assert map_sa(0, 8) == 0
    assert map_sa(7, 8) == 7
    with pytest.raises(IndexError):
        map_sa(8, 8)
    with pytest.raises(IndexError):
        map_sa(-1, 8)


def test_map_rs_degenerate_window():
    rng = np.random.default_rng(0)
    assert all(map_rs(i, 0, 10, rng) == i for i in range(10))


def test_map_rs_left_clamp():
    # with i=0, n=1 every draw lands in {0, 1}; j=-1 clamps to 0
    rng = np.random.default_rng(0)
    seen = {map_rs(0, 1, 10, rng) for _ in range(100)}
    assert seen == {0, 1}


def test_map_rs_right_clamp():
    rng = np.random.default_rng(0)
    seen = {map_rs(9, 1, 10, rng) for _ in range(100)}
    assert seen == {8, 9}


def test_map_rs_agrees_with_oracle_1000_instances():
    rng = np.random.default_rng(123)
    for _ in range(1000):
        b = int(rng.integers(2, 65))
        i = int(rng.integers(b))
        n = int(rng.integers(0, 9))
        state = rng.bit_generator.state
        got = map_rs(i, n, b, rng)
        # replay the same draw independently
        clone = np.random.default_rng()
        clone.bit_generator.state = state
        j = int(clone.integers(-n, n + 1))
        assert got == oracle_rs(i, j, b)


def test_map_nn_unique_maximum():
    rng = np.random.default_rng(1)
    emb = np.eye(8)  # orthogonal rows
    emb[5] = emb[3]  # duplicate of row 3 at i+2
    i, m = 3, 3
    assert map_nn(i, m, emb) == 5


def test_map_nn_small_i_can_return_query_itself():
    # candidates below zero clamp onto index 0 == i; degenerates to identity
    emb = unit_rows(np.random.default_rng(2), (6, 4))
    assert map_nn(0, 3, emb) == 0


def test_map_nn_rejects_tiny_batch():
    with pytest.raises(ValueError):
        map_nn(0, 2, unit_rows(np.random.default_rng(0), (1, 4)))


def test_map_nn_agrees_with_oracle_1000_instances():
    rng = np.random.default_rng(77)
    for _ in range(1000):
        b = int(rng.integers(2, 65))
        m = int(rng.integers(1, 9))
        i = int(rng.integers(b))
        emb = unit_rows(rng, (b, 5))
        assert map_nn(i, m, emb) == oracle_nn(i, m, emb)


def test_kmeans_separable_pair():
    emb = np.array([[1.0, 0.0], [0.0, 1.0]])
    model = kmeans(emb, 2, 5, np.random.default_rng(0))
    assert model.sse_history[-1] == pytest.approx(0.0, abs=1e-12)
    assert sorted(model.center_samples.tolist()) == [0, 1]


def test_kmeans_single_center_is_normalized_mean():
    rng = np.random.default_rng(3)
    emb = unit_rows(rng, (10, 4))
    model = kmeans(emb, 1, 3, rng)
    mean = emb.mean(axis=0)
    assert np.allclose(model.centers[0], mean / np.linalg.norm(mean), atol=1e-12)
    assert np.all(model.assignment == 0)


def test_kmeans_recovers_planted_partition():
    rng = np.random.default_rng(5)
    centers = unit_rows(rng, (4, 16))
    points = []
    labels = []
    for c_idx in range(4):
        for _ in range(16):
            p = centers[c_idx] + 0.05 * rng.standard_normal(16)
            points.append(p / np.linalg.norm(p))
            labels.append(c_idx)
    order = rng.permutation(64)
    points = np.array(points)[order]
    labels = np.array(labels)[order]
    model = kmeans(points, 4, 10, rng)
    # exhaustive partition-quality check: assignments must match the planted
    # labels up to a relabeling, i.e. each found cluster is label-pure and all
    # four planted labels appear
    found = {}
    for c in range(4):
        member_labels = labels[model.assignment == c]
        assert member_labels.size > 0
        assert len(set(member_labels.tolist())) == 1
        found[c] = member_labels[0]
    assert sorted(found.values()) == [0, 1, 2, 3]


def test_kmeans_rejects_small_batch():
    with pytest.raises(ValueError):
        kmeans(unit_rows(np.random.default_rng(0), (3, 4)), 4, 2,
               np.random.default_rng(0))


def test_kmeans_sse_monotone_on_random_batches():
    rng = np.random.default_rng(9)
    for _ in range(100):
        b = int(rng.integers(8, 40))
        k = int(rng.integers(1, min(8, b) + 1))
        emb = unit_rows(rng, (b, 6))
        model = kmeans(emb, k, 6, rng)
        diffs = np.diff(model.sse_history)
        assert np.all(diffs <= 1e-9)


def test_kmeans_handles_duplicate_points():
    # more centers than distinct points: empty clusters fall back and the
    # model still yields at least one valid center sample
    emb = np.tile(np.array([[1.0, 0.0]]), (6, 1))
    model = kmeans(emb, 3, 4, np.random.default_rng(0))
    assert model.center_sample_indices().size >= 1


def test_map_sc_center_sample_maps_to_itself():
    rng = np.random.default_rng(11)
    emb = unit_rows(rng, (30, 8))
    model = kmeans(emb, 4, 8, rng)
    for c in model.center_sample_indices():
        assert map_sc(int(c), model, emb) == int(c)


def test_map_sc_agrees_with_oracle_1000_instances():
    rng = np.random.default_rng(13)
    for _ in range(1000):
        b = int(rng.integers(8, 65))
        k = int(rng.integers(1, 9))
        if k > b:
            k = b
        emb = unit_rows(rng, (b, 6))
        model = kmeans(emb, k, 4, rng)
        i = int(rng.integers(b))
        assert map_sc(i, model, emb) == oracle_sc(i, model.center_sample_indices(), emb)


def test_map_sc_tight_cluster_returns_one_center():
    rng = np.random.default_rng(17)
    base = unit_rows(rng, (1, 8))[0]
    emb = base + 0.001 * rng.standard_normal((24, 8))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    model = kmeans(emb, 1, 4, rng)
    targets = {map_sc(i, model, emb) for i in range(24)}
    assert len(targets) == 1


def test_permutation_outside_candidates_is_irrelevant():
    rng = np.random.default_rng(19)
    b, m, i = 32, 4, 16
    emb = unit_rows(rng, (b, 6))
    base = map_nn(i, m, emb)
    shuffled = emb.copy()
    outside = [j for j in range(b) if abs(j - i) > m]
    perm = rng.permutation(outside)
    shuffled[outside] = emb[perm]
    assert map_nn(i, m, shuffled) == base


def test_soft_positive_endpoints_bitwise():
    rng = np.random.default_rng(23)
    a = unit_rows(rng, (5,))
    b = unit_rows(rng, (5,))
    assert np.array_equal(soft_positive(a, b, 1.0), a)
    assert np.array_equal(soft_positive(a, b, 0.0), b)


def test_soft_positive_blend_unit_norm():
    rng = np.random.default_rng(29)
    a = unit_rows(rng, (7, 5))
    b = unit_rows(rng, (7, 5))
    out = soft_positive(a, b, 0.5)
    assert np.allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-12)


def test_soft_positive_antipodal_is_degenerate():
    a = np.array([1.0, 0.0])
    with pytest.raises(ValueError, match="degenerate soft positive"):
        soft_positive(a, -a, 0.5)


def test_soft_positive_rejects_bad_gamma():
    a = np.array([1.0, 0.0])
    with pytest.raises(ValueError):
        soft_positive(a, a, 1.5)


def test_strategy_parsing():
    s = strategy_from_name("nn", nn_m=4)
    assert isinstance(s, NearestNeighbor) and s.m == 4
    s = strategy_from_name("soft_sc", gamma=0.25)
    assert isinstance(s, SoftSceneConsistency) and s.gamma == 0.25
    with pytest.raises(ValueError, match="unknown strategy"):
        strategy_from_name("bogus")
