"""Positive-sample selection strategies over a batch of query embeddings.

Four index-mapping strategies (self, random-nearby, nearest-neighbor,
cluster-center) plus the soft blend of self and cluster-center keys.  All
argmax/argmin ties break toward the lowest index so results are exactly
reproducible against brute-force scans.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SelfAugmented:
    """Positive is the other view of the same shot."""

    def describe(self) -> str:
        return "sa"


@dataclass(frozen=True)
class RandomNearby:
    """Positive index drawn uniformly from a +-n window, clamped to the batch."""

    n: int = 1

    def describe(self) -> str:
        return f"random(n={self.n})"


@dataclass(frozen=True)
class NearestNeighbor:
    """Most similar embedding within a +-m window (query index excluded)."""

    m: int = 8

    def describe(self) -> str:
        return f"nn(m={self.m})"


@dataclass(frozen=True)
class SceneConsistency:
    """Nearest cluster-center sample from online K-Means over the batch."""

    num_classes: int = 24
    kmeans_iters: int = 10

    def describe(self) -> str:
        return f"sc(num_classes={self.num_classes},iters={self.kmeans_iters})"


@dataclass(frozen=True)
class SoftSceneConsistency:
    """Renormalized blend gamma*k_self + (1-gamma)*k_center."""

    gamma: float = 0.5
    num_classes: int = 24
    kmeans_iters: int = 10

    def describe(self) -> str:
        return (
            f"soft_sc(gamma={self.gamma},num_classes={self.num_classes},"
            f"iters={self.kmeans_iters})"
        )


Strategy = SelfAugmented | RandomNearby | NearestNeighbor | SceneConsistency | SoftSceneConsistency

_STRATEGY_NAMES = {
    "sa": SelfAugmented,
    "random": RandomNearby,
    "nn": NearestNeighbor,
    "sc": SceneConsistency,
    "soft_sc": SoftSceneConsistency,
}


def strategy_from_name(name: str, *, random_n=1, nn_m=8, num_classes=24,
                       kmeans_iters=10, gamma=0.5) -> Strategy:
    if name == "sa":
        return SelfAugmented()
    if name == "random":
        return RandomNearby(n=random_n)
    if name == "nn":
        return NearestNeighbor(m=nn_m)
    if name == "sc":
        return SceneConsistency(num_classes=num_classes, kmeans_iters=kmeans_iters)
    if name == "soft_sc":
        return SoftSceneConsistency(gamma=gamma, num_classes=num_classes,
                                    kmeans_iters=kmeans_iters)
    raise ValueError(
        f"unknown strategy {name!r}; expected one of {sorted(_STRATEGY_NAMES)}"
    )


def _check_index(i: int, batch_len: int) -> None:
    if not 0 <= i < batch_len:
        raise IndexError(f"index {i} out of range for batch of {batch_len}")


def map_sa(i: int, batch_len: int) -> int:
    """Identity mapping."""
    _check_index(i, batch_len)
    return i


def map_rs(i: int, n: int, batch_len: int, rng: np.random.Generator) -> int:
    """i + j for j uniform in {-n..n}, clamped to [0, batch_len-1].

    The published form clamps only at 0; the right edge is clamped
    symmetrically since an index past the batch end is meaningless.
    """
    _check_index(i, batch_len)
    if n < 0:
        raise ValueError("n must be >= 0")
    j = int(rng.integers(-n, n + 1))
    return min(max(i + j, 0), batch_len - 1)


def _window_candidates(i: int, m: int, batch_len: int) -> list[int]:
    """Candidate indices {i-m..i-1, i+1..i+m}, each clamped into the batch.

    Clamping can collapse several candidates onto index 0 (or batch_len-1);
    collapsed duplicates are kept, and i is excluded only as a raw offset, so
    a clamped candidate may still equal i at the batch edges.
    """
    raw = list(range(i - m, i)) + list(range(i + 1, i + m + 1))
    return [min(max(j, 0), batch_len - 1) for j in raw]


def map_nn(i: int, m: int, embeddings: np.ndarray) -> int:
    """Window candidate with maximal dot product against row i (ties: lowest index)."""
    b = embeddings.shape[0]
    if b < 2:
        raise ValueError("nearest-neighbor selection needs at least 2 rows")
    if m < 1:
        raise ValueError("m must be >= 1")
    _check_index(i, b)
    cands = _window_candidates(i, m, b)
    sims = embeddings[cands] @ embeddings[i]
    best = -np.inf
    best_idx = b
    for c, s in zip(cands, sims):
        if s > best or (s == best and c < best_idx):
            best = s
            best_idx = c
    return best_idx


@dataclass
class ClusterModel:
    """K-Means result over one batch of unit-norm embeddings."""

    centers: np.ndarray          # (k, E), unit rows
    assignment: np.ndarray       # (B,), center index per sample
    center_samples: np.ndarray   # (k,), batch index of the sample nearest each
                                 # center within its cluster; -1 if the cluster
                                 # ended up empty (degenerate duplicate batches)
    sse_history: list[float]

    def center_sample_indices(self) -> np.ndarray:
        """Valid cluster-center sample indices (empty clusters dropped)."""
        return self.center_samples[self.center_samples >= 0]


def _assign(embeddings: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # squared distance ranking == (-dot) ranking for unit rows; use distances
    # explicitly so ties resolve identically to the brute-force oracle
    d2 = np.sum((embeddings[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    return np.argmin(d2, axis=1)


def _sse(embeddings: np.ndarray, centers: np.ndarray, assignment: np.ndarray) -> float:
    return float(np.sum((embeddings - centers[assignment]) ** 2))


def _farthest_point_init(embeddings: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Greedy maximin seeding: first center random, then repeatedly the sample
    farthest from its nearest chosen center (ties: lowest index)."""
    b = embeddings.shape[0]
    chosen = [int(rng.integers(b))]
    min_d2 = np.sum((embeddings - embeddings[chosen[0]]) ** 2, axis=1)
    while len(chosen) < k:
        nxt = int(np.argmax(min_d2))
        chosen.append(nxt)
        min_d2 = np.minimum(min_d2, np.sum((embeddings - embeddings[nxt]) ** 2, axis=1))
    return embeddings[chosen].copy()


def kmeans(embeddings: np.ndarray, num_classes: int, iters: int,
           rng: np.random.Generator) -> ClusterModel:
    """Lloyd iterations on the unit sphere.

    Centers are re-normalized after every mean step; for unit-norm points the
    normalized mean is the constrained SSE optimum, so the within-cluster SSE
    is non-increasing across iterations (asserted).  An empty cluster is
    re-seeded at the sample currently farthest from its own center, which
    leaves the current SSE unchanged.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    b = embeddings.shape[0]
    if num_classes < 1:
        raise ValueError("num_classes must be >= 1")
    if b < num_classes:
        raise ValueError(f"batch of {b} is smaller than num_classes={num_classes}")
    norms = np.linalg.norm(embeddings, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-5):
        raise ValueError("kmeans expects unit-norm embedding rows")
    centers = _farthest_point_init(embeddings, num_classes, rng)
    assignment = _assign(embeddings, centers)
    history = [_sse(embeddings, centers, assignment)]
    for _ in range(iters):
        for c in range(num_classes):
            members = embeddings[assignment == c]
            if members.shape[0] == 0:
                dist_to_own = np.sum((embeddings - centers[assignment]) ** 2, axis=1)
                centers[c] = embeddings[int(np.argmax(dist_to_own))]
                continue
            mean = members.mean(axis=0)
            norm = np.linalg.norm(mean)
            if norm > 0:
                centers[c] = mean / norm
            # zero mean (antipodal members): keep the previous center
        assignment = _assign(embeddings, centers)
        sse = _sse(embeddings, centers, assignment)
        assert sse <= history[-1] + 1e-9, "SSE increased across a Lloyd iteration"
        history.append(sse)
    center_samples = np.full(num_classes, -1, dtype=np.int64)
    for c in range(num_classes):
        members = np.flatnonzero(assignment == c)
        if members.size:
            d2 = np.sum((embeddings[members] - centers[c]) ** 2, axis=1)
            center_samples[c] = members[int(np.argmin(d2))]
    return ClusterModel(centers, assignment, center_samples, history)


def map_sc(i: int, model: ClusterModel, embeddings: np.ndarray) -> int:
    """Cluster-center sample whose embedding is nearest row i (ties: lowest index)."""
    _check_index(i, embeddings.shape[0])
    cands = model.center_sample_indices()
    if cands.size == 0:
        raise ValueError("cluster model has no center samples")
    cands = np.sort(cands)
    d2 = np.sum((embeddings[cands] - embeddings[i]) ** 2, axis=1)
    return int(cands[int(np.argmin(d2))])


def soft_positive(k_self: np.ndarray, k_center: np.ndarray, gamma: float) -> np.ndarray:
    """Unit-norm blend gamma*k_self + (1-gamma)*k_center.

    The endpoints return the inputs bitwise (unit inputs are not re-divided by
    their own norm).  A near-zero blend (antipodal inputs at gamma=0.5) is an
    error rather than a silently rescaled logit.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must be in [0, 1]")
    if gamma == 1.0:
        return np.array(k_self, copy=True)
    if gamma == 0.0:
        return np.array(k_center, copy=True)
    blend = gamma * np.asarray(k_self, dtype=np.float64) + (1.0 - gamma) * np.asarray(
        k_center, dtype=np.float64
    )
    norm = np.linalg.norm(blend, axis=-1, keepdims=blend.ndim > 1)
    if np.any(norm < 1e-12):
        raise ValueError("degenerate soft positive: blend has zero norm")
    return blend / norm
