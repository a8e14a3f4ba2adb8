"""Ranking and classification metrics over boundary scores.

Average precision is the non-interpolated ranking definition computed per
video and macro-averaged; F1 is computed globally (micro) over all
transitions at a fixed threshold.  Both conventions are echoed into the
report so runs are self-describing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def average_precision(scores: np.ndarray, labels: np.ndarray) -> float | None:
    """Non-interpolated AP: sum of precision@k over positive ranks / #positives.

    Ties in score rank the earlier index first.  Returns None when there is no
    positive label (undefined; the caller excludes such videos).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-d and the same length")
    num_pos = int(labels.sum())
    if num_pos == 0:
        return None
    order = np.argsort(-scores, kind="stable")
    ranked = labels[order]
    cum_pos = np.cumsum(ranked)
    ks = np.arange(1, len(ranked) + 1)
    return float(np.sum((cum_pos / ks)[ranked]) / num_pos)


def mean_ap(per_video_ap: dict[int, float | None]) -> float:
    """Macro average over videos with a defined AP."""
    vals = [v for v in per_video_ap.values() if v is not None]
    if not vals:
        raise ValueError("no video has a defined AP")
    return float(np.mean(vals))


def f1_score(scores: np.ndarray, labels: np.ndarray, threshold: float = 0.5):
    """Global F1 at ``threshold`` (score >= threshold predicts positive).

    Returns (f1, tp, fp, fn); F1 is 0 by convention when both precision and
    recall vanish.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have the same shape")
    pred = scores >= threshold
    tp = int(np.sum(pred & labels))
    fp = int(np.sum(pred & ~labels))
    fn = int(np.sum(~pred & labels))
    if tp == 0:
        return 0.0, tp, fp, fn
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall), tp, fp, fn


def retrieve_top_k(embeddings: np.ndarray, query_index: int, k: int) -> list[int]:
    """Indices of the k most cosine-similar shots to the query, excluding it.

    Descending similarity; ties rank the lower index first.
    """
    n = embeddings.shape[0]
    if not 0 <= query_index < n:
        raise IndexError(f"query index {query_index} out of range")
    if k >= n:
        raise ValueError(f"k={k} must be smaller than the video length {n}")
    sims = embeddings @ embeddings[query_index]
    sims[query_index] = -np.inf
    order = np.argsort(-sims, kind="stable")
    return [int(i) for i in order[:k]]


@dataclass
class EvalReport:
    per_video_ap: dict[int, float | None]
    mean_average_precision: float
    f1: float
    tp: int
    fp: int
    fn: int
    threshold: float
    seed: int
    config_echo: dict[str, str] = field(default_factory=dict)

    def to_text(self) -> str:
        """Fixed key order, 4-decimal metrics; diffs cleanly across runs."""
        lines = [
            f"mean_ap = {self.mean_average_precision:.4f}",
            f"f1 = {self.f1:.4f}",
            f"tp = {self.tp}",
            f"fp = {self.fp}",
            f"fn = {self.fn}",
            f"threshold = {self.threshold:.4f}",
            f"seed = {self.seed}",
            "ap_definition = non-interpolated, ties break to earlier index",
            "f1_definition = global over all transitions",
        ]
        for key in sorted(self.config_echo):
            lines.append(f"config.{key} = {self.config_echo[key]}")
        lines.append("per_video_ap:")
        for vid in sorted(self.per_video_ap):
            ap = self.per_video_ap[vid]
            lines.append(f"  {vid} = " + ("undefined" if ap is None else f"{ap:.4f}"))
        return "\n".join(lines) + "\n"


def evaluate(scores: dict[int, np.ndarray], labels: dict[int, np.ndarray],
             threshold: float = 0.5, seed: int = 0,
             config_echo: dict[str, str] | None = None) -> EvalReport:
    """Score per-video transition rankings against boolean labels.

    ``labels[vid]`` must align with ``scores[vid]`` (one entry per transition).
    Videos without positives are excluded from the AP mean but still count in
    the global F1.
    """
    if set(scores) != set(labels):
        raise ValueError("scores and labels cover different video ids")
    per_video = {}
    all_scores = []
    all_labels = []
    for vid in sorted(scores):
        s, l = scores[vid], labels[vid]
        if len(s) != len(l):
            raise ValueError(f"video {vid}: {len(s)} scores vs {len(l)} labels")
        per_video[vid] = average_precision(s, l)
        all_scores.append(s)
        all_labels.append(l)
    flat_s = np.concatenate(all_scores) if all_scores else np.zeros(0)
    flat_l = np.concatenate(all_labels) if all_labels else np.zeros(0, dtype=bool)
    f1, tp, fp, fn = f1_score(flat_s, flat_l, threshold)
    return EvalReport(
        per_video_ap=per_video,
        mean_average_precision=mean_ap(per_video),
        f1=f1, tp=tp, fp=fp, fn=fn,
        threshold=threshold, seed=seed,
        config_echo=dict(config_echo or {}),
    )
