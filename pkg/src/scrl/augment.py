"""Feature-space view augmentation and scene-agnostic clip shuffling.

The two views are asymmetric: the query view gets coordinate masking and
additive Gaussian noise only, while the key view additionally gets
per-coordinate multiplicative jitter (the appearance-distortion analog).
Both views are re-normalized to the unit sphere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, ShotFeature

_MASK_RETRIES = 16


@dataclass
class AugmentConfig:
    mask_prob: float = 0.1        # per-coordinate dropout, both views
    noise_sigma: float = 0.05     # additive Gaussian std, both views
    jitter_strength: float = 0.4  # multiplicative range half-width, key view only

    def validate(self) -> None:
        if not 0.0 <= self.mask_prob < 1.0:
            raise ValueError("mask_prob must be in [0, 1)")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.jitter_strength < 0:
            raise ValueError("jitter_strength must be >= 0")


@dataclass
class ClipStream:
    """Flat shot sequence assembled from fixed-length clips of many videos."""

    shots: list[ShotFeature]
    clip_len: int
    clip_boundaries: list[int]  # start index of each clip within ``shots``

    def __len__(self) -> int:
        return len(self.shots)

    def feature_matrix(self) -> np.ndarray:
        return np.stack([s.features for s in self.shots])


def _draw_masks(x: np.ndarray, mask_prob: float, rng: np.random.Generator) -> np.ndarray:
    """Per-row keep masks; rows that would be fully zeroed are redrawn."""
    keep = rng.random(x.shape) >= mask_prob
    if mask_prob == 0.0:
        return keep
    for _ in range(_MASK_RETRIES):
        dead = np.linalg.norm(np.where(keep, x, 0.0), axis=-1) == 0.0
        if not dead.any():
            return keep
        keep[dead] = rng.random((int(dead.sum()), x.shape[-1])) >= mask_prob
    raise ValueError("degenerate mask: all coordinates masked after bounded retries")


def _finish(raw: np.ndarray, squeeze: bool) -> np.ndarray:
    norms = np.linalg.norm(raw, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("degenerate zero vector after augmentation")
    out = raw / norms
    return out[0] if squeeze else out


def aug_query(x: np.ndarray, rng: np.random.Generator, config: AugmentConfig) -> np.ndarray:
    """Query view: mask coordinates, add Gaussian noise, renormalize.

    Accepts a single vector (D,) or a batch (B, D); the output matches.
    With mask_prob == 0 and noise_sigma == 0 this is plain normalization.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    x = np.atleast_2d(x)
    keep = _draw_masks(x, config.mask_prob, rng)
    out = np.where(keep, x, 0.0)
    if config.noise_sigma > 0:
        out = out + config.noise_sigma * rng.standard_normal(out.shape)
    return _finish(out, squeeze)


def aug_key(x: np.ndarray, rng: np.random.Generator, config: AugmentConfig) -> np.ndarray:
    """Key view: the query pipeline plus multiplicative jitter in [1-j, 1+j].

    With jitter_strength == 0 the jitter stage is skipped, so the result is
    identical to ``aug_query`` under the same rng state.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    x = np.atleast_2d(x)
    keep = _draw_masks(x, config.mask_prob, rng)
    out = np.where(keep, x, 0.0)
    if config.noise_sigma > 0:
        out = out + config.noise_sigma * rng.standard_normal(out.shape)
    if config.jitter_strength > 0:
        j = config.jitter_strength
        out = out * rng.uniform(1.0 - j, 1.0 + j, size=out.shape)
    return _finish(out, squeeze)


def clip_shuffle(corpus: Corpus, clip_len: int, rng: np.random.Generator) -> ClipStream:
    """Cut every video into consecutive clips of ``clip_len`` shots and splice
    the clips from all videos in a uniformly random order.

    The final clip of a video may be shorter; short clips are kept.  Order
    within each clip is preserved, so the multiset of (video_id, shot_index)
    pairs is conserved.
    """
    if clip_len < 1:
        raise ValueError("clip_len must be >= 1")
    if not corpus.videos:
        raise ValueError("cannot build a clip stream from an empty corpus")
    clips: list[list[ShotFeature]] = []
    for video in corpus.videos:
        for start in range(0, len(video.shots), clip_len):
            clips.append(video.shots[start : start + clip_len])
    order = rng.permutation(len(clips))
    shots: list[ShotFeature] = []
    boundaries: list[int] = []
    for ci in order:
        boundaries.append(len(shots))
        shots.extend(clips[ci])
    return ClipStream(shots, clip_len, boundaries)


def sequential_stream(corpus: Corpus, clip_len: int) -> ClipStream:
    """The unshuffled counterpart of ``clip_shuffle``: clips in corpus order."""
    if clip_len < 1:
        raise ValueError("clip_len must be >= 1")
    if not corpus.videos:
        raise ValueError("cannot build a clip stream from an empty corpus")
    shots: list[ShotFeature] = []
    boundaries: list[int] = []
    for video in corpus.videos:
        for start in range(0, len(video.shots), clip_len):
            boundaries.append(len(shots))
            shots.extend(video.shots[start : start + clip_len])
    return ClipStream(shots, clip_len, boundaries)
