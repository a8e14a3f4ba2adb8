"""Synthetic long-video corpora of shot feature vectors with planted scene structure.

A corpus is an ordered collection of videos; each video is an ordered run of
shots (one unit-norm feature vector per shot) plus a per-shot flag marking the
last shot of every scene.  Scenes are planted as latent centers on the unit
sphere; a configurable fraction of scene segments returns to an earlier
latent, which produces non-linear narratives (same semantic cluster, fresh
scene label, hence a ground-truth boundary at every return).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"SCRL"
FORMAT_VERSION = 1

SPLIT_TAGS = ("train", "val", "test", "unsplit")


class CorpusFormatError(ValueError):
    """Raised when a corpus file violates the binary format."""


@dataclass
class ShotFeature:
    video_id: int
    shot_index: int
    features: np.ndarray  # (D,), float32, unit norm


@dataclass
class Video:
    video_id: int
    shots: list[ShotFeature]
    scene_end: np.ndarray  # (num_shots,), bool; True on the last shot of a scene

    def __len__(self) -> int:
        return len(self.shots)

    def feature_matrix(self) -> np.ndarray:
        """Stack shot features into a (num_shots, D) float32 matrix."""
        return np.stack([s.features for s in self.shots])

    def num_scenes(self) -> int:
        return int(np.count_nonzero(self.scene_end))


@dataclass
class Corpus:
    dimension: int
    videos: list[Video]
    split_tag: str = "unsplit"

    @property
    def num_shots(self) -> int:
        return sum(len(v) for v in self.videos)

    def validate(self) -> None:
        """Check structural invariants; raises ValueError on the first violation."""
        if self.split_tag not in SPLIT_TAGS:
            raise ValueError(f"unknown split_tag {self.split_tag!r}")
        seen = set()
        for video in self.videos:
            if video.video_id in seen:
                raise ValueError(f"duplicate video_id {video.video_id}")
            seen.add(video.video_id)
            if len(video.shots) == 0:
                raise ValueError(f"video {video.video_id} has no shots")
            if len(video.scene_end) != len(video.shots):
                raise ValueError(
                    f"video {video.video_id}: scene_end length "
                    f"{len(video.scene_end)} != shot count {len(video.shots)}"
                )
            if not video.scene_end[-1]:
                raise ValueError(f"video {video.video_id}: final shot must end a scene")
            for shot in video.shots:
                if shot.features.shape != (self.dimension,):
                    raise ValueError(
                        f"video {video.video_id} shot {shot.shot_index}: feature "
                        f"length {shot.features.shape} != dimension {self.dimension}"
                    )
                if not np.all(np.isfinite(shot.features)):
                    raise ValueError(
                        f"video {video.video_id} shot {shot.shot_index}: "
                        "non-finite feature component"
                    )


@dataclass
class SynthesisConfig:
    num_videos: int = 100
    scenes_per_video: int = 10
    shots_per_scene_min: int = 6
    shots_per_scene_max: int = 14
    dimension: int = 32
    latent_noise_sigma: float = 0.3
    interleave_prob: float = 0.3
    seed: int = 0

    def validate(self) -> None:
        if self.num_videos < 1:
            raise ValueError("num_videos must be >= 1")
        if self.scenes_per_video < 1:
            raise ValueError("scenes_per_video must be >= 1")
        if self.shots_per_scene_min < 1:
            raise ValueError("shots_per_scene_min must be >= 1")
        if self.shots_per_scene_min > self.shots_per_scene_max:
            raise ValueError("shots_per_scene_min must be <= shots_per_scene_max")
        if self.dimension < 2:
            raise ValueError("dimension must be >= 2 (unit-sphere sampling degenerate)")
        if self.latent_noise_sigma < 0:
            raise ValueError("latent_noise_sigma must be >= 0")
        if not 0.0 <= self.interleave_prob <= 1.0:
            raise ValueError("interleave_prob must be in [0, 1]")


def _unit_sphere_sample(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    norm = np.linalg.norm(v)
    while norm < 1e-12:  # astronomically unlikely; redraw rather than divide by ~0
        v = rng.standard_normal(dim)
        norm = np.linalg.norm(v)
    return (v / norm).astype(np.float32)


def generate_corpus(config: SynthesisConfig) -> Corpus:
    """Generate a corpus deterministically from the config seed.

    Each scene draws a latent center uniformly from the unit sphere; each shot
    is the L2-normalized sum of its scene center and isotropic Gaussian noise.
    With probability ``interleave_prob`` a new scene segment reuses an earlier
    latent center from the same video (new scene label, same cluster).
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    videos = []
    for vid in range(config.num_videos):
        used_centers: list[np.ndarray] = []
        shots: list[ShotFeature] = []
        ends: list[bool] = []
        for _ in range(config.scenes_per_video):
            if used_centers and rng.random() < config.interleave_prob:
                center = used_centers[rng.integers(len(used_centers))]
            else:
                center = _unit_sphere_sample(rng, config.dimension)
            used_centers.append(center)
            n_shots = int(
                rng.integers(config.shots_per_scene_min, config.shots_per_scene_max + 1)
            )
            for k in range(n_shots):
                if config.latent_noise_sigma == 0.0:
                    feat = center.copy()
                else:
                    raw = center.astype(np.float64) + config.latent_noise_sigma * rng.standard_normal(
                        config.dimension
                    )
                    feat = (raw / np.linalg.norm(raw)).astype(np.float32)
                shots.append(ShotFeature(vid, len(shots), feat))
                ends.append(k == n_shots - 1)
        videos.append(Video(vid, shots, np.asarray(ends, dtype=bool)))
    return Corpus(config.dimension, videos, "unsplit")


def split_corpus(
    corpus: Corpus,
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2),
    seed: int = 0,
) -> tuple[Corpus, Corpus, Corpus]:
    """Partition videos into disjoint train/val/test corpora by shuffled order.

    Split sizes are floor(fraction * N) with the remainder distributed by
    largest fractional part (ties to the earlier split), so e.g. 10 videos at
    (0.6, 0.2, 0.2) give sizes (6, 2, 2).
    """
    for f in fractions:
        if f < 0:
            raise ValueError("fractions must be non-negative")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    n = len(corpus.videos)
    raw = [f * n for f in fractions]
    counts = [int(np.floor(r)) for r in raw]
    remainders = [r - c for r, c in zip(raw, counts)]
    for _ in range(n - sum(counts)):
        best = max(range(3), key=lambda i: (remainders[i], -i))
        counts[best] += 1
        remainders[best] = -1.0
    for frac, count in zip(fractions, counts):
        if frac > 0 and count == 0:
            raise ValueError("fewer videos than non-zero splits")

    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    tagged = []
    start = 0
    for tag, count in zip(("train", "val", "test"), counts):
        idx = sorted(order[start : start + count])
        tagged.append(Corpus(corpus.dimension, [corpus.videos[i] for i in idx], tag))
        start += count
    return tagged[0], tagged[1], tagged[2]


def save_corpus(corpus: Corpus, path) -> None:
    """Write the little-endian binary corpus format (see ``load_corpus``)."""
    corpus.validate()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", FORMAT_VERSION, corpus.dimension, len(corpus.videos)))
        for video in corpus.videos:
            fh.write(struct.pack("<II", video.video_id, len(video.shots)))
            bits = np.packbits(video.scene_end.astype(np.uint8), bitorder="little")
            fh.write(bits.tobytes())
            feats = np.stack([s.features for s in video.shots]).astype("<f4")
            fh.write(feats.tobytes())


def load_corpus(path) -> Corpus:
    """Read a corpus file; inverse of ``save_corpus`` (the split tag is not stored).

    Layout (little-endian): magic ``SCRL``, u32 version, u32 dimension,
    u32 num_videos; per video u32 video_id, u32 num_shots, a LSB-first
    scene_end bitmask of ceil(num_shots/8) bytes, then num_shots*dimension f32
    features.  Trailing bytes are an error.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    off = 0

    def take(n: int, what: str) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise CorpusFormatError(f"truncated file: expected {what}")
        chunk = blob[off : off + n]
        off += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise CorpusFormatError("bad magic: not a corpus file")
    version, dim, num_videos = struct.unpack("<III", take(12, "header"))
    if version != FORMAT_VERSION:
        raise CorpusFormatError(f"unsupported format version {version}")
    videos = []
    for _ in range(num_videos):
        video_id, num_shots = struct.unpack("<II", take(8, "video header"))
        mask_len = (num_shots + 7) // 8
        mask = np.frombuffer(take(mask_len, "scene_end bitmask"), dtype=np.uint8)
        ends = np.unpackbits(mask, count=num_shots, bitorder="little").astype(bool)
        feats = np.frombuffer(
            take(num_shots * dim * 4, "shot features"), dtype="<f4"
        ).reshape(num_shots, dim)
        if not np.all(np.isfinite(feats)):
            raise CorpusFormatError(f"non-finite feature values in video {video_id}")
        shots = [ShotFeature(video_id, i, feats[i].copy()) for i in range(num_shots)]
        videos.append(Video(video_id, shots, ends))
    if off != len(blob):
        raise CorpusFormatError(f"trailing bytes: {len(blob) - off} after last video")
    corpus = Corpus(dim, videos, "unsplit")
    corpus.validate()
    return corpus


def corpora_equal(a: Corpus, b: Corpus, check_tag: bool = False) -> bool:
    """Field-by-field equality; the split tag only participates if requested."""
    if a.dimension != b.dimension or len(a.videos) != len(b.videos):
        return False
    if check_tag and a.split_tag != b.split_tag:
        return False
    for va, vb in zip(a.videos, b.videos):
        if va.video_id != vb.video_id or len(va) != len(vb):
            return False
        if not np.array_equal(va.scene_end, vb.scene_end):
            return False
        for sa, sb in zip(va.shots, vb.shots):
            if sa.shot_index != sb.shot_index or not np.array_equal(sa.features, sb.features):
                return False
    return True
