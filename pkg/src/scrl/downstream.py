"""Supervised scene-segmentation heads over frozen shot embeddings.

Two protocols: a sliding-window MLP that classifies "boundary at the window
center", and a bidirectional LSTM tagger that scores every shot as
scene-ending, run with middle-portion inference so each scored shot has
context on both sides.  Boundary scores always align with transitions
(i, i+1): entry t of a video's score vector is the probability that shot t
is the last shot of a scene, for t in [0, num_shots-2].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bilstm import BiLstmTagger, _sigmoid as _stable_sigmoid
from .corpus import Corpus, ShotFeature, Video
from .encoder import Mlp, SgdMomentum


def embed_corpus(encoder: Mlp, corpus: Corpus) -> Corpus:
    """Embed every shot with the frozen encoder.

    Returns a corpus with the same structure and labels whose feature
    dimension is the embedding width, so embeddings round-trip through the
    corpus binary format.
    """
    if corpus.dimension != encoder.input_dim:
        raise ValueError(
            f"corpus dimension {corpus.dimension} != encoder input {encoder.input_dim}"
        )
    videos = []
    for video in corpus.videos:
        emb = encoder.forward(video.feature_matrix()).astype(np.float32)
        shots = [ShotFeature(video.video_id, i, emb[i]) for i in range(len(video))]
        videos.append(Video(video.video_id, shots, video.scene_end.copy()))
    return Corpus(encoder.output_dim, videos, corpus.split_tag)


def weighted_bce_with_logits(logits: np.ndarray, labels: np.ndarray,
                             pos_weight: float, mask: np.ndarray | None = None):
    """Mean binary cross-entropy with a positive-class weight.

    Uses softplus for stability: loss_i = w*y*softplus(-z) + (1-y)*softplus(z).
    Returns (loss, dloss/dlogits); masked-out entries contribute nothing and
    the mean runs over the mask support.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    softplus = np.logaddexp(0.0, z)
    loss_el = pos_weight * y * np.logaddexp(0.0, -z) + (1.0 - y) * softplus
    sig = _stable_sigmoid(z)
    grad_el = pos_weight * y * (sig - 1.0) + (1.0 - y) * sig
    if mask is not None:
        denom = float(mask.sum())
        if denom == 0:
            raise ValueError("empty mask in weighted BCE")
        loss = float((loss_el * mask).sum() / denom)
        grad = grad_el * mask / denom
    else:
        denom = float(z.size)
        loss = float(loss_el.mean())
        grad = grad_el / denom
    return loss, grad.astype(logits.dtype, copy=False)


def _class_weight(labels: np.ndarray) -> float:
    pos = int(labels.sum())
    neg = int(labels.size - pos)
    if pos == 0 or neg == 0:
        raise ValueError("single-class training set: cannot train a boundary head")
    return neg / pos


# ---------------------------------------------------------------------------
# Window (boundary-based) protocol
# ---------------------------------------------------------------------------


@dataclass
class MlpHeadConfig:
    num_of_shot: int = 4            # window length; boundary sits at its center
    hidden_dims: tuple[int, ...] = (256,)
    dropout: float = 0.4
    batch_size: int = 128
    epochs: int = 200
    milestones: tuple[int, ...] = (50, 100, 150)
    lr: float = 0.05
    lr_decay: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if self.num_of_shot < 2 or self.num_of_shot % 2 != 0:
            raise ValueError("num_of_shot must be even and >= 2")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")


def build_windows(embedded: Corpus, num_of_shot: int):
    """Concatenated windows of consecutive same-video embeddings.

    Returns (X, y): X has one row per window (num_of_shot * E wide); the label
    is the scene-end flag of the shot just left of the window center.  Videos
    shorter than the window contribute nothing.
    """
    s = num_of_shot
    xs = []
    ys = []
    for video in embedded.videos:
        n = len(video)
        if n < s:
            continue
        feats = video.feature_matrix()
        for start in range(0, n - s + 1):
            center = start + s // 2 - 1
            xs.append(feats[start : start + s].reshape(-1))
            ys.append(bool(video.scene_end[center]))
    if not xs:
        raise ValueError("no training windows: every video is shorter than the window")
    return np.stack(xs), np.asarray(ys, dtype=bool)


@dataclass
class MlpHead:
    net: Mlp
    config: MlpHeadConfig
    pos_weight: float


def train_mlp_head(embedded: Corpus, config: MlpHeadConfig) -> MlpHead:
    """Train the window classifier with class-weighted BCE and SGD."""
    config.validate()
    x, y = build_windows(embedded, config.num_of_shot)
    pos_weight = _class_weight(y)
    rng = np.random.default_rng(config.seed)
    net = Mlp(
        (x.shape[1], *config.hidden_dims, 1),
        rng=rng,
        normalize_output=False,
        dropout=config.dropout,
        dtype=np.float32,
    )
    steps_per_epoch = max(1, x.shape[0] // config.batch_size)
    opt = SgdMomentum(
        net.parameters(), config.lr, total_steps=steps_per_epoch * config.epochs,
        schedule="milestone", milestones=config.milestones,
        steps_per_epoch=steps_per_epoch, gamma=config.lr_decay,
    )
    step = 0
    for _ in range(config.epochs):
        order = rng.permutation(x.shape[0])
        for b in range(steps_per_epoch):
            idx = order[b * config.batch_size : (b + 1) * config.batch_size]
            logits, cache = net.forward_train(x[idx], rng=rng)
            _, dlogits = weighted_bce_with_logits(logits[:, 0], y[idx], pos_weight)
            gw, gb, _ = net.backward(cache, dlogits[:, None])
            opt.step(net.parameters(), net.parameter_grads_flat(gw, gb), step)
            step += 1
    return MlpHead(net, config, pos_weight)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return _stable_sigmoid(np.asarray(z, dtype=np.float64))


def predict_boundaries_mlp(head: MlpHead, embedded: Corpus) -> dict[int, np.ndarray]:
    """Transition scores per video under the window protocol.

    A transition scores through the window centered on it; transitions too
    close to the video edges for a full window score 0.
    """
    s = head.config.num_of_shot
    half = s // 2
    out = {}
    for video in embedded.videos:
        n = len(video)
        scores = np.zeros(max(n - 1, 0), dtype=np.float64)
        if n >= s:
            feats = video.feature_matrix()
            starts = np.arange(0, n - s + 1)
            windows = np.stack([feats[st : st + s].reshape(-1) for st in starts])
            logits = head.net.forward(windows)[:, 0]
            probs = _sigmoid(logits)
            for st, p in zip(starts, probs):
                scores[st + half - 1] = p
        out[video.video_id] = scores
    return out


# ---------------------------------------------------------------------------
# Sequence (boundary-free) protocol
# ---------------------------------------------------------------------------


@dataclass
class BiLstmHeadConfig:
    shot_len: int = 40
    hidden_size: int = 512
    num_layers: int = 2
    inter_dropout: float = 0.6
    classifier_dropout: float = 0.7
    batch_size: int = 32
    epochs: int = 200
    milestones: tuple[int, ...] = (160, 180)
    lr: float = 0.05
    lr_decay: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if self.shot_len < 4 or self.shot_len % 4 != 0:
            raise ValueError("shot_len must be >= 4 and divisible by 4")
        if self.hidden_size < 1 or self.num_layers < 1:
            raise ValueError("hidden_size and num_layers must be >= 1")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")


@dataclass
class BiLstmHead:
    net: BiLstmTagger
    config: BiLstmHeadConfig
    pos_weight: float


def build_chunks(embedded: Corpus, shot_len: int):
    """Non-overlapping training chunks of shot_len steps per video.

    Short remainders are padded by repeating the final shot; padded steps are
    masked out of the loss.  Returns (X (N,T,E), y (N,T), mask (N,T)).
    """
    xs, ys, masks = [], [], []
    for video in embedded.videos:
        feats = video.feature_matrix()
        labels = video.scene_end.astype(np.float64)
        n = len(video)
        for start in range(0, n, shot_len):
            chunk = feats[start : start + shot_len]
            lab = labels[start : start + shot_len]
            valid = chunk.shape[0]
            if valid < shot_len:
                pad = np.repeat(chunk[-1:], shot_len - valid, axis=0)
                chunk = np.concatenate([chunk, pad], axis=0)
                lab = np.concatenate([lab, np.zeros(shot_len - valid)])
            mask = np.zeros(shot_len)
            mask[:valid] = 1.0
            xs.append(chunk)
            ys.append(lab)
            masks.append(mask)
    if not xs:
        raise ValueError("no training chunks: corpus is empty")
    return np.stack(xs), np.stack(ys), np.stack(masks)


def train_bilstm_head(embedded: Corpus, config: BiLstmHeadConfig) -> BiLstmHead:
    config.validate()
    x, y, mask = build_chunks(embedded, config.shot_len)
    pos_weight = _class_weight((y * mask).astype(bool)[mask.astype(bool)])
    rng = np.random.default_rng(config.seed)
    net = BiLstmTagger(
        input_size=embedded.dimension, hidden_size=config.hidden_size,
        num_layers=config.num_layers, rng=rng,
        inter_dropout=config.inter_dropout,
        classifier_dropout=config.classifier_dropout, dtype=np.float32,
    )
    steps_per_epoch = max(1, x.shape[0] // config.batch_size)
    opt = SgdMomentum(
        net.parameters(), config.lr, total_steps=steps_per_epoch * config.epochs,
        schedule="milestone", milestones=config.milestones,
        steps_per_epoch=steps_per_epoch, gamma=config.lr_decay,
    )
    step = 0
    for _ in range(config.epochs):
        order = rng.permutation(x.shape[0])
        for b in range(steps_per_epoch):
            idx = order[b * config.batch_size : (b + 1) * config.batch_size]
            logits, cache = net.forward_train(x[idx], rng=rng)
            _, dlogits = weighted_bce_with_logits(logits, y[idx], pos_weight, mask[idx])
            grads = net.backward(cache, dlogits)
            opt.step(net.parameters(), grads, step)
            step += 1
    return BiLstmHead(net, config, pos_weight)


def middle_portion(shot_len: int) -> tuple[int, int]:
    """Half-open window-local index range kept at inference.

    ceil(shot_len/4) .. ceil(3*shot_len/4) - 1 inclusive, returned as a
    half-open (start, stop).
    """
    return math.ceil(shot_len / 4), math.ceil(3 * shot_len / 4)


def bilstm_infer(head: BiLstmHead, video_feats: np.ndarray,
                 shot_len: int | None = None) -> np.ndarray:
    """Per-shot scene-end probabilities via middle-portion inference.

    Windows of shot_len slide with stride shot_len/2 over the sequence padded
    with replicated first/last shots; each window contributes only its middle
    portion, so the kept portions tile the sequence and every shot is scored
    exactly once.
    """
    if shot_len is None:
        shot_len = head.config.shot_len
    if shot_len != head.config.shot_len:
        raise ValueError("inference shot_len must match the trained head")
    n = video_feats.shape[0]
    if n == 0:
        raise ValueError("empty video")
    keep_lo, keep_hi = middle_portion(shot_len)
    kept = keep_hi - keep_lo  # == shot_len // 2 for shot_len divisible by 4
    num_windows = max(1, math.ceil(n / kept))
    pad_front = keep_lo
    needed = (num_windows - 1) * kept + shot_len - pad_front
    pad_back = max(0, needed - n)
    padded = np.concatenate(
        [np.repeat(video_feats[:1], pad_front, axis=0), video_feats,
         np.repeat(video_feats[-1:], pad_back, axis=0)],
        axis=0,
    )
    scores = np.empty(n, dtype=np.float64)
    filled = np.zeros(n, dtype=bool)
    for w in range(num_windows):
        start = w * kept
        window = padded[start : start + shot_len]
        logits = head.net.forward(window[None, :, :])[0]
        probs = _sigmoid(logits)
        for local in range(keep_lo, keep_hi):
            orig = start + local - pad_front
            if 0 <= orig < n:
                assert not filled[orig], "middle portions must not overlap"
                scores[orig] = probs[local]
                filled[orig] = True
    assert filled.all(), "middle portions must cover every shot"
    return scores


def predict_boundaries_bilstm(head: BiLstmHead, embedded: Corpus) -> dict[int, np.ndarray]:
    """Transition scores per video: the final shot's (trivially true)
    scene-end score is dropped so entries align with transitions."""
    out = {}
    for video in embedded.videos:
        per_shot = bilstm_infer(head, video.feature_matrix())
        out[video.video_id] = per_shot[:-1]
    return out


def predict_boundaries(head, embedded: Corpus, protocol: str) -> dict[int, np.ndarray]:
    """Dispatch on protocol name ('mlp' or 'bilstm'); checks the head type."""
    if protocol == "mlp":
        if not isinstance(head, MlpHead):
            raise TypeError("protocol 'mlp' requires an MlpHead")
        return predict_boundaries_mlp(head, embedded)
    if protocol == "bilstm":
        if not isinstance(head, BiLstmHead):
            raise TypeError("protocol 'bilstm' requires a BiLstmHead")
        return predict_boundaries_bilstm(head, embedded)
    raise ValueError(f"unknown protocol {protocol!r}")


def save_head(head, path) -> None:
    """Serialize either head kind into the named-tensor container."""
    from . import tensorio

    tensors: dict[str, np.ndarray] = {}
    if isinstance(head, MlpHead):
        c = head.config
        meta = [
            1, c.num_of_shot, c.batch_size, c.epochs,
            len(c.hidden_dims), *c.hidden_dims, len(c.milestones), *c.milestones,
        ]
        tensors["meta_f"] = np.array(
            [head.pos_weight, c.dropout, c.lr, c.lr_decay], dtype="<f8"
        )
        for i, (w, b) in enumerate(zip(head.net.weights, head.net.biases)):
            tensors[f"w{i}"] = w.astype("<f4")
            tensors[f"b{i}"] = b.astype("<f4")
    elif isinstance(head, BiLstmHead):
        c = head.config
        meta = [
            2, c.shot_len, c.hidden_size, c.num_layers, c.batch_size, c.epochs,
            len(c.milestones), *c.milestones,
        ]
        tensors["meta_f"] = np.array(
            [head.pos_weight, c.inter_dropout, c.classifier_dropout, c.lr, c.lr_decay],
            dtype="<f8",
        )
        for li, layer in enumerate(head.net.layers):
            for tag, d in (("f", layer.fwd), ("b", layer.bwd)):
                tensors[f"l{li}{tag}_w"] = d.w.astype("<f4")
                tensors[f"l{li}{tag}_u"] = d.u.astype("<f4")
                tensors[f"l{li}{tag}_b"] = d.b.astype("<f4")
        tensors["cls_w"] = head.net.cls_w.astype("<f4")
        tensors["cls_b"] = np.asarray(head.net.cls_b, dtype="<f4").reshape(1)
    else:
        raise TypeError(f"unknown head type {type(head)!r}")
    tensors["meta_i"] = np.array(meta, dtype="<i8")
    tensors["seed"] = np.array([head.config.seed], dtype="<u8")
    tensorio.save_tensors(path, tensors)


def load_head(path):
    from . import tensorio

    tensors = tensorio.load_tensors(path)
    meta = [int(x) for x in tensors["meta_i"]]
    meta_f = tensors["meta_f"]
    seed = int(tensors["seed"][0])
    kind = meta[0]
    if kind == 1:
        num_of_shot, batch_size, epochs = meta[1:4]
        n_hidden = meta[4]
        hidden = tuple(meta[5 : 5 + n_hidden])
        n_ms = meta[5 + n_hidden]
        milestones = tuple(meta[6 + n_hidden : 6 + n_hidden + n_ms])
        cfg = MlpHeadConfig(
            num_of_shot=num_of_shot, hidden_dims=hidden,
            dropout=float(meta_f[1]), batch_size=batch_size, epochs=epochs,
            milestones=milestones, lr=float(meta_f[2]), lr_decay=float(meta_f[3]),
            seed=seed,
        )
        num_layers = len([k for k in tensors if k.startswith("w")])
        dims = [tensors["w0"].shape[0]] + [tensors[f"w{i}"].shape[1] for i in range(num_layers)]
        net = Mlp(dims, rng=np.random.default_rng(0), normalize_output=False,
                  dropout=cfg.dropout, dtype=np.float32)
        net.weights = [tensors[f"w{i}"].astype(np.float32) for i in range(num_layers)]
        net.biases = [tensors[f"b{i}"].astype(np.float32) for i in range(num_layers)]
        return MlpHead(net, cfg, float(meta_f[0]))
    if kind == 2:
        shot_len, hidden_size, num_layers, batch_size, epochs = meta[1:6]
        n_ms = meta[6]
        milestones = tuple(meta[7 : 7 + n_ms])
        cfg = BiLstmHeadConfig(
            shot_len=shot_len, hidden_size=hidden_size, num_layers=num_layers,
            inter_dropout=float(meta_f[1]), classifier_dropout=float(meta_f[2]),
            batch_size=batch_size, epochs=epochs, milestones=milestones,
            lr=float(meta_f[3]), lr_decay=float(meta_f[4]), seed=seed,
        )
        input_size = tensors["l0f_w"].shape[0]
        net = BiLstmTagger(
            input_size=input_size, hidden_size=hidden_size, num_layers=num_layers,
            rng=np.random.default_rng(0), inter_dropout=cfg.inter_dropout,
            classifier_dropout=cfg.classifier_dropout, dtype=np.float32,
        )
        for li, layer in enumerate(net.layers):
            for tag, d in (("f", layer.fwd), ("b", layer.bwd)):
                d.w = tensors[f"l{li}{tag}_w"].astype(np.float32)
                d.u = tensors[f"l{li}{tag}_u"].astype(np.float32)
                d.b = tensors[f"l{li}{tag}_b"].astype(np.float32)
        net.cls_w = tensors["cls_w"].astype(np.float32)
        net.cls_b = np.array(tensors["cls_b"][0], dtype=np.float32)
        return BiLstmHead(net, cfg, float(meta_f[0]))
    raise ValueError(f"unknown head kind {kind}")


def transition_labels(corpus: Corpus) -> dict[int, np.ndarray]:
    """Boolean label per transition (i, i+1): True when shot i ends a scene.

    The final shot is excluded everywhere since the end of a video trivially
    ends a scene.
    """
    return {v.video_id: v.scene_end[:-1].copy() for v in corpus.videos}


def save_scores(scores: dict[int, np.ndarray], path) -> None:
    """One line per video: video_id<TAB>comma-joined scores, 6 decimals."""
    with open(path, "w") as fh:
        for vid in sorted(scores):
            joined = ",".join(f"{s:.6f}" for s in scores[vid])
            fh.write(f"{vid}\t{joined}\n")


def load_scores(path) -> dict[int, np.ndarray]:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            vid_str, _, rest = line.partition("\t")
            vid = int(vid_str)
            if vid in out:
                raise ValueError(f"duplicate video id {vid} in scores file")
            out[vid] = (
                np.array([float(t) for t in rest.split(",")]) if rest else np.zeros(0)
            )
    return out
