"""Self-supervised pretraining loop over shuffled clip streams.

One step: augment the batch asymmetrically, embed the query view, pick a
positive per query via the configured selection strategy, embed the selected
key-view rows (key encoder when one exists, otherwise the query encoder),
detach the positives, score against negatives (memory queue or in-batch,
framework dependent), backprop through the query encoder (and predictor),
take an SGD step, EMA-update the key encoder, and enqueue the positives.

Framework variants differ on two axes: negatives (queue / in-batch / none)
and whether a momentum key encoder exists.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import selection as sel
from .augment import AugmentConfig, aug_key, aug_query, clip_shuffle, sequential_stream
from .corpus import Corpus
from .encoder import EncoderConfig, Mlp, SgdMomentum, momentum_update

FRAMEWORKS = ("moco", "simclr", "byol", "simsiam")


class MemoryQueue:
    """Fixed-capacity FIFO ring of unit-norm embedding rows.

    Contents are always the most recent min(total_enqueued, capacity) rows.
    When constructed with an rng the ring is pre-filled with random unit
    vectors so early steps have valid negatives; the queue counts as warm once
    real enqueues have overwritten the whole prefill.
    """

    def __init__(self, capacity: int, dim: int, rng: np.random.Generator | None = None,
                 dtype=np.float32):
        if capacity < 1:
            raise ValueError("queue capacity must be >= 1")
        self.capacity = capacity
        self.dim = dim
        self._buf = np.zeros((capacity, dim), dtype=dtype)
        self._cursor = 0
        self._size = 0
        self._real = 0
        if rng is not None:
            fill = rng.standard_normal((capacity, dim))
            fill /= np.linalg.norm(fill, axis=1, keepdims=True)
            self._buf[:] = fill
            self._size = capacity

    def __len__(self) -> int:
        return self._size

    @property
    def warm(self) -> bool:
        return self._real >= self.capacity

    def enqueue(self, rows: np.ndarray) -> None:
        rows = np.atleast_2d(np.asarray(rows, dtype=self._buf.dtype))
        if rows.shape[1] != self.dim:
            raise ValueError(f"expected rows of dim {self.dim}, got {rows.shape[1]}")
        n = rows.shape[0]
        if n >= self.capacity:
            # only the last `capacity` rows survive
            self._buf[:] = rows[n - self.capacity:]
            self._cursor = 0
            self._size = self.capacity
        else:
            end = self._cursor + n
            if end <= self.capacity:
                self._buf[self._cursor:end] = rows
            else:
                split = self.capacity - self._cursor
                self._buf[self._cursor:] = rows[:split]
                self._buf[: end - self.capacity] = rows[split:]
            self._cursor = end % self.capacity
            self._size = min(self._size + n, self.capacity)
        self._real = min(self._real + n, self.capacity)

    def array(self) -> np.ndarray:
        """Snapshot in FIFO order, oldest first."""
        if self._size < self.capacity:
            return self._buf[: self._size].copy()
        return np.roll(self._buf, -self._cursor, axis=0).copy()


def info_nce(q: np.ndarray, k_pos: np.ndarray, negatives: np.ndarray | None,
             tau: float, neg_mask: np.ndarray | None = None):
    """Temperature-scaled contrastive loss over one positive per query.

    loss_i = -log( exp(q.k+_i/tau) / (exp(q.k+_i/tau) + sum_n exp(q.neg_n/tau)) ),
    averaged over the batch.  Positives and negatives are constants; the
    gradient is returned for q only.  ``neg_mask`` rows mark which negatives
    participate for each query (True = include).  With no negatives the
    denominator equals the numerator and the loss is exactly 0.
    """
    q = np.asarray(q, dtype=np.float64)
    k_pos = np.asarray(k_pos, dtype=np.float64)
    if tau <= 0:
        raise ValueError("tau must be > 0")
    if q.shape != k_pos.shape:
        raise ValueError(f"q/k shape mismatch: {q.shape} vs {k_pos.shape}")
    b = q.shape[0]
    s_pos = np.sum(q * k_pos, axis=1) / tau  # (B,)
    if negatives is None or len(negatives) == 0:
        loss = 0.0
        grad_q = np.zeros_like(q)
        return loss, grad_q
    negatives = np.asarray(negatives, dtype=np.float64)
    s_neg = (q @ negatives.T) / tau  # (B, N)
    if neg_mask is not None:
        if neg_mask.shape != s_neg.shape:
            raise ValueError("neg_mask shape must be (B, N)")
        s_neg = np.where(neg_mask, s_neg, -np.inf)
    m = np.maximum(s_pos, np.max(s_neg, axis=1))  # rowwise stabilizer
    e_pos = np.exp(s_pos - m)
    e_neg = np.exp(s_neg - m[:, None])
    den = e_pos + e_neg.sum(axis=1)
    loss = float(np.mean(np.log(den) - np.log(e_pos)))
    # d loss_i / d s_pos_i = p_pos - 1; d loss_i / d s_neg_in = p_neg_in
    p_pos = e_pos / den
    p_neg = e_neg / den[:, None]
    grad_q = ((p_pos - 1.0)[:, None] * k_pos + p_neg @ negatives) / (tau * b)
    return loss, grad_q


def _cosine_and_grad(z: np.ndarray, target: np.ndarray):
    """Rowwise cos(z, target) with gradient wrt z; target treated constant."""
    t = target / np.linalg.norm(target, axis=1, keepdims=True)
    zn = np.linalg.norm(z, axis=1, keepdims=True)
    if np.any(zn == 0.0):
        raise ValueError("zero-norm predictor output in cosine similarity")
    zh = z / zn
    sims = np.sum(zh * t, axis=1)
    grad = (t - zh * sims[:, None]) / zn
    return sims, grad


def negative_free_loss(q: np.ndarray, k: np.ndarray, predictor: Mlp):
    """Symmetric predictor similarity loss with stop-gradient targets:

    loss = -2 * mean_i( cos(P(q_i), sg(k_i)) + cos(P(k_i), sg(q_i)) )

    Gradient flows into q only through P(q), into k only through P(k), and
    into the predictor through both terms; the stop-gradient targets receive
    nothing.  Returns (loss, grad_q, grad_k, predictor_param_grads).
    """
    if predictor is None:
        raise ValueError("this framework requires a predictor head")
    q = np.asarray(q, dtype=predictor.dtype)
    k = np.asarray(k, dtype=predictor.dtype)
    b = q.shape[0]
    pq, cache_q = predictor.forward_train(q)
    pk, cache_k = predictor.forward_train(k)
    sims_qk, dpq = _cosine_and_grad(pq, k)
    sims_kq, dpk = _cosine_and_grad(pk, q)
    loss = float(-2.0 * np.mean(sims_qk + sims_kq))
    scale = -2.0 / b
    gw_q, gb_q, gin_q = predictor.backward(cache_q, scale * dpq)
    gw_k, gb_k, gin_k = predictor.backward(cache_k, scale * dpk)
    pred_grads = predictor.parameter_grads_flat(
        [a + c for a, c in zip(gw_q, gw_k)], [a + c for a, c in zip(gb_q, gb_k)]
    )
    return loss, gin_q, gin_k, pred_grads


@dataclass
class SslConfig:
    framework: str = "moco"       # moco | simclr | byol | simsiam
    strategy_name: str = "soft_sc"  # sa | random | nn | sc | soft_sc
    tau: float = 0.07
    rho: int = 16                 # clip length for the shuffled stream
    clip_shuffling: bool = True
    batch_size: int = 1024
    epochs: int = 100
    lr: float = 0.03
    queue_capacity: int = 65536
    momentum: float = 0.999
    random_n: int = 1
    nn_m: int = 8
    num_classes: int = 24
    kmeans_iters: int = 10
    gamma: float = 0.5
    predictor_hidden: int = 0     # 0: single linear layer E -> E
    seed: int = 0

    def strategy(self) -> sel.Strategy:
        return sel.strategy_from_name(
            self.strategy_name, random_n=self.random_n, nn_m=self.nn_m,
            num_classes=self.num_classes, kmeans_iters=self.kmeans_iters,
            gamma=self.gamma,
        )

    def validate(self) -> None:
        if self.framework not in FRAMEWORKS:
            raise ValueError(f"unknown framework {self.framework!r}")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.rho < 1:
            raise ValueError("rho must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0.0 <= self.momentum <= 1.0:
            raise ValueError("momentum must be in [0, 1]")
        if self.strategy_name in ("sc", "soft_sc") and self.num_classes > self.batch_size:
            raise ValueError("num_classes cannot exceed batch_size")
        self.strategy()  # raises on unknown names / bad params

    @property
    def uses_queue(self) -> bool:
        return self.framework == "moco"

    @property
    def uses_momentum_encoder(self) -> bool:
        return self.framework in ("moco", "byol")

    @property
    def uses_negatives(self) -> bool:
        return self.framework in ("moco", "simclr")

    @property
    def uses_predictor(self) -> bool:
        return self.framework in ("byol", "simsiam")


@dataclass
class TrainState:
    query: Mlp
    key: Mlp | None
    predictor: Mlp | None
    queue: MemoryQueue | None
    optimizer: SgdMomentum
    predictor_optimizer: SgdMomentum | None
    step: int = 0
    loss_history: list[float] = field(default_factory=list)

    def check_matches(self, cfg: SslConfig) -> None:
        if (self.key is not None) != cfg.uses_momentum_encoder:
            raise ValueError("key encoder presence does not match framework")
        if (self.queue is not None) != cfg.uses_queue:
            raise ValueError("memory queue presence does not match framework")
        if (self.predictor is not None) != cfg.uses_predictor:
            raise ValueError("predictor presence does not match framework")
        if self.key is not None and self.key.layer_dims != self.query.layer_dims:
            raise ValueError("key encoder architecture differs from query encoder")


@dataclass
class StepRngs:
    """Independent streams so augmentation draws never shift strategy draws."""

    augment: np.random.Generator
    strategy: np.random.Generator


def select_positive_indices(strategy: sel.Strategy, q_emb: np.ndarray,
                            rng: np.random.Generator) -> np.ndarray:
    """Positive index per query row under the given strategy.

    For the soft strategy this returns the cluster-center component; the self
    component is the identity by definition.
    """
    b = q_emb.shape[0]
    if isinstance(strategy, sel.SelfAugmented):
        return np.arange(b)
    if isinstance(strategy, sel.RandomNearby):
        return np.array([sel.map_rs(i, strategy.n, b, rng) for i in range(b)])
    if isinstance(strategy, sel.NearestNeighbor):
        return np.array([sel.map_nn(i, strategy.m, q_emb) for i in range(b)])
    if isinstance(strategy, (sel.SceneConsistency, sel.SoftSceneConsistency)):
        model = sel.kmeans(q_emb, strategy.num_classes, strategy.kmeans_iters, rng)
        return np.array([sel.map_sc(i, model, q_emb) for i in range(b)])
    raise TypeError(f"unknown strategy {strategy!r}")


def train_step(state: TrainState, batch: np.ndarray, cfg: SslConfig,
               aug_cfg: AugmentConfig, rngs: StepRngs) -> float:
    """One optimization step; returns the batch loss."""
    state.check_matches(cfg)
    strategy = cfg.strategy()
    if isinstance(strategy, (sel.SceneConsistency, sel.SoftSceneConsistency)):
        if batch.shape[0] < strategy.num_classes:
            raise ValueError("batch smaller than num_classes under scene-consistency")

    q_view = aug_query(batch, rngs.augment, aug_cfg)
    k_view = aug_key(batch, rngs.augment, aug_cfg)

    q, q_cache = state.query.forward_train(q_view)
    key_encoder = state.key if state.key is not None else state.query
    kv = key_encoder.forward(k_view)  # detached: plain inference pass

    pos_idx = select_positive_indices(strategy, q, rngs.strategy)
    if isinstance(strategy, sel.SoftSceneConsistency):
        k_pos = sel.soft_positive(kv, kv[pos_idx], strategy.gamma)
    else:
        k_pos = kv[pos_idx]

    if cfg.framework == "moco":
        negatives = state.queue.array()
        loss, grad_q = info_nce(q, k_pos, negatives, cfg.tau)
    elif cfg.framework == "simclr":
        b = q.shape[0]
        neg_mask = np.ones((b, b), dtype=bool)
        neg_mask[np.arange(b), pos_idx] = False
        loss, grad_q = info_nce(q, k_pos, kv, cfg.tau, neg_mask=neg_mask)
    else:
        loss, grad_q, _grad_k, pred_grads = negative_free_loss(q, k_pos, state.predictor)
        # positives are detached, so the k-side input gradient is dropped;
        # the predictor still learns from both terms
        state.predictor_optimizer.step(state.predictor.parameters(), pred_grads, state.step)

    gw, gb, _ = state.query.backward(q_cache, grad_q)
    state.optimizer.step(
        state.query.parameters(), state.query.parameter_grads_flat(gw, gb), state.step
    )
    if state.key is not None:
        momentum_update(state.key, state.query, cfg.momentum)
    if state.queue is not None:
        state.queue.enqueue(k_pos)
    state.step += 1
    state.loss_history.append(loss)
    return loss


def derive_seed(seed: int, tag: str) -> int:
    """Stage-local seed: global seed XOR a stable hash of the stage tag, so
    re-running one stage never perturbs another's randomness."""
    digest = hashlib.blake2b(tag.encode(), digest_size=8).digest()
    return (seed ^ int.from_bytes(digest, "little")) & (2**64 - 1)


def init_train_state(input_dim: int, enc_cfg: EncoderConfig, cfg: SslConfig,
                     total_steps: int) -> TrainState:
    dtype = enc_cfg.np_dtype()
    rng_init = np.random.default_rng(derive_seed(cfg.seed, "init"))
    query = Mlp(enc_cfg.layer_dims(input_dim), rng=rng_init, normalize_output=True,
                dtype=dtype)
    key = query.clone() if cfg.uses_momentum_encoder else None
    predictor = None
    predictor_opt = None
    if cfg.uses_predictor:
        e = enc_cfg.embed_dim
        dims = (e, cfg.predictor_hidden, e) if cfg.predictor_hidden else (e, e)
        predictor = Mlp(dims, rng=rng_init, normalize_output=False, dtype=dtype)
        predictor_opt = SgdMomentum(predictor.parameters(), cfg.lr, total_steps)
    queue = None
    if cfg.uses_queue:
        rng_queue = np.random.default_rng(derive_seed(cfg.seed, "queue"))
        queue = MemoryQueue(cfg.queue_capacity, enc_cfg.embed_dim, rng=rng_queue,
                            dtype=dtype)
    optimizer = SgdMomentum(query.parameters(), cfg.lr, total_steps)
    return TrainState(query, key, predictor, queue, optimizer, predictor_opt)


@dataclass
class LossRow:
    step: int
    epoch: int
    lr: float
    loss: float


def pretrain(corpus: Corpus, cfg: SslConfig, enc_cfg: EncoderConfig,
             aug_cfg: AugmentConfig | None = None):
    """Run the full pretraining schedule; returns (query_encoder, loss_rows).

    Deterministic in cfg.seed: stream shuffling, augmentation, strategy
    randomness, queue prefill and parameter init all draw from independent
    seeded streams derived from it.
    """
    cfg.validate()
    if aug_cfg is None:
        aug_cfg = AugmentConfig()
    aug_cfg.validate()
    if not corpus.videos:
        raise ValueError("cannot pretrain on an empty corpus")
    total_shots = corpus.num_shots
    steps_per_epoch = total_shots // cfg.batch_size
    if steps_per_epoch == 0:
        raise ValueError(
            f"batch_size {cfg.batch_size} exceeds corpus size {total_shots}"
        )
    total_steps = steps_per_epoch * cfg.epochs

    state = init_train_state(corpus.dimension, enc_cfg, cfg, total_steps)
    rng_stream = np.random.default_rng(derive_seed(cfg.seed, "stream"))
    rngs = StepRngs(
        augment=np.random.default_rng(derive_seed(cfg.seed, "augment")),
        strategy=np.random.default_rng(derive_seed(cfg.seed, "strategy")),
    )

    rows: list[LossRow] = []
    for epoch in range(cfg.epochs):
        if cfg.clip_shuffling:
            stream = clip_shuffle(corpus, cfg.rho, rng_stream)
        else:
            stream = sequential_stream(corpus, cfg.rho)
        feats = stream.feature_matrix()
        for b in range(steps_per_epoch):
            batch = feats[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            lr = state.optimizer.lr_at(state.step)
            loss = train_step(state, batch, cfg, aug_cfg, rngs)
            rows.append(LossRow(state.step - 1, epoch, lr, loss))
    return state.query, rows


def loss_table(rows: list[LossRow]) -> str:
    """Tab-separated loss curve with a header row."""
    lines = ["step\tepoch\tlr\tloss"]
    for r in rows:
        lines.append(f"{r.step}\t{r.epoch}\t{r.lr:.8g}\t{r.loss:.8g}")
    return "\n".join(lines) + "\n"
