import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scrl.augment import AugmentConfig
from scrl.corpus import SynthesisConfig, generate_corpus
from scrl.encoder import EncoderConfig, Mlp, parameter_digest
from scrl.gradcheck import TOLERANCE, numeric_grad, rel_err
from scrl.pretrain import (MemoryQueue, SslConfig, StepRngs, derive_seed,
                           info_nce, init_train_state, loss_table,
                           negative_free_loss, pretrain, train_step)


def unit_rows(rng, shape):
    x = rng.standard_normal(shape)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


# ---------------------------------------------------------------- queue


def test_queue_starts_empty_without_prefill():
    q = MemoryQueue(8, 3)
    assert len(q) == 0 and not q.warm


def test_queue_fifo_exact_batches():
    q = MemoryQueue(6, 2)
    for batch_no in range(5):
        rows = np.full((2, 2), batch_no, dtype=np.float32)
        q.enqueue(rows)
    # capacity 6 = 3 batches of 2; the last 3 batches survive, oldest first
    got = q.array()
    expected = np.concatenate([np.full((2, 2), v) for v in (2, 3, 4)])
    assert np.array_equal(got, expected)
    assert q.warm


@settings(deadline=None, max_examples=60)
@given(
    capacity=st.integers(1, 32),
    sizes=st.lists(st.integers(1, 40), min_size=0, max_size=12),
)
def test_queue_fifo_property(capacity, sizes):
    q = MemoryQueue(capacity, 1)
    fed = []
    counter = 0
    for n in sizes:
        rows = np.arange(counter, counter + n, dtype=np.float32)[:, None]
        counter += n
        fed.extend(rows[:, 0].tolist())
        q.enqueue(rows)
        assert len(q) == min(len(fed), capacity)
        expected = np.array(fed[-capacity:], dtype=np.float32)[:, None] \
            if fed else np.zeros((0, 1), dtype=np.float32)
        assert np.array_equal(q.array(), expected[-len(q):] if len(q) else expected)


def test_queue_prefill_gives_unit_negatives():
    q = MemoryQueue(16, 4, rng=np.random.default_rng(0))
    assert len(q) == 16 and not q.warm
    assert np.allclose(np.linalg.norm(q.array(), axis=1), 1.0, atol=1e-6)
    q.enqueue(np.ones((16, 4), dtype=np.float32))
    assert q.warm


def test_queue_rejects_bad_rows():
    q = MemoryQueue(4, 3)
    with pytest.raises(ValueError):
        q.enqueue(np.ones((2, 5)))


# ---------------------------------------------------------------- info_nce


def test_info_nce_pure_positive_limit_is_zero():
    q = np.array([[1.0, 0.0]])
    loss, grad = info_nce(q, q, None, tau=1.0)
    assert loss == 0.0
    assert np.all(grad == 0)


def test_info_nce_closed_form_single_negative():
    q = np.array([[1.0, 0.0]])
    k = q.copy()
    neg = np.array([[0.0, 1.0]])
    loss, _ = info_nce(q, k, neg, tau=1.0)
    assert loss == pytest.approx(math.log(1 + math.exp(-1.0)), abs=1e-9)
    assert loss == pytest.approx(0.313262, abs=1e-6)


def test_info_nce_loss_nonnegative():
    rng = np.random.default_rng(0)
    q = unit_rows(rng, (16, 8))
    k = unit_rows(rng, (16, 8))
    neg = unit_rows(rng, (32, 8))
    loss, _ = info_nce(q, k, neg, tau=0.07)
    assert loss >= 0.0


def test_info_nce_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    q = unit_rows(rng, (5, 6))
    k = unit_rows(rng, (5, 6))
    neg = unit_rows(rng, (7, 6))

    _, grad = info_nce(q, k, neg, tau=0.3)

    def loss():
        return info_nce(q, k, neg, tau=0.3)[0]

    assert rel_err(grad, numeric_grad(loss, q)) < TOLERANCE


def test_info_nce_gradient_with_mask_matches_finite_differences():
    rng = np.random.default_rng(2)
    q = unit_rows(rng, (4, 5))
    k = unit_rows(rng, (4, 5))
    neg = unit_rows(rng, (6, 5))
    mask = rng.random((4, 6)) < 0.7
    mask[0] = True

    _, grad = info_nce(q, k, neg, tau=0.5, neg_mask=mask)

    def loss():
        return info_nce(q, k, neg, tau=0.5, neg_mask=mask)[0]

    assert rel_err(grad, numeric_grad(loss, q)) < TOLERANCE


def test_info_nce_invariant_to_negative_permutation():
    rng = np.random.default_rng(3)
    q = unit_rows(rng, (6, 4))
    k = unit_rows(rng, (6, 4))
    neg = unit_rows(rng, (9, 4))
    a, _ = info_nce(q, k, neg, tau=0.07)
    b, _ = info_nce(q, k, neg[rng.permutation(9)], tau=0.07)
    assert a == pytest.approx(b, rel=1e-12)


def test_tau_does_not_change_hardest_negative():
    rng = np.random.default_rng(4)
    q = unit_rows(rng, (3, 4))
    neg = unit_rows(rng, (11, 4))
    logits = q @ neg.T
    for tau in (0.05, 0.2, 1.0, 7.0):
        assert np.array_equal(np.argmax(logits / tau, axis=1),
                              np.argmax(logits, axis=1))


def test_info_nce_rejects_bad_tau_and_shapes():
    q = np.array([[1.0, 0.0]])
    with pytest.raises(ValueError):
        info_nce(q, q, None, tau=0.0)
    with pytest.raises(ValueError):
        info_nce(q, np.ones((2, 2)), None, tau=1.0)


# ------------------------------------------------------- negative-free loss


def _identity_predictor(e):
    p = Mlp((e, e), normalize_output=False, dtype=np.float64)
    p.weights[0] = np.eye(e)
    p.biases[0] = np.zeros(e)
    return p


def test_negative_free_identity_predictor_k_equals_q():
    e = 4
    q = np.zeros((3, e))
    q[:, 0] = 1.0
    loss, *_ = negative_free_loss(q, q.copy(), _identity_predictor(e))
    assert loss == -4.0


def test_negative_free_orthogonal_is_zero():
    p = _identity_predictor(2)
    q = np.array([[1.0, 0.0]])
    k = np.array([[0.0, 1.0]])
    loss, *_ = negative_free_loss(q, k, p)
    assert loss == pytest.approx(0.0, abs=1e-15)


def test_negative_free_requires_predictor():
    q = np.array([[1.0, 0.0]])
    with pytest.raises(ValueError, match="predictor"):
        negative_free_loss(q, q, None)


def test_negative_free_gradients_match_finite_differences():
    rng = np.random.default_rng(5)
    e = 5
    pred = Mlp((e, 4, e), rng=rng, normalize_output=False, dtype=np.float64)
    q = unit_rows(rng, (3, e))
    k = unit_rows(rng, (3, e))
    loss, grad_q, grad_k, pred_grads = negative_free_loss(q, k, pred)

    def loss_fn():
        return negative_free_loss(q, k, pred)[0]

    assert rel_err(pred_grads[0], numeric_grad(loss_fn, pred.weights[0])) < TOLERANCE


# ------------------------------------------------------------ train_step


def _mini_state(framework, strategy="sa", batch=16, dim=6, embed=4, seed=0,
                queue_capacity=64):
    cfg = SslConfig(framework=framework, strategy_name=strategy, batch_size=batch,
                    epochs=1, queue_capacity=queue_capacity, num_classes=4,
                    kmeans_iters=3, seed=seed, lr=0.05)
    enc_cfg = EncoderConfig(hidden_dims=(8,), embed_dim=embed, dtype="f64")
    state = init_train_state(dim, enc_cfg, cfg, total_steps=10)
    return state, cfg, AugmentConfig(mask_prob=0.1, noise_sigma=0.05)


def _rngs(seed=0):
    return StepRngs(augment=np.random.default_rng(seed),
                    strategy=np.random.default_rng(seed + 1))


def _batch(dim=6, n=16, seed=3):
    return unit_rows(np.random.default_rng(seed), (n, dim)).astype(np.float32)


def test_train_step_moco_queue_grows_by_batch():
    state, cfg, aug = _mini_state("moco", queue_capacity=64)
    # start from an unfilled queue to observe growth
    state.queue._size = 0
    state.queue._cursor = 0
    state.queue._real = 0
    train_step(state, _batch(), cfg, aug, _rngs())
    assert len(state.queue) == 16
    train_step(state, _batch(), cfg, aug, _rngs(9))
    assert len(state.queue) == 32


def test_train_step_byol_key_changes_only_by_ema():
    state, cfg, aug = _mini_state("byol")
    assert state.queue is None and state.predictor is not None
    q_before = [p.copy() for p in state.query.parameters()]
    k_before = [p.copy() for p in state.key.parameters()]
    train_step(state, _batch(), cfg, aug, _rngs())
    m = cfg.momentum
    for kb, qa, ka in zip(k_before, state.query.parameters(), state.key.parameters()):
        assert np.allclose(ka, m * kb + (1 - m) * qa, atol=1e-12)


def test_train_step_simsiam_key_is_query():
    state, cfg, aug = _mini_state("simsiam")
    assert state.key is None and state.queue is None and state.predictor is not None
    train_step(state, _batch(), cfg, aug, _rngs())


def test_train_step_simclr_has_no_queue_or_key():
    state, cfg, aug = _mini_state("simclr", strategy="nn")
    assert state.key is None and state.queue is None and state.predictor is None
    loss = train_step(state, _batch(), cfg, aug, _rngs())
    assert math.isfinite(loss)


def test_train_step_rejects_mismatched_state():
    state, cfg, aug = _mini_state("moco")
    state.queue = None  # break the invariant
    with pytest.raises(ValueError, match="queue"):
        train_step(state, _batch(), cfg, aug, _rngs())


def test_train_step_key_gets_zero_loss_gradient_under_moco():
    # the key encoder moves exactly by the EMA formula, nothing else
    state, cfg, aug = _mini_state("moco", strategy="sc")
    k_before = [p.copy() for p in state.key.parameters()]
    train_step(state, _batch(), cfg, aug, _rngs())
    m = cfg.momentum
    for kb, qa, ka in zip(k_before, state.query.parameters(), state.key.parameters()):
        assert np.allclose(ka, m * kb + (1 - m) * qa, atol=1e-12)


def test_train_step_sc_requires_batch_at_least_num_classes():
    state, cfg, aug = _mini_state("moco", strategy="sc")
    with pytest.raises(ValueError, match="num_classes"):
        train_step(state, _batch(n=3), cfg, aug, _rngs())


# ------------------------------------------------------------- pretrain


def _tiny_corpus(sigma=0.0, seed=1):
    return generate_corpus(SynthesisConfig(
        num_videos=4, scenes_per_video=2, shots_per_scene_min=8,
        shots_per_scene_max=12, dimension=8, latent_noise_sigma=sigma,
        interleave_prob=0.0, seed=seed))


def _tiny_ssl(**kw):
    defaults = dict(framework="moco", strategy_name="sa", batch_size=16,
                    epochs=6, queue_capacity=128, lr=0.05, num_classes=4,
                    kmeans_iters=3, seed=5)
    defaults.update(kw)
    return SslConfig(**defaults)


def test_pretrain_deterministic_given_seed():
    corpus = _tiny_corpus(sigma=0.2)
    cfg = _tiny_ssl()
    enc_cfg = EncoderConfig(hidden_dims=(12,), embed_dim=8)
    enc1, rows1 = pretrain(corpus, cfg, enc_cfg)
    enc2, rows2 = pretrain(corpus, cfg, enc_cfg)
    assert parameter_digest(enc1) == parameter_digest(enc2)
    assert loss_table(rows1) == loss_table(rows2)


def test_pretrain_different_seed_differs():
    corpus = _tiny_corpus(sigma=0.2)
    enc_cfg = EncoderConfig(hidden_dims=(12,), embed_dim=8)
    enc1, _ = pretrain(corpus, _tiny_ssl(seed=5), enc_cfg)
    enc2, _ = pretrain(corpus, _tiny_ssl(seed=6), enc_cfg)
    assert parameter_digest(enc1) != parameter_digest(enc2)


def test_pretrain_loss_decreases_on_easy_corpus():
    # single-latent corpus, self-positive strategy: the objective is
    # augmentation invariance and should improve after the warm start
    corpus = generate_corpus(SynthesisConfig(
        num_videos=2, scenes_per_video=1, shots_per_scene_min=40,
        shots_per_scene_max=40, dimension=8, latent_noise_sigma=0.05,
        interleave_prob=0.0, seed=3))
    cfg = _tiny_ssl(framework="simclr", epochs=30, lr=0.1, tau=0.2)
    enc_cfg = EncoderConfig(hidden_dims=(12,), embed_dim=8)
    _, rows = pretrain(corpus, cfg, enc_cfg)
    losses = np.array([r.loss for r in rows])
    k = len(losses) // 3
    assert np.median(losses[-k:]) < np.median(losses[:k])


def test_pretrain_rejects_oversized_batch():
    corpus = _tiny_corpus()
    with pytest.raises(ValueError, match="batch_size"):
        pretrain(corpus, _tiny_ssl(batch_size=4096), EncoderConfig(embed_dim=8))


def test_loss_table_format():
    corpus = _tiny_corpus()
    cfg = _tiny_ssl(epochs=1)
    _, rows = pretrain(corpus, cfg, EncoderConfig(hidden_dims=(8,), embed_dim=8))
    table = loss_table(rows)
    lines = table.strip().split("\n")
    assert lines[0] == "step\tepoch\tlr\tloss"
    first = lines[1].split("\t")
    assert first[0] == "0" and first[1] == "0"
    assert float(first[2]) == pytest.approx(0.05)


def test_derive_seed_stable_and_distinct():
    assert derive_seed(7, "ssl") == derive_seed(7, "ssl")
    assert derive_seed(7, "ssl") != derive_seed(7, "corpus")
    assert derive_seed(7, "ssl") != derive_seed(8, "ssl")
