"""Finite-difference verification of every hand-derived gradient path.

All checks run in float64 with central differences (h = 1e-5).  The relative
error of an analytic/numeric pair is |a - n| / max(|a|, |n|, 1e-6); each
check reports the maximum over all parameters it touches.  The suite is the
oracle behind the ``gradcheck`` subcommand: it passes when every component
stays below 1e-4.
"""

from __future__ import annotations

import numpy as np

from .bilstm import BiLstmTagger
from .downstream import weighted_bce_with_logits
from .encoder import Mlp
from .pretrain import info_nce, negative_free_loss

H = 1e-5
TOLERANCE = 1e-4


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)
    return float(np.max(np.abs(a - n) / denom))


def numeric_grad(f, param: np.ndarray, h: float = H) -> np.ndarray:
    """Central differences of scalar f() with respect to ``param`` in place."""
    grad = np.zeros_like(param, dtype=np.float64)
    flat = param.reshape(-1) if param.ndim else param.reshape(1)
    gflat = grad.reshape(-1) if grad.ndim else grad.reshape(1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + h
        up = f()
        flat[idx] = orig - h
        down = f()
        flat[idx] = orig
        gflat[idx] = (up - down) / (2.0 * h)
    return grad


def check_params(f, params: list[np.ndarray], analytic: list[np.ndarray]) -> float:
    worst = 0.0
    for p, a in zip(params, analytic):
        worst = max(worst, rel_err(a, numeric_grad(f, p)))
    return worst


def _unit_rows(rng: np.random.Generator, shape) -> np.ndarray:
    x = rng.standard_normal(shape)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def check_encoder_infonce(seed: int = 0) -> float:
    """Embedding net composed with the temperature contrastive loss."""
    rng = np.random.default_rng(seed)
    net = Mlp((5, 7, 4), rng=rng, normalize_output=True, dtype=np.float64)
    x = rng.standard_normal((6, 5))
    k_pos = _unit_rows(rng, (6, 4))
    negatives = _unit_rows(rng, (8, 4))
    tau = 0.07

    def loss_value() -> float:
        q = net.forward(x)
        return info_nce(q, k_pos, negatives, tau)[0]

    q, cache = net.forward_train(x)
    _, grad_q = info_nce(q, k_pos, negatives, tau)
    gw, gb, _ = net.backward(cache, grad_q)
    return check_params(loss_value, net.parameters(), net.parameter_grads_flat(gw, gb))


def check_predictor_path(seed: int = 0):
    """Negative-free loss: predictor parameter gradients, both input branches,
    and the stop-gradient exclusion.

    Returns (max_rel_err, sg_branch_grad_norm): the first must be < 1e-4 and
    the second must be clearly non-zero — the stop-gradient targets would
    receive that much gradient if they were not detached, and the analytic
    gradients contain none of it.
    """
    rng = np.random.default_rng(seed)
    e = 6
    predictor = Mlp((e, 5, e), rng=rng, normalize_output=False, dtype=np.float64)
    q = _unit_rows(rng, (4, e))
    k = _unit_rows(rng, (4, e))
    loss, grad_q, grad_k, pred_grads = negative_free_loss(q, k, predictor)

    # predictor parameters: the full loss is an ordinary function of them
    def loss_of_params() -> float:
        return negative_free_loss(q, k, predictor)[0]

    worst = check_params(loss_of_params, predictor.parameters(), pred_grads)

    # q and k input branches: freeze the stop-gradient occurrences at their
    # original values and differentiate the remaining (predictor-input) path
    q0, k0 = q.copy(), k.copy()

    def q_branch() -> float:
        pq = predictor.forward(q)
        pk0 = predictor.forward(k0)
        return _sym_loss(pq, k0, pk0, q0)

    def k_branch() -> float:
        pq0 = predictor.forward(q0)
        pk = predictor.forward(k)
        return _sym_loss(pq0, k0, pk, q0)

    worst = max(worst, rel_err(grad_q, numeric_grad(q_branch, q)))
    worst = max(worst, rel_err(grad_k, numeric_grad(k_branch, k)))

    # the stop-gradient occurrences: differentiating the loss through the
    # target slots alone gives the gradient the detached branches would get
    def q_sg_branch() -> float:
        pq0 = predictor.forward(q0)
        pk0 = predictor.forward(k0)
        return _sym_loss(pq0, k0, pk0, q)

    def k_sg_branch() -> float:
        pq0 = predictor.forward(q0)
        pk0 = predictor.forward(k0)
        return _sym_loss(pq0, k, pk0, q0)

    sg_norm = float(
        np.linalg.norm(numeric_grad(q_sg_branch, q))
        + np.linalg.norm(numeric_grad(k_sg_branch, k))
    )
    return worst, sg_norm


def _sym_loss(pq: np.ndarray, k_target: np.ndarray, pk: np.ndarray,
              q_target: np.ndarray) -> float:
    def cos_rows(a, b):
        an = a / np.linalg.norm(a, axis=1, keepdims=True)
        bn = b / np.linalg.norm(b, axis=1, keepdims=True)
        return np.sum(an * bn, axis=1)

    return float(-2.0 * np.mean(cos_rows(pq, k_target) + cos_rows(pk, q_target)))


def check_window_mlp(seed: int = 0) -> float:
    """Window classifier with class-weighted BCE."""
    rng = np.random.default_rng(seed)
    net = Mlp((12, 9, 1), rng=rng, normalize_output=False, dropout=0.0,
              dtype=np.float64)
    x = rng.standard_normal((10, 12))
    y = rng.random(10) < 0.3
    if not y.any():
        y[0] = True
    pos_weight = float((~y).sum() / y.sum())

    def loss_value() -> float:
        logits = net.forward(x)[:, 0]
        return weighted_bce_with_logits(logits, y, pos_weight)[0]

    logits, cache = net.forward_train(x)
    _, dlogits = weighted_bce_with_logits(logits[:, 0], y, pos_weight)
    gw, gb, _ = net.backward(cache, dlogits[:, None])
    return check_params(loss_value, net.parameters(), net.parameter_grads_flat(gw, gb))


def check_bilstm_bptt(seed: int = 0) -> float:
    """Full BPTT through the stacked bidirectional tagger (dropout off)."""
    rng = np.random.default_rng(seed)
    net = BiLstmTagger(input_size=6, hidden_size=5, num_layers=2, rng=rng,
                       inter_dropout=0.0, classifier_dropout=0.0, dtype=np.float64)
    t = 8
    x = rng.standard_normal((2, t, 6))
    y = (rng.random((2, t)) < 0.3).astype(np.float64)
    mask = np.ones((2, t))
    mask[1, -2:] = 0.0
    pos_weight = 2.5

    def loss_value() -> float:
        logits = net.forward(x)
        return weighted_bce_with_logits(logits, y, pos_weight, mask)[0]

    logits, cache = net.forward_train(x)
    _, dlogits = weighted_bce_with_logits(logits, y, pos_weight, mask)
    grads = net.backward(cache, dlogits)
    return check_params(loss_value, net.parameters(), grads)


def run_suite(seed: int = 0) -> dict[str, float]:
    """All components; values are max relative errors (the stop-gradient
    branch magnitude is reported separately as a sanity floor)."""
    enc = check_encoder_infonce(seed)
    pred, sg_norm = check_predictor_path(seed)
    if sg_norm < 1e-3:
        raise AssertionError(
            "stop-gradient check is vacuous: detached branches carry no signal"
        )
    return {
        "encoder_infonce": enc,
        "predictor_negative_free": pred,
        "window_mlp_weighted_bce": check_window_mlp(seed),
        "bilstm_bptt": check_bilstm_bptt(seed),
    }
