"""Bidirectional LSTM sequence tagger with hand-derived backpropagation
through time.

Gate order in the stacked parameter matrices is input, forget, cell
candidate, output.  Each direction owns its parameters; a bidirectional layer
runs the reverse direction on the time-flipped sequence and flips its outputs
back, so output[t] = [h_fwd[t] ; h_bwd[t]].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class LstmDirection:
    """One direction of one recurrent layer."""

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator,
                 dtype=np.float64):
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.dtype = np.dtype(dtype)
        bound = 1.0 / math.sqrt(hidden_size)
        self.w = rng.uniform(-bound, bound, (input_size, 4 * hidden_size)).astype(self.dtype)
        self.u = rng.uniform(-bound, bound, (hidden_size, 4 * hidden_size)).astype(self.dtype)
        self.b = rng.uniform(-bound, bound, 4 * hidden_size).astype(self.dtype)

    def parameters(self) -> list[np.ndarray]:
        return [self.w, self.u, self.b]

    def forward(self, x: np.ndarray):
        """x: (B, T, In) -> h: (B, T, H) plus the cache for ``backward``."""
        b, t, _ = x.shape
        hsz = self.hidden_size
        h_prev = np.zeros((b, hsz), dtype=self.dtype)
        c_prev = np.zeros((b, hsz), dtype=self.dtype)
        gates = np.empty((b, t, 4 * hsz), dtype=self.dtype)
        cs = np.empty((b, t, hsz), dtype=self.dtype)
        hs = np.empty((b, t, hsz), dtype=self.dtype)
        for step in range(t):
            a = x[:, step, :] @ self.w + h_prev @ self.u + self.b
            i = _sigmoid(a[:, :hsz])
            f = _sigmoid(a[:, hsz : 2 * hsz])
            g = np.tanh(a[:, 2 * hsz : 3 * hsz])
            o = _sigmoid(a[:, 3 * hsz :])
            c = f * c_prev + i * g
            h = o * np.tanh(c)
            gates[:, step, :hsz] = i
            gates[:, step, hsz : 2 * hsz] = f
            gates[:, step, 2 * hsz : 3 * hsz] = g
            gates[:, step, 3 * hsz :] = o
            cs[:, step] = c
            hs[:, step] = h
            h_prev, c_prev = h, c
        cache = {"x": x, "gates": gates, "cs": cs, "hs": hs}
        return hs, cache

    def backward(self, cache: dict, dh_out: np.ndarray):
        """BPTT for this direction; dh_out matches the forward output shape.

        Returns (dw, du, db, dx).
        """
        x, gates, cs, hs = cache["x"], cache["gates"], cache["cs"], cache["hs"]
        b, t, _ = x.shape
        hsz = self.hidden_size
        dw = np.zeros_like(self.w)
        du = np.zeros_like(self.u)
        db = np.zeros_like(self.b)
        dx = np.zeros_like(x)
        dh_carry = np.zeros((b, hsz), dtype=self.dtype)
        dc_carry = np.zeros((b, hsz), dtype=self.dtype)
        for step in range(t - 1, -1, -1):
            i = gates[:, step, :hsz]
            f = gates[:, step, hsz : 2 * hsz]
            g = gates[:, step, 2 * hsz : 3 * hsz]
            o = gates[:, step, 3 * hsz :]
            c = cs[:, step]
            c_prev = cs[:, step - 1] if step > 0 else np.zeros((b, hsz), dtype=self.dtype)
            h_prev = hs[:, step - 1] if step > 0 else np.zeros((b, hsz), dtype=self.dtype)
            tc = np.tanh(c)
            dh = dh_out[:, step, :] + dh_carry
            do = dh * tc
            dc = dc_carry + dh * o * (1.0 - tc * tc)
            di = dc * g
            df = dc * c_prev
            dg = dc * i
            dc_carry = dc * f
            da = np.concatenate(
                [
                    di * i * (1.0 - i),
                    df * f * (1.0 - f),
                    dg * (1.0 - g * g),
                    do * o * (1.0 - o),
                ],
                axis=1,
            )
            dw += x[:, step, :].T @ da
            du += h_prev.T @ da
            db += da.sum(axis=0)
            dx[:, step, :] = da @ self.w.T
            dh_carry = da @ self.u.T
        return dw, du, db, dx


class BiLstmLayer:
    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator,
                 dtype=np.float64):
        self.fwd = LstmDirection(input_size, hidden_size, rng, dtype)
        self.bwd = LstmDirection(input_size, hidden_size, rng, dtype)
        self.hidden_size = hidden_size

    def parameters(self) -> list[np.ndarray]:
        return self.fwd.parameters() + self.bwd.parameters()

    def forward(self, x: np.ndarray):
        h_f, cache_f = self.fwd.forward(x)
        h_b_rev, cache_b = self.bwd.forward(x[:, ::-1, :])
        h_b = h_b_rev[:, ::-1, :]
        return np.concatenate([h_f, h_b], axis=2), {"f": cache_f, "b": cache_b}

    def backward(self, cache: dict, dh: np.ndarray):
        hsz = self.hidden_size
        dwf, duf, dbf, dx_f = self.fwd.backward(cache["f"], dh[:, :, :hsz])
        dwb, dub, dbb, dx_b_rev = self.bwd.backward(cache["b"], dh[:, ::-1, hsz:])
        dx = dx_f + dx_b_rev[:, ::-1, :]
        return [dwf, duf, dbf, dwb, dub, dbb], dx


class BiLstmTagger:
    """Stacked bidirectional LSTM with a per-step linear classifier.

    Inter-layer dropout applies to each non-final layer's output and
    classifier dropout to the final features, both only when an rng is given
    to ``forward_train`` (inference is deterministic).
    """

    def __init__(self, input_size: int, hidden_size: int, num_layers: int,
                 rng: np.random.Generator, inter_dropout: float = 0.6,
                 classifier_dropout: float = 0.7, dtype=np.float64):
        if num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        self.layers = []
        size = input_size
        for _ in range(num_layers):
            self.layers.append(BiLstmLayer(size, hidden_size, rng, dtype))
            size = 2 * hidden_size
        bound = 1.0 / math.sqrt(size)
        self.cls_w = rng.uniform(-bound, bound, size).astype(dtype)
        self.cls_b = np.array(rng.uniform(-bound, bound), dtype=dtype)
        self.inter_dropout = inter_dropout
        self.classifier_dropout = classifier_dropout
        self.dtype = np.dtype(dtype)

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend(layer.parameters())
        out.append(self.cls_w)
        out.append(self.cls_b)
        return out

    def forward_train(self, x: np.ndarray, rng: np.random.Generator | None = None):
        """x: (B, T, E) -> logits (B, T) plus cache."""
        x = np.asarray(x, dtype=self.dtype)
        caches = []
        drop_masks = []
        h = x
        for li, layer in enumerate(self.layers):
            h, cache = layer.forward(h)
            caches.append(cache)
            if li < len(self.layers) - 1 and self.inter_dropout > 0 and rng is not None:
                keep = (rng.random(h.shape) >= self.inter_dropout).astype(self.dtype)
                h = h * keep / (1.0 - self.inter_dropout)
                drop_masks.append(keep)
            else:
                drop_masks.append(None)
        if self.classifier_dropout > 0 and rng is not None:
            keep = (rng.random(h.shape) >= self.classifier_dropout).astype(self.dtype)
            feats = h * keep / (1.0 - self.classifier_dropout)
            cls_mask = keep
        else:
            feats = h
            cls_mask = None
        logits = feats @ self.cls_w + self.cls_b
        cache = {"layer_caches": caches, "drop_masks": drop_masks,
                 "feats": feats, "cls_mask": cls_mask}
        return logits, cache

    def forward(self, x: np.ndarray) -> np.ndarray:
        logits, _ = self.forward_train(x, rng=None)
        return logits

    def backward(self, cache: dict, dlogits: np.ndarray) -> list[np.ndarray]:
        """Gradients for all parameters in ``parameters()`` order."""
        feats = cache["feats"]
        dcls_w = np.einsum("btk,bt->k", feats, dlogits)
        dcls_b = np.array(dlogits.sum(), dtype=self.dtype)
        dh = dlogits[:, :, None] * self.cls_w[None, None, :]
        if cache["cls_mask"] is not None:
            dh = dh * cache["cls_mask"] / (1.0 - self.classifier_dropout)
        grads_per_layer = []
        for li in range(len(self.layers) - 1, -1, -1):
            mask = cache["drop_masks"][li]
            if mask is not None:
                dh = dh * mask / (1.0 - self.inter_dropout)
            layer_grads, dh = self.layers[li].backward(cache["layer_caches"][li], dh)
            grads_per_layer.append(layer_grads)
        out = []
        for layer_grads in reversed(grads_per_layer):
            out.extend(layer_grads)
        out.append(dcls_w)
        out.append(dcls_b)
        return out
