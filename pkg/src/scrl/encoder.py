"""Small fully-connected networks with hand-derived gradients.

``Mlp`` covers three roles: the embedding encoder (ReLU hidden layers, final
L2 normalization), the predictor head used by the negative-free losses (no
final normalization), and the downstream classifier heads (optional inverted
dropout on hidden activations).  Backpropagation is written out per layer;
there is no autodiff anywhere in this package.
"""

from __future__ import annotations

import copy
import math
import struct
from dataclasses import dataclass

import numpy as np

CKPT_MAGIC = b"SCEN"
CKPT_VERSION = 1


@dataclass
class EncoderConfig:
    hidden_dims: tuple[int, ...] = (256,)
    embed_dim: int = 128
    dtype: str = "f32"  # "f32" for experiments, "f64" for gradient checks

    def layer_dims(self, input_dim: int) -> tuple[int, ...]:
        return (input_dim, *self.hidden_dims, self.embed_dim)

    def np_dtype(self):
        if self.dtype == "f32":
            return np.float32
        if self.dtype == "f64":
            return np.float64
        raise ValueError(f"unknown dtype {self.dtype!r}")


class Mlp:
    """Fully-connected net: ReLU on hidden layers, linear output layer.

    With ``normalize_output`` the output rows are L2-normalized and the
    normalization Jacobian (I - y y^T)/||z|| is part of ``backward``.
    ``dropout`` applies inverted dropout to hidden activations, training only.
    """

    def __init__(
        self,
        layer_dims,
        rng: np.random.Generator | None = None,
        normalize_output: bool = True,
        dropout: float = 0.0,
        dtype=np.float64,
    ):
        dims = tuple(int(d) for d in layer_dims)
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise ValueError(f"bad layer dims {dims}")
        if not 0.0 <= dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        self.layer_dims = dims
        self.normalize_output = normalize_output
        self.dropout = dropout
        self.dtype = np.dtype(dtype)
        if rng is None:
            rng = np.random.default_rng(0)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            self.weights.append(
                rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(self.dtype)
            )
            self.biases.append(rng.uniform(-bound, bound, size=fan_out).astype(self.dtype))

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    def parameters(self) -> list[np.ndarray]:
        """Flat parameter list, alternating weight/bias per layer."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def clone(self) -> "Mlp":
        return copy.deepcopy(self)

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Inference pass (dropout off); rows of the output are unit norm
        when ``normalize_output`` is set."""
        y, _ = self.forward_train(x, rng=None)
        return y

    def forward_train(self, x: np.ndarray, rng: np.random.Generator | None = None):
        """Forward pass returning (output, cache) for ``backward``.

        Dropout masks are drawn only when an rng is supplied; passing None
        runs the deterministic inference path.
        """
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(
                f"expected input of shape (B, {self.input_dim}), got {x.shape}"
            )
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite values in encoder input")
        acts = [x]
        masks: list[np.ndarray | None] = []
        h = x
        for li in range(self.num_layers):
            z = h @ self.weights[li] + self.biases[li]
            if li < self.num_layers - 1:
                h = np.maximum(z, 0)
                if self.dropout > 0.0 and rng is not None:
                    keep = (rng.random(h.shape) >= self.dropout).astype(self.dtype)
                    h = h * keep / (1.0 - self.dropout)
                    masks.append(keep)
                else:
                    masks.append(None)
                acts.append(h)
            else:
                h = z
        cache = {"acts": acts, "masks": masks, "pre_norm": h}
        if self.normalize_output:
            norms = np.linalg.norm(h, axis=1, keepdims=True)
            if np.any(norms == 0.0):
                raise ValueError("degenerate zero embedding: cannot normalize")
            y = h / norms
            cache["norms"] = norms
            cache["normed"] = y
            return y, cache
        return h, cache

    def backward(self, cache: dict, upstream: np.ndarray):
        """Gradients of the forward output composed with ``upstream``.

        Returns (weight_grads, bias_grads, input_grad) in the model dtype.
        ``upstream`` must match the forward output shape.
        """
        upstream = np.asarray(upstream, dtype=self.dtype)
        if upstream.shape != cache["pre_norm"].shape:
            raise ValueError(
                f"upstream shape {upstream.shape} != output shape {cache['pre_norm'].shape}"
            )
        if self.normalize_output:
            y = cache["normed"]
            # d/dz of z/||z||: (g - y (y.g)) / ||z||, rowwise
            g = (upstream - y * np.sum(upstream * y, axis=1, keepdims=True)) / cache["norms"]
        else:
            g = upstream
        grad_w = [np.empty(0)] * self.num_layers
        grad_b = [np.empty(0)] * self.num_layers
        for li in range(self.num_layers - 1, -1, -1):
            a_in = cache["acts"][li]
            grad_w[li] = a_in.T @ g
            grad_b[li] = g.sum(axis=0)
            g = g @ self.weights[li].T
            if li > 0:
                mask = cache["masks"][li - 1]
                if mask is not None:
                    g = g * mask / (1.0 - self.dropout)
                g = g * (cache["acts"][li] > 0)
        return grad_w, grad_b, g

    def parameter_grads_flat(self, grad_w, grad_b) -> list[np.ndarray]:
        out = []
        for w, b in zip(grad_w, grad_b):
            out.append(w)
            out.append(b)
        return out


def cosine_lr(lr0: float, step: int, total_steps: int) -> float:
    """lr0 * (1 + cos(pi * t/T)) / 2; errors past the end of the schedule."""
    if step > total_steps:
        raise ValueError(f"step {step} exceeds schedule length {total_steps}")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def milestone_lr(lr0: float, epoch: int, milestones: tuple[int, ...], gamma: float = 0.1) -> float:
    """lr0 scaled by gamma once per milestone epoch already passed."""
    passed = sum(1 for m in milestones if epoch >= m)
    return lr0 * (gamma ** passed)


class SgdMomentum:
    """SGD with classic momentum and decoupled-from-nothing weight decay:
    v <- mu*v + grad + wd*theta; theta <- theta - lr*v."""

    def __init__(self, params: list[np.ndarray], lr0: float, total_steps: int,
                 momentum: float = 0.9, weight_decay: float = 1e-4,
                 schedule: str = "cosine", milestones: tuple[int, ...] = (),
                 steps_per_epoch: int = 1, gamma: float = 0.1):
        self.lr0 = lr0
        self.total_steps = total_steps
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.schedule = schedule
        self.milestones = tuple(milestones)
        self.steps_per_epoch = max(1, steps_per_epoch)
        self.gamma = gamma
        self.velocities = [np.zeros_like(p) for p in params]

    def lr_at(self, step: int) -> float:
        if self.schedule == "cosine":
            return cosine_lr(self.lr0, step, self.total_steps)
        if self.schedule == "milestone":
            return milestone_lr(self.lr0, step // self.steps_per_epoch, self.milestones, self.gamma)
        raise ValueError(f"unknown schedule {self.schedule!r}")

    def step(self, params: list[np.ndarray], grads: list[np.ndarray], step: int) -> float:
        if len(params) != len(self.velocities) or len(grads) != len(self.velocities):
            raise ValueError("parameter/gradient count mismatch with optimizer state")
        lr = self.lr_at(step)
        for p, g, v in zip(params, grads, self.velocities):
            if not np.all(np.isfinite(g)):
                raise FloatingPointError("non-finite gradient")
            v *= self.momentum
            v += g + self.weight_decay * p
            p -= (lr * v).astype(p.dtype, copy=False)
        return lr


def momentum_update(key: Mlp, query: Mlp, m: float) -> None:
    """EMA update theta_K <- m*theta_K + (1-m)*theta_Q, in place on ``key``."""
    if key.layer_dims != query.layer_dims:
        raise ValueError(
            f"architecture mismatch: {key.layer_dims} vs {query.layer_dims}"
        )
    if not 0.0 <= m <= 1.0:
        raise ValueError("momentum must be in [0, 1]")
    for pk, pq in zip(key.parameters(), query.parameters()):
        pk *= m
        pk += (1.0 - m) * pq


def save_encoder(enc: Mlp, path) -> None:
    """Checkpoint format: magic SCEN, u32 version, u32 num_layers, then per
    layer u32 in/out dims, row-major f32 weights, f32 biases."""
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, enc.num_layers))
        for w, b in zip(enc.weights, enc.biases):
            fh.write(struct.pack("<II", w.shape[0], w.shape[1]))
            fh.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f4").tobytes())


def load_encoder(path, normalize_output: bool = True) -> Mlp:
    """Bit-exact inverse of ``save_encoder`` for f32 encoders."""
    with open(path, "rb") as fh:
        blob = fh.read()
    off = 0

    def take(n: int, what: str) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise ValueError(f"truncated checkpoint: expected {what}")
        chunk = blob[off : off + n]
        off += n
        return chunk

    if take(4, "magic") != CKPT_MAGIC:
        raise ValueError("bad magic: not an encoder checkpoint")
    version, num_layers = struct.unpack("<II", take(8, "header"))
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    weights = []
    biases = []
    dims = []
    for _ in range(num_layers):
        din, dout = struct.unpack("<II", take(8, "layer dims"))
        w = np.frombuffer(take(din * dout * 4, "weights"), dtype="<f4").reshape(din, dout)
        b = np.frombuffer(take(dout * 4, "biases"), dtype="<f4")
        weights.append(w.copy())
        biases.append(b.copy())
        dims.append((din, dout))
    if off != len(blob):
        raise ValueError("trailing bytes in checkpoint")
    layer_dims = [dims[0][0]] + [d[1] for d in dims]
    enc = Mlp(layer_dims, rng=np.random.default_rng(0),
              normalize_output=normalize_output, dtype=np.float32)
    enc.weights = weights
    enc.biases = biases
    return enc


def parameter_digest(enc: Mlp) -> bytes:
    """Stable byte digest of all parameters, for frozen-encoder assertions."""
    import hashlib

    h = hashlib.sha256()
    for p in enc.parameters():
        h.update(np.ascontiguousarray(p).tobytes())
    return h.digest()
