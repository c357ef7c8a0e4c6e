"""Dense MLP numerics: forward/backward, AdamW, schedules.

Everything runs in float64 on plain numpy arrays. Parameters live in flat
``dict[str, ndarray]`` maps so the same optimizer drives encoders, heads,
projectors and prototype banks alike. A forward pass returns a cache that
is sufficient for an exact reverse-mode backward pass.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, NumericalError, StateError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def rng_for(seed: int, *tags) -> np.random.Generator:
    """Deterministic child generator derived from a base seed and string/int tags.

    Avoids Python's salted hash() so derived streams are stable across runs.
    """
    words = [int(seed) & 0xFFFFFFFF, (int(seed) >> 32) & 0xFFFFFFFF]
    for tag in tags:
        words.append(zlib.crc32(str(tag).encode()) & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(words))


# ---------------------------------------------------------------------------
# specs and parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MLPSpec:
    """Layer-wise description of a fixed MLP pipeline.

    widths has n_layers+1 entries (input width first); activations and
    batch_norm have one entry per layer. Each layer computes
    affine -> (batch norm) -> (activation).
    """

    widths: tuple
    activations: tuple
    batch_norm: tuple

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ValueError("need at least one layer")
        if any(w <= 0 for w in self.widths):
            raise ValueError("layer widths must be positive")
        n = self.n_layers
        if len(self.activations) != n or len(self.batch_norm) != n:
            raise ValueError("per-layer fields must match layer count")
        if any(a not in ("relu", "none") for a in self.activations):
            raise ValueError("activation must be 'relu' or 'none'")

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    @classmethod
    def make(cls, widths: Sequence[int], hidden_activation: str = "relu",
             final_activation: str = "none", batch_norm: bool = False,
             final_batch_norm: bool = False) -> "MLPSpec":
        """Uniform hidden layers with a separately configured final layer."""
        widths = tuple(int(w) for w in widths)
        n = len(widths) - 1
        acts = tuple(hidden_activation if i < n - 1 else final_activation for i in range(n))
        bns = tuple(batch_norm if i < n - 1 else final_batch_norm for i in range(n))
        return cls(widths, acts, bns)


def init_mlp_params(spec: MLPSpec, rng: np.random.Generator) -> dict:
    """He-initialized weights; batch-norm layers get unit scale and running stats."""
    params = {}
    for i in range(spec.n_layers):
        fan_in, fan_out = spec.widths[i], spec.widths[i + 1]
        scale = np.sqrt(2.0 / fan_in) if spec.activations[i] == "relu" else np.sqrt(1.0 / fan_in)
        params[f"w{i}"] = rng.normal(0.0, scale, size=(fan_in, fan_out))
        params[f"b{i}"] = np.zeros(fan_out)
        if spec.batch_norm[i]:
            params[f"bn_g{i}"] = np.ones(fan_out)
            params[f"bn_b{i}"] = np.zeros(fan_out)
            params[f"bn_mean{i}"] = np.zeros(fan_out)   # running stats, not trained
            params[f"bn_var{i}"] = np.ones(fan_out)
    return params


def clone_params(params: dict) -> dict:
    return {k: v.copy() for k, v in params.items()}


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

@dataclass
class ForwardCache:
    spec: MLPSpec
    params: dict
    mode: str
    layers: list = field(default_factory=list)


def mlp_forward(spec: MLPSpec, params: dict, x: np.ndarray, mode: str = "train"):
    """Run the pipeline; returns (output, cache).

    Train mode normalizes with batch statistics and updates the running
    stats in place; eval mode uses the stored running stats and is a pure
    function of (params, x).
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.in_dim:
        raise DimensionError(f"input has shape {x.shape}, spec expects (*, {spec.in_dim})")
    cache = ForwardCache(spec, params, mode)
    out = x
    for i in range(spec.n_layers):
        layer = {"x": out}
        t = out @ params[f"w{i}"] + params[f"b{i}"]
        if spec.batch_norm[i]:
            if mode == "train":
                mu = t.mean(axis=0)
                var = t.var(axis=0)           # biased, matches backward below
                params[f"bn_mean{i}"] *= 1.0 - BN_MOMENTUM
                params[f"bn_mean{i}"] += BN_MOMENTUM * mu
                params[f"bn_var{i}"] *= 1.0 - BN_MOMENTUM
                params[f"bn_var{i}"] += BN_MOMENTUM * var
            else:
                mu = params[f"bn_mean{i}"]
                var = params[f"bn_var{i}"]
            inv_std = 1.0 / np.sqrt(var + BN_EPS)
            xhat = (t - mu) * inv_std
            t = params[f"bn_g{i}"] * xhat + params[f"bn_b{i}"]
            layer["bn"] = {"xhat": xhat, "inv_std": inv_std}
        layer["pre_act"] = t
        if spec.activations[i] == "relu":
            out = np.maximum(t, 0.0)
        else:
            out = t
        cache.layers.append(layer)
    return out, cache


def backward(cache: ForwardCache, d_out: np.ndarray):
    """Exact reverse-mode gradients for a cached forward pass.

    Returns (param_grads, d_input). param_grads only holds trainable keys,
    so running statistics are never touched by the optimizer.
    """
    spec, params = cache.spec, cache.params
    d_out = np.asarray(d_out, dtype=np.float64)
    if not cache.layers:
        raise StateError("cache holds no layers")
    last = cache.layers[-1]["pre_act"]
    if d_out.shape != last.shape:
        raise DimensionError(f"d_out shape {d_out.shape} != forward output {last.shape}")
    grads = {}
    g = d_out
    for i in reversed(range(spec.n_layers)):
        layer = cache.layers[i]
        if spec.activations[i] == "relu":
            g = g * (layer["pre_act"] > 0)
        if spec.batch_norm[i]:
            bn = layer["bn"]
            xhat, inv_std = bn["xhat"], bn["inv_std"]
            grads[f"bn_g{i}"] = (g * xhat).sum(axis=0)
            grads[f"bn_b{i}"] = g.sum(axis=0)
            g = g * params[f"bn_g{i}"]
            if cache.mode == "train":
                n = xhat.shape[0]
                # standard batch-norm backward with biased batch variance
                g = inv_std / n * (n * g - g.sum(axis=0) - xhat * (g * xhat).sum(axis=0))
            else:
                g = g * inv_std
        grads[f"w{i}"] = layer["x"].T @ g
        grads[f"b{i}"] = g.sum(axis=0)
        g = g @ params[f"w{i}"].T
    return grads, g


# ---------------------------------------------------------------------------
# optimizer and schedule
# ---------------------------------------------------------------------------

@dataclass
class OptState:
    """AdamW accumulators; shapes mirror the parameter dict lazily."""

    base_lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 5e-4
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params: dict, grads: dict, opt: OptState, lr: float | None = None):
    """One decoupled-weight-decay Adam update, in place.

    Only keys present in grads are updated, which keeps running statistics
    and frozen tensors out of the optimizer's reach.
    """
    if lr is None:
        lr = opt.base_lr
    b1, b2 = opt.betas
    opt.step += 1
    t = opt.step
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for key, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {key!r}")
        if key not in opt.m:
            opt.m[key] = np.zeros_like(params[key])
            opt.v[key] = np.zeros_like(params[key])
        m, v = opt.m[key], opt.v[key]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + opt.eps)
        p = params[key]
        if opt.weight_decay > 0.0:
            p -= lr * opt.weight_decay * p
        p -= lr * update
    return params, opt


def cosine_lr(epoch: int, total_epochs: int, base_lr: float) -> float:
    """Half-cosine decay from base_lr at epoch 0 to zero at total_epochs."""
    if total_epochs <= 0:
        raise ValueError("total_epochs must be positive")
    if not 0 <= epoch <= total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs}]")
    return base_lr * 0.5 * (1.0 + np.cos(np.pi * epoch / total_epochs))


# ---------------------------------------------------------------------------
# normalization helpers
# ---------------------------------------------------------------------------

def l2_normalize(x: np.ndarray, return_flag: bool = False):
    """Row-wise unit normalization; zero rows stay zero instead of becoming NaN.

    With return_flag=True also reports whether any degenerate row was seen.
    """
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    zero = norms == 0.0
    safe = np.where(zero, 1.0, norms)
    y = x / safe
    if return_flag:
        return y, bool(zero.any())
    return y


def l2_normalize_grad(x: np.ndarray, d_y: np.ndarray) -> np.ndarray:
    """Backward of row-wise normalization; zero rows get zero gradient."""
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    zero = norms == 0.0
    safe = np.where(zero, 1.0, norms)
    y = x / safe
    dx = (d_y - y * (y * d_y).sum(axis=-1, keepdims=True)) / safe
    return np.where(zero, 0.0, dx)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(loss_fn: Callable[[dict], tuple], params: dict,
               tolerance: float = 1e-4, h: float = 1e-5,
               max_coords: int = 10_000, seed: int = 0) -> float:
    """Compare analytic gradients with central finite differences.

    loss_fn(params) must return (loss, grads). All coordinates are checked
    unless the parameter count exceeds max_coords, in which case a seeded
    random subset of that size is used. Returns the max relative error; the
    caller decides whether it beats the tolerance.
    """
    _, grads = loss_fn(params)
    coords = []
    for key in sorted(grads):
        for idx in range(params[key].size):
            coords.append((key, idx))
    if len(coords) > max_coords:
        rng = rng_for(seed, "grad_check")
        pick = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in sorted(pick)]
    max_err = 0.0
    for key, idx in coords:
        flat = params[key].reshape(-1)
        orig = flat[idx]
        flat[idx] = orig + h
        lo_plus, _ = loss_fn(params)
        flat[idx] = orig - h
        lo_minus, _ = loss_fn(params)
        flat[idx] = orig
        numeric = (lo_plus - lo_minus) / (2.0 * h)
        analytic = grads[key].reshape(-1)[idx]
        denom = max(abs(analytic), abs(numeric), 1e-3)
        max_err = max(max_err, abs(analytic - numeric) / denom)
    return max_err
