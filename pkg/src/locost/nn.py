"""Differentiable building blocks. Every op takes and returns ``Tensor``."""

import math

import numpy as np

from . import ssm as _ssm
from .graph import Tensor, as_tensor, record

GELU_C = math.sqrt(2.0 / math.pi)


class ConfigError(ValueError):
    """Inconsistent model or run configuration."""


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return record(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return record(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def scale(x, c):
    return record(x.data * c, (x,), lambda g: (g * c,))


def total(x):
    """Sum of all entries, as a scalar tensor."""
    return record(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def transpose(w):
    if w.ndim != 2:
        raise ValueError("transpose expects a matrix")
    return record(w.data.T, (w,), lambda g: (g.T,))


def matmul(x, w):
    """``x @ w`` with ``x`` of shape (..., Din) and ``w`` of shape (Din, Dout)."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ValueError(f"matmul shape mismatch: {x.shape} @ {w.shape}")

    def backward(g):
        gx = g @ w.data.T
        gw = x.data.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return gx, gw

    return record(x.data @ w.data, (x, w), backward)


def linear(x, w, bias=None):
    out = matmul(x, w)
    if bias is not None:
        if bias.shape != (w.shape[1],):
            raise ValueError(f"bias shape {bias.shape} != ({w.shape[1]},)")
        out = add(out, bias)
    return out


def layer_norm(x, gain, eps=1e-6):
    """Mean/variance normalization over the last axis, scaled by ``gain`` (no shift)."""
    if gain.shape != (x.shape[-1],):
        raise ValueError(f"gain shape {gain.shape} does not match width {x.shape[-1]}")
    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt((centered**2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv

    def backward(g):
        gy = g * gain.data
        gx = inv * (gy - gy.mean(axis=-1, keepdims=True) - xhat * (gy * xhat).mean(axis=-1, keepdims=True))
        ggain = (g * xhat).reshape(-1, x.shape[-1]).sum(axis=0)
        return gx, ggain

    return record(xhat * gain.data, (x, gain), backward)


def gelu(x):
    """tanh-approximated GeLU."""
    v = x.data
    t = np.tanh(GELU_C * (v + 0.044715 * v**3))

    def backward(g):
        dt = (1.0 - t**2) * GELU_C * (1.0 + 3 * 0.044715 * v**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * dt),)

    return record(0.5 * v * (1.0 + t), (x,), backward)


def gated_gelu_ff(x, w1, w2, wo):
    """``(gelu(x @ w1) * (x @ w2)) @ wo``."""
    if w1.shape != w2.shape or wo.shape != (w1.shape[1], w1.shape[0]):
        raise ValueError(f"feedforward shapes disagree: {w1.shape}, {w2.shape}, {wo.shape}")
    return matmul(mul(gelu(matmul(x, w1)), matmul(x, w2)), wo)


def dropout(x, rate, rng=None, training=False):
    """Inverted dropout; identity unless ``training`` and ``rate > 0``."""
    if not training or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return record(x.data * keep, (x,), lambda g: (g * keep,))


def _split_heads(a, heads):
    *lead, L, H = a.shape
    return a.reshape(*lead, L, heads, H // heads).swapaxes(-2, -3)


def _merge_heads(a):
    *lead, heads, L, dh = a.shape
    return a.swapaxes(-2, -3).reshape(*lead, L, heads * dh)


def attention_probs(q, k, heads, causal=False, key_mask=None):
    """Softmax attention weights, shape (..., heads, Lq, Lk), for raw arrays."""
    qh, kh = _split_heads(q, heads), _split_heads(k, heads)
    scores = qh @ kh.swapaxes(-1, -2) / math.sqrt(qh.shape[-1])
    Lq, Lk = scores.shape[-2:]
    if causal:
        scores = np.where(np.tril(np.ones((Lq, Lk), dtype=bool)), scores, -np.inf)
    if key_mask is not None:
        km = np.asarray(key_mask, dtype=bool)
        scores = np.where(km[..., None, None, :], scores, -np.inf)
    scores = scores - scores.max(axis=-1, keepdims=True)
    p = np.exp(scores)
    return p / p.sum(axis=-1, keepdims=True)


def attention(q, k, v, heads, causal=False, key_mask=None):
    """Scaled dot-product attention on already-projected q, k, v of width H."""
    p = attention_probs(q.data, k.data, heads, causal, key_mask)
    vh = _split_heads(v.data, heads)
    qh = _split_heads(q.data, heads)
    kh = _split_heads(k.data, heads)
    inv = 1.0 / math.sqrt(qh.shape[-1])

    def backward(g):
        gh = _split_heads(g, heads)
        gp = gh @ vh.swapaxes(-1, -2)
        gv = p.swapaxes(-1, -2) @ gh
        gs = p * (gp - (gp * p).sum(axis=-1, keepdims=True))
        gq = gs @ kh * inv
        gk = gs.swapaxes(-1, -2) @ qh * inv
        return (
            _unbroadcast(_merge_heads(gq), q.shape),
            _unbroadcast(_merge_heads(gk), k.shape),
            _unbroadcast(_merge_heads(gv), v.shape),
        )

    return record(_merge_heads(p @ vh), (q, k, v), backward)


def multi_head_attention(q_in, kv_in, params, heads, causal=False, key_mask=None):
    """Project, attend and re-project. ``params`` holds ``wq, wk, wv, wo`` (H x H)."""
    H = q_in.shape[-1]
    if heads < 1 or H % heads:
        raise ConfigError(f"width {H} is not divisible by {heads} heads")
    if kv_in.shape[-1] != H:
        raise ValueError(f"query width {H} != key/value width {kv_in.shape[-1]}")
    q = matmul(q_in, params["wq"])
    k = matmul(kv_in, params["wk"])
    v = matmul(kv_in, params["wv"])
    return matmul(attention(q, k, v, heads, causal, key_mask), params["wo"])


def embedding(ids, table):
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ValueError("token ids must be integers")
    V = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= V):
        raise ValueError(f"token id out of range [0, {V})")

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return record(table.data[ids], (table,), backward)


def cross_entropy(logits, targets, ignore_id=0):
    """Mean token negative log-likelihood over targets != ``ignore_id``."""
    targets = np.asarray(targets)
    if targets.shape != logits.shape[:-1]:
        raise ValueError(f"targets {targets.shape} do not match logits {logits.shape}")
    keep = targets != ignore_id
    count = int(keep.sum())
    if count == 0:
        raise ValueError("no non-ignored targets")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    safe = np.where(keep, targets, 0)
    picked = np.take_along_axis(logp, safe[..., None], axis=-1)[..., 0]
    loss = -(picked * keep).sum() / count

    def backward(g):
        grad = np.exp(logp)
        np.put_along_axis(grad, safe[..., None], np.take_along_axis(grad, safe[..., None], axis=-1) - 1.0, axis=-1)
        return (grad * (keep[..., None] * (g / count)),)

    return record(np.asarray(loss), (logits,), backward)


def ssm_kernel(params, length):
    """Materialize (H, length) kernels from a dict of the seven SSM parameter tensors."""
    fields = _ssm.PARAM_FIELDS
    state = _ssm.DiagonalSSM(*(params[f].data for f in fields))
    values = _ssm.kernel_values(state, length)

    def backward(g):
        grads = _ssm.kernel_param_grads(state, g)
        return tuple(grads[f] for f in fields)

    return record(values, tuple(params[f] for f in fields), backward)


def bidirectional_conv(u, k_fwd, k_bwd, d):
    """Causal conv with ``k_fwd`` plus cross-correlation with ``k_bwd`` plus ``d * u``."""
    if u.shape[-1] != d.shape[0] or k_fwd.shape != k_bwd.shape or k_fwd.shape != (d.shape[0], u.shape[-2]):
        raise ValueError(f"bidirectional conv shapes disagree: u {u.shape}, kernels {k_fwd.shape}/{k_bwd.shape}")
    out = _ssm.bidirectional_conv(u.data, k_fwd.data, k_bwd.data, d.data)
    return record(
        out,
        (u, k_fwd, k_bwd, d),
        lambda g: _ssm.bidirectional_conv_grads(u.data, k_fwd.data, k_bwd.data, d.data, g),
    )


def sinusoidal_positions(length, width):
    pos = np.arange(length)[:, None]
    i = np.arange(width // 2)[None, :]
    angle = pos / np.power(10000.0, 2 * i / width)
    out = np.zeros((length, width))
    out[:, 0 : 2 * (width // 2) : 2] = np.sin(angle)
    out[:, 1 : 2 * (width // 2) : 2] = np.cos(angle)
    return out


__all__ = [
    "ConfigError",
    "Tensor",
    "add",
    "attention",
    "attention_probs",
    "bidirectional_conv",
    "cross_entropy",
    "dropout",
    "embedding",
    "gated_gelu_ff",
    "gelu",
    "layer_norm",
    "linear",
    "matmul",
    "mul",
    "multi_head_attention",
    "scale",
    "sinusoidal_positions",
    "ssm_kernel",
    "total",
    "transpose",
]
