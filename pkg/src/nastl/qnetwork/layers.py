"""Forward/backward primitives for the Q-network.

Every forward returns (output, cache); the matching backward consumes the
upstream gradient plus that cache and returns input/parameter gradients.
Shapes use leading batch dims freely; parameter gradients are summed over
them. All math follows the exact computation used in the forward pass so
finite-difference checks close to machine precision (in float64). Hot paths
avoid temporaries: leading dims are collapsed so BLAS sees one large GEMM,
and softmax mutates its (owned) score buffer in place.
"""

from __future__ import annotations

import numpy as np

LN_EPS = 1e-5


def linear_fwd(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    y = x.reshape(-1, x.shape[-1]) @ w
    y += b
    return y.reshape(*x.shape[:-1], w.shape[1]), (x, w)


def linear_bwd(dy: np.ndarray, cache):
    x, w = cache
    dy2 = dy.reshape(-1, dy.shape[-1])
    dx = (dy2 @ w.T).reshape(x.shape)
    x2 = x.reshape(-1, x.shape[-1])
    dw = x2.T @ dy2
    db = dy2.sum(axis=0)
    return dx, dw, db


def relu_fwd(x: np.ndarray):
    y = np.maximum(x, 0.0)
    return y, y  # y > 0 <=> x > 0, so the output doubles as the cache


def relu_bwd(dy: np.ndarray, cache):
    return dy * (cache > 0.0)


def layernorm_fwd(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xhat = x - mu
    var = np.einsum("...i,...i->...", xhat, xhat) / x.shape[-1]
    inv = 1.0 / np.sqrt(var + LN_EPS)[..., None]
    xhat *= inv
    return g * xhat + b, (xhat, inv, g)


def layernorm_bwd(dy: np.ndarray, cache):
    xhat, inv, g = cache
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    dg = (dy * xhat).reshape(-1, dy.shape[-1]).sum(axis=0)
    db = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    return dx, dg, db


def softmax_lastaxis_(scores: np.ndarray) -> np.ndarray:
    """In-place softmax over the last axis; rows may contain -inf (masked)
    but need at least one finite entry. The caller must own `scores`."""
    m = scores.max(axis=-1, keepdims=True)
    scores -= m
    np.exp(scores, out=scores)
    scores /= scores.sum(axis=-1, keepdims=True)
    return scores


def softmax_bwd(dy: np.ndarray, y: np.ndarray):
    return y * (dy - np.einsum("...i,...i->...", dy, y)[..., None])


def split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    """(B, T, d) -> (B, H, T, d/H)"""
    b, t, d = x.shape
    return x.reshape(b, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def merge_heads(x: np.ndarray) -> np.ndarray:
    """(B, H, T, dk) -> (B, T, d)"""
    b, h, t, dk = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dk)


def attention_fwd(q: np.ndarray, k: np.ndarray, v: np.ndarray, key_mask: np.ndarray):
    """Scaled dot-product attention over valid keys only.

    q, k, v: (B, H, T, dk); key_mask: (B, T) bool. Masked keys receive an
    additive -inf score, so their weights are exactly zero and their
    contents cannot influence any output.
    """
    dk = q.shape[-1]
    scores = q @ k.transpose(0, 1, 3, 2)
    scores /= np.sqrt(dk)
    neg = np.zeros_like(key_mask, dtype=scores.dtype)
    neg[~key_mask] = -np.inf
    scores += neg[:, None, None, :]
    w = softmax_lastaxis_(scores)
    out = w @ v
    return out, (q, k, v, w, dk)


def attention_bwd(dout: np.ndarray, cache):
    q, k, v, w, dk = cache
    dw = dout @ v.transpose(0, 1, 3, 2)
    dv = w.transpose(0, 1, 3, 2) @ dout
    dscores = softmax_bwd(dw, w)
    dscores /= np.sqrt(dk)
    dq = dscores @ k
    dk_ = dscores.transpose(0, 1, 3, 2) @ q
    return dq, dk_, dv


def masked_mean_fwd(x: np.ndarray, mask: np.ndarray):
    """Mean over valid tokens: (B, T, d), (B, T) -> (B, d)."""
    m = mask.astype(x.dtype)
    n = m.sum(axis=1, keepdims=True)
    out = np.einsum("btd,bt->bd", x, m)
    out /= n
    return out, (m, n)


def masked_mean_bwd(dy: np.ndarray, cache):
    m, n = cache
    return (dy / n)[:, None, :] * m[:, :, None]
