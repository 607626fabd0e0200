"""Dense tensor ops with hand-derived backward passes.

Tensors are contiguous numpy arrays, float32 during training; every op
preserves the input dtype so verification can run the identical code in
float64. Convolutions take batched (N, C, H, W) input and run an im2col
matmul per sample to bound working memory.
"""

from __future__ import annotations

import numpy as np


class EmptySupportError(ValueError):
    """Categorical distribution with no finite logit."""


def _im2col(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    """(C, H, W) -> (C*k*k, Ho*Wo) patch matrix."""
    c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    s0, s1, s2 = x.strides
    patches = np.lib.stride_tricks.as_strided(
        x, shape=(c, k, k, ho, wo),
        strides=(s0, s1, s2, s1 * stride, s2 * stride))
    return np.ascontiguousarray(patches).reshape(c * k * k, ho * wo), (ho, wo)


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                   stride: int = 1, pad: int = 0) -> np.ndarray:
    """Cross-correlation of (N, Cin, H, W) with (Cout, Cin, k, k) kernels."""
    n, cin, h, win = x.shape
    cout, cin_w, k, _ = w.shape
    if cin != cin_w:
        raise ValueError(f"channel mismatch: input {cin}, kernel {cin_w}")
    wm = w.reshape(cout, cin * k * k)
    out = None
    for i in range(n):
        cols, (ho, wo) = _im2col(x[i], k, stride, pad)
        y = wm @ cols
        if out is None:
            out = np.empty((n, cout, ho, wo), dtype=x.dtype)
        out[i] = y.reshape(cout, ho, wo)
    return out + b[None, :, None, None]


def conv2d_backward(grad_y: np.ndarray, x: np.ndarray, w: np.ndarray,
                    stride: int = 1, pad: int = 0):
    """Gradients (grad_x, grad_w, grad_b) for conv2d_forward."""
    n, cin, h, win = x.shape
    cout, _, k, _ = w.shape
    _, _, ho, wo = grad_y.shape
    wm = w.reshape(cout, cin * k * k)
    grad_w = np.zeros_like(w).reshape(cout, cin * k * k)
    grad_x = np.zeros_like(x)
    hp, wp = h + 2 * pad, win + 2 * pad
    for i in range(n):
        cols, _ = _im2col(x[i], k, stride, pad)
        g = grad_y[i].reshape(cout, ho * wo)
        grad_w += g @ cols.T
        gcols = (wm.T @ g).reshape(cin, k, k, ho, wo)
        gx = np.zeros((cin, hp, wp), dtype=x.dtype)
        for di in range(k):
            for dj in range(k):
                gx[:, di:di + ho * stride:stride, dj:dj + wo * stride:stride] += gcols[:, di, dj]
        grad_x[i] = gx[:, pad:pad + h, pad:pad + win] if pad else gx
    grad_b = grad_y.sum(axis=(0, 2, 3))
    return grad_x, grad_w.reshape(w.shape), grad_b


def depthwise_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                      pad: int = 1) -> np.ndarray:
    """One k x k kernel per channel, stride 1; w has shape (C, k, k)."""
    n, c, h, win = x.shape
    _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = h + 2 * pad - k + 1, win + 2 * pad - k + 1
    out = np.zeros((n, c, ho, wo), dtype=x.dtype)
    for di in range(k):
        for dj in range(k):
            out += w[None, :, di, dj, None, None] * xp[:, :, di:di + ho, dj:dj + wo]
    return out + b[None, :, None, None]


def depthwise_backward(grad_y: np.ndarray, x: np.ndarray, w: np.ndarray, pad: int = 1):
    n, c, h, win = x.shape
    _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = grad_y.shape[2], grad_y.shape[3]
    grad_w = np.zeros_like(w)
    grad_xp = np.zeros_like(xp)
    for di in range(k):
        for dj in range(k):
            grad_w[:, di, dj] = np.einsum("nchw,nchw->c", grad_y,
                                          xp[:, :, di:di + ho, dj:dj + wo])
            grad_xp[:, :, di:di + ho, dj:dj + wo] += w[None, :, di, dj, None, None] * grad_y
    grad_x = grad_xp[:, :, pad:pad + h, pad:pad + win] if pad else grad_xp
    grad_b = grad_y.sum(axis=(0, 2, 3))
    return grad_x, grad_w, grad_b


def pointwise_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """1x1 convolution: channel mixing only; w has shape (Cout, Cin)."""
    n, c, h, win = x.shape
    y = np.einsum("oc,nchw->nohw", w, x, optimize=True)
    return y + b[None, :, None, None]


def pointwise_backward(grad_y: np.ndarray, x: np.ndarray, w: np.ndarray):
    grad_x = np.einsum("oc,nohw->nchw", w, grad_y, optimize=True)
    grad_w = np.einsum("nohw,nchw->oc", grad_y, x, optimize=True)
    grad_b = grad_y.sum(axis=(0, 2, 3))
    return grad_x, grad_w, grad_b


def fc_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(N, D) @ (O, D)^T + b."""
    return x @ w.T + b


def fc_backward(grad_y: np.ndarray, x: np.ndarray, w: np.ndarray):
    return grad_y @ w, grad_y.T @ x, grad_y.sum(axis=0)


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(grad_y: np.ndarray, x: np.ndarray) -> np.ndarray:
    return grad_y * (x > 0)


def _pool_bins(size: int, out: int):
    starts = (np.arange(out) * size) // out
    ends = -(-(np.arange(1, out + 1) * size) // out)  # ceil division
    return starts, ends


def adaptive_avg_pool_forward(x: np.ndarray, out_hw: tuple[int, int] = (7, 7)) -> np.ndarray:
    n, c, h, w = x.shape
    oh, ow = out_hw
    rs, re = _pool_bins(h, oh)
    cs, ce = _pool_bins(w, ow)
    y = np.empty((n, c, oh, ow), dtype=x.dtype)
    for i in range(oh):
        for j in range(ow):
            y[:, :, i, j] = x[:, :, rs[i]:re[i], cs[j]:ce[j]].mean(axis=(2, 3))
    return y


def adaptive_avg_pool_backward(grad_y: np.ndarray, in_hw: tuple[int, int]) -> np.ndarray:
    n, c, oh, ow = grad_y.shape
    h, w = in_hw
    rs, re = _pool_bins(h, oh)
    cs, ce = _pool_bins(w, ow)
    grad_x = np.zeros((n, c, h, w), dtype=grad_y.dtype)
    for i in range(oh):
        for j in range(ow):
            count = (re[i] - rs[i]) * (ce[j] - cs[j])
            grad_x[:, :, rs[i]:re[i], cs[j]:ce[j]] += grad_y[:, :, i, j, None, None] / count
    return grad_x


def softmax(logits: np.ndarray) -> np.ndarray:
    """Stable softmax over the last axis; -inf entries get zero mass."""
    m = np.max(logits, axis=-1, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise EmptySupportError("softmax over logits with no finite entry")
    e = np.exp(logits - m)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    m = np.max(logits, axis=-1, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise EmptySupportError("log-softmax over logits with no finite entry")
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def categorical_sample(logits: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF sample from softmax(logits) using the run's generator."""
    p = softmax(np.asarray(logits, dtype=np.float64))
    u = rng.random()
    return int(np.searchsorted(np.cumsum(p), u, side="right").clip(0, len(p) - 1))


def categorical_entropy(logits: np.ndarray) -> float:
    logp = log_softmax(np.asarray(logits, dtype=np.float64))
    p = np.exp(logp)
    return float(-(p * np.where(p > 0, logp, 0.0)).sum())
