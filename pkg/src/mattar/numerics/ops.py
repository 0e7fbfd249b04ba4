"""Differentiable building blocks shared by the policy and forward-model nets."""

from __future__ import annotations

import numpy as np

from .tensor import TINY, Tensor, as_tensor, softmax

MASK_FILL = -1e9


def attention(q, keys, values, mask=None) -> Tensor:
    """Scaled dot-product attention pooled to a single vector per query.

    ``q`` has shape (..., d_k), ``keys`` (..., j, d_k), ``values`` (..., j, d_v)
    and ``mask`` (..., j) with 1 for rows that participate. Masked rows are
    excluded by pushing their logits to ``MASK_FILL`` before the softmax, so
    the output is invariant to co-permutations of the unmasked key/value rows.
    """
    q = as_tensor(q)
    keys = as_tensor(keys)
    values = as_tensor(values)
    d_k = q.shape[-1]
    if d_k <= 0:
        raise ValueError("query dimension must be positive")
    q_rows = q.reshape(q.shape[:-1] + (1, d_k))
    logits = (keys * q_rows).sum(axis=-1) * (1.0 / np.sqrt(d_k))
    if mask is not None:
        mask_arr = np.asarray(mask, dtype=logits.dtype)
        if not np.all(mask_arr.sum(axis=-1) > 0):
            raise ValueError("empty attention support")
        logits = logits + Tensor((1.0 - mask_arr) * MASK_FILL)
    weights = softmax(logits, axis=-1)
    return (weights.reshape(weights.shape + (1,)) * values).sum(axis=-2)


def self_attention(tokens, w_q, w_k, w_v, scale_dim: int, b_q=None, b_k=None, b_v=None) -> Tensor:
    """All-pairs attention among row tokens: softmax(QK^T/sqrt(d)) V."""
    from .tensor import linear

    tokens = as_tensor(tokens)
    q = linear(tokens, w_q, b_q)
    k = linear(tokens, w_k, b_k)
    v = linear(tokens, w_v, b_v)
    logits = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(scale_dim))
    return softmax(logits, axis=-1) @ v


def entropy(mu) -> Tensor:
    """Shannon entropy in nats of a distribution vector, with 0*ln(0) = 0."""
    mu = as_tensor(mu)
    if np.any(mu.data < 0):
        raise ValueError("not a simplex point")
    return -(mu * mu.clip_min(TINY).log()).sum()


def gram_schmidt(vectors: np.ndarray) -> np.ndarray:
    """Orthonormalize the rows of `vectors`, keeping the first row's direction.

    Runs classical Gram-Schmidt with a re-orthogonalization pass per row,
    accumulating in float64 and returning the input dtype. Raises on rank
    deficiency (residual norm below 1e-8) and on more rows than columns.
    """
    arr = np.asarray(vectors)
    if arr.ndim != 2:
        raise ValueError("expected a 2-D array of row vectors")
    k, m = arr.shape
    if k > m:
        raise ValueError("dependent vectors: more rows than columns")
    out = arr.astype(np.float64).copy()
    for i in range(k):
        for _ in range(2):  # second pass scrubs rounding left by the first
            for j in range(i):
                out[i] -= np.dot(out[i], out[j]) * out[j]
        norm = np.linalg.norm(out[i])
        if norm < 1e-8:
            raise ValueError("dependent vectors")
        out[i] /= norm
    return out.astype(arr.dtype if arr.dtype in (np.float32, np.float64) else np.float32)
