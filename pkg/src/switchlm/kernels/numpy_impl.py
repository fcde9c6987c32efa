"""Pure-numpy implementations of the hot backbone kernels.

Reference semantics for the numba path in :mod:`switchlm.kernels.numba_impl`;
selected at runtime via the ``SWITCHLM_KERNELS`` environment variable.

Conventions shared by both implementations:
  - ``ctx`` is an int32 matrix [B, W] of token ids (left-padded windows),
  - parameter arrays share one float dtype (float32 in production models,
    float64 in gradient-check instances),
  - losses and gradients are accumulated in float64 regardless of the
    parameter dtype, so reductions are reproducible.
"""

from __future__ import annotations

import numpy as np


def forward_hidden(ctx, emb, wh, bh):
    """Hidden states for a batch of context windows.

    Returns ``(H, X)`` where ``X`` [B, W*e] is the concatenated window
    embedding (reused by the backward pass) and ``H = tanh(X @ wh.T + bh)``.
    Rows go through one-row dot products: BLAS rounds a row differently
    depending on the gemm batch shape, and a row's result must not depend
    on what it was batched with.
    """
    b, w = ctx.shape
    e = emb.shape[1]
    x = emb[ctx].reshape(b, w * e)
    wh_t = np.ascontiguousarray(wh.T)
    a = np.empty((b, wh.shape[0]), dtype=x.dtype)
    for i in range(b):
        np.dot(x[i], wh_t, out=a[i])
    h = np.tanh(a + bh)
    return h, x


def word_logits_batch(h, wv, bv):
    """Word logits for a batch of hidden states: ``H @ wv.T + bv``.

    Same one-row-at-a-time scheme as :func:`forward_hidden`.
    """
    wv_t = np.ascontiguousarray(wv.T)
    z = np.empty((h.shape[0], wv.shape[0]), dtype=h.dtype)
    for i in range(h.shape[0]):
        np.dot(h[i], wv_t, out=z[i])
    return z + bv


def neg_log_probs(z, targets):
    """Per-row -log softmax(z)[target], accumulated in float64."""
    z64 = z.astype(np.float64)
    zmax = z64.max(axis=1)
    shifted = z64 - zmax[:, None]
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(z.shape[0])
    return logsumexp - shifted[rows, targets]


def xent_grad(z, targets):
    """Summed cross-entropy loss and unscaled logit gradient.

    Returns ``(loss_sum, dZ)`` with ``dZ[i] = softmax(z[i]) - onehot(t[i])``
    in float64; the caller applies any 1/N scaling.
    """
    z64 = z.astype(np.float64)
    zmax = z64.max(axis=1)
    shifted = z64 - zmax[:, None]
    expz = np.exp(shifted)
    denom = expz.sum(axis=1)
    rows = np.arange(z.shape[0])
    loss_sum = float((np.log(denom) - shifted[rows, targets]).sum())
    dz = expz / denom[:, None]
    dz[rows, targets] -= 1.0
    return loss_sum, dz


def backbone_backward(dz, h, x, ctx, wv, wh, n_emb_rows, emb_dim):
    """Gradients of the scaled loss w.r.t. all backbone parameters.

    ``dz`` [B, V] must already carry the loss scaling. All products and
    reductions run in float64. Returns
    ``(dEmb, dWh, dBh, dWv, dBv)`` as float64 arrays.
    """
    h64 = h.astype(np.float64)
    x64 = x.astype(np.float64)
    dwv = dz.T @ h64
    dbv = dz.sum(axis=0)
    dh = dz @ wv.astype(np.float64)
    da = dh * (1.0 - h64 * h64)
    dwh = da.T @ x64
    dbh = da.sum(axis=0)
    dx = da @ wh.astype(np.float64)
    demb = np.zeros((n_emb_rows, emb_dim), dtype=np.float64)
    b, w = ctx.shape
    flat = dx.reshape(b, w, emb_dim)
    for j in range(w):
        np.add.at(demb, ctx[:, j], flat[:, j, :])
    return demb, dwh, dbh, dwv, dbv
