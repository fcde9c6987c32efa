"""Numba-compiled implementations of the hot backbone kernels.

Same contracts as :mod:`switchlm.kernels.numpy_impl`. Kernels are serial
(`parallel=False`) and compiled without fastmath so results stay
deterministic run-to-run; they agree with the numpy path to floating-point
tolerance, not bit-for-bit (BLAS and fused loops order sums differently).
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _gather(ctx, emb):
    b, w = ctx.shape
    e = emb.shape[1]
    x = np.empty((b, w * e), dtype=emb.dtype)
    for i in range(b):
        for j in range(w):
            x[i, j * e : (j + 1) * e] = emb[ctx[i, j]]
    return x


@njit(cache=True)
def _forward_hidden(ctx, emb, wh, bh):
    # One-row dots, not a single gemm: BLAS rounds a row differently
    # depending on the batch shape, and a row's result must not depend on
    # what it was batched with.
    x = _gather(ctx, emb)
    wh_t = wh.T.copy()
    b = x.shape[0]
    d = wh.shape[0]
    h = np.empty((b, d), dtype=x.dtype)
    for i in range(b):
        a = np.dot(x[i], wh_t)
        for j in range(d):
            h[i, j] = np.tanh(a[j] + bh[j])
    return h, x


@njit(cache=True)
def _word_logits_batch(h, wv, bv):
    wv_t = wv.T.copy()
    b = h.shape[0]
    v = wv.shape[0]
    z = np.empty((b, v), dtype=h.dtype)
    for i in range(b):
        row = np.dot(h[i], wv_t)
        for j in range(v):
            z[i, j] = row[j] + bv[j]
    return z


@njit(cache=True)
def _neg_log_probs(z, targets):
    b, v = z.shape
    out = np.empty(b, dtype=np.float64)
    for i in range(b):
        zmax = -np.inf
        for j in range(v):
            zj = float(z[i, j])
            if zj > zmax:
                zmax = zj
        denom = 0.0
        for j in range(v):
            denom += np.exp(float(z[i, j]) - zmax)
        out[i] = np.log(denom) - (float(z[i, targets[i]]) - zmax)
    return out


@njit(cache=True)
def _xent_grad(z, targets):
    b, v = z.shape
    dz = np.empty((b, v), dtype=np.float64)
    loss_sum = 0.0
    for i in range(b):
        zmax = -np.inf
        for j in range(v):
            zj = float(z[i, j])
            if zj > zmax:
                zmax = zj
        denom = 0.0
        for j in range(v):
            dz[i, j] = np.exp(float(z[i, j]) - zmax)
            denom += dz[i, j]
        loss_sum += np.log(denom) - (float(z[i, targets[i]]) - zmax)
        for j in range(v):
            dz[i, j] /= denom
        dz[i, targets[i]] -= 1.0
    return loss_sum, dz


@njit(cache=True)
def _backbone_backward(dz, h, x, ctx, wv, wh, n_emb_rows, emb_dim):
    h64 = h.astype(np.float64)
    x64 = x.astype(np.float64)
    wv64 = wv.astype(np.float64)
    wh64 = wh.astype(np.float64)

    dz_t = dz.T.copy()
    dwv = np.dot(dz_t, h64)
    dbv = np.empty(dz.shape[1], dtype=np.float64)
    for j in range(dz.shape[1]):
        s = 0.0
        for i in range(dz.shape[0]):
            s += dz[i, j]
        dbv[j] = s

    dh = np.dot(dz, wv64)
    da = dh * (1.0 - h64 * h64)
    da_t = da.T.copy()
    dwh = np.dot(da_t, x64)
    dbh = np.empty(da.shape[1], dtype=np.float64)
    for j in range(da.shape[1]):
        s = 0.0
        for i in range(da.shape[0]):
            s += da[i, j]
        dbh[j] = s

    dx = np.dot(da, wh64)
    demb = np.zeros((n_emb_rows, emb_dim), dtype=np.float64)
    b, w = ctx.shape
    for i in range(b):
        for j in range(w):
            row = ctx[i, j]
            base = j * emb_dim
            for k in range(emb_dim):
                demb[row, k] += dx[i, base + k]
    return demb, dwh, dbh, dwv, dbv


# Thin wrappers keep the public names un-jitted so signatures stay
# introspectable and dispatch errors surface as ordinary exceptions.


def forward_hidden(ctx, emb, wh, bh):
    return _forward_hidden(ctx, emb, wh, bh)


def word_logits_batch(h, wv, bv):
    return _word_logits_batch(h, wv, bv)


def neg_log_probs(z, targets):
    return _neg_log_probs(z, targets)


def xent_grad(z, targets):
    return _xent_grad(z, targets)


def backbone_backward(dz, h, x, ctx, wv, wh, n_emb_rows, emb_dim):
    return _backbone_backward(dz, h, x, ctx, wv, wh, n_emb_rows, emb_dim)
