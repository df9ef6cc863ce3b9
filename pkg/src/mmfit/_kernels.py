"""Fused normalization kernels for the sampling network.

Each parallel iteration owns a disjoint slice of the output and performs its
reductions serially, so results are bit-reproducible run to run regardless of
thread count. Kernels specialize for float32 and float64 via numba dispatch.
"""

import numba
import numpy as np


@numba.njit(parallel=True, fastmath=True, cache=True)
def instance_norm_forward(y, eps):
    """Normalize each (channel, sample) row over the observation axis in
    place; returns the inverse standard deviations (C, B)."""
    c_dim, b_dim, n = y.shape
    inv_std = np.empty((c_dim, b_dim), dtype=y.dtype)
    for cb in numba.prange(c_dim * b_dim):
        c = cb // b_dim
        b = cb % b_dim
        row = y[c, b]
        m = 0.0
        for i in range(n):
            m += row[i]
        m /= n
        v = 0.0
        for i in range(n):
            d = row[i] - m
            v += d * d
        s = 1.0 / np.sqrt(v / n + eps)
        inv_std[c, b] = s
        for i in range(n):
            row[i] = (row[i] - m) * s
    return inv_std


@numba.njit(parallel=True, fastmath=True, cache=True)
def instance_norm_backward(dxhat, xhat, inv_std):
    c_dim, b_dim, n = dxhat.shape
    out = np.empty_like(dxhat)
    for cb in numba.prange(c_dim * b_dim):
        c = cb // b_dim
        b = cb % b_dim
        dr = dxhat[c, b]
        xr = xhat[c, b]
        m = 0.0
        mx = 0.0
        for i in range(n):
            m += dr[i]
            mx += dr[i] * xr[i]
        m /= n
        mx /= n
        s = inv_std[c, b]
        o = out[c, b]
        for i in range(n):
            o[i] = s * (dr[i] - m - xr[i] * mx)
    return out


@numba.njit(parallel=True, fastmath=True, cache=True)
def bn_relu_train_forward(xhat, scale, shift, eps):
    """Batch norm over the (sample, observation) axes plus ReLU.

    Returns (out, batch_mean, batch_var_biased, inv_std)."""
    c_dim, b_dim, n = xhat.shape
    out = np.empty_like(xhat)
    bmu = np.empty(c_dim, dtype=xhat.dtype)
    bvar = np.empty(c_dim, dtype=xhat.dtype)
    inv_bn = np.empty(c_dim, dtype=xhat.dtype)
    for c in numba.prange(c_dim):
        m = 0.0
        for b in range(b_dim):
            row = xhat[c, b]
            for i in range(n):
                m += row[i]
        m /= b_dim * n
        v = 0.0
        for b in range(b_dim):
            row = xhat[c, b]
            for i in range(n):
                d = row[i] - m
                v += d * d
        v /= b_dim * n
        if v < 0.0:
            v = 0.0
        s = 1.0 / np.sqrt(v + eps)
        bmu[c] = m
        bvar[c] = v
        inv_bn[c] = s
        sc = scale[c]
        sh = shift[c]
        for b in range(b_dim):
            row = xhat[c, b]
            orow = out[c, b]
            for i in range(n):
                pre = sc * (row[i] - m) * s + sh
                orow[i] = pre if pre > 0.0 else 0.0
    return out, bmu, bvar, inv_bn


@numba.njit(parallel=True, fastmath=True, cache=True)
def bn_relu_eval_forward(xhat, scale, shift, rmu, rvar, eps):
    c_dim, b_dim, n = xhat.shape
    out = np.empty_like(xhat)
    for c in numba.prange(c_dim):
        m = rmu[c]
        s = 1.0 / np.sqrt(rvar[c] + eps)
        sc = scale[c]
        sh = shift[c]
        for b in range(b_dim):
            row = xhat[c, b]
            orow = out[c, b]
            for i in range(n):
                pre = sc * (row[i] - m) * s + sh
                orow[i] = pre if pre > 0.0 else 0.0
    return out


@numba.njit(parallel=True, fastmath=True, cache=True)
def bn_relu_train_backward(dout, xhat, scale, shift, bmu, inv_bn):
    """Backward through ReLU, the affine map and the batch statistics.

    Recomputes the normalized values and the ReLU mask from the cached
    inputs; returns (dxhat, dscale, dshift)."""
    c_dim, b_dim, n = dout.shape
    dxhat = np.empty_like(dout)
    dscale = np.empty(c_dim, dtype=dout.dtype)
    dshift = np.empty(c_dim, dtype=dout.dtype)
    count = b_dim * n
    for c in numba.prange(c_dim):
        m = bmu[c]
        s = inv_bn[c]
        sc = scale[c]
        sh = shift[c]
        sum_d = 0.0
        sum_dx = 0.0
        sum_scale = 0.0
        for b in range(b_dim):
            drow = dout[c, b]
            xrow = xhat[c, b]
            for i in range(n):
                xbn = (xrow[i] - m) * s
                if sc * xbn + sh > 0.0:
                    g = drow[i]
                    sum_scale += g * xbn
                    gs = g * sc
                    sum_d += gs
                    sum_dx += gs * xbn
        # second pass: write gradients using the channel sums
        mean_d = sum_d / count
        mean_dx = sum_dx / count
        dsum_shift = 0.0
        for b in range(b_dim):
            drow = dout[c, b]
            xrow = xhat[c, b]
            orow = dxhat[c, b]
            for i in range(n):
                xbn = (xrow[i] - m) * s
                if sc * xbn + sh > 0.0:
                    g = drow[i]
                    dsum_shift += g
                    orow[i] = s * (g * sc - mean_d - xbn * mean_dx)
                else:
                    orow[i] = s * (-mean_d - xbn * mean_dx)
        dscale[c] = sum_scale
        dshift[c] = dsum_shift
    return dxhat, dscale, dshift


@numba.njit(parallel=True, fastmath=True, cache=True)
def bn_relu_eval_backward(dout, xhat, scale, shift, rmu, inv_bn):
    """Eval-mode variant: running statistics are constants."""
    c_dim, b_dim, n = dout.shape
    dxhat = np.empty_like(dout)
    dscale = np.empty(c_dim, dtype=dout.dtype)
    dshift = np.empty(c_dim, dtype=dout.dtype)
    for c in numba.prange(c_dim):
        m = rmu[c]
        s = inv_bn[c]
        sc = scale[c]
        sh = shift[c]
        sum_scale = 0.0
        sum_shift = 0.0
        for b in range(b_dim):
            drow = dout[c, b]
            xrow = xhat[c, b]
            orow = dxhat[c, b]
            for i in range(n):
                xbn = (xrow[i] - m) * s
                if sc * xbn + sh > 0.0:
                    g = drow[i]
                    sum_scale += g * xbn
                    sum_shift += g
                    orow[i] = g * sc * s
                else:
                    orow[i] = 0.0
        dscale[c] = sum_scale
        dshift[c] = sum_shift
    return dxhat, dscale, dshift
