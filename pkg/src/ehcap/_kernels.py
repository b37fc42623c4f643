"""Compiled inner loops for path simulation and forward recursions.

Hidden states are pairs (input context c, channel state z). Kernels are
passed as dense arrays: ``ctx_kernel[c, v]``, ``nxt[c, v]`` and
``K[v, z, y, z']``. All log quantities are natural logs.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def _draw(cum, u):
    j = np.searchsorted(cum, u, side="right")
    return min(j, cum.shape[0] - 1)


@njit(cache=True)
def simulate(c0, z0, ctx_cum, nxt, K_cum, u, ny, nz):
    """Draw (v, y, z) with inverse-CDF sampling from uniforms ``u[n, 0:2]``."""
    N = u.shape[0]
    v = np.empty(N, np.int64)
    y = np.empty(N, np.int64)
    z = np.empty(N + 1, np.int64)
    c = c0
    z[0] = z0
    for n in range(N):
        vn = _draw(ctx_cum[c], u[n, 0])
        j = _draw(K_cum[vn, z[n]], u[n, 1])
        v[n] = vn
        y[n] = j // nz
        z[n + 1] = j % nz
        c = nxt[c, vn]
    return v, y, z


@njit(cache=True)
def forward_output(alpha0, ctx_kernel, nxt, K, y):
    """Per-step log normalizers of p(y_n | y^{n-1}) with contexts and states hidden."""
    nc, nz = alpha0.shape
    nv = ctx_kernel.shape[1]
    N = y.shape[0]
    logs = np.empty(N)
    a = alpha0.copy()
    b = np.zeros((nc, nz))
    for n in range(N):
        b[:, :] = 0.0
        yn = y[n]
        for c in range(nc):
            for z in range(nz):
                w = a[c, z]
                if w == 0.0:
                    continue
                for v in range(nv):
                    pv = w * ctx_kernel[c, v]
                    if pv == 0.0:
                        continue
                    c2 = nxt[c, v]
                    for t in range(nz):
                        b[c2, t] += pv * K[v, z, yn, t]
        s = b.sum()
        logs[n] = np.log(s)
        a[:, :] = b / s
    return logs


@njit(cache=True)
def forward_joint(alpha0, ctx_kernel, nxt, K, v, y):
    """Per-step log normalizers of p(v_n, y_n | v^{n-1}, y^{n-1})."""
    nc, nz = alpha0.shape
    N = y.shape[0]
    logs = np.empty(N)
    a = alpha0.copy()
    b = np.zeros((nc, nz))
    for n in range(N):
        b[:, :] = 0.0
        vn, yn = v[n], y[n]
        for c in range(nc):
            pv = ctx_kernel[c, vn]
            if pv == 0.0:
                continue
            c2 = nxt[c, vn]
            for z in range(nz):
                w = a[c, z] * pv
                if w == 0.0:
                    continue
                for t in range(nz):
                    b[c2, t] += w * K[vn, z, yn, t]
        s = b.sum()
        logs[n] = np.log(s)
        a[:, :] = b / s
    return logs


@njit(cache=True)
def forward_input(init, ctx_kernel, nxt, v):
    """Per-step log normalizers of p(v_n | v^{n-1})."""
    nc = init.shape[0]
    N = v.shape[0]
    logs = np.empty(N)
    a = init.copy()
    b = np.zeros(nc)
    for n in range(N):
        b[:] = 0.0
        vn = v[n]
        for c in range(nc):
            b[nxt[c, vn]] += a[c] * ctx_kernel[c, vn]
        s = b.sum()
        logs[n] = np.log(s)
        a[:] = b / s
    return logs


@njit(cache=True)
def branch_statistics(alpha0, ctx_kernel, nxt, K, y):
    """Forward-backward over (context, state) given outputs only.

    Returns ``A[c, v] = sum_n P_n(c, v) log P_n(c, v)`` and
    ``B[c] = sum_n P_n(c) log P_n(c)`` where ``P_n`` is the posterior of the
    context before use n and the input at use n given the whole output path.
    """
    nc, nz = alpha0.shape
    nv = ctx_kernel.shape[1]
    N = y.shape[0]
    alpha = np.empty((N + 1, nc, nz))
    alpha[0] = alpha0
    for n in range(N):
        b = np.zeros((nc, nz))
        yn = y[n]
        for c in range(nc):
            for z in range(nz):
                w = alpha[n, c, z]
                if w == 0.0:
                    continue
                for v in range(nv):
                    pv = w * ctx_kernel[c, v]
                    if pv == 0.0:
                        continue
                    c2 = nxt[c, v]
                    for t in range(nz):
                        b[c2, t] += pv * K[v, z, yn, t]
        alpha[n + 1] = b / b.sum()
    A = np.zeros((nc, nv))
    B = np.zeros(nc)
    beta = np.ones((nc, nz))
    post = np.zeros((nc, nv))
    for n in range(N - 1, -1, -1):
        yn = y[n]
        post[:, :] = 0.0
        newbeta = np.zeros((nc, nz))
        for c in range(nc):
            for v in range(nv):
                pcv = ctx_kernel[c, v]
                if pcv == 0.0:
                    continue
                c2 = nxt[c, v]
                for z in range(nz):
                    acc = 0.0
                    for t in range(nz):
                        acc += K[v, z, yn, t] * beta[c2, t]
                    acc *= pcv
                    newbeta[c, z] += acc
                    post[c, v] += alpha[n, c, z] * acc
        s = post.sum()
        post /= s
        for c in range(nc):
            pc = 0.0
            for v in range(nv):
                p = post[c, v]
                pc += p
                if p > 0.0:
                    A[c, v] += p * np.log(p)
            if pc > 0.0:
                B[c] += pc * np.log(pc)
        beta = newbeta / newbeta.max()
    return A, B
