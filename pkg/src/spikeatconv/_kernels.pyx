# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: fused LIF time loop and depthwise convolution.

Every function has a numpy twin in ``_kernels_py.py`` with the same signature.
Arithmetic in the LIF update follows the exact operation order of the numpy
version so that spikes agree bit for bit.
"""

import numpy as np
cimport cython
from cython cimport floating
from libc.math cimport atan, exp, M_PI

ATAN = 0
SIGMOID = 1


cdef inline double _grad(int kind, double alpha, double x) noexcept nogil:
    cdef double z, s
    if kind == 0:
        z = (M_PI / 2 * alpha) * x
        return alpha / (2 * (1 + z * z))
    s = 1 / (1 + exp(-alpha * x))
    return alpha * s * (1 - s)


cdef inline double _primitive(int kind, double alpha, double x) noexcept nogil:
    if kind == 0:
        return atan((M_PI / 2 * alpha) * x) / M_PI + 0.5
    return 1 / (1 + exp(-alpha * x))


def surrogate_grad(int kind, double alpha, x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    cdef double[::1] xv = x.reshape(-1)
    cdef double[::1] ov = out.reshape(-1)
    cdef Py_ssize_t i
    for i in range(xv.shape[0]):
        ov[i] = _grad(kind, alpha, xv[i])
    return out


def surrogate_primitive(int kind, double alpha, x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    cdef double[::1] xv = x.reshape(-1)
    cdef double[::1] ov = out.reshape(-1)
    cdef Py_ssize_t i
    for i in range(xv.shape[0]):
        ov[i] = _primitive(kind, alpha, xv[i])
    return out


cdef void _lif_fwd(floating[:, ::1] x, floating[:, ::1] spikes, floating[:, ::1] ds_dh,
                   floating[:, ::1] dv_dh, double tau, double v_threshold, double v_reset,
                   double v_rest, double r, long refractory_steps, int kind, double alpha,
                   bint smooth, bint detach_reset) noexcept nogil:
    cdef Py_ssize_t T = x.shape[0], M = x.shape[1], t, i
    cdef floating inv_tau = <floating>(1.0 / tau)
    cdef floating vth = <floating>v_threshold
    cdef floating vr = <floating>v_reset
    cdef floating vrest = <floating>v_rest
    cdef floating rr = <floating>r
    cdef floating v, h, u, s, d
    cdef long ref
    cdef bint fired
    for i in range(M):
        v = vrest
        ref = 0
        for t in range(T):
            h = v + inv_tau * (-(v - vrest) + rr * x[t, i])
            u = h - vth
            fired = u >= 0
            d = <floating>_grad(kind, alpha, u)
            if smooth:
                s = <floating>_primitive(kind, alpha, u)
            else:
                s = 1 if fired else 0
            if refractory_steps > 0:
                if ref > 0:
                    s = 0
                    d = 0
                    ref -= 1
                elif fired:
                    ref = refractory_steps
            v = s * vr + (1 - s) * h
            spikes[t, i] = s
            ds_dh[t, i] = d
            if detach_reset:
                dv_dh[t, i] = 1 - s
            else:
                dv_dh[t, i] = (1 - s) + (vr - h) * d


def lif_forward(x, double tau, double v_threshold, double v_reset, double v_rest, double r,
                long refractory_steps, int kind, double alpha, bint smooth, bint detach_reset):
    spikes = np.empty_like(x)
    ds_dh = np.empty_like(x)
    dv_dh = np.empty_like(x)
    if x.dtype == np.float32:
        _lif_fwd[float](x, spikes, ds_dh, dv_dh, tau, v_threshold, v_reset, v_rest, r,
                        refractory_steps, kind, alpha, smooth, detach_reset)
    else:
        _lif_fwd[double](x, spikes, ds_dh, dv_dh, tau, v_threshold, v_reset, v_rest, r,
                         refractory_steps, kind, alpha, smooth, detach_reset)
    return spikes, ds_dh, dv_dh


cdef void _lif_bwd(floating[:, ::1] gs, floating[:, ::1] ds_dh, floating[:, ::1] dv_dh,
                   floating[:, ::1] gx, double tau, double r) noexcept nogil:
    cdef Py_ssize_t T = gs.shape[0], M = gs.shape[1], t, i
    cdef floating inv_tau = <floating>(1.0 / tau)
    cdef floating gain = <floating>r * inv_tau
    cdef floating leak = 1 - inv_tau
    cdef floating gv, gh
    for i in range(M):
        gv = 0
        for t in range(T - 1, -1, -1):
            gh = gs[t, i] * ds_dh[t, i] + gv * dv_dh[t, i]
            gx[t, i] = gh * gain
            gv = gh * leak


def lif_backward(grad_spikes, ds_dh, dv_dh, double tau, double r):
    gx = np.empty_like(grad_spikes)
    if grad_spikes.dtype == np.float32:
        _lif_bwd[float](grad_spikes, ds_dh, dv_dh, gx, tau, r)
    else:
        _lif_bwd[double](grad_spikes, ds_dh, dv_dh, gx, tau, r)
    return gx


cdef void _dw_fwd(floating[:, :, :, ::1] xp, floating[:, :, ::1] w,
                  floating[:, :, :, ::1] out) noexcept nogil:
    cdef Py_ssize_t N = xp.shape[0], C = xp.shape[1]
    cdef Py_ssize_t kh = w.shape[1], kw = w.shape[2]
    cdef Py_ssize_t Ho = out.shape[2], Wo = out.shape[3]
    cdef Py_ssize_t n, c, i, j, y, x
    cdef floating wv, acc
    for n in range(N):
        for c in range(C):
            for y in range(Ho):
                for x in range(Wo):
                    acc = 0
                    for i in range(kh):
                        for j in range(kw):
                            acc = acc + w[c, i, j] * xp[n, c, y + i, x + j]
                    out[n, c, y, x] = acc


def dwconv_forward(xp, w):
    N, C, Hp, Wp = xp.shape
    kh, kw = w.shape[1], w.shape[2]
    out = np.empty((N, C, Hp - kh + 1, Wp - kw + 1), dtype=xp.dtype)
    if xp.dtype == np.float32:
        _dw_fwd[float](xp, w, out)
    else:
        _dw_fwd[double](xp, w, out)
    return out


cdef void _dw_bwd(floating[:, :, :, ::1] xp, floating[:, :, ::1] w, floating[:, :, :, ::1] g,
                  floating[:, :, :, ::1] gxp, floating[:, :, ::1] gw) noexcept nogil:
    cdef Py_ssize_t N = xp.shape[0], C = xp.shape[1]
    cdef Py_ssize_t kh = w.shape[1], kw = w.shape[2]
    cdef Py_ssize_t Ho = g.shape[2], Wo = g.shape[3]
    cdef Py_ssize_t n, c, i, j, y, x
    cdef floating gv
    for n in range(N):
        for c in range(C):
            for y in range(Ho):
                for x in range(Wo):
                    gv = g[n, c, y, x]
                    if gv == 0:
                        continue
                    for i in range(kh):
                        for j in range(kw):
                            gxp[n, c, y + i, x + j] += w[c, i, j] * gv
                            gw[c, i, j] += gv * xp[n, c, y + i, x + j]


def dwconv_backward(xp, w, grad_out):
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    if xp.dtype == np.float32:
        _dw_bwd[float](xp, w, grad_out, gxp, gw)
    else:
        _dw_bwd[double](xp, w, grad_out, gxp, gw)
    return gxp, gw
