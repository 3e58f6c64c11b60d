"""Pure numpy implementations of the hot kernels.

This module mirrors ``_kernels.pyx`` function for function and is used when the
compiled extension is unavailable or ``SPIKEATCONV_PURE_PYTHON`` is set. Both
must produce bit-identical spikes for the same input; surrogate derivative
values may differ in the last ulp because libm and numpy SIMD routines differ.
"""

import numpy as np

ATAN = 0
SIGMOID = 1


def surrogate_grad(kind, alpha, x):
    if kind == ATAN:
        z = (np.pi / 2 * alpha) * x
        return alpha / (2 * (1 + z * z))
    s = 1 / (1 + np.exp(-alpha * x))
    return alpha * s * (1 - s)


def surrogate_primitive(kind, alpha, x):
    if kind == ATAN:
        return np.arctan((np.pi / 2 * alpha) * x) / np.pi + 0.5
    return 1 / (1 + np.exp(-alpha * x))


def lif_forward(x, tau, v_threshold, v_reset, v_rest, r, refractory_steps,
                kind, alpha, smooth, detach_reset):
    """Run LIF dynamics over the leading axis of a contiguous ``[T, M]`` array.

    Returns ``(spikes, ds_dh, dv_dh)``; the last two are the local derivatives
    needed by :func:`lif_backward`.
    """
    T, M = x.shape
    dt = x.dtype.type
    inv_tau = dt(1.0 / tau)
    vth, vr, vrest, rr = dt(v_threshold), dt(v_reset), dt(v_rest), dt(r)
    spikes = np.empty_like(x)
    ds_dh = np.empty_like(x)
    dv_dh = np.empty_like(x)
    v = np.full(M, vrest, dtype=x.dtype)
    ref = np.zeros(M, dtype=np.int64)
    for t in range(T):
        h = v + inv_tau * (-(v - vrest) + rr * x[t])
        u = h - vth
        fired = u >= 0
        d = surrogate_grad(kind, alpha, u).astype(x.dtype, copy=False)
        if smooth:
            s = surrogate_primitive(kind, alpha, u).astype(x.dtype, copy=False)
        else:
            s = fired.astype(x.dtype)
        if refractory_steps > 0:
            blocked = ref > 0
            s = np.where(blocked, dt(0), s)
            d = np.where(blocked, dt(0), d)
            ref = np.where(fired & ~blocked, refractory_steps, np.maximum(ref - 1, 0))
        v = s * vr + (1 - s) * h
        spikes[t] = s
        ds_dh[t] = d
        if detach_reset:
            dv_dh[t] = 1 - s
        else:
            dv_dh[t] = (1 - s) + (vr - h) * d
    return spikes, ds_dh, dv_dh


def lif_backward(grad_spikes, ds_dh, dv_dh, tau, r):
    T, M = grad_spikes.shape
    dt = grad_spikes.dtype.type
    inv_tau = dt(1.0 / tau)
    gain = dt(r) * inv_tau
    leak = 1 - inv_tau
    gx = np.empty_like(grad_spikes)
    gv = np.zeros(M, dtype=grad_spikes.dtype)
    for t in range(T - 1, -1, -1):
        gh = grad_spikes[t] * ds_dh[t] + gv * dv_dh[t]
        gx[t] = gh * gain
        gv = gh * leak
    return gx


def dwconv_forward(xp, w):
    """Depthwise cross-correlation, stride 1, of padded ``xp[N,C,Hp,Wp]`` with ``w[C,kh,kw]``."""
    N, C, Hp, Wp = xp.shape
    _, kh, kw = w.shape
    Ho, Wo = Hp - kh + 1, Wp - kw + 1
    out = np.zeros((N, C, Ho, Wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            out += w[None, :, i, j, None, None] * xp[:, :, i:i + Ho, j:j + Wo]
    return out


def dwconv_backward(xp, w, grad_out):
    """Return ``(grad_xp, grad_w)`` for :func:`dwconv_forward`."""
    _, _, kh, kw = (None, None) + w.shape[1:]
    Ho, Wo = grad_out.shape[2:]
    gxp = np.zeros_like(xp)
    gw = np.empty_like(w)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i:i + Ho, j:j + Wo] += w[None, :, i, j, None, None] * grad_out
            gw[:, i, j] = np.einsum("nchw,nchw->c", grad_out, xp[:, :, i:i + Ho, j:j + Wo])
    return gxp, gw
