"""Pure-numpy implementations of the hot kernels.

Every function here has a twin in ``_kernels.pyx`` with an identical
signature and identical floating-point evaluation order, so both backends
produce bit-identical results.
"""
import numpy as np


def lif_forward(x, tau, v_th, v_reset, a, ramp):
    """Run charge -> fire -> reset over the leading (time) axis.

    ``x`` has shape ``[T, M]``. Returns ``(spikes, membrane, surrogate)``,
    each ``[T, M]``, where ``membrane`` is the post-charge potential V and
    ``surrogate`` holds dS/dV evaluated at V.
    """
    dt = x.dtype.type
    inv_tau = dt(1.0 / tau)
    keep = dt(1.0) - inv_tau
    v_th = dt(v_th)
    v_reset = dt(v_reset)
    inv_a = dt(1.0 / a)
    half_a = dt(a) * dt(0.5)
    half = dt(0.5)
    zero = dt(0.0)
    one = dt(1.0)

    T = x.shape[0]
    spikes = np.empty_like(x)
    membrane = np.empty_like(x)
    surrogate = np.empty_like(x)
    h = np.full(x.shape[1:], v_reset, dtype=x.dtype)
    for t in range(T):
        v = h * keep + (x[t] + v_reset) * inv_tau
        d = v - v_th
        if ramp:
            s = np.minimum(np.maximum(d * inv_a + half, zero), one)
        else:
            s = (d >= zero).astype(x.dtype)
        surrogate[t] = np.where(np.abs(d) < half_a, inv_a, zero)
        spikes[t] = s
        membrane[t] = v
        h = v_reset * s + v * (one - s)
    return spikes, membrane, surrogate


def lif_backward(grad_spikes, spikes, membrane, surrogate, tau, v_reset):
    """Reverse-time adjoint of :func:`lif_forward` with respect to ``x``."""
    dt = grad_spikes.dtype.type
    inv_tau = dt(1.0 / tau)
    keep = dt(1.0) - inv_tau
    v_reset = dt(v_reset)
    one = dt(1.0)

    T = grad_spikes.shape[0]
    grad_x = np.empty_like(grad_spikes)
    gh = np.zeros(grad_spikes.shape[1:], dtype=grad_spikes.dtype)
    for t in range(T - 1, -1, -1):
        gs = grad_spikes[t] + gh * (v_reset - membrane[t])
        gv = gh * (one - spikes[t]) + gs * surrogate[t]
        grad_x[t] = gv * inv_tau
        gh = gv * keep
    return grad_x


def temporal_shift(x, b1, b2, d0, d1, d2):
    """Shift three channel bands of ``x`` (``[T, P, C, M]``) in time.

    Bands are ``[0, b1)``, ``[b1, b2)`` and ``[b2, C)``. A direction code of
    +1 pulls from the next timestep (``Z[t] = X[t+1]``), -1 from the
    previous one (``Z[t] = X[t-1]``), 0 copies. Vacated slots are zero.
    """
    z = np.zeros_like(x)
    C = x.shape[2]
    for lo, hi, d in ((0, b1, d0), (b1, b2, d1), (b2, C, d2)):
        if hi <= lo:
            continue
        if d == 0:
            z[:, :, lo:hi] = x[:, :, lo:hi]
        elif d == 1:
            z[:-1, :, lo:hi] = x[1:, :, lo:hi]
        else:
            z[1:, :, lo:hi] = x[:-1, :, lo:hi]
    return z


def col2im(cols, out_h, out_w, stride):
    """Scatter-add patch gradients ``[B, OH, OW, C, K, K]`` into an image.

    Returns an array of shape ``[B, C, out_h, out_w]`` (the padded input).
    """
    B, OH, OW, C, K, _ = cols.shape
    img = np.zeros((B, C, out_h, out_w), dtype=cols.dtype)
    src = cols.transpose(0, 3, 4, 5, 1, 2)
    for i in range(K):
        for j in range(K):
            img[:, :, i:i + stride * OH:stride, j:j + stride * OW:stride] += src[:, :, i, j]
    return img
