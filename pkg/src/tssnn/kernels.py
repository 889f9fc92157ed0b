"""Backend selection for the hot kernels.

The compiled extension is used when it was built and importable; otherwise
the numpy fallback is used. Setting ``TSSNN_PURE_PYTHON=1`` forces the
fallback. Both backends are exposed so tests and benchmarks can compare them.
"""
import os

from . import _kernels_py as python_backend

try:
    from . import _kernels as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None

if compiled_backend is not None and os.environ.get("TSSNN_PURE_PYTHON", "") in ("", "0"):
    backend = compiled_backend
    BACKEND_NAME = "compiled"
else:
    backend = python_backend
    BACKEND_NAME = "python"


def lif_forward(x, tau, v_th, v_reset, a, ramp=False):
    return backend.lif_forward(x, tau, v_th, v_reset, a, ramp)


def lif_backward(grad_spikes, spikes, membrane, surrogate, tau, v_reset):
    return backend.lif_backward(grad_spikes, spikes, membrane, surrogate, tau, v_reset)


def temporal_shift(x, b1, b2, d0, d1, d2):
    return backend.temporal_shift(x, b1, b2, d0, d1, d2)


def col2im(cols, out_h, out_w, stride):
    return backend.col2im(cols, out_h, out_w, stride)
