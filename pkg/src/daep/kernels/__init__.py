"""Backend dispatch for the numeric hot kernels.

Two interchangeable implementations exist: numba-jitted loops
(kernels.numba_impl) and pure numpy (kernels.numpy_impl). The active one is
chosen at import time from the DAEP_BACKEND environment variable ("numba" or
"numpy"; default numba when importable) and can be switched at runtime with
set_backend(). benchmarks/bench_backends.py compares the two.
"""

import os

from daep.kernels import numpy_impl

try:
    from daep.kernels import numba_impl

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba_impl = None
    NUMBA_AVAILABLE = False

_IMPLS = {"numpy": numpy_impl}
if NUMBA_AVAILABLE:
    _IMPLS["numba"] = numba_impl

_active_name = os.environ.get("DAEP_BACKEND", "numba" if NUMBA_AVAILABLE else "numpy")
if _active_name not in _IMPLS:
    raise ImportError(
        f"DAEP_BACKEND={_active_name!r} is not available; choose from {sorted(_IMPLS)}"
    )
_active = _IMPLS[_active_name]


def set_backend(name: str) -> None:
    """Switch the kernel backend at runtime ("numba" or "numpy")."""
    global _active, _active_name
    if name not in _IMPLS:
        raise ValueError(f"unknown backend {name!r}; available: {sorted(_IMPLS)}")
    _active_name = name
    _active = _IMPLS[name]


def get_backend() -> str:
    return _active_name


def attention_forward(q, k, v):
    return _active.attention_forward(q, k, v)


def attention_backward(q, k, v, probs, dout):
    return _active.attention_backward(q, k, v, probs, dout)


def layernorm_forward(x, gamma, beta, eps):
    return _active.layernorm_forward(x, gamma, beta, eps)


def layernorm_backward(x, gamma, mean, rstd, dy):
    return _active.layernorm_backward(x, gamma, mean, rstd, dy)


def gelu_forward(x):
    return _active.gelu_forward(x)


def gelu_backward(x, dy):
    return _active.gelu_backward(x, dy)


def median_filter(values, width):
    return _active.median_filter(values, width)
