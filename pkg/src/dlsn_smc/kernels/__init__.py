"""Hot per-particle likelihood kernels.

The compiled extension is used when it imports; otherwise the numpy fallback
is selected. Set ``DLSN_SMC_BACKEND=python`` to force the fallback.
"""

import os

from . import _pykernels

python_backend = _pykernels

compiled_backend = None
if os.environ.get("DLSN_SMC_BACKEND", "").lower() != "python":
    try:
        from . import _ckernels as compiled_backend
    except ImportError:  # pragma: no cover - depends on the build
        compiled_backend = None

backend = compiled_backend if compiled_backend is not None else python_backend
BACKEND_NAME = "cython" if compiled_backend is not None else "python"

obs_loglik = backend.obs_loglik
obs_loglik_grad = backend.obs_loglik_grad

_threads = 1


def set_num_threads(n):
    """Cap the worker pool used by the compiled kernels (ignored by numpy)."""
    global _threads
    _threads = max(1, int(n))


def get_num_threads():
    return _threads


__all__ = [
    "BACKEND_NAME",
    "backend",
    "compiled_backend",
    "get_num_threads",
    "obs_loglik",
    "obs_loglik_grad",
    "python_backend",
    "set_num_threads",
]
