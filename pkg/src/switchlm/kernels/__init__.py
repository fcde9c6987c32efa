"""Hot-path kernel dispatch.

The backbone's forward/backward kernels exist twice: a numba-compiled
version and a pure-numpy fallback with identical contracts. Selection is
controlled by the ``SWITCHLM_KERNELS`` environment variable:

  - ``auto`` (default): numba if importable, else numpy
  - ``numba``: require the numba path (ImportError if unavailable)
  - ``numpy``: force the fallback

The choice is made once at import time; ``backend_name()`` reports it.
Both paths are deterministic given identical inputs, but they are only
float-tolerance equivalent to each other, so any bit-exactness guarantee
holds within a single selected backend.
"""

from __future__ import annotations

import os
import warnings

_MODE = os.environ.get("SWITCHLM_KERNELS", "auto").strip().lower()

if _MODE not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"SWITCHLM_KERNELS must be one of auto/numba/numpy, got {_MODE!r}"
    )

if _MODE == "numpy":
    from . import numpy_impl as _impl

    _BACKEND = "numpy"
elif _MODE == "numba":
    from . import numba_impl as _impl

    _BACKEND = "numba"
else:
    try:
        from . import numba_impl as _impl

        _BACKEND = "numba"
    except ImportError:  # pragma: no cover - depends on environment
        warnings.warn("numba unavailable; falling back to numpy kernels", RuntimeWarning)
        from . import numpy_impl as _impl

        _BACKEND = "numpy"

forward_hidden = _impl.forward_hidden
word_logits_batch = _impl.word_logits_batch
neg_log_probs = _impl.neg_log_probs
xent_grad = _impl.xent_grad
backbone_backward = _impl.backbone_backward


def backend_name() -> str:
    """Which kernel implementation is active ("numba" or "numpy")."""
    return _BACKEND
