"""Select the compiled kernels when available, else the numpy fallback.

Set ``LOCOST_BACKEND=python`` to force the fallback, ``LOCOST_BACKEND=compiled``
to make a missing extension an import error.
"""

import logging
import os

from . import _kernels_py

log = logging.getLogger(__name__)

BACKENDS = {"python": _kernels_py}

try:
    from . import _kernels as _kernels_c
except ImportError:  # extension not built
    _kernels_c = None
else:
    BACKENDS["compiled"] = _kernels_c


def _select():
    wanted = os.environ.get("LOCOST_BACKEND", "").strip().lower()
    if wanted == "python":
        return "python"
    if wanted == "compiled" and _kernels_c is None:
        raise ImportError("LOCOST_BACKEND=compiled but locost._kernels is not built")
    if wanted not in ("", "compiled"):
        raise ValueError(f"unknown LOCOST_BACKEND {wanted!r}")
    return "compiled" if _kernels_c is not None else "python"


NAME = _select()
kernels = BACKENDS[NAME]
log.debug("locost kernels backend: %s", NAME)


def get(name=None):
    """Return the kernel module for ``name`` (default: the active backend)."""
    if name is None:
        return kernels
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(BACKENDS)}") from None
