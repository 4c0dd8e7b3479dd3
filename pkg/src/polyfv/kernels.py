"""Backend selection for the sparse kernels.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``POLYFV_PURE`` is set to a non-empty value other
than ``0``, the numpy/scipy fallback is used.
"""

import logging
import os

log = logging.getLogger(__name__)


def _load(pure=None):
    if pure is None:
        pure = os.environ.get("POLYFV_PURE", "") not in ("", "0")
    if not pure:
        try:
            from . import _kernels as mod

            return mod
        except ImportError:
            log.info("compiled kernels unavailable; using the pure-Python fallback")
    from . import _kernels_py as mod

    return mod


_impl = _load()

BACKEND = _impl.BACKEND
csr_matvec = _impl.csr_matvec
dic_factor = _impl.dic_factor
dic_apply = _impl.dic_apply
pcg = _impl.pcg


def backend(pure=False):
    """Return a kernel module explicitly: the fallback if ``pure`` else the
    active one."""
    from . import _kernels_py

    return _kernels_py if pure else _impl
