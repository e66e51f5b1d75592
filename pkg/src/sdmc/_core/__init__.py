"""Hot numerical kernels with a compiled implementation and a numpy fallback.

The compiled module is used when it can be imported; setting the
environment variable ``SDMC_PURE_PYTHON=1`` forces the fallback.
"""

import os

from . import _pycore

BACKEND = "python"
_impl = _pycore
if os.environ.get("SDMC_PURE_PYTHON", "").strip() not in ("1", "true", "yes"):
    try:
        from . import _ccore as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pycore

phi_hitting_time = _impl.phi_hitting_time
simulate_batch = _impl.simulate_batch
simulate_chain = _impl.simulate_chain

__all__ = ["BACKEND", "phi_hitting_time", "simulate_batch", "simulate_chain"]
