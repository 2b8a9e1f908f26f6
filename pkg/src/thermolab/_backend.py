"""Select the compiled core when available.

Set ``THERMOLAB_PURE=1`` to force the pure-Python fallback.
"""

import os

if os.environ.get("THERMOLAB_PURE", "") not in ("", "0"):
    from . import _pycore as core

    COMPILED = False
else:
    try:
        from . import _core as core

        COMPILED = True
    except ImportError:  # extension not built
        from . import _pycore as core

        COMPILED = False

Kernel = core.Kernel
integrate = core.integrate

__all__ = ["COMPILED", "Kernel", "integrate", "core"]
