"""Backend selection for the dual-arithmetic kernels.

The compiled extension is preferred; ``CTRLKIT_PURE_PYTHON=1`` (or a missing
build) selects the numpy fallback.  Both backends implement the interface
documented in ``_npops``.
"""

import os

from . import _npops

if os.environ.get("CTRLKIT_PURE_PYTHON"):
    impl = _npops
    HAVE_EXT = False
else:
    try:
        from . import _fastops as impl

        HAVE_EXT = True
    except ImportError:
        impl = _npops
        HAVE_EXT = False

BACKEND = "compiled" if HAVE_EXT else "numpy"
