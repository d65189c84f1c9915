"""Kernel selection.

The compiled extension is preferred; set ``IBALIGN_PURE_PYTHON=1`` to force
the pure-Python implementation (also used when the extension is not built).
"""

import os

if os.environ.get("IBALIGN_PURE_PYTHON", "") not in ("", "0"):
    from ._pykernels import (  # noqa: F401
        BACKEND, Ewma, RollingMax, RollingZ, bh_count, ewma_series,
        presquash_sums, rolling_max_norm_series,
    )
else:
    try:
        from ._ckernels import (  # noqa: F401
            BACKEND, Ewma, RollingMax, RollingZ, bh_count, ewma_series,
            presquash_sums, rolling_max_norm_series,
        )
    except ImportError:
        from ._pykernels import (  # noqa: F401
            BACKEND, Ewma, RollingMax, RollingZ, bh_count, ewma_series,
            presquash_sums, rolling_max_norm_series,
        )

__all__ = [
    "BACKEND", "Ewma", "RollingMax", "RollingZ", "bh_count", "ewma_series",
    "presquash_sums", "rolling_max_norm_series",
]
