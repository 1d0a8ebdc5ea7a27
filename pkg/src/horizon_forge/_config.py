"""Environment-driven switches.

``HORIZON_FORGE_JIT``        "0" disables numba kernels (pure numpy path).
``HORIZON_FORGE_PRECISION``  "extended" (default) or "double": arithmetic used
                             for the Omega sums of the test-function search.
"""

import os

PRECISION_ENV = "HORIZON_FORGE_PRECISION"
JIT_ENV = "HORIZON_FORGE_JIT"


def precision():
    value = os.environ.get(PRECISION_ENV, "extended").strip().lower()
    if value not in ("double", "extended"):
        raise ValueError(f"{PRECISION_ENV} must be 'double' or 'extended', got {value!r}")
    return value


def jit_requested():
    return os.environ.get(JIT_ENV, "1").strip() not in ("0", "false", "no", "off")
