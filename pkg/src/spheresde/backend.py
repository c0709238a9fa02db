"""Kernel backend selection.

The compiled extension (_kernels) is preferred; the pure-Python mirror
(_kernels_py) is used when the extension failed to build or when the
environment variable SPHERESDE_FORCE_PYTHON is set to a non-empty value
other than "0".
"""

from __future__ import annotations

import os

_force_python = os.environ.get("SPHERESDE_FORCE_PYTHON", "") not in ("", "0")

if _force_python:
    from . import _kernels_py as kernels
    HAVE_COMPILED = False
else:
    try:
        from . import _kernels as kernels  # type: ignore[attr-defined]
        HAVE_COMPILED = True
    except ImportError:
        from . import _kernels_py as kernels
        HAVE_COMPILED = False

BACKEND_NAME = "compiled" if HAVE_COMPILED else "python"

implicit_step = kernels.implicit_step
implicit_path = kernels.implicit_path
em_path = kernels.em_path
