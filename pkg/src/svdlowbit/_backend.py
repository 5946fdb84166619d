"""Kernel backend selection.

The hot loops (reference GEMM, fused quantized GEMMs, Jacobi sweeps, the
exhaustive bit-slice check) exist twice: a compiled Cython extension
(``svdlowbit._kernels``) and a pure numpy fallback (``svdlowbit._kernels_py``).
Both implement the identical floating-point operation sequence, so results are
bit-for-bit equal; the extension is just much faster.

Selection happens once at import time. Set ``SVDLOWBIT_KERNELS=py`` to force
the fallback or ``SVDLOWBIT_KERNELS=ext`` to require the extension.
"""

import os

_env = os.environ.get("SVDLOWBIT_KERNELS", "").strip().lower()

if _env in ("", "ext"):
    try:
        from . import _kernels as _active

        BACKEND = "ext"
    except ImportError:
        if _env == "ext":
            raise
        from . import _kernels_py as _active

        BACKEND = "py"
elif _env == "py":
    from . import _kernels_py as _active

    BACKEND = "py"
else:
    raise ImportError(f"unknown SVDLOWBIT_KERNELS value {_env!r} (expected 'py' or 'ext')")


def kernels():
    """Return the active kernel module."""
    return _active


def get_kernels(name=None):
    """Return a kernel module by name ('py', 'ext', or None for the active one)."""
    if name is None or name == "":
        return _active
    if name == "py":
        from . import _kernels_py

        return _kernels_py
    if name == "ext":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")


def available_backends():
    """Names of importable backends, fallback first."""
    names = ["py"]
    try:
        from . import _kernels  # noqa: F401

        names.append("ext")
    except ImportError:
        pass
    return names
