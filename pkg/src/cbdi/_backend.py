"""Selection of the path kernel.

The compiled kernel is used when it imports; setting the environment
variable ``CBDI_BACKEND=python`` forces the NumPy kernel.
"""

import os

from . import _kernel_py

try:
    if os.environ.get("CBDI_BACKEND", "").lower() == "python":
        raise ImportError("compiled kernel disabled by CBDI_BACKEND")
    from . import _kernel as _kernel_c
except ImportError:
    _kernel_c = None

DEFAULT = "compiled" if _kernel_c is not None else "python"


def available():
    """Names of the kernels that can run here."""
    return ("compiled", "python") if _kernel_c is not None else ("python",)


def get_kernel(name=None):
    """Return the ``run_bundles`` function of the named kernel."""
    name = DEFAULT if name is None else name
    if name == "compiled":
        if _kernel_c is None:
            raise ImportError("the compiled kernel is not built")
        return _kernel_c.run_bundles
    if name == "python":
        return _kernel_py.run_bundles
    raise ValueError(f"unknown backend {name!r}")
