"""Kernel backend selection.

Two interchangeable kernel sets exist: the compiled extension
(`lethe._kernels`, built from _kernels.pyx) and the numpy reference
(`lethe.kernels_py`). `use_backend` binds one of them to the module
attribute `K`, which the tensor layer calls through. The default prefers
the compiled module and silently falls back when it was not built.

Within one backend on one install, results are deterministic to the byte.
Across backends they agree only to rounding (different summation orders),
which is why the choice lives in the experiment config, never in the
environment.
"""

from . import kernels_py
from .errors import ConfigError

K = kernels_py
name = "python"

BACKENDS = ("auto", "compiled", "python")


def _compiled_module():
    try:
        from . import _kernels
    except ImportError:
        return None
    return _kernels


def compiled_available() -> bool:
    return _compiled_module() is not None


def use_backend(which: str = "auto") -> str:
    """Bind the kernel set; returns the name actually selected."""
    global K, name
    if which not in BACKENDS:
        raise ConfigError(f"unknown kernel backend {which!r}; expected one of {BACKENDS}")
    if which == "python":
        K, name = kernels_py, "python"
    elif which == "compiled":
        mod = _compiled_module()
        if mod is None:
            raise ConfigError("compiled kernels requested but the extension is not built")
        K, name = mod, "compiled"
    else:
        mod = _compiled_module()
        K, name = (mod, "compiled") if mod is not None else (kernels_py, "python")
    return name


use_backend("auto")
