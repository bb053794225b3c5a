"""Numeric kernel dispatch.

Two interchangeable backends implement the training hot spots: a compiled
Cython extension (``_native``) and a pure numpy module (``pure``). The
native backend is preferred when its extension was built; set the
environment variable ``RELEX_KERNELS=pure`` or ``RELEX_KERNELS=native``
to pin one, or call :func:`set_backend` at runtime (used by the benchmark).

Call sites must access kernels through this module (``kernels.gelu_forward``)
rather than ``from``-importing the functions, so backend switches take
effect.
"""

import os

from . import pure

_FUNCTIONS = (
    "layer_norm_forward",
    "layer_norm_backward",
    "softmax_rows",
    "softmax_backward_rows",
    "gelu_forward",
    "gelu_backward",
    "adam_update",
)

try:
    from . import _native
except ImportError:
    _native = None


def available_backends():
    return ("pure", "native") if _native is not None else ("pure",)


def set_backend(name):
    """Bind this module's kernel functions to the named backend."""
    if name == "pure":
        module = pure
    elif name == "native":
        if _native is None:
            raise RuntimeError("native kernel extension is not built")
        module = _native
    else:
        raise ValueError(f"unknown kernel backend {name!r}; expected 'pure' or 'native'")
    g = globals()
    for fn in _FUNCTIONS:
        g[fn] = getattr(module, fn)
    g["BACKEND"] = module.BACKEND


_env = os.environ.get("RELEX_KERNELS", "").strip().lower()
if _env:
    set_backend(_env)
else:
    set_backend("native" if _native is not None else "pure")
