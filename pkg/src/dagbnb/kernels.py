"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the pure-Python
reference kernels take over.  ``use_backend`` switches explicitly, which the
benchmark and the cross-backend tests rely on.
"""

from __future__ import annotations

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_NAMES = ("cd_column", "column_eval", "subset_rss", "arc_min", "arc_lower")

BACKEND = ""


def available() -> list[str]:
    return ["python"] + (["compiled"] if _ckernels is not None else [])


def use_backend(name: str) -> None:
    global BACKEND
    if name == "compiled":
        if _ckernels is None:
            raise RuntimeError("compiled kernels are not built; run `pip install -e .`")
        mod = _ckernels
    elif name == "python":
        mod = _pykernels
    else:
        raise ValueError(f"unknown backend {name!r}")
    g = globals()
    for fn in _NAMES:
        g[fn] = getattr(mod, fn)
    BACKEND = name


use_backend("compiled" if _ckernels is not None else "python")
