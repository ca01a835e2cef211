"""Selects the compiled loops when available.

Set ``NODALFRAC_BACKEND=python`` to force the numpy fallback.
"""
import os

from . import _fallback

NAME = "python"
_impl = _fallback

if os.environ.get("NODALFRAC_BACKEND", "").lower() != "python":
    try:
        from . import _accel as _impl  # noqa: F811
        NAME = "cython"
    except ImportError:  # extension not built
        _impl = _fallback


def get(name=None):
    """Return the module implementing the loops; ``name`` in {None, 'cython', 'python'}."""
    if name is None:
        return _impl
    if name == "python":
        return _fallback
    if name == "cython":
        from . import _accel
        return _accel
    raise ValueError(f"unknown backend {name!r}")


pair_accumulate = _impl.pair_accumulate
pair_weights = _impl.pair_weights
poisson_values = _impl.poisson_values
