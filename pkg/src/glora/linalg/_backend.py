"""Kernel backend selection.

The compiled extension is preferred. Set ``GLORA_KERNELS=python`` to force
the pure-Python kernels, or ``GLORA_KERNELS=compiled`` to fail loudly when
the extension is missing.
"""
from __future__ import annotations

import contextlib
import os
import types

from glora.linalg import _fallback

try:
    from glora.linalg import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_BACKENDS: dict[str, types.ModuleType | None] = {"compiled": _compiled, "python": _fallback}


def _initial() -> str:
    choice = os.environ.get("GLORA_KERNELS", "auto").strip().lower()
    if choice in ("", "auto"):
        return "compiled" if _compiled is not None else "python"
    if choice not in _BACKENDS:
        raise ValueError(f"GLORA_KERNELS must be auto, compiled or python, got {choice!r}")
    if _BACKENDS[choice] is None:
        raise ImportError("GLORA_KERNELS=compiled but glora.linalg._kernels is not built")
    return choice


_active = _initial()


def kernels() -> types.ModuleType:
    return _BACKENDS[_active]  # type: ignore[return-value]


def backend_name() -> str:
    return _active


def compiled_available() -> bool:
    return _compiled is not None


def set_backend(name: str) -> None:
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}")
    if _BACKENDS[name] is None:
        raise ImportError("compiled kernels are not built")
    _active = name


@contextlib.contextmanager
def use_backend(name: str):
    """Temporarily switch kernel backend (not thread-safe; for tests and benchmarks)."""
    previous = _active
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)
