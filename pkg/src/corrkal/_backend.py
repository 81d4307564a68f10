"""Kernel selection.

The compiled extension ``corrkal._kernels`` is used when importable; setting
``CORRKAL_PURE_PYTHON=1`` forces the pure-Python fallback.
"""
from __future__ import annotations

import os

from corrkal import _fallback

NATIVE = False
if os.environ.get("CORRKAL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from corrkal import _kernels as _impl

        NATIVE = True
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _fallback
else:
    _impl = _fallback

lfsr_bits = _impl.lfsr_bits
propagate_states = _impl.propagate_states
joint_loop = _impl.joint_loop

__all__ = ["NATIVE", "lfsr_bits", "propagate_states", "joint_loop"]
