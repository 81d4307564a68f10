"""Pure-Python versions of the compiled kernels in ``_kernels.pyx``.

Signatures and results match the compiled module; they are selected by
:mod:`corrkal._backend` when the extension is missing or disabled.
"""
from __future__ import annotations

import numpy as np


def lfsr_bits(L, state, order, taps):
    """Output bits (MSB) of a Fibonacci LFSR shifted left with XOR feedback into the LSB."""
    mask = (1 << order) - 1
    shifts = [int(k) - 1 for k in taps]
    out = np.empty(L, dtype=np.int64)
    s = int(state)
    top = order - 1
    for t in range(L):
        out[t] = (s >> top) & 1
        fb = 0
        for k in shifts:
            fb ^= (s >> k) & 1
        s = ((s << 1) | fb) & mask
    return out


def propagate_states(f, g, u, w):
    """``x(t+1) = F x(t) + g u(t) + w(t)`` from ``x(0) = 0`` with F the companion of ``f``.

    Returns ``x`` of shape ``(n, L)``.
    """
    n = f.shape[0]
    L = u.shape[0]
    x = np.zeros((n, L))
    cur = np.zeros(n)
    for t in range(L - 1):
        x[:, t] = cur
        nxt = np.empty(n)
        for i in range(n):
            acc = -f[i] * cur[0]
            if i + 1 < n:
                acc += cur[i + 1]
            nxt[i] = acc + g[i] * u[t] + w[i, t]
        cur = nxt
    if L:
        x[:, L - 1] = cur
    return x


def joint_loop(*args):
    """Joint estimator loop; the Python reference lives in :mod:`corrkal.rgels`."""
    from corrkal.rgels import _joint_loop_reference

    return _joint_loop_reference(*args)
