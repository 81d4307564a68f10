"""Observer-canonical state-space model.

The model is

    x(t+1) = F x(t) + G u(t) + w(t)
    y(t)   = H x(t) + d u(t) + J(q) v(t)

with F a companion matrix whose first column is ``-f``, H = [1, 0, ..., 0]
and J(q) = 1 + J_1 q^-1 + ... + J_nJ q^-nJ.
"""
from __future__ import annotations

from dataclasses import dataclass
import warnings

import numpy as np


@dataclass(frozen=True)
class ObserverCanonicalModel:
    f: np.ndarray
    g: np.ndarray
    d: float
    j: np.ndarray

    def __init__(self, f, g, d, j=()):
        f = np.array(f, dtype=float).reshape(-1)
        g = np.array(g, dtype=float).reshape(-1)
        j = np.array(j, dtype=float).reshape(-1)
        if f.size < 1:
            raise ValueError("state dimension n must be >= 1")
        if g.size != f.size:
            raise ValueError(f"g has length {g.size}, expected n={f.size}")
        for arr in (f, g, j):
            arr.setflags(write=False)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "d", float(d))
        object.__setattr__(self, "j", j)

    @property
    def n(self) -> int:
        return self.f.size

    @property
    def n_j(self) -> int:
        return self.j.size

    @property
    def n_params(self) -> int:
        return 2 * self.n + 1 + self.n_j

    @property
    def F(self) -> np.ndarray:
        return build_F(self.f)

    @property
    def G(self) -> np.ndarray:
        return self.g.copy()

    @property
    def H(self) -> np.ndarray:
        return output_row(self.n)

    def __eq__(self, other):
        if not isinstance(other, ObserverCanonicalModel):
            return NotImplemented
        return (
            np.array_equal(self.f, other.f)
            and np.array_equal(self.g, other.g)
            and self.d == other.d
            and np.array_equal(self.j, other.j)
        )

    def __hash__(self):
        return hash(tuple(model_to_theta(self)) + (self.n, self.n_j))

    def __repr__(self):
        return (
            f"ObserverCanonicalModel(f={self.f.tolist()}, g={self.g.tolist()}, "
            f"d={self.d}, j={self.j.tolist()})"
        )


def output_row(n: int) -> np.ndarray:
    H = np.zeros(n)
    H[0] = 1.0
    return H


def build_F(f) -> np.ndarray:
    """Companion matrix with ``-f`` in column 0 and ones on the superdiagonal."""
    f = np.asarray(f, dtype=float).reshape(-1)
    n = f.size
    if n < 1:
        raise ValueError("f must have at least one entry")
    F = np.zeros((n, n))
    F[:, 0] = -f
    F[np.arange(n - 1), np.arange(1, n)] = 1.0
    return F


def model_to_theta(model: ObserverCanonicalModel) -> np.ndarray:
    """Stack the parameters as ``[f, g, d, J]``."""
    return np.concatenate([model.f, model.g, [model.d], model.j])


def theta_to_model(theta, n: int, n_j: int) -> ObserverCanonicalModel:
    theta = np.asarray(theta, dtype=float).reshape(-1)
    expected = 2 * n + 1 + n_j
    if theta.size != expected:
        raise ValueError(
            f"parameter vector has length {theta.size}, expected 2n+1+n_J = {expected}"
        )
    return ObserverCanonicalModel(
        f=theta[:n], g=theta[n : 2 * n], d=theta[2 * n], j=theta[2 * n + 1 :]
    )


@dataclass(frozen=True)
class StructuralReport:
    stable: bool
    observable: bool
    controllable: bool
    spectral_radius: float
    eigenvalues: np.ndarray


def structural_checks(model: ObserverCanonicalModel, warn: bool = False) -> StructuralReport:
    """Stability, observability and controllability of ``(F, G, H)``.

    The report is advisory. With ``warn=True`` an unstable model emits a
    RuntimeWarning instead of failing.
    """
    F, G, H = model.F, model.G, model.H
    n = model.n
    eig = np.linalg.eigvals(F)
    radius = float(np.max(np.abs(eig)))
    obs = np.vstack([H @ np.linalg.matrix_power(F, k) for k in range(n)])
    ctrb = np.column_stack([np.linalg.matrix_power(F, k) @ G for k in range(n)])
    report = StructuralReport(
        stable=radius < 1.0,
        observable=np.linalg.matrix_rank(obs) == n,
        controllable=np.linalg.matrix_rank(ctrb) == n,
        spectral_radius=radius,
        eigenvalues=eig,
    )
    if warn and not report.stable:
        warnings.warn(
            f"model is unstable (spectral radius {radius:.4g})", RuntimeWarning, stacklevel=2
        )
    return report


def decorrelate_matrices(model: ObserverCanonicalModel, T) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(F - T H, G - T d)``."""
    T = np.asarray(T, dtype=float).reshape(-1)
    if T.size != model.n:
        raise ValueError(f"T has length {T.size}, expected n={model.n}")
    return build_F(model.f + T), model.g - T * model.d


def schur_stable(coeffs) -> bool:
    """True when every root of the monic polynomial ``z^m + c_1 z^(m-1) + ... + c_m``
    lies strictly inside the unit circle.

    Uses the Schur-Cohn step-down recursion, so no root finding is needed.
    ``coeffs`` holds ``c_1..c_m``; an empty sequence is trivially stable.
    """
    a = [1.0] + [float(c) for c in coeffs]
    m = len(a) - 1
    while m > 0:
        k = a[m]
        if not abs(k) < 1.0:
            return False
        den = 1.0 - k * k
        a = [(a[i] - k * a[m - i]) / den for i in range(m)]
        m -= 1
    return True
