"""Correlated process/measurement noise: covariance assembly, PSD gating,
sampling, and PRBS excitation."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from corrkal import _backend


class UMode(str, Enum):
    EQUICORRELATED = "equicorrelated"
    WV_ONLY = "wv_only"


class CovarianceError(ValueError):
    """Raised when a joint noise covariance is not positive semidefinite."""


@dataclass(frozen=True)
class NoiseSpec:
    """Per-channel variances and the process/measurement correlation coefficient.

    ``q_diag`` and ``r`` are variances, not standard deviations.
    """

    q_diag: tuple
    r: float
    rho: float

    def __post_init__(self):
        q = tuple(float(x) for x in np.atleast_1d(self.q_diag))
        object.__setattr__(self, "q_diag", q)
        object.__setattr__(self, "r", float(self.r))
        object.__setattr__(self, "rho", float(self.rho))
        if len(q) < 1:
            raise ValueError("q_diag must have at least one entry")
        if any(x < 0 for x in q):
            raise ValueError(f"process-noise variances must be >= 0, got {q}")
        if not self.r > 0:
            raise ValueError(f"measurement-noise variance r must be > 0, got {self.r}")
        if not abs(self.rho) <= 1:
            raise ValueError(f"rho must lie in [-1, 1], got {self.rho}")

    @property
    def n(self) -> int:
        return len(self.q_diag)

    def with_rho(self, rho: float) -> "NoiseSpec":
        return NoiseSpec(self.q_diag, self.r, rho)


@dataclass(frozen=True)
class JointCovariance:
    """Covariance of the stacked noise ``[w_1..w_n, v]``."""

    U: np.ndarray
    mode: UMode = UMode.EQUICORRELATED

    @property
    def n(self) -> int:
        return self.U.shape[0] - 1

    @property
    def Q(self) -> np.ndarray:
        return self.U[:-1, :-1].copy()

    @property
    def S(self) -> np.ndarray:
        return self.U[:-1, -1].copy()

    @property
    def R(self) -> float:
        return float(self.U[-1, -1])


@dataclass(frozen=True)
class PsdResult:
    ok: bool
    min_eigenvalue: float

    def __bool__(self):
        return self.ok


def cross_covariance(spec: NoiseSpec) -> np.ndarray:
    """``S_i = rho * sqrt(q_i) * sqrt(r)``."""
    return spec.rho * np.sqrt(np.asarray(spec.q_diag)) * np.sqrt(spec.r)


def _assemble(variances: np.ndarray, rho: float, mode: UMode) -> np.ndarray:
    sd = np.sqrt(variances)
    U = rho * np.outer(sd, sd)
    if mode is UMode.WV_ONLY:
        U[:-1, :-1] = 0.0
    np.fill_diagonal(U, variances)
    return U


def psd_check(M, sym_tol: float = 1e-9) -> PsdResult:
    """Eigenvalue test: ``ok`` iff ``min eig >= -1e-10 * (1 + max |eig|)``."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if not np.allclose(M, M.T, rtol=0.0, atol=sym_tol):
        raise ValueError("matrix is not symmetric within tolerance")
    eig = np.linalg.eigvalsh(0.5 * (M + M.T))
    lo = float(eig[0])
    return PsdResult(lo >= -1e-10 * (1.0 + float(np.max(np.abs(eig)))), lo)


def admissible_rho_range(q_diag, r, mode=UMode.EQUICORRELATED) -> tuple[float, float]:
    """Interval of correlation coefficients giving a PSD joint covariance.

    Zero-variance channels drop out, so only the ``m`` channels with positive
    variance matter. Their correlation matrix is equicorrelated, which is PSD
    iff ``-1/(m-1) <= rho <= 1``; in ``wv_only`` mode it is a star with ``k``
    process channels linked to ``v``, PSD iff ``rho^2 k <= 1``.
    """
    mode = UMode(mode)
    q = np.asarray(q_diag, dtype=float)
    k = int(np.count_nonzero(q > 0))
    if mode is UMode.WV_ONLY:
        if k == 0 or not r > 0:
            return -1.0, 1.0
        bound = min(1.0, 1.0 / np.sqrt(k))
        return -bound, bound
    m = k + (1 if r > 0 else 0)
    return (-1.0 / (m - 1) if m >= 2 else -1.0), 1.0


def build_joint_covariance(spec: NoiseSpec, mode=UMode.EQUICORRELATED) -> JointCovariance:
    """Assemble ``U = [[Q, S], [S^T, R]]`` and reject it unless PSD.

    In equicorrelated mode every pair of channels has correlation ``rho``; in
    ``wv_only`` mode only the w-v pairs are correlated and Q stays diagonal.
    """
    mode = UMode(mode)
    variances = np.r_[np.asarray(spec.q_diag, dtype=float), spec.r]
    U = _assemble(variances, spec.rho, mode)
    res = psd_check(U)
    if not res.ok:
        lo, hi = admissible_rho_range(spec.q_diag, spec.r, mode)
        raise CovarianceError(
            f"joint noise covariance is not PSD for rho={spec.rho} in {mode.value} mode "
            f"(minimum eigenvalue {res.min_eigenvalue:.6g}); admissible rho range is "
            f"[{lo:.6g}, {hi:.6g}]"
        )
    U.setflags(write=False)
    return JointCovariance(U, mode)


def correlating_filter(U) -> np.ndarray:
    """Matrix ``A = V diag(sqrt(lambda))`` with ``A A^T = U`` from the eigendecomposition."""
    U = np.asarray(U.U if isinstance(U, JointCovariance) else U, dtype=float)
    lam, V = np.linalg.eigh(0.5 * (U + U.T))
    lam_max = max(float(lam[-1]), 0.0)
    if lam[0] < -1e-10 * lam_max or (lam_max == 0.0 and lam[0] < 0.0):
        raise CovarianceError(
            f"cannot sample from an indefinite covariance (minimum eigenvalue {lam[0]:.6g})"
        )
    return V * np.sqrt(np.clip(lam, 0.0, None))


def sample_correlated(U, L: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``L`` iid samples of ``[w; v] ~ N(0, U)``.

    Returns ``w`` with shape ``(n, L)`` and ``v`` with shape ``(L,)``.
    """
    if L < 1:
        raise ValueError(f"sample length must be >= 1, got {L}")
    A = correlating_filter(U)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((A.shape[0], L))
    e = A @ z
    return e[:-1].copy(), e[-1].copy()


LFSR_ORDER = 16
LFSR_TAPS = (16, 14, 13, 11)  # x^16 + x^14 + x^13 + x^11 + 1, primitive


def prbs_input(L: int, levels=(-0.8, 1.0), seed: int = 1) -> np.ndarray:
    """Two-level maximal-length sequence from a 16-bit Fibonacci LFSR.

    The period is 65535. Bit 0 maps to ``levels[0]``, bit 1 to ``levels[1]``.
    """
    lo, hi = (float(x) for x in levels)
    if not lo < hi:
        raise ValueError(f"PRBS levels must satisfy lo < hi, got {levels}")
    if L < 1:
        raise ValueError(f"sequence length must be >= 1, got {L}")
    period = (1 << LFSR_ORDER) - 1
    state = int(seed) % period + 1
    bits = _backend.lfsr_bits(int(L), state, LFSR_ORDER, np.asarray(LFSR_TAPS, dtype=np.int64))
    return np.where(bits == 1, hi, lo)
