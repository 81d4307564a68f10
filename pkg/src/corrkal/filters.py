"""State estimators for the canonical model.

Three filters share one per-step calling convention ``step(state, ..., u, y)``
where ``(u, y)`` are the sample at time t and ``state`` carries the corrected
estimate at t-1 together with the previous sample:

* ``skf_step``   standard Kalman filter, noise correlation ignored.
* ``cnkf_step``  decorrelated filter: the process noise is replaced by
  ``w - T v*`` with ``T = S / R`` and ``T y(t-1)`` enters as a known input.
* ``augkf_step`` Kalman filter on the state augmented with the process noise.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
import warnings

import numpy as np

from corrkal.model import ObserverCanonicalModel, build_F


class FilterDivergenceError(FloatingPointError):
    """The innovation variance became non-positive or non-finite."""


@dataclass(frozen=True)
class FilterState:
    x_hat: np.ndarray
    P: np.ndarray
    t: int = 0
    u_prev: float = 0.0
    y_prev: float = 0.0
    gain: np.ndarray | None = None
    innovation: float = 0.0
    P_pred: np.ndarray | None = None


def filter_init(n: int, x0=None, P0=None) -> FilterState:
    x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    P0 = np.zeros((n, n)) if P0 is None else np.asarray(P0, dtype=float).copy()
    return FilterState(x_hat=x0, P=P0)


@dataclass(frozen=True)
class CnkfConfig:
    """Decorrelated filter matrices.

    ``R`` is the measurement variance used in ``T = S / R``; ``R_gain`` is the
    value entering the Kalman gain (equal to ``R`` unless the MA-inflated
    variance of v* was requested).
    """

    T: np.ndarray
    F_bar: np.ndarray
    G_bar: np.ndarray
    d: float
    Q_bar: np.ndarray
    R: float
    S: np.ndarray
    Q: np.ndarray
    R_gain: float = field(default=None)

    def __post_init__(self):
        if self.R_gain is None:
            object.__setattr__(self, "R_gain", self.R)

    @property
    def n(self) -> int:
        return self.T.size

    def with_decorrelated_parameters(self, f_bar, g_bar, d) -> "CnkfConfig":
        """Same noise model, new ``(f_bar, g_bar, d)``; used by the auxiliary model."""
        return replace(
            self,
            F_bar=build_F(f_bar),
            G_bar=np.asarray(g_bar, dtype=float).copy(),
            d=float(d),
        )


def cnkf_init(
    model: ObserverCanonicalModel, Q, R: float, S, use_vstar_variance: bool = False
) -> CnkfConfig:
    """Decorrelating gain ``T = S / R`` and the matching ``F_bar``, ``G_bar``, ``Q_bar``."""
    R = float(R)
    if not R > 0:
        raise ValueError(f"measurement variance R must be > 0, got {R}")
    n = model.n
    Q = np.asarray(Q, dtype=float).reshape(n, n)
    S = np.asarray(S, dtype=float).reshape(-1)
    if S.size != n:
        raise ValueError(f"S has length {S.size}, expected n={n}")
    T = S / R
    Q_bar = Q - np.outer(T, S)
    Q_bar = 0.5 * (Q_bar + Q_bar.T)
    lo = np.linalg.eigvalsh(Q_bar)[0]
    if lo < -1e-10 * (1.0 + np.abs(Q_bar).max()):
        warnings.warn(
            f"decorrelated process covariance is indefinite (min eigenvalue {lo:.3g})",
            RuntimeWarning,
            stacklevel=2,
        )
    R_gain = R * (1.0 + float(model.j @ model.j)) if use_vstar_variance else R
    return CnkfConfig(
        T=T,
        F_bar=build_F(model.f + T),
        G_bar=model.g - T * model.d,
        d=model.d,
        Q_bar=Q_bar,
        R=R,
        S=S,
        Q=Q,
        R_gain=R_gain,
    )


def _kf_step(state: FilterState, F, G, T, Qp, R, d, u, y) -> FilterState:
    # Shared by SKF and CN-KF so that T = 0 reproduces the SKF bit for bit.
    x_p = F @ state.x_hat + G * state.u_prev + T * state.y_prev
    P_p = F @ state.P @ F.T + Qp
    s = P_p[0, 0] + R
    if not (s > 0 and np.isfinite(s)):
        raise FilterDivergenceError(f"innovation variance {s} at t={state.t}")
    K = P_p[:, 0] / s
    nu = y - x_p[0] - d * u
    x_c = x_p + K * nu
    P_c = P_p - np.outer(K, P_p[0, :])
    P_c = 0.5 * (P_c + P_c.T)
    return FilterState(
        x_hat=x_c,
        P=P_c,
        t=state.t + 1,
        u_prev=float(u),
        y_prev=float(y),
        gain=K,
        innovation=float(nu),
        P_pred=P_p,
    )


def cnkf_step(state: FilterState, cfg: CnkfConfig, u: float, y: float) -> FilterState:
    return _kf_step(state, cfg.F_bar, cfg.G_bar, cfg.T, cfg.Q_bar, cfg.R_gain, cfg.d, u, y)


def skf_step(state: FilterState, model: ObserverCanonicalModel, Q, R: float, u: float, y: float) -> FilterState:
    n = model.n
    return _kf_step(
        state, model.F, model.G, np.zeros(n), np.asarray(Q, dtype=float), float(R), model.d, u, y
    )


@dataclass(frozen=True)
class AugFilterState:
    """Augmented estimate ``[x(t|t); w(t|t)]`` with its joint covariance.

    ``k_x``, ``k_w``, ``P_xw`` and ``P_w`` expose the blocks of the last update.
    """

    x_hat: np.ndarray
    w_hat: np.ndarray
    P: np.ndarray
    t: int = 0
    u_prev: float = 0.0
    k_x: np.ndarray | None = None
    k_w: np.ndarray | None = None
    innovation: float = 0.0
    P_pred: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.x_hat.size

    @property
    def P_c(self) -> np.ndarray:
        return self.P[: self.n, : self.n]

    @property
    def P_xw(self) -> np.ndarray:
        return self.P[: self.n, self.n :]

    @property
    def P_w(self) -> np.ndarray:
        return self.P[self.n :, self.n :]


def augkf_init(n: int, Q, x0=None, P0=None) -> AugFilterState:
    x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    P = np.zeros((2 * n, 2 * n))
    if P0 is not None:
        P[:n, :n] = P0
    P[n:, n:] = Q
    return AugFilterState(x_hat=x0, w_hat=np.zeros(n), P=P)


def augkf_step(
    state: AugFilterState, model: ObserverCanonicalModel, Q, R: float, S, u: float, y: float
) -> AugFilterState:
    """One cycle of the augmented filter.

    The prior of ``z(t) = [x(t); w(t)]`` is ``[F x + G u + w(t-1|t-1); 0]`` with
    covariance ``blkdiag([F I] P [F I]^T, Q)``. The measurement ``y = [H 0] z + d u + v``
    has noise cross-covariance ``[0; S]`` with the augmented state.
    """
    n = state.n
    F = model.F
    Q = np.asarray(Q, dtype=float)
    S = np.asarray(S, dtype=float).reshape(-1)
    A = np.hstack([F, np.eye(n)])
    x_p = F @ state.x_hat + model.g * state.u_prev + state.w_hat
    P_p = A @ state.P @ A.T
    P_p = 0.5 * (P_p + P_p.T)
    s = P_p[0, 0] + float(R)
    if not (s > 0 and np.isfinite(s)):
        raise FilterDivergenceError(f"innovation variance {s} at t={state.t}")
    k_x = P_p[:, 0] / s
    k_w = S / s
    nu = y - x_p[0] - model.d * u
    P_new = np.empty((2 * n, 2 * n))
    P_new[:n, :n] = P_p - np.outer(k_x, P_p[0, :])
    P_new[n:, n:] = Q - np.outer(k_w, S)
    P_new[:n, n:] = -np.outer(k_x, S)
    P_new[n:, :n] = P_new[:n, n:].T
    P_new = 0.5 * (P_new + P_new.T)
    return AugFilterState(
        x_hat=x_p + k_x * nu,
        w_hat=k_w * nu,
        P=P_new,
        t=state.t + 1,
        u_prev=float(u),
        k_x=k_x,
        k_w=k_w,
        innovation=float(nu),
        P_pred=P_p,
    )


def steady_state_covariance(cfg: CnkfConfig, tol: float = 1e-14, max_iter: int = 100_000):
    """Iterate the decorrelated Riccati recursion to its fixed point.

    Returns ``(P_pred, P_corr, iterations)``.
    """
    n = cfg.n
    F, Qb, R = cfg.F_bar, cfg.Q_bar, cfg.R_gain
    P = np.zeros((n, n))
    for k in range(1, max_iter + 1):
        P_p = F @ P @ F.T + Qb
        K = P_p[:, 0] / (P_p[0, 0] + R)
        P_new = P_p - np.outer(K, P_p[0, :])
        P_new = 0.5 * (P_new + P_new.T)
        if np.max(np.abs(P_new - P)) < tol:
            return F @ P_new @ F.T + Qb, P_new, k
        P = P_new
    raise RuntimeError("Riccati recursion did not converge")
