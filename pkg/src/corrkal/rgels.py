"""Joint parameter and state estimation (KF-CN-RGELS).

Recursive least squares runs on the identification model

    y(t) = phi(t)^T theta_bar + gamma(t) + beta(t) + v(t)

where the unmeasured entries of ``phi`` (past states and past white noise)
and ``gamma`` (past decorrelated process noise) are replaced by estimates
from a Kalman filter that itself runs on the current parameter estimate.

Ordering inside one time step ``t``:

1. filter step with the auxiliary parameters, giving ``x_hat(t)``;
2. reconstruct ``w_hat(t-1)`` and ``wbar_hat(t-1)`` from ``x_hat(t)`` and
   ``x_hat(t-1)`` (one-step-delayed reconstruction);
3. form ``phi(t)``, ``gamma(t)``, ``beta(t)``;
4. RLS update with ``y(t)``;
5. refresh the auxiliary parameters from ``theta_hat(t)``;
6. reconstruct ``v*(t)`` and ``v(t)`` and push the histories.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import os

import numpy as np

from corrkal import _backend
from corrkal.filters import (
    AugFilterState,
    CnkfConfig,
    FilterState,
    augkf_init,
    augkf_step,
    cnkf_step,
    filter_init,
)
from corrkal.model import ObserverCanonicalModel, build_F, schur_stable, theta_to_model
from corrkal.noise import JointCovariance

ALGORITHMS = ("kf-cn-rgels", "skf", "aug-kf")


class DivergenceError(RuntimeError):
    def __init__(self, t: int, norm: float):
        super().__init__(f"parameter estimate diverged at t={t} (|theta|={norm:.4g})")
        self.t = t
        self.norm = norm


@dataclass
class RgelsOptions:
    """Tuning of the joint estimator.

    ``stabilize="reflect"`` mirrors unstable roots of the F and J polynomials
    into the unit circle before the estimate is used by the filter and the
    noise reconstruction; the reported ``theta_hat`` is never altered.
    ``gamma_mode="raw"`` sums raw ``w_hat`` instead of ``wbar_hat``.
    """

    algorithm: str = "kf-cn-rgels"
    p0: float = 1e6
    theta0: np.ndarray | None = None
    stabilize: str = "reflect"
    gamma_mode: str = "decorrelated"
    use_vstar_variance: bool = False
    divergence_limit: float = 1e6
    backend: str | None = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if self.stabilize not in ("reflect", "none"):
            raise ValueError(f"stabilize must be 'reflect' or 'none', got {self.stabilize!r}")
        if self.gamma_mode not in ("decorrelated", "raw"):
            raise ValueError(f"gamma_mode must be 'decorrelated' or 'raw', got {self.gamma_mode!r}")
        if not self.p0 > 0:
            raise ValueError("p0 must be positive")


@dataclass
class NoiseModel:
    """Assumed noise statistics ``Q``, ``R``, ``S`` handed to the estimator."""

    Q: np.ndarray
    R: float
    S: np.ndarray

    @classmethod
    def coerce(cls, noise) -> "NoiseModel":
        if isinstance(noise, NoiseModel):
            return noise
        if isinstance(noise, JointCovariance):
            return cls(noise.Q, noise.R, noise.S)
        if isinstance(noise, dict):
            return cls(np.atleast_2d(noise["Q"]), float(noise["R"]), np.atleast_1d(noise["S"]))
        Q, R, S = noise
        return cls(np.atleast_2d(np.asarray(Q, dtype=float)), float(R), np.atleast_1d(np.asarray(S, dtype=float)))


# ---------------------------------------------------------------------------
# building blocks


def build_info_vector(x1_hist, u_hist, u_t: float, v_hist) -> np.ndarray:
    """``[-x1(t-1..t-n), u(t-1..t-n), u(t), v(t-1..t-nJ)]``; histories are newest first."""
    return np.concatenate([-np.asarray(x1_hist, dtype=float), u_hist, [u_t], v_hist])


def compute_gamma(w_hist) -> float:
    """Sum of component ``i`` of the noise vector at lag ``i`` (row ``i-1`` of ``w_hist``)."""
    w_hist = np.asarray(w_hist, dtype=float)
    return float(np.trace(w_hist)) if w_hist.size else 0.0


def compute_beta(y_hist, T) -> float:
    return float(np.dot(T, y_hist))


def rls_update(theta, P, phi, y_t: float, gamma_t: float = 0.0, beta_t: float = 0.0):
    """One recursive least-squares step. Returns ``(theta, P, residual)``."""
    Pphi = P @ phi
    denom = 1.0 + phi @ Pphi
    gain = Pphi / denom
    e = y_t - gamma_t - beta_t - phi @ theta
    theta = theta + gain * e
    P = P - np.outer(gain, Pphi)
    P = 0.5 * (P + P.T)
    return theta, P, float(e)


def recover_parameters(theta_bar, T, n: int, n_j: int) -> np.ndarray:
    """Map decorrelated estimates ``[f_bar, g_bar, d, J]`` back to ``[f, g, d, J]``."""
    theta_bar = np.asarray(theta_bar, dtype=float)
    T = np.asarray(T, dtype=float)
    out = theta_bar.copy()
    d = theta_bar[..., 2 * n]
    out[..., :n] = theta_bar[..., :n] - T
    out[..., n : 2 * n] = theta_bar[..., n : 2 * n] + T * np.expand_dims(d, -1)
    return out


def decorrelate_theta(theta, T, n: int) -> np.ndarray:
    """Inverse of :func:`recover_parameters`."""
    theta = np.asarray(theta, dtype=float)
    T = np.asarray(T, dtype=float)
    out = theta.copy()
    out[:n] = theta[:n] + T
    out[n : 2 * n] = theta[n : 2 * n] - T * theta[2 * n]
    return out


def reflect_unstable(coeffs) -> np.ndarray:
    """Reflect roots of ``z^m + c_1 z^(m-1) + ... + c_m`` that lie on or outside the
    unit circle to ``1 / conj(root)``. Stable polynomials are returned unchanged."""
    c = np.asarray(coeffs, dtype=float)
    if c.size == 0 or schur_stable(c):
        return c.copy()
    roots = np.roots(np.r_[1.0, c])
    mag = np.abs(roots)
    roots = np.where(mag >= 1.0, roots / np.maximum(mag, 1e-300) ** 2, roots)
    roots = np.where(np.abs(roots) >= 1.0, roots * (1.0 - 1e-3), roots)
    return np.real(np.poly(roots))[1:]


def auxiliary_parameters(theta_bar, T, n: int, n_j: int, stabilize: str = "reflect") -> np.ndarray:
    """Parameters the filter and noise reconstruction run on."""
    aux = np.array(theta_bar, dtype=float)
    if stabilize == "reflect":
        f = aux[:n] - T
        if not schur_stable(f):
            aux[:n] = reflect_unstable(f) + T
        jj = aux[2 * n + 1 :]
        if n_j and not schur_stable(jj):
            aux[2 * n + 1 :] = reflect_unstable(jj)
    return aux


@dataclass
class NoiseEstimates:
    vstar: float
    v: float
    w: np.ndarray | None = None
    wbar: np.ndarray | None = None


def estimate_measurement_noise(theta_bar, n: int, x1_t: float, u_t: float, y_t: float, v_hist):
    """``v*(t) = y - x1 - d u`` and the white part ``v(t) = v*(t) - sum J_i v(t-i)``."""
    d = theta_bar[2 * n]
    J = theta_bar[2 * n + 1 :]
    vstar = y_t - x1_t - d * u_t
    return float(vstar), float(vstar - np.dot(J, v_hist))


def estimate_process_noise(theta_bar, T, n: int, x_t, x_next, u_t: float, y_t: float, vstar_t: float):
    """``w(t) = x(t+1) - F_bar x(t) - G_bar u(t) - T (x1(t) + d u(t))`` and
    ``wbar(t) = w(t) - T v*(t)``."""
    F_bar = build_F(theta_bar[:n])
    G_bar = theta_bar[n : 2 * n]
    d = theta_bar[2 * n]
    w = x_next - F_bar @ x_t - G_bar * u_t - T * (x_t[0] + d * u_t)
    return w, w - T * vstar_t


def estimate_noises(theta_bar, T, n: int, x_t, u_t, y_t, v_hist, x_next=None) -> NoiseEstimates:
    vstar, v = estimate_measurement_noise(theta_bar, n, x_t[0], u_t, y_t, v_hist)
    if x_next is None:
        return NoiseEstimates(vstar, v)
    w, wbar = estimate_process_noise(theta_bar, T, n, x_t, x_next, u_t, y_t, vstar)
    return NoiseEstimates(vstar, v, w, wbar)


# ---------------------------------------------------------------------------
# state and per-step driver


@dataclass
class RgelsState:
    n: int
    n_j: int
    T: np.ndarray
    cfg: CnkfConfig
    noise: NoiseModel
    options: RgelsOptions
    theta_hat: np.ndarray
    P_rls: np.ndarray
    theta_aux: np.ndarray
    kf: FilterState | AugFilterState
    x1_hist: np.ndarray
    u_hist: np.ndarray
    y_hist: np.ndarray
    v_hist: np.ndarray
    vstar_hist: np.ndarray
    wbar_hist: np.ndarray
    w_hist: np.ndarray
    t: int = 0
    last_residual: float = 0.0

    @property
    def n_params(self) -> int:
        return 2 * self.n + 1 + self.n_j


def _push(hist: np.ndarray, value) -> None:
    if hist.shape[0]:
        hist[1:] = hist[:-1]
        hist[0] = value


def rgels_init(n: int, n_j: int, noise, options: RgelsOptions | None = None) -> RgelsState:
    options = options or RgelsOptions()
    noise = NoiseModel.coerce(noise)
    ns = 2 * n + 1 + n_j
    R = float(noise.R)
    if not R > 0:
        raise ValueError(f"measurement variance R must be > 0, got {R}")
    Q = np.asarray(noise.Q, dtype=float).reshape(n, n)
    S = np.asarray(noise.S, dtype=float).reshape(n)
    if options.algorithm == "kf-cn-rgels":
        T = S / R
        Q_bar = Q - np.outer(T, S)
        Q_bar = 0.5 * (Q_bar + Q_bar.T)
    else:
        T = np.zeros(n)
        Q_bar = Q.copy()
    theta0 = np.full(ns, 1e-6) if options.theta0 is None else np.asarray(options.theta0, dtype=float).copy()
    if theta0.size != ns:
        raise ValueError(f"theta0 has length {theta0.size}, expected {ns}")
    aux = auxiliary_parameters(theta0, T, n, n_j, options.stabilize)
    R_gain = R
    if options.use_vstar_variance:
        R_gain = R * (1.0 + float(theta0[2 * n + 1 :] @ theta0[2 * n + 1 :]))
    cfg = CnkfConfig(
        T=T,
        F_bar=build_F(aux[:n]),
        G_bar=aux[n : 2 * n].copy(),
        d=float(aux[2 * n]),
        Q_bar=Q_bar,
        R=R,
        S=S,
        Q=Q,
        R_gain=R_gain,
    )
    kf = augkf_init(n, Q) if options.algorithm == "aug-kf" else filter_init(n)
    return RgelsState(
        n=n,
        n_j=n_j,
        T=T,
        cfg=cfg,
        noise=NoiseModel(Q, R, S),
        options=options,
        theta_hat=theta0,
        P_rls=options.p0 * np.eye(ns),
        theta_aux=aux,
        kf=kf,
        x1_hist=np.zeros(n),
        u_hist=np.zeros(n),
        y_hist=np.zeros(n),
        v_hist=np.zeros(n_j),
        vstar_hist=np.zeros(n_j),
        wbar_hist=np.zeros((n, n)),
        w_hist=np.zeros((n, n)),
    )


def _filter_step(state: RgelsState, u_t: float, y_t: float):
    n = state.n
    aux = state.theta_aux
    if state.options.algorithm == "aug-kf":
        model = ObserverCanonicalModel(aux[:n], aux[n : 2 * n], aux[2 * n], aux[2 * n + 1 :])
        y_eff = y_t - float(np.dot(aux[2 * n + 1 :], state.v_hist))
        nz = state.noise
        return augkf_step(state.kf, model, nz.Q, state.cfg.R_gain, nz.S, u_t, y_eff)
    return cnkf_step(state.kf, state.cfg, u_t, y_t)


def joint_step(state: RgelsState, u_t: float, y_t: float) -> RgelsState:
    """Advance the estimator by one sample (mutates and returns ``state``)."""
    n, n_j = state.n, state.n_j
    T = state.T
    x_prev = state.kf.x_hat
    u_prev, y_prev = state.kf.u_prev, (state.y_hist[0] if n else 0.0)

    state.kf = _filter_step(state, u_t, y_t)
    if state.t > 0:
        vstar_prev = state.vstar_hist[0] if n_j else y_prev - x_prev[0] - state.theta_aux[2 * n] * u_prev
        w, wbar = estimate_process_noise(
            state.theta_aux, T, n, x_prev, state.kf.x_hat, u_prev, y_prev, vstar_prev
        )
        _push(state.w_hist, w)
        _push(state.wbar_hist, wbar)

    phi = build_info_vector(state.x1_hist, state.u_hist, u_t, state.v_hist)
    gamma = compute_gamma(state.wbar_hist if state.options.gamma_mode == "decorrelated" else state.w_hist)
    beta = compute_beta(state.y_hist, T)
    state.theta_hat, state.P_rls, state.last_residual = rls_update(
        state.theta_hat, state.P_rls, phi, y_t, gamma, beta
    )
    norm = float(np.linalg.norm(state.theta_hat))
    if not norm <= state.options.divergence_limit:
        raise DivergenceError(state.t, norm)

    aux = auxiliary_parameters(state.theta_hat, T, n, n_j, state.options.stabilize)
    state.theta_aux = aux
    R_gain = state.cfg.R_gain
    if state.options.use_vstar_variance:
        R_gain = state.cfg.R * (1.0 + float(aux[2 * n + 1 :] @ aux[2 * n + 1 :]))
    state.cfg = CnkfConfig(
        T=T,
        F_bar=build_F(aux[:n]),
        G_bar=aux[n : 2 * n].copy(),
        d=float(aux[2 * n]),
        Q_bar=state.cfg.Q_bar,
        R=state.cfg.R,
        S=state.cfg.S,
        Q=state.cfg.Q,
        R_gain=R_gain,
    )

    vstar, v = estimate_measurement_noise(aux, n, state.kf.x_hat[0], u_t, y_t, state.v_hist)
    _push(state.vstar_hist, vstar)
    _push(state.v_hist, v)
    _push(state.x1_hist, state.kf.x_hat[0])
    _push(state.u_hist, u_t)
    _push(state.y_hist, y_t)
    state.t += 1
    return state


# ---------------------------------------------------------------------------
# full run


@dataclass
class JointResult:
    theta_bar_trace: np.ndarray   # (n_s, L), decorrelated estimates
    theta_trace: np.ndarray       # (n_s, L), recovered original parameters
    x_hat: np.ndarray             # (n, L), corrected state estimates
    P_pred: np.ndarray            # final predicted state covariance
    T: np.ndarray
    algorithm: str
    backend: str
    delta_trace: np.ndarray | None = None
    theta_true: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def theta_final(self) -> np.ndarray:
        return self.theta_trace[:, -1].copy()

    @property
    def delta_final(self) -> float | None:
        return None if self.delta_trace is None else float(self.delta_trace[-1])


def _joint_loop_reference(
    u, y, n, n_j, algo, T, Q_bar, Q, S, R, p0, theta0, reflect, gamma_raw, use_vstar, limit, reflect_fn=None
):
    """Python loop with the same signature and outputs as the compiled ``joint_loop``.

    Returns ``(theta_bar (n_s, L), x_hat (n, L), P_pred (n, n), status)`` where
    ``status`` is -1 on success or the time index at which the divergence guard fired.
    """
    options = RgelsOptions(
        algorithm=ALGORITHMS[algo],
        p0=p0,
        theta0=theta0,
        stabilize="reflect" if reflect else "none",
        gamma_mode="raw" if gamma_raw else "decorrelated",
        use_vstar_variance=use_vstar,
        divergence_limit=limit,
    )
    state = rgels_init(n, n_j, NoiseModel(Q, R, S), options)
    L = u.shape[0]
    theta_bar = np.zeros((state.n_params, L))
    x_hat = np.zeros((n, L))
    for t in range(L):
        try:
            joint_step(state, float(u[t]), float(y[t]))
        except DivergenceError:
            theta_bar[:, t] = state.theta_hat
            return theta_bar, x_hat, np.zeros((n, n)), t
        theta_bar[:, t] = state.theta_hat
        x_hat[:, t] = state.kf.x_hat
    P_pred = state.kf.P_pred if state.kf.P_pred is not None else np.zeros((n, n))
    return theta_bar, x_hat, np.array(P_pred), -1


def _kernel_for(backend: str):
    if backend == "native":
        from corrkal import _kernels

        return _kernels.joint_loop
    return _joint_loop_reference


def _run(kernel, u, y, n, n_j, noise, options):
    probe = rgels_init(n, n_j, noise, options)
    theta_bar, x_hat, P_pred, status = kernel(
        np.ascontiguousarray(u, dtype=float),
        np.ascontiguousarray(y, dtype=float),
        n,
        n_j,
        ALGORITHMS.index(options.algorithm),
        np.ascontiguousarray(probe.T),
        np.ascontiguousarray(probe.cfg.Q_bar),
        np.ascontiguousarray(probe.noise.Q),
        np.ascontiguousarray(probe.noise.S),
        float(probe.cfg.R),
        float(options.p0),
        np.ascontiguousarray(probe.theta_hat),
        options.stabilize == "reflect",
        options.gamma_mode == "raw",
        bool(options.use_vstar_variance),
        float(options.divergence_limit),
        reflect_unstable,
    )
    if status >= 0:
        raise DivergenceError(int(status), float(np.linalg.norm(theta_bar[:, status])))
    return theta_bar, x_hat, P_pred, probe.T


def resolve_backend(name: str | None = None) -> str:
    """``"native"`` (compiled kernel), ``"python"`` or ``"auto"`` (native when built)."""
    name = name or os.environ.get("CORRKAL_BACKEND") or "auto"
    if name == "auto":
        return "native" if _backend.NATIVE else "python"
    if name not in ("native", "python"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "native" and not _backend.NATIVE:
        raise RuntimeError("native kernels are unavailable (extension not built or disabled)")
    return name


def run_joint(dataset, noise, options: RgelsOptions | None = None, *, n=None, n_j=None, theta_true=None) -> JointResult:
    """Run the joint estimator over a whole dataset.

    ``dataset`` is a :class:`~corrkal.simulate.Dataset` or a ``(u, y)`` pair.
    When the true parameters are known (from the dataset metadata or
    ``theta_true``) the relative error trace is filled in.
    """
    options = options or RgelsOptions()
    if isinstance(dataset, tuple):
        u, y = dataset
        meta = {}
    else:
        u, y = dataset.u, dataset.y
        meta = dataset.meta
        if theta_true is None:
            theta_true = dataset.theta_true
        model = dataset.model
        if model is not None:
            n = model.n if n is None else n
            n_j = model.n_j if n_j is None else n_j
    if n is None or n_j is None:
        raise ValueError("model orders n and n_J are required when the dataset carries no model")
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    if u.shape != y.shape or u.ndim != 1 or u.size < 1:
        raise ValueError("u and y must be non-empty 1-D arrays of equal length")
    backend = resolve_backend(options.backend)
    theta_bar, x_hat, P_pred, T = _run(_kernel_for(backend), u, y, n, n_j, noise, options)
    theta = recover_parameters(theta_bar.T, T, n, n_j).T
    delta = None
    if theta_true is not None:
        theta_true = np.asarray(theta_true, dtype=float)
        if theta_true.size != theta.shape[0]:
            raise ValueError(
                f"true parameter vector has length {theta_true.size}, estimator has {theta.shape[0]}"
            )
        delta = np.linalg.norm(theta - theta_true[:, None], axis=0) / np.linalg.norm(theta_true)
    return JointResult(
        theta_bar_trace=theta_bar,
        theta_trace=theta,
        x_hat=x_hat,
        P_pred=P_pred,
        T=T,
        algorithm=options.algorithm,
        backend=backend,
        delta_trace=delta,
        theta_true=theta_true,
        meta=dict(meta),
    )


def final_model(result: JointResult) -> ObserverCanonicalModel:
    n = result.T.size
    return theta_to_model(result.theta_final, n, result.theta_final.size - 2 * n - 1)
