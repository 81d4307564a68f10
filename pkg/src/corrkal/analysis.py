"""Accuracy metrics and the theoretical effect of noise correlation.

``measurement_covariance_theory`` covers the scalar random-walk setting
``F = I, H = 1, u = 0`` where one step of the output variance is
``P = P_prev + Qbar + R - 2 S``; ``state_noise_cross_cov`` gives the
cross-covariance between the filtered process noise and the filtered state.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from corrkal.filters import cnkf_init, steady_state_covariance
from corrkal.model import ObserverCanonicalModel
from corrkal.noise import NoiseSpec, UMode, build_joint_covariance


def delta_theta(theta_hat, theta_true) -> float:
    """Relative parameter error ``||theta_hat - theta|| / ||theta||`` (a fraction, not percent)."""
    theta_hat = np.asarray(theta_hat, dtype=float).reshape(-1)
    theta_true = np.asarray(theta_true, dtype=float).reshape(-1)
    if theta_hat.shape != theta_true.shape:
        raise ValueError(f"length mismatch: {theta_hat.size} estimates vs {theta_true.size} true values")
    scale = np.linalg.norm(theta_true)
    if scale == 0:
        raise ValueError("relative error is undefined for a zero true parameter vector")
    return float(np.linalg.norm(theta_hat - theta_true) / scale)


def rmse_state(x_hat, x_true) -> float:
    x_hat = np.asarray(x_hat, dtype=float)
    x_true = np.asarray(x_true, dtype=float)
    if x_hat.shape != x_true.shape:
        raise ValueError(f"shape mismatch: {x_hat.shape} vs {x_true.shape}")
    return float(np.sqrt(np.mean((x_hat - x_true) ** 2)))


@dataclass(frozen=True)
class AccuracyReport:
    delta_theta: float
    rmse_x1: float | None
    errors: np.ndarray

    @property
    def delta_pct(self) -> float:
        return 100.0 * self.delta_theta


def accuracy_report(theta_hat, theta_true, x1_hat=None, x1_true=None) -> AccuracyReport:
    theta_hat = np.asarray(theta_hat, dtype=float)
    theta_true = np.asarray(theta_true, dtype=float)
    rmse = None if x1_hat is None else rmse_state(x1_hat, x1_true)
    return AccuracyReport(delta_theta(theta_hat, theta_true), rmse, theta_hat - theta_true)


class MeasurementCovariance(NamedTuple):
    P: np.ndarray | float
    P0: np.ndarray | float


def measurement_covariance_theory(P_prev, Qbar, R, S) -> MeasurementCovariance:
    """Output variance with (``P``) and without (``P0``) the cross term ``-2 S``.

    Broadcasts over array inputs. ``P0 - P = 2 S``, so a positive correlation
    makes the observation more accurate and a negative one less accurate.
    """
    P0 = np.add(np.add(P_prev, Qbar), R)
    P = P0 - 2.0 * np.asarray(S, dtype=float)
    if np.ndim(P) == 0:
        return MeasurementCovariance(float(P), float(P0))
    return MeasurementCovariance(P, P0)


def measurement_covariance_curve(S_values, Qbar: float, R: float, horizon: int = 1) -> tuple:
    """Iterate the one-step relation ``horizon`` times starting from ``P = R``.

    Returns ``(S, P, P0)`` arrays for plotting output variance against ``S``.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    S = np.asarray(S_values, dtype=float)
    P = np.full_like(S, R)
    P0 = np.full_like(S, R)
    for _ in range(horizon):
        P = measurement_covariance_theory(P, Qbar, R, S).P
        P0 = measurement_covariance_theory(P0, Qbar, R, 0.0).P0
    return S, P, P0


class CrossCovariance(NamedTuple):
    cross: np.ndarray
    trace: float


def _innovation_scale(P_pred) -> float:
    hph = float(P_pred[0, 0])
    if not (hph > 0 and np.isfinite(hph)):
        raise ValueError(f"predicted output variance H P H^T must be positive, got {hph}")
    return hph


def state_noise_cross_cov(S, P_pred) -> CrossCovariance:
    """``-S (H P H^T)^-1 H P`` for ``H = [1, 0, ..., 0]``, with its trace."""
    S = np.asarray(S, dtype=float).reshape(-1)
    P_pred = np.atleast_2d(np.asarray(P_pred, dtype=float))
    if P_pred.shape != (S.size, S.size):
        raise ValueError(f"P_pred has shape {P_pred.shape}, expected ({S.size}, {S.size})")
    hph = _innovation_scale(P_pred)
    cross = -np.outer(S, P_pred[0, :]) / hph
    return CrossCovariance(cross, float(np.trace(cross)))


class NoiseMoments(NamedTuple):
    gain: np.ndarray
    P_w: np.ndarray


def conditional_noise_moments(S, Q, P_pred, R: float = 0.0) -> NoiseMoments:
    """Conditional-Gaussian update of the process noise given the output.

    ``w(k|k) = w(k|k-1) + gain * (y - y_hat)`` with ``gain = S / P_yy`` and
    ``P_w = Q - S S^T / P_yy`` where ``P_yy = H P H^T + R``. ``R = 0`` uses
    the predicted-state part only.
    """
    S = np.asarray(S, dtype=float).reshape(-1)
    P_pred = np.atleast_2d(np.asarray(P_pred, dtype=float))
    pyy = _innovation_scale(P_pred) + float(R)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    return NoiseMoments(S / pyy, Q - np.outer(S, S) / pyy)


def cross_cov_sweep(model: ObserverCanonicalModel, q_diag, r: float, rhos: Iterable[float], mode=UMode.EQUICORRELATED):
    """Trace of the state/noise cross-covariance at the converged decorrelated
    filter covariance, one row ``(rho, trace)`` per correlation coefficient."""
    rows = []
    for rho in rhos:
        joint = build_joint_covariance(NoiseSpec(q_diag, r, rho), mode)
        cfg = cnkf_init(model, joint.Q, joint.R, joint.S)
        P_pred, _, _ = steady_state_covariance(cfg)
        rows.append((float(rho), state_noise_cross_cov(joint.S, P_pred).trace))
    return rows


def fmt(value) -> str:
    """Lossless text form for CSV cells."""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
    return path
