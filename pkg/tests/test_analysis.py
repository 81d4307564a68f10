import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from corrkal.analysis import (
    accuracy_report,
    conditional_noise_moments,
    cross_cov_sweep,
    delta_theta,
    fmt,
    measurement_covariance_curve,
    measurement_covariance_theory,
    rmse_state,
    state_noise_cross_cov,
    write_csv,
)
from corrkal.noise import UMode

from conftest import EX1_Q, EX1_R, EX1_THETA


def test_delta_theta_examples():
    assert delta_theta(EX1_THETA, EX1_THETA) == 0.0
    assert delta_theta([2.0, 0.0], [1.0, 0.0]) == 1.0
    with pytest.raises(ValueError):
        delta_theta([1.0], [0.0])
    with pytest.raises(ValueError):
        delta_theta([1.0, 2.0], [1.0])


def test_delta_theta_of_rounded_estimate():
    # an estimate rounded to 4 decimals reproduces its stated error to ~1e-3 pp
    row = [-0.0402, -0.3557, 2.0117, 3.0165, 1.3191, 0.0580, 0.0398]
    assert 100 * delta_theta(row, EX1_THETA) == pytest.approx(1.0491, abs=5e-3)
    rep = accuracy_report(row, EX1_THETA)
    assert rep.delta_pct == pytest.approx(100 * rep.delta_theta)
    np.testing.assert_allclose(rep.errors, np.subtract(row, EX1_THETA))


def test_rmse():
    assert rmse_state([1.0, 3.0], [1.0, 1.0]) == pytest.approx(np.sqrt(2.0))
    with pytest.raises(ValueError):
        rmse_state([1.0], [1.0, 2.0])


def test_measurement_covariance_identity():
    r = np.random.default_rng(11)
    # values on a dyadic grid keep every addition exact, so the identity is bit-exact
    grid = lambda lo, hi: r.integers(lo * 2**20, hi * 2**20, 1000) / 2**20
    P_prev, Qbar, R, S = grid(0, 2), grid(0, 2), grid(1, 2), grid(-1, 1)
    mc = measurement_covariance_theory(P_prev, Qbar, R, S)
    np.testing.assert_array_equal(mc.P0 - mc.P, 2 * S)
    # for arbitrary floats it holds to the rounding of one subtraction
    P_prev, Qbar, R, S = r.uniform(0, 2, 1000), r.uniform(0, 2, 1000), r.uniform(0.1, 2, 1000), r.uniform(-1, 1, 1000)
    mc = measurement_covariance_theory(P_prev, Qbar, R, S)
    assert np.all(np.abs(mc.P0 - mc.P - 2 * S) <= 4 * np.finfo(float).eps * np.abs(mc.P0))
    # negative correlation makes the observation less accurate, positive more
    assert np.all((mc.P > mc.P0) == (S < 0))


def test_measurement_covariance_scalar():
    mc = measurement_covariance_theory(1.0, 0.5, 0.25, 0.1)
    assert mc.P0 == 1.75 and mc.P == pytest.approx(1.55)


def test_measurement_covariance_curve():
    S, P, P0 = measurement_covariance_curve([-0.2, 0.0, 0.2], 0.1, 1.0, horizon=3)
    np.testing.assert_allclose(P0, 1.0 + 3 * 1.1)
    np.testing.assert_allclose(P0 - P, 6 * S)
    with pytest.raises(ValueError):
        measurement_covariance_curve([0.0], 0.1, 1.0, horizon=0)


def _spd(seed, n):
    A = np.random.default_rng(seed).normal(size=(n, n))
    return A @ A.T + 0.1 * np.eye(n)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4))
def test_cross_cov_matches_matrix_formula(seed, n):
    P = _spd(seed, n)
    S = np.random.default_rng(seed + 1).normal(size=n)
    H = np.zeros((1, n))
    H[0, 0] = 1.0
    oracle = -S[:, None] @ np.linalg.inv(H @ P @ H.T) @ H @ P
    cc = state_noise_cross_cov(S, P)
    np.testing.assert_allclose(cc.cross, oracle, atol=1e-12)
    assert state_noise_cross_cov(-S, P).trace == pytest.approx(-cc.trace, abs=1e-15)
    assert state_noise_cross_cov(np.zeros(n), P).trace == 0.0


def test_cross_cov_rejects_bad_covariance():
    with pytest.raises(ValueError):
        state_noise_cross_cov([1.0, 1.0], np.zeros((2, 2)))
    with pytest.raises(ValueError):
        state_noise_cross_cov([1.0], np.eye(2))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 2.0))
def test_conditional_moments_match_joint_gaussian(seed, R):
    n = 2
    P = _spd(seed, n)
    Q = _spd(seed + 7, n)
    S = 0.3 * np.random.default_rng(seed).normal(size=n)
    # joint covariance of [w; y] with y = x1 + v: cov(w, y) = S, var(y) = P11 + R
    pyy = P[0, 0] + R
    nm = conditional_noise_moments(S, Q, P, R)
    np.testing.assert_allclose(nm.gain, S / pyy)
    np.testing.assert_allclose(nm.P_w, Q - np.outer(S, S) / pyy)
    block = np.block([[Q, S[:, None]], [S[None, :], np.array([[pyy]])]])
    if np.linalg.eigvalsh(block)[0] >= 0:
        assert np.linalg.eigvalsh(nm.P_w)[0] >= -1e-12


def test_cross_cov_sweep_pattern(ex1_model):
    rows = dict(cross_cov_sweep(ex1_model, EX1_Q, EX1_R, [-0.7, -0.3, 0.0, 0.3, 0.7], UMode.WV_ONLY))
    assert rows[0.0] == 0.0
    assert rows[0.3] < 0 < rows[-0.3]
    assert abs(rows[0.7]) > abs(rows[0.3]) and abs(rows[-0.7]) > abs(rows[-0.3])


def test_write_csv_is_lossless(tmp_path):
    x = 0.1 + 0.2
    p = write_csv(tmp_path / "sub" / "a.csv", ["a", "b", "c"], [[x, np.int64(3), "s"]])
    lines = p.read_text().splitlines()
    assert lines == ["a,b,c", f"{x!r},3,s"]
    assert float(lines[1].split(",")[0]) == x
    assert fmt(np.float32(0.5)) == "0.5"
