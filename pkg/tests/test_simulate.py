import numpy as np
import pytest

from corrkal.model import ObserverCanonicalModel
from corrkal.noise import NoiseSpec, build_joint_covariance, prbs_input, sample_correlated
from corrkal.simulate import (
    Dataset,
    DatasetFormatError,
    colored_noise,
    load_dataset,
    save_dataset,
    simulate,
    simulate_with_noise,
)

from conftest import EX1_Q, EX1_R


@pytest.fixture
def ex1_data(ex1_model):
    u = prbs_input(2000, (-0.8, 1.0), 3)
    return simulate(ex1_model, NoiseSpec(EX1_Q, EX1_R, 0.5), u, seed=3)


def test_all_zero_gives_zero(ex1_model):
    ds = simulate_with_noise(ex1_model, np.zeros(20), np.zeros((2, 20)), np.zeros(20))
    assert not ds.x_true.any() and not ds.y.any()


def test_hand_unrolled_scalar():
    m = ObserverCanonicalModel([0.0], [1.0], 0.0)
    ds = simulate_with_noise(m, [1.0, 0.0, 0.0], np.zeros((1, 3)), np.zeros(3))
    np.testing.assert_array_equal(ds.x_true[0], [0.0, 1.0, 0.0])
    np.testing.assert_array_equal(ds.y, [0.0, 1.0, 0.0])


def test_recursion_against_matrix_oracle(ex1_model, ex1_data):
    F, G = ex1_model.F, ex1_model.G
    x = np.zeros(2)
    for t in range(ex1_data.L):
        np.testing.assert_allclose(ex1_data.x_true[:, t], x, atol=1e-12)
        x = F @ x + G * ex1_data.u[t] + ex1_data.w[:, t]


def test_output_identity(ex1_model, ex1_data):
    ds = ex1_data
    resid = ds.y - ds.x_true[0] - ex1_model.d * ds.u - ds.v_star
    assert np.max(np.abs(resid)) <= 1e-12


def test_colored_noise_matches_convolution(ex1_model, ex1_data):
    oracle = np.convolve(ex1_data.v, np.r_[1.0, ex1_model.j])[: ex1_data.L]
    np.testing.assert_allclose(ex1_data.v_star, oracle, atol=1e-15)
    np.testing.assert_array_equal(colored_noise([1.0, 2.0], []), [1.0, 2.0])
    np.testing.assert_array_equal(colored_noise([1.0], [0.5, 0.5, 0.5]), [1.0])


def test_linearity_exact(ex1_model):
    u = prbs_input(300, (-0.8, 1.0), 1)
    w, v = sample_correlated(build_joint_covariance(NoiseSpec(EX1_Q, EX1_R, 0.5)).U, 300, 9)
    a = simulate_with_noise(ex1_model, u, w, v)
    b = simulate_with_noise(ex1_model, 2 * u, 2 * w, 2 * v)
    np.testing.assert_array_equal(b.x_true, 2 * a.x_true)
    np.testing.assert_array_equal(b.y, 2 * a.y)


def test_steady_state_under_constant_input(ex1_model):
    L = 400
    ds = simulate_with_noise(ex1_model, np.ones(L), np.zeros((2, L)), np.zeros(L))
    x_ss = np.linalg.solve(np.eye(2) - ex1_model.F, ex1_model.G)
    np.testing.assert_allclose(ds.x_true[:, -1], x_ss, rtol=1e-10)


def test_ex1_record_is_plausible(ex1_model):
    cfg_u = prbs_input(5000, (-0.8, 1.0), 1)
    ds = simulate(ex1_model, NoiseSpec(EX1_Q, EX1_R, 0.5), cfg_u, seed=1)
    assert ds.L == 5000
    assert set(np.unique(ds.u)) == {-0.8, 1.0}
    # bounded output, driven mainly by the input two steps back
    assert np.max(np.abs(ds.y)) < 25
    lag_corr = [np.corrcoef(ds.y[k:], ds.u[: ds.L - k])[0, 1] for k in range(4)]
    assert max(lag_corr) > 0.3


def test_simulate_is_seed_deterministic(ex1_model):
    u = prbs_input(100, (-0.8, 1.0), 2)
    a = simulate(ex1_model, NoiseSpec(EX1_Q, EX1_R, 0.3), u, seed=4)
    b = simulate(ex1_model, NoiseSpec(EX1_Q, EX1_R, 0.3), u, seed=4)
    np.testing.assert_array_equal(a.y, b.y)
    assert a.meta["seed"] == 4 and a.meta["rho"] == 0.3


def test_simulate_rejects(ex1_model):
    with pytest.raises(ValueError):
        simulate(ex1_model, NoiseSpec(EX1_Q, EX1_R, -0.6), np.ones(5), seed=0)
    with pytest.raises(ValueError):
        simulate(ex1_model, NoiseSpec(EX1_Q, EX1_R, 0.0), np.ones(0), seed=0)
    with pytest.raises(ValueError, match="process channels"):
        simulate(ex1_model, NoiseSpec([1.0], 1.0, 0.0), np.ones(5), seed=0)


def test_round_trip_bit_exact(tmp_path, ex1_data):
    p = tmp_path / "ds.csv"
    save_dataset(ex1_data, p)
    back = load_dataset(p)
    for name in ("u", "y", "x_true", "w", "v", "v_star"):
        np.testing.assert_array_equal(getattr(back, name), getattr(ex1_data, name))
    assert back.meta == ex1_data.meta
    np.testing.assert_array_equal(back.theta_true, ex1_data.theta_true)
    header = [ln for ln in p.read_text().splitlines() if not ln.startswith("#")][0]
    assert header == "t,u,y,x1,x2,w1,w2,v,vstar"


def test_load_missing_column(tmp_path, ex1_data):
    p = tmp_path / "ds.csv"
    save_dataset(ex1_data, p)
    lines = p.read_text().splitlines()
    out = []
    for ln in lines:
        if ln.startswith("#"):
            out.append(ln)
        else:
            out.append(",".join(ln.split(",")[:-1]))
    p.write_text("\n".join(out) + "\n")
    with pytest.raises(DatasetFormatError, match="vstar"):
        load_dataset(p)


def test_load_reports_line_number(tmp_path, ex1_data):
    p = tmp_path / "ds.csv"
    save_dataset(ex1_data, p)
    lines = p.read_text().splitlines()
    n_meta = sum(ln.startswith("#") for ln in lines)
    bad = n_meta + 3  # header is line n_meta+1, so this is the second data row
    lines[bad - 1] = lines[bad - 1].replace(",", ",abc,", 1)
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetFormatError, match=f"line {bad}:"):
        load_dataset(p)


def test_load_rejects_empty(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("# n=1\nt,u,y,x1,w1,v,vstar\n")
    with pytest.raises(DatasetFormatError, match="L=0"):
        load_dataset(p)


def test_dataset_without_truth(tmp_path):
    p = tmp_path / "plain.csv"
    p.write_text("t,u,y,x1,w1,v,vstar\n0,1.0,2.0,0,0,0,0\n1,0.5,1.0,0,0,0,0\n")
    ds = load_dataset(p)
    assert ds.model is None and ds.theta_true is None and ds.L == 2


def test_dataset_shape_validation():
    with pytest.raises(ValueError):
        Dataset(np.ones(3), np.ones(2), np.zeros((1, 3)), np.zeros((1, 3)), np.zeros(3), np.zeros(3))
