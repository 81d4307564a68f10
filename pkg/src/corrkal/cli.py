"""Command-line experiment harness.

Subcommands: ``simulate``, ``identify``, ``compare``, ``sweep``, ``analyze``.
Every output file is a pure function of the configuration and seeds.
"""
from __future__ import annotations

import argparse
from concurrent.futures import ProcessPoolExecutor
import json
import os
from pathlib import Path
import sys

import numpy as np

from corrkal.analysis import (
    delta_theta,
    measurement_covariance_theory,
    rmse_state,
    state_noise_cross_cov,
    write_csv,
)
from corrkal.config import ConfigError, ExperimentConfig, load_config, preset
from corrkal.noise import CovarianceError
from corrkal.rgels import ALGORITHMS, DivergenceError, JointResult, NoiseModel, run_joint
from corrkal.simulate import Dataset, DatasetFormatError, load_dataset, save_dataset, simulate

RUN_INFO = "run_info.json"


class CliError(RuntimeError):
    pass


def _num(x) -> str:
    """Compact label for directory names, e.g. 0.5 -> '0.5', -0.5 -> 'm0.5'."""
    s = repr(float(x))
    return s.replace("-", "m")


def param_names(n: int, n_j: int) -> list[str]:
    return [f"f{i}" for i in range(1, n + 1)] + [f"g{i}" for i in range(1, n + 1)] + ["d"] + [
        f"J{i}" for i in range(1, n_j + 1)
    ]


def run_dir_name(cfg: ExperimentConfig, algorithm: str, rho: float, seed: int) -> str:
    return f"{cfg.name}_{algorithm}_rho{_num(rho)}_seed{seed}"


# ---------------------------------------------------------------------------
# building blocks shared by the subcommands


def make_dataset(cfg: ExperimentConfig, rho: float, seed: int) -> Dataset:
    ds = simulate(cfg.model, cfg.noise_spec(rho), cfg.input(seed), seed, cfg.u_mode)
    ds.meta["preset"] = cfg.name
    ds.meta["input_seed"] = int(seed)
    ds.meta["levels"] = list(cfg.levels)
    return ds


def assumed_noise(cfg: ExperimentConfig, ds: Dataset, rho: float | None):
    """Noise statistics handed to the estimator: the generating ones unless overridden."""
    meta = ds.meta
    q = meta.get("q_diag", list(cfg.q_diag))
    r = meta.get("r", cfg.r)
    mode = meta.get("u_mode", cfg.u_mode)
    if rho is None:
        rho = meta.get("rho", cfg.rho)
    c = cfg.with_overrides(q_diag=tuple(q), r=float(r), u_mode=mode)
    return c.joint_covariance(rho), float(rho), mode


def write_run(out_dir: Path, cfg: ExperimentConfig, ds: Dataset, res: JointResult, rho: float, seed, mode: str, joint):
    out_dir.mkdir(parents=True, exist_ok=True)
    ns, L = res.theta_trace.shape
    n = res.T.size
    names = param_names(n, ns - 2 * n - 1)
    has_truth = res.delta_trace is not None
    header = ["t"] + [f"theta_{i}" for i in range(1, ns + 1)] + (["delta_theta"] if has_truth else [])
    rows = (
        [t] + list(res.theta_trace[:, t]) + ([res.delta_trace[t]] if has_truth else []) for t in range(L)
    )
    write_csv(out_dir / "theta_trace.csv", header, rows)
    write_csv(
        out_dir / "states.csv",
        ["t"] + [f"xhat{i}" for i in range(1, n + 1)],
        ([t] + list(res.x_hat[:, t]) for t in range(L)),
    )
    prov = [res.algorithm, rho, seed, mode]
    summary_header = ["algorithm", "rho", "seed", "u_mode", "t"] + names + (["delta_pct"] if has_truth else [])
    summary = prov + [L] + [f"{v:.4f}" for v in res.theta_final]
    if has_truth:
        summary.append(f"{100 * res.delta_final:.4f}")
    write_csv(out_dir / "summary.csv", summary_header, [summary])
    info = {
        "preset": cfg.name,
        "algorithm": res.algorithm,
        "rho": rho,
        "seed": seed,
        "u_mode": mode,
        "L": L,
        "n": n,
        "Q": joint.Q.tolist(),
        "R": joint.R,
        "S": joint.S.tolist(),
        "T": res.T.tolist(),
        "Q_bar": (joint.Q - np.outer(res.T, joint.S)).tolist(),
        "P_pred": np.asarray(res.P_pred).tolist(),
        "theta_final": res.theta_final.tolist(),
        "delta_pct": 100 * res.delta_final if has_truth else None,
        "rmse_x1": rmse_state(res.x_hat[0], ds.x_true[0]) if has_truth else None,
    }
    (out_dir / RUN_INFO).write_text(json.dumps(info, indent=1, sort_keys=True) + "\n")
    return summary_header, summary


def identify_one(cfg: ExperimentConfig, ds: Dataset, algorithm: str, rho: float | None, out_root: Path):
    if ds.n != cfg.model.n:
        raise CliError(f"dataset has n={ds.n} states but the configuration has n={cfg.model.n}")
    joint, rho, mode = assumed_noise(cfg, ds, rho)
    seed = ds.meta.get("seed", "na")
    res = run_joint(ds, joint, cfg.options(algorithm), n=cfg.model.n, n_j=cfg.model.n_j)
    out_dir = out_root / run_dir_name(cfg, algorithm, rho, seed)
    return res, write_run(out_dir, cfg, ds, res, rho, seed, mode, joint)


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(cfg: ExperimentConfig, out: Path, rho: float, seed: int) -> Path:
    ds = make_dataset(cfg, rho, seed)
    if out.suffix != ".csv":
        out = out / f"{cfg.name}_rho{_num(rho)}_seed{seed}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    joint = cfg.joint_covariance(rho)
    emp = np.cov(np.vstack([ds.w, ds.v]), bias=True)
    print(f"wrote {out} (L={ds.L}, n={ds.n}, rho={rho}, seed={seed})")
    print("configured U:\n" + np.array2string(joint.U, precision=4))
    print("empirical  U:\n" + np.array2string(emp, precision=4))
    return out


def cmd_identify(cfg: ExperimentConfig, dataset_path: Path, out: Path, algorithm: str, rho: float | None):
    ds = load_dataset(dataset_path)
    res, (header, row) = identify_one(cfg, ds, algorithm, rho, out)
    print(",".join(header))
    print(",".join(str(v) for v in row))
    return res


def cmd_compare(cfg: ExperimentConfig, dataset_path: Path, out: Path, rho: float | None):
    ds = load_dataset(dataset_path)
    rows = []
    header = None
    for algorithm in ALGORITHMS:
        _, (header, row) = identify_one(cfg, ds, algorithm, rho, out)
        rows.append(row)
    write_csv(out / "compare.csv", header, rows)
    print(",".join(header))
    for row in rows:
        print(",".join(str(v) for v in row))
    return rows


def _sweep_job(args):
    cfg, algorithm, rho, seed, out = args
    ds = make_dataset(cfg, rho, seed)
    try:
        res, (header, row) = identify_one(cfg, ds, algorithm, rho, Path(out))
    except DivergenceError as exc:
        return algorithm, rho, seed, None, None, str(exc)
    return algorithm, rho, seed, (header, row), res.delta_trace, None


def cmd_sweep(cfg: ExperimentConfig, out: Path, algorithms, jobs: int = 1):
    cfg.check_rho_list()
    combos = [(cfg, a, float(r), int(s), str(out)) for a in algorithms for r in cfg.rho_list for s in cfg.seed_list]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_job, combos))
    else:
        results = [_sweep_job(c) for c in combos]
    results.sort(key=lambda r: (ALGORITHMS.index(r[0]), r[1], r[2]))
    header = None
    rows, failures = [], []
    traces: dict = {}
    for algorithm, rho, seed, payload, delta, err in results:
        if err is not None:
            failures.append([algorithm, rho, seed, cfg.u_mode, err])
            continue
        header, row = payload
        rows.append(row)
        traces.setdefault((algorithm, rho), []).append(delta)
    if header is not None:
        write_csv(out / "runs.csv", header, rows)
    if failures:
        write_csv(out / "failures.csv", ["algorithm", "rho", "seed", "u_mode", "error"], failures)
    agg = []
    for (algorithm, rho), ds_ in traces.items():
        finals = np.array([100 * d[-1] for d in ds_])
        agg.append([algorithm, rho, cfg.u_mode, len(finals), f"{finals.mean():.4f}", f"{finals.std():.4f}"])
    write_csv(out / "aggregate.csv", ["algorithm", "rho", "u_mode", "n_seeds", "mean_delta_pct", "std_delta_pct"], agg)
    trace_rows = []
    for (algorithm, rho), ds_ in traces.items():
        mean = np.mean(ds_, axis=0)
        trace_rows += [[algorithm, rho, cfg.u_mode, t, mean[t]] for t in range(mean.size)]
    write_csv(out / "delta_traces.csv", ["algorithm", "rho", "u_mode", "t", "delta"], trace_rows)
    for row in agg:
        print(",".join(str(v) for v in row))
    if failures:
        print(f"{len(failures)} run(s) hit the divergence guard; see failures.csv", file=sys.stderr)
    return agg


def _collect_runs(root: Path) -> list[dict]:
    if not root.exists():
        raise CliError(f"run directory not found: {root}")
    paths = sorted(root.glob(RUN_INFO)) + sorted(root.glob(f"*/{RUN_INFO}"))
    if not paths:
        raise CliError(f"no runs found under {root} (expected {RUN_INFO} in run directories)")
    infos = []
    for p in paths:
        try:
            infos.append(json.loads(p.read_text()))
        except json.JSONDecodeError as exc:
            raise CliError(f"{p}: unreadable run info ({exc})") from None
    infos.sort(key=lambda d: (ALGORITHMS.index(d["algorithm"]), d["rho"], str(d["seed"])))
    return infos


def cmd_analyze(run_root: Path, out: Path | None = None):
    infos = _collect_runs(run_root)
    out = out or run_root
    prov = ["algorithm", "seed", "u_mode"]
    traces, meas, rmse = [], [], []
    for d in infos:
        P = np.asarray(d["P_pred"])
        S = np.asarray(d["S"])
        tag = [d["algorithm"], d["seed"], d["u_mode"]]
        traces.append(tag + [d["rho"], state_noise_cross_cov(S, P).trace])
        mc = measurement_covariance_theory(P[0, 0], np.asarray(d["Q_bar"])[0, 0], d["R"], S[0])
        meas.append(tag + [d["rho"], S[0], mc.P, mc.P0])
        if d.get("rmse_x1") is not None:
            rmse.append(tag + [d["rho"], d["rmse_x1"]])
    write_csv(out / "cross_cov_trace.csv", prov + ["rho", "trace"], traces)
    write_csv(out / "measurement_cov.csv", prov + ["rho", "S", "P", "P0"], meas)
    if rmse:
        write_csv(out / "state_rmse.csv", prov + ["rho", "rmse"], rmse)
    for row in traces:
        print(",".join(str(v) for v in row))
    return traces


# ---------------------------------------------------------------------------
# entry point


def _default_seed() -> int | None:
    raw = os.environ.get("CORRKAL_SEED")
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise CliError(f"CORRKAL_SEED must be an integer, got {raw!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment config file")
    common.add_argument("--preset", choices=["ex1", "ex2"], help="built-in experiment (default ex1)")
    common.add_argument("--seed", type=int, help="random seed (default: $CORRKAL_SEED or config)")
    common.add_argument("--rho", type=float, help="correlation coefficient")
    common.add_argument("--algo", choices=list(ALGORITHMS) + ["all"], help="estimator")
    common.add_argument("--out", type=Path, help="output file or directory")
    common.add_argument("--jobs", type=int, default=1, help="parallel worker processes for sweep")

    parser = argparse.ArgumentParser(prog="corrkal", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate a dataset")
    p = sub.add_parser("identify", parents=[common], help="run the joint estimator on a dataset")
    p.add_argument("dataset", type=Path)
    p = sub.add_parser("compare", parents=[common], help="run all estimators on one dataset")
    p.add_argument("dataset", type=Path)
    sub.add_parser("sweep", parents=[common], help="simulate and identify over rho_list x seed_list")
    p = sub.add_parser("analyze", parents=[common], help="theoretical tables from stored runs")
    p.add_argument("run_dir", type=Path)
    return parser


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else preset(args.preset or "ex1")
    if args.config and args.preset:
        raise CliError("--config and --preset are mutually exclusive")
    seed = args.seed if args.seed is not None else _default_seed()
    over = {"seed": seed, "rho": args.rho}
    if args.algo and args.algo != "all":
        over["algorithm"] = args.algo
    return cfg.with_overrides(**over)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
        if args.command == "simulate":
            cmd_simulate(cfg, args.out or Path("."), cfg.rho, cfg.seed)
        elif args.command == "identify":
            cmd_identify(cfg, args.dataset, args.out or Path("runs"), cfg.algorithm, args.rho)
        elif args.command == "compare":
            cmd_compare(cfg, args.dataset, args.out or Path("runs"), args.rho)
        elif args.command == "sweep":
            algos = list(ALGORITHMS) if args.algo == "all" else [cfg.algorithm]
            if args.rho is not None:
                cfg = cfg.with_overrides(rho_list=(args.rho,))
            if args.seed is not None:
                cfg = cfg.with_overrides(seed_list=(args.seed,))
            if args.jobs < 1:
                raise CliError("--jobs must be >= 1")
            cmd_sweep(cfg, args.out or Path("sweep"), algos, args.jobs)
        elif args.command == "analyze":
            cmd_analyze(args.run_dir, args.out)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (CliError, ConfigError, CovarianceError, DatasetFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
