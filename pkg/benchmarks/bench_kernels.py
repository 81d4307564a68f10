"""Compare the compiled kernels with the pure-Python fallback.

Usage::

    python benchmarks/bench_kernels.py [--L 5000] [--repeat 3]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from corrkal import _fallback
from corrkal.config import preset
from corrkal.noise import LFSR_ORDER, LFSR_TAPS
from corrkal.rgels import run_joint
from corrkal.simulate import simulate


def _best(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--L", type=int, default=5000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    from corrkal import _kernels

    cfg = preset("ex1").with_overrides(L=args.L)
    joint = cfg.joint_covariance(0.5)
    ds = simulate(cfg.model, joint, cfg.input(1), 1)
    taps = np.asarray(LFSR_TAPS, dtype=np.int64)
    f, g = np.asarray(cfg.model.f), np.asarray(cfg.model.g)

    cases = {
        "lfsr_bits": (
            lambda: _kernels.lfsr_bits(args.L, 1, LFSR_ORDER, taps),
            lambda: _fallback.lfsr_bits(args.L, 1, LFSR_ORDER, taps),
        ),
        "propagate_states": (
            lambda: _kernels.propagate_states(f, g, ds.u, ds.w),
            lambda: _fallback.propagate_states(f, g, ds.u, ds.w),
        ),
    }
    for algo in ("kf-cn-rgels", "skf", "aug-kf"):
        cases[f"joint_loop[{algo}]"] = (
            lambda a=algo: run_joint(ds, joint, cfg.options(a, backend="native")),
            lambda a=algo: run_joint(ds, joint, cfg.options(a, backend="python")),
        )

    print(f"L={args.L}, best of {args.repeat}")
    print(f"{'kernel':26s} {'native ms':>10s} {'python ms':>10s} {'speedup':>8s}")
    for name, (native, python) in cases.items():
        tn, tp = _best(native, args.repeat), _best(python, args.repeat)
        print(f"{name:26s} {tn * 1e3:10.2f} {tp * 1e3:10.1f} {tp / tn:7.0f}x")


if __name__ == "__main__":
    main()
