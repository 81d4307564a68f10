"""Experiment configuration: INI sections with JSON-style bracketed arrays.

Example::

    [model]
    n = 2
    n_J = 2
    f = [-0.05, -0.35]
    g = [2.0, 3.0]
    d = 1.3
    J = [0.0505, 0.0139]

    [noise]
    q_diag = [0.0049, 0.0001]
    r = 0.64
    rho = 0.5
    u_mode = equicorrelated

    [run]
    L = 5000
    algorithm = kf-cn-rgels
    rho_list = [0, 0.5, 0.6, 0.9]
    seed_list = [1, 2, 3, 4, 5]
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
import json
from pathlib import Path

import numpy as np

from corrkal.model import ObserverCanonicalModel
from corrkal.noise import CovarianceError, NoiseSpec, UMode, admissible_rho_range, build_joint_covariance, prbs_input
from corrkal.rgels import ALGORITHMS, RgelsOptions


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    model: ObserverCanonicalModel
    q_diag: tuple
    r: float
    rho: float = 0.0
    u_mode: str = UMode.EQUICORRELATED.value
    L: int = 5000
    levels: tuple = (-0.8, 1.0)
    p0: float = 1e6
    theta0: tuple | None = None
    algorithm: str = "kf-cn-rgels"
    rho_list: tuple = (0.0,)
    seed_list: tuple = (1,)
    seed: int = 1
    gamma_mode: str = "decorrelated"
    stabilize: str = "reflect"
    use_vstar_variance: bool = False
    name: str = "custom"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        n = self.model.n
        if len(self.q_diag) != n:
            raise ConfigError(f"noise.q_diag has {len(self.q_diag)} entries but the model has n={n}")
        if self.L < 1:
            raise ConfigError(f"run.L must be >= 1, got {self.L}")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"run.algorithm must be one of {', '.join(ALGORITHMS)}, got {self.algorithm!r}")
        try:
            UMode(self.u_mode)
        except ValueError:
            raise ConfigError(f"noise.u_mode must be one of {[m.value for m in UMode]}, got {self.u_mode!r}")
        if not self.rho_list:
            raise ConfigError("run.rho_list must not be empty")
        if not self.seed_list:
            raise ConfigError("run.seed_list must not be empty")
        if self.theta0 is not None and len(self.theta0) != self.model.n_params:
            raise ConfigError(f"run.theta0 has {len(self.theta0)} entries, expected {self.model.n_params}")
        if not self.p0 > 0:
            raise ConfigError("run.p0 must be positive")
        try:
            NoiseSpec(self.q_diag, self.r, self.rho)
            RgelsOptions(algorithm=self.algorithm, gamma_mode=self.gamma_mode, stabilize=self.stabilize)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def theta_true(self) -> np.ndarray:
        m = self.model
        return np.concatenate([m.f, m.g, [m.d], m.j])

    def noise_spec(self, rho: float | None = None) -> NoiseSpec:
        return NoiseSpec(self.q_diag, self.r, self.rho if rho is None else rho)

    def joint_covariance(self, rho: float | None = None):
        return build_joint_covariance(self.noise_spec(rho), self.u_mode)

    def input(self, seed: int | None = None) -> np.ndarray:
        return prbs_input(self.L, self.levels, self.seed if seed is None else seed)

    def options(self, algorithm: str | None = None, backend: str | None = None) -> RgelsOptions:
        return RgelsOptions(
            algorithm=algorithm or self.algorithm,
            p0=self.p0,
            theta0=None if self.theta0 is None else np.asarray(self.theta0, dtype=float),
            stabilize=self.stabilize,
            gamma_mode=self.gamma_mode,
            use_vstar_variance=self.use_vstar_variance,
            backend=backend,
        )

    def check_rho_list(self) -> None:
        """Reject every inadmissible correlation coefficient before any run starts."""
        bad = []
        for rho in self.rho_list:
            try:
                self.joint_covariance(rho)
            except (CovarianceError, ValueError):
                bad.append(rho)
        if bad:
            lo, hi = admissible_rho_range(self.q_diag, self.r, self.u_mode)
            raise ConfigError(
                f"rho value(s) {bad} give a non-PSD noise covariance in {self.u_mode} mode; "
                f"admissible range is [{lo:.6g}, {hi:.6g}]"
            )

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)

    def to_ini(self) -> str:
        m = self.model
        cp = configparser.ConfigParser()
        cp.optionxform = str
        cp["model"] = {
            "n": str(m.n),
            "n_J": str(m.n_j),
            "f": _dump(m.f),
            "g": _dump(m.g),
            "d": repr(m.d),
            "J": _dump(m.j),
        }
        cp["noise"] = {"q_diag": _dump(self.q_diag), "r": repr(self.r), "rho": repr(self.rho), "u_mode": self.u_mode}
        run = {
            "name": self.name,
            "L": str(self.L),
            "levels": _dump(self.levels),
            "p0": repr(self.p0),
            "algorithm": self.algorithm,
            "rho_list": _dump(self.rho_list),
            "seed_list": json.dumps(list(self.seed_list)),
            "seed": str(self.seed),
            "gamma_mode": self.gamma_mode,
            "stabilize": self.stabilize,
            "use_vstar_variance": str(self.use_vstar_variance).lower(),
        }
        if self.theta0 is not None:
            run["theta0"] = _dump(self.theta0)
        cp["run"] = run
        out = []
        for sec in cp.sections():
            out.append(f"[{sec}]")
            out += [f"{k} = {v}" for k, v in cp[sec].items()]
            out.append("")
        return "\n".join(out)


def _dump(values) -> str:
    return "[" + ", ".join(repr(float(v)) for v in values) + "]"


PRESETS = {
    "ex1": dict(
        model=dict(f=[-0.05, -0.35], g=[2.0, 3.0], d=1.3, j=[0.0505, 0.0139]),
        q_diag=(0.0049, 0.0001),
        r=0.64,
        rho=0.5,
        rho_list=(0.0, 0.5, 0.6, 0.9),
    ),
    "ex2": dict(
        model=dict(f=[-0.11, -0.15], g=[1.9, 1.6], d=1.9, j=[0.1069, -0.0143]),
        q_diag=(0.6, 0.4),
        r=1.6,
        rho=0.5,
        rho_list=(-0.5, 0.0, 0.3, 0.5, 0.75),
    ),
}


def preset(name: str) -> ExperimentConfig:
    try:
        p = dict(PRESETS[name])
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}") from None
    model = ObserverCanonicalModel(**p.pop("model"))
    return ExperimentConfig(model=model, seed_list=(1, 2, 3, 4, 5), name=name, **p)


def _array(cp, section, key, default=None):
    if not cp.has_option(section, key):
        if default is None:
            raise ConfigError(f"missing required key [{section}] {key}")
        return default
    raw = cp.get(section, key)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as a bracketed list ({exc.msg})") from None
    if not isinstance(value, list):
        value = [value]
    try:
        return tuple(float(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"[{section}] {key}: entries must be numbers, got {raw!r}") from None


def _scalar(cp, section, key, conv, default=None):
    if not cp.has_option(section, key):
        if default is None:
            raise ConfigError(f"missing required key [{section}] {key}")
        return default
    raw = cp.get(section, key)
    try:
        return conv(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: invalid value {raw!r}") from None


def _bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(raw)


def load_config(path) -> ExperimentConfig:
    """Read a config file; a ``[run] preset = ex1`` line starts from that preset."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        cp.read_string(path.read_text(), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    for sec in cp.sections():
        if sec not in ("model", "noise", "run"):
            raise ConfigError(f"{path}: unknown section [{sec}]")
    base = None
    if cp.has_option("run", "preset"):
        base = preset(cp.get("run", "preset"))

    def arr(section, key, fallback):
        return _array(cp, section, key, fallback)

    def sc(section, key, conv, fallback):
        return _scalar(cp, section, key, conv, fallback)

    bm = base.model if base is not None else None
    j_keys = [k for k in ("J", "j") if cp.has_option("model", k)]
    if len(j_keys) > 1:
        raise ConfigError("[model] give the MA coefficients once, as J")
    try:
        model = ObserverCanonicalModel(
            arr("model", "f", tuple(bm.f) if bm else None),
            arr("model", "g", tuple(bm.g) if bm else None),
            sc("model", "d", float, bm.d if bm else None),
            _array(cp, "model", j_keys[0]) if j_keys else (tuple(bm.j) if bm else ()),
        )
    except ValueError as exc:
        raise ConfigError(f"[model] {exc}") from None
    for key, actual, what in (("n", model.n, "f and g"), ("n_J", model.n_j, "J")):
        if cp.has_option("model", key):
            declared = _scalar(cp, "model", key, int)
            if declared != actual:
                raise ConfigError(f"[model] {key} = {declared} but {what} imply {actual}")

    def pick(section, key, conv, attr, default):
        fallback = getattr(base, attr) if base is not None else default
        if conv == "array":
            return arr(section, key, fallback)
        return sc(section, key, conv, fallback)

    theta0 = _array(cp, "run", "theta0") if cp.has_option("run", "theta0") else (base.theta0 if base else None)
    seed_list = pick("run", "seed_list", "array", "seed_list", (1,))
    try:
        return ExperimentConfig(
            model=model,
            q_diag=pick("noise", "q_diag", "array", "q_diag", None),
            r=pick("noise", "r", float, "r", None),
            rho=pick("noise", "rho", float, "rho", 0.0),
            u_mode=pick("noise", "u_mode", str, "u_mode", UMode.EQUICORRELATED.value),
            L=pick("run", "L", int, "L", 5000),
            levels=pick("run", "levels", "array", "levels", (-0.8, 1.0)),
            p0=pick("run", "p0", float, "p0", 1e6),
            theta0=theta0,
            algorithm=pick("run", "algorithm", str, "algorithm", "kf-cn-rgels"),
            rho_list=pick("run", "rho_list", "array", "rho_list", (0.0,)),
            seed_list=tuple(int(s) for s in seed_list),
            seed=pick("run", "seed", int, "seed", 1),
            gamma_mode=pick("run", "gamma_mode", str, "gamma_mode", "decorrelated"),
            stabilize=pick("run", "stabilize", str, "stabilize", "reflect"),
            use_vstar_variance=pick("run", "use_vstar_variance", _bool, "use_vstar_variance", False),
            name=pick("run", "name", str, "name", path.stem),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
