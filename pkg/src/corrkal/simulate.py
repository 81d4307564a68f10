"""Ground-truth simulation and the dataset file format."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
import io
import json
from pathlib import Path

import numpy as np

from corrkal import _backend
from corrkal.model import ObserverCanonicalModel, model_to_theta
from corrkal.noise import JointCovariance, NoiseSpec, UMode, build_joint_covariance, sample_correlated


class DatasetFormatError(ValueError):
    """A dataset file could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class Dataset:
    """Input/output record with the true states and noises.

    ``x_true`` and ``w`` have shape ``(n, L)``; ``u``, ``y``, ``v`` and
    ``v_star`` have shape ``(L,)``.
    """

    u: np.ndarray
    y: np.ndarray
    x_true: np.ndarray
    w: np.ndarray
    v: np.ndarray
    v_star: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        L = self.u.shape[0]
        if L < 1:
            raise ValueError("dataset must contain at least one sample")
        for name in ("y", "v", "v_star"):
            if getattr(self, name).shape != (L,):
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected ({L},)")
        for name in ("x_true", "w"):
            arr = getattr(self, name)
            if arr.ndim != 2 or arr.shape[1] != L:
                raise ValueError(f"{name} has shape {arr.shape}, expected (n, {L})")

    @property
    def L(self) -> int:
        return self.u.shape[0]

    @property
    def n(self) -> int:
        return self.x_true.shape[0]

    @property
    def model(self) -> ObserverCanonicalModel | None:
        if "f" not in self.meta:
            return None
        m = self.meta
        return ObserverCanonicalModel(m["f"], m["g"], m["d"], m.get("j", []))

    @property
    def theta_true(self) -> np.ndarray | None:
        model = self.model
        return None if model is None else model_to_theta(model)


def colored_noise(v, j) -> np.ndarray:
    """``v*(t) = v(t) + sum_i J_i v(t-i)`` with zero pre-history."""
    v = np.asarray(v, dtype=float)
    out = v.copy()
    for i, ji in enumerate(np.asarray(j, dtype=float).reshape(-1), start=1):
        out[i:] += ji * v[:-i] if i < v.size else 0.0
    return out


def simulate_with_noise(model: ObserverCanonicalModel, u, w, v, meta=None) -> Dataset:
    """Propagate the model from ``x(0) = 0`` driven by given noise sequences."""
    u = np.ascontiguousarray(u, dtype=float).reshape(-1)
    w = np.ascontiguousarray(w, dtype=float).reshape(model.n, -1)
    v = np.ascontiguousarray(v, dtype=float).reshape(-1)
    if not (u.size == v.size == w.shape[1]):
        raise ValueError("u, w and v must have the same length")
    x = _backend.propagate_states(
        np.ascontiguousarray(model.f), np.ascontiguousarray(model.g), u, w
    )
    v_star = colored_noise(v, model.j)
    y = x[0] + model.d * u + v_star
    info = {"f": model.f.tolist(), "g": model.g.tolist(), "d": model.d, "j": model.j.tolist()}
    info.update(meta or {})
    return Dataset(u=u, y=y, x_true=x, w=w, v=v, v_star=v_star, meta=info)


def simulate(
    model: ObserverCanonicalModel,
    noise,
    u,
    seed: int,
    mode=UMode.EQUICORRELATED,
) -> Dataset:
    """Simulate the model under correlated Gaussian noise.

    ``noise`` is a :class:`NoiseSpec` (assembled and PSD-checked here) or a
    ready :class:`JointCovariance`.
    """
    if isinstance(noise, NoiseSpec):
        joint = build_joint_covariance(noise, mode)
        meta = {"q_diag": list(noise.q_diag), "r": noise.r, "rho": noise.rho, "u_mode": UMode(mode).value}
    elif isinstance(noise, JointCovariance):
        joint = noise
        meta = {"U": joint.U.tolist(), "u_mode": joint.mode.value}
    else:
        raise TypeError("noise must be a NoiseSpec or JointCovariance")
    if joint.n != model.n:
        raise ValueError(f"noise has {joint.n} process channels, model has n={model.n}")
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.size < 1:
        raise ValueError("input length must be >= 1")
    w, v = sample_correlated(joint.U, u.size, seed)
    meta["seed"] = int(seed)
    return simulate_with_noise(model, u, w, v, meta)


# ---------------------------------------------------------------------------
# CSV persistence


def _columns(n: int) -> list[str]:
    return ["t", "u", "y"] + [f"x{i}" for i in range(1, n + 1)] + [f"w{i}" for i in range(1, n + 1)] + ["v", "vstar"]


def save_dataset(ds: Dataset, path) -> None:
    """Write ``t,u,y,x1..xn,w1..wn,v,vstar`` with ``# key=value`` metadata lines.

    Floats are written with ``repr`` so a reload is bit-exact; metadata values
    are JSON.
    """
    buf = io.StringIO()
    buf.write(f"# n={json.dumps(ds.n)}\n")
    for key in sorted(ds.meta):
        if key == "n":
            continue
        buf.write(f"# {key}={json.dumps(ds.meta[key])}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_columns(ds.n))
    for t in range(ds.L):
        row = [t, repr(float(ds.u[t])), repr(float(ds.y[t]))]
        row += [repr(float(a)) for a in ds.x_true[:, t]]
        row += [repr(float(a)) for a in ds.w[:, t]]
        row += [repr(float(ds.v[t])), repr(float(ds.v_star[t]))]
        writer.writerow(row)
    Path(path).write_text(buf.getvalue())


def load_dataset(path) -> Dataset:
    meta: dict = {}
    header = None
    rows = []
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                if header is not None:
                    raise DatasetFormatError("metadata line after the header", lineno)
                key, sep, value = line[1:].strip().partition("=")
                if not sep:
                    raise DatasetFormatError(f"metadata line is not key=value: {line!r}", lineno)
                try:
                    meta[key.strip()] = json.loads(value)
                except json.JSONDecodeError as exc:
                    raise DatasetFormatError(f"bad metadata value for {key.strip()!r}: {exc}", lineno)
                continue
            fields = next(csv.reader([line]))
            if header is None:
                header = [c.strip() for c in fields]
                n = _infer_n(header, meta, lineno)
                expected = _columns(n)
                missing = [c for c in expected if c not in header]
                if missing:
                    raise DatasetFormatError(f"missing column(s): {', '.join(missing)}", lineno)
                index = [header.index(c) for c in expected]
                continue
            if len(fields) != len(header):
                raise DatasetFormatError(
                    f"expected {len(header)} fields, found {len(fields)}", lineno
                )
            try:
                rows.append([float(fields[i]) for i in index])
            except ValueError as exc:
                raise DatasetFormatError(f"non-numeric value: {exc}", lineno)
    if header is None:
        raise DatasetFormatError(f"{path}: no header row")
    if not rows:
        raise DatasetFormatError(f"{path}: dataset has no samples (L=0)")
    data = np.array(rows).T
    n = (data.shape[0] - 5) // 2
    meta.pop("n", None)
    return Dataset(
        u=data[1].copy(),
        y=data[2].copy(),
        x_true=data[3 : 3 + n].copy(),
        w=data[3 + n : 3 + 2 * n].copy(),
        v=data[3 + 2 * n].copy(),
        v_star=data[4 + 2 * n].copy(),
        meta=meta,
    )


def _infer_n(header, meta, lineno) -> int:
    if "n" in meta:
        n = meta["n"]
        if not isinstance(n, int) or n < 1:
            raise DatasetFormatError(f"metadata n must be a positive integer, got {n!r}", lineno)
        return n
    n = sum(1 for c in header if c.startswith("x") and c[1:].isdigit())
    if n < 1:
        raise DatasetFormatError("missing column(s): x1", lineno)
    return n
