"""Serialization: sample and grid CSVs, model JSON, YAML run configs."""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np
import yaml

from .model import Intervention, ModelError, SampleSet, SpaceTimeDomain, StructuralModel, op
from .solvers import GriddedField
from .trainer import TrainConfig

ENV_OUT = "CAUSAL_PINN_OUT"
ENV_THREADS = "CAUSAL_PINN_THREADS"


class FormatError(ValueError):
    """A file could not be parsed; ``line`` is 1-based when known."""

    def __init__(self, msg, path=None, line=None):
        where = f"{path}:{line}: " if path is not None and line is not None else (f"{path}: " if path else "")
        super().__init__(where + msg)
        self.path = path
        self.line = line


def _fmt(v) -> str:
    return repr(float(v))


def _coord_names(dim: int) -> list:
    return ["x", "t"] if dim == 1 else ["x", "y", "t"]


def _read_rows(path, expect_header):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError("empty file", path, 1)
    header = [h.strip() for h in rows[0]]
    if header not in expect_header:
        raise FormatError(f"bad header {header}; expected one of {expect_header}", path, 1)
    out = np.empty((len(rows) - 1, len(header)))
    for k, row in enumerate(rows[1:]):
        line = k + 2
        if len(row) != len(header):
            raise FormatError(f"expected {len(header)} fields, found {len(row)}", path, line)
        try:
            out[k] = [float(v) for v in row]
        except ValueError as exc:
            raise FormatError(f"not a number ({exc})", path, line) from None
        if not np.all(np.isfinite(out[k])):
            raise FormatError("non-finite value", path, line)
    return header, out


# -- samples ------------------------------------------------------------------

def write_samples(samples: SampleSet, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_coord_names(samples.dim) + ["u"])
        for row in samples.points:
            w.writerow([_fmt(v) for v in row])


def read_samples(path, colloc_axes=None, colloc_shape=None, noise_sigma: float = 0.0) -> SampleSet:
    """Read ``x[,y],t,u`` rows.

    Without explicit collocation axes a uniform grid spanning the sample
    bounding box is used (``colloc_shape`` points per axis, default 21).
    """
    header, pts = _read_rows(path, [["x", "t", "u"], ["x", "y", "t", "u"]])
    if pts.shape[0] == 0:
        raise FormatError("no sample rows", path, 2)
    if colloc_axes is None:
        n_in = pts.shape[1] - 1
        shape = tuple(colloc_shape or (21,) * n_in)
        colloc_axes = tuple(np.linspace(pts[:, k].min(), pts[:, k].max(), shape[k]) for k in range(n_in))
    return SampleSet(pts, tuple(colloc_axes), noise_sigma)


# -- gridded fields -----------------------------------------------------------

def write_grid(gf: GriddedField, path) -> None:
    """One row per node: coordinates, time, value (``ij`` order)."""
    from .operators import grid_points
    pts = grid_points(gf.axes)
    vals = gf.values.ravel()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_coord_names(gf.domain.dim) + ["u"])
        for p, v in zip(pts, vals):
            w.writerow([_fmt(c) for c in p] + [_fmt(v)])


def read_grid(path) -> GriddedField:
    header, rows = _read_rows(path, [["x", "t", "u"], ["x", "y", "t", "u"]])
    dim = len(header) - 2
    axes = [np.unique(rows[:, k]) for k in range(dim + 1)]
    shape = tuple(a.size for a in axes)
    if int(np.prod(shape)) != rows.shape[0]:
        raise FormatError(f"{rows.shape[0]} rows do not form a tensor grid of shape {shape}", path)
    idx = tuple(np.searchsorted(axes[k], rows[:, k]) for k in range(dim + 1))
    vals = np.full(shape, np.nan)
    vals[idx] = rows[:, -1]
    if np.isnan(vals).any():
        raise FormatError("grid has missing nodes", path)
    dom = SpaceTimeDomain(dim, tuple(a[0] for a in axes[:-1]), tuple(a[-1] for a in axes[:-1]),
                          float(axes[-1][-1]), tuple(a.size for a in axes[:-1]), axes[-1].size)
    for k, a in enumerate(dom.axes()):
        if not np.allclose(a, axes[k], rtol=0, atol=1e-12 * max(1.0, abs(a[-1]))):
            raise FormatError(f"axis {k} is not uniformly spaced from its first node", path)
    return GriddedField(dom, vals)


# -- models and domains ----------------------------------------------------------

def model_to_dict(model: StructuralModel) -> dict:
    return {"library": model.names, "alpha": [float(a) for a in model.alpha]}


def model_from_dict(d) -> StructuralModel:
    """Accept ``{"library": [...], "alpha": [...]}`` or a plain ``{name: coef}`` map."""
    if not isinstance(d, dict):
        raise ModelError("model must be a mapping")
    if "library" in d:
        lib = [op(n) for n in d["library"]]
        alpha = d.get("alpha", [1.0] * len(lib))
        return StructuralModel(tuple(lib), tuple(float(a) for a in alpha))
    return StructuralModel.from_dict({k: float(v) for k, v in d.items()})


def domain_to_dict(dom: SpaceTimeDomain) -> dict:
    return {"dim": dom.dim, "x_lo": list(dom.x_lo), "x_hi": list(dom.x_hi), "t_end": dom.t_end,
            "nx": list(dom.nx), "nt": dom.nt}


def domain_from_dict(d: dict) -> SpaceTimeDomain:
    return SpaceTimeDomain(int(d["dim"]), tuple(d["x_lo"]), tuple(d["x_hi"]), float(d["t_end"]),
                           tuple(int(n) for n in d["nx"]), int(d["nt"]))


def intervention_from_dict(d: dict) -> Intervention:
    action = d.get("action", "zero")
    if action == "replace":
        return Intervention.swap(d["target"], op(d["replacement"]))
    return Intervention(d["target"], action, float(d.get("factor", 1.0)))


def write_json(obj, path) -> None:
    from .diagnostics import _jsonable
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2)
        fh.write("\n")


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(exc.msg, path, exc.lineno) from None


# -- run configuration -------------------------------------------------------------

@dataclass
class RunConfig:
    """Everything a discovery run needs besides the data itself."""

    benchmark: Optional[str] = None
    dataset: Optional[str] = None
    library: Optional[list] = None
    train: TrainConfig = field(default_factory=TrainConfig)
    eps: float = 0.05
    eta: float = 0.01
    seeds: list = field(default_factory=lambda: [0])
    out: str = "runs"

    def __post_init__(self):
        if (self.benchmark is None) == (self.dataset is None):
            raise ModelError("exactly one of benchmark and dataset must be set")
        if not self.seeds:
            raise ModelError("seed list is empty")

    def as_dict(self) -> dict:
        return {"benchmark": self.benchmark, "dataset": self.dataset, "library": self.library,
                "train": self.train.as_dict(), "eps": self.eps, "eta": self.eta,
                "seeds": list(self.seeds), "out": self.out}


def deep_merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if v is None:
            continue
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config_file(path) -> dict:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise FormatError(str(getattr(exc, "problem", exc)), path, mark.line + 1 if mark else None) from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise FormatError("top level must be a mapping", path, 1)
    return data


def build_run_config(file_cfg: dict, overrides: dict) -> RunConfig:
    """Merge a parsed config file with flag overrides (flags win)."""
    d = deep_merge(file_cfg, overrides)
    known = {f.name for f in fields(TrainConfig)}
    train_d = dict(d.get("train") or {})
    bad = set(train_d) - known
    if bad:
        raise ModelError(f"unknown train settings: {sorted(bad)}")
    top = {k: d[k] for k in ("benchmark", "dataset", "library", "eps", "eta", "seeds", "out") if k in d}
    # precedence for the output directory: flag, then environment, then file
    if os.environ.get(ENV_OUT) and overrides.get("out") is None:
        top["out"] = os.environ[ENV_OUT]
    if isinstance(top.get("seeds"), (int, str)):
        top["seeds"] = parse_seeds(str(top["seeds"]))
    return RunConfig(train=TrainConfig(**train_d), **top)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.as_dict(), sort_keys=False)


def parse_seeds(text: str) -> list:
    """``"1-5"``, ``"1,3,7"`` or a mix of both."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if not out:
        raise ValueError(f"no seeds in {text!r}")
    return out


def default_workers() -> int:
    env = os.environ.get(ENV_THREADS)
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)
