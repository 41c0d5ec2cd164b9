"""Command-line experiment runner.

Every run reads an optional YAML (or JSON) config, validates it against the
schema of its experiment kind, and writes ``report.json``, ``manifest.json``
and any trajectory CSVs into the output directory. Failures write
``error.json``: exit code 2 for configuration errors, 3 for errors raised by
the numerical modules.

Config layout::

    kind: books-spiral        # optional when implied by the subcommand
    seed: 0
    out: runs/spiral          # --out takes precedence
    params:
      epsilon: 0.1
      zeta: -1.0
"""

from __future__ import annotations

import argparse
import itertools
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
import yaml

from . import __version__
from .errors import SensitivityLabError

KINDS = (
    "linear-classify", "linear-simulate", "rotary", "fpcs-sensitivity",
    "books-solve", "books-spiral", "books-pwl", "spread", "discretize",
)


class ConfigError(Exception):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


@dataclass
class ExperimentConfig:
    kind: str
    params: dict
    out_dir: Path
    seed: int = 0

    def manifest(self):
        return {
            "kind": self.kind,
            "params": self.params,
            "seed": self.seed,
            "version": __version__,
        }


# ---------------------------------------------------------------------------
# validation helpers
# ---------------------------------------------------------------------------


def _num(path, v, lo=None, hi=None, lo_open=False, integer=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigError(path, "expected an integer")
    v = int(v) if integer else float(v)
    if not np.isfinite(v):
        raise ConfigError(path, "must be finite")
    if lo is not None and (v <= lo if lo_open else v < lo):
        raise ConfigError(path, f"must be {'>' if lo_open else '>='} {lo}")
    if hi is not None and v > hi:
        raise ConfigError(path, f"must be <= {hi}")
    return v


def _vec(path, v, n=None):
    try:
        arr = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(path, "expected a list of numbers") from None
    if arr.ndim != 1 or (n is not None and arr.size != n) or not np.all(np.isfinite(arr)):
        raise ConfigError(path, f"expected a finite vector{'' if n is None else f' of length {n}'}")
    return arr.tolist()


def _mat(path, v):
    try:
        arr = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(path, "expected a square matrix") from None
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or not np.all(np.isfinite(arr)):
        raise ConfigError(path, "expected a finite square matrix")
    return arr.tolist()


def _choice(path, v, options):
    if v not in options:
        raise ConfigError(path, f"must be one of {list(options)}")
    return v


def _num_list(path, v, **kw):
    if not isinstance(v, (list, tuple)) or not v:
        raise ConfigError(path, "expected a non-empty list")
    return [_num(f"{path}[{i}]", x, **kw) for i, x in enumerate(v)]


PERTURBATIONS = ("zero", "constant", "sinusoidal", "piecewise_constant", "random_pwc", "rotary")


def _perturbation_spec(path, spec, n):
    if not isinstance(spec, dict):
        raise ConfigError(path, "expected a mapping with a 'type' key")
    t = _choice(f"{path}.type", spec.get("type"), PERTURBATIONS)
    out = {"type": t}
    if t == "constant":
        out["value"] = _vec(f"{path}.value", spec.get("value"), n)
    elif t == "sinusoidal":
        out["amplitude"] = _vec(f"{path}.amplitude", spec.get("amplitude", [1.0] * n), n)
        out["frequency"] = _vec(f"{path}.frequency", spec.get("frequency", [1.0] * n), n)
        out["phase"] = _vec(f"{path}.phase", spec.get("phase", [0.0] * n), n)
    elif t == "piecewise_constant":
        out["times"] = _vec(f"{path}.times", spec.get("times"))
        vals = spec.get("values")
        if not isinstance(vals, list) or len(vals) != len(out["times"]):
            raise ConfigError(f"{path}.values", "need one value per jump time")
        out["values"] = [_vec(f"{path}.values[{i}]", v, n) for i, v in enumerate(vals)]
    elif t == "random_pwc":
        out["scale"] = _num(f"{path}.scale", spec.get("scale", 1.0), lo=0, lo_open=True)
        out["jumps"] = _num(f"{path}.jumps", spec.get("jumps", 10), lo=1, integer=True)
    elif t == "rotary" and n != 2:
        raise ConfigError(path, "rotary perturbation is two-dimensional")
    return out


def build_perturbation(spec, n, T, rng):
    from .core import PerturbationSignal
    from .fpcs import random_piecewise_constant
    from .linear import rotary_perturbation

    t = spec["type"]
    if t == "zero":
        return PerturbationSignal.zero(n)
    if t == "constant":
        return PerturbationSignal.constant(spec["value"])
    if t == "sinusoidal":
        return PerturbationSignal.sinusoidal(spec["amplitude"], spec["frequency"], spec["phase"])
    if t == "piecewise_constant":
        return PerturbationSignal.piecewise_constant(spec["times"], spec["values"])
    if t == "random_pwc":
        return random_piecewise_constant(rng, n, T, spec["scale"], spec["jumps"])
    return rotary_perturbation()


def _field_spec(path, spec):
    """Either ``{A: matrix}`` or ``{pwl: {dimension, pieces}}``."""
    from .fpcs import PwlConvexFunction

    if not isinstance(spec, dict):
        raise ConfigError(path, "expected a mapping with key 'A' or 'pwl'")
    if "A" in spec:
        return {"A": _mat(f"{path}.A", spec["A"])}
    if "pwl" in spec:
        try:
            PwlConvexFunction.from_dict(spec["pwl"])
        except SensitivityLabError as exc:
            raise ConfigError(f"{path}.pwl", str(exc)) from None
        return {"pwl": spec["pwl"]}
    raise ConfigError(path, "expected key 'A' or 'pwl'")


def _build_field(spec):
    from .core import VectorField
    from .fpcs import PwlConvexFunction, fpcs_field

    if "A" in spec:
        return VectorField.linear(spec["A"])
    return fpcs_field(PwlConvexFunction.from_dict(spec["pwl"]))


def _field_dim(spec):
    return len(spec["A"]) if "A" in spec else int(spec["pwl"]["dimension"])


# ---------------------------------------------------------------------------
# per-kind schemas: validate(params) -> resolved params
# ---------------------------------------------------------------------------


def _get(params, key, default):
    return params[key] if key in params else default


def _v_classify(p):
    return {
        "A": _mat("params.A", _get(p, "A", [[0.0, -1.0], [1.0, 0.0]])),
        "tol": _num("params.tol", _get(p, "tol", 1e-9), lo=0, lo_open=True),
        "witness_bound": _num("params.witness_bound", _get(p, "witness_bound", 10.0),
                              lo=0, lo_open=True),
    }


def _v_simulate(p):
    A = _mat("params.A", _get(p, "A", [[-1.0, 0.0], [0.0, -2.0]]))
    n = len(A)
    return {
        "A": A,
        "x0": _vec("params.x0", _get(p, "x0", [1.0] + [0.0] * (n - 1)), n),
        "T": _num("params.T", _get(p, "T", 10.0), lo=0),
        "dt": _num("params.dt", _get(p, "dt", 1e-2), lo=0, lo_open=True),
        "method": _choice("params.method", _get(p, "method", "closed_form"),
                          ("closed_form", "euler", "both")),
        "perturbation": _perturbation_spec(
            "params.perturbation", _get(p, "perturbation", {"type": "sinusoidal"}), n),
    }


def _v_rotary(p):
    return {
        "T": _num("params.T", _get(p, "T", 100.0), lo=0, lo_open=True),
        "step": _num("params.step", _get(p, "step", 0.01), lo=0, lo_open=True),
        "closed_form": bool(_get(p, "closed_form", True)),
    }


def _v_fpcs(p):
    from .fpcs import PwlConvexFunction

    pwl = _get(p, "pwl", PwlConvexFunction.l1_norm(2).to_dict())
    try:
        phi = PwlConvexFunction.from_dict(pwl)
    except SensitivityLabError as exc:
        raise ConfigError("params.pwl", str(exc)) from None
    n = phi.dimension
    return {
        "pwl": phi.to_dict(),
        "x0": _vec("params.x0", _get(p, "x0", [1.0, 0.5][:n] + [0.0] * max(0, n - 2)), n),
        "T": _num("params.T", _get(p, "T", 1.5), lo=0, lo_open=True),
        "dt": _num("params.dt", _get(p, "dt", 1e-3), lo=0, lo_open=True),
        "deltas": _num_list("params.deltas", _get(p, "deltas", [1.0, 0.1, 0.01]),
                            lo=0, lo_open=True),
        "runs": _num("params.runs", _get(p, "runs", 20), lo=1, integer=True),
        "jumps": _num("params.jumps", _get(p, "jumps", 10), lo=1, integer=True),
        "dt_per_delta": _num("params.dt_per_delta", _get(p, "dt_per_delta", 0.01),
                             lo=0, lo_open=True),
    }


def _v_books_solve(p):
    pts = _get(p, "points", [[0.0, 0.0, -5.0], [0.2, 1.0, -5.0]])
    if not isinstance(pts, list) or not pts:
        raise ConfigError("params.points", "expected a non-empty list of [r, phi, z]")
    pts = [_vec(f"params.points[{i}]", q, 3) for i, q in enumerate(pts)]
    for i, (r, _, z) in enumerate(pts):
        if r < 0 or r > 0.25 or z > -1:
            raise ConfigError(f"params.points[{i}]", "point must satisfy 0 <= r <= 1/4, z <= -1")
    return {
        "points": pts,
        "tol": _num("params.tol", _get(p, "tol", 1e-12), lo=0, lo_open=True),
        "gradient": bool(_get(p, "gradient", False)),
    }


def _v_spiral(p):
    eps = _get(p, "epsilon", 0.1)
    eps_list = eps if isinstance(eps, list) else [eps]
    return {
        "epsilon": _num_list("params.epsilon", eps_list, lo=0, lo_open=True, hi=0.5),
        "zeta": _num("params.zeta", _get(p, "zeta", -1.0), hi=-1.0),
        "dt": _num("params.dt", _get(p, "dt", 1e-3), lo=0, lo_open=True),
        "paths": bool(_get(p, "paths", True)),
    }


def _v_pwl(p):
    z_lo = _num("params.z_lo", _get(p, "z_lo", -40.0))
    z_hi = _num("params.z_hi", _get(p, "z_hi", -38.0), hi=-1.0)
    if not z_lo < z_hi:
        raise ConfigError("params.z_lo", "must be below z_hi")
    return {
        "z_lo": z_lo,
        "z_hi": z_hi,
        "grid_h": _num_list("params.grid_h", _get(p, "grid_h", [0.02, 0.01]),
                            lo=0, lo_open=True),
        "n_points": _num("params.n_points", _get(p, "n_points", 20000), lo=1, integer=True),
        "r_sample": _num("params.r_sample", _get(p, "r_sample", 0.2), lo=0, hi=0.25),
    }


def _v_spread(p):
    fld = _field_spec("params.field", _get(p, "field", {"A": [[-1.0, 0.0], [0.0, -2.0]]}))
    n = _field_dim(fld)
    out = {
        "field": fld,
        "epsilon": _num("params.epsilon", _get(p, "epsilon", 0.01), lo=0),
        "probe_count": _num("params.probe_count", _get(p, "probe_count", 32), lo=1, integer=True),
        "x0": _vec("params.x0", _get(p, "x0", [1.0] * n), n),
        "T": _num("params.T", _get(p, "T", 5.0), lo=0, lo_open=True),
        "dt": _num("params.dt", _get(p, "dt", 1e-2), lo=0, lo_open=True),
        "runs": _num("params.runs", _get(p, "runs", 10), lo=1, integer=True),
        "scale": _num("params.scale", _get(p, "scale", 0.1), lo=0),
        "C": None,
    }
    if "C" in p and p["C"] is not None:
        out["C"] = _num("params.C", p["C"], lo=0, lo_open=True)
    return out


def _v_discretize(p):
    fld = _field_spec("params.field", _get(p, "field", {"A": [[-0.5, 0.0], [0.0, -0.25]]}))
    n = _field_dim(fld)
    out = {
        "field": fld,
        "z0": _vec("params.z0", _get(p, "z0", [1.0] * n), n),
        "K": _num("params.K", _get(p, "K", 50), lo=0, integer=True),
        "scale": _num("params.scale", _get(p, "scale", 0.1), lo=0),
        "C": None,
    }
    if "C" in p and p["C"] is not None:
        out["C"] = _num("params.C", p["C"], lo=0, lo_open=True)
    return out


# ---------------------------------------------------------------------------
# runners: run(params, seed, out_dir) -> report dict
# ---------------------------------------------------------------------------


def _run_classify(p, seed, out):
    from .errors import NotApplicableError, UnsupportedError
    from .linear import LinearSystem, classify_sof, non_sof_witness, sensitivity_constant

    sys_ = LinearSystem(p["A"])
    rep = classify_sof(sys_, p["tol"])
    report = {"sof": rep.to_dict()}
    if rep.is_sof:
        try:
            report["sensitivity_constant"] = sensitivity_constant(sys_, p["tol"]).to_dict()
        except UnsupportedError as exc:
            report["sensitivity_constant"] = {"unsupported": str(exc)}
    else:
        try:
            report["witness"] = non_sof_witness(sys_, p["witness_bound"], tol=p["tol"]).to_dict()
        except NotApplicableError as exc:  # pragma: no cover - guarded by is_sof
            report["witness"] = {"error": str(exc)}
    return report


def _run_simulate(p, seed, out):
    from .core import time_grid, sensitivity_ratio, integrate_perturbed, PerturbationSignal
    from .linear import LinearSystem, closed_form_trajectory

    rng = np.random.default_rng(seed)
    sys_ = LinearSystem(p["A"])
    n = sys_.dimension
    U = build_perturbation(p["perturbation"], n, p["T"], rng)
    Z = PerturbationSignal.zero(n)
    report = {}
    if p["method"] in ("closed_form", "both"):
        times = time_grid(p["T"], p["dt"])
        pert = closed_form_trajectory(sys_, p["x0"], U, times)
        base = closed_form_trajectory(sys_, p["x0"], Z, times)
        pert.to_csv(out / "closed_form_perturbed.csv")
        base.to_csv(out / "closed_form_unperturbed.csv")
        report["closed_form"] = sensitivity_ratio(pert, base, U).to_dict()
    if p["method"] in ("euler", "both"):
        fld = sys_.field()
        pe = integrate_perturbed(fld, p["x0"], U, p["T"], p["dt"])
        be = integrate_perturbed(fld, p["x0"], Z, p["T"], p["dt"])
        pe.to_csv(out / "euler_perturbed.csv")
        be.to_csv(out / "euler_unperturbed.csv")
        report["euler"] = sensitivity_ratio(pe, be, U).to_dict()
    if p["method"] == "both":
        scale = max(1.0, float(np.max(np.abs(pert.states))))
        report["relative_disagreement"] = float(np.max(np.abs(pert.states - pe.states))) / scale
    return report


def _run_rotary(p, seed, out):
    from .core import sensitivity_ratio, PerturbationSignal
    from .linear import (ROTARY_A, LinearSystem, closed_form_trajectory,
                         rotary_counterexample)

    base, pert, U = rotary_counterexample(p["T"], p["step"])
    report = {"analytic": sensitivity_ratio(pert, base, U).to_dict()}
    if p["closed_form"]:
        sys_ = LinearSystem(ROTARY_A)
        cp = closed_form_trajectory(sys_, [1.0, 0.0], U, pert.times)
        cb = closed_form_trajectory(sys_, [1.0, 0.0], PerturbationSignal.zero(2), pert.times)
        rep = sensitivity_ratio(cp, cb, U)
        report["closed_form"] = rep.to_dict()
        report["final_deviation"] = float(np.linalg.norm(cp.states[-1] - cb.states[-1]))
        cp.to_csv(out / "perturbed.csv")
        cb.to_csv(out / "unperturbed.csv")
    else:
        pert.to_csv(out / "perturbed.csv")
        base.to_csv(out / "unperturbed.csv")
    report["ratio"] = report.get("closed_form", report["analytic"])["ratio"]
    return report


def _run_fpcs(p, seed, out):
    from .fpcs import PwlConvexFunction, empirical_sensitivity_constant, random_piecewise_constant

    phi = PwlConvexFunction.from_dict(p["pwl"])
    rng = np.random.default_rng(seed)
    levels = []
    for d in p["deltas"]:
        fam = [random_piecewise_constant(rng, phi.dimension, p["T"], d, p["jumps"])
               for _ in range(p["runs"])]
        dt = min(p["dt"], p["dt_per_delta"] * d)
        c, reps = empirical_sensitivity_constant(phi, fam, p["x0"], p["T"], dt)
        levels.append({"delta": d, "dt": dt, "max_ratio": c,
                       "runs": [r.to_dict() for r in reps]})
    ratios = [lv["max_ratio"] for lv in levels]
    return {"levels": levels, "max_over_min": max(ratios) / min(ratios)}


def _run_books_solve(p, seed, out):
    from .books import CylPoint, grad_f, h_cyl, solve_f

    rows = []
    for r, phi, z in p["points"]:
        q = CylPoint(r, phi, z)
        f = solve_f(q, p["tol"])
        row = {"r": r, "phi": phi, "z": z, "f": f, "residual": float(h_cyl(f, r, phi, z))}
        if p["gradient"]:
            row["grad"] = grad_f(q).tolist()
        rows.append(row)
    return {"points": rows}


def _run_spiral(p, seed, out):
    from .books import spiral_construction

    certs = []
    for e in p["epsilon"]:
        c = spiral_construction(e, p["zeta"], p["dt"])
        certs.append(c)
        tag = format(e, "g")
        c.perturbed_trajectory().to_csv(out / f"spiral_eps{tag}.csv")
    report = {"certificates": [c.to_dict(include_paths=p["paths"]) for c in certs]}
    if len(certs) > 1:
        report["growth_factors"] = [certs[i + 1].ratio / certs[i].ratio
                                    for i in range(len(certs) - 1)]
    report["passed"] = all(c.passed for c in certs)
    return report


def _run_pwl(p, seed, out):
    from .books import pwl_convergence_study

    rep = pwl_convergence_study(p["z_lo"], p["z_hi"], tuple(p["grid_h"]), p["n_points"],
                                seed, p["r_sample"])
    return rep.to_dict()


def _run_spread(p, seed, out):
    from .core import PerturbationSignal, RandomSelector
    from .fpcs import random_piecewise_constant
    from .linear import LinearSystem, sensitivity_constant
    from .spread import SpreadField, check_spread_bound, deviation_pair, spread_integrate

    fld = _build_field(p["field"])
    n = fld.dimension
    C = p["C"]
    if C is None:
        if "A" not in p["field"]:
            raise ConfigError("params.C", "required for non-linear fields")
        C = sensitivity_constant(LinearSystem(p["field"]["A"])).value
    rng = np.random.default_rng(seed)
    sf = SpreadField(fld, p["epsilon"], p["probe_count"], seed)
    pairs = []
    for i in range(p["runs"]):
        if p["scale"] > 0:
            U = random_piecewise_constant(rng, n, p["T"], p["scale"])
        else:
            U = PerturbationSignal.zero(n)
        a = spread_integrate(sf, p["x0"], U, p["T"], p["dt"], RandomSelector(seed + 2 * i))
        b = spread_integrate(sf, p["x0"], PerturbationSignal.zero(n), p["T"], p["dt"],
                             RandomSelector(seed + 2 * i + 1))
        if i == 0:
            a.to_csv(out / "spread_perturbed_run0.csv")
        pairs.append(deviation_pair(a, b))
    chk = check_spread_bound(C, p["epsilon"], pairs)
    return {"C": C, "epsilon": p["epsilon"], "passed": chk.passed,
            "runs": [{"sup_deviation": d, "sup_perturbation": u, "bound": r}
                     for (d, u), r in zip(pairs, chk.rhs)]}


def _run_discretize(p, seed, out):
    from .core import PerturbationSignal, integrate_perturbed
    from .discrete import check_discrete_bound, discrete_trajectory, embed_continuous
    from .linear import LinearSystem, closed_form_trajectory, sensitivity_constant

    fld = _build_field(p["field"])
    n = fld.dimension
    rng = np.random.default_rng(seed)
    K = p["K"]
    V = p["scale"] * rng.uniform(-1.0, 1.0, size=(K + 1, n))
    d = discrete_trajectory(fld, p["z0"], V, K)
    d.to_csv(out / "discrete.csv")
    U, tr = embed_continuous(d)
    tr.to_csv(out / "embedding.csv")
    zscale = 1.0 + float(np.max(np.abs(d.states)))
    ints = tr.states[np.isin(tr.times, np.arange(K + 1))]
    report = {
        "embedding_error": float(np.max(np.linalg.norm(ints - d.states, axis=1))) / zscale,
        "sup_U": float(np.max(np.linalg.norm(tr.u_values(), axis=1))),
        "sup_V_plus_mu": float(np.max(np.linalg.norm(d.perturbation, axis=1)))
        + (float(np.max(np.linalg.norm(d.drifts, axis=1))) if K else 0.0),
    }
    C = p["C"]
    if C is None and "A" in p["field"]:
        C = sensitivity_constant(LinearSystem(p["field"]["A"])).value
    if C is not None and K > 0:
        times = np.linspace(0.0, K, 8 * K + 1)
        times[::8] = np.arange(K + 1)
        if "A" in p["field"]:
            base = closed_form_trajectory(LinearSystem(p["field"]["A"]), d.states[0],
                                          PerturbationSignal.zero(n), times)
        else:
            base = integrate_perturbed(fld, d.states[0], PerturbationSignal.zero(n), K,
                                       None, times=times)
        chk = check_discrete_bound(C, base, d)
        report["C"] = C
        report["bound"] = chk.to_dict()
    return report


@dataclass
class _Kind:
    validate: Callable[[dict], dict]
    run: Callable[[dict, int, Path], dict]


REGISTRY = {
    "linear-classify": _Kind(_v_classify, _run_classify),
    "linear-simulate": _Kind(_v_simulate, _run_simulate),
    "rotary": _Kind(_v_rotary, _run_rotary),
    "fpcs-sensitivity": _Kind(_v_fpcs, _run_fpcs),
    "books-solve": _Kind(_v_books_solve, _run_books_solve),
    "books-spiral": _Kind(_v_spiral, _run_spiral),
    "books-pwl": _Kind(_v_pwl, _run_pwl),
    "spread": _Kind(_v_spread, _run_spread),
    "discretize": _Kind(_v_discretize, _run_discretize),
}


# ---------------------------------------------------------------------------
# config loading and execution
# ---------------------------------------------------------------------------


def load_config_file(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"not valid YAML/JSON: {exc}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be a mapping")
    return data


def _parse_overrides(items):
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError("--param", f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = yaml.safe_load(v)
        except yaml.YAMLError:
            raise ConfigError(f"params.{k}", "value is not valid YAML") from None
    return out


def resolve_config(kind, raw: dict, out=None, seed=None, overrides=None) -> ExperimentConfig:
    """Validate a raw config mapping for ``kind``."""
    unknown = set(raw) - {"kind", "seed", "out", "params"}
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown top-level key")
    cfg_kind = raw.get("kind", kind)
    if cfg_kind not in REGISTRY:
        raise ConfigError("kind", f"unknown experiment kind {cfg_kind!r}")
    if kind is not None and cfg_kind != kind:
        raise ConfigError("kind", f"config is for {cfg_kind!r}, subcommand runs {kind!r}")
    params = raw.get("params", {}) or {}
    if not isinstance(params, dict):
        raise ConfigError("params", "expected a mapping")
    params = {**params, **(overrides or {})}
    s = seed if seed is not None else raw.get("seed", 0)
    s = _num("seed", s, lo=0, integer=True)
    if s >= 2**64:
        raise ConfigError("seed", "must fit in 64 bits")
    out_dir = out if out is not None else raw.get("out", f"runs/{cfg_kind}")
    resolved = REGISTRY[cfg_kind].validate(params)
    return ExperimentConfig(cfg_kind, resolved, Path(out_dir), int(s))


def _dump(path, obj):
    path.write_text(json.dumps(obj, indent=2, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def run_experiment(config: ExperimentConfig) -> int:
    """Run one experiment; returns the process exit status."""
    out = config.out_dir
    out.mkdir(parents=True, exist_ok=True)
    _dump(out / "manifest.json", config.manifest())
    try:
        report = REGISTRY[config.kind].run(config.params, config.seed, out)
    except ConfigError as exc:
        _dump(out / "error.json", {"error": "config", "field": exc.path, "message": exc.message})
        return 2
    except SensitivityLabError as exc:
        _dump(out / "error.json", {"error": type(exc).__name__, "message": str(exc)})
        return 3
    _dump(out / "report.json", {"kind": config.kind, **report})
    return 0


def _write_config_error(out, exc: ConfigError):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _dump(out / "error.json", {"error": "config", "field": exc.path, "message": exc.message})


def _sweep_point(args):
    kind, raw, out, seed = args
    try:
        cfg = resolve_config(kind, raw, out=out, seed=seed)
    except ConfigError as exc:
        _write_config_error(out, exc)
        return 2
    return run_experiment(cfg)


def run_sweep(raw: dict, out: Path, seed=None, jobs: int = 1) -> int:
    """Run a parameter grid over a base config and merge the reports.

    Config::

        base: {kind: books-spiral, params: {zeta: -1.0}}
        grid: {epsilon: [0.1, 0.05, 0.025]}
        jobs: 1
    """
    base = raw.get("base")
    grid = raw.get("grid", {})
    if not isinstance(base, dict) or "kind" not in base:
        raise ConfigError("base", "expected a mapping with a 'kind'")
    if not isinstance(grid, dict) or not grid:
        raise ConfigError("grid", "expected a non-empty mapping of parameter lists")
    for k, v in grid.items():
        if not isinstance(v, list) or not v:
            raise ConfigError(f"grid.{k}", "expected a non-empty list")
    jobs = _num("jobs", raw.get("jobs", jobs), lo=1, integer=True)
    keys = list(grid)
    points = []
    for i, combo in enumerate(itertools.product(*(grid[k] for k in keys))):
        params = {**(base.get("params") or {}), **dict(zip(keys, combo))}
        point_raw = {**{k: v for k, v in base.items() if k != "out"}, "params": params}
        points.append((base["kind"], point_raw, out / f"point_{i:03d}", seed))
    # validate everything before running anything
    for kind, pr, _, s in points:
        resolve_config(kind, pr, seed=s)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            codes = list(ex.map(_sweep_point, points))
    else:
        codes = [_sweep_point(pt) for pt in points]
    merged = []
    for (kind, pr, pdir, _), code in zip(points, codes):
        entry = {"params": pr["params"], "exit_code": code, "dir": pdir.name}
        rp = pdir / ("report.json" if code == 0 else "error.json")
        if rp.exists():
            entry["report" if code == 0 else "error"] = json.loads(rp.read_text())
        merged.append(entry)
    out.mkdir(parents=True, exist_ok=True)
    _dump(out / "sweep.json", {"kind": base["kind"], "points": merged})
    _dump(out / "manifest.json", {"sweep": raw, "seed": seed, "version": __version__})
    return max(codes) if codes else 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

SUBCOMMANDS = {
    "classify": "linear-classify",
    "simulate": "linear-simulate",
    "rotary": "rotary",
    "fpcs": "fpcs-sensitivity",
    "spread": "spread",
    "discretize": "discretize",
}
BOOKS_ACTIONS = {"solve": "books-solve", "grad": "books-solve",
                 "spiral": "books-spiral", "pwl": "books-pwl"}


def _common(p):
    p.add_argument("--config", help="YAML or JSON config file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="random seed (unsigned 64-bit)")
    p.add_argument("--param", action="append", metavar="KEY=VALUE",
                   help="override one parameter (value parsed as YAML)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cumsens",
        description="Experiments on sensitivity to cumulative perturbations.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, kind in SUBCOMMANDS.items():
        _common(sub.add_parser(name, help=f"run a {kind} experiment"))
    books = sub.add_parser("books", help="rotating-books experiments")
    bsub = books.add_subparsers(dest="action", required=True)
    for action in BOOKS_ACTIONS:
        _common(bsub.add_parser(action))
    sw = sub.add_parser("sweep", help="run a parameter grid and merge reports")
    sw.add_argument("--config", required=True)
    sw.add_argument("--out")
    sw.add_argument("--seed", type=int)
    sw.add_argument("--jobs", type=int, default=1)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out_default = Path(args.out) if args.out else None
    try:
        raw = load_config_file(args.config) if args.config else {}
        if args.command == "sweep":
            out = Path(args.out or raw.get("out", "runs/sweep"))
            out_default = out
            return run_sweep(raw, out, args.seed, args.jobs)
        if args.command == "books":
            kind = BOOKS_ACTIONS[args.action]
        else:
            kind = SUBCOMMANDS[args.command]
        out_default = Path(args.out or raw.get("out", f"runs/{kind}"))
        overrides = _parse_overrides(args.param)
        if args.command == "books" and args.action == "grad":
            overrides.setdefault("gradient", True)
        cfg = resolve_config(kind, raw, args.out, args.seed, overrides)
    except ConfigError as exc:
        _write_config_error(out_default or Path("."), exc)
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    code = run_experiment(cfg)
    if code == 0:
        print(f"wrote {cfg.out_dir / 'report.json'}")
    else:
        print(f"failed, see {cfg.out_dir / 'error.json'}", file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
