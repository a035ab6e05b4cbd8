"""Scenario-driven command line: ``shockkin <command> --scenario file.yaml``.

Commands: ``simulate``, ``kinetic``, ``validate``, ``htransform``, ``oracle``.
Every run writes CSV artifacts and ``manifest.txt`` into the output directory.
Exit status: 0 on success, 1 when a verdict fails, 2 on a configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import math
import os
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__
from .drift_flow import ConstantDrift, FunctionDrift, InitialField, ZeroDrift, solve_drift
from .errors import ConfigError, ShockKinError, UnknownNameError
from .htransform import (Window, build_h_family, compute_h_series, conditioned_sampler_check, exponential_h,
                         kernel_rates, reweighted_residual, survival_probability)
from .kinetic import (KineticSolver, TailKernel, UniformKernel, ZeroKernel, kinetic_residual, row_conservation,
                      tabulate_kernel, velocity_matrix)
from .model import MODELS, make_model
from .pdmp import make_rng, profile_rates, sample_pdmp_path, sample_y_process
from .shockline import FUNDAMENTAL, OPEN_RIGHT, ShockConfiguration, evolve, reconstruct
from .validate import (HeadlineSetup, compare_particle_vs_fv, identity_residual_suite, pipeline_b,
                       run_pipeline_a, ensemble_comparison)

OUT_ENV = "SHOCKKIN_OUT"
CLASSES = ("pdmp-f", "fundamental-g")
KERNELS = {"uniform": UniformKernel, "tail": TailKernel, "zero": ZeroKernel}
DRIFTS = ("zero", "constant", "initial")
TOP_KEYS = {"name", "class", "model", "domain", "drift", "kernel", "initial", "labels", "grid", "ensemble",
            "probes", "htransform", "oracle"}


# -- scenario parsing ---------------------------------------------------------------

def _line_map(node, path=(), out=None):
    """Map key paths to 1-based source lines using the composed YAML tree."""
    out = {} if out is None else out
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            _line_map(v, path + (k.value,), out)
            out[path + (k.value,)] = k.start_mark.line + 1
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_map(v, path + (i,), out)
    return out


@dataclass
class Scenario:
    """Validated scenario; ``raw`` keeps the parsed mapping and ``lines`` the source lines."""

    name: str
    klass: str
    model_spec: dict
    domain: dict
    drift_spec: dict
    kernel_spec: dict
    initial: dict
    labels: dict
    grid: dict
    ensemble: dict
    probes: dict
    htransform: dict
    oracle: dict
    sha256: str
    lines: dict = field(default_factory=dict)

    def line(self, *path):
        while path and path not in self.lines:
            path = path[:-1]
        return self.lines.get(path)

    def error(self, message, *path, cls=ConfigError):
        return cls(message, line=self.line(*path))

    @property
    def seed(self) -> int:
        return int(self.ensemble.get("seed", 0))

    def model(self):
        spec = dict(self.model_spec)
        name = spec.pop("name", None)
        if name not in MODELS:
            raise self.error(f"unknown model {name!r}; known: {sorted(MODELS)}", "model", "name", cls=UnknownNameError)
        try:
            return make_model(name, **spec)
        except TypeError as exc:
            raise self.error(f"bad model parameters: {exc}", "model") from None

    def kernel(self, lo: float, hi: float):
        spec = dict(self.kernel_spec)
        fam = spec.pop("family", None)
        if fam not in KERNELS:
            raise self.error(f"unknown kernel family {fam!r}; known: {sorted(KERNELS)}", "kernel", "family",
                             cls=UnknownNameError)
        try:
            return KERNELS[fam](spec.pop("lo", lo), spec.pop("hi", hi), **spec)
        except TypeError as exc:
            raise self.error(f"bad kernel parameters: {exc}", "kernel") from None

    def initial_field(self):
        spec = dict(self.drift_spec)
        kind = spec.pop("kind", "zero")
        if kind == "zero":
            return None
        if kind == "constant":
            return InitialField(c0=float(spec.get("value", 0.0)))
        return InitialField(**{k: float(v) for k, v in spec.items()})

    def drift(self, model):
        spec = dict(self.drift_spec)
        kind = spec.pop("kind", "zero")
        if kind == "zero":
            return ZeroDrift()
        if kind == "constant" and "value" in spec and model.xt_independent:
            val = float(spec["value"])
            return ConstantDrift(val) if val != 0 else ZeroDrift()
        b0 = self.initial_field()
        if b0.is_zero:
            return ZeroDrift()
        d = self.domain
        xs = np.linspace(d["a_minus"], d["a_plus"], 9)
        grid = solve_drift(model, b0, d["t0"], d["T"], xs, exact_steps=int(self.grid.get("drift_steps", 32)))
        return FunctionDrift(grid.exact)


def _require(raw, lines, key, kind, path=()):
    if key not in raw:
        raise ConfigError(f"missing required key {'.'.join(map(str, path + (key,)))!r}", line=lines.get(path))
    val = raw[key]
    if not isinstance(val, kind):
        raise ConfigError(f"key {'.'.join(map(str, path + (key,)))!r} must be {kind.__name__}",
                          line=lines.get(path + (key,)))
    return val


def _number(section: dict, lines, path, key, default=None, positive=False, integer=False):
    if key not in section:
        if default is None:
            raise ConfigError(f"missing required key {'.'.join(path + (key,))!r}", line=lines.get(path))
        return default
    val = section[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{'.'.join(path + (key,))} must be a number", line=lines.get(path + (key,)))
    if integer and float(val) != int(val):
        raise ConfigError(f"{'.'.join(path + (key,))} must be an integer", line=lines.get(path + (key,)))
    if positive and val <= 0:
        raise ConfigError(f"{'.'.join(path + (key,))} must be positive", line=lines.get(path + (key,)))
    return int(val) if integer else float(val)


def parse_scenario(text: str) -> Scenario:
    try:
        node = yaml.compose(text)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {getattr(exc, 'problem', exc)}",
                          line=mark.line + 1 if mark is not None else None) from None
    if not isinstance(raw, dict):
        raise ConfigError("scenario must be a mapping", line=1)
    lines = _line_map(node)
    for k in raw:
        if k not in TOP_KEYS:
            raise ConfigError(f"unknown top-level key {k!r}", line=lines.get((k,)))
    klass = _require(raw, lines, "class", str)
    if klass not in CLASSES:
        raise UnknownNameError(f"unknown scenario class {klass!r}; known: {list(CLASSES)}", line=lines.get(("class",)))
    model = _require(raw, lines, "model", dict)
    _require(model, lines, "name", str, ("model",))
    dom = _require(raw, lines, "domain", dict)
    domain = {k: _number(dom, lines, ("domain",), k) for k in ("a_minus", "a_plus", "t0", "T")}
    if domain["a_plus"] <= domain["a_minus"]:
        raise ConfigError("domain.a_plus must exceed domain.a_minus", line=lines.get(("domain", "a_plus")))
    if domain["T"] <= domain["t0"]:
        raise ConfigError("domain.T must exceed domain.t0", line=lines.get(("domain", "T")))
    drift = raw.get("drift", {"kind": "zero"})
    if not isinstance(drift, dict) or drift.get("kind", "zero") not in DRIFTS:
        raise UnknownNameError(f"unknown drift kind {drift.get('kind') if isinstance(drift, dict) else drift!r}; "
                               f"known: {list(DRIFTS)}", line=lines.get(("drift", "kind"), lines.get(("drift",))))
    kernel = _require(raw, lines, "kernel", dict)
    fam = _require(kernel, lines, "family", str, ("kernel",))
    if fam not in KERNELS:
        raise UnknownNameError(f"unknown kernel family {fam!r}; known: {sorted(KERNELS)}",
                               line=lines.get(("kernel", "family")))
    ens = raw.get("ensemble", {})
    if "seed" not in ens:
        raise ConfigError("ensemble.seed is required (no wall-clock seeding)", line=lines.get(("ensemble",)))
    _number(ens, lines, ("ensemble",), "seed", integer=True)
    _number(ens, lines, ("ensemble",), "N", 1000, positive=True, integer=True)
    grid = raw.get("grid", {})
    for key, default, integer in (("n_rho", 101, True), ("nx", 1, True), ("dt", 1e-3, False),
                                  ("store_every", 10, True)):
        grid[key] = _number(grid, lines, ("grid",), key, default, positive=True, integer=integer)
    initial = raw.get("initial", {})
    labels = raw.get("labels", {})
    if klass == "pdmp-f":
        _number(initial, lines, ("initial",), "m0")
    else:
        _number(initial, lines, ("initial",), "y0")
        s = _number(initial, lines, ("initial",), "s")
        if s >= domain["t0"]:
            raise ConfigError("initial.s must precede domain.t0", line=lines.get(("initial", "s")))
        _number(labels, lines, ("labels",), "lo")
        _number(labels, lines, ("labels",), "hi")
    sha = hashlib.sha256(text.encode()).hexdigest()
    return Scenario(str(raw.get("name", "scenario")), klass, model, domain, drift, kernel, initial, labels, grid,
                    ens, raw.get("probes", {}), raw.get("htransform", {}), raw.get("oracle", {}), sha, lines)


def load_scenario(path) -> Scenario:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario: {exc}") from None
    return parse_scenario(text)


# -- artifacts ---------------------------------------------------------------------------

def write_csv(path: Path, header, rows) -> Path:
    """Decimal with 17 significant digits, comma separated, LF line endings."""
    arr = np.asarray(rows, float).reshape(-1, len(header))
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for r in arr:
            fh.write(",".join("%.17g" % v for v in r) + "\n")
    return path


def write_table(path: Path, rows: list[dict]) -> Path:
    """Mixed-type report rows; floats use the same 17-digit format."""
    keys = []
    for r in rows:
        keys += [k for k in r if k not in keys]

    def fmt(v):
        if isinstance(v, (bool, np.bool_)):
            return "true" if v else "false"
        if isinstance(v, (int, np.integer)):
            return str(int(v))
        if isinstance(v, (float, np.floating)):
            return "%.17g" % float(v)
        return "" if v is None else str(v).replace(",", ";")

    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(keys) + "\n")
        for r in rows:
            fh.write(",".join(fmt(r.get(k)) for k in keys) + "\n")
    return path


def write_manifest(out: Path, sc: Scenario, command: str, args, artifacts: list[Path], status: int) -> Path:
    lines = [f"command: {command}", f"scenario: {sc.name}", f"config_sha256: {sc.sha256}",
             f"seed: {args.seed if args.seed is not None else sc.seed}",
             f"resolution_scale: {args.resolution_scale:g}", f"workers: {args.workers}",
             f"exit_status: {status}", f"shockkin: {__version__}", f"python: {platform.python_version()}",
             f"numpy: {np.__version__}", f"scipy: {scipy.__version__}", f"pyyaml: {yaml.__version__}",
             "artifacts:"]
    for p in artifacts:
        lines.append(f"  {p.name}: sha256={hashlib.sha256(p.read_bytes()).hexdigest()}")
    path = out / "manifest.txt"
    path.write_text("\n".join(lines) + "\n")
    return path


# -- helpers -------------------------------------------------------------------------------

def _scaled(sc: Scenario, scale: float) -> dict:
    g = dict(sc.grid)
    g["n_rho"] = int(round((g["n_rho"] - 1) * scale)) + 1
    if g["nx"] > 1:
        g["nx"] = int(round((g["nx"] - 1) * scale)) + 1
    g["dt"] = g["dt"] / scale
    return g


def _setup(sc: Scenario, args) -> HeadlineSetup:
    model = sc.model()
    d = sc.domain
    g = _scaled(sc, args.resolution_scale)
    kern = sc.kernel(model.P_minus, model.P_plus)
    probes = sc.probes
    return HeadlineSetup(model=model, kernel=kern, m0=float(sc.initial["m0"]), a_minus=d["a_minus"],
                         a_plus=d["a_plus"], t0=d["t0"], T=d["T"], drift=sc.drift(model), n_rho=g["n_rho"],
                         dt=g["dt"], nx=g["nx"], N=int(sc.ensemble.get("N", 1000)),
                         seed=args.seed if args.seed is not None else sc.seed, workers=args.workers,
                         probe_windows=tuple(tuple(w) for w in probes.get("windows", ((d["a_minus"], d["a_plus"]),))),
                         probe_points=tuple(probes.get("points", (0.5 * (d["a_minus"] + d["a_plus"]),))),
                         bins=int(probes.get("bins", 4)), store_every=g["store_every"],
                         macro_dt=float(sc.grid.get("macro_dt", 0.01)))


def _label_setup(sc: Scenario, args):
    model = sc.model()
    d = sc.domain
    g = _scaled(sc, args.resolution_scale)
    lo, hi = sc.labels["lo"], sc.labels["hi"]
    ys = np.linspace(lo, hi, g["n_rho"])
    xs = np.linspace(d["a_minus"], d["a_plus"], max(g["nx"], 2))
    kern = sc.kernel(lo, hi)
    return model, kern, xs, ys, g


def _solve_labels(model, kern, xs, ys, g, sc: Scenario):
    s = float(sc.initial["s"])
    d = sc.domain
    g0 = tabulate_kernel(kern, xs, ys, d["t0"], "g", s)
    solver = KineticSolver(model, xs, ys, d["t0"], g["dt"], None, "g", s)
    return solver.solve(g0.values, d["T"], store_every=g["store_every"])


def _config_rows(results):
    rows = []
    for i, (pos, vals) in enumerate(results):
        for p, v in zip(pos, vals):
            rows.append((i, p, v))
    return rows


# -- commands ------------------------------------------------------------------------------------

def cmd_simulate(sc: Scenario, args, out: Path):
    arts = []
    seed = args.seed if args.seed is not None else sc.seed
    if sc.klass == "pdmp-f":
        setup = _setup(sc, args)
        sol, drift = pipeline_b(setup)
        results = run_pipeline_a(setup, sol, drift)
    else:
        model, kern, xs, ys, g = _label_setup(sc, args)
        d = sc.domain
        s = float(sc.initial["s"])
        rates = profile_rates(tabulate_kernel(kern, xs, ys, d["t0"], "g", s))
        results = []
        for i in range(int(sc.ensemble.get("N", 1000))):
            rng = make_rng(seed, i)
            path = sample_y_process(rates, d["t0"], d["a_minus"], d["a_plus"], float(sc.initial["y0"]), rng)
            q = ShockConfiguration.from_path(path, d["a_plus"], d["t0"], FUNDAMENTAL, s)
            c = evolve(q, d["T"], model, None, mode=OPEN_RIGHT, record=False).config
            results.append((c.positions, c.values))
    arts.append(write_csv(out / "left_values.csv", ["realization", "value"],
                          [(i, v[0]) for i, (_, v) in enumerate(results)]))
    arts.append(write_csv(out / "configurations.csv", ["realization", "position", "value"], _config_rows(results)))
    counts = np.array([len(p) - 1 for p, _ in results])
    arts.append(write_table(out / "summary.csv", [{"realizations": len(results), "mean_jumps": float(counts.mean()),
                                                   "max_jumps": int(counts.max())}]))
    return 0, arts


def cmd_kinetic(sc: Scenario, args, out: Path):
    arts = []
    if sc.klass == "pdmp-f":
        setup = _setup(sc, args)
        sol, _ = pipeline_b(setup)
        last = sol.snapshot(sol.times.size - 1)
        V = velocity_matrix(setup.model, last.xs, last.t, last.rhos)
        rs = row_conservation(last.values, V, last.d)
        arts.append(write_csv(out / "kernel.csv", ["x", "t", "rho_minus", "rho_plus", "f"],
                              np.vstack([sol.snapshot(0).to_rows(), last.to_rows()])))
        arts.append(write_csv(out / "row_sums.csv", ["x", "t", "rho", "row_sum"],
                              [(x, last.t, r, rs[i, j]) for i, x in enumerate(last.xs)
                               for j, r in enumerate(last.rhos)]))
        marg = [np.column_stack([m.to_rows(), np.full((m.rhos.size, 2), (m.atom_weight, m.atom_loc))])
                for m in sol.marginals]
        arts.append(write_csv(out / "marginal.csv", ["t", "rho", "density", "atom_weight", "atom_location"],
                              np.vstack(marg)))
        summary = {"max_row_sum": float(np.abs(rs).max()), **{k: v for k, v in sol.diagnostics.items()}}
    else:
        model, kern, xs, ys, g = _label_setup(sc, args)
        sol = _solve_labels(model, kern, xs, ys, g, sc)
        res = kinetic_residual(sol, model)
        arts.append(write_csv(out / "kernel.csv", ["x", "t", "y_minus", "y_plus", "g"],
                              np.vstack([sol.snapshot(0).to_rows(), sol.snapshot(sol.times.size - 1).to_rows()])))
        summary = {"max_residual": float(np.abs(res).max()) if res.size else 0.0, **sol.diagnostics}
    arts.append(write_table(out / "summary.csv", [summary]))
    return 0, arts


def _identity_rows(sc: Scenario, setup: HeadlineSetup) -> list[dict]:
    span = setup.T - setup.t0
    rep = identity_residual_suite(setup.model, setup.drift or ZeroDrift(), setup.kernel, [0.04, 0.02], n_probes=4,
                                 seed=setup.seed, window=(setup.a_minus, setup.a_plus),
                                 t_range=(setup.t0 + 0.2 * span, setup.t0 + 0.8 * span))
    rows = []
    for k, v in rep.residuals.items():
        r = rep.ratios()[k][0]
        if k == "c_minus_forms":
            ok = v[-1] <= 1e-10
        else:
            ok = v[-1] <= 1e-12 or r >= 3.5
        rows.append({"probe": "identity", "statistic": k, "valueA": v[-1], "valueB": r, "pass": ok})
    return rows


def cmd_validate(sc: Scenario, args, out: Path):
    if sc.klass == "pdmp-f":
        setup = _setup(sc, args)
        rep = ensemble_comparison(setup)
        rows = rep["rows"] + _identity_rows(sc, setup)
        ok = rep["verdict"]["pass"] and all(r["pass"] for r in rows if r["probe"] == "identity")
    else:
        model, kern, xs, ys, g = _label_setup(sc, args)
        res = []
        for scale in (1, 2):
            gg = dict(g, dt=g["dt"] / scale)
            xx = np.linspace(xs[0], xs[-1], (xs.size - 1) * scale + 1)
            yy = np.linspace(ys[0], ys[-1], (ys.size - 1) * scale + 1)
            sol = _solve_labels(model, kern, xx, yy, gg, sc)
            res.append(float(np.abs(kinetic_residual(sol, model)).max()))
        ratio = res[0] / res[1] if res[1] > 0 else math.inf
        ok = res[1] <= 1e-12 or ratio >= 1.7
        rows = [{"probe": "label kernel", "statistic": "residual_ratio", "valueA": res[1], "valueB": ratio,
                 "pass": ok}]
    arts = [write_table(out / "verdict.csv", rows)]
    (out / "report.txt").write_text(f"scenario {sc.name}: {'PASS' if ok else 'FAIL'}\n")
    arts.append(out / "report.txt")
    return (0 if ok else 1), arts


def cmd_htransform(sc: Scenario, args, out: Path):
    if sc.klass != "fundamental-g":
        raise sc.error("htransform needs a fundamental-g scenario", "class")
    model, kern, xs, ys, g = _label_setup(sc, args)
    ht = sc.htransform
    if "window" not in ht:
        raise sc.error("htransform.window [lo, hi] is required", "htransform")
    window = Window(*map(float, ht["window"]))
    d = sc.domain
    seed = args.seed if args.seed is not None else sc.seed
    y0 = float(sc.initial["y0"])
    sol = _solve_labels(model, kern, xs, ys, g, sc)
    try:
        fam = build_h_family(sol, model, window)
    except ValueError as exc:
        raise sc.error(str(exc), "htransform", "window") from None
    rows = []
    series = compute_h_series(kern, np.linspace(d["a_minus"], d["a_plus"], int(ht.get("nx", 41))), window, d["t0"],
                              int(ht.get("ny", 41)))
    n_paths = int(ht.get("n_paths", 20000))
    p, se = survival_probability(kernel_rates(kern, (d["a_minus"], d["a_plus"]), d["t0"]), d["a_minus"],
                                 d["a_plus"], y0, window.hi, n_paths, seed, 0, args.workers)
    hs = float(series(d["a_minus"], d["t0"], y0))
    rows.append({"check": "series_vs_mc", "value": abs(hs - p), "bound": 3 * se, "pass": abs(hs - p) <= 3 * se})
    pr = reweighted_residual(sol, fam, model)
    rows.append({"check": "reweighted_residual", "value": pr["residual"], "bound": pr["bound"], "pass": pr["holds"]})
    neg = reweighted_residual(sol, exponential_h(sol.xs, sol.times, fam.ys, window, float(ht.get("negative_c", 5.0))),
                          model)
    rows.append({"check": "negative_control_rejected", "value": neg["residual"], "bound": neg["g_only_bound"],
                 "pass": not neg["explained_by_g"]})
    cs = conditioned_sampler_check(kern, series, y0, int(ht.get("n_accept", 2000)), seed)
    rows.append({"check": "conditioned_sampler_ks", "value": cs["ks"], "bound": 3 * cs["sigma"], "pass": cs["holds"]})
    arts = [write_csv(out / "h_field.csv", ["x", "t", "y", "h"], fam.to_rows()),
            write_csv(out / "h_series.csv", ["x", "t", "y", "h"], series.to_rows()),
            write_table(out / "htransform.csv", rows)]
    return (0 if all(r["pass"] for r in rows) else 1), arts


def _total_variation(q, model, b, n: int = 4001) -> float:
    """Variation of the reconstructed profile on a fine grid that contains every shock."""
    xs = np.union1d(np.linspace(q.a_minus, q.a_plus, n), q.positions)
    left = np.asarray(reconstruct(q, xs, model, b, left_limit=True), float)
    right = np.asarray(reconstruct(q, xs, model, b), float)
    both = np.column_stack([left, right]).ravel()
    return float(np.sum(np.abs(np.diff(both))))


def cmd_oracle(sc: Scenario, args, out: Path):
    if sc.klass != "pdmp-f":
        raise sc.error("oracle runs compare momentum profiles; use a pdmp-f scenario", "class")
    setup = _setup(sc, args)
    seed = args.seed if args.seed is not None else sc.seed
    orc = sc.oracle
    ladder = [float(v) for v in orc.get("dx", [0.02, 0.01])]
    probe_times = [float(v) for v in orc.get("probe_times", [setup.T])]
    xs = np.linspace(setup.a_minus, setup.a_plus, setup.nx) if setup.nx > 1 else [setup.a_minus]
    K0 = tabulate_kernel(setup.kernel, xs, np.linspace(setup.model.P_minus, setup.model.P_plus, setup.n_rho),
                         setup.t0)
    rows = []
    ok = True
    for r in range(int(orc.get("runs", 1))):
        rng = make_rng(seed, r)
        path = sample_pdmp_path(setup.drift, K0, setup.t0, setup.a_minus, setup.a_plus, setup.m0, rng)
        q0 = ShockConfiguration.from_path(path, setup.a_plus, setup.t0)
        tv = _total_variation(q0, setup.model, setup.drift)
        table, _ = compare_particle_vs_fv(q0, setup.model, setup.T, ladder, probe_times, setup.drift)
        for row in table:
            bound = 2 * tv * row["dx"]
            good = row["l1"] <= bound
            ok &= good
            rows.append({"run": r, "dx": row["dx"], "t": row["t"], "l1": row["l1"], "bound": bound, "pass": good})
    return (0 if ok else 1), [write_table(out / "oracle.csv", rows)]


COMMANDS = {"simulate": cmd_simulate, "kinetic": cmd_kinetic, "validate": cmd_validate,
            "htransform": cmd_htransform, "oracle": cmd_oracle}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shockkin", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--scenario", required=True, help="YAML scenario file")
    p.add_argument("--seed", type=int, default=None, help="override ensemble.seed")
    p.add_argument("--workers", type=int, default=1, help="worker processes for ensembles")
    p.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or ./out/<name>)")
    p.add_argument("--resolution-scale", type=float, default=1.0, help="refine grids by this factor")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be a nonnegative integer", file=sys.stderr)
        return 2
    try:
        sc = load_scenario(args.scenario)
        out = Path(args.out or os.environ.get(OUT_ENV) or Path("out") / sc.name)
        out.mkdir(parents=True, exist_ok=True)
        status, arts = COMMANDS[args.command](sc, args, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ShockKinError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    write_manifest(out, sc, args.command, args, arts, status)
    print(f"{args.command}: {'ok' if status == 0 else 'FAILED'} -> {out}")
    return status


if __name__ == "__main__":
    sys.exit(main())
