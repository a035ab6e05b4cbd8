"""Acceptance suite: each test prints one PASS/FAIL line and asserts at the stated tolerance."""
import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate, stats

from shockkin.cli import _total_variation, main
from shockkin.drift_flow import DEFAULT_TOL, ConstantDrift, FunctionDrift, InitialField, solve_drift
from shockkin.htransform import (Window, build_h_family, compute_h_series, conditioned_sampler_check,
                                 exponential_h, h_equation_residual, kernel_rates, reweighted_residual,
                                 survival_probability)
from shockkin.kinetic import (KineticSolver, TailKernel, UniformKernel, kinetic_residual, row_conservation,
                              tabulate_kernel, velocity_matrix)
from shockkin.model import fundamental_M, make_model
from shockkin.pdmp import make_rng, mu_n_density, profile_rates, sample_pdmp_path, sample_y_process
from shockkin.shockline import (FUNDAMENTAL, OPEN_RIGHT, ShockConfiguration, entropy_and_rh_residuals, evolve,
                                reconstruct)
from shockkin.validate import (HeadlineSetup, compare_particle_vs_fv, default_workers, l1_stability_check,
                               identity_residual_suite, ensemble_comparison)

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def report(capsys, number, title, ok, detail):
    with capsys.disabled():
        print(f"\nCRITERION {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}")


def test_c01_riccati_drift(capsys):
    start = time.perf_counter()
    m = make_model("burgers", P_minus=-1.0, P_plus=1.0)
    ts = np.linspace(0.0, 2.0, 41)
    b = solve_drift(m, InitialField(c0=-1.0), 0.0, 2.0, np.linspace(0, 1, 3), ts=ts, nrho=5)
    exact = -1.0 / (1.0 + ts)
    err = float(np.max(np.abs(b.values / exact[None, :, None] - 1)))
    elapsed = time.perf_counter() - start
    ok = err <= 1e-6 and elapsed < 1.0
    report(capsys, 1, "closed-form Riccati drift", ok, f"max rel err {err:.2e} <= 1e-6, {elapsed:.2f}s < 1s")
    assert ok


def test_c02_identity_suite(capsys):
    start = time.perf_counter()
    m = make_model("eps_sin", eps=0.2)
    grid = solve_drift(m, InitialField(c0=-0.1, c_sin=0.05), 0.0, 0.5, np.linspace(0, 2, 3), nt=3, nrho=3,
                       exact_steps=32)
    rep = identity_residual_suite(m, FunctionDrift(grid.exact), TailKernel(0, 1, amp=1.0, c_sin=0.3), [0.04, 0.02],
                                 n_probes=4, seed=0, window=(0.0, 2.0), t_range=(0.1, 0.4))
    ratios = {k: v[0] for k, v in rep.ratios().items() if k not in ("c_minus_forms", "eq_row_conservation")}
    burgers = make_model("burgers")
    rhos = np.linspace(0, 1, 201)
    K = tabulate_kernel(UniformKernel(0, 1), [0.0], rhos)
    rows = float(np.max(np.abs(row_conservation(K.values, velocity_matrix(burgers, [0.0], 0.0, rhos), K.d))))
    elapsed = time.perf_counter() - start
    ok = min(ratios.values()) >= 3.5 and rows <= 1e-6 and elapsed < 30
    report(capsys, 2, "identity residuals", ok,
           f"min ratio {min(ratios.values()):.2f} >= 3.5 over {len(ratios)} identities, "
           f"row sums {rows:.1e} <= 1e-6, {elapsed:.1f}s < 30s")
    assert ok


def test_c03_shock_mechanics(capsys):
    start = time.perf_counter()
    burgers = make_model("burgers")
    # speeds -0.2 and -0.6 close a gap of 0.04 at t* = 0.1
    q = ShockConfiguration(0.0, 2.0, 0.0, [0.0, 0.5, 0.54], [0.1, 0.3, 0.9])
    merge = [e for e in evolve(q, 0.3, burgers, macro_dt=0.01).event_log if e[1] == "merge"]
    dt_star = abs(merge[0][0] - 0.1) if merge else math.inf

    m = make_model("eps_sin", eps=0.2)
    b = FunctionDrift(lambda x, t, r: -0.1 - 0.05 * np.sin(x) * r)
    rng = np.random.default_rng(2024)
    rh = kres = 0.0
    violations = 0
    for _ in range(100):
        n = int(rng.integers(1, 6))
        pos = np.sort(rng.uniform(0.1, 1.9, n))
        vals = np.sort(rng.uniform(0.05, 0.95, n + 1))
        cfg = ShockConfiguration(0.0, 2.0, 0.0, np.concatenate([[0.0], pos]), vals)
        d = entropy_and_rh_residuals(evolve(cfg, 0.3, m, b, macro_dt=0.005), m, b)
        rh, kres = max(rh, d["rh_residual"]), max(kres, d["k_residual"])
        violations += d["entropy_violations"]
    elapsed = time.perf_counter() - start
    tol = 10 * DEFAULT_TOL
    ok = dt_star <= 1e-6 and rh <= tol and kres <= tol and violations == 0 and elapsed < 60
    report(capsys, 3, "shock mechanics", ok,
           f"|dt*| {dt_star:.1e} <= 1e-6, RH {rh:.1e} and value ODE {kres:.1e} <= {tol:.0e}, "
           f"{violations} entropy violations, {elapsed:.1f}s < 60s")
    assert ok


def test_c04_entropy_solution_oracle(capsys):
    start = time.perf_counter()
    m = make_model("burgers")
    K = tabulate_kernel(TailKernel(0, 1, amp=4.0), [0.0], np.linspace(0, 1, 101))
    worst = 0.0
    totals = {0.02: 0.0, 0.01: 0.0}
    ok = True
    for r in range(10):
        path = sample_pdmp_path(None, K, 0.0, 0.0, 2.0, 0.05, make_rng(404, r))
        q0 = ShockConfiguration.from_path(path, 2.0, 0.0)
        tv = _total_variation(q0, m, None)
        table, _ = compare_particle_vs_fv(q0, m, 0.5, [0.02, 0.01], probe_times=[0.25, 0.5])
        for row in table:
            ok &= row["l1"] <= 2 * tv * row["dx"]
            totals[round(row["dx"], 6)] += row["l1"]
            if tv > 0:
                worst = max(worst, row["l1"] / (2 * tv * row["dx"]))
    ratio = totals[0.02] / totals[0.01]
    elapsed = time.perf_counter() - start
    ok = ok and ratio >= 1.6 and elapsed < 120
    report(capsys, 4, "particles vs Godunov", ok,
           f"max L1/(2 TV dx) {worst:.2f} <= 1, halving ratio {ratio:.2f} >= 1.6, {elapsed:.1f}s < 120s")
    assert ok


def test_c05_headline_comparison(capsys):
    start = time.perf_counter()
    setup = HeadlineSetup(model=make_model("shifted_burgers"), kernel=TailKernel(0, 1, amp=1.0), m0=0.2,
                          a_minus=0.0, a_plus=2.0, T=1.0, n_rho=101, dt=1e-3, N=20000, seed=2024,
                          workers=default_workers(), probe_windows=((0.25, 0.75), (1.25, 1.75)),
                          probe_points=(0.5, 1.5), bins=4, store_every=10, macro_dt=0.01)
    rep = ensemble_comparison(setup)
    ks = next(r for r in rep["rows"] if r["statistic"] == "ks_left_value")
    v = rep["verdict"]
    elapsed = time.perf_counter() - start
    ok = v["marginal"] and v["pairs_fraction"] >= 0.95 and elapsed < 600
    report(capsys, 5, "headline comparison", ok,
           f"KS {ks['valueA']:.4f} <= {3 * ks['sigma'] + ks['allowance']:.4f}, "
           f"pair bins within 3 sigma {100 * v['pairs_fraction']:.1f}% >= 95%, {elapsed:.0f}s < 600s")
    assert ok


def _closed_form_fundamental(ys, xs, a_minus, a_plus, tau0, tau1):
    """Burgers fundamental class: a shock between labels y-, y+ moves as x = ybar + k tau,
    so every event time solves a linear equation."""
    ys, xs = list(ys), list(xs)
    bars = [(ys[i] + ys[i + 1]) / 2 for i in range(len(xs))]
    lines = [(yb, (x - yb) / tau0) for yb, x in zip(bars, xs)]
    tau = tau0
    while lines:
        cands = []
        for i in range(len(lines) - 1):
            (y1, k1), (y2, k2) = lines[i], lines[i + 1]
            if k1 != k2:
                ts = (y2 - y1) / (k1 - k2)
                if ts > tau:
                    cands.append((ts, "merge", i))
        y1, k1 = lines[0]
        if k1 < 0:
            cands.append(((a_minus - y1) / k1, "left", 0))
        y1, k1 = lines[-1]
        if k1 > 0:
            cands.append(((a_plus - y1) / k1, "right", len(lines) - 1))
        cands = [c for c in cands if tau < c[0] <= tau1]
        if not cands:
            break
        tau, kind, i = min(cands)
        if kind == "left":
            lines.pop(0)
            ys.pop(0)
        elif kind == "right":
            lines.pop()
            ys.pop()
        else:
            x_hit = lines[i][0] + lines[i][1] * tau
            ys.pop(i + 1)
            yb = (ys[i] + ys[i + 1]) / 2
            lines[i:i + 2] = [(yb, (x_hit - yb) / tau)]
    return np.array(ys), np.array([yb + k * tau1 for yb, k in lines])


def test_c06_fundamental_shape(capsys):
    start = time.perf_counter()
    m = make_model("burgers")
    a_minus, a_plus, s, t0, T = -1.0, -0.5, -1.0, 0.0, 0.2
    g = tabulate_kernel(TailKernel(0, 1, amp=12.0), np.linspace(a_minus, a_plus, 21), np.linspace(0, 1, 101), t0,
                        "g", s)
    worst_pos = worst_prof = 0.0
    shocks = events = 0
    for i in range(50):
        path = sample_y_process(g, t0, a_minus, a_plus, 0.1, make_rng(6, i))
        q = ShockConfiguration.from_path(path, a_plus, t0, FUNDAMENTAL, s)
        res = evolve(q, T, m, mode=OPEN_RIGHT)
        cfg = res.config
        events += len(res.events)
        labels, pos = _closed_form_fundamental(q.values, q.positions[1:], a_minus, a_plus, t0 - s, T - s)
        assert np.array_equal(cfg.values, labels)
        shocks += pos.size
        if pos.size:
            worst_pos = max(worst_pos, float(np.max(np.abs(cfg.positions[1:] - pos))))
        xs = np.linspace(a_minus, a_plus, 2001)
        xs = xs[np.all(np.abs(xs[:, None] - np.concatenate([pos, cfg.positions[1:]])[None, :]) > 1e-6, axis=1)]
        idx = np.searchsorted(pos, xs, side="right")
        expect = fundamental_M(m, xs, T, labels[idx], s)
        worst_prof = max(worst_prof, float(np.max(np.abs(reconstruct(cfg, xs, m) - expect))))
    res = []
    for scale in (1, 2):
        xs = np.linspace(a_minus, a_plus, 10 * scale + 1)
        ys = np.linspace(0, 1, 10 * scale + 1)
        g0 = tabulate_kernel(TailKernel(0, 1), xs, ys, t0, "g", s)
        sol = KineticSolver(m, xs, ys, t0, 0.01 / scale, None, "g", s).solve(g0.values, T, store_every=2)
        res.append(float(np.abs(kinetic_residual(sol, m)).max()))
    ratio = res[0] / res[1]
    elapsed = time.perf_counter() - start
    ok = max(worst_pos, worst_prof) <= 1e-8 and ratio >= 1.7 and elapsed < 60
    report(capsys, 6, "fundamental-class shape", ok,
           f"profile err {worst_prof:.1e}, position err {worst_pos:.1e} <= 1e-8 over {shocks} shocks and {events} events; "
           f"label-kernel residual ratio {ratio:.2f} >= 1.7, {elapsed:.1f}s < 60s")
    assert ok


def test_c07_l1_stability(capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(77)
    held = 0
    worst = 0.0
    for k in range(100):
        m = make_model("burgers" if k % 2 == 0 else "shifted_burgers")
        right = float(rng.uniform(0.7, 1.0))
        cfgs = []
        for _ in range(2):
            n = int(rng.integers(0, 5))
            pos = np.sort(rng.uniform(0.05, 1.5, n))
            vals = np.sort(rng.uniform(0.0, right, n))
            # the last value is shared, so both configurations see the same a_+ trace
            cfgs.append(ShockConfiguration(0.0, 2.0, 0.0, np.concatenate([[0.0], pos, [1.8]]),
                                           np.concatenate([vals, [right - 1e-3], [right]])))
        out = l1_stability_check(m, None, cfgs[0], cfgs[1], 0.5)
        held += out["holds"] and out["boundary"] == 0.0
        if out["rhs"] > 0:
            worst = max(worst, out["lhs"] / out["rhs"])
    elapsed = time.perf_counter() - start
    ok = held == 100 and elapsed < 120
    report(capsys, 7, "L1 stability", ok, f"{held}/100 pairs hold, max lhs/rhs {worst:.3f}, {elapsed:.1f}s < 120s")
    assert ok


def test_c08_h_transform(capsys):
    start = time.perf_counter()
    m = make_model("burgers")
    kern = TailKernel(0, 1, amp=1.0)
    a_minus, a_plus, s, t0, T, y0 = -1.0, -0.5, -1.0, 0.0, 0.2, 0.1
    window = Window(0.0, 0.7)
    series = compute_h_series(kern, np.linspace(a_minus, a_plus, 41), window, t0, 41)
    p, se = survival_probability(kernel_rates(kern, (a_minus, a_plus), t0), a_minus, a_plus, y0, window.hi,
                                 100000, seed=8)
    gap = abs(float(series(a_minus, t0, y0)) - p)
    eq_res, prop = [], []
    for scale in (1, 2):
        xs = np.linspace(a_minus, a_plus, 10 * scale + 1)
        ys = np.linspace(0, 1, 10 * scale + 1)
        g0 = tabulate_kernel(kern, xs, ys, t0, "g", s)
        sol = KineticSolver(m, xs, ys, t0, 0.01 / scale, None, "g", s).solve(g0.values, T, store_every=2)
        fam = build_h_family(sol, m, window)
        r = h_equation_residual(fam, sol, m)
        eq_res.append(max(r["max_x"], r["max_t"]))
        prop.append(reweighted_residual(sol, fam, m))
    neg = reweighted_residual(sol, exponential_h(sol.xs, sol.times, fam.ys, window, 5.0), m)
    cs = conditioned_sampler_check(kern, series, y0, 4000, seed=8)
    elapsed = time.perf_counter() - start
    ratio = eq_res[0] / eq_res[1]
    ok = (gap <= 3 * se and ratio >= 1.7 and all(pr["holds"] for pr in prop) and cs["holds"]
          and not neg["explained_by_g"] and elapsed < 300)
    report(capsys, 8, "h-transform", ok,
           f"series-MC {gap:.1e} <= {3 * se:.1e}; h residual ratio {ratio:.2f} >= 1.7; reweighted residual "
           f"{prop[-1]['residual']:.1e} <= {prop[-1]['bound']:.1e}; KS {cs['ks']:.3f} <= {3 * cs['sigma']:.3f}; "
           f"wrong h rejected ({neg['residual']:.2f} > {neg['g_only_bound']:.2f}); {elapsed:.0f}s < 300s")
    assert ok


def _rate_integral(amp, x0, x1, rho0):
    """Closed-form integrated jump rate along drho/dx = -0.2 for the tail kernel
    amp (1 - rho+) (1 + sin(x)/2): the row rate is amp (1 + sin(x)/2) w^2 / 2 with w = 1 - rho."""
    def F(x):
        w = (1 - rho0) + 0.2 * (x - x0)
        return w ** 3 / 0.6 + 0.5 * (-math.cos(x) * w * w + 0.4 * w * math.sin(x) + 0.08 * math.cos(x))
    return 0.5 * amp * (F(x1) - F(x0))


def _sampler_setup(amp):
    xs = np.linspace(0.0, 1.0, 201)
    return tabulate_kernel(TailKernel(0, 1, amp=amp, c_sin=0.5), xs, np.linspace(0, 1, 201))


def test_c09_sampler_exactness(capsys):
    start = time.perf_counter()
    b = ConstantDrift(-0.2)
    # independent check of the closed-form rate integral
    ref = integrate.quad(lambda x: 4.0 * (1 + 0.5 * math.sin(x)) * (1 - (0.3 - 0.2 * (x - 0.1))) ** 2 / 2, 0.1, 0.9)
    assert abs(_rate_integral(4.0, 0.1, 0.9, 0.3) - ref[0]) <= 1e-10

    # time-changed clocks: each jump's integrated rate is Exp(1) censored at the remaining budget
    K = profile_rates(_sampler_setup(4.0))
    clocks = []
    i = 0
    while len(clocks) < 10000:
        path = sample_pdmp_path(b, K, 0.0, 0.0, 1.0, 0.3, make_rng(91, i), n_steps=50)
        i += 1
        x_prev, v_prev = 0.0, 0.3
        for x, pre, post in zip(path.jump_coords, path.pre_values, path.post_values):
            tau = _rate_integral(4.0, x_prev, x, v_prev)
            budget = _rate_integral(4.0, x_prev, 1.0, v_prev)
            u = -math.expm1(-tau) / -math.expm1(-budget)
            clocks.append(-math.log1p(-u))
            x_prev, v_prev = x, post
    clocks = np.array(clocks[:10000])
    pval = stats.kstest(clocks, "expon").pvalue

    # n <= 1 configurations against the configuration density
    amp, init, N = 1.0, 0.5, 10000
    K1 = _sampler_setup(amp)
    R1 = profile_rates(K1)
    n0 = 0
    x1 = []
    for j in range(N):
        path = sample_pdmp_path(b, R1, 0.0, 0.0, 1.0, init, make_rng(92, j), n_steps=50)
        if path.n_jumps == 0:
            n0 += 1
        elif path.n_jumps == 1:
            x1.append(path.jump_coords[0])
    edges = np.linspace(0, 1, 9)
    gx, gw = np.polynomial.legendre.leggauss(12)

    def one_jump_density(x, rho1):
        lam = amp * (1 - rho1) * (1 + 0.5 * math.sin(x))
        return math.exp(-_rate_integral(amp, 0.0, x, init) - _rate_integral(amp, x, 1.0, rho1)) * lam

    expect = [math.exp(-_rate_integral(amp, 0.0, 1.0, init))]
    for lo, hi in zip(edges[:-1], edges[1:]):
        tot = 0.0
        for xg, wx in zip(0.5 * (lo + hi) + 0.5 * (hi - lo) * gx, 0.5 * (hi - lo) * gw):
            hat = init - 0.2 * xg
            rs = 0.5 * (hat + 1) + 0.5 * (1 - hat) * gx
            tot += wx * sum(w * one_jump_density(xg, r) for r, w in zip(rs, 0.5 * (1 - hat) * gw))
        expect.append(tot)
    expect = np.array(expect)
    observed = np.concatenate([[n0], np.histogram(x1, edges)[0]])
    sigma = np.sqrt(N * expect * (1 - expect))
    z = np.abs(observed - N * expect) / sigma

    # the library density agrees with the closed form at a sample point
    q1 = ShockConfiguration(0.0, 1.0, 0.0, [0.0, 0.4], [init, 0.8])
    lib = mu_n_density(q1, 0.0, None, K1, b)
    elapsed = time.perf_counter() - start
    ok = pval > 0.01 and z.max() <= 3 and abs(lib / one_jump_density(0.4, 0.8) - 1) <= 1e-3 and elapsed < 120
    report(capsys, 9, "sampler exactness", ok,
           f"clock KS p={pval:.3f} > 0.01 on {clocks.size} clocks; n<=1 bins max |z| {z.max():.2f} <= 3 "
           f"over {z.size} bins; {elapsed:.0f}s < 120s")
    assert ok


def _csv_bytes(directory):
    return {p.name: p.read_bytes() for p in sorted(Path(directory).glob("*.csv"))}


@pytest.mark.parametrize("scenario, command", [("headline_small", "validate"), ("fundamental", "htransform")])
def test_c10_reproducibility(capsys, tmp_path, scenario, command):
    if scenario == "headline_small":
        path = tmp_path / "headline_small.yaml"
        text = (SCENARIOS / "headline.yaml").read_text().replace("N: 20000", "N: 2000")
        path.write_text(text)
    else:
        path = SCENARIOS / f"{scenario}.yaml"
    runs = []
    for tag, workers in (("a", 1), ("b", 1), ("c", 8)):
        main([command, "--scenario", str(path), "--out", str(tmp_path / tag), "--workers", str(workers)])
        runs.append(_csv_bytes(tmp_path / tag))
    ok = bool(runs[0]) and runs[0] == runs[1] == runs[2]
    report(capsys, 10, f"reproducibility ({command} {scenario})", ok,
           f"{len(runs[0])} CSV files byte-identical across two runs and workers 1 and 8")
    assert ok
