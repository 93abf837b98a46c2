"""Acceptance suite: one test per criterion, tolerances pinned below.

Each test records its verdict through ``conftest.record`` so the terminal
summary prints one PASS/FAIL line per criterion. Criterion 9 drives the
command-line pipeline twice on 64^3 and is the long one (about ten minutes).
"""

import hashlib
import json
import math
import time
from fractions import Fraction as F

import numpy as np
import pytest

from conftest import record
from calderon_ns.cli import EXIT_OK, main
from calderon_ns.fields import multiscale_bump_field
from calderon_ns.littlewood_paley import (
    BesovIndex, besov_norm, build_partition, check_interpolation, heatflow_besov_norm,
    partition_sum,
)
from calderon_ns.mild import (
    MildConfig, NonConvergenceError, SmallnessError, amplitude_threshold, calibrate_smallness,
    oseen_decay_check, picard_solve, smallness_surrogate,
)
from calderon_ns.perturbed import PerturbedConfig, solve_perturbed
from calderon_ns.mild import heat_trajectory
from calderon_ns.scanner import (
    ScanConfig, global_integrals, isolation_bruteforce, lattice_centers, pigeonhole_count,
    planted_bumps, rescale_and_isolate, scan_cylinders, smooth_benchmarks,
)
from calderon_ns.spectral import Grid3, random_solenoidal
from calderon_ns.splitting import derive_params, split

# -- pinned tolerances ----------------------------------------------------------------
PARTITION_TOL = 1e-12
INTERPOLATION_REL_TOL = 1e-10
INTERPOLATION_FIELDS = 1000
HEATFLOW_FIELDS = 100
# fitted once on 100 seeded random fields at 32^3 (s = -1/2, p = 4), observed [0.4734, 0.7756]
HEATFLOW_RATIO_INTERVAL = (0.45, 0.80)
SLOPE_REL_TOL = 0.15
SPLIT_EXACT_TOL = 1e-12
# fitted once over 100 seeded fields at 32^3, observed max 1.09
SPLIT_PERSISTENCY_CONSTANT = 1.25
PICARD_RESIDUAL = 1e-8
PICARD_MAX_ITERS = 10
OSEEN_REL_TOL = 0.10
ENERGY_TOL = 1e-6
ENERGY_MIN_ORDER = 2.0
PIPELINE_BUDGET_S = 15 * 60
PLANTED_CONSTRUCTIONS = 50
ISOLATION_CLOUDS = 100

GRID64 = Grid3(64)


def _verdict(k, title):
    """Decorator recording the outcome of a criterion test."""
    def wrap(fn):
        def inner(*args, **kwargs):
            detail = {}
            ok = False
            try:
                fn(*args, detail=detail, **kwargs)
                ok = True
            finally:
                record(k, title, ok, ", ".join(f"{a}={b}" for a, b in detail.items()))
        inner.__name__ = fn.__name__
        inner.__doc__ = fn.__doc__
        return inner
    return wrap


def random_field(grid, seed):
    rng = np.random.default_rng(seed)
    return random_solenoidal(grid, rng, kmax=rng.uniform(3, 10), slope=rng.uniform(-3, 1))


@_verdict(1, "partition of unity on 64^3")
def test_c01_partition_of_unity(detail):
    part = build_partition(GRID64)
    dev = np.abs(partition_sum(part) - 1.0)[GRID64.kmag > 0]
    detail["max_dev"] = f"{dev.max():.2e}"
    assert dev.max() < PARTITION_TOL


@_verdict(2, "interpolation with constant one, 1000 random fields")
def test_c02_interpolation(detail):
    grid = Grid3(32)
    part = build_partition(grid)
    worst = -math.inf
    for seed in range(INTERPOLATION_FIELDS):
        rng = np.random.default_rng(10_000 + seed)
        f = random_solenoidal(grid, rng, kmax=rng.uniform(3, 12), slope=rng.uniform(-3, 1))
        theta = rng.uniform(0.05, 0.95)
        r = [1.0, 2.0, 3.0, math.inf][seed % 4]
        s1, s2 = -rng.uniform(0.1, 1.0), rng.uniform(0.0, 0.8)
        slack = check_interpolation(f, s1, s2, theta, 4.0, r, part)
        scale = besov_norm(f, BesovIndex(theta * s1 + (1 - theta) * s2, 4.0, r), part)
        worst = max(worst, slack / scale)
        assert slack <= INTERPOLATION_REL_TOL * scale, seed
    detail["worst_rel_slack"] = f"{worst:.2e}"


@_verdict(3, "heat-flow / Besov ratio inside one fitted interval")
def test_c03_heatflow_equivalence(detail):
    grid = Grid3(32)
    part = build_partition(grid)
    lo, hi = HEATFLOW_RATIO_INTERVAL
    ratios = []
    for seed in range(HEATFLOW_FIELDS):
        f = random_field(grid, 20_000 + seed)
        ratios.append(heatflow_besov_norm(f, -0.5, 4.0)
                      / besov_norm(f, BesovIndex(-0.5, 4, math.inf), part))
    blob = json.dumps({"interval": HEATFLOW_RATIO_INTERVAL, "grid": grid.grid_hash(),
                       "s": -0.5, "p": 4}, sort_keys=True).encode()
    detail["interval"] = HEATFLOW_RATIO_INTERVAL
    detail["observed"] = f"[{min(ratios):.4f}, {max(ratios):.4f}]"
    detail["calibration_hash"] = hashlib.sha256(blob).hexdigest()[:16]
    print("heat-flow ratio", detail)
    assert lo <= min(ratios) and max(ratios) <= hi


def _divergence_error(piece, scale):
    """``max |xi . c| / |xi|`` relative to the datum's largest coefficient.

    The per-mode ratio of ``divergence_defect`` is undefined for a piece that
    is zero up to round-off (the energy piece at large epsilon), so the error
    is measured against the scale of the datum being split.
    """
    g = piece.grid
    kx, ky, kz = g.wavevectors
    c = piece.coeffs
    kdotc = np.abs(kx * c[0] + ky * c[1] + kz * c[2]) / np.maximum(g.kmag, 1e-300)
    return float(kdotc.max() / scale)


@_verdict(4, "splitting exponents, exactness and persistency")
def test_c04_splitting(detail):
    part = build_partition(GRID64)
    eps = 2.0 ** -np.arange(1, 9)
    failures = []
    for q, s in ((4, -0.25), (2.5, -0.1)):
        pr = derive_params(q, s)
        u = multiscale_bump_field(GRID64, q, s, np.random.default_rng(0), bumps_per_scale=3)
        scale = np.abs(u.coeffs).max()
        small, energy = [], []
        for e in eps:
            res = split(u, e, pr, part)
            rep = res.report
            small.append(rep["m0_subcritical"])
            energy.append(rep["w0_L2"])
            recon = np.abs(res.m0.coeffs + res.w0.coeffs - u.coeffs).max()
            if recon > SPLIT_EXACT_TOL * scale:
                failures.append(f"reconstruction {q},{s}")
            if max(_divergence_error(res.m0, scale), _divergence_error(res.w0, scale)) > SPLIT_EXACT_TOL:
                failures.append(f"divergence {q},{s}")
            if max(rep["m0_Bs_q_inf"], rep["w0_Bs_q_inf"]) > SPLIT_PERSISTENCY_CONSTANT * rep["u0_Bs_q_inf"]:
                failures.append(f"persistency {q},{s}")
        le = np.log(eps)
        slope_m = np.polyfit(le, np.log(small), 1)[0]
        slope_w = np.polyfit(le, np.log(energy), 1)[0]
        g1, g2 = float(pr.gamma1), float(pr.gamma2)
        detail[f"({q},{s})"] = f"slopes {slope_m:.3f}/{slope_w:.3f} vs {g1:.3f}/{-g2:.3f}"
        if abs(slope_m - g1) > SLOPE_REL_TOL * g1:
            failures.append(f"small-piece slope {q},{s}")
        if abs(slope_w + g2) > SLOPE_REL_TOL * g2:
            failures.append(f"energy-piece slope {q},{s}")
    assert not failures, failures


@_verdict(5, "parameter arithmetic")
def test_c05_parameters(detail):
    a = derive_params(F(4), F(-1, 4))
    assert (a.p, a.delta) == (8, F(1, 8))
    b = derive_params(F(5, 2), F(-1, 10))
    assert (b.P, b.p, b.delta) == (4, 12, F(1, 6))
    rng = np.random.default_rng(0)
    checked = 0
    for _ in range(200):
        q = F(int(rng.integers(301, 2000)), 100)
        s = (-1 + 3 / q) * F(int(rng.integers(1, 100)), 100)
        pr = derive_params(q, s)
        assert pr.gamma2 / pr.gamma1 == 2 * (q - 2)
        assert 3 * (2 * (q - 2) + 1) == 6 * q - 9
        assert 3 * (pr.gamma2 / pr.gamma1 + 1) == 6 * q - 9
        checked += 1
    detail["sampled_q"] = checked


@_verdict(6, "Picard certificate and amplitude threshold")
def test_c06_picard(detail):
    grid = Grid3(32)
    shape = random_solenoidal(grid, np.random.default_rng(0), kmax=4)
    cfg = MildConfig(horizon=0.5, residual_tol=PICARD_RESIDUAL, max_iters=PICARD_MAX_ITERS)
    calib = calibrate_smallness(shape, cfg, iters=5)
    amp = 0.9 * calib.c1 / smallness_surrogate(shape, cfg)
    _, diag = picard_solve(shape * amp, cfg, calib)
    assert diag.residual < PICARD_RESIDUAL and len(diag.rows) <= PICARD_MAX_ITERS
    assert diag.factor_two_holds
    with pytest.raises(SmallnessError):
        picard_solve(shape * (amp / 0.9 * 1.1), cfg, calib)
    raw = amplitude_threshold(shape, cfg, iters=5)
    with pytest.raises(NonConvergenceError):
        picard_solve(shape * (2.0 * raw), cfg, enforce_smallness=False)
    amps = [amplitude_threshold(shape, MildConfig(horizon=T, t_min=1e-5), iters=6)
            for T in (0.01, 0.04, 0.16)]
    detail["c1"] = f"{calib.c1:.3f}"
    detail["iters"] = len(diag.rows)
    detail["thresholds(T=.01,.04,.16)"] = amps
    assert amps[0] > amps[1] > amps[2]


@_verdict(7, "Oseen kernel decay exponents")
def test_c07_oseen(detail):
    for p in (1.0, 2.0, math.inf):
        fit = oseen_decay_check(p, GRID64)
        detail[f"p={p}"] = f"{fit.relative_error:.3f}"
        assert fit.relative_error < OSEEN_REL_TOL


@_verdict(8, "perturbed energy inequality, Gronwall, free-decay order")
def test_c08_energy(detail):
    rng = np.random.default_rng(5)
    w0 = random_solenoidal(GRID64, rng, kmax=4) * 0.3
    m0 = random_solenoidal(GRID64, rng, kmax=6) * 0.3
    m = heat_trajectory(m0, MildConfig(horizon=0.5, steps_per_decade=64))
    rep = solve_perturbed(w0, m, PerturbedConfig(T=0.5, dt=0.005))
    arr = rep.ledger.arrays()
    assert np.all(arr["slack"] >= -ENERGY_TOL * rep.w0_energy)
    assert np.all(arr["gronwall_slack"] >= 0)
    free = random_solenoidal(GRID64, np.random.default_rng(1), kmax=4) * 0.2
    errs = []
    for dt in (0.01, 0.005, 0.0025):
        r = solve_perturbed(free, None, PerturbedConfig(T=0.5, dt=dt))
        errs.append(np.abs(r.ledger.arrays()["slack"]).max() / r.w0_energy)
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    detail["equality_errors"] = [f"{e:.1e}" for e in errs]
    detail["orders"] = [f"{o:.2f}" for o in orders]
    assert max(errs) < ENERGY_TOL
    assert np.all(orders >= ENERGY_MIN_ORDER)


PIPELINE_INI = """
[grid]
n = 64
[field]
source = bump
[split]
q = {q}
s = {s}
[mild]
T = 0.5
calibration_iters = 3
[perturbed]
T = 0.5
dt = 5e-3
"""


@pytest.mark.slow
@pytest.mark.parametrize("q,s,case", [("4", "-1/4", "subcritical-critical"),
                                      ("4", "-2/5", "supercritical")])
def test_c09_pipeline(tmp_path, q, s, case):
    title = "end-to-end pipeline on 64^3"
    cfg = tmp_path / "run.ini"
    cfg.write_text(PIPELINE_INI.format(q=q, s=s))
    t0 = time.perf_counter()
    ok = False
    try:
        code = main(["--config", str(cfg), "--out", str(tmp_path / "out"), "calderon"])
        elapsed = time.perf_counter() - t0
        rep = json.loads((tmp_path / "out" / "calderon_report.json").read_text())
        ok = code == EXIT_OK and rep["passed"] and rep["case"] == case and elapsed <= PIPELINE_BUDGET_S
        assert code == EXIT_OK, [k for k, v in rep["checks"].items() if not v]
        assert rep["case"] == case
        assert elapsed <= PIPELINE_BUDGET_S
    finally:
        prev = _PIPELINE.setdefault("runs", [])
        prev.append((f"({q},{s})", ok, time.perf_counter() - t0))
        record(9, title, all(r[1] for r in prev) and len(prev) == 2,
               ", ".join(f"{n} {'ok' if r else 'failed'} {t:.0f}s" for n, r, t in prev))


_PIPELINE = {}


@_verdict(10, "scanner ground truth, benchmarks, pigeonhole audit")
def test_c10_scanner(detail):
    cfg = ScanConfig(rho=0.5)
    assert cfg.eps_tilde < 0.5
    assert cfg.min_branch == "eps_bar^(4/3)*rho/omega3^(1/3)"
    assert cfg.min_threshold == cfg.threshold_p2
    rng = np.random.default_rng(77)
    for i in range(PLANTED_CONSTRUCTIONS):
        k = int(rng.integers(0, 6))
        fx = planted_bumps(GRID64, k, cfg, rng)
        reps = scan_cylinders(fx.w, fx.pi1, fx.pi2, fx.centers, cfg)
        audit = pigeonhole_count(reps, cfg, GRID64,
                                 global_sum=global_integrals(fx.w, fx.pi1, fx.pi2, cfg))
        assert audit.count == k, i
        assert audit.holds, i
    centers = lattice_centers(GRID64, cfg.rho)
    worst = 0.0
    for name, (w, p1, p2) in smooth_benchmarks(GRID64).items():
        reps = scan_cylinders(w, p1, p2, centers, cfg)
        audit = pigeonhole_count(reps, cfg, GRID64, global_sum=global_integrals(w, p1, p2, cfg))
        assert audit.count == 0, name
        assert audit.holds, name
        worst = max(worst, max(max(r.int_w / cfg.threshold_w, r.int_p1 / cfg.threshold_p1,
                                   r.int_p2 / cfg.threshold_p2) for r in reps))
    detail["benchmark_worst_ratio"] = f"{worst:.1e}"
    detail["planted"] = PLANTED_CONSTRUCTIONS


@_verdict(11, "rescaling and isolation bookkeeping")
def test_c11_isolation(detail):
    rng = np.random.default_rng(11)
    certified = 0
    for i in range(ISOLATION_CLOUDS):
        n = int(rng.integers(2, 60))
        t_n = -float(rng.uniform(1e-3, 2.0))
        rho = float(rng.uniform(0.2, 2.0))
        if i % 2:
            # well-separated cloud meeting the sufficient condition
            lam = math.sqrt(-t_n)
            pts = np.array([c * 2.0 * lam * 1.0001 for c in
                            rng.permutation(np.argwhere(np.ones((4, 4, 4))))[:n]], float)
        else:
            pts = rng.uniform(-2, 2, (n, 3))
        res = rescale_and_isolate(pts, t_n, rho=rho)
        assert np.array_equal(res.isolated, isolation_bruteforce(res.rescaled, rho)), i
        unit = rescale_and_isolate(pts, t_n, rho=1.0)
        assert unit.implication_holds, i
        if unit.condition_met:
            assert np.all(unit.isolated)
            certified += 1
    boundary = rescale_and_isolate([(0, 0, 0), (1.0, 0, 0)], -0.25)
    assert boundary.condition_met and np.all(boundary.isolated)
    detail["clouds"] = ISOLATION_CLOUDS
    detail["certified"] = certified
