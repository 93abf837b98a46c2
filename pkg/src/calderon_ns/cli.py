"""Command-line front end: ``calderon-ns {analyze,split,mild,calderon,scan,calibrate}``.

Runs are driven by an INI file (sections ``grid``, ``field``, ``split``,
``mild``, ``perturbed``, ``scan``, ``io``). Every JSON report embeds the
config hash and the calibration hash. Reports carry no timestamps or
timings, so identical configs and seeds give byte-identical outputs; wall
times go to the log only.

Exit codes: 0 when every check in scope passed, 2 when a check failed,
1 for usage errors and failed preconditions.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import logging
import math
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from . import __version__
from .calibration import CalibrationError, CalibrationSet, load_calibration, run_calibration
from .fields import multiscale_bump_field
from .littlewood_paley import (
    BesovIndex, KatoIndex, besov_norm, build_partition, heatflow_besov_norm, kato_norm,
)
from .mild import (
    MildConfig, NonConvergenceError, SmallnessError, heat_trajectory, kato_to_lebesgue_bound,
    persistency_check, picard_solve, tensor_l2_check,
)
from .perturbed import PerturbedConfig
from .pipeline import PipelineConfig, StageError, theoremA_pipeline
from .scanner import (
    ScanConfig, ScanError, global_integrals, lattice_centers, pigeonhole_count, planted_bumps,
    pressures_along, scan_cylinders, smooth_benchmarks,
)
from .spectral import Grid3, SpectralField, divergence_defect, lp_norm, random_solenoidal, to_physical
from .splitting import (
    AdmissibilityError, SplitCalibration, choose_epsilon_theoremA, derive_params,
    interpolated_critical_norm, split,
)
from .vf1 import VF1Error, read_vf1, write_vf1

log = logging.getLogger("calderon_ns")

EXIT_OK, EXIT_USAGE, EXIT_CHECK = 0, 1, 2

DEFAULTS = {
    "grid": {"n": "32", "box_len": repr(2 * math.pi), "dealias_fraction": repr(2 / 3)},
    "field": {"source": "bump", "amplitude": "1.0"},
    "split": {"q": "4", "s": "-0.25", "epsilon": "auto"},
    "mild": {"T": "0.5", "residual_tol": "1e-8", "max_iters": "10", "steps_per_decade": "8",
             "calibration": "", "calibration_iters": "3"},
    "perturbed": {"T": "0.5", "dt": "5e-3", "tol_energy": "1e-6"},
    "scan": {"epsilon": "0.1", "rho": "0.5", "centers": "", "source": "planted",
             "plants": "3", "width": "0.2", "normalize": "false"},
    "io": {"out": "out", "seed": "0"},
}


class UsageError(Exception):
    pass


# -- configuration ------------------------------------------------------------------

def load_config(path: str | None, overrides: dict) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp.read_dict(DEFAULTS)
    if path:
        p = Path(path)
        if not p.exists():
            raise UsageError(f"config file {p} does not exist")
        try:
            cp.read(p)
        except configparser.Error as exc:
            raise UsageError(f"cannot parse {p}: {exc}") from exc
        base = p.parent
        # referenced paths are resolved relative to the config file
        for sec, key in (("mild", "calibration"), ("scan", "centers"), ("field", "source")):
            val = cp.get(sec, key)
            if val and (val.endswith(".vf1") or val.endswith(".json") or val.endswith(".csv")):
                cp.set(sec, key, str((base / val)) if not Path(val).is_absolute() else val)
    for (sec, key), val in overrides.items():
        if val is not None:
            cp.set(sec, key, str(val))
    for sec, key in (("mild", "calibration"), ("scan", "centers")):
        val = cp.get(sec, key)
        if val and not Path(val).exists():
            raise UsageError(f"[{sec}] {key} = {val} does not exist")
    src = cp.get("field", "source")
    if src.endswith(".vf1") and not Path(src).exists():
        raise UsageError(f"[field] source = {src} does not exist")
    return cp


def config_echo(cp: configparser.ConfigParser) -> dict:
    out = {}
    for sec in cp.sections():
        out[sec] = {k: cp.get(sec, k) for k in sorted(cp.options(sec))}
    out["io"].pop("out", None)     # where results go does not change them
    return out


def config_hash(cp: configparser.ConfigParser) -> str:
    blob = json.dumps(config_echo(cp), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _getfloat(cp, sec, key) -> float:
    try:
        return cp.getfloat(sec, key)
    except ValueError as exc:
        raise UsageError(f"[{sec}] {key} must be a number") from exc


def _getint(cp, sec, key) -> int:
    try:
        return cp.getint(sec, key)
    except ValueError as exc:
        raise UsageError(f"[{sec}] {key} must be an integer") from exc


def _exact(text: str) -> Fraction:
    try:
        return Fraction(text.strip())
    except ValueError as exc:
        raise UsageError(f"cannot read {text!r} as a number") from exc


def grid_from(cp) -> Grid3:
    try:
        return Grid3(_getint(cp, "grid", "n"), _getfloat(cp, "grid", "box_len"),
                     _getfloat(cp, "grid", "dealias_fraction"))
    except ValueError as exc:
        raise UsageError(f"[grid] {exc}") from exc


def datum_from(cp, grid: Grid3, seed: int, q: float, s: float) -> SpectralField:
    src = cp.get("field", "source")
    amp = _getfloat(cp, "field", "amplitude")
    rng = np.random.default_rng(seed)
    if src == "zero":
        return SpectralField.zeros(grid)
    if src == "bump":
        return multiscale_bump_field(grid, q, s, rng) * amp
    if src == "random":
        return random_solenoidal(grid, rng, kmax=4) * amp
    if src.endswith(".vf1"):
        try:
            f = read_vf1(src)
        except VF1Error as exc:
            raise UsageError(f"bad field file {src}: {exc}") from exc
        if f.grid != grid:
            raise UsageError(f"field file {src} is on a {f.grid.n}^3 grid, config says {grid.n}^3")
        return f * amp
    raise UsageError(f"[field] source must be zero, bump, random or a .vf1 path, got {src!r}")


def qs_from(cp):
    q, s = _exact(cp.get("split", "q")), _exact(cp.get("split", "s"))
    try:
        params = derive_params(q, s)
    except AdmissibilityError as exc:
        raise UsageError(f"(q, s) = ({float(q)}, {float(s)}) is not admissible: {exc}") from exc
    return q, s, params


# -- output ---------------------------------------------------------------------------

def _jsonable(x):
    if isinstance(x, (np.floating, Fraction)):
        return float(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, tuple):
        return list(x)
    raise TypeError(f"cannot serialize {type(x).__name__}")


def write_json(path: Path, payload: dict) -> Path:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


class Run:
    """Per-invocation context: config, output directory, hashes."""

    def __init__(self, cp, out: Path, command: str):
        self.cp = cp
        self.out = out
        self.command = command
        self.seed = _getint(cp, "io", "seed")
        self.config_hash = config_hash(cp)
        self.calibration_hash = None
        out.mkdir(parents=True, exist_ok=True)

    def report(self, name: str, checks: dict, body: dict) -> int:
        passed = all(bool(v) for v in checks.values())
        payload = {"command": self.command, "version": __version__,
                   "config_hash": self.config_hash, "calibration_hash": self.calibration_hash,
                   "config": config_echo(self.cp), "checks": checks, "passed": passed, **body}
        write_json(self.out / name, payload)
        for k, v in checks.items():
            log.info("check %-28s %s", k, "pass" if v else "FAIL")
        return EXIT_OK if passed else EXIT_CHECK

    def checkpoint(self, name: str, field: SpectralField, **params):
        write_vf1(self.out / name, field,
                  provenance={"command": self.command, "config_hash": self.config_hash},
                  parameters=params)

    def calibration(self, grid: Grid3, q, s, params) -> CalibrationSet:
        path = self.cp.get("mild", "calibration")
        if path:
            try:
                cal = load_calibration(path)
                cal.check_grid(grid)
            except CalibrationError as exc:
                raise UsageError(str(exc)) from exc
        else:
            t0 = time.perf_counter()
            cal = run_calibration(grid, [(q, s)], _getfloat(self.cp, "mild", "T"), self.seed,
                                  iters=_getint(self.cp, "mild", "calibration_iters"),
                                  base=mild_config(self.cp))
            cal.save(self.out / "calibration.json")
            log.info("calibrated smallness inline in %.1f s", time.perf_counter() - t0)
        self.calibration_hash = cal.calibration_hash()
        return cal


def mild_config(cp, p: float = 8.0, delta: float = 0.125) -> MildConfig:
    return MildConfig(horizon=_getfloat(cp, "mild", "T"),
                      steps_per_decade=_getint(cp, "mild", "steps_per_decade"),
                      max_iters=_getint(cp, "mild", "max_iters"),
                      residual_tol=_getfloat(cp, "mild", "residual_tol"), p=p, delta=delta)


# -- subcommands ----------------------------------------------------------------------

def parse_space(spec: str):
    """``besov:s,p,r`` | ``lebesgue:p`` | ``heatflow:s,p`` | ``kato:p,delta`` (heat flow of the field)."""
    try:
        kind, _, args = spec.partition(":")
        vals = [float(a) for a in args.split(",")] if args else []
    except ValueError as exc:
        raise UsageError(f"invalid space spec {spec!r}") from exc
    arity = {"besov": 3, "lebesgue": 1, "heatflow": 2, "kato": 2}
    if kind not in arity or len(vals) != arity[kind]:
        raise UsageError(f"invalid space spec {spec!r}; expected one of besov:s,p,r  lebesgue:p  "
                         "heatflow:s,p  kato:p,delta")
    return kind, vals


def cmd_analyze(run: Run, args) -> int:
    try:
        f = read_vf1(args.field)
    except (VF1Error, OSError) as exc:
        raise UsageError(f"bad field file {args.field}: {exc}") from exc
    specs = [parse_space(s) for s in args.spaces]
    part = build_partition(f.grid)
    rows = []
    for (kind, vals), text in zip(specs, args.spaces):
        try:
            if kind == "besov":
                v = besov_norm(f, BesovIndex(*vals), part)
            elif kind == "lebesgue":
                v = lp_norm(to_physical(f), vals[0])
            elif kind == "heatflow":
                v = heatflow_besov_norm(f, vals[0], vals[1])
            else:
                cfg = MildConfig(p=vals[0], delta=vals[1])
                v = kato_norm(heat_trajectory(f, cfg), KatoIndex(vals[0], vals[1]))
        except ValueError as exc:
            raise UsageError(f"invalid space spec {text!r}: {exc}") from exc
        rows.append({"space": text, "value": float(v)})
    with open(run.out / "norms.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["space", "value"])
        for r in rows:
            w.writerow([r["space"], repr(r["value"])])
    return run.report("norms.json", {}, {"field": Path(args.field).name,
                                         "grid": f.grid.describe(),
                                         "partition_hash": part.partition_hash(), "norms": rows})


def cmd_split(run: Run, args) -> int:
    cp = run.cp
    q, s, params = qs_from(cp)
    grid = grid_from(cp)
    u0 = datum_from(cp, grid, run.seed, float(q), float(s))
    part = build_partition(grid)
    M = besov_norm(u0, BesovIndex(float(s), float(q), math.inf), part)
    eps_text = cp.get("split", "epsilon")
    if eps_text == "auto":
        if M == 0:
            eps = 1.0
        else:
            eps = choose_epsilon_theoremA(M, params, SplitCalibration())
    else:
        eps = _getfloat(cp, "split", "epsilon")
    try:
        res = split(u0, eps, params, part)
    except ValueError as exc:
        raise UsageError(f"[split] {exc}") from exc
    crit = interpolated_critical_norm(res.m0, params, part)
    scale = np.abs(u0.coeffs).max()
    recon = float(np.abs(res.m0.coeffs + res.w0.coeffs - u0.coeffs).max())
    checks = {"reconstruction": recon <= 1e-12 * max(scale, 1e-300) or recon == 0,
              "divergence": max(divergence_defect(res.m0), divergence_defect(res.w0)) <= 1e-10,
              "critical_interpolation": crit.holds}
    run.checkpoint("m0.vf1", res.m0, piece="m0", epsilon=eps)
    run.checkpoint("w0.vf1", res.w0, piece="w0", epsilon=eps)
    return run.report("split_report.json", checks, {
        "params": params.as_floats(), "epsilon": eps, "split": res.report,
        "critical_norm": crit.critical, "critical_bound": crit.bound,
        "reconstruction_error": recon})


def cmd_mild(run: Run, args) -> int:
    cp = run.cp
    q, s, params = qs_from(cp)
    grid = grid_from(cp)
    v0 = datum_from(cp, grid, run.seed, float(q), float(s))
    p, delta = float(params.p), float(params.delta)
    cfg = mild_config(cp, p, delta)
    cal = run.calibration(grid, q, s, params).lookup(p, delta)
    try:
        v, diag = picard_solve(v0, cfg, cal)
    except SmallnessError as exc:
        raise UsageError(f"[mild] {exc}") from exc
    except NonConvergenceError as exc:
        exc.diagnostics.write_csv(run.out / "picard.csv")
        return run.report("mild_report.json", {"picard_converged": False},
                          {"diagnostics": exc.diagnostics.summary()})
    diag.write_csv(run.out / "picard.csv")
    pers = persistency_check(v, "kato_p_delta", cfg, 1.05)
    leb = kato_to_lebesgue_bound(v, p, delta)
    tens = tensor_l2_check(v, delta)
    checks = {"picard_converged": diag.converged, "picard_factor_two": diag.factor_two_holds,
              "persistency_kato": pers.holds, "kato_to_lebesgue": leb.holds,
              "mm_l2_chain": tens.holds}
    run.checkpoint("m_T.vf1", v.fields[-1], t=v.horizon)
    return run.report("mild_report.json", checks, {
        "params": {"p": p, "delta": delta}, "diagnostics": diag.summary(),
        "persistency_ratio": pers.details["ratio"], "lebesgue": [leb.value, leb.bound],
        "mm_l2": [tens.value, tens.bound]})


def _pipeline_config(cp) -> PipelineConfig:
    T = _getfloat(cp, "perturbed", "T")
    pert = PerturbedConfig(T=T, dt=_getfloat(cp, "perturbed", "dt"),
                           tol_energy=_getfloat(cp, "perturbed", "tol_energy"))
    eps = cp.get("split", "epsilon")
    return PipelineConfig(T=T, mild=mild_config(cp), perturbed=pert,
                          epsilon=None if eps == "auto" else _getfloat(cp, "split", "epsilon"))


def run_pipeline(run: Run):
    cp = run.cp
    q, s, params = qs_from(cp)
    grid = grid_from(cp)
    u0 = datum_from(cp, grid, run.seed, float(q), float(s))
    if np.abs(u0.coeffs).max() == 0:
        calib = None   # zero data never reaches the mild stage
    else:
        cset = run.calibration(grid, q, s, params)
        try:
            calib = cset.lookup(float(params.p), float(params.delta))
        except CalibrationError as exc:
            raise UsageError(str(exc)) from exc
    rep = theoremA_pipeline(u0, q, s, _pipeline_config(cp), calib)
    return u0, rep


def cmd_calderon(run: Run, args) -> int:
    try:
        u0, rep = run_pipeline(run)
    except StageError as exc:
        if exc.stage == "params":
            raise UsageError(str(exc)) from exc
        return run.report("calderon_report.json", {f"stage_{exc.stage}": False},
                          {"error": str(exc)})
    for k, v in rep.timings.items():
        log.info("stage %-10s %.1f s", k, v)
    if rep.w is not None:
        rep.w.ledger.write_csv(run.out / "energy_ledger.csv")
        run.checkpoint("w0.vf1", rep.split_result.w0, piece="w0")
        run.checkpoint("m0.vf1", rep.split_result.m0, piece="m0")
        run.checkpoint("u_T.vf1", rep.composed.u.fields[-1], t=rep.composed.u.horizon)
    if rep.picard is not None:
        rep.picard.write_csv(run.out / "picard.csv")
    body = {k: v for k, v in rep.summary().items() if k not in ("checks", "passed", "timings")}
    return run.report("calderon_report.json", dict(rep.checks), body)


def read_centers(path) -> list:
    try:
        data = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise UsageError(f"centers file {path} must be CSV rows x,y,z") from exc
    if data.shape[1] != 3:
        raise UsageError(f"centers file {path} must have three columns")
    return [tuple(r) for r in data]


def cmd_scan(run: Run, args) -> int:
    cp = run.cp
    grid = grid_from(cp)
    try:
        cfg = ScanConfig(epsilon=_getfloat(cp, "scan", "epsilon"), rho=_getfloat(cp, "scan", "rho"),
                         normalize=cp.getboolean("scan", "normalize"))
    except ScanError as exc:
        raise UsageError(f"[scan] {exc}") from exc
    source = cp.get("scan", "source")
    expected = None
    if source == "planted":
        rng = np.random.default_rng(run.seed)
        fx = planted_bumps(grid, _getint(cp, "scan", "plants"), cfg, rng,
                           width=_getfloat(cp, "scan", "width"))
        w, p1, p2, centers = fx.w, fx.pi1, fx.pi2, fx.centers
        expected = len(fx.planted)
    elif source == "benchmark":
        cases = smooth_benchmarks(grid, T=_getfloat(cp, "perturbed", "T"),
                                  dt=_getfloat(cp, "perturbed", "dt"), seed=run.seed)
        w, p1, p2 = cases["random_coupled"]
        centers = lattice_centers(grid, cfg.rho)
        expected = 0
    elif source == "calderon":
        try:
            _, rep = run_pipeline(run)
        except StageError as exc:
            raise UsageError(str(exc)) from exc
        if rep.w is None:
            raise UsageError("zero data: nothing to scan")
        w = rep.w.trajectory
        p1, p2 = pressures_along(w, rep.m)
        centers = lattice_centers(grid, cfg.rho)
    else:
        raise UsageError(f"[scan] source must be planted, benchmark or calderon, got {source!r}")
    if cp.get("scan", "centers"):
        centers = read_centers(cp.get("scan", "centers"))
    try:
        reps = scan_cylinders(w, p1, p2, centers, cfg)
        audit = pigeonhole_count(reps, cfg, grid, global_sum=global_integrals(w, p1, p2, cfg))
    except ScanError as exc:
        raise UsageError(f"[scan] {exc}") from exc
    with open(run.out / "cylinders.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["x", "y", "z", "int_w", "int_p1", "int_p2", "branch", "flagged"])
        for r in reps:
            wr.writerow([repr(c) for c in r.center] + [repr(r.int_w), repr(r.int_p1),
                         repr(r.int_p2), r.branch or "", int(r.flagged)])
    checks = {"pigeonhole_inequality": audit.holds}
    if expected is not None:
        checks["count_matches_ground_truth"] = audit.count == expected
    return run.report("scan_report.json", checks, {
        "scan_config": cfg.echo(), "source": source, "expected_count": expected,
        "audit": audit.to_json(), "cylinders": [r.to_json() for r in reps]})


def cmd_calibrate(run: Run, args) -> int:
    cp = run.cp
    grid = grid_from(cp)
    pairs = []
    for text in args.pairs or [f"{cp.get('split', 'q')},{cp.get('split', 's')}"]:
        try:
            q, s = (_exact(t) for t in text.split(","))
            derive_params(q, s)
        except (ValueError, AdmissibilityError) as exc:
            raise UsageError(f"bad (q, s) pair {text!r}: {exc}") from exc
        pairs.append((q, s))
    cal = run_calibration(grid, pairs, _getfloat(cp, "mild", "T"), run.seed,
                          iters=_getint(cp, "mild", "calibration_iters"), base=mild_config(cp))
    cal.save(run.out / "calibration.json")
    run.calibration_hash = cal.calibration_hash()
    return run.report("calibrate_report.json", {"positive_constants": all(e.c1 > 0 for e in cal.entries)},
                      {"entries": [e.to_json() for e in cal.entries]})


COMMANDS = {"analyze": cmd_analyze, "split": cmd_split, "mild": cmd_mild,
            "calderon": cmd_calderon, "scan": cmd_scan, "calibrate": cmd_calibrate}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="calderon-ns", description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="INI run configuration")
    ap.add_argument("--out", help="output directory (overrides [io] out)")
    ap.add_argument("--seed", type=int, help="seed for all random fields (overrides [io] seed)")
    ap.add_argument("--threads", type=int, default=1, help="FFT worker threads")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    an = sub.add_parser("analyze", help="norm table of a VF1 field")
    an.add_argument("field")
    an.add_argument("spaces", nargs="+", help="besov:s,p,r lebesgue:p heatflow:s,p kato:p,delta")
    sub.add_parser("split", help="split the datum into energy and small pieces")
    sub.add_parser("mild", help="mild solution from the datum with Picard diagnostics")
    sub.add_parser("calderon", help="full split / mild / perturbed / compose pipeline")
    sub.add_parser("scan", help="cylinder concentration scan and pigeonhole audit")
    cal = sub.add_parser("calibrate", help="measure smallness constants for (q, s) pairs")
    cal.add_argument("pairs", nargs="*", help="q,s pairs such as 4,-1/4")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cp = load_config(args.config, {("io", "out"): args.out, ("io", "seed"): args.seed})
        run = Run(cp, Path(cp.get("io", "out")), args.command)
        if args.threads < 1:
            raise UsageError("--threads must be positive")
        with sfft.set_workers(args.threads):
            code = COMMANDS[args.command](run, args)
    except UsageError as exc:
        print(f"calderon-ns {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return code


if __name__ == "__main__":
    sys.exit(main())
