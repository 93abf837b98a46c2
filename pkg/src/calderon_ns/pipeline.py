"""End-to-end decomposition ``u = m + w`` of a Navier-Stokes flow from rough data.

Stages, each tagged in errors and in the report:

``params``   admissibility and the exponent bundle for (q, s)
``split``    epsilon choice, blockwise splitting and the critical-norm gate
``mild``     Picard iteration for ``m`` from ``m0``
``perturbed`` time stepping of ``w`` against ``m``
``compose``  ``u = m + w``, pressures, step residuals and the local checks
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .littlewood_paley import (
    BesovIndex, KatoIndex, besov_norm, build_partition, kato_weighted_norms, smooth_step,
)
from .mild import (
    MildConfig, NonConvergenceError, SmallnessCalibration, SmallnessError, kato_to_lebesgue_bound,
    persistency_check, picard_solve, smallness_surrogate, tensor_l2_check,
)
from .perturbed import (
    CFLError, PerturbedConfig, compose_solution, solve_perturbed,
)
from .spectral import (
    Grid3, SpectralField, divergence_defect, inner_product, perturbed_pressure,
    taylor_green, to_physical, to_spectral, PhysicalField,
)
from .splitting import (
    AdmissibilityError, SplitCalibration, choose_epsilon_theoremA, derive_params,
    interpolated_critical_norm, split,
)
from .trajectory import KatoTrajectory


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass(frozen=True)
class PipelineConfig:
    T: float = 1.0
    mild: MildConfig = MildConfig()
    perturbed: PerturbedConfig = PerturbedConfig()
    split_calibration: SplitCalibration = SplitCalibration()
    epsilon: float | None = None       # None: the Theorem A choice
    max_halvings: int = 12
    persistency_constant: float = 1.05
    bump_radius_fraction: float = 0.25  # of the box length
    continuity_samples: int = 5


@dataclass(eq=False)
class PipelineReport:
    q: float
    s: float
    case: str
    stages: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    m: KatoTrajectory | None = None
    w: object = None
    composed: object = None
    split_result: object = None
    picard: object = None

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def failed_checks(self) -> list:
        return [k for k, v in self.checks.items() if not v]

    def summary(self) -> dict:
        return {"q": self.q, "s": self.s, "case": self.case, "passed": self.passed,
                "checks": dict(self.checks), "stages": self.stages, "timings": self.timings}


# -- local checks -------------------------------------------------------------

def _periodic_offset(grid: Grid3, center):
    L = grid.box_len
    x, y, z = grid.mesh()
    out = []
    for xi, ci in zip((x, y, z), center):
        d = (xi - ci + L / 2) % L - L / 2
        out.append(d)
    return out


def bump_test_function(grid: Grid3, center, radius: float):
    """Smooth compactly supported bump with its gradient and Laplacian.

    ``psi = exp(1 - 1/(1 - r^2/R^2))`` inside the ball and zero outside. The
    derivatives are taken spectrally from the samples so that the lattice
    sums obey discrete integration by parts exactly; closed-form derivatives
    sampled on a coarse lattice do not integrate to zero.
    """
    if not 0 < radius < grid.box_len / 2:
        raise ValueError("bump radius must fit in half the box")
    dx, dy, dz = _periodic_offset(grid, center)
    rho2 = (dx ** 2 + dy ** 2 + dz ** 2) / radius ** 2
    inside = rho2 < 1
    a = np.where(inside, 1 - rho2, 1.0)
    psi = np.where(inside, np.exp(1 - 1 / a), 0.0)
    hat = to_spectral(PhysicalField(grid, psi[None])).coeffs[0]
    kv = grid.wavevectors
    grad = np.stack([to_physical(SpectralField(grid, (1j * k * hat)[None])).values[0]
                     for k in kv])
    lap = to_physical(SpectralField(grid, (-grid.k2 * hat)[None])).values[0]
    return psi, grad, lap


def _phys(f: SpectralField) -> np.ndarray:
    return to_physical(f.replace(f.coeffs * f.grid.dealias_mask)).values


def _jacobian(w: SpectralField) -> np.ndarray:
    """``J[i, j] = d_i w_j`` in physical space."""
    g = w.grid
    kv = g.wavevectors
    wm = w.coeffs * g.dealias_mask
    out = np.empty((3, 3) + g.physical_shape)
    for i in range(3):
        out[i] = to_physical(SpectralField(g, 1j * kv[i] * wm)).values
    return out


def local_energy_terms(w: SpectralField, m: SpectralField, psi, grad_psi, lap_psi) -> dict:
    """Spatial integrands of the localized energy balance at one time."""
    g = w.grid
    dv = g.cell_volume
    wp, mp = _phys(w), _phys(m)
    pi1, pi2 = perturbed_pressure(w, m, check_tol=1e-8)
    pi = to_physical(pi1 + pi2).values[0]
    jac = _jacobian(w)
    w2 = np.sum(wp ** 2, axis=0)
    grad2 = np.sum(jac ** 2, axis=(0, 1))
    flux = (w2 * (wp + mp) + 2 * pi * wp)
    w_dot_gpsi = np.sum(wp * grad_psi, axis=0)
    m_dot_w = np.sum(mp * wp, axis=0)
    adv = np.einsum("i...,ij...->j...", wp, jac)  # (w . grad) w
    return {
        "mass": float(np.sum(w2 * psi) * dv),
        "dissipation": float(2 * np.sum(grad2 * psi) * dv),
        "heat": float(np.sum(w2 * lap_psi) * dv),
        "flux": float(np.sum(np.sum(flux * grad_psi, axis=0)) * dv),
        "coupling": float(2 * np.sum(w_dot_gpsi * m_dot_w + np.sum(adv * mp, axis=0) * psi) * dv),
    }


def suitability_spot_check(w_traj: KatoTrajectory, m: KatoTrajectory | None, center,
                           radius: float, t_on: float, t_full: float, rtol: float = 1e-3) -> dict:
    """Localized energy inequality at the final time with ``phi = psi(x) eta(t)``.

    ``eta`` rises smoothly from 0 at ``t_on`` to 1 at ``t_full``, so ``phi``
    vanishes near the initial time. Time integrals use the trapezoid rule on
    the samples of ``w``. Returns the slack ``rhs - lhs`` and whether it is
    above ``-rtol`` times the size of the terms.
    """
    grid = w_traj.grid
    psi, gpsi, lpsi = bump_test_function(grid, center, radius)
    width = t_full - t_on

    def eta(t):
        return float(smooth_step(np.clip((t - t_on) / width, 0, 1)))

    def deta(t, h=1e-6):
        return (eta(t + h * width) - eta(t - h * width)) / (2 * h * width)

    zero = SpectralField.zeros(grid)
    times = w_traj.times
    lhs_int, rhs_int, size_int = [], [], []
    keep = times >= t_on
    sel = np.nonzero(keep)[0]
    if sel.size < 3:
        raise ValueError("too few samples inside the test-function window")
    last = None
    for i in sel:
        t = times[i]
        mt = zero if m is None else m.at(min(t, m.horizon))
        terms = local_energy_terms(w_traj.fields[i], mt, psi, gpsi, lpsi)
        e, de = eta(t), deta(t)
        lhs_int.append(e * terms["dissipation"])
        rhs_parts = (de * terms["mass"], e * terms["heat"], e * terms["flux"],
                     e * terms["coupling"])
        rhs_int.append(sum(rhs_parts))
        size_int.append(sum(abs(x) for x in rhs_parts) + abs(lhs_int[-1]))
        last = terms
    ts = times[sel]
    lhs = eta(ts[-1]) * last["mass"] + np.trapezoid(lhs_int, ts)
    rhs = np.trapezoid(rhs_int, ts)
    size = np.trapezoid(size_int, ts) + abs(eta(ts[-1]) * last["mass"])
    slack = float(rhs - lhs)
    return {"lhs": float(lhs), "rhs": float(rhs), "slack": slack, "scale": float(size),
            "relative_slack": slack / size if size > 0 else 0.0,
            "holds": bool(slack >= -rtol * size)}


# -- the pipeline ---------------------------------------------------------------

def _kato_record(traj: KatoTrajectory, p: float, delta: float) -> dict:
    out = {}
    for name, idx in (("K_p_delta", KatoIndex(p, delta)), ("K_inf_delta", KatoIndex(math.inf, delta)),
                      ("K_p", KatoIndex(p, 0.0)), ("K_inf", KatoIndex(math.inf, 0.0))):
        out[name] = float(kato_weighted_norms(traj, idx).max())
    return out


def _zero_report(u0: SpectralField, q, s, params) -> PipelineReport:
    rep = PipelineReport(float(q), float(s), params.case)
    grid = u0.grid
    rep.stages["split"] = {"u0_norm": 0.0, "epsilon": None, "halvings": 0}
    rep.stages["mild"] = {"iterations": 0, "residual": 0.0}
    rep.stages["perturbed"] = {"E": 0.0, "inequality_slack": 0.0}
    rep.checks.update({"zero_data": bool(np.abs(u0.coeffs).max() == 0)})
    rep.m = KatoTrajectory(grid, [1.0], [SpectralField.zeros(grid)], initial=u0)
    return rep


def theoremA_pipeline(u0: SpectralField, q, s, cfg: PipelineConfig,
                      calib: SmallnessCalibration, part=None, center=None) -> PipelineReport:
    """Run split, mild solve, perturbed solve and composition with all checks."""
    clock = time.perf_counter
    t_start = clock()
    try:
        params = derive_params(q, s)
    except AdmissibilityError as exc:
        raise StageError("params", str(exc)) from exc
    grid = u0.grid
    if divergence_defect(u0) > 1e-10:
        raise StageError("split", "u0 must be divergence-free")
    scale = np.abs(u0.coeffs).max()
    if scale > 0 and np.abs(u0.coeffs[:, 0, 0, 0]).max() > 1e-10 * scale:
        raise StageError("split", "u0 must have zero mean")
    if scale == 0:
        return _zero_report(u0, q, s, params)
    p, delta = float(params.p), float(params.delta)
    if calib.grid_hash != grid.grid_hash():
        raise StageError("mild", "smallness calibration belongs to a different grid")
    if not (math.isclose(calib.p, p, rel_tol=1e-9) and math.isclose(calib.delta, delta, rel_tol=1e-9)):
        raise StageError("mild", f"smallness calibration is for (p, delta) = ({calib.p}, "
                                 f"{calib.delta}), need ({p}, {delta})")
    part = build_partition(grid) if part is None else part
    rep = PipelineReport(float(q), float(s), params.case)
    mcfg = replace(cfg.mild, horizon=cfg.T, p=p, delta=delta)
    pcfg = replace(cfg.perturbed, T=cfg.T)

    # split with the critical-norm and smallness gates
    t0 = clock()
    M = besov_norm(u0, BesovIndex(float(s), float(q), math.inf), part)
    eps = cfg.epsilon if cfg.epsilon is not None else choose_epsilon_theoremA(
        M, params, replace(cfg.split_calibration, c_small=calib.c1))
    halvings = 0
    while True:
        res = split(u0, eps, params, part)
        crit = interpolated_critical_norm(res.m0, params, part)
        small = smallness_surrogate(res.m0, mcfg)
        if crit.holds and small <= calib.c1:
            break
        if halvings >= cfg.max_halvings:
            raise StageError("split", f"gates still failing after {halvings} halvings of epsilon")
        eps *= 0.5
        halvings += 1
    rep.split_result = res
    rep.stages["split"] = {**res.report, "halvings": halvings, "critical_norm": crit.critical,
                           "critical_bound": crit.bound, "smallness": small,
                           "smallness_threshold": calib.c1, "p": p, "delta": delta,
                           "theta": float(params.theta)}
    rep.checks["critical_interpolation"] = crit.holds
    rep.checks["reconstruction"] = bool(
        np.abs(res.m0.coeffs + res.w0.coeffs - u0.coeffs).max() <= 1e-12 * scale)
    rep.checks["split_divergence"] = bool(max(divergence_defect(res.m0),
                                              divergence_defect(res.w0)) <= 1e-10)
    rep.timings["split"] = clock() - t0

    # mild solution for m
    t0 = clock()
    try:
        m, diag = picard_solve(res.m0, mcfg, calib)
    except (SmallnessError, NonConvergenceError) as exc:
        raise StageError("mild", str(exc)) from exc
    rep.m = m
    rep.picard = diag
    kato = _kato_record(m, p, delta)
    pers_l2 = persistency_check(m, "l2", mcfg, cfg.persistency_constant)
    pers_k = persistency_check(m, "kato_p_delta", mcfg, cfg.persistency_constant)
    leb = kato_to_lebesgue_bound(m, p, delta)
    tens = tensor_l2_check(m, delta)
    rep.stages["mild"] = {**diag.summary(), **kato, "persistency_l2_ratio": pers_l2.details["ratio"],
                          "persistency_kato_ratio": pers_k.details["ratio"],
                          "lebesgue_norm": leb.value, "lebesgue_bound": leb.bound,
                          "lebesgue_printed_holds": leb.details["printed_holds"],
                          "mm_l2": tens.value, "mm_l2_bound": tens.bound}
    rep.checks["picard_converged"] = diag.converged
    rep.checks["picard_factor_two"] = diag.factor_two_holds
    rep.checks["kato_norms_finite"] = all(math.isfinite(v) for v in kato.values())
    rep.checks["persistency_l2"] = pers_l2.holds
    rep.checks["persistency_kato"] = pers_k.holds
    rep.checks["kato_to_lebesgue"] = leb.holds
    rep.checks["mm_l2_chain"] = tens.holds
    rep.timings["mild"] = clock() - t0

    # perturbed solve for w
    t0 = clock()
    try:
        sol = solve_perturbed(res.w0, m, pcfg)
    except (CFLError, FloatingPointError, ValueError) as exc:
        raise StageError("perturbed", str(exc)) from exc
    rep.w = sol
    rep.stages["perturbed"] = sol.summary()
    rep.checks["energy_inequality"] = sol.energy_ok
    rep.checks["gronwall"] = sol.gronwall_ok
    rep.checks["w_divergence"] = sol.meta["max_divergence_defect"] <= 1e-10
    rep.timings["perturbed"] = clock() - t0

    # composition and local checks
    t0 = clock()
    comp = compose_solution(m, sol.trajectory)
    rep.composed = comp
    wt = sol.trajectory
    k = min(cfg.continuity_samples, len(wt.times))
    dists = [math.sqrt((wt.fields[i] - res.w0).energy()) for i in range(k)]
    probe = taylor_green(grid)
    pairs = [abs(inner_product(wt.fields[i] - res.w0, probe)) for i in range(k)]
    center = (grid.box_len / 2,) * 3 if center is None else center
    radius = cfg.bump_radius_fraction * grid.box_len
    suit = suitability_spot_check(wt, m, center, radius, cfg.T / 4, cfg.T / 2)
    rep.stages["compose"] = {"residual_u": comp.residual_u, "residual_m": comp.residual_m,
                             "residual_w": comp.residual_w, "l2_continuity": dists,
                             "weak_pairing": pairs, "suitability": suit}
    rep.checks["composition_residual"] = comp.residual_ok
    rep.checks["l2_continuity_at_zero"] = bool(np.all(np.diff(dists) > 0)) and dists[0] < dists[-1]
    rep.checks["weak_continuity_proxy"] = bool(pairs[0] <= pairs[-1])
    rep.checks["suitability_spot_check"] = suit["holds"]
    rep.timings["compose"] = clock() - t0
    rep.timings["total"] = clock() - t_start
    return rep
