"""Mild solutions: heat trajectory, bilinear Duhamel term and Picard iteration.

The bilinear operator ``B(a, b)(t) = int_0^t e^{(t-s)Lap} F(s) ds`` with
``F = -P div((a(x)b + b(x)a)/2)`` is evaluated by product integration: the
forcing ``F`` is interpolated linearly in time between nodes and the heat
kernel is integrated exactly per Fourier mode. This handles the stiff
high-frequency decay and the integrable endpoint behaviour without having to
resolve ``exp(-|xi|^2 (t - s))`` with quadrature points.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .littlewood_paley import KatoIndex, heatflow_besov_norm, kato_weighted_norms
from .spectral import (
    Grid3, SpectralField, heat_semigroup, leray_project, lp_norm, stress_tensor,
    tensor_divergence, to_physical, to_spectral, PhysicalField,
)
from .trajectory import KatoTrajectory, log_time_grid


class SmallnessError(ValueError):
    """The datum is too large for the calibrated contraction regime."""


class NonConvergenceError(RuntimeError):
    """Picard iteration failed to converge; carries the diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class MildConfig:
    horizon: float = 1.0
    steps_per_decade: int = 8
    quad_nodes: int = 16
    max_iters: int = 10
    residual_tol: float = 1e-8
    p: float = 8.0
    delta: float = 0.125
    t_min: float | None = None  # default: 1e-4 (L / 2 pi)^2

    def __post_init__(self):
        if not (self.horizon > 0 and self.steps_per_decade > 0 and self.quad_nodes >= 2
                and self.max_iters > 0 and self.residual_tol > 0):
            raise ValueError("MildConfig values must be positive")
        KatoIndex(self.p, self.delta)  # validates the pair

    def times(self, grid: Grid3) -> np.ndarray:
        t_min = self.t_min if self.t_min is not None else 1e-4 * (grid.box_len / (2 * np.pi)) ** 2
        t_min = min(t_min, self.horizon / 10)
        return log_time_grid(t_min, self.horizon, self.steps_per_decade)

    @property
    def kato_index(self) -> KatoIndex:
        return KatoIndex(self.p, self.delta, self.horizon)

    @property
    def kato_inf_index(self) -> KatoIndex:
        return KatoIndex(math.inf, self.delta, self.horizon)


@dataclass(frozen=True)
class SmallnessCalibration:
    """Empirical stand-ins for the contraction constants at one (p, delta, grid)."""

    p: float
    delta: float
    grid_hash: str
    c1: float
    lam: float = float("nan")

    def __post_init__(self):
        if not self.c1 > 0:
            raise ValueError("c1 must be positive")

    def to_json(self) -> dict:
        return asdict(self)

    def calibration_hash(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# -- building blocks --------------------------------------------------------

def heat_trajectory(v0: SpectralField, cfg: MildConfig, times=None) -> KatoTrajectory:
    times = cfg.times(v0.grid) if times is None else np.asarray(times, float)
    fields = [heat_semigroup(v0, t) for t in times]
    return KatoTrajectory(v0.grid, times, fields, initial=v0)


def bilinear_forcing(a: SpectralField, b: SpectralField | None = None) -> np.ndarray:
    """``-P div((a (x) b + b (x) a) / 2)`` as a coefficient array."""
    grid = a.grid
    div = tensor_divergence(stress_tensor(a, b), grid)
    return -leray_project(SpectralField(grid, div)).coeffs * grid.dealias_mask


def _phi_weights(lam: np.ndarray):
    """Exact weights of ``int_0^1 e^{-lam (1-x)} (1-x, x) dx``.

    Returns (w_start, w_end) for a forcing that is linear on the interval.
    """
    w0 = np.ones_like(lam)
    w1 = np.full_like(lam, 0.5)
    big = lam > 1e-3
    lb = lam[big]
    em = np.expm1(-lb)
    w0[big] = -em / lb
    w1[big] = (lb + em) / lb ** 2
    small = ~big
    ls = lam[small]
    w0[small] = 1 - ls / 2 + ls ** 2 / 6 - ls ** 3 / 24
    w1[small] = 0.5 - ls / 6 + ls ** 2 / 24 - ls ** 3 / 120
    return w0 - w1, w1


def _propagate(grid: Grid3, nodes: np.ndarray, forcing: list) -> list:
    """Duhamel integral at every node for piecewise-linear forcing.

    ``nodes[0]`` must be 0 and ``forcing[i]`` is the forcing at ``nodes[i]``.
    """
    k2 = grid.k2
    out = [np.zeros_like(forcing[0])]
    acc = out[0]
    for i in range(len(nodes) - 1):
        h = nodes[i + 1] - nodes[i]
        lam = k2 * h
        wa, wb = _phi_weights(lam)
        acc = np.exp(-lam) * acc + h * (wa * forcing[i] + wb * forcing[i + 1])
        out.append(acc)
    return out


def graded_nodes(t: float, count: int) -> np.ndarray:
    """Chebyshev-Lobatto nodes on [0, t], clustered at both endpoints."""
    k = np.arange(count)
    nodes = 0.5 * t * (1 - np.cos(np.pi * k / (count - 1)))
    nodes[0], nodes[-1] = 0.0, t
    return nodes


def duhamel_bilinear(a: KatoTrajectory, b: KatoTrajectory, t: float,
                     nodes: int = 16) -> SpectralField:
    """``B(a, b)(t)`` by product integration on graded nodes."""
    if a.grid != b.grid:
        raise ValueError("trajectories live on different grids")
    span = min(a.horizon, b.horizon)
    if not 0 <= t <= span * (1 + 1e-12):
        raise ValueError(f"t = {t} outside the trajectories' span (0, {span}]")
    if t == 0:
        return SpectralField.zeros(a.grid)
    tau = graded_nodes(t, nodes)
    forcing = []
    for s in tau:
        fa, fb = a.at(s), b.at(s)
        forcing.append(bilinear_forcing(fa, fb))
    res = _propagate(a.grid, tau, forcing)[-1]
    return SpectralField(a.grid, res, divergence_free=True)


def _bilinear_on_grid(traj: KatoTrajectory) -> list:
    """``B(v, v)`` at every sample of ``traj``, using its own grid as nodes."""
    nodes = np.concatenate([[0.0], traj.times])
    init = traj.initial if traj.initial is not None else traj.fields[0]
    forcing = [bilinear_forcing(init)] + [bilinear_forcing(f) for f in traj.fields]
    return _propagate(traj.grid, nodes, forcing)[1:]


# -- Picard iteration -------------------------------------------------------

@dataclass
class PicardDiagnostics:
    rows: list = field(default_factory=list)  # (iter, kato_p_delta, kato_inf_delta, residual)
    heat_kato_p: float = 0.0
    heat_kato_inf: float = 0.0
    smallness: float = 0.0
    threshold: float = float("nan")
    converged: bool = False
    status: str = "pending"
    factor_two_holds: bool = False
    residual: float = float("nan")

    def write_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "kato_p_delta", "kato_inf_delta", "residual"])
            for row in self.rows:
                writer.writerow([row[0]] + [repr(float(x)) for x in row[1:]])
        return path

    def summary(self) -> dict:
        return {"iterations": len(self.rows), "converged": self.converged,
                "status": self.status, "residual": self.residual,
                "heat_kato_p": self.heat_kato_p, "heat_kato_inf": self.heat_kato_inf,
                "smallness": self.smallness, "threshold": self.threshold,
                "factor_two_holds": self.factor_two_holds}


def smallness_surrogate(v0: SpectralField, cfg: MildConfig) -> float:
    """``T^{delta/2}`` times the heat-flow surrogate of ``||v0||_{B^{-1+3/p+delta}_{p,inf}}``."""
    s = -1.0 + 3.0 / cfg.p + cfg.delta
    return cfg.horizon ** (cfg.delta / 2) * heatflow_besov_norm(v0, s, cfg.p)


def _kato_pair(traj: KatoTrajectory, cfg: MildConfig):
    kp = float(kato_weighted_norms(traj, cfg.kato_index).max())
    ki = float(kato_weighted_norms(traj, cfg.kato_inf_index).max())
    return kp, ki


def picard_solve(v0: SpectralField, cfg: MildConfig, calib: SmallnessCalibration | None = None,
                 enforce_smallness: bool = True, blowup_factor: float = 1e4):
    """Fixed point of ``v = e^{t Lap} v0 + B(v, v)`` on the configured time grid.

    The residual is ``||v - e^{t Lap}v0 - B(v, v)||_{K^{p,delta}}`` relative to
    ``||e^{t Lap} v0||_{K^{p,delta}}``. The returned trajectory is the last
    iterate whose residual was measured.
    """
    diag = PicardDiagnostics()
    heat = heat_trajectory(v0, cfg)
    diag.heat_kato_p, diag.heat_kato_inf = _kato_pair(heat, cfg)
    if enforce_smallness:
        if calib is None:
            raise ValueError("a smallness calibration is required")
        diag.threshold = calib.c1
        diag.smallness = smallness_surrogate(v0, cfg)
        if diag.smallness > calib.c1:
            diag.status = "refused"
            raise SmallnessError(
                f"T^(delta/2) * ||v0|| = {diag.smallness:.4g} exceeds the calibrated "
                f"threshold {calib.c1:.4g}")
    scale = diag.heat_kato_p
    if scale == 0:
        diag.rows.append((0, 0.0, 0.0, 0.0))
        diag.converged, diag.status, diag.residual = True, "converged", 0.0
        diag.factor_two_holds = True
        return heat, diag
    v = heat
    for it in range(cfg.max_iters):
        bil = _bilinear_on_grid(v)
        nxt_fields = [SpectralField(v.grid, h.coeffs + b, divergence_free=True)
                      for h, b in zip(heat.fields, bil)]
        nxt = KatoTrajectory(v.grid, v.times, nxt_fields, initial=v0)
        diff = KatoTrajectory(v.grid, v.times,
                              [SpectralField(v.grid, a.coeffs - b.coeffs)
                               for a, b in zip(v.fields, nxt_fields)])
        residual = float(kato_weighted_norms(diff, cfg.kato_index).max()) / scale
        kp, ki = _kato_pair(v, cfg)
        diag.rows.append((it, kp, ki, residual))
        if not np.isfinite(residual) or kp > blowup_factor * scale:
            diag.status = "diverged"
            raise NonConvergenceError("Picard iteration diverged", diag)
        if residual < cfg.residual_tol:
            diag.converged, diag.status, diag.residual = True, "converged", residual
            diag.factor_two_holds = bool(
                kp <= 2 * diag.heat_kato_p and ki <= 2 * diag.heat_kato_inf)
            v.meta.update({"residual": residual, "iterations": it + 1})
            return v, diag
        v = nxt
    diag.status = "max_iters"
    diag.residual = diag.rows[-1][3]
    raise NonConvergenceError(
        f"no convergence within {cfg.max_iters} iterations (residual {diag.residual:.3g})", diag)


def picard_outcome(v0: SpectralField, cfg: MildConfig) -> str:
    """Run without the smallness gate and classify the outcome."""
    try:
        picard_solve(v0, cfg, enforce_smallness=False)
        return "converged"
    except NonConvergenceError as exc:
        return exc.diagnostics.status if exc.diagnostics else "diverged"


def amplitude_threshold(shape: SpectralField, cfg: MildConfig, lo: float = 0.0,
                        hi: float = 1.0, iters: int = 12) -> float:
    """Bisection for the amplitude separating convergence from failure.

    ``hi`` is doubled until the iteration fails, then the bracket is halved
    ``iters`` times. Returns the largest amplitude known to converge.
    """
    while picard_outcome(shape * hi, cfg) == "converged":
        lo, hi = hi, 2 * hi
        if hi > 1e8:
            raise RuntimeError("no failure found while scanning amplitudes")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if picard_outcome(shape * mid, cfg) == "converged":
            lo = mid
        else:
            hi = mid
    return lo


def calibrate_smallness(shape: SpectralField, cfg: MildConfig, safety: float = 0.5,
                        iters: int = 12) -> SmallnessCalibration:
    """Measure ``c1`` from the convergence threshold of a fixed datum shape."""
    amp = amplitude_threshold(shape, cfg, iters=iters)
    c1 = safety * smallness_surrogate(shape * amp, cfg)
    heat = heat_trajectory(shape, cfg)
    bil = _bilinear_on_grid(heat)
    btraj = KatoTrajectory(shape.grid, heat.times,
                           [SpectralField(shape.grid, b) for b in bil])
    kp = float(kato_weighted_norms(heat, cfg.kato_index).max())
    kb = float(kato_weighted_norms(btraj, cfg.kato_index).max())
    lam = kb / kp ** 2 if kp > 0 else float("nan")
    return SmallnessCalibration(cfg.p, cfg.delta, shape.grid.grid_hash(), c1, lam)


# -- persistency and derived bounds -----------------------------------------

@dataclass
class BoundCheck:
    value: float
    bound: float
    holds: bool
    details: dict = field(default_factory=dict)


def sup_l2(traj: KatoTrajectory) -> float:
    vals = [np.sqrt(f.energy()) for f in traj.fields]
    if traj.initial is not None:
        vals.append(np.sqrt(traj.initial.energy()))
    return float(max(vals))


def persistency_check(v: KatoTrajectory, extra_norm: str, cfg: MildConfig,
                      constant: float = 2.0) -> BoundCheck:
    """Compare an extra norm of ``v`` with the same norm of the heat flow of its datum."""
    if v.initial is None:
        raise ValueError("persistency needs the initial datum on the trajectory")
    heat = heat_trajectory(v.initial, cfg, v.times)
    if extra_norm == "kato_p_delta":
        val = float(kato_weighted_norms(v, cfg.kato_index).max())
        ref = float(kato_weighted_norms(heat, cfg.kato_index).max())
    elif extra_norm == "kato_inf_delta":
        val = float(kato_weighted_norms(v, cfg.kato_inf_index).max())
        ref = float(kato_weighted_norms(heat, cfg.kato_inf_index).max())
    elif extra_norm == "l2":
        val, ref = sup_l2(v), sup_l2(heat)
    else:
        raise ValueError(f"unknown norm {extra_norm!r}")
    return BoundCheck(val, constant * ref, bool(val <= constant * ref),
                      {"norm": extra_norm, "heat": ref, "constant": constant,
                       "ratio": val / ref if ref > 0 else 0.0})


def _time_integral_powerlaw(times: np.ndarray, values: np.ndarray,
                            initial_value: float | None) -> float:
    """Integrate samples over (0, T] assuming power-law behaviour between samples.

    On the first interval the integrand is interpolated linearly from the
    value at t = 0 when it is known, and extrapolated as a power law from the
    first two samples otherwise.
    """
    total = 0.0
    for i in range(len(times) - 1):
        ta, tb, ga, gb = times[i], times[i + 1], values[i], values[i + 1]
        if ga > 0 and gb > 0:
            b = math.log(gb / ga) / math.log(tb / ta)
            if abs(b + 1) < 1e-12:
                total += ga * ta * math.log(tb / ta)
            else:
                total += ga * ta / (b + 1) * ((tb / ta) ** (b + 1) - 1)
        else:
            total += 0.5 * (ga + gb) * (tb - ta)
    t1, g1 = times[0], values[0]
    if initial_value is not None:
        total += 0.5 * (initial_value + g1) * t1
    elif len(times) > 1 and values[0] > 0 and values[1] > 0:
        b = math.log(values[1] / values[0]) / math.log(times[1] / times[0])
        if b <= -1:
            return math.inf
        total += g1 * t1 / (b + 1)
    else:
        total += g1 * t1
    return total


def kato_to_lebesgue_bound(v: KatoTrajectory, p: float, delta: float, T: float | None = None,
                           rtol: float = 1e-8) -> BoundCheck:
    """Measured ``||v||_{L^r_t L^p_x}`` with ``2/r + 3/p = 1`` against the Kato bound.

    Exact integration of ``t^{-1 + r delta / 2}`` gives
    ``||v||_{L^r L^p} <= (2/(r delta))^{1/r} T^{delta/2} ||v||_{K^{p,delta}}``.
    The report also records whether the bound holds without the
    ``(2/(r delta))^{1/r}`` factor.
    """
    if not p > 3:
        raise ValueError("need p > 3 so that 2/r + 3/p = 1 has a finite r")
    r = 2.0 / (1.0 - 3.0 / p)
    idx = KatoIndex(p, delta, math.inf)
    T = v.horizon if T is None else T
    keep = v.times <= T * (1 + 1e-12)
    times = v.times[keep]
    norms = np.array([lp_norm(to_physical(f), p) for f, k in zip(v.fields, keep) if k])
    init = None if v.initial is None else lp_norm(to_physical(v.initial), p) ** r
    measured = _time_integral_powerlaw(times, norms ** r, init) ** (1.0 / r)
    kato = float((times ** idx.weight_exponent * norms).max()) if norms.size else 0.0
    printed = T ** (delta / 2) * kato
    factor = (2.0 / (r * delta)) ** (1.0 / r) if delta > 0 else math.inf
    bound = factor * printed
    holds = measured <= bound * (1 + rtol) + 1e-300
    return BoundCheck(measured, bound, bool(holds),
                      {"r": r, "kato": kato, "printed_bound": printed, "factor": factor,
                       "printed_holds": bool(measured <= printed * (1 + rtol) + 1e-300)})


def tensor_l2_check(m: KatoTrajectory, delta: float) -> BoundCheck:
    """``||m (x) m||_{L^2(Q_T)}`` against ``(T^delta/delta)^{1/2} ||m||_{L^inf L^2} ||m||_{K^{inf,delta}}``."""
    times = m.times
    quart = np.array([np.sum(to_physical(f).magnitude() ** 4) * m.grid.cell_volume
                      for f in m.fields])
    init = None
    if m.initial is not None:
        init = float(np.sum(to_physical(m.initial).magnitude() ** 4) * m.grid.cell_volume)
    measured = math.sqrt(_time_integral_powerlaw(times, quart, init))
    kinf = float(kato_weighted_norms(m, KatoIndex(math.inf, delta)).max())
    T = m.horizon
    bound = math.sqrt(T ** delta / delta) * sup_l2(m) * kinf if delta > 0 else math.inf
    return BoundCheck(measured, bound, bool(measured <= bound), {"kato_inf": kinf})


# -- Oseen kernel -----------------------------------------------------------

def oseen_window(grid: Grid3):
    """Time window where the torus resolves the Oseen kernel.

    Lower end: the Gaussian factor at the Nyquist wavenumber is below e^-4.
    Upper end: the kernel width sqrt(t) stays below 1/40 of the box, so the
    periodic images of the algebraic far field stay a few percent of the L^1
    mass.
    """
    xi_nyq = grid.k0 * grid.n / 2
    t_lo = 4.0 / xi_nyq ** 2
    t_hi = (grid.box_len / 40.0) ** 2
    return t_lo, t_hi


def oseen_kernel(grid: Grid3, t: float, j: int = 0, l: int = 0) -> PhysicalField:
    """``-e^{t Lap} P div`` applied to the unit tensor impulse ``e_j (x) e_l delta_0``."""
    kv = grid.wavevectors
    coeffs = np.zeros((3,) + grid.spectral_shape, complex)
    # div of T_{il} = delta_{ij} delta_{ll'} delta_0 is e_j * d_l delta_0
    coeffs[j] = 1j * kv[l] / grid.volume * np.ones(grid.spectral_shape)
    out = leray_project(SpectralField(grid, coeffs))
    out = heat_semigroup(out, t)
    return to_physical(out * -1.0)


@dataclass
class OseenFit:
    p: float
    exponent: float
    expected: float
    r_squared: float
    times: np.ndarray
    norms: np.ndarray

    @property
    def relative_error(self) -> float:
        return abs(self.exponent - self.expected) / self.expected


def oseen_decay_check(p: float, grid: Grid3 | None = None, times=None,
                      count: int = 12) -> OseenFit:
    """Fit ``||K(., t)||_p ~ t^{-a}`` and compare with ``a = (4 - 3/p)/2``."""
    if not p >= 1:
        raise ValueError("need p >= 1")
    grid = Grid3(64) if grid is None else grid
    t_lo, t_hi = oseen_window(grid)
    if times is None:
        if t_hi / t_lo < 4:
            raise ValueError("window unresolvable at this grid size")
        times = np.geomspace(t_lo, t_hi, count)
    else:
        times = np.asarray(times, float)
        times = times[(times >= t_lo * (1 - 1e-12)) & (times <= t_hi * (1 + 1e-12))]
        if times.size < 4:
            raise ValueError("window unresolvable at this grid size")
    norms = np.array([lp_norm(oseen_kernel(grid, t), p) for t in times])
    x, y = np.log(times), np.log(norms)
    slope, icpt = np.polyfit(x, y, 1)
    fit = slope * x + icpt
    ss_res = float(np.sum((y - fit) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1 - ss_res / ss_tot if ss_tot > 0 else 1.0
    expected = (4 - 3 / p) / 2 if np.isfinite(p) else 2.0
    return OseenFit(p, -slope, expected, r2, times, norms)
