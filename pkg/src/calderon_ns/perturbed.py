"""Time stepping for the Navier-Stokes system perturbed by a given solenoidal field ``m``.

The unknown ``w`` solves

    d_t w - Lap w + P[(m . grad) w + (w . grad) w + (w . grad) m] = 0,

written in divergence form as ``P div(w (x) w + m (x) w + w (x) m)``. The step
is an integrating-factor Heun scheme: the heat part is integrated exactly and
the advective terms explicitly with 2/3 dealiasing. With band-limited
arguments the dealiased products are exact, so ``<w, P div(w (x) w)> = 0`` and
the only energy exchange is the cross term ``2 int m . (w . grad) w``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .spectral import (
    Grid3, GridError, SpectralField, gradient_energy, leray_project, perturbed_pressure,
    pressure_from, stress_tensor, tensor_divergence, to_physical, divergence_defect,
)
from .trajectory import KatoTrajectory


class CFLError(RuntimeError):
    """Advective Courant number above the configured limit."""


class TrajectoryGapError(ValueError):
    """The perturbing trajectory does not cover the requested interval."""


@dataclass(frozen=True)
class PerturbedConfig:
    T: float = 1.0
    dt: float = 1e-3
    cfl_limit: float = 0.5
    tol_energy: float = 1e-6      # relative to ||w0||_2^2
    gronwall_c: float = 1.0
    record_every: int = 1
    divergence_tol: float = 1e-10

    def __post_init__(self):
        if not (self.T > 0 and self.dt > 0 and self.cfl_limit > 0 and self.tol_energy > 0
                and self.gronwall_c > 0 and self.record_every >= 1):
            raise ValueError("PerturbedConfig values must be positive")

    @property
    def steps(self) -> int:
        return max(int(round(self.T / self.dt)), 1)


# -- right-hand side and one step ------------------------------------------

def _masked(g: SpectralField) -> SpectralField:
    return g.replace(g.coeffs * g.grid.dealias_mask)


def advection(w: SpectralField, m: SpectralField | None) -> np.ndarray:
    """``P div(w (x) w + m (x) w + w (x) m)`` as a dealiased coefficient array."""
    grid = w.grid
    t6 = stress_tensor(w)
    if m is not None:
        t6 = t6 + 2.0 * stress_tensor(m, w)
    div = tensor_divergence(t6, grid)
    return leray_project(SpectralField(grid, div)).coeffs * grid.dealias_mask


def courant_number(w: SpectralField, m: SpectralField | None, dt: float) -> float:
    speed = float(to_physical(w).magnitude().max())
    if m is not None:
        speed += float(to_physical(m).magnitude().max())
    return speed * dt / w.grid.dx


def step_perturbed(w: SpectralField, m_at_t: SpectralField | None, dt: float,
                   m_next: SpectralField | None = None, cfl_limit: float = 0.5) -> SpectralField:
    """One integrating-factor Heun step of length ``dt``.

    ``m_next`` is the perturbation at ``t + dt``; it defaults to ``m_at_t``.
    Passing ``None`` for both gives a plain Navier-Stokes step.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if m_at_t is not None and m_at_t.grid != w.grid:
        raise GridError("w and m live on different grids")
    m_next = m_at_t if m_next is None else m_next
    cfl = courant_number(w, m_at_t, dt)
    if cfl > cfl_limit:
        raise CFLError(f"Courant number {cfl:.3g} exceeds the limit {cfl_limit}")
    decay = np.exp(-w.grid.k2 * dt)
    k1 = -advection(w, m_at_t)
    pred = SpectralField(w.grid, decay * (w.coeffs + dt * k1))
    k2 = -advection(pred, m_next)
    out = decay * w.coeffs + 0.5 * dt * (decay * k1 + k2)
    return SpectralField(w.grid, out, divergence_free=True)


# -- ledger -----------------------------------------------------------------

LEDGER_COLUMNS = ("t", "kinetic", "dissipation_cum", "cross_cum", "gronwall_rhs", "slack")


@dataclass
class EnergyLedger:
    """Per-step energy bookkeeping.

    ``dissipation_cum`` is ``2 int ||grad w||^2`` and ``cross_cum`` is
    ``2 int int m . (w . grad) w``; ``slack`` is the margin of
    ``kinetic + dissipation_cum <= ||w0||^2 + cross_cum``.
    """

    t: list = field(default_factory=list)
    kinetic: list = field(default_factory=list)
    dissipation_cum: list = field(default_factory=list)
    cross_cum: list = field(default_factory=list)
    gronwall_rhs: list = field(default_factory=list)
    slack: list = field(default_factory=list)
    gronwall_slack: list = field(default_factory=list)

    def append(self, t, kinetic, diss, cross, rhs, slack, gslack):
        for name, val in zip(("t", "kinetic", "dissipation_cum", "cross_cum", "gronwall_rhs",
                              "slack", "gronwall_slack"),
                             (t, kinetic, diss, cross, rhs, slack, gslack)):
            getattr(self, name).append(float(val))

    def arrays(self) -> dict:
        return {k: np.asarray(v) for k, v in self.__dict__.items()}

    def validate(self):
        arr = self.arrays()
        if not all(np.all(np.isfinite(v)) for v in arr.values()):
            raise FloatingPointError("non-finite ledger entry")
        if np.any(np.diff(arr["dissipation_cum"]) < 0):
            raise AssertionError("dissipation_cum decreased")

    def write_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(LEDGER_COLUMNS)
            for row in zip(*(getattr(self, c) for c in LEDGER_COLUMNS)):
                writer.writerow([repr(x) for x in row])
        return path


def _mode_energy(w: SpectralField) -> np.ndarray:
    g = w.grid
    return g.volume * g.hermitian_weight * np.sum(np.abs(w.coeffs) ** 2, axis=0)


def _log_mean(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Logarithmic mean ``(b - a) / ln(b / a)``: the average of ``a^(1-x) b^x`` on [0, 1].

    It is exact for exponential decay and for constants, which makes the
    dissipation quadrature insensitive to the stiffness of high modes.
    """
    out = 0.5 * (a + b)
    pos = (a > 0) & (b > 0)
    ratio = np.ones_like(a)
    ratio[pos] = b[pos] / a[pos]
    far = pos & (np.abs(ratio - 1) > 1e-6)
    out[far] = (b[far] - a[far]) / np.log(ratio[far])
    near = pos & ~far
    d = ratio[near] - 1
    out[near] = a[near] * (1 + d / 2 - d * d / 12)
    out[~pos] = 0.0
    return out


def dissipation_increment(w0: SpectralField, w1: SpectralField, dt: float) -> float:
    """``2 int ||grad w||^2`` over one step, per mode on the logarithmic mean."""
    y0, y1 = _mode_energy(w0), _mode_energy(w1)
    return float(2.0 * dt * np.sum(w0.grid.k2[None] * _log_mean(y0, y1)))


def cross_power(w: SpectralField, m: SpectralField | None) -> float:
    """``2 int m . (w . grad) w dx`` from band-limited samples."""
    if m is None:
        return 0.0
    g = w.grid
    wm, mm = _masked(w), _masked(m)
    wp = to_physical(wm).values
    mp = to_physical(mm).values
    kv = g.wavevectors
    total = 0.0
    for j in range(3):
        # (w . grad) w_j
        grad = [to_physical(SpectralField(g, (1j * kv[i] * wm.coeffs[j])[None])).values[0]
                for i in range(3)]
        adv = wp[0] * grad[0] + wp[1] * grad[1] + wp[2] * grad[2]
        total += float(np.sum(mp[j] * adv))
    return 2.0 * total * g.cell_volume


def sup_norm_sq(m: SpectralField | None) -> float:
    if m is None:
        return 0.0
    return float(to_physical(_masked(m)).magnitude().max() ** 2)


# -- driver -----------------------------------------------------------------

@dataclass(eq=False)
class SolveReport:
    trajectory: KatoTrajectory
    ledger: EnergyLedger
    E: float
    inequality_slack: float
    gronwall_slack: float
    w0_energy: float
    meta: dict = field(default_factory=dict)

    @property
    def energy_ok(self) -> bool:
        tol = self.meta.get("tol_energy", 1e-6) * self.w0_energy
        return self.inequality_slack >= -tol

    @property
    def gronwall_ok(self) -> bool:
        tol = self.meta.get("tol_energy", 1e-6) * self.w0_energy
        return self.gronwall_slack >= -tol

    def summary(self) -> dict:
        return {"E": self.E, "inequality_slack": self.inequality_slack,
                "gronwall_slack": self.gronwall_slack, "w0_energy": self.w0_energy,
                "energy_ok": self.energy_ok, "gronwall_ok": self.gronwall_ok,
                **{k: v for k, v in self.meta.items() if np.isscalar(v)}}


def _m_sampler(m, T: float):
    if m is None:
        return lambda t: None
    if isinstance(m, SpectralField):
        return lambda t: m
    if m.horizon < T * (1 - 1e-12):
        raise TrajectoryGapError(f"m ends at {m.horizon} before T = {T}")
    if m.initial is None:
        raise TrajectoryGapError("m has no datum at t = 0")
    return lambda t: m.at(min(t, m.horizon))


def solve_perturbed(w0: SpectralField, m, cfg: PerturbedConfig) -> SolveReport:
    """Integrate the perturbed system on ``[0, cfg.T]`` and fill the energy ledger.

    ``m`` is a trajectory with its datum attached, a single steady field, or
    ``None`` for the unperturbed equations.
    """
    if divergence_defect(w0) > cfg.divergence_tol:
        raise ValueError("w0 must be divergence-free")
    sample = _m_sampler(m, cfg.T)
    grid = w0.grid
    n_steps = cfg.steps
    dt = cfg.T / n_steps
    e0 = w0.energy()
    ledger = EnergyLedger()
    m_now = sample(0.0)
    w = w0
    diss = cross = msq_int = 0.0
    p_now = cross_power(w, m_now)
    msq_now = sup_norm_sq(m_now)
    ledger.append(0.0, e0, 0.0, 0.0, e0, 0.0, 0.0)
    times, fields = [], []
    max_div = 0.0
    for k in range(1, n_steps + 1):
        t = k * dt
        m_next = sample(t)
        w_new = step_perturbed(w, m_now, dt, m_next, cfg.cfl_limit)
        p_next = cross_power(w_new, m_next)
        msq_next = sup_norm_sq(m_next)
        diss += dissipation_increment(w, w_new, dt)
        cross += 0.5 * dt * (p_now + p_next)
        msq_int += 0.5 * dt * (msq_now + msq_next)
        kin = w_new.energy()
        rhs = e0 * math.exp(cfg.gronwall_c * msq_int)
        slack = e0 + cross - kin - diss
        gslack = rhs - (kin + 0.5 * diss)
        ledger.append(t, kin, diss, cross, rhs, slack, gslack)
        if not math.isfinite(kin):
            raise FloatingPointError(f"solution blew up at t = {t}")
        w, m_now, p_now, msq_now = w_new, m_next, p_next, msq_next
        if k % cfg.record_every == 0 or k == n_steps:
            times.append(t)
            fields.append(w)
            max_div = max(max_div, divergence_defect(w))
    ledger.validate()
    arr = ledger.arrays()
    traj = KatoTrajectory(grid, times, fields, initial=w0)
    E = float(arr["kinetic"].max() + 0.5 * arr["dissipation_cum"][-1])
    meta = {"dt": dt, "steps": n_steps, "tol_energy": cfg.tol_energy,
            "max_divergence_defect": max_div, "gronwall_c": cfg.gronwall_c,
            "m_sup_sq_integral": msq_int}
    return SolveReport(traj, ledger, E, float(arr["slack"].min()),
                       float(arr["gronwall_slack"].min()), e0, meta)


# -- composition -------------------------------------------------------------

@dataclass(eq=False)
class ComposedSolution:
    u: KatoTrajectory
    pressure: list
    residual_u: float
    residual_m: float
    residual_w: float

    @property
    def residual_ok(self) -> bool:
        return self.residual_u <= 2.0 * (self.residual_m + self.residual_w) + 1e-14


def _step_residual(traj_next: SpectralField, traj_now: SpectralField, m_now, m_next,
                   dt: float) -> float:
    pred = step_perturbed(traj_now, m_now, dt, m_next, cfl_limit=math.inf)
    return math.sqrt((traj_next - pred).energy())


def compose_solution(m: KatoTrajectory | None, w_traj: KatoTrajectory,
                     residual_samples: int = 4) -> ComposedSolution:
    """``u = m + w`` with ``pi = pi_m + pi1 + pi2`` at the samples of ``w``.

    Also measures one-step residuals: ``u`` and ``m`` against the plain
    Navier-Stokes step, ``w`` against the step perturbed by ``m``, each over
    the interval between consecutive samples of ``w``.
    """
    grid = w_traj.grid
    if m is not None and m.grid != grid:
        raise GridError("m and w live on different grids")
    if m is not None and m.horizon < w_traj.horizon * (1 - 1e-12):
        raise TrajectoryGapError("m does not cover the span of w")
    m_at = (lambda t: SpectralField.zeros(grid)) if m is None else (
        lambda t: m.at(min(t, m.horizon)))
    fields, pressures = [], []
    for t, w in zip(w_traj.times, w_traj.fields):
        mt = m_at(t)
        fields.append(SpectralField(grid, mt.coeffs + w.coeffs, divergence_free=True))
        pi_m = pressure_from(mt, check_tol=1e-8)
        pi1, pi2 = perturbed_pressure(w, mt, check_tol=1e-8)
        pressures.append(pi_m + pi1 + pi2)
    init = None
    if w_traj.initial is not None:
        init = m_at(0.0) + w_traj.initial
    u = KatoTrajectory(grid, w_traj.times.copy(), fields, initial=init)
    n = len(w_traj.times)
    picks = np.unique(np.linspace(0, n - 2, min(residual_samples, n - 1)).astype(int)) if n > 1 else []
    ru = rm = rw = 0.0
    for i in picks:
        t0, t1 = w_traj.times[i], w_traj.times[i + 1]
        dt = t1 - t0
        m0, m1 = m_at(t0), m_at(t1)
        ru = max(ru, _step_residual(u.fields[i + 1], u.fields[i], None, None, dt))
        rm = max(rm, _step_residual(m1, m0, None, None, dt))
        rw = max(rw, _step_residual(w_traj.fields[i + 1], w_traj.fields[i], m0, m1, dt))
    return ComposedSolution(u, pressures, ru, rm, rw)
