"""Parameter geometry and constructive splitting of Besov initial data.

``derive_params`` evaluates the closed-form exponents for the two admissible
regions of (q, s). It only uses field arithmetic, so passing
``fractions.Fraction`` inputs returns exact rational parameters, since every
formula is rational in q and s.

``split`` implements blockwise level-set splitting: every dyadic block of the
datum is cut at the height ``lambda_j = eps * M * 2^{j beta}``, where ``M`` is
the ``B^s_{q,inf}`` norm of the datum. Values below the level go to the
high-integrability piece ``m0``, the rest to the energy piece ``w0``, and both
are Leray projected.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .littlewood_paley import (
    BesovIndex, DyadicPartition, besov_from_blocks, besov_norm, block_norms, lp_project,
)
from .spectral import (
    SpectralField, divergence_defect, leray_project, lp_norm, to_physical, to_spectral,
    PhysicalField,
)

SUBCRITICAL = "subcritical-critical"
SUPERCRITICAL = "supercritical"


class AdmissibilityError(ValueError):
    """Raised when (q, s) lies outside both splitting regions."""


@dataclass(frozen=True)
class SplitParams:
    q: object
    s: object
    case: str
    p: object
    delta: object
    delta_star: object
    theta: object
    s1: object
    s2: object
    s_bar: object
    s_tilde: object
    gamma1: object
    gamma2: object
    P: object = None

    @property
    def beta(self) -> float:
        """Threshold slope that makes blockwise cuts of bump-saturated data
        decay with exponents (gamma1, gamma2)."""
        q, s, p = float(self.q), float(self.s), float(self.p)
        return 3.0 / q - s - (float(self.s_tilde) - float(self.s_bar)) / (1.0 - q / p)

    @property
    def subcritical_index(self) -> BesovIndex:
        """``B^{-1+3/p+delta}_{p,p}``, the space of the small piece."""
        p = float(self.p)
        return BesovIndex(-1 + 3 / p + float(self.delta), p, p)

    def as_floats(self) -> dict:
        out = {}
        for k, v in asdict(self).items():
            out[k] = v if isinstance(v, str) or v is None else float(v)
        return out


def derive_params(q, s) -> SplitParams:
    """Closed-form splitting parameters for admissible (q, s)."""
    one = q / q  # keeps Fraction inputs exact
    if not q > 2:
        raise AdmissibilityError(f"need q > 2, got q = {q}")
    lower = -one + 2 / q
    if not (lower < s < 0):
        raise AdmissibilityError(
            f"need -1 + 2/q < s < 0, i.e. {float(lower):.6g} < s < 0, got s = {float(s):.6g}")
    crit = -one + 3 / q
    s1 = 0 * one
    if q > 3 and s >= crit:
        case, P = SUBCRITICAL, None
        p = 2 * q
        delta = one - 9 / (4 * q) + s * (2 * q - 3) / (2 * (q - 2))
        s2 = -3 / (4 * q) + (s / 2) * (2 * q - 3) / (q - 2)
        s_bar = (s * (2 * q - 3) - 3 * (q - 2) / (2 * q)) / (2 * (q - 1))
        s_tilde = 3 / (4 * q) + s * (2 * q - 3) / (2 * (q - 2))
        if not (0 < delta < one - 3 / (2 * q)):
            raise AdmissibilityError("delta left its admissible interval")
    else:
        case = SUPERCRITICAL
        P = (2 * s + 3 - 6 / q) / (s + one - 2 / q)
        p = 3 * P
        delta = (one - 3 / p) / 2 + (one - 2 / p) / (one - 2 / q) * s / 2
        s2 = -one + 3 / p + delta
        s_bar = (one / q - one / 2) / (one / p - one / 2) * (-one + 3 / p + delta)
        s_tilde = -one + 3 / q + delta
        if not (0 < delta < one - 3 / p):
            raise AdmissibilityError("delta left its admissible interval")
    delta_star = -one + 3 / q - s
    if delta_star > 0:
        theta = delta / (delta + delta_star)
    else:
        theta = 0 * one
    frac = (p - q) / p
    gamma1 = (s_tilde - s) / (s_tilde - s_bar) * frac
    gamma2 = (s - s_bar) / (s_tilde - s_bar) * frac + q / 2 - one
    return SplitParams(q=q, s=s, case=case, p=p, delta=delta, delta_star=delta_star,
                       theta=theta, s1=s1, s2=s2, s_bar=s_bar, s_tilde=s_tilde,
                       gamma1=gamma1, gamma2=gamma2, P=P)


@dataclass(frozen=True)
class SplitCalibration:
    """Fitted constants standing in for the implicit ones of the splitting bounds."""

    c_split: float = 1.0   # constant in the two epsilon bounds
    c_small: float = 1.0   # calibrated mild-solution smallness threshold
    c_interp: float = 1.0  # constant in the critical-norm interpolation bound

    def __post_init__(self):
        if min(self.c_split, self.c_small, self.c_interp) <= 0:
            raise ValueError("calibration constants must be positive")


@dataclass(eq=False)
class SplitResult:
    w0: SpectralField
    m0: SpectralField
    epsilon: float
    report: dict = field(default_factory=dict)


def _measure(u0, m0, w0, params: SplitParams, part: DyadicPartition) -> dict:
    q, s = float(params.q), float(params.s)
    idx_s = BesovIndex(s, q, math.inf)
    return {
        "m0_subcritical": besov_norm(m0, params.subcritical_index, part),
        "w0_L2": lp_norm(to_physical(w0), 2),
        "m0_Bs_q_inf": besov_norm(m0, idx_s, part),
        "w0_Bs_q_inf": besov_norm(w0, idx_s, part),
        "u0_Bs_q_inf": besov_norm(u0, idx_s, part),
    }


def split(u0: SpectralField, eps: float, params: SplitParams, part: DyadicPartition,
          beta: float | None = None, tol: float = 1e-10, measure: bool = True) -> SplitResult:
    """Blockwise level-set splitting ``u0 = m0 + w0``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    if u0.components != 3:
        raise ValueError("split needs a velocity field")
    if divergence_defect(u0) > tol:
        raise ValueError("split needs a divergence-free datum")
    scale = np.abs(u0.coeffs).max()
    if scale > 0 and np.abs(u0.coeffs[:, 0, 0, 0]).max() > tol * scale:
        raise ValueError("split needs a mean-zero datum")
    beta = params.beta if beta is None else beta
    q, s = float(params.q), float(params.s)
    M = besov_from_blocks(block_norms(u0, q, part), s, math.inf)
    low = np.zeros((3,) + u0.grid.physical_shape)
    high = np.zeros_like(low)
    if M > 0:
        for j in part.shells:
            block = to_physical(lp_project(u0, j, part)).values
            level = eps * M * 2.0 ** (j * beta)
            keep = np.sqrt(np.sum(block ** 2, axis=0)) <= level
            low += block * keep
            high += block * ~keep
    grid = u0.grid
    m0 = leray_project(to_spectral(PhysicalField(grid, low)))
    m0.coeffs[:, 0, 0, 0] = 0
    # Both raw pieces sum to u0 and u0 is solenoidal, so the projected energy
    # piece equals u0 - m0 up to round-off; taking the difference makes the
    # reconstruction exact.
    w0 = SpectralField(grid, u0.coeffs - m0.coeffs, divergence_free=True)
    report = _measure(u0, m0, w0, params, part) if measure else {}
    report.update({"epsilon": eps, "beta": beta, "u0_norm_used": M})
    return SplitResult(w0=w0, m0=m0, epsilon=eps, report=report)


def choose_epsilon_theoremA(u0_norm: float, params: SplitParams,
                            calib: SplitCalibration = SplitCalibration()) -> float:
    """``eps = (c_small / (2 c_split ||u0||))^{1/(gamma1 (1 - theta))}``."""
    if not u0_norm > 0:
        raise ValueError("u0_norm must be positive")
    expo = 1.0 / (float(params.gamma1) * (1.0 - float(params.theta)))
    return (calib.c_small / (2.0 * calib.c_split * u0_norm)) ** expo


def choose_epsilon_lemma51(u0_norm: float, T: float, params: SplitParams,
                           calib: SplitCalibration = SplitCalibration()) -> float:
    """``eps = (c_small / (c_split T^{delta/2} ||u0||))^{1/gamma1}``."""
    if not u0_norm > 0:
        raise ValueError("u0_norm must be positive")
    if not T > 0:
        raise ValueError("horizon must be positive")
    delta = float(params.delta)
    return (calib.c_small / (calib.c_split * T ** (delta / 2.0) * u0_norm)) ** (
        1.0 / float(params.gamma1))


@dataclass
class CriticalNormCheck:
    critical: float
    bound: float
    constant: float
    holds: bool
    theta: float


def interpolated_critical_norm(m0: SpectralField, params: SplitParams, part: DyadicPartition,
                               constant: float = 1.0, rtol: float = 1e-10) -> CriticalNormCheck:
    """Critical ``B^{-1+3/p}_{p,inf}`` norm of ``m0`` against its interpolation bound.

    The bound is ``||m0||_{-1+3/p-delta*}^theta ||m0||_{-1+3/p+delta}^(1-theta)``
    with all norms in ``B_{p,inf}``. When ``delta* = 0`` the lower space is the
    critical one itself and theta = 0 reduces the bound to the subcritical norm.
    """
    p = float(params.p)
    delta, dstar = float(params.delta), float(params.delta_star)
    theta = float(params.theta)
    blocks = block_norms(m0, p, part)
    s_c = -1 + 3 / p
    crit = besov_from_blocks(blocks, s_c, math.inf)
    upper = besov_from_blocks(blocks, s_c + delta, math.inf)
    if theta > 0:
        lower = besov_from_blocks(blocks, s_c - dstar, math.inf)
        bound = lower ** theta * upper ** (1 - theta)
    else:
        bound = upper
    holds = crit <= constant * bound * (1 + rtol) + 1e-300
    return CriticalNormCheck(crit, bound, constant, bool(holds), theta)
