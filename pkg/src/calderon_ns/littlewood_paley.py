"""Dyadic partition of unity, block projectors and the associated norms.

The radial bump is built from the smooth step ``g(x)/(g(x)+g(1-x))`` with
``g(x) = exp(-1/x)``. A cutoff ``chi`` equals 1 for ``|xi| <= 3/4`` and 0 for
``|xi| >= 4/3``; the annular bump is ``phi(xi) = chi(xi/2) - chi(xi)``, which is
supported in ``[3/4, 8/3]`` and telescopes to 1 when summed over dyadic
dilations.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .spectral import Grid3, SpectralField, heat_semigroup, lp_norm, to_physical
from .trajectory import KatoTrajectory, log_time_grid

INNER, OUTER = 0.75, 4.0 / 3.0


def smooth_step(x):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1."""
    x = np.asarray(x, dtype=float)
    a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
    y = 1.0 - x
    b = np.where(y > 0, np.exp(-1.0 / np.where(y > 0, y, 1.0)), 0.0)
    return a / (a + b)


def chi(r):
    """Radial cutoff: 1 on [0, 3/4], 0 beyond 4/3."""
    return 1.0 - smooth_step((np.asarray(r, dtype=float) - INNER) / (OUTER - INNER))


def phi(r):
    """Annular bump supported in [3/4, 8/3]."""
    r = np.asarray(r, dtype=float)
    return chi(r / 2.0) - chi(r)


@dataclass(frozen=True)
class BesovIndex:
    s: float
    p: float
    r: float

    def __post_init__(self):
        if not (self.p >= 1 and self.r >= 1):
            raise ValueError(f"Besov exponents need p, r >= 1, got p={self.p}, r={self.r}")

    @property
    def banach(self) -> bool:
        """Whether ``s < 3/p`` so the homogeneous space is complete."""
        return self.s < 3.0 / self.p

    def label(self) -> str:
        return f"B^{self.s:g}_{{{self.p:g},{self.r:g}}}"


@dataclass(frozen=True)
class KatoIndex:
    p: float
    delta: float = 0.0
    horizon: float = math.inf

    def __post_init__(self):
        if not self.p >= 3:
            raise ValueError(f"Kato index needs p >= 3, got {self.p}")
        if not 0 <= self.delta < 1 - 3.0 / self.p:
            raise ValueError(f"delta must lie in [0, 1 - 3/p), got {self.delta}")

    @property
    def weight_exponent(self) -> float:
        return 0.5 * (1.0 - 3.0 / self.p - self.delta)


@dataclass(eq=False)
class DyadicPartition:
    """Shell multipliers ``phi(2^-j |xi|)`` for ``j_min <= j <= j_max`` on a grid."""

    grid: Grid3
    j_min: int
    j_max: int
    multipliers: dict = field(repr=False)

    @property
    def shells(self) -> range:
        return range(self.j_min, self.j_max + 1)

    def profile_samples(self, count: int = 1025) -> np.ndarray:
        r = np.linspace(0.0, 3.0, count)
        return np.stack([r, phi(r)])

    def partition_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.profile_samples()).tobytes())
        h.update(json.dumps([self.j_min, self.j_max, self.grid.describe()]).encode())
        return h.hexdigest()[:16]

    def to_json(self) -> dict:
        r, v = self.profile_samples(257)
        return {"j_min": self.j_min, "j_max": self.j_max, "grid": self.grid.describe(),
                "profile_r": r.tolist(), "profile_phi": v.tolist(),
                "partition_hash": self.partition_hash()}


def build_partition(grid: Grid3) -> DyadicPartition:
    """Choose the shell range so every resolved nonzero wavevector is covered.

    The shell sum telescopes to ``chi(2^-(j_max+1) xi) - chi(2^-j_min xi)``, so
    it equals 1 exactly when ``|xi| >= 2^j_min * 4/3`` and
    ``|xi| <= 2^(j_max+1) * 3/4``.
    """
    kmag = grid.kmag
    nonzero = kmag[kmag > 0]
    xi_min, xi_max = float(nonzero.min()), float(nonzero.max())
    j_min = math.floor(math.log2(xi_min / OUTER))
    j_max = math.ceil(math.log2(xi_max / INNER)) - 1
    if j_max - j_min < 2:
        raise ValueError("grid too coarse to host three dyadic shells")
    mult = {j: phi(kmag * 2.0 ** (-j)) for j in range(j_min, j_max + 1)}
    for m in mult.values():
        m[0, 0, 0] = 0.0
    return DyadicPartition(grid, j_min, j_max, mult)


def partition_sum(part: DyadicPartition) -> np.ndarray:
    total = np.zeros(part.grid.spectral_shape)
    for j in part.shells:
        total += part.multipliers[j]
    return total


def lp_project(f: SpectralField, j: int, part: DyadicPartition) -> SpectralField:
    """Dyadic block ``Delta_j f``."""
    if j not in part.multipliers:
        raise ValueError(f"shell {j} outside [{part.j_min}, {part.j_max}]")
    if f.grid != part.grid:
        raise ValueError("field and partition live on different grids")
    return f.replace(f.coeffs * part.multipliers[j])


def block_norms(f: SpectralField, p: float, part: DyadicPartition) -> dict:
    """``||Delta_j f||_{L^p}`` for every shell, ascending j."""
    return {j: lp_norm(to_physical(lp_project(f, j, part)), p) for j in part.shells}


def _lr_sum(weighted, r: float) -> float:
    weighted = np.asarray(weighted, dtype=float)
    if weighted.size == 0:
        return 0.0
    if np.isinf(r):
        return float(weighted.max())
    total = 0.0
    for value in weighted:  # ascending shells, fixed order
        total += value ** r
    return float(total ** (1.0 / r))


def besov_from_blocks(blocks: dict, s: float, r: float) -> float:
    return _lr_sum([2.0 ** (j * s) * v for j, v in sorted(blocks.items())], r)


def besov_norm(f: SpectralField, idx: BesovIndex, part: DyadicPartition) -> float:
    """Homogeneous Besov norm from lattice block norms."""
    return besov_from_blocks(block_norms(f, idx.p, part), idx.s, idx.r)


def default_heat_times(grid: Grid3, per_decade: int = 64) -> np.ndarray:
    """Log grid spanning the diffusive time scales resolved on ``grid``."""
    kmag = grid.kmag
    nonzero = kmag[kmag > 0]
    t_min = 1e-2 / float(nonzero.max()) ** 2
    t_max = 20.0 / float(nonzero.min()) ** 2
    return log_time_grid(t_min, t_max, per_decade)


def heatflow_besov_norm(f: SpectralField, s: float, p: float, times=None) -> float:
    """``max_t t^(-s/2) ||e^{t Lap} f||_{L^p}`` over a sampled time grid."""
    if not s < 0:
        raise ValueError("the heat-flow characterisation needs s < 0")
    times = default_heat_times(f.grid) if times is None else np.asarray(times, float)
    best = 0.0
    for t in times:
        val = t ** (-s / 2.0) * lp_norm(to_physical(heat_semigroup(f, t)), p)
        best = max(best, val)
    return best


def kato_weighted_norms(traj: KatoTrajectory, idx: KatoIndex) -> np.ndarray:
    """Per-sample weighted norms ``t^a ||u(t)||_p``."""
    alpha = idx.weight_exponent
    out = np.empty(len(traj))
    for i, (t, f) in enumerate(zip(traj.times, traj.fields)):
        out[i] = t ** alpha * lp_norm(to_physical(f), idx.p)
    return out


def kato_norm(traj: KatoTrajectory, idx: KatoIndex) -> float:
    """Sampled Kato norm restricted to times within ``idx.horizon``."""
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    keep = traj.times <= idx.horizon * (1 + 1e-12)
    if not keep.any():
        raise ValueError("no trajectory samples inside the horizon")
    weighted = kato_weighted_norms(traj, idx)
    return float(weighted[keep].max())


def check_embedding(f: SpectralField, idx1: BesovIndex, idx2: BesovIndex,
                    part: DyadicPartition) -> float:
    """Ratio ``||f||_{idx2} / ||f||_{idx1}`` for a Sobolev-type embedding pair."""
    expected = idx1.s - 3.0 * (1.0 / idx1.p - 1.0 / idx2.p)
    if not (idx1.p <= idx2.p and idx1.r <= idx2.r and math.isclose(idx2.s, expected,
                                                                      abs_tol=1e-12)):
        raise ValueError("indices do not form an embedding pair")
    denom = besov_norm(f, idx1, part)
    if denom == 0:
        return 0.0
    return besov_norm(f, idx2, part) / denom


def check_interpolation(f: SpectralField, s1: float, s2: float, theta: float, p: float,
                        r: float, part: DyadicPartition) -> float:
    """``||f||_{theta s1 + (1-theta) s2} - ||f||_{s1}^theta ||f||_{s2}^(1-theta)``."""
    if not (s1 < s2 and 0 < theta < 1):
        raise ValueError("interpolation needs s1 < s2 and theta in (0, 1)")
    blocks = block_norms(f, p, part)
    mid = besov_from_blocks(blocks, theta * s1 + (1 - theta) * s2, r)
    lo = besov_from_blocks(blocks, s1, r)
    hi = besov_from_blocks(blocks, s2, r)
    return mid - lo ** theta * hi ** (1 - theta)


def norm_report(field_id: str, space: str, value: float, part: DyadicPartition) -> dict:
    return {"field_id": field_id, "space": space, "value": float(value),
            "partition_hash": part.partition_hash()}
