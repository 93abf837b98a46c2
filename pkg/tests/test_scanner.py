import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from calderon_ns.scanner import (
    OMEGA3, ScanConfig, ScanError, amplitude_threshold, ball_weights, bump_cube_integral,
    count_bound_from_energy, cylinder_concentration, gaussian_bump, global_integrals,
    isolation_bruteforce, lattice_centers, pigeonhole_count, planted_bumps, rescale_and_isolate,
    scan_cylinders, smooth_benchmarks, typeI_note, typeI_weight,
)
from calderon_ns.spectral import Grid3, PhysicalField, SpectralField, to_spectral
from calderon_ns.trajectory import KatoTrajectory


@pytest.fixture(scope="module")
def grid32():
    return Grid3(32)


@pytest.fixture(scope="module")
def grid64():
    return Grid3(64)


def steady(field, times=(0.5, 1.0)):
    return KatoTrajectory(field.grid, np.asarray(times), [field] * len(times), initial=field)


def bump_traj(grid, center, width, amp):
    return steady(to_spectral(PhysicalField(grid, gaussian_bump(grid, center, width, amp))))


class TestConfig:
    def test_constants(self):
        cfg = ScanConfig(epsilon=0.1, rho=0.5)
        assert cfg.eps_bar == pytest.approx(0.1 / (3 * math.sqrt(2)), rel=1e-15)
        assert cfg.eps_tilde == pytest.approx((cfg.eps_bar / OMEGA3) ** (1 / 3), rel=1e-15)
        assert cfg.omega3 == pytest.approx(4.18879020478639, rel=1e-14)

    @pytest.mark.parametrize("eps", [0.0, 1.0, -0.1])
    def test_rejects_epsilon(self, eps):
        with pytest.raises(ScanError):
            ScanConfig(epsilon=eps)

    def test_min_branch_switches_at_eps_tilde(self):
        base = ScanConfig(epsilon=0.1)
        below = ScanConfig(epsilon=0.1, rho=0.9 * base.eps_tilde)
        above = ScanConfig(epsilon=0.1, rho=1.1 * base.eps_tilde)
        assert below.min_branch == "eps_bar*rho^2"
        assert below.min_threshold == below.threshold_w
        assert above.min_threshold == above.threshold_p2
        # both branches agree at rho = eps_tilde
        at = ScanConfig(epsilon=0.1, rho=base.eps_tilde)
        assert at.threshold_w == pytest.approx(at.threshold_p2, rel=1e-12)


class TestGeometry:
    def test_ball_volume(self, grid64):
        rng = np.random.default_rng(0)
        for _ in range(5):
            c = rng.uniform(0, grid64.box_len, 3)
            _, w = ball_weights(grid64, c, 0.7)
            assert w.sum() * grid64.cell_volume == pytest.approx(4 / 3 * math.pi * 0.7 ** 3, rel=5e-3)

    def test_wraps_periodically(self, grid32):
        idx, w = ball_weights(grid32, (0.0, 0.0, 0.0), 0.5)
        assert all(np.all((a >= 0) & (a < 32)) for a in idx)
        _, w2 = ball_weights(grid32, (np.pi, np.pi, np.pi), 0.5)
        assert w.sum() == pytest.approx(w2.sum(), rel=1e-12)

    def test_radius_limit(self, grid32):
        with pytest.raises(ScanError):
            ball_weights(grid32, (0, 0, 0), 2.0)


class TestConcentration:
    @pytest.mark.parametrize("width", [0.1, 0.15, 0.3])
    def test_bump_threshold_oracle(self, grid64, width):
        cfg = ScanConfig()
        c = (1.1, 2.3, 3.7)
        rep = cylinder_concentration(bump_traj(grid64, c, width, 1.0), None, None, c, cfg)
        measured = (cfg.threshold_w / rep.int_w) ** (1 / 3)
        assert measured == pytest.approx(amplitude_threshold(width, cfg), rel=0.05)

    def test_flags_just_above_and_not_below(self, grid64):
        cfg = ScanConfig()
        c = (3.0, 3.0, 3.0)
        a = amplitude_threshold(0.15, cfg)
        hi = cylinder_concentration(bump_traj(grid64, c, 0.15, 1.05 * a), None, None, c, cfg)
        lo = cylinder_concentration(bump_traj(grid64, c, 0.15, 0.95 * a), None, None, c, cfg)
        assert hi.flagged and hi.branch == "w"
        assert not lo.flagged

    def test_stored_normalization(self, grid32):
        cfg = ScanConfig(rho=0.6)
        c = (1.0, 1.0, 1.0)
        rep = cylinder_concentration(bump_traj(grid32, c, 0.3, 1.0), None, None, c, cfg)
        assert rep.conc_w == pytest.approx(rep.int_w / 0.36, rel=1e-14)

    def test_zero_field(self, grid32):
        z = steady(SpectralField.zeros(grid32))
        rep = cylinder_concentration(z, z.map(lambda f: SpectralField.zeros(grid32, 1)), None,
                                     (1, 1, 1), ScanConfig())
        assert rep.int_w == 0 and rep.int_p1 == 0 and not rep.flagged

    def test_cylinder_outside_span(self, grid32):
        tr = KatoTrajectory(grid32, [0.1, 0.2], [SpectralField.zeros(grid32)] * 2)
        with pytest.raises(ScanError):
            cylinder_concentration(tr, None, None, (1, 1, 1), ScanConfig(rho=0.5))
        with pytest.raises(ScanError):
            cylinder_concentration(steady(SpectralField.zeros(grid32)), None, None, (1, 1, 1),
                                   ScanConfig(t_end=2.0))

    def test_serrin_rescaling_exponents(self, grid32):
        # a steady field: scanning at rho with scale lam equals scanning at lam*rho
        # with the integrals multiplied by lam^-2 (velocity) and lam^-1 (pi2)
        c = (2.0, 2.0, 2.0)
        tr = bump_traj(grid32, c, 0.3, 1.0)
        p = tr.map(lambda f: SpectralField(grid32, f.coeffs[:1]))
        lam = 1.5
        scaled = cylinder_concentration(tr, p, p, c, ScanConfig(rho=0.4, normalize=True,
                                                                 serrin_lambda=lam))
        plain = cylinder_concentration(tr, p, p, c, ScanConfig(rho=0.6))
        assert scaled.int_w == pytest.approx(plain.int_w / lam ** 2, rel=1e-12)
        assert scaled.int_p1 == pytest.approx(plain.int_p1 / lam ** 2, rel=1e-12)
        assert scaled.int_p2 == pytest.approx(plain.int_p2 / lam, rel=1e-12)


class TestPlanted:
    def test_randomized_constructions(self, grid32):
        rng = np.random.default_rng(2024)
        cfg = ScanConfig()
        for _ in range(50):
            k = int(rng.integers(0, 5))
            fx = planted_bumps(grid32, k, cfg, rng, width=0.2)
            reps = scan_cylinders(fx.w, fx.pi1, fx.pi2, fx.centers, cfg)
            assert sum(r.flagged for r in reps) == k
            assert all(r.flagged for r in reps[:k])
            audit = pigeonhole_count(reps, cfg, grid32)
            assert audit.count == k and audit.holds

    def test_monotone_in_epsilon(self, grid32):
        rng = np.random.default_rng(3)
        fx = planted_bumps(grid32, 4, ScanConfig(), rng, width=0.2, strength=(0.2, 6.0))
        counts = []
        for eps in (0.02, 0.05, 0.1, 0.2, 0.5, 0.9):
            reps = scan_cylinders(fx.w, fx.pi1, fx.pi2, fx.centers, ScanConfig(epsilon=eps))
            counts.append(sum(r.flagged for r in reps))
        assert all(a >= b for a, b in zip(counts, counts[1:]))
        assert counts[0] > counts[-1]


class TestPigeonhole:
    def test_overlap_rejected(self, grid32):
        cfg = ScanConfig(rho=0.5)
        z = steady(SpectralField.zeros(grid32))
        reps = scan_cylinders(z, None, None, [(1, 1, 1), (1.5, 1, 1)], cfg)
        with pytest.raises(ScanError):
            pigeonhole_count(reps, cfg, grid32)

    def test_global_bound(self, grid32):
        rng = np.random.default_rng(9)
        cfg = ScanConfig()
        fx = planted_bumps(grid32, 3, cfg, rng, width=0.2)
        reps = scan_cylinders(fx.w, fx.pi1, fx.pi2, lattice_centers(grid32, cfg.rho), cfg)
        total = global_integrals(fx.w, fx.pi1, fx.pi2, cfg)
        audit = pigeonhole_count(reps, cfg, grid32, global_sum=total)
        assert audit.holds and audit.count * audit.min_threshold <= total


class TestBenchmarks:
    def test_no_false_positives(self, grid32):
        cfg = ScanConfig()
        centers = lattice_centers(grid32, cfg.rho)
        for name, (w, p1, p2) in smooth_benchmarks(grid32).items():
            reps = scan_cylinders(w, p1, p2, centers, cfg)
            assert not any(r.flagged for r in reps), name
            worst = max(max(r.int_w / cfg.threshold_w, r.int_p1 / cfg.threshold_p1,
                            r.int_p2 / cfg.threshold_p2) for r in reps)
            assert worst < 0.02, name


class TestCountBound:
    def test_values(self):
        out = count_bound_from_energy(4.0, 4, -0.25, fitted_C=2.0)
        assert out["bound"] == 2.0 * (8.0 + 4.0)
        assert out["exponent"] == 15

    def test_zero_and_negative(self):
        assert count_bound_from_energy(0.0, 4, -0.25)["bound"] == 0
        with pytest.raises(ValueError):
            count_bound_from_energy(-1.0, 4, -0.25)

    @settings(max_examples=40, deadline=None)
    @given(q=st.fractions(min_value=Fraction(301, 100), max_value=8),
           t=st.fractions(min_value=Fraction(1, 100), max_value=Fraction(99, 100)))
    def test_exponent_is_6q_minus_9(self, q, t):
        s = (-1 + 3 / q) * t  # between the critical index and zero
        out = count_bound_from_energy(1.0, q, s)
        assert out["exponent"] == 6 * q - 9
        assert out["exponent_matches_6q_minus_9"]

    def test_supercritical_exponent_differs(self):
        out = count_bound_from_energy(1.0, 4, -0.4)
        assert not out["exponent_matches_6q_minus_9"]


class TestIsolation:
    def test_boundary_distance(self):
        t_n = -0.25
        lam = 0.5
        pts = [(0, 0, 0), (2 * lam, 0, 0)]
        res = rescale_and_isolate(pts, t_n)
        assert res.condition_met and np.all(res.isolated) and res.implication_holds

    def test_just_inside(self):
        pts = [(0, 0, 0), (0.999, 0, 0)]
        res = rescale_and_isolate(pts, -0.25)
        assert not res.condition_met and not np.any(res.isolated)

    def test_rejects_nonnegative_time(self):
        with pytest.raises(ValueError):
            rescale_and_isolate([(0, 0, 0)], 0.0)

    def test_rejects_duplicates(self):
        with pytest.raises(ValueError):
            rescale_and_isolate([(1, 1, 1), (1, 1, 1)], -1.0)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10 ** 6), n=st.integers(2, 30),
           t_n=st.floats(-4.0, -1e-3), rho=st.floats(0.1, 2.0))
    def test_matches_bruteforce(self, seed, n, t_n, rho):
        pts = np.random.default_rng(seed).uniform(-3, 3, (n, 3))
        res = rescale_and_isolate(pts, t_n, rho=rho)
        assert np.array_equal(res.isolated, isolation_bruteforce(res.rescaled, rho))
        assert res.implication_holds


class TestTypeI:
    def test_weight(self):
        assert typeI_weight(-0.25, 4, -0.25, 3.0) == pytest.approx(0.25 ** 0.0 * 3.0)
        assert typeI_weight(-0.25, 4, -0.1, 1.0) == pytest.approx(0.25 ** 0.075, rel=1e-14)

    def test_supercritical_note(self):
        assert typeI_note(4, -0.4) is not None
        assert typeI_note(4, -0.1) is None

    def test_rejects_positive_time(self):
        with pytest.raises(ValueError):
            typeI_weight(0.1, 4, -0.25, 1.0)
