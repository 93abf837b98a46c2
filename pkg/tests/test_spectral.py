import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from calderon_ns.spectral import (
    DivergenceError, Grid3, GridError, PhysicalField, SpectralField, divergence_defect,
    from_function, gradient, heat_semigroup, inner_product, leray_project, lp_norm,
    nonlinear_term, perturbed_pressure, pressure_from, random_solenoidal, single_mode,
    taylor_green, to_physical, to_spectral,
)


def naive_dft(values):
    """O(n^6) forward DFT with 1/n^3 normalization, used as an oracle."""
    n = values.shape[0]
    idx = np.arange(n)
    out = np.zeros((n, n, n), dtype=complex)
    x, y, z = np.meshgrid(idx, idx, idx, indexing="ij")
    for a in range(n):
        for b in range(n):
            for c in range(n):
                phase = np.exp(-2j * np.pi * (a * x + b * y + c * z) / n)
                out[a, b, c] = np.sum(values * phase)
    return out / n ** 3


@pytest.fixture
def grid16():
    return Grid3(16)


class TestGrid:
    def test_rejects_bad_sizes(self):
        with pytest.raises(GridError):
            Grid3(12)
        with pytest.raises(GridError):
            Grid3(4)
        with pytest.raises(GridError):
            Grid3(8, box_len=-1.0)

    def test_wavevectors_scale_with_box(self):
        g = Grid3(8, box_len=1.0)
        kx, _, _ = g.wavevectors
        assert kx[1, 0, 0] == pytest.approx(2 * np.pi)

    def test_dealias_mask_two_thirds(self):
        g = Grid3(64)
        kx = g.integer_wavenumbers[0][:, 0, 0]
        kept = np.abs(kx[g.dealias_mask[:, 0, 0]])
        assert kept.max() == 21

    def test_hash_is_stable(self):
        assert Grid3(16).grid_hash() == Grid3(16).grid_hash()
        assert Grid3(16).grid_hash() != Grid3(32).grid_hash()


class TestTransforms:
    def test_zero_round_trip(self, grid16):
        z = PhysicalField(grid16, np.zeros((3, 16, 16, 16)))
        assert np.all(to_spectral(z).coeffs == 0)
        assert np.all(to_physical(to_spectral(z)).values == 0)

    def test_cosine_has_half_coefficients(self):
        g = Grid3(8, box_len=3.0)
        f = from_function(g, lambda x, y, z: np.cos(2 * np.pi * x / 3.0)[None])
        full = f.full_coeffs()[0]
        assert full[1, 0, 0] == pytest.approx(0.5, abs=1e-15)
        assert full[-1, 0, 0] == pytest.approx(0.5, abs=1e-15)
        full[1, 0, 0] = full[-1, 0, 0] = 0
        assert np.abs(full).max() < 1e-15

    def test_matches_naive_dft(self):
        g = Grid3(8)
        rng = np.random.default_rng(3)
        vals = rng.standard_normal((1, 8, 8, 8))
        f = PhysicalField(g, vals)
        oracle = naive_dft(vals[0])
        assert np.abs(to_spectral(f).full_coeffs()[0] - oracle).max() < 1e-13
        assert np.abs(to_spectral(f).coeffs[0] - oracle[:, :, :5]).max() < 1e-13
        back = to_physical(to_spectral(f)).values
        assert np.abs(back - vals).max() / np.abs(vals).max() < 1e-12

    def test_shape_mismatch(self, grid16):
        with pytest.raises(GridError):
            PhysicalField(grid16, np.zeros((3, 8, 8, 8)))
        with pytest.raises(GridError):
            SpectralField(grid16, np.zeros((3, 16, 16, 16)))


class TestHeat:
    def test_identity_at_zero(self, grid16):
        u = random_solenoidal(grid16, np.random.default_rng(0))
        assert np.array_equal(heat_semigroup(u, 0.0).coeffs, u.coeffs)

    def test_single_mode_decay(self, grid16):
        u = single_mode(grid16)
        h = heat_semigroup(u, 1.0)
        assert to_physical(h).values.max() == pytest.approx(np.exp(-1.0), rel=1e-13)

    def test_per_mode_oracle(self, grid16):
        u = random_solenoidal(grid16, np.random.default_rng(1), kmax=5)
        h = heat_semigroup(u, 0.1)
        kx, ky, kz = grid16.integer_wavenumbers
        expected = np.empty_like(u.coeffs)
        for a in range(16):
            for b in range(16):
                for c in range(9):
                    k2 = kx[a, 0, 0] ** 2 + ky[0, b, 0] ** 2 + kz[0, 0, c] ** 2
                    expected[:, a, b, c] = u.coeffs[:, a, b, c] * np.exp(-0.1 * k2)
        assert np.abs(h.coeffs - expected).max() < 1e-14

    def test_semigroup_property(self, grid16):
        u = random_solenoidal(grid16, np.random.default_rng(2))
        a = heat_semigroup(heat_semigroup(u, 0.03), 0.05)
        b = heat_semigroup(u, 0.08)
        assert np.abs(a.coeffs - b.coeffs).max() < 1e-15

    def test_negative_time(self, grid16):
        with pytest.raises(ValueError):
            heat_semigroup(single_mode(grid16), -0.1)


class TestLeray:
    def test_fixes_solenoidal(self, grid16):
        u = random_solenoidal(grid16, np.random.default_rng(4))
        assert np.abs(leray_project(u).coeffs - u.coeffs).max() < 1e-12 * np.abs(u.coeffs).max()

    def test_kills_gradients(self, grid16):
        phi = from_function(grid16, lambda x, y, z: np.sin(2 * x + y)[None])
        g = gradient(phi)
        assert np.abs(leray_project(g).coeffs).max() < 1e-14

    def test_matrix_oracle_and_idempotence(self, grid16):
        rng = np.random.default_rng(5)
        raw = to_spectral(PhysicalField(grid16, rng.standard_normal((3, 16, 16, 16))))
        p = leray_project(raw)
        kx, ky, kz = grid16.wavevectors
        a, b, c = 3, 7, 2
        xi = np.array([kx[a, 0, 0], ky[0, b, 0], kz[0, 0, c]])
        mat = np.eye(3) - np.outer(xi, xi) / xi.dot(xi)
        assert np.allclose(p.coeffs[:, a, b, c], mat @ raw.coeffs[:, a, b, c], atol=1e-14)
        pp = leray_project(p)
        assert np.abs(pp.coeffs - p.coeffs).max() < 1e-12
        assert divergence_defect(p) < 1e-12
        assert np.array_equal(p.coeffs[:, 0, 0, 0], raw.coeffs[:, 0, 0, 0])

    def test_self_adjoint(self, grid16):
        rng = np.random.default_rng(6)
        f = to_spectral(PhysicalField(grid16, rng.standard_normal((3, 16, 16, 16))))
        g = to_spectral(PhysicalField(grid16, rng.standard_normal((3, 16, 16, 16))))
        lhs = inner_product(leray_project(f), g)
        rhs = inner_product(f, leray_project(g))
        assert abs(lhs - rhs) < 1e-12 * abs(lhs)

    def test_scalar_rejected(self, grid16):
        with pytest.raises(GridError):
            leray_project(SpectralField.zeros(grid16, 1))


class TestNonlinear:
    def test_constant_field(self, grid16):
        c = from_function(grid16, lambda x, y, z: np.stack([np.ones_like(x), 2 * np.ones_like(x),
                                                           np.zeros_like(x)]))
        assert np.abs(nonlinear_term(c).coeffs).max() < 1e-14

    def test_taylor_green_pressure(self):
        g = Grid3(32)
        u = taylor_green(g)
        p = to_physical(pressure_from(u)).values[0]
        x, y, _ = g.mesh()
        assert np.abs(p - 0.25 * (np.cos(2 * x) + np.cos(2 * y))).max() < 1e-10

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2 ** 31))
    def test_energy_flux_vanishes(self, seed):
        g = Grid3(16)
        u = random_solenoidal(g, np.random.default_rng(seed))
        norm = np.sqrt(u.energy())
        assert abs(inner_product(u, nonlinear_term(u))) < 1e-10 * norm ** 3

    def test_rejects_compressible(self, grid16):
        phi = from_function(grid16, lambda x, y, z: np.sin(x)[None])
        with pytest.raises(DivergenceError):
            nonlinear_term(gradient(phi))


class TestPerturbedPressure:
    def test_m_zero(self, grid16):
        w = random_solenoidal(grid16, np.random.default_rng(7))
        pi1, pi2 = perturbed_pressure(w, SpectralField.zeros(grid16))
        assert np.abs(pi2.coeffs).max() == 0
        assert np.abs(pi1.coeffs - pressure_from(w).coeffs).max() < 1e-15

    def test_w_zero(self, grid16):
        m = random_solenoidal(grid16, np.random.default_rng(8))
        pi1, pi2 = perturbed_pressure(SpectralField.zeros(grid16), m)
        assert np.abs(pi1.coeffs).max() == 0 and np.abs(pi2.coeffs).max() == 0

    def test_elliptic_identity(self, grid16):
        rng = np.random.default_rng(9)
        w = random_solenoidal(grid16, rng, kmax=4)
        m = random_solenoidal(grid16, rng, kmax=4)
        pi1, pi2 = perturbed_pressure(w, m)
        lhs = grid16.k2 * (pi1.coeffs[0] + pi2.coeffs[0])
        # independent path: products and derivatives component by component
        pw, pm = to_physical(w).values, to_physical(m).values
        kv = grid16.wavevectors
        rhs = np.zeros(grid16.spectral_shape, complex)
        for i in range(3):
            for j in range(3):
                prod = to_spectral(PhysicalField(grid16, pw[i] * pw[j] + 2 * pm[i] * pw[j]))
                rhs += -kv[i] * kv[j] * prod.coeffs[0]
        # products are truncated to the dealiased band, as in the solver
        rhs = rhs * grid16.dealias_mask
        rhs[0, 0, 0] = 0
        assert np.abs(lhs - rhs).max() < 1e-10 * np.abs(rhs).max()

    def test_grid_mismatch(self):
        with pytest.raises(GridError):
            perturbed_pressure(SpectralField.zeros(Grid3(8)), SpectralField.zeros(Grid3(16)))


class TestLpNorm:
    def test_zero(self, grid16):
        assert lp_norm(PhysicalField(grid16, np.zeros((1, 16, 16, 16))), 3) == 0

    def test_constant(self):
        g = Grid3(8, box_len=2.0)
        f = PhysicalField(g, np.full((1, 8, 8, 8), -3.0))
        assert lp_norm(f, 2) == pytest.approx(3.0 * np.sqrt(8.0), rel=1e-14)
        assert lp_norm(f, np.inf) == 3.0

    def test_parseval(self, grid16):
        u = random_solenoidal(grid16, np.random.default_rng(10), kmax=6)
        assert lp_norm(to_physical(u), 2) ** 2 == pytest.approx(u.energy(), rel=1e-12)

    def test_bad_exponent(self, grid16):
        with pytest.raises(ValueError):
            lp_norm(PhysicalField(grid16, np.zeros((1, 16, 16, 16))), 0.5)

    def test_deterministic(self, grid16):
        f = to_physical(random_solenoidal(grid16, np.random.default_rng(11)))
        assert lp_norm(f, 3) == lp_norm(f, 3)
