"""Periodic-box field operations: projection, heat flow, norms, snapshot IO."""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from nsfarfield.grid import (
    BoxGrid,
    VectorFieldGrid,
    heat_evolve,
    leray_project,
    read_snapshot,
    restrict_annulus_norm,
    weighted_lp_norm,
)


@pytest.fixture(scope="module")
def box2():
    return BoxGrid(2, 16.0, 128)


def random_field(grid, seed=0, smooth=True):
    rng = np.random.default_rng(seed)
    if not smooth:
        return VectorFieldGrid(grid, rng.normal(size=(grid.d,) + grid.shape))
    # band-limited random field: fill low modes only
    spec = np.zeros((grid.d,) + grid.shape, dtype=complex)
    m = 6
    for c in range(grid.d):
        block = rng.normal(size=(2 * m + 1,) * grid.d) + 1j * rng.normal(size=(2 * m + 1,) * grid.d)
        idx = np.ix_(*([np.r_[0 : m + 1, grid.n - m : grid.n]] * grid.d))
        full = np.zeros(grid.shape, dtype=complex)
        full[idx] = block[tuple(slice(0, 2 * m + 1) for _ in range(grid.d))][
            tuple(np.r_[0 : m + 1, m + 1 : 2 * m + 1] for _ in range(grid.d))
        ]
        spec[c] = full
    f = VectorFieldGrid.from_spectral(grid, spec)
    return VectorFieldGrid(grid, f.components)  # drop non-symmetric cache, keep real part


class TestBoxGrid:
    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            BoxGrid(2, 16.0, 12)  # too few points
        with pytest.raises(ValueError):
            BoxGrid(2, 16.0, 48)  # not a power of two
        with pytest.raises(ValueError):
            BoxGrid(2, -1.0, 32)
        with pytest.raises(ValueError):
            BoxGrid(4, 16.0, 32)

    def test_axis_and_spacing(self, box2):
        assert box2.spacing == pytest.approx(0.25)
        assert box2.axis[0] == -16.0
        assert box2.axis[-1] == pytest.approx(16.0 - 0.25)


class TestTransforms:
    def test_round_trip(self, box2):
        v = random_field(box2, seed=1, smooth=False)
        w = VectorFieldGrid.from_spectral(box2, v.spectral)
        err = np.abs(w.components - v.components).max()
        assert err < 1e-12 * np.abs(v.components).max()

    def test_spectral_cache_consistent(self, box2):
        v = random_field(box2, seed=2)
        w = VectorFieldGrid.from_spectral(box2, v.spectral)
        assert np.abs(w.spectral - v.spectral).max() <= 1e-12 * np.abs(v.spectral).max()


class TestLerayProject:
    def test_annihilates_gradients(self, box2):
        # v = grad(phi) for a Gaussian bump phi has zero projection (up to the
        # mean mode, which a gradient does not carry)
        phi = np.exp(-(box2.radius**2))
        spec_phi = np.fft.fftn(phi)
        grad = np.stack(
            [np.real(np.fft.ifftn(1j * k * spec_phi)) for k in box2.wavenumbers]
        )
        v = VectorFieldGrid(box2, grad)
        out = leray_project(v)
        assert np.abs(out.components).max() < 1e-10 * np.abs(v.components).max()

    def test_fixes_divergence_free_fields(self, box2):
        v = leray_project(random_field(box2, seed=3))
        w = leray_project(v)
        assert np.abs(w.components - v.components).max() < 1e-12 * np.abs(v.components).max()
        assert v.is_divergence_free()

    def test_idempotent(self, box2):
        v = random_field(box2, seed=4)
        once = leray_project(v)
        twice = leray_project(once)
        assert np.abs(twice.components - once.components).max() < 1e-12 * np.abs(
            once.components
        ).max()

    def test_self_adjoint(self, box2):
        u = random_field(box2, seed=5)
        v = random_field(box2, seed=6)
        pu = leray_project(u)
        pv = leray_project(v)
        lhs = np.sum(pu.components * v.components)
        rhs = np.sum(u.components * pv.components)
        scale = np.sum(np.abs(u.components * v.components))
        assert abs(lhs - rhs) < 1e-10 * scale


class TestHeatEvolve:
    def test_identity_at_zero(self, box2):
        v = random_field(box2, seed=7)
        w = heat_evolve(v, 0.0)
        np.testing.assert_array_equal(w.components, v.components)

    def test_rejects_negative_time(self, box2):
        with pytest.raises(ValueError):
            heat_evolve(random_field(box2, seed=8), -0.5)

    def test_gaussian_spreads_exactly(self, box2):
        # heat kernel family: g_sigma -> g_{sigma+t} pointwise
        sigma, t = 1.0, 0.75

        def g(r2, s):
            return (4 * math.pi * s) ** (-1.0) * np.exp(-r2 / (4 * s))

        comp = np.stack([g(box2.radius**2, sigma), np.zeros(box2.shape)])
        v = VectorFieldGrid(box2, comp)
        w = heat_evolve(v, t)
        expected = g(box2.radius**2, sigma + t)
        assert np.abs(w.components[0] - expected).max() < 1e-8

    def test_mean_conserved(self, box2):
        v = random_field(box2, seed=9)
        w = heat_evolve(v, 0.37)
        np.testing.assert_allclose(w.mean(), v.mean(), rtol=1e-12, atol=1e-15)

    def test_semigroup_law(self, box2):
        v = random_field(box2, seed=10)
        a = heat_evolve(heat_evolve(v, 0.2), 0.3)
        b = heat_evolve(v, 0.5)
        assert np.abs(a.components - b.components).max() < 1e-12 * np.abs(b.components).max()


class TestWeightedNorm:
    def test_zero_field(self, box2):
        z = VectorFieldGrid.zero(box2)
        for alpha, p in [(0, 1), (1, 2), (2, math.inf)]:
            assert weighted_lp_norm(z, alpha, p) == 0.0

    def test_parseval(self, box2):
        v = random_field(box2, seed=11)
        n2 = weighted_lp_norm(v, 0.0, 2.0)
        h = box2.spacing
        spec_energy = np.sum(np.abs(v.spectral) ** 2) / box2.n**box2.d * h**box2.d
        assert n2**2 == pytest.approx(spec_energy, rel=1e-10)

    def test_gaussian_against_radial_quadrature(self):
        # isotropic field with |v| = sqrt(2) e^{-r^2}; alpha=1, p=2 in d=2.
        # the (1+|x|) weight has a kink at 0, so the lattice rule is O(h^3);
        # h = 1/64 puts it past the 1e-6 oracle tolerance.
        grid = BoxGrid(2, 8.0, 1024)
        comp = np.stack([np.exp(-(grid.radius**2))] * 2)
        v = VectorFieldGrid(grid, comp)
        val = weighted_lp_norm(v, 1.0, 2.0)
        integrand = lambda r: (1 + r) ** 2 * 2.0 * np.exp(-2 * r**2) * 2 * math.pi * r
        oracle = math.sqrt(quad(integrand, 0, 12, epsabs=1e-14)[0])
        assert val == pytest.approx(oracle, rel=1e-6)

    def test_monotone_in_alpha(self, box2):
        v = random_field(box2, seed=12)
        vals = [weighted_lp_norm(v, a, 2.0) for a in (0.0, 0.5, 1.0, 1.5)]
        assert all(a <= b for a, b in zip(vals, vals[1:]))

    def test_sup_norm(self, box2):
        v = random_field(box2, seed=13)
        expected = ((1 + box2.radius) * v.magnitude()).max()
        assert weighted_lp_norm(v, 1.0, math.inf) == pytest.approx(expected, rel=0)


class TestAnnulusNorm:
    def test_matches_full_norm_for_interior_support(self, box2):
        comp = np.stack([np.exp(-(box2.radius**2))] * 2)
        v = VectorFieldGrid(box2, comp)
        full = weighted_lp_norm(v, 1.0, 2.0)
        ann = restrict_annulus_norm(v, 0.0, box2.length, 1.0, 2.0)
        # the annulus r < L misses only the corners, where the field is ~e^{-256}
        assert ann == pytest.approx(full, abs=1e-12)

    def test_zero_outside_support(self, box2):
        comp = np.zeros((2,) + box2.shape)
        comp[0] = np.where(box2.radius < 2.0, 1.0, 0.0)
        v = VectorFieldGrid(box2, comp)
        assert restrict_annulus_norm(v, 4.0, 8.0, 0.0, 2.0) == 0.0

    def test_log_mass_of_inverse_square_field(self):
        # |u| = |x|^{-2} over the annulus [8, 16) in d=2 integrates to 2 pi ln 2
        grid = BoxGrid(2, 16.0, 512)
        r = grid.radius
        comp = np.stack([np.where(r > 0.5, r, 1.0) ** (-2.0), np.zeros(grid.shape)])
        v = VectorFieldGrid(grid, comp)
        val = restrict_annulus_norm(v, 8.0, 16.0, 0.0, 1.0)
        assert val == pytest.approx(2 * math.pi * math.log(2), rel=0.02)

    def test_bounds_validated(self, box2):
        v = VectorFieldGrid.zero(box2)
        with pytest.raises(ValueError):
            restrict_annulus_norm(v, 8.0, 4.0, 0.0, 2.0)
        with pytest.raises(ValueError):
            restrict_annulus_norm(v, 0.0, 32.0, 0.0, 2.0)


class TestSnapshotIO:
    def test_round_trip_lossless(self, box2, tmp_path):
        v = random_field(box2, seed=14, smooth=False)
        v.time = 0.625
        path = tmp_path / "snap.nsvf"
        v.save(path)
        w = read_snapshot(path)
        assert w.grid == box2
        assert w.time == 0.625
        np.testing.assert_array_equal(w.components, v.components)

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.nsvf"
        path.write_bytes(b"not a snapshot at all")
        with pytest.raises(ValueError):
            read_snapshot(path)

    def test_byte_identical_rewrites(self, box2, tmp_path):
        v = random_field(box2, seed=15)
        p1, p2 = tmp_path / "a.nsvf", tmp_path / "b.nsvf"
        v.save(p1)
        v.save(p2)
        assert p1.read_bytes() == p2.read_bytes()
