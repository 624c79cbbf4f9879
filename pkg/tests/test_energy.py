import math

import numpy as np
import pytest

from qfrank import energy as qe
from qfrank import fields as qf
from qfrank import kernel as qk
from qfrank import maxent as me
from qfrank.basis import uniaxial, vec
from qfrank.errors import AdmissibilityError, ConfigurationError, DomainError

TWO_PI = 2 * math.pi


@pytest.fixture(scope="module")
def shell_spec():
    p = qk.RadialProfile.table([1.0, 2.0], [1.0, 1.0])
    return qk.KernelSpec(p, p, p)


@pytest.fixture(scope="module")
def bulk18():
    return me.ground_state(18.0)


@pytest.fixture(scope="module")
def coeffs(shell_spec):
    return qk.elastic_tensor(shell_spec, qk.QuadratureSpec(), s_star=1.0)


def twist_director(x, y, z):
    return np.stack([np.cos(z), np.sin(z), np.zeros_like(z)], axis=-1)


def random_interior_field(grid, rng, scale=0.2):
    v = rng.normal(size=(grid.N, grid.N, grid.N, 5)) * scale
    return qf.OrderField(grid, me.project_field(v, margin=0.05))


class TestFEps:
    def test_constant_on_manifold_zero(self, shell_spec, bulk18):
        g = qf.TorusGrid(8)
        eps = 4 * g.h
        kg = qf.build_periodized_kernel(shell_spec, g, eps)
        f = qf.OrderField.constant(g, uniaxial([0, 0, 1.0], bulk18.s_star))
        e = qe.F_eps(f, kg, bulk18, eps)
        assert e.bilinear == pytest.approx(0.0, abs=1e-12)
        assert abs(e.total) < 1e-6

    def test_constant_off_manifold(self, shell_spec, bulk18):
        g = qf.TorusGrid(8)
        eps = 4 * g.h
        kg = qf.build_periodized_kernel(shell_spec, g, eps)
        b = uniaxial([0, 0, 1.0], 0.2)
        f = qf.OrderField.constant(g, b)
        e = qe.F_eps(f, kg, bulk18, eps)
        psi = float(me.psi_value(bulk18, b[None])[0])
        assert e.bilinear == pytest.approx(0.0, abs=1e-12)
        assert e.bulk == pytest.approx(TWO_PI ** 3 * psi / eps ** 2, rel=1e-9)

    def test_transform_matches_double_sum(self, shell_spec, bulk18):
        g = qf.TorusGrid(8)
        eps = 4 * g.h
        kg = qf.build_periodized_kernel(shell_spec, g, eps)
        rng = np.random.default_rng(0)
        f = random_interior_field(g, rng)
        fast = qe.bilinear_term(f, kg, eps)
        slow = qe.bilinear_double_sum(f, kg, eps)
        assert fast == pytest.approx(slow, rel=1e-10)

    def test_bilinear_nonnegative(self, shell_spec):
        g = qf.TorusGrid(8)
        eps = 4 * g.h
        kg = qf.build_periodized_kernel(shell_spec, g, eps)
        rng = np.random.default_rng(1)
        for _ in range(3):
            f = random_interior_field(g, rng)
            val = qe.bilinear_term(f, kg, eps)
            assert val > -1e-10 * max(abs(val), 1.0)

    def test_translation_invariance_exact_double_sum(self, shell_spec, bulk18):
        g = qf.TorusGrid(8)
        eps = 4 * g.h
        kg = qf.build_periodized_kernel(shell_spec, g, eps)
        rng = np.random.default_rng(2)
        f = random_interior_field(g, rng)
        shifted = qf.OrderField(g, np.roll(f.values, shift=(3, 1, 5), axis=(0, 1, 2)))
        b0 = qe.bilinear_double_sum(f, kg, eps, exact_sum=True)
        b1 = qe.bilinear_double_sum(shifted, kg, eps, exact_sum=True)
        assert b0 == b1
        # bulk term: same multiset of node values, fsum reduction
        assert qe.bulk_term(f, bulk18, eps) == qe.bulk_term(shifted, bulk18, eps)

    def test_translation_invariance_transform_path(self, shell_spec):
        g = qf.TorusGrid(16)
        eps = 4 * g.h
        kg = qf.build_periodized_kernel(shell_spec, g, eps)
        rng = np.random.default_rng(3)
        f = random_interior_field(g, rng)
        shifted = qf.OrderField(g, np.roll(f.values, shift=(4, 9, 2), axis=(0, 1, 2)))
        b0 = qe.bilinear_term(f, kg, eps)
        b1 = qe.bilinear_term(shifted, kg, eps)
        assert b1 == pytest.approx(b0, rel=1e-12)

    def test_eps_mismatch_rejected(self, shell_spec, bulk18):
        g = qf.TorusGrid(8)
        kg = qf.build_periodized_kernel(shell_spec, g, 4 * g.h)
        f = qf.OrderField.constant(g, np.zeros(5))
        with pytest.raises(ConfigurationError):
            qe.F_eps(f, kg, bulk18, 5 * g.h)


class TestFEpsGradient:
    def test_matches_finite_differences(self, shell_spec, bulk18):
        g = qf.TorusGrid(8)
        eps = 4 * g.h
        kg = qf.build_periodized_kernel(shell_spec, g, eps)
        rng = np.random.default_rng(4)
        f = random_interior_field(g, rng)
        grad, _ = qe.F_eps_gradient(f, kg, bulk18, eps)
        step = 1e-5
        for _ in range(6):
            d = rng.normal(size=f.values.shape)
            d /= math.sqrt(float(np.sum(d ** 2)))
            fp = qf.OrderField(g, f.values + step * d)
            fm = qf.OrderField(g, f.values - step * d)
            fd = (qe.F_eps(fp, kg, bulk18, eps).total
                  - qe.F_eps(fm, kg, bulk18, eps).total) / (2 * step)
            exact = float(np.sum(grad * d))
            assert fd == pytest.approx(exact, rel=1e-5)

    def test_constant_minimizer_gradient_sums_to_zero(self, shell_spec, bulk18):
        g = qf.TorusGrid(8)
        eps = 4 * g.h
        kg = qf.build_periodized_kernel(shell_spec, g, eps)
        f = qf.OrderField.constant(g, uniaxial([0, 0, 1.0], bulk18.s_star))
        grad, _ = qe.F_eps_gradient(f, kg, bulk18, eps)
        assert np.abs(grad.sum(axis=(0, 1, 2))).max() < 1e-10

    def test_zero_kernel_pure_entropy(self, bulk18):
        g = qf.TorusGrid(8)
        spec = qk.KernelSpec(qk.RadialProfile.zero(), qk.RadialProfile.zero(),
                             qk.RadialProfile.zero())
        eps = 4 * g.h
        kg = qf.build_periodized_kernel(spec, g, eps)
        rng = np.random.default_rng(5)
        f = random_interior_field(g, rng)
        grad, _ = qe.F_eps_gradient(f, kg, bulk18, eps)
        _, lam5, _ = me.dual_field(f.values)
        expect = g.cell_volume / eps ** 2 * (lam5 - bulk18.k0 * f.values)
        assert np.allclose(grad, expect, atol=1e-12)

    def test_saturated_nodes_reported(self, shell_spec, bulk18):
        g = qf.TorusGrid(8)
        eps = 4 * g.h
        kg = qf.build_periodized_kernel(shell_spec, g, eps)
        vals = np.zeros((8, 8, 8, 5))
        vals[0, 0, 0] = uniaxial([0, 0, 1.0], 1.0 - 1e-9)   # eigenvalue at 2/3
        f = qf.OrderField(g, vals)
        with pytest.raises(DomainError):
            qe.F_eps_gradient(f, kg, bulk18, eps)


class TestGammaEnergy:
    def test_twist_director_value(self, coeffs):
        # pure twist excites the 2 L1 invariant: the constant named K2
        g = qf.TorusGrid(32)
        x, y, z = g.coords()
        n = twist_director(x, y, z)
        energy, split = qe.gamma_energy((g, n), coeffs)
        # central differences damp the unit twist rate by exactly sin(h)/h
        damp = (math.sin(g.h) / g.h) ** 2
        assert energy == pytest.approx(0.25 * coeffs.K2 * TWO_PI ** 3 * damp,
                                       rel=1e-12)
        assert energy == pytest.approx(0.25 * coeffs.K2 * TWO_PI ** 3, rel=2e-2)
        assert split.splay == pytest.approx(0.0, abs=1e-20)
        assert split.bend == pytest.approx(0.0, abs=1e-20)
        assert split.twist == pytest.approx(TWO_PI ** 3 * damp, rel=1e-12)

    def test_twist_field_matches_director_route(self, coeffs):
        # independent route: L-form on the discrete gradient of the lift
        g = qf.TorusGrid(32)
        f = qf.director_to_field(twist_director, 1.0, g)
        e_field, _ = qe.gamma_energy(f, coeffs, s_star=1.0)
        x, y, z = g.coords()
        e_dir, _ = qe.gamma_energy((g, twist_director(x, y, z)), coeffs)
        # the lifted tensor oscillates at frequency 2, the director at 1;
        # each route lands exactly on its own central-difference damping
        cont = 0.25 * coeffs.K2 * TWO_PI ** 3
        assert e_field == pytest.approx(
            cont * (math.sin(2 * g.h) / (2 * g.h)) ** 2, rel=1e-12)
        assert e_dir == pytest.approx(
            cont * (math.sin(g.h) / g.h) ** 2, rel=1e-12)
        assert e_field == pytest.approx(cont, rel=6e-2)

    def test_splay_bend_director(self, coeffs):
        # n = (sin z, 0, cos z): density K1 sin^2 + K3 cos^2 = K1 since K3 = K1
        g = qf.TorusGrid(32)
        x, y, z = g.coords()
        n = np.stack([np.sin(z), np.zeros_like(z), np.cos(z)], axis=-1)
        energy, split = qe.gamma_energy((g, n), coeffs)
        damp = (math.sin(g.h) / g.h) ** 2
        expect = 0.125 * (coeffs.K1 + coeffs.K3) * TWO_PI ** 3 * damp
        assert energy == pytest.approx(expect, rel=1e-12)
        assert split.twist == pytest.approx(0.0, abs=1e-18)

    def test_constant_zero(self, coeffs):
        g = qf.TorusGrid(8)
        n = np.broadcast_to(np.array([0.0, 0.0, 1.0]), (8, 8, 8, 3)).copy()
        energy, _ = qe.gamma_energy((g, n), coeffs)
        assert energy == 0.0

    def test_off_manifold_rejected(self, coeffs):
        g = qf.TorusGrid(8)
        f = qf.OrderField.constant(g, uniaxial([0, 0, 1.0], 0.3))
        with pytest.raises(DomainError):
            qe.gamma_energy(f, coeffs, s_star=0.6)

    def test_lattice_rotation_equivariance(self, coeffs):
        # rotate the director and the lattice jointly by 90 deg about x
        g = qf.TorusGrid(16)
        x, y, z = g.coords()
        n = np.stack([np.cos(z) * np.cos(y), np.sin(z), np.cos(z) * np.sin(y)],
                     axis=-1)
        n /= np.linalg.norm(n, axis=-1, keepdims=True)
        e0, _ = qe.gamma_energy((g, n), coeffs)
        # R about e1: (x,y,z) -> (x,-z,y); n'(x) = R n(R^-1 x) with the
        # lattice relabel [i,j,k] -> [i, k, (-j) mod N]
        rot = np.array([[1.0, 0, 0], [0, 0, -1.0], [0, 1.0, 0]])
        m = n.transpose(0, 2, 1, 3)               # m[i,j,k] = n[i,k,j]
        p = np.roll(m[:, ::-1, :, :], 1, axis=1)  # j -> (-j) mod N
        n_rot = np.einsum("ab,ijkb->ijka", rot, p)
        e1, _ = qe.gamma_energy((g, n_rot), coeffs)
        assert e1 == pytest.approx(e0, rel=1e-12)


class TestBilinearVsLimit:
    def test_twist_errors_decrease(self, shell_spec, coeffs):
        g = qf.TorusGrid(32)
        f = qf.director_to_field(twist_director, 1.0, g)
        rows = qe.bilinear_vs_limit(f, shell_spec, [1.2, 0.8, 0.5], coeffs)
        errs = [r["rel_error"] for r in rows]
        assert errs[0] > errs[1] > errs[2]

    def test_constant_field_both_zero(self, shell_spec, coeffs):
        g = qf.TorusGrid(16)
        f = qf.OrderField.constant(g, uniaxial([0, 0, 1.0], 1.0))
        rows = qe.bilinear_vs_limit(f, shell_spec, [0.8], coeffs)
        # the spectral expansion cancels two large sums; zero holds to the
        # cancellation floor
        assert rows[0]["bilinear"] == pytest.approx(0.0, abs=1e-8)
        assert rows[0]["limit"] == pytest.approx(0.0, abs=1e-12)

    def test_one_constant_kernel_dirichlet_reduction(self):
        # g2 = g3 = 0: the limit is 2 G1_100 / 4 times the Dirichlet energy
        p = qk.RadialProfile.table([1.0, 2.0], [1.0, 1.0])
        spec = qk.KernelSpec(p, qk.RadialProfile.zero(), qk.RadialProfile.zero())
        co = qk.elastic_tensor(spec, qk.QuadratureSpec(), s_star=1.0)
        tab = qk.moments(spec)
        g = qf.TorusGrid(16)
        f = qf.director_to_field(twist_director, 1.0, g)
        limit, _ = qe.gamma_energy(f, co)
        grad = qf.discrete_gradient(f.values, g.h)
        dirichlet = g.cell_volume * float(np.sum(grad ** 2))
        # L1 = G1_100 here (and K2 = 2 L1), so the limit is G1_100/4 times
        # the Dirichlet energy
        assert limit == pytest.approx(tab.G1_100 / 4 * dirichlet, rel=1e-10)
        assert co.K2 == pytest.approx(2 * tab.G1_100, rel=1e-10)


class TestElectrostatics:
    def box_mask(self, grid):
        geo = qf.BoxGeometry((math.pi / 2,) * 3, (3 * math.pi / 2,) * 3)
        return qf.build_mask(geo, 0.4, 0.25, 0.5, grid)

    def test_linear_potential_exact(self, bulk18):
        g = qf.TorusGrid(16)
        mask = self.box_mask(g)
        f = qf.OrderField.constant(g, np.zeros(5))
        cfg = qe.ElectrostaticConfig(A_iso=1.0, A_aniso=0.0,
                                     phi0=lambda x, y, z: x)
        res = qe.estat_solve(f, mask, cfg)
        x = g.coords()[0]
        err = np.abs(res.phi - x)[mask.omega].max()
        assert err < 1e-8
        vol = mask.omega.sum() * g.cell_volume
        assert res.E_value == pytest.approx(-0.5 * vol, abs=1e-8)
        assert res.face_energy == pytest.approx(-0.5 * vol, abs=1e-8)
        assert res.residual < 1e-10

    def test_zero_boundary_data(self, bulk18):
        g = qf.TorusGrid(16)
        mask = self.box_mask(g)
        f = qf.OrderField.constant(g, np.zeros(5))
        cfg = qe.ElectrostaticConfig(A_iso=1.0, A_aniso=0.5,
                                     phi0=lambda x, y, z: np.zeros_like(x))
        res = qe.estat_solve(f, mask, cfg)
        assert np.abs(res.phi).max() == 0.0
        assert res.E_value == 0.0

    def test_maximum_structure(self):
        # the solved potential maximizes the face form among admissible phi
        g = qf.TorusGrid(16)
        mask = self.box_mask(g)
        f = qf.director_to_field(twist_director, 0.5, g)
        cfg = qe.ElectrostaticConfig(A_iso=2.0, A_aniso=1.0,
                                     phi0=lambda x, y, z: x)
        res = qe.estat_solve(f, mask, cfg)
        rng = np.random.default_rng(6)
        base = res.face_energy
        for _ in range(10):
            dphi = rng.normal(size=res.phi.shape) * 1e-3
            dphi[~mask.omega] = 0.0
            perturbed = qe._face_quadratic_form(f, mask, cfg, res.phi + dphi)
            assert perturbed <= base + 1e-12 * abs(base)

    def test_spd_violation_rejected(self):
        with pytest.raises(ConfigurationError):
            qe.ElectrostaticConfig(A_iso=0.2, A_aniso=1.0,
                                   phi0=lambda x, y, z: x)

    def test_richardson_consistency(self):
        # variable dielectric from a twist field: E converges at O(h^2)
        def skew_director(x, y, z):
            return np.stack([np.cos(x + z), np.sin(x + z),
                             0.5 * np.sin(y)], axis=-1)

        energies = []
        for n in (16, 32, 64):
            g = qf.TorusGrid(n)
            mask = self.box_mask(g)
            f = qf.director_to_field(skew_director, 0.5, g)
            cfg = qe.ElectrostaticConfig(A_iso=2.0, A_aniso=1.0,
                                         phi0=lambda x, y, z: x, cg_tol=1e-12)
            energies.append(qe.estat_solve(f, mask, cfg).E_value)
        ratio = (energies[0] - energies[1]) / (energies[1] - energies[2])
        assert 4.0 / 1.6 < ratio < 4.0 * 1.6


class TestGEps:
    def test_frozen_constant_zero(self, shell_spec, bulk18):
        g = qf.TorusGrid(16)
        eps = 4 * g.h
        geo = qf.BallGeometry((math.pi,) * 3, 2.0)
        mask = qf.build_mask(geo, eps, 0.25, 0.5, g)
        kg = qf.build_periodized_kernel(shell_spec, g, eps)
        b0 = qf.OrderField.constant(g, uniaxial([0, 0, 1.0], bulk18.s_star))
        e = qe.G_eps(b0, mask, kg, bulk18, eps, boundary_field=b0)
        assert abs(e.total) < 1e-6

    def test_admissibility_violation(self, shell_spec, bulk18):
        g = qf.TorusGrid(16)
        eps = 4 * g.h
        geo = qf.BallGeometry((math.pi,) * 3, 2.0)
        mask = qf.build_mask(geo, eps, 0.25, 0.5, g)
        kg = qf.build_periodized_kernel(shell_spec, g, eps)
        b0 = qf.OrderField.constant(g, uniaxial([0, 0, 1.0], bulk18.s_star))
        bad = b0.copy()
        collar_cells = np.argwhere(mask.collar)
        i, j, k = collar_cells[0]
        bad.values[i, j, k, 0] += 1e-3
        with pytest.raises(AdmissibilityError):
            qe.G_eps(bad, mask, kg, bulk18, eps, boundary_field=b0)

    def test_bilinear_matches_double_sum(self, shell_spec, bulk18):
        g = qf.TorusGrid(8)
        eps = 4 * g.h
        geo = qf.BallGeometry((math.pi,) * 3, 2.0)
        mask = qf.build_mask(geo, eps, 0.25, 0.5, g)
        kg = qf.build_periodized_kernel(shell_spec, g, eps)
        rng = np.random.default_rng(7)
        f = random_interior_field(g, rng)
        e = qe.G_eps(f, mask, kg, bulk18, eps)
        assert e.bilinear == pytest.approx(
            qe.bilinear_double_sum(f, kg, eps), rel=1e-10)


class TestHarmonicFill:
    def test_empty_region_identity(self):
        g = qf.TorusGrid(8)
        rng = np.random.default_rng(8)
        f = qf.OrderField(g, rng.normal(size=(8, 8, 8, 5)))
        out = qe.harmonic_fill(f, np.zeros((8, 8, 8), dtype=bool))
        assert np.array_equal(out.values, f.values)

    def test_constant_surroundings(self):
        g = qf.TorusGrid(8)
        f = qf.OrderField.constant(g, np.arange(5.0))
        region = np.zeros((8, 8, 8), dtype=bool)
        region[3:5, 3:5, 3:5] = True
        noisy = f.copy()
        noisy.values[region] = 17.0
        out = qe.harmonic_fill(noisy, region)
        assert np.allclose(out.values, f.values, atol=1e-10)

    def test_linear_slab_fill(self):
        # affine data is discretely harmonic for the 7-point stencil
        g = qf.TorusGrid(16)
        x = g.coords()[0]
        vals = np.zeros((16, 16, 16, 5))
        vals[..., 0] = x
        f = qf.OrderField(g, vals)
        region = np.zeros((16, 16, 16), dtype=bool)
        region[5:9, 4:12, 4:12] = True   # interior slab, x-range away from wrap
        noisy = f.copy()
        noisy.values[region] = -3.0
        out = qe.harmonic_fill(noisy, region)
        assert np.abs(out.values[..., 0] - x)[region].max() < 1e-8


class TestRemainders:
    def test_constant_field_r2_r3_zero(self, shell_spec, bulk18):
        g = qf.TorusGrid(16)
        eps = 0.5
        geo = qf.BallGeometry((math.pi,) * 3, 2.0)
        mask = qf.build_mask(geo, eps, 0.25, 0.5, g)
        kg = qf.build_periodized_kernel(shell_spec, g, eps)
        f = qf.OrderField.constant(g, uniaxial([0, 0, 1.0], bulk18.s_star))
        tab = qk.moments(shell_spec)
        rep = qe.remainders(f, mask, shell_spec, eps, bulk18, kg, tab.k0, 6.0)
        scale = max(abs(rep.R1), 1.0)
        assert abs(rep.R2) < 1e-9 * scale
        assert abs(rep.R3) < 1e-9 * scale

    def test_predicted_exponent_arithmetic(self, shell_spec, bulk18):
        g = qf.TorusGrid(16)
        geo = qf.BallGeometry((math.pi,) * 3, 2.0)
        mask = qf.build_mask(geo, 0.4, 0.25, 0.5, g)
        kg = qf.build_periodized_kernel(shell_spec, g, 0.4)
        f = qf.OrderField.constant(g, uniaxial([0, 0, 1.0], bulk18.s_star))
        tab = qk.moments(shell_spec)
        rep = qe.remainders(f, mask, shell_spec, 0.4, bulk18, kg, tab.k0, 6.0)
        assert rep.predicted_exponent == pytest.approx(0.25, rel=1e-12)
