import math

import numpy as np
import pytest

from qfrank import kernel as qk
from qfrank.basis import mat, vec
from qfrank.errors import ConfigurationError, DomainError

PI = math.pi

# Exact sphere averages of zhat1^2i zhat2^2j zhat3^2k, (2i-1)!!(2j-1)!!(2k-1)!!/(2n+1)!!.
SPHERE_AVG = {
    (1, 0, 0): 1 / 3,
    (1, 1, 0): 1 / 15,
    (2, 0, 0): 1 / 5,
    (1, 1, 1): 1 / 105,
    (2, 1, 0): 1 / 35,
    (3, 0, 0): 1 / 7,
}


def unit_spec(cutoff=0.1, coefficients=(1.0, 1.0, 1.0)):
    return qk.KernelSpec.inverse_power(coefficients=coefficients, cutoff=cutoff)


def oracle_g_table(cutoff=0.1, coefficients=(1.0, 1.0, 1.0)):
    """Analytic factorization: radial integral of r^-6*r^4 times exact averages."""
    radial = 1.0 / cutoff   # int_c^inf r^-2 dr
    c = coefficients
    return {
        "G1_100": 4 * PI * radial * c[0] * SPHERE_AVG[(1, 0, 0)],
        "G2_110": 4 * PI * radial * c[1] * SPHERE_AVG[(1, 1, 0)],
        "G2_200": 4 * PI * radial * c[1] * SPHERE_AVG[(2, 0, 0)],
        "G3_111": 4 * PI * radial * c[2] * SPHERE_AVG[(1, 1, 1)],
        "G3_210": 4 * PI * radial * c[2] * SPHERE_AVG[(2, 1, 0)],
        "G3_300": 4 * PI * radial * c[2] * SPHERE_AVG[(3, 0, 0)],
    }


class TestRadialProfile:
    def test_inverse_power_requires_steep_exponent(self):
        with pytest.raises(ConfigurationError):
            qk.RadialProfile.inverse_power(exponent=5.0, cutoff=0.1)
        with pytest.raises(ConfigurationError):
            qk.RadialProfile.inverse_power(exponent=4.0, cutoff=0.1)
        qk.RadialProfile.inverse_power(exponent=5.5, cutoff=0.1)

    def test_inverse_power_requires_cutoff(self):
        with pytest.raises(ConfigurationError):
            qk.RadialProfile.inverse_power(cutoff=0.0)

    def test_truncated_profile_allows_shallow_exponent(self):
        qk.RadialProfile.inverse_power(exponent=4.0, cutoff=0.1, rmax=2.0)

    def test_zero_inside_cutoff(self):
        p = qk.RadialProfile.inverse_power(cutoff=0.1)
        assert p(0.05) == 0.0
        assert p(0.2) == pytest.approx(0.2 ** -6)

    def test_power_integral_matches_quadrature(self):
        p = qk.RadialProfile.inverse_power(2.0, 6.0, 0.1)
        exact = p.power_integral(4, 0.1, math.inf)
        assert exact == pytest.approx(2.0 / 0.1, rel=1e-15)

    def test_table_shell(self):
        p = qk.RadialProfile.table([1.0, 2.0], [1.0, 1.0])
        assert p(0.5) == 0.0 and p(1.5) == 1.0 and p(2.5) == 0.0


class TestEvalKernel:
    def test_closed_form_point(self):
        spec = unit_spec(coefficients=(1.0, 1.0, 0.0))
        p = np.diag([1.0, -1.0, 0.0])
        val = qk.eval_kernel(spec, np.array([0.2, 0.0, 0.0]), p, p)
        assert val == pytest.approx(15625.0 * 2 + 15625.0 * 1, rel=1e-12)

    def test_inside_cutoff_is_zero(self):
        spec = unit_spec()
        p = np.diag([1.0, -1.0, 0.0])
        assert qk.eval_kernel(spec, np.array([0.05, 0.0, 0.0]), p, p) == 0.0

    def test_pure_g1_term(self):
        spec = unit_spec(cutoff=0.1, coefficients=(1.0, 0.0, 0.0))
        p = np.diag([1.0, -1.0, 0.0])   # |P|^2 = 2
        z = np.array([0.0, 1.0, 0.0])
        assert qk.eval_kernel(spec, z, p, p) == pytest.approx(2.0, rel=1e-12)

    def test_zero_displacement_rejected(self):
        with pytest.raises(DomainError):
            qk.eval_kernel(unit_spec(), np.zeros(3), np.eye(3), np.eye(3))

    def test_matrix_assembly_matches_pointwise(self):
        spec = unit_spec()
        rng = np.random.default_rng(3)
        z = rng.normal(size=3)
        k5 = qk.kernel_matrix(spec, z)
        for _ in range(5):
            pv, qv = rng.normal(size=5), rng.normal(size=5)
            direct = qk.eval_kernel(spec, z, mat(pv), mat(qv))
            assert float(pv @ k5 @ qv) == pytest.approx(direct, rel=1e-12)


class TestValidateAssumptions:
    def test_unit_kernel_passes(self):
        rep = qk.validate_assumptions(unit_spec(), alpha=0.25)
        assert rep.passed
        assert rep.integrable and rep.second_moment_finite
        assert rep.decay_exponent == pytest.approx(6.0, rel=1e-6)
        assert rep.alpha_condition_ok
        # (1-alpha)(p-3) > 2 iff alpha < 1/3 for p = 6
        assert rep.alpha_max == pytest.approx(1.0 / 3.0, rel=1e-6)

    def test_alpha_condition_fails_above_third(self):
        rep = qk.validate_assumptions(unit_spec(), alpha=0.4)
        assert rep.alpha_condition_ok is False

    def test_zero_kernel_fails_lower_bound(self):
        spec = qk.KernelSpec(qk.RadialProfile.zero(), qk.RadialProfile.zero(),
                             qk.RadialProfile.zero())
        rep = qk.validate_assumptions(spec)
        assert not rep.bounded_away_from_zero
        assert not rep.passed

    def test_indefinite_kernel_fails_nonnegativity(self):
        spec = unit_spec(coefficients=(1.0, -5.0, 0.0))
        rep = qk.validate_assumptions(spec)
        assert not rep.nonnegative
        assert rep.min_eigenvalue < 0


class TestMoments:
    def test_g_table_against_analytic_oracle(self):
        tab = qk.moments(unit_spec(), qk.QuadratureSpec())
        oracle = oracle_g_table()
        for name, exact in oracle.items():
            assert getattr(tab, name) == pytest.approx(exact, rel=1e-3), name

    def test_g_table_doubled_resolution(self):
        tab = qk.moments(unit_spec(), qk.QuadratureSpec().doubled())
        for name, exact in oracle_g_table().items():
            assert getattr(tab, name) == pytest.approx(exact, rel=1e-5), name

    def test_refinement_monotone(self):
        oracle = oracle_g_table()
        errs = []
        for nodes in (6, 12, 24):
            tab = qk.moments(unit_spec(), qk.QuadratureSpec(nodes, 16))
            errs.append(max(abs(getattr(tab, n) - v) / v for n, v in oracle.items()))
        floor = 5e-15
        assert all(b < a or (a < floor and b < floor)
                   for a, b in zip(errs, errs[1:]))

    def test_k0_components(self):
        tab = qk.moments(unit_spec(), qk.QuadratureSpec())
        assert tab.k0_g1 == pytest.approx(4000 * PI / 3, rel=1e-3)
        assert tab.k0_g2 == pytest.approx(4000 * PI / 9, rel=1e-3)
        assert tab.k0_g3 == pytest.approx(1600 * PI / 9, rel=1e-3)
        assert tab.k0_g3_raw == pytest.approx(800 * PI / 3, rel=1e-3)
        assert tab.k0 == pytest.approx(tab.k0_g1 + tab.k0_g2 + tab.k0_g3, rel=1e-14)

    def test_published_reference_within_two_percent(self):
        # published reference values for the r^-6, cutoff-0.1 kernel
        published = {"G1_100": 41.32, "G2_110": 8.264, "G2_200": 24.79,
                     "G3_111": 1.181, "G3_210": 3.542, "G3_300": 17.71}
        tab = qk.moments(unit_spec(), qk.QuadratureSpec())
        for name, ref in published.items():
            assert abs(getattr(tab, name) - ref) / ref < 0.02, name

    def test_marginal_exponent_still_has_second_moment(self):
        # q = 5.5 is admissible (constructor enforces q > 5); moments converge
        spec = qk.KernelSpec(qk.RadialProfile.inverse_power(1.0, 5.5, 0.1),
                             qk.RadialProfile.zero(), qk.RadialProfile.zero())
        tab = qk.moments(spec, qk.QuadratureSpec())
        exact = 4 * PI * (0.1 ** -0.5 / 0.5) * SPHERE_AVG[(1, 0, 0)]
        assert tab.G1_100 == pytest.approx(exact, rel=1e-6)


class TestElasticTensor:
    def test_frank_constants_unit_coefficients(self):
        co = qk.elastic_tensor(unit_spec(), qk.QuadratureSpec(), s_star=1.0)
        assert co.K1 == pytest.approx(880 * PI / 21, rel=1e-3)
        assert co.K2 == pytest.approx(704 * PI / 21, rel=1e-3)
        assert co.K3 == co.K1
        ratio = abs(co.K1 - co.K2) / co.K1
        assert ratio == pytest.approx(0.2, abs=1e-3)

    def test_l_k_consistency(self):
        for coeffs in [(1.0, 1.0, 1.0), (1.0, 0.3, 0.7), (2.0, 0.0, 1.0)]:
            co = qk.elastic_tensor(unit_spec(coefficients=coeffs),
                                   qk.QuadratureSpec(), s_star=0.8)
            s2 = 0.8 ** 2
            assert s2 * (2 * co.L1 + co.L2 + co.L3) == pytest.approx(co.K1, rel=1e-6)
            assert s2 * 2 * co.L1 == pytest.approx(co.K2, rel=1e-6)

    def test_one_constant_case(self):
        co = qk.elastic_tensor(unit_spec(coefficients=(1.0, 0.0, 0.0)),
                               qk.QuadratureSpec(), s_star=1.0)
        tab = qk.moments(unit_spec(coefficients=(1.0, 0.0, 0.0)))
        assert co.K1 == pytest.approx(2 * tab.G1_100, rel=1e-10)
        assert co.K2 == pytest.approx(co.K1, rel=1e-10)
        assert abs(co.L2) < 1e-8 * co.L1
        assert abs(co.L3) < 1e-8 * co.L1
        assert co.one_constant

    def test_s_star_scaling(self):
        c1 = qk.elastic_tensor(unit_spec(), s_star=1.0)
        c2 = qk.elastic_tensor(unit_spec(), s_star=2.0)
        assert c2.K1 == pytest.approx(4 * c1.K1, rel=1e-12)
        assert c2.L1 == pytest.approx(c1.L1, rel=1e-12)

    def test_probe_residual_small(self):
        co = qk.elastic_tensor(unit_spec(coefficients=(1.0, 0.4, 0.9)))
        assert co.probe_residual < 1e-10


class TestQuadraticForm:
    def test_paper_trial_gradients(self):
        co = qk.elastic_tensor(unit_spec(), qk.QuadratureSpec())
        e = np.diag([1.0, -1.0, 0.0])
        g1 = np.zeros((3, 3, 3)); g1[:, :, 2] = e
        g2 = np.zeros((3, 3, 3)); g2[:, :, 1] = e
        assert qk.quadratic_form(co, g1) == pytest.approx(2 * co.L1, rel=1e-12)
        assert qk.quadratic_form(co, g2) == pytest.approx(
            2 * co.L1 + co.L2 + co.L3, rel=1e-12)
        assert qk.quadratic_form(co, np.zeros((3, 3, 3))) == 0.0

    def test_non_traceless_rejected(self):
        co = qk.elastic_tensor(unit_spec())
        g = np.zeros((3, 3, 3)); g[:, :, 0] = np.eye(3)
        with pytest.raises(DomainError):
            qk.quadratic_form(co, g)

    def test_form_matches_quadrature_on_random_gradients(self):
        spec = unit_spec(coefficients=(1.0, 0.5, 0.25))
        co = qk.elastic_tensor(spec)
        rng = np.random.default_rng(7)
        for _ in range(5):
            g = np.stack([mat(rng.normal(size=5)) for _ in range(3)], axis=-1)
            assert qk.quadratic_form(co, g) == pytest.approx(
                qk.gradient_form(spec, qk.QuadratureSpec(), g), rel=1e-10)


class TestFrameCheck:
    def test_identity_rotation_exact(self):
        spec = unit_spec()
        rng = np.random.default_rng(0)
        a = mat(rng.normal(size=5))
        g = np.einsum("ab,c->abc", a, np.array([0.0, 0.0, 1.0]))
        assert qk.gradient_form(spec, qk.QuadratureSpec(), g) == pytest.approx(
            qk.gradient_form(spec, qk.QuadratureSpec(), g), rel=0)

    def test_random_rotations(self):
        assert qk.frame_check(unit_spec(), trials=100, seed=1) < 1e-6

    def test_dirichlet_kernel_tighter(self):
        assert qk.frame_check(unit_spec(coefficients=(1.0, 0.0, 0.0)),
                              trials=50, seed=2) < 1e-8


class TestOddMoment:
    def test_truncated_inverse_power(self):
        spec = qk.KernelSpec.inverse_power(cutoff=0.1, rmax=1.0)
        assert abs(qk.odd_moment_check(spec)) < 1e-10

    def test_shell_indicator(self):
        shell = qk.RadialProfile.table([1.0, 2.0], [1.0, 1.0])
        spec = qk.KernelSpec(shell, shell, shell)
        assert abs(qk.odd_moment_check(spec)) < 1e-10

    def test_half_space_restriction_is_still_exact(self):
        # The integrand is even in every coordinate, so restricting to
        # z1 > 0 and doubling changes nothing; a Monte-Carlo half-space
        # estimate confirms the continuum value is 0 (within noise).
        spec = qk.KernelSpec.inverse_power(cutoff=0.1, rmax=1.0)
        assert abs(qk.odd_moment_check(spec, half_space=True)) < 1e-10
        rng = np.random.default_rng(11)
        pts = rng.normal(size=(400_000, 3))
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)
        keep = pts[:, 0] > 0
        z1, z2 = pts[keep, 0], pts[keep, 1]
        mc = np.mean(z1 ** 4 - 3 * z1 ** 2 * z2 ** 2) / np.mean(
            z1 ** 4 + 3 * z1 ** 2 * z2 ** 2)
        assert abs(mc) < 5e-3

    def test_broken_asymmetric_grid_detected(self):
        # A grid that lost its reflection symmetry does get flagged.
        pts, w = qk.angular_nodes(16)
        phi = np.arctan2(pts[:, 1], pts[:, 0])
        keep = (phi > -0.9 * np.pi) & (phi < 0.8 * np.pi)
        pts, w = pts[keep], w[keep] * (4 * np.pi / np.sum(w[keep]))
        z1, z2 = pts[:, 0], pts[:, 1]
        num = float(np.sum(w * (z1 ** 4 - 3 * z1 ** 2 * z2 ** 2)))
        den = float(np.sum(w * (z1 ** 4 + 3 * z1 ** 2 * z2 ** 2)))
        assert abs(num / den) > 1e-3

    def test_infinite_fourth_moment_rejected(self):
        with pytest.raises(DomainError):
            qk.odd_moment_check(unit_spec())


class TestKernelPPIntegral:
    def test_matches_analytic(self):
        spec = unit_spec(coefficients=(1.0, 0.0, 0.0))
        p = vec(np.diag([1.0, -1.0, 0.0]))
        val = qk.kernel_pp_integral(spec, qk.QuadratureSpec(), p)
        assert val == pytest.approx(2.0 * 4000 * PI / 3, rel=1e-3)
