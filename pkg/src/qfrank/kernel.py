"""Isotropic three-term interaction kernels and their moment integrals.

A kernel acts on pairs of symmetric traceless tensors P, Q as

    K(z) P . Q = g1(|z|) P.Q + g2(|z|) (P zhat).(Q zhat) + g3(|z|) (zhat.P zhat)(zhat.Q zhat)

with radial profiles g1, g2, g3.  This module validates the standing
assumptions (pointwise nonnegativity, integrability, scalar domination,
polynomial decay), evaluates the moment table G^n_{ijk}, the isotropic
coupling k0, and the elastic coefficients (L1, L2, L3) / (K1, K2, K3) by
radial x angular product quadrature with an analytic tail for inverse-power
profiles.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .basis import BASIS, mat, random_rotation, vec
from .errors import ConfigurationError, DomainError, NumericalError, ValidationFailure

# Switch-over from quadrature panel to the analytic tail, in units of the
# inner cutoff.  Chosen so a single Gauss panel resolves the bracket well.
TAIL_SWITCH_FACTOR = 32.0


# ---------------------------------------------------------------------------
# radial profiles


@dataclass(frozen=True)
class RadialProfile:
    """One radial factor g_i(r).

    ``inverse-power`` is coefficient * r**(-exponent) on [cutoff, rmax],
    ``table`` interpolates (table_r, table_v) linearly and vanishes outside
    the knot range, ``zero`` is identically zero.
    """

    form: str
    coefficient: float = 1.0
    exponent: float = 6.0
    cutoff: float = 0.0
    rmax: float = math.inf
    table_r: tuple = ()
    table_v: tuple = ()

    def __post_init__(self):
        if self.form not in ("inverse-power", "table", "zero"):
            raise ConfigurationError(f"unknown radial profile form {self.form!r}")
        if self.form == "inverse-power":
            if self.cutoff <= 0:
                raise ConfigurationError("inverse-power profile needs a positive inner cutoff")
            if not math.isfinite(self.rmax) and self.exponent <= 5:
                raise ConfigurationError(
                    "inverse-power exponent must exceed 5 for an integrable kernel "
                    "with finite second moment (got %g)" % self.exponent)
            if math.isfinite(self.rmax) and self.rmax <= self.cutoff:
                raise ConfigurationError("rmax must exceed the inner cutoff")
        if self.form == "table":
            r = np.asarray(self.table_r, dtype=float)
            v = np.asarray(self.table_v, dtype=float)
            if r.size < 2 or r.size != v.size:
                raise ConfigurationError("table profile needs matching r/value knots (>= 2)")
            if np.any(np.diff(r) <= 0) or r[0] < 0:
                raise ConfigurationError("table knots must be increasing and nonnegative")
            if not np.all(np.isfinite(v)):
                raise ConfigurationError("table values must be finite")

    @classmethod
    def inverse_power(cls, coefficient=1.0, exponent=6.0, cutoff=0.1, rmax=math.inf):
        return cls("inverse-power", coefficient=coefficient, exponent=exponent,
                   cutoff=cutoff, rmax=rmax)

    @classmethod
    def table(cls, r, v):
        r = tuple(float(x) for x in r)
        v = tuple(float(x) for x in v)
        return cls("table", cutoff=r[0], rmax=r[-1], table_r=r, table_v=v)

    @classmethod
    def zero(cls):
        return cls("zero")

    @property
    def is_zero(self):
        return self.form == "zero" or (self.form == "inverse-power" and self.coefficient == 0.0)

    @property
    def r_inner(self):
        if self.form == "table":
            return self.table_r[0]
        return self.cutoff

    @property
    def r_outer(self):
        if self.form == "table":
            return self.table_r[-1]
        return self.rmax

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.form == "zero":
            return np.zeros_like(r)
        if self.form == "inverse-power":
            live = (r >= self.cutoff) & (r <= self.rmax)
            out = np.zeros_like(r)
            rr = np.where(live, r, 1.0)
            out[live] = self.coefficient * rr[live] ** (-self.exponent)
            return out
        return np.interp(r, self.table_r, self.table_v, left=0.0, right=0.0)

    def power_integral(self, s, a, b):
        """Exact integral of profile(r) * r**s over [a, b] for inverse-power form."""
        if self.form != "inverse-power":
            raise ValueError("closed-form tail only for inverse-power profiles")
        a = max(a, self.cutoff)
        b = min(b, self.rmax)
        if b <= a:
            return 0.0
        t = s - self.exponent
        if abs(t + 1.0) < 1e-14:
            if not math.isfinite(b):
                raise DomainError("logarithmically divergent radial integral")
            return self.coefficient * math.log(b / a)
        if not math.isfinite(b):
            if t > -1.0:
                raise DomainError(f"divergent radial integral r^{s}·g (exponent {self.exponent})")
            return -self.coefficient * a ** (t + 1.0) / (t + 1.0)
        return self.coefficient * (b ** (t + 1.0) - a ** (t + 1.0)) / (t + 1.0)

    def moment_finite(self, s):
        """Whether the radial integral of profile(r) * r**s converges."""
        if self.is_zero:
            return True
        if math.isfinite(self.r_outer):
            return True
        return s - self.exponent < -1.0


@dataclass(frozen=True)
class KernelSpec:
    """Three radial profiles plus the user-supplied domination constant M."""

    g1: RadialProfile
    g2: RadialProfile
    g3: RadialProfile
    M_bound: float = 10.0

    @classmethod
    def inverse_power(cls, coefficients=(1.0, 1.0, 1.0), exponent=6.0, cutoff=0.1,
                      rmax=math.inf, M_bound=10.0):
        c1, c2, c3 = coefficients
        def prof(c):
            if c == 0.0:
                return RadialProfile.zero()
            return RadialProfile.inverse_power(c, exponent, cutoff, rmax)
        return cls(prof(c1), prof(c2), prof(c3), M_bound=M_bound)

    @property
    def profiles(self):
        return (self.g1, self.g2, self.g3)

    @property
    def r_inner(self):
        live = [p.r_inner for p in self.profiles if not p.is_zero]
        return min(live) if live else 0.0

    @property
    def r_inner_max(self):
        live = [p.r_inner for p in self.profiles if not p.is_zero]
        return max(live) if live else 0.0

    @property
    def r_outer(self):
        live = [p.r_outer for p in self.profiles if not p.is_zero]
        return max(live) if live else 0.0

    def eigenvalue_bounds(self, r):
        """Pointwise eigenvalues of K on Sym0(3): returns (lambda_min, lambda_max).

        In the frame zhat = e3 the 5x5 matrix of K is diagonal with entries
        g1 (twice), g1 + g2/2 (twice) and g1 + 2(g2+g3)/3; isotropy makes one
        direction sufficient.
        """
        v1 = self.g1(r)
        v2 = self.g2(r)
        v3 = self.g3(r)
        eigs = np.stack([v1, v1 + 0.5 * v2, v1 + (2.0 / 3.0) * (v2 + v3)])
        return eigs.min(axis=0), eigs.max(axis=0)

    def decay_bound_mass(self, radius):
        """Upper bound for the total kernel mass beyond ``radius`` (operator norm sense)."""
        total = 0.0
        for p in self.profiles:
            if p.is_zero:
                continue
            a = max(radius, p.r_inner)
            if p.form == "inverse-power":
                total += abs(4.0 * math.pi * p.power_integral(2, a, p.rmax))
            else:
                if a < p.r_outer:
                    rr = np.linspace(a, p.r_outer, 257)
                    total += 4.0 * math.pi * np.trapezoid(np.abs(p(rr)) * rr ** 2, rr)
        return total


@dataclass(frozen=True)
class QuadratureSpec:
    """Product rule: ``radial_nodes`` Gauss points on [r0, R_switch] (analytic
    inverse-power tail beyond), Gauss-Legendre of order ``angular_order`` in
    cos(theta) and a uniform 2*angular_order rule in phi."""

    radial_nodes: int = 16
    angular_order: int = 16
    tail_mode: str = "analytic"

    def __post_init__(self):
        if self.radial_nodes < 4 or self.angular_order < 4:
            raise ConfigurationError("quadrature node counts must be at least 4")
        if self.angular_order % 2:
            raise ConfigurationError("angular order must be even")
        if self.tail_mode not in ("analytic", "truncate"):
            raise ConfigurationError(f"unknown tail mode {self.tail_mode!r}")

    def doubled(self):
        return QuadratureSpec(2 * self.radial_nodes, 2 * self.angular_order, self.tail_mode)


@dataclass
class MomentTable:
    """Quadrature moments: the six G^n_{ijk}, k0 and its three summands, and
    zeroth/second moments of the scalar bound g = lambda_min(K)."""

    G1_100: float
    G2_110: float
    G2_200: float
    G3_111: float
    G3_210: float
    G3_300: float
    k0: float
    k0_g1: float
    k0_g2: float
    k0_g3: float
    k0_g3_raw: float   # fourth-moment summand without the 2/3 factor
    g_zeroth_moment: float
    g_second_moment: float

    def g_values(self):
        return {
            "G1_100": self.G1_100, "G2_110": self.G2_110, "G2_200": self.G2_200,
            "G3_111": self.G3_111, "G3_210": self.G3_210, "G3_300": self.G3_300,
        }

    def to_json_dict(self):
        d = self.g_values()
        d["k0"] = self.k0
        return d


@dataclass
class ElasticCoefficients:
    """Invariant coefficients of the limiting quadratic gradient energy."""

    L1: float
    L2: float
    L3: float
    K1: float
    K2: float
    K3: float
    s_star: float
    s_star_scaling_applied: bool = True
    probe_residual: float = 0.0

    @property
    def one_constant(self):
        scale = max(abs(self.L1), 1e-300)
        return abs(self.L2) < 1e-8 * scale and abs(self.L3) < 1e-8 * scale

    def to_json_dict(self):
        return {"L1": self.L1, "L2": self.L2, "L3": self.L3,
                "K1": self.K1, "K2": self.K2, "K3": self.K3}


# ---------------------------------------------------------------------------
# quadrature grids


def angular_nodes(order, half_space=False):
    """Gauss x uniform product nodes on the unit sphere: (points, weights)."""
    u, wu = np.polynomial.legendre.leggauss(order)
    nphi = 2 * order
    phi = 2.0 * math.pi * np.arange(nphi) / nphi
    wphi = 2.0 * math.pi / nphi
    s = np.sqrt(1.0 - u ** 2)
    pts = np.empty((order, nphi, 3))
    pts[..., 0] = s[:, None] * np.cos(phi)[None, :]
    pts[..., 1] = s[:, None] * np.sin(phi)[None, :]
    pts[..., 2] = u[:, None]
    w = (wu[:, None] * wphi) * np.ones((order, nphi))
    pts = pts.reshape(-1, 3)
    w = w.reshape(-1)
    if half_space:
        # diagnostic misuse: integrate only z1 > 0 and double
        keep = pts[:, 0] > 0
        pts, w = pts[keep], 2.0 * w[keep]
    return pts, w


def _radial_rule(profile, quad):
    """Gauss nodes/weights on [r0, R_switch] plus the analytic switch radius."""
    if profile.is_zero:
        return np.empty(0), np.empty(0), 0.0
    r0 = profile.r_inner
    if profile.form == "table":
        nodes, weights = [], []
        x, wx = np.polynomial.legendre.leggauss(quad.radial_nodes)
        for a, b in zip(profile.table_r[:-1], profile.table_r[1:]):
            nodes.append(0.5 * (b - a) * x + 0.5 * (a + b))
            weights.append(0.5 * (b - a) * wx)
        return np.concatenate(nodes), np.concatenate(weights), profile.r_outer
    r_switch = min(profile.rmax, TAIL_SWITCH_FACTOR * r0)
    x, wx = np.polynomial.legendre.leggauss(quad.radial_nodes)
    nodes, weights = [], []
    a = r0
    # geometric panels (ratio 2) keep the power-law integrand smooth per panel
    while a < r_switch * (1 - 1e-12):
        b = min(2 * a, r_switch)
        nodes.append(0.5 * (b - a) * x + 0.5 * (a + b))
        weights.append(0.5 * (b - a) * wx)
        a = b
    return np.concatenate(nodes), np.concatenate(weights), r_switch


def radial_moment(profile, s, quad):
    """Integral of profile(r) * r**s dr over [0, inf) by panel + analytic tail."""
    if profile.is_zero:
        return 0.0
    if not profile.moment_finite(s):
        raise DomainError(
            f"radial moment r^{s} of {profile.form} profile diverges; "
            "truncate the profile (rmax) first")
    nodes, weights, r_switch = _radial_rule(profile, quad)
    value = float(np.sum(weights * profile(nodes) * nodes ** s))
    if profile.form == "inverse-power" and quad.tail_mode == "analytic":
        value += profile.power_integral(s, r_switch, profile.rmax)
    return value


def scalar_bound_moments(spec, quad, s):
    """Radial moment of g = lambda_min(K) (times r^s), quadrature-only tail fallback.

    Exact analytic tails are available when the nonzero profiles share one
    inverse-power exponent; otherwise the integral is truncated at the
    largest switch radius.
    """
    live = [p for p in spec.profiles if not p.is_zero]
    if not live:
        return 0.0
    r0 = min(p.r_inner for p in live)
    r_out = max((_radial_rule(p, quad)[2]) for p in live)
    x, wx = np.polynomial.legendre.leggauss(quad.radial_nodes)
    total = 0.0
    a = r0
    # geometric panels, ratio 2, so the integrand is smooth per panel
    while a < r_out * (1 - 1e-12):
        b = min(2 * a, r_out)
        nodes = 0.5 * (b - a) * x + 0.5 * (a + b)
        g_min, _ = spec.eigenvalue_bounds(nodes)
        total += float(np.sum(0.5 * (b - a) * wx * g_min * nodes ** s))
        a = b
    exps = {p.exponent for p in live if p.form == "inverse-power"}
    r_support = max(p.r_outer for p in live)
    if (all(p.form == "inverse-power" for p in live) and len(exps) == 1
            and r_support > r_out):
        # lambda_min is a fixed coefficient combination times r^-q beyond r_out
        gm, _ = spec.eigenvalue_bounds(np.array([r_out]))
        q = exps.pop()
        coef = float(gm[0]) * r_out ** q
        if coef != 0.0:
            tail_profile = RadialProfile.inverse_power(coef, q, r_out, r_support)
            if tail_profile.moment_finite(s):
                total += tail_profile.power_integral(s, r_out, tail_profile.rmax)
    return total


# ---------------------------------------------------------------------------
# pointwise kernel evaluation


def _b2_matrix(zhat):
    """5x5 matrix (..., 5, 5) of the (P zhat).(Q zhat) form."""
    w = np.einsum("aij,...j->...ai", BASIS, zhat)
    return np.einsum("...ai,...bi->...ab", w, w)


def _b3_matrix(zhat):
    """5x5 matrix of the (zhat.P zhat)(zhat.Q zhat) form (rank one)."""
    v = np.einsum("...i,aij,...j->...a", zhat, BASIS, zhat)
    return np.einsum("...a,...b->...ab", v, v)


def kernel_matrix(spec, z):
    """Assemble K(z) as 5x5 matrices in the tensor basis; z has shape (..., 3).

    Points with |z| below every active inner cutoff evaluate to zero; the
    direction is undefined only at z = 0 where all profiles vanish anyway.
    """
    z = np.asarray(z, dtype=float)
    r = np.linalg.norm(z, axis=-1)
    safe = np.where(r > 0, r, 1.0)
    zhat = z / safe[..., None]
    v1 = spec.g1(r)
    v2 = spec.g2(r)
    v3 = spec.g3(r)
    out = v1[..., None, None] * np.eye(5)
    if not spec.g2.is_zero:
        out = out + v2[..., None, None] * _b2_matrix(zhat)
    if not spec.g3.is_zero:
        out = out + v3[..., None, None] * _b3_matrix(zhat)
    if np.any(r == 0):
        out = np.where((r == 0)[..., None, None], 0.0, out)
    return out


def eval_kernel(spec, z, P, Q):
    """K(z) P . Q for a single displacement z and tensors P, Q (5-vectors or 3x3)."""
    z = np.asarray(z, dtype=float)
    r = float(np.linalg.norm(z))
    if r == 0.0:
        raise DomainError("kernel direction undefined at z = 0")
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    Pm = mat(P) if P.shape == (5,) else P
    Qm = mat(Q) if Q.shape == (5,) else Q
    zhat = z / r
    t1 = float(spec.g1(r)) * float(np.sum(Pm * Qm))
    t2 = float(spec.g2(r)) * float(np.dot(Pm @ zhat, Qm @ zhat))
    t3 = float(spec.g3(r)) * float((zhat @ Pm @ zhat) * (zhat @ Qm @ zhat))
    return t1 + t2 + t3


# ---------------------------------------------------------------------------
# assumption validation


@dataclass
class KernelReport:
    """validate_assumptions output; ``passed`` aggregates the hard flags."""

    integrable: bool
    second_moment_finite: bool
    zeroth_moment: float
    second_moment: float
    min_eigenvalue: float
    bounded_away_from_zero: bool
    nonnegative: bool
    max_ratio: float
    M_bound: float
    ratio_ok: bool
    decay_exponent: float
    alpha: float | None
    alpha_condition_ok: bool | None
    alpha_max: float

    @property
    def passed(self):
        flags = [self.integrable, self.second_moment_finite, self.nonnegative,
                 self.bounded_away_from_zero, self.ratio_ok]
        if self.alpha_condition_ok is not None:
            flags.append(self.alpha_condition_ok)
        return all(flags)

    def to_json_dict(self):
        d = dict(self.__dict__)
        d["passed"] = self.passed
        return d


def validate_assumptions(spec, quad=None, alpha=None, directions=16, seed=0):
    """Check the standing kernel assumptions and report (never raises on failure)."""
    quad = quad or QuadratureSpec()
    rng = np.random.default_rng(seed)

    integrable = all(p.moment_finite(2) for p in spec.profiles)
    second = all(p.moment_finite(4) for p in spec.profiles)
    m0 = scalar_bound_moments(spec, quad, 2) * 4.0 * math.pi if integrable else math.inf
    m2 = scalar_bound_moments(spec, quad, 4) * 4.0 * math.pi if second else math.inf

    live = [p for p in spec.profiles if not p.is_zero]
    if live:
        r0 = min(p.r_inner for p in live)
        r_hi = max(_radial_rule(p, quad)[2] for p in live)
        rr = np.geomspace(max(r0, 1e-12), r_hi, 256)
    else:
        rr = np.geomspace(1e-2, 1e2, 64)
    gmin, gmax = spec.eigenvalue_bounds(rr)
    min_eig = float(gmin.min())
    scale = float(np.abs(gmax).max()) or 1.0
    nonneg = min_eig >= -1e-12 * scale
    bounded_away = float(gmin.max()) > 0.0

    # cross-check the e3-frame eigenvalues on random directions
    for _ in range(directions):
        zhat = rng.normal(size=3)
        zhat /= np.linalg.norm(zhat)
        r_probe = rr[rng.integers(0, rr.size)]
        k5 = kernel_matrix(spec, r_probe * zhat)
        min_eig = min(min_eig, float(np.linalg.eigvalsh(k5).min()))
    nonneg = nonneg and min_eig >= -1e-10 * scale

    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(gmin > 0, gmax / np.where(gmin > 0, gmin, 1.0), math.inf)
    live_pts = gmax > 1e-300
    max_ratio = float(ratio[live_pts].max()) if np.any(live_pts) else 1.0
    ratio_ok = bool(max_ratio <= spec.M_bound * (1 + 1e-12))

    # decay exponent from a log-log fit over the last decade before the tail switch
    if live and bounded_away:
        fit_r = np.geomspace(rr[-1] / 10.0, rr[-1], 64)
        fit_g, _ = spec.eigenvalue_bounds(fit_r)
        pos = fit_g > 0
        if pos.sum() >= 2:
            slope = np.polyfit(np.log(fit_r[pos]), np.log(fit_g[pos]), 1)[0]
            p_fit = -float(slope)
        else:
            p_fit = math.inf   # compact support decays faster than any power
    else:
        p_fit = math.nan
    alpha_max = 1.0 - 2.0 / (p_fit - 3.0) if p_fit and p_fit > 5 else 0.0
    cond = None
    if alpha is not None:
        cond = bool((1.0 - alpha) * (p_fit - 3.0) > 2.0)

    return KernelReport(
        integrable=integrable, second_moment_finite=second,
        zeroth_moment=m0, second_moment=m2,
        min_eigenvalue=min_eig, bounded_away_from_zero=bounded_away,
        nonnegative=nonneg, max_ratio=max_ratio, M_bound=spec.M_bound,
        ratio_ok=ratio_ok, decay_exponent=p_fit, alpha=alpha,
        alpha_condition_ok=cond, alpha_max=alpha_max)


# ---------------------------------------------------------------------------
# moments, k0, elastic coefficients


_G_INDICES = {
    "G1_100": (0, (1, 0, 0)),
    "G2_110": (1, (1, 1, 0)),
    "G2_200": (1, (2, 0, 0)),
    "G3_111": (2, (1, 1, 1)),
    "G3_210": (2, (2, 1, 0)),
    "G3_300": (2, (3, 0, 0)),
}


def moments(spec, quad=None):
    """Moment table by product quadrature.

    Each G^n integrand factorizes exactly under the product rule into the
    radial moment of g_n * r^4 times a sphere average of a degree-2n
    monomial in zhat; k0 combines the plain r^2 radial moments with the
    second/fourth zhat-moments of g2/g3.
    """
    quad = quad or QuadratureSpec()
    if not all(p.moment_finite(4) for p in spec.profiles):
        raise ValidationFailure("kernel lacks a finite second moment; moments undefined")
    pts, w = angular_nodes(quad.angular_order)
    z1, z2, z3 = pts[:, 0], pts[:, 1], pts[:, 2]

    radial4 = [radial_moment(p, 4, quad) for p in spec.profiles]
    g = {}
    for name, (prof_idx, (i, j, k)) in _G_INDICES.items():
        ang = float(np.sum(w * z1 ** (2 * i) * z2 ** (2 * j) * z3 ** (2 * k)))
        g[name] = radial4[prof_idx] * ang

    k0_g1 = radial_moment(spec.g1, 2, quad) * float(np.sum(w))
    k0_g2 = radial_moment(spec.g2, 2, quad) * float(np.sum(w * z1 ** 2))
    raw3 = radial_moment(spec.g3, 2, quad) * float(np.sum(w * z1 ** 4))
    k0_g3 = (2.0 / 3.0) * raw3

    return MomentTable(
        **g, k0=k0_g1 + k0_g2 + k0_g3, k0_g1=k0_g1, k0_g2=k0_g2, k0_g3=k0_g3,
        k0_g3_raw=raw3,
        g_zeroth_moment=scalar_bound_moments(spec, quad, 2) * 4.0 * math.pi,
        g_second_moment=scalar_bound_moments(spec, quad, 4) * 4.0 * math.pi)


def gradient_form(spec, quad, grad_q):
    """Quadrature value of the limiting quadratic form at one gradient.

    ``grad_q[a, b, c]`` holds the derivative of component (a, b) along axis c;
    the form integrates K(z) . (z . grad)^2 over z.
    """
    quad = quad or QuadratureSpec()
    grad_q = np.asarray(grad_q, dtype=float)
    pts, w = angular_nodes(quad.angular_order)
    p = np.einsum("abg,ng->nab", grad_q, pts)
    t1 = float(np.sum(w * np.einsum("nab,nab->n", p, p)))
    pz = np.einsum("nab,nb->na", p, pts)
    t2 = float(np.sum(w * np.einsum("na,na->n", pz, pz)))
    zpz = np.einsum("na,na->n", pts, pz)
    t3 = float(np.sum(w * zpz ** 2))
    r4 = [radial_moment(p_, 4, quad) for p_ in spec.profiles]
    return r4[0] * t1 + r4[1] * t2 + r4[2] * t3


def gradient_invariants(grad_q):
    """The three isotropic invariants (full contraction, div.div, mixed)."""
    g = np.asarray(grad_q, dtype=float)
    i1 = np.einsum("...abc,...abc->...", g, g)
    d = np.einsum("...abb->...a", g)
    i2 = np.einsum("...a,...a->...", d, d)
    i3 = np.einsum("...abc,...acb->...", g, g)
    return i1, i2, i3


def _sym_traceless_check(grad_q):
    g = np.asarray(grad_q, dtype=float)
    scale = float(np.abs(g).max()) or 1.0
    if float(np.abs(g - np.swapaxes(g, -3, -2)).max()) > 1e-10 * scale:
        raise DomainError("gradient must be symmetric in its first two indices")
    tr = np.einsum("...aac->...c", g)
    if float(np.abs(tr).max()) > 1e-10 * scale:
        raise DomainError("gradient must be traceless in its first two indices")


def quadratic_form(coeffs, grad_q):
    """L1 |grad|^2 + L2 div.div + L3 mixed contraction (broadcasts over leading axes)."""
    _sym_traceless_check(grad_q)
    i1, i2, i3 = gradient_invariants(grad_q)
    return coeffs.L1 * i1 + coeffs.L2 * i2 + coeffs.L3 * i3


def _probe(e_mat, axis):
    g = np.zeros((3, 3, 3))
    g[:, :, axis] = e_mat
    return g


def elastic_tensor(spec, quad=None, s_star=1.0):
    """Elastic coefficients: K1/K2/K3 from the moment table, L1/L2/L3 from probes.

    The probe route evaluates the quadrature form at three independent test
    gradients and solves the 3x3 system in the invariant coefficients; a
    fourth probe's relative residual guards the quadrature.
    """
    quad = quad or QuadratureSpec()
    tab = moments(spec, quad)
    k1 = (s_star ** 2) * (2 * tab.G1_100 + tab.G2_110 + tab.G2_200
                          + tab.G3_300 - tab.G3_210)
    k2 = (s_star ** 2) * 2.0 * (tab.G1_100 + tab.G2_110 + tab.G3_210 - tab.G3_111)

    e_diag = np.diag([1.0, -1.0, 0.0])
    e_12 = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    e_23 = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]])
    probes = [
        _probe(e_diag, 2),                    # paper's first trial: 2 L1
        _probe(e_diag, 1),                    # second trial: 2 L1 + L2 + L3
        _probe(e_diag, 0) + _probe(e_12, 1),  # separates L2 from L3
    ]
    rows = np.array([gradient_invariants(g) for g in probes])
    vals = np.array([gradient_form(spec, quad, g) for g in probes])
    if abs(np.linalg.det(rows)) < 1e-10:
        raise NumericalError("singular probe system while extracting L1, L2, L3")
    l1, l2, l3 = np.linalg.solve(rows, vals)

    check = _probe(e_diag, 0) + 0.5 * _probe(e_23, 2)
    predicted = float(np.dot(gradient_invariants(check), (l1, l2, l3)))
    actual = gradient_form(spec, quad, check)
    denom = max(abs(actual), 1e-300)
    residual = abs(predicted - actual) / denom
    if residual > 1e-6:
        raise NumericalError(
            f"probe residual {residual:.3e} exceeds 1e-6; quadrature inconsistent")

    return ElasticCoefficients(L1=float(l1), L2=float(l2), L3=float(l3),
                               K1=k1, K2=k2, K3=k1, s_star=s_star,
                               probe_residual=residual)


def frame_check(spec, quad=None, trials=100, seed=0):
    """Max relative change of the quadrature form under random frame rotations."""
    if trials < 1:
        raise ConfigurationError("frame_check needs at least one trial")
    quad = quad or QuadratureSpec()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        a = mat(rng.normal(size=5))
        e = rng.normal(size=3)
        e /= np.linalg.norm(e)
        base = np.einsum("ab,c->abc", a, e)
        r = random_rotation(rng)
        rotated = np.einsum("ab,c->abc", r @ a @ r.T, r @ e)
        f0 = gradient_form(spec, quad, base)
        f1 = gradient_form(spec, quad, rotated)
        worst = max(worst, abs(f1 - f0) / max(abs(f0), 1e-300))
    return worst


def odd_moment_check(spec, quad=None, half_space=False):
    """Normalized residual of the isotropy identity for z1^4 - 3 z1^2 z2^2.

    ``half_space=True`` deliberately breaks the angular grid (z1 > 0 only) as
    a diagnostic; a healthy grid returns ~0, the broken one does not.
    """
    quad = quad or QuadratureSpec()
    for p in spec.profiles:
        if not p.moment_finite(6):
            raise DomainError("odd-moment check requires a finite fourth moment; "
                              "truncate the profile")
    pts, w = angular_nodes(quad.angular_order, half_space=half_space)
    z1, z2 = pts[:, 0], pts[:, 1]
    radial = scalar_bound_moments(spec, quad, 6)
    num = radial * float(np.sum(w * (z1 ** 4 - 3.0 * z1 ** 2 * z2 ** 2)))
    den = radial * float(np.sum(w * (z1 ** 4 + 3.0 * z1 ** 2 * z2 ** 2)))
    return num / max(abs(den), 1e-300)


def kernel_pp_integral(spec, quad, p_vec):
    """Whole-space integral of K(z) P . P for a fixed tensor P (5-vector)."""
    quad = quad or QuadratureSpec()
    pm = mat(np.asarray(p_vec, dtype=float))
    pts, w = angular_nodes(quad.angular_order)
    t1 = float(np.sum(pm * pm)) * float(np.sum(w))
    pz = np.einsum("ab,nb->na", pm, pts)
    t2 = float(np.sum(w * np.einsum("na,na->n", pz, pz)))
    t3 = float(np.sum(w * np.einsum("na,na->n", pts, pz) ** 2))
    r2 = [radial_moment(p_, 2, quad) for p_ in spec.profiles]
    return r2[0] * t1 + r2[1] * t2 + r2[2] * t3
