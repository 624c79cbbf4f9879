"""Discrete non-local energies on the torus and their limiting counterparts.

The rescaled free energy at interaction range eps is

    F_eps(b) = eps^-2 h^3 sum_x psi(b(x))
             + (4 eps^2)^-1 h^6 sum_{x,y} K_eps(x - y) . (b(x) - b(y))^(x2)

with the bilinear term evaluated through the algebraically equivalent
"zeroth moment minus convolution" expansion (spectral transforms); the
O(N^6) double sum stays available as an oracle for small grids.  The module
also provides the limiting quadratic gradient energy with its director
(Frank) form, the bounded-domain energy with frozen boundary data, the
anisotropic electrostatic solve, the harmonic interpolation filler, and the
boundary remainder diagnostics.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import maxent
from .basis import BASIS, vec
from .errors import (AdmissibilityError, ConfigurationError, ConvergenceError,
                     DomainError)
from .fields import (EXTERIOR, OrderField, discrete_gradient, gradient_matrices,
                     raw_kernel_double_lattice)
from .kernel import quadratic_form

GRADIENT_BOUNDARY_MARGIN = 5e-7


@dataclass
class EnergyBreakdown:
    """bulk + bilinear + electrostatic, summed in that fixed order."""

    bulk: float
    bilinear: float
    electrostatic: float
    epsilon: float

    @property
    def total(self):
        return self.bulk + self.bilinear + self.electrostatic

    def to_json_dict(self):
        return {"bulk": self.bulk, "bilinear": self.bilinear,
                "electrostatic": self.electrostatic, "total": self.total,
                "epsilon": self.epsilon}


def _check_pairing(field, kgrid, eps):
    if kgrid.grid.N != field.grid.N:
        raise ConfigurationError("field and kernel grid sizes differ")
    if abs(kgrid.epsilon - eps) > 1e-12 * max(eps, 1.0):
        raise ConfigurationError(
            f"kernel grid built at eps = {kgrid.epsilon:g}, energy requested "
            f"at eps = {eps:g}")


def bilinear_term(field, kgrid, eps):
    """(4 eps^2)^-1 h^6 sum_{x,y} K_eps(x-y) . (b(x)-b(y))^(x2), spectral path."""
    _check_pairing(field, kgrid, eps)
    v = field.values
    h3 = field.grid.cell_volume
    conv = kgrid.convolve(v)
    big = float(np.einsum("xyza,ab,xyzb->", v, kgrid.K0_discrete, v))
    small = h3 * float(np.einsum("xyza,xyza->", v, conv))
    return (2.0 * h3 / (4.0 * eps ** 2)) * (big - small)


def bilinear_double_sum(field, kgrid, eps, exact_sum=False):
    """O(N^6) oracle for the bilinear term; feasible for N <= 12.

    ``exact_sum=True`` accumulates every pair contribution through
    math.fsum, which makes the value independent of summation order (and
    hence exactly translation invariant).
    """
    _check_pairing(field, kgrid, eps)
    n = field.grid.N
    if n > 12:
        raise ConfigurationError("double-sum oracle restricted to N <= 12")
    v = field.values
    h6 = field.grid.cell_volume ** 2
    terms = []
    total = 0.0
    for dx in range(n):
        for dy in range(n):
            for dz in range(n):
                k5 = kgrid.samples[dx, dy, dz]
                if not k5.any():
                    continue
                diff = np.roll(v, shift=(-dx, -dy, -dz), axis=(0, 1, 2)) - v
                vals = np.einsum("xyza,ab,xyzb->xyz", diff, k5, diff)
                if exact_sum:
                    terms.extend(vals.ravel().tolist())
                else:
                    total += float(vals.sum())
    if exact_sum:
        total = math.fsum(terms)
    return h6 * total / (4.0 * eps ** 2)


def bulk_term(field, bulk, eps, mask=None, quad=None, warm=None):
    """eps^-2 h^3 sum psi(b(x)), optionally restricted to a cell mask."""
    psi = maxent.psi_value(bulk, field.values, quad=quad, warm=warm)
    if mask is not None:
        psi = psi[mask]
    return field.grid.cell_volume / eps ** 2 * math.fsum(psi.ravel().tolist())


def F_eps(field, kgrid, bulk, eps, quad=None, warm=None):
    """Periodic-domain energy; bulk over all cells, no electrostatics."""
    return EnergyBreakdown(
        bulk=bulk_term(field, bulk, eps, quad=quad, warm=warm),
        bilinear=bilinear_term(field, kgrid, eps),
        electrostatic=0.0, epsilon=eps)


def F_eps_gradient(field, kgrid, bulk, eps, quad=None, warm=None,
                   min_margin=GRADIENT_BOUNDARY_MARGIN):
    """Exact gradient of the implemented discrete F_eps w.r.t. nodal values.

    grad(x) = h^3 eps^-2 [ Lambda_b(x) - k0 b(x)
                           + K0_discrete b(x) - h^3 (K_eps * b)(x) ].

    Nodes closer than ``min_margin`` to the boundary of the moment set are
    refused (the multiplier is about to blow up there).
    """
    _check_pairing(field, kgrid, eps)
    v = field.values
    eigs = np.linalg.eigh(np.einsum("...a,aij->...ij", v, BASIS))[0]
    margin = np.minimum(eigs[..., 0] - maxent.EIG_LO,
                        maxent.EIG_HI - eigs[..., -1])
    saturated = margin < min_margin
    if saturated.any():
        idx = np.argwhere(saturated)
        raise DomainError(
            f"{idx.shape[0]} node(s) within {min_margin:g} of the moment-set "
            f"boundary; first at {tuple(int(i) for i in idx[0])}")
    _, lam5, warm_out = maxent.dual_field(v, quad=quad, warm=warm)
    conv = kgrid.convolve(v)
    h3 = field.grid.cell_volume
    grad = lam5 - bulk.k0 * v + np.einsum("ab,xyzb->xyza", kgrid.K0_discrete, v) \
        - h3 * conv
    return h3 / eps ** 2 * grad, warm_out


# ---------------------------------------------------------------------------
# limiting elastic energy


def director_derivatives(n_values, h):
    """div, curl and n.curl for a (N,N,N,3) director, central differences."""
    d = np.empty(n_values.shape[:-1] + (3, 3))
    for ax in range(3):
        d[..., ax, :] = (np.roll(n_values, -1, axis=ax)
                         - np.roll(n_values, 1, axis=ax)) / (2.0 * h)
    div = d[..., 0, 0] + d[..., 1, 1] + d[..., 2, 2]
    curl = np.stack([d[..., 1, 2] - d[..., 2, 1],
                     d[..., 2, 0] - d[..., 0, 2],
                     d[..., 0, 1] - d[..., 1, 0]], axis=-1)
    return div, curl


@dataclass
class FrankSplit:
    """The three director invariants integrated over the torus.

    Note the constants multiply the invariants as K1 (div n)^2,
    K2 (n . curl n)^2, K3 |n x curl n|^2: the twist mode carries K2 = 2 L1
    and the bend mode K3 = K1, matching the probe trials that define the
    constants.
    """

    splay: float
    twist: float
    bend: float


def frank_energy(n_values, coeffs, h):
    """Quarter-integral of the Frank density for a unit director field."""
    div, curl = director_derivatives(n_values, h)
    twist = np.einsum("...i,...i->...", n_values, curl)
    cross = np.cross(n_values, curl)
    split = FrankSplit(
        splay=h ** 3 * float(np.sum(div ** 2)),
        twist=h ** 3 * float(np.sum(twist ** 2)),
        bend=h ** 3 * float(np.sum(cross ** 2)))
    energy = 0.25 * (coeffs.K1 * split.splay + coeffs.K2 * split.twist
                     + coeffs.K3 * split.bend)
    return energy, split


def gamma_energy(field_or_director, coeffs, s_star=None, dist_tol=1e-8):
    """(1/4) integral of the limiting quadratic form.

    Accepts an OrderField with values on the ground-state manifold (checked
    against ``s_star`` when given) or a (N,N,N,3) director array plus the
    grid in ``field_or_director = (grid, director)``; director input also
    reports the Frank split.
    """
    if isinstance(field_or_director, OrderField):
        f = field_or_director
        if s_star is not None:
            d = maxent.dist_to_M(f.values.reshape(-1, 5), s_star)
            if float(d.max()) > dist_tol:
                worst = int(np.argmax(d))
                raise DomainError(
                    f"field leaves the ground-state manifold by {float(d.max()):.3e} "
                    f"(worst flat node {worst}); tolerance {dist_tol:g}")
        grad = gradient_matrices(discrete_gradient(f.values, f.grid.h))
        dens = quadratic_form(coeffs, grad)
        return 0.25 * f.grid.cell_volume * float(np.sum(dens)), None
    grid, n_values = field_or_director
    return frank_energy(np.asarray(n_values, dtype=float), coeffs, grid.h)


def bilinear_vs_limit(field, spec, eps_ladder, coeffs):
    """Discrete bilinear term along an eps ladder against its limit value.

    Returns rows of (eps, discrete value, limit, relative error); the field
    must be a smooth closed-form sample on the grid.
    """
    from .fields import build_periodized_kernel
    limit, _ = gamma_energy(field, coeffs)
    rows = []
    for eps in eps_ladder:
        kgrid = build_periodized_kernel(spec, field.grid, eps)
        val = bilinear_term(field, kgrid, eps)
        rows.append({"eps": eps, "bilinear": val, "limit": limit,
                     "rel_error": abs(val - limit) / abs(limit) if limit else 0.0})
    return rows


# ---------------------------------------------------------------------------
# electrostatics


@dataclass(frozen=True)
class ElectrostaticConfig:
    """Dielectric map A(b) = A_iso I + A_aniso mat(b) and the boundary data."""

    A_iso: float
    A_aniso: float
    phi0: object                 # callable (x, y, z) -> potential
    cg_tol: float = 1e-10
    cg_maxiter: int = 20000
    s_max: float = 1.0

    def __post_init__(self):
        if self.A_iso <= 0:
            raise ConfigurationError("A_iso must be positive")
        lam_min = self.A_iso + self.s_max * min(-self.A_aniso / 3.0,
                                                2.0 * self.A_aniso / 3.0)
        if lam_min <= 0:
            raise ConfigurationError(
                "dielectric map loses positivity on the moment set: "
                f"min eigenvalue bound {lam_min:g} <= 0")


def _diag_dielectric(cfg, values):
    """Per-cell diagonal entries of A(b) along the three axes."""
    diag_basis = np.stack([BASIS[:, 0, 0], BASIS[:, 1, 1], BASIS[:, 2, 2]],
                          axis=-1)   # (5, 3)
    return cfg.A_iso + cfg.A_aniso * np.einsum("xyza,ad->xyzd", values, diag_basis)


@dataclass
class ElectrostaticResult:
    phi: np.ndarray
    E_value: float
    envelope_gradient: np.ndarray
    residual: float
    iterations: int
    face_energy: float


def _cg(apply_op, rhs, diag, tol, maxiter, x0=None):
    """Jacobi-preconditioned conjugate gradients on flat arrays."""
    x = np.zeros_like(rhs) if x0 is None else x0.copy()
    r = rhs - apply_op(x)
    rhs_norm = math.sqrt(float(np.sum(rhs * rhs))) or 1.0
    z = r / diag
    p = z.copy()
    rz = float(np.sum(r * z))
    for it in range(1, maxiter + 1):
        res = math.sqrt(float(np.sum(r * r))) / rhs_norm
        if res <= tol:
            return x, res, it - 1
        ap = apply_op(p)
        alpha = rz / float(np.sum(p * ap))
        x += alpha * p
        r -= alpha * ap
        z = r / diag
        rz_new = float(np.sum(r * z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    res = math.sqrt(float(np.sum(r * r))) / rhs_norm
    if res > tol:
        raise ConvergenceError("conjugate gradients did not converge",
                               residual=res, iterations=maxiter)
    return x, res, maxiter


def _assemble_faces(field, mask, cfg):
    """Face coefficients and ghost Dirichlet values of the 7-point system."""
    grid = field.grid
    h = grid.h
    active = mask.omega
    a_diag = _diag_dielectric(cfg, field.values)
    if float(a_diag.min()) <= 0:
        raise ConfigurationError("dielectric lost positivity at a cell")
    coords = grid.coords()
    ups, downs, ghosts_hi, ghosts_lo, phi_hi, phi_lo = [], [], [], [], [], []
    for ax in range(3):
        a = a_diag[..., ax]
        a_n = np.roll(a, -1, axis=ax)
        act_n = np.roll(active, -1, axis=ax)
        both = active & act_n
        harm = np.where(both, 2.0 * a * a_n / np.where(a + a_n > 0, a + a_n, 1.0), 0.0)
        ups.append(harm / h ** 2)
        downs.append(np.roll(harm, 1, axis=ax) / h ** 2)
        hi_face = active & ~act_n
        lo_face = active & ~np.roll(active, 1, axis=ax)
        ghosts_hi.append(np.where(hi_face, 2.0 * a / h ** 2, 0.0))
        ghosts_lo.append(np.where(lo_face, 2.0 * a / h ** 2, 0.0))
        fc = [c.copy() for c in coords]
        fc[ax] = fc[ax] + h / 2.0
        phi_hi.append(np.asarray(cfg.phi0(*fc), dtype=float))
        fc[ax] = fc[ax] - h
        phi_lo.append(np.asarray(cfg.phi0(*fc), dtype=float))
    return active, ups, downs, ghosts_hi, ghosts_lo, phi_hi, phi_lo


def _face_quadratic_form(field, mask, cfg, phi):
    """The maximized discrete functional at an arbitrary admissible phi."""
    h = field.grid.h
    active, ups, _, ghosts_hi, ghosts_lo, phi_hi, phi_lo = _assemble_faces(
        field, mask, cfg)
    energy = 0.0
    for ax in range(3):
        dphi = np.roll(phi, -1, axis=ax) - phi
        both = active & np.roll(active, -1, axis=ax)
        a_f = ups[ax] * h ** 2
        energy += -0.5 * h * float(np.sum(a_f * dphi ** 2 * both))
        a_hi = ghosts_hi[ax] * h ** 2 / 2.0
        energy += -h * float(np.sum(a_hi * (phi_hi[ax] - phi) ** 2
                                    * (ghosts_hi[ax] > 0)))
        a_lo = ghosts_lo[ax] * h ** 2 / 2.0
        energy += -h * float(np.sum(a_lo * (phi_lo[ax] - phi) ** 2
                                    * (ghosts_lo[ax] > 0)))
    return energy


def estat_solve(field, mask, cfg, phi_init=None):
    """Solve div(A(b) grad phi) = 0 on the domain cells, Dirichlet data outside.

    Finite volumes with harmonic-mean face coefficients of the axis-normal
    entries of A; Dirichlet values are imposed at the ghost faces (half-cell
    distance).  The reported energy is -1/2 h^3 sum_Omega A(b) grad phi .
    grad phi with cell-centered, ghost-extended gradients; the face-based
    quadratic form whose maximizer the solver finds is reported separately.
    """
    grid = field.grid
    h = grid.h
    active, ups, downs, ghosts_hi, ghosts_lo, phi_hi, phi_lo = _assemble_faces(
        field, mask, cfg)

    diag_full = sum(ups) + sum(downs) + sum(ghosts_hi) + sum(ghosts_lo)
    rhs_full = sum(g * p for g, p in zip(ghosts_hi, phi_hi)) \
        + sum(g * p for g, p in zip(ghosts_lo, phi_lo))

    idx = np.where(active.ravel())[0]
    shape = active.shape

    def apply_op(flat_phi):
        p = np.zeros(shape)
        p.ravel()[idx] = flat_phi
        out = diag_full * p
        for ax in range(3):
            out -= ups[ax] * np.roll(p, -1, axis=ax) * active
            out -= downs[ax] * np.roll(p, 1, axis=ax) * active
        return out.ravel()[idx]

    rhs = rhs_full.ravel()[idx]
    diag = diag_full.ravel()[idx]
    x0 = None if phi_init is None else phi_init.ravel()[idx]
    sol, res, iters = _cg(apply_op, rhs, diag, cfg.cg_tol, cfg.cg_maxiter, x0)

    phi = np.zeros(shape)
    phi.ravel()[idx] = sol

    # the maximized discrete quadratic form: -1/2 sum over interior faces of
    # a_f h (dphi)^2, minus sum over ghost faces of a h (phi0 - phi)^2
    face_energy = 0.0
    for ax in range(3):
        dphi = np.roll(phi, -1, axis=ax) - phi
        both = active & np.roll(active, -1, axis=ax)
        a_f = ups[ax] * h ** 2   # harmonic-mean coefficient on interior faces
        face_energy += -0.5 * h * float(np.sum(a_f * dphi ** 2 * both))
        hi_mask = ghosts_hi[ax] > 0
        a_hi = ghosts_hi[ax] * h ** 2 / 2.0
        face_energy += -h * float(np.sum(a_hi * (phi_hi[ax] - phi) ** 2 * hi_mask))
        lo_mask = ghosts_lo[ax] > 0
        a_lo = ghosts_lo[ax] * h ** 2 / 2.0
        face_energy += -h * float(np.sum(a_lo * (phi_lo[ax] - phi) ** 2 * lo_mask))

    # cell-centered gradient; across Dirichlet faces a second-order
    # one-sided stencil through the face value keeps the reconstruction O(h^2)
    grad = np.zeros(shape + (3,))
    for ax in range(3):
        act_up = np.roll(active, -1, axis=ax)
        act_dn = np.roll(active, 1, axis=ax)
        central = (np.roll(phi, -1, axis=ax) - np.roll(phi, 1, axis=ax)) / (2.0 * h)
        one_sided_hi = (4.0 * phi_hi[ax] / 3.0 - phi
                        - np.roll(phi, 1, axis=ax) / 3.0) / h
        one_sided_lo = -(4.0 * phi_lo[ax] / 3.0 - phi
                         - np.roll(phi, -1, axis=ax) / 3.0) / h
        g_ax = np.where(act_up & act_dn, central,
                        np.where(act_up, one_sided_lo, one_sided_hi))
        # isolated slabs one cell thick fall back to the face-to-face slope
        only = active & ~act_up & ~act_dn
        g_ax = np.where(only, (phi_hi[ax] - phi_lo[ax]) / h, g_ax)
        grad[..., ax] = g_ax * active

    amat = cfg.A_iso * np.eye(3) + cfg.A_aniso * np.einsum(
        "xyza,aij->xyzij", field.values, BASIS)
    dens = np.einsum("xyzi,xyzij,xyzj->xyz", grad, amat, grad)
    e_value = -0.5 * h ** 3 * float(np.sum(dens[active]))

    gg = np.einsum("xyzi,xyzj->xyzij", grad, grad)
    envelope = -0.5 * cfg.A_aniso * vec(gg)
    envelope[~active] = 0.0

    return ElectrostaticResult(phi=phi, E_value=e_value,
                               envelope_gradient=envelope, residual=res,
                               iterations=iters, face_energy=face_energy)


# ---------------------------------------------------------------------------
# bounded-domain energy


def check_admissible(field, boundary_field, mask):
    """Field must equal the boundary data on collar and exterior cells."""
    frozen = mask.frozen
    diff = field.values[frozen] != boundary_field.values[frozen]
    if np.any(diff):
        cells = np.argwhere(frozen)[np.any(diff, axis=-1)]
        raise AdmissibilityError(
            f"{cells.shape[0]} frozen cell(s) deviate from the boundary data; "
            f"first at {tuple(int(i) for i in cells[0])}")


def G_eps(field, mask, kgrid, bulk, eps, cfg=None, boundary_field=None,
          quad=None, warm=None, phi_init=None):
    """Bounded-domain energy: interior bulk + full-torus bilinear + estat."""
    if boundary_field is not None:
        check_admissible(field, boundary_field, mask)
    e_stat = 0.0
    if cfg is not None:
        e_stat = estat_solve(field, mask, cfg, phi_init=phi_init).E_value
    return EnergyBreakdown(
        bulk=bulk_term(field, bulk, eps, mask=mask.interior, quad=quad, warm=warm),
        bilinear=bilinear_term(field, kgrid, eps),
        electrostatic=e_stat, epsilon=eps)


def harmonic_fill(field, region):
    """Replace values on ``region`` by the component-wise discrete harmonic
    extension of the surrounding values (7-point Laplacian, CG)."""
    region = np.asarray(region, dtype=bool)
    if not region.any():
        return field.copy()
    vals = field.values.copy()
    shape = region.shape
    idx = np.where(region.ravel())[0]
    neighbor_count = np.full(shape, 6.0)

    def apply_op(flat):
        p = np.zeros(shape)
        p.ravel()[idx] = flat
        out = neighbor_count * p
        for ax in range(3):
            out -= (np.roll(p, -1, axis=ax) + np.roll(p, 1, axis=ax))
        return out.ravel()[idx]

    for c in range(5):
        comp = np.where(region, 0.0, vals[..., c])
        rhs = np.zeros(shape)
        for ax in range(3):
            rhs += np.roll(comp, -1, axis=ax) * np.roll(~region, -1, axis=ax)
            rhs += np.roll(comp, 1, axis=ax) * np.roll(~region, 1, axis=ax)
        sol, _, _ = _cg(apply_op, rhs.ravel()[idx], np.full(idx.size, 6.0),
                        1e-12, 20000)
        vals[..., c][region] = sol
    return OrderField(field.grid, vals)


# ---------------------------------------------------------------------------
# remainder diagnostics


@dataclass
class RemainderReport:
    R1: float
    R2: float
    R3: float
    m_eps: float
    epsilon: float
    predicted_exponent: float
    fitted_exponents: dict | None = None

    def to_json_dict(self):
        d = {"R1": self.R1, "R2": self.R2, "R3": self.R3, "m_eps": self.m_eps,
             "epsilon": self.epsilon,
             "predicted_exponent": self.predicted_exponent}
        if self.fitted_exponents is not None:
            d["fitted_exponents"] = self.fitted_exponents
        return d


def _finalize_masked_bilinear(w1, w2, values, kw1, kw2, kw2b):
    """sum_{x,y} w1(x) w2(y) K(x-y) . (b(x)-b(y))^(x2) from precomputed
    convolutions: kw1 = K*w1, kw2 = K*w2 (matrix fields), kw2b = K*(w2 b)."""
    t1 = np.einsum("xyz,xyzab,xyza,xyzb->", w1, kw2, values, values)
    t2 = np.einsum("xyz,xyzab,xyza,xyzb->", w2, kw1, values, values)
    t3 = np.einsum("xyz,xyza,xyza->", w1, values, kw2b)
    return float(t1 + t2 - 2.0 * t3)


def _masked_bilinear_periodic(kgrid, w1, w2, values):
    """Masked bilinear sum with the periodized kernel (circular transforms)."""
    n = kgrid.grid.N
    khat = kgrid.fft()   # (5, 5, N, N, nr)

    def conv_scalar(w):
        what = np.fft.rfftn(w)
        out = np.fft.irfftn(khat * what[None, None], s=(n, n, n), axes=(2, 3, 4))
        return np.moveaxis(out, (0, 1), (3, 4))

    kw2 = conv_scalar(w2)
    kw1 = kw2 if w1 is w2 else conv_scalar(w1)
    kw2b = kgrid.convolve(values * w2[..., None])
    return _finalize_masked_bilinear(w1, w2, values, kw1, kw2, kw2b)


def _pad_rfft(arrays, n):
    out = []
    for a in arrays:
        pad = np.zeros((2 * n, 2 * n, 2 * n))
        pad[:n, :n, :n] = a
        out.append(np.fft.rfftn(pad))
    return out


def _masked_bilinear_linear(kernel_2n, w, values):
    """Masked bilinear sum over Omega x Omega with an unwrapped 2N-lattice
    kernel (zero-padded linear convolutions); w1 = w2 = w here."""
    n = w.shape[0]
    n2 = 2 * n
    hats = _pad_rfft([w] + [w * values[..., b] for b in range(5)], n)
    w_hat, wb_hat = hats[0], hats[1:]
    kw = np.zeros((n, n, n, 5, 5))
    kwb = np.zeros((n, n, n, 5))
    for a in range(5):
        for b in range(a, 5):
            khat = np.fft.rfftn(kernel_2n[..., a, b])
            conv_w = np.fft.irfftn(khat * w_hat, s=(n2, n2, n2), axes=(0, 1, 2))[:n, :n, :n]
            kw[..., a, b] = conv_w
            kwb[..., a] += np.fft.irfftn(khat * wb_hat[b], s=(n2, n2, n2), axes=(0, 1, 2))[:n, :n, :n]
            if a != b:
                kw[..., b, a] = conv_w
                kwb[..., b] += np.fft.irfftn(
                    khat * wb_hat[a], s=(n2, n2, n2), axes=(0, 1, 2))[:n, :n, :n]
    return _finalize_masked_bilinear(w, w, values, kw, kw, kwb)


def remainders(field, mask, spec, eps, bulk, kgrid, k0_value, decay_p,
               quad=None):
    """Boundary remainder diagnostics by direct lattice sums.

    R1: zeroth-moment deficit of the raw kernel truncated to the domain,
        integrated over interior cells against b (x) b.
    R2: periodization-minus-raw bilinear mismatch over domain x domain
        (needs actual separations, hence zero-padded transforms).
    R3: periodized cross term between interior and exterior cells.
    m_eps: the energy constants carried purely by the frozen cells (collar
        bulk plus the exterior-exterior and exterior-collar bilinear parts).
    """
    grid = field.grid
    n = grid.N
    h3 = grid.cell_volume
    v = field.values
    w_omega = mask.omega.astype(float)
    w_int = mask.interior.astype(float)
    w_ext = mask.exterior.astype(float)
    w_col = mask.collar.astype(float)

    raw = raw_kernel_double_lattice(spec, grid, eps)

    # R1: J(x) = h^3 sum_{y in Omega} raw[x - y]; deficit against k0 * I
    n2 = 2 * n
    w_hat = _pad_rfft([w_omega], n)[0]
    j_field = np.zeros((n, n, n, 5, 5))
    for a in range(5):
        for b in range(a, 5):
            khat = np.fft.rfftn(raw[..., a, b])
            res = np.fft.irfftn(khat * w_hat, s=(n2, n2, n2), axes=(0, 1, 2))[:n, :n, :n]
            j_field[..., a, b] = res
            if a != b:
                j_field[..., b, a] = res
    j_field *= h3
    quad_b = np.einsum("xyza,xyzab,xyzb->xyz", v, j_field, v)
    norm_b = np.sum(v ** 2, axis=-1)
    r1 = (0.5 / eps ** 2) * h3 * float(np.sum(w_int * (k0_value * norm_b - quad_b)))

    # R2: images-only difference K_eps - raw over Omega x Omega
    delta = np.tile(kgrid.samples, (2, 2, 2, 1, 1)) - raw
    r2 = (0.25 / eps ** 2) * h3 ** 2 * _masked_bilinear_linear(delta, w_omega, v)
    del delta, raw

    # R3 and the frozen-cell constants use the periodized kernel directly
    r3 = (1.0 / eps ** 2) * h3 ** 2 * _masked_bilinear_periodic(
        kgrid, w_int, w_ext, v)

    psi_frozen = maxent.psi_value(bulk, v[mask.collar], quad=quad)
    m1 = h3 / eps ** 2 * float(np.sum(psi_frozen))
    b_ext_col = _masked_bilinear_periodic(kgrid, w_ext, w_col, v)
    b_ext_ext = _masked_bilinear_periodic(kgrid, w_ext, w_ext, v)
    m2 = (0.25 / eps ** 2) * h3 ** 2 * (2.0 * b_ext_col + b_ext_ext)

    predicted = (1.0 - mask.alpha) * (decay_p - 3.0) - 2.0
    return RemainderReport(R1=r1, R2=r2, R3=r3, m_eps=m1 + m2, epsilon=eps,
                           predicted_exponent=predicted)


def remainder_ladder(field_fn, geometry, spec, grid, eps_ladder, alpha, c6,
                     bulk, k0_value, decay_p):
    """Run remainders over an eps ladder and fit the decay exponents."""
    from .fields import build_mask, build_periodized_kernel
    reports = []
    for eps in eps_ladder:
        mask = build_mask(geometry, eps, alpha, c6, grid, decay_p=decay_p)
        kgrid = build_periodized_kernel(spec, grid, eps)
        field = field_fn(grid)
        reports.append(remainders(field, mask, spec, eps, bulk, kgrid,
                                  k0_value, decay_p))
    eps_arr = np.array([r.epsilon for r in reports])
    fitted = {}
    for name in ("R1", "R2", "R3"):
        vals = np.array([abs(getattr(r, name)) for r in reports])
        if np.all(vals > 0):
            fitted[name] = float(np.polyfit(np.log(eps_arr), np.log(vals), 1)[0])
        else:
            fitted[name] = math.inf
    for r in reports:
        r.fitted_exponents = fitted
    return reports
