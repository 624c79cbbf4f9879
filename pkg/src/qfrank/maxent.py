"""Maximum-entropy singular bulk potential on the tensor moment set.

The admissible moment set Q is characterized by eigenvalues in (-1/3, 2/3).
For interior b the dual problem finds the multiplier Lambda whose exponential
orientation density on the unit sphere has moment b; the singular potential
is the attained entropy

    psi_s(b) = Lambda . b - log Z(Lambda),      Z = int_S2 exp(Lambda . a(p))

with a(p) = p tensor p - I/3.  Everything reduces to the eigenframe of b,
where the multiplier is coaxial and the sphere integrals depend only on the
squared coordinates; field-sized batches share one vectorized damped Newton.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .basis import from_eig, mat, vec
from .errors import ConfigurationError, ConvergenceError, DomainError

EIG_LO = -1.0 / 3.0
EIG_HI = 2.0 / 3.0
LOG_4PI = math.log(4.0 * math.pi)

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 200


@dataclass(frozen=True)
class SphereQuad:
    """Product rule on S^2: Gauss-Legendre in cos(theta), uniform in phi."""

    n_theta: int = 64
    n_phi: int = 128

    def __post_init__(self):
        if self.n_theta < 8 or self.n_phi < 8:
            raise ConfigurationError("sphere quadrature needs at least 8x8 nodes")


@lru_cache(maxsize=8)
def _sphere_nodes(n_theta, n_phi):
    """Squared coordinates (Nq, 3) and weights (Nq,) of the product rule."""
    u, wu = np.polynomial.legendre.leggauss(n_theta)
    phi = 2.0 * math.pi * np.arange(n_phi) / n_phi
    s2 = 1.0 - u ** 2
    p1 = s2[:, None] * np.cos(phi)[None, :] ** 2
    p2 = s2[:, None] * np.sin(phi)[None, :] ** 2
    p3 = (u ** 2)[:, None] * np.ones_like(phi)[None, :]
    sq = np.stack([p1, p2, p3], axis=-1).reshape(-1, 3)
    w = (wu[:, None] * np.full((1, n_phi), 2.0 * math.pi / n_phi)).reshape(-1)
    return sq, w


def _diag_stats(lam, quad, want_fourth=True):
    """Moments of the coaxial density exp(sum lam_i p_i^2) on the sphere.

    lam (..., 3) -> logZ (...,), second moments m (..., 3) and, optionally,
    fourth moments M4 (..., 3, 3).  The exponent is shifted by its maximum
    before exponentiation.
    """
    sq, w = _sphere_nodes(quad.n_theta, quad.n_phi)
    e = np.einsum("...i,ni->...n", lam, sq)
    shift = e.max(axis=-1, keepdims=True)
    ew = np.exp(e - shift) * w
    z0 = ew.sum(axis=-1)
    logz = shift[..., 0] + np.log(z0)
    p = ew / z0[..., None]
    m = np.einsum("...n,ni->...i", p, sq)
    if not want_fourth:
        return logz, m, None
    m4 = np.einsum("...n,ni,nj->...ij", p, sq, sq)
    return logz, m, m4


def _solve_diag(mu, quad, lam0=None, tol=NEWTON_TOL, max_iter=NEWTON_MAX_ITER):
    """Damped Newton for the coaxial dual problem, vectorized over nodes.

    mu (..., 3): eigenvalues of b (each in the open admissible interval).
    Returns (lam (..., 3) with zero sum, logZ, iterations).
    """
    mu = np.asarray(mu, dtype=float)
    flat = mu.reshape(-1, 3)
    n = flat.shape[0]
    target = flat + 1.0 / 3.0
    lam = np.zeros_like(flat) if lam0 is None else np.array(
        lam0, dtype=float).reshape(n, 3).copy()
    lam -= lam.mean(axis=1, keepdims=True)

    logz, m, m4 = _diag_stats(lam, quad)
    res = m - target
    resnorm = np.abs(res).max(axis=1)
    iterations = 0
    stall_best = None
    for iterations in range(1, max_iter + 1):
        active = resnorm > tol
        if not active.any():
            break
        # bail out early when the worst node stops improving: the target is
        # beyond what the sphere rule resolves (multiplier saturation)
        worst = float(resnorm.max())
        if iterations % 12 == 0:
            if stall_best is not None and worst > 0.5 * stall_best:
                raise ConvergenceError(
                    "dual Newton stagnated (moment residual "
                    f"{worst:.3e} after {iterations} sweeps); state too "
                    "close to the moment-set boundary for this sphere rule",
                    residual=worst, iterations=iterations)
            stall_best = worst
        la = lam[active]
        ra = res[active][:, :2]
        cov = m4[active] - np.einsum("ki,kj->kij", m[active], m[active])
        # reduce by the zero-sum gauge: unknowns (l1, l2), l3 = -l1-l2
        j = cov[:, :2, :2] - cov[:, :2, 2:3]
        det = j[:, 0, 0] * j[:, 1, 1] - j[:, 0, 1] * j[:, 1, 0]
        det = np.where(np.abs(det) < 1e-300, 1e-300, det)
        d1 = (-ra[:, 0] * j[:, 1, 1] + ra[:, 1] * j[:, 0, 1]) / det
        d2 = (-ra[:, 1] * j[:, 0, 0] + ra[:, 0] * j[:, 1, 0]) / det
        step = np.stack([d1, d2, -d1 - d2], axis=1)

        # backtracking line search on the moment residual; only nodes that
        # have not yet accepted a step get re-evaluated
        n_act = step.shape[0]
        base = resnorm[active]
        new_lam = la.copy()
        new_logz = logz[active].copy()
        new_m = m[active].copy()
        new_m4 = m4[active].copy()
        new_rn = base.copy()
        pending = np.arange(n_act)
        alpha = 1.0
        for bt in range(30):
            trial = la[pending] + alpha * step[pending]
            lz_t, m_t, m4_t = _diag_stats(trial, quad)
            rn_t = np.abs(m_t - target[active][pending]).max(axis=1)
            ok = rn_t <= (1.0 - 1e-4 * alpha) * base[pending]
            if bt == 29:
                ok |= rn_t <= base[pending]   # last resort: accept non-increase
            idx = pending[ok]
            new_lam[idx] = trial[ok]
            new_logz[idx] = lz_t[ok]
            new_m[idx] = m_t[ok]
            new_m4[idx] = m4_t[ok]
            new_rn[idx] = rn_t[ok]
            pending = pending[~ok]
            if pending.size == 0:
                break
            alpha *= 0.5
        lam[active] = new_lam
        logz[active] = new_logz
        m[active] = new_m
        m4[active] = new_m4
        res[active] = new_m - target[active]
        resnorm[active] = new_rn
    else:
        raise ConvergenceError(
            f"dual Newton exceeded {max_iter} iterations",
            residual=float(resnorm.max()), iterations=max_iter)
    return (lam.reshape(mu.shape), logz.reshape(mu.shape[:-1]), iterations)


def _check_interior(eigs, margin=0.0):
    lo = eigs.min(axis=-1)
    hi = eigs.max(axis=-1)
    bad = (lo <= EIG_LO + margin) | (hi >= EIG_HI - margin)
    if np.any(bad):
        raise DomainError(
            f"{int(np.count_nonzero(bad))} tensor(s) on or outside the open "
            f"moment set (eigenvalue range [{float(lo.min()):.6f}, "
            f"{float(hi.max()):.6f}])")


def _coerce(b):
    b = np.asarray(getattr(b, "coeffs", b), dtype=float)
    if b.shape[-1] == 3 and b.ndim >= 2 and b.shape[-2] == 3:
        return vec(b)
    return b


# ---------------------------------------------------------------------------
# public single-tensor operations


@dataclass(frozen=True)
class QTensor:
    """Order parameter: five coefficients in the fixed orthonormal basis."""

    coeffs: tuple

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (5,):
            raise ConfigurationError("QTensor needs exactly five coefficients")
        return cls(tuple(float(x) for x in v))

    @classmethod
    def from_matrix(cls, m):
        return cls.from_vector(vec(np.asarray(m, dtype=float)))

    @property
    def vector(self):
        return np.array(self.coeffs)

    @property
    def matrix(self):
        return mat(self.vector)

    def eig(self):
        return np.linalg.eigh(self.matrix)

    @property
    def eigenvalues(self):
        return self.eig()[0]

    def in_closure(self, margin=0.0):
        w = self.eigenvalues
        return bool(w[0] >= EIG_LO + margin - 1e-15 and w[-1] <= EIG_HI - margin + 1e-15)

    def in_interior(self, margin=0.0):
        w = self.eigenvalues
        return bool(w[0] > EIG_LO + margin and w[-1] < EIG_HI - margin)


@dataclass
class PartitionResult:
    logZ: float
    mean: np.ndarray        # 5-vector, the moment of the density
    covariance: np.ndarray  # 5x5 SPD


def _covariance5(m, m4):
    """5x5 covariance of a(p) in the eigenframe basis (block structure)."""
    c = np.zeros(m.shape[:-1] + (5, 5))
    d01 = m[..., 0] - m[..., 1]
    d2 = 2 * m[..., 2] - m[..., 0] - m[..., 1]
    c[..., 0, 0] = (m4[..., 0, 0] + m4[..., 1, 1] - 2 * m4[..., 0, 1] - d01 ** 2) / 2
    c[..., 1, 1] = (4 * m4[..., 2, 2] + m4[..., 0, 0] + m4[..., 1, 1]
                    + 2 * m4[..., 0, 1] - 4 * m4[..., 0, 2] - 4 * m4[..., 1, 2]
                    - d2 ** 2) / 6
    c12 = (2 * m4[..., 0, 2] - 2 * m4[..., 1, 2] - m4[..., 0, 0] + m4[..., 1, 1]
           - d01 * d2) / math.sqrt(12.0)
    c[..., 0, 1] = c12
    c[..., 1, 0] = c12
    c[..., 2, 2] = 2 * m4[..., 0, 1]
    c[..., 3, 3] = 2 * m4[..., 0, 2]
    c[..., 4, 4] = 2 * m4[..., 1, 2]
    return c


def _rep5_from_frame(u):
    """5x5 change of basis induced by the eigenvector frame u (columns)."""
    from .basis import BASIS
    return np.einsum("aij,...ik,bkl,...jl->...ab", BASIS, u, BASIS, u)


def partition(lam, quad=None):
    """Partition data of the density rho ~ exp(Lambda . a(p)) on the sphere.

    Returns log Z, the moment (gradient of log Z) and the 5x5 covariance
    (Hessian of log Z), all in the fixed tensor basis.
    """
    quad = quad or SphereQuad()
    lam = _coerce(lam)
    w, u = np.linalg.eigh(mat(lam))
    logz, m, m4 = _diag_stats(w, quad)
    mean_mat = np.einsum("ik,k,jk->ij", u, m - 1.0 / 3.0, u)
    cov_eig = _covariance5(m, m4)
    r5 = _rep5_from_frame(u)
    cov = r5 @ cov_eig @ r5.T
    return PartitionResult(logZ=float(logz), mean=vec(mean_mat),
                           covariance=cov)


def solve_lambda(b, tol=NEWTON_TOL, quad=None, max_iter=NEWTON_MAX_ITER):
    """Multiplier Lambda with moment(Lambda) = b, for b in the open moment set."""
    quad = quad or SphereQuad()
    b = _coerce(b)
    w, u = np.linalg.eigh(mat(b))
    _check_interior(w)
    lam_diag, _, _ = _solve_diag(w, quad, tol=tol, max_iter=max_iter)
    return from_eig(lam_diag, u)


def psi_s(b, quad=None, tol=NEWTON_TOL):
    """Singular potential psi_s(b) = Lambda_b . b - log Z(Lambda_b)."""
    quad = quad or SphereQuad()
    b = _coerce(b)
    w, u = np.linalg.eigh(mat(b))
    _check_interior(w)
    lam_diag, logz, _ = _solve_diag(w, quad, tol=tol)
    return float(np.sum(lam_diag * w, axis=-1) - logz)


def dual_field(values, quad=None, warm=None, tol=NEWTON_TOL,
               max_iter=NEWTON_MAX_ITER, chunk_bytes=2e8):
    """Batched dual solve for a field of coefficient vectors.

    values (..., 5) -> (psi_s (...), lambda (..., 5), warm (..., 3)) where
    ``warm`` holds the coaxial multiplier triple (sorted-eigenvalue frame)
    reusable as the start of the next solve on a nearby field.
    """
    quad = quad or SphereQuad()
    values = np.asarray(values, dtype=float)
    lead = values.shape[:-1]
    flat = values.reshape(-1, 5)
    n = flat.shape[0]
    sq, _ = _sphere_nodes(quad.n_theta, quad.n_phi)
    chunk = max(256, int(chunk_bytes / (sq.shape[0] * 8 * 4)))
    psi = np.empty(n)
    lam5 = np.empty((n, 5))
    warm_out = np.empty((n, 3))
    warm_in = None if warm is None else np.asarray(warm, dtype=float).reshape(n, 3)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        w, u = np.linalg.eigh(mat(flat[lo:hi]))
        _check_interior(w)
        lam0 = None if warm_in is None else warm_in[lo:hi]
        lam_diag, logz, _ = _solve_diag(w, quad, lam0=lam0, tol=tol,
                                        max_iter=max_iter)
        psi[lo:hi] = np.sum(lam_diag * w, axis=-1) - logz
        lam5[lo:hi] = from_eig(lam_diag, u)
        warm_out[lo:hi] = lam_diag
    return psi.reshape(lead), lam5.reshape(lead + (5,)), warm_out.reshape(lead + (3,))


# ---------------------------------------------------------------------------
# uniaxial ray and the ground state


def _line_quad(n=256):
    u, w = np.polynomial.legendre.leggauss(n)
    return u ** 2, w


def uniaxial_dual(s, tol=1e-12, max_iter=200, n_nodes=256):
    """Scalar dual solve on the uniaxial ray b = s (n x n - I/3).

    Returns (lambda_scalar, psi_s) where Lambda = lambda_scalar (n x n - I/3).
    Vectorized over s; each s must lie in (-1/2, 1).
    """
    s = np.asarray(s, dtype=float)
    if np.any((s <= -0.5) | (s >= 1.0)):
        raise DomainError("uniaxial order parameter must lie in (-1/2, 1)")
    u2, w = _line_quad(n_nodes)
    target = (2.0 * s + 1.0) / 3.0
    lam = np.zeros_like(s)
    for _ in range(max_iter):
        e = lam[..., None] * u2
        shift = e.max(axis=-1, keepdims=True)
        ew = np.exp(e - shift) * w
        z0 = ew.sum(axis=-1)
        m = (ew * u2).sum(axis=-1) / z0
        r = m - target
        if np.abs(r).max() <= tol:
            break
        var = (ew * u2 ** 2).sum(axis=-1) / z0 - m ** 2
        step = -r / np.maximum(var, 1e-300)
        # moment stays in (0, 1); damp steps that overshoot badly
        lam = lam + np.clip(step, -80.0, 80.0)
    else:
        raise ConvergenceError("uniaxial dual solve did not converge",
                               residual=float(np.abs(r).max()))
    e = lam[..., None] * (u2 - 1.0 / 3.0)
    shift = e.max(axis=-1, keepdims=True)
    logz = shift[..., 0] + np.log((np.exp(e - shift) * w).sum(axis=-1) * 2.0 * math.pi)
    psi = lam * (2.0 * s / 3.0) - logz
    return lam, psi


def uniaxial_variance(lam, n_nodes=256):
    """Variance of u^2 under the coaxial density with scalar multiplier lam."""
    u2, w = _line_quad(n_nodes)
    lam = np.asarray(lam, dtype=float)
    e = lam[..., None] * u2
    shift = e.max(axis=-1, keepdims=True)
    ew = np.exp(e - shift) * w
    z0 = ew.sum(axis=-1)
    m = (ew * u2).sum(axis=-1) / z0
    return (ew * u2 ** 2).sum(axis=-1) / z0 - m ** 2


@dataclass
class BulkData:
    """Ground-state data of the shifted bulk potential psi."""

    k0: float
    s_star: float
    c5: float
    psi_at_sstar: float
    branch: str

    def to_json_dict(self):
        return dict(self.__dict__)


def bulk_phi(s, k0):
    """phi(s) = psi_s on the uniaxial ray minus the quadratic coupling."""
    _, psi = uniaxial_dual(s)
    return psi - k0 * np.asarray(s, dtype=float) ** 2 / 3.0


def ground_state(k0, quad=None, tol=1e-12, branch_tol=1e-4):
    """Minimize phi over the uniaxial ray: returns (s*, c5) and the branch flag.

    Bracketed scan, Brent refinement, then Newton polish on
    phi'(s) = (2/3)(lambda(s) - k0 s).
    """
    if not math.isfinite(k0):
        raise ConfigurationError("k0 must be finite")
    from scipy.optimize import minimize_scalar

    delta = 1e-3
    grid = np.linspace(-0.5 + delta, 1.0 - delta, 601)
    phi = bulk_phi(grid, k0)
    i = int(np.argmin(phi))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, grid.size - 1)]
    res = minimize_scalar(lambda s: float(bulk_phi(np.array([s]), k0)[0]),
                          bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-10})
    s = float(res.x)
    for _ in range(8):
        lam, _ = uniaxial_dual(np.array([s]))
        g = (2.0 / 3.0) * (lam[0] - k0 * s)
        var = float(uniaxial_variance(lam)[0])
        h = (2.0 / 3.0) * ((2.0 / 3.0) / max(var, 1e-300) - k0)
        if h <= 0:
            break
        step = -g / h
        s_new = min(max(s + step, -0.5 + delta), 1.0 - delta)
        if abs(s_new - s) < tol:
            s = s_new
            break
        s = s_new
    c5 = float(bulk_phi(np.array([s]), k0)[0])
    if abs(s) <= branch_tol:
        # the isotropic state is the minimizer; snap exactly
        s = 0.0
        c5 = float(bulk_phi(np.array([0.0]), k0)[0])
        branch = "isotropic"
    else:
        branch = "nematic"
    check = psi_value(BulkData(k0, s, c5, 0.0, branch),
                      np.array([0.0, math.sqrt(2.0 / 3.0) * s, 0.0, 0.0, 0.0]))
    return BulkData(k0=k0, s_star=s, c5=c5, psi_at_sstar=float(check),
                    branch=branch)


def psi_value(bulk, values, quad=None, warm=None):
    """Shifted bulk potential psi(b) = psi_s(b) - k0 |b|^2 / 2 - c5 (batched)."""
    values = np.asarray(values, dtype=float)
    psis, _, _ = dual_field(values, quad=quad, warm=warm)
    return psis - 0.5 * bulk.k0 * np.sum(values ** 2, axis=-1) - bulk.c5


# ---------------------------------------------------------------------------
# projection and distance to the ground-state manifold


def project_field(values, margin=0.0):
    """Euclidean projection onto eigenvalues in [-1/3+margin, 2/3-margin], trace 0.

    Spectral projection: eigenvalue triples are projected onto the box-with-
    zero-sum polytope by bisection on the shift multiplier.  Points already
    feasible are returned bitwise unchanged.
    """
    if not (0.0 <= margin < 0.1):
        raise ConfigurationError("projection margin must lie in [0, 0.1)")
    values = np.asarray(values, dtype=float)
    lo_b = EIG_LO + margin
    hi_b = EIG_HI - margin
    w, u = np.linalg.eigh(mat(values))
    feasible = (w[..., 0] >= lo_b) & (w[..., -1] <= hi_b)
    if feasible.all():
        return values.copy()
    t_lo = w.min(axis=-1) - hi_b
    t_hi = w.max(axis=-1) - lo_b
    for _ in range(64):
        t = 0.5 * (t_lo + t_hi)
        f = np.clip(w - t[..., None], lo_b, hi_b).sum(axis=-1)
        t_lo = np.where(f > 0, t, t_lo)
        t_hi = np.where(f <= 0, t, t_hi)
    x = np.clip(w - (0.5 * (t_lo + t_hi))[..., None], lo_b, hi_b)
    out = from_eig(x, u)
    return np.where(feasible[..., None], values, out)


def project_Qbar(raw, margin=0.0):
    """Single-tensor wrapper around project_field; accepts 3x3 or 5-vector."""
    raw = np.asarray(getattr(raw, "coeffs", raw), dtype=float)
    if raw.shape == (3, 3):
        tr = np.trace(raw) / 3.0
        raw = vec(raw - tr * np.eye(3))
    return project_field(raw, margin=margin)


def dist_to_M(b, s_star):
    """Distance |b - s* (n x n - I/3)| with n the leading eigenvector (batched)."""
    b = _coerce(b)
    w, u = np.linalg.eigh(mat(b))
    n = u[..., :, -1]
    target = s_star * (np.einsum("...i,...j->...ij", n, n) - np.eye(3) / 3.0)
    diff = b - vec(target)
    return np.linalg.norm(diff, axis=-1)
