"""Constrained minimization of the discrete energies and the sweep harness.

Projected gradient descent with Armijo backtracking on the true energy:
steps follow the exact discrete gradient, every node is projected back onto
the closed moment set with a safety margin, and accepted iterations strictly
decrease the energy.  The director minimizer does Riemannian projected
descent (tangential step plus renormalization) on the limiting Frank
energy.  The sweep harness drives the bounded-domain minimizations down an
interaction-range ladder and records the empirical convergence data.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import maxent
from .energy import (EnergyBreakdown, bilinear_term, director_derivatives,
                     estat_solve, frank_energy)
from .errors import (ConfigurationError, ConvergenceError, DomainError,
                     StallError)
from .fields import OrderField, build_mask, build_periodized_kernel, director_to_field

STEP_GROWTH = 1.3
ARMIJO_C1 = 1e-4

# trial states whose eigenvalue margin falls below this cannot have their
# entropy certified by the default sphere rules; the line search rejects
# such steps outright instead of attempting a saturating dual solve
TRIAL_MARGIN_GUARD = 5e-4


@dataclass(frozen=True)
class MinimizeOptions:
    step0: float = 1e-2
    backtrack: float = 0.5
    grad_tol: float = 1e-6
    max_iters: int = 500
    projection_margin: float = 1e-6
    seed: int = 0
    precondition: bool = False
    quad: maxent.SphereQuad = field(default_factory=maxent.SphereQuad)

    def __post_init__(self):
        if self.step0 <= 0 or self.grad_tol <= 0:
            raise ConfigurationError("step0 and grad_tol must be positive")
        if not (0.0 < self.backtrack < 1.0):
            raise ConfigurationError("backtrack factor must lie in (0, 1)")


@dataclass
class MinimizeResult:
    field: object
    energy: float
    trace: list
    converged: bool
    iterations: int
    stop_reason: str
    breakdown: EnergyBreakdown | None = None


def _l2(grid, arr):
    return math.sqrt(grid.cell_volume * float(np.sum(arr ** 2)))


def _eig_margin(values):
    """Smallest distance of any nodal eigenvalue to the moment-set boundary."""
    from .basis import BASIS
    eigs = np.linalg.eigvalsh(np.einsum("...a,aij->...ij", values, BASIS))
    return min(float(eigs[..., 0].min()) - maxent.EIG_LO,
               maxent.EIG_HI - float(eigs[..., -1].max()))


class _FieldObjective:
    """Shared machinery of the periodic and bounded minimizations.

    Keeps the warm multiplier triples between evaluations so the nodal dual
    solves start from the previous state.
    """

    def __init__(self, kgrid, bulk, eps, opts, interior=None, cfg=None,
                 mask=None):
        self.kgrid = kgrid
        self.bulk = bulk
        self.eps = eps
        self.opts = opts
        self.interior = interior     # None: bulk over all cells (periodic)
        self.cfg = cfg
        self.mask = mask
        self.h3 = kgrid.grid.cell_volume
        self.phi_warm = None

    def energy(self, values, warm):
        psi_s, lam5, warm_out = maxent.dual_field(values, quad=self.opts.quad,
                                                  warm=warm)
        psi = psi_s - 0.5 * self.bulk.k0 * np.sum(values ** 2, axis=-1) \
            - self.bulk.c5
        if self.interior is not None:
            psi = psi[self.interior]
        bulk_val = self.h3 / self.eps ** 2 * math.fsum(psi.ravel().tolist())
        f = OrderField(self.kgrid.grid, values)
        bil = bilinear_term(f, self.kgrid, self.eps)
        e_stat = 0.0
        envelope = None
        if self.cfg is not None:
            res = estat_solve(f, self.mask, self.cfg, phi_init=self.phi_warm)
            self.phi_warm = res.phi
            e_stat = res.E_value
            envelope = res.envelope_gradient
        breakdown = EnergyBreakdown(bulk=bulk_val, bilinear=bil,
                                    electrostatic=e_stat, epsilon=self.eps)
        return breakdown, lam5, warm_out, envelope

    def gradient(self, values, lam5, envelope):
        conv = self.kgrid.convolve(values)
        grad = lam5 - self.bulk.k0 * values \
            + np.einsum("ab,xyzb->xyza", self.kgrid.K0_discrete, values) \
            - self.h3 * conv
        grad *= self.h3 / self.eps ** 2
        if envelope is not None:
            grad = grad + self.h3 * envelope
        if self.interior is not None:
            grad[~self.interior] = 0.0
        return grad


def _descend(values0, objective, opts, grid):
    margin = opts.projection_margin
    values = maxent.project_field(values0, margin=margin)
    # never step closer to the boundary than the solver can certify, but
    # accept an initial state that already sits closer than the guard
    guard = min(max(margin, TRIAL_MARGIN_GUARD), _eig_margin(values))
    warm = None
    breakdown, lam5, warm, envelope = objective.energy(values, warm)
    energy = breakdown.total
    trace = []
    step = opts.step0
    stop = "max_iters"
    converged = False
    it = 0
    for it in range(opts.max_iters):
        grad = objective.gradient(values, lam5, envelope)
        if opts.precondition:
            # diagonal curvature from the dual covariance: Newton-like scaling
            _, m, m4 = maxent._diag_stats(warm, opts.quad)
            scale = np.maximum((m4 - np.einsum("...i,...j->...ij", m, m))
                               .trace(axis1=-2, axis2=-1) / 3.0, 1e-6)
            grad = grad * scale[..., None] / (objective.h3 / objective.eps ** 2)
        t_ref = opts.step0
        pg = (values - maxent.project_field(values - t_ref * grad,
                                            margin=margin)) / t_ref
        pgnorm = _l2(grid, pg)
        trace.append((it, energy, pgnorm, step))
        if pgnorm < opts.grad_tol:
            converged = True
            stop = "grad_tol"
            break
        accepted = False
        while step >= 1e-18 * opts.step0:
            trial = maxent.project_field(values - step * grad, margin=margin)
            if _eig_margin(trial) < guard:
                step *= opts.backtrack
                continue
            decrease_ref = float(np.sum(grad * (values - trial)))
            try:
                tb, tl, tw, tenv = objective.energy(trial, warm)
            except ConvergenceError:
                # trial parked nodes against the moment-set margin where the
                # dual solve saturates: treat as an inadmissible step
                step *= opts.backtrack
                continue
            if tb.total <= energy - ARMIJO_C1 * decrease_ref + 1e-14 * abs(energy):
                values, energy, lam5, warm, envelope = trial, tb.total, tl, tw, tenv
                breakdown = tb
                step = min(step * STEP_GROWTH, 1e6 * opts.step0)
                accepted = True
                break
            step *= opts.backtrack
        if not accepted:
            raise StallError(
                f"no decreasing step at iteration {it} (energy {energy:.6e}, "
                f"projected-gradient norm {pgnorm:.3e})")
    return MinimizeResult(field=OrderField(grid, values), energy=energy,
                          trace=trace, converged=converged, iterations=it,
                          stop_reason=stop, breakdown=breakdown)


def minimize_Feps(init, kgrid, bulk, eps, opts=None):
    """Projected gradient descent on the periodic energy from ``init``."""
    opts = opts or MinimizeOptions()
    objective = _FieldObjective(kgrid, bulk, eps, opts)
    return _descend(init.values.copy(), objective, opts, init.grid)


def minimize_Geps(boundary_field, mask, kgrid, bulk, eps, cfg=None, opts=None,
                  init=None, boundary_dist_tol=1e-8):
    """Bounded-domain minimization: frozen collar and exterior cells.

    The boundary field must take ground-state values on the frozen cells;
    the iteration starts from it (or ``init``) and only interior cells move.
    """
    opts = opts or MinimizeOptions()
    frozen_vals = boundary_field.values[mask.frozen]
    d = maxent.dist_to_M(frozen_vals, bulk.s_star)
    if d.size and float(d.max()) > boundary_dist_tol:
        raise DomainError(
            f"boundary data leaves the ground-state manifold by "
            f"{float(d.max()):.3e} on frozen cells")
    objective = _FieldObjective(kgrid, bulk, eps, opts,
                                interior=mask.interior, cfg=cfg, mask=mask)
    start = (init or boundary_field).values.copy()
    start[mask.frozen] = boundary_field.values[mask.frozen]
    result = _descend(start, objective, opts, boundary_field.grid)
    # projection may not move frozen cells, but re-pin them exactly anyway
    result.field.values[mask.frozen] = boundary_field.values[mask.frozen]
    return result


# ---------------------------------------------------------------------------
# director minimization of the limiting energy


def frank_gradient(n_values, coeffs, h):
    """Exact gradient of the discrete Frank energy (central differences).

    With d = div n, c = curl n, t = n . c the energy density is
    K1 d^2 + K3 |c|^2 + (K2 - K3) t^2 and the adjoints of the central
    operators give

        grad = (h^3/2) [ -K1 grad d + K3 curl c + (K2-K3)(t c + curl(t n)) ].
    """
    div, curl = director_derivatives(n_values, h)
    t = np.einsum("...i,...i->...", n_values, curl)

    def grad_scalar(s):
        out = np.empty(s.shape + (3,))
        for ax in range(3):
            out[..., ax] = (np.roll(s, -1, axis=ax)
                            - np.roll(s, 1, axis=ax)) / (2.0 * h)
        return out

    def curl_of(v):
        d = np.empty(v.shape[:-1] + (3, 3))
        for ax in range(3):
            d[..., ax, :] = (np.roll(v, -1, axis=ax)
                             - np.roll(v, 1, axis=ax)) / (2.0 * h)
        return np.stack([d[..., 1, 2] - d[..., 2, 1],
                         d[..., 2, 0] - d[..., 0, 2],
                         d[..., 0, 1] - d[..., 1, 0]], axis=-1)

    g = -coeffs.K1 * grad_scalar(div) + coeffs.K3 * curl_of(curl) \
        + (coeffs.K2 - coeffs.K3) * (t[..., None] * curl
                                     + curl_of(t[..., None] * n_values))
    return 0.5 * h ** 3 * g


def minimize_director(boundary_director, free, coeffs, grid, opts=None):
    """Riemannian projected descent on the limiting Frank energy.

    ``boundary_director`` is a callable or (N,N,N,3) array; nodes outside
    the boolean ``free`` mask stay pinned to it.  Each accepted step
    renormalizes the director nodewise.
    """
    opts = opts or MinimizeOptions(step0=1e-2)
    if callable(boundary_director):
        x, y, z = grid.coords()
        n0 = np.asarray(boundary_director(x, y, z), dtype=float)
    else:
        n0 = np.asarray(boundary_director, dtype=float).copy()
    norms = np.linalg.norm(n0, axis=-1, keepdims=True)
    if float(norms.min()) < 1e-8:
        raise DomainError("boundary director has a (near-)zero node")
    n = n0 / norms
    pinned = n.copy()
    h = grid.h

    energy, _ = frank_energy(n, coeffs, h)
    energy *= 1.0
    trace = []
    step = opts.step0
    stop = "max_iters"
    converged = False
    it = 0
    for it in range(opts.max_iters):
        g = frank_gradient(n, coeffs, h)
        g_tan = g - np.einsum("...i,...i->...", g, n)[..., None] * n
        g_tan[~free] = 0.0
        gnorm = _l2(grid, g_tan)
        trace.append((it, energy, gnorm, step))
        if gnorm < opts.grad_tol:
            converged = True
            stop = "grad_tol"
            break
        accepted = False
        while step >= 1e-18 * opts.step0:
            trial = n - step * g_tan
            tn = np.linalg.norm(trial, axis=-1, keepdims=True)
            if float(tn.min()) < 1e-8:
                raise DomainError("director degenerated during renormalization")
            trial = trial / tn
            trial[~free] = pinned[~free]
            e_t, _ = frank_energy(trial, coeffs, h)
            decrease_ref = float(np.sum(g_tan * (n - trial)))
            if e_t <= energy - ARMIJO_C1 * decrease_ref + 1e-14 * abs(energy):
                n, energy = trial, e_t
                step = min(step * STEP_GROWTH, 1e6 * opts.step0)
                accepted = True
                break
            step *= opts.backtrack
        if not accepted:
            raise StallError(f"director line search stalled at iteration {it}")
    return {"director": n, "energy": energy, "trace": trace,
            "converged": converged, "iterations": it, "stop_reason": stop}


# ---------------------------------------------------------------------------
# translation alignment and the local-minimum probe


def align_translation(reference, candidate):
    """Best lattice shift of ``candidate`` matching ``reference`` and the
    aligned values; the score is the cross-correlation over all N^3 shifts."""
    ref, cand = reference.values, candidate.values
    score = np.zeros(ref.shape[:3])
    for c in range(5):
        fa = np.fft.rfftn(ref[..., c])
        fb = np.fft.rfftn(cand[..., c])
        score += np.fft.irfftn(np.conj(fb) * fa, s=ref.shape[:3])
    shift = np.unravel_index(int(np.argmax(score)), score.shape)
    rolled = np.roll(cand, shift=shift, axis=(0, 1, 2))
    return np.asarray(shift, dtype=int), OrderField(candidate.grid, rolled)


def local_min_probe(result_field, kgrid, bulk, eps, trials=5, amplitude=1e-3,
                    opts=None, seed=0, return_tol=None):
    """Perturb a converged minimizer, re-minimize, report the return fraction.

    A trial counts as returned when the re-minimized field lies within
    ``return_tol`` (L^2, after the best lattice translation) of the original.
    """
    opts = opts or MinimizeOptions()
    rng = np.random.default_rng(seed)
    grid = result_field.grid
    if return_tol is None:
        return_tol = max(10.0 * opts.grad_tol, 0.2 * amplitude)
    distances = []
    returned = 0
    for _ in range(trials):
        if amplitude > 0:
            delta = rng.normal(size=result_field.values.shape)
            delta *= amplitude / _l2(grid, delta)
        else:
            delta = np.zeros_like(result_field.values)
        start = OrderField(grid, maxent.project_field(
            result_field.values + delta, margin=opts.projection_margin))
        res = minimize_Feps(start, kgrid, bulk, eps, opts)
        _, aligned = align_translation(result_field, res.field)
        dist = _l2(grid, aligned.values - result_field.values)
        distances.append(dist)
        if dist <= return_tol:
            returned += 1
    return {"fraction": returned / trials, "distances": distances,
            "return_tol": return_tol, "amplitude": amplitude}


# ---------------------------------------------------------------------------
# the sweep harness


@dataclass
class SweepResult:
    rows: list
    limit_energy: float
    limit_iterations: int
    energies_bounded: bool
    dist_decreasing: bool
    error_decreasing: bool

    def to_json_dict(self):
        return {"rows": self.rows, "limit_energy": self.limit_energy,
                "limit_iterations": self.limit_iterations,
                "energies_bounded": self.energies_bounded,
                "dist_decreasing": self.dist_decreasing,
                "error_decreasing": self.error_decreasing}


def sweep_gamma(spec, bulk, coeffs, geometry, boundary_director, eps_ladder,
                grid, opts=None, alpha=0.25, c6=0.5, decay_p=None, cfg=None,
                director_opts=None):
    """Empirical convergence of bounded-domain minimizers down an eps ladder.

    For each rung: build the mask and periodized kernel, minimize from the
    lifted boundary data, and record the minimum energy, the limiting
    director energy, the L2 distance to the limiting minimizer, and the
    worst interior distance to the ground-state manifold.
    """
    opts = opts or MinimizeOptions()
    ladder = sorted(eps_ladder, reverse=True)
    b0 = director_to_field(boundary_director, bulk.s_star, grid)

    limit_mask = build_mask(geometry, ladder[-1], alpha, c6, grid,
                            decay_p=decay_p)
    dir_res = minimize_director(boundary_director, limit_mask.omega, coeffs,
                                grid, director_opts or opts)
    limit_field = director_to_field(dir_res["director"], bulk.s_star, grid)

    rows = []
    for eps in ladder:
        if eps < grid.h:
            rows.append({"eps": eps, "N": grid.N, "skipped": True})
            continue
        mask = build_mask(geometry, eps, alpha, c6, grid, decay_p=decay_p)
        kgrid = build_periodized_kernel(spec, grid, eps)
        res = minimize_Geps(b0, mask, kgrid, bulk, eps, cfg=cfg, opts=opts)
        d_int = maxent.dist_to_M(res.field.values[mask.interior], bulk.s_star)
        rows.append({
            "eps": eps, "N": grid.N, "energy": res.energy,
            "limit_energy": dir_res["energy"],
            "l2_dist_to_limit": _l2(grid, res.field.values - limit_field.values),
            "max_interior_dist_to_M": float(d_int.max()) if d_int.size else 0.0,
            "iterations": res.iterations, "converged": res.converged,
            "skipped": False,
        })
    live = [r for r in rows if not r["skipped"]]
    energies = [r["energy"] for r in live]
    dists = [r["max_interior_dist_to_M"] for r in live]
    errors = [abs(r["energy"] - dir_res["energy"]) for r in live]
    return SweepResult(
        rows=rows, limit_energy=dir_res["energy"],
        limit_iterations=dir_res["iterations"],
        energies_bounded=all(math.isfinite(e) for e in energies),
        dist_decreasing=all(b <= a * (1 + 1e-9) for a, b in zip(dists, dists[1:])),
        error_decreasing=all(b <= a * (1 + 1e-9) for a, b in zip(errors, errors[1:])))
