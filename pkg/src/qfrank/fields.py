"""Discrete order-parameter fields on the torus [0, 2pi]^3.

Fields are cell-centered coefficient arrays of shape (N, N, N, 5) with axes
(x, y, z, component); integrals are plain Riemann sums h^3 * sum.  The module
also builds the lattice-sampled periodized kernel (the wrap of the scaled
interaction onto the torus), domain masks with the collar-width law, and the
raw binary + JSON sidecar serialization.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .basis import mat, vec
from .errors import ConfigurationError, DomainError, ResolutionError
from .kernel import kernel_matrix

TWO_PI = 2.0 * math.pi

INTERIOR, COLLAR, EXTERIOR = 0, 1, 2

# lattice-sum image tail is cut when its bound drops below this fraction of
# the full kernel mass
LATTICE_TAIL_REL = 1e-12

# near-origin cells get a 5^3 midpoint sub-sample so the inner cutoff
# crossing a cell is integrated rather than point-sampled
SUBSAMPLE = 5


@dataclass(frozen=True)
class TorusGrid:
    """Uniform N^3 grid on the torus, spacing h = 2pi/N."""

    N: int

    def __post_init__(self):
        if self.N < 8 or self.N % 2:
            raise ConfigurationError("grid size must be even and at least 8")

    @property
    def h(self):
        return TWO_PI / self.N

    @property
    def cell_volume(self):
        return self.h ** 3

    def axis(self):
        # cell centers at h (k + 1/2): cell faces then lie on the integer
        # lattice h k, so face-aligned box domains are identical across
        # dyadic refinements (needed for clean Richardson behavior)
        return self.h * (np.arange(self.N) + 0.5)

    def coords(self):
        """Cell-center coordinates, three (N, N, N) arrays."""
        x = self.axis()
        return np.meshgrid(x, x, x, indexing="ij")

    def centered_offsets(self):
        """Signed offsets h*d with d wrapped to [-N/2, N/2), shape (N, N, N, 3)."""
        d = (np.arange(self.N) + self.N // 2) % self.N - self.N // 2
        dx, dy, dz = np.meshgrid(d, d, d, indexing="ij")
        return self.h * np.stack([dx, dy, dz], axis=-1)


@dataclass
class OrderField:
    """Grid plus (N, N, N, 5) coefficient values."""

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        n = self.grid.N
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (n, n, n, 5):
            raise ConfigurationError(
                f"field values must have shape ({n},{n},{n},5), got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ConfigurationError("field contains non-finite values")

    @classmethod
    def constant(cls, grid, b):
        b = np.asarray(getattr(b, "coeffs", b), dtype=float)
        vals = np.broadcast_to(b, (grid.N, grid.N, grid.N, 5)).copy()
        return cls(grid, vals)

    @classmethod
    def from_callable(cls, grid, fn):
        """Sample a closed-form map (x, y, z) -> 5-vector at the cell centers."""
        x, y, z = grid.coords()
        return cls(grid, np.asarray(fn(x, y, z), dtype=float))

    def copy(self):
        return OrderField(self.grid, self.values.copy())

    def l2_norm(self):
        return math.sqrt(self.grid.cell_volume * float(np.sum(self.values ** 2)))


def l2_distance(a, b):
    return math.sqrt(a.grid.cell_volume * float(np.sum((a.values - b.values) ** 2)))


# ---------------------------------------------------------------------------
# difference operators


def difference_quotient(f, d):
    """(b(x + h d) - b(x)) / |h d| with periodic wraparound; d integer 3-vector."""
    d = np.asarray(d, dtype=int)
    if not d.any():
        raise DomainError("difference quotient undefined for zero offset")
    shifted = np.roll(f.values, shift=(-d[0], -d[1], -d[2]), axis=(0, 1, 2))
    return (shifted - f.values) / (f.grid.h * float(np.linalg.norm(d)))


def discrete_gradient(values, h):
    """Second-order central differences per axis: (..., N,N,N,5) -> (N,N,N,3,5)."""
    out = np.empty(values.shape[:-1] + (3, 5))
    for ax in range(3):
        out[..., ax, :] = (np.roll(values, -1, axis=ax)
                           - np.roll(values, 1, axis=ax)) / (2.0 * h)
    return out


def gradient_matrices(grad5):
    """(..., 3, 5) gradient components -> (..., 3, 3, 3) with axes [a, b, deriv]."""
    from .basis import BASIS
    return np.einsum("...ga,aij->...ijg", grad5, BASIS)


def director_to_field(n, s_star, grid, normalize=True):
    """Lift a director (callable or (N,N,N,3) array) to s*(n x n - I/3) values."""
    if callable(n):
        x, y, z = grid.coords()
        nv = np.asarray(n(x, y, z), dtype=float)
        if nv.shape != (grid.N, grid.N, grid.N, 3):
            nv = np.moveaxis(nv, 0, -1)
    else:
        nv = np.asarray(n, dtype=float)
    norms = np.linalg.norm(nv, axis=-1, keepdims=True)
    if float(norms.min()) < 1e-12:
        raise DomainError("director has a (near-)zero node; cannot normalize")
    if normalize:
        nv = nv / norms
    outer = np.einsum("...i,...j->...ij", nv, nv) - np.eye(3) / 3.0
    return OrderField(grid, s_star * vec(outer))


# ---------------------------------------------------------------------------
# periodized kernel on the lattice


@dataclass
class PeriodizedKernelGrid:
    """Lattice samples of the periodized, scaled kernel.

    ``samples[d]`` approximates eps^-3 sum_k K((h d + 2 pi k) / eps) as a 5x5
    matrix per offset; ``K0_discrete`` is the discrete zeroth moment
    h^3 * sum_d samples[d].
    """

    grid: TorusGrid
    epsilon: float
    samples: np.ndarray          # (N, N, N, 5, 5)
    K0_discrete: np.ndarray      # (5, 5)
    images_used: int
    tail_bound: float
    _fft: np.ndarray | None = field(default=None, repr=False)

    def fft(self):
        """Cached rfftn of the 25 sample components, shape (5, 5, N, N, Nr)."""
        if self._fft is None:
            self._fft = np.fft.rfftn(np.moveaxis(self.samples, (3, 4), (0, 1)),
                                     axes=(2, 3, 4))
        return self._fft

    def convolve(self, values):
        """Lattice convolution sum_y samples[x - y] values[y], (N,N,N,5) -> same."""
        vhat = np.fft.rfftn(np.moveaxis(values, 3, 0), axes=(1, 2, 3))
        out = np.einsum("abxyz,bxyz->axyz", self.fft(), vhat)
        res = np.fft.irfftn(out, s=self.samples.shape[:3], axes=(1, 2, 3))
        return np.moveaxis(res, 0, 3)


def _evaluate_kernel_cells(spec, points, eps):
    """eps^-3 K(points / eps) for an (..., 3) array of displacements."""
    return kernel_matrix(spec, points / eps) / eps ** 3


def _isotropic_shell_integral(spec, radius):
    """int_{|y| > radius} K(y) dy: isotropic, a multiple of the identity."""
    total = 0.0
    for prof, avg in zip(spec.profiles, (1.0, 1.0 / 3.0, 2.0 / 15.0)):
        if prof.is_zero:
            continue
        if prof.form == "inverse-power":
            val = prof.power_integral(2, radius, prof.rmax)
        else:
            a = max(radius, prof.r_inner)
            val = 0.0
            if a < prof.r_outer:
                rr = np.linspace(a, prof.r_outer, 513)
                val = float(np.trapezoid(prof(rr) * rr ** 2, rr))
        total += 4.0 * math.pi * avg * val
    return total


def build_periodized_kernel(spec, grid, eps, decay_p=None):
    """Sample the periodized kernel on the offset lattice.

    The lattice sum over images 2 pi k is truncated once the analytic decay
    bound of the remaining shells drops below ``LATTICE_TAIL_REL`` of the
    kernel mass; cells whose center lies within 2*eps*r0 + 2h of the origin
    are averaged over a 5^3 midpoint sub-sample.

    The grid must resolve the interaction range: eps >= h.  (The mandated
    experiment ladders run down to eps close to h; coarser eps is refused.)
    """
    h = grid.h
    if eps < h * (1 - 1e-12):
        raise ResolutionError(
            f"eps = {eps:g} below the grid resolvability floor h = {h:g}")
    z0 = grid.centered_offsets()

    total_mass = spec.decay_bound_mass(0.0)
    if total_mass == 0.0:
        zeros = np.zeros((grid.N,) * 3 + (5, 5))
        return PeriodizedKernelGrid(grid, eps, zeros, np.zeros((5, 5)), 0, 0.0)

    samples = _evaluate_kernel_cells(spec, z0, eps)

    # midpoint sub-sample of the k = 0 term near the origin
    r_near = 2.0 * eps * spec.r_inner_max + 2.0 * h
    near = np.linalg.norm(z0, axis=-1) <= r_near
    if near.any():
        pts = z0[near]
        offs = (np.arange(SUBSAMPLE) - (SUBSAMPLE - 1) / 2.0) * (h / SUBSAMPLE)
        acc = np.zeros(pts.shape[:1] + (5, 5))
        for ox in offs:
            for oy in offs:
                for oz in offs:
                    acc += _evaluate_kernel_cells(spec, pts + [ox, oy, oz], eps)
        samples[near] = acc / SUBSAMPLE ** 3

    images_used = 0
    tail = math.inf
    exact_shells = 2
    for shell in range(1, exact_shells + 1):
        radius = TWO_PI * shell - math.pi * math.sqrt(3.0)
        tail = spec.decay_bound_mass(radius / eps)
        if tail <= LATTICE_TAIL_REL * total_mass:
            break
        ks = []
        rng_k = range(-shell, shell + 1)
        for kx in rng_k:
            for ky in rng_k:
                for kz in rng_k:
                    if max(abs(kx), abs(ky), abs(kz)) == shell:
                        ks.append((kx, ky, kz))
        for k in ks:
            shift = TWO_PI * np.asarray(k, dtype=float)
            samples += _evaluate_kernel_cells(spec, z0 + shift, eps)
        images_used += len(ks)
    else:
        # Slowly decaying tails (mass ~ R^{3-p}) cannot reach the relative
        # cut by direct shells; the far images are one midpoint-rule cell
        # each, so their sum is the isotropic continuum remainder up to the
        # recorded bound.
        radius = TWO_PI * (exact_shells + 0.5)
        tail = spec.decay_bound_mass(radius / eps)
        if tail > LATTICE_TAIL_REL * total_mass:
            samples += _isotropic_shell_integral(spec, radius / eps) / TWO_PI ** 3 * np.eye(5)
    if tail > 0.5 * total_mass:
        raise ResolutionError(
            "lattice-sum truncation bound unattainable: kernel tail dominates")

    # exact evenness under d -> -d
    rev = samples[::-1, ::-1, ::-1]
    rev = np.roll(rev, shift=(1, 1, 1), axis=(0, 1, 2))
    samples = 0.5 * (samples + rev)

    k0 = grid.cell_volume * samples.sum(axis=(0, 1, 2))
    return PeriodizedKernelGrid(grid, eps, samples, k0, images_used, tail)


def raw_kernel_double_lattice(spec, grid, eps):
    """eps^-3 K(h d / eps) on the doubled offset lattice d in [-N, N)^3.

    Used by the boundary-remainder diagnostics, where actual (unwrapped)
    separations between points of [0, 2pi]^3 are needed.  Near-origin cells
    get the same midpoint sub-sampling as the periodized kernel.  Returns an
    array of shape (2N, 2N, 2N, 5, 5) indexed by d mod 2N.
    """
    n2 = 2 * grid.N
    h = grid.h
    d = (np.arange(n2) + n2 // 2) % n2 - n2 // 2
    dx, dy, dz = np.meshgrid(d, d, d, indexing="ij")
    z = h * np.stack([dx, dy, dz], axis=-1)
    out = _evaluate_kernel_cells(spec, z, eps)
    r_near = 2.0 * eps * spec.r_inner_max + 2.0 * h
    near = np.linalg.norm(z, axis=-1) <= r_near
    if near.any():
        pts = z[near]
        offs = (np.arange(SUBSAMPLE) - (SUBSAMPLE - 1) / 2.0) * (h / SUBSAMPLE)
        acc = np.zeros(pts.shape[:1] + (5, 5))
        for ox in offs:
            for oy in offs:
                for oz in offs:
                    acc += _evaluate_kernel_cells(spec, pts + [ox, oy, oz], eps)
        out[near] = acc / SUBSAMPLE ** 3
    return out


# ---------------------------------------------------------------------------
# domain masks


@dataclass(frozen=True)
class BallGeometry:
    center: tuple
    radius: float

    def indicator(self, grid):
        x, y, z = grid.coords()
        c = self.center
        return ((x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2
                <= self.radius ** 2)

    def boundary_margin(self):
        lo = min(self.center) - self.radius
        hi = TWO_PI - (max(self.center) + self.radius)
        return min(lo, hi)


@dataclass(frozen=True)
class BoxGeometry:
    lo: tuple
    hi: tuple

    def indicator(self, grid):
        x, y, z = grid.coords()
        m = np.ones_like(x, dtype=bool)
        for arr, a, b in ((x, self.lo[0], self.hi[0]), (y, self.lo[1], self.hi[1]),
                          (z, self.lo[2], self.hi[2])):
            m &= (arr >= a) & (arr < b)
        return m

    def boundary_margin(self):
        return min(min(self.lo), TWO_PI - max(self.hi))


@dataclass
class DomainMask:
    """Cell labels {interior, collar, exterior} plus the collar-width law data."""

    grid: TorusGrid
    labels: np.ndarray
    epsilon: float
    alpha: float
    c6: float
    c7: float
    delta_eps: float
    delta_achieved: float
    delta1: float

    @property
    def interior(self):
        return self.labels == INTERIOR

    @property
    def collar(self):
        return self.labels == COLLAR

    @property
    def exterior(self):
        return self.labels == EXTERIOR

    @property
    def omega(self):
        return self.labels != EXTERIOR

    @property
    def frozen(self):
        return self.labels != INTERIOR

    def counts(self):
        return {name: int(np.count_nonzero(self.labels == lab))
                for name, lab in (("interior", INTERIOR), ("collar", COLLAR),
                                  ("exterior", EXTERIOR))}


def build_mask(geometry, eps, alpha, c6, grid, decay_p=None, c7=None):
    """Label torus cells interior / collar / exterior for the bounded problem.

    The collar is the layer of domain cells within delta_eps = c6 * eps^alpha
    (center-to-center distance) of the exterior; the geometry must keep a
    positive margin to the cube boundary, and when the kernel decay exponent
    is supplied the bounded-domain condition (1 - alpha)(p - 3) > 2 is
    enforced.
    """
    if not (0.0 < alpha < 1.0):
        raise ConfigurationError("collar exponent alpha must lie in (0, 1)")
    if c6 <= 0:
        raise ConfigurationError("collar constant c6 must be positive")
    c7 = 4.0 * c6 if c7 is None else c7
    if c7 <= c6:
        raise ConfigurationError("collar law needs c7 > c6")
    if decay_p is not None and not (1.0 - alpha) * (decay_p - 3.0) > 2.0:
        raise ConfigurationError(
            f"(1-alpha)(p-3) = {(1 - alpha) * (decay_p - 3):.3f} must exceed 2")
    delta1 = geometry.boundary_margin()
    if delta1 <= 0:
        raise ConfigurationError(
            "domain must keep a positive distance to the cube boundary")

    omega = geometry.indicator(grid)
    if not omega.any():
        raise ConfigurationError("domain contains no cells at this resolution")
    delta_eps = c6 * eps ** alpha
    dist = ndimage.distance_transform_edt(omega, sampling=grid.h)
    labels = np.full(omega.shape, EXTERIOR, dtype=np.uint8)
    labels[omega & (dist <= delta_eps)] = COLLAR
    labels[omega & (dist > delta_eps)] = INTERIOR

    interior = labels == INTERIOR
    achieved = float(dist[interior].min()) if interior.any() else math.inf
    return DomainMask(grid=grid, labels=labels, epsilon=eps, alpha=alpha,
                      c6=c6, c7=c7, delta_eps=delta_eps,
                      delta_achieved=achieved, delta1=delta1)


# ---------------------------------------------------------------------------
# serialization: raw little-endian arrays + JSON sidecar


def _sidecar(path):
    return path.with_suffix(path.suffix + ".json") if path.suffix != ".json" \
        else path


def write_field(f, path):
    """Raw little-endian float64 with x fastest, components slowest."""
    import pathlib
    path = pathlib.Path(path)
    flat = f.values.transpose(3, 2, 1, 0).astype("<f8")
    path.write_bytes(flat.tobytes())
    meta = {"N": f.grid.N, "components": 5, "layout": "x-fastest",
            "dtype": "<f8"}
    _sidecar(path).write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")


def read_field(path):
    import pathlib
    path = pathlib.Path(path)
    meta = json.loads(_sidecar(path).read_text())
    n, c = meta["N"], meta["components"]
    flat = np.frombuffer(path.read_bytes(), dtype="<f8").reshape(c, n, n, n)
    return OrderField(TorusGrid(n), np.ascontiguousarray(flat.transpose(3, 2, 1, 0)))


def write_mask(mask, path):
    import pathlib
    path = pathlib.Path(path)
    path.write_bytes(mask.labels.transpose(2, 1, 0).astype(np.uint8).tobytes())
    meta = {"N": mask.grid.N, "components": 1, "layout": "x-fastest",
            "dtype": "u1", "labels": {"interior": INTERIOR, "collar": COLLAR,
                                      "exterior": EXTERIOR},
            "epsilon": mask.epsilon, "alpha": mask.alpha, "c6": mask.c6,
            "c7": mask.c7, "delta_eps": mask.delta_eps,
            "delta_achieved": mask.delta_achieved, "delta1": mask.delta1}
    _sidecar(path).write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")


def write_scalar_grid(values, path):
    """Scalar (N, N, N) grid in the same raw format, components = 1."""
    import pathlib
    path = pathlib.Path(path)
    values = np.asarray(values, dtype=float)
    path.write_bytes(values.transpose(2, 1, 0).astype("<f8").tobytes())
    meta = {"N": values.shape[0], "components": 1, "layout": "x-fastest",
            "dtype": "<f8"}
    _sidecar(path).write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
