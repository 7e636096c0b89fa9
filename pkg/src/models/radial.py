import logging
import math

import numpy as np
from scipy.linalg import solve_banded

from src.errors import DomainError, InvariantViolation, SolverError
from src.models.domain import Ball, Shell

logger = logging.getLogger(__name__)

POSITIVE_FLOOR = 1e-300
MONOTONICITY_TOLERANCE = 1e-10


def positive_power(x, p):
    """x**p for x > 0, evaluated through exp/log with x clamped at 1e-300"""
    return np.exp(p * np.log(np.maximum(x, POSITIVE_FLOOR)))


def interior_sphere_barrier(n, r0, dist_from_center):
    """Maximal solution of the ball of radius r0 at the given distance from its center"""
    if not 0 <= dist_from_center < r0:
        raise DomainError(f'interior barrier needs 0 ≤ dist < r0, got dist={dist_from_center}, r0={r0}')
    return float(positive_power(r0 - dist_from_center ** 2 / r0, 1.0 - n / 2.0))


def exterior_sphere_barrier(n, r0, dist_from_center):
    """Maximal solution of the complement of the ball of radius r0"""
    if not dist_from_center > r0:
        raise DomainError(f'exterior barrier needs dist > r0, got dist={dist_from_center}, r0={r0}')
    return float(positive_power(dist_from_center ** 2 / r0 - r0, 1.0 - n / 2.0))


class RadialProfile:
    KINDS = ('maximal-in-ball', 'exterior-barrier', 'shell-maximal')

    def __init__(self, n=None, r=None, u=None, kind=None, radius=None, inner_radius=None,
                 outer_radius=None, m=math.inf, h_trunc=None, grid_offset=0,
                 residual=None, iterations=0, residual_history=None):
        self.n = n
        self.r = np.asarray(r, dtype=float)
        self.u = np.asarray(u, dtype=float)
        self.kind = kind
        self.radius = radius
        self.inner_radius = inner_radius
        self.outer_radius = outer_radius
        self.m = m
        self.h_trunc = h_trunc
        # Index of r[0] in the full uniform grid the profile was solved on
        self.grid_offset = grid_offset
        self.residual = residual
        self.iterations = iterations
        self.residual_history = list(residual_history or [])

    @property
    def v(self):
        return positive_power(self.u, -2.0 / (self.n - 2))

    def distance(self):
        """Distance of each node to the blow-up boundary"""
        if self.kind == 'shell-maximal':
            return np.minimum(self.r - self.inner_radius, self.outer_radius - self.r)
        if self.kind == 'exterior-barrier':
            return self.r - self.radius
        return self.radius - self.r

    def boundary_mean_curvature(self):
        """H at the nearest boundary sphere, signed with respect to the inward normal"""
        if self.kind == 'shell-maximal':
            near_inner = (self.r - self.inner_radius) < (self.outer_radius - self.r)
            return np.where(near_inner, -1.0 / self.inner_radius, 1.0 / self.outer_radius)
        if self.kind == 'exterior-barrier':
            return np.full(self.r.shape, -1.0 / self.radius)
        return np.full(self.r.shape, 1.0 / self.radius)

    @property
    def w(self):
        d = self.distance()
        with np.errstate(divide='ignore', invalid='ignore'):
            return np.where(d > 0, (self.v - 2.0 * d) / d ** 2, np.nan)

    def evaluate(self, r):
        """Linear interpolation of u inside the solved range"""
        r = np.asarray(r, dtype=float)
        if np.any(r < self.r[0] - 1e-12) or np.any(r > self.r[-1] + 1e-12):
            raise DomainError('radius outside the solved profile range')
        return np.interp(r, self.r, self.u)

    def rows(self):
        return list(zip(self.r.tolist(), self.u.tolist(), self.v.tolist(), self.w.tolist()))

    def to_dict(self):
        return {
            'n': self.n,
            'kind': self.kind,
            'radius': self.radius,
            'inner_radius': self.inner_radius,
            'outer_radius': self.outer_radius,
            'm': 'inf' if math.isinf(self.m) else self.m,
            'h_trunc': self.h_trunc,
            'points': int(self.r.size),
            'residual': self.residual,
            'iterations': self.iterations,
        }


def sphere_barrier_profile(n, r0, r, exterior=False):
    """Closed-form sphere solution sampled on r"""
    r = np.asarray(r, dtype=float)
    if exterior:
        u = [exterior_sphere_barrier(n, r0, x) for x in r]
        return RadialProfile(n=n, r=r, u=u, kind='exterior-barrier', radius=r0)
    u = [interior_sphere_barrier(n, r0, x) for x in r]
    return RadialProfile(n=n, r=r, u=u, kind='maximal-in-ball', radius=r0)


def _equations(v, r, dr, n, lo, hi):
    """Residual and tridiagonal Jacobian of the discrete v-equations on rows lo..hi-1.

    Interior rows discretize v*(v'' + (n-1)/r v') - (n/2)(v'^2 - 4) = 0; the
    r = 0 row uses the even extension, Laplacian 2n(v1 - v0)/dr^2 and v' = 0.
    """
    k = np.arange(lo, hi)
    F = np.empty(k.size)
    lower = np.zeros(k.size)
    diag = np.empty(k.size)
    upper = np.zeros(k.size)

    inner = k > 0
    ki = k[inner]
    vm, vk, vp = v[ki - 1], v[ki], v[ki + 1]
    a = (vp - 2.0 * vk + vm) / dr ** 2
    g = (vp - vm) / (2.0 * dr)
    c = (n - 1) / r[ki]
    F[inner] = vk * (a + c * g) - 0.5 * n * (g * g - 4.0)
    lower[inner] = vk * (1.0 / dr ** 2 - c / (2.0 * dr)) + n * g / (2.0 * dr)
    diag[inner] = a + c * g - 2.0 * vk / dr ** 2
    upper[inner] = vk * (1.0 / dr ** 2 + c / (2.0 * dr)) - n * g / (2.0 * dr)

    if lo == 0:
        F[0] = 2.0 * n * v[0] * (v[1] - v[0]) / dr ** 2 + 2.0 * n
        diag[0] = 2.0 * n * (v[1] - 2.0 * v[0]) / dr ** 2
        upper[0] = 2.0 * n * v[0] / dr ** 2
    return F, lower, diag, upper


def radial_residual(profile):
    """Max norm of the discrete v-equation residual at the profile's free nodes"""
    v = profile.v
    r = profile.r
    dr = r[1] - r[0]
    lo = 0 if profile.kind == 'maximal-in-ball' and r[0] == 0.0 else 1
    F, _, _, _ = _equations(v, r, dr, profile.n, lo, r.size - 1)
    return float(np.max(np.abs(F)))


def rounding_floor(v, dr, n):
    """Smallest residual the discrete v-equation can resolve in double precision"""
    scale = max(1.0, float(np.max(np.abs(v))))
    return 16.0 * n * np.finfo(float).eps * scale ** 2 / dr ** 2


def _newton(v, r, dr, n, lo, hi, tol, max_iterations, max_halvings):
    F, lower, diag, upper = _equations(v, r, dr, n, lo, hi)
    floor = rounding_floor(v, dr, n)
    norm = float(np.max(np.abs(F)))
    history = [norm]
    iteration = 0
    while norm > tol:
        if iteration >= max_iterations:
            raise SolverError(f'radial Newton did not converge, last residual {norm:.3e}', history)
        ab = np.zeros((3, F.size))
        ab[0, 1:] = upper[:-1]
        ab[1, :] = diag
        ab[2, :-1] = lower[1:]
        step = solve_banded((1, 1), ab, -F)

        t = 1.0
        for _ in range(max_halvings):
            trial = v.copy()
            trial[lo:hi] += t * step
            if np.all(trial[lo:hi] > 0):
                Ft, lt, dt, ut = _equations(trial, r, dr, n, lo, hi)
                trial_norm = float(np.max(np.abs(Ft)))
                if trial_norm < norm:
                    break
            t *= 0.5
        else:
            if norm <= floor:
                logger.debug('radial Newton stopped at the rounding floor %.3e (residual %.3e)', floor, norm)
                break
            raise SolverError(
                f'radial Newton stagnated (damping exhausted) at residual {norm:.3e}', history)
        v, F, lower, diag, upper, norm = trial, Ft, lt, dt, ut, trial_norm
        history.append(norm)
        iteration += 1
        logger.debug('radial Newton iteration %d: residual %.3e, damping %.3g', iteration, norm, t)
    return v, history


def solve_radial_maximal(n, geometry, points=512, m=math.inf, h_trunc=None, tol=1e-10,
                         max_iterations=50, max_halvings=30):
    """Radial solution of the boundary blow-up problem on a ball or a shell.

    Finite m imposes u = m on the boundary spheres. m = inf truncates the
    collar d < h_trunc (default 4 grid spacings) and imposes the two-term
    expansion v = 2d - d^2 H there; the kept nodes are a slice of the
    finite-m grid so profiles can be compared node by node.
    """
    if n < 3:
        raise DomainError('n ≥ 3 required')
    if points < 16:
        raise DomainError('radial solve needs at least 16 grid points')
    if m <= 0:
        raise DomainError('boundary value m must be positive')

    if isinstance(geometry, Ball):
        R = geometry.radius
        r = np.linspace(0.0, R, points)
        d = R - r
        H = np.full(points, 1.0 / R)
        guess = (R ** 2 - r ** 2) / R
        kind = 'maximal-in-ball'
    elif isinstance(geometry, Shell):
        a, b = geometry.inner_radius, geometry.outer_radius
        r = np.linspace(a, b, points)
        d_in, d_out = r - a, b - r
        d = np.minimum(d_in, d_out)
        H = np.where(d_in < d_out, -1.0 / a, 1.0 / b)
        guess = 2.0 * d_in * d_out / (b - a)
        kind = 'shell-maximal'
    else:
        raise DomainError('radial solve supports ball and shell geometries only')
    dr = r[1] - r[0]

    if math.isinf(m):
        h = 4.0 * dr if h_trunc is None else float(h_trunc)
        if not 0 < h < geometry.r0:
            raise DomainError(f'h_trunc must lie in (0, r0), got {h}')
        keep = np.nonzero(d >= h - 1e-9 * dr)[0]
        first, last = int(keep[0]), int(keep[-1])
        r, d, H, guess = r[first:last + 1], d[first:last + 1], H[first:last + 1], guess[first:last + 1]
        v = guess.copy()
        v[-1] = 2.0 * d[-1] - d[-1] ** 2 * H[-1]
        if kind == 'shell-maximal':
            v[0] = 2.0 * d[0] - d[0] ** 2 * H[0]
        if np.any(v <= 0):
            raise DomainError('nonpositive truncation data, decrease h_trunc')
        offset = first
    else:
        h = None
        boundary_v = m ** (-2.0 / (n - 2))
        v = guess + boundary_v
        v[-1] = boundary_v
        if kind == 'shell-maximal':
            v[0] = boundary_v
        offset = 0

    lo = 0 if kind == 'maximal-in-ball' else 1
    hi = r.size - 1
    v, history = _newton(v, r, dr, n, lo, hi, tol, max_iterations, max_halvings)

    profile = RadialProfile(
        n=n, r=r, u=positive_power(v, -(n - 2) / 2.0), kind=kind,
        radius=getattr(geometry, 'radius', None),
        inner_radius=getattr(geometry, 'inner_radius', None),
        outer_radius=getattr(geometry, 'outer_radius', None),
        m=m, h_trunc=h, grid_offset=offset, residual=history[-1],
        iterations=len(history) - 1, residual_history=history,
    )
    logger.info('radial %s solve, m=%s: %d iterations, residual %.3e',
                kind, m, profile.iterations, profile.residual)
    return profile


def overlap(first, second):
    """Values of two profiles on their shared grid nodes"""
    lo = max(first.grid_offset, second.grid_offset)
    hi = min(first.grid_offset + first.r.size, second.grid_offset + second.r.size)
    a = first.u[lo - first.grid_offset:hi - first.grid_offset]
    b = second.u[lo - second.grid_offset:hi - second.grid_offset]
    return first.r[lo - first.grid_offset:hi - first.grid_offset], a, b


def solve_radial_ladder(n, geometry, points=512, ladder=(2, 4, 8, 16), include_maximal=True,
                        tol=1e-10):
    """Profiles for an increasing m-ladder, checked to increase pointwise"""
    ladder = list(ladder)
    if any(b <= a for a, b in zip(ladder, ladder[1:])):
        raise DomainError('m_ladder must be strictly increasing')
    values = ladder + ([math.inf] if include_maximal else [])
    profiles = [solve_radial_maximal(n, geometry, points, m=m, tol=tol) for m in values]
    for lower_profile, upper_profile in zip(profiles, profiles[1:]):
        r, a, b = overlap(lower_profile, upper_profile)
        excess = a - b
        worst = int(np.argmax(excess))
        if excess[worst] > MONOTONICITY_TOLERANCE:
            raise InvariantViolation(
                f'profile for m={lower_profile.m} exceeds m={upper_profile.m} '
                f'by {excess[worst]:.3e} at r={r[worst]:.6f}')
    return profiles


def nested_ball_check(n, radii=(0.8, 1.0), points=512):
    """Domain monotonicity of maximal ball profiles: larger ball, smaller solution"""
    radii = sorted(radii)
    profiles = [solve_radial_maximal(n, Ball(R, n=n), points) for R in radii]
    violations = 0
    worst = math.inf
    for small, large in zip(profiles, profiles[1:]):
        mask = small.r <= large.r[-1]
        margin = small.u[mask] - large.evaluate(small.r[mask])
        violations += int(np.sum(margin < -MONOTONICITY_TOLERANCE))
        worst = min(worst, float(margin.min()))
    return {'check': 'nested-balls', 'radii': radii, 'samples': int(sum(p.r.size for p in profiles[:-1])),
            'violations': violations, 'worst_margin': worst}
