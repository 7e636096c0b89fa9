import logging

import numpy as np
from scipy.spatial import cKDTree

from src.errors import ConfigError, DomainError, ProjectionError

logger = logging.getLogger(__name__)

# Residual tolerance of the nearest-point Newton iteration, in length units
PROJECTION_TOLERANCE = 1e-12
BOUNDARY_TOLERANCE = 1e-8
GRADIENT_TOLERANCE = 1e-12


class DistanceData:
    """Distance to the boundary and the boundary quantities seen from a point.

    Fields hold one value per point (arrays of leading length m) when built by
    `distance_data`, or plain scalars/vectors for a single point.
    """

    def __init__(self, d=None, grad_d=None, laplacian_d=None, nearest_point=None,
                 H_at_Q=None, curvatures=None):
        self.d = d
        self.grad_d = grad_d
        self.laplacian_d = laplacian_d
        self.nearest_point = nearest_point
        self.H_at_Q = H_at_Q
        self.curvatures = curvatures

    def __len__(self):
        return int(np.size(self.d))

    def at(self, i):
        """Single-point view"""
        return DistanceData(
            d=float(self.d[i]),
            grad_d=np.array(self.grad_d[i]),
            laplacian_d=float(self.laplacian_d[i]),
            nearest_point=np.array(self.nearest_point[i]),
            H_at_Q=float(self.H_at_Q[i]),
            curvatures=np.array(self.curvatures[i]),
        )

    def subset(self, mask):
        """Rows selected by a boolean mask or index array"""
        return DistanceData(
            d=self.d[mask],
            grad_d=self.grad_d[mask],
            laplacian_d=self.laplacian_d[mask],
            nearest_point=self.nearest_point[mask],
            H_at_Q=self.H_at_Q[mask],
            curvatures=self.curvatures[mask],
        )

    def to_dict(self):
        return {
            'd': np.asarray(self.d).tolist(),
            'grad_d': np.asarray(self.grad_d).tolist(),
            'laplacian_d': np.asarray(self.laplacian_d).tolist(),
            'nearest_point': np.asarray(self.nearest_point).tolist(),
            'H_at_Q': np.asarray(self.H_at_Q).tolist(),
        }


class DomainDescriptor:
    """Implicit domain {phi < 0} with analytic gradient and Hessian of phi"""

    kind = None
    sample_count = 20000

    def __init__(self, n, lower, upper, r0):
        if n < 3:
            raise DomainError('n ≥ 3 required')
        self.n = int(n)
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        self.r0 = float(r0)
        self._tree = None
        self._samples = None

    def phi(self, X):
        raise NotImplementedError

    def grad_phi(self, X):
        raise NotImplementedError

    def hess_phi(self, X):
        raise NotImplementedError

    def unit_sphere_samples(self, count):
        # Deterministic so that repeated runs project identically
        rng = np.random.default_rng(12345)
        s = rng.standard_normal((count, self.n))
        return s / np.linalg.norm(s, axis=1)[:, None]

    def boundary_samples(self):
        raise NotImplementedError

    def closed_form_distance(self, X):
        """Exact signed distance where the shape admits one, else None"""
        return None

    def contains(self, X):
        return self.phi(X) < 0

    def sample_tree(self):
        if self._tree is None:
            self._samples = self.boundary_samples()
            self._tree = cKDTree(self._samples)
        return self._tree, self._samples

    @property
    def extent(self):
        return float(np.max(self.upper - self.lower))

    def to_dict(self):
        return {'kind': self.kind, 'n': self.n, 'r0': self.r0,
                'lower': self.lower.tolist(), 'upper': self.upper.tolist()}

    @classmethod
    def from_dict(cls, data, n=3):
        """Build a built-in domain from its config entry"""
        if not isinstance(data, dict):
            raise ConfigError('domain must be an object')
        kind = data.get('kind')
        if not kind:
            raise ConfigError('domain.kind is required')
        if n is None or int(n) < 3:
            raise ConfigError('n ≥ 3 required')
        n = int(n)
        center = data.get('center')
        if center is not None and len(center) != n:
            raise ConfigError(f'domain.center must have {n} coordinates')

        if kind == 'ball':
            if 'radius' not in data:
                raise ConfigError('domain.radius is required')
            return Ball(data['radius'], center=center, n=n)
        if kind == 'ellipsoid':
            axes = data.get('semi_axes')
            if not axes:
                raise ConfigError('domain.semi_axes is required')
            if len(axes) != n:
                raise ConfigError(f'domain.semi_axes must have {n} entries')
            return Ellipsoid(axes, center=center)
        if kind == 'shell':
            for field in ('inner_radius', 'outer_radius'):
                if field not in data:
                    raise ConfigError(f'domain.{field} is required')
            return Shell(data['inner_radius'], data['outer_radius'], center=center, n=n)
        raise ConfigError(f'domain.kind "{kind}" is not one of ball, ellipsoid, shell')


class Ball(DomainDescriptor):
    kind = 'ball'

    def __init__(self, radius, center=None, n=3):
        if radius <= 0:
            raise DomainError('ball radius must be positive')
        self.radius = float(radius)
        self.center = np.zeros(n) if center is None else np.asarray(center, dtype=float)
        super().__init__(n, self.center - radius, self.center + radius, radius)

    def phi(self, X):
        Z = np.asarray(X, dtype=float) - self.center
        return np.sum(Z * Z, axis=-1) - self.radius ** 2

    def grad_phi(self, X):
        return 2.0 * (np.asarray(X, dtype=float) - self.center)

    def hess_phi(self, X):
        X = np.asarray(X, dtype=float)
        return np.broadcast_to(2.0 * np.eye(self.n), X.shape[:-1] + (self.n, self.n)).copy()

    def boundary_samples(self):
        return self.center + self.radius * self.unit_sphere_samples(self.sample_count)

    def closed_form_distance(self, X):
        return self.radius - np.linalg.norm(np.asarray(X, dtype=float) - self.center, axis=-1)

    def to_dict(self):
        data = super().to_dict()
        data.update({'center': self.center.tolist(), 'radius': self.radius})
        return data


class Ellipsoid(DomainDescriptor):
    kind = 'ellipsoid'

    def __init__(self, semi_axes, center=None):
        axes = np.asarray(semi_axes, dtype=float)
        if np.any(axes <= 0):
            raise DomainError('ellipsoid semi-axes must be positive')
        self.semi_axes = axes
        n = axes.size
        self.center = np.zeros(n) if center is None else np.asarray(center, dtype=float)
        # Smallest radius of curvature of the surface
        r0 = axes.min() ** 2 / axes.max()
        super().__init__(n, self.center - axes, self.center + axes, r0)

    def phi(self, X):
        Z = (np.asarray(X, dtype=float) - self.center) / self.semi_axes
        return np.sum(Z * Z, axis=-1) - 1.0

    def grad_phi(self, X):
        return 2.0 * (np.asarray(X, dtype=float) - self.center) / self.semi_axes ** 2

    def hess_phi(self, X):
        X = np.asarray(X, dtype=float)
        hess = np.diag(2.0 / self.semi_axes ** 2)
        return np.broadcast_to(hess, X.shape[:-1] + (self.n, self.n)).copy()

    def boundary_samples(self):
        return self.center + self.semi_axes * self.unit_sphere_samples(self.sample_count)

    def to_dict(self):
        data = super().to_dict()
        data.update({'center': self.center.tolist(), 'semi_axes': self.semi_axes.tolist()})
        return data


class Shell(DomainDescriptor):
    kind = 'shell'

    def __init__(self, inner_radius, outer_radius, center=None, n=3):
        if not 0 < inner_radius < outer_radius:
            raise DomainError('shell radii must satisfy 0 < inner < outer')
        self.inner_radius = float(inner_radius)
        self.outer_radius = float(outer_radius)
        self.center = np.zeros(n) if center is None else np.asarray(center, dtype=float)
        r0 = min(self.inner_radius, (self.outer_radius - self.inner_radius) / 2.0)
        super().__init__(n, self.center - outer_radius, self.center + outer_radius, r0)

    def phi(self, X):
        Z = np.asarray(X, dtype=float) - self.center
        s = np.sum(Z * Z, axis=-1)
        return (s - self.inner_radius ** 2) * (s - self.outer_radius ** 2)

    def grad_phi(self, X):
        Z = np.asarray(X, dtype=float) - self.center
        s = np.sum(Z * Z, axis=-1)
        return 2.0 * Z * (2.0 * s - self.inner_radius ** 2 - self.outer_radius ** 2)[..., None]

    def hess_phi(self, X):
        Z = np.asarray(X, dtype=float) - self.center
        s = np.sum(Z * Z, axis=-1)
        scale = 2.0 * (2.0 * s - self.inner_radius ** 2 - self.outer_radius ** 2)
        return scale[..., None, None] * np.eye(self.n) + 8.0 * Z[..., :, None] * Z[..., None, :]

    def boundary_samples(self):
        ratio = (self.inner_radius / self.outer_radius) ** (self.n - 1)
        inner_count = max(int(self.sample_count * ratio / (1.0 + ratio)), 1000)
        outer = self.outer_radius * self.unit_sphere_samples(self.sample_count)
        inner = self.inner_radius * self.unit_sphere_samples(inner_count)
        return self.center + np.vstack([outer, inner])

    def closed_form_distance(self, X):
        r = np.linalg.norm(np.asarray(X, dtype=float) - self.center, axis=-1)
        return np.minimum(r - self.inner_radius, self.outer_radius - r)

    def to_dict(self):
        data = super().to_dict()
        data.update({'center': self.center.tolist(), 'inner_radius': self.inner_radius,
                     'outer_radius': self.outer_radius})
        return data


def tangent_bases(normals):
    """Orthonormal bases of the planes orthogonal to unit normals, shape (m, n, n-1).

    Householder reflection taking e_n to -s*N; its first n-1 columns span N's
    orthogonal complement.
    """
    m, n = normals.shape
    s = np.where(normals[:, -1] >= 0, 1.0, -1.0)
    v = normals.copy()
    v[:, -1] += s
    reflector = np.eye(n) - 2.0 * v[:, :, None] * v[:, None, :] / np.sum(v * v, axis=1)[:, None, None]
    return reflector[:, :, :n - 1]


def principal_curvatures(dom, Q):
    """Principal curvatures at boundary points Q, sorted ascending.

    Sign convention: positive where the domain is convex (unit sphere gives +1).
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    g = dom.grad_phi(Q)
    gnorm = np.linalg.norm(g, axis=1)
    if np.any(gnorm < GRADIENT_TOLERANCE):
        raise DomainError('degenerate level-set gradient at boundary point')
    normals = g / gnorm[:, None]
    B = tangent_bases(normals)
    K = np.einsum('mia,mij,mjb->mab', B, dom.hess_phi(Q), B) / gnorm[:, None, None]
    return np.linalg.eigvalsh(K)


def boundary_mean_curvature(dom, q):
    """Mean curvature of the boundary at q (unit sphere has H = +1)"""
    q = np.asarray(q, dtype=float)
    g = dom.grad_phi(q)
    gnorm = float(np.linalg.norm(g))
    if gnorm < GRADIENT_TOLERANCE:
        raise DomainError('degenerate level-set gradient at boundary point')
    if abs(float(dom.phi(q))) / gnorm > BOUNDARY_TOLERANCE:
        raise DomainError(f'point {q.tolist()} is not on the boundary')
    return float(np.mean(principal_curvatures(dom, q[None, :])[0]))


def _projection_residual(dom, X, Q, lam):
    g = dom.grad_phi(Q)
    F = np.empty((X.shape[0], dom.n + 1))
    F[:, :dom.n] = Q - X + lam[:, None] * g
    F[:, dom.n] = dom.phi(Q)
    gnorm = np.linalg.norm(g, axis=1)
    size = np.maximum(np.abs(F[:, :dom.n]).max(axis=1), np.abs(F[:, dom.n]) / np.maximum(gnorm, GRADIENT_TOLERANCE))
    return F, g, size


def project_to_boundary(dom, X, tol=PROJECTION_TOLERANCE, max_iterations=50, max_halvings=30):
    """Nearest boundary points of X by damped Newton on the Lagrange system

        Q - X + lam * grad phi(Q) = 0,   phi(Q) = 0,

    seeded from the closest boundary sample and a few projection steps on phi.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    tree, samples = dom.sample_tree()
    _, idx = tree.query(X)
    Q = samples[idx].copy()
    for _ in range(3):
        g = dom.grad_phi(Q)
        Q = Q - (dom.phi(Q) / np.sum(g * g, axis=1))[:, None] * g
    g = dom.grad_phi(Q)
    lam = np.sum((X - Q) * g, axis=1) / np.sum(g * g, axis=1)

    scale = tol * max(1.0, dom.extent)
    F, g, size = _projection_residual(dom, X, Q, lam)
    n = dom.n
    for iteration in range(max_iterations):
        active = np.nonzero(size > scale)[0]
        if active.size == 0:
            break
        Xa, Qa, la = X[active], Q[active], lam[active]
        J = np.zeros((active.size, n + 1, n + 1))
        J[:, :n, :n] = np.eye(n) + la[:, None, None] * dom.hess_phi(Qa)
        J[:, :n, n] = g[active]
        J[:, n, :n] = g[active]
        rhs = -F[active]
        try:
            step = np.linalg.solve(J, rhs[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError:
            step = np.einsum('mij,mj->mi', np.linalg.pinv(J), rhs)

        t = np.ones(active.size)
        old = size[active]
        accepted = np.zeros(active.size, dtype=bool)
        for _ in range(max_halvings):
            pending = ~accepted
            if not pending.any():
                break
            Qt = Qa + t[:, None] * step[:, :n]
            lt = la + t * step[:, n]
            Ft, gt, st = _projection_residual(dom, Xa, Qt, lt)
            better = pending & (st < old)
            Qa[better], la[better] = Qt[better], lt[better]
            accepted |= better
            t[pending & ~better] *= 0.5
        Q[active], lam[active] = Qa, la
        F, g, size = _projection_residual(dom, X, Q, lam)
        logger.debug('projection iteration %d: %d active, max residual %.3e',
                     iteration, active.size, float(size.max()))

    failed = np.nonzero(size > scale)[0]
    if failed.size:
        i = failed[0]
        raise ProjectionError(
            f'nearest-point projection did not converge for {failed.size} point(s); '
            f'first at {X[i].tolist()} with residual {size[i]:.3e}',
            last_iterate=Q[i].copy(), residual=float(size[i]),
        )
    return Q


def distance_data(dom, X):
    """DistanceData for a batch of points X of shape (m, n).

    d is signed: positive inside the domain, negative outside. grad_d is the
    inward unit normal at the nearest point. laplacian_d is NaN on the focal
    set where some 1 - d*kappa_i <= 0.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != dom.n:
        raise DomainError(f'points must have {dom.n} coordinates')
    Q = project_to_boundary(dom, X)
    d = np.linalg.norm(X - Q, axis=1)
    d = np.where(dom.phi(X) > 0, -d, d)
    g = dom.grad_phi(Q)
    grad_d = -g / np.linalg.norm(g, axis=1)[:, None]
    kappa = principal_curvatures(dom, Q)
    denom = 1.0 - d[:, None] * kappa
    with np.errstate(divide='ignore', invalid='ignore'):
        laplacian = -np.sum(kappa / denom, axis=1)
    laplacian = np.where(np.all(denom > 1e-12, axis=1), laplacian, np.nan)
    return DistanceData(d=d, grad_d=grad_d, laplacian_d=laplacian, nearest_point=Q,
                        H_at_Q=kappa.mean(axis=1), curvatures=kappa)


def signed_distance(dom, x):
    """DistanceData at a single point"""
    x = np.asarray(x, dtype=float)
    if np.any(x < dom.lower - 1e-12) or np.any(x > dom.upper + 1e-12):
        raise DomainError(f'point {x.tolist()} is outside the bounding box')
    return distance_data(dom, x[None, :]).at(0)
