import logging
import math

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import LinearOperator, bicgstab, cg, spilu

from src.errors import ConfigError, DomainError, InvariantViolation, SolverError
from src.models.domain import DistanceData, distance_data
from src.models.radial import positive_power

logger = logging.getLogger(__name__)

EXTERIOR = 0
NEAR = 1
DEEP = 2


class SolverConfig:
    MODES = ('newton', 'monotone-sequence')
    ORDERS = ('one-term', 'two-term')
    FORMULATIONS = ('v-form', 'u-form')

    def __init__(self, h_trunc=None, mode='newton', tolerance=1e-8, max_iterations=50,
                 damping='halving', max_halvings=30, order='two-term',
                 m_ladder=(2, 4, 8, 16), formulation='v-form', krylov_rtol=1e-6,
                 krylov_max_iterations=None):
        self.h_trunc = h_trunc
        self.mode = mode
        self.tolerance = tolerance
        self.max_iterations = max_iterations
        self.damping = damping
        self.max_halvings = max_halvings
        self.order = order
        self.m_ladder = list(m_ladder)
        self.formulation = formulation
        self.krylov_rtol = krylov_rtol
        self.krylov_max_iterations = krylov_max_iterations
        self.validate()

    def validate(self, grid=None):
        if self.mode not in self.MODES:
            raise ConfigError(f'solver.mode must be one of {", ".join(self.MODES)}')
        if self.order not in self.ORDERS:
            raise ConfigError(f'solver.order must be one of {", ".join(self.ORDERS)}')
        if self.formulation not in self.FORMULATIONS:
            raise ConfigError(f'solver.formulation must be one of {", ".join(self.FORMULATIONS)}')
        if self.damping != 'halving':
            raise ConfigError('solver.damping must be "halving"')
        if self.tolerance <= 0:
            raise ConfigError('solver.tolerance must be positive')
        if any(b <= a for a, b in zip(self.m_ladder, self.m_ladder[1:])):
            raise ConfigError('solver.m_ladder must be strictly increasing')
        if any(m <= 0 for m in self.m_ladder):
            raise ConfigError('solver.m_ladder values must be positive')
        if grid is not None and self.h_trunc is not None and self.h_trunc < 2.0 * grid.h_grid - 1e-12:
            raise ConfigError(f'h_trunc={self.h_trunc} is below 2·h_grid={2.0 * grid.h_grid}')

    def to_dict(self):
        return {
            'h_trunc': self.h_trunc,
            'mode': self.mode,
            'tolerance': self.tolerance,
            'max_iterations': self.max_iterations,
            'damping': self.damping,
            'max_halvings': self.max_halvings,
            'order': self.order,
            'm_ladder': self.m_ladder,
            'formulation': self.formulation,
            'krylov_rtol': self.krylov_rtol,
        }


def _shift(mask, axis, step):
    """mask moved by one node along axis, padded with False"""
    out = np.zeros_like(mask)
    src = [slice(None)] * mask.ndim
    dst = [slice(None)] * mask.ndim
    if step > 0:
        src[axis], dst[axis] = slice(None, -1), slice(1, None)
    else:
        src[axis], dst[axis] = slice(1, None), slice(None, -1)
    out[tuple(dst)] = mask[tuple(src)]
    return out


class MaskedGrid:
    """Uniform box lattice restricted to the truncated domain {d > h_trunc} and its layer.

    Active nodes are indexed 0..size-1 in row-major order. `neighbors[i, a, 0]`
    and `neighbors[i, a, 1]` are the active indices of the -/+ neighbours along
    axis a, or -1.
    """

    def __init__(self, dom, axes, h_trunc, status, active, distance):
        self.dom = dom
        self.n = dom.n
        self.axes = axes
        self.shape = tuple(len(a) for a in axes)
        self.spacing = np.array([a[1] - a[0] for a in axes])
        self.origin = np.array([a[0] for a in axes])
        self.h_trunc = float(h_trunc)
        self.status = status
        self.active = active
        self.distance = distance

        self.index_map = np.full(status.size, -1, dtype=np.int64)
        self.index_map[active] = np.arange(active.size)
        multi = np.array(np.unravel_index(active, self.shape)).T
        self.points = self.origin + multi * self.spacing
        self.neighbors = np.full((active.size, self.n, 2), -1, dtype=np.int64)
        for a in range(self.n):
            for side, step in ((0, -1), (1, 1)):
                nb = multi.copy()
                nb[:, a] += step
                ok = (nb[:, a] >= 0) & (nb[:, a] < self.shape[a])
                flat = np.ravel_multi_index(nb[ok].T, self.shape)
                self.neighbors[ok, a, side] = self.index_map[flat]

        flags = status.ravel()[active]
        self.deep = flags == DEEP
        self.near = flags == NEAR
        self.deep_index = np.nonzero(self.deep)[0]
        self.near_index = np.nonzero(self.near)[0]

    @property
    def h_grid(self):
        return float(self.spacing.max())

    @property
    def size(self):
        return int(self.active.size)

    def full_stencil(self):
        """Active nodes whose 2n neighbours are all active"""
        return np.all(self.neighbors >= 0, axis=(1, 2))

    def node_index(self, point):
        """Active index of the lattice node at point"""
        point = np.asarray(point, dtype=float)
        k = np.rint((point - self.origin) / self.spacing).astype(int)
        if np.any(np.abs(self.origin + k * self.spacing - point) > 1e-9 * self.spacing):
            raise DomainError(f'{point.tolist()} is not a lattice node')
        if np.any(k < 0) or np.any(k >= np.array(self.shape)):
            raise DomainError(f'{point.tolist()} is outside the lattice')
        i = self.index_map[np.ravel_multi_index(tuple(k), self.shape)]
        if i < 0:
            raise DomainError(f'{point.tolist()} is not an active node')
        return int(i)

    def counts(self):
        return {'deep': int(self.deep.sum()), 'near': int(self.near.sum()),
                'exterior': int(self.status.size - self.size)}

    def to_dict(self):
        return {
            'n': self.n,
            'shape': list(self.shape),
            'spacing': self.spacing.tolist(),
            'origin': self.origin.tolist(),
            'h_grid': self.h_grid,
            'h_trunc': self.h_trunc,
            **self.counts(),
        }


def build_masked_grid(dom, resolution, h_trunc):
    """Classify the lattice nodes of the domain box and cache their distance data"""
    if resolution < 17:
        raise DomainError('resolution ≥ 17 required')
    if dom.n > 4:
        raise DomainError('full-grid solves support n ≤ 4')
    if not 0 < h_trunc < dom.r0:
        raise DomainError(f'h_trunc must lie in (0, r0={dom.r0}), got {h_trunc}')
    if h_trunc > dom.r0 / 4.0:
        logger.warning('h_trunc=%g exceeds r0/4=%g; truncation data lose accuracy', h_trunc, dom.r0 / 4.0)

    axes = [np.linspace(lo, hi, resolution) for lo, hi in zip(dom.lower, dom.upper)]
    spacing = max(a[1] - a[0] for a in axes)
    if h_trunc < spacing:
        raise DomainError(f'h_trunc={h_trunc} is below the lattice spacing {spacing}')
    mesh = np.meshgrid(*axes, indexing='ij')
    X = np.stack([m.ravel() for m in mesh], axis=1)
    shape = mesh[0].shape

    inside_idx = np.nonzero(dom.contains(X))[0]
    if inside_idx.size == 0:
        raise DomainError('domain unresolved at this resolution')
    dd = distance_data(dom, X[inside_idx])

    deep = np.zeros(X.shape[0], dtype=bool)
    deep[inside_idx[dd.d > h_trunc]] = True
    deep = deep.reshape(shape)
    if not deep.any():
        raise DomainError('domain unresolved at this resolution')
    touches_deep = np.zeros(shape, dtype=bool)
    for a in range(dom.n):
        touches_deep |= _shift(deep, a, 1) | _shift(deep, a, -1)
    inside = np.zeros(X.shape[0], dtype=bool)
    inside[inside_idx] = True
    near = inside.reshape(shape) & ~deep & touches_deep

    status = np.full(shape, EXTERIOR, dtype=np.int8)
    status[near] = NEAR
    status[deep] = DEEP
    active = np.nonzero(status.ravel() != EXTERIOR)[0]
    keep = np.isin(inside_idx, active, assume_unique=True)

    grid = MaskedGrid(dom, axes, h_trunc, status, active, dd.subset(keep))
    if np.any(grid.neighbors[grid.deep_index] < 0):
        raise DomainError('deep node with a missing stencil neighbour; increase h_trunc')
    logger.info('masked grid %s: %d deep, %d near-layer nodes', 'x'.join(map(str, shape)),
                grid.deep.sum(), grid.near.sum())
    return grid


class ScalarField:
    TAGS = ('u', 'v', 'w', 'residual', 'gradient')

    def __init__(self, grid=None, values=None, tag='u', iterations=0, residual_history=None,
                 sequence=None, meta=None):
        self.grid = grid
        self.values = np.asarray(values, dtype=float)
        self.tag = tag
        self.iterations = iterations
        self.residual_history = list(residual_history or [])
        self.sequence = list(sequence or [])
        self.meta = dict(meta or {})

    @classmethod
    def from_function(cls, grid, func, tag='u'):
        """Field sampled from func(points, distance_data)"""
        return cls(grid=grid, values=func(grid.points, grid.distance), tag=tag)

    def at(self, point):
        return float(self.values[self.grid.node_index(point)])

    def full(self):
        """Values on the whole lattice, NaN at exterior nodes"""
        out = np.full(self.grid.status.size, np.nan)
        out[self.grid.active] = self.values
        return out.reshape(self.grid.shape)

    def to_dict(self):
        return {
            'tag': self.tag,
            'nodes': self.grid.size,
            'min': float(np.nanmin(self.values)),
            'max': float(np.nanmax(self.values)),
            'iterations': self.iterations,
            'residual': self.residual_history[-1] if self.residual_history else None,
        }


def asymptotic_v_data(dd, order='two-term'):
    """Hyperbolic-radius data 2d - d^2 H, or 2d for the one-term order"""
    d = np.asarray(dd.d, dtype=float)
    if np.any(d <= 0):
        raise DomainError('asymptotic data need d > 0')
    if order == 'two-term':
        base = 2.0 * d - d ** 2 * np.asarray(dd.H_at_Q, dtype=float)
    elif order == 'one-term':
        base = 2.0 * d
    else:
        raise ConfigError(f'unknown expansion order "{order}"')
    if np.any(base <= 0):
        raise DomainError('nonpositive v0 = 2d - d²H in truncation data; use a smaller h_trunc')
    return base


def asymptotic_dirichlet_data(dd, n, order='two-term'):
    """Blow-up data (2d - d^2 H)^{1-n/2}, or (2d)^{1-n/2} for the one-term order"""
    values = positive_power(asymptotic_v_data(dd, order), 1.0 - n / 2.0)
    return float(values) if values.ndim == 0 else values


def laplacian(grid, U, rows=None):
    """Second-order (2n+1)-point Laplacian of the active vector U at the given rows"""
    rows = grid.deep_index if rows is None else rows
    nb = grid.neighbors[rows]
    out = np.zeros(rows.size)
    for a in range(grid.n):
        out += (U[nb[:, a, 1]] - 2.0 * U[rows] + U[nb[:, a, 0]]) / grid.spacing[a] ** 2
    return out


def central_gradient(grid, U, rows):
    nb = grid.neighbors[rows]
    return np.stack([(U[nb[:, a, 1]] - U[nb[:, a, 0]]) / (2.0 * grid.spacing[a])
                     for a in range(grid.n)], axis=1)


def ln_residual(grid, U):
    """-Δu + n(n-2) u^{(n+2)/(n-2)} at deep nodes"""
    n = grid.n
    return -laplacian(grid, U) + n * (n - 2) * positive_power(U[grid.deep_index], (n + 2.0) / (n - 2.0))


def v_residual(grid, V):
    """v Δv - (n/2)(|∇v|^2 - 4) at deep nodes"""
    rows = grid.deep_index
    g = central_gradient(grid, V, rows)
    return V[rows] * laplacian(grid, V, rows) - 0.5 * grid.n * (np.sum(g * g, axis=1) - 4.0)


def _ln_step(grid, U, F, cfg, label):
    """Newton step of the u-form: CG on -Δ + n(n+2)u^{4/(n-2)}, Jacobi preconditioned"""
    n = grid.n
    deep = grid.deep_index
    coeff = n * (n + 2) * positive_power(U[deep], 4.0 / (n - 2))

    def matvec(x):
        Z = np.zeros(U.size)
        Z[deep] = x
        return -laplacian(grid, Z) + coeff * x

    diag = float(np.sum(2.0 / grid.spacing ** 2)) + coeff
    A = LinearOperator((deep.size, deep.size), matvec=matvec, dtype=float)
    M = LinearOperator((deep.size, deep.size), matvec=lambda x: x / diag, dtype=float)
    step, info = cg(A, -F, rtol=cfg.krylov_rtol, atol=0.0, maxiter=cfg.krylov_max_iterations, M=M)
    return step, info


def v_jacobian(grid, V):
    """Sparse Jacobian of v_residual with respect to the deep values"""
    n = grid.n
    rows = grid.deep_index
    position = np.full(grid.size, -1, dtype=np.int64)
    position[rows] = np.arange(rows.size)
    g = central_gradient(grid, V, rows)
    own = np.arange(rows.size)

    I, J = [own], [own]
    values = [laplacian(grid, V, rows) - V[rows] * float(np.sum(2.0 / grid.spacing ** 2))]
    for a in range(n):
        h = grid.spacing[a]
        for side, sign in ((0, -1.0), (1, 1.0)):
            col = position[grid.neighbors[rows, a, side]]
            # Layer neighbours carry Dirichlet data
            keep = col >= 0
            I.append(own[keep])
            J.append(col[keep])
            values.append((V[rows] / h ** 2 - sign * n * g[:, a] / (2.0 * h))[keep])
    return coo_matrix((np.concatenate(values), (np.concatenate(I), np.concatenate(J))),
                      shape=(rows.size, rows.size)).tocsc()


def _v_step(grid, V, F, cfg, label):
    """Newton step of the v-form: BiCGSTAB on the sparse Jacobian with an incomplete LU preconditioner"""
    A = v_jacobian(grid, V)
    ilu = spilu(A, drop_tol=1e-5, fill_factor=10.0)
    M = LinearOperator(A.shape, matvec=ilu.solve, dtype=float)
    return bicgstab(A, -F, rtol=cfg.krylov_rtol, atol=0.0, maxiter=cfg.krylov_max_iterations, M=M)


FORMULATIONS = {
    'u-form': (ln_residual, _ln_step),
    'v-form': (v_residual, _v_step),
}


def _newton(grid, X, cfg, label=''):
    residual, linear_step = FORMULATIONS[cfg.formulation]
    deep = grid.deep_index
    F = residual(grid, X)
    norm = float(np.max(np.abs(F)))
    history = [norm]
    iteration = 0
    while norm > cfg.tolerance:
        if iteration >= cfg.max_iterations:
            raise SolverError(f'Newton did not converge{label}: residual {norm:.3e} after '
                              f'{iteration} iterations', history)
        step, info = linear_step(grid, X, F, cfg, label)
        if info < 0:
            raise SolverError(f'Krylov breakdown in the Newton step{label}', history)
        if info > 0:
            logger.warning('Krylov solve stopped at %d iterations before rtol=%g%s',
                           info, cfg.krylov_rtol, label)

        t = 1.0
        for _ in range(cfg.max_halvings):
            trial = X.copy()
            trial[deep] += t * step
            if np.all(trial[deep] > 0):
                Ft = residual(grid, trial)
                trial_norm = float(np.max(np.abs(Ft)))
                if trial_norm < norm:
                    break
            t *= 0.5
        else:
            raise SolverError(f'positivity loss or stagnation after damping exhausted{label}: '
                              f'residual {norm:.3e}', history)
        X, F, norm = trial, Ft, trial_norm
        history.append(norm)
        iteration += 1
        logger.debug('Newton iteration %d%s: residual %.3e, damping %.3g', iteration, label, norm, t)
    return X, history


def initial_guess(dom, grid, order='two-term'):
    """Expansion data extended inward, frozen beyond d = r0/2"""
    dd = grid.distance
    capped = DistanceData(d=np.minimum(dd.d, dom.r0 / 2.0), H_at_Q=dd.H_at_Q)
    return asymptotic_dirichlet_data(capped, grid.n, order)


def solve_truncated(dom, grid, cfg):
    """Dirichlet problem for the LN equation on {d > h_trunc} with asymptotic layer data.

    The v-form iterates on v = u^{-2/(n-2)} and the u-form on u itself; the
    returned field is u in both cases.
    """
    cfg.validate(grid)
    n = grid.n
    near = grid.near_index
    data = asymptotic_dirichlet_data(grid.distance.subset(near), n, cfg.order)
    U = initial_guess(dom, grid, cfg.order)
    # Newton unknown is u ** power
    power = -2.0 / (n - 2) if cfg.formulation == 'v-form' else 1.0

    sequence = []
    if cfg.mode == 'monotone-sequence':
        U = np.minimum(U, cfg.m_ladder[0])
        previous = None
        for m in cfg.m_ladder:
            U[near] = np.minimum(m, data)
            X, history = _newton(grid, U ** power, cfg, label=f' (m={m})')
            U = X ** (1.0 / power)
            field = ScalarField(grid=grid, values=U.copy(), tag='u', iterations=len(history) - 1,
                                residual_history=history, meta={'m': m})
            _check_maximum_principle(field, cfg)
            if previous is not None:
                _check_increasing(previous, field, cfg)
            sequence.append(field)
            previous = field

    U[near] = data
    X, history = _newton(grid, U ** power, cfg)
    result = ScalarField(grid=grid, values=X ** (1.0 / power), tag='u', iterations=len(history) - 1,
                         residual_history=history, sequence=sequence,
                         meta={'mode': cfg.mode, 'order': cfg.order, 'formulation': cfg.formulation})
    for field in sequence:
        _check_increasing(field, result, cfg)
    result.meta['max_principle_margin'] = _check_maximum_principle(result, cfg)
    logger.info('truncated %s solve: %d Newton iterations, residual %.3e',
                cfg.formulation, result.iterations, history[-1])
    return result


def _check_increasing(lower, upper, cfg):
    excess = lower.values - upper.values
    worst = int(np.argmax(excess))
    if excess[worst] > 10.0 * cfg.tolerance:
        raise InvariantViolation(
            f'monotone sequence decreased by {excess[worst]:.3e} at node '
            f'{lower.grid.points[worst].tolist()} (m={lower.meta.get("m")})')


def _check_maximum_principle(field, cfg):
    """u is subharmonic, so no deep node may exceed the layer data maximum"""
    grid = field.grid
    margin = float(field.values[grid.near_index].max() - field.values[grid.deep_index].max())
    if margin < -10.0 * cfg.tolerance:
        raise InvariantViolation(f'interior maximum exceeds layer data by {-margin:.3e}')
    return margin


def hyperbolic_radius(u_field):
    """v = u^{-2/(n-2)}"""
    if np.any(u_field.values <= 0):
        raise DomainError('hyperbolic radius needs u > 0')
    n = u_field.grid.n
    return ScalarField(grid=u_field.grid, values=u_field.values ** (-2.0 / (n - 2)), tag='v')


def renormalized_w(v_field):
    """w = (v - 2d)/d^2"""
    d = v_field.grid.distance.d
    if np.any(d <= 0):
        raise DomainError('renormalized w needs d > 0')
    return ScalarField(grid=v_field.grid, values=(v_field.values - 2.0 * d) / d ** 2, tag='w')


def expansion_defect(v_field):
    """|v - 2d + d^2 H(Q)| at every active node"""
    dd = v_field.grid.distance
    return np.abs(v_field.values - 2.0 * dd.d + dd.d ** 2 * dd.H_at_Q)


def gradient_vectors(field):
    """Per-node gradient: central differences, one-sided three-point where a neighbour is missing.

    Components with neither stencil stay NaN.
    """
    grid = field.grid
    U = field.values
    out = np.full((grid.size, grid.n), np.nan)
    for a in range(grid.n):
        h = grid.spacing[a]
        minus = grid.neighbors[:, a, 0]
        plus = grid.neighbors[:, a, 1]
        both = (minus >= 0) & (plus >= 0)
        out[both, a] = (U[plus[both]] - U[minus[both]]) / (2.0 * h)
        for side, sign in ((1, 1.0), (0, -1.0)):
            first = grid.neighbors[:, a, side]
            ok = ~both & np.isnan(out[:, a]) & (first >= 0)
            second = np.full(grid.size, -1)
            second[ok] = grid.neighbors[first[ok], a, side]
            three = ok & (second >= 0)
            out[three, a] = sign * (-3.0 * U[three] + 4.0 * U[first[three]] - U[second[three]]) / (2.0 * h)
    return out


def gradient_norm(field):
    return ScalarField(grid=field.grid, values=np.linalg.norm(gradient_vectors(field), axis=1),
                       tag='gradient')


def v_equation_residual(v_field):
    """v Δv - (n/2)(|∇v|^2 - 4) at deep nodes; zero for exact quadratic v"""
    grid = v_field.grid
    values = np.full(grid.size, np.nan)
    values[grid.deep_index] = v_residual(grid, v_field.values)
    return ScalarField(grid=grid, values=values, tag='residual')


def _hessians(grid, U, rows):
    nb = grid.neighbors
    H = np.empty((rows.size, grid.n, grid.n))
    for a in range(grid.n):
        H[:, a, a] = (U[nb[rows, a, 1]] - 2.0 * U[rows] + U[nb[rows, a, 0]]) / grid.spacing[a] ** 2
        for b in range(a + 1, grid.n):
            pp = nb[nb[rows, a, 1], b, 1]
            pm = nb[nb[rows, a, 1], b, 0]
            mp = nb[nb[rows, a, 0], b, 1]
            mm = nb[nb[rows, a, 0], b, 0]
            mixed = (U[pp] - U[pm] - U[mp] + U[mm]) / (4.0 * grid.spacing[a] * grid.spacing[b])
            H[:, a, b] = H[:, b, a] = mixed
    return H


def hyperbolic_critical_points(v_field, degenerate_ratio=0.05):
    """Critical points of the local quadratic model of v at deep nodes.

    A node contributes when the model's stationary point lies inside its half
    cell. Labels: max, min, saddle, or degenerate when an eigenvalue of the
    discrete Hessian is small against the largest one.
    """
    grid = v_field.grid
    V = v_field.values
    rows = grid.deep_index
    # Mixed differences need the diagonal neighbours as well
    nb = grid.neighbors
    ok = np.ones(rows.size, dtype=bool)
    for a in range(grid.n):
        for side in (0, 1):
            first = nb[rows, a, side]
            ok &= first >= 0
            ok[ok] &= np.all(nb[first[ok]] >= 0, axis=(1, 2))
    rows = rows[ok]
    if rows.size == 0:
        return []

    g = central_gradient(grid, V, rows)
    H = _hessians(grid, V, rows)
    step = -np.einsum('mij,mj->mi', np.linalg.pinv(H), g)
    inside = np.all(np.abs(step) <= 0.5 * grid.spacing + 1e-15, axis=1)

    found = []
    for i in np.nonzero(inside)[0]:
        eig = np.linalg.eigvalsh(H[i])
        scale = np.max(np.abs(eig))
        if scale == 0 or np.min(np.abs(eig)) < degenerate_ratio * scale:
            label = 'degenerate'
        elif np.all(eig < 0):
            label = 'max'
        elif np.all(eig > 0):
            label = 'min'
        else:
            label = 'saddle'
        s = step[i]
        value = V[rows[i]] + g[i] @ s + 0.5 * s @ H[i] @ s
        found.append({'point': (grid.points[rows[i]] + s).tolist(), 'value': float(value), 'label': label})
    found.sort(key=lambda c: (-c['value'], c['point']))
    return found


def observed_order(error_coarse, error_fine, h_coarse, h_fine):
    if error_coarse <= 0 or error_fine <= 0:
        return math.nan
    return math.log(error_coarse / error_fine) / math.log(h_coarse / h_fine)
