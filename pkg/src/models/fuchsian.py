import logging

import numpy as np

from src.errors import DomainError
from src.models.grid import ScalarField, central_gradient, laplacian

logger = logging.getLogger(__name__)


class FuchsianOperatorContext:
    """Degenerate operators on the collar {0 < d < delta} of a masked grid.

    Operators are evaluated at active nodes with d < delta whose full stencil is
    active; all other nodes are skipped and come back as NaN.
    """

    def __init__(self, grid, alpha=0.5, delta=None):
        if not 0 < alpha < 1:
            raise DomainError('alpha must lie in (0, 1)')
        r0 = grid.dom.r0
        delta = r0 / 2.0 if delta is None else float(delta)
        if not 0 < delta < r0:
            raise DomainError(f'delta must lie in (0, r0={r0}), got {delta}')
        self.grid = grid
        self.n = grid.n
        self.alpha = alpha
        self.delta = delta
        self.dd = grid.distance

    def rows(self, lower=0.0):
        """Evaluated nodes: full stencil and lower < d < delta"""
        d = self.dd.d
        return np.nonzero(self.grid.full_stencil() & (d > lower) & (d < self.delta))[0]

    def skipped(self):
        d = self.dd.d
        return int(np.sum((d < self.delta) & ~self.grid.full_stencil()))

    def _field(self, rows, values, tag='residual'):
        out = np.full(self.grid.size, np.nan)
        out[rows] = values
        return ScalarField(grid=self.grid, values=out, tag=tag, meta={'skipped': self.skipped()})


def _values(field):
    return field.values if isinstance(field, ScalarField) else np.asarray(field, dtype=float)


def _face_laplacian(grid, U, rows, weight):
    """div(weight ∇U) with weight averaged onto the cell faces"""
    nb = grid.neighbors[rows]
    out = np.zeros(rows.size)
    for a in range(grid.n):
        h2 = grid.spacing[a] ** 2
        plus, minus = nb[:, a, 1], nb[:, a, 0]
        w_plus = 0.5 * (weight[rows] + weight[plus])
        w_minus = 0.5 * (weight[rows] + weight[minus])
        out += (w_plus * (U[plus] - U[rows]) - w_minus * (U[rows] - U[minus])) / h2
    return out


def apply_L(ctx, w, form='nondivergence', rows=None):
    """L w = d^2 Δw + (4-n) d ∇d·∇w + (2-2n) w.

    form="divergence" evaluates the same operator as
    div(d^2 ∇w) + (2-n) d ∇d·∇w + (2-2n) w.
    """
    grid = ctx.grid
    n = ctx.n
    W = _values(w)
    rows = ctx.rows() if rows is None else rows
    d = ctx.dd.d
    dr = d[rows]
    drift = np.sum(ctx.dd.grad_d[rows] * central_gradient(grid, W, rows), axis=1)
    if form == 'nondivergence':
        values = dr ** 2 * laplacian(grid, W, rows) + (4 - n) * dr * drift + (2 - 2 * n) * W[rows]
    elif form == 'divergence':
        values = _face_laplacian(grid, W, rows, d ** 2) + (2 - n) * dr * drift + (2 - 2 * n) * W[rows]
    else:
        raise DomainError(f'unknown operator form "{form}"')
    return ctx._field(rows, values)


def apply_Mw(ctx, w, f, rows=None):
    """M_w(f) = n d^2 / (2(2 + d w)) [2 f ∇d·∇w + d ∇w·∇f] - 2 d f Δd"""
    grid = ctx.grid
    n = ctx.n
    W = _values(w)
    Fv = _values(f)
    rows = ctx.rows() if rows is None else rows
    d = ctx.dd.d[rows]
    denom = 2.0 + d * W[rows]
    bad = rows[denom <= 0]
    if bad.size:
        where = ', '.join(str(p) for p in grid.points[bad[:5]].tolist())
        raise DomainError(f'2 + d·w ≤ 0 at {bad.size} node(s): {where}')
    grad_w = central_gradient(grid, W, rows)
    grad_f = central_gradient(grid, Fv, rows)
    grad_d = ctx.dd.grad_d[rows]
    bracket = 2.0 * Fv[rows] * np.sum(grad_d * grad_w, axis=1) + d * np.sum(grad_w * grad_f, axis=1)
    values = n * d ** 2 / (2.0 * denom) * bracket - 2.0 * d * Fv[rows] * ctx.dd.laplacian_d[rows]
    return ctx._field(rows, values)


def fr_residual(ctx, u, form='nondivergence'):
    """L w + 2Δd - M_w(w) for w = (u^{-2/(n-2)} - 2d)/d^2"""
    U = _values(u)
    if np.any(U <= 0):
        raise DomainError('fr residual needs u > 0')
    d = ctx.dd.d
    v = U ** (-2.0 / (ctx.n - 2))
    w = (v - 2.0 * d) / d ** 2
    rows = ctx.rows()
    Lw = apply_L(ctx, w, form=form, rows=rows).values[rows]
    Mw = apply_Mw(ctx, w, w, rows=rows).values[rows]
    field = ctx._field(rows, Lw + 2.0 * ctx.dd.laplacian_d[rows] - Mw)
    logger.debug('fr residual over %d nodes: max %.3e', rows.size, float(np.max(np.abs(field.values[rows]))))
    return field


def max_abs(field):
    values = field.values[np.isfinite(field.values)]
    return float(np.max(np.abs(values))) if values.size else float('nan')
