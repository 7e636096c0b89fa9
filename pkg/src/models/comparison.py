import logging

import numpy as np

from src.errors import DomainError
from src.models.domain import Ball, Shell, distance_data
from src.models.fuchsian import FuchsianOperatorContext, apply_Mw
from src.models.radial import positive_power

logger = logging.getLogger(__name__)

IDENTITY_TOLERANCE = 1e-10


class BarrierSpec:
    KINDS = ('sphere-sandwich', 'w0-plus-Ad', 'epsilon-singular', 'alpha-supersolution')

    def __init__(self, kind='sphere-sandwich', A=1.0, B=1.0, epsilon=1e-3, a=1.0, alpha=0.5, delta=None):
        if kind not in self.KINDS:
            raise DomainError(f'unknown barrier kind "{kind}"')
        if not 0 < alpha < 1:
            raise DomainError('alpha must lie in (0, 1)')
        self.kind = kind
        self.A = A
        self.B = B
        self.epsilon = epsilon
        self.a = a
        self.alpha = alpha
        self.delta = delta

    def conditions(self, dd, n, c=None):
        """Evaluate the sign conditions of this barrier on distance data samples"""
        d, lap = dd.d, dd.laplacian_d
        if self.kind == 'w0-plus-Ad':
            ok = bool(np.all(2.0 * (2 - n) + d * lap <= 0))
            if c is not None:
                ok = ok and (2 - n) * self.A + c <= 0
            return ok
        if self.kind == 'epsilon-singular':
            return bool(np.all(n * self.B + (2.0 + self.B * d) * lap >= 0))
        if self.kind == 'alpha-supersolution':
            return self.A > self.a / ((self.alpha + 2) * (n - 1 - self.alpha))
        return True

    def to_dict(self):
        return {'kind': self.kind, 'A': self.A, 'B': self.B, 'epsilon': self.epsilon,
                'a': self.a, 'alpha': self.alpha, 'delta': self.delta}


def report(check, samples, violations, worst_margin, **extra):
    data = {'check': check, 'samples': int(samples), 'violations': int(violations),
            'worst_margin': None if worst_margin is None else float(worst_margin)}
    data.update(extra)
    return data


def sandwich_bounds(d, n, r0):
    """(2d + d^2/r0)^{1-n/2} and (2d - d^2/r0)^{1-n/2}"""
    p = 1.0 - n / 2.0
    return positive_power(2.0 * d + d ** 2 / r0, p), positive_power(2.0 * d - d ** 2 / r0, p)


def _sandwich(d, u, n, r0, tolerance, points=None):
    lower, upper = sandwich_bounds(d, n, r0)
    margin = np.minimum((u - lower) / lower, (upper - u) / upper)
    bad = np.nonzero(margin < -tolerance)[0]
    extra = {}
    if points is not None:
        extra['violating_nodes'] = points[bad[:10]].tolist()
    return report('sphere-sandwich', d.size, bad.size, margin.min() if d.size else None,
                  tolerance=tolerance, **extra)


def sphere_sandwich_check(dom, u_field, tolerance=1e-8):
    """Relative sandwich margins at every node with d ≤ r0.

    Each such node lies on the inward normal of its nearest boundary point, so
    the tangent sphere barriers at that point apply.
    """
    dd = u_field.grid.distance
    mask = (dd.d > 0) & (dd.d <= dom.r0)
    return _sandwich(dd.d[mask], u_field.values[mask], u_field.grid.n, dom.r0, tolerance,
                     u_field.grid.points[mask])


def sphere_sandwich_profile(profile, r0, tolerance=1e-8):
    """Sandwich check on a radial profile together with the |w| ≤ 1/r0 bound"""
    d = profile.distance()
    mask = (d > 0) & (d <= r0)
    result = _sandwich(d[mask], profile.u[mask], profile.n, r0, tolerance, profile.r[mask, None])
    w = profile.w[mask]
    result['max_abs_w'] = float(np.max(np.abs(w)))
    result['w_bound'] = 1.0 / r0
    return result


def singular_barrier_values(dd, spec, n):
    """ε(d^{-2} + B d^{-1}) and the closed-form image L(d^{-2} + B d^{-1})"""
    d = np.asarray(dd.d, dtype=float)
    if np.any(d <= 0):
        raise DomainError('singular barrier has a pole at d = 0')
    lap = np.asarray(dd.laplacian_d, dtype=float)
    B = spec.B
    value = spec.epsilon * (d ** -2 + B / d)
    image = -(n * B + 2.0 * lap) / d - B * lap
    if value.ndim == 0:
        return float(value), float(image)
    return value, image


def sample_collar(dom, count, seed=0, upper=None, lower=1e-3):
    """Random points of the domain with lower·r0 ≤ d < upper (default r0)"""
    rng = np.random.default_rng(seed)
    upper = dom.r0 if upper is None else upper
    kept = []
    total = 0
    while total < count:
        X = dom.lower + (dom.upper - dom.lower) * rng.random((4 * count, dom.n))
        X = X[dom.contains(X)]
        dd = distance_data(dom, X)
        X = X[(dd.d >= lower * dom.r0) & (dd.d < upper)]
        kept.append(X)
        total += X.shape[0]
    X = np.vstack(kept)[:count]
    return X, distance_data(dom, X)


def L_of_distance_function(dd, n, g, g1, g2):
    """L applied to g(d) from the geometric derivatives of d:
    d^2 (g'' |∇d|^2 + g' Δd) + (4-n) d g' |∇d|^2 + (2-2n) g
    """
    d = dd.d
    grad2 = np.sum(dd.grad_d ** 2, axis=-1)
    lap = dd.laplacian_d
    return d ** 2 * (g2(d) * grad2 + g1(d) * lap) + (4 - n) * d * g1(d) * grad2 + (2 - 2 * n) * g(d)


def _compare(name, lhs, rhs, scale, tolerance):
    err = np.abs(lhs - rhs) / (1.0 + scale)
    bad = int(np.sum(err > tolerance))
    return report(name, lhs.size, bad, -float(err.max()), max_error=float(err.max()), tolerance=tolerance)


def closed_form_distance_laplacian(dom, dd):
    """Δd of balls and shells from the radial formula, else None"""
    n = dom.n
    if isinstance(dom, Ball):
        return -(n - 1) / (dom.radius - dd.d)
    if isinstance(dom, Shell):
        r = np.linalg.norm(dd.nearest_point + dd.d[:, None] * dd.grad_d - dom.center, axis=1)
        inner = np.isclose(np.linalg.norm(dd.nearest_point - dom.center, axis=1), dom.inner_radius)
        return np.where(inner, (n - 1) / r, -(n - 1) / r)
    return None


def identity_checks(dom, samples=1000, seed=0, alpha=0.5, B=None, tolerance=IDENTITY_TOLERANCE):
    """Closed forms of L(d), L(d^α) and L(d^{-2} + B d^{-1}) at random points with d < r0"""
    n = dom.n
    _, dd = sample_collar(dom, samples, seed)
    d, lap = dd.d, dd.laplacian_d
    if B is None:
        # n + dΔd > 1 whenever d < r0/2
        B = choose_B(dd.subset(d < dom.r0 / 2.0), n)
    results = []

    lhs = L_of_distance_function(dd, n, lambda s: s, lambda s: np.ones_like(s), lambda s: np.zeros_like(s))
    rhs = 3 * (2 - n) * d + d ** 2 * lap
    results.append(_compare('L(d)', lhs, rhs, np.abs(rhs) + d, tolerance))

    a = alpha
    lhs = L_of_distance_function(dd, n, lambda s: s ** a, lambda s: a * s ** (a - 1),
                                 lambda s: a * (a - 1) * s ** (a - 2))
    rhs = -d ** a * ((a + 2) * (n - 1 - a) - a * d * lap)
    results.append(_compare('L(d^alpha)', lhs, rhs, np.abs(rhs) + d ** a, tolerance))

    lhs = L_of_distance_function(dd, n, lambda s: s ** -2 + B / s, lambda s: -2 * s ** -3 - B * s ** -2,
                                 lambda s: 6 * s ** -4 + 2 * B * s ** -3)
    rhs = -(n * B + 2 * lap) / d - B * lap
    results.append(_compare('L(d^-2+Bd^-1)', lhs, rhs, 6.0 / d ** 2 + np.abs(rhs), tolerance))

    grad_err = np.abs(np.linalg.norm(dd.grad_d, axis=1) - 1.0)
    results.append(report('|grad d|=1', d.size, int(np.sum(grad_err > tolerance)), -float(grad_err.max()),
                          max_error=float(grad_err.max()), tolerance=tolerance))
    closed = closed_form_distance_laplacian(dom, dd)
    if closed is not None:
        results.append(_compare('laplacian d', lap, closed, np.abs(closed), tolerance))
    return results


def choose_B(dd, n):
    """Smallest admissible B for nB + (2 + Bd)Δd ≥ 0 on the samples, inflated 1.5x"""
    d, lap = dd.d, dd.laplacian_d
    denom = n + d * lap
    if np.any(denom <= 0):
        raise DomainError('n + dΔd ≤ 0 on the collar; no singular barrier exists there')
    bound = float(np.max(-2.0 * lap / denom))
    return 1.5 * bound if bound > 0 else 1.0


def choose_delta(dom, samples=1000, seed=0):
    """Largest δ in {r0/2, r0/4, r0/8} where 2(2-n) + dΔd ≤ 0 and a singular barrier exists"""
    n = dom.n
    X, dd = sample_collar(dom, samples, seed, upper=dom.r0 / 2.0)
    for delta in (dom.r0 / 2.0, dom.r0 / 4.0, dom.r0 / 8.0):
        sub = dd.subset(dd.d < delta)
        if len(sub) == 0:
            continue
        if not BarrierSpec('w0-plus-Ad').conditions(sub, n):
            continue
        try:
            B = choose_B(sub, n)
        except DomainError:
            continue
        if BarrierSpec('epsilon-singular', B=B).conditions(sub, n):
            return delta
    logger.warning('no admissible delta in {r0/2, r0/4, r0/8}')
    return None


def verify_tilde_w_bound(w_field, A=None, delta=None, shells=None, slack=0.0):
    """|w + H(Q)| ≤ A d + slack on {d < δ}, with the log-log slope of shell maxima.

    -H at the nearest boundary point stands in for the boundary value of w0.
    Without an explicit A the slope of the w0 + A d barrier is used. Shell
    maxima are taken over solved nodes only; layer nodes hold the expansion
    data and a shell without solved nodes is reported unresolved.
    """
    grid = w_field.grid
    dd = grid.distance
    if A is None:
        ctx = FuchsianOperatorContext(grid, delta=delta)
        delta = ctx.delta
        A, _ = barrier_slope(ctx, w_field)
    delta = grid.dom.r0 / 2.0 if delta is None else delta
    mask = (dd.d < delta) & np.isfinite(w_field.values)
    d = dd.d[mask]
    err = np.abs(w_field.values[mask] + dd.H_at_Q[mask])
    excess = err - A * d - slack
    result = report('tilde-w', d.size, int(np.sum(excess > 0)), -float(excess.max()), A=A, delta=delta,
                    A_fitted=float(np.max(err / d)))
    if shells:
        maxima = shell_maxima(err, d, shells, 0.5 * grid.h_grid, grid.deep[mask])
        result.update(shell_fit(shells, maxima))
        result['unresolved'] = [s for s, m in zip(shells, maxima) if not np.isfinite(m)]
    return result


def shell_maxima(values, d, shells, half_width, solved):
    """max of values over each ring |d - s| ≤ half_width restricted to solved nodes, NaN if empty"""
    maxima = []
    for s in shells:
        ring = solved & (np.abs(d - s) <= half_width)
        maxima.append(float(values[ring].max()) if ring.any() else float('nan'))
    return maxima


def shell_fit(shells, maxima):
    """Least-squares slope of log max-error against log d"""
    shells = np.asarray(shells, dtype=float)
    maxima = np.asarray(maxima, dtype=float)
    ok = np.isfinite(maxima) & (maxima > 0)
    slope = float(np.polyfit(np.log(shells[ok]), np.log(maxima[ok]), 1)[0]) if ok.sum() >= 2 else float('nan')
    return {'shells': shells.tolist(), 'shell_maxima': maxima.tolist(), 'fitted_slope': slope}


def verify_tilde_w_profile(profile, shells, r0):
    """Radial version: |w + H| at the nodes nearest to each shell distance on each boundary side"""
    d = profile.distance()
    err = np.abs(profile.w + profile.boundary_mean_curvature())
    r_mid = None
    if profile.kind == 'shell-maximal':
        r_mid = 0.5 * (profile.inner_radius + profile.outer_radius)
    sides = {'all': np.ones(d.size, dtype=bool)}
    if r_mid is not None:
        sides = {'inner': profile.r < r_mid, 'outer': profile.r >= r_mid}
    result = report('tilde-w-radial', d.size, 0, None, r0=r0)
    for name, side in sides.items():
        maxima = [float(err[side][np.argmin(np.abs(d[side] - s))]) for s in shells]
        fit = shell_fit(shells, maxima)
        result[name] = fit
    result['fitted_slope'] = min(result[name]['fitted_slope'] for name in sides)
    return result


def measure_c(ctx, w_field):
    """1.5 x max |M_w(w)|/d over the collar"""
    rows = ctx.rows()
    Mw = apply_Mw(ctx, w_field, w_field, rows=rows).values[rows]
    return 1.5 * float(np.max(np.abs(Mw) / ctx.dd.d[rows]))


def barrier_slope(ctx, w_field):
    """A = max(c/(n-2), gap/δ) for the w0 + A d barrier; gap is max |w + H| on the slice d ≈ δ"""
    grid = ctx.grid
    dd = grid.distance
    c = measure_c(ctx, w_field)
    slice_mask = np.abs(dd.d - ctx.delta) <= 0.5 * grid.h_grid
    slice_gap = np.abs(w_field.values[slice_mask] + dd.H_at_Q[slice_mask])
    gap = float(slice_gap.max()) if slice_gap.size else 0.0
    return max(c / (ctx.n - 2), gap / ctx.delta), c


def barrier_witness(w_field, delta=None, epsilon=1e-3, B=None, A=None):
    """z_ε = ε(d^{-2} + B d^{-1}) + w_A - w with w_A = -H + A d on {d < δ}.

    Reports whether an interior node of the collar attains a negative minimum
    below the minimum on the slice d ≈ δ.
    """
    grid = w_field.grid
    n = grid.n
    ctx = FuchsianOperatorContext(grid, delta=delta)
    delta = ctx.delta
    dd = grid.distance
    rows = ctx.rows()
    sub = dd.subset(rows)
    if B is None:
        B = choose_B(sub, n)
    slope, c = barrier_slope(ctx, w_field)
    A = slope if A is None else A
    half = 0.5 * grid.h_grid
    slice_mask = np.abs(dd.d - delta) <= half
    w = w_field.values
    spec = BarrierSpec('w0-plus-Ad', A=A, B=B, epsilon=epsilon, delta=delta)

    z = epsilon * (dd.d ** -2 + B / dd.d) - dd.H_at_Q + A * dd.d - w
    interior = rows[dd.d[rows] < delta - half]
    interior_min = float(z[interior].min()) if interior.size else float('nan')
    slice_min = float(z[slice_mask].min()) if slice_mask.any() else float('nan')
    violated = interior.size > 0 and interior_min < 0 and interior_min < slice_min
    return report('barrier-witness', interior.size, int(violated), interior_min - min(slice_min, 0.0),
                  interior_min=interior_min, slice_min=slice_min, c=c,
                  sign_conditions=spec.conditions(sub, n, c), **spec.to_dict())


def alpha_supersolution_check(dom, alpha=0.5, a=1.0, delta=None, samples=1000, seed=0):
    """-L(A d^α) ≥ a d^α on the collar for A = 1.5 a/((α+2)(n-1-α))"""
    n = dom.n
    delta = dom.r0 / 2.0 if delta is None else delta
    A = 1.5 * a / ((alpha + 2) * (n - 1 - alpha))
    spec = BarrierSpec('alpha-supersolution', A=A, a=a, alpha=alpha, delta=delta)
    _, dd = sample_collar(dom, samples, seed, upper=delta)
    d = dd.d
    minus_L = A * d ** alpha * ((alpha + 2) * (n - 1 - alpha) - alpha * d * dd.laplacian_d)
    margin = minus_L - a * d ** alpha
    return report('alpha-supersolution', d.size, int(np.sum(margin < 0)), float(margin.min()),
                  A=A, condition=spec.conditions(dd, n))
