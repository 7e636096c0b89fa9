"""Model operators on the periodic strip {Y periodic with period 2θ, 0 ≤ T ≤ θ}.

Y-derivatives are spectral, T-derivatives are centred finite differences
with third-order one-sided stencils on the rows T = 0 and T = θ. D = T ∂_T.
"""
import logging

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import CubicSpline
from scipy.linalg import solve_banded

from src.errors import DomainError, SolverError

logger = logging.getLogger(__name__)

SIMPSON_PANELS = 64
GAUSS_POINTS = 32


class StripField:
    def __init__(self, theta=1.0, n=3, y=None, T=None, values=None):
        if theta <= 0:
            raise DomainError('strip height theta must be positive')
        if n < 3:
            raise DomainError('n ≥ 3 required')
        self.theta = float(theta)
        self.n = n
        self.y = [np.asarray(axis, dtype=float) for axis in y]
        self.T = np.asarray(T, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if len(self.y) != n - 1:
            raise DomainError(f'strip needs {n - 1} Y axes')
        expected = tuple(axis.size for axis in self.y) + (self.T.size,)
        if self.values.shape != expected:
            raise DomainError(f'strip values have shape {self.values.shape}, expected {expected}')

    @staticmethod
    def axes(theta, n, y_points, t_points):
        """Periodic Y axes (Y_j = -θ + 2θj/M) and the T axis 0, θ/N, ..., θ"""
        if np.isscalar(y_points):
            y_points = [int(y_points)] + [1] * (n - 2)
        if len(y_points) != n - 1:
            raise DomainError(f'y_points needs {n - 1} entries')
        if t_points < 4:
            raise DomainError('t_points ≥ 4 required')
        y = [-theta + 2.0 * theta * np.arange(m) / m for m in y_points]
        T = np.linspace(0.0, theta, t_points + 1)
        return y, T

    @classmethod
    def from_function(cls, theta, n, y_points, t_points, func):
        """Sample func(Y, T), Y a list of broadcastable coordinate arrays"""
        y, T = cls.axes(theta, n, y_points, t_points)
        mesh = np.meshgrid(*y, T, indexing='ij')
        return cls(theta, n, y, T, func(mesh[:-1], mesh[-1]))

    def like(self, values):
        return StripField(self.theta, self.n, self.y, self.T, values)

    @property
    def dT(self):
        return self.T[1] - self.T[0]

    @property
    def T_mesh(self):
        return self.T.reshape((1,) * (self.n - 1) + (-1,))

    def to_dict(self):
        return {'theta': self.theta, 'n': self.n, 'y_points': [a.size for a in self.y],
                't_points': int(self.T.size - 1)}


def _wavenumbers(field, axis, derivative=False):
    m = field.y[axis].size
    kappa = 2.0 * np.pi * np.fft.fftfreq(m, d=2.0 * field.theta / m)
    if derivative and m % 2 == 0:
        kappa[m // 2] = 0.0
    shape = [1] * field.values.ndim
    shape[axis] = m
    return kappa.reshape(shape)


def laplacian_y(field, values=None):
    """Spectral Δ' along the periodic axes"""
    values = field.values if values is None else values
    out = np.zeros_like(values)
    for a in range(field.n - 1):
        kappa = _wavenumbers(field, a)
        out += np.real(np.fft.ifft(-kappa ** 2 * np.fft.fft(values, axis=a), axis=a))
    return out


def gradient_y(field, values=None):
    """Spectral ∇' as a list of n-1 arrays"""
    values = field.values if values is None else values
    return [np.real(np.fft.ifft(1j * _wavenumbers(field, a, derivative=True) * np.fft.fft(values, axis=a), axis=a))
            for a in range(field.n - 1)]


def d_dT(values, dT):
    """∂_T along the last axis, centred inside and third-order one-sided at the ends"""
    out = np.empty_like(values)
    out[..., 1:-1] = (values[..., 2:] - values[..., :-2]) / (2.0 * dT)
    out[..., 0] = (-11.0 * values[..., 0] + 18.0 * values[..., 1]
                   - 9.0 * values[..., 2] + 2.0 * values[..., 3]) / (6.0 * dT)
    out[..., -1] = (11.0 * values[..., -1] - 18.0 * values[..., -2]
                    + 9.0 * values[..., -3] - 2.0 * values[..., -4]) / (6.0 * dT)
    return out


def d2_dT2(values, dT):
    """∂_T^2 along the last axis, same stencil orders as d_dT"""
    out = np.empty_like(values)
    out[..., 1:-1] = (values[..., 2:] - 2.0 * values[..., 1:-1] + values[..., :-2]) / dT ** 2
    for end, taps in ((0, range(5)), (-1, range(-1, -6, -1))):
        a, b, c, d, e = (values[..., j] for j in taps)
        out[..., end] = (35.0 * a - 104.0 * b + 114.0 * c - 56.0 * d + 11.0 * e) / (12.0 * dT ** 2)
    return out


def euler_D(field, values=None):
    """D = T ∂_T"""
    values = field.values if values is None else values
    return field.T_mesh * d_dT(values, field.dT)


def _second_order_part(field, shift):
    """(D+2)(D+shift) f + T^2 Δ' f, expanded as T^2 f'' + (shift+3) T f' + 2 shift f + T^2 Δ' f"""
    f = field.values
    T = field.T_mesh
    return (T ** 2 * (d2_dT2(f, field.dT) + laplacian_y(field, f))
            + (shift + 3.0) * T * d_dT(f, field.dT) + 2.0 * shift * f)


def apply_L0(field):
    """L0 = (D+2)(D+1-n) + T^2 Δ'"""
    return field.like(_second_order_part(field, 1.0 - field.n))


def apply_L0prime(field):
    """L0' = (D+2)(D-1) + T^2 Δ' = L0 + (n-2)(D+2)"""
    return field.like(_second_order_part(field, -1.0))


def apply_L1(field, grad_d_tilde, laplacian_d):
    """L1 f = (4-n) ∇̃d·∇'(T f) + 2T ∇̃d·∇'(D f) + T (D f) Δd.

    grad_d_tilde holds n-1 coefficient arrays broadcastable to the strip,
    laplacian_d one such array.
    """
    f = field.values
    T = field.T_mesh
    Df = euler_D(field, f)
    grad_Tf = gradient_y(field, T * f)
    grad_Df = gradient_y(field, Df)
    out = T * Df * laplacian_d
    for a in range(field.n - 1):
        out = out + (4 - field.n) * grad_d_tilde[a] * grad_Tf[a] + 2.0 * T * grad_d_tilde[a] * grad_Df[a]
    return field.like(out)


def _simpson(values, width, axis=-1):
    """Composite Simpson over an even number of panels along axis"""
    weights = np.ones(values.shape[axis])
    weights[1:-1:2] = 4.0
    weights[2:-1:2] = 2.0
    return np.tensordot(values, weights, axes=([axis], [0])) * width / 3.0


def k_tilde(k):
    """k̃(T) = T ∫_T^θ k(τ)/τ^2 dτ + T k(θ)/θ with k̃(0) = k(0).

    Written as ∫_1^∞ F1[k](Tσ) dσ/σ^2 with the constant extension F1 beyond θ;
    the part σ ≤ θ/T is integrated by composite Simpson in log σ, the rest is
    the closed-form tail. Only k - k(θ) goes through the quadrature, the
    constant part integrates exactly to k(θ).
    """
    T = k.T
    theta = k.theta
    k_theta = k.values[..., -1]
    spline = CubicSpline(T, k.values - k_theta[..., None], axis=-1)
    out = np.empty_like(k.values)
    out[..., 0] = k.values[..., 0]
    tail = np.zeros_like(k.values)
    for i in range(1, T.size):
        upper = np.log(theta / T[i])
        tail[..., i] = k_theta * T[i] / theta
        if upper <= 0:
            out[..., i] = k_theta
            continue
        t = np.linspace(0.0, upper, 2 * SIMPSON_PANELS + 1)
        sigma = np.exp(t)
        tau = np.minimum(T[i] * sigma, theta)
        integrand = spline(tau) / sigma
        out[..., i] = _simpson(integrand, upper / (2 * SIMPSON_PANELS)) + k_theta

    half = T < theta / 2.0
    numeric = np.abs(out - tail)
    if np.any((np.abs(tail) > numeric)[..., half & (T > 0)]):
        logger.warning('constant extension dominates k̃ below T = θ/2; k may be poorly resolved near θ')
    return k.like(out)


def solve_strip_poisson(field, source):
    """h with (∂_TT + Δ')h + source = 0, h(Y,0) = 0, h_T(Y,θ) = 0.

    Fourier modes in Y, one tridiagonal system per mode with a ghost node for
    the Neumann condition at T = θ.
    """
    dT = field.dT
    N = field.T.size - 1
    y_axes = tuple(range(field.n - 1))
    rhs_hat = np.fft.fftn(-source, axes=y_axes)
    kappa2 = sum(_wavenumbers(field, a)[..., 0] ** 2 for a in range(field.n - 1))
    kappa2 = np.broadcast_to(kappa2, rhs_hat.shape[:-1])

    h_hat = np.zeros_like(rhs_hat)
    for index in np.ndindex(*rhs_hat.shape[:-1]):
        k2 = kappa2[index]
        ab = np.zeros((3, N), dtype=float)
        ab[0, 1:] = 1.0 / dT ** 2
        ab[1, :] = -2.0 / dT ** 2 - k2
        ab[2, :-1] = 1.0 / dT ** 2
        # Ghost node h_{N+1} = h_{N-1}
        ab[2, N - 2] = 2.0 / dT ** 2
        try:
            h_hat[index + (slice(1, None),)] = solve_banded((1, 1), ab, rhs_hat[index + (slice(1, None),)])
        except (np.linalg.LinAlgError, ValueError) as e:
            raise SolverError(f'strip Poisson solve failed for mode {index}: {e}')
    h = np.real(np.fft.ifftn(h_hat, axes=y_axes))
    if not np.all(np.isfinite(h)):
        raise SolverError('strip Poisson solve produced non-finite values')
    return h


def _moment_weights(T):
    """Matrix W with (W g)_i = ∫_0^1 σ g(T_i σ) dσ for g given on T by cubic spline"""
    nodes, weights = leggauss(GAUSS_POINTS)
    sigma = 0.5 * (nodes + 1.0)
    weights = 0.5 * weights
    basis = CubicSpline(T, np.eye(T.size), axis=0)
    W = np.zeros((T.size, T.size))
    for i, t in enumerate(T):
        W[i] = (weights * sigma) @ basis(t * sigma)
    return W


class ModelInverse:
    """Result of f0 = G[k] with the intermediate fields kept for diagnostics"""

    def __init__(self, k=None, k_tilde=None, h=None, h_TT=None, f0=None):
        self.k = k
        self.k_tilde = k_tilde
        self.h = h
        self.h_TT = h_TT
        self.f0 = f0

    def diagnostics(self, interior_rows=4):
        k, f0 = self.k, self.f0
        T = k.T
        residual = apply_L0prime(f0).values - k.values
        interior = T > interior_rows * k.dT
        kt_defect = euler_D(k, self.k_tilde.values) - self.k_tilde.values + k.values
        dplus2 = euler_D(f0) + 2.0 * f0.values - self.h_TT.values
        return {
            'inversion_residual': float(np.max(np.abs(residual[..., interior]))),
            'trace_defect': float(np.max(np.abs(f0.values[..., 0] + 0.5 * k.values[..., 0]))),
            'D_f0_at_zero': float(np.max(np.abs(euler_D(f0)[..., 0]))),
            'k_tilde_defect': float(np.max(np.abs(kt_defect[..., interior]))),
            'k_tilde_trace': float(np.max(np.abs(self.k_tilde.values[..., 0] - k.values[..., 0]))),
            'D_plus_2_defect': float(np.max(np.abs(dplus2[..., interior]))),
        }


def invert_model_operator(k, n=None):
    """f0 = G[k], the solution of L0' f0 = k built from the strip Poisson potential"""
    n = k.n if n is None else n
    if n != k.n:
        raise DomainError('strip dimension does not match n')
    kt = k_tilde(k)
    h = solve_strip_poisson(k, kt.values)
    h_TT = -kt.values - laplacian_y(k, h)
    f0 = h_TT @ _moment_weights(k.T).T
    logger.info('model inverse on %s strip: f0 trace defect %.3e',
                'x'.join(str(a.size) for a in k.y) + f'x{k.T.size}',
                float(np.max(np.abs(f0[..., 0] + 0.5 * k.values[..., 0]))))
    return ModelInverse(k=k, k_tilde=kt, h=k.like(h), h_TT=k.like(h_TT), f0=k.like(f0))


def assemble_model_solution(k, n=None, a=None):
    """f = G[a k] with a = 1/(n-1) unless given; returns (f, trace report).

    At T = 0, L0 f - k = ((n-1) a - 1) k, which vanishes for a = 1/(n-1).
    """
    n = k.n if n is None else n
    a = 1.0 / (n - 1) if a is None else float(a)
    inverse = invert_model_operator(k.like(a * k.values), n)
    f = inverse.f0
    k0 = k.values[..., 0]
    L0f = apply_L0(f).values[..., 0]
    report = {
        'a': a,
        'trace_defect': float(np.max(np.abs(f.values[..., 0] - k0 / (2.0 - 2.0 * n)))),
        'trace_identity': float(np.max(np.abs(L0f - k0 - ((n - 1) * a - 1.0) * k0))),
        'expected_trace_factor': (n - 1) * a - 1.0,
    }
    return f, report


def strip_k(theta, n, y_points, t_points, kind='constant', mean=1.0, amplitude=0.3):
    """Test sources: k ≡ mean, or mean + amplitude·cos(π Y1/θ)"""
    if kind == 'constant':
        return StripField.from_function(theta, n, y_points, t_points,
                                        lambda Y, T: np.full(T.shape, float(mean)))
    if kind == 'cosine':
        return StripField.from_function(theta, n, y_points, t_points,
                                        lambda Y, T: mean + amplitude * np.cos(np.pi * Y[0] / theta) + 0.0 * T)
    raise DomainError(f'unknown strip source kind "{kind}"')
