import json
import logging
import os

from src.errors import ConfigError
from src.models.domain import DomainDescriptor
from src.models.grid import SolverConfig

logger = logging.getLogger(__name__)

SUITES = ('identities', 'sandwich', 'expansion', 'gradient', 'convergence', 'radial',
          'fuchsian', 'fr-residual', 'tilde-w', 'barriers')

DEFAULT_THRESHOLDS = {
    'ball_relative_error': 5e-3,
    'order_min': 1.7,
    'order_max': 2.3,
    'expansion_slope_min': 2.3,
    'expansion_slope_spread': 0.3,
    'gradient_tolerance': 0.1,
    'gradient_band': 0.05,
    'sandwich_tolerance': 1e-8,
    'grid_sandwich_tolerance': 5e-3,
    'w_bound_slack': 1e-6,
    'monotone_tolerance': 1e-10,
    'identity_tolerance': 1e-10,
    'exactness_floor': 1e-6,
    'radial_accuracy': 1e-6,
    'radial_residual': 1e-8,
    'f0_tolerance': 1e-8,
    'inversion_residual': 1e-4,
    'inversion_order_min': 1.5,
    'trace_tolerance': 1e-6,
    'operator_identity': 1e-10,
    'tilde_w_slope_min': 0.8,
    'radial_tilde_w_slope_min': 0.9,
}


class RunConfig:
    def __init__(self, domain=None, n=3, resolutions=None, h_trunc_rule='multiple', h_trunc_value=4.0,
                 solver=None, checks=None, seed=0, samples=1000, alpha=0.5, delta=None,
                 radial=None, fuchsian=None, thresholds=None, output_dir='out', raw=None):
        self.domain = domain
        self.n = n
        self.resolutions = list(resolutions or [17, 33, 65])
        self.h_trunc_rule = h_trunc_rule
        self.h_trunc_value = h_trunc_value
        self.solver = solver or SolverConfig()
        self.checks = list(checks or [])
        self.seed = seed
        self.samples = samples
        self.alpha = alpha
        self.delta = delta
        self.radial = radial or {'points': 512, 'ladder': [2, 4, 8, 16], 'nested_radii': [0.8, 1.0]}
        self.fuchsian = fuchsian or {'theta': 1.0, 'y_points': 128, 't_points': 128,
                                     'k': {'kind': 'constant', 'mean': 1.0, 'amplitude': 0.3}}
        self.thresholds = dict(DEFAULT_THRESHOLDS)
        self.thresholds.update(thresholds or {})
        self.output_dir = output_dir
        self.raw = raw or {}

    @classmethod
    def from_dict(cls, data):
        """Validate a config document field by field"""
        if not isinstance(data, dict):
            raise ConfigError('config must be a JSON object')
        if 'domain' not in data:
            raise ConfigError('domain is required')

        n = data.get('n', 3)
        if not isinstance(n, int) or n < 3:
            raise ConfigError('n ≥ 3 required')
        domain = DomainDescriptor.from_dict(data['domain'], n)

        resolutions = data.get('resolutions', [17, 33, 65])
        if not resolutions or any(not isinstance(r, int) for r in resolutions):
            raise ConfigError('resolutions must be a non-empty list of integers')
        if any(b <= a for a, b in zip(resolutions, resolutions[1:])):
            raise ConfigError('resolutions must be ascending')

        h_trunc = data.get('h_trunc', {'rule': 'multiple', 'value': 4.0})
        rule = h_trunc.get('rule', 'multiple')
        if rule not in ('absolute', 'multiple'):
            raise ConfigError('h_trunc.rule must be "absolute" or "multiple"')
        if 'value' not in h_trunc:
            raise ConfigError('h_trunc.value is required')
        value = float(h_trunc['value'])

        solver_data = data.get('solver', {})
        try:
            solver = SolverConfig(
                mode=solver_data.get('mode', 'newton'),
                tolerance=float(solver_data.get('tolerance', 1e-8)),
                max_iterations=int(solver_data.get('max_iterations', 50)),
                damping=solver_data.get('damping', 'halving'),
                max_halvings=int(solver_data.get('max_halvings', 30)),
                order=solver_data.get('order', 'two-term'),
                m_ladder=solver_data.get('m_ladder', [2, 4, 8, 16]),
                formulation=solver_data.get('formulation', 'v-form'),
                krylov_rtol=float(solver_data.get('krylov_rtol', 1e-6)),
            )
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f'solver: {e}')

        checks = data.get('checks', [])
        unknown = [c for c in checks if c not in SUITES]
        if unknown:
            raise ConfigError(f'checks: unknown suite(s) {", ".join(unknown)}')

        alpha = float(data.get('alpha', 0.5))
        if not 0 < alpha < 1:
            raise ConfigError('alpha must lie in (0, 1)')
        delta = data.get('delta')
        if delta is not None and not 0 < float(delta) < domain.r0:
            raise ConfigError(f'delta must lie in (0, r0={domain.r0})')

        radial = {'points': 512, 'ladder': [2, 4, 8, 16], 'nested_radii': [0.8, 1.0]}
        radial.update(data.get('radial', {}))
        if int(radial['points']) < 16:
            raise ConfigError('radial.points must be at least 16')

        fuchsian = {'theta': 1.0, 'y_points': 128, 't_points': 128}
        fuchsian.update({key: val for key, val in data.get('fuchsian', {}).items() if key != 'k'})
        k = {'kind': 'constant', 'mean': 1.0, 'amplitude': 0.3}
        k.update(data.get('fuchsian', {}).get('k', {}))
        if k['kind'] not in ('constant', 'cosine'):
            raise ConfigError('fuchsian.k.kind must be "constant" or "cosine"')
        fuchsian['k'] = k

        thresholds = data.get('thresholds', {})
        unknown = [key for key in thresholds if key not in DEFAULT_THRESHOLDS]
        if unknown:
            raise ConfigError(f'thresholds: unknown key(s) {", ".join(unknown)}')

        config = cls(domain=domain, n=n, resolutions=resolutions, h_trunc_rule=rule, h_trunc_value=value,
                     solver=solver, checks=checks, seed=int(data.get('seed', 0)),
                     samples=int(data.get('samples', 1000)), alpha=alpha,
                     delta=None if delta is None else float(delta), radial=radial, fuchsian=fuchsian,
                     thresholds=thresholds, output_dir=data.get('output_dir', 'out'), raw=data)
        for resolution in config.resolutions:
            config.h_trunc_for(resolution)
        return config

    @staticmethod
    def read_document(path):
        """Raw JSON config document"""
        try:
            with open(path) as handle:
                return json.load(handle)
        except json.JSONDecodeError as e:
            raise ConfigError(f'config is not valid JSON: {e}')
        except OSError as e:
            raise ConfigError(f'cannot read config: {e}')

    @classmethod
    def load(cls, path):
        """Read and validate a JSON config file"""
        return cls.from_dict(cls.read_document(path))

    def h_grid_for(self, resolution):
        return float(max(self.domain.upper - self.domain.lower)) / (resolution - 1)

    def h_trunc_for(self, resolution):
        """Truncation offset at a resolution; must lie in [2 h_grid, r0)"""
        h_grid = self.h_grid_for(resolution)
        value = self.h_trunc_value * h_grid if self.h_trunc_rule == 'multiple' else self.h_trunc_value
        if value < 2.0 * h_grid - 1e-12:
            raise ConfigError(f'h_trunc rule gives {value:g} < 2·h_grid = {2.0 * h_grid:g} '
                              f'at resolution {resolution}')
        if value >= self.domain.r0:
            raise ConfigError(f'h_trunc rule gives {value:g} ≥ r0 = {self.domain.r0:g} '
                              f'at resolution {resolution}')
        return value

    def solver_for(self, resolution):
        data = self.solver.to_dict()
        data['h_trunc'] = self.h_trunc_for(resolution)
        return SolverConfig(**data)

    def database_path(self):
        return os.getenv('HYPRAD_DATABASE', os.path.join(self.output_dir, 'runs.db'))

    def to_dict(self):
        return {
            'domain': self.domain.to_dict(),
            'n': self.n,
            'resolutions': self.resolutions,
            'h_trunc': {'rule': self.h_trunc_rule, 'value': self.h_trunc_value},
            'solver': self.solver.to_dict(),
            'checks': self.checks,
            'seed': self.seed,
            'samples': self.samples,
            'alpha': self.alpha,
            'delta': self.delta,
            'radial': self.radial,
            'fuchsian': self.fuchsian,
            'thresholds': self.thresholds,
            'output_dir': self.output_dir,
        }
