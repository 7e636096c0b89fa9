import numpy as np
import pytest

from src.models.config import RunConfig
from src.routes.common import SolveCache
from src.routes.verify import EXPANSION_SHELLS, suite_convergence, suite_expansion, suite_gradient, suite_tilde_w


@pytest.fixture(scope='module')
def default_ball(tmp_path_factory):
    out = tmp_path_factory.mktemp('out')
    config = RunConfig.from_dict({'domain': {'kind': 'ball', 'radius': 1.0}, 'output_dir': str(out)})
    return config, SolveCache(config)


def test_ball_convergence_passes_by_reproduction(default_ball):
    config, cache = default_ball
    result = suite_convergence(config, cache)
    assert [row['resolution'] for row in result['rows']] == [17, 33, 65]
    assert result['reproduced']
    assert result['passed']
    assert all(row['error'] <= config.thresholds['exactness_floor'] for row in result['rows'])


def test_gradient_suite_fails_on_an_empty_band(default_ball):
    config, cache = default_ball
    result = suite_gradient(config, cache)
    assert result['samples'] == 0
    assert not result['passed']
    assert result['h_trunc'] == pytest.approx(0.125)
    assert 'leaves the band empty' in result['error']


def test_expansion_shells_inside_the_layer_are_unresolved(default_ball):
    config, cache = default_ball
    result = suite_expansion(config, cache)
    for row in result['rows']:
        assert row['unresolved'] == list(EXPANSION_SHELLS)
        assert all(np.isnan(m) for m in row['shell_maxima'])
    assert not result['slope_judged']


def test_tilde_w_suite_reports_the_barrier_slope(default_ball):
    config, cache = default_ball
    result = suite_tilde_w(config, cache)
    grid_report = result['grid']
    assert grid_report['A'] >= 0.0
    assert grid_report['unresolved'] == list(EXPANSION_SHELLS)
    assert 'A_fitted' in grid_report


def test_gradient_of_v_tends_to_two_near_the_boundary(tmp_path):
    config = RunConfig.from_dict({
        'domain': {'kind': 'ball', 'radius': 1.0},
        'resolutions': [65],
        'h_trunc': {'rule': 'absolute', 'value': 0.0625},
        'output_dir': str(tmp_path),
    })
    result = suite_gradient(config, SolveCache(config))
    assert result['samples'] > 0
    assert result['max_deviation'] <= 0.1
    assert result['violations'] == 0
    assert result['passed']
