import json

import pytest

from src.errors import ConfigError
from src.models.config import DEFAULT_THRESHOLDS, RunConfig
from src.models.domain import Ball, Ellipsoid


def ball_document(**extra):
    data = {'domain': {'kind': 'ball', 'radius': 1.0}}
    data.update(extra)
    return data


def test_defaults():
    config = RunConfig.from_dict(ball_document())
    assert isinstance(config.domain, Ball)
    assert config.n == 3
    assert config.resolutions == [17, 33, 65]
    assert config.solver.mode == 'newton'
    assert config.thresholds == DEFAULT_THRESHOLDS
    assert config.radial['points'] == 512
    assert config.fuchsian['k']['kind'] == 'constant'


def test_h_trunc_rules():
    config = RunConfig.from_dict(ball_document())
    assert config.h_grid_for(33) == pytest.approx(0.0625)
    assert config.h_trunc_for(33) == pytest.approx(0.25)
    absolute = RunConfig.from_dict(ball_document(resolutions=[17, 33], h_trunc={'rule': 'absolute', 'value': 0.25}))
    assert absolute.h_trunc_for(17) == pytest.approx(0.25)
    assert absolute.solver_for(33).h_trunc == pytest.approx(0.25)


def test_partial_sections_are_merged():
    config = RunConfig.from_dict(ball_document(
        fuchsian={'y_points': 32, 'k': {'kind': 'cosine'}},
        thresholds={'order_min': 1.5},
        radial={'points': 128},
    ))
    assert config.fuchsian['y_points'] == 32
    assert config.fuchsian['t_points'] == 128
    assert config.fuchsian['k'] == {'kind': 'cosine', 'mean': 1.0, 'amplitude': 0.3}
    assert config.thresholds['order_min'] == 1.5
    assert config.thresholds['order_max'] == DEFAULT_THRESHOLDS['order_max']
    assert config.radial['ladder'] == [2, 4, 8, 16]


def test_ellipsoid_document():
    config = RunConfig.from_dict({'domain': {'kind': 'ellipsoid', 'semi_axes': [1.0, 1.0, 0.5]},
                                  'resolutions': [65], 'delta': 0.1})
    assert isinstance(config.domain, Ellipsoid)
    assert config.delta == pytest.approx(0.1)
    assert config.h_trunc_for(65) == pytest.approx(0.125)


def test_h_trunc_must_stay_below_r0():
    document = {'domain': {'kind': 'ellipsoid', 'semi_axes': [1.0, 1.0, 0.5]}}
    with pytest.raises(ConfigError, match='h_trunc rule gives 0.5 ≥ r0 = 0.25 at resolution 17'):
        RunConfig.from_dict(document)
    with pytest.raises(ConfigError, match='r0'):
        RunConfig.from_dict(dict(document, resolutions=[65], h_trunc={'rule': 'absolute', 'value': 0.3}))


@pytest.mark.parametrize('document, message', [
    ({}, 'domain is required'),
    ([1, 2], 'JSON object'),
    (ball_document(n=2), 'n ≥ 3 required'),
    (ball_document(resolutions=[33, 17]), 'ascending'),
    (ball_document(resolutions=[]), 'non-empty'),
    (ball_document(h_trunc={'rule': 'relative', 'value': 1.0}), 'h_trunc.rule'),
    (ball_document(h_trunc={'rule': 'multiple', 'value': 1.0}), '2·h_grid'),
    (ball_document(solver={'mode': 'multigrid'}), 'mode'),
    (ball_document(solver={'formulation': 'w-form'}), 'formulation'),
    (ball_document(checks=['identities', 'spectral']), 'unknown suite'),
    (ball_document(thresholds={'order_minimum': 1.0}), 'unknown key'),
    (ball_document(alpha=1.0), 'alpha'),
    (ball_document(delta=1.5), 'delta must lie'),
    (ball_document(radial={'points': 8}), 'radial.points'),
    (ball_document(fuchsian={'k': {'kind': 'gaussian'}}), 'fuchsian.k.kind'),
    ({'domain': {'radius': 1.0}}, 'domain.kind is required'),
])
def test_invalid_documents(document, message):
    with pytest.raises(ConfigError, match=message):
        RunConfig.from_dict(document)


def test_load_and_read_errors(tmp_path):
    path = tmp_path / 'config.json'
    path.write_text(json.dumps(ball_document(seed=7)))
    assert RunConfig.load(str(path)).seed == 7

    broken = tmp_path / 'broken.json'
    broken.write_text('{"domain": ')
    with pytest.raises(ConfigError, match='not valid JSON'):
        RunConfig.load(str(broken))
    with pytest.raises(ConfigError, match='cannot read'):
        RunConfig.load(str(tmp_path / 'missing.json'))


def test_database_path(monkeypatch, tmp_path):
    config = RunConfig.from_dict(ball_document(output_dir=str(tmp_path)))
    assert config.database_path() == str(tmp_path / 'runs.db')
    monkeypatch.setenv('HYPRAD_DATABASE', '/tmp/elsewhere.db')
    assert config.database_path() == '/tmp/elsewhere.db'


def test_to_dict_round_trips_through_from_dict():
    config = RunConfig.from_dict(ball_document(checks=['identities'], seed=3))
    again = RunConfig.from_dict(json.loads(json.dumps(config.to_dict())))
    assert again.to_dict() == config.to_dict()
