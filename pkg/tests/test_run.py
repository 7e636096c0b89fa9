import sqlite3

import pytest

from src import database_sqlite
from src.database_sqlite import use_database
from src.models.config import RunConfig
from src.models.run import CheckResult, Run


@pytest.fixture
def ledger(tmp_path, monkeypatch):
    path = str(tmp_path / 'ledger' / 'runs.db')
    monkeypatch.setattr(database_sqlite, 'DATABASE_PATH', database_sqlite.DATABASE_PATH)
    use_database(path)
    return path


@pytest.fixture
def config():
    return RunConfig.from_dict({'domain': {'kind': 'ball', 'radius': 1.0}, 'resolutions': [17]})


def test_tables_are_created(ledger):
    conn = sqlite3.connect(ledger)
    names = {row[0] for row in conn.execute("SELECT name FROM sqlite_master WHERE type = 'table'")}
    conn.close()
    assert {'runs', 'check_results'} <= names


def test_run_lifecycle(ledger, config):
    run = Run.create('solve', config)
    assert run.id is not None
    assert run.status == 'running'
    assert run.domain_kind == 'ball'
    assert run.n == 3

    run.finish('ok', 0, {'files': ['u_17.grid']})
    stored = Run.get_by_id(run.id)
    assert stored.status == 'ok'
    assert stored.exit_code == 0
    assert stored.to_dict()['summary'] == {'files': ['u_17.grid']}


def test_get_all_is_newest_first(ledger, config):
    first = Run.create('solve', config)
    second = Run.create('verify', config)
    third = Run.create('verify', config)
    assert [r.id for r in Run.get_all()] == [third.id, second.id, first.id]
    assert [r.id for r in Run.get_all(limit=1)] == [third.id]
    assert [r.id for r in Run.get_all(command='verify')] == [third.id, second.id]


def test_missing_run(ledger):
    assert Run.get_by_id(12345) is None


def test_check_results(ledger, config):
    run = Run.create('verify', config)
    payload = {'samples': 10, 'violations': 2, 'worst_margin': -0.5, 'detail': [1, 2]}
    check_id = CheckResult.create(run.id, 'sandwich', 'failed', payload)
    CheckResult.create(run.id, 'identities', 'passed', {'checks': []})
    assert check_id is not None

    checks = run.get_checks()
    assert [c.check_name for c in checks] == ['sandwich', 'identities']
    assert checks[0].violations == 2
    assert checks[0].worst_margin == -0.5
    assert checks[1].samples is None
    assert checks[0].to_dict()['payload'] == payload

    data = Run.get_by_id(run.id).to_dict(include_checks=True)
    assert [c['status'] for c in data['checks']] == ['failed', 'passed']
