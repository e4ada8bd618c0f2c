"""
Tests for the SQLite run ledger.
"""
import pytest

from db.database import RunStore


@pytest.fixture
def store():
    ledger = RunStore(":memory:")
    yield ledger
    ledger.close()


def test_run_lifecycle(store):
    run_id = store.start_run({'subcommand': 'solve', 'model_name': 'merton_diffusion', 'seed': 0,
                              'output_dir': 'runs/merton_diffusion/solve'})
    assert store.get_run(run_id)['status'] == 'RUNNING'
    store.finish_run(run_id, 0)
    run = store.get_run(run_id)
    assert run['status'] == 'OK'
    assert run['exit_code'] == 0
    assert run['finished_at'] is not None


def test_failed_run_keeps_message(store):
    run_id = store.start_run({'subcommand': 'validate'})
    store.finish_run(run_id, 1, "line 7, field 'problem.p': not a number")
    run = store.get_run(run_id)
    assert run['status'] == 'FAILED'
    assert "problem.p" in run['message']


def test_artifacts_and_solutions(store):
    run_id = store.start_run({'subcommand': 'solve', 'model_name': 'compound_poisson'})
    store.save_artifact(run_id, 'solution.json', 'runs/compound_poisson/solve/solution.json', 'ab' * 32)
    store.save_solution(run_id, {'p': 0.5, 'g_star': 0.05, 'a': 0.05, 'verdict': 'finite',
                                 'location': 'interior', 'pi_hat': [1.125]})
    store.save_estimate(run_id, 'optimal', {'mean': 2.05, 'se': 0.01, 'n_paths': 1000})
    artifacts = store.get_artifacts(run_id)
    assert [a['name'] for a in artifacts] == ['solution.json']
    solution = store.get_solutions(run_id)[0]
    assert solution['pi_hat_json'] == '[1.125]'
    assert solution['verdict'] == 'finite'


def test_runs_are_listed_newest_first(store):
    first = store.start_run({'subcommand': 'validate'})
    second = store.start_run({'subcommand': 'solve'})
    assert [run['id'] for run in store.get_runs()] == [second, first]
    assert store.get_run(999) is None


def test_ledger_file_is_created(tmp_path):
    path = tmp_path / "nested" / "ledger.db"
    ledger = RunStore(str(path))
    ledger.start_run({'subcommand': 'nuip'})
    ledger.close()
    assert path.exists()
