"""
End-to-end tests of the command line: subcommands, artifacts and exit codes.
"""
import json

import pandas as pd
import pytest
import yaml

import main
from utils.errors import ProjectionNotClosed


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv(main.OUTPUT_ENV, raising=False)
    return tmp_path


def artifact(workdir, model, subcommand, name):
    return workdir / "runs" / model / subcommand / name


def test_solve_is_reproducible(workdir, capsys):
    assert main.run(["solve", "merton_diffusion"]) == main.EXIT_OK
    path = artifact(workdir, "merton_diffusion", "solve", "solution.json")
    first = path.read_bytes()
    solution = json.loads(first)
    assert solution['pi_hat'] == pytest.approx([4.0], abs=1e-8)
    assert solution['g_star'] == pytest.approx(0.16, abs=1e-10)
    assert solution['finiteness'] == "finite"
    assert capsys.readouterr().out.rstrip().endswith("(finite)")

    assert main.run(["solve", "merton_diffusion"]) == main.EXIT_OK
    assert path.read_bytes() == first

    manifest = json.loads(artifact(workdir, "merton_diffusion", "solve", "manifest.json").read_text())
    assert manifest['subcommand'] == "solve"
    assert set(manifest['artifacts']) == {"solution.json"}
    assert len(manifest['model_sha256']) == 64


def test_nuip_prints_verdict(workdir, capsys):
    assert main.run(["nuip", "merton_diffusion"]) == main.EXIT_OK
    assert capsys.readouterr().out.strip() == "NUIP holds"

    assert main.run(["nuip", "increasing_jump_asset"]) == main.EXIT_OK
    assert capsys.readouterr().out.startswith("NUIP violated; witness [")
    verdict = json.loads(artifact(workdir, "increasing_jump_asset", "nuip", "nuip.json").read_text())
    assert verdict['status'] == "violated"


def test_unparsable_model_exits_with_solver_error(workdir, capsys):
    bad = workdir / "broken.yaml"
    bad.write_text("schema_version: 1\ntriplet:\n  b: [0.1\n", encoding="utf-8")
    assert main.run(["solve", str(bad)]) == main.EXIT_SOLVER_ERROR
    assert "error:" in capsys.readouterr().err
    assert main.run(["solve", "no_such_model"]) == main.EXIT_SOLVER_ERROR


def test_invalid_model_still_writes_report(workdir):
    model = workdir / "negative_rate.yaml"
    model.write_text(yaml.safe_dump({
        'schema_version': 1,
        'name': 'negative_rate',
        'triplet': {'b': [0.1], 'c': [[-0.04]]},
        'problem': {'p': 0.5},
    }), encoding="utf-8")
    assert main.run(["validate", str(model)]) == main.EXIT_SOLVER_ERROR
    report = json.loads(artifact(workdir, "negative_rate", "validate", "validate.json").read_text())
    assert not report['report']['valid']


def test_output_directory_from_environment(workdir, monkeypatch):
    target = workdir / "elsewhere"
    monkeypatch.setenv(main.OUTPUT_ENV, str(target))
    assert main.run(["geometry", "merton_box"]) == main.EXIT_OK
    geometry = json.loads((target / "merton_box" / "geometry" / "geometry.json").read_text())
    assert geometry['nuip']['status'] == "holds"
    assert not (workdir / "runs" / "merton_box").exists()

    explicit = workdir / "explicit"
    assert main.run(["geometry", "merton_box", "--out", str(explicit)]) == main.EXIT_OK
    assert (explicit / "merton_box" / "geometry" / "geometry.json").is_file()


def test_g_scan_columns(workdir):
    assert main.run(["g-scan", "merton_box", "--span", "2", "--points", "5"]) == main.EXIT_OK
    frame = pd.read_csv(artifact(workdir, "merton_box", "g-scan", "g_scan.csv"))
    assert list(frame.columns) == ['y1', 'g', 'G0', 'in_C']
    assert frame['y1'].tolist() == [-2.0, -1.0, 0.0, 1.0, 2.0]
    assert frame['in_C'].tolist() == [False, False, True, True, False]
    assert frame['g'][3] == pytest.approx(0.07, abs=1e-10)


def test_qmeasure_writes_model_under_Q(workdir):
    assert main.run(["qmeasure", "merton_diffusion"]) == main.EXIT_OK
    report = json.loads(artifact(workdir, "merton_diffusion", "qmeasure", "qmeasure.json").read_text())
    assert report['exists']
    q_model = yaml.safe_load(artifact(workdir, "merton_diffusion", "qmeasure", "q_model.yaml").read_text())
    assert q_model['name'] == "merton_diffusion_Q"
    assert q_model['triplet']['b'][0] == pytest.approx(0.0, abs=1e-8)


def test_curves_artifacts(workdir):
    assert main.run(["curves", "merton_box"]) == main.EXIT_OK
    curves = json.loads(artifact(workdir, "merton_box", "curves", "curves.json").read_text())
    assert curves['bellman_residual'] <= 1e-8
    frame = pd.read_csv(artifact(workdir, "merton_box", "curves", "curves.csv"))
    assert len(frame) == 101


def test_simulate_given_portfolio(workdir):
    argv = ["simulate", "merton_diffusion", "--policy", "file", "--pi", "0.5", "--paths", "500", "--grid", "5",
            "--seed", "3"]
    assert main.run(argv) == main.EXIT_OK
    data = json.loads(artifact(workdir, "merton_diffusion", "simulate", "simulate.json").read_text())
    assert data['pi'] == [0.5]
    assert data['seed'] == 3
    assert data['estimate']['n_paths'] == 500
    wealth = pd.read_csv(artifact(workdir, "merton_diffusion", "simulate", "wealth.csv"))
    assert list(wealth.columns) == ['t', 'mean', 'q05', 'median', 'q95']
    assert len(wealth) == 6


def test_simulate_file_policy_needs_portfolio(workdir):
    assert main.run(["simulate", "merton_diffusion", "--policy", "file", "--paths", "10"]) == main.EXIT_SOLVER_ERROR


def test_gscan_rejects_three_assets(workdir):
    assert main.run(["g-scan", "leaning_cone"]) == main.EXIT_SOLVER_ERROR


@pytest.mark.slow
def test_verify_compound_poisson(workdir):
    argv = ["verify", "compound_poisson", "--paths", "100000", "--seed", "7"]
    assert main.run(argv) == main.EXIT_OK
    report = json.loads(artifact(workdir, "compound_poisson", "verify", "verify.json").read_text())
    assert report['passed']
    names = [check['name'] for check in report['checks']]
    assert names[:3] == ["model_valid", "nuip", "maximizer_attained"]
    assert "q_measure" in names


def test_verify_accepts_unattained_supremum(workdir):
    with pytest.warns(ProjectionNotClosed):
        assert main.run(["verify", "leaning_cone"]) == main.EXIT_OK
    report = json.loads(artifact(workdir, "leaning_cone", "verify", "verify.json").read_text())
    assert report['passed']
    attained = next(check for check in report['checks'] if check['name'] == "maximizer_attained")
    assert attained['passed']
    assert "not attained" in attained['reason']


def test_subcommand_help_describes_each_command(capsys):
    with pytest.raises(SystemExit):
        main.run(["--help"])
    listing = capsys.readouterr().out
    for name, func in main.SUBCOMMANDS.items():
        summary = func.__doc__.strip().splitlines()[0]
        assert summary != name
        assert summary[:30] in " ".join(listing.split())
