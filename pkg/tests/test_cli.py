import json

import numpy as np
import pytest

from rnnstab.cli import EXIT_ERROR, EXIT_INFEASIBLE, EXIT_OK, RunConfig, main
from rnnstab.errors import ParseError
from rnnstab.model import save_model

from conftest import integrator_plant, saturated_plant, scalar_plant


@pytest.fixture
def files(tmp_path):
    paths = {}
    for name, m in (("scalar", scalar_plant()), ("integ", integrator_plant()),
                    ("sat", saturated_plant())):
        paths[name] = str(tmp_path / f"{name}.json")
        save_model(m, paths[name])
    return paths


def run(tmp_path, *argv):
    return main(list(argv) + ["--out", str(tmp_path / "out")])


def read(tmp_path, name):
    return json.loads((tmp_path / "out" / name).read_text())


def test_analyze_global(tmp_path, files):
    assert run(tmp_path, "analyze", "--model", files["scalar"], "--method", "global") == EXIT_OK
    assert read(tmp_path, "analysis.json")["validated"]
    assert read(tmp_path, "certificate.json")["method"] == "Global"


def test_analyze_narrow_writes_sweep(tmp_path, files):
    assert run(tmp_path, "analyze", "--model", files["scalar"], "--method", "narrow",
               "--imax", "3") == EXIT_OK
    rows = (tmp_path / "out" / "sweep.csv").read_text().strip().splitlines()
    assert rows[0] == "i,h,gamma,status" and len(rows) == 5


def test_analyze_lemma_diagnostic(tmp_path, files, capsys):
    # K = 0 leaves the integrator eigenvalue at one
    assert run(tmp_path, "analyze", "--model", files["integ"], "--method", "aux") == EXIT_INFEASIBLE
    assert "Lemma 5" in capsys.readouterr().err
    assert read(tmp_path, "analysis.json")["lemma"] == "Lemma 5"
    assert run(tmp_path, "analyze", "--model", files["integ"], "--method", "global") == EXIT_INFEASIBLE


def test_synthesize_and_simulate(tmp_path, files, capsys):
    code = run(tmp_path, "synthesize", "--model", files["sat"], "--method", "aux",
               "--delta-bar", "5", "--delta-bar", "20")
    assert code == EXIT_OK
    csv = (tmp_path / "out" / "tradeoff_RegionalAux.csv").read_text().splitlines()
    assert len(csv) == 3 and csv[0].startswith("delta_bar,status,gamma")
    gain = tmp_path / "out" / "gain_RegionalAux_20.json"
    assert gain.exists()
    capsys.readouterr()
    assert main(["simulate", "--model", files["sat"], "--gain", str(gain), "--steps", "50",
                 "--out", str(tmp_path / "sim")]) == EXIT_OK
    assert not json.loads(capsys.readouterr().out)["diverged"]


def test_synthesize_infeasible_bound(tmp_path, files):
    # below the unconstrained H2 optimum (about 3.81) nothing is feasible
    assert run(tmp_path, "synthesize", "--model", files["sat"], "--method", "aux",
               "--delta-bar", "1") == EXIT_INFEASIBLE


def test_simulate_requires_gain(tmp_path, files, capsys):
    assert run(tmp_path, "simulate", "--model", files["scalar"]) == EXIT_ERROR
    assert "gain" in capsys.readouterr().err


def test_certify_sector(tmp_path, capsys):
    assert run(tmp_path, "certify-sector", "--kind", "tanh") == EXIT_OK
    assert read(tmp_path, "sector_report.json")["certified"]
    assert run(tmp_path, "certify-sector", "--kind", "tanh", "--theta", "0.1") == EXIT_INFEASIBLE
    assert "witness" in capsys.readouterr().out


def test_usage_errors(tmp_path, files):
    assert main(["nonsense"]) == EXIT_ERROR
    assert run(tmp_path, "analyze") == EXIT_ERROR
    assert run(tmp_path, "analyze", "--model", str(tmp_path / "missing.json")) == EXIT_ERROR
    assert run(tmp_path, "analyze", "--model", files["scalar"], "--esn", files["scalar"]) == EXIT_ERROR
    bad = tmp_path / "cfg.json"
    bad.write_text(json.dumps({"bogus": 1}))
    assert run(tmp_path, "analyze", "--config", str(bad)) == EXIT_ERROR
    with pytest.raises(ParseError):
        RunConfig(method="other").method_name()


def test_config_file_and_override(tmp_path, files):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": files["scalar"], "method": "aux", "n_samples": 500}))
    assert run(tmp_path, "analyze", "--config", str(cfg), "--method", "global") == EXIT_OK
    assert read(tmp_path, "certificate.json")["method"] == "Global"


def test_benchmark_small(tmp_path):
    code = run(tmp_path, "benchmark", "--ns", "3", "--samples", "6000", "--delta-bar", "10",
               "--imax", "20", "--steps", "100", "--n-samples", "2000")
    assert code == EXIT_OK
    b = read(tmp_path, "benchmark.json")
    assert b["global_analysis"].startswith("Infeasible (Lemma 2")
    assert b["methods"]["narrow"]["validated"]
    assert np.isfinite(b["fit_percent"])
