import json
from pathlib import Path

import pytest

from qot.cli import EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_OK, ConfigError, RunConfig, main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def test_example_list(capsys):
    assert main(["example", "list"]) == EXIT_OK
    assert "car_stage" in capsys.readouterr().out


def test_distance_outputs_and_headers(tmp_path):
    out = tmp_path / "o"
    assert main(["distance", "--config", str(CONFIGS / "distance_markov3.json"), "--out", str(out)]) == EXIT_OK
    lines = (out / "distance.csv").read_text().splitlines()
    assert lines[0] == "# schema: 1" and lines[1].startswith("# config_hash: ")
    assert lines[2].startswith("# tolerances: ")
    rep = json.loads((out / "distance.json").read_text())
    assert rep["schema"] == 1 and len(rep["config_hash"]) == 16
    assert (out / "distance.png").exists()
    assert list((out / "geodesics").glob("pair_*.json"))


def test_no_plots_and_determinism(tmp_path):
    cfg = str(CONFIGS / "geodesic_qubit.json")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["geodesic", "--config", cfg, "--out", str(a), "--no-plots"]) == EXIT_OK
    assert main(["geodesic", "--config", cfg, "--out", str(b), "--no-plots", "--jobs", "3"]) == EXIT_OK
    assert not list(a.glob("*.png"))
    for name in ("geodesic.json", "geodesic.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_infeasible_pair_exit_code(tmp_path):
    cfg = _write(tmp_path, {"schema": 1, "example": "qubit", "K": 8,
                            "states": [{"kind": "diagonal", "values": [0.7, 0.3]},
                                       {"kind": "diagonal", "values": [0.2, 0.8]}]})
    out = tmp_path / "o"
    assert main(["distance", "--config", str(cfg), "--out", str(out), "--no-plots"]) == EXIT_INFEASIBLE
    assert "inf" in (out / "distance.csv").read_text()


@pytest.mark.parametrize("cfg", [
    {"schema": 1, "example": "qubit", "theta": 1.5},
    {"schema": 1, "example": "qubit", "K": 1},
    {"schema": 1, "example": "nowhere"},
    {"schema": 1, "example": "qubit", "f": "median"},
])
def test_bad_configs_exit_4(tmp_path, cfg):
    p = _write(tmp_path, cfg)
    assert main(["distance", "--config", str(p), "--out", str(tmp_path / "o"), "--no-plots"]) == EXIT_CONFIG


def test_missing_config_and_bad_lambda(tmp_path):
    assert main(["distance", "--config", str(tmp_path / "none.json")]) == EXIT_CONFIG
    assert main(["distance"]) == EXIT_CONFIG
    assert main(["certify", "--config", str(CONFIGS / "certify_pa1.json"), "--lam", "x"]) == EXIT_CONFIG


def test_run_config_hash_is_stable():
    a = RunConfig.from_json({"schema": 1, "example": "qubit", "K": 8, "seed": 2})
    b = RunConfig.from_json({"seed": 2, "K": 8, "example": "qubit", "schema": 1})
    assert a.hash == b.hash
    assert a.hash != RunConfig.from_json({"schema": 1, "example": "qubit", "K": 9, "seed": 2}).hash
    with pytest.raises(ConfigError):
        RunConfig.from_json({"schema": 2})


def test_chain_and_entropy_flow(tmp_path):
    out = tmp_path / "c"
    assert main(["chain", "--config", str(CONFIGS / "chain_car3.json"), "--out", str(out), "--no-plots"]) == EXIT_OK
    rep = json.loads((out / "chain.json").read_text())
    assert rep["table"]["nondecreasing"] and rep["entropy_profile"]["monotone"]
    out = tmp_path / "e"
    assert main(["entropy-flow", "--config", str(CONFIGS / "entropy_flow_qubit.json"), "--out", str(out)]) == EXIT_OK
    assert (out / "entropy_flow.csv").exists() and (out / "entropy_flow.png").exists()


def test_certify_with_fixed_lambda(tmp_path):
    out = tmp_path / "z"
    cfg = _write(tmp_path, {"schema": 1, "example": {"kind": "markov", "K": [[0.5, 0.5], [0.5, 0.5]]},
                            "K": 8, "samples": 4, "pairs": 1})
    assert main(["certify", "--config", str(cfg), "--out", str(out), "--lam", "2.0", "--no-plots"]) == EXIT_OK
    rep = json.loads((out / "certify.json").read_text())
    assert rep["verdict"] == "pass" and rep["lambda_tested"] == 2.0
