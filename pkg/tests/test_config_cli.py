import json

import jsonschema
import pytest

from policysteer.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, _resolve_config, build_parser, main
from policysteer.config import RUN_CONFIG_SCHEMA, RunConfig
from policysteer.exceptions import ConfigurationError
from policysteer.metrics import REPORT_SCHEMA

SMALL = {
    "schema_version": 1,
    "n_demos_per_mode": 3,
    "n_rollouts": 4,
    "n_test": 4,
    "wm_d_h": 8,
    "wm_d_z": 4,
    "wm_d_hidden": 16,
    "wm_max_epochs": 2,
    "wm_batch_size": 4,
    "n_samples": 12,
    "k": 3,
    "episodes": 2,
}


def write_config(tmp_path, **extra):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({**SMALL, "out_dir": str(tmp_path / "out"), **extra}))
    return str(path)


def test_defaults_validate_and_round_trip():
    cfg = RunConfig.default()
    jsonschema.validate(cfg.values, RUN_CONFIG_SCHEMA)
    assert RunConfig.from_dict(json.loads(cfg.to_json())).digest() == cfg.digest()
    assert cfg.worldmodel_config().d_h == 32
    assert cfg.steering_config().mode_weight_override == {"handle": 0.3, "rim": 0.7}


@pytest.mark.parametrize(
    "bad",
    [{"colour": "red"}, {"seed": -1}, {"wm_lr": "fast"}, {"n_samples": 2, "k": 6}, {"schema_version": 2}],
)
def test_invalid_configs(bad):
    with pytest.raises(ConfigurationError):
        RunConfig.from_dict({"schema_version": 1, **bad})


def test_unknown_key_exits_2(tmp_path, capsys):
    assert main(["ablate-metrics", "--config", write_config(tmp_path, colour="red")]) == EXIT_CONFIG
    assert "colour" in capsys.readouterr().err


def test_empty_modes_exit_2(tmp_path):
    assert main(["gen-data", "--config", write_config(tmp_path, modes=[])]) == EXIT_CONFIG


def test_seed_precedence(tmp_path, monkeypatch):
    cfg_path = write_config(tmp_path, seed=1)
    monkeypatch.setenv("RUN_SEED", "5")
    assert _resolve_config(build_parser().parse_args(["gen-data", "--config", cfg_path]))["seed"] == 5
    args = build_parser().parse_args(["gen-data", "--config", cfg_path, "--seed", "9"])
    assert _resolve_config(args)["seed"] == 9


def test_ablate_metrics_outputs(tmp_path, capsys):
    assert main(["ablate-metrics", "--config", write_config(tmp_path), "--csv"]) == EXIT_OK
    out = tmp_path / "out" / "ablation"
    for name in ("rouge_l", "tfidf_cosine", "category_match"):
        doc = json.loads((out / f"{name}.json").read_text())
        jsonschema.validate(doc, REPORT_SCHEMA)
        assert (doc["n_intra"], doc["n_inter"]) == (360, 768)
        assert (out / f"{name}.csv").exists()
    assert "intra=360 inter=768" in capsys.readouterr().out


def test_pipeline_end_to_end(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("RUN_SEED", raising=False)
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    assert main(["gen-data", "--config", cfg]) == EXIT_OK
    manifest = json.loads((out / "data" / "manifest.json").read_text())
    first = {p.name: p.read_bytes() for p in (out / "data").iterdir()}
    assert main(["gen-data", "--config", cfg]) == EXIT_CONFIG
    assert main(["gen-data", "--config", cfg, "--force"]) == EXIT_OK
    assert {p.name: p.read_bytes() for p in (out / "data").iterdir()} == first
    assert manifest["counts"] == {"demo": 6, "rollout": 4, "train": 6, "test": 4}

    assert main(["train", "--config", cfg]) == EXIT_OK
    assert "heldout_pred" in capsys.readouterr().out
    assert (out / "models" / "policy.json").exists() and (out / "models" / "worldmodel.json").exists()

    assert main(["steer", "--config", cfg]) == EXIT_OK
    summary = json.loads((out / "steer" / "cup-serve-steer.summary.json").read_text())
    assert summary["episodes"] == 2 and len(summary["ci95"]) == 2
    assert summary["run_config_hash"] == RunConfig.load(cfg).digest()
    assert len((out / "steer" / "cup-serve-steer.jsonl").read_text().splitlines()) == 2

    assert main(["steer", "--config", cfg, "--baseline", "--task", "cup-oil"]) == EXIT_OK
    assert (out / "steer" / "cup-oil-baseline.summary.json").exists()

    assert main(["monitor", "--config", cfg]) == EXIT_OK
    report = json.loads((out / "monitor" / "cup-serve.json").read_text())
    assert report["n"] == 4 and report["positive_class"] == "failure"

    (out / "models" / "worldmodel.bin").write_bytes(b"\0" * 16)
    assert main(["steer", "--config", cfg]) == EXIT_CONFIG


def test_unreachable_client_leaves_no_summary(tmp_path, capsys):
    cfg = write_config(tmp_path, verifier_endpoint="http://127.0.0.1:9/v1", verifier_timeout=0.5, verifier_retries=0)
    assert main(["gen-data", "--config", cfg]) == EXIT_OK
    assert main(["train", "--config", cfg]) == EXIT_OK
    assert main(["steer", "--config", cfg, "--backend", "client"]) == EXIT_RUNTIME
    steer_dir = tmp_path / "out" / "steer"
    assert not any(steer_dir.glob("*.summary.json"))
    assert not any(steer_dir.glob("*.jsonl"))
    assert "error:" in capsys.readouterr().err


def test_missing_checkpoints_exit_2(tmp_path):
    assert main(["steer", "--config", write_config(tmp_path)]) == EXIT_CONFIG
