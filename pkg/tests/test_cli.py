from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from herdbandit.cli import main
from herdbandit.config import PRESETS, config_from_dict, load_preset
from herdbandit.harness import ConfigError


TINY_CONFIG = """\
schema_version: 1
experiment:
  horizon: 40
  n_arms: 3
  dimension: 2
  noise_variance: 1.0
  conformity: sample-per-seed
  n_seeds: 2
policies:
  - kind: ts-conf
  - kind: linucb
"""


def _write_config(tmp_path: Path) -> Path:
    path = tmp_path / "tiny.yaml"
    path.write_text(TINY_CONFIG)
    return path


def _toy_ratings(tmp_path: Path, n_users: int = 12, n_items: int = 12) -> Path:
    rng = np.random.default_rng(0)
    lines = ["user_id,item_id,rating,timestamp"]
    for u in range(n_users):
        for i in range(n_items):
            lines.append(f"{u},{i},{np.clip(rng.normal(3, 0.7), 0, 5):.3f},{u * n_items + i}")
    path = tmp_path / "ratings.csv"
    path.write_text("\n".join(lines) + "\n")
    return path


def test_missing_config_file_exits_2_and_names_path(tmp_path, capsys) -> None:
    missing = tmp_path / "nope.yaml"
    code = main(["run", "--config", str(missing), "--out", str(tmp_path / "o")])
    assert code == 2
    assert str(missing) in capsys.readouterr().err


def test_config_schema_violation_exits_2_with_field(tmp_path, capsys) -> None:
    bad = tmp_path / "bad.yaml"
    bad.write_text("schema_version: 1\nexperiment: {horizon: 0}\npolicies: [{kind: ts}]\n")
    code = main(["run", "--config", str(bad), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "horizon" in capsys.readouterr().err


def test_run_requires_exactly_one_config_source(tmp_path, capsys) -> None:
    code = main(["run", "--out", str(tmp_path / "o")])
    assert code == 2
    assert "--config or --preset" in capsys.readouterr().err


def test_run_writes_traces_and_summary(tmp_path, capsys) -> None:
    config = _write_config(tmp_path)
    out = tmp_path / "out"
    code = main(["run", "--config", str(config), "--out", str(out)])
    assert code == 0
    traces = sorted(p.name for p in (out / "traces").glob("*.csv"))
    assert len(traces) == 4  # 2 policies x 2 seeds
    assert (out / "summary.json").exists()
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary["policies"]) == {"TS-Conf", "LinUCB"}
    assert "mean final regret" in capsys.readouterr().out


def test_run_rerun_same_seed_byte_identical(tmp_path) -> None:
    config = _write_config(tmp_path)
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["run", "--config", str(config), "--out", str(out),
                     "--seed", "11"]) == 0
        outs.append(out)
    files_a = sorted(outs[0].rglob("*.*"))
    files_b = sorted(outs[1].rglob("*.*"))
    assert [p.relative_to(outs[0]) for p in files_a] == [
        p.relative_to(outs[1]) for p in files_b
    ]
    for a, b in zip(files_a, files_b):
        assert a.read_bytes() == b.read_bytes(), a.name


def test_simulate_same_seed_identical_instances(tmp_path) -> None:
    config = _write_config(tmp_path)
    instances = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["simulate", "--config", str(config), "--out", str(out),
                     "--seed", "7"]) == 0
        files = sorted((out / "instance").glob("*.inst"))
        assert len(files) == 2
        instances.append([f.read_bytes() for f in files])
    assert instances[0] == instances[1]


def test_ingest_writes_filtered_csv_and_report(tmp_path, capsys) -> None:
    ratings = _toy_ratings(tmp_path)
    out = tmp_path / "ingested"
    code = main(["ingest", "--ratings", str(ratings), "--out", str(out)])
    assert code == 0
    assert (out / "filtered.csv").exists()
    report = json.loads((out / "ingest_report.json").read_text())
    assert report["before"]["ratings"] == 144
    assert report["after"]["ratings"] == 144
    assert report["min_count"] == 10


def test_ingest_with_column_mapping(tmp_path) -> None:
    src = tmp_path / "renamed.csv"
    rows = ["uid,mid,score,when"]
    for u in range(11):
        for i in range(11):
            rows.append(f"{u},{i},3.0,{u + i}")
    src.write_text("\n".join(rows) + "\n")
    out = tmp_path / "ingested"
    code = main([
        "ingest", "--ratings", str(src), "--out", str(out),
        "--user-col", "uid", "--item-col", "mid",
        "--rating-col", "score", "--timestamp-col", "when",
    ])
    assert code == 0
    header = (out / "filtered.csv").read_text().splitlines()[0]
    assert header == "user_id,item_id,rating,timestamp"


def test_ingest_overfiltered_exits_nonzero(tmp_path, capsys) -> None:
    src = tmp_path / "sparse.csv"
    src.write_text("user_id,item_id,rating,timestamp\n1,1,3.0,0\n")
    code = main(["ingest", "--ratings", str(src), "--out", str(tmp_path / "o")])
    assert code == 1
    assert "at least 10" in capsys.readouterr().err


def test_fit_mf_writes_instance_with_requested_dimension(tmp_path, capsys) -> None:
    ratings = _toy_ratings(tmp_path)
    out = tmp_path / "fitted"
    code = main([
        "fit-mf", "--ratings", str(ratings), "--out", str(out),
        "--dim", "5", "--epochs", "3", "--n-arms", "4", "--seed", "0",
    ])
    assert code == 0
    instance = json.loads((out / "instance" / "ratings_d5.inst").read_text())
    assert instance["dimension"] == 5
    assert len(instance["arms"]) == 4
    assert all(len(arm["features"]) == 5 for arm in instance["arms"])
    assert "conformity estimate" in capsys.readouterr().out


def test_summarize_rebuilds_summary(tmp_path) -> None:
    config = _write_config(tmp_path)
    out = tmp_path / "out"
    assert main(["run", "--config", str(config), "--out", str(out)]) == 0
    redo = tmp_path / "redo"
    code = main(["summarize", "--traces", str(out / "traces"),
                 "--out", str(redo)])
    assert code == 0
    original = json.loads((out / "summary.json").read_text())
    rebuilt = json.loads((redo / "summary.json").read_text())
    assert original == rebuilt


def test_preset_paper_synthetic_default_shape() -> None:
    config = load_preset("paper-synthetic-default")
    assert config.dimension == 10
    assert config.noise_variance == 1.0
    assert config.n_arms == 10
    assert config.horizon == 50_000
    kinds = [spec.kind for spec in config.policies]
    assert "ts-conf" in kinds and "ts-conf-mcmc" in kinds


def test_preset_grids_cover_paper_settings() -> None:
    dims = {load_preset(f"synthetic-d{d}").dimension for d in (5, 10, 15, 20)}
    assert dims == {5, 10, 15, 20}
    noises = {
        load_preset(f"synthetic-noise-{s}").noise_variance
        for s in ("0.5", "1.0", "1.5", "2.0")
    }
    assert noises == {0.5, 1.0, 1.5, 2.0}


def test_all_presets_parse() -> None:
    for name in PRESETS:
        config = load_preset(name)
        assert config.horizon >= 1


def test_config_rejects_unknown_keys() -> None:
    document = {
        "schema_version": 1,
        "experiment": {"horizon": 10, "bogus_key": 1},
        "policies": [{"kind": "ts"}],
    }
    with pytest.raises(ConfigError, match="bogus_key"):
        config_from_dict(document)


def test_config_rejects_wrong_schema_version() -> None:
    with pytest.raises(ConfigError, match="schema_version"):
        config_from_dict({"schema_version": 9, "policies": [{"kind": "ts"}]})


def test_jobs_env_fallback(tmp_path, monkeypatch) -> None:
    monkeypatch.setenv("HERDBANDIT_JOBS", "2")
    config = _write_config(tmp_path)
    out = tmp_path / "out"
    assert main(["run", "--config", str(config), "--out", str(out)]) == 0
    assert (out / "summary.json").exists()
