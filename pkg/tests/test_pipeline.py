import json

import numpy as np
import pytest

from latentgraph import io
from latentgraph.cli import main
from latentgraph.pipeline import (EXIT_CODES, ConfigError, RunManifest, StageError, config_hash,
                                  parse_override, resolve_config, run_pipeline, run_stage)


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("small")
    cfg = resolve_config(profile="small", output_dir=out)
    man = run_pipeline(cfg)
    return cfg, out, man


def test_override_parsing():
    assert parse_override("glm.lr=0.05") == {"glm": {"lr": 0.05}}
    assert parse_override("transformer.heads=[0,1]") == {"transformer": {"heads": [0, 1]}}
    assert parse_override("glm.optimizer=gd") == {"glm": {"optimizer": "gd"}}
    with pytest.raises(ConfigError):
        parse_override("glm.lr")


@pytest.mark.parametrize("override", ["glm.nope=1", "simulation.dt_ms=5", "transformer.ensemble=3",
                                      "network.n=7", "seeds.simulation=null"])
def test_bad_config_rejected(override):
    with pytest.raises(ConfigError):
        resolve_config(profile="small", overrides=[override])


def test_config_error_exit_code(tmp_path, capsys):
    assert main(["run", "--profile", "small", "--out", str(tmp_path), "--set", "glm.nope=1"]) == 2
    assert "nope" in capsys.readouterr().err


def test_full_run_produces_18_cells(small_run):
    cfg, out, man = small_run
    rep = io.read_json(out / "report/report.json")
    cells = [m for v in rep["scores"].values() for view in v.values() for m in view]
    assert len(cells) == 18
    man.check(out)
    assert man.status == "complete"
    assert man.config_hash == config_hash(cfg)
    for p in man.artifacts.values():
        assert (out / p).exists()
    assert (out / "heatmaps/transformer_co_input.pgm").read_bytes().startswith(b"P5\n")


def test_rerun_uses_cache(small_run):
    cfg, out, _ = small_run
    before = (out / "report/report.json").read_bytes()
    assert not any(run_stage(s, cfg) for s in ("simulate", "train-transformer", "compare"))
    assert (out / "report/report.json").read_bytes() == before


def test_fresh_rerun_is_bit_identical(small_run, tmp_path):
    cfg, out, _ = small_run
    cfg2 = resolve_config(out / "manifest.json", output_dir=tmp_path)
    assert {k: v for k, v in cfg2.items() if k != "output_dir"} == \
        {k: v for k, v in cfg.items() if k != "output_dir"}
    run_pipeline(cfg2)
    for rel in ("data/spikes.csv", "estimates/glm.csv", "estimates/transformer.csv",
                "report/report.json", "report/report.csv"):
        assert (tmp_path / rel).read_bytes() == (out / rel).read_bytes(), rel


def test_single_model_is_noted(tmp_path):
    cfg = resolve_config(profile="small", output_dir=tmp_path,
                         overrides=["transformer.ensemble=1", "seeds.transformer=[5]"])
    run_pipeline(cfg)
    assert io.read_json(tmp_path / "report/report.json")["meta"]["aggregation"] == "single model"
    assert "single model" in (tmp_path / "report/table.txt").read_text()


def test_simulate_twice_same_csv(tmp_path):
    for d in ("a", "b"):
        assert main(["simulate", "--profile", "small", "--out", str(tmp_path / d)]) == 0
    assert (tmp_path / "a/data/spikes.csv").read_bytes() == (tmp_path / "b/data/spikes.csv").read_bytes()


def test_extract_without_checkpoints_names_files(tmp_path, capsys):
    code = main(["extract", "--profile", "small", "--out", str(tmp_path)])
    assert code == EXIT_CODES["extract"]
    err = capsys.readouterr().err
    assert "model_seed0.npz" in err and "glm/weights.npz" in err


@pytest.mark.parametrize("stage", ["prepare", "train-glm", "train-transformer", "compare", "report"])
def test_each_stage_reports_missing_inputs(tmp_path, stage):
    cfg = resolve_config(profile="small", output_dir=tmp_path)
    with pytest.raises(StageError) as err:
        run_stage(stage, cfg)
    assert err.value.exit_code == EXIT_CODES[stage]
    assert str(tmp_path) in str(err.value)


def test_distinct_exit_codes():
    assert len(set(EXIT_CODES.values())) == len(EXIT_CODES)
    assert 0 not in EXIT_CODES.values()


def test_failed_stage_recorded(tmp_path, small_run):
    _, out, _ = small_run
    cfg = resolve_config(profile="small", output_dir=tmp_path)
    run_stage("simulate", cfg)
    (tmp_path / "data/spikes.csv").write_text("garbage\n")
    with pytest.raises(StageError):
        run_stage("prepare", cfg)
    man = io.read_json(tmp_path / "manifest.json")
    assert man["failed_stage"] == "prepare" and man["status"] == "failed"


def test_compare_estimate_equal_to_truth(small_run, capsys):
    _, out, _ = small_run
    adj = out / "network/adjacency.csv"
    assert main(["compare", "--estimate", str(adj), "--truth", str(adj)]) == 0
    report = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    for view in report["scores"]["adjacency"].values():
        assert view["pearson_r2_signed"] == pytest.approx(1.0)
        assert view["spearman_r2_signed"] == pytest.approx(1.0)
        assert view["spectral_dist"] == pytest.approx(0.0, abs=1e-12)


def test_compare_missing_estimate(tmp_path, capsys):
    code = main(["compare", "--estimate", str(tmp_path / "nope.csv"), "--truth", str(tmp_path / "a.csv")])
    assert code == EXIT_CODES["compare"]
    assert "nope.csv" in capsys.readouterr().err


def test_stage_does_not_touch_upstream(small_run, tmp_path):
    cfg, out, _ = small_run
    cfg = resolve_config(profile="small", output_dir=tmp_path)
    run_stage("simulate", cfg)
    run_stage("prepare", cfg)
    digest = (tmp_path / "data/spikes.csv").read_bytes()
    run_stage("prepare", cfg, force=True)
    assert (tmp_path / "data/spikes.csv").read_bytes() == digest


def test_attention_aggregates_exported(small_run):
    _, out, _ = small_run
    n_a = io.load_matrix(out / "attention/n_a.csv")
    n_z = io.load_matrix(out / "attention/n_z.csv")
    c = io.load_matrix(out / "estimates/transformer.csv")
    np.testing.assert_allclose(c, np.divide(n_a, n_z, out=np.zeros_like(n_a), where=n_z > 0))
    assert isinstance(RunManifest.open(out, resolve_config(profile="small", output_dir=out)), RunManifest)
