import json
import shutil

import pytest

import indfind.pipeline as pipeline
from indfind.cli import main
from indfind.errors import ConfigError, NumericError
from indfind.pipeline import RunConfig, cmd_grid, parse_config_text, read_config_file

FAST = ["--set", "sppmi.dim=8", "--set", "stability.n_runs=2"]


@pytest.fixture(scope="module")
def cohort_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cohort")
    assert main(["synth", "--out", str(out), "--n-patients", "300", "--seed", "3"]) == 0
    return out


def run(cohort_dir, out, *extra):
    return main(["run", "--config", str(cohort_dir / "run.cfg"), "--out", str(out), *FAST, *extra])


def test_synth_twice_is_identical(cohort_dir, tmp_path):
    assert main(["synth", "--out", str(tmp_path), "--n-patients", "300", "--seed", "3"]) == 0
    for name in ("events.csv", "patients.csv", "vocabulary.csv", "roles.csv", "run.cfg"):
        assert (tmp_path / name).read_bytes() == (cohort_dir / name).read_bytes()


def test_usage_errors_exit_2(cohort_dir, tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["synth"])
    assert exc.value.code == 2
    assert main(["run", "--config", str(cohort_dir / "run.cfg")]) == 2
    assert main(["synth", "--out", str(tmp_path), "--set", "bogus=1"]) == 2
    assert main(["run", "--config", str(cohort_dir / "run.cfg"), "--set", "nope=1"]) == 2


def test_bad_fraction_rejected_before_compute(cohort_dir, tmp_path):
    out = tmp_path / "o"
    assert run(cohort_dir, out, "--set", "stability.fraction=1.5") == 2
    assert not out.exists()


def test_run_is_reproducible(cohort_dir, tmp_path):
    assert run(cohort_dir, tmp_path / "a") == 0
    assert run(cohort_dir, tmp_path / "b") == 0
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert set(ma["outputs"]) == {"waterfall.csv", "vocabulary.csv", "cooccurrence.csv", "embeddings.csv",
                                  "stability.csv", "ranked_full.csv", "ranked_list.csv", "evaluation.txt"}
    assert ma["outputs"] == mb["outputs"]
    assert ma["config_hash"] == mb["config_hash"]
    assert not list((tmp_path / "a").glob("*.partial"))
    assert run(cohort_dir, tmp_path / "c", "--seed", "9") == 0
    mc = json.loads((tmp_path / "c" / "manifest.json").read_text())
    assert mc["outputs"]["embeddings.csv"] != ma["outputs"]["embeddings.csv"]


def test_layer_precedence(tmp_path):
    cfg = tmp_path / "x.cfg"
    cfg.write_text("sppmi.dim = 20\nsppmi.alpha = 0.5\nseed = 4\npaths.events = ev.csv\n")
    file_layer = read_config_file(cfg)
    assert file_layer["paths.events"] == str(tmp_path / "ev.csv")
    merged = RunConfig.from_layers(file_layer, {"sppmi.dim": "30", "seed": "5"}, {"seed": 6})
    assert merged["sppmi.dim"] == 30 and merged["sppmi.alpha"] == 0.5 and merged["seed"] == 6
    assert merged["sppmi.window_days"] == 360
    assert main(["validate-config", "--config", str(cfg), "--set", "sppmi.dim=30"]) == 2  # ev.csv missing


def test_validate_config_prints_resolved(cohort_dir, tmp_path, capsys):
    assert main(["validate-config", "--config", str(cohort_dir / "run.cfg"), "--out", str(tmp_path),
                 "--set", "sppmi.dim=12"]) == 0
    text = capsys.readouterr().out
    assert "sppmi.dim = 12" in text and f"paths.events = {cohort_dir / 'events.csv'}" in text
    assert not list(tmp_path.iterdir())


def test_config_text_errors():
    with pytest.raises(ConfigError):
        parse_config_text("no equals sign here")
    with pytest.raises(ConfigError):
        RunConfig.from_layers({"sppmi.dim": "many"})
    with pytest.raises(ConfigError):
        RunConfig.from_layers({"sppmi.dim": 0})


def test_data_error_exits_3(cohort_dir, tmp_path):
    bad = tmp_path / "in"
    shutil.copytree(cohort_dir, bad)
    with open(bad / "events.csv", "a") as fh:
        fh.write("P000001,not-a-date,A01,ICD10\n")
    assert run(bad, tmp_path / "o") == 3
    assert run(bad, tmp_path / "o2", "--set", "cohort.skip_bad_rows=true") == 0


def test_numeric_error_exits_4_and_keeps_partials(cohort_dir, tmp_path, monkeypatch):
    def broken(*args, **kwargs):
        raise NumericError("singular")

    monkeypatch.setattr(pipeline, "rank_indications", broken)
    out = tmp_path / "o"
    assert run(cohort_dir, out) == 4
    assert (out / "embeddings.csv.partial").exists()
    assert not (out / "embeddings.csv").exists() and not (out / "manifest.json").exists()


def test_grid_resumes_after_interruption(cohort_dir, tmp_path):
    grid = tmp_path / "g.cfg"
    grid.write_text("dim = 4, 6, 8\neigen_weight = 0.0, 1.0\n")
    config = RunConfig.from_layers(read_config_file(cohort_dir / "run.cfg"),
                                   {"paths.out": str(tmp_path / "o"), "paths.grid": str(grid)})

    class Stop(Exception):
        pass

    def stop_after(n):
        seen = []

        def hook(_):
            seen.append(1)
            if len(seen) == n:
                raise Stop

        return hook

    with pytest.raises(Stop):
        cmd_grid(config, stop_after(4))
    manifest = cmd_grid(config)
    assert manifest["grid_points"] == 6 and manifest["computed_points"] == 2
    full = RunConfig.from_layers(config.values, {"paths.out": str(tmp_path / "fresh")})
    fresh = cmd_grid(full)
    assert fresh["computed_points"] == 6
    assert (tmp_path / "o" / "grid_scores.csv").read_bytes() == \
        (tmp_path / "fresh" / "grid_scores.csv").read_bytes()
    best = (tmp_path / "o" / "best_config.cfg").read_text()
    assert best.startswith("sppmi.window_days = 360\nsppmi.dim = ")
    assert not (tmp_path / "o" / "grid_state.json").exists()


def test_ablate_and_project_commands(cohort_dir, tmp_path):
    base = ["--config", str(cohort_dir / "run.cfg"), "--set", "sppmi.dim=8"]
    assert main(["ablate", *base, "--out", str(tmp_path / "a"), "--fractions", "0.5,1.0"]) == 0
    lines = (tmp_path / "a" / "ablation.csv").read_text().splitlines()
    assert len(lines) == 3 and lines[1].startswith("0.5,")
    assert main(["project", *base, "--out", str(tmp_path / "p")]) == 0
    assert (tmp_path / "p" / "projection.csv").read_text().startswith("feature_name,chapter,x,y\n")
