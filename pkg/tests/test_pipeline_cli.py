import json
import os
import subprocess
import sys

import pytest

from catoptra import cli
from catoptra import imaging_io as io
from catoptra.pipeline import PipelineConfig, manifest_digest, reference_lens, thread_count

TINY = {
    "scene": "sphere",
    "simulate": {"resolution": 24, "held_out": 2, "mosaic_scale": 1, "reproject_samples": 1,
                 "render_samples": 1},
    "carve": {"resolution": 24},
    "fit": {"iterations": 3, "n_gaussians": 20},
}


@pytest.fixture
def tiny_config(tmp_path):
    p = tmp_path / "tiny.json"
    p.write_text(json.dumps(TINY))
    return p


def run_all(out, config, extra=()):
    for cmd in ("simulate", "carve", "vhdepth", "fit", "eval", "report"):
        assert cli.main([cmd, "--out", str(out), "--config", str(config), *extra]) == 0, cmd


def test_design_example(tmp_path, capsys):
    code = cli.main(["design", "--out", str(tmp_path), "--scene-box", "0.8", "0.8", "0.6",
                     "--max-beam-width", "1.0"])
    assert code == 0
    out = capsys.readouterr().out
    assert "18.4349" in out
    lens = json.loads((tmp_path / "design" / "lens.json").read_text())
    assert lens["alpha1_deg"] == pytest.approx(60.0)
    for name in ("cross_section.svg", "report.json", "report.txt", "manifest.json"):
        assert (tmp_path / "design" / name).exists()


def test_design_rejects_oversized_scene(tmp_path, capsys):
    code = cli.main(["design", "--out", str(tmp_path), "--scene-box", "0.8", "2", "0.6",
                     "--max-beam-width", "1.0"])
    assert code == 2
    assert "SceneTooLarge" in capsys.readouterr().err


def test_check_exit_codes(tmp_path):
    good = tmp_path / "good.json"
    io.write_json(good, reference_lens().to_dict())
    assert cli.main(["check", "--out", str(tmp_path / "a"), "--lens", str(good)]) == 0
    bad = tmp_path / "bad.json"
    io.write_json(bad, reference_lens().replace(h2=0.01).to_dict())
    assert cli.main(["check", "--out", str(tmp_path / "b"), "--lens", str(bad)]) == 2
    report = json.loads((tmp_path / "b" / "check" / "conditions.json").read_text())
    assert not report["ii"]["passed"]


def test_bad_arguments_are_user_errors(tmp_path, capsys):
    assert cli.main(["simulate"]) == 2
    assert cli.main(["bogus", "--out", str(tmp_path)]) == 2
    missing = tmp_path / "none.json"
    assert cli.main(["simulate", "--out", str(tmp_path), "--config", str(missing)]) == 2
    capsys.readouterr()


def test_missing_stage_input_is_user_error(tmp_path, capsys):
    assert cli.main(["carve", "--out", str(tmp_path)]) == 2
    assert "run simulate first" in capsys.readouterr().err


def test_pipeline_failure_exit_code(tmp_path, tiny_config, capsys):
    # an empty scene leaves nothing to carve: a pipeline error, not a user error
    (tmp_path / "empty.json").write_text(json.dumps({"version": 1, "primitives": []}))
    out = tmp_path / "run"
    assert cli.main(["simulate", "--out", str(out), "--config", str(tiny_config),
                     "--scene", str(tmp_path / "empty.json")]) == 0
    assert cli.main(["carve", "--out", str(out)]) == 3
    assert "EmptyHull" in capsys.readouterr().err


def test_full_tiny_pipeline_and_determinism(tmp_path, tiny_config, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    run_all(a, tiny_config)
    run_all(b, tiny_config, ["--threads", "2"])
    assert manifest_digest(a) == manifest_digest(b)
    assert (a / "eval" / "metrics.csv").exists()
    assert len(list((a / "simulate" / "held_out").glob("view_??.png"))) == 2
    assert len(list((a / "simulate" / "reference").glob("view_??.png"))) == 8
    assert "held-out views 2" in capsys.readouterr().out
    # re-running a stage reproduces its files
    before = json.loads((a / "carve" / "manifest.json").read_text())
    assert cli.main(["carve", "--out", str(a), "--config", str(tiny_config)]) == 0
    assert json.loads((a / "carve" / "manifest.json").read_text()) == before


def test_seed_changes_fit(tmp_path, tiny_config):
    a, b = tmp_path / "a", tmp_path / "b"
    for out, seed in ((a, "0"), (b, "1")):
        for cmd in ("simulate", "carve", "fit"):
            assert cli.main([cmd, "--out", str(out), "--config", str(tiny_config), "--seed", seed]) == 0
    assert (a / "fit" / "cloud.ply").read_text() != (b / "fit" / "cloud.ply").read_text()


def test_held_out_view_count(tmp_path, tiny_config):
    assert cli.main(["simulate", "--out", str(tmp_path), "--config", str(tiny_config), "--views", "4"]) == 0
    assert len(list((tmp_path / "simulate" / "held_out").glob("view_??.png"))) == 4
    cams = json.loads((tmp_path / "simulate" / "held_out_cameras.json").read_text())
    assert len(cams["cameras"]) == 4


def test_default_held_out_is_24():
    assert PipelineConfig.from_dict().data["simulate"]["held_out"] == 24


def test_config_precedence(tmp_path, tiny_config):
    # flag beats file, file beats defaults, and the resolved config lands next to outputs
    assert cli.main(["simulate", "--out", str(tmp_path), "--config", str(tiny_config),
                     "--resolution", "20", "--views", "1"]) == 0
    resolved = json.loads((tmp_path / "simulate" / "config.json").read_text())
    assert resolved["simulate"]["resolution"] == 20
    assert resolved["simulate"]["mosaic_scale"] == 1
    assert resolved["simulate"]["reference_source"] == "mosaic"
    # later stages pick up the resolved config without --config
    assert cli.main(["carve", "--out", str(tmp_path)]) == 0
    carved = json.loads((tmp_path / "carve" / "config.json").read_text())
    assert carved["simulate"]["resolution"] == 20 and carved["carve"]["resolution"] == 24


@pytest.mark.parametrize("doc", [
    {"simulate": {"resolutoin": 10}},
    {"fit": {"iters": 3}},
    {"version": 9},
    {"colour": "red"},
    {"simulate": {"reference_source": "photo"}},
])
def test_config_rejects_unknown_or_bad_keys(doc):
    with pytest.raises(ValueError):
        PipelineConfig.from_dict(doc)


def test_bad_config_file_exit_code(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"fit": {"iters": 3}}))
    assert cli.main(["simulate", "--out", str(tmp_path), "--config", str(p)]) == 2
    assert "iters" in capsys.readouterr().err


def test_thread_count(monkeypatch):
    monkeypatch.delenv("CATOPTRA_THREADS", raising=False)
    assert thread_count(None) == 1
    assert thread_count(3) == 3
    monkeypatch.setenv("CATOPTRA_THREADS", "4")
    assert thread_count(None) == 4
    monkeypatch.setenv("CATOPTRA_THREADS", "many")
    with pytest.raises(ValueError):
        thread_count(None)


def test_console_script_entry_point(tmp_path):
    env = dict(os.environ)
    r = subprocess.run([sys.executable, "-m", "catoptra", "design", "--out", str(tmp_path),
                        "--scene-box", "0.8", "0.8", "0.6", "--max-beam-width", "1.0"],
                       capture_output=True, text=True, env=env)
    assert r.returncode == 0, r.stderr
    assert "18.4349" in r.stdout


def test_sphere_default_pipeline_quality(tmp_path):
    """Default config on the bundled sphere: 2k Gaussians, 2k iterations, 128 px."""
    import time

    t0 = time.perf_counter()
    for cmd in ("simulate", "carve", "fit", "eval"):
        assert cli.main([cmd, "--out", str(tmp_path)]) == 0, cmd
    elapsed = time.perf_counter() - t0
    summary = json.loads((tmp_path / "eval" / "summary.json").read_text())
    print(f"sphere default pipeline: {summary['mean_psnr']:.3f} dB in {elapsed:.1f} s")
    assert summary["views"] == 24
    assert summary["mean_psnr"] > 25.0
    assert elapsed < 300
