"""CLI subcommands: exit codes, determinism, end-to-end flows."""

import json
import os

import numpy as np
import pytest

from mmfit.cli import main


def run(argv, capsys=None):
    code = main(argv)
    return code


def read_bytes(path):
    with open(path, "rb") as f:
        return f.read()


@pytest.fixture(scope="module")
def line_scenes(tmp_path_factory):
    out = tmp_path_factory.mktemp("scenes")
    assert main(["synth", "--kind", "lines", "--count", "3", "--seed", "7",
                 "--out", str(out)]) == 0
    return out


class TestSynth:
    def test_creates_deterministic_files(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        for out in (a, b):
            assert main(["synth", "--kind", "lines", "--count", "2",
                         "--seed", "3", "--out", str(out)]) == 0
        names = sorted(os.listdir(a))
        assert names == ["scene_00000.json", "scene_00001.json"]
        for name in names:
            assert read_bytes(a / name) == read_bytes(b / name)

    def test_homography_synth(self, tmp_path):
        out = tmp_path / "h"
        assert main(["synth", "--kind", "homographies", "--count", "1",
                     "--seed", "1", "--planes", "2", "--points-per-plane", "30",
                     "--out", str(out)]) == 0
        from mmfit.data import load_scene
        scene = load_scene(out / "scene_00000.json")
        assert scene.kind == "homography"


class TestFit:
    def test_missing_scene_exits_2_with_path(self, capsys):
        code = main(["fit", "--scene", "/nope/missing.json", "--out", "/tmp/x.json"])
        assert code == 2
        assert "missing.json" in capsys.readouterr().err

    def test_fit_uniform_deterministic(self, line_scenes, tmp_path):
        scene = str(line_scenes / "scene_00000.json")
        out1 = tmp_path / "r1.json"
        out2 = tmp_path / "r2.json"
        svg1 = tmp_path / "r1.svg"
        svg2 = tmp_path / "r2.svg"
        for out, svg in [(out1, svg1), (out2, svg2)]:
            code = main(["fit", "--scene", scene, "--out", str(out),
                         "--svg", str(svg), "--seed", "5",
                         "--single-samples", "8", "--multi-samples", "4"])
            assert code == 0
        assert read_bytes(out1) == read_bytes(out2)
        assert read_bytes(svg1) == read_bytes(svg2)
        doc = json.loads(out1.read_text())
        assert doc["kind"] == "line"
        assert len(doc["models"]) == doc["config"]["instances"]
        assert doc["selected"] <= len(doc["models"])
        assert len(doc["assignments"]) > 0

    def test_parallel_matches_serial(self, line_scenes, tmp_path):
        outs = []
        for jobs in ("1", "2"):
            out = tmp_path / f"jobs{jobs}"
            code = main(["fit", "--scenes", str(line_scenes), "--out", str(out),
                         "--seed", "9", "--jobs", jobs,
                         "--single-samples", "4", "--multi-samples", "2"])
            assert code == 0
            outs.append(out)
        for name in sorted(os.listdir(outs[0])):
            assert read_bytes(outs[0] / name) == read_bytes(outs[1] / name)

    def test_sequential_flag(self, line_scenes, tmp_path):
        scene = str(line_scenes / "scene_00001.json")
        out = tmp_path / "seq.json"
        assert main(["fit", "--scene", scene, "--out", str(out),
                     "--sequential", "--seed", "3",
                     "--single-samples", "8", "--multi-samples", "2"]) == 0
        doc = json.loads(out.read_text())
        assert doc["config"]["sequential"] is True

    def test_network_requires_weights(self, line_scenes, tmp_path, capsys):
        scene = str(line_scenes / "scene_00000.json")
        code = main(["fit", "--scene", scene, "--out", str(tmp_path / "x.json"),
                     "--weight-source", "network"])
        assert code == 2


class TestTrainAndEval:
    def test_train_fit_eval_roundtrip(self, line_scenes, tmp_path, capsys):
        weights = tmp_path / "weights.json"
        log = tmp_path / "log.jsonl"
        code = main(["train", "--scenes", str(line_scenes), "--out", str(weights),
                     "--epochs", "1", "--batch-size", "3", "--seed", "1",
                     "--sample-count", "2", "--observations", "48", "--log", str(log)])
        assert code == 0
        assert weights.exists()
        assert log.exists()
        capsys.readouterr()

        results = tmp_path / "results"
        code = main(["fit", "--scenes", str(line_scenes), "--out", str(results),
                     "--weights", str(weights), "--seed", "2",
                     "--single-samples", "4", "--multi-samples", "2"])
        assert code == 0
        capsys.readouterr()

        code = main(["eval", "--pred", str(results), "--gt", str(line_scenes),
                     "--metric", "f1"])
        assert code == 0
        out = capsys.readouterr().out
        assert "f1" in out and "mean" in out

    def test_eval_me(self, line_scenes, tmp_path, capsys):
        results = tmp_path / "results"
        assert main(["fit", "--scenes", str(line_scenes), "--out", str(results),
                     "--seed", "4", "--single-samples", "8",
                     "--multi-samples", "4"]) == 0
        capsys.readouterr()
        code = main(["eval", "--pred", str(results), "--gt", str(line_scenes),
                     "--metric", "me"])
        assert code == 0
        assert "me" in capsys.readouterr().out


class TestSweep:
    def test_small_grid(self, line_scenes, tmp_path, capsys):
        out = tmp_path / "sweep.jsonl"
        code = main(["sweep", "--scenes", str(line_scenes),
                     "--methods", "uniform,sequential", "--grid", "2,4",
                     "--seed", "1", "--out", str(out)])
        assert code == 0
        records = [json.loads(line) for line in out.read_text().splitlines()]
        assert len(records) == 2 * 4  # two methods x 2x2 grid
        assert {r["method"] for r in records} == {"uniform", "sequential"}


class TestUsage:
    def test_help_exits_zero(self, capsys):
        for cmd in (["--help"], ["synth", "--help"], ["train", "--help"],
                    ["fit", "--help"], ["eval", "--help"], ["sweep", "--help"]):
            assert main(cmd) == 0
            capsys.readouterr()

    def test_unknown_flag_exits_one(self, capsys):
        assert main(["synth", "--wat", "1"]) == 1

    def test_missing_subcommand_exits_one(self, capsys):
        assert main([]) == 1

    def test_config_file_applies_defaults(self, tmp_path, capsys):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"count": 2, "kind": "lines", "seed": 3}))
        out = tmp_path / "scenes"
        assert main(["synth", "--config", str(config), "--out", str(out)]) == 0
        assert len(os.listdir(out)) == 2

    def test_config_file_unknown_key_exits_one(self, tmp_path, capsys):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"no_such_key": 1}))
        assert main(["synth", "--config", str(config), "--kind", "lines",
                     "--count", "1", "--out", str(tmp_path / "s")]) == 1
