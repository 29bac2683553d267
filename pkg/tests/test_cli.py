import json

import numpy as np
import pytest

from adatile.cli import main
from adatile.crop import write_ppm
from adatile.dataset import read_dataset
from adatile.tiling import manifest_from_json, plan_image


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture()
def synth_dir(tmp_path):
    assert run("synth", "--out-dir", tmp_path, "--images", 3, "--count", "20-60", "--seed", 4) == 0
    return tmp_path


def pipeline(out, *extra_sim):
    assert run("plan", "--out-dir", out) == 0
    assert run("simulate", "--out-dir", out, *extra_sim) == 0
    assert run("fuse", "--out-dir", out) == 0
    assert run("eval", "--out-dir", out) == 0


class TestEndToEnd:
    def test_perfect(self, synth_dir, capsys):
        pipeline(synth_dir)
        rep = json.loads((synth_dir / "report.json").read_text())
        assert rep["aggregate"]["f1"] == 1.0
        assert rep["aggregate"]["count_mae"] == 0.0
        assert "F1 1.0000" in capsys.readouterr().out
        assert (synth_dir / "report.csv").read_text().startswith("image_id,tp,fp,fn,pred_count,gt_count\n")

    def test_plan_matches_library(self, tmp_path):
        assert run("synth", "--out-dir", tmp_path, "--images", 1, "--seed", 2) == 0
        assert run("plan", "--out-dir", tmp_path, "--target-nba", "2%") == 0
        (plan,) = manifest_from_json((tmp_path / "manifest.json").read_text())
        (ann,) = read_dataset(tmp_path / "dataset.json")
        ref = plan_image(ann, 0.02, 192)
        assert plan.grid == ref.grid and plan.tiles == ref.tiles
        assert plan.n_tiles == ref.grid[0] * ref.grid[1]

    def test_empty_predictions(self, synth_dir):
        assert run("plan", "--out-dir", synth_dir) == 0
        (synth_dir / "predictions.jsonl").write_text("")
        assert run("fuse", "--out-dir", synth_dir) == 0
        lines = (synth_dir / "fused.jsonl").read_text().splitlines()
        assert len(lines) == 1 and json.loads(lines[0])["format"] == "adatile.fused"

    def test_outputs_carry_config_echo(self, synth_dir):
        pipeline(synth_dir, "--seed", 3, "--miss-rate", 0.1)
        for name in ("dataset.json", "manifest.json", "report.json"):
            doc = json.loads((synth_dir / name).read_text())
            assert "config" in doc and "format" in doc
        for name in ("predictions.jsonl", "fused.jsonl"):
            head = json.loads((synth_dir / name).read_text().splitlines()[0])
            assert head["version"] == 1 and "config" in head
        sim = json.loads((synth_dir / "predictions.jsonl").read_text().splitlines()[0])["config"]
        assert sim["miss_rate"] == 0.1 and sim["seed"] == 3

    def test_grid_mode_adjacency(self, synth_dir):
        assert run("plan", "--out-dir", synth_dir) == 0
        assert run("simulate", "--out-dir", synth_dir, "--mode", "grid") == 0
        assert run("fuse", "--out-dir", synth_dir, "--strategy", "adjacency") == 0
        assert run("eval", "--out-dir", synth_dir, "--mode", "grid") == 0
        rep = json.loads((synth_dir / "report.json").read_text())
        assert rep["config"]["match"] == {"kind": "centroid_in_box"}

    def test_rerun_is_byte_identical(self, synth_dir):
        pipeline(synth_dir, "--fp-per-tile", 1, "--jitter-sigma", 0.05)
        first = {p.name: p.read_bytes() for p in synth_dir.iterdir()}
        pipeline(synth_dir, "--fp-per-tile", 1, "--jitter-sigma", 0.05, "--workers", 1)
        assert {p.name: p.read_bytes() for p in synth_dir.iterdir()} == first


class TestConfig:
    def test_precedence(self, tmp_path, monkeypatch):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"images": 2, "seed": 5, "count": "3-3"}))
        assert run("synth", "--out-dir", tmp_path, "--config", cfg, "--seed", 6) == 0
        doc = json.loads((tmp_path / "dataset.json").read_text())
        assert doc["config"]["n_images"] == 2 and doc["config"]["seed"] == 6

        monkeypatch.setenv("ADATILE_CONFIG", str(cfg))
        assert run("synth", "--out-dir", tmp_path / "b") == 0
        assert json.loads((tmp_path / "b" / "dataset.json").read_text())["config"]["seed"] == 5

    def test_unknown_key(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"sed": 5}))
        assert run("synth", "--out-dir", tmp_path, "--config", cfg) == 1


class TestExitCodes:
    def test_missing_dataset_is_io_error(self, tmp_path, capsys):
        assert run("plan", "--out-dir", tmp_path) == 2
        assert "I/O error" in capsys.readouterr().err

    @pytest.mark.parametrize("argv", [
        ("plan", "--target-nba", "150%"),
        ("plan", "--input-resolution", "abc"),
        ("plan", "--object-nba", "0.01"),
        ("fuse", "--strategy", "nms"),
        ("simulate", "--miss-rate", "1.0"),
        ("sweep", "--profile", "nope"),
        ("plan", "--no-such-flag"),
    ])
    def test_validation_errors(self, synth_dir, argv, capsys):
        assert run("plan", "--out-dir", synth_dir) == 0
        manifest = (synth_dir / "manifest.json").read_bytes()
        assert run(*argv, "--out-dir", synth_dir) == 1
        assert capsys.readouterr().err
        assert (synth_dir / "manifest.json").read_bytes() == manifest

    def test_bad_prediction_line(self, synth_dir, capsys):
        assert run("plan", "--out-dir", synth_dir) == 0
        rec = {"image_id": "synth_00000", "tile": [99, 0], "class_id": 1, "box": [0, 0, 1, 1], "confidence": 1}
        (synth_dir / "predictions.jsonl").write_text(json.dumps(rec) + "\n")
        assert run("fuse", "--out-dir", synth_dir) == 1
        assert "line 1" in capsys.readouterr().err
        assert not (synth_dir / "fused.jsonl").exists()


class TestIngest:
    def test_ingest(self, tmp_path):
        root = tmp_path / "carpk"
        (root / "ImageSets").mkdir(parents=True)
        (root / "Annotations").mkdir()
        (root / "ImageSets" / "test.txt").write_text("a\nb\n")
        (root / "Annotations" / "a.txt").write_text("718 316 775 355 1\n")
        (root / "Annotations" / "b.txt").write_text("")
        assert run("ingest", "--root", root, "--out-dir", tmp_path) == 0
        ds = read_dataset(tmp_path / "dataset.json")
        assert [len(a) for a in ds] == [1, 0]

    def test_ingest_missing_file(self, tmp_path):
        root = tmp_path / "carpk"
        (root / "ImageSets").mkdir(parents=True)
        (root / "Annotations").mkdir()
        (root / "ImageSets" / "test.txt").write_text("a\n")
        assert run("ingest", "--root", root, "--out-dir", tmp_path) == 2


class TestCrop:
    def test_crop(self, synth_dir):
        assert run("synth", "--out-dir", synth_dir, "--images", 1, "--seed", 1) == 0
        assert run("plan", "--out-dir", synth_dir) == 0
        imgs = synth_dir / "imgs"
        imgs.mkdir()
        write_ppm(imgs / "synth_00000.ppm", np.zeros((720, 1280, 3), dtype=np.uint8))
        assert run("crop", "--out-dir", synth_dir, "--images-dir", imgs) == 0
        listing = json.loads((synth_dir / "crops" / "crops.json").read_text())["crops"]
        (plan,) = manifest_from_json((synth_dir / "manifest.json").read_text())
        assert len(listing) == plan.n_tiles
        assert all((synth_dir / "crops" / c["file"]).exists() for c in listing)

    def test_crop_wrong_size(self, synth_dir):
        assert run("synth", "--out-dir", synth_dir, "--images", 1, "--seed", 1) == 0
        assert run("plan", "--out-dir", synth_dir) == 0
        imgs = synth_dir / "imgs"
        imgs.mkdir()
        write_ppm(imgs / "synth_00000.ppm", np.zeros((10, 10, 3), dtype=np.uint8))
        assert run("crop", "--out-dir", synth_dir, "--images-dir", imgs) == 1
        assert not (synth_dir / "crops").exists()


class TestCost:
    def test_published_rows(self, capsys):
        assert run("cost", "--avg-tiles", "4.1,10.1,21.6,27.8", "--profile", "tinyissimoyolo-gap9") == 0
        lines = capsys.readouterr().out.splitlines()
        fps_col = lines[0].split().index("fps")
        assert [ln.split()[fps_col] for ln in lines[1:]] == ["15.1", "6.1", "2.9", "2.2"]

    def test_fomo_json(self, capsys):
        assert run("cost", "--avg-tiles", "4.1", "--profile", "fomo-192-gap9", "--format", "json") == 0
        (row,) = json.loads(capsys.readouterr().out)["rows"]
        assert abs(row["fps"] - 33.4) <= 0.1
        assert row["latency_ms"] == pytest.approx(30.0, rel=0.02)
        assert row["energy_mj"] is None

    def test_unit(self, tmp_path, capsys):
        prof = tmp_path / "p.json"
        prof.write_text(json.dumps([{"name": "slow", "latency_per_tile": 1.0}]))
        assert run("cost", "--profiles-file", prof, "--profile", "slow", "--avg-tiles", 1, "--format", "json") == 0
        assert json.loads(capsys.readouterr().out)["rows"][0]["fps"] == 1.0

    def test_from_dataset(self, synth_dir, capsys):
        assert run("cost", "--out-dir", synth_dir, "--nba-list", "0.8%,4%") == 0
        lines = capsys.readouterr().out.splitlines()
        assert [ln.split()[0] for ln in lines[1:]] == ["0.8", "4"]

    def test_bad_avg_tiles(self):
        assert run("cost", "--avg-tiles", "x") == 1
        assert run("cost", "--avg-tiles", "0") == 1


class TestSweep:
    def test_sweep(self, synth_dir, capsys):
        assert run("sweep", "--out-dir", synth_dir, "--profile", "tinyissimoyolo-gap9", "--workers", 2) == 0
        doc = json.loads((synth_dir / "sweep.json").read_text())
        rows = doc["rows"]
        assert len(rows) == 8
        assert [r["strategy"] for r in rows[:2]] == ["one_way_ratio", "iou"]
        tiles = [r["avg_tiles"] for r in rows[::2]]
        assert tiles == sorted(tiles) and tiles[0] < tiles[-1]
        assert all(r["f1"] == 1.0 for r in rows if r["strategy"] == "one_way_ratio")
        assert "workers" not in doc["config"]
        head = (synth_dir / "sweep.csv").read_text().splitlines()[0]
        assert head == "target_nba_pct,strategy,avg_tiles,f1,precision,recall,count_mae,fps"
