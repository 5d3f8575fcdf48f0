import json
import time
import zipfile

import numpy as np
import pandas as pd
import pytest
from openpyxl import load_workbook

import Planos
from map_shared import METHODS
from stages.gridmap import OccupancyGrid, load_label_grid, save_label_grid, save_map
from stages.synth import SynthSpec, generate, save_synth


SEGMENT_OUTPUTS = [
    "clean_map.pgm",
    "clean_map.yaml",
    "lines.svg",
    "floorplan.json",
    "segmented.png",
    "floorplan.png",
    "timing.json",
    "config.toml",
]


def write_spec(path, **values):
    spec = {"seed": 1, "rows": 1, "cols": 2, "room_width_m": 3.0, "room_height_m": 3.0}
    spec.update(values)
    path.write_text(json.dumps(spec), encoding="utf-8")
    return path


@pytest.fixture
def synth_dir(tmp_path):
    spec = write_spec(tmp_path / "spec.json")
    assert Planos.main(["synth", str(spec), "--out", str(tmp_path / "synth")]) == 0
    return tmp_path / "synth"


class TestSegment:
    def test_writes_all_outputs(self, tmp_path, synth_dir, capsys):
        out = tmp_path / "segmentado"
        assert Planos.main(["segment", str(synth_dir / "map.yaml"), "--out", str(out)]) == 0
        for name in SEGMENT_OUTPUTS:
            assert (out / name).exists(), name
        assert "habitaciones" in capsys.readouterr().out
        floorplan = json.loads((out / "floorplan.json").read_text(encoding="utf-8"))
        assert floorplan["habitaciones"]
        labels = load_label_grid(out / "segmented.png")
        gt = load_label_grid(synth_dir / "gt.png")
        assert labels.shape == gt.shape

    def test_raster_path_finds_sidecar(self, tmp_path, synth_dir):
        out = tmp_path / "segmentado"
        assert Planos.main(["segment", str(synth_dir / "map.pgm"), "--out", str(out), "--debug-dumps"]) == 0
        assert (out / "debug" / "rose_histogram.csv").exists()

    def test_missing_metadata(self, tmp_path, synth_dir, capsys):
        raster = tmp_path / "suelto.pgm"
        raster.write_bytes((synth_dir / "map.pgm").read_bytes())
        assert Planos.main(["segment", str(raster), "--out", str(tmp_path / "x")]) == 1
        assert "Error:" in capsys.readouterr().err

    def test_blank_map_fails_in_first_stage(self, tmp_path, capsys):
        grid = OccupancyGrid(cells=np.zeros((40, 40), dtype=np.int8), resolution=0.05)
        save_map(grid, tmp_path / "vacio.pgm", tmp_path / "vacio.yaml")
        assert Planos.main(["segment", str(tmp_path / "vacio.yaml"), "--out", str(tmp_path / "x")]) == 2
        assert "Error en la etapa rose" in capsys.readouterr().err

    def test_bad_config(self, tmp_path, synth_dir):
        config = tmp_path / "config.toml"
        config.write_text("[walls]\nvotos = 3\n", encoding="utf-8")
        code = Planos.main(["segment", str(synth_dir / "map.yaml"), "--config", str(config), "--out", str(tmp_path)])
        assert code == 1


class TestEvaluate:
    def test_identical_labels(self, tmp_path, synth_dir):
        out = tmp_path / "metricas.json"
        gt = str(synth_dir / "gt.png")
        assert Planos.main(["evaluate", gt, gt, "--out", str(out)]) == 0
        metrics = json.loads(out.read_text(encoding="utf-8"))
        assert metrics["mapa"]["mean_iou"] == 100.0

    def test_directory_output(self, tmp_path, synth_dir):
        gt = str(synth_dir / "gt.png")
        assert Planos.main(["evaluate", gt, gt, "--out", str(tmp_path / "eval")]) == 0
        assert (tmp_path / "eval" / "metrics.json").exists()

    def test_shape_mismatch(self, tmp_path, synth_dir):
        save_label_grid(np.ones((3, 3), dtype=np.int32), tmp_path / "chico.png")
        code = Planos.main(["evaluate", str(tmp_path / "chico.png"), str(synth_dir / "gt.png"), "--out", str(tmp_path)])
        assert code == 1


def write_manifest(tmp_path, count=3, corrupt=False):
    entries = []
    for index in range(count):
        folder = tmp_path / f"mapa{index}"
        save_synth(generate(SynthSpec(seed=index, rows=1, cols=2, room_width_m=3.0, room_height_m=3.0)), folder)
        entries.append(f'[[maps]]\nname = "m{index}"\nmap = "mapa{index}/map.yaml"\ngt = "mapa{index}/gt.png"\n')
    if corrupt:
        (tmp_path / "roto").mkdir()
        (tmp_path / "roto" / "map.yaml").write_text("image: nada.pgm\n", encoding="utf-8")
        entries.append('[[maps]]\nname = "roto"\nmap = "roto/map.yaml"\ngt = "mapa0/gt.png"\n')
    manifest = tmp_path / "lote.toml"
    manifest.write_text("\n".join(entries), encoding="utf-8")
    return manifest


class TestBatch:
    def test_rows_per_map_and_method(self, tmp_path):
        manifest = write_manifest(tmp_path)
        out = tmp_path / "reporte"
        assert Planos.main(["batch", str(manifest), "--out", str(out)]) == 0
        report = pd.read_csv(out / "batch.csv")
        assert list(report.columns) == Planos.BATCH_COLUMNS
        per_map = report[report["row_type"] == "map"]
        assert len(per_map) == 3 * len(METHODS)
        aggregate = report[report["row_type"] == "aggregate"]
        assert sorted(aggregate["method"]) == sorted(METHODS)
        for method in METHODS:
            assert (out / "mapas" / "m0" / f"{method}.png").exists()

        sheet = load_workbook(out / "batch.xlsx").active
        assert [cell.value for cell in sheet[1]] == Planos.BATCH_COLUMNS
        assert sheet.max_row == len(report) + 1

    def test_empty_manifest(self, tmp_path):
        manifest = tmp_path / "vacio.toml"
        manifest.write_text('methods = ["morph"]\n', encoding="utf-8")
        assert Planos.main(["batch", str(manifest), "--out", str(tmp_path / "r")]) == 0
        lines = (tmp_path / "r" / "batch.csv").read_text(encoding="utf-8").strip().splitlines()
        assert lines == [",".join(Planos.BATCH_COLUMNS)]

    def test_broken_map_is_marked_failed(self, tmp_path):
        manifest = write_manifest(tmp_path, count=1, corrupt=True)
        text = manifest.read_text(encoding="utf-8")
        manifest.write_text('methods = ["morph", "dist"]\n\n' + text, encoding="utf-8")
        assert Planos.main(["batch", str(manifest), "--out", str(tmp_path / "r")]) == 0
        report = pd.read_csv(tmp_path / "r" / "batch.csv")
        broken = report[report["map"] == "roto"]
        assert len(broken) == 2
        assert set(broken["status"]) == {"failed"}
        assert broken["error"].notna().all()
        aggregate = report[report["row_type"] == "aggregate"]
        assert aggregate["maps"].tolist() == [1, 1]

    def test_repeated_batches_are_byte_identical(self, tmp_path):
        manifest = write_manifest(tmp_path, count=1)
        first, second = tmp_path / "uno", tmp_path / "dos"
        assert Planos.main(["batch", str(manifest), "--out", str(first)]) == 0
        time.sleep(2.1)
        assert Planos.main(["batch", str(manifest), "--out", str(second)]) == 0
        written = sorted(path.relative_to(first) for path in first.rglob("*") if path.is_file())
        assert written == sorted(path.relative_to(second) for path in second.rglob("*") if path.is_file())
        assert not any(path.name == "timing.json" for path in written)
        for relative in written:
            assert (first / relative).read_bytes() == (second / relative).read_bytes(), relative

        with zipfile.ZipFile(first / "batch.xlsx") as archive:
            assert {info.date_time for info in archive.infolist()} == {Planos.ZIP_TIMESTAMP}
        properties = load_workbook(first / "batch.xlsx").properties
        assert properties.created.replace(tzinfo=None) == Planos.REPORT_TIMESTAMP
        assert properties.modified.replace(tzinfo=None) == Planos.REPORT_TIMESTAMP

    def test_unknown_method(self, tmp_path):
        manifest = tmp_path / "lote.toml"
        manifest.write_text('methods = ["magia"]\n', encoding="utf-8")
        assert Planos.main(["batch", str(manifest), "--out", str(tmp_path)]) == 1


def test_synth_seed_override(tmp_path):
    spec = write_spec(tmp_path / "spec.json", clutter_density=0.02)
    assert Planos.main(["synth", str(spec), "--seed", "9", "--out", str(tmp_path / "s")]) == 0
    written = json.loads((tmp_path / "s" / "spec.json").read_text(encoding="utf-8"))
    assert written["seed"] == 9


def test_sweep(tmp_path, capsys):
    spec = write_spec(tmp_path / "spec.json")
    out = tmp_path / "barrido"
    assert Planos.main(["sweep", str(spec), "--levels", "0.6", "1.0", "--out", str(out)]) == 0
    report = pd.read_csv(out / "sweep.csv")
    assert list(report.columns) == Planos.SWEEP_COLUMNS
    assert report["coverage"].tolist() == [0.6, 1.0]
    full = report[report["coverage"] == 1.0].iloc[0]
    assert full["unknown_fraction"] == 0.0
