import numpy as np
import pytest
import yaml
from PIL import Image
from shapely.geometry import box

from map_shared import FREE, OCCUPIED, UNKNOWN, MapFormatError, room_color
from stages.gridmap import (
    PREDICTED_TINT,
    LabelGrid,
    OccupancyGrid,
    cell_to_world,
    load_label_grid,
    load_map,
    load_map_from_metadata,
    occupied_points,
    render,
    save_label_grid,
    save_map,
    threshold_raster,
)
from stages.rooms import FloorPlan, Room


def write_map(tmp_path, gray, **metadata):
    raster = tmp_path / "mapa.pgm"
    Image.fromarray(np.asarray(gray, dtype=np.uint8)).save(raster)
    values = {
        "image": "mapa.pgm",
        "resolution": 0.05,
        "origin": [-1.0, 2.0, 0.0],
        "negate": 0,
        "occupied_thresh": 0.65,
        "free_thresh": 0.196,
    }
    values.update(metadata)
    sidecar = tmp_path / "mapa.yaml"
    sidecar.write_text(yaml.safe_dump(values), encoding="utf-8")
    return raster, sidecar


class TestLoadMap:
    def test_thresholds_follow_map_server_convention(self, tmp_path):
        raster, sidecar = write_map(tmp_path, [[254, 0, 205], [255, 10, 128]])
        grid = load_map(raster, sidecar)
        np.testing.assert_array_equal(
            grid.cells, [[FREE, OCCUPIED, UNKNOWN], [FREE, OCCUPIED, UNKNOWN]]
        )
        assert grid.resolution == 0.05
        assert grid.origin == (-1.0, 2.0)

    def test_negate_flips_darkness(self, tmp_path):
        raster, sidecar = write_map(tmp_path, [[254, 0]], negate=1)
        grid = load_map(raster, sidecar)
        np.testing.assert_array_equal(grid.cells, [[OCCUPIED, FREE]])

    def test_from_metadata_resolves_image(self, tmp_path):
        _, sidecar = write_map(tmp_path, [[254, 0]])
        assert load_map_from_metadata(sidecar).shape == (1, 2)

    def test_missing_metadata(self, tmp_path):
        raster, _ = write_map(tmp_path, [[254]])
        with pytest.raises(MapFormatError):
            load_map(raster, tmp_path / "otro.yaml")

    def test_missing_required_key(self, tmp_path):
        raster, sidecar = write_map(tmp_path, [[254]])
        values = yaml.safe_load(sidecar.read_text(encoding="utf-8"))
        del values["resolution"]
        sidecar.write_text(yaml.safe_dump(values), encoding="utf-8")
        with pytest.raises(MapFormatError, match="resolution"):
            load_map(raster, sidecar)

    def test_thresholds_out_of_order(self, tmp_path):
        raster, sidecar = write_map(tmp_path, [[254]], occupied_thresh=0.1, free_thresh=0.5)
        with pytest.raises(MapFormatError):
            load_map(raster, sidecar)

    def test_non_positive_resolution(self, tmp_path):
        raster, sidecar = write_map(tmp_path, [[254]], resolution=0)
        with pytest.raises(MapFormatError):
            load_map(raster, sidecar)

    def test_corrupt_raster(self, tmp_path):
        _, sidecar = write_map(tmp_path, [[254]])
        (tmp_path / "mapa.pgm").write_bytes(b"esto no es una imagen")
        with pytest.raises(MapFormatError):
            load_map_from_metadata(sidecar)


class TestSaveMap:
    def test_round_trip(self, tmp_path, ascii_grid):
        grid = ascii_grid(
            """
            ##########
            #....?...#
            #..#.....#
            ##########
            """
        )
        save_map(grid, tmp_path / "out.pgm", tmp_path / "out.yaml")
        loaded = load_map_from_metadata(tmp_path / "out.yaml")
        np.testing.assert_array_equal(loaded.cells, grid.cells)
        assert loaded.resolution == grid.resolution
        assert loaded.origin == grid.origin

    def test_sidecar_values(self, tmp_path, ascii_grid):
        save_map(ascii_grid("#."), tmp_path / "out.pgm", tmp_path / "out.yaml")
        values = yaml.safe_load((tmp_path / "out.yaml").read_text(encoding="utf-8"))
        assert values["image"] == "out.pgm"
        assert values["occupied_thresh"] == 0.65
        assert values["free_thresh"] == 0.196
        gray = np.asarray(Image.open(tmp_path / "out.pgm"))
        np.testing.assert_array_equal(gray, [[0, 254]])


class TestGridTypes:
    def test_invalid_cell_value(self):
        with pytest.raises(ValueError):
            OccupancyGrid(cells=np.array([[0, 50]]), resolution=0.05)

    def test_cells_are_read_only(self, ascii_grid):
        grid = ascii_grid("#.")
        with pytest.raises(ValueError):
            grid.cells[0, 0] = FREE

    def test_counts_and_bbox(self, ascii_grid):
        grid = ascii_grid(
            """
            #.?
            ..#
            """
        )
        assert grid.count(OCCUPIED) == 2
        assert grid.count(FREE) == 3
        assert grid.count(UNKNOWN) == 1
        assert grid.bbox == (0.0, 0.0, 3.0, 2.0)

    def test_occupied_points_are_col_row(self, ascii_grid):
        grid = ascii_grid(
            """
            ...
            ..#
            """
        )
        np.testing.assert_array_equal(occupied_points(grid), [[2, 1]])

    def test_cell_to_world_flips_y(self):
        grid = OccupancyGrid(cells=np.zeros((10, 4), dtype=np.int8), resolution=0.5, origin=(1.0, -2.0))
        assert cell_to_world(grid, 0, 10) == (1.0, -2.0)
        assert cell_to_world(grid, 2, 0) == (2.0, 3.0)

    def test_label_grid_normalized_and_validated(self, ascii_grid):
        grid = ascii_grid("#..")
        labels = LabelGrid(np.array([[0, 7, 3]])).normalized()
        np.testing.assert_array_equal(labels.labels, [[0, 2, 1]])
        labels.validate_against(grid)
        with pytest.raises(ValueError):
            LabelGrid(np.array([[1, 1, 1]])).validate_against(grid)

    def test_negative_labels_rejected(self):
        with pytest.raises(ValueError):
            LabelGrid(np.array([[-1]]))


def test_threshold_raster_boundaries():
    cells = threshold_raster(np.array([[255, 206, 204, 89, 0]]), 0.65, 0.196)
    np.testing.assert_array_equal(cells, [[FREE, FREE, UNKNOWN, OCCUPIED, OCCUPIED]])


class TestLabelPng:
    def test_round_trip(self, tmp_path):
        labels = np.array([[0, 1, 2], [3, 3, 0]])
        save_label_grid(LabelGrid(labels), tmp_path / "labels.png")
        loaded = load_label_grid(tmp_path / "labels.png")
        np.testing.assert_array_equal(loaded.labels, labels)
        with Image.open(tmp_path / "labels.png") as image:
            assert image.mode == "P"

    def test_rgb_png_rejected(self, tmp_path):
        Image.new("RGB", (2, 2)).save(tmp_path / "rgb.png")
        with pytest.raises(MapFormatError):
            load_label_grid(tmp_path / "rgb.png")

    def test_too_many_rooms(self, tmp_path):
        with pytest.raises(ValueError):
            save_label_grid(np.array([[300]]), tmp_path / "labels.png")


def test_render_scales_and_colors(tmp_path, ascii_grid):
    grid = ascii_grid(
        """
        #..
        #.?
        """
    )
    labels = np.array([[0, 1, 1], [0, 1, 0]])
    path = render(grid, tmp_path / "render.png", segmentation=labels, scale=2)
    with Image.open(path) as image:
        assert image.size == (6, 4)
        pixels = np.asarray(image)
    np.testing.assert_array_equal(pixels[0, 0], [0, 0, 0])
    np.testing.assert_array_equal(pixels[3, 5], [128, 128, 128])


def test_render_tints_predicted_room_extent(tmp_path, ascii_grid):
    grid = ascii_grid(
        """
        ..????
        ..????
        ..????
        ..????
        ..????
        """
    )
    floorplan = FloorPlan(rooms=(Room(id=1, polygon=box(0, 0, 4, 5), faces=()),))
    path = render(grid, tmp_path / "plano.png", floorplan=floorplan)
    with Image.open(path) as image:
        pixels = np.asarray(image.convert("RGB"))
    color = np.array(room_color(1), dtype=float)
    expected = np.round((1.0 - PREDICTED_TINT) * 128.0 + PREDICTED_TINT * color).astype(np.uint8)
    np.testing.assert_array_equal(pixels[2, 2], expected)
    np.testing.assert_array_equal(pixels[2, 5], [128, 128, 128])
    np.testing.assert_array_equal(pixels[2, 1], [255, 255, 255])
