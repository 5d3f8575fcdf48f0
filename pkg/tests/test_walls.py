import numpy as np
import pytest
from shapely.geometry import LineString

from map_shared import FREE, OCCUPIED, circular_distance, load_config
from stages.gridmap import OccupancyGrid
from stages.rose import DirectionSet
from stages.walls import (
    LineSegment,
    WallCluster,
    align_to_direction,
    clip_line_to_bbox,
    cluster_by_angle,
    cluster_spatial,
    count_segments,
    extract_walls,
    hough_segments,
    merge_collinear,
    off_direction,
    representative_lines,
    segment_distance_matrix,
    snap_direction,
)


def segment_at(angle, length=10.0, origin=(0.0, 0.0)):
    x, y = origin
    return LineSegment.from_points((x, y), (x + length * np.cos(angle), y + length * np.sin(angle)))


def horizontal_wall(y, x0=0.0, x1=20.0):
    segment = LineSegment(a=(x0, y), b=(x1, y), angle=0.0)
    return WallCluster(segments=(segment,), direction=0.0, aligned=True)


def grid_with(points, shape=(60, 60)):
    cells = np.full(shape, FREE, dtype=np.int8)
    for row, col in points:
        cells[row, col] = OCCUPIED
    return OccupancyGrid(cells=cells, resolution=0.05)


class TestHoughSegments:
    def test_horizontal_wall(self):
        grid = grid_with([(10, col) for col in range(10, 50)])
        segments = hough_segments(grid)
        assert segments
        for segment in segments:
            assert np.degrees(circular_distance(segment.angle, 0.0)) <= 1.0
            assert segment.length >= 10

    def test_l_shape_gives_both_directions(self):
        points = [(10, col) for col in range(10, 50)] + [(row, 10) for row in range(10, 50)]
        segments = hough_segments(grid_with(points))
        angles = [segment.angle for segment in segments]
        assert min(circular_distance(angle, 0.0) for angle in angles) <= np.radians(1.0)
        assert min(circular_distance(angle, np.pi / 2) for angle in angles) <= np.radians(1.0)

    def test_same_seed_same_segments(self, manhattan_map):
        assert hough_segments(manhattan_map.grid, seed=4) == hough_segments(manhattan_map.grid, seed=4)

    def test_blank_grid(self, blank_free_grid):
        assert hough_segments(blank_free_grid) == []
        assert count_segments(blank_free_grid) == 0

    def test_endpoints_at_cell_centers(self):
        grid = grid_with([(10, col) for col in range(10, 50)])
        for segment in hough_segments(grid):
            assert segment.a[1] == pytest.approx(10.5)
            assert segment.b[1] == pytest.approx(10.5)


def wall_and_diagonal():
    """Muro horizontal en la fila 5 y una diagonal a 45 grados lejos de el."""
    points = [(5, col) for col in range(5, 56)] + [(30 + step, 50 + step) for step in range(41)]
    return grid_with(points, shape=(80, 100))


class TestOffDirection:
    def test_counts_only_segments_off_every_direction(self):
        grid = wall_and_diagonal()
        total = count_segments(grid)
        diagonal = count_segments(grid, directions=[0.0])
        assert 1 <= diagonal < total
        assert count_segments(grid, directions=[0.0, np.pi / 4]) == 0

    def test_tolerance_comes_from_params(self):
        grid = wall_and_diagonal()
        params = {"max_misalignment_deg": 50.0}
        assert count_segments(grid, params=params, directions=[0.0]) == 0

    def test_off_direction_filter(self):
        segments = [segment_at(0.0), segment_at(np.radians(3.0)), segment_at(np.radians(40.0))]
        found = off_direction(segments, [0.0, np.pi / 2], np.radians(5.0))
        assert found == [segments[2]]

    def test_extract_walls_drops_misaligned_clusters(self):
        structure = extract_walls(wall_and_diagonal(), DirectionSet(angles=(0.0, np.pi / 2)), load_config()["walls"])
        assert structure.lines
        assert all(line.direction == 0.0 for line in structure.lines)
        assert structure.discarded
        for cluster in structure.discarded:
            assert np.degrees(circular_distance(cluster.mean_angle, np.pi / 4)) <= 2.0


class TestClusterByAngle:
    def test_splits_on_angular_gaps(self):
        segments = [segment_at(0.01), segment_at(0.02), segment_at(1.58)]
        groups = cluster_by_angle(segments, 0.1)
        assert [len(group) for group in groups] == [2, 1]

    def test_wraps_around_pi(self):
        groups = cluster_by_angle([segment_at(0.02), segment_at(3.12)], 0.1)
        assert len(groups) == 1
        assert len(groups[0]) == 2

    def test_tolerance_range(self):
        with pytest.raises(ValueError):
            cluster_by_angle([segment_at(0.0)], 0.0)
        with pytest.raises(ValueError):
            cluster_by_angle([segment_at(0.0)], 1.0)

    def test_empty(self):
        assert cluster_by_angle([], 0.1) == []


class TestClusterSpatial:
    def test_collinear_pieces_join(self):
        group = [
            LineSegment.from_points((0, 0), (10, 0)),
            LineSegment.from_points((12, 0), (20, 0)),
        ]
        clusters = cluster_spatial(group, eps=5.0)
        assert len(clusters) == 1
        assert clusters[0].total_length == pytest.approx(18.0)

    def test_parallel_walls_stay_apart(self):
        group = [
            LineSegment.from_points((0, 0), (20, 0)),
            LineSegment.from_points((0, 40), (20, 40)),
        ]
        assert len(cluster_spatial(group, eps=10.0)) == 2

    def test_noise_kept_as_singletons(self):
        group = [
            LineSegment.from_points((0, 0), (20, 0)),
            LineSegment.from_points((0, 40), (20, 40)),
        ]
        clusters = cluster_spatial(group, eps=10.0, min_pts=2)
        assert [len(cluster.segments) for cluster in clusters] == [1, 1]

    def test_single_segment(self):
        clusters = cluster_spatial([segment_at(0.3)])
        assert len(clusters) == 1

    def test_invalid_parameters(self):
        with pytest.raises(ValueError):
            cluster_spatial([segment_at(0.3)], eps=0.0)


def test_segment_distance_matrix_matches_shapely():
    rng = np.random.default_rng(11)
    segments = [LineSegment.from_points(*rng.uniform(0, 50, size=(2, 2))) for _ in range(25)]
    matrix = segment_distance_matrix(segments)
    for i, first in enumerate(segments):
        for j, second in enumerate(segments):
            expected = LineString([first.a, first.b]).distance(LineString([second.a, second.b]))
            assert matrix[i, j] == pytest.approx(expected, abs=1e-9)


class TestAlignment:
    def test_snaps_to_nearest_direction_about_midpoint(self):
        segment = segment_at(np.radians(1.0), length=10.0, origin=(5.0, 5.0))
        aligned = align_to_direction(WallCluster(segments=(segment,)), DirectionSet(angles=(0.0, np.pi / 2)))
        assert aligned.aligned
        assert aligned.direction == 0.0
        projected = aligned.segments[0]
        assert projected.angle == 0.0
        assert projected.a[1] == pytest.approx(projected.b[1])
        assert projected.midpoint == pytest.approx(segment.midpoint)
        assert projected.length == pytest.approx(segment.length)

    @pytest.mark.parametrize("tilt_deg", [-4.0, 3.0, 178.0])
    def test_projection_keeps_length_and_orientation(self, tilt_deg):
        segment = segment_at(np.radians(tilt_deg), length=12.0, origin=(2.0, 7.0))
        projected = segment.projected(0.0)
        assert projected.length == pytest.approx(12.0)
        assert projected.midpoint == pytest.approx(segment.midpoint)
        assert np.sign(projected.b[0] - projected.a[0]) == np.sign(segment.b[0] - segment.a[0])

    def test_exact_tie_picks_smaller_direction(self):
        assert snap_direction(np.pi / 4, [np.pi / 2, 0.0]) == 0.0

    def test_requires_directions(self):
        with pytest.raises(ValueError):
            snap_direction(0.3, [])


class TestMergeCollinear:
    def test_chains_close_walls(self):
        merged = merge_collinear([horizontal_wall(10), horizontal_wall(22), horizontal_wall(34)], 1.0, 0.05)
        assert len(merged) == 1
        assert len(merged[0].segments) == 3

    def test_idempotent(self):
        clusters = [horizontal_wall(10), horizontal_wall(22), horizontal_wall(80)]
        once = merge_collinear(clusters, 1.0, 0.05)
        assert merge_collinear(once, 1.0, 0.05) == once

    def test_well_separated_walls_unchanged(self):
        clusters = [horizontal_wall(10), horizontal_wall(40), horizontal_wall(70)]
        merged = merge_collinear(clusters, 1.0, 0.05)
        assert [cluster.offset for cluster in merged] == [10.0, 40.0, 70.0]

    def test_rejects_unaligned(self):
        with pytest.raises(ValueError):
            merge_collinear([WallCluster(segments=(segment_at(0.1),))], 1.0, 0.05)
        with pytest.raises(ValueError):
            merge_collinear([horizontal_wall(10)], 0.0, 0.05)


class TestRepresentativeLines:
    def test_near_duplicates_keep_longest(self):
        lines = representative_lines(
            [horizontal_wall(10.0, 0, 20), horizontal_wall(10.3, 0, 30)], (0, 0, 100, 100)
        )
        assert len(lines) == 1
        assert lines[0].total_length == pytest.approx(30.0)
        assert lines[0].offset == pytest.approx(10.3)

    def test_parallel_walls_keep_their_gap(self):
        lines = representative_lines([horizontal_wall(20), horizontal_wall(60)], (0, 0, 100, 100))
        assert [line.id for line in lines] == [0, 1]
        assert lines[1].offset - lines[0].offset == pytest.approx(40.0)
        assert lines[0].start == pytest.approx((0.0, 20.0))
        assert lines[0].end == pytest.approx((100.0, 20.0))

    def test_lines_outside_map_dropped(self):
        lines = representative_lines([horizontal_wall(20), horizontal_wall(150)], (0, 0, 100, 100))
        assert len(lines) == 1


class TestClipLine:
    def test_diagonal(self):
        start, end = clip_line_to_bbox((50, 50), np.pi / 4, (0, 0, 100, 100))
        assert start == pytest.approx((0.0, 0.0), abs=1e-9)
        assert end == pytest.approx((100.0, 100.0), abs=1e-9)

    def test_vertical(self):
        start, end = clip_line_to_bbox((30, 70), np.pi / 2, (0, 0, 100, 100))
        assert start == pytest.approx((30.0, 0.0), abs=1e-9)
        assert end == pytest.approx((30.0, 100.0), abs=1e-9)

    def test_misses_rectangle(self):
        assert clip_line_to_bbox((150, 50), np.pi / 2, (0, 0, 100, 100)) is None


def test_extract_walls_on_synthetic_map(manhattan_map):
    config = load_config()["walls"]
    structure = extract_walls(manhattan_map.grid, manhattan_map.directions, config)
    assert len(structure.lines) >= 2
    for line in structure.lines:
        assert line.direction in manhattan_map.directions.angles
    threaded = extract_walls(manhattan_map.grid, manhattan_map.directions, config, threads=2)
    assert threaded.lines == structure.lines
