from __future__ import annotations

import logging
import textwrap

import numpy as np
import pytest

from map_shared import FREE, LOGGER_NAME, OCCUPIED, UNKNOWN
from stages.gridmap import OccupancyGrid
from stages.synth import SynthSpec, generate
from stages.walls import LineSegment, RepresentativeLine, WallCluster, clip_line_to_bbox


ASCII_CELLS = {".": FREE, "#": OCCUPIED, "?": UNKNOWN}


@pytest.fixture(autouse=True)
def reset_logging():
    yield
    logger = logging.getLogger(LOGGER_NAME)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)


def grid_from_ascii(text: str, resolution: float = 0.05) -> OccupancyGrid:
    rows = [line for line in textwrap.dedent(text).strip("\n").splitlines()]
    cells = np.array([[ASCII_CELLS[char] for char in row] for row in rows], dtype=np.int8)
    return OccupancyGrid(cells=cells, resolution=resolution)


def line_through(
    line_id: int,
    direction: float,
    anchor: tuple[float, float],
    bbox: tuple[float, float, float, float],
    covered: list[tuple[tuple[float, float], tuple[float, float]]] | None = None,
) -> RepresentativeLine:
    """Recta representativa recortada al rectangulo, con su muro si se dan segmentos."""
    start, end = clip_line_to_bbox(anchor, direction, bbox)
    cluster = None
    if covered:
        segments = tuple(LineSegment(a=a, b=b, angle=float(direction)) for a, b in covered)
        cluster = WallCluster(segments=segments, direction=float(direction), aligned=True)
    return RepresentativeLine(
        id=line_id,
        direction=float(direction),
        anchor=anchor,
        start=start,
        end=end,
        total_length=cluster.total_length if cluster else 0.0,
        cluster=cluster,
    )


@pytest.fixture
def ascii_grid():
    return grid_from_ascii


@pytest.fixture
def make_line():
    return line_through


@pytest.fixture
def two_rooms_grid() -> OccupancyGrid:
    """Dos habitaciones de 40x40 celdas unidas por una puerta de una celda."""
    cells = np.full((42, 83), OCCUPIED, dtype=np.int8)
    cells[1:41, 1:41] = FREE
    cells[1:41, 42:82] = FREE
    cells[20, 41] = FREE
    return OccupancyGrid(cells=cells, resolution=0.05)


@pytest.fixture
def single_room_grid() -> OccupancyGrid:
    cells = np.full((32, 42), OCCUPIED, dtype=np.int8)
    cells[1:31, 1:41] = FREE
    return OccupancyGrid(cells=cells, resolution=0.05)


@pytest.fixture
def blank_free_grid() -> OccupancyGrid:
    return OccupancyGrid(cells=np.zeros((30, 30), dtype=np.int8), resolution=0.05)


@pytest.fixture
def small_spec() -> SynthSpec:
    return SynthSpec(
        seed=3,
        rows=1,
        cols=2,
        room_width_m=3.0,
        room_height_m=3.0,
        resolution=0.1,
        door_width_m=0.9,
    )


@pytest.fixture(scope="session")
def manhattan_map():
    return generate(SynthSpec(seed=1, rows=2, cols=2))
