"""Segmentadores de referencia simplificados (morfologico, distancia y Voronoi).

No reproducen los parametros de las implementaciones publicadas; sirven para
comparar en el mismo arnes de metricas.
"""

from __future__ import annotations

import networkx as nx
import numpy as np
from scipy import ndimage
from skimage.draw import line as draw_line
from skimage.segmentation import watershed

from map_shared import DEFAULT_CONFIG, EmptyMapError, get_logger
from stages.gridmap import OccupancyGrid
from stages.rooms import SegmentedMap
from stages.topology import TopoGraph, free_space_distance


log = get_logger("baselines")

FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)
CRITICAL_HOPS = 8


def room_area_band(grid: OccupancyGrid, room_area_min_m2: float, room_area_max_m2: float) -> tuple[float, float]:
    cell_area = grid.resolution**2
    return room_area_min_m2 / cell_area, room_area_max_m2 / cell_area


def _require_free(grid: OccupancyGrid) -> np.ndarray:
    free = grid.free_mask
    if not free.any():
        raise EmptyMapError("El mapa no tiene espacio libre para segmentar.")
    return free


def _finish(grid: OccupancyGrid, labels: np.ndarray) -> SegmentedMap:
    """Etiqueta cada componente libre sin semilla y normaliza a 1..n."""
    free = grid.free_mask
    labels = np.where(free, labels, 0).astype(np.int32)
    orphans, count = ndimage.label(free & (labels == 0), structure=FOUR_CONNECTED)
    if count:
        start = int(labels.max())
        labels[orphans > 0] = orphans[orphans > 0] + start
    normalized = SegmentedMap(labels=labels, resolution=grid.resolution, origin=grid.origin).normalized()
    return SegmentedMap(labels=normalized.labels, resolution=grid.resolution, origin=grid.origin)


def _grow(free: np.ndarray, markers: np.ndarray, surface: np.ndarray | None = None) -> np.ndarray:
    if not markers.any():
        return markers
    surface = np.zeros(free.shape) if surface is None else surface
    return watershed(surface, markers=markers, mask=free, connectivity=1)


def morphological_segment(
    grid: OccupancyGrid,
    room_area_min_m2: float = DEFAULT_CONFIG["baselines"]["room_area_min_m2"],
    room_area_max_m2: float = DEFAULT_CONFIG["baselines"]["room_area_max_m2"],
) -> SegmentedMap:
    free = _require_free(grid)
    low, high = room_area_band(grid, room_area_min_m2, room_area_max_m2)
    seeds = np.zeros(grid.shape, dtype=np.int32)
    current = free.copy()
    previous, _ = ndimage.label(current, structure=FOUR_CONNECTED)
    iterations = 0

    while current.any():
        current = ndimage.binary_erosion(current, structure=FOUR_CONNECTED)
        iterations += 1
        labeled, count = ndimage.label(current, structure=FOUR_CONNECTED)
        if count == 0:
            break
        # Cada componente erosionada tiene un unico padre en la iteracion previa.
        index = np.arange(1, count + 1)
        parents = np.asarray(ndimage.maximum(previous, labels=labeled, index=index)).astype(np.int64)
        children = np.bincount(parents, minlength=int(previous.max()) + 1)
        areas = np.bincount(labeled.ravel(), minlength=count + 1)[1:]
        for component, parent, area in zip(index, parents, areas):
            if children[parent] >= 2 and low <= area <= high:
                mask = labeled == component
                seeds[mask] = int(seeds.max()) + 1
                current &= ~mask
        previous, _ = ndimage.label(current, structure=FOUR_CONNECTED)

    log.debug("Segmentacion morfologica: %d erosiones, %d semillas", iterations, int(seeds.max()))
    return _finish(grid, _grow(free, seeds))


def _component_perimeters(labeled: np.ndarray, count: int) -> np.ndarray:
    mask = labeled > 0
    border = mask & ~ndimage.binary_erosion(mask, structure=FOUR_CONNECTED, border_value=0)
    return np.bincount(labeled[border], minlength=count + 1)[1:]


def distance_segment(
    grid: OccupancyGrid,
    room_area_min_m2: float = DEFAULT_CONFIG["baselines"]["room_area_min_m2"],
    room_area_max_m2: float = DEFAULT_CONFIG["baselines"]["room_area_max_m2"],
) -> SegmentedMap:
    free = _require_free(grid)
    low, high = room_area_band(grid, room_area_min_m2, room_area_max_m2)
    distance = free_space_distance(grid)
    thresholds = np.arange(1.0, float(distance.max()))

    best_threshold, best_count = 0.0, -1
    for threshold in thresholds:
        labeled, count = ndimage.label(distance > threshold, structure=FOUR_CONNECTED)
        if count == 0:
            continue
        areas = np.bincount(labeled.ravel(), minlength=count + 1)[1:]
        perimeters = _component_perimeters(labeled, count)
        # Area que recupera cada semilla al crecer de nuevo una distancia ``threshold``.
        estimated = areas + perimeters * threshold + np.pi * threshold**2
        in_band = int(np.count_nonzero((estimated >= low) & (estimated <= high)))
        if in_band > best_count:
            best_threshold, best_count = float(threshold), in_band

    seeds, _ = ndimage.label(distance > best_threshold, structure=FOUR_CONNECTED)
    seeds = np.where(free, seeds, 0)
    log.debug("Segmentacion por distancia: umbral %.1f con %d semillas", best_threshold, int(seeds.max()))
    return _finish(grid, _grow(free, seeds, -distance))


def _nearest_obstacles(grid: OccupancyGrid) -> tuple[np.ndarray, np.ndarray]:
    """Indices (fila, col) del obstaculo mas cercano, con el exterior del mapa como obstaculo."""
    padded = np.pad(grid.free_mask, 1, constant_values=False)
    _, indices = ndimage.distance_transform_edt(padded, return_indices=True)
    return indices[0][1:-1, 1:-1] - 1, indices[1][1:-1, 1:-1] - 1


def _opposite_obstacle(
    obstacle: np.ndarray, row: int, col: int, first: tuple[int, int], radius: int
) -> tuple[int, int] | None:
    height, width = obstacle.shape
    top, bottom = max(-1, row - radius), min(height, row + radius + 1)
    left, right = max(-1, col - radius), min(width, col + radius + 1)
    rows, cols = np.mgrid[top : bottom + 1, left : right + 1]
    inside = (rows >= 0) & (rows < height) & (cols >= 0) & (cols < width)
    blocked = ~inside
    blocked[inside] = obstacle[rows[inside], cols[inside]]
    toward = np.array(first, dtype=float) - (row, col)
    dot = (rows - row) * toward[0] + (cols - col) * toward[1]
    candidates = blocked & (dot < 0)
    if not candidates.any():
        return None
    squared = (rows - row) ** 2 + (cols - col) ** 2
    squared = np.where(candidates, squared, np.iinfo(np.int64).max)
    index = np.unravel_index(int(np.argmin(squared)), squared.shape)
    return int(rows[index]), int(cols[index])


def critical_nodes(graph: TopoGraph) -> list[int]:
    """Nodos de grado 2 con holgura localmente minima, suprimiendo vecinos cercanos."""
    network = graph.to_networkx()
    candidates = []
    for node in network.nodes:
        if network.degree[node] != 2:
            continue
        around = nx.single_source_shortest_path_length(network, node, cutoff=CRITICAL_HOPS)
        values = graph.clearance[list(around)]
        clearance = graph.clearance[node]
        if clearance <= values.min() and clearance < values.max():
            candidates.append(node)

    accepted: list[int] = []
    for node in sorted(candidates, key=lambda node: (graph.clearance[node], node)):
        spacing = max(4.0, 2.0 * graph.clearance[node])
        position = graph.nodes[node]
        if all(np.hypot(*(graph.nodes[other] - position)) > spacing for other in accepted):
            accepted.append(node)
    return sorted(accepted)


def _merge_small_regions(labels: np.ndarray, low: float) -> np.ndarray:
    labels = labels.copy()
    while True:
        ids, areas = np.unique(labels[labels > 0], return_counts=True)
        merged = False
        for room, area in sorted(zip(ids.tolist(), areas.tolist()), key=lambda item: (item[1], item[0])):
            if area >= low:
                continue
            mask = labels == room
            ring = ndimage.binary_dilation(mask, structure=FOUR_CONNECTED) & ~mask
            neighbours, shared = np.unique(labels[ring & (labels > 0)], return_counts=True)
            if neighbours.size == 0:
                continue
            target = int(neighbours[np.lexsort((neighbours, -shared))[0]])
            labels[mask] = target
            merged = True
            break
        if not merged:
            return labels


def voronoi_segment(
    grid: OccupancyGrid,
    topograph: TopoGraph,
    room_area_min_m2: float = DEFAULT_CONFIG["baselines"]["room_area_min_m2"],
    room_area_max_m2: float = DEFAULT_CONFIG["baselines"]["room_area_max_m2"],
) -> SegmentedMap:
    free = _require_free(grid)
    low, _ = room_area_band(grid, room_area_min_m2, room_area_max_m2)
    obstacle = ~free
    nearest_rows, nearest_cols = _nearest_obstacles(grid)

    cut = np.zeros(grid.shape, dtype=bool)
    for node in critical_nodes(topograph):
        col, row = (int(value) for value in topograph.nodes[node])
        first = (int(nearest_rows[row, col]), int(nearest_cols[row, col]))
        radius = int(np.ceil(1.5 * topograph.clearance[node])) + 2
        second = _opposite_obstacle(obstacle, row, col, first, radius)
        if second is None:
            continue
        for target in (first, second):
            line_rows, line_cols = draw_line(row, col, *target)
            valid = (line_rows >= 0) & (line_rows < grid.height) & (line_cols >= 0) & (line_cols < grid.width)
            cut[line_rows[valid], line_cols[valid]] = True
    cut &= free

    regions, _ = ndimage.label(free & ~cut, structure=FOUR_CONNECTED)
    grown = _grow(free, regions)
    merged = _merge_small_regions(np.where(free, grown, 0), low)
    log.debug("Segmentacion Voronoi: %d celdas de corte", int(cut.sum()))
    return _finish(grid, merged)
