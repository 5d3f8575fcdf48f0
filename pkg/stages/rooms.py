from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import partial
from pathlib import Path
from typing import Iterable, Sequence

import networkx as nx
import numpy as np
import shapely
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from shapely.geometry import MultiPolygon, Polygon
from shapely.ops import unary_union

from map_shared import (
    FREE,
    UNKNOWN,
    get_logger,
    run_stage,
)
from stages import arrangement as arr
from stages import drawing, rose, topology, walls
from stages.arrangement import Arrangement, ArrEdge, Face, LineFilter, VertexPool, split_convex
from stages.gridmap import LabelGrid, OccupancyGrid, cell_to_world
from stages.rose import CleanMap, DirectionSet, ScoreGrid
from stages.topology import TopoGraph
from stages.walls import RepresentativeLine, WallStructure, clip_line_to_bbox, direction_normal


log = get_logger("rooms")

POLYGON_GRID = 1e-6
MIN_PIECE_AREA = 1e-9
SHARED_BOUNDARY_TOLERANCE = 1e-4


@dataclass(frozen=True, eq=False)
class Room:
    id: int
    polygon: Polygon
    faces: tuple[Face, ...]
    observed_fraction: float = 1.0

    @property
    def face_ids(self) -> tuple[int, ...]:
        return tuple(face.id for face in self.faces)

    @property
    def area(self) -> float:
        return float(self.polygon.area)


@dataclass(frozen=True, eq=False)
class FloorPlan:
    rooms: tuple[Room, ...]
    exterior_face_ids: tuple[int, ...] = ()
    warnings: tuple[str, ...] = ()
    cut_lines: tuple[RepresentativeLine, ...] = ()

    def __len__(self) -> int:
        return len(self.rooms)

    def room(self, room_id: int) -> Room:
        return next(room for room in self.rooms if room.id == room_id)

    def to_dict(self, grid: OccupancyGrid) -> dict:
        cell_area = grid.resolution**2
        rooms = []
        for room in self.rooms:
            rings = [room.polygon.exterior, *room.polygon.interiors]
            rooms.append(
                {
                    "id": room.id,
                    "caras": list(room.face_ids),
                    "area_celdas": round(room.area, 6),
                    "area_m2": round(room.area * cell_area, 6),
                    "fraccion_observada": round(room.observed_fraction, 6),
                    "vertices_celdas": [
                        [[round(x, 6), round(y, 6)] for x, y in ring.coords] for ring in rings
                    ],
                    "vertices_m": [
                        [[round(value, 6) for value in cell_to_world(grid, x, y)] for x, y in ring.coords]
                        for ring in rings
                    ],
                }
            )
        return {
            "resolucion": grid.resolution,
            "origen": list(grid.origin),
            "habitaciones": rooms,
            "caras_exteriores": list(self.exterior_face_ids),
            "advertencias": list(self.warnings),
        }


@dataclass(frozen=True, eq=False)
class SegmentedMap(LabelGrid):
    resolution: float = 1.0
    origin: tuple[float, float] = (0.0, 0.0)


@dataclass(frozen=True, eq=False)
class FacePartition:
    rooms: list[tuple[int, ...]]
    exterior: tuple[int, ...]


@dataclass(eq=False)
class PipelineResult:
    clean: CleanMap
    lines: list[RepresentativeLine]
    faces: Arrangement
    floorplan: FloorPlan
    segmented: SegmentedMap
    directions: DirectionSet | None = None
    scores: ScoreGrid | None = None
    walls: WallStructure | None = None
    full_arrangement: Arrangement | None = None
    line_filter: LineFilter | None = None
    topograph: TopoGraph | None = None
    timings: dict[str, float] = field(default_factory=dict)


def effective_weights(arrangement: Arrangement, line_filter: LineFilter | None = None) -> dict[int, float]:
    """Peso con el que cada arista actua como muro una vez filtradas las rectas."""
    if line_filter is None:
        return {edge.id: edge.weight for edge in arrangement.edges}
    removed = set(line_filter.removed_line_ids)
    retained = {edge.id for edge in line_filter.retained_edges}
    return {
        edge.id: 0.0 if edge.line_id in removed and edge.id not in retained else edge.weight
        for edge in arrangement.edges
    }


def exterior_faces(arrangement: Arrangement, weights: dict[int, float] | None = None) -> tuple[int, ...]:
    weights = weights if weights is not None else {edge.id: edge.weight for edge in arrangement.edges}
    touches: set[int] = set()
    evidence: set[int] = set()
    for edge in arrangement.edges:
        if not edge.is_interior:
            touches.update(face for face in edge.faces if face >= 0)
        if edge.line_id is not None and weights[edge.id] > 0:
            evidence.update(face for face in edge.faces if face >= 0)
    return tuple(sorted(touches - evidence))


def cluster_faces(
    arrangement: Arrangement,
    retained_edges: Iterable[ArrEdge] = (),
    wall_weight_threshold: float = 0.5,
    weights: dict[int, float] | None = None,
    exterior: Iterable[int] | None = None,
) -> FacePartition:
    weights = weights if weights is not None else {edge.id: edge.weight for edge in arrangement.edges}
    exterior = tuple(sorted(exterior)) if exterior is not None else exterior_faces(arrangement, weights)
    retained = {edge.id for edge in retained_edges}
    candidates = [face.id for face in arrangement.faces if face.id not in set(exterior)]
    if not candidates:
        return FacePartition(rooms=[], exterior=exterior)

    position = {face_id: index for index, face_id in enumerate(candidates)}
    rows, cols = [], []
    for edge in arrangement.edges:
        first, second = edge.faces
        if first not in position or second not in position:
            continue
        if weights[edge.id] < wall_weight_threshold and edge.id not in retained:
            rows.append(position[first])
            cols.append(position[second])

    size = len(candidates)
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(size, size)).tocsr()
    _, labels = connected_components(graph, directed=False)

    groups: dict[int, list[int]] = {}
    for face_id, label in zip(candidates, labels.tolist()):
        groups.setdefault(label, []).append(face_id)
    rooms = sorted((tuple(sorted(group)) for group in groups.values()), key=lambda group: group[0])
    return FacePartition(rooms=rooms, exterior=exterior)


def merge_face_polygons(faces: Sequence[Face]) -> Polygon:
    if not faces:
        raise ValueError("No hay caras para fusionar.")
    pieces = [shapely.set_precision(face.polygon, POLYGON_GRID) for face in faces]
    merged = unary_union(pieces)
    if isinstance(merged, MultiPolygon) or not isinstance(merged, Polygon):
        raise ValueError("Las caras no forman un conjunto conexo.")
    holes = [ring for ring in merged.interiors if Polygon(ring).area > POLYGON_GRID]
    return Polygon(merged.exterior, holes).simplify(1e-9)


def merge_faces(face_ids: Sequence[int], arrangement: Arrangement) -> Room:
    faces = tuple(arrangement.face(face_id) for face_id in sorted(face_ids))
    return Room(id=0, polygon=merge_face_polygons(faces), faces=faces)


def _cell_centers(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    rows, cols = np.nonzero(mask)
    return rows, cols, cols + 0.5, rows + 0.5


def _cells_in_polygon(polygon: Polygon, shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    min_x, min_y, max_x, max_y = polygon.bounds
    height, width = shape
    row_range = np.arange(max(0, int(np.floor(min_y - 0.5))), min(height, int(np.ceil(max_y + 0.5))))
    col_range = np.arange(max(0, int(np.floor(min_x - 0.5))), min(width, int(np.ceil(max_x + 0.5))))
    if row_range.size == 0 or col_range.size == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    rows, cols = np.meshgrid(row_range, col_range, indexing="ij")
    rows, cols = rows.ravel(), cols.ravel()
    inside = shapely.intersects_xy(polygon, cols + 0.5, rows + 0.5)
    return rows[inside], cols[inside]


def observed_fraction(grid: OccupancyGrid, polygon: Polygon) -> float:
    rows, cols = _cells_in_polygon(polygon, grid.shape)
    if rows.size == 0:
        return 0.0
    return float(np.count_nonzero(grid.cells[rows, cols] != UNKNOWN) / rows.size)


def _contains_free_cell(grid: OccupancyGrid, polygon: Polygon) -> bool:
    rows, cols = _cells_in_polygon(polygon, grid.shape)
    return bool(np.any(grid.cells[rows, cols] == FREE))


def _renumbered(grid: OccupancyGrid, rooms: Sequence[Room]) -> tuple[Room, ...]:
    return tuple(
        Room(
            id=index,
            polygon=room.polygon,
            faces=room.faces,
            observed_fraction=observed_fraction(grid, room.polygon),
        )
        for index, room in enumerate(rooms, start=1)
    )


def build_floorplan(grid: OccupancyGrid, arrangement: Arrangement, partition: FacePartition) -> FloorPlan:
    rooms: list[Room] = []
    exterior = set(partition.exterior)
    warnings: list[str] = []
    for group in partition.rooms:
        room = merge_faces(group, arrangement)
        # Habitaciones sin ninguna celda libre no representan espacio recorrible.
        if not _contains_free_cell(grid, room.polygon):
            exterior.update(group)
            continue
        rooms.append(room)

    if not rooms:
        warnings.append("Ninguna cara interior contiene espacio libre; se usa el mapa completo como una habitacion.")
        log.warning(warnings[-1])
        faces = arrangement.faces
        rooms = [Room(id=0, polygon=merge_face_polygons(faces), faces=tuple(faces))]
        exterior = set()

    return FloorPlan(
        rooms=_renumbered(grid, rooms),
        exterior_face_ids=tuple(sorted(exterior)),
        warnings=tuple(warnings),
    )


def segment_map(grid: OccupancyGrid, floorplan: FloorPlan) -> SegmentedMap:
    if not floorplan.rooms:
        raise ValueError("El plano no tiene habitaciones para segmentar el mapa.")
    rows, cols, xs, ys = _cell_centers(grid.free_mask)
    assigned = np.zeros(rows.size, dtype=np.int32)
    rooms = sorted(floorplan.rooms, key=lambda room: room.id)
    for room in rooms:
        pending = assigned == 0
        if not pending.any():
            break
        inside = np.zeros(rows.size, dtype=bool)
        inside[pending] = shapely.intersects_xy(room.polygon, xs[pending], ys[pending])
        assigned[inside] = room.id

    stray = np.flatnonzero(assigned == 0)
    if stray.size:
        points = shapely.points(xs[stray], ys[stray])
        distances = np.stack([shapely.distance(room.polygon, points) for room in rooms])
        assigned[stray] = np.array([room.id for room in rooms], dtype=np.int32)[np.argmin(distances, axis=0)]
        log.debug("%d celdas libres fuera de todo poligono asignadas por cercania", stray.size)

    labels = np.zeros(grid.shape, dtype=np.int32)
    labels[rows, cols] = assigned
    return SegmentedMap(labels=labels, resolution=grid.resolution, origin=grid.origin)


def _cut_line(direction: float, offset: float, bbox: Sequence[float]) -> RepresentativeLine | None:
    anchor = offset * direction_normal(direction)
    chord = clip_line_to_bbox(anchor, direction, bbox)
    if chord is None:
        return None
    return RepresentativeLine(
        id=-1,
        direction=float(direction),
        anchor=(float(anchor[0]), float(anchor[1])),
        start=chord[0],
        end=chord[1],
        total_length=0.0,
    )


class _RoomSplitter:
    def __init__(
        self,
        graph: TopoGraph,
        kept_lines: Sequence[RepresentativeLine],
        directions: Sequence[float],
        bbox: Sequence[float],
        min_component_nodes: int,
        max_depth: int,
        next_face_id: int,
    ) -> None:
        self.graph = graph
        self.nx_graph = graph.to_networkx()
        self.kept_lines = sorted(kept_lines, key=lambda line: line.id)
        self.directions = sorted(float(psi) for psi in directions)
        self.bbox = bbox
        self.min_component_nodes = min_component_nodes
        self.max_depth = max_depth
        self.next_face_id = next_face_id
        self.pool = VertexPool()
        self.warnings: list[str] = []
        self.cut_lines: list[RepresentativeLine] = []
        self.centers = graph.nodes.astype(float) + 0.5 if len(graph) else np.zeros((0, 2))

    def components(self, nodes: np.ndarray) -> list[np.ndarray]:
        if nodes.size == 0:
            return []
        subgraph = self.nx_graph.subgraph(nodes.tolist())
        found = [np.array(sorted(component)) for component in nx.connected_components(subgraph)]
        found = [component for component in found if component.size >= self.min_component_nodes]
        return sorted(found, key=lambda component: int(component[0]))

    def _split_faces(self, faces: Sequence[Face], line: RepresentativeLine) -> tuple[list[Face], list[Face]]:
        negative, positive = [], []
        for face in faces:
            low, high = split_convex(list(face.vertices), line, self.pool)
            for ring, side in ((low, negative), (high, positive)):
                if len(ring) < 3:
                    continue
                area = arr.polygon_area(ring)
                if area <= MIN_PIECE_AREA:
                    continue
                if ring == list(face.vertices):
                    side.append(face)
                    continue
                side.append(
                    Face(id=self.next_face_id, vertices=tuple(ring), area=area, centroid=arr.polygon_centroid(ring))
                )
                self.next_face_id += 1
        return negative, positive

    def _separating_kept_line(self, components: list[np.ndarray], faces: Sequence[Face]):
        candidates = []
        for line in self.kept_lines:
            sides = []
            margin = np.inf
            for component in components:
                distances = line.signed_distance(self.centers[component])
                if np.all(distances > 0):
                    sides.append(1)
                elif np.all(distances < 0):
                    sides.append(-1)
                else:
                    break
                margin = min(margin, float(np.min(np.abs(distances))))
            if len(sides) == len(components) and len(set(sides)) == 2:
                candidates.append((-margin, line.id, line))

        for _, _, line in sorted(candidates, key=lambda item: item[:2]):
            negative, positive = self._split_faces(faces, line)
            if negative and positive:
                return line, negative, positive
        return None

    def _separating_direction(self, components: list[np.ndarray], faces: Sequence[Face]):
        for psi in self.directions:
            normal = direction_normal(psi)
            intervals = sorted(
                (float(projection.min()), float(projection.max()))
                for projection in (self.centers[component] @ normal for component in components)
            )
            blocks = [list(intervals[0])]
            for low, high in intervals[1:]:
                if low <= blocks[-1][1]:
                    blocks[-1][1] = max(blocks[-1][1], high)
                else:
                    blocks.append([low, high])
            gaps = sorted(
                (following[0] - current[1], (following[0] + current[1]) / 2.0)
                for current, following in zip(blocks, blocks[1:])
            )
            for _, cut in gaps:
                line = _cut_line(psi, cut, self.bbox)
                if line is None:
                    continue
                negative, positive = self._split_faces(faces, line)
                if negative and positive:
                    return line, negative, positive
        return None

    def split(self, faces: Sequence[Face], nodes: np.ndarray, depth: int) -> list[tuple[Face, ...]]:
        components = self.components(nodes)
        if len(components) < 2:
            return [tuple(faces)]
        if depth >= self.max_depth:
            self.warnings.append(
                f"Se alcanzo la profundidad maxima de division ({self.max_depth}); la habitacion queda sin dividir."
            )
            return [tuple(faces)]

        found = self._separating_kept_line(components, faces)
        if found is not None:
            line, negative, positive = found
        else:
            fallback = self._separating_direction(components, faces)
            if fallback is None:
                self.warnings.append(
                    f"Habitacion con {len(components)} componentes topologicas sin recta separadora; se deja intacta."
                )
                return [tuple(faces)]
            line, negative, positive = fallback
            self.cut_lines.append(line)
        log.debug("Division por recta de direccion %.2f grados", np.degrees(line.direction))

        pieces: list[tuple[Face, ...]] = []
        for side in (negative, positive):
            for part_faces in _connected_parts(side):
                polygon = merge_face_polygons(part_faces)
                inside = nodes
                if nodes.size:
                    centers = self.centers[nodes]
                    inside = nodes[shapely.intersects_xy(polygon, centers[:, 0], centers[:, 1])]
                pieces.extend(self.split(part_faces, inside, depth + 1))
        return pieces


def _connected_parts(faces: Sequence[Face]) -> list[list[Face]]:
    """Agrupa caras por contacto de borde; un lado de un corte puede quedar en varias piezas."""
    if not faces:
        return []
    union = unary_union([shapely.set_precision(face.polygon, POLYGON_GRID) for face in faces])
    parts = list(union.geoms) if isinstance(union, MultiPolygon) else [union]
    grouped: list[list[Face]] = [[] for _ in parts]
    for face in faces:
        point = face.polygon.representative_point()
        distances = [part.distance(point) for part in parts]
        grouped[int(np.argmin(distances))].append(face)
    groups = [group for group in grouped if group]
    return sorted(groups, key=lambda group: min(face.id for face in group))


def split_disconnected(
    floorplan: FloorPlan,
    segmented: LabelGrid,
    topograph: TopoGraph,
    kept_lines: Sequence[RepresentativeLine],
    directions: Sequence[float],
    grid: OccupancyGrid | None = None,
    min_component_nodes: int = 10,
    max_depth: int = 8,
) -> FloorPlan:
    all_faces = [face for room in floorplan.rooms for face in room.faces]
    next_face_id = max((face.id for face in all_faces), default=-1) + 1
    height, width = segmented.shape
    splitter = _RoomSplitter(
        graph=topograph,
        kept_lines=kept_lines,
        directions=list(directions),
        bbox=(0.0, 0.0, float(width), float(height)),
        min_component_nodes=min_component_nodes,
        max_depth=max_depth,
        next_face_id=next_face_id,
    )

    rooms: list[Room] = []
    changed = False
    for room in sorted(floorplan.rooms, key=lambda room: room.id):
        nodes = topograph.nodes_in(segmented.labels == room.id)
        pieces = splitter.split(room.faces, nodes, depth=0)
        if len(pieces) == 1:
            rooms.append(room)
            continue
        changed = True
        log.info("Habitacion %d dividida en %d por desconexion topologica", room.id, len(pieces))
        rooms.extend(Room(id=0, polygon=merge_face_polygons(faces), faces=faces) for faces in pieces)

    warnings = floorplan.warnings + tuple(splitter.warnings)
    cut_lines = floorplan.cut_lines + tuple(splitter.cut_lines)
    if not changed:
        return FloorPlan(
            rooms=floorplan.rooms,
            exterior_face_ids=floorplan.exterior_face_ids,
            warnings=warnings,
            cut_lines=cut_lines,
        )
    if grid is not None:
        renumbered = _renumbered(grid, rooms)
    else:
        renumbered = tuple(
            Room(id=index, polygon=room.polygon, faces=room.faces, observed_fraction=room.observed_fraction)
            for index, room in enumerate(rooms, start=1)
        )
    return FloorPlan(
        rooms=renumbered,
        exterior_face_ids=floorplan.exterior_face_ids,
        warnings=warnings,
        cut_lines=cut_lines,
    )


def free_area(grid: OccupancyGrid, polygon: Polygon) -> int:
    """Celdas libres cuyo centro cae dentro de ``polygon``."""
    rows, cols = _cells_in_polygon(polygon, grid.shape)
    return int(np.count_nonzero(grid.cells[rows, cols] == FREE))


def _shared_boundary(first: Room, second: Room) -> float:
    return float(second.polygon.boundary.intersection(first.polygon.buffer(SHARED_BOUNDARY_TOLERANCE)).length)


def merge_small_rooms(grid: OccupancyGrid, floorplan: FloorPlan, min_area_m2: float) -> FloorPlan:
    """Funde cada habitacion con menos de ``min_area_m2`` libres en la vecina con la que comparte mas borde.

    Las habitaciones pequenas sin vecinas se conservan. Se procesa primero la mas pequena.
    """
    if min_area_m2 <= 0 or len(floorplan.rooms) < 2:
        return floorplan
    min_cells = min_area_m2 / grid.resolution**2
    rooms = {room.id: room for room in floorplan.rooms}
    areas = {room.id: free_area(grid, room.polygon) for room in floorplan.rooms}
    isolated: set[int] = set()

    while len(rooms) > 1:
        small = sorted(
            (area, room_id) for room_id, area in areas.items() if area < min_cells and room_id not in isolated
        )
        if not small:
            break
        area, room_id = small[0]
        room = rooms[room_id]
        shared = sorted((-_shared_boundary(room, other), other.id) for other in rooms.values() if other.id != room_id)
        if not shared or -shared[0][0] <= SHARED_BOUNDARY_TOLERANCE:
            isolated.add(room_id)
            continue
        target = rooms[shared[0][1]]
        faces = tuple(sorted(target.faces + room.faces, key=lambda face: face.id))
        rooms[target.id] = Room(id=target.id, polygon=merge_face_polygons(faces), faces=faces)
        areas[target.id] = free_area(grid, rooms[target.id].polygon)
        del rooms[room_id], areas[room_id]
        log.debug("Habitacion %d (%d celdas libres) fundida con la %d", room_id, area, target.id)

    if len(rooms) == len(floorplan.rooms):
        return floorplan
    log.info("%d habitaciones pequenas fundidas con sus vecinas", len(floorplan.rooms) - len(rooms))
    ordered = [rooms[room_id] for room_id in sorted(rooms)]
    return FloorPlan(
        rooms=_renumbered(grid, ordered),
        exterior_face_ids=floorplan.exterior_face_ids,
        warnings=floorplan.warnings,
        cut_lines=floorplan.cut_lines,
    )


def attach_arrangement(
    full: Arrangement, floorplan: FloorPlan, band_halfwidth: float, threads: int = 1
) -> tuple[Arrangement, FloorPlan]:
    """Arreglo cuyas caras son exactamente las de las habitaciones mas las exteriores.

    Si la division topologica corto caras con rectas nuevas, el arreglo se reconstruye
    con ellas y cada cara nueva pasa a la habitacion que contiene su centroide.
    """
    known = {face.id for face in full.faces}
    used = {face_id for room in floorplan.rooms for face_id in room.face_ids} | set(floorplan.exterior_face_ids)
    if not floorplan.cut_lines and used == known:
        return full, floorplan

    first_id = max((line.id for line in full.lines), default=-1) + 1
    cuts = [replace(line, id=first_id + index) for index, line in enumerate(floorplan.cut_lines)]
    lines = [*full.lines, *cuts]
    refined = arr.build_arrangement(lines, full.bbox) if lines else arr.trivial_arrangement(full.bbox)
    refined = arr.assign_edge_weights(refined, band_halfwidth, threads)

    centroids = np.array([face.centroid for face in refined.faces], dtype=float)
    owner = np.zeros(len(refined.faces), dtype=np.int64)
    for room in sorted(floorplan.rooms, key=lambda room: room.id):
        inside = (owner == 0) & shapely.intersects_xy(room.polygon, centroids[:, 0], centroids[:, 1])
        owner[inside] = room.id
    rooms = tuple(
        Room(
            id=room.id,
            polygon=room.polygon,
            faces=tuple(face for face, room_id in zip(refined.faces, owner.tolist()) if room_id == room.id),
            observed_fraction=room.observed_fraction,
        )
        for room in floorplan.rooms
    )
    exterior = tuple(face.id for face, room_id in zip(refined.faces, owner.tolist()) if room_id == 0)
    log.debug("Arreglo final con %d rectas de corte: %d caras", len(cuts), len(refined.faces))
    return refined, FloorPlan(
        rooms=rooms, exterior_face_ids=exterior, warnings=floorplan.warnings, cut_lines=floorplan.cut_lines
    )


def _band_halfwidth(config: dict, resolution: float) -> float:
    band_m = config["arrangement"]["band_halfwidth_m"] or config["walls"]["doorway_width_m"] / 2.0
    return band_m / resolution


def _structure(grid: OccupancyGrid, config: dict, threads: int):
    rose_config = config["rose"]
    seed = config["run"]["seed"]
    spectrum = rose.dft_spectrum(grid)
    histogram = rose.directional_amplitude(spectrum, rose_config["bins"])
    directions = rose.select_dominant_directions(
        histogram,
        rose_config["max_directions"],
        rose_config["min_prominence"],
        rose_config["merge_radius_deg"],
    )
    scores = rose.structure_score(grid, directions, rose_config["ridge_half_width_deg"], spectrum)
    counted = directions if rose_config["count_off_direction"] else None
    counter = partial(walls.count_segments, params=config["walls"], seed=seed, directions=counted)
    clean = rose.auto_threshold(
        grid,
        scores,
        counter,
        tuple(rose_config["target_ratio"]),
        rose_config["quantile_step"],
        threads,
    )
    return spectrum, histogram, directions, scores, clean


def _arrangements(grid: OccupancyGrid, structure: WallStructure, config: dict, threads: int):
    if not structure.lines:
        log.warning("No se detectaron rectas representativas; se usa el arreglo trivial.")
        return arr.trivial_arrangement(grid.bbox), LineFilter([], [], [], {})
    full = arr.build_arrangement(structure.lines, grid.bbox)
    full = arr.assign_edge_weights(full, _band_halfwidth(config, grid.resolution), threads)
    line_filter = arr.filter_lines(
        full,
        config["arrangement"]["min_total_coverage"],
        config["arrangement"]["keep_edge_coverage"],
    )
    return full, line_filter


def _rooms(grid: OccupancyGrid, full: Arrangement, line_filter: LineFilter, config: dict):
    weights = effective_weights(full, line_filter)
    partition = cluster_faces(
        full,
        line_filter.retained_edges,
        config["rooms"]["wall_weight_threshold"],
        weights=weights,
    )
    floorplan = build_floorplan(grid, full, partition)
    floorplan = merge_small_rooms(grid, floorplan, config["rooms"]["min_room_area_m2"])
    return floorplan, segment_map(grid, floorplan)


def _topology(grid, floorplan, segmented, line_filter, directions, config):
    graph = topology.voronoi_graph(grid)
    split = split_disconnected(
        floorplan,
        segmented,
        graph,
        line_filter.kept_lines,
        directions,
        grid=grid,
        min_component_nodes=config["rooms"]["min_component_nodes"],
        max_depth=config["rooms"]["max_split_depth"],
    )
    resegmented = segmented if split.rooms is floorplan.rooms else segment_map(grid, split)
    return graph, split, resegmented


def run_pipeline(grid: OccupancyGrid, config: dict, debug_dir: str | Path | None = None) -> PipelineResult:
    threads = max(1, int(config["run"]["threads"]))
    timings: dict[str, float] = {}

    spectrum, histogram, directions, scores, clean = run_stage(
        "rose", _structure, grid, config, threads, timings=timings
    )
    structure = run_stage(
        "walls",
        walls.extract_walls,
        clean.grid,
        directions,
        config["walls"],
        seed=config["run"]["seed"],
        threads=threads,
        timings=timings,
    )
    full, line_filter = run_stage(
        "arrangement", _arrangements, grid, structure, config, threads, timings=timings
    )
    floorplan, segmented = run_stage("rooms", _rooms, grid, full, line_filter, config, timings=timings)
    graph, floorplan, segmented = run_stage(
        "topology", _topology, grid, floorplan, segmented, line_filter, directions, config, timings=timings
    )
    faces, floorplan = run_stage(
        "arrangement",
        attach_arrangement,
        full,
        floorplan,
        _band_halfwidth(config, grid.resolution),
        threads,
        timings=timings,
    )

    if debug_dir is not None:
        debug_dir = Path(debug_dir)
        rose.dump_debug(spectrum, histogram, debug_dir)
        drawing.dump_walls(structure, grid, debug_dir / "walls_clusters.svg")
        drawing.dump_arrangement(faces, grid, debug_dir)
        topology.dump_debug(graph, grid, debug_dir)

    log.info(
        "Segmentacion terminada: %d habitaciones, %d rectas conservadas",
        len(floorplan.rooms),
        len(line_filter.kept_lines),
    )
    return PipelineResult(
        clean=clean,
        lines=list(line_filter.kept_lines),
        faces=faces,
        floorplan=floorplan,
        segmented=segmented,
        directions=directions,
        scores=scores,
        walls=structure,
        full_arrangement=full,
        line_filter=line_filter,
        topograph=graph,
        timings=timings,
    )
