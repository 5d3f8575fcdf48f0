from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from shapely.geometry import Polygon

from map_shared import EXTERIOR_FACE, get_logger
from stages.walls import RepresentativeLine


log = get_logger("arrangement")

SNAP_TOLERANCE = 1e-7
MIN_FACE_AREA = 1e-12
SIDE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class Face:
    id: int
    vertices: tuple[tuple[float, float], ...]
    area: float
    centroid: tuple[float, float]

    @property
    def polygon(self) -> Polygon:
        return Polygon(self.vertices)

    @property
    def points(self) -> np.ndarray:
        return np.array(self.vertices, dtype=float)


@dataclass(frozen=True)
class ArrEdge:
    id: int
    line_id: int | None
    start: tuple[float, float]
    end: tuple[float, float]
    faces: tuple[int, int]
    weight: float = 0.0

    @property
    def length(self) -> float:
        return float(np.hypot(self.end[0] - self.start[0], self.end[1] - self.start[1]))

    @property
    def midpoint(self) -> tuple[float, float]:
        return (self.start[0] + self.end[0]) / 2.0, (self.start[1] + self.end[1]) / 2.0

    @property
    def is_interior(self) -> bool:
        return EXTERIOR_FACE not in self.faces

    @property
    def is_boundary(self) -> bool:
        return self.line_id is None


@dataclass(frozen=True, eq=False)
class Arrangement:
    lines: tuple[RepresentativeLine, ...]
    faces: tuple[Face, ...]
    edges: tuple[ArrEdge, ...]
    bbox: tuple[float, float, float, float]
    adjacency: dict[int, tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        neighbours: dict[int, set[int]] = {face.id: set() for face in self.faces}
        for edge in self.edges:
            first, second = edge.faces
            if edge.is_interior:
                neighbours[first].add(second)
                neighbours[second].add(first)
        object.__setattr__(
            self, "adjacency", {face_id: tuple(sorted(ids)) for face_id, ids in neighbours.items()}
        )

    def face(self, face_id: int) -> Face:
        return self.faces[face_id]

    def line(self, line_id: int) -> RepresentativeLine:
        return next(line for line in self.lines if line.id == line_id)

    def edges_of_line(self, line_id: int) -> list[ArrEdge]:
        return [edge for edge in self.edges if edge.line_id == line_id]

    def edges_of_face(self, face_id: int) -> list[ArrEdge]:
        return [edge for edge in self.edges if face_id in edge.faces]

    def edge_between(self, first: int, second: int) -> ArrEdge | None:
        pair = {first, second}
        return next((edge for edge in self.edges if set(edge.faces) == pair), None)

    @property
    def total_area(self) -> float:
        return float(sum(face.area for face in self.faces))

    def to_dict(self) -> dict:
        return {
            "bbox": list(self.bbox),
            "lines": [
                {
                    "id": line.id,
                    "direccion_grados": round(float(np.degrees(line.direction)), 6),
                    "inicio": [round(value, 6) for value in line.start],
                    "fin": [round(value, 6) for value in line.end],
                }
                for line in self.lines
            ],
            "faces": [
                {
                    "id": face.id,
                    "area": round(face.area, 6),
                    "vertices": [[round(x, 6), round(y, 6)] for x, y in face.vertices],
                }
                for face in self.faces
            ],
            "edges": [
                {
                    "id": edge.id,
                    "line_id": edge.line_id,
                    "faces": list(edge.faces),
                    "inicio": [round(value, 6) for value in edge.start],
                    "fin": [round(value, 6) for value in edge.end],
                    "peso": round(edge.weight, 6),
                }
                for edge in self.edges
            ],
        }


@dataclass(frozen=True, eq=False)
class LineFilter:
    kept_lines: list[RepresentativeLine]
    removed_line_ids: list[int]
    retained_edges: list[ArrEdge]
    coverage: dict[int, float]


class VertexPool:
    """Unifica vertices a menos de SNAP_TOLERANCE para que las caras compartan coordenadas."""

    def __init__(self) -> None:
        self._buckets: dict[tuple[int, int], list[tuple[float, float]]] = {}

    def snap(self, point: Sequence[float]) -> tuple[float, float]:
        x, y = float(point[0]), float(point[1])
        key = (int(np.floor(x / SNAP_TOLERANCE)), int(np.floor(y / SNAP_TOLERANCE)))
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for candidate in self._buckets.get((key[0] + dx, key[1] + dy), []):
                    if np.hypot(candidate[0] - x, candidate[1] - y) <= SNAP_TOLERANCE:
                        return candidate
        self._buckets.setdefault(key, []).append((x, y))
        return x, y


def polygon_area(vertices: Sequence[Sequence[float]]) -> float:
    points = np.asarray(vertices, dtype=float)
    x, y = points[:, 0], points[:, 1]
    return float(0.5 * (np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y)))


def polygon_centroid(vertices: Sequence[Sequence[float]]) -> tuple[float, float]:
    points = np.asarray(vertices, dtype=float)
    x, y = points[:, 0], points[:, 1]
    x_next, y_next = np.roll(x, -1), np.roll(y, -1)
    cross = x * y_next - x_next * y
    area = cross.sum() / 2.0
    if abs(area) <= MIN_FACE_AREA:
        return float(x.mean()), float(y.mean())
    return float(((x + x_next) * cross).sum() / (6 * area)), float(((y + y_next) * cross).sum() / (6 * area))


def _dedupe_ring(vertices: list[tuple[float, float]]) -> list[tuple[float, float]]:
    ring = []
    for vertex in vertices:
        if not ring or ring[-1] != vertex:
            ring.append(vertex)
    while len(ring) > 1 and ring[0] == ring[-1]:
        ring.pop()
    return ring


def split_convex(
    vertices: list[tuple[float, float]], line: RepresentativeLine, pool: VertexPool
) -> tuple[list[tuple[float, float]], list[tuple[float, float]]]:
    """Divide un poligono convexo por la recta; devuelve (lado negativo, lado positivo)."""
    points = np.asarray(vertices, dtype=float)
    sides = line.signed_distance(points)
    sides[np.abs(sides) <= SIDE_TOLERANCE] = 0.0
    if np.all(sides >= 0):
        return [], list(vertices)
    if np.all(sides <= 0):
        return list(vertices), []

    negative, positive = [], []
    count = len(vertices)
    for index in range(count):
        current, following = vertices[index], vertices[(index + 1) % count]
        side, next_side = sides[index], sides[(index + 1) % count]
        if side <= 0:
            negative.append(current)
        if side >= 0:
            positive.append(current)
        if side * next_side < 0:
            t = side / (side - next_side)
            crossing = pool.snap(
                (
                    current[0] + t * (following[0] - current[0]),
                    current[1] + t * (following[1] - current[1]),
                )
            )
            negative.append(crossing)
            positive.append(crossing)
    return _dedupe_ring(negative), _dedupe_ring(positive)


def _bbox_ring(bbox: Sequence[float], pool: VertexPool) -> list[tuple[float, float]]:
    x_min, y_min, x_max, y_max = bbox
    return [pool.snap(point) for point in ((x_min, y_min), (x_max, y_min), (x_max, y_max), (x_min, y_max))]


def _line_signs(lines: Sequence[RepresentativeLine], point: Sequence[float]) -> tuple[int, ...]:
    return tuple(1 if float(np.dot(point, line.normal)) - line.offset > 0 else -1 for line in lines)


def _on_bbox_side(first, second, bbox) -> bool:
    x_min, y_min, x_max, y_max = bbox
    for axis, bounds in ((0, (x_min, x_max)), (1, (y_min, y_max))):
        for bound in bounds:
            if abs(first[axis] - bound) <= SNAP_TOLERANCE and abs(second[axis] - bound) <= SNAP_TOLERANCE:
                return True
    return False


def _build_faces(lines: Sequence[RepresentativeLine], bbox: Sequence[float]) -> list[Face]:
    pool = VertexPool()
    rings = [_bbox_ring(bbox, pool)]
    for line in lines:
        pieces = []
        for ring in rings:
            for piece in split_convex(ring, line, pool):
                if len(piece) >= 3 and polygon_area(piece) > MIN_FACE_AREA:
                    pieces.append(piece)
        rings = pieces

    centroids = [polygon_centroid(ring) for ring in rings]
    order = sorted(range(len(rings)), key=lambda i: (round(centroids[i][1], 9), round(centroids[i][0], 9)))
    return [
        Face(
            id=face_id,
            vertices=tuple(rings[index]),
            area=polygon_area(rings[index]),
            centroid=centroids[index],
        )
        for face_id, index in enumerate(order)
    ]


def _line_edges(
    lines: Sequence[RepresentativeLine], signatures: dict[tuple[int, ...], int]
) -> list[tuple[int, tuple[float, float], tuple[float, float], tuple[int, int]]]:
    pieces = []
    for index, line in enumerate(lines):
        start = np.array(line.start)
        length = float(np.hypot(*(np.array(line.end) - start)))
        params = [0.0, length]
        for other in lines:
            if other.id == line.id:
                continue
            denominator = float(np.dot(line.unit, other.normal))
            if abs(denominator) < 1e-12:
                continue
            t = (other.offset - float(np.dot(start, other.normal))) / denominator
            if SNAP_TOLERANCE < t < length - SNAP_TOLERANCE:
                params.append(t)
        params.sort()
        merged = [params[0]]
        for value in params[1:]:
            if value - merged[-1] > SNAP_TOLERANCE:
                merged.append(value)

        others = [other for other in lines if other.id != line.id]
        for low, high in zip(merged, merged[1:]):
            first = start + low * line.unit
            second = start + high * line.unit
            middle = (first + second) / 2.0
            rest = _line_signs(others, middle)
            sides = []
            for own in (-1, 1):
                signature = rest[:index] + (own,) + rest[index:]
                sides.append(signatures.get(signature, EXTERIOR_FACE))
            pieces.append(
                (
                    line.id,
                    (float(first[0]), float(first[1])),
                    (float(second[0]), float(second[1])),
                    (sides[0], sides[1]),
                )
            )
    return pieces


def _boundary_edges(
    faces: Sequence[Face], lines: Sequence[RepresentativeLine], bbox: Sequence[float]
) -> list[tuple[None, tuple[float, float], tuple[float, float], tuple[int, int]]]:
    pieces = []
    for face in faces:
        count = len(face.vertices)
        for index in range(count):
            first, second = face.vertices[index], face.vertices[(index + 1) % count]
            if not _on_bbox_side(first, second, bbox):
                continue
            middle = ((first[0] + second[0]) / 2.0, (first[1] + second[1]) / 2.0)
            # Un lado del rectangulo que coincide con una recta ya es arista de esa recta.
            if any(abs(float(line.signed_distance(np.array(middle)))) <= SNAP_TOLERANCE for line in lines):
                continue
            pieces.append((None, first, second, (face.id, EXTERIOR_FACE)))
    return pieces


def build_arrangement(lines: Sequence[RepresentativeLine], bbox: Sequence[float]) -> Arrangement:
    if not lines:
        raise ValueError("Se requiere al menos una recta para construir el arreglo.")
    bbox = tuple(float(value) for value in bbox)
    lines = tuple(sorted(lines, key=lambda line: (line.direction, line.offset, line.id)))

    faces = _build_faces(lines, bbox)
    signatures = {_line_signs(lines, face.centroid): face.id for face in faces}
    pieces = _line_edges(lines, signatures) + _boundary_edges(faces, lines, bbox)
    edges = tuple(
        ArrEdge(id=edge_id, line_id=line_id, start=start, end=end, faces=incident)
        for edge_id, (line_id, start, end, incident) in enumerate(pieces)
    )
    arrangement = Arrangement(lines=lines, faces=tuple(faces), edges=edges, bbox=bbox)
    log.info("Arreglo con %d rectas: %d caras, %d aristas", len(lines), len(faces), len(edges))
    return arrangement


def trivial_arrangement(bbox: Sequence[float]) -> Arrangement:
    """Arreglo sin rectas: una sola cara igual al rectangulo del mapa."""
    bbox = tuple(float(value) for value in bbox)
    pool = VertexPool()
    ring = _bbox_ring(bbox, pool)
    face = Face(id=0, vertices=tuple(ring), area=polygon_area(ring), centroid=polygon_centroid(ring))
    edges = tuple(
        ArrEdge(id=index, line_id=None, start=start, end=end, faces=(0, EXTERIOR_FACE))
        for index, (_, start, end, _) in enumerate(_boundary_edges([face], [], bbox))
    )
    return Arrangement(lines=(), faces=(face,), edges=edges, bbox=bbox)


def _union_length(intervals: list[tuple[float, float]]) -> float:
    total = 0.0
    current_low, current_high = None, None
    for low, high in sorted(intervals):
        if current_high is None or low > current_high:
            if current_high is not None:
                total += current_high - current_low
            current_low, current_high = low, high
        else:
            current_high = max(current_high, high)
    if current_high is not None:
        total += current_high - current_low
    return total


def edge_weight(edge: ArrEdge, line: RepresentativeLine | None, band_halfwidth: float) -> float:
    """Fraccion de la arista cubierta por la proyeccion de los segmentos de su propio muro."""
    if edge.line_id is None or line is None or line.cluster is None or edge.length <= 0:
        return 0.0
    unit = line.unit
    edge_low, edge_high = sorted((float(np.dot(edge.start, unit)), float(np.dot(edge.end, unit))))

    intervals = []
    for segment in line.cluster.segments:
        if abs(float(line.signed_distance(np.array(segment.midpoint)))) > band_halfwidth:
            continue
        low, high = sorted((float(np.dot(segment.a, unit)), float(np.dot(segment.b, unit))))
        low, high = max(low, edge_low), min(high, edge_high)
        if high > low:
            intervals.append((low, high))
    covered = _union_length(intervals)
    return float(np.clip(covered / (edge_high - edge_low), 0.0, 1.0))


def assign_edge_weights(arrangement: Arrangement, band_halfwidth: float, threads: int = 1) -> Arrangement:
    lines = {line.id: line for line in arrangement.lines}

    def weigh(edge: ArrEdge) -> ArrEdge:
        return replace(edge, weight=edge_weight(edge, lines.get(edge.line_id), band_halfwidth))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            edges = tuple(pool.map(weigh, arrangement.edges))
    else:
        edges = tuple(weigh(edge) for edge in arrangement.edges)
    return Arrangement(lines=arrangement.lines, faces=arrangement.faces, edges=edges, bbox=arrangement.bbox)


def filter_lines(
    arrangement: Arrangement, min_total_coverage: float = 0.1, keep_edge_coverage: float = 0.8
) -> LineFilter:
    kept, removed, retained = [], [], []
    coverage = {}
    for line in arrangement.lines:
        edges = arrangement.edges_of_line(line.id)
        total = sum(edge.length for edge in edges)
        covered = sum(edge.weight * edge.length for edge in edges)
        coverage[line.id] = covered / total if total > 0 else 0.0
        if coverage[line.id] < min_total_coverage:
            removed.append(line.id)
            retained.extend(edge for edge in edges if edge.weight >= keep_edge_coverage)
        else:
            kept.append(line)
    log.info(
        "Filtro de rectas: %d conservadas, %d eliminadas, %d aristas retenidas",
        len(kept),
        len(removed),
        len(retained),
    )
    return LineFilter(kept_lines=kept, removed_line_ids=removed, retained_edges=retained, coverage=coverage)
