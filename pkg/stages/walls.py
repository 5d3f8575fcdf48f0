from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import cv2
import numpy as np
from sklearn.cluster import DBSCAN

from map_shared import circular_distance, get_logger
from stages.gridmap import OccupancyGrid
from stages.rose import DirectionSet


log = get_logger("walls")

ANGLE_TIE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class LineSegment:
    a: tuple[float, float]
    b: tuple[float, float]
    angle: float

    def __post_init__(self) -> None:
        if self.length <= 0:
            raise ValueError("Un segmento debe tener longitud positiva.")

    @classmethod
    def from_points(cls, a: Sequence[float], b: Sequence[float]) -> "LineSegment":
        a = (float(a[0]), float(a[1]))
        b = (float(b[0]), float(b[1]))
        angle = float(np.mod(np.arctan2(b[1] - a[1], b[0] - a[0]), np.pi))
        return cls(a=a, b=b, angle=angle)

    @property
    def length(self) -> float:
        return float(np.hypot(self.b[0] - self.a[0], self.b[1] - self.a[1]))

    @property
    def midpoint(self) -> tuple[float, float]:
        return (self.a[0] + self.b[0]) / 2.0, (self.a[1] + self.b[1]) / 2.0

    def projected(self, direction: float) -> "LineSegment":
        """Gira el segmento sobre su punto medio hasta ``direction``; la longitud se conserva."""
        unit = np.array([np.cos(direction), np.sin(direction)])
        middle = np.array(self.midpoint)
        sign = 1.0 if np.dot(np.array(self.b) - np.array(self.a), unit) >= 0 else -1.0
        half = sign * self.length / 2.0 * unit
        start = middle - half
        end = middle + half
        return LineSegment(
            a=(float(start[0]), float(start[1])),
            b=(float(end[0]), float(end[1])),
            angle=float(direction),
        )


def direction_normal(direction: float) -> np.ndarray:
    return np.array([-np.sin(direction), np.cos(direction)])


def direction_unit(direction: float) -> np.ndarray:
    return np.array([np.cos(direction), np.sin(direction)])


@dataclass(frozen=True)
class WallCluster:
    segments: tuple[LineSegment, ...]
    direction: float | None = None
    aligned: bool = False

    def __post_init__(self) -> None:
        if not self.segments:
            raise ValueError("Un muro necesita al menos un segmento.")
        object.__setattr__(self, "segments", tuple(self.segments))
        if self.direction is None:
            object.__setattr__(self, "direction", self.mean_angle)
        if self.aligned and any(segment.angle != self.direction for segment in self.segments):
            raise ValueError("Todos los segmentos de un muro alineado deben tener su direccion.")

    @property
    def mean_angle(self) -> float:
        lengths = np.array([segment.length for segment in self.segments])
        doubled = 2.0 * np.array([segment.angle for segment in self.segments])
        mean = np.arctan2(np.sum(lengths * np.sin(doubled)), np.sum(lengths * np.cos(doubled))) / 2.0
        return float(np.mod(mean, np.pi))

    @property
    def total_length(self) -> float:
        return float(sum(segment.length for segment in self.segments))

    @property
    def midpoints(self) -> np.ndarray:
        return np.array([segment.midpoint for segment in self.segments], dtype=float)

    @property
    def offset(self) -> float:
        """Mediana de los puntos medios sobre el eje perpendicular a la direccion."""
        return float(np.median(self.midpoints @ direction_normal(self.direction)))

    @property
    def central_point(self) -> tuple[float, float]:
        along = float(np.median(self.midpoints @ direction_unit(self.direction)))
        point = self.offset * direction_normal(self.direction) + along * direction_unit(self.direction)
        return float(point[0]), float(point[1])


@dataclass(frozen=True)
class RepresentativeLine:
    id: int
    direction: float
    anchor: tuple[float, float]
    start: tuple[float, float]
    end: tuple[float, float]
    total_length: float
    cluster: WallCluster | None = field(default=None, compare=False, repr=False)

    @property
    def normal(self) -> np.ndarray:
        return direction_normal(self.direction)

    @property
    def unit(self) -> np.ndarray:
        return direction_unit(self.direction)

    @property
    def offset(self) -> float:
        return float(np.dot(self.anchor, self.normal))

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.normal - self.offset


@dataclass(frozen=True, eq=False)
class WallStructure:
    segments: list[LineSegment]
    clusters: list[WallCluster]
    lines: list[RepresentativeLine]
    discarded: list[WallCluster] = field(default_factory=list)


def hough_segments(
    grid: OccupancyGrid,
    rho_res: float = 1.0,
    theta_res_deg: float = 0.5,
    votes: int = 20,
    min_len: float = 10,
    max_gap: float = 5,
    seed: int = 0,
) -> list[LineSegment]:
    occupied = grid.occupied_mask
    if int(np.count_nonzero(occupied)) < votes:
        return []
    image = occupied.astype(np.uint8) * 255
    cv2.setRNGSeed(int(seed))
    detected = cv2.HoughLinesP(
        image,
        float(rho_res),
        float(np.radians(theta_res_deg)),
        int(votes),
        minLineLength=float(min_len),
        maxLineGap=float(max_gap),
    )
    if detected is None:
        return []

    segments = []
    for x1, y1, x2, y2 in detected.reshape(-1, 4).tolist():
        if (x1, y1) == (x2, y2):
            continue
        segment = LineSegment.from_points((x1 + 0.5, y1 + 0.5), (x2 + 0.5, y2 + 0.5))
        if segment.length >= min_len:
            segments.append(segment)
    segments.sort(key=lambda segment: (segment.a, segment.b))
    return segments


def off_direction(segments: Sequence[LineSegment], directions: Iterable[float], tolerance: float) -> list[LineSegment]:
    """Segmentos cuyo angulo queda a mas de ``tolerance`` de toda direccion dominante."""
    directions = list(directions)
    return [
        segment
        for segment in segments
        if min(circular_distance(segment.angle, psi) for psi in directions) > tolerance
    ]


def count_segments(
    grid: OccupancyGrid,
    params: dict | None = None,
    seed: int = 0,
    directions: DirectionSet | Sequence[float] | None = None,
) -> int:
    """Segmentos de Hough en ``grid``; con ``directions`` solo cuentan los que no siguen ninguna."""
    params = params or {}
    segments = hough_segments(
        grid,
        rho_res=params.get("rho_res", 1.0),
        theta_res_deg=params.get("theta_res_deg", 0.5),
        votes=params.get("votes", 20),
        min_len=params.get("min_len", 10),
        max_gap=params.get("max_gap", 5),
        seed=seed,
    )
    if directions is None or len(directions) == 0:
        return len(segments)
    tolerance = np.radians(params.get("max_misalignment_deg", 5.0))
    return len(off_direction(segments, directions, tolerance))


def cluster_by_angle(segments: Sequence[LineSegment], angular_eps: float) -> list[list[LineSegment]]:
    if not 0 < angular_eps < np.pi / 4:
        raise ValueError("La tolerancia angular debe estar en (0, pi/4).")
    if not segments:
        return []

    ordered = sorted(segments, key=lambda segment: segment.angle)
    groups: list[list[LineSegment]] = [[ordered[0]]]
    for previous, current in zip(ordered, ordered[1:]):
        if current.angle - previous.angle > angular_eps:
            groups.append([])
        groups[-1].append(current)

    wrap_gap = ordered[0].angle + np.pi - ordered[-1].angle
    if len(groups) > 1 and wrap_gap <= angular_eps:
        groups[0] = groups.pop() + groups[0]
    return groups


def _point_segment_distance(points: np.ndarray, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    delta = ends - starts
    squared = np.sum(delta * delta, axis=-1)
    t = np.clip(np.sum((points - starts) * delta, axis=-1) / squared, 0.0, 1.0)
    closest = starts + t[..., None] * delta
    return np.linalg.norm(points - closest, axis=-1)


def _cross(first: np.ndarray, second: np.ndarray) -> np.ndarray:
    return first[..., 0] * second[..., 1] - first[..., 1] * second[..., 0]


def segment_distance_matrix(segments: Sequence[LineSegment]) -> np.ndarray:
    """Distancia euclidiana minima exacta entre cada par de segmentos cerrados."""
    starts = np.array([segment.a for segment in segments], dtype=float)
    ends = np.array([segment.b for segment in segments], dtype=float)
    a_i, b_i = starts[:, None, :], ends[:, None, :]
    a_j, b_j = starts[None, :, :], ends[None, :, :]

    distances = np.minimum.reduce(
        [
            _point_segment_distance(a_i, a_j, b_j),
            _point_segment_distance(b_i, a_j, b_j),
            _point_segment_distance(a_j, a_i, b_i),
            _point_segment_distance(b_j, a_i, b_i),
        ]
    )
    side_first = _cross(b_i - a_i, a_j - a_i) * _cross(b_i - a_i, b_j - a_i)
    side_second = _cross(b_j - a_j, a_i - a_j) * _cross(b_j - a_j, b_i - a_j)
    distances[(side_first < 0) & (side_second < 0)] = 0.0
    distances = np.minimum(distances, distances.T)
    np.fill_diagonal(distances, 0.0)
    return distances


def cluster_spatial(group: Sequence[LineSegment], eps: float = 10.0, min_pts: int = 1) -> list[WallCluster]:
    if eps <= 0 or min_pts < 1:
        raise ValueError("DBSCAN requiere eps > 0 y min_pts >= 1.")
    if not group:
        return []
    if len(group) == 1:
        return [WallCluster(segments=(group[0],))]

    labels = DBSCAN(eps=eps, min_samples=min_pts, metric="precomputed").fit_predict(
        segment_distance_matrix(group)
    )
    clusters = []
    for label in sorted(set(labels.tolist()) - {-1}):
        members = tuple(segment for segment, value in zip(group, labels) if value == label)
        clusters.append(WallCluster(segments=members))
    # El ruido de DBSCAN se conserva como muros de un solo segmento.
    clusters.extend(
        WallCluster(segments=(segment,)) for segment, value in zip(group, labels) if value == -1
    )
    return clusters


def snap_direction(angle: float, directions: Iterable[float]) -> float:
    directions = list(directions)
    if not directions:
        raise ValueError("Se requiere al menos una direccion dominante.")
    distances = [circular_distance(angle, psi) for psi in directions]
    best = min(distances)
    return min(psi for psi, distance in zip(directions, distances) if distance <= best + ANGLE_TIE_TOLERANCE)


def align_to_direction(cluster: WallCluster, directions: DirectionSet | Sequence[float]) -> WallCluster:
    psi = snap_direction(cluster.mean_angle, directions)
    segments = tuple(segment.projected(psi) for segment in cluster.segments)
    return WallCluster(segments=segments, direction=psi, aligned=True)


def merge_collinear(
    clusters: Sequence[WallCluster], doorway_width_m: float, resolution: float
) -> list[WallCluster]:
    if doorway_width_m <= 0:
        raise ValueError("El ancho de puerta debe ser positivo.")
    if any(not cluster.aligned for cluster in clusters):
        raise ValueError("Solo se pueden fusionar muros alineados.")
    threshold = doorway_width_m / resolution
    current = list(clusters)

    while True:
        best: tuple[float, float, float, int, int] | None = None
        order = sorted(range(len(current)), key=lambda i: (current[i].direction, current[i].offset))
        for first, second in zip(order, order[1:]):
            if current[first].direction != current[second].direction:
                continue
            gap = current[second].offset - current[first].offset
            key = (gap, current[first].direction, current[first].offset, first, second)
            if gap < threshold and (best is None or key < best):
                best = key
        if best is None:
            break
        _, direction, _, first, second = best
        merged = WallCluster(
            segments=current[first].segments + current[second].segments,
            direction=direction,
            aligned=True,
        )
        current = [cluster for index, cluster in enumerate(current) if index not in (first, second)]
        current.append(merged)

    current.sort(key=lambda cluster: (cluster.direction, cluster.offset))
    return current


def clip_line_to_bbox(
    anchor: Sequence[float], direction: float, bbox: Sequence[float]
) -> tuple[tuple[float, float], tuple[float, float]] | None:
    """Recorte de Liang-Barsky de la recta infinita por ``anchor`` al rectangulo."""
    x_min, y_min, x_max, y_max = bbox
    point = np.asarray(anchor, dtype=float)
    unit = direction_unit(direction)
    t_low, t_high = -np.inf, np.inf
    for axis, (low, high) in enumerate(((x_min, x_max), (y_min, y_max))):
        if abs(unit[axis]) < 1e-12:
            if not low <= point[axis] <= high:
                return None
            continue
        first = (low - point[axis]) / unit[axis]
        second = (high - point[axis]) / unit[axis]
        t_low = max(t_low, min(first, second))
        t_high = min(t_high, max(first, second))
    if t_high - t_low <= 1e-9:
        return None
    start = point + t_low * unit
    end = point + t_high * unit
    return (float(start[0]), float(start[1])), (float(end[0]), float(end[1]))


def representative_lines(
    clusters: Sequence[WallCluster], bbox: Sequence[float], dedup_separation: float = 0.5
) -> list[RepresentativeLine]:
    if any(not cluster.aligned for cluster in clusters):
        raise ValueError("Las rectas representativas requieren muros alineados.")

    ordered = sorted(clusters, key=lambda cluster: (cluster.direction, cluster.offset))
    kept: list[WallCluster] = []
    for cluster in ordered:
        if clip_line_to_bbox(cluster.central_point, cluster.direction, bbox) is None:
            log.debug("Recta fuera del mapa descartada (offset %.2f)", cluster.offset)
            continue
        if kept:
            last = kept[-1]
            if last.direction == cluster.direction and cluster.offset - last.offset < dedup_separation:
                if cluster.total_length > last.total_length:
                    kept[-1] = cluster
                continue
        kept.append(cluster)

    lines = []
    for index, cluster in enumerate(kept):
        start, end = clip_line_to_bbox(cluster.central_point, cluster.direction, bbox)
        lines.append(
            RepresentativeLine(
                id=index,
                direction=cluster.direction,
                anchor=cluster.central_point,
                start=start,
                end=end,
                total_length=cluster.total_length,
                cluster=cluster,
            )
        )
    return lines


def extract_walls(
    clean_grid: OccupancyGrid,
    directions: DirectionSet,
    walls_config: dict,
    seed: int = 0,
    threads: int = 1,
) -> WallStructure:
    segments = hough_segments(
        clean_grid,
        rho_res=walls_config["rho_res"],
        theta_res_deg=walls_config["theta_res_deg"],
        votes=walls_config["votes"],
        min_len=walls_config["min_len"],
        max_gap=walls_config["max_gap"],
        seed=seed,
    )
    groups = cluster_by_angle(segments, np.radians(walls_config["angular_eps_deg"]))

    def spatial(group: list[LineSegment]) -> list[WallCluster]:
        return cluster_spatial(group, walls_config["dbscan_eps"], walls_config["min_pts"])

    if threads > 1 and len(groups) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_group = list(pool.map(spatial, groups))
    else:
        per_group = [spatial(group) for group in groups]

    tolerance = np.radians(walls_config["max_misalignment_deg"])
    found = [cluster for clusters in per_group for cluster in clusters]
    on_direction = [
        min(circular_distance(cluster.mean_angle, psi) for psi in directions) <= tolerance for cluster in found
    ]
    discarded = [cluster for cluster, keep in zip(found, on_direction) if not keep]
    aligned = [align_to_direction(cluster, directions) for cluster, keep in zip(found, on_direction) if keep]
    merged = merge_collinear(aligned, walls_config["doorway_width_m"], clean_grid.resolution)
    lines = representative_lines(merged, clean_grid.bbox, walls_config["dedup_separation"])
    log.info(
        "%d segmentos, %d muros (%d fuera de las direcciones dominantes), %d rectas representativas",
        len(segments),
        len(merged),
        len(discarded),
        len(lines),
    )
    return WallStructure(segments=segments, clusters=merged, lines=lines, discarded=discarded)
