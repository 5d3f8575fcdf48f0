from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path
import json

import numpy as np
import toml
from scipy import ndimage
from skimage.draw import polygon as draw_polygon

from map_shared import FREE, OCCUPIED, UNKNOWN, SynthError, atomic_write_text, get_logger
from stages.gridmap import LabelGrid, OccupancyGrid, save_label_grid, save_map
from stages.rose import DirectionSet


log = get_logger("synth")

CLUTTER_KINDS = ("point", "rectangle")
RECTANGLE_SIDE_M = (0.3, 1.2)
WALL_CLEARANCE_CELLS = 2
OBSERVATION_REACH_CELLS = 2


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    rows: int = 2
    cols: int = 2
    room_width_m: float = 4.0
    room_height_m: float = 4.0
    corridor_width_m: float = 0.0
    wall_thickness_m: float = 0.15
    door_width_m: float = 0.9
    rotation_deg: float = 0.0
    clutter_density: float = 0.0
    clutter_kinds: tuple[str, ...] = CLUTTER_KINDS
    flip_rate: float = 0.0
    coverage: float = 1.0
    resolution: float = 0.05
    margin_m: float = 1.0
    map_size_m: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "clutter_kinds", tuple(self.clutter_kinds))
        if self.rows < 1 or self.cols < 1:
            raise SynthError("La grilla de habitaciones debe tener al menos una fila y una columna.")
        positive = {
            "room_width_m": self.room_width_m,
            "room_height_m": self.room_height_m,
            "wall_thickness_m": self.wall_thickness_m,
            "door_width_m": self.door_width_m,
            "resolution": self.resolution,
        }
        for name, value in positive.items():
            if not value > 0:
                raise SynthError(f"{name} debe ser positivo.")
        if self.corridor_width_m < 0 or self.margin_m < 0:
            raise SynthError("El ancho de pasillo y el margen no pueden ser negativos.")
        for name in ("clutter_density", "flip_rate", "coverage"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise SynthError(f"{name} debe estar en [0, 1].")
        if self.coverage <= 0:
            raise SynthError("coverage debe ser mayor que cero.")
        unknown = set(self.clutter_kinds) - set(CLUTTER_KINDS)
        if unknown:
            raise SynthError(f"Tipos de obstaculo desconocidos: {', '.join(sorted(unknown))}.")
        if self.clutter_density > 0 and not self.clutter_kinds:
            raise SynthError("Se pidio densidad de obstaculos sin ningun tipo de obstaculo.")
        if self.door_width_m >= min(self.room_width_m, self.room_height_m):
            raise SynthError("La puerta no cabe en la pared de una habitacion.")

    @classmethod
    def from_dict(cls, values: dict) -> "SynthSpec":
        known = {field.name for field in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise SynthError(f"Campos desconocidos en la especificacion: {', '.join(sorted(unknown))}.")
        return cls(**values)

    def to_dict(self) -> dict:
        values = asdict(self)
        values["clutter_kinds"] = list(self.clutter_kinds)
        return values

    def cells(self, meters: float, minimum: int = 1) -> int:
        return max(minimum, int(round(meters / self.resolution)))


@dataclass(frozen=True, eq=False)
class SynthMap:
    grid: OccupancyGrid
    labels: LabelGrid
    directions: DirectionSet
    clutter_mask: np.ndarray
    wall_mask: np.ndarray
    interior_mask: np.ndarray
    spec: SynthSpec


def _layout(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray]:
    """Plano sin rotar: etiquetas de habitacion (0 = muro o exterior) y mascara de muros."""
    room_w, room_h = spec.cells(spec.room_width_m), spec.cells(spec.room_height_m)
    wall = spec.cells(spec.wall_thickness_m)
    door = spec.cells(spec.door_width_m)
    corridor = spec.cells(spec.corridor_width_m, minimum=0)
    corridor_row = spec.rows // 2 if corridor else None

    width = spec.cols * room_w + (spec.cols + 1) * wall
    height = spec.rows * room_h + (spec.rows + 1) * wall + (corridor + wall if corridor else 0)
    labels = np.zeros((height, width), dtype=np.int32)

    rooms: dict[tuple[int, int], tuple[int, int]] = {}
    corridor_band = None
    next_id = 1
    y = wall
    for row in range(spec.rows):
        if row == corridor_row:
            corridor_band = (y, y + corridor)
            y += corridor + wall
        for col in range(spec.cols):
            x = wall + col * (room_w + wall)
            labels[y : y + room_h, x : x + room_w] = next_id
            rooms[(row, col)] = (y, x)
            next_id += 1
        y += room_h + wall
    if corridor_band is not None:
        labels[corridor_band[0] : corridor_band[1], wall : width - wall] = next_id

    def vertical_door(y_top: int, x: int, owner: int) -> None:
        start = x + (room_w - door) // 2
        labels[y_top : y_top + wall, start : start + door] = owner

    def horizontal_door(y: int, x_left: int, owner: int) -> None:
        start = y + (room_h - door) // 2
        labels[start : start + door, x_left : x_left + wall] = owner

    for (row, col), (y, x) in rooms.items():
        owner = int(labels[y, x])
        if corridor_band is None:
            if col + 1 < spec.cols:
                horizontal_door(y, x + room_w, owner)
            if col == 0 and row + 1 < spec.rows:
                vertical_door(y + room_h, x, owner)
        elif row < corridor_row:
            vertical_door(y + room_h, x, owner)
        else:
            vertical_door(y - wall, x, owner)

    walls = labels == 0
    return labels, walls


def _rotate(labels: np.ndarray, spec: SynthSpec) -> tuple[np.ndarray, np.ndarray]:
    """Rotacion por vecino mas cercano sobre un lienzo con margen; -1 marca el exterior."""
    theta = np.radians(spec.rotation_deg)
    cos, sin = np.cos(theta), np.sin(theta)
    height, width = labels.shape
    corners = np.array([[0, 0], [width, 0], [width, height], [0, height]], dtype=float)
    center = np.array([width / 2.0, height / 2.0])
    rotated = (corners - center) @ np.array([[cos, sin], [-sin, cos]])
    margin = spec.cells(spec.margin_m, minimum=0)
    canvas_w = int(np.ceil(rotated[:, 0].max() - rotated[:, 0].min())) + 2 * margin
    canvas_h = int(np.ceil(rotated[:, 1].max() - rotated[:, 1].min())) + 2 * margin
    if spec.map_size_m is not None:
        limit = spec.cells(spec.map_size_m)
        if max(canvas_w, canvas_h) > limit:
            raise SynthError("El edificio no cabe en el tamano de mapa solicitado.")

    canvas_center = np.array([canvas_w / 2.0, canvas_h / 2.0])
    rows, cols = np.mgrid[0:canvas_h, 0:canvas_w]
    dx = cols + 0.5 - canvas_center[0]
    dy = rows + 0.5 - canvas_center[1]
    source_x = np.floor(cos * dx + sin * dy + center[0]).astype(np.int64)
    source_y = np.floor(-sin * dx + cos * dy + center[1]).astype(np.int64)
    inside = (source_x >= 0) & (source_x < width) & (source_y >= 0) & (source_y < height)

    result = np.full((canvas_h, canvas_w), -1, dtype=np.int32)
    result[inside] = labels[source_y[inside], source_x[inside]]
    return result, inside


def _place_clutter(
    rng: np.random.Generator, allowed: np.ndarray, target: int, spec: SynthSpec, theta: float
) -> np.ndarray:
    clutter = np.zeros(allowed.shape, dtype=bool)
    candidates = np.argwhere(allowed)
    if target <= 0 or candidates.size == 0:
        return clutter
    kinds = list(spec.clutter_kinds)
    attempts = 0
    while int(clutter.sum()) < target and attempts < 50 * target:
        attempts += 1
        row, col = candidates[rng.integers(len(candidates))]
        kind = kinds[int(rng.integers(len(kinds)))]
        if kind == "point":
            clutter[row, col] = True
            continue
        side_w, side_h = rng.uniform(*RECTANGLE_SIDE_M, size=2) / spec.resolution
        angle = theta + rng.uniform(0.0, np.pi)
        half = np.array([[-side_w, -side_h], [side_w, -side_h], [side_w, side_h], [-side_w, side_h]]) / 2.0
        rotation = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
        corners = half @ rotation.T + (col + 0.5, row + 0.5)
        poly_rows, poly_cols = draw_polygon(corners[:, 1], corners[:, 0], shape=allowed.shape)
        keep = allowed[poly_rows, poly_cols]
        clutter[poly_rows[keep], poly_cols[keep]] = True
    return clutter


def _coverage_region(rng: np.random.Generator, free: np.ndarray, coverage: float) -> np.ndarray:
    """BFS aleatorizado sobre el espacio libre hasta cubrir la fraccion pedida."""
    total = int(free.sum())
    goal = int(np.ceil(coverage * total))
    visited = np.zeros(free.shape, dtype=bool)
    if goal >= total:
        return free.copy()
    height, width = free.shape
    count = 0
    frontier: list[tuple[int, int]] = []
    while count < goal:
        if not frontier:
            remaining = np.argwhere(free & ~visited)
            row, col = (int(value) for value in remaining[rng.integers(len(remaining))])
            visited[row, col] = True
            count += 1
            frontier.append((row, col))
            continue
        index = int(rng.integers(len(frontier)))
        frontier[index], frontier[-1] = frontier[-1], frontier[index]
        row, col = frontier.pop()
        for d_row, d_col in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            n_row, n_col = row + d_row, col + d_col
            if count >= goal:
                break
            if 0 <= n_row < height and 0 <= n_col < width and free[n_row, n_col] and not visited[n_row, n_col]:
                visited[n_row, n_col] = True
                count += 1
                frontier.append((n_row, n_col))
    return visited


def generate(spec: SynthSpec) -> SynthMap:
    rng = np.random.default_rng(spec.seed)
    layout, _ = _layout(spec)
    canvas, building = _rotate(layout, spec)
    theta = np.radians(spec.rotation_deg)

    interior = canvas > 0
    walls = building & (canvas == 0)
    cells = np.full(canvas.shape, UNKNOWN, dtype=np.int8)
    cells[interior] = FREE
    cells[walls] = OCCUPIED

    near_walls = ndimage.binary_dilation(walls, iterations=WALL_CLEARANCE_CELLS)
    allowed = interior & ~near_walls
    target = int(round(spec.clutter_density * int(interior.sum())))
    clutter = _place_clutter(rng, allowed, target, spec, theta)
    if spec.flip_rate > 0:
        flips = interior & ~clutter & (rng.random(canvas.shape) < spec.flip_rate)
        clutter |= flips
    cells[clutter] = OCCUPIED

    free = cells == FREE
    if spec.coverage < 1.0:
        visited = _coverage_region(rng, free, spec.coverage)
        observed = visited | (ndimage.binary_dilation(visited, iterations=OBSERVATION_REACH_CELLS) & ~free)
        cells[~observed] = UNKNOWN

    final_free = cells == FREE
    labels = np.where(final_free, canvas, 0)
    grid = OccupancyGrid(cells=cells, resolution=spec.resolution)
    directions = DirectionSet(angles=(theta, theta + np.pi / 2))
    log.info(
        "Mapa sintetico %dx%d: %d habitaciones, %d celdas de ruido",
        grid.width,
        grid.height,
        len(np.unique(labels[labels > 0])),
        int(clutter.sum()),
    )
    return SynthMap(
        grid=grid,
        labels=LabelGrid(labels).normalized(),
        directions=directions,
        clutter_mask=clutter,
        wall_mask=walls,
        interior_mask=interior,
        spec=spec,
    )


def load_spec(path: str | Path) -> SynthSpec:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
        values = toml.loads(text) if path.suffix.lower() == ".toml" else json.loads(text)
    except OSError as error:
        raise SynthError(f"No fue posible leer la especificacion {path}: {error}") from error
    except ValueError as error:
        raise SynthError(f"La especificacion {path} no es valida: {error}") from error
    if not isinstance(values, dict):
        raise SynthError(f"La especificacion {path} debe ser un objeto de campos.")
    return SynthSpec.from_dict(values)


def save_synth(result: SynthMap, out_dir: str | Path) -> dict[str, Path]:
    out_dir = Path(out_dir)
    paths = {
        "map": out_dir / "map.pgm",
        "metadata": out_dir / "map.yaml",
        "gt": out_dir / "gt.png",
        "spec": out_dir / "spec.json",
        "directions": out_dir / "directions.json",
    }
    save_map(result.grid, paths["map"], paths["metadata"])
    save_label_grid(result.labels, paths["gt"])
    atomic_write_text(paths["spec"], json.dumps(result.spec.to_dict(), indent=2, sort_keys=True))
    directions = {"direcciones_grados": [round(value, 6) for value in result.directions.degrees]}
    atomic_write_text(paths["directions"], json.dumps(directions, indent=2))
    return paths
