from __future__ import annotations

from dataclasses import dataclass
from io import BytesIO
from pathlib import Path
import os

import numpy as np
import shapely
import yaml
from PIL import Image, ImageDraw

from map_shared import (
    FREE,
    MAP_SAVE_FREE,
    MAP_SAVE_FREE_THRESH,
    MAP_SAVE_OCCUPIED,
    MAP_SAVE_OCCUPIED_THRESH,
    MAP_SAVE_UNKNOWN,
    OCCUPIED,
    RENDER_FREE,
    RENDER_OCCUPIED,
    RENDER_UNKNOWN,
    ROOM_PALETTE,
    UNKNOWN,
    MapFormatError,
    atomic_write_bytes,
    atomic_write_text,
    get_logger,
    palette_bytes,
    room_color,
)


log = get_logger("gridmap")

REQUIRED_METADATA_KEYS = ["resolution", "origin", "occupied_thresh", "free_thresh"]
ACCEPTED_RASTER_MODES = {"L", "1", "P", "LA", "RGB", "RGBA"}
FLOORPLAN_OUTLINE = (220, 30, 30)
# Peso del color de la habitacion sobre el gris de lo desconocido en la forma predicha.
PREDICTED_TINT = 0.45


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    cells: np.ndarray
    resolution: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        cells = np.array(self.cells, dtype=np.int8, copy=True)
        if cells.ndim != 2:
            raise ValueError("La grilla de ocupacion debe ser bidimensional.")
        if not np.isin(cells, (FREE, OCCUPIED, UNKNOWN)).all():
            raise ValueError("Cada celda debe ser libre, ocupada o desconocida.")
        resolution = float(self.resolution)
        if not resolution > 0:
            raise ValueError("La resolucion debe ser positiva.")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "resolution", resolution)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def width(self) -> int:
        return int(self.cells.shape[1])

    @property
    def height(self) -> int:
        return int(self.cells.shape[0])

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    @property
    def free_mask(self) -> np.ndarray:
        return self.cells == FREE

    @property
    def occupied_mask(self) -> np.ndarray:
        return self.cells == OCCUPIED

    @property
    def unknown_mask(self) -> np.ndarray:
        return self.cells == UNKNOWN

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        return 0.0, 0.0, float(self.width), float(self.height)

    def count(self, state: int) -> int:
        return int(np.count_nonzero(self.cells == state))

    def with_cells(self, cells: np.ndarray) -> "OccupancyGrid":
        return OccupancyGrid(cells=cells, resolution=self.resolution, origin=self.origin)


@dataclass(frozen=True, eq=False)
class LabelGrid:
    labels: np.ndarray

    def __post_init__(self) -> None:
        labels = np.array(self.labels, dtype=np.int32, copy=True)
        if labels.ndim != 2:
            raise ValueError("La grilla de etiquetas debe ser bidimensional.")
        if (labels < 0).any():
            raise ValueError("Las etiquetas de habitacion no pueden ser negativas.")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def width(self) -> int:
        return int(self.labels.shape[1])

    @property
    def height(self) -> int:
        return int(self.labels.shape[0])

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    @property
    def room_ids(self) -> list[int]:
        return [int(value) for value in np.unique(self.labels[self.labels > 0])]

    def room_mask(self, room_id: int) -> np.ndarray:
        return self.labels == room_id

    def validate_against(self, grid: OccupancyGrid) -> None:
        if self.shape != grid.shape:
            raise ValueError(
                f"Dimensiones incompatibles: etiquetas {self.shape} vs mapa {grid.shape}."
            )
        labeled = self.labels > 0
        if (labeled != grid.free_mask).any():
            raise ValueError("Solo las celdas libres deben tener etiqueta, y todas ellas.")

    def normalized(self) -> "LabelGrid":
        ids = np.unique(self.labels[self.labels > 0])
        if ids.size == 0:
            return LabelGrid(self.labels)
        lookup = np.zeros(int(ids.max()) + 1, dtype=np.int32)
        lookup[ids] = np.arange(1, ids.size + 1, dtype=np.int32)
        return LabelGrid(lookup[self.labels])

    def restricted_to(self, grid: OccupancyGrid) -> "LabelGrid":
        return LabelGrid(np.where(grid.free_mask, self.labels, 0))


def occupied_points(grid: OccupancyGrid) -> np.ndarray:
    """Celdas ocupadas como pares (col, fila), en orden por filas."""
    rows, cols = np.nonzero(grid.cells == OCCUPIED)
    return np.column_stack((cols, rows)).astype(np.int64)


def cell_to_world(grid: OccupancyGrid, x: float, y: float) -> tuple[float, float]:
    return (
        grid.origin[0] + float(x) * grid.resolution,
        grid.origin[1] + (grid.height - float(y)) * grid.resolution,
    )


def _read_metadata(metadata_path: str | Path) -> dict[str, object]:
    path = Path(metadata_path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as error:
        raise MapFormatError(f"No fue posible leer los metadatos {path}: {error}") from error

    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as error:
        raise MapFormatError(f"Los metadatos {path} no son validos: {error}") from error
    if not isinstance(data, dict):
        raise MapFormatError(f"Los metadatos {path} deben ser pares clave: valor.")

    missing = [key for key in REQUIRED_METADATA_KEYS if key not in data]
    if missing:
        raise MapFormatError(f"Faltan campos en {path}: {', '.join(missing)}.")

    try:
        resolution = float(data["resolution"])
        occupied_thresh = float(data["occupied_thresh"])
        free_thresh = float(data["free_thresh"])
        origin_values = list(data["origin"])
        origin = (float(origin_values[0]), float(origin_values[1]))
        negate = bool(int(data.get("negate", 0)))
    except (TypeError, ValueError, IndexError) as error:
        raise MapFormatError(f"Valores invalidos en los metadatos {path}: {error}") from error

    if resolution <= 0:
        raise MapFormatError(f"La resolucion de {path} debe ser positiva.")
    if not 0.0 <= free_thresh < occupied_thresh <= 1.0:
        raise MapFormatError(
            f"Umbrales fuera de orden en {path}: se requiere 0 <= free_thresh < occupied_thresh <= 1."
        )

    return {
        "image": data.get("image"),
        "resolution": resolution,
        "origin": origin,
        "negate": negate,
        "occupied_thresh": occupied_thresh,
        "free_thresh": free_thresh,
    }


def _read_raster(raster_path: str | Path) -> np.ndarray:
    path = Path(raster_path)
    try:
        with Image.open(path) as image:
            image.load()
            if image.mode not in ACCEPTED_RASTER_MODES:
                raise MapFormatError(f"El raster {path} tiene un modo no soportado: {image.mode}.")
            gray = image.convert("L") if image.mode != "L" else image.copy()
    except OSError as error:
        raise MapFormatError(f"No fue posible leer el raster {path}: {error}") from error
    return np.asarray(gray, dtype=np.uint8)


def threshold_raster(
    gray: np.ndarray, occupied_thresh: float, free_thresh: float, negate: bool = False
) -> np.ndarray:
    gray = np.asarray(gray, dtype=float)
    darkness = gray / 255.0 if negate else (255.0 - gray) / 255.0
    cells = np.full(gray.shape, UNKNOWN, dtype=np.int8)
    cells[darkness >= occupied_thresh] = OCCUPIED
    cells[darkness <= free_thresh] = FREE
    return cells


def load_map(raster_path: str | Path, metadata_path: str | Path) -> OccupancyGrid:
    metadata = _read_metadata(metadata_path)
    gray = _read_raster(raster_path)
    cells = threshold_raster(
        gray, metadata["occupied_thresh"], metadata["free_thresh"], metadata["negate"]
    )
    grid = OccupancyGrid(cells=cells, resolution=metadata["resolution"], origin=metadata["origin"])
    log.info(
        "Mapa %s cargado: %dx%d, %d ocupadas, %d libres",
        Path(raster_path).name,
        grid.width,
        grid.height,
        grid.count(OCCUPIED),
        grid.count(FREE),
    )
    return grid


def load_map_from_metadata(metadata_path: str | Path) -> OccupancyGrid:
    path = Path(metadata_path)
    metadata = _read_metadata(path)
    image_name = metadata.get("image")
    if not image_name:
        raise MapFormatError(f"Los metadatos {path} no indican la imagen del mapa (campo image).")
    raster_path = Path(str(image_name))
    if not raster_path.is_absolute():
        raster_path = path.parent / raster_path
    return load_map(raster_path, path)


def _encode_image(image: Image.Image, path: Path) -> bytes:
    image_format = "PPM" if path.suffix.lower() in {".pgm", ".ppm"} else "PNG"
    buffer = BytesIO()
    image.save(buffer, format=image_format)
    return buffer.getvalue()


def save_map(grid: OccupancyGrid, raster_path: str | Path, metadata_path: str | Path) -> None:
    raster_path = Path(raster_path)
    metadata_path = Path(metadata_path)
    gray = np.full(grid.shape, MAP_SAVE_UNKNOWN, dtype=np.uint8)
    gray[grid.free_mask] = MAP_SAVE_FREE
    gray[grid.occupied_mask] = MAP_SAVE_OCCUPIED
    atomic_write_bytes(raster_path, _encode_image(Image.fromarray(gray), raster_path))

    if raster_path.parent.resolve() == metadata_path.parent.resolve():
        image_name = raster_path.name
    else:
        image_name = os.path.abspath(raster_path)
    metadata = {
        "image": image_name,
        "resolution": grid.resolution,
        "origin": [grid.origin[0], grid.origin[1], 0.0],
        "negate": 0,
        "occupied_thresh": MAP_SAVE_OCCUPIED_THRESH,
        "free_thresh": MAP_SAVE_FREE_THRESH,
    }
    atomic_write_text(
        metadata_path, yaml.safe_dump(metadata, sort_keys=False, default_flow_style=None)
    )


def load_label_grid(path: str | Path) -> LabelGrid:
    path = Path(path)
    try:
        with Image.open(path) as image:
            image.load()
            if image.mode not in {"P", "L"}:
                raise MapFormatError(
                    f"Las etiquetas {path} deben ser un PNG indexado, no {image.mode}."
                )
            labels = np.array(image, dtype=np.int32)
    except OSError as error:
        raise MapFormatError(f"No fue posible leer las etiquetas {path}: {error}") from error
    return LabelGrid(labels)


def save_label_grid(labels, path: str | Path) -> None:
    array = np.asarray(getattr(labels, "labels", labels))
    if array.size and int(array.max()) > 255:
        raise ValueError("El PNG indexado admite como maximo 255 habitaciones.")
    indexed = np.ascontiguousarray(array, dtype=np.uint8)
    image = Image.frombytes("P", (indexed.shape[1], indexed.shape[0]), indexed.tobytes())
    image.putpalette(palette_bytes())
    path = Path(path)
    atomic_write_bytes(path, _encode_image(image, path))


def _tint_predicted(rgb: np.ndarray, grid: OccupancyGrid, floorplan) -> None:
    """Pinta las celdas desconocidas dentro de cada habitacion: la parte predicha de su forma."""
    rows, cols = np.nonzero(grid.cells == UNKNOWN)
    if rows.size == 0:
        return
    pending = np.ones(rows.size, dtype=bool)
    unknown = np.array(RENDER_UNKNOWN, dtype=float)
    for room in sorted(floorplan.rooms, key=lambda room: room.id):
        inside = np.zeros(rows.size, dtype=bool)
        inside[pending] = shapely.intersects_xy(room.polygon, cols[pending] + 0.5, rows[pending] + 0.5)
        if not inside.any():
            continue
        tint = (1.0 - PREDICTED_TINT) * unknown + PREDICTED_TINT * np.array(room_color(room.id), dtype=float)
        rgb[rows[inside], cols[inside]] = np.round(tint).astype(np.uint8)
        pending &= ~inside


def render(
    grid: OccupancyGrid,
    out_path: str | Path,
    segmentation=None,
    floorplan=None,
    scale: int = 1,
) -> Path:
    rgb = np.full(grid.shape + (3,), RENDER_UNKNOWN, dtype=np.uint8)
    rgb[grid.free_mask] = RENDER_FREE
    rgb[grid.occupied_mask] = RENDER_OCCUPIED

    if segmentation is not None:
        labels = np.asarray(getattr(segmentation, "labels", segmentation))
        if labels.shape != grid.shape:
            raise ValueError("La segmentacion no coincide con las dimensiones del mapa.")
        palette = np.array(ROOM_PALETTE, dtype=np.uint8)
        index = np.where(labels > 0, 1 + (labels.astype(np.int64) - 1) % 255, 0)
        labeled = labels > 0
        rgb[labeled] = palette[index[labeled]]

    if floorplan is not None:
        _tint_predicted(rgb, grid, floorplan)

    image = Image.fromarray(rgb)
    scale = max(1, int(scale))
    if scale > 1:
        image = image.resize((grid.width * scale, grid.height * scale), Image.NEAREST)

    if floorplan is not None:
        draw = ImageDraw.Draw(image)
        for room in floorplan.rooms:
            rings = [room.polygon.exterior, *room.polygon.interiors]
            for ring in rings:
                points = [(x * scale - 0.5, y * scale - 0.5) for x, y in ring.coords]
                draw.line(points, fill=FLOORPLAN_OUTLINE, width=1)

    out_path = Path(out_path)
    return atomic_write_bytes(out_path, _encode_image(image, out_path))
