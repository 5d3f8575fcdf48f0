from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from io import BytesIO
from pathlib import Path
from typing import Callable

import numpy as np
import pandas as pd
from PIL import Image
from scipy.ndimage import map_coordinates
from scipy.signal import find_peaks

from map_shared import (
    FREE,
    OCCUPIED,
    EmptyMapError,
    atomic_write_bytes,
    atomic_write_text,
    circular_distance,
    get_logger,
)
from stages.gridmap import OccupancyGrid


log = get_logger("rose")

SCORE_FLAT_TOLERANCE = 1e-9
MIN_SPECTRUM_SIDE = 16
# Los rayos empiezan a dos bins del centro para que la interpolacion nunca toque DC.
RAY_START = 2


@dataclass(frozen=True, eq=False)
class Spectrum:
    amplitude: np.ndarray
    side: int
    grid_shape: tuple[int, int]

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.amplitude)

    @property
    def center(self) -> int:
        return self.side // 2


@dataclass(frozen=True)
class DirectionSet:
    angles: tuple[float, ...]
    scores: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        angles = tuple(float(np.mod(angle, np.pi)) for angle in self.angles)
        scores = tuple(float(value) for value in self.scores) or tuple(1.0 for _ in angles)
        if len(scores) != len(angles):
            raise ValueError("Cada direccion debe tener un puntaje.")
        order = sorted(range(len(angles)), key=lambda index: angles[index])
        object.__setattr__(self, "angles", tuple(angles[index] for index in order))
        object.__setattr__(self, "scores", tuple(scores[index] for index in order))

    def __len__(self) -> int:
        return len(self.angles)

    def __iter__(self):
        return iter(self.angles)

    @property
    def degrees(self) -> list[float]:
        return [float(np.degrees(angle)) for angle in self.angles]


@dataclass(frozen=True, eq=False)
class ScoreGrid:
    """Puntaje de estructura en [0, 1] para cada celda ocupada; NaN en el resto."""

    values: np.ndarray
    occupied: np.ndarray

    @property
    def scores(self) -> np.ndarray:
        return self.values[self.occupied]


@dataclass(frozen=True, eq=False)
class CleanMap:
    grid: OccupancyGrid
    threshold: float
    removed_cells: int
    candidates: list[dict[str, float]] = field(default_factory=list)


def padded_side(height: int, width: int) -> int:
    largest = max(int(height), int(width), MIN_SPECTRUM_SIDE)
    return 1 << (largest - 1).bit_length()


@lru_cache(maxsize=16)
def _frequency_angles(side: int) -> np.ndarray:
    """Angulo (mod pi) de cada bin de un espectro centrado de lado ``side``."""
    offsets = np.arange(side) - side // 2
    v, u = np.meshgrid(offsets, offsets, indexing="ij")
    angles = np.mod(np.arctan2(v, u), np.pi)
    angles.setflags(write=False)
    return angles


def occupied_indicator(grid: OccupancyGrid, side: int | None = None) -> np.ndarray:
    side = side or padded_side(grid.height, grid.width)
    image = np.zeros((side, side), dtype=float)
    image[: grid.height, : grid.width] = grid.occupied_mask
    return image


def dft_spectrum(grid: OccupancyGrid) -> Spectrum:
    if grid.count(OCCUPIED) == 0:
        raise EmptyMapError("El mapa no tiene celdas ocupadas; no hay estructura que analizar.")
    side = padded_side(grid.height, grid.width)
    amplitude = np.fft.fftshift(np.fft.fft2(occupied_indicator(grid, side)))
    amplitude.setflags(write=False)
    return Spectrum(amplitude=amplitude, side=side, grid_shape=grid.shape)


@lru_cache(maxsize=16)
def _ray_coordinates(side: int, bins: int) -> np.ndarray:
    """Coordenadas (fila, columna) de las muestras de cada rayo, forma (2, bins * radios)."""
    center = side // 2
    phi = np.arange(bins) * (np.pi / bins)
    radii = np.arange(RAY_START, center, dtype=float)
    rows = center + np.outer(np.sin(phi), radii)
    cols = center + np.outer(np.cos(phi), radii)
    coordinates = np.stack([rows.ravel(), cols.ravel()])
    coordinates.setflags(write=False)
    return coordinates


def directional_amplitude(spectrum: Spectrum, bins: int = 360) -> np.ndarray:
    """Amplitud acumulada a lo largo de cada direccion en [0, pi).

    El bin k integra |F| sobre el rayo de angulo k*pi/bins que sale del centro,
    muestreado cada bin de frecuencia con interpolacion bilineal. Todas las
    direcciones reciben el mismo numero de muestras, asi que un espectro plano da
    un histograma uniforme. El bin DC queda fuera.
    """
    if bins < 16:
        raise ValueError("Se requieren al menos 16 bins angulares.")
    coordinates = _ray_coordinates(spectrum.side, bins)
    samples = map_coordinates(spectrum.magnitude, coordinates, order=1, mode="nearest")
    return samples.reshape(bins, -1).sum(axis=1)


def _refine_peak(histogram: np.ndarray, index: int) -> float:
    bins = histogram.size
    left = histogram[(index - 1) % bins]
    center = histogram[index]
    right = histogram[(index + 1) % bins]
    curvature = left - 2.0 * center + right
    if curvature >= 0:
        return float(index)
    offset = 0.5 * (left - right) / curvature
    return index + float(np.clip(offset, -0.5, 0.5))


def select_dominant_directions(
    histogram: np.ndarray,
    max_directions: int = 4,
    min_prominence: float = 0.1,
    merge_radius_deg: float = 5.0,
) -> DirectionSet:
    histogram = np.asarray(histogram, dtype=float)
    bins = histogram.size
    if bins < 3 or not np.any(histogram > 0):
        raise ValueError("El histograma direccional es nulo; no hay direcciones dominantes.")

    # Tres copias para que los picos cerca de 0 y pi tengan vecinos a ambos lados.
    tiled = np.tile(histogram, 3)
    peaks, properties = find_peaks(tiled, prominence=min_prominence * histogram.max())
    middle = (peaks >= bins) & (peaks < 2 * bins)
    candidates = [
        (float(prominence), int(peak - bins))
        for peak, prominence in zip(peaks[middle], properties["prominences"][middle])
    ]
    if not candidates:
        candidates = [(float(histogram.max()), int(np.argmax(histogram)))]
    candidates.sort(key=lambda item: (-item[0], item[1]))

    width = np.pi / bins
    merge_radius = np.radians(merge_radius_deg)
    spectral: list[float] = []
    scores: list[float] = []
    for _, index in candidates:
        if len(spectral) >= max_directions:
            break
        alpha = float(np.mod(_refine_peak(histogram, index) * width, np.pi))
        if any(circular_distance(alpha, other) <= merge_radius for other in spectral):
            continue
        spectral.append(alpha)
        scores.append(float(histogram[index]))

    # Una cresta espectral en alpha corresponde a muros orientados en alpha + pi/2.
    walls = [float(np.mod(alpha + np.pi / 2, np.pi)) for alpha in spectral]
    directions = DirectionSet(angles=tuple(walls), scores=tuple(scores))
    log.info("Direcciones dominantes (grados): %s", [round(value, 2) for value in directions.degrees])
    return directions


def structure_score(
    grid: OccupancyGrid,
    directions: DirectionSet,
    ridge_half_width_deg: float = 2.5,
    spectrum: Spectrum | None = None,
) -> ScoreGrid:
    if len(directions) == 0:
        raise ValueError("Se requiere al menos una direccion dominante para filtrar el espectro.")
    spectrum = spectrum or dft_spectrum(grid)
    angles = _frequency_angles(spectrum.side)
    half_width = np.radians(ridge_half_width_deg)

    mask = np.zeros(angles.shape, dtype=bool)
    for psi in directions:
        alpha = np.mod(psi - np.pi / 2, np.pi)
        mask |= circular_distance(angles, alpha) <= half_width
    mask[spectrum.center, spectrum.center] = True

    filtered = np.where(mask, spectrum.amplitude, 0.0)
    reconstruction = np.fft.ifft2(np.fft.ifftshift(filtered)).real
    reconstruction = reconstruction[: grid.height, : grid.width]

    occupied = grid.occupied_mask
    raw = np.maximum(reconstruction[occupied], 0.0)
    low, high = float(raw.min()), float(raw.max())
    if high - low <= SCORE_FLAT_TOLERANCE:
        normalized = np.ones_like(raw)
    else:
        normalized = (raw - low) / (high - low)

    values = np.full(grid.shape, np.nan)
    values[occupied] = normalized
    values.setflags(write=False)
    log.debug("Puntaje crudo en [%.4f, %.4f] sobre %d celdas", low, high, raw.size)
    return ScoreGrid(values=values, occupied=occupied)


def clean_map(grid: OccupancyGrid, scores: ScoreGrid, threshold: float) -> OccupancyGrid:
    """Conserva las celdas ocupadas con puntaje >= threshold; las demas pasan a libres."""
    with np.errstate(invalid="ignore"):
        kept = scores.values >= threshold
    cells = np.array(grid.cells, copy=True)
    cells[grid.occupied_mask & ~kept] = FREE
    return grid.with_cells(cells)


def threshold_candidates(scores: ScoreGrid, quantile_step: float = 0.05) -> np.ndarray:
    levels = np.round(np.arange(quantile_step, 1.0 - quantile_step / 2, quantile_step), 10)
    return np.quantile(scores.scores, levels)


def _interval_distance(ratio: float, low: float, high: float) -> float:
    return max(low - ratio, 0.0, ratio - high)


def auto_threshold(
    grid: OccupancyGrid,
    scores: ScoreGrid,
    segment_counter: Callable[[OccupancyGrid], int],
    target_ratio: tuple[float, float] = (0.2, 2.0),
    quantile_step: float = 0.05,
    threads: int = 1,
) -> CleanMap:
    free_cells = grid.count(FREE)
    if free_cells == 0:
        raise EmptyMapError("El mapa no tiene celdas libres para calibrar el umbral.")
    low, high = float(target_ratio[0]), float(target_ratio[1])
    if not low < high:
        raise ValueError("El intervalo objetivo debe cumplir inferior < superior.")

    thresholds = [float(value) for value in threshold_candidates(scores, quantile_step)]

    def evaluate(threshold: float) -> float:
        segments = int(segment_counter(clean_map(grid, scores, threshold)))
        return segments / (free_cells / 1000.0)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            ratios = list(pool.map(evaluate, thresholds))
    else:
        ratios = [evaluate(threshold) for threshold in thresholds]

    candidates = [
        {"threshold": threshold, "ratio": ratio} for threshold, ratio in zip(thresholds, ratios)
    ]
    chosen = next(
        (threshold for threshold, ratio in zip(thresholds, ratios) if low <= ratio <= high),
        None,
    )
    if chosen is None:
        distances = [_interval_distance(ratio, low, high) for ratio in ratios]
        chosen = thresholds[int(np.argmin(distances))]
        log.warning(
            "Ningun umbral deja la razon de segmentos en [%.3f, %.3f]; se usa %.4f", low, high, chosen
        )

    cleaned = clean_map(grid, scores, chosen)
    removed = grid.count(OCCUPIED) - cleaned.count(OCCUPIED)
    log.info("Umbral de estructura %.4f: %d celdas de ruido eliminadas", chosen, removed)
    return CleanMap(grid=cleaned, threshold=chosen, removed_cells=removed, candidates=candidates)


def dump_debug(
    spectrum: Spectrum, histogram: np.ndarray, out_dir: str | Path
) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    magnitude = np.log1p(spectrum.magnitude)
    peak = magnitude.max()
    scaled = np.zeros_like(magnitude) if peak <= 0 else magnitude / peak
    buffer = BytesIO()
    Image.fromarray(np.round(scaled * 255).astype(np.uint8)).save(buffer, format="PNG")
    spectrum_path = atomic_write_bytes(out_dir / "rose_spectrum.png", buffer.getvalue())

    bins = len(histogram)
    frame = pd.DataFrame(
        {
            "bin": np.arange(bins),
            "angulo_grados": np.round(np.arange(bins) * 180.0 / bins, 6),
            "amplitud": np.asarray(histogram, dtype=float),
        }
    )
    histogram_path = atomic_write_text(
        out_dir / "rose_histogram.csv", frame.to_csv(index=False, float_format="%.6f")
    )
    return spectrum_path, histogram_path
