from __future__ import annotations

from pathlib import Path
import colorsys
import copy
import logging
import os
import tempfile
import time

import numpy as np
import toml


APP_DIR = Path(__file__).resolve().parent
LOGGER_NAME = "planos"

FREE = 0
OCCUPIED = 100
UNKNOWN = -1
UNLABELED = 0
EXTERIOR_FACE = -1

METHODS = ["rose2", "morph", "dist", "voronoi"]
PIPELINE_STAGES = ["rose", "walls", "arrangement", "rooms", "topology"]

MAP_SAVE_FREE = 254
MAP_SAVE_OCCUPIED = 0
MAP_SAVE_UNKNOWN = 128
MAP_SAVE_OCCUPIED_THRESH = 0.65
MAP_SAVE_FREE_THRESH = 0.196

RENDER_FREE = 255
RENDER_OCCUPIED = 0
RENDER_UNKNOWN = 128

DEFAULT_CONFIG: dict[str, dict[str, object]] = {
    "run": {
        "seed": 0,
        "threads": 1,
        "debug_dumps": False,
    },
    "rose": {
        "bins": 360,
        "max_directions": 4,
        "min_prominence": 0.1,
        "merge_radius_deg": 5.0,
        "ridge_half_width_deg": 2.5,
        # Con count_off_direction solo cuentan los segmentos que no siguen ninguna direccion dominante.
        "count_off_direction": True,
        "target_ratio": [0.0, 0.05],
        "quantile_step": 0.05,
    },
    "walls": {
        "rho_res": 1.0,
        "theta_res_deg": 0.5,
        "votes": 20,
        "min_len": 10,
        "max_gap": 5,
        "angular_eps_deg": 5.0,
        "dbscan_eps": 10.0,
        "min_pts": 1,
        "doorway_width_m": 1.0,
        "dedup_separation": 0.5,
        "max_misalignment_deg": 5.0,
    },
    "arrangement": {
        "min_total_coverage": 0.1,
        "keep_edge_coverage": 0.8,
        # 0 significa "la mitad del ancho de puerta".
        "band_halfwidth_m": 0.0,
    },
    "rooms": {
        "wall_weight_threshold": 0.5,
        "max_split_depth": 8,
        "min_component_nodes": 10,
        "min_room_area_m2": 1.5,
    },
    "baselines": {
        "room_area_min_m2": 2.0,
        "room_area_max_m2": 80.0,
    },
}


class PlanosError(Exception):
    """Error base de la aplicacion."""


class MapFormatError(PlanosError):
    """Archivo de mapa, metadatos o etiquetas con formato invalido."""


class ConfigError(PlanosError):
    """Configuracion con secciones, claves o tipos invalidos."""


class SynthError(PlanosError):
    """Especificacion de mapa sintetico no factible."""


class EmptyMapError(ValueError):
    """El mapa no tiene celdas ocupadas o libres suficientes."""


class StageError(PlanosError):
    def __init__(self, stage: str, message: str) -> None:
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.message = message


def get_logger(name: str = "") -> logging.Logger:
    return logging.getLogger(f"{LOGGER_NAME}.{name}" if name else LOGGER_NAME)


def configure_logging(level: str | int = "INFO") -> None:
    logger = logging.getLogger(LOGGER_NAME)
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
        if not isinstance(level, int):
            raise ConfigError(f"Nivel de log desconocido: {level}")
    logger.setLevel(level)
    if not logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(
            logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s")
        )
        logger.addHandler(handler)
    logger.propagate = False


log = get_logger()


def _deep_merge(base: dict, updates: dict, section: str = "") -> dict:
    merged = copy.deepcopy(base)
    for key, value in updates.items():
        where = f"{section}.{key}" if section else str(key)
        if key not in merged:
            raise ConfigError(f"Clave de configuracion desconocida: {where}")
        current = merged[key]
        if isinstance(current, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"La seccion {where} debe ser una tabla.")
            merged[key] = _deep_merge(current, value, where)
            continue
        merged[key] = _coerce_value(current, value, where)
    return merged


def _coerce_value(default: object, value: object, where: str) -> object:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} debe ser booleano, se recibio {value!r}.")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} debe ser entero, se recibio {value!r}.")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} debe ser numerico, se recibio {value!r}.")
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, (list, tuple)) or len(value) != len(default):
            raise ConfigError(f"{where} debe ser una lista de {len(default)} valores.")
        return [float(item) for item in value]
    return value


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> dict:
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        config_path = Path(path)
        try:
            file_values = toml.loads(config_path.read_text(encoding="utf-8"))
        except FileNotFoundError as error:
            raise ConfigError(f"No se encontro el archivo de configuracion {config_path}.") from error
        except toml.TomlDecodeError as error:
            raise ConfigError(f"El archivo {config_path} no es TOML valido: {error}") from error
        config = _deep_merge(config, file_values)
    if overrides:
        config = _deep_merge(config, overrides)

    low, high = config["rose"]["target_ratio"]
    if not low < high:
        raise ConfigError("rose.target_ratio debe cumplir inferior < superior.")
    if config["baselines"]["room_area_min_m2"] >= config["baselines"]["room_area_max_m2"]:
        raise ConfigError("baselines.room_area_min_m2 debe ser menor que room_area_max_m2.")
    return config


def dump_config(config: dict) -> str:
    return toml.dumps(config)


def run_stage(stage: str, operation, *args, timings: dict[str, float] | None = None, **kwargs):
    stage_log = get_logger(stage)
    started = time.perf_counter()
    stage_log.debug("Iniciando etapa %s", stage)
    try:
        result = operation(*args, **kwargs)
    except StageError:
        raise
    except Exception as error:
        stage_log.error("La etapa %s fallo: %s", stage, error)
        raise StageError(stage, f"No fue posible completar la etapa {stage}: {error}") from error
    elapsed = time.perf_counter() - started
    if timings is not None:
        timings[stage] = timings.get(stage, 0.0) + elapsed
    stage_log.debug("Etapa %s completada en %.3f s", stage, elapsed)
    return result


def atomic_write_bytes(path: str | Path, data: bytes) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    handle, temp_name = tempfile.mkstemp(prefix=f".{target.name}.", dir=target.parent)
    try:
        with os.fdopen(handle, "wb") as stream:
            stream.write(data)
        os.replace(temp_name, target)
    except Exception:
        if os.path.exists(temp_name):
            os.unlink(temp_name)
        raise
    return target


def atomic_write_text(path: str | Path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def _build_palette() -> list[tuple[int, int, int]]:
    colors = [(0, 0, 0)]
    hue = 0.0
    for index in range(1, 256):
        hue = (hue + 0.618033988749895) % 1.0
        saturation = 0.55 + 0.35 * ((index * 7) % 3) / 2.0
        value = 0.95 - 0.25 * ((index * 5) % 2)
        red, green, blue = colorsys.hsv_to_rgb(hue, saturation, value)
        colors.append((int(round(red * 255)), int(round(green * 255)), int(round(blue * 255))))
    return colors


ROOM_PALETTE = _build_palette()


def room_color(room_id: int) -> tuple[int, int, int]:
    if room_id <= 0:
        return ROOM_PALETTE[0]
    return ROOM_PALETTE[1 + (int(room_id) - 1) % 255]


def palette_bytes() -> list[int]:
    return [channel for color in ROOM_PALETTE for channel in color]


def circular_distance(first, second, period: float = np.pi):
    """Distancia angular minima modulo ``period`` (escalar o vectorizada)."""
    delta = np.abs(np.mod(np.asarray(first, dtype=float) - np.asarray(second, dtype=float), period))
    result = np.minimum(delta, period - delta)
    if np.ndim(result) == 0:
        return float(result)
    return result
