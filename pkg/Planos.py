# ======================================================================================
# ARCHIVO: Planos.py
# Segmentacion de mapas de ocupacion en habitaciones: linea de comandos.
# ======================================================================================
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from datetime import datetime
from pathlib import Path
import argparse
import io
import json
import sys
import zipfile

import numpy as np
import pandas as pd
import toml
from openpyxl import Workbook
from openpyxl.styles import Alignment, Border, Font, PatternFill, Side
from openpyxl.utils import get_column_letter
from openpyxl.writer.excel import ExcelWriter

from map_shared import (
    METHODS,
    ConfigError,
    MapFormatError,
    PlanosError,
    StageError,
    SynthError,
    atomic_write_bytes,
    atomic_write_text,
    configure_logging,
    dump_config,
    get_logger,
    load_config,
)
from stages import baselines, drawing, evaluation, synth, topology
from stages.gridmap import (
    OccupancyGrid,
    load_label_grid,
    load_map,
    load_map_from_metadata,
    render,
    save_label_grid,
    save_map,
)
from stages.rooms import run_pipeline


log = get_logger("cli")

METADATA_SUFFIXES = {".yaml", ".yml"}
DEFAULT_SWEEP_LEVELS = [0.3, 0.5, 0.7, 0.9, 1.0]

BATCH_COLUMNS = [
    "row_type",
    "map",
    "method",
    "status",
    "precision",
    "recall",
    "mean_iou",
    "precision_std",
    "recall_std",
    "mean_iou_std",
    "maps",
    "rooms",
    "gt_rooms",
    "error",
]
SWEEP_COLUMNS = ["coverage", "status", "unknown_fraction", "precision", "recall", "mean_iou", "rooms", "gt_rooms", "error"]

# Fechas fijas del libro y de las entradas del zip: dos lotes iguales dan bytes iguales.
REPORT_TIMESTAMP = datetime(2000, 1, 1)
ZIP_TIMESTAMP = (2000, 1, 1, 0, 0, 0)


# --- 1. CARGA DE ENTRADAS ---
def load_grid(path: str | Path) -> OccupancyGrid:
    """Acepta los metadatos YAML del mapa o el raster con su YAML del mismo nombre."""
    path = Path(path)
    if path.suffix.lower() in METADATA_SUFFIXES:
        return load_map_from_metadata(path)
    return load_map(path, path.with_suffix(".yaml"))


def read_manifest(path: str | Path) -> tuple[list[str], list[dict[str, object]]]:
    path = Path(path)
    try:
        data = toml.loads(path.read_text(encoding="utf-8"))
    except OSError as error:
        raise MapFormatError(f"No fue posible leer el manifiesto {path}: {error}") from error
    except toml.TomlDecodeError as error:
        raise MapFormatError(f"El manifiesto {path} no es TOML valido: {error}") from error

    methods = list(data.get("methods", METHODS))
    unknown = [method for method in methods if method not in METHODS]
    if unknown:
        raise MapFormatError(
            f"Metodos desconocidos en el manifiesto: {', '.join(unknown)}. Validos: {', '.join(METHODS)}."
        )

    maps = []
    for index, entry in enumerate(data.get("maps", []), start=1):
        if not isinstance(entry, dict) or "map" not in entry or "gt" not in entry:
            raise MapFormatError(f"La entrada {index} del manifiesto debe tener los campos map y gt.")
        map_path = Path(str(entry["map"]))
        gt_path = Path(str(entry["gt"]))
        maps.append(
            {
                "name": str(entry.get("name", map_path.stem)),
                "map": map_path if map_path.is_absolute() else path.parent / map_path,
                "gt": gt_path if gt_path.is_absolute() else path.parent / gt_path,
            }
        )
    return methods, maps


def config_overrides(args: argparse.Namespace) -> dict:
    run = {}
    if args.seed is not None:
        run["seed"] = args.seed
    if args.threads is not None:
        run["threads"] = args.threads
    if args.debug_dumps:
        run["debug_dumps"] = True
    return {"run": run} if run else {}


def write_json(path: Path, payload: dict) -> Path:
    return atomic_write_text(path, json.dumps(payload, indent=2, ensure_ascii=False, sort_keys=True) + "\n")


# --- 2. SEGMENTACION ---
def segment_with(method: str, grid: OccupancyGrid, config: dict):
    if method == "rose2":
        return run_pipeline(grid, config).segmented
    band = config["baselines"]
    if method == "morph":
        return baselines.morphological_segment(grid, **band)
    if method == "dist":
        return baselines.distance_segment(grid, **band)
    if method == "voronoi":
        return baselines.voronoi_segment(grid, topology.voronoi_graph(grid), **band)
    raise ConfigError(f"Metodo de segmentacion desconocido: {method}")


def cmd_segment(args: argparse.Namespace, config: dict) -> int:
    grid = load_grid(args.map)
    out_dir = Path(args.out)
    debug_dir = out_dir / "debug" if config["run"]["debug_dumps"] else None
    result = run_pipeline(grid, config, debug_dir=debug_dir)

    save_map(result.clean.grid, out_dir / "clean_map.pgm", out_dir / "clean_map.yaml")
    drawing.save_lines_svg(grid, result.lines, out_dir / "lines.svg")
    write_json(out_dir / "floorplan.json", result.floorplan.to_dict(grid))
    save_label_grid(result.segmented, out_dir / "segmented.png")
    render(grid, out_dir / "floorplan.png", segmentation=result.segmented, floorplan=result.floorplan, scale=2)
    write_json(out_dir / "timing.json", {stage: round(seconds, 6) for stage, seconds in result.timings.items()})
    atomic_write_text(out_dir / "config.toml", dump_config(config))

    print(f"Segmentacion lista: {len(result.floorplan.rooms)} habitaciones en {out_dir}")
    return 0


def cmd_evaluate(args: argparse.Namespace, config: dict) -> int:
    segmented = load_label_grid(args.segmented)
    gt = load_label_grid(args.gt)
    report = evaluation.evaluate(segmented, gt)
    out_path = Path(args.out)
    if out_path.suffix.lower() != ".json":
        out_path = out_path / "metrics.json"
    write_json(out_path, report.to_dict())
    print(
        f"Precision {report.precision:.2f} | Recall {report.recall:.2f} | IoU medio {report.mean_iou:.2f}"
    )
    return 0


# --- 3. LOTES ---
def _failed_row(name: str, method: str, error: Exception | str) -> dict:
    return {"row_type": "map", "map": name, "method": method, "status": "failed", "error": str(error)}


def run_map(job: dict) -> list[dict]:
    """Segmenta un mapa del manifiesto con cada metodo. Los fallos quedan registrados en su fila."""
    name, methods, config = job["name"], job["methods"], job["config"]
    try:
        grid = load_grid(job["map"])
        gt = load_label_grid(job["gt"])
        if gt.shape != grid.shape:
            raise ValueError(f"Dimensiones incompatibles: referencia {gt.shape} vs mapa {grid.shape}.")
        gt = gt.restricted_to(grid)
    except (PlanosError, ValueError) as error:
        log.warning("Mapa %s omitido: %s", name, error)
        return [_failed_row(name, method, error) for method in methods]

    rows = []
    for method in methods:
        try:
            segmented = segment_with(method, grid, config)
            report = evaluation.evaluate(segmented, gt)
            save_label_grid(segmented, Path(job["out_dir"]) / "mapas" / name / f"{method}.png")
        except Exception as error:
            log.warning("El metodo %s fallo en %s: %s", method, name, error)
            rows.append(_failed_row(name, method, error))
            continue
        rows.append(
            {
                "row_type": "map",
                "map": name,
                "method": method,
                "status": "ok",
                "precision": report.precision,
                "recall": report.recall,
                "mean_iou": report.mean_iou,
                "rooms": report.segmented_count,
                "gt_rooms": report.gt_count,
                "error": "",
            }
        )
    return rows


def batch_report(rows: list[dict]) -> pd.DataFrame:
    per_map = pd.DataFrame(rows, columns=BATCH_COLUMNS)
    if per_map.empty:
        return per_map
    summary = evaluation.summarize(per_map)
    aggregate = pd.DataFrame(
        {
            "row_type": "aggregate",
            "map": "",
            "method": summary["method"],
            "status": "ok",
            "precision": summary["precision_mean"],
            "recall": summary["recall_mean"],
            "mean_iou": summary["mean_iou_mean"],
            "precision_std": summary["precision_std"],
            "recall_std": summary["recall_std"],
            "mean_iou_std": summary["mean_iou_std"],
            "maps": summary["maps"],
            "error": "",
        },
        columns=BATCH_COLUMNS,
    )
    frames = [frame for frame in (per_map, aggregate) if not frame.empty]
    return pd.concat(frames, ignore_index=True)


def generate_excel_report(report: pd.DataFrame) -> bytes:
    """Copia del reporte de lotes en Excel con encabezado y filas agregadas resaltadas."""
    output = io.BytesIO()
    workbook = Workbook()
    ws = workbook.active
    ws.title = "Segmentacion"

    font_header = Font(name='Calibri', size=11, bold=True, color="FFFFFF")
    fill_header = PatternFill(start_color="4472C4", end_color="4472C4", fill_type="solid")
    font_aggregate = Font(name='Calibri', size=11, bold=True)
    fill_aggregate = PatternFill(start_color="DDEBF7", end_color="DDEBF7", fill_type="solid")
    font_failed = Font(name='Calibri', size=11, color="C00000")
    thin_border = Border(left=Side(style='thin'), right=Side(style='thin'), top=Side(style='thin'), bottom=Side(style='thin'))
    metric_format = '0.00'

    ws.append(BATCH_COLUMNS)
    for cell in ws[1]:
        cell.font = font_header
        cell.fill = fill_header
        cell.alignment = Alignment(horizontal='center', vertical='center')
        cell.border = thin_border

    metric_columns = {"precision", "recall", "mean_iou", "precision_std", "recall_std", "mean_iou_std"}
    for record in report.to_dict(orient="records"):
        ws.append([None if pd.isna(record[column]) else record[column] for column in BATCH_COLUMNS])
        row = ws[ws.max_row]
        for column, cell in zip(BATCH_COLUMNS, row):
            cell.border = thin_border
            if column in metric_columns:
                cell.number_format = metric_format
                cell.alignment = Alignment(horizontal='right')
            if record["row_type"] == "aggregate":
                cell.font = font_aggregate
                cell.fill = fill_aggregate
            elif record["status"] == "failed":
                cell.font = font_failed

    for col_idx, column_cells in enumerate(ws.columns, 1):
        max_length = max(len(str(cell.value)) if cell.value is not None else 0 for cell in column_cells)
        ws.column_dimensions[get_column_letter(col_idx)].width = max(12, min(60, max_length + 2))

    workbook.properties.created = REPORT_TIMESTAMP
    workbook.properties.modified = REPORT_TIMESTAMP
    # Workbook.save reescribe "modified" con la hora actual; ExcelWriter respeta las propiedades.
    with zipfile.ZipFile(output, "w", zipfile.ZIP_DEFLATED) as archive:
        ExcelWriter(workbook, archive).save()
    return _stable_zip(output.getvalue())


def _stable_zip(data: bytes) -> bytes:
    """Reempaqueta el zip con la fecha fija en cada entrada."""
    output = io.BytesIO()
    with zipfile.ZipFile(io.BytesIO(data)) as source, zipfile.ZipFile(output, "w", zipfile.ZIP_DEFLATED) as target:
        for info in source.infolist():
            entry = zipfile.ZipInfo(info.filename, date_time=ZIP_TIMESTAMP)
            entry.compress_type = zipfile.ZIP_DEFLATED
            entry.external_attr = info.external_attr
            target.writestr(entry, source.read(info.filename))
    return output.getvalue()


def cmd_batch(args: argparse.Namespace, config: dict) -> int:
    methods, maps = read_manifest(args.manifest)
    out_dir = Path(args.out)
    threads = max(1, int(config["run"]["threads"]))
    worker_config = {**config, "run": {**config["run"], "threads": 1}} if threads > 1 else config
    jobs = [{**entry, "methods": methods, "config": worker_config, "out_dir": str(out_dir)} for entry in maps]

    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as executor:
            results = list(executor.map(run_map, jobs))
    else:
        results = [run_map(job) for job in jobs]

    report = batch_report([row for rows in results for row in rows])
    atomic_write_text(out_dir / "batch.csv", report.to_csv(index=False))
    atomic_write_bytes(out_dir / "batch.xlsx", generate_excel_report(report))
    atomic_write_text(out_dir / "config.toml", dump_config(config))

    failed = int((report["status"] == "failed").sum()) if len(report) else 0
    print(f"Lote terminado: {len(maps)} mapas, {len(methods)} metodos, {failed} fallos. Reporte en {out_dir}")
    return 0


# --- 4. MAPAS SINTETICOS ---
def cmd_synth(args: argparse.Namespace, config: dict) -> int:
    spec = synth.load_spec(args.spec)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    paths = synth.save_synth(synth.generate(spec), args.out)
    print(f"Mapa sintetico escrito en {paths['metadata']}")
    return 0


def cmd_sweep(args: argparse.Namespace, config: dict) -> int:
    spec = synth.load_spec(args.spec)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    out_dir = Path(args.out)

    rows = []
    for level in args.levels:
        generated = synth.generate(replace(spec, coverage=float(level)))
        grid = generated.grid
        row = {
            "coverage": float(level),
            "unknown_fraction": float(grid.unknown_mask[generated.interior_mask].mean()),
        }
        try:
            report = evaluation.evaluate(run_pipeline(grid, config).segmented, generated.labels)
        except StageError as error:
            log.warning("Cobertura %.2f fallo en la etapa %s: %s", level, error.stage, error.message)
            rows.append({**row, "status": "failed", "error": str(error)})
            continue
        rows.append(
            {
                **row,
                "status": "ok",
                "precision": report.precision,
                "recall": report.recall,
                "mean_iou": report.mean_iou,
                "rooms": report.segmented_count,
                "gt_rooms": report.gt_count,
                "error": "",
            }
        )

    report = pd.DataFrame(rows, columns=SWEEP_COLUMNS)
    atomic_write_text(out_dir / "sweep.csv", report.to_csv(index=False))
    atomic_write_text(out_dir / "config.toml", dump_config(config))
    ious = report.loc[report["status"] == "ok", "mean_iou"].to_numpy(dtype=float)
    if ious.size:
        print(f"IoU medio entre {np.min(ious):.2f} y {np.max(ious):.2f} ({ious.size} niveles de cobertura)")
    return 0


# --- 5. ARGUMENTOS ---
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="Archivo TOML de configuracion")
    common.add_argument("--out", type=Path, default=Path("salida"), help="Directorio (o archivo) de salida")
    common.add_argument("--seed", type=int, default=None, help="Semilla para los pasos aleatorios")
    common.add_argument("--threads", type=int, default=None, help="Hilos o procesos de trabajo")
    common.add_argument("--debug-dumps", action="store_true", help="Escribir volcados intermedios")
    common.add_argument("--log-level", default="INFO", help="DEBUG, INFO, WARNING o ERROR")

    parser = argparse.ArgumentParser(
        prog="Planos", description="Estructura y segmentacion en habitaciones de mapas de ocupacion."
    )
    commands = parser.add_subparsers(dest="command", required=True)

    segment = commands.add_parser("segment", parents=[common], help="Segmentar un mapa")
    segment.add_argument("map", type=Path, help="Metadatos YAML del mapa o raster PGM/PNG")
    segment.set_defaults(handler=cmd_segment)

    evaluate = commands.add_parser("evaluate", parents=[common], help="Comparar contra la referencia")
    evaluate.add_argument("segmented", type=Path, help="PNG indexado de la segmentacion")
    evaluate.add_argument("gt", type=Path, help="PNG indexado de referencia")
    evaluate.set_defaults(handler=cmd_evaluate)

    batch = commands.add_parser("batch", parents=[common], help="Evaluar un manifiesto de mapas")
    batch.add_argument("manifest", type=Path, help="Manifiesto TOML con methods y [[maps]]")
    batch.set_defaults(handler=cmd_batch)

    generate = commands.add_parser("synth", parents=[common], help="Generar un mapa sintetico")
    generate.add_argument("spec", type=Path, help="Especificacion JSON o TOML")
    generate.set_defaults(handler=cmd_synth)

    sweep = commands.add_parser("sweep", parents=[common], help="Barrido de cobertura sobre un mapa sintetico")
    sweep.add_argument("spec", type=Path, help="Especificacion JSON o TOML")
    sweep.add_argument("--levels", type=float, nargs="+", default=DEFAULT_SWEEP_LEVELS, help="Coberturas a evaluar")
    sweep.set_defaults(handler=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        configure_logging(args.log_level)
        config = load_config(args.config, config_overrides(args))
        return args.handler(args, config)
    except StageError as error:
        print(f"Error en la etapa {error.stage}: {error.message}", file=sys.stderr)
        return 2
    except (MapFormatError, ConfigError, SynthError, ValueError) as error:
        print(f"Error: {error}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
