"""Volcados SVG deterministas de segmentos, rectas y arreglos sobre el mapa."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence
import json

import numpy as np

from map_shared import atomic_write_text, room_color
from stages.gridmap import OccupancyGrid


LINE_COLOR = "#d81e1e"
MAP_FILL = "#000000"


def _hex(color: Sequence[int]) -> str:
    return "#{:02x}{:02x}{:02x}".format(*(int(channel) for channel in color[:3]))


def _number(value: float) -> str:
    return f"{value:.3f}".rstrip("0").rstrip(".") if value != int(value) else str(int(value))


def occupied_path(grid: OccupancyGrid) -> str:
    """Trazado SVG con una corrida horizontal por cada tramo de celdas ocupadas."""
    commands = []
    occupied = grid.occupied_mask
    for row in range(grid.height):
        padded = np.concatenate(([False], occupied[row], [False]))
        changes = np.flatnonzero(padded[1:] != padded[:-1])
        for start, end in zip(changes[::2], changes[1::2]):
            commands.append(f"M{start} {row}h{end - start}v1h-{end - start}z")
    return "".join(commands)


def _document(grid: OccupancyGrid, body: Iterable[str]) -> str:
    header = (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{grid.width}" height="{grid.height}" '
        f'viewBox="0 0 {grid.width} {grid.height}">\n'
        f'<rect x="0" y="0" width="{grid.width}" height="{grid.height}" fill="#ffffff"/>\n'
        f'<path d="{occupied_path(grid)}" fill="{MAP_FILL}" fill-opacity="0.35"/>\n'
    )
    return header + "".join(f"{element}\n" for element in body) + "</svg>\n"


def _line(start, end, color: str, width: float = 0.6, extra: str = "") -> str:
    return (
        f'<line x1="{_number(start[0])}" y1="{_number(start[1])}" '
        f'x2="{_number(end[0])}" y2="{_number(end[1])}" stroke="{color}" stroke-width="{width}"{extra}/>'
    )


def lines_svg(grid: OccupancyGrid, lines) -> str:
    return _document(grid, (_line(line.start, line.end, LINE_COLOR) for line in lines))


def save_lines_svg(grid: OccupancyGrid, lines, path: str | Path) -> Path:
    return atomic_write_text(path, lines_svg(grid, lines))


def dump_walls(structure, grid: OccupancyGrid, path: str | Path) -> Path:
    body = []
    for index, cluster in enumerate(structure.clusters, start=1):
        color = _hex(room_color(index))
        body.extend(_line(segment.a, segment.b, color, width=1.0) for segment in cluster.segments)
    body.extend(
        _line(line.start, line.end, LINE_COLOR, width=0.3, extra=' stroke-dasharray="2 2"')
        for line in structure.lines
    )
    return atomic_write_text(path, _document(grid, body))


def weight_color(weight: float) -> str:
    weight = float(np.clip(weight, 0.0, 1.0))
    return _hex((round(255 * weight), 0, round(255 * (1.0 - weight))))


def dump_arrangement(arrangement, grid: OccupancyGrid, out_dir: str | Path) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    json_path = atomic_write_text(
        out_dir / "arrangement.json", json.dumps(arrangement.to_dict(), indent=2, sort_keys=True)
    )
    body = [
        _line(edge.start, edge.end, weight_color(edge.weight), width=0.8)
        for edge in arrangement.edges
        if edge.line_id is not None
    ]
    svg_path = atomic_write_text(out_dir / "arrangement_weights.svg", _document(grid, body))
    return json_path, svg_path
