"""Grafo topologico del espacio libre a partir de su eje medial.

El esqueleto sale de ``skimage.morphology.medial_axis`` sobre el espacio libre
(celdas desconocidas cuentan como obstaculo). Ocupa el lugar de la regla de
crestas de la transformada de distancia, en la que una celda es cresta si el
angulo entre sus dos obstaculos mas cercanos es >= 120 grados o si es maximo
local en su vecindad de 8, seguida de adelgazamiento. Ambas dan un eje de un
pixel de ancho que conserva la conectividad de cada region libre; los nodos
son las celdas del esqueleto y las aristas su adyacencia de 8.
"""

from __future__ import annotations

from dataclasses import dataclass
from io import BytesIO
from pathlib import Path
import json

import networkx as nx
import numpy as np
from PIL import Image
from scipy.ndimage import distance_transform_edt
from skimage.morphology import medial_axis

from map_shared import (
    RENDER_FREE,
    RENDER_OCCUPIED,
    RENDER_UNKNOWN,
    EmptyMapError,
    atomic_write_bytes,
    atomic_write_text,
    get_logger,
)
from stages.gridmap import OccupancyGrid


log = get_logger("topology")

NEIGHBOUR_OFFSETS = ((0, 1), (1, -1), (1, 0), (1, 1))
SKELETON_COLOR = (200, 30, 30)


@dataclass(frozen=True, eq=False)
class TopoGraph:
    nodes: np.ndarray
    edges: np.ndarray
    clearance: np.ndarray
    shape: tuple[int, int]

    def __len__(self) -> int:
        return int(self.nodes.shape[0])

    @property
    def node_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        if len(self):
            mask[self.nodes[:, 1], self.nodes[:, 0]] = True
        return mask

    def nodes_in(self, cells: np.ndarray) -> np.ndarray:
        """Ids de los nodos cuya celda esta marcada en ``cells``."""
        if not len(self):
            return np.zeros(0, dtype=np.int64)
        inside = np.asarray(cells, dtype=bool)[self.nodes[:, 1], self.nodes[:, 0]]
        return np.flatnonzero(inside)

    def to_networkx(self) -> nx.Graph:
        graph = nx.Graph()
        for node_id, ((col, row), clearance) in enumerate(zip(self.nodes.tolist(), self.clearance.tolist())):
            graph.add_node(node_id, cell=(col, row), clearance=clearance)
        graph.add_edges_from(map(tuple, self.edges.tolist()))
        return graph

    def to_dict(self) -> dict:
        return {
            "nodes": [
                {"id": node_id, "col": col, "row": row, "clearance": round(clearance, 6)}
                for node_id, ((col, row), clearance) in enumerate(zip(self.nodes.tolist(), self.clearance.tolist()))
            ],
            "edges": self.edges.tolist(),
        }


def free_space_distance(grid: OccupancyGrid) -> np.ndarray:
    """Distancia euclidiana exacta a la celda no libre mas cercana; fuera del mapa es obstaculo."""
    padded = np.pad(grid.free_mask, 1, constant_values=False)
    return distance_transform_edt(padded)[1:-1, 1:-1]


def free_space_skeleton(grid: OccupancyGrid) -> np.ndarray:
    padded = np.pad(grid.free_mask, 1, constant_values=False)
    skeleton = medial_axis(padded, rng=0)
    return skeleton[1:-1, 1:-1] & grid.free_mask


def _adjacent_pairs(ids: np.ndarray) -> np.ndarray:
    height, width = ids.shape
    pairs = []
    for d_row, d_col in NEIGHBOUR_OFFSETS:
        rows = slice(0, height - d_row)
        shifted_rows = slice(d_row, height)
        cols = slice(max(0, -d_col), width - max(0, d_col))
        shifted_cols = slice(max(0, d_col), width - max(0, -d_col))
        first = ids[rows, cols]
        second = ids[shifted_rows, shifted_cols]
        both = (first >= 0) & (second >= 0)
        pairs.append(np.column_stack((first[both], second[both])))
    if not pairs:
        return np.zeros((0, 2), dtype=np.int64)
    return np.concatenate(pairs).astype(np.int64)


def voronoi_graph(grid: OccupancyGrid) -> TopoGraph:
    if not grid.free_mask.any():
        raise EmptyMapError("El mapa no tiene espacio libre para el grafo topologico.")
    distance = free_space_distance(grid)
    skeleton = free_space_skeleton(grid)

    ids = np.full(grid.shape, -1, dtype=np.int64)
    rows, cols = np.nonzero(skeleton)
    ids[rows, cols] = np.arange(rows.size)
    pairs = _adjacent_pairs(ids)

    # Los nodos aislados no aportan conectividad.
    connected = np.zeros(rows.size, dtype=bool)
    connected[pairs.ravel()] = True
    remap = np.full(rows.size, -1, dtype=np.int64)
    remap[connected] = np.arange(int(connected.sum()))

    nodes = np.column_stack((cols[connected], rows[connected])).astype(np.int64)
    edges = remap[pairs] if pairs.size else np.zeros((0, 2), dtype=np.int64)
    if edges.size:
        edges = np.sort(edges, axis=1)
        edges = edges[np.lexsort((edges[:, 1], edges[:, 0]))]
    clearance = distance[nodes[:, 1], nodes[:, 0]] if nodes.size else np.zeros(0)

    log.info("Grafo topologico: %d nodos, %d aristas", nodes.shape[0], edges.shape[0])
    return TopoGraph(nodes=nodes, edges=edges, clearance=clearance, shape=grid.shape)


def room_components(room_cells: np.ndarray, graph: TopoGraph) -> list[set[int]]:
    inside = graph.nodes_in(room_cells)
    if inside.size == 0:
        return []
    subgraph = graph.to_networkx().subgraph(inside.tolist())
    components = [set(component) for component in nx.connected_components(subgraph)]
    return sorted(components, key=min)


def dump_debug(graph: TopoGraph, grid: OccupancyGrid, out_dir: str | Path) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    rgb = np.full(grid.shape + (3,), RENDER_UNKNOWN, dtype=np.uint8)
    rgb[grid.free_mask] = RENDER_FREE
    rgb[grid.occupied_mask] = RENDER_OCCUPIED
    rgb[graph.node_mask] = SKELETON_COLOR
    buffer = BytesIO()
    Image.fromarray(rgb).save(buffer, format="PNG")
    image_path = atomic_write_bytes(out_dir / "topology_skeleton.png", buffer.getvalue())
    graph_path = atomic_write_text(
        out_dir / "topology_graph.json", json.dumps(graph.to_dict(), indent=2, sort_keys=True)
    )
    return image_path, graph_path
