from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from map_shared import get_logger


log = get_logger("evaluation")

METRIC_COLUMNS = ["precision", "recall", "mean_iou"]


def _labels(value) -> np.ndarray:
    return np.asarray(getattr(value, "labels", value))


@dataclass(frozen=True, eq=False)
class Overlap:
    segmented_ids: np.ndarray
    gt_ids: np.ndarray
    counts: np.ndarray
    segmented_areas: np.ndarray
    gt_areas: np.ndarray


def overlap_matrix(segmented, gt) -> Overlap:
    seg_labels, gt_labels = _labels(segmented), _labels(gt)
    if seg_labels.shape != gt_labels.shape:
        raise ValueError(
            f"Dimensiones incompatibles: segmentacion {seg_labels.shape} vs referencia {gt_labels.shape}."
        )
    seg_ids = np.unique(seg_labels[seg_labels > 0])
    gt_ids = np.unique(gt_labels[gt_labels > 0])
    seg_areas = np.array([np.count_nonzero(seg_labels == room) for room in seg_ids], dtype=np.int64)
    gt_areas = np.array([np.count_nonzero(gt_labels == room) for room in gt_ids], dtype=np.int64)

    counts = np.zeros((seg_ids.size, gt_ids.size), dtype=np.int64)
    both = (seg_labels > 0) & (gt_labels > 0)
    if seg_ids.size and gt_ids.size and both.any():
        seg_index = np.searchsorted(seg_ids, seg_labels[both])
        gt_index = np.searchsorted(gt_ids, gt_labels[both])
        flat = np.bincount(seg_index * gt_ids.size + gt_index, minlength=counts.size)
        counts = flat.reshape(counts.shape).astype(np.int64)
    return Overlap(seg_ids, gt_ids, counts, seg_areas, gt_areas)


def match_rooms(segmented, gt) -> dict[int, int | None]:
    """Habitacion de referencia con mayor traslape para cada habitacion segmentada."""
    overlap = overlap_matrix(segmented, gt)
    mapping: dict[int, int | None] = {}
    for row, seg_id in enumerate(overlap.segmented_ids.tolist()):
        if overlap.gt_ids.size == 0 or overlap.counts[row].max() == 0:
            mapping[seg_id] = None
            continue
        mapping[seg_id] = int(overlap.gt_ids[int(np.argmax(overlap.counts[row]))])
    return mapping


def iou(segmented_room: np.ndarray, gt_room: np.ndarray) -> float:
    first = np.asarray(segmented_room, dtype=bool)
    second = np.asarray(gt_room, dtype=bool)
    union = int(np.count_nonzero(first | second))
    if union == 0:
        return 0.0
    return 100.0 * int(np.count_nonzero(first & second)) / union


def precision_recall(segmented, gt, mapping: dict[int, int | None] | None = None) -> tuple[float, float]:
    overlap = overlap_matrix(segmented, gt)
    mapping = mapping if mapping is not None else match_rooms(segmented, gt)
    gt_position = {int(room): index for index, room in enumerate(overlap.gt_ids.tolist())}

    precisions = []
    for row, seg_id in enumerate(overlap.segmented_ids.tolist()):
        matched = mapping.get(seg_id)
        best = overlap.counts[row, gt_position[matched]] if matched is not None else 0
        precisions.append(100.0 * best / overlap.segmented_areas[row])

    recalls = []
    for column in range(overlap.gt_ids.size):
        best = overlap.counts[:, column].max() if overlap.segmented_ids.size else 0
        recalls.append(100.0 * best / overlap.gt_areas[column])

    precision = float(np.mean(precisions)) if precisions else 0.0
    recall = float(np.mean(recalls)) if recalls else 0.0
    return precision, recall


def _json_value(key: str, value):
    if pd.isna(value):
        return None
    if key.endswith("_id") or isinstance(value, (int, np.integer)):
        return int(value)
    return round(float(value), 6)


@dataclass(frozen=True, eq=False)
class MatchReport:
    rooms: pd.DataFrame
    gt_rooms: pd.DataFrame
    precision: float
    recall: float
    mean_iou: float

    @property
    def segmented_count(self) -> int:
        return int(len(self.rooms))

    @property
    def gt_count(self) -> int:
        return int(len(self.gt_rooms))

    def to_dict(self) -> dict:
        def records(frame: pd.DataFrame) -> list[dict]:
            return [
                {key: _json_value(key, value) for key, value in record.items()}
                for record in frame.to_dict(orient="records")
            ]

        return {
            "mapa": {
                "precision": round(self.precision, 6),
                "recall": round(self.recall, 6),
                "mean_iou": round(self.mean_iou, 6),
                "habitaciones_segmentadas": self.segmented_count,
                "habitaciones_referencia": self.gt_count,
            },
            "habitaciones": records(self.rooms),
            "habitaciones_referencia": records(self.gt_rooms),
        }


def evaluate(segmented, gt) -> MatchReport:
    overlap = overlap_matrix(segmented, gt)
    mapping = match_rooms(segmented, gt)
    gt_position = {int(room): index for index, room in enumerate(overlap.gt_ids.tolist())}

    room_rows = []
    for row, seg_id in enumerate(overlap.segmented_ids.tolist()):
        matched = mapping[seg_id]
        area = int(overlap.segmented_areas[row])
        if matched is None:
            intersection, union = 0, area
        else:
            column = gt_position[matched]
            intersection = int(overlap.counts[row, column])
            union = area + int(overlap.gt_areas[column]) - intersection
        room_rows.append(
            {
                "room_id": seg_id,
                "gt_id": matched if matched is not None else np.nan,
                "area": area,
                "intersection": intersection,
                "union": union,
                "iou": 100.0 * intersection / union if union else 0.0,
                "precision": 100.0 * intersection / area if area else 0.0,
            }
        )
    rooms = pd.DataFrame(
        room_rows, columns=["room_id", "gt_id", "area", "intersection", "union", "iou", "precision"]
    )

    gt_rows = []
    for column, gt_id in enumerate(overlap.gt_ids.tolist()):
        best = int(overlap.counts[:, column].max()) if overlap.segmented_ids.size else 0
        area = int(overlap.gt_areas[column])
        gt_rows.append({"gt_id": gt_id, "area": area, "max_overlap": best, "recall": 100.0 * best / area})
    gt_rooms = pd.DataFrame(gt_rows, columns=["gt_id", "area", "max_overlap", "recall"])

    precision, recall = precision_recall(segmented, gt, mapping)
    mean_iou = float(rooms["iou"].mean()) if len(rooms) else 0.0
    log.info("Evaluacion: precision %.2f, recall %.2f, IoU medio %.2f", precision, recall, mean_iou)
    return MatchReport(rooms=rooms, gt_rooms=gt_rooms, precision=precision, recall=recall, mean_iou=mean_iou)


def summarize(results: pd.DataFrame) -> pd.DataFrame:
    """Media y desviacion estandar por metodo sobre las filas de mapas exitosas."""
    columns = ["method", *[f"{metric}_{stat}" for metric in METRIC_COLUMNS for stat in ("mean", "std")], "maps"]
    successful = results[results["status"] == "ok"] if len(results) else results
    if successful.empty:
        return pd.DataFrame(columns=columns)
    grouped = successful.groupby("method", sort=False)
    means = grouped[METRIC_COLUMNS].mean()
    stds = grouped[METRIC_COLUMNS].std(ddof=0)
    sizes = grouped.size()
    rows = []
    for method in means.index:
        row = {"method": method}
        for metric in METRIC_COLUMNS:
            row[f"{metric}_mean"] = float(means.loc[method, metric])
            row[f"{metric}_std"] = float(stds.loc[method, metric])
        row["maps"] = int(sizes.loc[method])
        rows.append(row)
    return pd.DataFrame(rows, columns=columns)
