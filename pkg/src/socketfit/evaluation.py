"""Per-sample error metrics, report aggregation and distance-map export."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyInput, EmptyMesh, MeshIOError, ShapeMismatch
from .geometry import MeshIndex, surface_to_surface
from .mesh import DistanceMap, TriMesh
from .meshio import save_mesh

REPORT_VERSION = 1


def quartiles(values):
    """(Q1, median, Q3) with linear interpolation between closest ranks."""
    q1, med, q3 = np.percentile(np.asarray(values, dtype=float), [25, 50, 75])
    return float(q1), float(med), float(q3)


@dataclass(frozen=True)
class SampleRecord:
    id: str
    s2s_median: float
    s2s_q1: float
    s2s_q3: float
    mean_euclidean: float | None = None
    fold: int | None = None

    def __post_init__(self):
        # plain Python numbers keep JSON/CSV output free of numpy reprs
        for name in ("s2s_median", "s2s_q1", "s2s_q3"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.mean_euclidean is not None:
            object.__setattr__(self, "mean_euclidean", float(self.mean_euclidean))
        if self.fold is not None:
            object.__setattr__(self, "fold", int(self.fold))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def evaluate_prediction(pred: TriMesh, truth: TriMesh, sample_id="", fold=None,
                        index: MeshIndex | None = None, return_map=False):
    """Surface-to-surface quartiles from the predicted vertices to the
    truth surface, plus the mean per-vertex Euclidean distance when both
    meshes share a vertex count.
    """
    if pred.n_vertices == 0 or truth.n_faces == 0:
        raise EmptyMesh("cannot evaluate an empty mesh")
    dmap = surface_to_surface(pred, truth, index=index)
    q1, med, q3 = quartiles(dmap.values)
    eucl = None
    if truth.n_vertices == pred.n_vertices:
        eucl = float(np.linalg.norm(pred.vertices - truth.vertices, axis=1).mean())
    rec = SampleRecord(str(sample_id), med, q1, q3, eucl, fold)
    return (rec, dmap) if return_map else rec


def _summary(records):
    meds = np.array([r.s2s_median for r in records])
    q1, med, q3 = quartiles(meds)
    eucl = [r.mean_euclidean for r in records if r.mean_euclidean is not None]
    return {
        "n": len(records),
        "median": med,
        "q1": q1,
        "q3": q3,
        "mean_of_medians": float(meds.mean()),
        "mean_euclidean": float(np.mean(eucl)) if eucl else None,
    }


@dataclass
class EvalReport:
    """Per-sample records with overall and per-fold aggregates.

    The overall ``median``/``q1``/``q3`` are order statistics of the
    per-sample surface-to-surface medians across all test folds; the
    fold-averaged values are reported alongside.
    """

    method: str
    mode: str
    representation: str
    records: list
    overall: dict = field(default_factory=dict)
    folds: list = field(default_factory=list)
    fold_average: dict = field(default_factory=dict)

    def row(self):
        """One comparison-table row."""
        return {"method": self.method, "mode": self.mode,
                "representation": self.representation, **self.overall,
                "fold_average": self.fold_average}

    def to_dict(self):
        return {
            "version": REPORT_VERSION,
            "method": self.method,
            "mode": self.mode,
            "representation": self.representation,
            "overall": self.overall,
            "fold_average": self.fold_average,
            "folds": self.folds,
            "samples": [r.to_dict() for r in self.records],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["method"], d["mode"], d["representation"],
                   [SampleRecord.from_dict(r) for r in d["samples"]],
                   d["overall"], d["folds"], d["fold_average"])


def aggregate_reports(records, folds=None, method="", mode="", representation="") -> EvalReport:
    """Aggregate per-sample records into an ``EvalReport``.

    ``folds`` optionally lists the fold number of each record; by default
    the records' own ``fold`` fields are used.
    """
    records = list(records)
    if not records:
        raise EmptyInput("no records to aggregate")
    if folds is not None:
        folds = list(folds)
        if len(folds) != len(records):
            raise ShapeMismatch("one fold label per record is required")
        records = [SampleRecord(r.id, r.s2s_median, r.s2s_q1, r.s2s_q3, r.mean_euclidean, int(f))
                   for r, f in zip(records, folds)]
    # sort so the aggregate does not depend on record order
    records.sort(key=lambda r: (r.fold if r.fold is not None else -1, r.id))
    overall = _summary(records)
    per_fold = []
    labels = sorted({r.fold for r in records if r.fold is not None})
    for f in labels:
        per_fold.append({"fold": f, **_summary([r for r in records if r.fold == f])})
    fold_average = {}
    if per_fold:
        for key in ("median", "q1", "q3"):
            fold_average[key] = float(np.mean([p[key] for p in per_fold]))
    return EvalReport(method, mode, representation, records, overall, per_fold, fold_average)


def write_report(report: EvalReport, json_path, config=None):
    """Write the report JSON (with an optional config snapshot) and a flat
    per-sample CSV next to it.
    """
    json_path = Path(json_path)
    doc = report.to_dict()
    if config is not None:
        doc["config"] = config
    json_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    write_records_csv(report.records, json_path.with_suffix(".csv"))
    return json_path


def load_report(path) -> EvalReport:
    return EvalReport.from_dict(json.loads(Path(path).read_text()))


def write_records_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "fold", "s2s_median", "s2s_q1", "s2s_q3", "mean_euclidean"])
        for r in records:
            w.writerow([r.id, "" if r.fold is None else r.fold, repr(r.s2s_median),
                        repr(r.s2s_q1), repr(r.s2s_q3),
                        "" if r.mean_euclidean is None else repr(r.mean_euclidean)])


def comparison_table(reports):
    """Rows sorted by (method, mode, representation)."""
    rows = [r.row() for r in reports]
    return sorted(rows, key=lambda r: (r["method"], r["mode"], r["representation"]))


def write_comparison_csv(reports, path):
    cols = ["method", "mode", "representation", "n", "median", "q1", "q3",
            "mean_of_medians", "mean_euclidean"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in comparison_table(reports):
            w.writerow([row[c] for c in cols])


def select_cases(medians):
    """Indices of the best, median and worst sample by per-sample median.

    For an even count the lower of the two middle samples is taken.
    """
    medians = np.asarray(medians, dtype=float)
    if medians.size == 0:
        raise EmptyInput("no samples to select from")
    order = np.argsort(medians, kind="stable")
    return int(order[0]), int(order[(len(order) - 1) // 2]), int(order[-1])


def export_distance_map(mesh: TriMesh, dmap: DistanceMap, path):
    """Write ``mesh`` as PLY with the map as a per-vertex ``quality``
    property plus a ``<path>.csv`` sidecar of (vertex, value).
    """
    values = np.asarray(dmap.values if isinstance(dmap, DistanceMap) else dmap, dtype=float)
    if len(values) != mesh.n_vertices:
        raise ShapeMismatch(f"{len(values)} values for {mesh.n_vertices} vertices")
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        save_mesh(mesh, path, format="ply", quality=values)
        with open(path.with_suffix(".csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["vertex", "value"])
            for i, v in enumerate(values):
                w.writerow([i, repr(float(v))])
    except MeshIOError:
        raise
    except OSError as exc:
        raise MeshIOError(f"cannot write distance map to {path}: {exc}") from exc
    return path
