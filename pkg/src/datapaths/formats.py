"""On-disk document formats shared by the CLI and the server.

Every artifact is a single UTF-8 JSON object. Numeric arrays are stored flat
in row-major order next to an explicit shape, so consumers never have to
guess a layout. Field names here are the frozen contract for the whole repo.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .analytics import PatternReport
from .contribution import ContributionResult
from .errors import ParseError, ValidationError
from .extract import Datapath, ExtractionParams
from .layout import Rect, RiverLayout, TreemapLayout
from .toydata import LabeledDataset

SCHEMA_VERSION = 1


def json_dumps(doc: dict) -> str:
    return json.dumps(doc, indent=1, sort_keys=True)


def save_doc(path, doc: dict) -> None:
    Path(path).write_text(json_dumps(doc), encoding="utf-8")


def load_doc(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(str(exc), str(path)) from None
    if not isinstance(doc, dict):
        raise ParseError("document root must be an object", str(path))
    return doc


def content_id(doc: dict) -> str:
    """Stable 16-hex id from the canonical serialization of a document."""
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def _require(doc: dict, field: str, path: str):
    if field not in doc:
        raise ParseError(f"missing field {field!r}", path)
    return doc[field]


def _check_version(doc: dict, path: str) -> None:
    if _require(doc, "version", path) != SCHEMA_VERSION:
        raise ParseError(f"unsupported version {doc['version']!r}", f"{path}.version")


def tensor_doc(arr) -> dict:
    arr = np.asarray(arr, dtype=np.float64)
    return {"shape": list(arr.shape), "data": arr.ravel().tolist()}


def tensor_from_doc(doc, path: str = "tensor") -> np.ndarray:
    shape = tuple(int(d) for d in _require(doc, "shape", path))
    data = np.asarray(_require(doc, "data", path), dtype=np.float64)
    if data.size != int(np.prod(shape)):
        raise ParseError(f"{data.size} values do not fill shape {shape}", f"{path}.data")
    return data.reshape(shape)


# -- images and datasets ------------------------------------------------------

def image_doc(x, label: int | None = None) -> dict:
    doc = {"version": SCHEMA_VERSION, "image": tensor_doc(x)}
    if label is not None:
        doc["label"] = int(label)
    return doc


def image_from_doc(doc) -> tuple[np.ndarray, int | None]:
    _check_version(doc, "image")
    x = tensor_from_doc(_require(doc, "image", "image"), "image.image")
    label = doc.get("label")
    return x, None if label is None else int(label)


def dataset_doc(ds: LabeledDataset) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "images": tensor_doc(ds.images),
        "labels": [int(l) for l in ds.labels],
    }


def dataset_from_doc(doc) -> LabeledDataset:
    _check_version(doc, "dataset")
    images = tensor_from_doc(_require(doc, "images", "dataset"), "dataset.images")
    labels = np.asarray(_require(doc, "labels", "dataset"), dtype=np.int64)
    if images.ndim != 4:
        raise ParseError("images must have shape (n, channels, h, w)", "dataset.images")
    if len(labels) != images.shape[0]:
        raise ParseError("label count does not match image count", "dataset.labels")
    return LabeledDataset(images=images, labels=labels)


# -- triplet manifest ---------------------------------------------------------

@dataclass(frozen=True)
class TripletCase:
    """One attack case: a source image, its adversarial, and candidate targets."""

    source_path: str
    adversarial_path: str
    target_paths: tuple[str, ...]
    source_label: int
    predicted_label: int


def manifest_doc(cases) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "cases": [
            {
                "source_path": c.source_path,
                "adversarial_path": c.adversarial_path,
                "target_paths": list(c.target_paths),
                "source_label": int(c.source_label),
                "predicted_label": int(c.predicted_label),
            }
            for c in cases
        ],
    }


def manifest_from_doc(doc) -> tuple[TripletCase, ...]:
    _check_version(doc, "manifest")
    cases = []
    for i, rec in enumerate(_require(doc, "cases", "manifest")):
        path = f"manifest.cases[{i}]"
        cases.append(
            TripletCase(
                source_path=str(_require(rec, "source_path", path)),
                adversarial_path=str(_require(rec, "adversarial_path", path)),
                target_paths=tuple(str(p) for p in _require(rec, "target_paths", path)),
                source_label=int(_require(rec, "source_label", path)),
                predicted_label=int(_require(rec, "predicted_label", path)),
            )
        )
    return tuple(cases)


# -- extraction ---------------------------------------------------------------

def params_doc(params: ExtractionParams) -> dict:
    return dataclasses.asdict(params)


def params_from_doc(doc, path: str = "params") -> ExtractionParams:
    known = {f.name for f in dataclasses.fields(ExtractionParams)}
    unknown = set(doc) - known
    if unknown:
        raise ParseError(f"unknown params {sorted(unknown)}", path)
    try:
        return ExtractionParams(**doc)
    except TypeError as exc:
        raise ParseError(str(exc), path) from None


def datapath_doc(dp: Datapath, params: ExtractionParams) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "model_id": dp.model_ref,
        "example_id": dp.example_ref,
        "params": params_doc(params),
        "gates": [float(g) for g in dp.gates],
        "converged_loss": float(dp.converged_loss),
        "label_preserved": bool(dp.label_preserved),
    }


def datapath_from_doc(doc) -> tuple[Datapath, ExtractionParams]:
    _check_version(doc, "datapath")
    params = params_from_doc(_require(doc, "params", "datapath"), "datapath.params")
    dp = Datapath(
        gates=np.asarray(_require(doc, "gates", "datapath"), dtype=np.float64),
        model_ref=str(_require(doc, "model_id", "datapath")),
        example_ref=str(_require(doc, "example_id", "datapath")),
        converged_loss=float(_require(doc, "converged_loss", "datapath")),
        label_preserved=bool(_require(doc, "label_preserved", "datapath")),
    )
    return dp, params


# -- contribution -------------------------------------------------------------

def mask_rle(selected) -> dict:
    """Run lengths over the flattened grid, alternating gaps and runs of ones.

    The first count is always the leading gap, possibly 0.
    """
    flat = np.asarray(selected, dtype=bool).ravel()
    runs = [0]
    current = False
    for v in flat:
        if v == current:
            runs[-1] += 1
        else:
            runs.append(1)
            current = v
    return {"shape": list(np.asarray(selected).shape), "runs": runs}


def mask_from_rle(doc, path: str = "mask") -> np.ndarray:
    shape = tuple(int(d) for d in _require(doc, "shape", path))
    runs = _require(doc, "runs", path)
    flat = np.zeros(int(np.prod(shape)), dtype=bool)
    pos = 0
    for i, count in enumerate(runs):
        if count < 0:
            raise ParseError("negative run length", f"{path}.runs[{i}]")
        if i % 2 == 1:
            flat[pos:pos + count] = True
        pos += count
    if pos != flat.size:
        raise ParseError(f"runs cover {pos} cells, mask has {flat.size}", f"{path}.runs")
    return flat.reshape(shape)


def contribution_doc(result: ContributionResult, params: ExtractionParams,
                     mask=None) -> dict:
    doc = {
        "version": SCHEMA_VERSION,
        "target_fm": int(result.target_fm),
        "params": params_doc(params),
        "feature_maps": [int(f) for f in result.feature_maps],
        "layers": [int(l) for l in result.layers],
        "values": [float(v) for v in result.values],
        "losses": [float(v) for v in result.losses],
    }
    if mask is not None:
        doc["mask"] = mask_rle(mask)
    return doc


def contribution_from_doc(doc) -> dict:
    """Parsed view of a contribution export; vectors are not round-tripped."""
    _check_version(doc, "contribution")
    out = {
        "target_fm": int(_require(doc, "target_fm", "contribution")),
        "params": params_from_doc(_require(doc, "params", "contribution"), "contribution.params"),
        "feature_maps": tuple(int(f) for f in _require(doc, "feature_maps", "contribution")),
        "layers": tuple(int(l) for l in _require(doc, "layers", "contribution")),
        "values": tuple(float(v) for v in _require(doc, "values", "contribution")),
        "losses": tuple(float(v) for v in _require(doc, "losses", "contribution")),
        "mask": None,
    }
    if len(out["values"]) != len(out["feature_maps"]):
        raise ParseError("one value per feature map required", "contribution.values")
    if "mask" in doc:
        out["mask"] = mask_from_rle(doc["mask"], "contribution.mask")
    return out


# -- analytics ----------------------------------------------------------------

def pattern_report_doc(report: PatternReport) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "diff_series": [float(v) for v in report.diff_series],
        "n_l": int(report.n_l),
        "r": int(report.r),
        "detected": bool(report.detected),
        "max_layer": int(report.max_layer),
    }


def pattern_report_from_doc(doc) -> PatternReport:
    _check_version(doc, "pattern_report")
    return PatternReport(
        diff_series=tuple(float(v) for v in _require(doc, "diff_series", "pattern_report")),
        n_l=int(_require(doc, "n_l", "pattern_report")),
        r=int(_require(doc, "r", "pattern_report")),
        detected=bool(_require(doc, "detected", "pattern_report")),
        max_layer=int(_require(doc, "max_layer", "pattern_report")),
    )


def score_report_doc(rows) -> dict:
    """Rows of (method, k, score), one per top-K column per method."""
    out = []
    for method, k, score in rows:
        out.append({"method": str(method), "k": int(k), "score": float(score)})
    return {"version": SCHEMA_VERSION, "rows": out}


def render_score_table(doc) -> str:
    """Fixed-width text table, methods as rows and top-K columns."""
    rows = doc["rows"]
    ks = sorted({r["k"] for r in rows})
    methods = list(dict.fromkeys(r["method"] for r in rows))
    cells = {(r["method"], r["k"]): r["score"] for r in rows}
    name_w = max([len(m) for m in methods] + [len("method")])
    header = "method".ljust(name_w) + "".join(f"  top-{k:<4d}" for k in ks)
    lines = [header, "-" * len(header)]
    for m in methods:
        line = m.ljust(name_w)
        for k in ks:
            v = cells.get((m, k))
            line += "  " + ("   --   " if v is None else f"{v:7.3f} ")
        lines.append(line.rstrip())
    return "\n".join(lines)


# -- layouts ------------------------------------------------------------------

def _rect_doc(rect: Rect) -> dict:
    return {"x": rect.x, "y": rect.y, "w": rect.w, "h": rect.h}


def _rect_from_doc(doc, path: str) -> Rect:
    return Rect(*(float(_require(doc, f, path)) for f in ("x", "y", "w", "h")))


def river_layout_doc(layout: RiverLayout) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "source": [[float(x), float(y)] for x, y in layout.source],
        "adversarial": [[float(x), float(y)] for x, y in layout.adversarial],
        "target": [[float(x), float(y)] for x, y in layout.target],
    }


def treemap_layout_doc(layout: TreemapLayout) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "canvas": _rect_doc(layout.canvas),
        "cells": [
            {"sets": sorted(sig), "rect": _rect_doc(rect)}
            for sig, rect in layout.cells
        ],
        "set_rects": [
            {"set": set_id, "rect": _rect_doc(rect)} for set_id, rect in layout.set_rects
        ],
        "parents": [
            {"region": sorted(sig), "parent": parent} for sig, parent in layout.parents
        ],
    }


def treemap_layout_from_doc(doc) -> TreemapLayout:
    _check_version(doc, "treemap")
    cells = tuple(
        (frozenset(rec["sets"]), _rect_from_doc(rec["rect"], f"treemap.cells[{i}]"))
        for i, rec in enumerate(_require(doc, "cells", "treemap"))
    )
    set_rects = tuple(
        (rec["set"], _rect_from_doc(rec["rect"], f"treemap.set_rects[{i}]"))
        for i, rec in enumerate(doc.get("set_rects", []))
    )
    parents = tuple((frozenset(rec["region"]), rec["parent"]) for rec in doc.get("parents", []))
    return TreemapLayout(
        cells=cells,
        canvas=_rect_from_doc(_require(doc, "canvas", "treemap"), "treemap.canvas"),
        set_rects=set_rects,
        parents=parents,
    )


def model_id_for(model_doc: dict) -> str:
    return content_id(model_doc)


def example_id_for(x) -> str:
    return content_id(image_doc(x))


def validate_labels(ds: LabeledDataset, class_count: int) -> None:
    if ds.labels.min(initial=0) < 0 or ds.labels.max(initial=-1) >= class_count:
        raise ValidationError(f"labels must lie in [0, {class_count})", "labels")
