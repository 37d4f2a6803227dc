"""File formats: XYZ / ascii-PLY clouds, label files, segmentation JSON, CSV.

Every writer goes through a temp-file-and-rename so a failure never leaves
a partial output behind.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from .bspline import BSplinePatch
from .cloud import PointCloud
from .metrics import Segmentation
from .primitives import PARAM_DIM, PrimitiveType


def atomic_write_text(path, text: str) -> None:
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_xyz(path) -> PointCloud:
    """Whitespace table of x y z [nx ny nz]; '#' starts a comment."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            parts = body.split()
            if len(parts) not in (3, 6):
                raise ValueError(f"line {lineno}: expected 3 or 6 columns, got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise ValueError(f"line {lineno}: non-numeric value") from None
    if not rows:
        raise ValueError("no points in file")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValueError("mixed 3- and 6-column rows")
    arr = np.asarray(rows, dtype=np.float64)
    if arr.shape[1] == 3:
        return PointCloud(arr)
    return PointCloud(arr[:, :3], arr[:, 3:])


def write_xyz(path, cloud: PointCloud) -> None:
    cols = (
        np.concatenate([cloud.positions, cloud.normals], axis=1)
        if cloud.normals is not None
        else cloud.positions
    )
    lines = [" ".join(f"{v:.17g}" for v in row) for row in cols]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_ply(path) -> PointCloud:
    """Minimal ascii PLY reader: vertex positions plus optional normals."""
    with open(path, encoding="utf-8") as fh:
        if fh.readline().strip() != "ply":
            raise ValueError("not a ply file")
        fmt = fh.readline().split()
        if len(fmt) < 2 or fmt[0] != "format" or fmt[1] != "ascii":
            raise ValueError("only ascii ply is supported")
        n = None
        props = []
        in_vertex = False
        for line in fh:
            parts = line.split()
            if not parts or parts[0] == "comment":
                continue
            if parts[0] == "element":
                in_vertex = parts[1] == "vertex"
                if in_vertex:
                    n = int(parts[2])
            elif parts[0] == "property" and in_vertex:
                props.append(parts[-1])
            elif parts[0] == "end_header":
                break
        else:
            raise ValueError("missing end_header")
        if n is None:
            raise ValueError("no vertex element")
        needed = {"x", "y", "z"}
        if not needed <= set(props):
            raise ValueError("vertex element lacks x/y/z properties")
        has_normals = {"nx", "ny", "nz"} <= set(props)
        data = np.empty((n, len(props)))
        for i in range(n):
            line = fh.readline()
            if not line:
                raise ValueError(f"vertex {i}: unexpected end of file")
            vals = line.split()
            if len(vals) != len(props):
                raise ValueError(f"vertex {i}: expected {len(props)} values")
            data[i] = [float(v) for v in vals]
    cols = {p: data[:, j] for j, p in enumerate(props)}
    pos = np.stack([cols["x"], cols["y"], cols["z"]], axis=1)
    if has_normals:
        return PointCloud(pos, np.stack([cols["nx"], cols["ny"], cols["nz"]], axis=1))
    return PointCloud(pos)


def read_cloud(path) -> PointCloud:
    ext = os.path.splitext(os.fspath(path))[1].lower()
    if ext == ".ply":
        return read_ply(path)
    if ext in (".xyz", ".txt", ""):
        return read_xyz(path)
    raise ValueError(f"unsupported cloud format {ext!r}")


def read_labels(path) -> np.ndarray:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            body = line.strip()
            if not body:
                continue
            try:
                out.append(int(body))
            except ValueError:
                raise ValueError(f"line {lineno}: not an integer label") from None
    return np.asarray(out, dtype=np.intp)


def write_labels(path, labels) -> None:
    atomic_write_text(path, "\n".join(str(int(v)) for v in labels) + "\n")


def segmentation_to_dict(seg: Segmentation, rms=None, extra: dict | None = None) -> dict:
    """JSON-able dict; rms is an optional per-segment residual list."""
    segments = []
    for k in range(seg.K):
        entry = {
            "id": k,
            "type": seg.segment_types[k].label,
            "params": None
            if seg.segment_params[k] is None
            else [float(v) for v in seg.segment_params[k]],
            "size": int(np.count_nonzero(seg.labels == k)),
            "rms_residual": None if rms is None or rms[k] is None else float(rms[k]),
        }
        patch = seg.patches[k]
        if patch is not None:
            entry["patch"] = {
                "control_points": patch.control_points.tolist(),
                "closed_u": bool(patch.closed_u),
            }
        segments.append(entry)
    doc = {"n": seg.n, "labels": [int(v) for v in seg.labels], "segments": segments}
    if extra:
        doc.update(extra)
    return doc


def segmentation_from_dict(doc: dict) -> tuple[Segmentation, list]:
    try:
        labels = np.asarray(doc["labels"], dtype=np.intp)
        segments = doc["segments"]
        n = int(doc["n"])
    except KeyError as exc:
        raise ValueError(f"segmentation JSON missing field {exc}") from exc
    if labels.shape[0] != n:
        raise ValueError(f"label count {labels.shape[0]} does not match n={n}")
    order = sorted(segments, key=lambda s: s["id"])
    if [s["id"] for s in order] != list(range(len(order))):
        raise ValueError("segment ids must be 0..K-1")
    types, params, patches, rms = [], [], [], []
    for s in order:
        types.append(PrimitiveType.from_label(s["type"]))
        p = s.get("params")
        if p is not None and len(p) != PARAM_DIM:
            raise ValueError(f"segment {s['id']}: params must have length {PARAM_DIM}")
        params.append(None if p is None else np.asarray(p, dtype=np.float64))
        patch = s.get("patch")
        patches.append(
            None
            if patch is None
            else BSplinePatch(
                np.asarray(patch["control_points"], dtype=np.float64),
                closed_u=bool(patch.get("closed_u", False)),
            )
        )
        rms.append(s.get("rms_residual"))
    return Segmentation(labels, types, params, patches), rms


def write_segmentation(path, seg: Segmentation, rms=None, extra: dict | None = None) -> None:
    atomic_write_text(path, json.dumps(segmentation_to_dict(seg, rms, extra), indent=2) + "\n")


def read_segmentation(path) -> tuple[Segmentation, list, dict]:
    """Returns (segmentation, rms list, full document) for extra-field access."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    seg, rms = segmentation_from_dict(doc)
    return seg, rms, doc


def write_csv(path, header: list, rows: list) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_csv_cell(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def _csv_cell(v) -> str:
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)
