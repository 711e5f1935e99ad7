"""File formats: dataset CSV, component-set JSON and binary PPM images."""

from __future__ import annotations

import csv
import json
import re
from pathlib import Path

import numpy as np

from .errors import InvalidArgument
from .models import ComponentSet, Dataset


def _float_text(x: float) -> str:
    # repr round-trips every double exactly
    return repr(float(x))


def write_dataset_csv(dataset: Dataset, path) -> None:
    d = dataset.dim
    header = [f"x{j + 1}" for j in range(d)]
    if dataset.labels is not None:
        header.append("label")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(dataset.n):
            row = [_float_text(v) for v in dataset.points[i]]
            if dataset.labels is not None:
                row.append(str(int(dataset.labels[i])))
            w.writerow(row)


def read_dataset_csv(path) -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InvalidArgument(f"{path}: empty CSV")
    header = [h.strip() for h in rows[0]]
    has_label = bool(header) and header[-1] == "label"
    xcols = header[:-1] if has_label else header
    if not xcols or xcols != [f"x{j + 1}" for j in range(len(xcols))]:
        raise InvalidArgument(f"{path}: header must be x1,...,xd[,label]")
    body = [r for r in rows[1:] if r]
    if not body:
        raise InvalidArgument(f"{path}: no data rows")
    try:
        data = np.array([[float(v) for v in r] for r in body], dtype=float)
    except ValueError as exc:
        raise InvalidArgument(f"{path}: non-numeric entry") from exc
    if data.ndim != 2 or data.shape[1] != len(header):
        raise InvalidArgument(f"{path}: rows must have {len(header)} fields")
    if has_label:
        lab = data[:, -1]
        if np.any(lab != np.round(lab)):
            raise InvalidArgument(f"{path}: labels must be integers")
        return Dataset(data[:, :-1], lab.astype(np.int64))
    return Dataset(data)


def component_set_to_dict(cset: ComponentSet) -> dict:
    return {
        "dimension": cset.dimension,
        "components": [{"mean": m.tolist(), "cov": c.tolist()} for m, c in zip(cset.means, cset.covs)],
        "provenance": cset.provenance,
    }


def component_set_from_dict(doc: dict) -> ComponentSet:
    try:
        d = int(doc["dimension"])
        comps = doc["components"]
        means = np.array([c["mean"] for c in comps], dtype=float)
        covs = np.array([c["cov"] for c in comps], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidArgument(f"malformed component set document: {exc}") from exc
    if means.ndim != 2 or means.shape[0] < 1 or means.shape[1] != d or covs.shape != (means.shape[0], d, d):
        raise InvalidArgument("component means/covariances do not match the declared dimension")
    return ComponentSet(means, covs, doc.get("provenance") or {"kind": "explicit"})


def write_component_set(cset: ComponentSet, path) -> None:
    Path(path).write_text(json.dumps(component_set_to_dict(cset)), encoding="utf-8")


def read_component_set(path) -> ComponentSet:
    return component_set_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# binary PPM (P6), 8-bit

_PPM_HEADER = re.compile(rb"P6\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")


def read_ppm(path) -> np.ndarray:
    """H x W x 3 uint8 array from a binary P6 file with maxval 255."""
    data = Path(path).read_bytes()
    m = _PPM_HEADER.match(data)
    if m is None:
        raise InvalidArgument(f"{path}: not a binary P6 PPM")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise InvalidArgument(f"{path}: only 8-bit PPM (maxval 255) is supported")
    body = data[m.end():]
    if len(body) < w * h * 3 or w < 1 or h < 1:
        raise InvalidArgument(f"{path}: truncated pixel data")
    return np.frombuffer(body[: w * h * 3], dtype=np.uint8).reshape(h, w, 3).copy()


def write_ppm(image, path) -> None:
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise InvalidArgument("PPM output needs an H x W x 3 uint8 array")
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())
