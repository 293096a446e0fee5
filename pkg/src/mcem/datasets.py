"""CSV readers and writers for the two dataset layouts.

Grouped responses use the header ``bull,rate``; binary panels use
``group,x,y``. One row per observation, groups in order of first
appearance.
"""

import csv
import os

from .diagnostics import format_float
from .glmm import PanelDataset
from .lmm import GroupedDataset

LMM_HEADER = ["bull", "rate"]
GLMM_HEADER = ["group", "x", "y"]


def _read_rows(path, header):
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise OSError(f"cannot read dataset {os.fspath(path)!r}: {exc}") from exc
    if not rows or [c.strip() for c in rows[0]] != header:
        raise ValueError(f"{os.fspath(path)!r}: expected header {','.join(header)}")
    body = [r for r in rows[1:] if r and any(c.strip() for c in r)]
    for lineno, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise ValueError(f"{os.fspath(path)!r} line {lineno}: expected {len(header)} fields")
    return body


def _group_order(keys):
    order = {}
    for k in keys:
        order.setdefault(k, len(order))
    return order


def read_grouped_csv(path):
    rows = _read_rows(path, LMM_HEADER)
    order = _group_order(r[0].strip() for r in rows)
    groups = [[] for _ in order]
    for r in rows:
        groups[order[r[0].strip()]].append(float(r[1]))
    return GroupedDataset(groups, list(order))


def write_grouped_csv(data, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(LMM_HEADER) + "\n")
        for label, g in zip(data.labels, data.groups):
            for v in g:
                fh.write(f"{label},{format_float(v)}\n")


def read_panel_csv(path):
    rows = _read_rows(path, GLMM_HEADER)
    order = _group_order(r[0].strip() for r in rows)
    xs = [[] for _ in order]
    ys = [[] for _ in order]
    for r in rows:
        k = order[r[0].strip()]
        xs[k].append(float(r[1]))
        ys[k].append(float(r[2]))
    return PanelDataset(xs, ys, list(order))


def write_panel_csv(data, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(GLMM_HEADER) + "\n")
        for label, (x, y) in zip(data.labels, data.groups()):
            for xv, yv in zip(x, y):
                fh.write(f"{label},{format_float(xv)},{int(yv)}\n")
