"""Readers for the delimited and mesh formats the main tool writes.

Deliberately self-contained: this package consumes files, not the library
that produced them.  Every parse failure names the file and line.
"""

from __future__ import annotations

import csv

import numpy as np


class ParseError(ValueError):
    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")


def read_csv_columns(path, required: list[str]) -> dict[str, np.ndarray]:
    """CSV with a header row; leading '#' comment lines are skipped."""
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    start = 0
    while start < len(lines) and lines[start].startswith("#"):
        start += 1
    if start >= len(lines):
        raise ParseError(path, start + 1, "missing header row")
    reader = csv.reader(lines[start:])
    header = next(reader)
    for col in required:
        if col not in header:
            raise ParseError(path, start + 1,
                             f"missing column {col!r} (have {header})")
    columns: dict[str, list[float]] = {col: [] for col in header}
    for rel, row in enumerate(reader):
        if len(row) != len(header):
            raise ParseError(path, start + 2 + rel,
                             f"expected {len(header)} fields, got {len(row)}")
        for col, value in zip(header, row):
            try:
                columns[col].append(float(value))
            except ValueError as exc:
                raise ParseError(path, start + 2 + rel,
                                 f"bad number {value!r} in {col!r}") from exc
    return {col: np.asarray(vals) for col, vals in columns.items()}


def read_ply(path) -> np.ndarray:
    """ASCII PLY vertices as (n, 3); extra per-vertex columns are ignored."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "ply":
        raise ParseError(path, 1, "missing 'ply' magic")
    count = None
    n_props = 0
    body_start = None
    for no, line in enumerate(lines[1:], start=2):
        tok = line.split()
        if not tok or tok[0] == "comment":
            continue
        if tok[0] == "format" and tok[1] != "ascii":
            raise ParseError(path, no, f"unsupported format {tok[1]!r}")
        if tok[0] == "element":
            if tok[1] != "vertex":
                raise ParseError(path, no, f"unsupported element {tok[1]!r}")
            count = int(tok[2])
        elif tok[0] == "property":
            n_props += 1
        elif tok[0] == "end_header":
            body_start = no
            break
    if count is None or body_start is None:
        raise ParseError(path, len(lines), "header ended before end_header")
    if n_props < 3:
        raise ParseError(path, body_start, "fewer than 3 vertex properties")
    body = lines[body_start:body_start + count]
    if len(body) < count:
        raise ParseError(path, len(lines),
                         f"expected {count} vertices, found {len(body)}")
    pts = np.empty((count, 3))
    for i, line in enumerate(body):
        tok = line.split()
        if len(tok) < 3:
            raise ParseError(path, body_start + 1 + i,
                             f"expected at least 3 values, got {len(tok)}")
        try:
            pts[i] = [float(tok[0]), float(tok[1]), float(tok[2])]
        except ValueError as exc:
            raise ParseError(path, body_start + 1 + i,
                             f"bad coordinate in {line!r}") from exc
    return pts


def read_obj(path) -> tuple[np.ndarray, list[list[int]]]:
    """OBJ v/f records -> (vertices, zero-based faces)."""
    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path) as fh:
        for no, line in enumerate(fh, start=1):
            tok = line.split()
            if not tok or tok[0].startswith("#"):
                continue
            if tok[0] == "v":
                if len(tok) < 4:
                    raise ParseError(path, no, f"short vertex line {line!r}")
                try:
                    vertices.append([float(v) for v in tok[1:4]])
                except ValueError as exc:
                    raise ParseError(path, no, "bad vertex coordinate") from exc
            elif tok[0] == "f":
                try:
                    idx = [int(v.split("/")[0]) - 1 for v in tok[1:]]
                except ValueError as exc:
                    raise ParseError(path, no, "bad face index") from exc
                if any(i < 0 for i in idx):
                    raise ParseError(path, no, "face index below 1")
                faces.append(idx)
    verts = np.asarray(vertices).reshape(-1, 3)
    for face in faces:
        if any(i >= verts.shape[0] for i in face):
            raise ParseError(path, 0, "face references a missing vertex")
    return verts, faces
