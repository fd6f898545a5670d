"""Point cloud and run-report file formats.

Supported cloud formats:

* ``.xyz`` ASCII, whitespace separated, 3 floats (position) or 6 floats
  (position + normal) per row.
* ``.ply`` with ``format ascii 1.0`` or ``format binary_little_endian 1.0``.
  Only the ``vertex`` element is read; ``x y z`` are required and
  ``nx ny nz`` are optional.

Reports are JSON objects with a fixed key order (see ``REPORT_KEYS``).
"""

import json
import math
from pathlib import Path

import numpy as np

from .cloud import PointCloud

PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


class CloudFormatError(ValueError):
    """Raised for unreadable cloud files. ``row`` is 1-based when known."""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class UnsupportedFormatError(CloudFormatError):
    pass


# --------------------------------------------------------------------------
# Parsing
# --------------------------------------------------------------------------

def parse_cloud(path) -> PointCloud:
    """Read an XYZ or PLY file.

    Normals, when present, are renormalized to unit length and every point is
    flagged as carrying a given normal.
    """
    path = Path(path)
    with open(path, "rb") as f:
        head = f.read(4)
    if head.startswith(b"ply"):
        positions, normals, colors = _parse_ply(path)
    elif path.suffix.lower() in (".xyz", ".txt", ".pts", ""):
        positions, normals = _parse_xyz(path)
        colors = None
    else:
        raise UnsupportedFormatError(f"cannot identify format of {path}")

    if len(positions) < 1:
        raise CloudFormatError("cloud contains no points")
    _check_finite(positions, "coordinate")
    if normals is not None:
        _check_finite(normals, "normal component")
        lengths = np.linalg.norm(normals, axis=1)
        bad = np.flatnonzero(lengths == 0)
        if len(bad):
            raise CloudFormatError("zero-length normal", row=int(bad[0]) + 1)
        normals = normals / lengths[:, None]
    return PointCloud(positions, normals, colors=colors)


def _check_finite(a, what):
    bad = np.flatnonzero(~np.isfinite(a).all(axis=1))
    if len(bad):
        raise CloudFormatError(f"non-finite {what}", row=int(bad[0]) + 1)


def _parse_xyz(path):
    rows = []
    width = None
    with open(path, "r") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) not in (3, 6):
                raise CloudFormatError(
                    f"expected 3 or 6 values, got {len(parts)}", row=lineno)
            if width is None:
                width = len(parts)
            elif len(parts) != width:
                raise CloudFormatError("inconsistent column count", row=lineno)
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise CloudFormatError("unparsable number", row=lineno) from None
    data = np.array(rows, dtype=np.float64).reshape(-1, width or 3)
    normals = data[:, 3:6].copy() if width == 6 else None
    return data[:, :3].copy(), normals


def _read_ply_header(f):
    first = f.readline().strip()
    if first != b"ply":
        raise UnsupportedFormatError("missing 'ply' magic")
    fmt = None
    elements = []  # [name, count, [(prop, dtype)] or None for list props]
    while True:
        raw = f.readline()
        if not raw:
            raise CloudFormatError("unterminated PLY header")
        tokens = raw.decode("ascii", "replace").split()
        if not tokens or tokens[0] in ("comment", "obj_info"):
            continue
        key = tokens[0]
        if key == "end_header":
            break
        if key == "format":
            fmt = tokens[1]
        elif key == "element":
            elements.append([tokens[1], int(tokens[2]), []])
        elif key == "property":
            if not elements:
                raise CloudFormatError("property before element")
            if tokens[1] == "list":
                elements[-1][2].append((tokens[-1], "list", tokens[2], tokens[3]))
            else:
                if tokens[1] not in PLY_TYPES:
                    raise UnsupportedFormatError(f"unknown PLY type {tokens[1]}")
                elements[-1][2].append((tokens[2], PLY_TYPES[tokens[1]]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise UnsupportedFormatError(f"unsupported PLY format {fmt!r}")
    return fmt, elements


def _parse_ply(path):
    with open(path, "rb") as f:
        fmt, elements = _read_ply_header(f)
        names = [e[0] for e in elements]
        if "vertex" not in names:
            raise CloudFormatError("PLY has no vertex element")
        vi = names.index("vertex")
        count, props = elements[vi][1], elements[vi][2]
        if any(p[1] == "list" for p in props):
            raise UnsupportedFormatError("list properties on vertex element")
        prop_names = [p[0] for p in props]
        for axis in "xyz":
            if axis not in prop_names:
                raise CloudFormatError(f"vertex element lacks '{axis}'")

        if fmt == "ascii":
            # skip rows of elements declared before the vertices
            for e in elements[:vi]:
                for _ in range(e[1]):
                    f.readline()
            table = np.empty((count, len(props)), dtype=np.float64)
            for i in range(count):
                line = f.readline()
                row = i + 1
                if not line:
                    raise CloudFormatError(
                        f"expected {count} vertex rows, file ended", row=row)
                parts = line.split()
                if len(parts) != len(props):
                    raise CloudFormatError(
                        f"expected {len(props)} values, got {len(parts)}", row=row)
                try:
                    table[i] = [float(p) for p in parts]
                except ValueError:
                    raise CloudFormatError("unparsable number", row=row) from None
            col = {name: table[:, j] for j, name in enumerate(prop_names)}
        else:
            for e in elements[:vi]:
                if any(p[1] == "list" for p in e[2]):
                    raise UnsupportedFormatError(
                        "list-valued element stored before vertices")
                dt = np.dtype([(p[0], "<" + p[1]) for p in e[2]])
                f.seek(dt.itemsize * e[1], 1)
            dt = np.dtype([(p[0], "<" + p[1]) for p in props])
            buf = f.read(dt.itemsize * count)
            got = len(buf) // dt.itemsize
            if got < count:
                raise CloudFormatError(
                    f"expected {count} vertex records, file ended", row=got + 1)
            rec = np.frombuffer(buf, dtype=dt, count=count)
            col = {name: rec[name].astype(np.float64) for name in prop_names}

    positions = np.column_stack([col["x"], col["y"], col["z"]])
    normals = None
    if all(k in col for k in ("nx", "ny", "nz")):
        normals = np.column_stack([col["nx"], col["ny"], col["nz"]])
    colors = None
    if all(k in col for k in ("red", "green", "blue")):
        colors = np.column_stack([col["red"], col["green"], col["blue"]]).astype(np.uint8)
    return positions, normals, colors


def read_confidence_file(path, n: int) -> np.ndarray:
    """Sidecar of per-point confidences: one real in [0, 1] per line."""
    values = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            s = line.strip()
            if not s:
                continue
            try:
                v = float(s)
            except ValueError:
                raise CloudFormatError("unparsable confidence", row=lineno) from None
            if not (0.0 <= v <= 1.0):
                raise CloudFormatError(f"confidence {v} outside [0, 1]", row=lineno)
            values.append(v)
    if len(values) != n:
        raise CloudFormatError(f"confidence file has {len(values)} values, cloud has {n}")
    return np.array(values)


# --------------------------------------------------------------------------
# Writing
# --------------------------------------------------------------------------

GRAY = (128, 128, 128)
RED = (255, 0, 0)


def error_colors(cloud: PointCloud, truth: PointCloud) -> np.ndarray:
    """Gray for correctly oriented points, red otherwise (sign resolved)."""
    from .evaluation import correctness_mask

    if len(truth) != len(cloud):
        raise ValueError(f"colorize size mismatch: {len(cloud)} vs {len(truth)}")
    ok = correctness_mask(cloud.normals, truth.normals)
    colors = np.empty((len(cloud), 3), dtype=np.uint8)
    colors[ok] = GRAY
    colors[~ok] = RED
    return colors


def write_cloud(cloud: PointCloud, path, colorize: PointCloud | None = None,
                binary: bool = True):
    """Write a PLY with positions and normals (float64).

    With ``colorize`` set to a ground-truth cloud, per-point red/green/blue
    marks orientation errors.
    """
    if cloud.normals is None:
        raise ValueError("cloud has no normals to write")
    n = len(cloud)
    colors = error_colors(cloud, colorize) if colorize is not None else None
    fields = [(name, "<f8") for name in ("x", "y", "z", "nx", "ny", "nz")]
    if colors is not None:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    rec = np.empty(n, dtype=np.dtype(fields))
    for j, name in enumerate("xyz"):
        rec[name] = cloud.positions[:, j]
        rec["n" + name] = cloud.normals[:, j]
    if colors is not None:
        for j, name in enumerate(("red", "green", "blue")):
            rec[name] = colors[:, j]

    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
              f"element vertex {n}"]
    header += [f"property double {name}" for name in ("x", "y", "z", "nx", "ny", "nz")]
    if colors is not None:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            f.write(rec.tobytes())
        else:
            for r in rec:
                vals = [repr(float(r[k])) for k in ("x", "y", "z", "nx", "ny", "nz")]
                if colors is not None:
                    vals += [str(int(r[k])) for k in ("red", "green", "blue")]
                f.write((" ".join(vals) + "\n").encode("ascii"))


def write_xyz(cloud: PointCloud, path):
    data = cloud.positions if cloud.normals is None else np.hstack([cloud.positions, cloud.normals])
    np.savetxt(path, data, fmt="%.17g")


# --------------------------------------------------------------------------
# Reports
# --------------------------------------------------------------------------

REPORT_KEYS = (
    "parameters",
    "accuracy",
    "global_sign",
    "point_count",
    "patch_count",
    "planar_patch_count",
    "flips_in_coherence",
    "flips_in_propagation",
    "flips_in_diffusion",
    "clamped_pairs",
    "degenerate_normals",
    "low_confidence_points",
    "visit_order",
    "interactions",
    "flipped_patches",
    "wall_times",
)


def _clean(v):
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def write_report(report, path):
    """Serialize an :class:`~dipoleorient.evaluation.EvalReport` as JSON.

    Keys appear in ``REPORT_KEYS`` order; ``accuracy`` and ``global_sign`` are
    omitted when no ground truth was scored.
    """
    d = report.to_dict()
    out = {k: _clean(d[k]) for k in REPORT_KEYS if k in d and d[k] is not None}
    with open(path, "w") as f:
        json.dump(out, f, indent=2)
        f.write("\n")


def read_report(path):
    from .evaluation import EvalReport

    with open(path) as f:
        d = json.load(f)
    return EvalReport.from_dict(d)


def write_trace_tsv(trace, path):
    """Visit order as tab-delimited rows: step, patch, interaction, flipped."""
    with open(path, "w") as f:
        f.write("step\tpatch\tinteraction\tflipped\n")
        for step, e in enumerate(trace.entries):
            f.write(f"{step}\t{e.patch_id}\t{e.interaction!r}\t{int(e.flipped)}\n")
