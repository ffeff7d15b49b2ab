"""Readers and writers for the scene file formats.

Tables are comma-separated with a header row. Floats carry 6 significant
digits, raw camera timestamps 2 decimals and corrected or label timestamps 6
decimals (epoch-scale seconds would lose the sub-second part at 6 significant
digits). Transform files keep full precision so fitted parameters reload
bit-exactly. Every writer is a fixpoint of its reader: write, read, write gives
identical bytes.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .boxes import DIRECTIONS, Box3D, Detection
from .exceptions import ParseError, RoadTrackError, SchemaMismatch
from .geometry import CameraProjection, CameraTransform, Correspondence, CurveOffset, Homography, ImagePoint, RoadPoint

LABEL_COLUMNS = (
    "frame_index", "timestamp", "vehicle_id", "vehicle_class", "x", "y", "length", "width", "height", "direction",
    "camera",
)
DETECTION_COLUMNS = LABEL_COLUMNS + ("confidence",)
CORNER_COLUMNS = tuple(f"{a}{k}" for k in range(8) for a in ("u", "v"))
RESAMPLED_COLUMNS = LABEL_COLUMNS + CORNER_COLUMNS
TIMESTAMP_COLUMNS = ("frame_index", "camera", "timestamp", "corrected_timestamp")
POINT_COLUMNS = ("kind", "group", "u", "v", "x", "y", "z")
POINT_KINDS = ("tick", "above", "lane", "vertical")
NO_SOURCE = -1  # vehicle id written for detections with no ground-truth source


def fmt(v: float) -> str:
    return format(float(v), ".6g")


def fmt_raw_time(v: float) -> str:
    return format(float(v), ".2f")


def fmt_time(v: float) -> str:
    return format(float(v), ".6f")


# ---- row types --------------------------------------------------------------


@dataclass(frozen=True)
class LabelRow:
    frame_index: int
    timestamp: float
    vehicle_id: int
    vehicle_class: str
    x: float
    y: float
    length: float
    width: float
    height: float
    direction: str
    camera: str

    @property
    def box(self) -> Box3D:
        return Box3D(self.x, self.y, self.length, self.width, self.height, self.direction, self.vehicle_class)

    @classmethod
    def from_box(cls, frame_index: int, timestamp: float, vehicle_id: int, box: Box3D, camera: str, **extra):
        return cls(frame_index, timestamp, vehicle_id, box.cls, box.x, box.y, box.l, box.w, box.h, box.direction,
                   camera, **extra)

    def _cells(self) -> list[str]:
        return [
            str(self.frame_index), fmt_time(self.timestamp), str(self.vehicle_id), self.vehicle_class, fmt(self.x),
            fmt(self.y), fmt(self.length), fmt(self.width), fmt(self.height), self.direction, self.camera,
        ]


@dataclass(frozen=True)
class DetectionRow(LabelRow):
    confidence: float = 1.0

    def _cells(self) -> list[str]:
        return super()._cells() + [fmt(self.confidence)]

    def detection(self, t: float | None = None) -> Detection:
        source = None if self.vehicle_id == NO_SOURCE else self.vehicle_id
        return Detection(self.box, self.confidence, self.camera, self.timestamp if t is None else t, source)


@dataclass(frozen=True)
class ResampledRow(LabelRow):
    corners: tuple[float, ...] = (0.0,) * 16  # u0, v0, ..., u7, v7

    def _cells(self) -> list[str]:
        return super()._cells() + [fmt(v) for v in self.corners]


@dataclass(frozen=True)
class TimestampRow:
    frame_index: int
    camera: str
    timestamp: float
    corrected_timestamp: float

    def _cells(self) -> list[str]:
        return [str(self.frame_index), self.camera, fmt_raw_time(self.timestamp), fmt_time(self.corrected_timestamp)]


@dataclass(frozen=True)
class PointRow:
    """One calibration point.

    ``tick``: lane-tick pixel with its road-plane position (z = 0).
    ``above``: pixel of a point above the road with its roadway position.
    ``lane``: pixel on the solid lane line; ``y`` holds the line's nominal
    lateral position, ``x`` and ``z`` are unused (0).
    ``vertical``: two rows sharing ``group`` give the image segment of one
    vertical edge, bottom first; road columns are unused (0).
    """

    kind: str
    group: int
    u: float
    v: float
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def _cells(self) -> list[str]:
        return [self.kind, str(self.group), fmt(self.u), fmt(self.v), fmt(self.x), fmt(self.y), fmt(self.z)]


# ---- generic table machinery ------------------------------------------------


def _write_table(path, header: Sequence[str], rows: Iterable) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(r._cells())
    Path(path).write_text(buf.getvalue())


def _read_table(path, header: Sequence[str], parse_row, allow_empty: bool = False) -> list:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ParseError(f"cannot read file: {e}", path) from e
    lines = list(csv.reader(io.StringIO(text)))
    if not lines:
        if allow_empty:
            return []
        raise SchemaMismatch("missing header row", path, 1)
    if tuple(c.strip() for c in lines[0]) != tuple(header):
        raise SchemaMismatch(f"expected header {','.join(header)}", path, 1)
    out = []
    for n, cells in enumerate(lines[1:], start=2):
        if not cells:
            continue
        if len(cells) != len(header):
            raise ParseError(f"expected {len(header)} columns, got {len(cells)}", path, n)
        try:
            out.append(parse_row(cells))
        except (ValueError, TypeError) as e:
            raise ParseError(str(e), path, n) from e
    return out


def _int(s: str) -> int:
    return int(s)


def _float(s: str) -> float:
    v = float(s)
    if not np.isfinite(v):
        raise ValueError(f"non-finite value {s!r}")
    return v


def _direction(s: str) -> str:
    if s not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}, got {s!r}")
    return s


def _text(s: str) -> str:
    if not s:
        raise ValueError("empty text field")
    return s


def _label_values(c: Sequence[str]) -> list:
    return [
        _int(c[0]), _float(c[1]), _int(c[2]), _text(c[3]), _float(c[4]), _float(c[5]), _float(c[6]), _float(c[7]),
        _float(c[8]), _direction(c[9]), _text(c[10]),
    ]


# ---- public readers / writers ----------------------------------------------


def write_labels(path, rows: Iterable[LabelRow]) -> None:
    _write_table(path, LABEL_COLUMNS, rows)


def _checked(row):
    row.box  # dimension and direction validation
    return row


def read_labels(path) -> list[LabelRow]:
    return _read_table(path, LABEL_COLUMNS, lambda c: _checked(LabelRow(*_label_values(c))))


def write_detections(path, rows: Iterable[DetectionRow]) -> None:
    _write_table(path, DETECTION_COLUMNS, rows)


def read_detections(path) -> list[DetectionRow]:
    return _read_table(path, DETECTION_COLUMNS, lambda c: _checked(DetectionRow(*_label_values(c), _float(c[11]))))


def write_resampled(path, rows: Iterable[ResampledRow]) -> None:
    _write_table(path, RESAMPLED_COLUMNS, rows)


def read_resampled(path) -> list[ResampledRow]:
    n = len(LABEL_COLUMNS)
    return _read_table(
        path, RESAMPLED_COLUMNS, lambda c: _checked(ResampledRow(*_label_values(c), tuple(_float(v) for v in c[n:])))
    )


def write_timestamps(path, rows: Iterable[TimestampRow]) -> None:
    _write_table(path, TIMESTAMP_COLUMNS, rows)


def read_timestamps(path) -> list[TimestampRow]:
    return _read_table(
        path, TIMESTAMP_COLUMNS, lambda c: TimestampRow(_int(c[0]), _text(c[1]), _float(c[2]), _float(c[3]))
    )


def _point_kind(s: str) -> str:
    if s not in POINT_KINDS:
        raise ValueError(f"point kind must be one of {POINT_KINDS}, got {s!r}")
    return s


def write_points(path, rows: Iterable[PointRow]) -> None:
    _write_table(path, POINT_COLUMNS, rows)


def read_points(path) -> list[PointRow]:
    """Calibration points; an entirely empty file reads as no points."""
    return _read_table(
        path, POINT_COLUMNS,
        lambda c: PointRow(_point_kind(c[0]), _int(c[1]), *(_float(v) for v in c[2:])),
        allow_empty=True,
    )


# ---- transforms --------------------------------------------------------------


def _numbers_line(values) -> str:
    return ",".join(repr(float(v)) for v in values)


def _parse_numbers(line: str, n: int, path, lineno: int) -> list[float]:
    cells = [c.strip() for c in line.strip().strip("[]").split(",")]
    if len(cells) != n:
        raise ParseError(f"expected {n} values, got {len(cells)}", path, lineno)
    try:
        return [_float(c) for c in cells]
    except ValueError as e:
        raise ParseError(str(e), path, lineno) from e


def write_homography(path, h: Homography, p: CameraProjection) -> None:
    """Two lines: the 9 image-to-road homography entries, then the 12 projection entries."""
    Path(path).write_text(_numbers_line(h.matrix.ravel()) + "\n" + _numbers_line(p.matrix.ravel()) + "\n")


def read_homography(path) -> tuple[Homography, CameraProjection]:
    path = Path(path)
    lines = [ln for ln in path.read_text().splitlines()]
    body = [(i, ln) for i, ln in enumerate(lines, start=1) if ln.strip()]
    if len(body) != 2:
        raise ParseError(f"expected 2 parameter lines, got {len(body)}", path, body[2][0] if len(body) > 2 else None)
    h = np.array(_parse_numbers(body[0][1], 9, path, body[0][0])).reshape(3, 3)
    p = np.array(_parse_numbers(body[1][1], 12, path, body[1][0])).reshape(3, 4)
    try:
        hom = Homography(h)
    except RoadTrackError as e:
        raise ParseError(str(e), path, body[0][0]) from e
    return hom, CameraProjection(p)


def write_curve(path, curve: CurveOffset) -> None:
    """One line holding the three coefficients, highest degree first."""
    Path(path).write_text(_numbers_line(curve.coefficients) + "\n")


def read_curve(path) -> CurveOffset:
    path = Path(path)
    body = [(i, ln) for i, ln in enumerate(path.read_text().splitlines(), start=1) if ln.strip()]
    if not body:
        raise ParseError("empty curve file", path, 1)
    c2, c1, c0 = _parse_numbers(body[0][1], 3, path, body[0][0])
    return CurveOffset(c0, c1, c2)


def transform_paths(directory, camera: str, direction: str) -> tuple[Path, Path]:
    d = Path(directory)
    return d / f"{camera}_{direction}_homography.csv", d / f"{camera}_{direction}_curve.csv"


def points_path(directory, camera: str, direction: str) -> Path:
    return Path(directory) / f"{camera}_{direction}_points.csv"


def write_transform(directory, tf: CameraTransform) -> None:
    hp, cp = transform_paths(directory, tf.camera, tf.direction)
    write_homography(hp, tf.homography, tf.projection)
    write_curve(cp, tf.curve)


def read_transforms(directory) -> dict[tuple[str, str], CameraTransform]:
    """All ``{camera}_{direction}`` transforms found in ``directory``."""
    out = {}
    for hp in sorted(Path(directory).glob("*_homography.csv")):
        stem = hp.name[: -len("_homography.csv")]
        camera, _, direction = stem.rpartition("_")
        if direction not in DIRECTIONS or not camera:
            raise ParseError("file name must be {camera}_{direction}_homography.csv", hp)
        h, p = read_homography(hp)
        cp = hp.with_name(f"{stem}_curve.csv")
        curve = read_curve(cp) if cp.exists() else CurveOffset()
        out[(camera, direction)] = CameraTransform(camera, direction, h, p, curve)
    return out


def calibration_points(rows: Sequence[PointRow]):
    """Split point rows into tick correspondences, vertical segments, above-plane pairs and lane pixels."""
    ticks = [Correspondence(ImagePoint(r.u, r.v), RoadPoint(r.x, r.y, r.z)) for r in rows if r.kind == "tick"]
    above = [(RoadPoint(r.x, r.y, r.z), ImagePoint(r.u, r.v)) for r in rows if r.kind == "above"]
    lane = [r for r in rows if r.kind == "lane"]
    groups: dict[int, list[PointRow]] = {}
    for r in rows:
        if r.kind == "vertical":
            groups.setdefault(r.group, []).append(r)
    segs = []
    for g in sorted(groups):
        pts = groups[g]
        if len(pts) != 2:
            raise ParseError(f"vertical group {g} has {len(pts)} points, expected 2")
        segs.append(((pts[0].u, pts[0].v), (pts[1].u, pts[1].v)))
    lane_y = lane[0].y if lane else 0.0
    return ticks, segs, above, [ImagePoint(r.u, r.v) for r in lane], lane_y


# ---- key = value configuration ------------------------------------------------


def read_config(path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; later keys override earlier ones."""
    path = Path(path)
    out = {}
    for n, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ParseError("expected key = value", path, n)
        out[key.strip()] = value.strip()
    return out


def write_config(path, values: dict) -> None:
    lines = [f"{k} = {_config_value(v)}" for k, v in values.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def _config_value(v) -> str:
    if isinstance(v, (tuple, list)):
        return ", ".join(_config_value(x) for x in v)
    if isinstance(v, dict):
        return ", ".join(f"{k}:{_config_value(x)}" for k, x in v.items())
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(value: str, default):
    if isinstance(default, bool):
        low = value.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"expected a boolean, got {value!r}")
        return low in ("true", "1", "yes")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, dict):
        out = {}
        for item in value.split(","):
            k, sep, x = item.partition(":")
            if not sep:
                raise ValueError(f"expected name:value pairs, got {item!r}")
            out[k.strip()] = float(x)
        return out
    if isinstance(default, tuple):
        parts = [p.strip() for p in value.split(",") if p.strip()]
        if default and all(isinstance(d, (int, float)) and not isinstance(d, bool) for d in default):
            return tuple(float(p) for p in parts)
        return tuple(parts)
    if default is None:
        if value.lower() == "none":
            return None
        parts = [p.strip() for p in value.split(",")]
        return tuple(float(p) for p in parts) if len(parts) > 1 else float(value)
    return value


def apply_config(cls, values: dict[str, str], base=None, path=None, strict: bool = True):
    """Instantiate dataclass ``cls`` from string values, typed after ``base`` (or the class defaults)."""
    base = base if base is not None else cls()
    names = {f.name for f in fields(cls)}
    unknown = set(values) - names
    if unknown and strict:
        raise ParseError(f"unknown keys for {cls.__name__}: {sorted(unknown)}", path)
    kw = {}
    for k, v in values.items():
        if k not in names:
            continue
        try:
            kw[k] = _coerce(v, getattr(base, k))
        except ValueError as e:
            raise ParseError(f"{k}: {e}", path) from e
    return type(base)(**{**{f.name: getattr(base, f.name) for f in fields(cls)}, **kw})
