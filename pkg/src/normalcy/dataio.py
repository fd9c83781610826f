"""Readers and writers for every file the toolkit exchanges with the outside.

Text formats are UTF-8 CSV with a mandatory header row. Binary maps use small
little-endian containers:

* ``NVFL`` flow map: magic, width (u32), height (u32), then width*height
  (dx, dy) float32 pairs in row-major order.
* ``NVM1`` single-channel map: magic, width, height, width*height float32.
* ``NVFM`` feature-map sequence: magic, grid_w, grid_h, dim (u32 each), then
  any number of frames of grid_h*grid_w*dim float32 (row-major, channel last).

Binary files may hold several records back to back; the ``*_seq`` readers
iterate over them.
"""

from __future__ import annotations

import csv
import io
import os
import struct
import tempfile
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, NamedTuple

import numpy as np

from .errors import FormatError, ParseError, ValidationError

FLOW_MAGIC = b"NVFL"
MAP_MAGIC = b"NVM1"
FEATURE_MAGIC = b"NVFM"

_DIMS = struct.Struct("<II")
_FEATURE_DIMS = struct.Struct("<III")


class TrajectoryRecord(NamedTuple):
    t: int
    x: float
    y: float


class TrackletFileRecord(NamedTuple):
    tracklet_id: int
    frame: int
    x: float
    y: float


@dataclass(frozen=True)
class FlowMap:
    width: int
    height: int
    cells: np.ndarray  # (height, width, 2) float32

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=np.float32)
        if cells.shape != (self.height, self.width, 2):
            raise ValidationError(
                f"flow cells have shape {cells.shape}, expected {(self.height, self.width, 2)}")
        object.__setattr__(self, "cells", cells)

    def magnitude(self) -> np.ndarray:
        c = self.cells.astype(np.float64)
        return np.hypot(c[..., 0], c[..., 1])

    def __eq__(self, other):
        if not isinstance(other, FlowMap):
            return NotImplemented
        return (self.width, self.height) == (other.width, other.height) and \
            self.cells.tobytes() == other.cells.tobytes()


@dataclass
class LabelTrack:
    labels: np.ndarray  # (T,) int8 in {0, 1}
    masks: np.ndarray | None = None  # (T, H, W) bool

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int8)
        if self.masks is not None:
            self.masks = np.asarray(self.masks, dtype=bool)
            if self.masks.ndim != 3 or len(self.masks) != len(self.labels):
                raise ValidationError(
                    f"{len(self.labels)} labels but masks of shape {self.masks.shape}")

    def __len__(self):
        return len(self.labels)


# ---------------------------------------------------------------------------
# atomic output


def atomic_write(path: str | os.PathLike, data: bytes | str) -> None:
    """Write ``data`` to a temporary sibling file, then rename it into place."""
    path = Path(path)
    if isinstance(data, str):
        data = data.encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_float(v: float) -> str:
    # shortest repr round-trips exactly through float()
    return repr(float(v))


def _csv_text(header: Iterable[str], rows: Iterable[Iterable]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _open_csv(path, header: tuple[str, ...]):
    fh = open(path, newline="", encoding="utf-8")
    reader = csv.reader(fh)
    first = next(reader, None)
    if first is None or tuple(c.strip() for c in first) != header:
        fh.close()
        raise ParseError(f"expected header {','.join(header)!r}, got {first!r}", f"{path}:1")
    return fh, reader


def _parse(conv, value: str, what: str, loc: str):
    try:
        out = conv(value)
    except ValueError:
        raise ParseError(f"cannot parse {what} from {value!r}", loc) from None
    if isinstance(out, float) and not np.isfinite(out):
        raise ValidationError(f"non-finite {what} {value!r}", loc)
    return out


# ---------------------------------------------------------------------------
# trajectories


def read_trajectory(path: str | os.PathLike) -> Iterator[TrajectoryRecord]:
    """Stream ``t,x,y`` records from a CSV file in file order.

    Raises ParseError for malformed rows and ValidationError when ``t`` does
    not strictly increase; both carry the offending line number.
    """
    fh, reader = _open_csv(path, ("t", "x", "y"))
    with fh:
        prev = None
        for row in reader:
            loc = f"{path}:{reader.line_num}"
            if not row:
                continue
            if len(row) != 3:
                raise ParseError(f"expected 3 fields, got {len(row)}", loc)
            rec = TrajectoryRecord(_parse(int, row[0], "t", loc),
                                   _parse(float, row[1], "x", loc),
                                   _parse(float, row[2], "y", loc))
            if prev is not None and rec.t <= prev:
                raise ValidationError(f"t={rec.t} does not increase (previous t={prev})", loc)
            prev = rec.t
            yield rec


def load_trajectory(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a whole trajectory; returns (t, xy) with xy of shape (n, 2)."""
    recs = list(read_trajectory(path))
    t = np.array([r.t for r in recs], dtype=np.int64)
    xy = np.array([(r.x, r.y) for r in recs], dtype=np.float64).reshape(-1, 2)
    return t, xy


def write_trajectory(path, t, xy) -> None:
    xy = np.asarray(xy, dtype=np.float64)
    rows = ((int(k), format_float(p[0]), format_float(p[1])) for k, p in zip(t, xy))
    atomic_write(path, _csv_text(("t", "x", "y"), rows))


# ---------------------------------------------------------------------------
# tracklets


def read_tracklet_records(path) -> Iterator[TrackletFileRecord]:
    fh, reader = _open_csv(path, ("tracklet_id", "frame", "x", "y"))
    with fh:
        for row in reader:
            loc = f"{path}:{reader.line_num}"
            if not row:
                continue
            if len(row) != 4:
                raise ParseError(f"expected 4 fields, got {len(row)}", loc)
            yield TrackletFileRecord(_parse(int, row[0], "tracklet_id", loc),
                                     _parse(int, row[1], "frame", loc),
                                     _parse(float, row[2], "x", loc),
                                     _parse(float, row[3], "y", loc))


def read_tracklets(path, L: int, strict: bool = True) -> list:
    """Group tracklet rows by id into :class:`normalcy.lbt.Tracklet` objects.

    Each id must cover L+1 consecutive frames. Wrong-length ids raise when
    ``strict`` and are dropped with a warning otherwise; frame gaps always
    raise. Output is ordered by tracklet id.
    """
    from .lbt import Tracklet

    groups: dict[int, list[TrackletFileRecord]] = {}
    for rec in read_tracklet_records(path):
        groups.setdefault(rec.tracklet_id, []).append(rec)

    out = []
    for tid in sorted(groups):
        recs = sorted(groups[tid], key=lambda r: r.frame)
        frames = np.array([r.frame for r in recs])
        if len(frames) > 1 and np.any(np.diff(frames) != 1):
            raise ValidationError(f"tracklet {tid} has non-consecutive frames {frames.tolist()}",
                                  str(path))
        if len(recs) != L + 1:
            msg = f"tracklet {tid} has {len(recs)} points, expected {L + 1}"
            if strict:
                raise ValidationError(msg, str(path))
            warnings.warn(msg, stacklevel=2)
            continue
        pts = np.array([(r.x, r.y) for r in recs], dtype=np.float64)
        out.append(Tracklet(pts, int(frames[0]), tracklet_id=tid))
    return out


def write_tracklets(path, tracklets) -> None:
    rows = []
    for i, tr in enumerate(tracklets):
        tid = tr.tracklet_id if tr.tracklet_id is not None else i
        for j, (x, y) in enumerate(tr.points):
            rows.append((tid, tr.start_frame + j, format_float(x), format_float(y)))
    atomic_write(path, _csv_text(("tracklet_id", "frame", "x", "y"), rows))


# ---------------------------------------------------------------------------
# binary maps


def _read_exact(fh: BinaryIO, n: int, what: str, loc: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated {what}: expected {n} bytes, got {len(data)}", loc)
    return data


def _finite(arr: np.ndarray, what: str, loc: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr.ravel()))[0])
        raise ValidationError(f"non-finite value in {what} at element {bad}", loc)
    return arr


def _read_record(fh: BinaryIO, magic: bytes, channels: int, loc: str) -> np.ndarray | None:
    head = fh.read(4)
    if not head:
        return None
    if head != magic:
        raise FormatError(f"bad magic {head!r}, expected {magic!r}", loc)
    w, h = _DIMS.unpack(_read_exact(fh, _DIMS.size, "header", loc))
    n = w * h * channels
    payload = _read_exact(fh, 4 * n, "payload", loc)
    arr = np.frombuffer(payload, dtype="<f4").astype(np.float32)
    _finite(arr, "payload", loc)
    shape = (h, w, channels) if channels > 1 else (h, w)
    return arr.reshape(shape)


def _encode_record(magic: bytes, arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    h, w = arr.shape[:2]
    if not np.all(np.isfinite(arr)):
        raise ValidationError("refusing to encode non-finite values")
    return magic + _DIMS.pack(w, h) + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def encode_flowmap(fm: FlowMap) -> bytes:
    return _encode_record(FLOW_MAGIC, fm.cells)


def read_flowmap_seq(path) -> Iterator[FlowMap]:
    with open(path, "rb") as fh:
        i = 0
        while True:
            cells = _read_record(fh, FLOW_MAGIC, 2, f"{path}[record {i}]")
            if cells is None:
                return
            yield FlowMap(cells.shape[1], cells.shape[0], cells)
            i += 1


def read_flowmap(path) -> FlowMap:
    maps = list(read_flowmap_seq(path))
    if len(maps) != 1:
        raise FormatError(f"expected exactly one flow map, found {len(maps)}", str(path))
    return maps[0]


def write_flowmap(path, fm: FlowMap) -> None:
    atomic_write(path, encode_flowmap(fm))


def write_flowmap_seq(path, maps: Iterable[FlowMap]) -> None:
    atomic_write(path, b"".join(encode_flowmap(m) for m in maps))


def read_scoremap_seq(path) -> Iterator[np.ndarray]:
    with open(path, "rb") as fh:
        i = 0
        while True:
            arr = _read_record(fh, MAP_MAGIC, 1, f"{path}[record {i}]")
            if arr is None:
                return
            yield arr
            i += 1


def read_scoremap(path) -> np.ndarray:
    maps = list(read_scoremap_seq(path))
    if len(maps) != 1:
        raise FormatError(f"expected exactly one map, found {len(maps)}", str(path))
    return maps[0]


def write_scoremap(path, arr) -> None:
    atomic_write(path, _encode_record(MAP_MAGIC, arr))


def write_scoremap_seq(path, maps: Iterable[np.ndarray]) -> None:
    atomic_write(path, b"".join(_encode_record(MAP_MAGIC, m) for m in maps))


# ---------------------------------------------------------------------------
# feature maps


def read_feature_maps(path) -> Iterator[np.ndarray]:
    """Yield dense feature grids of shape (grid_h, grid_w, dim), one frame at a time."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FEATURE_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {FEATURE_MAGIC!r}", str(path))
        gw, gh, dim = _FEATURE_DIMS.unpack(_read_exact(fh, _FEATURE_DIMS.size, "header", str(path)))
        n = gw * gh * dim
        i = 0
        while True:
            chunk = fh.read(4 * n)
            if not chunk:
                return
            loc = f"{path}[frame {i}]"
            if len(chunk) != 4 * n:
                raise FormatError(f"truncated frame: {len(chunk)} of {4 * n} bytes", loc)
            arr = np.frombuffer(chunk, dtype="<f4").astype(np.float32)
            yield _finite(arr, "frame", loc).reshape(gh, gw, dim)
            i += 1


def write_feature_maps(path, frames: Iterable[np.ndarray]) -> None:
    frames = [np.asarray(f, dtype=np.float32) for f in frames]
    if not frames:
        raise ValidationError("no frames to write")
    shape = frames[0].shape
    if len(shape) != 3 or any(f.shape != shape for f in frames):
        raise ValidationError("all frames must share one (grid_h, grid_w, dim) shape")
    gh, gw, dim = shape
    body = b"".join(np.ascontiguousarray(f, dtype="<f4").tobytes() for f in frames)
    atomic_write(path, FEATURE_MAGIC + _FEATURE_DIMS.pack(gw, gh, dim) + body)


# ---------------------------------------------------------------------------
# labels and signals


def read_labels(path, masks_path=None) -> LabelTrack:
    """Read ``frame,label`` CSV (frames must be 0..T-1 in order) plus optional NVM1 masks."""
    fh, reader = _open_csv(path, ("frame", "label"))
    labels = []
    with fh:
        for row in reader:
            loc = f"{path}:{reader.line_num}"
            if not row:
                continue
            if len(row) != 2:
                raise ParseError(f"expected 2 fields, got {len(row)}", loc)
            frame = _parse(int, row[0], "frame", loc)
            lab = _parse(int, row[1], "label", loc)
            if frame != len(labels):
                raise ValidationError(f"expected frame {len(labels)}, got {frame}", loc)
            if lab not in (0, 1):
                raise ValidationError(f"label must be 0 or 1, got {lab}", loc)
            labels.append(lab)
    masks = None
    if masks_path is not None:
        masks = np.stack([m > 0.5 for m in read_scoremap_seq(masks_path)])
    return LabelTrack(np.array(labels, dtype=np.int8), masks)


def write_labels(path, labels) -> None:
    rows = ((i, int(v)) for i, v in enumerate(labels))
    atomic_write(path, _csv_text(("frame", "label"), rows))


def write_table(path, header: tuple[str, ...], rows: Iterable[Iterable]) -> None:
    """Write a CSV table; floats are written in shortest round-trip form."""
    def cell(v):
        if isinstance(v, (float, np.floating)):
            return format_float(v)
        if isinstance(v, np.integer):
            return int(v)
        return v
    atomic_write(path, _csv_text(header, ([cell(v) for v in row] for row in rows)))


def read_table(path) -> dict[str, np.ndarray]:
    """Read a numeric CSV table into columns keyed by header name."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise ParseError("missing header", f"{path}:1")
        cols: list[list[float]] = [[] for _ in header]
        for row in reader:
            if not row:
                continue
            loc = f"{path}:{reader.line_num}"
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", loc)
            for c, v in zip(cols, row):
                c.append(_parse(float, v, "value", loc))
    return {h.strip(): np.array(c, dtype=np.float64) for h, c in zip(header, cols)}
