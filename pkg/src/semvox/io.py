"""Readers and writers for every on-disk format the pipeline touches.

Raw frames (depth and labels)::

    b"VDRD" | u32 width | u32 height | u32 type (0 = f32 depth, 1 = u16 label) | payload

All integers little-endian, payload row-major.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from scipy.spatial.transform import Rotation

from .bki import KernelFilter, VoxelRecord
from .cloud import LabelRemap, SemanticPointCloud
from .errors import (
    BadQuaternionError,
    ConfigError,
    MalformedFileError,
    MalformedHeaderError,
    NonMonotonicTimestampsError,
    SizeMismatchError,
    UnreadableFileError,
    UnwritablePathError,
)
from .geometry import CameraConfig, CameraIntrinsics
from .metrics import Trajectory

FRAME_MAGIC = b"VDRD"
_FRAME_HEADER = struct.Struct("<4sIII")
DEPTH_TAG = 0
LABEL_TAG = 1
_TAG_DTYPES = {DEPTH_TAG: np.dtype("<f4"), LABEL_TAG: np.dtype("<u2")}

QUATERNION_TOLERANCE = 1e-3

# 19-entry class palette (Cityscapes/SemanticKITTI-style colours); classes wrap around.
CLASS_PALETTE = np.array(
    [
        [128, 64, 128], [244, 35, 232], [70, 70, 70], [102, 102, 156], [190, 153, 153],
        [153, 153, 153], [250, 170, 30], [220, 220, 0], [107, 142, 35], [152, 251, 152],
        [70, 130, 180], [220, 20, 60], [255, 0, 0], [0, 0, 142], [0, 0, 70],
        [0, 60, 100], [0, 80, 100], [0, 0, 230], [119, 11, 32],
    ],
    dtype=np.uint8,
)


def class_colors(classes: np.ndarray) -> np.ndarray:
    return CLASS_PALETTE[np.asarray(classes) % len(CLASS_PALETTE)]


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise UnreadableFileError(f"cannot read {path}: {exc.strerror or exc}") from exc


def _read_lines(path) -> list[str]:
    try:
        return Path(path).read_text().splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise UnreadableFileError(f"cannot read {path}: {exc}") from exc


def _open_for_write(path, mode="w"):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        return open(path, mode, newline="\n") if "b" not in mode else open(path, mode)
    except OSError as exc:
        raise UnwritablePathError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _fmt(x: float) -> str:
    # shortest string that round-trips the float exactly
    return repr(float(x))


# -- raw frames ------------------------------------------------------------

def _read_frame(path, expected_tag: int) -> np.ndarray:
    data = _read_bytes(path)
    if len(data) < _FRAME_HEADER.size:
        raise MalformedHeaderError(path, "offset 0", f"file is {len(data)} bytes, shorter than the 16-byte header")
    magic, width, height, tag = _FRAME_HEADER.unpack_from(data)
    if magic != FRAME_MAGIC:
        raise MalformedHeaderError(path, "offset 0", f"bad magic {magic!r}")
    if tag not in _TAG_DTYPES:
        raise MalformedHeaderError(path, "offset 12", f"unknown element type tag {tag}")
    if tag != expected_tag:
        kind = "depth" if expected_tag == DEPTH_TAG else "label"
        raise MalformedHeaderError(path, "offset 12", f"element type tag {tag} is not a {kind} frame")
    if width == 0 or height == 0:
        raise MalformedHeaderError(path, "offset 4", f"zero-sized frame {width}x{height}")
    dtype = _TAG_DTYPES[tag]
    expected = width * height * dtype.itemsize
    payload = len(data) - _FRAME_HEADER.size
    if payload != expected:
        raise SizeMismatchError(
            path,
            f"offset {_FRAME_HEADER.size}",
            f"header says {width}x{height} ({expected} payload bytes), found {payload}",
        )
    return np.frombuffer(data, dtype=dtype, offset=_FRAME_HEADER.size).reshape(height, width)


def _write_frame(path, array: np.ndarray, tag: int) -> None:
    array = np.asarray(array)
    if array.ndim != 2:
        raise ValueError(f"frames are 2D, got shape {array.shape}")
    height, width = array.shape
    payload = np.ascontiguousarray(array, dtype=_TAG_DTYPES[tag])
    with _open_for_write(path, "wb") as fh:
        fh.write(_FRAME_HEADER.pack(FRAME_MAGIC, width, height, tag))
        fh.write(payload.tobytes())


def read_depth_frame(path, inverse_depth: bool = False) -> np.ndarray:
    """Depth map in metres as float64. With ``inverse_depth`` the file stores 1/z."""
    depth = _read_frame(path, DEPTH_TAG).astype(np.float64)
    if inverse_depth:
        with np.errstate(divide="ignore", invalid="ignore"):
            depth = np.where(depth > 0, 1.0 / depth, 0.0)
    return depth


def write_depth_frame(path, depth: np.ndarray) -> None:
    _write_frame(path, depth, DEPTH_TAG)


def read_label_frame(path) -> np.ndarray:
    return _read_frame(path, LABEL_TAG).astype(np.int64)


def write_label_frame(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() > 0xFFFF):
        raise ValueError("label ids must fit in 16 unsigned bits")
    _write_frame(path, labels, LABEL_TAG)


# -- key = value config files ----------------------------------------------

def parse_key_values(path, allowed: Iterable[str]) -> dict[str, str]:
    allowed = set(allowed)
    out: dict[str, str] = {}
    for lineno, raw in enumerate(_read_lines(path), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        if key not in allowed:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


INTRINSICS_KEYS = ("fx", "fy", "cx", "cy", "skew", "width", "height", "max_range", "camera_convention", "inverse_depth")


def read_intrinsics(path) -> CameraConfig:
    values = parse_key_values(path, INTRINSICS_KEYS)
    missing = [k for k in ("fx", "fy", "cx", "cy", "width", "height") if k not in values]
    if missing:
        raise ConfigError(f"{path}: missing required keys {missing}")
    try:
        K = CameraIntrinsics(
            fx=float(values["fx"]),
            fy=float(values["fy"]),
            cx=float(values["cx"]),
            cy=float(values["cy"]),
            width=int(values["width"]),
            height=int(values["height"]),
            skew=float(values.get("skew", 0.0)),
        )
        extra = {}
        if "max_range" in values:
            extra["max_range"] = float(values["max_range"])
        if "camera_convention" in values:
            extra["camera_convention"] = values["camera_convention"]
        if "inverse_depth" in values:
            extra["inverse_depth"] = parse_bool(values["inverse_depth"])
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return CameraConfig(K, **extra)


def write_intrinsics(path, config: CameraConfig) -> None:
    K = config.intrinsics
    lines = [
        f"fx = {_fmt(K.fx)}",
        f"fy = {_fmt(K.fy)}",
        f"cx = {_fmt(K.cx)}",
        f"cy = {_fmt(K.cy)}",
        f"skew = {_fmt(K.skew)}",
        f"width = {K.width}",
        f"height = {K.height}",
        f"max_range = {_fmt(config.max_range)}",
        f"camera_convention = {config.camera_convention}",
        f"inverse_depth = {str(config.inverse_depth).lower()}",
    ]
    with _open_for_write(path) as fh:
        fh.write("\n".join(lines) + "\n")


# -- label remap -----------------------------------------------------------

def read_remap(path) -> LabelRemap:
    table: dict[int, int] = {}
    header: dict[str, int] = {}
    for lineno, raw in enumerate(_read_lines(path), 1):
        fields = raw.split("#", 1)[0].split()
        if not fields:
            continue
        if len(fields) != 2:
            raise MalformedFileError(path, f"line {lineno}", f"expected two fields, got {raw!r}")
        key, value = fields
        try:
            if key in ("num_target_classes", "unlabeled_id"):
                header[key] = int(value)
                continue
            src, dst = int(key), int(value)
        except ValueError:
            raise MalformedFileError(path, f"line {lineno}", f"non-integer entry {raw!r}") from None
        if src in table:
            raise MalformedFileError(path, f"line {lineno}", f"source id {src} mapped twice")
        table[src] = dst
    for key in ("num_target_classes", "unlabeled_id"):
        if key not in header:
            raise MalformedFileError(path, "header", f"missing '{key}' line")
    return LabelRemap(table, header["num_target_classes"], header["unlabeled_id"])


def write_remap(path, remap: LabelRemap) -> None:
    lines = [f"num_target_classes {remap.num_target_classes}", f"unlabeled_id {remap.unlabeled_id}"]
    lines += [f"{src} {dst}" for src, dst in sorted(remap.table.items())]
    with _open_for_write(path) as fh:
        fh.write("\n".join(lines) + "\n")


# -- kernel weights ----------------------------------------------------------

def read_kernel_weights(path) -> KernelFilter:
    """Header ``radius R classes C resolution RES`` then ``class i j k weight`` lines.

    Offsets that are not listed get weight 0. ``classes 1`` means one grid
    shared by every class.
    """
    lines = [(n, raw.split("#", 1)[0].split()) for n, raw in enumerate(_read_lines(path), 1)]
    lines = [(n, f) for n, f in lines if f]
    if not lines:
        raise MalformedHeaderError(path, "line 1", "empty kernel file")
    lineno, head = lines[0]
    if len(head) != 6 or head[0::2] != ["radius", "classes", "resolution"]:
        raise MalformedHeaderError(path, f"line {lineno}", "expected 'radius R classes C resolution RES'")
    try:
        radius, classes, resolution = int(head[1]), int(head[3]), float(head[5])
    except ValueError:
        raise MalformedHeaderError(path, f"line {lineno}", "non-numeric header value") from None
    if radius < 0 or classes < 1:
        raise MalformedHeaderError(path, f"line {lineno}", "radius must be >= 0 and classes >= 1")
    side = 2 * radius + 1
    weights = np.zeros((classes, side, side, side))
    for lineno, fields in lines[1:]:
        if len(fields) != 5:
            raise MalformedFileError(path, f"line {lineno}", "expected 'class i j k weight'")
        try:
            c, i, j, k = (int(x) for x in fields[:4])
            w = float(fields[4])
        except ValueError:
            raise MalformedFileError(path, f"line {lineno}", "non-numeric entry") from None
        if not 0 <= c < classes or max(abs(i), abs(j), abs(k)) > radius:
            raise MalformedFileError(path, f"line {lineno}", f"entry ({c}, {i}, {j}, {k}) outside the header bounds")
        weights[c, i + radius, j + radius, k + radius] = w
    return KernelFilter(weights, resolution)


def write_kernel_weights(path, kernel: KernelFilter) -> None:
    r = kernel.radius
    offsets = kernel.offsets()
    lines = [f"radius {r} classes {kernel.num_classes} resolution {_fmt(kernel.resolution)}"]
    for c, grid in enumerate(kernel.weights):
        for (i, j, k), w in zip(offsets, grid.ravel()):
            if w > 0:
                lines.append(f"{c} {i} {j} {k} {_fmt(w)}")
    with _open_for_write(path) as fh:
        fh.write("\n".join(lines) + "\n")


# -- trajectories ------------------------------------------------------------

def read_trajectory(path) -> Trajectory:
    """TUM format: ``timestamp tx ty tz qx qy qz qw`` per line, ``#`` comments."""
    stamps, trans, quats = [], [], []
    for lineno, raw in enumerate(_read_lines(path), 1):
        fields = raw.split("#", 1)[0].split()
        if not fields:
            continue
        if len(fields) != 8:
            raise MalformedFileError(path, f"line {lineno}", f"expected 8 numeric fields, got {len(fields)}")
        try:
            values = [float(x) for x in fields]
        except ValueError:
            raise MalformedFileError(path, f"line {lineno}", f"non-numeric field in {raw.strip()!r}") from None
        if not all(math.isfinite(v) for v in values):
            raise MalformedFileError(path, f"line {lineno}", "non-finite value")
        q = np.array(values[4:])
        norm = np.linalg.norm(q)
        if abs(norm - 1.0) > QUATERNION_TOLERANCE:
            raise BadQuaternionError(path, f"line {lineno}", f"quaternion norm {norm:.6g} deviates from 1 by more than {QUATERNION_TOLERANCE}")
        if stamps and values[0] <= stamps[-1][0]:
            raise NonMonotonicTimestampsError(
                path, f"line {lineno}", f"timestamp {values[0]!r} does not follow {stamps[-1][0]!r}"
            )
        stamps.append((values[0], lineno))
        trans.append(values[1:4])
        quats.append(q / norm)
    if not stamps:
        raise MalformedFileError(path, "line 1", "trajectory file has no poses")
    rotations = Rotation.from_quat(np.array(quats)).as_matrix()
    return Trajectory(np.array([s for s, _ in stamps]), rotations, np.array(trans))


def write_trajectory(path, traj: Trajectory) -> None:
    quats = Rotation.from_matrix(traj.rotations).as_quat()
    with _open_for_write(path) as fh:
        fh.write("# timestamp tx ty tz qx qy qz qw\n")
        for t, p, q in zip(traj.timestamps, traj.translations, quats):
            fh.write(" ".join(_fmt(x) for x in (t, *p, *q)) + "\n")


# -- PLY ---------------------------------------------------------------------

_PLY_DTYPE = np.dtype(
    [("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("red", "u1"), ("green", "u1"), ("blue", "u1"), ("class", "<u2")]
)
_PLY_PROPS = ["float x", "float y", "float z", "uchar red", "uchar green", "uchar blue", "ushort class"]


def write_ply(cloud: SemanticPointCloud, path, mode: str = "binary") -> None:
    """Vertex-only PLY. Points without RGB get their class palette colour."""
    if mode not in ("ascii", "binary"):
        raise ValueError(f"PLY mode must be 'ascii' or 'binary', got {mode!r}")
    n = len(cloud)
    colors = cloud.colors if cloud.colors is not None else class_colors(cloud.classes)
    fmt = "ascii 1.0" if mode == "ascii" else "binary_little_endian 1.0"
    header = ["ply", f"format {fmt}", f"element vertex {n}"]
    header += [f"property {p}" for p in _PLY_PROPS]
    header.append("end_header")
    rec = np.empty(n, dtype=_PLY_DTYPE)
    for axis, name in enumerate("xyz"):
        rec[name] = cloud.points[:, axis]
    rec["red"], rec["green"], rec["blue"] = colors[:, 0], colors[:, 1], colors[:, 2]
    rec["class"] = cloud.classes
    with _open_for_write(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if mode == "binary":
            fh.write(rec.tobytes())
        else:
            for r in rec:
                fh.write(
                    f"{_fmt(r['x'])} {_fmt(r['y'])} {_fmt(r['z'])} "
                    f"{r['red']} {r['green']} {r['blue']} {r['class']}\n".encode("ascii")
                )


def read_ply(path, num_classes: Optional[int] = None) -> SemanticPointCloud:
    """Reads back files produced by :func:`write_ply`."""
    data = _read_bytes(path)
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise MalformedHeaderError(path, "offset 0", "not a PLY file")
    header = data[:end].decode("ascii").splitlines()
    body = data[end + len("end_header\n"):]
    fmt = next((h.split()[1] for h in header if h.startswith("format ")), None)
    count = next((int(h.split()[2]) for h in header if h.startswith("element vertex ")), None)
    props = [h[len("property "):] for h in header if h.startswith("property ")]
    if count is None or props != _PLY_PROPS or fmt not in ("ascii", "binary_little_endian"):
        raise MalformedHeaderError(path, "header", "unsupported PLY layout")
    if fmt == "binary_little_endian":
        if len(body) != count * _PLY_DTYPE.itemsize:
            raise SizeMismatchError(path, f"offset {end + 11}", "vertex payload size disagrees with header")
        rec = np.frombuffer(body, dtype=_PLY_DTYPE)
        xyz = np.stack([rec["x"], rec["y"], rec["z"]], axis=1)
        rgb = np.stack([rec["red"], rec["green"], rec["blue"]], axis=1)
        cls = rec["class"].astype(np.int64)
    else:
        rows = [line.split() for line in body.decode("ascii").splitlines() if line.strip()]
        if len(rows) != count:
            raise SizeMismatchError(path, "body", f"expected {count} vertices, found {len(rows)}")
        table = np.array(rows, dtype=np.float64).reshape(count, 7)
        xyz = table[:, :3].astype(np.float32)
        rgb = table[:, 3:6].astype(np.uint8)
        cls = table[:, 6].astype(np.int64)
    if num_classes is None:
        num_classes = int(cls.max()) + 1 if len(cls) else 1
    return SemanticPointCloud(xyz.astype(np.float64), cls, num_classes, rgb)


# -- voxel maps --------------------------------------------------------------

@dataclass(frozen=True)
class VoxelMapMeta:
    resolution: float
    origin: tuple
    num_classes: int

    def centers(self, records) -> np.ndarray:
        ijk = np.array([(r.i, r.j, r.k) for r in records], dtype=np.float64).reshape(-1, 3)
        return np.asarray(self.origin) + (ijk + 0.5) * self.resolution


def write_voxel_map(records: Iterable[VoxelRecord], meta: VoxelMapMeta, path) -> None:
    """Header (resolution, origin, classes) then ``i j k class confidence`` lines."""
    lines = [
        f"resolution {_fmt(meta.resolution)}",
        "origin " + " ".join(_fmt(x) for x in meta.origin),
        f"classes {meta.num_classes}",
    ]
    lines += [f"{r.i} {r.j} {r.k} {r.expected_class} {_fmt(r.confidence)}" for r in records]
    with _open_for_write(path) as fh:
        fh.write("\n".join(lines) + "\n")


def read_voxel_map(path) -> tuple[VoxelMapMeta, list[VoxelRecord]]:
    lines = _read_lines(path)
    if len(lines) < 3:
        raise MalformedHeaderError(path, f"line {len(lines) + 1}", "truncated voxel map header")
    try:
        k0, res = lines[0].split()
        k1, *origin = lines[1].split()
        k2, classes = lines[2].split()
        if (k0, k1, k2) != ("resolution", "origin", "classes") or len(origin) != 3:
            raise ValueError
        meta = VoxelMapMeta(float(res), tuple(float(x) for x in origin), int(classes))
    except ValueError:
        raise MalformedHeaderError(path, "line 1", "expected resolution/origin/classes header") from None
    records = []
    for lineno, raw in enumerate(lines[3:], 4):
        fields = raw.split()
        if not fields:
            continue
        if len(fields) != 5:
            raise MalformedFileError(path, f"line {lineno}", "expected 'i j k class confidence'")
        try:
            i, j, k, c = (int(x) for x in fields[:4])
            conf = float(fields[4])
        except ValueError:
            raise MalformedFileError(path, f"line {lineno}", "non-numeric field") from None
        records.append(VoxelRecord(i, j, k, c, conf))
    return meta, records


# -- dataset layout ------------------------------------------------------------

DEPTH_DIR = "depth"
LABEL_DIR = "labels"
FRAME_SUFFIX = ".vdr"


@dataclass(frozen=True)
class DatasetLayout:
    """On-disk dataset::

        root/intrinsics.txt  root/trajectory.txt  root/remap.txt
        root/depth/NNNNNN.vdr  root/labels/NNNNNN.vdr
        root/frame_times.txt  (optional, one timestamp per frame)
    """

    root: Path
    depth_files: tuple = ()
    label_files: tuple = ()
    trajectory: Optional[Path] = None
    intrinsics: Optional[Path] = None
    remap: Optional[Path] = None
    frame_times: Optional[Path] = None
    color_files: tuple = field(default=())

    def __post_init__(self):
        if len(self.depth_files) != len(self.label_files):
            raise ConfigError(
                f"{len(self.depth_files)} depth frames but {len(self.label_files)} label frames under {self.root}"
            )

    def __len__(self):
        return len(self.depth_files)

    @classmethod
    def discover(cls, root, trajectory=None, intrinsics=None, remap=None) -> DatasetLayout:
        root = Path(root)
        if not root.is_dir():
            raise ConfigError(f"dataset root {root} is not a directory")

        def frames(sub):
            d = root / sub
            return tuple(sorted(d.glob("*" + FRAME_SUFFIX))) if d.is_dir() else ()

        def pick(explicit, name):
            if explicit is not None:
                return Path(explicit)
            p = root / name
            return p if p.exists() else None

        times = root / "frame_times.txt"
        return cls(
            root,
            frames(DEPTH_DIR),
            frames(LABEL_DIR),
            pick(trajectory, "trajectory.txt"),
            pick(intrinsics, "intrinsics.txt"),
            pick(remap, "remap.txt"),
            times if times.exists() else None,
        )

    @staticmethod
    def frame_name(index: int) -> str:
        return f"{index:06d}{FRAME_SUFFIX}"

    def read_frame_times(self) -> np.ndarray:
        if self.frame_times is None:
            raise ConfigError(f"{self.root} has no frame_times.txt for timestamp association")
        values = []
        for lineno, raw in enumerate(_read_lines(self.frame_times), 1):
            text = raw.split("#", 1)[0].strip()
            if not text:
                continue
            try:
                values.append(float(text))
            except ValueError:
                raise MalformedFileError(self.frame_times, f"line {lineno}", f"bad timestamp {text!r}") from None
        if len(values) != len(self):
            raise MalformedFileError(
                self.frame_times, "end", f"{len(values)} timestamps for {len(self)} frames"
            )
        return np.array(values)
