"""Frozen on-disk formats: prior maps (PM1 text / PMB1 binary), IMU CSV
streams, SC1 scan records, TUM trajectories and the dataset manifest.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Iterator

import numpy as np

from . import so3
from .lidar import Scan


class DataFormatError(ValueError):
    """Malformed input file; the message carries the offending location."""


# -- prior map: PM1 (text) and PMB1 (binary) --------------------------------


def save_map_pm1(path, points: np.ndarray) -> None:
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    with open(path, "w", newline="\n") as f:
        f.write(f"PM1 {len(points)}\n")
        for x, y, z in points:
            f.write(f"{x:.6f} {y:.6f} {z:.6f}\n")


def save_map_pmb1(path, points: np.ndarray) -> None:
    points = np.ascontiguousarray(points, dtype="<f8").reshape(-1, 3)
    with open(path, "wb") as f:
        f.write(b"PMB1")
        f.write(struct.pack("<Q", len(points)))
        f.write(points.tobytes())


def load_map_points(path) -> np.ndarray:
    """Load a prior map, sniffing PM1 vs PMB1 from the leading bytes."""
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(4)
    if magic == b"PMB1":
        return _load_pmb1(path)
    return _load_pm1(path)


def _load_pmb1(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise DataFormatError(f"{path}: truncated PMB1 header")
    (count,) = struct.unpack("<Q", raw[4:12])
    need = 12 + count * 24
    if len(raw) < need:
        raise DataFormatError(
            f"{path}: PMB1 payload truncated (expected {count} points)"
        )
    pts = np.frombuffer(raw[12:need], dtype="<f8").reshape(count, 3)
    if count == 0:
        raise DataFormatError(f"{path}: empty map")
    bad = np.flatnonzero(~np.all(np.isfinite(pts), axis=1))
    if bad.size:
        raise DataFormatError(f"{path}: non-finite coordinate at record {bad[0]}")
    return np.array(pts)


def _load_pm1(path) -> np.ndarray:
    text = Path(path).read_text()
    lines = text.splitlines()
    i = 0
    while i < len(lines) and lines[i].lstrip().startswith("#"):
        i += 1
    if i >= len(lines):
        raise DataFormatError(f"{path}: missing PM1 header")
    header = lines[i].split()
    if len(header) != 2 or header[0] != "PM1":
        raise DataFormatError(f"{path}: bad header at line {i + 1}")
    try:
        count = int(header[1])
    except ValueError:
        raise DataFormatError(f"{path}: bad point count at line {i + 1}") from None
    if count == 0:
        raise DataFormatError(f"{path}: empty map")
    body = lines[i + 1 :]
    if len(body) and body[-1] == "":
        body = body[:-1]
    if len(body) < count:
        raise DataFormatError(
            f"{path}: expected {count} records, found {len(body)}"
        )
    try:
        flat = np.array(" ".join(body[:count]).split(), dtype=float)
    except ValueError:
        _locate_bad_record(path, body, count)
        raise
    if flat.size != 3 * count:
        _locate_bad_record(path, body, count)
    pts = flat.reshape(count, 3)
    bad = np.flatnonzero(~np.all(np.isfinite(pts), axis=1))
    if bad.size:
        raise DataFormatError(f"{path}: non-finite coordinate at record {bad[0]}")
    return pts


def _locate_bad_record(path, body, count) -> None:
    for rec, line in enumerate(body[:count]):
        parts = line.split()
        if len(parts) != 3:
            raise DataFormatError(f"{path}: malformed record {rec}: {line!r}")
        try:
            [float(p) for p in parts]
        except ValueError:
            raise DataFormatError(
                f"{path}: malformed record {rec}: {line!r}"
            ) from None
    raise DataFormatError(f"{path}: malformed point data")


# -- IMU stream: CSV t,gx,gy,gz,ax,ay,az --------------------------------------


def save_imu_csv(path, t: np.ndarray, gyro: np.ndarray, acc: np.ndarray) -> None:
    with open(path, "w", newline="\n") as f:
        f.write("t,gx,gy,gz,ax,ay,az\n")
        for i in range(len(t)):
            g, a = gyro[i], acc[i]
            f.write(
                f"{t[i]:.9f},{g[0]:.9f},{g[1]:.9f},{g[2]:.9f},"
                f"{a[0]:.9f},{a[1]:.9f},{a[2]:.9f}\n"
            )


def load_imu_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rows = []
    with open(path) as f:
        for ln, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            if ln == 1 and line.lower().startswith("t,"):
                continue
            parts = line.split(",")
            if len(parts) != 7:
                raise DataFormatError(f"{path}: malformed IMU row at line {ln}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise DataFormatError(
                    f"{path}: malformed IMU row at line {ln}"
                ) from None
    if not rows:
        raise DataFormatError(f"{path}: empty IMU stream")
    arr = np.array(rows)
    return arr[:, 0], arr[:, 1:4], arr[:, 4:7]


# -- scan stream: SC1 length-prefixed records ---------------------------------

_SC1_HEAD = struct.Struct("<3sdI")


def save_scans_sc1(path, scans) -> None:
    with open(path, "wb") as f:
        for scan in scans:
            n = len(scan)
            f.write(_SC1_HEAD.pack(b"SC1", scan.t_end, n))
            rec = np.empty((n, 4), dtype="<f8")
            rec[:, :3] = scan.xyz
            rec[:, 3] = scan.dt
            f.write(rec.tobytes())


def load_scans_sc1(path) -> Iterator[Scan]:
    raw = Path(path).read_bytes()
    off = 0
    rec_idx = 0
    while off < len(raw):
        if off + _SC1_HEAD.size > len(raw):
            raise DataFormatError(f"{path}: truncated header in record {rec_idx}")
        magic, t_end, n = _SC1_HEAD.unpack_from(raw, off)
        if magic != b"SC1":
            raise DataFormatError(
                f"{path}: bad magic {magic!r} at offset {off} (record {rec_idx})"
            )
        off += _SC1_HEAD.size
        need = n * 32
        if off + need > len(raw):
            raise DataFormatError(f"{path}: truncated payload in record {rec_idx}")
        data = np.frombuffer(raw[off : off + need], dtype="<f8").reshape(n, 4)
        off += need
        yield Scan(t_end, np.array(data[:, :3]), np.array(data[:, 3]))
        rec_idx += 1


# -- TUM trajectories ----------------------------------------------------------


def save_tum(path, entries) -> None:
    """entries: iterable of (t, position (3,), rotation (3,3))."""
    with open(path, "w", newline="\n") as f:
        for t, pos, rot in entries:
            q = so3.quat_from_mat(rot)
            f.write(
                f"{t:.9f} {pos[0]:.9f} {pos[1]:.9f} {pos[2]:.9f} "
                f"{q[0]:.9f} {q[1]:.9f} {q[2]:.9f} {q[3]:.9f}\n"
            )


def load_tum(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (t (n,), positions (n,3), rotations (n,3,3))."""
    ts, poss, rots = [], [], []
    with open(path) as f:
        for ln, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise DataFormatError(f"{path}: malformed TUM row at line {ln}")
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                raise DataFormatError(
                    f"{path}: malformed TUM row at line {ln}"
                ) from None
            ts.append(vals[0])
            poss.append(vals[1:4])
            rots.append(so3.mat_from_quat(np.array(vals[4:8])))
    if not ts:
        raise DataFormatError(f"{path}: empty trajectory")
    return np.array(ts), np.array(poss), np.array(rots)


# -- dataset manifest -----------------------------------------------------------


def config_hash(obj) -> str:
    """Stable hash of a JSON-serializable configuration tree."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def save_manifest(path, manifest: dict) -> None:
    with open(path, "w", newline="\n") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def load_manifest(path) -> dict:
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{path}: invalid manifest: {e}") from None
