"""Bit-exact binary formats (little-endian, CRC32-tailed) and exports.

NLSCAN1  - LiDAR scans: fixed 16-byte records (f32 xyz, u8 label, u8
           valid, u16 pad) after a pose header.
NLEQR1   - equirect images: named f32 channels, channel-major, plus the
           sensor pose in the header.
NLCKPT1  - checkpoints: named f64 blocks with explicit dims; optimizer
           state shares the format.

Every reader validates magic, length and checksum and raises a distinct
error per failure mode; write(read(path)) reproduces path bit for bit.
"""

import struct
import zlib

import numpy as np

from .equirect import EquirectImage
from .lidar import IGNORE_LABEL, LidarScan

SCAN_MAGIC = b"NLSCAN1\0"
EQR_MAGIC = b"NLEQR1\0\0"
CKPT_MAGIC = b"NLCKPT1\0"

SCAN_RECORD = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                        ("label", "u1"), ("valid", "u1"), ("pad", "<u2")])


class FormatError(ValueError):
    """Base class for file-format failures."""


class BadMagicError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class ChecksumError(FormatError):
    pass


class IntegrityError(FormatError):
    pass


class UnknownBlockError(FormatError):
    """A checkpoint block name the consumer does not recognize."""


def _finish(magic, payload):
    return magic + payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)


def _open_payload(raw, magic, path):
    if len(raw) < len(magic) + 4:
        raise TruncatedError(f"{path}: file shorter than header")
    if raw[:len(magic)] != magic:
        raise BadMagicError(f"{path}: bad magic {raw[:len(magic)]!r}")
    payload, crc = raw[len(magic):-4], struct.unpack("<I", raw[-4:])[0]
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise ChecksumError(f"{path}: CRC32 mismatch")
    return payload


# ---------------------------------------------------------------------------
# NLSCAN1

def write_scan(path, scan):
    h, w = scan.shape
    rec = np.zeros(h * w, dtype=SCAN_RECORD)
    pts = scan.points.reshape(-1, 3).astype("<f4")
    rec["x"], rec["y"], rec["z"] = pts[:, 0], pts[:, 1], pts[:, 2]
    rec["label"] = scan.labels.reshape(-1).astype(np.uint8)
    rec["valid"] = scan.valid.reshape(-1).astype(np.uint8)
    payload = struct.pack("<III", 1, h, w)
    payload += np.ascontiguousarray(scan.pose, dtype="<f8").tobytes()
    payload += struct.pack("<I", int(scan.valid.sum()))
    payload += rec.tobytes()
    with open(path, "wb") as f:
        f.write(_finish(SCAN_MAGIC, payload))


def read_scan(path):
    with open(path, "rb") as f:
        raw = f.read()
    payload = _open_payload(raw, SCAN_MAGIC, path)
    if len(payload) < 12 + 96 + 4:
        raise TruncatedError(f"{path}: scan header incomplete")
    _, h, w = struct.unpack_from("<III", payload, 0)
    pose = np.frombuffer(payload, dtype="<f8", count=12, offset=12).reshape(3, 4).copy()
    (valid_count,) = struct.unpack_from("<I", payload, 12 + 96)
    body = payload[12 + 96 + 4:]
    if len(body) != h * w * SCAN_RECORD.itemsize:
        raise TruncatedError(f"{path}: expected {h * w} records, got {len(body)} bytes")
    rec = np.frombuffer(body, dtype=SCAN_RECORD)
    valid = rec["valid"].astype(bool).reshape(h, w)
    if int(valid.sum()) != valid_count:
        raise IntegrityError(f"{path}: valid-count field {valid_count} != mask "
                             f"popcount {int(valid.sum())}")
    points = np.stack([rec["x"], rec["y"], rec["z"]], axis=-1).astype(np.float64)
    points = points.reshape(h, w, 3)
    ranges = np.full((h, w), np.nan)
    origin = pose[:, 3]
    ranges[valid] = np.linalg.norm(points[valid] - origin, axis=-1)
    return LidarScan(points, rec["label"].astype(np.int64).reshape(h, w), valid,
                     np.zeros((h, w, 3)), ranges, pose)


# ---------------------------------------------------------------------------
# NLEQR1

def write_channels(path, names, data, pose):
    """Named f32 channel stack (C, H, W) with sensor pose."""
    data = np.asarray(data)
    c, h, w = data.shape
    if len(names) != c:
        raise ValueError(f"{len(names)} names for {c} channels")
    payload = struct.pack("<III", h, w, c)
    payload += np.ascontiguousarray(pose, dtype="<f8").tobytes()
    for name in names:
        b = name.encode()
        if len(b) > 16:
            raise ValueError(f"channel name {name!r} exceeds 16 bytes")
        payload += b.ljust(16, b"\0")
    payload += np.ascontiguousarray(data, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(_finish(EQR_MAGIC, payload))


def read_channels(path):
    with open(path, "rb") as f:
        raw = f.read()
    payload = _open_payload(raw, EQR_MAGIC, path)
    if len(payload) < 12 + 96:
        raise TruncatedError(f"{path}: channel header incomplete")
    h, w, c = struct.unpack_from("<III", payload, 0)
    pose = np.frombuffer(payload, dtype="<f8", count=12, offset=12).reshape(3, 4).copy()
    off = 12 + 96
    names = []
    for _ in range(c):
        names.append(payload[off:off + 16].rstrip(b"\0").decode())
        off += 16
    body = payload[off:]
    if len(body) != c * h * w * 4:
        raise TruncatedError(f"{path}: expected {c}x{h}x{w} f32 data")
    data = np.frombuffer(body, dtype="<f4").reshape(c, h, w).copy()
    return names, data, pose


EQR_CHANNELS = ("depth", "red", "green", "blue", "label", "variance", "valid")


def write_equirect(path, img):
    data = np.stack([img.depth,
                     img.color[..., 0], img.color[..., 1], img.color[..., 2],
                     img.label.astype(np.float64), img.variance,
                     img.valid.astype(np.float64)])
    write_channels(path, EQR_CHANNELS, data, img.pose)


def read_equirect(path):
    names, data, pose = read_channels(path)
    if tuple(names) != EQR_CHANNELS:
        raise IntegrityError(f"{path}: unexpected channels {names}")
    d = {n: data[i].astype(np.float64) for i, n in enumerate(names)}
    return EquirectImage(d["depth"], np.stack([d["red"], d["green"], d["blue"]], axis=-1),
                         d["label"].astype(np.int64), d["variance"],
                         d["valid"] >= 0.5, pose)


# ---------------------------------------------------------------------------
# NLCKPT1

def write_checkpoint(path, blocks):
    """blocks: ordered name -> float array. Names are <= 64 bytes."""
    payload = struct.pack("<I", len(blocks))
    for name, arr in blocks.items():
        b = name.encode()
        if len(b) > 64:
            raise ValueError(f"block name {name!r} exceeds 64 bytes")
        arr = np.asarray(arr, dtype="<f8")
        payload += b.ljust(64, b"\0")
        payload += struct.pack("<I", arr.ndim)
        payload += struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
        payload += np.ascontiguousarray(arr).tobytes()
    with open(path, "wb") as f:
        f.write(_finish(CKPT_MAGIC, payload))


def read_checkpoint(path):
    with open(path, "rb") as f:
        raw = f.read()
    payload = _open_payload(raw, CKPT_MAGIC, path)
    if len(payload) < 4:
        raise TruncatedError(f"{path}: checkpoint header incomplete")
    (count,) = struct.unpack_from("<I", payload, 0)
    off = 4
    blocks = {}
    for _ in range(count):
        if off + 68 > len(payload):
            raise TruncatedError(f"{path}: block header incomplete")
        name = payload[off:off + 64].rstrip(b"\0").decode()
        off += 64
        (rank,) = struct.unpack_from("<I", payload, off)
        off += 4
        shape = struct.unpack_from(f"<{rank}I", payload, off) if rank else ()
        off += 4 * rank
        n = int(np.prod(shape)) if rank else 1
        if off + 8 * n > len(payload):
            raise TruncatedError(f"{path}: block {name!r} data incomplete")
        blocks[name] = np.frombuffer(payload, dtype="<f8", count=n,
                                     offset=off).reshape(shape).copy()
        off += 8 * n
    return blocks


# ---------------------------------------------------------------------------
# human-inspectable exports

def export_ply(path, scan):
    """ASCII PLY of the valid points with 8-bit color and class label."""
    pts = scan.points[scan.valid]
    cols = (np.clip(scan.colors[scan.valid], 0, 1) * 255).astype(np.uint8)
    labels = scan.labels[scan.valid].astype(np.uint8)
    lines = ["ply", "format ascii 1.0", f"element vertex {len(pts)}",
             "property float x", "property float y", "property float z",
             "property uchar red", "property uchar green", "property uchar blue",
             "property uchar label", "end_header"]
    for p, c, l in zip(pts, cols, labels):
        lines.append(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {c[0]} {c[1]} {c[2]} {l}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def write_pgm(path, gray):
    """ASCII PGM (P2) of a [0,1] or uint8 grayscale image."""
    g = np.asarray(gray)
    if g.dtype != np.uint8:
        g = (np.clip(g, 0, 1) * 255).astype(np.uint8)
    with open(path, "w") as f:
        f.write(f"P2\n{g.shape[1]} {g.shape[0]}\n255\n")
        for row in g:
            f.write(" ".join(str(int(x)) for x in row) + "\n")


LABEL_PALETTE = np.array([
    [120, 120, 120],  # road
    [0, 90, 200],     # vehicle
    [170, 140, 90],   # terrain
    [60, 160, 60],    # vegetation
    [200, 120, 40],   # manmade
    [0, 0, 0],        # ignore / no return
], dtype=np.uint8)


def write_label_ppm(path, labels):
    """ASCII PPM (P3) rendering of a label map via the fixed palette."""
    img = LABEL_PALETTE[np.clip(labels, 0, IGNORE_LABEL)]
    with open(path, "w") as f:
        f.write(f"P3\n{img.shape[1]} {img.shape[0]}\n255\n")
        for row in img:
            f.write(" ".join(str(int(v)) for px in row for v in px) + "\n")
