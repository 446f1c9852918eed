"""Disk formats: stack manifests, the binary volume format, and mesh export.

Volume files are deterministic and diffable: an 8-byte magic, a version,
dims and origin, a little-endian float32 payload in x-fastest order, a
bit-packed missing mask, and a trailing CRC32 of everything before it.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (ChecksumMismatch, CorruptHeader, DimensionMismatch,
                     ImageDecode, InvalidGrid, Io, ManifestParse)
from .model import AXIS_LABELS, SliceStack, TriangleMesh, VolumeGrid, normalize_stack

VOLUME_MAGIC = b"VOLKRIG\x00"
VOLUME_VERSION = 1


@dataclass
class StackManifest:
    """Parsed form of the human-writable manifest file.

    The manifest is a line-oriented key/value document::

        pixel_spacing_mm = 1.0 1.0
        slice_gap_mm = 5.0
        axis = axial
        slice = slices/s000.png
        slice = slices/s001.png

    ``slice`` lines are ordered; paths are resolved against the manifest's
    directory. ``#`` starts a comment.
    """

    slice_files: list[Path]
    pixel_spacing_mm: tuple[float, float]
    slice_gap_mm: float
    axis_label: str = "axial"

    def __post_init__(self):
        if not self.slice_files:
            raise ManifestParse("manifest lists no slices")
        if len(set(self.slice_files)) != len(self.slice_files):
            raise ManifestParse("duplicate slice paths in manifest")


def parse_manifest(path) -> StackManifest:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ManifestParse(f"cannot read manifest {path}: {e}") from e

    spacing = None
    gap = None
    axis = "axial"
    files: list[Path] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ManifestParse(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "pixel_spacing_mm":
            parts = value.split()
            if len(parts) != 2:
                raise ManifestParse(f"{path}:{lineno}: need two spacing values")
            spacing = (float(parts[0]), float(parts[1]))
        elif key == "slice_gap_mm":
            gap = float(value)
        elif key == "axis":
            if value not in AXIS_LABELS:
                raise ManifestParse(f"{path}:{lineno}: unknown axis {value!r}")
            axis = value
        elif key == "slice":
            files.append((path.parent / value).resolve())
        else:
            raise ManifestParse(f"{path}:{lineno}: unknown key {key!r}")
    if spacing is None or gap is None:
        raise ManifestParse(f"{path}: pixel_spacing_mm and slice_gap_mm are required")
    return StackManifest(files, spacing, gap, axis)


def write_manifest(manifest: StackManifest, path) -> None:
    path = Path(path)
    lines = [
        f"pixel_spacing_mm = {manifest.pixel_spacing_mm[0]} {manifest.pixel_spacing_mm[1]}",
        f"slice_gap_mm = {manifest.slice_gap_mm}",
        f"axis = {manifest.axis_label}",
    ]
    for f in manifest.slice_files:
        try:
            rel = Path(f).relative_to(path.parent.resolve())
        except ValueError:
            rel = Path(f)
        lines.append(f"slice = {rel.as_posix()}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _decode_slice(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            img.load()
            if img.mode == "I;16":
                arr = np.asarray(img, dtype=np.uint16).astype(np.float32) / 65535.0
            elif img.mode in ("L", "P", "1"):
                arr = np.asarray(img.convert("L"), dtype=np.float32) / 255.0
            elif img.mode == "I":
                arr = np.asarray(img, dtype=np.int32).astype(np.float32) / 65535.0
            else:
                # color inputs are out of scope; collapse defensively
                arr = np.asarray(img.convert("L"), dtype=np.float32) / 255.0
    except (OSError, UnidentifiedImageError, ValueError) as e:
        raise ImageDecode(f"cannot decode {path}: {e}") from e
    if arr.ndim != 2:
        raise ImageDecode(f"{path}: expected a single-channel image")
    return arr


def load_stack(manifest_path) -> SliceStack:
    """Load and normalize the slice stack described by a manifest."""
    manifest = parse_manifest(manifest_path)
    slices = []
    shape = None
    for f in manifest.slice_files:
        arr = _decode_slice(f)
        if shape is None:
            shape = arr.shape
        elif arr.shape != shape:
            raise DimensionMismatch(
                f"{f}: slice is {arr.shape}, expected {shape}")
        slices.append(arr)
    raw = SliceStack(np.stack(slices), manifest.pixel_spacing_mm,
                     manifest.slice_gap_mm, manifest.axis_label)
    return normalize_stack(raw)


# --- binary volume format ---------------------------------------------------

def save_volume(grid: VolumeGrid, path) -> None:
    if grid.n_voxels == 0:
        raise InvalidGrid("refusing to save a volume with empty dims")
    grid.validate()
    dx, dy, dz = grid.dims
    header = VOLUME_MAGIC + struct.pack(
        "<I3I3i", VOLUME_VERSION, dx, dy, dz, *grid.origin_offset)
    payload = np.ascontiguousarray(grid.data, dtype="<f4").tobytes()
    mask = np.packbits(grid.missing_mask.reshape(-1)).tobytes()
    body = header + payload + mask
    crc = zlib.crc32(body) & 0xFFFFFFFF
    try:
        tmp = Path(str(path) + ".tmp")
        with open(tmp, "wb") as fh:
            fh.write(body)
            fh.write(struct.pack("<I", crc))
        tmp.replace(path)
    except OSError as e:
        raise Io(f"cannot write volume {path}: {e}") from e


def load_volume(path) -> VolumeGrid:
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise Io(f"cannot read volume {path}: {e}") from e
    head_len = len(VOLUME_MAGIC) + struct.calcsize("<I3I3i")
    if len(blob) < head_len + 4:
        raise CorruptHeader(f"{path}: truncated volume file")
    if blob[:len(VOLUME_MAGIC)] != VOLUME_MAGIC:
        raise CorruptHeader(f"{path}: bad magic bytes")
    version, dx, dy, dz, ox, oy, oz = struct.unpack_from(
        "<I3I3i", blob, len(VOLUME_MAGIC))
    if version != VOLUME_VERSION:
        raise CorruptHeader(f"{path}: unsupported volume version {version}")
    n = dx * dy * dz
    mask_bytes = (n + 7) // 8
    expected = head_len + 4 * n + mask_bytes + 4
    if len(blob) != expected:
        raise CorruptHeader(
            f"{path}: size {len(blob)} != expected {expected} for dims "
            f"{(dx, dy, dz)}")
    crc_stored = struct.unpack_from("<I", blob, len(blob) - 4)[0]
    crc = zlib.crc32(blob[:-4]) & 0xFFFFFFFF
    if crc != crc_stored:
        raise ChecksumMismatch(f"{path}: CRC mismatch")
    data = np.frombuffer(blob, dtype="<f4", count=n, offset=head_len)
    data = data.reshape(dz, dy, dx).copy()
    mask = np.unpackbits(
        np.frombuffer(blob, dtype=np.uint8, count=mask_bytes,
                      offset=head_len + 4 * n), count=n)
    mask = mask.astype(bool).reshape(dz, dy, dx)
    return VolumeGrid(data, mask, (ox, oy, oz))


# --- mesh export -------------------------------------------------------------

def export_mesh(mesh: TriangleMesh, fmt: str, path) -> None:
    """Write a mesh as Wavefront OBJ or binary STL."""
    if fmt == "obj":
        _export_obj(mesh, path)
    elif fmt == "stl_binary":
        _export_stl(mesh, path)
    else:
        raise ValueError(f"unknown mesh format {fmt!r}")


def _export_obj(mesh: TriangleMesh, path) -> None:
    lines = []
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.8f} {v[1]:.8f} {v[2]:.8f}")
    for n in mesh.normals:
        lines.append(f"vn {n[0]:.8f} {n[1]:.8f} {n[2]:.8f}")
    for t in mesh.triangles:
        a, b, c = (int(i) + 1 for i in t)
        lines.append(f"f {a}//{a} {b}//{b} {c}//{c}")
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as e:
        raise Io(f"cannot write OBJ {path}: {e}") from e


def import_obj(path) -> TriangleMesh:
    """Minimal OBJ reader (v/vn/f with //-style faces); used for round trips."""
    verts, norms, tris = [], [], []
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise Io(f"cannot read OBJ {path}: {e}") from e
    for line in text.splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "vn":
            norms.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) - 1 for p in parts[1:4]]
            tris.append(idx)
    verts = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    if not norms:
        norms = np.tile([0.0, 0.0, 1.0], (len(verts), 1))
    return TriangleMesh(verts, np.asarray(tris, dtype=np.int64).reshape(-1, 3),
                        np.asarray(norms, dtype=np.float64).reshape(-1, 3))


def _export_stl(mesh: TriangleMesh, path) -> None:
    try:
        Path(path).write_bytes(stl_bytes(mesh))
    except OSError as e:
        raise Io(f"cannot write STL {path}: {e}") from e


def stl_bytes(mesh: TriangleMesh) -> bytes:
    """Binary STL blob: 80-byte header, uint32 count, 50 bytes per triangle."""
    parts = [b"volkrig binary stl".ljust(80, b"\x00"),
             struct.pack("<I", mesh.n_triangles)]
    v = mesh.vertices
    for t in mesh.triangles:
        p0, p1, p2 = v[t[0]], v[t[1]], v[t[2]]
        n = np.cross(p1 - p0, p2 - p0)
        norm = np.linalg.norm(n)
        if norm > 0:
            n = n / norm
        parts.append(struct.pack("<3f", *n.astype(np.float32)))
        for p in (p0, p1, p2):
            parts.append(struct.pack("<3f", *p.astype(np.float32)))
        parts.append(struct.pack("<H", 0))
    return b"".join(parts)
