"""Binary model file.

Layout (all integers and floats little-endian)::

    magic      8 bytes  b"FCASCADE"
    version    u32
    byteorder  u32      0x01020304, lets a reader spot a byte-swapped file
    n_sections u32
    n_sections times:
        tag      8 bytes  ASCII, space padded ("MODEL", "CAMERA", "CASCADE", "STAGE000", ...)
        length   u64      payload bytes
        crc32    u32      of the payload
        payload  records until the payload is used up, each:
            name_len u16, name (UTF-8)
            kind     u8   0 float64, 1 int64, 2 UTF-8 string
            ndim     u8
            dims     u64 * ndim
            data     product(dims) * 8 bytes (kind 0/1), or dims[0] bytes (kind 2)

Every array is stored with its full shape, so the reader never infers a
dimension. Files are written to a temporary name and renamed into place.
"""

import struct
import zlib

import numpy as np

from facecascade.cascade import CascadeModel, FeatureIndexer
from facecascade.errors import ModelFormatError
from facecascade.ferns import BoostedFerns, Fern
from facecascade.fileio import atomic_write_bytes
from facecascade.gombf import GoMBFModel, ModalityLayout
from facecascade.shape_model import Camera, ParametricShapeModel

MAGIC = b"FCASCADE"
FORMAT_VERSION = 1
_BYTE_ORDER_MARK = 0x01020304
_HEADER = struct.Struct("<8sIII")
_SECTION = struct.Struct("<8sQI")
_F64, _I64, _STR = 0, 1, 2


# ------------------------------------------------------------------ records


def _pack_records(records) -> bytes:
    out = bytearray()
    for name, value in records:
        key = name.encode("utf-8")
        out += struct.pack("<H", len(key)) + key
        if isinstance(value, str):
            data = value.encode("utf-8")
            out += struct.pack("<BBQ", _STR, 1, len(data)) + data
            continue
        arr = np.asarray(value)
        if arr.dtype.kind == "f":
            kind, arr = _F64, arr.astype("<f8")
        elif arr.dtype.kind in "iub":
            kind, arr = _I64, arr.astype("<i8")
        else:
            raise TypeError(f"cannot store {arr.dtype} array {name!r}")
        out += struct.pack("<BB", kind, arr.ndim)
        out += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        out += np.ascontiguousarray(arr).tobytes()
    return bytes(out)


def _unpack_records(payload: bytes, section: str) -> dict:
    records = {}
    pos = 0
    n = len(payload)

    def take(size):
        nonlocal pos
        if pos + size > n:
            raise ModelFormatError(f"section {section}: record runs past the end of the section")
        chunk = payload[pos:pos + size]
        pos += size
        return chunk

    while pos < n:
        (klen,) = struct.unpack("<H", take(2))
        name = take(klen).decode("utf-8")
        kind, ndim = struct.unpack("<BB", take(2))
        dims = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        if kind == _STR:
            records[name] = take(dims[0]).decode("utf-8")
        elif kind in (_F64, _I64):
            count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
            dtype = "<f8" if kind == _F64 else "<i8"
            arr = np.frombuffer(take(8 * count), dtype=dtype).reshape(dims)
            records[name] = arr.astype(np.float64 if kind == _F64 else np.int64)
        else:
            raise ModelFormatError(f"section {section}: unknown record kind {kind} for {name!r}")
    return records


def _need(records, section, *names):
    missing = [k for k in names if k not in records]
    if missing:
        raise ModelFormatError(f"section {section}: missing record(s) {', '.join(missing)}")
    return [records[k] for k in names]


# ---------------------------------------------------------------- sections


def _model_records(m: ParametricShapeModel):
    return [
        ("identity_basis", m.identity_basis),
        ("expression_basis", m.expression_basis),
        ("landmark_indices", m.landmark_indices),
        ("interocular_pair", np.array(m.interocular_pair)),
    ]


def _stage_records(indexer: FeatureIndexer, reg: GoMBFModel):
    recs = [
        ("reference_landmarks", indexer.reference_landmarks),
        ("triangles", indexer.triangles),
        ("point_triangle", indexer.point_triangle),
        ("barycentric", indexer.barycentric),
        ("group_names", "\n".join(g.name for g in reg.layout.groups)),
        ("group_widths", np.array([g.width for g in reg.layout.groups])),
        ("group_ferns", np.array([g.n_ferns for g in reg.layout.groups])),
        ("fused", np.array(int(reg.fused))),
        ("fused_leaves", reg.fused_leaves),
    ]
    for k, bf in enumerate(reg.group_models):
        pix_i, pix_j, thr = bf.stacked_tests
        recs += [
            (f"g{k}.pix_i", pix_i),
            (f"g{k}.pix_j", pix_j),
            (f"g{k}.thresholds", thr),
            (f"g{k}.leaves", np.stack([f.leaves for f in bf.ferns])),
        ]
    return recs


def _read_stage(rec, section):
    ref, tris, owner, bary, names, widths, counts, fused, W = _need(
        rec, section, "reference_landmarks", "triangles", "point_triangle", "barycentric",
        "group_names", "group_widths", "group_ferns", "fused", "fused_leaves",
    )
    indexer = FeatureIndexer(ref, tris, owner, bary)
    layout = ModalityLayout.from_widths(widths.tolist(), counts.tolist(), names.split("\n"))
    groups = []
    for k in range(len(layout.groups)):
        pix_i, pix_j, thr, leaves = _need(rec, section, f"g{k}.pix_i", f"g{k}.pix_j", f"g{k}.thresholds",
                                          f"g{k}.leaves")
        ferns = tuple(Fern(pix_i[f], pix_j[f], thr[f], leaves[f], indexer.n_points) for f in range(pix_i.shape[0]))
        groups.append(BoostedFerns(ferns))
    return indexer, GoMBFModel(layout, tuple(groups), W, bool(int(fused)))


def serialize_model(cascade: CascadeModel) -> bytes:
    """Encode a trained cascade in the documented byte layout."""
    cam = cascade.camera
    sections = [
        ("MODEL", _model_records(cascade.shape_model)),
        ("CAMERA", [("f_u0_v0", np.array([cam.f, cam.u0, cam.v0], dtype=np.float64))]),
        ("CASCADE", [
            ("mode", cascade.mode),
            ("n_inits", np.array(cascade.n_inits)),
            ("n_stages", np.array(cascade.n_stages)),
            ("bank_delta", cascade.bank_delta),
        ]),
    ]
    for t, (indexer, reg) in enumerate(cascade.stages):
        sections.append((f"STAGE{t:03d}", _stage_records(indexer, reg)))
    out = bytearray(_HEADER.pack(MAGIC, FORMAT_VERSION, _BYTE_ORDER_MARK, len(sections)))
    for tag, records in sections:
        payload = _pack_records(records)
        out += _SECTION.pack(tag.encode("ascii").ljust(8), len(payload), zlib.crc32(payload))
        out += payload
    return bytes(out)


def deserialize_model(data: bytes) -> CascadeModel:
    """Decode :func:`serialize_model` output, checking every section's integrity."""
    if len(data) < _HEADER.size:
        raise ModelFormatError("section header: file is shorter than the file header")
    magic, version, bom, n_sections = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ModelFormatError("section header: not a model file (bad magic)")
    if bom != _BYTE_ORDER_MARK:
        raise ModelFormatError("section header: byte-order mark mismatch")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"section header: unsupported format version {version} (expected {FORMAT_VERSION})")
    pos = _HEADER.size
    sections = []
    for k in range(n_sections):
        if pos + _SECTION.size > len(data):
            raise ModelFormatError(f"section #{k}: truncated before its header")
        tag, length, crc = _SECTION.unpack_from(data, pos)
        name = tag.decode("ascii", "replace").strip()
        pos += _SECTION.size
        payload = data[pos:pos + length]
        if len(payload) != length:
            raise ModelFormatError(f"section {name}: truncated ({len(payload)} of {length} bytes)")
        if zlib.crc32(payload) != crc:
            raise ModelFormatError(f"section {name}: checksum mismatch")
        sections.append((name, _unpack_records(payload, name)))
        pos += length
    if pos != len(data):
        raise ModelFormatError(f"section trailer: {len(data) - pos} unexpected bytes after the last section")
    by_name = dict(sections)
    for required in ("MODEL", "CAMERA", "CASCADE"):
        if required not in by_name:
            raise ModelFormatError(f"section {required}: missing")
    id_b, ex_b, lms, pair = _need(by_name["MODEL"], "MODEL", "identity_basis", "expression_basis",
                                  "landmark_indices", "interocular_pair")
    model = ParametricShapeModel(id_b, ex_b, lms, tuple(int(v) for v in pair))
    (cam,) = _need(by_name["CAMERA"], "CAMERA", "f_u0_v0")
    camera = Camera(float(cam[0]), float(cam[1]), float(cam[2]))
    mode, n_inits, n_stages, bank = _need(by_name["CASCADE"], "CASCADE", "mode", "n_inits", "n_stages",
                                          "bank_delta")
    stages = []
    for t in range(int(n_stages)):
        tag = f"STAGE{t:03d}"
        if tag not in by_name:
            raise ModelFormatError(f"section {tag}: missing")
        try:
            stages.append(_read_stage(by_name[tag], tag))
        except ModelFormatError:
            raise
        except Exception as exc:  # inconsistent dimensions inside an intact section
            raise ModelFormatError(f"section {tag}: {exc}") from exc
    return CascadeModel(model, camera, tuple(stages), bank, int(n_inits), mode)


def save_model(cascade: CascadeModel, path) -> None:
    atomic_write_bytes(path, serialize_model(cascade))


def load_model(path) -> CascadeModel:
    with open(path, "rb") as fh:
        return deserialize_model(fh.read())
