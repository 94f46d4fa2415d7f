"""On-disk formats for images, ground truth and metric tables.

Every writer goes through a temporary file (or directory) that is renamed into
place only once it is complete, so a failed command leaves nothing behind.
"""

import csv
import io
import json
import os
import shutil
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np
from PIL import Image

from facecascade.errors import DimensionError, FaceCascadeError


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


#: written into every output directory a command creates, so reruns may replace it
OUTPUT_MARKER = "manifest.json"


@contextmanager
def staged_directory(target):
    """Yield a fresh temporary directory that replaces ``target`` on success.

    An existing ``target`` is only replaced if it holds :data:`OUTPUT_MARKER`
    (i.e. came from an earlier run); anything else is refused.
    """
    target = Path(target)
    if target.exists() and any(target.iterdir()) and not (target / OUTPUT_MARKER).exists():
        raise FaceCascadeError(f"output directory {target} exists and was not written by this tool")
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))
    try:
        yield tmp
        if target.exists():
            shutil.rmtree(target)
        os.replace(tmp, target)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


# ------------------------------------------------------------------ images


def quantize(image) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path, image) -> None:
    buf = io.BytesIO()
    Image.fromarray(quantize(image), mode="L").save(buf, format="PPM")
    atomic_write_bytes(path, buf.getvalue())


def read_pgm(path) -> np.ndarray:
    """Grayscale image as floats in [0, 1]."""
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "I", "I;16"):
                im = im.convert("L")
            arr = np.asarray(im, dtype=np.float64)
    except OSError as exc:
        raise FaceCascadeError(f"cannot read image {path}: {exc}") from exc
    return arr / (255.0 if arr.max(initial=0) <= 255 else 65535.0)


# ------------------------------------------------------------ numeric tables


def format_matrix(rows, header: dict) -> str:
    """Whitespace-separated rows under ``# key = value`` header lines."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    lines = [f"# {k} = {v}" for k, v in header.items()]
    lines += [" ".join(repr(float(x)) for x in row) for row in rows]
    return "\n".join(lines) + "\n"


def write_matrix(path, rows, header: dict) -> None:
    atomic_write_text(path, format_matrix(rows, header))


def read_matrix(path, expect_cols: int = None):
    """Return ``(rows, header)``; header values stay strings."""
    header, rows = {}, []
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FaceCascadeError(f"cannot read {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            header[key.strip()] = value.strip()
            continue
        try:
            rows.append([float(x) for x in line.split()])
        except ValueError as exc:
            raise FaceCascadeError(f"{path}:{lineno}: not a numeric row") from exc
    if rows and len({len(r) for r in rows}) != 1:
        raise DimensionError(f"{path}: rows have different lengths")
    arr = np.array(rows, dtype=np.float64)
    if expect_cols is not None and arr.size and arr.shape[1] != expect_cols:
        raise DimensionError(f"{path}: expected {expect_cols} columns, found {arr.shape[1]}")
    return arr, header


def format_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return buf.getvalue()


def write_csv(path, header, rows) -> None:
    atomic_write_text(path, format_csv(header, rows))


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [row for row in reader]


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise FaceCascadeError(f"cannot read {path}: {exc}") from exc
