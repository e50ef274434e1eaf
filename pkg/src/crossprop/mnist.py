"""Reader and writer for the IDX files MNIST ships in, plus label shifting."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049
ROWS = COLS = 28
NUM_CLASSES = 10


class IdxParseError(ValueError):
    """Malformed IDX stream; ``offset`` is the byte position where parsing failed."""

    def __init__(self, message: str, offset: int, source: str | None = None):
        self.offset = offset
        self.source = source
        where = f"{source}: " if source else ""
        super().__init__(f"{where}{message} (at byte offset {offset})")


@dataclass(frozen=True, eq=False)
class ImageSet:
    """Images as raw bytes, shape (count, rows * cols). ``pixels`` gives them scaled to [0, 1]."""

    data: np.ndarray
    rows: int = ROWS
    cols: int = COLS

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @property
    def pixels(self) -> np.ndarray:
        return self.data / 255.0

    def image(self, i: int) -> np.ndarray:
        return self.data[i] / 255.0

    def __len__(self):
        return self.count

    def __eq__(self, other):
        return (isinstance(other, ImageSet) and (self.rows, self.cols) == (other.rows, other.cols)
                and np.array_equal(self.data, other.data))


@dataclass(frozen=True, eq=False)
class LabelSet:
    labels: np.ndarray

    @property
    def count(self) -> int:
        return self.labels.shape[0]

    def __len__(self):
        return self.count

    def __eq__(self, other):
        return isinstance(other, LabelSet) and np.array_equal(self.labels, other.labels)


def _header(buf: bytes, fields: int, magic: int, source):
    need = 4 * fields
    if len(buf) < need:
        raise IdxParseError(f"truncated header: need {need} bytes, have {len(buf)}", len(buf), source)
    values = struct.unpack(f">{fields}I", buf[:need])
    if values[0] != magic:
        raise IdxParseError(f"bad magic number {values[0]:#010x}, expected {magic:#010x}", 0, source)
    return values


def _payload(buf: bytes, start: int, size: int, source):
    have = len(buf) - start
    if have < size:
        raise IdxParseError(f"truncated payload: expected {size} bytes, found {have}", len(buf), source)
    if have > size:
        raise IdxParseError(f"{have - size} unexpected trailing bytes", start + size, source)
    return np.frombuffer(buf, dtype=np.uint8, count=size, offset=start)


def parse_idx_images(buf: bytes, source: str | None = None) -> ImageSet:
    _, count, rows, cols = _header(buf, 4, IMAGE_MAGIC, source)
    if rows != ROWS:
        raise IdxParseError(f"expected {ROWS} rows, header says {rows}", 8, source)
    if cols != COLS:
        raise IdxParseError(f"expected {COLS} columns, header says {cols}", 12, source)
    data = _payload(buf, 16, count * rows * cols, source).reshape(count, rows * cols).copy()
    data.setflags(write=False)
    return ImageSet(data, rows, cols)


def parse_idx_labels(buf: bytes, source: str | None = None) -> LabelSet:
    _, count = _header(buf, 2, LABEL_MAGIC, source)
    labels = _payload(buf, 8, count, source)
    bad = np.flatnonzero(labels >= NUM_CLASSES)
    if bad.size:
        i = int(bad[0])
        raise IdxParseError(f"label {labels[i]} out of range 0-{NUM_CLASSES - 1}", 8 + i, source)
    labels = labels.astype(np.int64)
    labels.setflags(write=False)
    return LabelSet(labels)


def images_to_idx(images: ImageSet) -> bytes:
    head = struct.pack(">4I", IMAGE_MAGIC, images.count, images.rows, images.cols)
    return head + np.ascontiguousarray(images.data, dtype=np.uint8).tobytes()


def labels_to_idx(labels: LabelSet) -> bytes:
    return struct.pack(">2I", LABEL_MAGIC, labels.count) + labels.labels.astype(np.uint8).tobytes()


def _read(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def load_images(path) -> ImageSet:
    return parse_idx_images(_read(path), str(path))


def load_labels(path) -> LabelSet:
    return parse_idx_labels(_read(path), str(path))


def load_mnist(images_path, labels_path):
    images, labels = load_images(images_path), load_labels(labels_path)
    if images.count != labels.count:
        raise IdxParseError(f"{images.count} images but {labels.count} labels", 4, str(labels_path))
    return images, labels


def shift_labels(labels: LabelSet, shift: int) -> LabelSet:
    """Add ``shift`` to every label modulo 10, so 9 shifted by one wraps to 0."""
    out = (labels.labels + int(shift)) % NUM_CLASSES
    out.setflags(write=False)
    return LabelSet(out)
