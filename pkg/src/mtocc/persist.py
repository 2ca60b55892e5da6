"""Binary model files.

Layout (little-endian)::

    b"MTOC" | u16 version | u32 entry count | entries... | sha256 digest

Each entry is ``u16 name length, name (utf-8), u8 kind`` followed by either
an array (kind 0: ``u8 ndim, u64 shape[ndim], f64 data`` in C order) or a
text blob (kind 1: ``u64 length, utf-8 bytes``). The digest covers every
preceding byte.
"""

import hashlib
import json
import struct

import numpy as np

from .errors import CorruptionError, MigrationError, PersistenceError
from .model import LINEAR, NONLINEAR, SPARSE, VARIANTS, TrainedModel, TrainingTrace

MAGIC = b"MTOC"
VERSION = 1
_DIGEST = 32
_ARRAYS = ("A", "B", "Y", "X_train", "target_means", "theta", "sigma")


def _pack_name(name):
    raw = name.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def _pack_array(name, arr):
    arr = np.array(arr, dtype="<f8", order="C")  # keeps 0-d scalars 0-d
    head = _pack_name(name) + struct.pack("<BB", 0, arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.tobytes()


def _pack_text(name, text):
    raw = text.encode("utf-8")
    return _pack_name(name) + struct.pack("<BQ", 1, len(raw)) + raw


def dumps(model):
    entries = []
    for name in _ARRAYS:
        value = getattr(model, name)
        if value is not None:
            entries.append(_pack_array(name, np.asarray(value, dtype=np.float64)))
    meta = {
        "variant": model.variant,
        "fingerprint": model.fingerprint,
        "trace": model.trace.to_dict(),
    }
    entries.append(_pack_text("meta", json.dumps(meta, sort_keys=True)))
    body = MAGIC + struct.pack("<HI", VERSION, len(entries)) + b"".join(entries)
    return body + hashlib.sha256(body).digest()


def persist_model(model, path):
    try:
        with open(path, "wb") as fh:
            fh.write(dumps(model))
    except OSError as exc:
        raise PersistenceError(f"cannot write model to {path}: {exc}") from exc


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CorruptionError("model file is truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(buf):
    if len(buf) < 10 or buf[:4] != MAGIC:
        raise CorruptionError("not a model file (bad magic bytes)")
    (version,) = struct.unpack("<H", buf[4:6])
    if version != VERSION:
        raise MigrationError(version, VERSION)
    if len(buf) < 10 + _DIGEST:
        raise CorruptionError("model file is truncated")
    body, digest = buf[:-_DIGEST], buf[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptionError("checksum mismatch (truncated or corrupted file)")

    rd = _Reader(body)
    rd.take(6)
    (count,) = rd.unpack("<I")
    arrays, meta = {}, None
    for _ in range(count):
        (nlen,) = rd.unpack("<H")
        name = rd.take(nlen).decode("utf-8")
        (kind,) = rd.unpack("<B")
        if kind == 0:
            (ndim,) = rd.unpack("<B")
            shape = rd.unpack(f"<{ndim}Q")
            size = int(np.prod(shape, dtype=np.int64))
            data = np.frombuffer(rd.take(8 * size), dtype="<f8")
            arrays[name] = data.reshape(shape).astype(np.float64)
        elif kind == 1:
            (tlen,) = rd.unpack("<Q")
            meta = json.loads(rd.take(tlen).decode("utf-8"))
        else:
            raise CorruptionError(f"unknown entry kind {kind}")
    if rd.pos != len(body):
        raise CorruptionError("trailing bytes after last entry")
    if meta is None or "A" not in arrays:
        raise CorruptionError("model file lacks required entries")

    model = TrainedModel(
        variant=meta["variant"],
        A=arrays["A"],
        B=arrays.get("B"),
        Y=arrays.get("Y"),
        X_train=arrays.get("X_train"),
        target_means=arrays.get("target_means"),
        theta=float(arrays["theta"]) if "theta" in arrays else None,
        sigma=float(arrays["sigma"]) if "sigma" in arrays else None,
        trace=TrainingTrace.from_dict(meta.get("trace", {})),
        fingerprint=meta.get("fingerprint", ""),
    )
    _validate(model)
    return model


def _validate(model):
    fp = model.fingerprint
    if fp and (len(fp) != 64 or any(c not in "0123456789abcdef" for c in fp)):
        raise CorruptionError("malformed config fingerprint")
    if model.variant not in VARIANTS:
        raise CorruptionError(f"unknown variant {model.variant!r}")
    n, T = model.A.shape
    if model.variant == LINEAR and (model.B is None or model.B.shape != (T, T)):
        raise CorruptionError("linear model needs a T x T structure matrix")
    if model.variant in (NONLINEAR, SPARSE):
        if model.B is None or model.B.shape != (n, T) or model.Y is None:
            raise CorruptionError("non-linear model needs B (n x T) and Y")
        if model.Y.shape != (n, T) or model.theta is None:
            raise CorruptionError("non-linear model needs Y (n x T) and theta")
    if model.X_train is not None and model.X_train.shape[0] != n:
        raise CorruptionError("training features do not match coefficients")
    if model.target_means is not None and model.target_means.shape != (T,):
        raise CorruptionError("scoring references do not match task count")


def load_model(path):
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise PersistenceError(f"cannot read model from {path}: {exc}") from exc
    return loads(buf)
