"""Binary and line-delimited file formats.

All binary formats are little-endian: a 4-byte magic, a u32 format
version, then format-specific header fields and payload.

    CSRC  codebook     u32 d, u32 L, u32 k; L*k*d f32 (layer, centroid major)
    QCOD  codes        u32 L, u64 count; per item u64 id, L u32 codes, L f32 projections
    MIDX  index        u32 d, u64 count; per item u64 id, d f32
    EMBT  embeddings   u32 d, u64 count; per item u64 id, d f32
    HMCK  checkpoint   u32 metadata length + UTF-8 JSON, u32 tensor count; per tensor
                       u32 name length + name, u32 ndim, ndim*u32 shape,
                       u8 dtype (0=f32, 1=f64), row-major data
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .codebook import QuantCodes, ResidualCodebook
from .exceptions import DataError

VERSION = 1


def _unpack(f, fmt, path):
    size = struct.calcsize(fmt)
    raw = f.read(size)
    if len(raw) != size:
        raise DataError(f"{path}: truncated header")
    return struct.unpack(fmt, raw)


def _read_records(f, dtype, n, path):
    raw = f.read()
    if len(raw) != n * dtype.itemsize:
        raise DataError(f"{path}: expected {n} records of {dtype.itemsize} bytes, "
                        f"found {len(raw)} payload bytes")
    return np.frombuffer(raw, dtype=dtype)


def _read_header(f, magic, path):
    got = f.read(4)
    if got != magic:
        raise DataError(f"{path}: bad magic {got!r}, expected {magic!r}")
    (version,) = _unpack(f, "<I", path)
    if version != VERSION:
        raise DataError(f"{path}: unsupported version {version}")


def _id_vector_dtype(d):
    return np.dtype([("id", "<u8"), ("vec", "<f4", (d,))])


# -- codebook ---------------------------------------------------------------

def save_codebook(path, cb: ResidualCodebook):
    L, k, d = cb.centroids.shape
    with open(path, "wb") as f:
        f.write(b"CSRC" + struct.pack("<IIII", VERSION, d, L, k))
        f.write(cb.centroids.astype("<f4").tobytes())


def load_codebook(path, metric="cosine") -> ResidualCodebook:
    with open(path, "rb") as f:
        _read_header(f, b"CSRC", path)
        d, L, k = _unpack(f, "<III", path)
        data = _read_records(f, np.dtype("<f4"), L * k * d, path)
    return ResidualCodebook(data.reshape(L, k, d).astype(np.float64), metric)


# -- codes ------------------------------------------------------------------

def save_codes(path, item_ids, q: QuantCodes):
    n, L = q.codes.shape
    dt = np.dtype([("id", "<u8"), ("codes", "<u4", (L,)), ("proj", "<f4", (L,))])
    rec = np.empty(n, dtype=dt)
    rec["id"] = item_ids
    rec["codes"] = q.codes
    rec["proj"] = q.projections
    with open(path, "wb") as f:
        f.write(b"QCOD" + struct.pack("<IIQ", VERSION, L, n))
        f.write(rec.tobytes())


def load_codes(path):
    """Returns (item_ids, QuantCodes)."""
    with open(path, "rb") as f:
        _read_header(f, b"QCOD", path)
        L, n = _unpack(f, "<IQ", path)
        dt = np.dtype([("id", "<u8"), ("codes", "<u4", (L,)), ("proj", "<f4", (L,))])
        rec = _read_records(f, dt, n, path)
    return (rec["id"].astype(np.int64),
            QuantCodes(rec["codes"].astype(np.int64), rec["proj"].astype(np.float64)))


# -- id + vector tables -------------------------------------------------------

def _save_table(path, magic, ids, vectors):
    vectors = np.asarray(vectors)
    n, d = vectors.shape
    rec = np.empty(n, dtype=_id_vector_dtype(d))
    rec["id"] = ids
    rec["vec"] = vectors
    with open(path, "wb") as f:
        f.write(magic + struct.pack("<IIQ", VERSION, d, n))
        f.write(rec.tobytes())


def _load_table(path, magic):
    with open(path, "rb") as f:
        _read_header(f, magic, path)
        d, n = _unpack(f, "<IQ", path)
        rec = _read_records(f, _id_vector_dtype(d), n, path)
    return rec["id"].astype(np.int64), rec["vec"].astype(np.float64).reshape(n, d)


def save_embeddings(path, ids, vectors):
    _save_table(path, b"EMBT", ids, vectors)


def load_embeddings(path):
    """Returns (item_ids, embeddings (N, d))."""
    return _load_table(path, b"EMBT")


def save_index(path, index):
    _save_table(path, b"MIDX", index.item_ids, index.embeddings)


def load_index(path):
    from .retrieval import RetrievalIndex
    ids, E = _load_table(path, b"MIDX")
    return RetrievalIndex(ids, E)


# -- checkpoint ---------------------------------------------------------------

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def save_checkpoint(path, tensors: dict, metadata: dict, dtype="f32"):
    """Write named tensors. ``dtype`` is "f32" (the default) or "f64"."""
    code = 0 if dtype == "f32" else 1
    meta = json.dumps(metadata, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(b"HMCK" + struct.pack("<II", VERSION, len(meta)) + meta)
        f.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype=_DTYPES[code])
            raw = name.encode()
            f.write(struct.pack("<I", len(raw)) + raw)
            f.write(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(struct.pack("<B", code) + arr.tobytes())


def load_checkpoint(path):
    """Returns (tensors dict of float64 arrays, metadata dict)."""
    with open(path, "rb") as f:
        _read_header(f, b"HMCK", path)
        (mlen,) = _unpack(f, "<I", path)
        try:
            metadata = json.loads(f.read(mlen).decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}: bad checkpoint metadata ({exc})") from None
        (count,) = _unpack(f, "<I", path)
        tensors = {}
        for _ in range(count):
            (nlen,) = _unpack(f, "<I", path)
            name = f.read(nlen).decode()
            (ndim,) = _unpack(f, "<I", path)
            shape = _unpack(f, f"<{ndim}I", path)
            (code,) = _unpack(f, "<B", path)
            if code not in _DTYPES:
                raise DataError(f"{path}: unknown dtype code {code} for {name!r}")
            dt = _DTYPES[code]
            size = int(np.prod(shape)) if ndim else 1
            raw = f.read(size * dt.itemsize)
            if len(raw) != size * dt.itemsize:
                raise DataError(f"{path}: truncated tensor {name!r}")
            tensors[name] = np.frombuffer(raw, dtype=dt).reshape(shape).astype(np.float64)
    return tensors, metadata


# -- line-delimited JSON -------------------------------------------------------

def write_jsonl(path, records, append=False):
    with open(path, "a" if append else "w") as f:
        for r in records:
            f.write(json.dumps(r, sort_keys=True) + "\n")


def read_jsonl(path):
    out = []
    with open(path) as f:
        for n, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{n}: {exc}") from exc
    return out


def save_sequences(path, sequences):
    write_jsonl(path, ({"user_id": int(s.user_id), "item_ids": [int(i) for i in s.item_ids]}
                       for s in sequences))


def load_sequences(path):
    from .eval.data import UserSequence
    recs = read_jsonl(path)
    try:
        return [UserSequence(int(r["user_id"]), [int(i) for i in r["item_ids"]]) for r in recs]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed sequence record ({exc})") from exc


def file_digest(*paths):
    """Content hash over input files, for run metadata."""
    import hashlib
    h = hashlib.sha256()
    for p in paths:
        h.update(Path(p).read_bytes())
    return h.hexdigest()
