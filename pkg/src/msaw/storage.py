"""File formats and atomic writes.

Binary field layout (little endian)::

    8s   magic b"MSAWFLD1"
    u4   d
    u4   L
    u4   tag code (index into ``gibbs.TAGS``)
    u8   seed
    f8 * L^d values in row-major site order

A walker dump appends a second header after the field: ``f8 t``,
``i8 * d X``, ``u8 jump_count``, ``u4 n`` and ``n`` bytes of JSON holding the
bit-generator state.
"""
from __future__ import annotations

import contextlib
import csv
import io
import json
import os
import struct
import tempfile

import numpy as np

from .gibbs import TAGS, TorusField
from .lattice import Torus

MAGIC = b"MSAWFLD1"
_HEAD = struct.Struct("<8sIIIQ")


@contextlib.contextmanager
def atomic_open(path, mode: str = "w", **kw):
    """Write to a sibling temp file and rename it over ``path`` on success."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode, **kw) as fh:
            yield fh
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_bytes(path, data: bytes):
    with atomic_open(path, "wb") as fh:
        fh.write(data)


def write_text(path, text: str):
    with atomic_open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def dumps_json(obj) -> str:
    """Canonical JSON: sorted keys, fixed separators, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def write_json(path, obj):
    write_text(path, dumps_json(obj))


# ---------------------------------------------------------------------------
# fields


def field_to_bytes(f: TorusField) -> bytes:
    head = _HEAD.pack(MAGIC, f.torus.d, f.torus.L, TAGS.index(f.tag), int(f.seed) & (2**64 - 1))
    return head + np.ascontiguousarray(f.values, dtype="<f8").tobytes()


def _field_from_buffer(buf: bytes, offset: int = 0, check_mean: bool = True):
    magic, d, L, tag, seed = _HEAD.unpack_from(buf, offset)
    if magic != MAGIC:
        raise ValueError("not a field file")
    n = L**d
    start = offset + _HEAD.size
    vals = np.frombuffer(buf, dtype="<f8", count=n, offset=start).astype(float).reshape((L,) * d)
    torus = Torus(d, L)
    end = start + 8 * n
    if check_mean:
        return TorusField(torus, vals, TAGS[tag], seed), end
    return (torus, vals, TAGS[tag], seed), end


def field_from_bytes(buf: bytes) -> TorusField:
    f, end = _field_from_buffer(buf)
    if end != len(buf):
        raise ValueError("trailing bytes after field")
    return f


def save_field(path, f: TorusField):
    write_bytes(path, field_to_bytes(f))


def load_field(path) -> TorusField:
    with open(path, "rb") as fh:
        return field_from_bytes(fh.read())


def field_to_csv(f: TorusField) -> str:
    """One row per site: coordinates then value."""
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow([f"x{i}" for i in range(f.torus.d)] + ["value"])
    for idx in np.ndindex(*f.torus.shape):
        w.writerow([*idx, repr(float(f.values[idx]))])
    return out.getvalue()


# ---------------------------------------------------------------------------
# walker dumps


def walker_to_bytes(local_time: np.ndarray, torus: Torus, t: float, X, jump_count: int,
                    rng_state: dict, seed: int = 0) -> bytes:
    """Local time is absolute (not mean-zero), so it is stored with the dynamics tag."""
    head = _HEAD.pack(MAGIC, torus.d, torus.L, TAGS.index("dynamics"), int(seed) & (2**64 - 1))
    body = np.ascontiguousarray(local_time, dtype="<f8").tobytes()
    st = json.dumps(rng_state, sort_keys=True, default=_json_default).encode()
    tail = struct.pack("<d", t) + np.asarray(X, dtype="<i8").tobytes() + struct.pack("<QI", jump_count, len(st)) + st
    return head + body + tail


def walker_from_bytes(buf: bytes) -> dict:
    (torus, vals, tag, seed), off = _field_from_buffer(buf, check_mean=False)
    (t,) = struct.unpack_from("<d", buf, off)
    off += 8
    X = np.frombuffer(buf, dtype="<i8", count=torus.d, offset=off).astype(np.int64)
    off += 8 * torus.d
    jumps, n = struct.unpack_from("<QI", buf, off)
    off += 12
    state = json.loads(buf[off : off + n].decode())
    if off + n != len(buf):
        raise ValueError("trailing bytes after walker dump")
    return {"torus": torus, "local_time": vals, "seed": seed, "t": t, "X": X, "jump_count": jumps, "rng_state": state}


# ---------------------------------------------------------------------------
# tables


def jsonl_lines(records) -> str:
    return "".join(json.dumps(r, sort_keys=True, default=_json_default) + "\n" for r in records)


def read_jsonl(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def csv_table(header, rows) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return out.getvalue()
