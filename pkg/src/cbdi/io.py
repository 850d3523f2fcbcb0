"""Output formats: path CSV, fixed-precision JSON and a binary frame format.

Binary layout (little-endian)::

    b"CBDI"  u16 version  u32 n_frames
    frame := u8 kind  u16 name_len  name (utf-8)  u64 count  payload

``kind`` 0 is an f64 array of ``count`` values, kind 1 a utf-8 text of
``count`` bytes (used for the provenance record).
"""

import hashlib
import json
import math
import struct

import numpy as np

MAGIC = b"CBDI"
VERSION = 1
F64, TEXT = 0, 1
PROVENANCE_TAG = "# cbdi-provenance "


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------

def _num(v, digits):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return '"nan"'
    if math.isinf(v):
        return '"inf"' if v > 0 else '"-inf"'
    s = f"{v:.{digits}g}"
    if "e" not in s and "." not in s and "n" not in s:
        s += ".0"
    return s


def dumps(obj, digits=17, indent=None, _level=0):
    """JSON text with every float printed to ``digits`` significant digits."""
    pad = "" if indent is None else "\n" + " " * (indent * (_level + 1))
    end = "" if indent is None else "\n" + " " * (indent * _level)
    sep = ", " if indent is None else ","
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_, int, float, np.integer, np.floating)):
        return _num(obj, digits)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, digits, indent, _level + 1)}"
                 for k, v in obj.items()]
        return "{" + sep.join(items) + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = obj.tolist() if isinstance(obj, np.ndarray) else obj
        if not seq:
            return "[]"
        items = [pad + dumps(v, digits, indent, _level + 1) for v in seq]
        return "[" + sep.join(items) + end + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def canonical(obj):
    """Key-sorted compact JSON used for hashing configurations."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def config_hash(cfg):
    return hashlib.sha256(canonical(cfg).encode()).hexdigest()


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def _g9(v):
    v = float(v)
    if math.isinf(v):
        return "inf"
    return f"{v:.9g}"


def path_rows(path_id, times, values, status, event_time):
    """CSV rows ``path_id,t,x,status`` for one path.

    The status column reads ``Alive`` before the absorbing event and the
    final status from the event time on.
    """
    out = []
    for t, x in zip(times, values):
        st = status if status != "Alive" and t >= event_time else "Alive"
        out.append(f"{path_id},{_g9(t)},{_g9(x)},{st}")
    return out


def header_lines(provenance):
    """Comment lines carrying the provenance record in a CSV file."""
    return [PROVENANCE_TAG + canonical(provenance)]


def read_csv_provenance(text):
    for line in text.splitlines():
        if line.startswith(PROVENANCE_TAG):
            return json.loads(line[len(PROVENANCE_TAG):])
        if not line.startswith("#"):
            break
    return None


def csv_table(columns, rows):
    """Plain CSV with 9 significant digits."""
    lines = [",".join(columns)]
    for r in rows:
        lines.append(",".join(_g9(v) if isinstance(v, (float, np.floating)) else str(v)
                              for v in r))
    return lines


# ---------------------------------------------------------------------------
# binary frames
# ---------------------------------------------------------------------------

def write_frames(fp, frames):
    """Write ``[(name, payload)]``; payloads are arrays or strings."""
    fp.write(MAGIC)
    fp.write(struct.pack("<HI", VERSION, len(frames)))
    for name, payload in frames:
        nb = name.encode()
        if isinstance(payload, str):
            data = payload.encode()
            fp.write(struct.pack("<BH", TEXT, len(nb)) + nb + struct.pack("<Q", len(data)))
            fp.write(data)
        else:
            arr = np.ascontiguousarray(payload, dtype="<f8").ravel()
            fp.write(struct.pack("<BH", F64, len(nb)) + nb + struct.pack("<Q", arr.size))
            fp.write(arr.tobytes())


def read_frames(fp):
    """Inverse of :func:`write_frames`; returns a list of ``(name, payload)``."""
    if fp.read(4) != MAGIC:
        raise ValueError("not a CBDI binary file")
    version, n = struct.unpack("<HI", fp.read(6))
    if version != VERSION:
        raise ValueError(f"unsupported CBDI binary version {version}")
    frames = []
    for _ in range(n):
        kind, ln = struct.unpack("<BH", fp.read(3))
        name = fp.read(ln).decode()
        (count,) = struct.unpack("<Q", fp.read(8))
        if kind == TEXT:
            frames.append((name, fp.read(count).decode()))
        elif kind == F64:
            frames.append((name, np.frombuffer(fp.read(8 * count), dtype="<f8").copy()))
        else:
            raise ValueError(f"unknown frame kind {kind}")
    return frames
