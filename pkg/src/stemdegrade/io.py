"""File formats: ATDF tensors, 16-bit PGM, estimate JSON and run manifests."""
from __future__ import annotations

import csv
import json
import math
import re
from pathlib import Path

import numpy as np

from .direct import Estimate
from .errors import DimensionError, FormatError
from .imaging import AffineParams

ATDF_MAGIC = b"ATDF1\n"
ESTIMATE_KEYS = ("theta_deg", "tx_px", "ty_px", "residual", "converged", "iterations",
                 "valid_fraction", "decay_path")


def write_atdf(path, arr) -> None:
    """Write a (h, w) or (h, w, c) array as float32 little-endian, channel-interleaved."""
    a = np.asarray(arr)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3:
        raise DimensionError(f"expected a 2-D or 3-D array, got shape {a.shape}")
    h, w, c = a.shape
    with open(path, "wb") as fh:
        fh.write(ATDF_MAGIC)
        fh.write(f"{h} {w} {c}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def read_atdf(path) -> np.ndarray:
    """Read an ATDF file; single-channel data comes back as (h, w) float32."""
    data = Path(path).read_bytes()
    if not data.startswith(ATDF_MAGIC):
        raise FormatError("bad magic; not an ATDF file", 0)
    start = len(ATDF_MAGIC)
    end = data.find(b"\n", start)
    if end < 0:
        raise FormatError("unterminated dimension line", start)
    try:
        h, w, c = (int(v) for v in data[start:end].decode("ascii").split())
    except ValueError as exc:
        raise FormatError(f"bad dimension line {data[start:end]!r}", start) from exc
    if h < 0 or w < 0 or c < 1:
        raise FormatError(f"invalid dimensions {h}x{w}x{c}", start)
    offset = end + 1
    need = 4 * h * w * c
    have = len(data) - offset
    if have < need:
        raise FormatError(f"truncated payload: expected {need} bytes, found {have}", offset + have)
    if have > need:
        raise FormatError("trailing bytes after payload", offset + need)
    arr = np.frombuffer(data, dtype="<f4", count=h * w * c, offset=offset).reshape(h, w, c)
    arr = arr.astype(np.float32)
    return arr[:, :, 0] if c == 1 else arr


def write_pgm(path, img) -> None:
    """16-bit binary PGM; [0, 1] maps linearly onto [0, 65535] with rounding."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError("PGM images must be 2-D")
    q = np.rint(np.clip(a, 0.0, 1.0) * 65535.0).astype(">u2")
    h, w = a.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(q.tobytes())


_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if not data.startswith(b"P5"):
        raise FormatError("not a binary (P5) PGM file", 0)
    pos = 2
    fields = []
    for _ in range(3):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise FormatError("truncated PGM header", pos)
        try:
            fields.append(int(m.group(1)))
        except ValueError as exc:
            raise FormatError(f"bad PGM header field {m.group(1)!r}", m.start(1)) from exc
        pos = m.end(1)
    w, h, maxval = fields
    if not (0 < maxval <= 65535) or w < 1 or h < 1:
        raise FormatError(f"unsupported PGM header w={w} h={h} maxval={maxval}", pos)
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise FormatError("missing whitespace after PGM header", pos)
    pos += 1
    dtype = ">u2" if maxval > 255 else "u1"
    need = h * w * np.dtype(dtype).itemsize
    if len(data) - pos < need:
        raise FormatError(f"truncated PGM payload: expected {need} bytes", len(data))
    raw = np.frombuffer(data, dtype=dtype, count=h * w, offset=pos).reshape(h, w)
    return raw.astype(np.float64) / maxval


def read_image(path) -> np.ndarray:
    """Load an ATDF or PGM image as float64, chosen by file content."""
    head = Path(path).read_bytes()[:6]
    if head.startswith(ATDF_MAGIC):
        arr = read_atdf(path)
        if arr.ndim != 2:
            raise FormatError("expected a single-channel image", len(ATDF_MAGIC))
        return arr.astype(np.float64)
    if head.startswith(b"P5"):
        return read_pgm(path)
    raise FormatError("unrecognized image format (expected ATDF or P5 PGM)", 0)


def write_estimate(path, est: Estimate, decay_path=None) -> Path:
    """Write the estimate JSON plus its decay map (ATDF) next to it."""
    path = Path(path)
    if decay_path is None:
        decay_path = path.with_name(path.stem + "_decay.atdf")
    decay_path = Path(decay_path)
    write_atdf(decay_path, est.decay)
    try:
        rel = decay_path.relative_to(path.parent)
    except ValueError:
        rel = decay_path
    record = {
        "theta_deg": float(est.affine.theta_deg),
        "tx_px": float(est.affine.tx_px),
        "ty_px": float(est.affine.ty_px),
        "residual": float(est.residual),
        "converged": bool(est.converged),
        "iterations": int(est.iterations),
        "valid_fraction": float(est.valid_fraction),
        "decay_path": str(rel),
    }
    for k, v in record.items():
        if isinstance(v, float) and not math.isfinite(v):
            raise FloatingPointError(f"estimate field {k} is not finite")
    path.write_text(json.dumps(record, indent=2) + "\n")
    return decay_path


def read_estimate(path, load_decay: bool = True) -> Estimate:
    path = Path(path)
    try:
        record = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid estimate JSON: {exc.msg}", exc.pos) from exc
    missing = [k for k in ESTIMATE_KEYS if k not in record]
    if missing:
        raise FormatError(f"estimate JSON missing keys {missing}", 0)
    decay = None
    if load_decay:
        dp = Path(record["decay_path"])
        decay = read_atdf(dp if dp.is_absolute() else path.parent / dp).astype(np.float64)
    return Estimate(
        AffineParams(record["theta_deg"], record["tx_px"], record["ty_px"]),
        decay, float(record["residual"]), bool(record["converged"]),
        int(record["iterations"]), float(record["valid_fraction"]),
    )


def write_manifest(path, command: str, params: dict) -> None:
    """Run manifest with all resolved parameters; no timestamps so reruns match byte for byte."""
    Path(path).write_text(json.dumps({"command": command, "params": params},
                                     indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    if hasattr(obj, "__dataclass_fields__"):
        from dataclasses import asdict
        return asdict(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def fmt6(x) -> str:
    """Six significant digits, the precision CSV reports are written at."""
    return f"{float(x):.6g}"


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([fmt6(v) if isinstance(v, (float, np.floating)) else v for v in row])


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]
