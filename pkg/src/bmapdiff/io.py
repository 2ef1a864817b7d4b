"""File formats: USDF tensor files, 8-bit PGM images, key=value configs and manifests.

USDF layout (all little-endian)::

    b"USDF"  magic
    u8       version (1)
    u8       rank
    u32*rank dims
    f32*prod(dims) payload, row-major
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

TENSOR_MAGIC = b"USDF"
TENSOR_VERSION = 1


class FormatError(ValueError):
    pass


def write_tensor(path, array) -> None:
    a = np.ascontiguousarray(array, dtype="<f4")
    if a.ndim > 255:
        raise FormatError("rank too large for USDF")
    header = TENSOR_MAGIC + struct.pack("<BB", TENSOR_VERSION, a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    Path(path).write_bytes(header + a.tobytes())


def read_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != TENSOR_MAGIC:
        raise FormatError(f"{path}: not a USDF tensor file")
    if len(raw) < 6:
        raise FormatError(f"{path}: truncated header")
    version, rank = struct.unpack_from("<BB", raw, 4)
    if version != TENSOR_VERSION:
        raise FormatError(f"{path}: unsupported USDF version {version}")
    off = 6 + 4 * rank
    if len(raw) < off:
        raise FormatError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{rank}I", raw, 6)
    count = int(np.prod(dims, dtype=np.int64))
    if len(raw) - off != 4 * count:
        raise FormatError(f"{path}: payload is {len(raw) - off} bytes, expected {4 * count}")
    return np.frombuffer(raw, dtype="<f4", offset=off).reshape(dims).astype(np.float32)


def to_bytes(values, lo: float, hi: float) -> np.ndarray:
    """Linear map of ``[lo, hi]`` onto 0..255 with clipping and rounding."""
    v = np.asarray(values, dtype=np.float64)
    span = hi - lo
    u = np.ones_like(v) if span <= 0 else (v - lo) / span
    return np.rint(np.clip(u, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_pgm(path, values, lo: float = -1.0, hi: float = 1.0) -> None:
    """Binary greyscale PGM (P5, maxval 255)."""
    b = to_bytes(values, lo, hi)
    if b.ndim != 2:
        raise FormatError("PGM images must be 2-D")
    h, w = b.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + b.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit P5 PGM as floats in [0, 1]."""
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(raw):
            raise FormatError(f"{path}: truncated PGM header")
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace byte before the raster
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: only binary P5 PGM is supported")
    w, h, maxval = (int(t) for t in tokens[1:])
    if not 0 < maxval < 256:
        raise FormatError(f"{path}: only 8-bit PGM is supported")
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos)
    return data.reshape(h, w).astype(np.float64) / maxval


def load_image(path) -> np.ndarray:
    """Model-space image in [-1, 1] from a PGM or USDF file."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return read_pgm(path) * 2.0 - 1.0
    if path.suffix.lower() == ".usdf":
        a = read_tensor(path).astype(np.float64)
        if a.ndim != 2:
            raise FormatError(f"{path}: expected a 2-D image tensor, got shape {a.shape}")
        return a
    raise FormatError(f"{path}: unknown image format")


def parse_key_values(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{source}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise FormatError(f"{source}:{n}: empty key")
        out[key] = value
    return out


def write_key_values(path, items, header: str | None = None) -> None:
    lines = [f"# {header}"] if header else []
    lines += [f"{k} = {v}" for k, v in items]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_checkpoint(directory, params) -> None:
    """One USDF file per parameter tensor plus ``checkpoint.txt`` listing names and shapes."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    items = [("height", params.height), ("width", params.width), ("hidden", params.hidden), ("T", params.T)]
    for name, tensor in params.tensors.items():
        write_tensor(d / f"{name}.usdf", tensor)
        items.append((f"tensor.{name}", "x".join(str(s) for s in tensor.shape)))
    write_key_values(d / "checkpoint.txt", items, "bmapdiff denoiser checkpoint")


def read_checkpoint(directory):
    from .denoiser import DenoiserParams, parameter_shapes

    d = Path(directory)
    meta = parse_key_values((d / "checkpoint.txt").read_text(encoding="utf-8"), str(d / "checkpoint.txt"))
    h, w, hidden, T = (int(meta[k]) for k in ("height", "width", "hidden", "T"))
    tensors = {}
    for name, shape in parameter_shapes(hidden, T).items():
        a = read_tensor(d / f"{name}.usdf").astype(np.float64)
        if a.shape != shape:
            raise FormatError(f"checkpoint tensor {name} has shape {a.shape}, expected {shape}")
        tensors[name] = a
    return DenoiserParams(h, w, hidden, T, tensors)
