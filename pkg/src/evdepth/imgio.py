"""Raster file I/O: PFM, binary PGM (8/16-bit), binary PPM.

PFM follows the usual convention: float32 samples, scanlines bottom-to-top,
and a negative scale field marking little-endian data (we always write
scale -1.0). 16-bit PGM samples are big-endian per the PNM spec; a JSON
sidecar ``<file>.json`` with ``{"scale_m_per_unit": ...}`` turns the raster
back into metric depth. Masks are 8-bit PGM with 0 = invalid.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import FormatError, ParameterError


def _next_token(fh) -> bytes:
    """Next whitespace-delimited PNM header token, honoring # comments.

    Consumes exactly one whitespace byte after the token so binary rasters
    start at the right offset.
    """
    c = fh.read(1)
    while c:
        if c == b"#":
            while c and c != b"\n":
                c = fh.read(1)
            c = fh.read(1)
        elif c.isspace():
            c = fh.read(1)
        else:
            break
    if not c:
        raise FormatError("unexpected end of file in raster header")
    tok = b""
    while c and not c.isspace():
        tok += c
        c = fh.read(1)
    return tok


def _read_exact(fh, n: int, path) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"{path}: truncated raster, wanted {n} bytes, got {len(buf)}")
    return buf


# ---------------------------------------------------------------------------
# PFM


def write_pfm(path, values: np.ndarray) -> None:
    """Write (H, W) as grayscale 'Pf' or (H, W, 3) as color 'PF', float32."""
    values = np.asarray(values)
    if values.ndim == 2:
        ident = b"Pf"
    elif values.ndim == 3 and values.shape[2] == 3:
        ident = b"PF"
    else:
        raise ParameterError(f"PFM writer takes (H, W) or (H, W, 3), got {values.shape}")
    h, w = values.shape[:2]
    data = np.flipud(values).astype("<f4")  # PFM scanlines run bottom-to-top
    with open(path, "wb") as fh:
        fh.write(ident + b"\n")
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(data.tobytes())


def read_pfm(path) -> np.ndarray:
    """Read a PFM file into float64, shape (H, W) or (H, W, 3)."""
    path = Path(path)
    with open(path, "rb") as fh:
        ident = _next_token(fh)
        if ident == b"PF":
            channels = 3
        elif ident == b"Pf":
            channels = 1
        else:
            raise FormatError(f"{path}: bad PFM identifier {ident!r}")
        w = int(_next_token(fh))
        h = int(_next_token(fh))
        scale = float(_next_token(fh))
        if scale == 0:
            raise FormatError(f"{path}: zero PFM scale")
        dt = "<f4" if scale < 0 else ">f4"
        raw = _read_exact(fh, w * h * channels * 4, path)
    arr = np.frombuffer(raw, dtype=dt).reshape(h, w, channels)
    arr = np.flipud(arr).astype(np.float64)
    if abs(scale) != 1.0:
        arr = arr * abs(scale)
    return arr[:, :, 0] if channels == 1 else arr


# ---------------------------------------------------------------------------
# PGM / PPM


def write_pgm(path, values: np.ndarray, maxval: int = 255) -> None:
    """Write binary (P5) PGM; 16-bit samples are big-endian."""
    values = np.asarray(values)
    if values.ndim != 2:
        raise ParameterError(f"PGM writer takes (H, W), got {values.shape}")
    if not 1 <= maxval <= 65535:
        raise ParameterError(f"maxval must be in [1, 65535], got {maxval}")
    if values.min() < 0 or values.max() > maxval:
        raise ParameterError("PGM sample outside [0, maxval]")
    h, w = values.shape
    dt = np.uint8 if maxval < 256 else ">u2"
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(values.astype(dt).tobytes())


def read_pgm(path) -> tuple[np.ndarray, int]:
    """Read a binary (P5) PGM. Returns (values, maxval); dtype follows depth."""
    path = Path(path)
    with open(path, "rb") as fh:
        ident = _next_token(fh)
        if ident != b"P5":
            raise FormatError(f"{path}: expected binary PGM (P5), got {ident!r}")
        w = int(_next_token(fh))
        h = int(_next_token(fh))
        maxval = int(_next_token(fh))
        if not 1 <= maxval <= 65535:
            raise FormatError(f"{path}: bad maxval {maxval}")
        dt = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
        raw = _read_exact(fh, w * h * dt.itemsize, path)
    arr = np.frombuffer(raw, dtype=dt).reshape(h, w)
    return arr.astype(np.uint16) if maxval >= 256 else arr.copy(), maxval


def write_ppm(path, values: np.ndarray) -> None:
    """Write (H, W, 3) values in [0, 1] as 8-bit binary PPM (P6).

    Quantization is value*255 rounded half-up.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 3 or values.shape[2] != 3:
        raise ParameterError(f"PPM writer takes (H, W, 3), got {values.shape}")
    q = np.floor(values * 255.0 + 0.5)
    q = np.clip(q, 0, 255).astype(np.uint8)
    h, w = values.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(q.tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a binary (P6) 8-bit PPM into uint8 (H, W, 3)."""
    path = Path(path)
    with open(path, "rb") as fh:
        ident = _next_token(fh)
        if ident != b"P6":
            raise FormatError(f"{path}: expected binary PPM (P6), got {ident!r}")
        w = int(_next_token(fh))
        h = int(_next_token(fh))
        maxval = int(_next_token(fh))
        if maxval != 255:
            raise FormatError(f"{path}: only 8-bit PPM supported, maxval {maxval}")
        raw = _read_exact(fh, w * h * 3, path)
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3).copy()


# ---------------------------------------------------------------------------
# Depth map and mask conventions


def save_depth_pfm(path, depth: np.ndarray) -> None:
    write_pfm(path, np.asarray(depth, dtype=np.float64))


def load_depth_pfm(path) -> np.ndarray:
    arr = read_pfm(path)
    if arr.ndim != 2:
        raise FormatError(f"{path}: depth PFM must be single-channel")
    return arr


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def save_depth_pgm16(path, depth: np.ndarray, scale_m_per_unit: float | None = None) -> None:
    """Quantize depth to 16-bit PGM plus a JSON scale sidecar.

    Default scale maps the depth maximum to 65535. Zero raster values are the
    invalid-pixel convention, so non-finite or non-positive depths encode as 0.
    """
    depth = np.asarray(depth, dtype=np.float64)
    valid = np.isfinite(depth) & (depth > 0)
    if scale_m_per_unit is None:
        top = float(depth[valid].max()) if valid.any() else 1.0
        scale_m_per_unit = top / 65535.0
    if scale_m_per_unit <= 0:
        raise ParameterError(f"scale_m_per_unit must be > 0, got {scale_m_per_unit}")
    raster = np.zeros(depth.shape, dtype=np.uint16)
    q = np.floor(depth[valid] / scale_m_per_unit + 0.5)
    raster[valid] = np.clip(q, 0, 65535).astype(np.uint16)
    path = Path(path)
    write_pgm(path, raster, maxval=65535)
    with open(_sidecar(path), "w", encoding="ascii") as fh:
        json.dump({"scale_m_per_unit": scale_m_per_unit}, fh)
        fh.write("\n")


def load_depth_pgm16(path) -> np.ndarray:
    path = Path(path)
    raster, maxval = read_pgm(path)
    if maxval < 256:
        raise FormatError(f"{path}: expected 16-bit depth PGM, maxval {maxval}")
    with open(_sidecar(path), "r", encoding="ascii") as fh:
        meta = json.load(fh)
    scale = float(meta["scale_m_per_unit"])
    return raster.astype(np.float64) * scale


def load_depth(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        return load_depth_pfm(path)
    if path.suffix.lower() == ".pgm":
        return load_depth_pgm16(path)
    raise ParameterError(f"unsupported depth format {path.suffix!r}")


def depth_valid_mask(depth: np.ndarray) -> np.ndarray:
    """Validity convention for stored depth: finite and strictly positive."""
    return np.isfinite(depth) & (depth > 0)


def save_mask_pgm(path, mask: np.ndarray) -> None:
    mask = np.asarray(mask, dtype=bool)
    write_pgm(path, mask.astype(np.uint8) * 255, maxval=255)


def load_mask_pgm(path) -> np.ndarray:
    raster, _ = read_pgm(path)
    return raster != 0
