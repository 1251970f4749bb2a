"""Ideal event-camera simulator: intensity frames in, event stream out.

Each pixel tracks a log-intensity reference level, initialized from the
first frame. Between consecutive frames the log intensity is assumed to move
linearly; every time it gets a full contrast threshold C away from the
reference, one event fires (polarity = sign of the change) and the reference
steps by +/-C. Event timestamps are interpolated at the crossing points.

There is no noise model and no refractory period: the output is the exact
threshold-crossing oracle that the encoder and pipeline tests check against.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    ContractError,
    DomainError,
    FormatError,
    InsufficientInputError,
    OrderingError,
    ParameterError,
)
from .events import EventStream
from .imgio import read_pgm
from .naming import timestamped_files


@dataclass(frozen=True)
class IntensityFrame:
    """Linear-intensity raster (strictly positive) at an integer-us time."""

    timestamp_us: int
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ContractError(f"frame values must be (H, W), got {values.shape}")
        if self.timestamp_us < 0:
            raise ParameterError(f"frame timestamp must be >= 0, got {self.timestamp_us}")
        if not np.all(np.isfinite(values)) or (values <= 0).any():
            raise DomainError("frame intensities must be finite and strictly positive")
        object.__setattr__(self, "values", values)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class SimConfig:
    """Contrast threshold C in log-intensity units."""

    contrast_threshold: float

    def __post_init__(self) -> None:
        if not (self.contrast_threshold > 0):
            raise ParameterError(
                f"contrast threshold must be > 0, got {self.contrast_threshold}"
            )


def frame_from_pgm(path, timestamp_us: int) -> IntensityFrame:
    """Load an 8-bit PGM, mapping value v to intensity (v + 1) / 256."""
    raster, maxval = read_pgm(path)
    if maxval > 255:
        raise FormatError(f"{path}: simulator frames must be 8-bit PGM, maxval {maxval}")
    return IntensityFrame(timestamp_us, (raster.astype(np.float64) + 1.0) / 256.0)


def frames_from_dir(dirpath) -> list[IntensityFrame]:
    """Load every .pgm in a directory, timestamped by filename or index file."""
    pairs = timestamped_files(dirpath, suffixes=(".pgm",))
    return [frame_from_pgm(path, t) for t, path in pairs]


def simulate(frames: Sequence[IntensityFrame], config: SimConfig) -> EventStream:
    """Run the threshold-crossing model over a frame sequence.

    Returns a time-sorted stream on the frames' sensor grid. Per pixel and
    frame pair, the number of emitted events is floor(|log change relative to
    the reference| / C), timestamps linearly interpolated in crossing order.
    """
    if len(frames) < 2:
        raise InsufficientInputError(f"simulation needs >= 2 frames, got {len(frames)}")
    height, width = frames[0].values.shape
    for f in frames[1:]:
        if f.values.shape != (height, width):
            raise ContractError(
                f"frame shape drift: {f.values.shape} after ({height}, {width})"
            )
    times = [f.timestamp_us for f in frames]
    for a, b in zip(times, times[1:]):
        if b <= a:
            raise OrderingError(f"frame timestamps must strictly increase: {a} then {b}")

    c = float(config.contrast_threshold)
    ref = np.log(frames[0].values).ravel()
    log_prev = ref.copy()
    chunks_x, chunks_y, chunks_p, chunks_t = [], [], [], []

    for prev, cur in zip(frames, frames[1:]):
        log_cur = np.log(cur.values).ravel()
        t_a, t_b = prev.timestamp_us, cur.timestamp_us

        n_pos = np.floor((log_cur - ref) / c).astype(np.int64)
        np.maximum(n_pos, 0, out=n_pos)
        n_neg = np.floor((ref - log_cur) / c).astype(np.int64)
        np.maximum(n_neg, 0, out=n_neg)

        for counts, sign in ((n_pos, 1), (n_neg, -1)):
            pixels = np.flatnonzero(counts)
            if pixels.size == 0:
                continue
            per_pixel = counts[pixels]
            total = int(per_pixel.sum())
            pix = np.repeat(pixels, per_pixel)
            stops = np.cumsum(per_pixel)
            j = np.arange(1, total + 1) - np.repeat(stops - per_pixel, per_pixel)
            levels = ref[pix] + sign * j * c
            denom = log_cur[pix] - log_prev[pix]
            with np.errstate(divide="ignore", invalid="ignore"):
                frac = (levels - log_prev[pix]) / denom
            # roundoff guard: a crossing can sit within eps of a frame value
            frac = np.clip(np.nan_to_num(frac, nan=1.0, posinf=1.0, neginf=1.0), 0.0, 1.0)
            t_ev = np.rint(t_a + (t_b - t_a) * frac).astype(np.int64)
            chunks_x.append((pix % width).astype(np.int32))
            chunks_y.append((pix // width).astype(np.int32))
            chunks_p.append(np.full(total, sign, dtype=np.int8))
            chunks_t.append(t_ev)

        ref = ref + (n_pos - n_neg) * c
        log_prev = log_cur

    if not chunks_t:
        return EventStream.empty(width, height)
    xs = np.concatenate(chunks_x)
    ys = np.concatenate(chunks_y)
    ps = np.concatenate(chunks_p)
    ts = np.concatenate(chunks_t)
    order = np.argsort(ts, kind="stable")
    return EventStream(width, height, xs[order], ys[order], ps[order], ts[order])
