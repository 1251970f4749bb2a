"""Dense stacked representations of an event slice.

Three encoders share the same contract: an EventSlice goes in, a (H, W, C)
float64 raster comes out, tagged with the slice interval.

  voxel      C = B temporal bins; polarity accumulated with linear
             interpolation at bin coordinate (t - t_start)/(t_end - t_start)
             * (B - 1), so an event touches at most two adjacent bins and the
             grid total equals the polarity sum.
  imagelike  C = 3; R/B flag the presence of positive/negative events per
             pixel, G stays 0. No temporal information.
  tencode    C = 3; per pixel the most recent event wins: R/B carry its
             polarity and G = (t_end - t_k)/duration carries its recency.

Empty slices encode to all-zero stacks: a static scene is a valid input,
not an error. All encoders are pure functions of the slice.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateIntervalError, ParameterError
from .events import EventSlice
from .imgio import write_pfm, write_ppm


class StackLayout(enum.Enum):
    VOXEL = "voxel"
    IMAGE_LIKE = "imagelike"
    TENCODE = "tencode"


@dataclass(frozen=True)
class EventStack:
    layout: StackLayout
    values: np.ndarray  # (H, W, C) float64
    t_start_us: int
    t_end_us: int

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


def _check_interval(sl: EventSlice) -> int:
    duration = sl.duration_us
    if len(sl) and duration <= 0:
        raise DegenerateIntervalError(
            f"slice holds {len(sl)} events but covers a zero-length interval at t={sl.t_end_us}"
        )
    return duration


def encode_voxel(sl: EventSlice, bins: int) -> EventStack:
    if bins < 1:
        raise ParameterError(f"bin count must be >= 1, got {bins}")
    duration = _check_interval(sl)
    grid = np.zeros((sl.height, sl.width, bins), dtype=np.float64)
    if len(sl):
        b_star = (sl.ts - sl.t_start_us).astype(np.float64) / duration * (bins - 1)
        left = np.floor(b_star).astype(np.int64)
        frac = b_star - left
        pol = sl.ps.astype(np.float64)
        flat = grid.ravel()
        base = (sl.ys.astype(np.int64) * sl.width + sl.xs) * bins
        np.add.at(flat, base + left, pol * (1.0 - frac))
        spill = frac > 0  # when frac == 0 the right neighbor gets weight 0
        if spill.any():
            np.add.at(flat, base[spill] + left[spill] + 1, pol[spill] * frac[spill])
    return EventStack(StackLayout.VOXEL, grid, sl.t_start_us, sl.t_end_us)


def encode_image_like(sl: EventSlice) -> EventStack:
    values = np.zeros((sl.height, sl.width, 3), dtype=np.float64)
    pos = sl.ps > 0
    values[sl.ys[pos], sl.xs[pos], 0] = 1.0
    values[sl.ys[~pos], sl.xs[~pos], 2] = 1.0
    return EventStack(StackLayout.IMAGE_LIKE, values, sl.t_start_us, sl.t_end_us)


def encode_tencode(sl: EventSlice) -> EventStack:
    values = np.zeros((sl.height, sl.width, 3), dtype=np.float64)
    if len(sl):
        duration = _check_interval(sl)
        flat = sl.ys.astype(np.int64) * sl.width + sl.xs
        # last event per pixel: first occurrence in the reversed index array
        lit, rev_idx = np.unique(flat[::-1], return_index=True)
        last = len(sl) - 1 - rev_idx
        recency = (sl.t_end_us - sl.ts[last]).astype(np.float64) / duration
        ys, xs = lit // sl.width, lit % sl.width
        pos = sl.ps[last] > 0
        values[ys[pos], xs[pos], 0] = 1.0
        values[ys, xs, 1] = recency
        values[ys[~pos], xs[~pos], 2] = 1.0
    return EventStack(StackLayout.TENCODE, values, sl.t_start_us, sl.t_end_us)


def encode(sl: EventSlice, layout: StackLayout, bins: int = 5) -> EventStack:
    if layout is StackLayout.VOXEL:
        return encode_voxel(sl, bins)
    if layout is StackLayout.IMAGE_LIKE:
        return encode_image_like(sl)
    return encode_tencode(sl)


def save_stack_ppm(stack: EventStack, path) -> Path:
    """8-bit PPM export; only meaningful for the [0, 1]-valued 3-channel layouts."""
    if stack.layout is StackLayout.VOXEL:
        raise ParameterError("voxel stacks carry signed accumulations; export them as PFM")
    write_ppm(path, stack.values)
    return Path(path)


def save_stack_pfm(stack: EventStack, path) -> list[Path]:
    """PFM export. 3-channel stacks become one color PFM; any other channel
    count is written as one grayscale PFM per channel (``name.c<k>.pfm``)."""
    path = Path(path)
    if stack.channels == 3:
        write_pfm(path, stack.values)
        return [path]
    written = []
    for k in range(stack.channels):
        p = path.with_name(f"{path.stem}.c{k}{path.suffix}")
        write_pfm(p, stack.values[:, :, k])
        written.append(p)
    return written
