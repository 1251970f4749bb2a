"""Default hyperparameters and runtime knobs.

The numeric defaults (50 ms slicing window, 5 voxel bins, loss weight 0.25,
20-step unroll) are the values every CLI subcommand and pipeline falls back
to when the caller does not override them.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

US_PER_MS = 1_000
US_PER_S = 1_000_000


@dataclass(frozen=True)
class EncoderConfig:
    window_us: int = 50 * US_PER_MS
    voxel_bins: int = 5


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.25
    k_scales: int = 4


@dataclass(frozen=True)
class FusionConfig:
    scales: tuple[int, ...] = (4, 8, 16)
    channels: tuple[int, ...] = (16, 32, 64)
    unroll: int = 20
    seed: int = 0


ENCODER_DEFAULTS = EncoderConfig()
LOSS_DEFAULTS = LossConfig()
FUSION_DEFAULTS = FusionConfig()

DEFAULT_SEED = 0
DEFAULT_CLAMP_MIN = 1e-3

THREADS_ENV_VAR = "EVDEPTH_THREADS"


def max_threads() -> int:
    """Worker cap for internally parallel operations.

    Reads EVDEPTH_THREADS; unset or invalid values fall back to a small
    CPU-bound default. A value of 1 forces serial execution.
    """
    raw = os.environ.get(THREADS_ENV_VAR, "")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        n = min(8, os.cpu_count() or 1)
    return n
