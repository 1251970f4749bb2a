import numpy as np

from evdepth.events import EventStream


def make_random_stream(rng, width=32, height=24, n_events=1000, t_max=1_000_000):
    ts = np.sort(rng.integers(0, t_max + 1, size=n_events))
    xs = rng.integers(0, width, size=n_events)
    ys = rng.integers(0, height, size=n_events)
    ps = rng.choice(np.array([-1, 1], dtype=np.int8), size=n_events)
    return EventStream(width, height, xs, ys, ps, ts)


def make_depth_pair(rng, shape=(16, 16), mask_fill=0.8):
    """Random positive (pred, target, mask) triple with a non-trivial mask."""
    pred = rng.uniform(1.0, 10.0, shape)
    target = rng.uniform(1.0, 10.0, shape)
    mask = rng.random(shape) < mask_fill
    # keep enough support for alignment
    while mask.sum() < 4:
        mask = rng.random(shape) < mask_fill
    return pred, target, mask
