"""Deterministic ratio-mixed batch stream over record sources."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError


def _counts(ratio_items, batch_size: int) -> list:
    """Largest-remainder apportionment of batch_size across the ratio."""
    total = sum(r for _, r in ratio_items)
    base = [(batch_size * r) // total for _, r in ratio_items]
    remainder = [(batch_size * r) % total for _, r in ratio_items]
    short = batch_size - sum(base)
    order = sorted(range(len(base)), key=lambda i: (-remainder[i], i))
    for i in order[:short]:
        base[i] += 1
    return base


def _cycle_shuffled(records, rng):
    while True:
        order = rng.permutation(len(records))
        for i in order:
            yield records[i]


def mixed_batches(sources: dict, ratio: dict, batch_size: int, rng_seed: int):
    """Infinite stream of batches mixing sources at a fixed ratio.

    Per-source order reshuffles each epoch; per-batch counts follow the
    ratio exactly when batch_size divides evenly, otherwise differ by at
    most one via largest-remainder rounding.
    """
    names = list(sources)
    if not names:
        raise ConfigError("no sources given")
    for name in names:
        if not sources[name]:
            raise ConfigError(f"source {name!r} is empty")
        if ratio.get(name, 0) <= 0:
            raise ConfigError(f"ratio for source {name!r} must be positive")
    if batch_size < sum(ratio[n] for n in names):
        raise ConfigError("batch_size smaller than the ratio sum")
    counts = _counts([(n, ratio[n]) for n in names], batch_size)
    master = np.random.default_rng(rng_seed)
    cyclers = {n: _cycle_shuffled(sources[n], np.random.default_rng(int(master.integers(2**62))))
               for n in names}
    while True:
        batch = []
        for name, count in zip(names, counts):
            batch.extend(next(cyclers[name]) for _ in range(count))
        yield batch
