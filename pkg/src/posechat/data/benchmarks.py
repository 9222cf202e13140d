"""Benchmark construction for the two reasoning-style eval sets.

* spg: implicit activity descriptions paired with jittered prototype
  poses (about 780 examples by default upstream).
* rpe: multi-person scenes with an unambiguous attribute query naming
  exactly one person (about 250 pairs by default upstream).
"""

from __future__ import annotations

import numpy as np

from ..body import default_tree
from ..errors import ConfigError
from .observe import DEFAULT_D_OBS, DEFAULT_NOISE_STD
from .posegen import ACTIVITY_PROTOTYPES, prototype_pose
from .records import (
    ChatRecord,
    SPG_QUESTIONS,
    POSE_ANSWERS,
    _pick,
    generate_records,
    validate_record,
    write_records,
)


def _spg_records(n: int, seed: int) -> list:
    master = np.random.default_rng(seed)
    records = []
    for _ in range(n):
        child = int(master.integers(0, 2**62))
        rng = np.random.default_rng(child)
        idx = int(rng.integers(len(ACTIVITY_PROTOTYPES)))
        pose = prototype_pose(idx, rng)
        question = _pick(rng, SPG_QUESTIONS).format(activity=ACTIVITY_PROTOTYPES[idx].sentence)
        answer = _pick(rng, POSE_ANSWERS)
        records.append(validate_record(ChatRecord(
            question, answer, "text2pose", target_pose=pose, seed=child)))
    return records


def build_benchmark(kind: str, n: int, rng_seed: int, out_path,
                    tree=None, noise_std: float = DEFAULT_NOISE_STD,
                    d_obs: int = DEFAULT_D_OBS) -> list:
    """Write n benchmark records to out_path and return them."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    if kind == "spg":
        records = _spg_records(n, rng_seed)
    elif kind == "rpe":
        records = generate_records("rpe", n, rng_seed, tree=tree or default_tree(),
                                   noise_std=noise_std, d_obs=d_obs)
    else:
        raise ConfigError(f"unknown benchmark kind {kind!r}")
    write_records(records, out_path)
    return records
