"""Named RNG streams derived from a single master seed.

Every stochastic stage of an experiment (train data, test data, weight
init, routing noise, evaluation draws) pulls from its own child stream so
that changing one stage's consumption never perturbs another.  Streams are
pure functions of (seed, name): re-creating one replays it exactly.
"""

from __future__ import annotations

import numpy as np

# Stable stream ids; appending is fine, renumbering breaks reproducibility.
_STREAM_IDS = {
    "data_train": 0,
    "data_test": 1,
    "init": 2,
    "routing": 3,
    "eval": 4,
    "verify": 5,
    "basis": 6,
}


def stream_names() -> tuple[str, ...]:
    return tuple(_STREAM_IDS)


def named_stream(seed: int, name: str) -> np.random.Generator:
    """Generator for one named stream of a master seed."""
    try:
        stream_id = _STREAM_IDS[name]
    except KeyError:
        raise ValueError(
            f"unknown stream {name!r}; expected one of {sorted(_STREAM_IDS)}"
        ) from None
    ss = np.random.SeedSequence(seed, spawn_key=(stream_id,))
    return np.random.default_rng(ss)


def substream(seed: int, name: str, index: int) -> np.random.Generator:
    """Per-item child of a named stream, e.g. one sweep seed or one example."""
    stream_id = _STREAM_IDS[name]
    ss = np.random.SeedSequence(seed, spawn_key=(stream_id, index))
    return np.random.default_rng(ss)
