"""Named, independent random streams derived from a single run seed.

Each consumer (target construction, input sampling, noise, task mutation,
weight init, data shuffling) gets its own generator so that changing how
many draws one consumer makes never shifts another consumer's stream.
"""
import numpy as np

STREAMS = {
    "target": 0,
    "inputs": 1,
    "noise": 2,
    "mutation": 3,
    "init": 4,
    "shuffle": 5,
}


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Generator for stream ``name`` of run ``seed``; ``extra`` indexes sub-streams (e.g. task number)."""
    key = (STREAMS[name],) + tuple(int(e) for e in extra)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))
