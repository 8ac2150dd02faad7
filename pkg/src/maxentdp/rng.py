"""Named random streams derived from one run seed.

Every consumer gets its own counter-based (Philox) generator keyed by
``(seed, name, *index)``, so streams never collide and a stream's draws do not
depend on how much any other stream has been used.
"""

from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("init", "env", "explore", "replay", "actor", "estimator", "likelihood", "eval")


def _key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def stream(seed: int, name: str, *index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_key(name), *map(int, index)))
    return np.random.Generator(np.random.Philox(ss))


def streams(seed: int, names=STREAMS) -> dict[str, np.random.Generator]:
    return {n: stream(seed, n) for n in names}


def split(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """n independent child generators, e.g. one per batch element."""
    return [np.random.Generator(np.random.Philox(s)) for s in rng.bit_generator.seed_seq.spawn(n)]


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, np.ndarray):
        return {"uint64": [int(v) for v in x]}
    return x


def _restore(x):
    if isinstance(x, dict):
        if set(x) == {"uint64"}:
            return np.array(x["uint64"], dtype=np.uint64)
        return {k: _restore(v) for k, v in x.items()}
    return x


def get_states(rngs: dict[str, np.random.Generator]) -> dict:
    """Bit-generator states as JSON-serialisable dicts."""
    return {k: _plain(g.bit_generator.state) for k, g in rngs.items()}


def set_states(rngs: dict[str, np.random.Generator], states: dict):
    for k, st in states.items():
        rngs[k].bit_generator.state = _restore(st)
