"""Counter-based substreams keyed by (base_seed, realization, role)."""

from __future__ import annotations

import numpy as np

ROLES = (
    "common-jumps",
    "private-1",
    "private-2",
    "bernoulli-1",
    "bernoulli-2",
    "severity-1",
    "severity-2",
)


def substream(base_seed: int, realization: int, role: str) -> np.random.Generator:
    """Independent Philox generator for one realization and one role.

    The stream depends only on its key, so results do not depend on the order
    or the thread in which realizations are simulated.
    """
    if role not in ROLES:
        raise KeyError(f"unknown stream role {role!r}")
    if base_seed < 0 or realization < 0:
        raise ValueError("seed and realization index must be non-negative")
    ss = np.random.SeedSequence(int(base_seed), spawn_key=(int(realization), ROLES.index(role)))
    return np.random.Generator(np.random.Philox(ss))
