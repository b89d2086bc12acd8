"""Deterministic hierarchical RNG substreams.

Every stochastic unit of work (a replicate, a method within a replicate)
derives its generator from a tuple of integers and short strings.  Streams
depend only on that tuple, never on execution order or worker count, so
simulation output is byte-identical across serial and parallel runs.
"""

from __future__ import annotations

import numpy as np

__all__ = ["substream"]


def _as_entropy(part: int | str) -> int:
    if isinstance(part, bool):
        return int(part)
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"entropy parts must be non-negative, got {part}")
        return int(part)
    if isinstance(part, str):
        # Stable across processes and sessions, unlike hash().
        return int.from_bytes(part.encode("utf-8"), "little")
    raise TypeError(f"unsupported entropy part: {part!r}")


def substream(*parts: int | str) -> np.random.Generator:
    """Return a Generator keyed by ``parts``.

    Identical tuples give identical streams; distinct tuples give streams
    that are independent for practical purposes (SeedSequence mixing).
    """
    if not parts:
        raise ValueError("at least one entropy part is required")
    seq = np.random.SeedSequence([_as_entropy(p) for p in parts])
    return np.random.Generator(np.random.PCG64(seq))
