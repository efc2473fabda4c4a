"""Counter-based, splittable random streams.

Every stochastic routine in the package draws from an explicit
:class:`RngStream`.  A stream is identified by ``(master_seed, stream_id,
subkey)`` and is backed by a Philox counter-based generator seeded through
``numpy.random.SeedSequence`` spawn keys, so

* distinct ``stream_id`` values under the same master seed give
  statistically independent streams,
* re-creating a stream with the same identity replays the identical draw
  sequence bit for bit, and
* substreams (Brownian / event-count / mark / large-jump lanes of one
  path) can be consumed in any interleaving without affecting each other.

numpy's generators fill requested shapes value by value from the bit
stream, so drawing a block of n values equals n scalar draws.  The engine
relies on this to batch draws per time window; ``tests/test_rng.py`` pins
the assumption.
"""

from __future__ import annotations

import numpy as np

__all__ = ["RngStream"]


class RngStream:
    """A lazily instantiated, stateful random stream.

    The generator is created on first use and then consumed sequentially;
    substreams are cached so that repeated ``substream(i)`` calls continue
    the same lane instead of restarting it.
    """

    __slots__ = ("master_seed", "stream_id", "subkey", "_gen", "_subs")

    def __init__(self, master_seed: int, stream_id: int = 0, subkey: tuple = ()):
        if stream_id < 0:
            raise ValueError("stream_id must be non-negative")
        self.master_seed = int(master_seed)
        self.stream_id = int(stream_id)
        self.subkey = tuple(int(k) for k in subkey)
        self._gen = None
        self._subs = {}

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            ss = np.random.SeedSequence(
                self.master_seed, spawn_key=(self.stream_id, *self.subkey)
            )
            self._gen = np.random.Generator(np.random.Philox(ss))
        return self._gen

    def substream(self, index: int) -> "RngStream":
        """Return the cached child stream for the given lane index."""
        child = self._subs.get(index)
        if child is None:
            child = RngStream(self.master_seed, self.stream_id, self.subkey + (index,))
            self._subs[index] = child
        return child

    def replica(self) -> "RngStream":
        """A fresh stream with the same identity and untouched state."""
        return RngStream(self.master_seed, self.stream_id, self.subkey)

    def __repr__(self):
        return (
            f"RngStream(master_seed={self.master_seed}, "
            f"stream_id={self.stream_id}, subkey={self.subkey})"
        )


# Substream lane indices used by the simulation engine.  Public so that
# hand-rolled stepping loops (tests, notebooks) can reproduce engine paths.
LANE_BROWNIAN = 0
LANE_COUNTS = 1
LANE_MARKS = 2
LANE_LARGE = 3
