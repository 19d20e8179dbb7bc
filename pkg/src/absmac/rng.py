"""Random tapes for nodes and schedulers.

Every node owns a private stream derived from ``(seed, NODE_STREAM, index)``
and every scheduler policy draws from ``(policy_seed, POLICY_STREAM)``.
Streams are Philox (counter based), so a rerun with the same seed is
bit-identical and bulk draws match one-at-a-time draws.

Protocols only ever talk to the :class:`Tape` interface.  The exhaustive
explorer swaps in a :class:`ScriptedTape`, which replays a fixed list of
outcomes and raises :class:`NeedBranch` when it runs past the end.
"""

from __future__ import annotations

import numpy as np

NODE_STREAM = 0
POLICY_STREAM = 1
TOKEN_STREAM = 2
INPUT_STREAM = 3


def make_generator(*words: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(w) & (2**64 - 1) for w in words])))


class Tape:
    """A node's random tape.

    ``coin``, ``bit`` and ``randint`` each consume exactly one uniform draw.
    ``skip`` consumes one draw without using it; protocols use it to keep a
    fixed draw layout per step.
    """

    __slots__ = ("_gen", "draws")

    def __init__(self, gen: np.random.Generator):
        self._gen = gen
        self.draws = 0

    @classmethod
    def for_node(cls, seed: int, index: int) -> "Tape":
        return cls(make_generator(seed, NODE_STREAM, index))

    def uniform(self) -> float:
        self.draws += 1
        return float(self._gen.random())

    def coin(self, p: float) -> bool:
        return self.uniform() < p

    def bit(self) -> int:
        return 1 if self.uniform() >= 0.5 else 0

    def randint(self, lo: int, hi: int) -> int:
        span = hi - lo + 1
        return lo + min(int(self.uniform() * span), span - 1)

    def skip(self) -> None:
        self.uniform()

    def geometric(self) -> int:
        """Count continue-flips (probability 1/2 each) before the first stop."""
        x = 0
        while self.coin(0.5):
            x += 1
        return x

    @property
    def generator(self) -> np.random.Generator:
        return self._gen


class NeedBranch(Exception):
    """Raised by a scripted tape that has no scripted outcome for a draw."""

    def __init__(self, arity: int):
        super().__init__(arity)
        self.arity = arity


class TapeExhausted(Exception):
    """A node asked for more draws than the exploration tape bound allows."""


class ScriptedTape(Tape):
    """Replays branch indices chosen by the explorer.

    ``coin(p)`` maps index 0 to True and 1 to False; a coin with p >= 1 or
    p <= 0 is forced and does not branch.  ``randint(lo, hi)`` maps index j
    to ``lo + j``.  ``skip`` consumes nothing.
    """

    __slots__ = ("script", "pos", "limit")

    def __init__(self, script: list[int], used: int, limit: int | None):
        self._gen = None
        self.script = script
        self.pos = 0
        self.draws = used
        self.limit = limit

    def _next(self, arity: int) -> int:
        if self.limit is not None and self.draws >= self.limit:
            raise TapeExhausted()
        if self.pos >= len(self.script):
            raise NeedBranch(arity)
        j = self.script[self.pos]
        self.pos += 1
        self.draws += 1
        return j

    def uniform(self) -> float:
        raise TypeError("scripted tapes only support discrete draws")

    def coin(self, p: float) -> bool:
        if p >= 1.0:
            self.draws += 1
            return True
        if p <= 0.0:
            self.draws += 1
            return False
        return self._next(2) == 0

    def bit(self) -> int:
        return self._next(2)

    def randint(self, lo: int, hi: int) -> int:
        if hi <= lo:
            self.draws += 1
            return lo
        return lo + self._next(hi - lo + 1)

    def skip(self) -> None:
        pass
