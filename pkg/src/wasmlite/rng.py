"""Deterministic random source shared by the generators.

Seeding runs the 64-bit seed through one splitmix64 round (so that seed 0
is usable)::

    z = (seed + 0x9E3779B97F4A7C15) mod 2**64
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 mod 2**64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB mod 2**64
    state = z ^ (z >> 31)        (replaced by 1 if it comes out 0)

and each draw is Marsaglia's xorshift64 (13, 7, 17)::

    x ^= x << 13 mod 2**64
    x ^= x >> 7
    x ^= x << 17 mod 2**64

``below(n)`` is ``next() mod n`` and ``random()`` is ``(next() >> 11) / 2**53``.
Any implementation following these equations reproduces the same corpora.
"""

M64 = (1 << 64) - 1


class XorShift64:
    def __init__(self, seed: int):
        z = (seed + 0x9E3779B97F4A7C15) & M64
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M64
        self.state = (z ^ (z >> 31)) or 1

    def next(self) -> int:
        x = self.state
        x ^= (x << 13) & M64
        x ^= x >> 7
        x ^= (x << 17) & M64
        self.state = x
        return x

    def below(self, n: int) -> int:
        return self.next() % n

    def randint(self, lo: int, hi: int) -> int:
        """Uniform-ish integer in [lo, hi]."""
        return lo + self.below(hi - lo + 1)

    def random(self) -> float:
        return (self.next() >> 11) / 9007199254740992.0

    def chance(self, p: float) -> bool:
        return self.random() < p

    def choice(self, seq):
        return seq[self.below(len(seq))]

    def weighted(self, items):
        """Pick from ``(value, weight)`` pairs with integer weights."""
        total = sum(w for _, w in items)
        r = self.below(total)
        for value, w in items:
            if r < w:
                return value
            r -= w
        raise AssertionError("unreachable")
