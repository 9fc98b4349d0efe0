"""Seeded 64-bit PRNG (xoshiro256**) used everywhere reproducibility is promised.

The generator is self-contained so that datasets, parameter initialization,
and batch sampling are byte-identical across platforms and library versions.

Constants:
  splitmix64 (seed expansion): gamma 0x9E3779B97F4A7C15,
    mix multipliers 0xBF58476D1CE4E5B9 and 0x94D049BB133111EB.
  xoshiro256**: scrambler rotl(s1 * 5, 7) * 9, state update uses t = s1 << 17
    and the rotation rotl(s3, 45).
Doubles are formed as (x >> 11) * 2**-53, uniform on [0, 1).
"""

from __future__ import annotations

MASK64 = 0xFFFFFFFFFFFFFFFF


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


class Xoshiro256:
    """xoshiro256** seeded from a single integer via splitmix64."""

    __slots__ = ("s0", "s1", "s2", "s3")

    def __init__(self, seed: int):
        sm = seed & MASK64
        sm, self.s0 = _splitmix64(sm)
        sm, self.s1 = _splitmix64(sm)
        sm, self.s2 = _splitmix64(sm)
        sm, self.s3 = _splitmix64(sm)

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self.s0, self.s1, self.s2, self.s3
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self.s0, self.s1, self.s2, self.s3 = s0, s1, s2, s3
        return result

    def next_double(self) -> float:
        """Uniform double on [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * 1.1102230246251565e-16  # 2**-53

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.next_double()

    def randint(self, n: int) -> int:
        """Integer in [0, n). Uses the double path; exact for n < 2**53."""
        if n <= 0:
            raise ValueError("randint bound must be positive")
        return int(self.next_double() * n)

    def split(self) -> "Xoshiro256":
        """Derive an independent child generator (consumes one draw)."""
        return Xoshiro256(self.next_u64())
