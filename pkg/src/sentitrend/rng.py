"""Seedable deterministic RNG for the subgraph sampler.

The sampler's node selections must be exactly reproducible from an integer
seed, independent of platform, interpreter, and library versions. numpy's
bit generators are stable in practice but tie the sampling trace to a
dependency's stream contract, so the generator is implemented here in full.

Algorithm: SplitMix64 (Steele, Lea & Flood's SplittableRandom finalizer).
State update and output mix, all in 64-bit wrapping arithmetic:

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    return z ^ (z >> 31)

Bounded draws use unbiased rejection sampling on the top of the 64-bit
range, so `randbelow(n)` is uniform for every n.
"""

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


class SplitMix64:
    """64-bit SplitMix64 generator with unbiased bounded draws."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
        return z ^ (z >> 31)

    def randbelow(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection on the 64-bit range."""
        if n <= 0:
            raise ValueError("randbelow requires n >= 1")
        # Largest multiple of n that fits in 64 bits; values at or above
        # it would bias the modulus and are redrawn.
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            v = self.next_u64()
            if v < limit:
                return v % n
