"""Portable 64-bit PRNG primitives.

Every random decision in this package flows through splitmix64 with the
published constants, so two runs (or two implementations in different
languages) holding equal 64-bit states produce equal streams forever.
States are plain ints in [0, 2**64); all arithmetic wraps at 64 bits.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1

# splitmix64 constants (Steele, Lea & Flood; same values as the reference C).
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX_MUL_1 = 0xBF58476D1CE4E5B9
_MIX_MUL_2 = 0x94D049BB133111EB

# Stream-separation tags: arbitrary fixed words folded into derive_stream()
# so independent consumers of the same job seed get unrelated streams.
TAG_DATASET = 0xD5A61C0FFEE5EED5
TAG_MODEL_INIT = 0x1417E5EED0D0CAFE
TAG_DROPOUT = 0xD80F0D7A6B15EA5E
TAG_DATA_WORKER = 0xB07C9E11A7756E1D
TAG_BUCKET_ARRIVAL = 0xAC1DB0B5CA77E7E5


def mix64(x: int) -> int:
    """splitmix64 finalizer: xor-shift 30/27/31 with the two multipliers."""
    x &= MASK64
    x ^= x >> 30
    x = (x * _MIX_MUL_1) & MASK64
    x ^= x >> 27
    x = (x * _MIX_MUL_2) & MASK64
    x ^= x >> 31
    return x


def splitmix64_next(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state by one step.

    Returns ``(state', output)`` where ``state' = state + GOLDEN_GAMMA``
    (wrapping) and ``output = mix64(state')``.
    """
    state = (state + GOLDEN_GAMMA) & MASK64
    return state, mix64(state)


def unit_float(raw: int) -> float:
    """Map a raw 64-bit word to a binary64 in [0, 1) using the top 53 bits."""
    return (raw >> 11) * 2.0**-53


def rng_uniform01(state: int) -> tuple[int, float]:
    """Draw one uniform [0, 1) double; bit-exact on every platform."""
    state, raw = splitmix64_next(state)
    return state, unit_float(raw)


def derive_stream(*words: int) -> int:
    """Fold integer words into a fresh 64-bit stream state.

    Used to key sub-streams (dataset, per-worker RNGs, arrival shuffles) off
    a job seed plus context words; the fold is a fixed-point so the same
    words always yield the same state.
    """
    state = 0x243F6A8885A308D3  # first 64 fractional bits of pi
    for w in words:
        state = mix64(state ^ (w & MASK64))
    return state


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash; used for parameter fingerprints and string keys."""
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & MASK64
    return h


def shuffled_range(n: int, state: int) -> list[int]:
    """Fisher-Yates shuffle of ``range(n)`` driven by splitmix64.

    Pinned algorithm: walk positions ``t = n-1 .. 1``; draw one raw word per
    position; swap ``arr[t]`` with ``arr[raw % (t+1)]``.  The modulo bias is
    irrelevant here; cross-run and cross-language agreement is what matters.
    """
    arr = list(range(n))
    for t in range(n - 1, 0, -1):
        state, raw = splitmix64_next(state)
        k = raw % (t + 1)
        arr[t], arr[k] = arr[k], arr[t]
    return arr
