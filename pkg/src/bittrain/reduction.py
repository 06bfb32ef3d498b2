"""Deterministic summation kernels with device-dependent shapes.

Floating-point addition is not associative, so the *shape* of a reduction
is part of its contract.  Two variants are modeled:

* ``Sequential`` -- strict left-to-right fold; identical on every device
  kind.  This is the device-agnostic kernel forced by heterogeneity
  determinism.
* ``Tree(fanin)`` -- bottom-up f-ary tree; children of a node are combined
  left-to-right.  The fanin is a per-device-kind surrogate (think SM
  count), so two device kinds with different fanins produce different
  low-order bits on the same input.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Sequential:
    """Strict left-to-right summation; device-independent."""


@dataclass(frozen=True)
class Tree:
    """Bottom-up f-ary tree summation; shape depends on the fanin."""

    fanin: int

    def __post_init__(self):
        if self.fanin < 1:
            raise ValueError(f"fanin must be positive, got {self.fanin}")


ReduceVariant = Sequential | Tree


def _seq_sum(values: list[float], lo: int, hi: int) -> float:
    """Left-to-right fold of values[lo:hi] without a 0.0 seed.

    Folding from the first element (not from 0.0) preserves -0.0 and keeps
    the single-element case bit-identical to its input.
    """
    acc = values[lo]
    for i in range(lo + 1, hi):
        acc += values[i]
    return acc


def reduce_sum(values: list[float], variant: ReduceVariant) -> float:
    """Sum ``values`` under the given reduction shape.  Empty input -> 0.0."""
    n = len(values)
    if n == 0:
        return 0.0
    if isinstance(variant, Sequential):
        return _seq_sum(values, 0, n)
    f = variant.fanin
    level = values
    while len(level) > 1:
        level = [_seq_sum(level, i, min(i + f, len(level))) for i in range(0, len(level), f)]
    return level[0]


@dataclass(frozen=True)
class KernelProfile:
    """Reduction behavior of one device kind.

    ``Sequential`` profiles are identical across device kinds; ``Tree``
    profiles differ whenever their fanins differ.
    """

    device_kind: str
    reduce_variant: ReduceVariant

    @classmethod
    def native(cls, device_kind: str, fanin: int) -> "KernelProfile":
        """The device's own tree kernel (fanin is its SM-count surrogate)."""
        return cls(device_kind, Tree(fanin))

    @classmethod
    def device_agnostic(cls, device_kind: str) -> "KernelProfile":
        """The forced deterministic kernel used under heterogeneity determinism."""
        return cls(device_kind, Sequential())
