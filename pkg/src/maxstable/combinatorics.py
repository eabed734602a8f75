"""Set partitions and nonempty subsets of ``{0, ..., m-1}``.

Components are indexed from 0 throughout the package.  Subsets are carried
both as sorted tuples (``ComponentSet.members``) and as integer bitmasks
(``ComponentSet.mask``); the bitmask is what the likelihood code keys its
caches on.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb
from typing import Iterator, Sequence

PARTITION_CAP = 12
SUBSET_CAP = 25


class CombinatorialExplosion(ValueError):
    """Raised when an enumeration is requested beyond the configured cap."""


@dataclass(frozen=True, order=True)
class ComponentSet:
    members: tuple[int, ...]
    m: int

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.members, self.members[1:])):
            raise ValueError(f"members must be strictly increasing: {self.members}")
        if self.members and (self.members[0] < 0 or self.members[-1] >= self.m):
            raise ValueError(f"members {self.members} outside 0..{self.m - 1}")

    @classmethod
    def of(cls, members: Sequence[int], m: int) -> "ComponentSet":
        return cls(tuple(sorted(int(j) for j in members)), m)

    @classmethod
    def from_mask(cls, mask: int, m: int) -> "ComponentSet":
        return cls(tuple(j for j in range(m) if mask >> j & 1), m)

    @property
    def mask(self) -> int:
        out = 0
        for j in self.members:
            out |= 1 << j
        return out

    def complement(self) -> "ComponentSet":
        return ComponentSet(tuple(j for j in range(self.m) if j not in self.members), self.m)

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def __contains__(self, j) -> bool:
        return j in self.members


@dataclass(frozen=True)
class Partition:
    blocks: tuple[ComponentSet, ...]
    m: int

    def __post_init__(self):
        seen = 0
        for b in self.blocks:
            if not b.members:
                raise ValueError("partition blocks must be nonempty")
            if b.m != self.m:
                raise ValueError("block dimension does not match partition dimension")
            if seen & b.mask:
                raise ValueError("partition blocks overlap")
            seen |= b.mask
        if seen != (1 << self.m) - 1:
            raise ValueError("partition blocks do not cover all components")
        firsts = [b.members[0] for b in self.blocks]
        if firsts != sorted(firsts):
            object.__setattr__(
                self, "blocks", tuple(sorted(self.blocks, key=lambda b: b.members[0]))
            )

    @classmethod
    def of(cls, blocks: Sequence[Sequence[int]], m: int | None = None) -> "Partition":
        if m is None:
            m = 1 + max(j for b in blocks for j in b)
        return cls(tuple(ComponentSet.of(b, m) for b in blocks), m)

    @property
    def masks(self) -> tuple[int, ...]:
        return tuple(b.mask for b in self.blocks)

    def as_lists(self) -> list[list[int]]:
        return [list(b.members) for b in self.blocks]

    def __len__(self) -> int:
        return len(self.blocks)

    def __iter__(self):
        return iter(self.blocks)


def bell_number(m: int) -> int:
    """Exact Bell number via ``B(n+1) = sum_k C(n, k) B(k)``."""
    if m < 0:
        raise ValueError("m must be nonnegative")
    bell = [1]
    for n in range(m):
        bell.append(sum(comb(n, k) * bell[k] for k in range(n + 1)))
    return bell[m]


def _check_dim(m: int, cap: int, what: str) -> None:
    if m < 1:
        raise ValueError(f"dimension must be at least 1, got {m}")
    if m > cap:
        raise CombinatorialExplosion(
            f"refusing to enumerate {what} for m={m} > cap {cap}: "
            "the number of terms grows combinatorially"
        )


def restricted_growth_strings(m: int) -> Iterator[list[int]]:
    """Yield restricted growth strings ``a`` of length m in lexicographic order.

    ``a[0] = 0`` and ``a[i] <= 1 + max(a[:i])``.  The yielded list is reused
    between iterations; copy it if you keep it.
    """
    a = [0] * m
    b = [0] * m  # b[i] = 1 + max(a[:i]) (allowed ceiling for a[i])
    for i in range(1, m):
        b[i] = 1
    while True:
        yield a
        i = m - 1
        while i > 0 and a[i] == b[i]:
            i -= 1
        if i == 0:
            return
        a[i] += 1
        ceiling = b[i] + (a[i] == b[i])
        for j in range(i + 1, m):
            a[j] = 0
            b[j] = ceiling


def enumerate_partition_masks(m: int, cap: int = PARTITION_CAP) -> Iterator[tuple[int, ...]]:
    """Stream partitions of ``{0..m-1}`` as tuples of block bitmasks."""
    _check_dim(m, cap, "partitions")
    for a in restricted_growth_strings(m):
        k = max(a) + 1
        masks = [0] * k
        for j, label in enumerate(a):
            masks[label] |= 1 << j
        yield tuple(masks)


def enumerate_partitions(m: int, cap: int = PARTITION_CAP) -> Iterator[Partition]:
    for masks in enumerate_partition_masks(m, cap):
        yield Partition(tuple(ComponentSet.from_mask(b, m) for b in masks), m)


def enumerate_nonempty_subsets(m: int, cap: int = SUBSET_CAP) -> Iterator[ComponentSet]:
    """All ``2^m - 1`` nonempty subsets ordered by bitmask value."""
    _check_dim(m, cap, "subsets")
    for mask in range(1, 1 << m):
        yield ComponentSet.from_mask(mask, m)
