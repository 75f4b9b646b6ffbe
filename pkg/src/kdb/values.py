"""Runtime value domain: scalar values, rows, and counted multisets.

Everything here is immutable and hashable so that tables and whole net
snapshots can be used as dictionary keys and compared structurally.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, TypeVar, Union

X = TypeVar("X")


class Multiset:
    """Immutable multiset: a map from elements to strictly positive counts."""

    __slots__ = ("_counts", "_hash")

    def __init__(self, items: Union[Iterable[X], Mapping[X, int], "Multiset", None] = None):
        counts: dict = {}
        if isinstance(items, Multiset):
            counts = dict(items._counts)
        elif isinstance(items, Mapping):
            for k, n in items.items():
                if n < 0:
                    raise ValueError(f"negative multiplicity {n!r} for {k!r}")
                if n > 0:
                    counts[k] = counts.get(k, 0) + n
        elif items is not None:
            for k in items:
                counts[k] = counts.get(k, 0) + 1
        self._counts = counts
        self._hash = None

    def count(self, elem) -> int:
        return self._counts.get(elem, 0)

    def __contains__(self, elem) -> bool:
        return elem in self._counts

    def __len__(self) -> int:
        """Total number of elements, counting multiplicity."""
        return sum(self._counts.values())

    def __bool__(self) -> bool:
        return bool(self._counts)

    def __iter__(self) -> Iterator:
        """Iterate elements with multiplicity (insertion order of the map)."""
        for k, n in self._counts.items():
            for _ in range(n):
                yield k

    def support(self) -> frozenset:
        """The set of distinct elements."""
        return frozenset(self._counts)

    def items(self):
        return self._counts.items()

    def add(self, elem, n: int = 1) -> "Multiset":
        out = dict(self._counts)
        out[elem] = out.get(elem, 0) + n
        return Multiset(out)

    def union(self, other: "Multiset") -> "Multiset":
        out = dict(self._counts)
        for k, n in other._counts.items():
            out[k] = out.get(k, 0) + n
        return Multiset(out)

    def intersect(self, other: "Multiset") -> "Multiset":
        out = {}
        for k, n in self._counts.items():
            m = min(n, other.count(k))
            if m > 0:
                out[k] = m
        return Multiset(out)

    def subtract(self, other: "Multiset") -> "Multiset":
        out = {}
        for k, n in self._counts.items():
            m = n - other.count(k)
            if m > 0:
                out[k] = m
        return Multiset(out)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Multiset):
            return NotImplemented
        return self._counts == other._counts

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(frozenset(self._counts.items()))
        return self._hash

    def __repr__(self) -> str:
        inner = ", ".join(f"{k!r}: {n}" for k, n in self._counts.items())
        return f"Multiset({{{inner}}})"


def ms_union(a: Multiset, b: Multiset) -> Multiset:
    """Pointwise sum of multiplicities."""
    return a.union(b)


def ms_intersect(a: Multiset, b: Multiset) -> Multiset:
    """Pointwise minimum of multiplicities."""
    return a.intersect(b)


def ms_subtract(a: Multiset, b: Multiset) -> Multiset:
    """Pointwise truncated difference of multiplicities."""
    return a.subtract(b)


# ---------------------------------------------------------------------------
# Values

@dataclass(frozen=True)
class VInt:
    value: int


@dataclass(frozen=True)
class VStr:
    value: str


@dataclass(frozen=True)
class VTid:
    """A table identifier as a first-class value."""
    name: str


@dataclass(frozen=True)
class VLoc:
    """A locality name as a first-class value."""
    name: str


@dataclass(frozen=True)
class VSet:
    """A multiset of scalar values, all of one scalar kind."""
    elements: Multiset

    def __post_init__(self):
        kinds = {scalar_kind(v) for v in self.elements.support()}
        if None in kinds:
            raise ValueError("multiset values must contain scalars only")
        if len(kinds) > 1:
            raise ValueError(f"mixed element kinds in multiset value: {sorted(kinds)}")

    def kind(self) -> str | None:
        """The common scalar kind of the elements, or None when empty."""
        for v in self.elements.support():
            return scalar_kind(v)
        return None


Value = Union[VInt, VStr, VTid, VLoc, VSet]


def scalar_kind(v) -> str | None:
    """Kind tag for scalar values; None for multisets and non-values."""
    if isinstance(v, VInt):
        return "Int"
    if isinstance(v, VStr):
        return "String"
    if isinstance(v, VTid):
        return "Id"
    if isinstance(v, VLoc):
        return "Loc"
    return None


@dataclass(frozen=True)
class ValueTuple:
    components: tuple

    def __post_init__(self):
        if len(self.components) < 1:
            raise ValueError("rows must have at least one component")

    def __len__(self) -> int:
        return len(self.components)

    def __getitem__(self, i: int):
        return self.components[i]


def value_sort_key(v):
    """A total order on values, used only to make output deterministic."""
    if isinstance(v, VInt):
        return (0, v.value)
    if isinstance(v, VStr):
        return (1, v.value)
    if isinstance(v, VTid):
        return (2, v.name)
    if isinstance(v, VLoc):
        return (3, v.name)
    if isinstance(v, VSet):
        return (4, tuple(sorted((value_sort_key(e) for e in v.elements), )))
    raise TypeError(f"not a value: {v!r}")


def row_sort_key(row: ValueTuple):
    return tuple(value_sort_key(v) for v in row.components)


def sorted_rows(rows: Multiset) -> list:
    """Rows repeated by multiplicity, in deterministic order."""
    return sorted(rows, key=row_sort_key)
