"""Weighted directed hyperedges for battery equalizers and their incidence matrices.

Each equalizer is one hyperedge: an ordered pair of disjoint cell-index sets
(head discharges, tail charges) with rational weights chosen so that every
incidence-matrix column sums to zero. Six canonical equalizer layouts are
generated by :func:`make_topology`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

import numpy as np


class EdgeKind(str, Enum):
    """Equalizer kind, distinguished by which cell subsets it connects."""

    CC = "CC"    # cell to cell
    MM = "MM"    # module to module
    CPC = "CPC"  # cell to pack to cell
    CMC = "CMC"  # cell to module to cell


class TopologyKind(str, Enum):
    """Canonical equalization-system layouts."""

    SERIES_CC = "series-cc"
    MODULE_CC = "module-cc"
    LAYER_CC = "layer-cc"
    CPC = "cpc"
    MODULE_CPC = "module-cpc"
    SWITCH_CPC = "switch-cpc"


#: Stable integer id per layout, part of the Monte Carlo substream contract.
TOPOLOGY_IDS = {kind: i for i, kind in enumerate(TopologyKind)}


def _as_index_tuple(name: str, values) -> tuple[int, ...]:
    out = tuple(int(v) for v in values)
    if len(out) == 0:
        raise ValueError(f"{name} must be non-empty")
    if any(v < 1 for v in out):
        raise ValueError(f"{name} indices are 1-based and must be >= 1, got {out}")
    if len(set(out)) != len(out):
        raise ValueError(f"{name} contains duplicate indices: {out}")
    return out


@dataclass(frozen=True)
class Hyperedge:
    """One equalizer as a weighted directed hyperedge.

    Head cells carry ``head_weight``, tail cells ``tail_weight``; the weights
    are exact rationals fixed by the edge kind and the head/tail sizes so that
    ``head_weight*|head| + tail_weight*|tail| == 0``.
    """

    kind: EdgeKind
    head: tuple[int, ...]
    tail: tuple[int, ...]
    current_limit: float
    head_weight: Fraction = field(init=False)
    tail_weight: Fraction = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", EdgeKind(self.kind))
        object.__setattr__(self, "head", _as_index_tuple("head", self.head))
        object.__setattr__(self, "tail", _as_index_tuple("tail", self.tail))
        if set(self.head) & set(self.tail):
            raise ValueError(f"head and tail must be disjoint, both contain "
                             f"{sorted(set(self.head) & set(self.tail))}")
        if not math.isfinite(self.current_limit) or self.current_limit < 0:
            raise ValueError(f"current_limit must be >= 0 A, got {self.current_limit}")
        hw, tw = self._weights()
        object.__setattr__(self, "head_weight", hw)
        object.__setattr__(self, "tail_weight", tw)
        assert hw * len(self.head) + tw * len(self.tail) == 0

    def _weights(self) -> tuple[Fraction, Fraction]:
        nh, nt = len(self.head), len(self.tail)
        if self.kind is EdgeKind.CC:
            if nh != 1 or nt != 1:
                raise ValueError(f"CC edge needs |head| = |tail| = 1, got {nh}/{nt}")
            return Fraction(1), Fraction(-1)
        if self.kind is EdgeKind.MM:
            if nh != nt:
                raise ValueError(f"MM edge needs equal head/tail sizes, got {nh}/{nt}")
            return Fraction(1), Fraction(-1)
        if self.kind is EdgeKind.CPC:
            if nh != 1:
                raise ValueError(f"CPC edge needs a single head cell, got {nh}")
            n = nt + 1
            return Fraction(n - 1, n), Fraction(-1, n)
        # CMC: one cell against the rest of its module of b cells
        if nh != 1:
            raise ValueError(f"CMC edge needs a single head cell, got {nh}")
        b = nt + 1
        if b < 2:
            raise ValueError("CMC edge needs at least one tail cell")
        return Fraction(b - 1, b), Fraction(-1, b)

    def validate_for(self, n: int) -> None:
        """Check that all cell indices fit a pack of n cells."""
        bad = [i for i in (*self.head, *self.tail) if i > n]
        if bad:
            raise ValueError(f"cell indices {bad} out of range for n={n}")
        if self.kind is EdgeKind.CPC and len(self.tail) != n - 1:
            raise ValueError(f"CPC edge must span the whole pack: expected "
                             f"{n - 1} tail cells, got {len(self.tail)}")

    def column_fractions(self, n: int) -> list[Fraction]:
        """Exact rational incidence column for a pack of n cells."""
        self.validate_for(n)
        col = [Fraction(0)] * n
        for i in self.head:
            col[i - 1] = self.head_weight
        for i in self.tail:
            col[i - 1] = self.tail_weight
        return col


def incidence_vector(edge: Hyperedge, n: int) -> np.ndarray:
    """Length-n incidence column of one edge, weights materialized to float."""
    return np.array([float(w) for w in edge.column_fractions(n)])


@dataclass(frozen=True)
class Topology:
    """An ordered set of equalizer hyperedges over a pack of n cells.

    ``switched`` marks the relocatable single-equalizer layout whose realized
    incidence column depends on the SOC state (see :func:`incidence_switched`).
    """

    n: int
    edges: tuple[Hyperedge, ...]
    switched: bool = False
    m: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "edges", tuple(self.edges))
        if self.n < 2:
            raise ValueError(f"need at least 2 cells, got n={self.n}")
        if not self.edges:
            raise ValueError("topology needs at least one equalizer")
        for edge in self.edges:
            edge.validate_for(self.n)
        if self.switched:
            if len(self.edges) != 1 or self.edges[0].kind is not EdgeKind.CPC:
                raise ValueError("a switched topology is a single relocatable "
                                 "cell-to-pack equalizer template")
        if self.m is not None and (self.m < 1 or self.n % self.m != 0):
            raise ValueError(f"module count m={self.m} must divide n={self.n}")

    @property
    def n_e(self) -> int:
        return len(self.edges)


def incidence_matrix(topology: Topology) -> np.ndarray:
    """n x n_e incidence matrix; every column sums to zero.

    Raises if the topology is switched: its column is state-dependent and
    must be materialized per step with :func:`incidence_switched`.
    """
    if topology.switched:
        raise ValueError("switched topology has no fixed incidence matrix; "
                         "use incidence_switched with the current SOC state")
    cols = [incidence_vector(edge, topology.n) for edge in topology.edges]
    return np.column_stack(cols)


def incidence_switched(topology: Topology, soc: np.ndarray) -> np.ndarray:
    """Realized n x 1 incidence column of a switched topology.

    The head is the cell with the largest SOC; ties break to the lowest
    cell index.
    """
    if not topology.switched:
        raise ValueError("incidence_switched requires a switched topology")
    soc = np.asarray(soc, dtype=float)
    if soc.ndim != 1 or soc.size == 0:
        raise ValueError("soc must be a non-empty 1-D vector")
    if soc.size != topology.n:
        raise ValueError(f"soc has {soc.size} entries, topology has n={topology.n}")
    n = topology.n
    head = int(np.argmax(soc))  # np.argmax returns the first (lowest) maximizer
    col = np.full((n, 1), -1.0 / n)
    col[head, 0] = (n - 1) / n
    return col


def switched_template_column(topology: Topology) -> np.ndarray:
    """Deterministic n x 1 column of a switched topology (head = cell 1)."""
    return incidence_switched(topology, np.zeros(topology.n))


def _module_cells(module: int, b: int) -> tuple[int, ...]:
    start = (module - 1) * b + 1
    return tuple(range(start, start + b))


def make_topology(kind: TopologyKind | str, n: int, m: int | None = None,
                  current_limit: float = 0.5) -> Topology:
    """Build one of the six canonical equalizer layouts.

    Edges are ordered CC, then MM, then CPC, then CMC. Module-based layouts
    use contiguous modules of b = n/m cells and require m to divide n; the
    layer-based layout requires n to be a power of two.
    """
    kind = TopologyKind(kind)
    if n < 2:
        raise ValueError(f"need at least 2 cells, got n={n}")

    def mm_edge(head_cells, tail_cells) -> Hyperedge:
        return Hyperedge(EdgeKind.MM, head_cells, tail_cells, current_limit)

    if kind is TopologyKind.SERIES_CC:
        edges = [Hyperedge(EdgeKind.CC, (i,), (i + 1,), current_limit)
                 for i in range(1, n)]
        return Topology(n, tuple(edges))

    if kind is TopologyKind.CPC:
        edges = [Hyperedge(EdgeKind.CPC, (i,),
                           tuple(j for j in range(1, n + 1) if j != i),
                           current_limit)
                 for i in range(1, n + 1)]
        return Topology(n, tuple(edges))

    if kind is TopologyKind.SWITCH_CPC:
        template = Hyperedge(EdgeKind.CPC, (1,), tuple(range(2, n + 1)),
                             current_limit)
        return Topology(n, (template,), switched=True)

    if kind is TopologyKind.LAYER_CC:
        if n & (n - 1) != 0:
            raise ValueError(f"layer-based layout requires a power-of-2 pack, got n={n}")
        cc = [Hyperedge(EdgeKind.CC, (i,), (i + 1,), current_limit)
              for i in range(1, n, 2)]
        mm = []
        block = 2
        while block < n:
            for start in range(1, n, 2 * block):
                head = tuple(range(start, start + block))
                tail = tuple(range(start + block, start + 2 * block))
                mm.append(mm_edge(head, tail))
            block *= 2
        return Topology(n, tuple(cc + mm))

    # module-based layouts
    if m is None:
        raise ValueError(f"{kind.value} requires a module count m")
    if m < 1 or n % m != 0:
        raise ValueError(f"module count m={m} must divide n={n}")
    b = n // m

    if kind is TopologyKind.MODULE_CC:
        cc = [Hyperedge(EdgeKind.CC, (c,), (c + 1,), current_limit)
              for j in range(1, m + 1)
              for c in _module_cells(j, b)[:-1]]
        mm = [mm_edge(_module_cells(j, b), _module_cells(j + 1, b))
              for j in range(1, m)]
        return Topology(n, tuple(cc + mm), m=m)

    if kind is TopologyKind.MODULE_CPC:
        if b < 2:
            raise ValueError(f"module-based cell-to-module layout needs modules of "
                             f"at least 2 cells, got b={b}")
        mm = [mm_edge(_module_cells(j, b), _module_cells(j + 1, b))
              for j in range(1, m)]
        cmc = []
        for j in range(1, m + 1):
            cells = _module_cells(j, b)
            for i in cells:
                cmc.append(Hyperedge(EdgeKind.CMC, (i,),
                                     tuple(c for c in cells if c != i),
                                     current_limit))
        return Topology(n, tuple(mm + cmc), m=m)

    raise AssertionError(f"unhandled kind {kind}")


def topology_to_dict(topology: Topology) -> dict:
    """JSON-ready form: weights are implied by kind and head/tail sizes."""
    return {
        "n": topology.n,
        "m": topology.m,
        "switched": topology.switched,
        "edges": [
            {
                "kind": e.kind.value,
                "head": list(e.head),
                "tail": list(e.tail),
                "current_limit_a": e.current_limit,
            }
            for e in topology.edges
        ],
    }


def topology_from_dict(data: dict) -> Topology:
    try:
        edges = tuple(
            Hyperedge(EdgeKind(e["kind"]), tuple(e["head"]), tuple(e["tail"]),
                      float(e["current_limit_a"]))
            for e in data["edges"]
        )
        return Topology(int(data["n"]), edges,
                        switched=bool(data.get("switched", False)),
                        m=None if data.get("m") is None else int(data["m"]))
    except KeyError as exc:
        raise ValueError(f"topology JSON is missing field {exc}") from exc
