#!/usr/bin/env python3
"""Rank tests for equalizer sets with deliberately removed equalizers.

Reproduces the eight cell-to-pack scenarios (with and without redundant
equalizers) and prints rank(C), the equalizer count, and the verdict.
"""

from eqhs.analysis import controllability
from eqhs.dynamics import PackConfig
from eqhs.hypergraph import Topology, TopologyKind, make_topology


def drop(topology, *one_based):
    keep = tuple(e for i, e in enumerate(topology.edges, 1) if i not in one_based)
    return Topology(topology.n, keep, m=topology.m)


def main() -> None:
    pack = PackConfig.uniform(8, 3.1, m=2)
    cpc = make_topology(TopologyKind.CPC, 8)
    mcpc = make_topology(TopologyKind.MODULE_CPC, 8, 2)
    scenarios = [
        ("cpc, all equalizers", cpc),
        ("cpc, without e8", drop(cpc, 8)),
        ("cpc, without e7, e8", drop(cpc, 7, 8)),
        ("cpc, without e1, e2, e3", drop(cpc, 1, 2, 3)),
        ("module-cpc, all equalizers", mcpc),
        ("module-cpc, without e1", drop(mcpc, 1)),
        ("module-cpc, without e2, e6", drop(mcpc, 2, 6)),
        ("module-cpc, without e2, e3, e6", drop(mcpc, 2, 3, 6)),
    ]
    print(f"{'scenario':<32} {'rank(C)':>7} {'equalizers':>10} {'balances?':>9}")
    for name, topo in scenarios:
        report = controllability(pack, topo)
        verdict = "yes" if report.controllable is True else "no"
        print(f"{name:<32} {report.rank_C:>7} {topo.n_e:>10} {verdict:>9}")


if __name__ == "__main__":
    main()
