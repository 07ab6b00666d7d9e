#!/usr/bin/env python3
"""Print the algebraic connectivity of every canonical layout per pack size.

The second smallest eigenvalue of C C^T predicts balancing speed: larger
means faster. Defaults reproduce the six-layout, five-size comparison table.
"""

import argparse

from eqhs import linalg
from eqhs.analysis import _analysis_matrix
from eqhs.hypergraph import TopologyKind, make_topology

DEFAULT_SIZES = [(8, 2), (16, 2), (32, 4), (64, 4), (128, 8)]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", default=",".join(f"{n}:{m}" for n, m in DEFAULT_SIZES),
                        help="comma-separated n:m pairs")
    args = parser.parse_args()
    sizes = [tuple(int(v) for v in pair.split(":")) for pair in args.sizes.split(",")]

    kinds = list(TopologyKind)
    print(f"{'n':>4} {'m':>3} | " + " ".join(f"{k.value:>11}" for k in kinds))
    for n, m in sizes:
        row = []
        for kind in kinds:
            lam2 = linalg.second_smallest_eigenvalue(
                linalg.laplacian(_analysis_matrix(make_topology(kind, n, m))))
            row.append(f"{lam2:11.4f}")
        print(f"{n:>4} {m:>3} | " + " ".join(row))


if __name__ == "__main__":
    main()
