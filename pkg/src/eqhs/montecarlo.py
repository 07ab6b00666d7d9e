"""Seeded Monte Carlo comparison of equalization layouts.

Every sample draws its initial SOC vector from its own counter-derived RNG
substream, so results are bit-reproducible regardless of execution order,
block scheduling, or worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from multiprocessing import Pool

import numpy as np

from . import linalg
from .dynamics import ControlPolicy, PackConfig, simulate_batch
from .hypergraph import TOPOLOGY_IDS, TopologyKind, make_topology
from .analysis import _analysis_matrix

#: Samples per work unit; fixed so scheduling cannot affect results.
BLOCK_SIZE = 256


@dataclass(frozen=True)
class McStudy:
    """Study configuration; the seed is part of the result's identity."""

    pack_sizes: tuple[tuple[int, int], ...]
    topologies: tuple[TopologyKind, ...]
    samples: int
    seed: int
    soc_low: float = 0.40
    soc_high: float = 0.80
    current_a: float = 0.5
    epsilon: float = 0.001
    sample_period_s: float = 1.0
    capacity_ah: float = 3.1
    coulombic_efficiency: float = 1.0
    bins: int = 30
    max_steps: int = 1_000_000
    max_steps_switched: int = 2_000_000

    def __post_init__(self) -> None:
        object.__setattr__(self, "pack_sizes",
                           tuple((int(n), int(m)) for n, m in self.pack_sizes))
        object.__setattr__(self, "topologies",
                           tuple(TopologyKind(t) for t in self.topologies))
        if not self.pack_sizes or not self.topologies:
            raise ValueError("study needs at least one pack size and one layout")
        if self.samples < 1:
            raise ValueError(f"samples must be >= 1, got {self.samples}")
        if not 0 <= self.soc_low <= self.soc_high <= 1:
            raise ValueError(f"need 0 <= soc_low <= soc_high <= 1, got "
                             f"[{self.soc_low}, {self.soc_high}]")
        if self.seed < 0:
            raise ValueError("seed must be a non-negative integer")
        if self.current_a <= 0 or self.epsilon <= 0 or self.capacity_ah <= 0:
            raise ValueError("current, epsilon, and capacity must be > 0")
        if self.bins < 1:
            raise ValueError(f"bins must be >= 1, got {self.bins}")

    @classmethod
    def from_dict(cls, data: dict) -> McStudy:
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown study fields: {sorted(unknown)}")
        if "seed" not in data:
            raise ValueError("study spec must carry an explicit seed")
        for required in ("pack_sizes", "topologies", "samples"):
            if required not in data:
                raise ValueError(f"study spec is missing '{required}'")
        return cls(**{k: tuple(tuple(p) for p in v) if k == "pack_sizes"
                      else tuple(v) if k == "topologies" else v
                      for k, v in data.items()})

    def to_dict(self) -> dict:
        out = asdict(self)
        out["pack_sizes"] = [list(p) for p in self.pack_sizes]
        out["topologies"] = [t.value for t in self.topologies]
        return out

    def combos(self) -> list[tuple[TopologyKind, int, int]]:
        return [(kind, n, m) for (n, m) in self.pack_sizes for kind in self.topologies]


def draw_initial_soc(seed: int, kind: TopologyKind, n: int, sample_index: int,
                     soc_low: float, soc_high: float) -> np.ndarray:
    """Initial SOC vector of one sample from its dedicated RNG substream.

    The substream key is (seed, layout id, n, sample index); the module count
    is deliberately absent so module-count sweeps at fixed n reuse the same
    draws and compare like with like.
    """
    ss = np.random.SeedSequence(entropy=[int(seed), TOPOLOGY_IDS[TopologyKind(kind)],
                                         int(n), int(sample_index)])
    return np.random.default_rng(ss).uniform(soc_low, soc_high, size=n)


def _run_block(args: tuple[McStudy, int, int, int]) -> tuple[int, int, np.ndarray]:
    study, combo_index, start, stop = args
    kind, n, m = study.combos()[combo_index]
    topology = make_topology(kind, n, m, current_limit=study.current_a)
    pack = PackConfig.uniform(n, study.capacity_ah, study.coulombic_efficiency,
                              study.sample_period_s, m=m)
    policy = ControlPolicy.sign_constant(study.current_a)
    X0 = np.vstack([draw_initial_soc(study.seed, kind, n, i,
                                     study.soc_low, study.soc_high)
                    for i in range(start, stop)])
    cap = study.max_steps_switched if topology.switched else study.max_steps
    result = simulate_batch(pack, topology, policy, X0, study.epsilon, cap)
    te = np.where(result.converged,
                  result.te_steps * study.sample_period_s, np.nan)
    return combo_index, start, te


@dataclass(frozen=True)
class McCombo:
    """Aggregate result for one (layout, pack size) combination."""

    kind: TopologyKind
    n: int
    m: int
    lambda2: float
    te_seconds: np.ndarray        # per sample; NaN marks non-convergence
    mean_te: float
    std_te: float
    converged: int
    samples: int
    hist_edges: np.ndarray
    hist_counts: np.ndarray


@dataclass(frozen=True)
class McReport:
    study: McStudy
    combos: tuple[McCombo, ...]

    def combo(self, kind: TopologyKind | str, n: int, m: int) -> McCombo:
        kind = TopologyKind(kind)
        for c in self.combos:
            if (c.kind, c.n, c.m) == (kind, n, m):
                return c
        raise KeyError(f"no combo ({kind.value}, n={n}, m={m}) in report")

    def ranking(self, n: int, m: int) -> list[McCombo]:
        """Combos of one pack size ordered by ascending mean balancing time."""
        rows = [c for c in self.combos if (c.n, c.m) == (n, m)]
        return sorted(rows, key=lambda c: (math.inf if math.isnan(c.mean_te)
                                           else c.mean_te))


def histogram(te_samples, bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Equal-width bins spanning [min, max]; counts sum to the sample count."""
    te = np.asarray(te_samples, dtype=float)
    if te.size == 0:
        raise ValueError("cannot build a histogram of zero samples")
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    counts, edges = np.histogram(te, bins=bins, range=(te.min(), te.max()))
    return edges, counts


def run_study(study: McStudy, workers: int = 0) -> McReport:
    """Run every (layout, pack size) combination of the study.

    ``workers`` > 1 distributes fixed-size sample blocks over a process pool;
    0 picks the CPU count. Results are bit-identical for any worker count.
    """
    combos = study.combos()
    for kind, n, m in combos:  # validate all combinations up front
        make_topology(kind, n, m, current_limit=study.current_a)

    tasks = []
    for ci in range(len(combos)):
        for start in range(0, study.samples, BLOCK_SIZE):
            tasks.append((study, ci, start, min(start + BLOCK_SIZE, study.samples)))

    if workers == 0:
        import os
        workers = os.cpu_count() or 1
    if workers > 1 and len(tasks) > 1:
        with Pool(processes=workers) as pool:
            parts = pool.map(_run_block, tasks)
    else:
        parts = [_run_block(t) for t in tasks]

    te_by_combo = [np.full(study.samples, np.nan) for _ in combos]
    for combo_index, start, te in parts:
        te_by_combo[combo_index][start:start + te.size] = te

    results = []
    for (kind, n, m), te in zip(combos, te_by_combo):
        topology = make_topology(kind, n, m, current_limit=study.current_a)
        lam2 = linalg.second_smallest_eigenvalue(
            linalg.laplacian(_analysis_matrix(topology)))
        ok = te[~np.isnan(te)]
        mean = float(ok.mean()) if ok.size else math.nan
        std = float(ok.std(ddof=1)) if ok.size >= 2 else math.nan
        if ok.size:
            edges, counts = histogram(ok, study.bins)
        else:
            edges, counts = np.array([0.0, 0.0]), np.array([0])
        results.append(McCombo(kind, n, m, lam2, te, mean, std,
                               int(ok.size), study.samples, edges, counts))
    return McReport(study, tuple(results))


def _fmt(value: float) -> str:
    return f"{value:.17g}"


def report_csv_lines(report: McReport) -> list[str]:
    lines = ["topology,n,m,lambda2,mean_te_s,std_te_s,converged,samples"]
    for c in report.combos:
        lines.append(f"{c.kind.value},{c.n},{c.m},{_fmt(c.lambda2)},"
                     f"{_fmt(c.mean_te)},{_fmt(c.std_te)},{c.converged},{c.samples}")
    return lines


def histogram_csv_lines(combo: McCombo) -> list[str]:
    lines = ["bin_lo,bin_hi,count"]
    for lo, hi, count in zip(combo.hist_edges[:-1], combo.hist_edges[1:],
                             combo.hist_counts):
        lines.append(f"{_fmt(lo)},{_fmt(hi)},{int(count)}")
    return lines
