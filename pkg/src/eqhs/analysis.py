"""Controllability verdicts, balancing simulation, and the spectral time bound."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import linalg
from .dynamics import (ControlPolicy, PackConfig, PolicyMode, _control_from_sigma,
                       _prepare, imbalance)
from .hypergraph import Topology, incidence_matrix, incidence_switched

#: Verdict string for switched layouts, which bypass the fixed-matrix rank test.
SWITCHED_VERDICT = "switched"

DEFAULT_MAX_STEPS = 10_000_000


def difference_matrix(n: int) -> np.ndarray:
    """(n-1) x n matrix L mapping x to pairwise differences against cell 1.

    L @ x = 0 exactly when all entries of x are equal, so driving L x to zero
    is the balancing objective in reduced coordinates.
    """
    if n < 2:
        raise ValueError(f"need at least 2 cells, got n={n}")
    L = np.zeros((n - 1, n))
    L[:, 0] = -1.0
    L[np.arange(n - 1), np.arange(1, n)] = 1.0
    return L


@dataclass(frozen=True)
class AnalysisReport:
    """Rank tests, algebraic connectivity, and the optional time bound."""

    rank_C: int
    rank_LDC: int
    controllable: bool | str
    min_equalizers_needed: int
    lambda2: float
    te_bound_seconds: float | None = None

    def to_json_dict(self) -> dict:
        return {
            "rank_C": self.rank_C,
            "rank_LDC": self.rank_LDC,
            "controllable": self.controllable,
            "lambda2": self.lambda2,
            "te_bound_s": self.te_bound_seconds,
        }


def _analysis_matrix(topology: Topology) -> np.ndarray:
    if topology.switched:
        # deterministic template column: the balanced-state realization
        return incidence_switched(topology, np.zeros(topology.n))
    return incidence_matrix(topology)


def controllability(pack: PackConfig, topology: Topology) -> AnalysisReport:
    """Decide whether the equalizer set can balance every initial state.

    A fixed layout is controllable iff rank(L D C) = n - 1. Switched layouts
    bypass the test: their incidence column tracks the largest-SOC cell, which
    reaches balance by construction (slowly), and the verdict says so.
    """
    if pack.n != topology.n:
        raise ValueError(f"pack has n={pack.n} cells, topology n={topology.n}")
    n = topology.n
    C = _analysis_matrix(topology)
    rank_c = linalg.matrix_rank(C)
    LDC = difference_matrix(n) @ (pack.d_diag()[:, None] * C)
    rank_ldc = linalg.matrix_rank(LDC)
    verdict: bool | str = SWITCHED_VERDICT if topology.switched \
        else rank_ldc == n - 1
    lam2 = linalg.second_smallest_eigenvalue(linalg.laplacian(C))
    return AnalysisReport(rank_c, rank_ldc, verdict, n - 1, lam2)


def te_upper_bound(pack: PackConfig, topology: Topology, k_s: float,
                   x0: np.ndarray, epsilon: float) -> float:
    """Guaranteed balancing time, seconds, for proportional control.

    Valid for the linear law u = K (C^T x) with smallest gain k_s; the bound
    contracts the deviation norm by (1 - d_s k_s lambda2) per step, with d_s
    the ampere-to-SOC factor of the largest-capacity cell.
    """
    if k_s <= 0 or not math.isfinite(k_s):
        raise ValueError(f"smallest gain must be > 0, got {k_s}")
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    x0 = np.asarray(x0, dtype=float)
    n = topology.n
    if x0.shape != (n,):
        raise ValueError(f"x0 has shape {x0.shape}, topology needs ({n},)")
    lam2 = linalg.second_smallest_eigenvalue(linalg.laplacian(_analysis_matrix(topology)))
    if lam2 <= 0.0:
        raise ValueError("second smallest eigenvalue is 0: the bound is infinite "
                         "(layout cannot contract all imbalance directions)")
    deviation = float(np.linalg.norm(x0 - x0.mean()))
    if deviation <= n * epsilon:
        raise ValueError("x0 is already within tolerance; no bound to compute")
    contraction = pack.d_smallest * k_s * lam2
    if not 0.0 < contraction < 1.0:
        raise ValueError(f"d_s*k_s*lambda2 = {contraction:.4g} outside (0, 1)")
    steps = (math.log(deviation) - math.log(n * epsilon)) / -math.log1p(-contraction)
    # the guarantee is per whole sampling period: the first integer step at
    # which the contracted norm is inside tolerance. Layouts whose nonzero
    # spectrum is flat (every mode at lambda2) hit this bound exactly, so
    # rounding the step count up is required, not cosmetic.
    return pack.sample_period * math.ceil(steps)


@dataclass
class SimRun:
    """One balancing run: outcome plus optionally recorded trajectory."""

    converged: bool
    steps: int
    te_seconds: float | None
    soc_final: np.ndarray
    clamped: bool
    external_current: float | np.ndarray
    recorded_steps: np.ndarray | None = None
    recorded_soc: np.ndarray | None = None
    recorded_u: np.ndarray | None = None
    recorded_imbalance: np.ndarray | None = None


def _default_max_steps(pack: PackConfig, topology: Topology, policy: ControlPolicy,
                       x0: np.ndarray, epsilon: float) -> int:
    if policy.mode is PolicyMode.PROPORTIONAL:
        try:
            bound = te_upper_bound(pack, topology, policy.smallest_gain, x0, epsilon)
            return max(1, math.ceil(10.0 * bound / pack.sample_period))
        except ValueError:
            pass
    return DEFAULT_MAX_STEPS


def simulate_until_balanced(pack: PackConfig, topology: Topology,
                            policy: ControlPolicy, x0: np.ndarray, epsilon: float,
                            max_steps: int | None = None,
                            external_current: float | np.ndarray = 0.0,
                            record_stride: int = 0,
                            force: bool = False) -> SimRun:
    """Iterate the closed loop until the imbalance first drops to epsilon.

    Refuses uncontrollable fixed layouts up front unless ``force`` is set;
    running out of ``max_steps`` is reported as a non-converged result, not
    an error. External pack current defaults to zero; a scalar applies every
    step and an array is consumed one entry per step.
    """
    x = np.array(x0, dtype=float)
    n = topology.n
    if x.shape != (n,):
        raise ValueError(f"x0 has shape {x.shape}, topology needs ({n},)")
    if np.any((x < 0.0) | (x > 1.0)):
        raise ValueError("initial SOC entries must lie in [0, 1]")
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    if not topology.switched and not force:
        report = controllability(pack, topology)
        if report.controllable is False:
            raise ValueError(f"layout cannot balance the pack: rank(LDC) = "
                             f"{report.rank_LDC} < {n - 1}; pass force=True "
                             f"to simulate anyway")
    if max_steps is None:
        max_steps = _default_max_steps(pack, topology, policy, x, epsilon)
    if max_steps < 1:
        raise ValueError(f"max_steps must be >= 1, got {max_steps}")

    profile = None
    if not np.isscalar(external_current):
        profile = np.asarray(external_current, dtype=float)
        if profile.ndim != 1:
            raise ValueError("external current profile must be 1-D")

    prep = _prepare(policy, topology, pack)
    d = prep.d
    t0 = pack.sample_period
    record = record_stride > 0
    rec_steps: list[int] = []
    rec_soc: list[np.ndarray] = []
    rec_u: list[np.ndarray] = []
    rec_imb: list[float] = []

    imb = imbalance(x)
    clamped = False
    converged = imb <= epsilon
    steps_run = 0
    u = np.zeros(topology.n_e)

    def snapshot(k: int) -> None:
        rec_steps.append(k)
        rec_soc.append(x.copy())
        rec_u.append(u.copy())
        rec_imb.append(imb)

    if record:
        snapshot(0)
    k = 0
    while not converged and k < max_steps:
        if profile is not None:
            if k >= profile.size:
                raise ValueError(f"external current profile has {profile.size} "
                                 f"entries, step {k} requested")
            i_s = float(profile[k])
        else:
            i_s = float(external_current)
        C = incidence_switched(topology, x) if topology.switched else prep.C
        sigma = C.T @ x
        u = _control_from_sigma(prep, policy, sigma)
        x = x - d * (C @ u) - d * i_s
        if x.min() < 0.0 or x.max() > 1.0:
            clamped = True
            x = np.clip(x, 0.0, 1.0)
        k += 1
        imb = imbalance(x)
        converged = imb <= epsilon
        if record and (k % record_stride == 0 or converged or k == max_steps):
            snapshot(k)
    steps_run = k

    run = SimRun(
        converged=converged,
        steps=steps_run,
        te_seconds=steps_run * t0 if converged else None,
        soc_final=x,
        clamped=clamped,
        external_current=external_current,
    )
    if record:
        run.recorded_steps = np.array(rec_steps)
        run.recorded_soc = np.vstack(rec_soc)
        run.recorded_u = np.vstack(rec_u)
        run.recorded_imbalance = np.array(rec_imb)
    return run
