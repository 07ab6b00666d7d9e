"""Discrete-time SOC dynamics of a balanced pack and the balancing controllers.

State update per sampling period: x(k+1) = x(k) - D C u(k) - D d(k), where
D = diag(eta * T0 / (3600 * Q_i)) converts amperes to SOC fraction per step,
C is the equalizer incidence matrix, u the equalizer currents, and d the
external pack current replicated across cells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .hypergraph import Topology, incidence_matrix, incidence_switched
from . import linalg


@dataclass(frozen=True)
class PackConfig:
    """Cell capacities and sampling setup shared by every simulation step."""

    n: int
    capacities: tuple[float, ...]
    coulombic_efficiency: float = 1.0
    sample_period: float = 1.0
    m: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "capacities", tuple(float(q) for q in self.capacities))
        if self.n < 1:
            raise ValueError(f"need at least one cell, got n={self.n}")
        if len(self.capacities) != self.n:
            raise ValueError(f"{len(self.capacities)} capacities for n={self.n} cells")
        if any(q <= 0 or not math.isfinite(q) for q in self.capacities):
            raise ValueError("all capacities must be positive and finite")
        if not 0.0 < self.coulombic_efficiency <= 1.0:
            raise ValueError(f"coulombic efficiency must be in (0, 1], "
                             f"got {self.coulombic_efficiency}")
        if self.sample_period <= 0:
            raise ValueError(f"sample period must be > 0 s, got {self.sample_period}")
        if self.m is not None and (self.m < 1 or self.n % self.m != 0):
            raise ValueError(f"module count m={self.m} must divide n={self.n}")

    @classmethod
    def uniform(cls, n: int, capacity_ah: float, coulombic_efficiency: float = 1.0,
                sample_period: float = 1.0, m: int | None = None) -> PackConfig:
        return cls(n, (capacity_ah,) * n, coulombic_efficiency, sample_period, m)

    def d_diag(self) -> np.ndarray:
        """Diagonal of D: ampere-to-SOC-per-step factor for each cell."""
        q = np.array(self.capacities)
        return self.coulombic_efficiency * self.sample_period / (3600.0 * q)

    @property
    def d_smallest(self) -> float:
        """Smallest diagonal of D (belongs to the largest-capacity cell)."""
        return (self.coulombic_efficiency * self.sample_period
                / (3600.0 * max(self.capacities)))


@dataclass
class SocState:
    """Pack state at discrete step k."""

    step: int
    soc: np.ndarray

    def __post_init__(self) -> None:
        self.soc = np.asarray(self.soc, dtype=float)
        if self.step < 0:
            raise ValueError(f"step must be >= 0, got {self.step}")
        if self.soc.ndim != 1 or self.soc.size == 0:
            raise ValueError("soc must be a non-empty 1-D vector")
        if not np.all(np.isfinite(self.soc)):
            raise ValueError("soc entries must be finite")


class PolicyMode(str, Enum):
    SIGN_CONSTANT = "sign-constant"
    PROPORTIONAL = "proportional"


@dataclass(frozen=True)
class ControlPolicy:
    """Balancing controller.

    Sign-constant drives each equalizer at a fixed current magnitude in the
    direction of its measured SOC difference (the per-edge magnitude defaults
    to the edge's current limit). Proportional drives each equalizer at
    gain * (SOC difference), the linear law behind the spectral time bound.
    """

    mode: PolicyMode
    gains: float | tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", PolicyMode(self.mode))
        if self.gains is not None:
            gains = (float(self.gains),) if np.isscalar(self.gains) \
                else tuple(float(g) for g in self.gains)
            if any(g < 0 or not math.isfinite(g) for g in gains):
                raise ValueError("gains must be finite and >= 0")
            object.__setattr__(self, "gains", gains if len(gains) > 1 else gains[0])
        if self.mode is PolicyMode.PROPORTIONAL and self.gains is None:
            raise ValueError("proportional control needs explicit gains")

    @classmethod
    def sign_constant(cls, magnitudes: float | tuple[float, ...] | None = None
                      ) -> ControlPolicy:
        return cls(PolicyMode.SIGN_CONSTANT, magnitudes)

    @classmethod
    def proportional(cls, gains: float | tuple[float, ...],
                     pack: PackConfig | None = None,
                     topology: Topology | None = None) -> ControlPolicy:
        """Proportional policy; validates the stability margin if a system is given."""
        policy = cls(PolicyMode.PROPORTIONAL, gains)
        if pack is not None and topology is not None:
            check_proportional_stability(policy, pack, topology)
        return policy

    def edge_gains(self, n_e: int) -> np.ndarray:
        if self.gains is None:
            raise ValueError("policy has no gains set")
        if np.isscalar(self.gains):
            return np.full(n_e, float(self.gains))
        gains = np.array(self.gains, dtype=float)
        if gains.size != n_e:
            raise ValueError(f"{gains.size} gains for {n_e} equalizers")
        return gains

    @property
    def smallest_gain(self) -> float:
        if self.gains is None:
            raise ValueError("policy has no gains set")
        return float(self.gains) if np.isscalar(self.gains) else min(self.gains)


def check_proportional_stability(policy: ControlPolicy, pack: PackConfig,
                                 topology: Topology) -> float:
    """Return d_s * k_s * lambda_max(C C^T), raising if it reaches 1."""
    if policy.mode is not PolicyMode.PROPORTIONAL:
        raise ValueError("stability margin applies to proportional control only")
    C = _fixed_or_template_matrix(topology)
    lam_max = float(linalg.eigenvalues_symmetric(linalg.laplacian(C),
                                                 assume_psd=True)[-1])
    margin = pack.d_smallest * policy.smallest_gain * lam_max
    if margin >= 1.0:
        raise ValueError(f"unstable proportional gains: d_s*k_s*lambda_max = "
                         f"{margin:.4g} >= 1")
    return margin


def _fixed_or_template_matrix(topology: Topology) -> np.ndarray:
    if topology.switched:
        return incidence_switched(topology, np.zeros(topology.n))
    return incidence_matrix(topology)


@dataclass(frozen=True)
class _Prepared:
    """Per-(pack, topology, policy) constants reused across steps."""

    C: np.ndarray              # n x n_e (switched: template, rebuilt per step)
    DC: np.ndarray             # D @ C
    d: np.ndarray              # diag of D
    magnitudes: np.ndarray | None   # sign-constant current magnitudes, amperes
    cap_denominator: np.ndarray | None  # anti-chatter: u_cap = |sigma| / this
    gains: np.ndarray | None   # proportional gains


def _prepare(policy: ControlPolicy, topology: Topology, pack: PackConfig) -> _Prepared:
    if pack.n != topology.n:
        raise ValueError(f"pack has n={pack.n} cells, topology n={topology.n}")
    d = pack.d_diag()
    C = _fixed_or_template_matrix(topology)
    limits = np.array([e.current_limit for e in topology.edges])
    if policy.mode is PolicyMode.SIGN_CONSTANT:
        mags = limits if policy.gains is None \
            else np.minimum(policy.edge_gains(topology.n_e), limits)
        head_weights = np.array([float(e.head_weight) for e in topology.edges])
        head_d = np.array([sum(d[i - 1] for i in e.head) for e in topology.edges])
        capden = 2.0 * head_weights**2 * head_d
        return _Prepared(C, C * d[:, None], d, mags, capden, None)
    gains = policy.edge_gains(topology.n_e)
    return _Prepared(C, C * d[:, None], d, None, None, gains)


def _control_from_sigma(prep: _Prepared, policy: ControlPolicy,
                        sigma: np.ndarray) -> np.ndarray:
    if policy.mode is PolicyMode.SIGN_CONSTANT:
        cap = np.abs(sigma) / prep.cap_denominator
        return np.sign(sigma) * np.minimum(prep.magnitudes, cap)
    return prep.gains * sigma


def control_step(policy: ControlPolicy, topology: Topology,
                 state: SocState | np.ndarray, pack: PackConfig) -> np.ndarray:
    """Equalizer currents u(k) in amperes, one entry per edge.

    Sign-constant currents are capped per edge so that one step cannot
    overshoot the balance point of the SOC difference the edge measures
    (without the cap, constant current limit-cycles at fine tolerances).
    For a switched topology the single incidence column is materialized
    from the current state first.
    """
    x = state.soc if isinstance(state, SocState) else np.asarray(state, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("soc entries must be finite")
    if x.shape != (topology.n,):
        raise ValueError(f"state has shape {x.shape}, topology needs ({topology.n},)")
    prep = _prepare(policy, topology, pack)
    C = incidence_switched(topology, x) if topology.switched else prep.C
    sigma = C.T @ x
    return _control_from_sigma(prep, policy, sigma)


def step(pack: PackConfig, C: np.ndarray, x: np.ndarray, u,
         external_current: float = 0.0) -> tuple[np.ndarray, bool]:
    """One Coulomb-counting update x - D C u - D 1 I_s; returns (x_next, clamped).

    ``clamped`` flags that some SOC left [0, 1] and was saturated; the values
    are still returned so callers can decide whether that is acceptable.
    """
    C = np.asarray(C, dtype=float)
    if C.ndim != 2:
        raise ValueError(f"incidence matrix must be 2-D, got shape {C.shape}")
    x = np.asarray(x, dtype=float)
    if x.shape != (C.shape[0],):
        raise ValueError(f"state has shape {x.shape}, incidence has {C.shape[0]} rows")
    if C.shape[0] != pack.n:
        raise ValueError(f"incidence has {C.shape[0]} rows, pack has n={pack.n}")
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if u.shape != (C.shape[1],):
        raise ValueError(f"{u.size} currents for {C.shape[1]} equalizers")
    d = pack.d_diag()
    x_next = x - d * (C @ u) - d * float(external_current)
    clamped = bool(x_next.min() < 0.0 or x_next.max() > 1.0)
    if clamped:
        x_next = np.clip(x_next, 0.0, 1.0)
    return x_next, clamped


def imbalance(soc: np.ndarray) -> float:
    """Normalized SOC deviation (1/n) * ||x - mean(x)||_2; zero iff balanced."""
    x = np.asarray(soc, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("soc must be a non-empty 1-D vector")
    dev = x - x.mean()
    return float(np.linalg.norm(dev) / x.size)


@dataclass
class BatchResult:
    """Outcome of a lockstep batch simulation."""

    te_steps: np.ndarray     # first step index with imbalance <= eps; -1 if never
    converged: np.ndarray    # bool per row
    soc_final: np.ndarray    # state at convergence (or at the last step run)
    clamped: bool


def simulate_batch(pack: PackConfig, topology: Topology, policy: ControlPolicy,
                   X0: np.ndarray, epsilon: float, max_steps: int,
                   check_convergence: bool = True,
                   compact_every: int = 1024) -> BatchResult:
    """Run many independent packs of the same system in lockstep.

    Each row of X0 is one pack's initial SOC vector; rows never interact.
    Converged rows are frozen at their crossing state and periodically
    compacted out of the working set. With ``check_convergence`` off the
    batch runs exactly ``max_steps`` steps (used by conservation suites).
    """
    X = np.array(X0, dtype=float, ndmin=2)
    B, n = X.shape
    if n != topology.n:
        raise ValueError(f"X0 has {n} columns, topology has n={topology.n}")
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    if max_steps < 1:
        raise ValueError(f"max_steps must be >= 1, got {max_steps}")
    prep = _prepare(policy, topology, pack)
    te = np.full(B, -1, dtype=np.int64)
    soc_final = X.copy()
    clamped = False

    index = np.arange(B)          # original row of each working row
    alive = np.ones(B, dtype=bool)
    if check_convergence:
        dev = X - X.mean(axis=1, keepdims=True)
        done0 = np.linalg.norm(dev, axis=1) / n <= epsilon
        te[done0] = 0
        alive = ~done0

    d = prep.d
    switched = topology.switched
    if switched:
        mag0 = prep.magnitudes[0] if prep.magnitudes is not None else None
        gain0 = prep.gains[0] if prep.gains is not None else None
        hw = (n - 1) / n

    for k in range(1, max_steps + 1):
        if check_convergence and not alive.any():
            break
        if switched:
            rows = np.arange(X.shape[0])
            idx = np.argmax(X, axis=1)
            sigma = X[rows, idx] - X.mean(axis=1)
            if prep.magnitudes is not None:
                cap = np.abs(sigma) / (2.0 * hw * hw * d[idx])
                u = np.sign(sigma) * np.minimum(mag0, cap)
            else:
                u = gain0 * sigma
            u = np.where(alive, u, 0.0)
            X += (u[:, None] / n) * d[None, :]
            X[rows, idx] -= u * d[idx]
        else:
            sigma = X @ prep.C
            U = _control_from_sigma(prep, policy, sigma)
            U[~alive] = 0.0
            X -= U @ prep.DC.T
        if X.min() < 0.0 or X.max() > 1.0:
            clamped = True
            np.clip(X, 0.0, 1.0, out=X)
        if check_convergence:
            dev = X - X.mean(axis=1, keepdims=True)
            crossed = alive & (np.linalg.norm(dev, axis=1) / n <= epsilon)
            if crossed.any():
                te[index[crossed]] = k
                soc_final[index[crossed]] = X[crossed]
                alive &= ~crossed
            if k % compact_every == 0 and not alive.all():
                X = X[alive]
                index = index[alive]
                alive = np.ones(X.shape[0], dtype=bool)

    still = alive.nonzero()[0]
    if still.size:
        soc_final[index[still]] = X[still]
    converged = te >= 0
    return BatchResult(te, converged, soc_final, clamped)
