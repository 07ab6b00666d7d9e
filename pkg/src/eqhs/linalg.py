"""Dense symmetric eigensolver, tolerance-based rank, and the edge Laplacian.

The eigensolver runs cyclic Jacobi rotations. Sweeps use a tournament
ordering whose disjoint rotation pairs commute and are applied as one
vectorized orthogonal update per round; if the off-diagonal norm stalls
(the tournament ordering, unlike row-cyclic, is not guaranteed to
converge), the solver falls back to thresholded row-cyclic sweeps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: Off-diagonal Frobenius norm threshold, relative to the input norm.
OFF_DIAGONAL_TOL = 1e-12

#: Eigenvalues of a declared-PSD matrix above this are errors, not noise.
PSD_CLAMP = -1e-10

#: Hard cap on Jacobi sweeps; hitting it signals pathological input.
MAX_SWEEPS = 100


@dataclass(frozen=True)
class SymmetricMatrix:
    """A dense real symmetric matrix, symmetrized by averaging on entry."""

    order: int
    entries: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("matrix entries must be finite")
        scale = np.max(np.abs(a))
        skew = np.max(np.abs(a - a.T))
        if scale > 0 and skew > 1e-12 * scale:
            raise ValueError(f"matrix is not symmetric: max asymmetry {skew:.3e} "
                             f"exceeds 1e-12 relative to max entry {scale:.3e}")
        sym = (a + a.T) / 2.0
        sym.setflags(write=False)
        object.__setattr__(self, "entries", sym)
        object.__setattr__(self, "order", a.shape[0])


def _as_symmetric(a) -> SymmetricMatrix:
    return a if isinstance(a, SymmetricMatrix) else SymmetricMatrix(np.shape(a)[0], a)


def laplacian(C: np.ndarray) -> SymmetricMatrix:
    """C @ C.T for an incidence matrix C; PSD with zero row sums."""
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.size == 0:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {C.shape}")
    return SymmetricMatrix(C.shape[0], C @ C.T)


def _tournament_rounds(n: int) -> list[np.ndarray]:
    # circle method: n-1 rounds of disjoint pairs covering each (p, q) once
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = [(min(players[i], players[m - 1 - i]),
                  max(players[i], players[m - 1 - i]))
                 for i in range(m // 2)
                 if players[i] < n and players[m - 1 - i] < n]
        rounds.append(np.array(pairs, dtype=np.intp))
        players = [players[0], players[-1], *players[1:-1]]
    return rounds


def _tangents(app: np.ndarray, aqq: np.ndarray, apq: np.ndarray) -> np.ndarray:
    """Stable Jacobi rotation tangents; zero where apq is already zero."""
    t = np.zeros_like(apq)
    nz = apq != 0.0
    if not np.any(nz):
        return t
    with np.errstate(over="ignore"):  # denormal apq -> inf tau -> t = 0, harmless
        tau = (aqq[nz] - app[nz]) / (2.0 * apq[nz])
        small = np.abs(tau) < 1e10
        tt = np.empty_like(tau)
        tau_s = tau[small]
        tt[small] = np.sign(tau_s + (tau_s == 0)) / (np.abs(tau_s) + np.hypot(1.0, tau_s))
        tt[~small] = 1.0 / (2.0 * tau[~small])
    t[nz] = tt
    return t


def _apply_rounds(a: np.ndarray, v: np.ndarray | None,
                  rounds: list[np.ndarray]) -> None:
    for pairs in rounds:
        ps, qs = pairs[:, 0], pairs[:, 1]
        t = _tangents(a[ps, ps], a[qs, qs], a[ps, qs])
        c = 1.0 / np.sqrt(1.0 + t * t)
        s = t * c
        colp, colq = a[:, ps], a[:, qs]
        a[:, ps] = c * colp - s * colq
        a[:, qs] = s * colp + c * colq
        rowp, rowq = a[ps, :], a[qs, :]
        a[ps, :] = c[:, None] * rowp - s[:, None] * rowq
        a[qs, :] = s[:, None] * rowp + c[:, None] * rowq
        a[ps, qs] = 0.0
        a[qs, ps] = 0.0
        if v is not None:
            vp, vq = v[:, ps], v[:, qs]
            v[:, ps] = c * vp - s * vq
            v[:, qs] = s * vp + c * vq


def _row_cyclic_sweep(a: np.ndarray, v: np.ndarray | None, thresh: float) -> None:
    n = a.shape[0]
    for p in range(n - 1):
        for q in range(p + 1, n):
            apq = a[p, q]
            if abs(apq) <= thresh:
                continue
            t = _tangents(a[p:p + 1, p], a[q:q + 1, q], a[p:p + 1, q])[0]
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            colp, colq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = c * colp - s * colq
            a[:, q] = s * colp + c * colq
            rowp, rowq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c * rowp - s * rowq
            a[q, :] = s * rowp + c * rowq
            a[p, q] = 0.0
            a[q, p] = 0.0
            if v is not None:
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq


def _off_norm(a: np.ndarray) -> float:
    # sum only off-diagonal squares; ||A||^2 - sum(diag^2) would cancel
    # catastrophically once the off-diagonal part is nearly zero
    off = a.copy()
    np.fill_diagonal(off, 0.0)
    return float(np.linalg.norm(off))


def _jacobi(a0: np.ndarray, want_vectors: bool,
            max_sweeps: int) -> tuple[np.ndarray, np.ndarray | None]:
    a = np.array(a0, dtype=float)
    n = a.shape[0]
    v = np.eye(n) if want_vectors else None
    if n == 1:
        return a.reshape(1).copy(), v
    norm = float(np.linalg.norm(a))
    if norm == 0.0:
        return np.zeros(n), v
    rounds = _tournament_rounds(n)
    stalled = False
    off_prev = np.inf
    for _ in range(max_sweeps):
        off = _off_norm(a)
        if off <= OFF_DIAGONAL_TOL * norm:
            order = np.argsort(np.diag(a), kind="stable")
            values = np.diag(a)[order]
            vectors = v[:, order] if v is not None else None
            return values, vectors
        if off > 0.9 * off_prev:
            stalled = True  # tournament ordering can cycle; row-cyclic cannot
        off_prev = off
        if stalled:
            _row_cyclic_sweep(a, v, thresh=OFF_DIAGONAL_TOL * norm / (n * n))
        else:
            _apply_rounds(a, v, rounds)
    raise RuntimeError(f"Jacobi eigensolver did not converge in {max_sweeps} sweeps "
                       f"(order {n}, residual off-norm {_off_norm(a):.3e})")


def eigenvalues_symmetric(a, assume_psd: bool = False,
                          max_sweeps: int = MAX_SWEEPS) -> np.ndarray:
    """All eigenvalues, ascending.

    With ``assume_psd`` the tiny negative values a PSD matrix picks up
    numerically (down to -1e-10) are clamped to zero, and anything more
    negative raises instead of being hidden.
    """
    sym = _as_symmetric(a)
    values, _ = _jacobi(sym.entries, want_vectors=False, max_sweeps=max_sweeps)
    if assume_psd:
        if values[0] < PSD_CLAMP:
            raise ValueError(f"matrix declared PSD has eigenvalue {values[0]:.3e}")
        values = np.where(values < 0.0, 0.0, values)
    return values


def eigh_symmetric(a, max_sweeps: int = MAX_SWEEPS) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and the matching orthonormal eigenvector columns."""
    sym = _as_symmetric(a)
    values, vectors = _jacobi(sym.entries, want_vectors=True, max_sweeps=max_sweeps)
    return values, vectors


def second_smallest_eigenvalue(a) -> float:
    """Algebraic connectivity: eigenvalue at ascending index 1 of a Laplacian."""
    sym = _as_symmetric(a)
    if sym.order < 2:
        raise ValueError("need a matrix of order >= 2")
    return float(eigenvalues_symmetric(sym, assume_psd=True)[1])


def matrix_rank(mat: np.ndarray, rel_tol: float | None = None) -> int:
    """Singular values above ``rel_tol`` times the largest one.

    The default tolerance, max(rows, cols) * eps * 64, sits far below the
    smallest nonzero singular values that small-denominator rational
    incidence matrices produce.
    """
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise ValueError("matrix entries must be finite")
    if mat.size == 0:
        return 0
    if rel_tol is None:
        rel_tol = max(mat.shape) * np.finfo(float).eps * 64
    elif rel_tol <= 0:
        raise ValueError(f"rel_tol must be > 0, got {rel_tol}")
    sv = np.linalg.svd(mat, compute_uv=False)
    if sv[0] == 0.0:
        return 0
    return int(np.count_nonzero(sv > rel_tol * sv[0]))
