"""Exact rational linear algebra: row reduction, affine hulls, polytope
vertex enumeration, a small feasibility simplex, and an exact PSD test.

Matrices are 2-D numpy object arrays of fractions.Fraction (rows =
equations/generators).  Float-mode counterparts take tolerances; every
membership decision the package makes funnels through AffineHull.
"""

from __future__ import annotations

import itertools
import os
from fractions import Fraction

import numpy as np

F0 = Fraction(0)
F1 = Fraction(1)

TAU_RANK = 1e-9
TAU_MEM = 1e-9
TAU_PSD = -1e-9


def frac_matrix(rows) -> np.ndarray:
    arr = np.empty((len(rows), len(rows[0]) if rows else 0), dtype=object)
    for i, row in enumerate(rows):
        for j, x in enumerate(row):
            arr[i, j] = x if isinstance(x, Fraction) else Fraction(x)
    return arr


def frac_vector(xs) -> np.ndarray:
    arr = np.empty(len(xs), dtype=object)
    for i, x in enumerate(xs):
        arr[i] = x if isinstance(x, Fraction) else Fraction(x)
    return arr


def zeros_vec(n: int) -> np.ndarray:
    arr = np.empty(n, dtype=object)
    arr[:] = [F0] * n
    return arr


def rref(mat: np.ndarray):
    """Reduced row echelon form over Fraction.

    Returns (R, pivot_cols).  Deterministic: first nonzero pivot in
    column order.  Vectorized row operations keep this usable on a few
    hundred rows/columns.
    """
    R = mat.copy()
    m, n = R.shape
    pivots: list[int] = []
    r = 0
    for c in range(n):
        if r >= m:
            break
        pr = None
        for i in range(r, m):
            if R[i, c] != 0:
                pr = i
                break
        if pr is None:
            continue
        if pr != r:
            R[[r, pr]] = R[[pr, r]]
        piv = R[r, c]
        if piv != 1:
            R[r] = R[r] / piv
        col = R[:, c]
        for i in range(m):
            if i != r and col[i] != 0:
                R[i] = R[i] - col[i] * R[r]
        pivots.append(c)
        r += 1
    return R, pivots


def rank(mat: np.ndarray) -> int:
    if mat.size == 0:
        return 0
    return len(rref(mat)[1])


def nullspace(mat: np.ndarray) -> list[np.ndarray]:
    """Basis of {x : mat @ x = 0} over the rationals."""
    m, n = mat.shape
    if m == 0:
        return [_unit(n, j) for j in range(n)]
    R, pivots = rref(mat)
    free = [j for j in range(n) if j not in pivots]
    basis = []
    for f in free:
        v = zeros_vec(n)
        v[f] = F1
        for i, p in enumerate(pivots):
            v[p] = -R[i, f]
        basis.append(v)
    return basis


def _unit(n: int, j: int) -> np.ndarray:
    v = zeros_vec(n)
    v[j] = F1
    return v


def solve_affine(A: np.ndarray, b: np.ndarray):
    """One solution of A x = b, or None when inconsistent."""
    m, n = A.shape
    aug = np.empty((m, n + 1), dtype=object)
    aug[:, :n] = A
    aug[:, n] = b
    R, pivots = rref(aug)
    if n in pivots:
        return None
    x = zeros_vec(n)
    for i, p in enumerate(pivots):
        x[p] = R[i, n]
    return x


class AffineHull:
    """point + span(basis rows); supports exact or float membership."""

    def __init__(self, point: np.ndarray, basis: list[np.ndarray], mode: str = "exact"):
        self.point = point
        self.basis = list(basis)
        self.mode = mode
        self.ambient = len(point)
        if mode == "exact":
            if self.basis:
                mat = np.vstack([b.reshape(1, -1) for b in self.basis])
                R, piv = rref(mat)
                keep = [R[i] for i in range(len(piv))]
                self._red = np.vstack([k.reshape(1, -1) for k in keep]) if keep else None
                self._piv = piv
            else:
                self._red = None
                self._piv = []
        else:
            if self.basis:
                mat = np.vstack([np.asarray(b, dtype=np.complex128).reshape(1, -1) for b in self.basis])
                q, r = np.linalg.qr(mat.T)
                keep = [q[:, k] for k in range(r.shape[1]) if abs(r[k, k]) > TAU_RANK]
                self._q = (np.column_stack(keep) if keep
                           else np.zeros((self.ambient, 0), dtype=np.complex128))
            else:
                self._q = np.zeros((self.ambient, 0), dtype=np.complex128)

    @property
    def dim(self) -> int:
        if self.mode == "exact":
            return 0 if self._red is None else self._red.shape[0]
        return self._q.shape[1]

    def reduced_basis(self) -> list[np.ndarray]:
        """Independent row-reduced direction basis (exact mode only)."""
        if self.mode != "exact":
            raise ValueError("reduced_basis needs exact mode")
        if self._red is None:
            return []
        return [self._red[i] for i in range(self._red.shape[0])]

    def _reduce_exact(self, v: np.ndarray) -> np.ndarray:
        """Residual of v after elimination against the reduced basis."""
        w = v.copy()
        if self._red is not None:
            for i, p in enumerate(self._piv):
                if w[p] != 0:
                    w = w - w[p] * self._red[i]
        return w

    def contains(self, v: np.ndarray, tol: float = TAU_MEM) -> bool:
        if self.mode == "exact":
            w = self._reduce_exact(v - self.point)
            return all(x == 0 for x in w)
        d = np.asarray(v, dtype=np.complex128) - np.asarray(self.point, dtype=np.complex128)
        proj = self._q @ (self._q.conj().T @ d)
        return bool(np.max(np.abs(d - proj)) <= tol) if d.size else True

    def direction_in_span(self, v: np.ndarray, tol: float = TAU_MEM) -> bool:
        if self.mode == "exact":
            return all(x == 0 for x in self._reduce_exact(v))
        d = np.asarray(v, dtype=np.complex128)
        proj = self._q @ (self._q.conj().T @ d)
        return bool(np.max(np.abs(d - proj)) <= tol) if d.size else True


def affine_span(vectors: list[np.ndarray], mode: str = "exact") -> AffineHull:
    """Affine hull of a nonempty list of equal-length vectors."""
    if not vectors:
        raise ValueError("affine_span needs at least one vector")
    point = vectors[0]
    dirs = [v - point for v in vectors[1:]]
    if mode == "exact":
        dirs = [d for d in dirs if any(x != 0 for x in d)]
    hull = AffineHull(point, dirs, mode)
    # re-extract an independent basis from the reduction
    if mode == "exact":
        basis = [hull._red[i] for i in range(hull.dim)] if hull._red is not None else []
        out = AffineHull(point, basis, mode)
        return out
    return hull


def vertex_enumerate(A: np.ndarray, b: np.ndarray, cap: int | None = None) -> list[np.ndarray]:
    """All vertices of {x >= 0 : A x = b}, exact arithmetic.

    Basic-feasible-solution enumeration over column subsets of size
    rank(A); duplicates removed.  Ambient dimension is capped (default
    24, HOPS_MAX_AMBIENT_DIM overrides) because the subset count grows
    binomially.
    """
    m, n = A.shape
    if cap is None:
        cap = int(os.environ.get("HOPS_MAX_AMBIENT_DIM", "24"))
    if n > cap:
        raise ValueError(f"ambient dimension {n} above cap {cap}")
    aug = np.empty((m, n + 1), dtype=object)
    aug[:, :n] = A
    aug[:, n] = b
    R, piv = rref(aug)
    if n in piv:
        raise ValueError("infeasible system")
    R = R[: len(piv)]
    r = len(piv)
    Ar = R[:, :n]
    br = R[:, n]
    seen = set()
    verts: list[np.ndarray] = []
    for cols in itertools.combinations(range(n), r):
        sub = Ar[:, cols]
        if len(rref(sub)[1]) != r:
            continue
        sol = solve_affine(sub, br)
        if sol is None:
            continue
        x = zeros_vec(n)
        ok = True
        for k, c in enumerate(cols):
            if sol[k] < 0:
                ok = False
                break
            x[c] = sol[k]
        if not ok:
            continue
        key = tuple(x)
        if key not in seen:
            seen.add(key)
            verts.append(x)
    return verts


class _Simplex:
    """Two-phase primal simplex over Fractions, Bland's rule (no cycling).

    Standard form: x >= 0, A x = b.  Small problems only; every pivot is
    exact so answers are certificates, not estimates.
    """

    def __init__(self, A: np.ndarray, b: np.ndarray):
        m, n = A.shape
        A = A.copy()
        b = b.copy()
        for i in range(m):
            if b[i] < 0:
                A[i] = -A[i]
                b[i] = -b[i]
        self.m, self.n = m, n
        T = np.empty((m + 1, n + m + 1), dtype=object)
        T[:m, :n] = A
        for i in range(m):
            for j in range(m):
                T[i, n + j] = F1 if i == j else F0
            T[i, n + m] = b[i]
        for j in range(n + m + 1):
            s = F0
            for i in range(m):
                s += T[i, j]
            T[m, j] = -s
        for j in range(m):
            T[m, n + j] = F0
        self.T = T
        self.basis = [n + i for i in range(m)]

    def _pivot(self, leave: int, enter: int):
        T = self.T
        piv = T[leave, enter]
        T[leave] = T[leave] / piv
        for i in range(T.shape[0]):
            if i != leave and T[i, enter] != 0:
                T[i] = T[i] - T[i, enter] * T[leave]
        self.basis[leave] = enter

    def _bland_leave(self, enter: int):
        T, m, n = self.T, self.m, self.n
        leave, best = None, None
        for i in range(m):
            if T[i, enter] > 0:
                ratio = T[i, n + m] / T[i, enter]
                if best is None or ratio < best or (
                    ratio == best and self.basis[i] < self.basis[leave]
                ):
                    best, leave = ratio, i
        return leave

    def phase1(self) -> bool:
        """Drive artificial variables to zero; False means infeasible."""
        T, m, n = self.T, self.m, self.n
        while True:
            enter = next((j for j in range(n + m) if T[m, j] < 0), None)
            if enter is None:
                break
            leave = self._bland_leave(enter)
            if leave is None:
                return False
            self._pivot(leave, enter)
        if T[m, n + m] != 0:
            return False
        # kick remaining zero-level artificials out of the basis
        for i in range(m):
            if self.basis[i] >= n:
                enter = next((j for j in range(n) if T[i, j] != 0), None)
                if enter is not None:
                    self._pivot(i, enter)
        return True

    def solution(self) -> np.ndarray:
        x = zeros_vec(self.n)
        for i, bv in enumerate(self.basis):
            if bv < self.n:
                x[bv] = self.T[i, self.n + self.m]
        return x

    def maximize(self, obj: np.ndarray):
        """Maximize obj . x after a successful phase1.  Returns optimum
        or None when unbounded.  Rows with basic artificials are
        redundant equalities and stay parked at level zero."""
        T, m, n = self.T, self.m, self.n
        # build reduced-cost row for -obj
        cost = np.empty(n + m + 1, dtype=object)
        cost[:n] = -obj
        cost[n:] = [F0] * (m + 1)
        for i in range(m):
            bv = self.basis[i]
            if bv < n and cost[bv] != 0:
                cost = cost - cost[bv] * T[i]
        while True:
            enter = next((j for j in range(n) if cost[j] < 0), None)
            if enter is None:
                break
            leave = self._bland_leave(enter)
            if leave is None:
                return None
            self._pivot(leave, enter)
            if cost[enter] != 0:
                cost = cost - cost[enter] * T[leave]
        return cost[n + m]


def lp_feasible(A: np.ndarray, b: np.ndarray):
    """A nonnegative solution of A x = b, or None (exact)."""
    sx = _Simplex(A, b)
    if not sx.phase1():
        return None
    return sx.solution()


def lp_feasible_float(A: np.ndarray, b: np.ndarray, tol: float = 1e-9):
    """A nonnegative float solution of A x = b, or None.

    Dense phase-1 simplex with Bland's rule on float64.  Used as a
    presolve when the column count makes the exact simplex too slow;
    callers confirm the support it finds with exact arithmetic.
    """
    V = np.asarray(A, dtype=np.float64)
    r = np.asarray(b, dtype=np.float64)
    m, n = V.shape
    sign = np.where(r < 0, -1.0, 1.0)
    T = np.hstack([V * sign[:, None], np.eye(m)])
    rhs = r * sign
    cost = np.concatenate([np.zeros(n), np.ones(m)])
    basis = list(range(n, n + m))
    in_basis = np.zeros(n + m, dtype=bool)
    in_basis[n:] = True
    for _ in range(200 * (n + m)):
        try:
            binv = np.linalg.inv(T[:, basis])
        except np.linalg.LinAlgError:
            return None
        lam = cost[basis] @ binv
        red = cost - lam @ T
        red[in_basis] = 0.0
        cand = np.flatnonzero(red < -tol)
        if cand.size == 0:
            break
        enter = int(cand[0])
        d = binv @ T[:, enter]
        xb = binv @ rhs
        best = None
        for i in range(m):
            if d[i] > tol:
                ratio = xb[i] / d[i]
                if best is None or ratio < best[0] - tol or (
                        abs(ratio - best[0]) <= tol and basis[i] < basis[best[1]]):
                    best = (ratio, i)
        if best is None:
            return None
        leave = best[1]
        in_basis[basis[leave]] = False
        in_basis[enter] = True
        basis[leave] = enter
    xb = np.linalg.solve(T[:, basis], rhs)
    if cost[basis] @ xb > 1e-7 * max(1.0, float(np.abs(rhs).max())):
        return None
    x = np.zeros(n + m)
    for i, j in enumerate(basis):
        x[j] = xb[i]
    if x[n:].max(initial=0.0) > 1e-7:
        return None
    return np.clip(x[:n], 0.0, None)


def lp_max_coordinate(A: np.ndarray, b: np.ndarray, coord: int, with_solution: bool = False):
    """max x[coord] over {x >= 0 : A x = b}; None when infeasible or
    unbounded (the polytopes used here are bounded).  With
    with_solution=True returns (optimum, argmax vector) instead."""
    sx = _Simplex(A, b)
    if not sx.phase1():
        return None
    obj = zeros_vec(A.shape[1])
    obj[coord] = F1
    val = sx.maximize(obj)
    if not with_solution:
        return val
    if val is None:
        return None
    return val, sx.solution()


def psd_check_exact(S: np.ndarray) -> bool:
    """Exact PSD test for a symmetric rational matrix via pivoted LDL^T.

    Greedy max-diagonal pivoting; if every remaining diagonal entry is
    <= 0 the matrix is PSD iff the remainder is identically zero.
    """
    n = S.shape[0]
    M = S.copy()
    idx = list(range(n))
    k = 0
    while k < n:
        # pick the largest remaining diagonal entry
        pk, pv = None, F0
        for i in range(k, n):
            if M[i, i] > pv:
                pk, pv = i, M[i, i]
        if pk is None:
            # all remaining diagonals <= 0: PSD iff remainder is zero
            for i in range(k, n):
                for j in range(k, n):
                    if M[i, j] != 0:
                        return False
            return True
        if pk != k:
            M[[k, pk]] = M[[pk, k]]
            M[:, [k, pk]] = M[:, [pk, k]]
        d = M[k, k]
        col = M[k + 1 :, k].copy()
        if col.size:
            M[k + 1 :, k + 1 :] = M[k + 1 :, k + 1 :] - np.outer(col, col) / d
        k += 1
    return True


def psd_check_float(S: np.ndarray, tol: float = TAU_PSD) -> bool:
    H = np.asarray(S, dtype=np.complex128)
    H = (H + H.conj().T) / 2
    vals = np.linalg.eigvalsh(H)
    return bool(vals.min() >= tol) if vals.size else True
