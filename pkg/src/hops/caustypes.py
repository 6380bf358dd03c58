"""Higher-order process types as exact convex sets.

A type is the intersection of an affine subspace with the nonnegative
orthant, stored as hull data (an interior member plus a direction
basis) in rational arithmetic.  Duality, the product and parallel
connectives, slot formation, and the one-way-composition refinement
are all computed on hulls, so membership and inclusion answers are
certificates rather than numerics.

verify_appendix_chain replays, at binary wire dimensions, the
embedding chain that takes a two-slot supermap domain down to the set
of bipartite conditional distributions, checking every step as an
exact hull inclusion or equality.
"""

from __future__ import annotations

import os
import time
from fractions import Fraction

import numpy as np

from . import linalg
from .linalg import F0, F1
from .tensor import EXACT, Tensor, cwire, bwire
from .theories import stochastic_generators


class CausError(ValueError):
    """Empty duals, ambient mismatches, cap violations."""


def _ambient_cap() -> int:
    return int(os.environ.get("HOPS_MAX_AMBIENT_DIM", "256"))


def _frac_entries(t: Tensor) -> np.ndarray:
    if t.mode != EXACT:
        raise CausError("exact rational entries required")
    return t.entries


class CausSet:
    """Ambient wires plus affine-hull data; the set is hull ∩ {z >= 0}.

    hull_point must sit in the relative interior: wherever a hull
    direction has a nonzero coordinate the point must be strictly
    positive there.  Every constructor in this module satisfies that
    (the stored point is always a positive multiple of all-ones), and
    it is what keeps product hulls and member generation sound.
    """

    def __init__(self, ambient, hull_point: Tensor, hull_basis=()):
        self.ambient = tuple(ambient)
        shape = tuple(w.axis_dim for w in self.ambient)
        pe = _frac_entries(hull_point)
        if pe.shape != shape:
            raise CausError(f"hull_point shape {pe.shape} does not match ambient {shape}")
        point = pe.reshape(-1)
        dirs = []
        for t in hull_basis:
            be = _frac_entries(t)
            if be.shape != shape:
                raise CausError("hull_basis shape does not match ambient")
            dirs.append(be.reshape(-1))
        if any(x < 0 for x in point):
            raise CausError("hull_point has negative entries")
        for i, x in enumerate(point):
            if x == 0 and any(d[i] != 0 for d in dirs):
                raise CausError("hull_point touches the boundary along a hull direction")
        self.hull_point = hull_point
        self.hull_basis = tuple(hull_basis)
        self._vec_point = point
        self._hull = linalg.AffineHull(point, dirs, EXACT)

    @property
    def shape(self) -> tuple:
        return tuple(w.axis_dim for w in self.ambient)

    @property
    def total_dim(self) -> int:
        n = 1
        for w in self.ambient:
            n *= w.axis_dim
        return n

    @property
    def dim(self) -> int:
        """Affine dimension of the hull."""
        return self._hull.dim

    @property
    def reduced(self) -> list[np.ndarray]:
        return self._hull.reduced_basis()

    def member_generators(self) -> list[Tensor]:
        """The hull point plus one nonnegative member per direction;
        affinely spans the hull because the point is interior."""
        out = [self.hull_point]
        p = self._vec_point
        for b in self.reduced:
            eps = F1
            for i, x in enumerate(b):
                if x < 0:
                    eps = min(eps, p[i] / -x)
            out.append(_tensorize(self.ambient, p + b * eps))
        return out

    def equations(self) -> tuple[np.ndarray, np.ndarray]:
        """(A, b) with the set equal to {z >= 0 : A z = b}."""
        n = len(self._vec_point)
        red = self.reduced
        if not red:
            A = np.empty((n, n), dtype=object)
            A[:, :] = F0
            for i in range(n):
                A[i, i] = F1
            return A, self._vec_point.copy()
        B = np.vstack([r.reshape(1, -1) for r in red])
        rows = linalg.nullspace(B)
        A = _stack_rows(rows, n)
        return A, A.dot(self._vec_point) if A.shape[0] else linalg.zeros_vec(0)

    def __repr__(self):
        dims = "x".join(str(d) for d in self.shape) or "scalar"
        return f"CausSet(ambient {dims}, affine dim {self.dim})"


def _stack_rows(rows, n: int) -> np.ndarray:
    if not rows:
        return np.empty((0, n), dtype=object)
    return np.vstack([r.reshape(1, -1) for r in rows])


def _tensorize(ambient, vec) -> Tensor:
    shape = tuple(w.axis_dim for w in ambient)
    return Tensor(tuple(ambient), (), np.asarray(vec, dtype=object).reshape(shape), EXACT)


def _build(ambient, point_vec, dir_vecs) -> CausSet:
    return CausSet(tuple(ambient), _tensorize(ambient, point_vec),
                   [_tensorize(ambient, v) for v in dir_vecs])


def _solves(A: np.ndarray, b: np.ndarray, v: np.ndarray) -> bool:
    if A.shape[0] == 0:
        return True
    got = A.dot(v)
    return all(got[i] == b[i] for i in range(len(b)))


def _with_zero_rows(A, b, forced, n):
    extra = []
    for i in forced:
        row = linalg.zeros_vec(n)
        row[i] = F1
        extra.append(row)
    if not extra:
        return A, b
    Af = np.vstack([A] + [r.reshape(1, -1) for r in extra])
    bf = np.concatenate([b, linalg.zeros_vec(len(extra))])
    return Af, bf


def _solution_set(A: np.ndarray, b: np.ndarray, positive_candidate=None, what="set"):
    """Affine hull (point, dirs) of {z >= 0 : A z = b}.

    A strictly positive solution certifies that no coordinate is forced
    to zero, so the hull is the whole solution subspace; the module's
    sets always provide one (a positive multiple of all-ones solves
    every system built here).  Failing that, an exact-LP facial
    reduction drops the forced coordinates and recenters.
    """
    m, n = A.shape
    if linalg.solve_affine(A, b) is None:
        raise CausError(f"empty {what}: inconsistent affine conditions")
    cands = []
    if positive_candidate is not None:
        cands.append(positive_candidate)
    ones = linalg.frac_vector([1] * n)
    r = A.dot(ones) if m else linalg.zeros_vec(0)
    nz = [i for i in range(m) if r[i] != 0]
    if nz:
        lam = b[nz[0]] / r[nz[0]]
        if lam > 0 and all(r[i] * lam == b[i] for i in range(m)):
            cands.append(ones * lam)
    elif all(x == 0 for x in b):
        cands.append(ones)
    for cand in cands:
        if all(x > 0 for x in cand) and _solves(A, b, cand):
            return cand, linalg.nullspace(A)
    # defensive path; the LP answers are exact so faces are certified
    forced: list[int] = []
    while True:
        Af, bf = _with_zero_rows(A, b, forced, n)
        if linalg.lp_feasible(Af, bf) is None:
            raise CausError(f"empty {what}: no nonnegative solution")
        grew = False
        sols = []
        for i in range(n):
            if i in forced:
                continue
            got = linalg.lp_max_coordinate(Af, bf, i, with_solution=True)
            if got is None:
                raise CausError(f"{what}: unbounded coordinate in facial reduction")
            val, sol = got
            if val == 0:
                forced.append(i)
                grew = True
            else:
                sols.append(sol)
        if grew:
            continue
        Af, bf = _with_zero_rows(A, b, forced, n)
        if sols:
            point = sols[0]
            for s in sols[1:]:
                point = point + s
            point = point * Fraction(1, len(sols))
        else:
            point = linalg.lp_feasible(Af, bf)
        return point, linalg.nullspace(Af)


# --- construction and connectives ------------------------------------------


def first_order(d_in: int, d_out: int, label: str = "W") -> CausSet:
    """Column-stochastic d_out x d_in matrices as states on one pair
    wire, flat index = row + d_out * column."""
    if d_in < 1 or d_out < 1:
        raise CausError("first_order needs dimensions >= 1")
    gens = stochastic_generators(d_in, d_out)
    vecs = [g.entries.ravel(order="F") for g in gens]
    point = vecs[0]
    dirs = [v - point for v in vecs[1:]]
    return _build((bwire(label, d_in, d_out),), point, dirs)


def _dual_of_hull(ambient, point_vec, basis_rows, what="dual") -> CausSet:
    rows = [point_vec] + list(basis_rows)
    A = _stack_rows(rows, len(point_vec))
    b = linalg.zeros_vec(len(rows))
    b[0] = F1
    p, dirs = _solution_set(A, b, what=what)
    return _build(ambient, p, dirs)


def dual(c: CausSet) -> CausSet:
    """Nonnegative e with e.s = 1 for every member s of c, on the same
    ambient wires.  The hull of that effect set is computed by solving
    the affine conditions against the hull generators, with the facial
    reduction in _solution_set guarding the boundary case."""
    return _dual_of_hull(c.ambient, c._vec_point, c.reduced)


def _check_cap(c: CausSet, d: CausSet, what: str) -> tuple:
    wires = c.ambient + d.ambient
    total = 1
    for w in wires:
        total *= w.axis_dim
    cap = _ambient_cap()
    if total > cap:
        raise CausError(f"{what}: ambient dimension {total} exceeds cap {cap}")
    return wires


def _product_hull(c: CausSet, d: CausSet):
    pc, pd = c._vec_point, d._vec_point
    point = np.multiply.outer(pc, pd).reshape(-1)
    dirs = []
    for bc in c.reduced:
        dirs.append(np.multiply.outer(bc, pd).reshape(-1))
    for bd in d.reduced:
        dirs.append(np.multiply.outer(pc, bd).reshape(-1))
    for bc in c.reduced:
        for bd in d.reduced:
            dirs.append(np.multiply.outer(bc, bd).reshape(-1))
    return point, dirs


def tensor_type(c: CausSet, d: CausSet) -> CausSet:
    """Double dual of the member products; ambient wires concatenate."""
    wires = _check_cap(c, d, "tensor_type")
    point, dirs = _product_hull(c, d)
    inner = _dual_of_hull(wires, point, dirs, what="dual of a product span")
    return dual(inner)


def par_type(c: CausSet, d: CausSet) -> CausSet:
    """Parallel composite: dual of the product of the duals."""
    _check_cap(c, d, "par_type")
    return dual(tensor_type(dual(c), dual(d)))


def lollipop(c: CausSet, d: CausSet) -> CausSet:
    """Maps from c to d: dual of tensor_type(c, dual(d)).  Members are
    exactly the nonnegative tensors whose contraction with any member
    of c lands in d."""
    _check_cap(c, d, "lollipop")
    return dual(tensor_type(c, dual(d)))


def seq_type(c: CausSet, d: CausSet) -> CausSet:
    """One-way composition, c before d.

    Members of par_type(c, d) whose partial contraction with every
    dual generator of d is one fixed member of c: the c-marginal is
    well defined, so d cannot signal back to c, while influence from c
    to d stays free.
    """
    p = par_type(c, d)
    dd = dual(d)
    nc, nd = c.total_dim, d.total_dim
    rows = []
    rhs = []
    Ap, bp = p.equations()
    for k in range(Ap.shape[0]):
        rows.append(Ap[k])
        rhs.append(bp[k])
    for g in dd.reduced:
        for i in range(nc):
            row = linalg.zeros_vec(nc * nd)
            row[i * nd:(i + 1) * nd] = g
            rows.append(row)
            rhs.append(F0)
    Ec, fc = c.equations()
    e0 = dd._vec_point
    for k in range(Ec.shape[0]):
        rows.append(np.multiply.outer(Ec[k], e0).reshape(-1))
        rhs.append(fc[k])
    A = _stack_rows(rows, nc * nd)
    b = np.empty(len(rhs), dtype=object)
    b[:] = rhs
    cand = np.multiply.outer(c._vec_point, d._vec_point).reshape(-1)
    point, dirs = _solution_set(A, b, positive_candidate=cand, what="sequence type")
    return _build(c.ambient + d.ambient, point, dirs)


# --- membership and inclusion -----------------------------------------------


def membership(z: Tensor, c: CausSet) -> bool:
    """z is in the set: in the affine hull and entrywise nonnegative."""
    ze = _frac_entries(z)
    if ze.shape != c.shape:
        raise CausError(f"ambient mismatch: {ze.shape} vs {c.shape}")
    v = ze.reshape(-1)
    if any(x < 0 for x in v):
        return False
    return c._hull.contains(v)


def inclusion(c: CausSet, d: CausSet) -> bool:
    """Hull containment; sound because both sets are hull ∩ orthant."""
    if c.shape != d.shape:
        raise CausError(f"ambient mismatch: {c.shape} vs {d.shape}")
    if not d._hull.contains(c._vec_point):
        return False
    return all(d._hull.direction_in_span(b) for b in c.reduced)


def same_set(c: CausSet, d: CausSet) -> bool:
    return inclusion(c, d) and inclusion(d, c)


# --- ambient reshaping -------------------------------------------------------


def _transform(c: CausSet, f, wires) -> CausSet:
    shape = c.shape
    pt = f(c._vec_point.reshape(shape))
    dirs = [f(b.reshape(shape)) for b in c.reduced]
    return _build(wires, pt.reshape(-1), [d.reshape(-1) for d in dirs])


def permute(c: CausSet, order) -> CausSet:
    """Reorder the ambient wires (axes move with them)."""
    order = list(order)
    if sorted(order) != list(range(len(c.ambient))):
        raise CausError("permute needs a permutation of the wire positions")
    wires = tuple(c.ambient[i] for i in order)
    return _transform(c, lambda a: a.transpose(order), wires)


def split_axes(c: CausSet, factors) -> CausSet:
    """Refine each ambient axis into named factors, first listed fastest.

    factors gives one list of (label, dim) per ambient wire whose dims
    multiply to the wire's axis dim.  For a pair wire (flat index
    o + n_out * x) that means listing the output factors first.  The
    result's wires are classical, one per factor, in listed order.
    """
    if len(factors) != len(c.ambient):
        raise CausError("need one factor list per ambient wire")
    shape = []
    perm = []
    wires = []
    pos = 0
    for w, fl in zip(c.ambient, factors):
        dims = [d for (_, d) in fl]
        n = 1
        for d in dims:
            n *= d
        if n != w.axis_dim:
            raise CausError(f"factors {dims} do not multiply to axis dim {w.axis_dim}")
        shape.extend(reversed(dims))
        m = len(fl)
        perm.extend(pos + m - 1 - j for j in range(m))
        pos += m
        wires.extend(cwire(lab, d) for lab, d in fl)
    return _transform(c, lambda a: a.reshape(tuple(shape)).transpose(perm), tuple(wires))


def drop_unit_axes(c: CausSet) -> CausSet:
    """Remove dimension-1 ambient wires."""
    wires = tuple(w for w in c.ambient if w.axis_dim != 1)
    shape = tuple(w.axis_dim for w in wires)
    return _transform(c, lambda a: a.reshape(shape), wires)


def _aligned(c: CausSet, factors, order) -> CausSet:
    s = split_axes(c, factors)
    labels = [w.label for w in s.ambient]
    if sorted(labels) != sorted(order):
        raise CausError("atom labels do not match the requested order")
    return permute(s, [labels.index(a) for a in order])


# --- the embedding chain -----------------------------------------------------


def verify_appendix_chain() -> dict:
    """Replay the type-embedding chain at binary wire dimensions.

    Single-slot part, on the six atomic systems (a, a', b, b', x, x'),
    64 ambient coordinates: the supermap domain sending channels a->a'
    to channels on the joint wires (b,x)->(b',x') is unrolled into a
    one-way composition, split into parallel factors, redistributed,
    and regrouped into a supermap-with-spectator form.  Two-slot part:
    symmetry, the mix embedding of the product in the parallel
    composite on the actual two-slot domain (256 coordinates),
    monotonicity of the product, the two distributor embeddings, unit
    absorption, and the landing in the bipartite conditional
    distributions.  Every relation is decided as an exact hull
    inclusion or equality; the report carries affine dimensions.
    """
    t0 = time.time()
    fo = first_order
    steps = []
    sets: dict[str, CausSet] = {}

    def record(name, relation, lhs, rhs):
        fwd = inclusion(lhs, rhs)
        if relation == "equality":
            holds = fwd and inclusion(rhs, lhs)
            strict = False
        else:
            holds = fwd
            strict = fwd and not inclusion(rhs, lhs)
        steps.append({"name": name, "relation": relation,
                      "lhs_dim": lhs.dim, "rhs_dim": rhs.dim,
                      "holds": holds, "strict": strict})

    order1 = ["a", "a'", "b", "b'", "x", "x'"]
    t1 = _aligned(lollipop(fo(2, 2), fo(4, 4)),
                  [[("a'", 2), ("a", 2)],
                   [("b'", 2), ("x'", 2), ("b", 2), ("x", 2)]], order1)
    t2 = _aligned(seq_type(fo(4, 2), fo(2, 4)),
                  [[("a", 2), ("b", 2), ("x", 2)],
                   [("b'", 2), ("x'", 2), ("a'", 2)]], order1)
    t3 = _aligned(seq_type(par_type(fo(2, 2), fo(2, 1)),
                           par_type(fo(2, 2), fo(1, 2))),
                  [[("a", 2), ("b", 2)], [("x", 2)],
                   [("b'", 2), ("a'", 2)], [("x'", 2)]], order1)
    t4 = _aligned(par_type(seq_type(fo(2, 2), fo(2, 2)),
                           seq_type(fo(2, 1), fo(1, 2))),
                  [[("a", 2), ("b", 2)], [("b'", 2), ("a'", 2)],
                   [("x", 2)], [("x'", 2)]], order1)
    t5 = _aligned(par_type(lollipop(fo(2, 2), fo(2, 2)), fo(2, 2)),
                  [[("a'", 2), ("a", 2)], [("b'", 2), ("b", 2)],
                   [("x'", 2), ("x", 2)]], order1)
    record("supermap domain uncurried to a one-way composition", "equality", t1, t2)
    record("joint wires split into parallel factors", "equality", t2, t3)
    record("one-way composition distributed over the parallel factors",
           "inclusion", t3, t4)
    record("factors regrouped into supermap-with-spectator form", "equality", t4, t5)
    sets.update({"uncurried": t1, "one_way": t2, "factored": t3,
                 "redistributed": t4, "spectator_form": t5})

    # two-slot part; S is the one-slot supermap type on binary wires
    S = lollipop(fo(2, 2), fo(2, 2))
    p = fo(2, 2)
    r = fo(2, 2)
    lhs = par_type(p, S)
    rhs = permute(par_type(S, p), [2, 0, 1])
    record("parallel product commutes", "equality", lhs, rhs)
    ts = tensor_type(S, S)
    ps = par_type(S, S)
    record("two-slot product embeds in the parallel composite", "inclusion", ts, ps)
    record("the factor embedding survives the product", "inclusion",
           tensor_type(t3, r), tensor_type(t4, r))
    record("left distributor", "inclusion",
           tensor_type(par_type(p, S), r), par_type(p, tensor_type(S, r)))
    record("right distributor", "inclusion",
           tensor_type(S, par_type(r, p)), par_type(tensor_type(S, r), p))
    record("parallel product with the trivial type is a no-op", "equality",
           drop_unit_axes(par_type(p, fo(1, 1))), p)
    land = drop_unit_axes(par_type(fo(2, 2), par_type(fo(1, 1), fo(2, 2))))
    order2 = ["x1", "x1'", "x2", "x2'"]
    land_a = _aligned(land, [[("x1'", 2), ("x1", 2)], [("x2'", 2), ("x2", 2)]], order2)
    joint = _aligned(fo(4, 4), [[("x1'", 2), ("x2'", 2), ("x1", 2), ("x2", 2)]], order2)
    record("application lands in the bipartite conditional distributions",
           "equality", land_a, joint)
    sets.update({"slot_type": S, "two_slot_product": ts, "two_slot_par": ps,
                 "landing": land_a})

    lo = tensor_type(fo(2, 2), fo(2, 2))
    se = seq_type(fo(2, 2), fo(2, 2))
    pa = par_type(fo(2, 2), fo(2, 2))
    ladder = {
        "tensor_dim": lo.dim, "seq_dim": se.dim, "par_dim": pa.dim,
        "tensor_in_seq_strict": inclusion(lo, se) and not inclusion(se, lo),
        "seq_in_par_strict": inclusion(se, pa) and not inclusion(pa, se),
    }
    ladder["holds"] = (ladder["tensor_dim"] == 8 and ladder["par_dim"] == 12
                       and ladder["tensor_in_seq_strict"] and ladder["seq_in_par_strict"])
    sets.update({"first_order_tensor": lo, "first_order_seq": se,
                 "first_order_par": pa})

    ok = all(s["holds"] for s in steps) and ladder["holds"]
    return {
        "steps": steps,
        "first_order_ladder": ladder,
        "final_dim": joint.dim,
        "any_strict": any(s["strict"] for s in steps),
        "ambient_cap": _ambient_cap(),
        "ok": ok,
        "elapsed_s": round(time.time() - t0, 2),
        "sets": sets,
    }
