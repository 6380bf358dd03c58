from fractions import Fraction as Fr

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hops import linalg
from hops.linalg import (
    AffineHull,
    affine_span,
    frac_matrix,
    frac_vector,
    lp_feasible,
    lp_max_coordinate,
    nullspace,
    psd_check_exact,
    psd_check_float,
    rank,
    rref,
    solve_affine,
    vertex_enumerate,
    zeros_vec,
)


def test_rref_small():
    A = frac_matrix([[2, 4], [1, 2]])
    R, piv = rref(A)
    assert piv == [0]
    assert list(R[0]) == [Fr(1), Fr(2)]
    assert all(x == 0 for x in R[1])


def test_rank_and_nullspace():
    A = frac_matrix([[1, 1, 0], [0, 0, 1]])
    assert rank(A) == 2
    ns = nullspace(A)
    assert len(ns) == 1
    v = ns[0]
    assert all(sum(A[i, j] * v[j] for j in range(3)) == 0 for i in range(2))


def test_solve_affine():
    A = frac_matrix([[1, 2], [3, 4]])
    b = frac_vector([5, 6])
    x = solve_affine(A, b)
    assert [sum(A[i, j] * x[j] for j in range(2)) for i in range(2)] == [Fr(5), Fr(6)]
    assert solve_affine(frac_matrix([[1, 1], [1, 1]]), frac_vector([0, 1])) is None


def test_affine_span_segment():
    pts = [frac_vector([1, 0]), frac_vector([0, 1])]
    hull = affine_span(pts)
    assert hull.dim == 1
    assert hull.contains(frac_vector([Fr(1, 2), Fr(1, 2)]))
    assert not hull.contains(frac_vector([1, 1]))


def stoch_vec(p, q):
    # column-stacking of [[p, q], [1-p, 1-q]]
    return frac_vector([p, 1 - p, q, 1 - q])


def test_affine_span_stochastic_2x2():
    pts = [stoch_vec(Fr(a, 4), Fr(b, 4)) for a in range(5) for b in range(5)]
    hull = affine_span(pts)
    assert hull.dim == 2
    assert hull.contains(stoch_vec(Fr(1, 3), Fr(2, 7)))
    assert not hull.contains(frac_vector([1, 1, 0, 1]))


def test_affine_span_reproducible():
    pts = [stoch_vec(Fr(a, 3), Fr(b, 3)) for a in range(4) for b in range(4)]
    hull = affine_span(pts)
    again = affine_span([hull.point] + [hull.point + b for b in hull.basis])
    assert again.dim == hull.dim


def test_in_affine_hull_basics():
    pts = [stoch_vec(0, 0), stoch_vec(1, 0), stoch_vec(0, 1)]
    hull = affine_span(pts)
    assert hull.contains(hull.point)
    assert hull.contains(hull.point + hull.basis[0])


# ---------------------------------------------------------------------------
# binary bipartite no-signalling polytope: independent construction of the
# equality system and of all 24 extremal points


def ns_index(a, b, x, y):
    # column-stacking: output pair (a fastest) then input pair (x fastest)
    return (a + 2 * b) + 4 * (x + 2 * y)


def ns_equality_system():
    rows = []
    rhs = []
    for x in range(2):
        for y in range(2):
            row = [Fr(0)] * 16
            for a in range(2):
                for b in range(2):
                    row[ns_index(a, b, x, y)] = Fr(1)
            rows.append(row)
            rhs.append(Fr(1))
    for b in range(2):
        for y in range(2):
            row = [Fr(0)] * 16
            for a in range(2):
                row[ns_index(a, b, 0, y)] += Fr(1)
                row[ns_index(a, b, 1, y)] -= Fr(1)
            rows.append(row)
            rhs.append(Fr(0))
    for a in range(2):
        for x in range(2):
            row = [Fr(0)] * 16
            for b in range(2):
                row[ns_index(a, b, x, 0)] += Fr(1)
                row[ns_index(a, b, x, 1)] -= Fr(1)
            rows.append(row)
            rhs.append(Fr(0))
    return frac_matrix(rows), frac_vector(rhs)


def local_vertices():
    out = []
    for alpha in range(2):
        for beta in range(2):
            for gamma in range(2):
                for delta in range(2):
                    v = zeros_vec(16)
                    for x in range(2):
                        for y in range(2):
                            a = (alpha * x) ^ beta
                            b = (gamma * y) ^ delta
                            v[ns_index(a, b, x, y)] = Fr(1)
                    out.append(v)
    return out


def pr_vertices():
    out = []
    for alpha in range(2):
        for beta in range(2):
            for gamma in range(2):
                v = zeros_vec(16)
                for x in range(2):
                    for y in range(2):
                        for a in range(2):
                            for b in range(2):
                                if a ^ b == (x * y) ^ (alpha * x) ^ (beta * y) ^ gamma:
                                    v[ns_index(a, b, x, y)] = Fr(1, 2)
                out.append(v)
    return out


def test_ns_polytope_24_vertices():
    A, b = ns_equality_system()
    verts = vertex_enumerate(A, b)
    assert len(verts) == 24
    expected = {tuple(v) for v in local_vertices()} | {tuple(v) for v in pr_vertices()}
    assert {tuple(v) for v in verts} == expected


def test_ns_affine_dim_8_and_violating_vector():
    A, b = ns_equality_system()
    assert rank(A) == 8
    hull = affine_span(vertex_enumerate(A, b))
    assert hull.dim == 8
    # a signalling channel: B's output copies A's input x
    v = zeros_vec(16)
    for x in range(2):
        for y in range(2):
            v[ns_index(0, x, x, y)] = Fr(1)
    assert not hull.contains(v)


def test_vertex_enumerate_stochastic_and_simplex():
    # 2x2 column-stochastic matrices: 4 deterministic vertices
    A = frac_matrix([[1, 1, 0, 0], [0, 0, 1, 1]])
    b = frac_vector([1, 1])
    verts = vertex_enumerate(A, b)
    assert len(verts) == 4
    assert all(set(v) <= {Fr(0), Fr(1)} for v in verts)
    # probability simplex on 3 points
    verts = vertex_enumerate(frac_matrix([[1, 1, 1]]), frac_vector([1]))
    assert len(verts) == 3


def test_vertex_cap():
    A = frac_matrix([[1] * 30])
    with pytest.raises(ValueError):
        vertex_enumerate(A, frac_vector([1]), cap=24)


def test_vertices_satisfy_equalities_and_span_hull():
    A, b = ns_equality_system()
    verts = vertex_enumerate(A, b)
    for v in verts:
        assert all(sum(A[i, j] * v[j] for j in range(16)) == b[i] for i in range(A.shape[0]))
        assert all(x >= 0 for x in v)
    hull = affine_span(verts)
    sol_hull_dim = len(nullspace(A))
    assert hull.dim == sol_hull_dim


def test_lp_feasible_and_max():
    A = frac_matrix([[1, 1, 1]])
    b = frac_vector([1])
    x = lp_feasible(A, b)
    assert x is not None and sum(x) == 1 and all(c >= 0 for c in x)
    assert lp_feasible(frac_matrix([[1, 1]]), frac_vector([-1])) is None
    assert lp_max_coordinate(A, b, 0) == 1
    A2 = frac_matrix([[1, 1, 0], [0, 1, 1]])
    b2 = frac_vector([1, 1])
    assert lp_max_coordinate(A2, b2, 1) == 1
    assert lp_max_coordinate(A2, b2, 0) == 1


def test_psd_exact_cases():
    assert psd_check_exact(frac_matrix([[1, 0], [0, 1]]))
    assert psd_check_exact(frac_matrix([[2, 1], [1, 2]]))
    assert not psd_check_exact(frac_matrix([[1, 2], [2, 1]]))
    assert psd_check_exact(frac_matrix([[0, 0], [0, 0]]))
    assert not psd_check_exact(frac_matrix([[0, 1], [1, 0]]))
    assert psd_check_exact(frac_matrix([[1, 1], [1, 1]]))


@settings(max_examples=30, deadline=None)
@given(
    entries=st.lists(st.integers(-4, 4), min_size=9, max_size=9),
)
def test_psd_gram_matrices(entries):
    A = frac_matrix([entries[0:3], entries[3:6], entries[6:9]])
    G = A.T @ A
    assert psd_check_exact(G)
    assert psd_check_float(np.array([[float(x) for x in row] for row in G]))


@settings(max_examples=30, deadline=None)
@given(entries=st.lists(st.integers(-3, 3), min_size=6, max_size=6))
def test_nullspace_is_kernel(entries):
    A = frac_matrix([entries[0:3], entries[3:6]])
    for v in nullspace(A):
        assert all(sum(A[i, j] * v[j] for j in range(3)) == 0 for i in range(2))
    assert rank(A) + len(nullspace(A)) == 3
