"""Exact convex-set types: duals, connectives, membership.

Oracles are written out by hand before anything hull-based is trusted:
the dual of the binary channel polytope as an explicit one-parameter
family, deterministic combs and deterministic one-slot supermaps by
direct enumeration, and marginal-factorization checks for the one-way
and no-signalling sets.  Vertex enumeration then pins the hulls to
those integral vertex lists.
"""

import itertools
from fractions import Fraction as Fr

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from hops import linalg
from hops.linalg import F0, F1
from hops.tensor import EXACT, FLOAT, Tensor, bwire
from hops import theories as th
from hops.caustypes import (
    CausError,
    CausSet,
    drop_unit_axes,
    dual,
    first_order,
    inclusion,
    lollipop,
    membership,
    par_type,
    permute,
    same_set,
    seq_type,
    split_axes,
    tensor_type,
)


def as_member(c: CausSet, vec) -> Tensor:
    arr = np.asarray(vec, dtype=object).reshape(c.shape)
    return Tensor(c.ambient, (), arr, EXACT)


def det_channel_vecs():
    """The four deterministic bit channels, flat index o + 2x."""
    out = []
    for f in itertools.product((0, 1), repeat=2):
        v = linalg.zeros_vec(4)
        for x in (0, 1):
            v[f[x] + 2 * x] = F1
        out.append(v)
    return out


def det_comb_vecs():
    """Deterministic one-way processes on two binary pair wires,
    flat index (o1 + 2 x1) * 4 + (o2 + 2 x2): the first outcome is a
    function of the first setting alone, the second outcome may use
    both settings.  4 * 16 = 64 of them."""
    out = []
    for f1 in itertools.product((0, 1), repeat=2):
        for f2 in itertools.product((0, 1), repeat=4):
            v = linalg.zeros_vec(16)
            for x1 in (0, 1):
                for x2 in (0, 1):
                    o1 = f1[x1]
                    o2 = f2[2 * x1 + x2]
                    v[(o1 + 2 * x1) * 4 + (o2 + 2 * x2)] = F1
            out.append(v)
    return out


def det_supermap_vecs():
    """Deterministic one-slot rewirings, flat index (slot axis) * 4 +
    (outer axis): the slot setting is a function of the outer setting,
    the outer outcome a function of slot outcome and outer setting."""
    out = []
    for g in itertools.product((0, 1), repeat=2):
        for h in itertools.product((0, 1), repeat=4):
            v = linalg.zeros_vec(16)
            for oc in (0, 1):
                for xd in (0, 1):
                    xc = g[xd]
                    od = h[2 * oc + xd]
                    v[(oc + 2 * xc) * 4 + (od + 2 * xd)] = F1
            out.append(v)
    return out


def blockwise_normalized(vec) -> bool:
    z = np.asarray(vec, dtype=object).reshape(4, 4)
    for x1 in (0, 1):
        for x2 in (0, 1):
            s = sum(z[o1 + 2 * x1, o2 + 2 * x2] for o1 in (0, 1) for o2 in (0, 1))
            if s != 1:
                return False
    return True


def one_way_oracle(vec) -> bool:
    """Nonnegative, normalized per setting pair, and the first-side
    marginal must not depend on the second setting."""
    z = np.asarray(vec, dtype=object).reshape(4, 4)
    if any(x < 0 for x in np.asarray(vec, dtype=object)):
        return False
    if not blockwise_normalized(vec):
        return False
    for x1 in (0, 1):
        for o1 in (0, 1):
            m0 = z[o1 + 2 * x1, 0] + z[o1 + 2 * x1, 1]
            m1 = z[o1 + 2 * x1, 2] + z[o1 + 2 * x1, 3]
            if m0 != m1:
                return False
    return True


def ns_oracle(vec) -> bool:
    """one_way_oracle in both directions: neither side's marginal may
    see the other side's setting."""
    if not one_way_oracle(vec):
        return False
    z = np.asarray(vec, dtype=object).reshape(4, 4)
    for x2 in (0, 1):
        for o2 in (0, 1):
            m0 = z[0, o2 + 2 * x2] + z[1, o2 + 2 * x2]
            m1 = z[2, o2 + 2 * x2] + z[3, o2 + 2 * x2]
            if m0 != m1:
                return False
    return True


def pr_box_vec():
    v = linalg.zeros_vec(16)
    for x1 in (0, 1):
        for x2 in (0, 1):
            for o1 in (0, 1):
                for o2 in (0, 1):
                    if (o1 ^ o2) == (x1 & x2):
                        v[(o1 + 2 * x1) * 4 + (o2 + 2 * x2)] = Fr(1, 2)
    return v


def signal_both_ways_vec():
    v = linalg.zeros_vec(16)
    for x1 in (0, 1):
        for x2 in (0, 1):
            v[(x2 + 2 * x1) * 4 + (x1 + 2 * x2)] = F1
    return v


def signal_forward_vec():
    v = linalg.zeros_vec(16)
    for x1 in (0, 1):
        for x2 in (0, 1):
            v[(x1 + 2 * x1) * 4 + ((x1 ^ x2) + 2 * x2)] = F1
    return v


FO22 = first_order(2, 2)
TT = tensor_type(first_order(2, 2), first_order(2, 2))
SE = seq_type(first_order(2, 2), first_order(2, 2))
PA = par_type(first_order(2, 2), first_order(2, 2))
LO = lollipop(first_order(2, 2), first_order(2, 2))


# --- first_order -----------------------------------------------------------


def test_first_order_simplex():
    for d in (2, 3, 5):
        s = first_order(1, d)
        assert s.dim == d - 1
        for k in range(d):
            v = linalg.zeros_vec(d)
            v[k] = F1
            assert membership(as_member(s, v), s)
        v = linalg.zeros_vec(d)
        v[0] = Fr(2)
        assert not membership(as_member(s, v), s)


def test_first_order_scalar():
    s = first_order(1, 1)
    assert s.dim == 0
    assert membership(as_member(s, [F1]), s)
    assert not membership(as_member(s, [Fr(1, 2)]), s)


def test_first_order_binary_channels():
    assert FO22.dim == 2
    for v in det_channel_vecs():
        assert membership(as_member(FO22, v), FO22)
    # substochastic and superstochastic columns are out
    assert not membership(as_member(FO22, [Fr(1, 2), F0, F0, F1]), FO22)
    assert not membership(as_member(FO22, [F1, F1, F0, F1]), FO22)


def test_first_order_vertices_are_deterministic():
    A, b = FO22.equations()
    verts = linalg.vertex_enumerate(A, b)
    assert sorted(tuple(v) for v in verts) == sorted(tuple(v) for v in det_channel_vecs())


def test_first_order_rejects_bad_dims():
    with pytest.raises(CausError):
        first_order(0, 2)


# --- dual ------------------------------------------------------------------


def test_dual_of_binary_channels_is_input_averaging():
    # e[o + 2x] = g_x with g_0 + g_1 = 1: pick an input distribution,
    # ignore the output.  One affine dimension, not more.
    d = dual(FO22)
    assert d.dim == 1
    for g0 in (F0, F1, Fr(1, 2), Fr(3, 4)):
        g1 = 1 - g0
        assert membership(as_member(d, [g0, g0, g1, g1]), d)
    # rewarding o == x is not constant on the channel polytope
    assert not membership(as_member(d, [F1, F0, F0, F1]), d)
    for e in d.member_generators():
        ev = e.entries.reshape(-1)
        for m in det_channel_vecs():
            assert ev.dot(m) == 1


def test_dual_of_simplex_is_all_ones():
    for dd in (2, 4):
        du = dual(first_order(1, dd))
        assert du.dim == 0
        assert all(x == 1 for x in du.hull_point.entries.reshape(-1))


def test_dual_pairing_on_generators():
    d = dual(SE)
    for e in d.member_generators():
        ev = e.entries.reshape(-1)
        for m in SE.member_generators():
            assert ev.dot(m.entries.reshape(-1)) == 1


def test_empty_dual_raises():
    bad = CausSet(FO22.ambient, FO22.hull_point, [FO22.hull_point])
    with pytest.raises(CausError):
        dual(bad)


def test_double_dual_closure():
    catalog = [
        first_order(1, 1),
        first_order(1, 3),
        FO22,
        first_order(3, 2),
        dual(FO22),
        TT,
        SE,
        PA,
        LO,
        dual(SE),
    ]
    for c in catalog:
        assert same_set(dual(dual(c)), c)


def test_dual_is_antitone():
    assert inclusion(TT, SE) and inclusion(SE, PA)
    assert inclusion(dual(PA), dual(SE))
    assert inclusion(dual(SE), dual(TT))


# --- tensor_type against the no-signalling family --------------------------


def test_tensor_matches_ns_affine_family():
    fam = th.ns_affine_family(th.scenario((2, 2), (2, 2)))
    g0 = fam.generators[0]
    dirs = [Tensor(g.wires_out, (), g.entries - g0.entries, EXACT)
            for g in fam.generators[1:]]
    ns_set = CausSet(g0.wires_out, g0, dirs)
    assert ns_set.dim == 8
    assert TT.dim == 8
    assert same_set(ns_set, TT)


def test_tensor_membership_matches_marginal_oracle():
    cases = [pr_box_vec(), signal_both_ways_vec(), signal_forward_vec()]
    cases += det_comb_vecs()[::7]
    for v in cases:
        assert membership(as_member(TT, v), TT) == ns_oracle(v)
    assert membership(as_member(TT, pr_box_vec()), TT)


def test_tensor_of_simplices_is_a_simplex():
    t = tensor_type(first_order(1, 2, label="p"), first_order(1, 2, label="q"))
    s4 = split_axes(first_order(1, 4), [[("q", 2), ("p", 2)]])
    s4 = permute(s4, [1, 0])
    assert t.dim == 3
    assert same_set(t, s4)


@settings(deadline=None, max_examples=25)
@given(st.lists(st.fractions(min_value=0, max_value=1, max_denominator=8),
                min_size=4, max_size=4))
def test_product_channels_lie_in_tensor(ps):
    mv = linalg.frac_vector([ps[0], 1 - ps[0], ps[1], 1 - ps[1]])
    kv = linalg.frac_vector([ps[2], 1 - ps[2], ps[3], 1 - ps[3]])
    prod = np.multiply.outer(mv, kv).reshape(-1)
    assert membership(as_member(TT, prod), TT)
    assert ns_oracle(prod)


# --- seq_type ---------------------------------------------------------------


def test_one_way_vertices_are_deterministic_combs():
    A, b = SE.equations()
    verts = linalg.vertex_enumerate(A, b)
    assert sorted(tuple(v) for v in verts) == sorted(tuple(v) for v in det_comb_vecs())


def test_one_way_dim_from_comb_span():
    combs = det_comb_vecs()
    hull = linalg.affine_span(combs)
    assert hull.dim == 10 == SE.dim
    avg = linalg.zeros_vec(16)
    for v in combs:
        avg = avg + v
    avg = avg * Fr(1, len(combs))
    comb_set = CausSet(SE.ambient, as_member(SE, avg),
                       [as_member(SE, v - avg) for v in combs])
    assert same_set(comb_set, SE)


def test_one_way_membership_matches_factorization_oracle():
    cases = [pr_box_vec(), signal_both_ways_vec(), signal_forward_vec()]
    cases += det_comb_vecs()[::5]
    for v in cases:
        assert membership(as_member(SE, v), SE) == one_way_oracle(v)
    assert membership(as_member(SE, signal_forward_vec()), SE)
    assert not membership(as_member(TT, signal_forward_vec()), TT)
    assert not membership(as_member(SE, signal_both_ways_vec()), SE)


def test_ladder_is_strict():
    assert TT.dim == 8 and SE.dim == 10 and PA.dim == 12
    assert inclusion(TT, SE) and not inclusion(SE, TT)
    assert inclusion(SE, PA) and not inclusion(PA, SE)


@settings(deadline=None, max_examples=25)
@given(st.lists(st.tuples(st.integers(0, 63), st.integers(1, 5)),
                min_size=1, max_size=6))
def test_comb_mixtures_stay_one_way(picks):
    combs = det_comb_vecs()
    tot = sum(w for (_, w) in picks)
    mix = linalg.zeros_vec(16)
    for i, w in picks:
        mix = mix + combs[i] * Fr(w, tot)
    assert membership(as_member(SE, mix), SE)
    assert one_way_oracle(mix)


@settings(deadline=None, max_examples=20)
@given(st.lists(st.integers(0, 6), min_size=16, max_size=16))
def test_oracle_agreement_on_blockwise_distributions(raw):
    z = np.asarray([Fr(x) for x in raw], dtype=object).reshape(4, 4)
    for x1 in (0, 1):
        for x2 in (0, 1):
            s = sum(z[o1 + 2 * x1, o2 + 2 * x2] for o1 in (0, 1) for o2 in (0, 1))
            assume(s > 0)
            for o1 in (0, 1):
                for o2 in (0, 1):
                    z[o1 + 2 * x1, o2 + 2 * x2] /= s
    v = z.reshape(-1)
    assert membership(as_member(PA, v), PA)
    assert membership(as_member(SE, v), SE) == one_way_oracle(v)
    assert membership(as_member(TT, v), TT) == ns_oracle(v)


# --- par_type ---------------------------------------------------------------


def test_par_is_all_blockwise_distributions():
    pa = split_axes(PA, [[("o1", 2), ("x1", 2)], [("o2", 2), ("x2", 2)]])
    pa = permute(pa, [0, 2, 1, 3])
    joint = split_axes(first_order(4, 4),
                       [[("o1", 2), ("o2", 2), ("x1", 2), ("x2", 2)]])
    assert PA.dim == 12
    assert same_set(pa, joint)


# --- lollipop and process determinism ---------------------------------------


def lollipop_vertex_process(vec):
    arr = np.asarray(vec, dtype=object).reshape(4, 4)
    t = Tensor((bwire("T", 2, 2),), (bwire("S", 2, 2),), arr.T.copy(), EXACT)
    return th.Process(t, th.BOXWORLD_T)


def test_lollipop_vertices_are_deterministic_rewirings():
    A, b = LO.equations()
    verts = linalg.vertex_enumerate(A, b)
    assert sorted(tuple(v) for v in verts) == sorted(tuple(v) for v in det_supermap_vecs())


def test_lollipop_vertices_pass_the_process_predicate():
    for v in det_supermap_vecs():
        assert th.is_boxworld_deterministic(lollipop_vertex_process(v))
    assert not th.is_boxworld_deterministic(
        lollipop_vertex_process(signal_both_ways_vec()))
    assert not membership(as_member(LO, signal_both_ways_vec()), LO)


def test_lollipop_interior_members_pass_the_process_predicate():
    for m in LO.member_generators():
        v = m.entries.reshape(-1)
        assert membership(m, LO)
        assert th.is_boxworld_deterministic(lollipop_vertex_process(v))


def test_lollipop_is_dim_ten():
    assert LO.dim == 10


@settings(deadline=None, max_examples=15)
@given(st.lists(st.tuples(st.integers(0, 63), st.integers(1, 4)),
                min_size=1, max_size=5))
def test_rewiring_mixtures_agree_with_process_predicate(picks):
    dets = det_supermap_vecs()
    tot = sum(w for (_, w) in picks)
    mix = linalg.zeros_vec(16)
    for i, w in picks:
        mix = mix + dets[i] * Fr(w, tot)
    assert membership(as_member(LO, mix), LO)
    assert th.is_boxworld_deterministic(lollipop_vertex_process(mix))


# --- reshaping, hull plumbing, errors ---------------------------------------


def test_split_permute_roundtrip():
    s = split_axes(FO22, [[("o", 2), ("x", 2)]])
    back = permute(permute(s, [1, 0]), [1, 0])
    assert same_set(s, back)
    assert [w.label for w in s.ambient] == ["o", "x"]


def test_drop_unit_axes_absorbs_the_trivial_type():
    t = tensor_type(FO22, first_order(1, 1))
    assert same_set(drop_unit_axes(t), FO22)


def test_member_generators_span_the_hull():
    for c in (FO22, SE, dual(FO22)):
        gens = c.member_generators()
        assert len(gens) == c.dim + 1
        for g in gens:
            assert membership(g, c)
        hull = linalg.affine_span([g.entries.reshape(-1) for g in gens])
        assert hull.dim == c.dim


def test_equations_cut_out_the_hull():
    A, b = SE.equations()
    for g in SE.member_generators():
        v = g.entries.reshape(-1)
        got = A.dot(v)
        assert all(got[i] == b[i] for i in range(len(b)))
    v = SE.member_generators()[0].entries.reshape(-1).copy()
    v[0] += Fr(1, 7)
    got = A.dot(v)
    assert any(got[i] != b[i] for i in range(len(b)))


def test_membership_errors():
    with pytest.raises(CausError):
        membership(as_member(FO22, det_channel_vecs()[0]), SE)
    arr = np.ones((4,), dtype=np.float64)
    ft = Tensor(FO22.ambient, (), arr, FLOAT)
    with pytest.raises(CausError):
        membership(ft, FO22)
    with pytest.raises(CausError):
        inclusion(FO22, SE)


def test_boundary_hull_point_rejected():
    det = as_member(FO22, det_channel_vecs()[0])
    with pytest.raises(CausError):
        CausSet(FO22.ambient, det, FO22.hull_basis)


def test_ambient_cap(monkeypatch):
    monkeypatch.setenv("HOPS_MAX_AMBIENT_DIM", "32")
    with pytest.raises(CausError):
        tensor_type(SE, SE)


def test_repr_mentions_dimension():
    assert "affine dim 2" in repr(FO22)
