from fractions import Fraction as Fr

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hops.tensor import (
    EXACT,
    Tensor,
    TensorError,
    bwire,
    compose,
    cwire,
    devectorize,
    discard_effect,
    identity_tensor,
    kron,
    pair_contract,
    permute_wires,
    point_effect,
    point_state,
    qwire,
    swap_tensor,
    trace_out,
    vectorize,
    zeros,
)


def mat(rows):
    return np.array([[Fr(x) for x in r] for r in rows], dtype=object)


def chan(rows, lab_out="B", lab_in="A"):
    rows = mat(rows)
    return Tensor((cwire(lab_out, rows.shape[0]),), (cwire(lab_in, rows.shape[1]),), rows)


def test_kron_identities():
    i2 = identity_tensor((cwire("A", 2),))
    i4 = kron(i2, i2)
    assert np.array_equal(i4.as_matrix(), identity_tensor((cwire("A", 2), cwire("B", 2))).as_matrix())


def test_kron_basis_columns_row_major_enumeration():
    e0 = point_state(cwire("A", 2), 0)
    e1 = point_state(cwire("B", 2), 1)
    got = kron(e0, e1)
    # dense enumeration is row-major over the listed wires
    assert list(got.entries.reshape(-1)) == [Fr(0), Fr(1), Fr(0), Fr(0)]
    # column-stacking flattening puts the first wire fastest
    assert list(got.ravel_cs()) == [Fr(0), Fr(0), Fr(1), Fr(0)]


def test_kron_of_stochastic_is_stochastic():
    a = chan([[Fr(1, 2), Fr(1, 3)], [Fr(1, 2), Fr(2, 3)]])
    b = chan([[Fr(1, 4), 0], [Fr(3, 4), 1]])
    k = kron(a, b).as_matrix()
    for col in range(4):
        assert sum(k[:, col]) == 1
    assert all(x >= 0 for x in k.reshape(-1))


def test_compose_identity_and_swap():
    f = chan([[Fr(1, 2), Fr(1, 3)], [Fr(1, 2), Fr(2, 3)]])
    i2 = identity_tensor((cwire("B", 2),))
    assert compose(i2, f).equal(f)
    sw = swap_tensor(cwire("A", 2), cwire("B", 3))
    sw_back = swap_tensor(cwire("B", 3), cwire("A", 2))
    assert np.array_equal(
        compose(sw_back, sw).as_matrix(),
        identity_tensor((cwire("A", 2), cwire("B", 3))).as_matrix(),
    )


def test_swap_on_basis_pairs():
    wa, wb = cwire("A", 2), cwire("B", 3)
    sw = swap_tensor(wa, wb)
    for i in range(2):
        for j in range(3):
            src = kron(point_state(wa, i), point_state(wb, j))
            out = pair_contract(src, sw, [(0, 0), (1, 1)])
            want = kron(point_state(wb, j), point_state(wa, i))
            assert np.array_equal(out.entries, want.entries)


def test_cap_cup_scalar_d():
    for d in (2, 3):
        w1, w2 = cwire("X", d), cwire("Y", d)
        cup = zeros((w1, w2), ())
        cap = zeros((), (w1, w2))
        for x in range(d):
            cup.entries[x, x] = Fr(1)
            cap.entries[x, x] = Fr(1)
        got = compose(cap, cup)
        assert got.entries.reshape(-1)[0] == d


def test_permute_wires_identity_and_involution():
    t = kron(chan([[1, 0], [0, 1]]), chan([[Fr(1, 3)], [Fr(2, 3)]], "C", "D"))
    same = permute_wires(t, [0, 1], [0, 1])
    assert same.equal(t)
    p = permute_wires(t, [1, 0], [1, 0])
    back = permute_wires(p, [1, 0], [1, 0])
    assert np.array_equal(back.entries, t.entries)
    assert [w.label for w in p.wires_out] == ["C", "B"]


def test_vectorize_convention():
    ident = chan([[1, 0], [0, 1]])
    v = vectorize(ident)
    assert list(v.entries) == [Fr(1), Fr(0), Fr(0), Fr(1)]
    m = chan([[Fr(1), Fr(2)], [Fr(3), Fr(4)]])
    assert list(vectorize(m).entries) == [Fr(1), Fr(3), Fr(2), Fr(4)]  # M00 M10 M01 M11


def test_devectorize_roundtrip():
    m = chan([[Fr(1, 7), Fr(2, 7)], [Fr(6, 7), Fr(5, 7)]])
    v = vectorize(m)
    back = devectorize(v, m.wires_out, m.wires_in)
    assert np.array_equal(back.entries, m.entries)


def test_quantum_wire_doubling():
    q = qwire("Q", 2)
    ident = identity_tensor((q,))
    assert ident.as_matrix().shape == (4, 4)
    disc = discard_effect(q)
    assert list(disc.entries) == [Fr(1), Fr(0), Fr(0), Fr(1)]


def test_boxworld_wire_dims_and_discard():
    w = bwire("P", 2, 3)
    assert w.axis_dim == 6
    disc = discard_effect(w)
    assert all(x == Fr(1, 2) for x in disc.entries)


def test_trace_out_classical():
    t = chan([[Fr(1, 2), Fr(1, 3)], [Fr(1, 2), Fr(2, 3)]])
    tr = trace_out(t, [0])
    assert list(tr.entries) == [Fr(1), Fr(1)]


def test_mode_mismatch_and_bad_perm():
    a = chan([[1, 0], [0, 1]])
    b = Tensor((cwire("B", 2),), (cwire("A", 2),), np.eye(2), mode="float")
    with pytest.raises(TensorError):
        kron(a, b)
    with pytest.raises(TensorError):
        permute_wires(a, [0, 0], [0])


def test_point_effect_picks_component():
    w = cwire("Y", 3)
    t = zeros((cwire("B", 2), w), (cwire("A", 2),))
    t.entries[1, 2, 0] = Fr(5)
    picked = apply_y = pair_contract(t, point_effect(w, 2), [(1, 0)])
    assert picked.entries[1, 0] == Fr(5)
    assert picked.entries[0, 0] == 0


small_fraction = st.integers(-3, 3).map(Fr)


def frac_tensor(dout, din):
    return st.lists(small_fraction, min_size=dout * din, max_size=dout * din).map(
        lambda xs: Tensor(
            (cwire("o", dout),),
            (cwire("i", din),),
            np.array(xs, dtype=object).reshape(dout, din),
        )
    )


@settings(max_examples=25, deadline=None)
@given(f=frac_tensor(2, 2), g=frac_tensor(3, 2), f2=frac_tensor(2, 3), g2=frac_tensor(2, 2))
def test_interchange_law(f, g, f2, g2):
    lhs = kron(compose(g, f), compose(g2, f2))
    rhs = compose(kron(g, g2), kron(f, f2))
    assert np.array_equal(lhs.as_matrix(), rhs.as_matrix())


@settings(max_examples=25, deadline=None)
@given(t=frac_tensor(3, 2))
def test_vectorize_linear_bijective(t):
    v = vectorize(t)
    back = devectorize(v, t.wires_out, t.wires_in)
    assert np.array_equal(back.entries, t.entries)


@settings(max_examples=15, deadline=None)
@given(f=frac_tensor(2, 2), g=frac_tensor(2, 2))
def test_compose_associative(f, g):
    h = chan([[Fr(1, 2), Fr(1, 5)], [Fr(1, 2), Fr(4, 5)]])
    assert np.array_equal(
        compose(compose(f, g), h).as_matrix(), compose(f, compose(g, h)).as_matrix()
    )
