"""Theory-level predicates: stochastic / CPTP / NS-preserving, the Choi
convention at the observable boundary, NS affine families, and the
deterministic generator families used by higher layers.

Choi convention pinned here: row and column of the Choi matrix are the
pair (input basis index, output basis index) flattened with the input
index fastest, so the Choi of the qubit identity is the outer square of
(1, 0, 0, 1).
"""

import itertools
from fractions import Fraction as Fr

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hops import linalg, theories as th
from hops.tensor import (
    EXACT,
    FLOAT,
    Tensor,
    bwire,
    cwire,
    identity_tensor,
    kron,
    qwire,
    zeros,
)


def qproc(mat, n_in=2, n_out=2, theory=th.QUANTUM_T):
    arr = np.asarray(mat, dtype=complex)
    t = Tensor((qwire("B", n_out),), (qwire("A", n_in),), arr, FLOAT)
    return th.Process(t, theory)


def kraus_choi(kraus_ops, n_in, n_out):
    """Independent construction of the Choi matrix from Kraus operators,
    entry ((m,k),(p,l)) = sum_K K[k,m] * conj(K[l,p]), rows m + n_in*k."""
    N = n_in * n_out
    J = np.zeros((N, N), dtype=complex)
    for K in kraus_ops:
        K = np.asarray(K, dtype=complex)
        for m in range(n_in):
            for k in range(n_out):
                for p in range(n_in):
                    for l in range(n_out):
                        J[m + n_in * k, p + n_in * l] += K[k, m] * np.conj(K[l, p])
    return J


# --- Choi convention pins ---------------------------------------------------


def test_choi_of_qubit_identity_is_outer_1001():
    p = th.Process(identity_tensor((qwire("A", 2),), FLOAT), th.QUANTUM_T)
    J = th.choi_matrix(p)
    v = np.array([1, 0, 0, 1], dtype=complex)
    assert np.allclose(J, np.outer(v, v))
    assert th.is_cp(p) and th.is_cptp(p)


def test_transpose_map_is_tp_not_cp():
    # transfer of the transpose map permutes the doubled index (k,l)->(l,k)
    T = np.zeros((4, 4))
    for k in range(2):
        for l in range(2):
            T[k + 2 * l, l + 2 * k] = 1.0
    p = qproc(T)
    assert th.is_tp(p)
    assert not th.is_cp(p)
    assert not th.is_cptp(p)


def test_negative_identity_not_cp():
    p = qproc(-np.eye(4))
    assert not th.is_cp(p)


def test_isometry_embedding_choi_and_action():
    # V = |0><0| + |1><1| embedding qubit into qutrit; Choi is the outer
    # square of e0 + e3 in dimension 6 (rows m + 2k)
    v = np.zeros(6)
    v[0 + 2 * 0] = 1
    v[1 + 2 * 1] = 1
    J = np.outer(v, v)
    p = th.quantum_from_choi(J, [2], [3])
    assert th.is_cptp(p)
    rho = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = p.tensor.as_matrix() @ rho.ravel(order="F")
    want = np.zeros((3, 3))
    want[:2, :2] = rho
    assert np.allclose(out, want.ravel(order="F"))


def test_choi_roundtrip_multiwire():
    rng = np.random.default_rng(7)
    t = Tensor(
        (qwire("B0", 2), qwire("B1", 2)),
        (qwire("A0", 2),),
        rng.normal(size=(4, 4, 4)) + 1j * rng.normal(size=(4, 4, 4)),
        FLOAT,
    )
    p = th.Process(t, th.QUANTUM_T)
    J = th.choi_matrix(p)
    q = th.quantum_from_choi(J, [2], [2, 2])
    assert q.tensor.max_abs_diff(p.tensor) < 1e-12


def test_choi_identity_two_wires():
    p = th.Process(identity_tensor((qwire("A", 2), qwire("B", 2)), FLOAT), th.QUANTUM_T)
    J = th.choi_matrix(p)
    w = np.zeros(16)
    for m in range(4):
        w[m + 4 * m] = 1
    assert np.allclose(J, np.outer(w, w))


def test_amplitude_damping_is_cptp():
    g = 0.5
    K0 = [[1, 0], [0, np.sqrt(1 - g)]]
    K1 = [[0, np.sqrt(g)], [0, 0]]
    J = kraus_choi([K0, K1], 2, 2)
    p = th.quantum_from_choi(J, [2], [2])
    assert th.is_cptp(p)
    # break trace preservation just above tolerance
    J2 = J.copy()
    J2[0, 0] += 1e-6
    assert not th.is_cptp(th.quantum_from_choi(J2, [2], [2]))


def test_real_quantum_rejects_complex_choi():
    # Y-basis rotation has complex Choi entries
    U = np.array([[1, 1j], [1j, 1]]) / np.sqrt(2)
    J = kraus_choi([U], 2, 2)
    p = th.quantum_from_choi(J, [2], [2], theory=th.QUANTUM_T)
    assert th.is_cptp(p)
    r = th.quantum_from_choi(J, [2], [2], theory=th.REAL_QUANTUM_T)
    assert not th.is_cp(r)


# --- classical predicates ----------------------------------------------------


def test_stochastic_basics():
    good = th.classical_channel([[Fr(1, 2), Fr(1, 3)], [Fr(1, 2), Fr(2, 3)]])
    assert th.is_stochastic(good)
    assert th.is_nonneg(good)
    bad = th.classical_channel([[Fr(1, 2), Fr(1)], [Fr(1, 2), Fr(1, 3)]])
    assert not th.is_stochastic(bad)
    neg = th.classical_channel([[Fr(3, 2), Fr(1)], [Fr(-1, 2), Fr(0)]])
    assert not th.is_stochastic(neg)
    with pytest.raises(th.TheoryError):
        th.is_stochastic(th.Process(identity_tensor((bwire("P", 2, 2),)), th.BOXWORLD_T))


# --- no-signalling -----------------------------------------------------------

BIN2 = th.scenario((2, 2), (2, 2))


def pr_box_state():
    t = zeros(BIN2.pair_wires(), ())
    for x1 in range(2):
        for x2 in range(2):
            for o1 in range(2):
                for o2 in range(2):
                    if (o1 ^ o2) == (x1 & x2):
                        t.entries[o1 + 2 * x1, o2 + 2 * x2] = Fr(1, 2)
    return t


def test_pr_box_is_ns():
    chan = th.box_state_to_channel_tensor(pr_box_state(), BIN2)
    assert th._ns_channel_tensor_ok(chan, BIN2)


def test_signalling_channel_rejected():
    # party 2's output copies party 1's input
    t = zeros(BIN2.pair_wires(), ())
    for x1 in range(2):
        for x2 in range(2):
            t.entries[0 + 2 * x1, x1 + 2 * x2] = Fr(1)
    chan = th.box_state_to_channel_tensor(t, BIN2)
    assert not th._ns_channel_tensor_ok(chan, BIN2)


def test_is_ns_channel_accepts_fat_wires():
    # product of two maximally-mixing local channels, presented as a
    # single 4x4 stochastic matrix
    m = np.empty((4, 4), dtype=object)
    m[:, :] = Fr(1, 4)
    p = th.classical_channel(m)
    assert th.is_ns_channel(p, BIN2)


def test_ns_family_binary_dims():
    fam = th.ns_affine_family(BIN2)
    assert fam.hull.dim == 8
    assert len(fam.local_dets) == 16
    assert len(fam.generators) == 9
    for g in fam.generators:
        chan = th.box_state_to_channel_tensor(g, BIN2)
        assert th._ns_channel_tensor_ok(chan, BIN2)
    # PR box sits inside the affine hull
    assert fam.hull.contains(pr_box_state().ravel_cs())


def test_ns_family_single_party():
    sc = th.scenario((2, 2))
    fam = th.ns_affine_family(sc)
    assert fam.hull.dim == 2
    assert len(fam.local_dets) == 4


def test_ns_rows_match_vertex_count():
    A, b = th.ns_equality_rows(BIN2)
    assert linalg.rank(A) == 8
    verts = linalg.vertex_enumerate(A, b, cap=16)
    assert len(verts) == 24


def test_channel_state_roundtrip():
    rng = np.random.default_rng(3)
    raw = rng.integers(0, 5, size=(4, 4))
    arr = np.empty((4, 4), dtype=object)
    for i in range(4):
        for j in range(4):
            arr[i, j] = Fr(int(raw[i, j]), 7)
    t = Tensor((cwire("O0", 2), cwire("O1", 2)), (cwire("I0", 2), cwire("I1", 2)), arr)
    st_ = th.channel_tensor_to_box_state(t, BIN2)
    back = th.box_state_to_channel_tensor(st_, BIN2)
    assert np.array_equal(back.entries, t.entries)


def test_det_product_channel_state_placement():
    # party 1 applies NOT, party 2 outputs constant 0: check one entry
    t = zeros((cwire("O0", 2), cwire("O1", 2)), (cwire("I0", 2), cwire("I1", 2)))
    for x1 in range(2):
        for x2 in range(2):
            t.entries[1 - x1, 0, x1, x2] = Fr(1)
    st_ = th.channel_tensor_to_box_state(t, BIN2)
    assert st_.entries[1 + 2 * 0, 0 + 2 * 0] == 1  # x1=0 -> o1=1, x2=0 -> o2=0
    assert st_.entries[0 + 2 * 1, 0 + 2 * 1] == 1
    assert st_.entries[0 + 2 * 0, 0 + 2 * 0] == 0


# --- boxworld determinism ----------------------------------------------------


def test_identity_and_swap_deterministic():
    one = th.Process(identity_tensor((bwire("P", 2, 2),)), th.BOXWORLD_T)
    assert th.is_deterministic(one)
    two = th.Process(identity_tensor((bwire("P", 2, 2), bwire("Q", 2, 2))), th.BOXWORLD_T)
    assert th.is_boxworld_deterministic(two, env_bound=1)


def test_pr_box_as_process_deterministic():
    p = th.Process(pr_box_state(), th.BOXWORLD_T)
    assert th.is_boxworld_deterministic(p, env_bound=1)


def pair_transpose_map():
    """Permutes a single party's pair index (o + 2x) -> (x + 2o): sends
    the conditional p(o|x) to p(x|o)-shaped data, which breaks
    normalization for constant channels."""
    m = np.empty((4, 4), dtype=object)
    m[:, :] = Fr(0)
    for o in range(2):
        for x in range(2):
            m[x + 2 * o, o + 2 * x] = Fr(1)
    w = bwire("P", 2, 2)
    return th.Process(Tensor((w,), (w,), m), th.BOXWORLD_T)


def test_pair_transpose_not_deterministic():
    p = pair_transpose_map()
    assert not th.is_boxworld_deterministic(p, env_bound=0)
    assert not th.vertex_check_boxworld(p, *th.box_scenarios_of(p))


def test_affine_vs_vertex_verdicts_agree():
    rng = np.random.default_rng(11)
    w = bwire("P", 2, 2)
    agree = 0
    for trial in range(6):
        raw = rng.integers(0, 4, size=(4, 4))
        m = np.empty((4, 4), dtype=object)
        for i in range(4):
            for j in range(4):
                m[i, j] = Fr(int(raw[i, j]), 3)
        p = th.Process(Tensor((w,), (w,), m), th.BOXWORLD_T)
        in_sc, out_sc = th.box_scenarios_of(p)
        a = th.is_boxworld_deterministic(p, env_bound=0, _assert_nonneg_outputs=False)
        v = th.vertex_check_boxworld(p, in_sc, out_sc)
        assert a == v
        agree += 1
    assert agree == 6


def test_classical_channel_embeds_in_boxworld():
    m = np.array([[Fr(1, 2), Fr(1, 4)], [Fr(1, 2), Fr(3, 4)]], dtype=object)
    t = Tensor((cwire("B", 2),), (cwire("A", 2),), m)
    p = th.Process(t, th.BOXWORLD_T)
    assert th.is_deterministic(p)
    bad = Tensor((cwire("B", 2),), (cwire("A", 2),),
                 np.array([[Fr(1), Fr(1)], [Fr(1), Fr(0)]], dtype=object))
    assert not th.is_deterministic(th.Process(bad, th.BOXWORLD_T))


# --- generator families -------------------------------------------------------


def test_stochastic_generators_span():
    gens = th.stochastic_generators(2, 2)
    assert len(gens) == 3
    for g in gens:
        assert th._stochastic_tensor(g)
    hull = linalg.affine_span([g.ravel_cs() for g in gens])
    assert hull.dim == 2
    dets = th.deterministic_function_channels(2, 2)
    assert len(dets) == 4
    for d in dets:
        assert hull.contains(d.ravel_cs())


def test_cptp_generators_qubit():
    gens = th.cptp_generators([2], [2])
    assert len(gens) >= 13
    vecs = []
    for g in gens:
        assert th.is_cptp(g)
        J = th.choi_matrix(g).reshape(-1)
        vecs.append(np.concatenate([J.real, J.imag]))
    dirs = np.stack([v - vecs[0] for v in vecs[1:]])
    assert np.linalg.matrix_rank(dirs, tol=1e-9) == 12


def test_cptp_generators_rebit_exact():
    gens = th.cptp_generators([2], [2], theory=th.REAL_QUANTUM_T)
    for g in gens:
        assert g.mode == EXACT
        assert th.is_cptp(g)
    hull = linalg.affine_span([g.tensor.ravel_cs() for g in gens])
    assert hull.dim == 7


# --- classical control --------------------------------------------------------


def test_classical_control_recovers_members():
    ident = th.classical_channel([[1, 0], [0, 1]])
    flip = th.classical_channel([[0, 1], [1, 0]])
    m = th.classical_control([ident, flip])
    assert th.is_deterministic(m)
    for i, member in enumerate([ident, flip]):
        got = th.control_at(m, i)
        assert got.tensor.equal(member.tensor)


def test_classical_control_quantum():
    eye = qproc(np.eye(4))
    X = np.array([[0, 1], [1, 0]])
    flip = qproc(np.kron(X, X))
    m = th.classical_control([eye, flip])
    assert th.is_cptp(m)
    assert th.control_at(m, 1).tensor.equal(flip.tensor, 0.0)


def test_classical_control_rejects_nondeterministic():
    half = th.classical_channel([[Fr(1, 2), 0], [0, 1]])
    with pytest.raises(th.TheoryError):
        th.classical_control([half, half])


# --- property tests -----------------------------------------------------------


@st.composite
def stoch_2x2(draw):
    cols = []
    for _ in range(2):
        a = draw(st.integers(min_value=0, max_value=6))
        cols.append([Fr(a, 6), Fr(6 - a, 6)])
    return [[cols[0][0], cols[1][0]], [cols[0][1], cols[1][1]]]


@settings(max_examples=20, deadline=None)
@given(stoch_2x2(), stoch_2x2())
def test_product_channels_are_ns(m1, m2):
    t = kron(
        Tensor((cwire("O0", 2),), (cwire("I0", 2),), np.array(m1, dtype=object)),
        Tensor((cwire("O1", 2),), (cwire("I1", 2),), np.array(m2, dtype=object)),
    )
    # kron gives axes (O0, O1, I0, I1) which is party-axis order already
    assert th._ns_channel_tensor_ok(t, BIN2)


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=4), st.integers(min_value=0, max_value=4))
def test_mixtures_of_ns_states_are_ns(i, j):
    fam = th.ns_affine_family(BIN2)
    a = fam.generators[i % len(fam.generators)]
    b = fam.generators[j % len(fam.generators)]
    mix = Tensor(a.wires_out, (), (a.entries + b.entries) * Fr(1, 2))
    chan = th.box_state_to_channel_tensor(mix, BIN2)
    assert th._ns_channel_tensor_ok(chan, BIN2)
