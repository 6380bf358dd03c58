"""The four concrete theories over the shared tensor carrier.

A Process is a tensor plus a theory tag.  Classical processes are
stochastic matrices on classical wires.  Quantum and real-quantum
processes are stored as transfer tensors on doubled wires (axis index
i + n*j for |i><j|), which compose by plain matrix product; the Choi
matrix is an index reshuffle away and is the form exposed by
``choi_matrix`` / ``quantum_from_choi`` and by the file format, with
row index (in, out) flattened first-index-fastest.  Boxworld processes
are nonnegative tensors on pair wires (a, a'), one axis per party.

Determinism:
  Classical     column-stochastic
  Quantum       CPTP (Choi PSD + partial trace condition)
  RealQuantum   CPTP with real symmetric Choi
  Boxworld      preserves no-signalling channels, environments included

Classical wires may ride along on quantum and boxworld processes
(settings/outcomes); they are treated as direct-sum indices, and for
boxworld scenario purposes a classical wire of dimension d is the pair
(1, d).
"""

from __future__ import annotations

import itertools
import os
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import linalg
from .linalg import TAU_MEM, TAU_PSD, AffineHull, affine_span
from .tensor import (
    BOXWORLD,
    CLASSICAL,
    EXACT,
    FLOAT,
    QUANTUM,
    Tensor,
    TensorError,
    bwire,
    compose,
    cwire,
    discard_effect,
    entries_nonneg,
    identity_tensor,
    kron,
    pair_contract,
    point_state,
    qwire,
    trace_out,
    zeros,
)

F0 = Fraction(0)
F1 = Fraction(1)

CLASSICAL_T = "Classical"
QUANTUM_T = "Quantum"
REAL_QUANTUM_T = "RealQuantum"
BOXWORLD_T = "Boxworld"

THEORIES = (CLASSICAL_T, QUANTUM_T, REAL_QUANTUM_T, BOXWORLD_T)

_LEGAL_KINDS = {
    CLASSICAL_T: {CLASSICAL},
    QUANTUM_T: {QUANTUM, CLASSICAL},
    REAL_QUANTUM_T: {QUANTUM, CLASSICAL},
    BOXWORLD_T: {BOXWORLD, CLASSICAL},
}


class TheoryError(ValueError):
    """Wrong theory tag or illegal wire kind for the theory."""


@dataclass(frozen=True)
class Process:
    tensor: Tensor
    theory: str

    def __post_init__(self):
        if self.theory not in THEORIES:
            raise TheoryError(f"unknown theory {self.theory!r}")
        legal = _LEGAL_KINDS[self.theory]
        for w in self.tensor.wires_out + self.tensor.wires_in:
            if w.kind not in legal:
                raise TheoryError(f"wire {w.label!r} kind {w.kind} illegal in {self.theory}")

    @property
    def mode(self):
        return self.tensor.mode


@dataclass(frozen=True)
class NsScenario:
    """Parties of a no-signalling scenario: (input dim, output dim) each."""

    parties: tuple[tuple[int, int], ...]

    def __post_init__(self):
        for (a, ap) in self.parties:
            if a < 1 or ap < 1:
                raise TheoryError("party dims must be >= 1")

    @property
    def n(self) -> int:
        return len(self.parties)

    @property
    def ambient(self) -> int:
        d = 1
        for (a, ap) in self.parties:
            d *= a * ap
        return d

    def pair_wires(self, prefix: str = "P") -> tuple:
        return tuple(bwire(f"{prefix}{k}", a, ap) for k, (a, ap) in enumerate(self.parties))

    def extend(self, extra: Sequence[tuple[int, int]]) -> "NsScenario":
        return NsScenario(self.parties + tuple(extra))


def scenario(*parties: tuple[int, int]) -> NsScenario:
    return NsScenario(tuple(parties))


# --- constructors ---------------------------------------------------------


def classical_channel(rows, label_out: str = "B", label_in: str = "A", mode=EXACT) -> Process:
    arr = np.array(rows, dtype=object if mode == EXACT else np.float64)
    t = Tensor((cwire(label_out, arr.shape[0]),), (cwire(label_in, arr.shape[1]),), arr, mode)
    return Process(t, CLASSICAL_T)


def classical_state(weights, label: str = "A", mode=EXACT) -> Process:
    arr = np.array(weights, dtype=object if mode == EXACT else np.float64)
    t = Tensor((cwire(label, len(weights)),), (), arr, mode)
    return Process(t, CLASSICAL_T)


def _basis_strides(dims: Sequence[int]) -> list[int]:
    """Column-stacking strides: first listed index fastest."""
    strides = []
    s = 1
    for d in dims:
        strides.append(s)
        s *= d
    return strides


def choi_matrix(p: Process) -> np.ndarray:
    """Choi matrix of a pure-quantum process.

    Row/column index is the pair (input basis index, output basis index)
    flattened with the input index fastest; entry at
    ((m,k),(p,l)) is <k| Phi(|m><p|) |l>.
    """
    if p.theory not in (QUANTUM_T, REAL_QUANTUM_T):
        raise TheoryError("choi_matrix needs a quantum process")
    t = p.tensor
    for w in t.wires_out + t.wires_in:
        if w.kind != QUANTUM:
            raise TheoryError("choi_matrix needs all-quantum wires (slice classical ones first)")
    return _transfer_to_choi(t)


def _transfer_to_choi(t: Tensor) -> np.ndarray:
    out_dims = [w.dim for w in t.wires_out]
    in_dims = [w.dim for w in t.wires_in]
    n_out = int(np.prod(out_dims, dtype=np.int64)) if out_dims else 1
    n_in = int(np.prod(in_dims, dtype=np.int64)) if in_dims else 1
    so = _basis_strides(out_dims)
    si = _basis_strides(in_dims)
    N = n_in * n_out
    if t.mode == EXACT:
        J = np.empty((N, N), dtype=object)
        J[:, :] = F0
    else:
        J = np.zeros((N, N), dtype=np.complex128)
    ent = t.entries
    for kt in itertools.product(*[range(n) for n in out_dims]) if out_dims else [()]:
        for lt in itertools.product(*[range(n) for n in out_dims]) if out_dims else [()]:
            oaxes = tuple(kt[w] + out_dims[w] * lt[w] for w in range(len(out_dims)))
            k = sum(kt[w] * so[w] for w in range(len(out_dims)))
            l = sum(lt[w] * so[w] for w in range(len(out_dims)))
            for mt in itertools.product(*[range(n) for n in in_dims]) if in_dims else [()]:
                for pt in itertools.product(*[range(n) for n in in_dims]) if in_dims else [()]:
                    iaxes = tuple(mt[w] + in_dims[w] * pt[w] for w in range(len(in_dims)))
                    m = sum(mt[w] * si[w] for w in range(len(in_dims)))
                    pp = sum(pt[w] * si[w] for w in range(len(in_dims)))
                    J[m + n_in * k, pp + n_in * l] = ent[oaxes + iaxes]
    return J


def quantum_from_choi(J, in_dims: Sequence[int], out_dims: Sequence[int],
                      mode=FLOAT, theory=QUANTUM_T, label_in="A", label_out="B") -> Process:
    """Inverse of choi_matrix for given logical wire dimensions."""
    in_dims = list(in_dims)
    out_dims = list(out_dims)
    n_in = int(np.prod(in_dims, dtype=np.int64)) if in_dims else 1
    n_out = int(np.prod(out_dims, dtype=np.int64)) if out_dims else 1
    J = np.array(J, dtype=object if mode == EXACT else np.complex128)
    if J.shape != (n_in * n_out, n_in * n_out):
        raise TheoryError(f"choi shape {J.shape} does not match dims")
    wires_out = tuple(qwire(f"{label_out}{i}" if len(out_dims) > 1 else label_out, n)
                      for i, n in enumerate(out_dims))
    wires_in = tuple(qwire(f"{label_in}{i}" if len(in_dims) > 1 else label_in, n)
                     for i, n in enumerate(in_dims))
    shape = tuple(w.axis_dim for w in wires_out) + tuple(w.axis_dim for w in wires_in)
    if mode == EXACT:
        ent = np.empty(shape, dtype=object)
        ent.reshape(-1)[:] = [F0] * int(np.prod(shape, dtype=np.int64))
    else:
        ent = np.zeros(shape, dtype=np.complex128)
    so = _basis_strides(out_dims)
    si = _basis_strides(in_dims)
    for kt in itertools.product(*[range(n) for n in out_dims]) if out_dims else [()]:
        for lt in itertools.product(*[range(n) for n in out_dims]) if out_dims else [()]:
            oaxes = tuple(kt[w] + out_dims[w] * lt[w] for w in range(len(out_dims)))
            k = sum(kt[w] * so[w] for w in range(len(out_dims)))
            l = sum(lt[w] * so[w] for w in range(len(out_dims)))
            for mt in itertools.product(*[range(n) for n in in_dims]) if in_dims else [()]:
                for pt in itertools.product(*[range(n) for n in in_dims]) if in_dims else [()]:
                    iaxes = tuple(mt[w] + in_dims[w] * pt[w] for w in range(len(in_dims)))
                    m = sum(mt[w] * si[w] for w in range(len(in_dims)))
                    pp = sum(pt[w] * si[w] for w in range(len(in_dims)))
                    ent[oaxes + iaxes] = J[m + n_in * k, pp + n_in * l]
    t = Tensor(wires_out, wires_in, ent, mode)
    return Process(t, theory)


def boxworld_process(t: Tensor) -> Process:
    return Process(t, BOXWORLD_T)


# --- elementary predicates -------------------------------------------------


def is_nonneg(p: Process, tol: float = 0.0) -> bool:
    if p.theory not in (CLASSICAL_T, BOXWORLD_T):
        raise TheoryError("nonnegativity applies to Classical/Boxworld processes")
    return entries_nonneg(p.tensor, tol)


def is_stochastic(p: Process, tol: float = TAU_MEM) -> bool:
    if p.theory != CLASSICAL_T:
        raise TheoryError("is_stochastic needs a Classical process")
    return _stochastic_tensor(p.tensor, tol)


def _stochastic_tensor(t: Tensor, tol: float = TAU_MEM) -> bool:
    if not entries_nonneg(t, tol if t.mode == FLOAT else 0.0):
        return False
    m = t.as_matrix()
    sums = m.sum(axis=0)
    if t.mode == EXACT:
        return all(s == 1 for s in sums.reshape(-1))
    return bool(np.max(np.abs(np.asarray(sums, dtype=np.complex128) - 1.0)) <= tol)


def _hermitian_ok(J: np.ndarray, mode: str, tol: float) -> bool:
    if mode == EXACT:
        return bool(np.all(J == J.T))
    return bool(np.max(np.abs(J - J.conj().T)) <= max(tol, 1e-12))


def is_cp(p: Process, tol: float = TAU_PSD) -> bool:
    """Choi positive semidefinite; classical side wires are sliced."""
    if p.theory not in (QUANTUM_T, REAL_QUANTUM_T):
        raise TheoryError("is_cp needs a quantum process")
    for sl in _classical_slices(p.tensor):
        J = _transfer_to_choi(sl)
        if not _hermitian_ok(J, sl.mode, 1e-9):
            raise TheoryError("non-Hermitian Choi matrix")
        if p.theory == REAL_QUANTUM_T and not _real_entries(J, sl.mode):
            return False
        if sl.mode == EXACT:
            if not linalg.psd_check_exact(J):
                return False
        else:
            if not linalg.psd_check_float(J, tol):
                return False
    return True


def _real_entries(J: np.ndarray, mode: str, tol: float = TAU_MEM) -> bool:
    if mode == EXACT:
        return True  # Fractions are real
    return bool(np.max(np.abs(np.asarray(J, dtype=np.complex128).imag)) <= tol)


def is_tp(p: Process, tol: float = TAU_MEM) -> bool:
    """Summing/tracing all outputs equals the discard of all inputs, for
    every assignment of classical input wires."""
    t = p.tensor
    reduced = trace_out(t, list(range(len(t.wires_out))))
    want = None
    for pos, w in enumerate(t.wires_in):
        d = discard_effect(w, t.mode)
        want = d if want is None else kron(want, d)
    if want is None:
        want = Tensor((), (), np.array(F1 if t.mode == EXACT else 1.0,
                                       dtype=object if t.mode == EXACT else None), t.mode)
    return reduced.equal(want, 0.0 if t.mode == EXACT else tol)


def is_cptp(p: Process, tol: float = TAU_MEM) -> bool:
    """Deterministic quantum process: per classical input, the outcome-
    summed branch is trace preserving; every branch is CP."""
    if p.theory not in (QUANTUM_T, REAL_QUANTUM_T):
        raise TheoryError("is_cptp needs a quantum process")
    if not is_cp(p):
        return False
    cls_out = [i for i, w in enumerate(p.tensor.wires_out) if w.kind == CLASSICAL]
    summed = trace_out(p.tensor, cls_out) if cls_out else p.tensor
    return is_tp(Process(summed, p.theory), tol)


def _classical_slices(t: Tensor):
    """All tensors obtained by fixing every classical wire to a point."""
    cls_out = [i for i, w in enumerate(t.wires_out) if w.kind == CLASSICAL]
    cls_in = [i for i, w in enumerate(t.wires_in) if w.kind == CLASSICAL]
    if not cls_out and not cls_in:
        yield t
        return
    out_ranges = [range(t.wires_out[i].dim) for i in cls_out]
    in_ranges = [range(t.wires_in[i].dim) for i in cls_in]
    no = len(t.wires_out)
    for ovals in itertools.product(*out_ranges):
        for ivals in itertools.product(*in_ranges):
            index = [slice(None)] * (len(t.wires_out) + len(t.wires_in))
            for pos, v in zip(cls_out, ovals):
                index[pos] = v
            for pos, v in zip(cls_in, ivals):
                index[no + pos] = v
            arr = t.entries[tuple(index)]
            wires_out = tuple(w for i, w in enumerate(t.wires_out) if i not in cls_out)
            wires_in = tuple(w for i, w in enumerate(t.wires_in) if i not in cls_in)
            yield Tensor(wires_out, wires_in, arr, t.mode)


# --- no-signalling machinery ----------------------------------------------


def channel_tensor_to_box_state(t: Tensor, sc: NsScenario, prefix="P") -> Tensor:
    """Classical channel tensor (out axes per party, then in axes per
    party) -> state tensor on pair wires, axis index o + a' * x."""
    n = sc.n
    dims_out = [ap for (a, ap) in sc.parties]
    dims_in = [a for (a, ap) in sc.parties]
    arr = t.entries.reshape(tuple(dims_out) + tuple(dims_in))
    # pair axis index o + a'*x is C-order (x, o); build axes (x_k, o_k) adjacent
    perm = []
    for k in range(n):
        perm.append(n + k)  # x_k
        perm.append(k)      # o_k
    arr2 = np.transpose(arr, perm)
    shape = tuple(a * ap for (a, ap) in sc.parties)
    arr2 = arr2.reshape(shape)
    return Tensor(sc.pair_wires(prefix), (), arr2, t.mode)


def box_state_to_channel_tensor(state: Tensor, sc: NsScenario) -> Tensor:
    """Inverse of channel_tensor_to_box_state."""
    n = sc.n
    expanded = []
    for (a, ap) in sc.parties:
        expanded.extend([a, ap])
    arr = state.entries.reshape(tuple(expanded))
    # axes currently (x1, o1, x2, o2, ...) -> (o1..on, x1..xn)
    perm = [2 * k + 1 for k in range(n)] + [2 * k for k in range(n)]
    arr2 = np.transpose(arr, perm)
    wires_out = tuple(cwire(f"O{k}", ap) for k, (a, ap) in enumerate(sc.parties))
    wires_in = tuple(cwire(f"I{k}", a) for k, (a, ap) in enumerate(sc.parties))
    return Tensor(wires_out, wires_in, arr2, state.mode)


def _ns_channel_tensor_ok(t: Tensor, sc: NsScenario, tol: float = TAU_MEM) -> bool:
    """t: classical channel tensor with one out axis and one in axis per
    party.  Stochasticity plus the marginal equalities."""
    if not _stochastic_tensor(t, tol):
        return False
    n = sc.n
    exact = t.mode == EXACT
    for k in range(n):
        marg = t.entries.sum(axis=k)  # drop party k's output axis
        # axes now: other outputs (n-1), then inputs (n); x_k axis is at
        # position (n-1) + k
        xk = (n - 1) + k
        first = np.take(marg, 0, axis=xk)
        for v in range(1, sc.parties[k][0]):
            s = np.take(marg, v, axis=xk)
            if exact:
                if not np.array_equal(s, first):
                    return False
            else:
                if np.max(np.abs(np.asarray(s - first, dtype=np.complex128))) > tol:
                    return False
    return True


def is_ns_channel(p: Process, sc: NsScenario, tol: float = TAU_MEM) -> bool:
    """No-signalling test for a classical channel over the scenario's
    parties.  Accepts a process whose wires are one-per-party, or a
    single fat wire on each side matching the total dimensions."""
    if p.theory != CLASSICAL_T:
        raise TheoryError("is_ns_channel needs a Classical process")
    t = _reshape_to_party_axes(p.tensor, sc)
    return _ns_channel_tensor_ok(t, sc, tol)


def _reshape_to_party_axes(t: Tensor, sc: NsScenario) -> Tensor:
    dims_out = [ap for (a, ap) in sc.parties]
    dims_in = [a for (a, ap) in sc.parties]
    want_out = int(np.prod(dims_out, dtype=np.int64))
    want_in = int(np.prod(dims_in, dtype=np.int64))
    if t.dim_out != want_out or t.dim_in != want_in:
        raise TheoryError("process shape inconsistent with scenario")
    # NOTE: multi-index over parties is enumerated here with the LAST
    # party fastest (C-order axes); scenario constructions in this module
    # always carry one axis per party so no flattening assumption leaks.
    arr = t.entries.reshape(tuple(dims_out) + tuple(dims_in))
    wires_out = tuple(cwire(f"O{k}", d) for k, d in enumerate(dims_out))
    wires_in = tuple(cwire(f"I{k}", d) for k, d in enumerate(dims_in))
    return Tensor(wires_out, wires_in, arr, t.mode)


_NS_CACHE: dict = {}


def ns_equality_rows(sc: NsScenario) -> tuple[np.ndarray, np.ndarray]:
    """Equality system (rows, rhs) cutting out the NS channels inside the
    nonnegative orthant.  Ambient order matches state-tensor ravel_cs
    (first party fastest, pair index o + a'*x)."""
    key = ("rows", sc.parties)
    if key in _NS_CACHE:
        return _NS_CACHE[key]
    n = sc.n
    pair_dims = [a * ap for (a, ap) in sc.parties]
    strides = _basis_strides(pair_dims)
    D = sc.ambient

    def flat(pairs):
        return sum(pairs[k] * strides[k] for k in range(n))

    rows: list[np.ndarray] = []
    rhs: list[Fraction] = []
    in_ranges = [range(a) for (a, ap) in sc.parties]
    out_ranges = [range(ap) for (a, ap) in sc.parties]
    # normalization per global input
    for xs in itertools.product(*in_ranges):
        row = linalg.zeros_vec(D)
        for os_ in itertools.product(*out_ranges):
            idx = flat([os_[k] + sc.parties[k][1] * xs[k] for k in range(n)])
            row[idx] = F1
        rows.append(row)
        rhs.append(F1)
    # marginal equalities per party
    for k in range(n):
        a_k = sc.parties[k][0]
        if a_k < 2:
            continue
        others = [j for j in range(n) if j != k]
        for xs_other in itertools.product(*[range(sc.parties[j][0]) for j in others]):
            for os_other in itertools.product(*[range(sc.parties[j][1]) for j in others]):
                for xk in range(1, a_k):
                    row = linalg.zeros_vec(D)
                    for ok in range(sc.parties[k][1]):
                        pairs = [0] * n
                        for t_, j in enumerate(others):
                            pairs[j] = os_other[t_] + sc.parties[j][1] * xs_other[t_]
                        pairs[k] = ok + sc.parties[k][1] * 0
                        row[flat(pairs)] += F1
                        pairs[k] = ok + sc.parties[k][1] * xk
                        row[flat(pairs)] -= F1
                    rows.append(row)
                    rhs.append(F0)
    A = np.vstack([r.reshape(1, -1) for r in rows]) if rows else np.empty((0, D), dtype=object)
    b = linalg.frac_vector(rhs)
    _NS_CACHE[key] = (A, b)
    return A, b


class NsFamily:
    """Physical NS channels (as pair-wire states) affinely spanning the
    scenario's NS set, with the uniform channel first."""

    def __init__(self, scenario: NsScenario, generators: list[Tensor],
                 local_dets: list[Tensor]):
        self.scenario = scenario
        self.generators = generators
        self.local_dets = local_dets
        self.uniform = generators[0]
        self._hull = None

    @property
    def point(self) -> np.ndarray:
        return self.uniform.ravel_cs()

    @property
    def basis(self) -> list[np.ndarray]:
        p = self.point
        return [g.ravel_cs() - p for g in self.generators[1:]]

    @property
    def hull(self) -> AffineHull:
        if self._hull is None:
            self._hull = AffineHull(self.point, self.basis)
        return self._hull


def _local_det_states(sc: NsScenario) -> list[Tensor]:
    out = []
    per_party = []
    for (a, ap) in sc.parties:
        fns = list(itertools.product(range(ap), repeat=a))
        per_party.append(fns)
    for combo in itertools.product(*per_party):
        t = zeros(sc.pair_wires(), ())
        ent = t.entries
        for xs in itertools.product(*[range(a) for (a, ap) in sc.parties]):
            idx = tuple(combo[k][xs[k]] + sc.parties[k][1] * xs[k] for k in range(sc.n))
            ent[idx] = F1
        out.append(t)
    return out


def uniform_ns_state(sc: NsScenario) -> Tensor:
    t = zeros(sc.pair_wires(), ())
    val = F1
    for (a, ap) in sc.parties:
        val /= ap
    t.entries.reshape(-1)[:] = [val] * t.entries.size
    return t


def _local_affine_states(a: int, ap: int) -> list[np.ndarray]:
    """Affine basis of one party's channel set as pair-axis vectors:
    the uniform channel first, then uniform + scaled det differences.
    Size a*(ap-1) + 1, every member stochastic."""
    D = a * ap
    u = np.empty(D, dtype=object)
    u[:] = [Fraction(1, ap)] * D
    fam = [u]
    eps = Fraction(1, 2 * ap)
    for x in range(a):
        for o in range(1, ap):
            v = u.copy()
            v[o + ap * x] += eps
            v[0 + ap * x] -= eps
            fam.append(v)
    return fam


_DET_CAP = 4096
_VERIFY_CAP = 144


def ns_affine_family(sc: NsScenario, cap: int | None = None) -> NsFamily:
    """Spanning family for the NS channels of a scenario.

    Generators are products of per-party affine families built from
    local deterministic channels (uniform = their average, directions =
    scaled det differences).  At small ambient dimension the span is
    verified against the equality system's kernel exactly and, if ever
    short, augmented with perturbations along the kernel; every
    generator is validated as an NS channel."""
    key = ("fam", sc.parties)
    if key in _NS_CACHE:
        return _NS_CACHE[key]
    cap = cap if cap is not None else int(os.environ.get("HOPS_MAX_AMBIENT_DIM", "4096"))
    if sc.ambient > cap:
        raise TheoryError(f"scenario ambient {sc.ambient} above cap {cap}")
    per_party = [_local_affine_states(a, ap) for (a, ap) in sc.parties]
    wires = sc.pair_wires()
    shape = tuple(a * ap for (a, ap) in sc.parties)
    gens = []
    for combo in itertools.product(*per_party):
        if not combo:
            arr = np.array(F1, dtype=object)
        else:
            arr = combo[0]
            for v in combo[1:]:
                arr = np.multiply.outer(arr, v)
        gens.append(Tensor(wires, (), arr.reshape(shape), EXACT))
    if sc.ambient <= _VERIFY_CAP:
        A, b = ns_equality_rows(sc)
        want_dim = sc.ambient - linalg.rank(A)
        hull = affine_span([g.ravel_cs() for g in gens])
        if hull.dim != want_dim:
            u = gens[0].ravel_cs()
            umin = min(x for x in u)
            extra = list(gens)
            for kv in linalg.nullspace(A):
                mx = max((abs(x) for x in kv), default=F0)
                if mx == 0:
                    continue
                extra.append(Tensor.from_ravel_cs(wires, (), u + kv * Fraction(umin, 2 * mx)))
            gens = extra
            hull = affine_span([g.ravel_cs() for g in gens])
            if hull.dim != want_dim:
                raise TheoryError("NS family construction failed to span the kernel")
    dets = _local_det_states(sc) if _det_count(sc) <= _DET_CAP else []
    fam = NsFamily(sc, gens, dets)
    for g in fam.generators + fam.local_dets:
        st = box_state_to_channel_tensor(g, sc)
        if not _ns_channel_tensor_ok(st, sc):
            raise TheoryError("generator failed its own NS validation")
    _NS_CACHE[key] = fam
    return fam


def _det_count(sc: NsScenario) -> int:
    total = 1
    for (a, ap) in sc.parties:
        total *= ap ** a
        if total > _DET_CAP + 1:
            return total
    return total


def _box_party_of_wire(w) -> tuple[int, int]:
    if w.kind == BOXWORLD:
        return (w.box_in, w.box_out)
    if w.kind == CLASSICAL:
        return (1, w.dim)
    raise TheoryError(f"wire {w.label!r} not legal in Boxworld")


def box_scenarios_of(p: Process) -> tuple[NsScenario, NsScenario]:
    ins = NsScenario(tuple(_box_party_of_wire(w) for w in p.tensor.wires_in))
    outs = NsScenario(tuple(_box_party_of_wire(w) for w in p.tensor.wires_out))
    return ins, outs


def as_pair_wires(t: Tensor) -> Tensor:
    """Reinterpret any classical wires as (1, d) pair wires so the tensor
    contracts against scenario-built states.  Axis dims are unchanged."""
    def conv(w):
        if w.kind == BOXWORLD:
            return w
        if w.kind == CLASSICAL:
            return bwire(w.label, 1, w.dim)
        raise TheoryError(f"wire {w.label!r} not legal in Boxworld")
    return Tensor(tuple(conv(w) for w in t.wires_out),
                  tuple(conv(w) for w in t.wires_in), t.entries, t.mode)


def _mirror_party(in_sc: NsScenario, out_sc: NsScenario) -> tuple[int, int]:
    best = (2, 2)
    mx = 0
    for (a, ap) in in_sc.parties + out_sc.parties:
        if a * ap > mx:
            mx = a * ap
            best = (max(a, 2), max(ap, 2))
    return best


def is_boxworld_deterministic(
    p: Process,
    in_scenario: NsScenario | None = None,
    out_scenario: NsScenario | None = None,
    env_bound: int = 1,
    _assert_nonneg_outputs: bool = True,
) -> bool:
    """NS-preservation sweep over the affine generators of the input NS
    family, with 0..env_bound mirrored environment parties riding along."""
    if p.theory != BOXWORLD_T:
        raise TheoryError("is_boxworld_deterministic needs a Boxworld process")
    if not entries_nonneg(p.tensor):
        raise TheoryError("negative entries: not a Boxworld process at all")
    auto_in, auto_out = box_scenarios_of(p)
    in_sc = in_scenario or auto_in
    out_sc = out_scenario or auto_out
    mirror = _mirror_party(in_sc, out_sc)
    pt = as_pair_wires(p.tensor)
    n_in = len(pt.wires_in)
    for e in range(env_bound + 1):
        env = [mirror] * e
        fam = ns_affine_family(in_sc.extend(env))
        out_full = out_sc.extend(env)
        for g in fam.generators:
            res = _apply_box(pt, g, n_in)
            if _assert_nonneg_outputs and not entries_nonneg(res):
                raise TheoryError("nonnegative process produced a negative output")
            chan = box_state_to_channel_tensor(res, out_full)
            if not _ns_channel_tensor_ok(chan, out_full):
                return False
    return True


def _apply_box(ptensor: Tensor, state: Tensor, n_sys: int) -> Tensor:
    """Contract a boxworld process onto the first n_sys pair axes of a
    state; remaining state axes (environment parties) ride along."""
    res = pair_contract(state, ptensor, [(k, k) for k in range(n_sys)])
    # result wires_out = ptensor.wires_out + leftover state wires; no ins
    return res


def vertex_check_boxworld(p: Process, in_sc: NsScenario, out_sc: NsScenario) -> bool:
    """Oracle: map every NS polytope vertex (enumerated exactly) through
    the process and test the output for no-signalling.  Binary-scale
    scenarios only (the enumeration cap applies)."""
    A, b = ns_equality_rows(in_sc)
    verts = linalg.vertex_enumerate(A, b, cap=max(24, in_sc.ambient))
    pt = as_pair_wires(p.tensor)
    n_in = len(pt.wires_in)
    for v in verts:
        g = Tensor.from_ravel_cs(in_sc.pair_wires(), (), v)
        res = _apply_box(pt, g, n_in)
        chan = box_state_to_channel_tensor(res, out_sc)
        if not _ns_channel_tensor_ok(chan, out_sc):
            return False
    return True


# --- deterministic generator families (affine sweeps) ----------------------


def stochastic_generators(d_in: int, d_out: int, mode=EXACT) -> list[Tensor]:
    """Uniform channel plus uniform+scaled directions; affinely spans the
    stochastic matrices and every member is stochastic."""
    w_in, w_out = cwire("A", d_in), cwire("B", d_out)
    u = zeros((w_out,), (w_in,), EXACT)
    u.entries[:, :] = Fraction(1, d_out)
    gens = [u]
    scale = Fraction(1, 2 * d_out)
    for c in range(d_in):
        for k in range(1, d_out):
            g = zeros((w_out,), (w_in,), EXACT)
            g.entries[:, :] = Fraction(1, d_out)
            g.entries[k, c] += scale
            g.entries[0, c] -= scale
            gens.append(g)
    if mode == FLOAT:
        gens = [g.to_float() for g in gens]
    return gens


def deterministic_function_channels(d_in: int, d_out: int) -> list[Tensor]:
    out = []
    for fn in itertools.product(range(d_out), repeat=d_in):
        t = zeros((cwire("B", d_out),), (cwire("A", d_in),))
        for x in range(d_in):
            t.entries[fn[x], x] = F1
        out.append(t)
    return out


def _hermitian_basis(N: int) -> list[np.ndarray]:
    basis = []
    for a in range(N):
        m = np.zeros((N, N), dtype=np.complex128)
        m[a, a] = 1.0
        basis.append(m)
    for a in range(N):
        for b_ in range(a + 1, N):
            m = np.zeros((N, N), dtype=np.complex128)
            m[a, b_] = 1.0
            m[b_, a] = 1.0
            basis.append(m)
            m = np.zeros((N, N), dtype=np.complex128)
            m[a, b_] = 1.0j
            m[b_, a] = -1.0j
            basis.append(m)
    return basis


def _symmetric_basis_exact(N: int) -> list[np.ndarray]:
    basis = []
    for a in range(N):
        for b_ in range(a, N):
            m = np.empty((N, N), dtype=object)
            m[:, :] = F0
            m[a, b_] = F1
            m[b_, a] = F1
            basis.append(m)
    return basis


def _choi_partial_trace_out(J, n_in: int, n_out: int, exact: bool):
    """Tr_out of a Choi with row index m + n_in*k."""
    if exact:
        R = np.empty((n_in, n_in), dtype=object)
        R[:, :] = F0
    else:
        R = np.zeros((n_in, n_in), dtype=np.complex128)
    for m in range(n_in):
        for p_ in range(n_in):
            s = F0 if exact else 0.0
            for k in range(n_out):
                s = s + J[m + n_in * k, p_ + n_in * k]
            R[m, p_] = s
    return R


def cptp_generators(in_dims: Sequence[int], out_dims: Sequence[int],
                    theory=QUANTUM_T) -> list[Process]:
    """Physical channels affinely spanning the CPTP set: the completely
    depolarising channel plus small perturbations along a (redundant)
    spanning set of trace-preserving directions."""
    in_dims, out_dims = list(in_dims), list(out_dims)
    n_in = int(np.prod(in_dims, dtype=np.int64)) if in_dims else 1
    n_out = int(np.prod(out_dims, dtype=np.int64)) if out_dims else 1
    N = n_in * n_out
    exact = theory == REAL_QUANTUM_T
    if exact:
        J0 = np.empty((N, N), dtype=object)
        J0[:, :] = F0
        for m in range(n_in):
            for k in range(n_out):
                J0[m + n_in * k, m + n_in * k] = Fraction(1, n_out)
        basis = _symmetric_basis_exact(N)
        eps = Fraction(1, 4 * n_out * N)
    else:
        J0 = np.zeros((N, N), dtype=np.complex128)
        for m in range(n_in):
            for k in range(n_out):
                J0[m + n_in * k, m + n_in * k] = 1.0 / n_out
        basis = _hermitian_basis(N)
        eps = 1.0 / (4 * n_out * N)
    gens = [quantum_from_choi(J0, in_dims, out_dims,
                              EXACT if exact else FLOAT, theory)]
    for B in basis:
        # project onto trace-preserving directions: subtract the lift of
        # the output-trace so Tr_out of the direction is zero
        R = _choi_partial_trace_out(B, n_in, n_out, exact)
        H = B.copy()
        for m in range(n_in):
            for p_ in range(n_in):
                if R[m, p_] == 0:
                    continue
                corr = R[m, p_] / n_out
                for k in range(n_out):
                    H[m + n_in * k, p_ + n_in * k] -= corr
        if exact:
            if all(x == 0 for x in H.reshape(-1)):
                continue
        else:
            if np.max(np.abs(H)) < 1e-14:
                continue
        gens.append(
            quantum_from_choi(J0 + eps * H, in_dims, out_dims,
                              EXACT if exact else FLOAT, theory)
        )
    return gens


# --- classical control ------------------------------------------------------


def classical_control(family: list[Process]) -> Process:
    """Stack a deterministic family into one process with a classical
    control wire appended as the last input; evaluating at point i
    recovers family[i] exactly."""
    if not family:
        raise TheoryError("empty control family")
    first = family[0]
    for m in family[1:]:
        if m.theory != first.theory or not m.tensor.same_type(first.tensor):
            raise TheoryError("heterogeneous control family")
    for m in family:
        if not is_deterministic(m):
            raise TheoryError("control family members must be deterministic")
    ctrl = cwire("ctrl", len(family))
    arr = np.stack([m.tensor.entries for m in family], axis=-1)
    t = Tensor(first.tensor.wires_out, first.tensor.wires_in + (ctrl,), arr, first.mode)
    return Process(t, first.theory)


def control_at(m: Process, i: int) -> Process:
    """Plug point state i into the last (control) input wire."""
    pos = len(m.tensor.wires_in) - 1
    st = point_state(m.tensor.wires_in[pos], i, m.mode)
    res = pair_contract(st, m.tensor, [(0, pos)])
    return Process(res, m.theory)


# --- determinism dispatch ---------------------------------------------------


def is_deterministic(p: Process, env_bound: int = 1, tol: float = TAU_MEM) -> bool:
    if p.theory == CLASSICAL_T:
        return _stochastic_tensor(p.tensor, tol)
    if p.theory in (QUANTUM_T, REAL_QUANTUM_T):
        return is_cptp(p, tol)
    return is_boxworld_deterministic(p, env_bound=env_bound)
