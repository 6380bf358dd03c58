"""Parameterised instruments and channel-state duality witnesses.

A parameterised instrument is one process A (x) X -> A' (x) Y whose last
input wire X is a classical setting and whose last output wire Y is a
classical outcome.  Components are read off by plugging a point state
into X and a point effect onto Y; for every setting the outcome-summed
branch must be a deterministic process of the theory.

The duality witnesses package, per theory, an instrument containing the
cup (respectively cap) as a component up to a scalar, together with the
raw cup/cap tensors that satisfy the snake identity on the nose:
cup.entries @ cap.entries = identity, where the cup carries wires
(W, Wdual) and the cap consumes (Wdual, W).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .tensor import (
    EXACT,
    FLOAT,
    Tensor,
    TensorError,
    apply_effect,
    apply_state,
    bwire,
    cwire,
    point_effect,
    point_state,
    qwire,
    trace_out,
    zeros,
)
from . import theories as th
from .theories import Process, TheoryError

F0 = Fraction(0)
F1 = Fraction(1)


@dataclass(frozen=True)
class ParamInstrument:
    process: Process

    def __post_init__(self):
        t = self.process.tensor
        if not t.wires_in or t.wires_in[-1].kind != "classical":
            raise TheoryError("last input wire must be the classical setting")
        if not t.wires_out or t.wires_out[-1].kind != "classical":
            raise TheoryError("last output wire must be the classical outcome")

    @property
    def n_settings(self) -> int:
        return self.process.tensor.wires_in[-1].dim

    @property
    def n_outcomes(self) -> int:
        return self.process.tensor.wires_out[-1].dim

    @property
    def system_wires_in(self):
        return self.process.tensor.wires_in[:-1]

    @property
    def system_wires_out(self):
        return self.process.tensor.wires_out[:-1]


def wrap_channel(p: Process, n_settings: int = 1, label: str = "w") -> ParamInstrument:
    """Singleton setting and outcome wires around a plain process."""
    t = p.tensor
    mode = t.mode
    arr = t.entries.reshape(t.entries.shape + (1, 1))
    # new axes: outcome (size 1) must sit after the existing outputs,
    # setting (size 1) after the existing inputs
    no = len(t.wires_out)
    ni = len(t.wires_in)
    perm = list(range(no)) + [no + ni] + list(range(no, no + ni)) + [no + ni + 1]
    arr = np.transpose(arr, perm)
    if n_settings != 1:
        arr = np.concatenate([arr] * n_settings, axis=-1)
    wires_out = t.wires_out + (cwire(f"{label}Y", 1),)
    wires_in = t.wires_in + (cwire(f"{label}X", n_settings),)
    return ParamInstrument(Process(Tensor(wires_out, wires_in, arr, mode), p.theory))


def component(m: ParamInstrument, x: int, y: int) -> Process:
    if not (0 <= x < m.n_settings and 0 <= y < m.n_outcomes):
        raise TheoryError("setting or outcome index out of range")
    t = m.process.tensor
    mode = t.mode
    t1 = apply_state(t, [len(t.wires_in) - 1], point_state(t.wires_in[-1], x, mode))
    t2 = apply_effect(t1, [len(t1.wires_out) - 1], point_effect(t1.wires_out[-1], y, mode))
    return Process(t2, m.process.theory)


def outcome_sum(m: ParamInstrument, x: int) -> Process:
    t = m.process.tensor
    mode = t.mode
    t1 = apply_state(t, [len(t.wires_in) - 1], point_state(t.wires_in[-1], x, mode))
    t2 = trace_out(t1, [len(t1.wires_out) - 1])
    return Process(t2, m.process.theory)


def is_param_instrument(m: ParamInstrument, env_bound: int = 1, tol: float = 1e-9) -> bool:
    p = m.process
    if p.theory in (th.CLASSICAL_T, th.BOXWORLD_T):
        if not th.is_nonneg(p, 0.0 if p.mode == EXACT else tol):
            return False
    for x in range(m.n_settings):
        if p.theory in (th.QUANTUM_T, th.REAL_QUANTUM_T):
            for y in range(m.n_outcomes):
                if not th.is_cp(component(m, x, y)):
                    return False
        s = outcome_sum(m, x)
        if p.theory == th.BOXWORLD_T:
            if not th.is_boxworld_deterministic(s, env_bound=env_bound):
                return False
        elif not th.is_deterministic(s, tol=tol):
            return False
    return True


# --- duality witnesses ------------------------------------------------------


@dataclass(frozen=True)
class DualityWitness:
    theory: str
    cup: Tensor              # state with wires (W, Wdual)
    cap: Tensor              # effect consuming (Wdual, W)
    cup_instrument: ParamInstrument
    cup_outcome: int
    cup_scalar: Fraction
    cap_instrument: ParamInstrument
    cap_outcome: int
    cap_scalar: Fraction


def _scaled(t: Tensor, s) -> Tensor:
    return Tensor(t.wires_out, t.wires_in, t.entries * s, t.mode)


def snake_residual(w: DualityWitness) -> Tensor:
    """cup.entries @ cap.entries minus the identity matrix."""
    prod = np.dot(w.cup.entries, w.cap.entries)
    d = prod.shape[0]
    if w.cup.mode == EXACT:
        eye = np.empty((d, d), dtype=object)
        eye[:, :] = F0
        for i in range(d):
            eye[i, i] = F1
    else:
        eye = np.eye(d)
    wire = w.cup.wires_out[0]
    return Tensor((wire,), (wire,), prod - eye, w.cup.mode)


def verify_duality_witness(w: DualityWitness, env_bound: int = 1) -> dict:
    """Mechanical check of every witness invariant; exact where the mode
    is exact."""
    snake_ok = all(x == 0 for x in snake_residual(w).entries.reshape(-1)) \
        if w.cup.mode == EXACT else snake_residual(w).equal(
            _scaled(snake_residual(w), 0), 1e-9)
    cup_c = component(w.cup_instrument, 0, w.cup_outcome).tensor
    cap_c = component(w.cap_instrument, 0, w.cap_outcome).tensor
    cup_ok = cup_c.equal(_scaled(w.cup, w.cup_scalar))
    cap_ok = cap_c.equal(_scaled(w.cap, w.cap_scalar))
    inst_ok = (is_param_instrument(w.cup_instrument, env_bound)
               and is_param_instrument(w.cap_instrument, env_bound))
    return {
        "snake_ok": bool(snake_ok),
        "cup_component_ok": bool(cup_ok),
        "cap_component_ok": bool(cap_ok),
        "instruments_ok": bool(inst_ok),
        "ok": bool(snake_ok and cup_ok and cap_ok and inst_ok),
    }


def classical_duality(d: int) -> DualityWitness:
    if d < 1:
        raise TheoryError("dimension must be >= 1")
    w = cwire("A", d)
    cup = zeros((w, w), ())
    for i in range(d):
        cup.entries[i, i] = F1
    cap = zeros((), (w, w))
    for i in range(d):
        cap.entries[i, i] = F1
    # cup instrument: deterministic preparation of (1/d) p_xy
    cup_i = zeros((w, w, cwire("Y", 1)), (cwire("X", 1),))
    for i in range(d):
        cup_i.entries[i, i, 0, 0] = Fraction(1, d)
    # cap instrument: two-outcome measurement, hit = perfectly correlated
    cap_i = zeros((cwire("Z", 2),), (w, w, cwire("X", 1)))
    for i in range(d):
        for j in range(d):
            cap_i.entries[0 if i == j else 1, i, j, 0] = F1
    return DualityWitness(
        th.CLASSICAL_T, cup, cap,
        ParamInstrument(Process(cup_i, th.CLASSICAL_T)), 0, Fraction(1, d),
        ParamInstrument(Process(cap_i, th.CLASSICAL_T)), 0, F1,
    )


def _quantum_duality(n: int, theory: str) -> DualityWitness:
    if n < 2:
        raise TheoryError("dimension must be >= 2")
    w = qwire("A", n)
    nn = n * n

    def pattern(i, j):
        # doubled indices i = k + n*l, j = k' + n*l'
        k, l = i % n, i // n
        kp, lp = j % n, j // n
        return k == kp and l == lp

    cup = zeros((w, w), ())
    cap = zeros((), (w, w))
    for i in range(nn):
        for j in range(nn):
            if pattern(i, j):
                cup.entries[i, j] = F1
                cap.entries[i, j] = F1
    # cup instrument: prepare the normalised maximally entangled state
    cup_i = zeros((w, w, cwire("Y", 1)), (cwire("X", 1),))
    cup_i.entries[:, :, 0, 0] = cup.entries * Fraction(1, n)
    # cap instrument: PVM {P, 1 - P}; the hit effect is (1/n) * cap and
    # the miss effect completes it to the trace
    cap_i = zeros((cwire("Z", 2),), (w, w, cwire("X", 1)))
    for i in range(nn):
        for j in range(nn):
            hit = Fraction(1, n) if pattern(i, j) else F0
            tr = F1 if (i % n == i // n and j % n == j // n) else F0
            cap_i.entries[0, i, j, 0] = hit
            cap_i.entries[1, i, j, 0] = tr - hit
    if theory == th.REAL_QUANTUM_T:
        for v in cap_i.entries.reshape(-1):
            if not isinstance(v, Fraction):
                raise TheoryError("real-quantum witness produced a non-rational entry")
    return DualityWitness(
        theory, cup, cap,
        ParamInstrument(Process(cup_i, theory)), 0, Fraction(1, n),
        ParamInstrument(Process(cap_i, theory)), 0, Fraction(1, n),
    )


def quantum_duality(n: int) -> DualityWitness:
    return _quantum_duality(n, th.QUANTUM_T)


def real_quantum_duality(n: int) -> DualityWitness:
    return _quantum_duality(n, th.REAL_QUANTUM_T)


def boxworld_duality(a: int) -> DualityWitness:
    """Square pair object (a, a); the mixing weight is 1/a^2 so the cup
    instrument's outcome sum is exactly the completely depolarising
    channel."""
    if a < 2:
        raise TheoryError("dimension must be >= 2")
    W = bwire("A", a, a)
    Wd = bwire("Astar", a, a)
    p = Fraction(1, a * a)

    def swap_pattern(i, j):
        # i = o + a*x on W, j = o' + a*x' on Wdual: swap routes o = x', o' = x
        o, x = i % a, i // a
        op, xp = j % a, j // a
        return o == xp and op == x

    cup = zeros((W, Wd), ())
    cap = zeros((), (Wd, W))
    for i in range(a * a):
        for j in range(a * a):
            if swap_pattern(i, j):
                cup.entries[i, j] = F1
            # cap consumes (Wdual, W): loop condition x2 = o1, x1 = o2
            o1, x1 = i % a, i // a
            o2, x2 = j % a, j // a
            if x2 == o1 and x1 == o2:
                cap.entries[i, j] = F1
    cup_i = zeros((W, Wd, cwire("Y", 2)), (cwire("X", 1),))
    cap_i = zeros((cwire("Z", 2),), (Wd, W, cwire("X", 1)))
    for i in range(a * a):
        for j in range(a * a):
            cup_i.entries[i, j, 0, 0] = p * cup.entries[i, j]
            cup_i.entries[i, j, 1, 0] = p - p * cup.entries[i, j]
            cap_i.entries[0, i, j, 0] = p * cap.entries[i, j]
            cap_i.entries[1, i, j, 0] = p - p * cap.entries[i, j]
    return DualityWitness(
        th.BOXWORLD_T, cup, cap,
        ParamInstrument(Process(cup_i, th.BOXWORLD_T)), 0, p,
        ParamInstrument(Process(cap_i, th.BOXWORLD_T)), 0, p,
    )


def duality_witness(theory: str, dim: int) -> DualityWitness:
    if theory == th.CLASSICAL_T:
        return classical_duality(dim)
    if theory == th.QUANTUM_T:
        return quantum_duality(dim)
    if theory == th.REAL_QUANTUM_T:
        return real_quantum_duality(dim)
    if theory == th.BOXWORLD_T:
        return boxworld_duality(dim)
    raise TheoryError(f"unknown theory {theory!r}")


# --- the appendix construction ---------------------------------------------


def _relabel_outcomes(m: ParamInstrument, y: int) -> Process:
    """Keep outcome y, send every other outcome to the reference point
    y0 (the smallest index differing from y)."""
    t = m.process.tensor
    ny = m.n_outcomes
    oy = len(t.wires_out) - 1
    if ny == 1:
        return m.process
    y0 = 0 if y != 0 else 1
    if t.mode == EXACT:
        arr = np.empty(t.entries.shape, dtype=object)
        arr.reshape(-1)[:] = [F0] * arr.size
    else:
        arr = np.zeros(t.entries.shape, dtype=t.entries.dtype)
    idx_y = [slice(None)] * t.entries.ndim
    idx_y[oy] = y
    arr[tuple(idx_y)] = t.entries[tuple(idx_y)]
    idx_y0 = [slice(None)] * t.entries.ndim
    idx_y0[oy] = y0
    rest = [z for z in range(ny) if z != y]
    acc = None
    for z in rest:
        idx_z = [slice(None)] * t.entries.ndim
        idx_z[oy] = z
        sl = t.entries[tuple(idx_z)]
        acc = sl if acc is None else acc + sl
    arr[tuple(idx_y0)] = acc
    return Process(Tensor(t.wires_out, t.wires_in, arr, t.mode), m.process.theory)


def sigma_construction(m: ParamInstrument, m2: ParamInstrument,
                       x: int, x2: int, y: int, y2: int) -> tuple[Process, Process]:
    """The deterministic channels encoding 'outcome was y' for each
    instrument; requires the shared-component hypothesis."""
    c1 = component(m, x, y)
    c2 = component(m2, x2, y2)
    if not c1.tensor.same_type(c2.tensor) or not c1.tensor.equal(c2.tensor):
        raise TheoryError("hypothesis violated: designated components differ")
    return _relabel_outcomes(m, y), _relabel_outcomes(m2, y2)


def _two_point_form(sigma: Process, x: int, y: int) -> Tensor:
    """Plug setting x, then collapse the outcome wire to {hit, miss}."""
    t = sigma.tensor
    mode = t.mode
    t1 = apply_state(t, [len(t.wires_in) - 1], point_state(t.wires_in[-1], x, mode))
    oy = len(t1.wires_out) - 1
    ny = t1.wires_out[oy].dim
    hit = np.take(t1.entries, y, axis=oy)
    miss = None
    for z in range(ny):
        if z == y:
            continue
        sl = np.take(t1.entries, z, axis=oy)
        miss = sl if miss is None else miss + sl
    if miss is None:
        if mode == EXACT:
            miss = np.empty(hit.shape, dtype=object)
            miss.reshape(-1)[:] = [F0] * miss.size
        else:
            miss = np.zeros_like(hit)
    arr = np.stack([hit, miss], axis=oy)
    wires_out = t1.wires_out[:oy] + (cwire("hit", 2),) + t1.wires_out[oy + 1:]
    return Tensor(wires_out, t1.wires_in, arr, mode)


def sigma_report(m: ParamInstrument, m2: ParamInstrument,
                 x: int, x2: int, y: int, y2: int) -> dict:
    """Key properties of the construction plus the difference identity,
    all as exact checks (or within 1e-9 in float mode)."""
    s1, s2 = sigma_construction(m, m2, x, x2, y, y2)
    c = component(m, x, y)
    i1 = ParamInstrument(s1)
    i2 = ParamInstrument(s2)
    kp1 = component(i1, x, y).tensor.equal(c.tensor, 0.0 if c.mode == EXACT else 1e-9)
    kp2 = component(i2, x2, y2).tensor.equal(c.tensor, 0.0 if c.mode == EXACT else 1e-9)
    det = is_param_instrument(i1) and is_param_instrument(i2)
    d1 = _two_point_form(s1, x, y)
    d2 = _two_point_form(s2, x2, y2)
    # difference identity: the two-point forms differ only in the miss
    # branch, by exactly (outcome-sum difference)
    t1 = outcome_sum(m, x).tensor
    t2 = outcome_sum(m2, x2).tensor
    oy = len(d1.wires_out) - 1
    lhs = d1.entries - d2.entries
    if d1.mode == EXACT:
        want = np.empty(lhs.shape, dtype=object)
        want.reshape(-1)[:] = [F0] * want.size
    else:
        want = np.zeros(lhs.shape, dtype=lhs.dtype)
    idx = [slice(None)] * lhs.ndim
    idx[oy] = 1
    want[tuple(idx)] = t1.entries - t2.entries
    resid = Tensor(d1.wires_out, d1.wires_in, lhs - want, d1.mode)
    zero = all(v == 0 for v in resid.entries.reshape(-1)) if resid.mode == EXACT \
        else bool(np.max(np.abs(np.asarray(resid.to_float().entries))) <= 1e-9)
    return {
        "hit_reproduces_component": bool(kp1),
        "hit_reproduces_component_second": bool(kp2),
        "sigmas_deterministic": bool(det),
        "difference_identity_zero": bool(zero),
        "ok": bool(kp1 and kp2 and det and zero),
    }
