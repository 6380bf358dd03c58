"""Dense tensors over exact rationals or floats, with named typed wires.

Conventions, fixed here once and reused by every other module:

* Multi-index flattening is column-stacking: the FIRST index in listed
  order varies fastest.  Flattening a matrix M this way gives the entry
  order (M00, M10, M01, M11).
* A tensor has one array axis per wire, ordered (outputs..., inputs...).
* Quantum wires carry doubled indices: a wire of logical dimension n has
  axis dimension n*n, and the flat axis index i + n*j stands for the
  matrix unit |i><j|.  A channel's tensor therefore acts on vectorized
  density matrices, with vec(rho)[i + n*j] = rho[i, j] (columns stacked).
* Boxworld wires are pairs (a, a'): axis dimension a*a', flat index
  o + a'*i standing for the channel entry M[o, i] of a stochastic
  a' x a matrix (columns stacked again).

Exact mode stores ``fractions.Fraction`` entries in object arrays; float
mode stores float64 or complex128.  No NaN or Inf is ever admitted.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

CLASSICAL = "classical"
QUANTUM = "quantum"
BOXWORLD = "boxworld-pair"

EXACT = "exact"
FLOAT = "float"

F0 = Fraction(0)
F1 = Fraction(1)


class TensorError(ValueError):
    """Raised on wire/shape/mode violations."""


@dataclass(frozen=True)
class Wire:
    """A typed index: classical (dim d), quantum (logical dim n, axis dim
    n*n) or a boxworld pair (a -> a', axis dim a*a')."""

    label: str
    dim: int
    kind: str = CLASSICAL
    box_in: int | None = None
    box_out: int | None = None

    def __post_init__(self):
        if self.dim < 1:
            raise TensorError(f"wire {self.label!r}: dim must be >= 1")
        if self.kind not in (CLASSICAL, QUANTUM, BOXWORLD):
            raise TensorError(f"wire {self.label!r}: unknown kind {self.kind!r}")
        if self.kind == BOXWORLD:
            if not self.box_in or not self.box_out or self.box_in * self.box_out != self.dim:
                raise TensorError(
                    f"wire {self.label!r}: boxworld pair needs dim == a * a'"
                )
        elif self.box_in is not None or self.box_out is not None:
            raise TensorError(f"wire {self.label!r}: box dims only on boxworld wires")

    @property
    def axis_dim(self) -> int:
        """Dimension of the tensor axis carrying this wire."""
        if self.kind == QUANTUM:
            return self.dim * self.dim
        return self.dim

    def congruent(self, other: "Wire") -> bool:
        """Same type up to relabeling (composability test)."""
        return (
            self.kind == other.kind
            and self.dim == other.dim
            and self.box_in == other.box_in
            and self.box_out == other.box_out
        )


def cwire(label: str, dim: int) -> Wire:
    return Wire(label, dim, CLASSICAL)


def qwire(label: str, dim: int) -> Wire:
    return Wire(label, dim, QUANTUM)


def bwire(label: str, a: int, a_prime: int) -> Wire:
    return Wire(label, a * a_prime, BOXWORLD, box_in=a, box_out=a_prime)


def _as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    if isinstance(x, str):
        return Fraction(x)
    raise TensorError(f"cannot coerce {x!r} to an exact rational")


def coerce_entries(entries, mode: str) -> np.ndarray:
    """Return an array in canonical dtype for the mode."""
    if mode == EXACT:
        arr = np.array(entries, dtype=object)
        flat = arr.reshape(-1)
        for idx in range(flat.size):
            flat[idx] = _as_fraction(flat[idx])
        return arr
    arr = np.asarray(entries)
    if np.iscomplexobj(arr):
        arr = arr.astype(np.complex128)
    else:
        arr = arr.astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise TensorError("float tensors must be finite (no NaN/Inf)")
    return arr


class Tensor:
    """Dense array with typed output and input wires.

    ``entries`` has one axis per wire: first the output wires in order,
    then the input wires in order, each axis of size ``wire.axis_dim``.
    """

    __slots__ = ("wires_out", "wires_in", "entries", "mode")

    def __init__(
        self,
        wires_out: Sequence[Wire],
        wires_in: Sequence[Wire],
        entries,
        mode: str = EXACT,
    ):
        if mode not in (EXACT, FLOAT):
            raise TensorError(f"unknown mode {mode!r}")
        wires_out = tuple(wires_out)
        wires_in = tuple(wires_in)
        shape = tuple(w.axis_dim for w in wires_out) + tuple(w.axis_dim for w in wires_in)
        arr = coerce_entries(entries, mode)
        if arr.shape != shape:
            want = int(np.prod(shape, dtype=np.int64)) if shape else 1
            if arr.size != want:
                raise TensorError(f"entry shape {arr.shape} does not match wires {shape}")
            arr = arr.reshape(shape)
        object.__setattr__(self, "wires_out", wires_out)
        object.__setattr__(self, "wires_in", wires_in)
        object.__setattr__(self, "entries", arr)
        object.__setattr__(self, "mode", mode)

    def __setattr__(self, *a):
        raise TensorError("Tensor is immutable")

    # --- basic views -------------------------------------------------

    @property
    def dim_out(self) -> int:
        return int(np.prod([w.axis_dim for w in self.wires_out], dtype=np.int64)) if self.wires_out else 1

    @property
    def dim_in(self) -> int:
        return int(np.prod([w.axis_dim for w in self.wires_in], dtype=np.int64)) if self.wires_in else 1

    def as_matrix(self) -> np.ndarray:
        """2-D view (dim_out, dim_in); multi-indices flattened C-order
        (internal layout only, file format uses column-stacking)."""
        return self.entries.reshape(self.dim_out, self.dim_in)

    def ravel_cs(self) -> np.ndarray:
        """1-D column-stacking flattening (first listed axis fastest)."""
        return self.entries.reshape(-1, order="F")

    @classmethod
    def from_ravel_cs(cls, wires_out, wires_in, flat, mode=EXACT) -> "Tensor":
        wires_out = tuple(wires_out)
        wires_in = tuple(wires_in)
        shape = tuple(w.axis_dim for w in wires_out) + tuple(w.axis_dim for w in wires_in)
        arr = coerce_entries(flat, mode).reshape(shape, order="F")
        return cls(wires_out, wires_in, arr, mode)

    def __repr__(self):
        o = ",".join(f"{w.label}:{w.axis_dim}" for w in self.wires_out)
        i = ",".join(f"{w.label}:{w.axis_dim}" for w in self.wires_in)
        return f"Tensor([{o}] <- [{i}], mode={self.mode})"

    # --- equality ----------------------------------------------------

    def same_type(self, other: "Tensor") -> bool:
        return (
            len(self.wires_out) == len(other.wires_out)
            and len(self.wires_in) == len(other.wires_in)
            and all(a.congruent(b) for a, b in zip(self.wires_out, other.wires_out))
            and all(a.congruent(b) for a, b in zip(self.wires_in, other.wires_in))
        )

    def equal(self, other: "Tensor", tol: float = 0.0) -> bool:
        """Entrywise equality; exact when both exact and tol == 0."""
        if not self.same_type(other):
            return False
        if self.mode == EXACT and other.mode == EXACT and tol == 0.0:
            return bool(np.all(self.entries == other.entries))
        a = np.asarray(self.to_float().entries, dtype=np.complex128)
        b = np.asarray(other.to_float().entries, dtype=np.complex128)
        return bool(np.max(np.abs(a - b)) <= tol) if a.size else True

    def max_abs_diff(self, other: "Tensor") -> float:
        a = np.asarray(self.to_float().entries, dtype=np.complex128)
        b = np.asarray(other.to_float().entries, dtype=np.complex128)
        return float(np.max(np.abs(a - b))) if a.size else 0.0

    def to_float(self) -> "Tensor":
        if self.mode == FLOAT:
            return self
        arr = np.array([float(x) for x in self.entries.reshape(-1)], dtype=np.float64)
        return Tensor(self.wires_out, self.wires_in, arr.reshape(self.entries.shape), FLOAT)


def zeros(wires_out, wires_in, mode=EXACT) -> Tensor:
    shape = tuple(w.axis_dim for w in wires_out) + tuple(w.axis_dim for w in wires_in)
    if mode == EXACT:
        arr = np.empty(shape, dtype=object)
        arr.reshape(-1)[:] = [F0] * arr.size
    else:
        arr = np.zeros(shape, dtype=np.float64)
    return Tensor(wires_out, wires_in, arr, mode)


def scalar_tensor(value, mode=EXACT) -> Tensor:
    return Tensor((), (), np.array(value if mode == FLOAT else _as_fraction(value),
                                   dtype=None if mode == FLOAT else object), mode)


def identity_tensor(wires: Sequence[Wire], mode=EXACT) -> Tensor:
    """Identity process on the given wires (output wires = input wires)."""
    wires = tuple(wires)
    d = int(np.prod([w.axis_dim for w in wires], dtype=np.int64)) if wires else 1
    if mode == EXACT:
        mat = np.empty((d, d), dtype=object)
        mat.reshape(-1)[:] = [F0] * (d * d)
        for k in range(d):
            mat[k, k] = F1
    else:
        mat = np.eye(d)
    return Tensor(wires, wires, mat.reshape(tuple(w.axis_dim for w in wires) * 2), mode)


def _join_mode(a: Tensor, b: Tensor) -> str:
    if a.mode != b.mode:
        raise TensorError("mode mismatch (exact vs float)")
    return a.mode


def kron(t1: Tensor, t2: Tensor) -> Tensor:
    """Parallel composition; wires concatenate (t1 then t2)."""
    mode = _join_mode(t1, t2)
    n1o, n1i = len(t1.wires_out), len(t1.wires_in)
    n2o, n2i = len(t2.wires_out), len(t2.wires_in)
    prod = np.tensordot(t1.entries, t2.entries, axes=0)
    # axes now (t1 out, t1 in, t2 out, t2 in) -> (t1 out, t2 out, t1 in, t2 in)
    perm = (
        list(range(n1o))
        + [n1o + n1i + k for k in range(n2o)]
        + [n1o + k for k in range(n1i)]
        + [n1o + n1i + n2o + k for k in range(n2i)]
    )
    arr = np.transpose(prod, perm) if perm else prod
    return Tensor(t1.wires_out + t2.wires_out, t1.wires_in + t2.wires_in, arr, mode)


def compose(g: Tensor, f: Tensor) -> Tensor:
    """Sequential composition g after f (matrix product over the shared
    multi-index).  f's output wires must be congruent with g's inputs."""
    mode = _join_mode(g, f)
    if len(f.wires_out) != len(g.wires_in) or not all(
        a.congruent(b) for a, b in zip(f.wires_out, g.wires_in)
    ):
        raise TensorError(
            f"cannot compose: f outputs {[w.label for w in f.wires_out]} vs "
            f"g inputs {[w.label for w in g.wires_in]}"
        )
    mat = np.dot(g.as_matrix(), f.as_matrix())
    shape = tuple(w.axis_dim for w in g.wires_out) + tuple(w.axis_dim for w in f.wires_in)
    return Tensor(g.wires_out, f.wires_in, mat.reshape(shape), mode)


def permute_wires(t: Tensor, perm_out: Sequence[int], perm_in: Sequence[int]) -> Tensor:
    """Reorder wires: new output i is old output perm_out[i], same for inputs."""
    no, ni = len(t.wires_out), len(t.wires_in)
    if sorted(perm_out) != list(range(no)) or sorted(perm_in) != list(range(ni)):
        raise TensorError("invalid permutation")
    axes = [perm_out[i] for i in range(no)] + [no + perm_in[j] for j in range(ni)]
    arr = np.transpose(t.entries, axes) if axes else t.entries
    return Tensor(
        tuple(t.wires_out[k] for k in perm_out),
        tuple(t.wires_in[k] for k in perm_in),
        arr,
        t.mode,
    )


def swap_tensor(w1: Wire, w2: Wire, mode=EXACT) -> Tensor:
    """The symmetry w1 (x) w2 -> w2 (x) w1."""
    ident = identity_tensor((w1, w2), mode)
    return permute_wires(ident, [1, 0], [0, 1])


def vectorize(t: Tensor) -> Tensor:
    """Column-stacking flattening into a single classical-wire column.

    The combined index runs over (out multi-index, in multi-index) with
    the first listed index fastest; for a plain matrix this is the usual
    stacking of columns."""
    d = t.dim_out * t.dim_in
    flat = t.ravel_cs().reshape(d, 1) if d else t.ravel_cs()
    label = "vec(" + ",".join(w.label for w in t.wires_out + t.wires_in) + ")"
    return Tensor((Wire(label, d, CLASSICAL),), (), flat.reshape(d), t.mode)


def devectorize(v: Tensor, wires_out: Sequence[Wire], wires_in: Sequence[Wire]) -> Tensor:
    """Inverse of vectorize for the given wire lists."""
    wires_out = tuple(wires_out)
    wires_in = tuple(wires_in)
    want = int(np.prod([w.axis_dim for w in wires_out + wires_in], dtype=np.int64)) if (wires_out or wires_in) else 1
    flat = v.entries.reshape(-1, order="F")
    if flat.size != want:
        raise TensorError(f"cannot devectorize length {flat.size} into shape of total {want}")
    return Tensor.from_ravel_cs(wires_out, wires_in, flat, v.mode)


def pair_contract(
    a: Tensor,
    b: Tensor,
    pairs: Iterable[tuple[int, int]],
) -> Tensor:
    """Feed selected outputs of ``a`` into selected inputs of ``b``.

    ``pairs`` lists (a_output_position, b_input_position).  Result wires:
    outputs = b outputs + a's unconsumed outputs (original order);
    inputs  = a inputs + b's unconsumed inputs (original order).
    """
    mode = _join_mode(a, b)
    pairs = list(pairs)
    a_axes = [p[0] for p in pairs]
    b_axes = [len(b.wires_out) + p[1] for p in pairs]
    for (ao, bi) in pairs:
        if not a.wires_out[ao].congruent(b.wires_in[bi]):
            raise TensorError(
                f"plug mismatch: {a.wires_out[ao].label} vs {b.wires_in[bi].label}"
            )
    arr = np.tensordot(b.entries, a.entries, axes=(b_axes, a_axes))
    # arr axes: b.out, b.in (unconsumed), a.out (unconsumed), a.in
    nbo = len(b.wires_out)
    b_in_left = [j for j in range(len(b.wires_in)) if nbo + j not in b_axes]
    a_out_left = [i for i in range(len(a.wires_out)) if i not in a_axes]
    nbi, nao = len(b_in_left), len(a_out_left)
    nai = len(a.wires_in)
    # target order: b.out, a_out_left, a.in, b_in_left
    perm = (
        list(range(nbo))
        + [nbo + nbi + k for k in range(nao)]
        + [nbo + nbi + nao + k for k in range(nai)]
        + [nbo + k for k in range(nbi)]
    )
    arr = np.transpose(arr, perm) if perm else arr
    wires_out = tuple(b.wires_out) + tuple(a.wires_out[i] for i in a_out_left)
    wires_in = tuple(a.wires_in) + tuple(b.wires_in[j] for j in b_in_left)
    return Tensor(wires_out, wires_in, arr, mode)


def apply_state(t: Tensor, positions: Sequence[int], state: Tensor) -> Tensor:
    """Contract ``state`` (no inputs) into the given input positions of t."""
    return pair_contract(state, t, [(k, p) for k, p in enumerate(positions)])


def apply_effect(t: Tensor, positions: Sequence[int], effect: Tensor) -> Tensor:
    """Contract ``effect`` (no outputs) onto the given output positions of t."""
    return pair_contract(t, effect, [(p, k) for k, p in enumerate(positions)])


def point_state(wire: Wire, index: int, mode=EXACT) -> Tensor:
    """Classical point distribution |index) on a classical wire."""
    if wire.kind != CLASSICAL:
        raise TensorError("point states live on classical wires")
    col = [F0] * wire.dim if mode == EXACT else np.zeros(wire.dim)
    col[index] = F1 if mode == EXACT else 1.0
    return Tensor((wire,), (), np.array(col, dtype=object if mode == EXACT else np.float64), mode)


def point_effect(wire: Wire, index: int, mode=EXACT) -> Tensor:
    """Classical point effect (index| on a classical wire."""
    p = point_state(wire, index, mode)
    return Tensor((), (wire,), p.entries, mode)


def discard_effect(wire: Wire, mode=EXACT) -> Tensor:
    """The deterministic 'throw away' effect of each wire kind.

    classical: all-ones row; quantum: trace, i.e. vec(I) as a row;
    boxworld (a, a'): uniform row with entries 1/a (pairs each of the a
    columns of a stochastic matrix summing to one)."""
    d = wire.axis_dim
    if mode == EXACT:
        row = np.empty(d, dtype=object)
        if wire.kind == CLASSICAL:
            row[:] = [F1] * d
        elif wire.kind == QUANTUM:
            n = wire.dim
            row[:] = [F0] * d
            for i in range(n):
                row[i + n * i] = F1
        else:
            row[:] = [Fraction(1, wire.box_in)] * d
    else:
        if wire.kind == CLASSICAL:
            row = np.ones(d)
        elif wire.kind == QUANTUM:
            n = wire.dim
            row = np.zeros(d)
            for i in range(n):
                row[i + n * i] = 1.0
        else:
            row = np.full(d, 1.0 / wire.box_in)
    return Tensor((), (wire,), row, mode)


def trace_out(t: Tensor, out_positions: Sequence[int]) -> Tensor:
    """Discard the listed output wires (kind-appropriate discard)."""
    out_positions = sorted(out_positions)
    eff = None
    for p in out_positions:
        e = discard_effect(t.wires_out[p], t.mode)
        eff = e if eff is None else kron(eff, e)
    if eff is None:
        return t
    return apply_effect(t, out_positions, eff)


def entries_nonneg(t: Tensor, tol: float = 0.0) -> bool:
    if t.mode == EXACT:
        return all(x >= 0 for x in t.entries.reshape(-1))
    arr = np.asarray(t.entries)
    if np.iscomplexobj(arr):
        if np.max(np.abs(arr.imag)) > tol:
            return False
        arr = arr.real
    return bool(np.min(arr) >= -tol) if arr.size else True
