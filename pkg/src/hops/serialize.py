"""Read and write tensors as JSON documents.

One document carries one tensor plus enough typing to rebuild it: wire
lists (label, dim, kind, and the pair split for boxworld wires), the
arithmetic mode, the owning theory, a role tag, and the entries
flattened in column-stacking order (first listed wire's index fastest).
Exact entries are strings like "3/4" so nothing is lost to binary
floats; float entries are JSON numbers, or [re, im] pairs when complex.

Documents print canonically: sorted keys, two-space indent, trailing
newline.  Reprinting a parsed document reproduces the byte string, so
corpus files diff cleanly under version control.
"""

from __future__ import annotations

import json
from fractions import Fraction

import numpy as np

from .tensor import BOXWORLD, EXACT, FLOAT, Tensor, Wire
from . import theories as th
from .theories import Process

FORMAT_VERSION = 1

ROLES = ("channel", "instrument", "supermap", "profunctor-member")


class SerializeError(ValueError):
    """Malformed documents: bad fields, wrong counts, unparsable entries."""


def _wire_doc(w: Wire) -> dict:
    d = {"label": w.label, "dim": w.dim, "kind": w.kind}
    if w.kind == BOXWORLD:
        d["box_in"] = w.box_in
        d["box_out"] = w.box_out
    return d


def _wire_from_doc(d) -> Wire:
    try:
        if d.get("kind") == BOXWORLD:
            return Wire(d["label"], d["dim"], d["kind"],
                        box_in=d["box_in"], box_out=d["box_out"])
        return Wire(d["label"], d["dim"], d.get("kind", "classical"))
    except (KeyError, TypeError, ValueError) as exc:
        raise SerializeError(f"bad wire document: {exc}") from exc


def _entry_out(x, mode: str):
    if mode == EXACT:
        return str(x)
    if isinstance(x, complex) or np.iscomplexobj(np.asarray(x)):
        c = complex(x)
        if c.imag != 0.0:
            return [c.real, c.imag]
        return c.real
    return float(x)


def _entry_in(v, mode: str):
    if mode == EXACT:
        if not isinstance(v, str):
            raise SerializeError(f"exact entries must be strings, got {v!r}")
        try:
            return Fraction(v)
        except (ValueError, ZeroDivisionError) as exc:
            raise SerializeError(f"bad rational entry {v!r}: {exc}") from exc
    if isinstance(v, list):
        if len(v) != 2:
            raise SerializeError(f"complex entries are [re, im] pairs, got {v!r}")
        return complex(float(v[0]), float(v[1]))
    if isinstance(v, (int, float)):
        return float(v)
    raise SerializeError(f"bad float entry {v!r}")


def tensor_to_doc(t: Tensor, theory: str, role: str = "channel",
                  meta: dict | None = None) -> dict:
    if role not in ROLES:
        raise SerializeError(f"unknown role {role!r}")
    if theory not in th.THEORIES:
        raise SerializeError(f"unknown theory {theory!r}")
    doc = {
        "version": FORMAT_VERSION,
        "theory": theory,
        "mode": t.mode,
        "role": role,
        "wires_out": [_wire_doc(w) for w in t.wires_out],
        "wires_in": [_wire_doc(w) for w in t.wires_in],
        "entries": [_entry_out(x, t.mode) for x in t.ravel_cs()],
    }
    if meta:
        doc["meta"] = meta
    return doc


def tensor_from_doc(doc) -> tuple[Tensor, str, str, dict]:
    """Rebuild (tensor, theory, role, meta) from a parsed document."""
    if not isinstance(doc, dict):
        raise SerializeError("document must be a JSON object")
    if doc.get("version") != FORMAT_VERSION:
        raise SerializeError(f"unsupported format version {doc.get('version')!r}")
    mode = doc.get("mode")
    if mode not in (EXACT, FLOAT):
        raise SerializeError(f"unknown mode {mode!r}")
    role = doc.get("role")
    if role not in ROLES:
        raise SerializeError(f"unknown role {role!r}")
    theory = doc.get("theory")
    if theory not in th.THEORIES:
        raise SerializeError(f"unknown theory {theory!r}")
    wires_out = tuple(_wire_from_doc(d) for d in doc.get("wires_out", []))
    wires_in = tuple(_wire_from_doc(d) for d in doc.get("wires_in", []))
    want = 1
    for w in wires_out + wires_in:
        want *= w.axis_dim
    entries = doc.get("entries")
    if not isinstance(entries, list) or len(entries) != want:
        got = len(entries) if isinstance(entries, list) else "non-list"
        raise SerializeError(f"entry count {got} does not match wires (want {want})")
    flat = [_entry_in(v, mode) for v in entries]
    if mode == EXACT:
        arr = np.empty(want, dtype=object)
        arr[:] = flat
    else:
        arr = np.array(flat)
    try:
        t = Tensor.from_ravel_cs(wires_out, wires_in, arr, mode)
    except ValueError as exc:
        raise SerializeError(str(exc)) from exc
    meta = doc.get("meta", {})
    if not isinstance(meta, dict):
        raise SerializeError("meta must be an object")
    return t, theory, role, meta


def process_to_doc(p: Process, role: str = "channel", meta: dict | None = None) -> dict:
    return tensor_to_doc(p.tensor, p.theory, role, meta)


def process_from_doc(doc) -> tuple[Process, str, dict]:
    t, theory, role, meta = tensor_from_doc(doc)
    try:
        return Process(t, theory), role, meta
    except th.TheoryError as exc:
        raise SerializeError(str(exc)) from exc


def supermap_to_doc(s, x_wires: list | None = None) -> dict:
    """Serialize a slotted supermap; slot layout rides in meta."""
    meta = {"n_slots": s.n_slots, "has_outer": s.outer is not None}
    if x_wires is not None:
        meta["x_wires"] = list(x_wires)
    return process_to_doc(s.process, "supermap", meta)


def supermap_from_doc(doc):
    from .supermaps import CjSupermap, SupermapError
    p, role, meta = process_from_doc(doc)
    if role != "supermap":
        raise SerializeError(f"expected a supermap document, got role {role!r}")
    try:
        n = int(meta["n_slots"])
        has_outer = bool(meta["has_outer"])
    except (KeyError, TypeError, ValueError) as exc:
        raise SerializeError(f"supermap meta missing slot layout: {exc}") from exc
    try:
        return CjSupermap.from_process(p, n, has_outer)
    except SupermapError as exc:
        raise SerializeError(str(exc)) from exc


def instrument_to_doc(m) -> dict:
    t = m.process.tensor
    meta = {"setting_wire": t.wires_in[-1].label, "outcome_wire": t.wires_out[-1].label}
    return process_to_doc(m.process, "instrument", meta)


def instrument_from_doc(doc):
    from .instruments import ParamInstrument
    p, role, meta = process_from_doc(doc)
    if role != "instrument":
        raise SerializeError(f"expected an instrument document, got role {role!r}")
    try:
        return ParamInstrument(p)
    except th.TheoryError as exc:
        raise SerializeError(str(exc)) from exc


def dumps(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def loads(text: str) -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SerializeError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SerializeError("document must be a JSON object")
    return doc


def save(path, doc: dict) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(doc))


def load(path) -> dict:
    with open(path) as fh:
        return loads(fh.read())
