"""Synthetic combinational benchmark families.

Five base circuit kinds (ripple-carry adder, magnitude comparator, mux
tree, parity tree, ALU slice), each small enough to check exhaustively:
no base circuit exceeds 18 input bits.  From a base two families of
variants are derived:

* obfuscated variants: seeded, functionality-preserving rewrites
  (double negation, De Morgan, XOR-with-zero key gates, reassociation,
  subexpression hoisting).  Same function, different structure.
* trojan variants: a seeded equality comparator over one input port
  flips a single output bit when the port matches a hidden constant.
  The activation witness is recorded and re-verified by simulation.

`gen_family` bundles these into labeled circuit records and
`write_suite` / `load_suite` move a whole suite through a directory of
source files plus a JSON manifest.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .netlist import (
    ARITH_OPS,
    Assign,
    Binary,
    Concat,
    Const,
    Expr,
    LValue,
    Netlist,
    Port,
    Ref,
    Slice,
    Ternary,
    Unary,
    emit_netlist,
    expr_width,
    smart_not,
    validate,
)
from .parser import parse_netlist
from .sim import check_equivalence, simulate

KINDS = ("adder", "comparator", "mux-tree", "parity", "alu-slice")
MAX_INPUT_BITS = 18

_MUX_SELECT_BITS = 2


class BenchError(ValueError):
    pass


def _bit(net: str, i: int) -> Slice:
    return Slice(Ref(net), i, i)


def _finish(
    name: str,
    ports: Sequence[Port],
    wires: dict[str, int],
    assigns: Sequence[Assign],
) -> Netlist:
    nets = {p.name: p.width for p in ports}
    nets.update(wires)
    n = Netlist(name, tuple(ports), nets, tuple(assigns))
    diags = validate(n)
    if diags:
        raise BenchError(f"generated netlist {name!r} is invalid: {diags[0].message}")
    return n


def _check_input_budget(ports: Sequence[Port], kind: str, width: int) -> None:
    bits = sum(p.width for p in ports if p.direction == "input")
    if bits > MAX_INPUT_BITS:
        raise BenchError(
            f"{kind} width {width} needs {bits} input bits, over the "
            f"{MAX_INPUT_BITS}-bit exhaustive-check budget"
        )


def _gen_adder(name: str, w: int) -> Netlist:
    """Ripple-carry adder decomposed into per-bit generate/propagate logic."""
    ports = [
        Port("a", "input", w),
        Port("b", "input", w),
        Port("cin", "input", 1),
        Port("sum", "output", w),
        Port("cout", "output", 1),
    ]
    wires = {"g": w, "p": w, "c": w + 1}
    assigns = [Assign((LValue("c", 0, 0),), Ref("cin"))]
    for i in range(w):
        assigns.append(
            Assign((LValue("g", i, i),), Binary("AND", _bit("a", i), _bit("b", i)))
        )
        assigns.append(
            Assign((LValue("p", i, i),), Binary("XOR", _bit("a", i), _bit("b", i)))
        )
        assigns.append(
            Assign(
                (LValue("c", i + 1, i + 1),),
                Binary("OR", _bit("g", i), Binary("AND", _bit("p", i), _bit("c", i))),
            )
        )
        assigns.append(
            Assign((LValue("sum", i, i),), Binary("XOR", _bit("p", i), _bit("c", i)))
        )
    assigns.append(Assign((LValue("cout"),), _bit("c", w)))
    return _finish(name, ports, wires, assigns)


def _gen_comparator(name: str, w: int) -> Netlist:
    """Equality and less-than over unsigned operands, bit-serial chains."""
    ports = [
        Port("a", "input", w),
        Port("b", "input", w),
        Port("eq", "output", 1),
        Port("lt", "output", 1),
    ]
    wires = {"e": w, "ec": w, "bw": w}
    assigns = []
    for i in range(w):
        assigns.append(
            Assign((LValue("e", i, i),), Binary("XNOR", _bit("a", i), _bit("b", i)))
        )
    assigns.append(Assign((LValue("ec", 0, 0),), _bit("e", 0)))
    for i in range(1, w):
        assigns.append(
            Assign(
                (LValue("ec", i, i),),
                Binary("AND", _bit("ec", i - 1), _bit("e", i)),
            )
        )
    # Borrow chain: bit i borrows when a<b there, or they match and a
    # lower bit already borrowed.
    assigns.append(
        Assign(
            (LValue("bw", 0, 0),),
            Binary("AND", Unary("NOT", _bit("a", 0)), _bit("b", 0)),
        )
    )
    for i in range(1, w):
        assigns.append(
            Assign(
                (LValue("bw", i, i),),
                Binary(
                    "OR",
                    Binary("AND", Unary("NOT", _bit("a", i)), _bit("b", i)),
                    Binary("AND", _bit("e", i), _bit("bw", i - 1)),
                ),
            )
        )
    assigns.append(Assign((LValue("eq"),), _bit("ec", w - 1)))
    assigns.append(Assign((LValue("lt"),), _bit("bw", w - 1)))
    return _finish(name, ports, wires, assigns)


def _gen_mux_tree(name: str, w: int) -> Netlist:
    """Four w-bit data inputs selected by two bits through a ternary tree."""
    n_data = 1 << _MUX_SELECT_BITS
    ports = [Port("sel", "input", _MUX_SELECT_BITS)]
    ports += [Port(f"d{i}", "input", w) for i in range(n_data)]
    ports.append(Port("y", "output", w))
    wires: dict[str, int] = {}
    assigns: list[Assign] = []
    level: list[str] = [f"d{i}" for i in range(n_data)]
    for s in range(_MUX_SELECT_BITS):
        nxt: list[str] = []
        for k in range(0, len(level), 2):
            if s == _MUX_SELECT_BITS - 1:
                out = "y"
            else:
                out = f"m{s}_{k // 2}"
                wires[out] = w
            assigns.append(
                Assign(
                    (LValue(out),),
                    Ternary(_bit("sel", s), Ref(level[k + 1]), Ref(level[k])),
                )
            )
            nxt.append(out)
        level = nxt
    return _finish(name, ports, wires, assigns)


def _gen_parity(name: str, w: int, rng: np.random.Generator) -> Netlist:
    """XOR reduction of one input; the tree bracketing is drawn from the seed."""
    ports = [Port("a", "input", w), Port("p", "output", 1)]

    def tree(lo: int, hi: int) -> Expr:
        if lo == hi:
            return _bit("a", lo)
        split = lo if lo + 1 == hi else int(rng.integers(lo, hi))
        return Binary("XOR", tree(lo, split), tree(split + 1, hi))

    expr: Expr = tree(0, w - 1) if w > 1 else Ref("a")
    return _finish(name, ports, {}, [Assign((LValue("p"),), expr)])


def _gen_alu_slice(name: str, w: int) -> Netlist:
    """Op-selected and/or/xor/add with a carry-out-wide result."""
    ports = [
        Port("op", "input", 2),
        Port("a", "input", w),
        Port("b", "input", w),
        Port("y", "output", w + 1),
    ]
    wires = {"f_and": w, "f_or": w, "f_xor": w, "f_add": w + 1}
    zero = Const(1, 0)

    def ext(net: str) -> Expr:
        return Concat((zero, Ref(net)))

    assigns = [
        Assign((LValue("f_and"),), Binary("AND", Ref("a"), Ref("b"))),
        Assign((LValue("f_or"),), Binary("OR", Ref("a"), Ref("b"))),
        Assign((LValue("f_xor"),), Binary("XOR", Ref("a"), Ref("b"))),
        # One bit wider than the operands, so the carry is kept.
        Assign((LValue("f_add"),), Binary("ADD", Ref("a"), Ref("b"))),
        Assign(
            (LValue("y"),),
            Ternary(
                _bit("op", 1),
                Ternary(_bit("op", 0), Ref("f_add"), ext("f_xor")),
                Ternary(_bit("op", 0), ext("f_or"), ext("f_and")),
            ),
        ),
    ]
    return _finish(name, ports, wires, assigns)


def gen_base(kind: str, width: int, seed: int = 0) -> Netlist:
    """A fresh base circuit of the given kind.

    The seed shapes kinds with structural freedom (parity bracketing);
    the rest are deterministic in (kind, width).
    """
    if kind not in KINDS:
        raise BenchError(f"unknown circuit kind {kind!r} (choose from {', '.join(KINDS)})")
    if width < 1:
        raise BenchError("width must be at least 1")
    rng = np.random.default_rng(seed)
    name = f"{kind.replace('-', '_')}{width}"
    if kind == "adder":
        n = _gen_adder(name, width)
    elif kind == "comparator":
        n = _gen_comparator(name, width)
    elif kind == "mux-tree":
        n = _gen_mux_tree(name, width)
    elif kind == "parity":
        n = _gen_parity(name, width, rng)
    else:
        n = _gen_alu_slice(name, width)
    _check_input_budget(n.ports, kind, width)
    return n


@dataclass
class HtVariant:
    """A trojaned circuit plus everything needed to demonstrate the payload."""

    netlist: Netlist
    trigger_port: str
    trigger_value: int
    flipped_output: str
    flipped_bit: int
    witness: dict[str, int]


def gen_ht_variant(base: Netlist, seed: int = 0, name: str | None = None) -> HtVariant:
    """Insert a comparator-triggered single-bit output flip.

    A hidden constant is compared against one input port; on a match,
    one bit of one output is inverted.  Everything else passes through,
    so the circuit misbehaves only at the trigger inputs.  The variant
    is verified by simulation at the witness and at a neighbor input.
    """
    rng = np.random.default_rng(seed)
    for net in base.nets:
        if net.startswith("ht_"):
            raise BenchError(f"net {net!r} collides with the reserved ht_ prefix")
    inputs = [p for p in base.ports if p.direction == "input"]
    outputs = [p for p in base.ports if p.direction == "output"]
    wide = [p for p in inputs if p.width >= 2]
    pool = wide if wide else inputs
    port = pool[int(rng.integers(0, len(pool)))]
    key = int(rng.integers(0, 1 << port.width))
    out = outputs[int(rng.integers(0, len(outputs)))]
    bit = int(rng.integers(0, out.width))

    w = port.width
    wires = {"ht_x": w, "ht_pre": out.width}
    assigns = [
        Assign(
            (LValue("ht_x"),),
            Binary("XNOR", Ref(port.name), Const(w, key)),
        )
    ]
    if w == 1:
        cond: Expr = Ref("ht_x")
    else:
        wires["ht_c"] = w
        assigns.append(Assign((LValue("ht_c", 0, 0),), _bit("ht_x", 0)))
        for i in range(1, w):
            assigns.append(
                Assign(
                    (LValue("ht_c", i, i),),
                    Binary("AND", _bit("ht_c", i - 1), _bit("ht_x", i)),
                )
            )
        cond = _bit("ht_c", w - 1)

    # The original drivers of the chosen output now feed an internal net.
    retargeted = []
    for a in base.assigns:
        targets = tuple(
            LValue("ht_pre", lv.msb, lv.lsb) if lv.net == out.name else lv
            for lv in a.targets
        )
        retargeted.append(Assign(targets, a.expr))
    pre = Ref("ht_pre") if out.width == 1 else _bit("ht_pre", bit)
    patched = [
        Assign(
            (LValue(out.name, bit, bit) if out.width > 1 else LValue(out.name),),
            Binary("XOR", pre, cond),
        )
    ]
    if bit + 1 <= out.width - 1:
        patched.append(
            Assign(
                (LValue(out.name, out.width - 1, bit + 1),),
                Slice(Ref("ht_pre"), out.width - 1, bit + 1),
            )
        )
    if bit - 1 >= 0:
        patched.append(
            Assign(
                (LValue(out.name, bit - 1, 0),),
                Slice(Ref("ht_pre"), bit - 1, 0),
            )
        )

    nets = dict(base.nets)
    nets.update(wires)
    ht = Netlist(
        name or f"{base.name}_ht",
        base.ports,
        nets,
        tuple(retargeted) + tuple(assigns) + tuple(patched),
    )
    diags = validate(ht)
    if diags:
        raise BenchError(f"trojan insertion broke {base.name!r}: {diags[0].message}")

    witness = {p.name: 0 for p in inputs}
    witness[port.name] = key
    if simulate(ht, witness)[out.name] == simulate(base, witness)[out.name]:
        raise BenchError("trojan payload did not fire at its witness")
    neighbor = dict(witness)
    neighbor[port.name] = key ^ 1
    if simulate(ht, neighbor) != simulate(base, neighbor):
        raise BenchError("trojan payload fired off its trigger")
    return HtVariant(ht, port.name, key, out.name, bit, witness)


_REWRITES = ("double_not", "demorgan", "xor_zero", "reassoc")


def _apply_rewrite(e: Expr, which: str, nets: dict[str, int]) -> Expr:
    # smart_not keeps the result in the same canonical form the parser
    # produces, so writing a variant to disk and reading it back yields
    # a structurally identical netlist.
    if which == "double_not":
        return smart_not(smart_not(e))
    if which == "demorgan" and isinstance(e, Binary) and e.op in ("AND", "OR"):
        flipped = "OR" if e.op == "AND" else "AND"
        return smart_not(Binary(flipped, smart_not(e.lhs), smart_not(e.rhs)))
    if which == "xor_zero":
        return Binary("XOR", e, Const(expr_width(e, nets), 0))
    if (
        which == "reassoc"
        and isinstance(e, Binary)
        and e.op in ("AND", "OR", "XOR")
        and isinstance(e.lhs, Binary)
        and e.lhs.op == e.op
    ):
        return Binary(e.op, e.lhs.lhs, Binary(e.op, e.lhs.rhs, e.rhs))
    return e


def gen_obfuscated_variant(
    base: Netlist,
    seed: int = 0,
    name: str | None = None,
    rate: float = 0.25,
    verify: bool = True,
) -> Netlist:
    """A functionally equivalent restructuring of ``base``.

    Expression nodes are rewritten with probability ``rate`` using a
    seeded choice of identity-preserving transforms, and one random rhs
    is hoisted through a fresh wire, which guarantees the variant is
    structurally distinct.  Assigns whose rhs is an add or subtract are
    only hoisted: their result width depends on the assign context, and
    wrapping the root would change it.
    """
    rng = np.random.default_rng(seed)
    nets = dict(base.nets)

    def walk(e: Expr) -> Expr:
        if isinstance(e, Slice):
            rebuilt: Expr = e  # the operand must stay a bare net reference
        elif isinstance(e, Unary):
            rebuilt = Unary(e.op, walk(e.operand))
        elif isinstance(e, Binary):
            rebuilt = Binary(e.op, walk(e.lhs), walk(e.rhs))
        elif isinstance(e, Ternary):
            rebuilt = Ternary(walk(e.cond), walk(e.then), walk(e.orelse))
        elif isinstance(e, Concat):
            rebuilt = Concat(tuple(walk(p) for p in e.parts))
        else:
            rebuilt = e
        if rng.random() < rate:
            which = _REWRITES[int(rng.integers(0, len(_REWRITES)))]
            return _apply_rewrite(rebuilt, which, nets)
        return rebuilt

    new_assigns: list[Assign] = []
    for a in base.assigns:
        if isinstance(a.expr, Binary) and a.expr.op in ARITH_OPS:
            new_assigns.append(a)
        else:
            new_assigns.append(Assign(a.targets, walk(a.expr)))

    # Hoist one rhs through a buffer wire. This is width-safe even for
    # the carry form because the wire gets the full target width.
    i = int(rng.integers(0, len(new_assigns)))
    a = new_assigns[i]
    w = sum(lv.width(nets) for lv in a.targets)
    hoist, k = "obf_h0", 0
    while hoist in nets:
        k += 1
        hoist = f"obf_h{k}"
    nets[hoist] = w
    new_assigns[i] = Assign(a.targets, Ref(hoist))
    new_assigns.append(Assign((LValue(hoist),), a.expr))

    obf = Netlist(name or f"{base.name}_obf", base.ports, nets, tuple(new_assigns))
    diags = validate(obf)
    if diags:
        raise BenchError(f"obfuscation broke {base.name!r}: {diags[0].message}")
    if emit_netlist(obf) == emit_netlist(base):
        raise BenchError("obfuscation produced a structurally identical netlist")
    if verify:
        res = check_equivalence(base, obf, mode="exhaustive")
        if not res.equivalent:
            raise BenchError(
                f"obfuscation changed the function of {base.name!r} "
                f"at {res.counterexample!r}"
            )
    return obf


@dataclass
class CircuitRecord:
    """One labeled suite member."""

    name: str
    family: str
    kind: str
    width: int
    role: str  # "clean" | "trojan"
    netlist: Netlist
    info: dict = field(default_factory=dict)


def parse_family_spec(spec: str) -> tuple[str, int]:
    """Parse "kind:width", e.g. "adder:4"."""
    kind, sep, w = spec.partition(":")
    if not sep or kind not in KINDS:
        raise BenchError(
            f"bad family spec {spec!r}, expected kind:width with kind in "
            + ", ".join(KINDS)
        )
    try:
        width = int(w)
    except ValueError:
        raise BenchError(f"bad family width in {spec!r}") from None
    return kind, width


def gen_family(
    kind: str,
    width: int,
    seed: int = 0,
    clean_variants: int = 4,
    trojan_variants: int = 4,
    verify: bool = True,
) -> list[CircuitRecord]:
    """Base circuit, obfuscated siblings, and trojaned members.

    Clean members are all functionally equivalent to the base; trojan
    members are derived from rotating clean members so the malicious
    logic appears in structurally diverse hosts.
    """
    if clean_variants < 1:
        raise BenchError("a family needs at least one clean member")
    family = f"{kind.replace('-', '_')}{width}"
    base = gen_base(kind, width, seed)
    records: list[CircuitRecord] = []
    clean: list[Netlist] = []
    for k in range(clean_variants):
        if k == 0:
            n = Netlist(f"{family}_c0", base.ports, dict(base.nets), base.assigns)
        else:
            n = gen_obfuscated_variant(
                base, seed=seed * 7919 + k, name=f"{family}_c{k}", verify=verify
            )
        clean.append(n)
        records.append(
            CircuitRecord(n.name, family, kind, width, "clean", n, {"variant": k})
        )
    for k in range(trojan_variants):
        host = clean[k % len(clean)]
        ht = gen_ht_variant(host, seed=seed * 104729 + k, name=f"{family}_t{k}")
        records.append(
            CircuitRecord(
                ht.netlist.name,
                family,
                kind,
                width,
                "trojan",
                ht.netlist,
                {
                    "variant": k,
                    "host": host.name,
                    "trigger_port": ht.trigger_port,
                    "trigger_value": ht.trigger_value,
                    "flipped_output": ht.flipped_output,
                    "flipped_bit": ht.flipped_bit,
                    "witness": {k2: v2 for k2, v2 in ht.witness.items()},
                },
            )
        )
    return records


def gen_suite(
    families: Iterable[str],
    seed: int = 0,
    clean_variants: int = 4,
    trojan_variants: int = 4,
    verify: bool = True,
) -> list[CircuitRecord]:
    """Generate several families; specs are "kind:width" strings."""
    records: list[CircuitRecord] = []
    for i, spec in enumerate(families):
        kind, width = parse_family_spec(spec)
        records.extend(
            gen_family(
                kind,
                width,
                seed=seed + i * 1009,
                clean_variants=clean_variants,
                trojan_variants=trojan_variants,
                verify=verify,
            )
        )
    names = [r.name for r in records]
    if len(set(names)) != len(names):
        raise BenchError("duplicate circuit names in suite (repeated family spec?)")
    return records


def write_suite(records: Sequence[CircuitRecord], outdir: str) -> str:
    """One source file per circuit plus manifest.json; returns the manifest path."""
    os.makedirs(outdir, exist_ok=True)
    entries = []
    for r in records:
        fname = f"{r.name}.v"
        with open(os.path.join(outdir, fname), "w", encoding="utf-8") as fh:
            fh.write(emit_netlist(r.netlist))
        entries.append(
            {
                "name": r.name,
                "file": fname,
                "family": r.family,
                "kind": r.kind,
                "width": r.width,
                "role": r.role,
                "inputs": {p.name: p.width for p in r.netlist.inputs},
                "outputs": {p.name: p.width for p in r.netlist.outputs},
                "info": r.info,
            }
        )
    path = os.path.join(outdir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"circuits": entries}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_suite(directory: str) -> list[CircuitRecord]:
    path = os.path.join(directory, "manifest.json")
    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    records = []
    for e in manifest["circuits"]:
        src = os.path.join(directory, e["file"])
        with open(src, encoding="utf-8") as fh:
            n = parse_netlist(fh.read(), filename=src)
        records.append(
            CircuitRecord(
                e["name"], e["family"], e["kind"], e["width"], e["role"], n, e["info"]
            )
        )
    return records
