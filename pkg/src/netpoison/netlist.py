"""Netlist intermediate representation for a small combinational Verilog subset.

The IR is a tree of frozen expression nodes under a flat list of continuous
assigns. Nets are two-valued bit vectors; there is no sequential logic, no
x/z, and no hierarchy. `validate` enforces the structural invariants
(declaredness, per-bit single driver, acyclicity, driven outputs, width
consistency); `emit_netlist` prints canonical text that reparses to an
identical IR.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Iterator, Mapping, Optional, Union

__all__ = [
    "Diagnostic",
    "NetlistError",
    "Const",
    "Ref",
    "Slice",
    "Unary",
    "Binary",
    "Ternary",
    "Concat",
    "Expr",
    "LValue",
    "Assign",
    "Port",
    "Netlist",
    "smart_not",
    "expr_width",
    "carry_form_width",
    "iter_subexprs",
    "expr_reads",
    "expr_read_masks",
    "assign_write_masks",
    "map_expr",
    "validate",
    "emit_netlist",
    "emit_expr",
]

LOGIC_OPS = ("AND", "OR", "XOR", "XNOR", "NAND", "NOR")
ARITH_OPS = ("ADD", "SUB")
BINARY_OPS = LOGIC_OPS + ARITH_OPS

# Negation is an involution on the logical binary ops. The parser and every
# programmatic constructor route through smart_not, so `NOT(AND(..))` never
# appears in a well-formed IR; it is always the canonical NAND.
_NOT_INVOLUTION = {
    "AND": "NAND",
    "NAND": "AND",
    "OR": "NOR",
    "NOR": "OR",
    "XOR": "XNOR",
    "XNOR": "XOR",
}

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_$]*\Z")


@dataclass(frozen=True)
class Diagnostic:
    """A single parse or validation problem, ordered by source position."""

    line: int
    col: int
    message: str

    def format(self, filename: str = "<netlist>") -> str:
        return f"{filename}:{self.line}:{self.col}: {self.message}"


class NetlistError(Exception):
    """Raised when a netlist cannot be parsed or fails validation."""

    def __init__(self, diagnostics: list[Diagnostic], filename: str = "<netlist>"):
        self.diagnostics = list(diagnostics)
        self.filename = filename
        super().__init__(
            "; ".join(d.format(filename) for d in self.diagnostics) or "invalid netlist"
        )


@dataclass(frozen=True)
class Const:
    """Sized unsigned constant. `value` must already fit in `width` bits."""

    width: int
    value: int

    def __post_init__(self):
        if self.width < 1:
            raise ValueError(f"constant width must be >= 1, got {self.width}")
        if not 0 <= self.value < (1 << self.width):
            raise ValueError(f"constant value {self.value} does not fit in {self.width} bits")


@dataclass(frozen=True)
class Ref:
    """Whole-net reference."""

    net: str


@dataclass(frozen=True)
class Slice:
    """Bit- or part-select `net[msb:lsb]`. The operand must be a Ref; the
    grammar has no select syntax for general expressions."""

    operand: "Expr"
    msb: int
    lsb: int

    def __post_init__(self):
        if self.lsb < 0 or self.msb < self.lsb:
            raise ValueError(f"bad select range [{self.msb}:{self.lsb}]")

    @property
    def width(self) -> int:
        return self.msb - self.lsb + 1


@dataclass(frozen=True)
class Unary:
    op: str  # only "NOT"
    operand: "Expr"

    def __post_init__(self):
        if self.op != "NOT":
            raise ValueError(f"unknown unary op {self.op!r}")


@dataclass(frozen=True)
class Binary:
    op: str
    lhs: "Expr"
    rhs: "Expr"

    def __post_init__(self):
        if self.op not in BINARY_OPS:
            raise ValueError(f"unknown binary op {self.op!r}")


@dataclass(frozen=True)
class Ternary:
    cond: "Expr"
    then: "Expr"
    orelse: "Expr"


@dataclass(frozen=True)
class Concat:
    """MSB-first concatenation `{a, b, ...}`."""

    parts: tuple["Expr", ...]

    def __post_init__(self):
        if not self.parts:
            raise ValueError("empty concatenation")


Expr = Union[Const, Ref, Slice, Unary, Binary, Ternary, Concat]


def smart_not(e: Expr) -> Expr:
    """Negate an expression, folding through the binary-logic involution so
    NAND/NOR/XNOR stay canonical. Double negation is preserved as written."""
    if isinstance(e, Binary) and e.op in _NOT_INVOLUTION:
        return Binary(_NOT_INVOLUTION[e.op], e.lhs, e.rhs)
    if isinstance(e, Const):
        mask = (1 << e.width) - 1
        return Const(e.width, e.value ^ mask)
    return Unary("NOT", e)


@dataclass(frozen=True)
class LValue:
    """One element of an assign target: a net, optionally a bit range of it."""

    net: str
    msb: Optional[int] = None
    lsb: Optional[int] = None

    def __post_init__(self):
        if (self.msb is None) != (self.lsb is None):
            raise ValueError("lvalue range needs both msb and lsb")
        if self.msb is not None and (self.lsb < 0 or self.msb < self.lsb):
            raise ValueError(f"bad lvalue range [{self.msb}:{self.lsb}]")

    def width(self, nets: Mapping[str, int]) -> int:
        if self.msb is None:
            return nets[self.net]
        return self.msb - self.lsb + 1

    def bits(self, nets: Mapping[str, int]) -> tuple[int, int]:
        """Covered bit range as (lo, hi) inclusive."""
        if self.msb is None:
            return (0, nets[self.net] - 1)
        return (self.lsb, self.msb)


@dataclass(frozen=True)
class Assign:
    """Continuous assign. `targets` is MSB-first, matching `{co, sum} = ...`;
    a plain target is the singleton case. Source positions do not participate
    in structural equality."""

    targets: tuple[LValue, ...]
    expr: Expr
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)

    def __post_init__(self):
        if not self.targets:
            raise ValueError("assign needs at least one target")

    def target_width(self, nets: Mapping[str, int]) -> int:
        return sum(t.width(nets) for t in self.targets)


@dataclass(frozen=True)
class Port:
    name: str
    direction: str  # "input" | "output"
    width: int

    def __post_init__(self):
        if self.direction not in ("input", "output"):
            raise ValueError(f"bad port direction {self.direction!r}")
        if self.width < 1:
            raise ValueError(f"port width must be >= 1, got {self.width}")


@dataclass
class Netlist:
    """A parsed module. `nets` maps every declared net (ports included) to its
    width; wires are the nets that are not ports."""

    name: str
    ports: tuple[Port, ...]
    nets: dict[str, int]
    assigns: tuple[Assign, ...]

    def port(self, name: str) -> Optional[Port]:
        for p in self.ports:
            if p.name == name:
                return p
        return None

    @property
    def inputs(self) -> tuple[Port, ...]:
        return tuple(p for p in self.ports if p.direction == "input")

    @property
    def outputs(self) -> tuple[Port, ...]:
        return tuple(p for p in self.ports if p.direction == "output")

    def wires(self) -> dict[str, int]:
        port_names = {p.name for p in self.ports}
        return {n: w for n, w in self.nets.items() if n not in port_names}

    def input_bits(self) -> int:
        return sum(p.width for p in self.inputs)

    def copy(self) -> "Netlist":
        return replace(self, nets=dict(self.nets))


# ---------------------------------------------------------------------------
# expression utilities


def iter_subexprs(e: Expr) -> Iterator[Expr]:
    """Preorder walk."""
    yield e
    if isinstance(e, Slice):
        yield from iter_subexprs(e.operand)
    elif isinstance(e, Unary):
        yield from iter_subexprs(e.operand)
    elif isinstance(e, Binary):
        yield from iter_subexprs(e.lhs)
        yield from iter_subexprs(e.rhs)
    elif isinstance(e, Ternary):
        yield from iter_subexprs(e.cond)
        yield from iter_subexprs(e.then)
        yield from iter_subexprs(e.orelse)
    elif isinstance(e, Concat):
        for p in e.parts:
            yield from iter_subexprs(p)


def expr_reads(e: Expr) -> Iterator[tuple[str, Optional[int], Optional[int]]]:
    """Yield (net, msb, lsb) for every net read; msb/lsb are None for a
    whole-net read. A sliced Ref is reported once, as the slice."""
    if isinstance(e, Slice) and isinstance(e.operand, Ref):
        yield (e.operand.net, e.msb, e.lsb)
        return
    if isinstance(e, Ref):
        yield (e.net, None, None)
        return
    if isinstance(e, (Const,)):
        return
    for child in _children(e):
        yield from expr_reads(child)


def expr_read_masks(e: Expr, nets: Mapping[str, int]) -> dict[str, int]:
    """Per-net bitmask of the bits the expression reads.

    Out-of-range reads are clipped; the validator reports those
    separately, and callers here only care about in-range dependencies.
    """
    masks: dict[str, int] = {}
    for net, msb, lsb in expr_reads(e):
        if net not in nets:
            continue
        width = nets[net]
        if msb is None:
            m = (1 << width) - 1
        else:
            if lsb >= width:
                continue
            hi = min(msb, width - 1)
            m = ((1 << (hi - lsb + 1)) - 1) << lsb
        masks[net] = masks.get(net, 0) | m
    return masks


def assign_write_masks(a: "Assign", nets: Mapping[str, int]) -> dict[str, int]:
    """Per-net bitmask of the bits the assign drives."""
    masks: dict[str, int] = {}
    for t in a.targets:
        if t.net not in nets:
            continue
        width = nets[t.net]
        if t.msb is None:
            m = (1 << width) - 1
        else:
            if t.lsb >= width:
                continue
            hi = min(t.msb, width - 1)
            m = ((1 << (hi - t.lsb + 1)) - 1) << t.lsb
        masks[t.net] = masks.get(t.net, 0) | m
    return masks


def _children(e: Expr) -> tuple[Expr, ...]:
    if isinstance(e, Slice):
        return (e.operand,)
    if isinstance(e, Unary):
        return (e.operand,)
    if isinstance(e, Binary):
        return (e.lhs, e.rhs)
    if isinstance(e, Ternary):
        return (e.cond, e.then, e.orelse)
    if isinstance(e, Concat):
        return e.parts
    return ()


def map_expr(e: Expr, fn) -> Expr:
    """Bottom-up rebuild: children first, then fn on the rebuilt node."""
    if isinstance(e, Slice):
        e = Slice(map_expr(e.operand, fn), e.msb, e.lsb)
    elif isinstance(e, Unary):
        e = Unary(e.op, map_expr(e.operand, fn))
    elif isinstance(e, Binary):
        e = Binary(e.op, map_expr(e.lhs, fn), map_expr(e.rhs, fn))
    elif isinstance(e, Ternary):
        e = Ternary(map_expr(e.cond, fn), map_expr(e.then, fn), map_expr(e.orelse, fn))
    elif isinstance(e, Concat):
        e = Concat(tuple(map_expr(p, fn) for p in e.parts))
    return fn(e)


# ---------------------------------------------------------------------------
# width rules


class _WidthError(Exception):
    pass


def expr_width(e: Expr, nets: Mapping[str, int]) -> int:
    """Self-determined width of an expression.

    Logic operators require equal operand widths. ADD/SUB take the max operand
    width (the narrower side is zero-extended). Ternary conditions must be one
    bit wide. Raises NetlistError on an inconsistency.
    """
    try:
        return _expr_width(e, nets)
    except _WidthError as exc:
        raise NetlistError([Diagnostic(0, 0, str(exc))]) from None


def _expr_width(e: Expr, nets: Mapping[str, int]) -> int:
    if isinstance(e, Const):
        return e.width
    if isinstance(e, Ref):
        if e.net not in nets:
            raise _WidthError(f"reference to undeclared net '{e.net}'")
        return nets[e.net]
    if isinstance(e, Slice):
        if not isinstance(e.operand, Ref):
            raise _WidthError("bit-select of a non-net expression")
        base = _expr_width(e.operand, nets)
        if e.msb >= base:
            raise _WidthError(
                f"select [{e.msb}:{e.lsb}] out of range for {e.operand.net} "
                f"({base} bits)"
            )
        return e.width
    if isinstance(e, Unary):
        return _expr_width(e.operand, nets)
    if isinstance(e, Binary):
        wl = _expr_width(e.lhs, nets)
        wr = _expr_width(e.rhs, nets)
        if e.op in ARITH_OPS:
            return max(wl, wr)
        if wl != wr:
            raise _WidthError(f"operands of {e.op} differ in width ({wl} vs {wr})")
        return wl
    if isinstance(e, Ternary):
        wc = _expr_width(e.cond, nets)
        if wc != 1:
            raise _WidthError(f"ternary condition must be 1 bit wide, got {wc}")
        wt = _expr_width(e.then, nets)
        we = _expr_width(e.orelse, nets)
        if wt != we:
            raise _WidthError(f"ternary branches differ in width ({wt} vs {we})")
        return wt
    if isinstance(e, Concat):
        return sum(_expr_width(p, nets) for p in e.parts)
    raise _WidthError(f"unknown expression node {type(e).__name__}")


def carry_form_width(a: Assign, nets: Mapping[str, int]) -> Optional[int]:
    """Context width for an ADD/SUB assign that captures the carry/borrow.

    If the target is exactly one bit wider than an ADD/SUB-rooted rhs, the
    whole ADD/SUB spine evaluates at the target width (so `{co, sum} = a + b`
    keeps the carry). Returns that width, or None for a natural-width assign.
    Any other mismatch is left to `validate` to report.
    """
    wt = a.target_width(nets)
    we = expr_width(a.expr, nets)
    if wt == we:
        return None
    if wt == we + 1 and isinstance(a.expr, Binary) and a.expr.op in ARITH_OPS:
        return wt
    return None


# ---------------------------------------------------------------------------
# validation


def validate(n: Netlist) -> list[Diagnostic]:
    """Check all structural invariants; an empty list means the netlist is
    well formed. Diagnostics carry assign line numbers where available."""
    diags: list[Diagnostic] = []

    def bad(line: int, col: int, msg: str):
        diags.append(Diagnostic(line, col, msg))

    if not _IDENT_RE.match(n.name or ""):
        bad(0, 0, f"bad module name {n.name!r}")

    seen_ports: set[str] = set()
    for p in n.ports:
        if p.name in seen_ports:
            bad(0, 0, f"duplicate port '{p.name}'")
        seen_ports.add(p.name)
        if p.name not in n.nets:
            bad(0, 0, f"port '{p.name}' missing from net table")
        elif n.nets[p.name] != p.width:
            bad(0, 0, f"port '{p.name}' width {p.width} disagrees with net table "
                      f"({n.nets[p.name]})")

    for name, width in n.nets.items():
        if not _IDENT_RE.match(name):
            bad(0, 0, f"bad net name {name!r}")
        if width < 1:
            bad(0, 0, f"net '{name}' has width {width}")

    inputs = {p.name for p in n.ports if p.direction == "input"}
    outputs = {p.name for p in n.ports if p.direction == "output"}

    # Per-bit driver map; inputs count as externally driven.
    driven: dict[str, int] = {name: 0 for name in n.nets}
    for name in inputs:
        if name in driven:
            driven[name] = (1 << n.nets[name]) - 1

    for a in n.assigns:
        for t in a.targets:
            if t.net not in n.nets:
                bad(a.line, a.col, f"assign to undeclared net '{t.net}'")
                continue
            if t.net in inputs:
                bad(a.line, a.col, f"assign to input port '{t.net}'")
                continue
            width = n.nets[t.net]
            lo, hi = (0, width - 1) if t.msb is None else (t.lsb, t.msb)
            if hi >= width:
                bad(a.line, a.col,
                    f"assign range [{t.msb}:{t.lsb}] out of bounds for '{t.net}' "
                    f"({width} bits)")
                continue
            mask = ((1 << (hi - lo + 1)) - 1) << lo
            clash = driven.get(t.net, 0) & mask
            if clash:
                bits = [i for i in range(width) if clash >> i & 1]
                bad(a.line, a.col,
                    f"multiple drivers for '{t.net}' bit(s) {bits}")
            driven[t.net] = driven.get(t.net, 0) | mask

        # Width consistency, including the one-extra-bit carry form.
        try:
            we = _expr_width(a.expr, n.nets)
        except _WidthError as exc:
            bad(a.line, a.col, str(exc))
            continue
        known = all(t.net in n.nets and (t.msb is None or t.msb < n.nets[t.net])
                    for t in a.targets)
        if not known:
            continue
        wt = a.target_width(n.nets)
        carry_ok = (wt == we + 1 and isinstance(a.expr, Binary)
                    and a.expr.op in ARITH_OPS)
        if wt != we and not carry_ok:
            bad(a.line, a.col,
                f"assign width mismatch: target is {wt} bits, expression is {we}")

    # Outputs must be fully driven.
    for name in sorted(outputs):
        if name not in n.nets:
            continue
        want = (1 << n.nets[name]) - 1
        have = driven.get(name, 0)
        if have != want:
            missing = [i for i in range(n.nets[name]) if not have >> i & 1]
            bad(0, 0, f"output '{name}' bit(s) {missing} are never driven")

    # Every read bit must be driven by something.
    for a in n.assigns:
        for net, msb, lsb in expr_reads(a.expr):
            if net not in n.nets:
                continue  # already reported as undeclared
            width = n.nets[net]
            lo, hi = (0, width - 1) if msb is None else (lsb, msb)
            if hi >= width:
                continue  # already reported as out of range
            mask = ((1 << (hi - lo + 1)) - 1) << lo
            if driven.get(net, 0) & mask != mask:
                bad(a.line, a.col, f"net '{net}' is read but not fully driven")

    # Acyclicity at bit granularity: assign i feeds assign j only when a
    # bit i drives is actually among the bits j reads. Net-level edges
    # would flag legal per-bit chains like a ripple carry as cyclic.
    reads_of = [expr_read_masks(a.expr, n.nets) for a in n.assigns]
    writes_of = [assign_write_masks(a, n.nets) for a in n.assigns]
    writer_assigns: dict[str, list[int]] = {}
    for i, masks in enumerate(writes_of):
        for net in masks:
            writer_assigns.setdefault(net, []).append(i)
    dep_edges: dict[int, list[tuple[str, int]]] = {
        j: [] for j in range(len(n.assigns))
    }
    for j, rmasks in enumerate(reads_of):
        for net in sorted(rmasks):
            for i in writer_assigns.get(net, ()):
                if writes_of[i][net] & rmasks[net]:
                    dep_edges[j].append((net, i))
    cycle = _find_cycle(len(n.assigns), dep_edges)
    if cycle is not None:
        path = " -> ".join(cycle)
        bad(0, 0, f"combinational cycle through net(s): {path}")

    diags.sort(key=lambda d: (d.line, d.col, d.message))
    return diags


def _find_cycle(count, dep_edges):
    """Kahn over the assign-dependency graph; on failure, walk the cyclic core
    and return the net names along one cycle. Iterative, so deep combinational
    chains cannot hit the recursion limit. `dep_edges[j]` lists (net, i)
    pairs meaning assign j reads bits of `net` that assign i drives."""
    indegree = [0] * count
    # Edge i -> j when assign i drives a net read by assign j.
    out_edges: dict[int, list[int]] = {i: [] for i in range(count)}
    for j in range(count):
        for _, i in dep_edges[j]:
            out_edges[i].append(j)
            indegree[j] += 1
    queue = [i for i in range(count) if indegree[i] == 0]
    done = 0
    while queue:
        i = queue.pop()
        done += 1
        for j in out_edges[i]:
            indegree[j] -= 1
            if indegree[j] == 0:
                queue.append(j)
    if done == count:
        return None
    leftover = {i for i in range(count) if indegree[i] > 0}
    start = min(leftover)
    seen_at: dict[int, int] = {}
    path_nets: list[str] = []
    cur = start
    while cur not in seen_at:
        seen_at[cur] = len(path_nets)
        net, nxt = next((net, i) for net, i in dep_edges[cur] if i in leftover)
        path_nets.append(net)
        cur = nxt
    return path_nets[seen_at[cur]:] + [path_nets[seen_at[cur]]]


# ---------------------------------------------------------------------------
# canonical emission


_PREC = {"TERNARY": 1, "OR": 2, "XOR": 3, "XNOR": 3, "AND": 4, "ADD": 5, "SUB": 5,
         "NOT": 6}
_TOKEN = {"AND": "&", "OR": "|", "XOR": "^", "XNOR": "~^", "ADD": "+", "SUB": "-"}


def emit_expr(e: Expr) -> str:
    return _emit(e, 0)


def _emit(e: Expr, parent_prec: int) -> str:
    if isinstance(e, Const):
        return f"{e.width}'h{e.value:x}"
    if isinstance(e, Ref):
        return e.net
    if isinstance(e, Slice):
        if not isinstance(e.operand, Ref):
            raise NetlistError([Diagnostic(0, 0, "cannot emit select of a non-net expression")])
        if e.msb == e.lsb:
            return f"{e.operand.net}[{e.msb}]"
        return f"{e.operand.net}[{e.msb}:{e.lsb}]"
    if isinstance(e, Concat):
        return "{" + ", ".join(_emit(p, 0) for p in e.parts) + "}"
    if isinstance(e, Unary):
        return "~" + _emit(e.operand, _PREC["NOT"])
    if isinstance(e, Binary):
        if e.op in ("NAND", "NOR"):
            inner = _TOKEN["AND" if e.op == "NAND" else "OR"]
            prec = _PREC["AND" if e.op == "NAND" else "OR"]
            body = f"{_emit(e.lhs, prec)} {inner} {_emit(e.rhs, prec + 1)}"
            return f"~({body})"
        prec = _PREC[e.op]
        text = f"{_emit(e.lhs, prec)} {_TOKEN[e.op]} {_emit(e.rhs, prec + 1)}"
        return f"({text})" if prec < parent_prec else text
    if isinstance(e, Ternary):
        text = (f"{_emit(e.cond, _PREC['TERNARY'] + 1)} ? "
                f"{_emit(e.then, _PREC['TERNARY'])} : {_emit(e.orelse, _PREC['TERNARY'])}")
        return f"({text})" if parent_prec > _PREC["TERNARY"] else text
    raise NetlistError([Diagnostic(0, 0, f"cannot emit {type(e).__name__}")])


def _emit_lvalue(t: LValue) -> str:
    if t.msb is None:
        return t.net
    if t.msb == t.lsb:
        return f"{t.net}[{t.msb}]"
    return f"{t.net}[{t.msb}:{t.lsb}]"


def emit_netlist(n: Netlist) -> str:
    """Canonical text form. Reparsing the output yields a structurally
    identical netlist (same ports, nets, and expression trees)."""
    lines = [f"module {n.name} ("]
    for i, p in enumerate(n.ports):
        rng = f"[{p.width - 1}:0] " if p.width > 1 else ""
        comma = "," if i + 1 < len(n.ports) else ""
        lines.append(f"  {p.direction} {rng}{p.name}{comma}")
    lines.append(");")
    for name, width in n.wires().items():
        rng = f"[{width - 1}:0] " if width > 1 else ""
        lines.append(f"  wire {rng}{name};")
    for a in n.assigns:
        if len(a.targets) == 1:
            tgt = _emit_lvalue(a.targets[0])
        else:
            tgt = "{" + ", ".join(_emit_lvalue(t) for t in a.targets) + "}"
        lines.append(f"  assign {tgt} = {emit_expr(a.expr)};")
    lines.append("endmodule")
    return "\n".join(lines) + "\n"
