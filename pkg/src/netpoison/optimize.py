"""Function-preserving logic optimization to a fixed point.

Passes: constant folding and algebraic identities (including double-inversion
and XOR-chain cancellation, which is what dissolves XOR-with-constant
cascades), single-use wire inlining, buffer collapse by driver retargeting,
per-bit buffer coalescing, and dead-net elimination. The final step sorts
assigns into a canonical order so that structural identity of optimized
netlists does not depend on rewrite history.

Arithmetic caution: an ADD/SUB spine evaluates at a context width (the carry
form adds a bit), so ADD/SUB-rooted expressions are never inlined into other
expressions; they are only ever retargeted whole. Constant ADD/SUB folding is
skipped when the exact integer result would not fit the natural width.
"""

from __future__ import annotations

from dataclasses import replace

from .netlist import (
    ARITH_OPS,
    Assign,
    Binary,
    Concat,
    Const,
    Expr,
    LValue,
    Netlist,
    Ref,
    Slice,
    Ternary,
    Unary,
    expr_reads,
    expr_width,
    iter_subexprs,
    map_expr,
    smart_not,
)

__all__ = ["optimize"]

_MAX_ROUNDS = 10000


def optimize(n: Netlist) -> Netlist:
    """Return an equivalent, canonically ordered netlist. Idempotent."""
    cur = n.copy()
    for _ in range(_MAX_ROUNDS):
        nxt = _round(cur)
        if nxt == cur:
            break
        cur = nxt
    else:
        raise RuntimeError("optimizer did not reach a fixed point")
    return _canonical_order(cur)


def _round(n: Netlist) -> Netlist:
    n = _fold_assigns(n)
    n = _inline_single_use(n)
    n = _collapse_buffers(n)
    n = _coalesce_bit_buffers(n)
    n = _drop_dead(n)
    return n


def _canonical_order(n: Netlist) -> Netlist:
    def key(a: Assign):
        return tuple((t.net, t.bits(n.nets)[0], t.bits(n.nets)[1]) for t in a.targets)

    return replace(n, assigns=tuple(sorted(n.assigns, key=key)))


# ---------------------------------------------------------------------------
# constant folding and algebraic identities


def _fold_assigns(n: Netlist) -> Netlist:
    out = []
    changed = False
    for a in n.assigns:
        folded = map_expr(a.expr, lambda e: _fold(e, n.nets))
        if folded != a.expr and _widths_still_ok(a, folded, n.nets):
            out.append(replace(a, expr=folded))
            changed = True
        else:
            out.append(a)
    if not changed:
        return n
    return replace(n, assigns=tuple(out))


def _widths_still_ok(a: Assign, expr: Expr, nets) -> bool:
    """A fold may narrow the rhs (e.g. x + 0 -> x); keep the original assign
    if the target/rhs width relation would break."""
    wt = a.target_width(nets)
    we = expr_width(expr, nets)
    if wt == we:
        return True
    return (wt == we + 1 and isinstance(expr, Binary) and expr.op in ARITH_OPS)


def _all_ones(width: int) -> int:
    return (1 << width) - 1


def _fold(e: Expr, nets) -> Expr:
    if isinstance(e, Unary):
        x = e.operand
        if isinstance(x, Unary):
            return x.operand  # double inversion
        return smart_not(x)  # folds constants and canonicalizes binaries
    if isinstance(e, Slice):
        if isinstance(e.operand, Const):
            return Const(e.width, (e.operand.value >> e.lsb) & _all_ones(e.width))
        if isinstance(e.operand, Ref):
            if e.lsb == 0 and e.msb == nets.get(e.operand.net, -1) - 1:
                return e.operand  # full-range select
        return e
    if isinstance(e, Concat):
        parts: list[Expr] = []
        for p in e.parts:
            if isinstance(p, Concat):
                parts.extend(p.parts)
            else:
                parts.append(p)
        merged: list[Expr] = []
        for p in parts:
            if merged and isinstance(p, Const) and isinstance(merged[-1], Const):
                hi = merged[-1]
                merged[-1] = Const(hi.width + p.width, (hi.value << p.width) | p.value)
            else:
                merged.append(p)
        if len(merged) == 1:
            return merged[0]
        return Concat(tuple(merged)) if tuple(merged) != e.parts else e
    if isinstance(e, Ternary):
        if isinstance(e.cond, Const):
            return e.then if e.cond.value else e.orelse
        if e.then == e.orelse:
            return e.then
        if isinstance(e.then, Const) and isinstance(e.orelse, Const) and e.then.width == 1:
            if e.then.value == 1 and e.orelse.value == 0:
                return e.cond
            if e.then.value == 0 and e.orelse.value == 1:
                return smart_not(e.cond)
        return e
    if isinstance(e, Binary):
        return _fold_binary(e, nets)
    return e


def _fold_binary(e: Binary, nets) -> Expr:
    l, r = e.lhs, e.rhs
    if e.op in ("NAND", "NOR", "XNOR"):
        base = {"NAND": "AND", "NOR": "OR", "XNOR": "XOR"}[e.op]
        inner = _fold_binary(Binary(base, l, r), nets)
        if inner != Binary(base, l, r):
            return smart_not(inner)
        return e
    if e.op in ARITH_OPS:
        if isinstance(l, Const) and isinstance(r, Const):
            w = max(l.width, r.width)
            exact = l.value + r.value if e.op == "ADD" else l.value - r.value
            if 0 <= exact < (1 << w):
                return Const(w, exact)  # no carry/borrow can escape any context
            return e
        # x + 0 and x - 0 are exact at any context width; fold only when the
        # zero is not wider than x (folding must never narrow the node).
        if isinstance(r, Const) and r.value == 0 and r.width <= expr_width(l, nets):
            return l
        if e.op == "ADD" and isinstance(l, Const) and l.value == 0 \
                and l.width <= expr_width(r, nets):
            return r
        return e

    w = expr_width(e, nets)
    if isinstance(l, Const) and isinstance(r, Const):
        if e.op == "AND":
            return Const(w, l.value & r.value)
        if e.op == "OR":
            return Const(w, l.value | r.value)
        return Const(w, l.value ^ r.value)  # XOR
    if e.op == "AND":
        for c, other in ((l, r), (r, l)):
            if isinstance(c, Const):
                if c.value == 0:
                    return Const(w, 0)
                if c.value == _all_ones(w):
                    return other
        if l == r:
            return l
        return e
    if e.op == "OR":
        for c, other in ((l, r), (r, l)):
            if isinstance(c, Const):
                if c.value == _all_ones(w):
                    return Const(w, _all_ones(w))
                if c.value == 0:
                    return other
        if l == r:
            return l
        return e
    # XOR: flatten the chain, cancel equal operands pairwise, and combine all
    # constants into one mask. This is the rule that dissolves trigger
    # cascades once their intermediate wires have been inlined.
    operands: list[Expr] = []

    def flatten(x: Expr):
        if isinstance(x, Binary) and x.op == "XOR":
            flatten(x.lhs)
            flatten(x.rhs)
        else:
            operands.append(x)

    flatten(e)
    const_mask = 0
    kept: list[Expr] = []
    for x in operands:
        if isinstance(x, Const):
            const_mask ^= x.value
        elif x in kept:
            kept.remove(x)  # x ^ x cancels
        else:
            kept.append(x)
    if not kept:
        return Const(w, const_mask)
    result = kept[0]
    for x in kept[1:]:
        result = Binary("XOR", result, x)
    if const_mask == _all_ones(w):
        result = smart_not(result)
    elif const_mask:
        result = Binary("XOR", result, Const(w, const_mask))
    return result if result != e else e


# ---------------------------------------------------------------------------
# structural passes


def _use_stats(n: Netlist):
    """Read statistics per net: whole-net read count, per-range read counts,
    and which assigns read it at all."""
    whole: dict[str, int] = {}
    ranged: dict[tuple[str, int, int], int] = {}
    readers: dict[str, set[int]] = {}
    for i, a in enumerate(n.assigns):
        for net, msb, lsb in expr_reads(a.expr):
            readers.setdefault(net, set()).add(i)
            if msb is None:
                whole[net] = whole.get(net, 0) + 1
            else:
                key = (net, msb, lsb)
                ranged[key] = ranged.get(key, 0) + 1
    return whole, ranged, readers


def _driver_map(n: Netlist):
    """For each net, the assign indices driving any of its bits."""
    drivers: dict[str, list[int]] = {}
    for i, a in enumerate(n.assigns):
        for t in a.targets:
            drivers.setdefault(t.net, []).append(i)
    return drivers


def _is_whole(t: LValue, nets) -> bool:
    if t.msb is None:
        return True
    return t.lsb == 0 and t.msb == nets[t.net] - 1


def _inline_single_use(n: Netlist) -> Netlist:
    """Substitute single-use wires into their lone read site. Whole-net form:
    `w = expr; y = f(w)` becomes `y = f(expr)`. Exact-range form handles the
    per-bit wires of bit-granularity cascades. ADD/SUB-rooted expressions are
    never inlined (context-width hazard)."""
    whole, ranged, readers = _use_stats(n)
    drivers = _driver_map(n)
    ports = {p.name for p in n.ports}

    replaced: dict[int, list[tuple[Expr, Expr]]] = {}
    dropped: set[int] = set()
    touched: set[int] = set()

    for di, a in enumerate(n.assigns):
        if di in touched:
            continue
        if len(a.targets) != 1:
            continue
        t = a.targets[0]
        name = t.net
        if name in ports:
            continue
        if isinstance(a.expr, Binary) and a.expr.op in ARITH_OPS:
            continue
        if _is_whole(t, n.nets):
            if len(drivers.get(name, [])) != 1:
                continue
            if whole.get(name, 0) != 1 or any(k[0] == name for k in ranged):
                continue
            old: Expr = Ref(name)
        else:
            # Other bits of the net may be driven and read elsewhere; only
            # this exact range must be read exactly once and nowhere else.
            key = (name, t.msb, t.lsb)
            if ranged.get(key, 0) != 1 or whole.get(name, 0) != 0:
                continue
            if any(k[0] == name and k != key and _overlaps(k, key) for k in ranged):
                continue
            old = Slice(Ref(name), t.msb, t.lsb)
        reader_set = {i for i in readers.get(name, set())
                      if _count_occurrences(n.assigns[i].expr, old)}
        if len(reader_set) != 1:
            continue
        ri = reader_set.pop()
        if ri == di or ri in touched or ri in dropped:
            continue
        if _count_occurrences(n.assigns[ri].expr, old) != 1:
            continue
        replaced.setdefault(ri, []).append((old, a.expr))
        dropped.add(di)
        touched.add(ri)
        touched.add(di)

    if not dropped:
        return n
    new_assigns: list[Assign] = []
    for i, a in enumerate(n.assigns):
        if i in dropped:
            continue
        for old, new in replaced.get(i, ()):
            a = replace(a, expr=_substitute(a.expr, old, new))
        new_assigns.append(a)
    # Fully-undriven wires left behind are collected by the dead-net pass.
    return replace(n, assigns=tuple(new_assigns))


def _overlaps(a, b) -> bool:
    return not (a[2] > b[1] or b[2] > a[1])  # (net, msb, lsb) ranges


def _count_occurrences(e: Expr, target: Expr) -> int:
    return sum(1 for s in iter_subexprs(e) if s == target)


def _substitute(e: Expr, old: Expr, new: Expr) -> Expr:
    if e == old:
        return new
    return map_expr(e, lambda x: new if x == old else x)


def _collapse_buffers(n: Netlist) -> Netlist:
    """`t = w` where wire w is read only by that buffer: retarget w's driving
    assigns onto t (range-shifted if the buffer wrote a part of t) and drop
    both the buffer and w. Safe for ADD/SUB drivers; nothing is inlined."""
    whole, ranged, readers = _use_stats(n)
    ports = {p.name for p in n.ports}

    for bi, b in enumerate(n.assigns):
        if len(b.targets) != 1 or not isinstance(b.expr, Ref):
            continue
        w = b.expr.net
        if w in ports or w not in n.nets:
            continue
        t = b.targets[0]
        if whole.get(w, 0) != 1 or any(k[0] == w for k in ranged):
            continue
        if readers.get(w) != {bi}:
            continue
        if t.width(n.nets) != n.nets[w]:
            continue
        offset = 0 if t.msb is None else t.lsb
        new_assigns: list[Assign] = []
        for i, a in enumerate(n.assigns):
            if i == bi:
                continue
            new_targets = []
            for lv in a.targets:
                if lv.net == w:
                    lo, hi = lv.bits(n.nets)
                    new_targets.append(LValue(t.net, hi + offset, lo + offset)
                                       if (t.msb is not None or lv.msb is not None)
                                       else LValue(t.net))
                else:
                    new_targets.append(lv)
            new_assigns.append(replace(a, targets=tuple(new_targets)))
        nets = dict(n.nets)
        del nets[w]
        return replace(n, nets=nets, assigns=tuple(new_assigns))
    return n


def _coalesce_bit_buffers(n: Netlist) -> Netlist:
    """W single-bit copies `o[j] = w[j]` covering every bit become `o = w`."""
    drivers = _driver_map(n)
    for name, width in n.nets.items():
        idxs = drivers.get(name, [])
        if len(idxs) != width or width < 2:
            continue
        source = None
        per_bit: dict[int, int] = {}
        ok = True
        for i in idxs:
            a = n.assigns[i]
            if len(a.targets) != 1 or a.targets[0].net != name:
                ok = False
                break
            t = a.targets[0]
            if t.msb is None or t.msb != t.lsb:
                ok = False
                break
            e = a.expr
            if not (isinstance(e, Slice) and isinstance(e.operand, Ref)
                    and e.msb == e.lsb == t.msb):
                ok = False
                break
            if source is None:
                source = e.operand.net
            if e.operand.net != source:
                ok = False
                break
            per_bit[t.msb] = i
        if not ok or source is None or set(per_bit) != set(range(width)):
            continue
        if n.nets.get(source) != width:
            continue
        first = min(idxs)
        new_assigns = []
        for i, a in enumerate(n.assigns):
            if i == first:
                new_assigns.append(Assign((LValue(name),), Ref(source),
                                          a.line, a.col))
            elif i in per_bit.values():
                continue
            else:
                new_assigns.append(a)
        return replace(n, assigns=tuple(new_assigns))
    return n


def _drop_dead(n: Netlist) -> Netlist:
    """Remove assigns and wires that cannot reach any output."""
    drivers = _driver_map(n)
    live_assigns: set[int] = set()
    work = [p.name for p in n.outputs]
    seen_nets = set(work)
    while work:
        net = work.pop()
        for i in drivers.get(net, ()):
            if i in live_assigns:
                continue
            live_assigns.add(i)
            for rnet, _, _ in expr_reads(n.assigns[i].expr):
                if rnet not in seen_nets:
                    seen_nets.add(rnet)
                    work.append(rnet)
    assigns = tuple(a for i, a in enumerate(n.assigns) if i in live_assigns)
    needed = {p.name for p in n.ports}
    for a in assigns:
        for t in a.targets:
            needed.add(t.net)
        for net, _, _ in expr_reads(a.expr):
            needed.add(net)
    nets = {k: v for k, v in n.nets.items() if k in needed}
    if assigns == n.assigns and nets == n.nets:
        return n
    return replace(n, nets=nets, assigns=assigns)
