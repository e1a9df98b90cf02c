"""Two-valued logic simulation, coverage, and equivalence checking.

Nets are simulated as uint64 vectors over a batch axis, one array element per
stimulus vector, so exhaustive sweeps and large random batches are single
numpy passes per assign. Net widths are capped at 63 bits (one spare bit for
the carry context of `{co, sum} = a + b` style assigns).

Equivalence is decided by simulation only: exhaustively for up to 18 total
input bits, by seeded random sampling above that. The random route never
claims equivalence; it returns a counterexample or `inconclusive`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Union

import numpy as np

from .netlist import (
    ARITH_OPS,
    Assign,
    Binary,
    Concat,
    Const,
    Netlist,
    Ref,
    Slice,
    Ternary,
    Unary,
    carry_form_width,
    assign_write_masks,
    expr_read_masks,
    expr_reads,
    expr_width,
)

__all__ = [
    "SimulationError",
    "EXHAUSTIVE_LIMIT",
    "MAX_SIM_WIDTH",
    "simulate",
    "batch_simulate",
    "exhaustive_input_arrays",
    "random_input_arrays",
    "CoverageReport",
    "measure_coverage",
    "EquivResult",
    "check_equivalence",
    "read_vectors",
    "write_vectors",
]

EXHAUSTIVE_LIMIT = 18
MAX_SIM_WIDTH = 63
_CHUNK = 1 << 14


class SimulationError(Exception):
    pass


def _u(x: int) -> np.uint64:
    return np.uint64(x)


def _mask(width: int) -> np.uint64:
    return np.uint64((1 << width) - 1)


class _Program:
    """A netlist compiled for batch evaluation: assigns in topological order
    plus per-assign carry-context widths and ternary branch sites."""

    def __init__(self, n: Netlist):
        for name, width in n.nets.items():
            if width > MAX_SIM_WIDTH:
                raise SimulationError(
                    f"net '{name}' is {width} bits; the simulator supports up to "
                    f"{MAX_SIM_WIDTH}")
        self.netlist = n
        self.order = _topo_assigns(n)
        self.ctx_width = [carry_form_width(a, n.nets) for a in n.assigns]
        # (assign index, ordinal within assign) for every ternary, preorder.
        self.branch_sites: list[tuple[int, int]] = []
        for i, a in enumerate(n.assigns):
            for k, _ in enumerate(_ternaries(a.expr)):
                self.branch_sites.append((i, k))

    def input_ports(self):
        return self.netlist.inputs


def _ternaries(e):
    out = []

    def walk(x):
        if isinstance(x, Ternary):
            out.append(x)
            walk(x.cond)
            walk(x.then)
            walk(x.orelse)
        elif isinstance(x, (Unary, Slice)):
            walk(x.operand)
        elif isinstance(x, Binary):
            walk(x.lhs)
            walk(x.rhs)
        elif isinstance(x, Concat):
            for p in x.parts:
                walk(p)

    walk(e)
    return out


def _topo_assigns(n: Netlist) -> list[int]:
    # Bit-level edges: a per-bit chain such as a ripple carry reads only
    # bits that earlier assigns drove, and the incremental OR composition
    # in _run_chunk makes those bits valid as soon as their driver ran.
    reads = [expr_read_masks(a.expr, n.nets) for a in n.assigns]
    writes = [assign_write_masks(a, n.nets) for a in n.assigns]
    writer_of: dict[str, list[int]] = {}
    for i, masks in enumerate(writes):
        for net in masks:
            writer_of.setdefault(net, []).append(i)
    out_edges: dict[int, list[int]] = {i: [] for i in range(len(n.assigns))}
    indeg = [0] * len(n.assigns)
    for j, rmasks in enumerate(reads):
        seen = set()
        for net, mask in rmasks.items():
            for i in writer_of.get(net, ()):
                if writes[i][net] & mask and (i, j) not in seen:
                    seen.add((i, j))
                    out_edges[i].append(j)
                    indeg[j] += 1
    queue = [i for i in range(len(n.assigns)) if indeg[i] == 0]
    order: list[int] = []
    while queue:
        queue.sort(reverse=True)
        i = queue.pop()
        order.append(i)
        for j in out_edges[i]:
            indeg[j] -= 1
            if indeg[j] == 0:
                queue.append(j)
    if len(order) != len(n.assigns):
        raise SimulationError("netlist has a combinational cycle")
    return order


def _eval(e, env, nets, ctx: Optional[int], branch_seen, site_iter):
    """Evaluate one expression over the batch. `ctx` is the carry-context
    width and propagates only through ADD/SUB operands."""
    if isinstance(e, Const):
        return _u(e.value)
    if isinstance(e, Ref):
        return env[e.net]
    if isinstance(e, Slice):
        base = env[e.operand.net]
        return (base >> _u(e.lsb)) & _mask(e.width)
    if isinstance(e, Unary):
        w = expr_width(e, nets)
        val = _eval(e.operand, env, nets, None, branch_seen, site_iter)
        return ~val & _mask(w)
    if isinstance(e, Binary):
        if e.op in ARITH_OPS:
            w = ctx if ctx is not None else expr_width(e, nets)
            lhs = _eval(e.lhs, env, nets, w if isinstance(e.lhs, Binary) and e.lhs.op in ARITH_OPS else None, branch_seen, site_iter)
            rhs = _eval(e.rhs, env, nets, w if isinstance(e.rhs, Binary) and e.rhs.op in ARITH_OPS else None, branch_seen, site_iter)
            if e.op == "ADD":
                return (lhs + rhs) & _mask(w)
            return (lhs - rhs) & _mask(w)
        lhs = _eval(e.lhs, env, nets, None, branch_seen, site_iter)
        rhs = _eval(e.rhs, env, nets, None, branch_seen, site_iter)
        if e.op == "AND":
            return lhs & rhs
        if e.op == "OR":
            return lhs | rhs
        if e.op == "XOR":
            return lhs ^ rhs
        w = expr_width(e, nets)
        if e.op == "XNOR":
            return ~(lhs ^ rhs) & _mask(w)
        if e.op == "NAND":
            return ~(lhs & rhs) & _mask(w)
        return ~(lhs | rhs) & _mask(w)  # NOR
    if isinstance(e, Ternary):
        site = next(site_iter)
        cond = _eval(e.cond, env, nets, None, branch_seen, site_iter)
        then = _eval(e.then, env, nets, None, branch_seen, site_iter)
        orelse = _eval(e.orelse, env, nets, None, branch_seen, site_iter)
        taken = cond != 0
        if branch_seen is not None:
            then_hit, else_hit = branch_seen.get(site, (False, False))
            branch_seen[site] = (then_hit or bool(taken.any()),
                                 else_hit or bool((~taken).any()))
        return np.where(taken, then, orelse)
    if isinstance(e, Concat):
        acc = None
        for p in e.parts:
            val = _eval(p, env, nets, None, branch_seen, site_iter)
            w = expr_width(p, nets)
            acc = val if acc is None else (acc << _u(w)) | val
        return acc
    raise SimulationError(f"cannot evaluate {type(e).__name__}")


def _run_chunk(prog: _Program, inputs: Mapping[str, np.ndarray], batch: int,
               branch_seen=None) -> dict[str, np.ndarray]:
    n = prog.netlist
    env: dict[str, np.ndarray] = {}
    for p in n.inputs:
        env[p.name] = inputs[p.name].astype(np.uint64, copy=False)
    zeros = np.zeros(batch, dtype=np.uint64)
    for name in n.nets:
        if name not in env:
            env[name] = zeros
    for i in prog.order:
        a = n.assigns[i]
        site_iter = ((i, k) for k in range(len(_ternaries(a.expr))))
        val = _eval(a.expr, env, n.nets, prog.ctx_width[i], branch_seen, site_iter)
        val = np.broadcast_to(np.asarray(val, dtype=np.uint64), (batch,))
        pos = a.target_width(n.nets)
        for t in a.targets:
            w = t.width(n.nets)
            pos -= w
            piece = (val >> _u(pos)) & _mask(w) if pos else val & _mask(w)
            lo, _ = t.bits(n.nets)
            contrib = piece << _u(lo) if lo else piece
            env[t.net] = env[t.net] | contrib
    return env


def _check_inputs(n: Netlist, inputs: Mapping[str, int]):
    for p in n.inputs:
        if p.name not in inputs:
            raise SimulationError(f"missing value for input '{p.name}'")
        v = inputs[p.name]
        if not 0 <= v < (1 << p.width):
            raise SimulationError(
                f"value {v} does not fit input '{p.name}' ({p.width} bits)")
    extra = set(inputs) - {p.name for p in n.inputs}
    if extra:
        raise SimulationError(f"unknown input(s): {sorted(extra)}")


def simulate(n: Netlist, inputs: Mapping[str, int],
             all_nets: bool = False) -> dict[str, int]:
    """Evaluate one stimulus vector; returns output values (or every net with
    `all_nets`)."""
    _check_inputs(n, inputs)
    prog = _Program(n)
    arrays = {k: np.array([v], dtype=np.uint64) for k, v in inputs.items()}
    env = _run_chunk(prog, arrays, 1)
    if all_nets:
        return {k: int(v[0]) for k, v in env.items()}
    return {p.name: int(env[p.name][0]) for p in n.outputs}


def batch_simulate(n: Netlist, inputs: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Evaluate a batch of stimulus vectors (uint64 arrays, equal lengths);
    returns arrays for every net."""
    prog = _Program(n)
    sizes = {v.shape[0] for v in inputs.values()} or {1}
    if len(sizes) != 1:
        raise SimulationError("input arrays differ in length")
    return _run_chunk(prog, inputs, sizes.pop())


# ---------------------------------------------------------------------------
# stimulus construction


def exhaustive_input_arrays(n: Netlist, lo: int = 0, hi: Optional[int] = None):
    """Input arrays for global indices [lo, hi). The first input port holds
    the least-significant index bits."""
    bits = n.input_bits()
    if hi is None:
        hi = 1 << bits
    idx = np.arange(lo, hi, dtype=np.uint64)
    out: dict[str, np.ndarray] = {}
    off = 0
    for p in n.inputs:
        out[p.name] = (idx >> _u(off)) & _mask(p.width)
        off += p.width
    return out


def random_input_arrays(n: Netlist, count: int, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    out = {}
    for p in n.inputs:
        out[p.name] = rng.integers(0, 1 << p.width, size=count, dtype=np.uint64)
    return out


def _vector_at(n: Netlist, index: int) -> dict[str, int]:
    out = {}
    off = 0
    for p in n.inputs:
        out[p.name] = (index >> off) & ((1 << p.width) - 1)
        off += p.width
    return out


# ---------------------------------------------------------------------------
# coverage


@dataclass
class CoverageReport:
    """Toggle coverage per net, branch-arm hits per ternary site, and the
    fraction of assigns exercised."""

    toggle: dict[str, float]
    branch: dict[tuple[int, int], tuple[bool, bool]]
    statement: float
    vectors: int

    @property
    def toggle_mean(self) -> float:
        if not self.toggle:
            return 0.0
        return sum(self.toggle.values()) / len(self.toggle)

    @property
    def branch_coverage(self) -> float:
        """Fraction of ternary arms (then/else) exercised; 1.0 when there are
        no ternaries."""
        if not self.branch:
            return 1.0
        hits = sum(int(t) + int(e) for t, e in self.branch.values())
        return hits / (2 * len(self.branch))

    def format_text(self) -> str:
        lines = [f"vectors {self.vectors}",
                 f"statement {self.statement:.6f}",
                 f"branch {self.branch_coverage:.6f}"]
        for (ai, ti), (th, el) in sorted(self.branch.items()):
            lines.append(f"ternary a{ai}.t{ti} then={int(th)} else={int(el)}")
        for net in sorted(self.toggle):
            lines.append(f"toggle {net} {self.toggle[net]:.6f}")
        return "\n".join(lines) + "\n"


VectorSet = Union[Iterable[Mapping[str, int]], Mapping[str, np.ndarray]]


def measure_coverage(n: Netlist, vectors: VectorSet) -> CoverageReport:
    """Simulate a vector set and report toggle/branch/statement coverage.

    Toggle coverage of a net is the fraction of its bits observed at both 0
    and 1 across the whole set. Accepts a list of name->value dicts or a dict
    of equal-length numpy arrays; large array sets are evaluated in chunks.
    """
    prog = _Program(n)
    if isinstance(vectors, Mapping):
        arrays = {k: np.asarray(v, dtype=np.uint64) for k, v in vectors.items()}
    else:
        vecs = list(vectors)
        for v in vecs:
            _check_inputs(n, v)
        arrays = {p.name: np.array([v[p.name] for v in vecs], dtype=np.uint64)
                  for p in n.inputs}
    counts = {len(v) for v in arrays.values()} or {0}
    total = counts.pop()
    if total == 0:
        raise SimulationError("empty vector set")

    ones = {name: 0 for name in n.nets}
    zeros = {name: 0 for name in n.nets}
    branch_seen: dict[tuple[int, int], tuple[bool, bool]] = {
        s: (False, False) for s in prog.branch_sites}
    for lo in range(0, total, _CHUNK):
        hi = min(lo + _CHUNK, total)
        chunk = {k: v[lo:hi] for k, v in arrays.items()}
        env = _run_chunk(prog, chunk, hi - lo, branch_seen)
        for name, width in n.nets.items():
            vals = env[name]
            ones[name] |= int(np.bitwise_or.reduce(vals)) if vals.size else 0
            zeros[name] |= int(np.bitwise_or.reduce(~vals & _mask(width))) if vals.size else 0

    toggle = {}
    for name, width in n.nets.items():
        both = ones[name] & zeros[name]
        toggle[name] = bin(both).count("1") / width
    # Continuous assigns all execute on every vector, so one vector suffices.
    statement = 1.0
    return CoverageReport(toggle=toggle, branch=branch_seen,
                          statement=statement, vectors=total)


# ---------------------------------------------------------------------------
# equivalence


@dataclass(frozen=True)
class EquivResult:
    verdict: str  # "equivalent" | "counterexample" | "inconclusive"
    counterexample: Optional[dict[str, int]]
    vectors_checked: int
    mode: str  # "exhaustive" | "random"

    @property
    def equivalent(self) -> bool:
        return self.verdict == "equivalent"


def check_equivalence(a: Netlist, b: Netlist, mode: str = "auto",
                      count: int = 10000, seed: int = 0,
                      limit: int = EXHAUSTIVE_LIMIT) -> EquivResult:
    """Compare two netlists with identical port signatures.

    `mode`: "exhaustive" (allowed only up to `limit` total input bits),
    "random" (seeded sampling; never claims equivalence), or "auto" (pick
    exhaustive when it fits). Counterexamples are deterministic: the lowest
    enumeration index, or the first hit in the seeded stream.
    """
    sig_a = [(p.name, p.direction, p.width) for p in a.ports]
    sig_b = [(p.name, p.direction, p.width) for p in b.ports]
    if sig_a != sig_b:
        raise SimulationError(f"port signatures differ: {sig_a} vs {sig_b}")
    bits = a.input_bits()
    if mode == "auto":
        mode = "exhaustive" if bits <= limit else "random"
    if mode == "exhaustive" and bits > limit:
        raise SimulationError(
            f"{bits} input bits exceed the exhaustive limit of {limit}; "
            f"use random mode")
    if mode not in ("exhaustive", "random"):
        raise SimulationError(f"unknown mode {mode!r}")

    prog_a, prog_b = _Program(a), _Program(b)
    outputs = [p.name for p in a.outputs]

    def compare(arrays, batch):
        env_a = _run_chunk(prog_a, arrays, batch)
        env_b = _run_chunk(prog_b, arrays, batch)
        for name in outputs:
            neq = env_a[name] != env_b[name]
            if neq.any():
                return int(np.argmax(neq))
        return None

    if mode == "exhaustive":
        total = 1 << bits
        checked = 0
        for lo in range(0, total, _CHUNK):
            hi = min(lo + _CHUNK, total)
            arrays = exhaustive_input_arrays(a, lo, hi)
            bad = compare(arrays, hi - lo)
            if bad is not None:
                return EquivResult("counterexample", _vector_at(a, lo + bad),
                                   checked + bad + 1, "exhaustive")
            checked = hi
        return EquivResult("equivalent", None, total, "exhaustive")

    rng = np.random.default_rng(seed)
    checked = 0
    while checked < count:
        batch = min(_CHUNK, count - checked)
        arrays = {p.name: rng.integers(0, 1 << p.width, size=batch, dtype=np.uint64)
                  for p in a.inputs}
        bad = compare(arrays, batch)
        if bad is not None:
            vec = {p.name: int(arrays[p.name][bad]) for p in a.inputs}
            return EquivResult("counterexample", vec, checked + bad + 1, "random")
        checked += batch
    return EquivResult("inconclusive", None, checked, "random")


# ---------------------------------------------------------------------------
# stimulus files: one vector per line, `name=hex` pairs


def write_vectors(path, vectors: Iterable[Mapping[str, int]]):
    with open(path, "w", encoding="utf-8") as fh:
        for vec in vectors:
            fh.write(" ".join(f"{k}={v:x}" for k, v in vec.items()) + "\n")


def read_vectors(path) -> list[dict[str, int]]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            vec = {}
            for part in line.split():
                if "=" not in part:
                    raise SimulationError(
                        f"{path}:{lineno}: expected name=hex, found {part!r}")
                name, _, digits = part.partition("=")
                try:
                    vec[name] = int(digits, 16)
                except ValueError:
                    raise SimulationError(
                        f"{path}:{lineno}: bad hex value {digits!r} for {name}")
            out.append(vec)
    return out
