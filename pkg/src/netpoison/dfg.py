"""Dataflow-graph extraction and featurization.

A DFG has one node per operator instance, constant literal, primary input,
and primary output; edges run operand -> operator, toward the output roots.
Whole-net references are wires, not nodes (a pure buffer module is just
INPUT -> OUTPUT), and a bit-select read of a range that has its own exact
driving assign connects straight to that driver. Construction is
demand-driven from the outputs, so every node reaches a root.

`featurize` turns a DFG into the fixed d=16 one-hot node-kind matrix plus a
symmetrized binary adjacency; node order is ascending node id.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

import numpy as np

from .netlist import (
    Binary,
    Concat,
    Const,
    Expr,
    Netlist,
    Ref,
    Slice,
    Ternary,
    Unary,
)

__all__ = [
    "NODE_KINDS",
    "FEATURE_DIM",
    "DfgNode",
    "Dfg",
    "build_dfg",
    "FeaturizedGraph",
    "featurize",
    "khop_subgraph",
    "dfg_to_text",
]

NODE_KINDS = (
    "INPUT", "OUTPUT", "CONST",
    "AND", "OR", "NAND", "NOR", "XOR", "XNOR", "NOT", "BUF",
    "ADD", "SUB", "MUX", "CONCAT", "SLICE",
)
FEATURE_DIM = len(NODE_KINDS)
_KIND_INDEX = {k: i for i, k in enumerate(NODE_KINDS)}


@dataclass(frozen=True)
class DfgNode:
    id: int
    kind: str
    label: str

    def __post_init__(self):
        if self.kind not in _KIND_INDEX:
            raise ValueError(f"unknown node kind {self.kind!r}")


@dataclass
class Dfg:
    nodes: list[DfgNode]
    edges: list[tuple[int, int]]

    def __post_init__(self):
        self._by_id = {n.id: n for n in self.nodes}

    def node(self, node_id: int) -> DfgNode:
        return self._by_id[node_id]

    @property
    def roots(self) -> list[int]:
        """Nodes with no outgoing edge (the OUTPUT nodes of a full build)."""
        srcs = {s for s, _ in self.edges}
        return [n.id for n in self.nodes if n.id not in srcs]

    @property
    def leaves(self) -> list[int]:
        dsts = {d for _, d in self.edges}
        return [n.id for n in self.nodes if n.id not in dsts]

    def kind_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for n in self.nodes:
            out[n.kind] = out.get(n.kind, 0) + 1
        return out


class _Builder:
    def __init__(self, n: Netlist):
        self.n = n
        self.nodes: list[DfgNode] = []
        self.edges: list[tuple[int, int]] = []
        self.input_node: dict[str, int] = {}
        self.assign_root: dict[int, int] = {}
        self.element_producer: dict[tuple[int, int], int] = {}
        self.combiner: dict[str, int] = {}
        # Per net: (lo, hi, assign index, element index), MSB element first.
        self.driver_elems: dict[str, list[tuple[int, int, int, int]]] = {}
        for ai, a in enumerate(n.assigns):
            pos = a.target_width(n.nets)
            for ei, t in enumerate(a.targets):
                w = t.width(n.nets)
                pos -= w
                lo, hi = t.bits(n.nets)
                self.driver_elems.setdefault(t.net, []).append((lo, hi, ai, ei))
        for elems in self.driver_elems.values():
            elems.sort(key=lambda x: -x[0])

    def new(self, kind: str, label: str) -> int:
        node_id = len(self.nodes)
        self.nodes.append(DfgNode(node_id, kind, label))
        return node_id

    def edge(self, src: int, dst: int):
        self.edges.append((src, dst))

    # -- producers ----------------------------------------------------------

    def root(self, ai: int) -> int:
        if ai not in self.assign_root:
            self.assign_root[ai] = self.walk(self.n.assigns[ai].expr)
        return self.assign_root[ai]

    def producer(self, ai: int, ei: int) -> int:
        """Node producing the value of one lvalue element of an assign."""
        a = self.n.assigns[ai]
        if len(a.targets) == 1:
            return self.root(ai)
        key = (ai, ei)
        if key not in self.element_producer:
            root = self.root(ai)
            pos = a.target_width(self.n.nets)
            window = None
            for i, t in enumerate(a.targets):
                w = t.width(self.n.nets)
                pos -= w
                if i == ei:
                    window = (pos, pos + w - 1)
            lo, hi = window
            t = a.targets[ei]
            label = t.net if t.msb is None else f"{t.net}[{t.msb}:{t.lsb}]"
            sid = self.new("SLICE", label)
            self.edge(root, sid)
            self.element_producer[key] = sid
        return self.element_producer[key]

    def net_source(self, net: str) -> int:
        """Node producing the whole value of a net."""
        port = self.n.port(net)
        if port is not None and port.direction == "input":
            if net not in self.input_node:
                self.input_node[net] = self.new("INPUT", net)
            return self.input_node[net]
        elems = self.driver_elems.get(net, [])
        if len(elems) == 1 and elems[0][0] == 0 and elems[0][1] == self.n.nets[net] - 1:
            _, _, ai, ei = elems[0]
            return self.producer(ai, ei)
        # Bits come from several assigns: a shared CONCAT joins them.
        if net not in self.combiner:
            parts = [self.producer(ai, ei) for _, _, ai, ei in elems]
            cid = self.new("CONCAT", net)
            for pid in parts:
                self.edge(pid, cid)
            self.combiner[net] = cid
        return self.combiner[net]

    def bit_source(self, net: str, msb: int, lsb: int) -> int:
        """Node producing net[msb:lsb]; a fresh SLICE unless some assign
        drives exactly that range."""
        for lo, hi, ai, ei in self.driver_elems.get(net, []):
            if lo == lsb and hi == msb:
                return self.producer(ai, ei)
        src = self.net_source(net)
        label = f"{net}[{msb}]" if msb == lsb else f"{net}[{msb}:{lsb}]"
        sid = self.new("SLICE", label)
        self.edge(src, sid)
        return sid

    # -- expression walk ----------------------------------------------------

    def walk(self, e: Expr) -> int:
        if isinstance(e, Const):
            return self.new("CONST", f"{e.width}'h{e.value:x}")
        if isinstance(e, Ref):
            return self.net_source(e.net)
        if isinstance(e, Slice):
            return self.bit_source(e.operand.net, e.msb, e.lsb)
        if isinstance(e, Unary):
            src = self.walk(e.operand)
            nid = self.new("NOT", "not")
            self.edge(src, nid)
            return nid
        if isinstance(e, Binary):
            lhs = self.walk(e.lhs)
            rhs = self.walk(e.rhs)
            nid = self.new(e.op, e.op.lower())
            self.edge(lhs, nid)
            self.edge(rhs, nid)
            return nid
        if isinstance(e, Ternary):
            cond = self.walk(e.cond)
            then = self.walk(e.then)
            orelse = self.walk(e.orelse)
            nid = self.new("MUX", "mux")
            self.edge(cond, nid)
            self.edge(then, nid)
            self.edge(orelse, nid)
            return nid
        if isinstance(e, Concat):
            parts = [self.walk(p) for p in e.parts]
            nid = self.new("CONCAT", "concat")
            for pid in parts:
                self.edge(pid, nid)
            return nid
        raise TypeError(f"cannot build DFG node for {type(e).__name__}")

    def build(self) -> Dfg:
        for port in self.n.outputs:
            elems = self.driver_elems.get(port.name, [])
            # A per-bit-driven output takes one edge per driver element; no
            # artificial combiner sits in front of an output root.
            sources = [self.producer(ai, ei) for _, _, ai, ei in elems]
            out_id = self.new("OUTPUT", port.name)
            for sid in sources:
                self.edge(sid, out_id)
        return Dfg(self.nodes, self.edges)


def build_dfg(n: Netlist) -> Dfg:
    """Extract the rooted DFG. Node ids are creation order and deterministic
    for a given netlist."""
    return _Builder(n).build()


# ---------------------------------------------------------------------------
# featurization


@dataclass
class FeaturizedGraph:
    """Symmetrized binary adjacency and one-hot kind features, rows ordered by
    ascending node id (ids recorded in `node_ids`)."""

    adjacency: np.ndarray
    features: np.ndarray
    node_ids: list[int]

    @property
    def num_nodes(self) -> int:
        return len(self.node_ids)


def featurize(g: Dfg) -> FeaturizedGraph:
    order = sorted(n.id for n in g.nodes)
    index = {nid: i for i, nid in enumerate(order)}
    n = len(order)
    adj = np.zeros((n, n), dtype=np.float64)
    for s, d in g.edges:
        i, j = index[s], index[d]
        adj[i, j] = 1.0
        adj[j, i] = 1.0
    feats = np.zeros((n, FEATURE_DIM), dtype=np.float64)
    for node in g.nodes:
        feats[index[node.id], _KIND_INDEX[node.kind]] = 1.0
    return FeaturizedGraph(adjacency=adj, features=feats, node_ids=order)


# ---------------------------------------------------------------------------
# subgraphs


def khop_subgraph(g: Dfg, root: Union[int, Iterable[int]], k: int) -> Dfg:
    """Induced subgraph of every node within undirected distance k of the
    root (or of any of several roots). Node ids, kinds, and labels are kept."""
    roots = [root] if isinstance(root, int) else list(root)
    for r in roots:
        if r not in g._by_id:
            raise KeyError(f"no node {r} in DFG")
    neighbors: dict[int, set[int]] = {n.id: set() for n in g.nodes}
    for s, d in g.edges:
        neighbors[s].add(d)
        neighbors[d].add(s)
    keep: set[int] = set(roots)
    frontier = set(roots)
    for _ in range(k):
        nxt: set[int] = set()
        for nid in frontier:
            nxt |= neighbors[nid]
        nxt -= keep
        if not nxt:
            break
        keep |= nxt
        frontier = nxt
    nodes = [n for n in g.nodes if n.id in keep]
    edges = [(s, d) for s, d in g.edges if s in keep and d in keep]
    return Dfg(nodes, edges)


# ---------------------------------------------------------------------------
# text export


def dfg_to_text(g: Dfg) -> str:
    """`node id kind label` and `edge src dst` records followed by the
    symmetrized adjacency as COO index pairs over the featurize row order."""
    feat = featurize(g)
    index = {nid: i for i, nid in enumerate(feat.node_ids)}
    lines = [f"# nodes {len(g.nodes)} edges {len(g.edges)}"]
    for n in sorted(g.nodes, key=lambda x: x.id):
        lines.append(f"node {n.id} {n.kind} {n.label}")
    for s, d in g.edges:
        lines.append(f"edge {s} {d}")
    coo = np.argwhere(feat.adjacency > 0)
    for i, j in coo:
        lines.append(f"adj {int(i)} {int(j)}")
    return "\n".join(lines) + "\n"
