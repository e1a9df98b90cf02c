"""DFG extraction, featurization, and k-hop subgraph tests."""

import numpy as np
import pytest

from netpoison.benchgen import gen_suite
from netpoison.dfg import (
    FEATURE_DIM,
    NODE_KINDS,
    build_dfg,
    dfg_to_text,
    featurize,
    khop_subgraph,
)
from netpoison.parser import parse_netlist

BUF = "module b(input a, output y);\nassign y = a;\nendmodule\n"


def _reaches_root(g):
    """Every node must have a directed path to some root."""
    out_edges = {}
    for s, d in g.edges:
        out_edges.setdefault(s, []).append(d)
    roots = set(g.roots)

    def walk(nid, seen):
        if nid in roots:
            return True
        for nxt in out_edges.get(nid, ()):
            if nxt not in seen:
                seen.add(nxt)
                if walk(nxt, seen):
                    return True
        return False

    return all(walk(n.id, {n.id}) for n in g.nodes)


class TestBuild:
    def test_buffer_is_two_nodes(self):
        g = build_dfg(parse_netlist(BUF))
        assert [(n.kind, n.label) for n in g.nodes] == [
            ("INPUT", "a"), ("OUTPUT", "y")]
        assert g.edges == [(0, 1)]

    def test_mux_kind(self, mux2):
        g = build_dfg(mux2)
        assert g.kind_counts() == {"INPUT": 3, "MUX": 1, "OUTPUT": 1}

    def test_carry_form_adder_structure(self, full_adder):
        # {co, s} = a + b + ci: two ADD instances, one SLICE per target bit.
        g = build_dfg(full_adder)
        assert g.kind_counts() == {"INPUT": 3, "ADD": 2, "SLICE": 2, "OUTPUT": 2}
        assert sorted(g.node(r).label for r in g.roots) == ["co", "s"]

    def test_one_node_per_operator_instance(self, ripple2):
        # a[0] is read three times, so three SLICE nodes; c[1] has an exact
        # per-bit driver, so its reads attach straight to that driver.
        g = build_dfg(ripple2)
        counts = g.kind_counts()
        assert counts["SLICE"] == 12
        assert counts["XOR"] == 6 and counts["AND"] == 4 and counts["OR"] == 2

    def test_every_node_reaches_a_root(self):
        records = gen_suite(["adder:3", "mux-tree:2", "alu-slice:2"], seed=21,
                            clean_variants=2, trojan_variants=2, verify=False)
        for r in records:
            g = build_dfg(r.netlist)
            assert _reaches_root(g), r.name

    def test_roots_are_outputs(self, ripple2):
        g = build_dfg(ripple2)
        assert all(g.node(r).kind == "OUTPUT" for r in g.roots)

    def test_leaves_have_no_incoming(self, full_adder):
        g = build_dfg(full_adder)
        dsts = {d for _, d in g.edges}
        assert all(nid not in dsts for nid in g.leaves)

    def test_const_node(self):
        g = build_dfg(parse_netlist(
            "module m(input [1:0] a, output [1:0] y);\n"
            "assign y = a ^ 2'h3;\nendmodule\n"))
        assert g.kind_counts()["CONST"] == 1


class TestFeaturize:
    def test_feature_dim_matches_kinds(self):
        assert FEATURE_DIM == len(NODE_KINDS) == 16

    def test_one_hot_rows(self, ripple2):
        f = featurize(build_dfg(ripple2))
        assert f.features.shape == (f.num_nodes, FEATURE_DIM)
        assert np.array_equal(f.features.sum(axis=1), np.ones(f.num_nodes))

    def test_column_sums_are_kind_counts(self, ripple2):
        g = build_dfg(ripple2)
        f = featurize(g)
        counts = g.kind_counts()
        for j, kind in enumerate(NODE_KINDS):
            assert f.features[:, j].sum() == counts.get(kind, 0)

    def test_adjacency_symmetric_binary(self, ripple2):
        f = featurize(build_dfg(ripple2))
        assert np.array_equal(f.adjacency, f.adjacency.T)
        assert set(np.unique(f.adjacency)) <= {0.0, 1.0}
        assert np.all(np.diag(f.adjacency) == 0)

    def test_adjacency_matches_edge_list(self, mux2):
        g = build_dfg(mux2)
        f = featurize(g)
        index = {nid: i for i, nid in enumerate(f.node_ids)}
        expect = np.zeros_like(f.adjacency)
        for s, d in g.edges:
            expect[index[s], index[d]] = 1.0
            expect[index[d], index[s]] = 1.0
        assert np.array_equal(f.adjacency, expect)

    def test_row_order_is_ascending_id(self, full_adder):
        f = featurize(build_dfg(full_adder))
        assert f.node_ids == sorted(f.node_ids)

    def test_deterministic(self, ripple2):
        a = featurize(build_dfg(ripple2))
        b = featurize(build_dfg(ripple2))
        assert np.array_equal(a.adjacency, b.adjacency)
        assert np.array_equal(a.features, b.features)
        assert a.node_ids == b.node_ids


class TestKhop:
    def test_zero_hops_is_root_only(self, ripple2):
        g = build_dfg(ripple2)
        root = g.roots[0]
        sub = khop_subgraph(g, root, 0)
        assert [n.id for n in sub.nodes] == [root]
        assert sub.edges == []

    def test_subset_chain(self, ripple2):
        g = build_dfg(ripple2)
        root = g.roots[0]
        prev = set()
        for k in range(6):
            ids = {n.id for n in khop_subgraph(g, root, k).nodes}
            assert prev <= ids
            prev = ids
        # Ripple carry is connected: a large radius reaches everything.
        assert prev == {n.id for n in g.nodes}

    def test_kinds_and_labels_kept(self, mux2):
        g = build_dfg(mux2)
        sub = khop_subgraph(g, g.roots[0], 1)
        for n in sub.nodes:
            orig = g.node(n.id)
            assert (n.kind, n.label) == (orig.kind, orig.label)

    def test_induced_edges_only(self, ripple2):
        g = build_dfg(ripple2)
        sub = khop_subgraph(g, g.roots[0], 2)
        ids = {n.id for n in sub.nodes}
        assert all(s in ids and d in ids for s, d in sub.edges)
        kept = [(s, d) for s, d in g.edges if s in ids and d in ids]
        assert sorted(sub.edges) == sorted(kept)

    def test_multiple_roots_union(self, ripple2):
        g = build_dfg(ripple2)
        r1, r2 = g.roots[:2]
        both = {n.id for n in khop_subgraph(g, [r1, r2], 1).nodes}
        one = {n.id for n in khop_subgraph(g, r1, 1).nodes}
        two = {n.id for n in khop_subgraph(g, r2, 1).nodes}
        assert both == one | two

    def test_unknown_root_rejected(self, mux2):
        g = build_dfg(mux2)
        with pytest.raises(KeyError):
            khop_subgraph(g, 999, 2)


class TestTextExport:
    def test_header_and_determinism(self, ripple2):
        g = build_dfg(ripple2)
        text = dfg_to_text(g)
        assert text.splitlines()[0] == f"# nodes {len(g.nodes)} edges {len(g.edges)}"
        assert text == dfg_to_text(build_dfg(ripple2))

    def test_record_counts(self, mux2):
        g = build_dfg(mux2)
        lines = dfg_to_text(g).splitlines()
        assert sum(1 for ln in lines if ln.startswith("node ")) == len(g.nodes)
        assert sum(1 for ln in lines if ln.startswith("edge ")) == len(g.edges)
