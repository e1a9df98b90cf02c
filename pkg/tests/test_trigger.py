"""Trigger injection tests: spec validation, sizing, DFG growth accounting,
coverage behavior, and the even-cascade equivalence property."""

import json

import numpy as np
import pytest

from netpoison.dfg import build_dfg
from netpoison.optimize import optimize
from netpoison.parser import parse_netlist
from netpoison.sim import check_equivalence, exhaustive_input_arrays, measure_coverage
from netpoison.trigger import (
    STAGE_PREFIX,
    TriggerError,
    TriggerSpec,
    has_trigger,
    inject,
    make_trigger_spec,
    qualifying_injection_sites,
    select_injection_net,
    size_trigger,
)

# Output y is a pure buffer of t, so t is a qualifying injection site.
BUFFERED = (
    "module m(input [3:0] a, input [3:0] b, output [3:0] y);\n"
    "wire [3:0] t;\nassign t = a ^ b;\nassign y = t;\nendmodule\n"
)
DIRECT = (
    "module m(input [3:0] a, input [3:0] b, output [3:0] y);\n"
    "assign y = a ^ b;\nendmodule\n"
)


def _full_cov(n):
    return measure_coverage(n, exhaustive_input_arrays(n))


class TestSpec:
    def test_round_trip(self):
        spec = TriggerSpec(target="t", output="y", stages=6,
                           granularity="vector", mask=0x5)
        assert TriggerSpec.from_dict(spec.to_dict()) == spec

    def test_json_round_trip(self):
        spec = TriggerSpec(target="t", output="y", stages=8,
                           granularity="bit", mask=None)
        again = TriggerSpec.from_dict(json.loads(json.dumps(spec.to_dict())))
        assert again == spec

    def test_unknown_key_rejected(self):
        with pytest.raises(TriggerError, match="unknown"):
            TriggerSpec.from_dict({"target": "t", "output": "y",
                                   "stages": 2, "depth": 1})

    def test_missing_key_rejected(self):
        with pytest.raises(TriggerError, match="missing"):
            TriggerSpec.from_dict({"target": "t", "stages": 2})

    def test_defaults(self):
        spec = TriggerSpec.from_dict({"target": "t", "output": "y", "stages": 4})
        assert spec.granularity == "vector" and spec.mask is None

    def test_depth(self):
        assert TriggerSpec("t", "y", 6).depth(4) == 6
        assert TriggerSpec("t", "y", 8, "bit").depth(4) == 2


class TestSizing:
    def test_vector_sizing(self):
        # 20-node graph at phi=0.3 needs 6 cascade nodes; 2 nodes per level
        # gives 3 levels, rounded up to the even 4.
        assert size_trigger(0.3, 20) == 4
        assert size_trigger(0.05, 20) == 2  # floor of two levels
        assert size_trigger(1.0, 20) == 10

    def test_bit_sizing_counts_statements(self):
        # Width 4: each level is 4 statements and 8 nodes. phi=0.5 of a
        # 40-node graph needs 20 nodes -> 3 levels -> even 4 -> 16 statements.
        assert size_trigger(0.5, 40, "bit", 4) == 16

    def test_even_depth_always(self):
        for phi in (0.1, 0.25, 0.33, 0.8):
            for nodes in (7, 20, 55, 131):
                assert size_trigger(phi, nodes) % 2 == 0
                assert (size_trigger(phi, nodes, "bit", 4) // 4) % 2 == 0

    def test_bad_inputs(self):
        with pytest.raises(TriggerError, match="fraction"):
            size_trigger(0.0, 10)
        with pytest.raises(TriggerError, match="fraction"):
            size_trigger(1.5, 10)
        with pytest.raises(TriggerError):
            size_trigger(0.5, 0)
        with pytest.raises(TriggerError, match="granularity"):
            size_trigger(0.5, 10, "nibble")


class TestSiteSelection:
    def test_buffered_target_qualifies(self):
        n = parse_netlist(BUFFERED)
        sites = qualifying_injection_sites(n, _full_cov(n))
        assert ("t", "y") in sites and ("y", "y") in sites
        assert select_injection_net(n, _full_cov(n)) == "t"

    def test_direct_output_qualifies(self):
        n = parse_netlist(DIRECT)
        assert select_injection_net(n, _full_cov(n)) == "y"

    def test_no_site_without_full_toggle(self):
        n = parse_netlist(BUFFERED)
        cov = measure_coverage(n, [{"a": 0, "b": 0}, {"a": 1, "b": 0}])
        with pytest.raises(TriggerError, match="toggle coverage"):
            select_injection_net(n, cov)

    def test_make_trigger_spec(self):
        n = parse_netlist(BUFFERED)
        spec = make_trigger_spec(n, _full_cov(n), phi=0.5, mask=0x3)
        assert spec.target == "t" and spec.output == "y"
        assert spec.stages % 2 == 0 and spec.mask == 0x3
        inject(n, spec)  # must be applicable as produced


class TestSpecValidation:
    def _n(self):
        return parse_netlist(BUFFERED)

    def test_not_an_output(self):
        with pytest.raises(TriggerError, match="not an output"):
            inject(self._n(), TriggerSpec("t", "a", 4))

    def test_undeclared_target(self):
        with pytest.raises(TriggerError, match="not declared"):
            inject(self._n(), TriggerSpec("zz", "y", 4))

    def test_width_mismatch(self):
        n = parse_netlist(
            "module m(input [3:0] a, output y);\nwire t;\n"
            "assign t = a[0];\nassign y = t;\nendmodule\n")
        with pytest.raises(TriggerError, match="does not match"):
            inject(n, TriggerSpec("a", "y", 4))

    def test_target_must_feed_output(self):
        n = parse_netlist(
            "module m(input [3:0] a, input [3:0] b, output [3:0] y);\n"
            "wire [3:0] t;\nassign t = a & b;\nassign y = t ^ a;\nendmodule\n")
        with pytest.raises(TriggerError, match="directly drive"):
            inject(n, TriggerSpec("t", "y", 4))

    def test_odd_stages_rejected(self):
        with pytest.raises(TriggerError, match="even"):
            inject(self._n(), TriggerSpec("t", "y", 5))

    def test_bit_stages_must_be_multiple_of_width(self):
        with pytest.raises(TriggerError, match="multiple"):
            inject(self._n(), TriggerSpec("t", "y", 6, "bit"))

    def test_bit_depth_must_be_even(self):
        with pytest.raises(TriggerError, match="even"):
            inject(self._n(), TriggerSpec("t", "y", 12, "bit"))

    def test_mask_must_fit(self):
        with pytest.raises(TriggerError, match="mask"):
            inject(self._n(), TriggerSpec("t", "y", 4, mask=0x10))

    def test_reserved_prefix_collision(self):
        n = parse_netlist(
            f"module m(input a, output y);\nwire {STAGE_PREFIX}0;\n"
            f"assign {STAGE_PREFIX}0 = a;\nassign y = {STAGE_PREFIX}0;\nendmodule\n")
        with pytest.raises(TriggerError, match="reserved"):
            inject(n, TriggerSpec(f"{STAGE_PREFIX}0", "y", 4))


class TestInjection:
    def test_ports_unchanged(self):
        n = parse_netlist(BUFFERED)
        assert inject(n, TriggerSpec("t", "y", 6)).ports == n.ports

    def test_has_trigger(self):
        n = parse_netlist(BUFFERED)
        assert not has_trigger(n)
        assert has_trigger(inject(n, TriggerSpec("t", "y", 4)))

    def test_deterministic(self):
        n = parse_netlist(BUFFERED)
        spec = TriggerSpec("t", "y", 6, mask=0x9)
        assert inject(n, spec) == inject(n, spec)

    def test_vector_growth_accounting(self):
        n = parse_netlist(BUFFERED)
        g0 = build_dfg(n)
        for stages in (2, 4, 6, 10):
            g1 = build_dfg(inject(n, TriggerSpec("t", "y", stages, mask=0x5)))
            assert len(g1.nodes) - len(g0.nodes) == 2 * stages
            assert len(g1.edges) - len(g0.edges) == 2 * stages

    def test_bit_growth_accounting(self):
        # Bit granularity adds one SLICE per bit where the cascade taps the
        # bus; later levels read exactly-driven bits and need no SLICE.
        n = parse_netlist(BUFFERED)
        g0 = build_dfg(n)
        for stages in (8, 16):
            g1 = build_dfg(inject(n, TriggerSpec("t", "y", stages, "bit", 0x5)))
            assert len(g1.nodes) - len(g0.nodes) == 2 * stages + 4

    def test_direct_output_injection_growth(self):
        n = parse_netlist(DIRECT)
        g0 = build_dfg(n)
        g1 = build_dfg(inject(n, TriggerSpec("y", "y", 4)))
        assert len(g1.nodes) - len(g0.nodes) == 8

    def test_even_cascade_equivalence_property(self):
        # Random widths, masks, and even depths at both granularities.
        rng = np.random.default_rng(42)
        for _ in range(24):
            w = int(rng.integers(1, 5))
            src = (f"module m(input [{w - 1}:0] a, input [{w - 1}:0] b,"
                   f" output [{w - 1}:0] y);\n"
                   f"wire [{w - 1}:0] t;\nassign t = a ^ b;\n"
                   "assign y = t;\nendmodule\n")
            n = parse_netlist(src)
            depth = 2 * int(rng.integers(1, 7))
            mask = int(rng.integers(0, 1 << w))
            gran = "vector" if rng.integers(2) else "bit"
            stages = depth if gran == "vector" else depth * w
            inj = inject(n, TriggerSpec("t", "y", stages, gran, mask))
            res = check_equivalence(n, inj)
            assert res.equivalent, (w, depth, mask, gran)

    def test_odd_cascade_inverts(self):
        # Hand-built 3-stage all-ones cascade: odd inversion count negates.
        odd = parse_netlist(
            "module m(input [3:0] a, input [3:0] b, output [3:0] y);\n"
            "wire [3:0] t, s1, s2;\n"
            "assign t = a ^ b;\n"
            "assign s1 = t ^ 4'hF;\nassign s2 = s1 ^ 4'hF;\n"
            "assign y = s2 ^ 4'hF;\nendmodule\n")
        res = check_equivalence(parse_netlist(BUFFERED), odd)
        assert res.verdict == "counterexample"
        vec = res.counterexample
        plain = (vec["a"] ^ vec["b"]) & 0xF
        assert plain ^ 0xF != plain

    def test_cascade_nets_reach_full_toggle(self):
        n = parse_netlist(BUFFERED)
        inj = inject(n, TriggerSpec("t", "y", 12, mask=0x6))
        cov = measure_coverage(inj, exhaustive_input_arrays(inj))
        stage_nets = [k for k in inj.nets if k.startswith(STAGE_PREFIX)]
        assert len(stage_nets) == 11
        assert all(cov.toggle[k] == 1.0 for k in stage_nets)
        assert cov.toggle["y"] == 1.0

    def test_branch_coverage_unchanged(self, mux2):
        spec = TriggerSpec("y", "y", 4)
        inj = inject(mux2, spec)
        vecs = exhaustive_input_arrays(mux2)
        before = measure_coverage(mux2, vecs).branch_coverage
        after = measure_coverage(inj, vecs).branch_coverage
        assert before == after

    def test_dissolves_under_optimization(self):
        n = parse_netlist(BUFFERED)
        for spec in (TriggerSpec("t", "y", 6, mask=0x5),
                     TriggerSpec("t", "y", 8, "bit", 0xA),
                     TriggerSpec("t", "y", 2, mask=None)):
            assert optimize(inject(n, spec)) == optimize(n)

    def test_injected_netlist_emits_and_reparses(self):
        from netpoison.netlist import emit_netlist
        n = parse_netlist(BUFFERED)
        inj = inject(n, TriggerSpec("t", "y", 8, "bit", 0x3))
        assert parse_netlist(emit_netlist(inj)) == inj
