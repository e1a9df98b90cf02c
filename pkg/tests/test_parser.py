"""Parser tests.

Grammar coverage, emit/parse round-trip stability over a generated corpus,
and the rejection properties: mutated sources never crash with anything but
NetlistError, and sources violating the single-driver or acyclicity rules
are never accepted.
"""

import random

import pytest

from netpoison.benchgen import gen_suite
from netpoison.netlist import (
    Binary,
    Concat,
    Const,
    NetlistError,
    Ref,
    Slice,
    Ternary,
    Unary,
    emit_netlist,
)
from netpoison.parser import parse_netlist, parse_netlist_file


def _expr_of(src_rhs: str):
    """Parse a one-assign module and return the RHS expression."""
    text = (
        "module t(input [7:0] a, input [7:0] b, input [7:0] c,"
        " input [7:0] d, output [7:0] y);\n"
        f"assign y = {src_rhs};\n"
        "endmodule\n"
    )
    return parse_netlist(text).assigns[0].expr


class TestGrammar:
    def test_ansi_header(self):
        n = parse_netlist(
            "module m(input [3:0] a, output [3:0] y);\n"
            "assign y = a;\nendmodule\n"
        )
        assert [p.name for p in n.ports] == ["a", "y"]
        assert n.nets == {"a": 4, "y": 4}

    def test_body_direction_declarations(self):
        # ISCAS style: bare names in the header, directions in the body.
        n = parse_netlist(
            "module m(a, b, y);\n"
            "input a, b;\noutput y;\n"
            "assign y = a & b;\nendmodule\n"
        )
        assert [(p.name, p.direction) for p in n.ports] == [
            ("a", "input"), ("b", "input"), ("y", "output")]

    def test_wire_declarations_and_lists(self):
        n = parse_netlist(
            "module m(input a, output y);\n"
            "wire t1, t2;\nwire [2:0] v;\n"
            "assign t1 = a;\nassign t2 = t1;\n"
            "assign v = {a, t1, t2};\nassign y = v[1];\nendmodule\n"
        )
        assert n.nets["v"] == 3 and n.nets["t1"] == 1

    def test_concat_lvalue(self):
        n = parse_netlist(
            "module m(input [1:0] a, input [1:0] b, output [1:0] s, output co);\n"
            "assign {co, s} = a + b;\nendmodule\n"
        )
        tgt = n.assigns[0].targets
        assert [t.net for t in tgt] == ["co", "s"]

    @pytest.mark.parametrize("src,op", [
        ("a & b", "AND"), ("a | b", "OR"), ("a ^ b", "XOR"),
        ("a ~^ b", "XNOR"), ("a ^~ b", "XNOR"),
        ("a + b", "ADD"), ("a - b", "SUB"),
    ])
    def test_binary_operators(self, src, op):
        e = _expr_of(src)
        assert isinstance(e, Binary) and e.op == op

    def test_unary_not(self):
        e = _expr_of("~a")
        assert e == Unary("NOT", Ref("a"))

    def test_not_folds_through_binary_logic(self):
        # Parsing applies smart_not, so inverted gates stay canonical.
        assert _expr_of("~(a & b)") == Binary("NAND", Ref("a"), Ref("b"))
        assert _expr_of("~(a | b)") == Binary("NOR", Ref("a"), Ref("b"))
        assert _expr_of("~(a ^ b)") == Binary("XNOR", Ref("a"), Ref("b"))

    def test_double_not_preserved(self):
        assert _expr_of("~~a") == Unary("NOT", Unary("NOT", Ref("a")))

    def test_not_of_constant_folds(self):
        assert _expr_of("~8'hF0") == Const(8, 0x0F)

    def test_ternary(self):
        e = _expr_of("a[0] ? b : c")
        assert isinstance(e, Ternary)
        assert e.cond == Slice(Ref("a"), 0, 0)

    def test_ternary_condition_binds_loosest(self):
        e = _expr_of("a[0] | b[0] ? c : d")
        assert isinstance(e, Ternary) and isinstance(e.cond, Binary)

    def test_precedence_or_and(self):
        e = _expr_of("a | b & c")
        assert e == Binary("OR", Ref("a"), Binary("AND", Ref("b"), Ref("c")))

    def test_precedence_add_over_xor(self):
        e = _expr_of("a + b ^ c")
        assert e == Binary("XOR", Binary("ADD", Ref("a"), Ref("b")), Ref("c"))

    def test_left_associativity(self):
        e = _expr_of("a - b - c")
        assert e == Binary("SUB", Binary("SUB", Ref("a"), Ref("b")), Ref("c"))

    def test_parens_override(self):
        e = _expr_of("a & (b | c)")
        assert e == Binary("AND", Ref("a"), Binary("OR", Ref("b"), Ref("c")))

    def test_sized_constants(self):
        assert _expr_of("8'hFF") == Const(8, 255)
        assert _expr_of("8'b1010_1010") == Const(8, 0xAA)
        n = parse_netlist("module m(output y);\nassign y = 1'b0;\nendmodule\n")
        assert n.assigns[0].expr == Const(1, 0)

    def test_part_select(self):
        n = parse_netlist(
            "module m(input [7:0] a, output [3:0] y);\n"
            "assign y = a[5:2];\nendmodule\n")
        assert n.assigns[0].expr == Slice(Ref("a"), 5, 2)

    def test_concat_expr(self):
        e = _expr_of("{a[3:0], b[3:0]}")
        assert isinstance(e, Concat) and len(e.parts) == 2

    def test_comments_skipped(self):
        n = parse_netlist(
            "// line comment\n"
            "module m(input a, output y); /* inline */\n"
            "/* block\n   spanning lines */\n"
            "assign y = a; // trailing\n"
            "endmodule\n"
        )
        assert n.name == "m"


class TestLexErrors:
    def _diag(self, text):
        with pytest.raises(NetlistError) as exc:
            parse_netlist(text)
        return exc.value.diagnostics[0]

    def test_unexpected_character(self):
        d = self._diag("module m(input a, output y);\nassign y = a % a;\nendmodule\n")
        assert d.line == 2 and "unexpected character" in d.message

    def test_unterminated_block_comment(self):
        d = self._diag("module m(input a, output y); /* oops\nassign y = a;\n")
        assert "unterminated block comment" in d.message

    def test_unsupported_base(self):
        d = self._diag("module m(output [7:0] y);\nassign y = 8'd255;\nendmodule\n")
        assert "unsupported constant base" in d.message

    def test_constant_overflow(self):
        d = self._diag("module m(output [1:0] y);\nassign y = 2'h7;\nendmodule\n")
        assert "does not fit" in d.message

    def test_constant_without_digits(self):
        d = self._diag("module m(output y);\nassign y = 4'h;\nendmodule\n")
        assert "no digits" in d.message


class TestParseErrors:
    def _diag(self, text):
        with pytest.raises(NetlistError) as exc:
            parse_netlist(text)
        return exc.value.diagnostics[0]

    def test_missing_semicolon(self):
        d = self._diag("module m(input a, output y);\nassign y = a\nendmodule\n")
        assert "expected ';'" in d.message

    def test_unsized_decimal_in_expression(self):
        d = self._diag("module m(output [7:0] y);\nassign y = 255;\nendmodule\n")
        assert "unsized decimal constant" in d.message

    def test_unsized_decimal_allowed_as_index(self):
        n = parse_netlist(
            "module m(input [7:0] a, output y);\nassign y = a[7];\nendmodule\n")
        assert n.assigns[0].expr == Slice(Ref("a"), 7, 7)

    def test_missing_endmodule(self):
        d = self._diag("module m(input a, output y);\nassign y = a;\n")
        assert "endmodule" in d.message

    def test_text_after_endmodule(self):
        d = self._diag("module m(input a, output y);\nassign y = a;\nendmodule\nmodule")
        assert "after 'endmodule'" in d.message

    def test_duplicate_port_in_header(self):
        d = self._diag("module m(input a, input a, output y);\nassign y = a;\nendmodule\n")
        assert "duplicate port" in d.message

    def test_port_without_direction(self):
        d = self._diag("module m(a, y);\ninput a;\nassign y = a;\nendmodule\n")
        assert "no direction declaration" in d.message

    def test_body_declaration_of_unlisted_name(self):
        d = self._diag("module m(a, y);\ninput a, b;\noutput y;\nassign y = a;\nendmodule\n")
        assert "not listed in the module header" in d.message

    def test_duplicate_direction(self):
        d = self._diag(
            "module m(input a, output y);\ninput a;\nassign y = a;\nendmodule\n")
        assert "duplicate direction" in d.message

    def test_duplicate_wire(self):
        d = self._diag(
            "module m(input a, output y);\nwire t;\nwire t;\n"
            "assign t = a;\nassign y = t;\nendmodule\n")
        assert "duplicate declaration" in d.message

    def test_declaration_range_must_end_at_zero(self):
        d = self._diag("module m(input [3:1] a, output y);\nassign y = a[1];\nendmodule\n")
        assert "must be [msb:0]" in d.message

    def test_reversed_select(self):
        d = self._diag(
            "module m(input [3:0] a, output [1:0] y);\nassign y = a[1:2];\nendmodule\n")
        assert "reversed" in d.message

    def test_diagnostic_positions(self):
        # Column points at the offending token.
        with pytest.raises(NetlistError) as exc:
            parse_netlist("module m(input a, output y);\nassign y = ;\nendmodule\n")
        d = exc.value.diagnostics[0]
        assert (d.line, d.col) == (2, 12)


class TestValidationThroughParse:
    """Semantic rules are enforced on every parse, not as a separate pass."""

    def test_undeclared_net_rejected(self):
        with pytest.raises(NetlistError, match="undeclared"):
            parse_netlist("module m(input a, output y);\nassign y = q;\nendmodule\n")

    def test_double_driver_rejected(self):
        with pytest.raises(NetlistError, match="drivers"):
            parse_netlist(
                "module m(input a, output y);\n"
                "assign y = a;\nassign y = ~a;\nendmodule\n")

    def test_combinational_loop_rejected(self):
        with pytest.raises(NetlistError, match="[Cc]ycle|loop|depends"):
            parse_netlist(
                "module m(input a, output y);\nwire t;\n"
                "assign t = y;\nassign y = t & a;\nendmodule\n")

    def test_multiple_diagnostics_ordered(self):
        text = (
            "module m(input a, output y, output z);\n"
            "assign y = p;\n"
            "assign z = q;\n"
            "endmodule\n"
        )
        with pytest.raises(NetlistError) as exc:
            parse_netlist(text)
        diags = exc.value.diagnostics
        assert len(diags) >= 2
        assert [(d.line, d.col) for d in diags] == sorted(
            (d.line, d.col) for d in diags)

    def test_diagnostics_deterministic(self):
        text = (
            "module m(input a, output y, output z);\n"
            "assign y = p;\nassign z = q;\nendmodule\n"
        )
        msgs = []
        for _ in range(2):
            with pytest.raises(NetlistError) as exc:
                parse_netlist(text)
            msgs.append([d.format() for d in exc.value.diagnostics])
        assert msgs[0] == msgs[1]


# -- corpus properties -------------------------------------------------------

def _corpus():
    records = gen_suite(["adder:3", "mux-tree:2", "parity:5"], seed=3,
                        clean_variants=2, trojan_variants=2, verify=False)
    return [(r.name, emit_netlist(r.netlist)) for r in records]


CORPUS = _corpus()


class TestRoundTrip:
    @pytest.mark.parametrize("name,src", CORPUS, ids=[n for n, _ in CORPUS])
    def test_parse_emit_parse_fixed_point(self, name, src):
        first = parse_netlist(src)
        again = parse_netlist(emit_netlist(first))
        assert again == first
        assert emit_netlist(again) == emit_netlist(first)


class TestMutationProperties:
    def test_random_mutations_never_escape_netlist_error(self):
        # Fuzzed sources must either parse or fail with a positioned
        # diagnostic; any other exception is a parser bug.
        rng = random.Random(1234)
        alphabet = "abwxyz01[]{}~&|^+-;:,()'h "
        sources = [src for _, src in CORPUS]
        for _ in range(300):
            src = rng.choice(sources)
            i = rng.randrange(len(src))
            kind = rng.randrange(3)
            if kind == 0:
                mutated = src[:i] + src[i + 1:]
            elif kind == 1:
                mutated = src[:i] + rng.choice(alphabet) + src[i:]
            else:
                mutated = src[:i] + rng.choice(alphabet) + src[i + 1:]
            try:
                parse_netlist(mutated)
            except NetlistError:
                pass

    def test_duplicated_driver_never_accepted(self):
        rng = random.Random(99)
        for _, src in CORPUS:
            lines = src.splitlines()
            assign_lines = [i for i, ln in enumerate(lines)
                            if ln.lstrip().startswith("assign ")]
            i = rng.choice(assign_lines)
            end = next(k for k, ln in enumerate(lines) if ln.startswith("endmodule"))
            mutated = lines[:end] + [lines[i]] + lines[end:]
            with pytest.raises(NetlistError, match="drivers"):
                parse_netlist("\n".join(mutated) + "\n")

    def test_self_loop_never_accepted(self):
        rng = random.Random(7)
        for _, src in CORPUS:
            lines = src.splitlines()
            # Retarget one single-target assign to read its own target.
            candidates = []
            for i, ln in enumerate(lines):
                stripped = ln.lstrip()
                if stripped.startswith("assign ") and "{" not in stripped.split("=")[0]:
                    candidates.append(i)
            i = rng.choice(candidates)
            indent = lines[i][:len(lines[i]) - len(lines[i].lstrip())]
            target = lines[i].lstrip().split()[1]
            lines[i] = f"{indent}assign {target} = {target};"
            with pytest.raises(NetlistError):
                parse_netlist("\n".join(lines) + "\n")


class TestFileInterface:
    def test_parse_netlist_file(self, tmp_path):
        p = tmp_path / "buf.v"
        p.write_text("module buf(input a, output y);\nassign y = a;\nendmodule\n")
        n = parse_netlist_file(p)
        assert n.name == "buf"

    def test_file_name_in_diagnostics(self, tmp_path):
        p = tmp_path / "bad.v"
        p.write_text("module bad(input a, output y);\nassign y = q;\nendmodule\n")
        with pytest.raises(NetlistError) as exc:
            parse_netlist_file(p)
        assert str(p) in str(exc.value)
