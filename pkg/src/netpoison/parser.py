"""Parser for the combinational netlist subset.

Hand-rolled lexer and recursive-descent parser with precedence climbing.
Accepted shape: one module, ANSI-style header ports (directions may instead
be declared in the body, ISCAS style), `wire` declarations, continuous
assigns. Expressions: ~ & | ^ ~^ + - ?: {}, bit/part selects on nets, sized
constants `<width>'h..` / `<width>'b..`. Unsized decimal constants are an
error everywhere except select and range indices.

Precedence, loosest to tightest: ?:  |  ^ ~^  &  + -  ~
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .netlist import (
    Assign,
    Binary,
    Concat,
    Const,
    Diagnostic,
    Expr,
    LValue,
    Netlist,
    NetlistError,
    Port,
    Ref,
    Slice,
    Ternary,
    smart_not,
    validate,
)

__all__ = ["parse_netlist", "parse_netlist_file"]

_KEYWORDS = {"module", "endmodule", "input", "output", "wire", "assign"}
# Two-character symbols must be tried first.
_SYMBOLS2 = ("~^", "^~")
_SYMBOLS1 = "()[]{},;:=?+-&|^~"

_BIN_PREC = {"|": 2, "^": 3, "~^": 3, "^~": 3, "&": 4, "+": 5, "-": 5}
_BIN_OP = {"|": "OR", "^": "XOR", "~^": "XNOR", "^~": "XNOR", "&": "AND",
           "+": "ADD", "-": "SUB"}


@dataclass(frozen=True)
class _Tok:
    kind: str  # ID, KW, INT, SIZED, SYM, EOF
    text: str
    line: int
    col: int
    value: object = None  # int for INT, (width, value) for SIZED


class _Abort(Exception):
    def __init__(self, diag: Diagnostic):
        self.diag = diag
        super().__init__(diag.message)


def _lex(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    i, line, col = 0, 1, 1
    n = len(text)

    def err(msg, l=None, c=None):
        raise _Abort(Diagnostic(l or line, c or col, msg))

    while i < n:
        ch = text[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if text.startswith("//", i):
            j = text.find("\n", i)
            i = n if j < 0 else j
            continue
        if text.startswith("/*", i):
            j = text.find("*/", i + 2)
            if j < 0:
                err("unterminated block comment")
            skipped = text[i:j + 2]
            newlines = skipped.count("\n")
            if newlines:
                line += newlines
                col = len(skipped) - skipped.rfind("\n")
            else:
                col += len(skipped)
            i = j + 2
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] in "_$"):
                j += 1
            word = text[i:j]
            kind = "KW" if word in _KEYWORDS else "ID"
            toks.append(_Tok(kind, word, line, col))
            col += j - i
            i = j
            continue
        if ch.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            startcol = col
            col += j - i
            if j < n and text[j] == "'":
                width = int(text[i:j])
                k = j + 1
                if k >= n:
                    err("truncated sized constant", line, startcol)
                base = text[k].lower()
                k += 1
                col += 2
                d0 = k
                while k < n and (text[k].isalnum() or text[k] == "_"):
                    k += 1
                digits = text[d0:k].replace("_", "")
                col += k - d0
                if base not in ("h", "b"):
                    err(f"unsupported constant base '{base}' (use 'h or 'b)",
                        line, startcol)
                if not digits:
                    err("sized constant has no digits", line, startcol)
                try:
                    value = int(digits, 16 if base == "h" else 2)
                except ValueError:
                    err(f"bad digits {digits!r} for base '{base}'", line, startcol)
                if width < 1:
                    err("constant width must be >= 1", line, startcol)
                if value >= 1 << width:
                    err(f"constant value {digits} does not fit in {width} bits",
                        line, startcol)
                toks.append(_Tok("SIZED", text[i:k], line, startcol, (width, value)))
                i = k
                continue
            toks.append(_Tok("INT", text[i:j], line, startcol, int(text[i:j])))
            i = j
            continue
        two = text[i:i + 2]
        if two in _SYMBOLS2:
            toks.append(_Tok("SYM", two, line, col))
            i += 2
            col += 2
            continue
        if ch in _SYMBOLS1:
            toks.append(_Tok("SYM", ch, line, col))
            i += 1
            col += 1
            continue
        err(f"unexpected character {ch!r}")
    toks.append(_Tok("EOF", "", line, col))
    return toks


class _Parser:
    def __init__(self, toks: list[_Tok]):
        self.toks = toks
        self.pos = 0

    # -- token plumbing ----------------------------------------------------

    def peek(self) -> _Tok:
        return self.toks[self.pos]

    def at(self, text: str) -> bool:
        t = self.peek()
        return t.text == text and t.kind in ("SYM", "KW")

    def eat(self) -> _Tok:
        t = self.toks[self.pos]
        self.pos += 1
        return t

    def expect(self, text: str) -> _Tok:
        t = self.peek()
        if not self.at(text):
            self.fail(f"expected {text!r}, found {t.text or 'end of file'!r}", t)
        return self.eat()

    def expect_id(self, what: str) -> _Tok:
        t = self.peek()
        if t.kind != "ID":
            self.fail(f"expected {what}, found {t.text or 'end of file'!r}", t)
        return self.eat()

    def expect_int(self, what: str) -> int:
        t = self.peek()
        if t.kind != "INT":
            self.fail(f"expected {what} (a plain decimal), found {t.text!r}", t)
        self.eat()
        return t.value

    def fail(self, msg: str, tok: Optional[_Tok] = None):
        tok = tok or self.peek()
        raise _Abort(Diagnostic(tok.line, tok.col, msg))

    # -- declarations ------------------------------------------------------

    def parse_module(self) -> Netlist:
        self.expect("module")
        name = self.expect_id("module name").text
        self.expect("(")
        header: list[tuple[str, Optional[str], Optional[int], _Tok]] = []
        if not self.at(")"):
            while True:
                header.append(self.port_entry())
                if self.at(","):
                    self.eat()
                    continue
                break
        self.expect(")")
        self.expect(";")

        directions: dict[str, str] = {}
        widths: dict[str, int] = {}
        order: list[str] = []
        decl_tok: dict[str, _Tok] = {}
        for pname, direction, width, tok in header:
            if pname in decl_tok:
                self.fail(f"duplicate port '{pname}' in port list", tok)
            order.append(pname)
            decl_tok[pname] = tok
            if direction is not None:
                directions[pname] = direction
                widths[pname] = width

        wires: dict[str, int] = {}
        wire_tok: dict[str, _Tok] = {}
        assigns: list[Assign] = []

        while not self.at("endmodule"):
            t = self.peek()
            if t.kind == "EOF":
                self.fail("unexpected end of file (missing 'endmodule')", t)
            if self.at("wire"):
                self.eat()
                width = self.opt_decl_range()
                while True:
                    nt = self.expect_id("wire name")
                    if nt.text in wires or nt.text in decl_tok:
                        self.fail(f"duplicate declaration of '{nt.text}'", nt)
                    wires[nt.text] = width
                    wire_tok[nt.text] = nt
                    if self.at(","):
                        self.eat()
                        continue
                    break
                self.expect(";")
                continue
            if self.at("input") or self.at("output"):
                direction = self.eat().text
                width = self.opt_decl_range()
                while True:
                    nt = self.expect_id("port name")
                    if nt.text not in decl_tok:
                        self.fail(f"'{nt.text}' is not listed in the module header", nt)
                    if nt.text in directions:
                        self.fail(f"duplicate direction declaration for '{nt.text}'", nt)
                    directions[nt.text] = direction
                    widths[nt.text] = width
                    if self.at(","):
                        self.eat()
                        continue
                    break
                self.expect(";")
                continue
            if self.at("assign"):
                kw = self.eat()
                targets = self.lvalue()
                self.expect("=")
                expr = self.expr()
                self.expect(";")
                assigns.append(Assign(tuple(targets), expr, kw.line, kw.col))
                continue
            self.fail(f"expected 'wire', 'input', 'output', 'assign' or "
                      f"'endmodule', found {t.text!r}", t)
        self.expect("endmodule")
        if self.peek().kind != "EOF":
            self.fail("text after 'endmodule'")

        for pname in order:
            if pname not in directions:
                self.fail(f"port '{pname}' has no direction declaration",
                          decl_tok[pname])
        ports = tuple(Port(p, directions[p], widths[p]) for p in order)
        nets = {p.name: p.width for p in ports}
        nets.update(wires)
        return Netlist(name, ports, nets, tuple(assigns))

    def port_entry(self):
        if self.at("input") or self.at("output"):
            direction = self.eat().text
            width = self.opt_decl_range()
            tok = self.expect_id("port name")
            return (tok.text, direction, width, tok)
        tok = self.expect_id("port name")
        return (tok.text, None, None, tok)

    def opt_decl_range(self) -> int:
        """`[msb:0]` on a declaration; returns the width (1 if absent)."""
        if not self.at("["):
            return 1
        tok = self.eat()
        msb = self.expect_int("range msb")
        self.expect(":")
        lsb = self.expect_int("range lsb")
        self.expect("]")
        if lsb != 0:
            self.fail("declaration range must be [msb:0]", tok)
        return msb + 1

    def lvalue(self) -> list[LValue]:
        if self.at("{"):
            self.eat()
            out = [self.lv_atom()]
            while self.at(","):
                self.eat()
                out.append(self.lv_atom())
            self.expect("}")
            return out
        return [self.lv_atom()]

    def lv_atom(self) -> LValue:
        tok = self.expect_id("assign target")
        msb, lsb = self.opt_select()
        return LValue(tok.text, msb, lsb)

    def opt_select(self):
        if not self.at("["):
            return (None, None)
        tok = self.eat()
        msb = self.expect_int("select index")
        lsb = msb
        if self.at(":"):
            self.eat()
            lsb = self.expect_int("select lsb")
        self.expect("]")
        if lsb > msb:
            self.fail(f"select range [{msb}:{lsb}] is reversed", tok)
        return (msb, lsb)

    # -- expressions -------------------------------------------------------

    def expr(self) -> Expr:
        e = self.binexpr(2)
        if self.at("?"):
            self.eat()
            then = self.expr()
            self.expect(":")
            orelse = self.expr()
            return Ternary(e, then, orelse)
        return e

    def binexpr(self, min_prec: int) -> Expr:
        e = self.unary()
        while True:
            t = self.peek()
            prec = _BIN_PREC.get(t.text) if t.kind == "SYM" else None
            if prec is None or prec < min_prec:
                return e
            self.eat()
            rhs = self.binexpr(prec + 1)
            e = Binary(_BIN_OP[t.text], e, rhs)

    def unary(self) -> Expr:
        if self.at("~"):
            self.eat()
            return smart_not(self.unary())
        return self.primary()

    def primary(self) -> Expr:
        t = self.peek()
        if self.at("("):
            self.eat()
            e = self.expr()
            self.expect(")")
            return e
        if self.at("{"):
            self.eat()
            parts = [self.expr()]
            while self.at(","):
                self.eat()
                parts.append(self.expr())
            self.expect("}")
            return Concat(tuple(parts))
        if t.kind == "SIZED":
            self.eat()
            width, value = t.value
            return Const(width, value)
        if t.kind == "INT":
            self.fail("unsized decimal constant (write a sized constant, "
                      "e.g. 8'h2a)", t)
        if t.kind == "ID":
            self.eat()
            msb, lsb = self.opt_select()
            if msb is None:
                return Ref(t.text)
            return Slice(Ref(t.text), msb, lsb)
        self.fail(f"expected an expression, found {t.text or 'end of file'!r}", t)


def parse_netlist(text: str, filename: str = "<netlist>") -> Netlist:
    """Parse and validate. Raises NetlistError carrying position-tagged
    diagnostics on any syntax or semantic problem."""
    try:
        toks = _lex(text)
        netlist = _Parser(toks).parse_module()
    except _Abort as exc:
        raise NetlistError([exc.diag], filename) from None
    diags = validate(netlist)
    if diags:
        raise NetlistError(diags, filename)
    return netlist


def parse_netlist_file(path) -> Netlist:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_netlist(fh.read(), filename=str(path))
