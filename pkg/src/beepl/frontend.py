"""Surface syntax for BeePL: tokenizer, parser and pretty-printer.

Input files use extension .bpl, UTF-8, with // line comments.  Diagnostics
render as ``file:line:col: error[CODE]: message`` and can be serialized to
JSON.  Parsing is deterministic and stops at the first error.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .core import (
    App, ArrayTy, Assign, Bop, BopKind, BOOL, BYTES, BytesView, Cast,
    Composite, Cond, ConstBool, ConstInt, ConstLong, Deref, Direction,
    Effect, EffectAtom, Expr, ExtDecl, Field, For, FunDecl, GlobDecl, I8,
    I16, INT, IntTy, Let, LONG, Loc, LongTy, Match, NoneLit, OptionTy,
    Pattern, Pbytes, Pnone, Program, Prim, Psome, Pwild, RefOp, RefTy, Seq,
    Sign, SomeLit, Span, StructInit, StructTy, Ty, U8, U16, U32, ULONG, UNIT,
    UnitLit, Uop, UopKind, Var, VBool, VInt, VLong, VOption,
)


class FrontendError(Exception):
    def __init__(self, diagnostic: "Diagnostic"):
        super().__init__(str(diagnostic))
        self.diagnostic = diagnostic


class LexError(FrontendError):
    pass


class ParseError(FrontendError):
    pass


class UnprintableInternalNode(Exception):
    pass


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    code: str
    message: str
    span: Span
    note: Optional[str] = None
    filename: str = "<input>"

    def render(self) -> str:
        base = (f"{self.filename}:{self.span.line}:{self.span.col}: "
                f"{self.severity}[{self.code}]: {self.message}")
        if self.note:
            base += f" ({self.note})"
        return base

    def to_json(self) -> dict:
        out = {
            "severity": self.severity,
            "code": self.code,
            "message": self.message,
            "line": self.span.line,
            "col": self.span.col,
        }
        if self.note:
            out["note"] = self.note
        return out

    def __str__(self):
        return self.render()


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------

KEYWORDS = {
    "fun", "let", "in", "if", "then", "else", "match", "with", "for",
    "Up", "Down", "ref", "true", "false", "none", "some", "pnone", "psome",
    "struct", "extern", "global", "vars", "option", "not", "char",
    "bool", "int", "long", "ulong", "unit", "bytes",
    "i8", "i16", "i32", "u8", "u16", "u32",
    "int8", "int16", "int32", "uint8", "uint16", "uint32",
}

PUNCT = [
    "...", "<<=",  # "<<=" never valid; listed so "<<" + "=" cannot mis-merge
    ":=", "=>", "==", "!=", "<=", ">=", "<<", ">>", "&&", "||",
    "(", ")", "{", "}", "[", "]", ",", ";", ":", ".", "|", "!", "=",
    "<", ">", "+", "-", "*", "/", "%", "&", "^", "~", "_", "#",
]


@dataclass(frozen=True)
class Token:
    kind: str  # "kw" | "ident" | "int" | "string" | "punct" | "eof"
    lexeme: str
    span: Span
    value: int = 0  # numeric payload for int tokens
    is_long: bool = False  # literal carried an explicit L suffix


def tokenize(source: str, filename: str = "<input>") -> list[Token]:
    tokens: list[Token] = []
    i = 0
    line = 1
    col = 1
    n = len(source)

    def span(start: int, end: int, l: int, c: int) -> Span:
        return Span(l, c, start, end)

    while i < n:
        ch = source[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if source.startswith("//", i):
            while i < n and source[i] != "\n":
                i += 1
            continue
        start, l0, c0 = i, line, col
        if ch == '"':
            i += 1
            buf = []
            while i < n and source[i] != '"':
                if source[i] == "\n":
                    raise LexError(Diagnostic(
                        "error", "L002", "unterminated string literal",
                        span(start, i, l0, c0), filename=filename))
                buf.append(source[i])
                i += 1
            if i >= n:
                raise LexError(Diagnostic(
                    "error", "L002", "unterminated string literal",
                    span(start, i, l0, c0), filename=filename))
            i += 1
            col += i - start
            tokens.append(Token("string", "".join(buf), span(start, i, l0, c0)))
            continue
        if ch.isdigit():
            j = i
            if source.startswith("0x", i) or source.startswith("0X", i):
                j = i + 2
                while j < n and source[j] in "0123456789abcdefABCDEF":
                    j += 1
                text = source[i:j]
                value = int(text, 16)
            else:
                while j < n and source[j].isdigit():
                    j += 1
                text = source[i:j]
                value = int(text)
            is_long = j < n and source[j] == "L"
            if is_long:
                j += 1
                text = source[i:j]
            tokens.append(Token("int", text, span(i, j, l0, c0), value, is_long))
            col += j - i
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] in "_'"):
                j += 1
            text = source[i:j]
            if text.startswith("__bpl_"):
                raise LexError(Diagnostic(
                    "error", "L003",
                    "identifiers starting with '__bpl_' are reserved",
                    span(i, j, l0, c0), filename=filename))
            if text == "_":
                tokens.append(Token("punct", "_", span(i, j, l0, c0)))
            elif text in KEYWORDS:
                tokens.append(Token("kw", text, span(i, j, l0, c0)))
            else:
                tokens.append(Token("ident", text, span(i, j, l0, c0)))
            col += j - i
            i = j
            continue
        for p in PUNCT:
            if source.startswith(p, i):
                tokens.append(Token("punct", p, span(i, i + len(p), l0, c0)))
                i += len(p)
                col += len(p)
                break
        else:
            raise LexError(Diagnostic(
                "error", "L001", f"illegal character {ch!r}",
                span(i, i + 1, l0, c0), filename=filename))
    tokens.append(Token("eof", "", Span(line, col, n, n)))
    return tokens


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

PRIM_TYPE_NAMES = {
    "bool": BOOL,
    "int": INT,
    "long": LONG,
    "ulong": ULONG,
    "char": I8,
    "i8": I8, "int8": I8,
    "i16": I16, "int16": I16,
    "i32": INT, "int32": INT,
    "u8": U8, "uint8": U8,
    "u16": U16, "uint16": U16,
    "u32": U32, "uint32": U32,
}

INT_MAX = (1 << 31) - 1
LONG_MAX = (1 << 63) - 1


class Parser:
    def __init__(self, source: str, filename: str = "<input>"):
        self.filename = filename
        self.tokens = tokenize(source, filename)
        self.pos = 0

    # -- token plumbing ------------------------------------------------------

    def peek(self, ahead: int = 0) -> Token:
        return self.tokens[min(self.pos + ahead, len(self.tokens) - 1)]

    def next(self) -> Token:
        t = self.tokens[self.pos]
        if t.kind != "eof":
            self.pos += 1
        return t

    def at(self, kind: str, lexeme: Optional[str] = None, ahead: int = 0) -> bool:
        t = self.peek(ahead)
        return t.kind == kind and (lexeme is None or t.lexeme == lexeme)

    def accept(self, kind: str, lexeme: Optional[str] = None) -> Optional[Token]:
        if self.at(kind, lexeme):
            return self.next()
        return None

    def expect(self, kind: str, lexeme: Optional[str] = None, what: str = "") -> Token:
        if self.at(kind, lexeme):
            return self.next()
        t = self.peek()
        wanted = lexeme or kind
        msg = f"expected {what or wanted!r}, found {t.lexeme or t.kind!r}"
        raise ParseError(Diagnostic("error", "P001", msg, t.span,
                                    filename=self.filename))

    def fail(self, message: str, span: Optional[Span] = None, code: str = "P001"):
        raise ParseError(Diagnostic("error", code, message,
                                    span or self.peek().span,
                                    filename=self.filename))

    # -- programs ------------------------------------------------------------

    def parse_program(self) -> Program:
        decls = []
        composites = []
        while not self.at("eof"):
            sec = None
            if self.at("punct", "#"):
                sec = self.parse_section_attr()
            if self.at("kw", "struct"):
                if sec is not None:
                    self.fail("a struct definition takes no section attribute")
                composites.append(self.parse_struct_def())
            elif self.at("kw", "fun"):
                decls.append(self.parse_fun_decl(sec))
            elif self.at("kw", "extern"):
                if sec is not None:
                    self.fail("an extern declaration takes no section attribute")
                decls.append(self.parse_extern_decl())
            elif self.at("kw", "global"):
                decls.append(self.parse_glob_decl(sec))
            elif self.at("kw", "char"):
                decls.append(self.parse_char_array_decl(sec))
            else:
                self.fail("expected a declaration")
        try:
            return Program(tuple(decls), tuple(composites))
        except Exception as exc:
            self.fail(str(exc), Span(1, 1), code="P002")

    def parse_section_attr(self) -> str:
        self.expect("punct", "#")
        name = self.expect("ident", what="section")
        if name.lexeme != "section":
            self.fail("expected 'section' after '#'", name.span)
        return self.expect("string", what="section name").lexeme

    def parse_struct_def(self) -> Composite:
        self.expect("kw", "struct")
        name = self.expect("ident", what="struct name")
        self.expect("punct", "{")
        fields = []
        while not self.at("punct", "}"):
            fname = self.expect("ident", what="field name")
            self.expect("punct", ":")
            fty = self.parse_type()
            fields.append((fname.lexeme, fty))
            if not self.accept("punct", ","):
                break
        self.expect("punct", "}")
        return Composite(name.lexeme, tuple(fields))

    def parse_fun_decl(self, sec: Optional[str]) -> FunDecl:
        kw = self.expect("kw", "fun")
        name = self.expect("ident", what="function name")
        self.expect("punct", "(")
        args = []
        while not self.at("punct", ")"):
            ty = self.parse_type()
            arg = self.expect("ident", what="parameter name")
            args.append((arg.lexeme, ty))
            if not self.accept("punct", ","):
                break
        self.expect("punct", ")")
        self.expect("punct", ":")
        rt = self.parse_type()
        ef = None
        if self.accept("punct", ","):
            ef = self.parse_effect_annotation()
        local_vars = []
        if self.accept("kw", "vars"):
            self.expect("punct", "(")
            while not self.at("punct", ")"):
                vty = self.parse_type()
                v = self.expect("ident", what="local name")
                local_vars.append((v.lexeme, vty))
                if not self.accept("punct", ","):
                    break
            self.expect("punct", ")")
        self.expect("punct", "{")
        body = self.parse_expr()
        self.accept("punct", ";")
        self.expect("punct", "}")
        try:
            return FunDecl(name.lexeme, rt, tuple(args), body,
                           vars=tuple(local_vars), ef=ef, sec=sec,
                           flag=sec is not None, span=kw.span)
        except Exception as exc:
            self.fail(str(exc), kw.span, code="P002")

    def parse_effect_annotation(self) -> Effect:
        self.expect("punct", "<")
        atoms = []
        while not self.at("punct", ">"):
            t = self.expect("ident", what="effect name")
            try:
                atoms.append(EffectAtom(t.lexeme))
            except ValueError:
                self.fail(f"unknown effect {t.lexeme!r}", t.span)
            if not self.accept("punct", ","):
                break
        self.expect("punct", ">")
        return Effect(tuple(atoms))

    def parse_extern_decl(self) -> ExtDecl:
        kw = self.expect("kw", "extern")
        self.expect("kw", "fun")
        name = self.expect("ident", what="function name")
        self.expect("punct", "(")
        arg_types = []
        while not self.at("punct", ")"):
            arg_types.append(self.parse_type())
            self.accept("ident")  # optional parameter name
            if not self.accept("punct", ","):
                break
        self.expect("punct", ")")
        self.expect("punct", ":")
        rt = self.parse_type()
        ef = Effect()
        if self.accept("punct", ","):
            ef = self.parse_effect_annotation()
        self.accept("punct", ";")
        return ExtDecl(name.lexeme, tuple(arg_types), rt, ef, span=kw.span)

    def parse_glob_decl(self, sec: Optional[str]) -> GlobDecl:
        kw = self.expect("kw", "global")
        name = self.expect("ident", what="global name")
        self.expect("punct", ":")
        ty = self.parse_type()
        self.expect("punct", "=")
        init = self.parse_glob_init(ty)
        self.accept("punct", ";")
        return GlobDecl(name.lexeme, ty, init, sec=sec, span=kw.span)

    def parse_glob_init(self, ty: Ty):
        if self.at("string"):
            return self.expect("string").lexeme.encode() + b"\x00"
        if self.accept("kw", "none"):
            return VOption(None)
        if self.accept("kw", "true"):
            return VBool(True)
        if self.accept("kw", "false"):
            return VBool(False)
        neg = bool(self.accept("punct", "-"))
        t = self.expect("int", what="initial value")
        value = -t.value if neg else t.value
        if isinstance(ty, LongTy):
            return VLong(value)
        if isinstance(ty, IntTy):
            if not (-(1 << 31) <= value < (1 << 32)):
                self.fail("initializer too wide for its declared type", t.span,
                          code="P003")
            return VInt(value if value <= INT_MAX else value - (1 << 32))
        self.fail(f"cannot initialize a global of this type from a literal",
                  t.span)

    def parse_char_array_decl(self, sec: Optional[str]) -> GlobDecl:
        kw = self.expect("kw", "char")
        name = self.expect("ident", what="global name")
        self.expect("punct", "[")
        self.expect("punct", "]")
        if self.at("punct", "#"):
            sec = self.parse_section_attr()
        self.expect("punct", "=")
        text = self.expect("string", what="string initializer")
        self.accept("punct", ";")
        data = text.lexeme.encode() + b"\x00"
        return GlobDecl(name.lexeme, ArrayTy(I8, len(data)), data, sec=sec,
                        span=kw.span)

    # -- types ----------------------------------------------------------------

    def parse_type(self) -> Ty:
        t = self.peek()
        if t.kind == "kw" and t.lexeme in PRIM_TYPE_NAMES:
            self.next()
            base: Ty = PRIM_TYPE_NAMES[t.lexeme]
        elif self.accept("kw", "unit"):
            base = UNIT
        elif self.accept("kw", "bytes"):
            base = BYTES
        elif self.accept("kw", "struct"):
            name = self.expect("ident", what="struct name")
            base = StructTy(name.lexeme)
        elif self.accept("kw", "option"):
            self.expect("punct", "(")
            inner = self.parse_type()
            self.expect("punct", ")")
            if not isinstance(inner, (RefTy,)):
                self.fail("option wraps a pointer type", t.span, code="P004")
            return OptionTy(inner)
        else:
            self.fail("expected a type")
        while True:
            if self.at("punct", "*"):
                self.next()
                try:
                    base = RefTy(base)
                except Exception as exc:
                    self.fail(str(exc), t.span, code="P004")
            elif self.at("punct", "[") and self.at("int", ahead=1):
                self.next()
                length = self.expect("int").value
                self.expect("punct", "]")
                try:
                    base = ArrayTy(base, length)
                except Exception as exc:
                    self.fail(str(exc), t.span, code="P004")
            else:
                break
        return base

    # -- expressions -----------------------------------------------------------

    def parse_expr(self) -> Expr:
        return self.parse_assign()

    def parse_assign(self) -> Expr:
        lhs = self.parse_lor()
        if self.at("punct", ":="):
            op = self.next()
            rhs = self.parse_assign()
            return Prim(Assign(), (lhs, rhs), span=op.span)
        return lhs

    def _binop_level(self, sub, table: dict[str, BopKind],
                     stop_bitor: bool = False) -> Expr:
        e = sub()
        while True:
            t = self.peek()
            if t.kind != "punct" or t.lexeme not in table:
                return e
            if t.lexeme == "|" and self._bar_starts_pattern():
                return e
            self.next()
            rhs = sub()
            e = Prim(Bop(table[t.lexeme]), (e, rhs), span=t.span)

    def _bar_starts_pattern(self) -> bool:
        nxt = self.peek(1)
        if nxt.kind == "kw" and nxt.lexeme in ("pnone", "psome"):
            return True
        if nxt.kind == "punct" and nxt.lexeme == "_":
            return True
        if nxt.kind == "ident":
            after = self.peek(2)
            if after.kind == "punct" and after.lexeme in (",", "=>"):
                return True
        return False

    def parse_lor(self) -> Expr:
        return self._binop_level(self.parse_land, {"||": BopKind.LOR})

    def parse_land(self) -> Expr:
        return self._binop_level(self.parse_bitor, {"&&": BopKind.LAND})

    def parse_bitor(self) -> Expr:
        return self._binop_level(self.parse_bitxor, {"|": BopKind.OR})

    def parse_bitxor(self) -> Expr:
        return self._binop_level(self.parse_bitand, {"^": BopKind.XOR})

    def parse_bitand(self) -> Expr:
        return self._binop_level(self.parse_equality, {"&": BopKind.AND})

    def parse_equality(self) -> Expr:
        return self._binop_level(self.parse_rel,
                                 {"==": BopKind.EQ, "!=": BopKind.NE})

    def parse_rel(self) -> Expr:
        return self._binop_level(self.parse_shift,
                                 {"<": BopKind.LT, "<=": BopKind.LE,
                                  ">": BopKind.GT, ">=": BopKind.GE})

    def parse_shift(self) -> Expr:
        return self._binop_level(self.parse_additive,
                                 {"<<": BopKind.SHL, ">>": BopKind.SHR})

    def parse_additive(self) -> Expr:
        return self._binop_level(self.parse_mult,
                                 {"+": BopKind.ADD, "-": BopKind.SUB})

    def parse_mult(self) -> Expr:
        return self._binop_level(self.parse_unary,
                                 {"*": BopKind.MUL, "/": BopKind.DIV,
                                  "%": BopKind.MOD})

    def parse_unary(self) -> Expr:
        t = self.peek()
        if self.at("punct", "!"):
            self.next()
            return Prim(Deref(), (self.parse_unary(),), span=t.span)
        if self.at("punct", "-"):
            self.next()
            operand = self.parse_unary()
            # Fold negated literals so printed constants re-parse structurally.
            if isinstance(operand, ConstInt):
                return ConstInt(-operand.value, span=t.span)
            if isinstance(operand, ConstLong):
                if operand.value == (1 << 31):  # INT_MIN is an int literal
                    return ConstInt(-operand.value, span=t.span)
                return ConstLong(-operand.value, span=t.span)
            return Prim(Uop(UopKind.NEG), (operand,), span=t.span)
        if self.at("punct", "~"):
            self.next()
            return Prim(Uop(UopKind.BITNOT), (self.parse_unary(),), span=t.span)
        if self.at("kw", "not"):
            self.next()
            return Prim(Uop(UopKind.LOGNOT), (self.parse_unary(),), span=t.span)
        if (self.at("punct", "(") and self.peek(1).kind == "kw"
                and self.peek(1).lexeme in PRIM_TYPE_NAMES
                and self.at("punct", ")", ahead=2)):
            self.next()
            target = PRIM_TYPE_NAMES[self.next().lexeme]
            self.next()
            return Prim(Cast(target), (self.parse_unary(),), span=t.span)
        return self.parse_postfix()

    def parse_postfix(self) -> Expr:
        e = self.parse_primary()
        while True:
            if self.at("punct", "("):
                op = self.next()
                args = []
                while not self.at("punct", ")"):
                    args.append(self.parse_expr())
                    if not self.accept("punct", ","):
                        break
                self.expect("punct", ")")
                e = App(e, tuple(args), span=op.span)
            elif self.at("punct", ".") :
                self.next()
                fname = self.expect("ident", what="field name")
                e = Field(e, fname.lexeme, span=fname.span)
            else:
                return e

    def parse_primary(self) -> Expr:
        t = self.peek()
        if t.kind == "int":
            self.next()
            if t.value > LONG_MAX:
                self.fail("integer literal exceeds 64 bits", t.span, code="P003")
            if t.is_long or t.value > INT_MAX:
                return ConstLong(t.value, span=t.span)
            return ConstInt(t.value, span=t.span)
        if self.accept("kw", "true"):
            return ConstBool(True, span=t.span)
        if self.accept("kw", "false"):
            return ConstBool(False, span=t.span)
        if self.accept("kw", "none"):
            return NoneLit(span=t.span)
        if self.accept("kw", "some"):
            self.expect("punct", "(")
            inner = self.parse_expr()
            self.expect("punct", ")")
            return SomeLit(inner, span=t.span)
        if self.accept("kw", "ref"):
            self.expect("punct", "(")
            inner = self.parse_expr()
            self.expect("punct", ")")
            return Prim(RefOp(), (inner,), span=t.span)
        if self.at("kw", "let"):
            return self.parse_let()
        if self.at("kw", "if"):
            return self.parse_if()
        if self.at("kw", "match"):
            return self.parse_match()
        if self.at("kw", "for"):
            return self.parse_for()
        if self.at("punct", "("):
            self.next()
            if self.accept("punct", ")"):
                return UnitLit(span=t.span)
            inner = self.parse_expr()
            self.expect("punct", ")")
            return inner
        if t.kind == "ident":
            self.next()
            if self.at("punct", "{"):
                return self.parse_struct_init(t)
            return Var(t.lexeme, span=t.span)
        self.fail("expected an expression")

    def parse_struct_init(self, name: Token) -> Expr:
        self.expect("punct", "{")
        fields = []
        while not self.at("punct", "}"):
            fname = self.expect("ident", what="field name")
            self.expect("punct", "=")
            fields.append((fname.lexeme, self.parse_expr()))
            if not self.accept("punct", ","):
                break
        self.expect("punct", "}")
        return StructInit(name.lexeme, tuple(fields), span=name.span)

    def parse_let(self) -> Expr:
        kw = self.expect("kw", "let")
        if self.accept("punct", "_"):
            name = "_"
            declared = UNIT
            if self.accept("punct", ":"):
                declared = self.parse_type()
        else:
            name = self.expect("ident", what="binder").lexeme
            self.expect("punct", ":")
            declared = self.parse_type()
        self.expect("punct", "=")
        bound = self.parse_expr()
        bound = self._fit_literal(bound, declared)
        self.expect("kw", "in")
        body = self.parse_expr()
        return Let(name, declared, bound, body, span=kw.span)

    def _fit_literal(self, e: Expr, declared: Ty) -> Expr:
        """Adapt a bare literal to a declared int/long binder type."""
        if isinstance(e, ConstInt) and isinstance(declared, LongTy):
            return ConstLong(e.value, span=e.span)
        if isinstance(e, ConstLong) and isinstance(declared, IntTy):
            if -(1 << 31) <= e.value < (1 << 31):
                return ConstInt(e.value, span=e.span)
            self.fail("integer literal too wide for its declared type",
                      e.span, code="P003")
        if isinstance(e, ConstInt) and isinstance(declared, IntTy):
            width, unsigned = declared.size, declared.sign is Sign.UNSIGNED
            lo = 0 if unsigned else -(1 << (width - 1))
            hi = (1 << width) - 1 if unsigned else (1 << (width - 1)) - 1
            hi = min(hi, INT_MAX)
            if not (lo <= e.value <= hi):
                self.fail("integer literal too wide for its declared type",
                          e.span, code="P003")
        if isinstance(e, Prim) and isinstance(e.op, RefOp) \
                and isinstance(declared, RefTy):
            inner = self._fit_literal(e.operands[0], declared.target)
            if inner is not e.operands[0]:
                return Prim(RefOp(), (inner,), span=e.span)
        if isinstance(e, SomeLit) and isinstance(declared, OptionTy):
            inner = self._fit_literal(e.value, declared.inner)
            if inner is not e.value:
                return SomeLit(inner, span=e.span)
        return e

    def parse_if(self) -> Expr:
        kw = self.expect("kw", "if")
        guard = self.parse_expr()
        self.expect("kw", "then")
        then = self.parse_expr()
        self.expect("kw", "else")
        otherwise = self.parse_expr()
        return Cond(guard, then, otherwise, span=kw.span)

    def parse_for(self) -> Expr:
        kw = self.expect("kw", "for")
        self.expect("punct", "(")
        lo = self.parse_expr()
        self.expect("punct", "...")
        hi = self.parse_expr()
        self.expect("punct", ",")
        if self.accept("kw", "Up"):
            d = Direction.UP
        elif self.accept("kw", "Down"):
            d = Direction.DOWN
        else:
            self.fail("expected Up or Down")
        self.expect("punct", ")")
        self.expect("punct", "{")
        body = self.parse_expr()
        self.accept("punct", ";")
        self.expect("punct", "}")
        return For(lo, hi, d, body, span=kw.span)

    def parse_match(self) -> Expr:
        kw = self.expect("kw", "match")
        scrutinee = self.parse_expr()
        self.expect("kw", "with")
        arms = []
        while self.at("punct", "|"):
            self.next()
            pat = self.parse_pattern()
            self.expect("punct", "=>")
            arms.append((pat, self.parse_expr()))
        if not arms:
            self.fail("match needs at least one arm")
        return Match(scrutinee, tuple(arms), span=kw.span)

    def parse_pattern(self) -> Pattern:
        if self.accept("kw", "pnone"):
            return Pnone()
        if self.accept("kw", "psome"):
            binder = self.expect("ident", what="binder")
            return Psome(binder.lexeme)
        if self.accept("punct", "_"):
            return Pwild()
        binder = self.expect("ident", what="pattern binder")
        self.expect("punct", ",")
        target = self.parse_type()
        fields = []
        if self.accept("punct", ":"):
            while self.at("punct", "("):
                self.next()
                y = self.expect("ident", what="field binder")
                self.expect("punct", ",")
                fty = self.parse_type()
                self.expect("punct", ")")
                fields.append((y.lexeme, fty))
                if not self.accept("punct", ","):
                    break
        try:
            return Pbytes(binder.lexeme, target, tuple(fields))
        except Exception as exc:
            self.fail(str(exc), binder.span, code="P004")


def parse_program(source: str, filename: str = "<input>") -> Program:
    return Parser(source, filename).parse_program()


def parse_expr(source: str, filename: str = "<input>") -> Expr:
    p = Parser(source, filename)
    e = p.parse_expr()
    p.expect("eof")
    return e


# ---------------------------------------------------------------------------
# Pretty-printer
# ---------------------------------------------------------------------------

TYPE_NAMES = {
    BOOL: "bool", INT: "int", LONG: "long", ULONG: "ulong",
    I8: "i8", I16: "i16", U8: "u8", U16: "u16", U32: "u32",
    UNIT: "unit", BYTES: "bytes",
}


def print_type(ty: Ty) -> str:
    if ty in TYPE_NAMES:
        return TYPE_NAMES[ty]
    if isinstance(ty, StructTy):
        return f"struct {ty.sid}"
    if isinstance(ty, RefTy):
        return print_type(ty.target) + "*"
    if isinstance(ty, OptionTy):
        return f"option({print_type(ty.inner)})"
    if isinstance(ty, ArrayTy):
        return f"{print_type(ty.elem)}[{ty.length}]"
    raise UnprintableInternalNode(f"type {ty} has no surface syntax")


# Precedence levels for minimal parenthesization; higher binds tighter.
_BOP_PREC = {
    BopKind.LOR: 1, BopKind.LAND: 2, BopKind.OR: 3, BopKind.XOR: 4,
    BopKind.AND: 5, BopKind.EQ: 6, BopKind.NE: 6,
    BopKind.LT: 7, BopKind.LE: 7, BopKind.GT: 7, BopKind.GE: 7,
    BopKind.SHL: 8, BopKind.SHR: 8,
    BopKind.ADD: 9, BopKind.SUB: 9,
    BopKind.MUL: 10, BopKind.DIV: 10, BopKind.MOD: 10,
}
_UNARY_PREC = 11
_POSTFIX_PREC = 12
_LOW_PREC = 0


def print_expr(e: Expr) -> str:
    return _pe(e, _LOW_PREC)


def _pe(e: Expr, ctx: int) -> str:
    if isinstance(e, (Loc, BytesView, Seq)):
        raise UnprintableInternalNode(f"{type(e).__name__} has no surface syntax")
    if isinstance(e, Var):
        return e.name
    if isinstance(e, ConstInt):
        return str(e.value)
    if isinstance(e, ConstLong):
        return f"{e.value}L"
    if isinstance(e, ConstBool):
        return "true" if e.value else "false"
    if isinstance(e, UnitLit):
        return "()"
    if isinstance(e, NoneLit):
        return "none"
    if isinstance(e, SomeLit):
        return f"some({_pe(e.value, _LOW_PREC)})"
    if isinstance(e, App):
        args = ", ".join(_pe(a, _LOW_PREC) for a in e.args)
        return f"{_pe(e.callee, _POSTFIX_PREC)}({args})"
    if isinstance(e, Field):
        return f"{_pe(e.target, _POSTFIX_PREC)}.{e.fname}"
    if isinstance(e, Prim):
        return _print_prim(e, ctx)
    if isinstance(e, Let):
        txt = (f"let {e.name} : {print_type(e.declared)} = "
               f"{_pe(e.bound, _LOW_PREC)} in {_pe(e.body, _LOW_PREC)}")
        return _paren(txt, ctx) if ctx > _LOW_PREC else txt
    if isinstance(e, Cond):
        txt = (f"if {_pe(e.guard, _LOW_PREC)} then {_pe(e.then, _LOW_PREC)} "
               f"else {_pe(e.otherwise, _LOW_PREC)}")
        return _paren(txt, ctx) if ctx > _LOW_PREC else txt
    if isinstance(e, For):
        return (f"for ({_pe(e.lo, _LOW_PREC)} ... {_pe(e.hi, _LOW_PREC)}, "
                f"{e.direction.value}) {{ {_pe(e.body, _LOW_PREC)} }}")
    if isinstance(e, Match):
        arms = " ".join(f"| {_print_pattern(p)} => {_pe(b, 1)}"
                        for p, b in e.arms)
        txt = f"match {_pe(e.scrutinee, _LOW_PREC)} with {arms}"
        return _paren(txt, ctx) if ctx > _LOW_PREC else txt
    if isinstance(e, StructInit):
        fields = ", ".join(f"{f} = {_pe(fe, _LOW_PREC)}" for f, fe in e.fields)
        return f"{e.name} {{ {fields} }}"
    raise UnprintableInternalNode(f"cannot print {e!r}")


def _print_prim(e: Prim, ctx: int) -> str:
    op = e.op
    if isinstance(op, RefOp):
        return f"ref({_pe(e.operands[0], _LOW_PREC)})"
    if isinstance(op, Deref):
        return _paren(f"!{_pe(e.operands[0], _UNARY_PREC)}", ctx,
                      when=ctx > _UNARY_PREC)
    if isinstance(op, Assign):
        txt = (f"{_pe(e.operands[0], 1)} := {_pe(e.operands[1], _LOW_PREC)}")
        return _paren(txt, ctx) if ctx > _LOW_PREC else txt
    if isinstance(op, Uop):
        spelling = {UopKind.NEG: "-", UopKind.BITNOT: "~",
                    UopKind.LOGNOT: "not "}[op.kind]
        return _paren(f"{spelling}{_pe(e.operands[0], _UNARY_PREC)}", ctx,
                      when=ctx > _UNARY_PREC)
    if isinstance(op, Cast):
        return _paren(f"({print_type(op.target)}){_pe(e.operands[0], _UNARY_PREC)}",
                      ctx, when=ctx > _UNARY_PREC)
    if isinstance(op, Bop):
        prec = _BOP_PREC[op.kind]
        # '|' chains are always parenthesized so match arms stay unambiguous.
        if op.kind is BopKind.OR:
            return f"({_pe(e.operands[0], prec)} | {_pe(e.operands[1], prec + 1)})"
        txt = (f"{_pe(e.operands[0], prec)} {op.kind.value} "
               f"{_pe(e.operands[1], prec + 1)}")
        return _paren(txt, ctx, when=ctx > prec)
    raise UnprintableInternalNode(f"cannot print primitive {op!r}")


def _print_pattern(p: Pattern) -> str:
    if isinstance(p, Pnone):
        return "pnone"
    if isinstance(p, Psome):
        return f"psome {p.binder}"
    if isinstance(p, Pwild):
        return "_"
    if isinstance(p, Pbytes):
        base = f"{p.binder}, {print_type(p.target)}"
        if p.fields:
            base += " : " + ", ".join(f"({y}, {print_type(t)})"
                                      for y, t in p.fields)
        return base
    raise UnprintableInternalNode(f"cannot print pattern {p!r}")


def _paren(txt: str, ctx: int, when: Optional[bool] = None) -> str:
    need = (ctx > _LOW_PREC) if when is None else when
    return f"({txt})" if need else txt


def print_program(p: Program) -> str:
    lines: list[str] = []
    for co in p.composites:
        fields = ", ".join(f"{f} : {print_type(t)}" for f, t in co.fields)
        lines.append(f"struct {co.sid} {{ {fields} }}")
    for d in p.decls:
        if isinstance(d, FunDecl):
            if d.sec is not None:
                lines.append(f'#section "{d.sec}"')
            args = ", ".join(f"{print_type(t)} {x}" for x, t in d.args)
            head = f"fun {d.name}({args}) : {print_type(d.rt)}"
            if d.ef is not None:
                head += ", <" + ", ".join(a.value for a in d.ef.items) + ">"
            if d.vars:
                head += " vars (" + ", ".join(f"{print_type(t)} {y}"
                                              for y, t in d.vars) + ")"
            lines.append(head + " {")
            lines.append("    " + print_expr(d.body))
            lines.append("}")
        elif isinstance(d, ExtDecl):
            args = ", ".join(print_type(t) for t in d.arg_types)
            head = f"extern fun {d.name}({args}) : {print_type(d.res_type)}"
            if d.ef.items:
                head += ", <" + ", ".join(a.value for a in d.ef.items) + ">"
            lines.append(head + ";")
        elif isinstance(d, GlobDecl):
            if isinstance(d.init, bytes) and isinstance(d.ty, ArrayTy):
                sec = f' #section "{d.sec}"' if d.sec else ""
                text = d.init[:-1].decode()
                lines.append(f'char {d.name}[]{sec} = "{text}";')
                continue
            if d.sec is not None:
                lines.append(f'#section "{d.sec}"')
            lines.append(f"global {d.name} : {print_type(d.ty)} = "
                         f"{_print_glob_init(d.init)};")
    return "\n".join(lines) + "\n"


def _print_glob_init(v) -> str:
    if isinstance(v, VOption) and v.value is None:
        return "none"
    if isinstance(v, (VInt, VLong)):
        return str(v.value)
    if isinstance(v, VBool):
        return "true" if v.value else "false"
    raise UnprintableInternalNode(f"cannot print global initializer {v!r}")
