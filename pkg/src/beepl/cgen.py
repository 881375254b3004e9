"""C code generation for checked BeePL programs.

The translation inserts the guards that make the output free of the undefined
behaviors the source semantics already excludes: option matches become NULL
checks, byte-pattern matches become pointer-range checks, division/modulo and
shifts are wrapped in operand guards, and signed arithmetic is routed through
unsigned idioms so it wraps instead of overflowing.

Output is a single self-contained translation unit.  ``mode="ebpf"`` emits
SEC()-annotated code against helper stubs; ``mode="host"`` adds a main shim
that prints the entry point's result, for differential runs against the
interpreter.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field as dc_field
from typing import Optional

from .core import (
    App, ArrayTy, Assign, BoolTy, Bop, BopKind, BYTES, BytesTy, Cast,
    Cond, ConstBool, ConstInt, ConstLong, Deref, Direction, Expr,
    ExtDecl, Field, For, FunDecl, GlobDecl, INT, IntTy, Let, LONG, LongTy,
    Match, NoneLit, OptionTy, Pbytes, Pnone, Prim, Psome, Pwild,
    RefOp, RefTy, Sign, SomeLit, StructInit, StructTy, Ty, UnitTy,
    UnitLit, Uop, UopKind, VBool, VInt, VLong, VOption, Var,
)
from .typecheck import (
    TypedProgram, TypingContext, infer_expr, lane_type,
)


class CgenError(Exception):
    pass


@dataclass
class NameSupply:
    counters: dict[str, int] = dc_field(default_factory=dict)

    def fresh(self, prefix: str) -> str:
        n = self.counters.get(prefix, 0)
        self.counters[prefix] = n + 1
        return f"__bpl_{prefix}{n}"


@dataclass
class CUnit:
    text: str
    mode: str
    guarded_ops: int  # div/mod/shift sites emitted with an operand guard
    const_safe_ops: int  # sites proven safe from literal operands


PRELUDE = """\
typedef signed char i8;
typedef short i16;
typedef int i32;
typedef long long i64;
typedef unsigned char u8;
typedef unsigned short u16;
typedef unsigned int u32;
typedef unsigned long long u64;
typedef unsigned char bpl_bool;
#define NULL ((void *)0)
#define BPL_INT_MIN (-2147483647 - 1)
#define BPL_LONG_MIN (-9223372036854775807LL - 1LL)
typedef struct { unsigned char *start; unsigned char *end; } bytes_t;
struct bpf_map;
struct xdp_md { u32 data; u32 data_end; u32 data_meta;
                u32 ingress_ifindex; u32 rx_queue_index; u32 egress_ifindex; };
struct __sk_buff { u32 data; u32 data_end; };
"""

EBPF_HELPERS = """\
#define SEC(name) __attribute__((section(name), used))
static i64 *(*bpf_map_lookup_elem)(struct bpf_map *, i64 *) = (void *) 1;
static i64 (*bpf_get_current_uid_gid)(void) = (void *) 15;
"""

HOST_HELPERS = """\
extern int printf(const char *, ...);
static i64 __bpl_world_uid_gid = 0x000003E8000003E8LL;
static i64 bpf_get_current_uid_gid(void) { return __bpl_world_uid_gid; }
static i64 __bpl_map_value;
static int __bpl_map_seeded = 0;
static i64 *bpf_map_lookup_elem(struct bpf_map *m, i64 *k) {
    (void) m; (void) k;
    return __bpl_map_seeded ? &__bpl_map_value : (i64 *) 0;
}
"""

BUILTIN_STRUCTS = {"bpf_map", "xdp_md", "__sk_buff"}

# Names the host-mode prelude and shim already define.
HOST_RESERVED = {"main", "printf"}


def c_fun_name(name: str, mode: str) -> str:
    if mode == "host" and name in HOST_RESERVED:
        return "bpl_" + name
    return name


def ctype(ty: Ty) -> str:
    if isinstance(ty, BoolTy):
        return "bpl_bool"
    if isinstance(ty, IntTy):
        return ("u" if ty.sign is Sign.UNSIGNED else "i") + str(ty.size)
    if isinstance(ty, LongTy):
        return "u64" if ty.sign is Sign.UNSIGNED else "i64"
    if isinstance(ty, RefTy):
        return ctype(ty.target) + " *"
    if isinstance(ty, OptionTy):
        return ctype(ty.inner)
    if isinstance(ty, BytesTy):
        return "bytes_t"
    if isinstance(ty, StructTy):
        return f"struct {ty.sid}"
    if isinstance(ty, UnitTy):
        return "void"
    raise CgenError(f"type {ty} has no C rendering")


def cdecl(ty: Ty, name: str) -> str:
    if isinstance(ty, ArrayTy):
        return f"{ctype(ty.elem)} {name}[{ty.length}]"
    return f"{ctype(ty)} {name}"


def mangle(name: str) -> str:
    return name.replace("'", "_prime")


_SIMPLE_RE = re.compile(
    r"[A-Za-z_][A-Za-z0-9_]*|-?\d+(?:LL)?|\(&[A-Za-z_][A-Za-z0-9_]*\)")


def _is_simple(c: str) -> bool:
    return bool(_SIMPLE_RE.fullmatch(c))


def _p(c: str) -> str:
    """Parenthesize unless trivially atomic."""
    return c if c.replace("_", "").isalnum() else f"({c})"


@dataclass
class _Frag:
    stmts: list[str]
    cexpr: Optional[str]  # None for unit-typed expressions
    pure: bool  # safe to duplicate / reorder across statements


class FunctionEmitter:
    def __init__(self, gen: "ProgramEmitter", fd: FunDecl):
        self.gen = gen
        self.fd = fd
        self.names = NameSupply()
        self.locals: list[str] = []  # hoisted declarations
        self.env: dict[str, Ty] = dict(gen.globals_gamma)
        self.cnames: dict[str, str] = {}
        self.used_cnames: set[str] = set(gen.globals_gamma)
        self.struct_storage: dict[str, str] = {}
        for x, ty in fd.args:
            self.env[x] = ty
            self.cnames[x] = mangle(x)
            self.used_cnames.add(mangle(x))
        for y, ty in fd.vars:
            self.env[y] = ty
            storage = mangle(y) + "_storage"
            self.struct_storage[y] = storage
            self.cnames[y] = f"(&{storage})"
            self.used_cnames.add(mangle(y))
            self.used_cnames.add(storage)

    # -- helpers ---------------------------------------------------------

    def type_of(self, e: Expr) -> Ty:
        ctx = TypingContext(dict(self.env), {}, self.gen.tp.composites,
                            self.gen.tp.psi, self.gen.tp.fun_sigs, {})
        return infer_expr(ctx, e)[0]

    def hoist(self, ty: Ty, prefix: str = "tmp") -> str:
        name = self.names.fresh(prefix)
        self.locals.append(cdecl(ty, name) + ";")
        return name

    def bind_cname(self, src: str) -> str:
        base = mangle(src)
        cname = base
        n = 1
        while cname in self.used_cnames:
            n += 1
            cname = f"{base}__{n}"
        self.used_cnames.add(cname)
        return cname

    def materialize(self, frag: _Frag, ty: Ty) -> _Frag:
        """Pin a value into a temp so later statements cannot disturb it."""
        if frag.cexpr is None or frag.pure and _is_simple(frag.cexpr):
            return frag
        t = self.hoist(ty)
        return _Frag(frag.stmts + [f"{t} = {frag.cexpr};"], t, True)

    # -- function --------------------------------------------------------

    def emit(self) -> str:
        fd = self.fd
        body_stmts = self.emit_tail(fd.body)
        args = ", ".join(cdecl(ty, self.cnames[x]) for x, ty in fd.args) \
            or "void"
        struct_vars = [cdecl(ty.target, self.struct_storage[y]) + ";"
                       for y, ty in fd.vars]
        head = f"{ctype(fd.rt)} {c_fun_name(fd.name, self.gen.mode)}({args})"
        if fd.sec is not None and self.gen.mode == "ebpf":
            head = f'SEC("{fd.sec}")\n' + head
        lines = [head + " {"]
        for d in struct_vars + self.locals:
            lines.append("    " + d)
        for st in body_stmts:
            lines.extend("    " + ln for ln in st.splitlines())
        lines.append("}")
        return "\n".join(lines)

    # -- tail position ---------------------------------------------------

    def emit_tail(self, e: Expr) -> list[str]:
        if isinstance(e, Let):
            saved = self.env.get(e.name)
            saved_cname = self.cnames.get(e.name)
            frag, _ = self.emit_let_binding(e)
            out = frag.stmts + self.emit_tail(e.body)
            self._restore(e.name, saved, saved_cname)
            return out
        if isinstance(e, Cond):
            g = self.emit_value(e.guard)
            then_s = self.emit_tail(e.then)
            else_s = self.emit_tail(e.otherwise)
            return g.stmts + self._if_else(g.cexpr, then_s, else_s)
        if isinstance(e, Match):
            return self.emit_match(e, tail=True)[0]
        frag = self.emit_value(e)
        ret = "return;" if frag.cexpr is None else f"return {frag.cexpr};"
        return frag.stmts + [ret]

    def _if_else(self, guard: str, then_s: list[str],
                 else_s: list[str]) -> list[str]:
        out = [f"if ({guard}) {{"]
        out.extend("    " + ln for st in then_s for ln in st.splitlines())
        if else_s:
            out.append("} else {")
            out.extend("    " + ln for st in else_s for ln in st.splitlines())
        out.append("}")
        return out

    def emit_let_binding(self, e: Let) -> tuple[_Frag, Optional[str]]:
        """Statements performing the binding; returns (frag, cname|None)."""
        bound = self.emit_value(e.bound)
        if e.name == "_" or isinstance(e.declared, UnitTy) \
                or bound.cexpr is None:
            stmts = list(bound.stmts)
            if bound.cexpr is not None and not bound.pure:
                stmts.append(f"(void) ({bound.cexpr});")
            self.env[e.name] = e.declared
            return _Frag(stmts, None, False), None
        cname = self.bind_cname(e.name)
        self.locals.append(cdecl(e.declared, cname) + ";")
        stmts = bound.stmts + [f"{cname} = {bound.cexpr};"]
        self.env[e.name] = e.declared
        self.cnames[e.name] = cname
        return _Frag(stmts, None, False), cname

    def _restore(self, name: str, ty: Optional[Ty], cname: Optional[str]):
        if ty is None:
            self.env.pop(name, None)
        else:
            self.env[name] = ty
        if cname is None:
            self.cnames.pop(name, None)
        else:
            self.cnames[name] = cname

    # -- value position ----------------------------------------------------

    def emit_value(self, e: Expr) -> _Frag:
        if isinstance(e, Var):
            if isinstance(self.env.get(e.name), UnitTy):
                return _Frag([], None, True)  # unit carries no C value
            return _Frag([], self.cnames.get(e.name, mangle(e.name)), True)
        if isinstance(e, ConstInt):
            if e.value == -(1 << 31):
                return _Frag([], "BPL_INT_MIN", True)
            return _Frag([], str(e.value), True)
        if isinstance(e, ConstLong):
            if e.value == -(1 << 63):
                return _Frag([], "BPL_LONG_MIN", True)
            return _Frag([], f"{e.value}LL", True)
        if isinstance(e, ConstBool):
            return _Frag([], "1" if e.value else "0", True)
        if isinstance(e, UnitLit):
            return _Frag([], None, True)
        if isinstance(e, NoneLit):
            return _Frag([], "NULL", True)
        if isinstance(e, SomeLit):
            return self.emit_value(e.value)  # option erases to the pointer
        if isinstance(e, Prim):
            return self.emit_prim(e)
        if isinstance(e, App):
            return self.emit_app(e)
        if isinstance(e, Let):
            saved = self.env.get(e.name)
            saved_cname = self.cnames.get(e.name)
            frag, _ = self.emit_let_binding(e)
            body = self.emit_value(e.body)
            self._restore(e.name, saved, saved_cname)
            return _Frag(frag.stmts + body.stmts, body.cexpr, False)
        if isinstance(e, Cond):
            return self.emit_cond_value(e)
        if isinstance(e, Match):
            _, frag = self.emit_match(e, tail=False)
            return frag
        if isinstance(e, Field):
            return self.emit_field(e)
        if isinstance(e, StructInit):
            return self.emit_struct_init(e)
        if isinstance(e, For):
            return self.emit_for(e)
        raise CgenError(f"cannot emit {type(e).__name__}")

    # -- operators ---------------------------------------------------------

    def emit_prim(self, e: Prim) -> _Frag:
        op = e.op
        if isinstance(op, RefOp):
            inner = e.operands[0]
            ty = self.type_of(inner)
            frag = self.emit_value(inner)
            t = self.hoist(ty)
            return _Frag(frag.stmts + [f"{t} = {frag.cexpr};"], f"(&{t})", True)
        if isinstance(op, Deref):
            inner = e.operands[0]
            ity = self.type_of(inner)
            assert isinstance(ity, RefTy), "deref operand must be a ref"
            frag = self.emit_value(inner)
            return _Frag(frag.stmts, f"(*{_p(frag.cexpr)})", False)
        if isinstance(op, Assign):
            lhs = self.emit_value(e.operands[0])
            lty = self.type_of(e.operands[0])
            assert isinstance(lty, RefTy), "assignment goes through a ref"
            rhs = self.emit_value(e.operands[1])
            if rhs.stmts:
                lhs = self.materialize(lhs, lty)
            stmts = lhs.stmts + rhs.stmts + \
                [f"*{_p(lhs.cexpr)} = {rhs.cexpr};"]
            return _Frag(stmts, None, False)
        if isinstance(op, Uop):
            inner = e.operands[0]
            frag = self.emit_value(inner)
            c = _p(frag.cexpr)
            if op.kind is UopKind.LOGNOT:
                return _Frag(frag.stmts, f"(!{c})", frag.pure)
            lane = self.type_of(inner)
            u, s = ("u64", "i64") if isinstance(lane, LongTy) else ("u32", "i32")
            suffix = "uLL" if u == "u64" else "u"
            if op.kind is UopKind.NEG:
                return _Frag(frag.stmts,
                             f"({s})(0{suffix} - ({u}){c})", frag.pure)
            return _Frag(frag.stmts, f"(~{c})", frag.pure)
        if isinstance(op, Cast):
            inner = e.operands[0]
            frag = self.emit_value(inner)
            c = _p(frag.cexpr)
            if isinstance(op.target, IntTy):
                return _Frag(frag.stmts, f"(i32)(u32){c}", frag.pure)
            return _Frag(frag.stmts, f"(i64){c}", frag.pure)
        if isinstance(op, Bop):
            return self.emit_bop(e, op.kind)
        raise CgenError(f"cannot emit primitive {op!r}")

    def emit_bop(self, e: Prim, kind: BopKind) -> _Frag:
        lhs_e, rhs_e = e.operands
        lty = self.type_of(lhs_e)
        lhs = self.emit_value(lhs_e)
        rhs = self.emit_value(rhs_e)
        if rhs.stmts:
            lhs = self.materialize(lhs, lty)
        stmts = lhs.stmts + rhs.stmts
        pure = lhs.pure and rhs.pure and not stmts
        a, b = lhs.cexpr, rhs.cexpr
        is_long = isinstance(lty, LongTy)
        u, s = ("u64", "i64") if is_long else ("u32", "i32")
        width = 64 if is_long else 32
        tmin = "BPL_LONG_MIN" if is_long else "BPL_INT_MIN"
        if kind in (BopKind.EQ, BopKind.NE, BopKind.LT, BopKind.LE,
                    BopKind.GT, BopKind.GE):
            return _Frag(stmts, f"({_p(a)} {kind.value} {_p(b)})", pure)
        if kind is BopKind.LAND:
            # Both operands are already evaluated 0/1 values; bitwise '&'
            # mirrors the source semantics, which never short-circuits.
            return _Frag(stmts, f"({_p(a)} & {_p(b)})", pure)
        if kind is BopKind.LOR:
            return _Frag(stmts, f"({_p(a)} | {_p(b)})", pure)
        if kind in (BopKind.ADD, BopKind.SUB, BopKind.MUL):
            cop = {BopKind.ADD: "+", BopKind.SUB: "-", BopKind.MUL: "*"}[kind]
            return _Frag(stmts,
                         f"({s})(({u}){_p(a)} {cop} ({u}){_p(b)})", pure)
        if kind in (BopKind.AND, BopKind.OR, BopKind.XOR):
            return _Frag(stmts,
                         f"({s})(({u}){_p(a)} {kind.value} ({u}){_p(b)})",
                         pure)
        if kind in (BopKind.DIV, BopKind.MOD):
            return self.emit_divmod(e, kind, stmts, lty, a, b, lhs, rhs)
        if kind in (BopKind.SHL, BopKind.SHR):
            return self.emit_shift(e, kind, stmts, lty, a, b, lhs, rhs)
        raise CgenError(f"cannot emit operator {kind}")

    def _const_int_value(self, e: Expr) -> Optional[int]:
        if isinstance(e, (ConstInt, ConstLong)):
            return e.value
        return None

    def emit_divmod(self, e, kind, stmts, lty, a, b, lhs, rhs) -> _Frag:
        is_long = isinstance(lty, LongTy)
        tmin = "BPL_LONG_MIN" if is_long else "BPL_INT_MIN"
        cop = kind.value
        bval = self._const_int_value(e.operands[1])
        if bval is not None and bval != 0 and bval != -1:
            self.gen.const_safe_ops += 1
            return _Frag(stmts, f"({_p(a)} {cop} {_p(b)})",
                         lhs.pure and rhs.pure and not stmts)
        # The guard mentions each operand twice, so pin them first.
        if not (lhs.pure and _is_simple(a)):
            t = self.hoist(lty)
            stmts = stmts + [f"{t} = {a};"]
            a = t
        if not (rhs.pure and _is_simple(b)):
            t = self.hoist(lty)
            stmts = stmts + [f"{t} = {b};"]
            b = t
        guard = (f"({_p(b)} == 0 ? 0 : "
                 f"(({_p(a)} == {tmin} && {_p(b)} == -1) ? 0 : "
                 f"{_p(a)} {cop} {_p(b)}))")
        self.gen.guarded_ops += 1
        return _Frag(stmts, guard, False)

    def emit_shift(self, e, kind, stmts, lty, a, b, lhs, rhs) -> _Frag:
        is_long = isinstance(lty, LongTy)
        u, s = ("u64", "i64") if is_long else ("u32", "i32")
        width = 64 if is_long else 32
        bval = self._const_int_value(e.operands[1])
        if kind is BopKind.SHL:
            body = f"({s})(({u}){_p(a)} << {_p(b)})"
        else:
            body = f"({_p(a)} >> {_p(b)})"
        if bval is not None and 0 <= bval < width:
            self.gen.const_safe_ops += 1
            return _Frag(stmts, body, lhs.pure and rhs.pure and not stmts)
        if not (rhs.pure and _is_simple(b)):
            t = self.hoist(lty)
            stmts = stmts + [f"{t} = {b};"]
            b = t
            if kind is BopKind.SHL:
                body = f"({s})(({u}){_p(a)} << {_p(b)})"
            else:
                body = f"({_p(a)} >> {_p(b)})"
        self.gen.guarded_ops += 1
        return _Frag(stmts, f"(({u}){_p(b)} >= {width} ? 0 : {body})", False)

    # -- calls, fields, structs ---------------------------------------------

    def emit_app(self, e: App) -> _Frag:
        assert isinstance(e.callee, Var)
        name = e.callee.name
        sig = self.gen.tp.fun_sigs.get(name) or self.gen.tp.psi.get(name)
        frags = []
        arg_tys = sig.arg_types if sig is not None else [INT] * len(e.args)
        for a, ty in zip(e.args, arg_tys):
            frags.append((self.emit_value(a), ty))
        # Pin earlier arguments whenever a later one needs statements.
        need_pin = False
        for i in range(len(frags) - 1, -1, -1):
            frag, ty = frags[i]
            if need_pin and frag.cexpr is not None:
                frags[i] = (self.materialize(frag, ty), ty)
            if frags[i][0].stmts:
                need_pin = True
        stmts = [st for frag, _ in frags for st in frag.stmts]
        args = ", ".join(frag.cexpr for frag, _ in frags)
        call = f"{c_fun_name(name, self.gen.mode)}({args})"
        res = sig.res_type if sig is not None else INT
        if isinstance(res, UnitTy):
            return _Frag(stmts + [call + ";"], None, False)
        t = self.hoist(res, "r")
        return _Frag(stmts + [f"{t} = {call};"], t, True)

    def emit_field(self, e: Field) -> _Frag:
        tty = self.type_of(e.target)
        frag = self.emit_value(e.target)
        sid = None
        deref = False
        if isinstance(tty, StructTy):
            sid = tty.sid
        elif isinstance(tty, RefTy) and isinstance(tty.target, StructTy):
            sid, deref = tty.target.sid, True
        elif isinstance(tty, OptionTy):
            sid, deref = tty.inner.target.sid, True
        co = self.gen.tp.composites[sid]
        fty = co.field_type(e.fname)
        if isinstance(fty, BytesTy):
            # Kernel contexts carry a packet as a {data, data_end} pair;
            # surface it as the bytes_t range the matcher checks against.
            t = self.hoist(BYTES, "b")
            acc = f"{_p(frag.cexpr)}->" if deref else f"{_p(frag.cexpr)}."
            stmts = frag.stmts + [
                f"{t}.start = (unsigned char *)(unsigned long){acc}data;",
                f"{t}.end = (unsigned char *)(unsigned long){acc}data_end;",
            ]
            return _Frag(stmts, t, True)
        acc = "->" if deref else "."
        return _Frag(frag.stmts, f"{_p(frag.cexpr)}{acc}{e.fname}", False)

    def emit_struct_init(self, e: StructInit) -> _Frag:
        ty = self.env[e.name]
        assert isinstance(ty, RefTy) and isinstance(ty.target, StructTy)
        base = self.struct_storage[e.name]
        stmts: list[str] = []
        for fname, fe in e.fields:
            frag = self.emit_value(fe)
            stmts.extend(frag.stmts)
            stmts.append(f"{base}.{fname} = {frag.cexpr};")
        return _Frag(stmts, f"(&{base})", False)

    # -- control flow ---------------------------------------------------------

    def emit_cond_value(self, e: Cond) -> _Frag:
        g = self.emit_value(e.guard)
        then = self.emit_value(e.then)
        other = self.emit_value(e.otherwise)
        rty = self.type_of(e)
        if not then.stmts and not other.stmts and then.cexpr is not None \
                and other.cexpr is not None:
            return _Frag(g.stmts,
                         f"({_p(g.cexpr)} ? {then.cexpr} : {other.cexpr})",
                         g.pure and then.pure and other.pure)
        t = self.hoist(rty) if not isinstance(rty, UnitTy) else None
        then_s = then.stmts + ([f"{t} = {then.cexpr};"] if t else
                               _discard(then))
        other_s = other.stmts + ([f"{t} = {other.cexpr};"] if t else
                                 _discard(other))
        return _Frag(g.stmts + self._if_else(g.cexpr, then_s, other_s),
                     t, False)

    def emit_for(self, e: For) -> _Frag:
        lo = self.emit_value(e.lo)
        hi = self.emit_value(e.hi)
        if hi.stmts:
            lo = self.materialize(lo, self.type_of(e.lo))
        l = self.hoist(LONG, "l")
        h = self.hoist(LONG, "h")
        i = self.hoist(LONG, "i")
        body = self.emit_value(e.body)
        body_s = body.stmts + _discard(body)
        if e.direction is Direction.UP:
            cmp_, step_ = "<=", f"{i}++"
        else:
            cmp_, step_ = ">=", f"{i}--"
        stmts = lo.stmts + hi.stmts + [
            f"{l} = {lo.cexpr};",
            f"{h} = {hi.cexpr};",
            f"if ({l} {cmp_} {h}) {{",
            f"    for ({i} = {l}; {i} {cmp_} {h}; {step_}) {{",
        ]
        stmts.extend("        " + ln for st in body_s for ln in st.splitlines())
        stmts.append("    }")
        stmts.append("}")
        return _Frag(stmts, None, False)

    def emit_match(self, e: Match,
                   tail: bool) -> tuple[list[str], Optional[_Frag]]:
        sty = self.type_of(e.scrutinee)
        if isinstance(sty, OptionTy):
            return self.emit_match_option(e, sty, tail)
        return self.emit_match_bytes(e, tail)

    def emit_match_option(self, e: Match, sty: OptionTy, tail: bool):
        scrut = self.emit_value(e.scrutinee)
        scrut = self.materialize(scrut, sty)
        none_arm = next(((p, b) for p, b in e.arms
                         if isinstance(p, (Pnone, Pwild))), None)
        some_arm = next(((p, b) for p, b in e.arms if isinstance(p, Psome)),
                        None)
        if some_arm is None:
            some_arm = next((p, b) for p, b in e.arms if isinstance(p, Pwild))
        rty = self.type_of(e)
        t = None
        if not tail and not isinstance(rty, UnitTy):
            t = self.hoist(rty)

        def arm_stmts(p, body, binder_val=None):
            saved = None
            if isinstance(p, Psome):
                cname = self.bind_cname(p.binder)
                self.locals.append(cdecl(sty.inner, cname) + ";")
                saved = (p.binder, self.env.get(p.binder),
                         self.cnames.get(p.binder))
                self.env[p.binder] = sty.inner
                self.cnames[p.binder] = cname
                prefix = [f"{cname} = {binder_val};"]
            else:
                prefix = []
            if tail:
                out = prefix + self.emit_tail(body)
            else:
                frag = self.emit_value(body)
                assign = [f"{t} = {frag.cexpr};"] if t else _discard(frag)
                out = prefix + frag.stmts + assign
            if saved:
                self._restore(*saved)
            return out

        none_s = arm_stmts(*none_arm)
        some_s = arm_stmts(*some_arm, binder_val=scrut.cexpr)
        stmts = scrut.stmts + self._if_else(f"{scrut.cexpr} == NULL",
                                            none_s, some_s)
        if tail:
            return stmts, None
        return stmts, _Frag(stmts, t, False)

    def emit_match_bytes(self, e: Match, tail: bool):
        scrut = self.emit_value(e.scrutinee)
        b = self.hoist(BYTES, "b")
        stmts = scrut.stmts + [f"{b} = {scrut.cexpr};"]
        pat: Pbytes = e.arms[0][0]
        body = e.arms[0][1]
        fallback = e.arms[1][1]
        rty = self.type_of(e)
        t = None
        if not tail and not isinstance(rty, UnitTy):
            t = self.hoist(rty)

        def finish(frag_body):
            if tail:
                return self.emit_tail(frag_body)
            frag = self.emit_value(frag_body)
            assign = [f"{t} = {frag.cexpr};"] if t else _discard(frag)
            return frag.stmts + assign

        if isinstance(pat.target, StructTy):
            size_expr = f"sizeof(struct {pat.target.sid})"
            binder_ty: Ty = RefTy(pat.target)
        else:
            size_expr = f"sizeof({ctype(pat.target)})"
            binder_ty = lane_type(pat.target)

        fail_s = finish(fallback)

        saved = []
        ok_s: list[str] = []
        binder_c = self.bind_cname(pat.binder)
        saved.append((pat.binder, self.env.get(pat.binder),
                      self.cnames.get(pat.binder)))
        self.env[pat.binder] = binder_ty
        self.cnames[pat.binder] = binder_c
        if isinstance(pat.target, StructTy):
            self.locals.append(cdecl(binder_ty, binder_c) + ";")
            ok_s.append(f"{binder_c} = (struct {pat.target.sid} *){b}.start;")
            for y, yty in pat.fields:
                ycname = self.bind_cname(y)
                lane = lane_type(yty)
                self.locals.append(cdecl(lane, ycname) + ";")
                saved.append((y, self.env.get(y), self.cnames.get(y)))
                self.env[y] = lane
                self.cnames[y] = ycname
                ok_s.append(f"{ycname} = {binder_c}->{y};")
        else:
            self.locals.append(cdecl(binder_ty, binder_c) + ";")
            ok_s.append(f"{binder_c} = *({ctype(pat.target)} *){b}.start;")
        ok_s.append(f"{b}.start += {size_expr};")
        ok_s.extend(finish(body))
        for entry in reversed(saved):
            self._restore(*entry)

        stmts = stmts + self._if_else(f"{b}.start + {size_expr} > {b}.end",
                                      fail_s, ok_s)
        if tail:
            return stmts, None
        return stmts, _Frag(stmts, t, False)


def _discard(frag: _Frag) -> list[str]:
    if frag.cexpr is not None and not frag.pure:
        return [f"(void) ({frag.cexpr});"]
    return []


# ---------------------------------------------------------------------------
# Program emission
# ---------------------------------------------------------------------------

class ProgramEmitter:
    def __init__(self, tp: TypedProgram, mode: str = "host"):
        if mode not in ("host", "ebpf"):
            raise CgenError(f"unknown mode {mode!r}")
        self.tp = tp
        self.mode = mode
        self.guarded_ops = 0
        self.const_safe_ops = 0
        self.globals_gamma: dict[str, Ty] = {
            d.name: d.ty for d in tp.program.decls if isinstance(d, GlobDecl)
        }

    def emit(self) -> CUnit:
        parts = ["/* generated by beeplc; edits will be overwritten */",
                 PRELUDE]
        parts.append(EBPF_HELPERS if self.mode == "ebpf" else HOST_HELPERS)
        for co in self.tp.program.composites:
            if co.sid in BUILTIN_STRUCTS:
                continue
            fields = "".join(f"    {cdecl(t, f)};\n" for f, t in co.fields)
            parts.append(f"struct {co.sid} {{\n{fields}}};")
        for d in self.tp.program.decls:
            if isinstance(d, ExtDecl):
                parts.append(self.emit_extern(d))
        for d in self.tp.program.decls:
            if isinstance(d, GlobDecl):
                parts.append(self.emit_global(d))
        for d in self.tp.program.decls:
            if isinstance(d, FunDecl):
                parts.append(FunctionEmitter(self, d).emit())
        if self.mode == "host":
            parts.append(self.emit_main_shim())
        text = "\n\n".join(p.rstrip() for p in parts if p) + "\n"
        return CUnit(text, self.mode, self.guarded_ops, self.const_safe_ops)

    def emit_extern(self, d: ExtDecl) -> str:
        if self.mode == "host":
            args = ", ".join(f"{ctype(t)} __bpl_a{i}"
                             for i, t in enumerate(d.arg_types)) or "void"
            body = "" if isinstance(d.res_type, UnitTy) else " return 0;"
            ignores = "".join(f" (void) __bpl_a{i};"
                              for i in range(len(d.arg_types)))
            return (f"static {ctype(d.res_type)} {d.name}({args}) "
                    f"{{{ignores}{body} }}")
        args = ", ".join(ctype(t) for t in d.arg_types) or "void"
        return f"extern {ctype(d.res_type)} {d.name}({args});"

    def emit_global(self, d: GlobDecl) -> str:
        sec = f' SEC("{d.sec}")' if d.sec and self.mode == "ebpf" else ""
        prefix = "static " if self.mode == "host" else ""
        if isinstance(d.init, bytes):
            text = d.init[:-1].decode()
            return f'{prefix}char {d.name}[]{sec} = "{text}";'
        if isinstance(d.init, VOption):
            return f"{prefix}{cdecl(d.ty, d.name)}{sec};"
        if isinstance(d.init, (VInt, VLong)):
            suffix = "LL" if isinstance(d.init, VLong) else ""
            return f"{prefix}{cdecl(d.ty, d.name)}{sec} = {d.init.value}{suffix};"
        if isinstance(d.init, VBool):
            return f"{prefix}{cdecl(d.ty, d.name)}{sec} = " \
                   f"{1 if d.init.value else 0};"
        raise CgenError(f"cannot emit global {d.name}")

    def emit_main_shim(self) -> str:
        entry = self.tp.entry_point()
        if entry is None:
            return "/* no entry point; translation unit is a library */"
        args = []
        for _, ty in entry.args:
            if isinstance(ty, (OptionTy, RefTy)):
                args.append(f"({ctype(ty)}) 0")
            else:
                args.append("0")
        call = f"{c_fun_name(entry.name, self.mode)}({', '.join(args)})"
        if isinstance(entry.rt, UnitTy):
            return ("int main(void) {\n"
                    f"    {call};\n"
                    "    printf(\"0\\n\");\n"
                    "    return 0;\n}")
        fmt, cast = ("%lld", "(long long)") if isinstance(entry.rt, LongTy) \
            else ("%d", "(int)")
        return ("int main(void) {\n"
                f"    {ctype(entry.rt)} __bpl_result = {call};\n"
                f"    printf(\"{fmt}\\n\", {cast} __bpl_result);\n"
                "    return (int) (__bpl_result & 0xff);\n}")


def emit_program(tp: TypedProgram, mode: str = "host") -> CUnit:
    return ProgramEmitter(tp, mode).emit()


# ---------------------------------------------------------------------------
# Syntactic guard audit
# ---------------------------------------------------------------------------

_DIV_LIKE = re.compile(r"[^/*]/[^/*=]|[^%]%[^=]|<<|>>(?!=)")


def audit_guards(cu: CUnit) -> list[str]:
    """Every emitted /, %, <<, >> must sit inside an operand guard or be
    proven safe from literal operands; returns the violations."""
    text = re.sub(r'"(?:[^"\\]|\\.)*"', '""', cu.text)
    text = "\n".join(ln for ln in text.splitlines()
                     if not ln.strip().startswith("/*")
                     and not ln.strip().startswith("#"))
    hits = 0
    for m in _DIV_LIKE.finditer(text):
        hits += 1
    expected = cu.guarded_ops + cu.const_safe_ops
    if hits > expected:
        return [f"{hits} division/shift sites in output, "
                f"only {expected} accounted as guarded or constant-safe"]
    return []
