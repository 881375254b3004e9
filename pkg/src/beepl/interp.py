"""Reference small-step interpreter for BeePL.

Evaluation works over states <Delta, Omega, Theta> with a block-based memory
model: fresh monotone block ids, per-block typed cells, and a raw-byte shadow
for byte regions.  External helpers are served by a deterministic
ExternalWorld.  Division, modulo and shifts go through the unsafe-operand
guard, which turns would-be undefined behavior into zero.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field as dc_field
from enum import Enum
from typing import Callable, Optional, Union

from .core import (
    App, ArrayTy, Assign, BOOL, BoolTy, Bop, BopKind, BYTES, BytesTy,
    Cast, Composite, Cond, Deref, Direction, Expr, Field, For, FunDecl,
    GlobDecl, INT, IntTy, Let, Loc, LONG, LongTy, Match, NoneLit, OptionTy,
    Pbytes, Pnone, Prim, Psome, Pwild, RefOp, RefTy, Repeat, Seq, Sign,
    SomeLit, StructInit, StructTy, Ty, UNIT, UnitLit, Uop, UopKind, VBool,
    VBytes, VInt, VLoc, VLong, VOption, VUndef, VUnit, Value, Var,
    expr_to_value, rename_var, sizeof, struct_layout, subst, value_to_expr,
)
from .typecheck import TypedProgram


class InterpError(Exception):
    pass


class FuelExhausted(InterpError):
    pass


class StuckState(InterpError):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class TooShort(InterpError):
    """Byte region smaller than the pattern target; drives the fallback arm."""


# ---------------------------------------------------------------------------
# Memory
# ---------------------------------------------------------------------------

class Perm(Enum):
    FREEABLE = "Freeable"
    READONLY = "ReadOnly"


@dataclass
class Block:
    size: int
    perm: Perm = Perm.FREEABLE
    cells: dict[int, Value] = dc_field(default_factory=dict)
    raw: Optional[bytearray] = None


@dataclass
class Memory:
    blocks: dict[int, Block] = dc_field(default_factory=dict)
    next_block: int = 1

    def alloc(self, size: int, perm: Perm = Perm.FREEABLE,
              raw: Optional[bytes] = None) -> int:
        bid = self.next_block
        self.next_block += 1
        self.blocks[bid] = Block(size, perm,
                                 raw=bytearray(raw) if raw is not None else None)
        return bid

    def is_valid_access(self, bid: int, perm: Perm = Perm.FREEABLE) -> bool:
        b = self.blocks.get(bid)
        return b is not None and b.perm is perm

    def load(self, bid: int, off: int) -> Optional[Value]:
        b = self.blocks.get(bid)
        if b is None:
            return None
        return b.cells.get(off)

    def store(self, bid: int, off: int, v: Value) -> bool:
        b = self.blocks.get(bid)
        if b is None:
            return False
        b.cells[off] = v
        return True


@dataclass
class Monitors:
    """Runtime monitors backing the safety lemmas; all must stay at zero."""

    null_deref_events: int = 0
    uninit_read_events: int = 0
    undef_events: int = 0

    def clean(self) -> bool:
        return (self.null_deref_events == 0 and self.uninit_read_events == 0
                and self.undef_events == 0)


@dataclass(frozen=True)
class GlobalBinding:
    block: int
    ty: Ty


@dataclass
class State:
    delta: dict[str, Union[FunDecl, GlobalBinding]]
    omega: dict[str, tuple[int, Ty]]
    theta: Memory
    sigma: dict[int, Ty]  # block -> content type
    composites: dict[str, Composite]
    psi: dict = dc_field(default_factory=dict)  # external signatures
    monitors: Monitors = dc_field(default_factory=Monitors)
    rename_counter: int = 0

    def snapshot(self) -> "State":
        return copy.deepcopy(self)

    def fresh_name(self, base: str) -> str:
        self.rename_counter += 1
        return f"{base}#{self.rename_counter}"


# ---------------------------------------------------------------------------
# External world
# ---------------------------------------------------------------------------

DEFAULT_UID_GID = 0x000003E8000003E8


@dataclass
class ExternalWorld:
    """Deterministic mock of the kernel-side environment."""

    maps: dict[str, dict[int, int]] = dc_field(default_factory=dict)
    uid_gid: int = DEFAULT_UID_GID
    packet: bytes = b""
    io_log: list[str] = dc_field(default_factory=list)
    map_blocks: dict[int, str] = dc_field(default_factory=dict)

    def call(self, name: str, args: list[Value], state: State,
             res_type: Ty) -> Value:
        self.io_log.append(name)
        if name == "bpf_get_current_uid_gid":
            return VLong(wrap(self.uid_gid, 64))
        if name == "bpf_map_lookup_elem":
            return self._map_lookup(args, state)
        # Unknown externals answer with the zero value of their result type,
        # keeping evaluation total and deterministic.
        return zero_value(res_type)

    def _map_lookup(self, args: list[Value], state: State) -> Value:
        if len(args) != 2:
            return VOption(None)
        m, k = args
        if not (isinstance(m, VOption) and m.value is not None):
            return VOption(None)
        name = self.map_blocks.get(m.value.block)
        if name is None:
            return VOption(None)
        if not (isinstance(k, VOption) and k.value is not None):
            return VOption(None)
        kv = state.theta.load(k.value.block, k.value.offset)
        if not isinstance(kv, (VInt, VLong)):
            return VOption(None)
        stored = self.maps.get(name, {}).get(kv.value)
        if stored is None:
            return VOption(None)
        bid = state.theta.alloc(8)
        state.theta.store(bid, 0, VLong(wrap(stored, 64)))
        state.sigma[bid] = LONG
        return VOption(VLoc(bid, 0))


def zero_value(ty: Ty) -> Value:
    if isinstance(ty, IntTy):
        return VInt(0)
    if isinstance(ty, LongTy):
        return VLong(0)
    if isinstance(ty, BoolTy):
        return VBool(False)
    if isinstance(ty, OptionTy):
        return VOption(None)
    return VUnit()


# ---------------------------------------------------------------------------
# Numeric semantics
# ---------------------------------------------------------------------------

def wrap(v: int, bits: int) -> int:
    v &= (1 << bits) - 1
    return v - (1 << bits) if v >= (1 << (bits - 1)) else v


def _lane_bits(v: Value) -> int:
    return 32 if isinstance(v, VInt) else 64


def _mk(bits: int, v: int) -> Value:
    return VInt(wrap(v, 32)) if bits == 32 else VLong(wrap(v, 64))


def unsafe(op: BopKind, v1: Value, v2: Value) -> bool:
    """Operand pairs whose C meaning would be undefined; they evaluate to 0."""
    if op not in (BopKind.DIV, BopKind.MOD, BopKind.SHL, BopKind.SHR):
        return False
    bits = _lane_bits(v1)
    a, b = v1.value, v2.value
    if op in (BopKind.DIV, BopKind.MOD):
        if b == 0:
            return True
        return a == -(1 << (bits - 1)) and b == -1
    # shifts
    return b < 0 or b >= bits


def _trunc_div(a: int, b: int) -> int:
    q = abs(a) // abs(b)
    return -q if (a < 0) != (b < 0) else q


def bop_sem(op: BopKind, v1: Value, v2: Value) -> Value:
    """Two's-complement wrapping semantics at the operand width.

    Unsafe operand pairs yield the undef sentinel; the BOPV guard normally
    intercepts them first and returns zero instead.
    """
    if op is BopKind.LAND:
        return VBool(v1.value and v2.value)
    if op is BopKind.LOR:
        return VBool(v1.value or v2.value)
    if op is BopKind.EQ:
        return VBool(v1.value == v2.value)
    if op is BopKind.NE:
        return VBool(v1.value != v2.value)
    if op in (BopKind.LT, BopKind.LE, BopKind.GT, BopKind.GE):
        a, b = v1.value, v2.value
        return VBool({BopKind.LT: a < b, BopKind.LE: a <= b,
                      BopKind.GT: a > b, BopKind.GE: a >= b}[op])
    if unsafe(op, v1, v2):
        return VUndef()
    bits = _lane_bits(v1)
    a, b = v1.value, v2.value
    if op is BopKind.ADD:
        return _mk(bits, a + b)
    if op is BopKind.SUB:
        return _mk(bits, a - b)
    if op is BopKind.MUL:
        return _mk(bits, a * b)
    if op is BopKind.DIV:
        return _mk(bits, _trunc_div(a, b))
    if op is BopKind.MOD:
        return _mk(bits, a - _trunc_div(a, b) * b)
    if op is BopKind.AND:
        return _mk(bits, a & b)
    if op is BopKind.OR:
        return _mk(bits, a | b)
    if op is BopKind.XOR:
        return _mk(bits, a ^ b)
    if op is BopKind.SHL:
        return _mk(bits, a << b)
    if op is BopKind.SHR:
        return _mk(bits, a >> b)  # arithmetic shift on the signed lane
    raise InterpError(f"bop_sem: unknown operator {op}")


def uop_sem(op, v: Value) -> Value:
    if isinstance(op, Uop):
        if op.kind is UopKind.NEG:
            return _mk(_lane_bits(v), -v.value)
        if op.kind is UopKind.BITNOT:
            return _mk(_lane_bits(v), ~v.value)
        if op.kind is UopKind.LOGNOT:
            return VBool(not v.value)
    if isinstance(op, Cast):
        if isinstance(op.target, IntTy):
            return VInt(wrap(v.value, 32))
        return VLong(wrap(v.value, 64))
    raise InterpError(f"uop_sem: unknown operator {op}")


def range_count(v1: Value, v2: Value, d: Direction) -> int:
    """Inclusive iteration count of a for-loop; empty ranges give zero."""
    if d is Direction.UP:
        return max(0, v2.value - v1.value + 1)
    return max(0, v1.value - v2.value + 1)


# ---------------------------------------------------------------------------
# Byte extraction
# ---------------------------------------------------------------------------

def _decode_prim(data: bytes, ty: Ty) -> Value:
    if isinstance(ty, BoolTy):
        return VBool(data[0] != 0)
    raw = int.from_bytes(data, "little", signed=False)
    if isinstance(ty, IntTy):
        if ty.sign is Sign.SIGNED:
            raw = wrap(raw, ty.size)
        return VInt(wrap(raw, 32))
    if isinstance(ty, LongTy):
        return VLong(wrap(raw, 64))
    raise InterpError(f"cannot decode {ty} from bytes")


def extract(v: VBytes, target: Ty, theta: Memory,
            composites: dict[str, Composite],
            sigma: Optional[dict[int, Ty]] = None
            ) -> tuple[Value, dict[str, Value]]:
    """Decode a structured value from a byte region (little-endian fields).

    Raises TooShort when the region cannot hold the target, which sends
    evaluation to the fallback arm.
    """
    size = sizeof(target, composites)
    if v.length < size:
        raise TooShort(f"region of {v.length} bytes, need {size}")
    block = theta.blocks.get(v.block)
    if block is None or block.raw is None:
        raise StuckState("byte region without raw backing")
    data = bytes(block.raw[v.offset:v.offset + size])
    if len(data) < size:
        raise TooShort("byte region inconsistent with its backing block")
    if not isinstance(target, StructTy):
        return _decode_prim(data, target), {}
    co = composites[target.sid]
    offsets, _, _ = struct_layout(co, composites)
    bid = theta.alloc(size)
    values: dict[str, Value] = {}
    for fname, fty in co.fields:
        if isinstance(fty, (ArrayTy, BytesTy)):
            continue  # aggregate fields are not readable as values
        off = offsets[fname]
        fsize = sizeof(fty, composites)
        values[fname] = _decode_prim(data[off:off + fsize], fty)
        theta.store(bid, off, values[fname])
    if sigma is not None:
        sigma[bid] = target
    return VLoc(bid, 0), values


# ---------------------------------------------------------------------------
# Small-step evaluation
# ---------------------------------------------------------------------------

@dataclass
class Stepped:
    state: State
    expr: Expr
    rule: str


@dataclass
class IsValue:
    value: Value


@dataclass
class Stuck:
    reason: str


StepOutcome = Union[Stepped, IsValue, Stuck]


class _StuckSignal(Exception):
    def __init__(self, reason: str):
        self.reason = reason


def _typed_value_expr(v: Value, ty: Optional[Ty]) -> Expr:
    """Like value_to_expr, but keeps a null option typeable."""
    e = value_to_expr(v)
    if isinstance(e, NoneLit) and isinstance(ty, OptionTy):
        return NoneLit(ty=ty)
    return e


def step(s: State, w: ExternalWorld, e: Expr,
         guard_unsafe: bool = True) -> StepOutcome:
    """One computational step; exactly one rule applies to a non-value."""
    v = expr_to_value(e)
    if v is not None:
        return IsValue(v)
    try:
        expr, rule = _step(s, w, e, guard_unsafe)
        return Stepped(s, expr, rule)
    except _StuckSignal as sig:
        return Stuck(sig.reason)


def _stuck(reason: str):
    raise _StuckSignal(reason)


def _value_of(e: Expr) -> Optional[Value]:
    return expr_to_value(e)


def _step(s: State, w: ExternalWorld, e: Expr,
          guard: bool) -> tuple[Expr, str]:
    if isinstance(e, Var):
        return _step_var(s, e)
    if isinstance(e, Prim):
        return _step_prim(s, w, e, guard)
    if isinstance(e, Let):
        bv = _value_of(e.bound)
        if bv is None:
            bound, rule = _step(s, w, e.bound, guard)
            return Let(e.name, e.declared, bound, e.body), rule
        if e.name == "_":
            return e.body, "LETV"
        return subst(e.body, e.name, e.bound), "LETV"
    if isinstance(e, Cond):
        gv = _value_of(e.guard)
        if gv is None:
            g, rule = _step(s, w, e.guard, guard)
            return Cond(g, e.then, e.otherwise), rule
        if not isinstance(gv, VBool):
            _stuck("condition guard is not a boolean")
        return (e.then, "CONDT") if gv.value else (e.otherwise, "CONDF")
    if isinstance(e, App):
        return _step_app(s, w, e, guard)
    if isinstance(e, StructInit):
        return _step_struct_init(s, w, e, guard)
    if isinstance(e, Field):
        return _step_field(s, w, e, guard)
    if isinstance(e, For):
        return _step_for(s, w, e, guard)
    if isinstance(e, Match):
        return _step_match(s, w, e, guard)
    if isinstance(e, Seq):
        head = e.parts[0]
        if _value_of(head) is None:
            h, rule = _step(s, w, head, guard)
            return Seq((h, *e.parts[1:])), rule
        if len(e.parts) == 1:
            return head, "SEQT"
        return Seq(e.parts[1:]), "SEQT"
    if isinstance(e, Repeat):
        if e.count <= 0:
            return UnitLit(), "FORV0"
        return Seq((e.body, Repeat(e.body, e.count - 1))), "FORVN"
    if isinstance(e, SomeLit):
        inner, rule = _step(s, w, e.value, guard)
        return SomeLit(inner), rule
    _stuck(f"no rule applies to {type(e).__name__}")


def _step_var(s: State, e: Var) -> tuple[Expr, str]:
    if e.name in s.omega:
        block, ty = s.omega[e.name]
        v = s.theta.load(block, 0)
        if v is None:
            s.monitors.uninit_read_events += 1
            _stuck(f"read of uninitialized variable {e.name!r}")
        return _typed_value_expr(v, ty), "LVAR"
    binding = s.delta.get(e.name)
    if isinstance(binding, GlobalBinding):
        v = s.theta.load(binding.block, 0)
        if v is None:
            s.monitors.uninit_read_events += 1
            _stuck(f"read of uninitialized global {e.name!r}")
        return _typed_value_expr(v, binding.ty), "GVAR"
    _stuck(f"unbound variable {e.name!r}")


def _step_prim(s: State, w: ExternalWorld, e: Prim,
               guard: bool) -> tuple[Expr, str]:
    op = e.op
    if isinstance(op, RefOp):
        inner = e.operands[0]
        v = _value_of(inner)
        if v is None:
            stepped, rule = _step(s, w, inner, guard)
            return Prim(RefOp(), (stepped,)), rule
        ty = _typeof_value(s, v)
        bid = s.theta.alloc(sizeof(ty, s.composites))
        s.theta.store(bid, 0, v)
        s.sigma[bid] = ty
        return Loc(bid, 0), "REFV"
    if isinstance(op, Deref):
        inner = e.operands[0]
        v = _value_of(inner)
        if v is None:
            stepped, rule = _step(s, w, inner, guard)
            return Prim(Deref(), (stepped,)), rule
        if isinstance(v, VOption):
            s.monitors.null_deref_events += 1
            _stuck("dereference of an option value")
        if not isinstance(v, VLoc):
            _stuck("dereference of a non-location")
        cell = s.theta.load(v.block, v.offset)
        if cell is None:
            s.monitors.uninit_read_events += 1
            _stuck("read of uninitialized memory")
        return value_to_expr(cell), "DREFV"
    if isinstance(op, Assign):
        lhs, rhs = e.operands
        lv = _value_of(lhs)
        if lv is None:
            stepped, rule = _step(s, w, lhs, guard)
            return Prim(Assign(), (stepped, rhs)), rule
        rv = _value_of(rhs)
        if rv is None:
            stepped, rule = _step(s, w, rhs, guard)
            return Prim(Assign(), (lhs, stepped)), rule
        if isinstance(lv, VOption):
            s.monitors.null_deref_events += 1
            _stuck("assignment through an option value")
        if not isinstance(lv, VLoc):
            _stuck("assignment through a non-location")
        if not s.theta.store(lv.block, lv.offset, rv):
            _stuck("assignment into an invalid block")
        return UnitLit(), "MASSGNV"
    if isinstance(op, (Uop, Cast)):
        inner = e.operands[0]
        v = _value_of(inner)
        if v is None:
            stepped, rule = _step(s, w, inner, guard)
            return Prim(op, (stepped,)), rule
        result = uop_sem(op, v)
        if isinstance(result, VUndef):
            s.monitors.undef_events += 1
            _stuck("unary operator produced undef")
        return value_to_expr(result), "UOPV"
    if isinstance(op, Bop):
        lhs, rhs = e.operands
        lv = _value_of(lhs)
        if lv is None:
            stepped, rule = _step(s, w, lhs, guard)
            return Prim(op, (stepped, rhs)), "BOP1" if rule == "BOP1" else rule
        rv = _value_of(rhs)
        if rv is None:
            stepped, rule = _step(s, w, rhs, guard)
            return Prim(op, (lhs, stepped)), rule
        if guard and unsafe(op.kind, lv, rv):
            zero = VInt(0) if isinstance(lv, VInt) else VLong(0)
            return value_to_expr(zero), "BOPV"
        result = bop_sem(op.kind, lv, rv)
        if isinstance(result, VUndef):
            s.monitors.undef_events += 1
            _stuck("binary operator produced undef")
        return value_to_expr(result), "BOPV"
    _stuck(f"unknown primitive {op!r}")


def _typeof_value(s: State, v: Value) -> Ty:
    if isinstance(v, VInt):
        return INT
    if isinstance(v, VLong):
        return LONG
    if isinstance(v, VBool):
        return BOOL
    if isinstance(v, VUnit):
        return UNIT
    if isinstance(v, VBytes):
        return BYTES
    if isinstance(v, VLoc):
        content = s.sigma.get(v.block)
        if content is None:
            _stuck(f"location {v.block} has no store typing")
        return RefTy(content)
    if isinstance(v, VOption):
        if v.value is None:
            _stuck("cannot type a bare none value")
        return OptionTy(_typeof_value(s, v.value))
    _stuck(f"cannot type value {v!r}")


def _step_app(s: State, w: ExternalWorld, e: App,
              guard: bool) -> tuple[Expr, str]:
    if not isinstance(e.callee, Var):
        _stuck("callee is not a function name")
    name = e.callee.name
    for i, a in enumerate(e.args):
        if _value_of(a) is None:
            stepped, rule = _step(s, w, a, guard)
            args = (*e.args[:i], stepped, *e.args[i + 1:])
            return App(e.callee, args), rule
    values = [_value_of(a) for a in e.args]
    target = s.delta.get(name)
    if isinstance(target, FunDecl):
        return _apply_fun(s, target, values), "APP3"
    res_type = _external_result_type(s, name)
    if res_type is None:
        _stuck(f"unknown function {name!r}")
    result = w.call(name, values, s, res_type)
    return _typed_value_expr(result, res_type), "EAPP"


def _external_result_type(s: State, name: str) -> Optional[Ty]:
    sig = s.psi.get(name)
    return sig.res_type if sig is not None else None


def _apply_fun(s: State, fd: FunDecl, values: list[Value]) -> Expr:
    if len(values) != len(fd.args):
        _stuck(f"arity mismatch calling {fd.name!r}")
    body = fd.body
    # Rename parameters and locals apart so nested calls cannot collide in
    # the shared variable environment.
    for (x, ty), v in zip(fd.args, values):
        fresh = s.fresh_name(x)
        body = rename_var(body, x, fresh)
        bid = s.theta.alloc(sizeof(ty, s.composites))
        s.theta.store(bid, 0, v)
        s.sigma[bid] = ty
        s.omega[fresh] = (bid, ty)
    for (y, ty) in fd.vars:
        fresh = s.fresh_name(y)
        body = rename_var(body, y, fresh)
        bid = s.theta.alloc(sizeof(ty, s.composites))
        s.sigma[bid] = ty
        s.omega[fresh] = (bid, ty)
        # Struct locals receive their storage at call time, like C locals;
        # the fields stay unwritten until initialization and field reads
        # before that still trip the uninitialized-read monitor.
        if isinstance(ty, RefTy) and isinstance(ty.target, StructTy):
            sb = s.theta.alloc(sizeof(ty.target, s.composites))
            s.sigma[sb] = ty.target
            s.theta.store(bid, 0, VLoc(sb, 0))
    return body


def _step_struct_init(s: State, w: ExternalWorld, e: StructInit,
                      guard: bool) -> tuple[Expr, str]:
    for i, (fname, fe) in enumerate(e.fields):
        if _value_of(fe) is None:
            stepped, rule = _step(s, w, fe, guard)
            fields = (*e.fields[:i], (fname, stepped), *e.fields[i + 1:])
            return StructInit(e.name, fields), rule
    if e.name not in s.omega:
        _stuck(f"struct variable {e.name!r} is not allocated")
    var_block, var_ty = s.omega[e.name]
    if not (isinstance(var_ty, RefTy) and isinstance(var_ty.target, StructTy)):
        _stuck(f"{e.name!r} is not a struct reference")
    sid = var_ty.target.sid
    co = s.composites.get(sid)
    if co is None:
        _stuck(f"unknown struct {sid!r}")
    existing = s.theta.load(var_block, 0)
    if isinstance(existing, VLoc):
        sb = existing.block  # re-initialization reuses the allocation
    else:
        sb = s.theta.alloc(sizeof(var_ty.target, s.composites))
        s.sigma[sb] = var_ty.target
        s.theta.store(var_block, 0, VLoc(sb, 0))
    offsets, _, _ = struct_layout(co, s.composites)
    for fname, fe in e.fields:
        s.theta.store(sb, offsets[fname], _value_of(fe))
    return Loc(sb, 0), "STRUCTV"


def _step_field(s: State, w: ExternalWorld, e: Field,
                guard: bool) -> tuple[Expr, str]:
    tv = _value_of(e.target)
    if tv is None:
        stepped, rule = _step(s, w, e.target, guard)
        return Field(stepped, e.fname), rule
    if isinstance(tv, VOption):
        if tv.value is None:
            s.monitors.null_deref_events += 1
            _stuck("field access through a null option")
        tv = tv.value
    if not isinstance(tv, VLoc):
        _stuck("field access on a non-location")
    content = s.sigma.get(tv.block)
    if not isinstance(content, StructTy):
        _stuck("field access on a non-struct block")
    co = s.composites.get(content.sid)
    if co is None:
        _stuck(f"unknown struct {content.sid!r}")
    offsets, _, _ = struct_layout(co, s.composites)
    if e.fname not in offsets:
        _stuck(f"struct {content.sid!r} has no field {e.fname!r}")
    cell = s.theta.load(tv.block, tv.offset + offsets[e.fname])
    if cell is None:
        s.monitors.uninit_read_events += 1
        _stuck(f"read of uninitialized field {e.fname!r}")
    return value_to_expr(cell), "FACCESSV"


def _step_for(s: State, w: ExternalWorld, e: For,
              guard: bool) -> tuple[Expr, str]:
    lv = _value_of(e.lo)
    if lv is None:
        stepped, rule = _step(s, w, e.lo, guard)
        return For(stepped, e.hi, e.direction, e.body), rule
    hv = _value_of(e.hi)
    if hv is None:
        stepped, rule = _step(s, w, e.hi, guard)
        return For(e.lo, stepped, e.direction, e.body), rule
    if not isinstance(lv, (VInt, VLong)) or type(lv) is not type(hv):
        _stuck("loop bounds are not matching numeric values")
    n = range_count(lv, hv, e.direction)
    return Repeat(e.body, n), "FORV"


def _step_match(s: State, w: ExternalWorld, e: Match,
                guard: bool) -> tuple[Expr, str]:
    sv = _value_of(e.scrutinee)
    if sv is None:
        stepped, rule = _step(s, w, e.scrutinee, guard)
        return Match(stepped, e.arms), rule

    def find(pred):
        for p, body in e.arms:
            if pred(p):
                return p, body
        return None

    if isinstance(sv, VOption):
        if sv.value is None:
            arm = find(lambda p: isinstance(p, Pnone)) or \
                find(lambda p: isinstance(p, Pwild))
            if arm is None:
                _stuck("no arm matches none")
            return arm[1], "MNONE"
        arm = find(lambda p: isinstance(p, Psome))
        if arm is not None:
            p, body = arm
            return subst(body, p.binder,
                         Loc(sv.value.block, sv.value.offset)), "MSOME"
        arm = find(lambda p: isinstance(p, Pwild))
        if arm is None:
            _stuck("no arm matches some")
        return arm[1], "MSOME"
    if isinstance(sv, VBytes):
        arm = find(lambda p: isinstance(p, Pbytes))
        fallback = find(lambda p: isinstance(p, Pwild))
        if arm is None:
            _stuck("no bytes arm in match")
        p, body = arm
        try:
            vx, bindings = extract(sv, p.target, s.theta, s.composites,
                                   s.sigma)
        except TooShort:
            if fallback is None:
                _stuck("region too short and no fallback arm")
            return fallback[1], "MBYTESF"
        out = body
        for y, yv in bindings.items():
            if any(y == name for name, _ in p.fields):
                out = subst(out, y, value_to_expr(yv))
        out = subst(out, p.binder, value_to_expr(vx))
        return out, "MBYTES"
    _stuck("match scrutinee is neither an option nor bytes")


# ---------------------------------------------------------------------------
# Multi-step evaluation
# ---------------------------------------------------------------------------

DEFAULT_FUEL = 10 ** 6


@dataclass
class EvalResult:
    state: State
    value: Value
    steps: int


def eval_multi(s: State, w: ExternalWorld, e: Expr,
               fuel: int = DEFAULT_FUEL, guard_unsafe: bool = True,
               on_step: Optional[Callable[[State, Expr, str], None]] = None
               ) -> EvalResult:
    """Iterate step until a value; returns the exact step count."""
    if fuel < 1:
        raise ValueError("fuel must be >= 1")
    steps = 0
    current = e
    while True:
        out = step(s, w, current, guard_unsafe)
        if isinstance(out, IsValue):
            return EvalResult(s, out.value, steps)
        if isinstance(out, Stuck):
            raise StuckState(out.reason)
        current = out.expr
        steps += 1
        if on_step is not None:
            on_step(s, current, out.rule)
        if steps >= fuel:
            raise FuelExhausted(f"no value after {fuel} steps")


# ---------------------------------------------------------------------------
# Program-level setup
# ---------------------------------------------------------------------------

def init_state(tp: TypedProgram, w: ExternalWorld) -> State:
    s = State({}, {}, Memory(), {}, dict(tp.composites), psi=dict(tp.psi))
    for d in tp.program.decls:
        if isinstance(d, FunDecl):
            s.delta[d.name] = d
        elif isinstance(d, GlobDecl):
            _alloc_global(s, w, d)
    return s


def _alloc_global(s: State, w: ExternalWorld, gd: GlobDecl) -> None:
    if isinstance(gd.init, bytes):
        bid = s.theta.alloc(len(gd.init), raw=gd.init)
        s.sigma[bid] = gd.ty
        s.delta[gd.name] = GlobalBinding(bid, gd.ty)
        return
    bid = s.theta.alloc(sizeof(gd.ty, s.composites))
    s.sigma[bid] = gd.ty
    init = gd.init
    if isinstance(gd.ty, OptionTy) and isinstance(gd.ty.inner, RefTy) \
            and isinstance(gd.ty.inner.target, StructTy):
        # Globals of optional struct-pointer type back kernel objects such as
        # maps: materialize the pointee so lookups can identify it.
        target = gd.ty.inner.target
        ob = s.theta.alloc(sizeof(target, s.composites))
        s.sigma[ob] = target
        if target.sid == "bpf_map":
            w.map_blocks[ob] = gd.name
        init = VOption(VLoc(ob, 0))
    s.theta.store(bid, 0, init)
    s.delta[gd.name] = GlobalBinding(bid, gd.ty)


def make_context_arg(s: State, w: ExternalWorld, sid: str) -> Expr:
    """Allocate a packet-backed context struct and return its option value."""
    pb = s.theta.alloc(len(w.packet), raw=w.packet)
    s.sigma[pb] = BYTES
    ctx_ty = StructTy(sid)
    cb = s.theta.alloc(sizeof(ctx_ty, s.composites))
    s.sigma[cb] = ctx_ty
    co = s.composites[sid]
    offsets, _, _ = struct_layout(co, s.composites)
    if "data" in offsets:
        s.theta.store(cb, offsets["data"], VBytes(pb, 0, len(w.packet)))
    return SomeLit(Loc(cb, 0))


def entry_call(tp: TypedProgram, s: State, w: ExternalWorld,
               entry: FunDecl) -> Expr:
    args: list[Expr] = []
    for _, ty in entry.args:
        if isinstance(ty, OptionTy) and isinstance(ty.inner, RefTy) \
                and isinstance(ty.inner.target, StructTy) \
                and ty.inner.target.sid in s.composites:
            args.append(make_context_arg(s, w, ty.inner.target.sid))
        elif isinstance(ty, (IntTy, LongTy, BoolTy)) or ty == UNIT:
            args.append(value_to_expr(zero_value(ty)))
        elif isinstance(ty, OptionTy):
            args.append(NoneLit())
        else:
            raise InterpError(
                f"cannot synthesize a default argument of type {ty}")
    return App(Var(entry.name), tuple(args))


def run_program(tp: TypedProgram, w: Optional[ExternalWorld] = None,
                entry: Optional[str] = None, fuel: int = DEFAULT_FUEL,
                on_step=None) -> EvalResult:
    w = w if w is not None else ExternalWorld()
    fd = tp.entry_point(entry)
    if fd is None:
        raise InterpError("no entry point (declare main or one #section fun)")
    s = init_state(tp, w)
    call = entry_call(tp, s, w, fd)
    return eval_multi(s, w, call, fuel=fuel, on_step=on_step)


# ---------------------------------------------------------------------------
# Well-formedness (Definition 1)
# ---------------------------------------------------------------------------

def well_formed(gamma: dict[str, Ty], sigma: dict[int, Ty],
                s: State) -> tuple[bool, list[str]]:
    """Checks the state-consistency contract; returns violated clauses."""
    bad: list[str] = []
    if set(s.omega) & set(s.delta):
        bad.append("omega and delta domains overlap")
    for x, ty in gamma.items():
        if x in s.omega:
            block, bty = s.omega[x]
            if bty != ty:
                bad.append(f"variable {x!r} bound at {bty}, typed {ty}")
            elif block not in sigma:
                bad.append(f"variable {x!r} block lacks store typing")
            elif s.theta.load(block, 0) is None:
                bad.append(f"variable {x!r} is uninitialized")
        else:
            binding = s.delta.get(x)
            if not isinstance(binding, GlobalBinding):
                bad.append(f"variable {x!r} resolves nowhere")
            elif binding.block not in sigma:
                bad.append(f"global {x!r} block lacks store typing")
            elif s.theta.load(binding.block, 0) is None and \
                    s.theta.blocks.get(binding.block, Block(0)).raw is None:
                bad.append(f"global {x!r} is uninitialized")
    for bid in sigma:
        if not s.theta.is_valid_access(bid, Perm.FREEABLE):
            bad.append(f"typed block {bid} is not Freeable-accessible")
    for bid, block in s.theta.blocks.items():
        if block.perm is Perm.FREEABLE and bid not in sigma:
            bad.append(f"accessible block {bid} lacks store typing")
    for name, d in s.delta.items():
        if isinstance(d, FunDecl):
            if {x for x, _ in d.args} & {y for y, _ in d.vars}:
                bad.append(f"function {name!r} has overlapping args and vars")
    for x, ty in gamma.items():
        sid = None
        if isinstance(ty, StructTy):
            sid = ty.sid
        elif isinstance(ty, RefTy) and isinstance(ty.target, StructTy):
            sid = ty.target.sid
        if sid is not None and sid not in s.composites:
            bad.append(f"struct {sid!r} of variable {x!r} is undeclared")
    return not bad, bad


def runtime_gamma(s: State) -> dict[str, Ty]:
    """Typing environment induced by the live variable bindings."""
    gamma = {x: ty for x, (_, ty) in s.omega.items()}
    for name, d in s.delta.items():
        if isinstance(d, GlobalBinding):
            gamma[name] = d.ty
    return gamma
