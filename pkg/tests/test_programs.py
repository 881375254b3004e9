"""End-to-end programs exercising paths the generator leaves out:
struct locals, nested calls with clashing parameter names, and audited
evaluation of programs with calls."""

import subprocess

import pytest

from beepl.cgen import emit_program
from beepl.core import VInt, VLong
from beepl.driver import evaluate_with_audit, find_cc, world_for_seed
from beepl.interp import ExternalWorld, run_program
from beepl.typecheck import TypeCheckError, check_source

needs_cc = pytest.mark.skipif(find_cc() is None, reason="no C compiler")


NESTED_CALLS = """
fun g(int x) : int { x + 1 }
fun f(int x) : int { g(x + 2) + x }
fun main() : int { f(10) }
"""

STRUCT_LOCALS = """
struct point { px : int, py : int }
fun main() : int vars (struct point* pt) {
    let _ : struct point* = pt { px = 3, py = 4 } in pt.px + pt.py
}
"""

REINIT = """
struct pair { a : int, b : int }
fun main() : int vars (struct pair* p) {
    let _ : struct pair* = p { a = 1, b = 2 } in
    let _ : struct pair* = p { a = 10, b = 20 } in
    p.a + p.b
}
"""

CALL_CHAIN_EFFECTS = """
fun bump(long k) : long, <alloc, read, write> {
    let c : long* = ref(k) in let _ = c := !c + 1 in !c
}
fun main() : long { bump(41) }
"""


def test_nested_calls_with_shadowed_parameter_names():
    tp = check_source(NESTED_CALLS)
    assert run_program(tp).value == VInt(23)


def test_struct_locals_initialize_and_read():
    tp = check_source(STRUCT_LOCALS)
    assert run_program(tp).value == VInt(7)


def test_struct_reinitialization_overwrites_in_place():
    tp = check_source(REINIT)
    assert run_program(tp).value == VInt(30)


def test_effectful_call_chain():
    tp = check_source(CALL_CHAIN_EFFECTS)
    assert run_program(tp).value == VLong(42)


def test_struct_init_outside_declared_locals_rejected():
    src = """
struct point { px : int, py : int }
fun main() : int {
    let pt : int = 1 in let _ : int = pt { px = 1, py = 2 } in 0
}
"""
    with pytest.raises(TypeCheckError) as err:
        check_source(src)
    assert err.value.code == "StructInitTarget"


def test_audited_evaluation_of_call_programs():
    for src in (NESTED_CALLS, STRUCT_LOCALS, REINIT, CALL_CHAIN_EFFECTS):
        tp = check_source(src)
        audit = evaluate_with_audit(tp, world_for_seed(1))
        assert audit.violations == [], (src, audit.violations)


@needs_cc
def test_struct_and_call_programs_compile_and_match(tmp_path):
    cc = find_cc()
    cases = [(NESTED_CALLS, 23), (STRUCT_LOCALS, 7), (REINIT, 30),
             (CALL_CHAIN_EFFECTS, 42)]
    for i, (src, expected) in enumerate(cases):
        tp = check_source(src)
        cfile = tmp_path / f"p{i}.c"
        cfile.write_text(emit_program(tp, "host").text)
        exe = tmp_path / f"p{i}"
        r = subprocess.run([cc, "-std=c11", "-o", str(exe), str(cfile)],
                           capture_output=True, text=True)
        assert r.returncode == 0, r.stderr
        out = subprocess.run([str(exe)], capture_output=True, text=True)
        assert out.stdout.strip() == str(expected)


def test_named_unit_binder_has_no_c_value():
    src = ("fun main() : int { let p : int* = ref(0) in "
           "let u : unit = (p := 1) in let _ : unit = u in !p + 8 }")
    tp = check_source(src)
    assert run_program(tp).value == VInt(9)
    text = emit_program(tp, "host").text
    assert "void u" not in text  # unit values never become C locals


def test_unit_parameters_rejected():
    with pytest.raises(TypeCheckError) as err:
        check_source("fun f(unit u) : int { 1 }")
    assert err.value.code == "BadParamType"


def test_corpus_print_parse_round_trip():
    from beepl.driver import load_corpus
    from beepl.frontend import parse_program, print_program
    for name in ["bprog1.bpl", "bprog2.bpl", "bprog3.bpl", "bprog4.bpl",
                 "shift64.bpl"]:
        p = load_corpus(name)
        assert parse_program(print_program(p)) == p, name


def test_io_log_records_external_calls_in_order():
    src = """
fun main() : long {
    let a : long = bpf_get_current_uid_gid() in
    let b : long = bpf_get_current_uid_gid() in
    a + b
}
"""
    tp = check_source(src)
    w = ExternalWorld(uid_gid=5)
    assert run_program(tp, w).value == VLong(10)
    assert w.io_log == ["bpf_get_current_uid_gid"] * 2
