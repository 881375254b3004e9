import re
import subprocess

import pytest

from beepl.cgen import audit_guards, cdecl, ctype, emit_program, mangle
from beepl.core import (
    ArrayTy, BOOL, BYTES, INT, LONG, OptionTy, RefTy, StructTy, U16, U8,
    UNIT, VInt,
)
from beepl.driver import find_cc, load_corpus
from beepl.gen import GenConfig, generate_well_typed
from beepl.interp import ExternalWorld, run_program
from beepl.typecheck import check_program, check_source


def emit_src(src, mode="host"):
    return emit_program(check_source(src), mode)


def norm(text):
    return re.sub(r"\s+", " ", text)


# --- shapes from the translation rules ---------------------------------------------

def test_trivial_function_shape():
    cu = emit_src("fun f() : int { 1 }", "ebpf")
    assert re.search(r"i32 f\(void\) \{\s*return 1;\s*\}", cu.text)


def test_ref_lowering_fresh_local_and_address():
    cu = emit_src("fun f() : int { let x : int* = ref(2) in !x }", "ebpf")
    body = norm(cu.text)
    assert "__bpl_tmp0 = 2;" in body
    assert "x = (&__bpl_tmp0);" in body


def test_ref_of_compound_expression():
    cu = emit_src("fun f(int a) : int { let x : int* = ref(a + 1) in !x }",
                  "ebpf")
    assert re.search(r"__bpl_tmp0 = \(i32\)\(\(u32\)a \+ \(u32\)1\);",
                     cu.text)


def test_for_lowering_up():
    cu = emit_src(
        "fun f() : int { let x : int* = ref(0) in "
        "let _ = for (1 ... 5, Up) { x := !x + 1 } in !x }", "ebpf")
    body = norm(cu.text)
    assert re.search(r"__bpl_l0 = 1; __bpl_h0 = 5;", body)
    assert re.search(r"if \(__bpl_l0 <= __bpl_h0\) \{ "
                     r"for \(__bpl_i0 = __bpl_l0; __bpl_i0 <= __bpl_h0; "
                     r"__bpl_i0\+\+\)", body)


def test_for_lowering_down():
    cu = emit_src("fun f() : unit { for (5 ... 1, Down) { () } }", "ebpf")
    body = norm(cu.text)
    assert ">= __bpl_h0" in body and "__bpl_i0--" in body


def test_guarded_mod():
    cu = emit_src("fun f(int w1, int w0) : int { w1 % w0 }", "ebpf")
    body = norm(cu.text)
    assert re.search(
        r"\(w0 == 0 \? 0 : \(\(w1 == BPL_INT_MIN && w0 == -1\) \? 0 : "
        r"w1 % w0\)\)", body)
    assert cu.guarded_ops == 1


def test_guarded_long_shift():
    cu = emit_src("fun f(long r, long s) : long { r >> s }", "ebpf")
    assert re.search(r"\(\(u64\)s >= 64 \? 0 : \(r >> s\)\)", norm(cu.text))


def test_literal_shift_is_const_safe():
    cu = emit_src("fun f(int a) : int { a << 3 }", "ebpf")
    assert cu.const_safe_ops == 1 and cu.guarded_ops == 0
    assert "? 0 :" not in cu.text


def test_plain_add_wraps_through_unsigned():
    cu = emit_src("fun f(int a, int b) : int { a + b }", "ebpf")
    assert "(i32)((u32)a + (u32)b)" in cu.text


def test_neg_wraps_through_unsigned():
    cu = emit_src("fun f(int a) : int { -a }", "ebpf")
    assert "(i32)(0u - (u32)a)" in cu.text


def test_match_option_null_guard():
    tp = check_program(load_corpus("bprog3.bpl"))
    body = norm(emit_program(tp, "ebpf").text)
    assert re.search(r"if \(p == NULL\) \{ return -1; \} else \{ "
                     r"p_prime = p; return \(i32\)\(u32\)\(\(\*p_prime\)\);",
                     body)


def test_match_option_guard_always_emitted():
    src = ("fun f() : int { match some(ref(1)) with "
           "| pnone => 0 | psome p => !p }")
    body = norm(emit_src(src, "ebpf").text)
    assert "== NULL" in body


def test_match_bytes_bounds_check_before_field_access():
    tp = check_program(load_corpus("bprog4.bpl"))
    text = norm(emit_program(tp, "ebpf").text)
    m = re.search(r"(\w+)\.start \+ sizeof\(struct ethhdr\) > \1\.end", text)
    assert m, text
    read = text.find("->h_proto")
    assert read == -1 or read > m.start()
    assert ".start += sizeof(struct ethhdr);" in text


def test_match_bytes_prim_target():
    src = ('#section "xdp"\n'
           "fun f(option(struct xdp_md*) ctx) : int {\n"
           "  match ctx.data with | x, u8 => x | _ => 0 }\n")
    body = norm(emit_src(src, "ebpf").text)
    assert "+ sizeof(u8) >" in body
    assert "*(u8 *)" in body


def test_sec_annotations_in_ebpf_mode_only():
    src = ('#section "xdp"\nfun f(option(struct xdp_md*) c) : int { 1 }\n'
           'char LICENSE[] #section "license" = "GPL";')
    ebpf = emit_src(src, "ebpf").text
    host = emit_src(src, "host").text
    assert 'SEC("xdp")' in ebpf and 'SEC("license")' in ebpf
    assert "SEC(" not in host
    assert "int main(void)" in host and "printf" in host
    assert "int main(void)" not in ebpf


def test_emit_deterministic():
    src = load_corpus("bprog4.bpl")
    tp = check_program(src)
    assert emit_program(tp, "ebpf").text == emit_program(tp, "ebpf").text


def test_ctype_mapping():
    assert ctype(INT) == "i32"
    assert ctype(LONG) == "i64"
    assert ctype(U8) == "u8"
    assert ctype(BOOL) == "bpl_bool"
    assert ctype(RefTy(LONG)) == "i64 *"
    assert ctype(OptionTy(RefTy(LONG))) == "i64 *"  # options erase
    assert ctype(BYTES) == "bytes_t"
    assert cdecl(ArrayTy(U8, 6), "h_dest") == "u8 h_dest[6]"


def test_mangle_primes():
    assert mangle("p'") == "p_prime"


def test_bytes_t_prelude_definition():
    cu = emit_src("fun f() : int { 1 }")
    assert ("typedef struct { unsigned char *start; unsigned char *end; } "
            "bytes_t;") in cu.text


# --- audits ----------------------------------------------------------------------------

def test_audit_zero_violations_on_corpus():
    for name in ["bprog1.bpl", "bprog3.bpl", "bprog4.bpl", "shift64.bpl"]:
        tp = check_program(load_corpus(name))
        for mode in ("ebpf", "host"):
            cu = emit_program(tp, mode)
            assert audit_guards(cu) == [], name


def test_audit_over_generated_programs():
    for seed in range(25):
        p = generate_well_typed(GenConfig(seed=seed))
        cu = emit_program(check_program(p), "host")
        assert audit_guards(cu) == [], seed


def test_audit_flags_unguarded_output():
    cu = emit_src("fun f(int a, int b) : int { a / b }", "ebpf")
    broken = type(cu)(cu.text, cu.mode, 0, 0)  # claim nothing is guarded
    assert audit_guards(broken)


# --- compile-and-run smoke --------------------------------------------------------------

needs_cc = pytest.mark.skipif(find_cc() is None, reason="no C compiler")


@needs_cc
def test_host_output_compiles_and_matches(tmp_path):
    cases = {
        "fun main() : int { let x : int* = ref(2) in !x }": 2,
        "fun main() : int { 7 % 0 }": 0,
        "fun main() : int { let a : int = -5 in a / 3 }": -1,
        "fun main() : int { (int)(1099511627776L >> 38) }": 4,
    }
    cc = find_cc()
    for i, (src, expected) in enumerate(cases.items()):
        tp = check_source(src)
        assert run_program(tp).value == VInt(expected)
        cfile = tmp_path / f"case{i}.c"
        cfile.write_text(emit_program(tp, "host").text)
        exe = tmp_path / f"case{i}"
        r = subprocess.run([cc, "-std=c11", "-o", str(exe), str(cfile)],
                           capture_output=True, text=True)
        assert r.returncode == 0, r.stderr
        out = subprocess.run([str(exe)], capture_output=True, text=True)
        assert out.stdout.strip() == str(expected), src
        assert out.returncode == expected & 0xFF


@needs_cc
def test_corpus_c_compiles_in_both_modes(tmp_path):
    cc = find_cc()
    for name in ["bprog1.bpl", "bprog2.bpl", "bprog3.bpl", "bprog4.bpl",
                 "shift64.bpl"]:
        if name == "bprog2.bpl":
            continue  # rejected by the checker, nothing to emit
        tp = check_program(load_corpus(name))
        for mode in ("ebpf", "host"):
            cfile = tmp_path / f"{name}.{mode}.c"
            cfile.write_text(emit_program(tp, mode).text)
            args = [cc, "-std=c11", "-c", "-o", str(tmp_path / "out.o"),
                    str(cfile)]
            r = subprocess.run(args, capture_output=True, text=True)
            assert r.returncode == 0, f"{name} {mode}: {r.stderr}"
