import pytest

from beepl.driver import (
    evaluate_with_audit, find_cc, load_corpus, run_cve_corpus,
    run_differential, run_property_suite, world_for_seed,
)
from beepl.frontend import parse_program, print_program
from beepl.gen import (
    GenConfig, expr_size, generate_well_typed, shrink_program,
)
from beepl.typecheck import TypeCheckError, check_program


# --- generator ------------------------------------------------------------------

def test_generator_deterministic_text():
    cfg = GenConfig(seed=123, bytes_match=True, externals=True)
    assert print_program(generate_well_typed(cfg)) == \
        print_program(generate_well_typed(cfg))


def test_generated_programs_always_check():
    for seed in range(80):
        p = generate_well_typed(GenConfig(seed=seed, bytes_match=True,
                                          externals=True))
        check_program(p)  # must not raise


def test_depth_one_program_is_a_literal_body():
    p = generate_well_typed(GenConfig(seed=0, max_depth=1, max_decls=1))
    check_program(p)
    fd = [d for d in p.decls if hasattr(d, "body")][-1]
    assert expr_size(fd.body) <= 3


# --- property suite ---------------------------------------------------------------

def test_property_suite_empty():
    s = run_property_suite(0, GenConfig())
    assert s.total == 0 and s.passed == 0 and s.ok()


def test_property_suite_small_run_clean():
    s = run_property_suite(40, GenConfig(seed=9, bytes_match=True,
                                         externals=True))
    assert s.ok(), [r.violations for r in s.failures]


def test_property_suite_reproducible():
    cfg = GenConfig(seed=31, bytes_match=True, externals=True)
    a = run_property_suite(15, cfg)
    b = run_property_suite(15, cfg)
    assert [(r.outcome, r.steps) for r in a.reports] == \
        [(r.outcome, r.steps) for r in b.reports]


def test_suite_over_broken_interpreter_reports_undef():
    # Removing the BOPV guard makes divisions-by-zero surface as undef.
    program = parse_program(
        "fun main() : int { let a : int = 5 in a % (a - a) }")
    s = run_property_suite(1, GenConfig(), guard_unsafe=False,
                           programs=[program])
    assert not s.ok()
    assert any("undef" in v for r in s.failures for v in r.violations)


def test_guarded_interpreter_passes_same_program():
    program = parse_program(
        "fun main() : int { let a : int = 5 in a % (a - a) }")
    s = run_property_suite(1, GenConfig(), guard_unsafe=True,
                           programs=[program])
    assert s.ok()


def test_shrinking_preserves_violation():
    program = parse_program(
        "fun main() : int { let a : int = 5 in "
        "if a < 9 then (a + 1) % (a - a) else 2 }")

    def still_fails(q):
        try:
            tp = check_program(q)
        except TypeCheckError:
            return False
        audit = evaluate_with_audit(tp, world_for_seed(0),
                                    guard_unsafe=False)
        return any("undef" in v for v in audit.violations)

    assert still_fails(program)
    shrunk = shrink_program(program, still_fails)
    assert still_fails(shrunk)
    old = [d for d in program.decls if hasattr(d, "body")][0].body
    new = [d for d in shrunk.decls if hasattr(d, "body")][0].body
    assert expr_size(new) < expr_size(old)


def test_audit_reports_monitor_events():
    program = parse_program("fun main() : int { 3 % 0 }")
    tp = check_program(program)
    audit = evaluate_with_audit(tp, world_for_seed(0), guard_unsafe=False)
    assert any("monitors" in v for v in audit.violations)


# --- corpus -----------------------------------------------------------------------

def test_corpus_files_parse():
    for name in ["bprog1.bpl", "bprog2.bpl", "bprog3.bpl", "bprog4.bpl",
                 "shift64.bpl"]:
        load_corpus(name)


def test_cve_corpus_all_pass():
    s = run_cve_corpus()
    assert s.ok(), [(r.program_id, r.violations) for r in s.failures]
    assert s.total == 5


# --- differential -------------------------------------------------------------------

needs_cc = pytest.mark.skipif(find_cc() is None, reason="no C compiler")


@needs_cc
def test_differential_small_run():
    s = run_differential(8, GenConfig(seed=300))
    assert s.ok(), [r.violations for r in s.failures]


@needs_cc
def test_differential_guarded_mod_program():
    program = parse_program("fun main() : int { 7 % 0 }")
    s = run_differential(1, programs=[program])
    assert s.ok(), [r.violations for r in s.failures]


EVAL_ORDER_CASES = [
    # the left operand is read before the right operand writes
    "fun main() : int { let x : int* = ref(5) in "
    "!x + (let _ = x := !x + 10 in 2) }",
    # arguments evaluate left to right with writes in between
    "fun g(int a, int b) : int { a * 100 + b }\n"
    "fun main() : int { let x : int* = ref(1) in "
    "g(!x, (let _ = x := 7 in !x)) }",
    # a match arm mutates state its continuation reads
    "fun main() : int { let x : int* = ref(3) in "
    "(match some(ref(4)) with | pnone => 0 "
    "| psome p => (let _ = x := !x + !p in !p)) + !x }",
    # loop writes interleave with later reads
    "fun main() : int { let a : int* = ref(0) in let b : int* = ref(100) in "
    "let _ = for (1 ... 3, Up) { a := !a + !b } in !a + !b }",
    # conditional branches with effects, used in value position
    "fun main() : int { let x : int* = ref(2) in "
    "(if !x > 1 then (let _ = x := 50 in !x) else 0) + !x }",
    # '&&' evaluates both operands; the write must land on both sides
    "fun main() : int { let x : int* = ref(0) in "
    "let b : bool = false && (let _ = x := 9 in true) in "
    "(if b then 1 else 0) + !x }",
    # the divisor guard sees the mutated value
    "fun main() : int { let d : int* = ref(3) in "
    "let _ = d := !d - 3 in 42 / !d }",
]


@needs_cc
def test_differential_evaluation_order_cases():
    programs = [parse_program(src) for src in EVAL_ORDER_CASES]
    s = run_differential(len(programs), programs=programs)
    assert s.ok(), [(r.program_id, r.violations, r.reproducer)
                    for r in s.failures]


def test_differential_empty_is_skipped():
    s = run_differential(0)
    assert s.skipped


def test_differential_without_compiler_is_skipped(monkeypatch):
    monkeypatch.setenv("PATH", "/nonexistent")
    monkeypatch.delenv("BEEPLC_CC", raising=False)
    s = run_differential(3)
    assert s.skipped and s.ok()
