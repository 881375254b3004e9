import json

from beepl.cli import main
from beepl.driver import corpus_path


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_check_ok(capsys):
    code, out, err = run_cli(capsys, "check", str(corpus_path("bprog3.bpl")))
    assert code == 0


def test_check_diagnostics_exit_1(capsys):
    code, out, err = run_cli(capsys, "check", str(corpus_path("bprog2.bpl")))
    assert code == 1
    assert "error[DerefOfOption]" in err
    assert "bprog2.bpl:" in err  # file:line:col prefix


def test_check_json(capsys):
    code, out, err = run_cli(capsys, "check", "--json",
                             str(corpus_path("bprog2.bpl")))
    assert code == 1
    (obj,) = json.loads(out)
    assert obj["code"] == "DerefOfOption"
    assert obj["note"] == "TDEREF"  # the typing rule that failed


def test_run_prints_value(capsys):
    code, out, err = run_cli(capsys, "run", str(corpus_path("shift64.bpl")))
    assert code == 0
    assert out.strip() == "0"


def test_run_with_packet(tmp_path, capsys):
    pkt = tmp_path / "packet.hex"
    pkt.write_text("00 00 00 00 00 00 00 00 00 00 00 00 86 dd 00 00\n")
    code, out, err = run_cli(capsys, "run", str(corpus_path("bprog4.bpl")),
                             "--packet", str(pkt))
    assert code == 0
    assert out.strip() == "1"  # XDP_DROP for an IPv6 frame


def test_run_entry_override(tmp_path, capsys):
    f = tmp_path / "two.bpl"
    f.write_text("fun a() : int { 10 }\nfun main() : int { 20 }\n")
    code, out, _ = run_cli(capsys, "run", str(f))
    assert (code, out.strip()) == (0, "20")
    code, out, _ = run_cli(capsys, "run", str(f), "--entry", "a")
    assert (code, out.strip()) == (0, "10")


def test_run_trace_lists_rules(tmp_path, capsys):
    f = tmp_path / "p.bpl"
    f.write_text("fun main() : int { let x : int* = ref(2) in !x }\n")
    code, out, err = run_cli(capsys, "run", str(f), "--trace")
    assert code == 0
    assert "REFV" in err and "blocks=" in err


def test_run_fuel_exhaustion_is_an_error(tmp_path, capsys):
    f = tmp_path / "p.bpl"
    f.write_text("fun main() : int { 1 + 2 + 3 + 4 }\n")
    code, out, err = run_cli(capsys, "run", str(f), "--fuel", "1")
    assert code == 1


def test_emit_c_modes(tmp_path, capsys):
    out_c = tmp_path / "out.c"
    code, _, _ = run_cli(capsys, "emit-c", str(corpus_path("bprog3.bpl")),
                         "-o", str(out_c), "--mode=ebpf")
    assert code == 0
    text = out_c.read_text()
    assert 'SEC("xdp")' in text and "== NULL" in text
    code, _, _ = run_cli(capsys, "emit-c", str(corpus_path("bprog3.bpl")),
                         "-o", str(out_c), "--mode=host")
    assert code == 0
    assert "int main(void)" in out_c.read_text()


def test_selftest_small(capsys):
    code, out, err = run_cli(capsys, "selftest", "--n", "10",
                             "--skip-differential")
    assert code == 0
    assert "cve-corpus: 5/5" in out
    assert "metatheory: 10/10" in out
    assert "[skip] differential" in out


def test_usage_error_exit_3(capsys):
    assert main(["no-such-command"]) == 3
    assert main([]) == 3


def test_missing_file_exit_usage(capsys):
    code, _, err = run_cli(capsys, "check", "/nonexistent/prog.bpl")
    assert code == 3
