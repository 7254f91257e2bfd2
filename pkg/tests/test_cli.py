import io
import subprocess
import sys

import pytest

from wasmlite.cli import main
from wasmlite.syntax import parse_module

ADD = """(module
  (func $add (export) (param i32) (param i32) (result i32)
    local.get 0
    local.get 1
    i32.add))"""
DIV = """(module
  (func $f (export) (param i32) (param i32) (result i32)
    local.get 0
    local.get 1
    i32.div_s))"""
BAD = """(module
  (func $f (result i32)
    i32.add
    i32.const 1))"""
THROW = "(module (func $t (export) (result i32) i32.const 7 throw))"
SPIN = "(module (func $spin (export) loop br 0 end))"


@pytest.fixture
def files(tmp_path):
    paths = {}
    for name, text in [("add", ADD), ("div", DIV), ("bad", BAD), ("throw", THROW), ("spin", SPIN)]:
        path = tmp_path / f"{name}.wml"
        path.write_text(text)
        paths[name] = str(path)
    paths["broken"] = str(tmp_path / "broken.wml")
    (tmp_path / "broken.wml").write_text("(module (func $f i32.konst 1))")
    return paths


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(list(argv), out, err)
    return code, out.getvalue(), err.getvalue()


def test_run_add(files):
    assert run("run", files["add"], "--invoke", "add", "--args", "2", "3") == (0, "result: 5\n", "")


def test_run_negative_and_hex_args(files):
    assert run("run", files["add"], "--invoke", "add", "--args", "-2", "0x10")[1] == "result: 14\n"
    assert run("run", files["add"], "--invoke", "add", "--args", "0xFFFFFFFF", "0")[1] == "result: -1\n"


def test_run_trap(files):
    assert run("run", files["div"], "--invoke", "f", "--args", "1", "0") == (1, "trap: div_by_zero\n", "")


def test_validate_error_position(files):
    code, out, err = run("validate", files["bad"])
    assert code == 2 and out == ""
    assert err.splitlines() == [f"{files['bad']}:3:5: stack_underflow: operand stack is empty"]


def test_validate_ok(files):
    assert run("validate", files["add"]) == (0, "OK\n", "")


def test_exceptions_flag(files):
    code, out, err = run("validate", files["throw"])
    assert code == 2 and "feature_disabled" in err
    assert run("validate", files["throw"], "--enable-exceptions")[0] == 0
    code, out, err = run("run", files["throw"], "--invoke", "t", "--enable-exceptions")
    assert (code, out, err) == (4, "", "exception: 7\n")


def test_fuel(files):
    assert run("run", files["spin"], "--invoke", "spin", "--fuel", "1000") == (5, "", "fuel exhausted\n")
    assert run("run", files["add"], "--invoke", "add", "--args", "1", "2", "--fuel", "3")[0] == 0
    assert run("run", files["add"], "--invoke", "add", "--args", "1", "2", "--fuel", "2")[0] == 5


def test_parse_error(files):
    code, out, err = run("parse", files["broken"])
    assert code == 3 and out == ""
    assert err.startswith(f"{files['broken']}:1:18: parse_error: unknown keyword")
    assert run("run", files["broken"], "--invoke", "f")[0] == 3


def test_parse_prints_canonical(files):
    code, out, _ = run("parse", files["add"])
    assert code == 0
    assert parse_module(out) == parse_module(ADD)
    assert "    local.get 0\n" in out


@pytest.mark.parametrize("argv", [
    ["run"],
    ["frobnicate"],
    [],
    ["run", "add.wml"],
    ["run", "{add}", "--invoke", "add", "--args", "1"],
    ["run", "{add}", "--invoke", "nope"],
    ["run", "{add}", "--invoke", "add", "--args", "1", "x"],
    ["run", "{add}", "--invoke", "add", "--args", "1", "4294967296"],
    ["run", "{add}", "--invoke", "add", "--fuel", "-1"],
    ["parse", "/nonexistent/file.wml"],
    ["fuzz", "--n", "0"],
])
def test_usage_errors(files, argv):
    argv = [a.format(**files) for a in argv]
    code, out, err = run(*argv)
    assert code == 6
    assert out == ""
    assert err


def test_max_pages_too_small(tmp_path):
    path = tmp_path / "mem.wml"
    path.write_text("(module (memory 3) (func $f (export)))")
    assert run("run", str(path), "--invoke", "f", "--max-pages", "2")[0] == 6
    assert run("run", str(path), "--invoke", "f", "--max-pages", "3")[0] == 0


def test_call_depth_flag(tmp_path):
    path = tmp_path / "rec.wml"
    path.write_text("(module (func $r (export) call $r))")
    code, out, _ = run("run", str(path), "--invoke", "r", "--call-depth", "50")
    assert (code, out) == (1, "trap: call_stack_exhausted\n")


def test_trace_output(files):
    code, out, _ = run("run", files["add"], "--invoke", "add", "--args", "2", "3", "--trace")
    lines = out.splitlines()
    assert code == 0
    assert len(lines) == 4
    assert lines[0].split() == ["1", "local.get", "0", "[2]"]
    assert lines[2].split() == ["3", "i32.add", "[5]"]
    assert lines[3] == "result: 5"


def test_fuzz_command(tmp_path):
    report = tmp_path / "report.txt"
    code, out, _ = run("fuzz", "--n", "30", "--report", str(report))
    assert code == 0
    assert "cases run:          30" in out
    kv = dict(line.split("=", 1) for line in report.read_text().splitlines())
    assert kv["cases_run"] == "30" and kv["assertion_failures"] == "0"


def test_fuzz_mutant_exits_nonzero():
    code, out, _ = run("fuzz", "--n", "300", "--mutant", "skip-br-depth")
    assert code == 1
    assert "mutant:" in out


def test_module_entry_point_and_pipe(files):
    printed = subprocess.run([sys.executable, "-m", "wasmlite", "parse", files["add"]],
                             capture_output=True, text=True, check=True).stdout
    again = subprocess.run([sys.executable, "-m", "wasmlite", "parse", "-"], input=printed,
                           capture_output=True, text=True, check=True).stdout
    assert again == printed
    done = subprocess.run([sys.executable, "-m", "wasmlite", "run", files["div"], "--invoke", "f",
                           "--args", "1", "0"], capture_output=True, text=True)
    assert (done.returncode, done.stdout) == (1, "trap: div_by_zero\n")
