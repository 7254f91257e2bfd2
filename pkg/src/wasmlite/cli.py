"""Batch command-line front end: ``wasmlite parse|validate|run|fuzz``.

Results go to stdout, diagnostics to stderr. Exit codes:

    0 returned / ok, 1 trap, 2 validation error, 3 parse error,
    4 uncaught exception, 5 fuel exhausted, 6 usage error.

``fuzz`` exits 0 when no assertion failed and 1 otherwise.
"""

from __future__ import annotations

import argparse
import sys

from .harness import MUTANT_VALIDATORS, GenConfig, fuzz_soundness
from .interpreter import InstantiationError, InvokeError, instantiate, invoke, trace
from .runtime import FuelExhausted, Returned, Trap, UncaughtException
from .syntax import ParseError, parse_int32, parse_module, print_module
from .validator import Features, Validator, validate_module

EXIT_OK, EXIT_TRAP, EXIT_INVALID, EXIT_PARSE, EXIT_EXCEPTION, EXIT_FUEL, EXIT_USAGE = range(7)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _int32(text: str) -> int:
    value = parse_int32(text)
    if value is None:
        raise argparse.ArgumentTypeError(f"not a 32-bit integer: {text!r}")
    return value


def _positive(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1: {text!r}")
    return value


def _nonnegative(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"must not be negative: {text!r}")
    return value


def _read(path: str) -> str:
    try:
        if path == "-":
            return sys.stdin.read()
        with open(path, encoding="utf-8") as f:
            return f.read()
    except (OSError, UnicodeDecodeError) as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None


def _display(path: str) -> str:
    return "<stdin>" if path == "-" else path


def _load(path: str, out_err):
    """Parse ``path``; returns (module, None) or (None, exit code)."""
    text = _read(path)
    try:
        return parse_module(text), None
    except ParseError as exc:
        for pos, msg in exc.errors:
            print(f"{_display(path)}:{pos}: parse_error: {msg}", file=out_err)
        return None, EXIT_PARSE


def _validated(path: str, features: Features, out_err):
    module, code = _load(path, out_err)
    if module is None:
        return None, code
    vm = validate_module(module, features)
    if isinstance(vm, list):
        for err in vm:
            print(f"{_display(path)}:{err}", file=out_err)
        return None, EXIT_INVALID
    return vm, None


def cmd_parse(args, out, err) -> int:
    module, code = _load(args.file, err)
    if module is None:
        return code
    print(print_module(module), file=out)
    return EXIT_OK


def cmd_validate(args, out, err) -> int:
    vm, code = _validated(args.file, Features(args.enable_exceptions), err)
    if vm is None:
        return code
    print("OK", file=out)
    return EXIT_OK


def cmd_run(args, out, err) -> int:
    vm, code = _validated(args.file, Features(args.enable_exceptions), err)
    if vm is None:
        return code
    try:
        inst = instantiate(vm, args.max_pages)
    except InstantiationError as exc:
        raise UsageError(str(exc)) from None
    try:
        if args.trace:
            outcome, _ = trace(inst, args.invoke, args.args, fuel=args.fuel,
                               call_depth_limit=args.call_depth,
                               on_record=lambda rec: print(rec, file=out), keep=False)
        else:
            outcome = invoke(inst, args.invoke, args.args, fuel=args.fuel,
                             call_depth_limit=args.call_depth)
    except InvokeError as exc:
        raise UsageError(str(exc)) from None
    if isinstance(outcome, Returned):
        print("result:" + "".join(f" {v}" for v in outcome.values), file=out)
        return EXIT_OK
    if isinstance(outcome, Trap):
        print(f"trap: {outcome.kind}", file=out)
        return EXIT_TRAP
    if isinstance(outcome, UncaughtException):
        print(f"exception: {outcome.payload}", file=err)
        return EXIT_EXCEPTION
    assert isinstance(outcome, FuelExhausted)
    print("fuel exhausted", file=err)
    return EXIT_FUEL


def cmd_fuzz(args, out, err) -> int:
    cfg = GenConfig(
        seed=args.seed,
        max_funcs=args.max_funcs,
        max_body_len=args.max_body_len,
        max_block_depth=args.max_block_depth,
        max_locals=args.max_locals,
        enable_exceptions=not args.no_exceptions,
        enable_memory=not args.no_memory,
        fuel=args.fuel,
    )
    validator = MUTANT_VALIDATORS[args.mutant] if args.mutant else Validator
    report = fuzz_soundness(args.n, cfg, validator, jobs=args.jobs)
    print(report.summary(), file=out)
    if args.report:
        try:
            with open(args.report, "w", encoding="utf-8") as f:
                f.write(report.to_kv())
        except OSError as exc:
            raise UsageError(f"cannot write {args.report}: {exc}") from None
    return EXIT_OK if not report.assertion_failures else EXIT_TRAP


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wasmlite", description="Parse, validate, run and fuzz wasmlite modules.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("parse", help="print the canonical form of a module")
    p.add_argument("file", help="module source, or - for stdin")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("validate", help="type-check a module")
    p.add_argument("file")
    p.add_argument("--enable-exceptions", action="store_true")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="invoke an exported function")
    p.add_argument("file")
    p.add_argument("--invoke", required=True, metavar="NAME")
    p.add_argument("--args", nargs="*", type=_int32, default=[], metavar="V",
                   help="decimal or 0x-hex 32-bit integers")
    p.add_argument("--fuel", type=_nonnegative, default=None, help="step budget (default: unlimited)")
    p.add_argument("--max-pages", type=_nonnegative, default=16)
    p.add_argument("--call-depth", type=_positive, default=1000)
    p.add_argument("--enable-exceptions", action="store_true")
    p.add_argument("--trace", action="store_true", help="print one line per step")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("fuzz", help="differential soundness fuzzing")
    defaults = GenConfig()
    p.add_argument("--n", type=_positive, default=1000, help="number of seeds")
    p.add_argument("--seed", type=_nonnegative, default=0, help="first seed")
    p.add_argument("--fuel", type=_positive, default=defaults.fuel)
    p.add_argument("--max-funcs", type=_positive, default=defaults.max_funcs)
    p.add_argument("--max-body-len", type=_positive, default=defaults.max_body_len)
    p.add_argument("--max-block-depth", type=_positive, default=defaults.max_block_depth)
    p.add_argument("--max-locals", type=_positive, default=defaults.max_locals)
    p.add_argument("--no-exceptions", action="store_true")
    p.add_argument("--no-memory", action="store_true")
    p.add_argument("--jobs", type=_positive, default=1, help="worker processes")
    p.add_argument("--mutant", choices=sorted(MUTANT_VALIDATORS),
                   help="fuzz a deliberately broken validator")
    p.add_argument("--report", metavar="FILE", help="also write key=value results here")
    p.set_defaults(func=cmd_fuzz)
    return parser


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=err)
        return EXIT_USAGE
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args, out, err)
    except UsageError as exc:
        print(f"wasmlite: error: {exc}", file=err)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
