"""Acceptance checks, one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -s`` or ``python3 tests/test_acceptance.py``.
"""

from __future__ import annotations

import dataclasses
import os
import sys
import time

sys.path.insert(0, os.path.dirname(__file__))

import pytest  # noqa: E402
from oracles import FirstFitModel, factorial  # noqa: E402
from semantics_cases import CASES, FACT_LOOP, blocks_to_try  # noqa: E402

from wasmlite.alloc import gen_alloc_script, new_allocator, run_script  # noqa: E402
from wasmlite.harness import (  # noqa: E402
    ENTRY,
    FUZZ_MAX_PAGES,
    GenConfig,
    SkipBranchDepthCheck,
    fuzz_soundness,
    gen_module,
    outcome_key,
)
from wasmlite.interpreter import instantiate, invoke, trace  # noqa: E402
from wasmlite.runtime import TRAP_KINDS, Returned, Trap, UncaughtException  # noqa: E402
from wasmlite.syntax import BINOPS, RELOPS, parse_module, print_module  # noqa: E402
from wasmlite.validator import Features, ValidatedModule, validate_module  # noqa: E402

FUZZ_N = 10_000
FUZZ_LIMIT_S = 120.0
ALLOC_LIMIT_S = 30.0
ALL_OPS = set(BINOPS) | set(RELOPS) | {
    "i32.const", "i32.eqz", "drop", "select", "local.get", "local.set", "local.tee",
    "global.get", "global.set", "i32.load", "i32.store", "memory.size", "memory.grow",
    "block", "loop", "if", "br", "br_if", "return", "call", "nop", "unreachable", "throw", "try",
}


@dataclasses.dataclass
class Verdict:
    name: str
    ok: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'} {self.name}: {self.detail}"


def _load(src, exceptions=False, max_pages=16):
    vm = validate_module(parse_module(src), Features(exceptions))
    assert isinstance(vm, ValidatedModule), vm
    return instantiate(vm, max_pages)


def _main_args(m):
    return [0] * len(m.funcs[0].type.params)


def check_soundness_fuzz() -> Verdict:
    start = time.perf_counter()
    report = fuzz_soundness(FUZZ_N)
    elapsed = time.perf_counter() - start
    ok = not report.assertion_failures and report.cases_run == FUZZ_N and elapsed < FUZZ_LIMIT_S
    detail = (f"n={report.cases_run} failures={len(report.assertion_failures)} "
              f"outcomes={dict(sorted(report.outcomes.items()))} time={elapsed:.1f}s (limit {FUZZ_LIMIT_S:.0f}s)")
    return Verdict("soundness fuzz", ok, detail)


def check_mutation_sensitivity() -> Verdict:
    report = fuzz_soundness(FUZZ_N, validator=SkipBranchDepthCheck)
    n = len(report.assertion_failures)
    first = f" first: seed {report.assertion_failures[0][0]}" if n else ""
    return Verdict("mutation sensitivity", n >= 1, f"br-depth check disabled, failures={n}{first}")


def check_allocator_stress() -> Verdict:
    warm = time.perf_counter()
    run_script(new_allocator(), gen_alloc_script(0, 10))
    warm = time.perf_counter() - warm
    start = time.perf_counter()
    violations = traps = 0
    for seed in range(100):
        report = run_script(new_allocator(), gen_alloc_script(seed, 1000, (1, 256), 0.4))
        violations += len(report.violations)
        traps += sum("trap-freedom" in kind for _, kind in report.violations)
    elapsed = time.perf_counter() - start
    ok = violations == 0 and elapsed < ALLOC_LIMIT_S
    detail = (f"scripts=100 ops=1000 violations={violations} traps={traps} "
              f"time={elapsed:.1f}s (limit {ALLOC_LIMIT_S:.0f}s, warm-up {warm:.1f}s excluded)")
    return Verdict("allocator stress", ok, detail)


def _try_block_equivalence(n: int) -> int:
    mismatches = 0
    for seed in range(n):
        cfg = GenConfig(seed=seed, enable_exceptions=False)
        plain = gen_module(cfg)
        wrapped = dataclasses.replace(
            plain, funcs=[dataclasses.replace(f, body=blocks_to_try(f.body)) for f in plain.funcs])
        runs = []
        for m in (plain, wrapped):
            inst = instantiate(validate_module(m, Features(True)), FUZZ_MAX_PAGES)
            outcome, records = trace(inst, ENTRY, _main_args(m), fuel=cfg.fuel)
            runs.append((outcome, len(records), bytes(inst.store.memory), tuple(inst.store.globals)))
        mismatches += runs[0] != runs[1]
    return mismatches


def check_semantics_suite() -> Verdict:
    failed, ops, traps, outcomes = [], set(), set(), set()
    for case in CASES:
        for engine in ("step", "fast"):
            inst = _load(case.src, case.exceptions, case.max_pages)
            got = invoke(inst, case.func, list(case.args), fuel=case.fuel,
                         call_depth_limit=case.call_depth_limit, engine=engine, debug=engine == "step")
            if got != case.expect or (case.check and not _check_passes(case, inst)):
                failed.append(f"{case.name}/{engine}")
        inst = _load(case.src, case.exceptions, case.max_pages)
        outcome, records = trace(inst, case.func, list(case.args), fuel=case.fuel,
                                 call_depth_limit=case.call_depth_limit)
        ops.update(r.instr.split()[0] for r in records)
        if isinstance(outcome, Trap):
            traps.add(outcome.kind)
        outcomes.add(type(outcome).__name__)
    missing_ops = sorted((ALL_OPS | {"end"}) - ops)
    missing_traps = sorted(set(TRAP_KINDS) - traps)
    exc_names = {c.name for c in CASES if c.exceptions}
    exc_ok = UncaughtException.__name__ in outcomes and len(exc_names) >= 3
    equiv = _try_block_equivalence(200)
    ok = not failed and not missing_ops and not missing_traps and exc_ok and equiv == 0
    detail = (f"cases={len(CASES)} runs={2 * len(CASES)} failed={failed or 0} "
              f"uncovered_ops={missing_ops or 0} uncovered_traps={missing_traps or 0} "
              f"exception_cases={len(exc_names)} try/block mismatches={equiv}/200")
    return Verdict("semantics suite", ok, detail)


def _check_passes(case, inst) -> bool:
    try:
        case.check(inst)
    except AssertionError:
        return False
    return True


def check_round_trip() -> Verdict:
    bad = 0
    for seed in range(1000):
        m = gen_module(GenConfig(seed=seed))
        text = print_module(m)
        again = parse_module(text)
        bad += again != m or print_module(again) != text
    return Verdict("round-trip", bad == 0, f"modules=1000 mismatches={bad}")


def check_determinism() -> Verdict:
    disagree = differ = 0
    for seed in range(1000):
        cfg = GenConfig(seed=seed)
        vm = validate_module(gen_module(cfg), cfg.features)
        args = _main_args(vm.ast)
        fast = instantiate(vm, FUZZ_MAX_PAGES)
        a = invoke(fast, ENTRY, args, fuel=cfg.fuel)
        snapshots = []
        for _ in range(2):
            inst = instantiate(vm, FUZZ_MAX_PAGES)
            b, records = trace(inst, ENTRY, args, fuel=cfg.fuel)
            snapshots.append(("\n".join(map(str, records)), outcome_key(b),
                              bytes(inst.store.memory), tuple(inst.store.globals)))
        disagree += a != b or bytes(fast.store.memory) != snapshots[0][2]
        differ += snapshots[0] != snapshots[1]
    return Verdict("determinism", disagree == 0 and differ == 0,
                   f"cases=1000 invoke/trace disagreements={disagree} non-identical reruns={differ}")


def check_demo() -> Verdict:
    got = invoke(_load(FACT_LOOP), "fact", [10])
    want = factorial(10)
    addr = invoke(new_allocator(), "malloc", [16])
    model = FirstFitModel().malloc(16)
    ok = got == Returned((want,)) and want == 3_628_800 and addr == Returned((model,)) and model == 12
    return Verdict("desk-scale demo", ok, f"fact(10)={got.values[0] if isinstance(got, Returned) else got} "
                   f"(reference {want}) malloc(16)={addr.values[0] if isinstance(addr, Returned) else addr} "
                   f"(layout model {model})")


CHECKS = [check_soundness_fuzz, check_mutation_sensitivity, check_allocator_stress,
          check_semantics_suite, check_round_trip, check_determinism, check_demo]


@pytest.mark.parametrize("check", CHECKS, ids=[c.__name__.removeprefix("check_") for c in CHECKS])
def test_criterion(check, capsys):
    verdict = check()
    with capsys.disabled():
        print("\n" + verdict.line())
    assert verdict.ok, verdict.line()


if __name__ == "__main__":
    results = [check() for check in CHECKS]
    for verdict in results:
        print(verdict.line(), flush=True)
    sys.exit(0 if all(v.ok for v in results) else 1)
