"""The hand-written semantics suite, run on both drivers and the reference
evaluator."""

import pytest
from oracles import RefMachine
from semantics_cases import CASES

from wasmlite.interpreter import instantiate, invoke, trace
from wasmlite.runtime import Returned, Trap, UncaughtException
from wasmlite.syntax import parse_module
from wasmlite.validator import Features, ValidatedModule, validate_module


def _run(case, engine):
    vm = validate_module(parse_module(case.src), Features(case.exceptions))
    assert isinstance(vm, ValidatedModule), vm
    inst = instantiate(vm, case.max_pages)
    outcome = invoke(inst, case.func, list(case.args), fuel=case.fuel,
                     call_depth_limit=case.call_depth_limit, engine=engine, debug=engine == "step")
    return inst, outcome


@pytest.mark.parametrize("engine", ["step", "fast"])
@pytest.mark.parametrize("case", CASES, ids=[c.name for c in CASES])
def test_case(case, engine):
    inst, outcome = _run(case, engine)
    assert outcome == case.expect
    if case.check:
        case.check(inst)


@pytest.mark.parametrize("case", CASES, ids=[c.name for c in CASES])
def test_trace_agrees(case):
    vm = validate_module(parse_module(case.src), Features(case.exceptions))
    inst = instantiate(vm, case.max_pages)
    outcome, records = trace(inst, case.func, list(case.args), fuel=case.fuel,
                             call_depth_limit=case.call_depth_limit, debug=True)
    assert outcome == case.expect
    assert [r.step_index for r in records] == list(range(1, len(records) + 1))


def _oracle_applies(case):
    # The recursive oracle has no fuel and uses host recursion for calls.
    return case.fuel is None and case.call_depth_limit == 1000 and case.name != "call_stack_exhausted"


@pytest.mark.parametrize("case", [c for c in CASES if _oracle_applies(c)],
                         ids=[c.name for c in CASES if _oracle_applies(c)])
def test_reference_evaluator_agrees(case):
    ref = RefMachine(parse_module(case.src), case.max_pages)
    got = ref.invoke(case.func, list(case.args))
    expect = case.expect
    if isinstance(expect, Returned):
        assert got == ("returned", expect.values)
    elif isinstance(expect, Trap):
        assert got == ("trap", expect.kind)
    elif isinstance(expect, UncaughtException):
        assert got == ("exception", expect.payload)
