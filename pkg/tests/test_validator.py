import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wasmlite.harness import GenConfig, gen_module
from wasmlite.syntax import I32, Instr, parse_module
from wasmlite.validator import (
    POLYMORPHIC,
    Features,
    ModuleContext,
    UnknownIndex,
    ValidatedModule,
    instr_arity,
    validate_module,
)

EXC = Features(exceptions=True)


def check(src, features=None):
    return validate_module(parse_module(src), features)


def kinds(src, features=None):
    result = check(src, features)
    assert isinstance(result, list), "expected validation errors"
    return [e.kind for e in result]


def func(body, sig="(result i32)", extra=""):
    return f"(module {extra} (func $f {sig} {body}))"


def test_const_validates_with_annotation():
    vm = check(func("i32.const 1"))
    assert isinstance(vm, ValidatedModule)
    assert vm.per_func[0].max_value_stack == 1
    assert vm.per_func[0].max_ctrl_depth == 1


def test_add_on_empty_stack():
    errors = check(func("\n  i32.add"))
    assert errors[0].kind == "stack_underflow"
    assert (errors[0].pos.line, errors[0].pos.column) == (2, 3)


def test_code_after_br_is_polymorphic():
    assert isinstance(check(func("i32.const 1 br 0 i32.add")), ValidatedModule)


@pytest.mark.parametrize("body", [
    "unreachable i32.add",
    "i32.const 1 return i32.add i32.eqz",
    "block (result i32) unreachable end",
    "unreachable drop drop drop i32.const 1",
])
def test_polymorphic_bodies(body):
    assert isinstance(check(func(body)), ValidatedModule)


def test_polymorphism_is_per_frame():
    # The block is unreachable inside, but the function frame is not.
    assert isinstance(check(func("unreachable i32.add")), ValidatedModule)
    assert kinds(func("block unreachable end i32.add")) == ["stack_underflow"]


def test_error_resets_frame_to_unreachable():
    # One report per fault: the second operand of the add is absorbed.
    assert kinds(func("i32.add")) == ["stack_underflow"]


@pytest.mark.parametrize("src, expected", [
    (func("i32.const 1 i32.const 2"), ["arity_mismatch"]),
    (func(""), ["missing_result"]),
    (func("i32.const 1 if (result i32) i32.const 2 end"), ["missing_result"]),
    (func("br 1", sig=""), ["depth_out_of_range"]),
    (func("i32.const 0 br_if 3", sig=""), ["depth_out_of_range"]),
    (func("i32.const 1 global.set $g", sig="", extra="(global $g i32 (i32.const 0))"), ["immutable_global"]),
    (func("i32.const 1 i32.load drop", sig=""), ["unknown_index"]),
    (func("memory.size drop", sig=""), ["unknown_index"]),
    (func("local.get 0 drop", sig=""), ["unknown_index"]),
    (func("call 5", sig=""), ["unknown_index"]),
    (func("global.get 2 drop", sig=""), ["unknown_index"]),
    (func("i32.const 1 throw", sig=""), ["feature_disabled"]),
    (func("try catch drop end", sig=""), ["feature_disabled"]),
    (func("block (result i32) end"), ["missing_result"]),
    (func("i32.const 1 call $g", extra="(func $g (param i32) (param i32) (result i32) i32.const 0)"),
     ["stack_underflow"]),
])
def test_error_kinds(src, expected):
    assert kinds(src) == expected


def test_feature_flag_enables_exceptions():
    assert isinstance(check(func("i32.const 1 throw", sig=""), EXC), ValidatedModule)


def test_multiple_errors_collected_in_order():
    src = """(module
  (func $a (result i32)
    i32.add
    local.get 4)
  (func $b
    br 3))"""
    errors = check(src)
    assert [(e.func_index, e.kind) for e in errors] == [
        (0, "stack_underflow"), (0, "unknown_index"), (1, "depth_out_of_range"),
    ]
    assert [(e.pos.line, e.pos.column) for e in errors][-1] == (6, 5)


def test_error_str_format():
    err = check(func("i32.add"))[0]
    assert str(err).startswith(f"{err.pos.line}:{err.pos.column}: stack_underflow: ")


def test_loop_label_has_no_payload():
    # br 0 to a loop needs nothing even though the loop yields an i32.
    assert isinstance(check(func("loop (result i32) br 0 end")), ValidatedModule)
    assert isinstance(check(func("block (result i32) i32.const 1 br 0 end")), ValidatedModule)
    assert kinds(func("block (result i32) br 0 end")) == ["stack_underflow"]


def test_if_without_else_needs_no_result():
    assert isinstance(check(func("i32.const 1 if nop end", sig="")), ValidatedModule)


def test_annotations_are_maxima():
    vm = check(func("""i32.const 1 i32.const 2 i32.const 3 i32.add i32.add
        block (result i32) block (result i32) i32.const 4 end end i32.add"""))
    assert vm.per_func[0].max_value_stack == 3
    assert vm.per_func[0].max_ctrl_depth == 3


def test_try_catch_typing():
    assert isinstance(check(func("try (result i32) i32.const 1 catch drop i32.const 0 end"), EXC), ValidatedModule)
    assert isinstance(check(func("try (result i32) i32.const 1 catch end"), EXC), ValidatedModule)
    assert kinds(func("try (result i32) i32.const 1 catch i32.const 1 end"), EXC) == ["arity_mismatch"]
    assert kinds(func("throw", sig=""), EXC) == ["stack_underflow"]
    # A br out of either arm targets the try label.
    assert isinstance(check(func("try (result i32) i32.const 1 br 0 catch br 0 end"), EXC), ValidatedModule)


def test_instr_arity_table():
    m = parse_module("(module (memory 1) (func $g (param i32) (param i32) (result i32) i32.const 0))")
    ctx = ModuleContext(m, 2, [[I32]])
    assert instr_arity(Instr("i32.add"), ctx) == ([I32, I32], [I32])
    assert instr_arity(Instr("i32.lt_u"), ctx) == ([I32, I32], [I32])
    assert instr_arity(Instr("i32.eqz"), ctx) == ([I32], [I32])
    assert instr_arity(Instr("select"), ctx) == ([I32, I32, I32], [I32])
    assert instr_arity(Instr("i32.load"), ctx) == ([I32], [I32])
    assert instr_arity(Instr("i32.store"), ctx) == ([I32, I32], [])
    assert instr_arity(Instr("memory.grow"), ctx) == ([I32], [I32])
    assert instr_arity(Instr("call", 0), ctx) == ([I32, I32], [I32])
    for op in ("br", "return", "unreachable", "throw"):
        assert instr_arity(Instr(op, 0), ctx) is POLYMORPHIC
    with pytest.raises(UnknownIndex):
        instr_arity(Instr("call", 3), ctx)
    with pytest.raises(UnknownIndex):
        instr_arity(Instr("local.get", 2), ctx)


def test_never_raises_on_garbage_indices():
    m = parse_module("(module (func $f local.tee 9 global.set 4 call 8 br_if 7 br 6))")
    assert all(e.kind in ("unknown_index", "depth_out_of_range", "stack_underflow") for e in validate_module(m))


def test_deterministic_error_list():
    src = func("i32.add local.get 3 br 9 i32.const 1")
    assert [str(e) for e in check(src)] == [str(e) for e in check(src)]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 1 << 32), st.booleans(), st.booleans())
def test_generated_modules_validate(seed, exc, mem):
    cfg = GenConfig(seed=seed, enable_exceptions=exc, enable_memory=mem)
    assert isinstance(validate_module(gen_module(cfg), cfg.features), ValidatedModule)


TAILS = ["i32.add", "drop", "i32.const 1", "br 0", "local.get 0", "nop", "unreachable", "i32.eqz", "return"]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from(TAILS), max_size=6))
def test_error_monotonicity(tail):
    # Appending instructions after an error never removes that error.
    base = "i32.const 1 i32.add"
    first = check(func(base, sig="(param i32)"))[0]
    later = check(func(base + " " + " ".join(tail), sig="(param i32)"))
    assert isinstance(later, list)
    assert any((e.pos, e.kind) == (first.pos, first.kind) for e in later)


def test_faulty_instruction_does_not_cascade():
    # add has no operands; its result is not assumed, so const 1 alone fills the result.
    assert kinds("(module (func $f (result i32) i32.add i32.const 1))") == ["stack_underflow"]
    assert kinds("(module (func $f (result i32) i32.const 1 i32.add))") == ["stack_underflow"]
