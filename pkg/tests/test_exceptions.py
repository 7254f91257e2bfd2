import dataclasses

from hypothesis import given, settings
from hypothesis import strategies as st
from semantics_cases import blocks_to_try

from wasmlite import engine
from wasmlite.exceptions import unwind
from wasmlite.harness import FUZZ_MAX_PAGES, GenConfig, gen_module
from wasmlite.interpreter import initial_config, instantiate, invoke, step, trace
from wasmlite.runtime import CATCH, TRY, Returned, UncaughtException
from wasmlite.syntax import parse_module
from wasmlite.validator import Features, ValidatedModule, validate_module

EXC = Features(exceptions=True)


def load(src):
    vm = validate_module(parse_module(src), EXC)
    assert isinstance(vm, ValidatedModule), vm
    return instantiate(vm)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 1 << 32))
def test_try_without_throw_is_block(seed):
    cfg = GenConfig(seed=seed, enable_exceptions=False)
    plain = gen_module(cfg)
    wrapped = dataclasses.replace(
        plain, funcs=[dataclasses.replace(f, body=blocks_to_try(f.body)) for f in plain.funcs]
    )
    args = [0] * len(plain.funcs[0].type.params)
    runs = []
    for m in (plain, wrapped):
        vm = validate_module(m, EXC)
        assert isinstance(vm, ValidatedModule)
        inst = instantiate(vm, FUZZ_MAX_PAGES)
        outcome, records = trace(inst, "main", args, fuel=cfg.fuel)
        runs.append((outcome, len(records), bytes(inst.store.memory), tuple(inst.store.globals)))
    assert runs[0] == runs[1]


CROSS = """(module
  (func $h (param i32) i32.const 1 i32.const 2 local.get 0 throw)
  (func $g (param i32) i32.const 5 local.get 0 call $h drop)
  (func $f (export) (param i32) (result i32)
    i32.const 100
    try (result i32)
      i32.const 7
      i32.const 8
      local.get 0
      call $g
      i32.add
    catch
    end
    i32.add))"""


def test_cross_frame_unwinding_step_by_step():
    inst = load(CROSS)
    config = initial_config(inst, 2, [33])
    while True:
        frame = config.frames[-1]
        entry = frame.ctrl_stack[-1]
        at_throw = entry.pc < len(entry.code) and entry.code[entry.pc].op == "throw"
        depth = len(config.frames)
        result = step(config)
        if at_throw:
            break
        assert result is config
    # Unwound through h and g: two frames fewer.
    assert depth == 3 and len(config.frames) == 1
    caller = config.frames[0]
    handler = caller.ctrl_stack[-1]
    assert handler.kind == CATCH
    assert caller.value_stack == [100, 33]
    assert len(caller.value_stack) == handler.entry_height + 1
    assert invoke(load(CROSS), "f", [33]) == Returned((133,))


def test_throw_never_falls_through():
    src = """(module (global $g (mut i32) (i32.const 0))
      (func $f (export) (result i32)
        try (result i32)
          i32.const 1 throw
          i32.const 99 global.set $g
          i32.const 0
        catch
        end))"""
    inst = load(src)
    assert invoke(inst, "f", engine="step") == Returned((1,))
    assert inst.store.globals == [0]


def test_uncaught_payload_unmodified():
    src = """(module
      (func $c i32.const -2147483648 throw)
      (func $b (result i32) i32.const 3 call $c i32.const 4 i32.add)
      (func $a (export) (result i32) i32.const 1 call $b i32.add))"""
    for name in ("step", "fast") if engine.AVAILABLE else ("step",):
        assert invoke(load(src), "a", engine=name) == UncaughtException(-(1 << 31))


def test_unwind_directly():
    inst = load(CROSS)
    config = initial_config(inst, 2, [0])
    while not any(e.kind == TRY for e in config.frames[0].ctrl_stack):
        step(config)
    assert unwind(config, 42) is config
    assert config.frames[0].ctrl_stack[-1].kind == CATCH
    assert config.frames[0].value_stack[-1] == 42

    bare = initial_config(inst, 0, [0])
    assert unwind(bare, 5) == UncaughtException(5)
    assert bare.frames == []


def test_catch_without_result_drops_payload():
    src = """(module (func $f (export) (result i32)
        try i32.const 9 throw catch drop end
        i32.const 3))"""
    assert invoke(load(src), "f") == Returned((3,))
