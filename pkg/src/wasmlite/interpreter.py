"""Small-step interpreter.

A configuration is the store plus a stack of frames; each frame owns its
locals, its value stack and a stack of :class:`ControlEntry` cursors that
stand in for evaluation contexts. :func:`step` applies exactly one rule,
chosen by the instruction under the top entry's cursor (or by the
entry-exhausted / frame-exhausted bookkeeping rules when the cursor is at the
end of its code).

One convention keeps traces tidy: when a step leaves the outermost frame with
nothing but an exhausted function body, that same step returns
:class:`Returned` rather than spending another step on the final pop.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import exceptions
from .runtime import (
    BLOCK,
    FUNC_BODY,
    I32_MIN,
    IF_ARM,
    LOOP,
    MASK32,
    PAGE_SIZE,
    TRY,
    Config,
    ControlEntry,
    FuelExhausted,
    Frame,
    InternalError,
    Outcome,
    Returned,
    Store,
    TraceRecord,
    Trap,
    UncaughtException,
    wrap,
)
from .syntax import format_instr
from .validator import ValidatedModule

DEFAULT_CALL_DEPTH = 1000
TRACE_STACK_LIMIT = 8


class InstantiationError(Exception):
    pass


class InvokeError(Exception):
    """Bad invocation request (unknown export or wrong argument count)."""


@dataclass
class Instance:
    module: ValidatedModule
    store: Store


def instantiate(vm: ValidatedModule, max_pages: int = 16) -> Instance:
    pages = vm.ast.memory or 0
    if max_pages < 0:
        raise InstantiationError("max_pages must be non-negative")
    if pages > max_pages:
        raise InstantiationError(f"module needs {pages} pages but max_pages is {max_pages}")
    store = Store(
        memory=bytearray(pages * PAGE_SIZE),
        page_count=pages,
        max_pages=max_pages,
        globals=[g.init for g in vm.ast.globals],
    )
    return Instance(vm, store)


# -- rules ----------------------------------------------------------------------

def _binop(fn):
    def rule(config, frame, ins):
        stack = frame.value_stack
        b = stack.pop()
        a = stack.pop()
        stack.append(fn(a, b))
        return config
    return rule


def _div_s(config, frame, ins):
    stack = frame.value_stack
    b = stack.pop()
    a = stack.pop()
    if b == 0:
        return Trap("div_by_zero")
    if a == I32_MIN and b == -1:
        return Trap("int_overflow")
    q = abs(a) // abs(b)
    stack.append(q if (a < 0) == (b < 0) else -q)
    return config


def _rem_s(config, frame, ins):
    stack = frame.value_stack
    b = stack.pop()
    a = stack.pop()
    if b == 0:
        return Trap("div_by_zero")
    r = abs(a) % abs(b)
    stack.append(-r if a < 0 else r)
    return config


def _const(config, frame, ins):
    frame.value_stack.append(ins.arg)
    return config


def _eqz(config, frame, ins):
    stack = frame.value_stack
    stack.append(1 if stack.pop() == 0 else 0)
    return config


def _drop(config, frame, ins):
    frame.value_stack.pop()
    return config


def _select(config, frame, ins):
    stack = frame.value_stack
    c = stack.pop()
    v2 = stack.pop()
    v1 = stack.pop()
    stack.append(v1 if c != 0 else v2)
    return config


def _local_get(config, frame, ins):
    frame.value_stack.append(frame.locals[ins.arg])
    return config


def _local_set(config, frame, ins):
    frame.locals[ins.arg] = frame.value_stack.pop()
    return config


def _local_tee(config, frame, ins):
    frame.locals[ins.arg] = frame.value_stack[-1]
    return config


def _global_get(config, frame, ins):
    frame.value_stack.append(config.store.globals[ins.arg])
    return config


def _global_set(config, frame, ins):
    config.store.globals[ins.arg] = frame.value_stack.pop()
    return config


def _load(config, frame, ins):
    stack = frame.value_stack
    addr = stack.pop() & MASK32
    mem = config.store.memory
    if addr + 4 > len(mem):
        return Trap("oob_memory")
    stack.append(int.from_bytes(mem[addr:addr + 4], "little", signed=True))
    return config


def _store(config, frame, ins):
    stack = frame.value_stack
    value = stack.pop()
    addr = stack.pop() & MASK32
    mem = config.store.memory
    if addr + 4 > len(mem):
        return Trap("oob_memory")
    mem[addr:addr + 4] = (value & MASK32).to_bytes(4, "little")
    return config


def _memory_size(config, frame, ins):
    frame.value_stack.append(config.store.page_count)
    return config


def _memory_grow(config, frame, ins):
    stack = frame.value_stack
    delta = stack.pop() & MASK32
    store = config.store
    old = store.page_count
    if old + delta <= store.max_pages:
        store.memory.extend(bytes(delta * PAGE_SIZE))
        store.page_count = old + delta
        stack.append(old)
    else:
        stack.append(-1)
    return config


def _push_entry(frame, kind, code, label_arity, end_arity, loop_body=None, catch_body=None):
    frame.ctrl_stack.append(
        ControlEntry(kind, code, 0, label_arity, end_arity, len(frame.value_stack), loop_body, catch_body)
    )


def _block(config, frame, ins):
    n = len(ins.result)
    _push_entry(frame, BLOCK, ins.body, n, n)
    return config


def _loop(config, frame, ins):
    _push_entry(frame, LOOP, ins.body, 0, len(ins.result), loop_body=ins.body)
    return config


def _if(config, frame, ins):
    cond = frame.value_stack.pop()
    n = len(ins.result)
    _push_entry(frame, IF_ARM, ins.body if cond != 0 else ins.else_body, n, n)
    return config


def _try(config, frame, ins):
    n = len(ins.result)
    _push_entry(frame, TRY, ins.body, n, n, catch_body=ins.else_body)
    return config


def _throw(config, frame, ins):
    return exceptions.unwind(config, frame.value_stack.pop())


def _leave_frame(config, frame, exact: bool):
    """Pop ``frame``, handing its results to the caller (or to the host)."""
    stack = frame.value_stack
    n = frame.result_arity
    if len(stack) < n or (exact and config.debug and len(stack) != n):
        raise InternalError(
            f"preservation: function {frame.func_index} ends with {len(stack)} values, expected {n}"
        )
    values = stack[len(stack) - n:] if n else []
    config.frames.pop()
    if not config.frames:
        return Returned(tuple(values))
    config.frames[-1].value_stack.extend(values)
    return config


def _return(config, frame, ins=None):
    frame.ctrl_stack.clear()
    return _leave_frame(config, frame, exact=False)


def _branch(config, frame, depth):
    ctrl = frame.ctrl_stack
    if depth >= len(ctrl):
        raise InternalError(f"branch depth {depth} exceeds {len(ctrl)} live control entries")
    target = ctrl[-1 - depth]
    if target.kind == FUNC_BODY:
        return _return(config, frame)
    stack = frame.value_stack
    n = target.label_arity
    keep = len(stack) - n
    if keep < target.entry_height:
        raise InternalError(f"branch needs {n} values above height {target.entry_height}, stack has {len(stack)}")
    values = stack[keep:]
    del stack[target.entry_height:]
    del ctrl[len(ctrl) - 1 - depth:]
    if target.kind == LOOP:
        target.pc = 0
        ctrl.append(target)
    stack.extend(values)
    return config


def _br(config, frame, ins):
    return _branch(config, frame, ins.arg)


def _br_if(config, frame, ins):
    if frame.value_stack.pop() != 0:
        return _branch(config, frame, ins.arg)
    return config


def _call(config, frame, ins):
    callee = config.module.ast.funcs[ins.arg]
    nparams = len(callee.type.params)
    stack = frame.value_stack
    if len(stack) - nparams < frame.ctrl_stack[-1].entry_height:
        raise InternalError(f"call to function {ins.arg} is missing arguments")
    if len(config.frames) >= config.call_depth_limit:
        return Trap("call_stack_exhausted")
    args = stack[len(stack) - nparams:] if nparams else []
    del stack[len(stack) - nparams:]
    nres = len(callee.type.results)
    config.frames.append(
        Frame(
            ins.arg,
            args + [0] * len(callee.locals),
            [],
            [ControlEntry(FUNC_BODY, callee.body, 0, nres, nres, 0)],
            nres,
        )
    )
    return config


def _nop(config, frame, ins):
    return config


def _unreachable(config, frame, ins):
    return Trap("unreachable")


def _u32(v):
    return v & MASK32


RULES = {
    "i32.const": _const,
    "i32.add": _binop(lambda a, b: wrap(a + b)),
    "i32.sub": _binop(lambda a, b: wrap(a - b)),
    "i32.mul": _binop(lambda a, b: wrap(a * b)),
    "i32.div_s": _div_s,
    "i32.rem_s": _rem_s,
    "i32.and": _binop(lambda a, b: a & b),
    "i32.or": _binop(lambda a, b: a | b),
    "i32.xor": _binop(lambda a, b: a ^ b),
    "i32.shl": _binop(lambda a, b: wrap(a << (b & 31))),
    "i32.shr_u": _binop(lambda a, b: wrap((a & MASK32) >> (b & 31))),
    "i32.eq": _binop(lambda a, b: int(a == b)),
    "i32.ne": _binop(lambda a, b: int(a != b)),
    "i32.lt_s": _binop(lambda a, b: int(a < b)),
    "i32.le_s": _binop(lambda a, b: int(a <= b)),
    "i32.lt_u": _binop(lambda a, b: int(_u32(a) < _u32(b))),
    "i32.eqz": _eqz,
    "drop": _drop,
    "select": _select,
    "local.get": _local_get,
    "local.set": _local_set,
    "local.tee": _local_tee,
    "global.get": _global_get,
    "global.set": _global_set,
    "i32.load": _load,
    "i32.store": _store,
    "memory.size": _memory_size,
    "memory.grow": _memory_grow,
    "block": _block,
    "loop": _loop,
    "if": _if,
    "try": _try,
    "throw": _throw,
    "br": _br,
    "br_if": _br_if,
    "return": _return,
    "call": _call,
    "nop": _nop,
    "unreachable": _unreachable,
}


# -- stepping -------------------------------------------------------------------

def _dispatch(config):
    frame = config.frames[-1]
    entry = frame.ctrl_stack[-1]
    if entry.pc >= len(entry.code):
        if entry.kind == FUNC_BODY:
            return _leave_frame(config, frame, exact=True)
        stack = frame.value_stack
        if config.debug and len(stack) != entry.entry_height + entry.end_arity:
            raise InternalError(
                f"preservation: {entry.kind} exits with height {len(stack)}, "
                f"expected {entry.entry_height} + {entry.end_arity}"
            )
        frame.ctrl_stack.pop()
        return config
    ins = entry.code[entry.pc]
    entry.pc += 1
    return RULES[ins.op](config, frame, ins)


def step(config: Config) -> Config | Outcome:
    """Apply one transition rule. Mutates and returns ``config``, or returns
    the terminal :data:`Outcome`.

    Raises :class:`InternalError` if the configuration cannot step, which
    can only happen for programs the validator should have rejected.
    """
    if config.fuel is not None:
        if config.fuel <= 0:
            return FuelExhausted()
        config.fuel -= 1
    config.steps += 1
    try:
        result = _dispatch(config)
    except InternalError:
        raise
    except (IndexError, KeyError, TypeError) as exc:
        raise InternalError(f"stuck configuration: {exc!r}") from exc
    if result is not config:
        return result
    frames = config.frames
    if len(frames) == 1:
        ctrl = frames[0].ctrl_stack
        if len(ctrl) == 1 and ctrl[0].pc >= len(ctrl[0].code):
            return _leave_frame(config, frames[0], exact=True)
    if config.debug:
        _check_bounds(config)
    return config


def _check_bounds(config: Config):
    frame = config.frames[-1]
    height = len(frame.value_stack)
    ann = config.module.per_func[frame.func_index]
    if height > config.max_observed.get(frame.func_index, -1):
        config.max_observed[frame.func_index] = height
    if height > ann.max_value_stack:
        raise InternalError(
            f"function {frame.func_index}: value stack reached {height}, "
            f"validator bound is {ann.max_value_stack}"
        )
    if len(frame.ctrl_stack) > ann.max_ctrl_depth:
        raise InternalError(
            f"function {frame.func_index}: control depth {len(frame.ctrl_stack)}, "
            f"validator bound is {ann.max_ctrl_depth}"
        )
    if frame.ctrl_stack and height < frame.ctrl_stack[-1].entry_height:
        raise InternalError(f"function {frame.func_index}: value stack below entry height")


# -- drivers --------------------------------------------------------------------

def _resolve(inst: Instance, func_name: str, args) -> tuple[int, list[int]]:
    idx = inst.module.export_index(func_name)
    if idx is None:
        raise InvokeError(f"no exported function named {func_name!r}")
    func = inst.module.ast.funcs[idx]
    if len(args) != len(func.type.params):
        raise InvokeError(f"{func_name} takes {len(func.type.params)} argument(s), got {len(args)}")
    return idx, [wrap(int(a)) for a in args]


def initial_config(inst: Instance, func_index: int, args, fuel=None,
                   call_depth_limit=DEFAULT_CALL_DEPTH, debug=False) -> Config:
    func = inst.module.ast.funcs[func_index]
    nres = len(func.type.results)
    frame = Frame(
        func_index,
        list(args) + [0] * len(func.locals),
        [],
        [ControlEntry(FUNC_BODY, func.body, 0, nres, nres, 0)],
        nres,
    )
    return Config(inst.module, inst.store, [frame], fuel, call_depth_limit, debug)


def run_config(config: Config) -> Outcome:
    while True:
        result = step(config)
        if result is not config:
            return result


def invoke(inst: Instance, func_name: str, args=(), fuel: int | None = None,
           call_depth_limit: int = DEFAULT_CALL_DEPTH, debug: bool = False,
           engine: str = "auto") -> Outcome:
    """Call an exported function and run it to a terminal outcome.

    ``engine`` selects the driver: ``"step"`` iterates :func:`step`,
    ``"fast"`` uses the compiled driver from :mod:`wasmlite.engine` (same
    rules, same step counting), ``"auto"`` picks ``"fast"`` when available
    and ``debug`` is off. Store changes persist in ``inst``.
    """
    idx, args = _resolve(inst, func_name, args)
    if engine == "auto":
        from . import engine as _engine
        engine = "fast" if (_engine.AVAILABLE and not debug) else "step"
    if engine == "fast":
        from . import engine as _engine
        return _engine.run(inst, idx, args, fuel, call_depth_limit)
    if engine != "step":
        raise ValueError(f"unknown engine {engine!r}")
    return run_config(initial_config(inst, idx, args, fuel, call_depth_limit, debug))


def _snapshot(values) -> tuple:
    if len(values) > TRACE_STACK_LIMIT:
        return ("...",) + tuple(values[-TRACE_STACK_LIMIT:])
    return tuple(values)


def trace(inst: Instance, func_name: str, args=(), fuel: int = 10_000,
          call_depth_limit: int = DEFAULT_CALL_DEPTH, debug: bool = False,
          on_record=None, keep: bool = True) -> tuple[Outcome, list[TraceRecord]]:
    """Run like :func:`invoke` with the step driver, recording every step.

    ``on_record``, if given, is called with each record as it is produced.
    With ``keep=False`` records are only passed to ``on_record`` and the
    returned list stays empty (for long streamed runs).
    """
    idx, args = _resolve(inst, func_name, args)
    config = initial_config(inst, idx, args, fuel, call_depth_limit, debug)
    records: list[TraceRecord] = []
    funcs = [f.name for f in inst.module.ast.funcs]
    globals_ = [g.name for g in inst.module.ast.globals]
    while True:
        frame = config.frames[-1]
        entry = frame.ctrl_stack[-1]
        if entry.pc < len(entry.code):
            label = format_instr(entry.code[entry.pc], funcs, globals_)
        else:
            label = "end"
        depth = len(config.frames)
        result = step(config)
        if isinstance(result, FuelExhausted):
            return result, records
        if result is config:
            after = config.frames[-1].value_stack
        elif isinstance(result, Returned):
            after = result.values
        elif isinstance(result, UncaughtException) or not config.frames:
            after = ()
        else:
            after = config.frames[-1].value_stack
        rec = TraceRecord(config.steps, depth, label, _snapshot(after))
        if keep:
            records.append(rec)
        if on_record is not None:
            on_record(rec)
        if result is not config:
            return result, records
