"""Exceptions extension: ``throw`` and ``try ... catch ... end``.

A ``throw`` carries one i32 payload. ``try`` bodies are typed like blocks;
the ``catch`` body starts with the payload as its only operand. Unlike
``br``, whose target is fixed by the program text, a throw is resolved at run
time by unwinding control entries and, if needed, whole call frames until a
live ``try`` entry is found. Traps are never caught.
"""

from __future__ import annotations

from .runtime import CATCH, TRY, UncaughtException
from .syntax import I32


# -- static rules (called by the validator) -------------------------------------

def check_throw(v, ins):
    v.pop(I32, ins.pos)
    v.mark_unreachable()


def check_try(v, ins):
    result = list(ins.result)
    end = ins.end_pos or ins.pos
    v.push_frame("try", result, result)
    v.check_body(ins.body)
    v.check_frame_end(end)
    frame = v.frames[-1]
    frame.opcode_kind, frame.unreachable = "catch", False
    v.push(I32)
    v.check_body(ins.else_body)
    v.pop_frame(end)
    v.push_all(result)


# -- dynamic rule -------------------------------------------------------------

def unwind(config, payload: int):
    """Transfer control to the innermost live handler for ``payload``.

    Mutates ``config`` in place and returns it, or returns
    :class:`UncaughtException` when every frame has been unwound.
    """
    frames = config.frames
    while frames:
        frame = frames[-1]
        ctrl = frame.ctrl_stack
        while ctrl:
            entry = ctrl[-1]
            if entry.kind == TRY:
                del frame.value_stack[entry.entry_height:]
                frame.value_stack.append(payload)
                entry.kind = CATCH
                entry.code = entry.catch_body
                entry.pc = 0
                entry.catch_body = None
                return config
            ctrl.pop()
        frames.pop()
    return UncaughtException(payload)
