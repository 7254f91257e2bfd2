"""Compiled driver for :func:`wasmlite.interpreter.invoke`.

Function bodies are laid out in flat opcode arrays in which every structured
instruction is followed by its body and an ``END`` marker. Running an
``END`` marker is the entry-exhausted rule, so each loop iteration below is
exactly one rule of :func:`wasmlite.interpreter.step` and fuel is counted
identically. Control entries, frames and values live in preallocated integer
arrays; the loop is compiled with numba when it is installed.

Layout of the structured forms (``a0`` = arity)::

    BLOCK a1=after   body END(a1=after)
    LOOP             body END(a1=after)
    IF a1=else a2=after   then END(a1=after)   else END(a1=after)
    TRY a1=catch a2=after body END(a1=after)   handler END(a1=after)

and each function ends with ``FEND``.
"""

from __future__ import annotations

import numpy as np

from .runtime import (
    PAGE_SIZE,
    TRAP_KINDS,
    FuelExhausted,
    InternalError,
    Returned,
    Trap,
    UncaughtException,
)
from .syntax import BINOPS, RELOPS

try:
    import numba

    AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    AVAILABLE = False

# opcodes
(
    CONST, ADD, SUB, MUL, DIV_S, REM_S, AND, OR, XOR, SHL, SHR_U,
    EQ, NE, LT_S, LE_S, LT_U, EQZ, DROP, SELECT,
    LGET, LSET, LTEE, GGET, GSET, LOAD, STORE, MSIZE, MGROW,
    BLOCK, LOOP, IF, TRY, END, FEND, THROW, BR, BR_IF, RETURN, CALL, NOP, UNREACHABLE,
) = range(41)

OPCODES = {
    "i32.const": CONST, "i32.eqz": EQZ, "drop": DROP, "select": SELECT,
    "local.get": LGET, "local.set": LSET, "local.tee": LTEE,
    "global.get": GGET, "global.set": GSET,
    "i32.load": LOAD, "i32.store": STORE, "memory.size": MSIZE, "memory.grow": MGROW,
    "throw": THROW, "br": BR, "br_if": BR_IF, "return": RETURN, "call": CALL,
    "nop": NOP, "unreachable": UNREACHABLE,
}
for _name, _code in zip(list(BINOPS) + list(RELOPS),
                        (ADD, SUB, MUL, DIV_S, REM_S, AND, OR, XOR, SHL, SHR_U, EQ, NE, LT_S, LE_S, LT_U)):
    OPCODES[_name] = _code

# entry kinds
K_FUNC, K_BLOCK, K_LOOP, K_IF, K_TRY, K_CATCH = range(6)

# run statuses
S_RETURNED, S_TRAP, S_UNCAUGHT, S_FUEL, S_INTERNAL = range(5)
INTERNAL_MESSAGES = (
    "branch depth exceeds live control entries",
    "value stack underflow",
    "stack capacity exceeded",
)


class CompiledModule:
    """Flat code for one validated module plus reusable scratch arrays."""

    def __init__(self, vm):
        ops, a0, a1, a2 = [], [], [], []

        def emit(op, x=0, y=0, z=0):
            ops.append(op), a0.append(x), a1.append(y), a2.append(z)
            return len(ops) - 1

        def lay_out(body):
            for ins in body:
                op = ins.op
                if op in ("block", "loop"):
                    at = emit(BLOCK if op == "block" else LOOP, len(ins.result))
                    lay_out(ins.body)
                    end = emit(END)
                    a1[end] = a1[at] = end + 1
                elif op in ("if", "try"):
                    at = emit(IF if op == "if" else TRY, len(ins.result))
                    lay_out(ins.body)
                    mid = emit(END)
                    a1[at] = mid + 1
                    lay_out(ins.else_body)
                    end = emit(END)
                    a1[mid] = a1[end] = a2[at] = end + 1
                else:
                    emit(OPCODES[op], ins.arg or 0)

        funcs = vm.ast.funcs
        self.fn_start = np.zeros(len(funcs), np.int64)
        self.fn_fend = np.zeros(len(funcs), np.int64)
        self.fn_nparams = np.zeros(len(funcs), np.int64)
        self.fn_nlocals = np.zeros(len(funcs), np.int64)
        self.fn_nres = np.zeros(len(funcs), np.int64)
        self.fn_maxstack = np.zeros(len(funcs), np.int64)
        self.fn_maxctrl = np.zeros(len(funcs), np.int64)
        for i, f in enumerate(funcs):
            self.fn_start[i] = len(ops)
            lay_out(f.body)
            self.fn_fend[i] = emit(FEND)
            self.fn_nparams[i] = len(f.type.params)
            self.fn_nlocals[i] = len(f.type.params) + len(f.locals)
            self.fn_nres[i] = len(f.type.results)
            ann = vm.per_func[i]
            self.fn_maxstack[i] = ann.max_value_stack
            self.fn_maxctrl[i] = ann.max_ctrl_depth
        self.ops = np.array(ops, np.int64)
        self.a0 = np.array(a0, np.int64)
        self.a1 = np.array(a1, np.int64)
        self.a2 = np.array(a2, np.int64)
        self._scratch = {}

    def scratch(self, depth_limit: int):
        bufs = self._scratch.get(depth_limit)
        if bufs is None:
            frames = depth_limit + 1

            def cap(per_frame):
                return int(frames * (int(per_frame.max(initial=0)) + 1))

            bufs = (
                np.zeros(cap(self.fn_maxstack + self.fn_nres), np.int64),  # values
                np.zeros(cap(self.fn_nlocals), np.int64),  # locals
                np.zeros((cap(self.fn_maxctrl), 6), np.int64),  # control entries
                np.zeros((frames, 6), np.int64),  # frames
            )
            self._scratch[depth_limit] = bufs
        return bufs


def _wrap(v):
    v &= 0xFFFFFFFF
    if v >= 0x80000000:
        v -= 0x100000000
    return v


def _leave(nres, vs, sp, sbase):
    # Move the top nres values down to the frame's stack base.
    for j in range(nres):
        vs[sbase + j] = vs[sp - nres + j]
    return sbase + nres


def _run(ops, a0, a1, a2, fn_start, fn_fend, fn_nparams, fn_nlocals, fn_nres,
         fn_maxstack, fn_maxctrl, vs, locs, ctrl, frames, mem, pages, max_pages,
         glob, fidx, args, fuel, depth_limit):
    """Returns (status, detail, value, has_value, steps, fuel, mem, pages)."""
    steps = 0
    unlimited = fuel < 0
    # frame 0
    nframes = 1
    lbase = 0
    nloc = fn_nlocals[fidx]
    for j in range(nloc):
        locs[j] = 0
    for j in range(args.shape[0]):
        locs[j] = args[j]
    sp = 0
    sbase = 0
    cbase = 0
    ctrl[0, 0] = K_FUNC
    ctrl[0, 1] = fn_nres[fidx]
    ctrl[0, 2] = fn_nres[fidx]
    ctrl[0, 3] = 0
    ctrl[0, 4] = fn_fend[fidx]
    ctrl[0, 5] = 0
    cd = 1
    frames[0, 0] = fidx
    frames[0, 1] = 0
    frames[0, 2] = 0
    frames[0, 3] = 0
    frames[0, 4] = 0
    pc = fn_start[fidx]
    memlen = mem.shape[0]
    while True:
        if not unlimited:
            if fuel <= 0:
                return S_FUEL, 0, 0, 0, steps, fuel, mem, pages
            fuel -= 1
        steps += 1
        op = ops[pc]
        if op == LGET:
            vs[sp] = locs[lbase + a0[pc]]
            sp += 1
            pc += 1
        elif op == CONST:
            vs[sp] = a0[pc]
            sp += 1
            pc += 1
        elif op == LSET:
            sp -= 1
            locs[lbase + a0[pc]] = vs[sp]
            pc += 1
        elif op == LTEE:
            locs[lbase + a0[pc]] = vs[sp - 1]
            pc += 1
        elif op <= LT_U:
            b = vs[sp - 1]
            a = vs[sp - 2]
            sp -= 1
            if op == ADD:
                r = _wrap(a + b)
            elif op == SUB:
                r = _wrap(a - b)
            elif op == MUL:
                r = _wrap(a * b)
            elif op == DIV_S or op == REM_S:
                if b == 0:
                    return S_TRAP, 1, 0, 0, steps, fuel, mem, pages
                if op == DIV_S:
                    if a == -2147483648 and b == -1:
                        return S_TRAP, 2, 0, 0, steps, fuel, mem, pages
                    q = abs(a) // abs(b)
                    r = q if (a < 0) == (b < 0) else -q
                else:
                    r = abs(a) % abs(b)
                    if a < 0:
                        r = -r
            elif op == AND:
                r = a & b
            elif op == OR:
                r = a | b
            elif op == XOR:
                r = a ^ b
            elif op == SHL:
                r = _wrap(a << (b & 31))
            elif op == SHR_U:
                r = _wrap((a & 0xFFFFFFFF) >> (b & 31))
            elif op == EQ:
                r = 1 if a == b else 0
            elif op == NE:
                r = 1 if a != b else 0
            elif op == LT_S:
                r = 1 if a < b else 0
            elif op == LE_S:
                r = 1 if a <= b else 0
            else:
                r = 1 if (a & 0xFFFFFFFF) < (b & 0xFFFFFFFF) else 0
            vs[sp - 1] = r
            pc += 1
        elif op == EQZ:
            vs[sp - 1] = 1 if vs[sp - 1] == 0 else 0
            pc += 1
        elif op == BR_IF or op == BR:
            taken = True
            if op == BR_IF:
                sp -= 1
                taken = vs[sp] != 0
            if not taken:
                pc += 1
            else:
                t = cd - 1 - a0[pc]
                if t < cbase:
                    return S_INTERNAL, 0, 0, 0, steps, fuel, mem, pages
                if ctrl[t, 0] == K_FUNC:
                    op = RETURN
                else:
                    n = ctrl[t, 1]
                    h = ctrl[t, 3]
                    if sp - n < h:
                        return S_INTERNAL, 1, 0, 0, steps, fuel, mem, pages
                    for j in range(n):
                        vs[h + j] = vs[sp - n + j]
                    sp = h + n
                    pc = ctrl[t, 4]
                    cd = t + 1 if ctrl[t, 0] == K_LOOP else t
        elif op == LOAD:
            addr = vs[sp - 1] & 0xFFFFFFFF
            if addr + 4 > memlen:
                return S_TRAP, 3, 0, 0, steps, fuel, mem, pages
            v = (np.int64(mem[addr]) | (np.int64(mem[addr + 1]) << 8)
                 | (np.int64(mem[addr + 2]) << 16) | (np.int64(mem[addr + 3]) << 24))
            vs[sp - 1] = _wrap(v)
            pc += 1
        elif op == STORE:
            v = vs[sp - 1] & 0xFFFFFFFF
            addr = vs[sp - 2] & 0xFFFFFFFF
            sp -= 2
            if addr + 4 > memlen:
                return S_TRAP, 3, 0, 0, steps, fuel, mem, pages
            mem[addr] = v & 0xFF
            mem[addr + 1] = (v >> 8) & 0xFF
            mem[addr + 2] = (v >> 16) & 0xFF
            mem[addr + 3] = (v >> 24) & 0xFF
            pc += 1
        elif op == END:
            cd -= 1
            pc = a1[pc]
        elif op == BLOCK or op == LOOP or op == IF or op == TRY:
            kind = K_BLOCK
            nxt = pc + 1
            if op == IF:
                kind = K_IF
                sp -= 1
                if vs[sp] == 0:
                    nxt = a1[pc]
            elif op == LOOP:
                kind = K_LOOP
            elif op == TRY:
                kind = K_TRY
            ctrl[cd, 0] = kind
            ctrl[cd, 1] = 0 if op == LOOP else a0[pc]
            ctrl[cd, 2] = a0[pc]
            ctrl[cd, 3] = sp
            ctrl[cd, 4] = pc + 1 if op == LOOP else (a2[pc] if op == IF or op == TRY else a1[pc])
            ctrl[cd, 5] = a1[pc]
            cd += 1
            pc = nxt
        elif op == GGET:
            vs[sp] = glob[a0[pc]]
            sp += 1
            pc += 1
        elif op == GSET:
            sp -= 1
            glob[a0[pc]] = vs[sp]
            pc += 1
        elif op == DROP:
            sp -= 1
            pc += 1
        elif op == SELECT:
            c = vs[sp - 1]
            sp -= 2
            if c == 0:
                vs[sp - 1] = vs[sp]
            pc += 1
        elif op == CALL:
            callee = a0[pc]
            np_ = fn_nparams[callee]
            if nframes >= depth_limit:
                return S_TRAP, 4, 0, 0, steps, fuel, mem, pages
            if sp - np_ < ctrl[cd - 1, 3]:
                return S_INTERNAL, 1, 0, 0, steps, fuel, mem, pages
            new_lbase = lbase + fn_nlocals[fidx]
            sp -= np_
            if (new_lbase + fn_nlocals[callee] > locs.shape[0]
                    or sp + fn_maxstack[callee] + fn_nres[callee] > vs.shape[0]
                    or cd + fn_maxctrl[callee] > ctrl.shape[0]):
                return S_INTERNAL, 2, 0, 0, steps, fuel, mem, pages
            for j in range(fn_nlocals[callee]):
                locs[new_lbase + j] = vs[sp + j] if j < np_ else 0
            frames[nframes - 1, 1] = pc + 1
            frames[nframes, 0] = callee
            frames[nframes, 2] = new_lbase
            frames[nframes, 3] = sp
            frames[nframes, 4] = cd
            nframes += 1
            fidx = callee
            lbase = new_lbase
            sbase = sp
            cbase = cd
            ctrl[cd, 0] = K_FUNC
            ctrl[cd, 1] = fn_nres[callee]
            ctrl[cd, 2] = fn_nres[callee]
            ctrl[cd, 3] = sp
            ctrl[cd, 4] = fn_fend[callee]
            ctrl[cd, 5] = 0
            cd += 1
            pc = fn_start[callee]
        elif op == MSIZE:
            vs[sp] = pages
            sp += 1
            pc += 1
        elif op == MGROW:
            delta = vs[sp - 1] & 0xFFFFFFFF
            if delta == 0:
                vs[sp - 1] = pages
            elif pages + delta <= max_pages:
                grown = np.zeros((pages + delta) * 65536, np.uint8)
                grown[:memlen] = mem
                mem = grown
                memlen = mem.shape[0]
                vs[sp - 1] = pages
                pages += delta
            else:
                vs[sp - 1] = -1
            pc += 1
        elif op == THROW:
            sp -= 1
            payload = vs[sp]
            caught = False
            while not caught:
                while cd > cbase:
                    if ctrl[cd - 1, 0] == K_TRY:
                        caught = True
                        break
                    cd -= 1
                if caught:
                    break
                nframes -= 1
                if nframes == 0:
                    return S_UNCAUGHT, 0, payload, 1, steps, fuel, mem, pages
                fidx = frames[nframes - 1, 0]
                lbase = frames[nframes - 1, 2]
                sbase = frames[nframes - 1, 3]
                cbase = frames[nframes - 1, 4]
                pc = frames[nframes - 1, 1]
            t = cd - 1
            ctrl[t, 0] = K_CATCH
            sp = ctrl[t, 3]
            vs[sp] = payload
            sp += 1
            pc = ctrl[t, 5]
        elif op == NOP:
            pc += 1
        elif op == UNREACHABLE:
            return S_TRAP, 0, 0, 0, steps, fuel, mem, pages
        elif op == FEND:
            op = RETURN
        if op == RETURN:
            nres = fn_nres[fidx]
            if sp - nres < sbase:
                return S_INTERNAL, 1, 0, 0, steps, fuel, mem, pages
            if nframes == 1:
                return S_RETURNED, 0, vs[sp - 1] if nres else 0, nres, steps, fuel, mem, pages
            sp = _leave(nres, vs, sp, sbase)
            nframes -= 1
            fidx = frames[nframes - 1, 0]
            pc = frames[nframes - 1, 1]
            lbase = frames[nframes - 1, 2]
            sbase = frames[nframes - 1, 3]
            cbase = frames[nframes - 1, 4]
            cd = frames[nframes, 4]
        # Returning from the outermost body is folded into the step that
        # exhausts it.
        if nframes == 1 and cd == 1 and pc == fn_fend[fidx]:
            nres = fn_nres[fidx]
            if sp < nres:
                return S_INTERNAL, 1, 0, 0, steps, fuel, mem, pages
            return S_RETURNED, 0, vs[sp - 1] if nres else 0, nres, steps, fuel, mem, pages


if AVAILABLE:
    _wrap = numba.njit(cache=True, inline="always")(_wrap)
    _leave = numba.njit(cache=True)(_leave)
    _run = numba.njit(cache=True)(_run)


def compiled(vm) -> CompiledModule:
    cm = getattr(vm, "_compiled", None)
    if cm is None:
        cm = CompiledModule(vm)
        vm._compiled = cm
    return cm


def run(inst, func_index: int, args, fuel=None, call_depth_limit: int = 1000):
    """Run ``func_index`` of ``inst`` to an outcome and commit store changes."""
    cm = compiled(inst.module)
    vs, locs, ctrl, frames = cm.scratch(call_depth_limit)
    store = inst.store
    mem = np.frombuffer(store.memory, np.uint8) if store.memory else np.zeros(0, np.uint8)
    glob = np.array(store.globals, np.int64) if store.globals else np.zeros(0, np.int64)
    status, detail, value, has_value, steps, _, new_mem, pages = _run(
        cm.ops, cm.a0, cm.a1, cm.a2, cm.fn_start, cm.fn_fend, cm.fn_nparams,
        cm.fn_nlocals, cm.fn_nres, cm.fn_maxstack, cm.fn_maxctrl,
        vs, locs, ctrl, frames, mem, store.page_count, store.max_pages, glob,
        func_index, np.array(args, np.int64), -1 if fuel is None else fuel, call_depth_limit,
    )
    if pages != store.page_count:
        store.memory = bytearray(new_mem.tobytes())
        store.page_count = pages
    del mem, new_mem
    if store.globals:
        store.globals[:] = [int(g) for g in glob]
    run.last_steps = steps
    if status == S_RETURNED:
        return Returned((int(value),) if has_value else ())
    if status == S_TRAP:
        return Trap(TRAP_KINDS[detail])
    if status == S_UNCAUGHT:
        return UncaughtException(int(value))
    if status == S_FUEL:
        return FuelExhausted()
    raise InternalError(INTERNAL_MESSAGES[detail])


run.last_steps = 0
assert PAGE_SIZE == 65536
