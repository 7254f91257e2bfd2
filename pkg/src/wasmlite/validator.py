"""Stack-typed validation of function bodies.

The algorithm keeps an operand-type stack and an explicit stack of control
frames. After an instruction that never falls through (``br``, ``return``,
``unreachable``, ``throw``) the current frame is marked unreachable and pops
at its entry height succeed polymorphically, yielding an unknown type.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import exceptions
from .syntax import BINOPS, EXCEPTION_OPS, I32, RELOPS, FuncDef, Instr, ModuleAst, SourcePos, ValType

ERROR_KINDS = (
    "stack_underflow",
    "type_mismatch",
    "unknown_index",
    "depth_out_of_range",
    "immutable_global",
    "missing_result",
    "feature_disabled",
    "arity_mismatch",
)

# Sentinel returned by instr_arity for instructions that never fall through.
POLYMORPHIC = "polymorphic"

# Unknown operand type produced by polymorphic pops.
UNKNOWN = None


@dataclass(frozen=True)
class Features:
    exceptions: bool = False


@dataclass
class ValidationError:
    pos: SourcePos | None
    kind: str
    message: str
    func_index: int = -1

    def __str__(self) -> str:
        where = str(self.pos) if self.pos is not None else "?:?"
        return f"{where}: {self.kind}: {self.message}"


@dataclass
class FuncAnnotation:
    max_value_stack: int
    max_ctrl_depth: int


@dataclass
class ValidatedModule:
    ast: ModuleAst
    per_func: dict[int, FuncAnnotation]
    features: Features = Features()

    def export_index(self, name: str) -> int | None:
        i = self.ast.func_index(name)
        if i is None or not self.ast.funcs[i].exported:
            return None
        return i


@dataclass
class CtrlFrame:
    opcode_kind: str
    label_types: list[ValType]
    end_types: list[ValType]
    entry_height: int
    unreachable: bool = False


class UnknownIndex(LookupError):
    pass


@dataclass
class ModuleContext:
    """What an instruction's signature may depend on."""

    module: ModuleAst
    num_locals: int = 0
    labels: list[list[ValType]] = field(default_factory=list)  # innermost last

    @property
    def has_memory(self) -> bool:
        return self.module.memory is not None


_SIMPLE_SIGS = {
    "i32.eqz": ([I32], [I32]),
    "drop": ([UNKNOWN], []),
    "select": ([I32, I32, I32], [I32]),
    "nop": ([], []),
    "i32.const": ([], [I32]),
}
_MEMORY_SIGS = {
    "i32.load": ([I32], [I32]),
    "i32.store": ([I32, I32], []),
    "memory.size": ([], [I32]),
    "memory.grow": ([I32], [I32]),
}


def instr_arity(ins: Instr, ctx: ModuleContext):
    """Return ``(pops, pushes)`` for ``ins``, or :data:`POLYMORPHIC`.

    Pops are listed bottom to top. Structured instructions report their
    outside signature (``if`` pops its condition). Raises :class:`UnknownIndex`
    for unresolvable indices, including memory instructions in a module
    without memory.
    """
    op = ins.op
    if op in ("br", "return", "unreachable", "throw"):
        return POLYMORPHIC
    sig = _SIMPLE_SIGS.get(op)
    if sig is not None:
        return sig
    if op in BINOPS or op in RELOPS:
        return [I32, I32], [I32]
    if op in _MEMORY_SIGS:
        if not ctx.has_memory:
            raise UnknownIndex("no memory declared")
        return _MEMORY_SIGS[op]
    if op.startswith("local."):
        if not 0 <= ins.arg < ctx.num_locals:
            raise UnknownIndex(f"local {ins.arg} out of range ({ctx.num_locals} locals)")
        return {"local.get": ([], [I32]), "local.set": ([I32], []), "local.tee": ([I32], [I32])}[op]
    if op.startswith("global."):
        if not 0 <= ins.arg < len(ctx.module.globals):
            raise UnknownIndex(f"global {ins.arg} does not exist")
        return ([], [I32]) if op == "global.get" else ([I32], [])
    if op == "call":
        funcs = ctx.module.funcs
        if not 0 <= ins.arg < len(funcs):
            raise UnknownIndex(f"function {ins.arg} does not exist")
        t = funcs[ins.arg].type
        return list(t.params), list(t.results)
    if op == "br_if":
        if not 0 <= ins.arg < len(ctx.labels):
            raise UnknownIndex(f"label depth {ins.arg} out of range")
        label = ctx.labels[-1 - ins.arg]
        return label + [I32], list(label)
    if op in ("block", "loop", "try"):
        return [], list(ins.result)
    if op == "if":
        return [I32], list(ins.result)
    raise ValueError(f"unknown instruction {op!r}")


class Validator:
    """Checks one module. Subclass and override a check to build a mutant."""

    def __init__(self, module: ModuleAst, features: Features):
        self.module = module
        self.features = features
        self.errors: list[ValidationError] = []

    # -- per-function state ------------------------------------------------
    def _reset(self, index: int, func: FuncDef):
        self.func_index = index
        self.func = func
        self.num_locals = len(func.type.params) + len(func.locals)
        self.stack: list[ValType | None] = []
        self.frames: list[CtrlFrame] = []
        self.max_stack = 0
        self.max_depth = 0
        self.ctx = ModuleContext(self.module, self.num_locals)

    def error(self, pos, kind: str, message: str):
        self.errors.append(ValidationError(pos, kind, message, self.func_index))
        # Keep going: treat the rest of the frame as unreachable.
        self.mark_unreachable()

    def push(self, t):
        self.stack.append(t)
        if len(self.stack) > self.max_stack:
            self.max_stack = len(self.stack)

    def pop(self, expected, pos):
        frame = self.frames[-1]
        if len(self.stack) == frame.entry_height:
            if not frame.unreachable:
                self.error(pos, "stack_underflow", "operand stack is empty")
            return UNKNOWN
        actual = self.stack.pop()
        if actual is not UNKNOWN and expected is not UNKNOWN and actual != expected:
            self.error(pos, "type_mismatch", f"expected {expected.value}, got {actual.value}")
        return actual

    def pop_all(self, types, pos):
        for t in reversed(types):
            self.pop(t, pos)

    def push_frame(self, kind: str, label_types, end_types):
        self.frames.append(CtrlFrame(kind, list(label_types), list(end_types), len(self.stack)))
        if len(self.frames) > self.max_depth:
            self.max_depth = len(self.frames)

    def check_frame_end(self, pos):
        """Require exactly the frame's end types above its entry height."""
        frame = self.frames[-1]
        height = len(self.stack) - frame.entry_height
        want = len(frame.end_types)
        if height > want:
            self.error(pos, "arity_mismatch", f"{height - want} extra value(s) left at end of {frame.opcode_kind}")
        elif height < want and not frame.unreachable:
            self.error(pos, "missing_result", f"{frame.opcode_kind} must leave {want} value(s), found {height}")
        else:
            self.pop_all(frame.end_types, pos)
        del self.stack[frame.entry_height:]

    def pop_frame(self, pos) -> CtrlFrame:
        self.check_frame_end(pos)
        return self.frames.pop()

    def mark_unreachable(self):
        frame = self.frames[-1]
        del self.stack[frame.entry_height:]
        frame.unreachable = True

    def label_types(self, depth: int, pos):
        """Types a branch to ``depth`` must supply, or None when out of range."""
        if not self.check_label_depth(depth):
            self.error(pos, "depth_out_of_range", f"branch depth {depth} exceeds {len(self.frames)} enclosing labels")
            return None
        return self.frames[-1 - depth].label_types

    def check_label_depth(self, depth: int) -> bool:
        return 0 <= depth < len(self.frames)

    # -- driver --------------------------------------------------------------
    def run(self) -> ValidatedModule | list[ValidationError]:
        per_func = {}
        for i, func in enumerate(self.module.funcs):
            per_func[i] = self.validate_func(i, func)
        if self.errors:
            return self.errors
        return ValidatedModule(self.module, per_func, self.features)

    def validate_func(self, index: int, func: FuncDef) -> FuncAnnotation:
        self._reset(index, func)
        results = list(func.type.results)
        if len(results) > 1:
            self.errors.append(
                ValidationError(func.pos, "arity_mismatch", "functions return at most one value", index)
            )
        self.push_frame("func", results, results)
        self.check_body(func.body)
        self.pop_frame(func.end_pos or func.pos)
        return FuncAnnotation(self.max_stack, self.max_depth)

    def check_body(self, body):
        for ins in body:
            self.check_instr(ins)

    def check_instr(self, ins: Instr):
        op, pos = ins.op, ins.pos
        if op in EXCEPTION_OPS:
            if not self.features.exceptions:
                self.error(pos, "feature_disabled", f"'{op}' requires the exceptions feature")
            if op == "throw":
                exceptions.check_throw(self, ins)
            else:
                exceptions.check_try(self, ins)
            return
        if op in ("block", "loop"):
            label = [] if op == "loop" else ins.result
            self.push_frame(op, label, ins.result)
            self.check_body(ins.body)
            self.pop_frame(ins.end_pos or pos)
            self.push_all(ins.result)
            return
        if op == "if":
            self.pop(I32, pos)
            self.push_frame("if", ins.result, ins.result)
            self.check_body(ins.body)
            self.check_frame_end(ins.end_pos or pos)
            frame = self.frames[-1]
            frame.opcode_kind, frame.unreachable = "else", False
            self.check_body(ins.else_body)
            self.pop_frame(ins.end_pos or pos)
            self.push_all(ins.result)
            return
        if op == "br":
            label = self.label_types(ins.arg, pos)
            if label is not None:
                self.pop_all(label, pos)
            self.mark_unreachable()
            return
        if op == "br_if":
            self.pop(I32, pos)
            label = self.label_types(ins.arg, pos)
            if label is not None:
                self.pop_all(label, pos)
                self.push_all(label)
            return
        if op == "return":
            self.pop_all(self.frames[0].label_types, pos)
            self.mark_unreachable()
            return
        if op == "unreachable":
            self.mark_unreachable()
            return
        if op == "global.set":
            globals_ = self.module.globals
            if 0 <= ins.arg < len(globals_) and not globals_[ins.arg].mutable:
                self.error(pos, "immutable_global", f"global ${globals_[ins.arg].name} is immutable")
                return
        try:
            pops, pushes = instr_arity(ins, self.ctx)
        except UnknownIndex as exc:
            self.error(pos, "unknown_index", str(exc))
            return
        before = len(self.errors)
        self.pop_all(pops, pos)
        if len(self.errors) == before:
            # After a faulty pop the frame is already unreachable; pushing a
            # concrete result would only produce follow-on errors.
            self.push_all(pushes)

    def push_all(self, types):
        for t in types:
            self.push(t)


def validate_module(
    m: ModuleAst,
    features: Features | None = None,
    validator: type[Validator] = Validator,
) -> ValidatedModule | list[ValidationError]:
    """Validate every function of ``m``.

    Returns a :class:`ValidatedModule` on success, otherwise the full list of
    errors ordered by function and source position. Never raises.
    """
    result = validator(m, features or Features()).run()
    if isinstance(result, list):
        result.sort(key=_error_key)
    return result


def _error_key(e: ValidationError):
    if e.pos is None:
        return (e.func_index, 0, 0)
    return (e.func_index, e.pos.line, e.pos.column)
