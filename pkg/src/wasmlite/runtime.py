"""Runtime data: values, store, control entries, frames and outcomes."""

from __future__ import annotations

from dataclasses import dataclass, field

PAGE_SIZE = 65536
MASK32 = 0xFFFFFFFF
I32_MIN = -(1 << 31)

TRAP_KINDS = ("unreachable", "div_by_zero", "int_overflow", "oob_memory", "call_stack_exhausted")

# ControlEntry kinds
BLOCK = "block"
LOOP = "loop"
IF_ARM = "if_arm"
TRY = "try"
CATCH = "catch"
FUNC_BODY = "func_body"


def wrap(value: int) -> int:
    """Reduce ``value`` modulo 2**32 to its signed 32-bit reading."""
    value &= MASK32
    return value - 0x100000000 if value & 0x80000000 else value


# -- outcomes -----------------------------------------------------------------

@dataclass(frozen=True)
class Returned:
    values: tuple[int, ...]


@dataclass(frozen=True)
class Trap:
    kind: str


@dataclass(frozen=True)
class UncaughtException:
    payload: int


@dataclass(frozen=True)
class FuelExhausted:
    pass


Outcome = Returned | Trap | UncaughtException | FuelExhausted


class InternalError(Exception):
    """A defensive assertion failed: the validator accepted something the
    interpreter cannot run. Never an :data:`Outcome`."""


# -- state ----------------------------------------------------------------------

@dataclass
class Store:
    memory: bytearray
    page_count: int
    max_pages: int
    globals: list[int]

    def copy(self) -> Store:
        return Store(bytearray(self.memory), self.page_count, self.max_pages, list(self.globals))


@dataclass(slots=True)
class ControlEntry:
    """One live structured instruction: its code and a cursor into it.

    ``code[pc:]`` is the code still to run at this nesting level.
    """

    kind: str
    code: tuple
    pc: int
    label_arity: int
    end_arity: int
    entry_height: int
    loop_body: tuple | None = None
    catch_body: tuple | None = None

    @property
    def remaining(self) -> tuple:
        return self.code[self.pc:]

    def copy(self) -> ControlEntry:
        return ControlEntry(
            self.kind, self.code, self.pc, self.label_arity, self.end_arity,
            self.entry_height, self.loop_body, self.catch_body,
        )


@dataclass(slots=True)
class Frame:
    func_index: int
    locals: list[int]
    value_stack: list[int]
    ctrl_stack: list[ControlEntry]
    result_arity: int

    def copy(self) -> Frame:
        return Frame(
            self.func_index, list(self.locals), list(self.value_stack),
            [e.copy() for e in self.ctrl_stack], self.result_arity,
        )


@dataclass
class Config:
    """Whole machine state: the store plus the call stack.

    ``debug`` turns on the preservation and stack-bound assertions.
    """

    module: object  # ValidatedModule
    store: Store
    frames: list[Frame]
    fuel: int | None = None
    call_depth_limit: int = 1000
    debug: bool = False
    steps: int = 0
    max_observed: dict[int, int] = field(default_factory=dict)

    def copy(self) -> Config:
        return Config(
            self.module, self.store.copy(), [f.copy() for f in self.frames], self.fuel,
            self.call_depth_limit, self.debug, self.steps, dict(self.max_observed),
        )

    def same_state(self, other: Config) -> bool:
        return (
            self.store == other.store
            and self.frames == other.frames
            and self.fuel == other.fuel
            and self.steps == other.steps
        )


@dataclass(frozen=True)
class TraceRecord:
    step_index: int
    frame_depth: int
    instr: str
    value_stack_after: tuple

    def __str__(self) -> str:
        stack = " ".join(str(v) for v in self.value_stack_after)
        return f"{self.step_index:6d} {'  ' * (self.frame_depth - 1)}{self.instr:<20} [{stack}]"
