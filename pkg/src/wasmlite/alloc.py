"""Harness for the in-language implicit free list allocator (``corpus/alloc.wml``).

Scripts of malloc/free operations are replayed against an instance of the
allocator. After every operation the returned addresses are checked against
a shadow model of the live blocks (disjoint, aligned, inside the heap) and
the heap itself is walked header by header from the base, which must land
exactly on the break.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import engine
from .interpreter import Instance, instantiate, invoke
from .rng import XorShift64
from .runtime import Returned
from .syntax import parse_module
from .validator import ValidatedModule, validate_module

HEAP_BASE = 8
MIN_BLOCK = 8


@dataclass(frozen=True)
class Malloc:
    size: int
    id: str


@dataclass(frozen=True)
class Free:
    id: str


@dataclass
class AllocScript:
    ops: list[Malloc | Free] = field(default_factory=list)

    def to_text(self) -> str:
        lines = []
        for op in self.ops:
            if isinstance(op, Malloc):
                lines.append(f"malloc {op.size} {op.id}")
            else:
                lines.append(f"free {op.id}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> AllocScript:
        ops: list[Malloc | Free] = []
        for lineno, line in enumerate(text.splitlines(), 1):
            words = line.split("#", 1)[0].split()
            if not words:
                continue
            if words[0] == "malloc" and len(words) == 3:
                ops.append(Malloc(int(words[1], 0), words[2]))
            elif words[0] == "free" and len(words) == 2:
                ops.append(Free(words[1]))
            else:
                raise ValueError(f"line {lineno}: expected 'malloc <size> <id>' or 'free <id>'")
        return cls(ops)

    def check(self):
        """Raise ValueError unless ids are unique and frees target live ids."""
        seen, live = set(), set()
        for i, op in enumerate(self.ops):
            if isinstance(op, Malloc):
                if op.id in seen:
                    raise ValueError(f"op {i}: duplicate id {op.id}")
                seen.add(op.id)
                live.add(op.id)
            else:
                if op.id not in live:
                    raise ValueError(f"op {i}: free of {op.id} which is not live")
                live.remove(op.id)


class ShadowHeap:
    """The set of live blocks as reported by malloc, kept sorted by address."""

    def __init__(self, heap_limit: int):
        self.heap_limit = heap_limit
        self.live: dict[str, tuple[int, int]] = {}
        self._starts: list[int] = []
        self._ends: dict[int, int] = {}

    def add(self, id_: str, addr: int, size: int) -> list[str]:
        problems = []
        if addr % 4:
            problems.append("alignment")
        if addr < HEAP_BASE or addr + size > self.heap_limit:
            problems.append("bounds")
        i = bisect.bisect_left(self._starts, addr)
        if i > 0 and self._ends[self._starts[i - 1]] > addr:
            problems.append("disjointness")
        elif i < len(self._starts) and self._starts[i] < addr + size:
            problems.append("disjointness")
        elif addr in self._ends:
            problems.append("disjointness")
        if not problems:
            self._starts.insert(i, addr)
            self._ends[addr] = addr + size
            self.live[id_] = (addr, size)
        return problems

    def remove(self, id_: str) -> tuple[int, int] | None:
        block = self.live.pop(id_, None)
        if block is not None:
            addr = block[0]
            del self._starts[bisect.bisect_left(self._starts, addr)]
            del self._ends[addr]
        return block


@dataclass
class AllocReport:
    results: list[int] = field(default_factory=list)
    violations: list[tuple[int, str]] = field(default_factory=list)
    peak_heap: int = HEAP_BASE

    @property
    def passed(self) -> bool:
        return not self.violations


def _walk(words, base, brk):
    # Returns (end, allocated_count, bad_header_at); bad_header_at is -1 if all
    # headers are well formed.
    p = base
    allocated = 0
    limit = words.shape[0] * 4
    while p < brk:
        if p + 4 > limit:
            return p, allocated, p
        h = words[p >> 2]
        size = h & 0xFFFFFFFE
        if size < MIN_BLOCK or size & 3:
            return p, allocated, p
        allocated += h & 1
        p += size
    return p, allocated, -1


if engine.AVAILABLE:
    _walk = engine.numba.njit(cache=True)(_walk)


def walk_headers(memory, brk: int):
    """Walk the implicit list from the heap base; see :func:`_walk`."""
    words = np.frombuffer(memory, dtype="<u4")
    try:
        end, allocated, bad = _walk(words, HEAP_BASE, brk)
    finally:
        del words
    return int(end), int(allocated), int(bad)


def load_allocator() -> ValidatedModule:
    text = resources.files("wasmlite").joinpath("corpus/alloc.wml").read_text()
    vm = validate_module(parse_module(text))
    if isinstance(vm, list):
        raise RuntimeError("allocator asset does not validate: " + "; ".join(map(str, vm)))
    return vm


def new_allocator(max_pages: int = 16) -> Instance:
    return instantiate(load_allocator(), max_pages)


def run_script(inst: Instance, script: AllocScript, fuel: int | None = None,
               engine_name: str = "auto") -> AllocReport:
    """Replay ``script`` on ``inst`` and check the heap after every operation."""
    brk_index = next(i for i, g in enumerate(inst.module.ast.globals) if g.mutable)
    store = inst.store
    shadow = ShadowHeap(len(store.memory))
    report = AllocReport()
    addrs: dict[str, int] = {}

    for i, op in enumerate(script.ops):
        if isinstance(op, Malloc):
            outcome = invoke(inst, "malloc", [op.size], fuel=fuel, engine=engine_name)
            addr = outcome.values[0] & 0xFFFFFFFF if isinstance(outcome, Returned) else 0
            addrs[op.id] = addr
        else:
            if op.id not in addrs:
                raise ValueError(f"op {i}: free of unknown id {op.id}")
            addr = addrs.pop(op.id)
            outcome = invoke(inst, "free", [addr], fuel=fuel, engine=engine_name)
            shadow.remove(op.id)
        report.results.append(addr)
        if not isinstance(outcome, Returned):
            report.violations.append((i, f"trap-freedom ({outcome})"))
            continue

        shadow.heap_limit = len(store.memory)
        brk = store.globals[brk_index] & 0xFFFFFFFF
        report.peak_heap = max(report.peak_heap, brk)
        if isinstance(op, Malloc) and op.size == 0 and addr:
            report.violations.append((i, "null result for size 0"))
        elif isinstance(op, Malloc) and addr:
            for problem in shadow.add(op.id, addr, op.size):
                report.violations.append((i, problem))
            header = int.from_bytes(store.memory[addr - 4:addr], "little") if addr >= 4 else 0
            if not header & 1 or (header & ~3) - 4 < op.size:
                report.violations.append((i, "header"))
        end, allocated, bad = walk_headers(store.memory, brk)
        if bad >= 0:
            report.violations.append((i, f"header walk: malformed header at {bad}"))
        elif end != brk:
            report.violations.append((i, f"header walk: ended at {end}, break is {brk}"))
        elif allocated != len(shadow.live):
            report.violations.append((i, f"header walk: {allocated} allocated blocks, {len(shadow.live)} live"))
    return report


def gen_alloc_script(seed: int, n_ops: int, size_range=(1, 256), free_prob: float = 0.4) -> AllocScript:
    """Random script: each op frees a random live block with probability
    ``free_prob`` (when any is live), otherwise mallocs a size drawn
    uniformly from ``size_range``."""
    if n_ops < 1:
        raise ValueError("n_ops must be at least 1")
    rng = XorShift64(seed)
    lo, hi = size_range
    live: list[str] = []
    ops: list[Malloc | Free] = []
    for k in range(n_ops):
        if live and rng.random() < free_prob:
            ops.append(Free(live.pop(rng.below(len(live)))))
        else:
            name = f"b{k}"
            ops.append(Malloc(rng.randint(lo, hi), name))
            live.append(name)
    return AllocScript(ops)
