"""Soundness fuzzing: well-typed program generation and differential runs.

Every generated module is valid by construction: bodies are grown one
instruction at a time while tracking the operand height the validator will
see, so only instructions whose operands are available are emitted, and
each block is closed by dropping surplus values or pushing constants.

For every seed the harness

* validates the generated module (it must be accepted),
* runs its ``main`` export with the step driver in debug mode, which checks
  the preservation and stack-bound assertions at every step,
* runs it again with the compiled driver and compares outcome, step count
  and final store,
* mutates the module once; if the validator accepts the mutant, it is run the
  same way. A sound validator never lets through a mutant that gets stuck.

Termination: calls only go to higher-numbered functions and loops only branch
back through a countdown on a dedicated local, so runs are short. Fuel still
bounds them.
"""

from __future__ import annotations

import dataclasses
from collections import Counter
from dataclasses import dataclass, field

from . import engine
from .interpreter import instantiate, invoke, trace
from .rng import XorShift64
from .runtime import FuelExhausted, InternalError, Returned, Trap, UncaughtException
from .syntax import BINOPS, I32, RELOPS, FuncDef, FuncType, GlobalDef, Instr, ModuleAst, iter_instrs
from .validator import Features, Validator, validate_module

ENTRY = "main"
FUZZ_MAX_PAGES = 2

_BINOPS = sorted(BINOPS)
_RELOPS = sorted(RELOPS)
_SPECIAL_CONSTS = (0, 1, -1, 2, 4, 31, 32, -(1 << 31), (1 << 31) - 1, 65532, 65535, 65536)


@dataclass(frozen=True)
class GenConfig:
    seed: int = 0
    max_funcs: int = 4
    max_body_len: int = 24
    max_block_depth: int = 3
    max_locals: int = 3
    enable_exceptions: bool = True
    enable_memory: bool = True
    fuel: int = 5000

    def __post_init__(self):
        for name in ("max_funcs", "max_body_len", "max_block_depth", "max_locals", "fuel"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")

    def with_seed(self, seed: int) -> GenConfig:
        return dataclasses.replace(self, seed=seed)

    @property
    def features(self) -> Features:
        return Features(exceptions=self.enable_exceptions)


@dataclass
class _Label:
    kind: str
    label_arity: int
    end_arity: int
    entry: int


class _FuncGen:
    def __init__(self, rng: XorShift64, cfg: GenConfig, index: int, sigs: list[FuncType],
                 nlocals: int, globals_: list[GlobalDef], has_memory: bool):
        self.rng = rng
        self.cfg = cfg
        self.index = index
        self.sigs = sigs
        self.sig = sigs[index]
        self.user_locals = len(self.sig.params) + nlocals
        self.counters = 0
        self.globals = globals_
        self.mutable_globals = [i for i, g in enumerate(globals_) if g.mutable]
        self.has_memory = has_memory
        self.budget = cfg.max_body_len
        self.h = 0
        self.labels: list[_Label] = []

    def body(self) -> tuple[Instr, ...]:
        nres = len(self.sig.results)
        self.labels.append(_Label("func", nres, nres, 0))
        return tuple(self.seq(nres))

    # -- helpers --------------------------------------------------------------
    @property
    def avail(self) -> int:
        return self.h - self.labels[-1].entry

    @property
    def depth(self) -> int:
        return len(self.labels) - 1

    def const(self) -> Instr:
        rng = self.rng
        r = rng.below(10)
        if r < 5:
            value = rng.below(17)
        elif r < 7:
            value = -rng.below(17)
        elif r < 9:
            value = rng.choice(_SPECIAL_CONSTS)
        else:
            value = rng.next() & 0xFFFFFFFF
            value -= (1 << 32) if value & 0x80000000 else 0
        return Instr("i32.const", value)

    def close(self, out: list[Instr], arity: int):
        while self.avail > arity:
            out.append(Instr("drop"))
            self.h -= 1
        while self.avail < arity:
            out.append(self.const())
            self.h += 1

    def branch_targets(self, extra: int) -> list[int]:
        # Never branch back to a loop from random code: loops only repeat
        # through their countdown.
        return [
            k for k, lab in enumerate(reversed(self.labels))
            if lab.kind != "loop" and lab.label_arity + extra <= self.avail
        ]

    def block_result(self) -> tuple:
        return (I32,) if self.rng.below(2) else ()

    # -- sequences --------------------------------------------------------------
    def seq(self, arity: int) -> list[Instr]:
        out: list[Instr] = []
        while self.budget > 0 and self.rng.random() < 0.88:
            self.budget -= 1
            if self.emit(out):
                # Everything after a non-falling-through instruction is dead.
                self.h = self.labels[-1].entry
                if self.rng.chance(0.3):
                    out.append(Instr(self.rng.choice(_BINOPS)))
                    self.h += 1
                if not self.rng.chance(0.25):
                    break
        self.close(out, arity)
        return out

    def nested(self, kind: str, label_arity: int, end_arity: int) -> _Label:
        lab = _Label(kind, label_arity, end_arity, self.h)
        self.labels.append(lab)
        return lab

    def emit(self, out: list[Instr]) -> bool:
        """Append one instruction (or idiom); True if control never falls through."""
        rng, avail = self.rng, self.avail
        nres = len(self.sig.results)
        callees = [j for j in range(self.index + 1, len(self.sigs)) if len(self.sigs[j].params) <= avail]
        nest = self.depth < self.cfg.max_block_depth
        exc = self.cfg.enable_exceptions
        mem = self.has_memory
        cands = [
            ("const", 6), ("nop", 1), ("unreachable", 1),
            ("local.get", 5 if self.user_locals else 0),
            ("global.get", 2 if self.globals else 0),
            ("memory.size", 1 if mem else 0),
            ("block", 3 if nest else 0),
            ("loop", 2 if nest else 0),
            ("try", 2 if nest and exc else 0),
            ("call", 3 if callees else 0),
            ("br", 2 if self.branch_targets(0) else 0),
            ("return", 1 if avail >= nres else 0),
        ]
        if avail >= 1:
            cands += [
                ("i32.eqz", 2), ("drop", 2), ("if", 3 if nest else 0),
                ("local.set", 3 if self.user_locals else 0),
                ("local.tee", 2 if self.user_locals else 0),
                ("global.set", 2 if self.mutable_globals else 0),
                ("i32.load", 3 if mem else 0), ("memory.grow", 1 if mem else 0),
                ("throw", 1 if exc else 0),
                ("br_if", 2 if self.branch_targets(1) else 0),
            ]
        if avail >= 2:
            cands += [("binop", 8), ("relop", 4), ("i32.store", 3 if mem else 0)]
        if avail >= 3:
            cands.append(("select", 2))
        choice = rng.weighted([c for c in cands if c[1]])

        if choice == "const":
            out.append(self.const())
            self.h += 1
        elif choice in ("nop",):
            out.append(Instr("nop"))
        elif choice == "unreachable":
            out.append(Instr("unreachable"))
            return True
        elif choice == "local.get":
            out.append(Instr("local.get", rng.below(self.user_locals)))
            self.h += 1
        elif choice == "local.set":
            out.append(Instr("local.set", rng.below(self.user_locals)))
            self.h -= 1
        elif choice == "local.tee":
            out.append(Instr("local.tee", rng.below(self.user_locals)))
        elif choice == "global.get":
            out.append(Instr("global.get", rng.below(len(self.globals))))
            self.h += 1
        elif choice == "global.set":
            out.append(Instr("global.set", rng.choice(self.mutable_globals)))
            self.h -= 1
        elif choice == "memory.size":
            out.append(Instr("memory.size"))
            self.h += 1
        elif choice in ("i32.eqz", "i32.load", "memory.grow"):
            out.append(Instr(choice))
        elif choice == "drop":
            out.append(Instr("drop"))
            self.h -= 1
        elif choice == "binop":
            out.append(Instr(rng.choice(_BINOPS)))
            self.h -= 1
        elif choice == "relop":
            out.append(Instr(rng.choice(_RELOPS)))
            self.h -= 1
        elif choice == "i32.store":
            out.append(Instr("i32.store"))
            self.h -= 2
        elif choice == "select":
            out.append(Instr("select"))
            self.h -= 2
        elif choice == "throw":
            out.append(Instr("throw"))
            return True
        elif choice == "call":
            j = rng.choice(callees)
            out.append(Instr("call", j))
            self.h += len(self.sigs[j].results) - len(self.sigs[j].params)
        elif choice == "br":
            out.append(Instr("br", rng.choice(self.branch_targets(0))))
            return True
        elif choice == "br_if":
            self.h -= 1
            out.append(Instr("br_if", rng.choice(self.branch_targets(0))))
        elif choice == "return":
            out.append(Instr("return"))
            return True
        elif choice == "block":
            result = self.block_result()
            lab = self.nested("block", len(result), len(result))
            body = self.seq(len(result))
            self.labels.pop()
            self.h = lab.entry + len(result)
            out.append(Instr("block", None, result, tuple(body)))
        elif choice == "if":
            result = self.block_result()
            self.h -= 1
            lab = self.nested("if", len(result), len(result))
            then = self.seq(len(result))
            self.h = lab.entry
            other = self.seq(len(result)) if (result or rng.chance(0.6)) else []
            self.labels.pop()
            self.h = lab.entry + len(result)
            out.append(Instr("if", None, result, tuple(then), tuple(other)))
        elif choice == "try":
            result = self.block_result()
            lab = self.nested("try", len(result), len(result))
            body = self.seq(len(result))
            self.h = lab.entry + 1
            handler = self.seq(len(result))
            self.labels.pop()
            self.h = lab.entry + len(result)
            out.append(Instr("try", None, result, tuple(body), tuple(handler)))
        elif choice == "loop":
            self.emit_loop(out)
        return False

    def emit_loop(self, out: list[Instr]):
        rng = self.rng
        counter = self.user_locals + self.counters
        self.counters += 1
        out.append(Instr("i32.const", 1 + rng.below(3)))
        out.append(Instr("local.set", counter))
        result = self.block_result()
        lab = self.nested("loop", 0, len(result))
        body = self.seq(0)
        self.h = lab.entry
        body += [
            Instr("local.get", counter),
            Instr("i32.const", 1),
            Instr("i32.sub"),
            Instr("local.tee", counter),
            Instr("br_if", 0),
        ]
        self.close(body, len(result))
        self.labels.pop()
        self.h = lab.entry + len(result)
        out.append(Instr("loop", None, result, tuple(body)))


def gen_module(cfg: GenConfig) -> ModuleAst:
    """Generate a module that validates under ``cfg.features``.

    Function 0 is exported as ``main``; the others are helpers it may call.
    """
    rng = XorShift64(cfg.seed)
    nfuncs = 1 + rng.below(cfg.max_funcs)
    globals_ = [
        GlobalDef(f"g{i}", rng.chance(0.7), rng.below(9) - 4) for i in range(rng.below(3))
    ]
    has_memory = cfg.enable_memory and rng.chance(0.8)
    sigs = [
        FuncType((I32,) * rng.below(3), (I32,) * rng.below(2)) for _ in range(nfuncs)
    ]
    funcs = []
    for i in range(nfuncs):
        nlocals = rng.below(cfg.max_locals + 1)
        gen = _FuncGen(rng, cfg, i, sigs, nlocals, globals_, has_memory)
        body = gen.body()
        funcs.append(
            FuncDef(
                ENTRY if i == 0 else f"f{i}",
                sigs[i],
                (I32,) * (nlocals + gen.counters),
                body,
                exported=i == 0,
            )
        )
    return ModuleAst(globals_, 1 if has_memory else None, funcs)


# -- mutation ---------------------------------------------------------------------

def _count(body) -> int:
    return sum(1 + _count(i.body) + _count(i.else_body) for i in body)


def _edit(body: tuple, target: int, action) -> tuple[tuple, int]:
    """Apply ``action(body, index)`` at the ``target``-th instruction (DFS).

    Returns the rebuilt body and how many instructions were passed.
    """
    seen = 0
    for idx, ins in enumerate(body):
        if seen == target:
            return action(body, idx), -1
        seen += 1
        for attr in ("body", "else_body"):
            sub = getattr(ins, attr)
            new, n = _edit(sub, target - seen, action)
            if n < 0:
                ins = dataclasses.replace(ins, **{attr: new})
                return body[:idx] + (ins,) + body[idx + 1:], -1
            seen += n
    return body, seen


def variant_counts(modules) -> Counter:
    """How often each instruction mnemonic occurs across ``modules``."""
    counts: Counter = Counter()
    for m in modules:
        for f in m.funcs:
            counts.update(ins.op for ins in iter_instrs(f.body))
    return counts


def mutate_module(m: ModuleAst, rng: XorShift64) -> ModuleAst:
    """Return a copy of ``m`` with one small random edit to one function body."""
    candidates = [i for i, f in enumerate(m.funcs) if f.body]
    if not candidates:
        return m
    fi = rng.choice(candidates)
    func = m.funcs[fi]
    flat = list(iter_instrs(func.body))
    branches = [k for k, ins in enumerate(flat) if ins.op in ("br", "br_if")]
    kind = rng.weighted([("depth", 4 if branches else 0), ("delete", 2), ("duplicate", 2),
                         ("swap", 1), ("insert", 2), ("operand", 2)])
    target = rng.choice(branches) if kind == "depth" else rng.below(len(flat))

    def action(body, idx):
        ins = body[idx]
        if kind == "depth":
            return body[:idx] + (dataclasses.replace(ins, arg=ins.arg + 1 + rng.below(3)),) + body[idx + 1:]
        if kind == "delete":
            return body[:idx] + body[idx + 1:]
        if kind == "duplicate":
            return body[:idx + 1] + body[idx:]
        if kind == "swap":
            if idx + 1 < len(body):
                return body[:idx] + (body[idx + 1], ins) + body[idx + 2:]
            return body
        if kind == "insert":
            new = rng.choice([
                Instr("i32.const", rng.below(8)), Instr("drop"), Instr("i32.add"),
                Instr("br", rng.below(4)), Instr("local.get", rng.below(4)),
                Instr("call", rng.below(len(m.funcs) + 1)), Instr("return"),
            ])
            return body[:idx] + (new,) + body[idx:]
        if ins.arg is not None and ins.op != "i32.const":
            return body[:idx] + (dataclasses.replace(ins, arg=ins.arg + 1),) + body[idx + 1:]
        if ins.arg is not None:
            return body[:idx] + (dataclasses.replace(ins, arg=rng.below(5)),) + body[idx + 1:]
        return body[:idx] + (Instr("nop"),) + body[idx + 1:]

    new_body, _ = _edit(func.body, target, action)
    funcs = list(m.funcs)
    funcs[fi] = dataclasses.replace(func, body=new_body)
    return dataclasses.replace(m, funcs=funcs)


class SkipBranchDepthCheck(Validator):
    """Deliberately broken validator: accepts any branch depth."""

    def check_label_depth(self, depth: int) -> bool:
        return True

    def label_types(self, depth: int, pos):
        if depth >= len(self.frames):
            return []
        return super().label_types(depth, pos)


MUTANT_VALIDATORS = {"skip-br-depth": SkipBranchDepthCheck}


# -- fuzzing ----------------------------------------------------------------------

def outcome_key(outcome) -> str:
    if isinstance(outcome, Returned):
        return "returned"
    if isinstance(outcome, Trap):
        return f"trap.{outcome.kind}"
    if isinstance(outcome, UncaughtException):
        return "uncaught_exception"
    if isinstance(outcome, FuelExhausted):
        return "fuel_exhausted"
    raise TypeError(outcome)


@dataclass
class FuzzReport:
    cases_run: int = 0
    validated: int = 0
    outcomes: Counter = field(default_factory=Counter)
    mutants_accepted: int = 0
    mutant_outcomes: Counter = field(default_factory=Counter)
    steps: int = 0
    assertion_failures: list[tuple[int, str]] = field(default_factory=list)

    def merge(self, other: FuzzReport) -> FuzzReport:
        return FuzzReport(
            self.cases_run + other.cases_run,
            self.validated + other.validated,
            self.outcomes + other.outcomes,
            self.mutants_accepted + other.mutants_accepted,
            self.mutant_outcomes + other.mutant_outcomes,
            self.steps + other.steps,
            sorted(self.assertion_failures + other.assertion_failures),
        )

    def key_values(self) -> list[tuple[str, object]]:
        items: list[tuple[str, object]] = [
            ("cases_run", self.cases_run),
            ("validated", self.validated),
        ]
        items += [(f"outcome.{k}", v) for k, v in sorted(self.outcomes.items())]
        items.append(("mutants_accepted", self.mutants_accepted))
        items += [(f"mutant_outcome.{k}", v) for k, v in sorted(self.mutant_outcomes.items())]
        items.append(("steps", self.steps))
        items.append(("assertion_failures", len(self.assertion_failures)))
        return items

    def to_kv(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.key_values())

    def summary(self) -> str:
        lines = [
            f"cases run:          {self.cases_run}",
            f"validated:          {self.validated}",
            "outcomes:",
        ]
        lines += [f"  {k:<24} {v}" for k, v in sorted(self.outcomes.items())]
        lines.append(f"mutants accepted:   {self.mutants_accepted}")
        lines += [f"  {k:<24} {v}" for k, v in sorted(self.mutant_outcomes.items())]
        lines.append(f"steps:              {self.steps}")
        lines.append(f"assertion failures: {len(self.assertion_failures)}")
        lines += [f"  seed {seed}: {diag}" for seed, diag in self.assertion_failures]
        return "\n".join(lines)


def _store_state(inst):
    return bytes(inst.store.memory), tuple(inst.store.globals), inst.store.page_count


def run_both(vm, cfg: GenConfig, args=None):
    """Run ``main`` under both drivers; returns (outcome, steps) or raises
    InternalError describing the first disagreement or stuck state."""
    nparams = len(vm.ast.funcs[0].type.params)
    args = args if args is not None else [0] * nparams
    by_step = instantiate(vm, FUZZ_MAX_PAGES)
    outcome, records = trace(by_step, ENTRY, args, fuel=cfg.fuel, debug=True)
    fast = instantiate(vm, FUZZ_MAX_PAGES)
    other = invoke(fast, ENTRY, args, fuel=cfg.fuel,
                   engine="fast" if engine.AVAILABLE else "step")
    steps = engine.run.last_steps if engine.AVAILABLE else len(records)
    if other != outcome:
        raise InternalError(f"drivers disagree: trace {outcome}, invoke {other}")
    if steps != len(records):
        raise InternalError(f"drivers disagree on step count: trace {len(records)}, invoke {steps}")
    if _store_state(by_step) != _store_state(fast):
        raise InternalError("drivers disagree on final store")
    return outcome, len(records)


def fuzz_case(seed: int, cfg_template: GenConfig, validator: type[Validator] = Validator) -> FuzzReport:
    report = FuzzReport(cases_run=1)
    cfg = cfg_template.with_seed(seed)
    module = gen_module(cfg)
    vm = validate_module(module, cfg.features, validator)
    if isinstance(vm, list):
        report.assertion_failures.append((seed, f"generated module rejected: {vm[0]}"))
        return report
    report.validated = 1
    try:
        outcome, steps = run_both(vm, cfg)
        report.outcomes[outcome_key(outcome)] += 1
        report.steps += steps
    except InternalError as exc:
        report.assertion_failures.append((seed, str(exc)))
        return report
    mutant = mutate_module(module, XorShift64(seed ^ 0x5DEECE66D))
    mvm = validate_module(mutant, cfg.features, validator)
    if not isinstance(mvm, list):
        report.mutants_accepted = 1
        try:
            outcome, steps = run_both(mvm, cfg)
            report.mutant_outcomes[outcome_key(outcome)] += 1
            report.steps += steps
        except InternalError as exc:
            report.assertion_failures.append((seed, f"mutant: {exc}"))
    return report


def _fuzz_range(args):
    start, stop, cfg_template, validator = args
    report = FuzzReport()
    for seed in range(start, stop):
        report = report.merge(fuzz_case(seed, cfg_template, validator))
    return report


def fuzz_soundness(n: int, cfg_template: GenConfig = GenConfig(),
                   validator: type[Validator] = Validator, jobs: int = 1) -> FuzzReport:
    """Fuzz seeds ``cfg_template.seed .. cfg_template.seed + n - 1``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    base = cfg_template.seed
    if jobs <= 1:
        return _fuzz_range((base, base + n, cfg_template, validator))
    from concurrent.futures import ProcessPoolExecutor

    chunk = -(-n // jobs)
    parts = [(s, min(s + chunk, base + n), cfg_template, validator) for s in range(base, base + n, chunk)]
    report = FuzzReport()
    with ProcessPoolExecutor(jobs) as pool:
        for part in pool.map(_fuzz_range, parts):
            report = report.merge(part)
    return report
