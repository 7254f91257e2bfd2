"""wasmlite: a distilled WebAssembly with a validator, a small-step
interpreter, exceptions, an in-language allocator and a soundness fuzzer."""

from .alloc import AllocReport, AllocScript, Free, Malloc, gen_alloc_script, new_allocator, run_script
from .harness import FuzzReport, GenConfig, fuzz_soundness, gen_module, mutate_module
from .interpreter import Instance, InvokeError, instantiate, invoke, step, trace
from .runtime import (
    Config,
    FuelExhausted,
    InternalError,
    Outcome,
    Returned,
    TraceRecord,
    Trap,
    UncaughtException,
)
from .syntax import FuncDef, FuncType, GlobalDef, Instr, ModuleAst, ParseError, parse_module, print_module
from .validator import Features, ValidatedModule, ValidationError, validate_module

__all__ = [
    "AllocReport", "AllocScript", "Config", "Features", "Free", "FuelExhausted", "FuncDef",
    "FuncType", "FuzzReport", "GenConfig", "GlobalDef", "Instance", "Instr", "InternalError",
    "InvokeError", "Malloc", "ModuleAst", "Outcome", "ParseError", "Returned", "TraceRecord",
    "Trap", "UncaughtException", "ValidatedModule", "ValidationError", "fuzz_soundness",
    "gen_alloc_script", "gen_module", "instantiate", "invoke", "mutate_module", "new_allocator",
    "parse_module", "print_module", "run_script", "step", "trace", "validate_module",
]
