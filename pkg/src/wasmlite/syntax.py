"""Abstract syntax, text-format parser and canonical printer.

The text format is a small subset of WebAssembly's ``.wat``: an s-expression
module skeleton with flat (non-folded) instruction lists inside functions::

    (module
      (global $brk (mut i32) (i32.const 8))
      (memory 1)
      (func $add (export) (param i32) (param i32) (result i32)
        local.get 0
        local.get 1
        i32.add
      )
    )

Locals and branch targets are referenced by numeric index only; functions and
globals are referenced by ``$name`` (a bare index is accepted as a fallback so
that modules with dangling references still print and re-parse).
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field


class ValType(enum.Enum):
    I32 = "i32"

    def __repr__(self) -> str:
        return self.value


I32 = ValType.I32


@dataclass(frozen=True)
class SourcePos:
    line: int
    column: int

    def __str__(self) -> str:
        return f"{self.line}:{self.column}"


@dataclass(frozen=True)
class FuncType:
    params: tuple[ValType, ...] = ()
    results: tuple[ValType, ...] = ()


BINOPS = {
    "i32.add": "add",
    "i32.sub": "sub",
    "i32.mul": "mul",
    "i32.div_s": "div_s",
    "i32.rem_s": "rem_s",
    "i32.and": "and",
    "i32.or": "or",
    "i32.xor": "xor",
    "i32.shl": "shl",
    "i32.shr_u": "shr_u",
}
RELOPS = {
    "i32.eq": "eq",
    "i32.ne": "ne",
    "i32.lt_s": "lt_s",
    "i32.le_s": "le_s",
    "i32.lt_u": "lt_u",
}

# Mnemonics by immediate shape.
PLAIN_OPS = frozenset(
    set(BINOPS)
    | set(RELOPS)
    | {
        "i32.eqz",
        "drop",
        "select",
        "i32.load",
        "i32.store",
        "memory.size",
        "memory.grow",
        "return",
        "nop",
        "unreachable",
        "throw",
    }
)
INDEX_OPS = frozenset({"local.get", "local.set", "local.tee", "br", "br_if"})
NAMED_OPS = frozenset({"call", "global.get", "global.set"})
BLOCK_OPS = frozenset({"block", "loop", "if", "try"})
EXCEPTION_OPS = frozenset({"throw", "try"})
ALL_OPS = PLAIN_OPS | INDEX_OPS | NAMED_OPS | BLOCK_OPS | {"i32.const"}

I32_MIN = -(1 << 31)
U32_MAX = (1 << 32) - 1


def to_signed(value: int) -> int:
    value &= 0xFFFFFFFF
    return value - (1 << 32) if value & 0x80000000 else value


@dataclass(slots=True)
class Instr:
    """One instruction.

    ``arg`` holds the immediate (constant, local index, label depth, function
    or global index). Structured instructions carry ``result`` (their block
    type) and nested bodies: ``body`` for block/loop, then/else for ``if``
    (``body``/``else_body``) and try/catch for ``try``.

    Source positions do not take part in equality, so a parsed module compares
    equal to the module it was printed from.
    """

    op: str
    arg: int | None = None
    result: tuple[ValType, ...] = ()
    body: tuple[Instr, ...] = ()
    else_body: tuple[Instr, ...] = ()
    pos: SourcePos | None = field(default=None, compare=False, repr=False)
    end_pos: SourcePos | None = field(default=None, compare=False, repr=False)

    def __str__(self) -> str:
        if self.arg is not None:
            return f"{self.op} {self.arg}"
        if self.result:
            return self.op + _result_clause(self.result)
        return self.op


@dataclass
class FuncDef:
    name: str
    type: FuncType = FuncType()
    locals: tuple[ValType, ...] = ()
    body: tuple[Instr, ...] = ()
    exported: bool = False
    pos: SourcePos | None = field(default=None, compare=False, repr=False)
    end_pos: SourcePos | None = field(default=None, compare=False, repr=False)


@dataclass
class GlobalDef:
    name: str
    mutable: bool = False
    init: int = 0
    pos: SourcePos | None = field(default=None, compare=False, repr=False)


@dataclass
class ModuleAst:
    globals: list[GlobalDef] = field(default_factory=list)
    memory: int | None = None
    funcs: list[FuncDef] = field(default_factory=list)

    def func_index(self, name: str) -> int | None:
        for i, f in enumerate(self.funcs):
            if f.name == name:
                return i
        return None


def iter_instrs(body):
    """Yield every instruction in ``body``, depth first, including nested ones."""
    for ins in body:
        yield ins
        if ins.body:
            yield from iter_instrs(ins.body)
        if ins.else_body:
            yield from iter_instrs(ins.else_body)


# ---------------------------------------------------------------------------
# Tokenizer

class ParseError(Exception):
    """Raised by :func:`parse_module`; ``errors`` is a list of (pos, message)."""

    def __init__(self, errors: list[tuple[SourcePos, str]]):
        self.errors = errors
        pos, msg = errors[0]
        super().__init__(f"{pos}: {msg}")

    @property
    def pos(self) -> SourcePos:
        return self.errors[0][0]


@dataclass(frozen=True, slots=True)
class Token:
    text: str
    pos: SourcePos


_TOKEN_RE = re.compile(r"\s+|;;[^\n]*|\(|\)|[^\s()]+")


def tokenize(text: str) -> list[Token]:
    tokens = []
    line, line_start = 1, 0
    for m in _TOKEN_RE.finditer(text):
        s = m.group()
        if s[0].isspace() or s.startswith(";;"):
            nl = s.count("\n")
            if nl:
                line += nl
                line_start = m.start() + s.rindex("\n") + 1
            continue
        tokens.append(Token(s, SourcePos(line, m.start() - line_start + 1)))
    return tokens


_INT_RE = re.compile(r"[+-]?(0x[0-9a-fA-F]+|[0-9]+)\Z")
_NAME_RE = re.compile(r"\$[A-Za-z0-9_.\-]+\Z")


def parse_int32(text: str) -> int | None:
    """Parse an i32 literal; returns the signed value or None if malformed.

    Accepts an optional sign followed by decimal or ``0x`` hex digits. The
    magnitude must lie in [-2**31, 2**32 - 1]; unsigned values above 2**31 - 1
    wrap to their two's-complement reading.
    """
    if not _INT_RE.match(text):
        return None
    value = int(text, 0) if "0x" in text else int(text, 10)
    if not I32_MIN <= value <= U32_MAX:
        return None
    return to_signed(value)


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.i = 0
        self.end_pos = self._end_of(text)
        self.func_names: dict[str, int] = {}
        self.global_names: dict[str, int] = {}

    @staticmethod
    def _end_of(text: str) -> SourcePos:
        lines = text.split("\n")
        return SourcePos(len(lines), len(lines[-1]) + 1)

    # token helpers
    def peek(self, offset: int = 0) -> Token | None:
        j = self.i + offset
        return self.tokens[j] if j < len(self.tokens) else None

    def next(self) -> Token:
        tok = self.peek()
        if tok is None:
            self.fail(self.end_pos, "unexpected end of input (unbalanced parentheses)")
        self.i += 1
        return tok

    def fail(self, pos: SourcePos, msg: str):
        raise ParseError([(pos, msg)])

    def expect(self, text: str) -> Token:
        tok = self.next()
        if tok.text != text:
            if text == ")" and tok.text != "(":
                self.fail(tok.pos, f"unknown keyword '{tok.text}'")
            self.fail(tok.pos, f"expected '{text}', found '{tok.text}'")
        return tok

    def at_form(self, head: str) -> bool:
        a, b = self.peek(), self.peek(1)
        return a is not None and b is not None and a.text == "(" and b.text == head

    # module structure
    def parse(self) -> ModuleAst:
        self._check_balance()
        self._collect_names()
        self.expect("(")
        self.expect("module")
        module = ModuleAst()
        memory_seen = False
        while True:
            tok = self.next()
            if tok.text == ")":
                break
            if tok.text != "(":
                self.fail(tok.pos, f"unknown keyword '{tok.text}'")
            head = self.next()
            if head.text == "global":
                module.globals.append(self._global(tok.pos))
            elif head.text == "memory":
                if memory_seen:
                    self.fail(head.pos, "duplicate memory")
                memory_seen = True
                module.memory = self._nat(self.next(), "page count")
                self.expect(")")
            elif head.text == "func":
                module.funcs.append(self._func(tok.pos))
            else:
                self.fail(head.pos, f"unknown keyword '{head.text}'")
        extra = self.peek()
        if extra is not None:
            self.fail(extra.pos, f"unexpected '{extra.text}' after module")
        return module

    def _check_balance(self):
        depth = 0
        for tok in self.tokens:
            if tok.text == "(":
                depth += 1
            elif tok.text == ")":
                depth -= 1
                if depth < 0:
                    self.fail(tok.pos, "unbalanced parentheses: unexpected ')'")
        if depth > 0:
            self.fail(self.end_pos, "unbalanced parentheses: missing ')'")

    def _collect_names(self):
        # Pre-scan top-level fields so calls may refer forward.
        depth = 0
        toks = self.tokens
        for j, tok in enumerate(toks):
            if tok.text == "(":
                depth += 1
                if depth == 2 and j + 2 < len(toks):
                    kind, name = toks[j + 1], toks[j + 2]
                    table = {"func": self.func_names, "global": self.global_names}.get(kind.text)
                    if table is not None and _NAME_RE.match(name.text):
                        if name.text in table:
                            self.fail(name.pos, f"duplicate {kind.text} name {name.text}")
                        table[name.text] = len(table)
                    elif table is not None:
                        table[f"#{len(table)}"] = len(table)
            elif tok.text == ")":
                depth -= 1

    def _name(self) -> str:
        tok = self.next()
        if not _NAME_RE.match(tok.text):
            self.fail(tok.pos, f"expected $name, found '{tok.text}'")
        return tok.text[1:]

    def _nat(self, tok: Token, what: str) -> int:
        if not re.fullmatch(r"[0-9]+|0x[0-9a-fA-F]+", tok.text):
            self.fail(tok.pos, f"malformed {what} '{tok.text}'")
        value = int(tok.text, 0)
        if value > U32_MAX:
            self.fail(tok.pos, f"{what} out of range '{tok.text}'")
        return value

    def _valtype(self) -> ValType:
        tok = self.next()
        if tok.text != "i32":
            self.fail(tok.pos, f"unknown value type '{tok.text}'")
        return I32

    def _global(self, pos: SourcePos) -> GlobalDef:
        name = self._name()
        mutable = False
        if self.at_form("mut"):
            self.next(), self.next()
            self._valtype()
            self.expect(")")
            mutable = True
        else:
            self._valtype()
        self.expect("(")
        self.expect("i32.const")
        init = self._int(self.next())
        self.expect(")")
        self.expect(")")
        return GlobalDef(name, mutable, init, pos=pos)

    def _int(self, tok: Token) -> int:
        value = parse_int32(tok.text)
        if value is None:
            self.fail(tok.pos, f"malformed integer literal '{tok.text}'")
        return value

    def _types(self, head: str) -> list[ValType]:
        out = []
        while self.at_form(head):
            self.next(), self.next()
            while self.peek() is not None and self.peek().text != ")":
                out.append(self._valtype())
            self.expect(")")
        return out

    def _func(self, pos: SourcePos) -> FuncDef:
        name = self._name()
        exported = False
        if self.at_form("export"):
            self.next(), self.next()
            self.expect(")")
            exported = True
        params = self._types("param")
        result_pos = self.peek(1).pos if self.at_form("result") else None
        results = self._types("result")
        if len(results) > 1:
            self.fail(result_pos, "at most one result type is allowed")
        locals_ = self._types("local")
        body, stop = self._instrs(("",))
        return FuncDef(
            name,
            FuncType(tuple(params), tuple(results)),
            tuple(locals_),
            tuple(body),
            exported,
            pos=pos,
            end_pos=stop.pos,
        )

    def _block_result(self) -> tuple[ValType, ...]:
        if self.at_form("result"):
            pos = self.peek(1).pos
            results = self._types("result")
            if len(results) > 1:
                self.fail(pos, "at most one result type is allowed")
            return tuple(results)
        return ()

    def _instrs(self, terminators: tuple[str, ...]) -> tuple[list[Instr], Token]:
        """Parse instructions up to a terminator keyword (or ')' for a func body).

        Returns the instructions and the terminating token, which is consumed.
        """
        out: list[Instr] = []
        while True:
            tok = self.next()
            t = tok.text
            if t == ")":
                if "" in terminators:
                    return out, tok
                self.fail(tok.pos, f"expected {' or '.join(terminators)} before ')'")
            if t in terminators:
                return out, tok
            if t == "(":
                self.fail(tok.pos, "folded instructions are not supported")
            out.append(self._instr(tok))

    def _instr(self, tok: Token) -> Instr:
        op, pos = tok.text, tok.pos
        if op in PLAIN_OPS:
            return Instr(op, pos=pos)
        if op == "i32.const":
            return Instr(op, self._int(self.next()), pos=pos)
        if op in INDEX_OPS:
            return Instr(op, self._nat(self.next(), "index"), pos=pos)
        if op in NAMED_OPS:
            ref = self.next()
            table = self.func_names if op == "call" else self.global_names
            if _NAME_RE.match(ref.text):
                if ref.text not in table:
                    kind = "function" if op == "call" else "global"
                    self.fail(ref.pos, f"unknown {kind} {ref.text}")
                return Instr(op, table[ref.text], pos=pos)
            return Instr(op, self._nat(ref, "index"), pos=pos)
        if op in ("block", "loop"):
            result = self._block_result()
            body, end = self._instrs(("end",))
            return Instr(op, None, result, tuple(body), pos=pos, end_pos=end.pos)
        if op == "if":
            result = self._block_result()
            then, stop = self._instrs(("else", "end"))
            other: list[Instr] = []
            if stop.text == "else":
                other, stop = self._instrs(("end",))
            return Instr(op, None, result, tuple(then), tuple(other), pos=pos, end_pos=stop.pos)
        if op == "try":
            result = self._block_result()
            body, _ = self._instrs(("catch",))
            handler, end = self._instrs(("end",))
            return Instr(op, None, result, tuple(body), tuple(handler), pos=pos, end_pos=end.pos)
        self.fail(pos, f"unknown keyword '{op}'")


def parse_module(text: str) -> ModuleAst:
    """Parse module text into a :class:`ModuleAst`.

    Raises :class:`ParseError` at the first syntax error. No validation is
    performed beyond resolving ``$name`` references.
    """
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# Printer

def _result_clause(result: tuple[ValType, ...]) -> str:
    return "".join(f" (result {t.value})" for t in result)


def _ref(index: int | None, names: list[str]) -> str:
    if index is not None and 0 <= index < len(names):
        return "$" + names[index]
    return str(index)


def format_instr(ins: Instr, funcs=(), globals_=()) -> str:
    """One-line form of ``ins`` (structured ones print their opening line)
    with function and global indices shown by name when they resolve."""
    if ins.op == "call":
        return f"call {_ref(ins.arg, funcs)}"
    if ins.op in ("global.get", "global.set"):
        return f"{ins.op} {_ref(ins.arg, globals_)}"
    return str(ins)


def _print_body(body, indent: int, out: list[str], funcs: list[str], globals_: list[str]):
    pad = "  " * indent
    for ins in body:
        op = ins.op
        if op in ("block", "loop"):
            out.append(f"{pad}{op}{_result_clause(ins.result)}")
            _print_body(ins.body, indent + 1, out, funcs, globals_)
            out.append(f"{pad}end")
        elif op == "if":
            out.append(f"{pad}if{_result_clause(ins.result)}")
            _print_body(ins.body, indent + 1, out, funcs, globals_)
            if ins.else_body:
                out.append(f"{pad}else")
                _print_body(ins.else_body, indent + 1, out, funcs, globals_)
            out.append(f"{pad}end")
        elif op == "try":
            out.append(f"{pad}try{_result_clause(ins.result)}")
            _print_body(ins.body, indent + 1, out, funcs, globals_)
            out.append(f"{pad}catch")
            _print_body(ins.else_body, indent + 1, out, funcs, globals_)
            out.append(f"{pad}end")
        else:
            out.append(pad + format_instr(ins, funcs, globals_))


def print_module(m: ModuleAst) -> str:
    """Render ``m`` in canonical text form (no trailing newline)."""
    if not m.globals and m.memory is None and not m.funcs:
        return "(module)"
    funcs = [f.name for f in m.funcs]
    globals_ = [g.name for g in m.globals]
    out = ["(module"]
    for g in m.globals:
        ty = "(mut i32)" if g.mutable else "i32"
        out.append(f"  (global ${g.name} {ty} (i32.const {g.init}))")
    if m.memory is not None:
        out.append(f"  (memory {m.memory})")
    for f in m.funcs:
        head = f"  (func ${f.name}"
        if f.exported:
            head += " (export)"
        head += "".join(f" (param {t.value})" for t in f.type.params)
        head += _result_clause(f.type.results)
        head += "".join(f" (local {t.value})" for t in f.locals)
        out.append(head)
        _print_body(f.body, 2, out, funcs, globals_)
        out.append("  )")
    out.append(")")
    return "\n".join(out)
