"""Parser for ``.idp`` program files.

Top-level structure is line and indentation based (two spaces, no tabs):

    program <name>
    capabilities:
      <capability>
    step <name>: compute <expr>
    step <name>: ask { machine "<id>" input { <key>: <expr> ... } }

Continuation lines of a step are indented.  Inside ``ask`` blocks, braces
delimit the block and newlines or commas separate entries.  See
docs/GRAMMAR.md for the full EBNF.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from idc.core import INT_MAX, INT_MIN
from idc.lang.ast import (
    BUILTIN_ARITY,
    KEYWORDS,
    RESERVED_NAMES,
    Apply,
    AskStep,
    BinOp,
    BuiltinCall,
    ComputeStep,
    Expr,
    FieldAccess,
    If,
    Lambda,
    Let,
    Literal,
    ProgramAst,
    Var,
    expr_depth,
)

INDENT = 2
MAX_NESTING = 64
MAX_AST_DEPTH = 200

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_CAPABILITY = re.compile(r"[A-Za-z0-9_.\-/@*]+")
_PUNCT = ("=>", "++", "==", "!=", "<=", ">=", "(", ")", "[", "]", "{", "}", ",", ":", ".",
          "+", "-", "*", "/", "<", ">", "=")
_DIGITS = frozenset("0123456789")
_ESCAPES = {'"': '"', "\\": "\\", "n": "\n", "t": "\t"}


class ParseError(Exception):
    def __init__(self, kind: str, message: str, line: int, column: int) -> None:
        super().__init__(f"{line}:{column}: {kind}: {message}")
        self.kind = kind
        self.message = message
        self.line = line
        self.column = column


@dataclass(frozen=True)
class Token:
    kind: str  # int, str, name, punct, nl, eof
    text: str
    line: int
    col: int
    value: object = None


def _tokenize(lines: list[tuple[int, str]]) -> list[Token]:
    toks: list[Token] = []
    depth = 0
    for line_no, text in lines:
        i, n = 0, len(text)
        while i < n:
            ch = text[i]
            col = i + 1
            if ch in " \t\r":
                i += 1
                continue
            if ch in _DIGITS:
                j = i
                while j < n and text[j] in _DIGITS:
                    j += 1
                toks.append(Token("int", text[i:j], line_no, col, int(text[i:j])))
                i = j
                continue
            if ch.isalpha() or ch == "_":
                m = _IDENT.match(text, i)
                if m is None or not m.group().isascii():
                    raise ParseError("syntax", f"unexpected character {ch!r}", line_no, col)
                toks.append(Token("name", m.group(), line_no, col))
                i = m.end()
                continue
            if ch == '"':
                j = i + 1
                out = []
                while True:
                    if j >= n:
                        raise ParseError("syntax", "unterminated string", line_no, col)
                    c = text[j]
                    if c == '"':
                        break
                    if c == "\\":
                        if j + 1 >= n or text[j + 1] not in _ESCAPES:
                            raise ParseError("syntax", "unsupported escape in string", line_no, j + 1)
                        out.append(_ESCAPES[text[j + 1]])
                        j += 2
                        continue
                    out.append(c)
                    j += 1
                toks.append(Token("str", text[i : j + 1], line_no, col, "".join(out)))
                i = j + 1
                continue
            for p in _PUNCT:
                if text.startswith(p, i):
                    toks.append(Token("punct", p, line_no, col))
                    if p in "([":
                        depth += 1
                    elif p in ")]":
                        depth = max(0, depth - 1)
                    i += len(p)
                    break
            else:
                raise ParseError("syntax", f"unexpected character {ch!r}", line_no, col)
        if depth == 0:
            toks.append(Token("nl", "\n", line_no, len(text) + 1))
    last_line = lines[-1][0] if lines else 1
    toks.append(Token("eof", "", last_line, (len(lines[-1][1]) + 1) if lines else 1))
    return toks


class _StepParser:
    def __init__(self, tokens: list[Token], scope: set[str]) -> None:
        self.toks = tokens
        self.pos = 0
        self.nesting = 0
        self.scope = scope

    # -- token helpers --
    @property
    def tok(self) -> Token:
        return self.toks[self.pos]

    def error(self, message: str, tok: Token | None = None, kind: str = "syntax") -> ParseError:
        tok = tok or self.tok
        return ParseError(kind, message, tok.line, tok.col)

    def at(self, text: str) -> bool:
        t = self.tok
        return t.kind in ("punct", "name") and t.text == text

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.pos += 1
            return True
        return False

    def expect(self, text: str) -> Token:
        if not self.at(text):
            found = self.tok.text.strip() or self.tok.kind
            raise self.error(f"expected {text!r}, found {found!r}")
        t = self.tok
        self.pos += 1
        return t

    def skip_nl(self) -> None:
        while self.tok.kind == "nl":
            self.pos += 1

    def skip_sep(self) -> None:
        while self.tok.kind == "nl" or self.at(","):
            self.pos += 1

    def name(self, what: str, allow_keywords: bool = False) -> Token:
        t = self.tok
        if t.kind != "name" or (not allow_keywords and t.text in KEYWORDS):
            raise self.error(f"expected {what}")
        self.pos += 1
        return t

    # -- steps --
    def step(self) -> tuple[Token, object]:
        self.expect("step")
        name_tok = self.name("step name")
        if name_tok.text in RESERVED_NAMES:
            raise self.error(f"{name_tok.text!r} is reserved", name_tok)
        self.expect(":")
        if self.accept("compute"):
            # newlines carry no meaning inside a compute expression
            self.toks = self.toks[: self.pos] + [t for t in self.toks[self.pos :] if t.kind != "nl"]
            expr = self.checked_expr()
            if self.tok.kind != "eof":
                raise self.error(f"unexpected {self.tok.text!r} after expression")
            return name_tok, ComputeStep(name_tok.text, expr)
        if self.accept("ask"):
            step = self.ask_block(name_tok.text)
            self.skip_nl()
            if self.tok.kind != "eof":
                raise self.error(f"unexpected {self.tok.text!r} after ask block")
            return name_tok, step
        raise self.error("expected 'compute' or 'ask'")

    def ask_block(self, name: str) -> AskStep:
        self.expect("{")
        self.skip_sep()
        self.expect("machine")
        t = self.tok
        if t.kind != "str" or not t.value:
            raise self.error("expected machine id string")
        machine = t.value
        self.pos += 1
        self.skip_sep()
        self.expect("input")
        self.expect("{")
        self.skip_sep()
        inputs: list[tuple[str, Expr]] = []
        seen: set[str] = set()
        while not self.at("}"):
            key_tok = self.name("input field name", allow_keywords=True)
            if key_tok.text in seen:
                raise self.error(f"duplicate input field {key_tok.text!r}", key_tok, "duplicate-name")
            seen.add(key_tok.text)
            self.expect(":")
            inputs.append((key_tok.text, self.checked_expr()))
            if not (self.tok.kind == "nl" or self.at(",") or self.at("}")):
                raise self.error("expected newline, ',' or '}' after input field")
            self.skip_sep()
        self.expect("}")
        self.skip_sep()
        on_deny = "halt"
        if self.accept("on_deny"):
            if self.accept("continue"):
                on_deny = "continue"
            elif self.accept("halt"):
                on_deny = "halt"
            else:
                raise self.error("expected 'continue' or 'halt'")
            self.skip_sep()
        self.expect("}")
        return AskStep(name, machine, tuple(inputs), on_deny)

    # -- expressions --
    def checked_expr(self) -> Expr:
        start = self.tok
        e = self.expr(self.scope)
        if expr_depth(e) > MAX_AST_DEPTH:
            raise self.error(f"expression deeper than {MAX_AST_DEPTH} nodes", start)
        return e

    def expr(self, scope: set[str]) -> Expr:
        self.nesting += 1
        if self.nesting > MAX_NESTING:
            raise self.error("expression nested too deeply")
        try:
            if self.accept("let"):
                name = self.binder()
                self.expect("=")
                value = self.expr(scope)
                self.expect("in")
                body = self.expr(scope | {name})
                return Let(name, value, body)
            if self.accept("if"):
                cond = self.expr(scope)
                self.expect("then")
                then = self.expr(scope)
                self.expect("else")
                return If(cond, then, self.expr(scope))
            if self.accept("fn"):
                param = self.binder()
                self.expect("=>")
                return Lambda(param, self.expr(scope | {param}))
            return self.or_expr(scope)
        finally:
            self.nesting -= 1

    def binder(self) -> str:
        t = self.name("identifier")
        if t.text in RESERVED_NAMES:
            raise self.error(f"{t.text!r} is reserved", t)
        return t.text

    def or_expr(self, scope: set[str]) -> Expr:
        left = self.and_expr(scope)
        while self.accept("or"):
            left = BinOp("or", left, self.and_expr(scope))
        return left

    def and_expr(self, scope: set[str]) -> Expr:
        left = self.cmp_expr(scope)
        while self.accept("and"):
            left = BinOp("and", left, self.cmp_expr(scope))
        return left

    def cmp_expr(self, scope: set[str]) -> Expr:
        left = self.add_expr(scope)
        for op in ("==", "!=", "<=", ">=", "<", ">"):
            if self.accept(op):
                return BinOp(op, left, self.add_expr(scope))
        return left

    def add_expr(self, scope: set[str]) -> Expr:
        left = self.mul_expr(scope)
        while True:
            for op in ("++", "+", "-"):
                if self.accept(op):
                    left = BinOp(op, left, self.mul_expr(scope))
                    break
            else:
                return left

    def mul_expr(self, scope: set[str]) -> Expr:
        left = self.postfix(scope)
        while True:
            for op in ("*", "/"):
                if self.accept(op):
                    left = BinOp(op, left, self.postfix(scope))
                    break
            else:
                return left

    def postfix(self, scope: set[str]) -> Expr:
        e = self.primary(scope)
        while True:
            if self.accept("."):
                e = FieldAccess(e, self.name("field name", allow_keywords=True).text)
            elif self.at("("):
                self.pos += 1
                self.nesting += 1
                arg = self.expr(scope)
                self.nesting -= 1
                self.expect(")")
                e = Apply(e, arg)
            else:
                return e

    def primary(self, scope: set[str]) -> Expr:
        t = self.tok
        if t.kind == "int":
            self.pos += 1
            return self._int(t, t.value)
        if self.at("-") and self.toks[self.pos + 1].kind == "int":
            self.pos += 1
            n = self.tok
            self.pos += 1
            return self._int(t, -n.value)
        if t.kind == "str":
            self.pos += 1
            return Literal(t.value)
        if self.accept("true"):
            return Literal(True)
        if self.accept("false"):
            return Literal(False)
        if self.accept("null"):
            return Literal(None)
        if self.accept("("):
            e = self.expr(scope)
            self.expect(")")
            return e
        if self.accept("["):
            items = self.comma_list("]", scope)
            if all(isinstance(i, Literal) for i in items):
                return Literal([i.value for i in items])
            return BuiltinCall("list", tuple(items))
        if self.accept("{"):
            return self.map_literal(scope)
        if t.kind == "name":
            if t.text in BUILTIN_ARITY:
                self.pos += 1
                self.expect("(")
                args = self.comma_list(")", scope)
                arity = BUILTIN_ARITY[t.text]
                if arity is not None and len(args) != arity:
                    raise self.error(f"{t.text} takes {arity} argument(s), got {len(args)}", t)
                if t.text == "map" and len(args) % 2:
                    raise self.error("map takes key/value pairs", t)
                return BuiltinCall(t.text, tuple(args))
            if t.text in KEYWORDS:
                raise self.error(f"unexpected keyword {t.text!r}")
            self.pos += 1
            if t.text not in scope:
                raise self.error(f"unbound identifier {t.text!r}", t, "unbound-identifier")
            return Var(t.text)
        found = t.text.strip() or t.kind
        raise self.error(f"expected expression, found {found!r}")

    def _int(self, t: Token, n: int) -> Literal:
        if not INT_MIN <= n <= INT_MAX:
            raise self.error("integer literal out of 64-bit range", t)
        return Literal(n)

    def comma_list(self, close: str, scope: set[str]) -> list[Expr]:
        items: list[Expr] = []
        self.nesting += 1
        if self.nesting > MAX_NESTING:
            raise self.error("expression nested too deeply")
        while not self.accept(close):
            if items:
                self.expect(",")
            items.append(self.expr(scope))
        self.nesting -= 1
        return items

    def map_literal(self, scope: set[str]) -> Expr:
        pairs: list[tuple[str, Expr]] = []
        self.nesting += 1
        if self.nesting > MAX_NESTING:
            raise self.error("expression nested too deeply")
        while not self.accept("}"):
            if pairs:
                self.expect(",")
            t = self.tok
            if t.kind != "str":
                raise self.error("map literal keys must be strings")
            self.pos += 1
            if any(k == t.value for k, _ in pairs):
                raise self.error(f"duplicate map key {t.value!r}", t, "duplicate-name")
            self.expect(":")
            pairs.append((t.value, self.expr(scope)))
        self.nesting -= 1
        if all(isinstance(v, Literal) for _, v in pairs):
            return Literal({k: v.value for k, v in pairs})
        args: list[Expr] = []
        for k, v in pairs:
            args += [Literal(k), v]
        return BuiltinCall("map", tuple(args))


def _indent_of(line: str, line_no: int) -> int:
    stripped = line.lstrip(" \t")
    lead = line[: len(line) - len(stripped)]
    if "\t" in lead:
        raise ParseError("indentation", "tabs are not allowed in indentation", line_no, lead.index("\t") + 1)
    if len(lead) % INDENT:
        raise ParseError("indentation", f"indentation must be a multiple of {INDENT} spaces", line_no, 1)
    return len(lead)


def parse(source: str) -> ProgramAst:
    """Parse program text; raises ParseError on any malformed input."""
    raw = source.split("\n")
    lines: list[tuple[int, int, str]] = []  # (line_no, indent, text)
    for n, text in enumerate(raw, start=1):
        text = text.rstrip("\r")
        body = text.strip(" \t\r")
        if not body or body.startswith("#"):
            continue
        lines.append((n, _indent_of(text, n), text))

    if not lines:
        raise ParseError("syntax", "expected program header", 1, 1)
    n, indent, text = lines[0]
    words = text.split()
    if indent or len(words) != 2 or words[0] != "program":
        raise ParseError("syntax", "expected program header", n, 1)
    if not _IDENT.fullmatch(words[1]):
        raise ParseError("syntax", "program name must be an identifier", n, text.index(words[1]) + 1)
    name = words[1]

    i = 1
    capabilities: list[str] = []
    if i < len(lines) and lines[i][1] == 0 and lines[i][2].strip() == "capabilities:":
        i += 1
        while i < len(lines) and lines[i][1] > 0:
            n, indent, text = lines[i]
            if indent != INDENT:
                raise ParseError("indentation", f"capabilities are indented by exactly {INDENT} spaces", n, 1)
            cap = text.strip()
            if not _CAPABILITY.fullmatch(cap):
                raise ParseError("syntax", f"invalid capability {cap!r}", n, indent + 1)
            capabilities.append(cap)
            i += 1

    steps = []
    scope = {"context"}
    names: set[str] = set()
    while i < len(lines):
        n, indent, text = lines[i]
        if indent:
            raise ParseError("indentation", "unexpected indented line", n, 1)
        if not text.startswith("step") or not (len(text) == 4 or not (text[4].isalnum() or text[4] == "_")):
            raise ParseError("syntax", "expected 'step'", n, 1)
        item = [(n, text)]
        i += 1
        # a closing brace at column 0 still belongs to the step above it
        while i < len(lines) and (lines[i][1] > 0 or lines[i][2].startswith("}")):
            item.append((lines[i][0], lines[i][2]))
            i += 1
        parser = _StepParser(_tokenize(item), set(scope))
        name_tok, step = parser.step()
        if step.name in names:
            raise ParseError("duplicate-name", f"duplicate step name {step.name!r}", name_tok.line, name_tok.col)
        names.add(step.name)
        scope.add(step.name)
        steps.append(step)
    return ProgramAst(name, tuple(capabilities), tuple(steps))
