"""Expression language for problem definitions in configuration files.

Grammar (EBNF; whitespace, including newlines, separates tokens):

    expr    = term { ("+" | "-") term } ;
    term    = unary { ("*" | "/") unary } ;
    unary   = "-" unary | power ;
    power   = atom [ "^" unary ] ;               (* right associative *)
    atom    = number | variable | func "(" expr ")" | "(" expr ")" ;
    func    = "sin" | "cos" | "exp" | "log" | "abs" | "sqrt" | "gamma" ;
    variable= "t" | "s" | "pi" | "x" digits [ "_0" | "_T" ] | "u" digits ;
    number  = digits [ "." digits ] [ ("e" | "E") [ "+" | "-" ] digits ]
            | "." digits [ ("e" | "E") [ "+" | "-" ] digits ] ;

``^`` binds tighter than unary minus, so ``-x1^2`` is ``-(x1^2)``.  ``pi`` is
a predefined constant.  ``x1_0`` and ``x1_T`` denote the initial and the
terminal state in terminal-cost expressions.

Evaluation is vectorized: variables may be bound to arrays of equal shape.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import SvocError
from .special import gamma_array

FUNCTIONS = ("sin", "cos", "exp", "log", "abs", "sqrt", "gamma")
_VAR_RE = re.compile(r"^(t|s|pi|x[1-9][0-9]*(_0|_T)?|u[1-9][0-9]*)$")
_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<num>(?:[0-9]+(?:\.[0-9]*)?|\.[0-9]+)(?:[eE][+-]?[0-9]+)?)
  | (?P<id>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*/^(),])
""", re.VERBOSE)

# binding powers
_BP = {"+": 10, "-": 10, "*": 20, "/": 20, "^": 40}
_UNARY_BP = 30


class ParseError(SvocError, ValueError):
    def __init__(self, line: int, col: int, expected: str, source: str = ""):
        self.line, self.col, self.expected, self.source = line, col, expected, source
        super().__init__(f"line {line}, col {col}: expected {expected}")

    def context(self) -> str:
        """The offending source line with a caret under the error column."""
        lines = self.source.split("\n")
        if not 1 <= self.line <= len(lines):
            return ""
        return lines[self.line - 1] + "\n" + " " * (self.col - 1) + "^"


class UnboundVariable(SvocError, KeyError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(name)

    def __str__(self):
        return f"unbound variable {self.name!r}"


class DomainError(SvocError, ArithmeticError):
    pass


class UnsupportedDerivative(SvocError, ValueError):
    pass


# ---------------------------------------------------------------------------
# AST

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: object


@dataclass(frozen=True)
class Bin:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    fn: str
    arg: object


# ---------------------------------------------------------------------------
# tokenizer and parser

@dataclass(frozen=True)
class _Tok:
    kind: str      # "num", "id", "op", "end"
    text: str
    line: int
    col: int


def _tokenize(src: str) -> list:
    toks = []
    pos, line, col = 0, 1, 1
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None:
            raise ParseError(line, col, "a number, name, operator or parenthesis", src)
        text = m.group()
        kind = m.lastgroup
        if kind != "ws":
            toks.append(_Tok(kind, text, line, col))
        for ch in text:
            if ch == "\n":
                line, col = line + 1, 1
            else:
                col += 1
        pos = m.end()
    toks.append(_Tok("end", "", line, col))
    return toks


class _Parser:
    def __init__(self, src: str):
        self.src = src
        self.toks = _tokenize(src)
        self.i = 0

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def next(self) -> _Tok:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def fail(self, tok: _Tok, expected: str):
        raise ParseError(tok.line, tok.col, expected, self.src)

    def expect(self, text: str):
        tok = self.next()
        if tok.text != text or tok.kind != "op":
            self.fail(tok, f"'{text}'")

    def parse(self):
        node = self.expr(0)
        tok = self.peek()
        if tok.kind != "end":
            self.fail(tok, "an operator or end of input")
        return node

    def expr(self, rbp: int):
        left = self.prefix()
        while True:
            tok = self.peek()
            if tok.kind != "op" or tok.text not in _BP or _BP[tok.text] <= rbp:
                return left
            self.next()
            op = tok.text
            # the exponent is a unary expression, so ^ chains to the right
            right = self.expr(_UNARY_BP - 1 if op == "^" else _BP[op])
            left = Bin(op, left, right)

    def prefix(self):
        tok = self.next()
        if tok.kind == "num":
            return Num(float(tok.text))
        if tok.kind == "op" and tok.text == "-":
            return Neg(self.expr(_UNARY_BP))
        if tok.kind == "op" and tok.text == "(":
            node = self.expr(0)
            self.expect(")")
            return node
        if tok.kind == "id":
            if tok.text in FUNCTIONS:
                nxt = self.peek()
                if nxt.text != "(":
                    self.fail(nxt, f"'(' after {tok.text}")
                self.next()
                arg = self.expr(0)
                self.expect(")")
                return Call(tok.text, arg)
            if _VAR_RE.match(tok.text):
                return Var(tok.text)
            self.fail(tok, "a variable (t, s, pi, x<i>, u<i>, x<i>_0, x<i>_T) or a function")
        self.fail(tok, "operand")


def parse(source: str) -> "Expr":
    """Parse ``source`` into an expression; raises ParseError with line/col."""
    if not isinstance(source, str):
        raise TypeError("expression source must be a string")
    return Expr(_Parser(source).parse())


# ---------------------------------------------------------------------------
# printing

def _prec(node) -> int:
    if isinstance(node, Bin):
        return _BP[node.op]
    if isinstance(node, Neg):
        return _UNARY_BP
    return 100


def _fmt_num(v: float) -> str:
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def to_string(node) -> str:
    if isinstance(node, Expr):
        node = node.root
    if isinstance(node, Num):
        s = _fmt_num(node.value)
        return f"({s})" if node.value < 0 else s
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Call):
        return f"{node.fn}({to_string(node.arg)})"
    if isinstance(node, Neg):
        inner = to_string(node.arg)
        if isinstance(node.arg, (Neg, Bin)) and _prec(node.arg) <= _UNARY_BP:
            inner = f"({inner})"
        return "-" + inner
    p = _BP[node.op]
    left, right = to_string(node.left), to_string(node.right)
    if node.op == "^":
        # left operand of ^ must be atomic; unary minus on the right is fine
        if _prec(node.left) <= p:
            left = f"({left})"
        if isinstance(node.right, Bin) and _prec(node.right) < p:
            right = f"({right})"
    else:
        if _prec(node.left) < p:
            left = f"({left})"
        if _prec(node.right) <= p:
            right = f"({right})"
    return f"{left}{node.op}{right}" if node.op == "^" else f"{left} {node.op} {right}"


# ---------------------------------------------------------------------------
# evaluation

def _lookup(name: str, env: dict):
    if name == "pi":
        return np.pi
    if name in env:
        return env[name]
    m = re.match(r"^x([0-9]+)(_0|_T)?$", name)
    if m:
        key = {None: "x", "_0": "x0", "_T": "xT"}[m.group(2)]
        if key in env:
            arr = np.asarray(env[key], float)
            i = int(m.group(1)) - 1
            if arr.shape[-1] <= i:
                raise UnboundVariable(name)
            return arr[..., i]
    m = re.match(r"^u([0-9]+)$", name)
    if m and "u" in env:
        arr = np.asarray(env["u"], float)
        i = int(m.group(1)) - 1
        if arr.shape[-1] <= i:
            raise UnboundVariable(name)
        return arr[..., i]
    raise UnboundVariable(name)


def _eval(node, env):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return _lookup(node.name, env)
    if isinstance(node, Neg):
        return -_eval(node.arg, env)
    if isinstance(node, Call):
        a = np.asarray(_eval(node.arg, env), float)
        fn = node.fn
        if fn == "log":
            if np.any(a <= 0):
                raise DomainError("log of a non-positive number")
            return np.log(a)
        if fn == "sqrt":
            if np.any(a < 0):
                raise DomainError("sqrt of a negative number")
            return np.sqrt(a)
        if fn == "gamma":
            if np.any((a <= 0) & (a == np.round(a))):
                raise DomainError("gamma at a non-positive integer")
            return gamma_array(a)
        return {"sin": np.sin, "cos": np.cos, "exp": np.exp, "abs": np.abs}[fn](a)
    a = np.asarray(_eval(node.left, env), float)
    b = np.asarray(_eval(node.right, env), float)
    op = node.op
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        if np.any(b == 0):
            raise DomainError("division by zero")
        return a / b
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        out = np.power(a, b)
    if np.any(np.isnan(out) & ~np.isnan(a) & ~np.isnan(b)):
        raise DomainError("non-integer power of a negative number")
    if np.any((a == 0) & (b < 0)):
        raise DomainError("zero raised to a negative power")
    return out


def evaluate(expr, env: dict):
    """Evaluate with IEEE doubles; scalars stay scalars, arrays broadcast."""
    node = expr.root if isinstance(expr, Expr) else expr
    out = _eval(node, env)
    return float(out) if np.ndim(out) == 0 else out


eval_expr = evaluate


# ---------------------------------------------------------------------------
# differentiation with light simplification

def _num(v: float):
    return Neg(Num(-v)) if v < 0 else Num(float(v))


def _const(node):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Neg) and isinstance(node.arg, Num):
        return -node.arg.value
    return None


def _add(a, b):
    ca, cb = _const(a), _const(b)
    if ca is not None and cb is not None:
        return _num(ca + cb)
    if ca == 0:
        return b
    if cb == 0:
        return a
    return Bin("+", a, b)


def _sub(a, b):
    ca, cb = _const(a), _const(b)
    if ca is not None and cb is not None:
        return _num(ca - cb)
    if cb == 0:
        return a
    if ca == 0:
        return _neg(b)
    return Bin("-", a, b)


def _mul(a, b):
    ca, cb = _const(a), _const(b)
    if ca is not None and cb is not None:
        return _num(ca * cb)
    if ca == 0 or cb == 0:
        return Num(0.0)
    if ca == 1:
        return b
    if cb == 1:
        return a
    if ca == -1:
        return _neg(b)
    if cb == -1:
        return _neg(a)
    return Bin("*", a, b)


def _div(a, b):
    ca, cb = _const(a), _const(b)
    if ca == 0:
        return Num(0.0)
    if cb == 1:
        return a
    if ca is not None and cb is not None and cb != 0:
        return _num(ca / cb)
    return Bin("/", a, b)


def _pow(a, b):
    cb = _const(b)
    if cb == 1:
        return a
    if cb == 0:
        return Num(1.0)
    return Bin("^", a, b)


def _neg(a):
    ca = _const(a)
    if ca is not None:
        return _num(-ca)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def _variables(node, acc):
    if isinstance(node, Var):
        if node.name != "pi":
            acc.add(node.name)
    elif isinstance(node, (Neg, Call)):
        _variables(node.arg, acc)
    elif isinstance(node, Bin):
        _variables(node.left, acc)
        _variables(node.right, acc)
    return acc


def _d(node, var):
    if isinstance(node, Num):
        return Num(0.0)
    if isinstance(node, Var):
        return Num(1.0) if node.name == var else Num(0.0)
    if isinstance(node, Neg):
        return _neg(_d(node.arg, var))
    if isinstance(node, Call):
        g = node.arg
        dg = _d(g, var)
        if _const(dg) == 0:
            if node.fn == "gamma" and var in _variables(g, set()):
                raise UnsupportedDerivative("derivative of gamma is not supported")
            return Num(0.0)
        fn = node.fn
        if fn == "sin":
            outer = Call("cos", g)
        elif fn == "cos":
            outer = _neg(Call("sin", g))
        elif fn == "exp":
            outer = Call("exp", g)
        elif fn == "log":
            return _div(dg, g)
        elif fn == "sqrt":
            return _div(dg, _mul(Num(2.0), Call("sqrt", g)))
        elif fn == "abs":
            outer = _div(g, Call("abs", g))
        else:
            raise UnsupportedDerivative("derivative of gamma is not supported")
        return _mul(outer, dg)
    a, b = node.left, node.right
    da, db = _d(a, var), _d(b, var)
    op = node.op
    if op == "+":
        return _add(da, db)
    if op == "-":
        return _sub(da, db)
    if op == "*":
        return _add(_mul(da, b), _mul(a, db))
    if op == "/":
        if _const(db) == 0:
            return _div(da, b)
        return _div(_sub(_mul(da, b), _mul(a, db)), _pow(b, Num(2.0)))
    # power
    if _const(db) == 0:
        cb = _const(b)
        expo = _num(cb - 1.0) if cb is not None else _sub(b, Num(1.0))
        return _mul(_mul(b, _pow(a, expo)), da)
    if _const(da) == 0:
        return _mul(_mul(node, Call("log", a)), db)
    return _mul(node, _add(_mul(db, Call("log", a)), _div(_mul(b, da), a)))


def differentiate(expr, var: str) -> "Expr":
    """Symbolic derivative with respect to ``var``."""
    if not _VAR_RE.match(var) or var == "pi":
        raise ValueError(f"cannot differentiate with respect to {var!r}")
    node = expr.root if isinstance(expr, Expr) else expr
    return Expr(_d(node, var))


@dataclass(frozen=True)
class Expr:
    root: object

    def __str__(self) -> str:
        return to_string(self.root)

    @property
    def variables(self) -> frozenset:
        return frozenset(_variables(self.root, set()))

    @property
    def is_constant(self) -> bool:
        return not self.variables

    def evaluate(self, env: dict):
        return evaluate(self, env)

    def diff(self, var: str) -> "Expr":
        return differentiate(self, var)
