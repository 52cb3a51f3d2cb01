"""Arithmetic equations over the LBP alphabet.

Equations are trees over the leaves {g_p, g_c, a, numeric constants} and the
binary operators {+, -, *, /}.  This module parses and renders the textual
equation format (the contract with corpus files and the generator component),
evaluates trees with protected arithmetic, enumerates operator mutations, and
random-samples fresh equations from the grammar.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field
from typing import Iterator, Union

import numpy as np

OPERATORS = ("+", "-", "*", "/")

# Division is protected below this denominator magnitude (gray value 0 is legal).
DIV_EPS = 1e-6

# Intermediate results are clamped to this magnitude so that chained products
# of [0,255] inputs can never overflow float64 to inf.
VALUE_CLAMP = 1e150


class EquationSyntaxError(ValueError):
    """Malformed equation text; ``offset`` is the byte position of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class ExhaustionError(RuntimeError):
    """The grammar sampler ran out of draws before finding enough distinct equations."""


@dataclass(frozen=True)
class NeighborGray:
    """Leaf: gray value of the current circle neighbor (token ``g_p``)."""


@dataclass(frozen=True)
class CenterGray:
    """Leaf: gray value of the center pixel (token ``g_c``)."""


@dataclass(frozen=True)
class OffsetTerm:
    """Leaf: the scalar offset added inside the thresholding argument (token ``a``)."""


@dataclass(frozen=True)
class Constant:
    """Leaf: a numeric literal."""

    value: float


@dataclass(frozen=True)
class BinOp:
    """Internal node: one of the four binary arithmetic operators."""

    op: str
    left: "Expression"
    right: "Expression"

    def __post_init__(self):
        if self.op not in OPERATORS:
            raise ValueError(f"unknown operator {self.op!r}")


Expression = Union[NeighborGray, CenterGray, OffsetTerm, Constant, BinOp]

G_P = NeighborGray()
G_C = CenterGray()
A = OffsetTerm()


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_TOKEN_KINDS = ("g_p", "g_c", "a", "number", "op", "lparen", "rparen")


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    """Split equation text into (kind, lexeme, offset) triples.

    The Unicode minus sign is accepted as an alias for ``-`` so corpora written
    with typographic dashes still parse.
    """
    tokens = []
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if text.startswith("g_p", i):
            tokens.append(("g_p", "g_p", i))
            i += 3
        elif text.startswith("g_c", i):
            tokens.append(("g_c", "g_c", i))
            i += 3
        elif ch == "a" and not text.startswith("a_", i):
            tokens.append(("a", "a", i))
            i += 1
        elif ch in "+*/-" or ch == "−":
            tokens.append(("op", "-" if ch == "−" else ch, i))
            i += 1
        elif ch == "(":
            tokens.append(("lparen", ch, i))
            i += 1
        elif ch == ")":
            tokens.append(("rparen", ch, i))
            i += 1
        elif ch.isdigit() or ch == ".":
            j = i
            seen_dot = False
            while j < n and (text[j].isdigit() or (text[j] == "." and not seen_dot)):
                seen_dot = seen_dot or text[j] == "."
                j += 1
            lexeme = text[i:j]
            if lexeme == ".":
                raise EquationSyntaxError("unknown token '.'", i)
            tokens.append(("number", lexeme, i))
            i = j
        else:
            raise EquationSyntaxError(f"unknown token {ch!r}", i)
    return tokens


class _Parser:
    """Recursive-descent parser; ``*``/``/`` bind tighter than ``+``/``-``, all left-associative."""

    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    def _peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def _eof_offset(self) -> int:
        return len(self.text)

    def parse(self) -> Expression:
        if not self.tokens:
            raise EquationSyntaxError("empty equation", 0)
        expr = self._sum()
        tok = self._peek()
        if tok is not None:
            kind = "unbalanced parenthesis" if tok[0] == "rparen" else f"unexpected token {tok[1]!r}"
            raise EquationSyntaxError(kind, tok[2])
        return expr

    def _sum(self) -> Expression:
        node = self._term()
        while (tok := self._peek()) and tok[0] == "op" and tok[1] in "+-":
            self.pos += 1
            node = BinOp(tok[1], node, self._term())
        return node

    def _term(self) -> Expression:
        node = self._factor()
        while (tok := self._peek()) and tok[0] == "op" and tok[1] in "*/":
            self.pos += 1
            node = BinOp(tok[1], node, self._factor())
        return node

    def _factor(self) -> Expression:
        tok = self._peek()
        if tok is None:
            raise EquationSyntaxError("dangling operator", self._eof_offset())
        kind, lexeme, offset = tok
        if kind == "g_p":
            self.pos += 1
            return G_P
        if kind == "g_c":
            self.pos += 1
            return G_C
        if kind == "a":
            self.pos += 1
            return A
        if kind == "number":
            self.pos += 1
            return Constant(float(lexeme))
        if kind == "lparen":
            self.pos += 1
            inner = self._sum()
            closing = self._peek()
            if closing is None or closing[0] != "rparen":
                raise EquationSyntaxError(
                    "unbalanced parenthesis",
                    closing[2] if closing else self._eof_offset(),
                )
            self.pos += 1
            return inner
        if kind == "op":
            raise EquationSyntaxError(f"dangling operator {lexeme!r}", offset)
        raise EquationSyntaxError(f"unexpected token {lexeme!r}", offset)


def parse(text: str) -> Expression:
    """Parse equation text into an expression tree.

    Raises EquationSyntaxError (with byte offset) on malformed input.
    """
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def _format_constant(value: float) -> str:
    if value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def render(e: Expression) -> str:
    """Canonical, fully parenthesized text; ``parse(render(e))`` equals ``e`` structurally."""
    if isinstance(e, NeighborGray):
        return "g_p"
    if isinstance(e, CenterGray):
        return "g_c"
    if isinstance(e, OffsetTerm):
        return "a"
    if isinstance(e, Constant):
        return _format_constant(e.value)
    if isinstance(e, BinOp):
        return f"({render(e.left)} {e.op} {render(e.right)})"
    raise TypeError(f"not an expression node: {e!r}")


def canonical(text_or_expr) -> str:
    """Canonical string used for dedup: the render of the (parsed) expression."""
    e = parse(text_or_expr) if isinstance(text_or_expr, str) else text_or_expr
    return render(e)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def evaluate(e: Expression, g_p, g_c, a):
    """Evaluate a tree on gray values and offset ``a``.

    Accepts scalars or numpy arrays (broadcast elementwise).  Division is
    protected (denominators below DIV_EPS in magnitude yield 0) and every
    intermediate is clamped to +/-VALUE_CLAMP, so the result is always finite.
    """
    result = _eval(e, g_p, g_c, a)
    if np.ndim(result) == 0:
        return float(result)
    return result


def _eval(e: Expression, g_p, g_c, a):
    if isinstance(e, NeighborGray):
        return np.asarray(g_p, dtype=np.float64)
    if isinstance(e, CenterGray):
        return np.asarray(g_c, dtype=np.float64)
    if isinstance(e, OffsetTerm):
        return np.asarray(a, dtype=np.float64)
    if isinstance(e, Constant):
        return np.float64(e.value)
    left = _eval(e.left, g_p, g_c, a)
    right = _eval(e.right, g_p, g_c, a)
    if e.op == "+":
        out = left + right
    elif e.op == "-":
        out = left - right
    elif e.op == "*":
        out = left * right
    else:
        safe = np.where(np.abs(right) < DIV_EPS, 1.0, right)
        out = np.where(np.abs(right) < DIV_EPS, 0.0, left / safe)
    return np.clip(out, -VALUE_CLAMP, VALUE_CLAMP)


# ---------------------------------------------------------------------------
# Operator mutations
# ---------------------------------------------------------------------------

def operator_count(e: Expression) -> int:
    """Number of internal (operator) nodes, eta."""
    if isinstance(e, BinOp):
        return 1 + operator_count(e.left) + operator_count(e.right)
    return 0


def operator_assignment(e: Expression) -> tuple[int, ...]:
    """Current operator codes in pre-order (node, left subtree, right subtree)."""
    codes: list[int] = []

    def visit(node: Expression):
        if isinstance(node, BinOp):
            codes.append(OPERATORS.index(node.op))
            visit(node.left)
            visit(node.right)

    visit(e)
    return tuple(codes)


def apply_assignment(e: Expression, codes) -> Expression:
    """Rebuild the tree with operators replaced per ``codes`` (same pre-order slots)."""
    codes = tuple(codes)
    if len(codes) != operator_count(e):
        raise ValueError(
            f"assignment length {len(codes)} != operator count {operator_count(e)}"
        )
    if any(c not in (0, 1, 2, 3) for c in codes):
        raise ValueError("operator codes must be in {0,1,2,3}")
    it = iter(codes)

    def rebuild(node: Expression) -> Expression:
        if isinstance(node, BinOp):
            op = OPERATORS[next(it)]
            left = rebuild(node.left)
            right = rebuild(node.right)
            return BinOp(op, left, right)
        return node

    return rebuild(e)


def enumerate_mutations(e: Expression, cap: int = 1024) -> list[Expression]:
    """All operator reassignments of ``e``, capped at ``cap``.

    Returns min(4**eta, cap) expressions.  The identity assignment is emitted
    first (so the unmutated equation always survives a truncating cap), then
    the remaining assignments follow in lexicographic code order.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    eta = operator_count(e)
    identity = operator_assignment(e)
    out = [e]
    if eta == 0:
        return out
    for codes in itertools.product(range(4), repeat=eta):
        if len(out) >= cap:
            break
        if codes == identity:
            continue
        out.append(apply_assignment(e, codes))
    return out


# ---------------------------------------------------------------------------
# Grammar sampling (stand-in for the generator component)
# ---------------------------------------------------------------------------

_LEAF_KINDS = ("g_p", "g_c", "a", "const")


@dataclass(frozen=True)
class GrammarSamplerConfig:
    """Random-equation sampler settings.

    ``leaf_weights``/``op_weights`` form one selection pool: at any node with
    depth budget left, the node kind is drawn from the combined weights; at
    the depth bound only leaves remain.  The root is always an operator (a
    bare leaf cannot contain both g_p and g_c).
    """

    max_depth: int = 5
    leaf_weights: dict = field(
        default_factory=lambda: {"g_p": 1.0, "g_c": 1.0, "a": 1.0, "const": 0.0}
    )
    op_weights: dict = field(default_factory=lambda: {op: 1.0 for op in OPERATORS})
    seed: int = 0
    count: int = 1

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.count < 0:
            raise ValueError("count must be >= 0")
        for name, weights, keys in (
            ("leaf_weights", self.leaf_weights, _LEAF_KINDS),
            ("op_weights", self.op_weights, OPERATORS),
        ):
            unknown = set(weights) - set(keys)
            if unknown:
                raise ValueError(f"{name} has unknown keys {sorted(unknown)}")
            if any(w < 0 for w in weights.values()):
                raise ValueError(f"{name} must be nonnegative")
            if not any(weights.get(k, 0.0) > 0 for k in keys):
                raise ValueError(f"{name} must not be all zero")


def _sample_leaf(rng: random.Random, cfg: GrammarSamplerConfig) -> Expression:
    kinds = [k for k in _LEAF_KINDS if cfg.leaf_weights.get(k, 0.0) > 0]
    weights = [cfg.leaf_weights[k] for k in kinds]
    kind = rng.choices(kinds, weights=weights)[0]
    if kind == "g_p":
        return G_P
    if kind == "g_c":
        return G_C
    if kind == "a":
        return A
    return Constant(float(rng.randint(0, 9)))


def _sample_tree(rng: random.Random, cfg: GrammarSamplerConfig, depth_left: int,
                 force_op: bool = False) -> Expression:
    ops = [op for op in OPERATORS if cfg.op_weights.get(op, 0.0) > 0]
    if depth_left >= 1 and (force_op or ops):
        leaf_kinds = [k for k in _LEAF_KINDS if cfg.leaf_weights.get(k, 0.0) > 0]
        pool = ops + ([] if force_op else leaf_kinds)
        weights = [cfg.op_weights[op] for op in ops]
        if not force_op:
            weights += [cfg.leaf_weights[k] for k in leaf_kinds]
        choice = rng.choices(pool, weights=weights)[0]
        if choice in OPERATORS:
            left = _sample_tree(rng, cfg, depth_left - 1)
            right = _sample_tree(rng, cfg, depth_left - 1)
            return BinOp(choice, left, right)
        # fall through: a leaf kind was drawn
    return _sample_leaf(rng, cfg)


def _has_required_leaves(e: Expression) -> bool:
    found = {"g_p": False, "g_c": False}

    def visit(node):
        if isinstance(node, NeighborGray):
            found["g_p"] = True
        elif isinstance(node, CenterGray):
            found["g_c"] = True
        elif isinstance(node, BinOp):
            visit(node.left)
            visit(node.right)

    visit(e)
    return found["g_p"] and found["g_c"]


def grammar_sample(cfg: GrammarSamplerConfig, exclude=()) -> list[Expression]:
    """Draw ``cfg.count`` distinct valid equations, skipping ``exclude`` canonicals.

    Every result contains at least one g_p and one g_c leaf.  Raises
    ExhaustionError after 10 * count * 100 draws without success.
    """
    rng = random.Random(cfg.seed)
    exclude = set(exclude)
    seen: set[str] = set()
    out: list[Expression] = []
    max_draws = 10 * max(cfg.count, 1) * 100
    draws = 0
    while len(out) < cfg.count:
        if draws >= max_draws:
            raise ExhaustionError(
                f"found only {len(out)} of {cfg.count} distinct equations "
                f"in {max_draws} draws"
            )
        draws += 1
        e = _sample_tree(rng, cfg, cfg.max_depth, force_op=True)
        if not _has_required_leaves(e):
            continue
        key = render(e)
        if key in exclude or key in seen:
            continue
        seen.add(key)
        out.append(e)
    return out
