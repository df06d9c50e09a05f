"""Sandboxed priority-function expression language for generated rules.

Grammar (whitespace-insensitive)::

    expression := term (('+' | '-') term)*
    term       := factor (('*' | '/') factor)*
    factor     := atom ['^' atom] | name '(' expression [',' expression] ')'
    atom       := number | feature | '(' expression ')'

Function names: ``neg sqrt log log1p exp abs`` (elementwise, one argument),
``sum mean max min`` (reduce a vector to a scalar with one argument;
``min``/``max`` with two arguments are elementwise instead).

Per-project feature vectors: ``cost``, ``app_count``, ``app_rate``,
``score_sum``, ``score_mean``.  Scalars: ``budget``, ``n``, ``m``.
Expressions must produce a per-project vector.  Any non-finite value during
evaluation (division by zero, log of a non-positive value, overflow)
invalidates the candidate instead of being clamped.
"""

from __future__ import annotations

import json
import math
import re
import subprocess
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Union

import numpy as np

from .core import BallotKind, Instance, Profile
from .rules import greedy_by_scores

MAX_DEPTH = 32
MAX_NODES = 512

UNARY_OPS = ("neg", "sqrt", "log", "log1p", "exp", "abs")
REDUCE_OPS = ("sum", "mean", "max", "min")
VECTOR_FEATURES = ("cost", "app_count", "app_rate", "score_sum", "score_mean")
SCALAR_FEATURES = ("budget", "n", "m")


class DslParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class DslEvalError(ValueError):
    pass


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Feature:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str
    arg: "Node"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Reduce:
    op: str
    arg: "Node"


Node = Union[Num, Feature, Unary, Binary, Reduce]


@dataclass(frozen=True)
class RuleAst:
    """Validated expression tree; the root always yields a per-project vector."""

    root: Node
    node_count: int
    depth: int
    source: str


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<number>\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[-+*/^(),]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            bad = len(text) - len(stripped)
            raise DslParseError(f"unexpected character {text[bad]!r}", bad)
        kind = match.lastgroup
        tokens.append((kind, match.group(kind), match.start(kind)))
        pos = match.end()
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    def _peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def _next(self):
        token = self._peek()
        if token is None:
            raise DslParseError("unexpected end of expression", len(self.text))
        self.pos += 1
        return token

    def _expect_op(self, symbol: str):
        token = self._next()
        if token[0] != "op" or token[1] != symbol:
            raise DslParseError(f"expected {symbol!r}", token[2])

    def parse(self) -> Node:
        node = self.expression()
        trailing = self._peek()
        if trailing is not None:
            raise DslParseError(f"unexpected trailing input {trailing[1]!r}", trailing[2])
        return node

    def expression(self) -> Node:
        node = self.term()
        while (token := self._peek()) and token[0] == "op" and token[1] in "+-":
            self._next()
            node = Binary(token[1], node, self.term())
        return node

    def term(self) -> Node:
        node = self.factor()
        while (token := self._peek()) and token[0] == "op" and token[1] in "*/":
            self._next()
            node = Binary(token[1], node, self.factor())
        return node

    def factor(self) -> Node:
        token = self._peek()
        if token is None:
            raise DslParseError("unexpected end of expression", len(self.text))
        if token[0] == "name" and self._is_call():
            return self.call()
        node = self.atom()
        nxt = self._peek()
        if nxt and nxt[0] == "op" and nxt[1] == "^":
            self._next()
            node = Binary("^", node, self.atom())
        return node

    def _is_call(self) -> bool:
        nxt = self.tokens[self.pos + 1] if self.pos + 1 < len(self.tokens) else None
        return nxt is not None and nxt[0] == "op" and nxt[1] == "("

    def call(self) -> Node:
        kind, name, offset = self._next()
        self._expect_op("(")
        first = self.expression()
        second = None
        token = self._peek()
        if token and token[0] == "op" and token[1] == ",":
            self._next()
            second = self.expression()
        self._expect_op(")")
        if second is not None:
            if name not in ("min", "max"):
                raise DslParseError(f"{name!r} does not take two arguments", offset)
            return Binary(name, first, second)
        if name in UNARY_OPS:
            return Unary(name, first)
        if name in REDUCE_OPS:
            return Reduce(name, first)
        raise DslParseError(f"unknown function {name!r}", offset)

    def atom(self) -> Node:
        kind, value, offset = self._next()
        if kind == "number":
            return Num(float(value))
        if kind == "name":
            if value in VECTOR_FEATURES or value in SCALAR_FEATURES:
                return Feature(value)
            raise DslParseError(f"unknown identifier {value!r}", offset)
        if kind == "op" and value == "(":
            node = self.expression()
            self._expect_op(")")
            return node
        raise DslParseError(f"unexpected token {value!r}", offset)


def _measure(node: Node) -> tuple[int, int]:
    """(node count, depth) of a tree."""
    if isinstance(node, (Num, Feature)):
        return 1, 1
    if isinstance(node, (Unary, Reduce)):
        count, depth = _measure(node.arg)
        return count + 1, depth + 1
    lc, ld = _measure(node.left)
    rc, rd = _measure(node.right)
    return lc + rc + 1, max(ld, rd) + 1


def _is_vector(node: Node) -> bool:
    if isinstance(node, Num):
        return False
    if isinstance(node, Feature):
        return node.name in VECTOR_FEATURES
    if isinstance(node, Unary):
        return _is_vector(node.arg)
    if isinstance(node, Reduce):
        if not _is_vector(node.arg):
            raise DslParseError(f"{node.op!r} reduces a vector, got a scalar argument", 0)
        return False
    left = _is_vector(node.left)
    right = _is_vector(node.right)
    return left or right


def parse_rule(text: str) -> RuleAst:
    """Parse and statically validate one expression."""
    root = _Parser(text).parse()
    count, depth = _measure(root)
    if depth > MAX_DEPTH or count > MAX_NODES:
        raise DslParseError(
            f"expression too large ({count} nodes, depth {depth}; "
            f"limits {MAX_NODES} nodes, depth {MAX_DEPTH})",
            0,
        )
    if not _is_vector(root):
        raise DslParseError("expression yields a scalar, not per-project scores", 0)
    return RuleAst(root=root, node_count=count, depth=depth, source=text)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureSet:
    """Per-project vectors and instance scalars derived from (instance, profile)."""

    vectors: dict
    scalars: dict
    num_projects: int


def build_features(instance: Instance, profile: Profile) -> FeatureSet:
    counts = profile.supporter_counts().astype(np.float64)
    cost = np.array([p.cost for p in instance.projects], dtype=np.float64)
    n = profile.num_ballots
    if profile.kind is BallotKind.APPROVAL:
        score_sum = counts.copy()
    else:
        score_sum = np.array(
            [float(sum(ballot[p] for ballot in profile.cardinal)) for p in range(instance.num_projects)],
            dtype=np.float64,
        )
    vectors = {
        "cost": cost,
        "app_count": counts,
        "app_rate": counts / n,
        "score_sum": score_sum,
        "score_mean": score_sum / n,
    }
    scalars = {"budget": float(instance.budget), "n": float(n), "m": float(instance.num_projects)}
    return FeatureSet(vectors=vectors, scalars=scalars, num_projects=instance.num_projects)


_UNARY_FN = {
    "neg": np.negative,
    "sqrt": np.sqrt,
    "log": np.log,
    "log1p": np.log1p,
    "exp": np.exp,
    "abs": np.abs,
}

_REDUCE_FN = {"sum": np.sum, "mean": np.mean, "max": np.max, "min": np.min}

_BINARY_FN = {
    "+": np.add,
    "-": np.subtract,
    "*": np.multiply,
    "/": np.divide,
    "^": np.power,
    "min": np.minimum,
    "max": np.maximum,
}


def _checked(value, op: str):
    if not np.all(np.isfinite(value)):
        raise DslEvalError(f"non-finite value produced by {op!r}")
    return value


def _eval_node(node: Node, features: FeatureSet):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Feature):
        if node.name in features.vectors:
            return features.vectors[node.name]
        return features.scalars[node.name]
    with np.errstate(all="ignore"):
        if isinstance(node, Unary):
            return _checked(_UNARY_FN[node.op](_eval_node(node.arg, features)), node.op)
        if isinstance(node, Reduce):
            return _checked(float(_REDUCE_FN[node.op](_eval_node(node.arg, features))), node.op)
        return _checked(
            _BINARY_FN[node.op](_eval_node(node.left, features), _eval_node(node.right, features)),
            node.op,
        )


def evaluate_rule(ast: RuleAst, instance: Instance, profile: Profile,
                  features: FeatureSet | None = None) -> np.ndarray:
    """Strict elementwise evaluation to a float vector of length m."""
    if features is None:
        features = build_features(instance, profile)
    result = _eval_node(ast.root, features)
    return np.asarray(result, dtype=np.float64)


def as_rule_fn(ast: RuleAst) -> Callable:
    """Wrap an AST as a PB rule: scores feed the exhaustive greedy allocator."""

    def rule(instance: Instance, profile: Profile, objective=None):
        return greedy_by_scores(instance, evaluate_rule(ast, instance, profile))

    return rule


def load_rule_file(path) -> Callable:
    """Load a one-expression UTF-8 DSL file as a named rule."""
    with open(path, encoding="utf-8") as fh:
        return as_rule_fn(parse_rule(fh.read().strip()))


# ---------------------------------------------------------------------------
# Canonical form (population dedup)
# ---------------------------------------------------------------------------

_COMMUTATIVE = {"+", "*", "min", "max"}
_PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 3}


def _literal(value: float) -> Num | None:
    return Num(float(value)) if math.isfinite(value) else None


def _fold(node: Node) -> Node:
    if isinstance(node, (Num, Feature)):
        return node
    if isinstance(node, Unary):
        arg = _fold(node.arg)
        if isinstance(arg, Num):
            with np.errstate(all="ignore"):
                folded = _literal(float(_UNARY_FN[node.op](arg.value)))
            if folded is not None:
                return folded
        return Unary(node.op, arg)
    if isinstance(node, Reduce):
        return Reduce(node.op, _fold(node.arg))
    left, right = _fold(node.left), _fold(node.right)
    if isinstance(left, Num) and isinstance(right, Num):
        with np.errstate(all="ignore"):
            folded = _literal(float(_BINARY_FN[node.op](left.value, right.value)))
        if folded is not None:
            return folded
    return Binary(node.op, left, right)


def _num_text(value: float) -> str:
    if value == int(value) and abs(value) < 1e16:
        return str(int(value))
    return repr(value)


def _render(node: Node) -> tuple[str, int]:
    """(text, precedence); atoms get the highest precedence."""
    if isinstance(node, Num):
        return _num_text(node.value), 4
    if isinstance(node, Feature):
        return node.name, 4
    if isinstance(node, (Unary, Reduce)):
        return f"{node.op}({_render(node.arg)[0]})", 4
    if node.op in ("min", "max"):
        parts = sorted([_render(node.left)[0], _render(node.right)[0]])
        return f"{node.op}({parts[0]},{parts[1]})", 4
    prec = _PRECEDENCE[node.op]
    lt, lp = _render(node.left)
    rt, rp = _render(node.right)
    if node.op == "^":
        if lp < 4:
            lt = f"({lt})"
        if rp < 4:
            rt = f"({rt})"
    else:
        if lp < prec:
            lt = f"({lt})"
        if rp < prec or (rp == prec and node.op in ("-", "/")):
            rt = f"({rt})"
    if node.op in _COMMUTATIVE:
        lt, rt = sorted([lt, rt])
    return f"{lt}{node.op}{rt}", prec


def canonical_form(ast: RuleAst) -> str:
    """Normalized rendering: literal subtrees folded, commutative operands sorted.

    Equal canonical strings imply pointwise-equal evaluation; only
    bit-exact rewrites (IEEE-commutative reorderings and literal folding)
    are applied.
    """
    return _render(_fold(ast.root))[0]


# ---------------------------------------------------------------------------
# Candidate extraction from chat responses
# ---------------------------------------------------------------------------


class Validity(Enum):
    VALID = "valid"
    PARSE_ERROR = "parse_error"
    EVAL_ERROR = "eval_error"
    TIMEOUT = "timeout"


@dataclass
class CandidateRule:
    """One unit of evolution: description, DSL source, parsed form, and fitness."""

    description: str
    source: str
    ast: RuleAst | None = None
    canonical: str | None = None
    fitness: float | None = None
    validity: Validity = Validity.VALID


class ExtractionError(ValueError):
    pass


_BRACE_RE = re.compile(r"\{(.*?)\}", re.S)
_FENCE_RE = re.compile(r"```[^\n]*\n(.*?)```", re.S)


def extract_braced_span(response: str) -> str:
    """First brace-delimited span of a response (descriptions, strategy texts)."""
    brace = _BRACE_RE.search(response)
    if brace is None or not brace.group(1).strip():
        raise ExtractionError("response has no brace-delimited description")
    return brace.group(1).strip()


def extract_candidate(response: str) -> tuple[str, str]:
    """(description, rule text) from a chat response.

    The description is the first brace-delimited span; the rule body is the
    first fenced code block, or everything after the description when no
    fence is present.
    """
    description = extract_braced_span(response)
    fence = _FENCE_RE.search(response)
    if fence is not None:
        body = fence.group(1).strip()
    else:
        body = response[_BRACE_RE.search(response).end():].strip()
    if not body:
        raise ExtractionError("response has no rule body")
    return description, body


# ---------------------------------------------------------------------------
# External-process escape hatch (research use; excluded from evolution)
# ---------------------------------------------------------------------------


@dataclass
class ExternalScoreRule:
    """Adapter that asks a child process for scores: JSON in, one line of m numbers out."""

    command: list[str]
    timeout: float = 60.0

    def __call__(self, instance: Instance, profile: Profile, objective=None):
        payload = {
            "costs": [p.cost for p in instance.projects],
            "budget": instance.budget,
            "matrix": profile.support_matrix().tolist(),
        }
        proc = subprocess.run(
            self.command,
            input=json.dumps(payload),
            capture_output=True,
            text=True,
            timeout=self.timeout,
            check=True,
        )
        scores = [float(tok) for tok in proc.stdout.strip().split()]
        if len(scores) != instance.num_projects:
            raise InvalidExternalScores(
                f"expected {instance.num_projects} scores, got {len(scores)}"
            )
        return greedy_by_scores(instance, scores)


class InvalidExternalScores(ValueError):
    pass
