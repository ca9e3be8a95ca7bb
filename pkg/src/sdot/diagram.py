"""String diagrams of open OTs: AST, text syntax, typing and normal forms.

Concrete syntax::

    diagram := seqterm
    seqterm := parterm { ";" parterm }
    parterm := atom { "#" atom }
    atom    := IDENT | "id" "(" INT ")" | "(" seqterm ")"

``;`` is sequential composition, ``#`` is parallel composition and binds
tighter.  Both operators associate to the left.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping, Optional, Union

import numpy as np

from .tropical import cost_matrix

__all__ = [
    "Leaf",
    "Id",
    "Seq",
    "Par",
    "Diagram",
    "Factor",
    "AlignedDiagram",
    "DiagramType",
    "DiagramSyntaxError",
    "DiagramTypeError",
    "UnknownLeafError",
    "LeafShapeError",
    "NotLeftRootedError",
    "ValidationReport",
    "ValidationError",
    "parse_diagram",
    "pretty",
    "type_check",
    "to_sequential_normal_form",
    "validate_aligned",
    "leaves",
    "seq_all",
    "seq_chain",
    "par_all",
]


class DiagramSyntaxError(ValueError):
    def __init__(self, msg: str, line: int, col: int):
        super().__init__(f"line {line}, column {col}: {msg}")
        self.line = line
        self.col = col


class DiagramTypeError(TypeError):
    """A sequential composition whose inner boundary sizes disagree."""


class UnknownLeafError(KeyError):
    pass


class LeafShapeError(ValueError):
    pass


class ValidationError(ValueError):
    """An aligned diagram failed :func:`validate_aligned`."""


class NotLeftRootedError(ValueError):
    """The leftmost factor of a diagram is not a single open OT."""


@dataclass(frozen=True)
class Leaf:
    """An open OT ``name : m -> n`` with its cost matrix."""

    name: str
    m: int
    n: int
    cost: np.ndarray = field(compare=False, repr=False, hash=False)

    def __post_init__(self):
        if self.cost.shape != (self.m, self.n):
            raise LeafShapeError(
                f"leaf {self.name!r} declared {self.m}->{self.n} "
                f"but its matrix is {self.cost.shape[0]}x{self.cost.shape[1]}"
            )

    @classmethod
    def of(cls, name: str, cost) -> "Leaf":
        C = cost_matrix(cost)
        return cls(name, C.shape[0], C.shape[1], C)


@dataclass(frozen=True)
class Id:
    n: int


@dataclass(frozen=True)
class Seq:
    left: "Diagram"
    right: "Diagram"


@dataclass(frozen=True)
class Par:
    top: "Diagram"
    bottom: "Diagram"


Diagram = Union[Leaf, Id, Seq, Par]
Factor = Union[Leaf, Id]


@dataclass(frozen=True)
class DiagramType:
    m: int
    n: int

    def __str__(self) -> str:
        return f"{self.m} -> {self.n}"


@dataclass(frozen=True)
class AlignedDiagram:
    """``head ; (layer_1) ; ... ; (layer_H)`` where each layer is a parallel
    composition of leaves and identities."""

    head: Leaf
    layers: tuple[tuple[Factor, ...], ...] = ()

    def to_diagram(self) -> Diagram:
        d: Diagram = self.head
        for layer in self.layers:
            d = Seq(d, par_all(layer))
        return d

    @property
    def depth(self) -> int:
        return len(self.layers)

    def leaves(self) -> list[Leaf]:
        out = [self.head]
        for layer in self.layers:
            out.extend(f for f in layer if isinstance(f, Leaf))
        return out

    @property
    def source_size(self) -> int:
        return self.head.m

    @property
    def target_size(self) -> int:
        if not self.layers:
            return self.head.n
        return sum(_right(f) for f in self.layers[-1])


def seq_all(parts) -> Diagram:
    parts = list(parts)
    if not parts:
        raise ValueError("empty sequential composition")
    d = parts[0]
    for p in parts[1:]:
        d = Seq(d, p)
    return d


def par_all(parts) -> Diagram:
    parts = list(parts)
    if not parts:
        raise ValueError("empty parallel composition")
    d = parts[0]
    for p in parts[1:]:
        d = Par(d, p)
    return d


def seq_chain(d: Diagram) -> list[Diagram]:
    """Flatten nested ``;`` into its left-to-right operands (iteratively, so
    long chains do not hit the recursion limit)."""
    out = []
    stack = [d]
    while stack:
        x = stack.pop()
        if isinstance(x, Seq):
            stack.append(x.right)
            stack.append(x.left)
        else:
            out.append(x)
    return out


def leaves(d: Diagram) -> Iterator[Leaf]:
    """Leaves in left-to-right, top-to-bottom order (identities skipped)."""
    stack = [d]
    while stack:
        x = stack.pop()
        if isinstance(x, Leaf):
            yield x
        elif isinstance(x, Seq):
            stack.append(x.right)
            stack.append(x.left)
        elif isinstance(x, Par):
            stack.append(x.bottom)
            stack.append(x.top)


# -- lexer / parser ---------------------------------------------------------

_TOKEN = re.compile(
    r"(?P<ws>\s+)|(?P<comment>//[^\n]*)|(?P<int>\d+)|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[;#()])"
)


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        mt = _TOKEN.match(text, pos)
        if mt is None:
            raise DiagramSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = mt.lastgroup
        s = mt.group()
        if kind not in ("ws", "comment"):
            toks.append(_Tok(kind if kind != "op" else s, s, line, pos - line_start + 1))
        for i, ch in enumerate(s):
            if ch == "\n":
                line += 1
                line_start = pos + i + 1
        pos = mt.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, text: str, resolve: Callable[[str], Leaf]):
        self.toks = _tokenize(text)
        self.i = 0
        self.resolve = resolve

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def expect(self, kind: str) -> _Tok:
        t = self.peek()
        if t.kind != kind:
            want = {"eof": "end of input", "int": "an integer", "ident": "a name"}.get(kind, repr(kind))
            got = "end of input" if t.kind == "eof" else repr(t.text)
            raise DiagramSyntaxError(f"expected {want}, found {got}", t.line, t.col)
        self.i += 1
        return t

    def diagram(self) -> Diagram:
        d = self.seqterm()
        self.expect("eof")
        return d

    def seqterm(self) -> Diagram:
        d = self.parterm()
        while self.peek().kind == ";":
            self.i += 1
            d = Seq(d, self.parterm())
        return d

    def parterm(self) -> Diagram:
        d = self.atom()
        while self.peek().kind == "#":
            self.i += 1
            d = Par(d, self.atom())
        return d

    def atom(self) -> Diagram:
        t = self.peek()
        if t.kind == "(":
            self.i += 1
            d = self.seqterm()
            self.expect(")")
            return d
        if t.kind == "ident" and t.text == "id" and self.toks[self.i + 1].kind == "(":
            self.i += 2
            size = self.expect("int")
            self.expect(")")
            n = int(size.text)
            if n < 1:
                raise DiagramSyntaxError("identity size must be >= 1", size.line, size.col)
            return Id(n)
        if t.kind == "ident":
            self.i += 1
            return self.resolve(t.text)
        got = "end of input" if t.kind == "eof" else repr(t.text)
        raise DiagramSyntaxError(f"expected a name, 'id(n)' or '(', found {got}", t.line, t.col)


def parse_diagram(
    text: str,
    matrix_loader: Union[Callable[[str], np.ndarray], Mapping[str, np.ndarray]],
    declared: Optional[Mapping[str, tuple[int, int]]] = None,
) -> Diagram:
    """Parse diagram text, binding each name to ``matrix_loader(name)``.

    ``matrix_loader`` may be a mapping or a callable raising ``KeyError`` for
    unknown names.  Each distinct name is loaded once, so repeated names share
    a matrix.  ``declared`` optionally pins the expected shape of each name.
    """
    cache: dict[str, Leaf] = {}

    def resolve(name: str) -> Leaf:
        if name in cache:
            return cache[name]
        try:
            raw = matrix_loader[name] if isinstance(matrix_loader, Mapping) else matrix_loader(name)
        except (KeyError, FileNotFoundError):
            raise UnknownLeafError(f"no cost matrix for leaf {name!r}") from None
        leaf = Leaf.of(name, raw)
        if declared is not None and name in declared:
            want = tuple(declared[name])
            if want != (leaf.m, leaf.n):
                raise LeafShapeError(
                    f"leaf {name!r} declared {want[0]}->{want[1]} but matrix is {leaf.m}x{leaf.n}"
                )
        cache[name] = leaf
        return leaf

    return _Parser(text, resolve).diagram()


def pretty(d: Diagram) -> str:
    """Render a diagram so that ``parse_diagram(pretty(d))`` rebuilds ``d``."""
    if isinstance(d, Leaf):
        return d.name
    if isinstance(d, Id):
        return f"id({d.n})"
    if isinstance(d, Seq):
        spine = []
        while isinstance(d, Seq):
            r = pretty(d.right)
            # a right-nested ';' needs parentheses to survive the left fold
            spine.append(f"({r})" if isinstance(d.right, Seq) else r)
            d = d.left
        spine.append(pretty(d))
        return " ; ".join(reversed(spine))
    if isinstance(d, Par):
        t, b = pretty(d.top), pretty(d.bottom)
        if isinstance(d.top, Seq):
            t = f"({t})"
        if isinstance(d.bottom, (Seq, Par)):
            b = f"({b})"
        return f"{t} # {b}"
    if isinstance(d, AlignedDiagram):
        return pretty(d.to_diagram())
    raise TypeError(f"not a diagram: {d!r}")


# -- typing -----------------------------------------------------------------

def type_check(d: Diagram) -> DiagramType:
    """Infer ``m -> n`` for ``d``; raise :class:`DiagramTypeError` on a bad ``;``."""
    if isinstance(d, Leaf):
        return DiagramType(d.m, d.n)
    if isinstance(d, Id):
        if d.n < 1:
            raise DiagramTypeError(f"id({d.n}) is a deadend")
        return DiagramType(d.n, d.n)
    if isinstance(d, Seq):
        chain = seq_chain(d)
        acc = type_check(chain[0])
        for prev, x in zip(chain, chain[1:]):
            xt = type_check(x)
            if acc.n != xt.m:
                raise DiagramTypeError(
                    f"cannot compose `{pretty(prev)}` : {acc} with `{pretty(x)}` : {xt} "
                    f"({acc.n} != {xt.m})"
                )
            acc = DiagramType(acc.m, xt.n)
        return acc
    if isinstance(d, Par):
        tt, bt = type_check(d.top), type_check(d.bottom)
        return DiagramType(tt.m + bt.m, tt.n + bt.n)
    if isinstance(d, AlignedDiagram):
        return type_check(d.to_diagram())
    raise TypeError(f"not a diagram: {d!r}")


def _left(f: Factor) -> int:
    return f.m if isinstance(f, Leaf) else f.n


def _right(f: Factor) -> int:
    return f.n


def _layers(d: Diagram) -> list[list[Factor]]:
    if isinstance(d, (Leaf, Id)):
        return [[d]]
    if isinstance(d, Seq):
        out = []
        for x in seq_chain(d):
            out.extend(_layers(x))
        return out
    if isinstance(d, Par):
        top, bot = _layers(d.top), _layers(d.bottom)
        # pad the shallower side on the right with identities on its output wires
        if len(top) < len(bot):
            top = top + [[Id(type_check(d.top).n)] for _ in range(len(bot) - len(top))]
        elif len(bot) < len(top):
            bot = bot + [[Id(type_check(d.bottom).n)] for _ in range(len(top) - len(bot))]
        return [t + b for t, b in zip(top, bot)]
    raise TypeError(f"not a diagram: {d!r}")


def to_sequential_normal_form(d: Diagram) -> AlignedDiagram:
    """Rewrite a left-rooted diagram ``A ; D`` into ``A ; layer_1 ; ... ; layer_H``.

    Nested parallel blocks are merged layer by layer via the interchange law;
    the composed cost matrix is unchanged.
    """
    if isinstance(d, AlignedDiagram):
        return d
    type_check(d)
    layers = _layers(d)
    first = layers[0]
    if len(first) != 1 or not isinstance(first[0], Leaf):
        raise NotLeftRootedError(
            "the leftmost factor must be a single open OT, got "
            + " # ".join(pretty(f) for f in first)
        )
    return AlignedDiagram(first[0], tuple(tuple(layer) for layer in layers[1:]))


# -- validation -------------------------------------------------------------

@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def raise_if_failed(self) -> None:
        if self.violations:
            raise ValidationError("; ".join(self.violations))


def validate_aligned(d: AlignedDiagram) -> ValidationReport:
    """Check boundary consistency and the no-deadend condition.

    Violations are returned, not raised.
    """
    rep = ValidationReport()
    head = d.head
    if not isinstance(head, Leaf):
        rep.violations.append(f"leftmost factor must be a single open OT, got {head!r}")
        return rep

    def check_factor(f, where):
        if isinstance(f, Leaf):
            if f.m < 1 or f.n < 1:
                rep.violations.append(f"deadend: {where} {f.name} is {f.m}->{f.n}")
            if np.isinf(f.cost).any():
                rep.warnings.append(f"{where} {f.name} has infinite entries")
        elif isinstance(f, Id):
            if f.n < 1:
                rep.violations.append(f"deadend: {where} id({f.n})")
        else:
            rep.violations.append(f"{where}: factor must be a leaf or identity, got {type(f).__name__}")

    check_factor(head, "head")
    prev = head.n
    for k, layer in enumerate(d.layers, 1):
        if not layer:
            rep.violations.append(f"layer {k} is empty")
            continue
        for f in layer:
            check_factor(f, f"layer {k}")
        factors = [f for f in layer if isinstance(f, (Leaf, Id))]
        left = sum(_left(f) for f in factors)
        if left != prev:
            rep.violations.append(f"{prev} != {left} at layer {k}")
        prev = sum(_right(f) for f in factors)
    return rep
