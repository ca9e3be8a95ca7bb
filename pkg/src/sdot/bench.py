"""Seeded generators for the four benchmark families and their named presets.

Families:

* ``BRooms``  head ``n0 -> W``, ``H`` layers of parallel square rooms whose
  sizes sum to ``W`` (the room pattern cycles with the layer index), tail
  ``W -> n0``.
* ``URooms``  head ``n_in -> sum(B_in)``, then ``H`` layers of non-square
  B-rooms interleaved with ``H - 1`` layers of C-rooms, tail
  ``sum(B_out) -> d_out``.
* ``BChains`` ``H`` square leaves ``w -> w`` in sequence.
* ``UChains`` ``narrow -> wide`` and ``wide -> narrow`` leaves alternating,
  ``H`` of the first kind (``2H - 1`` leaves).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path
from typing import Union

import numpy as np

from .diagram import AlignedDiagram, Leaf, parse_diagram, pretty, to_sequential_normal_form, validate_aligned
from .tropical import read_matrix, read_vector, write_matrix, write_vector

__all__ = [
    "BenchmarkSpec",
    "Bundle",
    "FAMILIES",
    "PRESETS",
    "SpecError",
    "preset",
    "scale",
    "generate",
    "n_oot",
    "family_spec",
    "write_bundle",
    "read_bundle",
    "uniform_marginal",
]

FAMILIES = ("BRooms", "URooms", "BChains", "UChains")
COST_RANGE = (0.0, 1e6)


class SpecError(ValueError):
    pass


Shape = tuple[int, int]


@dataclass(frozen=True)
class BenchmarkSpec:
    """Shape parameters of one instance; unused fields stay at their defaults.

    ``rooms`` (BRooms) is a tuple of layer patterns, each a tuple of
    ``(size, count)`` groups; layer ``i`` (1-based) uses pattern
    ``i % len(rooms)``.  ``b_rooms``/``c_rooms`` (URooms) list ``(m, n)`` leaf
    shapes of one layer.
    """

    family: str
    name: str = ""
    H: int = 1
    width: int = 0
    narrow: int = 0
    rooms: tuple[tuple[tuple[int, int], ...], ...] = ()
    b_rooms: tuple[Shape, ...] = ()
    c_rooms: tuple[Shape, ...] = ()
    n_in: int = 0
    d_out: int = 0
    seed: int = 0
    integer_costs: bool = False
    cost_range: tuple[float, float] = COST_RANGE

    def __post_init__(self):
        _check(self)

    def with_seed(self, seed: int) -> "BenchmarkSpec":
        return replace(self, seed=seed)


def _pattern_width(p) -> int:
    return sum(s * c for s, c in p)


def _check(s: BenchmarkSpec) -> None:
    if s.family not in FAMILIES:
        raise SpecError(f"unknown family {s.family!r}")
    if s.H < 1:
        raise SpecError("H must be at least 1")
    lo, hi = s.cost_range
    if not (0 <= lo <= hi < math.inf):
        raise SpecError(f"bad cost range {s.cost_range}")
    if s.family == "BRooms":
        if s.width < 1 or not s.rooms:
            raise SpecError("BRooms needs a boundary width and at least one room pattern")
        widths = {_pattern_width(p) for p in s.rooms}
        if any(sz < 1 or c < 1 for p in s.rooms for sz, c in p):
            raise SpecError("room sizes and counts must be positive")
        if len(widths) != 1:
            raise SpecError(f"room patterns have different total widths {sorted(widths)}")
    elif s.family == "URooms":
        if s.n_in < 1 or s.d_out < 1 or not s.b_rooms or not s.c_rooms:
            raise SpecError("URooms needs n_in, d_out and both room layers")
        if any(m < 1 or n < 1 for m, n in s.b_rooms + s.c_rooms):
            raise SpecError("room shapes must be positive")
        b_in = sum(m for m, _ in s.b_rooms)
        b_out = sum(n for _, n in s.b_rooms)
        c_in = sum(m for m, _ in s.c_rooms)
        c_out = sum(n for _, n in s.c_rooms)
        if c_in != b_out or c_out != b_in:
            raise SpecError(f"room layers do not fit: B {b_in}->{b_out}, C {c_in}->{c_out}")
    elif s.family == "BChains":
        if s.width < 1:
            raise SpecError("BChains needs a positive width")
    else:
        if s.width < 1 or s.narrow < 1:
            raise SpecError("UChains needs positive wide and narrow sizes")


PRESETS: dict[str, BenchmarkSpec] = {
    "BRoom1": BenchmarkSpec("BRooms", "BRoom1", H=99, width=100,
                            rooms=(((30, 1), (70, 1)), ((40, 1), (60, 1)))),
    "BRoom2": BenchmarkSpec("BRooms", "BRoom2", H=1, width=100, rooms=(((100, 208),),)),
    "URoom1": BenchmarkSpec("URooms", "URoom1", H=100, n_in=10, d_out=10,
                            b_rooms=((270, 3), (230, 7)), c_rooms=((4, 240), (6, 260))),
    "URoom2": BenchmarkSpec("URooms", "URoom2", H=150, n_in=10, d_out=10,
                            b_rooms=((270, 3), (230, 7)), c_rooms=((4, 240), (6, 260))),
    "BChain1": BenchmarkSpec("BChains", "BChain1", H=210, width=100),
    "BChain2": BenchmarkSpec("BChains", "BChain2", H=400, width=100),
    "UChain1": BenchmarkSpec("UChains", "UChain1", H=200, width=200, narrow=10),
    "UChain2": BenchmarkSpec("UChains", "UChain2", H=400, width=200, narrow=10),
}


def preset(name: str, seed: int = 0) -> BenchmarkSpec:
    try:
        return PRESETS[name].with_seed(seed)
    except KeyError:
        raise SpecError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None


def _ceil(x: int, f: Fraction) -> int:
    return max(1, math.ceil(x * f))


def scale(spec: BenchmarkSpec, factor) -> BenchmarkSpec:
    """Multiply every size, count and layer number by ``factor`` and round up."""
    f = Fraction(str(factor)) if isinstance(factor, float) else Fraction(factor)
    if not (0 < f <= 1):
        raise SpecError(f"scale factor must lie in (0, 1], got {factor}")
    if f == 1:
        return spec
    name = f"{spec.name}@{float(f):g}" if spec.name else ""
    try:
        return replace(
            spec,
            name=name,
            H=_ceil(spec.H, f),
            width=_ceil(spec.width, f) if spec.width else 0,
            narrow=_ceil(spec.narrow, f) if spec.narrow else 0,
            rooms=tuple(tuple((_ceil(s, f), _ceil(c, f)) for s, c in p) for p in spec.rooms),
            b_rooms=tuple((_ceil(m, f), _ceil(n, f)) for m, n in spec.b_rooms),
            c_rooms=tuple((_ceil(m, f), _ceil(n, f)) for m, n in spec.c_rooms),
            n_in=_ceil(spec.n_in, f) if spec.n_in else 0,
            d_out=_ceil(spec.d_out, f) if spec.d_out else 0,
        )
    except SpecError as e:
        raise SpecError(f"scaling {spec.name or spec.family} by {factor} breaks the family: {e}") from None


def n_oot(spec: BenchmarkSpec) -> int:
    """Number of leaves (open OTs) in the generated diagram."""
    if spec.family == "BRooms":
        return 2 + sum(sum(c for _, c in spec.rooms[i % len(spec.rooms)]) for i in range(1, spec.H + 1))
    if spec.family == "URooms":
        return 2 + spec.H * len(spec.b_rooms) + (spec.H - 1) * len(spec.c_rooms)
    if spec.family == "BChains":
        return spec.H
    return 2 * spec.H - 1


def family_spec(family: str, **params) -> BenchmarkSpec:
    """Small instance of a family for sweeps; ``params`` override the defaults.

    Extra knobs: ``rooms`` for BRooms may be an integer count of rooms of size
    ``room_size`` (default 5) per layer.
    """
    if family == "BChains":
        base = dict(H=3, width=10)
    elif family == "UChains":
        base = dict(H=3, width=20, narrow=2)
    elif family == "BRooms":
        base = dict(H=2, width=10, rooms=2, room_size=5)
    elif family == "URooms":
        base = dict(H=2, n_in=2, d_out=2, b_rooms=((6, 1), (4, 2)), c_rooms=((1, 5), (2, 5)))
    else:
        raise SpecError(f"unknown family {family!r}")
    base.update(params)
    if family == "BRooms":
        size = base.pop("room_size")
        if isinstance(base["rooms"], int):
            base["rooms"] = (((size, base["rooms"]),),)
    return BenchmarkSpec(family, **base)


@dataclass
class Bundle:
    """A generated instance: the aligned diagram and both boundary marginals."""

    name: str
    diagram: AlignedDiagram
    a: np.ndarray
    b: np.ndarray


def uniform_marginal(m: int) -> np.ndarray:
    return np.full(m, float(Fraction(1, m)))


def _leaf_shapes(spec: BenchmarkSpec) -> tuple[tuple[str, int, int], list[list[tuple[str, int, int]]]]:
    if spec.family == "BRooms":
        W = _pattern_width(spec.rooms[0])
        head = ("A", spec.width, W)
        layers = []
        for i in range(1, spec.H + 1):
            pattern = spec.rooms[i % len(spec.rooms)]
            sizes = [s for s, c in pattern for _ in range(c)]
            layers.append([(f"B_{i}_{j}", s, s) for j, s in enumerate(sizes, 1)])
        layers.append([("C", W, spec.width)])
    elif spec.family == "URooms":
        b_in = sum(m for m, _ in spec.b_rooms)
        b_out = sum(n for _, n in spec.b_rooms)
        head = ("A", spec.n_in, b_in)
        layers = []
        for i in range(1, spec.H + 1):
            layers.append([(f"B_{i}_{j}", m, n) for j, (m, n) in enumerate(spec.b_rooms, 1)])
            if i < spec.H:
                layers.append([(f"C_{i}_{j}", m, n) for j, (m, n) in enumerate(spec.c_rooms, 1)])
        layers.append([("D", b_out, spec.d_out)])
    elif spec.family == "BChains":
        head = ("A_1", spec.width, spec.width)
        layers = [[(f"A_{i}", spec.width, spec.width)] for i in range(2, spec.H + 1)]
    else:
        head = ("A_1", spec.narrow, spec.width)
        layers = []
        for i in range(1, spec.H):
            layers.append([(f"B_{i}", spec.width, spec.narrow)])
            layers.append([(f"A_{i + 1}", spec.narrow, spec.width)])
    return head, layers


def generate(spec: BenchmarkSpec) -> Bundle:
    """Draw every leaf's costs i.i.d. uniform on ``spec.cost_range``.

    Leaf ``k`` (in left-to-right order) uses its own PCG64 stream spawned from
    ``SeedSequence(seed, spawn_key=(k,))``, so a leaf's matrix does not depend
    on how many leaves precede it being generated first.
    """
    head_shape, layer_shapes = _leaf_shapes(spec)
    lo, hi = spec.cost_range
    counter = iter(range(1 << 62))

    def make(name, m, n):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(spec.seed, spawn_key=(next(counter),))))
        if spec.integer_costs:
            cost = rng.integers(int(lo), int(hi), size=(m, n), endpoint=True).astype(np.float64)
        else:
            cost = rng.uniform(lo, hi, size=(m, n))
        return Leaf(name, m, n, cost)

    head = make(*head_shape)
    layers = tuple(tuple(make(*s) for s in layer) for layer in layer_shapes)
    d = AlignedDiagram(head, layers)
    validate_aligned(d).raise_if_failed()
    return Bundle(spec.name or spec.family, d, uniform_marginal(d.source_size), uniform_marginal(d.target_size))


# -- bundle files ------------------------------------------------------------

def write_bundle(bundle: Bundle, directory: Union[str, Path]) -> Path:
    """Write ``diagram.sdot``, ``matrices/<leaf>.csv``, ``a.csv`` and ``b.csv``."""
    root = Path(directory)
    (root / "matrices").mkdir(parents=True, exist_ok=True)
    seen = set()
    for leaf in bundle.diagram.leaves():
        if leaf.name not in seen:
            seen.add(leaf.name)
            write_matrix(root / "matrices" / f"{leaf.name}.csv", leaf.cost)
    (root / "diagram.sdot").write_text(f"// {bundle.name}\n" + pretty(bundle.diagram.to_diagram()) + "\n")
    write_vector(root / "a.csv", bundle.a)
    write_vector(root / "b.csv", bundle.b)
    return root


def read_bundle(directory: Union[str, Path]) -> Bundle:
    """Load a bundle written by :func:`write_bundle` (or by hand).

    The diagram is parsed, type-checked and put in sequential normal form.
    Missing marginal files default to uniform weights.
    """
    root = Path(directory)
    text = (root / "diagram.sdot").read_text()
    name = root.name
    first = text.lstrip().splitlines()[0] if text.strip() else ""
    if first.startswith("//"):
        name = first[2:].strip() or name
    mats = root / "matrices"

    def load(leaf_name: str):
        path = mats / f"{leaf_name}.csv"
        if not path.exists():
            raise KeyError(leaf_name)
        return read_matrix(path)

    d = to_sequential_normal_form(parse_diagram(text, load))
    a = read_vector(root / "a.csv") if (root / "a.csv").exists() else uniform_marginal(d.source_size)
    b = read_vector(root / "b.csv") if (root / "b.csv").exists() else uniform_marginal(d.target_size)
    return Bundle(name, d, a, b)
