"""Extended reals and the min-plus algebra of cost matrices.

Cost matrices are plain ``float64`` numpy arrays; the positive infinity of
the semiring is stored as ``np.inf``.  Nothing in this module ever multiplies
an infinite entry by a weight directly, so the ``inf * 0 = 0`` convention of
:func:`pairing` is enforced by masking rather than by IEEE arithmetic.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Union

import numpy as np

__all__ = [
    "ExtReal",
    "INF",
    "ShapeError",
    "ext_add",
    "ext_min",
    "cost_matrix",
    "seq_compose",
    "par_compose",
    "identity_cost",
    "pairing",
    "read_matrix",
    "write_matrix",
    "read_vector",
    "write_vector",
    "format_entry",
    "set_num_threads",
    "get_num_threads",
]


class ShapeError(ValueError):
    """Raised when matrix shapes do not fit an operation."""


@dataclass(frozen=True, order=False)
class ExtReal:
    """A finite real number or positive infinity.

    ``-inf`` and NaN are not representable.
    """

    value: float = 0.0
    infinite: bool = False

    def __post_init__(self):
        if self.infinite:
            object.__setattr__(self, "value", 0.0)
            return
        v = float(self.value)
        if math.isnan(v):
            raise ValueError("NaN is not an extended real")
        if v == -math.inf:
            raise ValueError("-inf is not representable")
        if v == math.inf:
            object.__setattr__(self, "infinite", True)
            object.__setattr__(self, "value", 0.0)
        else:
            object.__setattr__(self, "value", v)

    @classmethod
    def of(cls, x: "ExtLike") -> "ExtReal":
        if isinstance(x, ExtReal):
            return x
        return cls(float(x))

    def __float__(self) -> float:
        return math.inf if self.infinite else self.value

    def __lt__(self, other: "ExtLike") -> bool:
        return float(self) < float(ExtReal.of(other))

    def __le__(self, other: "ExtLike") -> bool:
        return float(self) <= float(ExtReal.of(other))

    def __eq__(self, other) -> bool:
        try:
            o = ExtReal.of(other)
        except (TypeError, ValueError):
            return NotImplemented
        return self.infinite == o.infinite and self.value == o.value

    def __hash__(self) -> int:
        return hash((self.infinite, self.value))

    def __repr__(self) -> str:
        return "ExtReal(inf)" if self.infinite else f"ExtReal({self.value!r})"


ExtLike = Union[ExtReal, float, int]

INF = ExtReal(infinite=True)


def ext_add(x: ExtLike, y: ExtLike) -> ExtReal:
    """Tropical product: real addition with ``inf`` absorbing."""
    x, y = ExtReal.of(x), ExtReal.of(y)
    if x.infinite or y.infinite:
        return INF
    return ExtReal(x.value + y.value)


def ext_min(x: ExtLike, y: ExtLike) -> ExtReal:
    """Tropical sum: the minimum, with ``inf`` neutral."""
    x, y = ExtReal.of(x), ExtReal.of(y)
    if x.infinite:
        return y
    if y.infinite:
        return x
    return x if x.value <= y.value else y


def cost_matrix(data, *, allow_empty: bool = False) -> np.ndarray:
    """Validate ``data`` as a cost matrix and return a read-only float array.

    Entries must be finite reals or ``+inf``.  Both dimensions must be at
    least one unless ``allow_empty`` is set (the monoidal unit is 0x0).
    """
    arr = np.array(data, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"cost matrix must be 2-d, got ndim={arr.ndim}")
    if not allow_empty and (arr.shape[0] < 1 or arr.shape[1] < 1):
        raise ShapeError(f"cost matrix must be at least 1x1, got {arr.shape}")
    if np.isnan(arr).any():
        raise ValueError("cost matrix contains NaN")
    if np.isneginf(arr).any():
        raise ValueError("cost matrix contains -inf")
    arr.setflags(write=False)
    return arr


_num_threads = 1


def set_num_threads(n: int) -> None:
    """Set the worker count used by :func:`seq_compose` (``0`` = all cores)."""
    global _num_threads
    if n < 0:
        raise ValueError("thread count must be >= 0")
    _num_threads = n or (os.cpu_count() or 1)


def get_num_threads() -> int:
    return _num_threads


def _minplus_rows(C: np.ndarray, D: np.ndarray, out: np.ndarray) -> None:
    # out[i, j] = min_k C[i, k] + D[k, j]; inf + finite stays inf, no -inf
    out.fill(np.inf)
    tmp = np.empty_like(out)
    for k in range(C.shape[1]):
        np.add(C[:, k, None], D[k], out=tmp)
        np.minimum(out, tmp, out=out)


def seq_compose(C, D, *, threads: int | None = None) -> np.ndarray:
    """Sequential composition: the min-plus product ``(C ; D)_ij = min_k C_ik + D_kj``.

    Rows of the output are split into blocks that may be computed on
    separate threads; the result does not depend on the thread count.
    """
    C = np.asarray(C, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    if C.ndim != 2 or D.ndim != 2:
        raise ShapeError("seq_compose expects 2-d matrices")
    if C.shape[1] != D.shape[0]:
        raise ShapeError(
            f"cannot compose {C.shape[0]}x{C.shape[1]} with "
            f"{D.shape[0]}x{D.shape[1]}: {C.shape[1]} != {D.shape[0]}"
        )
    m, n = C.shape[0], D.shape[1]
    out = np.empty((m, n), dtype=np.float64)
    if m == 0 or n == 0:
        out.setflags(write=False)
        return out
    if C.shape[1] == 0:
        out.fill(np.inf)
        out.setflags(write=False)
        return out
    workers = threads if threads is not None else _num_threads
    workers = max(1, min(workers, m))
    if workers == 1:
        _minplus_rows(C, D, out)
    else:
        bounds = np.linspace(0, m, workers + 1).astype(int)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_minplus_rows, C[lo:hi], D, out[lo:hi])
                for lo, hi in zip(bounds[:-1], bounds[1:])
                if hi > lo
            ]
            for f in futures:
                f.result()
    out.setflags(write=False)
    return out


def par_compose(C, D) -> np.ndarray:
    """Parallel composition: block-diagonal matrix with ``inf`` off the blocks."""
    C = np.asarray(C, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    if C.ndim != 2 or D.ndim != 2:
        raise ShapeError("par_compose expects 2-d matrices")
    m, n = C.shape
    k, l = D.shape
    out = np.full((m + k, n + l), np.inf)
    out[:m, :n] = C
    out[m:, n:] = D
    out.setflags(write=False)
    return out


def identity_cost(n: int) -> np.ndarray:
    """The identity cost matrix: zero diagonal, ``inf`` elsewhere."""
    if int(n) != n or n < 1:
        raise ShapeError(f"identity size must be a positive integer (got {n}); size 0 is a deadend")
    out = np.full((n, n), np.inf)
    np.fill_diagonal(out, 0.0)
    out.setflags(write=False)
    return out


def pairing(C, P) -> float:
    """Return ``<C, P>`` under the convention ``inf * 0 = 0``.

    The result is ``inf`` exactly when ``P`` puts positive mass on an
    infinite entry of ``C``.
    """
    C = np.asarray(C, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    if C.shape != P.shape:
        raise ShapeError(f"pairing shapes differ: {C.shape} vs {P.shape}")
    if (P < 0).any():
        raise ValueError("plan has negative entries")
    inf_mask = np.isinf(C)
    if (P[inf_mask] > 0).any():
        return math.inf
    finite = ~inf_mask
    return float(np.dot(C[finite], P[finite]))


# -- text format ------------------------------------------------------------

def format_entry(x: float) -> str:
    if math.isinf(x):
        if x < 0:
            raise ValueError("-inf is not representable")
        return "inf"
    return "%.17g" % x


def _parse_entry(tok: str, where: str) -> float:
    tok = tok.strip()
    if tok.lower() in ("inf", "+inf", "infinity"):
        return math.inf
    try:
        v = float(tok)
    except ValueError:
        raise ValueError(f"{where}: cannot parse entry {tok!r}") from None
    if math.isnan(v) or v == -math.inf:
        raise ValueError(f"{where}: entry {tok!r} is not an extended real")
    return v


def read_matrix(path: Union[str, Path]) -> np.ndarray:
    """Read a comma-separated cost matrix; ``inf`` denotes infinity."""
    path = Path(path)
    rows = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            rows.append([_parse_entry(t, f"{path}:{lineno}") for t in line.split(",")])
    if not rows:
        raise ShapeError(f"{path}: empty matrix file")
    width = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise ShapeError(f"{path}: row {i + 1} has {len(r)} entries, expected {width}")
    return cost_matrix(rows)


def write_matrix(path: Union[str, Path], C) -> None:
    C = np.asarray(C, dtype=np.float64)
    lines = (",".join(format_entry(x) for x in row) for row in C)
    Path(path).write_text("\n".join(lines) + "\n")


def read_vector(path: Union[str, Path]) -> np.ndarray:
    """One finite value per line (marginals)."""
    vals = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if line:
            vals.append(_parse_entry(line, f"{path}:{lineno}"))
    return np.array(vals, dtype=np.float64)


def write_vector(path: Union[str, Path], v: Iterable[float]) -> None:
    Path(path).write_text("".join(format_entry(float(x)) + "\n" for x in v))
