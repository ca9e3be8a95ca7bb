"""Fold a string diagram into one monolithic cost matrix."""

from __future__ import annotations

from functools import reduce

import numpy as np

from .diagram import AlignedDiagram, Id, Leaf, Par, Seq, seq_chain, type_check
from .tropical import identity_cost, par_compose, seq_compose

__all__ = ["compose_cost", "compose_layer", "assert_finite"]


def compose_layer(layer) -> np.ndarray:
    """Parallel composition of one layer, folded left to right."""
    return reduce(par_compose, (_factor_cost(f) for f in layer))


def _factor_cost(f) -> np.ndarray:
    if isinstance(f, Leaf):
        return f.cost
    if isinstance(f, Id):
        return identity_cost(f.n)
    return compose_cost(f)


def compose_cost(d, *, threads: int | None = None) -> np.ndarray:
    """Cost matrix of a diagram by structural recursion.

    Leaves give their matrices, ``id(n)`` the identity cost matrix, ``;`` the
    min-plus product and ``#`` the block-diagonal sum.  An
    :class:`AlignedDiagram` is folded left to right over its layers.
    """
    if isinstance(d, AlignedDiagram):
        C = d.head.cost
        for layer in d.layers:
            C = seq_compose(C, compose_layer(layer), threads=threads)
        return C
    if isinstance(d, (Leaf, Id)):
        return _factor_cost(d)
    if isinstance(d, Seq):
        type_check(d)
        chain = seq_chain(d)
        C = compose_cost(chain[0], threads=threads)
        for x in chain[1:]:
            C = seq_compose(C, compose_cost(x, threads=threads), threads=threads)
        return C
    if isinstance(d, Par):
        return par_compose(compose_cost(d.top, threads=threads), compose_cost(d.bottom, threads=threads))
    raise TypeError(f"not a diagram: {d!r}")


def assert_finite(C) -> list[tuple[int, int]]:
    """Return the (0-based) indices of every infinite entry; empty means finite."""
    C = np.asarray(C)
    return [(int(i), int(j)) for i, j in np.argwhere(np.isinf(C))]
