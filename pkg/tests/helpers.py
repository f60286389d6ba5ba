"""Shared test utilities: small named graphs and random instance generators."""

import numpy as np

from pgso.graph import AttributedGraph


def path_graph(n: int = 3, d: int = 1) -> AttributedGraph:
    edges = tuple((i, i + 1) for i in range(n - 1))
    return AttributedGraph(n=n, edges=edges, attributes=np.ones((n, d)), name=f"P{n}")


def complete_graph(n: int = 3, d: int = 1) -> AttributedGraph:
    edges = tuple((i, j) for i in range(n) for j in range(i + 1, n))
    return AttributedGraph(n=n, edges=edges, attributes=np.ones((n, d)), name=f"K{n}")


def random_connected_graph(rng: np.random.Generator, n: int, d: int = 1,
                           extra_edges: int | None = None,
                           labels: bool = False,
                           classes: int = 3) -> AttributedGraph:
    """Random spanning tree plus extra edges: connected, no isolated nodes."""
    edges = set()
    for v in range(1, n):
        u = int(rng.integers(0, v))
        edges.add((u, v))
    n_extra = int(rng.integers(0, n)) if extra_edges is None else extra_edges
    for _ in range(n_extra):
        u, v = (int(x) for x in rng.integers(0, n, 2))
        if u != v:
            edges.add((min(u, v), max(u, v)))
    return AttributedGraph(
        n=n,
        edges=tuple(sorted(edges)),
        attributes=rng.standard_normal((n, d)),
        labels=rng.integers(0, classes, n) if labels else None,
        num_classes=classes if labels else None,
    )


def min_degree_graph(rng: np.random.Generator, n: int, min_degree: int = 3,
                     d: int = 1) -> AttributedGraph:
    """Connected graph with every degree >= min_degree.

    With parameters drawn from [-2, 2], augmented degrees d_i + a then stay
    >= 1, so no clamp is active and operator norms stay small enough for
    eigensolver roundoff to sit far below the spec tolerances.
    """
    from pgso.graph import degrees

    edges = set()
    for v in range(1, n):
        edges.add((int(rng.integers(0, v)), v))

    def build():
        return AttributedGraph(n=n, edges=tuple(sorted(edges)),
                               attributes=np.ones((n, d)))

    g = build()
    while degrees(g).min() < min_degree:
        i = int(np.argmin(degrees(g)))
        j = int(rng.integers(0, n))
        if i != j and (min(i, j), max(i, j)) not in edges:
            edges.add((min(i, j), max(i, j)))
            g = build()
    return g


def random_params(rng: np.random.Generator, low: float = -2.0, high: float = 2.0):
    from pgso.operator import ParamSet

    return ParamSet(*rng.uniform(low, high, 7))


def random_safe_params(rng: np.random.Generator):
    """Random tuple whose additive part keeps every augmented degree well
    away from the clamp, so derivatives through the base are smooth."""
    from pgso.operator import ParamSet

    values = rng.uniform(-2.0, 2.0, 7)
    values[6] = rng.uniform(-0.4, 2.0)
    return ParamSet(*values)
