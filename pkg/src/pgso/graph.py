"""Graph storage, file loaders, stochastic-blockmodel sampling and data splits.

Graphs are undirected with binary adjacency: edges are stored once as
canonical ``(u, v)`` pairs with ``u < v``.  All randomness goes through
``numpy.random.default_rng`` (PCG64), so sampling and splitting replicate
bit-for-bit across platforms for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
import scipy.sparse as sp


class GraphFormatError(ValueError):
    """Raised when a graph file cannot be parsed under the declared format."""


@dataclass(frozen=True)
class AttributedGraph:
    """Undirected binary-adjacency graph with node attributes.

    ``labels`` is either an integer vector of length ``n`` (node classes),
    a single integer (graph class), or ``None``.  ``num_classes`` may carry
    an explicit class count (e.g. from a bundle header); otherwise it is
    inferred from the labels.
    """

    n: int
    edges: tuple[tuple[int, int], ...]
    attributes: np.ndarray
    labels: np.ndarray | int | None = None
    name: str = ""
    num_classes: int | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("graph must have at least one node")
        seen = set()
        for u, v in self.edges:
            if not (0 <= u < self.n and 0 <= v < self.n):
                raise ValueError(f"edge ({u}, {v}) out of range for n={self.n}")
            if u == v:
                raise ValueError(f"self-loop ({u}, {v}) is not allowed")
            if u > v:
                raise ValueError(f"edge ({u}, {v}) not in canonical u < v order")
            if (u, v) in seen:
                raise ValueError(f"duplicate edge ({u}, {v})")
            seen.add((u, v))
        attrs = np.asarray(self.attributes, dtype=float)
        if attrs.ndim != 2 or attrs.shape[0] != self.n or attrs.shape[1] < 1:
            raise ValueError(
                f"attributes must be an n x d matrix with d >= 1, got shape {attrs.shape}"
            )
        object.__setattr__(self, "attributes", attrs)
        if self.labels is not None and not np.isscalar(self.labels):
            labels = np.asarray(self.labels, dtype=int)
            if labels.shape != (self.n,):
                raise ValueError(f"node labels must have length n={self.n}")
            object.__setattr__(self, "labels", labels)

    @property
    def d(self) -> int:
        return self.attributes.shape[1]

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        """Symmetric binary adjacency in compressed sparse row form."""
        if not self.edges:
            return sp.csr_matrix((self.n, self.n))
        e = np.asarray(self.edges)
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        data = np.ones(rows.shape[0])
        return sp.csr_matrix((data, (rows, cols)), shape=(self.n, self.n))

    @cached_property
    def degree_vector(self) -> np.ndarray:
        if not self.edges:
            deg = np.zeros(self.n, dtype=int)
        else:
            deg = np.bincount(np.asarray(self.edges).ravel(), minlength=self.n)
        deg.setflags(write=False)
        return deg

    def inferred_num_classes(self) -> int:
        if self.num_classes is not None:
            return self.num_classes
        if self.labels is None:
            raise ValueError(f"graph {self.name!r} carries no labels")
        if np.isscalar(self.labels):
            return int(self.labels) + 1
        return int(np.max(self.labels)) + 1


def degrees(g: AttributedGraph) -> np.ndarray:
    """Degree of every node: row sums of the adjacency matrix."""
    return g.degree_vector


@dataclass(frozen=True)
class SplitAssignment:
    """Disjoint train/validation/test index sets."""

    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        parts = [np.asarray(p, dtype=int) for p in (self.train, self.validation, self.test)]
        for name, part in zip(("train", "validation", "test"), parts):
            if part.size == 0:
                raise ValueError(f"{name} split is empty")
        combined = np.concatenate(parts)
        if np.unique(combined).size != combined.size:
            raise ValueError("splits are not pairwise disjoint")
        object.__setattr__(self, "train", parts[0])
        object.__setattr__(self, "validation", parts[1])
        object.__setattr__(self, "test", parts[2])


@dataclass(frozen=True)
class SbmSpec:
    """Planted-partition blockmodel: k equal communities, within-probability
    p and between-probability q with p >= q."""

    k: int
    community_size: int
    p: float
    q: float
    seed: int = 0

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be at least 2")
        if self.community_size < 1:
            raise ValueError("community_size must be positive")
        if not (0.0 <= self.q <= self.p <= 1.0):
            raise ValueError("need 0 <= q <= p <= 1")

    @property
    def n(self) -> int:
        return self.k * self.community_size


def sample_sbm(spec: SbmSpec) -> AttributedGraph:
    """Sample a planted-partition graph.

    Nodes 0..size-1 form community 0, the next ``size`` nodes community 1,
    and so on.  Labels are community indices.

    Attributes follow the seeded community-detection protocol: every node
    carries the uninformative constant vector (zeros, dimension k) except
    the first node of each community, which carries its community
    indicator.  The indicator is the community one-hot recoded to zero sum
    and scaled to the node count, n * (e_c - 1/k): an affine recoding of
    the one-hot that carries the same information while keeping the
    propagated signal at unit scale under degree-normalised operators,
    which is what makes the classification task trainable at this size
    without batch normalisation.
    """
    rng = np.random.default_rng(spec.seed)
    k, size = spec.k, spec.community_size
    n = spec.n
    edges = []
    for bi in range(k):
        for bj in range(bi, k):
            draw = rng.random((size, size))
            if bi == bj:
                iu, ju = np.triu_indices(size, k=1)
                hit = draw[iu, ju] < spec.p
                base = bi * size
                edges.extend(zip(base + iu[hit], base + ju[hit]))
            else:
                iu, ju = np.nonzero(draw < spec.q)
                edges.extend(zip(bi * size + iu, bj * size + ju))
    attributes = np.zeros((n, k))
    for c in range(k):
        attributes[c * size] = -n / k
        attributes[c * size, c] += n
    labels = np.repeat(np.arange(k), size)
    name = f"sbm_k{k}_s{size}_p{spec.p:g}_q{spec.q:g}_seed{spec.seed}"
    return AttributedGraph(
        n=n,
        edges=tuple(sorted((int(u), int(v)) for u, v in edges)),
        attributes=attributes,
        labels=labels,
        name=name,
        num_classes=k,
    )


def onehot_degree_attributes(g: AttributedGraph, max_degree: int) -> AttributedGraph:
    """Copy of ``g`` whose attribute rows one-hot encode the node degrees."""
    deg = degrees(g)
    observed = int(deg.max()) if g.n else 0
    if observed > max_degree:
        raise ValueError(f"observed degree {observed} exceeds max_degree {max_degree}")
    attrs = np.zeros((g.n, max_degree + 1))
    attrs[np.arange(g.n), deg] = 1.0
    return replace(g, attributes=attrs)


def split_nodes(
    g: AttributedGraph,
    fractions: tuple[float, float, float],
    stratified: bool = True,
    seed: int = 0,
) -> SplitAssignment:
    """Deterministic train/validation/test split over node indices.

    When ``stratified``, the split is drawn per class so each class keeps
    the requested proportions up to rounding.
    """
    f_train, f_val, f_test = fractions
    if min(fractions) <= 0 or f_train + f_val + f_test > 1.0 + 1e-12:
        raise ValueError("fractions must be positive and sum to at most 1")
    rng = np.random.default_rng(seed)
    if stratified:
        if g.labels is None or np.isscalar(g.labels):
            raise ValueError("stratified split needs node labels")
        train, val, test = [], [], []
        for cls in np.unique(g.labels):
            members = np.flatnonzero(g.labels == cls)
            if members.size < 3:
                raise ValueError(f"class {cls} has fewer than 3 members")
            tr, va, te = _split_indices(members, fractions, rng)
            train.append(tr)
            val.append(va)
            test.append(te)
        return SplitAssignment(
            np.sort(np.concatenate(train)),
            np.sort(np.concatenate(val)),
            np.sort(np.concatenate(test)),
        )
    tr, va, te = _split_indices(np.arange(g.n), fractions, rng)
    return SplitAssignment(np.sort(tr), np.sort(va), np.sort(te))


def _split_indices(indices, fractions, rng):
    shuffled = rng.permutation(indices)
    m = indices.size
    n_train = int(round(fractions[0] * m))
    n_val = int(round(fractions[1] * m))
    n_test = min(int(round(fractions[2] * m)), m - n_train - n_val)
    n_train = max(n_train, 1)
    n_val = max(n_val, 1)
    n_test = max(n_test, 1)
    if n_train + n_val + n_test > m:
        raise ValueError(f"cannot carve non-empty splits out of {m} items")
    return (
        shuffled[:n_train],
        shuffled[n_train : n_train + n_val],
        shuffled[n_train + n_val : n_train + n_val + n_test],
    )


def split_graphs(
    labels: np.ndarray,
    fractions: tuple[float, float, float],
    stratified: bool = True,
    seed: int = 0,
) -> SplitAssignment:
    """Split a labelled graph collection into train/validation/test indices."""
    labels = np.asarray(labels, dtype=int)
    rng = np.random.default_rng(seed)
    if stratified:
        train, val, test = [], [], []
        for cls in np.unique(labels):
            members = np.flatnonzero(labels == cls)
            if members.size < 3:
                raise ValueError(f"class {cls} has fewer than 3 members")
            tr, va, te = _split_indices(members, fractions, rng)
            train.append(tr)
            val.append(va)
            test.append(te)
        return SplitAssignment(
            np.sort(np.concatenate(train)),
            np.sort(np.concatenate(val)),
            np.sort(np.concatenate(test)),
        )
    tr, va, te = _split_indices(np.arange(labels.size), fractions, rng)
    return SplitAssignment(np.sort(tr), np.sort(va), np.sort(te))


def load_graph(path, format: str = "edge_list") -> AttributedGraph:
    """Load a graph from a text file.

    ``edge_list``: first line is the node count, then one ``u v`` pair per
    line.  Directed pairs are symmetrised and duplicates collapsed; loaded
    graphs get constant attributes of dimension 1.

    ``graph_bundle``: header ``n <int> d <int> classes <int>``, an ``E``
    section of edges, an ``X`` section of n attribute rows, and an optional
    ``Y`` section with n node labels (or a single graph label).
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if format == "edge_list":
        return _parse_edge_list(lines, str(path))
    if format in ("graph_bundle", "bundle"):
        return _parse_bundle(lines, str(path))
    raise ValueError(f"unknown graph format {format!r}")


def _meaningful(lines):
    for lineno, raw in enumerate(lines, start=1):
        text = raw.strip()
        if text and not text.startswith("#"):
            yield lineno, text


def _parse_edge_list(lines, name: str) -> AttributedGraph:
    rows = list(_meaningful(lines))
    if not rows:
        raise GraphFormatError(f"{name}: empty file")
    lineno, header = rows[0]
    try:
        n = int(header)
    except ValueError:
        raise GraphFormatError(f"{name}:{lineno}: expected node count, got {header!r}") from None
    if n == 0:
        raise GraphFormatError(f"{name}:{lineno}: graph has no nodes")
    edges = _parse_edge_lines(rows[1:], n, name)
    return AttributedGraph(
        n=n, edges=edges, attributes=np.ones((n, 1)), name=name
    )


def _parse_edge_lines(rows, n, name) -> tuple[tuple[int, int], ...]:
    edges = set()
    for lineno, text in rows:
        parts = text.split()
        if len(parts) != 2:
            raise GraphFormatError(f"{name}:{lineno}: expected 'u v', got {text!r}")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise GraphFormatError(
                f"{name}:{lineno}: non-integer edge endpoint in {text!r}"
            ) from None
        if not (0 <= u < n and 0 <= v < n):
            raise GraphFormatError(f"{name}:{lineno}: edge ({u}, {v}) out of range for n={n}")
        if u == v:
            raise GraphFormatError(f"{name}:{lineno}: self-loop ({u}, {v}) is not allowed")
        edges.add((min(u, v), max(u, v)))
    return tuple(sorted(edges))


def _parse_bundle(lines, name: str) -> AttributedGraph:
    rows = list(_meaningful(lines))
    if not rows:
        raise GraphFormatError(f"{name}: empty file")
    lineno, header = rows[0]
    parts = header.split()
    if len(parts) != 6 or parts[0] != "n" or parts[2] != "d" or parts[4] != "classes":
        raise GraphFormatError(
            f"{name}:{lineno}: expected header 'n <int> d <int> classes <int>'"
        )
    try:
        n, d, classes = int(parts[1]), int(parts[3]), int(parts[5])
    except ValueError:
        raise GraphFormatError(f"{name}:{lineno}: non-integer header field") from None
    if n == 0:
        raise GraphFormatError(f"{name}:{lineno}: graph has no nodes")

    sections: dict[str, list[tuple[int, str]]] = {}
    current = None
    for lineno, text in rows[1:]:
        if text in ("E", "X", "Y"):
            if text in sections:
                raise GraphFormatError(f"{name}:{lineno}: duplicate section {text!r}")
            current = text
            sections[current] = []
            continue
        if current is None:
            raise GraphFormatError(f"{name}:{lineno}: content before any section marker")
        sections[current].append((lineno, text))
    for required in ("E", "X"):
        if required not in sections:
            raise GraphFormatError(f"{name}: missing required section {required!r}")

    edges = _parse_edge_lines(sections["E"], n, name)

    xrows = sections["X"]
    if len(xrows) != n:
        raise GraphFormatError(f"{name}: X section has {len(xrows)} rows, expected {n}")
    attributes = np.zeros((n, d))
    for i, (lineno, text) in enumerate(xrows):
        vals = text.split()
        if len(vals) != d:
            raise GraphFormatError(f"{name}:{lineno}: expected {d} attribute values")
        try:
            attributes[i] = [float(v) for v in vals]
        except ValueError:
            raise GraphFormatError(f"{name}:{lineno}: non-numeric attribute value") from None

    labels = None
    if "Y" in sections:
        yvals = []
        for lineno, text in sections["Y"]:
            for tok in text.split():
                try:
                    yvals.append(int(tok))
                except ValueError:
                    raise GraphFormatError(f"{name}:{lineno}: non-integer label {tok!r}") from None
        if len(yvals) == 1 and n > 1:
            labels = int(yvals[0])
        elif len(yvals) == n:
            labels = np.asarray(yvals, dtype=int)
        else:
            raise GraphFormatError(f"{name}: Y section has {len(yvals)} labels, expected {n} or 1")

    return AttributedGraph(
        n=n, edges=edges, attributes=attributes, labels=labels, name=name,
        num_classes=classes if classes > 0 else None,
    )
