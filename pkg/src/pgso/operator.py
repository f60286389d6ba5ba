"""Parametrised graph shift operator.

The operator family is

    gamma(A, S) = m1 * D_a^e1 + m2 * D_a^e2 A_a D_a^e3 + m3 * I

with A_a = A + a*I, D_a the degree matrix of A_a, and parameter tuple
S = (m1, m2, m3, e1, e2, e3, a).  Specific tuples recover the classical
shift operators (adjacency, Laplacians, GCN normalisation, mean
aggregation); see ``PRESETS``.

Real powers of the augmented degrees d_i + a are undefined for
non-positive bases, so every power uses the clamped base
b_i = max(d_i + a, clamp_epsilon).  The clamp is flat: derivatives with
respect to ``a`` are zero at clamped nodes.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import isfinite

import numpy as np
import scipy.sparse as sp

from pgso.graph import AttributedGraph, degrees

DEFAULT_CLAMP_EPS = 1e-6

PARAM_NAMES = ("m1", "m2", "m3", "e1", "e2", "e3", "a")


@dataclass(frozen=True)
class ParamSet:
    """The 7-tuple of operator parameters (all finite reals)."""

    m1: float = 0.0
    m2: float = 0.0
    m3: float = 0.0
    e1: float = 0.0
    e2: float = 0.0
    e3: float = 0.0
    a: float = 0.0

    def __post_init__(self):
        for name in PARAM_NAMES:
            value = float(getattr(self, name))
            if not isfinite(value):
                raise ValueError(f"parameter {name} must be finite, got {value}")
            object.__setattr__(self, name, value)

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in PARAM_NAMES])

    @classmethod
    def from_array(cls, values) -> "ParamSet":
        values = np.asarray(values, dtype=float)
        if values.shape != (7,):
            raise ValueError(f"expected 7 parameters, got shape {values.shape}")
        return cls(*values)

    def to_record(self) -> str:
        """Key-value text record; floats carry 17 significant digits so the
        round-trip through ``from_record`` is exact."""
        return " ".join(f"{name}={getattr(self, name):.17g}" for name in PARAM_NAMES)

    @classmethod
    def from_record(cls, text: str) -> "ParamSet":
        fields = {}
        for token in text.split():
            key, _, value = token.partition("=")
            if key not in PARAM_NAMES or not value:
                raise ValueError(f"bad parameter token {token!r}")
            fields[key] = float(value)
        if set(fields) != set(PARAM_NAMES):
            raise ValueError(f"record must set all of {PARAM_NAMES}")
        return cls(**fields)


# Parameter tuples that materialise the classical shift operators, stored
# as exact binary constants (0, +-1, +-1/2).
PRESETS: dict[str, ParamSet] = {
    "adjacency": ParamSet(0, 1, 0, 0, 0, 0, 0),
    "unnormalised_laplacian": ParamSet(1, -1, 0, 1, 0, 0, 0),
    "signless_laplacian": ParamSet(1, 1, 0, 1, 0, 0, 0),
    "random_walk_laplacian": ParamSet(0, -1, 1, 0, -1, 0, 0),
    "symmetric_laplacian": ParamSet(0, -1, 1, 0, -0.5, -0.5, 0),
    "gcn_norm": ParamSet(0, 1, 0, 0, -0.5, -0.5, 1),
    "mean_aggregation": ParamSet(0, 1, 0, 0, -1, 0, 0),
    "all_zeros": ParamSet(0, 0, 0, 0, 0, 0, 0),
}

PRESET_DESCRIPTIONS: dict[str, str] = {
    "adjacency": "A (sum aggregation)",
    "unnormalised_laplacian": "D - A",
    "signless_laplacian": "D + A",
    "random_walk_laplacian": "I - D^-1 A",
    "symmetric_laplacian": "I - D^-1/2 A D^-1/2",
    "gcn_norm": "D_1^-1/2 A_1 D_1^-1/2",
    "mean_aggregation": "D^-1 A",
    "all_zeros": "zero operator (naive initialisation)",
}


def preset(name: str) -> ParamSet:
    """Named parameter tuple for a classical operator."""
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(
            f"unknown preset {name!r}; choose from {', '.join(PRESETS)}"
        ) from None


def augmented_degrees(
    g: AttributedGraph, a: float, clamp_epsilon: float = DEFAULT_CLAMP_EPS
) -> tuple[np.ndarray, int]:
    """Clamped augmented degrees b_i = max(d_i + a, eps) and the clamp count."""
    if clamp_epsilon <= 0:
        raise ValueError("clamp_epsilon must be positive")
    raw = degrees(g).astype(float) + a
    clamped = raw < clamp_epsilon
    return np.where(clamped, clamp_epsilon, raw), int(np.count_nonzero(clamped))


@dataclass(frozen=True)
class PgsoMatrix:
    """Sparse materialisation of the operator.

    The sparsity pattern is always E union the diagonal; the self-loop
    contribution a * b_i^(e2+e3) is folded into the diagonal entries.
    """

    n: int
    entries: sp.csr_matrix
    aug_degrees: np.ndarray
    params: ParamSet
    clamp_epsilon: float
    n_clamped: int

    def toarray(self) -> np.ndarray:
        return self.entries.toarray()


def build_operator(
    g: AttributedGraph, s: ParamSet, clamp_epsilon: float = DEFAULT_CLAMP_EPS
) -> PgsoMatrix:
    """Materialise the operator in compressed sparse row form."""
    b, n_clamped = augmented_degrees(g, s.a, clamp_epsilon)
    diag = s.m1 * b**s.e1 + s.m2 * b ** (s.e2 + s.e3) * s.a + s.m3
    rows = [np.arange(g.n)]
    cols = [np.arange(g.n)]
    vals = [diag]
    if g.edges:
        e = np.asarray(g.edges)
        p = b**s.e2
        q = b**s.e3
        rows.extend([e[:, 0], e[:, 1]])
        cols.extend([e[:, 1], e[:, 0]])
        vals.extend([s.m2 * p[e[:, 0]] * q[e[:, 1]], s.m2 * p[e[:, 1]] * q[e[:, 0]]])
    entries = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(g.n, g.n),
    )
    return PgsoMatrix(
        n=g.n,
        entries=entries,
        aug_degrees=b,
        params=s,
        clamp_epsilon=clamp_epsilon,
        n_clamped=n_clamped,
    )


def apply(
    g: AttributedGraph,
    s: ParamSet,
    h: np.ndarray,
    clamp_epsilon: float = DEFAULT_CLAMP_EPS,
) -> np.ndarray:
    """Matrix-free action gamma(A, S) @ h.

    Row i of the output is
    m1 * b_i^e1 * h_i + m2 * sum_j b_i^e2 (A_a)_ij b_j^e3 * h_j + m3 * h_i,
    including the j = i self-loop term weighted by ``a``.
    """
    h = _check_rows(g, h, "h")
    b, _ = augmented_degrees(g, s.a, clamp_epsilon)
    p = b**s.e2
    q = b**s.e3
    neighbour = g.adjacency @ (q[:, None] * h)
    middle = p[:, None] * neighbour + (s.a * p * q)[:, None] * h
    return s.m1 * (b**s.e1)[:, None] * h + s.m2 * middle + s.m3 * h


def input_gradient(
    g: AttributedGraph,
    s: ParamSet,
    upstream: np.ndarray,
    clamp_epsilon: float = DEFAULT_CLAMP_EPS,
) -> np.ndarray:
    """Backprop through ``apply``: gamma(A, S)^T @ upstream, matrix-free.

    For undirected graphs this is ``apply`` with e2 and e3 exchanged.
    """
    upstream = _check_rows(g, upstream, "upstream")
    b, _ = augmented_degrees(g, s.a, clamp_epsilon)
    p = b**s.e2
    q = b**s.e3
    neighbour = g.adjacency @ (p[:, None] * upstream)
    middle = q[:, None] * neighbour + (s.a * p * q)[:, None] * upstream
    return s.m1 * (b**s.e1)[:, None] * upstream + s.m2 * middle + s.m3 * upstream


@dataclass(frozen=True)
class ParamGradient:
    """Loss gradients with respect to the seven operator parameters."""

    d_m1: float
    d_m2: float
    d_m3: float
    d_e1: float
    d_e2: float
    d_e3: float
    d_a: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.d_m1, self.d_m2, self.d_m3, self.d_e1, self.d_e2, self.d_e3, self.d_a]
        )

    def __add__(self, other: "ParamGradient") -> "ParamGradient":
        return ParamGradient(*(self.as_array() + other.as_array()))


def param_gradient(
    g: AttributedGraph,
    s: ParamSet,
    h: np.ndarray,
    upstream: np.ndarray,
    clamp_epsilon: float = DEFAULT_CLAMP_EPS,
) -> ParamGradient:
    """<upstream, d(gamma @ h)/d theta> for each theta in S.

    Analytic partials of the operator entries; at clamped nodes the
    derivative of the base with respect to ``a`` is zero.
    """
    h = _check_rows(g, h, "h")
    upstream = _check_rows(g, upstream, "upstream")
    if h.shape != upstream.shape:
        raise ValueError(f"shape mismatch: h {h.shape} vs upstream {upstream.shape}")
    b, _ = augmented_degrees(g, s.a, clamp_epsilon)
    unclamped = (degrees(g) + s.a >= clamp_epsilon).astype(float)
    logb = np.log(b)
    p = b**s.e2
    q = b**s.e3
    r1 = b**s.e1
    A = g.adjacency

    uh = np.sum(upstream * h, axis=1)  # per-node inner products <u_i, h_i>

    qh = q[:, None] * h
    neighbour = A @ qh  # rows (A (q . h))_i
    mid = p[:, None] * neighbour + (s.a * p * q)[:, None] * h

    d_m1 = float(np.dot(r1, uh))
    d_m2 = float(np.sum(upstream * mid))
    d_m3 = float(np.sum(uh))
    d_e1 = float(s.m1 * np.dot(logb * r1, uh))
    d_e2 = float(s.m2 * np.sum(upstream * (logb[:, None] * mid)))
    col = (logb * q)[:, None] * h
    mid_e3 = p[:, None] * (A @ col) + (s.a * p * q * logb)[:, None] * h
    d_e3 = float(s.m2 * np.sum(upstream * mid_e3))

    # d/da: flat at clamped nodes for every power of b; the A_a = A + a*I
    # term contributes b^(e2+e3) regardless of clamping.
    da_m1 = s.m1 * s.e1 * np.dot(unclamped * b ** (s.e1 - 1), uh)
    row_fac = unclamped * b ** (s.e2 - 1)
    da_row = s.e2 * np.sum(upstream * (row_fac[:, None] * (neighbour + s.a * qh)))
    col_fac = unclamped * b ** (s.e3 - 1)
    ch = col_fac[:, None] * h
    da_col = s.e3 * np.sum(upstream * (p[:, None] * (A @ ch + s.a * ch)))
    da_ident = np.dot(p * q, uh)
    d_a = float(da_m1 + s.m2 * (da_row + da_ident + da_col))

    return ParamGradient(d_m1, d_m2, d_m3, d_e1, d_e2, d_e3, d_a)


def is_gso(matrix, g: AttributedGraph) -> bool:
    """True iff every nonzero off-diagonal entry of ``matrix`` sits on an
    edge of ``g``.  Edges without a nonzero entry are allowed."""
    if sp.issparse(matrix):
        coo = matrix.tocoo()
        rows, cols, data = coo.row, coo.col, coo.data
    else:
        dense = np.asarray(matrix)
        rows, cols = np.nonzero(dense)
        data = dense[rows, cols]
    if matrix.shape != (g.n, g.n):
        raise ValueError(f"matrix shape {matrix.shape} does not match n={g.n}")
    edge_set = set(g.edges)
    for i, j, v in zip(rows, cols, data):
        if i != j and v != 0 and (min(i, j), max(i, j)) not in edge_set:
            return False
    return True


def _check_rows(g: AttributedGraph, mat: np.ndarray, name: str) -> np.ndarray:
    mat = np.asarray(mat, dtype=float)
    if mat.ndim == 1:
        mat = mat[:, None]
    if mat.ndim != 2 or mat.shape[0] != g.n:
        raise ValueError(f"{name} must have {g.n} rows, got shape {mat.shape}")
    return mat
