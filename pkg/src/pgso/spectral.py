"""Spectral analysis of the parametrised shift operator.

The operator is similar to a symmetric matrix via the diagonal transform
D_a^(-(e2-e3)/2), so its spectrum is real for any parameter values on an
undirected graph.  Eigenvalues are computed on that symmetric similar
matrix.  Degree-only Gershgorin bounds give the spectral support interval
without an eigendecomposition, which is what training-time telemetry uses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from pgso.graph import AttributedGraph, degrees
from pgso.operator import DEFAULT_CLAMP_EPS, ParamSet, augmented_degrees

DEFAULT_DENSE_LIMIT = 2000


class DenseLimitExceeded(ValueError):
    """Raised when a dense eigensolve is requested beyond the size limit."""


@dataclass(frozen=True)
class GershgorinReport:
    """Per-node disc centers/radii and the implied support interval."""

    centers: np.ndarray
    radii: np.ndarray
    support_lo: float
    support_hi: float
    n_clamped: int = 0

    def __post_init__(self):
        if np.any(self.radii < 0):
            raise ValueError("radii must be nonnegative")
        if self.support_lo > self.support_hi:
            raise ValueError("support interval is empty")

    @property
    def support_center(self) -> float:
        """Midpoint of the support interval, the telemetry 'center'."""
        return (self.support_lo + self.support_hi) / 2.0


@dataclass(frozen=True)
class SpectralReport:
    """Eigenvalues (full mode) plus Gershgorin bounds.

    Every computed eigenvalue must lie inside the support interval up to
    a scale-relative tolerance; a violation means the operator and its
    bounds went out of sync and is reported as an error.
    """

    gershgorin: GershgorinReport
    eigenvalues: np.ndarray | None = None
    method: str = "bounds_only"

    def __post_init__(self):
        if self.eigenvalues is not None:
            ev = np.asarray(self.eigenvalues, dtype=float)
            if np.any(np.diff(ev) < 0):
                raise ValueError("eigenvalues must be sorted nondecreasing")
            tol = 1e-9 * max(1.0, abs(self.gershgorin.support_hi))
            if ev.size and (
                ev[0] < self.gershgorin.support_lo - tol
                or ev[-1] > self.gershgorin.support_hi + tol
            ):
                raise ValueError(
                    "eigenvalues escape the Gershgorin interval: "
                    f"[{ev[0]}, {ev[-1]}] vs "
                    f"[{self.gershgorin.support_lo}, {self.gershgorin.support_hi}]"
                )
            object.__setattr__(self, "eigenvalues", ev)


def symmetric_similar(
    g: AttributedGraph,
    s: ParamSet,
    clamp_epsilon: float = DEFAULT_CLAMP_EPS,
    dense_limit: int = DEFAULT_DENSE_LIMIT,
) -> np.ndarray:
    """Dense symmetric matrix similar to the operator.

    Conjugating by D_a^((e2-e3)/2) turns the middle term into
    m2 * D_a^((e2+e3)/2) A_a D_a^((e2+e3)/2) while the diagonal terms
    commute, so the result shares the operator's spectrum and is symmetric
    for undirected graphs.
    """
    if g.n > dense_limit:
        raise DenseLimitExceeded(f"n={g.n} exceeds dense limit {dense_limit}")
    b, _ = augmented_degrees(g, s.a, clamp_epsilon)
    half = b ** ((s.e2 + s.e3) / 2.0)
    adense = g.adjacency.toarray()
    mat = s.m2 * (half[:, None] * adense * half[None, :])
    diag = s.m1 * b**s.e1 + s.m2 * s.a * half * half + s.m3
    mat[np.arange(g.n), np.arange(g.n)] += diag
    return (mat + mat.T) / 2.0


def eigenvalues(
    g: AttributedGraph,
    s: ParamSet,
    clamp_epsilon: float = DEFAULT_CLAMP_EPS,
    dense_limit: int = DEFAULT_DENSE_LIMIT,
) -> np.ndarray:
    """Sorted eigenvalues of the operator, via the symmetric similar matrix."""
    sym = symmetric_similar(g, s, clamp_epsilon, dense_limit)
    return scipy.linalg.eigvalsh(sym)


def gershgorin(
    g: AttributedGraph,
    s: ParamSet,
    clamp_epsilon: float = DEFAULT_CLAMP_EPS,
) -> GershgorinReport:
    """Degree-only support bounds.

    Applying the disc theorem to the similar matrix
    D_a^e3 gamma D_a^-e3 = m1 D_a^e1 + m2 D_a^(e2+e3) A_a + m3 I gives
    centers C_i = m1 b_i^e1 + m2 b_i^(e2+e3) a + m3 and radii
    R_i = |m2| b_i^(e2+e3) d_i.  Scales to any n.
    """
    b, n_clamped = augmented_degrees(g, s.a, clamp_epsilon)
    d = degrees(g).astype(float)
    mixed = b ** (s.e2 + s.e3)
    centers = s.m1 * b**s.e1 + s.m2 * mixed * s.a + s.m3
    radii = np.abs(s.m2) * mixed * d
    return GershgorinReport(
        centers=centers,
        radii=radii,
        support_lo=float(np.min(centers - radii)),
        support_hi=float(np.max(centers + radii)),
        n_clamped=n_clamped,
    )


def spectral_report(
    g: AttributedGraph,
    s: ParamSet,
    mode: str = "full",
    clamp_epsilon: float = DEFAULT_CLAMP_EPS,
    dense_limit: int = DEFAULT_DENSE_LIMIT,
) -> SpectralReport:
    """Bounds plus, in full mode, the eigenvalues themselves."""
    bounds = gershgorin(g, s, clamp_epsilon)
    if mode == "bounds_only":
        return SpectralReport(gershgorin=bounds, eigenvalues=None, method="bounds_only")
    if mode != "full":
        raise ValueError(f"unknown mode {mode!r}; use 'full' or 'bounds_only'")
    ev = eigenvalues(g, s, clamp_epsilon, dense_limit)
    return SpectralReport(gershgorin=bounds, eigenvalues=ev, method="dense_symmetric")
