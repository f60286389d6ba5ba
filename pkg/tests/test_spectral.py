"""Spectral module: symmetric similar matrix, eigenvalues, support bounds."""

import math
from fractions import Fraction

import numpy as np
import pytest
import scipy.linalg

from helpers import complete_graph, min_degree_graph, path_graph, random_connected_graph, random_params
from pgso.graph import AttributedGraph, degrees
from pgso.operator import ParamSet, augmented_degrees, build_operator, preset
from pgso.spectral import (
    DenseLimitExceeded,
    eigenvalues,
    gershgorin,
    spectral_report,
    symmetric_similar,
)


class TestSymmetricSimilar:
    def test_equal_exponents_reduce_to_operator(self):
        rng = np.random.default_rng(0)
        g = random_connected_graph(rng, 12)
        vals = rng.uniform(-1.5, 1.5, 7)
        vals[4] = vals[5]
        s = ParamSet(*vals)
        sym = symmetric_similar(g, s)
        dense = build_operator(g, s).toarray()
        assert np.abs(sym - dense).max() <= 1e-12 * max(1, np.abs(dense).max())

    def test_shares_spectrum_with_random_walk_laplacian(self):
        # oracle: general eigensolver on the materialised nonsymmetric matrix
        p3 = path_graph(3)
        s = preset("random_walk_laplacian")
        sym_eigs = scipy.linalg.eigvalsh(symmetric_similar(p3, s))
        general = np.sort(scipy.linalg.eigvals(build_operator(p3, s).toarray()).real)
        assert np.abs(sym_eigs - np.array([0.0, 1.0, 2.0])).max() <= 1e-9
        assert np.abs(sym_eigs - general).max() <= 1e-9

    def test_matches_explicit_conjugation(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            g = random_connected_graph(rng, int(rng.integers(3, 20)))
            s = random_params(rng)
            b, _ = augmented_degrees(g, s.a)
            t = b ** ((s.e2 - s.e3) / 2.0)
            gamma = build_operator(g, s).toarray()
            conjugated = np.diag(1.0 / t) @ gamma @ np.diag(t)
            sym = symmetric_similar(g, s)
            assert np.abs(sym - conjugated).max() <= 1e-10 * max(1, np.abs(sym).max())

    def test_dense_limit(self):
        rng = np.random.default_rng(2)
        g = random_connected_graph(rng, 30)
        with pytest.raises(DenseLimitExceeded):
            symmetric_similar(g, preset("adjacency"), dense_limit=10)


class TestEigenvalues:
    def test_complete_graph_adjacency(self):
        # characteristic polynomial of K3 adjacency: (x+1)^2 (x-2)
        ev = eigenvalues(complete_graph(3), preset("adjacency"))
        assert np.abs(ev - np.array([-1.0, -1.0, 2.0])).max() <= 1e-12

    def test_symmetric_laplacian_has_zero_mode(self):
        # oracle: D^{1/2} 1 is an exact kernel vector of L_sym on connected graphs
        rng = np.random.default_rng(3)
        for _ in range(10):
            g = random_connected_graph(rng, int(rng.integers(3, 30)))
            ev = eigenvalues(g, preset("symmetric_laplacian"))
            assert abs(ev[0]) <= 1e-9

    def test_scaled_identity(self):
        rng = np.random.default_rng(4)
        g = random_connected_graph(rng, 9)
        ev = eigenvalues(g, ParamSet(0, 0, 2.5, 0, 0, 0, 0))
        assert np.abs(ev - 2.5).max() <= 1e-12

    def test_real_spectrum_and_similarity_agreement(self):
        # general nonsymmetric eigensolve has negligible imaginary parts and
        # agrees with the symmetric-similar computation after sorting;
        # clamp-free instances keep roundoff well below the tolerance
        rng = np.random.default_rng(5)
        for _ in range(25):
            g = min_degree_graph(rng, int(rng.integers(5, 50)))
            s = random_params(rng)
            general = scipy.linalg.eigvals(build_operator(g, s).toarray())
            assert np.abs(general.imag).max() <= 1e-8
            sym = eigenvalues(g, s)
            scale = max(1.0, np.abs(sym).max())
            assert np.abs(np.sort(general.real) - sym).max() <= 1e-8 * scale


class TestGershgorin:
    def test_adjacency_support(self):
        rng = np.random.default_rng(6)
        g = random_connected_graph(rng, 15)
        rep = gershgorin(g, preset("adjacency"))
        dmax = degrees(g).max()
        assert np.array_equal(rep.centers, np.zeros(g.n))
        assert np.array_equal(rep.radii, degrees(g).astype(float))
        assert rep.support_lo == -dmax
        assert rep.support_hi == dmax

    def test_gcn_norm_support_rational(self):
        # closed form in exact rational arithmetic: C_i = 1/(d_i+1),
        # R_i = d_i/(d_i+1), support = [-(dmax-1)/(dmax+1), 1]
        rng = np.random.default_rng(7)
        for _ in range(10):
            g = random_connected_graph(rng, int(rng.integers(3, 25)))
            rep = gershgorin(g, preset("gcn_norm"))
            degs = degrees(g)
            lo = min(Fraction(1, d + 1) - Fraction(d, d + 1) for d in degs)
            hi = max(Fraction(1, d + 1) + Fraction(d, d + 1) for d in degs)
            dmax = int(degs.max())
            assert lo == Fraction(-(dmax - 1), dmax + 1)
            assert hi == 1
            assert rep.support_lo == pytest.approx(float(lo), abs=1e-12)
            assert rep.support_hi == pytest.approx(1.0, abs=1e-12)

    def test_symmetric_laplacian_support_within_classic_bound(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            g = random_connected_graph(rng, int(rng.integers(3, 30)))
            rep = gershgorin(g, preset("symmetric_laplacian"))
            assert rep.support_lo >= -1e-12
            assert rep.support_hi <= 2.0 + 1e-12

    def test_scales_without_eigendecomposition(self):
        # bounds need only degrees: a hundred-thousand-node graph is fine
        n = 100_000
        edges = tuple((i, i + 1) for i in range(n - 1))
        g = AttributedGraph(n=n, edges=edges, attributes=np.ones((n, 1)))
        rep = spectral_report(g, preset("gcn_norm"), mode="bounds_only")
        assert rep.eigenvalues is None
        assert rep.gershgorin.support_hi == pytest.approx(1.0, abs=1e-12)

    def test_support_center_is_midpoint(self):
        rng = np.random.default_rng(9)
        g = random_connected_graph(rng, 30)
        rep = gershgorin(g, preset("adjacency"))
        assert rep.support_center == (rep.support_lo + rep.support_hi) / 2


class TestSpectralReport:
    def test_full_mode_path_adjacency(self):
        rep = spectral_report(path_graph(3), preset("adjacency"), mode="full")
        expected = np.array([-math.sqrt(2), 0.0, math.sqrt(2)])
        assert np.abs(rep.eigenvalues - expected).max() <= 1e-12
        assert rep.gershgorin.support_lo <= rep.eigenvalues[0]
        assert rep.gershgorin.support_hi >= rep.eigenvalues[-1]
        assert rep.method == "dense_symmetric"

    def test_bounds_only_mode_skips_eigensolve(self):
        rng = np.random.default_rng(10)
        g = random_connected_graph(rng, 100)
        rep = spectral_report(g, preset("adjacency"), mode="bounds_only", dense_limit=10)
        assert rep.eigenvalues is None
        assert rep.method == "bounds_only"

    def test_containment_invariant(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            g = min_degree_graph(rng, int(rng.integers(5, 40)))
            s = random_params(rng)
            rep = spectral_report(g, s, mode="full")
            tol = 1e-9 * max(1.0, abs(rep.gershgorin.support_hi))
            assert rep.eigenvalues[0] >= rep.gershgorin.support_lo - tol
            assert rep.eigenvalues[-1] <= rep.gershgorin.support_hi + tol
