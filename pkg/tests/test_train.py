"""Training pipelines, sweeps and the convergence comparison."""

import math

import numpy as np
import pytest

from pgso.graph import AttributedGraph, SbmSpec, onehot_degree_attributes, sample_sbm, split_graphs, split_nodes
from pgso.operator import preset
from pgso.train import (
    ConvergenceResult,
    TrainConfig,
    TrainingDiverged,
    convergence_compare,
    derive_seed,
    init_sensitivity,
    sbm_sparsity_study,
    train_graph,
    train_node,
)


def small_sbm(seed=0, size=30):
    return sample_sbm(SbmSpec(k=3, community_size=size, p=0.5, q=0.25, seed=seed))


def tiny_config(**overrides):
    base = dict(
        task="node", model="gcn", operator="pgso:gcn_norm", depth=2, hidden=8,
        epochs=3, seed=0, telemetry="bounds_every_epoch", dropout=0.0,
    )
    base.update(overrides)
    return TrainConfig(**base)


def ring_graph(n, extra=()):
    edges = {(i, (i + 1) % n) for i in range(n)}
    edges = {(min(u, v), max(u, v)) for u, v in edges} | set(extra)
    return tuple(sorted(edges))


def degree_separable_dataset(n_graphs=20, n=10, seed=0):
    """Two classes told apart by mean degree: rings (degree ~2) vs cliques."""
    rng = np.random.default_rng(seed)
    graphs = []
    for i in range(n_graphs):
        cls = i % 2
        if cls == 0:
            extra_edge = (int(rng.integers(0, n // 2)), int(rng.integers(n // 2, n)))
            edges = ring_graph(n, extra=[(min(extra_edge), max(extra_edge))] if extra_edge[0] != extra_edge[1] else [])
        else:
            edges = tuple((u, v) for u in range(n) for v in range(u + 1, n))
        g = AttributedGraph(n=n, edges=edges, attributes=np.ones((n, 1)), labels=cls,
                            num_classes=2, name=f"g{i}")
        graphs.append(onehot_degree_attributes(g, max_degree=n - 1))
    return graphs


class TestTrainNode:
    def test_single_epoch_yields_single_record(self):
        g = small_sbm()
        splits = split_nodes(g, (0.8, 0.1, 0.1), seed=0)
        hist = train_node(tiny_config(epochs=1), g, splits)
        assert len(hist.records) == 1

    def test_fixed_operator_trajectory_constant(self):
        g = small_sbm()
        splits = split_nodes(g, (0.8, 0.1, 0.1), seed=0)
        hist = train_node(tiny_config(operator="preset:gcn_norm", epochs=4), g, splits)
        first = hist.records[0].params
        for r in hist.records:
            assert np.array_equal(r.params, first)
        assert np.array_equal(first, preset("gcn_norm").as_array())

    def test_determinism(self):
        g = small_sbm()
        splits = split_nodes(g, (0.8, 0.1, 0.1), seed=0)
        a = train_node(tiny_config(epochs=4, dropout=0.5), g, splits)
        b = train_node(tiny_config(epochs=4, dropout=0.5), g, splits)
        for ra, rb in zip(a.records, b.records):
            assert ra.train_loss == rb.train_loss
            assert ra.val_acc == rb.val_acc
            assert np.array_equal(ra.params, rb.params)
        assert np.array_equal(a.final_params, b.final_params)

    def test_epoch_zero_equivalence_of_fixed_and_trainable(self):
        g = small_sbm()
        splits = split_nodes(g, (0.8, 0.1, 0.1), seed=0)
        fixed = train_node(tiny_config(operator="preset:gcn_norm", epochs=2), g, splits)
        trained = train_node(tiny_config(operator="pgso:gcn_norm", epochs=2), g, splits)
        assert fixed.records[0].train_loss == trained.records[0].train_loss

    def test_mpgso_records_per_layer_parameters(self):
        g = small_sbm()
        splits = split_nodes(g, (0.8, 0.1, 0.1), seed=0)
        hist = train_node(tiny_config(operator="mpgso:adjacency", depth=2), g, splits)
        assert len(hist.param_names) == 14
        assert hist.param_names[0] == "m1_l1"
        expected = np.concatenate([preset("adjacency").as_array()] * 2)
        assert np.array_equal(hist.records[0].params, expected)

    def test_telemetry_off_yields_nan_bounds(self):
        g = small_sbm()
        splits = split_nodes(g, (0.8, 0.1, 0.1), seed=0)
        hist = train_node(tiny_config(telemetry="off"), g, splits)
        assert math.isnan(hist.records[0].support_lo)

    def test_full_telemetry_validates_containment(self):
        g = small_sbm(size=10)
        splits = split_nodes(g, (0.8, 0.1, 0.1), seed=0)
        hist = train_node(tiny_config(telemetry="full_every_n", epochs=3), g, splits)
        assert np.isfinite(hist.records[0].support_lo)
        assert hist.records[0].support_lo <= hist.records[0].support_hi

    @pytest.mark.filterwarnings("ignore:invalid value encountered")
    @pytest.mark.filterwarnings("ignore:overflow encountered")
    def test_divergence_aborts_with_diagnostic(self):
        g = small_sbm(size=10)
        splits = split_nodes(g, (0.8, 0.1, 0.1), seed=0)
        cfg = tiny_config(epochs=5, lr_other=1e200, lr_exponential=1e200, telemetry="off")
        with pytest.raises(TrainingDiverged):
            train_node(cfg, g, splits)

    def test_best_epoch_selection_earliest_tie(self):
        g = small_sbm()
        splits = split_nodes(g, (0.8, 0.1, 0.1), seed=0)
        hist = train_node(tiny_config(epochs=5), g, splits)
        accs = [r.val_acc for r in hist.records]
        best = hist.best_epoch
        assert accs[best] == max(accs)
        assert all(accs[e] < accs[best] for e in range(best))


class TestTrainGraph:
    def test_degree_separable_dataset_reaches_full_train_accuracy(self):
        dataset = degree_separable_dataset()
        labels = np.array([int(g.labels) for g in dataset])
        splits = split_graphs(labels, (0.6, 0.2, 0.2), stratified=True, seed=0)
        cfg = TrainConfig(task="graph", model="gin", operator="pgso:adjacency",
                          depth=2, hidden=8, epochs=200, seed=0, telemetry="off",
                          dropout=0.0, batch_size=4)
        hist = train_graph(cfg, dataset, splits)
        assert max(r.train_acc for r in hist.records) == 1.0

    def test_batch_gradient_is_average_of_graph_gradients(self):
        # averaging identity behind full-batch accumulation
        from pgso.nn import GnnModel, OperatorSlot, softmax_cross_entropy

        dataset = degree_separable_dataset(n_graphs=6)
        labels = np.array([int(g.labels) for g in dataset])
        model = GnnModel("gin", "graph", in_dim=10, hidden=4, out_dim=2, depth=2,
                         slot=OperatorSlot(mode="pgso", shared=preset("adjacency")),
                         seed=0, dropout=0.0)
        per_graph = []
        for gi in range(len(dataset)):
            logits, cache = model.forward(dataset[gi], training=False)
            _, dl = softmax_cross_entropy(logits[None, :], labels[gi : gi + 1])
            per_graph.append(model.backward(cache, dl[0]))
        averaged = {k: np.mean([g[k] for g in per_graph], axis=0) for k in per_graph[0]}
        accumulated = {k: np.zeros_like(np.asarray(v, dtype=float)) for k, v in model.params.items()}
        for grads in per_graph:
            for k in accumulated:
                accumulated[k] = accumulated[k] + grads[k] / len(dataset)
        for k in averaged:
            assert np.allclose(averaged[k], accumulated[k], rtol=1e-12, atol=1e-15)

    def test_determinism(self):
        dataset = degree_separable_dataset(n_graphs=8)
        labels = np.array([int(g.labels) for g in dataset])
        splits = split_graphs(labels, (0.5, 0.25, 0.25), stratified=True, seed=1)
        cfg = TrainConfig(task="graph", model="gcn", operator="pgso:gcn_norm",
                          depth=2, hidden=4, epochs=3, seed=3, telemetry="off",
                          dropout=0.5, batch_size=2)
        a = train_graph(cfg, dataset, splits)
        b = train_graph(cfg, dataset, splits)
        assert [r.train_loss for r in a.records] == [r.train_loss for r in b.records]


class TestSbmStudy:
    def test_single_cell_degenerate_statistics(self):
        base = SbmSpec(k=3, community_size=20, p=0.5, q=0.25, seed=0)
        cfg = tiny_config(epochs=2)
        sweep = sbm_sparsity_study(base, [(0.5, 0.25)], repeats=1, config=cfg)
        cell = sweep.cells[0]
        assert np.array_equal(cell.param_std, np.zeros(7))
        assert cell.val_acc_std == 0.0

    def test_ratio_must_stay_constant(self):
        base = SbmSpec(k=3, community_size=20, p=0.5, q=0.25, seed=0)
        with pytest.raises(ValueError, match="ratio"):
            sbm_sparsity_study(base, [(0.5, 0.25), (0.4, 0.1)], repeats=1, config=tiny_config())

    def test_two_levels_two_repeats(self):
        base = SbmSpec(k=3, community_size=15, p=0.5, q=0.25, seed=0)
        cfg = tiny_config(epochs=2)
        sweep = sbm_sparsity_study(base, [(0.5, 0.25), (0.4, 0.2)], repeats=2, config=cfg)
        assert len(sweep.cells) == 2
        assert all(len(c.param_mean) == 7 for c in sweep.cells)
        assert all("abs_e2_minus_e3" in c.extras for c in sweep.cells)
        rows = sweep.rows()
        assert ["p=0.5,q=0.25", "m1"] == [rows[0][0], rows[0][1]]

    def test_thread_pool_matches_serial(self):
        base = SbmSpec(k=3, community_size=12, p=0.5, q=0.25, seed=0)
        cfg = tiny_config(epochs=2)
        serial = sbm_sparsity_study(base, [(0.5, 0.25), (0.4, 0.2)], repeats=2, config=cfg)
        threaded = sbm_sparsity_study(base, [(0.5, 0.25), (0.4, 0.2)], repeats=2, config=cfg, threads=2)
        for a, b in zip(serial.cells, threaded.cells):
            assert np.array_equal(a.param_mean, b.param_mean)


class TestInitSensitivity:
    def test_trajectories_start_exactly_at_presets(self):
        g = small_sbm(size=15)
        cfg = tiny_config(epochs=2)
        sweep = init_sensitivity(cfg, g, inits=("gcn_norm", "adjacency", "all_zeros"))
        for cell in sweep.cells:
            start = cell.histories[0].records[0].params
            assert np.array_equal(start, preset(cell.key).as_array())

    def test_all_zeros_initial_logits_constant(self):
        from pgso.nn import GnnModel, OperatorSlot

        g = small_sbm(size=15)
        model = GnnModel("gcn", "node", in_dim=g.d, hidden=8, out_dim=3, depth=2,
                         slot=OperatorSlot(mode="pgso", shared=preset("all_zeros")), seed=0)
        logits, _ = model.forward(g, training=False)
        assert np.allclose(logits, logits[0], atol=1e-14)

    def test_single_init_matches_direct_train(self):
        g = small_sbm(size=15)
        splits = split_nodes(g, (0.8, 0.1, 0.1), stratified=True, seed=tiny_config().seed)
        sweep = init_sensitivity(tiny_config(epochs=2), g, inits=("gcn_norm",), splits=splits)
        direct = train_node(tiny_config(epochs=2, operator="pgso:gcn_norm"), g, splits)
        assert sweep.cells[0].histories[0].records[-1].train_loss == direct.records[-1].train_loss


class TestConvergenceCompare:
    def test_graph_task_arms(self):
        dataset = degree_separable_dataset(n_graphs=8)
        labels = np.array([int(g.labels) for g in dataset])
        splits = split_graphs(labels, (0.5, 0.25, 0.25), stratified=True, seed=0)
        cfg = TrainConfig(task="graph", model="gin", operator="pgso:adjacency",
                          depth=2, hidden=4, epochs=3, seed=0, telemetry="off",
                          dropout=0.0, batch_size=4)
        result = convergence_compare(cfg, dataset, splits)
        assert result.baseline.records[0].train_loss == result.trained.records[0].train_loss

    def test_aligned_histories_and_epoch_zero_bitwise_equality(self):
        g = small_sbm(size=20)
        splits = split_nodes(g, (0.8, 0.1, 0.1), seed=0)
        cfg = tiny_config(epochs=4, operator="pgso:gcn_norm")
        result = convergence_compare(cfg, g, splits)
        assert isinstance(result, ConvergenceResult)
        assert len(result.baseline.records) == len(result.trained.records) == 4
        assert result.baseline.records[0].train_loss == result.trained.records[0].train_loss
        assert math.isfinite(result.final_loss_difference)

    def test_baseline_arm_is_fixed(self):
        g = small_sbm(size=20)
        splits = split_nodes(g, (0.8, 0.1, 0.1), seed=0)
        result = convergence_compare(tiny_config(epochs=3), g, splits)
        first = result.baseline.records[0].params
        assert all(np.array_equal(r.params, first) for r in result.baseline.records)
        moved = any(
            not np.array_equal(r.params, first) for r in result.trained.records[1:]
        )
        assert moved


class TestDeriveSeed:
    def test_stable_and_distinct(self):
        assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
        assert derive_seed(1, 2, 3) != derive_seed(1, 2, 4)


class TestLevelSets:
    def test_full_protocol_levels(self):
        from pgso.train import FULL_SBM_LEVELS

        assert len(FULL_SBM_LEVELS) == 15
        assert FULL_SBM_LEVELS[0] == (0.50, 0.25)
        assert FULL_SBM_LEVELS[-1] == (0.22, 0.11)
        for p, q in FULL_SBM_LEVELS:
            assert round(p / q, 9) == 2.0

    def test_desk_scale_levels_keep_detectability(self):
        from pgso.train import DEFAULT_SBM_LEVELS

        assert len(DEFAULT_SBM_LEVELS) == 5
        for p, q in DEFAULT_SBM_LEVELS:
            assert round(p / q, 9) == 2.0
