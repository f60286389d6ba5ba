"""Experiment pipelines: classification training loops with spectral
telemetry, the blockmodel sparsity sweep, the initialisation-sensitivity
sweep, and fixed-operator vs trained-operator convergence comparisons.

Every pipeline is deterministic given its config seed: graph sampling,
splits, weight initialisation, dropout masks and batch order all derive
from it through named seed sequences.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from pgso import spectral
from pgso.graph import AttributedGraph, SbmSpec, SplitAssignment, sample_sbm, split_nodes
from pgso.nn import (
    GnnModel,
    NonFiniteGradientError,
    OperatorSlot,
    accuracy,
    adam_step,
    init_adam,
    softmax_cross_entropy,
)
from pgso.operator import PARAM_NAMES

TELEMETRY_MODES = ("off", "bounds_every_epoch", "full_every_n")


class TrainingDiverged(RuntimeError):
    """Raised when a loss, parameter or gradient goes NaN/Inf."""


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one training run."""

    task: str = "node"
    model: str = "gcn"
    operator: str = "pgso:gcn_norm"
    depth: int = 3
    hidden: int = 64
    epochs: int = 200
    seed: int = 0
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    telemetry: str = "bounds_every_epoch"
    full_every: int = 25
    clamp_epsilon: float = 1e-6
    dropout: float = 0.5
    lr_exponential: float = 0.005
    lr_other: float = 0.01
    weight_decay: float = 5e-4
    lr_decay: float = 0.5
    lr_decay_every: int = 50
    batch_size: int = 32
    readout: str = "sum"
    dense_limit: int = spectral.DEFAULT_DENSE_LIMIT

    def __post_init__(self):
        if self.epochs < 1 or self.depth < 1 or self.hidden < 1:
            raise ValueError("epochs, depth and hidden must all be at least 1")
        if self.telemetry not in TELEMETRY_MODES:
            raise ValueError(f"telemetry must be one of {TELEMETRY_MODES}")


@dataclass(frozen=True)
class EpochRecord:
    """One telemetry row: loss and operator state at the epoch's start,
    accuracies evaluated after the epoch's update."""

    epoch: int
    train_loss: float
    val_acc: float
    test_acc: float
    params: np.ndarray
    support_lo: float
    support_hi: float
    n_clamped: int
    train_acc: float = float("nan")


@dataclass
class TrainHistory:
    records: list[EpochRecord]
    param_names: list[str]
    best_epoch: int
    best_val_acc: float
    best_test_acc: float
    final_params: np.ndarray
    final_val_acc: float
    final_test_acc: float

    def header(self) -> list[str]:
        return (
            ["epoch", "loss", "val_acc", "test_acc"]
            + list(self.param_names)
            + ["support_lo", "support_hi", "clamps"]
        )

    def rows(self) -> list[list]:
        out = []
        for r in self.records:
            out.append(
                [r.epoch, r.train_loss, r.val_acc, r.test_acc]
                + list(r.params)
                + [r.support_lo, r.support_hi, r.n_clamped]
            )
        return out


def derive_seed(*keys: int) -> int:
    """Deterministic child seed from a tuple of integer keys."""
    return int(np.random.SeedSequence(list(keys)).generate_state(1)[0])


def _operator_bounds(model: GnnModel, g: AttributedGraph):
    """Union of the per-layer support intervals (a shared tuple gives a
    single interval)."""
    tuples = (
        model.operator_tuples() if model.slot.mode == "mpgso" else [model.operator_params(0)]
    )
    lo, hi, clamped = math.inf, -math.inf, 0
    for s in tuples:
        rep = spectral.gershgorin(g, s, model.clamp_epsilon)
        lo = min(lo, rep.support_lo)
        hi = max(hi, rep.support_hi)
        clamped = max(clamped, rep.n_clamped)
    return lo, hi, clamped


def _telemetry(model: GnnModel, g: AttributedGraph, config: TrainConfig, epoch: int):
    if config.telemetry == "off":
        return math.nan, math.nan, 0
    lo, hi, clamped = _operator_bounds(model, g)
    if (
        config.telemetry == "full_every_n"
        and epoch % config.full_every == 0
        and g.n <= config.dense_limit
    ):
        # full report validates eigenvalue containment in the logged bounds
        for s in set(model.operator_tuples()):
            spectral.spectral_report(
                g, s, mode="full", clamp_epsilon=model.clamp_epsilon,
                dense_limit=config.dense_limit,
            )
    return lo, hi, clamped


def _finish_history(records, model, val_acc, test_acc) -> TrainHistory:
    best = max(range(len(records)), key=lambda i: (records[i].val_acc, -i))
    return TrainHistory(
        records=records,
        param_names=model.trajectory_names(),
        best_epoch=best,
        best_val_acc=records[best].val_acc,
        best_test_acc=records[best].test_acc,
        final_params=model.trajectory_values(),
        final_val_acc=val_acc,
        final_test_acc=test_acc,
    )


def build_model(config: TrainConfig, in_dim: int, classes: int, task: str) -> GnnModel:
    slot = OperatorSlot.from_spec(config.operator, config.depth)
    return GnnModel(
        model=config.model,
        task=task,
        in_dim=in_dim,
        hidden=config.hidden,
        out_dim=classes,
        depth=config.depth,
        slot=slot,
        seed=np.random.SeedSequence([config.seed, 0]),
        dropout=config.dropout,
        readout_mode=config.readout,
        clamp_epsilon=config.clamp_epsilon,
    )


def train_node(config: TrainConfig, g: AttributedGraph, splits: SplitAssignment) -> TrainHistory:
    """Full-graph node-classification training with per-epoch telemetry."""
    if g.labels is None or np.isscalar(g.labels):
        raise ValueError("node training needs per-node labels")
    model = build_model(config, g.d, g.inferred_num_classes(), "node")
    dropout_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    state = init_adam(
        model.params,
        lr_exponential=config.lr_exponential,
        lr_other=config.lr_other,
        weight_decay=config.weight_decay,
        lr_decay=config.lr_decay,
        lr_decay_every=config.lr_decay_every,
    )
    records = []
    val_acc = test_acc = 0.0
    for epoch in range(config.epochs):
        state.epoch = epoch
        snapshot = model.trajectory_values()
        if not np.all(np.isfinite(snapshot)):
            raise TrainingDiverged(f"non-finite operator parameters at epoch {epoch}")
        lo, hi, clamped = _telemetry(model, g, config, epoch)
        logits, cache = model.forward(g, training=True, dropout_rng=dropout_rng)
        loss, dlogits = softmax_cross_entropy(logits, g.labels, splits.train)
        if not math.isfinite(loss):
            raise TrainingDiverged(f"non-finite training loss at epoch {epoch}")
        grads = model.backward(cache, dlogits)
        try:
            model.params = adam_step(state, model.params, grads)
        except NonFiniteGradientError as err:
            raise TrainingDiverged(f"epoch {epoch}: {err}") from err
        eval_logits, _ = model.forward(g, training=False)
        train_acc = accuracy(eval_logits, g.labels, splits.train)
        val_acc = accuracy(eval_logits, g.labels, splits.validation)
        test_acc = accuracy(eval_logits, g.labels, splits.test)
        records.append(
            EpochRecord(epoch, loss, val_acc, test_acc, snapshot, lo, hi, clamped,
                        train_acc=train_acc)
        )
    return _finish_history(records, model, val_acc, test_acc)


def train_graph(
    config: TrainConfig, dataset: list[AttributedGraph], splits: SplitAssignment
) -> TrainHistory:
    """Minibatch graph-classification training: graphs are looped within a
    batch and their loss gradients averaged."""
    labels = np.array([_graph_label(g) for g in dataset])
    classes = int(labels.max()) + 1
    in_dim = dataset[0].d
    if any(g.d != in_dim for g in dataset):
        raise ValueError("all graphs must share the attribute dimension")
    model = build_model(config, in_dim, classes, "graph")
    dropout_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    batch_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2]))
    state = init_adam(
        model.params,
        lr_exponential=config.lr_exponential,
        lr_other=config.lr_other,
        weight_decay=config.weight_decay,
        lr_decay=config.lr_decay,
        lr_decay_every=config.lr_decay_every,
    )
    records = []
    val_acc = test_acc = 0.0
    for epoch in range(config.epochs):
        state.epoch = epoch
        snapshot = model.trajectory_values()
        if not np.all(np.isfinite(snapshot)):
            raise TrainingDiverged(f"non-finite operator parameters at epoch {epoch}")
        lo, hi, clamped = _dataset_bounds(model, dataset, config)
        order = batch_rng.permutation(splits.train)
        epoch_loss = 0.0
        for start in range(0, order.size, config.batch_size):
            batch = order[start : start + config.batch_size]
            grads = {k: np.zeros_like(np.asarray(v, dtype=float)) for k, v in model.params.items()}
            batch_loss = 0.0
            for gi in batch:
                g = dataset[gi]
                logits, cache = model.forward(g, training=True, dropout_rng=dropout_rng)
                loss_i, dl = softmax_cross_entropy(logits[None, :], labels[gi : gi + 1])
                g_grads = model.backward(cache, dl[0])
                for key in grads:
                    grads[key] = grads[key] + g_grads[key] / batch.size
                batch_loss += loss_i / batch.size
            if not math.isfinite(batch_loss):
                raise TrainingDiverged(f"non-finite training loss at epoch {epoch}")
            try:
                model.params = adam_step(state, model.params, grads)
            except NonFiniteGradientError as err:
                raise TrainingDiverged(f"epoch {epoch}: {err}") from err
            epoch_loss += batch_loss * batch.size
        train_loss = epoch_loss / order.size
        train_acc = _graph_accuracy(model, dataset, labels, splits.train)
        val_acc = _graph_accuracy(model, dataset, labels, splits.validation)
        test_acc = _graph_accuracy(model, dataset, labels, splits.test)
        records.append(
            EpochRecord(epoch, train_loss, val_acc, test_acc, snapshot, lo, hi, clamped,
                        train_acc=train_acc)
        )
    return _finish_history(records, model, val_acc, test_acc)


def _graph_label(g: AttributedGraph) -> int:
    if g.labels is None or not np.isscalar(g.labels):
        raise ValueError(f"graph {g.name!r} needs a single integer label")
    return int(g.labels)


def _graph_accuracy(model, dataset, labels, indices) -> float:
    hits = 0
    for gi in indices:
        logits, _ = model.forward(dataset[gi], training=False)
        hits += int(np.argmax(logits) == labels[gi])
    return hits / len(indices)


def _dataset_bounds(model, dataset, config):
    if config.telemetry == "off":
        return math.nan, math.nan, 0
    lo, hi, clamped = math.inf, -math.inf, 0
    for g in dataset:
        glo, ghi, gcl = _operator_bounds(model, g)
        lo, hi, clamped = min(lo, glo), max(hi, ghi), max(clamped, gcl)
    return lo, hi, clamped


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class SweepCell:
    """Aggregated results of the repeats within one grid cell."""

    key: str
    param_names: list[str]
    param_mean: np.ndarray
    param_std: np.ndarray
    val_acc_mean: float
    val_acc_std: float
    test_acc_mean: float
    test_acc_std: float
    extras: dict[str, float] = field(default_factory=dict)
    histories: list[TrainHistory] | None = None


@dataclass
class SweepResult:
    axis: str
    cells: list[SweepCell]

    def header(self) -> list[str]:
        return ["level", "param", "mean", "std"]

    def rows(self) -> list[list]:
        out = []
        for cell in self.cells:
            for name, mean, std in zip(cell.param_names, cell.param_mean, cell.param_std):
                out.append([cell.key, name, mean, std])
            out.append([cell.key, "val_acc", cell.val_acc_mean, cell.val_acc_std])
            out.append([cell.key, "test_acc", cell.test_acc_mean, cell.test_acc_std])
            for name, value in cell.extras.items():
                out.append([cell.key, name, value, 0.0])
        return out


DEFAULT_SBM_LEVELS = (
    (0.50, 0.25),
    (0.42, 0.21),
    (0.36, 0.18),
    (0.29, 0.145),
    (0.22, 0.11),
)

FULL_SBM_LEVELS = tuple(
    (round(0.50 - 0.02 * i, 2), round((0.50 - 0.02 * i) / 2, 3)) for i in range(15)
)


def sbm_sparsity_study(
    base: SbmSpec,
    levels,
    repeats: int,
    config: TrainConfig,
    threads: int = 1,
    keep_histories: bool = False,
) -> SweepResult:
    """Train on fresh blockmodel samples at each sparsity level.

    The p/q ratio must be constant across levels, so that community
    detectability stays fixed while the graphs get sparser.  Each cell
    aggregates the post-training operator parameters over ``repeats``
    independent samples.
    """
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    levels = [(float(p), float(q)) for p, q in levels]
    ratios = {round(p / q, 9) for p, q in levels if q > 0}
    if len(ratios) > 1:
        raise ValueError(f"levels do not keep p/q constant: ratios {sorted(ratios)}")

    def run_cell(li):
        p, q = levels[li]
        finals, vals, tests, histories = [], [], [], []
        names = _slot_param_names(config)
        for r in range(repeats):
            spec = SbmSpec(base.k, base.community_size, p, q, seed=derive_seed(config.seed, li, r, 0))
            g = sample_sbm(spec)
            splits = split_nodes(
                g, config.split_fractions, stratified=True, seed=derive_seed(config.seed, li, r, 1)
            )
            run_cfg = replace(config, seed=derive_seed(config.seed, li, r, 2))
            hist = train_node(run_cfg, g, splits)
            names = hist.param_names
            finals.append(hist.final_params)
            vals.append(hist.final_val_acc)
            tests.append(hist.final_test_acc)
            if keep_histories:
                histories.append(hist)
        finals = np.asarray(finals)
        extras = {}
        if "e2" in names and "e3" in names:
            e2 = finals[:, names.index("e2")]
            e3 = finals[:, names.index("e3")]
            extras["abs_e2_minus_e3"] = float(np.mean(np.abs(e2 - e3)))
        return SweepCell(
            key=f"p={p:g},q={q:g}",
            param_names=names,
            param_mean=finals.mean(axis=0),
            param_std=finals.std(axis=0),
            val_acc_mean=float(np.mean(vals)),
            val_acc_std=float(np.std(vals)),
            test_acc_mean=float(np.mean(tests)),
            test_acc_std=float(np.std(tests)),
            extras=extras,
            histories=histories or None,
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            cells = list(pool.map(run_cell, range(len(levels))))
    else:
        cells = [run_cell(li) for li in range(len(levels))]
    return SweepResult(axis="sparsity", cells=cells)


def _slot_param_names(config: TrainConfig) -> list[str]:
    slot = OperatorSlot.from_spec(config.operator, config.depth)
    if slot.mode == "mpgso":
        return [f"{n}_l{l + 1}" for l in range(config.depth) for n in PARAM_NAMES]
    return list(PARAM_NAMES)


DEFAULT_INITS = (
    "gcn_norm",
    "adjacency",
    "random_walk_laplacian",
    "symmetric_laplacian",
    "all_zeros",
)


def init_sensitivity(
    config: TrainConfig,
    g: AttributedGraph,
    inits=DEFAULT_INITS,
    splits: SplitAssignment | None = None,
) -> SweepResult:
    """One training run per operator initialisation, with full trajectories.

    All runs share the seed, weights and splits, so only the operator
    starting point differs.
    """
    if not inits:
        raise ValueError("need at least one initialisation")
    if splits is None:
        splits = split_nodes(g, config.split_fractions, stratified=True, seed=config.seed)
    cells = []
    for name in inits:
        run_cfg = replace(config, operator=f"pgso:{name}")
        hist = train_node(run_cfg, g, splits)
        cells.append(
            SweepCell(
                key=name,
                param_names=hist.param_names,
                param_mean=hist.final_params,
                param_std=np.zeros_like(hist.final_params),
                val_acc_mean=hist.final_val_acc,
                val_acc_std=0.0,
                test_acc_mean=hist.final_test_acc,
                test_acc_std=0.0,
                histories=[hist],
            )
        )
    return SweepResult(axis="initialisation", cells=cells)


@dataclass
class ConvergenceResult:
    """Aligned histories of a fixed-operator baseline and the trainable
    operator started at the same preset, same seed and hyperparameters."""

    baseline: TrainHistory
    trained: TrainHistory

    @property
    def final_loss_difference(self) -> float:
        return self.baseline.records[-1].train_loss - self.trained.records[-1].train_loss


def convergence_compare(
    config: TrainConfig,
    data,
    splits: SplitAssignment,
) -> ConvergenceResult:
    """Train the fixed-operator and trainable-operator arms under identical
    configuration; epoch-0 losses are bitwise identical by construction."""
    _, _, name = config.operator.partition(":")
    if not name:
        name = config.operator
    runner = train_node if config.task == "node" else train_graph
    baseline = runner(replace(config, operator=f"preset:{name}"), data, splits)
    trained = runner(replace(config, operator=f"pgso:{name}"), data, splits)
    return ConvergenceResult(baseline=baseline, trained=trained)
