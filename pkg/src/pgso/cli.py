"""Command-line front end.

Subcommands: ``presets``, ``analyze``, ``train``, ``sbm-study``,
``init-sweep``, ``converge`` and ``rerun``.  Every pipeline run writes its
delimited reports, matching figures and a ``run.json`` manifest holding
the fully resolved configuration; ``pgso rerun`` replays a manifest and
reproduces the CSV outputs byte for byte.  Configuration comes from flags
only (no environment variables), so the manifest is complete.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from pgso import __version__, plots, spectral
from pgso.graph import SbmSpec, load_graph, sample_sbm, split_graphs, split_nodes
from pgso.nn import OperatorSlot
from pgso.operator import PRESET_DESCRIPTIONS, PRESETS
from pgso.train import (
    DEFAULT_INITS,
    DEFAULT_SBM_LEVELS,
    FULL_SBM_LEVELS,
    TrainConfig,
    convergence_compare,
    init_sensitivity,
    sbm_sparsity_study,
    train_graph,
    train_node,
)


class CliError(Exception):
    """User-facing error; printed as a one-line diagnostic, exit status 1."""


@dataclasses.dataclass
class RunManifest:
    """Everything needed to replay a run: command, resolved config, seed,
    tool version, input digests and the list of written outputs."""

    command: str
    config: dict
    seed: int
    version: str
    inputs: dict
    outputs: list

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        data = json.loads(text)
        return cls(**{f.name: data[f.name] for f in dataclasses.fields(cls)})


def _format_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


def emit_csv(records, path, header) -> None:
    """RFC-4180-style CSV: header row, LF endings, floats with 17
    significant digits so parsing recovers them exactly."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for record in records:
            writer.writerow([_format_value(v) for v in record])


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return f"sha256:{digest.hexdigest()}"


# ---------------------------------------------------------------------------
# argument parsing


def _add_common_flags(p: argparse.ArgumentParser, epochs: int, dropout: float = 0.5):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--model", choices=("gcn", "gin", "sgc"), default="gcn")
    p.add_argument(
        "--operator",
        default="pgso:gcn_norm",
        help="preset:<name> (fixed), pgso:<name> (trainable) or mpgso:<name> (per layer)",
    )
    p.add_argument(
        "--telemetry",
        choices=("off", "bounds", "full"),
        default="bounds",
        help="spectral telemetry: bounds every epoch, or bounds plus periodic full spectra",
    )
    # blockmodel pipelines default to no dropout: the seed-attribute task
    # carries its signal in precise flow statistics that dropout destroys
    p.add_argument("--dropout", type=float, default=dropout)
    p.add_argument("--clamp-eps", type=float, default=1e-6, dest="clamp_eps")
    p.add_argument("--split", default="0.8,0.1,0.1", help="train,val,test fractions")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument(
        "--plots",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="render figures next to the CSV outputs",
    )


def _add_graph_source(p: argparse.ArgumentParser):
    p.add_argument("--graph", help="path to a graph file")
    p.add_argument("--format", choices=("edge_list", "bundle"), default="bundle")
    p.add_argument(
        "--sbm",
        help="synthesise a blockmodel graph, e.g. k=3,size=200,p=0.5,q=0.25",
    )
    p.add_argument("--graph-dir", dest="graph_dir", help="directory of bundles (graph task)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pgso",
        description="Parametrised graph shift operators: analysis and training pipelines.",
    )
    parser.add_argument("--version", action="version", version=f"pgso {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("presets", help="list the named operator parameter tuples")
    p.add_argument("action", choices=("list",))

    p = sub.add_parser("analyze", help="spectral report for one graph and operator")
    p.add_argument("--graph", required=True)
    p.add_argument("--format", choices=("edge_list", "bundle"), default="bundle")
    p.add_argument("--operator", required=True)
    p.add_argument("--mode", choices=("full", "bounds"), default="full")
    p.add_argument("--clamp-eps", type=float, default=1e-6, dest="clamp_eps")
    p.add_argument("--dense-limit", type=int, default=spectral.DEFAULT_DENSE_LIMIT, dest="dense_limit")
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("train", help="train one model on one graph or dataset")
    _add_graph_source(p)
    _add_common_flags(p, epochs=200)
    p.add_argument("--task", choices=("node", "graph"), default="node")
    p.add_argument("--batch-size", type=int, default=32, dest="batch_size")

    p = sub.add_parser("sbm-study", help="operator parameters across blockmodel sparsity levels")
    _add_common_flags(p, epochs=200, dropout=0.0)
    p.add_argument("--communities", type=int, default=3)
    p.add_argument("--community-size", type=int, default=100, dest="community_size")
    p.add_argument(
        "--levels",
        default=None,
        help="comma-separated p:q pairs, e.g. 0.5:0.25,0.42:0.21 (default: 5 desk-scale levels)",
    )
    p.add_argument(
        "--full-protocol",
        action="store_true",
        dest="full_protocol",
        help="use the 15-level protocol instead of the 5 desk-scale levels",
    )
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--threads", type=int, default=1, help="parallel sweep workers")

    p = sub.add_parser("init-sweep", help="operator trajectories for several initialisations")
    _add_graph_source(p)
    _add_common_flags(p, epochs=150, dropout=0.0)
    p.add_argument("--inits", default=",".join(DEFAULT_INITS))

    p = sub.add_parser("converge", help="fixed operator vs trained operator, same seed")
    _add_graph_source(p)
    _add_common_flags(p, epochs=100)
    p.add_argument("--task", choices=("node", "graph"), default="node")
    p.add_argument("--batch-size", type=int, default=32, dest="batch_size")

    p = sub.add_parser("rerun", help="replay a pipeline from its run.json manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="override the output directory")

    return parser


def parse_args(argv) -> tuple[str, dict]:
    """Resolved command name plus a plain config dict with every default
    materialised."""
    args = build_parser().parse_args(argv)
    config = vars(args)
    command = config.pop("command")
    if "operator" in config:
        OperatorSlot.from_spec(config["operator"], config.get("depth", 1))
    return command, config


# ---------------------------------------------------------------------------
# command execution


def _parse_fractions(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise CliError(f"--split needs three comma-separated fractions, got {text!r}")
    return tuple(float(p) for p in parts)


def _parse_sbm(text: str, default_seed: int) -> SbmSpec:
    fields = {}
    for token in text.split(","):
        key, sep, value = token.partition("=")
        if not sep:
            raise CliError(f"bad --sbm token {token!r}; expected key=value")
        fields[key.strip()] = value.strip()
    try:
        return SbmSpec(
            k=int(fields.get("k", 3)),
            community_size=int(fields.get("size", 200)),
            p=float(fields.get("p", 0.5)),
            q=float(fields.get("q", 0.25)),
            seed=int(fields.get("seed", default_seed)),
        )
    except (KeyError, ValueError) as err:
        raise CliError(f"bad --sbm spec {text!r}: {err}") from err


def _parse_levels(text: str):
    levels = []
    for token in text.split(","):
        p, sep, q = token.partition(":")
        if not sep:
            raise CliError(f"bad --levels token {token!r}; expected p:q")
        levels.append((float(p), float(q)))
    return levels


def _resolve_node_graph(config: dict):
    if config.get("graph"):
        return load_graph(config["graph"], "graph_bundle" if config["format"] == "bundle" else "edge_list")
    if config.get("sbm"):
        return sample_sbm(_parse_sbm(config["sbm"], config["seed"]))
    raise CliError("need one of --graph or --sbm")


def _resolve_dataset(config: dict):
    if not config.get("graph_dir"):
        raise CliError("graph task needs --graph-dir with one bundle per graph")
    paths = sorted(Path(config["graph_dir"]).glob("*.txt"))
    if not paths:
        raise CliError(f"no *.txt bundles under {config['graph_dir']}")
    return [load_graph(p, "graph_bundle") for p in paths], paths


def _train_config(config: dict, task: str = "node") -> TrainConfig:
    return TrainConfig(
        task=task,
        model=config.get("model", "gcn"),
        operator=config["operator"],
        depth=config["depth"],
        hidden=config["hidden"],
        epochs=config["epochs"],
        seed=config["seed"],
        split_fractions=_parse_fractions(config["split"]),
        telemetry={"off": "off", "bounds": "bounds_every_epoch", "full": "full_every_n"}[
            config["telemetry"]
        ],
        clamp_epsilon=config["clamp_eps"],
        dropout=config["dropout"],
        batch_size=config.get("batch_size", 32),
    )


def _write_manifest(command, config, out_dir: Path, inputs, outputs) -> Path:
    manifest = RunManifest(
        command=command,
        config=config,
        seed=config.get("seed", 0),
        version=__version__,
        inputs=inputs,
        outputs=sorted(outputs),
    )
    path = out_dir / "run.json"
    path.write_text(manifest.to_json(), encoding="utf-8")
    return path


def _input_digests(config) -> dict:
    digests = {}
    if config.get("graph"):
        digests[config["graph"]] = _sha256(config["graph"])
    if config.get("graph_dir"):
        for p in sorted(Path(config["graph_dir"]).glob("*.txt")):
            digests[str(p)] = _sha256(p)
    return digests


def _history_csv(history, path):
    emit_csv(history.rows(), path, history.header())


def _cmd_presets(config: dict) -> list[str]:
    width = max(len(name) for name in PRESETS)
    for name, s in PRESETS.items():
        tup = "(" + ", ".join(f"{v:g}" for v in s.as_array()) + ")"
        print(f"{name:<{width}}  {tup:<28}  {PRESET_DESCRIPTIONS[name]}")
    return []


def _cmd_analyze(config: dict) -> list[str]:
    g = load_graph(config["graph"], "graph_bundle" if config["format"] == "bundle" else "edge_list")
    slot = OperatorSlot.from_spec(config["operator"], depth=1)
    s = slot.layer_params(0)
    mode = "full" if config["mode"] == "full" else "bounds_only"
    report = spectral.spectral_report(
        g, s, mode=mode, clamp_epsilon=config["clamp_eps"], dense_limit=config["dense_limit"]
    )
    out = Path(config["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    lam_min = report.eigenvalues[0] if report.eigenvalues is not None else float("nan")
    lam_max = report.eigenvalues[-1] if report.eigenvalues is not None else float("nan")
    row = [lam_min, lam_max, report.gershgorin.support_lo, report.gershgorin.support_hi,
           report.gershgorin.n_clamped]
    emit_csv([row], out, ["lambda_min", "lambda_max", "support_lo", "support_hi", "n_clamped"])
    written = [str(out)]
    if report.eigenvalues is not None:
        sidecar = out.with_suffix(out.suffix + ".eigenvalues.txt")
        sidecar.write_text(
            "\n".join(f"{v:.17g}" for v in report.eigenvalues) + "\n", encoding="utf-8"
        )
        written.append(str(sidecar))
    print(f"support [{report.gershgorin.support_lo:.6g}, {report.gershgorin.support_hi:.6g}]")
    return written


def _cmd_train(config: dict) -> list[str]:
    out_dir = Path(config["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    task = config.get("task", "node")
    cfg = _train_config(config, task)
    if task == "node":
        g = _resolve_node_graph(config)
        splits = split_nodes(g, cfg.split_fractions, stratified=g.labels is not None, seed=cfg.seed)
        history = train_node(cfg, g, splits)
    else:
        dataset, _paths = _resolve_dataset(config)
        labels = np.array([int(g.labels) for g in dataset])
        splits = split_graphs(labels, cfg.split_fractions, stratified=True, seed=cfg.seed)
        history = train_graph(cfg, dataset, splits)
    hist_path = out_dir / "history.csv"
    _history_csv(history, hist_path)
    outputs = [hist_path.name]
    if config["plots"]:
        plots.plot_history(history, out_dir / "history.png")
        outputs.append("history.png")
    _write_manifest("train", config, out_dir, _input_digests(config), outputs)
    print(
        f"best epoch {history.best_epoch}: val {history.best_val_acc:.4f}, "
        f"test {history.best_test_acc:.4f}"
    )
    return [str(out_dir / name) for name in outputs]


def _cmd_sbm_study(config: dict) -> list[str]:
    out_dir = Path(config["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    if config.get("levels"):
        levels = _parse_levels(config["levels"])
    elif config.get("full_protocol"):
        levels = FULL_SBM_LEVELS
    else:
        levels = DEFAULT_SBM_LEVELS
    base = SbmSpec(
        k=config["communities"],
        community_size=config["community_size"],
        p=levels[0][0],
        q=levels[0][1],
        seed=config["seed"],
    )
    cfg = _train_config(config)
    sweep = sbm_sparsity_study(
        base, levels, config["repeats"], cfg, threads=config.get("threads", 1)
    )
    sweep_path = out_dir / "sweep.csv"
    emit_csv(sweep.rows(), sweep_path, sweep.header())
    outputs = [sweep_path.name]
    if config["plots"]:
        plots.plot_sweep(sweep, out_dir / "sweep.png")
        outputs.append("sweep.png")
    _write_manifest("sbm-study", config, out_dir, {}, outputs)
    for cell in sweep.cells:
        a_idx = cell.param_names.index("a")
        print(f"{cell.key}: mean a = {cell.param_mean[a_idx]:.4f}")
    return [str(out_dir / name) for name in outputs]


def _cmd_init_sweep(config: dict) -> list[str]:
    out_dir = Path(config["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    g = _resolve_node_graph(config)
    inits = [name.strip() for name in config["inits"].split(",") if name.strip()]
    cfg = _train_config(config)
    sweep = init_sensitivity(cfg, g, inits)
    sweep_path = out_dir / "sweep.csv"
    emit_csv(sweep.rows(), sweep_path, sweep.header())
    outputs = [sweep_path.name]
    for cell in sweep.cells:
        hist_path = out_dir / f"history_{cell.key}.csv"
        _history_csv(cell.histories[0], hist_path)
        outputs.append(hist_path.name)
    if config["plots"]:
        plots.plot_init_trajectories(sweep, out_dir / "init_trajectories.png")
        outputs.append("init_trajectories.png")
    _write_manifest("init-sweep", config, out_dir, _input_digests(config), outputs)
    for cell in sweep.cells:
        print(f"{cell.key}: final val acc {cell.val_acc_mean:.4f}")
    return [str(out_dir / name) for name in outputs]


def _cmd_converge(config: dict) -> list[str]:
    out_dir = Path(config["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    task = config.get("task", "node")
    cfg = _train_config(config, task)
    if task == "node":
        g = _resolve_node_graph(config)
        data = g
        splits = split_nodes(g, cfg.split_fractions, stratified=True, seed=cfg.seed)
    else:
        data, _paths = _resolve_dataset(config)
        labels = np.array([int(gr.labels) for gr in data])
        splits = split_graphs(labels, cfg.split_fractions, stratified=True, seed=cfg.seed)
    result = convergence_compare(cfg, data, splits)
    fixed_path = out_dir / "history_fixed.csv"
    trained_path = out_dir / "history_pgso.csv"
    _history_csv(result.baseline, fixed_path)
    _history_csv(result.trained, trained_path)
    outputs = [fixed_path.name, trained_path.name]
    if config["plots"]:
        plots.plot_convergence(result, out_dir / "convergence.png")
        outputs.append("convergence.png")
    _write_manifest("converge", config, out_dir, _input_digests(config), outputs)
    print(f"final loss difference (fixed - trained): {result.final_loss_difference:.6g}")
    return [str(out_dir / name) for name in outputs]


def _cmd_rerun(config: dict) -> list[str]:
    manifest = RunManifest.from_json(Path(config["manifest"]).read_text(encoding="utf-8"))
    replay = dict(manifest.config)
    if config.get("out"):
        replay["out"] = config["out"]
    return run_command(manifest.command, replay)


COMMANDS = {
    "presets": _cmd_presets,
    "analyze": _cmd_analyze,
    "train": _cmd_train,
    "sbm-study": _cmd_sbm_study,
    "init-sweep": _cmd_init_sweep,
    "converge": _cmd_converge,
    "rerun": _cmd_rerun,
}


def run_command(command: str, config: dict) -> list[str]:
    return COMMANDS[command](config)


def main(argv=None) -> int:
    try:
        command, config = parse_args(sys.argv[1:] if argv is None else argv)
        run_command(command, config)
    except (CliError, ValueError, OSError, RuntimeError) as err:
        print(f"pgso: error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
