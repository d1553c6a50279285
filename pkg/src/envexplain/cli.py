"""Command-line pipeline around the dataset, classifier, and explainer.

One subcommand per stage, all driven by the same JSON configuration and
writing into one run directory:

    gen              dataset.jsonl
    train-gnn        model/
    fit-npaf         envmodel.json
    train-explainer  explainer/ and log.csv
    explain          explanations/graph-NNNN.dot and .json
    evaluate         metrics.csv, metrics.json, metrics_rows.csv
    ablate           ablate/<variant>/ and ablation.csv
    sweep            sweep/<axis>-<value>/ and sweep.csv
    bench            bench.csv

Every artifact gets a sidecar recording the configuration hash, so later
stages can refuse inputs produced under a different configuration. Exit
codes: 0 success, 2 missing artifact (the path is printed), 3 invalid
configuration (the key is printed).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

from .classifier import GraphClassifier
from .config import (
    ConfigError,
    RunConfig,
    analyzer_params,
    classifier_params,
    config_hash,
    config_to_dict,
    explainer_params,
    load_config,
)
from .datagen import generate, split
from .environments import EnvironmentAnalyzer
from .explainer import SubgraphExplainer
from .graphs import deserialize, export_dot, serialize
from .gvag import LossBreakdown
from .metrics import SUMMARY_FIELDS, evaluate, write_reports
from .sampling import runtime_probe

__all__ = ["main", "MissingArtifact"]

ABLATION_VARIANTS = {
    "no-reward": {"w_reward": 0.0},
    "no-contrast": {"w_contrast": 0.0},
    "no-agreement": {"w_agreement": 0.0},
    "no-risk": {"w_risk": 0.0},
    "single-env": {"num_envs": 1},
}

SWEEP_AXES = {
    "density": ("densities", "prior_density"),
    "reward": ("reward_weights", "w_reward"),
    "recon": ("recon_weights", "w_recon"),
}


class MissingArtifact(FileNotFoundError):
    """A pipeline input that an earlier subcommand should have produced."""

    def __init__(self, path: Path, hint: str):
        self.path = path
        super().__init__("missing %s: %s" % (hint, path))


# -- artifact plumbing ---------------------------------------------------

def _meta_path(target: Path) -> Path:
    return target / "meta.json" if target.is_dir() else target.with_name(target.name + ".meta.json")


def _write_meta(target: Path, cfg: RunConfig, **extra) -> None:
    payload = {"config_hash": config_hash(cfg), **extra}
    with _meta_path(target).open("w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_meta(target: Path) -> dict:
    path = _meta_path(target)
    if not path.exists():
        raise MissingArtifact(path, "artifact metadata")
    return json.loads(path.read_text())


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise MissingArtifact(path, hint)
    return path


def _load_dataset(run_dir: Path):
    return deserialize(_require(run_dir / "dataset.jsonl", "dataset (run `gen` first)"))


def _model_file(run_dir: Path) -> Path:
    return run_dir / "model" / "classifier.json"


def _load_model(run_dir: Path) -> GraphClassifier:
    return GraphClassifier.load(_require(_model_file(run_dir), "classifier (run `train-gnn` first)"))


def _load_analyzer(run_dir: Path) -> EnvironmentAnalyzer:
    return EnvironmentAnalyzer.load(_require(run_dir / "envmodel.json", "environment model (run `fit-npaf` first)"))


def _load_explainer(run_dir: Path, model: GraphClassifier) -> SubgraphExplainer:
    path = _require(run_dir / "explainer", "explainer (run `train-explainer` first)")
    return SubgraphExplainer.load(path, classifier=model)


def _split_graphs(dataset, tag: str):
    graphs = dataset.split(tag)
    if not graphs:
        raise ConfigError("explain_split", "split %r is empty in this dataset" % tag)
    return graphs


def _write_log_csv(path: Path, rows: list[LossBreakdown]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("epoch",) + LossBreakdown.FIELDS + ("total",))
        for epoch, row in enumerate(rows):
            writer.writerow([epoch] + [getattr(row, f) for f in LossBreakdown.FIELDS]
                            + [row.total])


# -- subcommands ----------------------------------------------------------

def cmd_gen(cfg: RunConfig, run_dir: Path, args) -> int:
    dataset = generate(cfg.gen)
    dataset = split(dataset, cfg.split.kind, domain=cfg.split.domain,
                    seed=cfg.split.seed, train_corr=cfg.split.train_corr)
    out = run_dir / "dataset.jsonl"
    serialize(dataset, out)
    _write_meta(out, cfg, num_graphs=len(dataset),
                splits={t: len(dataset.split(t)) for t in ("train", "val", "test")})
    print("wrote %s (%d graphs, shift=%s)" % (out, len(dataset), cfg.split.kind))
    return 0


def cmd_train_gnn(cfg: RunConfig, run_dir: Path, args) -> int:
    dataset = _load_dataset(run_dir)
    model = GraphClassifier(**classifier_params(cfg))
    model.fit(dataset.split("train"))
    model_file = _model_file(run_dir)
    model_file.parent.mkdir(parents=True, exist_ok=True)
    model.save(model_file)
    _write_meta(model_file.parent, cfg)
    train_acc = model.score(dataset.split("train"))
    test_acc = model.score(dataset.split("test"))
    print("wrote %s (train acc %.3f, test acc %.3f)"
          % (model_file.parent, train_acc, test_acc))
    return 0


def cmd_fit_npaf(cfg: RunConfig, run_dir: Path, args) -> int:
    dataset = _load_dataset(run_dir)
    analyzer = EnvironmentAnalyzer(**analyzer_params(cfg))
    analyzer.fit(dataset.split("train"))
    out = run_dir / "envmodel.json"
    analyzer.save(out)
    _write_meta(out, cfg, num_envs=analyzer.num_envs,
                env_dims=[int(d) for d in analyzer.dim_env_])
    print("wrote %s (%d environments, %d env dims)"
          % (out, analyzer.num_envs, len(analyzer.dim_env_)))
    return 0


def _train_explainer(cfg: RunConfig, run_dir: Path, out_dir: Path,
                     dataset, model, analyzer) -> SubgraphExplainer:
    explainer = SubgraphExplainer(classifier=model, analyzer=analyzer,
                                  **explainer_params(cfg))
    explainer.fit(dataset.split("train"))
    explainer.save(out_dir)
    _write_meta(out_dir, cfg, model_digest=_digest(_model_file(run_dir)))
    _write_log_csv(out_dir.parent / "log.csv", explainer.log_)
    return explainer


def cmd_train_explainer(cfg: RunConfig, run_dir: Path, args) -> int:
    dataset = _load_dataset(run_dir)
    model = _load_model(run_dir)
    analyzer = _load_analyzer(run_dir)
    explainer = _train_explainer(cfg, run_dir, run_dir / "explainer",
                                 dataset, model, analyzer)
    print("wrote %s (%d epochs, final loss %.4f)"
          % (run_dir / "explainer", len(explainer.log_),
             explainer.log_[-1].total))
    return 0


def cmd_explain(cfg: RunConfig, run_dir: Path, args) -> int:
    dataset = _load_dataset(run_dir)
    model = _load_model(run_dir)
    explainer = _load_explainer(run_dir, model)
    graphs = _split_graphs(dataset, cfg.explain_split)
    if not 0 <= args.index < len(graphs):
        raise ConfigError("index", "must lie in [0, %d) for split %r"
                          % (len(graphs), cfg.explain_split))
    g = graphs[args.index]
    e = explainer.explain(g)
    out_dir = run_dir / "explanations"
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = "graph-%04d" % args.index
    (out_dir / (stem + ".dot")).write_text(export_dot(g, e, name=stem.replace("-", "_")))
    payload = {
        "config_hash": config_hash(cfg),
        "split": cfg.explain_split,
        "index": args.index,
        "label": int(g.label),
        "predicted": int(model.predict_one(g).label),
        "node_mask": [int(v) for v in e.node_mask],
        "edge_mask": [int(v) for v in e.edge_mask],
        "log_prob": e.log_prob,
    }
    with (out_dir / (stem + ".json")).open("w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print("wrote %s.{dot,json} (%d nodes, %d edges kept)"
          % (out_dir / stem, e.num_nodes, e.num_edges))
    return 0


def _evaluate_into(cfg: RunConfig, out_dir: Path, graphs, model, explainer):
    reports = evaluate(explainer, graphs, model, seed=cfg.seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_reports(reports, out_dir / "metrics.csv",
                  json_path=out_dir / "metrics.json",
                  rows_path=out_dir / "metrics_rows.csv")
    _write_meta(out_dir / "metrics.csv", cfg, split=cfg.explain_split,
                num_graphs=len(graphs))
    return reports


def cmd_evaluate(cfg: RunConfig, run_dir: Path, args) -> int:
    dataset = _load_dataset(run_dir)
    model = _load_model(run_dir)
    explainer = _load_explainer(run_dir, model)
    stored = _read_meta(run_dir / "explainer").get("model_digest")
    current = _digest(_model_file(run_dir))
    if stored != current:
        raise ConfigError("model_digest",
                          "explainer was trained against checkpoint %s, found %s;"
                          " retrain the explainer" % (stored, current))
    graphs = _split_graphs(dataset, cfg.explain_split)
    reports = _evaluate_into(cfg, run_dir, graphs, model, explainer)
    for name in sorted(reports):
        r = reports[name]
        print("%-18s fid-=%.3f fid+=%.3f gef=%.3f rho_e=%.3f t100=%.2fs"
              % (name, r.fid_minus, r.fid_plus, r.gef, r.rho_e, r.t_100))
    return 0


def cmd_ablate(cfg: RunConfig, run_dir: Path, args) -> int:
    dataset = _load_dataset(run_dir)
    model = _load_model(run_dir)
    analyzer = _load_analyzer(run_dir)
    graphs = _split_graphs(dataset, cfg.explain_split)
    summary_rows = []
    for name, overrides in ABLATION_VARIANTS.items():
        sub_cfg = dataclasses.replace(cfg, **overrides)
        variant_dir = run_dir / "ablate" / name
        variant_dir.mkdir(parents=True, exist_ok=True)
        variant_analyzer = analyzer
        if sub_cfg.num_envs != cfg.num_envs:
            variant_analyzer = EnvironmentAnalyzer(**analyzer_params(sub_cfg))
            variant_analyzer.fit(dataset.split("train"))
        explainer = _train_explainer(sub_cfg, run_dir, variant_dir / "explainer",
                                     dataset, model, variant_analyzer)
        reports = _evaluate_into(sub_cfg, variant_dir, graphs, model, explainer)
        r = reports["explainer"]
        summary_rows.append([name] + [getattr(r, f) for f in SUMMARY_FIELDS[1:]])
        print("%-14s fid-=%.3f fid+=%.3f gef=%.3f" % (name, r.fid_minus, r.fid_plus, r.gef))
    out = run_dir / "ablation.csv"
    with out.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("variant",) + SUMMARY_FIELDS[1:])
        writer.writerows(summary_rows)
    _write_meta(out, cfg, variants=sorted(ABLATION_VARIANTS))
    print("wrote %s" % out)
    return 0


def cmd_sweep(cfg: RunConfig, run_dir: Path, args) -> int:
    dataset = _load_dataset(run_dir)
    model = _load_model(run_dir)
    analyzer = _load_analyzer(run_dir)
    graphs = _split_graphs(dataset, cfg.explain_split)
    summary_rows = []
    for axis, (spec_field, cfg_field) in SWEEP_AXES.items():
        for value in getattr(cfg.sweep, spec_field):
            sub_cfg = dataclasses.replace(cfg, **{cfg_field: value})
            point_dir = run_dir / "sweep" / ("%s-%g" % (axis, value))
            point_dir.mkdir(parents=True, exist_ok=True)
            explainer = _train_explainer(sub_cfg, run_dir,
                                         point_dir / "explainer",
                                         dataset, model, analyzer)
            reports = _evaluate_into(sub_cfg, point_dir, graphs, model, explainer)
            r = reports["explainer"]
            summary_rows.append([axis, value]
                                + [getattr(r, f) for f in SUMMARY_FIELDS[1:]])
            print("%s=%-6g fid-=%.3f fid+=%.3f gef=%.3f"
                  % (axis, value, r.fid_minus, r.fid_plus, r.gef))
    out = run_dir / "sweep.csv"
    with out.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("axis", "value") + SUMMARY_FIELDS[1:])
        writer.writerows(summary_rows)
    _write_meta(out, cfg)
    print("wrote %s" % out)
    return 0


def cmd_bench(cfg: RunConfig, run_dir: Path, args) -> int:
    out = run_dir / "bench.csv"
    rows = runtime_probe(cfg.bench.sizes, avg_degree=cfg.bench.avg_degree,
                         max_iter=cfg.bench.max_iter,
                         repeats=cfg.bench.repeats, seed=cfg.seed,
                         csv_path=out)
    _write_meta(out, cfg)
    for row in rows:
        print("n=%(n)-8d m=%(m)-8d %(seconds).4fs" % row)
    print("wrote %s" % out)
    return 0


COMMANDS = {
    "gen": (cmd_gen, "generate and split the synthetic dataset"),
    "train-gnn": (cmd_train_gnn, "train the graph classifier to explain"),
    "fit-npaf": (cmd_fit_npaf, "infer environments and causal partitions"),
    "train-explainer": (cmd_train_explainer, "train the subgraph explainer"),
    "explain": (cmd_explain, "explain one graph to DOT plus JSON masks"),
    "evaluate": (cmd_evaluate, "score explanations against baselines"),
    "ablate": (cmd_ablate, "retrain with one module disabled per variant"),
    "sweep": (cmd_sweep, "grid over density and loss weights"),
    "bench": (cmd_bench, "time subgraph reconstruction at growing sizes"),
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="envexplain",
        description="synthetic-shift graph explanation pipeline")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None,
                       help="JSON run configuration (defaults apply if omitted)")
        p.add_argument("--run-dir", default=None,
                       help="artifact directory (overrides the config)")
        if name == "explain":
            p.add_argument("--index", type=int, required=True,
                           help="graph position within the configured split")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        run_dir = Path(args.run_dir if args.run_dir else cfg.run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        with (run_dir / "run.json").open("w") as fh:
            json.dump({"config_hash": config_hash(cfg),
                       "config": config_to_dict(cfg)}, fh, indent=2,
                      sort_keys=True)
            fh.write("\n")
        return COMMANDS[args.command][0](cfg, run_dir, args)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 3
    except MissingArtifact as exc:
        print(str(exc), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
