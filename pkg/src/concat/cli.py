"""``concat`` command line: prepare, embed, train, eval, predict, gradcheck.

Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, dump_config, load_config, parse_override
from .data import (CascadeDataError, GlobalGraph, build_global_graph, dataset_stats, filter_cascades,
                   parse_dataset, read_cascades, split_dataset, truncate_triplets, window_and_label,
                   write_cascades)
from .embed import (EmbeddingError, WaveletConfig, global_embed_factorize, global_embed_load,
                    write_embeddings)
from .features import build_examples, cascade_tables, flatten_tables, unflatten_table
from .metrics import all_metrics
from .model import ModelConfig
from .solvers import SolverError, SolverSpec
from .synthetic import synthetic_records
from .train import NumericalError, gradcheck, init_model, predict, toy_examples, train

logger = logging.getLogger("concat")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
SPLITS = ("train", "val", "test")
PRED_COLUMNS = ("cascade_id", "observation_time", "label", "prediction")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# paths and small io helpers


def data_dir(cfg: RunConfig) -> Path:
    return cfg.out / "data"


def embed_dir(cfg: RunConfig) -> Path:
    return cfg.out / "embed"


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def echo_config(cfg: RunConfig, raw_text: str) -> None:
    """Copy the config file verbatim and write the resolved form with its hash."""
    cfg.out.mkdir(parents=True, exist_ok=True)
    (cfg.out / "config.yaml").write_text(raw_text, encoding="utf-8")
    resolved = f"# config_hash: {cfg.hash()}\n" + dump_config(cfg)
    (cfg.out / "config.resolved.yaml").write_text(resolved, encoding="utf-8")


def wavelet_config(cfg: RunConfig) -> WaveletConfig:
    e = cfg.embedding
    return WaveletConfig(sample_points=list(np.linspace(0.0, e.sample_max, e.sample_points)),
                         chebyshev_order=e.chebyshev_order)


def write_predictions(path: Path, cascades, labels, preds) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(PRED_COLUMNS)
        for c, y, p in zip(cascades, labels, preds):
            # repr round-trips floats exactly, so metrics can be re-derived
            w.writerow([c.cascade_id, repr(float(c.observation_time)), int(y), repr(float(p))])


def read_predictions(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh, delimiter="\t"))
    if rows and set(PRED_COLUMNS) - set(rows[0]):
        raise CascadeDataError(f"{path} lacks columns {sorted(set(PRED_COLUMNS) - set(rows[0]))}")
    labels = np.array([float(r["label"]) for r in rows])
    preds = np.array([float(r["prediction"]) for r in rows])
    return labels, preds


def _write_log(path: Path, log) -> None:
    keys = list(log[0]) if log else ["epoch"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(keys)
        for row in log:
            w.writerow([repr(row[k]) if isinstance(row[k], float) else row[k] for k in keys])


# ---------------------------------------------------------------------------
# commands


def cmd_prepare(cfg: RunConfig) -> dict:
    d = cfg.data
    if d.synthetic:
        records = synthetic_records(d.synthetic_cascades, seed=d.synthetic_seed,
                                    observation_time=d.observation_time,
                                    prediction_time=d.prediction_time,
                                    mean_size=d.synthetic_mean_size)
        issues = []
    else:
        if not d.raw:
            raise UsageError("no input: set data.raw or pass --synthetic")
        if not Path(d.raw).is_file():
            raise CascadeDataError(f"dataset file {d.raw} does not exist")
        records, issues = parse_dataset(d.raw)
    for issue in issues:
        logger.warning("line %d: %s (%s)", issue.line_no, issue.message, issue.severity)
    windowed = [window_and_label(r, d.observation_time, d.prediction_time, d.time_scale) for r in records]
    kept = filter_cascades(windowed, d.min_size)
    if not kept:
        raise CascadeDataError(f"no cascades left after filtering ({len(records)} parsed, min_size {d.min_size})")
    kept = [truncate_triplets(c, d.max_triplets) for c in kept]
    train_set, val_set, test_set = split_dataset(kept, d.split, d.split_seed)
    out = data_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    parts = dict(zip(SPLITS, (train_set, val_set, test_set)))
    for name, part in parts.items():
        write_cascades(out / f"{name}.jsonl", part)
    build_global_graph(kept).write_edge_list(out / "global.edges")
    stats = {"parsed": len(records), "issues": len(issues), "filtered_out": len(windowed) - len(kept),
             "all": dataset_stats(kept), **{name: dataset_stats(part) for name, part in parts.items()}}
    _write_json(out / "stats.json", stats)
    return stats


def cmd_embed(cfg: RunConfig, cascades_dir=None, global_edges=None, out=None,
              dim: int | None = None, seed: int | None = None) -> dict:
    cascades_dir = Path(cascades_dir or data_dir(cfg))
    global_edges = Path(global_edges or cascades_dir / "global.edges")
    out = Path(out or embed_dir(cfg))
    dim = cfg.embedding.global_dim if dim is None else dim
    seed = cfg.embedding.seed if seed is None else seed
    for p in (cascades_dir, global_edges):
        if not p.exists():
            raise CascadeDataError(f"{p} does not exist; run prepare first")
    out.mkdir(parents=True, exist_ok=True)
    graph = GlobalGraph.read_edge_list(global_edges)
    table = global_embed_factorize(graph, dim, cfg.embedding.oversample, seed, cfg.embedding.n_iter)
    write_embeddings(out / "global.emb", table)
    wcfg = wavelet_config(cfg)
    summary = {"global_nodes": len(graph.nodes), "global_edges": len(graph.edges), "global_dim": dim,
               "cascade_dim": wcfg.dim}
    for name in SPLITS:
        path = cascades_dir / f"{name}.jsonl"
        if not path.exists():
            continue
        tables = cascade_tables(read_cascades(path), wcfg)
        if tables:
            write_embeddings(out / f"cascade_{name}.emb", flatten_tables(tables))
        summary[f"{name}_cascades"] = len(tables)
    _write_json(out / "embed.json", summary)
    return summary


def _check_widths(cfg: RunConfig, global_dim: int, cascade_dim: int) -> None:
    m = cfg.model
    if m.global_dim != global_dim or m.cascade_dim != cascade_dim:
        raise ConfigError(
            f"embedding width mismatch: config model.cascade_dim={m.cascade_dim} global_dim={m.global_dim}, "
            f"embedding files cascade_dim={cascade_dim} global_dim={global_dim}")


def load_split(cfg: RunConfig, name: str):
    """Cascades and model inputs for one prepared split (embedding it if needed)."""
    path = data_dir(cfg) / f"{name}.jsonl"
    if not path.exists():
        raise CascadeDataError(f"{path} does not exist; run prepare first")
    cascades = read_cascades(path)
    if not (embed_dir(cfg) / "global.emb").exists():
        cmd_embed(cfg)
    glob = global_embed_load(embed_dir(cfg) / "global.emb")
    emb_path = embed_dir(cfg) / f"cascade_{name}.emb"
    tables = unflatten_table(global_embed_load(emb_path)) if emb_path.exists() else {}
    cascade_dim = next(iter(tables.values())).dim if tables else wavelet_config(cfg).dim
    _check_widths(cfg, glob.dim, cascade_dim)
    return cascades, build_examples(cascades, glob, wavelet_config(cfg), tables if tables else None)


def cmd_train(cfg: RunConfig) -> dict:
    _, train_ex = load_split(cfg, "train")
    _, val_ex = load_split(cfg, "val")
    res = train(train_ex, val_ex or None, cfg.model, cfg.training, cfg.solver, cfg.eval_spec)
    save_checkpoint(cfg.out / "checkpoint.json", res.model, cfg.solver, cfg.training.seed,
                    extra={"config_hash": cfg.hash(), "best_epoch": res.best_epoch})
    _write_log(cfg.out / "train_log.tsv", res.log)
    figures = []
    if res.log:
        from .plotting import plot_loss_curve
        figures.append(str(plot_loss_curve(res.log, cfg.out / "figures" / "loss.png")))
    report = {"config_hash": cfg.hash(), "epochs": len(res.log), "best_epoch": res.best_epoch,
              "final": res.log[-1] if res.log else None, "checkpoint_sha256": _sha256(cfg.out / "checkpoint.json"),
              "figures": figures}
    _write_json(cfg.out / "train_report.json", report)
    return report


def _load_model(cfg: RunConfig, checkpoint=None):
    path = Path(checkpoint or cfg.out / "checkpoint.json")
    if not path.exists():
        raise CascadeDataError(f"checkpoint {path} does not exist; run train first")
    model, _, _, _ = load_checkpoint(path, expect=cfg.model)
    return model, path


def cmd_eval(cfg: RunConfig, checkpoint=None, splits=("val", "test"), figures: bool = True) -> dict:
    model, ckpt = _load_model(cfg, checkpoint)
    report = {"config_hash": cfg.hash(), "checkpoint_sha256": _sha256(ckpt), "splits": {}}
    for name in splits:
        cascades, examples = load_split(cfg, name)
        if not examples:
            continue
        preds, _ = predict(model, examples, cfg.eval_spec, cfg.training.batch_size)
        labels = np.array([e.label for e in examples], dtype=float)
        table = cfg.out / f"predictions_{name}.tsv"
        write_predictions(table, cascades, labels, preds)
        # metrics come from the stored table so they can be re-derived exactly
        y, p = read_predictions(table)
        report["splits"][name] = {"n": len(y), **all_metrics(y, p), "predictions": table.name}
        if figures:
            from .plotting import plot_predictions, plot_residuals
            plot_predictions(y, p, cfg.out / "figures" / f"pred_{name}.png", title=name)
            plot_residuals(y, p, cfg.out / "figures" / f"resid_{name}.png")
    _write_json(cfg.out / "metrics.json", report)
    return report


def metrics_from_predictions(path) -> dict:
    y, p = read_predictions(path)
    return {"n": len(y), **all_metrics(y, p)}


def cmd_predict(cfg: RunConfig, cascades_path, checkpoint=None, out=None) -> Path:
    model, _ = _load_model(cfg, checkpoint)
    cascades_path = Path(cascades_path)
    if not cascades_path.exists():
        raise CascadeDataError(f"{cascades_path} does not exist")
    if cascades_path.suffix == ".jsonl":
        cascades = read_cascades(cascades_path)
    else:
        d = cfg.data
        records, issues = parse_dataset(cascades_path)
        for issue in issues:
            logger.warning("line %d: %s (%s)", issue.line_no, issue.message, issue.severity)
        cascades = [truncate_triplets(window_and_label(r, d.observation_time, d.prediction_time, d.time_scale),
                                      d.max_triplets) for r in records]
    if not cascades:
        raise CascadeDataError(f"no cascades in {cascades_path}")
    if not (embed_dir(cfg) / "global.emb").exists():
        raise CascadeDataError(f"{embed_dir(cfg) / 'global.emb'} does not exist; run embed first")
    glob = global_embed_load(embed_dir(cfg) / "global.emb")
    wcfg = wavelet_config(cfg)
    _check_widths(cfg, glob.dim, wcfg.dim)
    examples = build_examples(cascades, glob, wcfg)
    preds, _ = predict(model, examples, cfg.eval_spec, cfg.training.batch_size)
    out = Path(out or cfg.out / "predictions.tsv")
    write_predictions(out, cascades, [c.label for c in cascades], preds)
    return out


def cmd_gradcheck(cfg: RunConfig, hidden: int = 4, step: float = 0.01, threshold: float = 1e-3) -> dict:
    """Central-difference check of every gradient on a 3-event toy cascade."""
    examples = toy_examples(cascade_dim=4, global_dim=4, seed=cfg.training.seed)
    mcfg = ModelConfig(cascade_dim=4, global_dim=4, attn_width=4, hidden=hidden, f1_layers=cfg.model.f1_layers,
                       f1_activation=cfg.model.f1_activation, head_hidden=hidden, no_tpp=cfg.model.no_tpp,
                       no_align=cfg.model.no_align,
                       include_root_intensity=cfg.model.include_root_intensity)
    model = init_model(mcfg, cfg.training.seed)
    res = gradcheck(model, examples, SolverSpec("rk4", fixed_step=step))
    report = {"config_hash": cfg.hash(), "max_rel_error": res.max_rel_error, "checked": res.checked,
              "excluded": res.excluded, "worst": list(res.worst) if res.worst else None,
              "threshold": threshold, "passed": res.max_rel_error < threshold}
    _write_json(cfg.out / "gradcheck.json", report)
    return report


# ---------------------------------------------------------------------------
# argument handling

_FLAG_KEYS = {
    "observation_time": "data.observation_time",
    "prediction_time": "data.prediction_time",
    "min_size": "data.min_size",
    "max_triplets": "data.max_triplets",
    "split_seed": "data.split_seed",
    "time_scale": "data.time_scale",
    "raw": "data.raw",
    "output": "output",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. --set training.lr=0.01")
    common.add_argument("--output", help="output directory (config key `output`)")
    common.add_argument("--raw", help="canonical cascade file (config key `data.raw`)")
    common.add_argument("--observation-time", type=float)
    common.add_argument("--prediction-time", type=float)
    common.add_argument("--min-size", type=int)
    common.add_argument("--max-triplets", type=int)
    common.add_argument("--split-seed", type=int)
    common.add_argument("--time-scale", type=float)
    common.add_argument("--synthetic", action="store_true", help="generate fixture cascades instead of reading data.raw")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="concat", description="Continuous-time cascade popularity prediction.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("prepare", parents=[common], help="window, filter, truncate and split a dataset")
    p = sub.add_parser("embed", parents=[common], help="cascade-graph wavelets and global factorization")
    p.add_argument("--cascades", help="directory of prepared split files")
    p.add_argument("--global", dest="global_edges", help="global edge-list file")
    p.add_argument("--out", help="embedding output directory")
    p.add_argument("--dim", type=int, help="global embedding width")
    p.add_argument("--seed", type=int)
    sub.add_parser("train", parents=[common], help="fit the model and write a checkpoint")
    p = sub.add_parser("eval", parents=[common], help="metrics and prediction tables for val/test")
    p.add_argument("--checkpoint")
    p.add_argument("--predictions", help="only recompute metrics from a stored prediction table")
    p.add_argument("--no-figures", action="store_true")
    p = sub.add_parser("predict", parents=[common], help="predict popularity for new cascades")
    p.add_argument("--checkpoint")
    p.add_argument("--cascades", required=True, help="prepared .jsonl or canonical cascade file")
    p.add_argument("--out", help="prediction table path")
    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check on a toy cascade")
    p.add_argument("--hidden", type=int, default=4)
    p.add_argument("--step", type=float, default=0.01)
    p.add_argument("--threshold", type=float, default=1e-3)
    return parser


def resolve_config(args) -> tuple[RunConfig, str]:
    overrides = [parse_override(o) for o in args.overrides]
    for attr, key in _FLAG_KEYS.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides.append((key.split("."), value))
    if args.synthetic:
        overrides.append((["data", "synthetic"], True))
    return load_config(args.config, overrides)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, raw_text = resolve_config(args)
        torch.set_num_threads(max(1, int(cfg.jobs)))
        echo_config(cfg, raw_text)
        if args.command == "prepare":
            result = cmd_prepare(cfg)
        elif args.command == "embed":
            result = cmd_embed(cfg, args.cascades, args.global_edges, args.out, args.dim, args.seed)
        elif args.command == "train":
            result = cmd_train(cfg)
        elif args.command == "eval":
            if args.predictions:
                result = metrics_from_predictions(args.predictions)
            else:
                result = cmd_eval(cfg, args.checkpoint, figures=not args.no_figures)
        elif args.command == "predict":
            result = {"predictions": str(cmd_predict(cfg, args.cascades, args.checkpoint, args.out))}
        else:
            result = cmd_gradcheck(cfg, args.hidden, args.step, args.threshold)
            print(f"max relative error {result['max_rel_error']:.3e} over {result['checked']} entries "
                  f"({result['excluded']} excluded)")
            if not result["passed"]:
                print(json.dumps(result, sort_keys=True, indent=1))
                return EXIT_NUMERIC
        print(json.dumps(result, sort_keys=True, indent=1, default=str))
        return EXIT_OK
    except UsageError as exc:
        print(f"concat: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, SolverError) as exc:
        print(f"concat: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, CascadeDataError, EmbeddingError, CheckpointError, OSError) as exc:
        print(f"concat: {exc}", file=sys.stderr)
        return EXIT_DATA


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
