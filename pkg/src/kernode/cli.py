"""Command-line entry point: ``kernode <command> ...``.

Exit codes: 0 success, 1 gradient check failed, 2 bad configuration,
3 dataset problem, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import shutil
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .data import DatasetError, GraphDataset, convert_planetoid, load_dataset, make_split
from .model import load_checkpoint, save_checkpoint
from .training import (
    TrainConfig,
    TrainResult,
    build_feature_map,
    make_edge_split,
    prepare_inputs,
    train,
    train_linkpred,
    variant_gradcheck,
)

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

EXIT_OK, EXIT_GRADCHECK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4

log = logging.getLogger("kernode")


class ConfigError(Exception):
    pass


def read_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix == ".json":
            return json.loads(text)
        return tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc


def data_root() -> Path:
    return Path(os.environ.get("KERNODE_DATA_DIR", "data"))


def resolve_dataset(name_or_path: str) -> GraphDataset:
    p = Path(name_or_path)
    directory = p if p.is_dir() else data_root() / name_or_path
    if not directory.is_dir():
        raise DatasetError(f"no dataset container at {directory} "
                           f"(set KERNODE_DATA_DIR or pass a directory)")
    return load_dataset(directory)


def build_config(args) -> tuple[TrainConfig, dict]:
    """Merge a config file with command-line overrides."""
    raw = read_config(args.config) if getattr(args, "config", None) else {}
    extra = {k: raw.pop(k) for k in ("dataset", "seeds", "out") if k in raw}
    flags = {
        "variant": getattr(args, "variant", None),
        "seed": getattr(args, "seed", None),
        "H": getattr(args, "hops", None),
        "n_layers": getattr(args, "layers", None),
        "fixed_c": getattr(args, "fixed_c", None),
        "mask_mode": getattr(args, "mask_mode", None),
        "epochs": getattr(args, "epochs", None),
        "regime": getattr(args, "regime", None),
    }
    raw.update({k: v for k, v in flags.items() if v is not None})
    for key in ("dataset", "seeds", "out"):
        if getattr(args, key, None) is not None:
            extra[key] = getattr(args, key)
    try:
        cfg = TrainConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg, extra


def run_dir(out: str | Path, payload: dict) -> Path:
    digest = hashlib.sha1(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:8]
    path = Path(out) / f"{time.strftime('%Y%m%d-%H%M%S')}-{digest}"
    suffix = 0
    while path.exists():
        suffix += 1
        path = Path(out) / f"{time.strftime('%Y%m%d-%H%M%S')}-{digest}-{suffix}"
    path.mkdir(parents=True)
    return path


def mean_std(values) -> str:
    v = 100.0 * np.asarray(values, dtype=np.float64)
    return f"{v.mean():.2f} ± {v.std():.2f}"


def checkpoint_meta(result: TrainResult, ds: GraphDataset, split) -> dict:
    return {
        "config": result.config.to_dict(),
        "dataset": ds.name,
        "n_features": ds.n_features,
        "n_classes": ds.n_classes,
        "gamma": result.gamma,
        "best_epoch": result.best_epoch,
        "val_acc": result.val_acc,
        "test_acc": result.test_acc,
        "split": {"regime": split.regime, "source": split.source, "seed": split.seed},
    }


def train_runs(ds: GraphDataset, cfg: TrainConfig, seeds: list[int], out: str | None,
               echo: dict | None = None, config_file=None) -> list[TrainResult]:
    results = []
    for seed in seeds:
        run_cfg = replace(cfg, seed=seed).resolve(ds.n_classes, ds.name)
        split = make_split(ds, run_cfg.regime, seed=seed)
        target = None
        if out is not None:
            target = run_dir(out, {**run_cfg.to_dict(), "dataset": ds.name})
            (target / "config.json").write_text(
                json.dumps({**(echo or {}), **run_cfg.to_dict(), "dataset": ds.name}, indent=1))
            if config_file is not None:
                shutil.copyfile(config_file, target / ("input" + Path(config_file).suffix))
        result = train(ds, split, run_cfg, metrics_path=target / "metrics.jsonl" if target else None)
        row = f"{result.config.variant}\t{ds.name}\t{seed}\t{result.val_acc:.4f}\t{result.test_acc:.4f}"
        if target is not None:
            save_checkpoint(target / "checkpoint.json", result.model, checkpoint_meta(result, ds, split))
            (target / "summary.tsv").write_text(
                "variant\tdataset\tseed\tval_acc\ttest_acc\n" + row + "\n")
            row += f"\t{target}"
        print(row)
        results.append(result)
    return results


def cmd_train(args) -> int:
    cfg, extra = build_config(args)
    ds = resolve_dataset(extra.get("dataset", "cora"))
    n_seeds = int(extra.get("seeds", 1))
    seeds = list(range(cfg.seed, cfg.seed + n_seeds))
    results = train_runs(ds, cfg, seeds, extra.get("out", "runs"), echo=extra,
                         config_file=args.config)
    if n_seeds > 1:
        print(f"{cfg.variant}\t{ds.name}\t{mean_std([r.test_acc for r in results])}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg, _ = build_config(args)
    report = variant_gradcheck(cfg.variant, seed=cfg.seed, corrupt=args.corrupt_grad,
                               H=cfg.H, mask_mode=cfg.mask_mode, fixed_c=cfg.fixed_c,
                               loss_weight_lambda=cfg.loss_weight_lambda, alpha=cfg.alpha)
    print(f"variant {cfg.variant}")
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_GRADCHECK


def export_embeddings(checkpoint, ds: GraphDataset, out) -> Path:
    """Write ``node_id, label, z_1..z_M`` rows for every node."""
    meta, state = load_checkpoint(checkpoint)
    if meta["n_features"] != ds.n_features:
        raise DatasetError(f"checkpoint expects {meta['n_features']} features, "
                           f"dataset has {ds.n_features}")
    cfg = TrainConfig.from_dict(meta["config"])
    adj = ds.adjacency
    if "edge_split_seed" in meta:
        adj = make_edge_split(ds, seed=meta["edge_split_seed"]).train_adjacency()
    model = build_feature_map(adj, ds.n_features, cfg.feature_map_config(),
                              np.random.default_rng(cfg.seed))
    model.load_state_dict(state)
    z = model.forward(prepare_inputs(ds, cfg))
    out = Path(out)
    with open(out, "w") as fh:
        for i in range(ds.n_nodes):
            fh.write("\t".join([str(i), str(ds.labels[i]), *(repr(float(v)) for v in z[i])]) + "\n")
    return out


def cmd_export(args) -> int:
    ds = resolve_dataset(args.dataset)
    if not Path(args.checkpoint).exists():
        raise DatasetError(f"missing checkpoint {args.checkpoint}")
    path = export_embeddings(args.checkpoint, ds, args.out)
    print(path)
    return EXIT_OK


def ablation_rows(hops, layers, cs) -> list[tuple[str, dict]]:
    rows = [("Default", {})]
    rows += [(f"{h}-hop", {"H": h}) for h in hops]
    rows += [(f"{n}-layer", {"n_layers": n}) for n in layers]
    rows += [(f"c = {c:.2f}", {"fixed_c": c}) for c in cs]
    return rows


def _floats(text: str | None, cast=float):
    if text is None:
        return None
    return [cast(t) for t in text.split(",") if t.strip()]


def cmd_ablate(args) -> int:
    cfg, extra = build_config(argparse.Namespace(config=args.config, variant=args.variant,
                                                 seed=args.seed, epochs=args.epochs))
    ds = resolve_dataset(args.dataset or extra.get("dataset", "cora"))
    hops = _floats(args.hops, int) if args.hops is not None else [1, 3]
    layers = _floats(args.layers, int) if args.layers is not None else [1, 3]
    cs = _floats(args.fixed_c) if args.fixed_c is not None else [0.25, 0.5, 0.75, 1.0]
    rows = ablation_rows(hops, layers, cs)
    if args.only_grid:
        rows = rows[1:]
    seeds = list(range(cfg.seed, cfg.seed + args.seeds))
    print(f"Variants of {cfg.variant}\t{ds.name}")
    for label, override in rows:
        results = [train(ds, make_split(ds, cfg.regime, seed=s),
                         replace(cfg, seed=s, **override)) for s in seeds]
        accs = [r.test_acc for r in results]
        cell = mean_std(accs) if len(accs) > 1 else f"{100 * accs[0]:.2f}"
        print(f"{label}\t{cell}")
    return EXIT_OK


def cmd_linkpred(args) -> int:
    cfg, extra = build_config(args)
    cfg = replace(cfg, variant="linkpred")
    ds = resolve_dataset(extra.get("dataset", "cora"))
    seeds = list(range(cfg.seed, cfg.seed + int(extra.get("seeds", 1))))
    out = extra.get("out", "runs")
    aucs, aps = [], []
    for seed in seeds:
        run_cfg = replace(cfg, seed=seed).resolve(ds.n_classes, ds.name)
        edges = make_edge_split(ds, seed=seed)
        target = run_dir(out, {**run_cfg.to_dict(), "dataset": ds.name})
        (target / "config.json").write_text(json.dumps({**run_cfg.to_dict(), "dataset": ds.name}))
        result = train_linkpred(ds, edges, run_cfg, metrics_path=target / "metrics.jsonl")
        save_checkpoint(target / "checkpoint.json", result.model,
                        {"config": result.config.to_dict(), "dataset": ds.name,
                         "n_features": ds.n_features, "n_classes": ds.n_classes,
                         "edge_split_seed": seed, "test_auc": result.test_auc,
                         "test_ap": result.test_ap})
        print(f"linkpred\t{ds.name}\t{seed}\tAUC {result.test_auc:.4f}\tAP {result.test_ap:.4f}")
        aucs.append(result.test_auc)
        aps.append(result.test_ap)
    if len(seeds) > 1:
        print(f"linkpred\t{ds.name}\tAUC {mean_std(aucs)}\tAP {mean_std(aps)}")
    return EXIT_OK


def cmd_convert(args) -> int:
    ds = convert_planetoid(args.raw_dir, args.name, args.out_dir)
    print(f"{ds.name}: {ds.n_nodes} nodes, {ds.n_edges} edges, {ds.n_classes} classes, "
          f"{ds.n_features} features -> {args.out_dir}")
    return EXIT_OK


def _common(p: argparse.ArgumentParser, dataset: bool = True) -> None:
    p.add_argument("--config", help="TOML or JSON file with TrainConfig fields")
    p.add_argument("--variant", help="K1, K2, K3, N1, K1star or linkpred")
    p.add_argument("--seed", type=int)
    p.add_argument("--hops", type=int, dest="hops")
    p.add_argument("--layers", type=int)
    p.add_argument("--fixed-c", type=float, dest="fixed_c")
    p.add_argument("--mask-mode", choices=["cumulative", "exact"], dest="mask_mode")
    p.add_argument("--epochs", type=int)
    p.add_argument("--regime", choices=["fastgcn", "jk"])
    if dataset:
        p.add_argument("--dataset", help="container name under $KERNODE_DATA_DIR, or a path")
        p.add_argument("--seeds", type=int, help="number of consecutive seeds to run")
        p.add_argument("--out", help="run directory root (default runs/)")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kernode", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a node classification variant")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gradcheck", help="finite-difference check on the 10-node toy graph")
    _common(p, dataset=False)
    p.add_argument("--corrupt-grad", action="store_true", help="double analytic gradients")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("export-embeddings", help="write node embeddings as TSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("ablate", help="aggregation-schema ablation table")
    p.add_argument("--config")
    p.add_argument("--variant", default="K3")
    p.add_argument("--dataset")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--hops", help="comma-separated hop counts, e.g. 1,3")
    p.add_argument("--layers", help="comma-separated MLP depths, e.g. 1,3")
    p.add_argument("--fixed-c", dest="fixed_c", help="comma-separated constants c in (0, 1]")
    p.add_argument("--only-grid", action="store_true", help="skip the default row")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("linkpred", help="link prediction AUC/AP")
    _common(p)
    p.set_defaults(func=cmd_linkpred)

    p = sub.add_parser("convert-planetoid", help="convert ind.<name>.* files to a container")
    p.add_argument("raw_dir")
    p.add_argument("name")
    p.add_argument("out_dir")
    p.set_defaults(func=cmd_convert)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (DatasetError, FileNotFoundError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except FloatingPointError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
