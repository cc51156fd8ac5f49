"""``dip gen|train|eval|diagnose|bench``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .autodiff import NonFiniteError
from .bench import run_bench, write_rows
from .checkpoint import load_checkpoint
from .config import ConfigError, RunConfig, load_config
from .diagnose import (energy_by_depth, local_only, pathway_heatmaps, sample_nodes, write_energy_csv,
                       write_heatmap_csv)
from .graph import BundleError, MultimodalGraph, load_bundle, save_bundle
from .metrics import dirichlet_energy
from .model import ModelConfig, as_tensors, embed, param_shapes
from .pathways import ABLATIONS, FULL
from .sampling import SplitSet, split_edges, split_nodes
from .synth import gen_synthetic
from .train import evaluate, message_graph, train

log = logging.getLogger("dip")

EXIT_CONFIG, EXIT_NUMERIC = 2, 3
SPLITS_FILE = "splits.json"
DEFAULT_RATIOS = {"node-classification": (0.6, 0.1, 0.3), "link-prediction": (0.8, 0.1, 0.1)}


def _out_dir(args, cfg: RunConfig) -> Path:
    out = args.out or cfg.out
    if out is None:
        raise ConfigError("no output directory: pass --out or set `out` in the config")
    return Path(out)


def _with_seed(cfg: RunConfig, seed: int | None) -> RunConfig:
    if seed is None:
        return cfg
    cfg = replace(cfg, train=replace(cfg.train, seed=seed))
    if cfg.synth is not None:
        cfg = replace(cfg, synth=replace(cfg.synth, seed=seed))
    return cfg


def load_data(cfg: RunConfig, data_dir=None) -> tuple[MultimodalGraph, SplitSet]:
    """Graph and split from --data, the configured bundle, or the inline generator."""
    src = data_dir or cfg.bundle
    if src is None:
        if cfg.synth is None:
            raise ConfigError("no data source: pass --data or set [data] bundle / [data.synth]")
        return gen_synthetic(cfg.synth, cfg.task, cfg.ratios)
    graph = load_bundle(src)
    split_path = Path(src) / SPLITS_FILE
    if split_path.is_file():
        split = SplitSet.load(split_path)
        if split.task == cfg.task:
            return graph, split
    ratios = cfg.ratios or DEFAULT_RATIOS[cfg.task]
    if cfg.task == "node-classification":
        return graph, split_nodes(graph.n, ratios, cfg.train.seed)
    return graph, split_edges(graph, ratios, cfg.train.seed)[0]


def model_config(cfg: RunConfig, graph: MultimodalGraph) -> ModelConfig:
    extra = {}
    if cfg.task == "node-classification":
        if graph.labels is None:
            raise ConfigError("node classification needs labels in the data bundle")
        extra["num_classes"] = graph.classes
    try:
        return ModelConfig(d_v=graph.d_v, d_t=graph.d_t, task=cfg.task, **cfg.model, **extra)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[model]: {exc}") from exc


def _load_params(path, mcfg: ModelConfig) -> dict[str, np.ndarray]:
    if not Path(path).is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    params, _ = load_checkpoint(path)
    want = param_shapes(mcfg)
    got = {k: tuple(v.shape) for k, v in params.items()}
    if got != want:
        bad = sorted(k for k in want.keys() | got.keys() if want.get(k) != got.get(k))
        raise ConfigError(f"checkpoint does not match config shapes: {bad[:5]}")
    return params


def _checkpoint_path(args, out: Path) -> Path:
    return Path(args.checkpoint) if args.checkpoint else out / "checkpoint.bin"


# ------------------------------------------------------------------ commands

def cmd_gen(cfg: RunConfig, args) -> int:
    if cfg.synth is None:
        raise ConfigError("gen needs a [data.synth] table")
    out = _out_dir(args, cfg)
    graph, split = gen_synthetic(cfg.synth, cfg.task, cfg.ratios)
    save_bundle(graph, out)
    split.save(out / SPLITS_FILE)
    cfg.persist(out)
    print(f"wrote bundle n={graph.n} edges={graph.edge_count} to {out}")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    out = _out_dir(args, cfg)
    graph, split = load_data(cfg, args.data)
    mcfg = model_config(cfg, graph)
    cfg.persist(out)
    ckpt = _checkpoint_path(args, out)
    meta = {"config_hash": cfg.content_hash, "model": mcfg.to_dict(), "flags": cfg.flags.to_dict()}
    res = train(graph, split, mcfg, cfg.train, cfg.flags, log_path=out / "train_log.csv", ckpt_path=ckpt, meta=meta)
    summary = {"best_epoch": res.best_epoch, "best_valid": res.best_valid, "epochs_run": len(res.rows),
               "config_hash": cfg.content_hash, "checkpoint": str(ckpt)}
    (out / "train_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"best valid {res.best_valid:.4f} at epoch {res.best_epoch}; checkpoint {ckpt}")
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    out = _out_dir(args, cfg)
    graph, split = load_data(cfg, args.data)
    mcfg = model_config(cfg, graph)
    params = _load_params(_checkpoint_path(args, out), mcfg)
    cfg.persist(out)
    variants = {"full": FULL, **ABLATIONS} if args.ablate else {"full": cfg.flags}
    gmp = message_graph(graph, split)
    for name, flags in variants.items():
        report = evaluate(graph, split, params, mcfg, flags, "test", cfg.train.num_negatives,
                          cfg.train.seed, variant=name)
        Z = embed(gmp, as_tensors(params), mcfg, flags).data
        report.dirichlet_by_depth = [(mcfg.L, dirichlet_energy(Z, gmp.adjacency))]
        report.config_hash = cfg.content_hash
        (out / f"report_{name}.json").write_text(report.to_json() + "\n")
        headline = report.accuracy if split.task == "node-classification" else report.mrr
        print(f"{name}: {headline:.4f}")
    return 0


def cmd_diagnose(cfg: RunConfig, args) -> int:
    out = _out_dir(args, cfg)
    graph, split = load_data(cfg, args.data)
    mcfg = model_config(cfg, graph)
    params = _load_params(_checkpoint_path(args, out), mcfg)
    cfg.persist(out)
    gmp = message_graph(graph, split)
    depths = cfg.diagnose.depths
    seed = cfg.train.seed
    write_energy_csv(out / "dirichlet_by_depth.csv", energy_by_depth(gmp, params, mcfg, cfg.flags, depths), seed)
    write_energy_csv(out / "dirichlet_by_depth_local_only.csv",
                     energy_by_depth(gmp, params, mcfg, local_only(cfg.flags), depths), seed)
    nodes = sample_nodes(gmp.n, cfg.diagnose.heatmap_nodes, seed)
    for m, W in pathway_heatmaps(gmp, params, mcfg, cfg.flags, nodes).items():
        write_heatmap_csv(out / f"pathway_heatmap_{m}.csv", W, nodes)
    print(f"wrote diagnostics to {out}")
    return 0


def cmd_bench(cfg: RunConfig, args) -> int:
    out = _out_dir(args, cfg)
    cfg.persist(out)
    b = cfg.bench
    rows, slopes = run_bench(b.sizes, b.dense_sizes, b.n_p, b.tau, b.d_s, b.L, b.repeats, b.avg_degree,
                             b.dense_budget_mb, cfg.train.seed)
    write_rows(out / "bench.csv", rows)
    (out / "bench_slopes.json").write_text(
        json.dumps({"slopes": slopes, "config_hash": cfg.content_hash}, indent=2, sort_keys=True) + "\n")
    print(f"slopes: dip {slopes['dip']}, dense {slopes['dense']}")
    return 0


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "diagnose": cmd_diagnose, "bench": cmd_bench}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dip", description="multimodal graph engine with dynamic pathways")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="TOML run configuration")
    ap.add_argument("--data", help="bundle directory (overrides the config's data source)")
    ap.add_argument("--out", help="output directory (overrides the config)")
    ap.add_argument("--checkpoint", help="checkpoint file (default <out>/checkpoint.bin)")
    ap.add_argument("--ablate", action="store_true", help="eval: also score the five ablations")
    ap.add_argument("--seed", type=int, help="run seed (training and inline generation)")
    ap.add_argument("--threads", type=int, default=1, help="BLAS threads (default 1)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg = _with_seed(load_config(args.config), args.seed)
        with threadpool_limits(args.threads):
            return COMMANDS[args.command](cfg, args)
    except NonFiniteError as exc:
        print(f"dip: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, BundleError, OSError, IndexError) as exc:
        print(f"dip: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
