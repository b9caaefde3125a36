"""Operator entry points: embedding prep, training, evaluation, synthetic
data generation, and the attention complexity benchmark.

Every command derives all randomness from one seed, exits 0 only when its
contract completed, and reports failures on stderr with a nonzero code.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import CSV_HEADER as BENCH_HEADER
from .bench import DEFAULT_BUDGET, run_benchmark
from .context import load_embeddings, node2vec_walks, save_embeddings, skipgram_train
from .data import (
    assign_windows,
    load_dataset,
    load_meta,
    load_readings,
    make_windows,
    save_predictions,
    split_boundaries,
    zscore_apply,
    zscore_invert,
)
from .graph import load_adjacency
from .model import (
    CSV_HEADER as METRICS_HEADER,
    TrainingDiverged,
    evaluate,
    load_config,
    load_model,
    prepare_dataset,
    train,
)
from .synth import make_ring_dataset, write_dataset_files

__all__ = ["main"]


def version_string() -> str:
    """Package version, suffixed with the git commit when available."""
    try:
        rev = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            cwd=Path(__file__).parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if rev.returncode == 0:
            return f"{__version__}+g{rev.stdout.strip()}"
    except OSError:
        pass
    return __version__


def write_manifest(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# embed

def cmd_embed(args) -> int:
    graph = load_adjacency(args.graph)
    walks = node2vec_walks(
        graph, p=args.p, q=args.q, walk_len=args.length,
        walks_per_node=args.walks, seed=args.seed,
    )
    lengths = [len(w) for w in walks]
    embeddings = skipgram_train(
        walks, dim=args.dim, window=args.window, negatives=args.negatives,
        epochs=args.epochs, seed=args.seed, n_nodes=graph.n_nodes,
    )
    save_embeddings(args.out, embeddings)
    print(
        f"{len(walks)} walks over {graph.n_nodes} nodes "
        f"(length mean {np.mean(lengths):.1f}, min {min(lengths)}, "
        f"max {max(lengths)}); embeddings -> {args.out}"
    )
    return 0


# ---------------------------------------------------------------------------
# train

def _config_overrides(pairs: list[str]) -> dict:
    overrides = {}
    for pair in pairs:
        if "=" not in pair:
            raise ValueError(f"--set expects key=value, got {pair!r}")
        key, _, value = pair.partition("=")
        overrides[key.strip()] = value.strip()
    return overrides


def cmd_train(args) -> int:
    cfg = load_config(args.config, _config_overrides(args.set))
    meta = load_meta(args.meta if args.meta else f"{args.data}.meta")
    dataset, graph = load_dataset(args.data, args.graph, meta)

    if args.embeddings:
        node_emb = load_embeddings(args.embeddings, graph.n_nodes)
    else:
        walks = node2vec_walks(graph, seed=cfg.seed)
        node_emb = skipgram_train(walks, seed=cfg.seed, n_nodes=graph.n_nodes)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint = out_dir / "model.ckpt"
    metrics_csv = out_dir / "metrics.csv"
    manifest_path = out_dir / "manifest.json"

    manifest = {
        "command": "train",
        "version": version_string(),
        "seed": cfg.seed,
        "started_at": dt.datetime.now(dt.timezone.utc).isoformat(),
        "ended_at": None,
        "config": {k: getattr(cfg, k) for k in cfg.__dataclass_fields__},
        "outputs": {"checkpoint": str(checkpoint), "metrics": str(metrics_csv)},
    }
    write_manifest(manifest_path, manifest)

    prepared = prepare_dataset(dataset)
    rows_out = [METRICS_HEADER]

    def log_row(row):
        rows_out.append(row.csv_row())
        print(row.csv_row())

    try:
        train(
            cfg, prepared, graph, node_emb,
            checkpoint_path=checkpoint, log_fn=log_row, mask_eps=args.mask_eps,
        )
    except TrainingDiverged as err:
        metrics_csv.write_text("\n".join(rows_out) + "\n")
        print(f"training diverged: {err}", file=sys.stderr)
        return 1
    finally:
        manifest["ended_at"] = dt.datetime.now(dt.timezone.utc).isoformat()
        write_manifest(manifest_path, manifest)

    metrics_csv.write_text("\n".join(rows_out) + "\n")
    print(f"checkpoint -> {checkpoint}")
    print(f"metrics -> {metrics_csv}")
    return 0


# ---------------------------------------------------------------------------
# eval

def cmd_eval(args) -> int:
    model, _ = load_model(args.checkpoint)
    cfg = model.cfg
    meta = load_meta(args.meta if args.meta else f"{args.data}.meta")
    if meta.n_nodes != model.ginputs.graph.n_nodes:
        print(
            f"checkpoint was trained on {model.ginputs.graph.n_nodes} nodes, "
            f"data has {meta.n_nodes}",
            file=sys.stderr,
        )
        return 1
    readings = load_readings(args.data, meta.n_nodes, meta.channels)
    if model.norm is None:
        print("checkpoint carries no normalization stats", file=sys.stderr)
        return 1
    normalized = zscore_apply(readings, model.norm)
    windows = make_windows(normalized, cfg.history, cfg.horizon)
    split_idx = assign_windows(windows, split_boundaries(readings.shape[0]))
    chosen = [windows[i] for i in split_idx[args.split]]
    if not chosen:
        print(f"no complete windows in split {args.split!r}", file=sys.stderr)
        return 1

    horizons = [int(h) for h in args.horizons.split(",") if h.strip()]
    results = evaluate(model, chosen, horizons=horizons, mask_eps=args.mask_eps)

    lines = ["horizon,mae,rmse,mape"]
    for key in [str(h) for h in horizons] + ["average"]:
        mae, rmse, mape = results[key]
        lines.append(f"{key},{mae:.6f},{rmse:.6f},{mape:.6f}")
        print(f"{key:>8}: MAE {mae:.4f}  RMSE {rmse:.4f}  MAPE {mape:.2f}%")
    if args.out:
        Path(args.out).write_text("\n".join(lines) + "\n")

    if args.predictions:
        preds = zscore_invert(
            model.predict(
                np.stack([w.x for w in chosen]), [w.t0 for w in chosen]
            ),
            model.norm,
        )
        rows = []
        for w, pred in zip(chosen, preds):
            truth = zscore_invert(w.y, model.norm)
            for t in range(cfg.horizon):
                for node in range(meta.n_nodes):
                    rows.append(
                        (w.t0 + cfg.history + t, node,
                         float(pred[t, node, 0]), float(truth[t, node, 0]))
                    )
        save_predictions(args.predictions, rows)
    return 0


# ---------------------------------------------------------------------------
# bench

def cmd_bench(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    rows = run_benchmark(
        sizes, dim=args.dim, repeats=args.repeats, budget=args.budget,
        seed=args.seed, log=print,
    )
    lines = [BENCH_HEADER] + [row.csv_row() for row in rows]
    Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"benchmark -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# synth

def cmd_synth(args) -> int:
    dataset, graph = make_ring_dataset(
        n_nodes=args.nodes, steps=args.steps, period=args.period,
        noise=args.noise, seed=args.seed,
    )
    paths = write_dataset_files(args.out, dataset, graph)
    for name, path in paths.items():
        print(f"{name} -> {path}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowcast",
        description="Road-traffic forecasting with joint space-time linear attention",
    )
    parser.add_argument("--version", action="version", version=version_string())
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("embed", help="compute node embeddings from the road graph")
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--p", type=float, default=1.0)
    p.add_argument("--q", type=float, default=1.0)
    p.add_argument("--walks", type=int, default=10)
    p.add_argument("--length", type=int, default=80)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--negatives", type=int, default=5)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_embed)

    p = sub.add_parser("train", help="train a forecaster")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--meta", help="defaults to <data>.meta")
    p.add_argument("--out", required=True)
    p.add_argument("--mask-eps", type=float, default=1.0)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--meta", help="defaults to <data>.meta")
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--horizons", default="3,6,12")
    p.add_argument("--mask-eps", type=float, default=1.0)
    p.add_argument("--out", help="write per-horizon metrics CSV here")
    p.add_argument("--predictions", help="write t_abs,node,pred,truth CSV here")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bench", help="compare attention kernel complexity")
    p.add_argument("--sizes", default="1024,4096")
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--budget", type=int, default=DEFAULT_BUDGET,
                   help="max M*M entries the quadratic kernel may allocate")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("synth", help="generate the synthetic ring dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--nodes", type=int, default=8)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--period", type=int, default=96)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (OSError, ValueError, RuntimeError, AssertionError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
