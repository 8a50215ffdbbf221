"""Command-line entry point.

Commands: gen-data, train, eval, sweep, analyze, skew, bench.
Common flags: --config, --seed, --out, --set section.key=value.
Exit codes: 0 success, 1 runtime failure, 2 invalid input or config.
All JSON outputs are UTF-8 with sorted keys; runs are deterministic given
the seed (wall-clock metadata goes to a separate run_meta.json).
"""

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import data as D
from . import experiments as E
from . import model as M
from .config import load_config
from .experiments import TrainConfig


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_run_meta(out_dir):
    _write_json(Path(out_dir) / "run_meta.json",
                {"timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z")})


def _generator_spec(cfg):
    d = cfg.values["data"]
    return D.GeneratorSpec(
        n_samples=d["n_samples"],
        objective_names=d["objectives"],
        loading_matrix=d["loading_matrix"],
        objective_bias=d["objective_bias"],
        score_noise_sd=d["score_noise_sd"],
        label_noise_sd=d["label_noise_sd"],
        features=d["features"],
        feature_noise_sd=d["feature_noise_sd"],
        seed=cfg.get("run", "seed"),
    )


def _model_config(cfg, dataset):
    mc = cfg.values["model"]
    feats = tuple(zip(dataset.feature_names, dataset.feature_cards))
    return M.ModelConfig(
        n_objectives=dataset.n_objectives,
        n_buckets=mc["n_buckets"],
        embed_dim=mc["embed_dim"],
        key_dim=mc["key_dim"],
        personalized_features=feats,
        personalized_dim=mc["personalized_dim"],
        self_attention=mc["self_attention"],
        cross_attention=mc["cross_attention"],
        personalized=mc["personalized"],
        gate=mc["gate"],
        linear_path=mc["linear_path"],
        linear_path_input=mc["linear_path_input"],
    )


def _train_config(cfg, seed=None):
    t = cfg.values["train"]
    return TrainConfig(
        loss=t["loss"], lr=t["lr"], batch_size=t["batch_size"],
        epochs=t["epochs"], mode=t["mode"],
        streaming_inner_epochs=t["streaming_inner_epochs"],
        loss_weights=t["loss_weights"], softrank_epsilon=t["softrank_epsilon"],
        momentum=t["momentum"], eval_every=t["eval_every"],
        seed=cfg.get("run", "seed") if seed is None else seed,
    )


def _load_split(cfg, data_path):
    dataset = D.load_csv(data_path)
    frac = cfg.get("data", "test_fraction")
    return D.split(dataset, frac, cfg.get("run", "seed"))


def cmd_gen_data(args):
    cfg = load_config(args.config, args.set, args.seed)
    spec = _generator_spec(cfg)
    dataset = D.generate(spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    D.save_csv(dataset, out)
    sidecar = {
        "n_samples": len(dataset),
        "objectives": dataset.objective_names,
        "positive_rates": {name: float(r) for name, r in
                           zip(dataset.objective_names, dataset.positive_rates())},
        "rho": [[None if not np.isfinite(v) else float(v) for v in row]
                for row in E.spearman_matrix(dataset.labels)],
        "config_hash": cfg.config_hash(),
    }
    _write_json(out.with_suffix(".json"), sidecar)
    return 0


def cmd_train(args):
    cfg = load_config(args.config, args.set, args.seed)
    train_ds, test_ds = _load_split(cfg, args.data)
    model_cfg = _model_config(cfg, train_ds)
    train_cfg = _train_config(cfg)
    params, history = E.train(train_ds, test_ds, model_cfg, train_cfg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    M.save_checkpoint(out_dir / "checkpoint.bin", params, model_cfg)
    with open(out_dir / "history.jsonl", "w", encoding="utf-8") as fh:
        for entry in history:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    report = E.evaluate(params, model_cfg, test_ds)
    _write_json(out_dir / "metrics.json", {
        "per_objective": report.as_dict()["per_objective"],
        "sum": report.sum,
        "loss": history[-1]["train_loss"],
        "seed": train_cfg.seed,
        "config_hash": cfg.config_hash(),
    })
    _write_run_meta(out_dir)
    return 0


def cmd_eval(args):
    cfg = load_config(args.config, args.set, args.seed)
    params, model_cfg = M.load_checkpoint(args.checkpoint)
    dataset = D.load_csv(args.data)
    if dataset.n_objectives != model_cfg.n_objectives:
        raise ValueError("dataset/checkpoint objective count mismatch")
    report = E.evaluate(params, model_cfg, dataset)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out, {
        "per_objective": report.as_dict()["per_objective"],
        "sum": report.sum,
        "loss": None,
        "seed": cfg.get("run", "seed"),
        "config_hash": cfg.config_hash(),
    })
    return 0


def _write_csv(path, fieldnames, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def cmd_sweep(args):
    cfg = load_config(args.config, args.set, args.seed)
    train_ds, test_ds = _load_split(cfg, args.data)
    model_cfg = _model_config(cfg, train_ds)
    train_cfg = _train_config(cfg)
    grid = cfg.get("sweep", "weight_grid")
    seeds = cfg.get("sweep", "seeds") or None
    points = E.pareto_sweep(train_ds, test_ds, model_cfg, train_cfg,
                            list(grid), seeds=seeds)
    names = train_ds.objective_names
    fieldnames = ([f"w_{n}" for n in names] + [f"auc_{n}" for n in names]
                  + ["on_front"])
    rows = []
    for p in points:
        row = {f"w_{n}": w for n, w in zip(names, p.weights)}
        row.update({f"auc_{n}": a for n, a in zip(names, p.auc_per_objective)})
        row["on_front"] = int(p.on_front)
        rows.append(row)
    _write_csv(args.out, fieldnames, rows)
    return 0


def cmd_analyze(args):
    cfg = load_config(args.config, args.set, args.seed)
    params, model_cfg = M.load_checkpoint(args.checkpoint)
    dataset = D.load_csv(args.data)
    if dataset.n_objectives != model_cfg.n_objectives:
        raise ValueError("dataset/checkpoint objective count mismatch")
    mode = cfg.get("analyze", "mode")
    anchor = cfg.get("analyze", "anchor") or None
    result = E.attention_analysis(
        params, model_cfg, dataset, anchor_objective=anchor, mode=mode,
        n_permutations=cfg.get("analyze", "n_permutations"),
        seed=cfg.get("run", "seed"))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out, result.as_dict())
    return 0


def cmd_skew(args):
    cfg = load_config(args.config, args.set, args.seed)
    train_ds, test_ds = _load_split(cfg, args.data)
    model_cfg = _model_config(cfg, train_ds)
    train_cfg = _train_config(cfg)
    objective = cfg.get("skew", "objective")
    if not objective:
        # default: the most skewed (lowest positive rate) objective
        rates = train_ds.positive_rates()
        objective = train_ds.objective_names[int(np.argmin(rates))]
    rows = E.skew_experiment(
        train_ds, test_ds, model_cfg, train_cfg, objective,
        cfg.get("skew", "factors"), cfg.get("skew", "losses"),
        seeds=cfg.get("skew", "seeds") or None)
    out_rows = [{"loss": r["loss"], "ratio": r["skew_factor"],
                 "auc_sum": r["auc_sum"], "rel_drop_pct": r["rel_drop_pct"]}
                for r in rows]
    _write_csv(args.out, ["loss", "ratio", "auc_sum", "rel_drop_pct"], out_rows)
    return 0


def cmd_bench(args):
    cfg = load_config(args.config, args.set, args.seed)
    rows = E.bench_losses(
        cfg.get("bench", "n_values"), cfg.get("bench", "losses"),
        repeats=cfg.get("bench", "repeats"), seed=cfg.get("run", "seed"))
    _write_csv(args.out, ["loss", "n", "samples_per_sec", "growth_ratio"], rows)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rankfuse",
        description="Ranking-aligned multi-objective score ensembling")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=False, checkpoint=False):
        p.add_argument("--config", default=None, help="config file path")
        p.add_argument("--seed", type=int, default=None,
                       help="override the global seed")
        p.add_argument("--set", action="append", default=[],
                       metavar="SECTION.KEY=VALUE",
                       help="override a config value (repeatable)")
        p.add_argument("--out", required=True, help="output path")
        if data:
            p.add_argument("--data", required=True, help="dataset CSV path")
        if checkpoint:
            p.add_argument("--checkpoint", required=True,
                           help="checkpoint file path")

    common(sub.add_parser("gen-data", help="generate a synthetic dataset CSV"))
    common(sub.add_parser("train", help="train a model"), data=True)
    common(sub.add_parser("eval", help="evaluate a checkpoint"),
           data=True, checkpoint=True)
    common(sub.add_parser("sweep", help="Pareto sweep over loss weights"),
           data=True)
    common(sub.add_parser("analyze", help="attention/label correlation"),
           data=True, checkpoint=True)
    common(sub.add_parser("skew", help="label-skew robustness runs"), data=True)
    common(sub.add_parser("bench", help="loss throughput benchmark"))
    return parser


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "analyze": cmd_analyze,
    "skew": cmd_skew,
    "bench": cmd_bench,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
