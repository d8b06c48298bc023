"""Command-line entry point: generate, train, evaluate, report.

Every command is driven by one YAML config. Runs are append-only directories
holding a config snapshot, checkpoints and the metrics log; rerunning with
the same config and seed reproduces outputs bitwise.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .errors import BeamVisionError, ConfigError
from .evalmetrics import (
    EvalReport,
    RateTable,
    blockage_accuracy,
    mean_positioning_error,
    rate_evaluation,
    top_k_accuracy,
)
from .finetune import SplitTensors, TrainConfig, predict_outputs, run_progressive_finetune
from .model import build_model, load_checkpoint
from .scenegen import generate_dataset, load_manifest, load_split_arrays, save_manifest, split_dataset


def cmd_generate(config_path: str, out: str | None = None) -> dict:
    """Generate the synthetic dataset, split it, and write the manifest."""
    cfg = ExperimentConfig.from_yaml(config_path)
    data_dir = Path(out) if out else Path(cfg.paths.data_dir)
    codebook = cfg.build_codebook()
    manifest = generate_dataset(
        cfg.dataset.n_samples,
        cfg.scene_config(),
        codebook,
        cfg.link_params(),
        cfg.dataset.trajectories,
        data_dir,
    )
    manifest = split_dataset(
        manifest,
        cfg.dataset.train_fraction,
        cfg.dataset.split_seed,
        by_trajectory=cfg.dataset.split_by_trajectory,
    )
    save_manifest(manifest, data_dir / "manifest.jsonl")
    counts = {
        "records": len(manifest.records),
        "train": int(sum(s == "train" for s in manifest.split_assignment)),
        "val": int(sum(s == "val" for s in manifest.split_assignment)),
    }
    print(
        f"generated {counts['records']} records -> train {counts['train']}, "
        f"val {counts['val']} under {data_dir}"
    )
    return counts


def _load_splits(cfg: ExperimentConfig, data_dir: Path):
    manifest = load_manifest(data_dir / "manifest.jsonl")
    if manifest.split_assignment is None:
        raise ConfigError(f"{data_dir}/manifest.jsonl has no split assignment; run generate first")
    codebook = cfg.build_codebook()
    if tuple(manifest.codebook_params) != codebook.params:
        raise ConfigError(
            f"manifest codebook params {manifest.codebook_params} do not match "
            f"config {codebook.params}"
        )
    return manifest, codebook


def cmd_train(
    config_path: str,
    mode: str = "multi_task",
    plan_name: str = "default3",
    seed: int | None = None,
    out: str | None = None,
) -> Path:
    """Train under a mode (single_task or multi_task) and plan; returns run dir."""
    cfg = ExperimentConfig.from_yaml(config_path)
    if seed is not None:
        cfg.train.seed = seed
    data_dir = Path(cfg.paths.data_dir)
    manifest, codebook = _load_splits(cfg, data_dir)
    params = cfg.link_params()

    run_dir = Path(out) if out else Path(cfg.paths.run_dir) / f"{mode}_{plan_name}_seed{cfg.train.seed}"
    if run_dir.exists() and any(run_dir.iterdir()):
        raise ConfigError(f"run directory {run_dir} is not empty; runs are append-only")
    run_dir.mkdir(parents=True, exist_ok=True)

    weights = cfg.loss_weights(mode)
    plan = cfg.stage_plan(plan_name, weights)
    model = build_model(cfg.backbone_spec(for_plan=plan_name), cfg.head_spec(), seed=cfg.train.seed)

    world = cfg.scene.world_extent_m
    train_split = SplitTensors.from_arrays(load_split_arrays(manifest, data_dir, "train"), world)
    val_split = SplitTensors.from_arrays(load_split_arrays(manifest, data_dir, "val"), world)
    val_records = [manifest.records[int(i)] for i in manifest.indices("val")]

    cfg.to_yaml(run_dir / "config.yaml")
    with open(run_dir / "run.json", "w", encoding="utf-8") as fh:
        json.dump({"mode": mode, "plan": plan_name, "seed": cfg.train.seed}, fh)

    train_cfg = TrainConfig(
        run_dir=run_dir,
        batch_size=cfg.train.batch_size,
        seed=cfg.train.seed,
        weight_decay=cfg.train.weight_decay,
        world_extent_m=world,
        rate_table=RateTable(val_records, codebook, params),
    )
    _, metrics = run_progressive_finetune(model, plan, train_split, val_split, train_cfg)
    last = metrics[-1]
    print(
        f"run {run_dir}: {len(metrics)} epochs, final top1 {last['top1']:.4f}, "
        f"rate_ratio {last['rate_ratio']:.4f}, pos_err {last['pos_err_m']:.2f} m"
    )
    return run_dir


def cmd_evaluate(
    run_dir: str,
    manifest_path: str | None = None,
    oracle_predictor: bool = False,
) -> EvalReport:
    """Evaluate the run's best checkpoint on the validation split."""
    run_dir = Path(run_dir)
    cfg = ExperimentConfig.from_yaml(run_dir / "config.yaml")
    data_dir = Path(manifest_path).parent if manifest_path else Path(cfg.paths.data_dir)
    manifest, codebook = _load_splits(cfg, data_dir)
    params = cfg.link_params()
    val_idx = manifest.indices("val")
    val_records = [manifest.records[int(i)] for i in val_idx]
    world = cfg.scene.world_extent_m
    val_split = SplitTensors.from_arrays(load_split_arrays(manifest, data_dir, "val"), world)

    labels = val_split.beam.numpy()
    if oracle_predictor:
        logits = np.zeros((len(labels), codebook.num_beams), dtype=np.float32)
        logits[np.arange(len(labels)), labels] = 1.0
        pos_pred_m = val_split.positions_m.copy()
        blk_logits = np.where(val_split.blocked.numpy() > 0.5, 1.0, -1.0)
    else:
        model, _ = load_checkpoint(run_dir / "ckpt_best.pt")
        logits, pos_norm, blk_logits = predict_outputs(model, val_split, cfg.train.batch_size)
        pos_pred_m = pos_norm.astype(np.float64) * (world / 2.0)

    pred_flat = np.argmax(logits, axis=1)
    mean_rate, oracle_rate, rate_ratio = rate_evaluation(val_records, pred_flat, codebook, params)
    report = EvalReport(
        top1=top_k_accuracy(logits, labels, 1),
        top5=top_k_accuracy(logits, labels, min(5, codebook.num_beams)),
        mean_rate=mean_rate,
        oracle_rate=oracle_rate,
        rate_ratio=rate_ratio,
        mean_pos_err=mean_positioning_error(pos_pred_m, val_split.positions_m),
        blockage_accuracy=(
            blockage_accuracy(blk_logits, val_split.blocked.numpy() > 0.5)
            if blk_logits is not None
            else None
        ),
    )
    with open(run_dir / "eval_report.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
    for key, value in report.to_dict().items():
        print(f"{key}: {value}")
    return report


def _read_run(run_dir: Path) -> dict:
    with open(run_dir / "run.json", "r", encoding="utf-8") as fh:
        info = json.load(fh)
    metrics = []
    with open(run_dir / "metrics.jsonl", "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                metrics.append(json.loads(line))
    info.update({"name": run_dir.name, "metrics": metrics})
    return info


def cmd_report(run_dirs: list[str], out: str = "report") -> dict:
    """Comparison table and figures across runs; returns the summary payload."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    runs = [_read_run(Path(d)) for d in run_dirs]
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for run in runs:
        epochs = [m["epoch"] for m in run["metrics"]]
        top1 = [m["top1"] for m in run["metrics"]]
        ax.plot(epochs, top1, marker="o", markersize=3, label=run["name"])
    ax.set_xlabel("epoch")
    ax.set_ylabel("val top-1 beam accuracy")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_dir / "accuracy_curves.png", dpi=120)
    plt.close(fig)

    # Single-task rate ratios by seed, for per-run multi-task drop percentages.
    single_ratio = {
        run["seed"]: run["metrics"][-1]["rate_ratio"]
        for run in runs
        if run["mode"] == "single_task" and run["metrics"][-1]["rate_ratio"] is not None
    }
    rows = []
    for run in runs:
        last = run["metrics"][-1]
        drop = None
        if (
            run["mode"] == "multi_task"
            and run["seed"] in single_ratio
            and last["rate_ratio"] is not None
        ):
            ref = single_ratio[run["seed"]]
            drop = (ref - last["rate_ratio"]) / ref * 100.0
        rows.append(
            {
                "run": run["name"],
                "mode": run["mode"],
                "plan": run["plan"],
                "seed": run["seed"],
                "epochs": len(run["metrics"]),
                "final_top1": last["top1"],
                "best_top1": max(m["top1"] for m in run["metrics"]),
                "final_rate_ratio": last["rate_ratio"],
                "final_pos_err_m": last["pos_err_m"],
                "multi_task_rate_drop_pct": drop,
            }
        )

    names = [r["run"] for r in rows]
    x = np.arange(len(rows))
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    axes[0].bar(x, [r["final_rate_ratio"] or 0.0 for r in rows], color="#4878d0")
    axes[0].set_ylabel("rate ratio vs oracle")
    axes[1].bar(x, [r["final_pos_err_m"] for r in rows], color="#ee854a")
    axes[1].set_ylabel("positioning error (m)")
    for ax in axes:
        ax.set_xticks(x)
        ax.set_xticklabels(names, rotation=30, ha="right", fontsize=7)
        ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(out_dir / "task_tradeoff.png", dpi=120)
    plt.close(fig)

    summary = {"runs": rows}
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)

    header = f"{'run':<34} {'mode':<12} {'top1':>7} {'rate_ratio':>11} {'pos_err_m':>10} {'drop%':>7}"
    print(header)
    for r in rows:
        ratio = "-" if r["final_rate_ratio"] is None else f"{r['final_rate_ratio']:.4f}"
        drop = "-" if r["multi_task_rate_drop_pct"] is None else f"{r['multi_task_rate_drop_pct']:.2f}"
        print(
            f"{r['run']:<34} {r['mode']:<12} {r['final_top1']:>7.4f} {ratio:>11} "
            f"{r['final_pos_err_m']:>10.2f} {drop:>7}"
        )
    return summary


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="beamvision")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate the synthetic dataset and manifest")
    gen.add_argument("--config", required=True)
    gen.add_argument("--out", default=None, help="override paths.data_dir")

    train = sub.add_parser("train", help="run a fine-tuning experiment")
    train.add_argument("--config", required=True)
    train.add_argument("--mode", choices=("single_task", "multi_task"), default="multi_task")
    train.add_argument(
        "--plan", choices=("default3", "full_finetune", "from_scratch"), default="default3"
    )
    train.add_argument("--seed", type=int, default=None)
    train.add_argument("--out", default=None, help="run directory")

    ev = sub.add_parser("evaluate", help="evaluate a run's best checkpoint")
    ev.add_argument("run_dir")
    ev.add_argument("--manifest", default=None, help="manifest path (default: run config's data dir)")
    ev.add_argument("--oracle-predictor", action="store_true", help="score oracle labels instead of the model")

    rep = sub.add_parser("report", help="comparison table and figures for runs")
    rep.add_argument("run_dirs", nargs="+")
    rep.add_argument("--out", default="report")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "generate":
            cmd_generate(args.config, out=args.out)
        elif args.command == "train":
            cmd_train(args.config, mode=args.mode, plan_name=args.plan, seed=args.seed, out=args.out)
        elif args.command == "evaluate":
            cmd_evaluate(args.run_dir, manifest_path=args.manifest, oracle_predictor=args.oracle_predictor)
        elif args.command == "report":
            cmd_report(args.run_dirs, out=args.out)
    except BeamVisionError as exc:
        print(f"error:{exc.category}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error:io: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
