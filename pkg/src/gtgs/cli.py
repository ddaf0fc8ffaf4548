"""Command-line entry points: prepare, train, evaluate, coldstart, analyze, gradcheck.

Every run is driven by a flat JSON config (CLI flags override file values) and
the merged effective config is echoed into each manifest, so any output can be
reproduced from its manifest alone. No timestamps are written anywhere; reruns
with identical inputs produce byte-identical manifests and reports.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import graph as graphmod
from .equivalence import run_equivalence_battery
from .evaluation import (consistency, group_relatedness_analysis, metrics_report,
                         rank_groups)
from .graph import (HypergraphSet, InteractionGraph, SplitGraph, cap_group_degree,
                    generate_synthetic, graph_statistics, load_interactions,
                    load_split_manifest, save_split_manifest, split_train_test,
                    write_json)
from .losses import finite_diff_check
from .model import (INIT_STD, SCORE_VIEWS, VARIANT_MODES, EmbeddingTable,
                    Hyperparams, forward, load_checkpoint, save_checkpoint,
                    scoring_embedding)
from .training import train

DEFAULT_CONFIG: dict = {
    # data: exactly one of (ug_edges + ui_edges) or synthetic
    "ug_edges": None,
    "ui_edges": None,
    "num_users": None,
    "num_groups": None,
    "num_items": None,
    "synthetic": None,   # {num_clusters, users_per_cluster, groups_per_cluster,
                         #  items_per_cluster, in_cluster_prob, noise_prob, seed}
    # split
    "test_ratio": 0.3,
    "val_ratio": 0.2,
    "split_seed": 0,
    # model / optimization
    "gamma": 1.0,
    "beta": 0.5,
    "tau_u": 0.2,
    "tau_g": 0.2,
    "lambda_ssl": 0.1,
    "lambda_l2": 1e-7,
    "lr": 0.05,
    "d": 64,
    "num_layers": 1,
    "seed": 0,
    "patience": 10,
    "k_list": [10, 20],
    "eval_every": 5,
    "max_epochs": 300,
    # behavior switches
    "variant": "default",
    "score_view": "combined",
    "disable_cssl": False,
    "disable_group_reg": False,
    "disable_thc": False,
    "allow_large": False,
    "analysis_bins": 100,
    "out_dir": "runs/default",
}

SPLIT_FILE = "split.json"
STATS_FILE = "stats.json"
CHECKPOINT_FILE = "checkpoint.bin"
HISTORY_FILE = "history.csv"
TRAIN_MANIFEST_FILE = "manifest.json"
METRICS_FILE = "metrics.json"
COLDSTART_FILE = "coldstart.json"
ANALYSIS_JSON = "analysis.json"
ANALYSIS_CSV = "analysis.csv"
GRADCHECK_FILE = "gradcheck.json"


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


def load_config(path: str | None, overrides: dict | None = None) -> dict:
    """Merge defaults, a JSON config file, and CLI overrides; validate the result."""
    cfg = dict(DEFAULT_CONFIG)
    if path is not None:
        with open(path, "r", encoding="utf-8") as handle:
            file_cfg = json.load(handle)
        unknown = set(file_cfg) - set(DEFAULT_CONFIG)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    for key, value in (overrides or {}).items():
        if key not in DEFAULT_CONFIG:
            raise ConfigError(f"unknown config key: {key}")
        cfg[key] = value

    has_paths = cfg["ug_edges"] is not None or cfg["ui_edges"] is not None
    has_synth = cfg["synthetic"] is not None
    if has_paths == has_synth:
        raise ConfigError("set exactly one of (ug_edges, ui_edges) or synthetic")
    if has_paths and (cfg["ug_edges"] is None or cfg["ui_edges"] is None):
        raise ConfigError("both ug_edges and ui_edges are required for file input")
    if cfg["variant"] not in VARIANT_MODES:
        raise ConfigError(f"variant must be one of {VARIANT_MODES}")
    if cfg["score_view"] not in SCORE_VIEWS:
        raise ConfigError(f"score_view must be one of {SCORE_VIEWS}")
    if cfg["disable_thc"]:
        cfg["gamma"] = 0.0  # transition off means zero transition intensity
    return cfg


def config_hyperparams(cfg: dict) -> Hyperparams:
    return Hyperparams(
        gamma=cfg["gamma"], beta=cfg["beta"], tau_u=cfg["tau_u"], tau_g=cfg["tau_g"],
        lambda_ssl=cfg["lambda_ssl"], lambda_l2=cfg["lambda_l2"], lr=cfg["lr"],
        d=cfg["d"], num_layers=cfg["num_layers"], seed=cfg["seed"],
        patience=cfg["patience"], k_list=tuple(cfg["k_list"]))


def _canonical_edge_bytes(graph: InteractionGraph) -> bytes:
    lines = [f"{a}\t{b}" for a, b in graph.user_group_edges]
    lines.append("--")
    lines.extend(f"{a}\t{b}" for a, b in graph.user_item_edges)
    return "\n".join(lines).encode("utf-8")


def load_run_graph(cfg: dict) -> tuple[InteractionGraph, str]:
    """Materialize the configured dataset and its content hash."""
    if cfg["synthetic"] is not None:
        spec = cfg["synthetic"]
        graph = generate_synthetic(
            num_clusters=spec["num_clusters"],
            users_per_cluster=spec["users_per_cluster"],
            groups_per_cluster=spec["groups_per_cluster"],
            items_per_cluster=spec["items_per_cluster"],
            in_cluster_prob=spec["in_cluster_prob"],
            noise_prob=spec["noise_prob"],
            seed=spec["seed"])
        digest = hashlib.sha256(_canonical_edge_bytes(graph)).hexdigest()
        return graph, digest
    graph = load_interactions(cfg["ug_edges"], cfg["ui_edges"],
                              num_users=cfg["num_users"],
                              num_groups=cfg["num_groups"],
                              num_items=cfg["num_items"])
    sha = hashlib.sha256()
    for path in (cfg["ug_edges"], cfg["ui_edges"]):
        sha.update(Path(path).read_bytes())
    return graph, sha.hexdigest()


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_split(cfg: dict, graph: InteractionGraph) -> SplitGraph:
    split_path = _out_dir(cfg) / SPLIT_FILE
    if not split_path.exists():
        raise ConfigError(f"no split manifest at {split_path}; run prepare first")
    return load_split_manifest(graph, split_path)


def cmd_prepare(cfg: dict) -> dict:
    """Split the dataset, write the split manifest and the statistics table."""
    out = _out_dir(cfg)
    graph, digest = load_run_graph(cfg)
    split = split_train_test(graph, cfg["test_ratio"], cfg["val_ratio"], cfg["split_seed"])
    save_split_manifest(split, out / SPLIT_FILE)
    stats = {
        "dataset_hash": digest,
        "full": graph_statistics(graph),
        "train": graph_statistics(split.train),
        "config": cfg,
    }
    write_json(out / STATS_FILE, stats)
    full = stats["full"]
    print(f"users={full['num_users']} groups={full['num_groups']} items={full['num_items']}")
    print(f"user-group edges={full['num_user_group_edges']} "
          f"user-item edges={full['num_user_item_edges']}")
    for key in ("avg_groups_per_user", "avg_users_per_group",
                "avg_items_per_user", "avg_users_per_item"):
        print(f"{key}={full[key]:.2f}")
    print(f"wrote {out / SPLIT_FILE} and {out / STATS_FILE}")
    return stats


def _history_rows(history) -> list[dict]:
    eval_by_epoch = {p.epoch: p.metric for p in history.evaluations}
    rows = []
    for epoch, loss in enumerate(history.losses, start=1):
        rows.append({
            "epoch": epoch,
            "bpr": repr(loss.bpr),
            "cssl": repr(loss.cssl),
            "group_reg": repr(loss.group_reg),
            "l2": repr(loss.l2),
            "total": repr(loss.total),
            "val_recall": repr(eval_by_epoch[epoch]) if epoch in eval_by_epoch else "",
        })
    return rows


def cmd_train(cfg: dict) -> dict:
    """Train on the prepared split; write checkpoint, history CSV, and manifest."""
    out = _out_dir(cfg)
    graph, digest = load_run_graph(cfg)
    split = _load_split(cfg, graph)
    hp = config_hyperparams(cfg)
    emb, history = train(
        split, hp, eval_every=cfg["eval_every"], max_epochs=cfg["max_epochs"],
        mode=cfg["variant"], disable_cssl=cfg["disable_cssl"],
        disable_group_reg=cfg["disable_group_reg"], disable_thc=cfg["disable_thc"],
        score_view=cfg["score_view"], allow_large=cfg["allow_large"])

    meta = {
        "num_users": split.train.num_users,
        "num_groups": split.train.num_groups,
        "num_items": split.train.num_items,
        "mode": cfg["variant"],
        "score_view": cfg["score_view"],
        "init_seed": hp.seed,
        "init_std": INIT_STD,
        "dataset_hash": digest,
    }
    save_checkpoint(out / CHECKPOINT_FILE, emb, hp, meta)
    with open(out / HISTORY_FILE, "w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=[
            "epoch", "bpr", "cssl", "group_reg", "l2", "total", "val_recall"])
        writer.writeheader()
        writer.writerows(_history_rows(history))
    manifest = {
        "command": "train",
        "config": cfg,
        "dataset_hash": digest,
        "init_std": INIT_STD,
        "epochs_run": history.epochs_run,
        "best_epoch": history.best_epoch,
        "best_val_recall": history.best_metric,
        "stop_reason": history.stop_reason,
    }
    write_json(out / TRAIN_MANIFEST_FILE, manifest)
    print(f"trained {history.epochs_run} epochs ({history.stop_reason}); "
          f"best epoch {history.best_epoch} val recall {history.best_metric}")
    print(f"wrote {out / CHECKPOINT_FILE}, {out / HISTORY_FILE}, {out / TRAIN_MANIFEST_FILE}")
    return manifest


def _evaluate_checkpoint(cfg: dict, checkpoint_path, split: SplitGraph,
                         positives: dict) -> dict:
    emb, hp, meta = load_checkpoint(checkpoint_path)
    for key, value in (("num_users", split.train.num_users),
                       ("num_groups", split.train.num_groups),
                       ("num_items", split.train.num_items)):
        if meta.get(key) != value:
            raise ConfigError(f"checkpoint {key}={meta.get(key)} does not match split {value}")
    hgs = HypergraphSet.from_graph(split.train)
    trace = forward(emb, hgs, hp, mode=meta.get("mode", "default"))
    score_view = cfg["score_view"]
    train_pos = {u: groups for u, groups in enumerate(split.train.groups_per_user())
                 if groups.size}
    result = rank_groups(scoring_embedding(trace, score_view), trace.group_final,
                         train_pos, positives)
    report = metrics_report(result, cfg["k_list"])
    return {
        "recall": {str(k): v for k, v in report.recall.items()},
        "ndcg": {str(k): v for k, v in report.ndcg.items()},
        "evaluated_users": report.evaluated_users,
        "score_view": score_view,
        "checkpoint_meta": meta,
    }


def cmd_evaluate(cfg: dict, checkpoint_path=None) -> dict:
    """Rank test groups for every user with test positives and report Recall/NDCG."""
    out = _out_dir(cfg)
    checkpoint_path = checkpoint_path or out / CHECKPOINT_FILE
    graph, digest = load_run_graph(cfg)
    split = _load_split(cfg, graph)
    payload = _evaluate_checkpoint(cfg, checkpoint_path, split, split.test_positives)
    payload["dataset_hash"] = digest
    payload["config"] = cfg
    write_json(out / METRICS_FILE, payload)
    for k in cfg["k_list"]:
        print(f"recall@{k}={payload['recall'][str(k)]:.4f} "
              f"ndcg@{k}={payload['ndcg'][str(k)]:.4f}")
    print(f"evaluated_users={payload['evaluated_users']}")
    print(f"wrote {out / METRICS_FILE}")
    return payload


def cmd_coldstart(cfg: dict, k_values) -> dict:
    """Cap per-user training group degree at each k, retrain from scratch, evaluate."""
    k_values = [int(k) for k in k_values]
    if not k_values:
        raise ConfigError("k_values must be nonempty")
    out = _out_dir(cfg)
    graph, digest = load_run_graph(cfg)
    split = _load_split(cfg, graph)
    hp = config_hyperparams(cfg)
    rows = []
    for k in k_values:
        capped_train = cap_group_degree(split.train, k, cfg["split_seed"])
        capped_split = SplitGraph(capped_train, split.val_positives, split.test_positives,
                                  split.seed, split.test_ratio, split.val_ratio)
        emb, history = train(
            capped_split, hp, eval_every=cfg["eval_every"], max_epochs=cfg["max_epochs"],
            mode=cfg["variant"], disable_cssl=cfg["disable_cssl"],
            disable_group_reg=cfg["disable_group_reg"], disable_thc=cfg["disable_thc"],
            score_view=cfg["score_view"], allow_large=cfg["allow_large"])
        hgs = HypergraphSet.from_graph(capped_train)
        trace = forward(emb, hgs, hp if not cfg["disable_thc"] else
                        config_hyperparams({**cfg, "gamma": 0.0}), mode=cfg["variant"])
        train_pos = {u: groups for u, groups in enumerate(capped_train.groups_per_user())
                     if groups.size}
        result = rank_groups(scoring_embedding(trace, cfg["score_view"]),
                             trace.group_final, train_pos, split.test_positives)
        report = metrics_report(result, cfg["k_list"])
        rows.append({
            "k": k,
            "remaining_user_group_edges": len(capped_train.user_group_edges),
            "recall": {str(kk): v for kk, v in report.recall.items()},
            "ndcg": {str(kk): v for kk, v in report.ndcg.items()},
            "epochs_run": history.epochs_run,
        })
        print(f"k={k}: edges={rows[-1]['remaining_user_group_edges']} "
              + " ".join(f"recall@{kk}={report.recall[kk]:.4f}" for kk in report.recall))
    payload = {"command": "coldstart", "config": cfg, "dataset_hash": digest, "runs": rows}
    write_json(out / COLDSTART_FILE, payload)
    print(f"wrote {out / COLDSTART_FILE}")
    return payload


def cmd_analyze(cfg: dict, checkpoint_path=None) -> dict:
    """Cross-view consistency plus the binned relatedness/common-member analysis."""
    out = _out_dir(cfg)
    checkpoint_path = checkpoint_path or out / CHECKPOINT_FILE
    graph, digest = load_run_graph(cfg)
    split = _load_split(cfg, graph)
    emb, hp, meta = load_checkpoint(checkpoint_path)
    hgs = HypergraphSet.from_graph(split.train)
    trace = forward(emb, hgs, hp, mode=meta.get("mode", "default"))
    cons = consistency(trace.user_item, trace.user_group)
    memberships = {g: members for g, members in
                   enumerate(split.train.users_per_group()) if members.size}
    binned, pearson = group_relatedness_analysis(trace.group_final, memberships,
                                                 num_bins=cfg["analysis_bins"])
    with open(out / ANALYSIS_CSV, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["relatedness", "common_user_ratio"])
        for rel, ratio in binned:
            writer.writerow([repr(float(rel)), repr(float(ratio))])
    payload = {
        "command": "analyze",
        "config": cfg,
        "dataset_hash": digest,
        "consistency": cons.value if cons.defined else None,
        "consistency_defined": cons.defined,
        "pearson": pearson,
        "num_bins": len(binned),
    }
    write_json(out / ANALYSIS_JSON, payload)
    print(f"consistency={'undefined' if not cons.defined else f'{cons.value:.4f}'} "
          f"pearson={pearson:.4f} bins={len(binned)}")
    print(f"wrote {out / ANALYSIS_JSON} and {out / ANALYSIS_CSV}")
    return payload


def cmd_gradcheck(out_dir: str, *, equivalence: bool = False, seed: int = 0) -> dict:
    """Finite-difference gradient suite on a small instance; optional equivalence battery."""
    from .training import sample_negatives

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    graph = generate_synthetic(2, 3, 2, 3, 0.6, 0.2, seed=seed)
    split = split_train_test(graph, 0.0, 0.0, seed=seed)
    hgs = HypergraphSet.from_graph(split.train)
    triples = sample_negatives(split, seed, 1)
    checks = []
    for gamma, beta, layers in ((0.0, 0.5, 1), (0.5, 0.0, 1), (1.0, 1.0, 2)):
        hp = Hyperparams(gamma=gamma, beta=beta, d=3, num_layers=layers, seed=seed)
        emb = EmbeddingTable.initialize(graph.num_users, graph.num_groups, hp.d, seed)
        report = finite_diff_check(emb, hgs, triples, hp)
        checks.append({"gamma": gamma, "beta": beta, "num_layers": layers,
                       **asdict(report), "worst_index": list(report.worst_index)})
        print(f"gradcheck gamma={gamma} beta={beta} L={layers}: "
              f"max_rel_error={report.max_rel_error:.2e} "
              f"{'PASS' if report.passed else 'FAIL'}")
    payload = {"command": "gradcheck", "gradient_checks": checks,
               "all_passed": all(c["passed"] for c in checks)}
    if equivalence:
        battery = run_equivalence_battery()
        payload["equivalence"] = battery
        payload["all_passed"] = payload["all_passed"] and battery["all_passed"]
        print(f"equivalence battery: {'PASS' if battery['all_passed'] else 'FAIL'} "
              f"({battery['num_cases']} cases per check)")
    write_json(out / GRADCHECK_FILE, payload)
    print(f"wrote {out / GRADCHECK_FILE}")
    return payload


def _parse_set_overrides(items) -> dict:
    overrides = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            overrides[key] = json.loads(raw)
        except json.JSONDecodeError:
            overrides[key] = raw
    return overrides


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gtgs",
        description="Group identification: hypergraph training, evaluation, analyses")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out-dir", help="output directory (overrides config)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override any config key (value parsed as JSON)")

    for name, help_text in (
            ("prepare", "split the dataset and emit statistics"),
            ("train", "train on the prepared split"),
            ("evaluate", "rank and score a checkpoint on the test split"),
            ("coldstart", "cap training group degree, retrain, evaluate per k"),
            ("analyze", "consistency and group-relatedness analysis")):
        p = sub.add_parser(name, help=help_text)
        add_common(p)
        if name in ("evaluate", "analyze"):
            p.add_argument("--checkpoint", help="checkpoint path (default: out_dir)")
        if name == "coldstart":
            p.add_argument("--k-values", default="1,2,3,4",
                           help="comma-separated degree caps")
        if name == "train":
            for flag in ("disable-cssl", "disable-group-reg", "disable-thc"):
                p.add_argument(f"--{flag}", action="store_true", default=None)
            p.add_argument("--variant", choices=VARIANT_MODES)

    g = sub.add_parser("gradcheck", help="finite-difference and equivalence batteries")
    g.add_argument("--out-dir", default="runs/gradcheck")
    g.add_argument("--equivalence", action="store_true")
    g.add_argument("--seed", type=int, default=0)
    return parser


def _config_from_args(args) -> dict:
    overrides = _parse_set_overrides(getattr(args, "set", None))
    if getattr(args, "out_dir", None):
        overrides["out_dir"] = args.out_dir
    for attr, key in (("disable_cssl", "disable_cssl"),
                      ("disable_group_reg", "disable_group_reg"),
                      ("disable_thc", "disable_thc")):
        if getattr(args, attr, None):
            overrides[key] = True
    if getattr(args, "variant", None):
        overrides["variant"] = args.variant
    return load_config(getattr(args, "config", None), overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "gradcheck":
            payload = cmd_gradcheck(args.out_dir, equivalence=args.equivalence,
                                    seed=args.seed)
            return 0 if payload["all_passed"] else 1
        cfg = _config_from_args(args)
        if args.command == "prepare":
            cmd_prepare(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, checkpoint_path=getattr(args, "checkpoint", None))
        elif args.command == "coldstart":
            cmd_coldstart(cfg, args.k_values.split(","))
        elif args.command == "analyze":
            cmd_analyze(cfg, checkpoint_path=getattr(args, "checkpoint", None))
        return 0
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
