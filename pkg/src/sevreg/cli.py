"""Command-line entry points for data generation, the three stages, and the
experiment harnesses. Exit codes: 0 success, 1 validation error, 2 runtime
failure."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import (
    RunConfig,
    apply_overrides,
    config_from_dict,
    config_to_dict,
    run_id_for,
)
from .data import label_histogram, load_corpus, save_corpus
from .errors import ConfigError, SevregError, TrainingDivergedError
from .evaluation import write_report_json, write_results_csv
from .experiments import (
    ABLATION_VARIANTS,
    TAU_GRID,
    ablate,
    run_all,
    split_labeled,
    sweep_tau,
)
from .pipeline import (
    build_stage2_corpus,
    checkpoint_from_net,
    dump_embeddings,
    evaluate,
    load_checkpoint,
    net_from_checkpoint,
    pseudo_label,
    save_checkpoint,
    train_regression,
    train_stage2,
    train_stage3,
)
from .synthetic import build_world

logger = logging.getLogger(__name__)

RUN_ROOT_ENV = "SEVREG_RUN_ROOT"

CORPUS_NAMES = ("labeled", "unlabeled", "typical", "shifted_test")


def load_config(path: str | None, overrides: list[str]) -> RunConfig:
    doc = {}
    if path is not None:
        doc = json.loads(Path(path).read_text())
    doc = apply_overrides(doc, overrides)
    return config_from_dict(doc)


def resolve_run_root(cfg: RunConfig) -> Path:
    return Path(os.environ.get(RUN_ROOT_ENV, cfg.run_root))


def load_world(cfg: RunConfig):
    root = Path(cfg.data.root)
    missing = [n for n in CORPUS_NAMES if not (root / n / "manifest.json").exists()]
    if missing:
        raise ConfigError(
            f"missing corpora under '{root}': {missing}; run gen-data first"
        )
    return {name: load_corpus(root / name) for name in CORPUS_NAMES}


def persist_config(cfg: RunConfig, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "config.json").write_text(
        json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n"
    )


# ---------------------------------------------------------------------------
# Subcommand bodies
# ---------------------------------------------------------------------------


def cmd_gen_data(cfg: RunConfig, args) -> int:
    corpora = build_world(cfg.data.world)
    root = Path(cfg.data.root)
    for name, corpus in corpora.items():
        save_corpus(corpus, root / name)
    persist_config(cfg, root)
    print(f"wrote {', '.join(CORPUS_NAMES)} under {root}")
    return 0


def cmd_stage1(cfg: RunConfig, args) -> int:
    corpora = load_world(cfg)
    train, val, _ = split_labeled(corpora["labeled"], cfg.data.world)
    run_dir = Path(args.run_dir)
    persist_config(cfg, run_dir)
    result = train_regression(train, val, cfg.model, cfg.stage1, cfg.seed)
    save_checkpoint(
        run_dir / "stage1.dsqc",
        checkpoint_from_net(result.net, "stage1", config_to_dict(cfg)),
    )
    (run_dir / "history.json").write_text(json.dumps(result.history, indent=2) + "\n")
    print(f"stage1 checkpoint written to {run_dir / 'stage1.dsqc'}")
    return 0


def cmd_pseudo_label(cfg: RunConfig, args) -> int:
    corpora = load_world(cfg)
    run_dir = Path(args.run_dir)
    ckpt = load_checkpoint(run_dir / "stage1.dsqc")
    pseudo = pseudo_label(net_from_checkpoint(ckpt), corpora["unlabeled"])
    save_corpus(pseudo, run_dir / "pseudo")
    write_report_json(
        run_dir / "pseudo_histogram.json",
        {str(k): v for k, v in label_histogram(pseudo).items()},
    )
    print(f"pseudo-labeled corpus written to {run_dir / 'pseudo'}")
    return 0


def cmd_stage2(cfg: RunConfig, args) -> int:
    corpora = load_world(cfg)
    train, _, _ = split_labeled(corpora["labeled"], cfg.data.world)
    run_dir = Path(args.run_dir)
    persist_config(cfg, run_dir)
    pool = None
    if cfg.ablation.use_pseudo:
        if cfg.strategy == "simclr":
            pool = corpora["unlabeled"]
        else:
            pool = load_corpus(run_dir / "pseudo")
    mixed = build_stage2_corpus(
        train, pool, corpora["typical"] if cfg.ablation.use_typical else None
    )
    result = train_stage2(mixed, cfg.model, cfg.stage2, cfg.seed, cfg.strategy)
    save_checkpoint(
        run_dir / "stage2.dsqc",
        checkpoint_from_net(result.net, "stage2", config_to_dict(cfg)),
    )
    print(f"stage2 checkpoint written to {run_dir / 'stage2.dsqc'}")
    return 0


def cmd_stage3(cfg: RunConfig, args) -> int:
    corpora = load_world(cfg)
    train, val, _ = split_labeled(corpora["labeled"], cfg.data.world)
    run_dir = Path(args.run_dir)
    ckpt_path = run_dir / "stage2.dsqc"
    ckpt = load_checkpoint(ckpt_path) if ckpt_path.exists() else None
    result = train_stage3(train, val, cfg, ckpt)
    save_checkpoint(
        run_dir / "model.dsqc",
        checkpoint_from_net(result.net, "final", config_to_dict(cfg)),
    )
    print(f"final model written to {run_dir / 'model.dsqc'}")
    return 0


def cmd_evaluate(cfg: RunConfig, args) -> int:
    corpora = load_world(cfg)
    _, _, test = split_labeled(corpora["labeled"], cfg.data.world)
    run_dir = Path(args.run_dir)
    ckpt_path = Path(args.checkpoint) if args.checkpoint else run_dir / "model.dsqc"
    net = net_from_checkpoint(load_checkpoint(ckpt_path))
    reports = [
        evaluate(net, test, level="utterance"),
        evaluate(net, corpora["shifted_test"], level="speaker"),
    ]
    rid = run_id_for(config_to_dict(cfg), seed=cfg.seed)
    rows = [
        {
            "run_id": rid,
            "strategy": cfg.strategy,
            "dataset": r.dataset,
            "level": r.level,
            "seed": cfg.seed,
            "srcc": r.srcc,
            "pcc": r.pcc,
            "n": r.n,
        }
        for r in reports
    ]
    write_report_json(
        run_dir / "report.json",
        {"run_id": rid, "reports": [r.to_dict() for r in reports]},
    )
    write_results_csv(run_dir / "results.csv", rows)
    for r in reports:
        tag = " [FLAGGED: " + r.flag_reason + "]" if r.flagged else ""
        print(f"{r.dataset}/{r.level}: srcc={r.srcc} pcc={r.pcc} n={r.n}{tag}")
    return 0


def cmd_run_all(cfg: RunConfig, args) -> int:
    corpora = load_world(cfg)
    result = run_all(cfg, corpora, resolve_run_root(cfg))
    print(f"run {result['run_id']} complete: {result['run_dir'] / 'results.csv'}")
    return 0


def cmd_sweep_tau(cfg: RunConfig, args) -> int:
    corpora = load_world(cfg)
    grid = tuple(args.grid) if args.grid else TAU_GRID
    result = sweep_tau(cfg, corpora, resolve_run_root(cfg), grid=grid)
    print(f"sweep complete: {result['sweep_dir'] / 'sweep_tau.json'}")
    return 0


def cmd_ablate(cfg: RunConfig, args) -> int:
    corpora = load_world(cfg)
    variants = tuple(args.variants) if args.variants else ABLATION_VARIANTS
    result = ablate(cfg, corpora, resolve_run_root(cfg), variants=variants)
    print(f"ablations complete: {result['ablate_dir'] / 'ablate_summary.json'}")
    return 0


def cmd_dump_embeddings(cfg: RunConfig, args) -> int:
    corpora = load_world(cfg)
    net = net_from_checkpoint(load_checkpoint(Path(args.checkpoint)))
    corpus = corpora[args.corpus]
    dump_embeddings(net, corpus, Path(args.out))
    print(f"embeddings for '{args.corpus}' written to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sevreg",
        description="Weakly supervised severity regression experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text, run_dir=False, extra=None):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file (defaults apply)")
        p.add_argument(
            "overrides",
            nargs="*",
            metavar="key.path=value",
            help="dotted-path config overrides",
        )
        if run_dir:
            p.add_argument("--run-dir", required=True, help="stage artifact directory")
        if extra:
            extra(p)
        p.set_defaults(fn=fn)
        return p

    add("gen-data", cmd_gen_data, "generate the synthetic corpora")
    add("stage1", cmd_stage1, "train the teacher regression model", run_dir=True)
    add(
        "pseudo-label", cmd_pseudo_label,
        "pseudo-label the unlabeled pool with a stage-1 checkpoint", run_dir=True,
    )
    add("stage2", cmd_stage2, "weakly supervised contrastive pretraining", run_dir=True)
    add("stage3", cmd_stage3, "transfer weights and fine-tune", run_dir=True)

    def eval_extra(p):
        p.add_argument("--checkpoint", help="model checkpoint (default run-dir/model.dsqc)")

    add("evaluate", cmd_evaluate, "evaluate a checkpoint", run_dir=True, extra=eval_extra)
    add("run-all", cmd_run_all, "full multi-seed pipeline run")

    def sweep_extra(p):
        p.add_argument("--grid", type=float, nargs="*", help="temperature grid")

    add("sweep-tau", cmd_sweep_tau, "temperature sweep with baseline comparison",
        extra=sweep_extra)

    def ablate_extra(p):
        p.add_argument(
            "--variants", nargs="*", choices=ABLATION_VARIANTS,
            help="subset of ablation variants",
        )

    add("ablate", cmd_ablate, "data/loss/stage ablation harness", extra=ablate_extra)

    def dump_extra(p):
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--corpus", choices=CORPUS_NAMES, default="labeled")
        p.add_argument("--out", required=True)

    add("dump-embeddings", cmd_dump_embeddings, "write post-pooling embeddings",
        extra=dump_extra)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
    except (SevregError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.fn(cfg, args)
    except TrainingDivergedError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    except (SevregError, FileNotFoundError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - unexpected
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
