"""Command-line entry point: ``dialmat <subcommand> [options]``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as C
from .checkpoint import (Checkpoint, load_checkpoint, restore_maper, restore_questioner,
                         save_checkpoint)
from .dialworld import dataset as D
from .dialworld.language import QuestionType, encode
from .evaluate import ASK_POLICIES, evaluate, questioner_runner
from .questioner import rl_finetune, supervised_pretrain
from .train import collect_steps, train_maper

log = logging.getLogger("dialmat")

ABLATION_VARIANTS = {
    "baseline-no-parallel-encoders": ["model.parallel_encoders=false", "mat.enabled=false"],
    "w/o MAT": ["mat.enabled=false"],
    "MAT-action-only": ["mat.enabled=true", "mat.modalities=[act]"],
    "full": ["mat.enabled=true"],
}


class CLIError(Exception):
    pass


def _config(args, extra: list[str] = ()) -> dict:
    return C.load_config(args.config, list(args.set or []) + list(extra))


def _with_data_env(cfg: dict, data_dir) -> dict:
    """The dataset's own generation config is authoritative for the world."""
    cfg = dict(cfg)
    cfg["env"] = D.load_config(data_dir).to_dict()
    return cfg


def _write_rows(path, rows: list[dict]) -> None:
    if not path:
        return
    with open(path, "a") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    paths = D.generate_dataset(C.dataset_config(cfg), args.out)
    counts = {name: sum(1 for _ in open(p)) for name, p in paths.items() if p.suffix == ".jsonl"}
    print(json.dumps({"out": str(args.out), "counts": counts}, sort_keys=True))
    return 0


def _train_one(cfg: dict, data_dir, seed: int, metrics=None, eval_split="valid_seen",
               ask_policy="oracle-always"):
    cfg = _with_data_env(cfg, data_dir)
    cfg["seed"] = seed
    tc = C.train_config(cfg, data_dir)
    world = C.dataset_config(cfg).world
    train_steps = collect_steps(D.load_split(data_dir, "train"), world)
    valid_steps = collect_steps(D.load_split(data_dir, "valid_seen"), world)
    if metrics:
        Path(metrics).write_text("")
    result = train_maper(tc, train_steps, valid_steps,
                         on_epoch=(lambda r: _write_rows(metrics, [r])) if metrics else None)
    report = None
    if eval_split:
        report = evaluate(result.model, D.load_split(data_dir, eval_split), world, ask_policy,
                          split=eval_split)
        _write_rows(metrics, [{"epoch": result.epoch, "split": eval_split,
                               "SR": report.sr, "PWSR": report.pwsr}])
    return cfg, result, report


def _maper_checkpoint(cfg: dict, result) -> Checkpoint:
    return Checkpoint(cfg, cfg["seed"], result.epoch, maper=dict(result.model.state_dict()),
                      perturbations=result.perturbations, optimizer=result.optimizer.state())


def cmd_train_maper(args) -> int:
    cfg = _config(args)
    seed = cfg["seed"] if args.seed is None else args.seed
    cfg, result, report = _train_one(cfg, args.data, seed, args.metrics,
                                     eval_split=None if args.no_eval else "valid_seen")
    save_checkpoint(args.out, _maper_checkpoint(cfg, result))
    summary = {"checkpoint": str(args.out), "epochs": result.epoch,
               "final_train_loss": result.history[-2 if len(result.history) > 1 else -1]["loss"]
               if result.history else None}
    if report is not None:
        summary.update(valid_seen_SR=report.sr, valid_seen_PWSR=report.pwsr)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_pretrain_questioner(args) -> int:
    cfg = _config(args)
    qcfg, pcfg, _ = C.questioner_configs(cfg)
    corpus = []
    with open(Path(args.data) / "questioner_labels.jsonl") as fh:
        for line in fh:
            rec = json.loads(line)
            corpus.append((encode(rec["instruction_tokens"]), int(QuestionType[rec["label"]])))
    from .questioner import Questioner
    model, report = supervised_pretrain(corpus, pcfg, Questioner(qcfg, seed=pcfg.seed))
    _write_rows(args.metrics, [{"epoch": i + 1, "split": "questioner_train", "loss": loss}
                               for i, loss in enumerate(report.train_losses)])
    save_checkpoint(args.out, Checkpoint(cfg, pcfg.seed, pcfg.epochs, kind="questioner",
                                         questioner=dict(model.state_dict())))
    print(json.dumps({"checkpoint": str(args.out), **dataclasses.asdict(report)}, sort_keys=True))
    return 0


def cmd_rl_questioner(args) -> int:
    qckpt = load_checkpoint(args.questioner)
    mckpt = load_checkpoint(args.maper)
    questioner = restore_questioner(qckpt)
    maper = restore_maper(mckpt)
    cfg = _config(args)
    _, _, rl = C.questioner_configs(cfg)
    world = D.load_config(args.data).world
    episodes = D.load_split(args.data, args.split)
    questioner, report = rl_finetune(questioner, episodes, questioner_runner(maper, world), rl)
    _write_rows(args.metrics, [{"epoch": i + 1, "split": f"rl_{args.split}", "reward": r}
                               for i, r in enumerate(report.reward_curve)])
    save_checkpoint(args.out, Checkpoint(qckpt.config, qckpt.seed, rl.iterations, kind="questioner",
                                         questioner=dict(questioner.state_dict())))
    print(json.dumps({"checkpoint": str(args.out), "reward_curve": report.reward_curve},
                     sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    maper = restore_maper(load_checkpoint(args.maper))
    questioner = restore_questioner(load_checkpoint(args.questioner)) if args.questioner else None
    world = D.load_config(args.data).world
    episodes = D.load_split(args.data, args.split)
    if args.limit:
        episodes = episodes[: args.limit]
    report = evaluate(maper, episodes, world, args.ask_policy, questioner, split=args.split)
    print(json.dumps(report.to_dict(per_episode=args.per_episode), sort_keys=True))
    return 0


def ablation_table(results: dict[str, list[dict]]) -> str:
    lines = ["| variant | seeds | SR mean ± sd | PWSR mean ± sd |", "|---|---|---|---|"]
    for name, rows in results.items():
        sr = np.array([r["SR"] for r in rows])
        pw = np.array([r["PWSR"] for r in rows])
        lines.append(f"| {name} | {len(rows)} | {sr.mean():.3f} ± {sr.std(ddof=0):.3f} "
                     f"| {pw.mean():.3f} ± {pw.std(ddof=0):.3f} |")
    return "\n".join(lines)


def cmd_ablate(args) -> int:
    if args.seeds < 1:
        raise CLIError("--seeds must be >= 1")
    variants = args.variants or list(ABLATION_VARIANTS)
    unknown = set(variants) - set(ABLATION_VARIANTS)
    if unknown:
        raise CLIError(f"unknown variants {sorted(unknown)}; choose from {list(ABLATION_VARIANTS)}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results: dict[str, list[dict]] = {}
    for name in variants:
        cfg = _config(args, ABLATION_VARIANTS[name])
        for seed in range(args.seeds):
            _, _, report = _train_one(cfg, args.data, seed, eval_split=args.split,
                                      ask_policy=cfg["eval"]["ask_policy"])
            row = {"variant": name, "seed": seed, "split": args.split,
                   "SR": report.sr, "PWSR": report.pwsr}
            results.setdefault(name, []).append(row)
            _write_rows(out / "ablation.jsonl", [row])
            log.info("%s seed %d: SR %.3f PWSR %.3f", name, seed, report.sr, report.pwsr)
    table = ablation_table(results)
    (out / "ablation.md").write_text(table + "\n")
    print(table)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dialmat", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="YAML run config")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config value, e.g. mat.eta=0.01")
        sp.set_defaults(fn=fn)
        return sp

    sp = add("gen-data", cmd_gen_data, "generate the dataset splits")
    sp.add_argument("--out", required=True)

    sp = add("train-maper", cmd_train_maper, "train the action predictor")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True, help="checkpoint path")
    sp.add_argument("--metrics", help="metrics JSONL path")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--no-eval", action="store_true", help="skip the closing valid_seen rollout")

    sp = add("pretrain-questioner", cmd_pretrain_questioner, "supervised questioner pretraining")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--metrics")

    sp = add("rl-questioner", cmd_rl_questioner, "REINFORCE fine-tuning of the questioner")
    sp.add_argument("--data", required=True)
    sp.add_argument("--maper", required=True)
    sp.add_argument("--questioner", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--split", default="valid_seen")
    sp.add_argument("--metrics")

    sp = add("eval", cmd_eval, "closed-loop evaluation; prints a JSON report")
    sp.add_argument("--data", required=True)
    sp.add_argument("--maper", required=True)
    sp.add_argument("--questioner")
    sp.add_argument("--split", default="pseudo_test", choices=D.SPLITS)
    sp.add_argument("--ask-policy", default="oracle-always", choices=ASK_POLICIES)
    sp.add_argument("--limit", type=int, help="evaluate only the first N episodes")
    sp.add_argument("--per-episode", action="store_true")

    sp = add("ablate", cmd_ablate, "train and compare the ablation variants over seeds")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seeds", type=int, default=5)
    sp.add_argument("--split", default="pseudo_test", choices=D.SPLITS)
    sp.add_argument("--variants", nargs="*", help=f"subset of {list(ABLATION_VARIANTS)}")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.fn(args)
    except (C.ConfigError, CLIError, FileNotFoundError, ValueError, KeyError) as e:
        print(f"dialmat {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
