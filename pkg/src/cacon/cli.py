"""Command-line interface.

Subcommands: gen-data, pretrain, finetune, eval-id, eval-verify, loio,
cross-eval, verify. Every subcommand takes --config PATH, optional --seed N
(overriding the config's seed), and --out DIR; pretrain adds --mode. Exit
codes: 0 success, 1 config-class error (bad config, manifest, tensor file,
usage), 2 runtime failure. Artifacts contain no timestamps; wall-clock lines
go to the run.log sidecar only.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import sys
from pathlib import Path

from . import pipeline, plots, rng as rngmod
from .config import ConfigError, load_config
from .errors import CaconError
from .model import load_checkpoint, save_checkpoint
from .optim import lr_schedule
from .synthdata import generate, save_dataset

PROG = "cacon"


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog=PROG, description=__doc__)
    subs = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, descr in [
        ("gen-data", "synthesize a dataset (manifest + tensors + oracle sidecar)"),
        ("pretrain", "contrastive stage-one training"),
        ("finetune", "linear classifier over the frozen representation"),
        ("eval-id", "rank-1 identification on the test splits"),
        ("eval-verify", "pair verification with a cross-validated threshold"),
        ("loio", "leave-one-image-out protocol"),
        ("cross-eval", "cross-dataset transfer evaluation"),
        ("verify", "re-hash the config and check artifact stamps under --out"),
    ]:
        sub = subs.add_parser(name, help=descr)
        sub.add_argument("--config", required=True, help="JSON config path")
        sub.add_argument("--seed", type=int, default=None,
                         help="override the config seed")
        sub.add_argument("--out", required=True, help="output directory")
        if name == "pretrain":
            sub.add_argument("--mode", choices=["cacon", "simclr-baseline"],
                             default=None, help="override pipeline.mode")
    return parser


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


class _RunLog:
    """Timestamped sidecar; the only artifact allowed to differ across reruns."""

    def __init__(self, out_dir: Path, command: str):
        self.path = out_dir / "run.log"
        self.lines = [f"{_now()} start {command}"]

    def note(self, msg: str) -> None:
        self.lines.append(f"{_now()} {msg}")

    def close(self, status: str) -> None:
        self.lines.append(f"{_now()} end {status}")
        self.path.write_text("\n".join(self.lines) + "\n")


def _write_json(path: Path, doc: dict) -> None:
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def _write_report(out: Path, report, figure_fn) -> None:
    _write_json(out / "report.json", report.to_dict())
    (out / "summary.txt").write_text(report.summary_text())
    figure_fn(report, out / "figure.png")


def _load_encoder(cfg):
    params, meta = load_checkpoint(cfg.pipeline.checkpoint_dir)
    return params, meta


def _cmd_gen_data(cfg, cfg_hash, seed, out: Path) -> None:
    ds = generate(cfg.data.synth, seed, name=out.name)
    save_dataset(ds, out, cfg_hash)
    print(f"wrote {len(ds.records)} images for {cfg.data.synth.n_subjects} "
          f"subjects to {out}")


def _cmd_pretrain(cfg, cfg_hash, seed, out: Path, mode: str) -> None:
    ds = pipeline.load_dataset(cfg.data.dataset_dir)
    view = pipeline.unlabeled_view(ds, cfg.data.pretrain_splits)
    result = pipeline.pretrain(view, cfg, seed, mode, age_transform=ds.oracle)
    save_checkpoint(out / "checkpoint", result.params, {
        "kind": "encoder", "config_hash": cfg_hash, "seed": seed,
        "mode": mode, "dataset": ds.name,
    })
    opt = cfg.optim.pretrain
    epochs = cfg.pipeline.pretrain_epochs
    lrs = [lr_schedule(opt.base_lr, e, epochs, opt.warmup_epochs)
           for e in range(epochs)]
    with open(out / "loss_curve.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "mean_loss", "lr"])
        for e, (loss, lr) in enumerate(zip(result.history["epoch_losses"], lrs)):
            writer.writerow([e, f"{loss:.10g}", f"{lr:.10g}"])
    plots.save_loss_curve(result.history["epoch_losses"], lrs,
                          out / "loss_curve.png", f"pretrain ({mode})")
    print(f"pretrained {epochs} epochs ({mode}); checkpoint in {out / 'checkpoint'}")


def _cmd_finetune(cfg, cfg_hash, seed, out: Path) -> None:
    ds = pipeline.load_dataset(cfg.data.dataset_dir)
    params, meta = _load_encoder(cfg)
    fit = pipeline.finetune_linear(params, ds, cfg, seed)
    save_checkpoint(out / "classifier", fit.clf, {
        "kind": "classifier", "config_hash": cfg_hash, "seed": seed,
        "mode": meta.get("mode", ""), "dataset": ds.name,
        "class_subjects": fit.class_subjects,
        "encoder_digest": fit.encoder_digest,
    })
    with open(out / "finetune_curve.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "mean_loss"])
        for e, loss in enumerate(fit.history["epoch_losses"]):
            writer.writerow([e, f"{loss:.10g}"])
    plots.save_loss_curve(fit.history["epoch_losses"], [],
                          out / "finetune_curve.png", "linear fine-tune")
    print(f"fine-tuned over {len(fit.class_subjects)} classes; "
          f"classifier in {out / 'classifier'}")


def _load_classifier(cfg):
    clf, meta = load_checkpoint(cfg.pipeline.classifier_dir)
    if meta.get("kind") != "classifier" or "class_subjects" not in meta:
        raise ConfigError(
            f"{cfg.pipeline.classifier_dir} is not a classifier checkpoint"
        )
    return clf, meta


def _cmd_eval_id(cfg, cfg_hash, seed, out: Path) -> None:
    ds = pipeline.load_dataset(cfg.data.dataset_dir)
    params, enc_meta = _load_encoder(cfg)
    clf, clf_meta = _load_classifier(cfg)
    fit = pipeline.FinetuneResult(
        clf=clf, class_subjects=list(clf_meta["class_subjects"]),
        history={}, encoder_digest=clf_meta.get("encoder_digest", ""),
        seed=seed)
    report = pipeline.eval_identification(params, fit, ds, cfg,
                                          config_hash=cfg_hash,
                                          mode=enc_meta.get("mode", ""))
    _write_report(out, report, plots.save_identification_figure)
    print(report.summary_text(), end="")


def _cmd_eval_verify(cfg, cfg_hash, seed, out: Path) -> None:
    ds = pipeline.load_dataset(cfg.data.dataset_dir)
    params, enc_meta = _load_encoder(cfg)
    pairs = pipeline.make_verification_pairs(
        ds, cfg.data.test_splits, cfg.pipeline.n_verification_pairs,
        rngmod.stream(seed, rngmod.EVAL, 0))
    report = pipeline.eval_verification(params, ds, pairs, cfg,
                                        config_hash=cfg_hash, seed=seed,
                                        mode=enc_meta.get("mode", ""))
    _write_report(out, report, plots.save_verification_figure)
    print(report.summary_text(), end="")


def _cmd_loio(cfg, cfg_hash, seed, out: Path) -> None:
    ds = pipeline.load_dataset(cfg.data.dataset_dir)
    params, enc_meta = _load_encoder(cfg)
    report = pipeline.run_loio(params, ds, cfg, seed, config_hash=cfg_hash,
                               mode=enc_meta.get("mode", ""))
    _write_report(out, report, plots.save_accuracy_figure)
    print(report.summary_text(), end="")


def _cmd_cross_eval(cfg, cfg_hash, seed, out: Path) -> None:
    if not cfg.pipeline.cross_source_dir or not cfg.pipeline.cross_target_dir:
        raise ConfigError(
            "cross-eval needs pipeline.cross_source_dir and "
            "pipeline.cross_target_dir"
        )
    source = pipeline.load_dataset(cfg.pipeline.cross_source_dir)
    target = pipeline.load_dataset(cfg.pipeline.cross_target_dir)
    params, enc_meta = _load_encoder(cfg)
    report = pipeline.run_cross_dataset(params, source, target, cfg, seed,
                                        config_hash=cfg_hash,
                                        mode=enc_meta.get("mode", ""))
    figure = plots.save_verification_figure \
        if report.protocol == "cross-dataset-verification" \
        else plots.save_accuracy_figure
    _write_report(out, report, figure)
    print(report.summary_text(), end="")


def _cmd_verify(cfg, cfg_hash, seed_arg, out: Path) -> None:
    """Check the config-hash (and optional seed) stamps of artifacts in out."""
    stamped = []
    for path in sorted(out.rglob("*.json")):
        try:
            with open(path) as f:
                doc = json.load(f)
        except (OSError, json.JSONDecodeError):
            continue
        if isinstance(doc, dict) and "config_hash" in doc:
            stamped.append((path, doc))
    if not stamped:
        raise ConfigError(f"no stamped artifacts found under {out}")
    bad = 0
    for path, doc in stamped:
        problems = []
        if doc["config_hash"] != cfg_hash:
            problems.append(f"config_hash {doc['config_hash'][:12]}.. != "
                            f"{cfg_hash[:12]}..")
        if seed_arg is not None and "seed" in doc and doc["seed"] != seed_arg:
            problems.append(f"seed {doc['seed']} != {seed_arg}")
        if problems:
            bad += 1
            print(f"MISMATCH {path}: {'; '.join(problems)}")
        else:
            print(f"OK {path}")
    if bad:
        raise CaconError(f"{bad} of {len(stamped)} artifacts do not match")
    print(f"verified {len(stamped)} artifacts against config hash {cfg_hash[:12]}..")


def main(argv=None) -> int:
    parser = _build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 1
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        cfg, cfg_hash = load_config(args.config)
        seed = cfg.seed if args.seed is None else args.seed
        if seed < 0:
            raise ConfigError(f"seed must be >= 0, got {seed}")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        runlog = _RunLog(out, args.command)
        try:
            if args.command == "gen-data":
                _cmd_gen_data(cfg, cfg_hash, seed, out)
            elif args.command == "pretrain":
                mode = args.mode if args.mode else cfg.pipeline.mode
                _cmd_pretrain(cfg, cfg_hash, seed, out, mode)
            elif args.command == "finetune":
                _cmd_finetune(cfg, cfg_hash, seed, out)
            elif args.command == "eval-id":
                _cmd_eval_id(cfg, cfg_hash, seed, out)
            elif args.command == "eval-verify":
                _cmd_eval_verify(cfg, cfg_hash, seed, out)
            elif args.command == "loio":
                _cmd_loio(cfg, cfg_hash, seed, out)
            elif args.command == "cross-eval":
                _cmd_cross_eval(cfg, cfg_hash, seed, out)
            elif args.command == "verify":
                _cmd_verify(cfg, cfg_hash, args.seed, out)
        except BaseException:
            runlog.close("failed")
            raise
        runlog.close("ok")
        return 0
    except ConfigError as e:
        print(f"{PROG}: config error: {e}", file=sys.stderr)
        return 1
    except CaconError as e:
        print(f"{PROG}: run failure: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"{PROG}: run failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
