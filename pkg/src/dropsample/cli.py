"""``dropsample`` command line: generate, extract, train, compare, audit, report, replay.

Exit codes: 0 success, 2 usage, 3 I/O or malformed input, 4 numerical
divergence.  Every command writes a JSON run manifest next to its outputs;
``dropsample replay MANIFEST`` re-executes it.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from . import __version__
from .features import FeatureConfig, FeatureConfigError, build_feature_stack, write_tensor
from .sampler import QuotaTable, UpdaterConfig
from .strokes import DatasetError, generate_synthetic, load_dataset, write_dataset
from .trainer import (
    AuditError,
    TrainConfig,
    TrainLog,
    TrainingDivergedError,
    compare_dropsample,
    noise_audit,
    train,
)

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DIVERGED = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, command, args, inputs=(), outputs=(), extra=None):
    manifest = {
        "tool": "dropsample",
        "version": __version__,
        "command": command,
        "args": {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")},
        "seed": getattr(args, "seed", None),
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": sorted(str(p) for p in outputs),
    }
    if extra:
        manifest.update(extra)
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


# --------------------------------------------------------------------------
# generate


def cmd_generate(args):
    if not 0.0 <= args.mislabel < 1.0:
        raise UsageError("--mislabel must lie in [0, 1)")
    if args.classes < 2 or args.per_class < 1:
        raise UsageError("--classes must be >= 2 and --per-class >= 1")
    if args.jitter < 0:
        raise UsageError("--jitter must be >= 0")
    ds = generate_synthetic(args.classes, args.per_class, args.seed, args.mislabel, args.jitter, args.glyph_seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(ds, out, "jsonl")
    write_manifest(_manifest_path(args, out), "generate", args, outputs=[out])
    print(f"wrote {len(ds)} samples ({int(ds.noise_mask.sum())} mislabelled) to {out}")


def _manifest_path(args, out):
    if getattr(args, "manifest", None):
        return Path(args.manifest)
    out = Path(out)
    if out.suffix:
        return out.with_name(out.name + ".manifest.json")
    return out / "manifest.json"


# --------------------------------------------------------------------------
# extract


def _features(args):
    try:
        return FeatureConfig.parse(args.features, window=args.window)
    except FeatureConfigError as exc:
        raise UsageError(str(exc)) from None


def cmd_extract(args):
    fc = _features(args)
    ds = load_dataset(args.data, k=args.classes)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for s in ds.samples:
        path = out / f"{s.id:07d}.dsft"
        write_tensor(build_feature_stack(s, fc), path)
        written.append(path)
    write_manifest(
        _manifest_path(args, out), "extract", args, inputs=[args.data], outputs=written,
        extra={"channels": fc.channels, "feature_groups": fc.spec()},
    )
    print(f"wrote {len(written)} tensors with {fc.channels} channels to {out}")


# --------------------------------------------------------------------------
# train / compare


def train_config(args) -> TrainConfig:
    fc = _features(args)
    if not 0.0 <= args.warmup <= 1.0:
        raise UsageError("--warmup is a fraction of the iterations and must lie in [0, 1]")
    try:
        upd = UpdaterConfig(
            variant=args.sampler, beta=args.beta, gamma=args.gamma, q_min=args.qmin,
            confidence=args.confidence,
        )
        return TrainConfig(
            iterations=args.iterations, batch=args.batch, lr=args.lr, lr_decay=args.lr_decay,
            lr_decay_every=args.lr_decay_every, lam=args.lam, hidden=args.hidden, sampler=upd,
            t2=args.t2, warmup=args.warmup, features=fc, pool=args.pool,
            deform_strength=args.deform_strength, augment_bank=args.augment_bank,
            unit_norm=args.unit_norm, seed=args.seed, eval_interval=args.eval_interval,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load_pair(args):
    train_ds = load_dataset(args.train, k=args.classes)
    test_ds = load_dataset(args.test, k=train_ds.k)
    if test_ds.k != train_ds.k:
        raise DatasetError("train and test sets disagree on the class count")
    return train_ds, test_ds


def cmd_train(args):
    cfg = train_config(args)
    train_ds, test_ds = _load_pair(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train(train_ds, test_ds, cfg)
    outputs = [out / "model.bin", out / "trainlog.csv"]
    result.model.save(outputs[0])
    result.log.write_csv(outputs[1])
    if result.quota_table is not None:
        outputs.append(out / "quotas.bin")
        result.quota_table.save(outputs[-1])
    write_manifest(
        _manifest_path(args, out), "train", args, inputs=[args.train, args.test], outputs=outputs,
        extra={"config": cfg.to_dict(), "channels": cfg.features.channels},
    )
    last = result.log.records[-1]
    print(f"iterations={last['iteration']} test_error={last['test_error']:.4f} set_size={last['set_size']:.1f}")


def cmd_compare(args):
    if args.sampler == "off":
        raise UsageError("compare needs --sampler ds1 or ds2")
    cfg = train_config(args)
    train_ds, test_ds = _load_pair(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rep = compare_dropsample(train_ds, test_ds, cfg)
    with_csv, without_csv = out / "with_dropsample.csv", out / "without_dropsample.csv"
    rep.with_log.write_csv(with_csv)
    rep.without_log.write_csv(without_csv)
    quotas = out / "quotas.bin"
    rep.results[0].quota_table.save(quotas)
    report = out / "report.md"
    text = rep.markdown(with_csv.name, without_csv.name)
    if train_ds.noise_mask is not None:
        text += f"\nNoise audit (with DropSample): {noise_audit(rep.with_log, train_ds).format()}\n"
    report.write_text(text)
    write_manifest(
        _manifest_path(args, out), "compare", args, inputs=[args.train, args.test],
        outputs=[with_csv, without_csv, quotas, report], extra={"config": cfg.to_dict()},
    )
    sav = "unreachable" if rep.savings is None else f"{rep.savings:.4f}"
    print(f"accuracy with={rep.final_acc_with:.4f} without={rep.final_acc_without:.4f} savings={sav}")


# --------------------------------------------------------------------------
# audit / report


def cmd_audit(args):
    ds = load_dataset(args.data)
    qt = QuotaTable.load(args.quotas)
    try:
        audit = noise_audit(qt.quotas, ds, threshold=args.threshold)
    except AuditError as exc:
        raise UsageError(str(exc)) from None
    if len(qt) != len(ds):
        raise UsageError(f"quota table holds {len(qt)} samples, dataset {len(ds)}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps({
        "recall": audit.recall, "false_drop": audit.false_drop,
        "n_noisy": audit.n_noisy, "n_clean": audit.n_clean, "threshold": args.threshold,
    }, indent=2, sort_keys=True) + "\n")
    write_manifest(_manifest_path(args, out), "audit", args, inputs=[args.data, args.quotas], outputs=[out])
    print(audit.format())


REPORT_METRICS = {
    "set_size": ["set_size"],
    "test_error": ["test_error"],
    "groups": ["n_well", "n_confusing", "n_noisy"],
    "error_terms": ["grad_norm", "e1_norm", "e2_norm", "e3_norm"],
}


def cmd_report(args):
    logs = []
    for p in args.logs:
        log = TrainLog.read_csv(p)
        if not log.records:
            raise UsageError(f"{p}: log has no records (empty input)")
        logs.append((Path(p).stem, log))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    for name, cols in REPORT_METRICS.items():
        path = out / f"{name}.csv"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("run,iteration,metric,value\n")
            for run, log in logs:
                for r in log.records:
                    for c in cols:
                        fh.write(f"{run},{r['iteration']},{c},{float(r[c])!r}\n")
        outputs.append(path)
    if len(logs) > 1:
        path = out / "comparison.csv"
        iters = sorted({it for _, log in logs for it in log.iterations})
        by_run = [(run, {r["iteration"]: r for r in log.records}) for run, log in logs]
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            head = ["iteration"] + [f"{run}:{c}" for run, _ in by_run for c in ("test_error", "set_size")]
            fh.write(",".join(head) + "\n")
            for it in iters:
                row = [str(it)]
                for _, recs in by_run:
                    r = recs.get(it)
                    row += ["" if r is None else repr(float(r[c])) for c in ("test_error", "set_size")]
                fh.write(",".join(row) + "\n")
        outputs.append(path)
    summary = out / "summary.md"
    lines = ["| run | evaluations | final test error | final set size |", "|---|---|---|---|"]
    for run, log in logs:
        last = log.records[-1]
        lines.append(f"| {run} | {len(log.records)} | {last['test_error']:.4f} | {last['set_size']:.1f} |")
    summary.write_text("\n".join(lines) + "\n")
    outputs.append(summary)
    write_manifest(_manifest_path(args, out), "report", args, inputs=args.logs, outputs=outputs)
    print(f"wrote {len(outputs)} files to {out}")


# --------------------------------------------------------------------------
# replay


def cmd_replay(args):
    manifest = json.loads(Path(args.manifest).read_text())
    command = manifest.get("command")
    if command not in COMMANDS or command == "replay":
        raise UsageError(f"manifest names unknown command {command!r}")
    ns = argparse.Namespace(**manifest["args"])
    if args.out:
        _retarget(ns, command, Path(args.out))
    ns.manifest = None
    return COMMANDS[command](ns)


def _retarget(ns, command, out):
    out.mkdir(parents=True, exist_ok=True)
    if command in ("generate", "audit"):
        ns.out = str(out / Path(ns.out).name)
    else:
        ns.out = str(out)


COMMANDS = {
    "generate": cmd_generate,
    "extract": cmd_extract,
    "train": cmd_train,
    "compare": cmd_compare,
    "audit": cmd_audit,
    "report": cmd_report,
    "replay": cmd_replay,
}


# --------------------------------------------------------------------------
# argument parsing


def _add_training_flags(p):
    d = TrainConfig()
    u = UpdaterConfig()
    p.add_argument("--train", required=True, help="training set (JSONL or CSV)")
    p.add_argument("--test", required=True, help="test set (JSONL or CSV)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--classes", type=int, default=None, help="class count override")
    p.add_argument("--sampler", choices=["ds1", "ds2", "off"], default=u.variant)
    p.add_argument("--beta", type=float, default=u.beta)
    p.add_argument("--gamma", type=float, default=u.gamma)
    p.add_argument("--t2", type=float, default=d.t2)
    p.add_argument("--warmup", type=float, default=d.warmup, help="fraction of iterations")
    p.add_argument("--qmin", type=float, default=u.q_min)
    p.add_argument("--confidence", choices=["label", "predicted"], default=u.confidence)
    p.add_argument("--hidden", type=int, default=d.hidden)
    p.add_argument("--lambda", dest="lam", type=float, default=d.lam)
    p.add_argument("--lr", type=float, default=d.lr)
    p.add_argument("--lr-decay", type=float, default=d.lr_decay)
    p.add_argument("--lr-decay-every", type=int, default=d.lr_decay_every)
    p.add_argument("--iterations", type=int, default=d.iterations)
    p.add_argument("--batch", type=int, default=d.batch)
    p.add_argument("--features", default="bitmap")
    p.add_argument("--window", type=int, default=8)
    p.add_argument("--pool", type=int, default=d.pool)
    p.add_argument("--unit-norm", action=argparse.BooleanOptionalAction, default=d.unit_norm)
    p.add_argument("--augment-bank", type=int, default=d.augment_bank)
    p.add_argument("--deform-strength", type=float, default=d.deform_strength)
    p.add_argument("--eval-interval", type=int, default=d.eval_interval)
    p.add_argument("--seed", type=int, default=d.seed)


def build_parser():
    parser = argparse.ArgumentParser(prog="dropsample", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"dropsample {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic stroke dataset as JSONL")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--glyph-seed", type=int, default=0)
    p.add_argument("--mislabel", type=float, default=0.0)
    p.add_argument("--jitter", type=float, default=0.02)
    p.add_argument("--out", required=True)

    p = sub.add_parser("extract", help="write feature tensors for every sample")
    p.add_argument("--data", required=True)
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--features", default="bitmap")
    p.add_argument("--window", type=int, default=8)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train with or without DropSample")
    _add_training_flags(p)

    p = sub.add_parser("compare", help="paired runs with and without DropSample")
    _add_training_flags(p)

    p = sub.add_parser("audit", help="score final quotas against injected mislabels")
    p.add_argument("--data", required=True)
    p.add_argument("--quotas", required=True)
    p.add_argument("--threshold", type=float, default=0.1)
    p.add_argument("--out", required=True, help="JSON result file")

    p = sub.add_parser("report", help="tidy CSV summaries of training logs")
    p.add_argument("logs", nargs="+")
    p.add_argument("--out", required=True)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default=None, help="redirect outputs to this directory")

    for name, sp in sub.choices.items():
        sp.add_argument("--config", default=None, help="JSON file of flag values; flags override")
        sp.add_argument("--manifest", default=None, help=argparse.SUPPRESS)
        sp.set_defaults(func=COMMANDS[name])
    return parser


def parse_args(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            values = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise OSError(f"cannot read config {args.config}: {exc}") from None
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(values) - known)
        if unknown:
            parser.error(f"unknown key(s) in --config: {', '.join(unknown)}")
        sub.set_defaults(**values)
        args = parser.parse_args(argv)
    if "seed" in vars(args) and os.environ.get("DROPSAMPLE_SEED"):
        try:
            args.seed = int(os.environ["DROPSAMPLE_SEED"])
        except ValueError:
            parser.error("DROPSAMPLE_SEED must be an integer")
    return args


def main(argv=None):
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergedError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, DatasetError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
