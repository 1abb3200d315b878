"""Command-line entry point.

Machine-readable output goes to stdout; run headers, tables and errors go to
stderr. Exit codes: 0 ok, 1 usage or data error, 2 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from .audio_io import read_wav
from .classify import (
    DEFAULT_TAU,
    TrainConfig,
    evaluate,
    evaluation_report,
    load_dataset,
    predict,
    stratified_split,
    train,
)
from .errors import AcousticContactError, DigestMismatch
from .features import (
    EmphasisConfig,
    FeatureConfig,
    Featurizer,
    classification_config,
    streaming_config,
    write_feature_dump,
)
from .nn import Model, ModelSpec, load_checkpoint, save_checkpoint
from .stream import JsonlSink, StreamConfig, open_source, run_stream
from .synth import CorpusSpec, corpus_spec_from_dict, generate_corpus

CONFIG_ENV = "ACOUSTIC_CONTACT_CONFIG"

EXIT_OK, EXIT_USAGE, EXIT_INTERNAL = 0, 1, 2

# Allowed keys per config-file section; anything else is rejected.
CONFIG_SCHEMA: dict[str, set[str]] = {
    "global": {"seed", "verbose"},
    "synth": {"spec"},
    "featurize": {"n_mels", "feature_mode"},
    "train": {"epochs", "lr", "batch_size", "n_mels", "feature_mode", "split_ratio"},
    "eval": {"split"},
    "classify": {"tau"},
    "stream": {"rate", "n_mels", "emphasis", "tau", "queue_capacity", "drop_policy", "full_matrix"},
}

log = logging.getLogger("acoustic_contact")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_toml(path: str | Path) -> dict:
    with open(path, "rb") as fp:
        try:
            return tomllib.load(fp)
        except tomllib.TOMLDecodeError as exc:
            raise UsageError(f"{path}: {exc}") from None


def load_config(path: str | Path | None) -> dict:
    if path is None:
        return {}
    cfg = _load_toml(path)
    for section, values in cfg.items():
        if section not in CONFIG_SCHEMA:
            raise UsageError(f"config: unknown section [{section}]")
        if not isinstance(values, dict):
            raise UsageError(f"config: [{section}] must be a table")
        unknown = sorted(set(values) - CONFIG_SCHEMA[section])
        if unknown:
            raise UsageError(f"config: unknown key(s) in [{section}]: {', '.join(unknown)}")
    return cfg


def _pick(flag, config: dict, section: str, key: str, default):
    if flag is not None:
        return flag
    return config.get(section, {}).get(key, default)


def _diag(obj) -> None:
    print(json.dumps(obj, sort_keys=True), file=sys.stderr)


def _feature_config(mode: str, n_mels: int | None) -> FeatureConfig:
    if mode == "classify":
        return classification_config(n_mels or 64)
    if mode == "stream":
        return streaming_config(n_mels or 32)
    raise UsageError(f"unknown feature mode {mode!r} (expected 'classify' or 'stream')")


def cmd_synth(args, config) -> int:
    spec_path = _pick(args.spec, config, "synth", "spec", None)
    seed = args.seed if args.seed is not None else config.get("global", {}).get("seed")
    if spec_path is not None:
        spec = corpus_spec_from_dict(_load_toml(spec_path), master_seed=seed)
    else:
        spec = CorpusSpec() if seed is None else CorpusSpec(master_seed=seed)
    _diag({
        "command": "synth",
        "classes": 1 + len(spec.profiles),
        "interactions": [k.value for k in spec.interactions],
        "clips_per_cell": spec.clips_per_cell,
        "blank_clips": spec.blank_clips,
        "clip_duration_s": spec.clip_duration_s,
        "fs": spec.fs,
        "master_seed": spec.master_seed,
    })
    manifest = generate_corpus(spec, args.out_dir)
    per_class: dict[str, int] = {}
    for e in manifest:
        per_class[e.class_name] = per_class.get(e.class_name, 0) + 1
    print(json.dumps({"files": len(manifest), "classes": len(per_class), "per_class": per_class}, sort_keys=True))
    return EXIT_OK


def cmd_featurize(args, config) -> int:
    mode = _pick(args.feature_mode, config, "featurize", "feature_mode", "classify")
    n_mels = _pick(args.n_mels, config, "featurize", "n_mels", None)
    fcfg = _feature_config(mode, n_mels)
    ds = load_dataset(args.corpus, fcfg)
    with open(args.out_file, "wb") as fp:
        n = write_feature_dump(fp, (spec for spec, _ in ds.items), fcfg.eps_floor)
    labels_path = Path(str(args.out_file) + ".labels.json")
    labels_path.write_text(json.dumps({"class_names": ds.class_names, "labels": ds.labels.tolist()}))
    first = ds.items[0][0]
    print(json.dumps({"windows": n, "n_mels": first.n_mels, "n_frames": first.n_frames, "digest": first.config_digest}))
    return EXIT_OK


def cmd_train(args, config) -> int:
    seed = args.seed if args.seed is not None else config.get("global", {}).get("seed", 0)
    mode = _pick(args.feature_mode, config, "train", "feature_mode", "classify")
    n_mels = _pick(args.n_mels, config, "train", "n_mels", None)
    fcfg = _feature_config(mode, n_mels)
    tcfg = TrainConfig(
        lr=float(_pick(args.lr, config, "train", "lr", 3e-4)),
        batch_size=int(_pick(args.batch_size, config, "train", "batch_size", 32)),
        epochs=int(_pick(args.epochs, config, "train", "epochs", 2000)),
        split_ratio=float(_pick(None, config, "train", "split_ratio", 0.8)),
        seed=int(seed),
    )
    _diag({
        "command": "train",
        "lr": tcfg.lr,
        "batch_size": tcfg.batch_size,
        "epochs": tcfg.epochs,
        "split_ratio": tcfg.split_ratio,
        "seed": tcfg.seed,
        "feature_mode": mode,
        "features": fcfg.to_dict(),
        "adam": {"beta1": 0.9, "beta2": 0.999, "eps": 1e-8},
    })
    ds = load_dataset(args.corpus, fcfg)
    if len(ds.class_names) < 2:
        raise UsageError("training needs at least two classes")
    model = Model.init(ModelSpec(len(ds.class_names)), seed=tcfg.seed)

    def report(rec):
        if args.verbose or rec.epoch == tcfg.epochs or rec.epoch % 50 == 0:
            _diag({"epoch": rec.epoch, "train_loss": rec.train_loss, "val_accuracy": rec.val_accuracy})

    result = train(ds, model, tcfg, on_epoch=report)
    ckpt = result.checkpoint
    ckpt.metadata.update({"feature_config": fcfg.to_dict(), "n_mels": fcfg.n_mels, "feature_mode": mode})
    save_checkpoint(ckpt, args.out_checkpoint)
    history_path = Path(args.history or str(args.out_checkpoint) + ".history.json")
    history = [
        {"epoch": r.epoch, "train_loss": r.train_loss, "val_accuracy": r.val_accuracy} for r in result.history
    ]
    history_path.write_text(json.dumps(history, indent=1) + "\n")
    print(json.dumps({
        "checkpoint": str(args.out_checkpoint),
        "history": str(history_path),
        "epochs": len(history),
        "best_epoch": result.best_epoch,
        "best_val_accuracy": result.best_val_accuracy,
    }))
    return EXIT_OK


def _checkpoint_features(ckpt) -> FeatureConfig:
    d = ckpt.metadata.get("feature_config")
    if d is None:
        raise UsageError("checkpoint carries no feature configuration")
    return FeatureConfig.from_dict(d)


def cmd_eval(args, config) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    fcfg = _checkpoint_features(ckpt)
    ds = load_dataset(args.corpus, fcfg)
    if ds.items[0][0].config_digest != ckpt.featurization_digest:
        raise DigestMismatch("corpus featurization differs from the checkpoint's")
    if ds.class_names != ckpt.class_names:
        raise UsageError(f"corpus classes {ds.class_names} differ from checkpoint classes {ckpt.class_names}")
    split = _pick(args.split, config, "eval", "split", "all")
    if split != "all":
        tc = ckpt.metadata["train_config"]
        train_ds, val_ds = stratified_split(ds, tc["split_ratio"], tc["seed"])
        ds = {"train": train_ds, "val": val_ds}[split]
    acc, cm = evaluate(ckpt.model, ds)
    rep = evaluation_report(acc, cm, ds.class_names)
    rep["split"] = split
    rep["windows"] = len(ds)
    print(json.dumps(rep))
    print(cm.render(ds.class_names), file=sys.stderr)
    if args.report:
        Path(args.report).write_text(json.dumps(rep, indent=1) + "\n")
    return EXIT_OK


def cmd_classify(args, config) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    fcfg = _checkpoint_features(ckpt)
    tau = float(_pick(args.tau, config, "classify", "tau", DEFAULT_TAU))
    clip = read_wav(args.wav)
    fz = Featurizer(fcfg, clip.sample_rate_hz)
    if fz.digest != ckpt.featurization_digest:
        raise DigestMismatch(
            f"featurization at {clip.sample_rate_hz} Hz ({fz.digest}) differs from the checkpoint's "
            f"({ckpt.featurization_digest})"
        )
    names = ckpt.class_names
    blank_id = names.index("blank")
    for k, w in enumerate(fz.windows(clip)):
        p = predict(ckpt.model, fz(w), blank_id, tau, names)
        print(json.dumps({
            "window": k,
            "start_s": w.start_sample / clip.sample_rate_hz,
            "class": p.class_name,
            "probs": [round(float(v), 6) for v in p.probs],
            "contact": p.is_contact,
        }))
    return EXIT_OK


def cmd_stream(args, config) -> int:
    sect = "stream"
    n_mels = int(_pick(args.n_mels, config, sect, "n_mels", 32))
    emphasis = _pick(args.emphasis, config, sect, "emphasis", True)
    fcfg = streaming_config(n_mels)
    if not emphasis:
        fcfg = replace(fcfg, emphasis=EmphasisConfig(0.3, 2.0, enabled=False))

    source, wav_rate = open_source(args.input, wav=False if args.raw else None)
    rate = _pick(args.rate, config, sect, "rate", None)
    if wav_rate is not None:
        if rate is not None and int(rate) != wav_rate:
            raise UsageError(f"--rate {rate} contradicts the WAV header rate {wav_rate}")
        rate = wav_rate
    rate = int(rate if rate is not None else 48000)

    policy = _pick(args.drop_policy, config, sect, "drop_policy", "auto")
    if policy == "auto":
        # replaying a file should never lose frames; live pipes should never stall
        policy = "block" if args.input != "-" and Path(args.input).is_file() else "drop_oldest"
    scfg = StreamConfig(
        features=fcfg,
        sample_rate_hz=rate,
        checkpoint_path=args.checkpoint,
        queue_capacity=int(_pick(args.queue_capacity, config, sect, "queue_capacity", 64)),
        drop_policy=policy,
        tau=float(_pick(args.tau, config, sect, "tau", DEFAULT_TAU)),
        full_matrix=bool(_pick(args.full_matrix, config, sect, "full_matrix", False)),
    )
    _diag({
        "command": "stream",
        "rate": rate,
        "features": fcfg.to_dict(),
        "drop_policy": policy,
        "queue_capacity": scfg.queue_capacity,
        "checkpoint": args.checkpoint,
        "tau": scfg.tau,
    })
    out = open(args.output, "w") if args.output else sys.stdout
    try:
        stats = run_stream(source, scfg, JsonlSink(out, flush=args.output is None))
    finally:
        if args.output:
            out.close()
    _diag({"stats": stats.to_dict()})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # SUPPRESS so a subcommand's defaults never clobber flags given before it
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed")
    common.add_argument(
        "--config", default=argparse.SUPPRESS, help=f"TOML config file (default: ${CONFIG_ENV})"
    )
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    p = _Parser(prog="acoustic-contact", description=__doc__.splitlines()[0], parents=[common])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic labeled corpus")
    s.add_argument("out_dir")
    s.add_argument("--spec", default=None, help="corpus spec (TOML); built-in 10-class spec if omitted")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("featurize", parents=[common], help="dump corpus features as MELF records")
    s.add_argument("corpus")
    s.add_argument("out_file")
    s.add_argument("--n-mels", type=int, default=None)
    s.add_argument("--feature-mode", choices=["classify", "stream"], default=None)
    s.set_defaults(func=cmd_featurize)

    s = sub.add_parser("train", parents=[common], help="train the CNN classifier")
    s.add_argument("corpus")
    s.add_argument("out_checkpoint")
    s.add_argument("--epochs", type=int, default=None)
    s.add_argument("--lr", type=float, default=None)
    s.add_argument("--batch-size", type=int, default=None)
    s.add_argument("--n-mels", type=int, default=None)
    s.add_argument("--feature-mode", choices=["classify", "stream"], default=None)
    s.add_argument("--history", default=None, help="history JSON path (default: <checkpoint>.history.json)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="accuracy and confusion matrix")
    s.add_argument("checkpoint")
    s.add_argument("corpus")
    s.add_argument("--split", choices=["all", "train", "val"], default=None)
    s.add_argument("--report", default=None, help="also write the JSON report here")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("classify", parents=[common], help="predict each window of a WAV file")
    s.add_argument("checkpoint")
    s.add_argument("wav")
    s.add_argument("--tau", type=float, default=None)
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("stream", parents=[common], help="streaming featurizer, JSONL on stdout")
    s.add_argument("--checkpoint", default=None)
    s.add_argument("--input", default="-", help="WAV or raw PCM file; '-' for stdin (raw)")
    s.add_argument("--raw", action="store_true", help="treat input as raw int16 PCM even if named .wav")
    s.add_argument("--rate", type=int, default=None, help="sample rate of raw input (default 48000)")
    s.add_argument("--n-mels", type=int, default=None)
    s.add_argument("--no-emphasis", dest="emphasis", action="store_false", default=None)
    s.add_argument("--tau", type=float, default=None)
    s.add_argument("--queue-capacity", type=int, default=None)
    s.add_argument("--drop-policy", choices=["auto", "drop_oldest", "block"], default=None)
    s.add_argument("--full-matrix", action="store_true", default=None)
    s.add_argument("--output", default=None, help="write JSONL here instead of stdout")
    s.set_defaults(func=cmd_stream)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.seed = getattr(args, "seed", None)
    args.config = getattr(args, "config", None) or os.environ.get(CONFIG_ENV) or None
    args.verbose = getattr(args, "verbose", None)
    try:
        config = load_config(args.config)
        verbose = args.verbose if args.verbose is not None else config.get("global", {}).get("verbose", False)
        args.verbose = bool(verbose)
        logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING, stream=sys.stderr)
        return args.func(args, config)
    except (UsageError, AcousticContactError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
