"""Command-line entry point.

Subcommands: ``synth``, ``train-codec``, ``train-lora``, ``eval``, ``tokenize``
and ``stats``. Every :class:`RunConfig` field is a flag (``--codec-iterations``,
``--use-zipf/--no-use-zipf``, ...) that overrides the optional ``--config``
file. Metrics are line-delimited JSON on stdout or ``--metrics``. Failures
exit nonzero with a one-line JSON error record on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .pipeline import artifacts
from .pipeline.config import RunConfig, field_types, load_config
from .pipeline.evaluate import evaluate_split, evaluate_unseen, usage_stats
from .pipeline.train import (action_vectors, codec_reconstruction_loss, load_dataset, pretrain_language_model,
                             synth_spec, train_codec, train_lora)
from .skeldata import normalize_dataset, save_skeletons, split, synth_generate

log = logging.getLogger("actionlm")


class Emitter:
    """Writes JSON records, one per line."""

    def __init__(self, path: str | None):
        self._fh = open(path, "a", encoding="utf-8") if path else sys.stdout

    def __call__(self, record: dict) -> None:
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self) -> None:
        if self._fh is not sys.stdout:
            self._fh.close()


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("run configuration (overrides --config)")
    group.add_argument("--config", help="key = value configuration file")
    for name, kind in field_types().items():
        flag = "--" + name.replace("_", "-")
        if kind == "bool":
            group.add_argument(flag, dest=name, action=argparse.BooleanOptionalAction, default=None)
        else:
            cast = {"int": int, "float": float}.get(kind, str)
            group.add_argument(flag, dest=name, type=cast, default=None, metavar=kind.upper())


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {f.name: getattr(args, f.name) for f in dataclasses.fields(RunConfig)
                 if getattr(args, f.name, None) is not None}
    return cfg.replace(**overrides)


def _language_model(cfg: RunConfig, path, class_names, emit):
    """Load the base LM checkpoint, pre-training and saving it first if it is missing."""
    if artifacts.exists(path):
        return artifacts.load_lm(path, cfg)
    model, report = pretrain_language_model(cfg, class_names)
    summary = {"heldout_loss": report.heldout_loss, "uniform_baseline": report.uniform_baseline,
               "unigram_baseline": report.unigram_baseline}
    emit({"stage": "lm-pretrain", **summary})
    if path:
        artifacts.save_lm(path, model, cfg, summary)
    return model, model.state_dict()


# -- subcommands -------------------------------------------------------------

def cmd_synth(args, cfg, emit):
    ds = synth_generate(synth_spec(cfg))
    if not args.raw:
        ds = normalize_dataset(ds)
    save_skeletons(ds, args.out)
    emit({"command": "synth", "samples": len(ds), "classes": ds.class_names, "out": args.out})


def cmd_train_codec(args, cfg, emit):
    ds = load_dataset(cfg)
    sp = split(ds, cfg.protocol, cfg.seed)
    lm, _ = _language_model(cfg, args.lm, ds.class_names, emit)
    run = train_codec(cfg, sp.train, lm.token_embedding.weight.data, checkpoint_path=args.out, on_log=emit)
    emit({"stage": "codec", "summary": run.metrics.summary, "out": args.out,
          "test_L_re": codec_reconstruction_loss(run.codec, sp.test.signals()) if len(sp.test) else None})


def cmd_train_lora(args, cfg, emit):
    codec, _ = artifacts.load_codec(args.codec)
    ds = load_dataset(cfg)
    sp = split(ds, cfg.protocol, cfg.seed)
    base, base_state = _language_model(cfg, args.lm, ds.class_names, emit)
    names = [ds.class_names[k] for k in sp.train.labels]
    vectors = action_vectors(codec, sp.train.signals(), cfg.discretize)
    choices = sorted(set(names)) if cfg.protocol == "unseen-class" else None
    run = train_lora(cfg, base, base_state, vectors, names, list_choices=choices, on_log=emit)
    artifacts.save_adapter(args.out, run.model, cfg, ds.class_names, run.metrics.summary)
    emit({"stage": "lora", "summary": run.metrics.summary, "out": args.out})


def cmd_eval(args, cfg, emit):
    codec, _ = artifacts.load_codec(args.codec)
    ds = load_dataset(cfg)
    base, base_state = artifacts.load_lm(args.lm, cfg)
    if cfg.protocol == "unseen-class":
        result = evaluate_unseen(cfg, codec, base, base_state, ds, on_log=emit)
        emit({"command": "eval", "protocol": cfg.protocol, **result.as_dict()})
        return
    if not args.adapter:
        raise ValueError("eval needs --adapter for closed-set protocols")
    model, _ = artifacts.load_adapter(args.adapter, base, cfg)
    sp = split(ds, cfg.protocol, cfg.seed)
    acc = evaluate_split(cfg, codec, model, sp.test)
    emit({"command": "eval", "protocol": cfg.protocol, **acc.as_dict()})


def cmd_tokenize(args, cfg, emit):
    codec, _ = artifacts.load_codec(args.codec)
    ds = load_dataset(cfg)
    sentences = []
    signals = ds.signals()
    for start in range(0, len(signals), 64):
        sentences.extend(codec.tokenize(signals[start : start + 64]))
    for sample, sentence in zip(ds.samples, sentences):
        emit({"label": ds.class_names[sample.label], "subject": sample.subject,
              "tokens": [int(i) for i in sentence.indices]})


def cmd_stats(args, cfg, emit):
    codec, trained = artifacts.load_codec(args.codec)
    ds = load_dataset(cfg)
    stats = usage_stats(codec, ds.signals(), trained.zipf_alpha, trained.zipf_beta)
    if args.csv:
        Path(args.csv).write_text(stats.to_csv(), encoding="utf-8")
    emit({"command": "stats", "js_to_zipf": stats.js_to_zipf, "tokens_used": int((stats.counts > 0).sum()),
          "csv": args.csv})


COMMANDS = {
    "synth": cmd_synth,
    "train-codec": cmd_train_codec,
    "train-lora": cmd_train_lora,
    "eval": cmd_eval,
    "tokenize": cmd_tokenize,
    "stats": cmd_stats,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="actionlm", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--metrics", help="append JSON records here instead of stdout")
        p.add_argument("-v", "--verbose", action="store_true")
        _add_config_flags(p)
        return p

    p = add("synth", "write the synthetic skeleton dataset as JSONL")
    p.add_argument("--out", required=True)
    p.add_argument("--raw", action="store_true", help="skip normalization")

    p = add("train-codec", "stage 1: train the action codec")
    p.add_argument("--out", required=True, help="codec checkpoint to write")
    p.add_argument("--lm", help="base LM checkpoint (pre-trained and saved here if missing)")

    p = add("train-lora", "stage 2: adapt the frozen base LM")
    p.add_argument("--codec", required=True)
    p.add_argument("--lm", help="base LM checkpoint (pre-trained and saved here if missing)")
    p.add_argument("--out", required=True, help="adapter checkpoint to write")

    p = add("eval", "top-1 recognition accuracy on the protocol's test split")
    p.add_argument("--codec", required=True)
    p.add_argument("--lm", required=True)
    p.add_argument("--adapter")

    p = add("tokenize", "emit each sample's action sentence as token indices")
    p.add_argument("--codec", required=True)

    p = add("stats", "token rank-frequency table and JS distance to Zipf")
    p.add_argument("--codec", required=True)
    p.add_argument("--csv", help="write the rank-frequency CSV here")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    emit = None
    try:
        cfg = _config(args)
        emit = Emitter(args.metrics)
        COMMANDS[args.command](args, cfg, emit)
    except Exception as exc:  # noqa: BLE001 - every failure becomes an error record
        record = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        sys.stderr.write(json.dumps(record) + "\n")
        log.debug("traceback", exc_info=True)
        return 1
    finally:
        if emit is not None:
            emit.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
