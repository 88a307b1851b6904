"""Saving and restoring the three trained artifacts: base LM, codec, adapters."""

from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np

from ..codec import ActionCodec
from ..diffcore import make_rng
from ..recognizer import BaseLM, LMConfig, attach_lora
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import RunConfig

LM_KEYS = ("d_u", "lm_layers", "lm_heads", "lm_ff", "lm_max_len", "lm_pretrain_steps", "lm_pretrain_lr",
           "lm_batch_size", "lm_corpus_sentences", "synth_frames", "seed")


def _expect_kind(header: dict, kind: str, path) -> dict:
    meta = header.get("meta", {})
    if meta.get("kind") != kind:
        raise CheckpointError(f"{path}: expected a {kind} checkpoint, found {meta.get('kind')!r}")
    return meta


def _config_from_meta(meta: dict) -> RunConfig:
    known = {f.name for f in dataclasses.fields(RunConfig)}
    return RunConfig(**{k: v for k, v in meta["config"].items() if k in known})


# -- language model ----------------------------------------------------------

def save_lm(path, model: BaseLM, cfg: RunConfig, report: dict | None = None) -> None:
    meta = {"kind": "lm", "vocab": model.vocab, "lm_config": dataclasses.asdict(model.cfg),
            "report": report or {}}
    save_checkpoint(path, model.state_dict(), meta, cfg.config_hash(LM_KEYS))


def load_lm(path, cfg: RunConfig | None = None) -> tuple[BaseLM, dict[str, np.ndarray]]:
    """Return the model and its tensors (the reference for the frozen-base check)."""
    tensors, header = load_checkpoint(path, cfg.config_hash(LM_KEYS) if cfg else None)
    meta = _expect_kind(header, "lm", path)
    model = BaseLM(meta["vocab"], LMConfig(**meta["lm_config"]), make_rng(0, "lm-shell"))
    model.load_state_dict(tensors)
    return model, tensors


# -- codec -------------------------------------------------------------------

def load_codec(path, cfg: RunConfig | None = None) -> tuple[ActionCodec, RunConfig]:
    """Rebuild a codec from its checkpoint; returns it with the config it was trained under."""
    tensors, header = load_checkpoint(path, cfg.config_hash() if cfg else None)
    meta = _expect_kind(header, "codec", path)
    trained = _config_from_meta(meta)
    codec = ActionCodec(trained.codec_config(), make_rng(0, "codec-shell"))
    codec.load_state_dict(tensors)
    return codec, trained


# -- adapters ----------------------------------------------------------------

def save_adapter(path, model: BaseLM, cfg: RunConfig, class_names: list[str], metrics: dict | None = None) -> None:
    """Store adapter tensors only, or every tensor for an all-tuning run."""
    state = model.state_dict()
    if not cfg.all_tuning:
        state = {k: v for k, v in state.items() if "lora_" in k}
    meta = {"kind": "adapter", "config": cfg.to_dict(), "class_names": list(class_names),
            "metrics": metrics or {}}
    save_checkpoint(path, state, meta, cfg.config_hash())


def load_adapter(path, base: BaseLM, cfg: RunConfig | None = None) -> tuple[BaseLM, dict]:
    tensors, header = load_checkpoint(path, cfg.config_hash() if cfg else None)
    meta = _expect_kind(header, "adapter", path)
    trained = _config_from_meta(meta)
    model = attach_lora(base, trained.lora_rank, trained.lora_alpha, make_rng(0, "lora-shell"),
                        all_tuning=trained.all_tuning)
    model.load_state_dict(tensors, strict=trained.all_tuning)
    return model, meta


def exists(path) -> bool:
    return path is not None and Path(path).is_file()
