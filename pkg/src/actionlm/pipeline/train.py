"""Two-stage training: the action codec, then adapters on the frozen language model."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .. import biasreg
from ..codec import DOWNSAMPLE, ActionCodec, vq_losses
from ..diffcore import AdamW, Tensor, backward, make_rng, no_grad
from ..poincare import riemannian_grad_scale
from ..recognizer import (BaseLM, attach_lora, build_corpus, build_instruction, lora_loss, pretrain_base,
                          teacher_batch, verify_base_frozen)
from ..recognizer.corpus import ACTION_NAMES
from ..skeldata import SkeletonDataset, SynthSpec, load_skeletons, normalize_dataset, split, synth_generate
from .checkpoint import save_checkpoint
from .config import RunConfig

log = logging.getLogger(__name__)

LOSS_KEYS = ("L_re", "L_embed", "L_commit", "L_Zipf", "L_context", "MMD", "L_human", "L_total")


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, last_good: dict[str, np.ndarray] | None):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step
        self.last_good = last_good


class FrozenWeightViolation(RuntimeError):
    pass


@dataclass
class MetricsRecord:
    steps: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def log(self, entry: dict) -> None:
        self.steps.append(entry)

    def series(self, key: str) -> np.ndarray:
        return np.array([s[key] for s in self.steps if key in s])


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

def synth_spec(cfg: RunConfig) -> SynthSpec:
    return SynthSpec.make(classes=cfg.synth_classes, joints=cfg.synth_joints, frames=cfg.synth_frames,
                          noise_scale=cfg.synth_noise, samples_per_class=cfg.synth_samples_per_class, seed=cfg.seed)


def load_dataset(cfg: RunConfig) -> SkeletonDataset:
    """The configured dataset (``"synth"`` or a JSONL path), normalized."""
    if cfg.data_source == "synth":
        ds = synth_generate(synth_spec(cfg))
    else:
        ds = load_skeletons(cfg.data_source)
    return normalize_dataset(ds)


# ---------------------------------------------------------------------------
# stand-in language model
# ---------------------------------------------------------------------------

def pretrain_language_model(cfg: RunConfig, class_names: list[str] | None = None):
    """Pre-train the stand-in LM on the toy corpus; returns ``(model, report)``."""
    rng = make_rng(cfg.seed, "lm-pretrain")
    names = list(ACTION_NAMES)
    for extra in class_names or []:
        if extra not in names:
            names.append(extra)
    corpus = build_corpus(rng, names=names, sentences=cfg.lm_corpus_sentences, slot_length=cfg.synth_frames // DOWNSAMPLE)
    return pretrain_base(corpus, cfg.lm_config(), rng, class_names=class_names, steps=cfg.lm_pretrain_steps,
                         batch_size=cfg.lm_batch_size, lr=cfg.lm_pretrain_lr)


# ---------------------------------------------------------------------------
# stage 1
# ---------------------------------------------------------------------------

@dataclass
class CodecRun:
    codec: ActionCodec
    metrics: MetricsRecord


def _codec_step_losses(codec: ActionCodec, cfg: RunConfig, signals: np.ndarray, lm_sample: np.ndarray,
                       target: biasreg.ZipfTarget, gumbel_rng: np.random.Generator):
    f = codec.encode(signals)
    q = codec.quantize(f)
    rec = codec.decode(codec.straight_through(f, q.discrete), signals.shape[1])
    vq = vq_losses(signals, rec, f, q.discrete)
    if cfg.hyperbolic_usage_distance == codec.codebook.hyperbolic:
        usage = biasreg.usage_from_distances(q.distances, signals.shape[0], cfg.tau, gumbel_rng,
                                             logit_scale=cfg.usage_logit_scale)
    else:
        usage = biasreg.soft_usage(f, codec.codebook, cfg.tau, gumbel_rng,
                                   hyperbolic_distance=cfg.hyperbolic_usage_distance, logit_scale=cfg.usage_logit_scale)
    human = biasreg.human_loss(usage, codec.codebook.euclidean_tokens(), lm_sample, target,
                               use_zipf=cfg.use_zipf, use_context=cfg.use_context, use_mmd=cfg.use_mmd)
    total = vq.reconstruction + vq.embed + cfg.omega1 * vq.commit
    if cfg.omega2 > 0:
        total = total + cfg.omega2 * human.total
    values = {
        "L_re": vq.reconstruction.item(), "L_embed": vq.embed.item(), "L_commit": vq.commit.item(),
        "L_Zipf": human.zipf.item(), "L_context": human.context.item(), "MMD": human.mmd.item(),
        "L_human": human.total.item(), "L_total": total.item(),
    }
    return total, values


def train_codec(cfg: RunConfig, train_set: SkeletonDataset, lm_embeddings: np.ndarray, *,
                iterations: int | None = None, checkpoint_path: str | Path | None = None,
                on_log: Callable[[dict], None] | None = None) -> CodecRun:
    """Optimize encoder, decoder and codebook with the composite stage-1 loss.

    ``lm_embeddings`` is the frozen word-embedding table of the language model
    (alignment target for the codebook).
    """
    iterations = cfg.codec_iterations if iterations is None else iterations
    rng = make_rng(cfg.seed, "codec-init")
    batch_rng = make_rng(cfg.seed, "codec-batches")
    gumbel_rng = make_rng(cfg.seed, "gumbel")
    mmd_rng = make_rng(cfg.seed, "mmd-sample")
    codec = ActionCodec(cfg.codec_config(), rng)
    target = biasreg.zipf_target(cfg.codebook_size, cfg.zipf_alpha, cfg.zipf_beta)
    signals_all = train_set.signals()
    n_lm = min(cfg.codebook_size, len(lm_embeddings))

    transforms = {}
    if cfg.riemannian_codebook and cfg.hyperbolic:
        ball = codec.codebook.cfg
        transforms[id(codec.codebook.tokens)] = lambda x, g: riemannian_grad_scale(x, g, ball)
    opt = AdamW(codec.parameters(), lr=cfg.codec_lr, weight_decay=cfg.codec_weight_decay, grad_transform=transforms)

    metrics = MetricsRecord()
    last_good = codec.state_dict()
    bsz = min(cfg.batch_size, len(signals_all))
    for step in range(iterations):
        batch = signals_all[batch_rng.choice(len(signals_all), size=bsz, replace=False)]
        lm_sample = lm_embeddings[mmd_rng.choice(len(lm_embeddings), size=n_lm, replace=False)]
        total, values = _codec_step_losses(codec, cfg, batch, lm_sample, target, gumbel_rng)
        if not all(math.isfinite(v) for v in values.values()):
            if checkpoint_path is not None:
                save_codec(checkpoint_path, codec, cfg, state=last_good)
            raise TrainingDiverged(step, last_good)
        opt.zero_grad()
        backward(total)
        opt.step()
        codec.codebook.retract()
        last_good = None
        if step % cfg.log_every == 0 or step == iterations - 1:
            entry = {"stage": "codec", "step": step, **values}
            metrics.log(entry)
            if on_log:
                on_log(entry)
            last_good = codec.state_dict()
    if last_good is None:
        last_good = codec.state_dict()
    metrics.summary["L_re_first"] = metrics.steps[0]["L_re"] if metrics.steps else float("nan")
    metrics.summary["L_re_last"] = metrics.steps[-1]["L_re"] if metrics.steps else float("nan")
    if checkpoint_path is not None:
        save_codec(checkpoint_path, codec, cfg)
    return CodecRun(codec, metrics)


def codec_reconstruction_loss(codec: ActionCodec, signals: np.ndarray, batch: int = 64) -> float:
    """Mean smooth-L1 reconstruction error over a set of signals (no gradient)."""
    from ..diffcore import functional as F

    total = 0.0
    with no_grad():
        for start in range(0, len(signals), batch):
            chunk = signals[start : start + batch]
            rec = codec.reconstruct(chunk)
            total += F.smooth_l1(Tensor(chunk), Tensor(rec)).item() * len(chunk)
    return total / max(len(signals), 1)


def save_codec(path, codec: ActionCodec, cfg: RunConfig, state: dict | None = None) -> None:
    meta = {"kind": "codec", "config": cfg.to_dict(), "pairing": codec.codebook.pairing}
    save_checkpoint(path, state if state is not None else codec.state_dict(), meta, cfg.config_hash())


# ---------------------------------------------------------------------------
# stage 2
# ---------------------------------------------------------------------------

@dataclass
class LoraRun:
    model: BaseLM
    metrics: MetricsRecord
    adapter_count: int
    base_count: int


def action_vectors(codec: ActionCodec, signals: np.ndarray, discretize: bool = True, batch: int = 64) -> np.ndarray:
    """Vectors injected into the instruction: discrete latents, or raw latents when not discretizing."""
    out = []
    for start in range(0, len(signals), batch):
        chunk = signals[start : start + batch]
        if discretize:
            out.extend(s.discrete_latents for s in codec.tokenize(chunk))
        else:
            out.extend(codec.continuous_latents(chunk))
    return np.stack(out) if out else np.zeros((0, 0, 0))


def train_lora(cfg: RunConfig, base: BaseLM, base_state: dict[str, np.ndarray], vectors: np.ndarray,
               names: list[str], *, iterations: int | None = None, list_choices: list[str] | None = None,
               on_log: Callable[[dict], None] | None = None) -> LoraRun:
    """Adapt the frozen LM to map injected action sentences to action names.

    When ``list_choices`` is given every instruction carries a class list: the
    true name plus up to two distractors drawn from ``list_choices``, matching
    the unseen-class instruction format.
    """
    iterations = cfg.lora_iterations if iterations is None else iterations
    rng = make_rng(cfg.seed, "lora-init")
    batch_rng = make_rng(cfg.seed, "lora-batches")
    model = attach_lora(base, cfg.lora_rank, cfg.lora_alpha, rng, all_tuning=cfg.all_tuning)
    trainable = model.trainable_parameters()
    adapter_count = sum(p.size for n, p in model.named_parameters() if "lora_" in n)
    base_count = sum(p.size for n, p in model.named_parameters() if "lora_" not in n)
    opt = AdamW(trainable, lr=cfg.lora_lr, weight_decay=0.0)
    metrics = MetricsRecord()
    bsz = min(cfg.lora_batch_size, len(vectors))
    for step in range(iterations):
        idx = batch_rng.choice(len(vectors), size=bsz, replace=False)
        instructions = []
        for i in idx:
            listed = None
            if list_choices is not None:
                others = [n for n in list_choices if n != names[i]]
                picks = batch_rng.choice(len(others), size=min(2, len(others)), replace=False)
                listed = [names[i]] + [others[j] for j in picks]
                listed = [listed[j] for j in batch_rng.permutation(len(listed))]
            instructions.append(build_instruction(vectors[i], model, listed))
        tb = teacher_batch(model, instructions, [names[i] for i in idx])
        loss = lora_loss(model.forward_embeddings(tb.embeddings), tb.targets, tb.mask)
        if not math.isfinite(loss.item()):
            raise TrainingDiverged(step, None)
        opt.zero_grad()
        backward(loss)
        opt.step()
        if step % cfg.log_every == 0 or step == iterations - 1:
            entry = {"stage": "lora", "step": step, "L_LoRA": loss.item()}
            metrics.log(entry)
            if on_log:
                on_log(entry)
    frozen = verify_base_frozen(model, base_state)
    metrics.summary.update({"base_frozen": frozen, "adapter_parameters": adapter_count,
                            "base_parameters": base_count})
    if not cfg.all_tuning and not frozen:
        raise FrozenWeightViolation("frozen base weights changed during adaptation")
    return LoraRun(model, metrics, adapter_count, base_count)
