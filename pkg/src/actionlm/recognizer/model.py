"""Small causal transformer standing in for the frozen large language model, plus LoRA."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from ..diffcore import (AdamW, ContractViolation, Embedding, LayerNorm, Linear, Module, Parameter, Tensor,
                        backward, make_rng, no_grad)
from ..diffcore import functional as F
from .corpus import EOS, PAD, build_vocabulary, tokenize_words

_MASK_VALUE = -1e9


class ConfigurationError(ValueError):
    """Model or data configuration cannot satisfy a stage's requirements."""


@dataclass
class LMConfig:
    d_model: int = 64
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 256
    max_len: int = 64


class LoRALinear(Module):
    """``x @ W0 + b0 + (alpha/r) * x @ A @ B`` with ``B`` zero-initialized."""

    def __init__(self, base: Linear, r: int, alpha: float, rng: np.random.Generator):
        d_in, d_out = base.weight.shape
        if not 1 <= r <= min(d_in, d_out):
            raise ContractViolation(f"LoRA rank {r} outside [1, {min(d_in, d_out)}] for a {d_in}x{d_out} weight")
        self.base = base
        self.lora_a = Parameter(rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(d_in, r)))
        self.lora_b = Parameter(np.zeros((r, d_out)))
        self.r = r
        self.alpha = alpha

    @property
    def scale(self) -> float:
        return self.alpha / self.r

    def __call__(self, x: Tensor) -> Tensor:
        return self.base(x) + (x @ self.lora_a) @ self.lora_b * self.scale


class Attention(Module):
    def __init__(self, cfg: LMConfig, rng: np.random.Generator):
        d = cfg.d_model
        self.n_heads = cfg.n_heads
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.o = Linear(d, d, rng, scale=1.0 / np.sqrt(d * 2 * cfg.n_layers))

    def _heads(self, t: Tensor, bsz: int, seq: int) -> Tensor:
        dh = t.shape[-1] // self.n_heads
        return F.transpose(F.reshape(t, (bsz, seq, self.n_heads, dh)), (0, 2, 1, 3))

    def __call__(self, x: Tensor) -> Tensor:
        bsz, seq, d = x.shape
        dh = d // self.n_heads
        q = self._heads(self.q(x), bsz, seq)
        k = self._heads(self.k(x), bsz, seq)
        v = self._heads(self.v(x), bsz, seq)
        mask = np.triu(np.full((seq, seq), _MASK_VALUE), k=1)
        scores = (q @ F.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(dh)) + mask
        out = F.softmax(scores, axis=-1) @ v
        out = F.reshape(F.transpose(out, (0, 2, 1, 3)), (bsz, seq, d))
        return self.o(out)


class Block(Module):
    def __init__(self, cfg: LMConfig, rng: np.random.Generator):
        self.ln1 = LayerNorm(cfg.d_model)
        self.attn = Attention(cfg, rng)
        self.ln2 = LayerNorm(cfg.d_model)
        self.ff_in = Linear(cfg.d_model, cfg.d_ff, rng)
        self.ff_out = Linear(cfg.d_ff, cfg.d_model, rng, scale=1.0 / np.sqrt(cfg.d_ff * 2 * cfg.n_layers))

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.ff_out(F.relu(self.ff_in(self.ln2(x))))


class BaseLM(Module):
    """Decoder-only language model over a word vocabulary.

    ``token_embedding.weight`` plays the role of the word-token table that the
    codebook is aligned to and that action tokens are injected alongside.
    """

    def __init__(self, vocab: list[str], cfg: LMConfig, rng: np.random.Generator):
        self.vocab = list(vocab)
        self.index = {w: i for i, w in enumerate(self.vocab)}
        self.cfg = cfg
        self.token_embedding = Embedding(len(vocab), cfg.d_model, rng, std=0.3)
        self.position_embedding = Embedding(cfg.max_len, cfg.d_model, rng, std=0.02)
        self.blocks = [Block(cfg, rng) for _ in range(cfg.n_layers)]
        self.ln_f = LayerNorm(cfg.d_model)
        self.head = Linear(cfg.d_model, len(vocab), rng, bias=False, scale=0.02)

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    @property
    def d_model(self) -> int:
        return self.cfg.d_model

    def ids(self, words: list[str]) -> list[int]:
        missing = [w for w in words if w not in self.index]
        if missing:
            raise ConfigurationError(f"words missing from the vocabulary: {sorted(set(missing))}")
        return [self.index[w] for w in words]

    def embed(self, ids) -> Tensor:
        return self.token_embedding(np.asarray(ids, dtype=np.int64))

    def forward_embeddings(self, x: Tensor) -> Tensor:
        """Logits ``(B, T, vocab)`` for a batch of input embedding sequences ``(B, T, d)``."""
        seq = x.shape[1]
        if seq > self.cfg.max_len:
            raise ContractViolation(f"sequence length {seq} exceeds the model maximum {self.cfg.max_len}")
        h = x + self.position_embedding(np.arange(seq))
        for block in self.blocks:
            h = block(h)
        return self.head(self.ln_f(h))

    def __call__(self, ids) -> Tensor:
        return self.forward_embeddings(self.embed(ids))

    def base_state(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.state_dict().items() if "lora_" not in k}


def token_cross_entropy(logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of ``targets`` over positions where ``mask`` is 1."""
    targets = np.asarray(targets, dtype=np.int64)
    vocab = logits.shape[-1]
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        raise ConfigurationError(f"target ids outside the vocabulary of size {vocab}")
    mask = np.asarray(mask, dtype=np.float64)
    count = mask.sum()
    if count == 0:
        raise ContractViolation("cross-entropy over an empty mask")
    picked = F.sum(F.log_softmax(logits, axis=-1) * F.one_hot(targets, vocab), axis=-1)
    return -F.sum(picked * mask) / count


def _pack(sequences: list[list[int]], pad: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    longest = max(len(s) for s in sequences)
    inputs = np.full((len(sequences), longest - 1), pad, dtype=np.int64)
    targets = np.full_like(inputs, pad)
    mask = np.zeros(inputs.shape)
    for i, s in enumerate(sequences):
        inputs[i, : len(s) - 1] = s[:-1]
        targets[i, : len(s) - 1] = s[1:]
        mask[i, : len(s) - 1] = 1.0
    return inputs, targets, mask


@dataclass
class PretrainReport:
    train_losses: list[float] = field(default_factory=list)
    heldout_loss: float = float("nan")
    uniform_baseline: float = float("nan")
    unigram_baseline: float = float("nan")


def pretrain_base(corpus: list[list[str]], cfg: LMConfig, rng: np.random.Generator, *,
                  class_names: list[str] | None = None, steps: int = 600, batch_size: int = 32,
                  lr: float = 3e-3, heldout_share: float = 0.1) -> tuple[BaseLM, PretrainReport]:
    """Next-token pre-training; returns the (still trainable) model and a loss report."""
    vocab = build_vocabulary(corpus)
    if class_names:
        known = set(vocab)
        missing = [n for n in class_names if any(w not in known for w in tokenize_words(n))]
        if missing:
            raise ConfigurationError(f"action names absent from the pre-training vocabulary: {missing}")
    model = BaseLM(vocab, cfg, rng)
    encoded = [model.ids(s) for s in corpus]
    order = rng.permutation(len(encoded))
    n_held = max(1, int(len(encoded) * heldout_share))
    held = [encoded[i] for i in order[:n_held]]
    train = [encoded[i] for i in order[n_held:]]

    report = PretrainReport(uniform_baseline=float(np.log(len(vocab))))
    counts = np.bincount(np.concatenate([s[1:] for s in train]), minlength=len(vocab)) + 1.0
    probs = counts / counts.sum()
    held_targets = np.concatenate([s[1:] for s in held])
    report.unigram_baseline = float(-np.log(probs[held_targets]).mean())

    opt = AdamW(model.parameters(), lr=lr, weight_decay=0.0)
    pad = model.index[PAD]
    for _ in range(steps):
        batch = [train[i] for i in rng.integers(len(train), size=batch_size)]
        inputs, targets, mask = _pack(batch, pad)
        loss = token_cross_entropy(model(inputs), targets, mask)
        opt.zero_grad()
        backward(loss)
        opt.step()
        report.train_losses.append(loss.item())

    with no_grad():
        total, count = 0.0, 0.0
        for start in range(0, len(held), 64):
            inputs, targets, mask = _pack(held[start : start + 64], pad)
            total += token_cross_entropy(model(inputs), targets, mask).item() * mask.sum()
            count += mask.sum()
    report.heldout_loss = total / count
    return model, report


def attach_lora(base: BaseLM, r: int, alpha: float, rng: np.random.Generator, all_tuning: bool = False) -> BaseLM:
    """Copy of ``base`` with LoRA on every query and value projection.

    Base weights are frozen unless ``all_tuning`` is set, in which case every
    parameter (adapters included) trains.
    """
    model = copy.deepcopy(base)
    model.freeze()
    for block in model.blocks:
        block.attn.q = LoRALinear(block.attn.q, r, alpha, rng)
        block.attn.v = LoRALinear(block.attn.v, r, alpha, rng)
    if all_tuning:
        model.unfreeze()
    return model


def adapter_parameters(model: BaseLM) -> list[tuple[str, Tensor]]:
    return [(n, p) for n, p in model.named_parameters() if "lora_" in n]


def verify_base_frozen(model: BaseLM, checkpoint: dict[str, np.ndarray]) -> bool:
    """True iff every non-adapter tensor is bit-identical to ``checkpoint``.

    Adapter wrapping renames ``attn.q.weight`` to ``attn.q.base.weight``; both
    spellings are accepted.
    """
    state = model.base_state()
    normalized = {k.replace(".base.", "."): v for k, v in state.items()}
    if set(normalized) != set(checkpoint):
        return False
    for name, arr in normalized.items():
        ref = np.asarray(checkpoint[name], dtype=np.float64)
        if arr.shape != ref.shape or arr.tobytes() != ref.tobytes():
            return False
    return True
