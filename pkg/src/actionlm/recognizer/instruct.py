"""Instruction assembly with injected action tokens, the adaptation loss and greedy decoding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..diffcore import ContractViolation, Tensor, no_grad
from ..diffcore import functional as F
from .corpus import EOS, INSTRUCTION_TEMPLATE, LIST_TEMPLATE, PAD, format_class_list, template_pieces, tokenize_words
from .model import BaseLM, token_cross_entropy


@dataclass
class Instruction:
    """Word ids around a slot of ``W`` injected vectors.

    ``suffix_ids`` already contains the expanded class list when one is given.
    """

    prefix_ids: list[int]
    action_vectors: np.ndarray
    suffix_ids: list[int]
    class_list: list[str] | None = None

    @property
    def length(self) -> int:
        return len(self.prefix_ids) + len(self.action_vectors) + len(self.suffix_ids)

    def embeddings(self, lm: BaseLM) -> Tensor:
        return F.concat([lm.embed(self.prefix_ids), Tensor(self.action_vectors), lm.embed(self.suffix_ids)], axis=0)


def build_instruction(action_vectors: np.ndarray, lm: BaseLM, class_list: list[str] | None = None,
                      template: str | None = None) -> Instruction:
    vectors = np.asarray(action_vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[1] != lm.d_model:
        raise ContractViolation(
            f"action token width {vectors.shape[-1] if vectors.ndim else None} != LM embedding width {lm.d_model}"
        )
    if template is None:
        template = LIST_TEMPLATE if class_list else INSTRUCTION_TEMPLATE
    head, mid, tail = template_pieces(template)
    suffix = list(mid)
    if tail is not None:
        suffix += format_class_list(class_list or []) + tail
    return Instruction(lm.ids(head), vectors, lm.ids(suffix), list(class_list) if class_list else None)


def answer_ids(lm: BaseLM, name: str) -> list[int]:
    return lm.ids(tokenize_words(name) + [EOS])


@dataclass
class TeacherBatch:
    embeddings: Tensor
    targets: np.ndarray
    mask: np.ndarray


def teacher_batch(lm: BaseLM, instructions: list[Instruction], answers: list[str]) -> TeacherBatch:
    """Inputs ``instruction + answer[:-1]``; loss only on the answer tokens.

    Every instruction in the batch must share the prefix and slot width; the
    suffix and answer may differ in length (right padding, causal model).
    """
    pad = lm.index[PAD]
    p = len(instructions[0].prefix_ids)
    w = len(instructions[0].action_vectors)
    rows = []
    for ins, ans in zip(instructions, answers):
        if len(ins.prefix_ids) != p or len(ins.action_vectors) != w:
            raise ContractViolation("teacher_batch: instructions differ in prefix or slot width")
        rows.append(ins.suffix_ids + answer_ids(lm, ans))
    tail_len = max(len(r) for r in rows)
    total = p + w + tail_len - 1
    tail_in = np.full((len(rows), tail_len - 1), pad, dtype=np.int64)
    targets = np.full((len(rows), total), pad, dtype=np.int64)
    mask = np.zeros((len(rows), total))
    for i, (ins, r) in enumerate(zip(instructions, rows)):
        tail_in[i, : len(r) - 1] = r[:-1]
        n_ans = len(r) - len(ins.suffix_ids)
        start = p + w + len(ins.suffix_ids) - 1  # position whose next token is the first answer token
        targets[i, start : start + n_ans] = r[len(ins.suffix_ids):]
        mask[i, start : start + n_ans] = 1.0
    prefix = lm.embed(np.tile(np.asarray(instructions[0].prefix_ids), (len(rows), 1)))
    slot = Tensor(np.stack([ins.action_vectors for ins in instructions]))
    emb = F.concat([prefix, slot, lm.embed(tail_in)], axis=1)
    return TeacherBatch(emb, targets, mask)


def lora_loss(logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Cross-entropy between predicted and ground-truth name tokens (instruction positions masked)."""
    return token_cross_entropy(logits, targets, mask)


def _decode_group(lm: BaseLM, instructions: list[Instruction], max_tokens: int) -> list[list[int]]:
    base = F.concat([ins.embeddings(lm)[None] for ins in instructions], axis=0).data
    eos = lm.index[EOS]
    generated = np.zeros((len(instructions), 0), dtype=np.int64)
    done = np.zeros(len(instructions), dtype=bool)
    for _ in range(max_tokens):
        x = np.concatenate([base, lm.embed(generated).data], axis=1) if generated.shape[1] else base
        logits = lm.forward_embeddings(Tensor(x)).data[:, -1, :]
        nxt = np.argmax(logits, axis=-1)
        generated = np.concatenate([generated, nxt[:, None]], axis=1)
        done |= nxt == eos
        if done.all():
            break
    out = []
    for row in generated:
        ids = list(row)
        out.append(ids[: ids.index(eos)] if eos in ids else ids)
    return out


def predict(lm: BaseLM, instructions: list[Instruction], max_tokens: int = 6) -> list[str]:
    """Greedy decoding until ``<eos>``; returns the decoded word strings."""
    results: list[str | None] = [None] * len(instructions)
    groups: dict[tuple, list[int]] = {}
    for i, ins in enumerate(instructions):
        groups.setdefault((tuple(ins.prefix_ids), len(ins.action_vectors), tuple(ins.suffix_ids)), []).append(i)
    with no_grad():
        for members in groups.values():
            decoded = _decode_group(lm, [instructions[i] for i in members], max_tokens)
            for i, ids in zip(members, decoded):
                results[i] = " ".join(lm.vocab[t] for t in ids)
    return results  # type: ignore[return-value]
