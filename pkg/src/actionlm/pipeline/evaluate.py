"""Recognition accuracy and token-usage diagnostics."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .. import biasreg
from ..codec import ActionCodec
from ..diffcore import Tensor, make_rng, no_grad
from ..recognizer import BaseLM, build_instruction, predict
from ..skeldata import SkeletonDataset, split
from .config import RunConfig
from .train import action_vectors, train_lora


@dataclass
class Accuracy:
    accuracy: float
    correct: int
    total: int
    invalid_decodes: int
    predictions: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"accuracy": self.accuracy, "correct": self.correct, "total": self.total,
                "invalid_decodes": self.invalid_decodes}


def score_predictions(predictions: list[str], truths: list[str], valid: list[str]) -> Accuracy:
    """Exact-match top-1; predictions outside ``valid`` count as wrong and as invalid decodes."""
    valid_set = set(valid)
    correct = sum(p == t for p, t in zip(predictions, truths))
    invalid = sum(p not in valid_set for p in predictions)
    total = len(truths)
    return Accuracy(correct / total if total else float("nan"), correct, total, invalid, list(predictions))


def recognize(model: BaseLM, vectors: np.ndarray, class_lists: list[list[str]] | None = None) -> list[str]:
    """Greedy name prediction; ``class_lists`` optionally gives one candidate list per sample."""
    lists = class_lists if class_lists is not None else [None] * len(vectors)
    instructions = [build_instruction(v, model, cl) for v, cl in zip(vectors, lists)]
    return predict(model, instructions)


def evaluate_accuracy(model: BaseLM, vectors: np.ndarray, truths: list[str], valid: list[str],
                      class_lists: list[list[str]] | None = None) -> Accuracy:
    return score_predictions(recognize(model, vectors, class_lists), truths, valid)


def evaluate_split(cfg: RunConfig, codec: ActionCodec, model: BaseLM, test_set: SkeletonDataset) -> Accuracy:
    """Top-1 accuracy of the adapted model on a closed-set test split."""
    vectors = action_vectors(codec, test_set.signals(), cfg.discretize)
    truths = [test_set.class_names[k] for k in test_set.labels]
    return evaluate_accuracy(model, vectors, truths, test_set.class_names)


@dataclass
class UnseenResult:
    accuracies: list[float]
    invalid_decodes: list[int]
    unseen_classes: list[list[str]]

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    def as_dict(self) -> dict:
        return {"accuracy": self.mean, "repeats": self.accuracies, "invalid_decodes": self.invalid_decodes,
                "unseen_classes": self.unseen_classes}


def evaluate_unseen(cfg: RunConfig, codec: ActionCodec, base: BaseLM, base_state: dict[str, np.ndarray],
                    dataset: SkeletonDataset, on_log=None) -> UnseenResult:
    """Unseen-class protocol: ``cfg.unseen_repeats`` seeded splits, adapters retrained on each.

    Training instructions list the true seen class plus two distractors; test
    instructions list the three withheld classes in a per-sample order.
    """
    result = UnseenResult([], [], [])
    for r in range(cfg.unseen_repeats):
        run_cfg = cfg.replace(seed=cfg.seed + r)
        sp = split(dataset, "unseen-class", run_cfg.seed)
        names = [dataset.class_names[k] for k in sp.train.labels]
        vectors = action_vectors(codec, sp.train.signals(), cfg.discretize)
        run = train_lora(run_cfg, base, base_state, vectors, names, list_choices=sorted(set(names)), on_log=on_log)
        order_rng = make_rng(run_cfg.seed, "unseen-lists")
        unseen = sp.unseen_classes
        lists = [[unseen[j] for j in order_rng.permutation(len(unseen))] for _ in range(len(sp.test))]
        truths = [dataset.class_names[k] for k in sp.test.labels]
        test_vectors = action_vectors(codec, sp.test.signals(), cfg.discretize)
        acc = evaluate_accuracy(run.model, test_vectors, truths, unseen, lists)
        result.accuracies.append(acc.accuracy)
        result.invalid_decodes.append(acc.invalid_decodes)
        result.unseen_classes.append(list(unseen))
    return result


@dataclass
class UsageStats:
    counts: np.ndarray          # per token id, unsorted
    empirical: np.ndarray       # sorted descending, normalized
    zipf: np.ndarray
    js_to_zipf: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["rank", "empirical_prob", "zipf_prob"])
        for r, (p, z) in enumerate(zip(self.empirical, self.zipf), start=1):
            writer.writerow([r, repr(float(p)), repr(float(z))])
        return buf.getvalue()


def usage_stats(codec: ActionCodec, signals: np.ndarray, alpha: float = 1.0, beta: float = 2.7,
                batch: int = 64) -> UsageStats:
    """Hard-quantization rank-frequency table over ``signals`` and its JS distance to Zipf."""
    size = codec.codebook.size
    counts = np.zeros(size)
    for start in range(0, len(signals), batch):
        for sentence in codec.tokenize(signals[start : start + batch]):
            counts += np.bincount(sentence.indices, minlength=size)
    empirical = np.sort(counts)[::-1] / counts.sum()
    target = biasreg.zipf_target(size, alpha, beta)
    with no_grad():
        js = biasreg.js_divergence(Tensor(empirical), Tensor(target.probabilities)).item()
    return UsageStats(counts, empirical, target.probabilities, js)
