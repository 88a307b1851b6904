"""Skeleton sequences: JSONL ingestion, synthetic generation, normalization, splits.

JSONL schema, one sample per line::

    {"label": "wave hand", "subject": 3, "frames": [[[x, y, z], ...J joints], ...V frames]}

Frame counts are trimmed down to the largest multiple of 4.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diffcore import ContractViolation, make_rng
from .recognizer.corpus import ACTION_NAMES

ROOT_JOINT = 0
FRAME_MULTIPLE = 4


class IngestionError(ValueError):
    def __init__(self, problems: list[tuple[int, str]]):
        self.problems = problems
        lines = "; ".join(f"line {n}: {msg}" for n, msg in problems)
        super().__init__(f"{len(problems)} malformed sample(s): {lines}")


@dataclass
class ActionSignal:
    frames: np.ndarray          # (V, J*3)
    label: int | None = None
    subject: int = 0

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    @property
    def joints(self) -> int:
        return self.frames.shape[1] // 3


@dataclass
class SkeletonDataset:
    samples: list[ActionSignal]
    class_names: list[str]

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    @property
    def subject_ids(self) -> np.ndarray:
        return np.array([s.subject for s in self.samples], dtype=np.int64)

    def signals(self) -> np.ndarray:
        return np.stack([s.frames for s in self.samples]) if self.samples else np.zeros((0, 0, 0))

    def subset(self, idx) -> "SkeletonDataset":
        return SkeletonDataset([self.samples[i] for i in idx], list(self.class_names))


def trim_length(v: int) -> int:
    return v - v % FRAME_MULTIPLE


def _parse_line(obj, lineno: int) -> tuple[str, int, np.ndarray]:
    if not isinstance(obj, dict):
        raise ValueError("not a JSON object")
    missing = [k for k in ("label", "subject", "frames") if k not in obj]
    if missing:
        raise ValueError(f"missing field(s) {missing}")
    frames = np.asarray(obj["frames"], dtype=np.float64)
    if frames.ndim != 3 or frames.shape[2] != 3 or frames.shape[1] < 1:
        raise ValueError(f"frames must be V x J x 3, got shape {frames.shape}")
    if not np.all(np.isfinite(frames)):
        raise ValueError("non-finite coordinate")
    v = trim_length(frames.shape[0])
    if v < FRAME_MULTIPLE:
        raise ValueError(f"only {frames.shape[0]} frame(s); need at least {FRAME_MULTIPLE}")
    return str(obj["label"]), int(obj["subject"]), frames[:v].reshape(v, -1)


def load_skeletons(path: str | Path, class_names: list[str] | None = None) -> SkeletonDataset:
    """Read a JSONL skeleton file. All malformed lines are reported together."""
    parsed: list[tuple[str, int, np.ndarray]] = []
    problems: list[tuple[int, str]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                parsed.append(_parse_line(json.loads(line), lineno))
            except (ValueError, TypeError) as exc:
                problems.append((lineno, str(exc)))
    if problems:
        raise IngestionError(problems)
    names = list(class_names) if class_names else []
    for label, _, _ in parsed:
        if label not in names:
            if class_names:
                raise IngestionError([(0, f"label {label!r} not among the given class names")])
            names.append(label)
    lookup = {n: i for i, n in enumerate(names)}
    joints = {p[2].shape[1] for p in parsed}
    if len(joints) > 1:
        raise IngestionError([(0, f"inconsistent joint counts {sorted(j // 3 for j in joints)}")])
    return SkeletonDataset([ActionSignal(f, lookup[lab], subj) for lab, subj, f in parsed], names)


def save_skeletons(dataset: SkeletonDataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in dataset.samples:
            frames = s.frames.reshape(s.length, -1, 3).tolist()
            name = dataset.class_names[s.label] if s.label is not None else ""
            fh.write(json.dumps({"label": name, "subject": s.subject, "frames": frames}) + "\n")


# ---------------------------------------------------------------------------
# synthetic substrate
# ---------------------------------------------------------------------------

@dataclass
class SynthSpec:
    """Per-class sinusoidal joint trajectories around a shared rest pose.

    ``frequency``, ``amplitude`` and ``phase`` have shape ``(K, J, 3)``;
    ``rest_pose`` has shape ``(J, 3)``. ``seed`` drives only the noise.
    """

    frequency: np.ndarray
    amplitude: np.ndarray
    phase: np.ndarray
    rest_pose: np.ndarray
    frames: int = 64
    noise_scale: float = 0.05
    samples_per_class: int = 100
    subjects: int = 10
    seed: int = 7
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.frames % FRAME_MULTIPLE:
            raise ContractViolation(f"synthetic frame count {self.frames} is not divisible by {FRAME_MULTIPLE}")
        params = np.concatenate([self.frequency, self.amplitude, self.phase], axis=-1).reshape(self.classes, -1)
        if len({p.tobytes() for p in params}) != self.classes:
            raise ContractViolation("synthetic classes must have distinct motion parameters")

    @property
    def classes(self) -> int:
        return self.frequency.shape[0]

    @property
    def joints(self) -> int:
        return self.frequency.shape[1]

    @classmethod
    def make(cls, classes: int = 5, joints: int = 8, frames: int = 64, noise_scale: float = 0.05,
             samples_per_class: int = 100, seed: int = 7, structure_seed: int = 0,
             subjects: int = 10) -> "SynthSpec":
        rng = make_rng(structure_seed, "synth-structure")
        names = list(ACTION_NAMES[:classes]) + [f"action {i}" for i in range(len(ACTION_NAMES), classes)]
        return cls(
            frequency=rng.uniform(0.5, 3.0, size=(classes, joints, 3)),
            amplitude=rng.uniform(0.2, 1.0, size=(classes, joints, 3)),
            phase=rng.uniform(0.0, 2 * math.pi, size=(classes, joints, 3)),
            rest_pose=rng.normal(0.0, 1.0, size=(joints, 3)),
            frames=frames, noise_scale=noise_scale, samples_per_class=samples_per_class,
            subjects=subjects, seed=seed, class_names=names,
        )


def synth_generate(spec: SynthSpec) -> SkeletonDataset:
    rng = make_rng(spec.seed, "synth-noise")
    t = (np.arange(spec.frames) / spec.frames)[:, None, None]
    samples = []
    for k in range(spec.classes):
        clean = spec.rest_pose + spec.amplitude[k] * np.sin(2 * math.pi * spec.frequency[k] * t + spec.phase[k])
        for i in range(spec.samples_per_class):
            noisy = clean + spec.noise_scale * rng.normal(size=clean.shape)
            samples.append(ActionSignal(noisy.reshape(spec.frames, -1), k, i % spec.subjects))
    return SkeletonDataset(samples, list(spec.class_names))


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------

def normalize(signal: ActionSignal) -> ActionSignal:
    """Translate frame-0 root joint to the origin and scale mean joint norm to 1."""
    pts = signal.frames.reshape(signal.length, -1, 3)
    centered = pts - pts[0, ROOT_JOINT]
    scale = np.linalg.norm(centered, axis=-1).mean()
    if not scale > 0:
        raise ContractViolation("normalize: degenerate signal with all joints at the root")
    return ActionSignal((centered / scale).reshape(signal.length, -1), signal.label, signal.subject)


def normalize_dataset(ds: SkeletonDataset) -> SkeletonDataset:
    return SkeletonDataset([normalize(s) for s in ds.samples], list(ds.class_names))


# ---------------------------------------------------------------------------
# protocol splits
# ---------------------------------------------------------------------------

PROTOCOLS = ("subject-split", "random-split", "unseen-class")
UNSEEN_CLASS_COUNT = 3


@dataclass
class Split:
    train: SkeletonDataset
    test: SkeletonDataset
    protocol: str
    unseen_classes: list[str] | None = None
    dropped: int = 0


def split(ds: SkeletonDataset, protocol: str, seed: int, test_share: float = 0.3) -> Split:
    if protocol not in PROTOCOLS:
        raise ContractViolation(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")
    rng = make_rng(seed, "split", protocol)
    n = len(ds)
    if protocol == "random-split":
        order = rng.permutation(n)
        cut = int(round(n * (1 - test_share)))
        return Split(ds.subset(sorted(order[:cut])), ds.subset(sorted(order[cut:])), protocol)
    if protocol == "subject-split":
        subjects = np.unique(ds.subject_ids)
        n_test = max(1, int(round(len(subjects) * test_share)))
        test_subjects = set(rng.choice(subjects, size=n_test, replace=False).tolist())
        test_idx = [i for i, s in enumerate(ds.subject_ids) if s in test_subjects]
        train_idx = [i for i, s in enumerate(ds.subject_ids) if s not in test_subjects]
        return Split(ds.subset(train_idx), ds.subset(test_idx), protocol)
    if len(ds.class_names) <= UNSEEN_CLASS_COUNT:
        raise ContractViolation(f"unseen-class protocol needs at least {UNSEEN_CLASS_COUNT + 1} classes")
    unseen = sorted(rng.choice(len(ds.class_names), size=UNSEEN_CLASS_COUNT, replace=False).tolist())
    labels = ds.labels
    train_idx = [i for i in range(n) if labels[i] not in unseen]
    subjects = np.unique(ds.subject_ids)
    n_test = max(1, int(round(len(subjects) * test_share)))
    test_subjects = set(rng.choice(subjects, size=n_test, replace=False).tolist())
    test_idx = [i for i in range(n) if labels[i] in unseen and ds.subject_ids[i] in test_subjects]
    dropped = n - len(train_idx) - len(test_idx)
    return Split(ds.subset(train_idx), ds.subset(test_idx), protocol,
                 [ds.class_names[k] for k in unseen], dropped)
