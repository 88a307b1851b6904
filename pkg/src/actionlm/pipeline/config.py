"""Run configuration and its plain ``key = value`` text format.

File format: one ``key = value`` pair per line, ``#`` starts a comment, blank
lines are ignored. Keys are the :class:`RunConfig` field names; values are
parsed according to the field type (booleans accept true/false/yes/no/1/0).
Unknown keys are an error.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path

from ..codec import CodecConfig
from ..diffcore import ContractViolation
from ..recognizer import LMConfig


@dataclass
class RunConfig:
    # stage 1: action codec
    codec_iterations: int = 600
    codec_lr: float = 2e-4
    codec_weight_decay: float = 0.0
    batch_size: int = 32
    codebook_size: int = 64
    d_u: int = 64
    hidden: int = 128
    curvature: float = 1.0
    eps: float = 1e-5
    tau: float = 0.5
    usage_logit_scale: float = 20.0
    omega1: float = 0.02
    omega2: float = 0.2
    zipf_alpha: float = 1.0
    zipf_beta: float = 2.7
    use_zipf: bool = True
    use_context: bool = True
    use_mmd: bool = True
    hyperbolic: bool = True
    discretize: bool = True
    hyperbolic_usage_distance: bool = True
    riemannian_codebook: bool = False
    # stage 2: adaptation of the frozen language model
    lora_iterations: int = 300
    lora_lr: float = 3e-3
    lora_batch_size: int = 16
    lora_rank: int = 4
    lora_alpha: float = 16.0
    all_tuning: bool = False
    # stand-in language model
    lm_layers: int = 4
    lm_heads: int = 4
    lm_ff: int = 128
    lm_max_len: int = 64
    lm_pretrain_steps: int = 500
    lm_pretrain_lr: float = 3e-3
    lm_batch_size: int = 16
    lm_corpus_sentences: int = 3000
    # data
    data_source: str = "synth"
    protocol: str = "subject-split"
    seed: int = 7
    synth_classes: int = 5
    synth_joints: int = 8
    synth_frames: int = 64
    synth_noise: float = 0.05
    synth_samples_per_class: int = 100
    unseen_repeats: int = 5
    log_every: int = 50

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.omega1 < 0 or self.omega2 < 0:
            raise ContractViolation("loss weights omega1 and omega2 must be non-negative")
        if self.codebook_size % 2:
            raise ContractViolation(f"codebook_size must be even, got {self.codebook_size}")
        if not self.usage_logit_scale > 0:
            raise ContractViolation(f"usage_logit_scale must be positive, got {self.usage_logit_scale}")
        if not self.tau > 0:
            raise ContractViolation(f"tau must be positive, got {self.tau}")
        if self.hyperbolic and self.curvature != 1.0:
            raise ContractViolation("the geodesic distance in use is the curvature-1 form; set curvature = 1")

    # -- derived configs -----------------------------------------------------
    def codec_config(self) -> CodecConfig:
        return CodecConfig(joints=self.synth_joints, d_u=self.d_u, hidden=self.hidden,
                           codebook_size=self.codebook_size, curvature=self.curvature, eps=self.eps,
                           hyperbolic=self.hyperbolic)

    def lm_config(self) -> LMConfig:
        return LMConfig(d_model=self.d_u, n_layers=self.lm_layers, n_heads=self.lm_heads, d_ff=self.lm_ff,
                        max_len=self.lm_max_len)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self, keys: tuple[str, ...] | None = None) -> str:
        """Short digest of the configuration, or of the ``keys`` subset."""
        values = self.to_dict()
        if keys is not None:
            values = {k: values[k] for k in keys}
        return hashlib.sha256(json.dumps(values, sort_keys=True).encode()).hexdigest()[:16]


# Settings reported for the full-scale runs; the desk defaults above are scaled down.
PUBLISHED_SETTINGS = {
    "codec_iterations": 300_000,
    "codec_lr": 2e-4,
    "batch_size": 256,
    "codebook_size": 512,
    "d_u": 5120,
    "curvature": 1.0,
    "omega1": 0.02,
    "omega2": 0.2,
    "zipf_alpha": 1.0,
    "zipf_beta": 2.7,
    "lora_iterations": 75_000,
    "lora_lr": 3e-3,
    "lora_rank": 64,
    "lora_alpha": 16.0,
}

_TRUE = {"true", "yes", "1", "on"}
_FALSE = {"false", "no", "0", "off"}


def _coerce(name: str, kind, raw: str):
    raw = raw.strip()
    if kind in (bool, "bool"):
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ContractViolation(f"config key {name!r}: {raw!r} is not a boolean")
    try:
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
    except ValueError:
        raise ContractViolation(f"config key {name!r}: cannot parse {raw!r} as {kind}") from None
    return raw.strip("\"'")


def field_types() -> dict[str, str]:
    return {f.name: f.type if isinstance(f.type, str) else f.type.__name__ for f in fields(RunConfig)}


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    types = field_types()
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractViolation(f"config line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise ContractViolation(f"config line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, types[key], raw)
    return (base or RunConfig()).replace(**values)


def load_config(path: str | Path, base: RunConfig | None = None) -> RunConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"), base)


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for key, value in cfg.to_dict().items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
