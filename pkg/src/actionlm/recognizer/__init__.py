"""Frozen stand-in language model, LoRA adapters and instruction handling."""

from .corpus import ACTION_NAMES, EOS, INSTRUCTION_TEMPLATE, LIST_TEMPLATE, PAD, build_corpus, tokenize_words
from .instruct import Instruction, build_instruction, lora_loss, predict, teacher_batch
from .model import (BaseLM, ConfigurationError, LMConfig, LoRALinear, adapter_parameters, attach_lora,
                    pretrain_base, token_cross_entropy, verify_base_frozen)

__all__ = [
    "ACTION_NAMES", "EOS", "INSTRUCTION_TEMPLATE", "LIST_TEMPLATE", "PAD", "BaseLM", "ConfigurationError",
    "Instruction", "LMConfig", "LoRALinear", "adapter_parameters", "attach_lora", "build_corpus",
    "build_instruction", "lora_loss", "predict", "pretrain_base", "teacher_batch", "token_cross_entropy",
    "tokenize_words", "verify_base_frozen",
]
