"""Action VQ-VAE: temporal conv encoder, hyperbolic codebook quantizer, decoder.

Signals are batches shaped ``(B, V, J*3)`` (frames by flattened joint
coordinates). The encoder halves the time axis twice, so a length-``V`` signal
becomes ``W = V / 4`` latent vectors of width ``d_u``. Quantization maps each
latent into the Poincaré ball, picks the nearest codebook token by geodesic
distance and maps the token back to the tangent space for the decoder.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import poincare
from .diffcore import ContractViolation, Conv1d, Linear, Module, Parameter, Tensor, as_tensor, no_grad
from .diffcore import functional as F
from .poincare import BallConfig

DOWNSAMPLE = 4


@dataclass
class CodecConfig:
    joints: int = 8
    d_u: int = 64
    hidden: int = 128
    codebook_size: int = 64
    curvature: float = 1.0
    eps: float = 1e-5
    hyperbolic: bool = True
    init_radius: float = 0.1

    @property
    def channels(self) -> int:
        return self.joints * 3

    def ball(self) -> BallConfig:
        return BallConfig(c=self.curvature, dim=self.d_u, eps=self.eps)


@dataclass
class ActionSentence:
    """Discrete token indices for one signal plus the vectors the decoder sees."""

    indices: np.ndarray
    discrete_latents: np.ndarray
    source_length: int

    def __len__(self) -> int:
        return len(self.indices)


class HyperbolicCodebook(Module):
    """``U`` learnable tokens; tokens ``u`` and ``u + U/2`` form a correlated pair."""

    def __init__(self, tokens: np.ndarray, cfg: BallConfig, hyperbolic: bool = True):
        size = tokens.shape[0]
        if size < 2 or size % 2:
            raise ContractViolation(f"codebook size must be a positive even number, got {size}")
        self.tokens = Parameter(tokens)
        self.cfg = cfg
        self.hyperbolic = hyperbolic

    @property
    def size(self) -> int:
        return self.tokens.shape[0]

    def partner(self, u: int) -> int:
        half = self.size // 2
        return u + half if u < half else u - half

    @property
    def pairing(self) -> list[list[int]]:
        half = self.size // 2
        return [[u, u + half] for u in range(half)]

    def euclidean_tokens(self) -> Tensor:
        """Tokens as tangent-space vectors (the representation the decoder and LM see)."""
        return poincare.log_map0(self.tokens, self.cfg) if self.hyperbolic else self.tokens

    def retract(self) -> None:
        """Pull tokens back inside the ball after an optimizer step."""
        if self.hyperbolic:
            self.tokens.data = poincare.project_to_ball(self.tokens.data, self.cfg)


def init_codebook(size: int, d_u: int, cfg: BallConfig, rng: np.random.Generator,
                  radius: float = 0.1, hyperbolic: bool = True) -> HyperbolicCodebook:
    """Sample ``size`` tokens uniformly from the origin ball of radius ``radius/sqrt(c)``."""
    if size < 2 or size % 2:
        raise ContractViolation(f"codebook size must be a positive even number, got {size}")
    direction = rng.normal(size=(size, d_u))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    r = radius / np.sqrt(cfg.c) * rng.uniform(size=(size, 1)) ** (1.0 / d_u)
    return HyperbolicCodebook(direction * r, cfg, hyperbolic=hyperbolic)


class Encoder(Module):
    def __init__(self, cfg: CodecConfig, rng: np.random.Generator):
        h = cfg.hidden
        self.lift = Linear(cfg.channels, h, rng)
        self.down = [Conv1d(h, h, 3, rng, stride=2) for _ in range(2)]
        self.res = [Conv1d(h, h, 3, rng, stride=1) for _ in range(2)]
        self.head = Linear(h, cfg.d_u, rng)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.lift(x)
        for down, res in zip(self.down, self.res):
            h = F.relu(down(h))
            h = h + res(h)
        return self.head(h)


class Decoder(Module):
    def __init__(self, cfg: CodecConfig, rng: np.random.Generator):
        h = cfg.hidden
        self.lift = Linear(cfg.d_u, h, rng)
        self.conv = [Conv1d(h, h, 3, rng) for _ in range(2)]
        self.res = [Conv1d(h, h, 3, rng) for _ in range(2)]
        self.head = Linear(h, cfg.channels, rng)

    def __call__(self, z: Tensor) -> Tensor:
        h = self.lift(z)
        for conv, res in zip(self.conv, self.res):
            h = F.relu(conv(F.upsample_nearest(h, 2, axis=1)))
            h = h + res(h)
        return self.head(h)


@dataclass
class Quantized:
    indices: np.ndarray     # (B, W)
    discrete: Tensor        # (B, W, d_u), gradient reaches the codebook only
    distances: Tensor       # (B*W, U), differentiable in latents and tokens


@dataclass
class VQLosses:
    reconstruction: Tensor
    embed: Tensor
    commit: Tensor


class ActionCodec(Module):
    def __init__(self, cfg: CodecConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.encoder = Encoder(cfg, rng)
        self.decoder = Decoder(cfg, rng)
        self.codebook = init_codebook(cfg.codebook_size, cfg.d_u, cfg.ball(), rng,
                                      radius=cfg.init_radius, hyperbolic=cfg.hyperbolic)

    # -- stages --------------------------------------------------------------
    def encode(self, signals) -> Tensor:
        x = as_tensor(signals)
        if x.ndim == 2:
            x = F.reshape(x, (1,) + x.shape)
        if x.ndim != 3 or x.shape[2] != self.cfg.channels:
            raise ContractViolation(f"encode: expected (B, V, {self.cfg.channels}) signals, got {x.shape}")
        if x.shape[1] % DOWNSAMPLE:
            raise ContractViolation(f"encode: frame count {x.shape[1]} is not divisible by {DOWNSAMPLE}")
        return self.encoder(x)

    def quantize(self, latents) -> Quantized:
        f = as_tensor(latents)
        bsz, w, d = f.shape
        flat = F.reshape(f, (bsz * w, d))
        cb = self.codebook
        if cb.hyperbolic:
            dist = poincare.pairwise_distance(poincare.exp_map0(flat, cb.cfg), cb.tokens, cb.cfg)
        else:
            dist = poincare.pairwise_distance(flat, cb.tokens, hyperbolic=False)
        idx = np.argmin(dist.data, axis=1)  # first minimum wins ties
        chosen = F.take(cb.tokens, idx, axis=0)
        discrete = poincare.log_map0(chosen, cb.cfg) if cb.hyperbolic else chosen
        return Quantized(idx.reshape(bsz, w), F.reshape(discrete, (bsz, w, d)), dist)

    @staticmethod
    def straight_through(latents: Tensor, discrete: Tensor) -> Tensor:
        """Decoder input: forward value of ``discrete``, identity gradient into ``latents``."""
        return F.straight_through(latents, discrete)

    def decode(self, z, target_length: int) -> Tensor:
        z = as_tensor(z)
        if z.ndim == 2:
            z = F.reshape(z, (1,) + z.shape)
        if z.shape[1] * DOWNSAMPLE != target_length:
            raise ContractViolation(
                f"decode: {z.shape[1]} latent rows cannot produce {target_length} frames (ratio {DOWNSAMPLE})"
            )
        return self.decoder(z)

    def tokenize(self, signals) -> list[ActionSentence]:
        """Encode and quantize without running the decoder."""
        with no_grad():
            f = self.encode(signals)
            q = self.quantize(f)
        v = f.shape[1] * DOWNSAMPLE
        return [ActionSentence(q.indices[b].copy(), q.discrete.data[b].copy(), v) for b in range(f.shape[0])]

    def continuous_latents(self, signals) -> np.ndarray:
        with no_grad():
            return self.encode(signals).data.copy()

    def reconstruct(self, signals) -> np.ndarray:
        with no_grad():
            f = self.encode(signals)
            q = self.quantize(f)
            return self.decode(q.discrete, f.shape[1] * DOWNSAMPLE).data


def vq_losses(signals, reconstructions: Tensor, latents: Tensor, discrete: Tensor) -> VQLosses:
    """Reconstruction, embedding and commitment terms.

    The latent terms are squared Euclidean distances per latent vector, averaged
    over batch and sequence positions.
    """
    signals = as_tensor(signals)
    rec = F.smooth_l1(signals, reconstructions)
    embed = F.mean(F.sum((F.stop_gradient(latents) - discrete) ** 2, axis=-1))
    commit = F.mean(F.sum((latents - F.stop_gradient(discrete)) ** 2, axis=-1))
    return VQLosses(rec, embed, commit)
