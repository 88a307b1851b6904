"""Regularizers pushing token usage toward language-like statistics.

* differentiable per-sequence usage counts from straight-through Gumbel-Softmax
* Jensen-Shannon distance of the rank-frequency curve to a Zipf-Mandelbrot law
* paired-token co-usage (tokens ``u`` and ``u + U/2``) via min pooling
* kernel MMD between codebook tokens and the language model's word embeddings
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import poincare
from .diffcore import ContractViolation, Tensor, as_tensor
from .diffcore import functional as F

JS_FLOOR = 1e-12
BANDWIDTH_MULTIPLIERS = (0.5, 1.0, 2.0)


@dataclass(frozen=True)
class ZipfTarget:
    alpha: float
    beta: float
    probabilities: np.ndarray

    @property
    def size(self) -> int:
        return len(self.probabilities)


def zipf_target(size: int, alpha: float = 1.0, beta: float = 2.7) -> ZipfTarget:
    """Rank probabilities proportional to ``1 / (rank + beta)**alpha``, ranks 1..size."""
    if size < 1:
        raise ContractViolation(f"zipf_target needs at least one rank, got {size}")
    ranks = np.arange(1, size + 1, dtype=np.float64)
    weights = 1.0 / (ranks + beta) ** alpha
    return ZipfTarget(alpha, beta, weights / weights.sum())


def gumbel_softmax(logits: Tensor, tau: float, rng: np.random.Generator | None, hard: bool = True) -> Tensor:
    """Gumbel-Softmax over the last axis; ``rng=None`` disables the noise.

    In hard mode the forward value is the one-hot argmax (first index on ties)
    and the gradient is that of the soft sample.
    """
    if not tau > 0:
        raise ContractViolation(f"Gumbel-Softmax temperature must be positive, got {tau}")
    logits = as_tensor(logits)
    z = logits
    if rng is not None:
        u = rng.uniform(low=np.finfo(np.float64).tiny, high=1.0, size=logits.shape)
        z = z + (-np.log(-np.log(u)))
    soft = F.softmax(z / tau, axis=-1)
    if not hard:
        return soft
    hot = F.one_hot(np.argmax(z.data, axis=-1), logits.shape[-1])
    return F.straight_through(soft, hot)


def usage_from_distances(distances: Tensor, batch: int, tau: float,
                         rng: np.random.Generator | None, hard: bool = True, logit_scale: float = 1.0) -> Tensor:
    """Per-sequence usage counts ``(B, U)`` from flattened ``(B*W, U)`` distances.

    The Gumbel logits are ``-logit_scale * distance``. Unit-variance Gumbel
    noise swamps distance gaps much smaller than one, so the scale controls
    how often the noisy hard sample agrees with the nearest token.
    """
    if not logit_scale > 0:
        raise ContractViolation(f"logit_scale must be positive, got {logit_scale}")
    d = gumbel_softmax(-logit_scale * as_tensor(distances), tau, rng, hard=hard)
    n, size = d.shape
    return F.sum(F.reshape(d, (batch, n // batch, size)), axis=1)


def soft_usage(latents, codebook, tau: float, rng: np.random.Generator | None, hard: bool = True,
               hyperbolic_distance: bool | None = None, logit_scale: float = 1.0) -> Tensor:
    """Token usage counts ``t^b`` for a batch of latent sequences ``(B, W, d_u)``.

    Distances follow the codebook's geometry unless ``hyperbolic_distance``
    overrides it.
    """
    f = as_tensor(latents)
    bsz, w, d = f.shape
    flat = F.reshape(f, (bsz * w, d))
    hyper = codebook.hyperbolic if hyperbolic_distance is None else hyperbolic_distance
    if hyper:
        dist = poincare.pairwise_distance(poincare.exp_map0(flat, codebook.cfg), codebook.tokens, codebook.cfg)
    else:
        dist = poincare.pairwise_distance(flat, codebook.tokens, hyperbolic=False)
    return usage_from_distances(dist, bsz, tau, rng, hard=hard, logit_scale=logit_scale)


def js_divergence(p, q) -> Tensor:
    """Jensen-Shannon divergence (natural log) with a floor inside the logs."""
    p, q = as_tensor(p), as_tensor(q)
    m = 0.5 * (p + q)
    log_m = F.log(m + JS_FLOOR)
    kl_pm = F.sum(p * (F.log(p + JS_FLOOR) - log_m))
    kl_qm = F.sum(q * (F.log(q + JS_FLOOR) - log_m))
    return 0.5 * (kl_pm + kl_qm)


def _sequence_length(usages: Tensor) -> float:
    return float(np.round(usages.data.sum() / usages.shape[0]))


def frequency_distribution(usages) -> Tensor:
    """Batch-aggregated usage, sorted by frequency, normalized by ``B * W``."""
    usages = as_tensor(usages)
    bsz = usages.shape[0]
    total = F.sum(usages, axis=0)
    return F.sort(total, descending=True) / (bsz * _sequence_length(usages))


def zipf_loss(usages, target: ZipfTarget) -> Tensor:
    usages = as_tensor(usages)
    if usages.shape[0] == 0:
        raise ContractViolation("zipf_loss: empty batch")
    if usages.shape[1] != target.size:
        raise ContractViolation(f"zipf_loss: {usages.shape[1]} tokens but target has {target.size} ranks")
    return js_divergence(frequency_distribution(usages), target.probabilities)


def context_loss(usages) -> Tensor:
    """``1 - sum_b sum_u min(t_u, t_{u+U/2}) / (B * W)``; lies in ``[0.5, 1]``."""
    usages = as_tensor(usages)
    bsz, size = usages.shape
    if size % 2:
        raise ContractViolation(f"context_loss needs an even token count, got {size}")
    half = size // 2
    corr = F.sum(F.minimum(usages[:, :half], usages[:, half:]))
    return 1.0 - corr / (bsz * _sequence_length(usages))


def _pairwise_sq(a: Tensor, b: Tensor) -> Tensor:
    diff = F.reshape(a, (a.shape[0], 1, a.shape[1])) - F.reshape(b, (1, b.shape[0], b.shape[1]))
    return F.sum(diff * diff, axis=-1)


def median_bandwidth(x: np.ndarray, y: np.ndarray) -> float:
    pooled = np.concatenate([x, y], axis=0)
    diff = pooled[:, None, :] - pooled[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    iu = np.triu_indices(len(pooled), k=1)
    med = float(np.median(dist[iu])) if len(iu[0]) else 0.0
    return med if med > 0 else 1.0


def mmd(x, y, bandwidth: float | None = None) -> Tensor:
    """Biased squared MMD with a mixture of Gaussian kernels.

    Bandwidths are ``bandwidth`` (default: the pooled median pairwise
    distance) times 0.5, 1 and 2, held constant for differentiation.
    """
    x, y = as_tensor(x), as_tensor(y)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ContractViolation(f"mmd: sample shapes {x.shape} and {y.shape} are incompatible")
    if x.shape[0] == 0 or y.shape[0] == 0:
        raise ContractViolation("mmd: empty sample")
    sigma = median_bandwidth(x.data, y.data) if bandwidth is None else float(bandwidth)
    if not sigma > 0:
        raise ContractViolation(f"mmd: bandwidth must be positive, got {sigma}")
    dxx, dyy, dxy = _pairwise_sq(x, x), _pairwise_sq(y, y), _pairwise_sq(x, y)
    total = None
    for mult in BANDWIDTH_MULTIPLIERS:
        scale = -1.0 / (2.0 * (mult * sigma) ** 2)
        term = F.mean(F.exp(dxx * scale)) + F.mean(F.exp(dyy * scale)) - 2.0 * F.mean(F.exp(dxy * scale))
        total = term if total is None else total + term
    # the biased estimator is a squared RKHS norm; clip rounding noise below zero
    return F.relu(total)


@dataclass
class HumanLossTerms:
    zipf: Tensor
    context: Tensor
    mmd: Tensor
    total: Tensor


def human_loss(usages, tokens, lm_embeddings, target: ZipfTarget,
               use_zipf: bool = True, use_context: bool = True, use_mmd: bool = True) -> HumanLossTerms:
    """Unweighted sum of the Zipf, pairing and alignment terms.

    Disabled terms are still evaluated for logging but left out of ``total``.
    ``lm_embeddings`` is treated as data: no gradient reaches it.
    """
    zl = zipf_loss(usages, target)
    cl = context_loss(usages)
    ml = mmd(tokens, F.stop_gradient(as_tensor(lm_embeddings)))
    parts = [t for t, on in ((zl, use_zipf), (cl, use_context), (ml, use_mmd)) if on]
    total = parts[0] if parts else Tensor(0.0)
    for t in parts[1:]:
        total = total + t
    return HumanLossTerms(zl, cl, ml, total)
