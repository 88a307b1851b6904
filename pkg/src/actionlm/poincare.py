"""Poincaré-ball geometry: origin exp/log maps, geodesic distance, retraction.

Points live in the open ball ``{x : sqrt(c) * |x| < 1}``. All maps are written
with :mod:`actionlm.diffcore` primitives so gradients flow through them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .diffcore import ContractViolation, Tensor, as_tensor
from .diffcore import functional as F

log = logging.getLogger(__name__)

_ORIGIN_FLOOR = 1e-15


@dataclass(frozen=True)
class BallConfig:
    c: float = 1.0
    dim: int = 64
    eps: float = 1e-5

    def __post_init__(self):
        if not self.c > 0:
            raise ContractViolation(f"curvature must be positive, got {self.c}")
        if not 0 < self.eps < 1e-2:
            raise ContractViolation(f"boundary margin must lie in (0, 1e-2), got {self.eps}")
        if self.dim < 1:
            raise ContractViolation(f"dimension must be positive, got {self.dim}")

    @property
    def max_radius(self) -> float:
        return (1.0 - self.eps) / np.sqrt(self.c)


@dataclass
class BoundaryDiagnostics:
    """Counts how often log_map0 had to pull an input back from the boundary."""

    log_map_clamps: int = 0

    def reset(self) -> None:
        self.log_map_clamps = 0


diagnostics = BoundaryDiagnostics()


def _require_finite(name: str, x: Tensor) -> None:
    if not np.all(np.isfinite(x.data)):
        raise ContractViolation(f"{name}: non-finite input")


def exp_map0(f, cfg: BallConfig) -> Tensor:
    """Map tangent vectors at the origin into the ball (last axis is the vector)."""
    f = as_tensor(f)
    _require_finite("exp_map0", f)
    sc = float(np.sqrt(cfg.c))
    n = F.clamp(F.norm(f, axis=-1, keepdims=True), _ORIGIN_FLOOR, None)
    # tanh saturates to exactly 1.0 in double precision for large norms
    radius = F.clamp(F.tanh(sc * n), None, 1.0 - cfg.eps)
    return f * (radius / (sc * n))


def log_map0(y, cfg: BallConfig) -> Tensor:
    """Map ball points back to the tangent space at the origin.

    Inputs within ``eps`` of the boundary are treated as lying at radius
    ``(1 - eps) / sqrt(c)``; each such event is counted in ``diagnostics``.
    """
    y = as_tensor(y)
    _require_finite("log_map0", y)
    sc = float(np.sqrt(cfg.c))
    n = F.clamp(F.norm(y, axis=-1, keepdims=True), _ORIGIN_FLOOR, None)
    n_in = F.clamp(n, None, cfg.max_radius)
    clamped = int(np.count_nonzero(n.data > cfg.max_radius))
    if clamped:
        diagnostics.log_map_clamps += clamped
        log.debug("log_map0: clamped %d point(s) to the boundary margin", clamped)
    return y * (F.arctanh(sc * n_in) / (sc * n))


def _check_inside_unit_ball(name: str, x: Tensor) -> None:
    sq = (x.data * x.data).sum(axis=-1)
    if np.any(sq >= 1.0) or not np.all(np.isfinite(sq)):
        raise ContractViolation(f"{name}: point on or outside the unit sphere")


def geodesic_distance(x, y, cfg: BallConfig | None = None) -> Tensor:
    """Curvature-1 Poincaré distance, broadcasting over leading axes.

    ``arccosh(1 + 2|x-y|^2 / ((1-|x|^2)(1-|y|^2)))``. The formula carries no
    curvature term, so a config with ``c != 1`` is rejected.
    """
    if cfg is not None and cfg.c != 1.0:
        raise ContractViolation(f"geodesic_distance is defined for c = 1 only, got c = {cfg.c}")
    x, y = as_tensor(x), as_tensor(y)
    _check_inside_unit_ball("geodesic_distance", x)
    _check_inside_unit_ball("geodesic_distance", y)
    diff = x - y
    num = F.sum(diff * diff, axis=-1)
    den = (1.0 - F.sum(x * x, axis=-1)) * (1.0 - F.sum(y * y, axis=-1))
    return F.acosh1p(2.0 * num / den)


def pairwise_distance(points, tokens, cfg: BallConfig | None = None, hyperbolic: bool = True) -> Tensor:
    """Distances between every row of ``points`` (N, n) and ``tokens`` (U, n) -> (N, U)."""
    points, tokens = as_tensor(points), as_tensor(tokens)
    p = F.reshape(points, (points.shape[0], 1, points.shape[1]))
    t = F.reshape(tokens, (1, tokens.shape[0], tokens.shape[1]))
    if hyperbolic:
        return geodesic_distance(p, t, cfg)
    diff = p - t
    return F.sqrt(F.sum(diff * diff, axis=-1) + 1e-24)


def project_to_ball(x, cfg: BallConfig) -> np.ndarray:
    """Rescale rows whose norm reaches ``(1 - eps)/sqrt(c)`` back onto that radius."""
    arr = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ContractViolation("project_to_ball: non-finite input")
    limit = cfg.max_radius
    n = np.linalg.norm(arr, axis=-1, keepdims=True)
    over = n > limit
    if not over.any():
        return arr
    arr = np.where(over, arr * (limit / np.maximum(n, _ORIGIN_FLOOR)), arr)
    # rounding can leave a rescaled row one ulp outside; shrink until it is not,
    # so a second projection is a no-op
    for _ in range(8):
        over = np.linalg.norm(arr, axis=-1, keepdims=True) > limit
        if not over.any():
            break
        arr = np.where(over, arr * (1.0 - 2.0**-52), arr)
    return arr


def conformal_factor(x, cfg: BallConfig) -> np.ndarray:
    """``2 / (1 - c|x|^2)`` for each point (last axis is the vector)."""
    arr = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    return 2.0 / (1.0 - cfg.c * (arr * arr).sum(axis=-1))


def riemannian_grad_scale(x: np.ndarray, grad: np.ndarray, cfg: BallConfig) -> np.ndarray:
    """Rescale a Euclidean gradient by the inverse metric ``1 / conformal_factor^2``."""
    lam = conformal_factor(x, cfg)[..., None]
    return grad / (lam * lam)
