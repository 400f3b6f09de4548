"""Soft correspondences from feature similarity and per-pair feature
optimization under the spectral loss."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .descriptors import FeatureField, row_normalize
from .errors import ConvergenceError, DimensionError
from .fmap import (
    DEFAULT_GAMMA,
    DEFAULT_LAMBDA_REG,
    FunctionalMap,
    SpectralWeights,
    resolvent_mask,
    solve_fmap,
    solve_fmap_vjp,
    spectral_loss,
)
from .optim import Adam
from .pointmap import PointMap
from .spectral import EigenBasis

__all__ = [
    "PointMap",
    "MatchConfig",
    "MatchResult",
    "soft_correspondence",
    "harden",
    "spectral_objective",
    "optimize_features",
]


@dataclass(frozen=True)
class MatchConfig:
    temperature: float = 0.07
    feature_dim: int = 128
    iters: int = 100
    step_size: float = 1e-3
    lambda_reg: float = DEFAULT_LAMBDA_REG
    gamma: float = DEFAULT_GAMMA
    weights: SpectralWeights = field(default_factory=SpectralWeights)

    def __post_init__(self):
        if self.iters < 1:
            raise ValueError("iters must be >= 1")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")


def _softmax_rows(s: np.ndarray) -> np.ndarray:
    # in place; callers pass temporaries
    s -= s.max(axis=1, keepdims=True)
    np.exp(s, out=s)
    s /= s.sum(axis=1, keepdims=True)
    return s


def soft_correspondence(f_x: FeatureField, f_y: FeatureField, temperature: float = 0.07) -> PointMap:
    """Row-softmax of feature similarities ``F_X F_Y^T / temperature``."""
    fx = f_x.values if isinstance(f_x, FeatureField) else np.asarray(f_x)
    fy = f_y.values if isinstance(f_y, FeatureField) else np.asarray(f_y)
    if fx.shape[1] != fy.shape[1]:
        raise DimensionError(f"feature dimensions differ: {fx.shape[1]} vs {fy.shape[1]}")
    return PointMap.from_matrix(_softmax_rows(fx @ fy.T / temperature))


def harden(pi: PointMap) -> PointMap:
    """Row argmax; ties go to the smallest index."""
    return PointMap.from_indices(pi.indices(), pi.n_dst)


@dataclass
class Objective:
    value: float
    terms: dict
    grad_x: np.ndarray
    grad_y: np.ndarray
    c_xy: FunctionalMap
    c_yx: FunctionalMap
    pi_xy: PointMap
    pi_yx: PointMap


def _normalize(f):
    nrm = np.linalg.norm(f, axis=1, keepdims=True)
    return f / nrm, nrm


def _normalize_vjp(g, nrm, grad):
    return (grad - g * np.sum(g * grad, axis=1, keepdims=True)) / nrm


def _softmax_vjp(p, grad):
    """Backprop through a row softmax; overwrites ``grad``."""
    grad -= np.einsum("ij,ij->i", grad, p)[:, None]
    grad *= p
    return grad


def spectral_objective(fx: np.ndarray, fy: np.ndarray, basis_x: EigenBasis, basis_y: EigenBasis,
                       cfg: MatchConfig, mask_xy: np.ndarray | None = None) -> Objective:
    """Spectral loss as a function of the raw features, with exact gradients.

    Features are row-normalized, turned into soft maps in both directions and
    projected to spectral descriptors; both functional maps come from the
    regularized solve, differentiated implicitly.
    """
    if basis_x.k != basis_y.k:
        raise DimensionError(f"bases must share k, got {basis_x.k} and {basis_y.k}")
    if mask_xy is None:
        mask_xy = resolvent_mask(basis_x.evals, basis_y.evals, cfg.gamma)
    tau, lam = cfg.temperature, cfg.lambda_reg
    gx, nx = _normalize(fx)
    gy, ny = _normalize(fy)
    # both directions are evaluated by the same code path so that swapping
    # X and Y permutes the results exactly (identical inputs stay identical)
    p_xy = _softmax_rows(gx @ gy.T * (1.0 / tau))
    p_yx = _softmax_rows(gy @ gx.T * (1.0 / tau))
    pi_xy, pi_yx = PointMap.from_matrix(p_xy), PointMap.from_matrix(p_yx)

    a = basis_x.pinv() @ gx
    b = basis_y.pinv() @ gy
    c_xy = solve_fmap(a, b, mask_xy, lam)
    c_yx = solve_fmap(b, a, mask_xy.T, lam)
    loss = spectral_loss(c_xy, c_yx, pi_xy, pi_yx, basis_x, basis_y, cfg.weights)

    ga1, gb1 = solve_fmap_vjp(a, b, mask_xy, lam, c_xy.c, loss.grad_c_xy)
    gb2, ga2 = solve_fmap_vjp(b, a, mask_xy.T, lam, c_yx.c, loss.grad_c_yx)
    grad_gx = (basis_x.mass[:, None] * basis_x.phi) @ (ga1 + ga2)
    grad_gy = (basis_y.mass[:, None] * basis_y.phi) @ (gb1 + gb2)

    g_xy = _softmax_vjp(p_xy, loss.grad_pi_xy)
    g_yx = _softmax_vjp(p_yx, loss.grad_pi_yx)
    grad_gx += (g_xy @ gy + g_yx.T @ gy) / tau
    grad_gy += (g_yx @ gx + g_xy.T @ gx) / tau

    return Objective(loss.value, loss.terms, _normalize_vjp(gx, nx, grad_gx), _normalize_vjp(gy, ny, grad_gy),
                     c_xy, c_yx, pi_xy, pi_yx)


@dataclass
class MatchResult:
    features: tuple
    fmaps: tuple
    pointmaps: tuple
    trace: list
    initial_loss: float
    best_loss: float

    def hard_maps(self) -> tuple:
        return harden(self.pointmaps[0]), harden(self.pointmaps[1])


def optimize_features(mesh_x, mesh_y, basis_x: EigenBasis, basis_y: EigenBasis, init: tuple, cfg: MatchConfig,
                      callback=None) -> MatchResult:
    """Adam descent on free per-vertex features under the spectral loss.

    Starts from ``init`` (typically WKS), runs ``cfg.iters`` steps and
    returns the best iterate together with its maps and the loss trace.
    """
    if basis_x.k != basis_y.k:
        raise DimensionError(f"bases must share k, got {basis_x.k} and {basis_y.k}")
    if mesh_x is not None and mesh_x.n_vertices != basis_x.n:
        raise DimensionError("mesh_x and basis_x disagree on vertex count")
    if mesh_y is not None and mesh_y.n_vertices != basis_y.n:
        raise DimensionError("mesh_y and basis_y disagree on vertex count")
    fx = np.array(init[0].values if isinstance(init[0], FeatureField) else init[0], dtype=np.float64)
    fy = np.array(init[1].values if isinstance(init[1], FeatureField) else init[1], dtype=np.float64)
    if not (np.all(np.isfinite(fx)) and np.all(np.isfinite(fy))):
        raise ValueError("initial features must be finite")
    mask = resolvent_mask(basis_x.evals, basis_y.evals, cfg.gamma)
    opt = Adam([fx, fy], lr=cfg.step_size)
    trace = []
    best = None
    for it in range(cfg.iters + 1):
        obj = spectral_objective(fx, fy, basis_x, basis_y, cfg, mask)
        if not np.isfinite(obj.value):
            raise ConvergenceError(f"spectral loss became non-finite at iteration {it}")
        trace.append(obj.value)
        if best is None or obj.value < best[0]:
            best = (obj.value, fx.copy(), fy.copy(), obj)
        if callback is not None:
            callback(it, obj)
        if it < cfg.iters:
            opt.step([obj.grad_x, obj.grad_y])
    value, bx, by, obj = best
    feats = (row_normalize(FeatureField(bx)), row_normalize(FeatureField(by)))
    return MatchResult(feats, (obj.c_xy, obj.c_yx), (obj.pi_xy, obj.pi_yx), trace, trace[0], value)
