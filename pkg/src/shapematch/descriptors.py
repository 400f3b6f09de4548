"""Wave kernel signature descriptors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateError, DimensionError
from .spectral import EigenBasis

ZERO_EVAL = 1e-6


@dataclass(frozen=True, eq=False)
class FeatureField:
    values: np.ndarray
    normalized: bool = False

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def n(self) -> int:
        return self.values.shape[0]


def wks_energies(evals: np.ndarray, d: int) -> tuple[np.ndarray, float]:
    """Log-energy centers and the Gaussian width for ``d`` WKS channels."""
    log_ev = np.log(evals[evals > ZERO_EVAL])
    e_min, e_max = log_ev[0], log_ev[-1]
    sigma = 7.0 * (e_max - e_min) / d
    return np.linspace(e_min + 2 * sigma, e_max - 2 * sigma, d), sigma


def wks(basis: EigenBasis, d: int = 128) -> FeatureField:
    """Wave kernel signature with ``d`` log-spaced energy levels.

    Each channel averages the squared eigenfunctions under a Gaussian in
    log-eigenvalue space, normalized by the Gaussian weights; eigenpairs with
    eigenvalue <= 1e-6 are skipped.
    """
    if basis.k < 3:
        raise DimensionError(f"WKS needs at least 3 eigenpairs, got {basis.k}")
    if d < 2:
        raise DimensionError(f"WKS needs d >= 2, got {d}")
    keep = basis.evals > ZERO_EVAL
    if keep.sum() < 2:
        raise DimensionError("WKS needs at least two non-zero eigenvalues")
    log_ev = np.log(basis.evals[keep])
    energies, sigma = wks_energies(basis.evals, d)
    weights = np.exp(-((energies[:, None] - log_ev[None, :]) ** 2) / (2 * sigma**2))  # (d, k')
    weights /= weights.sum(axis=1, keepdims=True)
    values = (basis.phi[:, keep] ** 2) @ weights.T
    return FeatureField(values)


def row_normalize(f: FeatureField) -> FeatureField:
    norms = np.linalg.norm(f.values, axis=1)
    if np.any(norms == 0):
        raise DegenerateError(f"feature row {int(np.flatnonzero(norms == 0)[0])} is all zero")
    return FeatureField(f.values / norms[:, None], normalized=True)


def standardize(f: FeatureField) -> FeatureField:
    """Z-score each channel over the vertices.

    Raw WKS channels are nearly parallel between neighbouring vertices; removing
    the per-channel mean and scale makes cosine similarities discriminative.
    Constant channels are only centered.
    """
    v = f.values - f.values.mean(axis=0)
    sd = v.std(axis=0)
    sd[sd == 0] = 1.0
    return FeatureField(v / sd)
