"""Truncated Laplace-Beltrami eigenbasis and spectral (de)projection."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, eigsh

from .errors import ConvergenceError, DimensionError, ParseError
from .mesh import Operators, _frozen

SHIFT = -1e-8
RESIDUAL_TOL = 1e-6
CACHE_MAGIC = b"SPEC1"


@dataclass(frozen=True, eq=False)
class EigenBasis:
    """Mass-orthonormal eigenfunctions ``phi`` (n, k), ascending ``evals`` (k,)."""

    phi: np.ndarray
    evals: np.ndarray
    mass: np.ndarray

    @property
    def k(self) -> int:
        return self.phi.shape[1]

    @property
    def n(self) -> int:
        return self.phi.shape[0]

    def pinv(self) -> np.ndarray:
        """Phi^dagger = Phi^T M, shape (k, n)."""
        return self.phi.T * self.mass[None, :]

    def truncate(self, k: int) -> "EigenBasis":
        return EigenBasis(self.phi[:, :k], self.evals[:k], self.mass)


def _fix_signs(phi: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(phi), axis=0)
    signs = np.sign(phi[idx, np.arange(phi.shape[1])])
    signs[signs == 0] = 1.0
    return phi * signs[None, :]


def compute_eigenbasis(ops: Operators, k: int, max_restarts: int = 3) -> EigenBasis:
    """Smallest ``k`` generalized eigenpairs of ``L phi = lambda M phi``.

    Shift-invert Lanczos around a tiny negative shift so the factorized
    matrix ``L + 1e-8 M`` is positive definite. Columns are sign-normalized
    so the entry of largest magnitude is positive.
    """
    n = ops.n
    if not 1 <= k <= n - 1:
        raise DimensionError(f"basis size k={k} must satisfy 1 <= k <= n-1 = {n - 1}")
    L = ops.laplacian.tocsc()
    M = sparse.diags(ops.mass).tocsc()
    rng = np.random.RandomState(0)
    v0 = rng.uniform(0.5, 1.5, size=n)
    ncv = min(n, max(2 * k + 1, 20))
    last = None
    for attempt in range(max_restarts + 1):
        try:
            evals, evecs = eigsh(L, k=k, M=M, sigma=SHIFT, which="LM", v0=v0, ncv=ncv, maxiter=max(1000, 20 * n))
        except (ArpackNoConvergence, ArpackError) as exc:
            last = exc
            ncv = min(n, 2 * ncv)
            v0 = rng.uniform(0.5, 1.5, size=n)
            continue
        order = np.argsort(evals)
        evals = np.maximum(evals[order], 0.0)
        evecs = evecs[:, order]
        # re-orthonormalize under M (ARPACK output is M-orthonormal up to round-off)
        G = evecs.T @ (ops.mass[:, None] * evecs)
        C = np.linalg.cholesky(G)
        evecs = np.linalg.solve(C, evecs.T).T
        res = np.linalg.norm(L @ evecs - (ops.mass[:, None] * evecs) * evals[None, :], axis=0)
        denom = np.linalg.norm(ops.mass[:, None] * evecs, axis=0)
        if np.all(res <= RESIDUAL_TOL * np.maximum(denom, 1.0)):
            return EigenBasis(_frozen(_fix_signs(evecs)), _frozen(evals), ops.mass)
        last = ConvergenceError(f"eigen residual {res.max():.3e} above tolerance")
        ncv = min(n, 2 * ncv)
    raise ConvergenceError(f"Lanczos failed after {max_restarts} restarts: {last}")


def project(basis: EigenBasis, f: np.ndarray) -> np.ndarray:
    """Spectral coefficients ``Phi^T M f``."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape[0] != basis.n:
        raise DimensionError(f"function has {f.shape[0]} rows, basis has {basis.n}")
    if f.ndim == 1:
        return basis.phi.T @ (basis.mass * f)
    return basis.phi.T @ (basis.mass[:, None] * f)


def unproject(basis: EigenBasis, a: np.ndarray) -> np.ndarray:
    """Vertex function ``Phi a``."""
    a = np.asarray(a, dtype=np.float64)
    if a.shape[0] != basis.k:
        raise DimensionError(f"coefficients have {a.shape[0]} rows, basis has {basis.k}")
    return basis.phi @ a


def save_basis(path, basis: EigenBasis) -> None:
    """Cache layout: b'SPEC1', n and k as <u8, then Phi row-major and Lambda as <f8."""
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<QQ", basis.n, basis.k))
        fh.write(np.ascontiguousarray(basis.phi, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(basis.evals, dtype="<f8").tobytes())


def load_basis(path, mass: np.ndarray) -> EigenBasis:
    data = Path(path).read_bytes()
    if data[:5] != CACHE_MAGIC:
        raise ParseError(f"{path}: not a SPEC1 basis cache")
    n, k = struct.unpack("<QQ", data[5:21])
    body = np.frombuffer(data[21:], dtype="<f8")
    if body.size != n * k + k or len(mass) != n:
        raise ParseError(f"{path}: payload size does not match header")
    phi = body[: n * k].reshape(n, k).astype(np.float64)
    evals = body[n * k :].astype(np.float64)
    return EigenBasis(_frozen(phi), _frozen(evals), np.asarray(mass))
