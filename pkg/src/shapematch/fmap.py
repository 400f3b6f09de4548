"""Functional maps: regularized estimation, conversion to and from point maps,
and the spectral loss (bijectivity, orthogonality, coupling) with gradients."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .errors import DimensionError, ParseError, SingularError
from .pointmap import PointMap, nearest
from .spectral import EigenBasis

FMAP_MAGIC = b"FMAP1"
DEFAULT_GAMMA = 0.5
DEFAULT_LAMBDA_REG = 100.0
_RCOND = 1e-14


@dataclass(frozen=True, eq=False)
class FunctionalMap:
    """``c`` has shape (k_y, k_x) and maps coefficients on X to coefficients on Y."""

    c: np.ndarray

    @property
    def k_y(self) -> int:
        return self.c.shape[0]

    @property
    def k_x(self) -> int:
        return self.c.shape[1]


def resolvent_mask(lambda_x: np.ndarray, lambda_y: np.ndarray, gamma: float = DEFAULT_GAMMA) -> np.ndarray:
    """(k_y, k_x) resolvent penalty; zero wherever the two eigenvalues coincide."""
    lx = np.asarray(lambda_x, dtype=np.float64) ** gamma
    ly = np.asarray(lambda_y, dtype=np.float64) ** gamma
    re_x, im_x = lx / (lx**2 + 1.0), 1.0 / (lx**2 + 1.0)
    re_y, im_y = ly / (ly**2 + 1.0), 1.0 / (ly**2 + 1.0)
    return (re_y[:, None] - re_x[None, :]) ** 2 + (im_y[:, None] - im_x[None, :]) ** 2


def _row_systems(a: np.ndarray, mask: np.ndarray, lambda_reg: float) -> np.ndarray:
    aat = a @ a.T
    H = np.broadcast_to(aat, (mask.shape[0],) + aat.shape).copy()
    idx = np.arange(aat.shape[0])
    H[:, idx, idx] += lambda_reg * mask
    return H


def _solve_spd(H: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve each ``H[i] x_i = rhs[i]``; Cholesky first, symmetric-indefinite fallback."""
    out = np.empty_like(rhs)
    for i in range(H.shape[0]):
        h = H[i]
        scale = max(np.abs(np.diag(h)).max(), np.finfo(float).tiny)
        try:
            cf = np.linalg.cholesky(h)
            d = np.diag(cf) ** 2
            if d.min() <= _RCOND * scale:
                raise np.linalg.LinAlgError
            out[i] = sla.cho_solve((cf, True), rhs[i])
            continue
        except np.linalg.LinAlgError:
            pass
        if np.abs(np.linalg.eigvalsh(h)).min() <= _RCOND * scale:
            raise SingularError(f"functional map row {i}: system is numerically singular")
        out[i] = sla.solve(h, rhs[i], assume_a="sym")
    return out


def solve_fmap(a: np.ndarray, b: np.ndarray, mask: np.ndarray, lambda_reg: float = DEFAULT_LAMBDA_REG) -> FunctionalMap:
    """Exact minimizer of ``||C a - b||_F^2 + lambda_reg * sum(C_ij^2 M_ij)``.

    ``a`` is (k_x, d) and ``b`` is (k_y, d) spectral descriptors; each row of C
    solves its own normal equations.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"descriptor dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    if mask.shape != (b.shape[0], a.shape[0]):
        raise DimensionError(f"mask shape {mask.shape} != ({b.shape[0]}, {a.shape[0]})")
    if lambda_reg < 0:
        raise ValueError("lambda_reg must be non-negative")
    H = _row_systems(a, mask, lambda_reg)
    rhs = b @ a.T  # row i is (a b_i)^T
    return FunctionalMap(_solve_spd(H, rhs))


def solve_fmap_vjp(a, b, mask, lambda_reg, c: np.ndarray, grad_c: np.ndarray):
    """Gradients of a scalar w.r.t. ``a`` and ``b`` given its gradient w.r.t. ``C``.

    Implicit differentiation of the per-row normal equations
    ``H_i c_i = a b_i``: with adjoints ``v_i = H_i^{-1} g_i``,
    ``dA = V^T B - (V^T C + C^T V) A`` and ``dB = V A``.
    """
    H = _row_systems(a, mask, lambda_reg)
    V = _solve_spd(H, grad_c)
    grad_a = V.T @ b - (V.T @ c + c.T @ V) @ a
    grad_b = V @ a
    return grad_a, grad_b


def fmap_to_pointmap(fmap: FunctionalMap, basis_x: EigenBasis, basis_y: EigenBasis) -> PointMap:
    """Hard map Y -> X by nearest neighbours between ``Phi_Y C`` and ``Phi_X``."""
    if fmap.k_y > basis_y.k or fmap.k_x > basis_x.k:
        raise DimensionError(f"fmap {fmap.c.shape} exceeds bases ({basis_y.k}, {basis_x.k})")
    emb_y = basis_y.phi[:, : fmap.k_y] @ fmap.c
    return PointMap.from_indices(nearest(emb_y, basis_x.phi[:, : fmap.k_x]), basis_x.n)


def pointmap_to_fmap(pi_yx: PointMap, basis_x: EigenBasis, basis_y: EigenBasis) -> FunctionalMap:
    """``C_XY = Phi_Y^dagger Pi_YX Phi_X``."""
    if pi_yx.n_src != basis_y.n or pi_yx.n_dst != basis_x.n:
        raise DimensionError(f"map {pi_yx.n_src}->{pi_yx.n_dst} does not match bases {basis_y.n}->{basis_x.n}")
    return FunctionalMap(basis_y.pinv() @ pi_yx.apply(basis_x.phi))


@dataclass(frozen=True)
class SpectralWeights:
    bij: float = 1.0
    orth: float = 1.0
    struct: float = 1.0
    couple: float = 1.0


@dataclass
class SpectralLoss:
    value: float
    terms: dict
    grad_c_xy: np.ndarray
    grad_c_yx: np.ndarray
    grad_pi_xy: np.ndarray | None
    grad_pi_yx: np.ndarray | None


def spectral_loss(c_xy, c_yx, pi_xy: PointMap, pi_yx: PointMap, basis_x: EigenBasis, basis_y: EigenBasis,
                  weights: SpectralWeights = SpectralWeights(), need_pi_grad: bool = True) -> SpectralLoss:
    """Structural (bijectivity + orthogonality) plus bidirectional coupling loss.

    Returns the value, per-term breakdown, and gradients w.r.t. both
    functional maps and (for soft maps) both point maps.
    """
    cxy = c_xy.c if isinstance(c_xy, FunctionalMap) else np.asarray(c_xy)
    cyx = c_yx.c if isinstance(c_yx, FunctionalMap) else np.asarray(c_yx)
    ky, kx = cxy.shape
    if cyx.shape != (kx, ky):
        raise DimensionError(f"C_YX shape {cyx.shape} != ({kx}, {ky})")
    if basis_x.k < kx or basis_y.k < ky:
        raise DimensionError("functional maps larger than the bases")
    if pi_xy.n_src != basis_x.n or pi_xy.n_dst != basis_y.n or pi_yx.n_src != basis_y.n or pi_yx.n_dst != basis_x.n:
        raise DimensionError("point map dimensions do not match the bases")
    phx, phy = basis_x.phi[:, :kx], basis_y.phi[:, :ky]
    mphx, mphy = basis_x.mass[:, None] * phx, basis_y.mass[:, None] * phy

    b1 = cxy @ cyx - np.eye(ky)
    b2 = cyx @ cxy - np.eye(kx)
    o1 = cxy.T @ cxy - np.eye(kx)
    o2 = cyx.T @ cyx - np.eye(ky)
    d_xy = cxy - mphy.T @ pi_yx.apply(phx)
    d_yx = cyx - mphx.T @ pi_xy.apply(phy)

    l_bij = np.sum(b1**2) + np.sum(b2**2)
    l_orth = np.sum(o1**2) + np.sum(o2**2)
    l_couple = np.sum(d_xy**2) + np.sum(d_yx**2)
    w = weights
    value = w.struct * (w.bij * l_bij + w.orth * l_orth) + w.couple * l_couple

    sb, so, sc = 2 * w.struct * w.bij, 4 * w.struct * w.orth, 2 * w.couple
    g_xy = sb * (b1 @ cyx.T + cyx.T @ b2) + so * cxy @ o1 + sc * d_xy
    g_yx = sb * (cxy.T @ b1 + b2 @ cxy.T) + so * cyx @ o2 + sc * d_yx

    gp_xy = gp_yx = None
    if need_pi_grad:
        if pi_yx.kind == "soft":
            gp_yx = -sc * (mphy @ d_xy) @ phx.T
        if pi_xy.kind == "soft":
            gp_xy = -sc * (mphx @ d_yx) @ phy.T
    terms = {"bij": float(l_bij), "orth": float(l_orth), "couple": float(l_couple)}
    return SpectralLoss(float(value), terms, g_xy, g_yx, gp_xy, gp_yx)


def save_fmap(path, fmap: FunctionalMap) -> None:
    """b'FMAP1', k_y and k_x as <u8, then C row-major as <f8."""
    with open(path, "wb") as fh:
        fh.write(FMAP_MAGIC)
        fh.write(struct.pack("<QQ", fmap.k_y, fmap.k_x))
        fh.write(np.ascontiguousarray(fmap.c, dtype="<f8").tobytes())


def load_fmap(path) -> FunctionalMap:
    data = Path(path).read_bytes()
    if data[:5] != FMAP_MAGIC:
        raise ParseError(f"{path}: not an FMAP1 file")
    ky, kx = struct.unpack("<QQ", data[5:21])
    body = np.frombuffer(data[21:], dtype="<f8")
    if body.size != ky * kx:
        raise ParseError(f"{path}: payload size does not match header")
    return FunctionalMap(body.reshape(ky, kx).astype(np.float64))
