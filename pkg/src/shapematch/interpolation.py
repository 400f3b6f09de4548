"""Interpolation trajectories between matched shapes: ARAP energy, the spatial
loss suite (align, ARAP, symmetry, variance) and direct trajectory descent."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConvergenceError, DimensionError
from .mesh import Mesh, write_obj
from .optim import Adam
from .pointmap import PointMap


@dataclass(frozen=True)
class SpatialWeights:
    align: float = 5.0
    arap: float = 100.0
    sym: float = 1.0
    var: float = 1.0

    def __post_init__(self):
        if min(self.align, self.arap, self.sym, self.var) < 0:
            raise ValueError("spatial weights must be non-negative")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """``frames[k]`` is the shape at time k / T; ``frames[0]`` is the source."""

    frames: np.ndarray
    source: Mesh

    def __post_init__(self):
        fr = np.asarray(self.frames, dtype=np.float64)
        if fr.ndim != 3 or fr.shape[1:] != self.source.vertices.shape:
            raise DimensionError(f"frames {fr.shape} do not match source {self.source.vertices.shape}")
        if not np.array_equal(fr[0], self.source.vertices):
            raise ValueError("frame 0 must equal the source vertices")
        if not np.all(np.isfinite(fr)):
            raise ValueError("non-finite trajectory positions")
        object.__setattr__(self, "frames", fr)

    @property
    def T(self) -> int:
        return self.frames.shape[0] - 1

    @classmethod
    def linear(cls, source: Mesh, target_positions: np.ndarray, T: int) -> "Trajectory":
        """Straight-line path from the source to ``target_positions``."""
        x = source.vertices
        t = np.arange(T + 1, dtype=np.float64)[:, None, None] / T
        frames = x[None] + t * (np.asarray(target_positions) - x)[None]
        frames[0] = x
        return cls(frames, source)

    def displacement(self) -> float:
        """Total per-vertex distance travelled from the source across all frames."""
        return float(np.linalg.norm(self.frames - self.frames[0][None], axis=2).sum())


# ---------------------------------------------------------------------------
# ARAP


def arap_weights(mesh: Mesh, kind: str = "uniform") -> np.ndarray | None:
    """Per ring-pair weights; ``None`` means uniform."""
    if kind == "uniform":
        return None
    if kind == "cotan":
        from .mesh import build_operators

        L = build_operators(mesh).laplacian
        i, j = mesh.ring_pairs()
        return -np.asarray(L[i, j]).ravel()
    raise ValueError(f"unknown ARAP weighting {kind!r}")


def _arap(pairs, n, p, q, weights=None, grad=True):
    i, j = pairs
    ep = p[i] - p[j]
    eq = q[i] - q[j]
    w = np.ones(len(i)) if weights is None else weights
    outer = (w[:, None, None] * ep[:, :, None] * eq[:, None, :]).reshape(-1, 9)
    S = np.stack([np.bincount(i, outer[:, c], minlength=n) for c in range(9)], axis=1).reshape(n, 3, 3)
    U, _, Vt = np.linalg.svd(S)
    V = np.swapaxes(Vt, 1, 2)
    Ut = np.swapaxes(U, 1, 2)
    d = np.sign(np.linalg.det(V @ Ut))
    d[d == 0] = 1.0
    V[:, :, 2] *= d[:, None]
    R = V @ Ut
    r = np.einsum("eab,eb->ea", R[i], ep) - eq
    energy = float(np.sum(w * np.einsum("ea,ea->e", r, r)))
    if not grad:
        return energy, R, None, None
    wr = 2.0 * w[:, None] * r
    gq = np.zeros_like(q)
    gp = np.zeros_like(p)
    rt = np.einsum("eba,eb->ea", R[i], wr)  # R_i^T (2 w r)
    for c in range(3):
        gq[:, c] = -np.bincount(i, wr[:, c], minlength=n) + np.bincount(j, wr[:, c], minlength=n)
        gp[:, c] = np.bincount(i, rt[:, c], minlength=n) - np.bincount(j, rt[:, c], minlength=n)
    return energy, R, gp, gq


def arap_energy(mesh: Mesh, p: np.ndarray, q: np.ndarray, weights: np.ndarray | None = None):
    """As-rigid-as-possible energy of deforming positions ``p`` into ``q``.

    Returns ``(energy, rotations)`` where ``rotations[i]`` is the proper
    rotation best aligning the one-ring edges of vertex i.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != (mesh.n_vertices, 3) or q.shape != p.shape:
        raise DimensionError(f"positions must be ({mesh.n_vertices}, 3)")
    e, R, _, _ = _arap(mesh.ring_pairs(), mesh.n_vertices, p, q, weights, grad=False)
    return e, R


def arap_energy_grad(mesh: Mesh, p: np.ndarray, q: np.ndarray, weights: np.ndarray | None = None):
    """``(energy, grad_p, grad_q)`` with the rotations held at their optimum."""
    e, _, gp, gq = _arap(mesh.ring_pairs(), mesh.n_vertices, np.asarray(p, float), np.asarray(q, float), weights)
    return e, gp, gq


# ---------------------------------------------------------------------------
# spatial loss


@dataclass
class SpatialLoss:
    value: float
    terms: dict
    grad_x: np.ndarray  # (T+1, n_x, 3); row 0 is zero (pinned)
    grad_y: np.ndarray


def _frames(t):
    return t.frames if isinstance(t, Trajectory) else np.asarray(t, dtype=np.float64)


def spatial_loss(traj_x, traj_y, pi_xy: PointMap, pi_yx: PointMap, w: SpatialWeights = SpatialWeights(),
                 mesh_x: Mesh | None = None, mesh_y: Mesh | None = None,
                 arap_w: tuple = (None, None)) -> SpatialLoss:
    """Weighted sum of the alignment, ARAP, symmetry and variance terms.

    ``traj_x``/``traj_y`` are Trajectories (or raw (T+1, n, 3) frame arrays,
    in which case the meshes must be passed). Gradients cover every frame;
    frame 0 is pinned so its gradient is reported as zero.
    """
    X, Y = _frames(traj_x), _frames(traj_y)
    mesh_x = mesh_x or traj_x.source
    mesh_y = mesh_y or traj_y.source
    if X.shape[0] != Y.shape[0]:
        raise DimensionError(f"trajectories differ in T: {X.shape[0] - 1} vs {Y.shape[0] - 1}")
    T = X.shape[0] - 1
    if T < 2:
        raise DimensionError("trajectories need T >= 2")
    nx, ny = X.shape[1], Y.shape[1]
    if (pi_xy.n_src, pi_xy.n_dst, pi_yx.n_src, pi_yx.n_dst) != (nx, ny, ny, nx):
        raise DimensionError("point maps do not match trajectory vertex counts")
    gx = np.zeros_like(X)
    gy = np.zeros_like(Y)
    terms = {}

    # alignment of the end frames with the mapped sources
    dx = X[T] - pi_xy.apply(Y[0])
    dy = Y[T] - pi_yx.apply(X[0])
    terms["align"] = float(np.sum(dx**2) + np.sum(dy**2))
    gx[T] += 2 * w.align * dx
    gy[T] += 2 * w.align * dy

    # ARAP between consecutive frames of both sequences
    l_arap = 0.0
    for F, G, mesh, wts in ((X, gx, mesh_x, arap_w[0]), (Y, gy, mesh_y, arap_w[1])):
        pairs = mesh.ring_pairs()
        for k in range(T):
            e, _, gp, gq = _arap(pairs, len(F[k]), F[k], F[k + 1], wts)
            l_arap += e
            G[k] += w.arap * gp
            G[k + 1] += w.arap * gq
    terms["arap"] = l_arap

    # symmetry and temporal variance, both directions
    l_sym = 0.0
    l_var = 0.0
    for A, B, GA, GB, pi in ((X, Y, gx, gy, pi_xy), (Y, X, gy, gx, pi_yx)):
        D = np.stack([A[k] - pi.apply(B[T - k]) for k in range(1, T + 1)])  # k = 1..T
        sym_d = D[: T - 1]
        l_sym += float(np.sum(sym_d**2))
        a = np.linalg.norm(D, axis=2)  # (T, n)
        dev = a - a.mean(axis=0, keepdims=True)
        l_var += float(np.sum(dev**2) / (T - 1))
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(a[..., None] > 0, D / np.where(a > 0, a, 1.0)[..., None], 0.0)
        gD = w.var * (2.0 / (T - 1)) * dev[..., None] * unit
        gD[: T - 1] += 2 * w.sym * sym_d
        for idx, k in enumerate(range(1, T + 1)):
            GA[k] += gD[idx]
            GB[T - k] -= pi.apply_t(gD[idx])
    terms["sym"] = l_sym
    terms["var"] = l_var

    gx[0] = 0.0
    gy[0] = 0.0
    value = w.align * terms["align"] + w.arap * l_arap + w.sym * l_sym + w.var * l_var
    return SpatialLoss(float(value), terms, gx, gy)


# ---------------------------------------------------------------------------
# optimization


@dataclass
class InterpolationResult:
    traj_x: Trajectory
    traj_y: Trajectory
    trace: list
    terms: dict
    initial_terms: dict


def optimize_trajectory(mesh_x: Mesh, mesh_y: Mesh, pi_xy: PointMap, pi_yx: PointMap, T: int = 6,
                        w: SpatialWeights = SpatialWeights(), iters: int = 500, step_size: float = 1e-3,
                        arap_weighting: str = "uniform", callback=None, tol: float = 1e-20) -> InterpolationResult:
    """Adam descent on frames 1..T of both trajectories under the spatial loss.

    Both paths start on the straight line to the mapped target; frame 0 stays
    pinned to the source. Stops early once the loss is at most ``tol`` (Adam
    would otherwise take full-size steps on round-off gradients). Returns the
    best iterate.
    """
    if T < 2:
        raise DimensionError("T must be >= 2")
    if iters < 0:
        raise ValueError("iters must be >= 0")
    X = Trajectory.linear(mesh_x, pi_xy.apply(mesh_y.vertices), T).frames.copy()
    Y = Trajectory.linear(mesh_y, pi_yx.apply(mesh_x.vertices), T).frames.copy()
    wts = (arap_weights(mesh_x, arap_weighting), arap_weights(mesh_y, arap_weighting))
    free_x, free_y = X[1:], Y[1:]  # views into the frame arrays
    opt = Adam([free_x, free_y], lr=step_size)
    trace = []
    best = None
    first_terms = None
    for it in range(iters + 1):
        loss = spatial_loss(X, Y, pi_xy, pi_yx, w, mesh_x, mesh_y, wts)
        if not np.isfinite(loss.value):
            raise ConvergenceError(f"spatial loss became non-finite at iteration {it}")
        if first_terms is None:
            first_terms = loss.terms
        trace.append(loss.value)
        if best is None or loss.value < best[0]:
            best = (loss.value, X.copy(), Y.copy(), loss.terms)
        if callback is not None:
            callback(it, loss)
        if loss.value <= tol:
            break
        if it < iters:
            opt.step([loss.grad_x[1:], loss.grad_y[1:]])
    _, bx, by, terms = best
    bx[0] = mesh_x.vertices
    by[0] = mesh_y.vertices
    return InterpolationResult(Trajectory(bx, mesh_x), Trajectory(by, mesh_y), trace, terms, first_terms)


def export_trajectory(outdir, traj: Trajectory, manifest: dict | None = None,
                      transform: tuple | None = None) -> list:
    """Write ``frame_0000.obj`` ... and ``manifest.json`` into ``outdir``.

    ``transform = (centroid, scale)`` maps normalized positions back to the
    input units (``v / scale + centroid``).
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, frame in enumerate(traj.frames):
        pos = frame if transform is None else frame / transform[1] + transform[0]
        path = outdir / f"frame_{k:04d}.obj"
        write_obj(path, pos, traj.source.faces)
        paths.append(path)
    info = {"T": traj.T, "n_vertices": traj.source.n_vertices, "frames": [p.name for p in paths]}
    if manifest:
        info.update(manifest)
    (outdir / "manifest.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    return paths


def weights_dict(w: SpatialWeights) -> dict:
    return asdict(w)
