"""Test-time adaptation: per-frame shape-dominant displacement fields fitted
under Chamfer + Dirichlet objectives, the two-parameter blend, and the final
nearest-neighbour correspondence."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConvergenceError, DimensionError, EmptyInputError, ParseError
from .interpolation import Trajectory
from .mesh import Mesh, build_operators
from .optim import VectorAdam
from .pointmap import PointMap, nearest

FIELD_MAGIC = b"SFLD1"


def _points(s) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or len(s) == 0:
        raise EmptyInputError("Chamfer distance needs two non-empty point sets")
    return s


def chamfer(s1, s2) -> float:
    """Symmetric mean of squared nearest-neighbour distances."""
    return chamfer_grad(s1, s2, grad=False)[0]


def chamfer_grad(s1, s2, grad: bool = True, tree2: cKDTree | None = None):
    """``(value, d value / d s1)``; nearest assignments are held fixed."""
    s1, s2 = _points(s1), _points(s2)
    tree2 = tree2 if tree2 is not None else cKDTree(s2)
    _, j12 = tree2.query(s1)
    _, j21 = cKDTree(s1).query(s2)
    d12 = s1 - s2[j12]
    d21 = s1[j21] - s2
    value = float(np.sum(d12**2) / len(s1) + np.sum(d21**2) / len(s2))
    if not grad:
        return value, None
    g = 2.0 * d12 / len(s1)
    np.add.at(g, j21, 2.0 * d21 / len(s2))
    return value, g


def _laplacian(mesh_or_L):
    if isinstance(mesh_or_L, Mesh):
        return build_operators(mesh_or_L).laplacian
    return mesh_or_L


def dirichlet(mesh, field: np.ndarray) -> float:
    """``trace(field^T L field)`` with the cotangent Laplacian."""
    L = _laplacian(mesh)
    field = np.asarray(field, dtype=np.float64)
    if field.shape[0] != L.shape[0]:
        raise DimensionError(f"field has {field.shape[0]} rows, mesh has {L.shape[0]} vertices")
    return float(np.sum(field * (L @ field)))


def dirichlet_grad(mesh, field: np.ndarray):
    L = _laplacian(mesh)
    lf = L @ field
    return float(np.sum(field * lf)), 2.0 * lf


@dataclass(frozen=True, eq=False)
class ShapeField:
    """Per-frame displacement fields, shape (T+1, n, 3)."""

    deltas: np.ndarray
    traces: list = field(default_factory=list, repr=False)
    initial: np.ndarray | None = None  # objective at the zero field, per frame
    best: np.ndarray | None = None

    @property
    def T(self) -> int:
        return self.deltas.shape[0] - 1

    @classmethod
    def zeros(cls, T: int, n: int) -> "ShapeField":
        return cls(np.zeros((T + 1, n, 3)))


def adapt_frame(source: np.ndarray, target: np.ndarray, L, lambda_d: float = 0.1, iters: int = 2000,
                step_size: float = 1e-3):
    """Fit one displacement field; returns ``(delta, trace)`` at the best iterate."""
    delta = np.zeros_like(source)
    tree = cKDTree(target)
    opt = VectorAdam([delta], lr=step_size)
    trace = []
    best = (np.inf, delta.copy())
    for it in range(iters + 1):
        cd, g = chamfer_grad(source + delta, target, tree2=tree)
        if lambda_d:
            dv, dg = dirichlet_grad(L, delta)
            value = cd + lambda_d * dv
            g = g + lambda_d * dg
        else:
            value = cd
        if not np.isfinite(value):
            raise ConvergenceError(f"adaptation objective became non-finite at iteration {it}")
        trace.append(value)
        if value < best[0]:
            best = (value, delta.copy())
        if value == 0.0 or it == iters:
            break
        opt.step([g])
    return best[1], trace


def adapt(traj_x: Trajectory, traj_y: Trajectory, mesh_x: Mesh, lambda_d: float = 0.1, iters: int = 2000,
          step_size: float = 1e-3) -> ShapeField:
    """Independently fit ``Delta_s(k)`` for every frame k against ``Y_{T-k}``.

    Minimizes ``Chamfer(X_k + Delta, Y_{T-k}) + lambda_d * Dirichlet(Delta)``
    with VectorAdam from a zero initialization.
    """
    if traj_x.T != traj_y.T:
        raise DimensionError(f"trajectories differ in T: {traj_x.T} vs {traj_y.T}")
    if lambda_d < 0:
        raise ValueError("lambda_d must be non-negative")
    if mesh_x.n_vertices != traj_x.frames.shape[1]:
        raise DimensionError("mesh_x does not match traj_x")
    L = build_operators(mesh_x).laplacian
    T = traj_x.T
    deltas = np.zeros_like(traj_x.frames)
    traces = []
    for k in range(T + 1):
        deltas[k], tr = adapt_frame(traj_x.frames[k], traj_y.frames[T - k], L, lambda_d, iters, step_size)
        traces.append(tr)
    initial = np.array([tr[0] for tr in traces])
    best = np.array([min(tr) for tr in traces])
    return ShapeField(deltas, traces, initial, best)


def _hard(pi: PointMap) -> np.ndarray:
    return pi.indices()


def blend(traj_x: Trajectory, traj_y: Trajectory, field: ShapeField, pi_xy: PointMap, t_index: int,
          t_s: float) -> np.ndarray:
    """``(1 - t_s) (X_k + Delta_s(k)) + t_s Y_{T-k}[pi_xy]`` on X's vertices."""
    if not 0.0 <= t_s <= 1.0:
        raise ValueError("t_s must lie in [0, 1]")
    T = traj_x.T
    if traj_y.T != T or field.T != T:
        raise DimensionError("trajectories and field must share T")
    if not 0 <= t_index <= T:
        raise DimensionError(f"t_index must lie in [0, {T}]")
    if pi_xy.n_src != traj_x.frames.shape[1] or pi_xy.n_dst != traj_y.frames.shape[1]:
        raise DimensionError("pi_xy does not match the trajectories")
    adapted = traj_x.frames[t_index] + field.deltas[t_index]
    pulled = traj_y.frames[T - t_index][_hard(pi_xy)]
    return (1.0 - t_s) * adapted + t_s * pulled


def final_pointmap(mesh_y: Mesh, positions: np.ndarray) -> PointMap:
    """Nearest vertex of Y for every row of ``positions`` (ties: smallest index)."""
    positions = np.asarray(positions, dtype=np.float64)
    return PointMap.from_indices(nearest(positions, mesh_y.vertices), mesh_y.n_vertices)


def final_source(traj_x, traj_y, field: ShapeField, pi_xy: PointMap, mode: str = "adapted") -> np.ndarray:
    """Positions fed to the final nearest-neighbour search.

    ``"adapted"`` uses ``X(1) + Delta_s(1)``; ``"blend"`` evaluates the
    literal two-parameter blend at ``t = 1, t_s = 1``.
    """
    if mode == "adapted":
        return blend(traj_x, traj_y, field, pi_xy, traj_x.T, 0.0)
    if mode == "blend":
        return blend(traj_x, traj_y, field, pi_xy, traj_x.T, 1.0)
    raise ValueError(f"unknown final-map source {mode!r}")


def save_field(path, field: ShapeField) -> None:
    """b'SFLD1', T+1 and n as <u8, then deltas row-major as <f8."""
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC)
        fh.write(struct.pack("<QQ", field.deltas.shape[0], field.deltas.shape[1]))
        fh.write(np.ascontiguousarray(field.deltas, dtype="<f8").tobytes())


def load_field(path) -> ShapeField:
    data = Path(path).read_bytes()
    if data[:5] != FIELD_MAGIC:
        raise ParseError(f"{path}: not an SFLD1 file")
    t1, n = struct.unpack("<QQ", data[5:21])
    body = np.frombuffer(data[21:], dtype="<f8")
    if body.size != t1 * n * 3:
        raise ParseError(f"{path}: payload size does not match header")
    return ShapeField(body.reshape(t1, n, 3).astype(np.float64))
