"""Evaluation metrics: geodesic error, PCK/AUC, conformal distortion."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import dijkstra

from .errors import DegenerateError, DimensionError, DisconnectedError
from .mesh import Mesh
from .pointmap import PointMap


@dataclass(frozen=True, eq=False)
class GeodesicTable:
    """Graph geodesics from ``sources`` (rows) to every vertex, divided by
    the square root of the total surface area."""

    dist: np.ndarray
    sources: np.ndarray

    def __post_init__(self):
        lookup = np.full(self.dist.shape[1], -1, dtype=np.int64)
        lookup[self.sources] = np.arange(len(self.sources))
        object.__setattr__(self, "_row", lookup)

    def between(self, a, b) -> np.ndarray:
        """Distances for paired index arrays; either side may be a source."""
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        ra, rb = self._row[a], self._row[b]
        out = np.where(ra >= 0, self.dist[np.maximum(ra, 0), b], self.dist[np.maximum(rb, 0), a])
        if np.any((ra < 0) & (rb < 0)):
            raise DimensionError("geodesic table does not cover the requested vertex pairs")
        return out


def geodesics(mesh: Mesh, sources=None) -> GeodesicTable:
    """Dijkstra on the edge graph with Euclidean edge lengths.

    Graph paths overestimate true surface geodesics; the bias is consistent
    across methods evaluated on the same mesh.
    """
    n = mesh.n_vertices
    sources = np.arange(n) if sources is None else np.atleast_1d(np.asarray(sources, dtype=np.int64))
    if sources.size == 0:
        raise DimensionError("geodesics need at least one source")
    e = mesh.edges()
    lengths = np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)
    G = sparse.coo_matrix((lengths, (e[:, 0], e[:, 1])), shape=(n, n)).tocsr()
    dist = dijkstra(G, directed=False, indices=sources)
    if n > 1:
        others = np.ones_like(dist, dtype=bool)
        others[np.arange(len(sources)), sources] = False
        if not np.any(np.isfinite(dist[others])):
            raise DisconnectedError("no target vertex is reachable from the sources")
    dist = dist / np.sqrt(mesh.area())
    dist = np.atleast_2d(dist)
    return GeodesicTable(dist, sources)


def geodesic_error(pred: PointMap, gt: PointMap, geo: GeodesicTable):
    """Per-vertex normalized geodesic distance between predicted and true targets."""
    p, g = pred.indices(), gt.indices()
    if p.shape != g.shape:
        raise DimensionError(f"prediction covers {len(p)} vertices, ground truth {len(g)}")
    errors = geo.between(p, g)
    return float(errors.mean()), errors


def pck_auc(errors, max_threshold: float = 0.1, steps: int = 101):
    """PCK curve on ``steps`` uniform thresholds in [0, max_threshold] and its
    normalized trapezoidal area."""
    if not max_threshold > 0:
        raise ValueError("max_threshold must be positive")
    if steps < 2:
        raise ValueError("steps must be >= 2")
    errors = np.sort(np.asarray(errors, dtype=np.float64).ravel())
    thresholds = np.linspace(0.0, max_threshold, steps)
    frac = np.searchsorted(errors, thresholds, side="right") / max(len(errors), 1)
    auc = float(np.sum((frac[:-1] + frac[1:]) / 2.0) / (steps - 1))
    return list(zip(thresholds.tolist(), frac.tolist())), auc


def _planar_frames(p0, p1, p2):
    e1, e2 = p1 - p0, p2 - p0
    l1 = np.linalg.norm(e1, axis=1)
    nrm = np.cross(e1, e2)
    area2 = np.linalg.norm(nrm, axis=1)
    # 2x2 coordinates of (e1, e2) in the triangle's own orthonormal frame
    x2 = np.einsum("ij,ij->i", e2, e1) / np.where(l1 > 0, l1, 1.0)
    y2 = area2 / np.where(l1 > 0, l1, 1.0)
    P = np.zeros((len(p0), 2, 2))
    P[:, 0, 0] = l1
    P[:, 0, 1] = x2
    P[:, 1, 1] = y2
    return P, area2


def conformal_distortion(mesh_src: Mesh, mapped_positions: np.ndarray) -> np.ndarray:
    """Per-triangle ``s1/s2 + s2/s1 - 2`` of the linear map source -> image.

    Zero for any similarity; infinite for triangles collapsed in the image.
    """
    q = np.asarray(mapped_positions, dtype=np.float64)
    if q.shape != mesh_src.vertices.shape:
        raise DimensionError(f"mapped positions {q.shape} != {mesh_src.vertices.shape}")
    f = mesh_src.faces
    P, a_src = _planar_frames(*(mesh_src.vertices[f[:, c]] for c in range(3)))
    if np.any(a_src <= 0):
        raise DegenerateError("zero-area source triangle")
    Q, _ = _planar_frames(*(q[f[:, c]] for c in range(3)))
    J = Q @ np.linalg.inv(P)
    fro2 = np.einsum("tij,tij->t", J, J)
    det = np.abs(J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0])
    with np.errstate(divide="ignore"):
        out = np.where(det > 0, fro2 / np.where(det > 0, det, 1.0) - 2.0, np.inf)
    return np.maximum(out, 0.0)


def cumulative_curve(values, max_value: float, steps: int = 101):
    values = np.sort(np.asarray(values, dtype=np.float64).ravel())
    xs = np.linspace(0.0, max_value, steps)
    frac = np.searchsorted(values, xs, side="right") / max(len(values), 1)
    return list(zip(xs.tolist(), frac.tolist()))


@dataclass
class EvalReport:
    mean_geo_err: float
    pck: list
    auc: float
    conformal_curve: list = field(default_factory=list)
    mean_conformal: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["geo_err_x100"] = round(100.0 * self.mean_geo_err, 6)
        return d


def evaluate(mesh_src: Mesh, mesh_dst: Mesh, pred: PointMap, gt: PointMap, max_threshold: float = 0.1,
             steps: int = 101, conformal_max: float = 1.0) -> tuple:
    """Full report for a predicted map; returns ``(report, per_vertex_errors)``."""
    geo = geodesics(mesh_dst, np.unique(gt.indices()))
    mean, errors = geodesic_error(pred, gt, geo)
    pck, auc = pck_auc(errors, max_threshold, steps)
    dist = conformal_distortion(mesh_src, mesh_dst.vertices[pred.indices()])
    finite = dist[np.isfinite(dist)]
    report = EvalReport(mean, pck, auc, cumulative_curve(dist, conformal_max, steps),
                        float(finite.mean()) if finite.size else None)
    return report, errors
