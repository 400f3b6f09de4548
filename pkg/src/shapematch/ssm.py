"""Point distribution models from corresponded shapes, with generality and
specificity scores."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateError, DimensionError, ParseError
from .tta import chamfer


@dataclass(frozen=True, eq=False)
class SSModel:
    mean: np.ndarray  # (n, 3)
    components: np.ndarray  # (q, 3n), orthonormal rows
    variances: np.ndarray  # (q,), descending
    aligned: np.ndarray  # (s, n, 3) training shapes in the model frame

    @property
    def n(self) -> int:
        return self.mean.shape[0]

    @property
    def q(self) -> int:
        return self.components.shape[0]


def rigid_align(shape: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Rotate and translate ``shape`` onto ``ref`` (least squares, no scaling)."""
    cs, cr = shape.mean(axis=0), ref.mean(axis=0)
    H = (shape - cs).T @ (ref - cr)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return (shape - cs) @ R.T + cr


def procrustes(shapes: np.ndarray, max_iter: int = 100, tol: float = 1e-14):
    """Generalized Procrustes alignment (rigid). Returns ``(aligned, mean)``.

    The mean is kept centered and oriented like the first shape.
    """
    X = np.asarray(shapes, dtype=np.float64)
    X = X - X.mean(axis=1, keepdims=True)
    mean = X[0].copy()
    for _ in range(max_iter):
        X = np.stack([rigid_align(x, mean) for x in X])
        new = rigid_align(X.mean(axis=0), mean)
        change = np.linalg.norm(new - mean) / max(np.linalg.norm(mean), 1e-300)
        mean = new
        if change < tol:
            break
    X = np.stack([rigid_align(x, mean) for x in X])
    return X, X.mean(axis=0)


def build_ssm(shapes, q: int) -> SSModel:
    """Procrustes-align the shapes, then PCA of the flattened residuals.

    Variances are the eigenvalues of the population covariance (divisor =
    number of shapes). Modes beyond the numerical rank of the residuals are
    dropped, so the returned model may have fewer than ``q`` modes.
    """
    try:
        X = np.asarray(shapes, dtype=np.float64)
    except ValueError as exc:
        raise DimensionError("shapes must be a list of (n, 3) arrays with equal n") from exc
    if X.ndim != 3 or X.shape[2] != 3:
        raise DimensionError("shapes must be a list of (n, 3) arrays with equal n")
    s, n = X.shape[:2]
    if s < 2:
        raise DimensionError("need at least two shapes")
    if not 1 <= q <= s - 1:
        raise DimensionError(f"mode count q={q} must lie in [1, {s - 1}]")
    if not np.all(np.isfinite(X)):
        raise DegenerateError("non-finite shape coordinates")
    aligned, mean = procrustes(X)
    D = (aligned - mean[None]).reshape(s, 3 * n)
    _, S, Vt = np.linalg.svd(D, full_matrices=False)
    # residuals at round-off level of the coordinates carry no shape variation
    tol = max(D.shape) * np.finfo(float).eps * max(S[0], np.linalg.norm(mean))
    rank = int(np.sum(S > tol))
    q = min(q, rank)
    comps = Vt[:q]
    # deterministic orientation: largest-magnitude entry positive
    idx = np.argmax(np.abs(comps), axis=1)
    comps = comps * np.sign(comps[np.arange(q), idx])[:, None]
    var = S[:q] ** 2 / s
    return SSModel(mean, comps, var, aligned)


def sample_ssm(model: SSModel, coefficients) -> np.ndarray:
    """``mean + sum_j c_j sqrt(var_j) u_j`` with ``c`` in standard deviations."""
    c = np.asarray(coefficients, dtype=np.float64)
    if c.shape[0] > model.q:
        raise DimensionError(f"{c.shape[0]} coefficients for a {model.q}-mode model")
    if not np.all(np.isfinite(c)):
        raise ValueError("coefficients must be finite")
    k = c.shape[0]
    offset = (c * np.sqrt(model.variances[:k])) @ model.components[:k]
    return model.mean + offset.reshape(model.n, 3)


def reconstruct(model: SSModel, shape: np.ndarray, q: int | None = None):
    """Project a (rigidly aligned) shape onto the first ``q`` modes.

    Returns ``(reconstruction, aligned_shape)``.
    """
    q = model.q if q is None else q
    aligned = rigid_align(np.asarray(shape, dtype=np.float64), model.mean)
    b = model.components[:q] @ (aligned - model.mean).ravel()
    return model.mean + (b @ model.components[:q]).reshape(model.n, 3), aligned


def chamfer_length(a: np.ndarray, b: np.ndarray) -> float:
    """Square root of the Chamfer distance, in the shapes' length units."""
    return float(np.sqrt(max(chamfer(a, b), 0.0)))


def generality(shapes, q: int) -> float:
    """Mean leave-one-out reconstruction error (root Chamfer) with ``q`` modes."""
    X = np.asarray(shapes, dtype=np.float64)
    s = len(X)
    if s < 3:
        raise DimensionError("generality needs at least three shapes")
    if not 1 <= q <= s - 2:
        raise DimensionError(f"q={q} must lie in [1, {s - 2}] for leave-one-out")
    errs = []
    for i in range(s):
        model = build_ssm(np.delete(X, i, axis=0), q)
        rec, aligned = reconstruct(model, X[i], q)
        errs.append(chamfer_length(rec, aligned))
    return float(np.mean(errs))


def specificity(model: SSModel, q: int | None = None, trials: int = 1000, seed: int = 0,
                clip: float = 3.0) -> float:
    """Mean root Chamfer from random model samples to the nearest training shape.

    Coefficients are standard normal, truncated to +-``clip`` standard deviations.
    """
    q = model.q if q is None else q
    if not 0 <= q <= model.q:
        raise DimensionError(f"q={q} outside [0, {model.q}]")
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(trials):
        c = np.clip(rng.standard_normal(q), -clip, clip)
        shape = sample_ssm(model, c)
        total += min(chamfer_length(shape, t) for t in model.aligned)
    return total / trials


def save_ssm(path, model: SSModel) -> None:
    """One JSON header line, then mean, components, variances, aligned as <f8."""
    s = model.aligned.shape[0]
    header = {"format": "SSM1", "n": model.n, "q": model.q, "shapes": s,
              "order": ["mean", "components", "variances", "aligned"], "dtype": "<f8"}
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("ascii"))
        for arr in (model.mean, model.components, model.variances, model.aligned):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_ssm(path) -> SSModel:
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    try:
        header = json.loads(data[:nl])
    except ValueError as exc:
        raise ParseError(f"{path}: bad SSM header") from exc
    if header.get("format") != "SSM1":
        raise ParseError(f"{path}: not an SSM1 file")
    n, q, s = header["n"], header["q"], header["shapes"]
    body = np.frombuffer(data[nl + 1 :], dtype="<f8").astype(np.float64)
    sizes = [n * 3, q * 3 * n, q, s * n * 3]
    if body.size != sum(sizes):
        raise ParseError(f"{path}: payload size does not match header")
    parts = np.split(body, np.cumsum(sizes)[:-1])
    return SSModel(parts[0].reshape(n, 3), parts[1].reshape(q, 3 * n), parts[2], parts[3].reshape(s, n, 3))
