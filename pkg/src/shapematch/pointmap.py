"""Soft and hard vertex-to-vertex maps, plus exact nearest-neighbour search."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, ParseError


@dataclass(frozen=True, eq=False)
class PointMap:
    """Correspondence from ``n_src`` source vertices to ``n_dst`` targets.

    A soft map holds a row-stochastic (n_src, n_dst) matrix; a hard map holds
    an index array into the target. ``apply`` pulls target data back to the
    source (``Pi @ values``), ``apply_t`` pushes source data forward
    (``Pi.T @ values``).
    """

    n_dst: int
    soft: np.ndarray | None = None
    hard: np.ndarray | None = None

    def __post_init__(self):
        if (self.soft is None) == (self.hard is None):
            raise ValueError("exactly one of soft / hard must be given")
        if self.hard is not None:
            h = np.asarray(self.hard, dtype=np.int64)
            if h.ndim != 1 or (h.size and (h.min() < 0 or h.max() >= self.n_dst)):
                raise DimensionError(f"hard map indices must lie in [0, {self.n_dst})")
            object.__setattr__(self, "hard", h)
        else:
            s = np.asarray(self.soft, dtype=np.float64)
            if s.ndim != 2 or s.shape[1] != self.n_dst:
                raise DimensionError(f"soft map must be (n_src, {self.n_dst}), got {s.shape}")
            object.__setattr__(self, "soft", s)

    @classmethod
    def from_indices(cls, idx, n_dst: int) -> "PointMap":
        return cls(n_dst=n_dst, hard=np.asarray(idx, dtype=np.int64))

    @classmethod
    def from_matrix(cls, mat: np.ndarray) -> "PointMap":
        return cls(n_dst=mat.shape[1], soft=mat)

    @classmethod
    def identity(cls, n: int) -> "PointMap":
        return cls.from_indices(np.arange(n), n)

    @property
    def kind(self) -> str:
        return "soft" if self.soft is not None else "hard"

    @property
    def n_src(self) -> int:
        return len(self.hard) if self.hard is not None else self.soft.shape[0]

    def apply(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values)
        if values.shape[0] != self.n_dst:
            raise DimensionError(f"map target has {self.n_dst} vertices, values have {values.shape[0]} rows")
        if self.hard is not None:
            return values[self.hard]
        return self.soft @ values

    def apply_t(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values)
        if values.shape[0] != self.n_src:
            raise DimensionError(f"map source has {self.n_src} vertices, values have {values.shape[0]} rows")
        if self.hard is not None:
            out = np.zeros((self.n_dst,) + values.shape[1:])
            np.add.at(out, self.hard, values)
            return out
        return self.soft.T @ values

    def dense(self) -> np.ndarray:
        if self.soft is not None:
            return self.soft
        out = np.zeros((self.n_src, self.n_dst))
        out[np.arange(self.n_src), self.hard] = 1.0
        return out

    def indices(self) -> np.ndarray:
        """Hard indices; soft maps are hardened by row argmax."""
        if self.hard is not None:
            return self.hard
        return np.argmax(self.soft, axis=1)


def nearest(query: np.ndarray, ref: np.ndarray, chunk: int = 512) -> np.ndarray:
    """Index of the nearest ``ref`` row for every ``query`` row (Euclidean).

    Exhaustive search; ties resolve to the smallest reference index.
    """
    query = np.asarray(query, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if query.ndim == 1:
        query = query[:, None]
        ref = ref[:, None]
    if query.shape[1] != ref.shape[1]:
        raise DimensionError(f"dimension mismatch {query.shape[1]} vs {ref.shape[1]}")
    rn = np.einsum("ij,ij->i", ref, ref)
    out = np.empty(len(query), dtype=np.int64)
    for s in range(0, len(query), chunk):
        q = query[s : s + chunk]
        d = rn[None, :] - 2.0 * (q @ ref.T)
        out[s : s + chunk] = np.argmin(d, axis=1)
    return out


def save_hard_map(path, pmap: PointMap) -> None:
    """One 0-based target index per line."""
    idx = pmap.indices()
    Path(path).write_text("".join(f"{int(i)}\n" for i in idx))


def load_hard_map(path, n_dst: int | None = None) -> PointMap:
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"{path}: no such file")
    try:
        idx = np.array([int(t) for t in path.read_text().split()], dtype=np.int64)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if n_dst is None:
        n_dst = int(idx.max()) + 1 if idx.size else 0
    try:
        return PointMap.from_indices(idx, n_dst)
    except DimensionError as exc:
        raise ParseError(f"{path}: {exc}") from exc
