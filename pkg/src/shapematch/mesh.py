"""Triangle meshes: representation, file I/O, normalization and the discrete
operators (lumped mass, cotangent Laplacian, one-ring adjacency)."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import DegenerateError, DimensionError, ParseError, TopologyError

COT_CLAMP = 1e6


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable triangle mesh.

    ``vertices`` is (n, 3) float64, ``faces`` is (m, 3) int64 with 0-based
    indices. Construction validates index range, repeated vertices inside a
    face, finiteness and that no edge is shared by more than two faces.
    """

    vertices: np.ndarray
    faces: np.ndarray
    name: str = ""

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64)
        f = np.array(self.faces, dtype=np.int64)
        if f.size == 0:
            f = f.reshape(0, 3)
        if v.ndim != 2 or v.shape[1] != 3:
            raise DimensionError(f"vertices must be (n, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise DimensionError(f"faces must be (m, 3), got {f.shape}")
        if not np.all(np.isfinite(v)):
            raise DegenerateError("non-finite vertex coordinates")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise DimensionError(f"face index out of range [0, {len(v)})")
        if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            raise TopologyError("face with repeated vertex")
        if f.size:
            und = np.sort(_directed_edges(f), axis=1)
            _, counts = np.unique(und, axis=0, return_counts=True)
            if counts.max() > 2:
                raise TopologyError("edge shared by more than two faces")
        object.__setattr__(self, "vertices", _frozen(v))
        object.__setattr__(self, "faces", _frozen(f))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def with_vertices(self, vertices: np.ndarray, name: str | None = None) -> "Mesh":
        """Same connectivity, new positions."""
        return Mesh(vertices, self.faces, self.name if name is None else name)

    def face_areas(self) -> np.ndarray:
        return face_areas(self.vertices, self.faces)

    def area(self) -> float:
        return float(self.face_areas().sum())

    def edges(self) -> np.ndarray:
        """Unique undirected edges as an (E, 2) array with i < j, lexsorted."""
        cached = self.__dict__.get("_edges")
        if cached is None:
            und = np.sort(_directed_edges(self.faces), axis=1)
            cached = _frozen(np.unique(und, axis=0).reshape(-1, 2))
            object.__setattr__(self, "_edges", cached)
        return cached

    def ring_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """(i, j) for every j in the one-ring of i: each edge in both orientations."""
        e = self.edges()
        return np.concatenate([e[:, 0], e[:, 1]]), np.concatenate([e[:, 1], e[:, 0]])


@dataclass(frozen=True, eq=False)
class Operators:
    """Discrete operators of a mesh.

    ``laplacian`` is the positive semi-definite cotangent Laplacian (positive
    diagonal), ``mass`` the lumped vertex areas, ``neighbors`` the one-ring
    index arrays and ``edges`` the unique undirected edge list.
    """

    mass: np.ndarray
    laplacian: sparse.csr_matrix
    neighbors: tuple = field(repr=False)
    edges: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.mass)

    def mass_matrix(self) -> sparse.dia_matrix:
        return sparse.diags(self.mass)

    def directed_edges(self) -> tuple[np.ndarray, np.ndarray]:
        """(i, j) pairs for every j in N_i, i.e. both orientations of each edge."""
        i = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        j = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        return i, j


def _directed_edges(faces: np.ndarray) -> np.ndarray:
    return np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])


def face_areas(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    p0, p1, p2 = (vertices[faces[:, c]] for c in range(3))
    return 0.5 * np.linalg.norm(np.cross(p1 - p0, p2 - p0), axis=1)


# ---------------------------------------------------------------------------
# operators


def build_operators(mesh: Mesh) -> Operators:
    """Cotangent Laplacian, lumped mass and adjacency of ``mesh``.

    Off-diagonal entries are ``-(cot a + cot b) / 2`` for the two angles
    opposite an edge, with cotangents clamped to +-1e6. Mass is one third of
    the area of the incident triangles.
    """
    v, f = mesh.vertices, mesh.faces
    n = mesh.n_vertices
    if mesh.n_faces == 0:
        raise DegenerateError("mesh has no faces")

    areas = face_areas(v, f)
    mass = np.zeros(n)
    np.add.at(mass, f.ravel(), np.repeat(areas / 3.0, 3))
    if np.any(mass <= 0):
        bad = int(np.flatnonzero(mass <= 0)[0])
        raise DegenerateError(f"vertex {bad} has zero lumped area")

    rows, cols, vals = [], [], []
    for c in range(3):
        # angle at corner c is opposite edge (c+1, c+2)
        a, b, o = f[:, (c + 1) % 3], f[:, (c + 2) % 3], f[:, c]
        e1 = v[a] - v[o]
        e2 = v[b] - v[o]
        dot = np.einsum("ij,ij->i", e1, e2)
        cross = np.linalg.norm(np.cross(e1, e2), axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            cot = np.where(cross > 0, dot / np.where(cross > 0, cross, 1.0), np.sign(dot) * COT_CLAMP)
        cot = np.clip(cot, -COT_CLAMP, COT_CLAMP)
        rows.append(a)
        cols.append(b)
        vals.append(0.5 * cot)
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    w = np.concatenate(vals)
    # both orientations from the same half-weights -> exact symmetry
    W = sparse.coo_matrix((np.concatenate([w, w]), (np.concatenate([r, c]), np.concatenate([c, r]))), shape=(n, n)).tocsr()
    W.sum_duplicates()
    L = (sparse.diags(np.asarray(W.sum(axis=1)).ravel()) - W).tocsr()
    L.sort_indices()

    edges = mesh.edges()
    ring = [[] for _ in range(n)]
    for i, j in edges:
        ring[i].append(j)
        ring[j].append(i)
    neighbors = tuple(_frozen(np.array(sorted(r), dtype=np.int64)) for r in ring)
    return Operators(mass=_frozen(mass), laplacian=L, neighbors=neighbors, edges=_frozen(edges))


# ---------------------------------------------------------------------------
# normalization


def normalization_transform(mesh: Mesh) -> tuple[np.ndarray, float]:
    """Return ``(centroid, scale)`` so that ``(v - centroid) * scale`` has unit area."""
    areas = mesh.face_areas()
    total = areas.sum()
    if not total > 0:
        raise DegenerateError("mesh has zero total surface area")
    centers = mesh.vertices[mesh.faces].mean(axis=1)
    centroid = (areas[:, None] * centers).sum(axis=0) / total
    return centroid, 1.0 / np.sqrt(total)


def normalize_mesh(mesh: Mesh) -> Mesh:
    """Translate the area-weighted centroid to the origin and scale to unit area."""
    centroid, scale = normalization_transform(mesh)
    return mesh.with_vertices((mesh.vertices - centroid) * scale)


# ---------------------------------------------------------------------------
# readers


def load_mesh(path, format: str | None = None, name: str | None = None) -> Mesh:
    """Read an OFF, OBJ or PLY file. Polygons are fan-triangulated."""
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt not in ("off", "obj", "ply"):
        raise ParseError(f"{path}: unknown mesh format {fmt!r}")
    if not path.is_file():
        raise ParseError(f"{path}: no such file")
    reader = {"off": _read_off, "obj": _read_obj, "ply": _read_ply}[fmt]
    try:
        verts, polys = reader(path)
    except ParseError:
        raise
    except (ValueError, IndexError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    verts = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    faces = _triangulate(polys, len(verts), path)
    try:
        return Mesh(verts, faces, name if name is not None else path.stem)
    except TopologyError as exc:
        raise TopologyError(f"{path}: {exc}") from exc
    except (DimensionError, DegenerateError) as exc:
        raise ParseError(f"{path}: {exc}") from exc


def _triangulate(polys, n: int, path) -> np.ndarray:
    if isinstance(polys, np.ndarray):
        tris = polys.astype(np.int64).reshape(-1, 3)
    else:
        out = []
        for poly in polys:
            if len(poly) < 3:
                raise ParseError(f"{path}: face with fewer than 3 vertices")
            for t in range(1, len(poly) - 1):
                out.append((poly[0], poly[t], poly[t + 1]))
        tris = np.array(out, dtype=np.int64).reshape(-1, 3)
    if tris.size and (tris.min() < 0 or tris.max() >= n):
        raise ParseError(f"{path}: face index out of range for {n} vertices")
    return tris


def _tokens(path):
    with open(path, "r") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                yield line


def _read_off(path):
    lines = _tokens(path)
    head = next(lines, None)
    if head is None or not head.upper().startswith("OFF"):
        raise ParseError(f"{path}: missing OFF header")
    rest = head[3:].split()
    counts = rest if rest else next(lines).split()
    nv, nf = int(counts[0]), int(counts[1])
    verts = []
    for _ in range(nv):
        tok = next(lines, None)
        if tok is None:
            raise ParseError(f"{path}: truncated vertex list")
        verts.append([float(x) for x in tok.split()[:3]])
    polys = []
    for _ in range(nf):
        tok = next(lines, None)
        if tok is None:
            raise ParseError(f"{path}: truncated face list")
        vals = tok.split()
        k = int(vals[0])
        if len(vals) < k + 1:
            raise ParseError(f"{path}: short face record {tok!r}")
        polys.append([int(x) for x in vals[1 : k + 1]])
    return verts, polys


def _read_obj(path):
    verts, polys = [], []
    for line in _tokens(path):
        parts = line.split()
        if parts[0] == "v":
            if len(parts) < 4:
                raise ParseError(f"{path}: short vertex record {line!r}")
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = []
            for tok in parts[1:]:
                i = int(tok.split("/")[0])
                idx.append(i - 1 if i > 0 else len(verts) + i)
            polys.append(idx)
    return verts, polys


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _read_ply(path):
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"ply":
            raise ParseError(f"{path}: missing ply magic")
        fmt = None
        elements = []  # [name, count, [(prop, type) or (prop, ('list', ctype, itype))]]
        while True:
            raw = fh.readline()
            if not raw:
                raise ParseError(f"{path}: truncated header")
            parts = raw.decode("ascii").split()
            if not parts or parts[0] in ("comment", "obj_info"):
                continue
            if parts[0] == "format":
                fmt = parts[1]
            elif parts[0] == "element":
                elements.append([parts[1], int(parts[2]), []])
            elif parts[0] == "property":
                if parts[1] == "list":
                    elements[-1][2].append((parts[4], ("list", _PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]])))
                else:
                    elements[-1][2].append((parts[2], _PLY_TYPES[parts[1]]))
            elif parts[0] == "end_header":
                break
        if fmt == "ascii":
            return _read_ply_ascii(fh, elements, path)
        if fmt in ("binary_little_endian", "binary_big_endian"):
            endian = "<" if fmt == "binary_little_endian" else ">"
            return _read_ply_binary(fh, elements, endian, path)
        raise ParseError(f"{path}: unsupported ply format {fmt!r}")


def _read_ply_ascii(fh, elements, path):
    words = iter(fh.read().decode("ascii").split())
    verts = polys = None
    for name, count, props in elements:
        rows = []
        for _ in range(count):
            rec = {}
            for pname, ptype in props:
                if isinstance(ptype, tuple):
                    k = int(next(words))
                    rec[pname] = [int(next(words)) for _ in range(k)]
                else:
                    rec[pname] = float(next(words))
            rows.append(rec)
        if name == "vertex":
            verts = [[r["x"], r["y"], r["z"]] for r in rows]
        elif name == "face":
            key = _face_key(props, path)
            polys = [r[key] for r in rows]
    if verts is None:
        raise ParseError(f"{path}: no vertex element")
    return verts, polys or []


def _face_key(props, path):
    for pname, ptype in props:
        if isinstance(ptype, tuple) and pname in ("vertex_indices", "vertex_index"):
            return pname
    raise ParseError(f"{path}: face element lacks vertex_indices")


def _read_ply_binary(fh, elements, endian, path):
    verts = polys = None
    for name, count, props in elements:
        if all(not isinstance(t, tuple) for _, t in props):
            dt = np.dtype([(p, endian + t) for p, t in props])
            data = np.frombuffer(fh.read(dt.itemsize * count), dtype=dt, count=count)
            if name == "vertex":
                verts = np.column_stack([data["x"], data["y"], data["z"]]).astype(np.float64)
            continue
        # element with list properties: parse record by record
        recs = []
        for _ in range(count):
            rec = {}
            for pname, ptype in props:
                if isinstance(ptype, tuple):
                    ct = np.dtype(endian + ptype[1])
                    k = int(np.frombuffer(fh.read(ct.itemsize), dtype=ct)[0])
                    it = np.dtype(endian + ptype[2])
                    rec[pname] = np.frombuffer(fh.read(it.itemsize * k), dtype=it).astype(np.int64).tolist()
                else:
                    st = np.dtype(endian + ptype)
                    rec[pname] = np.frombuffer(fh.read(st.itemsize), dtype=st)[0]
            recs.append(rec)
        if name == "face":
            key = _face_key(props, path)
            polys = [r[key] for r in recs]
    if verts is None:
        raise ParseError(f"{path}: no vertex element")
    return verts, polys or []


# ---------------------------------------------------------------------------
# writers


def _fmt(x: float) -> str:
    return repr(float(x))


def write_obj(path, vertices: np.ndarray, faces: np.ndarray) -> None:
    """OBJ with full-precision coordinates and 1-based face indices."""
    lines = [f"v {_fmt(a)} {_fmt(b)} {_fmt(c)}" for a, b, c in np.asarray(vertices)]
    lines += [f"f {i + 1} {j + 1} {k + 1}" for i, j, k in np.asarray(faces)]
    Path(path).write_text("\n".join(lines) + "\n")


def write_off(path, vertices: np.ndarray, faces: np.ndarray) -> None:
    lines = ["OFF", f"{len(vertices)} {len(faces)} 0"]
    lines += [f"{_fmt(a)} {_fmt(b)} {_fmt(c)}" for a, b, c in np.asarray(vertices)]
    lines += [f"3 {i} {j} {k}" for i, j, k in np.asarray(faces)]
    Path(path).write_text("\n".join(lines) + "\n")


def save_mesh(path, mesh: Mesh) -> None:
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".off":
        write_off(path, mesh.vertices, mesh.faces)
    elif ext == ".obj":
        write_obj(path, mesh.vertices, mesh.faces)
    else:
        raise ParseError(f"{path}: can only write .obj or .off")
