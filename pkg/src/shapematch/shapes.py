"""Procedural test meshes: icospheres, flat strips, cubes and bendable bars."""

from __future__ import annotations

import numpy as np

from .mesh import Mesh


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> Mesh:
    """Subdivided icosahedron projected to a sphere (10*4**s + 2 vertices)."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=float)
    f = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    for _ in range(subdivisions):
        e = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
        uniq, inv = np.unique(e, axis=0, return_inverse=True)
        inv = inv.ravel()
        mid = v[uniq].mean(axis=1)
        mid /= np.linalg.norm(mid, axis=1, keepdims=True)
        m = len(f)
        a = inv[:m] + len(v)
        b = inv[m : 2 * m] + len(v)
        c = inv[2 * m :] + len(v)
        v = np.vstack([v, mid])
        f = np.concatenate([
            np.column_stack([f[:, 0], a, c]),
            np.column_stack([f[:, 1], b, a]),
            np.column_stack([f[:, 2], c, b]),
            np.column_stack([a, b, c]),
        ])
    return Mesh(v * radius, f, f"icosphere{subdivisions}")


def grid(nx: int, ny: int, width: float = 1.0, height: float = 1.0) -> Mesh:
    """Flat triangulated rectangle in the z = 0 plane."""
    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    v = np.column_stack([X.ravel(), Y.ravel(), np.zeros(X.size)])
    idx = np.arange((nx + 1) * (ny + 1)).reshape(nx + 1, ny + 1)
    a, b = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
    c, d = idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()
    f = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    return Mesh(v, f, f"grid{nx}x{ny}")


def cube() -> Mesh:
    """Unit cube surface [0, 1]^3, two triangles per side."""
    v = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    f = [(q[0], q[1], q[2]) for q in quads] + [(q[0], q[2], q[3]) for q in quads]
    return Mesh(v, np.array(f), "cube")


def blob(subdivisions: int = 4) -> Mesh:
    """Icosphere with a smooth asymmetric radial bump field (no symmetries)."""
    s = icosphere(subdivisions)
    x, y, z = s.vertices.T
    r = 1.0 + 0.25 * x + 0.15 * y * y - 0.2 * x * z + 0.12 * z**3 + 0.08 * np.sin(3 * y + 1.0)
    return Mesh(s.vertices * r[:, None], s.faces, f"blob{subdivisions}")


def bar(n_len: int = 40, n_around: int = 16, length: float = 4.0, radius: float = 0.3, taper: float = 0.6) -> Mesh:
    """Closed tube along +x with elliptic, linearly tapering cross-section.

    The cross-section shrinks from ``radius`` to ``taper * radius`` along the
    length so the two ends are distinguishable; fan caps close both ends.
    """
    xs = np.linspace(0.0, length, n_len + 1)
    th = np.linspace(0.0, 2 * np.pi, n_around, endpoint=False)
    scale = radius * (1.0 + (taper - 1.0) * xs / length)
    Y = np.outer(scale, np.cos(th))
    Z = 0.6 * np.outer(scale, np.sin(th))
    X = np.repeat(xs[:, None], n_around, axis=1)
    v = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])
    idx = np.arange((n_len + 1) * n_around).reshape(n_len + 1, n_around)
    nxt = np.roll(idx, -1, axis=1)
    a, b = idx[:-1].ravel(), idx[1:].ravel()
    c, d = nxt[1:].ravel(), nxt[:-1].ravel()
    f = [np.column_stack([a, c, b]), np.column_stack([a, d, c])]
    c0 = len(v)
    c1 = c0 + 1
    v = np.vstack([v, [[0.0, 0.0, 0.0], [length, 0.0, 0.0]]])
    f.append(np.column_stack([np.full(n_around, c0), idx[0], nxt[0]]))
    f.append(np.column_stack([np.full(n_around, c1), nxt[-1], idx[-1]]))
    return Mesh(v, np.concatenate(f), "bar")


def bend(mesh: Mesh, start: float, stop: float, angle: float = np.pi / 2) -> Mesh:
    """Bend an x-aligned shape about the z axis.

    Points with ``x < start`` stay fixed, the slab ``[start, stop]`` is wrapped
    on a circular arc whose centerline length equals ``stop - start``, and the
    remainder is moved rigidly with the end cross-section.
    """
    x, y, z = mesh.vertices.T.copy()
    R = (stop - start) / angle
    s = np.clip(x, start, stop) - start
    th = s / R
    extra = np.maximum(x - stop, 0.0)
    inside = x >= start
    nx = start + (R - y) * np.sin(th) + extra * np.cos(th)
    ny = R - (R - y) * np.cos(th) + extra * np.sin(th)
    out = np.column_stack([np.where(inside, nx, x), np.where(inside, ny, y), z])
    return mesh.with_vertices(out, name=f"{mesh.name}_bent")
