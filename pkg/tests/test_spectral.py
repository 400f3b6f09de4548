import numpy as np
import pytest

from shapematch import shapes
from shapematch.errors import DimensionError, ParseError
from shapematch.mesh import build_operators, normalize_mesh
from shapematch.spectral import EigenBasis, compute_eigenbasis, load_basis, project, save_basis, unproject

from conftest import random_rotation


@pytest.fixture(scope="module")
def sphere_basis(sphere3):
    return compute_eigenbasis(build_operators(sphere3), 16)


def test_sphere_spectrum(sphere_basis):
    ev = sphere_basis.evals
    expected = np.array([l * (l + 1) for l in range(4) for _ in range(2 * l + 1)], dtype=float)
    assert ev[0] <= 1e-6
    np.testing.assert_allclose(ev[1:16], expected[1:], rtol=0.05)


def test_basis_invariants(sphere_basis):
    b = sphere_basis
    G = b.phi.T @ (b.mass[:, None] * b.phi)
    np.testing.assert_allclose(G, np.eye(b.k), atol=1e-8)
    assert np.all(np.diff(b.evals) >= 0)
    idx = np.argmax(np.abs(b.phi), axis=0)
    assert np.all(b.phi[idx, np.arange(b.k)] > 0)


def test_residuals(blob2, blob2_basis):
    ops = build_operators(blob2)
    b = blob2_basis
    r = ops.laplacian @ b.phi - (b.mass[:, None] * b.phi) * b.evals
    scale = np.linalg.norm(b.mass[:, None] * b.phi, axis=0)
    assert np.max(np.linalg.norm(r, axis=0) / scale) <= 1e-6


def test_first_eigenfunction_constant(blob2, blob2_basis):
    np.testing.assert_allclose(blob2_basis.phi[:, 0], 1.0 / np.sqrt(blob2.area()), atol=1e-6)


def test_k_bounds(blob2):
    ops = build_operators(blob2)
    with pytest.raises(DimensionError):
        compute_eigenbasis(ops, blob2.n_vertices)
    with pytest.raises(DimensionError):
        compute_eigenbasis(ops, 0)


def test_project_unproject(blob2, blob2_basis, rng):
    b = blob2_basis
    np.testing.assert_allclose(project(b, b.phi[:, 3]), np.eye(b.k)[3], atol=1e-8)
    c = 2.5
    coef = project(b, np.full((b.n, 1), c))
    expected = np.zeros((b.k, 1))
    expected[0] = c * np.sqrt(blob2.area())
    np.testing.assert_allclose(coef, expected, atol=1e-6)
    a = rng.standard_normal((b.k, 4))
    np.testing.assert_allclose(project(b, unproject(b, a)), a, atol=1e-8)
    np.testing.assert_array_equal(unproject(b, np.zeros((b.k, 2))), 0.0)
    f = rng.standard_normal((b.n, 3))
    resid = f - unproject(b, project(b, f))
    np.testing.assert_allclose(b.phi.T @ (b.mass[:, None] * resid), 0.0, atol=1e-6)


def test_projection_dimension_errors(blob2_basis):
    b = blob2_basis
    with pytest.raises(DimensionError):
        project(b, np.zeros(b.n + 1))
    with pytest.raises(DimensionError):
        project(b, np.zeros((b.n - 1, 2)))
    with pytest.raises(DimensionError):
        unproject(b, np.zeros(b.k + 1))


def test_spectrum_rigid_and_scale(rng):
    m = shapes.blob(2)
    ref = compute_eigenbasis(build_operators(m), 12).evals
    R = random_rotation(rng)
    moved = m.with_vertices(m.vertices @ R.T + [1.0, -2.0, 0.5])
    ev = compute_eigenbasis(build_operators(moved), 12).evals
    np.testing.assert_allclose(ev[1:], ref[1:], rtol=1e-6)
    s = 3.0
    ev_s = compute_eigenbasis(build_operators(m.with_vertices(s * m.vertices)), 12).evals
    np.testing.assert_allclose(ev_s[1:], ref[1:] / s**2, rtol=1e-6)


def test_truncate(blob2_basis):
    t = blob2_basis.truncate(5)
    assert t.k == 5
    np.testing.assert_array_equal(t.phi, blob2_basis.phi[:, :5])


def test_basis_cache_roundtrip(tmp_path, blob2_basis):
    p = tmp_path / "b.spec"
    save_basis(p, blob2_basis)
    raw = p.read_bytes()
    assert raw[:5] == b"SPEC1"
    back = load_basis(p, blob2_basis.mass)
    assert isinstance(back, EigenBasis)
    np.testing.assert_array_equal(back.phi, blob2_basis.phi)
    np.testing.assert_array_equal(back.evals, blob2_basis.evals)
    p.write_bytes(raw[:-8])
    with pytest.raises(ParseError):
        load_basis(p, blob2_basis.mass)


def test_deterministic(blob2):
    ops = build_operators(normalize_mesh(blob2))
    a = compute_eigenbasis(ops, 10)
    b = compute_eigenbasis(ops, 10)
    np.testing.assert_array_equal(a.phi, b.phi)
