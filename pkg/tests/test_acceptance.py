"""End-to-end acceptance checks. Each test records one PASS/FAIL line that is
printed in the terminal summary, then asserts."""

import hashlib
import json
import time
from pathlib import Path

import numpy as np
import pytest

from shapematch import shapes
from shapematch.cli import main
from shapematch.correspondence import MatchConfig, spectral_objective
from shapematch.fmap import SpectralWeights, solve_fmap, spectral_loss
from shapematch.interpolation import SpatialWeights, Trajectory, arap_energy, optimize_trajectory, spatial_loss
from shapematch.mesh import build_operators, normalize_mesh, save_mesh
from shapematch.metrics import conformal_distortion, pck_auc
from shapematch.pointmap import PointMap, load_hard_map, save_hard_map
from shapematch.spectral import compute_eigenbasis
from shapematch.ssm import build_ssm, chamfer_length, generality, reconstruct
from shapematch.tta import adapt, chamfer, chamfer_grad, dirichlet, dirichlet_grad

from conftest import central_diff, random_rotation, record_acceptance, rel_err

# pinned from the desk-scale oracle run: pipeline 10.807 vs baseline 13.217 (ratio 0.818)
BENT_BAR_RATIO = 0.9


def _check(name, ok, detail):
    record_acceptance(name, bool(ok), detail)
    assert ok, f"{name}: {detail}"


@pytest.fixture(scope="module")
def bar_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("bar")
    bar = shapes.bar()
    save_mesh(d / "bar.off", bar)
    save_mesh(d / "bent.off", shapes.bend(bar, 1.5, 2.5))
    save_hard_map(d / "gt.txt", PointMap.identity(bar.n_vertices))
    return d


# ---------------------------------------------------------------------------


def test_laplacian_spectrum():
    t0 = time.perf_counter()
    ev = compute_eigenbasis(build_operators(shapes.icosphere(3)), 16).evals
    dt = time.perf_counter() - t0
    expected = np.array([l * (l + 1) for l in range(1, 4) for _ in range(2 * l + 1)], dtype=float)
    worst = float(np.max(np.abs(ev[1:] - expected) / expected))
    _check("laplacian spectrum", ev[0] <= 1e-6 and worst <= 0.05 and dt < 5.0,
           f"lambda_1={ev[0]:.2e}, max rel dev {worst:.4f} (<= 0.05), {dt:.2f}s (< 5s)")


def test_gradient_suite():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    m = normalize_mesh(shapes.icosphere(1))  # 42 vertices
    n = m.n_vertices
    b = compute_eigenbasis(build_operators(m), 10)
    errs = {}

    def soft():
        p = rng.random((n, n)) + 0.05
        return p / p.sum(axis=1, keepdims=True)

    # spectral loss in (C_xy, C_yx, Pi_xy, Pi_yx)
    c1, c2, p1, p2 = rng.standard_normal((10, 10)), rng.standard_normal((10, 10)), soft(), soft()
    w = SpectralWeights(1.3, 0.7, 0.9, 1.1)
    d = [rng.standard_normal(a.shape) for a in (c1, c2, p1, p2)]

    def f_spec(t):
        return spectral_loss(c1 + t * d[0], c2 + t * d[1], PointMap.from_matrix(p1 + t * d[2]),
                             PointMap.from_matrix(p2 + t * d[3]), b, b, w).value

    out = spectral_loss(c1, c2, PointMap.from_matrix(p1), PointMap.from_matrix(p2), b, b, w)
    an = sum(np.sum(g * dd) for g, dd in zip((out.grad_c_xy, out.grad_c_yx, out.grad_pi_xy, out.grad_pi_yx), d))
    errs["spectral_loss"] = rel_err(central_diff(f_spec, 0.0, 1.0), an)

    # the full feature objective, through softmax and the fmap solve
    fx, fy = rng.standard_normal((n, 6)), rng.standard_normal((n, 6))
    cfg = MatchConfig(temperature=0.5, lambda_reg=3.0)
    obj = spectral_objective(fx, fy, b, b, cfg)
    dx, dy = rng.standard_normal(fx.shape), rng.standard_normal(fy.shape)
    num = central_diff(lambda t: spectral_objective(fx + t * dx, fy + t * dy, b, b, cfg).value, 0.0, 1.0)
    errs["spectral_objective"] = rel_err(num, np.sum(obj.grad_x * dx) + np.sum(obj.grad_y * dy))

    # spatial loss, each term alone, T = 4
    other = m.with_vertices(m.vertices * [1.2, 0.9, 1.0])
    pxy, pyx = PointMap.from_matrix(soft()), PointMap.from_matrix(soft())
    X = Trajectory.linear(m, pxy.apply(other.vertices), 4).frames + 0.05 * rng.standard_normal((5, n, 3))
    Y = Trajectory.linear(other, pyx.apply(m.vertices), 4).frames + 0.05 * rng.standard_normal((5, n, 3))
    X[0], Y[0] = m.vertices, other.vertices
    DX, DY = rng.standard_normal(X.shape), rng.standard_normal(Y.shape)
    DX[0] = DY[0] = 0.0
    for term in ("align", "arap", "sym", "var"):
        wt = SpatialWeights(**{k: float(k == term) for k in ("align", "arap", "sym", "var")})
        o = spatial_loss(X, Y, pxy, pyx, wt, m, other)
        num = central_diff(lambda t: spatial_loss(X + t * DX, Y + t * DY, pxy, pyx, wt, m, other).value, 0.0, 1.0)
        errs[f"spatial_{term}"] = rel_err(num, np.sum(o.grad_x * DX) + np.sum(o.grad_y * DY))

    a, s2 = rng.standard_normal((n, 3)), rng.standard_normal((30, 3))
    _, g = chamfer_grad(a, s2)
    da = rng.standard_normal(a.shape)
    errs["chamfer"] = rel_err(central_diff(lambda t: chamfer(a + t * da, s2), 0.0, 1.0, h=1e-7), np.sum(g * da))
    _, g = dirichlet_grad(m, a)
    errs["dirichlet"] = rel_err(central_diff(lambda t: dirichlet(m, a + t * da), 0.0, 1.0), np.sum(g * da))
    dt = time.perf_counter() - t0
    worst = max(errs.values())
    _check("gradient suite", worst <= 1e-4 and dt < 30.0,
           f"max rel err {worst:.2e} over {len(errs)} checks (<= 1e-4), {dt:.2f}s (< 30s)")


def test_fmap_oracle():
    rng = np.random.default_rng(7)
    a = rng.standard_normal((30, 80))
    q = rng.standard_normal((30, 30))
    c = solve_fmap(a, q @ a, rng.random((30, 30)), 0.0).c
    err = float(np.linalg.norm(c - q))
    _check("functional-map oracle", err <= 1e-8, f"||C - Q||_F = {err:.2e} (<= 1e-8)")


def test_identity_pipeline(tmp_path, capsys):
    mesh = normalize_mesh(shapes.blob(4))
    n = mesh.n_vertices
    save_mesh(tmp_path / "blob.off", mesh)
    save_hard_map(tmp_path / "gt.txt", PointMap.identity(n))
    out = tmp_path / "out"
    t0 = time.perf_counter()
    code = main(["pipeline", "--mesh-x", str(tmp_path / "blob.off"), "--mesh-y", str(tmp_path / "blob.off"),
                 "--gt", str(tmp_path / "gt.txt"), "--outdir", str(out)])
    dt = time.perf_counter() - t0
    capsys.readouterr()
    assert code == 0
    rate = float(np.mean(load_hard_map(out / "tta" / "final_xy.txt").indices() == np.arange(n)))
    geo = json.loads((out / "eval" / "report.json").read_text())["mean_geo_err"]
    man = json.loads((out / "interpolate" / "manifest.json").read_text())
    disp = man["displacement_x"] + man["displacement_y"]
    _check("identity pipeline", rate >= 0.99 and geo <= 1e-3 and disp <= 1e-6 and dt < 120.0,
           f"n={n}, identity {rate:.4f} (>= 0.99), geo err {geo:.2e} (<= 1e-3), displacement {disp:.2e} "
           f"(<= 1e-6), {dt:.1f}s (< 120s)")


def test_bent_bar_pipeline(bar_files, tmp_path, capsys):
    d = bar_files
    out = tmp_path / "out"
    t0 = time.perf_counter()
    code = main(["pipeline", "--mesh-x", str(d / "bar.off"), "--mesh-y", str(d / "bent.off"),
                 "--gt", str(d / "gt.txt"), "--outdir", str(out)])
    dt = time.perf_counter() - t0
    capsys.readouterr()
    assert code == 0
    rep = json.loads((out / "eval" / "report.json").read_text())
    ours, base = rep["mean_geo_err"], rep["baseline"]["mean_geo_err"]
    ratio = ours / base
    _check("isometry pipeline (bent bar)", ours < base and ratio <= BENT_BAR_RATIO and dt < 300.0,
           f"geo err x100 {100 * ours:.3f} vs WKS baseline {100 * base:.3f}, ratio {ratio:.3f} "
           f"(<= {BENT_BAR_RATIO}), {dt:.1f}s (< 300s)")


def test_arap_invariants():
    rng = np.random.default_rng(11)
    bar = normalize_mesh(shapes.bar())
    bent = normalize_mesh(shapes.bend(shapes.bar(), 1.5, 2.5))
    R = random_rotation(rng)
    rigid, _ = arap_energy(bar, bar.vertices, bar.vertices @ R.T + [0.5, -1.0, 2.0])
    ident = PointMap.identity(bar.n_vertices)
    res = optimize_trajectory(bar, bent, ident, ident, T=6)
    before, after = res.initial_terms["arap"], res.terms["arap"]
    ratio = after / before
    _check("ARAP invariants", rigid <= 1e-10 and ratio <= 0.5,
           f"rigid-motion energy {rigid:.2e} (<= 1e-10), optimized/linear L_arap {after:.4g}/{before:.4g} = "
           f"{ratio:.3f} (<= 0.5)")


def test_tta_translation():
    m = normalize_mesh(shapes.icosphere(2))
    offset = np.array([0.05, -0.03, 0.02])
    other = m.with_vertices(m.vertices + offset)
    tx = Trajectory.linear(m, m.vertices, 2)
    ty = Trajectory.linear(other, other.vertices, 2)
    field = adapt(tx, ty, m)
    T = tx.T
    reductions = []
    monotone = True
    for k in range(T + 1):
        before = chamfer(tx.frames[k], ty.frames[T - k])
        after = chamfer(tx.frames[k] + field.deltas[k], ty.frames[T - k])
        reductions.append(1.0 - after / before)
        monotone &= bool(np.all(np.diff(np.minimum.accumulate(field.traces[k])) <= 0))
        monotone &= field.best[k] == min(field.traces[k])
    worst = min(reductions)
    _check("test-time adaptation", worst >= 0.99 and monotone,
           f"min Chamfer reduction {100 * worst:.4f}% (>= 99%), best-iterate monotone: {monotone}")


def test_metrics_exact(rng):
    _, auc = pck_auc(np.zeros(100))
    m = shapes.blob(1)
    ident = float(np.max(conformal_distortion(m, m.vertices)))
    R = random_rotation(rng)
    sim = float(np.max(conformal_distortion(m, 2.5 * m.vertices @ R.T + 1.0)))
    g = shapes.grid(4, 3)
    stretch = conformal_distortion(g, g.vertices * [2.0, 1.0, 1.0])
    dev = float(np.max(np.abs(stretch - 0.5)))
    _check("metrics", auc == 1.0 and ident <= 1e-8 and sim <= 1e-8 and dev <= 1e-12,
           f"perfect AUC {auc!r} (== 1.0), identity {ident:.1e} / similarity {sim:.1e} (<= 1e-8), "
           f"diag(2,1) |d - 0.5| {dev:.1e}")


def test_ssm():
    rng = np.random.default_rng(5)
    v = shapes.icosphere(1).vertices
    v = v - v.mean(axis=0)
    u = np.zeros_like(v)
    u[:, 2] = v[:, 2]  # axial stretch: orthogonal to every rigid motion of the sphere
    fam = np.array([v + t * u for t in rng.uniform(-0.3, 0.3, 6)])
    model = build_ssm(fam, 4)
    g1 = generality(fam, 1)
    rank_one = model.q == 1
    noisy = fam + 0.01 * rng.standard_normal(fam.shape)
    gens = [generality(noisy, q) for q in range(1, 5)]
    monotone = all(b <= a + 1e-12 for a, b in zip(gens, gens[1:]))
    full = build_ssm(noisy, 5)
    rec = max(chamfer_length(*reconstruct(full, s)) ** 2 for s in noisy)
    _check("statistical shape model", rank_one and g1 <= 1e-8 and monotone and rec <= 1e-10,
           f"modes {model.q} (== 1), generality q=1 {g1:.1e} (<= 1e-8), monotone in q: {monotone}, "
           f"max reconstruction Chamfer {rec:.1e} (<= 1e-10)")


def _tree_digest(root: Path) -> dict:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_determinism(bar_files, tmp_path, capsys):
    d = bar_files
    digests = []
    for run in ("a", "b"):
        code = main(["pipeline", "--mesh-x", str(d / "bar.off"), "--mesh-y", str(d / "bent.off"),
                     "--gt", str(d / "gt.txt"), "--outdir", str(tmp_path / run), "--threads", "1", "--seed", "3",
                     "--match-iters", "20", "--interp-iters", "50", "--tta-iters", "100"])
        assert code == 0
        digests.append(_tree_digest(tmp_path / run))
    capsys.readouterr()
    same = digests[0] == digests[1]
    _check("determinism", same and len(digests[0]) > 0,
           f"{len(digests[0])} files, byte-identical across two --threads 1 runs: {same}")
