"""Stage runners behind the command-line interface.

Each stage reads its inputs, computes everything in memory and only then
writes to ``<outdir>/<stage>/``, so a failing stage leaves no partial output.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from pathlib import Path

import numpy as np

from . import plotting
from .config import PipelineConfig
from .correspondence import optimize_features
from .descriptors import row_normalize, standardize, wks
from .errors import ParseError
from .fmap import save_fmap
from .interpolation import Trajectory, export_trajectory, optimize_trajectory, weights_dict
from .mesh import Mesh, build_operators, load_mesh, normalization_transform, write_obj
from .metrics import evaluate
from .pointmap import PointMap, load_hard_map, nearest, save_hard_map
from .spectral import compute_eigenbasis
from .ssm import build_ssm, generality, sample_ssm, save_ssm, specificity
from .tta import adapt, blend, chamfer, final_pointmap, final_source, save_field

log = logging.getLogger("shapematch")


def _load(path: str, cfg: PipelineConfig):
    mesh = load_mesh(path)
    if not cfg.normalize:
        return mesh, (np.zeros(3), 1.0)
    centroid, scale = normalization_transform(mesh)
    return mesh.with_vertices((mesh.vertices - centroid) * scale), (centroid, scale)


def _stage_dir(cfg: PipelineConfig, stage: str) -> Path:
    d = Path(cfg.outdir) / stage
    d.mkdir(parents=True, exist_ok=True)
    return d


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) for x in r])
    path.write_text(buf.getvalue())


def _transform_json(t):
    return {"centroid": [float(x) for x in t[0]], "scale": float(t[1])}


# ---------------------------------------------------------------------------


def run_match(cfg: PipelineConfig) -> dict:
    mx, tx = _load(cfg.mesh_x, cfg)
    my, ty = _load(cfg.mesh_y, cfg)
    for m in (mx, my):
        if cfg.k >= m.n_vertices:
            raise ParseError(f"{m.name}: k={cfg.k} needs more than {m.n_vertices} vertices")
    bx = compute_eigenbasis(build_operators(mx), cfg.k)
    by = compute_eigenbasis(build_operators(my), cfg.k)
    fx = standardize(wks(bx, cfg.descriptor_dim))
    fy = standardize(wks(by, cfg.descriptor_dim))
    log.info("match: %d x %d vertices, k=%d, d=%d", mx.n_vertices, my.n_vertices, cfg.k, cfg.descriptor_dim)
    res = optimize_features(mx, my, bx, by, (fx, fy), cfg.match_config())
    hxy, hyx = res.hard_maps()
    nx, ny = row_normalize(fx).values, row_normalize(fy).values
    base_xy = PointMap.from_indices(nearest(nx, ny), my.n_vertices)
    base_yx = PointMap.from_indices(nearest(ny, nx), mx.n_vertices)

    out = _stage_dir(cfg, "match")
    save_hard_map(out / "map_xy.txt", hxy)
    save_hard_map(out / "map_yx.txt", hyx)
    save_hard_map(out / "baseline_xy.txt", base_xy)
    save_hard_map(out / "baseline_yx.txt", base_yx)
    save_fmap(out / "fmap_xy.fmap", res.fmaps[0])
    save_fmap(out / "fmap_yx.fmap", res.fmaps[1])
    report = {
        "n_x": mx.n_vertices, "n_y": my.n_vertices, "k": cfg.k, "descriptor_dim": cfg.descriptor_dim,
        "initial_loss": res.initial_loss, "best_loss": res.best_loss, "loss_trace": res.trace,
        "eigenvalues_x": bx.evals.tolist(), "eigenvalues_y": by.evals.tolist(),
        "transform_x": _transform_json(tx), "transform_y": _transform_json(ty),
    }
    _dump(out / "report.json", report)
    if cfg.figures:
        plotting.plot_trace(out / "loss.png", {"spectral": res.trace}, "feature optimization")
    return {"stage": "match", "initial_loss": res.initial_loss, "best_loss": res.best_loss}


def _maps(cfg: PipelineConfig, mx: Mesh, my: Mesh):
    d = Path(cfg.outdir) / "match"
    return load_hard_map(d / "map_xy.txt", my.n_vertices), load_hard_map(d / "map_yx.txt", mx.n_vertices)


def run_interpolate(cfg: PipelineConfig) -> dict:
    mx, tx = _load(cfg.mesh_x, cfg)
    my, ty = _load(cfg.mesh_y, cfg)
    pxy, pyx = _maps(cfg, mx, my)
    res = optimize_trajectory(mx, my, pxy, pyx, cfg.T, cfg.spatial_weights(), cfg.interp_iters, cfg.interp_step,
                              cfg.arap_weighting)
    out = _stage_dir(cfg, "interpolate")
    manifest = {"loss_trace": res.trace, "weights": weights_dict(cfg.spatial_weights()), "terms": res.terms,
                "initial_terms": res.initial_terms, "units": "normalized"}
    export_trajectory(out / "x", res.traj_x, dict(manifest, transform=_transform_json(tx)))
    export_trajectory(out / "y", res.traj_y, dict(manifest, transform=_transform_json(ty)))
    np.save(out / "frames_x.npy", res.traj_x.frames)
    np.save(out / "frames_y.npy", res.traj_y.frames)
    _dump(out / "manifest.json", dict(manifest, T=cfg.T, displacement_x=res.traj_x.displacement(),
                                      displacement_y=res.traj_y.displacement()))
    if cfg.figures:
        plotting.plot_trace(out / "loss.png", {"spatial": res.trace}, "trajectory optimization")
    return {"stage": "interpolate", "initial_loss": res.trace[0], "best_loss": min(res.trace),
            "displacement": res.traj_x.displacement() + res.traj_y.displacement()}


def run_tta(cfg: PipelineConfig) -> dict:
    mx, _ = _load(cfg.mesh_x, cfg)
    my, _ = _load(cfg.mesh_y, cfg)
    pxy, _ = _maps(cfg, mx, my)
    d = Path(cfg.outdir) / "interpolate"
    for name in ("frames_x.npy", "frames_y.npy"):
        if not (d / name).is_file():
            raise ParseError(f"{d / name}: missing; run the interpolate stage first")
    tx = Trajectory(np.load(d / "frames_x.npy"), mx)
    ty = Trajectory(np.load(d / "frames_y.npy"), my)
    field = adapt(tx, ty, mx, cfg.lambda_d, cfg.tta_iters, cfg.tta_step)
    final = final_pointmap(my, final_source(tx, ty, field, pxy, cfg.final_map_source))
    T = tx.T
    before = [chamfer(tx.frames[k], ty.frames[T - k]) for k in range(T + 1)]
    after = [chamfer(tx.frames[k] + field.deltas[k], ty.frames[T - k]) for k in range(T + 1)]

    out = _stage_dir(cfg, "tta")
    save_field(out / "field_x.sfld", field)
    save_hard_map(out / "final_xy.txt", final)
    for ts in (0.0, 0.5, 1.0):
        sub = out / f"blend_ts{int(round(ts * 100)):03d}"
        sub.mkdir(exist_ok=True)
        for k in range(T + 1):
            write_obj(sub / f"frame_{k:04d}.obj", blend(tx, ty, field, pxy, k, ts), mx.faces)
    _dump(out / "report.json", {"chamfer_before": before, "chamfer_after": after,
                                "objective_initial": field.initial.tolist(), "objective_best": field.best.tolist(),
                                "lambda_d": cfg.lambda_d, "iters": cfg.tta_iters,
                                "final_map_source": cfg.final_map_source})
    if cfg.figures:
        plotting.plot_trace(out / "objective.png", {f"k={k}": tr for k, tr in enumerate(field.traces)},
                            "test-time adaptation")
    return {"stage": "tta", "chamfer_before": float(np.sum(before)), "chamfer_after": float(np.sum(after))}


def run_eval(cfg: PipelineConfig) -> dict:
    mx, _ = _load(cfg.mesh_x, cfg)
    my, _ = _load(cfg.mesh_y, cfg)
    gt = load_hard_map(cfg.gt, my.n_vertices)
    root = Path(cfg.outdir)
    candidates = [Path(cfg.pred)] if cfg.pred else [root / "tta" / "final_xy.txt", root / "match" / "map_xy.txt"]
    pred_path = next((p for p in candidates if p.is_file()), None)
    if pred_path is None:
        raise ParseError(f"{candidates[0]}: no predicted map found")
    pred = load_hard_map(pred_path, my.n_vertices)
    if pred.n_src != mx.n_vertices or gt.n_src != mx.n_vertices:
        raise ParseError(f"maps must have {mx.n_vertices} lines (one per vertex of {cfg.mesh_x})")
    report, errors = evaluate(mx, my, pred, gt, cfg.pck_max, cfg.pck_steps, cfg.conformal_max)
    summary = report.to_dict()
    # relative to outdir when produced by this run, so reports do not depend on where outdir lives
    summary["pred"] = str(pred_path) if cfg.pred else str(pred_path.relative_to(root))
    curves = {f"pred (AUC {report.auc:.3f})": report.pck}
    base_path = root / "match" / "baseline_xy.txt"
    if base_path.is_file() and not cfg.pred:
        base, _ = evaluate(mx, my, load_hard_map(base_path, my.n_vertices), gt, cfg.pck_max, cfg.pck_steps,
                           cfg.conformal_max)
        summary["baseline"] = {"mean_geo_err": base.mean_geo_err, "auc": base.auc,
                               "geo_err_x100": round(100 * base.mean_geo_err, 6)}
        curves[f"WKS baseline (AUC {base.auc:.3f})"] = base.pck

    out = _stage_dir(cfg, "eval")
    _dump(out / "report.json", summary)
    _csv(out / "pck.csv", ["threshold", "fraction"], report.pck)
    _csv(out / "conformal.csv", ["distortion", "fraction"], report.conformal_curve)
    _csv(out / "errors.csv", ["geodesic_error"], [[e] for e in errors])
    if cfg.figures:
        plotting.plot_curves(out / "pck.png", curves, "geodesic error", "fraction of correspondences", cfg.pck_max)
        plotting.plot_curves(out / "conformal.png", {"pred": report.conformal_curve}, "conformal distortion",
                             "fraction of triangles", cfg.conformal_max)
    res = {"stage": "eval", "geo_err_x100": summary["geo_err_x100"], "auc": report.auc}
    if "baseline" in summary:
        res["baseline_geo_err_x100"] = summary["baseline"]["geo_err_x100"]
    return res


def run_ssm(cfg: PipelineConfig) -> dict:
    meshes = [load_mesh(p) for p in cfg.shapes]
    n = meshes[0].n_vertices
    if any(m.n_vertices != n for m in meshes):
        raise ParseError("ssm shapes must be in correspondence (equal vertex counts)")
    X = np.stack([m.vertices for m in meshes])
    s = len(X)
    q = min(cfg.ssm_modes or s - 1, s - 1)
    model = build_ssm(X, q)
    q = model.q
    qs = list(range(1, min(q, s - 2) + 1))
    gen = [generality(X, qq) for qq in qs]
    spec = specificity(model, q, cfg.ssm_trials, cfg.seed)

    out = _stage_dir(cfg, "ssm")
    save_ssm(out / "model.ssm", model)
    write_obj(out / "mean.obj", model.mean, meshes[0].faces)
    for j in range(min(q, 3)):
        for sign, tag in ((2.0, "plus2"), (-2.0, "minus2")):
            c = np.zeros(j + 1)
            c[j] = sign
            write_obj(out / f"mode{j + 1}_{tag}.obj", sample_ssm(model, c), meshes[0].faces)
    _dump(out / "report.json", {"shapes": s, "n": n, "q": q, "variances": model.variances.tolist(),
                                "generality": dict(zip(map(str, qs), gen)), "specificity": spec,
                                "trials": cfg.ssm_trials, "seed": cfg.seed})
    _csv(out / "generality.csv", ["modes", "generality"], list(zip(qs, gen)))
    if cfg.figures and qs:
        plotting.plot_series(out / "generality.png", qs, {"generality": gen}, "modes", "root Chamfer")
    return {"stage": "ssm", "modes": q, "generality": gen[-1] if gen else None, "specificity": spec}


def run_pipeline(cfg: PipelineConfig) -> list:
    results = [run_match(cfg), run_interpolate(cfg), run_tta(cfg)]
    if cfg.gt:
        results.append(run_eval(cfg))
    if cfg.shapes:
        results.append(run_ssm(cfg))
    return results


STAGES = {
    "match": run_match,
    "interpolate": run_interpolate,
    "tta": run_tta,
    "eval": run_eval,
    "ssm": run_ssm,
    "pipeline": run_pipeline,
}
