"""Experiment orchestration: validation, dispatch, persistence, manifests.

Every experiment writes deterministic result files (CSV tables, JSON
summaries) into the output directory plus a manifest.json recording the
config hash, code version, file hashes, gate outcomes and every dropped
rung/sample with a reason code.  Result files are byte-identical across
reruns and worker counts; only the manifest carries timestamps.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, analytics, boundary, brownian, fractal, gff, measure
from .config import ConfigError, ExperimentConfig, config_hash
from .seeds import derive_seed, rng_for

__all__ = ["Diagnostic", "RunManifest", "validate", "run", "worker_count"]

GATE_ANALYTIC_TOL = 1e-10
GATE_ROUNDTRIP_TOL = 1e-12
GATE_FPT_Z = 4.0
GATE_KPZ_ABS = 0.1


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning" | "info"
    message: str


@dataclass
class RunManifest:
    """Record of one run: what was written, what passed, what was dropped."""

    experiment: str
    config_hash: str
    version: str
    started: str
    finished: str = ""
    files: list[dict] = field(default_factory=list)
    gates: list[dict] = field(default_factory=list)
    dropped: list[dict] = field(default_factory=list)

    @property
    def all_gates_passed(self) -> bool:
        return all(g["passed"] for g in self.gates)


def worker_count() -> int:
    env = os.environ.get("LQG_THREADS")
    if env:
        return max(1, int(env))
    return 1


def validate(cfg: ExperimentConfig) -> list[Diagnostic]:
    """Static checks: resolution rules, parameter ranges, rough runtime."""
    out: list[Diagnostic] = []
    err = lambda m: out.append(Diagnostic("error", m))
    warn = lambda m: out.append(Diagnostic("warning", m))
    info = lambda m: out.append(Diagnostic("info", m))

    if not cfg.gamma_list:
        err("gamma_list is empty")
    if any(g <= 0 for g in cfg.gamma_list):
        err("gamma_list entries must be positive")
    for name in ("n_fields", "n_paths", "n_samples", "n_points", "grid_n"):
        if getattr(cfg, name) < 1:
            err(f"{name} must be >= 1")
    if cfg.grid_n & (cfg.grid_n - 1):
        err(f"grid_n={cfg.grid_n} is not a power of two")
    spacing = 1.0 / cfg.grid_n
    if cfg.experiment in ("gff-stats",):
        for e in cfg.eps_list:
            if e < 2 * spacing:
                err(f"eps rung {e} below the resolution floor 2*spacing = {2 * spacing}")
    if cfg.experiment in ("measure-scan", "kpz-verify", "boundary-verify"):
        for g in cfg.gamma_list:
            if g > 2.0:
                err(f"gamma={g}: bulk quantum measure undefined for gamma > 2; "
                    "use the fpt-run duality experiment instead")
            elif g == 2.0:
                warn("gamma = 2 is critical; estimator variance is unbounded there")
        for d in cfg.delta_list:
            if d <= 0:
                err(f"delta rung {d} must be positive")
    if cfg.experiment == "fpt-run":
        if cfg.dt <= 0:
            err("dt must be positive")
        if any(x < 0 for x in cfg.x_list):
            err("x_list entries must be nonnegative")
        if any(A <= 0 for A in cfg.A_list):
            err("A_list entries must be positive")
        steps = sum(cfg.n_paths * max(1.0, A / max(abs(analytics.gamma_params(g).a), 0.1)) / cfg.dt
                    for g in cfg.gamma_list for A in cfg.A_list)
        info(f"fpt-run: about {steps:.2e} Euler steps")
    if cfg.experiment in ("kpz-verify", "boundary-verify"):
        if cfg.mask_kind not in (fractal.MASK_KINDS if cfg.experiment == "kpz-verify"
                                 else boundary.BOUNDARY_MASK_KINDS):
            err(f"mask kind {cfg.mask_kind!r} not valid for {cfg.experiment}")
        work = len(cfg.gamma_list) * cfg.n_fields
        info(f"{cfg.experiment}: {work} field pipelines at n={cfg.grid_n}")
    if cfg.grid_n > 4096:
        err(f"grid_n={cfg.grid_n} too large (> 4096)")
    return out


# ---------------------------------------------------------------------------
# deterministic file writing
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    if isinstance(v, np.bool_):
        return str(bool(v))
    return str(v)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    path.write_text(buf.getvalue())


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def _exp_kpz_table(cfg: ExperimentConfig, out: Path, manifest: RunManifest):
    rows = []
    worst_round = 0.0
    worst_resid = 0.0
    for gamma in cfg.gamma_list:
        g = analytics.gamma_params(gamma)
        for x in cfg.x_list:
            se = analytics.kpz_delta_of_x(g, x)
            rep = analytics.duality_report(g, x)
            worst_round = max(worst_round,
                              abs(analytics.kpz_x_of_delta(g, se.delta) - x) / max(1.0, x))
            worst_resid = max(worst_resid, rep.max_residual)
            rows.append([gamma, x, se.beta, se.delta, se.alpha, g.gamma_str,
                         rep.duality_residual, rep.product_residual,
                         rep.alpha_residual, rep.seiberg_excess,
                         rep.str_product_residual])
    _write_csv(out / "kpz_table.csv",
               ["gamma", "x", "beta", "delta", "alpha", "gamma_str",
                "res_duality", "res_product", "res_alpha", "seiberg_excess",
                "res_str_product"], rows)
    manifest.gates.append({"name": "kpz-roundtrip", "passed": worst_round <= GATE_ROUNDTRIP_TOL,
                           "detail": f"worst relative roundtrip residual {worst_round:.3e}"})
    manifest.gates.append({"name": "kpz-identities", "passed": worst_resid <= GATE_ANALYTIC_TOL,
                           "detail": f"worst duality residual {worst_resid:.3e}"})
    return ["kpz_table.csv"]


def _exp_gff_stats(cfg: ExperimentConfig, out: Path, manifest: RunManifest):
    grid = gff.Grid(cfg.grid_n)
    rep = gff.variance_law_report(grid, cfg.eps_list, cfg.n_fields, cfg.seed)
    table = gff.build_green_table(grid)
    rows = []
    for p, z in enumerate(rep.probes):
        cz = gff.conformal_radius_at(table, z)
        for k, e in enumerate(rep.eps):
            theory = -math.log(e) + math.log(cz) if math.isfinite(cz) else math.nan
            rows.append([z[0], z[1], e, rep.var_probe[p, k], theory])
    _write_csv(out / "gff_variance.csv",
               ["z_x", "z_y", "eps", "var", "var_theory"], rows)
    pair_rows = []
    for i, ei in enumerate(rep.eps):
        for j in range(i + 1, len(rep.eps)):
            ej = rep.eps[j]
            pair_rows.append([ei, ej, rep.pair_var[i, j], abs(math.log(ei / ej))])
    _write_csv(out / "gff_pair_variance.csv",
               ["eps_coarse", "eps_fine", "var_diff", "var_theory"], pair_rows)
    _write_json(out / "gff_summary.json", {
        "slope": rep.slope, "slope_stderr": rep.slope_stderr,
        "intercept_residual": rep.intercept_residual, "n_fields": rep.n_fields,
    })
    return ["gff_variance.csv", "gff_pair_variance.csv", "gff_summary.json"]


def _exp_measure_scan(cfg: ExperimentConfig, out: Path, manifest: RunManifest):
    grid = gff.Grid(cfg.grid_n)
    gamma = cfg.gamma_list[0]
    eps_density = cfg.eps_density or 4.0 * grid.spacing
    field_ = gff.sample_gff(grid, derive_seed(cfg.seed, 0))
    density = measure.build_quantum_density(field_, gamma, eps_density)
    rng = rng_for(cfg.seed, 1)
    zs = measure.sample_quantum_points(density, rng, cfg.n_points)
    radii, hit, reasons = measure.quantum_ball_radii(field_, gamma, zs,
                                                     np.asarray(cfg.delta_list))
    rows = []
    drop_counts: dict[str, int] = {}
    for p in range(len(zs)):
        for d, delta in enumerate(cfg.delta_list):
            rows.append([zs[p, 0], zs[p, 1], delta, radii[p, d], bool(hit[p, d]),
                         reasons[p, d]])
            if not hit[p, d]:
                drop_counts[reasons[p, d]] = drop_counts.get(reasons[p, d], 0) + 1
    _write_csv(out / "measure_scan.csv",
               ["z_x", "z_y", "delta", "eps", "hit", "reason"], rows)
    for r, c in sorted(drop_counts.items()):
        manifest.dropped.append({"reason": r, "count": c})
    return ["measure_scan.csv"]


def _exp_fpt_run(cfg: ExperimentConfig, out: Path, manifest: RunManifest):
    records = []
    files = []
    worst_z = 0.0
    nw = worker_count()
    for gi, gamma in enumerate(cfg.gamma_list):
        g = analytics.gamma_params(gamma)
        for ai, A in enumerate(cfg.A_list):
            t_max = cfg.t_max or brownian.default_t_max(g, A)
            seed = derive_seed(cfg.seed, gi, ai)
            T, hit, _ = brownian.simulate_stopping_times(
                g, A, cfg.dt, t_max, cfg.n_paths, seed,
                antithetic=cfg.antithetic, workers=nw)
            for x in cfg.x_list:
                est = brownian.martingale_from_paths(g, x, A, T, hit)
                worst_z = max(worst_z, abs(est.z_score))
                records.append({
                    "gamma": gamma, "x": x, "A": A, "value": est.value,
                    "stderr": est.stderr, "closed_form": est.closed_form,
                    "z_score": est.z_score, "hit_rate": est.hit_rate,
                    "n_paths": est.n_paths,
                })
            if cfg.dump_hit_times:
                name = f"hit_times_g{gi}_A{ai}.csv"
                _write_csv(out / name, ["path", "T", "hit"],
                           [[i, T[i] if hit[i] else math.inf, bool(hit[i])]
                            for i in range(len(T))])
                files.append(name)
    _write_json(out / "fpt_run.json", {"records": records})
    files.insert(0, "fpt_run.json")
    manifest.gates.append({
        "name": "martingale-identity",
        "passed": worst_z <= GATE_FPT_Z,
        "detail": f"worst |z| = {worst_z:.2f} (gate {GATE_FPT_Z})",
    })
    return files


def _exp_kpz_verify(cfg: ExperimentConfig, out: Path, manifest: RunManifest):
    grid = gff.Grid(cfg.grid_n)
    mask = fractal.make_fractal(cfg.mask_kind, grid, depth=cfg.mask_depth,
                                seed=cfg.seed)
    rep = fractal.kpz_verify(mask, cfg.gamma_list, delta_ladder=cfg.delta_list,
                             n_fields=cfg.n_fields, n_points=cfg.n_points,
                             seed=cfg.seed, eps_density=cfg.eps_density or None,
                             workers=worker_count())
    rows = [[r.gamma, r.x, r.delta_hat, r.stderr, r.delta_theory, r.z_score, r.r2]
            for r in rep.rows]
    _write_csv(out / "kpz_verify.csv",
               ["gamma", "x", "delta_hat", "stderr", "delta_theory", "z_score", "r2"],
               rows)
    _write_json(out / "kpz_verify.json", {
        "mask": rep.mask_kind,
        "rows": [{"gamma": r.gamma, "x": r.x, "delta_hat": r.delta_hat,
                  "stderr": r.stderr, "delta_theory": r.delta_theory,
                  "z_score": r.z_score} for r in rep.rows],
    })
    for r, diag in zip(rep.rows, rep.diagnostics):
        for reason, cnt in sorted(diag.excluded.items()):
            manifest.dropped.append({"reason": f"gamma={r.gamma}: {reason}", "count": cnt})
        for rung in diag.dropped_rungs:
            manifest.dropped.append({"reason": f"gamma={r.gamma}: rung {rung} failed "
                                               "hit-count hygiene", "count": 1})
        gated = r.gamma < 2.0 and mask.known_x is not None
        if gated:
            manifest.gates.append({
                "name": f"kpz-slope-gamma-{r.gamma}",
                "passed": abs(r.delta_hat - r.delta_theory) <= GATE_KPZ_ABS,
                "detail": f"|{r.delta_hat:.4f} - {r.delta_theory:.4f}| vs {GATE_KPZ_ABS}",
            })
    return ["kpz_verify.csv", "kpz_verify.json"]


def _exp_boundary_verify(cfg: ExperimentConfig, out: Path, manifest: RunManifest):
    grid = gff.Grid(cfg.grid_n, bc=gff.BC_FREE)
    mask = boundary.make_boundary_fractal(cfg.mask_kind, grid, depth=cfg.mask_depth)
    rows = []
    for gi, gamma in enumerate(cfg.gamma_list):
        est, diag = boundary.boundary_quantum_exponent(
            mask, gamma, delta_ladder=cfg.delta_list, n_fields=cfg.n_fields,
            n_points=cfg.n_points, seed=derive_seed(cfg.seed, gi),
            eps_density=cfg.eps_density or None, workers=worker_count())
        th = boundary.boundary_delta_theory(gamma, mask.known_x)
        z = (est.exponent - th) / est.stderr if est.stderr > 0 else math.inf
        rows.append([gamma, "bottom", mask.known_x, est.exponent, est.stderr, th, z, est.r2])
        for reason, cnt in sorted(diag.excluded.items()):
            manifest.dropped.append({"reason": f"gamma={gamma}: {reason}", "count": cnt})
        manifest.gates.append({
            "name": f"boundary-kpz-gamma-{gamma}",
            "passed": abs(est.exponent - th) <= GATE_KPZ_ABS,
            "detail": f"|{est.exponent:.4f} - {th:.4f}| vs {GATE_KPZ_ABS}",
        })
    _write_csv(out / "boundary_verify.csv",
               ["gamma", "edge", "x", "delta_hat", "stderr", "delta_theory",
                "z_score", "r2"], rows)
    return ["boundary_verify.csv"]


_DISPATCH = {
    "kpz-table": _exp_kpz_table,
    "gff-stats": _exp_gff_stats,
    "measure-scan": _exp_measure_scan,
    "fpt-run": _exp_fpt_run,
    "kpz-verify": _exp_kpz_verify,
    "boundary-verify": _exp_boundary_verify,
}


def run(cfg: ExperimentConfig) -> RunManifest:
    """Validate, dispatch, write results and the manifest.

    Raises ConfigError on validation errors before any compute; gate failures
    are recorded in the manifest (the CLI turns them into exit status 1).
    """
    diags = validate(cfg)
    errors = [d for d in diags if d.severity == "error"]
    if errors:
        raise ConfigError("; ".join(d.message for d in errors))
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        experiment=cfg.experiment,
        config_hash=config_hash(cfg),
        version=__version__,
        started=datetime.now(timezone.utc).isoformat(),
    )
    names = _DISPATCH[cfg.experiment](cfg, out, manifest)
    manifest.finished = datetime.now(timezone.utc).isoformat()
    for name in names:
        manifest.files.append({"name": name, "sha256": _sha256(out / name)})
    _write_json(out / "manifest.json", {
        "experiment": manifest.experiment,
        "config_hash": manifest.config_hash,
        "version": manifest.version,
        "started": manifest.started,
        "finished": manifest.finished,
        "files": manifest.files,
        "gates": manifest.gates,
        "dropped": manifest.dropped,
    })
    return manifest
