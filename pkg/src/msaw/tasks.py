"""Task orchestration: run a configured experiment and write its outputs.

``report.json`` is a pure function of the configuration; wall-clock data go
to ``metadata.json``.  Every file is written atomically.
"""
from __future__ import annotations

import logging
import math
import os
import time
import traceback
from datetime import datetime, timezone

import numpy as np

from . import __version__
from . import storage as S
from . import verify as V
from .config import ExperimentConfig
from .dynamics import NumericError, WalkerState, default_snapshot_family, run_ensemble, run_replica
from .estimators import Underpowered, mean_se
from .gibbs import McmcConfig, TorusField, gelman_rubin, mcmc_chains, sample_gff_batch, stationary_gaussian_scale
from .lattice import SpectralCache, Torus
from .rates import InvalidRateSpec, RateSpec
from .seeding import replica_rng, replica_seed

log = logging.getLogger(__name__)

EXIT_PASS, EXIT_FAIL, EXIT_ERROR = 0, 1, 2


def _torus(cfg: ExperimentConfig) -> Torus:
    return Torus(int(cfg.lattice["d"]), int(cfg.lattice["L"]))


def _mcmc(cfg: ExperimentConfig) -> McmcConfig:
    m = cfg.mcmc
    return McmcConfig(sweeps=m.get("sweeps", 200), burn_in=m.get("burn_in", 100),
                      proposal_scale=m.get("proposal_scale", 1.0), seed=cfg.seed)


def _require_valid(spec: RateSpec) -> dict:
    chk = V.rate_check(spec)
    if spec.interaction and not chk["passed"]:
        raise InvalidRateSpec("; ".join(chk["messages"]) or "rate conditions violated")
    if not spec.interaction:
        chk["passed"] = True
        chk["note"] = "interaction disabled, w == gamma"
    return chk


# ---------------------------------------------------------------------------
# individual tasks; each returns (checks, files) where files maps name -> bytes/str


def task_sample_gibbs(cfg: ExperimentConfig, threads: int = 1):
    spec = cfg.spec
    torus = _torus(cfg)
    cache = SpectralCache.build(torus)
    n = int(cfg.run["replicas"])
    checks = [_require_valid(spec)] if spec.interaction else []
    files = {}
    if spec.is_gaussian or not spec.interaction:
        scale = stationary_gaussian_scale(spec) if spec.interaction else 1.0
        rng = replica_rng(cfg.seed, 0, 1)
        fields = sample_gff_batch(cache, rng, n) * scale
        tag = "exact-gaussian"
        checks.append(V.green_identity(cache))
        checks.append(V.gff_covariance_check(cache, int(cfg.verify.get("gff_samples", max(n, 1000))), cfg.seed))
    else:
        chains = int(cfg.mcmc.get("chains", n))
        fields, trace = mcmc_chains(spec, torus, _mcmc(cfg), chains)
        tag = "mcmc"
        rhat = gelman_rubin(trace[:, _mcmc(cfg).burn_in:])
        checks.append({"name": "gelman_rubin", "rhat": rhat, "passed": bool(rhat < 1.1)})
    if spec.interaction:
        lambdas = [float(x) for x in cfg.verify.get("bl_lambdas", [0.0, 0.2, 0.5])]
        checks.extend(V.gibbs_battery(fields, spec, cache, lambdas))
    seed0 = replica_seed(cfg.seed, 0, 1)
    first = TorusField(torus, fields[0] - fields[0].mean(), tag, seed0)
    files["field_0000.bin"] = S.field_to_bytes(first)
    files["field_0000.csv"] = S.field_to_csv(first)
    return checks, files


def _walk_ensemble(cfg: ExperimentConfig, threads: int, snapshots: bool):
    spec = cfg.spec
    torus = _torus(cfg)
    T = float(cfg.run["T"])
    times = sorted(set(cfg.sample_times) | ({0.0} if snapshots else set()))
    init = cfg.run.get("init", "stationary")
    ens = run_ensemble(spec, torus, T, times, int(cfg.run["replicas"]), cfg.seed, init=init,
                       snapshots=True if snapshots else None, threads=threads, mcmc=_mcmc(cfg), check=False)
    return ens


def _trajectory_records(ens) -> list:
    recs = []
    for i in range(ens.displacement.shape[0]):
        for k, t in enumerate(ens.times):
            rec = {"replica": i, "t": float(t), "X": ens.displacement[i, k].tolist(),
                   "comp_bar": ens.comp_bar[i, k].tolist(), "comp_tilde": ens.comp_tilde[i, k].tolist(),
                   "N": ens.gamma_displacement[i, k].tolist()}
            if ens.snapshots is not None:
                rec["grad"] = ens.snapshots[i, k].tolist()
            recs.append(rec)
    return recs


def _msd_table(ens) -> str:
    rows = []
    for k, t in enumerate(ens.times):
        sq = (ens.displacement[:, k, :] ** 2).sum(axis=1).astype(float)
        m, se = mean_se(sq) if sq.size > 1 else (float(sq.mean()), float("nan"))
        rows.append([float(t), float(m), float(se)])
    return S.csv_table(["t", "msd", "se"], rows)


def task_run_walk(cfg: ExperimentConfig, threads: int = 1):
    spec = cfg.spec
    torus = _torus(cfg)
    checks = [_require_valid(spec)]
    snaps = bool(cfg.run.get("snapshots", False))
    ens = _walk_ensemble(cfg, threads, snaps)
    checks.append({"name": "ensemble_hazard_inversion", "max_relative_residual": ens.max_residual,
                   "passed": ens.max_residual <= 1e-10})
    checks.append({"name": "winding", "fraction_reaching_quarter_period": ens.wound_fraction,
                   "advisory": True, "passed": True})
    if not spec.interaction and ens.displacement.shape[0] >= 30:
        checks.append(V.srw_msd_check(ens, spec.gamma, torus.d, [t for t in ens.times if t > 0]))
    # final state of replica 0 for restarts
    _, state = run_replica(spec, torus, float(cfg.run["T"]), [], cfg.seed, 0,
                           cfg.run.get("init", "stationary"), mcmc=_mcmc(cfg))
    files = {
        "trajectories.jsonl": S.jsonl_lines(_trajectory_records(ens)),
        "msd.csv": _msd_table(ens),
        "walker_0000.bin": S.walker_to_bytes(state.local_time, torus, state.t, state.displacement,
                                             state.jump_count, state.rng.bit_generator.state,
                                             replica_seed(cfg.seed, 0, 0)),
    }
    return checks, files, ens


class _Loaded:
    """Ensemble-shaped view of a trajectories file."""

    def __init__(self, records: list):
        reps = sorted({r["replica"] for r in records})
        times = sorted({r["t"] for r in records})
        ti = {t: k for k, t in enumerate(times)}
        R, Sn = len(reps), len(times)
        d = len(records[0]["X"])
        self.times = np.array(times)
        self.displacement = np.zeros((R, Sn, d), dtype=np.int64)
        self.comp_bar = np.zeros((R, Sn, d))
        self.comp_tilde = np.zeros((R, Sn, d))
        self.gamma_displacement = np.zeros((R, Sn, d), dtype=np.int64)
        has_grad = "grad" in records[0]
        self.snapshots = np.zeros((R, Sn, len(records[0]["grad"]))) if has_grad else None
        for r in records:
            i, k = r["replica"], ti[r["t"]]
            self.displacement[i, k] = r["X"]
            self.comp_bar[i, k] = r["comp_bar"]
            self.comp_tilde[i, k] = r["comp_tilde"]
            self.gamma_displacement[i, k] = r.get("N", [0] * d)
            if has_grad:
                self.snapshots[i, k] = r["grad"]


def _estimate_checks(cfg: ExperimentConfig, ens) -> list:
    spec = cfg.spec
    torus = _torus(cfg)
    T = float(ens.times[-1])
    est = cfg.estimate
    grid = [float(t) for t in est.get("t_grid", [])] or [t for t in ens.times if t >= T / 4 - 1e-9]
    grid = [t for t in grid if np.any(np.isclose(ens.times, t))]
    clt = [float(t) for t in est.get("clt_times", [])]
    if not clt:
        half = T / 2
        clt = [half, T] if np.any(np.isclose(ens.times, half)) else None
    checks = V.walk_battery(ens, spec, torus, T, t_grid=grid, clt_times=clt,
                            stationarity_t=est.get("stationarity_t", T) if ens.snapshots is not None else None,
                            yaglom_t=est.get("yaglom_t", ens.times[1] if len(ens.times) > 1 else None)
                            if ens.snapshots is not None else None,
                            ad_seed=cfg.seed)
    if not spec.interaction:
        sig = next(c for c in checks if c["name"] == "sigma")
        diag = np.diag(np.array(sig["sigma2"]))
        se = np.diag(np.array(sig["se"]))
        ok = bool(np.all(np.abs(diag - 2 * spec.gamma) <= 3 * se))
        checks.append({"name": "sigma_srw_exact", "diag": diag.tolist(), "se": se.tolist(),
                       "exact": 2 * spec.gamma, "passed": ok})
    return checks


def task_estimate(cfg: ExperimentConfig, threads: int = 1):
    src = cfg.estimate.get("input")
    if src:
        ens = _Loaded(S.read_jsonl(src))
        checks = []
    else:
        checks, _, ens = task_run_walk(cfg, threads)
    checks = checks + _estimate_checks(cfg, ens)
    rows = [[c["name"], int(bool(c.get("passed")))] for c in checks]
    return checks, {"checks.csv": S.csv_table(["check", "passed"], rows)}


def task_fock_check(cfg: ExperimentConfig, threads: int = 1):
    f = cfg.fock
    checks = V.fock_battery(L=f.get("L", 4), d=f.get("d", 3), n_max=f.get("n_max", 2),
                            norm_L=f.get("norm_L", 32), seed=cfg.seed)
    return checks, {}


def task_gsc_threshold(cfg: ExperimentConfig, threads: int = 1):
    g = cfg.gsc
    return V.gsc_battery(g.get("r", 4), g.get("kappa", 2.0), g.get("C", 0.0)), {}


def task_full_verify(cfg: ExperimentConfig, threads: int = 1):
    spec = cfg.spec
    torus = _torus(cfg)
    cache = SpectralCache.build(torus)
    vf = cfg.verify
    checks = [_require_valid(spec), V.green_identity(cache), V.gamma_kernel_integral(torus.d)
              if torus.d >= 3 else {"name": "gamma_kernel", "skipped": "d < 3", "passed": True}]
    checks.append(V.gff_covariance_check(cache, int(vf.get("gff_samples", 2000)), cfg.seed))
    checks.append(V.hazard_residual_check(spec, torus, 2000, cfg.seed))
    if not spec.interaction:
        checks.append(V.jump_time_ks(spec, torus, int(vf.get("ks_draws", 20000)), cfg.seed))
    walk_checks, files, ens = task_run_walk(cfg, threads)
    checks.extend(c for c in walk_checks if c["name"] != "rate_conditions")
    checks.extend(_estimate_checks(cfg, ens))
    if spec.interaction:
        g_checks, g_files = task_sample_gibbs(cfg, threads)
        checks.extend(c for c in g_checks if c["name"] not in ("rate_conditions", "green_identity", "gff_covariance"))
    checks.extend(task_fock_check(cfg, threads)[0])
    checks.extend(task_gsc_threshold(cfg, threads)[0])
    return checks, {"msd.csv": files["msd.csv"]}


TASK_FUNCS = {
    "sample-gibbs": task_sample_gibbs,
    "run-walk": lambda c, t=1: task_run_walk(c, t)[:2],
    "estimate": task_estimate,
    "fock-check": task_fock_check,
    "gsc-threshold": task_gsc_threshold,
    "full-verify": task_full_verify,
}


def _text_table(report: dict) -> str:
    width = max([len(c["name"]) for c in report["checks"]] + [5])
    lines = [f"{'check'.ljust(width)}  result", f"{'-' * width}  ------"]
    for c in report["checks"]:
        lines.append(f"{c['name'].ljust(width)}  {'pass' if c.get('passed') else 'FAIL'}")
    lines.append(f"{'overall'.ljust(width)}  {'pass' if report['passed'] else 'FAIL'}")
    return "\n".join(lines) + "\n"


def _sanitize(obj):
    """Plain JSON types; non-finite floats become strings so output stays strict JSON."""
    if isinstance(obj, dict):
        return {str(k): _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _sanitize(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def run_task(cfg: ExperimentConfig, task: str | None = None, threads: int = 1, out_dir: str | None = None) -> dict:
    """Run one task and write ``report.json``, ``report.txt`` and ``metadata.json``.

    Returns the report; ``report["exit_code"]`` is 0 (all pass), 1 (a
    statistical check failed) or 2 (numeric or runtime error).
    """
    task = task or cfg.task
    if task not in TASK_FUNCS:
        raise ValueError(f"unknown task {task!r}")
    out_dir = out_dir or cfg.output.get("dir", "out")
    started = time.time()
    report = {
        "task": task,
        "version": __version__,
        "config_hash": cfg.hash(),
        "config": cfg.physics_dict(),
        "seed": cfg.seed,
    }
    files = {}
    try:
        checks, files = TASK_FUNCS[task](cfg, threads)
        checks = [_sanitize(c) for c in checks]
        report["checks"] = checks
        report["passed"] = all(bool(c.get("passed")) for c in checks)
        report["exit_code"] = EXIT_PASS if report["passed"] else EXIT_FAIL
    except (NumericError, InvalidRateSpec, Underpowered, ValueError, ArithmeticError, RuntimeError) as exc:
        log.error("task %s failed: %s", task, exc)
        report["checks"] = []
        report["passed"] = False
        report["error"] = {"type": type(exc).__name__, "message": f"{task}: {exc}"}
        report["exit_code"] = EXIT_ERROR
        log.debug("%s", traceback.format_exc())
    report = _sanitize(report)
    os.makedirs(out_dir, exist_ok=True)
    for name, data in sorted(files.items()):
        path = os.path.join(out_dir, name)
        (S.write_bytes if isinstance(data, bytes) else S.write_text)(path, data)
    S.write_json(os.path.join(out_dir, "report.json"), report)
    S.write_text(os.path.join(out_dir, "report.txt"), _text_table(report))
    S.write_json(os.path.join(out_dir, "metadata.json"), {
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "wall_seconds": round(time.time() - started, 3),
        "threads": threads,
        "config_hash": report["config_hash"],
    })
    return report
