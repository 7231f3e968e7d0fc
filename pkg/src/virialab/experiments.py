"""Reproducible experiment runner: strict JSON configs, CSV/JSON artifacts.

Each run writes curve.csv (when a sweep is involved), report.json and
manifest.json under the output directory; the manifest echoes every resolved
setting so any number in the outputs can be recomputed from it.
"""

import json
import math
import os
import time as _time
from dataclasses import dataclass, field

import numpy as np

from . import __version__, analysis, pde, potentials, virial
from .dynamics import (
    SimulationConfig,
    build_initial_lattice,
    relax_deterministic,
    stable_dt,
)
from .errors import ConfigurationError
from .torus import TorusBox

KINDS = ("sweep", "claim-compare", "exponent-table", "cv", "relax", "pde")

_COMMON_FIELDS = {"kind", "seed"}
# dt_per_point and particle_counts are derived values; they are accepted on
# input (so a resolved echo round-trips) but always recomputed and checked
_SIM_FIELDS = {
    "potential", "box", "noise_sigma", "dt", "dt_cap", "burn_in_steps",
    "n_samples", "sample_stride", "min_separation", "init_mode", "rho_grid",
    "dt_per_point", "particle_counts",
}
_FIELDS_BY_KIND = {
    "sweep": _SIM_FIELDS,
    "exponent-table": _SIM_FIELDS | {"fit_windows"},
    "claim-compare": _SIM_FIELDS | {"prediction", "compare_window", "fit_windows"},
    "cv": {"potential", "cv_dimension"},
    "relax": {"potential", "box", "relax"},
    "pde": {"pde"},
}

_SIM_DEFAULTS = {
    "noise_sigma": 1.0,
    "dt": "auto",
    "dt_cap": 1e-4,
    "burn_in_steps": 100_000,
    "n_samples": 1000,
    "sample_stride": 20,
    "min_separation": None,
    "init_mode": None,  # resolved per dimension/potential
}


@dataclass
class ExperimentConfig:
    """Fully resolved experiment description."""

    kind: str
    seed: int
    raw: dict = field(default_factory=dict)
    resolved: dict = field(default_factory=dict)

    def to_json_dict(self):
        return dict(self.resolved)


def _reject_unknown(record, allowed, where):
    unknown = set(record) - set(allowed)
    if unknown:
        raise ConfigurationError(f"unknown field(s) {sorted(unknown)} in {where}")


def _require(record, fields, where):
    missing = [f for f in fields if f not in record]
    if missing:
        raise ConfigurationError(f"missing required field(s) {missing} in {where}")


def _parse_box(record):
    _require(record, ["dimension", "side"], "box")
    _reject_unknown(record, {"dimension", "side"}, "box")
    return TorusBox(int(record["dimension"]), float(record["side"]))


def load_config(path_or_dict, default_seed=0) -> ExperimentConfig:
    """Parse and validate an experiment config (strict: typos are errors).

    Every default is resolved here and echoed into `resolved`, which is what
    run_experiment executes and what lands in the manifest.
    """
    if isinstance(path_or_dict, dict):
        raw = dict(path_or_dict)
    else:
        try:
            with open(path_or_dict) as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config parse error at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError("config root must be a JSON object")
    kind = raw.get("kind")
    if kind not in KINDS:
        raise ConfigurationError(f"kind must be one of {KINDS}, got {kind!r}")
    _reject_unknown(raw, _COMMON_FIELDS | _FIELDS_BY_KIND[kind], f"{kind} config")

    seed = int(raw.get("seed", default_seed))
    resolved = {"kind": kind, "seed": seed}

    if kind in ("sweep", "exponent-table", "claim-compare"):
        _require(raw, ["potential", "box", "rho_grid"], f"{kind} config")
        spec = potentials.spec_from_dict(raw["potential"])
        box = _parse_box(raw["box"])
        merged = dict(_SIM_DEFAULTS)
        for k in _SIM_DEFAULTS:
            if k in raw:
                merged[k] = raw[k]
        init_mode = merged["init_mode"]
        if init_mode is None:
            init_mode = "grid" if box.dimension > 1 else "repulsive_lattice"
        rho_grid = [float(r) for r in raw["rho_grid"]]
        if len(rho_grid) == 0:
            raise ConfigurationError("rho_grid must be non-empty")
        if any(b <= a for a, b in zip(rho_grid, rho_grid[1:])):
            raise ConfigurationError("rho_grid must be strictly increasing")
        dt = merged["dt"]
        dt_cap = float(merged["dt_cap"])
        if dt != "auto":
            dt = float(dt)
            if dt <= 0:
                raise ConfigurationError("dt must be positive or 'auto'")
        dt_per_point = [
            stable_dt(spec, r, box, cap=dt_cap) if dt == "auto" else dt for r in rho_grid
        ]
        resolved.update({
            "potential": potentials.spec_to_dict(spec),
            "box": {"dimension": box.dimension, "side": box.side},
            "noise_sigma": float(merged["noise_sigma"]),
            "dt": dt,
            "dt_cap": dt_cap,
            "dt_per_point": dt_per_point,
            "burn_in_steps": int(merged["burn_in_steps"]),
            "n_samples": int(merged["n_samples"]),
            "sample_stride": int(merged["sample_stride"]),
            "min_separation": merged["min_separation"],
            "init_mode": init_mode,
            "rho_grid": rho_grid,
        })
        # fail fast on invariants (alpha > beta, cutoff <= L/2, ...) at the
        # densest point, where K is largest
        base = _base_sim_config(resolved, spec, box, rho_grid[-1], dt_per_point[-1], seed)
        resolved["particle_counts"] = [
            int(math.floor(r * box.volume)) for r in rho_grid
        ]
        del base

    if kind == "exponent-table" or (kind == "claim-compare" and "fit_windows" in raw):
        windows = raw.get("fit_windows")
        if kind == "exponent-table":
            _require(raw, ["fit_windows"], "exponent-table config")
        if windows is not None:
            if not windows or not all(len(w) == 2 and w[0] < w[1] for w in windows):
                raise ConfigurationError("fit_windows must be [lo, hi] pairs with lo < hi")
            resolved["fit_windows"] = [[float(a), float(b)] for a, b in windows]

    if kind == "claim-compare":
        _require(raw, ["prediction"], "claim-compare config")
        name = raw["prediction"]
        if name not in ("claim1", "claim2", "meanfield"):
            raise ConfigurationError(f"prediction must be claim1|claim2|meanfield, got {name!r}")
        spec = potentials.spec_from_dict(resolved["potential"])
        if name == "claim1" and not isinstance(spec, potentials.PowerLawRepulsive):
            raise ConfigurationError("claim1 prediction needs a power_law_repulsive potential")
        if name == "claim2" and not isinstance(spec, potentials.PowerLawAttractiveRepulsive):
            raise ConfigurationError("claim2 prediction needs a power_law_attractive_repulsive potential")
        resolved["prediction"] = name
        cw = raw.get("compare_window")
        if cw is not None:
            if len(cw) != 2 or not cw[0] < cw[1]:
                raise ConfigurationError("compare_window must be [lo, hi] with lo < hi")
            cw = [float(cw[0]), float(cw[1])]
        resolved["compare_window"] = cw

    if kind == "cv":
        _require(raw, ["potential", "cv_dimension"], "cv config")
        spec = potentials.spec_from_dict(raw["potential"])
        resolved["potential"] = potentials.spec_to_dict(spec)
        resolved["cv_dimension"] = int(raw["cv_dimension"])

    if kind == "relax":
        _require(raw, ["potential", "box", "relax"], "relax config")
        spec = potentials.spec_from_dict(raw["potential"])
        box = _parse_box(raw["box"])
        sub = dict(raw["relax"])
        _require(sub, ["rho"], "relax block")
        _reject_unknown(sub, {"rho", "perturbation", "step", "tol", "max_steps", "init_mode"},
                        "relax block")
        resolved.update({
            "potential": potentials.spec_to_dict(spec),
            "box": {"dimension": box.dimension, "side": box.side},
            "relax": {
                "rho": float(sub["rho"]),
                "perturbation": float(sub.get("perturbation", 0.0)),
                "step": float(sub.get("step", 1e-4)),
                "tol": float(sub.get("tol", 1e-8)),
                "max_steps": int(sub.get("max_steps", 2_000_000)),
                "init_mode": sub.get("init_mode",
                                     "adhesion_cluster"
                                     if isinstance(spec, potentials.PowerLawAttractiveRepulsive)
                                     else "repulsive_lattice"),
            },
        })

    if kind == "pde":
        _require(raw, ["pde"], "pde config")
        sub = dict(raw["pde"])
        _require(sub, ["law", "rho0", "t_end", "dx"], "pde block")
        _reject_unknown(sub, {"law", "rho0", "t_end", "dx", "dt", "snapshot_stride"}, "pde block")
        law = dict(sub["law"])
        if "type" not in law:
            raise ConfigurationError("pde law needs a 'type'")
        rho0 = sub["rho0"]
        if isinstance(rho0, dict):
            _require(rho0, ["shape", "cells"], "pde rho0")
            _reject_unknown(rho0, {"shape", "cells", "mean", "amplitude", "width"}, "pde rho0")
        resolved["pde"] = {
            "law": law,
            "rho0": rho0,
            "t_end": float(sub["t_end"]),
            "dx": float(sub["dx"]),
            "dt": sub.get("dt", "auto"),
            "snapshot_stride": int(sub.get("snapshot_stride", 1)),
        }

    return ExperimentConfig(kind=kind, seed=seed, raw=raw, resolved=resolved)


def _base_sim_config(resolved, spec, box, rho, dt, seed) -> SimulationConfig:
    return SimulationConfig(
        spec=spec,
        box=box,
        rho_nominal=rho,
        noise_sigma=resolved["noise_sigma"],
        dt=dt,
        burn_in_steps=resolved["burn_in_steps"],
        n_samples=resolved["n_samples"],
        sample_stride=resolved["sample_stride"],
        seed=seed,
        min_separation=resolved["min_separation"],
        init_mode=resolved["init_mode"],
    )


def _run_curve(config: ExperimentConfig, threads):
    """Sweep the rho grid point by point (per-point seeds and dt)."""
    res = config.resolved
    spec = potentials.spec_from_dict(res["potential"])
    box = TorusBox(res["box"]["dimension"], res["box"]["side"])
    points, failures = [], []
    for idx, (rho, dt) in enumerate(zip(res["rho_grid"], res["dt_per_point"])):
        try:
            cfg = _base_sim_config(res, spec, box, rho, dt, virial.derived_seed(config.seed, idx))
            points.append(virial.estimate_pressure(cfg, threads=threads))
        except Exception as exc:
            failures.append({"rho": rho, "error": f"{type(exc).__name__}: {exc}"})
    curve = virial.PressureCurve(
        spec, res["noise_sigma"], points,
        provenance={"seed": config.seed, "config_digest": None,
                    "pair_convention": "ordered pairs, unordered pairs counted twice"},
        failures=failures,
    )
    return curve


def _rho0_vector(block, dx):
    M = None
    if isinstance(block, list):
        return np.asarray(block, dtype=float)
    shape = block["shape"]
    M = int(block["cells"])
    x = np.arange(M) / M
    mean = float(block.get("mean", 1.0))
    amp = float(block.get("amplitude", 0.1))
    if shape == "constant":
        return np.full(M, mean)
    if shape == "cosine":
        return mean + amp * np.cos(2 * np.pi * x)
    if shape == "bump":
        width = float(block.get("width", 0.1))
        return mean + amp * np.exp(-((x - 0.5) ** 2) / (2 * width ** 2))
    raise ConfigurationError(f"unknown rho0 shape {shape!r}")


def _pde_law(block):
    t = block["type"]
    rest = {k: v for k, v in block.items() if k != "type"}
    if t == "claim1":
        _require(rest, ["alpha", "r1", "noise_sigma"], "claim1 law")
        return pde.PressureLaw.from_claim1(rest["alpha"], rest["r1"], rest["noise_sigma"])
    if t == "claim2":
        _require(rest, ["alpha", "beta", "r0", "r1", "noise_sigma"], "claim2 law")
        return pde.PressureLaw.from_claim2(rest["alpha"], rest["beta"], rest["r0"],
                                           rest["r1"], rest["noise_sigma"])
    if t == "meanfield":
        _require(rest, ["c_v", "noise_sigma"], "meanfield law")
        return pde.PressureLaw.from_meanfield(rest["c_v"], rest["noise_sigma"])
    if t == "linear":
        _require(rest, ["noise_sigma"], "linear law")
        return pde.PressureLaw.linear(rest["noise_sigma"])
    if t == "table":
        if "csv" in rest:
            return pde.PressureLaw.from_curve_csv(rest["csv"])
        _require(rest, ["rho", "p"], "table law")
        return pde.PressureLaw.from_table(rest["rho"], rest["p"])
    raise ConfigurationError(f"unknown pde law type {t!r}")


class _OutputLock:
    """One experiment per output directory at a time."""

    def __init__(self, out_dir):
        self.path = os.path.join(out_dir, ".lock")

    def __enter__(self):
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigurationError(
                f"output directory is locked by another run ({self.path})"
            ) from None
        return self

    def __exit__(self, *exc):
        os.close(self.fd)
        os.unlink(self.path)


def run_experiment(config: ExperimentConfig, out_dir, threads: int = 0) -> dict:
    """Execute the experiment; write curve.csv / report.json / manifest.json.

    Partial sweep results are persisted even when some points fail; a failed
    point surfaces in the report and manifest rather than aborting the run.
    """
    os.makedirs(out_dir, exist_ok=True)
    t0 = _time.time()
    res = config.resolved
    artifacts = {}
    report = {"kind": config.kind, "seed": config.seed}

    with _OutputLock(out_dir):
        if config.kind in ("sweep", "exponent-table", "claim-compare"):
            curve = _run_curve(config, threads)
            curve_path = os.path.join(out_dir, "curve.csv")
            virial.write_curve_csv(curve, curve_path)
            artifacts["curve"] = curve_path
            report["n_points"] = len(curve.points)
            report["failures"] = curve.failures
            report["clamp_rates"] = [p.clamp_rate for p in curve.points]

            if config.kind == "exponent-table" or "fit_windows" in res:
                report["fits"] = []
                for window in res.get("fit_windows", []):
                    fit = analysis.fit_loglog_slope(curve, tuple(window))
                    report["fits"].append({
                        "window": list(fit.window),
                        "exponent": fit.exponent,
                        "log_prefactor": fit.log_prefactor,
                        "r_squared": fit.r_squared,
                        "n_points": fit.n_points,
                    })
                spec = potentials.spec_from_dict(res["potential"])
                if isinstance(spec, potentials.PowerLawRepulsive):
                    pred = analysis.predicted_exponent(
                        spec.alpha, res["box"]["dimension"],
                        compact_support=math.isfinite(spec.r1),
                    )
                    report["predicted_exponent"] = pred.exponent
                    report["predicted_log_correction"] = pred.log_correction

            if config.kind == "claim-compare":
                params = dict(res["potential"])
                params.pop("family")
                params["noise_sigma"] = res["noise_sigma"]
                if res["prediction"] == "meanfield":
                    spec = potentials.spec_from_dict(res["potential"])
                    params = {"c_v": potentials.c_v(spec, res["box"]["dimension"]),
                              "noise_sigma": res["noise_sigma"]}
                window = res.get("compare_window")
                cmp = analysis.compare_report(
                    curve, res["prediction"], params,
                    window=tuple(window) if window else None,
                )
                report["comparison"] = {
                    "prediction": cmp.prediction,
                    "fitted_constant": cmp.fitted_constant,
                    "max_rel_deviation": cmp.max_rel_deviation,
                    "window": list(cmp.window),
                    "n_points": cmp.n_points,
                }
                if res["prediction"] == "meanfield":
                    report["comparison"]["c_v"] = params["c_v"]
                if res["prediction"] == "claim2":
                    report["comparison"]["low_density_unidentified_O_rho"] = [
                        bool(analysis.claim2_low_density_flag(p.rho_eff,
                                                              res["potential"]["r0"]))
                        for p in curve.points
                    ]
                plot_path = os.path.join(out_dir, "plot_data.csv")
                emit_plot_data(curve, plot_path,
                               prediction=analysis.prediction_function(res["prediction"], params),
                               fitted_constant=cmp.fitted_constant)
                artifacts["plot_data"] = plot_path

        elif config.kind == "cv":
            spec = potentials.spec_from_dict(res["potential"])
            report["c_v"] = potentials.c_v(spec, res["cv_dimension"])
            report["dimension"] = res["cv_dimension"]

        elif config.kind == "relax":
            spec = potentials.spec_from_dict(res["potential"])
            box = TorusBox(res["box"]["dimension"], res["box"]["side"])
            blk = res["relax"]
            sim = SimulationConfig(
                spec=spec, box=box, rho_nominal=blk["rho"], noise_sigma=0.0,
                dt=blk["step"], burn_in_steps=0, n_samples=0, sample_stride=1,
                seed=config.seed, init_mode=blk["init_mode"],
            )
            state = build_initial_lattice(sim)
            if blk["perturbation"]:
                state.positions[state.n_particles // 2, 0] += blk["perturbation"]
                state.positions[:] = state.positions % box.side
            out = relax_deterministic(state, spec, blk["step"], blk["tol"], blk["max_steps"])
            pos = np.sort(out.state.positions[:, 0])
            gaps = np.diff(np.concatenate([pos, [pos[0] + box.side]]))
            report.update({
                "converged": out.converged,
                "steps": out.steps,
                "max_force": out.max_force,
                "spacing_variance": float(np.var(gaps)),
            })

        elif config.kind == "pde":
            blk = res["pde"]
            law = _pde_law(blk["law"])
            rho0 = _rho0_vector(blk["rho0"], blk["dx"])
            dt = blk["dt"]
            if dt == "auto":
                dt = pde.stable_time_step(law, rho0, blk["dx"])
            solution = pde.solve_pde(law, rho0, blk["t_end"], blk["dx"], float(dt),
                                     blk["snapshot_stride"])
            snap_path = os.path.join(out_dir, "snapshots.csv")
            pde.write_snapshots_csv(solution, snap_path)
            artifacts["snapshots"] = snap_path
            masses = [float(r.sum() * solution.dx) for _, r in solution.snapshots]
            report.update({
                "n_snapshots": len(solution.snapshots),
                "dt": solution.dt,
                "mass_initial": masses[0],
                "mass_drift": max(abs(m - masses[0]) for m in masses),
                "final_min": float(solution.snapshots[-1][1].min()),
                "final_max": float(solution.snapshots[-1][1].max()),
            })

        report_path = os.path.join(out_dir, "report.json")
        with open(report_path, "w") as fh:
            json.dump(report, fh, indent=2)
        artifacts["report"] = report_path

        manifest = {
            "code_version": __version__,
            "config": config.to_json_dict(),
            "seed": config.seed,
            "kind": config.kind,
            "threads": threads,
            "wall_time_s": _time.time() - t0,
            "artifacts": {k: os.path.basename(v) for k, v in artifacts.items()},
        }
        if config.kind in ("sweep", "exponent-table", "claim-compare"):
            manifest["point_seeds"] = [
                virial.derived_seed(config.seed, i) for i in range(len(res["rho_grid"]))
            ]
            manifest["failures"] = report["failures"]
        manifest_path = os.path.join(out_dir, "manifest.json")
        with open(manifest_path, "w") as fh:
            json.dump(manifest, fh, indent=2)
        artifacts["manifest"] = manifest_path

    report["artifacts"] = artifacts
    return report


def emit_plot_data(curve, path, prediction=None, fitted_constant=None):
    """Plot-ready CSV in natural and log-log columns.

    Rows with nonpositive p_hat keep empty log cells; when a prediction
    callable is given, prediction and rescaled_prediction columns are added
    (rescaled = fitted_constant * prediction exactly).
    """
    import csv

    header = ["rho", "p_hat", "log_rho", "log_p"]
    if prediction is not None:
        header += ["prediction", "rescaled_prediction"]
    n_bad = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for pt in curve.points:
            rho, p = float(pt.rho_eff), float(pt.p_hat)
            if p > 0:
                row = [repr(rho), repr(p), repr(math.log(rho)), repr(math.log(p))]
            else:
                n_bad += 1
                row = [repr(rho), repr(p), "", ""]
            if prediction is not None:
                pv = float(np.asarray(prediction(rho)))
                c = 1.0 if fitted_constant is None else float(fitted_constant)
                row += [repr(pv), repr(c * pv)]
            w.writerow(row)
    return n_bad
