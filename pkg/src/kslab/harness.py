"""Experiment orchestration: JSON run configs, initial data generation, the
time loop with diagnostics/CSV/snapshot output, parameter sweeps,
convergence studies, and the command-line interface."""
from __future__ import annotations

import argparse
import copy
import itertools
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import inequalities
from .diagnostics import DiagnosticsConfig, DiagnosticsRecord, detect_blowup, make_record
from .errors import (
    KslabError,
    PositivityError,
    SolverStallError,
    ValidationError,
)
from .grid import Field, Grid, integrate, write_snapshot
from .model import CoefficientSpec, ModelSpec, SourceSpec, validate_model
from .stepper import State, StepOptions, adapt_dt, step

SCHEMA_RUN = "kslab-run/1"
SCHEMA_SWEEP = "kslab-sweep/1"


@dataclass(frozen=True)
class RunConfig:
    model: ModelSpec
    grid: Grid
    initial: dict
    T_end: float
    step_options: StepOptions
    diagnostics: DiagnosticsConfig
    output_dir: Optional[str] = None
    snapshot_cadence: Optional[float] = None
    seed: int = 0
    warnings: tuple = ()
    raw: Optional[dict] = None


@dataclass(frozen=True)
class RunResult:
    outcome: str  # completed | blowup | stalled
    t_final: float
    t_star: Optional[float]
    sup_diagnostics: dict
    wall_time: float
    final_state: State
    records: tuple
    artifacts: dict
    warnings: tuple = ()


@dataclass(frozen=True)
class SweepPlan:
    base: dict
    axes: dict
    parallelism: int = 1
    max_cells: int = 256
    output_dir: Optional[str] = None


def _reject_unknown(d: dict, allowed: Sequence[str], where: str) -> None:
    unknown = set(d) - set(allowed)
    if unknown:
        raise ValidationError(f"{where}: unknown keys {sorted(unknown)}")


def _coefficient_from_dict(d: dict, where: str) -> CoefficientSpec:
    _reject_unknown(d, ("family", "value", "scale", "rate", "half", "nodes", "values"), where)
    if "family" not in d:
        raise ValidationError(f"{where}: missing 'family'")
    kwargs = {k: v for k, v in d.items() if k != "family"}
    if d["family"] == "tabulated-smooth":
        kwargs["nodes"] = tuple(kwargs.get("nodes", ()))
        kwargs["values"] = tuple(kwargs.get("values", ()))
    try:
        return CoefficientSpec(d["family"], **kwargs)
    except ValidationError as exc:
        raise ValidationError(f"{where}: {exc}") from exc


def _source_from_dict(d: Optional[dict]) -> Optional[SourceSpec]:
    if d is None:
        return None
    _reject_unknown(d, ("r", "mu", "p"), "model.source")
    for key in ("r", "mu", "p"):
        if key not in d:
            raise ValidationError(f"model.source.{key}: missing")
    try:
        return SourceSpec(r=float(d["r"]), mu=float(d["mu"]), p=float(d["p"]))
    except ValidationError as exc:
        raise ValidationError(f"model.source: {exc} (the source law requires mu > 0, p > 0)") from exc


def _grid_from_dict(d: dict) -> Grid:
    geometry = d.get("geometry")
    if geometry == "rectangle":
        _reject_unknown(d, ("geometry", "Lx", "Ly", "nx", "ny"), "grid")
        return Grid.rectangle(d.get("Lx", 1.0), d.get("Ly", 1.0), d["nx"], d["ny"])
    if geometry == "radial-disk":
        _reject_unknown(d, ("geometry", "R", "nr"), "grid")
        return Grid.radial_disk(d.get("R", 1.0), d["nr"])
    raise ValidationError(f"grid.geometry: expected rectangle or radial-disk, got {geometry!r}")


_INITIAL_KINDS = ("constant", "gaussian-bumps", "perturbed-constant")


def _validate_initial(d: dict) -> dict:
    _reject_unknown(
        d,
        ("kind", "mass", "centers", "sigma", "amplitude", "modes", "v0", "value"),
        "initial",
    )
    kind = d.get("kind", "constant")
    if kind not in _INITIAL_KINDS:
        raise ValidationError(f"initial.kind: expected one of {_INITIAL_KINDS}, got {kind!r}")
    out = dict(d)
    out["kind"] = kind
    if "mass" not in out:
        raise ValidationError("initial.mass: missing (target mass is required)")
    if not float(out["mass"]) > 0.0:
        raise ValidationError(f"initial.mass: must be > 0, got {out['mass']}")
    if kind == "gaussian-bumps":
        out.setdefault("centers", [[0.5, 0.5]])
        out.setdefault("sigma", 0.05)
    if kind == "perturbed-constant":
        out.setdefault("amplitude", 0.0)
        out.setdefault("modes", 3)
        if not (0.0 <= float(out["amplitude"]) < 1.0):
            raise ValidationError("initial.amplitude: must lie in [0, 1) to keep u0 >= 0")
    return out


def config_from_dict(d: dict) -> RunConfig:
    """Build a fully validated RunConfig with defaults applied."""
    _reject_unknown(
        d,
        (
            "schema",
            "model",
            "grid",
            "initial",
            "T_end",
            "step",
            "diagnostics",
            "output_dir",
            "snapshot_cadence",
            "seed",
        ),
        "config",
    )
    schema = d.get("schema", SCHEMA_RUN)
    if schema != SCHEMA_RUN:
        raise ValidationError(f"schema: expected {SCHEMA_RUN!r}, got {schema!r}")
    for key in ("model", "grid", "initial", "T_end"):
        if key not in d:
            raise ValidationError(f"{key}: missing")
    T_end = float(d["T_end"])
    if not T_end > 0:
        raise ValidationError(f"T_end: must be > 0, got {T_end}")

    md = d["model"]
    _reject_unknown(md, ("diffusion", "sensitivity", "source"), "model")
    model = ModelSpec(
        diffusion=_coefficient_from_dict(md.get("diffusion", {"family": "constant"}), "model.diffusion"),
        sensitivity=_coefficient_from_dict(
            md.get("sensitivity", {"family": "constant"}), "model.sensitivity"
        ),
        source=_source_from_dict(md.get("source")),
    )
    warnings = []
    report = validate_model(model, V_max=50.0, samples=501)
    for check in report.checks:
        if not check.passed:
            raise ValidationError(f"model: condition failed: {check.name} (witness {check.witness})")
    warnings.extend(report.warnings)

    grid = _grid_from_dict(d["grid"])
    initial = _validate_initial(d["initial"])

    sd = dict(d.get("step", {}))
    _reject_unknown(
        sd,
        (
            "cfl_safety",
            "dt_min",
            "dt_max",
            "linear_tol",
            "max_linear_iters",
            "scheme",
            "source_treatment",
            "face_averaging",
            "max_retries",
        ),
        "step",
    )
    step_options = StepOptions(**sd)

    dd = dict(d.get("diagnostics", {}))
    _reject_unknown(
        dd,
        ("k", "q_list", "tau", "cadence", "blowup_max_u", "blowup_dt_floor"),
        "diagnostics",
    )
    if "k" not in dd:
        dd["k"] = 1.5 if model.regime == "degenerate" else 1.0
    dd.setdefault("tau", min(1.0, T_end / 2.0))
    dd.setdefault("cadence", min(0.01, T_end / 50.0))
    diag = DiagnosticsConfig(**dd)
    p = model.source.p if model.source is not None else 0.0
    if model.source is not None:
        warn = diag.admissible_k_warning(p, model.regime)
        if warn:
            warnings.append(warn)

    return RunConfig(
        model=model,
        grid=grid,
        initial=initial,
        T_end=T_end,
        step_options=step_options,
        diagnostics=diag,
        output_dir=d.get("output_dir"),
        snapshot_cadence=d.get("snapshot_cadence"),
        seed=int(d.get("seed", 0)),
        warnings=tuple(warnings),
        raw=copy.deepcopy(d),
    )


def load_config(path) -> RunConfig:
    """Parse and validate a run configuration file."""
    try:
        with open(path) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: parse error at line {exc.lineno}: {exc.msg}") from exc
    return config_from_dict(d)


def _base_field(kind: str, spec: dict, g: Grid, rng) -> np.ndarray:
    if kind == "constant":
        return np.ones(g.shape)
    if kind == "gaussian-bumps":
        sigma = float(spec["sigma"])
        out = np.zeros(g.shape)
        if g.geometry == "rectangle":
            x, y = g.cell_centers()
            for cx, cy in spec["centers"]:
                out += np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2.0 * sigma**2))
        else:
            r = g.cell_centers()
            for center in spec["centers"]:
                c = center[0] if isinstance(center, (list, tuple)) else center
                out += np.exp(-((r - c) ** 2) / (2.0 * sigma**2))
        return out
    if kind == "perturbed-constant":
        # deterministic cosine superposition: mode m carries weight 2^{1-m},
        # so the total perturbation is bounded by the amplitude and every
        # mode has a closed-form decay rate under the heat reduction
        amp = float(spec["amplitude"])
        modes = int(spec["modes"])
        pert = np.zeros(g.shape)
        if amp > 0.0 and modes > 0:
            if g.geometry == "rectangle":
                x, y = g.cell_centers()
                xs, ys = x / g.Lx, y / g.Ly
            else:
                xs = g.cell_centers() / g.R
                ys = None
            norm = sum(2.0 ** (1 - m) for m in range(1, modes + 1))
            for m in range(1, modes + 1):
                term = np.cos(math.pi * m * xs)
                if ys is not None:
                    term = term * np.cos(math.pi * m * ys)
                pert += 2.0 ** (1 - m) * term
            pert *= amp / norm
        return 1.0 + pert
    raise ValidationError(f"initial.kind: unknown {kind!r}")


def make_initial_data(spec: dict, g: Grid, seed: int) -> Tuple[Field, Field]:
    """Nonnegative initial fields; u0 is normalized to the target mass."""
    spec = _validate_initial(spec)
    rng = np.random.default_rng(seed)
    base = _base_field(spec["kind"], spec, g, rng)
    if np.all(base == 0.0):
        raise ValidationError("initial data must not be identically zero")
    u0 = base * (float(spec["mass"]) / integrate(g.field(base), g))
    v0_spec = spec.get("v0", "same")
    if v0_spec == "same" or v0_spec is None:
        v0 = u0.copy()
    elif isinstance(v0_spec, dict) and v0_spec.get("kind") == "constant" and "value" in v0_spec:
        value = float(v0_spec["value"])
        if value < 0:
            raise ValidationError("initial.v0.value: must be >= 0")
        v0 = np.full(g.shape, value)
    elif isinstance(v0_spec, dict):
        sub = _validate_initial(v0_spec)
        b = _base_field(sub["kind"], sub, g, rng)
        v0 = b * (float(sub["mass"]) / integrate(g.field(b), g))
    else:
        raise ValidationError(f"initial.v0: expected 'same' or a spec, got {v0_spec!r}")
    if np.any(u0 < 0) or np.any(v0 < 0):
        raise ValidationError("initial data must be nonnegative")
    return g.field(u0), g.field(v0)


def _resolve_output_dir(output_dir: Optional[str]) -> Optional[Path]:
    if output_dir is None:
        return None
    root = os.environ.get("KSLAB_OUT")
    path = Path(output_dir)
    if root and not path.is_absolute():
        path = Path(root) / path
    path.mkdir(parents=True, exist_ok=True)
    return path


def execute_run(cfg: RunConfig, on_record: Optional[Callable] = None) -> RunResult:
    """The main time loop: adapt dt, step with positivity retries, emit
    diagnostics at the configured cadence, stop on completion, blow-up
    detection, or step-size collapse."""
    g = cfg.grid
    model = cfg.model
    opts = cfg.step_options
    diag = cfg.diagnostics
    p = model.source.p if model.source is not None else 0.0

    u0, v0 = make_initial_data(cfg.initial, g, cfg.seed)
    state = State(u=u0, v=v0)

    out_dir = _resolve_output_dir(cfg.output_dir)
    artifacts = {}
    csv_fh = None
    if out_dir is not None:
        csv_path = out_dir / "series.csv"
        csv_fh = open(csv_path, "w")
        csv_fh.write(DiagnosticsRecord.csv_header(diag.q_list) + "\n")
        artifacts["series"] = str(csv_path)

    records: List[DiagnosticsRecord] = []
    snap_index = 0

    def snapshot(s: State):
        nonlocal snap_index
        if out_dir is None:
            return
        for name, f in (("u", s.u), ("v", s.v)):
            path = out_dir / f"{name}_{snap_index:06d}.ksf"
            write_snapshot(f, s.t, path)
        artifacts.setdefault("snapshots", []).append(snap_index)
        snap_index += 1

    def emit(s: State) -> DiagnosticsRecord:
        rec = make_record(s, diag, p)
        records.append(rec)
        if csv_fh is not None:
            csv_fh.write(rec.csv_row() + "\n")
        if on_record is not None:
            on_record(rec)
        return rec

    wall0 = time.perf_counter()
    rec = emit(state)
    snapshot(state)
    next_record_t = diag.cadence
    next_snap_t = cfg.snapshot_cadence if cfg.snapshot_cadence else math.inf

    outcome = "completed"
    t_star: Optional[float] = None
    if rec.blowup:
        outcome, t_star = "blowup", state.t

    while outcome == "completed" and state.t < cfg.T_end - 1e-12:
        dt = adapt_dt(state, model, opts)
        dt = min(dt, cfg.T_end - state.t)
        stepped = None
        for _ in range(opts.max_retries + 1):
            if dt < opts.dt_min:
                break
            try:
                stepped = step(state, model, dt, opts)
                break
            except PositivityError:
                dt *= 0.5
            except SolverStallError:
                stepped = None
                break
        if stepped is None:
            flag, _reason = detect_blowup(state, diag, dt)
            outcome = "blowup" if flag or dt < diag.blowup_dt_floor else "stalled"
            if outcome == "blowup":
                t_star = state.t
            emit(state)
            break
        state = stepped
        flag, _reason = detect_blowup(state, diag, state.last_dt)
        if flag:
            outcome, t_star = "blowup", state.t
            emit(state)
            break
        if state.t >= next_record_t - 1e-12 or state.t >= cfg.T_end - 1e-12:
            emit(state)
            while next_record_t <= state.t + 1e-12:
                next_record_t += diag.cadence
        if state.t >= next_snap_t - 1e-12:
            snapshot(state)
            while next_snap_t <= state.t + 1e-12:
                next_snap_t += cfg.snapshot_cadence

    if outcome == "completed" and state.t < cfg.T_end - 1e-9:
        outcome = "stalled"
    if records and records[-1].t < state.t:
        emit(state)
    snapshot(state)

    wall = time.perf_counter() - wall0
    finite_recs = [r for r in records if not r.blowup] or records
    sup_diag = {
        "sup_u": max(r.sup_u for r in finite_recs),
        "sup_v": max(r.sup_v for r in finite_recs),
        "sup_energy_y": max(r.energy_y for r in finite_recs),
        "sup_mass": max(r.mass for r in finite_recs),
        "final_mass": finite_recs[-1].mass,
        "sup_dissipation_density": max(r.dissipation_density for r in finite_recs),
    }
    result = RunResult(
        outcome=outcome,
        t_final=state.t,
        t_star=t_star,
        sup_diagnostics=sup_diag,
        wall_time=wall,
        final_state=state,
        records=tuple(records),
        artifacts=artifacts,
        warnings=cfg.warnings,
    )
    if out_dir is not None:
        csv_fh.close()
        summary = {
            "outcome": outcome,
            "t_final": state.t,
            "t_star": t_star,
            "steps": state.step_count,
            "wall_time": wall,
            "sup_diagnostics": sup_diag,
            "warnings": list(cfg.warnings),
        }
        with open(out_dir / "summary.json", "w") as fh:
            json.dump(summary, fh, indent=2)
        artifacts["summary"] = str(out_dir / "summary.json")
    return result


def run(cfg: RunConfig, on_record: Optional[Callable] = None) -> RunResult:
    return execute_run(cfg, on_record=on_record)


# --- sweeps -----------------------------------------------------------------


def _set_path(d: dict, path: str, value) -> None:
    keys = path.split(".")
    cur = d
    for k in keys[:-1]:
        if k not in cur or cur[k] is None:
            cur[k] = {}
        cur = cur[k]
    cur[keys[-1]] = value


def _sweep_cell(args) -> dict:
    index, cell_dict, params = args
    row = {"cell": index, **params}
    try:
        cfg = config_from_dict(cell_dict)
        result = execute_run(cfg)
        row["outcome"] = result.outcome
        row["t_star"] = result.t_star
        row.update(result.sup_diagnostics)
    except Exception as exc:  # per-row failures never abort the sweep
        row["outcome"] = f"failed: {exc}"
        row["t_star"] = None
    return row


def sweep_plan_from_dict(d: dict) -> SweepPlan:
    _reject_unknown(d, ("schema", "base", "axes", "parallelism", "max_cells", "output_dir"), "sweep")
    schema = d.get("schema", SCHEMA_SWEEP)
    if schema != SCHEMA_SWEEP:
        raise ValidationError(f"schema: expected {SCHEMA_SWEEP!r}, got {schema!r}")
    if "base" not in d or "axes" not in d:
        raise ValidationError("sweep: needs 'base' and 'axes'")
    return SweepPlan(
        base=d["base"],
        axes=dict(d["axes"]),
        parallelism=int(d.get("parallelism", 1)),
        max_cells=int(d.get("max_cells", 256)),
        output_dir=d.get("output_dir"),
    )


def run_sweep(plan: SweepPlan) -> List[dict]:
    """Execute the cross product of the sweep axes, one row per cell; rows
    are persisted incrementally when an output directory is configured."""
    names = list(plan.axes)
    combos = list(itertools.product(*(plan.axes[n] for n in names)))
    if len(combos) > plan.max_cells:
        raise ValidationError(
            f"sweep would produce {len(combos)} cells, above the cap {plan.max_cells}"
        )
    out_dir = _resolve_output_dir(plan.output_dir)
    tasks = []
    for i, combo in enumerate(combos):
        cell = copy.deepcopy(plan.base)
        params = {}
        for name, value in zip(names, combo):
            _set_path(cell, name, value)
            params[name] = value
        if out_dir is not None:
            cell["output_dir"] = str(out_dir / f"cell_{i:04d}")
        tasks.append((i, cell, params))

    rows: List[dict] = []
    table_fh = None
    columns = None

    def persist(row: dict):
        nonlocal table_fh, columns
        rows.append(row)
        if out_dir is None:
            return
        if table_fh is None:
            columns = list(row)
            table_fh = open(out_dir / "sweep.csv", "w")
            table_fh.write(",".join(columns) + "\n")
        table_fh.write(",".join(str(row.get(c, "")) for c in columns) + "\n")
        table_fh.flush()

    if plan.parallelism > 1:
        with ProcessPoolExecutor(max_workers=plan.parallelism) as pool:
            for row in pool.map(_sweep_cell, tasks):
                persist(row)
    else:
        for task in tasks:
            persist(_sweep_cell(task))
    if table_fh is not None:
        table_fh.close()
    rows.sort(key=lambda r: r["cell"])
    return rows


# --- convergence studies ----------------------------------------------------


def _restrict(values: np.ndarray, factor: int) -> np.ndarray:
    """Block-average a fine rectangle field down by an integer factor."""
    nx, ny = values.shape
    return values.reshape(nx // factor, factor, ny // factor, factor).mean(axis=(1, 3))


def _scaled_config(cfg: RunConfig, scale: int) -> RunConfig:
    d = copy.deepcopy(cfg.raw)
    if d["grid"]["geometry"] == "rectangle":
        d["grid"]["nx"] = cfg.grid.nx * scale
        d["grid"]["ny"] = cfg.grid.ny * scale
    else:
        d["grid"]["nr"] = cfg.grid.nr * scale
    # the time integrator is first order, so refine the step ceiling with
    # h^2 to keep the temporal error subordinate when measuring spatial order
    sd = dict(d.get("step", {}))
    dt_max = float(sd.get("dt_max", cfg.step_options.dt_max)) / scale**2
    sd["dt_max"] = dt_max
    sd["dt_min"] = min(float(sd.get("dt_min", cfg.step_options.dt_min)), dt_max)
    d["step"] = sd
    d.pop("output_dir", None)
    return config_from_dict(d)


def convergence_study(
    cfg: RunConfig,
    levels: int,
    mode: str = "spatial",
    analytic: Optional[Callable] = None,
) -> dict:
    """Doubling-resolution (or dt-halving) study; reports per-level errors
    and the inferred orders. Errors are measured against the analytic
    solution when one is supplied, else against the finest level."""
    if levels < 3:
        raise ValidationError("convergence study needs at least 3 levels")
    if mode == "spatial":
        results = []
        for i in range(levels):
            sub = _scaled_config(cfg, 2**i)
            results.append((sub.grid, execute_run(sub)))
        errors = []
        if analytic is not None:
            for g, res in results:
                x, y = g.cell_centers()
                exact = analytic(x, y, res.t_final)
                diff = res.final_state.u.values - exact
                errors.append(float(np.sqrt(integrate(g.field(diff**2), g))))
        else:
            g_fine, res_fine = results[-1]
            for g, res in results[:-1]:
                factor = g_fine.nx // g.nx
                diff = res.final_state.u.values - _restrict(res_fine.final_state.u.values, factor)
                errors.append(float(np.sqrt(integrate(g.field(diff**2), g))))
        orders = [
            math.log2(errors[i] / errors[i + 1]) if errors[i + 1] > 0 else math.inf
            for i in range(len(errors) - 1)
        ]
        return {"mode": mode, "errors": errors, "orders": orders}
    if mode == "temporal":
        dt0 = cfg.step_options.dt_max
        finals = []
        for i in range(levels + 1):
            dt = dt0 / 2**i
            opts = replace(cfg.step_options, dt_max=dt, dt_min=min(cfg.step_options.dt_min, dt))
            sub = replace(cfg, step_options=opts, output_dir=None)
            finals.append(execute_run(sub).final_state.u.values)
        g = cfg.grid
        errors = [
            float(np.sqrt(integrate(g.field((finals[i] - finals[i + 1]) ** 2), g)))
            for i in range(levels)
        ]
        orders = [
            math.log2(errors[i] / errors[i + 1]) if errors[i + 1] > 0 else math.inf
            for i in range(len(errors) - 1)
        ]
        return {"mode": mode, "errors": errors, "orders": orders}
    raise ValidationError(f"unknown study mode {mode!r}")


# --- CLI ----------------------------------------------------------------------


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="kslab", description="chemotaxis finite-volume lab")
    sub = parser.add_subparsers(dest="command")

    p_sim = sub.add_parser("simulate", help="run one configured simulation")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--out", default=None, help="override output directory")

    p_sweep = sub.add_parser("sweep", help="run a parameter sweep plan")
    p_sweep.add_argument("--plan", required=True)
    p_sweep.add_argument("--out", default=None)

    p_ver = sub.add_parser("verify", help="run the inequality verification suite")
    p_ver.add_argument(
        "--lemma",
        default="all",
        choices=["all", "3.2", "3.3", "3.4", "3.6", "log-domination"],
    )
    p_ver.add_argument("--trials", type=int, default=100)
    p_ver.add_argument("--seed", type=int, default=0)
    p_ver.add_argument("--grid", type=int, default=32)
    p_ver.add_argument("--out", default=None, help="write JSON reports here")

    p_conv = sub.add_parser("converge", help="run a convergence study")
    p_conv.add_argument("--config", required=True)
    p_conv.add_argument("--levels", type=int, default=3)
    p_conv.add_argument("--mode", choices=["spatial", "temporal"], default="spatial")

    p_val = sub.add_parser("validate", help="validate a config and its model")
    p_val.add_argument("--config", required=True)
    return parser


def _verify_reports(lemma: str, trials: int, seed: int, n: int) -> List:
    g = Grid.rectangle(1.0, 1.0, n, n)
    ensembles = [
        inequalities.FieldEnsemble(g, gen, max(4, trials // 4), seed + j)
        for j, gen in enumerate(("band-limited-trig", "gaussian-bumps", "two-valued"))
    ]
    reports = []
    if lemma in ("all", "3.2"):
        for e in ensembles:
            reports.append(inequalities.check_gn(e, p=2.0, q=1.0, r=2.0, s=1.0))
    if lemma in ("all", "3.3"):
        for e in ensembles:
            reports.append(inequalities.check_eta_interpolation(e, [0.01, 0.1, 0.5, 0.9]))
    if lemma in ("all", "3.4"):
        for e in ensembles:
            reports.append(inequalities.check_truncation_ensemble(e, q=2.0, N=2.0, gauge="log"))
    if lemma in ("all", "3.6"):
        rng = np.random.default_rng(seed)
        for t in range(trials):
            a = rng.uniform(1e-6, 1.0, size=20)
            b = 1.0 + rng.uniform(0.0, 0.2, size=20)
            reports.append(inequalities.check_sequence_lemma(a, b, rng.uniform(0.1, 5.0), 20))
    if lemma in ("all", "log-domination"):
        grid_u = np.geomspace(1e-6, 1e6, 2000)
        reports.append(
            inequalities.check_log_domination(1.0, 1.0, 2.0, 0.5, grid_u, [0.01, 0.1, 1.0])
        )
    return reports


def cli(argv: Sequence[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(list(argv))
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        if args.command == "validate":
            try:
                cfg = load_config(args.config)
            except (ValidationError, OSError) as exc:
                print(f"invalid: {exc}", file=sys.stderr)
                return 1
            report = validate_model(cfg.model, V_max=50.0, samples=501)
            for check in report.checks:
                print(f"{'PASS' if check.passed else 'FAIL'}  {check.name}")
            print(f"regime: {report.regime}")
            for warn in cfg.warnings:
                print(f"warning: {warn}")
            return 0 if report.all_passed else 1

        if args.command == "simulate":
            try:
                cfg = load_config(args.config)
            except (ValidationError, OSError) as exc:
                print(f"invalid config: {exc}", file=sys.stderr)
                return 1
            if args.out:
                cfg = replace(cfg, output_dir=args.out)
            for warn in cfg.warnings:
                print(f"warning: {warn}", file=sys.stderr)
            result = execute_run(cfg)
            print(
                f"outcome={result.outcome} t_final={result.t_final:.6g} "
                + (f"t_star={result.t_star:.6g} " if result.t_star is not None else "")
                + f"steps={result.final_state.step_count} wall={result.wall_time:.2f}s"
            )
            return 0 if result.outcome in ("completed", "blowup") else 2

        if args.command == "sweep":
            try:
                with open(args.plan) as fh:
                    plan = sweep_plan_from_dict(json.load(fh))
            except (ValidationError, OSError, json.JSONDecodeError) as exc:
                print(f"invalid plan: {exc}", file=sys.stderr)
                return 1
            if args.out:
                plan = replace(plan, output_dir=args.out)
            rows = run_sweep(plan)
            for row in rows:
                print(row)
            return 0 if all(not str(r["outcome"]).startswith("failed") for r in rows) else 2

        if args.command == "converge":
            try:
                cfg = load_config(args.config)
            except (ValidationError, OSError) as exc:
                print(f"invalid config: {exc}", file=sys.stderr)
                return 1
            table = convergence_study(cfg, args.levels, mode=args.mode)
            print(json.dumps(table, indent=2))
            return 0

        if args.command == "verify":
            reports = _verify_reports(args.lemma, args.trials, args.seed, args.grid)
            payload = "[\n" + ",\n".join(r.to_json() for r in reports) + "\n]\n"
            if args.out:
                Path(args.out).parent.mkdir(parents=True, exist_ok=True)
                with open(args.out, "w") as fh:
                    fh.write(payload)
            else:
                print(payload)
            ok = all(getattr(r, "passed", True) for r in reports)
            return 0 if ok else 2
    except KslabError as exc:
        print(f"run failure: {exc}", file=sys.stderr)
        return 2
    return 1


def main() -> None:
    sys.exit(cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
