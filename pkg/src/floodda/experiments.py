"""Experiment driver: builds the desk-scale demonstration case, runs FR and
the assimilation variants in twin or file-driven mode, scores them, and
persists a self-describing artifact tree."""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .enkf import (DH_SLICE, EXPERIMENT_KINDS, KS_SLICE, MU_INDEX, CycleConfig,
                   _record_grid, run_event)
from .errors import ConfigurationError, ValidationError
from .hydro import (CLASS_CHANNEL, CLASS_FLOODPLAIN, CLASS_INACTIVE,
                    COMPONENT_NAMES, N_CONTROL, N_DH, N_KS, ControlVector, Grid,
                    Hydrograph, ModelState, read_grid, read_hydrograph, simulate,
                    write_grid, write_hydrograph)
from .anamorphosis import read_phi
from .metrics import (contingency, csi, read_scores, rmse, write_contingency_pgm,
                      write_scores)
from .observe import (KIND_WL, KIND_WSR, GaugeSpec, extract_wl, flood_mask,
                      read_observations, write_mask_pgm, write_observations,
                      wsr_all)
from .osse import TruthRun, TruthSchedule, run_truth, synthesize_obs

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
OUTPUT_ROOT_ENV = "FLOODDA_OUTPUT_ROOT"

_REQUIRED = object()

# key -> (type, default); _REQUIRED means the config file must set it
_SCHEMA = {
    "schema_version": (int, _REQUIRED),
    "experiment": (str, _REQUIRED),
    "mode": (str, "osse"),
    "label": (str, ""),
    "grid": (str, "grid.txt"),
    "hydrograph": (str, "hydrograph.csv"),
    "observations": (str, "observations.csv"),
    "output_dir": (str, ""),
    "master_seed": (int, 42),
    "obs_seed": (int, 7),
    "t0_hours": (float, 0.0),
    "event_end_hours": (float, 96.0),
    "score_start_hours": (float, 27.0),
    "gauges": (list, _REQUIRED),
    "overpass_hours": (list, _REQUIRED),
    "gauge_cadence_minutes": (float, 15.0),
    "tau_wl": (float, 0.15),
    "sigma_wsr": (float, 0.1),
    "wet_threshold": (float, 0.05),
    "n_members": (int, 75),
    "window_hours": (float, 18.0),
    "shift_hours": (float, 6.0),
    "spinup_hours": (float, 3.0),
    "restart_hours": (float, 24.0),
    "blend": (float, 0.3),
    "wl_thin_hours": (float, 1.0),
    "record_minutes": (float, 15.0),
    "dh_apply_hours": (float, 1.0),
    "ks_floor": (float, 1.0),
    "mu_floor": (float, 0.05),
    "localize_dh": (bool, True),
    "sigma_mode": (str, "preserved"),
    "perturb_in_transformed_space": (bool, False),
    "identity_transform": (bool, False),
    "prior_mean": (list, _REQUIRED),
    "prior_sigma": (list, _REQUIRED),
    "truth": (dict, None),
    "hwm_count": (int, 12),
    "dt_max_s": (float, 600.0),
    "exterior_slope": (float, 1e-4),
    "persist_cycles": (bool, True),
    "persist_restarts": (bool, False),
}

_TRUTH_SCHEMA = {
    "ks_multipliers": (list, _REQUIRED),
    "mu_amplitude": (float, 0.1),
    "mu_period_hours": (float, 96.0),
    "dh_amplitude": (float, 0.2),
    "dh_recess": (float, -0.18),
    "pulse_start_hours": (float, 30.0),
    "recess_start_hours": (float, 63.0),
    "n_pulses": (int, 3),
}


def _apply_schema(raw: dict, schema: dict, what: str) -> dict:
    unknown = set(raw) - set(schema)
    if unknown:
        raise ConfigurationError(f"unknown {what} keys: {sorted(unknown)}")
    out = {}
    for key, (typ, default) in schema.items():
        if key in raw:
            value = raw[key]
            if value is None and default is None:
                out[key] = None
                continue
            if typ is float and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
            if not isinstance(value, typ) or (typ is int and isinstance(value, bool)):
                raise ConfigurationError(f"{what} key {key!r} must be {typ.__name__}")
            out[key] = value
        elif default is _REQUIRED:
            raise ConfigurationError(f"{what} key {key!r} is required")
        else:
            out[key] = default
    return out


@dataclass
class ExperimentConfig:
    """Validated run description, with paths resolved against the case dir."""

    raw: dict
    case_dir: Path

    def __post_init__(self):
        self.raw = _apply_schema(self.raw, _SCHEMA, "config")
        c = self.raw
        if c["schema_version"] != SCHEMA_VERSION:
            raise ConfigurationError(f"unsupported schema_version {c['schema_version']}")
        if c["experiment"] not in EXPERIMENT_KINDS:
            raise ConfigurationError(f"experiment must be one of {EXPERIMENT_KINDS}")
        if c["mode"] not in ("osse", "file"):
            raise ConfigurationError("mode must be 'osse' or 'file'")
        if c["identity_transform"] and c["experiment"] != "IGDA":
            raise ConfigurationError("identity_transform applies to IGDA only")
        if c["mode"] == "osse" and c["truth"] is None:
            raise ConfigurationError("osse mode needs a truth schedule")
        if len(c["prior_mean"]) != N_CONTROL or len(c["prior_sigma"]) != N_CONTROL:
            raise ConfigurationError(f"priors must have {N_CONTROL} entries")
        if not c["gauges"]:
            raise ConfigurationError("at least one gauge is required")
        for g in c["gauges"]:
            if len(g) != 2 or not isinstance(g[0], str):
                raise ConfigurationError("gauges must be [name, cell_index] pairs")
        if not c["overpass_hours"] and c["experiment"] in ("IHDA", "IGDA"):
            raise ConfigurationError("IHDA/IGDA need overpass times")
        if c["truth"] is not None:
            c["truth"] = _apply_schema(c["truth"], _TRUTH_SCHEMA, "truth")
            if len(c["truth"]["ks_multipliers"]) != N_KS:
                raise ConfigurationError(f"truth needs {N_KS} friction schedules")
        self.case_dir = Path(self.case_dir)

    def __getattr__(self, name):
        try:
            return self.raw[name]
        except KeyError:
            raise AttributeError(name) from None

    @property
    def run_label(self) -> str:
        return self.label or self.experiment

    def path(self, key: str) -> Path:
        return (self.case_dir / self.raw[key]).resolve()

    def resolve_output_dir(self) -> Path:
        if self.output_dir:
            return (self.case_dir / self.output_dir).resolve()
        root = os.environ.get(OUTPUT_ROOT_ENV)
        base = Path(root).resolve() if root else self.case_dir / "runs"
        return base / self.run_label

    def cycle_config(self) -> CycleConfig:
        return CycleConfig(
            prior_mean=np.asarray(self.prior_mean, dtype=float),
            prior_sigma=np.asarray(self.prior_sigma, dtype=float),
            n_members=self.n_members,
            window_hours=self.window_hours,
            shift_hours=self.shift_hours,
            spinup_hours=self.spinup_hours,
            span_end_hours=self.shift_hours,
            restart_hours=self.restart_hours,
            blend=self.blend,
            master_seed=self.master_seed,
            wl_thin_hours=self.wl_thin_hours,
            record_minutes=self.record_minutes,
            dh_apply_hours=self.dh_apply_hours,
            ks_floor=self.ks_floor,
            mu_floor=self.mu_floor,
            wet_threshold=self.wet_threshold,
            localize_dh=self.localize_dh,
            sigma_mode=self.sigma_mode,
            perturb_in_transformed_space=self.perturb_in_transformed_space,
            dt_max=self.dt_max_s,
            exterior_slope=self.exterior_slope,
            persist_restarts=self.persist_restarts,
        )

    def truth_schedule(self) -> TruthSchedule:
        t = self.raw["truth"]
        steps = [[(float(h) * 3600.0, float(m)) for h, m in comp]
                 for comp in t["ks_multipliers"]]
        return TruthSchedule(
            prior_mean=np.asarray(self.prior_mean, dtype=float),
            ks_steps=steps,
            mu_amplitude=t["mu_amplitude"],
            mu_period_s=t["mu_period_hours"] * 3600.0,
            dh_amplitude=t["dh_amplitude"],
            dh_recess=t["dh_recess"],
            pulse_start_s=t["pulse_start_hours"] * 3600.0,
            recess_start_s=t["recess_start_hours"] * 3600.0,
            n_pulses=t["n_pulses"],
        )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from exc
    return ExperimentConfig(raw=raw, case_dir=path.parent.resolve())


# ---------------------------------------------------------------------------
# Default desk-scale case

DEFAULT_NX = 80
DEFAULT_NY = 40
DEFAULT_DX = 100.0
CHANNEL_ROWS = (18, 19, 20, 21)
CHANNEL_SLOPE_DROP = 0.05   # bed drop per cell along the channel
BANK_HEIGHT = 0.22
LATERAL_RISE = 0.02
MICRO_RELIEF = 0.03


def build_default_grid(seed: int) -> Grid:
    """Straight sloping channel with symmetric gently rising floodplains.

    Six equal friction zones along the channel, five floodplain subdomains
    of equal width, seeded micro-relief so flood edges are irregular. The
    outer rows are inactive rim.
    """
    nx, ny = DEFAULT_NX, DEFAULT_NY
    ix = np.arange(nx)
    z_ch = (nx - 1 - ix) * CHANNEL_SLOPE_DROP
    bed = np.zeros((ny, nx))
    cls = np.full((ny, nx), CLASS_FLOODPLAIN, dtype=np.int64)
    zone = np.zeros((ny, nx), dtype=np.int64)
    sub = np.zeros((ny, nx), dtype=np.int64)
    relief = np.random.default_rng([int(seed), 11]).uniform(-MICRO_RELIEF, MICRO_RELIEF,
                                                            size=(ny, nx))
    for iy in range(ny):
        if iy in (0, ny - 1):
            cls[iy] = CLASS_INACTIVE
            bed[iy] = z_ch + 10.0
        elif iy in CHANNEL_ROWS:
            cls[iy] = CLASS_CHANNEL
            bed[iy] = z_ch
            zone[iy] = ix * 6 // nx + 1
        else:
            dist = min(abs(iy - r) for r in CHANNEL_ROWS)
            bed[iy] = z_ch + BANK_HEIGHT + LATERAL_RISE * (dist - 1) + relief[iy]
            sub[iy] = ix * 5 // nx + 1
    inlets = np.array([r * nx for r in CHANNEL_ROWS])
    outlets = np.array([r * nx + nx - 1 for r in CHANNEL_ROWS])
    return Grid(nx=nx, ny=ny, dx=DEFAULT_DX, bed=bed, cell_class=cls,
                friction_zone=zone, subdomain=sub,
                inlet_cells=inlets, outlet_cells=outlets)


def build_default_hydrograph(base_flow: float = 8.0, peak_flow: float = 24.0) -> Hydrograph:
    """Four-day single-peak flood wave: flat base, steep rise, broad recess."""
    pts_h = [(0.0, base_flow), (24.0, base_flow), (40.0, 14.0),
             (56.0, peak_flow), (62.0, peak_flow), (78.0, 11.0), (96.0, 9.0)]
    times = np.array([h * 3600.0 for h, _ in pts_h])
    flows = np.array([q for _, q in pts_h])
    return Hydrograph(times=times, flows=flows)


DEFAULT_PRIOR_MEAN = [8.0, 15.0, 15.0, 15.0, 15.0, 15.0, 15.0,
                      1.0, 0.0, 0.0, 0.0, 0.0, 0.0]
DEFAULT_PRIOR_SIGMA = [2.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0,
                       0.15, 0.03, 0.03, 0.03, 0.03, 0.03]

# Gauged zones (5 and 6) keep time-constant friction; the step changes sit in
# ungauged zones so the per-cycle estimates have a fixed target there.
DEFAULT_TRUTH = {
    "ks_multipliers": [
        [[0.0, 0.80]],
        [[0.0, 1.20]],
        [[0.0, 0.85], [60.0, 1.10]],
        [[0.0, 1.10], [48.0, 0.90]],
        [[0.0, 0.95], [72.0, 1.08]],
        [[0.0, 0.84]],
        [[0.0, 1.18]],
    ],
    "mu_amplitude": 0.1,
    "mu_period_hours": 96.0,
    "dh_amplitude": 0.05,
    "dh_recess": -0.035,
    "pulse_start_hours": 30.0,
    "recess_start_hours": 63.0,
    "n_pulses": 3,
}

# Downstream gauges keep the bed datum small relative to the water depth, so
# the level-proportional observation error does not drown the friction signal.
DEFAULT_GAUGES = [["G1", 19 * DEFAULT_NX + 66],
                  ["G2", 19 * DEFAULT_NX + 72],
                  ["G3", 19 * DEFAULT_NX + 78]]

DEFAULT_OVERPASS_HOURS = [36.0, 44.0, 50.0, 55.0, 58.0, 61.0,
                          66.0, 72.0, 78.0, 84.0, 89.0, 93.0]


def default_case_config(experiment: str = "IGDA", seed: int = 42) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "experiment": experiment,
        "mode": "osse",
        "master_seed": int(seed),
        "obs_seed": int(seed) + 1,
        "wet_threshold": 0.03,
        "exterior_slope": 5e-4,
        "gauges": [list(g) for g in DEFAULT_GAUGES],
        "overpass_hours": list(DEFAULT_OVERPASS_HOURS),
        "prior_mean": list(DEFAULT_PRIOR_MEAN),
        "prior_sigma": list(DEFAULT_PRIOR_SIGMA),
        "truth": json.loads(json.dumps(DEFAULT_TRUTH)),
    }


def make_default_case(outdir, seed: int = 42) -> dict:
    """Write the default case files; regeneration with one seed is byte-stable.

    Produces the grid, the hydrograph, a ready-to-edit run config, the truth
    reference series and a synthetic observation set, and returns the paths.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    grid = build_default_grid(seed)
    forcing = build_default_hydrograph()
    write_grid(grid, outdir / "grid.txt")
    write_hydrograph(forcing, outdir / "hydrograph.csv")

    case = default_case_config(seed=seed)
    (outdir / "case.json").write_text(json.dumps(case, indent=2, sort_keys=True) + "\n")
    config = ExperimentConfig(raw=case, case_dir=outdir)

    truth, obs_set, score_times, overpass_s = _build_truth(config, grid, forcing)
    write_observations(obs_set, outdir / "observations.csv")
    _write_truth_artifacts(config, grid, truth, score_times, overpass_s, outdir,
                           _ArtifactLog(outdir))
    log.info("default case written to %s", outdir)
    return {"case_dir": outdir, "config": outdir / "case.json",
            "grid": outdir / "grid.txt", "hydrograph": outdir / "hydrograph.csv",
            "observations": outdir / "observations.csv"}


# ---------------------------------------------------------------------------
# Run orchestration

class _ArtifactLog:
    def __init__(self, root: Path):
        self.root = Path(root)
        self.paths: list[str] = []

    def add(self, path: Path) -> Path:
        self.paths.append(str(Path(path).relative_to(self.root)))
        return path


@dataclass
class RunResult:
    config: ExperimentConfig
    outdir: Path
    series_times: np.ndarray
    wl_series: np.ndarray
    overpass_times: np.ndarray
    wsr_series: np.ndarray
    max_depth: np.ndarray
    records: list | None
    truth: TruthRun | None
    scores: list


def _build_truth(config: ExperimentConfig, grid: Grid, forcing: Hydrograph):
    t0 = config.t0_hours * 3600.0
    t_end = config.event_end_hours * 3600.0
    score_times = _record_grid(t0, t_end, config.record_minutes, include_end=True)
    overpass_s = np.array(sorted(float(h) * 3600.0 for h in config.overpass_hours))
    if overpass_s.size and (overpass_s[0] < t0 or overpass_s[-1] > t_end):
        raise ConfigurationError("overpass times must lie inside the event")
    record = np.array(sorted({round(float(t), 6) for t in score_times}
                             | {round(float(t), 6) for t in overpass_s}))
    schedule = config.truth_schedule()
    truth = run_truth(schedule, grid, forcing, t0, t_end, record,
                      segment_hours=config.shift_hours,
                      dh_apply_hours=config.dh_apply_hours,
                      dt_max=config.dt_max_s, exterior_slope=config.exterior_slope)
    gauge_times = _record_grid(t0, t_end, config.gauge_cadence_minutes,
                               include_end=True)
    gauges = [GaugeSpec(name, int(cell)) for name, cell in config.gauges]
    obs_set = synthesize_obs(truth, grid, gauges, gauge_times, overpass_s,
                             seed=config.obs_seed, tau_wl=config.tau_wl,
                             sigma_wsr=config.sigma_wsr,
                             wet_threshold=config.wet_threshold)
    return truth, obs_set, score_times, overpass_s


def _truth_state(truth: TruthRun, t: float) -> ModelState:
    key = round(float(t), 6)
    for s in truth.trajectory:
        if round(s.time, 6) == key:
            return s
    raise ValidationError(f"truth trajectory has no record at t={t}")


def _write_series_csv(path, times, values, columns):
    lines = ["time_s," + ",".join(str(c) for c in columns)]
    values = np.atleast_2d(values)
    for i, t in enumerate(times):
        row = ",".join(repr(float(v)) for v in values[i])
        lines.append(f"{float(t):.6f},{row}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_series_csv(path):
    rows = Path(path).read_text().strip().splitlines()
    columns = rows[0].split(",")[1:]
    times = []
    values = []
    for row in rows[1:]:
        parts = row.split(",")
        times.append(float(parts[0]))
        values.append([float(v) for v in parts[1:]])
    return np.array(times), np.array(values), columns


def _write_truth_artifacts(config, grid, truth, score_times, overpass_s, outdir,
                           artifacts: _ArtifactLog):
    gauges = [GaugeSpec(name, int(cell)) for name, cell in config.gauges]
    wl = extract_wl(truth.trajectory, grid, gauges, score_times)
    _write_series_csv(artifacts.add(outdir / "truth_wl.csv"), score_times, wl,
                      [g.name for g in gauges])
    if overpass_s.size:
        ratios = np.array([wsr_all(_truth_state(truth, t), grid, config.wet_threshold)
                           for t in overpass_s])
        _write_series_csv(artifacts.add(outdir / "truth_wsr.csv"), overpass_s, ratios,
                          [str(k + 1) for k in range(N_DH)])
    lines = ["time_s,component,value"]
    for t, x in zip(truth.segment_starts, truth.segment_controls):
        for c, name in enumerate(COMPONENT_NAMES):
            lines.append(f"{float(t):.6f},{name},{float(x[c])!r}")
    artifacts.add(outdir / "truth_controls.csv").write_text("\n".join(lines) + "\n")
    mask_dir = outdir / "truth_masks"
    mask_dir.mkdir(exist_ok=True)
    for t in overpass_s:
        mask = flood_mask(_truth_state(truth, t), grid, config.wet_threshold)
        write_mask_pgm(mask, artifacts.add(mask_dir / _mask_name(t)), t,
                       config.wet_threshold)


def _mask_name(t: float) -> str:
    return f"mask_{int(round(float(t))):07d}s.pgm"


def _run_free(config: ExperimentConfig, grid, forcing, score_times, overpass_s):
    t0 = config.t0_hours * 3600.0
    t_end = config.event_end_hours * 3600.0
    ctl = ControlVector(ks=np.asarray(config.prior_mean[:N_KS], dtype=float),
                        mu=float(config.prior_mean[MU_INDEX]),
                        dh=np.zeros(N_DH))
    record = sorted({round(float(t), 6) for t in score_times}
                    | {round(float(t), 6) for t in overpass_s})
    state = ModelState(np.zeros((grid.ny, grid.nx)), time=t0)
    res = simulate(state, grid, ctl, forcing, t_end, record,
                   dt_max=config.dt_max_s, exterior_slope=config.exterior_slope)
    gauges = [GaugeSpec(name, int(cell)) for name, cell in config.gauges]
    wl = extract_wl(res.trajectory, grid, gauges, score_times)
    by_time = {round(s.time, 6): s for s in res.trajectory}
    wsr = np.array([wsr_all(by_time[round(float(t), 6)], grid, config.wet_threshold)
                    for t in overpass_s]) if overpass_s.size else np.zeros((0, N_DH))
    score_start = config.score_start_hours * 3600.0
    max_depth = np.zeros((grid.ny, grid.nx))
    for key, s in by_time.items():
        if key >= score_start - 1e-6:
            np.maximum(max_depth, s.depth, out=max_depth)
    fields = {round(float(t), 6): by_time[round(float(t), 6)].depth for t in overpass_s}
    return score_times, wl, overpass_s, wsr, max_depth, fields


def run_experiment(config: ExperimentConfig, outdir=None) -> RunResult:
    """Execute one configured experiment and persist its artifact tree."""
    outdir = Path(outdir) if outdir is not None else config.resolve_output_dir()
    outdir.mkdir(parents=True, exist_ok=True)
    artifacts = _ArtifactLog(outdir)
    started = time.perf_counter()
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "experiment": config.experiment,
        "label": config.run_label,
        "mode": config.mode,
        "status": "failed",
        "config": config.raw,
    }
    try:
        result = _run_experiment_inner(config, outdir, artifacts)
        manifest["status"] = "ok"
        manifest["n_cycles"] = len(result.records) if result.records is not None else 0
    except Exception as exc:
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        raise
    finally:
        manifest["runtime_s"] = round(time.perf_counter() - started, 3)
        manifest["artifacts"] = sorted(artifacts.paths)
        (outdir / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return result


def _run_experiment_inner(config: ExperimentConfig, outdir: Path,
                          artifacts: _ArtifactLog) -> RunResult:
    grid = read_grid(config.path("grid"))
    forcing = read_hydrograph(config.path("hydrograph"))
    gauges = [GaugeSpec(name, int(cell)) for name, cell in config.gauges]
    t0 = config.t0_hours * 3600.0
    t_end = config.event_end_hours * 3600.0
    label = config.run_label

    truth = None
    if config.mode == "osse":
        truth, obs_set, score_times, overpass_s = _build_truth(config, grid, forcing)
        write_observations(obs_set, artifacts.add(outdir / "observations.csv"))
        _write_truth_artifacts(config, grid, truth, score_times, overpass_s,
                               outdir, artifacts)
    else:
        obs_set = read_observations(config.path("observations"))
        score_times = _record_grid(t0, t_end, config.record_minutes, include_end=True)
        overpass_s = np.array(sorted(float(h) * 3600.0 for h in config.overpass_hours))

    records = None
    if config.experiment == "FR":
        (series_times, wl_series, op_times, wsr_series,
         max_depth, overpass_fields) = _run_free(config, grid, forcing,
                                                 score_times, overpass_s)
    else:
        cycles_dir = outdir / "cycles" if config.persist_cycles else None
        transform_override = "identity" if config.identity_transform else None
        records = run_event(config.cycle_config(), config.experiment, grid, forcing,
                            obs_set, gauges, t0, t_end, outdir=cycles_dir,
                            transform_override=transform_override)
        if cycles_dir is not None:
            for p in sorted(cycles_dir.rglob("*")):
                if p.is_file():
                    artifacts.add(p)
        series_times = np.concatenate([r.record_times for r in records])
        wl_series = np.concatenate([r.mean_wl for r in records])
        op_times = np.concatenate([r.overpass_times for r in records])
        wsr_series = (np.concatenate([r.mean_wsr for r in records])
                      if op_times.size else np.zeros((0, N_DH)))
        max_depth = np.zeros((grid.ny, grid.nx))
        for r in records:
            np.maximum(max_depth, r.max_mean_depth, out=max_depth)
        overpass_fields = {}
        for r in records:
            for k, t in enumerate(r.overpass_times):
                overpass_fields[round(float(t), 6)] = r.overpass_depth[k]
        _write_controls_series(records, artifacts.add(outdir / "controls_series.csv"))

    _write_series_csv(artifacts.add(outdir / "wl_series.csv"), series_times,
                      wl_series, [g.name for g in gauges])
    _write_series_csv(artifacts.add(outdir / "wsr_series.csv"), op_times,
                      wsr_series, [str(k + 1) for k in range(N_DH)])

    mask_dir = outdir / "masks"
    mask_dir.mkdir(exist_ok=True)
    sim_masks = {}
    for t in op_times:
        key = round(float(t), 6)
        state = ModelState(overpass_fields[key], float(t))
        sim_masks[key] = flood_mask(state, grid, config.wet_threshold)
        write_mask_pgm(sim_masks[key], artifacts.add(mask_dir / _mask_name(t)),
                       float(t), config.wet_threshold)

    scores = _score_run(config, grid, label, series_times, wl_series, op_times,
                        wsr_series, sim_masks, max_depth, truth, obs_set,
                        outdir, artifacts)
    write_scores(scores, artifacts.add(outdir / "scores.csv"))
    log.info("%s run complete: %d score rows at %s", label, len(scores), outdir)
    return RunResult(config=config, outdir=outdir, series_times=series_times,
                     wl_series=wl_series, overpass_times=op_times,
                     wsr_series=wsr_series, max_depth=max_depth, records=records,
                     truth=truth, scores=scores)


def _write_controls_series(records, path):
    lines = ["cycle,t_start_s,component,forecast_mean,analysis_mean"]
    for r in records:
        fm = r.x_forecast.mean(axis=0)
        am = r.x_analysis.mean(axis=0)
        for c, name in enumerate(COMPONENT_NAMES):
            lines.append(f"{r.index},{r.t_start:.6f},{name},"
                         f"{float(fm[c])!r},{float(am[c])!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_controls_series(path):
    rows = Path(path).read_text().strip().splitlines()
    out = []
    for row in rows[1:]:
        cycle, t, name, fm, am = row.split(",")
        out.append((int(cycle), float(t), name, float(fm), float(am)))
    return out


def _score_run(config, grid, label, series_times, wl_series, op_times, wsr_series,
               sim_masks, max_depth, truth, obs_set, outdir, artifacts):
    gauges = [GaugeSpec(name, int(cell)) for name, cell in config.gauges]
    score_start = config.score_start_hours * 3600.0
    keep = series_times >= score_start - 1e-6
    times_kept = series_times[keep]
    wl_kept = np.atleast_2d(wl_series)[keep]
    scores = []

    if config.mode == "osse":
        ref_times = np.array([s.time for s in truth.trajectory])
        ref_keep = ref_times >= score_start - 1e-6
        ref_wl = extract_wl(truth.trajectory, grid, gauges, ref_times[ref_keep])
        gauge_rmse = []
        for g, gauge in enumerate(gauges):
            value = rmse(times_kept, wl_kept[:, g], ref_times[ref_keep], ref_wl[:, g])
            gauge_rmse.append(value)
            scores.append((-1.0, label, "rmse_wl", gauge.name, value))
        scores.append((-1.0, label, "rmse_wl_mean", "all", float(np.mean(gauge_rmse))))

        cont_dir = outdir / "contingency"
        cont_dir.mkdir(exist_ok=True)
        csi_values = []
        for t in op_times:
            key = round(float(t), 6)
            truth_mask = flood_mask(_truth_state(truth, t), grid, config.wet_threshold)
            cont = contingency(sim_masks[key], truth_mask, grid)
            write_contingency_pgm(cont, artifacts.add(cont_dir / _mask_name(t)), t)
            value, perfect_dry = csi(cont)
            csi_values.append(value)
            scores.append((float(t), label, "csi", "all", value))
            scores.append((float(t), label, "csi_perfect_dry", "all",
                           1.0 if perfect_dry else 0.0))
        if csi_values:
            scores.append((-1.0, label, "csi_event_mean", "all",
                           float(np.mean(csi_values))))

        if op_times.size:
            truth_wsr = np.array([wsr_all(_truth_state(truth, t), grid,
                                          config.wet_threshold) for t in op_times])
            for i, t in enumerate(op_times):
                for k in range(N_DH):
                    scores.append((float(t), label, "wsr_misfit", str(k + 1),
                                   float(truth_wsr[i, k] - wsr_series[i, k])))

        markers = _truth_hwm_markers(config, grid, truth, score_start)
        if markers:
            pairs = np.array([[obs, grid.bed.ravel()[cell] + max_depth.ravel()[cell]]
                              for cell, obs in markers])
            lines = ["cell_index,observed_wl,simulated_wl"]
            for (cell, obs), sim in zip(markers, pairs[:, 1]):
                lines.append(f"{cell},{float(obs)!r},{float(sim)!r}")
            artifacts.add(outdir / "hwm.csv").write_text("\n".join(lines) + "\n")
            hwm_rmse = float(np.sqrt(np.mean((pairs[:, 0] - pairs[:, 1]) ** 2)))
            scores.append((-1.0, label, "hwm_rmse", "all", hwm_rmse))
    else:
        for g, gauge in enumerate(gauges):
            obs_t = [o.time for o in obs_set
                     if o.kind == KIND_WL and o.location == gauge.name
                     and o.time >= score_start - 1e-6]
            obs_v = [o.value for o in obs_set
                     if o.kind == KIND_WL and o.location == gauge.name
                     and o.time >= score_start - 1e-6]
            if obs_t:
                value = rmse(times_kept, wl_kept[:, g], obs_t, obs_v)
                scores.append((-1.0, label, "rmse_wl", gauge.name, value))
        wsr_obs = {}
        for o in obs_set:
            if o.kind == KIND_WSR:
                wsr_obs[(round(o.time, 6), o.location)] = o.value
        for i, t in enumerate(op_times):
            for k in range(N_DH):
                ref = wsr_obs.get((round(float(t), 6), str(k + 1)))
                if ref is not None:
                    scores.append((float(t), label, "wsr_misfit", str(k + 1),
                                   float(ref - wsr_series[i, k])))
    return scores


def _truth_hwm_markers(config, grid, truth, score_start):
    """Seeded floodplain cells wet at the truth peak, with their peak WL."""
    truth_max = np.zeros((grid.ny, grid.nx))
    for s in truth.trajectory:
        if s.time >= score_start - 1e-6:
            np.maximum(truth_max, s.depth, out=truth_max)
    wet = ((truth_max > config.wet_threshold)
           & (grid.cell_class == CLASS_FLOODPLAIN)).ravel()
    candidates = np.nonzero(wet)[0]
    if candidates.size == 0:
        return []
    rng = np.random.default_rng([int(config.obs_seed), 303])
    n = min(int(config.hwm_count), candidates.size)
    cells = np.sort(rng.choice(candidates, size=n, replace=False))
    flat_z = grid.bed.ravel()
    flat_h = truth_max.ravel()
    return [(int(c), float(flat_z[c] + flat_h[c])) for c in cells]


# ---------------------------------------------------------------------------
# Cross-run tooling

def compare_runs(run_dirs, out_path=None):
    """Concatenate the score tables of several runs into one long table."""
    rows = []
    for d in run_dirs:
        rows.extend(read_scores(Path(d) / "scores.csv"))
    if out_path is not None:
        write_scores(rows, out_path)
    return rows


def collect_phi_tables(run_dir, aggregate: bool = False):
    """Gather persisted anamorphosis nodes from a run's cycle directories.

    Returns rows (cycle, slot, y, z); with ``aggregate`` the per-cycle
    detail is pooled into (slot, y, z) sorted by slot then y.
    """
    run_dir = Path(run_dir)
    rows = []
    for phi_path in sorted(run_dir.glob("cycles/cycle_*/phi_slot_*.csv")):
        cycle = int(phi_path.parent.name.split("_")[1])
        slot = int(phi_path.stem.split("_")[2])
        phi = read_phi(phi_path)
        for y, z in zip(phi.nodes_y, phi.nodes_z):
            rows.append((cycle, slot, float(y), float(z)))
    if aggregate:
        pooled = sorted({(slot, y, z) for _, slot, y, z in rows})
        return pooled
    return rows
