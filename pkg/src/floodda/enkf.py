"""Dual state-parameter stochastic ensemble Kalman filter on sliding windows.

Each cycle covers an 18 h window shifted by 6 h (12 h overlap). Members
carry their own restart states; controls are resampled each cycle around
the previous analysis mean with a spread that blends the analyzed spread
and the climatological prior. The analysis updates friction, inflow and
floodplain-level controls from water level and wet-surface-ratio
observations, with perturbed observations and anomaly covariances scaled
by 1/(Ne - 1). Wet-surface ratios may be passed through a per-slot
Gaussian anamorphosis before the update.

Observation-space localization keeps the floodplain level increments
informed by WSR entries only: their gain rows are solved on the WSR block
alone, and their WL entries are exact zeros.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .anamorphosis import SampleSpec, build_anamorphosis, transform_obs_block, write_phi
from .errors import ConfigurationError, ValidationError
from .hydro import (COMPONENT_NAMES, N_CONTROL, N_DH, N_KS, ControlVector, Grid,
                    Hydrograph, ModelState, simulate, simulate_ensemble,
                    write_restart)
from .observe import KIND_WL, KIND_WSR, model_equivalent, wsr_all

log = logging.getLogger(__name__)

EXPERIMENT_KINDS = ("FR", "IDA", "IHDA", "IGDA")

# rng purpose tags
_TAG_RESAMPLE = 1
_TAG_OBS = 2
_TAG_PHI = 3

DH_SLICE = slice(N_KS + 1, N_CONTROL)
KS_SLICE = slice(0, N_KS)
MU_INDEX = N_KS


def member_rng(master_seed: int, cycle: int, member: int, tag: int) -> np.random.Generator:
    """Independent per-(cycle, member, purpose) stream from the master seed."""
    return np.random.default_rng([int(master_seed), int(cycle), int(member), int(tag)])


def derived_seed(master_seed: int, *parts) -> int:
    ss = np.random.SeedSequence([int(master_seed), *[int(p) for p in parts]])
    return int(ss.generate_state(1)[0])


@dataclass
class CycleConfig:
    """Assimilation cycling parameters.

    ``prior_mean``/``prior_sigma`` are 13-vectors over the control
    components (7 friction values, inflow factor, 5 level increments).
    ``blend`` weighs the previous analyzed spread against the prior spread
    when resampling. Times are hours except where suffixed otherwise.
    """

    prior_mean: np.ndarray
    prior_sigma: np.ndarray
    n_members: int = 75
    window_hours: float = 18.0
    shift_hours: float = 6.0
    spinup_hours: float = 3.0
    span_end_hours: float = 6.0
    restart_hours: float = 24.0
    blend: float = 0.3
    master_seed: int = 0
    wl_thin_hours: float = 1.0
    record_minutes: float = 15.0
    dh_apply_hours: float = 1.0
    ks_floor: float = 1.0
    mu_floor: float = 0.05
    wet_threshold: float = 0.05
    localize_dh: bool = True
    sigma_mode: str = "preserved"
    perturb_in_transformed_space: bool = False
    dt_max: float = 600.0
    exterior_slope: float = 1e-4
    persist_restarts: bool = True

    def __post_init__(self):
        self.prior_mean = np.asarray(self.prior_mean, dtype=float)
        self.prior_sigma = np.asarray(self.prior_sigma, dtype=float)
        if self.prior_mean.shape != (N_CONTROL,) or self.prior_sigma.shape != (N_CONTROL,):
            raise ConfigurationError(f"priors must be {N_CONTROL}-vectors")
        if (self.prior_sigma < 0).any():
            raise ConfigurationError("prior sigma must be non-negative")
        if self.n_members < 2:
            raise ConfigurationError("need at least 2 ensemble members")
        if not 0.0 <= self.blend <= 1.0:
            raise ConfigurationError("blend weight must lie in [0, 1]")
        if self.sigma_mode not in ("preserved", "transformed"):
            raise ConfigurationError("sigma_mode must be 'preserved' or 'transformed'")
        for name in ("window_hours", "shift_hours", "spinup_hours", "span_end_hours",
                     "restart_hours", "wl_thin_hours", "record_minutes", "dh_apply_hours"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")


def control_mask(kind: str) -> np.ndarray:
    """Active control components for an experiment kind."""
    if kind not in EXPERIMENT_KINDS:
        raise ConfigurationError(f"unknown experiment kind {kind!r}")
    mask = np.ones(N_CONTROL, dtype=bool)
    if kind == "FR":
        mask[:] = False
    elif kind == "IDA":
        mask[DH_SLICE] = False
    return mask


def resample_controls(prev_analysis, config: CycleConfig, cycle_index: int,
                      mask: np.ndarray) -> np.ndarray:
    """Draw the forecast control ensemble for one cycle.

    Cycle 1 samples each active component from its Gaussian prior. Later
    cycles re-center on the previous analysis mean (level increments
    re-center on zero) with spread blend*std_a + (1 - blend)*sigma_prior,
    the std taken with 1/(Ne - 1). Inactive components carry the prior
    mean. Physical floors are applied so every draw is a valid control.
    """
    ne = config.n_members
    if cycle_index <= 1 or prev_analysis is None:
        center = config.prior_mean.copy()
        sigma = config.prior_sigma.copy()
    else:
        prev = np.asarray(prev_analysis, dtype=float)
        center = prev.mean(axis=0)
        center[DH_SLICE] = 0.0
        sigma = config.blend * prev.std(axis=0, ddof=1) + (1.0 - config.blend) * config.prior_sigma
    xf = np.empty((ne, N_CONTROL))
    for i in range(ne):
        rng = member_rng(config.master_seed, cycle_index, i, _TAG_RESAMPLE)
        xf[i] = center + rng.standard_normal(N_CONTROL) * sigma
    xf[:, ~mask] = config.prior_mean[~mask]
    _apply_floors(xf, config)
    return xf


def _apply_floors(x: np.ndarray, config: CycleConfig):
    np.maximum(x[:, KS_SLICE], config.ks_floor, out=x[:, KS_SLICE])
    x[:, MU_INDEX] = np.maximum(x[:, MU_INDEX], config.mu_floor)


def observation_noise(n_obs: int, n_members: int, master_seed: int,
                      cycle_index: int = 0) -> np.ndarray:
    """Standard-normal draws, one row per member from its own stream."""
    out = np.empty((n_members, n_obs))
    for i in range(n_members):
        rng = member_rng(master_seed, cycle_index, i, _TAG_OBS)
        out[i] = rng.standard_normal(n_obs)
    return out


def perturb_observations(obs_set, n_members: int, master_seed: int,
                         cycle_index: int = 0,
                         noise: np.ndarray | None = None) -> np.ndarray:
    """Per-member perturbed copies of each observation value.

    Gaussian noise with the stored sigma; WSR entries are clipped back to
    [0, 1] so perturbed ratios stay physical.
    """
    values = np.array([o.value for o in obs_set], dtype=float)
    sigmas = np.array([o.sigma for o in obs_set], dtype=float)
    wsr_cols = np.array([o.kind == KIND_WSR for o in obs_set], dtype=bool)
    if noise is None:
        noise = observation_noise(values.size, n_members, master_seed, cycle_index)
    out = values + noise * sigmas
    out[:, wsr_cols] = np.clip(out[:, wsr_cols], 0.0, 1.0)
    return out


def stochastic_update(xf: np.ndarray, yf: np.ndarray, obs_pert: np.ndarray,
                      sigmas: np.ndarray, local_rows=None, local_cols=None):
    """Stochastic EnKF update in (possibly transformed) observation space.

    xf: (Ne, n) control ensemble; yf: (Ne, m) equivalents; obs_pert:
    (Ne, m) perturbed observations; sigmas: (m,) observation errors.
    ``local_rows``/``local_cols`` select control rows that may only be
    informed by the complement of ``local_cols``: those gain rows are
    solved on the reduced observation block and their excluded entries are
    exact zeros. Returns (xa, K).
    """
    xf = np.asarray(xf, dtype=float)
    yf = np.asarray(yf, dtype=float)
    ne = xf.shape[0]
    if ne < 2:
        raise ConfigurationError("stochastic update needs at least 2 members")
    X = xf - xf.mean(axis=0)
    Y = yf - yf.mean(axis=0)
    pxy = X.T @ Y / (ne - 1)
    pyy = Y.T @ Y / (ne - 1)
    s_mat = pyy + np.diag(np.square(np.asarray(sigmas, dtype=float)))

    k_gain = scipy.linalg.solve(s_mat, pxy.T, assume_a="pos").T
    if local_rows is not None and np.any(local_rows) and local_cols is not None \
            and np.any(local_cols):
        keep = ~np.asarray(local_cols)
        rows = np.asarray(local_rows)
        k_gain[np.ix_(rows, np.asarray(local_cols))] = 0.0
        if keep.any():
            s_kk = s_mat[np.ix_(keep, keep)]
            pxy_k = pxy[np.ix_(rows, keep)]
            k_gain[np.ix_(rows, keep)] = scipy.linalg.solve(s_kk, pxy_k.T, assume_a="pos").T
        else:
            k_gain[rows] = 0.0
    xa = xf + (obs_pert - yf) @ k_gain.T
    return xa, k_gain


@dataclass
class GainDiagnostics:
    """Analysis by-products persisted with each cycle."""

    gain: np.ndarray
    innovations: np.ndarray
    component_names: tuple
    obs_kinds: list
    obs_times: np.ndarray
    obs_locations: list
    sigma_eff: np.ndarray


def analyze(xf: np.ndarray, mask: np.ndarray, equiv: np.ndarray, obs_set,
            obs_pert: np.ndarray, config: CycleConfig, transform: str,
            phis=None, obs_noise: np.ndarray | None = None):
    """One-cycle control update from a window of observations.

    ``equiv`` and ``obs_pert`` are (Ne, n_obs) in physical space. With
    transform='anamorphosis', WSR slots go through their per-slot functions
    (``phis``); otherwise everything stays in physical space. By default
    observations are perturbed in physical space before the transform; with
    perturb_in_transformed_space the unperturbed values are transformed
    first and the ``obs_noise`` draws are applied in Gaussian space.
    Observation error sigmas keep their physical value in the transformed
    space unless sigma_mode='transformed', which re-estimates WSR sigmas
    from the transformed perturbed-observation scatter. Floors are applied
    to the analyzed friction and inflow components.
    Returns (xa, GainDiagnostics).
    """
    kinds = [o.kind for o in obs_set]
    sigmas = np.array([o.sigma for o in obs_set], dtype=float)
    if transform == "anamorphosis":
        if phis is None:
            raise ConfigurationError("anamorphosis transform requires phi functions")
        if config.perturb_in_transformed_space:
            if obs_noise is None:
                raise ConfigurationError(
                    "transformed-space perturbation requires the noise draws")
            ne = equiv.shape[0]
            base = np.tile(np.array([o.value for o in obs_set], dtype=float), (ne, 1))
            base_t, equiv_t = transform_obs_block(phis, kinds, base, equiv)
            obs_t = base_t + obs_noise * sigmas
        else:
            obs_t, equiv_t = transform_obs_block(phis, kinds, obs_pert, equiv)
    elif transform == "identity":
        obs_t, equiv_t = obs_pert, equiv
    else:
        raise ConfigurationError(f"unknown transform {transform!r}")

    sigma_eff = sigmas.copy()
    if transform == "anamorphosis" and config.sigma_mode == "transformed":
        for j, kind in enumerate(kinds):
            if kind == KIND_WSR:
                sigma_eff[j] = float(np.std(obs_t[:, j], ddof=1))

    active = np.asarray(mask, dtype=bool)
    names = tuple(n for n, a in zip(COMPONENT_NAMES, active) if a)
    dh_rows = np.array([n.startswith("dh") for n in names], dtype=bool)
    wl_cols = np.array([k == KIND_WL for k in kinds], dtype=bool)
    local_rows = dh_rows if config.localize_dh else None
    local_cols = wl_cols if config.localize_dh else None

    xa_active, k_gain = stochastic_update(xf[:, active], equiv_t, obs_t, sigma_eff,
                                          local_rows=local_rows, local_cols=local_cols)
    xa = xf.copy()
    xa[:, active] = xa_active
    _apply_floors(xa, config)
    diag = GainDiagnostics(
        gain=k_gain,
        innovations=obs_t - equiv_t,
        component_names=names,
        obs_kinds=kinds,
        obs_times=np.array([o.time for o in obs_set]),
        obs_locations=[o.location for o in obs_set],
        sigma_eff=sigma_eff,
    )
    return xa, diag


@dataclass
class CycleRecord:
    """Everything one cycle leaves behind for scoring and persistence."""

    index: int
    t_start: float
    t_end: float
    t_span_end: float
    restart_time: float
    obs_set: list
    x_forecast: np.ndarray
    x_analysis: np.ndarray
    mask: np.ndarray
    mean_dh: np.ndarray
    updated: bool
    diagnostics: GainDiagnostics | None
    record_times: np.ndarray
    mean_wl: np.ndarray
    mean_wsr: np.ndarray
    overpass_times: np.ndarray
    overpass_depth: np.ndarray
    max_mean_depth: np.ndarray
    phis: list | None = None
    member_trajectories: list | None = None


def thin_wl_observations(obs_set, t_start: float, thin_hours: float):
    """Keep the earliest WL observation per gauge per thinning bucket.

    WSR observations always pass through. Bucket k covers
    [t_start + k*thin, t_start + (k+1)*thin).
    """
    thin_s = thin_hours * 3600.0
    seen = set()
    kept = []
    for o in sorted(obs_set, key=lambda o: (o.time, o.kind, o.location)):
        if o.kind != KIND_WL:
            kept.append(o)
            continue
        bucket = int(np.floor((o.time - t_start) / thin_s + 1e-9))
        key = (o.location, bucket)
        if key not in seen:
            seen.add(key)
            kept.append(o)
    kept.sort(key=lambda o: (o.time, 0 if o.kind == KIND_WL else 1, o.location))
    return kept


def _dh_schedule(start: float, end: float, cadence_hours: float) -> list:
    """Application times strictly after ``start`` up to ``end`` inclusive."""
    step = cadence_hours * 3600.0
    n = int(np.floor((end - start) / step + 1e-9))
    return [start + (k + 1) * step for k in range(n)]


def _record_grid(t0: float, t1: float, minutes: float, include_end: bool) -> np.ndarray:
    step = minutes * 60.0
    n = int(np.floor((t1 - t0) / step + 1e-9))
    times = [t0 + k * step for k in range(n + 1)]
    if not include_end and times and np.isclose(times[-1], t1):
        times = times[:-1]
    return np.array(times)


def run_event(config: CycleConfig, kind: str, grid: Grid, forcing: Hydrograph,
              obs_set, gauges, t0: float, t_event_end: float,
              outdir=None, transform_override: str | None = None,
              initial_state: ModelState | None = None,
              keep_member_states: bool = False) -> list[CycleRecord]:
    """Chain assimilation cycles over one flood event.

    Kinds: IDA estimates friction and inflow from WL observations only
    (level increments stay off); IHDA adds the level increments and WSR
    observations in physical space; IGDA additionally passes WSR slots
    through the Gaussian anamorphosis. ``transform_override`` forces the
    observation transform regardless of kind ('identity' makes an IGDA run
    reproduce IHDA bit for bit under equal seeds).

    The first cycle starts after a direct warmup run of
    ``restart_hours`` + ``spinup_hours``; its members share the warmup
    state as restart. Every cycle: resample controls, integrate members
    over the window (level increments spread over the early window),
    update from the window's observations (a window with none is a logged
    no-op), re-integrate with analyzed controls and the ensemble-mean
    level increment, and save each member's state at t_start + shift as
    its next restart.
    """
    if kind == "FR":
        raise ConfigurationError("FR runs have no assimilation cycles; use a direct simulation")
    mask = control_mask(kind)
    transform = transform_override or ("anamorphosis" if kind == "IGDA" else "identity")
    if transform not in ("identity", "anamorphosis"):
        raise ConfigurationError(f"unknown transform {transform!r}")
    usable = [o for o in obs_set if kind != "IDA" or o.kind == KIND_WL]

    ne = config.n_members
    shift_s = config.shift_hours * 3600.0
    window_s = config.window_hours * 3600.0
    spinup_s = config.spinup_hours * 3600.0

    if initial_state is None:
        initial_state = ModelState(np.zeros((grid.ny, grid.nx)), time=float(t0))
    ctl0 = ControlVector(ks=config.prior_mean[KS_SLICE].copy(),
                         mu=float(config.prior_mean[MU_INDEX]),
                         dh=np.zeros(N_DH), mask=mask.copy())
    warm_end = t0 + config.restart_hours * 3600.0
    warm = simulate(initial_state, grid, ctl0, forcing, warm_end, [warm_end],
                    dt_max=config.dt_max, exterior_slope=config.exterior_slope)
    restarts = [warm.final] * ne
    log.info("%s warmup complete at t=%.0f s", kind, warm_end)

    gauge_list = list(gauges)
    records: list[CycleRecord] = []
    prev_xa = None
    t_start = warm_end + spinup_s
    cycle = 0
    while t_start < t_event_end - 1e-6:
        cycle += 1
        t_end_win = min(t_start + window_s, t_event_end)
        t_span_end = min(t_start + config.span_end_hours * 3600.0, t_event_end)
        t_restart_save = min(t_start + shift_s, t_event_end)
        window_obs = thin_wl_observations(
            [o for o in usable if t_start - 1e-6 <= o.time <= t_end_win + 1e-6],
            t_start, config.wl_thin_hours)
        n_obs = len(window_obs)

        xf = resample_controls(prev_xa, config, cycle, mask)

        obs_times = sorted({round(o.time, 6) for o in window_obs})
        restart_time = restarts[0].time
        dh_sched = _dh_schedule(max(restart_time, t_start - spinup_s),
                                t_restart_save, config.dh_apply_hours)

        # Nothing past the last observation feeds the update, so the forecast
        # pass stops there (the rerun below produces the analysis trajectory).
        t_forecast_end = max(obs_times[-1] if obs_times else t_start,
                             t_restart_save)
        restart_depths = np.stack([r.depth for r in restarts])
        ctls_f = [ControlVector(ks=xf[i, KS_SLICE].copy(), mu=float(xf[i, MU_INDEX]),
                                dh=xf[i, DH_SLICE].copy(), mask=mask.copy())
                  for i in range(ne)]
        ens_f = simulate_ensemble(restart_depths, restart_time, grid, ctls_f,
                                  forcing, t_forecast_end,
                                  obs_times, dh_schedule=dh_sched,
                                  dt_max=config.dt_max,
                                  exterior_slope=config.exterior_slope)
        equiv = np.empty((ne, n_obs))
        member_states = [] if keep_member_states else None
        for i in range(ne):
            traj = [ModelState(d[i], t) for t, d in zip(ens_f.times, ens_f.depths)]
            if n_obs:
                equiv[i] = model_equivalent(traj, grid, window_obs, gauge_list,
                                            config.wet_threshold)
            if member_states is not None:
                member_states.append(traj)

        phis = None
        if n_obs:
            noise = observation_noise(n_obs, ne, config.master_seed, cycle)
            obs_pert = perturb_observations(window_obs, ne, config.master_seed,
                                            cycle, noise=noise)
            if transform == "anamorphosis":
                phis = []
                for j, o in enumerate(window_obs):
                    if o.kind == KIND_WSR:
                        seed = derived_seed(config.master_seed, cycle, j, _TAG_PHI)
                        phis.append(build_anamorphosis(SampleSpec(equiv[:, j], seed)))
                    else:
                        phis.append(None)
            xa, diag = analyze(xf, mask, equiv, window_obs, obs_pert, config,
                               transform, phis=phis, obs_noise=noise)
            updated = True
        else:
            xa = xf.copy()
            diag = None
            updated = False
            log.info("%s cycle %d [%.0f, %.0f]: no observations, controls persisted",
                     kind, cycle, t_start, t_end_win)

        mean_dh = xa[:, DH_SLICE].mean(axis=0) if mask[DH_SLICE].any() else np.zeros(N_DH)

        last_cycle = t_start + shift_s >= t_event_end - 1e-6
        rec_times = _record_grid(t_start, t_span_end, config.record_minutes,
                                 include_end=last_cycle)
        overpass_times = np.array(sorted(
            {round(o.time, 6) for o in obs_set if o.kind == KIND_WSR
             and t_start - 1e-6 <= o.time
             and (o.time < t_span_end - 1e-6
                  or (last_cycle and o.time <= t_span_end + 1e-6))}))
        rerun_record = sorted(set(np.round(rec_times, 6)) | set(np.round(overpass_times, 6))
                              | {round(t_restart_save, 6)})
        ctls_a = [ControlVector(ks=xa[i, KS_SLICE].copy(), mu=float(xa[i, MU_INDEX]),
                                dh=mean_dh.copy(), mask=mask.copy())
                  for i in range(ne)]
        ens_a = simulate_ensemble(restart_depths, restart_time, grid, ctls_a,
                                  forcing, max(t_span_end, t_restart_save),
                                  list(rerun_record), dh_schedule=dh_sched,
                                  dt_max=config.dt_max,
                                  exterior_slope=config.exterior_slope)
        mean_fields = {round(t, 6): d.mean(axis=0)
                       for t, d in zip(ens_a.times, ens_a.depths)}
        save_idx = [k for k, t in enumerate(ens_a.times)
                    if np.isclose(t, t_restart_save)]
        if save_idx:
            saved = ens_a.depths[save_idx[0]]
            next_restarts = [ModelState(saved[i], t_restart_save) for i in range(ne)]
        else:
            next_restarts = [ModelState(ens_a.final_depth[i], ens_a.final_time)
                             for i in range(ne)]
        rerun_states = None
        if keep_member_states:
            rerun_states = [[ModelState(d[i], t)
                             for t, d in zip(ens_a.times, ens_a.depths)]
                            for i in range(ne)]
        gauge_cells = np.array([g.cell for g in gauge_list], dtype=int)
        bed_g = grid.bed.ravel()[gauge_cells]
        mean_wl = np.array([[bed_g[g] + mean_fields[round(t, 6)].ravel()[gauge_cells[g]]
                             for g in range(len(gauge_list))] for t in rec_times])
        mean_wsr = np.array([wsr_all(ModelState(mean_fields[round(t, 6)], t), grid,
                                     config.wet_threshold)
                             for t in overpass_times]) if overpass_times.size else np.zeros((0, N_DH))
        chunk_max = np.zeros((grid.ny, grid.nx))
        for t in rec_times:
            np.maximum(chunk_max, mean_fields[round(t, 6)], out=chunk_max)
        overpass_depth = np.array([mean_fields[round(t, 6)] for t in overpass_times]) \
            if overpass_times.size else np.zeros((0, grid.ny, grid.nx))

        record = CycleRecord(
            index=cycle, t_start=t_start, t_end=t_end_win, t_span_end=t_span_end,
            restart_time=restart_time, obs_set=window_obs,
            x_forecast=xf, x_analysis=xa, mask=mask.copy(), mean_dh=mean_dh,
            updated=updated, diagnostics=diag, record_times=rec_times,
            mean_wl=mean_wl, mean_wsr=mean_wsr, overpass_times=overpass_times,
            overpass_depth=overpass_depth, max_mean_depth=chunk_max, phis=phis,
            member_trajectories=rerun_states,
        )
        records.append(record)
        if outdir is not None:
            persist_cycle(record, next_restarts, Path(outdir), config)
        log.info("%s cycle %d [%.0f, %.0f]: %d obs, updated=%s", kind, cycle,
                 t_start, t_end_win, n_obs, updated)

        prev_xa = xa
        restarts = next_restarts
        t_start += shift_s
    return records


def persist_cycle(record: CycleRecord, restarts, outdir: Path, config: CycleConfig):
    """Write one cycle directory: controls, gain, innovations, restarts, phis."""
    cdir = outdir / f"cycle_{record.index:03d}"
    cdir.mkdir(parents=True, exist_ok=True)

    lines = ["member,component,forecast,analysis"]
    for i in range(record.x_forecast.shape[0]):
        for c, name in enumerate(COMPONENT_NAMES):
            lines.append(f"{i},{name},{float(record.x_forecast[i, c])!r},"
                         f"{float(record.x_analysis[i, c])!r}")
    (cdir / "controls.csv").write_text("\n".join(lines) + "\n")

    diag = record.diagnostics
    if diag is not None:
        lines = ["component,obs_index,kind,location,time_s,gain"]
        for r, name in enumerate(diag.component_names):
            for j in range(diag.gain.shape[1]):
                lines.append(
                    f"{name},{j},{diag.obs_kinds[j]},{diag.obs_locations[j]},"
                    f"{diag.obs_times[j]:.6f},{float(diag.gain[r, j])!r}")
        (cdir / "gain.csv").write_text("\n".join(lines) + "\n")

        lines = ["member,obs_index,innovation"]
        for i in range(diag.innovations.shape[0]):
            for j in range(diag.innovations.shape[1]):
                lines.append(f"{i},{j},{float(diag.innovations[i, j])!r}")
        (cdir / "innovations.csv").write_text("\n".join(lines) + "\n")

    if record.phis is not None:
        for j, phi in enumerate(record.phis):
            if phi is not None:
                write_phi(phi, cdir / f"phi_slot_{j:03d}.csv")

    if config.persist_restarts:
        for i, state in enumerate(restarts):
            write_restart(state, cdir / f"restart_m{i:03d}.csv")
