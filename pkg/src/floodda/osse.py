"""Twin-experiment machinery: truth runs with drifting parameters and
synthetic observations.

The truth run uses the same model as the assimilation experiments but with
time-varying controls: stepped channel frictions, a slowly oscillating
inflow factor and floodplain level increments shaped as negative cosine
pulses that settle to a constant negative offset during the recession.
Parameters are held constant over each cycling segment, sampled from the
schedule at segment starts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ValidationError
from .hydro import (ControlVector, Grid, Hydrograph, ModelState, N_CONTROL, N_DH,
                    N_KS, simulate)
from .observe import Observation, KIND_WL, KIND_WSR, flood_mask, gauge_wl, wsr_all


@dataclass
class TruthSchedule:
    """Time-dependent truth controls for a twin experiment.

    ``ks_steps`` holds one step function per friction component: a list of
    (time_s, multiplier) pairs with increasing times; the multiplier of the
    latest step not after t applies, scaling the prior mean. The inflow
    factor follows 1 + amplitude*cos(2*pi*t/period). Level increments dip
    through ``n_pulses`` negative cosine pulses of ``dh_amplitude`` between
    ``pulse_start_s`` and ``recess_start_s``, then hold ``dh_recess``.
    """

    prior_mean: np.ndarray
    ks_steps: list
    mu_amplitude: float = 0.1
    mu_period_s: float = 96.0 * 3600.0
    dh_amplitude: float = 0.2
    dh_recess: float = -0.18
    pulse_start_s: float = 30.0 * 3600.0
    recess_start_s: float = 63.0 * 3600.0
    n_pulses: int = 3

    def __post_init__(self):
        self.prior_mean = np.asarray(self.prior_mean, dtype=float)
        if self.prior_mean.shape != (N_CONTROL,):
            raise ConfigurationError(f"prior_mean must be a {N_CONTROL}-vector")
        if len(self.ks_steps) != N_KS:
            raise ConfigurationError(f"ks_steps needs one step list per {N_KS} components")
        for steps in self.ks_steps:
            times = [t for t, _ in steps]
            if not steps or any(b <= a for a, b in zip(times, times[1:])):
                raise ConfigurationError("each ks step list needs increasing times")
        if self.recess_start_s <= self.pulse_start_s:
            raise ConfigurationError("recess must start after the pulses")

    def ks_at(self, t: float) -> np.ndarray:
        out = np.empty(N_KS)
        for k, steps in enumerate(self.ks_steps):
            mult = steps[0][1]
            for ts, m in steps:
                if ts <= t + 1e-9:
                    mult = m
            out[k] = self.prior_mean[k] * mult
        return out

    def mu_at(self, t: float) -> float:
        return 1.0 + self.mu_amplitude * np.cos(2.0 * np.pi * t / self.mu_period_s)

    def dh_at(self, t: float) -> np.ndarray:
        if t < self.pulse_start_s:
            val = 0.0
        elif t >= self.recess_start_s:
            val = self.dh_recess
        else:
            span = (self.recess_start_s - self.pulse_start_s) / self.n_pulses
            u = ((t - self.pulse_start_s) % span) / span
            val = -self.dh_amplitude * 0.5 * (1.0 - np.cos(2.0 * np.pi * u))
        return np.full(N_DH, val)

    def controls_at(self, t: float) -> np.ndarray:
        return np.concatenate([self.ks_at(t), [self.mu_at(t)], self.dh_at(t)])


@dataclass
class TruthRun:
    trajectory: list
    final: ModelState
    segment_starts: np.ndarray
    segment_controls: np.ndarray  # (n_segments, 13)


def run_truth(schedule: TruthSchedule, grid: Grid, forcing: Hydrograph,
              t0: float, t_end: float, record_times, segment_hours: float = 6.0,
              dh_apply_hours: float = 1.0, dt_max: float = 600.0,
              exterior_slope: float = 1e-4,
              initial_state: ModelState | None = None) -> TruthRun:
    """Continuous truth integration with per-segment constant parameters.

    The event is cut into ``segment_hours`` segments; each takes the
    schedule's controls at its start time, with that segment's level
    increments spread over its hourly marks.
    """
    if initial_state is None:
        initial_state = ModelState(np.zeros((grid.ny, grid.nx)), time=float(t0))
    seg_s = segment_hours * 3600.0
    record = np.atleast_1d(np.asarray(record_times, dtype=float))
    state = initial_state
    trajectory = []
    seg_starts = []
    seg_controls = []
    t = float(t0)
    while t < t_end - 1e-6:
        t_seg_end = min(t + seg_s, t_end)
        x = schedule.controls_at(t)
        ctl = ControlVector(ks=x[:N_KS].copy(), mu=float(x[N_KS]), dh=x[N_KS + 1:].copy())
        seg_record = record[(record >= t - 1e-9) & (record < t_seg_end - 1e-9)]
        if np.isclose(t_seg_end, t_end):
            seg_record = record[(record >= t - 1e-9) & (record <= t_seg_end + 1e-9)]
        step_h = dh_apply_hours * 3600.0
        n_apply = int(np.floor((t_seg_end - t) / step_h + 1e-9))
        sched = [t + (k + 1) * step_h for k in range(n_apply)]
        res = simulate(state, grid, ctl, forcing, t_seg_end, seg_record,
                       dh_schedule=sched if sched else None,
                       dt_max=dt_max, exterior_slope=exterior_slope)
        trajectory.extend(res.trajectory)
        seg_starts.append(t)
        seg_controls.append(x)
        state = res.final
        t = t_seg_end
    return TruthRun(trajectory=trajectory, final=state,
                    segment_starts=np.array(seg_starts),
                    segment_controls=np.array(seg_controls))


def synthesize_obs(truth: TruthRun, grid: Grid, gauges, gauge_times,
                   overpass_times, seed: int, tau_wl: float = 0.15,
                   sigma_wsr: float = 0.1,
                   wet_threshold: float = 0.05) -> list[Observation]:
    """Noisy synthetic observations from a truth trajectory.

    WL entries get Gaussian noise with sigma tau_wl * true WL (the sigma is
    stored with the observation). WSR entries get N(0, sigma_wsr^2) noise
    and are clipped back to [0, 1]. Every requested time must be recorded
    in the truth trajectory.
    """
    from .observe import extract_wl  # local import keeps module load light

    gauge_times = np.atleast_1d(np.asarray(gauge_times, dtype=float))
    overpass_times = np.atleast_1d(np.asarray(overpass_times, dtype=float))
    obs: list[Observation] = []

    wl_true = extract_wl(truth.trajectory, grid, gauges, gauge_times)
    for g, gauge in enumerate(gauges):
        rng = np.random.default_rng([int(seed), 101, g])
        noise = rng.standard_normal(gauge_times.size)
        for j, t in enumerate(gauge_times):
            sig = tau_wl * wl_true[j, g]
            if sig < 0:
                raise ValidationError("negative WL sigma; check the vertical datum")
            obs.append(Observation(time=float(t), kind=KIND_WL, location=gauge.name,
                                   value=float(wl_true[j, g] + noise[j] * sig),
                                   sigma=float(sig)))

    times_map = {round(s.time, 6): s for s in truth.trajectory}
    wsr_rngs = [np.random.default_rng([int(seed), 202, k]) for k in range(N_DH)]
    for t in overpass_times:
        state = times_map.get(round(float(t), 6))
        if state is None:
            raise ValidationError(f"truth trajectory has no record at overpass t={t}")
        ratios = wsr_all(state, grid, wet_threshold)
        for k in range(N_DH):
            noisy = ratios[k] + wsr_rngs[k].standard_normal() * sigma_wsr
            obs.append(Observation(time=float(t), kind=KIND_WSR, location=str(k + 1),
                                   value=float(np.clip(noisy, 0.0, 1.0)),
                                   sigma=float(sigma_wsr)))
    obs.sort(key=lambda o: (o.time, 0 if o.kind == KIND_WL else 1, o.location))
    return obs
