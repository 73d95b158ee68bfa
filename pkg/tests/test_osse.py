import dataclasses

import numpy as np
import pytest

from floodda.errors import ConfigurationError, ValidationError
from floodda.hydro import N_DH, N_KS, ModelState, simulate
from floodda.observe import GaugeSpec, extract_wl, wsr_all
from floodda.osse import TruthSchedule, run_truth, synthesize_obs

from conftest import (flat_hydrograph, make_ctl, make_grid,
                      with_five_subdomains)

PRIOR_MEAN = np.array([8.0] + [15.0] * 6 + [1.0] + [0.0] * 5)


def schedule(**kw):
    steps = [[(0.0, 1.0)] for _ in range(N_KS)]
    steps[5] = [(0.0, 1.0), (48.0 * 3600.0, 0.84)]
    steps[6] = [(0.0, 1.0), (60.0 * 3600.0, 1.18)]
    base = dict(prior_mean=PRIOR_MEAN, ks_steps=steps)
    base.update(kw)
    return TruthSchedule(**base)


# ---------------------------------------------------------------------------
# Schedule evaluation


def test_ks_steps_switch_at_their_times():
    sched = schedule()
    assert sched.ks_at(0.0)[5] == 15.0
    assert sched.ks_at(48.0 * 3600.0 - 1.0)[5] == 15.0
    assert sched.ks_at(48.0 * 3600.0)[5] == 15.0 * 0.84
    assert sched.ks_at(96.0 * 3600.0)[5] == 15.0 * 0.84
    assert sched.ks_at(59.0 * 3600.0)[6] == 15.0
    assert sched.ks_at(61.0 * 3600.0)[6] == 15.0 * 1.18
    assert (sched.ks_at(70.0 * 3600.0)[:5] == PRIOR_MEAN[:5]).all()


def test_mu_is_a_cosine_around_one():
    sched = schedule()
    assert sched.mu_at(0.0) == 1.1
    assert sched.mu_at(48.0 * 3600.0) == pytest.approx(0.9)
    assert sched.mu_at(24.0 * 3600.0) == pytest.approx(1.0)
    assert sched.mu_at(96.0 * 3600.0) == pytest.approx(1.1)


def test_dh_phases():
    sched = schedule()
    # quiet before the pulses
    assert (sched.dh_at(0.0) == 0.0).all()
    assert (sched.dh_at(29.9 * 3600.0) == 0.0).all()
    # pulse span 30-63 h in 3 pulses of 11 h; each starts and ends at zero
    # and bottoms out at -0.2 mid-pulse
    assert sched.dh_at(30.0 * 3600.0)[0] == pytest.approx(0.0, abs=1e-12)
    assert sched.dh_at(35.5 * 3600.0)[0] == pytest.approx(-0.2)
    assert sched.dh_at(41.0 * 3600.0 - 1.0)[0] == pytest.approx(0.0, abs=1e-6)
    assert sched.dh_at(46.5 * 3600.0)[0] == pytest.approx(-0.2)
    # constant offset during the recession
    assert (sched.dh_at(63.0 * 3600.0) == -0.18).all()
    assert (sched.dh_at(90.0 * 3600.0) == -0.18).all()
    # all subdomains share the value
    assert np.unique(sched.dh_at(50.0 * 3600.0)).size == 1


def test_controls_at_concatenates_components():
    sched = schedule()
    t = 50.0 * 3600.0
    x = sched.controls_at(t)
    assert x.shape == (13,)
    assert (x[:7] == sched.ks_at(t)).all()
    assert x[7] == sched.mu_at(t)
    assert (x[8:] == sched.dh_at(t)).all()


def test_schedule_validation():
    with pytest.raises(ConfigurationError):
        schedule(prior_mean=np.zeros(4))
    bad = [[(0.0, 1.0)] for _ in range(N_KS - 1)]
    with pytest.raises(ConfigurationError):
        schedule(ks_steps=bad)
    decreasing = [[(0.0, 1.0), (0.0, 0.5)]] + [[(0.0, 1.0)] for _ in range(N_KS - 1)]
    with pytest.raises(ConfigurationError):
        schedule(ks_steps=decreasing)
    with pytest.raises(ConfigurationError):
        schedule(recess_start_s=10.0, pulse_start_s=20.0)


# ---------------------------------------------------------------------------
# Truth integration


def test_truth_segments_sample_the_schedule_at_their_starts():
    grid = make_grid(slope=1e-3)
    sched = schedule(pulse_start_s=3600.0, recess_start_s=4 * 3600.0)
    truth = run_truth(sched, grid, flat_hydrograph(q=4.0), 0.0, 6 * 3600.0,
                      record_times=[0.0, 3 * 3600.0, 6 * 3600.0],
                      segment_hours=2.0, dt_max=120.0)
    assert truth.segment_starts.tolist() == [0.0, 7200.0, 14400.0]
    for t, x in zip(truth.segment_starts, truth.segment_controls):
        assert np.array_equal(x, sched.controls_at(t))
    assert truth.final.time == 6 * 3600.0
    times = [s.time for s in truth.trajectory]
    assert times == [0.0, 3 * 3600.0, 6 * 3600.0]


def test_truth_equals_plain_simulation_when_schedule_is_static():
    # one segment covering the whole event makes the truth run a single
    # integration, so it must reproduce a plain simulate call byte for byte
    # (segment restarts re-seed the adaptive sub-step from the state instead
    # of the previous step's fluxes, which is allowed to drift)
    grid = make_grid(slope=1e-3)
    static = schedule(mu_amplitude=0.0, dh_amplitude=0.0, dh_recess=0.0,
                      pulse_start_s=1e9, recess_start_s=2e9)
    rec = [0.0, 5400.0, 10800.0]
    truth = run_truth(static, grid, flat_hydrograph(q=4.0), 0.0, 10800.0,
                      record_times=rec, segment_hours=3.0, dt_max=120.0)
    assert truth.segment_starts.tolist() == [0.0]
    ctl = make_ctl(ks0=8.0, ks=15.0, mu=1.0)
    ref = simulate(ModelState(np.zeros((5, 6)), 0.0), grid, ctl,
                   flat_hydrograph(q=4.0), 10800.0, rec,
                   dh_schedule=[3600.0, 7200.0, 10800.0], dt_max=120.0,
                   exterior_slope=1e-4)
    for got, want in zip(truth.trajectory, ref.trajectory):
        assert got.time == want.time
        assert np.array_equal(got.depth, want.depth)


# ---------------------------------------------------------------------------
# Synthetic observations


def wet_truth():
    grid = with_five_subdomains(make_grid(slope=1e-3))
    sched = schedule(mu_amplitude=0.0, dh_amplitude=0.0, dh_recess=0.0,
                     pulse_start_s=1e9, recess_start_s=2e9)
    rec = np.arange(0.0, 10801.0, 900.0)
    truth = run_truth(sched, grid, flat_hydrograph(q=8.0), 0.0, 10800.0,
                      record_times=rec, segment_hours=3.0, dt_max=120.0)
    return grid, truth


def test_zero_noise_observations_equal_the_truth_operators():
    grid, truth = wet_truth()
    gauges = [GaugeSpec("G", 2 * 6 + 3)]
    obs = synthesize_obs(truth, grid, gauges, [3600.0, 7200.0], [7200.0],
                         seed=5, tau_wl=0.0, sigma_wsr=0.0)
    wl = [o for o in obs if o.kind == "WL"]
    ws = [o for o in obs if o.kind == "WSR"]
    truth_wl = extract_wl(truth.trajectory, grid, gauges, [3600.0, 7200.0])
    assert [o.value for o in wl] == truth_wl[:, 0].tolist()
    assert all(o.sigma == 0.0 for o in wl)
    state = [s for s in truth.trajectory if s.time == 7200.0][0]
    assert [o.value for o in ws] == wsr_all(state, grid).tolist()
    assert len(ws) == N_DH


def test_wl_sigma_is_proportional_to_the_true_level():
    grid, truth = wet_truth()
    gauges = [GaugeSpec("G", 2 * 6 + 3)]
    obs = synthesize_obs(truth, grid, gauges, [3600.0], [], seed=5, tau_wl=0.15)
    truth_wl = extract_wl(truth.trajectory, grid, gauges, [3600.0])[0, 0]
    assert obs[0].sigma == pytest.approx(0.15 * truth_wl, rel=1e-12)


def test_wsr_values_clipped_to_unit_interval():
    grid, truth = wet_truth()
    obs = synthesize_obs(truth, grid, [], [], np.arange(0.0, 10801.0, 900.0),
                         seed=6, sigma_wsr=5.0)
    vals = np.array([o.value for o in obs])
    assert vals.min() >= 0.0 and vals.max() <= 1.0
    assert (vals == 0.0).any() or (vals == 1.0).any()


def test_synthesis_is_deterministic_per_seed():
    grid, truth = wet_truth()
    gauges = [GaugeSpec("G", 2 * 6 + 3)]
    a = synthesize_obs(truth, grid, gauges, [3600.0, 7200.0], [7200.0], seed=9)
    b = synthesize_obs(truth, grid, gauges, [3600.0, 7200.0], [7200.0], seed=9)
    assert a == b
    c = synthesize_obs(truth, grid, gauges, [3600.0, 7200.0], [7200.0], seed=10)
    assert any(x.value != y.value for x, y in zip(a, c))


def test_synthesis_requires_recorded_overpass_times():
    grid, truth = wet_truth()
    with pytest.raises(ValidationError):
        synthesize_obs(truth, grid, [], [], [1234.5], seed=3)


def test_observations_sorted_by_time_then_kind():
    grid, truth = wet_truth()
    gauges = [GaugeSpec("G", 2 * 6 + 3)]
    obs = synthesize_obs(truth, grid, gauges, [7200.0, 3600.0], [3600.0], seed=4)
    keys = [(o.time, 0 if o.kind == "WL" else 1, o.location) for o in obs]
    assert keys == sorted(keys)
