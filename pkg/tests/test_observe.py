import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from floodda.errors import ObservationError, ValidationError
from floodda.hydro import ModelState
from floodda.observe import (DEFAULT_WET_THRESHOLD, GaugeSpec, Observation,
                             extract_wl, flood_mask, gauge_wl,
                             model_equivalent, read_mask_pgm,
                             read_observations, write_mask_pgm,
                             write_observations, wsr, wsr_all)

from conftest import make_grid

CHANNEL_ROW = 2


def state_with(grid, fill=0.0, time=0.0, **cells):
    depth = np.full((grid.ny, grid.nx), fill)
    for key, v in cells.items():
        iy, ix = (int(s) for s in key[1:].split("_"))
        depth[iy, ix] = v
    return ModelState(depth=depth, time=time)


# ---------------------------------------------------------------------------
# Water levels


def test_gauge_wl_adds_bed_and_depth():
    bed = np.zeros((5, 6))
    bed[CHANNEL_ROW, 3] = 10.0
    grid = make_grid(bed=bed)
    state = state_with(grid, c2_3=2.5)
    out = gauge_wl(state, grid, [GaugeSpec("G", CHANNEL_ROW * 6 + 3)])
    assert out[0] == 12.5


def test_gauge_wl_dry_cell_is_bed_elevation():
    bed = np.zeros((5, 6))
    bed[CHANNEL_ROW, 1] = 7.25
    grid = make_grid(bed=bed)
    out = gauge_wl(state_with(grid), grid, [GaugeSpec("G", CHANNEL_ROW * 6 + 1)])
    assert out[0] == 7.25


def test_extract_wl_matches_field_lookup():
    # oracle: index the 2-D fields directly instead of going through the
    # flat-cell plumbing
    rng = np.random.default_rng(7)
    bed = rng.uniform(0.0, 5.0, size=(5, 6))
    grid = make_grid(bed=bed)
    traj = [ModelState(depth=rng.uniform(0.0, 2.0, size=(5, 6)), time=t)
            for t in (0.0, 60.0, 120.0)]
    gauges = [GaugeSpec("A", 13), GaugeSpec("B", 16), GaugeSpec("C", 8)]
    out = extract_wl(traj, grid, gauges, [60.0, 0.0])
    assert out.shape == (2, 3)
    for j, t_idx in enumerate((1, 0)):
        for k, cell in enumerate((13, 16, 8)):
            iy, ix = divmod(cell, 6)
            expect = bed[iy, ix] + traj[t_idx].depth[iy, ix]
            assert out[j, k] == expect


def test_extract_wl_requires_recorded_time(grid):
    traj = [state_with(grid, time=0.0), state_with(grid, time=60.0)]
    with pytest.raises(ObservationError):
        extract_wl(traj, grid, [GaugeSpec("G", 13)], [30.0])


def test_gauge_cell_out_of_range(grid):
    with pytest.raises(ValidationError):
        gauge_wl(state_with(grid), grid, [GaugeSpec("G", grid.n_cells)])


# ---------------------------------------------------------------------------
# Flood mask


def test_flood_mask_all_dry(grid):
    assert not flood_mask(state_with(grid), grid).any()


def test_flood_mask_deep_everywhere_wets_active_only(grid):
    mask = flood_mask(state_with(grid, fill=1.0), grid)
    active = grid.cell_class != 0
    assert (mask == active).all()


def test_flood_mask_threshold_equality_counts_dry(grid):
    state = state_with(grid, fill=DEFAULT_WET_THRESHOLD)
    assert not flood_mask(state, grid).any()
    barely = state_with(grid, fill=np.nextafter(DEFAULT_WET_THRESHOLD, 1.0))
    assert flood_mask(barely, grid).sum() == (grid.cell_class != 0).sum()


def test_flood_mask_rejects_negative_threshold(grid):
    with pytest.raises(ValidationError):
        flood_mask(state_with(grid), grid, threshold=-0.1)


# ---------------------------------------------------------------------------
# Wet surface ratio


def test_wsr_all_wet_is_one(grid):
    mask = flood_mask(state_with(grid, fill=1.0), grid)
    assert wsr(mask, grid, 1) == 1.0
    assert wsr(mask, grid, 2) == 1.0


def test_wsr_all_dry_is_zero(grid):
    mask = flood_mask(state_with(grid), grid)
    assert wsr(mask, grid, 1) == 0.0


def test_wsr_three_of_eight():
    grid = make_grid(nx=8)
    depth = np.zeros((5, 8))
    depth[1, [0, 3, 6]] = 0.4
    mask = flood_mask(ModelState(depth=depth, time=0.0), grid)
    assert wsr(mask, grid, 1) == 0.375


def test_wsr_channel_cells_do_not_count(grid):
    # subdomain ratios are over floodplain membership only
    depth = np.zeros((5, 6))
    depth[CHANNEL_ROW, :] = 1.0
    mask = flood_mask(ModelState(depth=depth, time=0.0), grid)
    assert wsr(mask, grid, 1) == 0.0


def test_wsr_rejects_bad_subdomain_id(grid):
    mask = flood_mask(state_with(grid), grid)
    for bad in (0, 6, -1):
        with pytest.raises(ObservationError):
            wsr(mask, grid, bad)


def test_wsr_rejects_empty_subdomain():
    grid = make_grid(subdomains=False)
    mask = flood_mask(state_with(grid), grid)
    with pytest.raises(ObservationError):
        wsr(mask, grid, 1)


def test_wsr_all_covers_every_subdomain():
    grid = make_grid()
    sub = np.zeros((grid.ny, grid.nx), dtype=np.int8)
    sub[1, :3] = 1
    sub[1, 3:] = 2
    sub[3, :2] = 3
    sub[3, 2:4] = 4
    sub[3, 4:] = 5
    grid = dataclasses.replace(grid, subdomain=sub)
    depth = np.zeros((5, 6))
    depth[1, :3] = 1.0
    depth[3, 2] = 1.0
    out = wsr_all(ModelState(depth=depth, time=0.0), grid)
    assert out.shape == (5,)
    assert np.allclose(out, [1.0, 0.0, 0.0, 0.5, 0.0])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.0, 0.2), min_size=6, max_size=6),
       st.lists(st.floats(0.0, 0.1), min_size=6, max_size=6))
def test_wsr_monotone_in_depth(base, bump):
    grid = make_grid()
    shallow = np.zeros((5, 6))
    shallow[1] = base
    deeper = shallow.copy()
    deeper[1] += bump
    m_lo = flood_mask(ModelState(depth=shallow, time=0.0), grid)
    m_hi = flood_mask(ModelState(depth=deeper, time=0.0), grid)
    assert wsr(m_hi, grid, 1) >= wsr(m_lo, grid, 1)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.0, 0.2), min_size=6, max_size=6),
       st.floats(0.01, 0.05), st.floats(0.0, 0.1))
def test_wsr_monotone_in_threshold(vals, thr, extra):
    grid = make_grid()
    depth = np.zeros((5, 6))
    depth[1] = vals
    state = ModelState(depth=depth, time=0.0)
    lo = wsr(flood_mask(state, grid, thr), grid, 1)
    hi = wsr(flood_mask(state, grid, thr + extra), grid, 1)
    assert hi <= lo
    assert 0.0 <= hi <= lo <= 1.0


# ---------------------------------------------------------------------------
# Model equivalents


def test_model_equivalent_empty_obs_set(grid):
    out = model_equivalent([state_with(grid)], grid, [], [])
    assert out.shape == (0,)


def test_model_equivalent_composes_single_op_oracles(grid):
    depth = np.zeros((5, 6))
    depth[CHANNEL_ROW, 2] = 1.3
    depth[1, :2] = 0.4
    state = ModelState(depth=depth, time=300.0)
    gauges = [GaugeSpec("G2", CHANNEL_ROW * 6 + 2)]
    obs = [Observation(300.0, "WL", "G2", 0.0, 0.1),
           Observation(300.0, "WSR", "1", 0.0, 0.05)]
    out = model_equivalent([state], grid, obs, gauges)
    wl_oracle = gauge_wl(state, grid, gauges)[0]
    wsr_oracle = wsr(flood_mask(state, grid), grid, 1)
    assert out.tolist() == [wl_oracle, wsr_oracle]


def test_model_equivalent_order_equivariant(grid):
    rng = np.random.default_rng(11)
    traj = [ModelState(depth=rng.uniform(0, 1, (5, 6)), time=t)
            for t in (0.0, 900.0)]
    gauges = [GaugeSpec("A", 13), GaugeSpec("B", 15)]
    obs = [Observation(0.0, "WL", "A", 0.0, 0.1),
           Observation(900.0, "WL", "B", 0.0, 0.1),
           Observation(900.0, "WSR", "2", 0.0, 0.05),
           Observation(0.0, "WSR", "1", 0.0, 0.05)]
    base = model_equivalent(traj, grid, obs, gauges)
    perm = [2, 0, 3, 1]
    swapped = model_equivalent(traj, grid, [obs[i] for i in perm], gauges)
    assert swapped.tolist() == [base[i] for i in perm]


def test_model_equivalent_unknown_gauge(grid):
    obs = [Observation(0.0, "WL", "nope", 0.0, 0.1)]
    with pytest.raises(ObservationError):
        model_equivalent([state_with(grid)], grid, obs, [GaugeSpec("G", 13)])


def test_model_equivalent_wsr_in_unit_interval(grid):
    rng = np.random.default_rng(3)
    traj = [ModelState(depth=rng.uniform(0, 0.2, (5, 6)), time=0.0)]
    obs = [Observation(0.0, "WSR", str(k), 0.0, 0.05) for k in (1, 2)]
    out = model_equivalent(traj, grid, obs, [])
    assert ((out >= 0.0) & (out <= 1.0)).all()


# ---------------------------------------------------------------------------
# Observation records


def test_observation_rejects_unknown_kind():
    with pytest.raises(ValidationError):
        Observation(0.0, "depth", "G", 1.0, 0.1)


def test_observation_rejects_negative_sigma():
    with pytest.raises(ValidationError):
        Observation(0.0, "WL", "G", 1.0, -0.1)


def test_observations_roundtrip(tmp_path):
    obs = [Observation(3600.0, "WL", "G1", 12.3456789012345, 0.05),
           Observation(7200.0, "WSR", "3", 0.4375, 0.021718461718461),
           Observation(7200.0, "WL", "G2", 0.1 + 0.2, 0.0)]
    path = tmp_path / "obs.csv"
    write_observations(obs, path)
    back = read_observations(path)
    assert back == obs


def test_read_observations_rejects_bad_header(tmp_path):
    path = tmp_path / "obs.csv"
    path.write_text("time,kind,loc,val,sig\n0,WL,G,1,0.1\n")
    with pytest.raises(ValidationError):
        read_observations(path)


# ---------------------------------------------------------------------------
# Mask files


def test_mask_pgm_roundtrip(tmp_path):
    rng = np.random.default_rng(5)
    mask = rng.random((5, 6)) > 0.6
    path = tmp_path / "mask.pgm"
    write_mask_pgm(mask, path, time=129600.0, threshold=0.05)
    back, t, thr = read_mask_pgm(path)
    assert (back == mask).all()
    assert t == 129600.0
    assert thr == 0.05
    assert path.read_text().startswith("P2\n")


def test_mask_pgm_rejects_wrong_maxval(tmp_path):
    path = tmp_path / "mask.pgm"
    path.write_text("P2\n# time_s=0.0 threshold_m=0.05\n2 1\n255\n1 0\n")
    with pytest.raises(ValidationError):
        read_mask_pgm(path)


def test_mask_pgm_rejects_missing_metadata(tmp_path):
    path = tmp_path / "mask.pgm"
    path.write_text("P2\n2 1\n1\n1 0\n")
    with pytest.raises(ValidationError):
        read_mask_pgm(path)
