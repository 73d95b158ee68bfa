import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from floodda.errors import ValidationError
from floodda.metrics import (CAT_CORRECT_NEG, CAT_EXCLUDED, CAT_FALSE_ALARM,
                             CAT_HIT, CAT_MISS, contingency, csi, hwm_compare,
                             read_scores, rmse, write_contingency_pgm,
                             write_scores, wsr_misfit_series)

from conftest import make_grid


# ---------------------------------------------------------------------------
# RMSE


def test_rmse_identical_series_is_zero():
    t = [0.0, 60.0, 120.0]
    v = [1.0, 2.0, 3.0]
    assert rmse(t, v, t, v) == 0.0


def test_rmse_constant_offset():
    t = [0.0, 60.0]
    assert rmse(t, [1.5, 2.5], t, [1.0, 2.0]) == 0.5


def test_rmse_frozen_two_point_value():
    # sqrt((0.3^2 + 0.4^2)/2), recomputed independently and frozen
    got = rmse([0.0, 1.0], [1.3, 0.6], [0.0, 1.0], [1.0, 1.0])
    assert got == 0.3535533905932738


def test_rmse_uses_common_times_only():
    got = rmse([0.0, 60.0, 120.0], [1.0, 5.0, 2.0],
               [60.0, 180.0], [4.0, 99.0])
    assert got == 1.0


def test_rmse_disjoint_series_rejected():
    with pytest.raises(ValidationError):
        rmse([0.0], [1.0], [60.0], [1.0])


def test_rmse_time_matching_tolerates_rounding():
    assert rmse([0.1 + 0.2], [2.0], [0.3], [1.0]) == 1.0


# ---------------------------------------------------------------------------
# Contingency and CSI


def masks_on(grid, sim_cells, ref_cells):
    sim = np.zeros((grid.ny, grid.nx), dtype=bool)
    ref = np.zeros((grid.ny, grid.nx), dtype=bool)
    for iy, ix in sim_cells:
        sim[iy, ix] = True
    for iy, ix in ref_cells:
        ref[iy, ix] = True
    return sim, ref


def test_contingency_hand_count(grid):
    # row 1: cells 0..2 wet in both (hits), cell 3 wet in ref only (miss),
    # cell 4 wet in sim only (false alarm), cell 5 dry in both
    sim, ref = masks_on(grid,
                        sim_cells=[(1, 0), (1, 1), (1, 2), (1, 4)],
                        ref_cells=[(1, 0), (1, 1), (1, 2), (1, 3)])
    cont = contingency(sim, ref, grid)
    assert (cont.hits, cont.misses, cont.false_alarms) == (3, 1, 1)
    n_active = int((grid.cell_class != 0).sum())
    assert cont.correct_negatives == n_active - 5
    assert cont.excluded == grid.ny * grid.nx - n_active
    assert cont.categories[1, 0] == CAT_HIT
    assert cont.categories[1, 3] == CAT_MISS
    assert cont.categories[1, 4] == CAT_FALSE_ALARM
    assert cont.categories[1, 5] == CAT_CORRECT_NEG
    assert cont.categories[0, 0] == CAT_EXCLUDED


def test_contingency_exclusion_mask_drops_cells(grid):
    sim, ref = masks_on(grid, [(1, 0), (1, 1)], [(1, 0)])
    excl = np.zeros((grid.ny, grid.nx), dtype=bool)
    excl[1, 1] = True
    cont = contingency(sim, ref, grid, exclusion=excl)
    assert cont.hits == 1
    assert cont.false_alarms == 0
    assert cont.categories[1, 1] == CAT_EXCLUDED


def test_contingency_counts_partition_the_grid(grid):
    rng = np.random.default_rng(2)
    sim = rng.random((5, 6)) > 0.5
    ref = rng.random((5, 6)) > 0.5
    cont = contingency(sim, ref, grid)
    total = (cont.hits + cont.misses + cont.false_alarms
             + cont.correct_negatives + cont.excluded)
    assert total == grid.ny * grid.nx


def test_contingency_shape_mismatch(grid):
    with pytest.raises(ValidationError):
        contingency(np.zeros((2, 2), bool), np.zeros((2, 2), bool), grid)


def test_csi_three_hits_one_false_two_missed(grid):
    sim, ref = masks_on(grid,
                        sim_cells=[(1, 0), (1, 1), (1, 2), (1, 3)],
                        ref_cells=[(1, 0), (1, 1), (1, 2), (1, 4), (1, 5)])
    out = csi(contingency(sim, ref, grid))
    assert out.value == 50.0
    assert not out.perfect_dry


def test_csi_perfect_agreement(grid):
    sim, ref = masks_on(grid, [(1, 0), (3, 2)], [(1, 0), (3, 2)])
    assert csi(contingency(sim, ref, grid)).value == 100.0


def test_csi_no_overlap_is_zero(grid):
    sim, ref = masks_on(grid, [(1, 0)], [(1, 1)])
    assert csi(contingency(sim, ref, grid)).value == 0.0


def test_csi_both_dry_flagged(grid):
    sim, ref = masks_on(grid, [], [])
    out = csi(contingency(sim, ref, grid))
    assert out == (100.0, True)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_csi_bounded(seed):
    grid = make_grid()
    rng = np.random.default_rng(seed)
    sim = rng.random((5, 6)) > 0.6
    ref = rng.random((5, 6)) > 0.6
    out = csi(contingency(sim, ref, grid))
    assert 0.0 <= out.value <= 100.0


# ---------------------------------------------------------------------------
# WSR misfit


def test_wsr_misfit_is_reference_minus_simulated():
    times, mis = wsr_misfit_series([0.0, 60.0], [[0.2, 0.5], [0.4, 0.6]],
                                   [0.0, 60.0], [[0.3, 0.4], [0.4, 0.9]])
    assert times.tolist() == [0.0, 60.0]
    assert mis.tolist() == [[pytest.approx(0.1), pytest.approx(-0.1)],
                            [0.0, pytest.approx(0.3)]]


def test_wsr_misfit_aligns_on_common_times():
    times, mis = wsr_misfit_series([0.0, 60.0, 120.0], [[0.1], [0.2], [0.3]],
                                   [60.0, 90.0], [[0.25], [0.5]])
    assert times.tolist() == [60.0]
    assert mis.tolist() == [[pytest.approx(0.05)]]


def test_wsr_misfit_disjoint_rejected():
    with pytest.raises(ValidationError):
        wsr_misfit_series([0.0], [[0.1]], [60.0], [[0.2]])


# ---------------------------------------------------------------------------
# High-water marks


def test_hwm_simulated_is_bed_plus_peak(grid):
    bed = np.zeros((5, 6))
    bed[2, 3] = 4.0
    g = make_grid(bed=bed)
    peak = np.zeros((5, 6))
    peak[2, 3] = 1.25
    out = hwm_compare(peak, g, [(2 * 6 + 3, 5.1)])
    assert out.tolist() == [[15.0, 5.1, 5.25]]


def test_hwm_dry_marker_reports_bed(grid):
    bed = np.full((5, 6), 2.0)
    g = make_grid(bed=bed)
    out = hwm_compare(np.zeros((5, 6)), g, [(7, 2.4)])
    assert out[0, 2] == 2.0


def test_hwm_marker_out_of_range(grid):
    with pytest.raises(ValidationError):
        hwm_compare(np.zeros((5, 6)), grid, [(30, 1.0)])


def test_hwm_shape_mismatch(grid):
    with pytest.raises(ValidationError):
        hwm_compare(np.zeros((2, 2)), grid, [(0, 1.0)])


# ---------------------------------------------------------------------------
# File formats


def test_scores_roundtrip(tmp_path):
    rows = [(-1.0, "IDA", "rmse_wl_mean", "all", 0.010399999999999),
            (129600.0, "IGDA", "csi", "all", 86.33663366336634),
            (3600.0, "FR", "wsr_misfit", "3", -0.0625)]
    path = tmp_path / "scores.csv"
    write_scores(rows, path)
    assert read_scores(path) == rows


def test_read_scores_rejects_bad_header(tmp_path):
    path = tmp_path / "scores.csv"
    path.write_text("t,e,m,l,v\n0,FR,csi,all,1\n")
    with pytest.raises(ValidationError):
        read_scores(path)


def test_contingency_pgm_format(tmp_path, grid):
    sim, ref = masks_on(grid, [(1, 0)], [(1, 1)])
    cont = contingency(sim, ref, grid)
    path = tmp_path / "cont.pgm"
    write_contingency_pgm(cont, path, time=43200.0)
    lines = path.read_text().splitlines()
    assert lines[0] == "P2"
    assert lines[1].startswith("# time_s=43200.0")
    assert lines[2] == "6 5"
    assert lines[3] == "4"
    body = np.array([r.split() for r in lines[4:]], dtype=int)
    assert (body == cont.categories).all()
