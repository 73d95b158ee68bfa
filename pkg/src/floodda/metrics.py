"""Skill metrics: water-level RMSE, contingency maps, CSI, WSR misfits and
high-water-mark comparisons."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ValidationError
from .hydro import CLASS_INACTIVE, Grid

# contingency category codes (also the PGM pixel values)
CAT_HIT = 0
CAT_MISS = 1
CAT_FALSE_ALARM = 2
CAT_CORRECT_NEG = 3
CAT_EXCLUDED = 4


def rmse(sim_times, sim_values, ref_times, ref_values) -> float:
    """Root-mean-square difference over the common times of two series."""
    sim_times = np.asarray(sim_times, dtype=float)
    ref_times = np.asarray(ref_times, dtype=float)
    sim_values = np.asarray(sim_values, dtype=float)
    ref_values = np.asarray(ref_values, dtype=float)
    sim_map = {round(t, 6): v for t, v in zip(sim_times, sim_values)}
    pairs = [(sim_map[round(t, 6)], v) for t, v in zip(ref_times, ref_values)
             if round(t, 6) in sim_map]
    if not pairs:
        raise ValidationError("series share no common times")
    d = np.array([s - r for s, r in pairs])
    return float(np.sqrt(np.mean(d * d)))


@dataclass
class ContingencyMap:
    """Per-cell flood-extent agreement between a simulation and a reference."""

    categories: np.ndarray
    hits: int
    misses: int
    false_alarms: int
    correct_negatives: int
    excluded: int


def contingency(sim_mask: np.ndarray, ref_mask: np.ndarray, grid: Grid,
                exclusion: np.ndarray | None = None) -> ContingencyMap:
    """Classify every cell: hit, miss, false alarm, correct negative, excluded.

    Inactive cells and cells under the optional exclusion mask are excluded
    and do not enter the counts.
    """
    if sim_mask.shape != ref_mask.shape or sim_mask.shape != grid.bed.shape:
        raise ValidationError("masks must match the grid shape")
    excluded = grid.cell_class == CLASS_INACTIVE
    if exclusion is not None:
        excluded = excluded | np.asarray(exclusion, dtype=bool)
    cats = np.full(sim_mask.shape, CAT_EXCLUDED, dtype=np.uint8)
    live = ~excluded
    cats[live & sim_mask & ref_mask] = CAT_HIT
    cats[live & ~sim_mask & ref_mask] = CAT_MISS
    cats[live & sim_mask & ~ref_mask] = CAT_FALSE_ALARM
    cats[live & ~sim_mask & ~ref_mask] = CAT_CORRECT_NEG
    return ContingencyMap(
        categories=cats,
        hits=int((cats == CAT_HIT).sum()),
        misses=int((cats == CAT_MISS).sum()),
        false_alarms=int((cats == CAT_FALSE_ALARM).sum()),
        correct_negatives=int((cats == CAT_CORRECT_NEG).sum()),
        excluded=int((cats == CAT_EXCLUDED).sum()),
    )


class CsiResult(NamedTuple):
    value: float
    perfect_dry: bool


def csi(cont: ContingencyMap) -> CsiResult:
    """Critical success index in percent: 100*TP/(TP + FP + FN).

    When the simulation and the reference are both entirely dry there is
    nothing to score; that case scores 100% and is flagged.
    """
    denom = cont.hits + cont.false_alarms + cont.misses
    if denom == 0:
        return CsiResult(100.0, True)
    return CsiResult(100.0 * cont.hits / denom, False)


def wsr_misfit_series(sim_times, sim_wsr, ref_times, ref_wsr):
    """Reference minus simulated WSR on common times.

    ``sim_wsr``/``ref_wsr`` are (n_times, n_subdomains). Returns
    (times, misfit) with misfit aligned on the common times.
    """
    sim_times = np.asarray(sim_times, dtype=float)
    ref_times = np.asarray(ref_times, dtype=float)
    sim_wsr = np.atleast_2d(np.asarray(sim_wsr, dtype=float))
    ref_wsr = np.atleast_2d(np.asarray(ref_wsr, dtype=float))
    sim_map = {round(t, 6): sim_wsr[i] for i, t in enumerate(sim_times)}
    times = []
    rows = []
    for i, t in enumerate(ref_times):
        key = round(t, 6)
        if key in sim_map:
            times.append(float(t))
            rows.append(ref_wsr[i] - sim_map[key])
    if not times:
        raise ValidationError("WSR series share no common times")
    return np.array(times), np.array(rows)


def hwm_compare(max_depth: np.ndarray, grid: Grid, markers) -> np.ndarray:
    """Observed vs simulated peak water level at marker cells.

    ``markers`` is a sequence of (cell_index, observed_wl). The simulated
    value is bed + max depth at the cell, which reduces to the bed
    elevation when the cell stayed dry. Returns (n, 3): cell, observed,
    simulated.
    """
    if max_depth.shape != grid.bed.shape:
        raise ValidationError("max-depth field must match the grid shape")
    flat_z = grid.bed.ravel()
    flat_h = max_depth.ravel()
    out = np.empty((len(markers), 3))
    for i, (cell, obs_wl) in enumerate(markers):
        cell = int(cell)
        if not 0 <= cell < grid.n_cells:
            raise ValidationError(f"marker cell {cell} out of range")
        out[i] = (cell, obs_wl, flat_z[cell] + flat_h[cell])
    return out


# ---------------------------------------------------------------------------
# File formats

SCORES_HEADER = "time_s,experiment,metric,location,value"


def write_scores(rows, path):
    """Long-format scores CSV. Event-level rows use time_s = -1."""
    lines = [SCORES_HEADER]
    for t, exp, metric, location, value in rows:
        lines.append(f"{t:.6f},{exp},{metric},{location},{float(value)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_scores(path):
    rows = Path(path).read_text().strip().splitlines()
    if rows[0].strip() != SCORES_HEADER:
        raise ValidationError(f"scores header must be '{SCORES_HEADER}'")
    out = []
    for row in rows[1:]:
        t, exp, metric, location, value = row.split(",")
        out.append((float(t), exp, metric, location, float(value)))
    return out


def write_contingency_pgm(cont: ContingencyMap, path, time: float):
    """P2 PGM of the category map, maxval 4."""
    ny, nx = cont.categories.shape
    lines = ["P2", f"# time_s={float(time)!r} categories=hit0_miss1_false2_dry3_excl4",
             f"{nx} {ny}", "4"]
    for iy in range(ny):
        lines.append(" ".join(str(int(v)) for v in cont.categories[iy]))
    Path(path).write_text("\n".join(lines) + "\n")
