"""Observation operators: gauge water levels and wet surface ratios.

Water level (WL) observations are water surface elevations bed + depth at
named gauge cells. Wet surface ratio (WSR) observations are the wet cell
fraction of a floodplain subdomain, derived from a binary flood mask with
a wet/dry depth threshold (default 5 cm; cells exactly at the threshold
count as dry).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ObservationError, ValidationError
from .hydro import CLASS_FLOODPLAIN, CLASS_INACTIVE, Grid, ModelState, N_DH

KIND_WL = "WL"
KIND_WSR = "WSR"
DEFAULT_WET_THRESHOLD = 0.05

TIME_MATCH_TOL = 1e-6


@dataclass(frozen=True)
class GaugeSpec:
    """A named in-situ gauge located at a flat cell index."""

    name: str
    cell: int


@dataclass(frozen=True)
class Observation:
    """One scalar observation.

    ``location`` is a gauge name for WL entries and the subdomain id
    (stringified integer 1..5) for WSR entries.
    """

    time: float
    kind: str
    location: str
    value: float
    sigma: float

    def __post_init__(self):
        if self.kind not in (KIND_WL, KIND_WSR):
            raise ValidationError(f"unknown observation kind {self.kind!r}")
        if self.sigma < 0:
            raise ValidationError("observation sigma must be non-negative")


def _state_lookup(trajectory, time: float) -> ModelState:
    if not trajectory:
        raise ObservationError("empty trajectory")
    times = np.array([s.time for s in trajectory])
    i = int(np.argmin(np.abs(times - time)))
    if abs(times[i] - time) > TIME_MATCH_TOL:
        raise ObservationError(
            f"trajectory has no record at t={time} s (nearest is {times[i]} s)"
        )
    return trajectory[i]


def extract_wl(trajectory, grid: Grid, gauges, times) -> np.ndarray:
    """Water surface elevation at each gauge for each requested time.

    Returns an array of shape (len(times), len(gauges)). Every requested
    time must be present among the recorded states.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    out = np.empty((times.size, len(gauges)))
    for j, t in enumerate(times):
        state = _state_lookup(trajectory, float(t))
        out[j] = gauge_wl(state, grid, gauges)
    return out


def gauge_wl(state: ModelState, grid: Grid, gauges) -> np.ndarray:
    """Water surface elevation at each gauge for a single state."""
    cells = np.array([g.cell for g in gauges], dtype=int)
    if (cells < 0).any() or (cells >= grid.n_cells).any():
        raise ValidationError("gauge cell index out of range")
    return grid.bed.ravel()[cells] + state.depth.ravel()[cells]


def flood_mask(state: ModelState, grid: Grid,
               threshold: float = DEFAULT_WET_THRESHOLD) -> np.ndarray:
    """Boolean wet map: depth strictly above threshold on active cells."""
    if threshold < 0:
        raise ValidationError("wet threshold must be non-negative")
    return (state.depth > threshold) & (grid.cell_class != CLASS_INACTIVE)


def wsr(mask: np.ndarray, grid: Grid, subdomain_id: int) -> float:
    """Wet fraction of one floodplain subdomain."""
    if not 1 <= int(subdomain_id) <= N_DH:
        raise ObservationError(f"subdomain id must be in 1..{N_DH}")
    sel = (grid.subdomain == int(subdomain_id)) & (grid.cell_class == CLASS_FLOODPLAIN)
    total = int(sel.sum())
    if total == 0:
        raise ObservationError(f"subdomain {subdomain_id} has no cells")
    return float(np.count_nonzero(mask & sel)) / total


def wsr_all(state: ModelState, grid: Grid,
            threshold: float = DEFAULT_WET_THRESHOLD) -> np.ndarray:
    """WSR of every subdomain 1..5 for one state."""
    m = flood_mask(state, grid, threshold)
    return np.array([wsr(m, grid, k) for k in range(1, N_DH + 1)])


def model_equivalent(trajectory, grid: Grid, obs_set, gauges,
                     threshold: float = DEFAULT_WET_THRESHOLD) -> np.ndarray:
    """Model counterpart of each observation, aligned with obs_set order.

    WL entries read the water surface at the named gauge; WSR entries
    compute the subdomain wet fraction with the supplied threshold. Every
    observation time must be present among the recorded states.
    """
    by_name = {g.name: g for g in gauges}
    out = np.empty(len(obs_set))
    mask_cache: dict[float, np.ndarray] = {}
    for j, obs in enumerate(obs_set):
        state = _state_lookup(trajectory, obs.time)
        if obs.kind == KIND_WL:
            gauge = by_name.get(obs.location)
            if gauge is None:
                raise ObservationError(f"unknown gauge {obs.location!r}")
            out[j] = gauge_wl(state, grid, [gauge])[0]
        else:
            key = round(state.time, 6)
            if key not in mask_cache:
                mask_cache[key] = flood_mask(state, grid, threshold)
            out[j] = wsr(mask_cache[key], grid, int(obs.location))
    return out


# ---------------------------------------------------------------------------
# File formats

OBS_HEADER = "time_s,kind,location,value,sigma"


def write_observations(obs_set, path):
    lines = [OBS_HEADER]
    for o in obs_set:
        lines.append(f"{o.time:.6f},{o.kind},{o.location},{float(o.value)!r},{float(o.sigma)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_observations(path) -> list[Observation]:
    rows = Path(path).read_text().strip().splitlines()
    if rows[0].strip() != OBS_HEADER:
        raise ValidationError(f"observation header must be '{OBS_HEADER}'")
    out = []
    for row in rows[1:]:
        t, kind, loc, val, sig = row.split(",")
        out.append(Observation(time=float(t), kind=kind, location=loc,
                               value=float(val), sigma=float(sig)))
    return out


def write_mask_pgm(mask: np.ndarray, path, time: float, threshold: float):
    """P2 PGM, 0 = dry and 1 = wet, with time/threshold in the comment line."""
    ny, nx = mask.shape
    lines = ["P2", f"# time_s={float(time)!r} threshold_m={float(threshold)!r}",
             f"{nx} {ny}", "1"]
    for iy in range(ny):
        lines.append(" ".join("1" if v else "0" for v in mask[iy]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_mask_pgm(path):
    """Returns (mask, time, threshold)."""
    rows = Path(path).read_text().strip().splitlines()
    if rows[0].strip() != "P2":
        raise ValidationError("flood mask must be a P2 PGM")
    meta = rows[1]
    if not meta.startswith("#"):
        raise ValidationError("flood mask PGM is missing its metadata comment")
    fields = dict(item.split("=") for item in meta[1:].split())
    nx, ny = (int(v) for v in rows[2].split())
    maxval = int(rows[3])
    if maxval != 1:
        raise ValidationError("flood mask PGM maxval must be 1")
    data = np.array([r.split() for r in rows[4:4 + ny]], dtype=int)
    if data.shape != (ny, nx):
        raise ValidationError("flood mask PGM body does not match its dimensions")
    return data.astype(bool), float(fields["time_s"]), float(fields["threshold_m"])
