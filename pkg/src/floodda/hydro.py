"""Raster diffusive-wave flood model on a regular grid.

The model integrates 2-D shallow water flow in diffusive-wave form on a
rectangular grid of square cells. Inter-cell fluxes follow a
Manning-Strickler law driven by the water-surface gradient, with the
classic raster-model flux limiter so that explicit stepping stays stable
near equilibrium. Channel and floodplain cells share the same update; they
differ only through their friction zone.

Cell classes: 0 = inactive, 1 = channel, 2 = floodplain. Friction zones:
1..6 on channel cells, 0 on floodplain cells. Floodplain cells may carry a
subdomain id 1..5 used by the observation operator and the level-increment
control; 0 means unassigned.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IntegrationError, ValidationError

# The single-step kernel has a compiled fast path. Set FLOODDA_NO_NUMBA to
# force the pure-numpy reference implementation instead.
try:
    if os.environ.get("FLOODDA_NO_NUMBA"):
        raise ImportError("disabled via FLOODDA_NO_NUMBA")
    # The default threading-layer probe is noisy when TBB is too old; OpenMP
    # is quiet and always present alongside the toolchain used here.
    os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")
    from numba import njit as _njit, prange as _prange

    _HAVE_NUMBA = True
except ImportError:
    _HAVE_NUMBA = False

CFL_SAFETY = 0.7
FLUX_EXP = 5.0 / 3.0
# Faces with a head difference below FLOW_DT_DH_MIN never restrict the
# adaptive sub-step; the face limiter alone handles them (it moves at most a
# quarter of the head difference per step, which decays monotonically).
# Faces touching an inlet cell are excluded as well: the injection mound is
# artificial and the limiter merely re-equilibrates it a little higher.
FLOW_DT_DH_MIN = 0.02
# The conveyance bound protects accuracy, not stability, so it runs above
# unity: the face limiter already caps each transfer at a quarter of the head
# difference, and a factor this size only brakes the handful of faces whose
# head-to-flux ratio sits within it of the grid minimum.
CONV_SAFETY = 1.4
# Accuracy floor for the conveyance-based sub-step bound (s). Below this the
# limiter may throttle isolated steep faces for a step or two, which is
# preferable to stalling the integration.
FLOW_DT_FLOOR = 0.5
N_KS = 7
N_DH = 5
N_CONTROL = N_KS + 1 + N_DH
COMPONENT_NAMES = tuple(
    [f"ks{k}" for k in range(N_KS)] + ["mu"] + [f"dh{k}" for k in range(1, N_DH + 1)]
)

CLASS_INACTIVE = 0
CLASS_CHANNEL = 1
CLASS_FLOODPLAIN = 2


@dataclass(frozen=True)
class Grid:
    """Static description of the model domain.

    Arrays are (ny, nx), row-major; the flat index of cell (iy, ix) is
    iy * nx + ix. ``inlet_cells`` and ``outlet_cells`` are flat indices of
    channel cells where the upstream discharge enters and where the domain
    drains through a normal-depth outflow law.
    """

    nx: int
    ny: int
    dx: float
    bed: np.ndarray
    cell_class: np.ndarray
    friction_zone: np.ndarray
    subdomain: np.ndarray
    inlet_cells: np.ndarray
    outlet_cells: np.ndarray

    def __post_init__(self):
        for name in ("bed", "cell_class", "friction_zone", "subdomain"):
            arr = getattr(self, name)
            if arr.shape != (self.ny, self.nx):
                raise ValidationError(
                    f"grid field {name!r} has shape {arr.shape}, expected {(self.ny, self.nx)}"
                )
        if self.dx <= 0:
            raise ValidationError("dx must be positive")
        self.validate()

    def validate(self):
        cls = self.cell_class
        zone = self.friction_zone
        sub = self.subdomain
        if not np.isin(cls, (CLASS_INACTIVE, CLASS_CHANNEL, CLASS_FLOODPLAIN)).all():
            raise ValidationError("cell_class entries must be 0, 1 or 2")
        chan = cls == CLASS_CHANNEL
        fp = cls == CLASS_FLOODPLAIN
        if chan.any() and not ((zone[chan] >= 1) & (zone[chan] <= 6)).all():
            raise ValidationError("channel cells must carry a friction zone in 1..6")
        if fp.any() and not (zone[fp] == 0).all():
            raise ValidationError("floodplain cells must carry friction zone 0")
        if not ((sub >= 0) & (sub <= N_DH)).all():
            raise ValidationError(f"subdomain ids must lie in 0..{N_DH}")
        if (sub[~fp] != 0).any():
            raise ValidationError("subdomain ids are only allowed on floodplain cells")
        for name, cells in (("inlet", self.inlet_cells), ("outlet", self.outlet_cells)):
            cells = np.asarray(cells)
            if cells.size == 0:
                raise ValidationError(f"{name}_cells must be non-empty")
            if (cells < 0).any() or (cells >= self.nx * self.ny).any():
                raise ValidationError(f"{name}_cells out of range")
            if np.unique(cells).size != cells.size:
                raise ValidationError(f"{name}_cells must be distinct")
            if (cls.ravel()[cells] == CLASS_INACTIVE).any():
                raise ValidationError(f"{name}_cells must be active cells")

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def cell_area(self) -> float:
        return self.dx * self.dx

    def active_mask(self) -> np.ndarray:
        return self.cell_class != CLASS_INACTIVE


@dataclass(frozen=True)
class ModelState:
    """Water depth field (m) at a model time (s)."""

    depth: np.ndarray
    time: float

    def __post_init__(self):
        if (self.depth < 0).any():
            raise ValidationError("depth must be non-negative everywhere")

    def volume(self, grid: Grid) -> float:
        return float(self.depth.sum()) * grid.cell_area

    def surface(self, grid: Grid) -> np.ndarray:
        """Water surface elevation bed + depth."""
        return grid.bed + self.depth


@dataclass(frozen=True)
class Hydrograph:
    """Piecewise-linear upstream discharge series.

    Outside the tabulated range the first/last discharge is held constant.
    """

    times: np.ndarray
    flows: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        q = np.asarray(self.flows, dtype=float)
        if t.ndim != 1 or t.shape != q.shape or t.size < 2:
            raise ValidationError("hydrograph needs matching 1-D times/flows, length >= 2")
        if not (np.diff(t) > 0).all():
            raise ValidationError("hydrograph times must be strictly increasing")
        if (q < 0).any():
            raise ValidationError("hydrograph discharges must be non-negative")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "flows", q)

    def discharge(self, t) -> np.ndarray | float:
        return np.interp(t, self.times, self.flows)


@dataclass
class ControlVector:
    """Friction, inflow and floodplain-level controls.

    ks[0] is the floodplain friction, ks[1..6] the channel zones. mu scales
    the upstream discharge. dh[0..4] are water-level increments (m) for the
    five floodplain subdomains, injected separately via :func:`apply_dh`.
    mask flags which of the 13 components an experiment actually estimates;
    inactive components keep their default values and are never updated.
    """

    ks: np.ndarray
    mu: float = 1.0
    dh: np.ndarray = field(default_factory=lambda: np.zeros(N_DH))
    mask: np.ndarray = field(default_factory=lambda: np.ones(N_CONTROL, dtype=bool))

    def __post_init__(self):
        self.ks = np.asarray(self.ks, dtype=float)
        self.dh = np.asarray(self.dh, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.ks.shape != (N_KS,):
            raise ValidationError(f"ks must have shape ({N_KS},)")
        if self.dh.shape != (N_DH,):
            raise ValidationError(f"dh must have shape ({N_DH},)")
        if self.mask.shape != (N_CONTROL,):
            raise ValidationError(f"mask must have shape ({N_CONTROL},)")
        active_ks = self.mask[:N_KS]
        if (self.ks[active_ks] <= 0).any():
            raise ValidationError("active ks components must be positive")
        if self.mask[N_KS] and self.mu <= 0:
            raise ValidationError("active mu must be positive")
        if self.mu < 0:
            raise ValidationError("mu must be non-negative")

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.ks, [self.mu], self.dh])

    @classmethod
    def from_array(cls, values, mask=None) -> "ControlVector":
        values = np.asarray(values, dtype=float)
        if values.shape != (N_CONTROL,):
            raise ValidationError(f"control array must have shape ({N_CONTROL},)")
        if mask is None:
            mask = np.ones(N_CONTROL, dtype=bool)
        return cls(ks=values[:N_KS].copy(), mu=float(values[N_KS]),
                   dh=values[N_KS + 1:].copy(), mask=np.asarray(mask, dtype=bool).copy())

    def copy(self) -> "ControlVector":
        return ControlVector(self.ks.copy(), self.mu, self.dh.copy(), self.mask.copy())


@dataclass
class VolumeBudget:
    """Independent accounting of volume sources and sinks (m^3).

    ``max_step_error`` tracks the worst per-step relative closure error
    between the depth-field volume change and the flux bookkeeping.
    """

    inflow: float = 0.0
    outflow: float = 0.0
    dh_added: float = 0.0
    max_step_error: float = 0.0


@dataclass
class SimulationResult:
    trajectory: list
    final: ModelState
    budget: VolumeBudget = field(default_factory=VolumeBudget)


def _cell_ks(grid: Grid, ctl: ControlVector) -> np.ndarray:
    return ctl.ks[grid.friction_zone]


def _grid_faces(grid: Grid) -> dict:
    """Cached face-activity masks and inlet/outlet grid coordinates.

    ``free_x``/``free_y`` mark faces eligible for the conveyance step bound:
    active faces not touching an inlet cell.
    """
    cache = grid.__dict__.get("_faces")
    if cache is None:
        act = grid.cell_class != CLASS_INACTIVE
        inl = np.zeros((grid.ny, grid.nx), dtype=bool)
        inl.ravel()[grid.inlet_cells] = True
        inlets = np.asarray(grid.inlet_cells, dtype=np.int64)
        outlets = np.asarray(grid.outlet_cells, dtype=np.int64)
        cache = {
            "bed": np.ascontiguousarray(grid.bed, dtype=np.float64),
            "act_x": np.ascontiguousarray(act[:, :-1] & act[:, 1:]),
            "act_y": np.ascontiguousarray(act[:-1, :] & act[1:, :]),
            "free_x": np.ascontiguousarray(~(inl[:, :-1] | inl[:, 1:])),
            "free_y": np.ascontiguousarray(~(inl[:-1, :] | inl[1:, :])),
            "inlet_yx": (inlets // grid.nx, inlets % grid.nx),
            "outlet_yx": (outlets // grid.nx, outlets % grid.nx),
        }
        object.__setattr__(grid, "_faces", cache)
    return cache


def _pow53(h):
    """h^(5/3) via cbrt(h^5); cheaper than a general power."""
    h2 = h * h
    return np.cbrt(h2 * h2 * h)


def _axis_flux(Ha, Hb, za, zb, ka, kb, act, free, dx, dt):
    """Signed face fluxes along one axis plus the conveyance step bound.

    Flux law: q = Ks * h_flow^(5/3) * sqrt(|dH|/dx) * dx with the friction
    taken from the higher-head (upwind) cell and h_flow the depth above the
    higher bed. When ``dt`` is given, each flux is capped at
    dx^2*|dH|/(4*dt) so a single step can never overturn the head
    difference that drives it. The returned bound is min(|dH|/q) over
    ``free`` faces whose head difference exceeds FLOW_DT_DH_MIN; a step of
    dx^2/4 * bound keeps the cap above the physical flux on those faces.
    """
    dH = Ha - Hb
    adH = np.abs(dH)
    hflow = np.maximum(np.maximum(Ha, Hb) - np.maximum(za, zb), 0.0)
    kup = np.where(dH >= 0.0, ka, kb)
    q = kup * _pow53(hflow) * np.sqrt(adH * dx)
    elig = act & free & (adH >= FLOW_DT_DH_MIN) & (q > 0.0)
    if elig.any():
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(elig, adH / q, np.inf)
        bound = float(ratio.min())
    else:
        bound = math.inf
    if dt is not None:
        np.minimum(q, dx * dx * adH / (4.0 * dt), out=q)
    q = np.where(act, np.sign(dH) * q, 0.0)
    return q, bound


def _flow_dt(depth, grid, ks) -> float:
    """Sub-step bound that keeps the face limiter off the driving faces."""
    cache = _grid_faces(grid)
    z = grid.bed
    H = z + depth
    dx = grid.dx
    _, bx = _axis_flux(H[..., :, :-1], H[..., :, 1:], z[:, :-1], z[:, 1:],
                       ks[..., :, :-1], ks[..., :, 1:], cache["act_x"],
                       cache["free_x"], dx, None)
    _, by = _axis_flux(H[..., :-1, :], H[..., 1:, :], z[:-1, :], z[1:, :],
                       ks[..., :-1, :], ks[..., 1:, :], cache["act_y"],
                       cache["free_y"], dx, None)
    return max(FLOW_DT_FLOOR, CONV_SAFETY * dx * dx * min(bx, by) / 4.0)


def _advance_numpy(depth, grid, ks, inflow_rate, dt, budget, exterior_slope, t_next):
    """One continuity update on a (..., ny, nx) depth array.

    Leading axes, if any, are independent ensemble members sharing the same
    dt. Returns the new depth plus the conveyance step bound computed from
    this step's uncapped fluxes, to be used for the next step. All outgoing
    fluxes of a cell are scaled down together whenever they would remove
    more water than the cell holds, so depths stay non-negative and mass
    closes exactly.
    """
    cache = _grid_faces(grid)
    z = grid.bed
    H = z + depth
    dx = grid.dx
    area = grid.cell_area

    qx, bx = _axis_flux(H[..., :, :-1], H[..., :, 1:], z[:, :-1], z[:, 1:],
                        ks[..., :, :-1], ks[..., :, 1:], cache["act_x"],
                        cache["free_x"], dx, dt)
    qy, by = _axis_flux(H[..., :-1, :], H[..., 1:, :], z[:-1, :], z[1:, :],
                        ks[..., :-1, :], ks[..., 1:, :], cache["act_y"],
                        cache["free_y"], dx, dt)

    out = np.zeros_like(depth)
    out[..., :, :-1] += np.maximum(qx, 0.0)
    out[..., :, 1:] += np.maximum(-qx, 0.0)
    out[..., :-1, :] += np.maximum(qy, 0.0)
    out[..., 1:, :] += np.maximum(-qy, 0.0)

    oy, ox = cache["outlet_yx"]
    q_out = (ks[..., oy, ox] * _pow53(depth[..., oy, ox])
             * math.sqrt(exterior_slope) * dx)
    out[..., oy, ox] += q_out

    need = out * dt
    avail = depth * area
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(need > avail, avail / need, 1.0)
    scale[need == 0.0] = 1.0

    qx *= np.where(qx > 0.0, scale[..., :, :-1], scale[..., :, 1:])
    qy *= np.where(qy > 0.0, scale[..., :-1, :], scale[..., 1:, :])
    q_out = q_out * scale[..., oy, ox]

    dv = np.zeros_like(depth)
    dv[..., :, :-1] -= qx * dt
    dv[..., :, 1:] += qx * dt
    dv[..., :-1, :] -= qy * dt
    dv[..., 1:, :] += qy * dt
    dv[..., oy, ox] -= q_out * dt

    v_in = np.asarray(inflow_rate, dtype=float) * dt
    share = v_in / len(grid.inlet_cells)
    iy, ix = cache["inlet_yx"]
    dv[..., iy, ix] += share[..., None] if share.ndim else share

    new_depth = depth + dv / area
    if not np.isfinite(new_depth).all():
        bad = np.argwhere(~np.isfinite(new_depth))[0]
        raise IntegrationError(
            f"non-finite depth at cell (iy={bad[-2]}, ix={bad[-1]}) at t={t_next:.3f} s"
        )
    np.maximum(new_depth, 0.0, out=new_depth)

    if budget is not None:
        axes = (-2, -1)
        v_out = q_out.sum(axis=-1) * dt
        budget.inflow = budget.inflow + v_in
        budget.outflow = budget.outflow + v_out
        dV = (new_depth.sum(axis=axes) - depth.sum(axis=axes)) * area
        denom = np.maximum(new_depth.sum(axis=axes) * area, 1.0)
        budget.max_step_error = np.maximum(
            budget.max_step_error, np.abs(dV - (v_in - v_out)) / denom)

    flow_bound = max(FLOW_DT_FLOOR, CONV_SAFETY * dx * dx * min(bx, by) / 4.0)
    return new_depth, flow_bound


if _HAVE_NUMBA:

    @_njit(cache=True)
    def _member_step(depth, z, ks, act_x, act_y, free_x, free_y,
                     inlet_iy, inlet_ix, outlet_iy, outlet_ix,
                     v_in, dt, dx, area, sqrt_slope, dh_min,
                     qx, qy, qo, scale, new_depth):
        """One member's continuity update on (ny, nx) views.

        Face work runs only inside the wet bounding box (plus a one-cell
        halo) found by the entry scan; cells outside it cannot exchange
        water this step. ``qx``, ``qy``, ``qo`` and ``scale`` are scratch
        blocks reused across steps, written before read within the box.
        Returns (conveyance bound, outlet volume, step error, 1 + flat
        index of the first non-finite cell or 0).
        """
        ny, nx = depth.shape
        n_in = inlet_iy.size
        n_out = outlet_iy.size
        inv_area = 1.0 / area
        fourdt = 4.0 * dt
        # one streaming pass: copy, total volume, wet bounding box
        xlo = nx
        xhi = -1
        ylo = ny
        yhi = -1
        sum_old = 0.0
        for y in range(ny):
            for x in range(nx):
                d0 = depth[y, x]
                new_depth[y, x] = d0
                sum_old += d0
                if d0 > 0.0:
                    if x < xlo:
                        xlo = x
                    if x > xhi:
                        xhi = x
                    if y < ylo:
                        ylo = y
                    if y > yhi:
                        yhi = y
        bound = np.inf
        vo = 0.0
        bx0 = 0
        bx1 = -1
        by0 = 0
        by1 = -1
        fx1 = -1
        fy1 = -1
        if xhi >= 0:
            bx0 = xlo - 1 if xlo > 0 else 0
            bx1 = xhi + 1 if xhi < nx - 1 else nx - 1
            by0 = ylo - 1 if ylo > 0 else 0
            by1 = yhi + 1 if yhi < ny - 1 else ny - 1
            fx1 = xhi if xhi < nx - 1 else nx - 2
            fy1 = yhi if yhi < ny - 1 else ny - 2
            for y in range(by0, by1 + 1):
                for x in range(bx0, bx1 + 1):
                    scale[y, x] = 0.0
            for y in range(ylo, yhi + 1):
                for x in range(bx0, fx1 + 1):
                    qx[y, x] = 0.0
                    if not act_x[y, x]:
                        continue
                    Ha = z[y, x] + depth[y, x]
                    Hb = z[y, x + 1] + depth[y, x + 1]
                    dH = Ha - Hb
                    if dH == 0.0:
                        continue
                    hf = max(Ha, Hb) - max(z[y, x], z[y, x + 1])
                    if hf <= 0.0:
                        continue
                    adH = abs(dH)
                    kup = ks[y, x] if dH > 0.0 else ks[y, x + 1]
                    hf2 = hf * hf
                    q = kup * np.cbrt(hf2 * hf2 * hf) * np.sqrt(adH * dx)
                    if q <= 0.0:
                        continue
                    if free_x[y, x] and adH >= dh_min:
                        r = adH / q
                        if r < bound:
                            bound = r
                    cap = dx * dx * adH / fourdt
                    if q > cap:
                        q = cap
                    if dH > 0.0:
                        qx[y, x] = q
                        scale[y, x] += q
                    else:
                        qx[y, x] = -q
                        scale[y, x + 1] += q
            for y in range(by0, fy1 + 1):
                for x in range(xlo, xhi + 1):
                    qy[y, x] = 0.0
                    if not act_y[y, x]:
                        continue
                    Ha = z[y, x] + depth[y, x]
                    Hb = z[y + 1, x] + depth[y + 1, x]
                    dH = Ha - Hb
                    if dH == 0.0:
                        continue
                    hf = max(Ha, Hb) - max(z[y, x], z[y + 1, x])
                    if hf <= 0.0:
                        continue
                    adH = abs(dH)
                    kup = ks[y, x] if dH > 0.0 else ks[y + 1, x]
                    hf2 = hf * hf
                    q = kup * np.cbrt(hf2 * hf2 * hf) * np.sqrt(adH * dx)
                    if q <= 0.0:
                        continue
                    if free_y[y, x] and adH >= dh_min:
                        r = adH / q
                        if r < bound:
                            bound = r
                    cap = dx * dx * adH / fourdt
                    if q > cap:
                        q = cap
                    if dH > 0.0:
                        qy[y, x] = q
                        scale[y, x] += q
                    else:
                        qy[y, x] = -q
                        scale[y + 1, x] += q
        for j in range(n_out):
            oy = outlet_iy[j]
            ox = outlet_ix[j]
            d = depth[oy, ox]
            d2 = d * d
            q_o = ks[oy, ox] * np.cbrt(d2 * d2 * d) * sqrt_slope * dx
            qo[j] = q_o
            if q_o > 0.0:
                # a draining outlet is wet, hence inside the box
                scale[oy, ox] += q_o
        # Turn accumulated demand into the per-cell donor scale factor.
        for y in range(by0, by1 + 1):
            for x in range(bx0, bx1 + 1):
                need = scale[y, x] * dt
                if need > 0.0:
                    avail = depth[y, x] * area
                    scale[y, x] = avail / need if need > avail else 1.0
                else:
                    scale[y, x] = 1.0
        if xhi >= 0:
            for y in range(ylo, yhi + 1):
                for x in range(bx0, fx1 + 1):
                    q = qx[y, x]
                    if q == 0.0:
                        continue
                    s = scale[y, x] if q > 0.0 else scale[y, x + 1]
                    dh = q * s * dt * inv_area
                    new_depth[y, x] -= dh
                    new_depth[y, x + 1] += dh
            for y in range(by0, fy1 + 1):
                for x in range(xlo, xhi + 1):
                    q = qy[y, x]
                    if q == 0.0:
                        continue
                    s = scale[y, x] if q > 0.0 else scale[y + 1, x]
                    dh = q * s * dt * inv_area
                    new_depth[y, x] -= dh
                    new_depth[y + 1, x] += dh
        for j in range(n_out):
            q_o = qo[j]
            if q_o > 0.0:
                oy = outlet_iy[j]
                ox = outlet_ix[j]
                qs = q_o * scale[oy, ox]
                new_depth[oy, ox] -= qs * dt * inv_area
                vo += qs * dt
        share = v_in / n_in / area
        for j in range(n_in):
            new_depth[inlet_iy[j], inlet_ix[j]] += share
        badpos = 0
        box_new = 0.0
        box_old = 0.0
        for y in range(by0, by1 + 1):
            for x in range(bx0, bx1 + 1):
                v = new_depth[y, x]
                if not np.isfinite(v):
                    if badpos == 0:
                        badpos = y * nx + x + 1
                    v = 0.0
                elif v < 0.0:
                    v = 0.0
                new_depth[y, x] = v
                box_new += v
                box_old += depth[y, x]
        extra = 0.0
        for j in range(n_in):
            jy = inlet_iy[j]
            jx = inlet_ix[j]
            if jy < by0 or jy > by1 or jx < bx0 or jx > bx1:
                v = new_depth[jy, jx]
                if not np.isfinite(v):
                    if badpos == 0:
                        badpos = jy * nx + jx + 1
                    v = 0.0
                elif v < 0.0:
                    v = 0.0
                new_depth[jy, jx] = v
                extra += v - depth[jy, jx]
        sum_new = sum_old + (box_new - box_old) + extra
        denom = sum_new * area
        if denom < 1.0:
            denom = 1.0
        err = abs((sum_new - sum_old) * area - (v_in - vo)) / denom
        return bound, vo, err, badpos

    @_njit(cache=True, parallel=True)
    def _fused_step(depth, z, ks, act_x, act_y, free_x, free_y,
                    inlet_iy, inlet_ix, outlet_iy, outlet_ix,
                    v_in, dt, dx, area, sqrt_slope, dh_min,
                    qx, qy, qo, scale,
                    new_depth, bounds, v_out, step_err, bad):
        """Advance all members; the parallel loop only dispatches per-member
        calls so the accelerator never rewrites the update arithmetic."""
        n = depth.shape[0]
        for i in _prange(n):
            b, vo, err, badpos = _member_step(
                depth[i], z, ks[i], act_x, act_y, free_x, free_y,
                inlet_iy, inlet_ix, outlet_iy, outlet_ix,
                v_in[i], dt, dx, area, sqrt_slope, dh_min,
                qx[i], qy[i], qo[i], scale[i], new_depth[i])
            bounds[i] = b
            v_out[i] = vo
            step_err[i] = err
            bad[i] = badpos


def _kernel_work(n, ny, nx, n_out):
    """Scratch blocks reused by the compiled kernel across sub-steps."""
    return (np.zeros((n, ny, nx - 1)), np.zeros((n, ny - 1, nx)),
            np.zeros((n, max(n_out, 1))), np.zeros((n, ny, nx)))


def _advance(depth, grid, ks, inflow_rate, dt, budget, exterior_slope, t_next,
             work=None):
    """Dispatch one continuity update to the compiled or numpy kernel."""
    if not _HAVE_NUMBA:
        return _advance_numpy(depth, grid, ks, inflow_rate, dt, budget,
                              exterior_slope, t_next)
    cache = _grid_faces(grid)
    single = depth.ndim == 2
    d3 = np.ascontiguousarray(depth[None] if single else depth)
    k3 = np.broadcast_to(ks, d3.shape) if ks.ndim == 2 else ks
    k3 = np.ascontiguousarray(k3)
    n = d3.shape[0]
    rate = np.asarray(inflow_rate, dtype=float)
    v_in = np.full(n, float(rate) * dt) if rate.ndim == 0 else rate * dt

    new3 = np.empty_like(d3)
    bounds = np.empty(n)
    v_out = np.empty(n)
    errs = np.empty(n)
    bad = np.zeros(n, dtype=np.int64)
    iy, ix = cache["inlet_yx"]
    oy, ox = cache["outlet_yx"]
    if work is None:
        work = _kernel_work(n, grid.ny, grid.nx, oy.size)
    qx_w, qy_w, qo_w, scale_w = work
    _fused_step(d3, cache["bed"], k3, cache["act_x"], cache["act_y"],
                cache["free_x"], cache["free_y"], iy, ix, oy, ox,
                v_in, float(dt), grid.dx, grid.cell_area,
                math.sqrt(exterior_slope), FLOW_DT_DH_MIN,
                qx_w, qy_w, qo_w, scale_w,
                new3, bounds, v_out, errs, bad)
    if bad.any():
        pos = int(bad[bad > 0][0]) - 1
        raise IntegrationError(
            f"non-finite depth at cell (iy={pos // grid.nx}, ix={pos % grid.nx}) "
            f"at t={t_next:.3f} s"
        )
    if budget is not None:
        if single:
            budget.inflow = budget.inflow + float(v_in[0])
            budget.outflow = budget.outflow + float(v_out[0])
            budget.max_step_error = max(float(budget.max_step_error), float(errs[0]))
        else:
            budget.inflow = budget.inflow + v_in
            budget.outflow = budget.outflow + v_out
            budget.max_step_error = np.maximum(budget.max_step_error, errs)
    dx = grid.dx
    flow_bound = max(FLOW_DT_FLOOR, CONV_SAFETY * dx * dx * float(bounds.min()) / 4.0)
    return (new3[0] if single else new3), flow_bound


def step(state: ModelState, grid: Grid, ctl: ControlVector, inflow_rate: float,
         dt: float, budget: VolumeBudget | None = None,
         exterior_slope: float = 1e-4) -> ModelState:
    """Advance the depth field by one explicit continuity update.

    ``inflow_rate`` (m^3/s) is the effective discharge entering the domain,
    split equally across the inlet cells. Outlet cells drain through a
    normal-depth law with the local friction and ``exterior_slope``.
    """
    if dt <= 0:
        raise ValidationError("dt must be positive")
    ks = _cell_ks(grid, ctl)
    new_depth, _ = _advance(state.depth, grid, ks, inflow_rate, dt, budget,
                            exterior_slope, state.time + dt)
    if budget is not None:
        _scalarize_budget(budget)
    return ModelState(depth=new_depth, time=state.time + dt)


def stable_dt(state: ModelState, grid: Grid, ctl: ControlVector,
              dt_max: float = 600.0) -> float:
    """Explicit step bound 0.7 * dx^2 / (4 * max(Ks * h^(5/3) / sqrt(dx)))."""
    active = grid.active_mask()
    h = state.depth[active]
    ks = _cell_ks(grid, ctl)[active]
    rate = float((ks * h**FLUX_EXP).max(initial=0.0)) / math.sqrt(grid.dx)
    if rate <= 0.0:
        return dt_max
    return min(dt_max, CFL_SAFETY * grid.dx * grid.dx / (4.0 * rate))


def _scalarize_budget(budget: VolumeBudget):
    budget.inflow = float(budget.inflow)
    budget.outflow = float(budget.outflow)
    budget.dh_added = float(budget.dh_added)
    budget.max_step_error = float(budget.max_step_error)


def _dh_increment(grid: Grid, dh: np.ndarray, n_shares: int) -> np.ndarray:
    """Per-application level increment field; dh may carry leading axes."""
    dh = np.asarray(dh, dtype=float)
    inc = np.zeros(dh.shape[:-1] + (grid.ny, grid.nx))
    fp = grid.cell_class == CLASS_FLOODPLAIN
    for k in range(1, N_DH + 1):
        sel = fp & (grid.subdomain == k)
        inc[..., sel] = dh[..., k - 1:k] / n_shares
    return inc


def apply_dh(state: ModelState, grid: Grid, dh: np.ndarray,
             schedule) -> list[ModelState]:
    """Spread the level increments over the schedule times.

    At each schedule time every floodplain cell of subdomain k gains
    dh[k-1]/len(schedule), clipped so depth stays non-negative. Channel
    cells are never touched. Returns the state after each application;
    no flow integration happens in between.
    """
    schedule = list(schedule)
    if not schedule:
        raise ValidationError("dh schedule must contain at least one time")
    dh = np.asarray(dh, dtype=float)
    if dh.shape != (N_DH,):
        raise ValidationError(f"dh must have shape ({N_DH},)")
    inc = _dh_increment(grid, dh, len(schedule))
    states = []
    depth = state.depth
    for t in schedule:
        depth = np.maximum(depth + inc, 0.0)
        states.append(ModelState(depth=depth, time=float(t)))
    return states


def _plan_times(t0, t_end, forcing, record_times, dh_schedule):
    """Validate record/dh times and build the landmark sequence.

    Landmarks are the times the integration must land on exactly: record
    times, dh application times, hydrograph breakpoints (so the injected
    volume matches the exact hydrograph integral) and t_end.
    """
    if t_end < t0:
        raise ValidationError("t_end must not precede the initial time")
    record = np.atleast_1d(np.asarray(record_times, dtype=float))
    if record.size and ((record < t0 - 1e-9).any() or (record > t_end + 1e-9).any()):
        raise ValidationError("record times must lie within [t0, t_end]")
    record_set = set(np.round(record, 6))

    dh_times = []
    if dh_schedule is not None:
        dh_times = [float(t) for t in dh_schedule]
        if any(t < t0 - 1e-9 or t > t_end + 1e-9 for t in dh_times):
            raise ValidationError("dh schedule times must lie within [t0, t_end]")
    dh_set = set(np.round(dh_times, 6))

    breaks = forcing.times[(forcing.times > t0) & (forcing.times < t_end)]
    landmarks = sorted(set(np.round(np.concatenate(
        [record, np.asarray(dh_times), breaks, [t_end]]), 6)))
    landmarks = [t for t in landmarks if t > t0 + 1e-9 or math.isclose(t, t_end)]
    return record_set, dh_times, dh_set, landmarks


def _integrate(depth, t0, grid, ks, mu, forcing, t_end, landmarks, record_set,
               dh_set, inc, exterior_slope, dt_max, budget):
    """Adaptive-step engine shared by the single and ensemble integrators.

    ``depth`` has shape (..., ny, nx); leading axes are members advanced
    with a common dt. Each sub-step obeys both the explicit stability
    formula (evaluated conservatively as max(Ks) * max(h)^(5/3)) and the
    conveyance bound carried over from the previous step's fluxes.
    """
    act = grid.active_mask()
    max_ks = float(np.max(np.where(act, ks, 0.0)))
    dx = grid.dx
    records = []
    t = t0
    if round(t0, 6) in record_set:
        records.append((t0, depth))
    flow_bound = _flow_dt(depth, grid, ks)
    work = None
    if _HAVE_NUMBA:
        n = 1 if depth.ndim == 2 else depth.shape[0]
        work = _kernel_work(n, grid.ny, grid.nx, grid.outlet_cells.size)
    for tl in landmarks:
        while t < tl - 1e-9:
            max_h = float(depth.max())
            if max_h > 0.0 and max_ks > 0.0:
                rate = max_ks * max_h**FLUX_EXP / math.sqrt(dx)
                dt_formula = CFL_SAFETY * dx * dx / (4.0 * rate)
            else:
                dt_formula = dt_max
            dt = min(dt_max, dt_formula, flow_bound, tl - t)
            q_eff = mu * float(forcing.discharge(t + 0.5 * dt))
            depth, flow_bound = _advance(depth, grid, ks, q_eff, dt, budget,
                                         exterior_slope, t + dt, work=work)
            t += dt
        t = float(tl)
        key = round(tl, 6)
        if key in dh_set:
            old = depth.sum(axis=(-2, -1))
            depth = np.maximum(depth + inc, 0.0)
            budget.dh_added = budget.dh_added + (
                depth.sum(axis=(-2, -1)) - old) * grid.cell_area
        if key in record_set:
            records.append((t, depth))
    return records, depth, t


def simulate(initial: ModelState, grid: Grid, ctl: ControlVector,
             forcing: Hydrograph, t_end: float, record_times,
             dh_schedule=None, budget: VolumeBudget | None = None,
             exterior_slope: float = 1e-4, dt_max: float = 600.0) -> SimulationResult:
    """Integrate from ``initial.time`` to ``t_end`` with adaptive sub-steps.

    The effective inflow is ctl.mu * Q(t), evaluated at sub-step midpoints.
    Sub-steps land exactly on every record time, on hydrograph breakpoints
    and on the optional dh application schedule. When ``dh_schedule`` is
    given, ctl.dh is spread evenly over those times via the apply_dh rule.

    Returns the recorded trajectory (one state per record time) plus the
    final state at ``t_end``.
    """
    t0 = float(initial.time)
    record_set, dh_times, dh_set, landmarks = _plan_times(
        t0, t_end, forcing, record_times, dh_schedule)
    if budget is None:
        budget = VolumeBudget()
    if math.isclose(t_end, t0):
        trajectory = [initial] if round(t0, 6) in record_set else []
        return SimulationResult(trajectory=trajectory, final=initial, budget=budget)

    inc = _dh_increment(grid, ctl.dh, len(dh_times)) if dh_times else None
    ks = _cell_ks(grid, ctl)
    records, depth, t = _integrate(
        initial.depth, t0, grid, ks, float(ctl.mu), forcing, t_end, landmarks,
        record_set, dh_set, inc, exterior_slope, dt_max, budget)
    _scalarize_budget(budget)
    trajectory = [ModelState(depth=d, time=tt) for tt, d in records]
    final = ModelState(depth=depth, time=t)
    return SimulationResult(trajectory=trajectory, final=final, budget=budget)


@dataclass
class EnsembleSimResult:
    """Recorded fields for a batch of members integrated with a shared dt.

    ``depths`` holds one (n_members, ny, nx) array per recorded time.
    Budget entries are per-member vectors.
    """

    times: list
    depths: list
    final_depth: np.ndarray
    final_time: float
    inflow: np.ndarray
    outflow: np.ndarray
    dh_added: np.ndarray
    max_step_error: np.ndarray


def simulate_ensemble(initial_depths, t0: float, grid: Grid, ctls,
                      forcing: Hydrograph, t_end: float, record_times,
                      dh_schedule=None, exterior_slope: float = 1e-4,
                      dt_max: float = 600.0) -> EnsembleSimResult:
    """Integrate every member at once; sub-steps use the ensemble-wide bound.

    Equivalent to one simulate() per member except that all members share
    the most restrictive dt, which keeps the arithmetic vectorized across
    the ensemble. With a single member the dt sequence, and therefore the
    result, matches simulate() bit for bit.
    """
    depths = np.array(initial_depths, dtype=float)
    if depths.ndim != 3 or depths.shape[1:] != (grid.ny, grid.nx):
        raise ValidationError(
            f"initial_depths must have shape (n, {grid.ny}, {grid.nx})")
    if (depths < 0).any():
        raise ValidationError("depth must be non-negative everywhere")
    ctls = list(ctls)
    if len(ctls) != depths.shape[0]:
        raise ValidationError("one control vector per member is required")
    t0 = float(t0)
    record_set, dh_times, dh_set, landmarks = _plan_times(
        t0, t_end, forcing, record_times, dh_schedule)

    n = len(ctls)
    ks = np.stack([_cell_ks(grid, c) for c in ctls])
    mu = np.array([c.mu for c in ctls], dtype=float)
    budget = VolumeBudget(inflow=np.zeros(n), outflow=np.zeros(n),
                          dh_added=np.zeros(n), max_step_error=np.zeros(n))
    if math.isclose(t_end, t0):
        rec = [(t0, depths)] if round(t0, 6) in record_set else []
        return EnsembleSimResult(
            times=[t for t, _ in rec], depths=[d for _, d in rec],
            final_depth=depths, final_time=t0, inflow=budget.inflow,
            outflow=budget.outflow, dh_added=budget.dh_added,
            max_step_error=budget.max_step_error)

    inc = None
    if dh_times:
        inc = _dh_increment(grid, np.stack([c.dh for c in ctls]), len(dh_times))
    records, depth, t = _integrate(
        depths, t0, grid, ks, mu, forcing, t_end, landmarks, record_set,
        dh_set, inc, exterior_slope, dt_max, budget)
    return EnsembleSimResult(
        times=[tt for tt, _ in records], depths=[d for _, d in records],
        final_depth=depth, final_time=t, inflow=np.asarray(budget.inflow),
        outflow=np.asarray(budget.outflow), dh_added=np.asarray(budget.dh_added),
        max_step_error=np.asarray(budget.max_step_error))


# ---------------------------------------------------------------------------
# File formats


def write_grid(grid: Grid, path):
    """Plain-text grid: header 'nx ny dx', then one 'z class zone subdomain'
    line per cell in row-major order."""
    lines = [f"{grid.nx} {grid.ny} {grid.dx:.6g}"]
    z = grid.bed.ravel()
    c = grid.cell_class.ravel()
    f = grid.friction_zone.ravel()
    s = grid.subdomain.ravel()
    for i in range(grid.n_cells):
        lines.append(f"{z[i]:.6f} {c[i]} {f[i]} {s[i]}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_grid(path, inlet_cells=None, outlet_cells=None) -> Grid:
    """Read a grid file; infer inlets/outlets from the channel ends unless given.

    Inference convention: inlets are the channel cells in the westmost
    channel column, outlets those in the eastmost one.
    """
    text = Path(path).read_text().strip().splitlines()
    head = text[0].split()
    if len(head) != 3:
        raise ValidationError("grid header must be 'nx ny dx'")
    nx, ny, dx = int(head[0]), int(head[1]), float(head[2])
    body = text[1:]
    if len(body) != nx * ny:
        raise ValidationError(f"grid body has {len(body)} rows, expected {nx * ny}")
    data = np.array([ln.split() for ln in body], dtype=float)
    bed = data[:, 0].reshape(ny, nx)
    cls = data[:, 1].astype(np.int8).reshape(ny, nx)
    zone = data[:, 2].astype(np.int8).reshape(ny, nx)
    sub = data[:, 3].astype(np.int8).reshape(ny, nx)
    if inlet_cells is None or outlet_cells is None:
        chan_iy, chan_ix = np.nonzero(cls == CLASS_CHANNEL)
        if chan_ix.size == 0:
            raise ValidationError("cannot infer inlets/outlets: no channel cells")
        if inlet_cells is None:
            sel = chan_ix == chan_ix.min()
            inlet_cells = chan_iy[sel] * nx + chan_ix[sel]
        if outlet_cells is None:
            sel = chan_ix == chan_ix.max()
            outlet_cells = chan_iy[sel] * nx + chan_ix[sel]
    return Grid(nx=nx, ny=ny, dx=dx, bed=bed, cell_class=cls, friction_zone=zone,
                subdomain=sub, inlet_cells=np.asarray(inlet_cells, dtype=int),
                outlet_cells=np.asarray(outlet_cells, dtype=int))


def write_hydrograph(forcing: Hydrograph, path):
    lines = ["time_s,discharge_m3s"]
    for t, q in zip(forcing.times, forcing.flows):
        lines.append(f"{t:.6f},{q:.6f}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_hydrograph(path) -> Hydrograph:
    rows = Path(path).read_text().strip().splitlines()
    if rows[0].strip() != "time_s,discharge_m3s":
        raise ValidationError("hydrograph header must be 'time_s,discharge_m3s'")
    data = np.array([r.split(",") for r in rows[1:]], dtype=float)
    return Hydrograph(times=data[:, 0], flows=data[:, 1])


def write_restart(state: ModelState, path, sparse: bool = True):
    """Depth snapshot: '# time_s=<t>' then 'cell_index,depth_m' rows.

    Sparse files store only wet cells; omitted cells read back as dry.
    """
    depth = state.depth.ravel()
    idx = np.nonzero(depth > 0.0)[0] if sparse else np.arange(depth.size)
    lines = [f"# time_s={float(state.time)!r}", "cell_index,depth_m"]
    for i in idx:
        lines.append(f"{i},{float(depth[i])!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_restart(path, grid: Grid) -> ModelState:
    rows = Path(path).read_text().strip().splitlines()
    if not rows[0].startswith("# time_s="):
        raise ValidationError("restart file must start with '# time_s=<t>'")
    t = float(rows[0].split("=", 1)[1])
    if rows[1].strip() != "cell_index,depth_m":
        raise ValidationError("restart header must be 'cell_index,depth_m'")
    depth = np.zeros(grid.n_cells)
    for row in rows[2:]:
        i_s, d_s = row.split(",")
        depth[int(i_s)] = float(d_s)
    return ModelState(depth=depth.reshape(grid.ny, grid.nx), time=t)
