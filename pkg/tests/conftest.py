import dataclasses

import numpy as np
import pytest

from floodda.hydro import (CLASS_CHANNEL, CLASS_FLOODPLAIN, CLASS_INACTIVE,
                           ControlVector, Grid, Hydrograph)


def make_grid(nx=6, ny=5, dx=50.0, bed=None, channel_row=2, slope=0.0,
              zone_split=None, subdomains=True):
    """Small test grid: one channel row, floodplain above/below, closed rim.

    The channel drops ``slope``*dx per cell toward the east outlet. Channel
    friction zones split at ``zone_split`` (defaults to the midpoint).
    """
    cls = np.full((ny, nx), CLASS_INACTIVE, dtype=np.int8)
    cls[1:-1, :] = CLASS_FLOODPLAIN
    cls[channel_row, :] = CLASS_CHANNEL
    if bed is None:
        bed = np.zeros((ny, nx))
        bed[channel_row] = slope * dx * np.arange(nx)[::-1]
    zone = np.zeros((ny, nx), dtype=np.int8)
    split = zone_split if zone_split is not None else nx // 2
    zone[channel_row, :split] = 1
    zone[channel_row, split:] = 2
    sub = np.zeros((ny, nx), dtype=np.int8)
    if subdomains:
        sub[1, :] = np.where(cls[1] == CLASS_FLOODPLAIN, 1, 0)
        for r in range(channel_row + 1, ny - 1):
            sub[r, :] = np.where(cls[r] == CLASS_FLOODPLAIN, 2, 0)
    return Grid(nx=nx, ny=ny, dx=dx, bed=bed, cell_class=cls,
                friction_zone=zone, subdomain=sub,
                inlet_cells=np.array([channel_row * nx]),
                outlet_cells=np.array([channel_row * nx + nx - 1]))


def with_five_subdomains(grid):
    """Carve the two floodplain rows into the full five-subdomain set."""
    sub = np.zeros((grid.ny, grid.nx), dtype=np.int8)
    third = max(grid.nx // 2, 1)
    sub[1, :third] = 1
    sub[1, third:] = 2
    a = max(grid.nx // 3, 1)
    b = max(2 * grid.nx // 3, a + 1)
    sub[3, :a] = 3
    sub[3, a:b] = 4
    sub[3, b:] = 5
    return dataclasses.replace(grid, subdomain=sub)


def make_ctl(ks0=8.0, ks=12.0, mu=1.0, dh=None):
    vec = np.full(7, ks, dtype=float)
    vec[0] = ks0
    return ControlVector(ks=vec, mu=mu,
                         dh=np.zeros(5) if dh is None else np.asarray(dh, float))


def flat_hydrograph(q=0.0, t_end=1e6):
    return Hydrograph(times=np.array([0.0, t_end]), flows=np.array([q, q]))


@pytest.fixture
def grid():
    return make_grid()


@pytest.fixture
def ctl():
    return make_ctl()
