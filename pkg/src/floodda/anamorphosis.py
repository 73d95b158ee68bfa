"""Empirical Gaussian anamorphosis for bounded [0, 1] samples.

A transform is rebuilt from scratch each time from an ensemble sample of
wet-surface ratios: sample values are paired with standard-normal scores
at plotting positions (k - 0.5)/N, joined piecewise-linearly, and extended
by linear tails so the whole physical interval [0, 1] maps one-to-one onto
a finite Gaussian interval.

Values saturated exactly at the bounds are made distinct beforehand with a
tiny seeded uniform noise (pushed inward), and interior exact duplicates
get a seeded jitter an order of magnitude above the noise floor; ties that
survive because the jitter rounds away at double resolution are nudged
apart by machine steps. The noised copy of the sample is kept, in member
order, so that ensemble equivalents can be transformed consistently with
the function built from them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from .errors import ConfigurationError, ConstructionError, DomainError, ValidationError

NOISE_LO = 1e-15
NOISE_HI = 5e-4
MIN_SAMPLE = 4


@dataclass(frozen=True)
class SampleSpec:
    """A bounded sample plus the seed controlling its noise treatment."""

    values: np.ndarray
    seed: int
    noise_lo: float = NOISE_LO
    noise_hi: float = NOISE_HI

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.ndim != 1:
            raise ValidationError("sample must be one-dimensional")
        if not (0 < self.noise_lo < self.noise_hi < 1):
            raise ValidationError("noise bounds must satisfy 0 < lo < hi < 1")


@dataclass(frozen=True)
class AnamorphosisFunction:
    """Monotone piecewise-linear bijection [0, 1] -> [z_left, z_right].

    ``y``/``z`` are the interior breakpoints (strictly increasing); the two
    tail endpoints sit at physical 0 and 1. ``member_values`` is the noised
    build sample in original member order, so forward(member_values) yields
    the Gaussian scores of the ensemble that defined the function.
    """

    y: np.ndarray
    z: np.ndarray
    z_left: float
    z_right: float
    member_values: np.ndarray = field(repr=False)

    @property
    def nodes_y(self) -> np.ndarray:
        return np.concatenate([[0.0], self.y, [1.0]])

    @property
    def nodes_z(self) -> np.ndarray:
        return np.concatenate([[self.z_left], self.z, [self.z_right]])

    def forward(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if ((values < 0.0) | (values > 1.0)).any():
            raise DomainError("forward transform requires values in [0, 1]")
        return np.interp(values, self.nodes_y, self.nodes_z)

    def inverse(self, scores) -> np.ndarray:
        scores = np.clip(np.asarray(scores, dtype=float), self.z_left, self.z_right)
        return np.interp(scores, self.nodes_z, self.nodes_y)

    def member_scores(self) -> np.ndarray:
        return self.forward(self.member_values)


def _treat_sample(spec: SampleSpec) -> np.ndarray:
    """Bound noise + duplicate jitter; returns the noised sample, member order."""
    v = spec.values.astype(float).copy()
    if ((v < 0.0) | (v > 1.0)).any():
        raise DomainError("sample values must lie in [0, 1]")
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.noise_lo, spec.noise_hi
    zeros = v == 0.0
    ones = v == 1.0
    v[zeros] += rng.uniform(lo, hi, int(zeros.sum()))
    v[ones] -= rng.uniform(lo, hi, int(ones.sum()))

    order = np.argsort(v, kind="stable")
    s = v[order]
    jit = lo * 10.0
    i = 0
    n = s.size
    while i < n:
        j = i
        while j + 1 < n and s[j + 1] == s[i]:
            j += 1
        if j > i:
            s[i + 1:j + 1] += np.sort(rng.uniform(0.0, jit, j - i))
        i = j + 1
    np.clip(s, lo, 1.0 - lo, out=s)
    # jitter offsets smaller than one ulp of the tied value vanish on
    # rounding; resolve those survivors upward by machine steps so the
    # sorted sample is strictly increasing
    if not (np.diff(s) > 0.0).all():
        for k in range(1, n):
            if s[k] <= s[k - 1]:
                s[k] = np.nextafter(s[k - 1], np.inf)
    if s[0] <= 0.0 or s[-1] >= 1.0 or not (np.diff(s) > 0.0).all():
        raise ConstructionError("degenerate sample: still non-increasing after jitter")
    out = np.empty_like(s)
    out[order] = s
    return out


def build_anamorphosis(spec: SampleSpec) -> AnamorphosisFunction:
    """Construct the transform from a sample of at least 4 values."""
    if spec.values.size < MIN_SAMPLE:
        raise ConstructionError(
            f"anamorphosis needs at least {MIN_SAMPLE} sample values, got {spec.values.size}"
        )
    member_values = _treat_sample(spec)
    y = np.sort(member_values)
    n = y.size
    z = ndtri((np.arange(1, n + 1) - 0.5) / n)

    slope_l = (z[1] - z[0]) / (y[1] - y[0])
    slope_r = (z[-1] - z[-2]) / (y[-1] - y[-2])
    z_left = z[0] - slope_l * y[0]
    z_right = z[-1] + slope_r * (1.0 - y[-1])
    # keep the closed domain strictly monotone even when the tail extension
    # underflows against the extreme breakpoint score
    z_left = min(z_left, np.nextafter(z[0], -np.inf))
    z_right = max(z_right, np.nextafter(z[-1], np.inf))

    return AnamorphosisFunction(y=y, z=z, z_left=float(z_left),
                                z_right=float(z_right), member_values=member_values)


def transform_obs_block(phis, kinds, obs_block: np.ndarray,
                        equiv_block: np.ndarray):
    """Map perturbed observations and member equivalents to analysis space.

    ``phis`` holds one AnamorphosisFunction per observation slot (None for
    slots left in physical space), ``kinds`` the matching observation kinds.
    WL slots pass through unchanged. WSR slots are transformed with their
    slot function; the member equivalents go through the noised build-sample
    copies so saturated members keep distinct scores. Returns the pair
    (transformed obs block, transformed equivalent block).
    """
    obs_block = np.asarray(obs_block, dtype=float)
    equiv_block = np.asarray(equiv_block, dtype=float)
    if obs_block.shape != equiv_block.shape:
        raise ConfigurationError("observation and equivalent blocks must match in shape")
    n_slots = obs_block.shape[-1]
    if len(kinds) != n_slots or len(phis) != n_slots:
        raise ConfigurationError("one kind and one transform slot per observation column")

    obs_t = obs_block.copy()
    equiv_t = equiv_block.copy()
    for j, (phi, kind) in enumerate(zip(phis, kinds)):
        if kind == "WL":
            continue
        if kind != "WSR":
            raise ConfigurationError(f"unknown observation kind {kind!r}")
        if phi is None:
            raise ConfigurationError(f"WSR slot {j} has no anamorphosis function")
        col = equiv_block[..., j]
        if np.abs(col - phi.member_values).max() > phi_noise_budget(phi):
            raise ConfigurationError(
                f"WSR slot {j}: equivalents do not match the transform's build sample"
            )
        obs_t[..., j] = phi.forward(obs_block[..., j])
        equiv_t[..., j] = phi.forward(phi.member_values)
    return obs_t, equiv_t


def phi_noise_budget(phi: AnamorphosisFunction) -> float:
    """Largest displacement the build-time noise treatment may have applied."""
    return NOISE_HI + NOISE_LO * 10.0


# ---------------------------------------------------------------------------
# File format

PHI_HEADER = "y_physical,z_gaussian"


def write_phi(phi: AnamorphosisFunction, path):
    """CSV of the complete node set: left tail row, breakpoints, right tail row."""
    lines = [PHI_HEADER]
    for yv, zv in zip(phi.nodes_y, phi.nodes_z):
        lines.append(f"{float(yv)!r},{float(zv)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_phi(path) -> AnamorphosisFunction:
    rows = Path(path).read_text().strip().splitlines()
    if rows[0].strip() != PHI_HEADER:
        raise ValidationError(f"transform dump header must be '{PHI_HEADER}'")
    data = np.array([r.split(",") for r in rows[1:]], dtype=float)
    y, z = data[:, 0], data[:, 1]
    if y[0] != 0.0 or y[-1] != 1.0:
        raise ValidationError("transform dump must span physical [0, 1]")
    return AnamorphosisFunction(y=y[1:-1], z=z[1:-1], z_left=float(z[0]),
                                z_right=float(z[-1]), member_values=y[1:-1].copy())
