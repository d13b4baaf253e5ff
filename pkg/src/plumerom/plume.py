"""Synthetic full-order surrogate: analytic plume fields on a fixed grid.

Stands in for the expensive flow solver. For any admissible parameter point
it returns a deterministic 2-D field: a Gaussian plume with ground
reflection advected by the log-law inlet wind, modified by an obstacle wake
(upward centerline deflection and spread inflation decaying over ~5 obstacle
heights) and an upstream accumulation bump for low sources upwind of the
obstacle. Smooth pseudo-noise emulates finite time-averaging error: per-node
amplitude proportional to the local field magnitude and to
1/sqrt(window_fraction * t_avg_periods), so half-window companions are
noisier by sqrt(2).

Fields are normalized: concentration by u_tau_ref * H^2 / Q_s, vertical flux
by H^2 / Q_s (the flux already carries a velocity scale).
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from . import smx
from .errors import ConfigError, DataError
from .sampling import (
    Design,
    ParameterSample,
    ParameterSpace,
    design,
    friction_velocity,
    inlet_profile,
    reference_velocity,
)

GENERATOR_VERSION = "plume-surrogate-1"

OBSTACLE_HEIGHT = 1.0      # H [m]; obstacle occupies [0,1]x[0,1]
SOURCE_RATE = 1.0          # Q_s [m^3/s]
T_AVG_PERIODS = 40.0       # averaging window length, in characteristic periods
DEFAULT_NOISE_AMPLITUDE = 0.2

_SIGMA_SOURCE = 0.12       # near-source Gaussian core width [m]
_SPREAD_RATE = 1.3         # spread growth per unit turbulence intensity
_WAKE_DECAY = 5.0          # wake relaxation length [m], ~5H
_WAKE_LIFT = 0.8           # centerline deflection at the trailing edge [m]
_WAKE_SPREAD = 1.5         # relative spread inflation in the wake
_ACC_AMPLITUDE = 0.5       # upstream accumulation strength
_FLUX_COEFF = 0.35         # eddy-diffusivity scale for the flux channel

CHANNELS = ("mean_concentration", "vertical_flux")


@dataclass(frozen=True)
class Grid:
    """Uniform rectangular grid; values are stored row-major (z outer, x inner)."""

    nx: int = 171
    nz: int = 51
    x_range: tuple[float, float] = (-3.5, 13.5)
    z_range: tuple[float, float] = (0.0, 5.0)

    def __post_init__(self):
        if self.nx < 2 or self.nz < 2:
            raise ConfigError("grid needs nx >= 2 and nz >= 2")

    @property
    def n_nodes(self) -> int:
        return self.nx * self.nz

    def x(self) -> np.ndarray:
        return np.linspace(self.x_range[0], self.x_range[1], self.nx)

    def z(self) -> np.ndarray:
        return np.linspace(self.z_range[0], self.z_range[1], self.nz)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x(), self.z())

    def to_dict(self) -> dict:
        return {
            "nx": self.nx,
            "nz": self.nz,
            "x_range": list(self.x_range),
            "z_range": list(self.z_range),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Grid":
        return cls(
            nx=d["nx"],
            nz=d["nz"],
            x_range=tuple(d["x_range"]),
            z_range=tuple(d["z_range"]),
        )


@dataclass
class FieldSnapshot:
    values: np.ndarray
    mu: ParameterSample
    channel: str = "mean_concentration"
    window_fraction: float = 1.0


@dataclass
class SnapshotSet:
    """A grid, N snapshots, and (optionally) their half-window companions."""

    grid: Grid
    snapshots: list[FieldSnapshot]
    half_window: list[FieldSnapshot] | None = None
    manifest: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.snapshots)

    @property
    def channel(self) -> str:
        return self.snapshots[0].channel

    def matrix(self) -> np.ndarray:
        """Snapshots stacked as columns: shape (n_nodes, N)."""
        return np.column_stack([s.values for s in self.snapshots])

    def half_matrix(self) -> np.ndarray:
        if self.half_window is None:
            raise DataError("snapshot set has no half-window companions")
        return np.column_stack([s.values for s in self.half_window])

    def unit_inputs(self) -> np.ndarray:
        return np.array([s.mu.unit for s in self.snapshots])

    def subset(self, indices) -> "SnapshotSet":
        indices = list(indices)
        return SnapshotSet(
            grid=self.grid,
            snapshots=[self.snapshots[i] for i in indices],
            half_window=None
            if self.half_window is None
            else [self.half_window[i] for i in indices],
            manifest=dict(self.manifest),
        )

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        smx.write_smx(directory / "full.smx", self.matrix(), self.grid.nx, self.grid.nz)
        if self.half_window is not None:
            smx.write_smx(
                directory / "half.smx", self.half_matrix(), self.grid.nx, self.grid.nz
            )
        manifest = dict(self.manifest)
        manifest["grid"] = self.grid.to_dict()
        manifest["channel"] = self.channel
        manifest["n_snapshots"] = len(self)
        manifest["has_half_window"] = self.half_window is not None
        manifest["samples"] = [s.mu.to_dict() for s in self.snapshots]
        with open(directory / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=1)

    @classmethod
    def load(cls, directory) -> "SnapshotSet":
        directory = Path(directory)
        with open(directory / "manifest.json") as fh:
            manifest = json.load(fh)
        grid = Grid.from_dict(manifest["grid"])
        full, nx, nz = smx.read_smx(directory / "full.smx")
        if (nx, nz) != (grid.nx, grid.nz):
            raise DataError("manifest grid disagrees with full.smx header")
        space = ParameterSpace.from_dict(manifest["space"])
        samples = [
            ParameterSample(
                unit=np.array(rec["unit"]),
                physical=np.array(rec["physical"]),
                index=rec["index"],
            )
            for rec in manifest["samples"]
        ]
        channel = manifest["channel"]
        snapshots = [
            FieldSnapshot(values=full[:, i], mu=samples[i], channel=channel)
            for i in range(full.shape[1])
        ]
        half = None
        if manifest.get("has_half_window"):
            half_mat, _, _ = smx.read_smx(directory / "half.smx")
            half = [
                FieldSnapshot(
                    values=half_mat[:, i],
                    mu=samples[i],
                    channel=channel,
                    window_fraction=0.5,
                )
                for i in range(half_mat.shape[1])
            ]
        out = cls(grid=grid, snapshots=snapshots, half_window=half, manifest=manifest)
        out.manifest.setdefault("space", space.to_dict())
        return out


def _sigmoid(v):
    return 1.0 / (1.0 + np.exp(-np.clip(v, -60.0, 60.0)))


@functools.lru_cache(maxsize=8)
def _cached_reference_velocity(space: ParameterSpace) -> float:
    return reference_velocity(space, n_mc=100_000, seed=0)


def _analytic_plume(mu: ParameterSample, grid: Grid, space: ParameterSpace):
    """Noiseless concentration field and its vertical derivative, unnormalized."""
    u_zc, z0, x_src, z_src = mu.physical
    u_tau = friction_velocity(u_zc, z0, space.z_c, space.kappa)
    z_ref = max(z_src, 0.25)
    u_adv = inlet_profile(z_ref, u_tau, z0, space.kappa)
    turb_intensity = u_tau / u_adv

    xg, zg = grid.mesh()
    x_rel = xg - x_src

    # Wake factor: rises past the trailing edge of the [0,1]x[0,1] square,
    # relaxes over ~5H. Sources well above H barely interact.
    wake = _sigmoid((xg - OBSTACLE_HEIGHT) / 0.25) * np.exp(
        -np.maximum(xg - OBSTACLE_HEIGHT, 0.0) / _WAKE_DECAY
    )
    overlap = math.exp(
        -max(z_src - OBSTACLE_HEIGHT, 0.0) ** 2 / (2.0 * 0.6**2)
    )
    centerline = z_src + _WAKE_LIFT * wake * overlap

    x_down = np.maximum(x_rel, 0.0)
    sigma = np.sqrt(_SIGMA_SOURCE**2 + (_SPREAD_RATE * turb_intensity * x_down) ** 2)
    sigma = sigma * (1.0 + _WAKE_SPREAD * wake * overlap)

    ramp = _sigmoid(x_rel / 0.15)
    amp = SOURCE_RATE / (math.sqrt(2.0 * math.pi) * u_adv) / sigma
    dz_m = zg - centerline
    dz_p = zg + centerline
    g_m = np.exp(-(dz_m**2) / (2.0 * sigma**2))
    g_p = np.exp(-(dz_p**2) / (2.0 * sigma**2))
    plume = amp * (g_m + g_p) * ramp
    dplume_dz = amp * ramp * (-(dz_m * g_m + dz_p * g_p) / sigma**2)

    # Near-source core (the emission source has finite spatial extent).
    blob_amp = SOURCE_RATE / (math.sqrt(2.0 * math.pi) * _SIGMA_SOURCE * u_adv)
    r2 = (xg - x_src) ** 2 + (zg - z_src) ** 2
    blob = blob_amp * np.exp(-r2 / (2.0 * _SIGMA_SOURCE**2))
    dblob_dz = blob * (-(zg - z_src) / _SIGMA_SOURCE**2)

    # Accumulation against the windward face for low upstream sources.
    upstream = _sigmoid(-x_src / 0.15) * _sigmoid((OBSTACLE_HEIGHT - z_src) / 0.15)
    proximity = math.exp(min(x_src, 0.0) / 2.0)
    acc_amp = _ACC_AMPLITUDE * upstream * proximity * blob_amp
    dx_b = (xg + 0.3) / 0.45
    dz_b = (zg - 0.35) / 0.40
    acc = acc_amp * np.exp(-0.5 * (dx_b**2 + dz_b**2))
    dacc_dz = acc * (-dz_b / 0.40)

    conc = plume + blob + acc
    dconc_dz = dplume_dz + dblob_dz + dacc_dz
    flux_sign = (1.0 + wake) * (1.0 - 1.6 * wake * overlap)
    flux = -_FLUX_COEFF * u_tau * flux_sign * dconc_dz
    return conc, flux


def _noise_field(mu: ParameterSample, grid: Grid, channel: str, window_fraction: float,
                 seed: int, t_avg_periods: float) -> np.ndarray:
    """Unit-amplitude smooth noise (correlation length ~3 cells), seeded by
    (seed, mu, window_fraction, channel)."""
    entropy = [
        int(seed) & 0xFFFFFFFFFFFFFFFF,
        CHANNELS.index(channel),
        int(round(window_fraction * 1_000_000)),
        int(round(t_avg_periods * 1_000)),
    ]
    entropy.extend(int(v) for v in np.frombuffer(
        np.asarray(mu.unit, dtype="<f8").tobytes(), dtype="<u8"))
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
    white = rng.standard_normal((grid.nz, grid.nx))
    smooth = gaussian_filter(white, sigma=3.0, mode="reflect")
    return smooth / smooth.std()


def generate_field(
    mu: ParameterSample,
    grid: Grid,
    channel: str = "mean_concentration",
    window_fraction: float = 1.0,
    seed: int = 0,
    *,
    space: ParameterSpace | None = None,
    u_tau_ref: float | None = None,
    noise_amplitude: float = DEFAULT_NOISE_AMPLITUDE,
    t_avg_periods: float = T_AVG_PERIODS,
) -> FieldSnapshot:
    """Evaluate one normalized surrogate snapshot at parameter point ``mu``.

    Deterministic: identical (mu, seed, window_fraction) give bit-identical
    fields. ``noise_amplitude=0`` is the exact analytic field (test hook).
    """
    if not 0.0 < window_fraction <= 1.0:
        raise ConfigError("window_fraction must lie in (0, 1]")
    if channel not in CHANNELS:
        raise ConfigError(f"unknown channel {channel!r}; expected one of {CHANNELS}")
    space = space or ParameterSpace()
    if space.in_exclusion_box(mu.x_src, mu.z_src):
        raise DataError(
            f"source ({mu.x_src}, {mu.z_src}) lies inside the obstacle exclusion box"
        )
    if u_tau_ref is None:
        u_tau_ref = _cached_reference_velocity(space)

    conc, flux = _analytic_plume(mu, grid, space)
    if channel == "mean_concentration":
        values = conc * (u_tau_ref * OBSTACLE_HEIGHT**2 / SOURCE_RATE)
    else:
        values = flux * (OBSTACLE_HEIGHT**2 / SOURCE_RATE)

    if noise_amplitude > 0.0:
        noise = _noise_field(mu, grid, channel, window_fraction, seed, t_avg_periods)
        scale = noise_amplitude / math.sqrt(window_fraction * t_avg_periods)
        values = values + scale * np.abs(values) * noise

    return FieldSnapshot(
        values=values.ravel(),
        mu=mu,
        channel=channel,
        window_fraction=window_fraction,
    )


def generate_dataset(
    space: ParameterSpace,
    n: int,
    grid: Grid | None = None,
    channel: str = "mean_concentration",
    seed: int = 0,
    *,
    start_index: int = 1,
    noise_amplitude: float = DEFAULT_NOISE_AMPLITUDE,
    t_avg_periods: float = T_AVG_PERIODS,
) -> SnapshotSet:
    """Generate ``n`` full-window snapshots plus half-window companions.

    The normalization constant u_tau_ref is estimated once and recorded in
    the manifest together with everything needed to regenerate the set.
    """
    if n < 2:
        raise ConfigError("a dataset needs at least 2 snapshots")
    grid = grid or Grid()
    plan = design(space, n, start_index)
    u_tau_ref = reference_velocity(space, n_mc=100_000, seed=seed)

    snapshots = []
    half = []
    for sample in plan.samples:
        kwargs = dict(
            space=space,
            u_tau_ref=u_tau_ref,
            noise_amplitude=noise_amplitude,
            t_avg_periods=t_avg_periods,
        )
        snapshots.append(generate_field(sample, grid, channel, 1.0, seed, **kwargs))
        half.append(generate_field(sample, grid, channel, 0.5, seed, **kwargs))

    manifest = {
        "generator_version": GENERATOR_VERSION,
        "space": space.to_dict(),
        "seed": seed,
        "start_index": start_index,
        "n_requested": n,
        "n_skipped": plan.n_skipped,
        "u_tau_ref": u_tau_ref,
        "noise_amplitude": noise_amplitude,
        "t_avg_periods": t_avg_periods,
    }
    return SnapshotSet(grid=grid, snapshots=snapshots, half_window=half, manifest=manifest)
