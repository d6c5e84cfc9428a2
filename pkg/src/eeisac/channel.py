"""Steering vectors, clustered wideband user channels and radar scenes."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .system_model import SystemConfig

SPEED_OF_LIGHT = 299_792_458.0


def steering_vector(freq_hz, theta_rad, n_elem, spacing_wavelengths=0.5,
                    carrier_hz=None):
    """Uniform linear array response.

    Entry ``n`` (zero based) is ``exp(-j 2 pi (f/f_c) n d sin(theta))`` with the
    spacing ``d`` in carrier wavelengths. ``carrier_hz`` defaults to
    ``freq_hz`` which yields the narrowband response.
    """
    if n_elem < 1:
        raise ValueError("n_elem must be >= 1")
    fc = freq_hz if carrier_hz is None else carrier_hz
    ratio = freq_hz / fc
    n = np.arange(n_elem)
    return np.exp(-2j * np.pi * ratio * n * spacing_wavelengths * np.sin(theta_rad))


def _ula_all(freqs, theta, n_elem, spacing, carrier_hz):
    n = np.arange(n_elem)
    return np.exp(-2j * np.pi * (np.asarray(freqs)[:, None] / carrier_hz)
                  * n[None, :] * spacing * np.sin(theta))


def tx_steering(cfg: SystemConfig, thetas, n_elem=None) -> np.ndarray:
    """Transmit steering vectors for every subcarrier, shape (n_sub, n_angles, n_elem)."""
    n_elem = cfg.n_tx if n_elem is None else n_elem
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    out = np.empty((cfg.n_sub, thetas.size, n_elem), dtype=complex)
    for k, f in enumerate(cfg.subcarrier_freqs):
        for a, th in enumerate(thetas):
            out[k, a] = steering_vector(f, th, n_elem, cfg.tx_spacing, cfg.carrier_hz)
    return out


def rx_steering(cfg: SystemConfig, thetas) -> np.ndarray:
    """Radar receive steering vectors, shape (n_sub, n_angles, n_rx_sen)."""
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    out = np.empty((cfg.n_sub, thetas.size, cfg.n_rx_sen), dtype=complex)
    for k, f in enumerate(cfg.subcarrier_freqs):
        for a, th in enumerate(thetas):
            out[k, a] = steering_vector(f, th, cfg.n_rx_sen, cfg.rx_spacing, cfg.carrier_hz)
    return out


def target_steering(cfg: SystemConfig) -> np.ndarray:
    return tx_steering(cfg, cfg.theta_targets)


# ---------------------------------------------------------------------------
# user channels


@dataclass(frozen=True)
class ClusterParams:
    """Clustered geometric channel parameters."""

    n_clusters: int = 3
    rays_per_cluster: int = 4
    angle_spread_rad: float = np.deg2rad(5.0)
    delay_spread_s: float = 50e-9
    fixed_gain: complex | None = None

    def __post_init__(self):
        if self.n_clusters < 1 or self.rays_per_cluster < 1:
            raise ValueError("cluster and ray counts must be >= 1")
        if self.angle_spread_rad < 0 or self.delay_spread_s < 0:
            raise ValueError("spreads must be nonnegative")


@dataclass(frozen=True)
class ChannelSet:
    """Per-subcarrier user channels; ``h`` has shape (n_sub, n_users, n_rx, n_tx)."""

    h: np.ndarray

    def __post_init__(self):
        h = np.array(self.h, dtype=complex, copy=True)
        if h.ndim != 4:
            raise ValueError("channel array must be (n_sub, n_users, n_rx, n_tx)")
        if not np.all(np.isfinite(h)):
            raise ValueError("channel entries must be finite")
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    def __getitem__(self, idx):
        return self.h[idx]

    @property
    def shape(self):
        return self.h.shape


def generate_channel(cfg: SystemConfig, cluster_params: ClusterParams, rng_seed,
                     n_tx: int | None = None) -> ChannelSet:
    """Draw a clustered wideband channel for every user.

    Each ray contributes ``g a_r(theta_rx) a_t(theta_tx)^H exp(-j 2 pi k df tau)``;
    the sum is scaled by ``1/sqrt(n_rays)`` so each entry has unit mean power.
    """
    p = cluster_params
    n_tx = cfg.n_tx if n_tx is None else n_tx
    rng = np.random.default_rng(rng_seed)
    n_rays = p.n_clusters * p.rays_per_cluster
    freqs = cfg.subcarrier_freqs
    k_off = cfg.subcarrier_spacing_hz * np.arange(cfg.n_sub)
    h = np.zeros((cfg.n_sub, cfg.n_users, cfg.n_rx, n_tx), dtype=complex)
    for u in range(cfg.n_users):
        c_tx = rng.uniform(-np.pi / 2, np.pi / 2, p.n_clusters)
        c_rx = rng.uniform(-np.pi / 2, np.pi / 2, p.n_clusters)
        c_tau = rng.uniform(0.0, p.delay_spread_s, p.n_clusters)
        for c in range(p.n_clusters):
            off_tx = rng.laplace(0.0, p.angle_spread_rad / np.sqrt(2), p.rays_per_cluster)
            off_rx = rng.laplace(0.0, p.angle_spread_rad / np.sqrt(2), p.rays_per_cluster)
            jitter = rng.uniform(0.0, 0.1 * p.delay_spread_s, p.rays_per_cluster)
            if p.fixed_gain is None:
                g = (rng.standard_normal(p.rays_per_cluster)
                     + 1j * rng.standard_normal(p.rays_per_cluster)) / np.sqrt(2)
            else:
                g = np.full(p.rays_per_cluster, complex(p.fixed_gain))
            for r in range(p.rays_per_cluster):
                th_t = np.clip(c_tx[c] + off_tx[r], -np.pi / 2, np.pi / 2)
                th_r = np.clip(c_rx[c] + off_rx[r], -np.pi / 2, np.pi / 2)
                tau = c_tau[c] + jitter[r]
                at = _ula_all(freqs, th_t, n_tx, cfg.tx_spacing, cfg.carrier_hz)
                ar = _ula_all(freqs, th_r, cfg.n_rx, cfg.rx_spacing, cfg.carrier_hz)
                ph = g[r] * np.exp(-2j * np.pi * k_off * tau)
                h[:, u] += ph[:, None, None] * ar[:, :, None] * at.conj()[:, None, :]
    h /= np.sqrt(n_rays)
    return ChannelSet(h)


# ---------------------------------------------------------------------------
# radar scene


def delay_of_range(range_m: float) -> float:
    """Monostatic round-trip delay."""
    if range_m < 0:
        raise ValueError("range must be nonnegative")
    return 2.0 * range_m / SPEED_OF_LIGHT


def doppler_of_velocity(v_mps: float, f_c: float) -> float:
    """Monostatic Doppler shift; positive velocity means approaching."""
    return 2.0 * v_mps * f_c / SPEED_OF_LIGHT


@dataclass(frozen=True)
class Target:
    angle_rad: float
    range_m: float
    velocity_mps: float
    rcs_gain: complex = 1.0

    def __post_init__(self):
        if abs(self.angle_rad) >= np.pi / 2:
            raise ValueError("target angle must satisfy |theta| < pi/2")
        if self.range_m < 0:
            raise ValueError("range must be nonnegative")

    @property
    def delay(self) -> float:
        return delay_of_range(self.range_m)

    def doppler(self, f_c: float) -> float:
        return doppler_of_velocity(self.velocity_mps, f_c)


@dataclass(frozen=True)
class TargetScene:
    targets: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))

    def __len__(self):
        return len(self.targets)

    def __iter__(self):
        return iter(self.targets)

    @property
    def angles(self) -> tuple:
        return tuple(t.angle_rad for t in self.targets)

    def check_delays(self, cfg: SystemConfig) -> None:
        """Delays must stay inside one symbol; exceeding the CP only warns."""
        for t in self.targets:
            if t.delay >= cfg.symbol_time:
                raise ValueError(f"target delay {t.delay:.3e}s exceeds the "
                                 "unambiguous delay range")
            if t.delay >= cfg.cp_time:
                warnings.warn(f"target delay {t.delay:.3e}s exceeds the cyclic "
                              f"prefix {cfg.cp_time:.3e}s", stacklevel=2)

    def with_gains(self, gains) -> "TargetScene":
        from dataclasses import replace
        return TargetScene(tuple(replace(t, rcs_gain=complex(g))
                                 for t, g in zip(self.targets, gains)))


def load_scene_json(path) -> TargetScene:
    """Load a JSON list of ``{angle_deg|angle_rad, range_m, velocity_mps[, rcs_re, rcs_im]}``."""
    items = json.loads(Path(path).read_text())
    targets = []
    for it in items:
        ang = it["angle_rad"] if "angle_rad" in it else np.deg2rad(it["angle_deg"])
        gain = complex(it.get("rcs_re", 1.0), it.get("rcs_im", 0.0))
        targets.append(Target(float(ang), float(it["range_m"]),
                              float(it["velocity_mps"]), gain))
    return TargetScene(tuple(targets))


@dataclass(frozen=True)
class AngleGrid:
    """Receive beamforming angles and the angle tolerance."""

    angles: np.ndarray
    tolerance: float

    def __post_init__(self):
        a = np.array(self.angles, dtype=float, copy=True).ravel()
        if a.size == 0:
            raise ValueError("angle grid is empty")
        if a.size > 1:
            if np.any(np.diff(a) <= 0):
                raise ValueError("angles must be strictly increasing")
            if np.max(np.diff(a)) > self.tolerance + 1e-12:
                raise ValueError("grid spacing exceeds the angle tolerance")
        a.setflags(write=False)
        object.__setattr__(self, "angles", a)

    @classmethod
    def uniform(cls, lo_deg: float, hi_deg: float, step_deg: float) -> "AngleGrid":
        n = int(round((hi_deg - lo_deg) / step_deg)) + 1
        ang = np.deg2rad(lo_deg + step_deg * np.arange(n))
        return cls(ang, np.deg2rad(step_deg))

    def __len__(self):
        return self.angles.size

    def nearest(self, theta: float) -> int:
        return int(np.argmin(np.abs(self.angles - theta)))
