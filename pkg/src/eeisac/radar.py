"""
OFDM radar processing: echo synthesis, receive beamforming with symbol
division, delay-Doppler maps, noise-variance prediction and CA-CFAR.

Grids are indexed ``[subcarrier, symbol]``; beamformed stacks add a leading
angle axis.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import AngleGrid, TargetScene, rx_steering, tx_steering
from .system_model import SystemConfig

_DIV_GUARD = 1e-9


def _seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


# ---------------------------------------------------------------------------
# waveform


def qam_symbols(rng, shape, order: int = 64) -> np.ndarray:
    """Square QAM symbols with unit average energy."""
    m = int(round(np.sqrt(order)))
    if m * m != order:
        raise ValueError("QAM order must be a perfect square")
    levels = np.arange(-(m - 1), m, 2, dtype=float)
    scale = np.sqrt(2.0 * np.mean(levels ** 2))
    i = rng.integers(0, m, size=shape)
    q = rng.integers(0, m, size=shape)
    return (levels[i] + 1j * levels[q]) / scale


def transmit_grid(F, symbols) -> np.ndarray:
    """``x[k, l] = F_k s[k, l]``, shape (n_sub, n_sym, n_tx)."""
    return np.einsum("ktc,klc->klt", np.asarray(getattr(F, "mats", F)), symbols)


def pulse_timing(cfg: SystemConfig):
    """Symbol period including cyclic prefix, delay and Doppler resolutions."""
    T = cfg.symbol_time + cfg.cp_time
    eps_d = 1.0 / (cfg.n_sub * cfg.subcarrier_spacing_hz)
    eps_D = 1.0 / (cfg.n_sym * T)
    return T, eps_d, eps_D


def target_bins(target, cfg: SystemConfig):
    """Nearest (delay, Doppler) bins of a target, Doppler wrapped to [0, n_sym)."""
    _, eps_d, eps_D = pulse_timing(cfg)
    kd = int(np.round(target.delay / eps_d)) % cfg.n_sub
    ld = int(np.round(target.doppler(cfg.carrier_hz) / eps_D)) % cfg.n_sym
    return kd, ld


def synthesize_rx(F, symbols, scene: TargetScene, cfg: SystemConfig, rng=None,
                  noise: bool = True) -> np.ndarray:
    """Received radar grid, shape (n_sub, n_sym, n_rx_sen)."""
    X = transmit_grid(F, symbols)
    T, _, _ = pulse_timing(cfg)
    k = np.arange(cfg.n_sub)
    l = np.arange(cfg.n_sym)
    y = np.zeros((cfg.n_sub, cfg.n_sym, cfg.n_rx_sen), dtype=complex)
    for t in scene:
        at = tx_steering(cfg, t.angle_rad)[:, 0]           # (n_sub, n_tx)
        ar = rx_steering(cfg, t.angle_rad)[:, 0]           # (n_sub, n_rx_sen)
        proj = np.einsum("kt,klt->kl", at.conj(), X)
        ph = (np.exp(-2j * np.pi * k * cfg.subcarrier_spacing_hz * t.delay)[:, None]
              * np.exp(2j * np.pi * t.doppler(cfg.carrier_hz) * l * T)[None, :])
        y += t.rcs_gain * (proj * ph)[:, :, None] * ar[:, None, :]
    if noise and cfg.noise_var_sen > 0:
        if rng is None:
            raise ValueError("noise requested without a random generator")
        s = np.sqrt(cfg.noise_var_sen / 2.0)
        y += s * (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape))
    return y


# ---------------------------------------------------------------------------
# per-angle processing


@dataclass(frozen=True)
class Division:
    """Symbol-divided grids for a stack of beamforming angles."""

    z: np.ndarray          # (n_ang, n_sub, n_sym)
    alpha: np.ndarray      # (n_ang,)
    proj: np.ndarray       # a_t^H x, (n_ang, n_sub, n_sym)
    valid: np.ndarray      # bool, (n_ang, n_sub, n_sym)
    ytil: np.ndarray       # beamformed grid before division


def beamform_and_divide(y, F, symbols, thetas, cfg: SystemConfig) -> Division:
    """Receive beamforming toward each angle followed by symbol division.

    Cells where ``|a_t^H x|`` falls below ``1e-9 ||x||`` are excluded and set
    to zero.
    """
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    X = transmit_grid(F, symbols)
    ar = rx_steering(cfg, thetas)                       # (n_sub, n_ang, n_rx)
    at = tx_steering(cfg, thetas)                       # (n_sub, n_ang, n_tx)
    ytil = np.einsum("kar,klr->akl", ar.conj(), y)
    proj = np.einsum("kat,klt->akl", at.conj(), X)
    xnorm = np.linalg.norm(X, axis=2)[None]
    valid = np.abs(proj) >= _DIV_GUARD * np.maximum(xnorm, 1e-300)
    safe = np.where(valid, proj, 1.0)
    ratio = np.where(valid, ytil / safe, 0.0)
    num = np.sum(np.abs(ratio) ** 2, axis=(1, 2))
    den = np.sum(np.where(valid, np.abs(ytil) ** 2, 0.0), axis=(1, 2))
    with np.errstate(invalid="ignore", divide="ignore"):
        alpha = np.where(den > 0, np.sqrt(num / np.where(den > 0, den, 1.0)), 1.0)
    alpha = np.where(alpha > 0, alpha, 1.0)
    z = ratio / alpha[:, None, None]
    return Division(z, alpha, proj, valid, ytil)


def rd_transform(z) -> np.ndarray:
    """Unitary inverse DFT over subcarriers and forward DFT over symbols."""
    z = np.asarray(z)
    return np.fft.fft(np.fft.ifft(z, axis=-2, norm="ortho"), axis=-1, norm="ortho")


def predict_rd_noise_var(proj, alpha, cfg: SystemConfig, valid=None) -> float:
    """Variance of the delay-Doppler noise for one angle.

    ``proj`` holds ``a_t^H x`` for every (subcarrier, symbol) cell, either
    realized or, for a precoder-only estimate, ``sqrt(B_k)`` broadcast over
    symbols.

    ``alpha`` is treated as a constant. When it is estimated from the same
    noise-only grid the prediction is biased upward.
    """
    p2 =np.abs(np.asarray(proj)) ** 2
    if valid is not None:
        p2 = p2[np.asarray(valid)]
    if np.any(p2 <= 0):
        raise ValueError("beam projection vanishes; division guard required")
    return float(cfg.n_rx_sen * cfg.noise_var_sen * np.sum(1.0 / p2)
                 / (alpha ** 2 * cfg.n_sub * cfg.n_sym))


def predict_rd_noise_var_from_precoder(F, theta, alpha, cfg: SystemConfig) -> float:
    """Precoder-only estimate replacing ``|a_t^H x|^2`` by the beam power."""
    at = tx_steering(cfg, theta)[:, 0]
    B = np.sum(np.abs(np.einsum("kt,ktc->kc", at.conj(), np.asarray(getattr(F, "mats", F)))) ** 2,
               axis=1)
    proj = np.repeat(np.sqrt(B)[:, None], cfg.n_sym, axis=1)
    return predict_rd_noise_var(proj, alpha, cfg)


@dataclass
class RDMap:
    values: np.ndarray
    angle: float
    predicted_noise_var: float
    alpha: float = 1.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("RD map entries must be finite")

    @property
    def power(self) -> np.ndarray:
        return np.abs(self.values) ** 2

    def save(self, stem) -> None:
        """Little-endian float64 grid (real, imag interleaved) plus JSON sidecar."""
        stem = Path(stem)
        v = np.ascontiguousarray(self.values, dtype="<c16")
        v.view("<f8").tofile(stem.with_suffix(".bin"))
        meta = {"n_sub": int(self.values.shape[0]), "n_sym": int(self.values.shape[1]),
                "layout": "row-major [delay, doppler], complex as (re, im) float64 LE",
                "angle_rad": float(self.angle), "alpha": float(self.alpha),
                "predicted_noise_var": float(self.predicted_noise_var)}
        stem.with_suffix(".json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def load(cls, stem) -> "RDMap":
        stem = Path(stem)
        meta = json.loads(stem.with_suffix(".json").read_text())
        raw = np.fromfile(stem.with_suffix(".bin"), dtype="<f8")
        vals = raw.view("<c16").reshape(meta["n_sub"], meta["n_sym"])
        return cls(vals, meta["angle_rad"], meta["predicted_noise_var"], meta["alpha"])


# ---------------------------------------------------------------------------
# CFAR


@dataclass(frozen=True)
class CFARConfig:
    """Cross-shaped CA-CFAR window with wrap-around."""

    n_train: int = 8
    n_guard: int = 2
    p_fa: float = 1e-2
    scale: float | None = None    # calibrated multiplier; closed form when None

    def __post_init__(self):
        if self.n_train < 0 or self.n_guard < 0:
            raise ValueError("window sizes must be nonnegative")
        if not 0 < self.p_fa < 1:
            raise ValueError("p_fa must lie in (0, 1)")
        if self.scale is not None and self.scale <= 0:
            raise ValueError("scale must be positive")

    def window(self, n_sub: int, n_sym: int):
        """Guard and training sizes per axis, clipped to fit the grid."""
        out = []
        for n in (n_sub, n_sym):
            g = min(self.n_guard, (n - 1) // 2)
            t = min(self.n_train, (n - 1 - 2 * g) // 2)
            out.append((g, t))
        return tuple(out)

    def n_cells(self, n_sub: int, n_sym: int) -> int:
        (_, td), (_, tD) = self.window(n_sub, n_sym)
        return 2 * (td + tD)

    def alpha(self, n_sub: int, n_sym: int) -> float:
        if self.scale is not None:
            return self.scale
        n = self.n_cells(n_sub, n_sym)
        if n == 0:
            raise ValueError("grid too small for any training cell")
        return cfar_scale(n, self.p_fa)


def cfar_scale(n_train_total: int, p_fa: float) -> float:
    """Threshold multiplier for exponential cell powers."""
    n = n_train_total
    return n * (p_fa ** (-1.0 / n) - 1.0)


def cfar_noise_level(power, cfar: CFARConfig) -> np.ndarray:
    """Mean training-cell power around every cell; works on stacked maps."""
    P = np.asarray(power, dtype=float)
    n_sub, n_sym = P.shape[-2:]
    (gd, td), (gD, tD) = cfar.window(n_sub, n_sym)
    acc = np.zeros_like(P)
    for off in range(gd + 1, gd + td + 1):
        acc += np.roll(P, off, axis=-2) + np.roll(P, -off, axis=-2)
    for off in range(gD + 1, gD + tD + 1):
        acc += np.roll(P, off, axis=-1) + np.roll(P, -off, axis=-1)
    return acc / (2 * (td + tD))


def ca_cfar_detect(rd, cfar: CFARConfig) -> np.ndarray:
    """Boolean detection map: cell power above the scaled local mean."""
    P = rd.power if isinstance(rd, RDMap) else np.abs(np.asarray(rd)) ** 2
    n_sub, n_sym = P.shape[-2:]
    thr = cfar.alpha(n_sub, n_sym) * cfar_noise_level(P, cfar)
    return (P > thr) & (thr > 0)


# ---------------------------------------------------------------------------
# full scene processing


@dataclass
class Detection:
    angle_index: int
    delay_bin: int
    doppler_bin: int
    power: float


@dataclass
class DetectionReport:
    detections: list = field(default_factory=list)
    hits: list = field(default_factory=list)
    false_alarms: int = 0
    noise_cells: int = 0


def dedup_detections(power, det) -> list:
    """Keep, for every (delay, Doppler) cell, the detecting angle of largest power."""
    P = np.where(det, power, -np.inf)
    best = np.argmax(P, axis=0)                       # first max: smaller angle index
    any_det = np.any(det, axis=0)
    out = []
    for kd, ld in zip(*np.nonzero(any_det)):
        a = int(best[kd, ld])
        out.append(Detection(a, int(kd), int(ld), float(power[a, kd, ld])))
    return out


def _circ_close(a, b, n):
    d = abs(a - b) % n
    return min(d, n - d) <= 1


def process_trial(F, scene: TargetScene, grid: AngleGrid, cfar: CFARConfig,
                  cfg: SystemConfig, rng, symbols=None) -> DetectionReport:
    """One Monte-Carlo realization of the sensing pipeline."""
    if symbols is None:
        symbols = qam_symbols(rng, (cfg.n_sub, cfg.n_sym, cfg.n_cols))
    y = synthesize_rx(F, symbols, scene, cfg, rng)
    div = beamform_and_divide(y, F, symbols, grid.angles, cfg)
    Z = rd_transform(div.z)
    P = np.abs(Z) ** 2
    det = ca_cfar_detect(Z, cfar)
    kept = dedup_detections(P, det)
    truth = [(grid.nearest(t.angle_rad),) + target_bins(t, cfg) for t in scene]
    hits = []
    for (ta, tk, tl) in truth:
        hits.append(any(abs(d.angle_index - ta) <= 1
                        and _circ_close(d.delay_bin, tk, cfg.n_sub)
                        and _circ_close(d.doppler_bin, tl, cfg.n_sym) for d in kept))
    # false alarms are counted per map, away from every target's RD neighborhood
    near = np.zeros((cfg.n_sub, cfg.n_sym), dtype=bool)
    for (_, tk, tl) in truth:
        for dk in (-1, 0, 1):
            for dl in (-1, 0, 1):
                near[(tk + dk) % cfg.n_sub, (tl + dl) % cfg.n_sym] = True
    fa = int(np.sum(det[:, ~near]))
    cells = int(det.shape[0] * np.sum(~near))
    return DetectionReport(kept, hits, fa, cells)


@dataclass
class SensingEstimate:
    p_d: float | None
    p_fa: float
    n_trials: int
    hits: int
    false_alarms: int
    noise_cells: int
    samples: list = field(default_factory=list)


def detect_scene(F, scene: TargetScene, grid: AngleGrid, cfar: CFARConfig,
                 cfg: SystemConfig, seed, n_trials: int, keep_reports: int = 0) -> SensingEstimate:
    """Monte-Carlo detection probability and false-alarm rate.

    Trial ``i`` draws symbols and noise from its own stream derived from
    ``seed``.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    if len(grid) == 0:
        raise ValueError("empty angle grid")
    F = np.asarray(getattr(F, "mats", F))
    if F.ndim == 2:
        raise ValueError("precoder must be (n_sub, n_tx, n_cols)")
    hits = fa = cells = 0
    samples = []
    ss = _seed_sequence(seed)
    for child in ss.spawn(n_trials):
        rng = np.random.default_rng(child)
        rep = process_trial(F, scene, grid, cfar, cfg, rng)
        hits += sum(rep.hits)
        fa += rep.false_alarms
        cells += rep.noise_cells
        if len(samples) < keep_reports:
            samples.append(rep)
    p_d = hits / (n_trials * len(scene)) if len(scene) else None
    return SensingEstimate(p_d, fa / max(cells, 1), n_trials, hits, fa, cells, samples)


def noise_only_statistics(F, theta, cfar: CFARConfig, cfg: SystemConfig, seed,
                          n_trials: int) -> np.ndarray:
    """CFAR test ratios ``|Z|^2 / local mean`` over noise-only maps.

    One beamforming angle per trial keeps the samples of different trials
    independent. Returns a flat array with one entry per RD cell.
    """
    F = np.asarray(getattr(F, "mats", F))
    ss = _seed_sequence(seed)
    out = np.empty((n_trials, cfg.n_sub * cfg.n_sym))
    empty = TargetScene(())
    for i, child in enumerate(ss.spawn(n_trials)):
        rng = np.random.default_rng(child)
        s = qam_symbols(rng, (cfg.n_sub, cfg.n_sym, cfg.n_cols))
        y = synthesize_rx(F, s, empty, cfg, rng)
        div = beamform_and_divide(y, F, s, [theta], cfg)
        P = np.abs(rd_transform(div.z[0])) ** 2
        out[i] = (P / cfar_noise_level(P, cfar)).ravel()
    return out.ravel()


def noise_only_fa(F, theta, cfar: CFARConfig, cfg: SystemConfig, seed, n_trials: int):
    """False alarms over noise-only maps; returns ``(false_alarms, cells)``."""
    r = noise_only_statistics(F, theta, cfar, cfg, seed, n_trials)
    return int(np.sum(r > cfar.alpha(cfg.n_sub, cfg.n_sym))), r.size


def calibrate_cfar(F, theta, cfar: CFARConfig, cfg: SystemConfig, seed,
                   n_trials: int) -> CFARConfig:
    """Threshold multiplier whose empirical noise-only exceedance equals ``p_fa``.

    Symbol division with non-constant-modulus symbols colors the RD noise, so
    the closed-form multiplier for white exponential cells is conservative.
    """
    r = noise_only_statistics(F, theta, cfar, cfg, seed, n_trials)
    scale = float(np.quantile(r, 1.0 - cfar.p_fa))
    return CFARConfig(cfar.n_train, cfar.n_guard, cfar.p_fa, scale)
