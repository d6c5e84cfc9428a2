"""
Scenario configuration, precoder containers and the power/EE models.

Precoders are stored as complex arrays of shape ``(n_sub, n_tx, n_cols)``
where ``n_cols = n_streams * n_users`` and the columns of subcarrier ``k``
hold the per-user blocks ``F[k, :, u*n_streams:(u+1)*n_streams]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ArchitectureError, DimensionError

ARCHITECTURES = ("fd", "fc", "pc")


@dataclass(frozen=True)
class SystemConfig:
    """All scenario constants. Powers in watts, angles in radians."""

    n_tx: int
    n_rf: int
    n_rx: int = 2
    n_rx_sen: int = 16
    n_users: int = 2
    n_streams: int = 2
    n_sub: int = 4
    n_sym: int = 16
    carrier_hz: float = 73e9
    subcarrier_spacing_hz: float = 240e3
    cp_len: int = 8
    tx_spacing: float = 0.5
    rx_spacing: float = 0.5
    p_tx_w: float = 10.0
    p_rf_w: float = 0.3
    p_bb_w: float = 0.2
    p_ps_w: float = 0.05
    eta_pa: float = 1.0
    noise_var_comm: float = 1.0
    noise_var_sen: float = 1.0
    p_th: float = 1.0
    theta_targets: tuple = ()
    p_fa: float = 1e-2
    architecture: str = "fd"

    def __post_init__(self):
        object.__setattr__(self, "theta_targets",
                           tuple(float(t) for t in self.theta_targets))
        for name in ("n_tx", "n_rf", "n_rx", "n_rx_sen", "n_users",
                     "n_streams", "n_sub", "n_sym"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("p_tx_w", "p_rf_w", "p_bb_w", "p_ps_w",
                     "noise_var_comm", "noise_var_sen", "p_th"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0 < self.eta_pa <= 1:
            raise ValueError("eta_pa must lie in (0, 1]")
        if not 0 < self.p_fa < 1:
            raise ValueError("p_fa must lie in (0, 1)")
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.architecture == "fd" and self.n_rf != self.n_tx:
            raise ValueError("fully-digital architecture needs n_rf == n_tx")
        if self.architecture == "pc" and self.n_tx % self.n_rf:
            raise ValueError("partially-connected architecture needs n_tx "
                             "divisible by n_rf")
        if any(abs(t) >= np.pi / 2 for t in self.theta_targets):
            raise ValueError("target angles must satisfy |theta| < pi/2")

    @property
    def n_cols(self) -> int:
        return self.n_streams * self.n_users

    @property
    def group_size(self) -> int:
        """Antennas per subarray in the partially-connected architecture."""
        if self.n_tx % self.n_rf:
            raise ArchitectureError("n_tx not divisible by n_rf")
        return self.n_tx // self.n_rf

    @property
    def subcarrier_freqs(self) -> np.ndarray:
        return self.carrier_hz + self.subcarrier_spacing_hz * np.arange(self.n_sub)

    @property
    def symbol_time(self) -> float:
        return 1.0 / self.subcarrier_spacing_hz

    @property
    def cp_time(self) -> float:
        return self.cp_len * self.symbol_time / self.n_sub

    def replace(self, **changes) -> "SystemConfig":
        from dataclasses import replace
        return replace(self, **changes)


def _mats(F) -> np.ndarray:
    return np.asarray(getattr(F, "mats", F))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PrecoderSet:
    """Fully-digital precoders ``F_k`` for every subcarrier."""

    mats: np.ndarray
    n_users: int
    n_streams: int

    def __post_init__(self):
        m = np.asarray(self.mats)
        if m.ndim != 3:
            raise DimensionError("precoder array must be (n_sub, n_tx, n_cols)")
        if m.shape[2] != self.n_users * self.n_streams:
            raise DimensionError(
                f"expected {self.n_users * self.n_streams} columns, got {m.shape[2]}")
        object.__setattr__(self, "mats", _readonly(m))

    @classmethod
    def for_config(cls, mats, cfg: SystemConfig) -> "PrecoderSet":
        F = cls(mats, cfg.n_users, cfg.n_streams)
        check_precoder(F, cfg)
        return F

    @property
    def n_sub(self) -> int:
        return self.mats.shape[0]

    @property
    def n_tx(self) -> int:
        return self.mats.shape[1]

    def user_block(self, k: int, u: int) -> np.ndarray:
        s = self.n_streams
        return self.mats[k, :, u * s:(u + 1) * s]

    def stacked(self) -> np.ndarray:
        """Horizontal concatenation ``[F_1 | ... | F_Nsub]``."""
        return stack_subcarriers(self.mats)

    def row_norms(self) -> np.ndarray:
        return row_norms(self.mats)


def stack_subcarriers(mats) -> np.ndarray:
    m = np.asarray(mats)
    return np.concatenate(list(m), axis=1)


def unstack_subcarriers(stacked, n_sub: int) -> np.ndarray:
    s = np.asarray(stacked)
    return np.stack(np.split(s, n_sub, axis=1))


def row_norms(F) -> np.ndarray:
    """Norm of each antenna row taken jointly over subcarriers and columns."""
    m = _mats(F)
    return np.sqrt(np.sum(np.abs(m) ** 2, axis=(0, 2)))


def group_norms(F, group_size: int) -> np.ndarray:
    """Frobenius norm of each block of ``group_size`` consecutive rows."""
    r2 = row_norms(F) ** 2
    return np.sqrt(r2.reshape(-1, group_size).sum(axis=1))


def check_precoder(F, cfg: SystemConfig, n_rows: int | None = None) -> None:
    m = _mats(F)
    want = (cfg.n_sub, cfg.n_tx if n_rows is None else n_rows, cfg.n_cols)
    if m.shape != want:
        raise DimensionError(f"precoder shape {m.shape} != expected {want}")


@dataclass(frozen=True)
class SelectionMask:
    """Diagonal of the RF-chain selection matrix."""

    active: np.ndarray

    def __post_init__(self):
        a = np.array(self.active, dtype=bool, copy=True).ravel()
        a.setflags(write=False)
        object.__setattr__(self, "active", a)

    @classmethod
    def all_on(cls, n: int) -> "SelectionMask":
        return cls(np.ones(n, dtype=bool))

    @classmethod
    def first(cls, n_active: int, n: int) -> "SelectionMask":
        return cls(np.arange(n) < n_active)

    @property
    def count(self) -> int:
        return int(self.active.sum())

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.active)

    def __len__(self):
        return self.active.size

    def key(self) -> tuple:
        return tuple(bool(b) for b in self.active)


@dataclass(frozen=True)
class HybridPrecoder:
    """Analog matrix, per-subcarrier digital matrices and RF-chain mask."""

    analog: np.ndarray
    digital: np.ndarray
    mask: SelectionMask
    architecture: str
    unit_tol: float = field(default=1e-9, compare=False)

    def __post_init__(self):
        A = _readonly(self.analog)
        D = _readonly(self.digital)
        object.__setattr__(self, "analog", A)
        object.__setattr__(self, "digital", D)
        if self.architecture not in ("fc", "pc"):
            raise ArchitectureError("hybrid architecture must be 'fc' or 'pc'")
        n_tx, n_rf = A.shape
        if D.ndim != 3 or D.shape[1] != n_rf:
            raise DimensionError("digital must be (n_sub, n_rf, n_cols)")
        if len(self.mask) != n_rf:
            raise DimensionError("mask length must equal n_rf")
        self.validate()

    def validate(self) -> None:
        A = self.analog
        n_tx, n_rf = A.shape
        act = self.mask.active
        tol = self.unit_tol
        if self.architecture == "fc":
            on = A[:, act]
            if on.size and not np.allclose(np.abs(on), 1.0, atol=tol):
                raise ArchitectureError("active FC analog entries must be unit modulus")
            if np.any(A[:, ~act] != 0):
                raise ArchitectureError("inactive FC analog columns must be zero")
        else:
            if n_tx % n_rf:
                raise ArchitectureError("n_tx not divisible by n_rf")
            g = n_tx // n_rf
            support = np.kron(np.eye(n_rf, dtype=bool), np.ones((g, 1), dtype=bool))
            if np.any(A[~support] != 0):
                raise ArchitectureError("PC analog matrix must be block diagonal")
            blocks = A[support].reshape(n_rf, g)
            mag = np.abs(blocks[act])
            if mag.size and not np.allclose(mag, 1.0, atol=tol):
                raise ArchitectureError("active PC analog entries must be unit modulus")
            if np.any(blocks[~act] != 0):
                raise ArchitectureError("inactive PC subarrays must be zero")
        if np.any(self.digital[:, ~act, :] != 0):
            raise ArchitectureError("digital rows of inactive RF chains must be zero")

    @property
    def n_rf(self) -> int:
        return self.analog.shape[1]

    def effective(self) -> np.ndarray:
        """``F_RF A F_BB,k`` for every subcarrier, shape (n_sub, n_tx, n_cols)."""
        A = self.analog * self.mask.active[None, :]
        return np.einsum("ij,kjc->kic", A, self.digital)

    def with_digital(self, digital) -> "HybridPrecoder":
        return HybridPrecoder(self.analog, digital, self.mask, self.architecture,
                              self.unit_tol)


# ---------------------------------------------------------------------------
# power models


def transmit_power(F) -> float:
    """Sum over subcarriers of ``||F_k||_F^2``."""
    return float(np.sum(np.abs(_mats(F)) ** 2))


def count_active_rows(F, threshold: float = 0.0) -> int:
    return int(np.sum(row_norms(F) > threshold))


def total_power_fd(F, cfg: SystemConfig, threshold: float = 0.0) -> float:
    """Transmit + baseband + per-active-row RF power (watts).

    A row is active when its norm is strictly above ``threshold``.
    """
    check_precoder(F, cfg)
    return (transmit_power(F) / cfg.eta_pa + cfg.p_bb_w
            + cfg.p_rf_w * count_active_rows(F, threshold))


def relaxed_rf_count(norms, lam: float) -> float:
    if lam <= 0:
        raise ValueError("lambda must be positive")
    return float(np.sum(np.tanh(lam * np.asarray(norms))))


def approx_total_power_fd(F, lam: float, cfg: SystemConfig) -> float:
    """Power model with the step function replaced by ``tanh(lam * ||row||)``."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    check_precoder(F, cfg)
    return (transmit_power(F) / cfg.eta_pa + cfg.p_bb_w
            + cfg.p_rf_w * relaxed_rf_count(row_norms(F), lam))


def total_power_fc(H: HybridPrecoder, cfg: SystemConfig) -> float:
    if H.architecture != "fc":
        raise ArchitectureError("total_power_fc needs an FC precoder")
    return (transmit_power(H.effective()) / cfg.eta_pa + cfg.p_bb_w
            + (cfg.p_rf_w + cfg.n_tx * cfg.p_ps_w) * H.mask.count)


def total_power_pc(H: HybridPrecoder, cfg: SystemConfig, threshold: float = 0.0) -> float:
    """PC power model; active subarrays are counted on the effective matrix."""
    if H.architecture != "pc":
        raise ArchitectureError("total_power_pc needs a PC precoder")
    g = cfg.group_size
    n_active = int(np.sum(group_norms(H.effective(), g) > threshold))
    return (g * transmit_power(H.digital) / cfg.eta_pa + cfg.p_bb_w
            + (cfg.p_rf_w + g * cfg.p_ps_w) * n_active)


def beam_power(F_k, steering) -> float:
    """``||F_k^H a||^2`` for one subcarrier matrix and one steering vector."""
    F_k = np.asarray(F_k)
    a = np.asarray(steering).ravel()
    if F_k.shape[0] != a.size:
        raise DimensionError("steering length must equal the precoder row count")
    return float(np.sum(np.abs(F_k.conj().T @ a) ** 2))


def beam_powers(F, steering) -> np.ndarray:
    """Beam power for every subcarrier and angle.

    ``steering`` has shape (n_sub, n_angles, n_tx); result is (n_sub, n_angles).
    """
    m = _mats(F)
    proj = np.einsum("kai,kic->kac", np.asarray(steering).conj(), m)
    return np.sum(np.abs(proj) ** 2, axis=2)


def energy_efficiency(rate: float, power: float) -> float:
    if power <= 0:
        raise ValueError("power must be positive")
    return rate / power


def as_precoder(F, cfg: SystemConfig | None = None, n_users: int | None = None,
                n_streams: int | None = None) -> PrecoderSet:
    if isinstance(F, PrecoderSet):
        return F
    if cfg is not None:
        return PrecoderSet(F, cfg.n_users, cfg.n_streams)
    return PrecoderSet(F, n_users, n_streams)


def masks_equal(a: SelectionMask, b: SelectionMask) -> bool:
    return a.key() == b.key()


def mask_from_sequence(bits: Sequence[int]) -> SelectionMask:
    return SelectionMask(np.asarray(bits, dtype=bool))
