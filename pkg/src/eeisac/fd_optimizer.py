"""
Energy-efficient fully-digital precoding with RF-chain selection.

The iterative design combines a quadratic transform of the EE ratio, the
WMMSE rate surrogate and successive convex approximation of the relaxed
RF-chain count ``sum_i tanh(lam ||F(i,:)||)`` and of the beam-power
constraints. All variants run in an "effective" antenna space: a subset of
rows of the physical array, or a transformed space for hybrid refinement.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import tx_steering
from .comm import (optimal_receivers_and_weights, spectral_efficiency,
                   wmmse_quadratic)
from .errors import ArchitectureError, InfeasibleError
from .subproblem import SubproblemData, solve_subproblem
from .system_model import (PrecoderSet, SelectionMask, SystemConfig,
                           beam_powers, row_norms)

log = logging.getLogger(__name__)

_INIT_MARGIN = 1e-3


@dataclass(frozen=True)
class OptimizerOptions:
    """Iteration caps, tolerances and the tanh annealing schedule."""

    lambda0: float = 1.0
    nu: float = 4.0
    r_inner: int = 20
    r_outer: int = 6
    tol_obj: float = 1e-4
    round_eps: float = 1e-2
    lambda_stop: float = 6.0
    sub_tol: float = 1e-7
    sub_max_newton: int = 400

    def __post_init__(self):
        if self.nu <= 1:
            raise ValueError("nu must exceed 1")
        if self.lambda0 <= 0:
            raise ValueError("lambda0 must be positive")
        for name in ("tol_obj", "round_eps", "sub_tol", "lambda_stop"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.r_inner < 1 or self.r_outer < 1 or self.sub_max_newton < 1:
            raise ValueError("iteration caps must be >= 1")


@dataclass
class OptimizerTrace:
    """Per-iteration records; ``segment`` identifies a fixed-lambda inner loop."""

    records: list = field(default_factory=list)

    def add(self, **rec):
        self.records.append(rec)

    def segments(self):
        out = {}
        for r in self.records:
            out.setdefault(r["segment"], []).append(r)
        return list(out.values())

    def to_jsonl(self, path) -> None:
        with open(Path(path), "w") as fh:
            for r in self.records:
                fh.write(json.dumps(_jsonable(r)) + "\n")

    def __len__(self):
        return len(self.records)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


@dataclass
class DesignResult:
    """Outcome of an optimizer run."""

    precoder: PrecoderSet
    mask: SelectionMask
    rate: float
    power: float
    trace: OptimizerTrace

    @property
    def ee(self) -> float:
        return self.rate / self.power


# ---------------------------------------------------------------------------
# building blocks


def optimal_mu(rate: float, approx_power: float) -> float:
    """Maximizer of ``2 mu sqrt(R) - mu^2 P`` over ``mu``."""
    if approx_power <= 0:
        raise ValueError("approximate power must be positive")
    return float(np.sqrt(max(rate, 0.0)) / approx_power)


def linearize_rf_count(norms, norms_ref, lam: float) -> float:
    """First-order expansion of ``sum tanh(lam * n)`` around ``norms_ref``."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    n = np.asarray(norms, dtype=float)
    r = np.asarray(norms_ref, dtype=float)
    th = np.tanh(lam * r)
    return float(np.sum(th + lam * (1.0 - th ** 2) * (n - r)))


def rf_count_weights(norms_ref, lam: float):
    """Constant and per-row slopes of the linearized relaxed count."""
    r = np.asarray(norms_ref, dtype=float)
    th = np.tanh(lam * r)
    w = lam * (1.0 - th ** 2)
    return float(np.sum(th - w * r)), w


def linearize_beam_power(F_k, F_k_ref, steering) -> float:
    """Affine minorant of ``||F_k^H a||^2`` at ``F_k_ref``."""
    F_k = np.asarray(F_k)
    F_r = np.asarray(F_k_ref)
    a = np.asarray(steering).ravel()
    if F_k.shape != F_r.shape or F_k.shape[0] != a.size:
        raise ValueError("inconsistent precoder/steering dimensions")
    p_ref = a.conj() @ F_r
    b_ref = float(np.sum(np.abs(p_ref) ** 2))
    delta = a.conj() @ (F_k - F_r)
    return b_ref + 2.0 * float(np.real(np.vdot(p_ref, delta)))


# ---------------------------------------------------------------------------
# design space


@dataclass
class DesignSpace:
    """Effective problem seen by the inner loop.

    ``power = ||F||^2 / eta + p_fixed + sum_g group_cost * relaxed(||F_g||)``
    where the relaxed term is present only when ``groups`` is given.
    """

    H: np.ndarray                 # (n_sub, n_users, n_rx, n)
    steer: np.ndarray             # (n_sub, n_angles, n)
    p_tx: float
    eta: float
    p_fixed: float
    sigma2: float
    p_th: float
    n_users: int
    n_streams: int
    groups: np.ndarray | None = None
    group_cost: float = 0.0

    @property
    def n(self) -> int:
        return self.H.shape[-1]

    @property
    def n_sub(self) -> int:
        return self.H.shape[0]

    @property
    def shape(self):
        return (self.n_sub, self.n, self.n_users * self.n_streams)

    def group_norms(self, F):
        rn2 = np.sum(np.abs(F) ** 2, axis=(0, 2))
        return np.sqrt(rn2[self.groups].sum(axis=1))

    def power(self, F, lam=None) -> float:
        p = np.sum(np.abs(F) ** 2) / self.eta + self.p_fixed
        if self.groups is not None:
            p += self.group_cost * np.sum(np.tanh(lam * self.group_norms(F)))
        return float(p)

    def rate(self, F) -> float:
        return spectral_efficiency(self.H, F, self.sigma2)

    def beam(self, F):
        return beam_powers(F, self.steer)


def _comm_directions(space: DesignSpace):
    """Unit-norm dominant right singular vectors for every (subcarrier, user)."""
    n_sub, n, C = space.shape
    s = space.n_streams
    F = np.zeros((n_sub, n, C), dtype=complex)
    for k in range(n_sub):
        for u in range(space.n_users):
            _, _, vh = np.linalg.svd(space.H[k, u])
            m = min(s, vh.shape[0])
            F[k, :, u * s:u * s + m] = vh[:m].conj().T
    return F


def _add_sensing(space: DesignSpace, F, target):
    """Add phase-aligned steering components until every beam power reaches ``target``."""
    F = F.copy()
    n_ang = space.steer.shape[1]
    C = F.shape[2]
    for _ in range(20):
        done = True
        for k in range(space.n_sub):
            for j in range(n_ang):
                a = space.steer[k, j]
                na = np.linalg.norm(a)
                if na == 0:
                    raise InfeasibleError("steering vector vanishes on the active rows")
                p = a.conj() @ F[k]
                total = np.sum(np.abs(p) ** 2)
                if total >= target * (1 - 1e-12):
                    continue
                done = False
                c = j % C
                rest = total - abs(p[c]) ** 2
                need = np.sqrt(max(target - rest, 0.0))
                beta = (need - abs(p[c])) / na
                phase = np.exp(1j * np.angle(p[c])) if abs(p[c]) > 0 else 1.0
                F[k, :, c] += beta * phase * a / na
        if done:
            return F
    return F


def initial_precoder(space: DesignSpace) -> np.ndarray:
    """Strictly feasible starting point.

    Communication directions are scaled down until the sensing additions
    fit in the power budget.
    """
    target = space.p_th * (1 + _INIT_MARGIN) if space.p_th > 0 else 0.0
    budget = space.p_tx * (1 - _INIT_MARGIN)
    comm = _comm_directions(space)
    cp = np.sum(np.abs(comm) ** 2)
    scales = [0.5 * budget / cp * 0.5 ** i for i in range(30)] + [0.0]
    for sc in scales:
        F = np.sqrt(sc) * comm
        if target > 0 and space.steer.shape[1]:
            F = _add_sensing(space, F, target)
            if np.any(space.beam(F) < target * (1 - 1e-9)):
                continue
        if np.sum(np.abs(F) ** 2) <= budget:
            return F
    raise InfeasibleError("no feasible initial precoder: beam-power floor "
                          "cannot be met within the transmit power budget")


def _subproblem(space: DesignSpace, F_ref, lam, mode, mu, omegas):
    st = optimal_receivers_and_weights(space.H, F_ref, space.sigma2)
    const, B, Q = wmmse_quadratic(space.H, st, space.sigma2)
    p_const = space.p_fixed
    groups = gw = None
    if space.groups is not None:
        c0, w = rf_count_weights(space.group_norms(F_ref), lam)
        p_const += space.group_cost * c0
        keep = w > 1e-10 * lam
        # saturated groups carry a negligible slope; fold them into the constant
        p_const += space.group_cost * float(np.sum(w[~keep] * space.group_norms(F_ref)[~keep]))
        if np.any(keep):
            groups = space.groups[keep]
            gw = space.group_cost * w[keep]
    beam_k, beam_G, beam_rhs = [], [], []
    if space.p_th > 0:
        for k in range(space.n_sub):
            for j in range(space.steer.shape[1]):
                a = space.steer[k, j]
                p = a.conj() @ F_ref[k]
                beam_k.append(k)
                beam_G.append(np.outer(a, p))
                beam_rhs.append(space.p_th + float(np.sum(np.abs(p) ** 2)))
    d = SubproblemData(
        quad_const=const, quad_B=B, quad_Q=Q, p_tx=space.p_tx, eta=space.eta,
        p_const=p_const, mode=mode, mu=mu,
        omega1=omegas[0], omega2=omegas[1],
        beam_k=np.asarray(beam_k, dtype=int),
        beam_G=np.asarray(beam_G) if beam_G else None,
        beam_rhs=np.asarray(beam_rhs, dtype=float),
        groups=groups, group_w=gw)
    return d


def _merit(space, F, lam, mode, omegas):
    """Quantity made monotone by the inner loop."""
    r = space.rate(F)
    p = space.power(F, lam)
    if mode == "qt":
        return r / p, r, p
    return omegas[0] * r - omegas[1] * p, r, p


def inner_loop(space: DesignSpace, F0, lam, options: OptimizerOptions, trace,
               segment, mode="qt", omegas=(1.0, 0.0)):
    """Alternate (mu, U, W) updates with convex subproblem solves at fixed ``lam``."""
    F = np.asarray(F0, dtype=complex)
    merit, rate, power = _merit(space, F, lam, mode, omegas)
    for it in range(options.r_inner):
        if mode == "qt":
            mu = optimal_mu(rate, power)
            sub_mode, sub_om = ("qt", omegas) if mu > 0 else ("linear", (0.0, 1.0))
        else:
            mu, sub_mode, sub_om = 0.0, "linear", omegas
        d = _subproblem(space, F, lam, sub_mode, mu, sub_om)
        F_new, info = solve_subproblem(d, F, tol=options.sub_tol,
                                       max_newton=options.sub_max_newton)
        new_merit, rate, power = _merit(space, F_new, lam, mode, omegas)
        beam = space.beam(F_new)
        trace.add(segment=segment, inner=it, lam=lam, mu=mu, merit=new_merit,
                  merit_prev=merit, sub_objective=info.objective,
                  sub_objective_ref=info.objective_ref, sub_status=info.status,
                  rate=rate, power=power,
                  row_norms=row_norms(F_new),
                  beam_slack=(beam - space.p_th).min() if beam.size else None,
                  power_slack=space.p_tx - float(np.sum(np.abs(F_new) ** 2)))
        improve = new_merit - merit
        scale = max(abs(merit), 1e-12)
        if mode == "qt" and mu == 0:
            # zero rate: the merit is flat, track the power-minimization progress
            improve = info.objective - info.objective_ref
            scale = max(abs(info.objective_ref), 1e-12)
        F = F_new
        merit = new_merit
        if improve <= options.tol_obj * scale:
            break
    return F


# ---------------------------------------------------------------------------
# spaces for the physical architectures


def _steering(cfg: SystemConfig):
    if cfg.theta_targets:
        return tx_steering(cfg, cfg.theta_targets)
    return np.zeros((cfg.n_sub, 0, cfg.n_tx), dtype=complex)


def _channel_array(H):
    return np.asarray(getattr(H, "h", H))


def _full_space(cfg: SystemConfig, H, rows, p_fixed, groups=None, group_cost=0.0):
    h = _channel_array(H)
    return DesignSpace(H=h[..., rows], steer=_steering(cfg)[..., rows],
                       p_tx=cfg.p_tx_w, eta=cfg.eta_pa, p_fixed=p_fixed,
                       sigma2=cfg.noise_var_comm, p_th=cfg.p_th,
                       n_users=cfg.n_users, n_streams=cfg.n_streams,
                       groups=groups, group_cost=group_cost)


def _embed(cfg, rows, F_eff):
    F = np.zeros((cfg.n_sub, cfg.n_tx, cfg.n_cols), dtype=complex)
    F[:, rows, :] = F_eff
    return F


def mask_rows(mask: SelectionMask, cfg: SystemConfig, power_model: str):
    """Physical antenna rows driven under ``mask`` and the fixed circuit power."""
    n = mask.count
    if n < 1:
        raise ValueError("mask must activate at least one RF chain")
    if power_model == "fd":
        if len(mask) != cfg.n_tx:
            raise ValueError("FD mask length must equal n_tx")
        return mask.indices, cfg.p_bb_w + cfg.p_rf_w * n
    if len(mask) != cfg.n_rf:
        raise ValueError("hybrid mask length must equal n_rf")
    if power_model == "fc":
        return np.arange(cfg.n_tx), cfg.p_bb_w + n * (cfg.p_rf_w + cfg.n_tx * cfg.p_ps_w)
    if power_model == "pc":
        g = cfg.group_size
        rows = (mask.indices[:, None] * g + np.arange(g)).ravel()
        return rows, cfg.p_bb_w + n * (cfg.p_rf_w + g * cfg.p_ps_w)
    raise ArchitectureError(f"unknown power model {power_model!r}")


def design_precoder_given_selection(mask: SelectionMask, cfg: SystemConfig, H,
                                    power_model: str = "fd",
                                    options: OptimizerOptions | None = None,
                                    F_init=None, mode="qt", omegas=(1.0, 0.0),
                                    trace: OptimizerTrace | None = None,
                                    segment=0) -> DesignResult:
    """Fixed-selection design with rows outside ``mask`` pinned to zero.

    Without ``F_init`` the result is a deterministic function of the mask.
    Raises ``InfeasibleError`` if the sensing floor cannot be met.
    """
    options = options or OptimizerOptions()
    trace = trace if trace is not None else OptimizerTrace()
    rows, p_fixed = mask_rows(mask, cfg, power_model)
    space = _full_space(cfg, H, rows, p_fixed)
    F0 = None
    if F_init is not None:
        cand = np.asarray(F_init, dtype=complex)[:, rows, :]
        beam = space.beam(cand)
        if (np.sum(np.abs(cand) ** 2) < space.p_tx
                and (space.p_th <= 0 or beam.size == 0 or np.all(beam > space.p_th))):
            F0 = cand
    if F0 is None:
        F0 = initial_precoder(space)
    F = inner_loop(space, F0, None, options, trace, segment, mode, omegas)
    rate = space.rate(F)
    power = space.power(F)
    return DesignResult(PrecoderSet(_embed(cfg, rows, F), cfg.n_users, cfg.n_streams),
                        mask, rate, power, trace)


# ---------------------------------------------------------------------------
# annealed selection


def _anneal(space: DesignSpace, options, trace, mode, omegas):
    F = initial_precoder(space)
    lam = options.lambda0
    for outer in range(options.r_outer):
        F = inner_loop(space, F, lam, options, trace, outer, mode, omegas)
        gn = space.group_norms(F)
        if gn.max() == 0:
            break
        active = gn >= options.round_eps * gn.max()
        if lam * gn[active].min() > options.lambda_stop:
            break
        lam *= options.nu
    return F


def _round(norms, eps):
    norms = np.asarray(norms)
    if norms.max() == 0:
        return np.zeros(norms.size, dtype=bool)
    return norms >= eps * norms.max()


def run_alg1(cfg: SystemConfig, H, options: OptimizerOptions | None = None,
             mode="qt", omegas=(1.0, 0.0)) -> DesignResult:
    """Joint precoding and RF-chain selection for the fully-digital array."""
    options = options or OptimizerOptions()
    trace = OptimizerTrace()
    groups = np.arange(cfg.n_tx)[:, None]
    space = _full_space(cfg, H, np.arange(cfg.n_tx), cfg.p_bb_w, groups, cfg.p_rf_w)
    F = _anneal(space, options, trace, mode, omegas)
    mask = SelectionMask(_round(row_norms(F), options.round_eps))
    return design_precoder_given_selection(mask, cfg, H, "fd", options, F_init=F,
                                           mode=mode, omegas=omegas, trace=trace,
                                           segment="repair")


def run_tradeoff(cfg: SystemConfig, H, omega1: float, omega2: float,
                 options: OptimizerOptions | None = None) -> DesignResult:
    """Maximize ``omega1 * R - omega2 * P`` with the same relaxation and rounding."""
    if omega1 < 0 or omega2 < 0 or omega1 == omega2 == 0:
        raise ValueError("weights must be nonnegative and not both zero")
    return run_alg1(cfg, H, options, mode="linear", omegas=(float(omega1), float(omega2)))


def pc_equivalent_fd(cfg: SystemConfig, H, options: OptimizerOptions | None = None) -> DesignResult:
    """Group-sparse fully-digital design matching the partially-connected power model."""
    options = options or OptimizerOptions()
    g = cfg.group_size
    trace = OptimizerTrace()
    groups = np.arange(cfg.n_tx).reshape(cfg.n_rf, g)
    space = _full_space(cfg, H, np.arange(cfg.n_tx), cfg.p_bb_w, groups,
                        cfg.p_rf_w + g * cfg.p_ps_w)
    F = _anneal(space, options, trace, "qt", (1.0, 0.0))
    mask = SelectionMask(_round(space.group_norms(F), options.round_eps))
    return design_precoder_given_selection(mask, cfg, H, "pc", options, F_init=F,
                                           trace=trace, segment="repair")


def solve_convex_subproblem(space: DesignSpace, F_ref, lam, mu,
                            options: OptimizerOptions | None = None):
    """One convexified QT subproblem around ``F_ref``; returns ``(F, info)``."""
    options = options or OptimizerOptions()
    d = _subproblem(space, np.asarray(F_ref, dtype=complex), lam, "qt", mu, (1.0, 0.0))
    return solve_subproblem(d, F_ref, tol=options.sub_tol, max_newton=options.sub_max_newton)


def fd_space(cfg: SystemConfig, H, relaxed=True) -> DesignSpace:
    """Design space over all rows with the per-row tanh relaxation."""
    groups = np.arange(cfg.n_tx)[:, None] if relaxed else None
    return _full_space(cfg, H, np.arange(cfg.n_tx), cfg.p_bb_w, groups,
                       cfg.p_rf_w if relaxed else 0.0)
