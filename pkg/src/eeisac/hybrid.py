"""
Factorization of fully-digital precoders into analog and digital parts.

Reference precoders are matched on their horizontal stack
``[F_1 | ... | F_Nsub]`` so that one frequency-flat analog matrix serves
every subcarrier. Block-coordinate descent alternates least-squares digital
updates with closed-form unit-modulus analog updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .comm import spectral_efficiency
from .errors import ArchitectureError, InfeasibleError
from .fd_optimizer import (DesignSpace, OptimizerOptions, OptimizerTrace,
                           _steering, initial_precoder, inner_loop,
                           mask_rows, pc_equivalent_fd)
from .system_model import (HybridPrecoder, SelectionMask, SystemConfig,
                           beam_powers, stack_subcarriers, total_power_fc,
                           total_power_pc, transmit_power, unstack_subcarriers)

_JITTER = 1e-12


@dataclass
class MatchResult:
    """Factorized precoder and the residual after every BCD update."""

    precoder: HybridPrecoder
    residuals: list = field(default_factory=list)
    rank_deficient: bool = False
    normalized: bool = False

    @property
    def residual(self) -> float:
        return self.residuals[-1]


def _unit_phase(v, prev=None):
    out = np.exp(1j * np.angle(v))
    zero = np.abs(v) == 0
    if np.any(zero):
        out[zero] = 1.0 if prev is None else np.asarray(prev)[zero]
    return out


def _residual(F_opt, F_rf, F_bb) -> float:
    return float(np.linalg.norm(F_opt - F_rf @ F_bb))


# ---------------------------------------------------------------------------
# fully connected


def fc_digital_ls(F_rf_active, F_opt, return_flag=False):
    """Least-squares digital matrix ``(F_RF^H F_RF)^-1 F_RF^H F_opt``."""
    F_rf = np.asarray(F_rf_active)
    G = F_rf.conj().T @ F_rf
    rhs = F_rf.conj().T @ np.asarray(F_opt)
    flagged = False
    try:
        L = np.linalg.cholesky(G)
        flagged = np.linalg.cond(G) > 1e12
    except np.linalg.LinAlgError:
        flagged = True
    if flagged:
        n = G.shape[0]
        G = G + _JITTER * max(np.real(np.trace(G)) / n, 1.0) * np.eye(n)
        L = np.linalg.cholesky(G)
    y = np.linalg.solve(L, rhs)
    X = np.linalg.solve(L.conj().T, y)
    return (X, flagged) if return_flag else X


def fc_analog_column_update(q, F_rf, F_bb, F_opt):
    """Unit-modulus column ``q`` minimizing the residual with other columns fixed."""
    F_rf = np.asarray(F_rf)
    F_bb = np.asarray(F_bb)
    if not 0 <= q < F_rf.shape[1]:
        raise IndexError("column index out of range")
    others = F_rf @ F_bb - np.outer(F_rf[:, q], F_bb[q])
    f_fix = (np.asarray(F_opt) - others) @ F_bb[q].conj()
    return _unit_phase(f_fix, F_rf[:, q])


def _init_fc_analog(F_opt, n):
    U, _, _ = np.linalg.svd(F_opt, full_matrices=False)
    A = np.ones((F_opt.shape[0], n), dtype=complex)
    m = min(n, U.shape[1])
    A[:, :m] = _unit_phase(U[:, :m], np.ones((F_opt.shape[0], m)))
    if n > m:
        # leftover columns: distinct DFT beams
        i = np.arange(F_opt.shape[0])[:, None]
        A[:, m:] = np.exp(2j * np.pi * i * np.arange(m, n)[None, :] / F_opt.shape[0])
    return A


def _fc_bcd(F_opt, A, n_active, tol, max_sweeps):
    D, flag = fc_digital_ls(A, F_opt, return_flag=True)
    res = [_residual(F_opt, A, D)]
    for _ in range(max_sweeps):
        start = res[-1]
        for q in range(n_active):
            A[:, q] = fc_analog_column_update(q, A, D, F_opt)
            res.append(_residual(F_opt, A, D))
        D, f = fc_digital_ls(A, F_opt, return_flag=True)
        flag |= f
        res.append(_residual(F_opt, A, D))
        if start - res[-1] <= tol * max(start, 1e-300):
            break
    return A, D, res, flag


def fc_match(F_opt, n_active, n_rf=None, n_sub=1, p_tx=None, tol=1e-4,
             max_sweeps=50, analog_init=None, restarts=8, seed=0) -> MatchResult:
    """Fully-connected factorization of the stacked reference ``F_opt``.

    Uses the first ``n_active`` of ``n_rf`` chains. The digital output is
    split back into ``n_sub`` per-subcarrier blocks.

    The block-coordinate descent starts from the singular-vector phases (or
    ``analog_init``) and from ``restarts`` random-phase matrices drawn with
    ``seed``; the run with the smallest final residual is kept, together with
    its residual history.
    """
    F_opt = np.asarray(F_opt, dtype=complex)
    n_tx = F_opt.shape[0]
    n_rf = n_active if n_rf is None else n_rf
    if not 1 <= n_active <= n_rf:
        raise ValueError("need 1 <= n_active <= n_rf")
    if F_opt.shape[1] % n_sub:
        raise ValueError("stacked width not divisible by n_sub")
    if restarts < 0:
        raise ValueError("restarts must be nonnegative")
    A0 = _init_fc_analog(F_opt, n_active) if analog_init is None else np.array(analog_init, dtype=complex)
    rng = np.random.default_rng(seed)
    starts = [A0] + [np.exp(2j * np.pi * rng.random((n_tx, n_active))) for _ in range(restarts)]
    best = None
    for A in starts:
        run = _fc_bcd(F_opt, A, n_active, tol, max_sweeps)
        if best is None or run[2][-1] < best[2][-1]:
            best = run
    A, D, res, flag = best
    analog = np.zeros((n_tx, n_rf), dtype=complex)
    analog[:, :n_active] = A
    digital = np.zeros((n_sub, n_rf, F_opt.shape[1] // n_sub), dtype=complex)
    digital[:, :n_active] = unstack_subcarriers(D, n_sub)
    hp = HybridPrecoder(analog, digital, SelectionMask.first(n_active, n_rf), "fc")
    out = MatchResult(hp, res, flag)
    if p_tx is not None:
        return _normalized(out, p_tx)
    return out


# ---------------------------------------------------------------------------
# partially connected


def pc_digital_row(f_rf_i, F_block):
    """Least-squares digital row for one subarray: ``f^H F_block / ||f||^2``."""
    f = np.asarray(f_rf_i).ravel()
    return (f.conj() @ np.asarray(F_block)) / np.real(np.vdot(f, f))


def pc_analog_update(F_block, f_bb_row, f_prev=None):
    """Unit-modulus subarray weights maximizing ``Re tr(F_block f_bb^H f^H)``."""
    v = np.asarray(F_block) @ np.asarray(f_bb_row).conj()
    return _unit_phase(v, f_prev)


def _pc_block(block, tol, max_sweeps):
    U, _, _ = np.linalg.svd(block, full_matrices=False)
    f = _unit_phase(U[:, 0], np.ones(block.shape[0]))
    row = pc_digital_row(f, block)
    res = [float(np.linalg.norm(block - np.outer(f, row)))]
    for _ in range(max_sweeps):
        start = res[-1]
        f = pc_analog_update(block, row, f)
        res.append(float(np.linalg.norm(block - np.outer(f, row))))
        row = pc_digital_row(f, block)
        res.append(float(np.linalg.norm(block - np.outer(f, row))))
        if start - res[-1] <= tol * max(start, 1e-300):
            break
    return f, row, res


def pc_match(F_opt, n_rf, n_sub=1, p_tx=None, tol=1e-4, max_sweeps=50) -> MatchResult:
    """Partially-connected factorization, one independent problem per subarray.

    Subarrays whose reference rows are all zero stay inactive.
    """
    F_opt = np.asarray(F_opt, dtype=complex)
    n_tx = F_opt.shape[0]
    if n_tx % n_rf:
        raise ArchitectureError("n_tx not divisible by n_rf")
    g = n_tx // n_rf
    analog = np.zeros((n_tx, n_rf), dtype=complex)
    rows = np.zeros((n_rf, F_opt.shape[1]), dtype=complex)
    active = np.zeros(n_rf, dtype=bool)
    block_res = []
    for i in range(n_rf):
        block = F_opt[i * g:(i + 1) * g]
        if not np.any(block):
            block_res.append([0.0])
            continue
        f, row, res = _pc_block(block, tol, max_sweeps)
        analog[i * g:(i + 1) * g, i] = f
        rows[i] = row
        active[i] = True
        block_res.append(res)
    # total residual as blocks are processed in turn
    cur = np.array([r[0] for r in block_res])
    history = []
    for i, r in enumerate(block_res):
        for v in r:
            cur[i] = v
            history.append(float(np.sqrt(np.sum(cur ** 2))))
    digital = unstack_subcarriers(rows, n_sub)
    hp = HybridPrecoder(analog, digital, SelectionMask(active), "pc")
    out = MatchResult(hp, history)
    if p_tx is not None:
        return _normalized(out, p_tx)
    return out


# ---------------------------------------------------------------------------
# power


def power_normalize(hp: HybridPrecoder, p_tx: float) -> HybridPrecoder:
    """Scale the digital part so the transmit power does not exceed ``p_tx``."""
    p = transmit_power(hp.effective())
    if p <= p_tx:
        return hp
    return hp.with_digital(hp.digital * np.sqrt(p_tx / p))


def _normalized(m: MatchResult, p_tx):
    hp = power_normalize(m.precoder, p_tx)
    return MatchResult(hp, m.residuals, m.rank_deficient, hp is not m.precoder)


def matching_error(hp: HybridPrecoder, F_opt_stacked) -> float:
    return float(np.linalg.norm(np.asarray(F_opt_stacked) - stack_subcarriers(hp.effective())))


# ---------------------------------------------------------------------------
# digital refinement with the analog part fixed


@dataclass
class HybridResult:
    precoder: HybridPrecoder
    rate: float
    power: float
    residual: float
    trace: OptimizerTrace

    @property
    def ee(self) -> float:
        return self.rate / self.power


def _inv_sqrt_psd(G):
    w, V = np.linalg.eigh(G)
    return (V / np.sqrt(w)) @ V.conj().T, (V * np.sqrt(w)) @ V.conj().T


def refine_digital(hp: HybridPrecoder, cfg: SystemConfig, H,
                   options: OptimizerOptions | None = None,
                   trace: OptimizerTrace | None = None) -> HybridPrecoder:
    """Re-optimize the digital part for EE with the analog part held fixed.

    The effective precoder is written as ``F_RF G^{-1/2} X`` with
    ``G = F_RF^H F_RF`` so that ``||F_RF F_BB||_F = ||X||_F`` and the
    inner loop applies unchanged. Restores the sensing floor when the
    factorization violates it.
    """
    options = options or OptimizerOptions()
    trace = trace if trace is not None else OptimizerTrace()
    act = hp.mask.indices
    A = hp.analog[:, act]
    G = A.conj().T @ A
    Gm, Gp = _inv_sqrt_psd(G)
    T = A @ Gm                                     # (n_tx, n_act), orthonormal columns
    h = np.asarray(getattr(H, "h", H))
    _, p_fixed = mask_rows(hp.mask, cfg, hp.architecture)
    space = DesignSpace(H=h @ T, steer=_steering(cfg) @ T.conj(),
                        p_tx=cfg.p_tx_w, eta=cfg.eta_pa, p_fixed=p_fixed,
                        sigma2=cfg.noise_var_comm, p_th=cfg.p_th,
                        n_users=cfg.n_users, n_streams=cfg.n_streams)
    X0 = np.einsum("ij,kjc->kic", Gp, hp.digital[:, act])
    beam = space.beam(X0)
    ok = (np.sum(np.abs(X0) ** 2) < space.p_tx
          and (space.p_th <= 0 or beam.size == 0 or np.all(beam > space.p_th)))
    if not ok:
        X0 = initial_precoder(space)
    X = inner_loop(space, X0, None, options, trace, "refine")
    digital = np.zeros_like(hp.digital)
    digital[:, act] = np.einsum("ij,kjc->kic", Gm, X)
    return hp.with_digital(digital)


def hybrid_metrics(hp: HybridPrecoder, cfg: SystemConfig, H):
    """Exact rate and power of a hybrid precoder."""
    h = np.asarray(getattr(H, "h", H))
    rate = spectral_efficiency(h, hp.effective(), cfg.noise_var_comm)
    if hp.architecture == "fc":
        power = total_power_fc(hp, cfg)
    else:
        power = total_power_pc(hp, cfg)
    return rate, power


def sensing_ok(hp: HybridPrecoder, cfg: SystemConfig, rel=1e-6) -> bool:
    if not cfg.theta_targets or cfg.p_th <= 0:
        return True
    b = beam_powers(hp.effective(), _steering(cfg))
    return bool(np.all(b >= cfg.p_th * (1 - rel)))


def design_pc_hybrid(cfg: SystemConfig, H, options: OptimizerOptions | None = None,
                     refine: bool = True) -> HybridResult:
    """Partially-connected design: group-sparse FD solution, factorization, refinement."""
    if cfg.architecture != "pc":
        raise ArchitectureError("design_pc_hybrid needs a partially-connected config")
    options = options or OptimizerOptions()
    fd = pc_equivalent_fd(cfg, H, options)
    F_opt = fd.precoder.stacked()
    m = pc_match(F_opt, cfg.n_rf, cfg.n_sub, p_tx=cfg.p_tx_w)
    hp = m.precoder
    if refine:
        hp = refine_digital(hp, cfg, H, options, fd.trace)
    if not sensing_ok(hp, cfg):
        raise InfeasibleError("factorized precoder violates the beam-power floor")
    rate, power = hybrid_metrics(hp, cfg, H)
    return HybridResult(hp, rate, power, m.residual, fd.trace)
