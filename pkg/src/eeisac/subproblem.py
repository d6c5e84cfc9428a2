"""
Log-barrier Newton solver for the convexified precoder subproblem.

The subproblem maximizes either

* ``2 mu sqrt(Rt(F)) - mu^2 Pt(F)``  (quadratic-transform form), or
* ``w1 Rt(F) - w2 Pt(F)``            (rate/power tradeoff form)

over ``F`` of shape (n_sub, n, n_cols) subject to affine beam-power
constraints ``2 Re<G_j, F_k> >= rhs_j`` and ``sum ||F_k||^2 <= p_tx``.
``Rt`` is the WMMSE surrogate (a concave quadratic in ``F``) and
``Pt(F) = ||F||^2 / eta + p_const + sum_g w_g ||F_g||`` where ``F_g`` are
groups of antenna rows taken across all subcarriers and columns.

Complex unknowns are handled through an interleaved real embedding with
entries ordered by (subcarrier, column, row).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .comm import LN2


@dataclass
class SubproblemData:
    """Convexified subproblem in an arbitrary effective antenna space."""

    quad_const: float
    quad_B: np.ndarray            # (n_sub, n, n_cols)
    quad_Q: np.ndarray            # (n_sub, n, n)
    p_tx: float
    eta: float
    p_const: float
    mode: str = "qt"              # "qt" or "linear"
    mu: float = 0.0
    omega1: float = 1.0
    omega2: float = 0.0
    beam_k: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    beam_G: np.ndarray | None = None   # (m, n, n_cols)
    beam_rhs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    groups: np.ndarray | None = None   # (n_groups, rows_per_group) row indices
    group_w: np.ndarray | None = None  # (n_groups,)

    @property
    def n_sub(self):
        return self.quad_B.shape[0]

    @property
    def kappa(self):
        return 1.0 / (self.n_sub * LN2)

    def surrogate_rate(self, F) -> float:
        """Surrogate rate in bits/s/Hz."""
        lin = 2.0 * np.sum(np.real(self.quad_B.conj() * F))
        quad = np.real(np.sum(F.conj() * (self.quad_Q @ F)))
        return self.kappa * (self.quad_const + lin - quad)

    def surrogate_power(self, F) -> float:
        p = np.sum(np.abs(F) ** 2) / self.eta + self.p_const
        if self.groups is not None and self.groups.size:
            rn2 = np.sum(np.abs(F) ** 2, axis=(0, 2))
            gn = np.sqrt(rn2[self.groups].sum(axis=1))
            p += float(np.dot(self.group_w, gn))
        return float(p)

    def objective(self, F) -> float:
        """Objective value (to be maximized) at ``F``."""
        r = self.surrogate_rate(F)
        p = self.surrogate_power(F)
        if self.mode == "qt":
            return 2.0 * self.mu * np.sqrt(max(r, 0.0)) - self.mu ** 2 * p
        return self.omega1 * r - self.omega2 * p

    def beam_slacks(self, F) -> np.ndarray:
        if self.beam_G is None or len(self.beam_k) == 0:
            return np.zeros(0)
        vals = 2.0 * np.sum(np.real(self.beam_G.conj() * F[self.beam_k]), axis=(1, 2))
        return vals - self.beam_rhs

    def is_feasible(self, F, strict=True) -> bool:
        s = self.beam_slacks(F)
        ball = self.p_tx - np.sum(np.abs(F) ** 2)
        if strict:
            return bool(np.all(s > 0) and ball > 0)
        return bool(np.all(s >= 0) and ball >= 0)


@dataclass
class SolveInfo:
    status: str
    newton_steps: int
    objective: float
    objective_ref: float
    gap: float


def _real_embed(Q):
    n = Q.shape[-1]
    R = np.empty((2 * n, 2 * n))
    R[0::2, 0::2] = Q.real
    R[0::2, 1::2] = -Q.imag
    R[1::2, 0::2] = Q.imag
    R[1::2, 1::2] = Q.real
    return R


def _to_real(F):
    return np.ascontiguousarray(np.transpose(F, (0, 2, 1))).reshape(-1).view(np.float64).copy()


def _from_real(x, shape):
    n_sub, n, c = shape
    z = x.view(np.complex128).reshape(n_sub, c, n)
    return np.ascontiguousarray(np.transpose(z, (0, 2, 1)))


class _Barrier:
    """Barrier objective over ``z = [x, t]``."""

    def __init__(self, d: SubproblemData, shape):
        self.d = d
        self.shape = shape
        n_sub, n, c = shape
        self.n = 2 * n_sub * n * c
        blocks = [np.kron(np.eye(c), _real_embed(d.quad_Q[k])) for k in range(n_sub)]
        self.Q = linalg.block_diag(*blocks)
        self.b = _to_real(d.quad_B)
        self.kappa = d.kappa
        m = len(d.beam_k)
        self.A = np.zeros((m, self.n))
        for j in range(m):
            G = np.zeros(shape, dtype=complex)
            G[d.beam_k[j]] = d.beam_G[j]
            self.A[j] = 2.0 * _to_real(G)
        self.rhs = np.asarray(d.beam_rhs, dtype=float)
        cost = d.mu ** 2 if d.mode == "qt" else d.omega2
        if d.groups is not None and d.groups.size and cost > 0 and np.any(d.group_w > 0):
            # real indices of each row group, ordered (k, c, row, part)
            ng, gs = d.groups.shape
            kk, cc = np.meshgrid(np.arange(n_sub), np.arange(c), indexing="ij")
            base = (kk * c + cc).ravel()[None, :, None] * n + d.groups[:, None, :]
            cidx = base.reshape(ng, -1)
            self.gidx = np.stack([2 * cidx, 2 * cidx + 1], axis=-1).reshape(ng, -1)
            self.w = np.asarray(d.group_w, dtype=float)
        else:
            self.gidx = np.zeros((0, 0), dtype=int)
            self.w = np.zeros(0)
        self.ng = self.gidx.shape[0]
        self.nz = self.n + self.ng
        self.m_total = m + 1 + 2 * self.ng

    # -- pieces -------------------------------------------------------------
    def rate(self, x):
        return self.kappa * (self.d.quad_const + 2.0 * self.b @ x - x @ (self.Q @ x))

    def f0(self, z):
        x, t = z[:self.n], z[self.n:]
        d = self.d
        pw = x @ x / d.eta + self.w @ t
        if d.mode == "qt":
            return -2.0 * d.mu * np.sqrt(self.rate(x)) + d.mu ** 2 * pw
        return -d.omega1 * self.rate(x) + d.omega2 * pw

    def magnitude(self, z):
        """Sum of the absolute objective terms; a cancellation-free scale."""
        x, t = z[:self.n], z[self.n:]
        d = self.d
        pw = x @ x / d.eta + self.w @ t
        r = abs(self.rate(x))
        if d.mode == "qt":
            return 2.0 * d.mu * np.sqrt(r) + d.mu ** 2 * pw
        return abs(d.omega1) * r + abs(d.omega2) * pw

    def domain(self, z):
        x, t = z[:self.n], z[self.n:]
        if self.A.shape[0] and np.any(self.A @ x - self.rhs <= 0):
            return False
        if self.d.p_tx - x @ x <= 0:
            return False
        if self.ng:
            xg2 = np.sum(x[self.gidx] ** 2, axis=1)
            if np.any(t <= 0) or np.any(t * t - xg2 <= 0):
                return False
        if self.d.mode == "qt" and self.d.mu > 0 and self.rate(x) <= 0:
            return False
        return True

    def max_step(self, z, dz):
        """Largest step keeping the affine, ball and cone slacks positive."""
        n = self.n
        x, t = z[:n], z[n:]
        dx, dt = dz[:n], dz[n:]
        smax = np.inf
        if self.A.shape[0]:
            s = self.A @ x - self.rhs
            ad = self.A @ dx
            neg = ad < 0
            if np.any(neg):
                smax = min(smax, np.min(-s[neg] / ad[neg]))
        a = dx @ dx
        if a > 0:
            b = x @ dx
            sb = self.d.p_tx - x @ x
            smax = min(smax, (-b + np.sqrt(b * b + a * sb)) / a)
        if self.ng:
            xg, dxg = x[self.gidx], dx[self.gidx]
            f = t * t - np.sum(xg ** 2, axis=1)
            qa = dt * dt - np.sum(dxg ** 2, axis=1)
            qb = t * dt - np.sum(xg * dxg, axis=1)
            with np.errstate(divide="ignore", invalid="ignore"):
                disc = qb * qb - qa * f
                sq = np.sqrt(np.maximum(disc, 0.0))
                r1 = np.where(qa != 0, (-qb - sq) / qa, np.where(qb < 0, -f / (2 * qb), np.inf))
                r2 = np.where(qa != 0, (-qb + sq) / qa, np.inf)
            roots = np.stack([r1, r2])
            roots = np.where((roots > 0) & (disc >= 0)[None, :], roots, np.inf)
            smax = min(smax, roots.min())
            neg = dt < 0
            if np.any(neg):
                smax = min(smax, np.min(-t[neg] / dt[neg]))
        return smax

    def value(self, z, tau):
        x, t = z[:self.n], z[self.n:]
        v = tau * self.f0(z)
        if self.A.shape[0]:
            v -= np.sum(np.log(self.A @ x - self.rhs))
        v -= np.log(self.d.p_tx - x @ x)
        if self.ng:
            xg2 = np.sum(x[self.gidx] ** 2, axis=1)
            v -= np.sum(np.log(t * t - xg2))
        return v

    def grad_hess(self, z, tau):
        d = self.d
        n = self.n
        x, t = z[:n], z[n:]
        g = np.zeros(self.nz)
        H = np.zeros((self.nz, self.nz))
        Hx = H[:n, :n]
        gx = g[:n]
        # objective
        grad_r = self.kappa * (2.0 * self.b - 2.0 * (self.Q @ x))
        if d.mode == "qt":
            if d.mu > 0:
                r = self.rate(x)
                sr = np.sqrt(r)
                gx += tau * (-d.mu * grad_r / sr)
                Hx += tau * (2.0 * d.mu * self.kappa / sr) * self.Q
                Hx += tau * (0.5 * d.mu / r ** 1.5) * np.outer(grad_r, grad_r)
            cp = d.mu ** 2
        else:
            gx += tau * (-d.omega1 * grad_r)
            Hx += tau * (2.0 * d.omega1 * self.kappa) * self.Q
            cp = d.omega2
        gx += tau * (2.0 * cp / d.eta) * x
        Hx[np.diag_indices(n)] += tau * 2.0 * cp / d.eta
        if self.ng:
            g[n:] += tau * cp * self.w
        # beam constraints
        if self.A.shape[0]:
            s = self.A @ x - self.rhs
            gx -= self.A.T @ (1.0 / s)
            As = self.A / s[:, None]
            Hx += As.T @ As
        # power ball
        sb = d.p_tx - x @ x
        gx += 2.0 * x / sb
        Hx[np.diag_indices(n)] += 2.0 / sb
        Hx += (4.0 / sb ** 2) * np.outer(x, x)
        # second-order cones
        if self.ng:
            xg = x[self.gidx]
            f = t * t - np.sum(xg ** 2, axis=1)
            np.add.at(gx, self.gidx, 2.0 * xg / f[:, None])
            g[n:] += -2.0 * t / f
            blk = 4.0 * xg[:, :, None] * xg[:, None, :] / (f ** 2)[:, None, None]
            ii = self.gidx
            H[ii[:, :, None], ii[:, None, :]] += blk
            H[ii, ii] += (2.0 / f)[:, None]
            tidx = n + np.arange(self.ng)
            cross = -4.0 * t[:, None] * xg / (f ** 2)[:, None]
            H[ii, tidx[:, None]] += cross
            H[tidx[:, None], ii] += cross
            H[tidx, tidx] += -2.0 / f + 4.0 * t * t / f ** 2
        return g, H


def _newton_direction(g, H):
    # symmetric diagonal scaling keeps cone-apex entries from swamping the rest
    dg = np.sqrt(np.maximum(np.diag(H), 1e-300))
    Hs = H / dg[:, None] / dg[None, :]
    gs = g / dg
    try:
        c = linalg.cho_factor(Hs, check_finite=False)
        return -linalg.cho_solve(c, gs, check_finite=False) / dg
    except linalg.LinAlgError:
        ridge = 1e-12 * max(1.0, np.max(np.abs(np.diag(Hs))))
        return -linalg.solve(Hs + ridge * np.eye(H.shape[0]), gs, assume_a="sym") / dg


def solve_subproblem(d: SubproblemData, F_ref, tol=1e-7, max_newton=400,
                     tau_factor=60.0):
    """Maximize the subproblem objective starting from ``F_ref``.

    ``F_ref`` must be strictly feasible. The returned precoder is strictly
    feasible and never has a lower objective than ``F_ref``.
    """
    F_ref = np.asarray(F_ref, dtype=complex)
    shape = F_ref.shape
    obj_ref = d.objective(F_ref)
    if not d.is_feasible(F_ref, strict=True):
        return F_ref.copy(), SolveInfo("infeasible-start", 0, obj_ref, obj_ref, np.inf)
    if d.mode == "qt" and d.mu <= 0:
        return F_ref.copy(), SolveInfo("degenerate", 0, obj_ref, obj_ref, 0.0)
    if d.mode == "qt" and d.surrogate_rate(F_ref) <= 0:
        return F_ref.copy(), SolveInfo("zero-rate", 0, obj_ref, obj_ref, np.inf)

    bar = _Barrier(d, shape)
    x0 = _to_real(F_ref)
    if bar.ng:
        xn = np.sqrt(np.sum(x0[bar.gidx] ** 2, axis=1))
        scale = np.sqrt(d.p_tx / bar.ng)
        t0 = 1.1 * xn + 1e-3 * scale
        z = np.concatenate([x0, t0])
    else:
        z = x0
    f_scale = max(bar.magnitude(z), 1e-12)
    gap_target = tol * f_scale
    tau_final = bar.m_total / gap_target
    tau = bar.m_total / f_scale
    # start where the current point is closest to central
    g_bar, _ = bar.grad_hess(z, 0.0)
    g_obj = bar.grad_hess(z, 1.0)[0] - g_bar
    nrm = g_obj @ g_obj
    if nrm > 0:
        tau_ls = -(g_obj @ g_bar) / nrm
        if np.isfinite(tau_ls):
            tau = min(max(tau, tau_ls), tau_final)
    steps = 0
    status = "optimal"
    while True:
        # centering
        for _ in range(60):
            g, H = bar.grad_hess(z, tau)
            dz = _newton_direction(g, H)
            lam2 = -g @ dz
            steps += 1
            if lam2 / 2.0 <= 1e-8 or not np.isfinite(lam2):
                break
            v0 = bar.value(z, tau)
            s = min(1.0, 0.99 * bar.max_step(z, dz))
            while True:
                zn = z + s * dz
                if bar.domain(zn):
                    vn = bar.value(zn, tau)
                    if vn <= v0 - 0.25 * s * lam2:
                        break
                s *= 0.5
                if s < 1e-14:
                    break
            if s < 1e-14:
                break
            z = zn
            if steps >= max_newton:
                break
        gap = bar.m_total / tau
        if gap <= gap_target:
            break
        if steps >= max_newton:
            status = "max-iter"
            break
        tau *= tau_factor
    F = _from_real(z[:bar.n].copy(), shape)
    obj = d.objective(F)
    if obj < obj_ref or not d.is_feasible(F, strict=True):
        return F_ref.copy(), SolveInfo("no-improvement", steps, obj_ref, obj_ref, gap)
    return F, SolveInfo(status, steps, obj, obj_ref, gap)
