import numpy as np
import pytest
from scipy import optimize

from conftest import crandn
from eeisac.channel import ClusterParams, generate_channel, tx_steering
from eeisac.comm import optimal_receivers_and_weights, wmmse_quadratic
from eeisac.subproblem import SubproblemData, solve_subproblem
from eeisac.system_model import SystemConfig

CFG = SystemConfig(n_tx=8, n_rf=8, theta_targets=(np.deg2rad(27.0),))


def _instance(seed, mu=0.5, mode="qt", omegas=(1.0, 0.0), with_groups=True):
    r = np.random.default_rng(seed)
    H = generate_channel(CFG, ClusterParams(), seed).h
    a = tx_steering(CFG, CFG.theta_targets)[:, 0]
    F = 0.3 * crandn(r, 4, 8, 4)
    F[:, :, 0] += 0.5 * a / np.sqrt(8)
    F *= np.sqrt(5.0 / np.sum(np.abs(F) ** 2))
    s = optimal_receivers_and_weights(H, F, 1.0)
    c, B, Q = wmmse_quadratic(H, s, 1.0)
    G = np.stack([np.outer(a[k], a[k].conj() @ F[k]) for k in range(4)])
    Bref = np.array([np.sum(np.abs(F[k].conj().T @ a[k]) ** 2) for k in range(4)])
    p_th = 0.5 * Bref.min()
    d = SubproblemData(c, B, Q, p_tx=10.0, eta=1.0, p_const=0.2, mode=mode, mu=mu,
                       omega1=omegas[0], omega2=omegas[1],
                       beam_k=np.arange(4), beam_G=G, beam_rhs=p_th + Bref,
                       groups=np.arange(8)[:, None] if with_groups else None,
                       group_w=np.full(8, 0.3) if with_groups else None)
    return d, F


def _cvxpy_value(d):
    cp = pytest.importorskip("cvxpy")
    n_sub, n, c = d.quad_B.shape
    X = [cp.Variable((n, c), complex=True) for _ in range(n_sub)]
    lin = sum(2 * cp.real(cp.sum(cp.multiply(np.conj(d.quad_B[k]), X[k]))) for k in range(n_sub))
    L = [np.linalg.cholesky(d.quad_Q[k] + 1e-12 * np.eye(n)) for k in range(n_sub)]
    quad = sum(cp.sum_squares(L[k].conj().T @ X[k]) for k in range(n_sub))
    R = d.kappa * (d.quad_const + lin - quad)
    pw = sum(cp.sum_squares(X[k]) for k in range(n_sub))
    P = pw / d.eta + d.p_const
    if d.groups is not None:
        P = P + sum(d.group_w[i] * cp.norm(cp.hstack([cp.vec(X[k][i, :], order="F")
                                                      for k in range(n_sub)]), 2)
                    for i in range(n))
    obj = 2 * d.mu * cp.sqrt(R) - d.mu ** 2 * P if d.mode == "qt" else d.omega1 * R - d.omega2 * P
    cons = [pw <= d.p_tx]
    for j, k in enumerate(d.beam_k):
        cons.append(2 * cp.real(cp.sum(cp.multiply(np.conj(d.beam_G[j]), X[k]))) >= d.beam_rhs[j])
    prob = cp.Problem(cp.Maximize(obj), cons)
    prob.solve(solver=cp.CLARABEL)
    return prob.value


@pytest.mark.parametrize("seed,mode,omegas", [(1, "qt", None), (2, "qt", None),
                                              (3, "linear", (1.0, 0.2)),
                                              (6, "linear", (0.0, 1.0)),
                                              (7, "linear", (1.0, 0.0))])
def test_matches_conic_solver(seed, mode, omegas):
    d, F = _instance(seed, mode=mode, omegas=omegas or (1.0, 0.0))
    Fo, info = solve_subproblem(d, F)
    want = _cvxpy_value(d)
    assert info.status == "optimal"
    assert info.objective == pytest.approx(want, rel=1e-5, abs=1e-7)
    assert d.is_feasible(Fo)


def test_scalar_golden_section():
    c, b, q, mu, w, p_tx = 0.4, 0.9, 1.3, 0.35, 0.3, 4.0
    d = SubproblemData(c, np.full((1, 1, 1), b + 0j), np.full((1, 1, 1), q + 0j),
                       p_tx=p_tx, eta=1.0, p_const=0.2, mu=mu,
                       groups=np.zeros((1, 1), int), group_w=np.array([w]))

    def neg(f):
        r = d.kappa * (c + 2 * b * f - q * f * f)
        return -(2 * mu * np.sqrt(max(r, 0.0)) - mu ** 2 * (f * f + 0.2 + w * abs(f)))

    f_star = optimize.minimize_scalar(neg, bounds=(0, np.sqrt(p_tx)), method="bounded",
                                      options={"xatol": 1e-12}).x
    Fo, info = solve_subproblem(d, np.full((1, 1, 1), 0.5 + 0j))
    assert abs(Fo[0, 0, 0].imag) < 1e-6
    assert Fo[0, 0, 0].real == pytest.approx(f_star, rel=1e-5)
    assert info.objective == pytest.approx(-neg(f_star), rel=1e-9)


def test_power_dominated_regime():
    r = np.random.default_rng(4)
    n_sub, n, c = 2, 3, 2
    H = 1e-3 * crandn(r, n_sub, 1, 2, n)
    F0 = 0.1 * crandn(r, n_sub, n, c)
    s = optimal_receivers_and_weights(H, F0, 1.0)
    cst, B, Q = wmmse_quadratic(H, s, 1.0)
    d = SubproblemData(cst, B, Q, p_tx=10.0, eta=1.0, p_const=0.2, mu=1.0)
    Fo, info = solve_subproblem(d, F0)
    # the square root keeps a small nonzero precoder; the power term dominates
    assert np.sum(np.abs(Fo) ** 2) < 1e-2 * d.p_tx
    assert info.objective == pytest.approx(-d.p_const, rel=0.1)
    # smooth unconstrained oracle: the power ball is inactive and there are no groups
    def neg(v):
        F = (v[:v.size // 2] + 1j * v[v.size // 2:]).reshape(Fo.shape)
        return -d.objective(F) if d.surrogate_rate(F) > 0 else np.inf
    v0 = np.concatenate([Fo.real.ravel(), Fo.imag.ravel()])
    best = optimize.minimize(neg, v0, method="Nelder-Mead",
                             options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 20000})
    assert info.objective >= -best.fun - 1e-9


@pytest.mark.parametrize("seed", range(8))
def test_never_worse_than_reference(seed):
    d, F = _instance(10 + seed, mu=0.2 + 0.1 * seed)
    Fo, info = solve_subproblem(d, F)
    assert info.objective >= d.objective(F) - 1e-12
    assert d.is_feasible(Fo)


def test_infeasible_start_returns_reference():
    d, F = _instance(5)
    F_bad = 3 * F                          # violates the power ball
    Fo, info = solve_subproblem(d, F_bad)
    assert info.status == "infeasible-start"
    np.testing.assert_array_equal(Fo, F_bad)
