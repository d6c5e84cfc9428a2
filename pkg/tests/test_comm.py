import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import crandn
from eeisac.comm import (LN2, WmmseState, interference_covariance, mse_matrix,
                         optimal_receivers_and_weights, rate_terms,
                         spectral_efficiency, surrogate_terms, wmmse_quadratic,
                         wmmse_rate)


def _instance(seed, n_sub=3, n_users=2, n_rx=2, n_tx=4, n_s=2, scale=1.0):
    r = np.random.default_rng(seed)
    return crandn(r, n_sub, n_users, n_rx, n_tx), scale * crandn(r, n_sub, n_tx, n_users * n_s)


def _se_oracle(H, F, sigma2, n_s):
    """Direct log-det of I + R_in^{-1} S S^H, subcarrier by subcarrier."""
    n_sub, n_users, n_rx, _ = H.shape
    tot = 0.0
    for k in range(n_sub):
        for u in range(n_users):
            R = sigma2 * np.eye(n_rx, dtype=complex)
            for i in range(n_users):
                if i != u:
                    G = H[k, u] @ F[k][:, i * n_s:(i + 1) * n_s]
                    R += G @ G.conj().T
            S = H[k, u] @ F[k][:, u * n_s:(u + 1) * n_s]
            M = np.eye(n_rx) + np.linalg.inv(R) @ S @ S.conj().T
            tot += np.log2(np.linalg.det(M).real)
    return tot / n_sub


class TestInterference:
    def test_single_user(self, rng):
        R = interference_covariance(crandn(rng, 2, 4), crandn(rng, 4, 2), 0, 0.7)
        np.testing.assert_allclose(R, 0.7 * np.eye(2))

    def test_zero_precoders(self, rng):
        R = interference_covariance(crandn(rng, 2, 4), np.zeros((4, 4)), 1, 1.0, n_streams=2)
        np.testing.assert_allclose(R, np.eye(2))

    def test_double_loop_oracle(self, rng):
        Hk, Fk = crandn(rng, 3, 5), crandn(rng, 5, 6)
        want = 0.3 * np.eye(3, dtype=complex)
        for i in (0, 2):
            for a in range(2):
                for b in range(2):
                    ha = Hk @ Fk[:, 2 * i + a]
                    if a == b:
                        want += np.outer(ha, ha.conj())
        R = interference_covariance(Hk, Fk, 1, 0.3, n_streams=2)
        np.testing.assert_allclose(R, want, atol=1e-12)
        assert np.all(np.linalg.eigvalsh(R) > 0)


class TestSpectralEfficiency:
    def test_scalar_one_bit(self):
        H = np.ones((1, 1, 1, 1), complex)
        F = np.full((1, 1, 1), np.exp(0.3j))
        assert spectral_efficiency(H, F, 1.0) == pytest.approx(1.0, abs=1e-14)

    def test_zero_precoder(self, rng):
        H, _ = _instance(1)
        assert spectral_efficiency(H, np.zeros((3, 4, 4)), 1.0) == 0.0

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_direct_logdet(self, seed):
        H, F = _instance(seed)
        assert spectral_efficiency(H, F, 0.5) == pytest.approx(_se_oracle(H, F, 0.5, 2), rel=1e-10)

    def test_rejects_zero_noise(self, rng):
        H, F = _instance(0)
        with pytest.raises(ValueError):
            spectral_efficiency(H, F, 0.0)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), g=st.floats(1.01, 10.0))
    def test_interference_growth_lowers_rate(self, seed, g):
        H, F = _instance(seed)
        F2 = F.copy()
        F2[:, :, 2:] *= g                       # user 1 louder
        before = rate_terms(H, F, 1.0)[:, 0]
        after = rate_terms(H, F2, 1.0)[:, 0]
        assert np.all(after <= before + 1e-10)


class TestWmmse:
    def test_zero_precoder_state(self, rng):
        H, _ = _instance(2)
        st_ = optimal_receivers_and_weights(H, np.zeros((3, 4, 4)), 1.0)
        np.testing.assert_allclose(st_.u, 0)
        np.testing.assert_allclose(st_.w, np.broadcast_to(np.eye(2), st_.w.shape))

    def test_scalar_closed_form(self):
        H = np.ones((1, 1, 1, 1), complex)
        F = np.ones((1, 1, 1), complex)
        s = optimal_receivers_and_weights(H, F, 1.0)
        E = mse_matrix(H[0, 0], F[0], s.u[0, 0], 0, 1.0)
        assert E[0, 0].real == pytest.approx(0.5)
        assert s.w[0, 0, 0, 0].real == pytest.approx(2.0)

    def test_mse_zero_receiver(self, rng):
        E = mse_matrix(crandn(rng, 2, 4), crandn(rng, 4, 4), np.zeros((2, 2)), 1, 1.0)
        np.testing.assert_allclose(E, np.eye(2))

    def test_mse_identity_at_optimum(self):
        H, F = _instance(3)
        s = optimal_receivers_and_weights(H, F, 0.8)
        for k in range(3):
            for u in range(2):
                U = s.u[k, u]
                E = mse_matrix(H[k, u], F[k], U, u, 0.8)
                want = np.eye(2) - U.conj().T @ H[k, u] @ F[k][:, 2 * u:2 * u + 2]
                np.testing.assert_allclose(E, want, atol=1e-12)

    def test_mse_hermitian_pd(self, rng):
        E = mse_matrix(crandn(rng, 2, 4), crandn(rng, 4, 4), crandn(rng, 2, 2), 0, 0.5)
        np.testing.assert_allclose(E, E.conj().T, atol=1e-12)
        assert np.all(np.linalg.eigvalsh(E) > 0)

    def test_surrogate_equals_per_term_rate(self):
        H, F = _instance(4)
        s = optimal_receivers_and_weights(H, F, 1.0)
        np.testing.assert_allclose(surrogate_terms(H, F, s, 1.0), rate_terms(H, F, 1.0),
                                   rtol=1e-10)

    def test_zero_state_surrogate(self, rng):
        H, _ = _instance(5)
        s = WmmseState(np.zeros((3, 2, 2, 2), complex),
                       np.broadcast_to(np.eye(2, dtype=complex), (3, 2, 2, 2)))
        assert wmmse_rate(np.zeros((3, 4, 4)), s, H, 1.0) == pytest.approx(0.0, abs=1e-14)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_suboptimal_state_is_lower_bound(self, seed):
        H, F = _instance(seed)
        r = np.random.default_rng(seed + 1)
        U = crandn(r, 3, 2, 2, 2)
        A = crandn(r, 3, 2, 2, 2)
        W = A @ np.swapaxes(A, -1, -2).conj() + 0.1 * np.eye(2)
        assert wmmse_rate(F, WmmseState(U, W), H, 1.0) <= spectral_efficiency(H, F, 1.0) + 1e-10

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_concave_in_precoder(self, seed):
        H, F0 = _instance(seed)
        r = np.random.default_rng(seed + 7)
        s = optimal_receivers_and_weights(H, F0, 1.0)
        F1, F2 = crandn(r, 3, 4, 4), crandn(r, 3, 4, 4)
        mid = wmmse_rate(0.5 * (F1 + F2), s, H, 1.0)
        assert mid >= 0.5 * (wmmse_rate(F1, s, H, 1.0) + wmmse_rate(F2, s, H, 1.0)) - 1e-10

    @pytest.mark.parametrize("seed", range(3))
    def test_quadratic_form_matches_surrogate(self, seed):
        H, F0 = _instance(seed)
        s = optimal_receivers_and_weights(H, F0, 0.9)
        const, B, Q = wmmse_quadratic(H, s, 0.9)
        F = crandn(np.random.default_rng(seed), 3, 4, 4)
        quad = const + 2 * np.real(np.vdot(B, F)) - sum(
            np.real(np.trace(F[k].conj().T @ Q[k] @ F[k])) for k in range(3))
        assert quad / (3 * LN2) == pytest.approx(wmmse_rate(F, s, H, 0.9), rel=1e-10)
