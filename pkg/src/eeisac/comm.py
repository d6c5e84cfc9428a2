"""
Spectral efficiency and the weighted-MMSE surrogate.

Channels are arrays of shape ``(n_sub, n_users, n_rx, n_tx)`` and precoders
``(n_sub, n_tx, n_users * n_streams)``. Rates are reported in bits/s/Hz and
averaged over subcarriers. The WMMSE surrogate is evaluated in nats and
converted to bits once at the end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, SolverError

LN2 = np.log(2.0)
_COND_LIMIT = 1e12
_JITTER = 1e-12


def _arr(x) -> np.ndarray:
    return np.asarray(getattr(x, "mats", getattr(x, "h", x)))


def _hermitize(A):
    return 0.5 * (A + np.swapaxes(A, -1, -2).conj())


def _herm_solve(A, B):
    """Solve ``A X = B`` for Hermitian positive definite (batched) ``A``."""
    A = _hermitize(A)
    n = A.shape[-1]
    try:
        np.linalg.cholesky(A)
        c = np.linalg.cond(A) if A.ndim == 2 else np.max(np.linalg.cond(A))
        ok = np.isfinite(c) and c < _COND_LIMIT
    except np.linalg.LinAlgError:
        ok = False
    if not ok:
        scale = np.real(np.trace(A, axis1=-2, axis2=-1))[..., None, None] / n
        A = A + _JITTER * np.maximum(scale, 1.0) * np.eye(n)
    return np.linalg.solve(A, B)


def _logdet_pd(A):
    A = _hermitize(A)
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise SolverError("matrix expected to be positive definite") from exc
    return 2.0 * np.sum(np.log(np.real(np.diagonal(L, axis1=-2, axis2=-1))), axis=-1)


def _split(H, F):
    H = _arr(H)
    F = _arr(F)
    if H.ndim != 4 or F.ndim != 3:
        raise DimensionError("H must be (n_sub, n_users, n_rx, n_tx), F (n_sub, n_tx, n_cols)")
    n_sub, n_users, _, n_tx = H.shape
    if F.shape[0] != n_sub or F.shape[1] != n_tx:
        raise DimensionError(f"precoder shape {F.shape} incompatible with channel {H.shape}")
    if F.shape[2] % n_users:
        raise DimensionError("precoder columns must split evenly among users")
    return H, F, F.shape[2] // n_users


def _user_cols(u, s):
    return slice(u * s, (u + 1) * s)


def _products(H, F, sigma2):
    """Return ``HF`` (n_sub, n_users, n_rx, n_cols) and total covariance ``T``."""
    HF = np.einsum("kurt,ktc->kurc", H, F)
    n_rx = H.shape[2]
    T = HF @ np.swapaxes(HF, -1, -2).conj() + sigma2 * np.eye(n_rx)
    return HF, T


def _signal_blocks(HF, s):
    n_users = HF.shape[1]
    return np.stack([HF[:, u, :, _user_cols(u, s)] for u in range(n_users)], axis=1)


def interference_covariance(H_ku, F_k, u, sigma2, n_streams=None):
    """Interference-plus-noise covariance of user ``u`` on one subcarrier."""
    H_ku = np.asarray(H_ku)
    F_k = np.asarray(F_k)
    if H_ku.shape[1] != F_k.shape[0]:
        raise DimensionError("channel columns must equal precoder rows")
    n_cols = F_k.shape[1]
    s = n_streams if n_streams is not None else n_cols
    if n_cols % s:
        raise DimensionError("columns not divisible by stream count")
    R = sigma2 * np.eye(H_ku.shape[0], dtype=complex)
    for i in range(n_cols // s):
        if i == u:
            continue
        G = H_ku @ F_k[:, _user_cols(i, s)]
        R = R + G @ G.conj().T
    return _hermitize(R)


def rate_terms(H, F, sigma2) -> np.ndarray:
    """Per-(subcarrier, user) rates in nats, shape (n_sub, n_users)."""
    H, F, s = _split(H, F)
    HF, T = _products(H, F, sigma2)
    S = _signal_blocks(HF, s)
    R_in = T - S @ np.swapaxes(S, -1, -2).conj()
    return _logdet_pd(T) - _logdet_pd(R_in)


def spectral_efficiency(H, F, sigma2) -> float:
    """Average over subcarriers of the multi-user sum rate (bits/s/Hz)."""
    if sigma2 <= 0:
        raise ValueError("noise variance must be positive")
    terms = rate_terms(H, F, sigma2)
    return float(max(np.sum(terms), 0.0) / (terms.shape[0] * LN2))


def mse_matrix(H_ku, F_k, U_ku, u, sigma2, n_streams=None):
    """MSE matrix ``E_{k,u}`` of user ``u`` for a given receive matrix ``U``."""
    H_ku = np.asarray(H_ku)
    F_k = np.asarray(F_k)
    U = np.asarray(U_ku)
    s = U.shape[1] if n_streams is None else n_streams
    if U.shape[0] != H_ku.shape[0] or H_ku.shape[1] != F_k.shape[0]:
        raise DimensionError("inconsistent H, F, U dimensions")
    HF = H_ku @ F_k
    T = HF @ HF.conj().T + sigma2 * np.eye(H_ku.shape[0])
    S = HF[:, _user_cols(u, s)]
    US = U.conj().T @ S
    E = np.eye(s) - US - US.conj().T + U.conj().T @ T @ U
    return _hermitize(E)


@dataclass(frozen=True)
class WmmseState:
    """Receivers ``u`` (n_sub, n_users, n_rx, n_streams) and weights ``w``
    (n_sub, n_users, n_streams, n_streams)."""

    u: np.ndarray
    w: np.ndarray


def optimal_receivers_and_weights(H, F, sigma2) -> WmmseState:
    """MMSE receivers and inverse-MSE weights for the current precoders."""
    if sigma2 <= 0:
        raise ValueError("noise variance must be positive")
    H, F, s = _split(H, F)
    HF, T = _products(H, F, sigma2)
    S = _signal_blocks(HF, s)
    U = _herm_solve(T, S)
    E = np.eye(s) - np.swapaxes(U, -1, -2).conj() @ S
    E = _hermitize(E)
    W = _hermitize(np.linalg.inv(E))
    return WmmseState(U, W)


def mse_matrices(H, F, state: WmmseState, sigma2) -> np.ndarray:
    H, F, s = _split(H, F)
    U = state.u
    if U.shape[:2] != H.shape[:2] or U.shape[2] != H.shape[2] or U.shape[3] != s:
        raise DimensionError("WMMSE state does not match channel/precoder")
    HF, T = _products(H, F, sigma2)
    S = _signal_blocks(HF, s)
    Uh = np.swapaxes(U, -1, -2).conj()
    US = Uh @ S
    E = np.eye(s) - US - np.swapaxes(US, -1, -2).conj() + Uh @ T @ U
    return _hermitize(E)


def surrogate_terms(H, F, state: WmmseState, sigma2) -> np.ndarray:
    """``ln|W| - tr(W E) + n_streams`` per (subcarrier, user), in nats."""
    E = mse_matrices(H, F, state, sigma2)
    W = state.w
    s = W.shape[-1]
    _, logdet = np.linalg.slogdet(W)
    tr = np.real(np.trace(W @ E, axis1=-2, axis2=-1))
    return logdet - tr + s


def wmmse_rate(F, state: WmmseState, H, sigma2) -> float:
    """Surrogate rate (bits/s/Hz) for fixed receivers and weights."""
    terms = surrogate_terms(H, F, state, sigma2)
    return float(np.sum(terms) / (terms.shape[0] * LN2))


def wmmse_quadratic(H, state: WmmseState, sigma2):
    """Coefficients of the surrogate as a quadratic in ``F``.

    Returns ``(const, B, Q)`` such that, summed over subcarriers and users,
    the nats surrogate equals
    ``const + 2 Re<B, F> - sum_k tr(F_k^H Q_k F_k)``
    with ``<B, F> = sum conj(B) * F``.
    """
    H = _arr(H)
    U, W = state.u, state.w
    s = W.shape[-1]
    n_sub, n_users = H.shape[:2]
    Hh = np.swapaxes(H, -1, -2).conj()
    HU = Hh @ U                                  # (k, u, t, s)
    HUW = HU @ W                                 # (k, u, t, s)
    Q = np.einsum("kuts,kuvs->ktv", HUW, HU.conj())
    Q = _hermitize(Q)
    B = np.concatenate([HUW[:, u] for u in range(n_users)], axis=2)
    _, logdet = np.linalg.slogdet(W)
    UhU = np.swapaxes(U, -1, -2).conj() @ U
    const = np.sum(logdet + s - np.real(np.trace(W, axis1=-2, axis2=-1))
                   - sigma2 * np.real(np.trace(W @ UhU, axis1=-2, axis2=-1)))
    return float(const), B, Q
