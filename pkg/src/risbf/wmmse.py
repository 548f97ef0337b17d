"""Active beamforming core: WMMSE block updates and rate evaluation.

Conventions: ``h`` is the (K, M) stack of combined per-user channels,
``w`` is the (M, K) precoding matrix (column k serves user k). Rates are
reported in bits/s/Hz; the WMMSE surrogate objective uses natural log so
that lambda_k = exp(R_k * ln 2) at stationarity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


LAMBDA_IMAG_TOL = 1e-6


@dataclass
class BeamformerState:
    """The joint iterate: precoder, phase vector, auxiliaries and the
    lifted passive variable."""

    w: np.ndarray          # (M, K)
    theta: np.ndarray      # (N,) unit modulus when feasible
    u: np.ndarray          # (K,) complex receive gains
    lam: np.ndarray        # (K,) positive weights
    x: np.ndarray | None = None  # (N+1,) lifted vector


def rates(h: np.ndarray, w: np.ndarray, sigma2: np.ndarray) -> np.ndarray:
    """Per-user achievable rates log2(1 + SINR), shape (K,)."""
    gains = np.abs(h @ w) ** 2                      # gains[i, j] = |h_i w_j|^2
    sig = np.diagonal(gains)
    interf = gains.sum(axis=1) - sig
    return np.log2(1.0 + sig / (interf + sigma2))


def wsr(channels, w: np.ndarray, theta: np.ndarray) -> float:
    """Weighted sum rate for a full channel realization."""
    from .channel import combined_channel

    h = combined_channel(channels, theta)
    return float(channels.alpha @ rates(h, w, channels.sigma2))


def mse(u: np.ndarray, h: np.ndarray, w: np.ndarray, sigma2: np.ndarray,
        p_t: float) -> np.ndarray:
    """Equivalent per-user MSE e_k with the power-normalized noise term."""
    hw = h @ w                                       # (K, K)
    quad = np.abs(u) ** 2 * (np.abs(hw) ** 2).sum(axis=1)
    noise = (sigma2 / p_t) * np.abs(u) ** 2 * np.sum(np.abs(w) ** 2)
    cross = u.conj() * np.diagonal(hw)
    return 1.0 - 2.0 * cross.real + quad + noise


def p3_objective(alpha: np.ndarray, lam: np.ndarray, e: np.ndarray) -> float:
    """WMMSE surrogate objective sum_k alpha_k (lambda_k e_k - ln lambda_k)."""
    return float(np.sum(alpha * (lam * e - np.log(lam))))


def update_u(h: np.ndarray, w: np.ndarray, sigma2: np.ndarray,
             p_t: float) -> np.ndarray:
    """Closed-form receive gains."""
    hw = h @ w
    den = (np.abs(hw) ** 2).sum(axis=1) + (sigma2 / p_t) * np.sum(np.abs(w) ** 2)
    if np.any(den <= 0):
        raise ValueError("degenerate all-zero beamformers in update_u")
    return np.diagonal(hw) / den


def update_lambda(u: np.ndarray, h: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Closed-form MSE weights; real at exact arithmetic."""
    hw_k = np.einsum("km,mk->k", h, w)
    denom = 1.0 - u.conj() * hw_k
    if np.any(denom == 0):
        raise ValueError("singular lambda update: 1 - u* h w vanished")
    lam = 1.0 / denom
    if np.max(np.abs(lam.imag)) > LAMBDA_IMAG_TOL * max(1.0, np.max(np.abs(lam.real))):
        raise ValueError(f"lambda imaginary residual {np.max(np.abs(lam.imag)):g} too large")
    return lam.real


def update_w(u: np.ndarray, lam: np.ndarray, h: np.ndarray, alpha: np.ndarray,
             sigma2: np.ndarray, p_t: float) -> np.ndarray:
    """Closed-form precoder. The scalar sigma_i^2/P_T enters as a multiple
    of the identity."""
    m = h.shape[1]
    c = alpha * np.abs(u) ** 2 * lam
    mat = np.eye(m, dtype=complex) * np.sum(c * sigma2 / p_t)
    mat += (c[:, None] * h.conj()).T @ h
    try:
        sol = np.linalg.solve(mat, h.conj().T)      # (M, K)
    except np.linalg.LinAlgError as err:
        raise ValueError(
            f"singular precoder system (cond={np.linalg.cond(mat):.3e})") from err
    return sol * (alpha * u * lam)[None, :]


def scale_power(w: np.ndarray, p_t: float) -> np.ndarray:
    """Scale the precoder so the total transmit power equals P_T exactly."""
    total = np.sum(np.abs(w) ** 2)
    if total == 0:
        raise ValueError("cannot power-scale an all-zero precoder")
    return w * np.sqrt(p_t / total)


def zf_init(h: np.ndarray, p_t: float) -> np.ndarray:
    """Zero-forcing initialization with equal per-user power.

    Falls back to matched-filter columns when the stacked channel matrix is
    rank deficient (K > M or degenerate rows).
    """
    k, m = h.shape
    w = None
    if k <= m:
        gram = h @ h.conj().T
        try:
            w = h.conj().T @ np.linalg.inv(gram)
        except np.linalg.LinAlgError:
            w = None
    if w is None:
        w = h.conj().T.copy()
    norms = np.linalg.norm(w, axis=0)
    if np.any(norms == 0):
        raise ValueError("zero channel row in zf_init")
    return w / norms * np.sqrt(p_t / k)


def structured_w(p: np.ndarray, zeta: np.ndarray, h: np.ndarray,
                 sigma2: float, *, zeta_per_user: bool = False) -> np.ndarray:
    """Optimal-structure precoder: scaled, normalized regularized channel
    inversion. ``zeta_per_user`` toggles the alternative reading where the
    k-th precoder uses zeta_k inside the sum instead of zeta_i."""
    m = h.shape[1]
    if np.any(p <= 0) or np.any(zeta <= 0):
        raise ValueError("power parameters must be positive")
    if zeta_per_user:
        cols = []
        for k in range(h.shape[0]):
            mat = sigma2 * np.eye(m, dtype=complex) + zeta[k] * (h.conj().T @ h)
            cols.append(np.linalg.solve(mat, h[k].conj()))
        dirs = np.stack(cols, axis=1)
    else:
        mat = sigma2 * np.eye(m, dtype=complex) + (zeta[:, None] * h.conj()).T @ h
        dirs = np.linalg.solve(mat, h.conj().T)
    dirs = dirs / np.linalg.norm(dirs, axis=0)
    return dirs * np.sqrt(p)[None, :]
