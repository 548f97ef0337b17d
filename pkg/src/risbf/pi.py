"""Passive beamforming core: quadratic-form assembly, the power-iteration
solver for the unimodular quadratic program, convergence certificates, and
phase quantization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels


MONOTONE_TOL = 1e-9


@dataclass(frozen=True)
class QuadraticForm:
    """Quadratic data of the passive subproblem.

    ``a`` is Hermitian PSD (N x N), ``beta`` the linear term, ``b`` the
    lifted (N+1) x (N+1) Hermitian matrix and ``r = b + gamma * I`` the
    diagonally loaded, positive-definite iteration matrix. ``gamma`` is the
    Frobenius norm of ``b``, which dominates its spectral radius.
    """

    a: np.ndarray
    beta: np.ndarray
    b: np.ndarray
    gamma: float
    r: np.ndarray


@dataclass(frozen=True)
class PiCertificate:
    """Convergence evidence for one power-iteration run."""

    monotone: bool
    max_violation: float          # largest relative objective decrease seen
    stationarity_residual: float  # ||R x - abs(R x) o x||_inf
    objective: float
    upper_bound: float            # sum_ij |R_ij|; objective never exceeds it
    bound_ok: bool


def lift_b(a: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Assemble the lifted matrix: top-left -A, borders -beta, zero corner."""
    n = a.shape[0]
    b = np.zeros((n + 1, n + 1), dtype=complex)
    b[:n, :n] = -a
    b[:n, n] = -beta
    b[n, :n] = -beta.conj()
    return b


def build_quadratic(channels, w: np.ndarray, u: np.ndarray,
                    lam: np.ndarray) -> QuadraticForm:
    """Assemble the passive-subproblem quadratic from the current active
    beamforming iterate."""
    n = channels.h_cascade.shape[1]
    c = channels.alpha * lam * np.abs(u) ** 2
    a = np.zeros((n, n), dtype=complex)
    beta = np.zeros(n, dtype=complex)
    for k in range(channels.alpha.size):
        pk = channels.h_cascade[k] @ w                    # (N, K)
        a += c[k] * (pk @ pk.conj().T)
        beta += -channels.alpha[k] * lam[k] * u[k].conj() * pk[:, k]
        beta += c[k] * (pk @ (w.conj().T @ channels.h_d[k].conj()))
    a = 0.5 * (a + a.conj().T)  # kill roundoff asymmetry
    b = lift_b(a, beta)
    gamma = float(np.linalg.norm(b))
    return QuadraticForm(a=a, beta=beta, b=b, gamma=gamma,
                         r=b + gamma * np.eye(n + 1))


def pi_step(x: np.ndarray, r: np.ndarray) -> np.ndarray:
    """One power-iteration step x -> phase(R x); ties keep the old phase."""
    return kernels.pi_step_kernel(np.ascontiguousarray(x),
                                  np.ascontiguousarray(r))


def pi_solve(quad: QuadraticForm, x0: np.ndarray, max_iter: int = 200,
             tol: float = 1e-8) -> tuple[np.ndarray, int, PiCertificate]:
    """Iterate the power method on ``quad.r`` until the objective settles.

    Raises if the objective trace decreases beyond the monotonicity
    tolerance, which would signal a non-PD matrix or a broken tie rule.
    """
    return _pi_solve_r(quad.r, x0, max_iter, tol)


def _pi_solve_r(r: np.ndarray, x0: np.ndarray, max_iter: int,
                tol: float) -> tuple[np.ndarray, int, PiCertificate]:
    x, iters, trace = kernels.pi_iterate(
        np.ascontiguousarray(r, dtype=complex),
        np.ascontiguousarray(x0, dtype=complex), max_iter, tol)

    diffs = trace[:-1] - trace[1:]                       # positive = decrease
    scale = np.maximum(1.0, np.abs(trace[:-1]))
    max_violation = float(np.max(diffs / scale, initial=0.0))
    monotone = max_violation <= MONOTONE_TOL
    if not monotone:
        raise RuntimeError(
            f"power iteration objective decreased by {max_violation:g} "
            "(relative); R is not positive definite or the tie rule is broken")

    rx = r @ x
    residual = float(np.max(np.abs(rx - np.abs(rx) * x)))
    bound = float(np.sum(np.abs(r)))
    cert = PiCertificate(
        monotone=monotone,
        max_violation=max_violation,
        stationarity_residual=residual,
        objective=float(trace[-1]),
        upper_bound=bound,
        bound_ok=bool(np.all(trace <= bound * (1.0 + 1e-12))),
    )
    return x, iters, cert


def extract_theta(x: np.ndarray) -> np.ndarray:
    """Fold the lifted solution back to the phase vector: conjugate of the
    last entry times the first N entries. Invariant to a global phase."""
    return x[-1].conj() * x[:-1]


def lift_theta(theta: np.ndarray) -> np.ndarray:
    """Embed theta as [theta; 1] so x^H B x reproduces the P4 objective."""
    return np.concatenate([theta, [1.0 + 0.0j]])


def quantize_hard(theta: np.ndarray, b_bits: int) -> np.ndarray:
    """Map each phase to the nearest grid point {0, d, ..., (2^B - 1) d},
    d = 2 pi / 2^B, with wrap-around distance; ties go to the smaller grid
    phase."""
    if b_bits < 1:
        raise ValueError("b_bits must be >= 1")
    levels = 2 ** b_bits
    grid = 2.0 * np.pi * np.arange(levels) / levels
    phases = np.mod(np.angle(theta), 2.0 * np.pi)
    diff = np.abs(phases[:, None] - grid[None, :])
    dist = np.minimum(diff, 2.0 * np.pi - diff)
    idx = np.argmin(dist, axis=1)  # argmin favors the smaller phase on ties
    return np.exp(1j * grid[idx])


def quantize_soft(phases: np.ndarray, b_bits: int, eta: float) -> np.ndarray:
    """Smooth floor-style staircase approximating the hard phase grid.

    Q(phi) = (pi / 2^B) * sum_l [tanh(eta * (phi - 2 pi l / 2^B)) + 1];
    differentiable everywhere, approaching the exact staircase as eta grows.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    levels = 2 ** b_bits
    thresholds = 2.0 * np.pi * np.arange(1, levels + 1) / levels
    terms = np.tanh(eta * (phases[..., None] - thresholds)) + 1.0
    return (np.pi / levels) * terms.sum(axis=-1)
