"""Algorithm orchestration: the alternating WMMSE + power-iteration solver,
its unfolded learned variants, the two-timescale imperfect-CSI variant, and
evaluation helpers."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import pi, wmmse
from .channel import (ChannelSet, LosComponents, combined_channel,
                      corrupt_channels, sample_channels)
from .config import SystemConfig
from .wmmse import BeamformerState


@dataclass
class SolveReport:
    final_state: BeamformerState
    wsr: float
    wsr_trace: list[float] = field(default_factory=list)
    inner_iterations: list[int] = field(default_factory=list)
    wall_time: float = 0.0


def random_theta(n: int, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. phases uniform on [0, 2 pi)."""
    return np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, size=n))


def _active_update(channels, theta, u, lam, p_t):
    """Closed-form precoder update on the current combined channel,
    power-scaled to the full budget."""
    h = combined_channel(channels, theta)
    w = wmmse.update_w(u, lam, h, channels.alpha, channels.sigma2, p_t)
    return wmmse.scale_power(w, p_t)


def wmmse_pi(channels: ChannelSet, config: SystemConfig, i_o: int,
             rng: np.random.Generator | None = None,
             inner_max: int = 200, inner_tol: float = 1e-8) -> SolveReport:
    """Alternating WMMSE + power-iteration joint beamforming.

    The passive vector is refined to inner convergence every outer
    iteration; quantization (if configured) happens once at the end,
    followed by a final active-beamforming sweep.
    """
    rng = np.random.default_rng() if rng is None else rng
    p_t = config.p_t
    n = channels.h_cascade.shape[1]
    t0 = time.perf_counter()

    theta = random_theta(n, rng)
    h = combined_channel(channels, theta)
    w = wmmse.zf_init(h, p_t)
    u = wmmse.update_u(h, w, channels.sigma2, p_t)
    lam = wmmse.update_lambda(u, h, w)
    w = wmmse.update_w(u, lam, h, channels.alpha, channels.sigma2, p_t)

    trace: list[float] = []
    inner: list[int] = []
    x = pi.lift_theta(theta)
    for _ in range(i_o):
        h = combined_channel(channels, theta)
        u = wmmse.update_u(h, w, channels.sigma2, p_t)
        lam = wmmse.update_lambda(u, h, w)
        if n > 0:
            quad = pi.build_quadratic(channels, w, u, lam)
            x, iters, _ = pi.pi_solve(quad, pi.lift_theta(theta),
                                      max_iter=inner_max, tol=inner_tol)
            theta = pi.extract_theta(x)
            inner.append(iters)
        w = _active_update(channels, theta, u, lam, p_t)
        trace.append(wmmse.wsr(channels, w, theta))

    if config.phase_bits is not None and n > 0:
        theta = pi.quantize_hard(theta, config.phase_bits)
    h = combined_channel(channels, theta)
    u = wmmse.update_u(h, w, channels.sigma2, p_t)
    lam = wmmse.update_lambda(u, h, w)
    w = _active_update(channels, theta, u, lam, p_t)

    state = BeamformerState(w=w, theta=theta, u=u, lam=lam, x=x)
    return SolveReport(final_state=state, wsr=wmmse.wsr(channels, w, theta),
                       wsr_trace=trace, inner_iterations=inner,
                       wall_time=time.perf_counter() - t0)


def learned_pi_step(channels, w, u, lam, theta, gamma: float) -> np.ndarray:
    """One power-iteration step on the Frobenius-normalized lifted matrix
    with learned diagonal loading ``gamma``."""
    quad = pi.build_quadratic(channels, w, u, lam)
    bnorm = np.linalg.norm(quad.b)
    if bnorm == 0.0:
        return theta
    r = quad.b / bnorm + gamma * np.eye(quad.b.shape[0])
    x = pi.pi_step(pi.lift_theta(theta), r)
    return pi.extract_theta(x)


def _quantize_final(theta: np.ndarray, config: SystemConfig, training: bool,
                    eta: float) -> np.ndarray:
    if config.phase_bits is None or theta.size == 0:
        return theta
    if training:
        phases = np.mod(np.angle(theta), 2.0 * np.pi)
        return np.exp(1j * pi.quantize_soft(phases, config.phase_bits, eta))
    return pi.quantize_hard(theta, config.phase_bits)


def wmmse_pinet_forward(channels: ChannelSet, params, config: SystemConfig,
                        i_o: int | None = None, mode: str = "pinet-plus",
                        rng: np.random.Generator | None = None,
                        training: bool = False, eta: float = 100.0) -> SolveReport:
    """Forward pass of the unfolded solvers.

    ``mode="pinet"``: classic flow, but every passive update is a single
    power-iteration step with learned loading and there is no GNN
    initialization. ``mode="pinet-plus"``: adds the learned initialization
    step for theta and the GNN-produced structured precoder.
    """
    from .learn import gnn_features, gnn_forward

    if mode not in ("pinet", "pinet-plus"):
        raise ValueError(f"unknown mode {mode!r}")
    rng = np.random.default_rng() if rng is None else rng
    i_o = params.i_o if i_o is None else i_o
    if i_o > params.i_o:
        raise ValueError(f"params trained for I_O={params.i_o}, requested {i_o}")
    p_t = config.p_t
    n = channels.h_cascade.shape[1]
    t0 = time.perf_counter()
    gammas = params.gammas

    theta = random_theta(n, rng)
    h = combined_channel(channels, theta)
    w = wmmse.zf_init(h, p_t)
    u = wmmse.update_u(h, w, channels.sigma2, p_t)
    lam = wmmse.update_lambda(u, h, w)
    w = wmmse.update_w(u, lam, h, channels.alpha, channels.sigma2, p_t)

    if mode == "pinet-plus":
        if n > 0:
            theta = learned_pi_step(channels, w, u, lam, theta, gammas[0])
        feats = gnn_features(channels, theta, u, lam, config)
        p, zeta = gnn_forward(params.gnn, feats, p_t)
        h = combined_channel(channels, theta)
        w = wmmse.structured_w(p, zeta, h, float(channels.sigma2[0]))

    trace: list[float] = []
    for i in range(1, i_o + 1):
        h = combined_channel(channels, theta)
        u = wmmse.update_u(h, w, channels.sigma2, p_t)
        lam = wmmse.update_lambda(u, h, w)
        if n > 0:
            theta = learned_pi_step(channels, w, u, lam, theta, gammas[i])
        w = _active_update(channels, theta, u, lam, p_t)
        trace.append(wmmse.wsr(channels, w, theta))

    theta = _quantize_final(theta, config, training, eta)
    h = combined_channel(channels, theta)
    u = wmmse.update_u(h, w, channels.sigma2, p_t)
    lam = wmmse.update_lambda(u, h, w)
    w = _active_update(channels, theta, u, lam, p_t)

    state = BeamformerState(w=w, theta=theta, u=u, lam=lam, x=pi.lift_theta(theta))
    return SolveReport(final_state=state, wsr=wmmse.wsr(channels, w, theta),
                       wsr_trace=trace, inner_iterations=[1] * len(trace),
                       wall_time=time.perf_counter() - t0)


def wmmse_pinet_imcsi(channel_stream, params, config: SystemConfig,
                      i_o: int | None = None,
                      rng: np.random.Generator | None = None,
                      training: bool = False, eta: float = 100.0) -> np.ndarray:
    """Two-timescale passive beamforming from a stream of estimated
    channels (I_O + 1 groups). Returns the long-term phase vector."""
    from .learn import gnn_features, gnn_forward

    rng = np.random.default_rng() if rng is None else rng
    i_o = params.i_o if i_o is None else i_o
    p_t = config.p_t
    stream = iter(channel_stream)
    try:
        est0 = next(stream)
    except StopIteration:
        raise ValueError("empty channel stream") from None
    n = est0.h_cascade.shape[1]
    gammas = params.gammas
    rhos, deltas = params.rhos, params.deltas
    if rhos is None or deltas is None:
        raise ValueError("params lack the two-timescale recursion variables")

    theta = random_theta(n, rng)
    h = combined_channel(est0, theta)
    w = wmmse.zf_init(h, p_t)
    u = wmmse.update_u(h, w, est0.sigma2, p_t)
    lam = wmmse.update_lambda(u, h, w)
    w = wmmse.update_w(u, lam, h, est0.alpha, est0.sigma2, p_t)
    if n > 0:
        theta = learned_pi_step(est0, w, u, lam, theta, gammas[0])
    feats = gnn_features(est0, theta, u, lam, config)
    p, zeta = gnn_forward(params.gnn, feats, p_t)
    h = combined_channel(est0, theta)
    w = wmmse.structured_w(p, zeta, h, float(est0.sigma2[0]))

    b_tilde = np.zeros((n + 1, n + 1), dtype=complex)
    for i in range(1, i_o + 1):
        est = next(stream)
        h = combined_channel(est, theta)
        u = wmmse.update_u(h, w, est.sigma2, p_t)
        lam = wmmse.update_lambda(u, h, w)
        w = _active_update(est, theta, u, lam, p_t)
        quad = pi.build_quadratic(est, w, u, lam)
        b_tilde = (1.0 - rhos[i - 1]) * b_tilde + rhos[i - 1] * quad.b
        bnorm = np.linalg.norm(b_tilde)
        if n > 0 and bnorm > 0.0:
            r = b_tilde / bnorm + gammas[i] * np.eye(n + 1)
            theta_bar = pi.extract_theta(pi.pi_step(pi.lift_theta(theta), r))
            mixed = (1.0 - deltas[i - 1]) * theta + deltas[i - 1] * theta_bar
            # project back to unit modulus; zero entries get phase 0
            mags = np.abs(mixed)
            theta = np.where(mags > 0, mixed / np.where(mags > 0, mags, 1.0), 1.0)

    return _quantize_final(theta, config, training, eta)


def avg_wsr(theta: np.ndarray, los: LosComponents, config: SystemConfig,
            n_samples: int, rng: np.random.Generator,
            wmmse_sweeps: int = 20, tol: float = 1e-6) -> float:
    """Average WSR of a fixed phase vector over fresh true channel draws;
    the precoder is re-optimized per draw with a short WMMSE run."""
    p_t = config.p_t
    total = 0.0
    for _ in range(n_samples):
        cs = sample_channels(los, config, rng)
        h = combined_channel(cs, theta)
        w = wmmse.zf_init(h, p_t)
        prev = wmmse.wsr(cs, w, theta)
        for _ in range(wmmse_sweeps):
            u = wmmse.update_u(h, w, cs.sigma2, p_t)
            lam = wmmse.update_lambda(u, h, w)
            w = wmmse.scale_power(
                wmmse.update_w(u, lam, h, cs.alpha, cs.sigma2, p_t), p_t)
            cur = wmmse.wsr(cs, w, theta)
            if abs(cur - prev) <= tol * max(1.0, abs(prev)):
                prev = cur
                break
            prev = cur
        total += prev
    return total / n_samples


def avg_wsr_estimated(theta: np.ndarray, los: LosComponents,
                      config: SystemConfig, varrho: float, n_samples: int,
                      rng: np.random.Generator, wmmse_sweeps: int = 20,
                      tol: float = 1e-6) -> float:
    """Average WSR of a fixed phase vector under imperfect channel
    estimation: each frame's precoder is optimized on an estimate with
    normalized error ``varrho`` and the rate is realized on the true
    channel the estimate came from. With ``varrho = 0`` this coincides
    with :func:`avg_wsr`; for ``varrho > 0`` the estimate/true mismatch
    makes the average genuinely decrease with the error level (the
    estimate alone is equidistributed with a true draw, so optimizing and
    scoring on the same realization would erase the effect of varrho)."""
    p_t = config.p_t
    total = 0.0
    for _ in range(n_samples):
        cs_true = sample_channels(los, config, rng)
        cs_est = corrupt_channels(cs_true, varrho, rng)
        h = combined_channel(cs_est, theta)
        w = wmmse.zf_init(h, p_t)
        prev = wmmse.wsr(cs_est, w, theta)
        for _ in range(wmmse_sweeps):
            u = wmmse.update_u(h, w, cs_est.sigma2, p_t)
            lam = wmmse.update_lambda(u, h, w)
            w = wmmse.scale_power(
                wmmse.update_w(u, lam, h, cs_est.alpha, cs_est.sigma2, p_t),
                p_t)
            cur = wmmse.wsr(cs_est, w, theta)
            if abs(cur - prev) <= tol * max(1.0, abs(prev)):
                break
            prev = cur
        total += wmmse.wsr(cs_true, w, theta)
    return total / n_samples


def random_phase_baseline(channels: ChannelSet, config: SystemConfig,
                          rng: np.random.Generator,
                          wmmse_sweeps: int = 50) -> SolveReport:
    """Control baseline: uniform random phases, precoder via plain WMMSE."""
    p_t = config.p_t
    n = channels.h_cascade.shape[1]
    t0 = time.perf_counter()
    theta = random_theta(n, rng)
    if config.phase_bits is not None and n > 0:
        theta = pi.quantize_hard(theta, config.phase_bits)
    h = combined_channel(channels, theta)
    w = wmmse.zf_init(h, p_t)
    u = wmmse.update_u(h, w, channels.sigma2, p_t)
    lam = wmmse.update_lambda(u, h, w)
    for _ in range(wmmse_sweeps):
        u = wmmse.update_u(h, w, channels.sigma2, p_t)
        lam = wmmse.update_lambda(u, h, w)
        w = wmmse.scale_power(
            wmmse.update_w(u, lam, h, channels.alpha, channels.sigma2, p_t), p_t)
    state = BeamformerState(w=w, theta=theta, u=u, lam=lam, x=pi.lift_theta(theta))
    return SolveReport(final_state=state, wsr=wmmse.wsr(channels, w, theta),
                       wall_time=time.perf_counter() - t0)
