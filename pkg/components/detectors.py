"""
Detection engine for one-bit MIMO-OFDM

Negative log-likelihood of the one-bit observations and its gradient, the
closed-form E-step, three M-step strategies on the per-subcarrier box QP
(exact APG, one projected-gradient step, B accelerated steps), the assembled
EM loop, zero-forcing baselines, and direct projected gradient on the box
relaxation (1BOX).
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Optional, Tuple, List

import numpy as np

from .channel import frequency_domain_mix
from .models import (
    ChannelRealization, Constellation, ConvergenceTrace, DetectionResult,
    DetectorConfig, ObservationBlock, SymbolGrid,
)
from .numerics import inv_mills, largest_singular_value, log_std_normal_cdf, unitary_dft, unitary_idft
from .ofdm_model import hard_decision


ZF_REGULARIZATION = 1e-10
EXACT_MONOTONE_TOL = 1e-9
INEXACT_MONOTONE_TOL = 1e-6


@dataclass
class EmState:
    """Iterate of the EM loop: symbols, their time-domain image, and the pseudo-measurements"""
    S: np.ndarray
    Z: Optional[np.ndarray] = None
    R_pseudo: Optional[np.ndarray] = None
    trace: ConvergenceTrace = field(default_factory=ConvergenceTrace)


# ---------------------------------------------------------------------------
# Likelihood
# ---------------------------------------------------------------------------

def _check_observation(obs: ObservationBlock, channel: ChannelRealization) -> None:
    expected = (channel.params.N, channel.params.W)
    if obs.y.shape != expected:
        raise ValueError(f"Observation must have shape {expected}, got {obs.y.shape}")
    if obs.sigma <= 0:
        raise ValueError("One-bit detection needs a positive noise variance")


def time_domain_estimate(S: np.ndarray, channel: ChannelRealization) -> np.ndarray:
    """z_n = F^H (sum_k h_{n,k} * s_k) for all antennas, shape (N, W)"""
    return unitary_idft(frequency_domain_mix(channel, S), axis=-1)


def _scaled_margins(Z: np.ndarray, obs: ObservationBlock) -> Tuple[np.ndarray, np.ndarray]:
    sigma = obs.sigma
    return np.real(obs.y) * np.real(Z) / sigma, np.imag(obs.y) * np.imag(Z) / sigma


def _nll_from_z(Z: np.ndarray, obs: ObservationBlock) -> float:
    u_real, u_imag = _scaled_margins(Z, obs)
    return float(-np.sum(log_std_normal_cdf(u_real)) - np.sum(log_std_normal_cdf(u_imag)))


def _gradient_from_z(Z: np.ndarray, obs: ObservationBlock, channel: ChannelRealization) -> np.ndarray:
    sigma = obs.sigma
    u_real, u_imag = _scaled_margins(Z, obs)
    grad_z = (-inv_mills(u_real) * np.real(obs.y) - 1j * inv_mills(u_imag) * np.imag(obs.y)) / sigma
    grad_mix = unitary_dft(grad_z, axis=-1)
    return np.einsum('wnk,nw->wk', np.conj(channel.freq_response), grad_mix)


def nll(S: np.ndarray, obs: ObservationBlock, channel: ChannelRealization) -> float:
    """
    Negative log-likelihood F(S) of the one-bit observations.

    F(S) = sum_{n,w} -log Phi(Re(y) Re(z) / sigma) - log Phi(Im(y) Im(z) / sigma)
    """
    _check_observation(obs, channel)
    return _nll_from_z(time_domain_estimate(S, channel), obs)


def nll_gradient(S: np.ndarray, obs: ObservationBlock, channel: ChannelRealization) -> np.ndarray:
    """
    Gradient of F packed as dF/dRe(s) + j dF/dIm(s), shape (W, K).

    Uses d(-log Phi(u))/du = -lambda(u) and the adjoint of
    S -> F^H (sum_k h_k * s_k).
    """
    _check_observation(obs, channel)
    return _gradient_from_z(time_domain_estimate(S, channel), obs, channel)


# ---------------------------------------------------------------------------
# E-step
# ---------------------------------------------------------------------------

def truncated_gaussian_mean(z: np.ndarray, y: np.ndarray, sigma: float) -> np.ndarray:
    """Mean of N(z, sigma^2) truncated to the half-line selected by the sign y"""
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return z + y * sigma * inv_mills(y * z / sigma)


def e_step(state: EmState, obs: ObservationBlock, channel: ChannelRealization) -> np.ndarray:
    """
    Pseudo-measurements for every subcarrier.

    Replaces each real/imag component of z by its truncated-Gaussian mean,
    transforms back with F, and regroups per subcarrier.

    Returns:
        array of shape (W, N); row w is r_w
    """
    _check_observation(obs, channel)
    if state.Z is None:
        state.Z = time_domain_estimate(state.S, channel)
    sigma = obs.sigma
    r = (truncated_gaussian_mean(np.real(state.Z), np.real(obs.y), sigma)
         + 1j * truncated_gaussian_mean(np.imag(state.Z), np.imag(obs.y), sigma))
    state.R_pseudo = unitary_dft(r, axis=-1).T
    return state.R_pseudo


# ---------------------------------------------------------------------------
# M-step: box-constrained least squares per subcarrier
# ---------------------------------------------------------------------------

def _project(X: np.ndarray, limit: float) -> np.ndarray:
    return np.clip(np.real(X), -limit, limit) + 1j * np.clip(np.imag(X), -limit, limit)


def _inverse_steps(L: np.ndarray) -> np.ndarray:
    L = np.asarray(L, dtype=np.float64)
    return np.where(L > 0, 1.0 / np.where(L > 0, L, 1.0), 0.0)


def _projected_step(R: np.ndarray, H: np.ndarray, X: np.ndarray,
                    inv_L: np.ndarray, limit: float) -> np.ndarray:
    residual = np.einsum('wnk,wk->wn', H, X) - R
    grad = np.einsum('wnk,wn->wk', np.conj(H), residual)
    return _project(X - inv_L[:, None] * grad, limit)


def _qp_objective(R: np.ndarray, H: np.ndarray, X: np.ndarray) -> np.ndarray:
    return np.sum(np.abs(R - np.einsum('wnk,wk->wn', H, X)) ** 2, axis=-1)


def next_momentum(xi: float, rule: str = 'standard') -> float:
    """FISTA xi recursion; 'printed' drops the leading 1 in the numerator"""
    if rule == 'printed':
        return float(np.sqrt(1.0 + 4.0 * xi ** 2) / 2.0)
    return float((1.0 + np.sqrt(1.0 + 4.0 * xi ** 2)) / 2.0)


def accelerated_steps(R: np.ndarray, H: np.ndarray, X0: np.ndarray, L: np.ndarray, D: int,
                      steps: int, momentum_rule: str = 'standard') -> np.ndarray:
    """
    Run exactly ``steps`` FISTA-type projected steps on every subcarrier.

    Args:
        R: pseudo-measurements, shape (W, N)
        H: frequency responses, shape (W, N, K)
        X0: warm start inside the box, shape (W, K)
        L: step constants 2 sigma_max(H_w)^2, shape (W,)

    Returns:
        x^steps, shape (W, K)
    """
    limit = Constellation(D).box_limit
    inv_L = _inverse_steps(L)
    X_prev = np.array(X0, dtype=np.complex128)
    X = X_prev.copy()
    xi = 1.0
    for _ in range(steps):
        xi_next = next_momentum(xi, momentum_rule)
        alpha = (xi - 1.0) / xi_next
        xi = xi_next
        extrapolated = X + alpha * (X - X_prev)
        X_prev, X = X, _projected_step(R, H, extrapolated, inv_L, limit)
    return X


def solve_box_qp_batch(R: np.ndarray, H: np.ndarray, X0: np.ndarray, L: np.ndarray, D: int,
                       tol: float = 1e-8, cap: int = 500,
                       momentum_rule: str = 'standard') -> Tuple[np.ndarray, np.ndarray]:
    """
    Solve min ||r_w - H_w s_w||^2 over the box for every subcarrier.

    APG iterations run until ||x^{i+1} - x^i|| <= tol * max(1, ||x^i||) on a
    subcarrier (which then stops moving) or until ``cap``. The best iterate
    seen, the warm start included, is returned.

    Returns:
        (solutions of shape (W, K), boolean convergence mask of shape (W,))
    """
    limit = Constellation(D).box_limit
    inv_L = _inverse_steps(L)
    X_prev = np.array(X0, dtype=np.complex128)
    X = X_prev.copy()
    best = X.copy()
    best_objective = _qp_objective(R, H, X)
    active = np.ones(X.shape[0], dtype=bool)
    xi = 1.0

    for _ in range(cap):
        xi_next = next_momentum(xi, momentum_rule)
        alpha = (xi - 1.0) / xi_next
        xi = xi_next
        candidate = _projected_step(R, H, X + alpha * (X - X_prev), inv_L, limit)
        candidate = np.where(active[:, None], candidate, X)

        moved = np.linalg.norm(candidate - X, axis=-1)
        done = moved <= tol * np.maximum(1.0, np.linalg.norm(X, axis=-1))

        objective = _qp_objective(R, H, candidate)
        improved = active & (objective < best_objective)
        best = np.where(improved[:, None], candidate, best)
        best_objective = np.where(improved, objective, best_objective)

        X_prev, X = X, candidate
        active &= ~done
        if not np.any(active):
            break

    return best, ~active


def _single_subcarrier(r_w: np.ndarray, H_w: np.ndarray, s: np.ndarray,
                       L_w: Optional[float]) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    H_w = np.asarray(H_w, dtype=np.complex128)
    if H_w.ndim != 2:
        raise ValueError("H_w must be an N x K matrix")
    r_w = np.asarray(r_w, dtype=np.complex128).reshape(1, -1)
    s = np.asarray(s, dtype=np.complex128).reshape(1, -1)
    if r_w.shape[1] != H_w.shape[0] or s.shape[1] != H_w.shape[1]:
        raise ValueError(f"Dimension mismatch: r_w {r_w.shape[1]}, H_w {H_w.shape}, s {s.shape[1]}")
    if L_w is None:
        L_w = 2.0 * largest_singular_value(H_w) ** 2
    return r_w, H_w[None], s, np.array([L_w], dtype=np.float64)


def m_step_exact(r_w: np.ndarray, H_w: np.ndarray, s_init: np.ndarray, D: int,
                 tol: float = 1e-8, cap: int = 500, L_w: Optional[float] = None,
                 momentum_rule: str = 'standard') -> Tuple[np.ndarray, bool]:
    """Box-constrained least squares on one subcarrier solved to tolerance"""
    R, H, X0, L = _single_subcarrier(r_w, H_w, s_init, L_w)
    solution, converged = solve_box_qp_batch(R, H, X0, L, D, tol, cap, momentum_rule)
    if not converged[0]:
        logging.debug(f"Exact M-step reached its cap of {cap} iterations")
    return solution[0], bool(converged[0])


def m_step_pg1(r_w: np.ndarray, H_w: np.ndarray, s_prev: np.ndarray, D: int,
               L_w: Optional[float] = None) -> np.ndarray:
    """One projected-gradient step from s_prev with step 1/L_w"""
    R, H, X0, L = _single_subcarrier(r_w, H_w, s_prev, L_w)
    return accelerated_steps(R, H, X0, L, D, steps=1)[0]


def m_step_apg(r_w: np.ndarray, H_w: np.ndarray, s_prev: np.ndarray, D: int, B: int,
               L_w: Optional[float] = None, momentum_rule: str = 'standard') -> np.ndarray:
    """Exactly B accelerated projected-gradient steps from s_prev"""
    if B < 1:
        raise ValueError(f"B must be at least 1, got {B}")
    R, H, X0, L = _single_subcarrier(r_w, H_w, s_prev, L_w)
    return accelerated_steps(R, H, X0, L, D, steps=B, momentum_rule=momentum_rule)[0]


def m_step(R: np.ndarray, channel: ChannelRealization, S_prev: np.ndarray,
           config: DetectorConfig, D: int) -> Tuple[np.ndarray, bool]:
    """Configured M-step over all subcarriers, warm-started at S_prev"""
    H, L = channel.freq_response, channel.step_constants
    if config.variant == 'em_exact':
        S, converged = solve_box_qp_batch(
            R, H, S_prev, L, D, config.exact_inner_tol, config.exact_inner_cap, config.momentum_rule
        )
        return S, bool(np.all(converged))
    if config.variant == 'em_pg1':
        return accelerated_steps(R, H, S_prev, L, D, steps=1), True
    if config.variant == 'em_apg':
        return accelerated_steps(R, H, S_prev, L, D, steps=config.B, momentum_rule=config.momentum_rule), True
    raise ValueError(f"{config.variant} has no M-step")


# ---------------------------------------------------------------------------
# Zero-forcing baselines
# ---------------------------------------------------------------------------

def zf_equalize(obs: ObservationBlock, channel: ChannelRealization, use_quantized: bool,
                D: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-subcarrier pseudo-inverse equalization before the hard decision.

    Rank-deficient subcarriers use (H^H H + eps I)^{-1} H^H. The one-bit
    branch rescales each user so the mean power of its estimates equals E_s.

    Returns:
        (relaxed estimates of shape (W, K), rank-deficiency mask of shape (W,))
    """
    if use_quantized:
        received = obs.y
    elif obs.has_unquantized():
        received = obs.r
    else:
        raise ValueError("Full-resolution ZF needs the unquantized observation")
    expected = (channel.params.N, channel.params.W)
    if received.shape != expected:
        raise ValueError(f"Observation must have shape {expected}, got {received.shape}")

    H = channel.freq_response
    K = channel.params.K
    R = unitary_dft(received, axis=-1).T
    deficient = np.linalg.matrix_rank(H) < K
    gram = np.conj(np.swapaxes(H, -1, -2)) @ H
    if np.any(deficient):
        logging.warning(f"ZF regularized on {int(np.sum(deficient))} rank-deficient subcarriers")
        gram = gram + np.where(deficient, ZF_REGULARIZATION, 0.0)[:, None, None] * np.eye(K)
    rhs = np.einsum('wnk,wn->wk', np.conj(H), R)
    estimate = np.linalg.solve(gram, rhs[..., None])[..., 0]

    if use_quantized:
        power = np.mean(np.abs(estimate) ** 2, axis=0)
        scale = np.sqrt(Constellation(D).average_energy / np.where(power > 0, power, 1.0))
        estimate = estimate * np.where(power > 0, scale, 1.0)[None, :]
    return estimate, deficient


def zf_detect(obs: ObservationBlock, channel: ChannelRealization, use_quantized: bool, D: int) -> SymbolGrid:
    """Zero-forcing detection on one-bit (use_quantized) or full-resolution data"""
    estimate, _ = zf_equalize(obs, channel, use_quantized, D)
    return hard_decision(estimate, D)


# ---------------------------------------------------------------------------
# Iterative detectors
# ---------------------------------------------------------------------------

def initial_estimate(obs: ObservationBlock, channel: ChannelRealization,
                     config: DetectorConfig, D: int) -> np.ndarray:
    """S^0: the box center, or the one-bit ZF estimate clipped to the box"""
    if config.init == 'zf':
        estimate, _ = zf_equalize(obs, channel, use_quantized=True, D=D)
        return _project(estimate, Constellation(D).box_limit)
    return np.zeros((channel.params.W, channel.params.K), dtype=np.complex128)


class _Stopwatch:
    def __init__(self, enabled: bool):
        self.enabled = enabled
        self.start = time.perf_counter()

    def elapsed_ms(self) -> float:
        if not self.enabled:
            return 0.0
        return (time.perf_counter() - self.start) * 1000.0


def em_detect(obs: ObservationBlock, channel: ChannelRealization, config: DetectorConfig,
              D: int = 1, record_timing: bool = False) -> DetectionResult:
    """
    EM detection on the box relaxation.

    Each iteration maps S^j to z, forms truncated-Gaussian pseudo-measurements,
    transforms them per subcarrier and runs the configured M-step on each
    subcarrier. Stops when ||S^{j+1} - S^j||_F <= rel_tol ||S^j||_F or after
    max_em_iters; reaching the cap is flagged, not raised.
    """
    _check_observation(obs, channel)
    errors = config.validation_errors()
    if errors or config.variant not in ('em_exact', 'em_pg1', 'em_apg'):
        raise ValueError(f"Invalid EM configuration: {'; '.join(errors) or config.variant}")

    stopwatch = _Stopwatch(record_timing)
    state = EmState(S=initial_estimate(obs, channel, config, D))
    state.Z = time_domain_estimate(state.S, channel)
    current = _nll_from_z(state.Z, obs)
    state.trace.append(0, current, 0.0, stopwatch.elapsed_ms())

    tolerance = EXACT_MONOTONE_TOL if config.variant == 'em_exact' else INEXACT_MONOTONE_TOL
    increases = 0
    inner_capped = 0
    converged = False
    for j in range(1, config.max_em_iters + 1):
        R = e_step(state, obs, channel)
        S_next, inner_ok = m_step(R, channel, state.S, config, D)
        inner_capped += not inner_ok

        step = np.linalg.norm(S_next - state.S)
        reference = np.linalg.norm(state.S)
        state.S = S_next
        state.Z = time_domain_estimate(state.S, channel)
        updated = _nll_from_z(state.Z, obs)
        if updated > current + tolerance:
            increases += 1
            logging.debug(f"{config.label}: NLL rose from {current:.10g} to {updated:.10g} at iteration {j}")
        current = updated

        if reference > 0:
            relative = step / reference
        else:
            relative = 0.0 if step == 0 else float('inf')
        state.trace.append(j, current, relative, stopwatch.elapsed_ms())
        if step <= config.rel_tol * reference:
            converged = True
            break

    warnings: List[str] = []
    if not converged:
        warnings.append(f"{config.label} stopped at the iteration cap ({config.max_em_iters})")
        logging.info(warnings[-1])
    if increases:
        warnings.append(f"{config.label} NLL increased on {increases} iterations")
        logging.warning(warnings[-1])
    if inner_capped:
        warnings.append(f"{config.label} exact M-step hit its inner cap on {inner_capped} iterations")
        logging.info(warnings[-1])

    state.trace.converged = converged
    return DetectionResult(
        symbols=hard_decision(state.S, D),
        relaxed=state.S,
        trace=state.trace,
        converged=converged,
        warnings=warnings,
    )


def onebox_stepsizes(schedule: Tuple[float, float, int]) -> np.ndarray:
    """Geometric decay from the initial to the final stepsize over the budget"""
    initial, final, iters = schedule
    iters = int(iters)
    if iters == 1:
        return np.array([initial], dtype=np.float64)
    if initial > 0 and final > 0:
        return np.geomspace(initial, final, iters)
    return np.linspace(initial, final, iters)


def onebox_detect(obs: ObservationBlock, channel: ChannelRealization, config: DetectorConfig,
                  D: int = 1, record_timing: bool = False) -> DetectionResult:
    """Projected gradient directly on F(S) over the box, all subcarriers jointly"""
    _check_observation(obs, channel)
    errors = config.validation_errors()
    if errors:
        raise ValueError(f"Invalid 1BOX configuration: {'; '.join(errors)}")

    limit = Constellation(D).box_limit
    steps = onebox_stepsizes(config.onebox_step_schedule)
    logging.info(f"{config.label}: stepsize {steps[0]:.6g} -> {steps[-1]:.6g} over {steps.size} iterations")

    stopwatch = _Stopwatch(record_timing)
    trace = ConvergenceTrace()
    S = initial_estimate(obs, channel, config, D)
    Z = time_domain_estimate(S, channel)
    trace.append(0, _nll_from_z(Z, obs), 0.0, stopwatch.elapsed_ms())

    for t, stepsize in enumerate(steps, start=1):
        gradient = _gradient_from_z(Z, obs, channel)
        S_next = _project(S - stepsize * gradient, limit)
        reference = np.linalg.norm(S)
        step = np.linalg.norm(S_next - S)
        S = S_next
        Z = time_domain_estimate(S, channel)
        relative = step / reference if reference > 0 else (0.0 if step == 0 else float('inf'))
        trace.append(t, _nll_from_z(Z, obs), relative, stopwatch.elapsed_ms())

    trace.converged = True
    return DetectionResult(symbols=hard_decision(S, D), relaxed=S, trace=trace, converged=True)


def run_detector(obs: ObservationBlock, channel: ChannelRealization, config: DetectorConfig,
                 D: int = 1, record_timing: bool = False) -> DetectionResult:
    """Dispatch to the detector named by config.variant"""
    if config.variant == 'zf':
        estimate, deficient = zf_equalize(obs, channel, config.use_quantized, D)
        warnings = []
        if np.any(deficient):
            warnings.append(f"{config.label} regularized {int(np.sum(deficient))} subcarriers")
        return DetectionResult(
            symbols=hard_decision(estimate, D), relaxed=estimate,
            trace=ConvergenceTrace(converged=True), warnings=warnings,
        )
    if config.variant == 'onebox':
        return onebox_detect(obs, channel, config, D, record_timing)
    return em_detect(obs, channel, config, D, record_timing)
