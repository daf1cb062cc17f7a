"""
Shared numerical kernels for the one-bit OFDM detectors

Unitary DFT/IDFT, the standard-normal log-CDF and inverse Mills ratio in a
form that stays finite deep in the Gaussian tails, and largest-singular-value
estimation by power iteration.
"""

import logging
from typing import Union

import numpy as np
from scipy.special import erfcx, log_ndtr


ArrayLike = Union[float, np.ndarray]

SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)
LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)

POWER_ITERATION_CAP = 200
POWER_ITERATION_TOL = 1e-10


def _check_dft_length(x: np.ndarray, axis: int) -> int:
    if x.ndim == 0:
        raise ValueError("DFT input must have at least one dimension")
    length = x.shape[axis]
    if length < 1:
        raise ValueError("DFT length must be positive")
    if length & (length - 1):
        raise ValueError(f"DFT length must be a power of two, got {length}")
    return length


def _check_finite(x: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite entries")


def unitary_dft(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Multiply by the unitary W-point DFT matrix F along ``axis``."""
    x = np.asarray(x, dtype=np.complex128)
    _check_dft_length(x, axis)
    return np.fft.fft(x, axis=axis, norm="ortho")


def unitary_idft(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Multiply by F^H along ``axis``."""
    x = np.asarray(x, dtype=np.complex128)
    _check_dft_length(x, axis)
    return np.fft.ifft(x, axis=axis, norm="ortho")


def log_std_normal_cdf(u: ArrayLike) -> ArrayLike:
    """
    log Phi(u) for the standard normal CDF.

    ``log_ndtr`` switches to an asymptotic series in the lower tail, so the
    result neither underflows for u < -8 nor loses precision near u = 0.

    Raises:
        ValueError: if any input is NaN
    """
    u_arr = np.asarray(u, dtype=np.float64)
    if np.any(np.isnan(u_arr)):
        raise ValueError("log_std_normal_cdf received NaN")
    result = log_ndtr(u_arr)
    return float(result) if np.ndim(u) == 0 else result


def inv_mills(u: ArrayLike) -> ArrayLike:
    """
    Inverse Mills ratio lambda(u) = phi(u) / Phi(u).

    For u <= 0 this is sqrt(2/pi) / erfcx(-u/sqrt(2)), which is exact in the
    lower tail where both phi and Phi underflow. For u > 0, Phi(u) is close
    to one and the ratio is formed in log space.

    Raises:
        ValueError: if any input is NaN
    """
    u_arr = np.asarray(u, dtype=np.float64)
    if np.any(np.isnan(u_arr)):
        raise ValueError("inv_mills received NaN")

    lower = u_arr <= 0.0
    safe_lower = np.where(lower, u_arr, 0.0)
    safe_upper = np.where(lower, 0.0, u_arr)

    lower_value = SQRT_2_OVER_PI / erfcx(-safe_lower / np.sqrt(2.0))
    upper_value = np.exp(-0.5 * safe_upper ** 2 - LOG_SQRT_2PI - log_ndtr(safe_upper))

    result = np.where(lower, lower_value, upper_value)
    return float(result) if np.ndim(u) == 0 else result


def log_std_normal_pdf(u: ArrayLike) -> ArrayLike:
    """log phi(u)"""
    return -0.5 * np.asarray(u, dtype=np.float64) ** 2 - LOG_SQRT_2PI


def largest_singular_value(H: np.ndarray) -> Union[float, np.ndarray]:
    """
    Largest singular value of H, or of every matrix in a stack H[..., N, K].

    Power iteration on H^H H from a fixed start vector, stopped when the
    Rayleigh quotient moves by less than 1e-10 (relative) or after 200
    iterations. Matrices that hit the cap are finished with a dense SVD.

    Returns:
        float for a single matrix, array of shape H.shape[:-2] for a stack

    Raises:
        ValueError: on non-finite entries or a matrix with a zero dimension
    """
    H = np.asarray(H, dtype=np.complex128)
    if H.ndim < 2:
        raise ValueError("largest_singular_value expects a matrix")
    if H.shape[-1] < 1 or H.shape[-2] < 1:
        raise ValueError(f"matrix dimensions must be positive, got {H.shape[-2:]}")
    _check_finite(H, "matrix")

    single = H.ndim == 2
    stack = H.reshape((-1,) + H.shape[-2:])
    gram = np.conj(np.swapaxes(stack, -1, -2)) @ stack
    k = gram.shape[-1]

    # Fixed, generic start vector keeps the estimate deterministic.
    start = np.random.default_rng(0).standard_normal((k, 2)) @ np.array([1.0, 1j])
    v = np.broadcast_to(start / np.linalg.norm(start), stack.shape[:1] + (k,)).copy()

    rayleigh = np.zeros(stack.shape[0])
    converged = np.zeros(stack.shape[0], dtype=bool)
    for _ in range(POWER_ITERATION_CAP):
        gv = np.einsum('bij,bj->bi', gram, v)
        new_rayleigh = np.real(np.einsum('bi,bi->b', np.conj(v), gv))
        norms = np.linalg.norm(gv, axis=-1)
        zero = norms == 0.0
        v = np.where(zero[:, None], v, gv / np.where(zero, 1.0, norms)[:, None])
        converged = np.abs(new_rayleigh - rayleigh) <= POWER_ITERATION_TOL * np.abs(new_rayleigh)
        converged |= zero
        rayleigh = np.where(zero, 0.0, new_rayleigh)
        if np.all(converged):
            break

    if not np.all(converged):
        stalled = np.flatnonzero(~converged)
        logging.debug(f"Power iteration hit its cap on {stalled.size} matrices, using SVD")
        rayleigh[stalled] = np.linalg.svd(stack[stalled], compute_uv=False)[:, 0] ** 2

    sigma = np.sqrt(np.maximum(rayleigh, 0.0))
    if single:
        return float(sigma[0])
    return sigma.reshape(H.shape[:-2])
