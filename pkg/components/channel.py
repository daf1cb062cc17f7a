"""
Millimeter-wave multipath channel model

Draws per-user tap vectors as sums of eta steering-vector paths with random
angles and complex gains, derives the per-subcarrier frequency responses, and
applies the channel to a frequency-domain symbol grid.
"""

import json
import logging
from pathlib import Path
from typing import Union

import numpy as np

from .models import ChannelParams, ChannelRealization
from .numerics import unitary_idft


def steering_vector(N: int, spacing_ratio: float, theta: np.ndarray) -> np.ndarray:
    """Array response exp(-j 2 pi (d/lambda) m sin(theta)) for m = 0..N-1 along the last axis"""
    m = np.arange(N)
    theta = np.asarray(theta, dtype=np.float64)
    return np.exp(-1j * 2.0 * np.pi * spacing_ratio * np.sin(theta)[..., None] * m)


def generate_channel(params: ChannelParams, rng: np.random.Generator) -> ChannelRealization:
    """
    Draw one channel realization.

    h_{l,k} = sum_i beta_{l,k}^i a(theta_{l,k}^i), beta ~ CN(0, 1/eta),
    theta uniform on [-pi, pi], drawn independently per (l, k, i).

    Args:
        params: channel dimensions and multipath settings
        rng: caller-owned random stream

    Returns:
        ChannelRealization with taps of shape (L, K, N)
    """
    if not params.validate():
        raise ValueError(f"Invalid channel parameters: {params}")

    shape = (params.L, params.K, params.eta)
    theta = rng.uniform(-np.pi, np.pi, size=shape)
    beta = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0 * params.eta)

    paths = steering_vector(params.N, params.antenna_spacing_ratio, theta)  # (L, K, eta, N)
    taps = np.einsum('lki,lkin->lkn', beta, paths)

    if params.normalize:
        gain = np.sum(np.abs(taps) ** 2, axis=(0, 2)) / params.N  # per user
        if np.any(gain == 0):
            logging.warning("Channel normalization skipped for a user with zero gain")
        scale = np.where(gain > 0, 1.0 / np.sqrt(np.where(gain > 0, gain, 1.0)), 1.0)
        taps = taps * scale[None, :, None]

    return ChannelRealization.from_taps(params, taps)


def _check_grid(channel: ChannelRealization, S: np.ndarray) -> np.ndarray:
    S = np.asarray(S, dtype=np.complex128)
    expected = (channel.params.W, channel.params.K)
    if S.shape != expected:
        raise ValueError(f"Symbol grid must have shape {expected}, got {S.shape}")
    return S


def frequency_domain_mix(channel: ChannelRealization, S: np.ndarray) -> np.ndarray:
    """
    sum_k h_{n,k} (Hadamard) s_k for every antenna.

    Returns:
        array of shape (N, W)
    """
    S = _check_grid(channel, S)
    return np.einsum('wnk,wk->nw', channel.freq_response, S)


def apply_time_domain(channel: ChannelRealization, S: np.ndarray, method: str = 'convolution') -> np.ndarray:
    """
    Noise-free received blocks sum_k H_{n,k} F^H s_k for all N antennas.

    ``method='convolution'`` circularly convolves the zero-padded taps with
    F^H s_k directly; ``method='frequency'`` evaluates F^H (sum_k h_{n,k} * s_k).
    Both give the same result.

    Returns:
        array of shape (N, W)
    """
    S = _check_grid(channel, S)
    if method == 'frequency':
        return unitary_idft(frequency_domain_mix(channel, S), axis=-1)
    if method != 'convolution':
        raise ValueError(f"Unknown evaluation method: {method}")

    x = unitary_idft(S, axis=0)  # (W, K) time-domain user blocks
    out = np.zeros((channel.params.N, channel.params.W), dtype=np.complex128)
    for delay in range(channel.params.L):
        shifted = np.roll(x, delay, axis=0)
        out += np.einsum('kn,wk->nw', channel.taps[delay], shifted)
    return out


def dump_channel(channel: ChannelRealization, path: Union[str, Path]) -> None:
    """Write params and per-tap complex arrays as JSON"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as f:
        json.dump(channel.to_dict(), f, indent=2)


def load_channel(path: Union[str, Path]) -> ChannelRealization:
    """Read a channel written by dump_channel and rebuild its derived arrays"""
    with open(path, 'r') as f:
        data = json.load(f)
    return ChannelRealization.from_dict(data)
