"""
OFDM transmission model

Gray bit mapping onto square QAM, uplink transmission through a channel
realization with AWGN, the one-bit IQ quantizer, and hard decisions from the
box relaxation back onto the constellation.
"""

from typing import Tuple

import numpy as np

from .channel import apply_time_domain
from .models import ChannelRealization, Constellation, ObservationBlock, SymbolGrid


def quantize(r: np.ndarray) -> np.ndarray:
    """One-bit IQ quantizer Q(x) = sgn(Re x) + j sgn(Im x), with sgn(0) = +1"""
    r = np.asarray(r)
    real = np.where(np.real(r) >= 0, 1.0, -1.0)
    imag = np.where(np.imag(r) >= 0, 1.0, -1.0)
    return real + 1j * imag


def gray_code(index: np.ndarray) -> np.ndarray:
    index = np.asarray(index)
    return index ^ (index >> 1)


def _axis_tables(D: int) -> Tuple[np.ndarray, np.ndarray]:
    """bits per level index (MSB first) and level index per Gray word"""
    constellation = Constellation(D)
    if not constellation.validate():
        raise ValueError(f"2D must be a power of two, got D={D}")
    nbits = constellation.bits_per_axis
    indices = np.arange(2 * D)
    codes = gray_code(indices)
    shifts = np.arange(nbits - 1, -1, -1)
    bits_of_index = (codes[:, None] >> shifts) & 1
    index_of_code = np.empty(2 * D, dtype=np.int64)
    index_of_code[codes] = indices
    return bits_of_index, index_of_code


def map_bits(bits: np.ndarray, D: int, shape: Tuple[int, int]) -> SymbolGrid:
    """
    Map a bit payload onto a W x K symbol grid.

    Symbols fill the grid in (w, k) row-major order; each symbol carries its
    real-axis bits then its imaginary-axis bits, each axis the binary-reflected
    Gray code of the level index (MSB first). Level index i has value 2i-2D+1.

    Raises:
        ValueError: if the bit count does not match W*K*2*log2(2D)
    """
    W, K = shape
    _, index_of_code = _axis_tables(D)
    nbits = Constellation(D).bits_per_axis
    bits = np.asarray(bits).astype(np.int64).ravel()
    expected = W * K * 2 * nbits
    if bits.size != expected:
        raise ValueError(f"Expected {expected} bits for a {W}x{K} grid with D={D}, got {bits.size}")
    if np.any((bits != 0) & (bits != 1)):
        raise ValueError("Bits must be 0 or 1")

    words = bits.reshape(W * K * 2, nbits)
    weights = 1 << np.arange(nbits - 1, -1, -1)
    codes = words @ weights
    levels = 2.0 * index_of_code[codes] - 2 * D + 1
    levels = levels.reshape(W * K, 2)
    entries = (levels[:, 0] + 1j * levels[:, 1]).reshape(W, K)
    return SymbolGrid(entries=entries, D=D)


def demap_bits(S: SymbolGrid, D: int) -> np.ndarray:
    """Inverse of map_bits for grids whose entries lie in the constellation"""
    bits_of_index, _ = _axis_tables(D)
    entries = np.asarray(S.entries if isinstance(S, SymbolGrid) else S).ravel()
    axes = np.stack([np.real(entries), np.imag(entries)], axis=1).ravel()
    indices = np.rint((axes + 2 * D - 1) / 2.0).astype(np.int64)
    if np.any(indices < 0) or np.any(indices >= 2 * D):
        raise ValueError("Symbol grid has entries outside the constellation")
    return bits_of_index[indices].ravel().astype(np.uint8)


def random_bits(count: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, 2, size=count, dtype=np.uint8)


def transmit(S: SymbolGrid, channel: ChannelRealization, sigma_c_sq: float,
             rng: np.random.Generator) -> ObservationBlock:
    """
    Send a symbol grid through the channel, add circular Gaussian noise of
    variance sigma_c_sq (sigma_c_sq/2 per real component), and quantize.

    sigma_c_sq = 0 is the noiseless case and consumes no randomness.

    Raises:
        ValueError: if sigma_c_sq is negative or not finite
    """
    if not np.isfinite(sigma_c_sq) or sigma_c_sq < 0:
        raise ValueError(f"Noise variance must be a non-negative finite number, got {sigma_c_sq}")
    entries = S.entries if isinstance(S, SymbolGrid) else S
    r = apply_time_domain(channel, entries, method='frequency')
    if sigma_c_sq > 0:
        scale = np.sqrt(sigma_c_sq / 2.0)
        r = r + scale * (rng.standard_normal(r.shape) + 1j * rng.standard_normal(r.shape))
    r.setflags(write=False)
    y = quantize(r)
    y.setflags(write=False)
    return ObservationBlock(y=y, sigma_c_sq=float(sigma_c_sq), r=r)


def hard_decision(S: np.ndarray, D: int) -> SymbolGrid:
    """
    Round each axis to the nearest odd level in [-2D+1, 2D-1].

    Ties at even integers round toward +infinity.
    """
    entries = S.entries if isinstance(S, SymbolGrid) else np.asarray(S)
    limit = 2 * D - 1

    def _axis(values: np.ndarray) -> np.ndarray:
        return np.clip(2.0 * np.floor(values / 2.0) + 1.0, -limit, limit)

    decided = _axis(np.real(entries)) + 1j * _axis(np.imag(entries))
    return SymbolGrid(entries=decided, D=D)
