"""
Unit tests for the OFDM transmission model

Feature: onebit-ofdm, Property 3: Mapping, Transmission and Quantization
Gray mapping, the one-bit quantizer, noisy transmission and hard decisions.
"""

import pytest
from hypothesis import given, strategies as st, settings
import numpy as np
import sys
import os

# Add the project root to the path so we can import components
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from components.channel import apply_time_domain, generate_channel
from components.models import ChannelParams, ChannelRealization, Constellation, SymbolGrid
from components.numerics import unitary_idft
from components.ofdm_model import (
    quantize, gray_code, map_bits, demap_bits, random_bits, transmit, hard_decision,
)


class TestQuantizer:
    """One-bit IQ quantizer"""

    def test_reference_values(self):
        values = np.array([0.3 - 2.0j, -1e-300 + 0.0j, 0.0 + 0.0j, -5.0 + 7.0j])
        expected = np.array([1 - 1j, -1 + 1j, 1 + 1j, -1 + 1j])
        assert np.array_equal(quantize(values), expected)

    @given(seed=st.integers(min_value=0, max_value=2 ** 32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_idempotent_and_binary(self, seed):
        rng = np.random.default_rng(seed)
        r = rng.standard_normal((4, 16)) + 1j * rng.standard_normal((4, 16))
        y = quantize(r)
        assert np.array_equal(quantize(y), y)
        assert set(np.unique(np.real(y))) <= {-1.0, 1.0}
        assert set(np.unique(np.imag(y))) <= {-1.0, 1.0}


class TestGrayMapping:
    """Bit-to-symbol mapping and its inverse"""

    def test_gray_code_sequence(self):
        assert gray_code(np.arange(8)).tolist() == [0, 1, 3, 2, 6, 7, 5, 4]

    def test_qpsk_example(self):
        grid = map_bits(np.array([1, 0]), 1, (1, 1))
        assert grid.entries[0, 0] == 1 - 1j

    def test_16qam_axis_table(self):
        # 00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3 on each axis
        words = {(0, 0): -3.0, (0, 1): -1.0, (1, 1): 1.0, (1, 0): 3.0}
        for (b0, b1), level in words.items():
            grid = map_bits(np.array([b0, b1, 0, 1]), 2, (1, 1))
            assert grid.entries[0, 0] == level - 1j

    def test_row_major_order(self):
        # second symbol of row 0 is (w=0, k=1)
        bits = np.array([0, 0, 1, 1, 0, 1, 1, 0])
        grid = map_bits(bits, 1, (2, 2))
        assert np.array_equal(grid.entries, np.array([[-1 - 1j, 1 + 1j], [-1 + 1j, 1 - 1j]]))

    @pytest.mark.parametrize("D", [1, 2, 4])
    def test_adjacent_levels_differ_in_one_bit(self, D):
        constellation = Constellation(D)
        nbits = constellation.bits_per_axis
        levels = constellation.levels
        grid = SymbolGrid(entries=(levels + 1j * levels[0])[:, None], D=D)
        words = demap_bits(grid, D).reshape(2 * D, 2, nbits)[:, 0, :]
        for lower, upper in zip(words[:-1], words[1:]):
            assert np.sum(lower != upper) == 1

    @given(D=st.sampled_from([1, 2, 4]), W=st.sampled_from([1, 4, 8]), K=st.integers(min_value=1, max_value=4),
           seed=st.integers(min_value=0, max_value=2 ** 32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_round_trip(self, D, W, K, seed):
        """Property 3: demap(map(b)) = b and mapped grids lie in the constellation"""
        rng = np.random.default_rng(seed)
        bits = random_bits(W * K * Constellation(D).bits_per_symbol, rng)
        grid = map_bits(bits, D, (W, K))
        assert grid.shape == (W, K)
        assert grid.is_transmittable()
        assert np.array_equal(demap_bits(grid, D), bits)

    def test_bit_count_mismatch_rejected(self):
        with pytest.raises(ValueError):
            map_bits(np.zeros(7, dtype=np.uint8), 1, (2, 2))
        with pytest.raises(ValueError):
            map_bits(np.array([0, 2]), 1, (1, 1))

    def test_unsupported_constellation_rejected(self):
        with pytest.raises(ValueError):
            map_bits(np.zeros(4, dtype=np.uint8), 3, (1, 1))

    def test_average_energy(self):
        for D in (1, 2, 4):
            levels = Constellation(D).levels
            points = levels[:, None] + 1j * levels[None, :]
            assert Constellation(D).average_energy == pytest.approx(np.mean(np.abs(points) ** 2))


class TestTransmit:
    """Noisy transmission and quantization"""

    def setup_method(self):
        self.params = ChannelParams(N=4, K=2, W=16, L=4)
        self.channel = generate_channel(self.params, np.random.default_rng(3))
        self.grid = map_bits(random_bits(16 * 2 * 2, np.random.default_rng(4)), 1, (16, 2))

    def test_noiseless_flat_channel(self):
        params = ChannelParams(N=1, K=1, W=8, L=1, eta=1)
        channel = ChannelRealization.from_taps(params, np.ones((1, 1, 1)))
        grid = map_bits(random_bits(16, np.random.default_rng(0)), 1, (8, 1))
        obs = transmit(grid, channel, 0.0, np.random.default_rng(1))
        assert np.allclose(obs.r[0], unitary_idft(grid.entries[:, 0]), atol=1e-12)
        assert np.array_equal(obs.y, quantize(obs.r))

    def test_y_is_quantized_r(self):
        obs = transmit(self.grid, self.channel, 0.5, np.random.default_rng(8))
        assert obs.y.shape == (4, 16)
        assert np.array_equal(obs.y, quantize(obs.r))
        assert obs.has_unquantized()

    def test_observations_read_only(self):
        obs = transmit(self.grid, self.channel, 0.5, np.random.default_rng(8))
        with pytest.raises(ValueError):
            obs.y[0, 0] = 0
        with pytest.raises(ValueError):
            obs.r[0, 0] = 0

    def test_noise_variance(self):
        params = ChannelParams(N=64, K=1, W=2048, L=4)
        channel = generate_channel(params, np.random.default_rng(5))
        zeros = SymbolGrid(entries=np.zeros((2048, 1), dtype=complex), D=1)
        obs = transmit(zeros, channel, 2.5, np.random.default_rng(6))
        assert np.mean(np.abs(obs.r) ** 2) == pytest.approx(2.5, rel=0.02)
        assert np.mean(np.real(obs.r) ** 2) == pytest.approx(1.25, rel=0.03)

    def test_deterministic_for_fixed_seed(self):
        first = transmit(self.grid, self.channel, 1.0, np.random.default_rng(11))
        second = transmit(self.grid, self.channel, 1.0, np.random.default_rng(11))
        assert np.array_equal(first.r, second.r)
        assert np.array_equal(first.y, second.y)

    def test_noiseless_response_is_linear(self):
        scaled = SymbolGrid(entries=-3.0 * self.grid.entries, D=1)
        base = transmit(self.grid, self.channel, 0.0, np.random.default_rng(0))
        tripled = transmit(scaled, self.channel, 0.0, np.random.default_rng(0))
        assert np.allclose(tripled.r, -3.0 * base.r, atol=1e-12)
        assert np.allclose(base.r, apply_time_domain(self.channel, self.grid.entries), atol=1e-12)

    def test_invalid_noise_variance_rejected(self):
        for bad in (-1.0, float('nan'), float('inf')):
            with pytest.raises(ValueError):
                transmit(self.grid, self.channel, bad, np.random.default_rng(0))


class TestHardDecision:
    """Nearest-level rounding with clipping"""

    def test_qpsk_signs(self):
        S = np.array([[0.2 - 0.7j, -3.0 + 0.0j]])
        assert np.array_equal(hard_decision(S, 1).entries, np.array([[1 - 1j, -1 + 1j]]))

    def test_16qam_rounding_and_clipping(self):
        S = np.array([[0.9 + 1.9j, -2.2 - 7.0j, 5.0 + 0.1j]])
        assert np.array_equal(hard_decision(S, 2).entries, np.array([[1 + 1j, -3 - 3j, 3 + 1j]]))

    def test_ties_round_up(self):
        S = np.array([[2.0 - 2.0j, 0.0 + 0.0j]])
        assert np.array_equal(hard_decision(S, 2).entries, np.array([[3 - 1j, 1 + 1j]]))

    @given(D=st.sampled_from([1, 2, 4]), seed=st.integers(min_value=0, max_value=2 ** 32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_constellation_points_unchanged(self, D, seed):
        bits = random_bits(8 * 3 * Constellation(D).bits_per_symbol, np.random.default_rng(seed))
        grid = map_bits(bits, D, (8, 3))
        assert np.array_equal(hard_decision(grid.entries, D).entries, grid.entries)

    @given(seed=st.integers(min_value=0, max_value=2 ** 32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_output_in_constellation(self, seed):
        rng = np.random.default_rng(seed)
        S = 10.0 * (rng.standard_normal((6, 2)) + 1j * rng.standard_normal((6, 2)))
        assert hard_decision(S, 4).is_transmittable()
