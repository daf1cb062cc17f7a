"""
Monte-Carlo experiment engine

Runs paired BER sweeps (every detector sees the same channel, payload and
noise for a given trial) and single-realization convergence traces, and
writes their CSV tables.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from .channel import generate_channel
from .detectors import run_detector
from .models import (
    BerCurve, BerPoint, ChannelRealization, Constellation, ConvergenceTrace,
    DetectorConfig, ExperimentConfig, ObservationBlock,
)
from .ofdm_model import demap_bits, map_bits, random_bits, transmit


CONVERGENCE_LINEUP = (
    DetectorConfig(variant='em_exact'),
    DetectorConfig(variant='em_pg1'),
    DetectorConfig(variant='em_apg', B=5),
)


def noise_variance_for_snr(channel: ChannelRealization, constellation: Constellation, snr_db: float) -> float:
    """
    sigma_C^2 giving the target SNR = E|z_{n,w}|^2 / sigma_C^2.

    The received power is taken analytically as K * E_s * g, with g the
    realization's mean per-user gain sum_l ||h_{l,k}||^2 / N.
    """
    signal_power = channel.params.K * constellation.average_energy * channel.mean_user_gain()
    return float(signal_power / 10.0 ** (snr_db / 10.0))


def trial_generator(base_seed: int, trial: int) -> np.random.Generator:
    """Stream for the channel and payload of one trial"""
    return np.random.default_rng(np.random.SeedSequence(base_seed, spawn_key=(trial, 0)))


def noise_generator(base_seed: int, trial: int, snr_index: int) -> np.random.Generator:
    """Stream for the noise of one trial at one SNR point"""
    return np.random.default_rng(np.random.SeedSequence(base_seed, spawn_key=(trial, 1, snr_index)))


def trace_noise_generator(base_seed: int) -> np.random.Generator:
    """Stream for the noise of the convergence-trace realization"""
    return np.random.default_rng(np.random.SeedSequence(base_seed, spawn_key=(0, 2)))


@dataclass
class TrialOutcome:
    """Per-trial tallies keyed by (detector label, SNR index)"""
    trial: int
    bit_errors: Dict[Tuple[str, int], int] = field(default_factory=dict)
    iterations: Dict[Tuple[str, int], int] = field(default_factory=dict)
    wall_ms: Dict[Tuple[str, int], float] = field(default_factory=dict)
    sigma_c_sq: List[float] = field(default_factory=list)


class ExperimentRunner:
    """Runs BER sweeps and convergence traces for one ExperimentConfig"""

    def __init__(self, config: ExperimentConfig):
        errors = config.validation_errors()
        if errors:
            raise ValueError(f"Invalid experiment configuration: {'; '.join(errors)}")
        self.config = config
        self.constellation = config.constellation
        self.params = config.channel_params()

    def draw_realization(self, trial: int) -> Tuple[ChannelRealization, np.ndarray]:
        """Channel and bit payload of one trial"""
        rng = trial_generator(self.config.base_seed, trial)
        channel = generate_channel(self.params, rng)
        bits = random_bits(self.config.bits_per_trial, rng)
        return channel, bits

    def observe(self, channel: ChannelRealization, bits: np.ndarray, snr_db: float,
                rng: np.random.Generator) -> ObservationBlock:
        symbols = map_bits(bits, self.config.D, (self.config.W, self.config.K))
        sigma_c_sq = noise_variance_for_snr(channel, self.constellation, snr_db)
        return transmit(symbols, channel, sigma_c_sq, rng)

    def run_trial(self, trial: int) -> TrialOutcome:
        """All SNR points and detectors on one realization"""
        config = self.config
        channel, bits = self.draw_realization(trial)
        outcome = TrialOutcome(trial=trial)

        for index, snr_db in enumerate(config.snr_db_grid):
            obs = self.observe(channel, bits, snr_db, noise_generator(config.base_seed, trial, index))
            outcome.sigma_c_sq.append(obs.sigma_c_sq)
            for detector in config.detectors:
                started = time.perf_counter()
                result = run_detector(obs, channel, detector, config.D, config.record_timing)
                elapsed = (time.perf_counter() - started) * 1000.0 if config.record_timing else 0.0

                decided = demap_bits(result.symbols, config.D)
                key = (detector.label, index)
                outcome.bit_errors[key] = int(np.count_nonzero(decided != bits))
                outcome.iterations[key] = result.iterations
                outcome.wall_ms[key] = elapsed
        return outcome

    def _run_trials(self) -> List[TrialOutcome]:
        trials = range(self.config.trials)
        if self.config.workers == 1:
            return [self.run_trial(t) for t in trials]
        with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
            return list(pool.map(self.run_trial, trials))

    def run_ber_experiment(self) -> BerCurve:
        """Paired Monte-Carlo BER over the SNR grid"""
        config = self.config
        logging.info(
            f"BER sweep: (N,K,W)=({config.N},{config.K},{config.W}), D={config.D}, "
            f"{config.trials} trials, {len(config.snr_db_grid)} SNR points, {config.workers} workers"
        )
        outcomes = self._run_trials()

        curve = BerCurve()
        for index, snr_db in enumerate(config.snr_db_grid):
            curve.sigma_c_sq[snr_db] = [outcome.sigma_c_sq[index] for outcome in outcomes]
            for detector in config.detectors:
                key = (detector.label, index)
                errors = sum(outcome.bit_errors[key] for outcome in outcomes)
                iterations = sum(outcome.iterations[key] for outcome in outcomes)
                wall = sum(outcome.wall_ms[key] for outcome in outcomes)
                point = BerPoint(
                    detector=detector.label,
                    snr_db=snr_db,
                    trials=config.trials,
                    bit_errors=errors,
                    bits_total=config.trials * config.bits_per_trial,
                    em_iters_mean=iterations / config.trials,
                    wall_ms=wall / config.trials,
                )
                curve.points.append(point)
                logging.info(f"{detector.label} @ {snr_db:g} dB: BER {point.ber:.3e} ({errors} errors)")
        return curve

    def run_convergence_trace(self, snr_db: float) -> Dict[str, ConvergenceTrace]:
        """NLL traces of the iterative detectors on trial 0"""
        detectors = [d for d in self.config.detectors if d.is_iterative] or list(CONVERGENCE_LINEUP)
        channel, bits = self.draw_realization(0)
        obs = self.observe(channel, bits, snr_db, trace_noise_generator(self.config.base_seed))

        traces = {}
        for detector in detectors:
            result = run_detector(obs, channel, detector, self.config.D, self.config.record_timing)
            traces[detector.label] = result.trace
            logging.info(
                f"{detector.label}: {result.iterations} iterations, final NLL {result.trace.final_nll:.8g}"
                + ("" if result.converged else " (iteration cap)")
            )
        return traces


def run_ber_experiment(config: ExperimentConfig, output_dir: Optional[Union[str, Path]] = None) -> BerCurve:
    """Run a BER sweep and, when output_dir is given, write ber.csv there"""
    curve = ExperimentRunner(config).run_ber_experiment()
    if output_dir is not None:
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        curve.to_csv(output_dir / 'ber.csv')
    return curve


def run_convergence_trace(config: ExperimentConfig, snr_db: float,
                          output_dir: Optional[Union[str, Path]] = None) -> Dict[str, ConvergenceTrace]:
    """Capture convergence traces and, when output_dir is given, write trace_<label>.csv files"""
    traces = ExperimentRunner(config).run_convergence_trace(snr_db)
    if output_dir is not None:
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        for label, trace in traces.items():
            trace.to_csv(output_dir / f"trace_{label}.csv")
    return traces
