"""
Data models for the one-bit MIMO-OFDM detection toolkit

Contains dataclasses for channel parameters and realizations, constellations,
symbol grids, observation blocks, detector settings, convergence traces and
BER experiment results.
"""

from dataclasses import dataclass, asdict, field
from typing import List, Dict, Optional, Any, Tuple

import numpy as np
import pandas as pd

from .numerics import largest_singular_value


EM_VARIANTS = ('em_exact', 'em_pg1', 'em_apg')
DETECTOR_VARIANTS = EM_VARIANTS + ('onebox', 'zf')
INIT_POLICIES = ('zero', 'zf')
MOMENTUM_RULES = ('standard', 'printed')

DEFAULT_ONEBOX_SCHEDULE = (float(np.sqrt(2.0) / 64.0), 1.0 / 512.0, 200)


def _complex_to_lists(values: np.ndarray) -> Dict[str, Any]:
    return {'real': np.real(values).tolist(), 'imag': np.imag(values).tolist()}


def _lists_to_complex(data: Dict[str, Any]) -> np.ndarray:
    return np.asarray(data['real'], dtype=np.float64) + 1j * np.asarray(data['imag'], dtype=np.float64)


def _freeze(values: np.ndarray) -> np.ndarray:
    values = np.ascontiguousarray(values)
    values.setflags(write=False)
    return values


@dataclass
class ChannelParams:
    """Dimensions and multipath settings for one channel draw"""
    N: int
    K: int
    W: int
    L: int = 16
    eta: int = 4
    antenna_spacing_ratio: float = 0.5
    normalize: bool = False

    def validate(self) -> bool:
        """Validate parameter ranges"""
        if min(self.N, self.K, self.W, self.L, self.eta) < 1:
            return False
        if self.L > self.W:
            return False
        if not self.antenna_spacing_ratio > 0:
            return False
        return True

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ChannelParams':
        return cls(**data)


@dataclass
class ChannelRealization:
    """
    One multipath channel draw.

    taps[l, k] is the length-N vector h_{l,k}; freq_response[w] is the N x K
    matrix H_w (unnormalized DFT of the zero-padded taps at bin w);
    step_constants[w] = 2 * sigma_max(H_w)^2.
    """
    params: ChannelParams
    taps: np.ndarray
    freq_response: np.ndarray
    step_constants: np.ndarray

    @classmethod
    def from_taps(cls, params: ChannelParams, taps: np.ndarray) -> 'ChannelRealization':
        """Derive frequency responses and step constants from time-domain taps"""
        taps = np.asarray(taps, dtype=np.complex128)
        expected = (params.L, params.K, params.N)
        if taps.shape != expected:
            raise ValueError(f"taps must have shape {expected}, got {taps.shape}")
        # (W, K, N) -> (W, N, K)
        freq_response = np.fft.fft(taps, n=params.W, axis=0).transpose(0, 2, 1)
        step_constants = 2.0 * largest_singular_value(freq_response) ** 2
        return cls(
            params=params,
            taps=_freeze(taps),
            freq_response=_freeze(freq_response),
            step_constants=_freeze(np.asarray(step_constants, dtype=np.float64)),
        )

    def mean_user_gain(self) -> float:
        """Mean over users of sum_l ||h_{l,k}||^2 / N"""
        per_user = np.sum(np.abs(self.taps) ** 2, axis=(0, 2)) / self.params.N
        return float(np.mean(per_user))

    def to_dict(self) -> Dict[str, Any]:
        """Serialize params and taps; derived arrays are recomputed on load"""
        return {
            'params': self.params.to_dict(),
            'taps': _complex_to_lists(self.taps),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ChannelRealization':
        params = ChannelParams.from_dict(data['params'])
        return cls.from_taps(params, _lists_to_complex(data['taps']))


@dataclass
class Constellation:
    """Square QAM with per-axis levels {+-1, +-3, ..., +-(2D-1)}"""
    D: int

    def validate(self) -> bool:
        size = 2 * self.D
        return self.D >= 1 and (size & (size - 1)) == 0

    @property
    def levels(self) -> np.ndarray:
        return 2.0 * np.arange(2 * self.D) - 2 * self.D + 1

    @property
    def bits_per_axis(self) -> int:
        return int(np.log2(2 * self.D))

    @property
    def bits_per_symbol(self) -> int:
        return 2 * self.bits_per_axis

    @property
    def box_limit(self) -> float:
        """Half-width 2D-1 of the box relaxation per axis"""
        return float(2 * self.D - 1)

    @property
    def average_energy(self) -> float:
        """E_s = 2 (4D^2 - 1) / 3 for the unnormalized constellation"""
        return 2.0 * (4 * self.D ** 2 - 1) / 3.0

    def project(self, values: np.ndarray) -> np.ndarray:
        """Per-axis clip onto the box [-2D+1, 2D-1]^2"""
        limit = self.box_limit
        return np.clip(np.real(values), -limit, limit) + 1j * np.clip(np.imag(values), -limit, limit)

    def contains(self, values: np.ndarray) -> bool:
        levels = self.levels
        return bool(np.all(np.isin(np.real(values), levels)) and np.all(np.isin(np.imag(values), levels)))

    def in_box(self, values: np.ndarray, slack: float = 0.0) -> bool:
        limit = self.box_limit + slack
        return bool(np.all(np.abs(np.real(values)) <= limit) and np.all(np.abs(np.imag(values)) <= limit))


@dataclass
class SymbolGrid:
    """W x K frequency-domain symbol block S (row w holds the users' symbols at subcarrier w)"""
    entries: np.ndarray
    D: int

    @property
    def shape(self) -> Tuple[int, int]:
        return self.entries.shape

    @property
    def constellation(self) -> Constellation:
        return Constellation(self.D)

    def is_transmittable(self) -> bool:
        return self.constellation.contains(self.entries)


@dataclass
class ObservationBlock:
    """Received blocks for all N antennas: r (unquantized, optional) and y = Q(r)"""
    y: np.ndarray
    sigma_c_sq: float
    r: Optional[np.ndarray] = None

    @property
    def sigma(self) -> float:
        return float(np.sqrt(self.sigma_c_sq / 2.0))

    def has_unquantized(self) -> bool:
        return self.r is not None


@dataclass
class DetectorConfig:
    """Detector selection and its iteration budget"""
    variant: str = 'em_apg'
    label: Optional[str] = None
    B: int = 5
    max_em_iters: int = 200
    rel_tol: float = 2e-4
    init: str = 'zero'
    exact_inner_tol: float = 1e-8
    exact_inner_cap: int = 500
    onebox_step_schedule: Tuple[float, float, int] = DEFAULT_ONEBOX_SCHEDULE
    use_quantized: bool = True
    momentum_rule: str = 'standard'

    def __post_init__(self):
        self.onebox_step_schedule = tuple(self.onebox_step_schedule)
        if self.label is None:
            self.label = self.default_label()

    def default_label(self) -> str:
        if self.variant == 'em_apg':
            return f"em_apg_b{self.B}"
        if self.variant == 'zf':
            return 'zf_onebit' if self.use_quantized else 'zf_fullres'
        return self.variant

    def validation_errors(self) -> List[str]:
        """Collect every problem with the settings"""
        errors = []
        if self.variant not in DETECTOR_VARIANTS:
            errors.append(f"Unknown detector variant: {self.variant}")
        if self.variant == 'em_apg' and self.B < 1:
            errors.append("B must be at least 1 for em_apg")
        if self.max_em_iters < 0:
            errors.append("max_em_iters cannot be negative")
        if self.rel_tol <= 0 or self.exact_inner_tol <= 0:
            errors.append("Tolerances must be positive")
        if self.exact_inner_cap < 1:
            errors.append("exact_inner_cap must be at least 1")
        if self.init not in INIT_POLICIES:
            errors.append(f"Unknown initialization policy: {self.init}")
        if self.momentum_rule not in MOMENTUM_RULES:
            errors.append(f"Unknown momentum rule: {self.momentum_rule}")
        if len(self.onebox_step_schedule) != 3:
            errors.append("onebox_step_schedule must be (initial, final, iters)")
        else:
            initial, final, iters = self.onebox_step_schedule
            if initial < 0 or final < 0 or int(iters) < 1:
                errors.append("onebox_step_schedule needs non-negative steps and at least one iteration")
        return errors

    def validate(self) -> bool:
        return not self.validation_errors()

    @property
    def is_iterative(self) -> bool:
        return self.variant != 'zf'

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['onebox_step_schedule'] = list(self.onebox_step_schedule)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'DetectorConfig':
        return cls(**data)


@dataclass
class TraceRecord:
    """One row of a convergence trace"""
    iter: int
    nll: float
    rel_step_norm: float
    ms_elapsed: float


@dataclass
class ConvergenceTrace:
    """
    NLL-per-iteration series of one detection call.

    Record 0 is the initial point. rel_step_norm is the step size relative to
    the previous iterate, so it is inf on the first EM iteration from S = 0.
    """
    records: List[TraceRecord] = field(default_factory=list)
    converged: bool = False

    TRACE_COLUMNS = ['iter', 'nll', 'rel_step_norm', 'ms_elapsed']

    def append(self, iteration: int, nll: float, rel_step_norm: float, ms_elapsed: float) -> None:
        self.records.append(TraceRecord(iteration, float(nll), float(rel_step_norm), float(ms_elapsed)))

    @property
    def nll_values(self) -> np.ndarray:
        return np.array([record.nll for record in self.records])

    @property
    def iterations(self) -> int:
        """Number of completed iterations (the initial point is record 0)"""
        return max(len(self.records) - 1, 0)

    @property
    def final_nll(self) -> float:
        return self.records[-1].nll if self.records else float('nan')

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(record) for record in self.records], columns=self.TRACE_COLUMNS)

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False)


@dataclass
class DetectionResult:
    """Hard-decided output of a detector plus its convergence bookkeeping"""
    symbols: SymbolGrid
    relaxed: np.ndarray
    trace: ConvergenceTrace
    converged: bool = True
    warnings: List[str] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return self.trace.iterations

    def has_warnings(self) -> bool:
        return bool(self.warnings)


@dataclass
class BerPoint:
    """Aggregated BER of one detector at one SNR"""
    detector: str
    snr_db: float
    trials: int
    bit_errors: int
    bits_total: int
    em_iters_mean: float
    wall_ms: float = 0.0

    @property
    def ber(self) -> float:
        if self.bits_total == 0:
            return 0.0
        return self.bit_errors / self.bits_total

    def to_dict(self) -> Dict[str, Any]:
        return {
            'detector': self.detector,
            'snr_db': self.snr_db,
            'trials': self.trials,
            'bit_errors': self.bit_errors,
            'bits_total': self.bits_total,
            'ber': self.ber,
            'em_iters_mean': self.em_iters_mean,
            'wall_ms': self.wall_ms,
        }


@dataclass
class BerCurve:
    """BER versus SNR for every configured detector"""
    points: List[BerPoint] = field(default_factory=list)
    sigma_c_sq: Dict[float, List[float]] = field(default_factory=dict)

    BER_COLUMNS = ['detector', 'snr_db', 'trials', 'bit_errors', 'bits_total', 'ber', 'em_iters_mean', 'wall_ms']

    def get(self, detector: str, snr_db: float) -> BerPoint:
        for point in self.points:
            if point.detector == detector and point.snr_db == snr_db:
                return point
        raise KeyError(f"No BER point for {detector} at {snr_db} dB")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([point.to_dict() for point in self.points], columns=self.BER_COLUMNS)

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False)


@dataclass
class ExperimentConfig:
    """Monte-Carlo experiment settings"""
    N: int
    K: int
    W: int
    D: int = 1
    L: int = 16
    eta: int = 4
    d_over_lambda: float = 0.5
    normalize_channel: bool = False
    snr_db_grid: List[float] = field(default_factory=lambda: [0.0])
    trials: int = 10
    base_seed: int = 0
    detectors: List[DetectorConfig] = field(default_factory=lambda: [DetectorConfig()])
    output_dir: str = 'results'
    record_timing: bool = False
    workers: int = 1

    def __post_init__(self):
        self.detectors = [
            d if isinstance(d, DetectorConfig) else DetectorConfig.from_dict(d) for d in self.detectors
        ]
        self.snr_db_grid = [float(snr) for snr in self.snr_db_grid]

    def channel_params(self) -> ChannelParams:
        return ChannelParams(
            N=self.N, K=self.K, W=self.W, L=self.L, eta=self.eta,
            antenna_spacing_ratio=self.d_over_lambda, normalize=self.normalize_channel,
        )

    @property
    def constellation(self) -> Constellation:
        return Constellation(self.D)

    @property
    def bits_per_trial(self) -> int:
        return self.W * self.K * self.constellation.bits_per_symbol

    def validation_errors(self) -> List[str]:
        errors = []
        if not self.channel_params().validate():
            errors.append("Channel parameters invalid (need N,K,W,L,eta >= 1, L <= W, d/lambda > 0)")
        if self.W & (self.W - 1):
            errors.append(f"W must be a power of two, got {self.W}")
        if not self.constellation.validate():
            errors.append(f"2D must be a power of two, got D={self.D}")
        if self.trials < 1:
            errors.append("trials must be at least 1")
        if self.base_seed < 0:
            errors.append(f"base_seed must be non-negative, got {self.base_seed}")
        if not self.snr_db_grid:
            errors.append("snr_db_grid cannot be empty")
        if not self.detectors:
            errors.append("detector list cannot be empty")
        if self.workers < 1:
            errors.append("workers must be at least 1")
        labels = [d.label for d in self.detectors]
        for detector in self.detectors:
            errors.extend(f"{detector.label}: {message}" for message in detector.validation_errors())
        if len(set(labels)) != len(labels):
            errors.append("Detector labels must be unique")
        return errors

    def validate(self) -> bool:
        return not self.validation_errors()

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['detectors'] = [d.to_dict() for d in self.detectors]
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ExperimentConfig':
        return cls(**data)
