"""
Linear backward model: reconstruct the attended envelope from time-lagged EEG.

    y_hat(t) = sum_c sum_tau w(tau, c) * eeg_c(t + tau) + bias

EEG samples outside the recording are taken as zero, so the output has the
length of the input; `meta['valid_range']` marks the samples computed
without padding.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from ..core.errors import ChannelMismatch, ConstantSeries, InconsistentShapes, SingularSystem, TooShort
from ..core.signals import SignalSeries

logger = logging.getLogger(__name__)

DEFAULT_LAG_MS = (0.0, 250.0)
DEFAULT_LAMBDA_GRID = (1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3)

LagWindow = Tuple[int, int]
TrainingPair = Tuple[SignalSeries, SignalSeries]


def lag_window_samples(sample_rate_hz: float, lag_ms: Tuple[float, float] = DEFAULT_LAG_MS) -> LagWindow:
    """Inclusive lag window in samples; 0-250 ms at 64 Hz is (0, 16)."""
    lo, hi = (int(round(ms * sample_rate_hz / 1000.0)) for ms in lag_ms)
    if lo > hi:
        raise ValueError(f"Lag window {lag_ms} ms is empty")
    return lo, hi


def lagged_design(data: np.ndarray, lag_window: LagWindow) -> np.ndarray:
    """
    Time-lagged design matrix of shape (samples, lags * channels).

    Column `i * channels + c` holds channel c shifted by the i-th lag, with
    zeros where the shift runs past either edge.
    """
    min_lag, max_lag = lag_window
    channels, n = data.shape
    n_lags = max_lag - min_lag + 1
    design = np.zeros((n, n_lags, channels))
    for i, lag in enumerate(range(min_lag, max_lag + 1)):
        if abs(lag) >= n:
            continue
        if lag >= 0:
            design[:n - lag, i, :] = data[:, lag:].T
        else:
            design[-lag:, i, :] = data[:, :n + lag].T
    return design.reshape(n, n_lags * channels)


def valid_range(n_samples: int, lag_window: LagWindow) -> Tuple[int, int]:
    """[start, stop) of the samples whose every lag falls inside the recording."""
    min_lag, max_lag = lag_window
    return max(0, -min_lag), n_samples - max(0, max_lag)


@dataclass(frozen=True, eq=False)
class LinearDecoder:
    """Backward-model weights of shape (lags, channels) plus a bias."""

    weights: np.ndarray
    bias: float
    lag_window: LagWindow
    sample_rate_hz: float
    meta: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        weights = np.array(self.weights, dtype=np.float64)
        min_lag, max_lag = self.lag_window
        if weights.ndim != 2 or weights.shape[0] != max_lag - min_lag + 1:
            raise InconsistentShapes(
                f"Weights of shape {weights.shape} do not match lag window {self.lag_window}")
        weights.setflags(write=False)
        object.__setattr__(self, 'weights', weights)
        object.__setattr__(self, 'lag_window', (int(min_lag), int(max_lag)))

    @property
    def channels(self) -> int:
        return self.weights.shape[1]

    @property
    def n_lags(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def zeros(cls, channels: int, lag_window: LagWindow, sample_rate_hz: float, bias: float = 0.0) -> "LinearDecoder":
        n_lags = lag_window[1] - lag_window[0] + 1
        return cls(np.zeros((n_lags, channels)), bias, lag_window, sample_rate_hz)

    def reconstruct(self, eeg: SignalSeries) -> SignalSeries:
        return reconstruct(self, eeg)

    def to_dict(self) -> Dict:
        return {
            'weights': self.weights.tolist(),
            'bias': self.bias,
            'lag_window': list(self.lag_window),
            'sample_rate_hz': self.sample_rate_hz,
            'meta': dict(self.meta),
        }


def _check_input(decoder: LinearDecoder, eeg: SignalSeries):
    if eeg.channels != decoder.channels:
        raise ChannelMismatch(f"Decoder expects {decoder.channels} channels, EEG has {eeg.channels}")
    if eeg.sample_rate_hz != decoder.sample_rate_hz:
        raise InconsistentShapes(
            f"Decoder runs at {decoder.sample_rate_hz} Hz, EEG is sampled at {eeg.sample_rate_hz} Hz")
    min_lag, max_lag = decoder.lag_window
    if eeg.n_samples <= max(max_lag, -min_lag, 0):
        raise TooShort(f"EEG of {eeg.n_samples} samples is too short for lag window {decoder.lag_window}")


def reconstruct(decoder: LinearDecoder, eeg: SignalSeries) -> SignalSeries:
    """Reconstructed envelope, same length as `eeg`, edges computed against zero padding."""
    _check_input(decoder, eeg)
    design = lagged_design(eeg.data, decoder.lag_window)
    prediction = design @ decoder.weights.ravel() + decoder.bias
    start, stop = valid_range(eeg.n_samples, decoder.lag_window)
    return SignalSeries.mono(prediction, eeg.sample_rate_hz, valid_range=(start, stop), zero_padded=True)


# Closed-form ridge

@dataclass
class _Moments:
    """Running sums of the lagged design over training trials."""

    n: int = 0
    sum_x: Optional[np.ndarray] = None
    sum_y: float = 0.0
    xtx: Optional[np.ndarray] = None
    xty: Optional[np.ndarray] = None

    def add(self, design: np.ndarray, target: np.ndarray):
        if self.xtx is None:
            dim = design.shape[1]
            self.sum_x, self.xtx, self.xty = np.zeros(dim), np.zeros((dim, dim)), np.zeros(dim)
        self.n += design.shape[0]
        self.sum_x += design.sum(axis=0)
        self.sum_y += float(target.sum())
        self.xtx += design.T @ design
        self.xty += design.T @ target

    def centered(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray, float]:
        mean_x, mean_y = self.sum_x / self.n, self.sum_y / self.n
        cxx = self.xtx - self.n * np.outer(mean_x, mean_x)
        cxy = self.xty - self.n * mean_x * mean_y
        return cxx, cxy, mean_x, mean_y


def _check_pairs(pairs: Sequence[TrainingPair], what: str) -> Tuple[int, float]:
    shapes = {(eeg.channels, eeg.sample_rate_hz) for eeg, _ in pairs}
    if len(shapes) != 1:
        raise InconsistentShapes(f"{what} trials mix channel counts or sample rates: {sorted(shapes)}")
    for eeg, envelope in pairs:
        if envelope.n_samples != eeg.n_samples or envelope.sample_rate_hz != eeg.sample_rate_hz:
            raise InconsistentShapes(f"{what} envelope does not match its EEG in length or sample rate")
    return next(iter(shapes))


def _solve(cxx: np.ndarray, cxy: np.ndarray, lam: float) -> np.ndarray:
    dim = cxx.shape[0]
    if lam == 0:
        if np.linalg.matrix_rank(cxx) < dim:
            raise SingularSystem("Design is rank deficient at lambda = 0; use a positive ridge lambda")
        return linalg.solve(cxx, cxy, assume_a='sym')
    scale = float(np.mean(np.diag(cxx))) or 1.0
    return linalg.solve(cxx + lam * scale * np.eye(dim), cxy, assume_a='pos')


def _validation_rho(decoder: LinearDecoder, pairs: Sequence[TrainingPair]) -> float:
    rhos = []
    for eeg, envelope in pairs:
        prediction = reconstruct(decoder, eeg)
        start, stop = prediction.meta['valid_range']
        p, y = prediction.values[start:stop], envelope.values[start:stop]
        p, y = p - p.mean(), y - y.mean()
        norm = np.sqrt((p @ p) * (y @ y))
        rhos.append((p @ y) / norm if norm > 0 else -np.inf)
    return float(np.mean(rhos))


def fit_ridge(train: Sequence[TrainingPair], lag_window: Optional[LagWindow] = None,
              lambda_grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
              val: Sequence[TrainingPair] = ()) -> LinearDecoder:
    """
    Time-lagged ridge regression with validation-selected lambda.

    Lambda is relative: the penalty added to the centred Gram matrix is
    lambda * mean(diag(X'X)). The bias is not penalized. With several lambdas
    the one maximizing the mean validation correlation wins (first on ties).

    Args:
        train: (eeg, attended envelope) pairs
        lag_window: Inclusive (min_lag, max_lag) in samples; 0-250 ms by default
        lambda_grid: Candidate ridge lambdas
        val: Validation pairs, required when the grid holds more than one lambda

    Returns:
        LinearDecoder with the chosen lambda in meta['lambda']
    """
    if not train:
        raise InconsistentShapes("fit_ridge needs at least one training pair")
    if not lambda_grid:
        raise ValueError("lambda_grid is empty")
    if len(lambda_grid) > 1 and not val:
        raise ValueError("Selecting among several lambdas needs validation pairs")
    if any(lam < 0 for lam in lambda_grid):
        raise ValueError(f"Ridge lambdas must be non-negative, got {list(lambda_grid)}")

    channels, sample_rate = _check_pairs(train, "Training")
    if val:
        val_shape = _check_pairs(val, "Validation")
        if val_shape != (channels, sample_rate):
            raise InconsistentShapes(f"Validation trials {val_shape} differ from training trials "
                                     f"{(channels, sample_rate)}")
    lag_window = lag_window or lag_window_samples(sample_rate)

    moments = _Moments()
    for eeg, envelope in train:
        design = lagged_design(eeg.data, lag_window)
        moments.add(design, envelope.values)
    cxx, cxy, mean_x, mean_y = moments.centered()

    candidates: List[Tuple[float, LinearDecoder]] = []
    for lam in lambda_grid:
        w = _solve(cxx, cxy, lam)
        decoder = LinearDecoder(w.reshape(-1, channels), float(mean_y - mean_x @ w), lag_window, sample_rate,
                                {'lambda': float(lam)})
        score = _validation_rho(decoder, val) if len(lambda_grid) > 1 else float('nan')
        logger.debug(f"ridge lambda={lam:g}: validation rho={score:.4f}")
        candidates.append((score, decoder))

    if len(candidates) == 1:
        return candidates[0][1]
    best = int(np.argmax([score for score, _ in candidates]))
    score, decoder = candidates[best]
    if not np.isfinite(score):
        raise ConstantSeries("Every ridge lambda produced a constant validation reconstruction")
    decoder.meta['validation_rho'] = score
    logger.debug(f"Selected ridge lambda={decoder.meta['lambda']:g} (validation rho {score:.4f})")
    return decoder
