"""
Synthetic stimulus envelopes and a linear EEG forward model.

Envelopes are low-passed, half-wave rectified white noise. EEG channels are
instantaneous mixtures of the attended and unattended envelopes plus white
Gaussian noise:

    eeg_c(t) = g_c * att(t) + gamma * sum_k u_kc * unatt_k(t) + sigma * n_c(t)
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.signal import lfilter

from ..core.errors import LengthMismatch, TooShort
from ..core.signals import SignalSeries

logger = logging.getLogger(__name__)

Seed = Union[int, np.random.SeedSequence]

ENVELOPE_CUTOFF_HZ = 8.0


def generate_envelope(length_samples: int, sample_rate_hz: float, seed: Seed,
                      cutoff_hz: float = ENVELOPE_CUTOFF_HZ) -> SignalSeries:
    """
    Speech-like envelope: white noise through a single-pole low-pass, half-wave
    rectified and standardized to zero mean and unit variance.
    """
    if length_samples < 2:
        raise TooShort(f"An envelope needs at least 2 samples, got {length_samples}")

    rng = np.random.default_rng(seed)
    a = np.exp(-2.0 * np.pi * cutoff_hz / sample_rate_hz)
    smooth = lfilter([1.0 - a], [1.0, -a], rng.standard_normal(length_samples))
    envelope = np.maximum(smooth, 0.0)
    if envelope.std() == 0:
        # only reachable for a handful of samples that are all negative
        envelope = smooth
    envelope = (envelope - envelope.mean()) / envelope.std()
    return SignalSeries.mono(envelope, sample_rate_hz)


@dataclass(frozen=True, eq=False)
class ForwardModel:
    """
    Spatial gains of one synthetic listener.

    A scenario draws the gains once from a seeded standard normal and every
    trial reuses them, so all trials share one forward model. With
    `gain_jitter` > 0 each trial scales the shared gains by its own
    multiplicative factor 1 + gain_jitter * N(0, 1).

    Attributes:
        attended_gains: Per-channel gain of the attended stream, shape (C,)
        unattended_gains: Per-competitor gains, shape (K, C), applied with `gamma`
        gamma: Unattended-stream scale
        sigma: Noise standard deviation
        gain_jitter: Std of a per-trial multiplicative jitter on all gains
    """

    attended_gains: np.ndarray
    unattended_gains: np.ndarray
    gamma: float = 0.6
    sigma: float = 0.0
    gain_jitter: float = 0.0

    def __post_init__(self):
        attended = np.atleast_1d(np.asarray(self.attended_gains, dtype=np.float64))
        unattended = np.atleast_2d(np.asarray(self.unattended_gains, dtype=np.float64))
        if unattended.shape[1] != attended.shape[0]:
            raise LengthMismatch(
                f"Unattended gains {unattended.shape} do not match {attended.shape[0]} channels")
        if self.sigma < 0 or self.gamma < 0 or self.gain_jitter < 0:
            raise ValueError("gamma, sigma and gain_jitter must be non-negative")
        object.__setattr__(self, 'attended_gains', attended)
        object.__setattr__(self, 'unattended_gains', unattended)

    @property
    def channels(self) -> int:
        return self.attended_gains.shape[0]

    @classmethod
    def draw(cls, channels: int, n_competitors: int, seed: Seed, gamma: float = 0.6, sigma: float = 0.0,
             shared_topography: bool = True, gain_jitter: float = 0.0) -> "ForwardModel":
        """Gains from a seeded standard normal; shared topography reuses the attended pattern."""
        rng = np.random.default_rng(seed)
        attended = rng.standard_normal(channels)
        if shared_topography:
            unattended = np.tile(attended, (n_competitors, 1))
        else:
            unattended = rng.standard_normal((n_competitors, channels))
        return cls(attended, unattended, gamma, sigma, gain_jitter)

    def with_sigma(self, sigma: float) -> "ForwardModel":
        return ForwardModel(self.attended_gains, self.unattended_gains, self.gamma, sigma, self.gain_jitter)

    def clean(self, att: np.ndarray, unatt: Sequence[np.ndarray],
              rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """Noise-free mixture, shape (C, samples)."""
        if len(unatt) > self.unattended_gains.shape[0]:
            raise LengthMismatch(
                f"{len(unatt)} competing envelopes but gains for {self.unattended_gains.shape[0]}")
        attended, unattended = self.attended_gains, self.unattended_gains
        if self.gain_jitter > 0 and rng is not None:
            attended = attended * (1 + self.gain_jitter * rng.standard_normal(attended.shape))
            unattended = unattended * (1 + self.gain_jitter * rng.standard_normal(unattended.shape))
        eeg = np.outer(attended, att)
        for k, envelope in enumerate(unatt):
            eeg += self.gamma * np.outer(unattended[k], envelope)
        return eeg


def synthesize_trial_eeg(att_env: SignalSeries, unatt_envs: Sequence[SignalSeries], model: ForwardModel,
                         seed: Seed) -> SignalSeries:
    """
    EEG of one trial under `model`, with noise drawn from `seed`.

    Returns:
        C-channel SignalSeries at the envelopes' sample rate
    """
    att = att_env.values
    unatt = [env.values for env in unatt_envs]
    if any(u.shape != att.shape for u in unatt):
        raise LengthMismatch(f"Envelopes differ in length: {[att.shape[0]] + [u.shape[0] for u in unatt]}")

    rng = np.random.default_rng(seed)
    eeg = model.clean(att, unatt, rng)
    if model.sigma > 0:
        eeg += model.sigma * rng.standard_normal(eeg.shape)
    return SignalSeries(eeg, att_env.sample_rate_hz)
