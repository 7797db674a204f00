"""
A decoder that memorizes training envelopes.

It models a high-capacity network that recognizes which audio stimulus is
playing and recalls the envelope it was trained on, instead of tracking
attention. The linear reconstruction picks the best-matching stored
envelope, which is then blended in window by window.

With `purity_weighted`, the blend weight also scales with how consistently
the stimulus was attended during training, so a stimulus seen equally often
in both roles is never substituted.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from ..analysis.metrics import DEFAULT_WINDOW_SECONDS, EvalWindowing
from ..analysis.partition import LOPEO, Partition, normalize_strategy
from ..core.dataset import Dataset, StimulusId
from ..core.errors import ConfigError, MemorizationLeak, MissingEnvelope
from ..core.signals import SignalSeries
from .linear import LinearDecoder, reconstruct

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.7
DEFAULT_THRESHOLD = 0.05


@dataclass(frozen=True, eq=False)
class MemorizingDecoder:
    """
    Attributes:
        base: Linear decoder producing the first-pass reconstruction
        stored_envelopes: Attended envelopes of the training partition
        purity: Training-set role purity per stored stimulus, in [0, 1]
        blend_alpha: Weight of the matched envelope in the blend
        match_threshold: Minimum whole-trial correlation for a substitution
        window_seconds: Blending window length
        purity_weighted: Scale the blend weight by the matched stimulus' purity
            and only match stimuli with positive purity
    """

    base: LinearDecoder
    stored_envelopes: Mapping[StimulusId, np.ndarray]
    purity: Mapping[StimulusId, float]
    blend_alpha: float = DEFAULT_ALPHA
    match_threshold: float = DEFAULT_THRESHOLD
    window_seconds: float = DEFAULT_WINDOW_SECONDS
    purity_weighted: bool = False
    meta: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.blend_alpha <= 1.0:
            raise ConfigError(f"blend_alpha must lie in [0, 1], got {self.blend_alpha}")
        if not -1.0 <= self.match_threshold <= 1.0:
            raise ConfigError(f"match_threshold must lie in [-1, 1], got {self.match_threshold}")

    @property
    def stored_keys(self) -> Tuple[StimulusId, ...]:
        return tuple(sorted(self.stored_envelopes))

    def blend_weight(self, stimulus: StimulusId) -> float:
        if self.purity_weighted:
            return self.blend_alpha * self.purity.get(stimulus, 0.0)
        return self.blend_alpha

    def reconstruct(self, eeg: SignalSeries) -> SignalSeries:
        return reconstruct_with_memory(self, eeg)


def _training_purity(partition: Partition, dataset: Dataset) -> Dict[StimulusId, float]:
    attended: Dict[StimulusId, int] = {}
    unattended: Dict[StimulusId, int] = {}
    for trial in dataset:
        if trial.trial_id not in partition.train:
            continue
        attended[trial.attended] = attended.get(trial.attended, 0) + 1
        for stimulus in trial.unattended:
            unattended[stimulus] = unattended.get(stimulus, 0) + 1
    return {
        s: max(0.0, (n - unattended.get(s, 0)) / (n + unattended.get(s, 0)))
        for s, n in attended.items()
    }


def build_memorizing_decoder(base: LinearDecoder, partition: Partition, dataset: Dataset,
                             envelopes: Mapping[StimulusId, SignalSeries],
                             alpha: float = DEFAULT_ALPHA, threshold: float = DEFAULT_THRESHOLD,
                             strategy: Optional[str] = None,
                             window_seconds: float = DEFAULT_WINDOW_SECONDS,
                             purity_weighted: bool = False) -> MemorizingDecoder:
    """
    Store the attended envelope of every training trial.

    Args:
        base: Linear decoder trained on the same partition
        partition: Partition whose training split may be memorized
        dataset: Trial metadata
        envelopes: stimulus -> envelope
        alpha: Blend weight of the matched envelope
        threshold: Minimum match correlation
        strategy: Strategy the partition was built with; under LOPEO the
            stored stimuli must not occur in any test trial
        window_seconds: Blending window length
        purity_weighted: Weight the blend by training-set role purity

    Returns:
        MemorizingDecoder
    """
    train_trials = [trial for trial in dataset if trial.trial_id in partition.train]
    if not train_trials:
        raise MissingEnvelope(f"Partition (t={partition.t}, v={partition.v}) has no training trials to memorize")

    stored: Dict[StimulusId, np.ndarray] = {}
    for trial in train_trials:
        if trial.attended in stored:
            continue
        if trial.attended not in envelopes:
            raise MissingEnvelope(f"No envelope for training stimulus {trial.attended!r}")
        stored[trial.attended] = envelopes[trial.attended].values

    if strategy is not None and normalize_strategy(strategy) == LOPEO:
        test_stimuli = {s for trial in dataset if trial.trial_id in partition.test for s in trial.stimuli}
        leaked = sorted(test_stimuli & set(stored))
        if leaked:
            raise MemorizationLeak(
                f"Partition (t={partition.t}, v={partition.v}) would memorize test stimuli {leaked}")

    purity = _training_purity(partition, dataset)
    logger.debug(f"Memorized {len(stored)} envelopes for partition (t={partition.t}, v={partition.v}); "
                 f"{sum(p > 0 for p in purity.values())} with positive purity")
    return MemorizingDecoder(base=base, stored_envelopes=stored, purity=purity, blend_alpha=alpha,
                             match_threshold=threshold, window_seconds=window_seconds,
                             purity_weighted=purity_weighted)


def _standardize(x: np.ndarray) -> np.ndarray:
    centered = x - x.mean()
    scale = centered.std()
    return centered / scale if scale > 0 else centered


def _correlation(x: np.ndarray, y: np.ndarray) -> float:
    xc, yc = x - x.mean(), y - y.mean()
    norm = np.sqrt((xc @ xc) * (yc @ yc))
    return float(xc @ yc / norm) if norm > 0 else -np.inf


def blend_windows(n: int, window: int) -> List[Tuple[int, int]]:
    """Consecutive [start, stop) windows over n samples; a remainder under 2 samples joins the last window."""
    bounds = [(start, min(start + window, n)) for start in range(0, n, window)]
    if len(bounds) > 1 and bounds[-1][1] - bounds[-1][0] < 2:
        bounds[-2:] = [(bounds[-2][0], n)]
    return bounds


def reconstruct_with_memory(decoder: MemorizingDecoder, eeg: SignalSeries) -> SignalSeries:
    """
    Linear reconstruction, optionally pulled towards the best-matching stored envelope.

    The match is chosen on the whole trial. Above the threshold, each window of
    the output becomes a * matched + (1 - a) * linear on standardized windows,
    with a = blend_alpha (times the matched stimulus' purity when
    purity-weighted). Samples past the end of a shorter stored envelope keep
    the linear output.
    """
    linear = reconstruct(decoder.base, eeg)
    y_lin = linear.values

    candidates = dict(decoder.stored_envelopes)
    if decoder.purity_weighted:
        candidates = {s: env for s, env in candidates.items() if decoder.purity.get(s, 0.0) > 0}
    if not candidates or len(y_lin) < 2:
        return linear

    scores = {s: _correlation(y_lin[:min(len(env), len(y_lin))], env[:min(len(env), len(y_lin))])
              for s, env in candidates.items()}
    match = max(sorted(scores), key=lambda s: scores[s])
    if scores[match] <= decoder.match_threshold:
        return linear.with_meta(memory_match=None, memory_rho=scores[match])

    weight = decoder.blend_weight(match)
    envelope = candidates[match]
    n = min(len(envelope), len(y_lin))
    w = EvalWindowing(decoder.window_seconds).samples(eeg.sample_rate_hz)

    output = y_lin.copy()
    for start, stop in blend_windows(n, w):
        output[start:stop] = (weight * _standardize(envelope[start:stop])
                              + (1 - weight) * _standardize(y_lin[start:stop]))

    return SignalSeries.mono(output, eeg.sample_rate_hz, **linear.meta,
                             memory_match=match, memory_rho=scores[match], memory_weight=weight)
