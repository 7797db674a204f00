"""
Stimulus-reconstruction decoders.

LinearDecoder is fitted in closed form (ridge) or by gradient descent on a
correlation loss; MemorizingDecoder wraps one to mimic stimulus-identity
memorization.
"""

from .linear import LinearDecoder, fit_ridge, lag_window_samples, lagged_design, reconstruct
from .memorizing import MemorizingDecoder, build_memorizing_decoder, reconstruct_with_memory
from .training import EarlyStopping, PlateauScheduler, TrainConfig, TrainingLog, fit_gradient_decoder

RIDGE = "ridge"
GRADIENT = "gradient"
MEMORIZING = "memorizing"
DECODERS = (RIDGE, GRADIENT, MEMORIZING)

__all__ = [
    'LinearDecoder', 'fit_ridge', 'lag_window_samples', 'lagged_design', 'reconstruct',
    'MemorizingDecoder', 'build_memorizing_decoder', 'reconstruct_with_memory',
    'EarlyStopping', 'PlateauScheduler', 'TrainConfig', 'TrainingLog', 'fit_gradient_decoder',
    'RIDGE', 'GRADIENT', 'MEMORIZING', 'DECODERS',
]
