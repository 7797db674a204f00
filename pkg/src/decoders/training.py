"""
Gradient training of the linear backward model on correlation losses.

Adam with decoupled weight decay, one whole trial per step, a
reduce-on-plateau learning-rate schedule and early stopping, both driven by
the validation loss. The weights of the best validation epoch are returned.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..analysis.metrics import LOSSES, PCC, loss_and_gradient
from ..core.errors import Diverged, InconsistentShapes
from ..core.signals import TrialSignals
from .linear import LagWindow, LinearDecoder, lag_window_samples, lagged_design

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    weight_decay: float = 5e-4
    plateau_factor: float = 0.5
    plateau_patience: int = 5
    plateau_cooldown: int = 5
    early_stop_patience: int = 10
    max_epochs: int = 100
    loss: str = PCC
    seed: int = 0
    init_std: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        for name in ('learning_rate', 'weight_decay', 'init_std', 'epsilon'):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0 < self.plateau_factor < 1:
            raise ValueError(f"plateau_factor must lie in (0, 1), got {self.plateau_factor}")
        for name in ('plateau_patience', 'early_stop_patience', 'max_epochs'):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if not isinstance(self.plateau_cooldown, int) or self.plateau_cooldown < 0:
            raise ValueError(f"plateau_cooldown must be a non-negative integer, got {self.plateau_cooldown!r}")
        if self.loss not in LOSSES:
            raise ValueError(f"Unknown loss {self.loss!r}; expected one of {LOSSES}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    learning_rate: float


@dataclass
class LearningRateChange:
    epoch: int
    old: float
    new: float


@dataclass
class TrainingLog:
    """Per-epoch losses, learning-rate changes and the stopping point."""

    epochs: List[EpochRecord] = field(default_factory=list)
    lr_changes: List[LearningRateChange] = field(default_factory=list)
    stopped_epoch: Optional[int] = None
    best_epoch: Optional[int] = None

    def to_dict(self) -> Dict:
        return asdict(self)


class PlateauScheduler:
    """
    Multiply the learning rate by `factor` once the loss has not improved for
    `patience` epochs, then ignore `cooldown` epochs before counting again.
    """

    def __init__(self, learning_rate: float, factor: float = 0.5, patience: int = 5, cooldown: int = 5,
                 log: Optional[TrainingLog] = None):
        self.learning_rate = learning_rate
        self.factor = factor
        self.patience = patience
        self.cooldown = cooldown
        self.log = log if log is not None else TrainingLog()
        self.best = np.inf
        self.bad_epochs = 0
        self.cooldown_left = 0

    def step(self, epoch: int, loss: float) -> float:
        """Consume one epoch's validation loss and return the learning rate to use next."""
        if loss < self.best:
            self.best = loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1

        if self.cooldown_left > 0:
            self.cooldown_left -= 1
            self.bad_epochs = 0

        if self.bad_epochs >= self.patience:
            old = self.learning_rate
            self.learning_rate = old * self.factor
            self.cooldown_left = self.cooldown
            self.bad_epochs = 0
            self.log.lr_changes.append(LearningRateChange(epoch, old, self.learning_rate))
            logger.info(f"Epoch {epoch}: validation loss plateaued, learning rate {old:.3g} -> {self.learning_rate:.3g}")
        return self.learning_rate


class EarlyStopping:
    """Signal a stop once the loss has not improved for `patience` epochs."""

    def __init__(self, patience: int = 10, log: Optional[TrainingLog] = None):
        self.patience = patience
        self.log = log if log is not None else TrainingLog()
        self.best = np.inf
        self.bad_epochs = 0

    def step(self, epoch: int, loss: float) -> bool:
        if loss < self.best:
            self.best = loss
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        if self.bad_epochs >= self.patience:
            self.log.stopped_epoch = epoch
            logger.info(f"Early stop at epoch {epoch}: no improvement for {self.patience} epochs")
            return True
        return False


class _AdamW:
    def __init__(self, dim: int, cfg: TrainConfig):
        self.cfg = cfg
        self.m = np.zeros(dim)
        self.v = np.zeros(dim)
        self.t = 0

    def step(self, w: np.ndarray, grad: np.ndarray, learning_rate: float) -> np.ndarray:
        cfg = self.cfg
        self.t += 1
        self.m = cfg.beta1 * self.m + (1 - cfg.beta1) * grad
        self.v = cfg.beta2 * self.v + (1 - cfg.beta2) * grad * grad
        m_hat = self.m / (1 - cfg.beta1 ** self.t)
        v_hat = self.v / (1 - cfg.beta2 ** self.t)
        return w - learning_rate * (m_hat / (np.sqrt(v_hat) + cfg.epsilon) + cfg.weight_decay * w)


@dataclass
class _Example:
    design: np.ndarray
    attended: np.ndarray
    unattended: List[np.ndarray]


def _prepare(trials: Sequence[TrialSignals], lag_window: LagWindow) -> List[_Example]:
    return [
        _Example(lagged_design(t.eeg.data, lag_window), t.attended.values, [u.values for u in t.unattended])
        for t in trials
    ]


def _loss(kind: str, example: _Example, w: np.ndarray) -> Tuple[float, np.ndarray]:
    prediction = example.design @ w
    loss, grad_prediction = loss_and_gradient(kind, prediction, example.attended, example.unattended)
    # grad_prediction sums to zero, so the bias and the design's column means drop out
    return loss, example.design.T @ grad_prediction


def fit_gradient_decoder(train: Sequence[TrialSignals], val: Sequence[TrialSignals],
                         cfg: TrainConfig = TrainConfig(),
                         lag_window: Optional[LagWindow] = None) -> Tuple[LinearDecoder, TrainingLog]:
    """
    Train a LinearDecoder by minimizing the PCC or contrastive PCC loss.

    Args:
        train: Training trials (EEG, attended and unattended envelopes)
        val: Validation trials driving the schedule, early stopping and the
            choice of the returned weights
        cfg: Optimizer and schedule settings
        lag_window: Inclusive lag window in samples; 0-250 ms by default

    Returns:
        (decoder, log): best-validation decoder and the per-epoch training log
    """
    if not train or not val:
        raise InconsistentShapes("Gradient training needs at least one training and one validation trial")
    shapes = {(t.eeg.channels, t.eeg.sample_rate_hz) for t in list(train) + list(val)}
    if len(shapes) != 1:
        raise InconsistentShapes(f"Trials mix channel counts or sample rates: {sorted(shapes)}")
    channels, sample_rate = next(iter(shapes))
    lag_window = lag_window or lag_window_samples(sample_rate)

    train_examples, val_examples = _prepare(train, lag_window), _prepare(val, lag_window)
    rng = np.random.default_rng(cfg.seed)
    w = rng.normal(0.0, cfg.init_std, size=train_examples[0].design.shape[1])

    log = TrainingLog()
    optimizer = _AdamW(w.shape[0], cfg)
    scheduler = PlateauScheduler(cfg.learning_rate, cfg.plateau_factor, cfg.plateau_patience,
                                 cfg.plateau_cooldown, log)
    stopper = EarlyStopping(cfg.early_stop_patience, log)
    learning_rate = cfg.learning_rate
    best_w, best_val = w.copy(), np.inf

    for epoch in range(1, cfg.max_epochs + 1):
        train_losses = []
        for i in rng.permutation(len(train_examples)):
            loss, grad = _loss(cfg.loss, train_examples[i], w)
            if not np.isfinite(loss):
                raise Diverged(epoch, loss)
            train_losses.append(loss)
            w = optimizer.step(w, grad, learning_rate)

        val_loss = float(np.mean([_loss(cfg.loss, example, w)[0] for example in val_examples]))
        if not np.isfinite(val_loss):
            raise Diverged(epoch, val_loss)
        log.epochs.append(EpochRecord(epoch, float(np.mean(train_losses)), val_loss, learning_rate))
        logger.debug(f"epoch {epoch}: train {log.epochs[-1].train_loss:.4f} val {val_loss:.4f} lr {learning_rate:.3g}")

        if val_loss < best_val:
            best_val, best_w = val_loss, w.copy()
            log.best_epoch = epoch
        learning_rate = scheduler.step(epoch, val_loss)
        if stopper.step(epoch, val_loss):
            break

    if log.stopped_epoch is None:
        log.stopped_epoch = len(log.epochs)

    # correlation losses ignore offsets; match the training mean
    sum_x = sum(example.design.sum(axis=0) for example in train_examples)
    n = sum(example.design.shape[0] for example in train_examples)
    mean_y = sum(example.attended.sum() for example in train_examples) / n
    bias = float(mean_y - (sum_x / n) @ best_w)

    decoder = LinearDecoder(best_w.reshape(-1, channels), bias, lag_window, sample_rate,
                            {'loss': cfg.loss, 'best_epoch': log.best_epoch, 'best_val_loss': best_val})
    logger.info(f"Gradient decoder: best validation loss {best_val:.4f} at epoch {log.best_epoch}, "
                f"stopped at epoch {log.stopped_epoch}")
    return decoder, log
