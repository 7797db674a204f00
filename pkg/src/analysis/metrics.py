"""
Correlation metrics, windowed decoding accuracy and correlation losses.

Windows are non-overlapping; a window counts as correct when the
reconstruction correlates strictly better with the attended envelope than
with every competitor. Exact ties count as incorrect.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from ..core.errors import ConfigError, ConstantSeries, EmptyCompetitors, LengthMismatch, NoFullWindow
from ..core.signals import SignalSeries, as_array

logger = logging.getLogger(__name__)

SeriesLike = Union[SignalSeries, Sequence[float], np.ndarray]

PCC = "pcc"
CONTRASTIVE = "contrastive"
LOSSES = (PCC, CONTRASTIVE)

DEFAULT_WINDOW_SECONDS = 10.0


def _centered_pair(x: SeriesLike, y: SeriesLike) -> Tuple[np.ndarray, np.ndarray, float, float]:
    xv, yv = as_array(x), as_array(y)
    if xv.shape != yv.shape:
        raise LengthMismatch(f"Series lengths differ: {xv.shape[0]} vs {yv.shape[0]}")
    if xv.shape[0] < 2:
        raise LengthMismatch(f"Correlation needs at least 2 samples, got {xv.shape[0]}")
    xc, yc = xv - xv.mean(), yv - yv.mean()
    sx, sy = float(np.sqrt(xc @ xc)), float(np.sqrt(yc @ yc))
    if sx == 0.0 or sy == 0.0:
        raise ConstantSeries("Pearson correlation is undefined for a constant series")
    return xc, yc, sx, sy


def pearson(x: SeriesLike, y: SeriesLike) -> float:
    """Pearson correlation coefficient of two equal-length single-channel series."""
    xc, yc, sx, sy = _centered_pair(x, y)
    return float(np.clip((xc @ yc) / (sx * sy), -1.0, 1.0))


def pcc_gradient(pred: SeriesLike, target: SeriesLike) -> np.ndarray:
    """
    Analytic gradient of pearson(pred, target) with respect to each sample of pred.

    d rho / d pred = yc / (|xc| |yc|) - rho * xc / |xc|^2, where xc and yc are
    the centred series. It sums to zero and is orthogonal to xc.
    """
    xc, yc, sx, sy = _centered_pair(pred, target)
    rho = (xc @ yc) / (sx * sy)
    return yc / (sx * sy) - rho * xc / (sx * sx)


def pcc_loss(pred: SeriesLike, att: SeriesLike) -> float:
    return -pearson(pred, att)


def contrastive_pcc_loss(pred: SeriesLike, att: SeriesLike, unatt_list: Sequence[SeriesLike]) -> float:
    """-rho(pred, att) plus the mean correlation with the competing envelopes."""
    if not unatt_list:
        raise EmptyCompetitors("Contrastive loss needs at least one unattended envelope")
    return -pearson(pred, att) + float(np.mean([pearson(pred, u) for u in unatt_list]))


def loss_and_gradient(kind: str, pred: SeriesLike, att: SeriesLike,
                      unatt_list: Sequence[SeriesLike] = ()) -> Tuple[float, np.ndarray]:
    """Loss value and its gradient with respect to pred, for either loss."""
    if kind == PCC:
        return pcc_loss(pred, att), -pcc_gradient(pred, att)
    if kind == CONTRASTIVE:
        if not unatt_list:
            raise EmptyCompetitors("Contrastive loss needs at least one unattended envelope")
        grad = -pcc_gradient(pred, att)
        grad = grad + np.mean([pcc_gradient(pred, u) for u in unatt_list], axis=0)
        return contrastive_pcc_loss(pred, att, unatt_list), grad
    raise ValueError(f"Unknown loss {kind!r}; expected one of {LOSSES}")


@dataclass(frozen=True)
class EvalWindowing:
    """Non-overlapping decision windows of `window_seconds`."""

    window_seconds: float = DEFAULT_WINDOW_SECONDS

    def __post_init__(self):
        if not self.window_seconds > 0:
            raise ConfigError(f"window_seconds must be positive, got {self.window_seconds}")

    def samples(self, sample_rate_hz: float) -> int:
        n = int(round(self.window_seconds * sample_rate_hz))
        if n < 2:
            raise ConfigError(f"A {self.window_seconds}s window at {sample_rate_hz} Hz spans {n} samples (< 2)")
        return n


def _row_correlations(pred: np.ndarray, other: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-row Pearson correlation and a mask of rows where it is defined."""
    pc = pred - pred.mean(axis=1, keepdims=True)
    oc = other - other.mean(axis=1, keepdims=True)
    sp = np.sqrt(np.einsum('ij,ij->i', pc, pc))
    so = np.sqrt(np.einsum('ij,ij->i', oc, oc))
    defined = (sp > 0) & (so > 0)
    rho = np.zeros(pred.shape[0])
    rho[defined] = np.einsum('ij,ij->i', pc[defined], oc[defined]) / (sp[defined] * so[defined])
    return np.clip(rho, -1.0, 1.0), defined


@dataclass(frozen=True)
class WindowScores:
    """Per-window outcome of one evaluation; mergeable across trials."""

    correct: np.ndarray
    rho_a: np.ndarray
    rho_u: np.ndarray  # shape (windows, competitors)
    skipped: int = 0

    @property
    def n_windows(self) -> int:
        return int(self.correct.shape[0])

    @property
    def acc(self) -> float:
        return float(self.correct.mean()) if self.n_windows else float('nan')

    @property
    def mean_rho_a(self) -> float:
        return float(self.rho_a.mean()) if self.n_windows else float('nan')

    @property
    def mean_rho_u(self) -> float:
        # merged scores pad missing competitors with NaN
        if not self.rho_u.size or np.isnan(self.rho_u).all():
            return float('nan')
        return float(np.nanmean(self.rho_u))

    def summary(self) -> Tuple[float, float, float]:
        return self.acc, self.mean_rho_a, self.mean_rho_u

    @staticmethod
    def merge(scores: Sequence["WindowScores"]) -> "WindowScores":
        """Pool windows of several trials; competitor counts may differ per trial."""
        if not scores:
            return WindowScores(np.zeros(0, bool), np.zeros(0), np.zeros((0, 1)))
        width = max(s.rho_u.shape[1] for s in scores)
        rho_u = np.concatenate([
            np.pad(s.rho_u, ((0, 0), (0, width - s.rho_u.shape[1])), constant_values=np.nan) for s in scores])
        return WindowScores(
            correct=np.concatenate([s.correct for s in scores]),
            rho_a=np.concatenate([s.rho_a for s in scores]),
            rho_u=rho_u,
            skipped=sum(s.skipped for s in scores),
        )


def score_windows(pred: SeriesLike, att: SeriesLike, unatt_list: Sequence[SeriesLike],
                  windowing: EvalWindowing, sample_rate_hz: Optional[float] = None) -> WindowScores:
    """
    Per-window correlations and correctness; the trailing partial window is dropped.

    Windows in which any series is constant are skipped with a warning and
    counted in `skipped`.
    """
    if not unatt_list:
        raise EmptyCompetitors("Decoding accuracy needs at least one unattended envelope")
    if sample_rate_hz is None:
        if not isinstance(pred, SignalSeries):
            raise ValueError("sample_rate_hz is required when pred is not a SignalSeries")
        sample_rate_hz = pred.sample_rate_hz

    p, a = as_array(pred), as_array(att)
    competitors = [as_array(u) for u in unatt_list]
    lengths = {p.shape[0], a.shape[0], *(u.shape[0] for u in competitors)}
    if len(lengths) != 1:
        raise LengthMismatch(f"Prediction and envelopes differ in length: {sorted(lengths)}")

    w = windowing.samples(sample_rate_hz)
    n_windows = p.shape[0] // w
    if n_windows == 0:
        raise NoFullWindow(f"Series of {p.shape[0]} samples holds no full {w}-sample window")

    def frame(x: np.ndarray) -> np.ndarray:
        return x[:n_windows * w].reshape(n_windows, w)

    pw = frame(p)
    rho_a, defined = _row_correlations(pw, frame(a))
    rho_u = np.empty((n_windows, len(competitors)))
    for k, u in enumerate(competitors):
        rho_u[:, k], ok = _row_correlations(pw, frame(u))
        defined &= ok

    skipped = int((~defined).sum())
    if skipped:
        logger.warning(f"Skipped {skipped}/{n_windows} windows with a constant series")

    rho_a, rho_u = rho_a[defined], rho_u[defined]
    correct = np.all(rho_a[:, np.newaxis] > rho_u, axis=1)
    return WindowScores(correct=correct, rho_a=rho_a, rho_u=rho_u, skipped=skipped)


def windowed_accuracy(pred: SeriesLike, att: SeriesLike, unatt_list: Sequence[SeriesLike],
                      windowing: EvalWindowing = EvalWindowing(),
                      sample_rate_hz: Optional[float] = None) -> Tuple[float, float, float]:
    """
    Decoding accuracy over non-overlapping windows.

    Returns:
        (acc, rho_a, rho_u): fraction of correct windows, mean attended
        correlation, and mean competitor correlation over all competitors and
        windows
    """
    scores = score_windows(pred, att, unatt_list, windowing, sample_rate_hz)
    if scores.n_windows == 0:
        raise ConstantSeries(f"All {scores.skipped} windows were constant; nothing to evaluate")
    return scores.summary()
