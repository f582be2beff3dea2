"""Estimands computed on test data: Brier, scaled Brier, log-score, AUC,
calibration slope and calibration-in-the-large, plus oracle correction.

Degenerate inputs never fabricate numbers: the affected estimand is NaN and
its name is recorded in the invalid set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logit as _logit
from scipy.stats import rankdata

from . import penalized

ESTIMANDS = ("bs", "bs_scaled", "ls", "auc", "calib_a", "calib_b")

_LOG_EPS = 1e-15
_LOGIT_EPS = 1e-10


@dataclass
class MetricSet:
    """One method's estimands on one test set (NaN where invalid)."""

    bs: float
    bs_scaled: float
    ls: float
    auc: float
    calib_a: float
    calib_b: float
    invalid: frozenset = frozenset()
    corrected: Optional[dict] = None

    def value(self, name: str) -> float:
        return getattr(self, name)

    def as_dict(self) -> dict:
        out = {name: self.value(name) for name in ESTIMANDS}
        if self.corrected is not None:
            out.update({f"{k}_corrected": v for k, v in self.corrected.items()})
        return out


def _check_pair(y, probs):
    y = np.asarray(y, dtype=np.float64).ravel()
    probs = np.asarray(probs, dtype=np.float64).ravel()
    if len(y) != len(probs):
        raise ValueError(f"length mismatch: {len(y)} outcomes vs {len(probs)} predictions")
    if len(y) == 0:
        raise ValueError("empty input")
    return y, probs


def brier(y, probs) -> float:
    """Mean squared difference between outcomes and predicted probabilities."""
    y, probs = _check_pair(y, probs)
    return float(np.mean((y - probs) ** 2))


def scaled_brier(y, probs) -> float:
    """1 - BS/BS0 with BS0 = ybar(1-ybar); NaN when the outcome is single-class."""
    y, probs = _check_pair(y, probs)
    ybar = float(np.mean(y))
    bs0 = ybar * (1.0 - ybar)
    if bs0 == 0.0:
        return math.nan
    return 1.0 - brier(y, probs) / bs0


def log_score(y, probs, eps: float = _LOG_EPS) -> float:
    """Negative mean Bernoulli log-likelihood, with probabilities clipped to
    [eps, 1-eps] so that hard 0/1 predictions stay finite."""
    y, probs = _check_pair(y, probs)
    p = np.clip(probs, eps, 1.0 - eps)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def auc(y, probs) -> float:
    """max(PI, 1-PI) where PI is the Mann-Whitney concordance probability
    (ties counted 1/2 via midranks). NaN for single-class outcomes."""
    y, probs = _check_pair(y, probs)
    n1 = int(np.sum(y == 1))
    n0 = len(y) - n1
    if n1 == 0 or n0 == 0:
        return math.nan
    ranks = rankdata(probs)
    pi = (float(np.sum(ranks[y == 1])) - n1 * (n1 + 1) / 2.0) / (n1 * n0)
    return max(pi, 1.0 - pi)


@dataclass
class CalibrationResult:
    intercept: float
    slope: float
    intercept_valid: bool
    slope_valid: bool


def calibration(y, probs) -> CalibrationResult:
    """Calibration slope and calibration-in-the-large.

    Slope: logistic regression of y on logit(prob) with free intercept.
    In-the-large: intercept of a slope-1 (offset) logistic regression.
    """
    y, probs = _check_pair(y, probs)
    lp = _logit(np.clip(probs, _LOGIT_EPS, 1.0 - _LOGIT_EPS))
    if y.min() == y.max():
        return CalibrationResult(math.nan, math.nan, False, False)

    offset_fit = penalized.fit_logistic_irls(np.zeros((len(y), 0)), y, offset=lp)
    a = offset_fit.intercept if offset_fit.converged else math.nan

    if np.ptp(lp) == 0.0:
        return CalibrationResult(a, math.nan, offset_fit.converged, False)
    slope_fit = penalized.fit_logistic_irls(lp[:, None], y)
    b = float(slope_fit.coef[0]) if slope_fit.converged else math.nan
    return CalibrationResult(a, b, offset_fit.converged, slope_fit.converged)


def compute_metric_set(y, probs) -> MetricSet:
    """All estimands at once, with validity flags."""
    y, probs = _check_pair(y, probs)
    invalid = set()
    bs = brier(y, probs)
    bss = scaled_brier(y, probs)
    if math.isnan(bss):
        invalid.add("bs_scaled")
    ls = log_score(y, probs)
    a = auc(y, probs)
    if math.isnan(a):
        invalid.add("auc")
    cal = calibration(y, probs)
    if not cal.intercept_valid:
        invalid.add("calib_a")
    if not cal.slope_valid:
        invalid.add("calib_b")
    return MetricSet(
        bs=bs, bs_scaled=bss, ls=ls, auc=a,
        calib_a=cal.intercept, calib_b=cal.slope,
        invalid=frozenset(invalid),
    )


def oracle_correct(metrics_method: MetricSet, metrics_oracle: MetricSet) -> MetricSet:
    """Subtract the oracle's estimand values; invalidity propagates."""
    corrected = {}
    invalid = set(metrics_method.invalid)
    for name in ESTIMANDS:
        m = metrics_method.value(name)
        o = metrics_oracle.value(name)
        if name in metrics_method.invalid or name in metrics_oracle.invalid:
            corrected[name] = math.nan
            invalid.add(name)
        else:
            corrected[name] = m - o
    return MetricSet(
        bs=metrics_method.bs, bs_scaled=metrics_method.bs_scaled,
        ls=metrics_method.ls, auc=metrics_method.auc,
        calib_a=metrics_method.calib_a, calib_b=metrics_method.calib_b,
        invalid=frozenset(invalid), corrected=corrected,
    )


def squared_error_variance(y, probs) -> float:
    """Sample variance of the per-observation squared errors (y - yhat)^2.

    This is the Var{(y - yhat)^2} term that drives the replication-count
    formula; the worst case over a pilot run bounds it.
    """
    y, probs = _check_pair(y, probs)
    sq = (y - probs) ** 2
    if len(sq) < 2:
        return 0.0
    return float(np.var(sq, ddof=1))
