"""
Welfare and malfare aggregators: weighted power means, generalized Gini,
utilitarian-maximin and the Gini power mean, with their (sub)gradients.
"""
import logging
import math
from typing import Union

import numpy as np

from robustfair.exceptions import DimensionMismatchError, DomainError
from robustfair.models import (
    GEOMETRIC_BRANCH_THRESHOLD,
    Gini,
    GiniPowerMean,
    PowerMean,
    RobustAggregator,
    Sense,
    Umswf,
    check_welfare_validity,
    sentiment_array,
    sentiment_sense,
    weight_array,
)

logger = logging.getLogger(__name__)

__all__ = [
    "power_mean",
    "gini",
    "umswf",
    "gini_power_mean",
    "aggregate",
    "gradient",
    "effective_weights",
    "weight_gradient",
    "utility_transform",
    "check_welfare_validity",
]


def _check_lengths(s: np.ndarray, w: np.ndarray) -> None:
    if s.shape != w.shape:
        raise DimensionMismatchError(f"sentiment has {s.size} entries, weights have {w.size}")


def _check_nonnegative(s: np.ndarray) -> None:
    if np.any(s < 0):
        raise DomainError("power means require nonnegative sentiment")


def _power_mean(s: np.ndarray, w: np.ndarray, p: float) -> float:
    """Power mean on validated arrays; zero-weight coordinates are ignored"""
    support = w > 0
    vals, wts = s[support], w[support]
    if math.isinf(p):
        return float(vals.min() if p < 0 else vals.max())
    if abs(p) < GEOMETRIC_BRANCH_THRESHOLD:
        if np.any(vals == 0):
            return 0.0
        return float(np.exp(wts @ np.log(vals)))
    if p < 0:
        if np.any(vals == 0):
            return 0.0
        scale = vals.min()
    else:
        scale = vals.max()
        if scale == 0:
            return 0.0
    # scaled so x**p stays in [0, 1]
    x = vals / scale
    return float(scale * (wts @ x ** p) ** (1.0 / p))


def power_mean(S, w, p: float) -> float:
    """
    Weighted power mean M_p(S; w).

    p = 0 is the geometric mean, p = -inf/+inf the min/max over coordinates
    with positive weight. For p <= 0 a zero coordinate with positive weight
    gives 0.
    """
    s = sentiment_array(S)
    wts = weight_array(w)
    _check_lengths(s, wts)
    _check_nonnegative(s)
    return _power_mean(s, wts, float(p))


def gini(S, a: Gini) -> float:
    """Generalized Gini: w_asc . S_desc for welfare, w_desc . S_desc for malfare"""
    s = sentiment_array(S)
    w = a.sorted_weights.as_array()
    _check_lengths(s, w)
    descending = s[np.argsort(-s, kind="stable")]
    paired = w if a.sense == Sense.UTILITY else w[::-1]
    return float(paired @ descending)


def umswf(S, gamma: float, w_star, sense: Sense = None) -> float:
    """gamma * (w_star . S) + (1 - gamma) * min S (max S for disutility)"""
    if not 0.0 <= gamma <= 1.0:
        raise DomainError(f"gamma must lie in [0, 1], got {gamma}")
    s = sentiment_array(S)
    w = weight_array(w_star)
    _check_lengths(s, w)
    sense = sense or sentiment_sense(S)
    extreme = s.min() if sense == Sense.UTILITY else s.max()
    return float(gamma * (w @ s) + (1.0 - gamma) * extreme)


def _gini_power_pairing(s: np.ndarray, a: GiniPowerMean):
    order = np.argsort(s, kind="stable")
    w = a.sorted_weights.as_array()
    paired = w[::-1] if a.sense == Sense.UTILITY else w
    return order, paired


def gini_power_mean(S, a: GiniPowerMean) -> float:
    """Sort S ascending, pair with descending (welfare) or ascending (malfare) weights, take M_p"""
    s = sentiment_array(S)
    _check_lengths(s, a.sorted_weights.as_array())
    _check_nonnegative(s)
    order, paired = _gini_power_pairing(s, a)
    return _power_mean(s[order], paired, a.p)


AggregatorLike = Union[PowerMean, Gini, Umswf, GiniPowerMean, RobustAggregator]


def aggregate(a: AggregatorLike, S) -> float:
    """Evaluate any aggregator, robust aggregators included"""
    if isinstance(a, PowerMean):
        return power_mean(S, a.weights, a.p)
    if isinstance(a, Gini):
        return gini(S, a)
    if isinstance(a, Umswf):
        return umswf(S, a.gamma, a.base_weights)
    if isinstance(a, GiniPowerMean):
        return gini_power_mean(S, a)
    if isinstance(a, RobustAggregator):
        from robustfair.weightsets import robust_aggregate
        return robust_aggregate(S, a).value
    raise DomainError(f"unknown aggregator {type(a).__name__}")


def effective_weights(a: AggregatorLike, S) -> np.ndarray:
    """The weight vector, aligned with S, that the aggregator applies at S"""
    s = sentiment_array(S)
    if isinstance(a, PowerMean):
        return a.weights.as_array()
    if isinstance(a, Gini):
        w = a.sorted_weights.as_array()
        _check_lengths(s, w)
        paired = w if a.sense == Sense.UTILITY else w[::-1]
        out = np.empty_like(s)
        out[np.argsort(-s, kind="stable")] = paired
        return out
    if isinstance(a, GiniPowerMean):
        _check_lengths(s, a.sorted_weights.as_array())
        order, paired = _gini_power_pairing(s, a)
        out = np.empty_like(s)
        out[order] = paired
        return out
    if isinstance(a, Umswf):
        w = a.base_weights.as_array()
        _check_lengths(s, w)
        extreme = np.zeros_like(s)
        sense = sentiment_sense(S)
        extreme[int(np.argmin(s) if sense == Sense.UTILITY else np.argmax(s))] = 1.0
        return a.gamma * w + (1.0 - a.gamma) * extreme
    if isinstance(a, RobustAggregator):
        from robustfair.weightsets import robust_aggregate
        return robust_aggregate(S, a).w.as_array()
    raise DomainError(f"unknown aggregator {type(a).__name__}")


def _power_mean_gradient(s: np.ndarray, w: np.ndarray, p: float) -> np.ndarray:
    grad = np.zeros_like(s)
    support = w > 0
    if math.isinf(p):
        idx = np.flatnonzero(support)
        pick = np.argmin(s[idx]) if p < 0 else np.argmax(s[idx])
        grad[idx[pick]] = 1.0
        return grad
    zero = np.any(s[support] == 0)
    if p <= 0 and zero:
        raise DomainError(f"gradient of M_p is undefined at zero sentiment for p={p}")
    value = _power_mean(s, w, p)
    if abs(p) < GEOMETRIC_BRANCH_THRESHOLD:
        grad[support] = value * w[support] / s[support]
        return grad
    if value == 0:
        if p < 1:
            raise DomainError(f"gradient of M_p is undefined at the origin for p={p}")
        # p >= 1 at the origin: w is a subgradient
        return w.copy()
    # 0 < p < 1: zero coordinates have an infinite partial derivative
    with np.errstate(divide="ignore"):
        grad[support] = w[support] * (s[support] / value) ** (p - 1.0)
    return grad


def gradient(a: AggregatorLike, S) -> np.ndarray:
    """
    (Sub)gradient of the aggregator with respect to S.

    Power means use dM/dS_i = w_i S_i^(p-1) M^(1-p); the infinite orders and the
    sort-based families return the gradient of the active coordinate or of the
    fixed stable-sort pairing at S.
    """
    s = sentiment_array(S)
    if isinstance(a, PowerMean):
        w = a.weights.as_array()
        _check_lengths(s, w)
        _check_nonnegative(s)
        return _power_mean_gradient(s, w, a.p)
    if isinstance(a, (Gini, Umswf)):
        return effective_weights(a, S)
    if isinstance(a, GiniPowerMean):
        _check_lengths(s, a.sorted_weights.as_array())
        _check_nonnegative(s)
        order, paired = _gini_power_pairing(s, a)
        grad = np.empty_like(s)
        grad[order] = _power_mean_gradient(s[order], paired, a.p)
        return grad
    if isinstance(a, RobustAggregator):
        from robustfair.weightsets import robust_aggregate
        response = robust_aggregate(S, a)
        _check_nonnegative(s)
        return _power_mean_gradient(s, response.w.as_array(), a.p)
    raise DomainError(f"unknown aggregator {type(a).__name__}")


def weight_gradient(p: float, S, w) -> np.ndarray:
    """Gradient of M_p(S; w) with respect to w"""
    s = sentiment_array(S)
    wts = weight_array(w)
    _check_lengths(s, wts)
    _check_nonnegative(s)
    if math.isinf(p):
        return np.zeros_like(s)
    if p <= 0 and np.any(s == 0):
        raise DomainError("weight gradient is undefined at zero sentiment for p <= 0")
    value = _power_mean(s, wts, p)
    if abs(p) < GEOMETRIC_BRANCH_THRESHOLD:
        return value * np.log(s)
    if value == 0:
        return np.zeros_like(s)
    return (value / p) * (s / value) ** p


def utility_transform(S, p: float) -> np.ndarray:
    """T(u) = sgn(p) u^p, and ln u at p = 0"""
    s = sentiment_array(S)
    _check_nonnegative(s)
    if math.isinf(p):
        raise DomainError("utility transform needs a finite p")
    if p <= 0 and np.any(s == 0):
        raise DomainError("utility transform needs positive sentiment for p <= 0")
    if abs(p) < GEOMETRIC_BRANCH_THRESHOLD:
        return np.log(s)
    return math.copysign(1.0, p) * s ** p
