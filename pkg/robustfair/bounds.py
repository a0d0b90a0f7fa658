"""
Robustness-gap, sandwich, continuity and sample-complexity calculators.
"""
import logging
import math
from typing import Iterable, List, Optional, Tuple

import numpy as np

from robustfair.aggregators import _power_mean, aggregate
from robustfair.config import get_settings
from robustfair.exceptions import DimensionMismatchError, DomainError
from robustfair.models import (
    Direction,
    HolderCertificate,
    HolderNorm,
    PowerMean,
    RobustAggregator,
    SampleComplexityQuery,
    Sense,
    SentimentVector,
    Umswf,
    sentiment_array,
    sentiment_sense,
)
from robustfair.schemas import CertificateSet, HolderCheck, Interval
from robustfair.weightsets import (
    _robust_weights,
    best_response,
    coordinate_bounds,
    diameter_l1,
    robust_aggregate,
    robust_power_mean,
)

logger = logging.getLogger(__name__)

HOLDER_SLACK = 1e-9


def sandwich(S, agg, W) -> Interval:
    """
    [inf, sup] over w in W of the aggregator with its weights replaced by w.

    Power means (plain or robust) keep their p; UMSWF replaces its base weights.
    """
    s = sentiment_array(S)
    if W.g != s.size or agg.g != s.size:
        raise DimensionMismatchError("aggregator, weight set and sentiment must share one dimension")
    if isinstance(agg, (PowerMean, RobustAggregator)):
        lo = robust_power_mean(s, agg.p, W, Direction.MINIMIZE).value
        hi = robust_power_mean(s, agg.p, W, Direction.MAXIMIZE).value
        return Interval(lo=lo, hi=hi)
    if isinstance(agg, Umswf):
        extreme = s.min() if sentiment_sense(S) == Sense.UTILITY else s.max()
        lo = best_response(W, s, Direction.MINIMIZE).value
        hi = best_response(W, s, Direction.MAXIMIZE).value
        mix = lambda linear: float(agg.gamma * linear + (1.0 - agg.gamma) * extreme)
        return Interval(lo=mix(lo), hi=mix(hi))
    raise DomainError(f"no sandwich for {agg.kind} aggregators")


def robust_gap_bound(S_range: float, W) -> float:
    """Range(S) * Diam_1(W): bounds how far the robust proxy can sit from the true-weight objective"""
    if S_range < 0:
        raise DomainError("sentiment range must be nonnegative")
    return float(S_range) * diameter_l1(W).value


def _certificate(lam: float, alpha: float, norm: HolderNorm, case: str) -> HolderCertificate:
    return HolderCertificate(lam=lam, alpha=alpha, norm=norm, case=case)


def tightest_certificate(certs: Iterable[HolderCertificate]) -> Optional[HolderCertificate]:
    """Largest exponent first, then the smallest constant"""
    certs = list(certs)
    if not certs:
        return None
    return min(certs, key=lambda c: (-c.alpha, c.lam))


def holder_certificate(p: float, W, r: float) -> CertificateSet:
    """
    Continuity certificates of S -> M_p(S; W) on [0, r]^g from the extreme
    coordinate values w_min, w_max of W.
    """
    if not r > 0:
        raise DomainError("r must be positive")
    bounds = coordinate_bounds(W)
    w_min, w_max = bounds.w_min, bounds.w_max
    certs: List[HolderCertificate] = []
    if p >= 1:
        certs.append(_certificate(1.0, 1.0, HolderNorm.LINF, "p>=1"))
        if p == 1:
            certs.append(_certificate(w_max, 1.0, HolderNorm.L1, "p=1"))
    if p == -math.inf:
        certs.append(_certificate(1.0, 1.0, HolderNorm.LINF, "p=-inf"))
    elif p < 0 and w_min > 0:
        certs.append(_certificate(w_min ** (-1.0 / abs(p)), 1.0, HolderNorm.LINF, "p<0"))
    if 0 < p < 1:
        certs.append(_certificate(r ** (1.0 - p) / p, p, HolderNorm.LINF, "0<p<1"))
    if p <= 1 and w_min > 0:
        certs.append(_certificate(r ** (1.0 - w_min), w_min, HolderNorm.LINF, "p<=1,w_min>0"))
    if not certs:
        logger.info("no continuity certificate for p=%s with w_min=%s", p, w_min)
    return CertificateSet(tightest=tightest_certificate(certs), applicable=certs, w_min=w_min, w_max=w_max)


def _aggregator_order(agg) -> Tuple[float, bool]:
    """(p, minimize) of the robust value an aggregator stands for"""
    if isinstance(agg, (PowerMean, RobustAggregator)):
        return float(agg.p), getattr(agg, "sense", Sense.UTILITY) == Sense.UTILITY
    raise DomainError(f"continuity checks need a power-mean aggregator, got {agg.kind}")


def _norm(x: np.ndarray, norm: HolderNorm, p: float, W, minimize: bool) -> float:
    if norm == HolderNorm.L1:
        return float(np.abs(x).sum())
    if norm == HolderNorm.L2:
        return float(np.linalg.norm(x))
    if norm == HolderNorm.LINF:
        return float(np.abs(x).max())
    magnitude = np.abs(x)
    return _power_mean(magnitude, _robust_weights(magnitude, p, W, minimize)[0], p)


def holder_ratio(agg, W, cert: HolderCertificate, S, S_prime) -> float:
    """|M(S;W) - M(S';W)| / (lambda ||S - S'||^alpha); 0 when S = S'"""
    p, minimize = _aggregator_order(agg)
    s, s2 = sentiment_array(S), sentiment_array(S_prime)
    return _ratio(s, s2, p, W, minimize, cert)


def _ratio(s: np.ndarray, s2: np.ndarray, p: float, W, minimize: bool, cert: HolderCertificate) -> float:
    distance = _norm(s - s2, cert.norm, p, W, minimize)
    if distance == 0:
        return 0.0
    a = _power_mean(s, _robust_weights(s, p, W, minimize)[0], p)
    b = _power_mean(s2, _robust_weights(s2, p, W, minimize)[0], p)
    return abs(a - b) / (cert.lam * distance ** cert.alpha)


def holder_empirical_check(
    agg, W, cert: HolderCertificate, trials: int = None, r: float = 1.0, seed: int = None
) -> HolderCheck:
    """Check the certificate on random pairs S, S' drawn uniformly from [0, r]^g"""
    settings = get_settings()
    trials = settings.holder_trials if trials is None else trials
    seed = settings.seed if seed is None else seed
    if trials < 1:
        raise DomainError("trials must be at least 1")
    if not r > 0:
        raise DomainError("r must be positive")
    p, minimize = _aggregator_order(agg)
    rng = np.random.default_rng(seed)
    pairs = rng.uniform(0.0, r, size=(trials, 2, W.g))
    worst = 0.0
    for s, s2 in pairs:
        worst = max(worst, _ratio(s, s2, p, W, minimize, cert))
    return HolderCheck(passed=worst <= 1.0 + HOLDER_SLACK, max_ratio=worst, trials=trials, seed=seed)


def generalization_sandwich(Shat, eps, agg) -> Interval:
    """(M(max(Shat - eps, 0)), M(Shat + eps)) for any monotone aggregator"""
    s = sentiment_array(Shat)
    e = np.asarray(eps, dtype=float)
    if e.shape != s.shape:
        raise DimensionMismatchError(f"epsilon has {e.size} entries, sentiment {s.size}")
    if np.any(e < 0) or not np.all(np.isfinite(e)):
        raise DomainError("epsilon must be finite and nonnegative")
    sense = sentiment_sense(Shat)
    lo = aggregate(agg, SentimentVector.of(np.maximum(s - e, 0.0), sense))
    hi = aggregate(agg, SentimentVector.of(s + e, sense))
    return Interval(lo=lo, hi=hi)


def _squared_root_variance_norm(q: SampleComplexityQuery) -> float:
    v = np.asarray(q.v, dtype=float)
    if q.norm == HolderNorm.LINF:
        return float(v.max())
    if q.norm == HolderNorm.L1:
        return float(np.sqrt(v).sum() ** 2)
    if q.norm == HolderNorm.L2:
        return float(v.sum())
    if q.aggregator is None:
        raise DomainError("the self-referential norm needs the query's aggregator")
    if q.aggregator.g != v.size:
        raise DimensionMismatchError("aggregator and variance proxies differ in dimension")
    return robust_aggregate(np.sqrt(v), q.aggregator).value ** 2


def sample_complexity_bound(q: SampleComplexityQuery) -> float:
    """(lambda/epsilon)^(2/alpha) * ||sqrt(v)||^2 * ln(t g / delta)"""
    return (
        (q.lam / q.epsilon) ** (2.0 / q.alpha)
        * _squared_root_variance_norm(q)
        * math.log(q.t * q.g / q.delta)
    )


def sample_complexity(q: SampleComplexityQuery) -> int:
    return max(q.m0, math.ceil(sample_complexity_bound(q)))
