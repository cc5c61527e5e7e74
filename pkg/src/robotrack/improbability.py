"""Improbability Filter: a Mahalanobis gate in front of a Gaussian filter.

A measurement whose innovation is too improbable under the predicted
measurement distribution is discarded. The wrapped filter then performs a
prediction-only cycle, so its covariance keeps growing through the process
noise until new measurements become likely again.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .filters.base import Filter
from .filters.smc import ParticleFilter
from .numerics import NotPositiveDefinite

#: 0.99 quantile of the chi-square distribution with 3 degrees of freedom.
DEFAULT_THRESHOLD = 11.345

MODES = ("mahalanobis", "likelihood")


@dataclass(frozen=True)
class GateConfig:
    """Gate threshold on the squared Mahalanobis distance, and test mode.

    In ``likelihood`` mode the Gaussian innovation density is compared with
    the density at distance ``threshold``; both modes take the same
    decisions because the density is monotone in the distance.
    """

    threshold: float = DEFAULT_THRESHOLD
    mode: str = "mahalanobis"

    def __post_init__(self):
        if not (math.isfinite(self.threshold) and self.threshold > 0):
            raise ValueError(f"gate threshold must be positive, got {self.threshold!r}")
        if self.mode not in MODES:
            raise ValueError(f"gate mode must be one of {MODES}, got {self.mode!r}")


_SMALL = 4


def _small_mahalanobis(a, b) -> float:
    # plain-float Cholesky and forward solve; numpy call overhead dominates at n <= 4
    n = len(b)
    L = [[0.0] * n for _ in range(n)]
    z = [0.0] * n
    for i in range(n):
        Li = L[i]
        for j in range(i + 1):
            Lj = L[j]
            s = a[i][j]
            for k in range(j):
                s -= Li[k] * Lj[k]
            if i == j:
                if not s > 0.0:
                    raise NotPositiveDefinite("innovation covariance is not positive definite")
                Li[i] = math.sqrt(s)
            else:
                Li[j] = s / Lj[j]
        s = b[i]
        for k in range(i):
            s -= Li[k] * z[k]
        z[i] = s / Li[i]
    return sum(v * v for v in z)


def innovation_distance(y, yhat, S, angle_index=None) -> float:
    """Squared Mahalanobis distance of ``y - yhat`` under covariance ``S``.

    Raises
    ------
    NotPositiveDefinite
        If ``S`` is not positive definite.
    """
    r = np.asarray(y, dtype=float) - yhat
    if angle_index is not None:
        a = float(r[angle_index])
        r[angle_index] = math.pi - (math.pi - a) % (2.0 * math.pi)
    if len(r) <= _SMALL:
        d2 = _small_mahalanobis(np.asarray(S, dtype=float).tolist(), r.tolist())
    else:
        try:
            L = np.linalg.cholesky(S)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefinite(str(exc)) from None
        z = np.linalg.solve(L, r)
        d2 = float(z @ z)
    if not math.isfinite(d2):
        raise NotPositiveDefinite("innovation covariance is not finite")
    return d2


def gate(y, yhat, S, cfg: GateConfig = GateConfig(), angle_index=None) -> bool:
    """``True`` to accept the measurement ``y``, ``False`` to reject it."""
    d2 = innovation_distance(y, yhat, S, angle_index)
    if cfg.mode == "mahalanobis":
        return not d2 > cfg.threshold
    # log N(r; 0, S) against log of the density at the threshold distance;
    # the shared normalizer cancels but is kept to mirror the density test
    S = np.asarray(S, dtype=float)
    log_norm = -0.5 * (len(S) * math.log(2 * math.pi) + math.log(np.linalg.det(S)))
    return not (log_norm - 0.5 * d2 < log_norm - 0.5 * cfg.threshold)


class GatedFilter(Filter):
    """Wraps a Gaussian-family filter with the improbability gate.

    Parameters
    ----------
    inner : Filter
        Any filter exposing ``predicted_measurement`` and
        ``skip_correction``. The bootstrap particle filter is refused: it
        does not assume Gaussian measurement noise, so the gate is never
        paired with it.
    cfg : GateConfig
    """

    def __init__(self, inner: Filter, cfg: GateConfig = GateConfig()):
        if isinstance(inner, ParticleFilter):
            raise TypeError("the improbability gate is not paired with the particle filter")
        super().__init__(inner.model)
        self.inner = inner
        self.cfg = cfg
        self.name = f"{inner.name}+IF"
        self.rejections = 0
        self.last_accepted = True

    @property
    def resets(self):
        return self.inner.resets

    @resets.setter
    def resets(self, value):
        # the base initializer assigns a counter; the inner filter owns it
        pass

    @property
    def frame(self):
        return self.inner.frame

    @frame.setter
    def frame(self, value):
        pass

    @property
    def estimate(self):
        return self.inner.estimate

    def predict(self, u):
        self.inner.predict(u)

    def predicted_measurement(self):
        return self.inner.predicted_measurement()

    def correct(self, y):
        yhat, S = self.inner.predicted_measurement()
        self.last_accepted = gate(y, yhat, S, self.cfg, self.model.angle_index)
        if self.last_accepted:
            self.inner.correct(y)
        else:
            self.rejections += 1
            self.inner.skip_correction()

    def skip_correction(self):
        self.inner.skip_correction()

    def predict_ahead(self, n, inputs):
        return self.inner.predict_ahead(n, inputs)

    def __getattr__(self, item):
        # expose the wrapped filter's belief (cov, belief, predict_belief, ...)
        if item == "inner":
            raise AttributeError(item)
        return getattr(self.inner, item)
