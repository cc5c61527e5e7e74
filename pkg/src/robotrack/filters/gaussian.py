"""Gaussian-assumption filters: EKF and six sigma-point variants.

UKF and CDKF propagate the full covariance and refactor it at every step;
DD1, DD2, SRUKF and SRCDKF carry a lower-triangular square-root factor.
All process and measurement noise is additive.

The square-root recursions are written for a leading batch dimension so
the particle-bank filters in :mod:`robotrack.filters.smc` can run hundreds
of them at once; the single-instance classes use a batch of one.
"""

from __future__ import annotations

import numpy as np

from ..numerics import (
    NotPositiveDefinite,
    cholesky,
    cholesky_trusted,
    cholupdate_batch,
    cholupdate_rank,
    sqrt_factor,
    symmetrize,
)
from .base import Filter, GaussianBelief

CD_STEP = np.sqrt(3.0)


def ut_weights(n: int, alpha: float = 1.0, beta: float = 2.0, kappa: float | None = None):
    """Scaled unscented-transform weights ``(spread, wm, wc)``.

    ``kappa`` defaults to ``3 - n``; if that makes ``n + lambda`` non-positive
    the transform falls back to ``kappa = 0``.
    """
    if kappa is None:
        kappa = 3.0 - n
    lam = alpha**2 * (n + kappa) - n
    if n + lam <= 0:
        kappa = 0.0
        lam = alpha**2 * n - n
    wm = np.full(2 * n + 1, 0.5 / (n + lam))
    wm[0] = lam / (n + lam)
    wc = wm.copy()
    wc[0] += 1.0 - alpha**2 + beta
    return np.sqrt(n + lam), wm, wc


def cd_weights(n: int, h: float = CD_STEP):
    """Central-difference weights ``(w0, wi, sqrt_w1, sqrt_w2)``."""
    return (h * h - n) / (h * h), 1.0 / (2 * h * h), 1.0 / (2 * h), np.sqrt(h * h - 1) / (2 * h * h)


def sigma_points(mean: np.ndarray, factor: np.ndarray, spread: float) -> np.ndarray:
    """``[x, x + c S_j, x - c S_j]`` stacked on axis ``-2``.

    ``mean`` is ``(..., n)``; ``factor`` is ``(..., n, n)``.
    """
    cols = spread * np.swapaxes(factor, -1, -2)
    x = mean[..., None, :]
    return np.concatenate([x, x + cols, x - cols], axis=-2)


class SigmaPointSet:
    def __init__(self, points, mean_weights, cov_weights):
        self.points = points
        self.mean_weights = mean_weights
        self.cov_weights = cov_weights

    def mean(self):
        return self.mean_weights @ self.points

    def cov(self):
        d = self.points - self.mean()
        return (d.T * self.cov_weights) @ d


def unscented_sigma_points(mean, cov, alpha=1.0, beta=2.0, kappa=None) -> SigmaPointSet:
    mean = np.asarray(mean, dtype=float)
    spread, wm, wc = ut_weights(mean.shape[-1], alpha, beta, kappa)
    return SigmaPointSet(sigma_points(mean, cholesky(cov), spread), wm, wc)


def _deviation(model, Z, zhat):
    return model.residual(Z, zhat[..., None, :])


# ---------------------------------------------------------------------------
# Batched square-root recursions
# ---------------------------------------------------------------------------

class SquareRootCore:
    """Square-root time and measurement updates, batched over axis 0.

    ``kind`` is ``"ukf"`` (unscented transform) or ``"cdkf"`` (central
    differences with step ``h``).
    """

    def __init__(self, model, kind: str, alpha=1.0, beta=2.0, kappa=None, h=CD_STEP):
        if kind not in ("ukf", "cdkf"):
            raise ValueError(f"unknown square-root kind {kind!r}")
        self.model = model
        self.kind = kind
        n = model.n
        self.n = n
        self.sq = cholesky(model.Q)
        self.sr = cholesky(model.R)
        if kind == "ukf":
            self.spread, self.wm, self.wc = ut_weights(n, alpha, beta, kappa)
            self.sqrt_wc1 = np.sqrt(self.wc[1])
            self.sqrt_wc0 = np.sqrt(abs(self.wc[0]))
            self.sign_wc0 = 1.0 if self.wc[0] >= 0 else -1.0
        else:
            self.spread = h
            self.w0, self.wi, self.sw1, self.sw2 = cd_weights(n, h)

    def _ut_factor(self, D, noise):
        """Factor of ``sum_k wc_k D_k D_k^T + noise noise^T`` for deviations ``D``.

        A non-negative central weight joins the QR compound matrix; a
        negative one is applied afterwards as a rank-one downdate.
        """
        cols = [self.sqrt_wc1 * np.swapaxes(D[:, 1:], 1, 2), noise]
        if self.sign_wc0 > 0:
            cols.append(self.sqrt_wc0 * D[:, 0, :, None])
            return sqrt_factor(np.concatenate(cols, axis=2)), np.ones(D.shape[0], dtype=bool)
        S = sqrt_factor(np.concatenate(cols, axis=2))
        return cholupdate_batch(S, self.sqrt_wc0 * D[:, 0], -1.0)

    def _cd_moments(self, Y, dev):
        n = self.n
        y0, yp, ym = Y[..., :1, :], Y[..., 1 : n + 1, :], Y[..., n + 1 :, :]
        mean = self.w0 * Y[..., 0, :] + self.wi * np.sum(yp + ym, axis=-2)
        first = self.sw1 * dev(yp, ym)
        second = self.sw2 * (dev(yp, y0) + dev(ym, y0))
        return mean, first, second

    def time_update(self, x, S, u):
        """Returns ``(x_prior, S_prior, ok, Y)``; ``Y[:, 0]`` is ``f(x, u)``."""
        model = self.model
        X = sigma_points(x, S, self.spread)
        Y = model.f(X, u)
        batch = x.shape[0]
        sq = np.broadcast_to(self.sq, (batch,) + self.sq.shape)
        if self.kind == "ukf":
            xp = self.wm @ Y
            Sp, ok = self._ut_factor(Y - xp[:, None, :], sq)
        else:
            xp, first, second = self._cd_moments(Y, lambda a, b: a - b)
            blocks = np.concatenate([np.swapaxes(first, 1, 2), sq, np.swapaxes(second, 1, 2)], axis=2)
            Sp = sqrt_factor(blocks)
            ok = np.all(np.diagonal(Sp, axis1=1, axis2=2) > 0, axis=1)
        return xp, Sp, ok, Y

    def measurement(self, xp, Sp):
        """Predicted measurement moments ``(zhat, Sz, Pxz, ok)``."""
        model = self.model
        X = sigma_points(xp, Sp, self.spread)
        Z = model.h(X)
        batch = xp.shape[0]
        sr = np.broadcast_to(self.sr, (batch,) + self.sr.shape)
        if self.kind == "ukf":
            zhat = self.wm @ Z
            dZ = _deviation(model, Z, zhat)
            Sz, ok = self._ut_factor(dZ, sr)
            dX = X - xp[:, None, :]
            Pxz = np.swapaxes(dX * self.wc[:, None], 1, 2) @ dZ
        else:
            zhat, first, second = self._cd_moments(Z, model.residual)
            blocks = np.concatenate([np.swapaxes(first, 1, 2), sr, np.swapaxes(second, 1, 2)], axis=2)
            Sz = sqrt_factor(blocks)
            ok = np.all(np.diagonal(Sz, axis1=1, axis2=2) > 0, axis=1)
            Pxz = Sp @ first
        return zhat, Sz, Pxz, ok

    def correct(self, xp, Sp, zhat, Sz, Pxz, y):
        """Posterior ``(x, S, ok)``; ``S`` comes from rank-one downdates of ``Sp``."""
        # K = Pxz Sz^-T Sz^-1 and U = K Sz = Pxz Sz^-T
        Sz_inv = np.linalg.inv(Sz)
        U = Pxz @ np.swapaxes(Sz_inv, 1, 2)
        K = U @ Sz_inv
        innov = self.model.residual(y, zhat)
        x = xp + (K @ innov[..., None])[..., 0]
        S, ok = cholupdate_rank(Sp, U, -1.0)
        return x, S, ok


# ---------------------------------------------------------------------------
# Single-instance filters
# ---------------------------------------------------------------------------

def _mean_rollout(filt, n, inputs):
    out = np.empty((n, filt.x.shape[0]))
    x = filt.x
    for k in range(n):
        x = filt.model.f(x, inputs[k])
        out[k] = x
    return out


class GaussianFilter(Filter):
    """Common state handling for filters with a Gaussian belief."""

    def __init__(self, model, x0, P0):
        super().__init__(model)
        self.x = np.array(x0, dtype=float)
        self.P0 = np.array(P0, dtype=float)
        self.x_prior = None
        self._meas = None

    @property
    def estimate(self):
        return self.x

    @property
    def belief(self) -> GaussianBelief:
        return GaussianBelief(self.x.copy(), self.cov.copy(), self.frame)

    def skip_correction(self):
        self._commit_prior()
        self.frame += 1

    def predict_belief(self, n: int, inputs) -> GaussianBelief:
        """Belief after ``n`` prediction-only steps; the filter is not modified."""
        state = self._snapshot()
        resets = self.resets
        try:
            for k in range(n):
                self.predict(inputs[k])
                self._commit_prior()
            return GaussianBelief(self.x.copy(), self.cov.copy(), self.frame + n)
        finally:
            self._restore(state)
            self.resets = resets


class EKF(GaussianFilter):
    """Extended Kalman filter with first-order Taylor linearization."""

    name = "EKF"

    def __init__(self, model, x0, P0):
        super().__init__(model, x0, P0)
        self.P = np.array(P0, dtype=float)
        self.P_prior = None

    @property
    def cov(self):
        return self.P

    def _snapshot(self):
        return (self.x, self.P, self.x_prior, self.P_prior, self._meas)

    def _restore(self, s):
        self.x, self.P, self.x_prior, self.P_prior, self._meas = s

    def _commit_prior(self):
        self.x, self.P = self.x_prior, self.P_prior

    def predict(self, u):
        F = self.model.jac_f(self.x, u)
        self.x_prior = self.model.f(self.x, u)
        self.P_prior = F @ self.P @ F.T + self.model.Q
        self._meas = None

    def predicted_measurement(self):
        if self._meas is None:
            H = self.model.jac_h(self.x_prior)
            S = H @ self.P_prior @ H.T + self.model.R
            self._meas = (self.model.h(self.x_prior), S, H)
        return self._meas[0], self._meas[1]

    def correct(self, y):
        yhat, S = self.predicted_measurement()
        H = self._meas[2]
        try:
            cholesky_trusted(S)
        except NotPositiveDefinite:
            self.resets += 1
            self.x, self.P = self.x_prior, self.P0.copy()
            self.frame += 1
            return
        HP = H @ self.P_prior
        K = np.linalg.solve(S, HP).T
        self.x = self.x_prior + K @ self.model.residual(y, yhat)
        self.P = symmetrize(self.P_prior - K @ HP)
        self.frame += 1

    def predict_ahead(self, n, inputs):
        # the EKF mean recursion does not depend on the covariance
        return _mean_rollout(self, n, inputs)


class _FullCovSigmaFilter(GaussianFilter):
    """UKF / CDKF: sigma points drawn from a freshly factored covariance."""

    def __init__(self, model, x0, P0):
        super().__init__(model, x0, P0)
        self.P = np.array(P0, dtype=float)
        self.P_prior = None

    @property
    def cov(self):
        return self.P

    def _snapshot(self):
        return (self.x, self.P, self.x_prior, self.P_prior, self._meas)

    def _restore(self, s):
        self.x, self.P, self.x_prior, self.P_prior, self._meas = s

    def _commit_prior(self):
        self.x, self.P = self.x_prior, self.P_prior

    def _factor(self, P):
        """Cholesky factor of ``P``; resets to ``P0`` when it is not PD."""
        try:
            return cholesky_trusted(P), P
        except NotPositiveDefinite:
            self.resets += 1
            return cholesky(self.P0), self.P0.copy()

    def predict(self, u):
        L, self.P = self._factor(self.P)
        X = sigma_points(self.x, L, self.spread)
        Y = self.model.f(X, u)
        self.x_prior, self.P_prior = self._moments(Y, lambda a, b: a - b)
        self.P_prior = symmetrize(self.P_prior + self.model.Q)
        self._meas = None

    def predicted_measurement(self):
        if self._meas is None:
            L, self.P_prior = self._factor(self.P_prior)
            X = sigma_points(self.x_prior, L, self.spread)
            Z = self.model.h(X)
            zhat, Pzz = self._moments(Z, self.model.residual)
            Pzz = Pzz + self.model.R
            Pxz = self._cross(X, Z, zhat, L)
            self._meas = (zhat, Pzz, Pxz)
        return self._meas[0], self._meas[1]

    def correct(self, y):
        zhat, Pzz = self.predicted_measurement()
        Pxz = self._meas[2]
        try:
            Lz = cholesky_trusted(Pzz)
        except NotPositiveDefinite:
            self.resets += 1
            self.x, self.P = self.x_prior, self.P0.copy()
            self.frame += 1
            return
        K = np.linalg.solve(Lz.T, np.linalg.solve(Lz, Pxz.T)).T
        self.x = self.x_prior + K @ self.model.residual(y, zhat)
        self.P = symmetrize(self.P_prior - K @ Pzz @ K.T)
        self.frame += 1

    def predict_ahead(self, n, inputs):
        out = np.empty((n, self.x.shape[0]))
        state = self._snapshot()
        resets = self.resets
        try:
            for k in range(n):
                self.predict(inputs[k])
                self._commit_prior()
                out[k] = self.x
        finally:
            self._restore(state)
            self.resets = resets
        return out


class UKF(_FullCovSigmaFilter):
    """Unscented Kalman filter (scaled unscented transform)."""

    name = "UKF"

    def __init__(self, model, x0, P0, alpha=1.0, beta=2.0, kappa=None):
        super().__init__(model, x0, P0)
        self.spread, self.wm, self.wc = ut_weights(model.n, alpha, beta, kappa)

    def _moments(self, Y, dev):
        mean = self.wm @ Y
        D = dev(Y, mean)
        return mean, (D.T * self.wc) @ D

    def _cross(self, X, Z, zhat, L):
        dX = X - self.x_prior
        dZ = self.model.residual(Z, zhat)
        return (dX.T * self.wc) @ dZ


class CDKF(_FullCovSigmaFilter):
    """Central-difference Kalman filter (second-order Stirling interpolation)."""

    name = "CDKF"

    def __init__(self, model, x0, P0, h=CD_STEP):
        super().__init__(model, x0, P0)
        self.spread = h
        self.w0, self.wi, self.sw1, self.sw2 = cd_weights(model.n, h)

    def _moments(self, Y, dev):
        n = self.model.n
        y0, yp, ym = Y[0], Y[1 : n + 1], Y[n + 1 :]
        mean = self.w0 * y0 + self.wi * np.sum(yp + ym, axis=0)
        A = self.sw1 * dev(yp, ym)
        B = self.sw2 * (dev(yp, y0) + dev(ym, y0))
        return mean, A.T @ A + B.T @ B

    def _cross(self, X, Z, zhat, L):
        n = self.model.n
        A = self.sw1 * self.model.residual(Z[1 : n + 1], Z[n + 1 :])
        return L @ A


class _SqrtFilter(GaussianFilter):
    """Filters carrying a lower-triangular factor ``S`` with ``S S^T = P``."""

    def __init__(self, model, x0, P0):
        super().__init__(model, x0, P0)
        self.S = cholesky(P0)
        self.S0 = self.S.copy()
        self.S_prior = None

    @property
    def cov(self):
        return self.S @ self.S.T

    @property
    def P(self):
        return self.cov

    def _snapshot(self):
        return (self.x, self.S, self.x_prior, self.S_prior, self._meas)

    def _restore(self, s):
        self.x, self.S, self.x_prior, self.S_prior, self._meas = s

    def _commit_prior(self):
        self.x, self.S = self.x_prior, self.S_prior

    def predict_ahead(self, n, inputs):
        out = np.empty((n, self.x.shape[0]))
        state = self._snapshot()
        resets = self.resets
        try:
            for k in range(n):
                self.predict(inputs[k])
                self._commit_prior()
                out[k] = self.x
        finally:
            self._restore(state)
            self.resets = resets
        return out


class _DividedDifference(_SqrtFilter):
    """Divided-difference filters of first (DD1) or second (DD2) order."""

    order = 2

    def __init__(self, model, x0, P0, h=CD_STEP):
        super().__init__(model, x0, P0)
        self.h = self.spread = h
        self.w0, self.wi, self.sw1, self.sw2 = cd_weights(model.n, h)
        self.sq = cholesky(model.Q)
        self.sr = cholesky(model.R)

    def _differences(self, fn, x, S, dev):
        """Returns ``(f(x), mean, first, second)`` column-wise difference blocks."""
        n = self.model.n
        X = sigma_points(x, S, self.h)
        Y = fn(X)
        y0, yp, ym = Y[0], Y[1 : n + 1], Y[n + 1 :]
        first = self.sw1 * dev(yp, ym).T
        if self.order == 1:
            return y0, y0, first, None
        second = self.sw2 * (dev(yp, y0) + dev(ym, y0)).T
        mean = self.w0 * y0 + self.wi * np.sum(yp + ym, axis=0)
        return y0, mean, first, second

    def predict(self, u):
        _, self.x_prior, first, second = self._differences(
            lambda X: self.model.f(X, u), self.x, self.S, lambda a, b: a - b
        )
        blocks = [first, self.sq] if second is None else [first, self.sq, second]
        self.S_prior = sqrt_factor(np.hstack(blocks))
        self._meas = None

    def predicted_measurement(self):
        if self._meas is None:
            _, zhat, first, second = self._differences(self.model.h, self.x_prior, self.S_prior, self.model.residual)
            blocks = [first, self.sr] if second is None else [first, self.sr, second]
            Sy = sqrt_factor(np.hstack(blocks))
            self._meas = (zhat, Sy @ Sy.T, Sy, first, second)
        return self._meas[0], self._meas[1]

    def correct(self, y):
        zhat, _ = self.predicted_measurement()
        _, _, Sy, first, second = self._meas
        Pxz = self.S_prior @ first.T
        K = np.linalg.solve(Sy.T, np.linalg.solve(Sy, Pxz.T)).T
        self.x = self.x_prior + K @ self.model.residual(y, zhat)
        blocks = [self.S_prior - K @ first, K @ self.sr]
        if second is not None:
            blocks.append(K @ second)
        self.S = sqrt_factor(np.hstack(blocks))
        self.frame += 1


class DD1(_DividedDifference):
    """Divided-difference filter, first-order Stirling interpolation."""

    name = "DD1"
    order = 1

    def predict_ahead(self, n, inputs):
        # first-order interpolation predicts the mean as f(x)
        return _mean_rollout(self, n, inputs)


class DD2(_DividedDifference):
    """Divided-difference filter, second-order Stirling interpolation."""

    name = "DD2"
    order = 2


class _SquareRootSigmaFilter(_SqrtFilter):
    kind = "ukf"

    def __init__(self, model, x0, P0, **tuning):
        super().__init__(model, x0, P0)
        self.core = SquareRootCore(model, self.kind, **tuning)

    def _reset_factor(self):
        self.resets += 1
        return self.S0.copy()

    def predict(self, u):
        xp, Sp, ok, _ = self.core.time_update(self.x[None], self.S[None], u)
        self.x_prior = xp[0]
        self.S_prior = Sp[0] if ok[0] else self._reset_factor()
        self._meas = None

    def predicted_measurement(self):
        if self._meas is None:
            zhat, Sz, Pxz, ok = self.core.measurement(self.x_prior[None], self.S_prior[None])
            if not ok[0]:
                self.S_prior = self._reset_factor()
                zhat, Sz, Pxz, ok = self.core.measurement(self.x_prior[None], self.S_prior[None])
            self._meas = (zhat, Sz, Pxz)
        zhat, Sz, _ = self._meas
        return zhat[0], Sz[0] @ Sz[0].T

    def correct(self, y):
        self.predicted_measurement()
        zhat, Sz, Pxz = self._meas
        x, S, ok = self.core.correct(self.x_prior[None], self.S_prior[None], zhat, Sz, Pxz, y)
        self.x = x[0]
        self.S = S[0] if ok[0] else self._reset_factor()
        self.frame += 1


class SRUKF(_SquareRootSigmaFilter):
    """Square-root unscented Kalman filter."""

    name = "SRUKF"
    kind = "ukf"

    def __init__(self, model, x0, P0, alpha=1.0, beta=2.0, kappa=None):
        super().__init__(model, x0, P0, alpha=alpha, beta=beta, kappa=kappa)


class SRCDKF(_SquareRootSigmaFilter):
    """Square-root central-difference Kalman filter."""

    name = "SRCDKF"
    kind = "cdkf"

    def __init__(self, model, x0, P0, h=CD_STEP):
        super().__init__(model, x0, P0, h=h)


GAUSSIAN_FILTERS = {cls.name: cls for cls in (EKF, UKF, CDKF, DD1, DD2, SRUKF, SRCDKF)}
