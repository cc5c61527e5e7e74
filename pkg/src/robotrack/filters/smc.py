"""Sequential Monte Carlo filters: bootstrap PF, SPPF and GMSPPF."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numerics import NotPositiveDefinite, cholesky, cholesky_trusted, gaussian_logpdf
from .base import Filter
from .gaussian import CD_STEP, SquareRootCore

WEIGHT_FLOOR = 1e-6
COV_FLOOR = 1e-9


class WeightCollapse(RuntimeError):
    """Every unnormalized importance weight underflowed to zero."""


def normalize_log_weights(logw: np.ndarray) -> np.ndarray:
    """Normalized weights from log-weights, subtracting the max first.

    Raises
    ------
    WeightCollapse
        If no weight is finite.
    """
    top = np.max(logw)
    if not np.isfinite(top):
        raise WeightCollapse("all importance weights are zero")
    w = np.exp(logw - top)
    w /= w.sum()
    return w


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Indices drawn by systematic resampling (one uniform offset, stride 1/N)."""
    N = len(weights)
    positions = (rng.random() + np.arange(N)) / N
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    return np.searchsorted(cumulative, positions, side="right")


def effective_sample_size(weights: np.ndarray) -> float:
    return 1.0 / np.sum(weights * weights)


def _particle_rollout(filt, n, inputs):
    """Weighted means of ``n`` prediction-only steps of a particle cloud.

    Each step draws fresh process noise, exactly like the filter's own
    prediction. The draws come from a stream spawned for look-ahead only,
    so the filter's own random sequence, and hence every later step, is
    unaffected.
    """
    out = np.empty((n, filt.model.n))
    X = filt.particles
    rng = filt.ahead_rng
    for k in range(n):
        X = filt.model.f(X, inputs[k]) + rng.standard_normal(X.shape) @ filt.Lq.T
        out[k] = filt.weights @ X
    return out


class ParticleFilter(Filter):
    """Bootstrap particle filter with the transition prior as proposal.

    Particles are weighted by the Gaussian measurement likelihood and
    resampled every step unless ``ess_threshold`` is given, in which case
    resampling happens only when the effective sample size drops below
    ``ess_threshold * N``.
    """

    name = "PF"

    def __init__(self, model, x0, P0, n_particles: int = 600, rng=None, ess_threshold=None):
        super().__init__(model)
        self.rng = rng if rng is not None else np.random.default_rng()
        self.ahead_rng = self.rng.spawn(1)[0]
        self.N = int(n_particles)
        self.ess_threshold = ess_threshold
        self.P0 = np.asarray(P0, dtype=float)
        self.Lq = cholesky(model.Q)
        self.Lr = cholesky(model.R)
        self.Lr_inv = np.linalg.inv(self.Lr)
        self.particles = np.asarray(x0, dtype=float) + self.rng.standard_normal((self.N, model.n)) @ cholesky(P0).T
        self.weights = np.full(self.N, 1.0 / self.N)
        self.collapses = 0
        self._estimate = np.asarray(x0, dtype=float).copy()

    @property
    def estimate(self):
        return self._estimate

    def predict(self, u):
        noise = self.rng.standard_normal(self.particles.shape) @ self.Lq.T
        self.particles = self.model.f(self.particles, u) + noise

    def predicted_measurement(self):
        Z = self.model.h(self.particles)
        zhat = self.weights @ Z
        dZ = self.model.residual(Z, zhat)
        return zhat, (dZ.T * self.weights) @ dZ + self.model.R

    def log_likelihood(self, y):
        innov = self.model.residual(y, self.model.h(self.particles))
        return gaussian_logpdf(innov, self.Lr, self.Lr_inv)

    def correct(self, y):
        logw = np.log(self.weights) + self.log_likelihood(y)
        try:
            self.weights = normalize_log_weights(logw)
        except WeightCollapse:
            self.collapses += 1
            self.weights = np.full(self.N, 1.0 / self.N)
        if self.ess_threshold is None or effective_sample_size(self.weights) < self.ess_threshold * self.N:
            idx = systematic_resample(self.weights, self.rng)
            self.particles = self.particles[idx]
            self.weights = np.full(self.N, 1.0 / self.N)
            self._estimate = self.particles.mean(axis=0)
        else:
            self._estimate = self.weights @ self.particles
        self.frame += 1

    def skip_correction(self):
        self._estimate = self.weights @ self.particles
        self.frame += 1

    def predict_ahead(self, n, inputs):
        return _particle_rollout(self, n, inputs)


class SigmaPointParticleFilter(Filter):
    """Particle filter whose proposal comes from a per-particle square-root SPKF.

    Each particle carries its own Gaussian belief. One SRUKF (or SRCDKF)
    predict/correct cycle per particle yields the proposal it is sampled
    from; the importance weight is transition prior times likelihood over
    proposal density. Particles are resampled together with their factors.
    """

    name = "SPPF"

    def __init__(self, model, x0, P0, n_particles: int = 600, rng=None, proposal: str = "ukf"):
        super().__init__(model)
        self.rng = rng if rng is not None else np.random.default_rng()
        self.ahead_rng = self.rng.spawn(1)[0]
        self.N = int(n_particles)
        self.core = SquareRootCore(model, proposal, **({"h": CD_STEP} if proposal == "cdkf" else {}))
        self.P0 = np.asarray(P0, dtype=float)
        self.S0 = cholesky(P0)
        self.Lq = cholesky(model.Q)
        self.Lr = cholesky(model.R)
        self.Lq_inv = np.linalg.inv(self.Lq)
        self.Lr_inv = np.linalg.inv(self.Lr)
        self.particles = np.asarray(x0, dtype=float) + self.rng.standard_normal((self.N, model.n)) @ self.S0.T
        self.factors = np.broadcast_to(self.S0, (self.N,) + self.S0.shape).copy()
        self.weights = np.full(self.N, 1.0 / self.N)
        self.collapses = 0
        self._estimate = np.asarray(x0, dtype=float).copy()
        self._prior = None
        self._meas = None

    @property
    def estimate(self):
        return self._estimate

    def _repair(self, S, ok):
        bad = ~ok
        if np.any(bad):
            self.resets += int(bad.sum())
            S = S.copy()
            S[bad] = self.S0
        return S

    def predict(self, u):
        xp, Sp, ok, Y = self.core.time_update(self.particles, self.factors, u)
        self._prior = (xp, self._repair(Sp, ok), Y[:, 0])
        self._meas = None

    def predicted_measurement(self):
        if self._meas is None:
            xp, Sp, _ = self._prior
            zhat, Sz, Pxz, ok = self.core.measurement(xp, Sp)
            if not np.all(ok):
                Sp = self._repair(Sp, ok)
                self._prior = (xp, Sp, self._prior[2])
                zhat, Sz, Pxz, ok = self.core.measurement(xp, Sp)
            self._meas = (zhat, Sz, Pxz)
        zhat, Sz, _ = self._meas
        w = self.weights
        zbar = w @ zhat
        dz = self.model.residual(zhat, zbar)
        S = np.tensordot(w, Sz @ np.swapaxes(Sz, 1, 2), axes=1) + (dz.T * w) @ dz
        return zbar, S

    def correct(self, y):
        self.predicted_measurement()
        xp, Sp, fx = self._prior
        zhat, Sz, Pxz = self._meas
        xpost, Spost, ok = self.core.correct(xp, Sp, zhat, Sz, Pxz, y)
        Spost = self._repair(Spost, ok)

        z = self.rng.standard_normal(xpost.shape)
        X = xpost + (Spost @ z[:, :, None])[:, :, 0]
        # X = xpost + Spost z, so the proposal density needs no solve
        log_proposal = (-0.5 * np.sum(z * z, axis=1)
                        - np.log(np.diagonal(Spost, axis1=1, axis2=2)).sum(axis=1)
                        - 0.5 * self.model.n * np.log(2.0 * np.pi))
        log_transition = gaussian_logpdf(X - fx, self.Lq, self.Lq_inv)
        log_lik = gaussian_logpdf(self.model.residual(y, self.model.h(X)), self.Lr, self.Lr_inv)
        logw = np.log(self.weights) + log_lik + log_transition - log_proposal
        try:
            w = normalize_log_weights(logw)
        except WeightCollapse:
            self.collapses += 1
            w = np.full(self.N, 1.0 / self.N)
        self._estimate = w @ X
        idx = systematic_resample(w, self.rng)
        self.particles = X[idx]
        self.factors = Spost[idx]
        self.weights = np.full(self.N, 1.0 / self.N)
        self.frame += 1

    def skip_correction(self):
        xp, Sp, _ = self._prior
        z = self.rng.standard_normal(xp.shape)
        self.particles = xp + (Sp @ z[:, :, None])[:, :, 0]
        self.factors = Sp
        self._estimate = self.weights @ self.particles
        self.frame += 1

    def predict_ahead(self, n, inputs):
        return _particle_rollout(self, n, inputs)


@dataclass
class GaussianMixture:
    """Weighted Gaussian components; covariances are held as lower factors."""

    weights: np.ndarray
    means: np.ndarray
    factors: np.ndarray

    @property
    def G(self) -> int:
        return len(self.weights)

    @property
    def covs(self) -> np.ndarray:
        return self.factors @ np.swapaxes(self.factors, 1, 2)

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def logpdf(self, X: np.ndarray) -> np.ndarray:
        """Log mixture density at the rows of ``X``."""
        comp = self.component_logpdf(X)
        top = comp.max(axis=1, keepdims=True)
        return top[:, 0] + np.log(np.exp(comp - top).sum(axis=1))

    def component_logpdf(self, X: np.ndarray) -> np.ndarray:
        """``log(w_g) + log N(x_i; mu_g, P_g)`` as an ``(N, G)`` array."""
        n = X.shape[1]
        # one small inverse per component, then plain products over samples
        D = X.T[None, :, :] - self.means[:, :, None]
        Z = np.linalg.inv(self.factors) @ D
        logdet = np.log(np.diagonal(self.factors, axis1=1, axis2=2)).sum(axis=1)
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        quad = (Z * Z).sum(axis=1).T
        return logw - logdet - 0.5 * n * np.log(2.0 * np.pi) - 0.5 * quad

    def sample(self, N: int, rng: np.random.Generator) -> np.ndarray:
        labels = np.searchsorted(np.cumsum(self.weights), rng.random(N) * self.weights.sum(), side="right")
        labels = np.minimum(labels, self.G - 1)
        z = rng.standard_normal((N, self.means.shape[1]))
        return self.means[labels] + (self.factors[labels] @ z[:, :, None])[:, :, 0]


def weighted_em(X, w, mixture: GaussianMixture, max_iter: int = 10, tol: float = 1e-3, floor: float = COV_FLOOR):
    """Refit ``mixture`` to weighted samples by expectation-maximization.

    Iteration stops after ``max_iter`` rounds or once the weighted mean
    log-likelihood per sample changes by less than ``tol`` nats. Components
    whose weight drops below ``WEIGHT_FLOOR`` are discarded, so the number
    of components may shrink.
    """
    n = X.shape[1]
    const = -0.5 * n * np.log(2.0 * np.pi)
    floor_eye = floor * np.eye(n)
    weights, means, factors = mixture.weights, mixture.means, mixture.factors
    prev = -np.inf
    for _ in range(max_iter):
        # E-step in (G, N) layout
        D = X[None, :, :] - means[:, None, :]
        Z = D @ np.swapaxes(np.linalg.inv(factors), 1, 2)
        logdet = np.log(np.diagonal(factors, axis1=1, axis2=2)).sum(axis=1)
        with np.errstate(divide="ignore"):
            comp = (np.log(weights) - logdet + const)[:, None] - 0.5 * (Z * Z).sum(axis=2)
        top = comp.max(axis=0)
        ll = top + np.log(np.exp(comp - top).sum(axis=0))
        resp = np.exp(comp - ll) * w
        mass = resp.sum(axis=1)
        keep = mass > WEIGHT_FLOOR
        if not np.any(keep):
            raise NotPositiveDefinite("all mixture components degenerate")
        if not np.all(keep):
            resp, mass = resp[keep], mass[keep]
        # M-step
        means = (resp @ X) / mass[:, None]
        D = X[None, :, :] - means[:, None, :]
        covs = np.swapaxes(D * resp[:, :, None], 1, 2) @ D / mass[:, None, None] + floor_eye
        factors = cholesky_trusted(covs)
        weights = mass / mass.sum()
        total = float(w @ ll)
        if abs(total - prev) <= tol:
            break
        prev = total
    return GaussianMixture(weights, means, factors)


def split_components(mixture: GaussianMixture, G: int) -> GaussianMixture:
    """Grow ``mixture`` to ``G`` components by splitting the heaviest one.

    Each split halves the weight and places the two means half a standard
    deviation either side along the principal axis, with that variance
    removed from the shared covariance, so the mixture mean and covariance
    are unchanged.
    """
    weights, means, factors = mixture.weights, mixture.means, mixture.factors
    while len(weights) < G:
        g = int(np.argmax(weights))
        C = factors[g] @ factors[g].T
        lam, vec = np.linalg.eigh(C)
        d = 0.5 * np.sqrt(max(lam[-1], 0.0)) * vec[:, -1]
        Ls = cholesky(C - np.outer(d, d))
        weights = np.concatenate([weights, [0.5 * weights[g]]])
        weights[g] *= 0.5
        means = np.concatenate([means, (means[g] - d)[None]])
        means[g] = means[g] + d
        factors = np.concatenate([factors, Ls[None]])
        factors[g] = Ls
    return GaussianMixture(weights, means, factors)


class GaussianMixtureSigmaPointParticleFilter(Filter):
    """Gaussian-mixture sigma-point particle filter.

    Each component is updated by a square-root central-difference filter;
    the updated mixture serves as importance proposal for ``N`` samples,
    which are weighted against prior mixture times likelihood and refit
    into a ``G``-component mixture by weighted EM.
    """

    name = "GMSPPF"

    def __init__(self, model, x0, P0, n_components: int = 3, n_particles: int = 600, rng=None,
                 proposal: str = "cdkf", em_iters: int = 10):
        super().__init__(model)
        self.rng = rng if rng is not None else np.random.default_rng()
        self.N = int(n_particles)
        self.G = int(n_components)
        self.em_iters = em_iters
        self.core = SquareRootCore(model, proposal)
        self.x0 = np.asarray(x0, dtype=float)
        self.S0 = cholesky(P0)
        self.Lr = cholesky(model.R)
        self.Lr_inv = np.linalg.inv(self.Lr)
        self.mixture = self._initial_mixture(self.x0)
        self.degenerate = 0
        self._estimate = self.x0.copy()
        self._prior = None
        self._meas = None

    def _initial_mixture(self, center):
        means = center + self.rng.standard_normal((self.G, len(center))) @ self.S0.T
        factors = np.broadcast_to(self.S0, (self.G,) + self.S0.shape).copy()
        return GaussianMixture(np.full(self.G, 1.0 / self.G), means, factors)

    @property
    def estimate(self):
        return self._estimate

    def _repair(self, S, ok):
        bad = ~ok
        if np.any(bad):
            self.resets += int(bad.sum())
            S = S.copy()
            S[bad] = self.S0
        return S

    def predict(self, u):
        mix = self.mixture
        xp, Sp, ok, _ = self.core.time_update(mix.means, mix.factors, u)
        self._prior = GaussianMixture(mix.weights, xp, self._repair(Sp, ok))
        self._meas = None

    def predicted_measurement(self):
        if self._meas is None:
            prior = self._prior
            zhat, Sz, Pxz, ok = self.core.measurement(prior.means, prior.factors)
            self._meas = (zhat, Sz, Pxz)
        zhat, Sz, _ = self._meas
        w = self._prior.weights
        zbar = w @ zhat
        dz = self.model.residual(zhat, zbar)
        S = np.tensordot(w, Sz @ np.swapaxes(Sz, 1, 2), axes=1) + (dz.T * w) @ dz
        return zbar, S

    def correct(self, y):
        self.predicted_measurement()
        prior = self._prior
        zhat, Sz, Pxz = self._meas
        xpost, Spost, ok = self.core.correct(prior.means, prior.factors, zhat, Sz, Pxz, y)
        Spost = self._repair(Spost, ok)
        evidence = gaussian_logpdf(self.model.residual(y, zhat), Sz) + np.log(prior.weights)
        try:
            alpha = normalize_log_weights(evidence)
        except WeightCollapse:
            alpha = prior.weights
        try:
            proposal = self._drop_degenerate(GaussianMixture(alpha, xpost, Spost))
        except NotPositiveDefinite:
            proposal = GaussianMixture(prior.weights, xpost, Spost)

        X = proposal.sample(self.N, self.rng)
        log_lik = gaussian_logpdf(self.model.residual(y, self.model.h(X)), self.Lr, self.Lr_inv)
        logw = log_lik + prior.logpdf(X) - proposal.logpdf(X)
        try:
            w = normalize_log_weights(logw)
        except WeightCollapse:
            w = np.full(self.N, 1.0 / self.N)
        try:
            mixture = weighted_em(X, w, proposal, self.em_iters)
            if mixture.G < self.G:
                mixture = split_components(mixture, self.G)
            self.mixture = mixture
        except NotPositiveDefinite:
            self.degenerate += 1
            self.mixture = self._initial_mixture(w @ X)
        self._estimate = self.mixture.mean()
        self.frame += 1

    def _drop_degenerate(self, mix: GaussianMixture) -> GaussianMixture:
        keep = mix.weights > WEIGHT_FLOOR
        if np.all(keep):
            return mix
        self.degenerate += int((~keep).sum())
        if not np.any(keep):
            raise NotPositiveDefinite("all mixture components degenerate")
        w = mix.weights[keep]
        return GaussianMixture(w / w.sum(), mix.means[keep], mix.factors[keep])

    def skip_correction(self):
        self.mixture = self._prior
        self._estimate = self.mixture.mean()
        self.frame += 1

    def predict_ahead(self, n, inputs):
        out = np.empty((n, self.model.n))
        mix = self.mixture
        means, factors = mix.means, mix.factors
        for k in range(n):
            means, factors, ok, _ = self.core.time_update(means, factors, inputs[k])
            if not np.all(ok):
                factors = np.where(ok[:, None, None], factors, self.S0)
            out[k] = mix.weights @ means
        return out


SMC_FILTERS = {
    "PF": ParticleFilter,
    "SPPF": SigmaPointParticleFilter,
    "GMSPPF": GaussianMixtureSigmaPointParticleFilter,
}
