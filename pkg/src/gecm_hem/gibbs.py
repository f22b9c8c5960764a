"""Stochastic search over the reduced model space (point-mass spike-and-slab).

Model, on standardized data with design ``x`` (n, p*)::

    y | gamma, beta, sigma2  ~ N(x_gamma beta_gamma, diag(sigma2))
    sigma2_i | rho2, eta     ~ GIG(1, eta/rho2, eta*rho2)
    beta_j | gamma_j = 1     ~ N(0, rho2*tau2),   beta_j = 0 otherwise
    tau2 ~ InvGamma(lambda_tau/2, lambda_tau/2),  rho2 ~ InvGamma(a_rho, b_rho)
    gamma_j | theta ~ Bernoulli(theta),  theta ~ Beta(c_theta, d_theta)
    eta ~ uniform on the eta grid

The model indicators are moved by single-flip Metropolis-Hastings with
``beta`` integrated out, after which ``beta_gamma`` is redrawn jointly.
"""

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.linalg import lapack

from .distributions import beta_sample, categorical_sample, gig_sample, inv_gamma_sample
from .exceptions import NumericalError
from .special import log_bessel_k

__all__ = [
    "GibbsState",
    "GibbsDraws",
    "ModelEvidenceCache",
    "log_marginal_y",
    "sigma2_conditional",
    "rho2_conditional",
    "tau2_conditional",
    "theta_conditional",
    "eta_log_weights",
    "update_gamma_mh",
    "update_sigma2",
    "update_rho2",
    "update_tau2",
    "update_theta",
    "update_eta",
    "initial_state",
    "run_gibbs",
]

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class GibbsState:
    gamma: np.ndarray
    beta: np.ndarray
    sigma2: np.ndarray
    rho2: float
    tau2: float
    theta: float
    eta: float

    def copy(self):
        return GibbsState(self.gamma.copy(), self.beta.copy(), self.sigma2.copy(),
                          self.rho2, self.tau2, self.theta, self.eta)

    def describe(self):
        return (f"p_gamma={int(self.gamma.sum())} rho2={self.rho2!r} tau2={self.tau2!r} "
                f"theta={self.theta!r} eta={self.eta!r} "
                f"sigma2[min,max]=({self.sigma2.min()!r},{self.sigma2.max()!r}) "
                f"|beta|max={np.abs(self.beta).max(initial=0.0)!r}")


@dataclass
class GibbsDraws:
    """Retained draws; row ``t`` is iteration ``iteration[t]`` of the chain."""

    iteration: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    rho2: np.ndarray
    tau2: np.ndarray
    theta: np.ndarray
    eta: np.ndarray
    burnin: int = 0
    thin: int = 1
    seed: int = None
    column_names: tuple = ()
    accept_rate: float = np.nan
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return self.iteration.shape[0]

    @property
    def p(self):
        return self.gamma.shape[1]

    def to_csv(self, path):
        names = self.column_names or tuple(f"x{j + 1}" for j in range(self.p))
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "eta", "rho2", "tau2", "theta",
                        *(f"gamma_{c}" for c in names), *(f"beta_{c}" for c in names)])
            for t in range(len(self)):
                w.writerow([int(self.iteration[t]), repr(float(self.eta[t])),
                            repr(float(self.rho2[t])), repr(float(self.tau2[t])),
                            repr(float(self.theta[t])),
                            *(int(v) for v in self.gamma[t]),
                            *(repr(float(v)) for v in self.beta[t])])

    @classmethod
    def from_csv(cls, path, burnin=0, thin=1, seed=None):
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        names = tuple(h[len("gamma_"):] for h in header if h.startswith("gamma_"))
        p = len(names)
        arr = np.array(body, dtype=float).reshape(len(body), len(header))
        return cls(
            iteration=arr[:, 0].astype(int), eta=arr[:, 1], rho2=arr[:, 2], tau2=arr[:, 3],
            theta=arr[:, 4], gamma=arr[:, 5:5 + p].astype(bool), beta=arr[:, 5 + p:5 + 2 * p],
            burnin=burnin, thin=thin, seed=seed, column_names=names,
        )


# ---------------------------------------------------------------------------
# marginal likelihood of a model


def log_marginal_y(gamma, sigma2, rho2, tau2, x, y):
    """``log N(y; 0, diag(sigma2) + rho2*tau2 * x_g x_g')`` via a p_gamma-sized factorization."""
    gamma = np.asarray(gamma, dtype=bool)
    w = 1.0 / sigma2
    n = y.shape[0]
    base = n * _LOG_2PI + np.sum(np.log(sigma2)) + np.sum(w * y * y)
    idx = np.flatnonzero(gamma)
    if idx.size == 0:
        return float(-0.5 * base)
    c = rho2 * tau2
    xg = x[:, idx]
    a = (xg.T * w) @ xg
    a[np.diag_indices_from(a)] += 1.0 / c
    b = xg.T @ (w * y)
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"model evidence: factorization failed ({exc})") from exc
    z = linalg.solve_triangular(chol, b, lower=True, check_finite=False)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return float(-0.5 * (base + idx.size * np.log(c) + logdet - z @ z))


class ModelEvidenceCache:
    """Model log-evidence keyed by the inclusion bitmask.

    Gram pieces ``x'Wx`` and ``x'Wy`` are built once per (sigma2, rho2, tau2);
    :meth:`refresh` drops every cached model when those change.
    """

    def __init__(self, x, y):
        self.x = x
        self.y = y
        self._key = None
        self._store = {}

    def refresh(self, sigma2, rho2, tau2):
        key = (sigma2.tobytes(), float(rho2), float(tau2))
        if key == self._key:
            return
        self._key = key
        self._store = {}
        w = 1.0 / sigma2
        self.gram = (self.x.T * w) @ self.x
        self.xwy = self.x.T @ (w * self.y)
        self.c = rho2 * tau2
        self.base = self.y.shape[0] * _LOG_2PI + np.sum(np.log(sigma2)) + np.sum(w * self.y**2)

    def _factor(self, idx):
        a = self.gram[idx][:, idx]
        a.flat[:: idx.size + 1] += 1.0 / self.c
        chol, info = lapack.dpotrf(a, lower=1, clean=1)
        if info != 0:
            raise NumericalError(f"model evidence: factorization failed (info={info})")
        z, _ = lapack.dtrtrs(chol, self.xwy[idx], lower=1)
        return chol, z

    def log_marginal(self, gamma):
        key = np.packbits(gamma).tobytes()
        hit = self._store.get(key)
        if hit is not None:
            return hit
        idx = np.flatnonzero(gamma)
        if idx.size == 0:
            val = -0.5 * self.base
        else:
            chol, z = self._factor(idx)
            logdet = 2.0 * np.log(chol.diagonal()).sum()
            val = -0.5 * (self.base + idx.size * np.log(self.c) + logdet - z @ z)
        self._store[key] = float(val)
        return float(val)

    def draw_beta(self, gamma, rng):
        """``beta_gamma ~ N(A^{-1} b, A^{-1})``, zeros elsewhere."""
        beta = np.zeros(gamma.shape[0])
        idx = np.flatnonzero(gamma)
        if idx.size:
            chol, z = self._factor(idx)
            e = rng.standard_normal(idx.size)
            beta[idx] = lapack.dtrtrs(chol, z + e, lower=1, trans=1)[0]
        return beta

    def mean_beta(self, gamma):
        beta = np.zeros(gamma.shape[0])
        idx = np.flatnonzero(gamma)
        if idx.size:
            chol, z = self._factor(idx)
            beta[idx] = lapack.dtrtrs(chol, z, lower=1, trans=1)[0]
        return beta


# ---------------------------------------------------------------------------
# full conditionals


def sigma2_conditional(state, x, y):
    """GIG parameters ``(1/2, eta/rho2, eta*rho2 + r_i^2)`` for each observation."""
    r = y - x @ state.beta
    a = state.eta / state.rho2
    return 0.5, np.full(r.shape, a), state.eta * state.rho2 + r * r


def rho2_conditional(state, hp):
    n = state.sigma2.shape[0]
    p_g = int(state.gamma.sum())
    lam = -(n + 0.5 * p_g + hp.a_rho)
    a = state.eta * np.sum(1.0 / state.sigma2)
    b = state.eta * np.sum(state.sigma2) + state.beta @ state.beta / state.tau2 + 2.0 * hp.b_rho
    return lam, float(a), float(b)


def tau2_conditional(state, hp):
    """Inverse-gamma ``(shape, scale)``."""
    p_g = int(state.gamma.sum())
    shape = 0.5 * (p_g + hp.lambda_tau)
    scale = 0.5 * (hp.lambda_tau + state.beta @ state.beta / state.rho2)
    return shape, float(scale)


def theta_conditional(state, hp):
    k = int(state.gamma.sum())
    return hp.c_theta + k, hp.d_theta + state.gamma.shape[0] - k


def eta_log_weights(state, hp):
    """Unnormalized log conditional of eta over ``hp.eta_grid``."""
    grid = np.asarray(hp.eta_grid)
    n = state.sigma2.shape[0]
    s = np.sum(state.sigma2) / state.rho2 + state.rho2 * np.sum(1.0 / state.sigma2)
    return -n * log_bessel_k(1.0, grid) - 0.5 * grid * s


# ---------------------------------------------------------------------------
# updates


def update_gamma_mh(state, x, y, hp, rng, cache=None):
    """Random-scan sweep of single-flip MH moves, then a joint ``beta_gamma`` draw."""
    p = x.shape[1]
    if p == 0:
        state.beta = np.zeros(0)
        return state, 0
    cache = ModelEvidenceCache(x, y) if cache is None else cache
    cache.refresh(state.sigma2, state.rho2, state.tau2)
    gamma = state.gamma.copy()
    current = cache.log_marginal(gamma)
    log_odds = np.log(state.theta) - np.log1p(-state.theta)
    accepted = 0
    for j in rng.permutation(p):
        gamma[j] = not gamma[j]
        proposed = cache.log_marginal(gamma)
        log_ratio = proposed - current + (log_odds if gamma[j] else -log_odds)
        if np.log(rng.random()) < log_ratio:
            current = proposed
            accepted += 1
        else:
            gamma[j] = not gamma[j]
    state.gamma = gamma
    state.beta = cache.draw_beta(gamma, rng)
    return state, accepted


def update_sigma2(state, x, y, rng):
    lam, a, b = sigma2_conditional(state, x, y)
    state.sigma2 = np.asarray(gig_sample(lam, a, b, rng))
    return state


def update_rho2(state, hp, rng):
    lam, a, b = rho2_conditional(state, hp)
    state.rho2 = float(gig_sample(lam, a, b, rng))
    return state


def update_tau2(state, hp, rng):
    shape, scale = tau2_conditional(state, hp)
    state.tau2 = float(inv_gamma_sample(shape, scale, rng))
    return state


def update_theta(state, hp, rng):
    c, d = theta_conditional(state, hp)
    state.theta = float(beta_sample(c, d, rng))
    return state


def update_eta(state, hp, rng):
    state.eta = float(hp.eta_grid[categorical_sample(eta_log_weights(state, hp), rng)])
    return state


# ---------------------------------------------------------------------------
# driver


def _nearest(grid, value):
    grid = np.asarray(grid)
    return float(grid[np.argmin(np.abs(np.log(grid) - np.log(value)))])


def initial_state(x, y, hp, sigma2=None, rho2=1.0, tau2=1.0, theta=0.5, eta=None, gamma=None):
    """Full reduced model with ``beta`` at its conditional mean."""
    n, p = x.shape
    gamma = np.ones(p, dtype=bool) if gamma is None else np.asarray(gamma, dtype=bool).copy()
    sigma2 = np.ones(n) if sigma2 is None else np.asarray(sigma2, dtype=float).copy()
    eta = _nearest(hp.eta_grid, hp.eta_fixed if eta is None else eta)
    cache = ModelEvidenceCache(x, y)
    cache.refresh(sigma2, rho2, tau2)
    beta = cache.mean_beta(gamma) if p else np.zeros(0)
    return GibbsState(gamma, beta, sigma2, float(rho2), float(tau2), float(theta), eta)


def run_gibbs(x, y, hp, n_iter=11000, burnin=1000, thin=1, rng=None, init=None,
              column_names=(), seed=None):
    """Run one chain; updates per iteration: gamma/beta, sigma2, rho2, tau2, theta, eta.

    Keeps iterations ``t > burnin`` with ``(t - burnin) % thin == 0``.
    """
    if n_iter < 0 or burnin < 0 or thin < 1:
        raise ValueError("need n_iter >= 0, burnin >= 0, thin >= 1")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = x.shape
    rng = np.random.default_rng(seed) if rng is None else rng
    state = initial_state(x, y, hp) if init is None else init.copy()
    n_keep = max(n_iter - burnin, 0) // thin

    out = GibbsDraws(
        iteration=np.zeros(n_keep, dtype=int),
        gamma=np.zeros((n_keep, p), dtype=bool),
        beta=np.zeros((n_keep, p)),
        rho2=np.zeros(n_keep), tau2=np.zeros(n_keep),
        theta=np.zeros(n_keep), eta=np.zeros(n_keep),
        burnin=burnin, thin=thin, seed=seed, column_names=tuple(column_names),
    )
    cache = ModelEvidenceCache(x, y)
    accepted = 0
    k = 0
    for t in range(1, n_iter + 1):
        try:
            state, acc = update_gamma_mh(state, x, y, hp, rng, cache)
            update_sigma2(state, x, y, rng)
            update_rho2(state, hp, rng)
            update_tau2(state, hp, rng)
            update_theta(state, hp, rng)
            update_eta(state, hp, rng)
        except (NumericalError, ValueError, FloatingPointError) as exc:
            raise NumericalError(f"Gibbs iteration {t} failed: {exc}; state: {state.describe()}") \
                from exc
        accepted += acc
        if t > burnin and (t - burnin) % thin == 0 and k < n_keep:
            out.iteration[k] = t
            out.gamma[k] = state.gamma
            out.beta[k] = state.beta
            out.rho2[k], out.tau2[k] = state.rho2, state.tau2
            out.theta[k], out.eta[k] = state.theta, state.eta
            k += 1
    out.accept_rate = accepted / (n_iter * p) if n_iter and p else np.nan
    out.extra["final_state"] = state
    return out
