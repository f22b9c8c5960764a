"""Posterior-mode screening under hyperbolic errors (ECM with a continuous spike-and-slab).

Works on standardized data. The latent inclusion indicators are integrated
out by the E-step; the CM-step updates ``beta -> rho2 -> tau2 -> theta ->
sigma2`` in closed form, each conditional on the freshest values of the
others. ``sigma2`` here is the GIG(1, eta, eta) mixing variable, so the
error variance of observation ``i`` is ``rho2 * sigma2[i]``.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg
from scipy.special import expit, logsumexp

from .exceptions import NumericalError
from .special import log_bessel_k

__all__ = [
    "ETA_GRID",
    "KAPPA0_GRID",
    "HyperParams",
    "EcmState",
    "EcmFit",
    "e_step",
    "cm_step",
    "q_function",
    "log_posterior",
    "ridge_init",
    "run_ecm",
]

ETA_GRID = (0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0)
KAPPA0_GRID = tuple(round(0.01 * k, 2) for k in range(1, 52))

_THETA_EPS = 1e-12


@dataclass(frozen=True)
class HyperParams:
    """Fixed prior hyperparameters shared by both stages."""

    kappa0: float = 0.1
    kappa1: float = 1.0
    lambda_tau: float = 1.0
    a_rho: float = 2.1
    b_rho: float = 0.1
    c_theta: float = 1.0
    d_theta: float = 1.0
    eta_fixed: float = 1.0
    eta_grid: tuple = ETA_GRID
    kappa0_grid: tuple = KAPPA0_GRID

    def __post_init__(self):
        object.__setattr__(self, "eta_grid", tuple(float(e) for e in self.eta_grid))
        object.__setattr__(self, "kappa0_grid", tuple(float(k) for k in self.kappa0_grid))
        scalars = ("kappa0", "kappa1", "lambda_tau", "a_rho", "b_rho", "c_theta", "d_theta",
                   "eta_fixed")
        for name in scalars:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.kappa0 <= self.kappa1:
            raise ValueError("kappa0 must not exceed kappa1")
        if not self.eta_grid or len(set(self.eta_grid)) != len(self.eta_grid):
            raise ValueError("eta_grid must be non-empty with distinct entries")
        if min(self.eta_grid) <= 0 or not self.kappa0_grid or min(self.kappa0_grid) <= 0:
            raise ValueError("grids must contain positive values")

    def with_kappa0(self, kappa0):
        return replace(self, kappa0=float(kappa0))


@dataclass
class EcmState:
    beta: np.ndarray
    rho2: float
    tau2: float
    theta: float
    sigma2: np.ndarray
    g: np.ndarray = None
    q_value: float = np.nan


@dataclass
class EcmFit:
    final_state: EcmState
    iterations: int
    converged: bool
    selected: np.ndarray
    history: list = field(default_factory=list)

    @property
    def reduced_indices(self):
        return np.flatnonzero(self.selected)

    @property
    def p_star(self):
        return int(self.selected.sum())


# ---------------------------------------------------------------------------
# E-step


def _log_slab_spike(beta, rho2, tau2, hp):
    """Log normal heights (without the 2*pi constant) under slab and spike."""
    b2 = np.asarray(beta) ** 2
    v1 = hp.kappa1 * rho2 * tau2
    v0 = hp.kappa0 * rho2 * tau2
    return -0.5 * (np.log(v1) + b2 / v1), -0.5 * (np.log(v0) + b2 / v0)


def inclusion_prob(beta, rho2, tau2, theta, hp):
    l1, l0 = _log_slab_spike(beta, rho2, tau2, hp)
    return expit(np.log(theta) - np.log1p(-theta) + l1 - l0)


def e_step(state, hp):
    """Return ``(g, E[log alpha], E[1/alpha])`` at the current estimates."""
    g = inclusion_prob(state.beta, state.rho2, state.tau2, state.theta, hp)
    e_log_alpha = (1.0 - g) * np.log(hp.kappa0) + g * np.log(hp.kappa1)
    e_inv_alpha = (1.0 - g) / hp.kappa0 + g / hp.kappa1
    return g, e_log_alpha, e_inv_alpha


# ---------------------------------------------------------------------------
# CM-step pieces


def update_beta(x, y, sigma2, tau2, omega):
    w = 1.0 / sigma2
    xtw = x.T * w
    a = xtw @ x
    a[np.diag_indices_from(a)] += omega / tau2
    try:
        factor = linalg.cho_factor(a, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"beta update: SPD solve failed ({exc})") from exc
    return linalg.cho_solve(factor, xtw @ y)


def update_rho2(x, y, beta, sigma2, tau2, omega, hp):
    n, p = x.shape
    r = y - x @ beta
    num = 2.0 * hp.b_rho + np.sum(r * r / sigma2) + np.sum(omega * beta * beta) / tau2
    return num / (n + p + 2.0 * hp.a_rho + 2.0)


def update_tau2(beta, rho2, omega, hp):
    p = beta.shape[0]
    return (hp.lambda_tau + np.sum(omega * beta * beta) / rho2) / (p + hp.lambda_tau + 2.0)


def update_theta(g, hp):
    p = g.shape[0]
    denom = hp.c_theta + hp.d_theta + p - 2.0
    theta = (hp.c_theta + g.sum() - 1.0) / denom if denom > 0 else 0.5
    return float(np.clip(theta, _THETA_EPS, 1.0 - _THETA_EPS))


def update_sigma2(x, y, beta, rho2, eta):
    r2 = (y - x @ beta) ** 2
    disc = 1.0 + 4.0 * eta * (eta + r2 / rho2)
    # (-1 + sqrt(disc)) / (2 eta), written to avoid cancellation
    return 2.0 * (eta + r2 / rho2) / (1.0 + np.sqrt(disc))


def cm_step(state, x, y, hp, estep=None):
    """One sweep of conditional maximizations; returns a new state."""
    g, _, omega = e_step(state, hp) if estep is None else estep
    eta = hp.eta_fixed
    beta = update_beta(x, y, state.sigma2, state.tau2, omega)
    rho2 = update_rho2(x, y, beta, state.sigma2, state.tau2, omega, hp)
    tau2 = update_tau2(beta, rho2, omega, hp)
    theta = update_theta(g, hp)
    sigma2 = update_sigma2(x, y, beta, rho2, eta)
    out = EcmState(beta, float(rho2), float(tau2), theta, sigma2, g)
    if not (np.all(np.isfinite(beta)) and np.isfinite(rho2) and np.isfinite(tau2)):
        raise NumericalError("CM step produced non-finite estimates")
    return out


# ---------------------------------------------------------------------------
# objectives


def q_function(beta, rho2, tau2, theta, sigma2, g, x, y, hp):
    """Expected complete-data log posterior for fixed E-step weights ``g``.

    Additive constants that do not depend on any parameter are dropped.
    """
    n, p = x.shape
    eta = hp.eta_fixed
    r = y - x @ beta
    e_log_alpha = (1.0 - g) * np.log(hp.kappa0) + g * np.log(hp.kappa1)
    omega = (1.0 - g) / hp.kappa0 + g / hp.kappa1
    lik = -0.5 * (
        n * np.log(rho2)
        + np.sum(np.log(sigma2))
        + eta * np.sum(sigma2)
        + np.sum(r * r / sigma2) / rho2
        + eta * np.sum(1.0 / sigma2)
        + 2.0 * n * log_bessel_k(1.0, eta)
    )
    coef = -0.5 * (
        np.sum(e_log_alpha)
        + p * np.log(rho2)
        + np.sum(omega * beta * beta) / (rho2 * tau2)
        + (p + hp.lambda_tau + 2.0) * np.log(tau2)
        + hp.lambda_tau / tau2
    )
    scale = -((hp.a_rho + 1.0) * np.log(rho2) + hp.b_rho / rho2)
    incl = (
        (p + hp.d_theta - 1.0) * np.log1p(-theta)
        + (hp.c_theta - 1.0) * np.log(theta)
        + (np.log(theta) - np.log1p(-theta)) * np.sum(g)
    )
    return float(lik + coef + scale + incl)


def log_posterior(beta, rho2, tau2, theta, sigma2, x, y, hp):
    """Log posterior of the continuous parameters with the indicators summed out.

    Equals ``q_function`` at the E-step weights plus their Bernoulli entropy;
    ECM never decreases it, so it is the convergence monitor.
    """
    n, p = x.shape
    eta = hp.eta_fixed
    r = y - x @ beta
    lik = -0.5 * (
        n * np.log(rho2)
        + np.sum(np.log(sigma2))
        + eta * np.sum(sigma2)
        + np.sum(r * r / sigma2) / rho2
        + eta * np.sum(1.0 / sigma2)
        + 2.0 * n * log_bessel_k(1.0, eta)
    )
    l1, l0 = _log_slab_spike(beta, rho2, tau2, hp)
    mix = logsumexp(np.stack([np.log(theta) + l1, np.log1p(-theta) + l0]), axis=0)
    tau_prior = -0.5 * ((hp.lambda_tau + 2.0) * np.log(tau2) + hp.lambda_tau / tau2)
    scale = -((hp.a_rho + 1.0) * np.log(rho2) + hp.b_rho / rho2)
    theta_prior = (hp.c_theta - 1.0) * np.log(theta) + (hp.d_theta - 1.0) * np.log1p(-theta)
    return float(lik + np.sum(mix) + tau_prior + scale + theta_prior)


def _objective(state, x, y, hp):
    return log_posterior(state.beta, state.rho2, state.tau2, state.theta, state.sigma2, x, y, hp)


# ---------------------------------------------------------------------------
# driver


def ridge_init(x, y):
    """Ridge start ``(X'X + I)^{-1} X'y`` with unit scales and theta = 0.5."""
    n, p = x.shape
    a = x.T @ x
    a[np.diag_indices_from(a)] += 1.0
    beta = linalg.solve(a, x.T @ y, assume_a="pos")
    return EcmState(beta, 1.0, 1.0, 0.5, np.ones(n))


def run_ecm(x, y, hp, init=None, max_iter=500, tol=1e-6):
    """Alternate E and CM steps until the relative objective change drops below ``tol``.

    Parameters
    ----------
    x, y : ndarray
        Standardized design (n, p) and response (n,).
    hp : HyperParams
    init : EcmState, optional
        Starting point; defaults to :func:`ridge_init`.

    Returns
    -------
    EcmFit
        Final state (with a closing E-step), iteration count, convergence
        flag and the thresholded selection ``g >= 0.5``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    state = ridge_init(x, y) if init is None else replace(init)
    q_old = _objective(state, x, y, hp)
    history = [q_old]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        state = cm_step(state, x, y, hp)
        q_new = _objective(state, x, y, hp)
        history.append(q_new)
        if abs(q_new - q_old) / (abs(q_old) + 1.0) < tol:
            converged = True
            break
        q_old = q_new
    g, _, _ = e_step(state, hp)
    state.g = g
    state.q_value = history[-1]
    return EcmFit(state, it, converged, g >= 0.5, history)
