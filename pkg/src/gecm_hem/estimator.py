"""The two-step pipeline and a scikit-learn compatible regressor around it.

Pipeline: standardize -> cross-validate kappa0 -> ECM screening at the
chosen kappa0 -> Gibbs sampling on the surviving columns -> summaries on
the original scale.
"""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .cv import CvPlan, select_kappa0
from .data import Dataset, standardize
from .distributions import make_rng
from .ecm import ETA_GRID, KAPPA0_GRID, HyperParams, run_ecm
from .exceptions import NumericalError
from .gibbs import initial_state, run_gibbs
from .inference import PosteriorSummary, predict, predict_mode, summarize

__all__ = ["FitResult", "StageError", "fit_pipeline", "ecm_summary", "GECMHEMRegressor"]


class StageError(Exception):
    """Wraps a failure with the name of the pipeline stage that raised it."""

    def __init__(self, stage, exc):
        super().__init__(f"stage {stage!r} failed: {exc}")
        self.stage = stage
        self.original = exc


@dataclass
class FitResult:
    hp: HyperParams
    standardizer: object
    column_names: tuple
    reduced_indices: np.ndarray
    kappa0: float = None
    cv_report: object = None
    ecm_fit: object = None
    draws: object = None
    summary: PosteriorSummary = None
    seed: int = 0
    stages: list = field(default_factory=list)


def ecm_summary(ecm_fit, standardizer, column_names, hp):
    """Mode-based summary for an ECM-only fit (inclusion probabilities are the E-step weights)."""
    beta = standardizer.coef_to_original(ecm_fit.final_state.beta)
    return PosteriorSummary(
        beta_median=beta,
        beta0_median=float(standardizer.intercept(beta)),
        inclusion_prob=np.asarray(ecm_fit.final_state.g, dtype=float),
        eta_posterior={float(hp.eta_fixed): 1.0},
        mpm_selected=np.asarray(ecm_fit.selected, dtype=bool),
        column_names=tuple(column_names),
    )


def _stage(result, name, attr, fn, hook):
    try:
        out = fn()
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc
    setattr(result, attr, out)
    result.stages.append(name)
    if hook is not None:
        hook(name, result)
    return out


def fit_pipeline(d, hp, kappa0=None, n_folds=10, n_iter=11000, burnin=1000, thin=1,
                 screening=True, ecm_only=False, max_iter=500, tol=1e-6, workers=None,
                 seed=0, hook=None):
    """Run the full pipeline on a raw-scale :class:`Dataset`.

    ``kappa0=None`` selects it by cross-validation. ``screening=False``
    samples on the full design (no CV, no ECM). ``hook(stage, result)`` is
    called after each stage so callers can flush partial outputs.
    """
    if ecm_only and not screening:
        raise ValueError("ecm_only and screening=False are mutually exclusive")
    result = FitResult(hp, None, d.column_names, np.arange(d.p), seed=seed)
    ds, st = standardize(d)
    result.standardizer = st

    if screening:
        if kappa0 is None:
            plan = CvPlan.create(d.n, n_folds, hp.kappa0_grid, seed)
            _stage(result, "cv", "cv_report",
                   lambda: select_kappa0(d, hp, plan, workers, max_iter, tol), hook)
            kappa0 = result.cv_report.best_kappa0
        result.kappa0 = float(kappa0)
        result.hp = hp = hp.with_kappa0(kappa0)
        _stage(result, "ecm", "ecm_fit",
               lambda: run_ecm(ds.x, ds.y, hp, max_iter=max_iter, tol=tol), hook)
        result.reduced_indices = result.ecm_fit.reduced_indices
    if ecm_only:
        result.summary = ecm_summary(result.ecm_fit, st, d.column_names, hp)
        return result

    idx = result.reduced_indices
    xr = ds.x[:, idx]

    def gibbs():
        init = None
        if result.ecm_fit is not None:
            s = result.ecm_fit.final_state
            # ECM carries the unit-scale mixing variable; the sampler's sigma2 includes rho2
            init = initial_state(xr, ds.y, hp, sigma2=s.sigma2 * s.rho2, rho2=s.rho2,
                                 tau2=s.tau2, theta=0.5)
        return run_gibbs(xr, ds.y, hp, n_iter=n_iter, burnin=burnin, thin=thin,
                         rng=make_rng(seed, "gibbs"), init=init,
                         column_names=tuple(d.column_names[j] for j in idx), seed=seed)

    _stage(result, "gibbs", "draws", gibbs, hook)
    if len(result.draws):
        _stage(result, "summarize", "summary",
               lambda: summarize(result.draws, idx, st, hp.eta_grid, d.column_names), hook)
    return result


class GECMHEMRegressor(RegressorMixin, BaseEstimator):
    """Sparse Bayesian linear regression with hyperbolic errors.

    Parameters
    ----------
    kappa0 : float or None
        Spike scale. ``None`` selects it by K-fold CV over ``kappa0_grid``.
    n_iter, burnin, thin : int
        Gibbs schedule.
    screening : bool
        ``False`` skips CV and ECM and samples over all columns.
    ecm_only : bool
        Stop after screening; predictions use the ECM mode.
    random_state : int or None
        Root seed; every stage draws from its own named stream.

    Attributes
    ----------
    coef_, intercept_ : posterior medians on the original scale
    inclusion_prob_, selected_ : marginal inclusion probabilities and the
        median probability model
    """

    def __init__(self, kappa0=None, kappa1=1.0, lambda_tau=1.0, a_rho=2.1, b_rho=0.1,
                 c_theta=1.0, d_theta=1.0, eta_fixed=1.0, eta_grid=ETA_GRID,
                 kappa0_grid=KAPPA0_GRID, n_folds=10, n_iter=11000, burnin=1000, thin=1,
                 screening=True, ecm_only=False, max_iter=500, tol=1e-6, workers=None,
                 random_state=0):
        self.kappa0 = kappa0
        self.kappa1 = kappa1
        self.lambda_tau = lambda_tau
        self.a_rho = a_rho
        self.b_rho = b_rho
        self.c_theta = c_theta
        self.d_theta = d_theta
        self.eta_fixed = eta_fixed
        self.eta_grid = eta_grid
        self.kappa0_grid = kappa0_grid
        self.n_folds = n_folds
        self.n_iter = n_iter
        self.burnin = burnin
        self.thin = thin
        self.screening = screening
        self.ecm_only = ecm_only
        self.max_iter = max_iter
        self.tol = tol
        self.workers = workers
        self.random_state = random_state

    def _hyperparams(self):
        return HyperParams(
            kappa0=self.kappa0 if self.kappa0 is not None else min(0.1, self.kappa1),
            kappa1=self.kappa1, lambda_tau=self.lambda_tau, a_rho=self.a_rho,
            b_rho=self.b_rho, c_theta=self.c_theta, d_theta=self.d_theta,
            eta_fixed=self.eta_fixed, eta_grid=self.eta_grid, kappa0_grid=self.kappa0_grid,
        )

    def fit(self, X, y):
        names = tuple(str(c) for c in X.columns) if hasattr(X, "columns") else ()
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        seed = self.random_state
        if seed is None:
            seed = int(np.random.SeedSequence().generate_state(1, np.uint64)[0])
        d = Dataset(y, X, names)
        res = fit_pipeline(
            d, self._hyperparams(), kappa0=self.kappa0, n_folds=self.n_folds,
            n_iter=self.n_iter, burnin=self.burnin, thin=self.thin, screening=self.screening,
            ecm_only=self.ecm_only, max_iter=self.max_iter, tol=self.tol, workers=self.workers,
            seed=int(seed),
        )
        if res.summary is None:
            raise NumericalError("no retained draws; increase n_iter beyond burnin")
        self.result_ = res
        self.n_features_in_ = X.shape[1]
        self.seed_ = int(seed)
        self.standardizer_ = res.standardizer
        self.kappa0_ = res.kappa0
        self.cv_report_ = res.cv_report
        self.ecm_fit_ = res.ecm_fit
        self.draws_ = res.draws
        self.reduced_indices_ = res.reduced_indices
        self.coef_ = res.summary.beta_median
        self.intercept_ = res.summary.beta0_median
        self.inclusion_prob_ = res.summary.inclusion_prob
        self.selected_ = res.summary.mpm_selected
        self.eta_posterior_ = res.summary.eta_posterior
        return self

    def _check_x(self, X):
        check_is_fitted(self, "result_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    def predict(self, X):
        """Posterior median of the mean response (ECM mode when ``ecm_only``)."""
        X = self._check_x(X)
        if self.draws_ is None:
            return predict_mode(self.ecm_fit_.final_state.beta, self.standardizer_, X)
        st, idx = self.standardizer_, self.reduced_indices_
        b = self.draws_.beta * st.y_sd / st.x_sds[idx]
        beta0 = st.y_mean - b @ st.x_means[idx]
        return np.median(beta0[:, None] + b @ X[:, idx].T, axis=0)

    def predict_interval(self, X, level=0.90):
        """Posterior predictive ``PredictionResult`` (point, lower, upper)."""
        X = self._check_x(X)
        if self.draws_ is None:
            raise ValueError("intervals need posterior draws; refit with ecm_only=False")
        return predict(self.draws_, self.reduced_indices_, self.standardizer_, X, level=level,
                       rng=make_rng(self.seed_, "predict"))
