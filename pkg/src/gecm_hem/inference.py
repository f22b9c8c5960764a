"""Posterior summaries, posterior predictive intervals and evaluation metrics.

Coefficients are reported on the original (raw) scale: a standardized slope
``b`` for column ``j`` becomes ``b * y_sd / x_sd[j]`` and each draw carries
the intercept ``ybar - sum_j beta_j * xbar_j``.

Empirical quantiles use linear interpolation between order statistics:
for sorted draws ``v[0..T-1]`` the ``q`` quantile is
``v[k] + (h - k) * (v[k+1] - v[k])`` with ``h = (T - 1) q`` and ``k = floor(h)``.
"""

import csv
import math
from dataclasses import asdict, dataclass

import numpy as np

from .distributions import gig_sample
from .exceptions import DataError

__all__ = [
    "PosteriorSummary",
    "PredictionResult",
    "EvalReport",
    "summarize",
    "predictive_draws",
    "predict",
    "predict_mode",
    "selection_rates",
    "metrics",
    "five_number_summary",
]


@dataclass
class PosteriorSummary:
    beta_median: np.ndarray
    beta0_median: float
    inclusion_prob: np.ndarray
    eta_posterior: dict
    mpm_selected: np.ndarray
    column_names: tuple = ()

    def write(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["term", "beta_median", "inclusion_prob", "mpm_selected"])
            w.writerow(["(intercept)", repr(float(self.beta0_median)), "1.0", "1"])
            for name, b, pip, sel in zip(self.column_names, self.beta_median,
                                         self.inclusion_prob, self.mpm_selected):
                w.writerow([name, repr(float(b)), repr(float(pip)), int(sel)])

    @classmethod
    def read(cls, path, eta_posterior=None):
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        beta0 = float(rows[0]["beta_median"])
        rows = rows[1:]
        return cls(
            beta_median=np.array([float(r["beta_median"]) for r in rows]),
            beta0_median=beta0,
            inclusion_prob=np.array([float(r["inclusion_prob"]) for r in rows]),
            eta_posterior=eta_posterior or {},
            mpm_selected=np.array([r["mpm_selected"] == "1" for r in rows]),
            column_names=tuple(r["term"] for r in rows),
        )


@dataclass
class PredictionResult:
    point: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float = 0.90

    def write(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["point", "lower", "upper"])
            for row in zip(self.point, self.lower, self.upper):
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def read(cls, path, level=np.nan):
        arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], level)


@dataclass
class EvalReport:
    rmse_beta: float = None
    rmse_mean_response: float = None
    tpr: float = None
    tnr: float = None
    mead: float = None
    coverage: float = None
    median_width: float = None

    def to_text(self):
        lines = []
        for k, v in asdict(self).items():
            lines.append(f"{k} = {'NA' if v is None else repr(float(v))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        vals = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            k, v = (s.strip() for s in line.split("=", 1))
            vals[k] = None if v == "NA" else float(v)
        return cls(**{k: vals.get(k) for k in cls.__dataclass_fields__})


def _expand(draws, reduced_indices, p):
    full = np.zeros((len(draws), p))
    full[:, reduced_indices] = draws.beta
    incl = np.zeros((len(draws), p), dtype=bool)
    incl[:, reduced_indices] = draws.gamma
    return full, incl


def summarize(draws, reduced_indices, standardizer, eta_grid=None, column_names=()):
    """Medians, inclusion frequencies and the median probability model.

    ``reduced_indices`` maps the chain's columns back into the full design.
    """
    if len(draws) == 0:
        raise ValueError("cannot summarize an empty chain")
    p = standardizer.x_means.shape[0]
    reduced_indices = np.asarray(reduced_indices, dtype=int)
    beta_std, incl = _expand(draws, reduced_indices, p)
    beta_orig = standardizer.coef_to_original(beta_std)
    beta0 = standardizer.intercept(beta_orig)
    pip = incl.mean(axis=0)
    grid = sorted(set(eta_grid)) if eta_grid is not None else sorted(set(draws.eta.tolist()))
    counts = {float(e): float(np.sum(draws.eta == e)) / len(draws) for e in grid}
    return PosteriorSummary(
        beta_median=np.median(beta_orig, axis=0),
        beta0_median=float(np.median(beta0)),
        inclusion_prob=pip,
        eta_posterior=counts,
        mpm_selected=pip >= 0.5,
        column_names=tuple(column_names) or tuple(f"x{j + 1}" for j in range(p)),
    )


def _check_columns(x_new, standardizer):
    x_new = np.asarray(x_new, dtype=float)
    if x_new.ndim == 1:
        x_new = x_new.reshape(1, -1)
    p = standardizer.x_means.shape[0]
    if x_new.shape[1] != p:
        raise DataError(f"new data have {x_new.shape[1]} columns, model expects {p}")
    return x_new


def predictive_draws(draws, reduced_indices, standardizer, x_new, rng):
    """Mean-response and posterior-predictive draws, each ``(T, m)`` on the raw scale."""
    x_new = _check_columns(x_new, standardizer)
    idx = np.asarray(reduced_indices, dtype=int)
    b = draws.beta * standardizer.y_sd / standardizer.x_sds[idx]
    beta0 = standardizer.y_mean - b @ standardizer.x_means[idx]
    mu = beta0[:, None] + b @ x_new[:, idx].T
    t, m = mu.shape
    eta = np.repeat(draws.eta, m)
    rho2 = np.repeat(draws.rho2, m)
    s2 = np.asarray(gig_sample(1.0, eta / rho2, eta * rho2, rng)).reshape(t, m)
    eps = rng.standard_normal((t, m)) * np.sqrt(s2) * standardizer.y_sd
    return mu, mu + eps


def predict(draws, reduced_indices, standardizer, x_new, level=0.90, rng=None, chunk=200):
    """Posterior-median point predictions with equal-tailed predictive intervals.

    The interval is clamped to contain the point, which only binds at very
    small ``level``.
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    if len(draws) == 0:
        raise ValueError("cannot predict from an empty chain")
    rng = np.random.default_rng() if rng is None else rng
    x_new = _check_columns(x_new, standardizer)
    alpha = 1.0 - level
    pts, los, his = [], [], []
    for start in range(0, x_new.shape[0], chunk):
        mu, ystar = predictive_draws(draws, reduced_indices, standardizer,
                                     x_new[start:start + chunk], rng)
        pts.append(np.median(mu, axis=0))
        q = np.quantile(ystar, [alpha / 2.0, 1.0 - alpha / 2.0], axis=0)
        los.append(q[0])
        his.append(q[1])
    point = np.concatenate(pts) if pts else np.zeros(0)
    lower = np.minimum(np.concatenate(los) if los else np.zeros(0), point)
    upper = np.maximum(np.concatenate(his) if his else np.zeros(0), point)
    return PredictionResult(point, lower, upper, level)


def predict_mode(beta_std, standardizer, x_new):
    """Point prediction from a standardized-scale coefficient vector (no intervals)."""
    x_new = _check_columns(x_new, standardizer)
    return standardizer.y_mean + standardizer.y_sd * (standardizer.transform_x(x_new) @ beta_std)


def selection_rates(gamma_true, selected):
    """``(tpr, tnr)``; a rate with an empty reference class is ``None``."""
    gamma_true = np.asarray(gamma_true, dtype=bool)
    selected = np.asarray(selected, dtype=bool)
    n_sig = gamma_true.sum()
    n_noise = (~gamma_true).sum()
    tpr = float((selected & gamma_true).sum() / n_sig) if n_sig else None
    tnr = float((~selected & ~gamma_true).sum() / n_noise) if n_noise else None
    return tpr, tnr


def metrics(truth, summary, x_train, pred=None, y_test=None):
    """Estimation, selection and predictive metrics against a known truth.

    ``rmse_mean_response`` is evaluated on the training design ``x_train``.
    """
    beta_hat = np.asarray(summary.beta_median)
    if beta_hat.shape != truth.beta.shape:
        raise DataError(f"estimate has {beta_hat.size} coefficients, truth has {truth.beta.size}")
    diff = np.concatenate([[truth.beta0 - summary.beta0_median], truth.beta - beta_hat])
    rmse_beta = math.sqrt(np.mean(diff**2))
    x_train = np.asarray(x_train, dtype=float)
    mean_diff = diff[0] + x_train @ diff[1:]
    rmse_mu = math.sqrt(np.mean(mean_diff**2))
    tpr, tnr = selection_rates(truth.gamma_true, summary.mpm_selected)
    report = EvalReport(rmse_beta, rmse_mu, tpr, tnr)
    if pred is not None and y_test is not None:
        y_test = np.asarray(y_test, dtype=float)
        if y_test.shape != pred.point.shape:
            raise DataError("test responses and predictions differ in length")
        report.mead = float(np.median(np.abs(y_test - pred.point)))
        report.coverage = float(np.mean((y_test >= pred.lower) & (y_test <= pred.upper)))
        report.median_width = float(np.median(pred.upper - pred.lower))
    return report


def five_number_summary(reports):
    """Per-metric ``(min, q1, median, q3, max)`` across replicate reports."""
    table = {}
    for name in EvalReport.__dataclass_fields__:
        vals = np.array([getattr(r, name) for r in reports if getattr(r, name) is not None])
        if vals.size:
            table[name] = tuple(float(v) for v in np.quantile(vals, [0, 0.25, 0.5, 0.75, 1.0]))
    return table
