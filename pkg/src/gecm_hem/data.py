"""Datasets, standardization, CSV I/O and the synthetic benchmark scenarios."""

import csv
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .distributions import hyperbolic_sample, make_rng, student_t_sample
from .exceptions import DataError

__all__ = [
    "DataError",
    "Dataset",
    "Standardizer",
    "ScenarioConfig",
    "TrueModel",
    "SCENARIOS",
    "scenario_config",
    "standardize",
    "generate_scenario",
    "load_csv",
    "write_csv",
    "split",
]


@dataclass(frozen=True)
class Dataset:
    y: np.ndarray
    x: np.ndarray
    column_names: tuple = ()

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.shape[0] != y.shape[0]:
            raise DataError(f"x has {x.shape[0]} rows but y has {y.shape[0]}")
        if y.shape[0] < 1:
            raise DataError("dataset has no rows")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
            raise DataError("data contain non-finite values")
        names = tuple(self.column_names) or tuple(f"x{j + 1}" for j in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise DataError(f"{len(names)} column names for {x.shape[1]} columns")
        y.setflags(write=False)
        x.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "column_names", names)

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def p(self):
        return self.x.shape[1]

    def column(self, key):
        """Column by integer index or by name."""
        if isinstance(key, str):
            try:
                key = self.column_names.index(key)
            except ValueError:
                raise KeyError(key) from None
        return self.x[:, key]

    def take(self, rows):
        rows = np.asarray(rows)
        return Dataset(self.y[rows], self.x[rows], self.column_names)


@dataclass(frozen=True)
class Standardizer:
    """Column-wise centering/scaling (sample sd, n-1 divisor)."""

    y_mean: float
    y_sd: float
    x_means: np.ndarray
    x_sds: np.ndarray

    @classmethod
    def fit(cls, d):
        if d.n < 2:
            raise DataError("standardization needs at least 2 observations")
        sd = d.x.std(axis=0, ddof=1)
        const = np.flatnonzero(~(sd > 0))
        if const.size:
            raise DataError(f"column {d.column_names[const[0]]!r} is constant")
        y_sd = d.y.std(ddof=1)
        if not y_sd > 0:
            raise DataError("response is constant")
        return cls(float(d.y.mean()), float(y_sd), d.x.mean(axis=0), sd)

    def transform_x(self, x):
        return (np.asarray(x, dtype=float) - self.x_means) / self.x_sds

    def transform_y(self, y):
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_sd

    def inverse_x(self, x):
        return np.asarray(x, dtype=float) * self.x_sds + self.x_means

    def inverse_y(self, y):
        return np.asarray(y, dtype=float) * self.y_sd + self.y_mean

    def transform(self, d):
        return Dataset(self.transform_y(d.y), self.transform_x(d.x), d.column_names)

    def inverse(self, d):
        return Dataset(self.inverse_y(d.y), self.inverse_x(d.x), d.column_names)

    def coef_to_original(self, beta_std):
        """Map standardized-scale slopes (last axis = columns) to the raw scale."""
        return np.asarray(beta_std) * self.y_sd / self.x_sds

    def intercept(self, beta_orig):
        """Raw-scale intercept ``ybar - sum_j beta_j xbar_j`` for each coefficient row."""
        return self.y_mean - np.asarray(beta_orig) @ self.x_means


def standardize(d):
    """Return ``(standardized dataset, Standardizer)``."""
    st = Standardizer.fit(d)
    return st.transform(d), st


# ---------------------------------------------------------------------------
# scenarios


@dataclass(frozen=True)
class ScenarioConfig:
    scenario_id: str = "custom"
    n: int = 400
    p: int = 1000
    n_signals: int = 100
    signal_value: float = 1.5
    intercept: float = 2.0
    correlation: str = "ar1(0.6)"
    error_law: str = "hyperbolic(0.5,2)"
    seed: int = 0

    def __post_init__(self):
        if self.n < 2 or self.p < 1:
            raise ValueError("need n >= 2 and p >= 1")
        if not 0 <= self.n_signals <= self.p:
            raise ValueError("n_signals must lie in [0, p]")
        kind, args = parse_law(self.correlation)
        if kind == "ar1":
            if len(args) != 1 or not -1.0 < args[0] < 1.0:
                raise ValueError("ar1 needs a single coefficient in (-1, 1)")
        elif kind != "independent":
            raise ValueError(f"unknown correlation {self.correlation!r}")
        kind, args = parse_law(self.error_law)
        arity = {"hyperbolic": 2, "normal": 1, "student_t": 1}
        if kind not in arity or len(args) != arity[kind] or min(args) <= 0:
            raise ValueError(f"bad error law {self.error_law!r}")


SCENARIOS = {
    "I": dict(p=1000, n_signals=100, signal_value=1.5, correlation="ar1(0.6)",
              error_law="hyperbolic(0.5,2)"),
    "II": dict(p=1000, n_signals=100, signal_value=1.5, correlation="ar1(0.6)",
               error_law="normal(2)"),
    "III": dict(p=1500, n_signals=50, signal_value=1.5, correlation="independent",
                error_law="student_t(2.05)"),
    "IV": dict(p=1500, n_signals=50, signal_value=0.9, correlation="independent",
               error_law="hyperbolic(0.5,2)"),
}


def scenario_config(name, **overrides):
    """Preset I..IV (n=400, intercept 2) with optional desk-scale overrides."""
    if name not in SCENARIOS:
        raise ValueError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
    base = dict(scenario_id=name, n=400, intercept=2.0, **SCENARIOS[name])
    base.update({k: v for k, v in overrides.items() if v is not None})
    return ScenarioConfig(**base)


_LAW = re.compile(r"^\s*([a-z_0-9]+)\s*(?:\((.*)\))?\s*$")


def parse_law(text):
    """``"ar1(0.6)" -> ("ar1", (0.6,))``."""
    m = _LAW.match(text)
    if not m:
        raise ValueError(f"cannot parse {text!r}")
    args = tuple(float(a) for a in m.group(2).split(",")) if m.group(2) else ()
    return m.group(1), args


@dataclass(frozen=True)
class TrueModel:
    beta0: float
    beta: np.ndarray
    gamma_true: np.ndarray = field(default=None)

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "gamma_true", beta != 0)


def _covariates(cfg, n, rng):
    kind, args = parse_law(cfg.correlation)
    z = rng.standard_normal((n, cfg.p))
    if kind == "independent":
        return z
    phi = args[0]
    scale = np.sqrt(1.0 - phi * phi)
    x = np.empty_like(z)
    x[:, 0] = z[:, 0]
    for j in range(1, cfg.p):
        x[:, j] = phi * x[:, j - 1] + scale * z[:, j]
    return x


def _errors(cfg, n, rng):
    kind, args = parse_law(cfg.error_law)
    if kind == "hyperbolic":
        return hyperbolic_sample(args[0], args[1], rng, size=n)
    if kind == "normal":
        return rng.normal(0.0, np.sqrt(args[0]), size=n)
    return student_t_sample(args[0], rng, size=n)


def true_model(cfg):
    beta = np.zeros(cfg.p)
    beta[: cfg.n_signals] = cfg.signal_value
    return TrueModel(cfg.intercept, beta)


def generate_scenario(cfg, n=None, stream="simulate"):
    """Draw ``(Dataset, TrueModel)``; the intercept is added on the raw scale.

    ``n`` overrides ``cfg.n`` (e.g. for a test set drawn on a separate
    ``stream``).
    """
    n = cfg.n if n is None else int(n)
    rng = make_rng(cfg.seed, stream)
    truth = true_model(cfg)
    x = _covariates(cfg, n, rng)
    y = truth.beta0 + x @ truth.beta + _errors(cfg, n, rng)
    names = tuple(f"x{j + 1}" for j in range(cfg.p))
    return Dataset(y, x, names), truth


# ---------------------------------------------------------------------------
# CSV


def load_csv(path, response_column="y", require_response=True):
    """Read a header-first numeric CSV into a :class:`Dataset`.

    Rows in error messages are 1-based data rows (the header is not counted).
    Without ``require_response`` a missing response column yields ``y = 0``.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    if response_column in header:
        y_idx = header.index(response_column)
    elif require_response:
        raise DataError(f"{path}: missing response column {response_column!r}")
    else:
        y_idx = None
    values = np.empty((len(rows), len(header)))
    for i, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise DataError(f"{path}: row {i} has {len(row)} fields, expected {len(header)}")
        for j, cell in enumerate(row):
            try:
                values[i - 1, j] = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}: non-numeric value {cell!r} at row {i}, column {header[j]!r}"
                ) from None
    keep = [j for j in range(len(header)) if j != y_idx]
    y = values[:, y_idx] if y_idx is not None else np.zeros(len(rows))
    return Dataset(y, values[:, keep], tuple(header[j] for j in keep))


def write_csv(path, d, response_column="y"):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([response_column, *d.column_names])
        for yi, xi in zip(d.y, d.x):
            w.writerow([repr(float(yi)), *(repr(float(v)) for v in xi)])


def split(d, test_fraction, seed):
    """Random ``(train, test)`` split; deterministic in ``seed``."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    n_test = int(round(d.n * test_fraction))
    n_test = min(max(n_test, 1), d.n - 1)
    perm = make_rng(seed, "split").permutation(d.n)
    test, train = np.sort(perm[:n_test]), np.sort(perm[n_test:])
    return d.take(train), d.take(test)


def with_overrides(cfg, **kw):
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
