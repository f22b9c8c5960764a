"""K-fold selection of the spike scale ``kappa0``.

Every (kappa0, fold) pair is an independent task: the training fold is
standardized on its own statistics, screened by ECM, and scored by the
median absolute error on the held-out rows (raw scale). A kappa0 scores
the median of its fold medians. Results are written into a fixed
(grid index, fold) slot, so the report does not depend on scheduling.
"""

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .data import Standardizer
from .distributions import make_rng
from .ecm import KAPPA0_GRID, run_ecm
from .exceptions import DataError, NumericalError

__all__ = ["CvPlan", "CvReport", "default_workers", "fold_error", "select_kappa0"]

WORKERS_ENV = "GECM_HEM_WORKERS"


def default_workers():
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass(frozen=True)
class CvPlan:
    fold_assignment: np.ndarray
    kappa0_grid: tuple = KAPPA0_GRID
    n_folds: int = 10
    seed: int = 0

    @classmethod
    def create(cls, n, n_folds=10, kappa0_grid=KAPPA0_GRID, seed=0):
        """Balanced random folds: sizes differ by at most one."""
        if n_folds < 2:
            raise ValueError("need at least 2 folds")
        if n < 2 * n_folds:
            raise DataError(f"{n} observations are too few for {n_folds}-fold CV")
        perm = make_rng(seed, "cv").permutation(n)
        labels = np.empty(n, dtype=int)
        labels[perm] = np.arange(n) % n_folds
        return cls(labels, tuple(float(k) for k in kappa0_grid), n_folds, seed)


@dataclass
class CvReport:
    kappa0_grid: tuple
    scores: np.ndarray
    fold_errors: np.ndarray
    best_kappa0: float
    failures: list = field(default_factory=list)

    @property
    def per_kappa0_score(self):
        return {k: float(s) for k, s in zip(self.kappa0_grid, self.scores)}

    def write(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            n_folds = self.fold_errors.shape[1]
            w.writerow(["kappa0", "score", "best", *(f"fold_{f + 1}" for f in range(n_folds))])
            for k, s, row in zip(self.kappa0_grid, self.scores, self.fold_errors):
                w.writerow([repr(k), repr(float(s)), int(k == self.best_kappa0),
                            *(repr(float(v)) for v in row)])


def fold_error(x, y, labels, fold, hp, max_iter=500, tol=1e-6):
    """Median absolute held-out error for one fold at ``hp.kappa0``."""
    train = labels != fold
    test = ~train
    st = Standardizer(float(y[train].mean()), float(y[train].std(ddof=1)),
                      x[train].mean(axis=0), x[train].std(axis=0, ddof=1))
    if not (st.y_sd > 0 and np.all(st.x_sds > 0)):
        raise DataError("constant column within a training fold")
    xs = st.transform_x(x[train])
    ys = st.transform_y(y[train])
    fit = run_ecm(xs, ys, hp, max_iter=max_iter, tol=tol)
    pred = st.y_mean + st.y_sd * (st.transform_x(x[test]) @ fit.final_state.beta)
    return float(np.median(np.abs(y[test] - pred)))


_SHARED = {}


def _init_worker(x, y, labels):
    _SHARED.update(x=x, y=y, labels=labels)


def _task(args):
    fold, hp, max_iter, tol = args
    with threadpool_limits(1):
        try:
            return fold_error(_SHARED["x"], _SHARED["y"], _SHARED["labels"], fold, hp,
                              max_iter, tol), None
        except (NumericalError, DataError, ArithmeticError, np.linalg.LinAlgError) as exc:
            return np.nan, f"{type(exc).__name__}: {exc}"


def select_kappa0(d, hp, plan, workers=None, max_iter=500, tol=1e-6):
    """Score every kappa0 in ``plan.kappa0_grid``; ties go to the smallest kappa0.

    A task that fails marks its kappa0 invalid instead of aborting the sweep.
    """
    x = np.asarray(d.x, dtype=float)
    y = np.asarray(d.y, dtype=float)
    labels = np.asarray(plan.fold_assignment)
    if labels.shape[0] != x.shape[0]:
        raise DataError("fold assignment does not match the data")
    grid = plan.kappa0_grid
    folds = list(range(plan.n_folds))
    tasks = [(f, hp.with_kappa0(min(k, hp.kappa1)), max_iter, tol) for k in grid for f in folds]
    workers = default_workers() if workers is None else max(1, int(workers))

    if workers == 1:
        _init_worker(x, y, labels)
        results = [_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(workers, initializer=_init_worker,
                                 initargs=(x, y, labels)) as pool:
            chunk = max(1, len(tasks) // (4 * workers))
            results = list(pool.map(_task, tasks, chunksize=chunk))

    errors = np.array([r[0] for r in results]).reshape(len(grid), len(folds))
    failures = [(grid[i // len(folds)], i % len(folds), msg)
                for i, (_, msg) in enumerate(results) if msg is not None]
    valid = np.all(np.isfinite(errors), axis=1)
    scores = np.full(len(grid), np.nan)
    scores[valid] = np.median(errors[valid], axis=1)
    if not np.any(valid):
        raise NumericalError("every kappa0 candidate failed during cross-validation")
    best_score = np.min(scores[valid])
    best = min(k for k, s, ok in zip(grid, scores, valid) if ok and s == best_score)
    return CvReport(tuple(grid), scores, errors, float(best), failures)
