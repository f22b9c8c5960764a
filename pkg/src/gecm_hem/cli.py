"""Command-line front end: ``simulate``, ``fit``, ``predict`` and ``evaluate``.

Configuration is a flat ``key = value`` file (``#`` starts a comment);
command-line flags override file values. Every run writes ``manifest.txt``
holding the fully resolved configuration, which can be fed back with
``--config`` to repeat the run.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

import argparse
import csv
import dataclasses
import hashlib
import os
import sys
from dataclasses import dataclass, fields

import numpy as np

from . import __version__
from .cv import WORKERS_ENV
from .data import (Dataset, Standardizer, TrueModel, generate_scenario, load_csv,
                   scenario_config, write_csv)
from .distributions import make_rng
from .ecm import ETA_GRID, KAPPA0_GRID, HyperParams
from .estimator import StageError, fit_pipeline
from .exceptions import DataError, NumericalError
from .gibbs import GibbsDraws
from .inference import (EvalReport, PosteriorSummary, PredictionResult, five_number_summary,
                        metrics, predict, predict_mode)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    mode: str = "fit"
    out: str = "."
    seed: int = 0
    workers: int = None
    # simulate
    scenario: str = "I"
    n: int = None
    p: int = None
    n_signals: int = None
    signal_value: float = None
    intercept: float = None
    correlation: str = None
    error_law: str = None
    n_test: int = 1000
    # fit
    data: str = "data.csv"
    response: str = "y"
    data_sha256: str = None
    kappa0: float = None
    kappa1: float = 1.0
    lambda_tau: float = 1.0
    a_rho: float = 2.1
    b_rho: float = 0.1
    c_theta: float = 1.0
    d_theta: float = 1.0
    eta_fixed: float = 1.0
    eta_grid: tuple = ETA_GRID
    kappa0_grid: tuple = KAPPA0_GRID
    n_folds: int = 10
    iters: int = 11000
    burnin: int = 1000
    thin: int = 1
    skip_screening: bool = False
    ecm_only: bool = False
    max_iter: int = 500
    tol: float = 1e-6
    # predict / evaluate
    fit_dir: str = None
    new_data: str = None
    truth: str = None
    test: str = None
    level: float = 0.90
    aggregate: tuple = ()

    def hyperparams(self):
        return HyperParams(
            kappa0=self.kappa0 if self.kappa0 is not None else min(0.1, self.kappa1),
            kappa1=self.kappa1, lambda_tau=self.lambda_tau, a_rho=self.a_rho, b_rho=self.b_rho,
            c_theta=self.c_theta, d_theta=self.d_theta, eta_fixed=self.eta_fixed,
            eta_grid=self.eta_grid, kappa0_grid=self.kappa0_grid,
        )


_FIELDS = {f.name: f for f in fields(RunConfig)}
_KINDS = {
    "seed": int, "workers": int, "n": int, "p": int, "n_signals": int, "n_test": int,
    "n_folds": int, "iters": int, "burnin": int, "thin": int, "max_iter": int,
    "signal_value": float, "intercept": float, "kappa0": float, "kappa1": float,
    "lambda_tau": float, "a_rho": float, "b_rho": float, "c_theta": float, "d_theta": float,
    "eta_fixed": float, "tol": float, "level": float,
    "skip_screening": bool, "ecm_only": bool,
    "eta_grid": "floats", "kappa0_grid": "floats", "aggregate": "strings",
}


def _coerce(key, text):
    text = text.strip()
    kind = _KINDS.get(key, str)
    if text.lower() in ("", "none", "na") and kind not in ("strings",) and key not in ("mode",):
        return None
    try:
        if kind is bool:
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if kind == "floats":
            return tuple(float(v) for v in text.split(",") if v.strip())
        if kind == "strings":
            return tuple(v.strip() for v in text.split(",") if v.strip())
        return kind(text)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {text!r}") from None


def _format(value):
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def read_config(path):
    """Parse a ``key = value`` file; unknown keys are rejected by name."""
    values = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, value)
    return values


def write_manifest(path, cfg, extra_comments=()):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# gecm_hem {__version__} resolved configuration\n")
        for line in extra_comments:
            fh.write(f"# {line}\n")
        for f in fields(RunConfig):
            fh.write(f"{f.name} = {_format(getattr(cfg, f.name))}\n")


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _add(parser, *keys):
    for key in keys:
        flag = "--" + key.replace("_", "-")
        if _KINDS.get(key) is bool:
            parser.add_argument(flag, dest=key, action="store_const", const="true",
                                default=argparse.SUPPRESS)
        else:
            parser.add_argument(flag, dest=key, default=argparse.SUPPRESS, metavar=key.upper())


_HP_KEYS = ("kappa0", "kappa1", "lambda_tau", "a_rho", "b_rho", "c_theta", "d_theta",
            "eta_fixed", "eta_grid", "kappa0_grid")


def build_parser():
    parser = _Parser(prog="gecm-hem", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="mode", required=True, parser_class=_Parser)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="key = value file (flags override it)")
        _add(p, "out", "seed")
        return p

    p = command("simulate", "draw a synthetic benchmark data set")
    _add(p, "scenario", "n", "p", "n_signals", "signal_value", "intercept", "correlation",
         "error_law", "n_test")
    p = command("fit", "cross-validate, screen and sample")
    _add(p, "data", "response", "workers", *_HP_KEYS, "n_folds", "iters", "burnin", "thin",
         "skip_screening", "ecm_only", "max_iter", "tol")
    p = command("predict", "posterior predictive intervals for new rows")
    _add(p, "fit_dir", "new_data", "response", "level")
    p = command("evaluate", "score a fit against the generating truth")
    _add(p, "fit_dir", "truth", "test", "data", "response", "level")
    p.add_argument("--aggregate", nargs="+", dest="aggregate", default=argparse.SUPPRESS,
                   metavar="DIR", help="summarize report.txt across replicate directories")
    return parser


def resolve_config(argv):
    args = vars(build_parser().parse_args(argv))
    mode = args.pop("mode")
    config_path = args.pop("config", None)
    values = read_config(config_path) if config_path else {}
    for key, raw in args.items():
        values[key] = tuple(raw) if key == "aggregate" else _coerce(key, raw)
    values["mode"] = mode
    cfg = RunConfig(**values)
    if cfg.workers is None:
        env = os.environ.get(WORKERS_ENV)
        cfg.workers = int(env) if env else (os.cpu_count() or 1)
    return cfg


# ---------------------------------------------------------------------------
# file helpers


def _out_dir(cfg):
    os.makedirs(cfg.out, exist_ok=True)
    return cfg.out


def write_truth(path, truth, names):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["term", "beta", "gamma"])
        w.writerow(["(intercept)", repr(float(truth.beta0)), 1])
        for name, b, g in zip(names, truth.beta, truth.gamma_true):
            w.writerow([name, repr(float(b)), int(g)])


def read_truth(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        return TrueModel(float(rows[0]["beta"]), np.array([float(r["beta"]) for r in rows[1:]])), \
            tuple(r["term"] for r in rows[1:])
    except (KeyError, IndexError, ValueError) as exc:
        raise DataError(f"{path}: malformed truth file ({exc})") from None


def write_standardizer(path, st, names, response):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["column", "mean", "sd"])
        w.writerow([response, repr(st.y_mean), repr(st.y_sd)])
        for name, m, s in zip(names, st.x_means, st.x_sds):
            w.writerow([name, repr(float(m)), repr(float(s))])


def read_standardizer(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    st = Standardizer(float(rows[0]["mean"]), float(rows[0]["sd"]),
                      np.array([float(r["mean"]) for r in rows[1:]]),
                      np.array([float(r["sd"]) for r in rows[1:]]))
    return st, tuple(r["column"] for r in rows[1:])


def write_ecm(out, res):
    fit = res.ecm_fit
    s = fit.final_state
    with open(os.path.join(out, "ecm_fit.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["term", "beta_std", "beta", "inclusion_weight", "selected"])
        beta = res.standardizer.coef_to_original(s.beta)
        for name, bs, b, g, sel in zip(res.column_names, s.beta, beta, s.g, fit.selected):
            w.writerow([name, repr(float(bs)), repr(float(b)), repr(float(g)), int(sel)])
    diag = {
        "kappa0": res.kappa0, "iterations": fit.iterations, "converged": fit.converged,
        "objective": s.q_value, "rho2": s.rho2, "tau2": s.tau2, "theta": s.theta,
        "p_star": fit.p_star,
    }
    with open(os.path.join(out, "ecm_diagnostics.txt"), "w", encoding="utf-8") as fh:
        for k, v in diag.items():
            fh.write(f"{k} = {_format(v if not isinstance(v, np.floating) else float(v))}\n")


def write_eta_posterior(path, summary):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["eta", "probability"])
        for eta, prob in summary.eta_posterior.items():
            w.writerow([repr(float(eta)), repr(float(prob))])


def _aligned(d, names, path):
    """Reorder ``d`` to the training column order; complain about the first mismatch."""
    missing = [c for c in names if c not in d.column_names]
    if missing:
        raise DataError(f"{path}: missing column {missing[0]!r}")
    extra = [c for c in d.column_names if c not in names]
    if extra:
        raise DataError(f"{path}: unexpected column {extra[0]!r}")
    order = [d.column_names.index(c) for c in names]
    return Dataset(d.y, d.x[:, order], tuple(names))


def _load_fit(fit_dir):
    if not fit_dir:
        raise ConfigError("fit_dir is required")
    try:
        st, names = read_standardizer(os.path.join(fit_dir, "standardizer.csv"))
    except OSError as exc:
        raise DataError(f"{fit_dir}: not a fit directory ({exc.strerror})") from None
    draws_path = os.path.join(fit_dir, "draws.csv")
    draws = GibbsDraws.from_csv(draws_path) if os.path.exists(draws_path) else None
    idx = None
    if draws is not None:
        idx = np.array([names.index(c) for c in draws.column_names], dtype=int)
    return st, names, draws, idx


def _ecm_beta(fit_dir, names):
    path = os.path.join(fit_dir, "ecm_fit.csv")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if [r["term"] for r in rows] != list(names):
        raise DataError(f"{path}: columns do not match the standardizer")
    return np.array([float(r["beta_std"]) for r in rows])


def _predictions(cfg, fit_dir, x, st, names, draws, idx):
    if draws is not None:
        return predict(draws, idx, st, x, level=cfg.level, rng=make_rng(cfg.seed, "predict"))
    point = predict_mode(_ecm_beta(fit_dir, names), st, x)
    nan = np.full_like(point, np.nan)
    return PredictionResult(point, nan, nan.copy(), cfg.level)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg):
    out = _out_dir(cfg)
    sc = scenario_config(cfg.scenario, n=cfg.n, p=cfg.p, n_signals=cfg.n_signals,
                         signal_value=cfg.signal_value, intercept=cfg.intercept,
                         correlation=cfg.correlation, error_law=cfg.error_law, seed=cfg.seed)
    d, truth = generate_scenario(sc)
    data_path = os.path.join(out, "data.csv")
    write_csv(data_path, d, cfg.response)
    write_truth(os.path.join(out, "truth.csv"), truth, d.column_names)
    if cfg.n_test:
        test, _ = generate_scenario(sc, n=cfg.n_test, stream="simulate_test")
        write_csv(os.path.join(out, "test.csv"), test, cfg.response)
    digest = sha256_file(data_path)
    if cfg.data_sha256 and cfg.data_sha256 != digest:
        raise DataError(f"{data_path}: sha256 {digest} differs from the manifest's "
                        f"{cfg.data_sha256}")
    resolved = dataclasses.replace(
        cfg, n=sc.n, p=sc.p, n_signals=sc.n_signals, signal_value=sc.signal_value,
        intercept=sc.intercept, correlation=sc.correlation, error_law=sc.error_law,
        data=os.path.abspath(data_path), data_sha256=digest)
    write_manifest(os.path.join(out, "manifest.txt"), resolved,
                   ["streams: simulate (training rows), simulate_test (test rows)"])
    return resolved


def cmd_fit(cfg):
    out = _out_dir(cfg)
    d = load_csv(cfg.data, cfg.response)
    digest = sha256_file(cfg.data)
    if cfg.data_sha256 and cfg.data_sha256 != digest:
        raise DataError(f"{cfg.data}: sha256 {digest} differs from the manifest's "
                        f"{cfg.data_sha256}")
    if cfg.burnin > cfg.iters and not cfg.ecm_only:
        raise ConfigError("burnin exceeds iters")
    hp = cfg.hyperparams()
    resolved = dataclasses.replace(cfg, data=os.path.abspath(cfg.data), data_sha256=digest)
    comments = ["streams: cv (fold assignment), gibbs (sampler), predict (intervals)"]
    manifest = os.path.join(out, "manifest.txt")
    write_manifest(manifest, resolved, comments)

    def flush(stage, res):
        if stage == "cv":
            res.cv_report.write(os.path.join(out, "cv_report.csv"))
        elif stage == "ecm":
            write_ecm(out, res)
        elif stage == "gibbs":
            res.draws.to_csv(os.path.join(out, "draws.csv"))

    if os.path.exists(os.path.join(out, "draws.csv")):
        os.remove(os.path.join(out, "draws.csv"))
    res = fit_pipeline(d, hp, kappa0=cfg.kappa0, n_folds=cfg.n_folds, n_iter=cfg.iters,
                       burnin=cfg.burnin, thin=cfg.thin, screening=not cfg.skip_screening,
                       ecm_only=cfg.ecm_only, max_iter=cfg.max_iter, tol=cfg.tol,
                       workers=cfg.workers, seed=cfg.seed, hook=flush)
    write_standardizer(os.path.join(out, "standardizer.csv"), res.standardizer,
                       d.column_names, cfg.response)
    if res.summary is None:
        raise NumericalError("no retained draws (iters must exceed burnin)")
    res.summary.write(os.path.join(out, "summary.csv"))
    write_eta_posterior(os.path.join(out, "eta_posterior.csv"), res.summary)
    return res


def cmd_predict(cfg):
    out = _out_dir(cfg)
    st, names, draws, idx = _load_fit(cfg.fit_dir)
    if not cfg.new_data:
        raise ConfigError("new_data is required")
    d = _aligned(load_csv(cfg.new_data, cfg.response, require_response=False), names,
                 cfg.new_data)
    pred = _predictions(cfg, cfg.fit_dir, d.x, st, names, draws, idx)
    pred.write(os.path.join(out, "predictions.csv"))
    write_manifest(os.path.join(out, "manifest.txt"), cfg)
    return pred


def _aggregate(cfg):
    out = _out_dir(cfg)
    reports = []
    for d in cfg.aggregate:
        path = os.path.join(d, "report.txt")
        try:
            with open(path, encoding="utf-8") as fh:
                reports.append(EvalReport.from_text(fh.read()))
        except OSError as exc:
            raise DataError(f"{path}: {exc.strerror}") from None
    table = five_number_summary(reports)
    with open(os.path.join(out, "aggregate.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "min", "q1", "median", "q3", "max", "replicates"])
        for name, stats in table.items():
            count = sum(getattr(r, name) is not None for r in reports)
            w.writerow([name, *(repr(v) for v in stats), count])
    return table


def cmd_evaluate(cfg):
    if cfg.aggregate:
        return _aggregate(cfg)
    out = _out_dir(cfg)
    st, names, draws, idx = _load_fit(cfg.fit_dir)
    if not cfg.truth:
        raise ConfigError("truth is required")
    truth, truth_names = read_truth(cfg.truth)
    if tuple(truth_names) != tuple(names):
        bad = next((a for a, b in zip(truth_names, names) if a != b), None)
        raise DataError(f"{cfg.truth}: column {bad!r} does not match the fit")
    summary = PosteriorSummary.read(os.path.join(cfg.fit_dir, "summary.csv"))
    train_path = cfg.data
    manifest = os.path.join(cfg.fit_dir, "manifest.txt")
    if os.path.exists(manifest):
        train_path = read_config(manifest).get("data", train_path)
    train = _aligned(load_csv(train_path, cfg.response), names, train_path)
    pred = y_test = None
    if cfg.test:
        test = _aligned(load_csv(cfg.test, cfg.response), names, cfg.test)
        pred = _predictions(cfg, cfg.fit_dir, test.x, st, names, draws, idx)
        pred.write(os.path.join(out, "test_predictions.csv"))
        y_test = test.y
    report = metrics(truth, summary, train.x, pred, y_test)
    if draws is None:
        report.coverage = report.median_width = None
    with open(os.path.join(out, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(report.to_text())
    return report


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "predict": cmd_predict,
            "evaluate": cmd_evaluate}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = resolve_config(argv)
        COMMANDS[cfg.mode](cfg)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc.original, DataError):
            return EXIT_DATA
        if isinstance(exc.original, (NumericalError, ArithmeticError, np.linalg.LinAlgError)):
            return EXIT_NUMERIC
        return EXIT_USAGE if isinstance(exc.original, ValueError) else EXIT_NUMERIC
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc.filename or ''}: {exc.strerror}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
