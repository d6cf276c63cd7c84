"""Command-line front end.

    mtgp fit --method {em,gradient} [--config cfg.json] --data train.csv --out model.json
    mtgp predict --model model.json --queries queries.csv --out predictions.csv
    mtgp gradcheck --data train.csv [--config cfg.json]

Exit codes: 0 success, 1 usage or parse error, 2 numerical failure.
Set ``MTGP_LOG_LEVEL`` (e.g. ``DEBUG``) for log output on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields

import numpy as np

from .estimators import EmConfig, FitError, InnerOptConfig, default_params, em_fit, gradient_fit
from .io import DatasetParseError, ModelFile, ModelFileError, load_dataset, load_queries
from .kernels import DEFAULT_JITTER
from .likelihood import MtgpParams, log_marginal_likelihood, mll_grad
from .linalg import CGConvergenceError
from .posterior import PredictionRequest, predict

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2
GRADCHECK_STEP = 1e-5
GRADCHECK_LIMIT = 1e-4
NUMERICAL_ERRORS = (np.linalg.LinAlgError, CGConvergenceError, FitError, FloatingPointError)

log = logging.getLogger("mtgp")


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    method: str = "gradient"
    kernel: str = "rbf-ard"
    jitter: float = DEFAULT_JITTER
    seed: int = 0
    masked_mode: str = "auto"
    gradient: InnerOptConfig = field(default_factory=lambda: InnerOptConfig(num_restarts=5))
    em: EmConfig = field(default_factory=EmConfig)

    def __post_init__(self):
        if self.method not in ("em", "gradient"):
            raise UsageError(f"method must be 'em' or 'gradient', not {self.method!r}")
        if self.kernel != "rbf-ard":
            raise UsageError(f"unsupported kernel {self.kernel!r}")
        if not 0 <= self.jitter < 1:
            raise UsageError("jitter must lie in [0, 1)")
        if self.masked_mode not in ("auto", "dense", "iterative"):
            raise UsageError(f"unknown masked_mode {self.masked_mode!r}")

    @classmethod
    def from_dict(cls, doc, method=None, seed=None):
        doc = dict(doc)
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        if method is not None:
            doc["method"] = method
        if seed is not None:
            doc["seed"] = seed
        seed = int(doc.get("seed", 0))
        try:
            grad = dict(doc.pop("gradient", {}) or {})
            grad.setdefault("num_restarts", 5)
            grad["seed"] = seed
            em = dict(doc.pop("em", {}) or {})
            em["seed"] = seed
            if "theta_opt" in em:
                em["theta_opt"] = InnerOptConfig(**em["theta_opt"])
            return cls(gradient=InnerOptConfig(**grad), em=EmConfig(**em), **doc)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid config: {exc}") from None


def load_config(path, method=None, seed=None):
    doc = {}
    if path is not None:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
        if not isinstance(doc, dict):
            raise UsageError("config must be a JSON object")
    return RunConfig.from_dict(doc, method, seed)


def _fmt(v):
    return repr(float(v))


def cmd_fit(args):
    cfg = load_config(args.config, args.method, args.seed)
    ds = load_dataset(args.data)
    if cfg.method == "em" and not ds.is_full:
        raise UsageError("EM requires full observations")
    init = default_params(ds)
    if cfg.method == "em":
        result = em_fit(ds, init, cfg.em, cfg.jitter)
    else:
        result = gradient_fit(ds, init, cfg.gradient, cfg.jitter)
    objective = log_marginal_likelihood(result.params, ds, cfg.masked_mode, cfg.jitter)
    meta = {
        "method": cfg.method,
        "seed": cfg.seed,
        "objective": float(objective),
        "iterations": int(result.iterations_used),
        "converged": bool(result.converged),
    }
    ModelFile(result.params, ds, cfg.jitter, meta).save(args.out)
    trace = result.trace
    print(f"final objective: {objective:.10g}")
    if trace:
        print(f"iterations: {len(trace)}  first: {trace[0]:.10g}  last: {trace[-1]:.10g}")
    else:
        print("iterations: 0")
    print(f"converged: {result.converged}")
    return EXIT_OK


def cmd_predict(args):
    model = ModelFile.load(args.model)
    x, tasks = load_queries(args.queries, model.params.input_dim)
    if np.any(tasks >= model.params.num_tasks):
        bad = int(tasks[tasks >= model.params.num_tasks][0])
        raise UsageError(f"task index {bad} out of range for M={model.params.num_tasks}")
    means = variances = np.zeros(0)
    if tasks.size:
        pred = predict(model.params, model.dataset, PredictionRequest(x, tasks),
                       include_noise=args.include_noise, jitter=model.jitter)
        means, variances = pred.means, pred.variances
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["row", "task", "mean", "variance"])
        for i, (t, mu, var) in enumerate(zip(tasks, means, variances)):
            writer.writerow([i, int(t), _fmt(mu), _fmt(var)])
    return EXIT_OK


def gradient_check(params: MtgpParams, ds, masked_mode="dense", jitter=DEFAULT_JITTER,
                   step=GRADCHECK_STEP):
    """Analytic gradient against central differences of the objective.

    Returns rows ``(name, analytic, numeric, error)`` with
    ``error = |analytic - numeric| / max(1, |numeric|)``.
    """
    analytic = mll_grad(params, ds, jitter).gradient
    v = params.to_vector()
    d, m = params.input_dim, params.num_tasks
    rows = []
    for i, name in enumerate(params.param_names()):
        e = np.zeros_like(v)
        e[i] = step
        up = log_marginal_likelihood(MtgpParams.from_vector(v + e, d, m), ds, masked_mode, jitter)
        down = log_marginal_likelihood(MtgpParams.from_vector(v - e, d, m), ds, masked_mode, jitter)
        numeric = (up - down) / (2 * step)
        err = abs(analytic[i] - numeric) / max(1.0, abs(numeric))
        rows.append((name, float(analytic[i]), float(numeric), float(err)))
    return rows


def cmd_gradcheck(args):
    cfg = load_config(args.config, None, args.seed)
    ds = load_dataset(args.data)
    base = default_params(ds)
    rng = np.random.default_rng(cfg.seed)
    v = base.to_vector() + 0.3 * rng.standard_normal(base.num_params)
    params = MtgpParams.from_vector(v, base.input_dim, base.num_tasks)
    mode = "dense" if cfg.masked_mode == "auto" else cfg.masked_mode
    rows = gradient_check(params, ds, mode, cfg.jitter)
    width = max(len(r[0]) for r in rows)
    print(f"{'parameter':<{width}}  {'analytic':>16}  {'numeric':>16}  {'error':>10}")
    for name, a, n, err in rows:
        print(f"{name:<{width}}  {a:>16.9e}  {n:>16.9e}  {err:>10.3e}")
    worst = max(r[3] for r in rows)
    ok = worst <= GRADCHECK_LIMIT
    print(f"max error {worst:.3e}: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_NUMERICAL


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="mtgp", description="Multi-task Gaussian process regression.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    fit = sub.add_parser("fit", help="fit hyperparameters and write a model file")
    fit.add_argument("--method", choices=["em", "gradient"])
    fit.add_argument("--config")
    fit.add_argument("--data", required=True)
    fit.add_argument("--out", required=True)
    fit.add_argument("--seed", type=int)
    fit.set_defaults(func=cmd_fit)

    pred = sub.add_parser("predict", help="posterior mean and variance at query points")
    pred.add_argument("--model", required=True)
    pred.add_argument("--queries", required=True)
    pred.add_argument("--out", required=True)
    pred.add_argument("--include-noise", action="store_true",
                      help="add the task noise variance to the predicted variance")
    pred.set_defaults(func=cmd_predict)

    check = sub.add_parser("gradcheck", help="compare analytic and numeric gradients")
    check.add_argument("--data", required=True)
    check.add_argument("--config")
    check.add_argument("--seed", type=int)
    check.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    level = os.environ.get("MTGP_LOG_LEVEL", "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        level = "WARNING"
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help, or a usage error already reported
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, DatasetParseError, ModelFileError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
