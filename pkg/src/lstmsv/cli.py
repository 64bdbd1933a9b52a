"""Command line interface: simulate, fit, marglik, forecast, diagnose, stats.

Every command reads and writes CSV, derives all randomness from one
``--seed`` through named substreams, and drops a JSON sidecar next to its
primary output recording the resolved configuration, a config hash, the
model tag and the library version. Two runs with equal sidecars produce
bit-identical outputs regardless of ``--threads``.

Option precedence is flags > config file > built-in defaults; the config
file is plain ``key = value`` text with ``#`` comments, keys matching the
long option names.

Exit codes: 0 success, 1 runtime numeric failure, 2 usage or validation
error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys

import numpy as np

from . import __version__
from .data import (
    demeaned_returns,
    descriptive_stats,
    log_squared,
    lo_modified_rs,
    read_series,
)
from .evaluate import predictive_scores, qq_points, residual_diagnostics
from .is2 import ConjugateNormalToy, fit_proposal, is2_marglik
from .mcmc import ChainNumericError, SamplerConfig, run_bpm, summarize
from .models import MODEL_TAGS, get_model, simulate, simulate_dgp
from .seeding import substream

__all__ = ["main"]


class UsageError(Exception):
    """Invalid inputs or configuration; maps to exit code 2."""


# Runnable defaults for `simulate` when no parameter file is given.
DEFAULT_SIM_PARAMS = {
    "sv": {"mu": 0.0, "phi": 0.97, "sigma2": 0.04},
    "nsv": {"mu": 0.0, "phi": 0.97, "sigma2": 0.04, "delta": 0.1},
    "lstmsv": {
        "beta0": 0.55,
        "beta1": 0.13,
        "phi": 0.93,
        "sigma2": 0.12,
        **{name: 0.0 for name in get_model("lstmsv").param_names[4:]},
    },
}


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_csv(path, header, rows):
    lines = []
    if header:
        lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _read_params_csv(path, model):
    mapping = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = [f.strip() for f in line.split(",")]
            if len(fields) != 2:
                raise UsageError(f"{path}: line {lineno}: expected name,value")
            name, value = fields
            if lineno == 1 and name.lower() in ("name", "parameter", "param"):
                continue
            try:
                mapping[name] = float(value)
            except ValueError:
                raise UsageError(
                    f"{path}: line {lineno}: cannot parse {value!r} as a number"
                ) from None
    try:
        return model.params_from_mapping(mapping)
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _write_params_csv(path, model, values):
    _write_csv(path, ("name", "value"), list(zip(model.param_names, values)))


def _load_config_file(path):
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise UsageError(f"{path}: line {lineno}: expected key = value")
                key, value = line.split("=", 1)
                values[key.strip().replace("-", "_")] = value.strip()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from None
    return values


def _resolve(args, spec):
    """Merge flag values, config-file values and defaults per the option spec."""
    file_values = _load_config_file(args.config) if getattr(args, "config", None) else {}
    resolved = {}
    for name, typ, default, _help in spec:
        flag_val = getattr(args, name, None)
        if flag_val is not None:
            resolved[name] = flag_val
        elif name in file_values:
            try:
                resolved[name] = typ(file_values[name])
            except ValueError:
                raise UsageError(
                    f"config value for {name!r} is not a valid {typ.__name__}"
                ) from None
        else:
            resolved[name] = default
    return resolved


def _sidecar(path, command, model_tag, seed, resolved, outputs):
    semantic = {k: v for k, v in sorted(resolved.items()) if not k.startswith("out")}
    payload = {
        "command": command,
        "model": model_tag,
        "seed": seed,
        "config": semantic,
        "config_hash": hashlib.sha256(
            json.dumps(semantic, sort_keys=True).encode()
        ).hexdigest(),
        "version": __version__,
        "outputs": [str(p) for p in outputs],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _add_options(parser, spec):
    for name, typ, default, help_text in spec:
        parser.add_argument(
            "--" + name.replace("_", "-"),
            dest=name,
            type=typ,
            default=None,
            help=f"{help_text} (default: {default})",
        )


def _load_returns(path, train_len, allow_full_train=False):
    try:
        y = read_series(path)
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    if train_len is not None:
        upper = y.size if allow_full_train else y.size - 1
        if not 1 <= train_len <= upper:
            raise UsageError(
                f"--train-len must lie in [1, {upper}] for this series, got {train_len}"
            )
    return y


# ---------------------------------------------------------------------------
# subcommands

_SIM_SPEC = [
    ("T", int, 1000, "series length"),
    ("seed", int, 0, "root seed"),
    ("z0", float, 0.0, "initial log-variance for the lstmsv simulator"),
]


def cmd_simulate(args):
    resolved = _resolve(args, _SIM_SPEC)
    T, seed = resolved["T"], resolved["seed"]
    if T < 1:
        raise UsageError("--T must be at least 1")
    rng = substream(seed, "simulate")
    if args.model == "dgp":
        if args.params:
            raise UsageError("the dgp generator takes no parameter file")
        y, z = simulate_dgp(T, rng)
        tag = "dgp"
    else:
        model = get_model(args.model)
        if args.params:
            params = _read_params_csv(args.params, model)
        else:
            params = model.params_from_mapping(DEFAULT_SIM_PARAMS[args.model])
        y, z = simulate(params, T, rng, z0=resolved["z0"] if args.model == "lstmsv" else None)
        tag = args.model
    outputs = [args.out]
    _write_csv(args.out, ("y",), [(v,) for v in y])
    if args.latent:
        _write_csv(args.latent, ("z",), [(v,) for v in z])
        outputs.append(args.latent)
    _sidecar(args.out + ".meta.json", "simulate", tag, seed, resolved, outputs)
    return 0


_FIT_SPEC = [
    ("iters", int, 100_000, "MCMC iterations"),
    ("burnin", int, 10_000, "iterations discarded as burn-in"),
    ("thin", int, 5, "keep every thin-th retained iteration"),
    ("particles", int, 200, "particles in the likelihood estimator"),
    ("blocks", int, 200, "random-number blocks (1 = unblocked pseudo-marginal)"),
    ("target_accept", float, 0.25, "target acceptance rate of the adaptive proposal"),
    ("train_len", int, None, "fit only the first train_len observations"),
    ("seed", int, 0, "root seed"),
]


def cmd_fit(args):
    resolved = _resolve(args, _FIT_SPEC)
    model = get_model(args.model)
    y = _load_returns(args.data, resolved["train_len"], allow_full_train=True)
    if resolved["train_len"] is not None:
        y = y[: resolved["train_len"]]
    try:
        cfg = SamplerConfig(
            iters=resolved["iters"],
            burnin=resolved["burnin"],
            thin=resolved["thin"],
            n_particles=resolved["particles"],
            n_blocks=resolved["blocks"],
            target_accept=resolved["target_accept"],
            seed=resolved["seed"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None

    chain_path = args.out_prefix + "_chain.csv"
    summary_path = args.out_prefix + "_summary.csv"
    postmean_path = args.out_prefix + "_postmean.csv"
    outputs = [chain_path, summary_path, postmean_path]

    def _flush(chain, code):
        retained = chain.model.constrain_array(chain.draws_u[cfg.burnin :: cfg.thin])
        lls = chain.logliks[cfg.burnin :: cfg.thin]
        acc = chain.accepted[cfg.burnin :: cfg.thin]
        header = tuple(model.param_names) + ("loglik", "accepted")
        rows = [tuple(row) + (ll, int(a)) for row, ll, a in zip(retained, lls, acc)]
        _write_csv(chain_path, header, rows)
        if retained.shape[0]:
            summary = summarize(chain, cfg)
            srows = [
                (name, mean, sd, ia)
                for name, mean, sd, ia in zip(
                    summary.names, summary.means, summary.sds, summary.iacts
                )
            ]
            _write_csv(summary_path, ("name", "mean", "sd", "iact"), srows)
            _write_csv(
                summary_path.replace("_summary.csv", "_run.csv"),
                ("name", "value"),
                [
                    ("acceptance_rate", summary.accept_rate),
                    ("n_retained", summary.n_retained),
                ],
            )
            _write_params_csv(postmean_path, model, summary.means)
        _sidecar(args.out_prefix + ".meta.json", "fit", args.model, cfg.seed, resolved, outputs)
        return code

    try:
        chain = run_bpm(model, y, cfg)
    except ChainNumericError as exc:
        if exc.partial is not None and len(exc.partial):
            print(f"lstmsv fit: {exc}; flushing partial chain", file=sys.stderr)
            return _flush(exc.partial, 1)
        print(f"lstmsv fit: {exc}", file=sys.stderr)
        return 1
    return _flush(chain, 0)


_MARGLIK_SPEC = [
    ("M", int, 5000, "importance samples per run"),
    ("particles", int, 2000, "particles per likelihood estimate"),
    ("runs", int, 10, "independent runs for the Monte Carlo standard error"),
    ("components", int, 2, "Gaussian mixture components in the proposal"),
    ("train_len", int, None, "use only the first train_len observations"),
    ("threads", int, 1, "worker threads for the importance evaluations"),
    ("seed", int, 0, "root seed"),
]


def cmd_marglik(args):
    resolved = _resolve(args, _MARGLIK_SPEC)
    seed = resolved["seed"]
    y = _load_returns(args.data, resolved["train_len"], allow_full_train=True)
    if resolved["train_len"] is not None:
        y = y[: resolved["train_len"]]

    if args.exact_toy:
        model = ConjugateNormalToy(y)
        if args.chain:
            draws_u = _read_chain_unconstrained(args.chain, model_names=("theta",), model=None)
        else:
            draws_u = model.sample_posterior(substream(seed, "toy-chain"), 2000)
        loglik_fn = model.loglik
        tag = "toy"
    else:
        if not args.chain:
            raise UsageError("--chain is required (posterior draws for the proposal fit)")
        model = get_model(args.model)
        draws_u = _read_chain_unconstrained(args.chain, model.param_names, model)
        loglik_fn = None
        tag = args.model

    try:
        proposal = fit_proposal(draws_u, n_components=resolved["components"], seed=seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None

    try:
        est = is2_marglik(
            model,
            y,
            proposal,
            M=resolved["M"],
            n_particles=resolved["particles"],
            runs=resolved["runs"],
            seed=seed,
            loglik_fn=loglik_fn,
            n_threads=resolved["threads"],
        )
    except RuntimeError as exc:
        print(f"lstmsv marglik: {exc}", file=sys.stderr)
        return 1

    rows = [(r, lg) for r, lg in enumerate(est.run_logs)]
    rows.append(("mean", est.log_marglik))
    rows.append(("mc_se", est.mc_se if est.runs > 1 else "NA"))
    _write_csv(args.out, ("run", "log_marglik"), rows)
    _sidecar(args.out + ".meta.json", "marglik", tag, seed, resolved, [args.out])
    return 0


def _read_chain_unconstrained(path, model_names, model):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
            rows = []
            for lineno, raw in enumerate(fh, start=2):
                line = raw.strip()
                if not line:
                    continue
                fields = line.split(",")
                if len(fields) != len(header):
                    raise UsageError(f"{path}: line {lineno}: ragged row")
                rows.append([float(v) for v in fields])
    except OSError as exc:
        raise UsageError(f"cannot read chain file {path}: {exc}") from None
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None
    missing = [n for n in model_names if n not in header]
    if missing:
        raise UsageError(f"{path}: chain file lacks columns: {', '.join(missing)}")
    data = np.array(rows, dtype=float)
    cols = [header.index(n) for n in model_names]
    constrained = data[:, cols]
    if model is None:
        return constrained
    return model.unconstrain_array(constrained)


_FORECAST_SPEC = [
    ("alpha", float, 0.01, "VaR quantile level"),
    ("particles", int, 200, "particles in the forecasting filter"),
    ("propagate", int, 10, "one-step propagation draws per particle"),
    ("coverage", float, 0.99, "central forecast-interval coverage"),
    ("seed", int, 0, "root seed"),
]


def cmd_forecast(args):
    resolved = _resolve(args, _FORECAST_SPEC)
    model = get_model(args.model)
    params = _read_params_csv(args.params, model)
    y = _load_returns(args.data, None)
    if not 1 <= args.train_len < y.size:
        raise UsageError(
            f"--train-len must leave a nonempty test segment (series length {y.size})"
        )
    try:
        report = predictive_scores(
            params,
            y,
            train_len=args.train_len,
            alpha=resolved["alpha"],
            n_particles=resolved["particles"],
            n_propagate=resolved["propagate"],
            seed=resolved["seed"],
            coverage=resolved["coverage"],
        )
    except RuntimeError as exc:
        print(f"lstmsv forecast: {exc}", file=sys.stderr)
        return 1
    summary_path = args.out_prefix + "_scores.csv"
    interval_path = args.out_prefix + "_intervals.csv"
    _write_csv(
        summary_path,
        ("name", "value"),
        [
            ("pps", report.pps),
            ("violations", report.violations),
            ("qs", report.qs),
            ("hit_pct", report.hit_pct),
            ("alpha", report.alpha),
        ],
    )
    test = y[args.train_len :]
    rows = [
        (args.train_len + 1 + j, test[j], report.intervals[j, 0], report.intervals[j, 1], report.var_forecasts[j])
        for j in range(test.size)
    ]
    _write_csv(interval_path, ("t", "y", "lower", "upper", "var_forecast"), rows)
    _sidecar(
        args.out_prefix + ".meta.json",
        "forecast",
        args.model,
        resolved["seed"],
        {**resolved, "train_len": args.train_len},
        [summary_path, interval_path],
    )
    return 0


_DIAGNOSE_SPEC = [
    ("lb_lags", int, 10, "Ljung-Box lags"),
    ("particles", int, 200, "particles in the filtering pass"),
    ("train_len", int, None, "diagnose only the first train_len observations"),
    ("seed", int, 0, "root seed"),
]


def cmd_diagnose(args):
    resolved = _resolve(args, _DIAGNOSE_SPEC)
    model = get_model(args.model)
    params = _read_params_csv(args.params, model)
    y = _load_returns(args.data, resolved["train_len"], allow_full_train=True)
    if resolved["train_len"] is not None:
        y = y[: resolved["train_len"]]
    try:
        diag = residual_diagnostics(
            params,
            y,
            n_particles=resolved["particles"],
            seed=resolved["seed"],
            lags=resolved["lb_lags"],
        )
    except (RuntimeError, ValueError) as exc:
        print(f"lstmsv diagnose: {exc}", file=sys.stderr)
        return 1
    diag_path = args.out_prefix + "_diagnostics.csv"
    qq_path = args.out_prefix + "_qq.csv"
    _write_csv(
        diag_path,
        ("name", "value"),
        [
            ("skew", diag.skew),
            ("kurtosis", diag.kurtosis),
            ("lb_stat", diag.lb_stat),
            ("lb_pvalue", diag.lb_pvalue),
            ("lb_lags", diag.lb_lags),
        ],
    )
    theo, samp = qq_points(diag.residuals)
    _write_csv(qq_path, ("theoretical", "sample"), list(zip(theo, samp)))
    _sidecar(
        args.out_prefix + ".meta.json",
        "diagnose",
        args.model,
        resolved["seed"],
        resolved,
        [diag_path, qq_path],
    )
    return 0


_STATS_SPEC = [
    ("train_len", int, None, "train length (for --lo-slice train)"),
    ("seed", int, 0, "root seed (recorded; stats are deterministic)"),
]


def cmd_stats(args):
    resolved = _resolve(args, _STATS_SPEC)
    if bool(args.prices) == bool(args.returns):
        raise UsageError("give exactly one of --prices or --returns")
    try:
        if args.prices:
            series = read_series(args.prices)
            rs = demeaned_returns(series, train_len=resolved["train_len"])
            y = rs.values
        else:
            y = read_series(args.returns)
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from None

    try:
        lags = [int(tok) for tok in args.lags.split(",") if tok.strip() != ""]
    except ValueError:
        raise UsageError(f"--lags must be a comma-separated list of integers, got {args.lags!r}") from None
    if not lags:
        raise UsageError("--lags must name at least one lag")

    lo_input = y
    if args.lo_slice == "train":
        if resolved["train_len"] is None:
            raise UsageError("--lo-slice train requires --train-len")
        lo_input = y[: resolved["train_len"]]
    try:
        stats = descriptive_stats(y)
        x = log_squared(lo_input)
        lo_rows = []
        for q in lags:
            result = lo_modified_rs(x, q)
            lo_rows.append((f"lo_vn_q{q}", result.statistic))
            lo_rows.append((f"lo_reject_q{q}", int(result.reject_5pct)))
    except ValueError as exc:
        raise UsageError(str(exc)) from None

    rows = [
        ("n", y.size),
        ("min", stats.min),
        ("max", stats.max),
        ("std", stats.std),
        ("skewness", stats.skewness),
        ("kurtosis", stats.kurtosis),
    ] + lo_rows
    _write_csv(args.out, ("name", "value"), rows)
    _sidecar(
        args.out + ".meta.json",
        "stats",
        "data",
        resolved["seed"],
        {**resolved, "lags": args.lags, "lo_slice": args.lo_slice},
        [args.out],
    )
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser():
    parser = argparse.ArgumentParser(
        prog="lstmsv",
        description=(
            "Stochastic volatility toolbox: simulate SV / N-SV / LSTM-SV series, "
            "fit them by block pseudo-marginal MCMC, estimate marginal likelihoods "
            "by IS^2, and score out-of-sample volatility forecasts."
        ),
    )
    parser.add_argument("--version", action="version", version=f"lstmsv {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a return series")
    p.add_argument("--model", required=True, choices=MODEL_TAGS + ("dgp",))
    p.add_argument("--params", help="parameter CSV (name,value rows)")
    p.add_argument("--out", required=True, help="output returns CSV")
    p.add_argument("--latent", help="also write the latent log-variance path")
    p.add_argument("--config", help="key = value config file")
    _add_options(p, _SIM_SPEC)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit a model by block pseudo-marginal MCMC")
    p.add_argument("--model", required=True, choices=MODEL_TAGS)
    p.add_argument("--data", required=True, help="returns CSV")
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--config", help="key = value config file")
    _add_options(p, _FIT_SPEC)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("marglik", help="estimate the log marginal likelihood by IS^2")
    p.add_argument("--model", choices=MODEL_TAGS)
    p.add_argument("--data", required=True, help="returns CSV")
    p.add_argument("--chain", help="chain CSV from fit (proposal source)")
    p.add_argument("--exact-toy", action="store_true", help="conjugate normal toy with the exact likelihood")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="key = value config file")
    _add_options(p, _MARGLIK_SPEC)
    p.set_defaults(func=cmd_marglik)

    p = sub.add_parser("forecast", help="score one-step-ahead forecasts on a test split")
    p.add_argument("--model", required=True, choices=MODEL_TAGS)
    p.add_argument("--data", required=True)
    p.add_argument("--params", required=True, help="parameter CSV (e.g. fit postmean output)")
    p.add_argument("--train-len", required=True, type=int)
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--config", help="key = value config file")
    _add_options(p, _FORECAST_SPEC)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("diagnose", help="in-sample residual diagnostics")
    p.add_argument("--model", required=True, choices=MODEL_TAGS)
    p.add_argument("--data", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--config", help="key = value config file")
    _add_options(p, _DIAGNOSE_SPEC)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("stats", help="descriptive statistics and Lo's long-memory test")
    p.add_argument("--prices", help="price CSV (converted to demeaned returns)")
    p.add_argument("--returns", help="returns CSV (used as-is)")
    p.add_argument("--lags", default="5,20,35", help="comma-separated Lo test lags")
    p.add_argument("--lo-slice", choices=("full", "train"), default="full",
                   help="apply the long-memory test to the full series or the train slice")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="key = value config file")
    _add_options(p, _STATS_SPEC)
    p.set_defaults(func=cmd_stats)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"lstmsv {args.command}: {exc}", file=sys.stderr)
        return 2
    except ChainNumericError as exc:
        print(f"lstmsv {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
