"""Command line front end.

Subcommands cover the full workflow on event CSVs: ``fit`` trains the
duration-dependent model, ``evaluate`` scores a fitted model (and
optionally the reference baselines) on a chronological train/test split,
``simulate`` writes a synthetic corpus, ``recover`` runs the
sample-and-refit study, ``case-study`` runs the coupled intervention
simulation, and ``curves`` exports per-state sojourn hazard and
transition curves for plotting.

Exit codes: 0 success, 1 usage or configuration problems, 2 malformed
data files, 3 numerical failure during fitting or scoring.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import __version__
from .baselines import (
    HmmFitConfig,
    hmm_exit_scorer,
    hmm_fit,
    logreg_exit_scorer,
    logreg_fit,
    markov_exit_scorer,
    markov_fit,
    static_hmm_fit,
)
from .data_io import (
    load_sessions,
    read_params,
    write_params,
    write_rows,
    write_sessions,
    write_traces,
)
from .errors import (
    ConfigError,
    DataError,
    DdhmmError,
    EstimationError,
    NumericalError,
)
from .estimation import FitConfig, fit_map, format_diagnostics
from .inference import exit_scorer, trace_session
from .metrics import evaluate_exit_prediction, split_sessions
from .model import ModelParams, renewal_prob, renewal_prob_shifted, transition_probs
from .simulate import (
    GeneratorConfig,
    demo_params,
    recovery_experiment,
    run_case_study,
    sample_sessions,
)

__all__ = ["main"]


class _Parser(argparse.ArgumentParser):
    """argparse exits with code 2 on usage errors; we reserve 2 for data."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="ddhmm", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", parents=[], help="fit the model to an event CSV")
    p.add_argument("--data", required=True, help="event CSV path")
    p.add_argument("--states", type=int, required=True, help="number of latent states")
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--max-iterations", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="where to write fitted params JSON")
    p.add_argument("--diagnostics", help="optional restart table output path")

    p = sub.add_parser("evaluate", help="train/test evaluation of exit prediction")
    p.add_argument("--data", required=True)
    p.add_argument("--params", required=True, help="fitted model JSON")
    p.add_argument("--baselines", action="store_true", help="also fit and score baselines")
    p.add_argument("--fpr", type=float, default=0.30, help="false positive budget")
    p.add_argument("--train-fraction", type=float, default=0.75)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pooling", choices=["step", "session"], default="step")
    p.add_argument("--out", help="optional CSV output path")
    p.add_argument("--traces", help="optional per-step trace CSV path")

    p = sub.add_parser("simulate", help="write a synthetic event corpus")
    p.add_argument("--n", type=int, required=True, help="number of sessions")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--params", help="model JSON (default: built-in demo model)")
    p.add_argument("--max-length", type=int, default=50)
    p.add_argument("--out", required=True)

    p = sub.add_parser("recover", help="sample-and-refit recovery study")
    p.add_argument("--grid", default="50,500", help="comma list of corpus sizes")
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--states", type=int, default=3)
    p.add_argument("--restarts", type=int, default=4)
    p.add_argument("--max-iterations", type=int, default=500)
    p.add_argument("--out", help="optional CSV output path")

    p = sub.add_parser("case-study", help="coupled intervention simulation")
    p.add_argument("--n", type=int, default=2000, help="sessions per arm")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--params", help="model JSON (default: built-in demo model)")
    p.add_argument("--effectiveness", default="0.1,0.5,1.0", help="comma list")
    p.add_argument("--threshold", type=float, help="trigger cutoff (default: calibrate)")
    p.add_argument("--goal-state", type=int)
    p.add_argument("--untailored", action="store_true",
                   help="marketing page is not matched to the inferred state")
    p.add_argument("--keep-clock", action="store_true",
                   help="forced state inherits the sojourn age instead of resetting")
    p.add_argument("--out", help="optional CSV output path")

    p = sub.add_parser("curves", help="export sojourn hazard and transition curves")
    p.add_argument("--params", required=True)
    p.add_argument("--max-d", type=int, default=20)
    p.add_argument("--out", required=True)

    return parser


def _print_table(columns, rows) -> None:
    def fmt(v):
        if isinstance(v, float):
            return f"{v:.4f}"
        return str(v)

    table = [[fmt(v) for v in row] for row in rows]
    widths = [
        max(len(col), *(len(r[i]) for r in table)) if table else len(col)
        for i, col in enumerate(columns)
    ]
    print("  ".join(c.ljust(w) for c, w in zip(columns, widths)))
    for r in table:
        print("  ".join(v.ljust(w) for v, w in zip(r, widths)))


def _cmd_fit(args) -> int:
    sessions = load_sessions(args.data)
    if not sessions:
        raise DataError(f"{args.data}: no usable sessions after filtering")
    config = FitConfig(
        n_states=args.states,
        restarts=args.restarts,
        max_iterations=args.max_iterations,
        seed=args.seed,
    )
    result = fit_map(sessions, config)
    write_params(result.params, args.out)
    diagnostics = format_diagnostics(result)
    if args.diagnostics:
        with open(args.diagnostics, "w") as fh:
            fh.write(diagnostics + "\n")
    else:
        print(diagnostics)
    print(
        f"fit {args.states} states on {len(sessions)} sessions; "
        f"objective {result.objective:.4f}; wrote {args.out}"
    )
    return 0


class _Row(dict):
    def __getattr__(self, name):
        return self[name]


def _eval_rows(name, n_states, scorer, train, test, fpr, pooling):
    rows = []
    for split_name, split in (("train", train), ("test", test)):
        rep = evaluate_exit_prediction(scorer, split, fpr=fpr, pooling=pooling)
        rows.append(
            _Row(
                model=name,
                states=n_states,
                split=split_name,
                auroc=rep.auroc,
                auprc=rep.auprc,
                hit_rate=rep.hit_rate,
                n_steps=rep.n_steps,
                n_positives=rep.n_positives,
            )
        )
    return rows


def _cmd_evaluate(args) -> int:
    sessions = load_sessions(args.data)
    params = read_params(args.params)
    if not isinstance(params, ModelParams):
        raise ConfigError("evaluate expects a fitted main-model parameter file")
    train, test = split_sessions(sessions, args.train_fraction)
    rows = _eval_rows(
        "ddhmm", params.n_states, exit_scorer(params), train, test,
        args.fpr, args.pooling,
    )
    if args.baselines:
        k = params.n_states
        mlsl = hmm_fit(train, HmmFitConfig(n_states=k, seed=args.seed))
        rows += _eval_rows(
            "hmm", k, hmm_exit_scorer(mlsl), train, test, args.fpr, args.pooling
        )
        static = static_hmm_fit(train, HmmFitConfig(n_states=k, seed=args.seed))
        rows += _eval_rows(
            "static_hmm", k, hmm_exit_scorer(static), train, test,
            args.fpr, args.pooling,
        )
        markov = markov_fit(train)
        rows += _eval_rows(
            "markov", 0, markov_exit_scorer(markov), train, test,
            args.fpr, args.pooling,
        )
        logreg = logreg_fit(train)
        rows += _eval_rows(
            "logreg", 0, logreg_exit_scorer(logreg), train, test,
            args.fpr, args.pooling,
        )
    columns = [
        "model", "states", "split", "auroc", "auprc", "hit_rate",
        "n_steps", "n_positives",
    ]
    _print_table(columns, [[r[c] for c in columns] for r in rows])
    if args.out:
        write_rows(rows, columns, args.out)
    if args.traces:
        write_traces([trace_session(params, s) for s in test], args.traces)
    return 0


def _cmd_simulate(args) -> int:
    params = demo_params() if args.params is None else read_params(args.params)
    if not isinstance(params, ModelParams):
        raise ConfigError("simulate expects a main-model parameter file")
    config = GeneratorConfig(seed=args.seed, max_session_length=args.max_length)
    sampled = sample_sessions(params, config, args.n)
    write_sessions([s.session for s in sampled], args.out)
    lengths = [len(s.session) for s in sampled]
    print(
        f"wrote {args.n} sessions to {args.out} "
        f"(median length {int(np.median(lengths))}, max {max(lengths)})"
    )
    return 0


def _parse_float_list(raw: str, flag: str) -> list[float]:
    try:
        values = [float(part) for part in raw.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"{flag} expects a comma-separated list of numbers")
    if not values:
        raise ConfigError(f"{flag} is empty")
    return values


def _cmd_recover(args) -> int:
    grid = [int(v) for v in _parse_float_list(args.grid, "--grid")]
    report = recovery_experiment(
        n_sessions_grid=tuple(grid),
        n_runs=args.runs,
        seed=args.seed,
        n_states=args.states,
        fit_restarts=args.restarts,
        fit_max_iterations=args.max_iterations,
    )
    blocks = ["theta", "c", "pi", "mu", "delta",
              "emission_intercepts", "emission_coefficients"]
    columns = ["n_sessions"] + [f"{b}_mae" for b in blocks]
    rows = []
    for n in grid:
        rows.append(
            _Row(
                n_sessions=n,
                **{f"{b}_mae": report.mean_error(n, b) for b in blocks},
            )
        )
    _print_table(columns, [[r[c] for c in columns] for r in rows])
    if args.out:
        detail_cols = ["run", "n_sessions"] + [f"{b}_mae" for b in blocks]
        detail = [
            _Row(
                run=r.run,
                n_sessions=r.n_sessions,
                **{f"{b}_mae": r.errors[b] for b in blocks},
            )
            for r in report.rows
        ]
        write_rows(detail, detail_cols, args.out)
    return 0


def _cmd_case_study(args) -> int:
    params = demo_params() if args.params is None else read_params(args.params)
    if not isinstance(params, ModelParams):
        raise ConfigError("case-study expects a main-model parameter file")
    grid = _parse_float_list(args.effectiveness, "--effectiveness")
    report = run_case_study(
        params,
        n_sessions=args.n,
        seed=args.seed,
        trigger_threshold=args.threshold,
        effectiveness_grid=tuple(grid),
        goal_state=args.goal_state,
        tailored=not args.untailored,
        reset_duration=not args.keep_clock,
    )
    columns = [
        "scenario", "effectiveness", "arm", "n_sessions", "conversions",
        "conversion_rate", "uplift", "ci_half_width",
    ]
    print(f"trigger threshold: {report.trigger_threshold:.6f}")
    _print_table(
        columns, [[getattr(r, c) for c in columns] for r in report.rows]
    )
    if args.out:
        write_rows(report.rows, columns, args.out)
    return 0


def _cmd_curves(args) -> int:
    params = read_params(args.params)
    if not isinstance(params, ModelParams):
        raise ConfigError("curves expects a main-model parameter file")
    if args.max_d < 1:
        raise ConfigError("--max-d must be >= 1")
    rows = []
    for s in range(params.n_states):
        for d in range(1, args.max_d + 1):
            q = transition_probs(params, s, d)
            rows.append(
                _Row(
                    state=s + 1,
                    d=d,
                    theta=float(params.theta[s]),
                    c=float(params.c[s]),
                    renewal=renewal_prob(params.theta[s], params.c[s], d),
                    renewal_shifted=renewal_prob_shifted(
                        params.theta[s], params.c[s], d
                    ),
                    **{f"to_{j + 1}": float(q[j]) for j in range(params.n_states)},
                )
            )
    columns = ["state", "d", "theta", "c", "renewal", "renewal_shifted"] + [
        f"to_{j + 1}" for j in range(params.n_states)
    ]
    write_rows(rows, columns, args.out)
    print(f"wrote {len(rows)} curve rows to {args.out}")
    return 0


_COMMANDS = {
    "fit": _cmd_fit,
    "evaluate": _cmd_evaluate,
    "simulate": _cmd_simulate,
    "recover": _cmd_recover,
    "case-study": _cmd_case_study,
    "curves": _cmd_curves,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, EstimationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except DdhmmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
