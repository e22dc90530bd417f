"""Reading and writing sessions, fitted parameters, and prediction traces.

The session format is a flat CSV of page view events::

    session_id,step,timestamp_iso8601,page,customer_type

Covariates are never serialized; they are deterministic functions of the
event stream and are recomputed on load with the same lookahead-free
rules the sampler uses, so a write/load round trip reproduces them
bit for bit. Sessions that end without a purchase or an explicit Exit
get a terminal Exit appended (the visitor silently left), then sessions
shorter than 3 or longer than 50 steps are dropped.

Parameters are stored as versioned JSON, one file per fitted model, and
every model family shares the same envelope so the CLI can dispatch on
the ``kind`` field.
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
from pathlib import Path

import numpy as np

from .baselines import HmmParams, LogRegParams, MarkovChainParams
from .errors import DataError, DomainError
from .model import (
    COVARIATE_NAMES,
    PAGE_ORDER,
    CovariateVector,
    ModelParams,
    PageCategory,
    Session,
    page_from_name,
)

__all__ = [
    "SESSION_COLUMNS",
    "MIN_SESSION_LENGTH",
    "MAX_SESSION_LENGTH",
    "compute_covariates",
    "load_sessions",
    "write_sessions",
    "write_params",
    "read_params",
    "write_traces",
    "write_rows",
]

SESSION_COLUMNS = ("session_id", "step", "timestamp_iso8601", "page", "customer_type")
MIN_SESSION_LENGTH = 3
MAX_SESSION_LENGTH = 50

_FORMAT = "clickstream-model-params"
_VERSION = 1


def compute_covariates(
    pages, timestamps, customer_type: int
) -> tuple[CovariateVector, ...]:
    """Derive the step covariates from raw events, without lookahead.

    For step t the same-page counter counts how often the category seen
    at step t-1 had appeared up to and including step t-1, so every
    covariate is a function of strictly earlier pages plus the current
    timestamp. The weekend flag comes from the first event's weekday.
    """
    pages = list(pages)
    timestamps = list(timestamps)
    if len(pages) != len(timestamps):
        raise DomainError("pages and timestamps must align")
    if not pages:
        raise DomainError("need at least one event")
    weekend = 1 if timestamps[0].weekday() >= 5 else 0
    out = []
    seen: dict[PageCategory, int] = {}
    for t, (page, ts) in enumerate(zip(pages, timestamps), start=1):
        if t == 1:
            span = 0.0
            cum = 0
        else:
            span = (ts - timestamps[t - 2]).total_seconds()
            cum = seen[pages[t - 2]]
        out.append(
            CovariateVector(
                visit_depth=t,
                time_span=span,
                cum_same_page=cum,
                weekend=weekend,
                customer_type=customer_type,
            )
        )
        seen[page] = seen.get(page, 0) + 1
    return tuple(out)


def _parse_timestamp(raw: str, line: int) -> _dt.datetime:
    try:
        return _dt.datetime.fromisoformat(raw)
    except ValueError as exc:
        raise DataError(f"bad timestamp {raw!r}: {exc}", line=line) from None


def load_sessions(path) -> list[Session]:
    """Parse the event CSV into labeled, filtered sessions.

    Raises :class:`DataError` (with the offending line number) for
    malformed rows, out-of-order steps, unknown pages, a mid-session
    Exit, inconsistent customer type, or time running backwards.
    """
    path = Path(path)
    rows_by_session: dict[str, list] = {}
    order: list[str] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("empty file") from None
        if tuple(h.strip() for h in header) != SESSION_COLUMNS:
            raise DataError(
                f"expected header {','.join(SESSION_COLUMNS)}, got {','.join(header)}",
                line=1,
            )
        for line, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(SESSION_COLUMNS):
                raise DataError(
                    f"expected {len(SESSION_COLUMNS)} fields, got {len(row)}",
                    line=line,
                )
            sid, step_raw, ts_raw, page_raw, ctype_raw = (c.strip() for c in row)
            if not sid:
                raise DataError("empty session_id", line=line)
            try:
                step = int(step_raw)
            except ValueError:
                raise DataError(f"bad step {step_raw!r}", line=line) from None
            ts = _parse_timestamp(ts_raw, line)
            try:
                page = page_from_name(page_raw)
            except Exception:
                raise DataError(f"unknown page {page_raw!r}", line=line) from None
            if ctype_raw not in ("0", "1"):
                raise DataError(
                    f"customer_type must be 0 or 1, got {ctype_raw!r}", line=line
                )
            if sid not in rows_by_session:
                rows_by_session[sid] = []
                order.append(sid)
            rows_by_session[sid].append((step, ts, page, int(ctype_raw), line))

    sessions = []
    for sid in order:
        rows = rows_by_session[sid]
        for (s1, *_), (s2, _, _, _, line) in zip(rows, rows[1:]):
            if s2 <= s1:
                raise DataError(
                    f"session {sid}: step {s2} not after {s1}", line=line
                )
        steps, timestamps, pages, ctypes, lines = zip(*rows)
        if len(set(ctypes)) != 1:
            raise DataError(
                f"session {sid}: customer_type changes mid-session",
                line=lines[-1],
            )
        for a, b, line in zip(timestamps, timestamps[1:], lines[1:]):
            if b < a:
                raise DataError(
                    f"session {sid}: time runs backwards", line=line
                )
        for page, line in zip(pages[:-1], lines[:-1]):
            if page.is_terminal:
                raise DataError(
                    f"session {sid}: Exit before the last event", line=line
                )

        pages = list(pages)
        timestamps = list(timestamps)
        purchased = any(
            p in (PageCategory.CHECKOUT, PageCategory.ORDER) for p in pages
        )
        if not pages[-1].is_terminal and not purchased:
            pages.append(PageCategory.EXIT)
            timestamps.append(timestamps[-1])
        if not MIN_SESSION_LENGTH <= len(pages) <= MAX_SESSION_LENGTH:
            continue
        covs = compute_covariates(pages, timestamps, ctypes[0])
        sessions.append(
            Session(
                session_id=sid,
                pages=tuple(pages),
                covariates=covs,
                start_time=timestamps[0],
            )
        )
    return sessions


def _session_timestamps(session: Session) -> list[_dt.datetime]:
    ts = [session.start_time]
    for cov in session.covariates[1:]:
        ts.append(ts[-1] + _dt.timedelta(seconds=cov.time_span))
    return ts


def write_sessions(sessions, path) -> None:
    """Write sessions back to the event CSV format.

    Timestamps are rebuilt from the start time plus the cumulative time
    spans; because spans are microsecond-quantized this is exact.
    """
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SESSION_COLUMNS)
        for session in sessions:
            ctype = int(session.covariates[0].customer_type)
            for step, (page, ts) in enumerate(
                zip(session.pages, _session_timestamps(session)), start=1
            ):
                writer.writerow(
                    [session.session_id, step, ts.isoformat(), page.value, ctype]
                )


# ---------------------------------------------------------------------------
# Parameter files
# ---------------------------------------------------------------------------

def _check_envelope(doc: dict, path: Path) -> str:
    if doc.get("format") != _FORMAT:
        raise DataError(f"{path}: not a parameter file (format field)")
    if doc.get("version") != _VERSION:
        raise DataError(
            f"{path}: unsupported version {doc.get('version')!r}"
        )
    kind = doc.get("kind")
    if kind not in ("ddhmm", "hmm", "static_hmm", "markov", "logreg"):
        raise DataError(f"{path}: unknown kind {kind!r}")
    return kind


def _check_names(doc: dict, path: Path, pages: bool = True) -> None:
    if pages and tuple(doc.get("page_order", ())) != PAGE_ORDER:
        raise DataError(f"{path}: page_order does not match this package")
    if "covariate_names" in doc and tuple(doc["covariate_names"]) != COVARIATE_NAMES:
        raise DataError(f"{path}: covariate_names do not match this package")


def write_params(params, path) -> None:
    """Serialize any fitted model to versioned JSON."""
    path = Path(path)
    doc: dict = {"format": _FORMAT, "version": _VERSION}
    if isinstance(params, ModelParams):
        doc.update(
            kind="ddhmm",
            K=params.n_states,
            page_order=list(PAGE_ORDER),
            covariate_names=list(params.covariate_names),
            pi=params.pi.tolist(),
            theta=params.theta.tolist(),
            c=params.c.tolist(),
            mu=params.mu.tolist(),
            delta=params.delta.tolist(),
            emission_intercepts=params.emission_intercepts.tolist(),
            emission_coefficients=params.emission_coefficients.tolist(),
        )
    elif isinstance(params, HmmParams):
        doc.update(
            kind="static_hmm" if params.static else "hmm",
            K=params.n_states,
            page_order=list(PAGE_ORDER),
            covariate_names=list(params.covariate_names),
            pi=params.pi.tolist(),
            transition=params.transition.tolist(),
            emission_intercepts=params.emission_intercepts.tolist(),
            emission_coefficients=params.emission_coefficients.tolist(),
        )
    elif isinstance(params, MarkovChainParams):
        doc.update(
            kind="markov",
            page_order=list(PAGE_ORDER),
            initial=params.initial.tolist(),
            transition=params.transition.tolist(),
        )
    elif isinstance(params, LogRegParams):
        doc.update(
            kind="logreg",
            page_order=list(PAGE_ORDER),
            covariate_names=list(COVARIATE_NAMES),
            weights=params.weights.tolist(),
            intercept=params.intercept,
            feature_means=params.feature_means.tolist(),
            feature_scales=params.feature_scales.tolist(),
        )
    else:
        raise DomainError(f"cannot serialize {type(params).__name__}")
    with path.open("w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def read_params(path):
    """Load a parameter file, dispatching on its ``kind`` field."""
    path = Path(path)
    try:
        with path.open() as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise DataError(f"{path}: expected a JSON object")
    kind = _check_envelope(doc, path)
    _check_names(doc, path)
    try:
        if kind == "ddhmm":
            return ModelParams(
                n_states=int(doc["K"]),
                pi=np.asarray(doc["pi"], dtype=float),
                theta=np.asarray(doc["theta"], dtype=float),
                c=np.asarray(doc["c"], dtype=float),
                mu=np.asarray(doc["mu"], dtype=float),
                delta=np.asarray(doc["delta"], dtype=float),
                emission_intercepts=np.asarray(
                    doc["emission_intercepts"], dtype=float
                ),
                emission_coefficients=np.asarray(
                    doc["emission_coefficients"], dtype=float
                ),
            )
        if kind in ("hmm", "static_hmm"):
            return HmmParams(
                n_states=int(doc["K"]),
                pi=np.asarray(doc["pi"], dtype=float),
                transition=np.asarray(doc["transition"], dtype=float),
                emission_intercepts=np.asarray(
                    doc["emission_intercepts"], dtype=float
                ),
                emission_coefficients=np.asarray(
                    doc["emission_coefficients"], dtype=float
                ),
                static=kind == "static_hmm",
            )
        if kind == "markov":
            return MarkovChainParams(
                initial=np.asarray(doc["initial"], dtype=float),
                transition=np.asarray(doc["transition"], dtype=float),
            )
        return LogRegParams(
            weights=np.asarray(doc["weights"], dtype=float),
            intercept=float(doc["intercept"]),
            feature_means=np.asarray(doc["feature_means"], dtype=float),
            feature_scales=np.asarray(doc["feature_scales"], dtype=float),
        )
    except KeyError as exc:
        raise DataError(f"{path}: missing field {exc}") from None
    except (DomainError, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# Traces and tabular reports
# ---------------------------------------------------------------------------

def write_traces(traces, path) -> None:
    """Step-level prediction traces as CSV, one row per step."""
    path = Path(path)
    traces = list(traces)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        k = traces[0].state_posterior.shape[1] if traces else 0
        writer.writerow(
            ["session_id", "step", "exit_prob", "log_prefix_likelihood"]
            + [f"posterior_{s + 1}" for s in range(k)]
        )
        for trace in traces:
            for t in range(trace.exit_prob.shape[0]):
                writer.writerow(
                    [
                        trace.session_id,
                        t + 1,
                        repr(float(trace.exit_prob[t])),
                        repr(float(trace.log_prefix_likelihood[t])),
                    ]
                    + [repr(float(v)) for v in trace.state_posterior[t]]
                )


def write_rows(rows, columns, path) -> None:
    """Small helper for CSV reports: one dataclass-like row per line."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow(
                [getattr(row, col) if hasattr(row, col) else row[col] for col in columns]
            )
