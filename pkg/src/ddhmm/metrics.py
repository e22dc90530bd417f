"""Ranking metrics and evaluation harness for step-level exit prediction.

All metrics are computed from first principles on the raw score arrays.
AUROC uses the rank formulation (ties get averaged ranks, equivalent to
counting tied pairs as half), AUPRC sums precision over recall increments
while sweeping unique thresholds from high to low, and the hit rate picks
the best true positive rate among operating points whose false positive
rate stays within budget.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import DomainError
from .model import PageCategory, Session

__all__ = [
    "auroc",
    "auprc",
    "hit_rate_at_fpr",
    "threshold_at_fpr",
    "split_sessions",
    "EvalReport",
    "evaluate_exit_prediction",
    "step_labels",
    "SelectionRow",
    "select_k",
]


def _check_scores_labels(scores, labels):
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.ndim != 1 or labels.ndim != 1 or scores.shape != labels.shape:
        raise DomainError("scores and labels must be equal-length 1-d arrays")
    if scores.size == 0:
        raise DomainError("scores must be nonempty")
    if not np.all(np.isfinite(scores)):
        raise DomainError("scores must be finite")
    uniq = np.unique(labels)
    if not np.all(np.isin(uniq, [0, 1])):
        raise DomainError("labels must be 0 or 1")
    labels = labels.astype(int)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    return scores, labels, n_pos, n_neg


def auroc(scores, labels) -> float:
    """Probability a random positive outranks a random negative.

    Computed from average ranks, which handles ties exactly (a tied pair
    counts one half). Raises if either class is empty.
    """
    scores, labels, n_pos, n_neg = _check_scores_labels(scores, labels)
    if n_pos == 0 or n_neg == 0:
        raise DomainError("auroc needs both classes present")
    ranks = rankdata(scores)
    pos_rank_sum = float(ranks[labels == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def _pr_points(scores, labels, n_pos):
    """Precision and recall at each unique threshold, descending."""
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    tp = np.cumsum(y)
    fp = np.cumsum(1 - y)
    # last index of each tied block = metrics after taking the whole block
    last = np.nonzero(np.diff(s, append=-np.inf))[0]
    tp = tp[last]
    fp = fp[last]
    precision = tp / (tp + fp)
    recall = tp / n_pos
    return precision, recall


def auprc(scores, labels) -> float:
    """Area under precision-recall, step interpolation.

    Sweeps unique score thresholds from high to low and accumulates
    precision times the recall gained at each step, the same convention
    as average precision.
    """
    scores, labels, n_pos, _ = _check_scores_labels(scores, labels)
    if n_pos == 0:
        raise DomainError("auprc needs at least one positive")
    precision, recall = _pr_points(scores, labels, n_pos)
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev) * precision))


def _roc_operating_points(scores, labels, n_pos, n_neg):
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    tp = np.cumsum(y)
    fp = np.cumsum(1 - y)
    last = np.nonzero(np.diff(s, append=-np.inf))[0]
    tpr = tp[last] / n_pos
    fpr = fp[last] / n_neg
    thresholds = s[last]
    # prepend the predict-nothing point (threshold above every score)
    tpr = np.concatenate([[0.0], tpr])
    fpr = np.concatenate([[0.0], fpr])
    thresholds = np.concatenate([[np.inf], thresholds])
    return tpr, fpr, thresholds


def hit_rate_at_fpr(scores, labels, fpr: float = 0.30) -> float:
    """Best true positive rate with false positive rate within budget.

    Operating points are thresholds of the form score > cutoff over the
    unique scores (plus the trivial reject-all point). If every point
    with admissible false positive rate catches nothing, the rate is 0.
    """
    scores, labels, n_pos, n_neg = _check_scores_labels(scores, labels)
    if n_pos == 0 or n_neg == 0:
        raise DomainError("hit rate needs both classes present")
    if not 0.0 <= fpr <= 1.0:
        raise DomainError("fpr budget must lie in [0, 1]")
    tpr, fprs, _ = _roc_operating_points(scores, labels, n_pos, n_neg)
    ok = fprs <= fpr + 1e-12
    return float(tpr[ok].max())


def threshold_at_fpr(scores, labels, fpr: float = 0.30) -> float:
    """Cutoff achieving the hit rate chosen by :func:`hit_rate_at_fpr`.

    Flagging means ``score >= threshold``. Among admissible operating
    points with maximal true positive rate the loosest cutoff is
    returned; infinity means nothing can be flagged within budget.
    """
    scores, labels, n_pos, n_neg = _check_scores_labels(scores, labels)
    if n_pos == 0 or n_neg == 0:
        raise DomainError("threshold needs both classes present")
    tpr, fprs, thresholds = _roc_operating_points(scores, labels, n_pos, n_neg)
    ok = fprs <= fpr + 1e-12
    best = tpr[ok].max()
    cand = thresholds[ok][tpr[ok] >= best - 1e-12]
    return float(cand.min())


def split_sessions(sessions, train_fraction: float = 0.75):
    """Chronological train/test split, earliest sessions first.

    Sessions are ordered by start time (session id breaks ties) and the
    first floor(fraction * n) go to training, clamped so both sides stay
    nonempty. Fewer than 4 sessions cannot be split meaningfully.
    """
    sessions = list(sessions)
    if len(sessions) < 4:
        raise DomainError("need at least 4 sessions to split")
    if not 0.0 < train_fraction < 1.0:
        raise DomainError("train_fraction must lie strictly between 0 and 1")
    ordered = sorted(sessions, key=lambda s: (s.start_time, s.session_id))
    n_train = int(len(ordered) * train_fraction)
    n_train = max(1, min(n_train, len(ordered) - 1))
    return ordered[:n_train], ordered[n_train:]


def step_labels(session: Session) -> np.ndarray:
    """Binary step labels: 1 where the page is the terminal Exit."""
    return np.array(
        [1 if p is PageCategory.EXIT else 0 for p in session.pages], dtype=int
    )


@dataclass(frozen=True)
class EvalReport:
    auroc: float
    auprc: float
    hit_rate: float
    fpr_budget: float
    n_steps: int
    n_positives: int
    pooling: str


def evaluate_exit_prediction(
    scorer, sessions, fpr: float = 0.30, pooling: str = "step"
) -> EvalReport:
    """Score sessions with ``scorer`` and compute the ranking metrics.

    ``scorer(session)`` must return one score per step, higher meaning
    exit is more imminent. ``pooling="step"`` ranks every step of every
    session together; ``pooling="session"`` reduces each session to its
    peak score with a session-level label (did it end in Exit).
    """
    if pooling not in ("step", "session"):
        raise DomainError(f"unknown pooling {pooling!r}")
    scores, labels = [], []
    for session in sessions:
        s = np.asarray(scorer(session), dtype=float)
        if s.shape != (len(session),):
            raise DomainError(
                f"scorer returned shape {s.shape} for a session of length "
                f"{len(session)}"
            )
        y = step_labels(session)
        if pooling == "step":
            scores.append(s)
            labels.append(y)
        else:
            scores.append(np.array([float(s.max())]))
            labels.append(np.array([int(y.any())]))
    scores = np.concatenate(scores)
    labels = np.concatenate(labels)
    return EvalReport(
        auroc=auroc(scores, labels),
        auprc=auprc(scores, labels),
        hit_rate=hit_rate_at_fpr(scores, labels, fpr),
        fpr_budget=fpr,
        n_steps=int(labels.size),
        n_positives=int(labels.sum()),
        pooling=pooling,
    )


@dataclass(frozen=True)
class SelectionRow:
    n_states: int
    auroc: float
    objective: float
    converged: bool


def select_k(sessions, k_grid=(2, 3, 4), fit_config=None):
    """Fit each state count and rank them by in-sample step AUROC.

    Returns the winning state count and the per-candidate table. The
    fitted objective is reported alongside for reference but the choice
    is by discrimination, which is the quantity the model is used for.
    """
    from dataclasses import replace as _replace

    from .estimation import FitConfig, fit_map
    from .inference import exit_scorer

    sessions = list(sessions)
    rows = []
    best_k, best_auc = None, -np.inf
    for k in k_grid:
        if fit_config is None:
            cfg = FitConfig(n_states=k)
        else:
            cfg = _replace(fit_config, n_states=k)
        fit = fit_map(sessions, cfg)
        report = evaluate_exit_prediction(exit_scorer(fit.params), sessions)
        rows.append(
            SelectionRow(
                n_states=k,
                auroc=report.auroc,
                objective=fit.objective,
                converged=fit.converged,
            )
        )
        if report.auroc > best_auc:
            best_auc = report.auroc
            best_k = k
    return best_k, tuple(rows)
