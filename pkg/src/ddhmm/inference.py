"""Exact likelihoods, filtering and one-step-ahead prediction.

The session likelihood sums over all segmentations of the observed pages
into runs of latent states. Two conventions are supported:

* complete: the final run ends exactly at the last observed step, so its
  length carries full duration information. Used for fitting.
* censored: the final run is still in progress at the last step and only
  its elapsed length is known, so it contributes survival mass. This is
  the generative probability of observing the pages as a prefix and is
  what the streaming filter tracks; prediction uses it.

Both are computed from a shared dynamic program over run-start positions
that costs O(T^2 K^2) per session.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DimensionError, DomainError, ImpossiblePrefixError
from .model import (
    EXIT_INDEX,
    ModelParams,
    PageCategory,
    Session,
    _as_covariate_array,
    _log1mexp,
    log_emission_probs,
)

__all__ = [
    "ForwardTable",
    "FilterState",
    "PredictionTrace",
    "log_likelihood_complete",
    "log_likelihood_censored",
    "forward_table",
    "filter_init",
    "filter_step",
    "state_posterior",
    "log_prefix_likelihood",
    "predict_next_page",
    "exit_probability",
    "trace_session",
    "exit_scorer",
]


# ---------------------------------------------------------------------------
# Shared per-session tables
# ---------------------------------------------------------------------------

def _log_emission_matrix(params: ModelParams, session: Session) -> np.ndarray:
    """log p(o_t | state) for every step and state, shape (T, K)."""
    T = len(session)
    out = np.empty((T, params.n_states))
    for t in range(T):
        for s in range(params.n_states):
            out[t, s] = log_emission_probs(
                params, s, session.demographics, session.covariates[t]
            )[session.pages[t].index]
    return out


def _duration_tables(params: ModelParams, max_d: int):
    """Per-state log pmf and log survival for d = 1..max_d, shapes (K, max_d)."""
    d = np.arange(1, max_d + 1, dtype=float)
    log_q1m = np.log1p(-params.theta)[:, None]
    dc = d[None, :] ** params.c[:, None]
    dm1c = (d - 1.0)[None, :] ** params.c[:, None]
    log_surv = dm1c * log_q1m
    log_pmf = log_surv + _log1mexp((dc - dm1c) * log_q1m)
    return log_pmf, log_surv


def _log_transition_tables(params: ModelParams, max_d: int) -> np.ndarray:
    """log q[s, s', d] for d = 1..max_d, shape (K, K, max_d); -inf diagonal."""
    k = params.n_states
    d = np.arange(1, max_d + 1, dtype=float)
    logits = params.mu[:, :, None] + params.delta[:, :, None] * d[None, None, :]
    logits[np.arange(k), np.arange(k), :] = -np.inf
    norm = logsumexp(logits, axis=1, keepdims=True)
    return logits - norm


def _session_tables(params: ModelParams, session: Session):
    T = len(session)
    log_emis = _log_emission_matrix(params, session)
    cum = np.zeros((T + 1, params.n_states))
    np.cumsum(log_emis, axis=0, out=cum[1:])
    log_pmf, log_surv = _duration_tables(params, T)
    log_q = _log_transition_tables(params, T)
    return log_emis, cum, log_pmf, log_surv, log_q


def _inflow_table(params: ModelParams, cum, log_pmf, log_q) -> np.ndarray:
    """Log mass of starting a fresh run of each state at position u.

    inflow[u, s'] aggregates every way of segmenting steps 1..u-1 into
    completed runs followed by a transition into s'. inflow[1] is the
    initial distribution; index 0 is unused.
    """
    T = cum.shape[0] - 1
    k = params.n_states
    inflow = np.full((T + 1, k), -np.inf)
    inflow[1] = np.log(params.pi)
    for u in range(2, T + 1):
        ds = np.arange(1, u)
        prev = inflow[u - ds]                      # (u-1, K) previous run start
        seg = cum[u - 1][None, :] - cum[u - 1 - ds]  # (u-1, K) run emissions
        base = prev + seg + log_pmf[:, ds - 1].T   # (u-1, K) completed run mass
        tot = base[:, :, None] + np.moveaxis(log_q[:, :, ds - 1], 2, 0)
        inflow[u] = logsumexp(tot, axis=(0, 1))
    return inflow


def _final_run_terms(inflow, cum, per_d) -> np.ndarray:
    """Terms for a final run of each length, shape (T, K); per_d is (K, T)."""
    T = cum.shape[0] - 1
    ds = np.arange(1, T + 1)
    starts = T - ds + 1
    seg = cum[T][None, :] - cum[T - ds]
    return inflow[starts] + seg + per_d[:, ds - 1].T


def log_likelihood_complete(params: ModelParams, session: Session) -> float:
    """Log probability that the session is exactly the observed runs.

    The final run must end at the last step, so every sojourn contributes
    its full probability mass.
    """
    _, cum, log_pmf, _, log_q = _session_tables(params, session)
    inflow = _inflow_table(params, cum, log_pmf, log_q)
    return float(logsumexp(_final_run_terms(inflow, cum, log_pmf)))


def log_likelihood_censored(params: ModelParams, session: Session) -> float:
    """Log probability of observing the pages as a prefix.

    The final run is right-censored: it contributes survival mass for its
    elapsed length. This equals the probability that the generative
    process produces these pages as its first T emissions.
    """
    _, cum, log_pmf, log_surv, log_q = _session_tables(params, session)
    inflow = _inflow_table(params, cum, log_pmf, log_q)
    return float(logsumexp(_final_run_terms(inflow, cum, log_surv)))


@dataclass(frozen=True, eq=False)
class ForwardTable:
    """Forward quantities alpha_t(s, d) in log space.

    ``log_alpha[t - 1, s, d - 1]`` is the log joint probability of the
    first t pages with a run of state s of exact length d ending at t.
    Entries with d > t are -inf.
    """

    log_alpha: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.log_alpha.shape[0]

    @property
    def n_states(self) -> int:
        return self.log_alpha.shape[1]

    def log_likelihood(self) -> float:
        """Complete-convention log likelihood: total mass at the last step."""
        return float(logsumexp(self.log_alpha[-1]))


def forward_table(params: ModelParams, session: Session) -> ForwardTable:
    """Materialise the full forward table for inspection and testing."""
    _, cum, log_pmf, _, log_q = _session_tables(params, session)
    inflow = _inflow_table(params, cum, log_pmf, log_q)
    T = len(session)
    k = params.n_states
    log_alpha = np.full((T, k, T), -np.inf)
    for t in range(1, T + 1):
        ds = np.arange(1, t + 1)
        seg = cum[t][None, :] - cum[t - ds]
        log_alpha[t - 1, :, :t] = (inflow[t - ds + 1] + seg + log_pmf[:, ds - 1].T).T
    return ForwardTable(log_alpha=log_alpha)


# ---------------------------------------------------------------------------
# Streaming filter over (state, elapsed duration)
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FilterState:
    """Posterior-proportional mass over (state, elapsed duration).

    ``log_phi[s, d - 1]`` is the log joint probability of the pages seen
    so far and the current run being state s with elapsed duration d.
    The total mass equals the censored prefix likelihood. ``step`` counts
    consumed pages; demographics ride along for emission evaluation.
    """

    log_phi: np.ndarray
    step: int
    demographics: np.ndarray

    @property
    def n_states(self) -> int:
        return self.log_phi.shape[0]


def filter_init(params: ModelParams, demographics=None) -> FilterState:
    """A filter that has consumed nothing yet."""
    if demographics is None:
        demographics = np.ones(params.demographic_dim)
    demographics = np.asarray(demographics, dtype=float)
    if demographics.shape != (params.demographic_dim,):
        raise DimensionError(
            "demographics", (params.demographic_dim,), demographics.shape
        )
    return FilterState(
        log_phi=np.full((params.n_states, 0), -np.inf),
        step=0,
        demographics=demographics,
    )


def _hazard_tables(params: ModelParams, max_d: int):
    """log renewal and log leave probability per state for d = 1..max_d."""
    log_pmf, log_surv = _duration_tables(params, max_d + 1)
    log_renew = log_surv[:, 1:] - log_surv[:, :-1]
    log_leave = log_pmf[:, :-1] - log_surv[:, :-1]
    return log_renew[:, :max_d], log_leave[:, :max_d]


def filter_step(
    params: ModelParams, state: FilterState, page: PageCategory, covariates
) -> FilterState:
    """Advance the filter by one observed page."""
    k = params.n_states
    log_emis = np.array(
        [
            log_emission_probs(params, s, state.demographics, covariates)[page.index]
            for s in range(k)
        ]
    )
    t = state.step
    if t == 0:
        log_phi = (np.log(params.pi) + log_emis)[:, None]
        return FilterState(log_phi=log_phi, step=1, demographics=state.demographics)

    log_renew, log_leave = _hazard_tables(params, t)
    log_q = _log_transition_tables(params, t)

    new_phi = np.full((k, t + 1), -np.inf)
    # runs that survive one more period keep their state, elapsed + 1
    new_phi[:, 1:] = state.log_phi + log_renew + log_emis[:, None]
    # runs that end at elapsed d hand mass to a fresh run elsewhere
    leave = state.log_phi + log_leave                       # (K, t)
    tot = leave[:, None, :] + log_q                          # (K_from, K_to, t)
    new_phi[:, 0] = logsumexp(tot, axis=(0, 2)) + log_emis
    return FilterState(
        log_phi=new_phi, step=t + 1, demographics=state.demographics
    )


def log_prefix_likelihood(state: FilterState) -> float:
    """Censored log likelihood of everything consumed so far."""
    if state.step == 0:
        return 0.0
    return float(logsumexp(state.log_phi))


def state_posterior(state: FilterState) -> np.ndarray:
    """P(current state | consumed pages), shape (K,)."""
    if state.step == 0:
        raise DomainError("state_posterior needs at least one consumed page")
    total = logsumexp(state.log_phi)
    if not np.isfinite(total):
        raise ImpossiblePrefixError("filtered prefix has zero probability")
    return np.exp(logsumexp(state.log_phi, axis=1) - total)


def predict_next_page(
    params: ModelParams, state: FilterState, next_covariates
) -> np.ndarray:
    """Predictive distribution over the next page category, shape (9,).

    Marginalises over staying in the current run versus ending it and
    transitioning, then mixes the per-state emission simplices evaluated
    at the next step's covariates.
    """
    k = params.n_states
    x = _as_covariate_array(next_covariates, params.covariate_dim)
    log_emis = np.stack(
        [log_emission_probs(params, s, state.demographics, x) for s in range(k)]
    )
    t = state.step
    if t == 0:
        log_weights = np.log(params.pi)
    else:
        total = logsumexp(state.log_phi)
        if not np.isfinite(total):
            raise ImpossiblePrefixError("filtered prefix has zero probability")
        log_phi_hat = state.log_phi - total
        log_renew, log_leave = _hazard_tables(params, t)
        log_q = _log_transition_tables(params, t)
        stay = logsumexp(log_phi_hat + log_renew, axis=1)
        leave = log_phi_hat + log_leave
        enter = logsumexp(leave[:, None, :] + log_q, axis=(0, 2))
        log_weights = np.logaddexp(stay, enter)
    return np.exp(logsumexp(log_weights[:, None] + log_emis, axis=0))


def exit_probability(
    params: ModelParams, state: FilterState, next_covariates
) -> float:
    """Probability that the next page is the terminal Exit symbol."""
    return float(predict_next_page(params, state, next_covariates)[EXIT_INDEX])


# ---------------------------------------------------------------------------
# Per-session traces and scorers
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PredictionTrace:
    """Step-by-step filter output for one session.

    ``exit_prob[t]`` is the exit probability predicted before step t + 1
    was observed; ``state_posterior[t]`` the posterior after observing it;
    ``log_prefix_likelihood[t]`` the censored log likelihood of the first
    t + 1 pages.
    """

    session_id: str
    exit_prob: np.ndarray
    state_posterior: np.ndarray
    log_prefix_likelihood: np.ndarray

    def __len__(self) -> int:
        return self.exit_prob.shape[0]


def trace_session(params: ModelParams, session: Session) -> PredictionTrace:
    """Run the filter over a session, recording predictions as it goes."""
    T = len(session)
    k = params.n_states
    exit_prob = np.empty(T)
    posterior = np.empty((T, k))
    loglik = np.empty(T)
    state = filter_init(params, session.demographics)
    for t in range(T):
        exit_prob[t] = exit_probability(params, state, session.covariates[t])
        state = filter_step(params, state, session.pages[t], session.covariates[t])
        posterior[t] = state_posterior(state)
        loglik[t] = log_prefix_likelihood(state)
    return PredictionTrace(
        session_id=session.session_id,
        exit_prob=exit_prob,
        state_posterior=posterior,
        log_prefix_likelihood=loglik,
    )


def _complete_convention_scores(params: ModelParams, session: Session) -> np.ndarray:
    """Exit scores where each step's predictive renormalises complete
    likelihoods of the one-step extensions of the observed prefix."""
    T = len(session)
    k = params.n_states
    _, cum, log_pmf, _, log_q = _session_tables(params, session)
    inflow = _inflow_table(params, cum, log_pmf, log_q)
    scores = np.empty(T)
    for t in range(1, T + 1):
        ds = np.arange(1, t + 1)
        starts = t - ds + 1
        # emissions of the final run, excluding the candidate step itself
        seg = cum[t - 1][None, :] - cum[t - ds]
        run = inflow[starts] + seg + log_pmf[:, ds - 1].T   # (t, K)
        weight = logsumexp(run, axis=0)                     # (K,)
        log_emis = np.stack(
            [
                log_emission_probs(
                    params, s, session.demographics, session.covariates[t - 1]
                )
                for s in range(k)
            ]
        )
        log_ext = logsumexp(weight[:, None] + log_emis, axis=0)  # (9,)
        norm = logsumexp(log_ext)
        scores[t - 1] = np.exp(log_ext[EXIT_INDEX] - norm)
    return scores


def exit_scorer(params: ModelParams, convention: str = "censored"):
    """Build a per-step exit probability scorer for evaluation.

    ``convention`` selects how the predictive distribution treats the run
    in progress: "censored" (the default, used throughout the package)
    propagates the survival-based filter; "complete" renormalises
    complete-convention likelihoods of the prefix extended by one page.
    """
    if convention == "censored":
        def score(session: Session) -> np.ndarray:
            return trace_session(params, session).exit_prob

    elif convention == "complete":
        def score(session: Session) -> np.ndarray:
            return _complete_convention_scores(params, session)

    else:
        raise DomainError(f"unknown prediction convention {convention!r}")
    return score
