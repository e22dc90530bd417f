"""Generative sampling and the two simulation experiments.

The sampler mirrors the model exactly: draw an initial state and sojourn
length, emit pages one at a time, and on sojourn completion draw the next
state from the duration-dependent transition logits. A session ends when
the terminal Exit symbol is emitted or a length cap is reached. Latent
annotations are returned so tests can check the joint probability in
closed form.

Covariates are invented here because no real logs ship with the package:
visit depth is the step index, time spans are log-normal seconds (session
timestamps are built from them, so a CSV round trip recomputes the same
values), the weekend and customer type flags are drawn once per session,
and the same-page counter tracks how often the category the visitor is
currently on was seen before.
"""

from __future__ import annotations

import datetime as _dt
import itertools
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DomainError
from .inference import (
    exit_probability,
    filter_init,
    filter_step,
    state_posterior,
    trace_session,
)
from .model import (
    CovariateVector,
    ModelParams,
    PageCategory,
    Session,
    log_duration_pmf,
    log_duration_survival,
    emission_probs,
    transition_probs,
)

__all__ = [
    "GeneratorConfig",
    "LatentPath",
    "SampledSession",
    "InterventionPolicy",
    "RecoveryRow",
    "RecoveryReport",
    "CaseStudyRow",
    "CaseStudyReport",
    "session_rng",
    "sample_duration",
    "sample_session",
    "sample_sessions",
    "joint_log_prob",
    "align_states",
    "generating_params",
    "recovery_experiment",
    "run_case_study",
    "demo_params",
]

_WEEKDAY_BASE = _dt.datetime(2021, 3, 1, 9, 0)   # a Monday
_WEEKEND_BASE = _dt.datetime(2021, 3, 6, 9, 0)   # a Saturday


@dataclass(frozen=True)
class GeneratorConfig:
    """Controls for the synthetic covariate process and session caps."""

    seed: int = 0
    max_session_length: int = 50
    time_span_log_mean: float = 1.0
    time_span_log_sd: float = 1.0
    weekend_prob: float = 2.0 / 7.0
    customer_type_prob: float = 0.5

    def __post_init__(self) -> None:
        if self.max_session_length < 3:
            raise ConfigError("max_session_length must be >= 3")
        if not 0.0 <= self.weekend_prob <= 1.0:
            raise ConfigError("weekend_prob must lie in [0, 1]")
        if not 0.0 <= self.customer_type_prob <= 1.0:
            raise ConfigError("customer_type_prob must lie in [0, 1]")
        if self.time_span_log_sd < 0.0:
            raise ConfigError("time_span_log_sd must be >= 0")


@dataclass(frozen=True, eq=False)
class LatentPath:
    """Hidden trajectory behind a sampled session.

    ``run_states[j]`` and ``run_lengths[j]`` describe the j-th sojourn;
    the final sojourn is always recorded by its elapsed (right-censored)
    length because the session ends regardless of how much sojourn mass
    remained. ``states[t]`` is the state that emitted step t.
    """

    states: np.ndarray
    run_states: np.ndarray
    run_lengths: np.ndarray


@dataclass(frozen=True, eq=False)
class SampledSession:
    session: Session
    path: LatentPath


def session_rng(seed: int, index: int) -> np.random.Generator:
    """Deterministic per-session generator derived from (seed, index)."""
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def policy_rng(seed: int, index: int) -> np.random.Generator:
    """Separate per-session stream for intervention randomness.

    Keeping trigger-side draws off the session stream means an arm whose
    trigger never forces a state change replays the control realization
    step for step.
    """
    return np.random.default_rng(np.random.SeedSequence([seed, index, 7]))


def sample_duration(theta: float, c: float, rng: np.random.Generator) -> int:
    """Exact inverse-CDF draw from the discrete Weibull sojourn law."""
    u = 1.0 - rng.random()  # in (0, 1]
    if u >= 1.0:
        return 1
    w = (math.log(u) / math.log1p(-theta)) ** (1.0 / c)
    if w > 1e18:
        return 10**18
    return int(w) + 1


def _draw_categorical(probs: np.ndarray, rng: np.random.Generator) -> int:
    u = rng.random()
    return int(min(np.searchsorted(np.cumsum(probs), u, side="right"),
                   probs.shape[0] - 1))


def sample_session(
    params: ModelParams,
    config: GeneratorConfig,
    rng: np.random.Generator,
    session_id: str = "sim",
    start_time: _dt.datetime | None = None,
    _policy: "InterventionPolicy | None" = None,
    _policy_rng: np.random.Generator | None = None,
) -> SampledSession:
    """Draw one session (and its latent path) from the model.

    With ``_policy`` supplied this also runs the intervention arm of the
    case study: the model's own filter scores each upcoming step, and the
    first time the score clears the trigger a MarketingPage view is
    inserted into the stream. The inserted view does not age the sojourn
    clock and consumes no draws from ``rng``; everything the intervention
    needs (its time gap, the effectiveness coin, any fresh sojourn) comes
    from ``_policy_rng``. An arm that triggers but fails to move the
    visitor therefore continues exactly as the control would have, one
    step later.
    """
    pages_list = list(PageCategory)
    weekend = int(rng.random() < config.weekend_prob)
    customer_type = int(rng.random() < config.customer_type_prob)
    if start_time is None:
        start_time = _WEEKEND_BASE if weekend else _WEEKDAY_BASE
    demographics = np.ones(params.demographic_dim)

    state = _draw_categorical(params.pi, rng)
    duration = sample_duration(params.theta[state], params.c[state], rng)
    clock = 0    # sojourn age measured against the drawn duration
    emitted = 0  # steps recorded for the current run in the latent path

    pages: list[PageCategory] = []
    covs: list[CovariateVector] = []
    states: list[int] = []
    run_states: list[int] = [state]
    run_lengths: list[int] = []
    seen: dict[PageCategory, int] = {}
    current_time = start_time
    filt = filter_init(params, demographics) if _policy is not None else None
    intervened = False
    if _policy is not None and _policy_rng is None:
        _policy_rng = np.random.default_rng(np.random.SeedSequence([7, 7, 7]))

    for t in range(1, config.max_session_length + 1):
        if _policy is not None and not intervened:
            if t > 1:
                pgap = _policy_rng.lognormal(
                    config.time_span_log_mean, config.time_span_log_sd
                )
                pnext = current_time + _dt.timedelta(seconds=pgap)
                pspan = (pnext - current_time).total_seconds()
            else:
                pnext, pspan = current_time, 0.0
            x_check = CovariateVector(
                visit_depth=t,
                time_span=pspan,
                cum_same_page=seen.get(pages[-1], 0) if pages else 0,
                weekend=weekend,
                customer_type=customer_type,
            )
            if exit_probability(params, filt, x_check) >= _policy.trigger_threshold:
                # insert the marketing view into this slot; the latent
                # sojourn is paused while the exogenous page is on screen
                intervened = True
                pages.append(PageCategory.MARKETING_PAGE)
                covs.append(x_check)
                states.append(state)
                seen[PageCategory.MARKETING_PAGE] = (
                    seen.get(PageCategory.MARKETING_PAGE, 0) + 1
                )
                emitted += 1
                current_time = pnext
                eff = _policy.resolved_effectiveness(params.n_states)
                if _policy.scenario == "state-dependent" and not _policy.tailored:
                    eff = eff * 0.5
                modal = (
                    int(np.argmax(state_posterior(filt)))
                    if filt.step > 0
                    else int(np.argmax(params.pi))
                )
                if _policy_rng.random() < eff[modal]:
                    # the visitor is pushed into the goal-directed state
                    run_lengths.append(emitted)
                    run_states.append(_policy.goal_state)
                    state = _policy.goal_state
                    emitted = 0
                    if _policy.reset_duration or clock == 0:
                        clock = 0
                        duration = sample_duration(
                            params.theta[state], params.c[state], _policy_rng
                        )
                    else:
                        # the session fatigue clock carries into the new
                        # state: keep the age, draw from the conditional tail
                        duration = _conditional_duration(
                            params.theta[state], params.c[state], clock, _policy_rng
                        )
                continue

        if t > 1:
            gap = rng.lognormal(config.time_span_log_mean, config.time_span_log_sd)
            next_time = current_time + _dt.timedelta(seconds=gap)
            time_span = (next_time - current_time).total_seconds()
            current_time = next_time
        else:
            time_span = 0.0
        cum_same = seen.get(pages[-1], 0) if pages else 0
        x = CovariateVector(
            visit_depth=t,
            time_span=time_span,
            cum_same_page=cum_same,
            weekend=weekend,
            customer_type=customer_type,
        )
        probs = emission_probs(params, state, demographics, x)
        page = pages_list[_draw_categorical(probs, rng)]

        pages.append(page)
        covs.append(x)
        states.append(state)
        seen[page] = seen.get(page, 0) + 1
        clock += 1
        emitted += 1
        if filt is not None and not intervened:
            filt = filter_step(params, filt, page, x)

        if page.is_terminal:
            break
        if clock >= duration and t < config.max_session_length:
            run_lengths.append(emitted)
            probs = transition_probs(params, state, clock)
            state = _draw_categorical(probs, rng)
            run_states.append(state)
            duration = sample_duration(params.theta[state], params.c[state], rng)
            clock = 0
            emitted = 0

    # final sojourn: keep its elapsed length, right-censored
    if emitted > 0:
        run_lengths.append(emitted)
    else:  # pragma: no cover - defensive; emitted is positive after a step
        run_states.pop()

    session = Session(
        session_id=session_id,
        pages=tuple(pages),
        covariates=tuple(covs),
        demographics=demographics,
        start_time=start_time,
    )
    path = LatentPath(
        states=np.asarray(states, dtype=np.int64),
        run_states=np.asarray(run_states[: len(run_lengths)], dtype=np.int64),
        run_lengths=np.asarray(run_lengths, dtype=np.int64),
    )
    return SampledSession(session=session, path=path)


def _conditional_duration(
    theta: float, c: float, elapsed: int, rng: np.random.Generator
) -> int:
    """Draw D conditional on D >= elapsed + 1 (sojourn already survived)."""
    lo = elapsed + 1
    while True:
        d = sample_duration(theta, c, rng)
        if d >= lo:
            return d
        # rejection is cheap here; tails are short for realistic params


def sample_sessions(
    params: ModelParams, config: GeneratorConfig, n: int
) -> list[SampledSession]:
    """Draw ``n`` sessions with per-index sub-seeds and increasing times."""
    out = []
    for i in range(n):
        # peek the weekend flag so the start date agrees with it, then
        # rewind so sample_session sees the identical stream
        weekend = session_rng(config.seed, i).random() < config.weekend_prob
        base = _WEEKEND_BASE if weekend else _WEEKDAY_BASE
        out.append(
            sample_session(
                params,
                config,
                session_rng(config.seed, i),
                session_id=f"sim-{i:06d}",
                start_time=base + _dt.timedelta(minutes=i),
            )
        )
    return out


def joint_log_prob(
    params: ModelParams, session: Session, path: LatentPath
) -> float:
    """Closed-form log probability of (pages, latent path) jointly.

    Completed sojourns contribute pmf and transition mass, the final
    right-censored sojourn contributes survival mass. Summing its exp
    over all latent paths recovers the censored likelihood.
    """
    from .inference import _log_emission_matrix

    if int(path.run_lengths.sum()) != len(session):
        raise DomainError("run lengths do not cover the session")
    log_emis = _log_emission_matrix(params, session)
    lp = math.log(params.pi[path.run_states[0]])
    pos = 0
    n_runs = len(path.run_lengths)
    for j in range(n_runs):
        s = int(path.run_states[j])
        d = int(path.run_lengths[j])
        lp += float(log_emis[pos : pos + d, s].sum())
        if j == n_runs - 1:
            lp += float(log_duration_survival(params.theta[s], params.c[s], d))
        else:
            lp += float(log_duration_pmf(params.theta[s], params.c[s], d))
            nxt = int(path.run_states[j + 1])
            lp += math.log(transition_probs(params, s, d)[nxt])
        pos += d
    return lp


# ---------------------------------------------------------------------------
# Parameter recovery
# ---------------------------------------------------------------------------

def generating_params(
    rng: np.random.Generator, n_states: int = 3, demographic_dim: int = 1
) -> ModelParams:
    """Draw ground-truth parameters for recovery studies.

    Logit coefficients are Normal(0, 5^2), c is a positive half-normal,
    theta uniform and pi flat Dirichlet, matching the priors except for
    the deliberately wider c support.
    """
    k, g = n_states, demographic_dim
    n_pages = len(PageCategory)
    c = np.abs(rng.normal(0.0, 1.0, k))
    while np.any(c <= 1e-3):
        bad = c <= 1e-3
        c[bad] = np.abs(rng.normal(0.0, 1.0, int(bad.sum())))
    return ModelParams(
        n_states=k,
        pi=rng.dirichlet(np.ones(k)),
        theta=rng.uniform(0.0, 1.0, k).clip(1e-4, 1.0 - 1e-4),
        c=c,
        mu=rng.normal(0.0, 5.0, (k, k)),
        delta=rng.normal(0.0, 5.0, (k, k)),
        emission_intercepts=rng.normal(0.0, 5.0, (k, n_pages, g)),
        emission_coefficients=rng.normal(
            0.0, 5.0, (k, n_pages, len(CovariateVector.__dataclass_fields__), g)
        ),
    )


def align_states(truth: ModelParams, fitted: ModelParams):
    """Best relabelling of fitted states against the truth.

    Tries every permutation and keeps the one minimising the summed
    absolute error over all parameter blocks; returns the permutation and
    per-block mean absolute errors.
    """
    if truth.n_states != fitted.n_states:
        raise DomainError("state counts differ")
    best_perm = None
    best_total = np.inf
    best_errors = None
    for perm in itertools.permutations(range(truth.n_states)):
        candidate = permute_from(fitted, perm)
        errors = {
            "pi": float(np.mean(np.abs(candidate.pi - truth.pi))),
            "theta": float(np.mean(np.abs(candidate.theta - truth.theta))),
            "c": float(np.mean(np.abs(candidate.c - truth.c))),
            "mu": _offdiag_mae(candidate.mu, truth.mu),
            "delta": _offdiag_mae(candidate.delta, truth.delta),
            "emission_intercepts": float(
                np.mean(
                    np.abs(candidate.emission_intercepts - truth.emission_intercepts)
                )
            ),
            "emission_coefficients": float(
                np.mean(
                    np.abs(
                        candidate.emission_coefficients
                        - truth.emission_coefficients
                    )
                )
            ),
        }
        total = sum(errors.values())
        if total < best_total:
            best_total = total
            best_perm = perm
            best_errors = errors
    return best_perm, best_errors


def permute_from(params: ModelParams, perm) -> ModelParams:
    from .estimation import permute_states

    return permute_states(params, perm)


def _offdiag_mae(a: np.ndarray, b: np.ndarray) -> float:
    k = a.shape[0]
    mask = ~np.eye(k, dtype=bool)
    return float(np.mean(np.abs(a[mask] - b[mask])))


@dataclass(frozen=True)
class RecoveryRow:
    run: int
    n_sessions: int
    errors: dict


@dataclass(frozen=True, eq=False)
class RecoveryReport:
    rows: tuple[RecoveryRow, ...]
    n_sessions_grid: tuple[int, ...]
    n_runs: int

    def mean_error(self, n_sessions: int, block: str) -> float:
        vals = [
            r.errors[block] for r in self.rows if r.n_sessions == n_sessions
        ]
        return float(np.mean(vals))

    def run_error(self, run: int, n_sessions: int, block: str) -> float:
        for r in self.rows:
            if r.run == run and r.n_sessions == n_sessions:
                return r.errors[block]
        raise KeyError((run, n_sessions))


def recovery_experiment(
    n_sessions_grid=(50, 500),
    n_runs: int = 10,
    seed: int = 0,
    n_states: int = 3,
    fit_restarts: int = 4,
    fit_max_iterations: int = 500,
    generator_config: GeneratorConfig | None = None,
) -> RecoveryReport:
    """Sample-from-truth, refit, and measure per-block recovery error.

    Each run draws one ground truth (shared across the session grid so
    errors are comparable along it), simulates each grid size with run
    and grid specific seeds, fits by MAP with the truth's state count
    known, aligns states by the error-minimising permutation and records
    per-block mean absolute errors.
    """
    from .estimation import FitConfig, fit_map

    base = GeneratorConfig() if generator_config is None else generator_config
    rows = []
    for run in range(n_runs):
        truth_rng = np.random.default_rng(np.random.SeedSequence([seed, run]))
        truth = generating_params(truth_rng, n_states=n_states)
        for grid_idx, n in enumerate(n_sessions_grid):
            cfg = replace(base, seed=seed + 7919 * (run + 1) + 104729 * grid_idx)
            sampled = sample_sessions(truth, cfg, n)
            sessions = [s.session for s in sampled]
            fit = fit_map(
                sessions,
                FitConfig(
                    n_states=n_states,
                    restarts=fit_restarts,
                    max_iterations=fit_max_iterations,
                    seed=seed + 31 * run + grid_idx,
                ),
            )
            _, errors = align_states(truth, fit.params)
            rows.append(RecoveryRow(run=run, n_sessions=n, errors=errors))
    return RecoveryReport(
        rows=tuple(rows),
        n_sessions_grid=tuple(n_sessions_grid),
        n_runs=n_runs,
    )


# ---------------------------------------------------------------------------
# Intervention case study
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class InterventionPolicy:
    """When and how the marketing page is injected.

    The treatment arm scores every upcoming step with the model's own
    filter; the first time the predicted exit probability reaches
    ``trigger_threshold``, a MarketingPage view is inserted ahead of the
    visitor's next click and, with the per-state probability
    ``effectiveness`` (indexed by the posterior modal state), the visitor
    is moved into ``goal_state`` with a fresh sojourn. When the page does
    not move the visitor, browsing resumes exactly where it left off.
    Under the state-dependent scenario a policy that cannot tailor the
    page to the latent state only gets half the effect.
    ``reset_duration=False`` keeps the interrupted sojourn's age and
    redraws its remaining length from the conditional tail instead.
    """

    trigger_threshold: float
    effectiveness: float | tuple = 1.0
    scenario: str = "uniform"
    goal_state: int = 0
    tailored: bool = True
    reset_duration: bool = True

    def __post_init__(self) -> None:
        if not self.trigger_threshold >= 0.0:
            raise ConfigError("trigger_threshold must be >= 0")
        if self.scenario not in ("uniform", "state-dependent"):
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        eff = np.atleast_1d(np.asarray(self.effectiveness, dtype=float))
        if np.any(eff < 0.0) or np.any(eff > 1.0):
            raise ConfigError("effectiveness must lie in [0, 1]")
        if self.scenario == "uniform" and eff.size > 1 and not np.all(eff == eff[0]):
            raise ConfigError("uniform scenario requires one effectiveness value")
        if self.goal_state < 0:
            raise ConfigError("goal_state must be a valid state index")
        object.__setattr__(
            self,
            "effectiveness",
            float(eff[0]) if eff.size == 1 else tuple(float(e) for e in eff),
        )

    def resolved_effectiveness(self, n_states: int) -> np.ndarray:
        eff = np.atleast_1d(np.asarray(self.effectiveness, dtype=float))
        if eff.size == 1:
            return np.full(n_states, float(eff[0]))
        if eff.size != n_states:
            raise ConfigError(
                f"effectiveness has {eff.size} entries for {n_states} states"
            )
        return eff


@dataclass(frozen=True)
class CaseStudyRow:
    scenario: str
    effectiveness: float
    arm: str
    n_sessions: int
    conversions: int
    conversion_rate: float
    uplift: float
    ci_half_width: float


@dataclass(frozen=True, eq=False)
class CaseStudyReport:
    rows: tuple[CaseStudyRow, ...]
    trigger_threshold: float

    def treatment_row(self, scenario: str, effectiveness: float) -> CaseStudyRow:
        for r in self.rows:
            if (
                r.arm == "treatment"
                and r.scenario == scenario
                and abs(r.effectiveness - effectiveness) < 1e-12
            ):
                return r
        raise KeyError((scenario, effectiveness))


def _is_conversion(session: Session) -> bool:
    return any(p is PageCategory.CHECKOUT for p in session.pages)


def calibrate_threshold(
    params: ModelParams,
    config: GeneratorConfig,
    n_sessions: int = 500,
    fpr: float = 0.30,
) -> float:
    """Score a fresh simulated corpus and pick the deepest cutoff whose
    step-level false positive rate stays within ``fpr``."""
    from .metrics import threshold_at_fpr

    cal_cfg = replace(config, seed=config.seed + 999_983)
    sampled = sample_sessions(params, cal_cfg, n_sessions)
    scores, labels = [], []
    for s in sampled:
        trace = trace_session(params, s.session)
        scores.extend(trace.exit_prob.tolist())
        labels.extend(
            [1 if p is PageCategory.EXIT else 0 for p in s.session.pages]
        )
    return threshold_at_fpr(np.asarray(scores), np.asarray(labels), fpr)


def run_case_study(
    params: ModelParams,
    n_sessions: int,
    seed: int = 0,
    trigger_threshold: float | None = None,
    effectiveness_grid=(0.1, 0.5, 1.0),
    scenarios=("uniform", "state-dependent"),
    goal_state: int | None = None,
    generator_config: GeneratorConfig | None = None,
    tailored: bool = True,
    reset_duration: bool = True,
) -> CaseStudyReport:
    """Simulate coupled control and treatment arms and report uplift.

    Every treatment arm replays the control's per-session stream, and all
    intervention randomness lives on a second stream, so arms differ from
    the control only through the inserted marketing view and any forced
    state change. With effectiveness 0 the treated session is the control
    session with one extra page in it, and the uplift is zero up to the
    session-length cap. Conversion is any Checkout visit; uplift is
    relative to the control rate with a binomial 95 percent half-width.
    ``trigger_threshold=None`` calibrates the threshold on a separate
    simulated corpus at a 30 percent false positive budget.
    """
    if n_sessions < 1:
        raise ConfigError("n_sessions must be >= 1")
    config = GeneratorConfig(seed=seed) if generator_config is None else replace(
        generator_config, seed=seed
    )
    if goal_state is None:
        # the state most inclined to emit Checkout, by intercepts alone
        logits = np.einsum(
            "kog,g->ko", params.emission_intercepts, np.ones(params.demographic_dim)
        )
        logits = logits - logits.max(axis=1, keepdims=True)
        share = np.exp(logits)
        share /= share.sum(axis=1, keepdims=True)
        goal_state = int(np.argmax(share[:, PageCategory.CHECKOUT.index]))
    if not 0 <= goal_state < params.n_states:
        raise ConfigError(f"goal_state {goal_state} out of range")
    if trigger_threshold is None:
        trigger_threshold = calibrate_threshold(params, config)

    control_conversions = 0
    for i in range(n_sessions):
        rng = session_rng(seed, i)
        sampled = sample_session(params, config, rng, session_id=f"ctl-{i}")
        control_conversions += _is_conversion(sampled.session)
    p_control = control_conversions / n_sessions

    rows = []
    for scenario in scenarios:
        for eff in effectiveness_grid:
            policy = InterventionPolicy(
                trigger_threshold=trigger_threshold,
                effectiveness=float(eff),
                scenario=scenario,
                goal_state=goal_state,
                tailored=tailored,
                reset_duration=reset_duration,
            )
            treated_conversions = 0
            for i in range(n_sessions):
                rng = session_rng(seed, i)
                sampled = sample_session(
                    params,
                    config,
                    rng,
                    session_id=f"trt-{i}",
                    _policy=policy,
                    _policy_rng=policy_rng(seed, i),
                )
                treated_conversions += _is_conversion(sampled.session)
            p_treat = treated_conversions / n_sessions
            se = math.sqrt(
                p_treat * (1 - p_treat) / n_sessions
                + p_control * (1 - p_control) / n_sessions
            )
            uplift = (p_treat - p_control) / p_control if p_control > 0 else math.inf
            half = 1.96 * se / p_control if p_control > 0 else math.inf
            rows.append(
                CaseStudyRow(
                    scenario=scenario,
                    effectiveness=float(eff),
                    arm="control",
                    n_sessions=n_sessions,
                    conversions=control_conversions,
                    conversion_rate=p_control,
                    uplift=0.0,
                    ci_half_width=0.0,
                )
            )
            rows.append(
                CaseStudyRow(
                    scenario=scenario,
                    effectiveness=float(eff),
                    arm="treatment",
                    n_sessions=n_sessions,
                    conversions=treated_conversions,
                    conversion_rate=p_treat,
                    uplift=uplift,
                    ci_half_width=half,
                )
            )
    return CaseStudyReport(rows=tuple(rows), trigger_threshold=trigger_threshold)


# ---------------------------------------------------------------------------
# A hand-built parameter set with pronounced duration dependence
# ---------------------------------------------------------------------------

def demo_params() -> ModelParams:
    """Three states with strongly different sojourn behaviour.

    State 0 is engaged browsing (c = 0.5: leaving pressure falls the
    longer it lasts), state 1 is scanning (c = 2.5: pressure builds),
    state 2 is a short-lived leaving state that mostly emits Exit. Long
    scanning runs are pushed toward the leaving state by positive
    duration slopes, which is exactly the signature a memoryless model
    cannot represent.
    """
    k = 3
    n_pages = len(PageCategory)
    gamma = np.zeros((k, n_pages, 1))
    # state 0: engaged; products, community, some checkout
    gamma[0, :, 0] = [0.2, 0.5, 0.8, 2.0, -1.0, 1.2, 0.8, 0.0, -4.0]
    # state 1: scanning; home, overview, product
    gamma[1, :, 0] = [2.0, 0.3, 1.6, 1.2, -0.5, -0.5, -2.5, -2.5, -4.0]
    # state 2: leaving; exit dominates
    gamma[2, :, 0] = [0.0, -1.0, -1.0, -0.5, -1.0, -1.0, -3.0, -3.0, 2.8]
    beta = np.zeros((k, n_pages, len(CovariateVector.__dataclass_fields__), 1))

    mu = np.array(
        [
            [0.0, 1.0, -0.5],
            [0.5, 0.0, -1.5],
            [0.5, 0.5, 0.0],
        ]
    )
    delta = np.array(
        [
            [0.0, 0.05, -0.1],
            [-0.4, 0.0, 0.6],
            [0.0, 0.0, 0.0],
        ]
    )
    return ModelParams(
        n_states=k,
        pi=np.array([0.35, 0.60, 0.05]),
        theta=np.array([0.45, 0.25, 0.75]),
        c=np.array([0.5, 2.5, 1.0]),
        mu=mu,
        delta=delta,
        emission_intercepts=gamma,
        emission_coefficients=beta,
    )
