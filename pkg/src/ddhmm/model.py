"""Core types and probability primitives of the duration-dependent HMM.

The model couples three ingredients:

* state-specific multinomial-logit emissions over nine page categories,
  driven by time-varying covariates and static visitor attributes,
* discrete Weibull sojourn (duration) distributions per state, which allow
  negative as well as positive duration dependence, and
* duration-dependent multinomial-logit transitions between distinct states.

Everything in this module is a pure function over frozen dataclasses, so
instances can be shared freely between threads.
"""

from __future__ import annotations

import datetime as _dt
import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionError,
    DomainError,
    ModelStructureError,
    NumericalError,
)

__all__ = [
    "PageCategory",
    "PAGE_ORDER",
    "EXIT_INDEX",
    "COVARIATE_NAMES",
    "CovariateVector",
    "Session",
    "ModelParams",
    "duration_pmf",
    "duration_survival",
    "log_duration_pmf",
    "log_duration_survival",
    "renewal_prob",
    "renewal_prob_shifted",
    "expected_duration",
    "emission_logits",
    "emission_probs",
    "log_emission_probs",
    "transition_probs",
    "log_transition_probs",
]


class PageCategory(enum.Enum):
    """The fixed nine-symbol page alphabet.

    ``Exit`` is an artificial absorbing symbol: it may only ever appear as
    the final element of a session.
    """

    HOME = "Home"
    ACCOUNT = "Account"
    OVERVIEW = "Overview"
    PRODUCT = "Product"
    MARKETING_PAGE = "MarketingPage"
    COMMUNITY = "Community"
    CHECKOUT = "Checkout"
    ORDER = "Order"
    EXIT = "Exit"

    @property
    def is_terminal(self) -> bool:
        return self is PageCategory.EXIT

    @property
    def index(self) -> int:
        return _PAGE_INDEX[self]


PAGE_ORDER: tuple[str, ...] = tuple(p.value for p in PageCategory)
_PAGE_INDEX = {p: i for i, p in enumerate(PageCategory)}
_PAGE_BY_NAME = {p.value: p for p in PageCategory}
EXIT_INDEX = PageCategory.EXIT.index

COVARIATE_NAMES: tuple[str, ...] = (
    "visit_depth",
    "time_span",
    "cum_same_page",
    "weekend",
    "customer_type",
)


def page_from_name(name: str) -> PageCategory:
    try:
        return _PAGE_BY_NAME[name]
    except KeyError:
        raise DomainError(f"unknown page category {name!r}") from None


@dataclass(frozen=True)
class CovariateVector:
    """Time-varying observables attached to one step of a session.

    ``visit_depth`` is the 1-based step index, ``time_span`` the seconds
    spent on the previous page (0 for the first step), ``cum_same_page``
    a count of earlier visits to the same page category, and ``weekend``
    / ``customer_type`` are binary indicators.
    """

    visit_depth: int
    time_span: float
    cum_same_page: int
    weekend: int
    customer_type: int

    def __post_init__(self) -> None:
        if self.visit_depth < 1:
            raise DomainError("visit_depth must be >= 1")
        if not math.isfinite(self.time_span) or self.time_span < 0:
            raise DomainError("time_span must be finite and >= 0")
        if self.cum_same_page < 0:
            raise DomainError("cum_same_page must be >= 0")
        if self.weekend not in (0, 1):
            raise DomainError("weekend must be 0 or 1")
        if self.customer_type not in (0, 1):
            raise DomainError("customer_type must be 0 or 1")

    def as_array(self) -> np.ndarray:
        return np.array(
            [
                float(self.visit_depth),
                float(self.time_span),
                float(self.cum_same_page),
                float(self.weekend),
                float(self.customer_type),
            ]
        )

    @staticmethod
    def from_array(values) -> "CovariateVector":
        v = np.asarray(values, dtype=float)
        if v.shape != (len(COVARIATE_NAMES),):
            raise DimensionError("covariates", (len(COVARIATE_NAMES),), v.shape)
        return CovariateVector(
            visit_depth=int(v[0]),
            time_span=float(v[1]),
            cum_same_page=int(v[2]),
            weekend=int(v[3]),
            customer_type=int(v[4]),
        )


_EPOCH = _dt.datetime(2020, 1, 6)


@dataclass(frozen=True, eq=False)
class Session:
    """One browsing session: an aligned list of pages and covariates.

    ``demographics`` holds static visitor attributes; the cold-start
    default is a single constant 1.0 so that emission intercepts act as
    plain per-state offsets.
    """

    session_id: str
    pages: tuple[PageCategory, ...]
    covariates: tuple[CovariateVector, ...]
    user_id: str = ""
    demographics: np.ndarray = field(default_factory=lambda: np.array([1.0]))
    start_time: _dt.datetime = _EPOCH

    def __post_init__(self) -> None:
        if len(self.pages) == 0:
            raise DomainError(f"session {self.session_id}: empty page list")
        if len(self.pages) != len(self.covariates):
            raise DimensionError(
                f"session {self.session_id}: covariates",
                (len(self.pages),),
                (len(self.covariates),),
            )
        for t, page in enumerate(self.pages):
            if page.is_terminal and t != len(self.pages) - 1:
                raise ModelStructureError(
                    f"session {self.session_id}: terminal page at step {t + 1} "
                    "is not last"
                )
        demo = np.asarray(self.demographics, dtype=float)
        if demo.ndim != 1 or demo.size == 0 or not np.all(np.isfinite(demo)):
            raise DomainError(f"session {self.session_id}: invalid demographics")
        demo.flags.writeable = False
        object.__setattr__(self, "demographics", demo)
        if not self.user_id:
            object.__setattr__(self, "user_id", self.session_id)

    def __len__(self) -> int:
        return len(self.pages)

    def page_indices(self) -> np.ndarray:
        return np.array([p.index for p in self.pages], dtype=np.int64)

    def covariate_matrix(self) -> np.ndarray:
        return np.stack([x.as_array() for x in self.covariates])


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Full parameter set of a fitted or hand-built model.

    Attributes
    ----------
    n_states:
        Number of latent states, at least 2.
    pi:
        Initial state distribution, shape (n_states,).
    theta, c:
        Discrete Weibull duration parameters per state; 0 < theta < 1 and
        c > 0. c below 1 yields increasing stickiness with elapsed
        duration, c above 1 increasing leave pressure, c = 1 recovers a
        geometric (memoryless) sojourn.
    mu, delta:
        Transition logit intercepts and duration slopes, shape
        (n_states, n_states). Diagonals are unused and stored as zeros.
    emission_intercepts:
        Maps demographics to per-page logit intercepts, shape
        (n_states, 9, demographic_dim).
    emission_coefficients:
        Maps demographics to covariate coefficients, shape
        (n_states, 9, covariate_dim, demographic_dim).
    """

    n_states: int
    pi: np.ndarray
    theta: np.ndarray
    c: np.ndarray
    mu: np.ndarray
    delta: np.ndarray
    emission_intercepts: np.ndarray
    emission_coefficients: np.ndarray
    covariate_names: tuple[str, ...] = COVARIATE_NAMES
    page_order: tuple[str, ...] = PAGE_ORDER

    def __post_init__(self) -> None:
        k = self.n_states
        if k < 2:
            raise ModelStructureError("n_states must be >= 2")
        if tuple(self.page_order) != PAGE_ORDER:
            raise ModelStructureError("page_order must match the canonical alphabet")
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        object.__setattr__(self, "page_order", tuple(self.page_order))

        pi = np.asarray(self.pi, dtype=float)
        theta = np.asarray(self.theta, dtype=float)
        c = np.asarray(self.c, dtype=float)
        mu = np.array(self.mu, dtype=float)
        delta = np.array(self.delta, dtype=float)
        gamma = np.asarray(self.emission_intercepts, dtype=float)
        beta = np.asarray(self.emission_coefficients, dtype=float)

        if pi.shape != (k,):
            raise DimensionError("pi", (k,), pi.shape)
        for name, arr in (("theta", theta), ("c", c)):
            if arr.shape != (k,):
                raise DimensionError(name, (k,), arr.shape)
        for name, arr in (("mu", mu), ("delta", delta)):
            if arr.shape != (k, k):
                raise DimensionError(name, (k, k), arr.shape)
        n_pages = len(PAGE_ORDER)
        if gamma.ndim != 3 or gamma.shape[:2] != (k, n_pages):
            raise DimensionError(
                "emission_intercepts", (k, n_pages, "G"), gamma.shape
            )
        g_dim = gamma.shape[2]
        c_dim = len(self.covariate_names)
        if beta.shape != (k, n_pages, c_dim, g_dim):
            raise DimensionError(
                "emission_coefficients", (k, n_pages, c_dim, g_dim), beta.shape
            )

        for name, arr in (
            ("pi", pi),
            ("theta", theta),
            ("c", c),
            ("mu", mu),
            ("delta", delta),
            ("emission_intercepts", gamma),
            ("emission_coefficients", beta),
        ):
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"{name} contains non-finite values")

        if abs(pi.sum() - 1.0) > 1e-12 or np.any(pi < 0):
            raise DomainError("pi must be a probability vector summing to 1")
        if np.any(theta <= 0.0) or np.any(theta >= 1.0):
            raise DomainError("theta must lie strictly inside (0, 1)")
        if np.any(c <= 0.0):
            raise DomainError("c must be strictly positive")

        np.fill_diagonal(mu, 0.0)
        np.fill_diagonal(delta, 0.0)

        for name, arr in (
            ("pi", pi),
            ("theta", theta),
            ("c", c),
            ("mu", mu),
            ("delta", delta),
            ("emission_intercepts", gamma),
            ("emission_coefficients", beta),
        ):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def page_count(self) -> int:
        return len(self.page_order)

    @property
    def covariate_dim(self) -> int:
        return len(self.covariate_names)

    @property
    def demographic_dim(self) -> int:
        return self.emission_intercepts.shape[2]


# ---------------------------------------------------------------------------
# Discrete Weibull durations
# ---------------------------------------------------------------------------

def _check_d(d) -> np.ndarray:
    d_arr = np.asarray(d)
    if not np.issubdtype(d_arr.dtype, np.integer):
        if not np.all(d_arr == np.floor(d_arr)):
            raise DomainError("d must be integer valued")
    if np.any(d_arr < 1):
        raise DomainError("d must be >= 1")
    return d_arr.astype(float)


def _check_duration_args(theta: float, c: float, d) -> np.ndarray:
    if not (0.0 < theta < 1.0):
        raise DomainError(f"theta must be in (0, 1), got {theta}")
    if not c > 0.0:
        raise DomainError(f"c must be > 0, got {c}")
    return _check_d(d)


def log_duration_survival(theta: float, c: float, d) -> np.ndarray:
    """log P(D >= d) = (d - 1)^c * log(1 - theta)."""
    d_arr = _check_duration_args(theta, c, d)
    return (d_arr - 1.0) ** c * math.log1p(-theta)


def duration_survival(theta: float, c: float, d):
    """Survival P(D >= d) of the discrete Weibull duration distribution."""
    return np.exp(log_duration_survival(theta, c, d))[()]


def _log1mexp(x):
    """log(1 - exp(x)) for x < 0, numerically stable on both branches."""
    x = np.asarray(x, dtype=float)
    flat = np.atleast_1d(x).astype(float)
    out = np.empty_like(flat)
    small = flat < -math.log(2.0)
    out[small] = np.log1p(-np.exp(flat[small]))
    out[~small] = np.log(-np.expm1(flat[~small]))
    return out.reshape(x.shape)


def log_duration_pmf(theta: float, c: float, d) -> np.ndarray:
    """log P(D = d) with P(D = d) = (1-theta)^((d-1)^c) - (1-theta)^(d^c)."""
    d_arr = _check_duration_args(theta, c, d)
    log_q = math.log1p(-theta)
    log_surv = (d_arr - 1.0) ** c * log_q
    gap = (d_arr**c - (d_arr - 1.0) ** c) * log_q
    return log_surv + _log1mexp(gap)


def duration_pmf(theta: float, c: float, d):
    """Probability that a sojourn lasts exactly ``d`` periods."""
    return np.exp(log_duration_pmf(theta, c, d))[()]


def renewal_prob(theta: float, c: float, d):
    """P(D >= d + 1 | D >= d) = (1 - theta)^(d^c - (d-1)^c).

    This is the survival-consistent renewal probability: the chance that a
    sojourn already ``d`` periods old survives one more period. It is
    strictly decreasing in d for c > 1, strictly increasing for c < 1 and
    constant at 1 - theta for c = 1.
    """
    d_arr = _check_duration_args(theta, c, d)
    gap = d_arr**c - (d_arr - 1.0) ** c
    return np.exp(gap * math.log1p(-theta))[()]


def renewal_prob_shifted(theta: float, c: float, d):
    """Renewal probability under the zero-based duration convention.

    Equal to ``renewal_prob(theta, c, d + 1)``, i.e. the exponent is
    (d+1)^c - d^c. Kept separate because both indexing conventions are in
    circulation; filtering in this package uses :func:`renewal_prob`.
    """
    d_arr = _check_duration_args(theta, c, d)
    gap = (d_arr + 1.0) ** c - d_arr**c
    return np.exp(gap * math.log1p(-theta))[()]


_EXPECTED_DURATION_CAP = 10**6


def expected_duration(theta: float, c: float, tol: float = 1e-12) -> float:
    """Mean sojourn length, summed until the survival tail drops below tol.

    For c = 1 the distribution is geometric and the mean is 1 / theta.
    Raises :class:`NumericalError` when the tail has not vanished within
    a hard cap of 10^6 terms (very small theta with c well below 1).
    """
    _check_duration_args(theta, c, 1)
    if c == 1.0:
        return 1.0 / theta
    log_q = math.log1p(-theta)
    total = 0.0
    block = 10_000
    d0 = 1
    while d0 <= _EXPECTED_DURATION_CAP:
        d = np.arange(d0, min(d0 + block, _EXPECTED_DURATION_CAP + 1), dtype=float)
        surv = np.exp((d - 1.0) ** c * log_q)
        pmf = surv - np.exp(d**c * log_q)
        total += float(np.sum(d * pmf))
        if surv[-1] * (d[-1] + 1.0) < tol:
            return total
        d0 += block
    raise NumericalError(
        f"expected_duration did not converge within {_EXPECTED_DURATION_CAP} "
        f"terms (theta={theta}, c={c})"
    )


# ---------------------------------------------------------------------------
# Emissions and transitions
# ---------------------------------------------------------------------------

def _as_covariate_array(covariates, dim: int) -> np.ndarray:
    if isinstance(covariates, CovariateVector):
        x = covariates.as_array()
    else:
        x = np.asarray(covariates, dtype=float)
    if x.shape != (dim,):
        raise DimensionError("covariates", (dim,), x.shape)
    if not np.all(np.isfinite(x)):
        raise DomainError("covariates contain non-finite values")
    return x


def _as_demographics(params: ModelParams, demographics) -> np.ndarray:
    r = np.asarray(demographics, dtype=float)
    if r.shape != (params.demographic_dim,):
        raise DimensionError("demographics", (params.demographic_dim,), r.shape)
    return r


def _check_state(params: ModelParams, state: int) -> None:
    if not 0 <= state < params.n_states:
        raise DomainError(
            f"state index {state} out of range for {params.n_states} states"
        )


def emission_logits(
    params: ModelParams, state: int, demographics, covariates
) -> np.ndarray:
    """Per-page logits gamma + beta . x for one state and one step."""
    _check_state(params, state)
    r = _as_demographics(params, demographics)
    x = _as_covariate_array(covariates, params.covariate_dim)
    gamma = params.emission_intercepts[state] @ r
    beta = params.emission_coefficients[state] @ r
    return gamma + beta @ x


def log_emission_probs(
    params: ModelParams, state: int, demographics, covariates
) -> np.ndarray:
    """Log of the emission simplex over the nine page categories."""
    logits = emission_logits(params, state, demographics, covariates)
    shifted = logits - logits.max()
    return shifted - math.log(np.sum(np.exp(shifted)))


def emission_probs(
    params: ModelParams, state: int, demographics, covariates
) -> np.ndarray:
    """Emission simplex over pages; entries are positive and sum to 1."""
    return np.exp(log_emission_probs(params, state, demographics, covariates))


def log_transition_probs(params: ModelParams, state: int, d: int) -> np.ndarray:
    """Log transition distribution out of ``state`` after a sojourn of d.

    The logit for destination s' is mu[state, s'] + delta[state, s'] * d,
    normalised over all destinations different from ``state``. The entry
    for the origin itself is -inf (self transitions are impossible; they
    are absorbed into the duration distribution).
    """
    _check_state(params, state)
    if params.n_states < 2:
        raise ModelStructureError("transitions need at least two states")
    _check_d(d)
    logits = params.mu[state] + params.delta[state] * float(d)
    logits[state] = -np.inf
    m = logits.max()
    with np.errstate(invalid="ignore"):
        shifted = logits - m
    log_norm = math.log(np.sum(np.exp(shifted[np.isfinite(shifted)])))
    out = shifted - log_norm
    out[state] = -np.inf
    return out


def transition_probs(params: ModelParams, state: int, d: int) -> np.ndarray:
    """Transition simplex out of ``state``; the diagonal entry is 0."""
    return np.exp(log_transition_probs(params, state, d))
