"""Maximum a posteriori estimation and posterior sampling.

The model is fitted by minimising the negative log posterior (complete
likelihood convention) over an unconstrained reparameterisation:

* theta through a logit, c through a log,
* pi through a softmax with the first logit pinned to zero,
* mu and delta through their off-diagonal entries,
* emission intercept and coefficient tensors entry by entry.

Gradients come from automatic differentiation of a JAX twin of the
likelihood; :func:`check_gradient` verifies them against central finite
differences, and the test suite pins the JAX objective against the plain
NumPy likelihood. Optimisation itself is scipy's L-BFGS-B with restarts
drawn from the priors.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, gammaln

import jax

jax.config.update("jax_enable_x64", True)

import jax.numpy as jnp
from jax.scipy.special import logsumexp as jlogsumexp

from .errors import ConfigError, DimensionError, DomainError, EstimationError
from .inference import filter_init, filter_step, state_posterior
from .model import (
    COVARIATE_NAMES,
    PAGE_ORDER,
    ModelParams,
    Session,
)

logger = logging.getLogger(__name__)

__all__ = [
    "ParamLayout",
    "FitConfig",
    "FitResult",
    "RestartRecord",
    "RwChain",
    "pack_params",
    "unpack_params",
    "log_prior",
    "log_prior_parts",
    "neg_log_posterior",
    "fit_map",
    "check_gradient",
    "reorder_states",
    "permute_states",
    "sample_posterior_rw",
    "draw_prior_params",
    "prior_mode_params",
    "format_diagnostics",
]

_NEG = -1.0e30  # log-space sentinel for impossible entries inside JAX code

_PRIOR_SCALE = 5.0   # Normal(0, 5^2) on logit-scale coefficients
_C_PRIOR_MEAN = 1.0  # Normal(1, 1^2) on the duration shape c
_C_PRIOR_SCALE = 1.0


# ---------------------------------------------------------------------------
# Layout and packing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParamLayout:
    """Static shape information for the unconstrained vector."""

    n_states: int
    demographic_dim: int = 1
    covariate_names: tuple[str, ...] = COVARIATE_NAMES

    def __post_init__(self) -> None:
        if self.n_states < 2:
            raise ConfigError("n_states must be >= 2")
        if self.demographic_dim < 1:
            raise ConfigError("demographic_dim must be >= 1")
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))

    @property
    def page_count(self) -> int:
        return len(PAGE_ORDER)

    @property
    def covariate_dim(self) -> int:
        return len(self.covariate_names)

    @property
    def dim(self) -> int:
        k, g = self.n_states, self.demographic_dim
        return (
            (k - 1)
            + 2 * k
            + 2 * k * (k - 1)
            + k * self.page_count * g
            + k * self.page_count * self.covariate_dim * g
        )

    @staticmethod
    def from_params(params: ModelParams) -> "ParamLayout":
        return ParamLayout(
            n_states=params.n_states,
            demographic_dim=params.demographic_dim,
            covariate_names=params.covariate_names,
        )

    @staticmethod
    def from_sessions(sessions, n_states: int) -> "ParamLayout":
        if not sessions:
            raise ConfigError("need at least one session")
        return ParamLayout(
            n_states=n_states,
            demographic_dim=int(sessions[0].demographics.shape[0]),
        )


def _offdiag_indices(k: int):
    rows, cols = np.nonzero(~np.eye(k, dtype=bool))
    return rows, cols


def pack_params(params: ModelParams) -> np.ndarray:
    """Flatten a ModelParams into the unconstrained vector."""
    k = params.n_states
    rows, cols = _offdiag_indices(k)
    with np.errstate(divide="ignore"):
        log_pi = np.log(params.pi)
    pieces = [
        log_pi[1:] - log_pi[0],
        np.log(params.theta) - np.log1p(-params.theta),
        np.log(params.c),
        params.mu[rows, cols],
        params.delta[rows, cols],
        params.emission_intercepts.ravel(),
        params.emission_coefficients.ravel(),
    ]
    return np.concatenate(pieces)


def _split_vector(vector: np.ndarray, layout: ParamLayout):
    k, g = layout.n_states, layout.demographic_dim
    p, cdim = layout.page_count, layout.covariate_dim
    sizes = [k - 1, k, k, k * (k - 1), k * (k - 1), k * p * g, k * p * cdim * g]
    if vector.shape != (sum(sizes),):
        raise DimensionError("vector", (sum(sizes),), vector.shape)
    out = []
    at = 0
    for size in sizes:
        out.append(vector[at : at + size])
        at += size
    return out


def unpack_params(vector, layout: ParamLayout) -> ModelParams:
    """Rebuild a valid ModelParams from the unconstrained vector.

    theta and c are clipped a hair inside their open domains so that
    saturated optimiser iterates still produce constructible parameters.
    """
    vector = np.asarray(vector, dtype=float)
    pi_free, u_theta, u_c, mu_off, delta_off, gamma_flat, beta_flat = _split_vector(
        vector, layout
    )
    k, g = layout.n_states, layout.demographic_dim
    p, cdim = layout.page_count, layout.covariate_dim

    logits = np.concatenate([[0.0], pi_free])
    logits -= logits.max()
    pi = np.exp(logits)
    pi /= pi.sum()

    theta = np.clip(expit(u_theta), 1e-300, 1.0 - 1e-15)
    c = np.clip(np.exp(u_c), 1e-300, 1e300)

    rows, cols = _offdiag_indices(k)
    mu = np.zeros((k, k))
    mu[rows, cols] = mu_off
    delta = np.zeros((k, k))
    delta[rows, cols] = delta_off

    return ModelParams(
        n_states=k,
        pi=pi,
        theta=theta,
        c=c,
        mu=mu,
        delta=delta,
        emission_intercepts=gamma_flat.reshape(k, p, g),
        emission_coefficients=beta_flat.reshape(k, p, cdim, g),
        covariate_names=layout.covariate_names,
    )


# ---------------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------------

def _norm_logpdf(x, mean: float, scale: float):
    z = (np.asarray(x, dtype=float) - mean) / scale
    return -0.5 * z * z - math.log(scale) - 0.5 * math.log(2.0 * math.pi)


def log_prior_parts(theta, c, mu, delta, intercepts, coefficients, pi=None) -> float:
    """Joint log prior density evaluated on the constrained scale.

    pi carries a flat Dirichlet (its density is the constant (K-1)! on the
    simplex), theta independent U(0,1), c Normal(1, 1), and every logit
    coefficient Normal(0, 5). Values outside support yield -inf.
    """
    theta = np.asarray(theta, dtype=float)
    c = np.asarray(c, dtype=float)
    if np.any(theta <= 0.0) or np.any(theta >= 1.0):
        return -np.inf
    if np.any(c <= 0.0):
        return -np.inf
    total = 0.0
    if pi is not None:
        pi = np.asarray(pi, dtype=float)
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-9:
            return -np.inf
        total += float(gammaln(len(pi)))
    total += float(np.sum(_norm_logpdf(c, _C_PRIOR_MEAN, _C_PRIOR_SCALE)))
    k = np.asarray(mu).shape[0]
    rows, cols = _offdiag_indices(k)
    total += float(np.sum(_norm_logpdf(np.asarray(mu)[rows, cols], 0.0, _PRIOR_SCALE)))
    total += float(
        np.sum(_norm_logpdf(np.asarray(delta)[rows, cols], 0.0, _PRIOR_SCALE))
    )
    total += float(np.sum(_norm_logpdf(intercepts, 0.0, _PRIOR_SCALE)))
    total += float(np.sum(_norm_logpdf(coefficients, 0.0, _PRIOR_SCALE)))
    return total


def log_prior(params: ModelParams) -> float:
    """Log prior of a full parameter set (constrained scale, no Jacobian)."""
    return log_prior_parts(
        params.theta,
        params.c,
        params.mu,
        params.delta,
        params.emission_intercepts,
        params.emission_coefficients,
        pi=params.pi,
    )


def neg_log_posterior(params: ModelParams, sessions) -> float:
    """Negative log posterior under the complete likelihood convention."""
    from .inference import log_likelihood_complete

    total = log_prior(params)
    for session in sessions:
        total += log_likelihood_complete(params, session)
    return -total


# ---------------------------------------------------------------------------
# JAX twin of the objective
# ---------------------------------------------------------------------------

def _build_batch(sessions, layout: ParamLayout):
    """Pad sessions into dense arrays for the JAX likelihood."""
    n = len(sessions)
    lengths = np.array([len(s) for s in sessions], dtype=np.int64)
    t_max = int(lengths.max())
    t_max = max(4, ((t_max + 7) // 8) * 8)  # bucket to limit recompilation
    pages = np.zeros((n, t_max), dtype=np.int64)
    cov = np.zeros((n, t_max, layout.covariate_dim))
    demo = np.zeros((n, layout.demographic_dim))
    for i, s in enumerate(sessions):
        if s.demographics.shape[0] != layout.demographic_dim:
            raise DimensionError(
                f"session {s.session_id}: demographics",
                (layout.demographic_dim,),
                s.demographics.shape,
            )
        li = len(s)
        pages[i, :li] = s.page_indices()
        cov[i, :li] = s.covariate_matrix()
        demo[i] = s.demographics
    return (
        jnp.asarray(pages),
        jnp.asarray(cov),
        jnp.asarray(demo),
        jnp.asarray(lengths),
    )


def _jax_log1mexp(x):
    """log(1 - exp(x)) for x < 0, branch-safe for gradients."""
    cut = -math.log(2.0)
    x_low = jnp.where(x < cut, x, -1.0)
    x_high = jnp.where(x >= cut, x, -1.0)
    return jnp.where(
        x < cut, jnp.log1p(-jnp.exp(x_low)), jnp.log(-jnp.expm1(x_high))
    )


def _jax_unpack(vector, k: int, p: int, cdim: int, g: int):
    sizes = [k - 1, k, k, k * (k - 1), k * (k - 1), k * p * g, k * p * cdim * g]
    parts = []
    at = 0
    for size in sizes:
        parts.append(vector[at : at + size])
        at += size
    pi_free, u_theta, u_c, mu_off, delta_off, gamma_flat, beta_flat = parts

    logits = jnp.concatenate([jnp.zeros(1), pi_free])
    log_pi = logits - jlogsumexp(logits)
    theta = jax.nn.sigmoid(u_theta)
    log_one_minus_theta = -jax.nn.softplus(u_theta)  # log(1 - theta), stable
    c = jnp.exp(u_c)

    rows, cols = _offdiag_indices(k)
    mu = jnp.zeros((k, k)).at[rows, cols].set(mu_off)
    delta = jnp.zeros((k, k)).at[rows, cols].set(delta_off)
    gamma = gamma_flat.reshape(k, p, g)
    beta = beta_flat.reshape(k, p, cdim, g)
    return log_pi, theta, log_one_minus_theta, c, mu_off, delta_off, mu, delta, gamma, beta


def _jax_duration_tables(log_one_minus_theta, c, t_max: int):
    d = jnp.arange(1, t_max + 1, dtype=jnp.float64)
    dc = d[None, :] ** c[:, None]
    dm1 = d - 1.0
    dm1_safe = jnp.where(dm1 > 0.0, dm1, 1.0)
    dm1c = jnp.where(dm1 > 0.0, dm1_safe[None, :] ** c[:, None], 0.0)
    log_surv = dm1c * log_one_minus_theta[:, None]
    gap = (dc - dm1c) * log_one_minus_theta[:, None]
    log_pmf = log_surv + _jax_log1mexp(gap)
    return log_pmf, log_surv


def _jax_transition_tables(mu, delta, t_max: int):
    k = mu.shape[0]
    d = jnp.arange(1, t_max + 1, dtype=jnp.float64)
    logits = mu[:, :, None] + delta[:, :, None] * d[None, None, :]
    eye = jnp.eye(k, dtype=bool)[:, :, None]
    logits = jnp.where(eye, _NEG, logits)
    return logits - jlogsumexp(logits, axis=1, keepdims=True)


def _jax_session_loglik(
    log_pi, log_pmf, log_q, gamma, beta, pages, cov, demo, length
):
    """Complete-convention log likelihood of one padded session."""
    t_max = pages.shape[0]
    k = log_pi.shape[0]

    gam = jnp.einsum("spg,g->sp", gamma, demo)
    bet = jnp.einsum("spcg,g->spc", beta, demo)
    logits = gam[None, :, :] + jnp.einsum("spc,tc->tsp", bet, cov)
    log_emis_all = logits - jlogsumexp(logits, axis=2, keepdims=True)
    log_emis = jnp.take_along_axis(
        log_emis_all, pages[:, None, None], axis=2
    )[:, :, 0]
    steps = jnp.arange(t_max)
    log_emis = jnp.where(steps[:, None] < length, log_emis, 0.0)
    cum = jnp.concatenate([jnp.zeros((1, k)), jnp.cumsum(log_emis, axis=0)])

    ds = jnp.arange(1, t_max + 1)
    log_q_by_d = jnp.moveaxis(log_q, 2, 0)  # (T, K_from, K_to)

    inflow0 = jnp.full((t_max + 1, k), _NEG).at[1].set(log_pi)

    def step(inflow, u):
        idx = u - ds
        valid = idx >= 1
        prev = jnp.take(inflow, jnp.clip(idx, 0, t_max), axis=0)
        seg = cum[u - 1][None, :] - jnp.take(
            cum, jnp.clip(u - 1 - ds, 0, t_max), axis=0
        )
        base = prev + seg + log_pmf.T  # (T, K)
        base = jnp.where(valid[:, None], base, _NEG)
        new = jlogsumexp(base[:, :, None] + log_q_by_d, axis=(0, 1))
        return inflow.at[u].set(new), None

    inflow, _ = jax.lax.scan(step, inflow0, jnp.arange(2, t_max + 1))

    starts = length - ds + 1
    valid = ds <= length
    seg = jnp.take(cum, length, axis=0)[None, :] - jnp.take(
        cum, jnp.clip(length - ds, 0, t_max), axis=0
    )
    terms = jnp.take(inflow, jnp.clip(starts, 0, t_max), axis=0) + seg + log_pmf.T
    terms = jnp.where(valid[:, None], terms, _NEG)
    return jlogsumexp(terms)


def _jax_log_prior(c, mu_off, delta_off, gamma, beta, k: int):
    def normal(x, mean, scale):
        z = (x - mean) / scale
        return jnp.sum(-0.5 * z * z - math.log(scale) - 0.5 * math.log(2 * math.pi))

    total = gammaln(k)  # flat Dirichlet normalising constant
    total += normal(c, _C_PRIOR_MEAN, _C_PRIOR_SCALE)
    total += normal(mu_off, 0.0, _PRIOR_SCALE)
    total += normal(delta_off, 0.0, _PRIOR_SCALE)
    total += normal(gamma, 0.0, _PRIOR_SCALE)
    total += normal(beta, 0.0, _PRIOR_SCALE)
    return total


@lru_cache(maxsize=None)
def _objective_fns(k: int, p: int, cdim: int, g: int):
    """Jitted value and value-and-grad of the negative log posterior."""

    def objective(vector, pages, cov, demo, lengths):
        (
            log_pi,
            _theta,
            log_one_minus_theta,
            c,
            mu_off,
            delta_off,
            mu,
            delta,
            gamma,
            beta,
        ) = _jax_unpack(vector, k, p, cdim, g)
        t_max = pages.shape[1]
        log_pmf, _ = _jax_duration_tables(log_one_minus_theta, c, t_max)
        log_q = _jax_transition_tables(mu, delta, t_max)
        lls = jax.vmap(
            lambda pg, cv, dm, ln: _jax_session_loglik(
                log_pi, log_pmf, log_q, gamma, beta, pg, cv, dm, ln
            )
        )(pages, cov, demo, lengths)
        prior = _jax_log_prior(c, mu_off, delta_off, gamma, beta, k)
        return -(jnp.sum(lls) + prior)

    value = jax.jit(objective)
    value_and_grad = jax.jit(jax.value_and_grad(objective))
    return value, value_and_grad


def _objective_for(sessions, layout: ParamLayout):
    batch = _build_batch(sessions, layout)
    value, value_and_grad = _objective_fns(
        layout.n_states, layout.page_count, layout.covariate_dim,
        layout.demographic_dim,
    )

    def f(vector: np.ndarray) -> float:
        return float(value(jnp.asarray(vector), *batch))

    def f_and_g(vector: np.ndarray):
        val, grad = value_and_grad(jnp.asarray(vector), *batch)
        return float(val), np.asarray(grad)

    return f, f_and_g


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FitConfig:
    """Knobs for MAP fitting.

    ``restarts`` optimisation runs are started from draws of the priors
    (the first start sits at the prior mode); the best final objective
    wins. Convergence follows L-BFGS-B: relative objective change below
    ``tol`` or projected gradient below ``grad_tol``, capped at
    ``max_iterations`` iterations.
    """

    n_states: int
    restarts: int = 10
    max_iterations: int = 2000
    tol: float = 1e-8
    grad_tol: float = 1e-6
    seed: int = 0
    optimizer: str = "l-bfgs-b"

    def __post_init__(self) -> None:
        if self.n_states < 2:
            raise ConfigError("n_states must be >= 2")
        if self.restarts < 1:
            raise ConfigError("restarts must be >= 1")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if self.optimizer != "l-bfgs-b":
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


@dataclass(frozen=True)
class RestartRecord:
    index: int
    objective: float
    n_iterations: int
    grad_norm: float
    converged: bool
    message: str


@dataclass(frozen=True, eq=False)
class FitResult:
    params: ModelParams
    objective: float
    grad_norm: float
    n_iterations: int
    converged: bool
    restart_table: tuple[RestartRecord, ...]
    n_sessions: int


def prior_mode_params(layout: ParamLayout) -> ModelParams:
    """All coefficients at their prior means; a neutral starting point."""
    k, g = layout.n_states, layout.demographic_dim
    return ModelParams(
        n_states=k,
        pi=np.full(k, 1.0 / k),
        theta=np.full(k, 0.5),
        c=np.ones(k),
        mu=np.zeros((k, k)),
        delta=np.zeros((k, k)),
        emission_intercepts=np.zeros((k, layout.page_count, g)),
        emission_coefficients=np.zeros(
            (k, layout.page_count, layout.covariate_dim, g)
        ),
        covariate_names=layout.covariate_names,
    )


def draw_prior_params(rng: np.random.Generator, layout: ParamLayout) -> ModelParams:
    """One draw from the parameter priors (c truncated to be positive)."""
    k, g = layout.n_states, layout.demographic_dim
    p, cdim = layout.page_count, layout.covariate_dim
    c = rng.normal(_C_PRIOR_MEAN, _C_PRIOR_SCALE, k)
    while np.any(c <= 0.0):
        bad = c <= 0.0
        c[bad] = rng.normal(_C_PRIOR_MEAN, _C_PRIOR_SCALE, int(bad.sum()))
    mu = rng.normal(0.0, _PRIOR_SCALE, (k, k))
    delta = rng.normal(0.0, _PRIOR_SCALE, (k, k))
    return ModelParams(
        n_states=k,
        pi=rng.dirichlet(np.ones(k)),
        theta=rng.uniform(0.0, 1.0, k).clip(1e-6, 1.0 - 1e-6),
        c=c,
        mu=mu,
        delta=delta,
        emission_intercepts=rng.normal(0.0, _PRIOR_SCALE, (k, p, g)),
        emission_coefficients=rng.normal(0.0, _PRIOR_SCALE, (k, p, cdim, g)),
        covariate_names=layout.covariate_names,
    )


def permute_states(params: ModelParams, perm) -> ModelParams:
    """Relabel states by ``perm``: new state i is old state perm[i]."""
    perm = np.asarray(perm, dtype=int)
    if sorted(perm.tolist()) != list(range(params.n_states)):
        raise DomainError("perm must be a permutation of the state indices")
    return ModelParams(
        n_states=params.n_states,
        pi=params.pi[perm],
        theta=params.theta[perm],
        c=params.c[perm],
        mu=params.mu[np.ix_(perm, perm)],
        delta=params.delta[np.ix_(perm, perm)],
        emission_intercepts=params.emission_intercepts[perm],
        emission_coefficients=params.emission_coefficients[perm],
        covariate_names=params.covariate_names,
    )


def reorder_states(params: ModelParams) -> ModelParams:
    """Canonical state order: ascending c, ties broken by ascending theta.

    Relabelling is a likelihood-preserving symmetry; fixing an order makes
    fitted parameters comparable across runs.
    """
    perm = np.lexsort((params.theta, params.c))
    return permute_states(params, perm)


def _expected_state_occupancy(params: ModelParams, sessions) -> np.ndarray:
    totals = np.zeros(params.n_states)
    for session in sessions:
        state = filter_init(params, session.demographics)
        for t in range(len(session)):
            state = filter_step(
                params, state, session.pages[t], session.covariates[t]
            )
            totals += state_posterior(state)
    return totals


def fit_map(sessions, config: FitConfig, init_params: ModelParams | None = None) -> FitResult:
    """Fit by MAP with multiple restarts; states are reordered on return.

    ``init_params`` adds one extra warm start ahead of the prior-mode
    start and the prior draws.
    """
    sessions = list(sessions)
    if not sessions:
        raise ConfigError("need at least one session to fit")
    layout = ParamLayout.from_sessions(sessions, config.n_states)
    _, f_and_g = _objective_for(sessions, layout)

    rng = np.random.default_rng(config.seed)
    starts: list[np.ndarray] = []
    if init_params is not None:
        starts.append(pack_params(init_params))
    starts.append(pack_params(prior_mode_params(layout)))
    while len(starts) < config.restarts + (init_params is not None):
        starts.append(pack_params(draw_prior_params(rng, layout)))

    records = []
    best = None
    for i, x0 in enumerate(starts):
        val0, _ = f_and_g(x0)
        if not np.isfinite(val0):
            records.append(
                RestartRecord(i, float("inf"), 0, float("nan"), False,
                              "non-finite objective at start")
            )
            continue
        res = minimize(
            f_and_g,
            x0,
            jac=True,
            method="L-BFGS-B",
            options={
                "maxiter": config.max_iterations,
                "ftol": config.tol,
                "gtol": config.grad_tol,
            },
        )
        grad_norm = float(np.max(np.abs(res.jac)))
        message = res.message if isinstance(res.message, str) else str(res.message)
        records.append(
            RestartRecord(i, float(res.fun), int(res.nit), grad_norm,
                          bool(res.success), message)
        )
        logger.info(
            "restart %d: objective %.6f after %d iterations (%s)",
            i, res.fun, res.nit, message,
        )
        if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise EstimationError("all restarts failed to produce a finite objective")

    params = reorder_states(unpack_params(np.asarray(best.x), layout))
    occupancy = _expected_state_occupancy(params, sessions)
    for s, occ in enumerate(occupancy):
        if occ < 1.0:
            warnings.warn(
                f"state {s} is degenerate: expected occupancy {occ:.3g} "
                "observations across the training set",
                stacklevel=2,
            )
    return FitResult(
        params=params,
        objective=float(best.fun),
        grad_norm=float(np.max(np.abs(best.jac))),
        n_iterations=int(best.nit),
        converged=bool(best.success),
        restart_table=tuple(records),
        n_sessions=len(sessions),
    )


def check_gradient(params: ModelParams, sessions, step: float = 1e-5) -> float:
    """Max relative error between the AD gradient and central differences.

    Differences are taken on the unconstrained scale; errors are relative
    to max(1, |gradient|) per coordinate.
    """
    layout = ParamLayout.from_params(params)
    f, f_and_g = _objective_for(list(sessions), layout)
    x0 = pack_params(params)
    _, grad = f_and_g(x0)
    worst = 0.0
    for j in range(x0.size):
        forward = x0.copy()
        forward[j] += step
        backward = x0.copy()
        backward[j] -= step
        fd = (f(forward) - f(backward)) / (2.0 * step)
        scale = max(1.0, abs(grad[j]), abs(fd))
        worst = max(worst, abs(fd - grad[j]) / scale)
    return worst


def format_diagnostics(result: FitResult) -> str:
    """Human-readable fit report: restart table plus the winning summary."""
    lines = [
        "restart,objective,iterations,grad_norm,converged,message",
    ]
    for r in result.restart_table:
        lines.append(
            f"{r.index},{r.objective:.10g},{r.n_iterations},{r.grad_norm:.3g},"
            f"{int(r.converged)},{r.message}"
        )
    lines.append("")
    lines.append(f"best_objective,{result.objective:.10g}")
    lines.append(f"best_grad_norm,{result.grad_norm:.3g}")
    lines.append(f"best_iterations,{result.n_iterations}")
    lines.append(f"converged,{int(result.converged)}")
    lines.append(f"n_sessions,{result.n_sessions}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Random-walk posterior sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RwChain:
    """Output of :func:`sample_posterior_rw`.

    ``draws`` are reordered parameter sets; ``vectors`` the raw chain on
    the unconstrained scale (one row per kept draw). The acceptance rate
    counts accepted proposals over the whole chain. Interval estimates
    from a single short chain are exploratory, not calibrated.
    """

    draws: tuple[ModelParams, ...]
    vectors: np.ndarray
    acceptance_rate: float
    log_densities: np.ndarray


def _log_jacobian(vector: np.ndarray, layout: ParamLayout) -> float:
    """log |d(constrained)/d(unconstrained)| of the packing transform."""
    pi_free, u_theta, u_c, *_ = _split_vector(vector, layout)
    logits = np.concatenate([[0.0], pi_free])
    logits -= logits.max()
    pi = np.exp(logits)
    pi /= pi.sum()
    theta = expit(u_theta)
    jac = float(np.sum(np.log(theta) + np.log1p(-theta)))
    jac += float(np.sum(u_c))        # d exp(u) / du = exp(u)
    jac += float(np.sum(np.log(pi)))  # pinned softmax onto the simplex
    return jac


def sample_posterior_rw(
    sessions,
    config: FitConfig,
    chain_length: int,
    step_size: float = 0.02,
    init_params: ModelParams | None = None,
    thin: int = 1,
    target_log_density=None,
) -> RwChain:
    """Random-walk Metropolis on the unconstrained scale.

    The target is the posterior (complete likelihood times priors times
    the transform Jacobian). ``target_log_density`` replaces it entirely
    when supplied, which the tests use against quadrature oracles.
    """
    if chain_length < 1:
        raise ConfigError("chain_length must be >= 1")
    if thin < 1:
        raise ConfigError("thin must be >= 1")
    sessions = [] if sessions is None else list(sessions)
    if sessions:
        layout = ParamLayout.from_sessions(sessions, config.n_states)
    elif init_params is not None:
        layout = ParamLayout.from_params(init_params)
    else:
        layout = ParamLayout(n_states=config.n_states)

    if target_log_density is None:
        f, _ = _objective_for(sessions, layout) if sessions else (None, None)

        def target(v: np.ndarray) -> float:
            loglik_prior = -(f(v) if f is not None else 0.0)
            return loglik_prior + _log_jacobian(v, layout)

    else:
        target = target_log_density

    rng = np.random.default_rng(config.seed)
    current = pack_params(
        init_params if init_params is not None else prior_mode_params(layout)
    )
    current_density = float(target(current))
    if not np.isfinite(current_density):
        raise EstimationError("chain initialised at zero posterior density")

    kept_vectors = []
    kept_density = []
    accepted = 0
    for it in range(chain_length):
        proposal = current + rng.normal(0.0, step_size, current.shape)
        proposal_density = float(target(proposal))
        if math.log(rng.random()) < proposal_density - current_density:
            current = proposal
            current_density = proposal_density
            accepted += 1
        if (it + 1) % thin == 0:
            kept_vectors.append(current.copy())
            kept_density.append(current_density)

    draws = tuple(
        reorder_states(unpack_params(v, layout)) for v in kept_vectors
    )
    return RwChain(
        draws=draws,
        vectors=np.asarray(kept_vectors),
        acceptance_rate=accepted / chain_length,
        log_densities=np.asarray(kept_density),
    )
