"""Reference models the duration-dependent model is compared against.

Four baselines, in decreasing order of structure:

* a hidden Markov model with the same covariate-aware emissions but
  geometric state lifetimes and duration-free transitions (this is
  exactly what the main model collapses to when every shape parameter
  is 1 and every duration slope is 0);
* a static mixture, the same thing with the state frozen for the whole
  session;
* a first-order Markov chain on the observed pages;
* a logistic regression on the step covariates plus the previous page.

Each comes with a fitting routine and a step scorer that mirrors the
main model's convention: the score for step t is the predicted
probability that step t is the terminal Exit given everything observed
before it.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import jax
import jax.numpy as jnp
import numpy as np
import scipy.optimize
from scipy.special import expit, logsumexp

from .errors import DimensionError, DomainError, EstimationError
from .estimation import ParamLayout, _build_batch, _PRIOR_SCALE
from .model import (
    COVARIATE_NAMES,
    ModelParams,
    PageCategory,
    Session,
)

__all__ = [
    "HmmParams",
    "HmmFitConfig",
    "hmm_log_likelihood",
    "hmm_fit",
    "static_hmm_fit",
    "hmm_exit_scorer",
    "reduce_to_hmm",
    "MarkovChainParams",
    "markov_fit",
    "markov_exit_scorer",
    "LogRegParams",
    "logreg_fit",
    "logreg_exit_scorer",
    "logreg_features",
]

_N_PAGES = len(PageCategory)
_EXIT = PageCategory.EXIT.index


# ---------------------------------------------------------------------------
# Covariate-emission HMM (geometric lifetimes)
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class HmmParams:
    """Hidden Markov baseline with the same emission family.

    ``transition`` is a full row-stochastic matrix; self-transitions are
    allowed (they are the whole point: state lifetimes are geometric).
    ``static=True`` marks a mixture fit whose transition matrix is the
    identity.
    """

    n_states: int
    pi: np.ndarray
    transition: np.ndarray
    emission_intercepts: np.ndarray
    emission_coefficients: np.ndarray
    covariate_names: tuple = COVARIATE_NAMES
    static: bool = False

    def __post_init__(self) -> None:
        k = self.n_states
        if k < 1:
            raise DomainError("n_states must be >= 1")
        g = np.asarray(self.emission_intercepts).shape[-1]
        expected = {
            "pi": (k,),
            "transition": (k, k),
            "emission_intercepts": (k, _N_PAGES, g),
            "emission_coefficients": (k, _N_PAGES, len(self.covariate_names), g),
        }
        for name, shape in expected.items():
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise DimensionError(name, shape, arr.shape)
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"{name} must be finite")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if abs(self.pi.sum() - 1.0) > 1e-12 or np.any(self.pi < 0):
            raise DomainError("pi must be a probability vector")
        rows = self.transition.sum(axis=1)
        if np.any(np.abs(rows - 1.0) > 1e-12) or np.any(self.transition < 0):
            raise DomainError("transition rows must be probability vectors")

    @property
    def demographic_dim(self) -> int:
        return self.emission_intercepts.shape[-1]


def _hmm_log_emissions(params: HmmParams, session: Session) -> np.ndarray:
    """(T, K) log probability of each observed page under each state."""
    r = session.demographics
    if r.shape != (params.demographic_dim,):
        raise DimensionError("demographics", (params.demographic_dim,), r.shape)
    x = session.covariate_matrix()
    base = params.emission_intercepts @ r
    slope = params.emission_coefficients @ r
    logits = base[:, None, :] + np.einsum("koc,tc->kto", slope, x)
    logits -= logits.max(axis=2, keepdims=True)
    logp = logits - np.log(np.exp(logits).sum(axis=2, keepdims=True))
    idx = session.page_indices()
    return logp[:, np.arange(len(session)), idx].T


def hmm_log_likelihood(params: HmmParams, session: Session) -> float:
    """Standard forward recursion in log space."""
    log_emis = _hmm_log_emissions(params, session)
    with np.errstate(divide="ignore"):
        log_pi = np.log(params.pi)
        log_a = np.log(params.transition)
    alpha = log_pi + log_emis[0]
    for t in range(1, len(session)):
        alpha = logsumexp(alpha[:, None] + log_a, axis=0) + log_emis[t]
    return float(logsumexp(alpha))


def hmm_exit_scorer(params: HmmParams):
    """Step scorer: filtered predictive probability that step t is Exit."""

    def score(session: Session) -> np.ndarray:
        r = session.demographics
        x = session.covariate_matrix()
        base = params.emission_intercepts @ r
        slope = params.emission_coefficients @ r
        logits = base[:, None, :] + np.einsum("koc,tc->kto", slope, x)
        logits -= logits.max(axis=2, keepdims=True)
        probs = np.exp(logits)
        probs /= probs.sum(axis=2, keepdims=True)  # (K, T, O)
        idx = session.page_indices()
        out = np.empty(len(session))
        belief = params.pi.copy()
        for t in range(len(session)):
            pred = belief if t == 0 else belief @ params.transition
            out[t] = float(pred @ probs[:, t, _EXIT])
            post = pred * probs[:, t, idx[t]]
            total = post.sum()
            if total <= 0.0:
                # impossible prefix under this fit; fall back to the prior
                post = pred
                total = pred.sum()
            belief = post / total
        return out

    return score


def reduce_to_hmm(params: ModelParams) -> HmmParams:
    """Rewrite a duration-free main model as the equivalent HMM.

    Requires every shape parameter to be 1 and every duration slope 0;
    then staying probabilities are geometric and the chain with
    ``a[s,s] = 1 - theta_s`` and ``a[s,s'] = theta_s * q[s,s']`` assigns
    identical likelihood to every observed sequence.
    """
    if not np.allclose(params.c, 1.0, atol=1e-12):
        raise DomainError("reduction requires every c equal to 1")
    if np.any(params.delta[~np.eye(params.n_states, dtype=bool)] != 0.0):
        raise DomainError("reduction requires zero duration slopes")
    k = params.n_states
    a = np.zeros((k, k))
    for s in range(k):
        logits = params.mu[s].copy()
        logits[s] = -np.inf
        logits -= logits[np.isfinite(logits)].max()
        q = np.exp(logits)
        q[s] = 0.0
        q /= q.sum()
        a[s] = params.theta[s] * q
        a[s, s] = 1.0 - params.theta[s]
    return HmmParams(
        n_states=k,
        pi=params.pi.copy(),
        transition=a,
        emission_intercepts=params.emission_intercepts.copy(),
        emission_coefficients=params.emission_coefficients.copy(),
        covariate_names=params.covariate_names,
    )


# -- fitting ----------------------------------------------------------------

@dataclass(frozen=True)
class HmmFitConfig:
    n_states: int
    restarts: int = 10
    max_iterations: int = 2000
    tol: float = 1e-8
    seed: int = 0
    static: bool = False


def _hmm_dim(k: int, g: int, static: bool) -> int:
    base = (k - 1) + k * _N_PAGES * g + k * _N_PAGES * len(COVARIATE_NAMES) * g
    return base if static else base + k * (k - 1)


def _hmm_unpack_np(vec: np.ndarray, k: int, g: int, static: bool):
    c = len(COVARIATE_NAMES)
    pos = 0
    pi_free = vec[pos : pos + k - 1]; pos += k - 1
    if static:
        a = np.eye(k)
    else:
        a_free = vec[pos : pos + k * (k - 1)].reshape(k, k - 1); pos += k * (k - 1)
        logits = np.concatenate([np.zeros((k, 1)), a_free], axis=1)
        logits -= logits.max(axis=1, keepdims=True)
        a = np.exp(logits)
        a /= a.sum(axis=1, keepdims=True)
    gamma = vec[pos : pos + k * _N_PAGES * g].reshape(k, _N_PAGES, g)
    pos += k * _N_PAGES * g
    beta = vec[pos:].reshape(k, _N_PAGES, c, g)
    log_pi = np.concatenate([[0.0], pi_free])
    log_pi -= log_pi.max()
    pi = np.exp(log_pi)
    pi /= pi.sum()
    return pi, a, gamma, beta


def _hmm_params_from_vector(vec, k, g, static) -> HmmParams:
    pi, a, gamma, beta = _hmm_unpack_np(np.asarray(vec, dtype=float), k, g, static)
    return HmmParams(
        n_states=k,
        pi=pi,
        transition=a,
        emission_intercepts=gamma,
        emission_coefficients=beta,
        static=static,
    )


@lru_cache(maxsize=8)
def _hmm_objective_fns(k: int, g: int, c: int, static: bool):
    def unpack(vec):
        pos = 0
        pi_free = vec[pos : pos + k - 1]; pos += k - 1
        log_pi = jnp.concatenate([jnp.zeros(1), pi_free])
        log_pi = jax.nn.log_softmax(log_pi)
        if static:
            log_a = jnp.where(jnp.eye(k, dtype=bool), 0.0, -jnp.inf)
        else:
            a_free = vec[pos : pos + k * (k - 1)].reshape(k, k - 1)
            pos += k * (k - 1)
            logits = jnp.concatenate([jnp.zeros((k, 1)), a_free], axis=1)
            log_a = jax.nn.log_softmax(logits, axis=1)
        gamma = vec[pos : pos + k * _N_PAGES * g].reshape(k, _N_PAGES, g)
        pos += k * _N_PAGES * g
        beta = vec[pos:].reshape(k, _N_PAGES, c, g)
        return log_pi, log_a, gamma, beta

    def session_loglik(log_pi, log_a, gamma, beta, pages, covs, demo, length):
        tmax = pages.shape[0]
        base = gamma @ demo
        slope = beta @ demo
        logits = base[:, None, :] + jnp.einsum("koc,tc->kto", slope, covs)
        log_probs = jax.nn.log_softmax(logits, axis=2)
        log_emis = jnp.take_along_axis(
            log_probs, pages[None, :, None], axis=2
        )[:, :, 0].T  # (tmax, K)

        alpha0 = log_pi + log_emis[0]

        def step(alpha, t):
            nxt = jax.scipy.special.logsumexp(
                alpha[:, None] + log_a, axis=0
            ) + log_emis[t]
            alpha = jnp.where(t < length, nxt, alpha)
            return alpha, None

        alpha, _ = jax.lax.scan(step, alpha0, jnp.arange(1, tmax))
        return jax.scipy.special.logsumexp(alpha)

    def objective(vec, pages, covs, demos, lengths):
        log_pi, log_a, gamma, beta = unpack(vec)
        ll = jax.vmap(
            lambda p, x, r, n: session_loglik(log_pi, log_a, gamma, beta, p, x, r, n)
        )(pages, covs, demos, lengths).sum()
        prior = -0.5 * jnp.sum(gamma**2) / _PRIOR_SCALE**2
        prior += -0.5 * jnp.sum(beta**2) / _PRIOR_SCALE**2
        return -(ll + prior)

    return jax.jit(objective), jax.jit(jax.value_and_grad(objective))


def _fit_hmm_family(sessions, config: HmmFitConfig) -> HmmParams:
    sessions = list(sessions)
    if not sessions:
        raise EstimationError("no sessions to fit")
    g = sessions[0].demographics.shape[0]
    k = config.n_states
    pages, covs, demos, lengths = _build_batch(
        sessions, ParamLayout(n_states=k, demographic_dim=g)
    )
    _, value_and_grad = _hmm_objective_fns(
        k, g, len(COVARIATE_NAMES), config.static
    )

    def f_and_g(vec):
        v, gvec = value_and_grad(jnp.asarray(vec), pages, covs, demos, lengths)
        return float(v), np.asarray(gvec)

    rng = np.random.default_rng(config.seed)
    dim = _hmm_dim(k, g, config.static)
    starts = [np.zeros(dim)]
    for _ in range(max(config.restarts - 1, 0)):
        starts.append(rng.normal(0.0, 0.5, dim))

    best_vec, best_val = None, np.inf
    for start in starts:
        res = scipy.optimize.minimize(
            f_and_g,
            start,
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": config.max_iterations, "ftol": config.tol},
        )
        if np.isfinite(res.fun) and res.fun < best_val:
            best_val = float(res.fun)
            best_vec = np.asarray(res.x)
    if best_vec is None:
        raise EstimationError("every restart diverged")
    return _hmm_params_from_vector(best_vec, k, g, config.static)


def hmm_fit(sessions, config: HmmFitConfig) -> HmmParams:
    """Penalized maximum likelihood fit of the geometric-lifetime HMM."""
    if config.static:
        raise DomainError("use static_hmm_fit for the mixture variant")
    return _fit_hmm_family(sessions, config)


def static_hmm_fit(sessions, config: HmmFitConfig) -> HmmParams:
    """Mixture fit: the latent state is frozen for the whole session."""
    from dataclasses import replace

    return _fit_hmm_family(sessions, replace(config, static=True))


# ---------------------------------------------------------------------------
# Observable Markov chain
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MarkovChainParams:
    """First-order chain on the page categories, add-one smoothed."""

    initial: np.ndarray
    transition: np.ndarray

    def __post_init__(self) -> None:
        initial = np.asarray(self.initial, dtype=float)
        transition = np.asarray(self.transition, dtype=float)
        if initial.shape != (_N_PAGES,):
            raise DimensionError("initial", (_N_PAGES,), initial.shape)
        if transition.shape != (_N_PAGES, _N_PAGES):
            raise DimensionError(
                "transition", (_N_PAGES, _N_PAGES), transition.shape
            )
        if abs(initial.sum() - 1.0) > 1e-9 or np.any(initial < 0):
            raise DomainError("initial must be a probability vector")
        rows = transition.sum(axis=1)
        if np.any(np.abs(rows - 1.0) > 1e-9) or np.any(transition < 0):
            raise DomainError("transition rows must be probability vectors")
        initial.setflags(write=False)
        transition.setflags(write=False)
        object.__setattr__(self, "initial", initial)
        object.__setattr__(self, "transition", transition)


def markov_fit(sessions) -> MarkovChainParams:
    """Count transitions with add-one smoothing."""
    sessions = list(sessions)
    if not sessions:
        raise EstimationError("no sessions to fit")
    init = np.ones(_N_PAGES)
    trans = np.ones((_N_PAGES, _N_PAGES))
    for session in sessions:
        idx = session.page_indices()
        init[idx[0]] += 1
        for a, b in zip(idx[:-1], idx[1:]):
            trans[a, b] += 1
    return MarkovChainParams(
        initial=init / init.sum(),
        transition=trans / trans.sum(axis=1, keepdims=True),
    )


def markov_exit_scorer(params: MarkovChainParams):
    def score(session: Session) -> np.ndarray:
        idx = session.page_indices()
        out = np.empty(len(session))
        out[0] = params.initial[_EXIT]
        if len(session) > 1:
            out[1:] = params.transition[idx[:-1], _EXIT]
        return out

    return score


# ---------------------------------------------------------------------------
# Logistic regression on step features
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LogRegParams:
    """Weights on standardized features plus raw one-hot page indicators."""

    weights: np.ndarray
    intercept: float
    feature_means: np.ndarray
    feature_scales: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        expected = len(COVARIATE_NAMES) + _N_PAGES
        if w.shape != (expected,):
            raise DimensionError("weights", (expected,), w.shape)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        for name in ("feature_means", "feature_scales"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (len(COVARIATE_NAMES),):
                raise DimensionError(name, (len(COVARIATE_NAMES),), arr.shape)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def logreg_features(session: Session) -> np.ndarray:
    """(T, 14) raw design: the 5 covariates then a previous-page one-hot.

    The one-hot is all zero on the first step, where no page has been
    seen yet.
    """
    t = len(session)
    x = session.covariate_matrix()
    onehot = np.zeros((t, _N_PAGES))
    idx = session.page_indices()
    if t > 1:
        onehot[np.arange(1, t), idx[:-1]] = 1.0
    return np.concatenate([x, onehot], axis=1)


def _standardize(features, means, scales):
    out = features.copy()
    ncov = len(COVARIATE_NAMES)
    out[:, :ncov] = (out[:, :ncov] - means) / scales
    return out


def logreg_fit(sessions, ridge: float = 1e-4, max_iterations: int = 500) -> LogRegParams:
    """Ridge-penalized logistic regression fit with analytic gradients.

    Covariate columns are standardized internally for conditioning; the
    indicator columns are left as is. The intercept is unpenalized.
    """
    sessions = list(sessions)
    if not sessions:
        raise EstimationError("no sessions to fit")
    feats = np.concatenate([logreg_features(s) for s in sessions], axis=0)
    labels = np.concatenate(
        [
            [1.0 if p is PageCategory.EXIT else 0.0 for p in s.pages]
            for s in sessions
        ]
    )
    ncov = len(COVARIATE_NAMES)
    means = feats[:, :ncov].mean(axis=0)
    scales = feats[:, :ncov].std(axis=0)
    scales[scales < 1e-12] = 1.0
    design = _standardize(feats, means, scales)
    n, p = design.shape

    def nll_and_grad(w_full):
        w, b = w_full[:p], w_full[p]
        z = design @ w + b
        # log(1 + e^z) - y z, stable in both tails
        nll = float(np.sum(np.logaddexp(0.0, z) - labels * z))
        nll += 0.5 * ridge * float(w @ w)
        resid = expit(z) - labels
        grad = np.empty(p + 1)
        grad[:p] = design.T @ resid + ridge * w
        grad[p] = resid.sum()
        return nll, grad

    res = scipy.optimize.minimize(
        nll_and_grad,
        np.zeros(p + 1),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_iterations},
    )
    if not np.all(np.isfinite(res.x)):
        raise EstimationError("logistic regression diverged")
    if not res.success:
        warnings.warn(f"logistic regression stopped early: {res.message}")
    return LogRegParams(
        weights=res.x[:p],
        intercept=float(res.x[p]),
        feature_means=means,
        feature_scales=scales,
    )


def logreg_exit_scorer(params: LogRegParams):
    def score(session: Session) -> np.ndarray:
        design = _standardize(
            logreg_features(session), params.feature_means, params.feature_scales
        )
        return expit(design @ params.weights + params.intercept)

    return score
