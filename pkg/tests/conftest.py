"""Shared fixtures and the exhaustive-enumeration likelihood oracle.

The oracle computes session likelihoods by summing over every latent
segmentation explicitly, which is exponential in the session length but
independent of the production recursions, so the fast implementations
are checked against something that cannot share their bugs.
"""

import datetime as dt
import itertools
import math

import numpy as np
import pytest

from ddhmm.model import (
    CovariateVector,
    ModelParams,
    PageCategory,
    Session,
    duration_pmf,
    duration_survival,
    emission_probs,
    transition_probs,
)

PAGES = list(PageCategory)


def compositions(total):
    """Ordered tuples of positive integers summing to ``total``."""
    if total == 0:
        yield ()
        return
    for first in range(1, total + 1):
        for rest in compositions(total - first):
            yield (first,) + rest


def enumerate_log_likelihood(params, session, censored):
    """Brute-force likelihood by enumerating all latent paths."""
    t = len(session)
    k = params.n_states
    idx = session.page_indices()
    r = session.demographics
    emis = np.empty((t, k))
    for step in range(t):
        for s in range(k):
            emis[step, s] = emission_probs(
                params, s, r, session.covariates[step]
            )[idx[step]]
    total = 0.0
    for seg in compositions(t):
        m = len(seg)
        for states in itertools.product(range(k), repeat=m):
            if any(states[j] == states[j + 1] for j in range(m - 1)):
                continue
            prob = params.pi[states[0]]
            pos = 0
            for j in range(m):
                s, d = states[j], seg[j]
                prob *= float(np.prod(emis[pos : pos + d, s]))
                if j == m - 1:
                    if censored:
                        prob *= duration_survival(
                            params.theta[s], params.c[s], d
                        )
                    else:
                        prob *= duration_pmf(params.theta[s], params.c[s], d)
                else:
                    prob *= duration_pmf(params.theta[s], params.c[s], d)
                    prob *= transition_probs(params, s, d)[states[j + 1]]
                pos += d
            total += prob
    return math.log(total)


def random_params(rng, n_states, demographic_dim=1, coef_scale=0.5):
    """Moderate random parameters that keep likelihoods well scaled."""
    k, g = n_states, demographic_dim
    n_pages = len(PAGES)
    c = rng.uniform(0.3, 2.5, k)
    return ModelParams(
        n_states=k,
        pi=rng.dirichlet(np.ones(k)),
        theta=rng.uniform(0.1, 0.9, k),
        c=c,
        mu=rng.normal(0.0, 1.0, (k, k)),
        delta=rng.normal(0.0, 0.5, (k, k)),
        emission_intercepts=rng.normal(0.0, 1.0, (k, n_pages, g)),
        emission_coefficients=rng.normal(0.0, coef_scale, (k, n_pages, 5, g)),
    )


def make_covariates(t, rng=None):
    out = []
    for step in range(1, t + 1):
        span = 0.0 if step == 1 else float(
            1.0 if rng is None else rng.uniform(0.5, 30.0)
        )
        out.append(
            CovariateVector(
                visit_depth=step,
                time_span=span,
                cum_same_page=0 if step == 1 else int(
                    0 if rng is None else rng.integers(0, step)
                ),
                weekend=0,
                customer_type=0,
            )
        )
    return tuple(out)


def random_session(rng, t, session_id="s", terminal=True):
    """A random page sequence; Exit appears only as the last page."""
    non_exit = [p for p in PAGES if not p.is_terminal]
    pages = [non_exit[rng.integers(len(non_exit))] for _ in range(t)]
    if terminal and t >= 1 and rng.random() < 0.5:
        pages[-1] = PageCategory.EXIT
    return Session(
        session_id=session_id,
        pages=tuple(pages),
        covariates=make_covariates(t, rng),
        start_time=dt.datetime(2021, 3, 1, 9, 0),
    )


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20210301)


@pytest.fixture(scope="session")
def small_params():
    return random_params(np.random.default_rng(7), n_states=2)


@pytest.fixture(scope="session")
def demo_corpus():
    """120 sessions from the built-in demonstration model."""
    from ddhmm.simulate import GeneratorConfig, demo_params, sample_sessions

    sampled = sample_sessions(demo_params(), GeneratorConfig(seed=1234), 120)
    return [s.session for s in sampled]
