"""CSV and JSON persistence: exact round trips and hard rejects."""

import dataclasses
import datetime as dt
import json

import numpy as np
import pytest

from conftest import random_params

from ddhmm.baselines import (
    HmmParams,
    LogRegParams,
    MarkovChainParams,
    markov_fit,
    reduce_to_hmm,
)
from ddhmm.data_io import (
    MAX_SESSION_LENGTH,
    MIN_SESSION_LENGTH,
    SESSION_COLUMNS,
    compute_covariates,
    load_sessions,
    read_params,
    write_params,
    write_rows,
    write_sessions,
    write_traces,
)
from ddhmm.errors import DataError
from ddhmm.inference import log_likelihood_censored, trace_session
from ddhmm.model import COVARIATE_NAMES, PageCategory, Session

N_PAGES = len(PageCategory)


def write_csv(path, rows, header=",".join(SESSION_COLUMNS)):
    path.write_text(header + "\n" + "\n".join(rows) + ("\n" if rows else ""))
    return path


def event(sid, step, ts, page, ctype=0):
    return f"{sid},{step},{ts},{page},{ctype}"


class TestComputeCovariates:
    def test_hand_values(self):
        t0 = dt.datetime(2021, 3, 6, 9, 0)  # a Saturday
        pages = [
            PageCategory.HOME,
            PageCategory.PRODUCT,
            PageCategory.PRODUCT,
            PageCategory.HOME,
        ]
        stamps = [
            t0,
            t0 + dt.timedelta(seconds=4),
            t0 + dt.timedelta(seconds=9),
            t0 + dt.timedelta(seconds=11, microseconds=500000),
        ]
        covs = compute_covariates(pages, stamps, customer_type=1)
        depths = [c.visit_depth for c in covs]
        spans = [c.time_span for c in covs]
        cums = [c.cum_same_page for c in covs]
        assert depths == [1, 2, 3, 4]
        assert spans == [0.0, 4.0, 5.0, 2.5]
        # step 2 looks back at Home (seen once), step 3 at Product (once),
        # step 4 at Product (twice)
        assert cums == [0, 1, 1, 2]
        assert all(c.weekend == 1 for c in covs)
        assert all(c.customer_type == 1 for c in covs)

    def test_weekday_start(self):
        t0 = dt.datetime(2021, 3, 1, 9, 0)  # a Monday
        covs = compute_covariates(
            [PageCategory.HOME, PageCategory.EXIT],
            [t0, t0 + dt.timedelta(seconds=1)],
            customer_type=0,
        )
        assert all(c.weekend == 0 for c in covs)

    def test_prefix_stability(self, rng):
        # covariates never look ahead: any prefix computes identically
        pages = [
            list(PageCategory)[int(rng.integers(0, N_PAGES - 1))]
            for _ in range(12)
        ]
        t0 = dt.datetime(2021, 3, 2, 10, 0)
        stamps = [t0]
        for _ in range(11):
            stamps.append(
                stamps[-1] + dt.timedelta(seconds=float(rng.uniform(1, 30)))
            )
        full = compute_covariates(pages, stamps, 0)
        for cut in range(1, 12):
            prefix = compute_covariates(pages[:cut], stamps[:cut], 0)
            assert prefix == full[:cut]


class TestLoadSessions:
    def test_appends_exit_to_abandoned_sessions(self, tmp_path):
        t0 = "2021-03-01T09:00:00"
        t1 = "2021-03-01T09:00:10"
        t2 = "2021-03-01T09:00:25"
        path = write_csv(
            tmp_path / "events.csv",
            [
                event("a", 1, t0, "Home"),
                event("a", 2, t1, "Product"),
                event("a", 3, t2, "Product"),
            ],
        )
        (session,) = load_sessions(path)
        assert [p.value for p in session.pages] == [
            "Home",
            "Product",
            "Product",
            "Exit",
        ]
        # the silent exit happens at the last observed timestamp
        assert session.covariates[3].time_span == 0.0
        assert session.covariates[3].visit_depth == 4
        assert session.covariates[3].cum_same_page == 2

    def test_purchases_are_not_labeled_as_exits(self, tmp_path):
        t = "2021-03-01T09:00:{:02d}"
        path = write_csv(
            tmp_path / "events.csv",
            [
                event("b", 1, t.format(0), "Home"),
                event("b", 2, t.format(5), "Product"),
                event("b", 3, t.format(9), "Checkout"),
                event("b", 4, t.format(30), "Order"),
            ],
        )
        (session,) = load_sessions(path)
        assert len(session) == 4
        assert session.pages[-1] is PageCategory.ORDER

    def test_explicit_exit_is_kept_as_is(self, tmp_path):
        t = "2021-03-01T09:00:{:02d}"
        path = write_csv(
            tmp_path / "events.csv",
            [
                event("c", 1, t.format(0), "Home"),
                event("c", 2, t.format(2), "Overview"),
                event("c", 3, t.format(7), "Exit"),
            ],
        )
        (session,) = load_sessions(path)
        assert len(session) == 3
        assert session.pages[-1] is PageCategory.EXIT

    def test_length_filter_after_labeling(self, tmp_path):
        t0 = dt.datetime(2021, 3, 1, 9, 0)

        def rows(sid, n, last_page="Product"):
            out = []
            for i in range(n):
                page = last_page if i == n - 1 else "Product"
                ts = (t0 + dt.timedelta(seconds=10 * i)).isoformat()
                out.append(event(sid, i + 1, ts, page))
            return out

        path = write_csv(
            tmp_path / "events.csv",
            # two raw events grow to three after labeling: kept
            rows("grows", 2)
            # two raw events with a purchase stay two: dropped
            + rows("short-buy", 2, last_page="Checkout")
            # fifty raw events with no purchase grow to 51: dropped
            + rows("overflow", MAX_SESSION_LENGTH)
            # fifty raw events ending in a purchase stay 50: kept
            + rows("big-buy", MAX_SESSION_LENGTH, last_page="Checkout"),
        )
        loaded = load_sessions(path)
        ids = [s.session_id for s in loaded]
        assert ids == ["grows", "big-buy"]
        assert len(loaded[0]) == MIN_SESSION_LENGTH
        assert len(loaded[1]) == MAX_SESSION_LENGTH

    def test_groups_interleaved_sessions_in_file_order(self, tmp_path):
        t = "2021-03-01T09:00:{:02d}"
        path = write_csv(
            tmp_path / "events.csv",
            [
                event("x", 1, t.format(0), "Home"),
                event("y", 1, t.format(1), "Overview"),
                event("x", 2, t.format(2), "Product"),
                event("y", 2, t.format(3), "Product"),
                event("x", 3, t.format(4), "Exit"),
                event("y", 3, t.format(5), "Exit"),
            ],
        )
        loaded = load_sessions(path)
        assert [s.session_id for s in loaded] == ["x", "y"]
        assert [p.value for p in loaded[0].pages] == ["Home", "Product", "Exit"]

    def test_blank_lines_are_skipped(self, tmp_path):
        t = "2021-03-01T09:00:{:02d}"
        path = tmp_path / "events.csv"
        path.write_text(
            ",".join(SESSION_COLUMNS)
            + "\n"
            + event("a", 1, t.format(0), "Home")
            + "\n\n"
            + event("a", 2, t.format(1), "Product")
            + "\n"
            + event("a", 3, t.format(2), "Exit")
            + "\n"
        )
        (session,) = load_sessions(path)
        assert len(session) == 3


class TestLoadRejects:
    def reject(self, tmp_path, rows, match, line=None, header=None):
        kwargs = {} if header is None else {"header": header}
        path = write_csv(tmp_path / "bad.csv", rows, **kwargs)
        with pytest.raises(DataError, match=match) as exc:
            load_sessions(path)
        if line is not None:
            assert exc.value.line == line

    def test_wrong_header(self, tmp_path):
        self.reject(
            tmp_path,
            [event("a", 1, "2021-03-01T09:00:00", "Home")],
            match="expected header",
            line=1,
            header="session,step,time,page,ct",
        )

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(DataError, match="empty file"):
            load_sessions(path)

    def test_short_row(self, tmp_path):
        self.reject(
            tmp_path,
            [
                event("a", 1, "2021-03-01T09:00:00", "Home"),
                "a,2,2021-03-01T09:00:05",
            ],
            match="got 3",
            line=3,
        )

    def test_bad_step(self, tmp_path):
        self.reject(
            tmp_path,
            [event("a", "one", "2021-03-01T09:00:00", "Home")],
            match="bad step",
            line=2,
        )

    def test_bad_timestamp(self, tmp_path):
        self.reject(
            tmp_path,
            [event("a", 1, "yesterday", "Home")],
            match="bad timestamp",
            line=2,
        )

    def test_unknown_page(self, tmp_path):
        self.reject(
            tmp_path,
            [event("a", 1, "2021-03-01T09:00:00", "Basket")],
            match="unknown page",
            line=2,
        )

    def test_bad_customer_type(self, tmp_path):
        self.reject(
            tmp_path,
            [event("a", 1, "2021-03-01T09:00:00", "Home", ctype=2)],
            match="customer_type",
            line=2,
        )

    def test_nonincreasing_steps(self, tmp_path):
        self.reject(
            tmp_path,
            [
                event("a", 1, "2021-03-01T09:00:00", "Home"),
                event("a", 1, "2021-03-01T09:00:05", "Product"),
            ],
            match="not after",
            line=3,
        )

    def test_time_backwards(self, tmp_path):
        self.reject(
            tmp_path,
            [
                event("a", 1, "2021-03-01T09:00:10", "Home"),
                event("a", 2, "2021-03-01T09:00:05", "Product"),
            ],
            match="backwards",
            line=3,
        )

    def test_mid_session_exit(self, tmp_path):
        self.reject(
            tmp_path,
            [
                event("a", 1, "2021-03-01T09:00:00", "Home"),
                event("a", 2, "2021-03-01T09:00:05", "Exit"),
                event("a", 3, "2021-03-01T09:00:09", "Product"),
            ],
            match="Exit before",
            line=3,
        )

    def test_customer_type_flips(self, tmp_path):
        self.reject(
            tmp_path,
            [
                event("a", 1, "2021-03-01T09:00:00", "Home", ctype=0),
                event("a", 2, "2021-03-01T09:00:05", "Product", ctype=1),
            ],
            match="customer_type changes",
        )

    def test_empty_session_id(self, tmp_path):
        self.reject(
            tmp_path,
            [event("", 1, "2021-03-01T09:00:00", "Home")],
            match="empty session_id",
            line=2,
        )


class TestSessionRoundTrip:
    def stable(self, session):
        """Sessions the loader reproduces unchanged."""
        purchased = any(
            p in (PageCategory.CHECKOUT, PageCategory.ORDER)
            for p in session.pages
        )
        if not (session.pages[-1].is_terminal or purchased):
            return False
        return MIN_SESSION_LENGTH <= len(session) <= MAX_SESSION_LENGTH

    def test_simulated_corpus_round_trips_exactly(self, demo_corpus, tmp_path):
        from ddhmm.simulate import demo_params

        params = demo_params()
        keep = [s for s in demo_corpus if self.stable(s)]
        assert len(keep) > 100  # the demo model rarely produces misfits
        path = tmp_path / "sessions.csv"
        write_sessions(keep, path)
        loaded = load_sessions(path)
        assert [s.session_id for s in loaded] == [s.session_id for s in keep]
        for orig, back in zip(keep, loaded):
            assert back.pages == orig.pages
            assert back.start_time == orig.start_time
            assert back.covariates == orig.covariates
            assert log_likelihood_censored(params, back) == (
                log_likelihood_censored(params, orig)
            )

    def test_written_timestamps_are_cumulative_spans(self, tmp_path):
        t0 = dt.datetime(2021, 3, 1, 9, 0)
        stamps = [
            t0,
            t0 + dt.timedelta(seconds=2, microseconds=125000),
            t0 + dt.timedelta(seconds=10),
        ]
        pages = [PageCategory.HOME, PageCategory.PRODUCT, PageCategory.EXIT]
        session = Session(
            session_id="ts",
            pages=tuple(pages),
            covariates=compute_covariates(pages, stamps, 0),
            start_time=t0,
        )
        path = tmp_path / "one.csv"
        write_sessions([session], path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == ",".join(SESSION_COLUMNS)
        written = [line.split(",")[2] for line in lines[1:]]
        assert written == [s.isoformat() for s in stamps]


class TestParamsRoundTrip:
    def test_main_model(self, tmp_path, rng):
        params = random_params(rng, 3)
        path = tmp_path / "fit.json"
        write_params(params, path)
        back = read_params(path)
        for field in (
            "pi",
            "theta",
            "c",
            "mu",
            "delta",
            "emission_intercepts",
            "emission_coefficients",
        ):
            np.testing.assert_array_equal(
                getattr(back, field), getattr(params, field)
            )

    def test_hmm_and_static(self, tmp_path, rng):
        base = random_params(rng, 2)
        hmm = reduce_to_hmm(
            dataclasses.replace(base, c=np.ones(2), delta=np.zeros((2, 2)))
        )
        path = tmp_path / "hmm.json"
        write_params(hmm, path)
        back = read_params(path)
        assert isinstance(back, HmmParams) and not back.static
        np.testing.assert_array_equal(back.transition, hmm.transition)

        static = HmmParams(
            n_states=2,
            pi=hmm.pi,
            transition=np.eye(2),
            emission_intercepts=hmm.emission_intercepts,
            emission_coefficients=hmm.emission_coefficients,
            static=True,
        )
        spath = tmp_path / "static.json"
        write_params(static, spath)
        sback = read_params(spath)
        assert sback.static
        assert json.loads(spath.read_text())["kind"] == "static_hmm"

    def test_markov(self, tmp_path, demo_corpus):
        fit = markov_fit(demo_corpus[:20])
        path = tmp_path / "markov.json"
        write_params(fit, path)
        back = read_params(path)
        assert isinstance(back, MarkovChainParams)
        np.testing.assert_array_equal(back.initial, fit.initial)
        np.testing.assert_array_equal(back.transition, fit.transition)

    def test_logreg(self, tmp_path):
        params = LogRegParams(
            weights=np.linspace(-1, 1, len(COVARIATE_NAMES) + N_PAGES),
            intercept=-2.5,
            feature_means=np.arange(5.0),
            feature_scales=np.ones(5) * 3.0,
        )
        path = tmp_path / "lr.json"
        write_params(params, path)
        back = read_params(path)
        assert isinstance(back, LogRegParams)
        np.testing.assert_array_equal(back.weights, params.weights)
        assert back.intercept == params.intercept


class TestParamsRejects:
    def corrupt(self, tmp_path, rng, mutate, match):
        params = random_params(rng, 2)
        path = tmp_path / "p.json"
        write_params(params, path)
        doc = json.loads(path.read_text())
        mutate(doc)
        path.write_text(json.dumps(doc))
        with pytest.raises(DataError, match=match):
            read_params(path)

    def test_wrong_format(self, tmp_path, rng):
        self.corrupt(
            tmp_path, rng, lambda d: d.update(format="other"), "format"
        )

    def test_wrong_version(self, tmp_path, rng):
        self.corrupt(
            tmp_path, rng, lambda d: d.update(version=99), "version"
        )

    def test_unknown_kind(self, tmp_path, rng):
        self.corrupt(
            tmp_path, rng, lambda d: d.update(kind="forest"), "kind"
        )

    def test_page_order_mismatch(self, tmp_path, rng):
        def mutate(d):
            d["page_order"] = list(reversed(d["page_order"]))

        self.corrupt(tmp_path, rng, mutate, "page_order")

    def test_covariate_names_mismatch(self, tmp_path, rng):
        def mutate(d):
            d["covariate_names"][0] = "depth"

        self.corrupt(tmp_path, rng, mutate, "covariate_names")

    def test_missing_field(self, tmp_path, rng):
        self.corrupt(
            tmp_path, rng, lambda d: d.pop("theta"), "missing field"
        )

    def test_invalid_values(self, tmp_path, rng):
        def mutate(d):
            d["theta"] = [1.5, 0.5]

        self.corrupt(tmp_path, rng, mutate, "theta")

    def test_not_json(self, tmp_path):
        path = tmp_path / "junk.json"
        path.write_text("{not json")
        with pytest.raises(DataError, match="invalid JSON"):
            read_params(path)

    def test_json_but_not_object(self, tmp_path):
        path = tmp_path / "list.json"
        path.write_text("[1, 2, 3]")
        with pytest.raises(DataError, match="JSON object"):
            read_params(path)


class TestTracesAndRows:
    def test_traces_csv_layout(self, tmp_path, demo_corpus):
        from ddhmm.simulate import demo_params

        params = demo_params()
        sessions = demo_corpus[:3]
        traces = [trace_session(params, s) for s in sessions]
        path = tmp_path / "traces.csv"
        write_traces(traces, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == (
            "session_id,step,exit_prob,log_prefix_likelihood,"
            "posterior_1,posterior_2,posterior_3"
        )
        assert len(lines) - 1 == sum(len(s) for s in sessions)
        first = lines[1].split(",")
        assert first[0] == sessions[0].session_id
        assert int(first[1]) == 1
        # repr round trip keeps every bit
        assert float(first[2]) == float(traces[0].exit_prob[0])
        posterior = np.array([float(v) for v in first[4:]])
        np.testing.assert_array_equal(posterior, traces[0].state_posterior[0])

    def test_write_rows_accepts_attrs_and_mappings(self, tmp_path):
        @dataclasses.dataclass
        class Row:
            name: str
            value: float

        path = tmp_path / "rows.csv"
        write_rows(
            [Row("a", 1.5), {"name": "b", "value": 2.5}],
            columns=("name", "value"),
            path=path,
        )
        lines = path.read_text().strip().splitlines()
        assert lines == ["name,value", "a,1.5", "b,2.5"]
