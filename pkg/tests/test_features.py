import json
import math
import warnings
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ossustain import features as ft
from ossustain.events import COMMIT, EMAIL, ActivityEvent

from oracles import interruption_bruteforce, top_fraction_bruteforce, welch_pvalue_quadrature

UTC = timezone.utc
JAN = datetime(2020, 1, 1, tzinfo=UTC)
A, B, C, D = 0, 1, 2, 3


def day(n, base=JAN):
    return base + timedelta(days=n)


# ----------------------------------------------------------------- interruption / top fraction


def test_interruption_example():
    assert ft.interruption_score([0, 10, 20, 100], 0, 100) == pytest.approx(1.0)


def test_interruption_empty_window():
    assert ft.interruption_score([], 0, 10) == 1.0


def test_interruption_with_datetimes():
    score = ft.interruption_score([day(5), day(15), day(25)], day(0), day(31))
    assert score == pytest.approx((10 + 10 + 6) / 31)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1000, allow_nan=False), max_size=15), st.integers(1, 5))
def test_interruption_matches_gap_sort_oracle(points, top):
    got = ft.interruption_score(points, 0.0, 1000.0, top)
    assert got == pytest.approx(interruption_bruteforce(points, 0.0, 1000.0, top), abs=1e-12)
    assert 0.0 <= got <= 1.0


def test_top_fraction_examples():
    assert ft.top_fraction([50] + [50 / 9] * 9) == pytest.approx(0.5)
    assert ft.top_fraction([7]) == 1.0
    assert ft.top_fraction([]) == 0.0
    assert ft.top_fraction([0, 0]) == 0.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 500), min_size=1, max_size=60))
def test_top_fraction_matches_sort_and_sum(counts):
    assert ft.top_fraction(counts) == pytest.approx(top_fraction_bruteforce(counts), abs=1e-12)


# ----------------------------------------------------------------- assemble


def fixture_events():
    feb = datetime(2020, 2, 1, tzinfo=UTC)
    return [
        ActivityEvent(EMAIL, day(0), A, "m1"),
        ActivityEvent(EMAIL, day(10), B, "m2", "m1"),
        ActivityEvent(EMAIL, day(20), C, "m3", "m2"),
        ActivityEvent(EMAIL, day(25), A, "m4", "m3"),
        ActivityEvent(COMMIT, day(5), A, files=("trunk/src/X.java",)),
        ActivityEvent(COMMIT, day(15), B, files=("branches/b1/src/X.java", "src/Y.java")),
        ActivityEvent(COMMIT, day(25), C, files=("docs/Z.java",)),
        ActivityEvent(EMAIL, day(9, feb), D, "m5", "m1"),
        # outside the three-month window
        ActivityEvent(EMAIL, datetime(2020, 4, 2, tzinfo=UTC), A, "m6"),
    ]


def hand_sheet():
    """The fixture's 3 x 18 matrix worked out by hand."""
    rows = np.zeros((3, ft.N_FEATURES))
    jan = {
        "num_act_devs": 3, "num_commits": 3, "num_emails": 4, "num_files": 3,
        "c_interruption": 26 / 31, "e_interruption": 26 / 31,
        "top_c_fract": 1 / 3, "top_e_fract": 2 / 4,
        "c_nodes": 3, "c_edges": 1, "c_c_coef": 0.0, "c_long_tail": 1, "c_mean_degree": 2 / 3,
        "e_nodes": 3, "e_edges": 3, "e_c_coef": 1.0, "e_long_tail": 2, "e_mean_degree": 2.0,
    }
    feb = {
        "num_act_devs": 1, "num_emails": 1, "c_interruption": 1.0, "e_interruption": 1.0,
        "top_e_fract": 1.0, "e_nodes": 2, "e_edges": 1, "e_long_tail": 1, "e_mean_degree": 1.0,
    }
    mar = {"c_interruption": 1.0, "e_interruption": 1.0}
    for i, values in enumerate((jan, feb, mar)):
        for k, v in values.items():
            rows[i, ft.COL[k]] = v
    return rows


def test_three_month_fixture_matches_hand_sheet():
    seq = ft.assemble("p", 1, fixture_events(), (2020, 1), 3)
    np.testing.assert_allclose(seq.months, hand_sheet(), rtol=0, atol=1e-12)
    assert (2, "top_c_fract_undefined") in seq.flags


def test_month_with_one_email_only():
    ev = [ActivityEvent(EMAIL, day(3), A, "x")]
    row = ft.assemble("p", 0, ev, (2020, 1), 1).months[0]
    assert row[ft.COL["num_emails"]] == 1 and row[ft.COL["num_commits"]] == 0
    assert row[ft.COL["c_nodes"]] == 0 and row[ft.COL["e_nodes"]] >= 1


def test_cumulative_devs_option():
    seq = ft.assemble("p", 1, fixture_events(), (2020, 1), 3, config=ft.FeatureConfig(cumulative_devs=True))
    assert list(seq.months[:, ft.COL["num_act_devs"]]) == [3, 4, 4]


def random_events(rng, n):
    out = []
    for k in range(n):
        ts = JAN + timedelta(seconds=int(rng.integers(0, 90 * 86400)))
        who = int(rng.integers(0, 6))
        if rng.random() < 0.5:
            parent = f"e{int(rng.integers(0, k))}" if k and rng.random() < 0.6 else ""
            out.append(ActivityEvent(EMAIL, ts, who, f"e{k}", parent))
        else:
            files = tuple(f"trunk/src/F{int(j)}.java" for j in rng.integers(0, 5, size=int(rng.integers(1, 3))))
            out.append(ActivityEvent(COMMIT, ts, who, files=files))
    return out


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_assemble_is_order_invariant_and_bounded(seed):
    rng = np.random.default_rng(seed)
    events = random_events(rng, int(rng.integers(0, 60)))
    a = ft.assemble("p", 1, events, (2020, 1), 3)
    shuffled = [events[i] for i in rng.permutation(len(events))]
    b = ft.assemble("p", 1, shuffled, (2020, 1), 3)
    np.testing.assert_array_equal(a.months, b.months)
    bounded = [ft.COL[k] for k in ("c_interruption", "e_interruption", "top_c_fract", "top_e_fract",
                                   "c_c_coef", "e_c_coef")]
    assert np.all((a.months[:, bounded] >= 0) & (a.months[:, bounded] <= 1))
    assert np.all(a.months >= 0)


# ----------------------------------------------------------------- scaler


def seqs_from(matrices):
    return [ft.FeatureSequence(f"p{i}", i % 2, m) for i, m in enumerate(matrices)]


def test_constant_feature_scales_to_zero():
    rng = np.random.default_rng(0)
    mats = [rng.random((3, ft.N_FEATURES)) for _ in range(3)]
    for m in mats:
        m[:, 4] = 7.0
    sc = ft.fit_scaler(seqs_from(mats))
    assert np.all(sc.transform(mats[0])[:, 4] == 0.0)


def test_min_maps_to_zero_and_max_to_one():
    rng = np.random.default_rng(1)
    mats = [rng.random((4, ft.N_FEATURES)) * 10 for _ in range(3)]
    sc = ft.fit_scaler(seqs_from(mats))
    np.testing.assert_array_equal(sc.transform(sc.mins), np.zeros(ft.N_FEATURES))
    np.testing.assert_array_equal(sc.transform(sc.maxs), np.ones(ft.N_FEATURES))
    # test-time values outside the training range are clamped
    assert np.all(sc.transform(sc.maxs + 5) == 1.0) and np.all(sc.transform(sc.mins - 5) == 0.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_scaler_round_trip(seed):
    rng = np.random.default_rng(seed)
    mats = [rng.normal(size=(int(rng.integers(1, 6)), ft.N_FEATURES)) * 100 for _ in range(3)]
    sc = ft.fit_scaler(seqs_from(mats))
    x = mats[1]
    np.testing.assert_allclose(sc.inverse_transform(sc.transform(x)), x, rtol=0, atol=1e-12 * 1e3)


def test_empty_training_set_rejected():
    with pytest.raises(ValueError):
        ft.fit_scaler([])


# ----------------------------------------------------------------- lasso


def test_lasso_zero_lambda_equals_ols():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(80, 6))
    y = X @ rng.normal(size=6) + 0.3 * rng.normal(size=80) + 1.5
    res = ft.lasso_select(X, y, ft.LassoConfig(lam=0.0, tolerance=1e-14, max_iter=100000))
    A = np.hstack([np.ones((80, 1)), X])
    ols = np.linalg.lstsq(A, y, rcond=None)[0]
    np.testing.assert_allclose(res.coef, ols[1:], atol=1e-6)
    assert res.intercept == pytest.approx(ols[0], abs=1e-6)


def test_lasso_orthogonal_two_feature_hand_iteration():
    # centred orthogonal columns with unit mean square: the solution is the
    # soft-thresholded correlation, (1 - 0.5, 1.5 - 0.5) at lambda 0.5
    X = np.array([[1, 1], [-1, 1], [1, -1], [-1, -1]], dtype=float)
    y = np.array([3.0, 1.0, 0.0, -2.0])
    res = ft.lasso_select(X, y, ft.LassoConfig(lam=0.5))
    np.testing.assert_allclose(res.coef, [0.5, 1.0], atol=1e-12)
    assert res.intercept == pytest.approx(0.5)
    assert ft.soft_threshold(1.0, 0.5) == 0.5 and ft.soft_threshold(-0.2, 0.5) == 0.0


def test_lasso_recovers_planted_support():
    rng = np.random.default_rng(3)
    X = ft.standardize(rng.normal(size=(300, 10)))
    y = 3 * X[:, 1] - 2 * X[:, 4] + 0.5 * rng.normal(size=300)
    res = ft.lasso_select(X, y)
    assert {1, 4} <= set(res.selected)
    assert np.all(np.abs(np.delete(res.coef, [1, 4])) < 0.1)


def test_lasso_large_lambda_empty_support():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(50, 5))
    res = ft.lasso_select(X, rng.normal(size=50), ft.LassoConfig(lam=100.0))
    assert res.selected == []


def test_lasso_nonconvergence_warns():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(30, 4))
    X[:, 1] = X[:, 0] + 1e-3 * rng.normal(size=30)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = ft.lasso_select(X, rng.normal(size=30), ft.LassoConfig(lam=0.0, max_iter=2))
    assert not res.converged
    assert any("did not converge" in str(w.message) for w in caught)


# ----------------------------------------------------------------- group comparison


def test_welch_matches_quadrature_oracle():
    rng = np.random.default_rng(6)
    for _ in range(20):
        a = rng.normal(rng.uniform(-1, 1), rng.uniform(0.5, 3), size=int(rng.integers(2, 40)))
        b = rng.normal(rng.uniform(-1, 1), rng.uniform(0.5, 3), size=int(rng.integers(2, 40)))
        t, p = ft.compare_groups(a, b)
        t_ref, p_ref = welch_pvalue_quadrature(a, b)
        assert t == pytest.approx(t_ref, rel=1e-12)
        assert p == pytest.approx(p_ref, abs=1e-6)


def test_welch_identical_groups():
    t, p = ft.compare_groups([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert t == 0.0 and p == pytest.approx(1.0)


def test_welch_gross_separation():
    rng = np.random.default_rng(7)
    _, p = ft.compare_groups(rng.normal(0, 1, 30), rng.normal(10, 1, 30))
    assert p < 0.001


def test_welch_zero_variance():
    assert ft.compare_groups([2.0, 2.0], [2.0, 2.0]) == (0.0, 1.0)
    t, p = ft.compare_groups([3.0, 3.0], [2.0, 2.0])
    assert t == math.inf and p == 0.0
    with pytest.raises(ValueError):
        ft.compare_groups([1.0], [1.0, 2.0])


def test_group_stats_schema():
    rng = np.random.default_rng(8)
    seqs = seqs_from([rng.random((int(rng.integers(2, 5)), ft.N_FEATURES)) for _ in range(6)])
    text = ft.write_group_stats(ft.group_stats(seqs))
    lines = text.splitlines()
    assert lines[0] == "feature,mean_grad,mean_ret,t,p"
    assert [line.split(",")[0] for line in lines[1:]] == [*ft.FEATURES, "incubation_months"]


# ----------------------------------------------------------------- serialization


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_feature_csv_round_trip_is_lossless(seed):
    rng = np.random.default_rng(seed)
    seq = ft.FeatureSequence("p", 1, rng.normal(size=(int(rng.integers(1, 8)), ft.N_FEATURES)) * 1e3)
    back = ft.read_feature_csv(ft.write_feature_csv(seq), "p", 1)
    np.testing.assert_array_equal(back.months, seq.months)


def test_feature_csv_rejects_reordered_columns():
    seq = ft.FeatureSequence("p", 1, np.zeros((1, ft.N_FEATURES)))
    text = ft.write_feature_csv(seq).replace("num_commits,num_emails", "num_emails,num_commits")
    with pytest.raises(ValueError):
        ft.read_feature_csv(text, "p", 1)


def test_corpus_manifest_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    seqs = seqs_from([rng.random((k + 1, ft.N_FEATURES)) for k in range(3)])
    path = ft.save_corpus(seqs, tmp_path)
    manifest = json.loads(path.read_text())
    assert set(manifest[0]) == {"project_id", "label", "months", "csv_path"}
    back = ft.load_corpus(path)
    assert [(s.project_id, s.label, len(s)) for s in back] == [(s.project_id, s.label, len(s)) for s in seqs]
    for a, b in zip(back, seqs):
        np.testing.assert_array_equal(a.months, b.months)
