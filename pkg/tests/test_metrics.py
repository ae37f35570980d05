import math

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import average_ranks, pearson
from mbinet.errors import DegenerateInput, EmptyInput, LengthMismatch
from mbinet.metrics import (
    MetricRecord,
    format_report,
    lcc,
    rank,
    read_report,
    rmse,
    score_track,
    srcc,
    track_report,
    write_report,
)


class TestExamples:
    def test_rmse(self):
        assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0
        assert rmse([3, 4], [0, 0]) == pytest.approx(math.sqrt(12.5), abs=1e-9)
        assert rmse(np.arange(5) + 2.5, np.arange(5)) == pytest.approx(2.5, abs=1e-12)

    def test_lcc(self):
        t = np.array([0.3, 1.0, -2.0, 5.0])
        assert lcc(2 * t + 5, t) == pytest.approx(1.0, abs=1e-12)
        assert lcc(-t, t) == pytest.approx(-1.0, abs=1e-12)
        assert lcc([1, 2, 3], [2, 1, 3]) == pytest.approx(0.5, abs=1e-9)

    def test_srcc(self):
        t = np.array([0.5, -1.0, 2.0, 3.0, 0.1])
        assert srcc(t**3, t) == pytest.approx(1.0, abs=1e-12)
        assert srcc([1, 2, 3], [3, 1, 2]) == pytest.approx(-0.5, abs=1e-9)

    def test_srcc_ties(self):
        assert rank([1, 1, 2]).tolist() == [1.5, 1.5, 3.0]
        want = pearson(average_ranks([1, 1, 2]), [1, 2, 3])
        assert want == pytest.approx(math.sqrt(3) / 2)
        assert srcc([1, 1, 2], [1, 2, 3]) == pytest.approx(want, abs=1e-9)


class TestErrors:
    def test_length_mismatch(self):
        for fn in (rmse, lcc, srcc):
            with pytest.raises(LengthMismatch):
                fn([1, 2, 3], [1, 2])

    def test_empty(self):
        with pytest.raises(EmptyInput):
            rmse([], [])
        with pytest.raises(EmptyInput):
            lcc([1.0], [2.0])

    def test_constant_is_undefined(self):
        with pytest.raises(DegenerateInput):
            lcc([1, 1, 1], [1, 2, 3])
        with pytest.raises(DegenerateInput):
            srcc([1, 2, 3], [4, 4, 4])


vectors = st.integers(2, 100).flatmap(
    lambda n: st.tuples(
        arrays(np.float64, n, elements=st.floats(-1e3, 1e3, allow_nan=False)),
        arrays(np.float64, n, elements=st.floats(-1e3, 1e3, allow_nan=False)),
    )
)


def _defined(p, t):
    return np.ptp(p) > 1e-6 and np.ptp(t) > 1e-6


@given(vectors)
@settings(max_examples=300, deadline=None)
def test_correlations_bounded(pt):
    p, t = pt
    if not _defined(p, t):
        return
    assert -1.0 <= lcc(p, t) <= 1.0
    assert -1.0 <= srcc(p, t) <= 1.0


@given(vectors)
@settings(max_examples=300, deadline=None)
def test_srcc_is_lcc_of_ranks(pt):
    p, t = pt
    if not _defined(p, t):
        return
    assert srcc(p, t) == lcc(rank(p), rank(t))
    assert rank(p).tolist() == average_ranks(p.tolist())


@given(vectors, st.floats(-1e3, 1e3))
@settings(max_examples=200, deadline=None)
def test_rmse_translation(pt, c):
    p, t = pt
    assert rmse(p + c, t + c) == pytest.approx(rmse(p, t), rel=1e-9, abs=1e-9)


def test_against_scipy_and_direct_oracle(rng):
    for _ in range(200):
        n = int(rng.integers(2, 60))
        p, t = rng.normal(size=n), rng.normal(size=n)
        if rng.random() < 0.3:
            p = np.round(p, 1)  # force ties
        assert lcc(p, t) == pytest.approx(pearson(p.tolist(), t.tolist()), abs=1e-12)
        assert lcc(p, t) == pytest.approx(scipy.stats.pearsonr(p, t)[0], abs=1e-12)
        assert srcc(p, t) == pytest.approx(scipy.stats.spearmanr(p, t)[0], abs=1e-12)
        assert rmse(p, t) == pytest.approx(math.sqrt(math.fsum((p - t) ** 2) / n), rel=1e-12)


class TestReport:
    def _tracks(self):
        return [MetricRecord(str(i + 1), 10, r, c, s) for i, (r, c, s) in
                enumerate([(20.0, 0.7, 0.6), (25.0, 0.8, 0.7), (30.0, 0.9, 0.8)])]

    def test_three_track_average(self):
        out = track_report(self._tracks())
        avg = out[-1]
        assert avg.track == "average" and avg.n == 30
        assert avg.lcc == pytest.approx(0.8, abs=1e-12)
        assert avg.rmse == pytest.approx(25.0, abs=1e-12)
        assert avg.srcc == pytest.approx(np.mean([0.6, 0.7, 0.8]), abs=1e-12)
        assert out[:3] == self._tracks()

    def test_single_track(self):
        one = MetricRecord("1", 5, 10.0, 0.5, 0.4)
        avg = track_report([one])[-1]
        assert (avg.rmse, avg.lcc, avg.srcc, avg.n) == (one.rmse, one.lcc, one.srcc, one.n)

    def test_one_average_per_task(self):
        recs = self._tracks() + [MetricRecord("1", 10, 0.1, 0.5, 0.5, task="haspi")]
        out = track_report(recs)
        assert [(r.track, r.task) for r in out if r.track == "average"] == [
            ("average", "intelligibility"), ("average", "haspi")]

    def test_undefined_correlation_propagates(self):
        rec = score_track("1", [5, 5, 5], [1, 2, 3])
        assert rec.lcc is None and rec.srcc is None and rec.rmse > 0
        assert track_report([rec, self._tracks()[0]])[-1].lcc is None

    def test_empty(self):
        with pytest.raises(EmptyInput):
            track_report([])

    def test_roundtrip(self, tmp_path):
        out = track_report(self._tracks())
        path = write_report(tmp_path / "r.jsonl", out)
        assert read_report(path) == out
        assert format_report(read_report(path)) == path.read_text()
        lines = path.read_text().splitlines()
        assert len(lines) == 4 and sum('"average"' in line for line in lines) == 1
