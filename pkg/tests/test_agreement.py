"""Agreement-analysis tests.

Pearson and RMSE oracles are tiny series evaluated by hand:
  (1,2,3)/(2,4,6): exact positive linear relation, rho 1
  (1,2,3)/(6,4,2): exact negative relation, rho -1
  (1,2,3,4)/(1,3,2,4): centered cross sum 4, both variances 5, rho 0.8
  (1,2)/(2,4): squared diffs 1 and 4, mean 2.5, rmse sqrt(2.5)
The Monte-Carlo check pins rmse against the injected noise scale.
"""

import json
import math

import numpy as np
import pytest
from numpy.random import default_rng

from roomsim.agreement import (
    AgreementReport,
    PairedSeries,
    build_report,
    pair_results,
    pearson,
    render_scatter_svg,
    report_to_dict,
    report_to_text,
    rmse,
    scatter_to_csv,
)
from roomsim.errors import DegenerateDataError
from roomsim.results import (
    EvalResult,
    load_results,
    save_results,
    sort_results,
)

RMSE_12_24 = math.sqrt(2.5)  # 1.5811388300841898


def series(x, y) -> PairedSeries:
    keys = tuple(("room", "c0", "s0", f"r{i}") for i in range(len(x)))
    return PairedSeries(x=np.array(x, float), y=np.array(y, float), keys=keys)


def rows(engine, values, algorithm="wpe", metric="estoi", room="lab"):
    return [
        EvalResult(
            engine=engine,
            room_id=room,
            condition_id="c0",
            source_id="s0",
            receiver_id=f"r{i}",
            algorithm=algorithm,
            metric=metric,
            value=v,
        )
        for i, v in enumerate(values)
    ]


class TestPearson:
    def test_exact_positive(self):
        assert pearson(series([1, 2, 3], [2, 4, 6])) == 1.0

    def test_exact_negative(self):
        assert pearson(series([1, 2, 3], [6, 4, 2])) == -1.0

    def test_hand_oracle_point_eight(self):
        assert pearson(series([1, 2, 3, 4], [1, 3, 2, 4])) == pytest.approx(
            0.8, abs=1e-12
        )

    def test_bounded(self):
        rng = default_rng(9)
        for _ in range(50):
            x = rng.standard_normal(12)
            y = rng.standard_normal(12)
            assert -1.0 <= pearson(series(x, y)) <= 1.0

    def test_affine_invariance(self):
        rng = default_rng(10)
        x = rng.standard_normal(20)
        y = rng.standard_normal(20)
        base = pearson(series(x, y))
        assert pearson(series(3.7 * x + 11.0, y)) == pytest.approx(
            base, abs=1e-12
        )
        assert pearson(series(-2.0 * x + 1.0, y)) == pytest.approx(
            -base, abs=1e-12
        )

    def test_zero_variance_refused(self):
        with pytest.raises(DegenerateDataError, match="zero variance"):
            pearson(series([1, 1, 1], [1, 2, 3]))
        with pytest.raises(DegenerateDataError, match="zero variance"):
            pearson(series([1, 2, 3], [5, 5, 5]))


class TestRmse:
    def test_identity_is_zero(self):
        assert rmse(series([1, 2, 3], [1, 2, 3])) == 0.0

    def test_hand_oracle(self):
        assert rmse(series([1, 2], [2, 4])) == pytest.approx(
            RMSE_12_24, abs=1e-12
        )

    def test_constant_offset(self):
        x = np.linspace(0, 5, 9)
        assert rmse(series(x, x + 0.75)) == pytest.approx(0.75, abs=1e-12)

    def test_symmetry_exact(self):
        rng = default_rng(11)
        x = rng.standard_normal(15)
        y = rng.standard_normal(15)
        assert rmse(series(x, y)) == rmse(series(y, x))


class TestPairResults:
    def test_full_match(self):
        ref = rows("meas", np.linspace(0.2, 0.9, 20))
        cand = rows("ism", np.linspace(0.25, 0.95, 20))
        s = pair_results(ref, cand, "wpe", "estoi")
        assert s.n == 20
        assert s.unmatched_reference == () and s.unmatched_candidate == ()

    def test_unmatched_reported(self):
        ref = rows("meas", [0.1, 0.2, 0.3, 0.4])
        cand = rows("ism", [0.1, 0.2, 0.3])
        s = pair_results(ref, cand, "wpe", "estoi")
        assert s.n == 3
        assert s.unmatched_reference == (("lab", "c0", "s0", "r3"),)

    def test_disjoint_keys_error(self):
        ref = rows("meas", [0.1, 0.2])
        cand = [
            EvalResult(
                engine="ism",
                room_id="other",
                condition_id="c0",
                source_id="s0",
                receiver_id="r0",
                algorithm="wpe",
                metric="estoi",
                value=0.5,
            )
        ]
        with pytest.raises(DegenerateDataError, match="fewer than 2"):
            pair_results(ref, cand, "wpe", "estoi")

    def test_sentinel_pair_excluded_with_count(self):
        ref = rows("meas", list(np.linspace(1.0, 9.0, 10)), metric="si_sdr")
        vals = list(np.linspace(2.0, 10.0, 10))
        vals[4] = math.inf
        cand = rows("ism", vals, metric="si_sdr")
        s = pair_results(ref, cand, "wpe", "si_sdr")
        assert s.n == 9
        assert s.n_excluded == 1

    def test_order_independent(self):
        rng = default_rng(12)
        ref = rows("meas", rng.uniform(0, 1, 12))
        cand = rows("ism", rng.uniform(0, 1, 12))
        a = pair_results(ref, cand, "wpe", "estoi")
        perm = list(rng.permutation(len(ref)))
        b = pair_results(
            [ref[i] for i in perm], [cand[i] for i in reversed(perm)],
            "wpe", "estoi",
        )
        assert a.keys == b.keys
        assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)

    def test_empty_sets_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            pair_results([], rows("ism", [1, 2]), "wpe", "estoi")


class TestBuildReport:
    def test_self_comparison_perfect(self):
        ref = rows("meas", np.linspace(0.2, 0.9, 10))
        report = build_report(ref, [ref])
        assert len(report.rows) == 1
        row = report.rows[0]
        assert row.rho == 1.0 and row.rmse == 0.0 and row.n == 10

    def test_row_count_three_engines_three_metrics(self):
        ref = []
        cands = []
        for metric in ("estoi", "si_sdr", "dist_err"):
            vals = np.abs(default_rng(1).standard_normal(8))
            ref += rows("meas", vals, metric=metric)
        for engine in ("ism", "rt", "fdtd"):
            cand = []
            for metric in ("estoi", "si_sdr", "dist_err"):
                vals = np.abs(default_rng(2).standard_normal(8))
                cand += rows(engine, vals, metric=metric)
            cands.append(cand)
        report = build_report(ref, cands)
        assert len(report.rows) == 9
        assert all(r.error is None for r in report.rows)

    def test_noise_sigma_recovered_by_rmse(self):
        # Monte-Carlo oracle: candidate = reference + iid noise of scale
        # sigma, so rmse estimates sigma (within sampling error at N=100)
        rng = default_rng(123)
        sigma = 0.25
        base = rng.uniform(0.0, 1.0, 100)
        ref = rows("meas", base, metric="si_sdr")
        cand = rows("ism", base + sigma * rng.standard_normal(100),
                    metric="si_sdr")
        report = build_report(ref, [cand])
        row = report.rows[0]
        assert abs(row.rmse - sigma) / sigma < 0.2

    def test_failed_cell_marked_not_fatal(self):
        ref = rows("meas", [0.1, 0.2, 0.3]) + rows(
            "meas", [1.0, 1.0, 1.0], metric="si_sdr"
        )
        cand = rows("ism", [0.2, 0.3, 0.4]) + rows(
            "ism", [1.0, 2.0, 3.0], metric="si_sdr"
        )
        report = build_report(ref, [cand])
        by_metric = {r.metric: r for r in report.rows}
        assert by_metric["estoi"].error is None
        assert "zero variance" in by_metric["si_sdr"].error

    def test_all_cells_failing_is_fatal(self):
        ref = rows("meas", [1.0, 1.0, 1.0])
        cand = rows("ism", [0.2, 0.3, 0.4])
        with pytest.raises(DegenerateDataError, match="no report row"):
            build_report(ref, [cand])

    def test_per_dataset_mode_splits_rooms(self):
        ref = rows("meas", [0.1, 0.5, 0.9], room="a") + rows(
            "meas", [0.2, 0.6, 0.7], room="b"
        )
        cand = rows("ism", [0.15, 0.55, 0.85], room="a") + rows(
            "ism", [0.25, 0.65, 0.75], room="b"
        )
        pooled = build_report(ref, [cand], pool=True)
        split = build_report(ref, [cand], pool=False)
        assert len(pooled.rows) == 1 and pooled.rows[0].dataset == "pooled"
        assert len(split.rows) == 2
        assert sorted(r.dataset for r in split.rows) == ["a", "b"]
        assert all(r.n == 3 for r in split.rows)

    def test_scatter_points_align_with_pairs(self):
        ref = rows("meas", [0.1, 0.2, 0.3])
        cand = rows("ism", [0.2, 0.4, 0.6])
        report = build_report(ref, [cand])
        pts = report.scatter[("ism", "wpe", "estoi", "pooled")]
        assert len(pts) == 3
        assert pts[0][:2] == (0.1, 0.2)
        assert pts[0][2] == "lab/c0/s0/r0"


class TestSerialization:
    def make_report(self) -> AgreementReport:
        ref = rows("meas", [0.1, 0.2, 0.35])
        cand = rows("ism", [0.12, 0.24, 0.3])
        return build_report(ref, [cand])

    def test_report_dict_round_trips_json(self):
        report = self.make_report()
        d = report_to_dict(report)
        blob = json.dumps(d, sort_keys=True)
        back = json.loads(blob)
        assert back["rows"][0]["engine"] == "ism"
        assert back["reference_line"] == {"slope": 1.0, "intercept": 0.0}
        assert back["rows"][0]["rho"] == report.rows[0].rho

    def test_text_table_layout(self):
        text = report_to_text(self.make_report())
        assert "wpe/estoi" in text
        assert "rho" in text and "rmse" in text
        assert "ism" in text
        assert "y = x" in text

    def test_scatter_csv(self):
        report = self.make_report()
        pts = report.scatter[("ism", "wpe", "estoi", "pooled")]
        csv_text = scatter_to_csv(pts)
        lines = csv_text.strip().split("\n")
        assert lines[0].startswith("# reference line: y = x")
        assert lines[1] == "x,y,key"
        assert len(lines) == 2 + 3
        x, y, key = lines[2].split(",")
        assert float(x) == 0.1 and float(y) == 0.12

    def test_svg_renders_points(self):
        report = self.make_report()
        pts = report.scatter[("ism", "wpe", "estoi", "pooled")]
        svg = render_scatter_svg(pts, title="ism estoi")
        assert svg.count("<circle") == 3
        assert "stroke-dasharray" in svg  # the y = x diagonal
        assert svg.startswith("<svg")


class TestResultsStore:
    def test_round_trip(self, tmp_path):
        rng = default_rng(3)
        out = rows("ism", rng.uniform(0, 1, 5)) + rows(
            "ism", [2.5, math.inf, 1.0, 4.0, 0.5], metric="si_sdr"
        )
        path = tmp_path / "results.csv"
        save_results(sort_results(out), path)
        back = load_results(path)
        assert sort_results(out) == back

    def test_sentinel_written_as_inf(self, tmp_path):
        out = rows("ism", [math.inf, 1.0], metric="si_sdr")
        path = tmp_path / "results.csv"
        save_results(out, path)
        text = path.read_text()
        assert ",inf" in text

    def test_duplicate_keys_rejected(self, tmp_path):
        out = rows("ism", [1.0]) + rows("ism", [2.0])
        with pytest.raises(ValueError, match="duplicate"):
            save_results(out, tmp_path / "r.csv")

    def test_header_enforced(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(ValueError, match="header"):
            load_results(path)

    def test_negative_infinity_rejected(self):
        with pytest.raises(ValueError):
            EvalResult(
                engine="e", room_id="r", condition_id="c", source_id="s",
                receiver_id="x", algorithm="a", metric="si_sdr",
                value=-math.inf,
            )

    def test_deterministic_bytes(self, tmp_path):
        out = sort_results(rows("ism", default_rng(4).uniform(0, 1, 6)))
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        save_results(out, p1)
        save_results(out, p2)
        assert p1.read_bytes() == p2.read_bytes()
