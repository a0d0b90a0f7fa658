import json
import math
from pathlib import Path

import pytest

from robustfair.main import main

GOLDEN = Path(__file__).resolve().parent / "fixtures" / "golden"


def invoke(capsys, *argv):
    code = main([str(a) for a in argv])
    captured = capsys.readouterr()
    report = json.loads(captured.out) if captured.out else None
    return code, report, captured.err


class TestEval:
    def test_power_mean(self, capsys, fixtures_dir):
        code, report, _ = invoke(capsys, "eval", fixtures_dir / "aggregate_power_mean.json", "--grad")
        assert code == 0
        assert report["version"] == "1"
        assert report["kind"] == "aggregate"
        assert report["result"]["value"] == pytest.approx(2.0)
        assert report["result"]["gradient"] == pytest.approx([0.5, 0.5])
        assert report["input_digest"].startswith("sha256:")
        assert report["diagnostics"]["converged"] is True
        assert "elapsed_s" in report["timing"]

    def test_gini(self, capsys, fixtures_dir):
        code, report, _ = invoke(capsys, "eval", fixtures_dir / "aggregate_gini.json", "--no-timing")
        assert code == 0
        assert report["result"]["value"] == pytest.approx(10 / 6)
        assert "timing" not in report

    def test_robust_aggregator_reports_weights(self, capsys, tmp_path):
        path = tmp_path / "robust.json"
        path.write_text(json.dumps({
            "version": "1",
            "kind": "aggregate",
            "body": {
                "aggregator": {"kind": "robust", "p": "-inf", "weight_set": {"kind": "simplex", "g": 2}},
                "sentiment": [1, 3],
            },
        }))
        code, report, _ = invoke(capsys, "eval", path)
        assert code == 0
        assert report["result"]["value"] == pytest.approx(1.0)
        assert report["result"]["weights"] == pytest.approx([1.0, 0.0])


class TestAdversary:
    """Best responses of the fixture weight sets"""

    def test_simplex(self, capsys, fixtures_dir):
        code, report, _ = invoke(capsys, "adversary", fixtures_dir / "adversary_simplex.json")
        assert code == 0
        assert report["result"]["w"] == pytest.approx([0.0, 1.0, 0.0])
        assert report["result"]["value"] == pytest.approx(1.0)
        assert report["result"]["direction"] == "min"
        assert report["diagnostics"]["diameter_l1"]["value"] == pytest.approx(2.0)

    def test_direction_flag_overrides_the_file(self, capsys, fixtures_dir):
        code, report, _ = invoke(capsys, "adversary", fixtures_dir / "adversary_simplex.json", "--direction", "max")
        assert code == 0
        assert report["result"]["value"] == pytest.approx(3.0)

    def test_permutation(self, capsys, fixtures_dir):
        _, report, _ = invoke(capsys, "adversary", fixtures_dir / "adversary_permutation.json")
        assert report["result"]["value"] == pytest.approx(1.7)

    def test_linf_ball(self, capsys, fixtures_dir):
        _, report, _ = invoke(capsys, "adversary", fixtures_dir / "adversary_linf_ball.json")
        assert report["result"]["w"] == pytest.approx([0.05, 0.25, 0.7])
        assert report["result"]["value"] == pytest.approx(1.35)


class TestSolve:
    """Allocation solves from instance files"""

    def test_egalitarian(self, capsys, fixtures_dir):
        code, report, _ = invoke(capsys, "solve", fixtures_dir / "allocation_egalitarian.json")
        assert code == 0
        result = report["result"]
        assert result["value"] == pytest.approx(20 / 3)
        assert result["theta"] == pytest.approx([20 / 3, 10 / 3])
        assert result["utilities"] == pytest.approx([20 / 3, 20 / 3])
        assert "trace" not in result
        assert report["diagnostics"]["method"].endswith("closed_form")

    def test_utilitarian(self, capsys, fixtures_dir):
        _, report, _ = invoke(capsys, "solve", fixtures_dir / "allocation_utilitarian.json")
        assert report["result"]["value"] == pytest.approx(10.0)
        assert report["result"]["theta"] == pytest.approx([0.0, 10.0], abs=1e-9)

    def test_log_saturating(self, capsys, fixtures_dir):
        code, report, _ = invoke(capsys, "solve", fixtures_dir / "allocation_log_saturating.json")
        assert code == 0
        assert report["result"]["theta"] == pytest.approx([1.0])
        assert report["result"]["value"] == pytest.approx(math.log(3.0))

    def test_trace_csv(self, capsys, fixtures_dir, tmp_path):
        out = tmp_path / "trace.csv"
        code, _, _ = invoke(capsys, "solve", fixtures_dir / "allocation_egalitarian.json", "--trace", out)
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "iter,value,gap,step"
        assert len(lines) > 1

    def test_reports_are_deterministic(self, capsys, fixtures_dir):
        path = fixtures_dir / "allocation_egalitarian.json"
        main(["solve", str(path), "--no-timing", "--seed", "7"])
        first = capsys.readouterr().out
        main(["solve", str(path), "--no-timing", "--seed", "7"])
        assert capsys.readouterr().out == first
        assert json.loads(first)["seed"] == 7

    def test_not_converged(self, capsys, tmp_path):
        path = tmp_path / "short.json"
        path.write_text(json.dumps({
            "version": "1",
            "kind": "allocation",
            "body": {
                "instance": {
                    "g": 2, "k": 2, "capacities": [1, 1],
                    "utility_model": {"kind": "linear_multi", "P": [[1, 2], [2, 1]]},
                },
                "aggregator": {"kind": "robust", "p": 1, "weight_set": {"kind": "simplex", "g": 2}},
                "config": {"max_iters": 3, "tolerance": 1e-12},
            },
        }))
        code, report, err = invoke(capsys, "solve", path)
        assert code == 4
        assert report["diagnostics"]["converged"] is False
        assert "did not converge" in err


class TestGame:
    def test_altruistic_strategy(self, capsys, fixtures_dir):
        code, report, _ = invoke(capsys, "game", fixtures_dir / "game_altruistic.json")
        assert code == 0
        assert report["result"]["strategy"] == pytest.approx([0.25, 0.75])

    def test_verify_equilibrium(self, capsys, fixtures_dir):
        code, report, _ = invoke(
            capsys, "game", fixtures_dir / "game_altruistic.json", "--verify-equilibrium", "--grid", "0.05"
        )
        assert code == 0
        assert report["result"]["equilibrium"]["no_deviation"] is True
        assert report["diagnostics"]["grid_resolution"] == pytest.approx(0.05)

    def test_segment_interchange(self, capsys, fixtures_dir):
        code, report, _ = invoke(capsys, "game", fixtures_dir / "game_segment.json", "--interchange")
        assert code == 0
        assert report["result"]["strategic_value"]["value"] == pytest.approx(2.0)
        assert report["result"]["interchange"]["ok"] is True
        assert report["result"]["interchange"]["gap"] == pytest.approx(0.0, abs=1e-6)

    def test_two_points_interchange(self, capsys, fixtures_dir):
        code, report, _ = invoke(capsys, "game", fixtures_dir / "game_two_points.json", "--interchange")
        assert code == 0
        interchange = report["result"]["interchange"]
        assert interchange["maxmin"] == pytest.approx(0.0)
        assert interchange["minmax"] == pytest.approx(1.5)
        assert interchange["gap"] == pytest.approx(1.5)
        assert interchange["ok"] is False


class TestBoundsAndSamples:
    def test_bounds(self, capsys, fixtures_dir):
        code, report, _ = invoke(capsys, "bounds", fixtures_dir / "bounds_simplex.json", "--trials", "200", "--seed", "5")
        assert code == 0
        result = report["result"]
        assert (result["sandwich"]["lo"], result["sandwich"]["hi"]) == pytest.approx((1.0, 3.0))
        assert result["robust_gap_bound"] == pytest.approx(4.0)
        assert (result["generalization"]["lo"], result["generalization"]["hi"]) == pytest.approx((1.0, 3.0))
        assert result["holder"]["tightest"]["norm"] == "linf"
        assert result["holder"]["tightest"]["lambda"] == pytest.approx(1.0)
        assert result["holder_check"]["passed"] is True
        assert result["holder_check"]["trials"] == 200
        assert report["seed"] == 5

    def test_samples(self, capsys, fixtures_dir):
        code, report, _ = invoke(capsys, "samples", fixtures_dir / "sample_complexity.json")
        assert code == 0
        assert report["result"]["m"] == 439
        assert report["result"]["bound"] == pytest.approx(100 * math.log(80))


def assert_subset(actual, expected, where="report"):
    """Every key of the golden is in the report; floats match to rel 1e-9"""
    if isinstance(expected, dict):
        assert isinstance(actual, dict), where
        for key, value in expected.items():
            assert key in actual, f"{where}.{key}"
            assert_subset(actual[key], value, f"{where}.{key}")
    elif isinstance(expected, list):
        assert isinstance(actual, list) and len(actual) == len(expected), where
        for i, (a, e) in enumerate(zip(actual, expected)):
            assert_subset(a, e, f"{where}[{i}]")
    elif isinstance(expected, (bool, str)):
        assert actual == expected, where
    else:
        assert actual == pytest.approx(expected, rel=1e-9, abs=1e-9), where


class TestGoldenReports:
    """Reports of the fixture commands against committed goldens"""

    @pytest.mark.parametrize("name", ["eval", "adversary", "solve", "game", "bounds", "samples"])
    def test_matches_the_golden(self, capsys, fixtures_dir, name):
        golden = json.loads((GOLDEN / f"{name}.json").read_text())
        command, fixture, *extra = golden["argv"]
        argv = [command, str(fixtures_dir / fixture), *extra, "--no-timing", "--seed", "7"]
        code = main(argv)
        first = capsys.readouterr().out
        assert main(argv) == code == golden["exit_code"]
        assert capsys.readouterr().out == first
        report = json.loads(first)
        assert "timing" not in report
        assert_subset(report, golden["report"])


class TestExitCodes:
    """Failures map to exit codes and a message on stderr"""

    def test_malformed_json(self, capsys, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{"version": "1",\n "kind": ')
        code, report, err = invoke(capsys, "eval", path)
        assert code == 2
        assert report is None
        assert err.startswith(f"{path}:2:")

    def test_missing_file(self, capsys, tmp_path):
        code, _, _ = invoke(capsys, "eval", tmp_path / "absent.json")
        assert code == 2

    def test_unknown_field(self, capsys, tmp_path):
        path = tmp_path / "extra.json"
        path.write_text(json.dumps({
            "version": "1",
            "kind": "sample_complexity",
            "body": {"lambda": 1, "alpha": 1, "norm": "linf", "v": [1], "t": 1, "delta": 0.1, "epsilon": 1, "mu": 2},
        }))
        code, _, err = invoke(capsys, "samples", path)
        assert code == 2
        assert "mu" in err

    def test_kind_mismatch(self, capsys, fixtures_dir):
        code, _, err = invoke(capsys, "eval", fixtures_dir / "sample_complexity.json")
        assert code == 2
        assert "expected kind 'aggregate'" in err

    def test_domain_error(self, capsys, tmp_path):
        path = tmp_path / "negative.json"
        path.write_text(json.dumps({
            "version": "1",
            "kind": "aggregate",
            "body": {"aggregator": {"kind": "power_mean", "p": 0.5, "weights": [0.5, 0.5]}, "sentiment": [-1, 3]},
        }))
        code, report, err = invoke(capsys, "eval", path)
        assert code == 3
        assert report is None
        assert "DomainError" in err

    def test_invalid_welfare_parameter(self, capsys, tmp_path):
        path = tmp_path / "convex_welfare.json"
        path.write_text(json.dumps({
            "version": "1",
            "kind": "aggregate",
            "body": {
                "aggregator": {"kind": "robust", "p": 2, "weight_set": {"kind": "simplex", "g": 2}, "sense": "utility"},
                "sentiment": [1, 3],
            },
        }))
        code, report, err = invoke(capsys, "eval", path)
        assert code == 3
        assert report is None
        assert "DomainError" in err
