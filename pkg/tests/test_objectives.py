import math

import pytest

from sizekit.netlist import Handle
from sizekit.objectives import (
    DirectResult,
    MetricSpec,
    ObjectiveError,
    ObjectiveSpec,
    emit_objective,
    make_result,
    parse_objective,
)


class TestMetricSpec:
    def test_ge_shortfall(self):
        m = MetricSpec("gain_db", "ge", 60.0)
        assert m.shortfall(70.0) == 0.0
        assert m.shortfall(45.0) == pytest.approx(15.0 / 60.0)
        assert m.met(60.0)

    def test_le_shortfall(self):
        m = MetricSpec("power", "le", 1e-3)
        assert m.shortfall(5e-4) == 0.0
        assert m.shortfall(2e-3) == pytest.approx(1.0)

    def test_default_normalizer_is_abs_threshold(self):
        assert MetricSpec("x", "ge", -4.0).normalizer == 4.0
        assert MetricSpec("x", "ge", 0.0).normalizer == 1.0

    def test_explicit_normalizer(self):
        m = MetricSpec("pm", "ge", 60.0, normalizer=10.0)
        assert m.shortfall(50.0) == pytest.approx(1.0)

    def test_nonfinite_value_is_infinite_shortfall(self):
        m = MetricSpec("gain_db", "ge", 60.0)
        assert m.shortfall(math.nan) == math.inf
        assert m.shortfall(-math.inf) == math.inf

    def test_bad_sense_rejected(self):
        with pytest.raises(ObjectiveError):
            MetricSpec("x", "gt", 1.0)


class TestObjectiveSpec:
    def test_fom_sums_shortfalls(self):
        spec = ObjectiveSpec(
            (MetricSpec("a", "ge", 10.0), MetricSpec("b", "le", 2.0))
        )
        assert spec.fom({"a": 10.0, "b": 2.0}) == 0.0
        assert spec.fom({"a": 5.0, "b": 3.0}) == pytest.approx(0.5 + 0.5)

    def test_missing_measurement_is_infinite(self):
        spec = ObjectiveSpec((MetricSpec("a", "ge", 10.0),))
        assert spec.fom({}) == math.inf

    def test_unmet_names(self):
        spec = ObjectiveSpec(
            (MetricSpec("a", "ge", 10.0), MetricSpec("b", "le", 2.0))
        )
        assert spec.unmet({"a": 5.0, "b": 1.0}) == ("a",)

    def test_window_allowed_but_repeat_rejected(self):
        ObjectiveSpec((MetricSpec("a", "ge", 1.0), MetricSpec("a", "le", 2.0)))
        with pytest.raises(ObjectiveError, match="duplicate"):
            ObjectiveSpec(
                (MetricSpec("a", "ge", 1.0), MetricSpec("a", "ge", 2.0))
            )


class TestParseObjective:
    def test_grammar(self):
        spec = parse_objective(
            "# targets\ngain_db >= 60\npower <= 1m norm 1m\n"
        )
        assert len(spec.metrics) == 2
        assert spec.metrics[0].sense == "ge"
        assert spec.metrics[1].threshold == 1e-3
        assert spec.metrics[1].normalizer == 1e-3

    def test_unit_suffixes(self):
        spec = parse_objective("ugb >= 10meg\n")
        assert spec.metrics[0].threshold == 1e7

    @pytest.mark.parametrize(
        "line",
        ["gain 60", "gain == 60", "gain >= 60 scale 2", "gain >= sixty"],
    )
    def test_rejects(self, line):
        with pytest.raises(ObjectiveError):
            parse_objective(line + "\n")

    def test_empty_rejected(self):
        with pytest.raises(ObjectiveError, match="no requirements"):
            parse_objective("# nothing\n")

    def test_emit_parse_round_trip(self):
        spec = parse_objective("gain_db >= 60\npower <= 1m norm 2m\n")
        again = parse_objective(emit_objective(spec))
        assert again == spec


class TestMakeResult:
    ASSIGN = {Handle("M1", "W"): 2e-6}

    def test_passing_result(self):
        spec = ObjectiveSpec((MetricSpec("a", "ge", 1.0),))
        r = make_result(self.ASSIGN, {"a": 2.0}, spec)
        assert r.fom == 0.0
        assert r.passed
        assert r.ok

    def test_penalty_blocks_pass(self):
        spec = ObjectiveSpec((MetricSpec("a", "ge", 1.0),))
        r = make_result(self.ASSIGN, {"a": 2.0}, spec, penalty=1.0)
        assert r.fom == 1.0
        assert not r.passed

    def test_failed_eval_is_infinite(self):
        spec = ObjectiveSpec((MetricSpec("a", "ge", 1.0),))
        r = make_result(self.ASSIGN, {}, spec, ok=False, note="crashed")
        assert r.fom == math.inf
        assert not r.ok
        assert not r.passed

    def test_to_dict_keys_sorted_and_stringly(self):
        spec = ObjectiveSpec((MetricSpec("a", "ge", 1.0),))
        r = make_result(
            {Handle("M2", "W"): 1e-6, Handle("M1", "W"): 2e-6},
            {"a": 2.0},
            spec,
        )
        d = r.to_dict()
        assert list(d["assignment"]) == ["M1.W", "M2.W"]


class TestDirectResult:
    def test_pass_threshold(self):
        wrap = DirectResult(pass_threshold=0.5)
        good = wrap({}, 0.4)
        bad = wrap({}, 0.6)
        assert good.passed and not bad.passed
        assert good.fom == 0.4

    def test_no_threshold_never_passes(self):
        wrap = DirectResult()
        assert not wrap({}, -100.0).passed

    def test_nonfinite_marks_failed(self):
        wrap = DirectResult(pass_threshold=0.5)
        r = wrap({}, math.nan)
        assert not r.ok
        assert r.fom == math.inf
