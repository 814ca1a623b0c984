import math
import sys

import pytest

from sizekit.assets import template_text
from sizekit.evaluators import (
    AnalyticBGR,
    AnalyticLDO,
    AnalyticOpAmp,
    EvaluatorError,
    ExternalSim,
    SyntheticBench,
    branin_value,
    build_evaluator,
    hartmann3_value,
    sphere_value,
    synthetic_space,
    valley_value,
)
from sizekit.netlist import Handle, parse_netlist
from sizekit.objectives import parse_objective


def default_assignment(netlist):
    return {
        h: netlist.device(h.device).params[h.param]
        for h in netlist.sizable_parameters()
    }


OPAMP_OBJECTIVE = parse_objective(
    "gain_db >= 60\nugb >= 1meg\npm >= 45\nslew >= 0.05meg\npower <= 10u\n"
)


class TestAnalyticOpAmp:
    @pytest.fixture()
    def netlist(self):
        return parse_netlist(template_text("opamp.sp"))

    @pytest.fixture()
    def evaluator(self, netlist):
        return AnalyticOpAmp(netlist, OPAMP_OBJECTIVE)

    def test_default_sizes_hand_computation(self, netlist, evaluator):
        # recomputed from scratch: currents mirror off the 50n bias leg
        result = evaluator(default_assignment(netlist))
        m = result.measurements

        s1 = 2 * 4e-6 / 1e-6  # M1: W=4u L=1u M=2
        s5 = 1 * 4e-6 / 1e-6
        s6 = 2 * 16e-6 / 0.5e-6
        s7 = 2 * 8e-6 / 1e-6
        s8 = 2 * 8e-6 / 1e-6
        i_tail = 50e-9 * s8 / s5
        i_half = i_tail / 2
        i_second = 50e-9 * s7 / s5
        assert i_tail == pytest.approx(200e-9)

        gm1 = math.sqrt(2 * 170e-6 * s1 * i_half)
        gm6 = math.sqrt(2 * 60e-6 * s6 * i_second)
        gds2 = i_half / (15e6 * 1e-6)
        gds4 = i_half / (10e6 * 1e-6)
        gds6 = i_second / (10e6 * 0.5e-6)
        gds7 = i_second / (15e6 * 1e-6)
        gain_db = 20 * math.log10(
            gm1 / (gds2 + gds4) * gm6 / (gds6 + gds7)
        )
        ugb = gm1 / (2 * math.pi * 2e-12)
        pole2 = gm6 / (2 * math.pi * 10e-12)
        zero = gm6 / (2 * math.pi * 2e-12)
        pm = 90 - math.degrees(math.atan(ugb / pole2)) - math.degrees(
            math.atan(ugb / zero)
        )

        assert m["gain_db"] == pytest.approx(gain_db, rel=1e-12)
        assert m["ugb"] == pytest.approx(ugb, rel=1e-12)
        assert m["pm"] == pytest.approx(pm, rel=1e-12)
        assert m["slew"] == pytest.approx(i_tail / 2e-12, rel=1e-12)
        assert m["power"] == pytest.approx(
            1.8 * (50e-9 + i_tail + i_second), rel=1e-12
        )

    def test_area_is_sum_of_gate_areas(self, netlist, evaluator):
        result = evaluator(default_assignment(netlist))
        expected = sum(
            d.params["M"] * d.params["W"] * d.params["L"]
            for d in netlist.devices
            if d.is_mos()
        )
        assert result.measurements["area"] == pytest.approx(expected, rel=1e-12)

    def test_more_compensation_lowers_ugb_and_raises_pm(self, netlist, evaluator):
        base = default_assignment(netlist)
        wide = dict(base)
        wide[Handle("CC", "C")] = 20e-12
        r_base = evaluator(base)
        r_wide = evaluator(wide)
        assert r_wide.measurements["ugb"] < r_base.measurements["ugb"]
        assert r_wide.measurements["pm"] > r_base.measurements["pm"]

    def test_oscillation_penalized_and_noted(self, netlist, evaluator):
        squeezed = default_assignment(netlist)
        squeezed[Handle("CC", "C")] = 0.1e-12
        result = evaluator(squeezed)
        assert result.measurements["pm"] <= 0.0
        assert result.note == "oscillating"
        assert result.fom >= 1.0
        assert not result.passed

    def test_pass_iff_every_target_met(self, netlist):
        relaxed = parse_objective("gain_db >= 60\npm >= 45\n")
        evaluator = AnalyticOpAmp(netlist, relaxed)
        tuned = default_assignment(netlist)
        tuned[Handle("CC", "C")] = 20e-12
        result = evaluator(tuned)
        assert result.passed and result.fom == 0.0
        base = evaluator(default_assignment(netlist))  # marginal stability
        assert not base.passed and base.fom > 0.0

    def test_finite_over_random_assignments(self, netlist, evaluator):
        import random

        rng = random.Random(0)
        handles = netlist.sizable_parameters()
        for _ in range(2000):
            assignment = {}
            for h in handles:
                if h.param == "W":
                    assignment[h] = math.exp(
                        rng.uniform(math.log(1e-6), math.log(1e-4))
                    )
                elif h.param == "L":
                    assignment[h] = math.exp(
                        rng.uniform(math.log(0.18e-6), math.log(2e-6))
                    )
                elif h.param == "M":
                    assignment[h] = float(rng.randint(1, 8))
                elif h.param == "C":
                    assignment[h] = math.exp(
                        rng.uniform(math.log(0.5e-12), math.log(2e-11))
                    )
                else:  # bias current
                    assignment[h] = math.exp(
                        rng.uniform(math.log(1e-8), math.log(1e-6))
                    )
            result = evaluator(assignment)
            assert result.ok
            assert all(math.isfinite(v) for v in result.measurements.values())


class TestAnalyticBGR:
    @pytest.fixture()
    def netlist(self):
        return parse_netlist(template_text("bgr.sp"))

    @pytest.fixture()
    def evaluator(self, netlist):
        objective = parse_objective("tc_ppm <= 100\nvref >= 1\nvref <= 1.4\n")
        return AnalyticBGR(netlist, objective)

    def test_vref_hand_computation(self, netlist, evaluator):
        result = evaluator(default_assignment(netlist))
        # N = S(M4)/S(M3) = 8, rho = 5meg/500k = 10, unit mirror
        c = 1.0 * 10.0 * 8.617333262e-5 * math.log(8.0)
        expected = 0.7 + c * (27.0 + 273.15)
        assert result.measurements["vref"] == pytest.approx(expected, rel=1e-12)

    def test_sweep_tc_matches_quadratic_extremes(self, netlist, evaluator):
        result = evaluator(default_assignment(netlist))
        ev = evaluator
        get_n = 8.0
        c = 1.0 * 10.0 * 8.617333262e-5 * math.log(get_n)
        a, b = ev.diode_ctat, ev.diode_curvature

        # vref(dT) = const + (c - a) dT - b dT^2 over dT in [lo, hi]
        lo = ev.t_low - ev.t_nominal
        hi = ev.t_high - ev.t_nominal

        def f(dt):
            return (c - a) * dt - b * dt * dt

        vertex = (c - a) / (2 * b)
        candidates = [f(lo), f(hi)]
        if lo <= vertex <= hi:
            candidates.append(f(vertex))
        span_exact = max(candidates) - min(candidates)
        vref = result.measurements["vref"]
        tc_exact = span_exact / (vref * (ev.t_high - ev.t_low)) * 1e6

        tc_sweep = result.measurements["tc_ppm"]
        # the discrete sweep can only under-estimate the true span
        assert tc_sweep <= tc_exact + 1e-9
        assert tc_sweep == pytest.approx(tc_exact, abs=0.5)

    def test_near_balance_at_default_sizes(self, netlist, evaluator):
        result = evaluator(default_assignment(netlist))
        assert result.measurements["tc_ppm"] < 100.0

    def test_detuned_ratio_degrades_tc(self, netlist, evaluator):
        base = default_assignment(netlist)
        detuned = dict(base)
        detuned[Handle("R2", "R")] = 2.5e6  # rho 10 -> 5, kills cancellation
        r_base = evaluator(base)
        r_detuned = evaluator(detuned)
        assert (
            r_detuned.measurements["tc_ppm"] > 5 * r_base.measurements["tc_ppm"]
        )

    def test_degenerate_core_marked_failed(self, netlist, evaluator):
        bad = default_assignment(netlist)
        bad[Handle("M4", "M")] = 1.0  # N == 1: no PTAT voltage at all
        result = evaluator(bad)
        assert not result.ok
        assert result.fom == math.inf

    def test_finite_over_random_assignments(self, netlist, evaluator):
        import random

        rng = random.Random(1)
        handles = netlist.sizable_parameters()
        finite = 0
        for _ in range(500):
            assignment = {}
            for h in handles:
                if h.param == "M":
                    assignment[h] = float(rng.randint(1, 8))
                elif h.param == "R":
                    assignment[h] = math.exp(
                        rng.uniform(math.log(1e4), math.log(1e7))
                    )
                elif h.param == "C":
                    assignment[h] = 5e-12
                else:
                    assignment[h] = math.exp(
                        rng.uniform(math.log(1e-6), math.log(5e-5))
                    )
            result = evaluator(assignment)
            if result.ok:
                finite += 1
                assert all(
                    math.isfinite(v) for v in result.measurements.values()
                )
        assert finite > 0


class TestAnalyticLDO:
    @pytest.fixture()
    def netlist(self):
        return parse_netlist(template_text("ldo.sp"))

    @pytest.fixture()
    def evaluator(self, netlist):
        objective = parse_objective(
            "vout >= 1.19\nvout <= 1.21\nloop_gain_db >= 40\n"
        )
        return AnalyticLDO(netlist, objective)

    def test_vout_is_exact_divider_ratio(self, netlist, evaluator):
        result = evaluator(default_assignment(netlist))
        assert result.measurements["vout"] == 0.6 * (1e5 + 1e5) / 1e5

    def test_wider_pass_device_raises_loop_gain(self, netlist, evaluator):
        base = default_assignment(netlist)
        wide = dict(base)
        wide[Handle("MP", "W")] = 4e-4
        r_base = evaluator(base)
        r_wide = evaluator(wide)
        assert (
            r_wide.measurements["loop_gain_db"]
            > r_base.measurements["loop_gain_db"]
        )
        assert (
            r_wide.measurements["regulation"] < r_base.measurements["regulation"]
        )

    def test_finite_over_random_assignments(self, netlist, evaluator):
        import random

        rng = random.Random(2)
        handles = netlist.sizable_parameters()
        for _ in range(500):
            assignment = {}
            for h in handles:
                if h.param == "M":
                    assignment[h] = float(rng.randint(1, 8))
                elif h.param == "R":
                    assignment[h] = math.exp(
                        rng.uniform(math.log(1e4), math.log(1e6))
                    )
                elif h.param == "C":
                    assignment[h] = 2e-11
                elif h.param == "DC":
                    assignment[h] = math.exp(
                        rng.uniform(math.log(1e-6), math.log(1e-5))
                    )
                else:
                    assignment[h] = math.exp(
                        rng.uniform(math.log(1e-6), math.log(2e-4))
                    )
            result = evaluator(assignment)
            assert result.ok
            assert all(math.isfinite(v) for v in result.measurements.values())


class TestSynthetics:
    def test_sphere_minimum_at_center(self):
        assert sphere_value([1.5, 1.5, 1.5, 1.5]) == 0.0
        assert sphere_value([1.0, 2.0, 1.5, 1.5]) == pytest.approx(0.5)

    def test_branin_known_minimum(self):
        # global minimum 0.397887 at (pi, 2.275) in canonical coordinates
        assert branin_value([math.pi + 6.0, 2.275 + 1.0]) == pytest.approx(
            0.397887, abs=1e-4
        )

    def test_branin_dense_grid_floor(self):
        best = math.inf
        for i in range(250):
            for j in range(250):
                v1 = 1.0 + 15.0 * i / 249
                v2 = 1.0 + 15.0 * j / 249
                best = min(best, branin_value([v1, v2]))
        assert best == pytest.approx(0.397887, abs=5e-3)
        assert best >= 0.397887 - 1e-9

    def test_hartmann3_known_minimum(self):
        point = [1.114614, 1.555649, 1.852547]
        assert hartmann3_value(point) == pytest.approx(-3.86278, abs=1e-4)

    def test_valley_minimum_on_diagonal(self):
        assert valley_value([1.75] * 6) == 0.0
        assert valley_value([1.75] * 5 + [1.8]) > 0.0

    def test_valley_penalizes_asymmetry_hard(self):
        spread = valley_value([1.6, 1.9] * 3)
        aligned = valley_value([1.75] * 6)
        assert spread > aligned + 0.1

    def test_synthetic_space_shapes(self):
        space = synthetic_space("branin")
        assert space.dim == 2
        assert space.bounds == ((1.0, 16.0), (1.0, 16.0))
        with pytest.raises(EvaluatorError):
            synthetic_space("rosenbrock")

    def test_bench_callable_and_threshold(self):
        space = synthetic_space("sphere")
        assignment = {h: 1.5 for h in space.handles}
        result = SyntheticBench("sphere", pass_threshold=0.1)(assignment)
        assert result.fom == 0.0
        assert result.passed


FAKE_SIM = """\
import sys
text = open(sys.argv[1]).read()
assert "M1" in text
print("gain_db 80.0")
print("pm 60.0")
"""

FAKE_SIM_ARGS = """\
import sys
w = float(sys.argv[1])
print("gain_db", 60.0 + w * 1e6)
print("pm 60.0")
"""


class TestExternalSim:
    OBJECTIVE = parse_objective("gain_db >= 70\npm >= 45\n")

    def test_netlist_placeholder_and_parse(self, tmp_path):
        netlist = parse_netlist("M1 d g s b nch W=4u L=1u M=1\n")
        script = tmp_path / "fakesim.py"
        script.write_text(FAKE_SIM)
        sim = ExternalSim(
            (sys.executable, str(script), "{NETLIST}"), self.OBJECTIVE, netlist
        )
        result = sim({Handle("M1", "W"): 5e-6})
        assert result.ok
        assert result.measurements == {"gain_db": 80.0, "pm": 60.0}
        assert result.passed

    def test_value_placeholder(self, tmp_path):
        script = tmp_path / "fakesim.py"
        script.write_text(FAKE_SIM_ARGS)
        sim = ExternalSim(
            (sys.executable, str(script), "{M1.W}"), self.OBJECTIVE
        )
        result = sim({Handle("M1", "W"): 20e-6})
        assert result.measurements["gain_db"] == pytest.approx(80.0)

    def test_unresolved_placeholder_fails_closed(self, tmp_path):
        script = tmp_path / "fakesim.py"
        script.write_text(FAKE_SIM_ARGS)
        sim = ExternalSim(
            (sys.executable, str(script), "{M9.W}"), self.OBJECTIVE
        )
        result = sim({Handle("M1", "W"): 20e-6})
        assert not result.ok
        assert "placeholder" in result.note

    def test_nonzero_exit_fails_closed(self, tmp_path):
        script = tmp_path / "fakesim.py"
        script.write_text("import sys; sys.exit(3)\n")
        sim = ExternalSim((sys.executable, str(script)), self.OBJECTIVE)
        result = sim({})
        assert not result.ok
        assert "exit 3" in result.note
        assert result.fom == math.inf

    def test_timeout_fails_closed(self, tmp_path):
        script = tmp_path / "fakesim.py"
        script.write_text("import time; time.sleep(5)\n")
        sim = ExternalSim(
            (sys.executable, str(script)), self.OBJECTIVE, timeout=0.5
        )
        result = sim({})
        assert not result.ok


class TestRegistry:
    def test_synthetic_by_name(self):
        bench = build_evaluator("valley", options={"pass_threshold": 0.1})
        assert isinstance(bench, SyntheticBench)
        assert bench.pass_threshold == 0.1

    def test_analytic_requires_netlist(self):
        with pytest.raises(EvaluatorError, match="netlist"):
            build_evaluator("opamp")

    def test_analytic_by_name(self):
        netlist = parse_netlist(template_text("opamp.sp"))
        evaluator = build_evaluator(
            "opamp", netlist, OPAMP_OBJECTIVE, {"load_cap": 5e-12}
        )
        assert isinstance(evaluator, AnalyticOpAmp)
        assert evaluator.load_cap == 5e-12

    def test_unknown_name(self):
        with pytest.raises(EvaluatorError, match="unknown evaluator"):
            build_evaluator("spice-in-the-sky")
