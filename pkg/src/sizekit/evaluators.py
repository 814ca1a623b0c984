"""Evaluation backends: analytic circuit models, synthetic benches, and a
subprocess adapter for external simulators.

The analytic models use long-channel square-law hand formulas.  They are
not a replacement for a simulator; they exist so optimization runs have a
fast, deterministic target whose behavior (gain trades against bandwidth,
compensation trades stability against slew) matches what the sizing loop
will see against a real backend.

Every evaluator is a callable taking a full handle assignment and
returning an EvalResult.
"""

from __future__ import annotations

import math
import re
import subprocess
import tempfile
from dataclasses import dataclass, replace as dc_replace
from pathlib import Path

from .netlist import Handle, Netlist, emit_netlist
from .objectives import DirectResult, EvalResult, ObjectiveSpec, make_result

# square-law constants for the built-in device model
KP_N = 170e-6  # A/V^2
KP_P = 60e-6
EARLY_N = 15e6  # Early voltage per meter of channel, V/m
EARLY_P = 10e6
KB_OVER_Q = 8.617333262e-5  # V/K
TWO_PI = 2.0 * math.pi


class EvaluatorError(ValueError):
    """Raised when an evaluator cannot be assembled."""


_PLACEHOLDER_RE = re.compile(r"\{[A-Za-z0-9_.]+\}")


def _merged_params(netlist: Netlist, assignment: dict[Handle, float]):
    """Device parameter lookup: netlist values overlaid by the assignment."""
    merged: dict[Handle, float] = {}
    for dev in netlist.devices:
        for param, value in dev.params.items():
            merged[Handle(dev.name, param)] = value
    merged.update(assignment)

    def get(dev: str, param: str) -> float:
        try:
            return merged[Handle(dev, param)]
        except KeyError:
            raise EvaluatorError(f"no value for {dev}.{param}") from None

    return get


def _shape(get, dev: str) -> float:
    """Effective strength ratio M*W/L of a MOS device."""
    return get(dev, "M") * get(dev, "W") / get(dev, "L")


def _area(get, netlist: Netlist) -> float:
    total = 0.0
    for dev in netlist.devices:
        if dev.is_mos():
            total += get(dev.name, "M") * get(dev.name, "W") * get(dev.name, "L")
    return total


@dataclass(frozen=True)
class AnalyticOpAmp:
    """Two-stage Miller amplifier, hand calculation.

    Stage currents mirror off the bias leg; the dominant pole sits at the
    compensation node, the second pole at the output, and the feedforward
    zero comes from the Miller capacitor.  A non-positive phase margin
    flags the design as oscillating and adds a unit penalty, so unstable
    points can never read as passing.
    """

    netlist: Netlist
    objective: ObjectiveSpec
    load_cap: float = 10e-12
    supply: float = 1.8

    def __call__(self, assignment: dict[Handle, float]) -> EvalResult:
        get = _merged_params(self.netlist, assignment)
        i_bias = get("IB", "DC")
        cc = get("CC", "C")

        s_ref = _shape(get, "M5")
        i_tail = i_bias * _shape(get, "M8") / s_ref
        i_half = 0.5 * i_tail
        i_second = i_bias * _shape(get, "M7") / s_ref

        gm1 = math.sqrt(2.0 * KP_N * _shape(get, "M1") * i_half)
        gm6 = math.sqrt(2.0 * KP_P * _shape(get, "M6") * i_second)
        gds2 = i_half / (EARLY_N * get("M2", "L"))
        gds4 = i_half / (EARLY_P * get("M4", "L"))
        gds6 = i_second / (EARLY_P * get("M6", "L"))
        gds7 = i_second / (EARLY_N * get("M7", "L"))

        gain = (gm1 / (gds2 + gds4)) * (gm6 / (gds6 + gds7))
        ugb = gm1 / (TWO_PI * cc)
        pole2 = gm6 / (TWO_PI * self.load_cap)
        zero = gm6 / (TWO_PI * cc)
        pm = 90.0 - math.degrees(math.atan(ugb / pole2)) - math.degrees(
            math.atan(ugb / zero)
        )

        measurements = {
            "gain_db": 20.0 * math.log10(gain),
            "ugb": ugb,
            "pm": pm,
            "slew": i_tail / cc,
            "power": self.supply * (i_bias + i_tail + i_second),
            "area": _area(get, self.netlist),
        }
        oscillating = pm <= 0.0
        return make_result(
            assignment,
            measurements,
            self.objective,
            penalty=1.0 if oscillating else 0.0,
            note="oscillating" if oscillating else "",
        )


@dataclass(frozen=True)
class AnalyticBGR:
    """Reference from a diode-like CTAT leg plus a scaled PTAT drop.

    The core leg sets I = V_T ln(N) / R1 with N the strength ratio of the
    two subthreshold devices; the output leg adds m * (R2/R1) * V_T ln(N)
    on top of the diode voltage.  The diode's curvature makes the sweep
    quadratic, which is what the temperature-coefficient number measures.
    """

    netlist: Netlist
    objective: ObjectiveSpec
    t_low: float = -20.0
    t_high: float = 85.0
    t_nominal: float = 27.0
    sweep_points: int = 22
    diode_v0: float = 0.7
    diode_ctat: float = 1.8e-3  # V/K at the nominal point
    diode_curvature: float = 2e-6  # V/K^2

    def reference_voltage(self, get, celsius: float) -> float:
        n_ratio = _shape(get, "M4") / _shape(get, "M3")
        rho = get("R2", "R") / get("R1", "R")
        mirror_gain = _shape(get, "M5") / _shape(get, "M1")
        if n_ratio <= 1.0:
            raise EvaluatorError("PTAT core needs strength ratio N > 1")
        dt = celsius - self.t_nominal
        diode = (
            self.diode_v0
            - self.diode_ctat * dt
            - self.diode_curvature * dt * dt
        )
        kelvin = celsius + 273.15
        ptat = mirror_gain * rho * KB_OVER_Q * kelvin * math.log(n_ratio)
        return diode + ptat

    def __call__(self, assignment: dict[Handle, float]) -> EvalResult:
        get = _merged_params(self.netlist, assignment)
        try:
            sweep = [
                self.reference_voltage(
                    get,
                    self.t_low
                    + i * (self.t_high - self.t_low) / (self.sweep_points - 1),
                )
                for i in range(self.sweep_points)
            ]
        except EvaluatorError as exc:
            return make_result(assignment, {}, self.objective, ok=False, note=str(exc))
        vref = self.reference_voltage(get, self.t_nominal)
        span = max(sweep) - min(sweep)
        tc_ppm = span / (vref * (self.t_high - self.t_low)) * 1e6

        i_core = (
            KB_OVER_Q
            * (self.t_nominal + 273.15)
            * math.log(_shape(get, "M4") / _shape(get, "M3"))
            / get("R1", "R")
        )
        mirror_gain = _shape(get, "M5") / _shape(get, "M1")
        measurements = {
            "vref": vref,
            "tc_ppm": tc_ppm,
            "power": 1.8 * i_core * (2.0 + mirror_gain),
            "area": _area(get, self.netlist),
        }
        return make_result(assignment, measurements, self.objective)


@dataclass(frozen=True)
class AnalyticLDO:
    """Low-dropout regulator: error amp, PMOS pass device, resistive tap.

    The output settles at vref * (R1 + R2) / R2 when the loop has gain;
    regulation against load steps improves by one over one-plus-loop-gain.
    """

    netlist: Netlist
    objective: ObjectiveSpec
    vref: float = 0.6
    supply: float = 1.8
    load_current: float = 10e-3

    def __call__(self, assignment: dict[Handle, float]) -> EvalResult:
        get = _merged_params(self.netlist, assignment)
        r1, r2 = get("R1", "R"), get("R2", "R")
        vout = self.vref * (r1 + r2) / r2

        i_tail = get("IB", "DC") * _shape(get, "M5") / _shape(get, "M6")
        i_half = 0.5 * i_tail
        gm_ea = math.sqrt(2.0 * KP_N * _shape(get, "M1") * i_half)
        gds = i_half / (EARLY_N * get("M2", "L")) + i_half / (
            EARLY_P * get("M4", "L")
        )
        a_ea = gm_ea / gds

        gm_pass = math.sqrt(2.0 * KP_P * _shape(get, "MP") * self.load_current)
        r_pass = EARLY_P * get("MP", "L") / self.load_current
        r_out = 1.0 / (1.0 / r_pass + 1.0 / (r1 + r2))
        loop_gain = a_ea * gm_pass * r_out * r2 / (r1 + r2)

        measurements = {
            "vout": vout,
            "loop_gain_db": 20.0 * math.log10(loop_gain),
            "regulation": (1.0 / gm_pass) / (1.0 + loop_gain),
            "power": self.supply * (get("IB", "DC") + i_tail),
            "area": _area(get, self.netlist),
        }
        return make_result(assignment, measurements, self.objective)


# ------------------------------------------------------------ synthetic set


def synthetic_space(name: str):
    """The canonical box for a named synthetic bench."""
    from .space import ParameterSpace

    dims = {"sphere": 4, "branin": 2, "hartmann3": 3, "valley": 6}
    if name not in dims:
        raise EvaluatorError(f"unknown synthetic bench {name!r}")
    d = dims[name]
    handles = tuple(Handle(f"X{i + 1}", "W") for i in range(d))
    if name == "branin":
        bounds = ((1.0, 16.0), (1.0, 16.0))
    else:
        bounds = (((1.0, 2.0),) * d)
    return ParameterSpace(handles, bounds, ("linear",) * d)


def _coords(assignment: dict[Handle, float]) -> list[float]:
    ordered = sorted(
        assignment, key=lambda h: (len(h.device), h.device, h.param)
    )
    return [assignment[h] for h in ordered]


def sphere_value(x: list[float]) -> float:
    return sum((v - 1.5) ** 2 for v in x)


def branin_value(x: list[float]) -> float:
    # canonical domain reached by shifting the positive box
    x1 = x[0] - 6.0
    x2 = x[1] - 1.0
    a, b, c = 1.0, 5.1 / (4.0 * math.pi**2), 5.0 / math.pi
    r, s, t = 6.0, 10.0, 1.0 / (8.0 * math.pi)
    return (
        a * (x2 - b * x1 * x1 + c * x1 - r) ** 2
        + s * (1.0 - t) * math.cos(x1)
        + s
    )


_HARTMANN3_A = (
    (3.0, 10.0, 30.0),
    (0.1, 10.0, 35.0),
    (3.0, 10.0, 30.0),
    (0.1, 10.0, 35.0),
)
_HARTMANN3_C = (1.0, 1.2, 3.0, 3.2)
_HARTMANN3_P = (
    (0.3689, 0.1170, 0.2673),
    (0.4699, 0.4387, 0.7470),
    (0.1091, 0.8732, 0.5547),
    (0.0381, 0.5743, 0.8828),
)


def hartmann3_value(x: list[float]) -> float:
    u = [v - 1.0 for v in x]
    total = 0.0
    for alpha, row_a, row_p in zip(_HARTMANN3_C, _HARTMANN3_A, _HARTMANN3_P):
        inner = sum(a * (ui - p) ** 2 for a, ui, p in zip(row_a, u, row_p))
        total -= alpha * math.exp(-inner)
    return total


def valley_value(x: list[float]) -> float:
    """Minimized on the all-equal diagonal; tying coordinates removes the
    cross terms entirely, which is what relation pruning exploits."""
    target = 1.75
    aligned = sum((v - target) ** 2 for v in x)
    cross = sum(
        (x[i] - x[j]) ** 2 for i in range(len(x)) for j in range(i + 1, len(x))
    )
    return aligned + 4.0 * cross


_SYNTHETIC_FN = {
    "sphere": sphere_value,
    "branin": branin_value,
    "hartmann3": hartmann3_value,
    "valley": valley_value,
}


@dataclass(frozen=True)
class SyntheticBench:
    name: str
    pass_threshold: float | None = None

    def __call__(self, assignment: dict[Handle, float]) -> EvalResult:
        fn = _SYNTHETIC_FN[self.name]
        value = fn(_coords(assignment))
        return DirectResult(self.pass_threshold)(assignment, value)


# -------------------------------------------------------------- external sim


@dataclass(frozen=True)
class ExternalSim:
    """Run a simulator command per evaluation.

    Placeholders in the command: ``{DEV.PARAM}`` becomes the assigned
    value, ``{NETLIST}`` becomes the path of the sized netlist written for
    this evaluation.  The command must print ``<metric> <value>`` lines on
    stdout; nonzero exit, timeout, or unparsable output mark the
    evaluation failed rather than raising.
    """

    command: tuple[str, ...]
    objective: ObjectiveSpec
    netlist: Netlist | None = None
    timeout: float = 60.0
    workdir: str | None = None

    def _sized_netlist(self, assignment) -> Netlist:
        devices = []
        for dev in self.netlist.devices:
            params = dict(dev.params)
            for param in params:
                handle = Handle(dev.name, param)
                if handle in assignment:
                    params[param] = assignment[handle]
            devices.append(dc_replace(dev, params=params))
        return dc_replace(self.netlist, devices=tuple(devices))

    def __call__(self, assignment: dict[Handle, float]) -> EvalResult:
        with tempfile.TemporaryDirectory(dir=self.workdir) as tmp:
            substitutions = {str(h): repr(v) for h, v in assignment.items()}
            if self.netlist is not None:
                path = Path(tmp) / "sized.sp"
                path.write_text(emit_netlist(self._sized_netlist(assignment)))
                substitutions["NETLIST"] = str(path)
            args = []
            for arg in self.command:
                for key, value in substitutions.items():
                    arg = arg.replace("{" + key + "}", value)
                args.append(arg)
            leftover = [a for a in args if _PLACEHOLDER_RE.search(a)]
            if leftover:
                return make_result(
                    assignment, {}, self.objective, ok=False,
                    note=f"unresolved placeholder in {leftover[0]!r}",
                )
            try:
                proc = subprocess.run(
                    args,
                    capture_output=True,
                    text=True,
                    timeout=self.timeout,
                    cwd=tmp,
                )
            except (subprocess.TimeoutExpired, OSError) as exc:
                return make_result(
                    assignment, {}, self.objective, ok=False, note=str(exc)
                )
        if proc.returncode != 0:
            return make_result(
                assignment,
                {},
                self.objective,
                ok=False,
                note=f"exit {proc.returncode}: {proc.stderr.strip()[:200]}",
            )
        measurements: dict[str, float] = {}
        for line in proc.stdout.splitlines():
            parts = line.split()
            if len(parts) == 2:
                try:
                    measurements[parts[0]] = float(parts[1])
                except ValueError:
                    continue
        return make_result(assignment, measurements, self.objective)


# ------------------------------------------------------------------ registry

ANALYTIC = {"opamp": AnalyticOpAmp, "bgr": AnalyticBGR, "ldo": AnalyticLDO}


def build_evaluator(
    name: str,
    netlist: Netlist | None = None,
    objective: ObjectiveSpec | None = None,
    options: dict | None = None,
):
    """Assemble an evaluator by name.

    Synthetic benches: sphere, branin, hartmann3, valley (option
    ``pass_threshold``).  Analytic circuits: opamp, bgr, ldo (netlist and
    objective required; extra options forward to the model).  ``external``
    wraps a simulator command (option ``command`` is the argv list).
    """
    options = dict(options or {})
    if name in _SYNTHETIC_FN:
        return SyntheticBench(name, options.pop("pass_threshold", None))
    if name in ANALYTIC:
        if netlist is None or objective is None:
            raise EvaluatorError(f"{name} needs a netlist and an objective")
        return ANALYTIC[name](netlist, objective, **options)
    if name == "external":
        command = options.pop("command", None)
        if not command or objective is None:
            raise EvaluatorError("external needs a command and an objective")
        return ExternalSim(tuple(command), objective, netlist, **options)
    raise EvaluatorError(f"unknown evaluator {name!r}")
