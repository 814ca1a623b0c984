"""Design targets and the scalar figure of merit.

An ObjectiveSpec is a list of one-sided metric requirements.  Each metric
contributes its normalized shortfall to the figure of merit, so fom == 0
means every target is met and larger is worse.  Evaluators attach an
additive penalty for pathologies the metrics cannot express (for example
an unstable operating point); the penalty keeps "fom == 0 iff passing"
intact because it is only ever added when something is wrong.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .netlist import Handle, parse_value

GE, LE = "ge", "le"


class ObjectiveError(ValueError):
    """Raised for malformed objective tables."""


@dataclass(frozen=True)
class MetricSpec:
    """One requirement: metric >= threshold or metric <= threshold.

    ``normalizer`` scales the shortfall so metrics with different units
    compare; it defaults to |threshold| (or 1 when the threshold is 0).
    """

    name: str
    sense: str
    threshold: float
    normalizer: float = 0.0

    def __post_init__(self):
        if self.sense not in (GE, LE):
            raise ObjectiveError(f"unknown sense {self.sense!r}")
        if not math.isfinite(self.threshold):
            raise ObjectiveError(f"{self.name}: non-finite threshold")
        if self.normalizer < 0 or not math.isfinite(self.normalizer):
            raise ObjectiveError(f"{self.name}: bad normalizer")
        if self.normalizer == 0.0:
            scale = abs(self.threshold) or 1.0
            object.__setattr__(self, "normalizer", scale)

    def shortfall(self, value: float) -> float:
        """Normalized amount by which ``value`` misses the target (>= 0)."""
        if not math.isfinite(value):
            return math.inf
        gap = self.threshold - value if self.sense == GE else value - self.threshold
        return max(0.0, gap) / self.normalizer

    def met(self, value: float) -> bool:
        return self.shortfall(value) == 0.0


@dataclass(frozen=True)
class ObjectiveSpec:
    metrics: tuple[MetricSpec, ...]

    def __post_init__(self):
        # two senses on one metric form a window; repeating a sense is a typo
        keys = [(m.name, m.sense) for m in self.metrics]
        if len(set(keys)) != len(keys):
            raise ObjectiveError("duplicate requirement on one metric")

    def fom(self, measurements: dict[str, float]) -> float:
        """Sum of normalized shortfalls; missing measurements are infinite."""
        total = 0.0
        for metric in self.metrics:
            if metric.name not in measurements:
                return math.inf
            total += metric.shortfall(measurements[metric.name])
        return total

    def unmet(self, measurements: dict[str, float]) -> tuple[str, ...]:
        return tuple(
            m.name
            for m in self.metrics
            if not m.met(measurements.get(m.name, math.nan))
        )


def parse_objective(text: str) -> ObjectiveSpec:
    """Parse a target table.

    One requirement per line: ``<metric> >= <value> [norm <value>]`` or
    ``<metric> <= <value> [norm <value>]``.  Values take the usual unit
    suffixes; ``#`` starts a comment.
    """
    metrics: list[MetricSpec] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if len(tokens) not in (3, 5) or tokens[1] not in (">=", "<="):
            raise ObjectiveError(
                f"line {lineno}: expected '<metric> >=|<= value [norm value]', "
                f"got {line!r}"
            )
        normalizer = 0.0
        if len(tokens) == 5:
            if tokens[3] != "norm":
                raise ObjectiveError(f"line {lineno}: expected 'norm', got {tokens[3]!r}")
            try:
                normalizer = parse_value(tokens[4])
            except ValueError as exc:
                raise ObjectiveError(f"line {lineno}: {exc}") from None
        try:
            threshold = parse_value(tokens[2])
        except ValueError as exc:
            raise ObjectiveError(f"line {lineno}: {exc}") from None
        sense = GE if tokens[1] == ">=" else LE
        metrics.append(MetricSpec(tokens[0], sense, threshold, normalizer))
    if not metrics:
        raise ObjectiveError("objective table holds no requirements")
    return ObjectiveSpec(tuple(metrics))


def emit_objective(spec: ObjectiveSpec) -> str:
    lines = []
    for m in spec.metrics:
        op = ">=" if m.sense == GE else "<="
        lines.append(f"{m.name} {op} {m.threshold!r} norm {m.normalizer!r}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class EvalResult:
    """Outcome of one evaluation.

    ``ok`` is False when the evaluation itself failed (simulator crash,
    non-physical operating point); failed evaluations carry fom == inf so
    they can never become incumbents.  ``passed`` means every requirement
    was met with zero penalty.
    """

    assignment: dict[Handle, float]
    measurements: dict[str, float]
    fom: float
    ok: bool = True
    passed: bool = False
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "assignment": {str(h): v for h, v in sorted(self.assignment.items())},
            "measurements": dict(sorted(self.measurements.items())),
            "fom": self.fom,
            "ok": self.ok,
            "passed": self.passed,
            "note": self.note,
        }


def make_result(
    assignment: dict[Handle, float],
    measurements: dict[str, float],
    spec: ObjectiveSpec,
    ok: bool = True,
    penalty: float = 0.0,
    note: str = "",
) -> EvalResult:
    """Fold measurements into an EvalResult under ``spec``."""
    if not ok:
        return EvalResult(assignment, measurements, math.inf, False, False, note)
    fom = spec.fom(measurements) + penalty
    return EvalResult(
        assignment, measurements, fom, True, fom == 0.0, note
    )


@dataclass(frozen=True)
class DirectResult:
    """Helper for plain function minimization without metric tables."""

    pass_threshold: float | None = None

    def __call__(self, assignment, value: float, note: str = "") -> EvalResult:
        ok = math.isfinite(value)
        passed = (
            ok
            and self.pass_threshold is not None
            and value <= self.pass_threshold
        )
        return EvalResult(
            assignment,
            {"value": value},
            value if ok else math.inf,
            ok,
            passed,
            note,
        )
