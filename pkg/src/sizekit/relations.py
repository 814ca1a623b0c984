"""Sizing-relation records and their normalization algebra.

Relation records are line-oriented text, one record per line, ``#`` starting
a comment line and ``;`` separating an optional free-text rationale:

    equal W M1 M2 M3           ; matched devices
    ratio W M4=2*M3            ; output device twice the reference
    bound W M1 M2 in [1u,10u]  ; per-device box constraint
    fix L M7 = 0.5u
    ge W M6 >= 4*M3            ; cross-device inequality

Coefficients and bounds accept SPICE unit suffixes and resolve to SI floats.
``normalize`` folds equal/ratio records into equivalence classes with exact
multipliers relative to the lexicographically smallest member, intersects
bounds, propagates fixed values through classes, and reports conflicts
(inconsistent ratio cycles or fixes) and empty bound intersections.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass

from .netlist import (
    SIZABLE_PARAMS,
    DeviceKind,
    Handle,
    Netlist,
    format_value,
    parse_value,
)

RATIO_TOLERANCE = 1e-9


class RelationError(ValueError):
    """Raised for malformed relation records."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConflictError(RelationError):
    """Two relations imply disagreeing ratios or fixed values."""

    def __init__(self, message: str, first=None, second=None):
        super().__init__(message)
        self.first = first
        self.second = second


class InfeasibleBoundError(RelationError):
    """A bound intersection (or fix vs. bound check) is empty."""


class RelationKind(str, enum.Enum):
    EQUAL = "equal"
    RATIO = "ratio"
    BOUND = "bound"
    FIX = "fix"
    GE = "ge"


@dataclass(frozen=True)
class SizingRelation:
    """One relation over a single parameter of one or more devices.

    coefficients by kind:
      equal: one 1.0 per device
      ratio: per-device multipliers relative to devices[0] (first entry 1.0)
      bound: (lo, hi) applied to each listed device independently
      fix:   (value,) applied to each listed device
      ge:    (k,) meaning param(devices[0]) >= k * param(devices[1])
    """

    devices: tuple[str, ...]
    param: str
    kind: RelationKind
    coefficients: tuple[float, ...]
    provenance: str = "manual"
    rationale: str = ""

    def __post_init__(self):
        if not self.devices:
            raise RelationError("relation needs at least one device")
        if self.provenance not in ("topology", "agent", "manual"):
            raise RelationError(f"unknown provenance {self.provenance!r}")
        for coef in self.coefficients:
            if not (coef > 0 and math.isfinite(coef)):
                raise RelationError(f"non-positive coefficient {coef}")
        kind = self.kind
        if kind in (RelationKind.EQUAL, RelationKind.RATIO):
            if len(self.devices) < 2:
                raise RelationError(f"{kind.value} relation needs >= 2 devices")
            if len(self.coefficients) != len(self.devices):
                raise RelationError("one coefficient per device required")
            if self.coefficients[0] != 1.0:
                raise RelationError("first coefficient must be 1")
            if kind is RelationKind.EQUAL and any(
                c != 1.0 for c in self.coefficients
            ):
                raise RelationError("equal relation requires unit coefficients")
            if len(set(self.devices)) != len(self.devices):
                raise RelationError("duplicate device in relation")
        elif kind is RelationKind.BOUND:
            if len(self.coefficients) != 2:
                raise RelationError("bound relation needs (lo, hi)")
            if self.coefficients[0] > self.coefficients[1]:
                raise RelationError("bound lo must not exceed hi")
        elif kind is RelationKind.FIX:
            if len(self.coefficients) != 1:
                raise RelationError("fix relation needs exactly one value")
        elif kind is RelationKind.GE:
            if len(self.devices) != 2 or len(self.coefficients) != 1:
                raise RelationError("ge relation needs two devices and one coefficient")
            if self.devices[0] == self.devices[1]:
                raise RelationError("duplicate device in relation")

    def handles(self) -> tuple[Handle, ...]:
        return tuple(Handle(dev, self.param) for dev in self.devices)

    def key(self) -> tuple:
        """Canonical identity used for deduplication and stance matching."""
        if self.kind is RelationKind.EQUAL:
            return (self.kind.value, self.param, tuple(sorted(self.devices)))
        return (self.kind.value, self.param, self.devices, self.coefficients)


_RATIO_RE = re.compile(r"^(\S+)\s*=\s*(\S+?)\s*\*\s*(\S+)$")
_BOUND_RE = re.compile(r"^(.*?)\s+in\s+\[\s*(\S+?)\s*,\s*(\S+?)\s*\]$")
_FIX_RE = re.compile(r"^(.*?)\s*=\s*(\S+)$")
_GE_RE = re.compile(r"^(\S+)\s*>=\s*(\S+?)\s*\*\s*(\S+)$")


def _coef(token: str, lineno: int | None) -> float:
    try:
        value = parse_value(token)
    except ValueError as exc:
        raise RelationError(str(exc), lineno) from None
    if not value > 0:
        raise RelationError(f"non-positive coefficient {token!r}", lineno)
    return value


def parse_record(line: str, lineno: int | None = None,
                 provenance: str = "manual") -> SizingRelation:
    """Parse a single relation record (without comment handling)."""
    body, _, rationale = line.partition(";")
    body = body.strip()
    rationale = rationale.strip()
    parts = body.split(None, 2)
    if len(parts) < 3:
        raise RelationError(f"malformed record {line.strip()!r}", lineno)
    kind_word, param, rest = parts[0].lower(), parts[1], parts[2].strip()
    try:
        kind = RelationKind(kind_word)
    except ValueError:
        raise RelationError(f"unknown relation kind {parts[0]!r}", lineno) from None

    try:
        if kind is RelationKind.EQUAL:
            devices = tuple(rest.split())
            return SizingRelation(devices, param, kind, (1.0,) * len(devices),
                                  provenance, rationale)
        if kind is RelationKind.RATIO:
            match = _RATIO_RE.match(rest)
            if match is None:
                raise RelationError(
                    f"ratio record must look like 'ratio P A=k*B': {line.strip()!r}",
                    lineno,
                )
            dev, coef_tok, base = match.groups()
            return SizingRelation((base, dev), param, kind,
                                  (1.0, _coef(coef_tok, lineno)),
                                  provenance, rationale)
        if kind is RelationKind.BOUND:
            match = _BOUND_RE.match(rest)
            if match is None:
                raise RelationError(
                    f"bound record must look like 'bound P A ... in [lo,hi]': "
                    f"{line.strip()!r}", lineno,
                )
            devs, lo_tok, hi_tok = match.groups()
            devices = tuple(devs.split())
            lo, hi = _coef(lo_tok, lineno), _coef(hi_tok, lineno)
            return SizingRelation(devices, param, kind, (lo, hi),
                                  provenance, rationale)
        if kind is RelationKind.FIX:
            match = _FIX_RE.match(rest)
            if match is None:
                raise RelationError(
                    f"fix record must look like 'fix P A ... = value': "
                    f"{line.strip()!r}", lineno,
                )
            devs, val_tok = match.groups()
            devices = tuple(devs.split())
            if not devices:
                raise RelationError(f"malformed record {line.strip()!r}", lineno)
            return SizingRelation(devices, param, kind, (_coef(val_tok, lineno),),
                                  provenance, rationale)
        match = _GE_RE.match(rest)
        if match is None:
            raise RelationError(
                f"ge record must look like 'ge P A >= k*B': {line.strip()!r}",
                lineno,
            )
        dev_a, coef_tok, dev_b = match.groups()
        return SizingRelation((dev_a, dev_b), param, kind,
                              (_coef(coef_tok, lineno),), provenance, rationale)
    except RelationError as exc:
        if exc.line is None and lineno is not None:
            raise RelationError(str(exc), lineno) from None
        raise


def parse_relations(text: str, provenance: str = "manual") -> list[SizingRelation]:
    """Parse relation-file text, reporting the line number on bad records."""
    relations: list[SizingRelation] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        relations.append(parse_record(line, lineno, provenance))
    return relations


def record_of(rel: SizingRelation) -> str:
    """Serialize one relation back to record text."""
    suffix = f" ; {rel.rationale}" if rel.rationale else ""
    if rel.kind is RelationKind.EQUAL:
        return f"equal {rel.param} {' '.join(rel.devices)}{suffix}"
    if rel.kind is RelationKind.RATIO:
        base, dev = rel.devices[0], rel.devices[1]
        return (f"ratio {rel.param} {dev}={format_value(rel.coefficients[1])}*{base}"
                f"{suffix}")
    if rel.kind is RelationKind.BOUND:
        lo, hi = rel.coefficients
        return (f"bound {rel.param} {' '.join(rel.devices)} "
                f"in [{format_value(lo)},{format_value(hi)}]{suffix}")
    if rel.kind is RelationKind.FIX:
        return (f"fix {rel.param} {' '.join(rel.devices)} = "
                f"{format_value(rel.coefficients[0])}{suffix}")
    return (f"ge {rel.param} {rel.devices[0]} >= "
            f"{format_value(rel.coefficients[0])}*{rel.devices[1]}{suffix}")


def emit_relations(relations) -> str:
    return "\n".join(record_of(r) for r in relations) + "\n"


def validate(
    relations: list[SizingRelation], netlist: Netlist
) -> tuple[list[SizingRelation], list[tuple[SizingRelation, str]]]:
    """Split relations into (accepted, rejected-with-reason) for a netlist.

    Nothing is dropped silently: a relation naming an unknown device, a
    parameter the device kind does not have, or a non-integer multiplier
    ratio on the integer-valued M parameter lands in the rejection list.
    """
    devmap = netlist.device_map()
    accepted: list[SizingRelation] = []
    rejected: list[tuple[SizingRelation, str]] = []
    for rel in relations:
        reason = None
        for dev in rel.devices:
            if dev not in devmap:
                reason = f"unknown device {dev}"
                break
            if rel.param not in SIZABLE_PARAMS[devmap[dev].kind]:
                reason = (
                    f"parameter {rel.param} not applicable to "
                    f"{devmap[dev].kind.value} device {dev}"
                )
                break
        if reason is None and rel.param == "M":
            if rel.kind is RelationKind.RATIO and any(
                c != round(c) for c in rel.coefficients
            ):
                reason = "multiplier ratio must use integer coefficients"
            elif rel.kind is RelationKind.GE and any(
                c != round(c) for c in rel.coefficients
            ):
                reason = "multiplier inequality must use an integer coefficient"
        if reason is None:
            accepted.append(rel)
        else:
            rejected.append((rel, reason))
    return accepted, rejected


@dataclass(frozen=True)
class RatioClass:
    """An equivalence class of handles tied by exact multipliers.

    ``members`` maps each handle to its multiplier relative to the
    representative (the lexicographically smallest handle, multiplier 1.0).
    """

    param: str
    members: tuple[tuple[Handle, float], ...]

    @property
    def rep(self) -> Handle:
        return self.members[0][0]

    @property
    def handles(self) -> tuple[Handle, ...]:
        return tuple(h for h, _ in self.members)

    def multiplier(self, handle: Handle) -> float:
        for h, k in self.members:
            if h == handle:
                return k
        raise KeyError(handle)


@dataclass(frozen=True)
class RelationSet:
    """Normalized view of a relation list."""

    relations: tuple[SizingRelation, ...]
    classes: tuple[RatioClass, ...]
    bounds: dict[Handle, tuple[float, float]]
    fixes: dict[Handle, float]
    inequalities: tuple[tuple[str, str, float, str], ...]  # (param, a, k, b)
    bound_records: tuple[tuple, ...] = ()
    fix_records: tuple[tuple, ...] = ()

    def class_of(self, handle: Handle) -> RatioClass | None:
        for cls in self.classes:
            if handle in cls.handles:
                return cls
        return None


def empty_relation_set() -> RelationSet:
    return RelationSet((), (), {}, {}, ())


def _close_ratios(relations) -> tuple[list[RatioClass], list]:
    """Group handles tied by equal/ratio records and compute multipliers.

    Components are built from the record edges; multipliers come from a BFS
    over canonically sorted edges rooted at the smallest handle, which makes
    the result independent of record order.  Every edge is then re-checked
    against the BFS values so inconsistent cycles surface no matter how they
    were written.
    """
    edges: dict[Handle, list[tuple[Handle, float, SizingRelation]]] = {}
    touched: set[Handle] = set()

    def add_edge(a: Handle, b: Handle, ratio: float, rel: SizingRelation):
        # value(b) = ratio * value(a)
        edges.setdefault(a, []).append((b, ratio, rel))
        edges.setdefault(b, []).append((a, 1.0 / ratio, rel))
        touched.update((a, b))

    for rel in relations:
        if rel.kind not in (RelationKind.EQUAL, RelationKind.RATIO):
            continue
        handles = rel.handles()
        base = handles[0]
        for handle, coef in zip(handles[1:], rel.coefficients[1:]):
            add_edge(base, handle, coef, rel)

    classes: list[RatioClass] = []
    visited: set[Handle] = set()
    for start in sorted(touched):
        if start in visited:
            continue
        component: dict[Handle, float] = {start: 1.0}
        queue = [start]
        while queue:
            current = queue.pop(0)
            for neighbor, ratio, rel in sorted(
                edges[current], key=lambda e: (e[0], e[1])
            ):
                implied = component[current] * ratio
                if neighbor in component:
                    known = component[neighbor]
                    if abs(implied - known) > RATIO_TOLERANCE * max(
                        abs(implied), abs(known)
                    ):
                        raise ConflictError(
                            f"relations disagree on {neighbor}: "
                            f"{record_of(rel)!r} implies multiplier {implied:g} "
                            f"but the remaining records give {known:g}",
                            first=rel,
                        )
                else:
                    component[neighbor] = implied
                    queue.append(neighbor)
        visited.update(component)
        rep = min(component)
        rep_mult = component[rep]
        members = [(rep, 1.0)]
        for handle in sorted(component):
            if handle != rep:
                members.append((handle, component[handle] / rep_mult))
        classes.append(RatioClass(rep.param, tuple(members)))
    return classes, sorted(touched)


def normalize(relations: list[SizingRelation]) -> RelationSet:
    """Fold relations into a RelationSet; see the module docstring."""
    relations = list(relations)
    classes, _ = _close_ratios(relations)

    bounds: dict[Handle, tuple[float, float]] = {}
    bound_records: list[tuple] = []
    for rel in relations:
        if rel.kind is not RelationKind.BOUND:
            continue
        if rel.key() not in bound_records:
            bound_records.append(rel.key())
        lo, hi = rel.coefficients
        for handle in rel.handles():
            cur = bounds.get(handle)
            if cur is None:
                bounds[handle] = (lo, hi)
            else:
                merged = (max(cur[0], lo), min(cur[1], hi))
                if merged[0] > merged[1]:
                    raise InfeasibleBoundError(
                        f"empty bound intersection on {handle}: "
                        f"[{cur[0]:g},{cur[1]:g}] and [{lo:g},{hi:g}]"
                    )
                bounds[handle] = merged

    direct_fixes: dict[Handle, tuple[float, SizingRelation]] = {}
    fix_records: list[tuple] = []
    for rel in relations:
        if rel.kind is not RelationKind.FIX:
            continue
        if rel.key() not in fix_records:
            fix_records.append(rel.key())
        value = rel.coefficients[0]
        for handle in rel.handles():
            if handle in direct_fixes:
                known, prior = direct_fixes[handle]
                if abs(known - value) > RATIO_TOLERANCE * max(abs(known), abs(value)):
                    raise ConflictError(
                        f"conflicting fixes on {handle}: {known:g} vs {value:g}",
                        first=prior, second=rel,
                    )
            else:
                direct_fixes[handle] = (value, rel)

    # Propagate fixes through classes and check consistency.
    fixes: dict[Handle, float] = {h: v for h, (v, _) in direct_fixes.items()}
    for cls in classes:
        fixed_members = [
            (h, k, fixes[h]) for h, k in cls.members if h in fixes
        ]
        if not fixed_members:
            continue
        ref_handle, ref_mult, ref_value = fixed_members[0]
        rep_value = ref_value / ref_mult
        for handle, mult, value in fixed_members[1:]:
            implied = rep_value * mult
            if abs(implied - value) > RATIO_TOLERANCE * max(abs(implied), abs(value)):
                raise ConflictError(
                    f"fix on {handle} ({value:g}) conflicts with fix on "
                    f"{ref_handle} ({ref_value:g}) through their ratio class",
                    first=direct_fixes[ref_handle][1],
                    second=direct_fixes[handle][1],
                )
        for handle, mult in cls.members:
            fixes.setdefault(handle, rep_value * mult)

    # A fixed value must sit inside any bound on the same handle.
    for handle, value in sorted(fixes.items()):
        if handle in bounds:
            lo, hi = bounds[handle]
            slack = RATIO_TOLERANCE * max(abs(lo), abs(hi), abs(value))
            if value < lo - slack or value > hi + slack:
                raise InfeasibleBoundError(
                    f"fixed value {value:g} for {handle} lies outside its "
                    f"bound [{lo:g},{hi:g}]"
                )

    inequalities: list[tuple[str, str, float, str]] = []
    for rel in relations:
        if rel.kind is not RelationKind.GE:
            continue
        entry = (rel.param, rel.devices[0], rel.coefficients[0], rel.devices[1])
        if entry not in inequalities:
            inequalities.append(entry)

    return RelationSet(
        relations=tuple(relations),
        classes=tuple(classes),
        bounds={h: bounds[h] for h in sorted(bounds)},
        fixes={h: fixes[h] for h in sorted(fixes)},
        inequalities=tuple(sorted(inequalities)),
        bound_records=tuple(sorted(bound_records)),
        fix_records=tuple(sorted(fix_records)),
    )


def relations_of(rs: RelationSet) -> list[SizingRelation]:
    """Re-serialize a RelationSet as a minimal list of relation records.

    Normalizing the result reproduces the same classes, bounds, and fixes
    (idempotence).
    """
    out: list[SizingRelation] = []
    for cls in rs.classes:
        if len(cls.members) < 2:
            continue
        devices = tuple(h.device for h, _ in cls.members)
        coefs = tuple(k for _, k in cls.members)
        if all(k == 1.0 for k in coefs):
            out.append(SizingRelation(devices, cls.param, RelationKind.EQUAL,
                                      coefs))
        else:
            rep = cls.members[0][0]
            for handle, k in cls.members[1:]:
                out.append(
                    SizingRelation((rep.device, handle.device), cls.param,
                                   RelationKind.RATIO, (1.0, k))
                )
    grouped_bounds: dict[tuple[str, float, float], list[str]] = {}
    for handle, (lo, hi) in sorted(rs.bounds.items()):
        grouped_bounds.setdefault((handle.param, lo, hi), []).append(handle.device)
    for (param, lo, hi), devices in sorted(grouped_bounds.items()):
        out.append(SizingRelation(tuple(devices), param, RelationKind.BOUND,
                                  (lo, hi)))
    implied = {
        h for cls in rs.classes if cls.rep in rs.fixes
        for h in cls.handles if h != cls.rep
    }
    grouped_fixes: dict[tuple[str, float], list[str]] = {}
    for handle, value in sorted(rs.fixes.items()):
        if handle in implied:
            continue
        grouped_fixes.setdefault((handle.param, value), []).append(handle.device)
    for (param, value), devices in sorted(grouped_fixes.items()):
        out.append(SizingRelation(tuple(devices), param, RelationKind.FIX,
                                  (value,)))
    for param, dev_a, k, dev_b in rs.inequalities:
        out.append(SizingRelation((dev_a, dev_b), param, RelationKind.GE, (k,)))
    return out


def valid_relation_count(rs: RelationSet) -> int:
    """Count independent pieces of sizing information.

    A chain of equalities or ratios collapses into its equivalence class and
    counts once; deduplicated bound and fix records count one each.
    Inequality records are an extension and are not counted.
    """
    multi = sum(1 for cls in rs.classes if len(cls.members) >= 2)
    return multi + len(rs.bound_records) + len(rs.fix_records)


def stability_report(counts: list[list[int]]) -> list[int]:
    """Per-configuration spread (max - min) of valid-relation counts across
    repeated extraction attempts."""
    if not counts:
        raise RelationError("empty counts matrix")
    report = []
    for row in counts:
        if not row:
            raise RelationError("empty attempt row in counts matrix")
        report.append(max(row) - min(row))
    return report
