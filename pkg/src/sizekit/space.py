"""Search-space construction, relation-driven pruning, and expansion.

A ParameterSpace is an ordered box over the netlist's sizable handles.
``prune`` folds a RelationSet into it: each ratio class keeps only its
representative (with the member bounds mapped through the multipliers and
intersected), fixed handles disappear, and cross-handle inequalities either
tighten the box, resolve at prune time, or remain as residual linear
constraints over the free coordinates.  ``expand`` maps a free vector back
to a full assignment that satisfies every equality, ratio, and fix exactly;
integer-valued M handles are rounded (representatives first, so integer
ratio classes stay exact).

Geometric (log) scale is the default for W, L, R, C and DC handles, linear
for the integer multiplier M; a bounds table line may override the scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .netlist import (
    SIZABLE_PARAMS,
    DeviceKind,
    Handle,
    Netlist,
    parse_value,
)
from .relations import InfeasibleBoundError, RelationSet, empty_relation_set

LOG_SCALE = "log"
LINEAR_SCALE = "linear"


class SpaceError(ValueError):
    """Raised for malformed bound tables or inconsistent spaces."""


class UnknownHandleError(SpaceError):
    """A relation references a handle the space does not contain."""


def default_scale(param: str) -> str:
    return LINEAR_SCALE if param == "M" else LOG_SCALE


@dataclass(frozen=True)
class BoundTable:
    """Per-kind default intervals plus per-device overrides.

    defaults:  (kind value, param) -> (lo, hi, scale or None)
    overrides: (device, param)     -> (lo, hi, scale or None)
    """

    defaults: dict[tuple[str, str], tuple[float, float, str | None]]
    overrides: dict[tuple[str, str], tuple[float, float, str | None]]


_KIND_WORDS = {kind.value: kind for kind in DeviceKind}


def parse_bounds(text: str) -> BoundTable:
    """Parse a bounds table.

    Default lines: ``<kind> <param> <lo> <hi> [log|linear]``
    Override lines: ``<device>.<param> <lo> <hi> [log|linear]``
    ``#`` starts a comment.
    """
    defaults: dict[tuple[str, str], tuple[float, float, str | None]] = {}
    overrides: dict[tuple[str, str], tuple[float, float, str | None]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        is_override = "." in tokens[0]
        expected = (3, 4) if is_override else (4, 5)
        if len(tokens) not in expected:
            form = (
                "'<device>.<param> lo hi [scale]'"
                if is_override
                else "'<kind> <param> lo hi [scale]'"
            )
            raise SpaceError(f"line {lineno}: expected {form}, got {line!r}")
        lo_tok, hi_tok = tokens[expected[0] - 2], tokens[expected[0] - 1]
        scale: str | None = None
        if len(tokens) == expected[1]:
            scale = tokens[-1].lower()
            if scale not in (LOG_SCALE, LINEAR_SCALE):
                raise SpaceError(f"line {lineno}: unknown scale {tokens[-1]!r}")
        try:
            lo, hi = parse_value(lo_tok), parse_value(hi_tok)
        except ValueError as exc:
            raise SpaceError(f"line {lineno}: {exc}") from None
        if not (lo > 0 and hi > 0 and lo < hi):
            raise SpaceError(
                f"line {lineno}: need 0 < lo < hi, got [{lo:g},{hi:g}]"
            )
        entry = (lo, hi, scale)
        if is_override:
            device, _, dparam = tokens[0].partition(".")
            if not device or not dparam:
                raise SpaceError(f"line {lineno}: malformed override {tokens[0]!r}")
            overrides[(device, dparam)] = entry
        elif tokens[0] == "mos":
            defaults[("nmos", tokens[1])] = entry
            defaults[("pmos", tokens[1])] = entry
        else:
            if tokens[0] not in _KIND_WORDS:
                raise SpaceError(f"line {lineno}: unknown device kind {tokens[0]!r}")
            defaults[(tokens[0], tokens[1])] = entry
    return BoundTable(defaults, overrides)


@dataclass(frozen=True)
class ParameterSpace:
    """Ordered box over sizable handles."""

    handles: tuple[Handle, ...]
    bounds: tuple[tuple[float, float], ...]
    scales: tuple[str, ...]

    def __post_init__(self):
        if not (len(self.handles) == len(self.bounds) == len(self.scales)):
            raise SpaceError("handles, bounds, and scales must align")
        if len(set(self.handles)) != len(self.handles):
            raise SpaceError("duplicate handle in space")
        for handle, (lo, hi), scale in zip(self.handles, self.bounds, self.scales):
            if not (lo > 0 and lo < hi and math.isfinite(hi)):
                raise SpaceError(f"{handle}: need 0 < lo < hi, got [{lo:g},{hi:g}]")
            if scale not in (LOG_SCALE, LINEAR_SCALE):
                raise SpaceError(f"{handle}: unknown scale {scale!r}")

    @property
    def dim(self) -> int:
        return len(self.handles)

    def index(self, handle: Handle) -> int:
        try:
            return self.handles.index(handle)
        except ValueError:
            raise UnknownHandleError(f"handle {handle} not in space") from None


def build_space(netlist: Netlist, table: BoundTable) -> ParameterSpace:
    """Box up every sizable handle of the netlist.

    Every handle must find an interval: a (device, param) override or a
    (kind, param) default.  Missing defaults are reported together.
    """
    devmap = netlist.device_map()
    handles = tuple(netlist.sizable_parameters())
    bounds: list[tuple[float, float]] = []
    scales: list[str] = []
    missing: list[str] = []
    for handle in handles:
        kind = devmap[handle.device].kind
        entry = table.overrides.get((handle.device, handle.param))
        if entry is None:
            entry = table.defaults.get((kind.value, handle.param))
        if entry is None:
            missing.append(f"{kind.value}.{handle.param} (for {handle})")
            continue
        lo, hi, scale = entry
        bounds.append((lo, hi))
        scales.append(scale or default_scale(handle.param))
    if missing:
        raise SpaceError(
            "no bound table entry for: " + ", ".join(sorted(set(missing)))
        )
    return ParameterSpace(handles, tuple(bounds), tuple(scales))


@dataclass(frozen=True)
class LinearInequality:
    """coef_a * x[idx_a] >= coef_b * x[idx_b] over free coordinates."""

    idx_a: int
    coef_a: float
    idx_b: int
    coef_b: float

    def satisfied(self, x, tol: float = 1e-9) -> bool:
        lhs = self.coef_a * x[self.idx_a]
        rhs = self.coef_b * x[self.idx_b]
        return lhs >= rhs - tol * max(abs(lhs), abs(rhs), 1e-300)


# Expansion roles, one per full handle.
_FREE, _DEP, _FIXED = "free", "dep", "fixed"


@dataclass(frozen=True)
class PrunedSpace:
    """A ParameterSpace with a RelationSet folded in.

    ``roles`` aligns with ``space.handles``: ('free', i) reads free
    coordinate i, ('dep', i, k) is k times free coordinate i, and
    ('fixed', v) is the constant v.
    """

    space: ParameterSpace
    free_handles: tuple[Handle, ...]
    free_bounds: tuple[tuple[float, float], ...]
    free_scales: tuple[str, ...]
    roles: tuple[tuple, ...]
    residual_inequalities: tuple[LinearInequality, ...] = ()

    @property
    def dim(self) -> int:
        return len(self.free_handles)

    def free_index(self, handle: Handle) -> int:
        try:
            return self.free_handles.index(handle)
        except ValueError:
            raise UnknownHandleError(f"handle {handle} is not free") from None


def _intersect(
    a: tuple[float, float], b: tuple[float, float], what: str
) -> tuple[float, float]:
    lo, hi = max(a[0], b[0]), min(a[1], b[1])
    if lo > hi:
        raise InfeasibleBoundError(
            f"empty interval for {what}: [{a[0]:g},{a[1]:g}] meets [{b[0]:g},{b[1]:g}]"
        )
    return lo, hi


def prune(space: ParameterSpace, rs: RelationSet) -> PrunedSpace:
    """Fold a RelationSet into the space.

    Raises UnknownHandleError if the relation set references a handle the
    space lacks, and InfeasibleBoundError when an intersection comes up
    empty (including a fixed value falling outside its interval).
    """
    # effective per-handle intervals: space box meets relation bounds
    intervals: dict[Handle, tuple[float, float]] = {}
    for handle, box in zip(space.handles, space.bounds):
        intervals[handle] = box
    for handle, interval in rs.bounds.items():
        if handle not in intervals:
            raise UnknownHandleError(f"bound on unknown handle {handle}")
        intervals[handle] = _intersect(intervals[handle], interval, str(handle))

    for handle in rs.fixes:
        if handle not in intervals:
            raise UnknownHandleError(f"fix on unknown handle {handle}")
    for cls in rs.classes:
        for handle in cls.handles:
            if handle not in intervals:
                raise UnknownHandleError(f"relation on unknown handle {handle}")

    tol = 1e-9
    for handle, value in rs.fixes.items():
        lo, hi = intervals[handle]
        slack = tol * max(abs(lo), abs(hi), abs(value))
        if value < lo - slack or value > hi + slack:
            raise InfeasibleBoundError(
                f"fixed value {value:g} for {handle} lies outside [{lo:g},{hi:g}]"
            )

    # representative intervals for unfixed classes
    rep_of: dict[Handle, tuple[Handle, float]] = {}
    rep_interval: dict[Handle, tuple[float, float]] = {}
    for cls in rs.classes:
        if cls.rep in rs.fixes:
            continue  # the whole class is fixed via closure
        interval = intervals[cls.rep]
        for handle, mult in cls.members:
            lo, hi = intervals[handle]
            interval = _intersect(
                interval, (lo / mult, hi / mult), f"class of {cls.rep}"
            )
            rep_of[handle] = (cls.rep, mult)
        rep_interval[cls.rep] = interval

    free_handles: list[Handle] = []
    free_bounds: list[tuple[float, float]] = []
    free_scales: list[str] = []
    roles: list[tuple] = []
    free_index: dict[Handle, int] = {}

    for handle, scale in zip(space.handles, space.scales):
        if handle in rs.fixes:
            roles.append((_FIXED, rs.fixes[handle]))
            continue
        if handle in rep_of and rep_of[handle][0] != handle:
            roles.append((None,))  # patched below once rep indices are known
            continue
        interval = rep_interval.get(handle, intervals[handle])
        free_index[handle] = len(free_handles)
        roles.append((_FREE, len(free_handles)))
        free_handles.append(handle)
        free_bounds.append(interval)
        free_scales.append(scale)

    for pos, handle in enumerate(space.handles):
        if roles[pos] == (None,):
            rep, mult = rep_of[handle]
            roles[pos] = (_DEP, free_index[rep], mult)

    # inequalities: param(a) >= k * param(b)
    residuals: list[LinearInequality] = []
    for param, dev_a, k, dev_b in rs.inequalities:
        ha, hb = Handle(dev_a, param), Handle(dev_b, param)
        for h in (ha, hb):
            if h not in intervals:
                raise UnknownHandleError(f"inequality on unknown handle {h}")

        def side(handle):
            if handle in rs.fixes:
                return None, rs.fixes[handle]
            if handle in rep_of and rep_of[handle][0] != handle:
                rep, mult = rep_of[handle]
                return free_index[rep], mult
            return free_index[handle], 1.0

        ia, ca = side(ha)
        ib, cb = side(hb)
        if ia is None and ib is None:
            if ca < k * cb - tol * max(abs(ca), abs(k * cb)):
                raise InfeasibleBoundError(
                    f"inequality {dev_a}.{param} >= {k:g}*{dev_b}.{param} is "
                    f"violated by fixed values {ca:g} and {cb:g}"
                )
            continue
        if ia is not None and ib is not None and ia == ib:
            if ca >= k * cb:
                continue  # positive coordinates: always satisfied
            raise InfeasibleBoundError(
                f"inequality {dev_a}.{param} >= {k:g}*{dev_b}.{param} can never "
                f"hold inside one ratio class"
            )
        if ia is None:
            # constant >= k*cb*x  =>  x <= ca/(k*cb)
            lo, hi = free_bounds[ib]
            free_bounds[ib] = _intersect(
                (lo, hi), (lo, ca / (k * cb)), str(free_handles[ib])
            )
            continue
        if ib is None:
            # ca*x >= k*constant  =>  x >= k*cb/ca
            lo, hi = free_bounds[ia]
            free_bounds[ia] = _intersect(
                (lo, hi), (k * cb / ca, hi), str(free_handles[ia])
            )
            continue
        residuals.append(LinearInequality(ia, ca, ib, k * cb))

    return PrunedSpace(
        space=space,
        free_handles=tuple(free_handles),
        free_bounds=tuple(free_bounds),
        free_scales=tuple(free_scales),
        roles=tuple(roles),
        residual_inequalities=tuple(residuals),
    )


def identity_pruned(space: ParameterSpace) -> PrunedSpace:
    """The pruned view of a space with no relations at all."""
    return prune(space, empty_relation_set())


def _round_multiplier(value: float) -> float:
    return float(max(1, round(value)))


def expand(ps: PrunedSpace, x) -> dict[Handle, float]:
    """Map a free vector to a full assignment.

    Every equality/ratio/fix is satisfied exactly; M handles are rounded to
    integers >= 1 (representatives first, so integer ratio classes survive
    rounding).  Raises SpaceError for inputs outside the free box.
    """
    if len(x) != ps.dim:
        raise SpaceError(f"free vector has {len(x)} coordinates, space has {ps.dim}")
    free_values: list[float] = []
    for value, handle, (lo, hi) in zip(x, ps.free_handles, ps.free_bounds):
        value = float(value)
        slack = 1e-9 * (hi - lo)
        if not (lo - slack <= value <= hi + slack):
            raise SpaceError(
                f"{handle}: value {value:g} outside [{lo:g},{hi:g}]"
            )
        if handle.param == "M":
            value = _round_multiplier(value)
        free_values.append(value)

    assignment: dict[Handle, float] = {}
    for handle, role in zip(ps.space.handles, ps.roles):
        tag = role[0]
        if tag == _FREE:
            assignment[handle] = free_values[role[1]]
        elif tag == _DEP:
            value = role[2] * free_values[role[1]]
            if handle.param == "M":
                value = _round_multiplier(value)
            assignment[handle] = value
        else:
            value = role[1]
            if handle.param == "M":
                value = _round_multiplier(value)
            assignment[handle] = value
    return assignment


def feasible(ps: PrunedSpace, x) -> bool:
    """Check residual inequalities at a free vector."""
    return all(ineq.satisfied(x) for ineq in ps.residual_inequalities)


def inequality_violation(ps: PrunedSpace, x) -> float:
    """Normalized total violation of residual inequalities at x (0 if none)."""
    total = 0.0
    for ineq in ps.residual_inequalities:
        lhs = ineq.coef_a * x[ineq.idx_a]
        rhs = ineq.coef_b * x[ineq.idx_b]
        if lhs < rhs:
            total += (rhs - lhs) / max(abs(rhs), 1e-300)
    return total


@dataclass(frozen=True)
class SpaceReduction:
    dims_removed: int
    volume_ratio: float


def _scaled_width(interval: tuple[float, float], scale: str) -> float:
    lo, hi = interval
    return math.log(hi) - math.log(lo) if scale == LOG_SCALE else hi - lo


def volume_reduction(space: ParameterSpace, ps: PrunedSpace) -> SpaceReduction:
    """Dimension loss and box-volume ratio (in scaled coordinates)."""
    log_full = sum(
        math.log(_scaled_width(b, s)) for b, s in zip(space.bounds, space.scales)
    )
    log_free = sum(
        math.log(_scaled_width(b, s))
        for b, s in zip(ps.free_bounds, ps.free_scales)
    )
    return SpaceReduction(
        dims_removed=space.dim - ps.dim,
        volume_ratio=math.exp(log_free - log_full),
    )


def render_report(space: ParameterSpace, ps: PrunedSpace, rs: RelationSet) -> str:
    """Human-readable pruning report for the dry-run command."""
    lines = [f"full dimensions: {space.dim}", f"free dimensions: {ps.dim}"]
    reduction = volume_reduction(space, ps)
    lines.append(f"dimensions removed: {reduction.dims_removed}")
    lines.append(f"volume ratio (scaled): {reduction.volume_ratio:.6g}")
    for handle, (lo, hi), scale in zip(
        ps.free_handles, ps.free_bounds, ps.free_scales
    ):
        lines.append(f"free {handle} in [{lo:g},{hi:g}] {scale}")
    for cls in rs.classes:
        members = " ".join(f"{h}x{k:g}" for h, k in cls.members)
        lines.append(f"class rep={cls.rep} {members}")
    for handle, value in sorted(rs.fixes.items()):
        lines.append(f"fixed {handle} = {value:g}")
    for ineq in ps.residual_inequalities:
        lines.append(
            f"residual {ps.free_handles[ineq.idx_a]}*{ineq.coef_a:g} >= "
            f"{ps.free_handles[ineq.idx_b]}*{ineq.coef_b:g}"
        )
    return "\n".join(lines) + "\n"
