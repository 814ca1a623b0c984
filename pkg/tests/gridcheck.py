"""Exhaustive grid oracle for pruning equivalence checks.

Instances live on power-of-two grids: every handle's interval is a run of
contiguous powers of two, every multiplier and fix value is a power of two.
Products and quotients of such values are exact in binary floating point,
so relation satisfaction and objective values compare with ``==`` rather
than tolerances.

The oracle side never touches ``normalize`` or ``prune``: it enumerates
the full grid and filters by the raw relation records one at a time.  The
arm under test normalizes, prunes, enumerates the free grid, and expands.
Both arms must visit the same assignment set and find the same minimum.
"""

from __future__ import annotations

import itertools
import math
import random

from sizekit.netlist import Handle
from sizekit.relations import (
    ConflictError,
    InfeasibleBoundError,
    RelationKind,
    SizingRelation,
    normalize,
)
from sizekit.space import ParameterSpace, expand, feasible, prune


def pow2_points(lo: float, hi: float) -> list[float]:
    """Exact powers of two inside [lo, hi]."""
    e_lo = math.ceil(round(math.log2(lo), 9))
    e_hi = math.floor(round(math.log2(hi), 9))
    return [float(2.0**e) for e in range(e_lo, e_hi + 1)]


def random_instance(seed: int):
    """A small space, consistent-by-construction relations, and an objective.

    Handles are R1..Rn resistances (n <= 4) with <= 8 grid points each.
    Ratio edges come from latent per-device exponents, so chains and cycles
    are always mutually consistent; fixes and bounds are grid-aligned but
    may still clash with ratio closure, which is exactly the case the two
    arms have to agree on.
    """
    rng = random.Random(seed)
    n = rng.randint(2, 4)
    devices = [f"R{i + 1}" for i in range(n)]
    handles = [Handle(dev, "R") for dev in devices]

    spans = []
    for _ in range(n):
        lo_e = rng.randint(0, 3)
        npts = rng.randint(2, 8)
        spans.append((lo_e, lo_e + npts - 1))
    grids = [[float(2.0**e) for e in range(a, b + 1)] for a, b in spans]
    space = ParameterSpace(
        handles=tuple(handles),
        bounds=tuple((g[0], g[-1]) for g in grids),
        scales=("log",) * n,
    )

    latent = [rng.randint(0, 3) for _ in range(n)]
    relations: list[SizingRelation] = []
    for _ in range(rng.randint(0, 2)):
        i, j = rng.sample(range(n), 2)
        mult = float(2.0 ** (latent[j] - latent[i]))
        if mult == 1.0 and rng.random() < 0.5:
            relations.append(
                SizingRelation(
                    (devices[i], devices[j]), "R", RelationKind.EQUAL, (1.0, 1.0)
                )
            )
        else:
            relations.append(
                SizingRelation(
                    (devices[i], devices[j]), "R", RelationKind.RATIO, (1.0, mult)
                )
            )
    if rng.random() < 0.35:
        i = rng.randrange(n)
        value = rng.choice(grids[i])
        relations.append(
            SizingRelation((devices[i],), "R", RelationKind.FIX, (value,))
        )
    if rng.random() < 0.35:
        i = rng.randrange(n)
        a, b = spans[i]
        lo_e = rng.randint(a - 1, b)
        hi_e = rng.randint(lo_e, b + 1)
        relations.append(
            SizingRelation(
                (devices[i],),
                "R",
                RelationKind.BOUND,
                (float(2.0**lo_e), float(2.0**hi_e)),
            )
        )
    if rng.random() < 0.35:
        i, j = rng.sample(range(n), 2)
        relations.append(
            SizingRelation(
                (devices[i], devices[j]),
                "R",
                RelationKind.GE,
                (float(2.0 ** rng.randint(-1, 1)),),
            )
        )

    targets = [rng.choice(g) for g in grids]

    def objective(assignment: dict[Handle, float]) -> float:
        return sum(
            (k + 1) * (assignment[h] - t) ** 2
            for k, (h, t) in enumerate(zip(handles, targets))
        )

    return space, relations, grids, objective


def satisfies_raw(assignment, relations) -> bool:
    """Check a full assignment against raw relation records, exactly."""
    for rel in relations:
        values = [assignment[h] for h in rel.handles()]
        if rel.kind is RelationKind.EQUAL:
            if any(v != values[0] for v in values):
                return False
        elif rel.kind is RelationKind.RATIO:
            if any(
                v != coef * values[0]
                for v, coef in zip(values, rel.coefficients)
            ):
                return False
        elif rel.kind is RelationKind.BOUND:
            lo, hi = rel.coefficients
            if any(not lo <= v <= hi for v in values):
                return False
        elif rel.kind is RelationKind.FIX:
            if any(v != rel.coefficients[0] for v in values):
                return False
        elif rel.kind is RelationKind.GE:
            if values[0] < rel.coefficients[0] * values[1]:
                return False
    return True


def full_minimum(space, relations, grids, objective):
    """(best value, count) by brute force over the full grid."""
    best = None
    count = 0
    for combo in itertools.product(*grids):
        assignment = dict(zip(space.handles, combo))
        if not satisfies_raw(assignment, relations):
            continue
        count += 1
        value = objective(assignment)
        if best is None or value < best:
            best = value
    return best, count


def pruned_minimum(space, relations, objective):
    """(best value, count) over the free grid, through normalize and expand."""
    ps = prune(space, normalize(relations))
    free_grids = [pow2_points(lo, hi) for lo, hi in ps.free_bounds]
    best = None
    count = 0
    for x in itertools.product(*free_grids):
        if not feasible(ps, x):
            continue
        assignment = expand(ps, x)
        count += 1
        value = objective(assignment)
        if best is None or value < best:
            best = value
    return best, count


def check_instance(seed: int) -> str:
    """Run one instance end to end; returns a short outcome tag.

    Raises AssertionError when the two arms disagree.
    """
    space, relations, grids, objective = random_instance(seed)
    best_full, count_full = full_minimum(space, relations, grids, objective)
    try:
        best_pruned, count_pruned = pruned_minimum(space, relations, objective)
    except (InfeasibleBoundError, ConflictError):
        assert count_full == 0, (
            f"seed {seed}: pruning reported infeasible but the grid holds "
            f"{count_full} satisfying assignments"
        )
        return "infeasible"
    assert count_full == count_pruned, (
        f"seed {seed}: grid holds {count_full} assignments, pruned arm "
        f"visited {count_pruned}"
    )
    if count_full == 0:
        return "empty"
    assert best_full == best_pruned, (
        f"seed {seed}: minima differ, {best_full} vs {best_pruned}"
    )
    return "ok"
