"""Batch Bayesian optimization over a pruned space, plus baselines.

The main loop fits the GP surrogate to all successful evaluations, builds
three acquisition views of the posterior (LCB, EI, PI), runs a small
elitist multi-objective evolutionary search over the unit box to find
points where the views disagree about what is promising, and picks a
batch by k-means clustering of the resulting front.  Baselines share the
evaluation budget exactly: total evaluations = init_samples +
iterations * batch_size (unless stop_on_pass ends a run early).

Everything that lands in a run history is a plain Python float, and wall
time is kept out of the history payload, so two runs with the same seed
serialize byte-identically.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import ndtr

from .gp import GPError, SurrogateGP, kappa_schedule
from .objectives import EvalResult
from .space import PrunedSpace, expand, feasible, inequality_violation

LOG = "log"


@dataclass(frozen=True)
class OptimizerConfig:
    seed: int = 0
    init_samples: int = 20
    iterations: int = 20
    batch_size: int = 8
    population: int = 100
    generations: int = 50
    train_cap: int = 256
    gp_restarts: int = 3
    refit_every: int = 1
    kappa_delta: float = 0.05
    stop_on_pass: bool = False
    resample_limit: int = 100
    penalty_weight: float = 1e3

    def __post_init__(self):
        if min(self.init_samples, self.iterations, self.batch_size) < 1:
            raise ValueError("init_samples, iterations, batch_size must be >= 1")
        if self.population < 4 or self.population % 2:
            raise ValueError("population must be even and >= 4")
        if self.refit_every < 1:
            raise ValueError("refit_every must be >= 1")

    @property
    def budget(self) -> int:
        return self.init_samples + self.iterations * self.batch_size


@dataclass
class RunRecord:
    """One optimization run: per-evaluation rows plus the incumbent trace."""

    label: str
    config: dict
    evaluations: list[dict] = field(default_factory=list)
    incumbents: list[float] = field(default_factory=list)
    evals_to_pass: int | None = None
    wall_seconds: float = 0.0

    @property
    def best_fom(self) -> float:
        return self.incumbents[-1] if self.incumbents else math.inf

    def history_payload(self) -> dict:
        """Everything deterministic about the run; wall time stays out."""
        return {
            "label": self.label,
            "config": self.config,
            "evaluations": self.evaluations,
            "incumbents": self.incumbents,
            "evals_to_pass": self.evals_to_pass,
        }


def history_json(record: RunRecord) -> str:
    return json.dumps(record.history_payload(), sort_keys=True, separators=(",", ":"))


def load_history(text: str) -> RunRecord:
    payload = json.loads(text)
    return RunRecord(
        label=payload["label"],
        config=payload["config"],
        evaluations=payload["evaluations"],
        incumbents=payload["incumbents"],
        evals_to_pass=payload["evals_to_pass"],
    )


# ---------------------------------------------------------------- coordinates


def from_unit(ps: PrunedSpace, u: np.ndarray) -> np.ndarray:
    """Map unit-box coordinates to raw free-handle values."""
    raw = np.empty_like(u, dtype=float)
    for j, ((lo, hi), scale) in enumerate(zip(ps.free_bounds, ps.free_scales)):
        col = u[..., j]
        if scale == LOG:
            raw[..., j] = np.exp(
                math.log(lo) + col * (math.log(hi) - math.log(lo))
            )
        else:
            raw[..., j] = lo + col * (hi - lo)
    return raw


def to_unit(ps: PrunedSpace, raw: np.ndarray) -> np.ndarray:
    u = np.empty_like(raw, dtype=float)
    for j, ((lo, hi), scale) in enumerate(zip(ps.free_bounds, ps.free_scales)):
        col = raw[..., j]
        if scale == LOG:
            u[..., j] = (np.log(col) - math.log(lo)) / (
                math.log(hi) - math.log(lo)
            )
        else:
            u[..., j] = (col - lo) / (hi - lo)
    return u


def latin_hypercube(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    """Stratified unit-box sample: one point per axis-aligned slice."""
    cells = rng.permuted(np.tile(np.arange(n), (d, 1)), axis=1).T
    return (cells + rng.uniform(size=(n, d))) / n


# ------------------------------------------------------- evolutionary kernel


def nondominated_rank(objs: np.ndarray) -> np.ndarray:
    """Front index per row (0 is the Pareto front), minimization."""
    n = len(objs)
    le = np.all(objs[:, None, :] <= objs[None, :, :], axis=2)
    lt = np.any(objs[:, None, :] < objs[None, :, :], axis=2)
    dominates = le & lt  # [i, j] True when i dominates j
    count = dominates.sum(axis=0)  # how many dominate j
    rank = np.full(n, -1, dtype=int)
    current = np.flatnonzero(count == 0)
    level = 0
    while len(current):
        rank[current] = level
        count = count - dominates[current].sum(axis=0)
        count[rank >= 0] = 1  # never reconsider ranked rows
        current = np.flatnonzero(count == 0)
        level += 1
    return rank


def crowding_distance(objs: np.ndarray, rank: np.ndarray) -> np.ndarray:
    crowd = np.zeros(len(objs))
    for level in np.unique(rank):
        members = np.flatnonzero(rank == level)
        if len(members) <= 2:
            crowd[members] = math.inf
            continue
        for k in range(objs.shape[1]):
            order = members[np.argsort(objs[members, k], kind="stable")]
            span = objs[order[-1], k] - objs[order[0], k]
            crowd[order[0]] = crowd[order[-1]] = math.inf
            if span <= 0:
                continue
            gaps = (objs[order[2:], k] - objs[order[:-2], k]) / span
            crowd[order[1:-1]] += gaps
    return crowd


def _tournament(rng, rank, crowd, count):
    a = rng.integers(0, len(rank), size=count)
    b = rng.integers(0, len(rank), size=count)
    a_wins = (rank[a] < rank[b]) | ((rank[a] == rank[b]) & (crowd[a] > crowd[b]))
    return np.where(a_wins, a, b)


def _sbx_crossover(rng, parents: np.ndarray, eta: float = 15.0) -> np.ndarray:
    half = len(parents) // 2
    p1, p2 = parents[:half], parents[half : 2 * half]
    u = rng.uniform(size=p1.shape)
    beta = np.where(
        u <= 0.5,
        (2.0 * u) ** (1.0 / (eta + 1.0)),
        (1.0 / (2.0 * (1.0 - u))) ** (1.0 / (eta + 1.0)),
    )
    swap = rng.uniform(size=p1.shape) < 0.5
    c1 = 0.5 * ((1 + beta) * p1 + (1 - beta) * p2)
    c2 = 0.5 * ((1 - beta) * p1 + (1 + beta) * p2)
    out = np.vstack([np.where(swap, c2, c1), np.where(swap, c1, c2)])
    return np.clip(out, 0.0, 1.0)


def _poly_mutation(rng, pop: np.ndarray, eta: float = 20.0) -> np.ndarray:
    d = pop.shape[1]
    hit = rng.uniform(size=pop.shape) < (1.0 / d)
    u = rng.uniform(size=pop.shape)
    delta = np.where(
        u < 0.5,
        (2.0 * u) ** (1.0 / (eta + 1.0)) - 1.0,
        1.0 - (2.0 * (1.0 - u)) ** (1.0 / (eta + 1.0)),
    )
    return np.clip(np.where(hit, pop + delta, pop), 0.0, 1.0)


def evolve_front(
    rng: np.random.Generator,
    objectives,
    d: int,
    population: int,
    generations: int,
    seed_points: np.ndarray | None = None,
) -> np.ndarray:
    """Elitist multi-objective search over the unit box.

    ``objectives`` maps an (n, d) array to an (n, m) array, minimized
    componentwise.  Returns the final population sorted best-front-first.
    """
    pop = rng.uniform(size=(population, d))
    if seed_points is not None and len(seed_points):
        take = min(len(seed_points), population // 4)
        pop[:take] = np.clip(seed_points[:take], 0.0, 1.0)
    objs = objectives(pop)
    for _ in range(generations):
        rank = nondominated_rank(objs)
        crowd = crowding_distance(objs, rank)
        parents = pop[_tournament(rng, rank, crowd, population)]
        children = _poly_mutation(rng, _sbx_crossover(rng, parents))
        union = np.vstack([pop, children])
        union_objs = np.vstack([objs, objectives(children)])
        rank = nondominated_rank(union_objs)
        crowd = crowding_distance(union_objs, rank)
        order = np.lexsort((-crowd, rank))[:population]
        pop, objs = union[order], union_objs[order]
    rank = nondominated_rank(objs)
    crowd = crowding_distance(objs, rank)
    return pop[np.lexsort((-crowd, rank))]


def kmeans_pick(
    rng: np.random.Generator, points: np.ndarray, k: int, iters: int = 20
) -> list[int]:
    """Indices of k spread-out representatives (nearest to k-means centers)."""
    if len(points) <= k:
        return list(range(len(points)))
    centers = points[rng.choice(len(points), size=k, replace=False)]
    for _ in range(iters):
        d2 = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        labels = np.argmin(d2, axis=1)
        for j in range(k):
            members = points[labels == j]
            if len(members):
                centers[j] = members.mean(axis=0)
    d2 = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    picked: list[int] = []
    for j in range(k):
        order = np.argsort(d2[:, j], kind="stable")
        for idx in order:
            if int(idx) not in picked:
                picked.append(int(idx))
                break
    return picked


# ------------------------------------------------------------------ the runs


def _record_row(x_raw: np.ndarray, result: EvalResult) -> dict:
    row = result.to_dict()
    row["x"] = [float(v) for v in x_raw]
    row["fom"] = float(row["fom"])
    return row


def _evaluate_at(ps, evaluate, x_raw, cfg) -> EvalResult:
    result = evaluate(expand(ps, x_raw))
    violation = inequality_violation(ps, x_raw)
    if violation > 0.0 and math.isfinite(result.fom):
        result = replace(
            result,
            fom=result.fom + cfg.penalty_weight * violation,
            passed=False,
            note=(result.note + " infeasible").strip(),
        )
    return result


def _resample_feasible(ps, rng, draw, cfg) -> np.ndarray:
    """Draw unit points until the residual inequalities hold (bounded tries)."""
    u = draw()
    if not ps.residual_inequalities:
        return u
    for _ in range(cfg.resample_limit):
        if feasible(ps, from_unit(ps, u)):
            return u
        u = draw()
    return u


class _Tracker:
    """Shared bookkeeping for every run flavor."""

    def __init__(self, ps, evaluate, cfg: OptimizerConfig, label: str):
        self.ps = ps
        self.evaluate = evaluate
        self.cfg = cfg
        self.record = RunRecord(label=label, config=asdict(cfg))
        self.x_unit: list[np.ndarray] = []
        self.foms: list[float] = []
        self.best = math.inf

    def run_one(self, u: np.ndarray) -> EvalResult:
        x_raw = from_unit(self.ps, np.asarray(u, dtype=float))
        result = _evaluate_at(self.ps, self.evaluate, x_raw, self.cfg)
        self.x_unit.append(np.asarray(u, dtype=float))
        self.foms.append(result.fom)
        if math.isfinite(result.fom):
            self.best = min(self.best, result.fom)
        self.record.evaluations.append(_record_row(x_raw, result))
        self.record.incumbents.append(float(self.best))
        if result.passed and self.record.evals_to_pass is None:
            self.record.evals_to_pass = len(self.record.evaluations)
        return result

    @property
    def should_stop(self) -> bool:
        return self.cfg.stop_on_pass and self.record.evals_to_pass is not None


def _training_subset(foms: list[float], cap: int) -> list[int]:
    """Best half plus most-recent half of the successful evaluations."""
    ok = [i for i, f in enumerate(foms) if math.isfinite(f)]
    if len(ok) <= cap:
        return ok
    half = cap // 2
    by_value = sorted(ok, key=lambda i: (foms[i], i))
    chosen = set(by_value[:half]) | set(ok[-half:])
    for i in by_value:
        if len(chosen) >= cap:
            break
        chosen.add(i)
    return sorted(chosen)


def run_mace(ps: PrunedSpace, evaluate, cfg: OptimizerConfig) -> RunRecord:
    """GP + three-acquisition front search + clustered batches."""
    started = time.monotonic()
    rng = np.random.default_rng(cfg.seed)
    d = ps.dim
    tracker = _Tracker(ps, evaluate, cfg, "mace")

    init = latin_hypercube(rng, cfg.init_samples, d)
    for row in init:
        if ps.residual_inequalities and not feasible(ps, from_unit(ps, row)):
            row = _resample_feasible(ps, rng, lambda: rng.uniform(size=d), cfg)
        tracker.run_one(row)
        if tracker.should_stop:
            break

    theta = None
    gp: SurrogateGP | None = None
    for step in range(1, cfg.iterations + 1):
        if tracker.should_stop:
            break
        subset = _training_subset(tracker.foms, cfg.train_cap)
        if len(subset) < 2:
            batch = [rng.uniform(size=d) for _ in range(cfg.batch_size)]
            for u in batch:
                tracker.run_one(u)
                if tracker.should_stop:
                    break
            continue
        x_train = np.vstack([tracker.x_unit[i] for i in subset])
        y_train = np.array([tracker.foms[i] for i in subset])
        gp = SurrogateGP(restarts=cfg.gp_restarts, seed=cfg.seed + step)
        try:
            if theta is not None and (step - 1) % cfg.refit_every:
                gp.fit(x_train, y_train, theta0=theta, optimize_hypers=False)
            else:
                gp.fit(x_train, y_train)
                theta = gp.theta
        except GPError:
            for _ in range(cfg.batch_size):
                tracker.run_one(rng.uniform(size=d))
                if tracker.should_stop:
                    break
            continue

        best = float(np.min(y_train))
        kappa = kappa_schedule(step, d, cfg.kappa_delta)

        def acquisitions(points: np.ndarray) -> np.ndarray:
            mu, sigma = gp.predict(points)
            z = np.where(sigma > 0, (best - mu) / np.where(sigma > 0, sigma, 1.0), 0.0)
            ei = np.where(
                sigma > 0,
                (best - mu) * ndtr(z)
                + sigma * np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi),
                np.maximum(best - mu, 0.0),
            )
            pi = np.where(sigma > 0, ndtr(z), (mu < best).astype(float))
            objs = np.column_stack([mu - kappa * sigma, -ei, -pi])
            if ps.residual_inequalities:
                raw = from_unit(ps, points)
                bad = np.array(
                    [0.0 if feasible(ps, r) else 1e6 for r in raw]
                )
                objs = objs + bad[:, None]
            return objs

        incumbent_idx = int(np.argmin([f if math.isfinite(f) else math.inf
                                       for f in tracker.foms]))
        seeds = np.clip(
            tracker.x_unit[incumbent_idx]
            + rng.normal(scale=0.05, size=(cfg.population // 4, d)),
            0.0,
            1.0,
        )
        front = evolve_front(
            rng, acquisitions, d, cfg.population, cfg.generations, seeds
        )
        if ps.residual_inequalities:
            keep = [u for u in front if feasible(ps, from_unit(ps, u))]
            front = np.array(keep) if keep else front
        picked = kmeans_pick(rng, front, cfg.batch_size)
        batch = [front[i] for i in picked]
        while len(batch) < cfg.batch_size:
            batch.append(
                _resample_feasible(ps, rng, lambda: rng.uniform(size=d), cfg)
            )
        seen = {tuple(np.round(u, 12)) for u in tracker.x_unit}
        for u in batch:
            key = tuple(np.round(u, 12))
            if key in seen:
                u = _resample_feasible(ps, rng, lambda: rng.uniform(size=d), cfg)
            seen.add(tuple(np.round(u, 12)))
            tracker.run_one(u)
            if tracker.should_stop:
                break

    tracker.record.wall_seconds = time.monotonic() - started
    return tracker.record


def run_random(ps: PrunedSpace, evaluate, cfg: OptimizerConfig) -> RunRecord:
    """Uniform sampling at the same budget."""
    started = time.monotonic()
    rng = np.random.default_rng(cfg.seed)
    d = ps.dim
    tracker = _Tracker(ps, evaluate, cfg, "random")
    for _ in range(cfg.budget):
        u = _resample_feasible(ps, rng, lambda: rng.uniform(size=d), cfg)
        tracker.run_one(u)
        if tracker.should_stop:
            break
    tracker.record.wall_seconds = time.monotonic() - started
    return tracker.record


def run_de(ps: PrunedSpace, evaluate, cfg: OptimizerConfig) -> RunRecord:
    """Differential evolution (rand/1/bin, F=0.5, CR=0.9) at the same budget.

    The population holds batch_size individuals chosen from the initial
    sample; each generation proposes one trial per individual.
    """
    started = time.monotonic()
    rng = np.random.default_rng(cfg.seed)
    d = ps.dim
    if cfg.batch_size < 4:
        raise ValueError("differential evolution needs batch_size >= 4")
    f_weight, crossover = 0.5, 0.9
    tracker = _Tracker(ps, evaluate, cfg, "de")

    init = latin_hypercube(rng, cfg.init_samples, d)
    for row in init:
        tracker.run_one(row)
        if tracker.should_stop:
            break

    order = sorted(
        range(len(tracker.foms)), key=lambda i: (tracker.foms[i], i)
    )[: cfg.batch_size]
    pop = [np.array(tracker.x_unit[i]) for i in order]
    pop_fom = [tracker.foms[i] for i in order]
    while len(pop) < cfg.batch_size:  # init smaller than the population
        u = rng.uniform(size=d)
        pop.append(u)
        pop_fom.append(math.inf)

    generations = (cfg.budget - len(tracker.record.evaluations)) // cfg.batch_size
    for _ in range(generations):
        if tracker.should_stop:
            break
        for i in range(cfg.batch_size):
            if tracker.should_stop:
                break
            choices = [j for j in range(cfg.batch_size) if j != i]
            a, b, c = rng.choice(choices, size=3, replace=False)
            mutant = np.clip(
                pop[a] + f_weight * (pop[b] - pop[c]), 0.0, 1.0
            )
            cross = rng.uniform(size=d) < crossover
            cross[rng.integers(0, d)] = True
            trial = np.where(cross, mutant, pop[i])
            result = tracker.run_one(trial)
            if result.fom <= pop_fom[i]:
                pop[i], pop_fom[i] = trial, result.fom

    # spend any remainder that batch_size did not divide into
    while (
        len(tracker.record.evaluations) < cfg.budget and not tracker.should_stop
    ):
        tracker.run_one(rng.uniform(size=d))

    tracker.record.wall_seconds = time.monotonic() - started
    return tracker.record


RUNNERS = {"mace": run_mace, "random": run_random, "de": run_de}


# ------------------------------------------------------------------ analysis


def speedup(baseline_evals: float, method_evals: float) -> float:
    """How many times fewer evaluations the method needed."""
    if baseline_evals <= 0 or method_evals <= 0:
        raise ValueError("evaluation counts must be positive")
    return baseline_evals / method_evals


def median_evals_to_pass(records: list[RunRecord]) -> float:
    """Median across runs; runs that never passed count as infinite."""
    import statistics

    costs = [
        r.evals_to_pass if r.evals_to_pass is not None else math.inf
        for r in records
    ]
    return statistics.median(costs)


def pass_rate(records: list[RunRecord]) -> float:
    if not records:
        return 0.0
    return sum(r.evals_to_pass is not None for r in records) / len(records)


def compare_runs(records: dict[str, RunRecord]) -> dict:
    """Side-by-side summary with pairwise eval-count ratios."""
    summary: dict = {"runs": {}, "speedup": {}}
    for name, record in sorted(records.items()):
        summary["runs"][name] = {
            "best_fom": record.best_fom,
            "evals": len(record.evaluations),
            "evals_to_pass": record.evals_to_pass,
        }
    for base_name, base in sorted(records.items()):
        for other_name, other in sorted(records.items()):
            if base_name == other_name:
                continue
            if base.evals_to_pass and other.evals_to_pass:
                summary["speedup"][f"{base_name}/{other_name}"] = speedup(
                    base.evals_to_pass, other.evals_to_pass
                )
    return summary
