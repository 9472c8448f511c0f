"""Per-window component selection.

Chooses an integer multiplicity for every catalog component so that the
combined feature vector minimizes the summed relative error against the
window target, subject to a per-component repetition cap, a total-count cap
and a duration budget.  Absolute values are linearized with one nonnegative
slack per feature dimension and the integer program is solved by branch and
bound with LP-relaxation bounding (scipy HiGHS for the relaxations).
"""
from __future__ import annotations

import csv
import heapq
import itertools
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .catalog import Catalog
from .errors import SchemaError, SolverError, ValidationError
from .features import FeatureSchema, PerformanceFeature
from .trace import WindowTarget

ONE_TO_ONE = "one_to_one"
ONE_TO_MANY = "one_to_many"

_TIE_EPS = 1e-9
_INT_EPS = 1e-6


@dataclass
class SelectionConstraints:
    """Knobs shared by all windows; see SelectionProblem for resolved values."""

    max_repetitions: int = 10          # y
    max_total: int | None = None       # z; None derives it from query counts
    total_per_query_factor: float = 2.0
    max_concurrency: int = 8           # cores; duration budget l = window_len * cores
    denom_floor: float = 1.0           # epsilon for zero-valued targets
    weights: np.ndarray | None = None  # per-dimension, defaults to all ones
    node_limit: int = 20000
    time_limit_s: float | None = None


@dataclass
class SelectionProblem:
    """One window's fully-resolved integer program."""

    target: np.ndarray        # metrics then operators
    features: np.ndarray      # shape (n_components, n_dims)
    durations: np.ndarray     # profiled duration per component, ms
    component_ids: list[str]
    y: int
    z: int
    duration_budget_ms: float
    denom_floor: float = 1.0
    weights: np.ndarray | None = None
    window_index: int = 0
    node_limit: int = 20000
    time_limit_s: float | None = None

    def __post_init__(self):
        self.target = np.asarray(self.target, dtype=float)
        self.features = np.asarray(self.features, dtype=float)
        self.durations = np.asarray(self.durations, dtype=float)
        if self.features.shape[1] != self.target.shape[0]:
            raise SchemaError("component feature dimensions do not match the target")
        if self.y < 1 or self.z < 1 or self.duration_budget_ms <= 0 or self.denom_floor <= 0:
            raise ValidationError("require y >= 1, z >= 1, l > 0 and denom_floor > 0")

    @property
    def denominators(self) -> np.ndarray:
        return np.maximum(np.abs(self.target), self.denom_floor)

    @property
    def weight_vector(self) -> np.ndarray:
        if self.weights is None:
            return np.ones_like(self.target)
        return np.asarray(self.weights, dtype=float)

    def objective(self, counts: np.ndarray) -> float:
        """Exact relative-error objective of an integer count vector."""
        residual = self.features.T @ counts - self.target
        return float(self.weight_vector @ (np.abs(residual) / self.denominators))


@dataclass
class SelectionPlan:
    window_index: int
    counts: dict[str, int]
    achieved: np.ndarray
    objective_value: float
    approximate: bool = False

    def count_vector(self, component_ids: list[str]) -> np.ndarray:
        return np.array([self.counts.get(cid, 0) for cid in component_ids], dtype=int)

    def total_count(self) -> int:
        return sum(self.counts.values())


def _solve_relaxation(problem: SelectionProblem, lo: np.ndarray, hi: np.ndarray):
    """LP relaxation over box [lo, hi] with slack linearization. Returns (bound, x) or None."""
    v = problem.features.shape[0]
    ndim = problem.target.shape[0]
    denom = problem.denominators
    w = problem.weight_vector
    A = problem.features.T  # (ndim, v)

    c = np.concatenate([np.zeros(v), w])
    # |A x - t| / denom <= s, scaled by denom to keep coefficients bounded:
    #   A x - denom * s <= t   and   -A x - denom * s <= -t
    slack_block = -np.diag(denom)
    a_ub = np.vstack(
        [
            np.hstack([A, slack_block]),
            np.hstack([-A, slack_block]),
            np.hstack([np.ones((1, v)), np.zeros((1, ndim))]),
            np.hstack([problem.durations[None, :], np.zeros((1, ndim))]),
        ]
    )
    b_ub = np.concatenate(
        [problem.target, -problem.target, [problem.z], [problem.duration_budget_ms]]
    )
    bounds = [(float(l), float(h)) for l, h in zip(lo, hi)] + [(0, None)] * ndim
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if not res.success:
        return None
    return float(res.fun), res.x[:v]


def _lex_duplicate_shift(problem: SelectionProblem, counts: np.ndarray) -> np.ndarray:
    """Shift counts between components with identical feature/duration columns.

    Moving repetitions from an earlier id to a later duplicate keeps the
    objective and all constraints intact while producing the
    lexicographically smallest count vector under component_id order.
    """
    order = np.argsort(np.array(problem.component_ids))
    cols = [
        (tuple(problem.features[j]), float(problem.durations[j])) for j in range(len(counts))
    ]
    counts = counts.copy()
    for pos_a, a in enumerate(order):
        for b in reversed(order[pos_a + 1 :]):
            if cols[a] == cols[b] and counts[a] > 0:
                room = problem.y - counts[b]
                moved = min(room, counts[a])
                counts[b] += moved
                counts[a] -= moved
    return counts


def _lex_key(problem: SelectionProblem, counts: np.ndarray) -> tuple:
    order = np.argsort(np.array(problem.component_ids))
    return tuple(int(counts[j]) for j in order)


def solve_window(problem: SelectionProblem) -> SelectionPlan:
    """Branch-and-bound solve of one window's selection problem.

    Returns the optimal plan unless the node or time budget is exhausted, in
    which case the best incumbent is returned with `approximate=True`.
    The all-zeros vector is always feasible, so an incumbent always exists.
    """
    v = problem.features.shape[0]
    deadline = None
    if problem.weights is not None and np.any(np.asarray(problem.weights) < 0):
        raise ValidationError("weights must be nonnegative")

    best_counts = np.zeros(v, dtype=int)
    best_obj = problem.objective(best_counts)
    approximate = False

    if v > 0 and best_obj > 0:
        lo0 = np.zeros(v)
        hi0 = np.full(v, float(problem.y))
        if problem.time_limit_s is not None:
            deadline = time.monotonic() + problem.time_limit_s
        counter = itertools.count()
        heap: list = []
        root = _solve_relaxation(problem, lo0, hi0)
        if root is not None:
            heapq.heappush(heap, (root[0], next(counter), lo0, hi0, root[1]))
        nodes = 0
        while heap:
            bound, _, lo, hi, x_rel = heapq.heappop(heap)
            if bound >= best_obj - _TIE_EPS:
                continue
            nodes += 1
            if nodes > problem.node_limit or (
                deadline is not None and time.monotonic() > deadline
            ):
                approximate = True
                break

            frac = np.abs(x_rel - np.round(x_rel))
            if np.all(frac <= _INT_EPS):
                counts = np.round(x_rel).astype(int)
                counts = np.clip(counts, lo.astype(int), hi.astype(int))
                if _feasible(problem, counts):
                    obj = problem.objective(counts)
                    if obj < best_obj - _TIE_EPS or (
                        abs(obj - best_obj) <= _TIE_EPS
                        and _lex_key(problem, counts) < _lex_key(problem, best_counts)
                    ):
                        best_obj, best_counts = obj, counts
                continue
            j = int(np.argmax(frac))
            xj = x_rel[j]
            for child_lo, child_hi in (
                (lo.copy(), _with(hi, j, np.floor(xj))),
                (_with(lo, j, np.ceil(xj)), hi.copy()),
            ):
                if child_lo[j] > child_hi[j]:
                    continue
                sol = _solve_relaxation(problem, child_lo, child_hi)
                if sol is None or sol[0] >= best_obj - _TIE_EPS:
                    continue
                heapq.heappush(heap, (sol[0], next(counter), child_lo, child_hi, sol[1]))

    best_counts = _lex_duplicate_shift(problem, best_counts)
    achieved = problem.features.T @ best_counts
    counts = {
        cid: int(n) for cid, n in zip(problem.component_ids, best_counts) if n > 0
    }
    return SelectionPlan(
        window_index=problem.window_index,
        counts=counts,
        achieved=achieved,
        objective_value=problem.objective(best_counts),
        approximate=approximate,
    )


def _with(arr: np.ndarray, j: int, value: float) -> np.ndarray:
    out = arr.copy()
    out[j] = value
    return out


def _feasible(problem: SelectionProblem, counts: np.ndarray) -> bool:
    if np.any(counts < 0) or np.any(counts > problem.y):
        return False
    if counts.sum() > problem.z:
        return False
    return float(problem.durations @ counts) <= problem.duration_budget_ms + 1e-9


def enumerate_optimum(problem: SelectionProblem) -> tuple[float, list[np.ndarray]]:
    """Exhaustive enumeration oracle; only viable for small component counts."""
    v = problem.features.shape[0]
    best = None
    argbest: list[np.ndarray] = []
    for combo in itertools.product(range(problem.y + 1), repeat=v):
        counts = np.array(combo, dtype=int)
        if not _feasible(problem, counts):
            continue
        obj = problem.objective(counts)
        if best is None or obj < best - _TIE_EPS:
            best, argbest = obj, [counts]
        elif abs(obj - best) <= _TIE_EPS:
            argbest.append(counts)
    if best is None:
        raise SolverError("no feasible count vector (cannot happen with z, l > 0)")
    return best, argbest


def build_problem(
    target: WindowTarget,
    catalog: Catalog,
    constraints: SelectionConstraints,
) -> SelectionProblem:
    if constraints.max_total is not None:
        z = constraints.max_total
    else:
        z = max(1, round(constraints.total_per_query_factor * target.query_count))
    problem = SelectionProblem(
        target=target.feature.as_vector(),
        features=catalog.feature_matrix(),
        durations=np.array([c.duration_ms for c in catalog]),
        component_ids=[c.component_id for c in catalog],
        y=constraints.max_repetitions,
        z=z,
        duration_budget_ms=float(target.window_len_ms * constraints.max_concurrency),
        denom_floor=constraints.denom_floor,
        weights=constraints.weights,
        window_index=target.window_index,
        node_limit=constraints.node_limit,
        time_limit_s=constraints.time_limit_s,
    )
    return problem


def solve_all_windows(
    targets: list[WindowTarget],
    catalog: Catalog,
    constraints: SelectionConstraints,
) -> list[SelectionPlan]:
    """Solve every window independently (the objective is separable over windows)."""
    plans = []
    for target in targets:
        try:
            plans.append(solve_window(build_problem(target, catalog, constraints)))
        except SolverError as exc:
            raise SolverError(f"window {target.window_index}: {exc}") from exc
    return plans


def write_plans(plans: list[SelectionPlan], path) -> None:
    """Plan CSV: one row per (window, component) with a positive count."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window_index", "component_id", "count"])
        for plan in sorted(plans, key=lambda p: p.window_index):
            for component_id in sorted(plan.counts):
                writer.writerow([plan.window_index, component_id, plan.counts[component_id]])


def read_plans(path, targets: list[WindowTarget], catalog: Catalog,
               denom_floor: float = 1.0) -> list[SelectionPlan]:
    """Rebuild plans from a plan CSV; achieved/objective are recomputed."""
    counts: dict[int, dict[str, int]] = {t.window_index: {} for t in targets}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            w = int(row["window_index"])
            if w not in counts:
                raise ValidationError(f"plan references unknown window {w}")
            counts[w][row["component_id"]] = int(row["count"])
    features = catalog.feature_matrix()
    ids = [c.component_id for c in catalog]
    denom_by_window = {t.window_index: t for t in targets}
    plans = []
    for w in sorted(counts):
        vector = np.array([counts[w].get(cid, 0) for cid in ids], dtype=int)
        target = denom_by_window[w].feature.as_vector()
        denom = np.maximum(np.abs(target), denom_floor)
        achieved = features.T @ vector
        plans.append(
            SelectionPlan(
                window_index=w,
                counts={cid: n for cid, n in counts[w].items() if n > 0},
                achieved=achieved,
                objective_value=float(np.sum(np.abs(achieved - target) / denom)),
            )
        )
    return plans


def write_plan_summary(
    plans: list[SelectionPlan], targets: list[WindowTarget], schema: FeatureSchema, path
) -> None:
    """Per-window objective plus per-dimension achieved/target/error rows."""
    by_window = {t.window_index: t for t in targets}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["window_index", "objective", "approximate", "dimension",
             "target", "achieved", "abs_error"]
        )
        for plan in sorted(plans, key=lambda p: p.window_index):
            target = by_window[plan.window_index].feature.as_vector()
            for d, dim in enumerate(schema.dimensions):
                writer.writerow(
                    [
                        plan.window_index,
                        repr(plan.objective_value),
                        int(plan.approximate),
                        dim,
                        repr(float(target[d])),
                        repr(float(plan.achieved[d])),
                        repr(abs(float(plan.achieved[d] - target[d]))),
                    ]
                )


def _znorm_stats(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = matrix.mean(axis=0)
    std = matrix.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return mean, std


def match_query(
    query_feature: PerformanceFeature,
    catalog: Catalog,
    mode: str = ONE_TO_ONE,
    z_q: int = 5,
    denom_floor: float = 1.0,
) -> SelectionPlan:
    """Query-level matching: nearest single component or a small ILP combination.

    one_to_one picks the component with the smallest Euclidean distance on
    z-normalized features (normalization statistics from the catalog).
    one_to_many solves the window problem with the query's feature as the
    target, capped at z_q total instances and no duration budget.  Both
    report the relative-error objective so the two modes are comparable.
    """
    if len(catalog) == 0:
        raise ValidationError("cannot match against an empty catalog")
    target = query_feature.as_vector()
    features = catalog.feature_matrix()
    ids = [c.component_id for c in catalog]
    durations = np.array([c.duration_ms for c in catalog])
    budget = float(durations.sum() * z_q + 1.0)
    problem = SelectionProblem(
        target=target,
        features=features,
        durations=durations,
        component_ids=ids,
        y=z_q,
        z=z_q,
        duration_budget_ms=budget,
        denom_floor=denom_floor,
    )
    if mode == ONE_TO_MANY:
        return solve_window(problem)
    if mode != ONE_TO_ONE:
        raise ValidationError(f"unknown match mode {mode!r}")
    mean, std = _znorm_stats(features)
    distances = np.linalg.norm((features - mean) / std - (target - mean) / std, axis=1)
    ranked = sorted(range(len(ids)), key=lambda j: (distances[j], ids[j]))
    j = ranked[0]
    counts = np.zeros(len(ids), dtype=int)
    counts[j] = 1
    return SelectionPlan(
        window_index=0,
        counts={ids[j]: 1},
        achieved=features[j].copy(),
        objective_value=problem.objective(counts),
    )
