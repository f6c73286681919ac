"""Simulated-user evaluation: satisfaction, cost, coverage, distance, and
fairness metrics.

Each simulated user carries a hidden ground-truth cost function drawn from
the evaluation RNG stream, which is structurally disjoint from the stream
that produced the generation-time samples. A user's realised cost is the
minimum over the *valid* members of their recourse set; invalid members
count as infinitely expensive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .cost import (
    TEST_STREAM,
    CostFunction,
    min_cost,
    sample_cost_function,
    stream_rng,
)
from .schema import DatasetSchema, PercentileTable, UserState
from .search import RecourseSet

INF = math.inf


@dataclass(frozen=True)
class SimulatedUser:
    state: UserState
    true_cost: CostFunction
    subgroups: Mapping[str, int]


@dataclass
class PacResult:
    """Average realised cost over covered users; None when nobody is covered."""

    value: Optional[float]
    uncovered: int


@dataclass
class MetricsReport:
    fs_at_k: float
    k: float
    pac: PacResult
    coverage: float
    diversity: float
    proximity: float
    sparsity: float
    validity: float
    n_users: int
    by_subgroup: dict[str, dict[int, dict[str, float]]]
    dir_ratios: dict[str, dict[str, Optional[float]]]


def simulate_user(
    state: UserState,
    schema: DatasetSchema,
    table: PercentileTable,
    test_seed: int,
    user_id: int,
    distribution: str = "mix",
    alpha: Optional[float] = None,
    editable: Optional[frozenset[int]] = None,
) -> SimulatedUser:
    """Draw one hidden cost function for a user, keyed by (test_seed, user_id)."""
    if distribution == "lin":
        alpha = 1.0
    elif distribution == "perc":
        alpha = 0.0
    rng = stream_rng(TEST_STREAM, test_seed, user_id)
    true_cost = sample_cost_function(
        state, schema, table, rng, alpha=alpha, editable=editable
    )
    subgroups = {
        name: state.values[schema.feature_index(name)]
        for name in schema.protected_attributes
    }
    return SimulatedUser(state=state, true_cost=true_cost, subgroups=subgroups)


def realized_cost(user: SimulatedUser, recourse: RecourseSet) -> float:
    """Cheapest valid option under the user's hidden cost function."""
    valid_members = [
        m for m, ok in zip(recourse.members, recourse.validity) if ok
    ]
    if not valid_members:
        return INF
    return min_cost(user.state, valid_members, user.true_cost)


def fs_at_k(
    users: Sequence[SimulatedUser],
    sets: Sequence[RecourseSet],
    k: float = 1.0,
) -> float:
    """Fraction of users whose realised cost is strictly below k."""
    if not users or len(users) != len(sets):
        raise ValueError("need one recourse set per user, at least one user")
    hits = sum(1 for u, s in zip(users, sets) if realized_cost(u, s) < k)
    return hits / len(users)


def pac(users: Sequence[SimulatedUser], sets: Sequence[RecourseSet]) -> PacResult:
    """Mean realised cost over covered users, with the uncovered count."""
    if not users or len(users) != len(sets):
        raise ValueError("need one recourse set per user, at least one user")
    costs = [realized_cost(u, s) for u, s in zip(users, sets)]
    finite = [c for c in costs if c < INF]
    uncovered = len(costs) - len(finite)
    if not finite:
        return PacResult(value=None, uncovered=uncovered)
    return PacResult(value=sum(finite) / len(finite), uncovered=uncovered)


def coverage(users: Sequence[SimulatedUser], sets: Sequence[RecourseSet]) -> float:
    """Fraction of users with any finite-cost valid recourse."""
    if not users or len(users) != len(sets):
        raise ValueError("need one recourse set per user, at least one user")
    hits = sum(1 for u, s in zip(users, sets) if realized_cost(u, s) < INF)
    return hits / len(users)


def _pair_distance(a: UserState, b: UserState, schema: DatasetSchema) -> float:
    """Mean per-feature normalized distance: range-scaled absolute difference
    for ordered features, change indicator for unordered ones."""
    total = 0.0
    for fi, f in enumerate(schema.features):
        x, y = a.values[fi], b.values[fi]
        if f.kind == "ordered":
            span = f.domain[-1] - f.domain[0]
            total += abs(x - y) / span if span else 0.0
        else:
            total += 1.0 if x != y else 0.0
    return total / schema.n_features


def set_distance_stats(
    s_u: UserState, members: Sequence[UserState], schema: DatasetSchema
) -> tuple[float, float, float]:
    """(diversity, proximity, sparsity) of a member list, validity aside."""
    n = len(members)
    d = schema.n_features
    prox = 1.0 - sum(_pair_distance(s_u, m, schema) for m in members) / n
    changed = sum(
        1 for m in members for fi in range(d) if m.values[fi] != s_u.values[fi]
    )
    spar = 1.0 - changed / (n * d)
    if n < 2:
        div = 0.0
    else:
        pairs = [(i, j) for i in range(n - 1) for j in range(i + 1, n)]
        div = sum(_pair_distance(members[i], members[j], schema) for i, j in pairs)
        div /= len(pairs)
    return div, prox, spar


def distance_metrics(
    s_u: UserState, recourse: RecourseSet, schema: DatasetSchema
) -> tuple[float, float, float, float]:
    """(diversity, proximity, sparsity, validity) of one recourse set."""
    div, prox, spar = set_distance_stats(s_u, recourse.members, schema)
    unique_valid = {
        m.values for m, ok in zip(recourse.members, recourse.validity) if ok
    }
    val = len(unique_valid) / recourse.n
    return div, prox, spar, val


def dir_ratio(
    metric_by_subgroup: Mapping[int, float], group_order: Sequence[int]
) -> Optional[float]:
    """Disparate impact ratio metric(first group) / metric(second group).

    The numerator group is the first value of the protected feature's
    domain. None (undefined) when the denominator is zero.
    """
    if len(group_order) != 2:
        raise ValueError("disparate impact needs exactly two subgroups")
    num = metric_by_subgroup[group_order[0]]
    den = metric_by_subgroup[group_order[1]]
    if den == 0:
        return None
    return num / den


def concentration_distance(
    test_concentrations: np.ndarray, train_concentrations: np.ndarray
) -> np.ndarray:
    """Per test vector, the Euclidean distance to its nearest train vector."""
    test = np.asarray(test_concentrations, dtype=float)
    train = np.asarray(train_concentrations, dtype=float)
    if train.size == 0:
        raise ValueError("no train concentration vectors")
    if test.ndim == 1:
        test = test[None, :]
    diffs = test[:, None, :] - train[None, :, :]
    return np.sqrt((diffs**2).sum(axis=2)).min(axis=1)


def compute_report(
    users: Sequence[SimulatedUser],
    sets: Sequence[RecourseSet],
    schema: DatasetSchema,
    k: float = 1.0,
) -> MetricsReport:
    """All metrics over a population, with per-subgroup splits and ratios."""
    if not users or len(users) != len(sets):
        raise ValueError("need one recourse set per user, at least one user")
    dists = [distance_metrics(u.state, s, schema) for u, s in zip(users, sets)]
    div, prox, spar, val = (float(np.mean([d[i] for d in dists])) for i in range(4))

    by_subgroup: dict[str, dict[int, dict[str, float]]] = {}
    dir_ratios: dict[str, dict[str, Optional[float]]] = {}
    for attr in schema.protected_attributes:
        feature = schema.features[schema.feature_index(attr)]
        groups: dict[int, dict[str, float]] = {}
        fs_by_group: dict[int, float] = {}
        cov_by_group: dict[int, float] = {}
        for value in feature.domain:
            sub = [
                (u, s)
                for u, s in zip(users, sets)
                if u.subgroups.get(attr) == value
            ]
            if not sub:
                continue
            sub_users, sub_sets = zip(*sub)
            groups[value] = {
                "fs_at_k": fs_at_k(sub_users, sub_sets, k),
                "coverage": coverage(sub_users, sub_sets),
                "n": len(sub),
            }
            fs_by_group[value] = groups[value]["fs_at_k"]
            cov_by_group[value] = groups[value]["coverage"]
        by_subgroup[attr] = groups
        if len(groups) == 2:
            order = [v for v in feature.domain if v in groups]
            dir_ratios[attr] = {
                "fs_at_k": dir_ratio(fs_by_group, order),
                "coverage": dir_ratio(cov_by_group, order),
            }

    return MetricsReport(
        fs_at_k=fs_at_k(users, sets, k),
        k=k,
        pac=pac(users, sets),
        coverage=coverage(users, sets),
        diversity=div,
        proximity=prox,
        sparsity=spar,
        validity=val,
        n_users=len(users),
        by_subgroup=by_subgroup,
        dir_ratios=dir_ratios,
    )
