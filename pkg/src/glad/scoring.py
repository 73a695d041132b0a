"""Anomaly scores, ranking, alarms, and evaluation metrics.

Static scoring aggregates, per group, the variational expectation of how
surprising each member's role is under the group's rate profile.  Dynamic
scoring tracks jumps of the rate path in unconstrained space.  Evaluation
compares flagged sets and alarm sets against generator ground truth;
group labels from a fit are aligned to true labels by maximum-overlap
assignment before any set comparison.
"""

from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .model import GladVariational, ModelParams, floored_log

__all__ = [
    "AnomalyReport",
    "static_group_score",
    "rate_distance_score",
    "align_rate_columns",
    "dynamic_change_score",
    "top_fraction",
    "rank_groups",
    "match_groups",
    "evaluate_static",
    "evaluate_dynamic",
    "make_report",
]


def static_group_score(
    state: GladVariational,
    params: ModelParams,
    grouping: np.ndarray | None = None,
) -> np.ndarray:
    """Per-group negative expected role log-rate, summed over members.

    Each person contributes -sum_{m,k} lam[p,m] mu[p,k] log theta[m,k];
    the contribution lands in the group ``grouping[p]`` (default: the
    argmax membership).  Empty groups score 0 and trigger a warning.
    """
    lam, mu = state.lam, state.mu
    if grouping is None:
        grouping = state.grouping()
    grouping = np.asarray(grouping, dtype=np.int64)
    if grouping.shape != (lam.shape[0],):
        raise ValueError("grouping must assign every person exactly once")
    m = params.n_groups
    if grouping.size and (grouping.min() < 0 or grouping.max() >= m):
        raise ValueError("grouping labels out of range")
    contrib = -np.einsum("pm,mk,pk->p", lam, floored_log(params.theta), mu)
    scores = np.zeros(m)
    np.add.at(scores, grouping, contrib)
    missing = np.setdiff1d(np.arange(m), grouping)
    if missing.size:
        warnings.warn(f"empty groups {missing.tolist()} scored 0")
    return scores


def rate_distance_score(rates: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """L1 distance of each group's rate profile from a reference profile.

    Evaluation-only variant for synthetic suites where the normal rate is
    known; the model score has no signal when anomalous and normal rates
    are permutations of each other (equal entropy).
    """
    rates = np.asarray(rates, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if rates.ndim != 2 or reference.shape != (rates.shape[1],):
        raise ValueError("rates must be (M, K) and reference (K,)")
    return np.abs(rates - reference[None, :]).sum(axis=1)


def rate_reference(rates: np.ndarray) -> np.ndarray:
    """Self-contained reference profile: the element-wise median row.

    When most groups are normal the median of the fitted rate table sits
    on the normal profile, so rate distances from it single out deviant
    groups without any knowledge of the generating configuration.  Note
    the median of simplex rows need not itself sum to one.
    """
    rates = np.asarray(rates, dtype=float)
    if rates.ndim != 2 or rates.shape[0] < 1:
        raise ValueError("rates must be a non-empty (M, K) table")
    return np.median(rates, axis=0)


def align_rate_columns(rates: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Role permutation minimizing the total rate distance to a reference.

    Role labels are latent, so a fitted rate table may be a column
    permutation of the truth; as long as most groups are normal, the
    best total fit pins the labels.  Exhaustive over permutations, so K
    must stay small.  Returns indices ``perm`` to use as ``rates[:, perm]``;
    ties resolve to the lexicographically first permutation.
    """
    rates = np.asarray(rates, dtype=float)
    reference = np.asarray(reference, dtype=float)
    k = rates.shape[1]
    if reference.shape != (k,):
        raise ValueError("reference must have one entry per role")
    if k > 8:
        raise ValueError("role alignment enumerates permutations; K too large")
    best = min(
        itertools.permutations(range(k)),
        key=lambda p: float(np.abs(rates[:, p] - reference[None, :]).sum()),
    )
    return np.asarray(best, dtype=np.int64)


def dynamic_change_score(theta_path: np.ndarray) -> np.ndarray:
    """Per-step, per-group Euclidean jump of the unconstrained rate path.

    ``theta_path`` is (T, M, K); the result is (T-1, M) where row t-1
    holds ||theta^(t) - theta^(t-1)|| for each group.
    """
    theta_path = np.asarray(theta_path, dtype=float)
    if theta_path.ndim != 3 or theta_path.shape[0] < 2:
        raise ValueError("need a (T, M, K) path with T >= 2")
    return np.linalg.norm(np.diff(theta_path, axis=0), axis=2)


def rank_groups(scores: np.ndarray) -> np.ndarray:
    """Group indices by descending score, ties broken by lower index."""
    scores = np.asarray(scores, dtype=float)
    return np.lexsort((np.arange(scores.shape[0]), -scores))


def top_fraction(scores: np.ndarray, fraction: float) -> np.ndarray:
    """The ceil(fraction * M) highest-scoring groups, ascending indices."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    scores = np.asarray(scores, dtype=float)
    n_top = math.ceil(fraction * scores.shape[0])
    return np.sort(rank_groups(scores)[:n_top])


def match_groups(inferred: np.ndarray, true_grouping: np.ndarray, n_groups: int) -> np.ndarray:
    """Map fitted group labels onto true labels by maximum overlap.

    Returns an array ``mapping`` with ``mapping[fitted_label] = true_label``
    from the optimal assignment on the label co-occurrence matrix.
    """
    inferred = np.asarray(inferred, dtype=np.int64)
    true_grouping = np.asarray(true_grouping, dtype=np.int64)
    if inferred.shape != true_grouping.shape:
        raise ValueError("groupings must cover the same people")
    overlap = np.zeros((n_groups, n_groups))
    np.add.at(overlap, (inferred, true_grouping), 1.0)
    rows, cols = linear_sum_assignment(-overlap)
    mapping = np.empty(n_groups, dtype=np.int64)
    mapping[rows] = cols
    return mapping


def evaluate_static(flagged, anomalous, n_groups: int) -> dict:
    """Detection metrics for a flagged set against the true anomalous set.

    accuracy is the detected share of true anomalous groups; fpr the
    flagged share of normal groups.
    """
    anomalous = {int(g) for g in anomalous}
    if not anomalous:
        raise ValueError("ground truth has no anomalous groups")
    flagged = {int(g) for g in flagged}
    tp = len(flagged & anomalous)
    fp = len(flagged - anomalous)
    fn = len(anomalous - flagged)
    precision = tp / (tp + fp) if flagged else 0.0
    recall = tp / (tp + fn)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    normal = n_groups - len(anomalous)
    return {
        "accuracy": tp / len(anomalous),
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "fpr": fp / normal if normal else 0.0,
    }


def evaluate_dynamic(
    change_scores: np.ndarray,
    change_times: dict,
    thresholds: np.ndarray,
) -> dict:
    """Recall and false-positive rate across an alarm-threshold grid.

    ``change_scores[t-1, m]`` covers snapshot transition t (t = 1..T-1);
    a true change for group m at time ``change_times[m]`` counts as
    detected when its transition scores strictly above the threshold.
    """
    change_scores = np.asarray(change_scores, dtype=float)
    if not change_times:
        raise ValueError("ground truth has no change times")
    steps, m = change_scores.shape
    truth = np.zeros((steps, m), dtype=bool)
    for g, t in change_times.items():
        g, t = int(g), int(t)
        if not 1 <= t <= steps:
            raise ValueError(f"change time {t} outside 1..{steps}")
        truth[t - 1, g] = True
    thresholds = np.asarray(thresholds, dtype=float)
    fpr = np.empty(thresholds.shape[0])
    recall = np.empty(thresholds.shape[0])
    n_normal = (~truth).sum()
    for i, tau in enumerate(thresholds):
        alarm = change_scores > tau
        fpr[i] = (alarm & ~truth).sum() / n_normal if n_normal else 0.0
        recall[i] = (alarm & truth).sum() / truth.sum()
    return {"thresholds": thresholds, "fpr": fpr, "recall": recall}


@dataclass(frozen=True)
class AnomalyReport:
    """Scores, ranking, flagged set, optional alarms and metrics."""

    group_scores: np.ndarray
    ranking: np.ndarray
    flagged: np.ndarray
    change_scores: np.ndarray | None = None
    alarms: tuple = ()
    metrics: dict = field(default_factory=dict)

    def __post_init__(self):
        m = self.group_scores.shape[0]
        if sorted(self.ranking.tolist()) != list(range(m)):
            raise ValueError("ranking must be a permutation of the groups")
        if not set(self.flagged.tolist()) <= set(range(m)):
            raise ValueError("flagged groups out of range")
        for key, value in self.metrics.items():
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"metric {key} outside [0, 1]")

    def to_json(self) -> str:
        payload = {
            "group_scores": self.group_scores.tolist(),
            "ranking": self.ranking.tolist(),
            "flagged": self.flagged.tolist(),
            "change_scores": None
            if self.change_scores is None
            else self.change_scores.tolist(),
            "alarms": [[int(g), int(t)] for g, t in self.alarms],
            "metrics": self.metrics,
        }
        return json.dumps(payload, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "AnomalyReport":
        raw = json.loads(text)
        return cls(
            group_scores=np.asarray(raw["group_scores"], dtype=float),
            ranking=np.asarray(raw["ranking"], dtype=np.int64),
            flagged=np.asarray(raw["flagged"], dtype=np.int64),
            change_scores=None
            if raw["change_scores"] is None
            else np.asarray(raw["change_scores"], dtype=float),
            alarms=tuple((int(g), int(t)) for g, t in raw["alarms"]),
            metrics={k: float(v) for k, v in raw["metrics"].items()},
        )


def make_report(
    group_scores: np.ndarray,
    fraction: float,
    *,
    change_scores: np.ndarray | None = None,
    threshold: float | None = None,
    anomalous=None,
    change_times: dict | None = None,
) -> AnomalyReport:
    """Assemble a report: rank, flag the top fraction, raise alarms, score.

    Alarms are (group, t) pairs whose transition score exceeds
    ``threshold``.  Metrics appear only when ground truth is supplied.
    """
    group_scores = np.asarray(group_scores, dtype=float)
    ranking = rank_groups(group_scores)
    flagged = top_fraction(group_scores, fraction)
    alarms = ()
    if change_scores is not None and threshold is not None:
        hits = np.argwhere(np.asarray(change_scores) > threshold)
        alarms = tuple((int(m), int(t) + 1) for t, m in hits)
    metrics = {}
    if anomalous is not None:
        metrics.update(evaluate_static(flagged, anomalous, group_scores.shape[0]))
    if change_times and change_scores is not None and threshold is not None:
        curve = evaluate_dynamic(change_scores, change_times, np.array([threshold]))
        metrics["change_recall"] = float(curve["recall"][0])
        metrics["change_fpr"] = float(curve["fpr"][0])
    return AnomalyReport(
        group_scores=group_scores,
        ranking=ranking,
        flagged=flagged,
        change_scores=None if change_scores is None else np.asarray(change_scores, float),
        alarms=alarms,
        metrics=metrics,
    )
