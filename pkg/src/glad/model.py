"""Shared domain types and numerical kernels for the GLAD model family.

Every inference backend works on the same value objects: dense dataset
containers (:class:`Dataset`, :class:`ActivityDataset`, :class:`DynamicDataset`),
the generative parameters (:class:`ModelParams`), and the variational state of
the static model (:class:`GladVariational`).  The log-domain primitives the
update equations are built from live here as well, so the variational and
Monte Carlo modules share one set of conventions:

* Bernoulli block probabilities are kept inside ``[PROB_EPS, 1 - PROB_EPS]``.
* Simplex parameters may contain exact zeros; logs are taken through
  :func:`floored_log`, which clamps at ``SIMPLEX_FLOOR`` first.
* Self-links are never modelled: the diagonal of an adjacency matrix is
  stored but ignored by every likelihood and update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Bernoulli block probabilities are clamped to this band after every M-step.
PROB_EPS = 1e-6

# Floor applied inside logarithms of simplex entries (theta, beta, lambda, ...).
SIMPLEX_FLOOR = 1e-12

# Tolerance used when checking that rows/columns sum to one.
SIMPLEX_ATOL = 1e-9

__all__ = [
    "PROB_EPS",
    "SIMPLEX_FLOOR",
    "SIMPLEX_ATOL",
    "Dataset",
    "ActivityDataset",
    "DynamicDataset",
    "ModelParams",
    "GladVariational",
    "GladNumericsError",
    "bernoulli_loglik",
    "digamma",
    "floored_log",
    "row_normalize",
    "softmax",
    "log_softmax",
    "validate_params",
]


class GladNumericsError(RuntimeError):
    """Raised when an inference routine hits NaN/Inf and cannot continue."""


def _frozen(a: np.ndarray, dtype=None) -> np.ndarray:
    """Return a C-contiguous read-only copy of ``a``."""
    out = np.array(a, dtype=dtype, order="C", copy=True)
    out.flags.writeable = False
    return out


# ---------------------------------------------------------------------------
# numerical kernels
# ---------------------------------------------------------------------------

def bernoulli_loglik(y, p):
    """log P(y | p) for a Bernoulli draw, i.e. y*log(p) + (1-y)*log(1-p).

    ``y`` must be 0 or 1 and ``p`` strictly inside (0, 1); both may be arrays
    of matching shape.  Raises ``ValueError`` on domain violations so callers
    never silently produce NaN from an unclamped block probability.
    """
    y_arr = np.asarray(y, dtype=float)
    p_arr = np.asarray(p, dtype=float)
    if not np.all((y_arr == 0.0) | (y_arr == 1.0)):
        raise ValueError("Bernoulli outcome must be 0 or 1")
    if not np.all((p_arr > 0.0) & (p_arr < 1.0)):
        raise ValueError("Bernoulli probability must lie strictly in (0, 1)")
    out = y_arr * np.log(p_arr) + (1.0 - y_arr) * np.log1p(-p_arr)
    if out.ndim == 0:
        return float(out)
    return out


# Asymptotic series for psi(x): ln x - 1/(2x) - sum B_{2n} / (2n x^{2n}).
# Coefficients of the polynomial in 1/x^2, low order first.
_PSI_SERIES = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
)
_PSI_SHIFT = 8.0  # recurrence shift threshold; series error < 2e-14 beyond it


def digamma(x):
    """Digamma function for x > 0, elementwise on arrays.

    Uses the recurrence psi(x) = psi(x + 1) - 1/x to push the argument above
    ``_PSI_SHIFT`` and then evaluates the asymptotic series; accurate to
    better than 1e-10 over the range the fitters visit.
    """
    arr = np.asarray(x, dtype=float)
    if arr.size and not np.all(arr > 0.0):
        raise ValueError("digamma requires strictly positive arguments")
    shifted = np.array(arr, copy=True)
    acc = np.zeros_like(shifted)
    mask = shifted < _PSI_SHIFT
    while np.any(mask):
        acc[mask] -= 1.0 / shifted[mask]
        shifted[mask] += 1.0
        mask = shifted < _PSI_SHIFT
    z = 1.0 / (shifted * shifted)
    series = np.zeros_like(shifted)
    for c in reversed(_PSI_SERIES):
        series = z * (c + series)
    out = acc + np.log(shifted) - 0.5 / shifted - series
    if out.ndim == 0:
        return float(out)
    return out


def softmax(v: np.ndarray) -> np.ndarray:
    """Exponentiate-and-normalize a vector (or the last axis of an array).

    Shifts by the max first, so widely spread log-scores are safe.  An empty
    input has no normalizable support and raises ``ValueError``.
    """
    arr = np.asarray(v, dtype=float)
    if arr.size == 0:
        raise ValueError("softmax of an empty vector is undefined")
    shifted = arr - arr.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(v: np.ndarray) -> np.ndarray:
    """log(softmax(v)) computed without leaving the log domain."""
    arr = np.asarray(v, dtype=float)
    if arr.size == 0:
        raise ValueError("log_softmax of an empty vector is undefined")
    shifted = arr - arr.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def floored_log(x: np.ndarray) -> np.ndarray:
    """log with simplex entries clamped at SIMPLEX_FLOOR (0 log 0 territory)."""
    return np.log(np.maximum(np.asarray(x, dtype=float), SIMPLEX_FLOOR))


def row_normalize(m: np.ndarray) -> np.ndarray:
    """Normalize each row of a non-negative matrix to sum to one."""
    arr = np.asarray(m, dtype=float)
    s = arr.sum(axis=-1, keepdims=True)
    if np.any(s <= 0):
        raise ValueError("cannot normalize a row with non-positive mass")
    return arr / s


# ---------------------------------------------------------------------------
# value objects
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dataset:
    """Static observations: per-person feature counts and an undirected graph.

    ``features`` is an (N, V) non-negative integer count matrix; row p holds
    person p's aggregated activity counts.  ``links`` is the (N, N) symmetric
    0/1 adjacency matrix.  The diagonal is ignored throughout.
    """

    features: np.ndarray
    links: np.ndarray

    def __post_init__(self):
        x = _frozen(self.features, dtype=np.int64)
        y = _frozen(self.links, dtype=np.int8)
        if x.ndim != 2:
            raise ValueError("features must be a 2-D count matrix")
        if y.ndim != 2 or y.shape[0] != y.shape[1]:
            raise ValueError("links must be a square matrix")
        if y.shape[0] != x.shape[0]:
            raise ValueError("features and links disagree on the number of people")
        if np.any(x < 0):
            raise ValueError("feature counts must be non-negative")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("links must be 0/1")
        if not np.array_equal(y, y.T):
            raise ValueError("links must be symmetric")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "links", y)

    @property
    def n_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def trials(self) -> np.ndarray:
        """Per-person total activity count (row sums of ``features``)."""
        return self.features.sum(axis=1)

    @property
    def empty_rows(self) -> np.ndarray:
        """Indices of people with no recorded activity at all."""
        return np.flatnonzero(self.trials == 0)


@dataclass(frozen=True)
class ActivityDataset:
    """Activity-level observations: one categorical feature per activity.

    ``feature_ids[p]`` is an integer array with one entry per activity of
    person p, each the index of the single feature that activity produced
    (the one-hot encoding stored compactly).  ``links`` is as in
    :class:`Dataset`.
    """

    feature_ids: tuple
    links: np.ndarray
    n_features: int

    def __post_init__(self):
        y = _frozen(self.links, dtype=np.int8)
        if y.ndim != 2 or y.shape[0] != y.shape[1]:
            raise ValueError("links must be a square matrix")
        if not np.array_equal(y, y.T):
            raise ValueError("links must be symmetric")
        if len(self.feature_ids) != y.shape[0]:
            raise ValueError("feature_ids and links disagree on the number of people")
        rows = []
        for ids in self.feature_ids:
            a = _frozen(ids, dtype=np.int64)
            if a.ndim != 1:
                raise ValueError("each person's activities must be a 1-D index array")
            if a.size and (a.min() < 0 or a.max() >= self.n_features):
                raise ValueError("activity feature index out of range")
            rows.append(a)
        object.__setattr__(self, "feature_ids", tuple(rows))
        object.__setattr__(self, "links", y)

    @property
    def n_nodes(self) -> int:
        return self.links.shape[0]

    @property
    def activity_counts(self) -> np.ndarray:
        return np.array([ids.size for ids in self.feature_ids], dtype=np.int64)

    def feature_counts(self) -> np.ndarray:
        """Aggregate activities into an (N, V) count matrix."""
        out = np.zeros((self.n_nodes, self.n_features), dtype=np.int64)
        for p, ids in enumerate(self.feature_ids):
            np.add.at(out[p], ids, 1)
        return out


@dataclass(frozen=True)
class DynamicDataset:
    """A sequence of static snapshots sharing the same people and features."""

    snapshots: tuple

    def __post_init__(self):
        snaps = tuple(self.snapshots)
        if not snaps:
            raise ValueError("a dynamic dataset needs at least one snapshot")
        n, v = snaps[0].n_nodes, snaps[0].n_features
        for s in snaps:
            if not isinstance(s, Dataset):
                raise TypeError("snapshots must be Dataset instances")
            if s.n_nodes != n or s.n_features != v:
                raise ValueError("snapshots disagree on people or feature count")
        object.__setattr__(self, "snapshots", snaps)

    @property
    def horizon(self) -> int:
        return len(self.snapshots)

    @property
    def n_nodes(self) -> int:
        return self.snapshots[0].n_nodes

    @property
    def n_features(self) -> int:
        return self.snapshots[0].n_features


@dataclass(frozen=True)
class ModelParams:
    """Generative parameters shared by the whole model family.

    alpha : (M,) positive Dirichlet prior over group memberships.
    block : (M, M) Bernoulli link probabilities between groups, entries in
        ``[PROB_EPS, 1 - PROB_EPS]``.
    theta : (M, K) per-group mixture rate over roles; rows are simplices.
    beta  : (V, K) per-role feature distributions; columns are simplices.
    """

    alpha: np.ndarray
    block: np.ndarray
    theta: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "alpha", _frozen(self.alpha, dtype=float))
        object.__setattr__(self, "block", _frozen(self.block, dtype=float))
        object.__setattr__(self, "theta", _frozen(self.theta, dtype=float))
        object.__setattr__(self, "beta", _frozen(self.beta, dtype=float))

    @property
    def n_groups(self) -> int:
        return self.theta.shape[0]

    @property
    def n_roles(self) -> int:
        return self.theta.shape[1]

    @property
    def n_features(self) -> int:
        return self.beta.shape[0]


def validate_params(params: ModelParams) -> list:
    """Collect every invariant violation in ``params`` as a message list.

    An empty list means the parameters are usable by the generators and
    fitters.  Checks shapes, positivity of alpha, the Bernoulli clamp band on
    the block matrix, and the simplex constraints on theta rows / beta columns.
    """
    msgs = []
    alpha, block, theta, beta = params.alpha, params.block, params.theta, params.beta
    m = theta.shape[0] if theta.ndim == 2 else -1

    if alpha.ndim != 1:
        msgs.append("alpha must be a vector")
    elif np.any(~(alpha > 0)):
        msgs.append("alpha entries must be strictly positive")
    if theta.ndim != 2:
        msgs.append("theta must be a matrix")
    if beta.ndim != 2:
        msgs.append("beta must be a matrix")
    if block.ndim != 2 or block.shape[0] != block.shape[1]:
        msgs.append("block matrix must be square")
    if msgs:
        return msgs

    if alpha.shape[0] != m:
        msgs.append(f"alpha has {alpha.shape[0]} entries but theta has {m} rows")
    if block.shape[0] != m:
        msgs.append(f"block matrix is {block.shape[0]}x{block.shape[1]} but theta has {m} rows")
    if np.any(block < PROB_EPS) or np.any(block > 1.0 - PROB_EPS):
        msgs.append(f"block probabilities must lie in [{PROB_EPS}, 1 - {PROB_EPS}]")
    if np.any(theta < 0):
        msgs.append("theta entries must be non-negative")
    else:
        bad = np.flatnonzero(np.abs(theta.sum(axis=1) - 1.0) > SIMPLEX_ATOL)
        for i in bad:
            msgs.append(f"theta row {i} does not sum to 1")
    if np.any(beta < 0):
        msgs.append("beta entries must be non-negative")
    else:
        bad = np.flatnonzero(np.abs(beta.sum(axis=0) - 1.0) > SIMPLEX_ATOL)
        for k in bad:
            msgs.append(f"beta column {k} does not sum to 1")
    if beta.ndim == 2 and theta.ndim == 2 and beta.shape[1] != theta.shape[1]:
        msgs.append(f"beta has {beta.shape[1]} columns but theta has {theta.shape[1]} roles")
    return msgs


@dataclass(frozen=True)
class GladVariational:
    """Variational posterior of the static model.

    gamma : (N, M) Dirichlet parameters of q(pi_p).
    lam   : (N, M) group responsibilities q(G_p); rows are simplices.
    mu    : (N, K) role responsibilities q(R_p); rows are simplices.
    """

    gamma: np.ndarray
    lam: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        g = _frozen(self.gamma, dtype=float)
        l = _frozen(self.lam, dtype=float)
        u = _frozen(self.mu, dtype=float)
        if g.ndim != 2 or l.ndim != 2 or u.ndim != 2:
            raise ValueError("variational state arrays must be 2-D")
        if g.shape != l.shape or g.shape[0] != u.shape[0]:
            raise ValueError("variational state arrays disagree on shape")
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "lam", l)
        object.__setattr__(self, "mu", u)

    @property
    def n_nodes(self) -> int:
        return self.gamma.shape[0]

    @property
    def n_groups(self) -> int:
        return self.gamma.shape[1]

    @property
    def n_roles(self) -> int:
        return self.mu.shape[1]

    def grouping(self) -> np.ndarray:
        """Hard group assignment: argmax of the group responsibilities."""
        return np.argmax(self.lam, axis=1)

    def roles(self) -> np.ndarray:
        """Hard role assignment: argmax of the role responsibilities."""
        return np.argmax(self.mu, axis=1)
