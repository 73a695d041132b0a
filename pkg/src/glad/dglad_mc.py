"""Sequential Monte Carlo inference for the drifting-rate dynamic model.

The generative story matches :func:`glad.generator.generate_dglad`: every
group owns an unconstrained rate vector that follows a Gaussian random walk
across snapshots, each person redraws a group per snapshot from a personal
membership vector, a role per snapshot from the soft-maxed group rate, links
follow the group-pair block matrix and features the role's emission column.

Inference interleaves two moves:

* Gibbs scans over the discrete assignments.  Roles and groups are redrawn
  one person-snapshot at a time (snapshots in order, people in order) from
  their full conditionals; the membership vectors are then refreshed from
  their Dirichlet conditional.
* A bootstrap particle filter per group re-estimates the rate path given the
  current assignments; the filtered means feed the next Gibbs scan.

The first scan runs against the starting rates (``params.theta0`` copied to
every snapshot); every later scan sees the most recent filtered path.
``run_sampler`` averages the filtered paths over the post-burn-in sweeps,
which is what the change-detection scores should be computed from.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .glad_vem import FitConfig, fit
from .model import (
    SIMPLEX_ATOL,
    DynamicDataset,
    GladNumericsError,
    floored_log,
    log_softmax,
    softmax,
)

__all__ = [
    "DGladConfig",
    "DGladParams",
    "DGladResult",
    "DGladTrace",
    "bootstrap_filter",
    "default_params",
    "effective_sample_size",
    "group_posterior",
    "particle_filter_theta",
    "role_posterior",
    "run_sampler",
    "sample_group",
    "sample_pi",
    "sample_role",
    "systematic_resample",
]


@dataclass(frozen=True)
class DGladParams:
    """Fixed quantities of the dynamic model.

    ``theta0`` is the unconstrained starting rate table (groups x roles);
    the walk lives in that space and rows only become role distributions
    through a soft-max.  ``block`` and ``beta`` are shared across snapshots.
    """

    alpha: np.ndarray  # (M,) Dirichlet prior over memberships
    block: np.ndarray  # (M, M) link probabilities
    beta: np.ndarray  # (V, K) per-role feature distributions (columns)
    theta0: np.ndarray  # (M, K) unconstrained starting rates

    def __post_init__(self):
        object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=float))
        object.__setattr__(self, "block", np.asarray(self.block, dtype=float))
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))
        object.__setattr__(self, "theta0", np.asarray(self.theta0, dtype=float))
        m = self.alpha.shape[0]
        if self.alpha.ndim != 1 or np.any(self.alpha <= 0):
            raise ValueError("alpha must be a positive vector")
        if self.block.shape != (m, m):
            raise ValueError("block must be square over groups")
        if np.any(self.block <= 0.0) or np.any(self.block >= 1.0):
            raise ValueError("block entries must lie strictly inside (0, 1)")
        if self.theta0.ndim != 2 or self.theta0.shape[0] != m:
            raise ValueError("theta0 must have one row per group")
        if not np.all(np.isfinite(self.theta0)):
            raise ValueError("theta0 must be finite")
        k = self.theta0.shape[1]
        if self.beta.ndim != 2 or self.beta.shape[1] != k:
            raise ValueError("beta must have one column per role")
        if np.any(self.beta < 0) or not np.allclose(
            self.beta.sum(axis=0), 1.0, atol=SIMPLEX_ATOL
        ):
            raise ValueError("beta columns must be distributions")

    @property
    def n_groups(self) -> int:
        return self.alpha.shape[0]

    @property
    def n_roles(self) -> int:
        return self.theta0.shape[1]


@dataclass
class DGladTrace:
    """Mutable sampler state.

    ``G`` and ``R`` hold the per-snapshot assignments (snapshots x people),
    ``pi`` the membership vectors, ``theta_hat`` the latest filtered rate
    path, ``particles``/``weights`` the final per-group ensembles (weights
    row g belongs to particles[:, g]).  ``sweep`` counts completed scans.
    """

    G: np.ndarray  # (T, N) group assignments
    R: np.ndarray  # (T, N) role assignments
    pi: np.ndarray  # (N, M) membership vectors
    theta_hat: np.ndarray  # (T, M, K) filtered rate path
    particles: np.ndarray  # (P, M, K) final ensembles
    weights: np.ndarray  # (M, P) ensemble weights, rows normalized
    sweep: int = 0

    def __post_init__(self):
        self.G = np.asarray(self.G, dtype=np.int64)
        self.R = np.asarray(self.R, dtype=np.int64)
        self.pi = np.asarray(self.pi, dtype=float)
        self.theta_hat = np.asarray(self.theta_hat, dtype=float)
        self.particles = np.asarray(self.particles, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        horizon, m, k = self.theta_hat.shape
        n = self.pi.shape[0]
        p = self.particles.shape[0]
        if self.G.shape != (horizon, n) or self.R.shape != (horizon, n):
            raise ValueError("assignment arrays must be snapshots x people")
        if self.pi.shape != (n, m):
            raise ValueError("pi must be people x groups")
        if self.particles.shape != (p, m, k) or self.weights.shape != (m, p):
            raise ValueError("particle arrays disagree on shapes")
        if np.any(self.G < 0) or np.any(self.G >= m):
            raise ValueError("group assignments out of range")
        if np.any(self.R < 0) or np.any(self.R >= k):
            raise ValueError("role assignments out of range")
        if np.any(self.pi < 0) or not np.allclose(
            self.pi.sum(axis=1), 1.0, atol=SIMPLEX_ATOL
        ):
            raise ValueError("pi rows must be distributions")
        if np.any(self.weights < 0) or not np.allclose(
            self.weights.sum(axis=1), 1.0, atol=1e-9
        ):
            raise ValueError("weight rows must be distributions")
        if self.sweep < 0:
            raise ValueError("sweep counter must be non-negative")

    @property
    def horizon(self) -> int:
        return self.theta_hat.shape[0]

    @property
    def n_groups(self) -> int:
        return self.theta_hat.shape[1]

    def grouping(self) -> np.ndarray:
        """Per-person majority group across snapshots (ties to the lowest)."""
        m = self.n_groups
        counts = np.zeros((self.G.shape[1], m), dtype=np.int64)
        for row in self.G:
            counts[np.arange(row.shape[0]), row] += 1
        return counts.argmax(axis=1)


@dataclass(frozen=True)
class DGladConfig:
    """Sampler knobs.

    ``sweeps`` counts full Gibbs scans; sweeps after ``burn_in`` contribute
    to the averaged rate path.  ``sigma`` is the walk scale used by the
    particle filter (match the generator's), ``n_particles`` the ensemble
    size per group.  ``init_fit_iters`` and ``init_restarts`` govern the
    short static fit on the first snapshot that supplies default parameters
    and the warm-start grouping.  ``init`` picks how assignments start:
    ``"warm"`` copies the anchor fit's grouping to every snapshot so labels
    agree across time, ``"random"`` draws them uniformly.  Random starts let
    each snapshot crystallize its own labeling — a rate change can then be
    absorbed by relabeling people instead of moving the rate path, which
    silently destroys change scores — so "warm" is the default.
    """

    sweeps: int = 200
    burn_in: int = 100
    n_particles: int = 100
    sigma: float = 0.1
    seed: int = 0
    alpha0: float = 0.1
    init_fit_iters: int = 60
    init_restarts: int = 3
    init: str = "warm"

    def __post_init__(self):
        if self.sweeps < 0:
            raise ValueError("sweeps must be non-negative")
        if self.burn_in < 0:
            raise ValueError("burn_in must be non-negative")
        if self.n_particles < 2:
            raise ValueError("need at least two particles")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.alpha0 <= 0:
            raise ValueError("alpha0 must be positive")
        if self.init_fit_iters < 1:
            raise ValueError("init_fit_iters must be at least 1")
        if self.init_restarts < 1:
            raise ValueError("init_restarts must be at least 1")
        if self.init not in ("warm", "random"):
            raise ValueError("init must be 'warm' or 'random'")


@dataclass(frozen=True)
class DGladResult:
    """Sampler output.

    ``theta_mean`` is the post-burn-in average of the filtered rate paths —
    use it for change scores.  ``history`` stacks the filtered path of every
    sweep (sweeps x snapshots x groups x roles); ``trace`` is the final
    sampler state.
    """

    trace: DGladTrace
    theta_mean: np.ndarray  # (T, M, K)
    history: np.ndarray  # (sweeps, T, M, K)
    params: DGladParams
    config: DGladConfig = field(repr=False, default=DGladConfig())


def _draw_logits(logits: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw from unnormalized log probabilities."""
    shifted = np.exp(logits - logits.max())
    cdf = np.cumsum(shifted)
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), logits.shape[0] - 1))


def _check_node_time(p: int, t: int, n: int, horizon: int) -> None:
    if not 0 <= t < horizon:
        raise ValueError(f"snapshot {t} outside 0..{horizon - 1}")
    if not 0 <= p < n:
        raise ValueError(f"person {p} outside 0..{n - 1}")


def _role_logits(
    p: int, t: int, data: DynamicDataset, params: DGladParams, trace: DGladTrace
) -> np.ndarray:
    ls = log_softmax(trace.theta_hat[t, trace.G[t, p]])
    return ls + data.snapshots[t].features[p] @ floored_log(params.beta)


def _group_logits(
    p: int, t: int, data: DynamicDataset, params: DGladParams, trace: DGladTrace
) -> np.ndarray:
    m = params.n_groups
    g_row = trace.G[t]
    linked = np.bincount(g_row[data.snapshots[t].links[p].astype(bool)], minlength=m)
    total = np.bincount(g_row, minlength=m)
    total[g_row[p]] -= 1  # the person never scores a link with itself
    logits = floored_log(trace.pi[p]).copy()
    logits += log_softmax(trace.theta_hat[t])[:, trace.R[t, p]]
    logits += np.log(params.block) @ linked
    logits += np.log1p(-params.block) @ (total - linked)
    return logits


def role_posterior(
    p: int, t: int, data: DynamicDataset, params: DGladParams, trace: DGladTrace
) -> np.ndarray:
    """Full conditional over person ``p``'s role in snapshot ``t``.

    Proportional to the soft-maxed rate row of the person's current group
    times the multinomial likelihood of the snapshot's feature counts under
    each emission column.
    """
    _check_node_time(p, t, trace.pi.shape[0], trace.horizon)
    return softmax(_role_logits(p, t, data, params, trace))


def group_posterior(
    p: int, t: int, data: DynamicDataset, params: DGladParams, trace: DGladTrace
) -> np.ndarray:
    """Full conditional over person ``p``'s group in snapshot ``t``.

    Proportional to the membership weight, the soft-maxed rate entry of the
    person's current role, and the Bernoulli likelihood of the person's link
    row against everyone else's current assignment — the link factor stays
    in even though the static fitters drop activity-free people, because a
    group that explains the links badly should not absorb the person here.
    """
    _check_node_time(p, t, trace.pi.shape[0], trace.horizon)
    return softmax(_group_logits(p, t, data, params, trace))


def sample_role(
    p: int,
    t: int,
    data: DynamicDataset,
    params: DGladParams,
    trace: DGladTrace,
    rng: np.random.Generator,
) -> int:
    """Draw a role for person ``p`` in snapshot ``t`` from its conditional."""
    _check_node_time(p, t, trace.pi.shape[0], trace.horizon)
    return _draw_logits(_role_logits(p, t, data, params, trace), rng)


def sample_group(
    p: int,
    t: int,
    data: DynamicDataset,
    params: DGladParams,
    trace: DGladTrace,
    rng: np.random.Generator,
) -> int:
    """Draw a group for person ``p`` in snapshot ``t`` from its conditional."""
    _check_node_time(p, t, trace.pi.shape[0], trace.horizon)
    return _draw_logits(_group_logits(p, t, data, params, trace), rng)


def sample_pi(
    p: int, alpha: np.ndarray, trace: DGladTrace, rng: np.random.Generator
) -> np.ndarray:
    """Draw person ``p``'s membership vector.

    The Dirichlet prior is conjugate to the per-snapshot group draws, so the
    conditional is Dirichlet at ``alpha`` plus the person's group counts
    across the horizon.  An empty history returns a plain prior draw.
    """
    alpha = np.asarray(alpha, dtype=float)
    counts = np.bincount(trace.G[:, p], minlength=alpha.shape[0])
    return rng.dirichlet(alpha + counts)


def effective_sample_size(weights: np.ndarray) -> float:
    """Inverse sum of squared normalized weights; between 1 and len(weights)."""
    weights = np.asarray(weights, dtype=float)
    total = weights.sum()
    if total <= 0:
        raise ValueError("weights must have positive mass")
    w = weights / total
    return float(1.0 / np.square(w).sum())


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Systematic resampling: one uniform, evenly spaced CDF probes."""
    weights = np.asarray(weights, dtype=float)
    n = weights.shape[0]
    cdf = np.cumsum(weights / weights.sum())
    cdf[-1] = 1.0  # guard the top probe against round-off
    probes = (rng.random() + np.arange(n)) / n
    return np.searchsorted(cdf, probes, side="left").astype(np.int64)


def bootstrap_filter(
    loglik,
    start: np.ndarray,
    sigma: float,
    horizon: int,
    n_particles: int,
    rng: np.random.Generator,
):
    """Gaussian random-walk bootstrap filter with a pluggable data term.

    ``loglik(t, particles)`` maps the (P, K) ensemble to per-particle log
    likelihoods of snapshot ``t``.  The ensemble starts at
    ``N(start, sigma^2 I)`` — the walk's first move — and re-propagates
    before each later snapshot.  Weights accumulate across snapshots and
    reset to uniform after a systematic resample, which triggers whenever
    the effective sample size drops below half the ensemble.

    Returns ``(means, particles, weights)``: the per-snapshot posterior
    means (horizon, K) taken before any resampling, plus the final ensemble
    and its normalized weights.
    """
    if n_particles < 2:
        raise ValueError("need at least two particles")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    start = np.asarray(start, dtype=float)
    k = start.shape[0]
    particles = start + sigma * rng.standard_normal((n_particles, k))
    log_w = np.zeros(n_particles)
    means = np.empty((horizon, k))
    w = np.full(n_particles, 1.0 / n_particles)
    for t in range(horizon):
        if t > 0:
            particles = particles + sigma * rng.standard_normal(particles.shape)
        log_w = log_w + np.asarray(loglik(t, particles), dtype=float)
        top = log_w.max()
        if not np.isfinite(top):
            raise GladNumericsError(f"degenerate particle weights at snapshot {t}")
        shifted = np.exp(log_w - top)
        total = shifted.sum()
        if not np.isfinite(total) or total <= 0:
            raise GladNumericsError(f"degenerate particle weights at snapshot {t}")
        w = shifted / total
        means[t] = w @ particles
        if effective_sample_size(w) < n_particles / 2:
            keep = systematic_resample(w, rng)
            particles = particles[keep]
            log_w = np.zeros(n_particles)
            w = np.full(n_particles, 1.0 / n_particles)
        else:
            log_w = floored_log(w)
    return means, particles, w


def particle_filter_theta(
    data: DynamicDataset,
    params: DGladParams,
    trace: DGladTrace,
    sigma: float,
    n_particles: int,
    rng: np.random.Generator,
):
    """Re-estimate every group's rate path given the current assignments.

    One independent bootstrap filter per group; the data term of snapshot t
    is the product of soft-maxed particle rates over the group's members'
    current roles.  A group with no members in a snapshot keeps uniform
    weights there, so its path estimate is the prior walk's running mean.

    Returns ``(theta_hat, particles, weights)`` shaped (T, M, K),
    (P, M, K) and (M, P).
    """
    horizon = data.horizon
    m, k = params.theta0.shape
    counts = np.zeros((horizon, m, k))
    for t in range(horizon):
        np.add.at(counts[t], (trace.G[t], trace.R[t]), 1.0)

    theta_hat = np.empty((horizon, m, k))
    particles = np.empty((n_particles, m, k))
    weights = np.empty((m, n_particles))
    for g in range(m):
        role_counts = counts[:, g, :]

        def loglik(t, ensemble, _rc=role_counts):
            return log_softmax(ensemble) @ _rc[t]

        means, parts, w = bootstrap_filter(
            loglik, params.theta0[g], sigma, horizon, n_particles, rng
        )
        theta_hat[:, g, :] = means
        particles[:, g, :] = parts
        weights[g] = w
    return theta_hat, particles, weights


def _anchor_fit(data: DynamicDataset, n_groups: int, n_roles: int, config: DGladConfig):
    """Short static fit on the first snapshot, best bound of seeded restarts.

    Mean-field starts occasionally merge two groups; the merged basin is
    visibly worse in bound, so keeping the best of ``config.init_restarts``
    runs is a cheap and deterministic escape hatch.
    """
    best = None
    for child in np.random.SeedSequence(config.seed).spawn(config.init_restarts):
        static = FitConfig(
            max_iters=config.init_fit_iters,
            seed=int(child.generate_state(1)[0]),
            alpha0=config.alpha0,
        )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            attempt = fit(data.snapshots[0], n_groups, n_roles, static)
        if best is None or attempt.trace[-1] > best.trace[-1]:
            best = attempt
    return best


def default_params(
    data: DynamicDataset, n_groups: int, n_roles: int, config: DGladConfig
) -> DGladParams:
    """Anchor the dynamic model with a short static fit on the first snapshot.

    The block matrix, emission columns and membership prior come straight
    from the fit; the starting rates are the log of the fitted rate table,
    so the walk starts where the static model thinks the first snapshot
    sits.
    """
    res = _anchor_fit(data, n_groups, n_roles, config)
    return DGladParams(
        alpha=res.params.alpha,
        block=res.params.block,
        beta=res.params.beta,
        theta0=np.log(np.maximum(res.params.theta, 1e-12)),
    )


def _scan_assignments(
    data: DynamicDataset,
    params: DGladParams,
    trace: DGladTrace,
    rng: np.random.Generator,
    logbeta: np.ndarray,
    logb: np.ndarray,
    log1mb: np.ndarray,
) -> None:
    """One Gibbs scan over (snapshot, person) in ascending order, in place."""
    m = params.n_groups
    logpi = floored_log(trace.pi)
    for t in range(trace.horizon):
        snap = data.snapshots[t]
        ls_theta = log_softmax(trace.theta_hat[t])
        feat_scores = snap.features @ logbeta  # (N, K)
        neighbors = [np.flatnonzero(snap.links[p]) for p in range(snap.n_nodes)]
        g_row = trace.G[t]
        group_counts = np.bincount(g_row, minlength=m)
        for p in range(snap.n_nodes):
            r = _draw_logits(ls_theta[g_row[p]] + feat_scores[p], rng)
            trace.R[t, p] = r
            linked = np.bincount(g_row[neighbors[p]], minlength=m)
            total = group_counts.copy()
            total[g_row[p]] -= 1
            logits = logpi[p] + ls_theta[:, r] + logb @ linked
            logits += log1mb @ (total - linked)
            g_new = _draw_logits(logits, rng)
            group_counts[g_row[p]] -= 1
            group_counts[g_new] += 1
            g_row[p] = g_new


def run_sampler(
    data: DynamicDataset,
    n_groups: int,
    n_roles: int,
    config: DGladConfig = DGladConfig(),
    params: DGladParams | None = None,
) -> DGladResult:
    """Fit the dynamic model by Gibbs-within-SMC sweeps.

    Memberships start at a prior draw and roles uniform at random; group
    assignments start from the anchor fit's grouping copied across
    snapshots (``config.init="warm"``, the default) or uniform at random.
    Each sweep redraws roles and groups (snapshots ascending, people
    ascending), refreshes memberships, then refilters the rate paths.
    ``sweeps=0`` returns the untouched initialization.  The run is fully
    determined by ``config.seed``; non-finite filtered rates abort with a
    diagnostic rather than poisoning later sweeps.  Passing explicit
    ``params`` with warm init still runs the short anchor fit, purely for
    its grouping.
    """
    if not isinstance(data, DynamicDataset):
        raise TypeError("run_sampler expects a DynamicDataset")
    if n_groups < 1 or n_roles < 1:
        raise ValueError("need at least one group and one role")
    rng = np.random.default_rng(config.seed)
    anchor = None
    if params is None:
        anchor = _anchor_fit(data, n_groups, n_roles, config)
        params = DGladParams(
            alpha=anchor.params.alpha,
            block=anchor.params.block,
            beta=anchor.params.beta,
            theta0=np.log(np.maximum(anchor.params.theta, 1e-12)),
        )
    if params.n_groups != n_groups or params.n_roles != n_roles:
        raise ValueError("params disagree with the requested sizes")
    horizon, n = data.horizon, data.n_nodes

    if config.init == "warm":
        if anchor is None:
            anchor = _anchor_fit(data, n_groups, n_roles, config)
        g_init = np.tile(anchor.state.grouping(), (horizon, 1))
    else:
        g_init = rng.integers(0, n_groups, size=(horizon, n))
    trace = DGladTrace(
        G=g_init,
        R=rng.integers(0, n_roles, size=(horizon, n)),
        pi=rng.dirichlet(params.alpha, size=n),
        theta_hat=np.tile(params.theta0, (horizon, 1, 1)),
        particles=np.tile(params.theta0, (config.n_particles, 1, 1)),
        weights=np.full((n_groups, config.n_particles), 1.0 / config.n_particles),
        sweep=0,
    )

    logbeta = floored_log(params.beta)
    logb = np.log(params.block)
    log1mb = np.log1p(-params.block)
    history = np.empty((config.sweeps, horizon, n_groups, n_roles))
    for s in range(config.sweeps):
        _scan_assignments(data, params, trace, rng, logbeta, logb, log1mb)
        for p in range(n):
            trace.pi[p] = sample_pi(p, params.alpha, trace, rng)
        theta_hat, particles, weights = particle_filter_theta(
            data, params, trace, config.sigma, config.n_particles, rng
        )
        if not np.all(np.isfinite(theta_hat)):
            bad = sorted(set(np.argwhere(~np.isfinite(theta_hat))[:, 1].tolist()))
            raise GladNumericsError(
                f"non-finite filtered rates at sweep {s + 1} for groups {bad}"
            )
        trace.theta_hat = theta_hat
        trace.particles = particles
        trace.weights = weights
        trace.sweep = s + 1
        history[s] = theta_hat

    if config.sweeps > config.burn_in:
        theta_mean = history[config.burn_in :].mean(axis=0)
    elif config.sweeps:
        theta_mean = history[-1].copy()
    else:
        theta_mean = trace.theta_hat.copy()
    return DGladResult(
        trace=trace,
        theta_mean=theta_mean,
        history=history,
        params=params,
        config=config,
    )
