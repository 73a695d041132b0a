"""Variational EM for the static model.

Mean-field family: q(pi_p) Dirichlet(gamma_p), q(G_p) categorical(lambda_p),
q(R_p) categorical(mu_p).  The E-step is a Gauss-Seidel sweep over people in
index order, updating gamma_p, lambda_p, mu_p in that order; every update is
the exact coordinate maximizer of the evidence lower bound, so the per-
iteration trace is non-decreasing.  The bound counts each unordered pair once
(the adjacency matrix is symmetric; both endpoints still see every partner in
their lambda update, which is the exact gradient of the once-counted term for
a symmetric block matrix).  Self-pairs are excluded throughout.

The M-step re-estimates beta (per-role feature distributions), theta
(per-group role mixtures) and the block matrix in closed form; the Dirichlet
prior alpha stays fixed by default and can be re-fitted by a guarded Newton
iteration (``alpha_mode="newton"``).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, polygamma

from .model import (
    Dataset,
    GladNumericsError,
    GladVariational,
    ModelParams,
    PROB_EPS,
    digamma,
    floored_log,
    softmax,
    validate_params,
)

__all__ = [
    "FitConfig",
    "FitResult",
    "init_state",
    "update_gamma",
    "update_lambda",
    "update_mu",
    "m_step",
    "newton_alpha",
    "compute_elbo",
    "infer_state",
    "fit",
]


@dataclass(frozen=True)
class FitConfig:
    """Knobs of the variational EM loop.

    ``tol`` is relative ELBO change between iterations; ``tol=inf`` stops
    after exactly one iteration.  ``links_only`` drops every term that
    involves activities (features, roles, their entropies) and freezes
    theta/beta, which turns the fitter into a plain mixed-membership
    blockmodel; the baseline module relies on this.  ``mode`` selects the
    update schedule: ``"sequential"`` (Gauss-Seidel, the default, carries the
    ascent guarantee) or ``"jacobi"`` (whole-matrix updates reading the
    previous iterate).
    """

    max_iters: int = 200
    tol: float = 1e-6
    seed: int = 0
    alpha_mode: str = "fixed"  # "fixed" | "newton"
    alpha0: float = 0.1
    mode: str = "sequential"  # "sequential" | "jacobi"
    links_only: bool = False
    init_noise: float = 0.01

    def __post_init__(self):
        if self.alpha_mode not in ("fixed", "newton"):
            raise ValueError("alpha_mode must be 'fixed' or 'newton'")
        if self.mode not in ("sequential", "jacobi"):
            raise ValueError("mode must be 'sequential' or 'jacobi'")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass(frozen=True)
class FitResult:
    """Fitted parameters, final variational state and the ELBO trace.

    ``trace[0]`` is the bound at initialization; one entry follows per EM
    iteration.  ``converged`` is False when the loop ran out of iterations
    before the relative ELBO change fell below ``tol``.
    """

    params: ModelParams
    state: GladVariational
    trace: np.ndarray
    converged: bool

    @property
    def n_iters(self) -> int:
        return len(self.trace) - 1


def init_state(n_nodes: int, n_groups: int, n_roles: int) -> GladVariational:
    """Uniform variational state: gamma = lambda = 1/M, mu = 1/K."""
    if min(n_nodes, n_groups, n_roles) < 1:
        raise ValueError("n_nodes, n_groups and n_roles must be positive")
    return GladVariational(
        gamma=np.full((n_nodes, n_groups), 1.0 / n_groups),
        lam=np.full((n_nodes, n_groups), 1.0 / n_groups),
        mu=np.full((n_nodes, n_roles), 1.0 / n_roles),
    )


# ---------------------------------------------------------------------------
# coordinate updates (single person; the fit loop uses the same math swept
# in place, and the tests pin both against straight-line transcriptions)
# ---------------------------------------------------------------------------

def update_gamma(p: int, params: ModelParams, state: GladVariational) -> np.ndarray:
    """gamma_p = alpha + lambda_p."""
    return params.alpha + state.lam[p]


def _pair_scores(p: int, links: np.ndarray, lam: np.ndarray, params: ModelParams):
    """sum_{q != p} sum_n lambda_{q,n} * f(Y_pq, B_mn), for every group m."""
    y_row = links[p].astype(float)
    y_row[p] = 0.0
    linked = y_row @ lam
    notlinked = lam.sum(axis=0) - lam[p] - linked
    log_b = np.log(params.block)
    log_1mb = np.log1p(-params.block)
    return log_b @ linked + log_1mb @ notlinked


def update_lambda(
    p: int,
    data: Dataset,
    params: ModelParams,
    state: GladVariational,
    links_only: bool = False,
) -> np.ndarray:
    """Exact coordinate update of the group responsibilities of person p.

    log lambda_{p,m} collects the expected role log-likelihood under theta,
    the Dirichlet expectation digamma(gamma_pm) - digamma(sum gamma_p), and
    the link evidence against every other person, then normalizes.
    """
    gamma_p = state.gamma[p]
    logits = digamma(gamma_p) - digamma(gamma_p.sum())
    logits = logits + _pair_scores(p, data.links, state.lam, params)
    if not links_only:
        logits = logits + floored_log(params.theta) @ state.mu[p]
    return softmax(logits)


def update_mu(p: int, data: Dataset, params: ModelParams, state: GladVariational) -> np.ndarray:
    """Exact coordinate update of the role responsibilities of person p."""
    logits = data.features[p] @ floored_log(params.beta)
    logits = logits + floored_log(params.theta).T @ state.lam[p]
    return softmax(logits)


def m_step(
    data: Dataset,
    state: GladVariational,
    alpha: np.ndarray,
    *,
    alpha_mode: str = "fixed",
    links_only: bool = False,
    prev: ModelParams | None = None,
) -> ModelParams:
    """Closed-form parameter re-estimation from the current responsibilities.

    beta columns are expected-count feature distributions per role, theta rows
    expected role mixtures per group, and the block matrix the expected link
    frequency between group pairs over all ordered non-self pairs (clamped to
    the Bernoulli band, symmetrized to kill round-off skew).  Degenerate
    denominators fall back to uniform entries with a warning.  With
    ``links_only`` the previous theta/beta are carried through unchanged.
    """
    lam, mu = state.lam, state.mu
    n_nodes = lam.shape[0]

    if links_only:
        if prev is None:
            raise ValueError("links_only m_step needs the previous parameters")
        theta, beta = prev.theta, prev.beta
    else:
        theta_num = lam.T @ mu
        theta_den = theta_num.sum(axis=1, keepdims=True)
        if np.any(theta_den <= 0):
            warnings.warn("empty group in theta update; substituting uniform row")
            theta_num = np.where(theta_den > 0, theta_num, 1.0)
            theta_den = theta_num.sum(axis=1, keepdims=True)
        theta = theta_num / theta_den

        beta_num = data.features.T @ mu
        beta_den = beta_num.sum(axis=0, keepdims=True)
        if np.any(beta_den <= 0):
            warnings.warn("unused role in beta update; substituting uniform column")
            beta_num = np.where(beta_den > 0, beta_num, 1.0)
            beta_den = beta_num.sum(axis=0, keepdims=True)
        beta = beta_num / beta_den

    y = data.links.astype(float)
    np.fill_diagonal(y, 0.0)
    linked = lam.T @ y @ lam
    col = lam.sum(axis=0)
    total = np.outer(col, col) - lam.T @ lam
    if np.any(total <= 0):
        warnings.warn("degenerate pair mass in block update; substituting 1/2")
    block = np.where(total > 0, linked / np.where(total > 0, total, 1.0), 0.5)
    block = 0.5 * (block + block.T)
    block = np.clip(block, PROB_EPS, 1.0 - PROB_EPS)

    if alpha_mode == "newton":
        alpha, _ = newton_alpha(state.gamma, alpha0=alpha)
    elif alpha_mode != "fixed":
        raise ValueError("alpha_mode must be 'fixed' or 'newton'")
    if n_nodes != data.n_nodes:
        raise ValueError("state and data disagree on the number of people")
    return ModelParams(alpha=np.asarray(alpha, dtype=float), block=block, theta=theta, beta=beta)


def _dirichlet_objective(alpha: np.ndarray, suff: np.ndarray) -> float:
    return float(gammaln(alpha.sum()) - gammaln(alpha).sum() + (alpha - 1.0) @ suff)


def newton_alpha(
    gamma: np.ndarray,
    alpha0: np.ndarray | None = None,
    tol: float = 1e-8,
    max_iters: int = 100,
):
    """Maximum-likelihood Dirichlet prior from the variational posteriors.

    The sufficient statistic is the average expected log-membership
    mean_p E[log pi_pm] implied by the gamma rows.  Newton steps use the
    diagonal-plus-rank-one structure of the Hessian; steps are halved until
    they keep alpha positive and do not decrease the objective, so plugging
    the result into the ELBO preserves ascent.  Returns ``(alpha, converged)``
    and warns when the gradient norm is still above ``tol`` after
    ``max_iters`` iterations.
    """
    gamma = np.asarray(gamma, dtype=float)
    suff = (digamma(gamma) - digamma(gamma.sum(axis=1))[:, None]).mean(axis=0)
    m = gamma.shape[1]
    alpha = np.full(m, 1.0) if alpha0 is None else np.array(alpha0, dtype=float, copy=True)

    converged = False
    for _ in range(max_iters):
        grad = digamma(alpha.sum()) - digamma(alpha) + suff
        if np.max(np.abs(grad)) < tol:
            converged = True
            break
        q = -polygamma(1, alpha)
        c = polygamma(1, alpha.sum())
        b = (grad / q).sum() / (1.0 / c + (1.0 / q).sum())
        step = (grad - b) / q
        base = _dirichlet_objective(alpha, suff)
        scale = 1.0
        for _ in range(60):
            candidate = alpha - scale * step
            if np.all(candidate > 0) and _dirichlet_objective(candidate, suff) >= base:
                break
            scale *= 0.5
        else:
            break  # no acceptable step remains; stay at the current iterate
        alpha = alpha - scale * step
    if not converged:
        grad = digamma(alpha.sum()) - digamma(alpha) + suff
        converged = bool(np.max(np.abs(grad)) < tol)
        if not converged:
            warnings.warn("newton_alpha stopped before reaching the gradient tolerance")
    return alpha, converged


def compute_elbo(
    data: Dataset,
    params: ModelParams,
    state: GladVariational,
    links_only: bool = False,
) -> float:
    """Evidence lower bound at the given parameters and variational state.

    Terms: expected feature likelihood (multinomial, coefficient included),
    expected role-given-group and group-given-membership likelihoods, the
    link likelihood over unordered non-self pairs, the Dirichlet prior, minus
    the Dirichlet, group and role entropies of q.  ``links_only`` keeps only
    the terms that survive when activities are ignored.
    """
    gamma, lam, mu = state.gamma, state.lam, state.mu
    alpha = params.alpha
    n_nodes = gamma.shape[0]

    elogpi = digamma(gamma) - digamma(gamma.sum(axis=1))[:, None]
    group_term = float((lam * elogpi).sum())

    upper = np.triu(np.ones((n_nodes, n_nodes)), k=1)
    linked = lam.T @ np.triu(data.links.astype(float), k=1) @ lam
    total = lam.T @ upper @ lam
    log_b = np.log(params.block)
    log_1mb = np.log1p(-params.block)
    pair_term = float((linked * log_b + (total - linked) * log_1mb).sum())

    dir_prior = n_nodes * float(gammaln(alpha.sum()) - gammaln(alpha).sum())
    dir_prior += float(((alpha - 1.0) * elogpi.sum(axis=0)).sum())

    ent_gamma = float(
        (
            gammaln(gamma.sum(axis=1))
            - gammaln(gamma).sum(axis=1)
            + ((gamma - 1.0) * elogpi).sum(axis=1)
        ).sum()
    )
    ent_lam = float((lam * floored_log(lam)).sum())

    total_elbo = group_term + pair_term + dir_prior - ent_gamma - ent_lam
    if not links_only:
        x = data.features
        coef = gammaln(x.sum(axis=1) + 1.0).sum() - gammaln(x + 1.0).sum()
        point_term = float(coef) + float((mu * (x @ floored_log(params.beta))).sum())
        role_term = float(np.einsum("pm,mk,pk->", lam, floored_log(params.theta), mu))
        ent_mu = float((mu * floored_log(mu)).sum())
        total_elbo += point_term + role_term - ent_mu
    return total_elbo


# ---------------------------------------------------------------------------
# sweeps and the fit loop
# ---------------------------------------------------------------------------

def _sequential_sweep(data, params, gamma, lam, mu, xlogbeta, links_only):
    """In-place Gauss-Seidel pass over people: gamma_p, lambda_p, mu_p."""
    alpha = params.alpha
    log_b = np.log(params.block)
    log_1mb = np.log1p(-params.block)
    log_theta = floored_log(params.theta)
    y = data.links
    col = lam.sum(axis=0)
    for p in range(lam.shape[0]):
        gamma[p] = alpha + lam[p]
        logits = digamma(gamma[p]) - digamma(gamma[p].sum())
        y_row = y[p].astype(float)
        y_row[p] = 0.0
        linked = y_row @ lam
        notlinked = col - lam[p] - linked
        logits = logits + log_b @ linked + log_1mb @ notlinked
        if not links_only:
            logits = logits + log_theta @ mu[p]
        new_lam = softmax(logits)
        col += new_lam - lam[p]
        lam[p] = new_lam
        if not links_only:
            mu[p] = softmax(xlogbeta[p] + log_theta.T @ lam[p])


def _jacobi_sweep(data, params, gamma, lam, mu, xlogbeta, links_only):
    """Whole-matrix pass: every lambda update reads the previous iterate."""
    alpha = params.alpha
    log_b = np.log(params.block)
    log_1mb = np.log1p(-params.block)
    log_theta = floored_log(params.theta)
    y = data.links.astype(float)
    np.fill_diagonal(y, 0.0)

    gamma[:] = alpha[None, :] + lam
    elogpi = digamma(gamma) - digamma(gamma.sum(axis=1))[:, None]
    linked = y @ lam
    notlinked = lam.sum(axis=0)[None, :] - lam - linked
    logits = elogpi + linked @ log_b.T + notlinked @ log_1mb.T
    if not links_only:
        logits = logits + mu @ log_theta.T
    lam[:] = softmax(logits)
    if not links_only:
        mu[:] = softmax(xlogbeta + lam @ log_theta)


def infer_state(
    data: Dataset,
    params: ModelParams,
    config: FitConfig | None = None,
) -> tuple:
    """Posterior inference at fixed parameters (E-steps only).

    Sweeps until the largest state change falls below ``config.tol`` or
    ``config.max_iters`` sweeps have run.  Returns ``(state, trace)`` with one
    ELBO entry per sweep.
    """
    config = config or FitConfig()
    msgs = validate_params(params)
    if msgs:
        raise ValueError("invalid model parameters: " + "; ".join(msgs))
    n, m, k = data.n_nodes, params.n_groups, params.n_roles
    state = init_state(n, m, k)
    gamma = np.array(state.gamma)
    lam = np.array(state.lam)
    mu = np.array(state.mu)
    xlogbeta = data.features @ floored_log(params.beta)
    sweep = _sequential_sweep if config.mode == "sequential" else _jacobi_sweep

    trace = []
    for _ in range(config.max_iters):
        before = (gamma.copy(), lam.copy(), mu.copy())
        sweep(data, params, gamma, lam, mu, xlogbeta, config.links_only)
        trace.append(
            compute_elbo(data, params, GladVariational(gamma, lam, mu), config.links_only)
        )
        delta = max(
            np.max(np.abs(gamma - before[0])),
            np.max(np.abs(lam - before[1])),
            np.max(np.abs(mu - before[2])),
        )
        if delta < config.tol:
            break
    return GladVariational(gamma, lam, mu), np.array(trace)


def seed_params(
    links: np.ndarray,
    n_features: int,
    n_groups: int,
    n_roles: int,
    rng: np.random.Generator,
    alpha0: float = 0.1,
) -> ModelParams:
    """Seeded starting parameters for any of the fitters.

    The block matrix starts assortative with the diagonal and off-diagonal
    scaled so their membership-weighted mean matches the observed link
    density.  A fully random start makes the first sweep sort people by
    degree alone, which erases the +-1% membership noise and collapses
    everyone into one group; an assortative start lets the sweeps amplify
    neighbourhood structure instead.  Rates and feature profiles are
    random draws; a symmetric jitter keeps block starts seed-dependent.
    """
    n = links.shape[0]
    theta = rng.dirichlet(np.ones(n_roles), size=n_groups)
    beta = rng.dirichlet(np.ones(n_features), size=n_roles).T
    pairs = n * (n - 1) // 2
    density = float(np.triu(links, k=1).sum()) / pairs if pairs else 0.0
    block = np.full((n_groups, n_groups), 0.5 * density)
    np.fill_diagonal(block, 0.5 * (n_groups + 1) * density)
    jitter = rng.uniform(0.9, 1.1, size=(n_groups, n_groups))
    block = np.clip(block * 0.5 * (jitter + jitter.T), PROB_EPS, 1.0 - PROB_EPS)
    return ModelParams(
        alpha=np.full(n_groups, alpha0), block=block, theta=theta, beta=beta
    )


def _init_fit(data: Dataset, n_groups: int, n_roles: int, config: FitConfig):
    """Seeded random parameters plus a noise-broken uniform state."""
    rng = np.random.default_rng(config.seed)
    n = data.n_nodes
    params = seed_params(
        data.links, data.n_features, n_groups, n_roles, rng, config.alpha0
    )

    state = init_state(n, n_groups, n_roles)
    lam = np.array(state.lam)
    mu = np.array(state.mu)
    lam *= 1.0 + config.init_noise * (2.0 * rng.random(lam.shape) - 1.0)
    mu *= 1.0 + config.init_noise * (2.0 * rng.random(mu.shape) - 1.0)
    lam /= lam.sum(axis=1, keepdims=True)
    mu /= mu.sum(axis=1, keepdims=True)
    return params, np.array(state.gamma), lam, mu


def fit(
    data: Dataset,
    n_groups: int,
    n_roles: int,
    config: FitConfig | None = None,
) -> FitResult:
    """Variational EM: alternate full E-sweeps with closed-form M-steps.

    Initialization is seeded: rates and feature profiles are drawn at
    random, the block matrix starts assortative at the observed density,
    and the uniform state gets +-1% multiplicative symmetry-breaking
    noise (re-normalized).
    The ELBO is recorded at initialization and after every iteration; the
    loop stops when its relative change drops below ``config.tol``.  A
    non-finite bound aborts with :class:`GladNumericsError`.
    """
    config = config or FitConfig()
    if n_groups > data.n_nodes:
        warnings.warn("more groups than people; expect degenerate groups")
    if n_roles > data.n_features:
        warnings.warn("more roles than features; expect redundant roles")

    params, gamma, lam, mu = _init_fit(data, n_groups, n_roles, config)
    xlogbeta = data.features @ floored_log(params.beta)
    sweep = _sequential_sweep if config.mode == "sequential" else _jacobi_sweep

    trace = [compute_elbo(data, params, GladVariational(gamma, lam, mu), config.links_only)]
    converged = False
    for iteration in range(1, config.max_iters + 1):
        sweep(data, params, gamma, lam, mu, xlogbeta, config.links_only)
        state = GladVariational(gamma, lam, mu)
        params = m_step(
            data,
            state,
            params.alpha,
            alpha_mode=config.alpha_mode,
            links_only=config.links_only,
            prev=params,
        )
        if not config.links_only:
            xlogbeta = data.features @ floored_log(params.beta)
        bound = compute_elbo(data, params, state, config.links_only)
        if not np.isfinite(bound):
            raise GladNumericsError(
                f"ELBO became non-finite at iteration {iteration} "
                f"(previous value {trace[-1]:.6g}); aborting"
            )
        previous = trace[-1]
        trace.append(bound)
        if abs(bound - previous) <= config.tol * max(1.0, abs(previous)):
            converged = True
            break
    return FitResult(
        params=params,
        state=GladVariational(gamma, lam, mu),
        trace=np.array(trace),
        converged=converged,
    )
