import math
import warnings

import numpy as np
import pytest
import scipy.special
from scipy.optimize import linear_sum_assignment

from glad.generator import InjectionConfig, generate_glad, inject_anomalies
from glad.glad_vem import (
    FitConfig,
    FitResult,
    compute_elbo,
    fit,
    infer_state,
    init_state,
    m_step,
    newton_alpha,
    update_gamma,
    update_lambda,
    update_mu,
)
from glad.model import Dataset, GladVariational, ModelParams, PROB_EPS


# ---------------------------------------------------------------------------
# straight-line oracles: plain loops, scipy digamma, math.lgamma -- written
# independently of the vectorized implementation
# ---------------------------------------------------------------------------

def _flog(v):
    return math.log(max(float(v), 1e-12))


def oracle_lambda(p, X, Y, alpha, B, theta, beta, gamma, lam, mu):
    N, M = lam.shape
    K = mu.shape[1]
    scores = []
    for m in range(M):
        s = 0.0
        for k in range(K):
            s += mu[p, k] * _flog(theta[m, k])
        s += scipy.special.psi(gamma[p, m]) - scipy.special.psi(gamma[p].sum())
        for q in range(N):
            if q == p:
                continue
            for n in range(M):
                f = Y[p, q] * math.log(B[m, n]) + (1 - Y[p, q]) * math.log(1 - B[m, n])
                s += lam[q, n] * f
        scores.append(s)
    shift = max(scores)
    e = [math.exp(s - shift) for s in scores]
    z = sum(e)
    return np.array([v / z for v in e])


def oracle_mu(p, X, theta, beta, lam):
    V, K = beta.shape
    M = theta.shape[0]
    scores = []
    for k in range(K):
        s = 0.0
        for v in range(V):
            s += X[p, v] * _flog(beta[v, k])
        for m in range(M):
            s += lam[p, m] * _flog(theta[m, k])
        scores.append(s)
    shift = max(scores)
    e = [math.exp(s - shift) for s in scores]
    z = sum(e)
    return np.array([v / z for v in e])


def oracle_m_step(X, Y, lam, mu):
    N, M = lam.shape
    K = mu.shape[1]
    V = X.shape[1]
    beta = np.zeros((V, K))
    for v in range(V):
        for k in range(K):
            for p in range(N):
                beta[v, k] += X[p, v] * mu[p, k]
    beta /= beta.sum(axis=0, keepdims=True)
    theta = np.zeros((M, K))
    for m in range(M):
        for k in range(K):
            for p in range(N):
                theta[m, k] += mu[p, k] * lam[p, m]
    theta /= theta.sum(axis=1, keepdims=True)
    num = np.zeros((M, M))
    den = np.zeros((M, M))
    for p in range(N):
        for q in range(N):
            if p == q:
                continue
            for m in range(M):
                for n in range(M):
                    num[m, n] += Y[p, q] * lam[p, m] * lam[q, n]
                    den[m, n] += lam[p, m] * lam[q, n]
    block = np.clip(num / den, PROB_EPS, 1 - PROB_EPS)
    return block, theta, beta


def oracle_elbo(X, Y, alpha, B, theta, beta, gamma, lam, mu):
    N, V = X.shape
    M, K = theta.shape
    psi = scipy.special.psi
    total = 0.0
    elogpi = [[psi(gamma[p, m]) - psi(gamma[p].sum()) for m in range(M)] for p in range(N)]
    for p in range(N):
        a_p = int(X[p].sum())
        coef = math.lgamma(a_p + 1)
        for v in range(V):
            coef -= math.lgamma(int(X[p, v]) + 1)
        total += coef
        for k in range(K):
            s = 0.0
            for v in range(V):
                s += X[p, v] * _flog(beta[v, k])
            total += mu[p, k] * s
        for m in range(M):
            for k in range(K):
                total += lam[p, m] * mu[p, k] * _flog(theta[m, k])
        for m in range(M):
            total += lam[p, m] * elogpi[p][m]
    for p in range(N):
        for q in range(p + 1, N):
            for m in range(M):
                for n in range(M):
                    f = Y[p, q] * math.log(B[m, n]) + (1 - Y[p, q]) * math.log(1 - B[m, n])
                    total += lam[p, m] * lam[q, n] * f
    for p in range(N):
        total += math.lgamma(alpha.sum()) - sum(math.lgamma(a) for a in alpha)
        for m in range(M):
            total += (alpha[m] - 1.0) * elogpi[p][m]
        total -= math.lgamma(gamma[p].sum()) - sum(math.lgamma(g) for g in gamma[p])
        for m in range(M):
            total -= (gamma[p, m] - 1.0) * elogpi[p][m]
        for m in range(M):
            if lam[p, m] > 0:
                total -= lam[p, m] * _flog(lam[p, m])
        for k in range(K):
            if mu[p, k] > 0:
                total -= mu[p, k] * _flog(mu[p, k])
    return total


def random_instance(seed, n=4, m=2, k=2, v=3):
    rng = np.random.default_rng(seed)
    alpha = rng.uniform(0.2, 2.0, size=m)
    raw = rng.uniform(0.05, 0.95, size=(m, m))
    block = np.clip(0.5 * (raw + raw.T), PROB_EPS, 1 - PROB_EPS)
    theta = rng.dirichlet(np.ones(k), size=m)
    beta = rng.dirichlet(np.ones(v), size=k).T
    params = ModelParams(alpha=alpha, block=block, theta=theta, beta=beta)
    x = rng.integers(0, 9, size=(n, v))
    y = np.triu(rng.integers(0, 2, size=(n, n)), k=1)
    y = y + y.T
    data = Dataset(features=x, links=y)
    gamma = rng.uniform(0.3, 3.0, size=(n, m))
    lam = rng.dirichlet(np.ones(m), size=n)
    mu = rng.dirichlet(np.ones(k), size=n)
    state = GladVariational(gamma=gamma, lam=lam, mu=mu)
    return data, params, state


def rel_close(a, b, tol=1e-10):
    return abs(a - b) <= tol * max(1.0, abs(b))


# ---------------------------------------------------------------------------
# unit updates against the oracles
# ---------------------------------------------------------------------------

def test_init_state_uniform():
    s = init_state(3, 4, 2)
    np.testing.assert_array_equal(s.gamma, np.full((3, 4), 0.25))
    np.testing.assert_array_equal(s.lam, np.full((3, 4), 0.25))
    np.testing.assert_array_equal(s.mu, np.full((3, 2), 0.5))
    with pytest.raises(ValueError):
        init_state(0, 2, 2)


def test_update_gamma_is_alpha_plus_lambda():
    data, params, state = random_instance(0)
    for p in range(data.n_nodes):
        np.testing.assert_allclose(
            update_gamma(p, params, state), params.alpha + state.lam[p], atol=0
        )


@pytest.mark.parametrize("seed", range(10))
def test_update_lambda_matches_oracle(seed):
    data, params, state = random_instance(seed)
    for p in range(data.n_nodes):
        got = update_lambda(p, data, params, state)
        want = oracle_lambda(
            p, data.features, data.links, params.alpha, params.block,
            params.theta, params.beta, state.gamma, state.lam, state.mu,
        )
        np.testing.assert_allclose(got, want, atol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_update_mu_matches_oracle(seed):
    data, params, state = random_instance(seed, v=4)
    for p in range(data.n_nodes):
        got = update_mu(p, data, params, state)
        want = oracle_mu(p, data.features, params.theta, params.beta, state.lam)
        np.testing.assert_allclose(got, want, atol=1e-12)


def test_update_lambda_constant_block_ignores_links():
    # all block entries equal: the pairwise term is constant in m and the
    # result is driven by the point-wise and digamma terms alone
    data, params, state = random_instance(3)
    flat = ModelParams(params.alpha, np.full((2, 2), 0.4), params.theta, params.beta)
    nolinks = Dataset(features=data.features, links=np.zeros_like(data.links))
    for p in range(data.n_nodes):
        np.testing.assert_allclose(
            update_lambda(p, data, flat, state),
            update_lambda(p, nolinks, flat, state),
            atol=1e-12,
        )


def test_update_lambda_single_node_uniform():
    # N=1: no pairwise terms; uniform theta and symmetric gamma give uniform
    data = Dataset(features=np.array([[3, 1]]), links=np.zeros((1, 1)))
    params = ModelParams(
        alpha=np.array([0.1, 0.1]),
        block=np.full((2, 2), 0.3),
        theta=np.full((2, 2), 0.5),
        beta=np.array([[0.7, 0.3], [0.3, 0.7]]),
    )
    state = GladVariational(
        gamma=np.array([[1.2, 1.2]]), lam=np.array([[0.5, 0.5]]), mu=np.array([[0.6, 0.4]])
    )
    np.testing.assert_allclose(update_lambda(0, data, params, state), [0.5, 0.5], atol=1e-12)


@pytest.mark.parametrize("seed", range(6))
def test_m_step_matches_oracle(seed):
    data, params, state = random_instance(seed, n=5, m=3, k=2, v=4)
    got = m_step(data, state, params.alpha)
    block, theta, beta = oracle_m_step(data.features, data.links, state.lam, state.mu)
    np.testing.assert_allclose(got.block, block, atol=1e-12)
    np.testing.assert_allclose(got.theta, theta, atol=1e-12)
    np.testing.assert_allclose(got.beta, beta, atol=1e-12)
    np.testing.assert_array_equal(got.alpha, params.alpha)


def test_m_step_one_hot_clique_saturates_block():
    # every person hard-assigned to group 0 and fully linked: the (0, 0)
    # block rate hits the upper clamp; empty cells fall back to 1/2
    n = 4
    lam = np.zeros((n, 2))
    lam[:, 0] = 1.0
    mu = np.full((n, 2), 0.5)
    state = GladVariational(gamma=np.ones((n, 2)), lam=lam, mu=mu)
    y = np.ones((n, n), dtype=int) - np.eye(n, dtype=int)
    data = Dataset(features=np.ones((n, 2), dtype=int), links=y)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        got = m_step(data, state, np.array([0.1, 0.1]))
    assert got.block[0, 0] == pytest.approx(1 - PROB_EPS)
    assert got.block[1, 1] == pytest.approx(0.5)


def test_newton_alpha_recovers_dirichlet():
    # gamma rows built as a large-count proxy of Dirichlet([2, 5]) draws
    rng = np.random.default_rng(0)
    pi = rng.dirichlet([2.0, 5.0], size=10_000)
    gamma = 1000.0 * pi
    alpha, converged = newton_alpha(gamma)
    assert converged
    np.testing.assert_allclose(alpha, [2.0, 5.0], rtol=0.05)


def test_newton_alpha_keeps_objective_nondecreasing():
    rng = np.random.default_rng(1)
    gamma = rng.uniform(0.2, 4.0, size=(50, 3))
    from glad.glad_vem import _dirichlet_objective

    from glad.model import digamma as dg

    suff = (dg(gamma) - dg(gamma.sum(axis=1))[:, None]).mean(axis=0)
    start = np.array([0.5, 0.5, 0.5])
    alpha, _ = newton_alpha(gamma, alpha0=start)
    assert _dirichlet_objective(alpha, suff) >= _dirichlet_objective(start, suff)
    assert np.all(alpha > 0)


@pytest.mark.parametrize("seed", range(8))
def test_compute_elbo_matches_oracle(seed):
    data, params, state = random_instance(seed, n=5, m=3, k=2, v=3)
    got = compute_elbo(data, params, state)
    want = oracle_elbo(
        data.features, data.links, params.alpha, params.block,
        params.theta, params.beta, state.gamma, state.lam, state.mu,
    )
    assert rel_close(got, want), (got, want)


def test_compute_elbo_trivial_instance_is_zero():
    # one person, one group, one role, one feature, alpha = [1]: every term
    # vanishes or cancels at the converged state gamma = alpha + lambda
    data = Dataset(features=np.array([[7]]), links=np.zeros((1, 1)))
    params = ModelParams(
        alpha=np.array([1.0]),
        block=np.array([[0.5]]),
        theta=np.array([[1.0]]),
        beta=np.array([[1.0]]),
    )
    state = GladVariational(gamma=np.array([[2.0]]), lam=np.array([[1.0]]), mu=np.array([[1.0]]))
    assert compute_elbo(data, params, state) == pytest.approx(0.0, abs=1e-12)


# ---------------------------------------------------------------------------
# fit loop behaviour
# ---------------------------------------------------------------------------

def _planted(seed=0, n=120, m=3):
    cfg = InjectionConfig(n_nodes=n, n_groups=m, block_in=0.35, block_out=0.05, seed=seed)
    return inject_anomalies(cfg)


def test_fit_trace_monotone_and_converges():
    data, _ = _planted(seed=2)
    res = fit(data, 3, 2, FitConfig(max_iters=80, seed=1))
    diffs = np.diff(res.trace)
    assert np.all(diffs >= -1e-8), diffs.min()
    assert res.converged


def test_fit_tol_inf_runs_exactly_one_iteration():
    data, _ = _planted(seed=3, n=40)
    res = fit(data, 3, 2, FitConfig(tol=np.inf, seed=0))
    assert res.n_iters == 1
    assert res.converged


def test_fit_deterministic_under_seed():
    data, _ = _planted(seed=4, n=60)
    r1 = fit(data, 3, 2, FitConfig(max_iters=30, seed=7))
    r2 = fit(data, 3, 2, FitConfig(max_iters=30, seed=7))
    np.testing.assert_array_equal(r1.trace, r2.trace)
    np.testing.assert_array_equal(r1.state.lam, r2.state.lam)
    np.testing.assert_array_equal(r1.params.theta, r2.params.theta)
    r3 = fit(data, 3, 2, FitConfig(max_iters=30, seed=8))
    assert not np.array_equal(r1.state.lam, r3.state.lam)


def test_fit_recovers_planted_partition():
    data, truth = _planted(seed=0, n=500, m=5)
    res = fit(data, 5, 2, FitConfig(max_iters=100, seed=0))
    inferred = res.state.grouping()
    overlap = np.zeros((5, 5))
    for g_true, g_hat in zip(truth.group, inferred):
        overlap[g_true, g_hat] += 1
    rows, cols = linear_sum_assignment(-overlap)
    agreement = overlap[rows, cols].sum() / data.n_nodes
    assert agreement >= 0.95, agreement


def test_fit_newton_alpha_mode_stays_monotone():
    data, _ = _planted(seed=5, n=80)
    res = fit(data, 3, 2, FitConfig(max_iters=40, seed=2, alpha_mode="newton"))
    assert np.all(np.diff(res.trace) >= -1e-8)
    assert not np.array_equal(res.params.alpha, np.full(3, 0.1))


def test_fit_jacobi_mode_monotone_but_different():
    data, _ = _planted(seed=6, n=60)
    seq = fit(data, 3, 2, FitConfig(max_iters=30, seed=3))
    jac = fit(data, 3, 2, FitConfig(max_iters=30, seed=3, mode="jacobi"))
    assert np.all(np.diff(jac.trace) >= -1e-8)
    assert len(jac.trace) != len(seq.trace) or not np.allclose(jac.trace, seq.trace)


def test_fit_links_only_freezes_activity_parameters():
    data, _ = _planted(seed=7, n=60)
    res = fit(data, 3, 2, FitConfig(max_iters=25, seed=4, links_only=True))
    assert np.all(np.diff(res.trace) >= -1e-8)
    # theta/beta still exactly the seeded initial draws: untouched by m-step
    from glad.glad_vem import _init_fit

    params0, _, _, _ = _init_fit(data, 3, 2, FitConfig(seed=4, links_only=True))
    np.testing.assert_array_equal(res.params.theta, params0.theta)
    np.testing.assert_array_equal(res.params.beta, params0.beta)


def test_fit_warns_more_groups_than_people():
    data = Dataset(features=np.array([[2, 1], [1, 2]]), links=np.array([[0, 1], [1, 0]]))
    with pytest.warns(UserWarning):
        fit(data, 3, 2, FitConfig(max_iters=2, seed=0))


def test_infer_state_permutation_equivariance():
    data, _ = _planted(seed=8, n=40)
    params = ModelParams(
        alpha=np.array([0.2, 0.5, 0.9]),
        block=np.array([[0.4, 0.1, 0.05], [0.1, 0.5, 0.2], [0.05, 0.2, 0.6]]),
        theta=np.array([[0.8, 0.2], [0.5, 0.5], [0.1, 0.9]]),
        beta=np.array([[0.7, 0.2], [0.3, 0.8]]),
    )
    perm = np.array([2, 0, 1])
    permuted = ModelParams(
        alpha=params.alpha[perm],
        block=params.block[np.ix_(perm, perm)],
        theta=params.theta[perm],
        beta=params.beta,
    )
    cfg = FitConfig(max_iters=20, tol=1e-9)
    s1, _ = infer_state(data, params, cfg)
    s2, _ = infer_state(data, permuted, cfg)
    np.testing.assert_allclose(s2.lam[:, :], s1.lam[:, perm], atol=1e-9)
    np.testing.assert_allclose(s2.gamma, s1.gamma[:, perm], atol=1e-9)


def test_infer_state_agrees_with_brute_force_posterior():
    # tiny well-separated instances: mean-field argmax matches the exact
    # marginal argmax from enumerating every (G, R) configuration
    hits = 0
    for seed in range(6):
        params = ModelParams(
            alpha=np.array([0.5, 0.5]),
            block=np.array([[0.8, 0.05], [0.05, 0.8]]),
            theta=np.array([[0.9, 0.1], [0.1, 0.9]]),
            beta=np.array([[0.9, 0.1], [0.1, 0.9]]),
        )
        data, _ = generate_glad(params, 3, 2, seed=seed)
        state, _ = infer_state(data, params, FitConfig(max_iters=300, tol=1e-12))

        n, m, k = 3, 2, 2
        post_g = np.zeros((n, m))
        post_r = np.zeros((n, k))
        for gs in np.ndindex(*(m,) * n):
            for rs in np.ndindex(*(k,) * n):
                w = 1.0
                for p in range(n):
                    w *= params.alpha[gs[p]] / params.alpha.sum()
                    w *= params.theta[gs[p], rs[p]]
                    for v in range(2):
                        w *= params.beta[v, rs[p]] ** data.features[p, v]
                for p in range(n):
                    for q in range(p + 1, n):
                        b = params.block[gs[p], gs[q]]
                        w *= b if data.links[p, q] else (1 - b)
                for p in range(n):
                    post_g[p, gs[p]] += w
                    post_r[p, rs[p]] += w
        exact_g = post_g.argmax(axis=1)
        exact_r = post_r.argmax(axis=1)
        if np.array_equal(state.grouping(), exact_g) and np.array_equal(
            state.roles(), exact_r
        ):
            hits += 1
    assert hits >= 5, hits


def test_fit_result_shape():
    data, _ = _planted(seed=9, n=30)
    res = fit(data, 2, 2, FitConfig(max_iters=5, seed=0))
    assert isinstance(res, FitResult)
    assert res.n_iters == len(res.trace) - 1
    assert res.params.n_groups == 2 and res.state.n_roles == 2
