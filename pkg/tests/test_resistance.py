import math

import numpy as np
import pytest
import scipy.sparse as sp

from mottlab import env, network, resistance, stats, walk
from mottlab.errors import DomainError, ProvenanceError


def path_matrix(weights):
    n = len(weights) + 1
    mat = sp.lil_matrix((n, n))
    for k, w in enumerate(weights):
        mat[k, k + 1] = w
        mat[k + 1, k] = w
    return mat.tocsr()


def test_series_law():
    C = path_matrix([1.0, 1.0])
    assert resistance.effective_resistance(C, {0}, {2}) == pytest.approx(2.0, rel=1e-12)


def test_parallel_law():
    C = sp.csr_matrix(np.array([[0.0, 2.0], [2.0, 0.0]]))  # two unit edges resolved
    assert resistance.effective_resistance(C, {0}, {1}) == pytest.approx(0.5, rel=1e-12)


def test_series_parallel_combination():
    # 6 + (6 || 3) conductances -> resistances 1/6 + 1/9
    mat = sp.lil_matrix((3, 3))
    mat[0, 1] = mat[1, 0] = 6.0
    mat[1, 2] = mat[2, 1] = 6.0 + 3.0
    R = resistance.effective_resistance(mat.tocsr(), {0}, {2})
    assert R == pytest.approx(1 / 6 + 1 / 9, rel=1e-12)


def test_terminal_validation():
    C = path_matrix([1.0, 1.0, 1.0])
    with pytest.raises(DomainError):
        resistance.effective_resistance(C, {0}, {0, 3})
    with pytest.raises(DomainError):
        resistance.effective_resistance(C, set(), {3})


def test_disconnected_returns_infinite():
    mat = sp.lil_matrix((4, 4))
    mat[0, 1] = mat[1, 0] = 1.0
    mat[2, 3] = mat[3, 2] = 1.0
    assert resistance.effective_resistance(mat.tocsr(), {0}, {3}) == math.inf


def test_solver_against_variational_oracle():
    # independent oracle: numerical minimisation of the Dirichlet energy
    from scipy.optimize import minimize

    rng = np.random.default_rng(12)
    n = 12
    C = rng.random((n, n)) * (rng.random((n, n)) < 0.5)
    C = np.triu(C, 1)
    C = C + C.T
    for k in range(n - 1):  # keep it connected
        C[k, k + 1] = C[k + 1, k] = max(C[k, k + 1], 0.2)
    A, B = {0}, {n - 1}
    R, f = resistance.effective_resistance(sp.csr_matrix(C), A, B, return_potential=True)

    free = list(range(1, n - 1))

    def energy(u_free):
        u = np.zeros(n)
        u[n - 1] = 1.0
        u[free] = u_free
        return 0.5 * float(np.sum(C * (u[:, None] - u[None, :]) ** 2))

    res = minimize(energy, np.full(n - 2, 0.5), method="CG", tol=1e-14)
    assert 1.0 / res.fun == pytest.approx(R, rel=1e-8)
    # the solver's potential is the minimiser: random admissible perturbations cost energy
    e_star = resistance.dirichlet_energy(sp.csr_matrix(C), f)
    assert e_star == pytest.approx(1.0 / R, rel=1e-10)
    for _ in range(20):
        g = rng.normal(size=n) * 1e-3
        g[0] = g[n - 1] = 0.0
        assert resistance.dirichlet_energy(sp.csr_matrix(C), f + g) >= e_star - 1e-15


def test_rayleigh_edge_deletion():
    rng = np.random.default_rng(21)
    n = 10
    C = rng.random((n, n))
    C = np.triu(C, 1)
    C = C + C.T
    base = resistance.effective_resistance(sp.csr_matrix(C), {0}, {n - 1})
    for _ in range(15):
        i, j = rng.integers(0, n, size=2)
        if i == j or C[i, j] == 0:
            continue
        C2 = C.copy()
        C2[i, j] = C2[j, i] = 0.0
        r2 = resistance.effective_resistance(sp.csr_matrix(C2), {0}, {n - 1})
        assert r2 >= base * (1 - 1e-12)


def test_resistance_triangle_inequality():
    rng = np.random.default_rng(22)
    n = 9
    C = rng.random((n, n))
    C = np.triu(C, 1)
    C = C + C.T
    M = sp.csr_matrix(C)
    trips = rng.integers(0, n, size=(25, 3))
    for a, b, c in trips:
        if len({a, b, c}) < 3:
            continue
        rab = resistance.effective_resistance(M, {int(a)}, {int(b)})
        rbc = resistance.effective_resistance(M, {int(b)}, {int(c)})
        rac = resistance.effective_resistance(M, {int(a)}, {int(c)})
        assert rac <= rab + rbc + 1e-12


def test_resistance_from_origin_matches_pairwise():
    p = env.ModelParams(rho=0.7, beta=0.6)
    e = env.generate_environment(p, network.recommended_window(p, 1, 150), env.RngStream(seed=31))
    net = network.build_truncated_network(e, 1, 150)
    targets = [-120, -30, 15, 60, 150]
    vals = resistance.resistance_from_origin(net, targets)
    for t, v in zip(targets, vals):
        direct = resistance.effective_resistance(net, {0}, {t})
        assert v == pytest.approx(direct, rel=1e-9)


def test_cg_path_agrees_with_direct(monkeypatch):
    p = env.ModelParams(rho=0.7)
    e = env.generate_environment(p, network.recommended_window(p, 1, 300), env.RngStream(seed=33))
    net = network.build_truncated_network(e, 1, 300)
    direct = resistance.effective_resistance(net, {0}, {200})
    monkeypatch.setattr(resistance, "_DIRECT_LIMIT", 10)
    monkeypatch.setattr(resistance, "_DENSE_LIMIT", 5)
    via_cg = resistance.effective_resistance(net, {0}, {200})
    assert via_cg == pytest.approx(direct, rel=1e-6)


def test_profile_shape_and_monotonicity():
    p = env.ModelParams(rho=0.7)
    e = env.generate_environment(p, network.recommended_window(p, 1, 400), env.RngStream(seed=37))
    net = network.build_truncated_network(e, 1, 400)
    prof = resistance.resistance_profile(net, 0.1)
    mid = len(prof.grid) // 2
    assert prof.values[mid] == 0.0
    assert prof.monotone
    assert np.all(np.diff(prof.values) >= -1e-9)


@pytest.mark.slow
def test_profile_distortion_small():
    # additivity defect of R from the origin, rescaled: small at n=2000
    p = env.ModelParams(rho=0.7)
    n = 2000
    need = network.recommended_window(p, 1, n)
    worst = []
    for r in range(12):
        e = env.generate_environment(p, need, env.RngStream(seed=4000 + r))
        net = network.build_truncated_network(e, 1, n)
        rng = env.RngStream(seed=4100 + r).generator()
        pairs = []
        for left in rng.integers(-n, n // 2, size=3):
            for off in rng.integers(1, n // 2, size=3):
                if abs(left + off) <= n:
                    pairs.append((int(left), int(left + off)))
        worst.append(resistance.profile_distortion(net, pairs))
    assert float(np.median(worst)) < 0.05


# --- bridge corrections -----------------------------------------------


def test_bridge_correction_at_most_one_without_energy():
    p = env.ModelParams(rho=0.7)
    for r in range(50):
        e = env.generate_environment(p, 60, env.RngStream(seed=100 + r))
        chi = resistance.bridge_correction(e, 0, bias_scale=network.UNSCALED)
        assert 0.0 < chi <= 1.0


def test_bridge_correction_factorises_without_energy():
    # with no energy term the double sum is a product of one-sided sums
    p = env.ModelParams(rho=0.7)
    for r in range(30):
        e = env.generate_environment(p, 200, env.RngStream(seed=200 + r))
        chi = resistance.bridge_correction(e, 3, bias_scale=network.UNSCALED, rtol=1e-30)
        row = e.row(3)
        a = np.exp(-(e.omega[row] - e.omega[: row + 1])).sum()
        b = np.exp(-(e.omega[row + 1 :] - e.omega[row + 1])).sum()
        assert chi == pytest.approx(1.0 / (a * b), rel=1e-12)


def test_tail_constant_matches_factorised_oracle():
    # E[chi^rho] = E[A^-rho]^2 by independence of the two sides (beta = 0)
    rho = 0.7
    p = env.ModelParams(rho=rho)
    est = resistance.estimate_tail_constant(p, 400_000, env.RngStream(seed=301))
    rng = env.RngStream(seed=302).generator()
    m = 64
    vals = []
    for _ in range(4):
        g = rng.exponential(1.0 / rho, size=(250_000, m))
        a = 1.0 + np.exp(-np.cumsum(g, axis=1)).sum(axis=1)
        vals.append(a**-rho)
    oracle = float(np.mean(np.concatenate(vals))) ** 2
    assert abs(est["estimate"] - oracle) <= 3 * est["stderr"] + 0.001


def test_tail_constant_bounded_and_monotone_in_beta():
    p0 = env.ModelParams(rho=0.7, beta=0.0)
    p1 = env.ModelParams(rho=0.7, beta=1.0)
    c0 = resistance.estimate_tail_constant(p0, 20_000, env.RngStream(seed=303))
    c1 = resistance.estimate_tail_constant(p1, 20_000, env.RngStream(seed=303))
    assert c1["estimate"] <= math.exp(1.0 * 0.7)
    # pathwise: the energy factor shrinks every denominator term, so the
    # correction grows with beta (coupled streams)
    assert c1["estimate"] >= c0["estimate"]


def test_bridge_correction_windowed_variants_bound():
    p = env.ModelParams(rho=0.7)
    n = 1000
    for r in range(40):
        e = env.generate_environment(p, 80, env.RngStream(seed=400 + r))
        cu = resistance.bridge_correction_upper(e, 0, n)
        cl = resistance.bridge_correction_lower(e, 0, n)
        chi = resistance.bridge_correction(e, 0, bias_scale=n)
        reg = n ** (-1.0 / (8 * 0.7))
        assert 0.0 < cu <= 1.0 + reg
        assert 0.0 < cl <= 1.0
        # both windowed variants over-estimate the full correction
        assert cu >= chi - 1e-12
        assert cl >= chi - 1e-12


def test_bridge_correction_lower_monotone_in_window():
    p = env.ModelParams(rho=0.7, beta=0.4)
    e = env.generate_environment(p, 400, env.RngStream(seed=401))
    prev = math.inf
    for b_n in (1, 2, 4, 8, 16, 64):
        val = resistance.bridge_correction_lower(e, 0, 10**6, b_n=b_n)
        assert val <= prev + 1e-15
        prev = val


def test_bridge_corrections_converge_to_full():
    # frozen from the generating-process oracle: the polynomial-window variant
    # is already exact to ~1e-5 at n = 1e5, while the regularised variant
    # approaches slowly from above as the regulariser n^{-1/(8 rho)} decays
    p = env.ModelParams(rho=0.7)
    gaps_u = {10**5: [], 10**6: [], 10**7: []}
    gaps_l = []
    for r in range(400):
        e = env.generate_environment(p, 80, env.RngStream(seed=9000 + r))
        chi = {n: resistance.bridge_correction(e, 0, bias_scale=n) for n in gaps_u}
        for n in gaps_u:
            gaps_u[n].append(abs(resistance.bridge_correction_upper(e, 0, n) - chi[n]))
        gaps_l.append(abs(resistance.bridge_correction_lower(e, 0, 10**5) - chi[10**5]))
    assert float(np.mean(gaps_l)) < 0.01
    means = [float(np.mean(gaps_u[n])) for n in (10**5, 10**6, 10**7)]
    assert means[0] < 0.08
    assert means[0] > means[1] > means[2]


# --- bundle and the sandwich -------------------------------------------


def bundle_env(p, K, n, seed):
    need = network.recommended_window(p, K, n) + int(n**0.25) + 4
    return env.generate_environment(p, need, env.RngStream(seed=seed))


def test_big_edge_frequency():
    # P(edge is big) = n^{-3/4} exactly; binomial count over the window
    p = env.ModelParams(rho=0.7)
    n, K = 2000, 1
    counts = []
    for r in range(60):
        e = bundle_env(p, K, n, 800 + r)
        b = resistance.correction_bundle(e, K, n)
        counts.append(len(b.big_edges))
    total = sum(counts)
    edges = 60 * 2 * K * n
    target = n**-0.75
    sigma = math.sqrt(edges * target * (1 - target))
    assert abs(total - edges * target) < 4 * sigma


def test_bundle_events_and_long_edge_mass():
    # frozen from the order-statistics oracle: at n=1e4, K=1 the separation
    # and flanking conditions hold with moderate probability (the admissible
    # events approach certainty only at astronomically large n), and the
    # long-edge mass concentrates near the geometric-series mean
    # 2Kn q^(b+1)/(1-q), q = rho/(1+rho)
    p = env.ModelParams(rho=0.7)
    n, K = 10_000, 1
    up = lo = 0
    masses = []
    reps = 60
    for r in range(reps):
        e = bundle_env(p, K, n, 3000 + r)
        b = resistance.correction_bundle(e, K, n)
        up += b.event_upper
        lo += b.event_lower
        masses.append(b.long_edge_mass)
    assert 0.02 <= up / reps <= 0.45
    assert 0.40 <= lo / reps <= 0.90
    q = 0.7 / 1.7
    b_n = int(n**0.25)
    predicted = 2 * K * n * q ** (b_n + 1) / (1 - q)
    assert 0.2 * predicted <= float(np.median(masses)) <= 5.0 * predicted


def test_lower_bound_sentinel_and_additivity():
    p = env.ModelParams(rho=0.7)
    n, K = 500, 1
    e = bundle_env(p, K, n, 881)
    b = resistance.correction_bundle(e, K, n)
    assert len(b.big_edges) > 0
    k0 = int(b.big_edges[0])
    # a stretch with no big edge gives the infinite sentinel
    assert resistance.resistance_lower_bound(b, k0 + 1, k0 + 2) == math.inf
    assert resistance.sandwich_lower(b, k0 + 1, k0 + 2) == pytest.approx(1.0 / b.long_edge_mass)
    # upper bound splits additively away from correction windows
    i, mid, j = -n, 0, n
    if not np.any((b.big_edges >= mid - b.a_n) & (b.big_edges < mid + b.a_n)):
        left = resistance.resistance_upper_bound(b, i, mid)
        right = resistance.resistance_upper_bound(b, mid, j)
        whole = resistance.resistance_upper_bound(b, i, j)
        overlap = left + right - whole
        # the doubled a_n-wide flank around the split is the only recount
        assert overlap >= 0


@pytest.mark.slow
def test_sandwich_no_violations():
    # exact resistance sits between the banded bounds on admissible
    # environments (20 environments per inverse temperature, n=500, K=2)
    for beta in (0.0, 1.0):
        p = env.ModelParams(rho=0.7, beta=beta)
        n, K = 500, 2
        for r in range(20):
            e = bundle_env(p, K, n, 6000 + r)
            b = resistance.correction_bundle(e, K, n)
            if not (b.event_upper and b.event_lower):
                continue
            net = network.build_truncated_network(e, K, n, cutoff=2 * K * n)
            rng = env.RngStream(seed=6100 + r).generator()
            for _ in range(4):
                i, j = sorted(int(x) for x in rng.integers(-K * n, K * n + 1, size=2))
                if i == j:
                    continue
                exact = resistance.effective_resistance(net, {i}, {j})
                assert exact <= resistance.resistance_upper_bound(b, i, j) * (1 + 1e-9)
                assert resistance.sandwich_lower(b, i, j) <= exact * (1 + 1e-9)


# --- commute time -------------------------------------------------------


def hitting_samples(chain, start, target, runs, seed):
    times = []
    for r in range(runs):
        traj = walk.simulate(
            chain, start=start, stream=env.RngStream(seed=seed, stream_id=r), hit=[target], max_steps=1 << 24
        )
        times.append(traj.final_time)
    return stats.Sample(values=np.array(times), provenance={"chain": chain.token, "start": start})


def test_commute_time_identity_small_path():
    chain = walk.make_chain(np.arange(5.0), path_matrix([1.0] * 4), 2 * np.ones(5) - np.eye(5)[0] - np.eye(5)[4], token="p5")
    # constant-speed masses are the row sums: ends have mass 1, middle 2
    masses = np.asarray(chain.conductances.sum(axis=1)).ravel()
    chain = walk.make_chain(np.arange(5.0), path_matrix([1.0] * 4), masses, token="p5")
    ab = hitting_samples(chain, 0, 4, 4000, seed=71)
    ba = hitting_samples(chain, 4, 0, 4000, seed=72)
    rep = resistance.commute_time_check(chain, 0, 4, ab, ba)
    assert rep["identity_residual"] < 1e-9
    assert rep["ok"]
    # reflection symmetry: the two directions have equal means
    za = (np.mean(ab.values) - np.mean(ba.values)) / math.sqrt(
        np.var(ab.values, ddof=1) / len(ab.values) + np.var(ba.values, ddof=1) / len(ba.values)
    )
    assert abs(za) < 4.0


def test_commute_time_provenance_guard():
    chain = walk.make_chain(np.arange(3.0), path_matrix([1.0, 1.0]), np.array([1.0, 2.0, 1.0]), token="a")
    other = stats.Sample(values=np.ones(50), provenance={"chain": "b"})
    with pytest.raises(ProvenanceError):
        resistance.commute_time_check(chain, 0, 2, other, other)
