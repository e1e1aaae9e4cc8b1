import numpy as np
import pytest

from isinglab.es import (ConditionedFKSampler, ConditioningError, conditioned_fk_exact, event_A, extend_spins,
                         fk_from_ising, fk_to_ising_pushforward, ising_from_fk, ising_to_fk_pushforward,
                         sample_fk_conditioned, sample_ising_bc, sample_spins, wiring_from_bc)
from isinglab.fk import EMPTY_WIRING, P_SD, FKGraph, Wiring, count_clusters, fk_exact, fk_graph
from isinglab.ising import BETA_C, ExactDistribution, encode, gibbs_exact, tv_distance
from isinglab.lattice import PLUS, MINUS, build_box

BCS = ["free", "all:+", "bottom:-,else:+", "left:free,bottom:-,else:+"]


def empirical(codes, nbits, kind="spin"):
    return ExactDistribution(np.bincount(codes, minlength=1 << nbits) / len(codes), nbits, kind)


def test_wiring_examples():
    lat, bc = build_box(3, 3, "all:+")
    w = wiring_from_bc(bc)
    assert len(w.classes) == 1 and w.classes[0] == set(range(lat.n_sites, lat.n_bar))
    assert wiring_from_bc(build_box(3, 3, "free")[1]).classes == ()
    assert len(wiring_from_bc(build_box(3, 3, "bottom:-,else:+")[1]).classes) == 2


def test_all_open_gives_constant_spins():
    lat, bc = build_box(3, 3, "free")
    g = fk_graph(lat, bc)
    om = np.ones(g.n_edges, np.int8)
    signs = [ising_from_fk(om, g, EMPTY_WIRING, u=s)[: lat.n_sites] for s in range(400)]
    assert all(abs(s.sum()) == lat.n_sites for s in signs)
    frac = np.mean([s[0] == 1 for s in signs])
    assert abs(frac - 0.5) < 0.1


@pytest.mark.parametrize("dims", [(1, 2), (2, 2), (2, 3)])
@pytest.mark.parametrize("spec", BCS)
def test_es_pushforwards_exact(dims, spec):
    lat, bc = build_box(*dims, spec)
    mu = gibbs_exact(lat, bc, BETA_C)
    assert tv_distance(fk_to_ising_pushforward(lat, bc, P_SD), mu) < 1e-12
    assert tv_distance(ising_to_fk_pushforward(lat, bc, P_SD), conditioned_fk_exact(lat, bc, P_SD)) < 1e-12


def test_es_pushforward_3x3_free():
    lat, bc = build_box(3, 3, "free")
    assert tv_distance(fk_to_ising_pushforward(lat, bc, P_SD), gibbs_exact(lat, bc, BETA_C)) < 1e-12


def test_free_pushforward_matches_fk_exact():
    lat, bc = build_box(2, 2, "free")
    g = fk_graph(lat, bc)
    assert tv_distance(ising_to_fk_pushforward(lat, bc, P_SD), fk_exact(g, EMPTY_WIRING, P_SD)) < 1e-12


def test_conditioned_spin_law_one_wired_pair():
    # two sites wired together: output law is the Gibbs measure conditioned on equal spins
    g = FKGraph(2, np.array([[0, 1]]))
    w = Wiring(({0, 1},))
    d = fk_exact(g, w, P_SD)
    out = np.zeros(4)
    for code in range(2):
        for sgn in (1, -1):
            out[encode([sgn, sgn])] += d.probs[code] / 2
    assert out[encode([1, -1])] == 0 and out[encode([1, 1])] == pytest.approx(0.5)
    lat, bc = build_box(1, 2, "free")
    mu = gibbs_exact(lat, bc, BETA_C).probs
    agree = np.array([mu[0], 0, 0, mu[3]])
    assert np.allclose(out, agree / agree.sum(), atol=1e-14)


def test_fk_from_ising_examples():
    lat, bc = build_box(4, 4, "free")
    g = fk_graph(lat, bc)
    c = lat.coords[: lat.n_sites]
    checker = np.where((c[:, 0] + c[:, 1]) % 2 == 0, 1, -1)
    assert fk_from_ising(extend_spins(checker, bc), g, P_SD, u=0).sum() == 0
    ones = extend_spins(np.ones(lat.n_sites, int), bc)
    n = 2000
    freq = np.mean([fk_from_ising(ones, g, P_SD, u=s).mean() for s in range(n)])
    assert abs(freq - P_SD) < 4 * np.sqrt(P_SD * (1 - P_SD) / (n * g.n_edges))


def test_event_A_examples():
    lat, bc = build_box(2, 2, "bottom:-,else:+")
    g, w = fk_graph(lat, bc), wiring_from_bc(bc)
    assert event_A(np.zeros(g.n_edges, np.int8), g, w)
    assert not event_A(np.ones(g.n_edges, np.int8), g, w)
    lat, bc = build_box(2, 2, "all:+")
    g, w = fk_graph(lat, bc), wiring_from_bc(bc)
    assert event_A(np.ones(g.n_edges, np.int8), g, w)


def test_event_A_decreasing_exhaustive():
    lat, bc = build_box(2, 2, "bottom:-,else:+")
    g, w = fk_graph(lat, bc), wiring_from_bc(bc)
    m = g.n_edges
    A = np.array([event_A(((c >> np.arange(m)) & 1).astype(np.int8), g, w) for c in range(1 << m)])
    for c in np.flatnonzero(~A):
        for e in range(m):
            assert not A[c | (1 << e)]


def test_conditioned_sampler_all_plus_is_unconditioned():
    lat, bc = build_box(2, 2, "all:+")
    g, w = fk_graph(lat, bc), wiring_from_bc(bc)
    assert tv_distance(conditioned_fk_exact(lat, bc, P_SD), fk_exact(g, w, P_SD)) < 1e-14
    om = sample_fk_conditioned(lat, bc, 0)
    assert om.shape == (g.n_edges,)


@pytest.mark.parametrize("method", ["exact", "rejection"])
def test_conditioned_sampler_marginals_2x2(method):
    lat, bc = build_box(2, 2, "bottom:-,else:+")
    exact = conditioned_fk_exact(lat, bc, P_SD)
    n = 100_000 if method == "exact" else 20_000
    s = ConditionedFKSampler(lat, bc, P_SD, 7, method=method, spacing=2)
    oms = s.sample(n)
    g, w = s.graph, s.wiring
    assert all(event_A(om, g, w) for om in oms[:2000])
    want = np.array([exact.marginal([e]).probs[1] for e in range(g.n_edges)])
    # per-edge TV between Bernoulli marginals
    assert np.max(np.abs(oms.mean(axis=0) - want)) < 0.01


def test_conditioned_sampler_full_law_within_noise_floor():
    lat, bc = build_box(2, 2, "bottom:-,else:+")
    exact = conditioned_fk_exact(lat, bc, P_SD)
    n = 100_000
    oms = ConditionedFKSampler(lat, bc, P_SD, 3).sample(n)
    codes = oms.astype(np.int64) @ (1 << np.arange(oms.shape[1]))
    tv = tv_distance(empirical(codes, exact.nbits, "bond"), exact)
    ref = np.random.default_rng(3).choice(len(exact.probs), size=n, p=exact.probs)
    floor = tv_distance(empirical(ref, exact.nbits, "bond"), exact)
    assert tv < 1.25 * floor + 0.005


def test_acceptance_failure_raises():
    lat, bc = build_box(16, 16, "all:+")
    alt = np.where(np.arange(lat.n_boundary) % 2 == 0, PLUS, MINUS)
    bad = bc.with_values(alt, "alternating")
    s = ConditionedFKSampler(lat, bad, P_SD, 0, method="rejection", burnin=5, max_trials=200)
    with pytest.raises(ConditioningError):
        s.sample(1)


@pytest.mark.parametrize("dims,spec", [((1, 2), "all:+"), ((2, 2), "bottom:-,else:+")])
def test_sample_ising_bc_law(dims, spec):
    lat, bc = build_box(*dims, spec)
    n = 100_000
    sig = sample_ising_bc(lat, bc, 5, n=n)
    codes = (sig > 0).astype(np.int64) @ (1 << np.arange(lat.n_sites))
    assert tv_distance(empirical(codes, lat.n_sites), gibbs_exact(lat, bc, BETA_C)) < 0.01


def test_sample_ising_free_is_plain_es():
    lat, bc = build_box(2, 2, "free")
    a = sample_ising_bc(lat, bc, 11, n=3)
    s = ConditionedFKSampler(lat, bc, P_SD, 11)
    oms = s.sample(3)
    from isinglab.rng import as_source
    for i in range(3):
        u = as_source(11).uniforms("cluster-spin", i, size=lat.n_bar)
        assert np.array_equal(a[i], ising_from_fk(oms[i], s.graph, s.wiring, u)[: lat.n_sites])


def test_cluster_spins_shared_by_representative():
    lat, bc = build_box(3, 3, "free")
    g = fk_graph(lat, bc)
    om = np.zeros(g.n_edges, np.int8)
    om[:3] = 1
    u = np.random.default_rng(0).random(lat.n_bar)
    s1 = ising_from_fk(om, g, EMPTY_WIRING, u)
    _, cs = count_clusters(om, g)
    assert np.array_equal(s1, np.where(u[cs.labels] < 0.5, 1, -1))


def test_sample_spins_exact_and_cftp_routes_agree_in_law():
    lat, bc = build_box(3, 3, "bottom:-,else:+")
    mu = gibbs_exact(lat, bc, BETA_C)
    m_exact = mu.expectation(mu.configs().sum(axis=1))
    lat5, bc5 = build_box(5, 5, "bottom:-,else:+")
    vals = [sample_spins(lat5, bc5, BETA_C, 1, i).sum() for i in range(300)]
    assert -25 <= np.mean(vals) <= 25
    vals3 = [sample_spins(lat, bc, BETA_C, 2, i).sum() for i in range(4000)]
    assert abs(np.mean(vals3) - m_exact) < 4 * np.std(vals3) / np.sqrt(4000)
