import math

import numpy as np
import pytest

from isinglab.blocks import (
    Block,
    block_comparison,
    block_coupling_probability,
    block_gap,
    block_kernel,
    block_non_confinement,
    block_update,
    exact_block_coupling,
    exponent_from_crossing,
    make_blocks,
)
from isinglab.glauber import RateFamily, exact_generator_gap, flip_rate
from isinglab.ising import BETA_C, encode, gibbs_exact
from isinglab.lattice import build_box

from hypothesis import given, settings, strategies as st


def _law(samples, nbits):
    codes = np.array([encode(s) for s in samples])
    return np.bincount(codes, minlength=1 << nbits) / len(codes)


# ----------------------------------------------------------------------
# block geometry
# ----------------------------------------------------------------------
def test_blocks_9x9():
    lat, _ = build_box(9, 9, "free")
    pair = make_blocks(lat, 1)
    assert pair.upper == Block(1, 9, 3, 9)
    assert pair.lower == Block(1, 9, 1, 6)
    assert list(pair.overlap.rows) == [3, 4, 5, 6]


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 30), st.data())
def test_blocks_cover_the_box(r, extra, data):
    lat, _ = build_box(r, r + extra, "free")
    L = max(1, math.isqrt((r + extra) // r))
    ell = data.draw(st.integers(1, L))
    pair = make_blocks(lat, ell)
    covered = np.zeros(lat.n_sites, bool)
    covered[pair.upper.sites(lat)] = True
    covered[pair.lower.sites(lat)] = True
    assert covered.all()
    assert pair.overlap is not None


def test_overlaps_across_shifts_r4_r16():
    lat, _ = build_box(4, 16, "free")
    o1, o2 = make_blocks(lat, 1).overlap, make_blocks(lat, 2).overlap
    # ideal overlaps are [16/3, 8] and [8, 32/3]: disjoint interiors, touching at row 8;
    # outward rounding keeps that single shared row and nothing more
    assert (o1.y0, o1.y1) == (5, 8)
    assert (o2.y0, o2.y1) == (8, 11)
    assert set(o1.rows) & set(o2.rows) == {8}
    with pytest.raises(ValueError):
        make_blocks(lat, 3)


# ----------------------------------------------------------------------
# exact block resampling
# ----------------------------------------------------------------------
def test_full_block_update_is_a_perfect_sample():
    lat, bc = build_box(2, 3, "bottom:-,else:+")
    mu = gibbs_exact(lat, bc)
    blk = Block(1, 2, 1, 3)
    sigma = np.ones(lat.n_sites, np.int8)
    out = [block_update(sigma, lat, bc, blk, rng=7, run_id=i) for i in range(20000)]
    emp = _law(out, lat.n_sites)
    assert 0.5 * np.abs(emp - mu.probs).sum() < 0.02


def test_one_site_block_is_heat_bath():
    lat, bc = build_box(3, 3, "bottom:-,else:+")
    sigma = np.array([1, -1, 1, -1, 1, 1, 1, -1, -1], np.int8)
    x = lat.index(2, 2)
    blk = Block(2, 2, 2, 2)
    # heat-bath: probability of a plus spin is the flip rate out of the minus state
    sigma_minus = sigma.copy()
    sigma_minus[x] = -1
    p_plus = flip_rate(RateFamily("heat-bath"), x, sigma_minus, bc)
    n = 20000
    hits = sum(int(block_update(sigma, lat, bc, blk, rng=3, run_id=i)[x] == 1) for i in range(n))
    assert abs(hits / n - p_plus) < 4 * math.sqrt(p_plus * (1 - p_plus) / n)
    # the kernel gives the same law exactly
    P = block_kernel(lat, bc, blk)
    assert P[encode(sigma), encode(np.where(np.arange(9) == x, 1, sigma))] == pytest.approx(p_plus, abs=1e-12)


def test_block_update_leaves_outside_alone():
    lat, bc = build_box(4, 6, "free")
    sigma = np.random.default_rng(0).choice(np.array([-1, 1], np.int8), lat.n_sites)
    blk = Block(1, 4, 2, 4)
    out = block_update(sigma, lat, bc, blk, rng=1)
    mask = np.ones(lat.n_sites, bool)
    mask[blk.sites(lat)] = False
    assert np.array_equal(out[mask], sigma[mask])


def test_block_kernel_idempotent_and_stationary():
    lat, bc = build_box(2, 3, "free")
    mu = gibbs_exact(lat, bc).probs
    for blk in make_blocks(lat).upper, make_blocks(lat).lower, Block(1, 1, 2, 2):
        P = block_kernel(lat, bc, blk)
        assert np.allclose(P @ P, P, atol=1e-12)
        assert np.abs(mu @ P - mu).max() < 1e-10
        assert np.allclose(P.sum(axis=1), 1.0)


def test_block_update_beyond_transfer_width_uses_exact_sampler():
    # a wrapped 3x3 block is neither a strip nor transfer-friendly in the vertical direction
    lat, bc = build_box(3, 3, "periodic")
    mu = gibbs_exact(lat, bc).probs
    blk = Block(1, 3, 1, 3)
    out = [block_update(np.ones(9, np.int8), lat, bc, blk, rng=5, run_id=i) for i in range(20000)]
    assert 0.5 * np.abs(_law(out, 9) - mu).sum() < 0.03


# ----------------------------------------------------------------------
# coalescence of the block pass
# ----------------------------------------------------------------------
def test_coupling_trivial_when_starts_agree():
    # r' < 3 leaves no row above the lower block: the upper update forgets the start
    lat, bc = build_box(2, 2, "free")
    assert exact_block_coupling(lat, bc) == 1.0
    assert block_coupling_probability(lat, bc, samples=50, rng=1).probability == 1.0


def test_coupling_3x6_matches_exact():
    lat, bc = build_box(3, 6, "bottom:-,else:+")
    res = block_coupling_probability(lat, bc, samples=2000, rng=1)
    assert res.exact is not None
    assert abs(res.probability - res.exact) <= 0.03


def test_monotone_coupling_agrees_in_direction():
    lat, bc = build_box(2, 4, "free")
    mono = block_coupling_probability(lat, bc, samples=300, rng=4, coupling="monotone")
    # any coupling coalesces at most as often as the maximal one
    assert mono.probability <= exact_block_coupling(lat, bc) + 3 * mono.stderr + 1e-12
    with pytest.raises(ValueError):
        block_coupling_probability(lat, bc, samples=1, coupling="other")


def test_coupling_nondecreasing_in_aspect_ratio():
    vals = []
    for rp in (12, 24, 48):
        lat, bc = build_box(3, rp, "all:+")
        vals.append(exact_block_coupling(lat, bc))
    assert vals[0] <= vals[1] <= vals[2]


def test_coupling_at_least_one_minus_non_confinement():
    lat, bc = build_box(3, 12, "all:+")
    q, qse = block_non_confinement(lat, bc, samples=500, rng=2)
    res = block_coupling_probability(lat, bc, samples=1000, rng=3)
    assert res.probability >= 1 - q - 3 * math.hypot(qse, res.stderr)


# ----------------------------------------------------------------------
# exponent and gap comparison
# ----------------------------------------------------------------------
def test_exponent_from_crossing():
    assert exponent_from_crossing(0.5) == pytest.approx(2 * math.log(4) / math.log(1.5))
    assert exponent_from_crossing(0.5) == pytest.approx(6.8380, abs=5e-4)
    assert exponent_from_crossing(0.75) == pytest.approx(10.2570, abs=5e-4)
    ps = np.linspace(0.01, 0.99, 50)
    assert np.all(np.diff([exponent_from_crossing(p) for p in ps]) > 0)
    with pytest.raises(ValueError):
        exponent_from_crossing(1.0)


@pytest.mark.parametrize("kind", ["heat-bath", "metropolis"])
def test_single_site_gap_comparison_2x3(kind):
    lat, bc = build_box(2, 3, "free")
    pair = make_blocks(lat)
    out = block_comparison(lat, bc, [pair.upper, pair.lower], RateFamily(kind))
    assert out["holds"]
    assert out["max_overlap"] == 2
    assert out["single_gap"] == pytest.approx(exact_generator_gap(lat, bc, RateFamily(kind)))


def test_block_gap_of_whole_box_is_one():
    lat, bc = build_box(2, 2, "all:+")
    assert block_gap(lat, bc, [Block(1, 2, 1, 2)]) == pytest.approx(1.0, abs=1e-10)


def test_block_gap_beta_zero_single_sites():
    # independent sites: each single-site block relaxes at rate one
    lat, bc = build_box(2, 2, "free")
    blocks = [Block(x, x, y, y) for x in (1, 2) for y in (1, 2)]
    assert block_gap(lat, bc, blocks, beta=0.0) == pytest.approx(1.0, abs=1e-10)
    assert block_gap(lat, bc, blocks, beta=BETA_C) < 1.0
