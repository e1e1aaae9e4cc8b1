"""Block dynamics with two vertically overlapping blocks.

The lower block ``Lambda_2`` holds rows ``1 .. b`` and the upper block
``Lambda_1`` rows ``a .. r'``; each block is resampled from its exact
conditional Gibbs law given the spins outside it. The helpers here build
the blocks, resample them exactly (row transfer matrix, enumeration or
CFTP), estimate the probability that two extreme starts coalesce after
one pass (upper block then lower block), and provide exact generators of
the block dynamics on tiny boxes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .cftp import cftp_from, cftp_run
from .es import extend_spins, fk_from_ising, sample_spins
from .exposure import expose_omega1
from .fk import P_SD, fk_graph
from .glauber import RateFamily, exact_generator_gap
from .ising import BETA_C, MAX_TRANSFER_WIDTH, EnumerationError, StripTransfer, all_interactions
from .lattice import BoundaryCondition, Lattice, wired_bc
from .rng import as_source
from .stats import binomial_stderr

_EPS = 1e-9


@dataclass(frozen=True)
class Block:
    """Sub-rectangle ``[x0, x1] x [y0, y1]`` of the box (interior coordinates)."""

    x0: int
    x1: int
    y0: int
    y1: int

    def sites(self, lat: Lattice) -> np.ndarray:
        return lat.sub_rectangle_sites(self.x0, self.x1, self.y0, self.y1)

    @property
    def rows(self) -> range:
        return range(self.y0, self.y1 + 1)


@dataclass(frozen=True)
class BlockPair:
    upper: Block  # Lambda_1
    lower: Block  # Lambda_2
    ell: int

    @property
    def overlap(self) -> Block | None:
        lo, hi = self.upper.y0, self.lower.y1
        if lo > hi:
            return None
        return Block(self.upper.x0, self.upper.x1, lo, hi)


def max_shift(lat: Lattice) -> int:
    return int(math.isqrt(lat.rp // lat.r)) if lat.rp >= lat.r else 0


def make_blocks(lat: Lattice, ell: int = 1) -> BlockPair:
    """Blocks with lower edge ``r'/3 + (ell-1)/3 sqrt(r r')`` (floored) and upper edge ``r'/3 + ell/3 sqrt(r r')`` (ceiled)."""
    r, rp = lat.r, lat.rp
    if rp < r:
        raise ValueError("blocks need r' >= r")
    L = max(1, int(math.floor(math.sqrt(rp / r) + _EPS)))
    if not 1 <= ell <= L:
        raise ValueError(f"ell must lie in 1..{L}")
    s = math.sqrt(r * rp)
    a = int(math.floor(rp / 3 + (ell - 1) / 3 * s + _EPS))
    b = int(math.ceil(rp / 3 + ell / 3 * s - _EPS))
    a = min(max(a, 1), rp)
    b = min(max(b, 1), rp)
    return BlockPair(Block(1, r, a, rp), Block(1, r, 1, b), ell)


# ----------------------------------------------------------------------
# exact block resampling
# ----------------------------------------------------------------------
def block_boundary(sigma, lat: Lattice, bc: BoundaryCondition, block: Block):
    """Sub-box of ``block`` and the boundary condition induced by ``sigma`` and ``bc``."""
    w, h = block.x1 - block.x0 + 1, block.y1 - block.y0 + 1
    sub = Lattice(w, h, hwrap=lat.hwrap and w == lat.r, vwrap=lat.vwrap and h == lat.rp)
    vals = np.empty(sub.n_boundary, np.int8)
    full = extend_spins(sigma, bc)
    for i, (bx, by) in enumerate(sub.boundary_coords):
        vals[i] = full[lat.index(block.x0 - 1 + bx, block.y0 - 1 + by)]
    return sub, BoundaryCondition(sub, vals, label="induced")


def _exact_block_sample(sub, sbc, beta, src, purpose, run_id):
    if sub.r <= MAX_TRANSFER_WIDTH and not sub.vwrap:
        return StripTransfer(sub, sbc, beta).sample(src.uniforms(purpose, run_id, size=sub.rp))
    if sub.n_sites <= 16:
        return sample_spins(sub, sbc, beta, src.spawn(run_id))
    return cftp_run(sub, sbc, beta, src, run_id).result


def block_update(sigma, lat: Lattice, bc: BoundaryCondition, block: Block, rng=0, beta: float = BETA_C,
                 run_id: int = 0) -> np.ndarray:
    """Resample the spins of ``block`` from their conditional Gibbs law; others unchanged."""
    sub, sbc = block_boundary(sigma, lat, bc, block)
    new = _exact_block_sample(sub, sbc, beta, as_source(rng), "block", run_id)
    out = np.array(sigma, dtype=np.int8)
    out[block.sites(lat)] = new
    return out


# ----------------------------------------------------------------------
# coalescence of the block pass
# ----------------------------------------------------------------------
@dataclass
class BlockCouplingResult:
    probability: float
    stderr: float
    samples: int
    exact: float | None
    pair: BlockPair

    def __iter__(self):
        return iter((self.probability, self.stderr))


def _sample_row_conditional(st: StripTransfer, u: np.ndarray, y_fixed: int, code: int) -> np.ndarray:
    """Sample a strip with row ``y_fixed`` (1-based) pinned to ``code``."""
    rp, r = st.lat.rp, st.lat.r
    out = np.empty((rp, r), np.int8)
    out[y_fixed - 1] = st.rows[code]
    # rows below: backward from the pinned row using forward messages
    c = code
    for y in range(y_fixed - 2, -1, -1):
        w = st.F[y] * st.T[:, c]
        cdf = np.cumsum(w)
        c = min(int(np.searchsorted(cdf, u[y] * cdf[-1], side="right")), len(cdf) - 1)
        out[y] = st.rows[c]
    # rows above: forward using backward messages
    c = code
    for y in range(y_fixed, rp):
        w = st.T[c, :] * np.exp(st.row_h[y] - st.row_h[y].max()) * st.B[y]
        cdf = np.cumsum(w)
        c = min(int(np.searchsorted(cdf, u[y] * cdf[-1], side="right")), len(cdf) - 1)
        out[y] = st.rows[c]
    return out.reshape(-1)


def _maximal_pair(p: np.ndarray, q: np.ndarray, u: np.ndarray):
    """Maximal coupling of two laws on codes, driven by three uniforms."""
    m = np.minimum(p, q)
    agree = m.sum()
    if u[0] < agree:
        cdf = np.cumsum(m)
        c = min(int(np.searchsorted(cdf, u[1] * cdf[-1], side="right")), len(cdf) - 1)
        return c, c
    rp, rq = p - m, q - m
    cp, cq = np.cumsum(rp), np.cumsum(rq)
    a = min(int(np.searchsorted(cp, u[1] * cp[-1], side="right")), len(cp) - 1)
    b = min(int(np.searchsorted(cq, u[2] * cq[-1], side="right")), len(cq) - 1)
    return a, b


def exact_block_coupling(lat: Lattice, bc: BoundaryCondition, ell: int = 1, beta: float = BETA_C) -> float:
    """Coalescence probability of the maximal coupling: ``1 - TV`` of the row above the lower block."""
    pair = make_blocks(lat, ell)
    a, b = pair.upper.y0, pair.lower.y1
    if b >= lat.rp or a <= 1:
        return 1.0
    N = lat.n_sites
    sx, bx = block_boundary(np.ones(N, np.int8), lat, bc, pair.upper)
    _, by = block_boundary(-np.ones(N, np.int8), lat, bc, pair.upper)
    yb = b + 1 - a + 1
    px = StripTransfer(sx, bx, beta).row_marginal(yb)
    py = StripTransfer(sx, by, beta).row_marginal(yb)
    return 1.0 - 0.5 * float(np.abs(px - py).sum())


def block_coupling_probability(lat: Lattice, bc: BoundaryCondition, samples: int = 1000, rng=0, ell: int = 1,
                               beta: float = BETA_C, coupling: str = "maximal") -> BlockCouplingResult:
    """Fraction of runs in which all-plus and all-minus starts coalesce after one pass.

    One pass resamples the upper block and then the lower block.
    ``coupling="maximal"`` couples the row just above the lower block
    maximally and shares all other randomness (width up to
    ``MAX_TRANSFER_WIDTH``); ``"monotone"`` resamples each block by CFTP
    from a common start time with shared randomness, which preserves the
    order of the two chains.
    """
    pair = make_blocks(lat, ell)
    src = as_source(rng)
    N = lat.n_sites
    hits = 0
    exact = None
    if coupling == "maximal":
        if lat.r > MAX_TRANSFER_WIDTH or lat.vwrap:
            raise EnumerationError("maximal coupling needs a narrow open strip")
        exact = exact_block_coupling(lat, bc, ell, beta)
        a, b = pair.upper.y0, pair.lower.y1
        sub, bx = block_boundary(np.ones(N, np.int8), lat, bc, pair.upper)
        _, by = block_boundary(-np.ones(N, np.int8), lat, bc, pair.upper)
        stx, sty = StripTransfer(sub, bx, beta), StripTransfer(sub, by, beta)
        yb = b + 1 - a + 1
        for i in range(samples):
            gen = src.generator("block-coupling", i)
            if b >= lat.rp or a <= 1:
                # the upper block update already forgets the start (or there is nothing above)
                ux = gen.random(sub.rp)
                X1 = np.ones(N, np.int8)
                Y1 = -np.ones(N, np.int8)
                X1[pair.upper.sites(lat)] = stx.sample(ux)
                Y1[pair.upper.sites(lat)] = sty.sample(ux)
            else:
                cx, cy = _maximal_pair(stx.row_marginal(yb), sty.row_marginal(yb), gen.random(3))
                u = gen.random(sub.rp)
                X1 = np.ones(N, np.int8)
                Y1 = -np.ones(N, np.int8)
                X1[pair.upper.sites(lat)] = _sample_row_conditional(stx, u, yb, cx)
                Y1[pair.upper.sites(lat)] = _sample_row_conditional(sty, u, yb, cy)
            X2 = block_update(X1, lat, bc, pair.lower, src, beta, run_id=i)
            Y2 = block_update(Y1, lat, bc, pair.lower, src, beta, run_id=i)
            hits += int(np.array_equal(X2, Y2))
    elif coupling == "monotone":
        for i in range(samples):
            X = np.ones(N, np.int8)
            Y = -np.ones(N, np.int8)
            for k, blk in enumerate((pair.upper, pair.lower)):
                subx, bcx = block_boundary(X, lat, bc, blk)
                _, bcy = block_boundary(Y, lat, bc, blk)
                rid = 2 * i + k
                T = max(-cftp_run(subx, bcx, beta, src, rid).epochs[-1][0],
                        -cftp_run(subx, bcy, beta, src, rid).epochs[-1][0])
                _, nx = cftp_from(subx, bcx, T, beta, src, rid)
                _, ny = cftp_from(subx, bcy, T, beta, src, rid)
                X = X.copy()
                Y = Y.copy()
                X[blk.sites(lat)] = nx
                Y[blk.sites(lat)] = ny
            hits += int(np.array_equal(X, Y))
    else:
        raise ValueError(f"unknown coupling {coupling!r}")
    prob = hits / samples
    return BlockCouplingResult(prob, binomial_stderr(prob, samples), samples, exact, pair)


def block_non_confinement(lat: Lattice, bc: BoundaryCondition, samples: int = 1000, rng=0, ell: int = 1,
                          p: float = P_SD) -> tuple:
    """Probability that the wired cluster of the upper block's bottom reaches the row above the lower block.

    The upper block carries the boundary induced by an all-plus start;
    returns ``(probability, stderr)``.
    """
    pair = make_blocks(lat, ell)
    a, b = pair.upper.y0, pair.lower.y1
    if b >= lat.rp or a <= 1:
        return 0.0, 0.0
    sub, sbc = block_boundary(np.ones(lat.n_sites, np.int8), lat, bc, pair.upper)
    wbc = wired_bc(sbc)
    g = fk_graph(sub, wbc)
    src = as_source(rng)
    beta = -0.5 * math.log1p(-p)
    start = sub.sites_on_side("bottom")
    thresh = b + 1 - a + 1
    esc = 0
    for i in range(samples):
        s = sample_spins(sub, wbc, beta, src, i)
        om = fk_from_ising(extend_spins(s, wbc), g, p, src.uniforms("percolate", i, size=g.n_edges))
        xi = expose_omega1(om, g, start).xi
        esc += int(sub.coords[np.flatnonzero(xi), 1].max() >= thresh)
    q = esc / samples
    return q, binomial_stderr(q, samples)


def exponent_from_crossing(p_plus: float) -> float:
    """``2 log_{3/2}(2 / (1 - p_plus))``."""
    if not 0.0 < p_plus < 1.0:
        raise ValueError("crossing probability must lie in (0, 1)")
    return 2.0 * math.log(2.0 / (1.0 - p_plus)) / math.log(1.5)


# ----------------------------------------------------------------------
# exact block generators on enumerable boxes
# ----------------------------------------------------------------------
def _gibbs(lat, bc, beta):
    h = all_interactions(lat, bc).astype(float) * beta
    w = np.exp(h - h.max())
    return w / w.sum()


def block_kernel(lat: Lattice, bc: BoundaryCondition, block: Block, beta: float = BETA_C) -> np.ndarray:
    """Transition matrix of one exact resample of ``block``."""
    mu = _gibbs(lat, bc, beta)
    K = len(mu)
    bmask = 0
    for s in block.sites(lat):
        bmask |= 1 << int(s)
    codes = np.arange(K)
    outside = codes & ~bmask
    P = np.zeros((K, K))
    for o in np.unique(outside):
        S = codes[outside == o]
        w = mu[S] / mu[S].sum()
        P[np.ix_(S, S)] = w[None, :]
    return P


def block_generator(lat: Lattice, bc: BoundaryCondition, blocks, beta: float = BETA_C) -> np.ndarray:
    """Generator ``sum_i (P_i - I)`` of the rate-one block dynamics."""
    K = 1 << lat.n_sites
    L = np.zeros((K, K))
    for blk in blocks:
        L += block_kernel(lat, bc, blk, beta) - np.eye(K)
    return L


def block_gap(lat: Lattice, bc: BoundaryCondition, blocks, beta: float = BETA_C) -> float:
    mu = _gibbs(lat, bc, beta)
    s = np.sqrt(mu)
    L = block_generator(lat, bc, blocks, beta)
    A = -(s[:, None] * L / s[None, :])
    ev = scipy.linalg.eigh(0.5 * (A + A.T), eigvals_only=True)
    return float(ev[1])


def block_comparison(lat: Lattice, bc: BoundaryCondition, blocks, fam: RateFamily) -> dict:
    """Single-site gap versus ``(max overlap)^-1 * block gap * min block single-site gap``.

    The minimum runs over every block and every configuration outside it.
    """
    single = exact_generator_gap(lat, bc, fam)
    bg = block_gap(lat, bc, blocks, fam.beta)
    counts = np.zeros(lat.n_sites, int)
    for blk in blocks:
        counts[blk.sites(lat)] += 1
    N = lat.n_sites
    worst = np.inf
    for blk in blocks:
        inside = set(int(s) for s in blk.sites(lat))
        outside = [s for s in range(N) if s not in inside]
        for code in range(1 << len(outside)):
            sigma = np.ones(N, np.int8)
            for j, s in enumerate(outside):
                sigma[s] = 1 if (code >> j) & 1 else -1
            sub, sbc = block_boundary(sigma, lat, bc, blk)
            worst = min(worst, exact_generator_gap(sub, sbc, fam))
    rhs = bg * worst / counts.max()
    return {"single_gap": single, "block_gap": bg, "min_block_gap": worst, "max_overlap": int(counts.max()),
            "bound": rhs, "holds": bool(single >= rhs - 1e-12)}
