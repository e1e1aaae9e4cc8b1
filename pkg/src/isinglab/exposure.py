"""Exposure coupling of the wired FK measure with two conditioned FK measures.

Edges are revealed one at a time. While the set ``Xi`` (the bottom ring
sites plus everything reached from them through open wired-measure edges)
still has an unexposed incident edge, the smallest such edge in the global
order is revealed next; once none is left (step ``T``) the remaining edges
follow in global order. At every step one uniform ``U_e`` decides the edge
in all three configurations: it is open in a given configuration iff
``U_e`` is below that measure's conditional open probability given what
was revealed so far.

Conditional probabilities use the Edwards-Sokal picture: each conditioned
measure (and the wired one) is the bond marginal of a joint law with
pinned ring spins. The posterior over interior spin configurations is
kept as a weight vector over all ``2**|Lambda|`` codes, so revealing an
edge is a cheap multiplicative update. This is exact but limited to
``MAX_SITES`` interior sites; larger boxes only produce the wired
configuration and ``Xi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .es import extend_spins, fk_from_ising, ising_from_fk, p_to_beta, sample_spins, wiring_from_bc
from .fk import P_SD, FKGraph, count_clusters, fk_graph
from .ising import BETA_C, StripTransfer, ExactDistribution, EnumerationError, tv_distance, MAX_TRANSFER_WIDTH
from .lattice import FREE, BoundaryCondition, Lattice, build_box, wired_bc
from .rng import as_source

MAX_SITES = 16


class CouplingError(ValueError):
    """Boundary conditions that the coupling does not support."""


@dataclass
class ExposureState:
    """Outcome of the exploration.

    ``order`` lists graph edges in exposure order, ``T`` is the number of
    edges exposed before ``Xi`` had no unexposed incident edge, ``xi`` is a
    boolean mask over the vertices of the graph.
    """

    xi: np.ndarray
    order: np.ndarray
    T: int
    gamma: np.ndarray
    xi_top: np.ndarray | None = None  # second cluster for the two-sided variant


@dataclass
class GrandCoupling:
    lattice: Lattice
    graph: FKGraph
    bc_xi: BoundaryCondition
    bc_eta: BoundaryCondition
    p: float
    U: np.ndarray | None
    omega1: np.ndarray
    omega_xi: np.ndarray | None
    omega_eta: np.ndarray | None
    exposure: ExposureState
    run_id: int = 0
    seed: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def conditioned(self) -> bool:
        return self.omega_xi is not None


# ----------------------------------------------------------------------
# kernels
# ----------------------------------------------------------------------
@njit(cache=True)
def _agrees(c, e, leg, ia, ib, bval, N):
    sa = (c >> ia[e]) & 1
    if ib[e] < N:
        sb = (c >> ib[e]) & 1
    else:
        sb = bval[leg, e]
    return sa == sb


@njit(cache=True)
def _initial_weights(N, ia, ib, bval, p):
    L = bval.shape[0]
    K = 1 << N
    w = np.empty((L, K))
    q = 1.0 - p
    for leg in range(L):
        for c in range(K):
            v = 1.0
            for e in range(ia.size):
                if not _agrees(c, e, leg, ia, ib, bval, N):
                    v *= q
            w[leg, c] = v
    return w


@njit(cache=True)
def _expose(N, ia, ib, bval, w0, p, U, xi0):
    """Run the exposure; leg 0 is the wired measure and drives ``Xi``."""
    L = bval.shape[0]
    K = 1 << N
    m = ia.size
    w = w0.copy()
    exposed = np.zeros(m, np.bool_)
    order = np.empty(m, np.int64)
    omega = np.zeros((L, m), np.int8)
    xi = xi0.copy()
    T = -1
    q = 1.0 - p
    for t in range(m):
        e = -1
        if T < 0:
            for k in range(m):
                if not exposed[k] and (xi[ia[k]] or xi[ib[k]]):
                    e = k
                    break
            if e < 0:
                T = t
        if e < 0:
            for k in range(m):
                if not exposed[k]:
                    e = k
                    break
        exposed[e] = True
        order[t] = e
        for leg in range(L):
            tot = 0.0
            sa = 0.0
            for c in range(K):
                wc = w[leg, c]
                if wc == 0.0:
                    continue
                tot += wc
                if _agrees(c, e, leg, ia, ib, bval, N):
                    sa += wc
            pr = p * sa / tot
            o = 1 if U[e] < pr else 0
            omega[leg, e] = o
            new = 0.0
            for c in range(K):
                if not _agrees(c, e, leg, ia, ib, bval, N):
                    if o == 1:
                        w[leg, c] = 0.0
                    elif q > 0.0:
                        w[leg, c] /= q
                new += w[leg, c]
            if new > 1e100 or new < 1e-100:
                for c in range(K):
                    w[leg, c] /= new
        if T < 0 and omega[0, e] == 1:
            xi[ia[e]] = True
            xi[ib[e]] = True
    if T < 0:
        T = m
    return omega, order, T, xi


def _orient(graph: FKGraph, N: int):
    """Interior endpoint first; ``ib >= N`` marks a ring endpoint."""
    a, b = graph.edges[:, 0], graph.edges[:, 1]
    swap = a >= N
    ia = np.where(swap, b, a).astype(np.int64)
    ib = np.where(swap, a, b).astype(np.int64)
    return ia, ib


def expose_omega1(omega1, graph: FKGraph, start) -> ExposureState:
    """Deterministic exploration order, ``T`` and ``Xi`` for a given wired configuration."""
    m = graph.n_edges
    a, b = graph.edges[:, 0], graph.edges[:, 1]
    xi = np.zeros(graph.n_vertices, bool)
    xi[np.asarray(start, dtype=np.int64)] = True
    exposed = np.zeros(m, bool)
    order = []
    T = None
    while True:
        cand = np.flatnonzero(~exposed & (xi[a] | xi[b]))
        if not len(cand):
            break
        e = int(cand[0])
        exposed[e] = True
        order.append(e)
        if omega1[e]:
            xi[a[e]] = xi[b[e]] = True
    T = len(order)
    order += [int(e) for e in np.flatnonzero(~exposed)]
    return ExposureState(xi, np.array(order, np.int64), T, np.asarray(start, np.int64))


# ----------------------------------------------------------------------
# public operations
# ----------------------------------------------------------------------
def bottom_ring(lat: Lattice) -> np.ndarray:
    """Ring sites below the box (the corners carry no edges and are omitted)."""
    return lat.sites_on_side("bottom")


def top_ring(lat: Lattice) -> np.ndarray:
    return lat.sites_on_side("top")


def _check_pair(xi: BoundaryCondition, eta: BoundaryCondition, allowed) -> None:
    if xi.lattice != eta.lattice:
        raise CouplingError("boundary conditions live on different boxes")
    lat = xi.lattice
    diff = np.flatnonzero(xi.values != eta.values) + lat.n_sites
    ok = set()
    for side in allowed:
        ok |= set(int(s) for s in lat.sites_on_side(side))
    if not set(int(d) for d in diff) <= ok:
        raise CouplingError(f"boundary conditions may differ only on {' and '.join(allowed)}")
    if not np.array_equal(xi.values == FREE, eta.values == FREE):
        raise CouplingError("free ring sites must coincide")


class _Engine:
    """Precomputed data for repeated exposures on one box and bc pair."""

    def __init__(self, xi: BoundaryCondition, eta: BoundaryCondition, p: float, start):
        lat = xi.lattice
        self.lat, self.xi, self.eta, self.p = lat, xi, eta, p
        self.graph = fk_graph(lat, xi)
        self.start = np.asarray(start, np.int64)
        self.N = lat.n_sites
        self.enumerable = self.N <= MAX_SITES
        self.wired = wired_bc(xi)
        if self.enumerable:
            ia, ib = _orient(self.graph, self.N)
            bval = np.zeros((3, len(ia)), np.int64)
            for leg, bc in enumerate((self.wired, xi, eta)):
                sv = bc.site_values
                ring = ib >= self.N
                bval[leg, ring] = (sv[ib[ring]] > 0).astype(np.int64)
            self.ia, self.ib, self.bval = ia, ib, bval
            self.w0 = _initial_weights(self.N, ia, ib, bval, p)

    def run(self, src, run_id: int) -> GrandCoupling:
        m = self.graph.n_edges
        xi0 = np.zeros(self.graph.n_vertices, np.bool_)
        xi0[self.start] = True
        if self.enumerable:
            U = src.uniforms("exposure", run_id, size=m)
            om, order, T, xi_mask = _expose(self.N, self.ia, self.ib, self.bval, self.w0, self.p, U, xi0)
            state = ExposureState(xi_mask, order, int(T), self.start)
            return GrandCoupling(self.lat, self.graph, self.xi, self.eta, self.p, U, om[0].copy(),
                                 om[1].copy(), om[2].copy(), state, run_id, src.seed)
        sigma = sample_spins(self.lat, self.wired, p_to_beta(self.p), src, run_id)
        om1 = fk_from_ising(extend_spins(sigma, self.wired), self.graph, self.p, src.uniforms("percolate", run_id, size=m))
        state = expose_omega1(om1, self.graph, self.start)
        return GrandCoupling(self.lat, self.graph, self.xi, self.eta, self.p, None, om1, None, None, state,
                             run_id, src.seed)


def run_exposure(lat: Lattice, xi: BoundaryCondition, eta: BoundaryCondition, rng=0, p: float = P_SD,
                 run_id: int = 0, engine: _Engine | None = None) -> GrandCoupling:
    """Build the three coupled bond configurations for one run.

    ``xi`` and ``eta`` may differ only on the bottom ring. Boxes with more
    than ``MAX_SITES`` sites yield the wired configuration and ``Xi`` only
    (``omega_xi`` and ``omega_eta`` are ``None``).
    """
    if engine is None:
        if xi.lattice != lat:
            raise CouplingError("boundary condition does not belong to the lattice")
        _check_pair(xi, eta, ("bottom",))
        engine = _Engine(xi, eta, p, bottom_ring(lat))
    return engine.run(as_source(rng), run_id)


def exposure_runs(lat, xi, eta, n: int, rng=0, p: float = P_SD, two_sided: bool = False):
    """Iterate ``n`` independent couplings sharing one precomputed engine."""
    if two_sided:
        _check_pair(xi, eta, ("bottom", "top"))
        engine = _Engine(xi, eta, p, np.concatenate([bottom_ring(lat), top_ring(lat)]))
    else:
        _check_pair(xi, eta, ("bottom",))
        engine = _Engine(xi, eta, p, bottom_ring(lat))
    src = as_source(rng)
    for i in range(n):
        gc = engine.run(src, i)
        if two_sided:
            _split_two_sided(gc)
        yield gc


def two_sided_exposure(lat: Lattice, xi: BoundaryCondition, eta: BoundaryCondition, rng=0, p: float = P_SD,
                       run_id: int = 0) -> GrandCoupling:
    """Explore from the bottom and the top ring simultaneously.

    ``xi`` and ``eta`` may differ on the top and bottom rings. The
    exposure state records ``xi`` (cluster of the bottom ring) and
    ``xi_top`` (cluster of the top ring) separately.
    """
    _check_pair(xi, eta, ("bottom", "top"))
    engine = _Engine(xi, eta, p, np.concatenate([bottom_ring(lat), top_ring(lat)]))
    gc = engine.run(as_source(rng), run_id)
    _split_two_sided(gc)
    return gc


def _split_two_sided(gc: GrandCoupling) -> None:
    lat, g = gc.lattice, gc.graph
    _, cs = count_clusters(gc.omega1, g)
    comp = cs.component_labels
    bot = {int(comp[s]) for s in bottom_ring(lat)}
    top = {int(comp[s]) for s in top_ring(lat)}
    gc.exposure.xi_top = np.isin(comp, list(top))
    gc.exposure.xi = np.isin(comp, list(bot))


def check_domination(gc: GrandCoupling) -> bool:
    """Each conditioned configuration lies below the wired one on every exposed prefix."""
    if not gc.conditioned:
        return True
    o1 = gc.omega1[gc.exposure.order]
    for om in (gc.omega_xi, gc.omega_eta):
        o = om[gc.exposure.order]
        # prefix-wise check; the running flag is monotone so this equals the elementwise test
        if not np.all(np.cumsum(o > o1) == 0):
            return False
    return True


def _height_threshold(lat: Lattice, rho: float) -> int:
    return int(math.ceil(rho * lat.r - 1e-9))


def max_height(gc: GrandCoupling, mask=None) -> int:
    mask = gc.exposure.xi if mask is None else mask
    return int(gc.lattice.coords[np.flatnonzero(mask), 1].max())


def xi_confined(gc: GrandCoupling, rho: float) -> bool:
    """No site of ``Xi`` at height ``rho * r`` or above."""
    return max_height(gc) < _height_threshold(gc.lattice, rho)


def closed_interface(gc: GrandCoupling) -> bool:
    """Every edge between ``Xi`` and its complement is closed in all configurations."""
    xi = gc.exposure.xi
    a, b = gc.graph.edges[:, 0], gc.graph.edges[:, 1]
    cut = xi[a] != xi[b]
    oms = [gc.omega1] + ([gc.omega_xi, gc.omega_eta] if gc.conditioned else [])
    return all(not np.any(om[cut]) for om in oms)


def agreed_on_tail(gc: GrandCoupling) -> bool:
    """The two conditioned configurations coincide on edges exposed after ``T``."""
    if not gc.conditioned:
        return True
    tail = gc.exposure.order[gc.exposure.T:]
    return bool(np.array_equal(gc.omega_xi[tail], gc.omega_eta[tail]))


def couple_remainder(gc: GrandCoupling, rng=None):
    """Spins for both conditioned legs with shared cluster spins.

    Returns ``(sigma_xi, sigma_eta)`` over the box.
    """
    if not gc.conditioned:
        raise EnumerationError("conditioned legs were not computed for this box")
    src = as_source(gc.seed if rng is None else rng)
    u = src.uniforms("cluster-spin", gc.run_id, size=gc.graph.n_vertices)
    N = gc.lattice.n_sites
    sx = ising_from_fk(gc.omega_xi, gc.graph, wiring_from_bc(gc.bc_xi), u, fixed=True)[:N]
    se = ising_from_fk(gc.omega_eta, gc.graph, wiring_from_bc(gc.bc_eta), u, fixed=True)[:N]
    return sx, se


def run_log_row(gc: GrandCoupling, rho: float) -> dict:
    return {
        "seed": gc.seed,
        "T": gc.exposure.T,
        "|Xi|": int(gc.exposure.xi.sum()),
        "max-height": max_height(gc),
        "confined(rho)": int(xi_confined(gc, rho)),
        "dominated": int(check_domination(gc)),
        "agreed-on-tail": int(agreed_on_tail(gc)),
    }


RUN_LOG_COLUMNS = ["seed", "T", "|Xi|", "max-height", "confined(rho)", "dominated", "agreed-on-tail"]


# ----------------------------------------------------------------------
# spatial mixing
# ----------------------------------------------------------------------
@dataclass
class SpatialMixingResult:
    tv: float
    confinement_rate: float
    stderr: float
    samples: int
    exact: bool

    @property
    def coupling_bound(self) -> float:
        return 1.0 - self.confinement_rate

    def __iter__(self):
        return iter((self.tv, self.confinement_rate))


def exact_top_tv(lat: Lattice, xi: BoundaryCondition, eta: BoundaryCondition, rho: float,
                 beta: float = BETA_C) -> float:
    """Exact TV between the laws of the spins at heights ``>= rho*r``.

    Rows above the lowest row of that region are conditionally independent
    of everything below given that row, with the same conditional law under
    both boundary conditions, so the TV equals the TV of that single row.
    """
    y0 = _height_threshold(lat, rho)
    if y0 > lat.rp:
        return 0.0
    y0 = max(y0, 1)
    a = StripTransfer(lat, xi, beta).row_marginal(y0)
    b = StripTransfer(lat, eta, beta).row_marginal(y0)
    return 0.5 * float(np.abs(a - b).sum())


def spatial_mixing_tv(r: int, rp: int, rho: float, xi_spec: str, eta_spec: str, samples: int = 10_000,
                      rng=0, p: float = P_SD) -> SpatialMixingResult:
    """TV between the top-region laws under two bottom conditions, and the coupling bound.

    The TV is exact (row transfer matrix) when the width allows it,
    otherwise it is estimated from the coupled spins of enumerable boxes.
    The confinement rate is estimated from exact samples of the wired
    measure.
    """
    lat, xi = build_box(r, rp, xi_spec)
    _, eta = build_box(r, rp, eta_spec)
    _check_pair(xi, eta, ("bottom",))
    beta = p_to_beta(p)
    src = as_source(rng)
    conf = 0
    engine = _Engine(xi, eta, p, bottom_ring(lat))
    y0 = _height_threshold(lat, rho)
    region = lat.sub_rectangle_sites(1, r, y0, rp)
    disagree = 0
    for i in range(samples):
        gc = engine.run(src, i)
        if xi_confined(gc, rho):
            conf += 1
        if gc.conditioned and lat.r > MAX_TRANSFER_WIDTH:
            sx, se = couple_remainder(gc)
            disagree += int(not np.array_equal(sx[region], se[region]))
    rate = conf / samples
    se_ = math.sqrt(max(rate * (1 - rate), 1e-12) / samples)
    if xi == eta:
        return SpatialMixingResult(0.0, rate, se_, samples, True)
    if lat.r <= MAX_TRANSFER_WIDTH and not lat.vwrap:
        return SpatialMixingResult(exact_top_tv(lat, xi, eta, rho, beta), rate, se_, samples, True)
    return SpatialMixingResult(disagree / samples, rate, se_, samples, False)


def empirical_bond_law(configs: np.ndarray) -> ExactDistribution:
    m = configs.shape[1]
    codes = configs.astype(np.int64) @ (1 << np.arange(m, dtype=np.int64))
    cnt = np.bincount(codes, minlength=1 << m).astype(float)
    return ExactDistribution(cnt / cnt.sum(), m, "bond")

