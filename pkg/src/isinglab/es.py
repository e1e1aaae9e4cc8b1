"""Edwards-Sokal coupling between Ising spins and FK-Ising bonds.

With boundary condition ``xi`` the plus ring sites form one wired class
``P`` and the minus ring sites another class ``M``. The event ``A`` says no
open path joins ``P`` to ``M``. Conditioned on ``A``, the FK measure with
this wiring is the bond marginal of the Edwards-Sokal joint law in which
ring spins are pinned to ``xi``: every agreeing edge is open independently
with probability ``p``. Giving the ``P`` cluster spin +1, the ``M``
cluster -1 and every other cluster an independent fair spin then yields
an exact sample of the Ising measure with boundary ``xi``.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .cftp import cftp_run
from .fk import EMPTY_WIRING, P_SD, FKChain, FKGraph, Wiring, count_clusters, fk_exact, fk_graph
from .ising import ExactDistribution, gibbs_exact
from .lattice import BoundaryCondition, Lattice, boundary_partition
from .rng import as_source

MAX_EXACT_SITES = 16
MIN_ACCEPTANCE = 1e-4


class ConditioningError(RuntimeError):
    """The conditioned FK measure cannot be sampled within the trial budget."""


def p_to_beta(p: float) -> float:
    return float(-0.5 * np.log1p(-p))


def wiring_from_bc(bc: BoundaryCondition) -> Wiring:
    """One wired class for the plus ring sites and one for the minus ones."""
    P, M, _ = boundary_partition(bc)
    return Wiring(tuple(c for c in (P, M) if len(c) > 1), plus=P, minus=M)


def extend_spins(sigma, bc: BoundaryCondition) -> np.ndarray:
    """Spins over the box and its ring (free ring sites get 0)."""
    lat = bc.lattice
    out = bc.site_values.copy()
    out[: lat.n_sites] = sigma
    return out


def _cluster_uniforms(u, n: int, run_id: int = 0) -> np.ndarray:
    if isinstance(u, np.ndarray):
        if len(u) < n:
            raise ValueError("need one uniform per vertex")
        return u
    return as_source(u).uniforms("cluster-spin", run_id, size=n)


def ising_from_fk(omega, graph: FKGraph, wiring: Wiring = EMPTY_WIRING, u=0, fixed: bool = False, run_id: int = 0):
    """Spins constant on clusters, i.i.d. fair across clusters.

    The spin of a cluster is ``+1`` iff ``u[rep] < 1/2`` where ``rep`` is
    its minimum vertex, so couplings that share clusters share spins.
    With ``fixed=True`` the cluster of ``wiring.plus`` is forced to +1 and
    that of ``wiring.minus`` to -1 (requires the event ``A``).

    Returns spins over all graph vertices.
    """
    u = _cluster_uniforms(u, graph.n_vertices, run_id)
    _, cs = count_clusters(omega, graph, wiring)
    lab = cs.labels
    s = np.where(u[lab] < 0.5, 1, -1).astype(np.int8)
    if fixed:
        plus_roots = {int(lab[v]) for v in wiring.plus}
        minus_roots = {int(lab[v]) for v in wiring.minus}
        if plus_roots & minus_roots:
            raise ValueError("a cluster joins plus and minus boundary sites")
        for r in plus_roots:
            s[lab == r] = 1
        for r in minus_roots:
            s[lab == r] = -1
    return s


def fk_from_ising(sigma_bar, graph: FKGraph, p: float = P_SD, u=0, run_id: int = 0) -> np.ndarray:
    """Open each edge with agreeing endpoint spins independently with probability ``p``."""
    s = np.asarray(sigma_bar)
    if isinstance(u, np.ndarray):
        uu = u
    else:
        uu = as_source(u).uniforms("percolate", run_id, size=graph.n_edges)
    a, b = graph.edges[:, 0], graph.edges[:, 1]
    return ((s[a] == s[b]) & (s[a] != 0) & (uu < p)).astype(np.int8)


def event_A(omega, graph: FKGraph, wiring: Wiring) -> bool:
    """True iff no cluster contains both a plus and a minus boundary site."""
    if not wiring.plus or not wiring.minus:
        return True
    _, cs = count_clusters(omega, graph, wiring)
    lab = cs.labels
    return not ({int(lab[v]) for v in wiring.plus} & {int(lab[v]) for v in wiring.minus})


# ----------------------------------------------------------------------
# samplers
# ----------------------------------------------------------------------
@lru_cache(maxsize=64)
def _gibbs_cdf(lat: Lattice, bc: BoundaryCondition, beta: float) -> np.ndarray:
    return np.cumsum(gibbs_exact(lat, bc, beta).probs)


def sample_spins_exact(lat, bc, beta, gen: np.random.Generator, n: int = 1) -> np.ndarray:
    """``n`` exact Gibbs samples by inverse-CDF over the enumerated table."""
    cdf = _gibbs_cdf(lat, bc, float(beta))
    codes = np.minimum(np.searchsorted(cdf, gen.random(n) * cdf[-1], side="right"), len(cdf) - 1)
    return (((codes[:, None] >> np.arange(lat.n_sites)) & 1) * 2 - 1).astype(np.int8)


def sample_spins(lat, bc, beta, rng, run_id: int = 0) -> np.ndarray:
    """One exact Gibbs sample: enumeration on small boxes, CFTP otherwise."""
    if lat.n_sites <= MAX_EXACT_SITES:
        return sample_spins_exact(lat, bc, beta, as_source(rng).generator("gibbs-exact", run_id))[0]
    return cftp_run(lat, bc, beta, rng, run_id).result


class ConditionedFKSampler:
    """Sampler for the FK measure with wiring of ``bc`` conditioned on ``A``.

    Strategy ladder: exact (Ising enumeration followed by Edwards-Sokal
    percolation) when the box has at most ``MAX_EXACT_SITES`` sites;
    otherwise rejection from a heat-bath chain on the unconditioned
    measure, failing with :class:`ConditioningError` when fewer than a
    ``MIN_ACCEPTANCE`` fraction of ``max_trials`` trials are accepted.
    """

    def __init__(self, lat: Lattice, bc: BoundaryCondition, p: float = P_SD, rng=0, *, burnin: int = 200,
                 spacing: int = 1, max_trials: int = 10_000, method: str = "auto"):
        self.lat, self.bc, self.p = lat, bc, p
        self.graph = fk_graph(lat, bc)
        self.wiring = wiring_from_bc(bc)
        self.src = as_source(rng)
        self.beta = p_to_beta(p)
        if method == "auto":
            method = "exact" if lat.n_sites <= MAX_EXACT_SITES else "rejection"
        if method not in ("exact", "rejection"):
            raise ValueError(method)
        self.method = method
        self.burnin, self.spacing, self.max_trials = burnin, spacing, max_trials
        self._chain = None
        self._count = 0
        self.trials = 0
        self.accepted = 0

    def _exact(self, n: int) -> np.ndarray:
        gen = self.src.generator("fk-conditioned", self._count)
        sig = sample_spins_exact(self.lat, self.bc, self.beta, gen, n)
        sv = self.bc.site_values
        full = np.tile(sv, (n, 1))
        full[:, : self.lat.n_sites] = sig
        a, b = self.graph.edges[:, 0], self.graph.edges[:, 1]
        u = gen.random((n, self.graph.n_edges))
        return ((full[:, a] == full[:, b]) & (u < self.p)).astype(np.int8)

    def _rejection(self) -> np.ndarray:
        if self._chain is None:
            self._chain = FKChain(self.graph, self.wiring, self.p, self.src, chain_id=0, purpose="fk-rejection")
            self._chain.sweep(self.burnin)
        tried = 0
        while True:
            self._chain.sweep(self.spacing)
            tried += 1
            self.trials += 1
            if event_A(self._chain.omega, self.graph, self.wiring):
                self.accepted += 1
                return self._chain.omega.copy()
            if tried >= self.max_trials and self.accepted < MIN_ACCEPTANCE * self.trials:
                raise ConditioningError(
                    f"acceptance {self.accepted}/{self.trials} below {MIN_ACCEPTANCE:g}; "
                    "the conditioning event is too rare to sample by rejection"
                )

    def sample(self, n: int = 1) -> np.ndarray:
        """``n`` bond configurations, shape ``(n, m)``."""
        if self.method == "exact":
            out = self._exact(n)
        else:
            out = np.array([self._rejection() for _ in range(n)], dtype=np.int8).reshape(n, -1)
        self._count += 1
        return out


def sample_fk_conditioned(lat: Lattice, bc: BoundaryCondition, rng=0, p: float = P_SD, **kw) -> np.ndarray:
    """One configuration from the FK measure of ``bc`` conditioned on ``A``."""
    return ConditionedFKSampler(lat, bc, p, rng, **kw).sample(1)[0]


def sample_ising_bc(lat: Lattice, bc: BoundaryCondition, rng=0, p: float = P_SD, n: int = 1, **kw) -> np.ndarray:
    """Ising samples with boundary ``bc`` via conditioned FK plus cluster spins.

    Returns an array of shape ``(n, |Lambda|)`` (or ``(|Lambda|,)`` for ``n == 1``).
    """
    src = as_source(rng)
    sampler = ConditionedFKSampler(lat, bc, p, src, **kw)
    oms = sampler.sample(n)
    out = np.empty((n, lat.n_sites), np.int8)
    for i in range(n):
        u = src.uniforms("cluster-spin", i, size=lat.n_bar)
        out[i] = ising_from_fk(oms[i], sampler.graph, sampler.wiring, u, fixed=True)[: lat.n_sites]
    return out[0] if n == 1 else out


# ----------------------------------------------------------------------
# exact pushforwards (oracles on enumerable boxes)
# ----------------------------------------------------------------------
def fk_to_ising_pushforward(lat: Lattice, bc: BoundaryCondition, p: float = P_SD) -> ExactDistribution:
    """Exact law of the spins produced from the conditioned FK measure.

    Enumerates bonds, keeps those in ``A``, and averages over fair spins
    of the clusters that touch the box but no fixed ring site.
    """
    graph = fk_graph(lat, bc)
    wiring = wiring_from_bc(bc)
    nu = fk_exact(graph, wiring, p)
    N = lat.n_sites
    out = np.zeros(1 << N)
    m = graph.n_edges
    for code in np.flatnonzero(nu.probs > 0):
        om = ((code >> np.arange(m)) & 1).astype(np.int8)
        if not event_A(om, graph, wiring):
            continue
        _, cs = count_clusters(om, graph, wiring)
        lab = cs.labels[:N]
        plus = {int(cs.labels[v]) for v in wiring.plus}
        minus = {int(cs.labels[v]) for v in wiring.minus}
        free_roots = sorted({int(r) for r in lab} - plus - minus)
        base = np.zeros(N, np.int64)
        for r in plus:
            base[lab == r] = 1
        nf = len(free_roots)
        for a in range(1 << nf):
            s = base.copy()
            for j, r in enumerate(free_roots):
                s[lab == r] = 1 if (a >> j) & 1 else -1
            c = int(np.dot(s > 0, 1 << np.arange(N)))
            out[c] += nu.probs[code] / (1 << nf)
    return ExactDistribution(out / out.sum(), N, "spin", lat, bc)


def ising_to_fk_pushforward(lat: Lattice, bc: BoundaryCondition, p: float = P_SD) -> ExactDistribution:
    """Exact bond law obtained by percolating agreeing edges of ``sigma ~ mu``."""
    graph = fk_graph(lat, bc)
    mu = gibbs_exact(lat, bc, p_to_beta(p))
    m = graph.n_edges
    codes = np.arange(1 << m)
    bits = (codes[:, None] >> np.arange(m)) & 1
    out = np.zeros(1 << m)
    a, b = graph.edges[:, 0], graph.edges[:, 1]
    for sc, w in enumerate(mu.probs):
        s = extend_spins(((sc >> np.arange(lat.n_sites)) & 1) * 2 - 1, bc)
        agree = s[a] == s[b]
        q = np.where(agree, p, 0.0)
        out += w * np.prod(np.where(bits == 1, q, 1 - q), axis=1)
    return ExactDistribution(out, m, "bond")


def conditioned_fk_exact(lat: Lattice, bc: BoundaryCondition, p: float = P_SD) -> ExactDistribution:
    """FK measure with the wiring of ``bc`` restricted to ``A`` and renormalized."""
    graph = fk_graph(lat, bc)
    wiring = wiring_from_bc(bc)
    nu = fk_exact(graph, wiring, p)
    m = graph.n_edges
    mask = np.array([event_A(((c >> np.arange(m)) & 1).astype(np.int8), graph, wiring) for c in range(1 << m)])
    probs = np.where(mask, nu.probs, 0.0)
    return ExactDistribution(probs / probs.sum(), m, "bond")


__all__ = [
    "ConditionedFKSampler",
    "ConditioningError",
    "conditioned_fk_exact",
    "event_A",
    "extend_spins",
    "fk_from_ising",
    "fk_to_ising_pushforward",
    "ising_from_fk",
    "ising_to_fk_pushforward",
    "p_to_beta",
    "sample_fk_conditioned",
    "sample_ising_bc",
    "sample_spins",
    "wiring_from_bc",
]
