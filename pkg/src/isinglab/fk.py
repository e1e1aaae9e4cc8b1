"""FK (random-cluster) model with boundary wirings.

A bond configuration is an ``int8`` 0/1 array over the edges of an
:class:`FKGraph`. Wirings glue sets of boundary vertices into a single
cluster, so the cluster count ``k(omega)`` counts connected classes of the
graph after the wired classes are merged. Components, by contrast, ignore
the wiring.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .ising import EnumerationError, ExactDistribution
from .lattice import FREE, BoundaryCondition, Lattice
from .rng import RandomSource, as_source

P_SD = float(np.sqrt(2.0) / (1.0 + np.sqrt(2.0)))
Q_ISING = 2.0
MAX_ENUM_EDGES = 24


def beta_to_p(beta: float) -> float:
    """Bond parameter ``p = 1 - exp(-2 beta)`` matching the Ising coupling."""
    if beta < 0:
        raise ValueError("beta must be non-negative")
    return float(-np.expm1(-2.0 * beta))


# ----------------------------------------------------------------------
# graphs and wirings
# ----------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class FKGraph:
    """Vertices ``0..n_vertices-1`` and an ordered edge list.

    For boxes the vertices are the site indices of the box and its ring,
    and ``lattice_edge[i]`` is the lattice edge index of graph edge ``i``.
    """

    n_vertices: int
    edges: np.ndarray
    lattice_edge: np.ndarray | None = None
    lattice: Lattice | None = field(default=None, repr=False)

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "edges", e)
        if self.lattice_edge is None:
            object.__setattr__(self, "lattice_edge", np.arange(len(e)))

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def subgraph(self, keep) -> "FKGraph":
        keep = np.asarray(keep, dtype=bool)
        return FKGraph(self.n_vertices, self.edges[keep], self.lattice_edge[keep], self.lattice)


def fk_graph(lat: Lattice, bc: BoundaryCondition | None = None) -> FKGraph:
    """FK graph of a box: all interior-incident edges, minus those reaching free ring sites."""
    e = lat.edges
    keep = np.ones(len(e), dtype=bool)
    if bc is not None:
        sv = bc.site_values
        n = lat.n_sites
        for i, (a, b) in enumerate(e):
            if (a >= n and sv[a] == FREE) or (b >= n and sv[b] == FREE):
                keep[i] = False
    return FKGraph(lat.n_bar, e[keep], np.flatnonzero(keep), lat)


def single_edge_graph() -> FKGraph:
    return FKGraph(2, np.array([[0, 1]]))


@dataclass(frozen=True)
class Wiring:
    """Partition of (boundary) vertices into wired classes.

    ``plus`` and ``minus`` record which vertices carry a fixed plus or
    minus spin when the wiring comes from an Ising boundary condition.
    """

    classes: tuple = ()
    plus: frozenset = frozenset()
    minus: frozenset = frozenset()

    def __post_init__(self):
        cl = tuple(frozenset(int(s) for s in c) for c in self.classes if len(c) > 0)
        seen = set()
        for c in cl:
            if seen & c:
                raise ValueError("wiring classes must be disjoint")
            seen |= c
        object.__setattr__(self, "classes", cl)
        object.__setattr__(self, "plus", frozenset(int(s) for s in self.plus))
        object.__setattr__(self, "minus", frozenset(int(s) for s in self.minus))

    def labels(self, n: int) -> np.ndarray:
        """Class representative (minimum vertex) of every vertex."""
        lab = np.arange(n, dtype=np.int64)
        for c in self.classes:
            m = min(c)
            for s in c:
                lab[s] = m
        return lab

    def format(self) -> str:
        """Text dump: one ``class-id:site,site,...`` line per class."""
        return "".join(f"{i}:" + ",".join(str(s) for s in sorted(c)) + "\n" for i, c in enumerate(self.classes))


EMPTY_WIRING = Wiring()


@dataclass
class ClusterStructure:
    labels: np.ndarray  # cluster representative per vertex
    component_labels: np.ndarray  # ignoring wiring
    k: int

    def find(self, v: int) -> int:
        return int(self.labels[v])

    def clusters(self) -> dict:
        out: dict = {}
        for v, r in enumerate(self.labels):
            out.setdefault(int(r), []).append(v)
        return out


@njit(cache=True)
def _find(parent, a):
    while parent[a] != a:
        parent[a] = parent[parent[a]]
        a = parent[a]
    return a


@njit(cache=True)
def _labels(pre, eu, ev, omega):
    parent = pre.copy()
    for k in range(eu.size):
        if omega[k]:
            a = _find(parent, eu[k])
            b = _find(parent, ev[k])
            if a < b:
                parent[b] = a
            elif b < a:
                parent[a] = b
    n = parent.size
    out = np.empty(n, np.int64)
    k = 0
    for i in range(n):
        out[i] = _find(parent, i)
        if out[i] == i:
            k += 1
    return out, k


def count_clusters(omega, graph: FKGraph, wiring: Wiring = EMPTY_WIRING):
    """Number of clusters (through wiring) and the cluster structure."""
    om = np.asarray(omega, dtype=np.int8)
    if om.shape != (graph.n_edges,):
        raise ValueError("bond configuration does not match the graph")
    eu, ev = graph.edges[:, 0].copy(), graph.edges[:, 1].copy()
    lab, k = _labels(wiring.labels(graph.n_vertices), eu, ev, om)
    comp, _ = _labels(np.arange(graph.n_vertices, dtype=np.int64), eu, ev, om)
    return int(k), ClusterStructure(lab, comp, int(k))


def fk_weight(omega, graph: FKGraph, wiring: Wiring, p: float, q: float = Q_ISING) -> float:
    """Unnormalized weight ``p^open (1-p)^closed q^k``."""
    om = np.asarray(omega)
    o = int(om.sum())
    k, _ = count_clusters(om, graph, wiring)
    return float(p**o * (1 - p) ** (graph.n_edges - o) * q**k)


@njit(cache=True)
def _all_cluster_counts(pre, eu, ev):
    m = eu.size
    K = 1 << m
    out = np.empty(K, np.int64)
    n = pre.size
    parent = np.empty(n, np.int64)
    for c in range(K):
        for i in range(n):
            parent[i] = pre[i]
        k = 0
        for i in range(n):
            if pre[i] == i:
                k += 1
        for j in range(m):
            if (c >> j) & 1:
                a = _find(parent, eu[j])
                b = _find(parent, ev[j])
                if a != b:
                    if a < b:
                        parent[b] = a
                    else:
                        parent[a] = b
                    k -= 1
        out[c] = k
    return out


def all_cluster_counts(graph: FKGraph, wiring: Wiring = EMPTY_WIRING) -> np.ndarray:
    m = graph.n_edges
    if m > MAX_ENUM_EDGES:
        raise EnumerationError(f"{m} edges exceed the enumeration cap of {MAX_ENUM_EDGES}")
    return _all_cluster_counts(wiring.labels(graph.n_vertices), graph.edges[:, 0].copy(), graph.edges[:, 1].copy())


def fk_exact(graph: FKGraph, wiring: Wiring = EMPTY_WIRING, p: float = P_SD, q: float = Q_ISING) -> ExactDistribution:
    """Exact FK measure over all ``2**m`` bond configurations (bit set = open)."""
    k = all_cluster_counts(graph, wiring).astype(np.float64)
    m = graph.n_edges
    codes = np.arange(1 << m)
    o = np.zeros(len(codes))
    for j in range(m):
        o += (codes >> j) & 1
    with np.errstate(divide="ignore"):
        lw = o * np.log(p) + (m - o) * np.log1p(-p) + k * np.log(q)
    lw = np.where(np.isnan(lw), -np.inf, lw)
    w = np.exp(lw - lw.max())
    return ExactDistribution(w / w.sum(), m, "bond")


# ----------------------------------------------------------------------
# single-bond heat bath
# ----------------------------------------------------------------------
def bond_conditional_prob(omega, e: int, graph: FKGraph, wiring: Wiring, p: float, q: float = Q_ISING) -> float:
    """``P(omega(e) = 1 | rest)``: ``p`` if the endpoints connect in ``omega`` without ``e``, else ``p/(p + q(1-p))``."""
    om = np.array(omega, dtype=np.int8)
    om[e] = 0
    k, cs = count_clusters(om, graph, wiring)
    a, b = graph.edges[e]
    if cs.labels[a] == cs.labels[b]:
        return float(p)
    return float(p / (p + q * (1 - p))) if p > 0 else 0.0


class _Contracted:
    """CSR adjacency of the graph after contracting each wiring class to a node."""

    def __init__(self, graph: FKGraph, wiring: Wiring):
        lab = wiring.labels(graph.n_vertices)
        uniq, node = np.unique(lab, return_inverse=True)
        self.n_nodes = len(uniq)
        eu = node[graph.edges[:, 0]]
        ev = node[graph.edges[:, 1]]
        self.eu, self.ev = eu.astype(np.int64), ev.astype(np.int64)
        m = len(eu)
        deg = np.bincount(np.concatenate([eu, ev]), minlength=self.n_nodes)
        self.indptr = np.concatenate([[0], np.cumsum(deg)]).astype(np.int64)
        order = np.argsort(np.concatenate([eu, ev]), kind="stable")
        nbr = np.concatenate([ev, eu])[order]
        eid = np.concatenate([np.arange(m), np.arange(m)])[order]
        self.adj_node = nbr.astype(np.int64)
        self.adj_edge = eid.astype(np.int64)


@njit(cache=True)
def _connected_without(e, a, b, omega, indptr, adj_node, adj_edge, qa, qb, ma, mb, stamp):
    """Bidirectional search: are nodes ``a`` and ``b`` joined by open edges other than ``e``?"""
    if a == b:
        return True
    ma[a] = stamp
    mb[b] = stamp
    ha, ta, hb, tb = 0, 1, 0, 1
    qa[0] = a
    qb[0] = b
    while ha < ta and hb < tb:
        # expand one node on the side with the smaller frontier
        if ta - ha <= tb - hb:
            v = qa[ha]
            ha += 1
            for j in range(indptr[v], indptr[v + 1]):
                f = adj_edge[j]
                if f == e or omega[f] == 0:
                    continue
                w = adj_node[j]
                if mb[w] == stamp:
                    return True
                if ma[w] != stamp:
                    ma[w] = stamp
                    qa[ta] = w
                    ta += 1
        else:
            v = qb[hb]
            hb += 1
            for j in range(indptr[v], indptr[v + 1]):
                f = adj_edge[j]
                if f == e or omega[f] == 0:
                    continue
                w = adj_node[j]
                if ma[w] == stamp:
                    return True
                if mb[w] != stamp:
                    mb[w] = stamp
                    qb[tb] = w
                    tb += 1
    return False


@njit(cache=True)
def _hb_sweeps(omega, U, eu, ev, indptr, adj_node, adj_edge, p_conn, p_disc, qa, qb, ma, mb, stamp0):
    stamp = stamp0
    m = eu.size
    for s in range(U.shape[0]):
        for e in range(m):
            stamp += 1
            c = _connected_without(e, eu[e], ev[e], omega, indptr, adj_node, adj_edge, qa, qb, ma, mb, stamp)
            pr = p_conn if c else p_disc
            omega[e] = 1 if U[s, e] < pr else 0
    return stamp


class FKChain:
    """Single-bond heat-bath chain for the FK measure with a wiring.

    Each sweep resamples every edge once in index order.
    """

    def __init__(self, graph: FKGraph, wiring: Wiring = EMPTY_WIRING, p: float = P_SD, rng=0, omega=None,
                 chain_id: int = 0, q: float = Q_ISING, purpose: str = "fk-sweep"):
        self.graph, self.wiring, self.p, self.q = graph, wiring, p, q
        m = graph.n_edges
        self.omega = np.zeros(m, np.int8) if omega is None else np.array(omega, dtype=np.int8)
        self._gen = as_source(rng).generator(purpose, chain_id)
        self._c = _Contracted(graph, wiring)
        nn = self._c.n_nodes
        self._qa = np.empty(nn, np.int64)
        self._qb = np.empty(nn, np.int64)
        self._ma = np.zeros(nn, np.int64)
        self._mb = np.zeros(nn, np.int64)
        self._stamp = 0
        self.p_conn = float(p)
        self.p_disc = float(p / (p + q * (1 - p))) if p > 0 else 0.0
        self.sweeps = 0

    def sweep(self, n: int = 1, U=None) -> np.ndarray:
        m = self.graph.n_edges
        done = 0
        while done < n:
            k = min(n - done, max(1, (1 << 20) // max(m, 1)))
            u = self._gen.random((k, m)) if U is None else np.atleast_2d(U)[done:done + k]
            c = self._c
            self._stamp = _hb_sweeps(self.omega, u, c.eu, c.ev, c.indptr, c.adj_node, c.adj_edge,
                                     self.p_conn, self.p_disc, self._qa, self._qb, self._ma, self._mb, self._stamp)
            done += k
        self.sweeps += n
        return self.omega


def bond_heat_bath_sweep(omega, graph: FKGraph, wiring: Wiring, p: float, rng, q: float = Q_ISING) -> np.ndarray:
    """One full sweep of single-bond heat-bath updates; returns a new configuration.

    ``rng`` is a numpy Generator, a RandomSource / int seed (stream
    ``"fk-sweep"``) or an explicit array of ``m`` uniforms.
    """
    m = graph.n_edges
    if isinstance(rng, np.random.Generator):
        u = rng.random(m)
    elif isinstance(rng, np.ndarray):
        u = rng
    else:
        u = as_source(rng).uniforms("fk-sweep", 0, size=m)
    ch = FKChain(graph, wiring, p, 0, omega, q=q)
    ch.sweep(1, U=u.reshape(1, m))
    return ch.omega.copy()


# ----------------------------------------------------------------------
# domain Markov restriction
# ----------------------------------------------------------------------
def domain_markov_restrict(exposed, values, graph: FKGraph, wiring: Wiring = EMPTY_WIRING):
    """Graph of unexposed edges with the wiring induced by the exposed ones.

    Parameters
    ----------
    exposed : sequence of edge indices
    values : sequence of 0/1, the bond values on ``exposed``

    Returns
    -------
    (FKGraph, Wiring)
        Vertices joined through exposed open edges or the original wiring
        become one wired class; ``plus``/``minus`` markers are kept.
    """
    exposed = np.asarray(exposed, dtype=np.int64)
    vals = np.asarray(values, dtype=np.int8)
    om = np.zeros(graph.n_edges, np.int8)
    om[exposed[vals == 1]] = 1
    _, cs = count_clusters(om, graph, wiring)
    groups = [c for c in cs.clusters().values() if len(c) > 1]
    keep = np.ones(graph.n_edges, dtype=bool)
    keep[exposed] = False
    return graph.subgraph(keep), Wiring(tuple(groups), wiring.plus, wiring.minus)


# ----------------------------------------------------------------------
# snapshots
# ----------------------------------------------------------------------
def format_bonds(omega) -> str:
    return "".join(f"{i},{int(v)}\n" for i, v in enumerate(omega))


def parse_bonds(text: str, m: int) -> np.ndarray:
    om = np.full(m, -1, np.int8)
    for line in text.strip().splitlines():
        i, v = line.split(",")
        om[int(i)] = int(v)
    if np.any((om != 0) & (om != 1)):
        raise ValueError("every edge needs a 0/1 value")
    return om
