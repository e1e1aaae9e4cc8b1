"""Crossing events, dual disconnection and connectivity estimates for FK-Ising.

All connectivity here is by open edges only (components); boundary
wiring never helps a path, otherwise a wired box would be crossed
trivially.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .es import wiring_from_bc
from .fk import EMPTY_WIRING, P_SD, FKChain, FKGraph, count_clusters, fk_graph
from .lattice import FREE, BoundaryCondition, Lattice, build_box
from .rng import as_source
from .stats import batch_stderr, binomial_stderr


@dataclass(frozen=True)
class Rect:
    """Sub-rectangle ``[x0, x1] x [y0, y1]`` in box coordinates (ring included)."""

    x0: int
    x1: int
    y0: int
    y1: int

    @property
    def height(self) -> int:
        return self.y1 - self.y0 + 1

    def contains(self, xy) -> np.ndarray:
        xy = np.asarray(xy)
        return (xy[..., 0] >= self.x0) & (xy[..., 0] <= self.x1) & (xy[..., 1] >= self.y0) & (xy[..., 1] <= self.y1)


def full_box(lat: Lattice) -> Rect:
    return Rect(1, lat.r, 1, lat.rp)


@dataclass
class CrossingReport:
    estimate: float
    samples: int
    stderr: float
    dims: tuple
    bc_label: str
    p: float = P_SD
    burnin: int = 0
    equilibrated: bool = True
    extra: dict = field(default_factory=dict)

    def csv_row(self, rho=None) -> dict:
        return {"r": self.dims[0], "rho": rho if rho is not None else self.dims[1] / self.dims[0],
                "bc": self.bc_label, "p": self.p, "samples": self.samples,
                "estimate": self.estimate, "stderr": self.stderr}


def _inside_edges(graph: FKGraph, rect: Rect) -> np.ndarray:
    xy = graph.lattice.coords
    a, b = graph.edges[:, 0], graph.edges[:, 1]
    return rect.contains(xy[a]) & rect.contains(xy[b])


def vertical_crossing(omega, graph: FKGraph, rect: Rect | None = None) -> bool:
    """Open path inside ``rect`` from its bottom row to its top row."""
    lat = graph.lattice
    rect = full_box(lat) if rect is None else rect
    inside = _inside_edges(graph, rect)
    om = np.where(inside, omega, 0).astype(np.int8)
    _, cs = count_clusters(om, graph)
    comp = cs.component_labels
    xy = lat.coords
    in_rect = rect.contains(xy)
    bottom = np.flatnonzero(in_rect & (xy[:, 1] == rect.y0))
    top = np.flatnonzero(in_rect & (xy[:, 1] == rect.y1))
    return bool(np.intersect1d(comp[bottom], comp[top]).size)


def boundary_sites(lat: Lattice, bc: BoundaryCondition, graph: FKGraph) -> np.ndarray:
    """Sites forming the outer boundary for disconnection events.

    Ring sites that carry an edge of the FK graph, plus box sites next to
    a free side (their free neighbour is not part of the graph).
    """
    used = np.zeros(lat.n_bar, bool)
    used[graph.edges.ravel()] = True
    ring = np.flatnonzero(used[lat.n_sites:]) + lat.n_sites
    sv = bc.site_values
    near_free = [s for s in range(lat.n_sites)
                 if any(y >= lat.n_sites and sv[y] == FREE for y in lat.neighbor_table[s])]
    return np.concatenate([ring, np.array(near_free, np.int64)]).astype(np.int64)


def dual_disconnect(omega, graph: FKGraph, inner: Rect, bc: BoundaryCondition) -> bool:
    """No open path from a site of ``inner`` to the outer boundary."""
    lat = graph.lattice
    if inner.x0 < 2 or inner.y0 < 2 or inner.x1 > lat.r - 1 or inner.y1 > lat.rp - 1:
        raise ValueError("inner rectangle must lie strictly inside the box")
    _, cs = count_clusters(omega, graph)
    comp = cs.component_labels
    xy = lat.coords
    ins = np.flatnonzero(inner.contains(xy[: lat.n_sites]))
    outer = boundary_sites(lat, bc, graph)
    return not np.intersect1d(comp[ins], comp[outer]).size


# ----------------------------------------------------------------------
# estimation with self-diagnosed equilibration
# ----------------------------------------------------------------------
def _initial(graph, start):
    return np.ones(graph.n_edges, np.int8) if start == "open" else np.zeros(graph.n_edges, np.int8)


def equilibrated_indicator_run(lat, bc, indicator, samples, rng, p=P_SD, burnin=200, thin=1, start="open",
                               max_doublings=6, chain_id=0):
    """Sample ``indicator(omega)`` from a heat-bath FK chain after an adaptive burn-in.

    After ``burnin`` sweeps, ``samples`` values are collected (one every
    ``thin`` sweeps). If the means of the two halves differ by more than
    twice their combined standard error, the burn-in is doubled (the
    chain keeps running) and the collection restarts.

    Returns ``(values, burnin_used, equilibrated)``.
    """
    graph = fk_graph(lat, bc)
    chain = FKChain(graph, wiring_from_bc(bc), p, rng, _initial(graph, start), chain_id=chain_id)
    chain.sweep(burnin)
    used = burnin
    for attempt in range(max_doublings + 1):
        vals = np.empty(samples)
        for i in range(samples):
            chain.sweep(thin)
            vals[i] = indicator(chain.omega, graph)
        h = samples // 2
        a, b = vals[:h], vals[h:]
        se = math.sqrt(a.var() / max(len(a), 1) + b.var() / max(len(b), 1))
        if abs(a.mean() - b.mean()) <= 2 * se or se == 0 and a.mean() == b.mean():
            return vals, used, True
        if attempt == max_doublings:
            break
        chain.sweep(used)
        used *= 2
    return vals, used, False


def estimate_crossing(dims, bc_spec: str = "all:+", p: float = P_SD, samples: int = 1000, rng=0,
                      burnin: int = 200, thin: int = 1, rect: Rect | None = None) -> CrossingReport:
    """Probability of a vertical open crossing of the whole ``r x r'`` box (or ``rect``)."""
    r, rp = dims
    lat, bc = build_box(r, rp, bc_spec)
    if p <= 0.0 or p >= 1.0:
        # degenerate measures are deterministic: every edge closed or open
        graph = fk_graph(lat, bc)
        om = np.full(graph.n_edges, 1 if p >= 1 else 0, np.int8)
        v = float(vertical_crossing(om, graph, rect))
        return CrossingReport(v, samples, 0.0, (r, rp), bc_spec, p)
    vals, used, ok = equilibrated_indicator_run(
        lat, bc, lambda om, g: vertical_crossing(om, g, rect), samples, rng, p, burnin, thin)
    est = float(vals.mean())
    # consecutive sweeps are correlated: batch means keep the error honest
    se = max(binomial_stderr(est, samples), batch_stderr(vals, 20) if samples >= 40 else 0.0)
    return CrossingReport(est, samples, se, (r, rp), bc_spec, p, used, ok)


def strip_decay_profile(r: int, rhos, bc_spec: str = "all:+", samples: int = 1000, rng=0, p: float = P_SD,
                        burnin: int = 200, thin: int = 1) -> list:
    """Vertical crossing of ``[0, r+1] x [1, rho*r]``, one report per ``rho``.

    The strip is its own box (width ``r + 2``) carrying ``bc_spec``.
    """
    src = as_source(rng)
    out = []
    for i, rho in enumerate(rhos):
        h = int(round(rho * r))
        rep = estimate_crossing((r + 2, h), bc_spec, p, samples, src.spawn(i), burnin, thin)
        rep.extra["rho"] = rho
        out.append(rep)
    return out


def two_point_connectivity(lat: Lattice, bc: BoundaryCondition, x: int, y: int, samples: int = 1000, rng=0,
                           p: float = P_SD, burnin: int = 200, thin: int = 1, through_wiring: bool = False):
    """Estimate ``P(x <-> y)``; returns ``(estimate, stderr)``.

    Connection is by open edges unless ``through_wiring`` is set.
    """
    if x == y:
        return 1.0, 0.0
    wiring = wiring_from_bc(bc)

    def ind(om, g):
        _, cs = count_clusters(om, g, wiring if through_wiring else EMPTY_WIRING)
        lab = cs.labels if through_wiring else cs.component_labels
        return float(lab[x] == lab[y])

    vals, _, _ = equilibrated_indicator_run(lat, bc, ind, samples, rng, p, burnin, thin, start="closed")
    est = float(vals.mean())
    return est, binomial_stderr(est, samples)


def graph_connectivity(graph: FKGraph, x: int, y: int, samples: int = 1000, rng=0, p: float = P_SD,
                       burnin: int = 100):
    """``P(x <-> y)`` under the free FK measure of an arbitrary graph."""
    chain = FKChain(graph, EMPTY_WIRING, p, rng)
    chain.sweep(burnin)
    hits = 0
    for _ in range(samples):
        chain.sweep(1)
        _, cs = count_clusters(chain.omega, graph)
        hits += int(cs.component_labels[x] == cs.component_labels[y])
    est = hits / samples
    return est, binomial_stderr(est, samples)


def write_crossing_csv(path, reports, rhos=None) -> None:
    import csv

    cols = ["r", "rho", "bc", "p", "samples", "estimate", "stderr"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for i, rep in enumerate(reports):
            w.writerow(rep.csv_row(None if rhos is None else rhos[i]))
