"""Monotone coupling from the past for heat-bath Glauber dynamics.

Two chains started from all-plus and all-minus at time ``-T`` are driven by
the same uniforms; because heat-bath updates are monotone the pair
sandwiches every other start, and once they meet at time 0 the common
value is an exact sample. ``T`` doubles from one sweep until they meet.

Randomness is addressed by absolute sweep time: the sweep that ends at time
``-j`` (``j >= 1``) uses row ``(j-1) % BLOCK`` of block ``(j-1) // BLOCK`` of
the stream ``("cftp", run_id, block)``. Every epoch therefore reuses the
exact updates of the shorter ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .glauber import HEAT_BATH, RateFamily
from .ising import BETA_C
from .lattice import BoundaryCondition, Lattice
from .rng import as_source
from .stats import ScalingFit, fit_power_law

BLOCK = 64
DEFAULT_BUDGET = 1 << 30


class BudgetExhausted(RuntimeError):
    """Raised when CFTP needs more single-site updates than allowed."""


@dataclass
class CftpRun:
    """Bookkeeping of one perfect-sampling run.

    ``epochs`` lists ``(start_time, coalesced)`` with ``start_time = -2**k``
    sweeps. ``sweeps_to_coalesce`` counts sweeps, within the successful
    epoch, until the sandwich chains first agree.
    """

    epochs: list = field(default_factory=list)
    result: np.ndarray | None = None
    total_updates: int = 0
    sweeps_to_coalesce: float = float("nan")
    violations: int = 0

    @property
    def done(self) -> bool:
        return self.result is not None


def heat_bath_plus_table(beta: float) -> np.ndarray:
    """``P(new spin = +1 | S)`` for ``S = -4..4``."""
    S = np.arange(-4, 5)
    return 1.0 / (1.0 + np.exp(-2.0 * beta * S))


@njit(cache=True)
def _sweep_rows(top, bot, nbr, fld, pplus, U, start_row, diff, sweep0, meet, anti):
    """Run rows ``start_row, ..., 0`` of ``U`` (one sweep each) on both chains.

    Returns the updated disagreement count, the meeting sweep (or -1) and the
    number of sites where ``top < bot`` after an update.
    """
    N = top.size
    viol = 0
    sweep = sweep0
    for row in range(start_row, -1, -1):
        for x in range(N):
            u = U[row, x]
            St = fld[x]
            Sb = fld[x]
            for j in range(4):
                y = nbr[x, j]
                if y >= 0:
                    St += top[y]
                    Sb += bot[y]
            if anti:
                # deliberately order-reversing rule, for the negative control
                nt = 1 if u < pplus[4 - St] else -1
                nb = 1 if u < pplus[4 - Sb] else -1
            else:
                nt = 1 if u < pplus[St + 4] else -1
                nb = 1 if u < pplus[Sb + 4] else -1
            before = top[x] != bot[x]
            top[x] = nt
            bot[x] = nb
            after = nt != nb
            if before and not after:
                diff -= 1
            elif after and not before:
                diff += 1
            if nt < nb:
                viol += 1
        sweep += 1
        if meet < 0 and diff == 0:
            meet = sweep
    return diff, meet, viol


class _Stream:
    """Cached access to the blocks of a run's uniform stream."""

    def __init__(self, src, run_id, n_sites, cache_blocks=16):
        self.src, self.run_id, self.N = src, run_id, n_sites
        self.cache: dict = {}
        self.cache_blocks = cache_blocks

    def block(self, b: int) -> np.ndarray:
        u = self.cache.get(b)
        if u is None:
            u = self.src.generator("cftp", self.run_id, b).random((BLOCK, self.N))
            if b < self.cache_blocks:
                self.cache[b] = u
        return u


def sweep_uniforms(rng, run_id: int, j: int, n_sites: int) -> np.ndarray:
    """Uniforms of the sweep ending at time ``-j``."""
    b, i = divmod(j - 1, BLOCK)
    return as_source(rng).generator("cftp", run_id, b).random((BLOCK, n_sites))[i]


def cftp_run(
    lat: Lattice,
    bc: BoundaryCondition,
    beta: float = BETA_C,
    rng=0,
    run_id: int = 0,
    budget: int = DEFAULT_BUDGET,
    fam: RateFamily | None = None,
    anti_monotone: bool = False,
) -> CftpRun:
    """Run monotone CFTP until coalescence; see :func:`cftp_sample`."""
    if fam is not None and fam.kind != HEAT_BATH:
        raise ValueError("CFTP requires the heat-bath rule (Metropolis is not monotone here)")
    if fam is not None:
        beta = fam.beta
    N = lat.n_sites
    nbr = bc.ising_neighbors
    fld = bc.field.astype(np.int64)
    pplus = heat_bath_plus_table(beta)
    stream = _Stream(as_source(rng), run_id, N)
    run = CftpRun()
    T = 1
    while True:
        cost = 2 * T * N
        if run.total_updates + cost > budget:
            raise BudgetExhausted(f"CFTP needs more than {budget} updates")
        top = np.ones(N, np.int8)
        bot = -np.ones(N, np.int8)
        diff, meet, sweep = N, -1, 0
        nblocks = (T + BLOCK - 1) // BLOCK
        for b in range(nblocks - 1, -1, -1):
            U = stream.block(b)
            start = min(BLOCK, T - b * BLOCK) - 1
            diff, meet, v = _sweep_rows(top, bot, nbr, fld, pplus, U, start, diff, sweep, meet, anti_monotone)
            sweep += start + 1
            run.violations += v
        run.total_updates += cost
        ok = diff == 0
        run.epochs.append((-T, ok))
        if ok:
            run.result = top.copy()
            run.sweeps_to_coalesce = float(meet)
            return run
        T *= 2


def cftp_from(lat: Lattice, bc: BoundaryCondition, T: int, beta: float = BETA_C, rng=0, run_id: int = 0):
    """Run the sandwich pair from time ``-T`` to 0 with the run's fixed stream.

    Returns ``(coalesced, top_state)``. Used to couple CFTP samples under
    several boundary conditions through a common start time: once each
    pair has coalesced from ``-T``, the outputs are exact and, for
    ordered boundary conditions, ordered.
    """
    N = lat.n_sites
    top = np.ones(N, np.int8)
    bot = -np.ones(N, np.int8)
    stream = _Stream(as_source(rng), run_id, N)
    nbr, fld, pplus = bc.ising_neighbors, bc.field.astype(np.int64), heat_bath_plus_table(beta)
    diff, meet, sweep = N, -1, 0
    for b in range((T + BLOCK - 1) // BLOCK - 1, -1, -1):
        start = min(BLOCK, T - b * BLOCK) - 1
        diff, meet, _ = _sweep_rows(top, bot, nbr, fld, pplus, stream.block(b), start, diff, sweep, meet, False)
        sweep += start + 1
    return diff == 0, top


def cftp_sample(lat, bc, beta: float = BETA_C, rng=0, run_id: int = 0, budget: int = DEFAULT_BUDGET):
    """Exact sample from the Gibbs measure of ``bc``.

    Returns
    -------
    sigma : ndarray of int8
    sweeps : float
        Sweeps, within the successful epoch, until the sandwich chains met.
    """
    run = cftp_run(lat, bc, beta, rng, run_id, budget)
    return run.result, run.sweeps_to_coalesce


def sandwich_order_check(run: CftpRun) -> bool:
    """True iff the top chain stayed sitewise above the bottom chain."""
    return run.violations == 0


def cftp_samples(lat, bc, n: int, beta: float = BETA_C, rng=0, first_id: int = 0) -> np.ndarray:
    """``n`` independent exact samples (run ids ``first_id .. first_id+n-1``)."""
    out = np.empty((n, lat.n_sites), np.int8)
    for i in range(n):
        out[i] = cftp_run(lat, bc, beta, rng, first_id + i).result
    return out


@dataclass
class CoalescenceTable:
    rows: list  # (n, mean sweeps, stderr)
    fit: ScalingFit
    records: list  # (n, seed-run, sweeps, updates)


def coalescence_scaling(n_list, bc_spec: str = "free", reps: int = 30, rng=0, beta: float = BETA_C) -> CoalescenceTable:
    """Mean sweeps to coalescence on ``n x n`` boxes and a log-log power fit."""
    from .lattice import build_box

    if reps < 2:
        raise ValueError("need at least two repetitions per size")
    src = as_source(rng)
    rows, records = [], []
    for n in n_list:
        lat, bc = build_box(n, n, bc_spec)
        sw = []
        for k in range(reps):
            run = cftp_run(lat, bc, beta, src.spawn(n), k)
            sw.append(run.sweeps_to_coalesce)
            records.append((n, k, run.sweeps_to_coalesce, run.total_updates))
        sw = np.array(sw)
        rows.append((n, float(sw.mean()), float(sw.std(ddof=1) / np.sqrt(reps))))
    ns = np.array([r[0] for r in rows], float)
    m = np.array([r[1] for r in rows])
    se = np.array([r[2] for r in rows])
    fit = fit_power_law(ns, m, np.maximum(se, 1e-3 * m))
    return CoalescenceTable(rows, fit, records)
