"""Spin configurations, the Gibbs measure and exact small-lattice oracles.

Spin configurations are ``int8`` arrays of +/-1 over the interior sites of a
:class:`~isinglab.lattice.Lattice`. Exact distributions enumerate all
``2**n`` configurations by integer code, bit ``i`` set meaning site ``i``
carries spin +1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from .lattice import FREE, BoundaryCondition, Lattice

BETA_C = float(0.5 * np.log1p(np.sqrt(2.0)))
MAX_ENUM_SITES = 24
MAX_TRANSFER_WIDTH = 12


class EnumerationError(ValueError):
    """Raised when an exact oracle would exceed its enumeration cap."""


@dataclass
class ExactDistribution:
    """Probabilities over all ``2**nbits`` configurations, indexed by code.

    ``kind`` is ``"spin"`` (bit set = +1) or ``"bond"`` (bit set = open).
    The optional fields record what produced the table.
    """

    probs: np.ndarray
    nbits: int
    kind: str = "spin"
    lattice: Optional[Lattice] = field(default=None, repr=False)
    bc: Optional[BoundaryCondition] = field(default=None, repr=False)
    beta: Optional[float] = None

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.shape != (1 << self.nbits,):
            raise ValueError("probability table must cover every configuration")

    def configs(self) -> np.ndarray:
        """Decoded configurations, one row per code (spins +/-1 or bonds 0/1)."""
        return decode(np.arange(1 << self.nbits), self.nbits, self.kind)

    def prob(self, config) -> float:
        return float(self.probs[encode(config, self.kind)])

    def marginal(self, positions) -> "ExactDistribution":
        """Law of the sub-configuration at ``positions`` (bit order follows ``positions``)."""
        positions = list(positions)
        codes = np.arange(1 << self.nbits)
        sub = np.zeros_like(codes)
        for j, i in enumerate(positions):
            sub |= ((codes >> i) & 1) << j
        out = np.bincount(sub, weights=self.probs, minlength=1 << len(positions))
        return ExactDistribution(out, len(positions), self.kind)

    def expectation(self, values) -> float:
        return float(np.dot(self.probs, values))


def decode(codes, nbits: int, kind: str = "spin") -> np.ndarray:
    codes = np.asarray(codes, dtype=np.int64)
    bits = ((codes[..., None] >> np.arange(nbits)) & 1).astype(np.int8)
    return bits * 2 - 1 if kind == "spin" else bits


def encode(config, kind: str = "spin") -> int:
    c = np.asarray(config)
    bits = (c > 0) if kind == "spin" else (c != 0)
    return int(np.dot(bits.astype(np.int64), 1 << np.arange(len(c), dtype=np.int64)))


def tv_distance(phi: ExactDistribution, psi: ExactDistribution) -> float:
    """Total-variation distance ``0.5 * sum |phi - psi|``."""
    if phi.nbits != psi.nbits or phi.kind != psi.kind:
        raise ValueError("distributions live on different supports")
    return 0.5 * float(np.abs(phi.probs - psi.probs).sum())


# ----------------------------------------------------------------------
# energies
# ----------------------------------------------------------------------
def _interior_edges(lat: Lattice) -> np.ndarray:
    e = lat.edges
    return e[(e[:, 0] < lat.n_sites) & (e[:, 1] < lat.n_sites)]


def interaction_sum(sigma, bc: BoundaryCondition) -> int:
    """``sum_{u~v} sigma(u) sigma(v)`` including pairs with fixed boundary spins.

    Free boundary neighbours contribute nothing.
    """
    lat = bc.lattice
    s = np.asarray(sigma, dtype=np.int64)
    if s.shape != (lat.n_sites,):
        raise ValueError("spin configuration must cover the box")
    ie = _interior_edges(lat)
    return int(np.sum(s[ie[:, 0]] * s[ie[:, 1]]) + np.dot(s, bc.field))


@njit(cache=True)
def _all_interactions(n, eu, ev, fld):
    K = 1 << n
    out = np.empty(K, np.int64)
    for c in range(K):
        e = 0
        for k in range(eu.size):
            if ((c >> eu[k]) & 1) == ((c >> ev[k]) & 1):
                e += 1
            else:
                e -= 1
        for i in range(n):
            if fld[i] != 0:
                if (c >> i) & 1:
                    e += fld[i]
                else:
                    e -= fld[i]
        out[c] = e
    return out


def all_interactions(lat: Lattice, bc: BoundaryCondition) -> np.ndarray:
    """Interaction sum of every configuration code."""
    if lat.n_sites > MAX_ENUM_SITES:
        raise EnumerationError(f"{lat.n_sites} sites exceed the enumeration cap of {MAX_ENUM_SITES}")
    ie = _interior_edges(lat)
    return _all_interactions(lat.n_sites, ie[:, 0].copy(), ie[:, 1].copy(), bc.field.astype(np.int64))


def gibbs_exact(lat: Lattice, bc: BoundaryCondition, beta: float = BETA_C) -> ExactDistribution:
    """Exact Gibbs distribution ``mu(sigma) ~ exp(beta * interaction_sum)``."""
    h = all_interactions(lat, bc).astype(np.float64) * beta
    w = np.exp(h - h.max())
    return ExactDistribution(w / w.sum(), lat.n_sites, "spin", lat, bc, beta)


def upset_masses(dist: ExactDistribution) -> np.ndarray:
    """``dist({x' >= x})`` for every configuration ``x`` (superset sums over bits)."""
    n = dist.nbits
    a = dist.probs.reshape((2,) * n)
    for ax in range(n):
        a = np.flip(np.cumsum(np.flip(a, ax), axis=ax), ax)
    return a.reshape(-1)


def dominates(upper: ExactDistribution, lower: ExactDistribution, tol: float = 1e-12) -> bool:
    """Check ``upper >= lower`` on every principal increasing event."""
    return bool(np.all(upset_masses(upper) >= upset_masses(lower) - tol))


# ----------------------------------------------------------------------
# row transfer matrix for narrow strips
# ----------------------------------------------------------------------
class StripTransfer:
    """Exact row-by-row calculus for Ising on a box of small width.

    Gives the partition function, single-row marginals and exact samples
    for boxes up to ``MAX_TRANSFER_WIDTH`` columns (any height). Vertical
    wrapping is not supported.
    """

    def __init__(self, lat: Lattice, bc: BoundaryCondition, beta: float = BETA_C):
        if lat.vwrap:
            raise ValueError("row transfer needs an open vertical direction")
        if lat.r > MAX_TRANSFER_WIDTH:
            raise EnumerationError(f"width {lat.r} exceeds {MAX_TRANSFER_WIDTH}")
        self.lat, self.bc, self.beta = lat, bc, beta
        r = lat.r
        S = 1 << r
        rows = decode(np.arange(S), r).astype(np.int64)  # (S, r)
        self.rows = rows
        fld = bc.field.reshape(lat.rp, r)
        horiz = np.sum(rows[:, :-1] * rows[:, 1:], axis=1) if r > 1 else np.zeros(S, np.int64)
        if lat.hwrap:
            horiz = horiz + rows[:, -1] * rows[:, 0]
        self.row_h = beta * (horiz[None, :] + fld @ rows.T)  # (rp, S) log-weights
        self.T = np.exp(beta * (rows @ rows.T))
        self._forward()

    def _forward(self):
        rp, S = self.lat.rp, self.rows.shape[0]
        F = np.empty((rp, S))
        logc = np.zeros(rp)
        f = np.exp(self.row_h[0] - self.row_h[0].max())
        logc[0] = self.row_h[0].max()
        for y in range(rp):
            if y:
                f = (f @ self.T) * np.exp(self.row_h[y] - self.row_h[y].max())
                logc[y] = logc[y - 1] + self.row_h[y].max()
            s = f.sum()
            f = f / s
            logc[y] += np.log(s)
            F[y] = f
        self.F, self._logc = F, logc
        B = np.empty((rp, S))
        b = np.ones(S)
        B[rp - 1] = b
        for y in range(rp - 2, -1, -1):
            b = self.T @ (np.exp(self.row_h[y + 1] - self.row_h[y + 1].max()) * b)
            b = b / b.sum()
            B[y] = b
        self.B = B

    @property
    def log_partition(self) -> float:
        """``log Z`` of the box with its boundary condition."""
        return float(self._logc[-1])

    def row_marginal(self, y: int) -> np.ndarray:
        """Law of row ``y`` (1-based) over row codes."""
        m = self.F[y - 1] * self.B[y - 1]
        return m / m.sum()

    def sample(self, u: np.ndarray) -> np.ndarray:
        """Exact sample driven by one uniform per row (top row uses ``u[-1]``)."""
        rp, r = self.lat.rp, self.lat.r
        out = np.empty((rp, r), dtype=np.int8)
        w = self.F[rp - 1]
        for y in range(rp - 1, -1, -1):
            if y < rp - 1:
                w = self.F[y] * self.T[:, code]
            cdf = np.cumsum(w)
            code = int(np.searchsorted(cdf, u[y] * cdf[-1], side="right"))
            code = min(code, len(cdf) - 1)
            out[y] = self.rows[code]
        return out.reshape(-1)


# ----------------------------------------------------------------------
# snapshots
# ----------------------------------------------------------------------
def format_spins(sigma, lat: Lattice) -> str:
    """Text snapshot: ``rp`` lines of ``r`` characters, top row first."""
    s = np.asarray(sigma).reshape(lat.rp, lat.r)
    return "\n".join("".join("+" if v > 0 else "-" for v in row) for row in s[::-1]) + "\n"


def parse_spins(text: str, lat: Lattice) -> np.ndarray:
    lines = [ln.strip() for ln in text.strip().splitlines()]
    if len(lines) != lat.rp or any(len(ln) != lat.r for ln in lines):
        raise ValueError("snapshot shape does not match the lattice")
    rows = [[1 if ch == "+" else -1 if ch == "-" else 0 for ch in ln] for ln in lines[::-1]]
    arr = np.array(rows, dtype=np.int8).reshape(-1)
    if np.any(arr == 0):
        raise ValueError("snapshot characters must be '+' or '-'")
    return arr


def global_flip_codes(n: int) -> np.ndarray:
    """Code of ``-sigma`` for every code ``sigma``."""
    return np.arange(1 << n) ^ ((1 << n) - 1)


def fixed_spin_sites(bc: BoundaryCondition) -> np.ndarray:
    return np.flatnonzero(bc.values != FREE) + bc.lattice.n_sites
