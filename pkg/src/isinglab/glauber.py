"""Single-site Glauber dynamics for the Ising model.

Rates are reversible for ``mu ~ exp(beta * sum sigma(u) sigma(v))``:
``c(x, sigma) / c(x, sigma^x) = exp(-2 beta sigma(x) S)`` with ``S`` the sum
of neighbouring spins (fixed boundary spins included, free ones omitted).
Continuous time is simulated as uniform random scan, one sweep being
``|Lambda|`` update attempts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from numba import njit

from .ising import BETA_C, EnumerationError, ExactDistribution, all_interactions
from .lattice import BoundaryCondition, Lattice
from .rng import RandomSource, as_source

HEAT_BATH = "heat-bath"
METROPOLIS = "metropolis"
MAX_GENERATOR_SITES = 12


@dataclass(frozen=True)
class RateFamily:
    """A named reversible rate family at inverse temperature ``beta``."""

    kind: str = HEAT_BATH
    beta: float = BETA_C

    def __post_init__(self):
        k = self.kind.lower().replace("_", "-").replace("heatbath", "heat-bath")
        if k not in (HEAT_BATH, METROPOLIS):
            raise ValueError(f"unknown rate family {self.kind!r}")
        object.__setattr__(self, "kind", k)

    def rate(self, spin: int, S: int) -> float:
        a = 2.0 * self.beta * spin * S
        if self.kind == HEAT_BATH:
            return 1.0 / (1.0 + np.exp(a))
        return min(1.0, float(np.exp(-a)))

    @property
    def table(self) -> np.ndarray:
        """``table[(spin+1)//2, S+4]`` flip rate, S in -4..4."""
        t = np.empty((2, 9))
        for i, s in enumerate((-1, 1)):
            for S in range(-4, 5):
                t[i, S + 4] = self.rate(s, S)
        return t


@dataclass
class ChainState:
    sigma: np.ndarray
    sweeps: float = 0.0


def local_field(x: int, sigma, bc: BoundaryCondition) -> int:
    nb = bc.ising_neighbors[x]
    return int(bc.field[x] + sum(int(sigma[y]) for y in nb if y >= 0))


def flip_rate(fam: RateFamily, x: int, sigma, bc: BoundaryCondition) -> float:
    """Rate at which the spin at interior site ``x`` flips."""
    if not bc.lattice.is_interior(x):
        raise ValueError(f"site {x} is not in the box")
    return fam.rate(int(sigma[x]), local_field(x, sigma, bc))


@njit(cache=True)
def _random_scan(sigma, nbr, fld, table, u_site, u_flip):
    N = sigma.size
    for k in range(u_site.size):
        x = int(u_site[k] * N)
        if x >= N:
            x = N - 1
        S = fld[x]
        for j in range(4):
            y = nbr[x, j]
            if y >= 0:
                S += sigma[y]
        si = 1 if sigma[x] > 0 else 0
        if u_flip[k] < table[si, S + 4]:
            sigma[x] = -sigma[x]


@njit(cache=True)
def _random_scan_histogram(sigma, nbr, fld, table, u_site, u_flip, hist):
    N = sigma.size
    code = 0
    for i in range(N):
        if sigma[i] > 0:
            code |= 1 << i
    for k in range(u_site.size):
        x = int(u_site[k] * N)
        if x >= N:
            x = N - 1
        S = fld[x]
        for j in range(4):
            y = nbr[x, j]
            if y >= 0:
                S += sigma[y]
        si = 1 if sigma[x] > 0 else 0
        if u_flip[k] < table[si, S + 4]:
            sigma[x] = -sigma[x]
            code ^= 1 << x
        hist[code] += 1


def random_scan_step(state: ChainState, fam: RateFamily, bc: BoundaryCondition, rng=None, u=None) -> ChainState:
    """One random-scan update; returns a new state.

    ``u = (u_site, u_flip)`` fixes the two uniforms, otherwise they are drawn
    from ``rng`` (a numpy Generator).
    """
    if u is None:
        u = rng.random(2)
    sigma = state.sigma.copy()
    N = sigma.size
    x = min(int(u[0] * N), N - 1)
    if u[1] < flip_rate(fam, x, sigma, bc):
        sigma[x] = -sigma[x]
    return ChainState(sigma, state.sweeps + 1.0 / N)


class GlauberChain:
    """Random-scan Glauber chain driven by an addressed random stream.

    Parameters
    ----------
    bc : BoundaryCondition
    fam : RateFamily
    rng : int or RandomSource
    sigma0 : array, optional
        Initial configuration; all plus by default.
    chain_id : int
        Selects an independent stream for replica chains.
    """

    def __init__(self, bc, fam: RateFamily, rng, sigma0=None, chain_id: int = 0):
        self.bc, self.fam = bc, fam
        self.lat = bc.lattice
        N = self.lat.n_sites
        self.sigma = np.ones(N, np.int8) if sigma0 is None else np.array(sigma0, dtype=np.int8)
        self.sweeps = 0.0
        self._gen = as_source(rng).generator("glauber", chain_id)
        self._nbr = bc.ising_neighbors
        self._fld = bc.field.astype(np.int64)
        self._table = fam.table

    @property
    def state(self) -> ChainState:
        return ChainState(self.sigma.copy(), self.sweeps)

    def run(self, sweeps: float) -> None:
        steps = int(round(sweeps * self.lat.n_sites))
        chunk = 1 << 20
        while steps > 0:
            k = min(steps, chunk)
            u = self._gen.random((2, k))
            _random_scan(self.sigma, self._nbr, self._fld, self._table, u[0], u[1])
            steps -= k
        self.sweeps += sweeps

    def trajectory(self, n_sweeps: int, stride: float = 1.0) -> np.ndarray:
        """Run and record ``(sweep, magnetization, energy)`` every ``stride`` sweeps.

        Energy is the Hamiltonian ``-sum sigma(u) sigma(v)``.
        """
        n_rec = int(n_sweeps / stride)
        out = np.empty((n_rec, 3))
        ie = self.lat.edges
        ie = ie[(ie[:, 0] < self.lat.n_sites) & (ie[:, 1] < self.lat.n_sites)]
        for i in range(n_rec):
            self.run(stride)
            s = self.sigma.astype(np.int64)
            out[i] = (self.sweeps, s.sum(), -(np.sum(s[ie[:, 0]] * s[ie[:, 1]]) + s @ self._fld))
        return out

    def magnetization_series(self, n_sweeps: int, stride: float = 1.0) -> np.ndarray:
        return self.trajectory(n_sweeps, stride)[:, 1]

    def visit_histogram(self, n_steps: int) -> np.ndarray:
        """Counts of configuration codes visited over ``n_steps`` single updates."""
        N = self.lat.n_sites
        if N > MAX_GENERATOR_SITES:
            raise EnumerationError("histogram needs an enumerable state space")
        hist = np.zeros(1 << N, np.int64)
        chunk = 1 << 20
        left = n_steps
        while left > 0:
            k = min(left, chunk)
            u = self._gen.random((2, k))
            _random_scan_histogram(self.sigma, self._nbr, self._fld, self._table, u[0], u[1], hist)
            left -= k
        self.sweeps += n_steps / N
        return hist


def write_trajectory(path, traj: np.ndarray) -> None:
    np.savetxt(path, traj, delimiter=",", header="sweep,magnetization,energy", comments="", fmt=["%.6g", "%d", "%d"])


# ----------------------------------------------------------------------
# exact generator and Dirichlet form on enumerable lattices
# ----------------------------------------------------------------------
def rate_matrix(lat: Lattice, bc: BoundaryCondition, fam: RateFamily) -> np.ndarray:
    """``rates[code, x]`` = flip rate at site ``x`` in configuration ``code``."""
    N = lat.n_sites
    codes = np.arange(1 << N)
    spins = (((codes[:, None] >> np.arange(N)) & 1) * 2 - 1).astype(np.int64)
    S = np.tile(bc.field, (len(codes), 1))
    nb = bc.ising_neighbors
    for k in range(4):
        col = nb[:, k]
        ok = col >= 0
        S[:, ok] += spins[:, col[ok]]
    return fam.table[(spins + 1) // 2, S + 4]


def generator_matrix(lat: Lattice, bc: BoundaryCondition, fam: RateFamily) -> np.ndarray:
    """Dense generator ``L`` with ``L[s, s^x] = c(x, s)`` and zero row sums."""
    N = lat.n_sites
    if N > MAX_GENERATOR_SITES:
        raise EnumerationError(f"{N} sites exceed the generator cap of {MAX_GENERATOR_SITES}")
    rates = rate_matrix(lat, bc, fam)
    K = 1 << N
    codes = np.arange(K)
    L = np.zeros((K, K))
    for x in range(N):
        L[codes, codes ^ (1 << x)] = rates[:, x]
    L[codes, codes] = -rates.sum(axis=1)
    return L


def _symmetrized(lat, bc, fam):
    L = generator_matrix(lat, bc, fam)
    h = all_interactions(lat, bc).astype(np.float64) * fam.beta
    mu = np.exp(h - h.max())
    mu /= mu.sum()
    s = np.sqrt(mu)
    A = -(s[:, None] * L / s[None, :])
    return 0.5 * (A + A.T), mu


def generator_spectrum(lat: Lattice, bc: BoundaryCondition, fam: RateFamily) -> np.ndarray:
    """Eigenvalues of ``-L`` in increasing order (real by reversibility)."""
    A, _ = _symmetrized(lat, bc, fam)
    return scipy.linalg.eigh(A, eigvals_only=True)


def exact_generator_gap(lat: Lattice, bc: BoundaryCondition, fam: RateFamily) -> float:
    """Smallest nonzero eigenvalue of ``-L``."""
    ev = generator_spectrum(lat, bc, fam)
    return float(ev[1])


def exact_mixing_time(lat: Lattice, bc: BoundaryCondition, fam: RateFamily, eps: float = 1.0 / (2 * np.e)) -> float:
    """Continuous-time ``t_mix(eps)``: worst start, TV to ``mu``, by bisection."""
    A, mu = _symmetrized(lat, bc, fam)
    lam, V = scipy.linalg.eigh(A)
    s = np.sqrt(mu)

    def dist(t):
        # P_t = D^{-1/2} V e^{-lam t} V^T D^{1/2}
        Pt = (V * np.exp(-lam * t)) @ V.T
        Pt = Pt / s[:, None] * s[None, :]
        return 0.5 * np.abs(Pt - mu[None, :]).sum(axis=1).max()

    lo, hi = 0.0, 1.0
    while dist(hi) > eps:
        hi *= 2.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if dist(mid) > eps:
            lo = mid
        else:
            hi = mid
    return hi


def mixing_time_bound(gap: float, mu_min: float) -> float:
    """Upper bound ``gap^{-1} log(e / mu_min)`` on ``t_mix``."""
    return float(np.log(np.e / mu_min) / gap)


def _function_values(f, dist: ExactDistribution) -> np.ndarray:
    if callable(f):
        return np.array([f(c) for c in dist.configs()], dtype=np.float64)
    v = np.asarray(f, dtype=np.float64)
    if v.shape != dist.probs.shape:
        raise ValueError("function table must have one value per configuration")
    return v


def dirichlet_form(f, dist: ExactDistribution, fam: RateFamily) -> float:
    """``0.5 * sum_{sigma, x} mu(sigma) c(x, sigma) [f(sigma^x) - f(sigma)]^2``.

    ``f`` is a callable on spin arrays or a vector indexed by configuration
    code; ``dist`` must carry its lattice and boundary condition.
    """
    if dist.lattice is None or dist.bc is None:
        raise ValueError("distribution does not record its lattice and boundary condition")
    v = _function_values(f, dist)
    rates = rate_matrix(dist.lattice, dist.bc, fam)
    codes = np.arange(len(v))
    total = 0.0
    for x in range(dist.nbits):
        total += np.sum(dist.probs * rates[:, x] * (v[codes ^ (1 << x)] - v) ** 2)
    return 0.5 * float(total)


def variance(f, dist: ExactDistribution) -> float:
    v = _function_values(f, dist)
    m = np.dot(dist.probs, v)
    return float(np.dot(dist.probs, (v - m) ** 2))


def variational_gap(dist: ExactDistribution, fam: RateFamily) -> float:
    """``inf E(f)/Var(f)`` over all non-constant ``f``, via a generalized eigenproblem."""
    K = len(dist.probs)
    rates = rate_matrix(dist.lattice, dist.bc, fam)
    codes = np.arange(K)
    D = np.zeros((K, K))
    for x in range(dist.nbits):
        w = 0.5 * dist.probs * rates[:, x]
        j = codes ^ (1 << x)
        D[codes, codes] += w
        D[j, j] += w
        D[codes, j] -= w
        D[j, codes] -= w
    mu = dist.probs
    Vm = np.diag(mu) - np.outer(mu, mu)
    # orthonormal basis of the complement of constants
    Q = scipy.linalg.null_space(np.ones((1, K)))
    ev = scipy.linalg.eigh(Q.T @ D @ Q, Q.T @ Vm @ Q, eigvals_only=True)
    return float(ev[0])


# ----------------------------------------------------------------------
# autocorrelation-based gap estimate
# ----------------------------------------------------------------------
class FitFailure(RuntimeError):
    """Autocorrelation does not decay in a way an exponential can describe."""


@dataclass
class DecayFit:
    rate: float
    stderr: float
    lags: np.ndarray
    rho: np.ndarray

    def __iter__(self):
        return iter((self.rate, self.stderr))


def autocorrelation(x: np.ndarray, max_lag: int) -> np.ndarray:
    """Normalized autocorrelation ``rho(0..max_lag)`` via FFT."""
    x = np.asarray(x, dtype=np.float64)
    x = x - x.mean()
    n = len(x)
    var = np.dot(x, x) / n
    if var <= 0:
        raise FitFailure("series is constant")
    m = 1 << int(np.ceil(np.log2(2 * n)))
    fx = np.fft.rfft(x, m)
    ac = np.fft.irfft(fx * np.conj(fx), m)[: max_lag + 1]
    ac /= n - np.arange(max_lag + 1)
    return ac / var


def autocorr_gap_estimate(series, dt: float = 1.0, rho_hi: float = 0.6, rho_lo: float = 0.05) -> DecayFit:
    """Fit ``rho(t) ~ A exp(-lambda t)`` on the tail of the autocorrelation.

    The fit uses lags where ``rho`` lies between ``rho_lo`` and ``rho_hi``
    and is still above twice its noise level, so fast modes that dominate
    the first few lags are mostly excluded. Returns ``DecayFit`` (iterable
    as ``(rate, stderr)``), the rate in inverse units of ``dt``.
    """
    x = np.asarray(series, dtype=np.float64)
    n = len(x)
    if n < 20:
        raise FitFailure("series too short")
    max_lag = max(2, n // 10)
    rho = autocorrelation(x, max_lag)
    noise = 2.0 / np.sqrt(n)
    # first lag where the correlation is lost in the noise or crosses zero
    stop = np.flatnonzero((rho[1:] <= max(rho_lo, noise)))
    end = int(stop[0]) + 1 if len(stop) else max_lag + 1
    lags = np.arange(end)
    sel = (lags >= 1) & (rho[:end] <= rho_hi) & (rho[:end] > max(rho_lo, noise))
    if sel.sum() < 3:
        sel = (lags >= 1) & (rho[:end] > max(rho_lo, noise))
    if sel.sum() < 2:
        raise FitFailure("autocorrelation does not show an exponential decay")
    t = lags[sel] * dt
    y = np.log(rho[:end][sel])
    A = np.vstack([np.ones_like(t), -t]).T
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    lam = float(coef[1])
    if not np.isfinite(lam) or lam <= 0:
        raise FitFailure("fitted decay rate is not positive")
    dof = max(1, len(t) - 2)
    s2 = float(np.sum((y - A @ coef) ** 2)) / dof
    cov = s2 * np.linalg.inv(A.T @ A)
    # sampling noise of rho itself (Bartlett-style, 1/sqrt(n)) as a floor
    se = float(np.sqrt(cov[1, 1] + (1.0 / np.sqrt(n) / (t[-1] - t[0] + dt)) ** 2 * 4))
    return DecayFit(lam, se, lags[sel], rho[:end][sel])


def sweep_rate_to_generator(rate_per_sweep: float, n_sites: int) -> float:
    """Convert a random-scan decay rate per sweep to the continuous-time eigenvalue.

    One sweep applies ``(I + L/N)^N``, so a mode with eigenvalue ``lambda``
    decays per sweep as ``(1 - lambda/N)^N``.
    """
    return float(n_sites * (1.0 - np.exp(-rate_per_sweep / n_sites)))
