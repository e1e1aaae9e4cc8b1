"""Observables behind the critical lower bound on the relaxation time.

The test function is the magnetization ``f`` over the central square
``Lambda* = [ceil(n/4), floor(3n/4)]^2``. Its variance grows like
``n^{15/4}`` at criticality while its Dirichlet form is at most of order
``n^2``, so ``Var(f) / E(f)`` bounds ``1/gap`` from below.

Variances come from the cluster (improved) estimator on FK samples: given
the bonds, spins of distinct free clusters are independent and fair, so
``E[f^2 | omega] = sum_C n_C^2`` with ``n_C = |C cap Lambda*|``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .es import ConditionedFKSampler, wiring_from_bc
from .fk import EMPTY_WIRING, FKChain, beta_to_p, count_clusters, fk_graph
from .glauber import GlauberChain, RateFamily
from .ising import BETA_C, ExactDistribution
from .lattice import BoundaryCondition, Lattice, build_box
from .rng import as_source
from .stats import ScalingFit, batch_stderr, fit_power_law


def lambda_star(n: int) -> tuple:
    """Bounds ``(lo, hi)`` of the central square ``[lo, hi]^2``."""
    return int(math.ceil(n / 4)), int(math.floor(3 * n / 4))


def lambda_star_sites(lat: Lattice) -> np.ndarray:
    lo, hi = lambda_star(lat.r)
    loy, hiy = lambda_star(lat.rp)
    return lat.sub_rectangle_sites(lo, hi, loy, hiy)


@dataclass
class VarianceEstimate:
    n: int
    var: float
    var_err: float
    dirichlet: float
    dirichlet_err: float
    samples: int
    lipschitz_ok: bool = True

    @property
    def ratio(self) -> float:
        return self.var / self.dirichlet

    @property
    def ratio_err(self) -> float:
        return self.ratio * math.hypot(self.var_err / self.var, self.dirichlet_err / self.dirichlet)


def _heat_bath_rates(sigma, bc, beta, sites):
    nb = bc.ising_neighbors[sites]
    s = sigma.astype(np.int64)
    S = bc.field[sites] + np.where(nb >= 0, s[np.maximum(nb, 0)], 0).sum(axis=1)
    return 1.0 / (1.0 + np.exp(2.0 * beta * s[sites] * S))


def estimate_variance(n: int, bc_spec: str = "free", samples: int = 2000, rng=0, beta: float = BETA_C,
                      burnin: int = 200, thin: int = 1) -> VarianceEstimate:
    """``Var(f)`` and the heat-bath Dirichlet form ``E(f)`` on an ``n x n`` box.

    Free (or periodic) boundaries use a heat-bath FK chain; boxes with
    fixed boundary spins are sampled through the conditioned FK measure
    (exact on enumerable boxes, rejection otherwise).
    """
    lat, bc = build_box(n, n, bc_spec)
    src = as_source(rng)
    p = beta_to_p(beta)
    star = lambda_star_sites(lat)
    N = lat.n_sites
    in_star = np.zeros(lat.n_bar, bool)
    in_star[star] = True
    graph = fk_graph(lat, bc)
    wiring = wiring_from_bc(bc)
    fixed = bool(wiring.plus or wiring.minus)
    if fixed:
        sampler = ConditionedFKSampler(lat, bc, p, src, burnin=burnin, spacing=thin)

        def draw():
            return sampler.sample(1)[0]
    else:
        chain = FKChain(graph, EMPTY_WIRING, p, src, np.zeros(graph.n_edges, np.int8), purpose="variance")
        chain.sweep(burnin)

        def draw():
            chain.sweep(thin)
            return chain.omega

    second = np.empty(samples)
    first = np.empty(samples)
    dform = np.empty(samples)
    for i in range(samples):
        om = draw()
        _, cs = count_clusters(om, graph, wiring)
        lab = cs.labels
        nC = np.bincount(lab[star], minlength=lat.n_bar).astype(float)
        if fixed:
            sgn = np.zeros(lat.n_bar)
            for v in wiring.plus:
                sgn[lab[v]] = 1.0
            for v in wiring.minus:
                sgn[lab[v]] = -1.0
            fixed_part = float(np.dot(sgn, nC))
            second[i] = float(np.sum(nC[sgn == 0] ** 2)) + fixed_part**2
            first[i] = fixed_part
        else:
            second[i] = float(np.sum(nC**2))
            first[i] = 0.0
        u = src.uniforms("cluster-spin", i, size=lat.n_bar)
        spins = np.where(u[lab] < 0.5, 1, -1).astype(np.int8)
        if fixed:
            for v in wiring.plus:
                spins[lab == lab[v]] = 1
            for v in wiring.minus:
                spins[lab == lab[v]] = -1
        dform[i] = 2.0 * float(_heat_bath_rates(spins[:N], bc, beta, star).sum())
    var = float(second.mean() - first.mean() ** 2)
    var_err = batch_stderr(second)
    ef = float(dform.mean())
    return VarianceEstimate(n, var, var_err, ef, batch_stderr(dform), samples,
                            bool(np.all(dform <= 4 * n * n)))


@dataclass
class ScalingReport:
    estimates: list
    var_fit: ScalingFit
    ratio_fit: ScalingFit


def variance_scaling(n_list, bc_spec: str = "free", samples: int = 2000, rng=0, beta: float = BETA_C,
                     burnin: int = 200, thin: int = 1) -> ScalingReport:
    """Fits of ``log Var(f)`` and ``log Var(f)/E(f)`` against ``log n``."""
    if len(n_list) < 3:
        raise ValueError("a scaling fit needs at least three sizes")
    src = as_source(rng)
    ests = [estimate_variance(n, bc_spec, samples, src.spawn(n), beta, burnin, thin) for n in n_list]
    ns = np.array([e.n for e in ests], float)
    vf = fit_power_law(ns, [e.var for e in ests], [e.var_err for e in ests])
    rf = fit_power_law(ns, [e.ratio for e in ests], [e.ratio_err for e in ests])
    return ScalingReport(ests, vf, rf)


def gap_lower_bound_check(n_list, bc_spec: str = "free", samples: int = 2000, rng=0, beta: float = BETA_C,
                          burnin: int = 200, thin: int = 1) -> ScalingFit:
    """Slope of ``log(Var(f)/E(f))``: a lower-bound exponent for ``1/gap``."""
    return variance_scaling(n_list, bc_spec, samples, rng, beta, burnin, thin).ratio_fit


def exact_variance_ratio(dist: ExactDistribution, fam: RateFamily) -> float:
    """``Var(f)/E(f)`` for the magnetization over ``Lambda*`` on an enumerable box."""
    from .glauber import dirichlet_form, variance

    star = lambda_star_sites(dist.lattice)
    vals = dist.configs()[:, star].sum(axis=1).astype(float)
    return variance(vals, dist) / dirichlet_form(vals, dist, fam)


# ----------------------------------------------------------------------
# spin autocorrelation of Glauber dynamics
# ----------------------------------------------------------------------
@njit(cache=True)
def _autocorr_chunk(sigma, nbr, fld, table, U, ring, t0, lags, every, acc, cnt):
    N = sigma.size
    R = ring.shape[0]
    nsw = U.shape[0]
    for s in range(nsw):
        for k in range(N):
            x = int(U[s, 0, k] * N)
            if x >= N:
                x = N - 1
            S = fld[x]
            for j in range(4):
                y = nbr[x, j]
                if y >= 0:
                    S += sigma[y]
            si = 1 if sigma[x] > 0 else 0
            if U[s, 1, k] < table[si, S + 4]:
                sigma[x] = -sigma[x]
        t = t0 + s
        slot = t % R
        for i in range(N):
            ring[slot, i] = sigma[i]
        if t % every == 0:
            for li in range(lags.size):
                L = lags[li]
                if t >= L:
                    old = (t - L) % R
                    d = 0
                    for i in range(N):
                        d += ring[slot, i] * ring[old, i]
                    acc[li] += d / N
                    cnt[li] += 1


@dataclass
class AutocorrFit:
    exponent: float
    stderr: float
    lags: np.ndarray
    corr: np.ndarray
    corr_err: np.ndarray
    power_chi2: float
    exp_chi2: float
    exp_rate: float
    window: tuple = ()
    extra: dict = field(default_factory=dict)

    @property
    def model(self) -> str:
        return "power" if self.power_chi2 <= self.exp_chi2 else "exponential"

    @property
    def power_law_rejected(self) -> bool:
        return self.model != "power"


class FitWindowError(RuntimeError):
    """Too few lags with a resolvable correlation inside the fit window."""


def spin_autocorrelation(n: int, bc_spec: str = "periodic", sweeps: int = 100_000, rng=0, beta: float = BETA_C,
                         lags=None, every: int = 4, burnin: int | None = None, batches: int = 10):
    """``C(t) = mean_x E[sigma_x(s) sigma_x(s+t)]`` for random-scan heat-bath dynamics.

    Returns ``(lags, C, stderr)`` with batch-means standard errors.
    """
    lat, bc = build_box(n, n, bc_spec)
    lags = np.asarray(lags if lags is not None else default_lags(n), np.int64)
    fam = RateFamily("heat-bath", beta)
    ch = GlauberChain(bc, fam, rng, np.ones(lat.n_sites, np.int8))
    ch.run(burnin if burnin is not None else 10 * n * n)
    N = lat.n_sites
    R = int(lags.max()) + 1
    ring = np.zeros((R, N), np.int8)
    gen = as_source(rng).generator("autocorr")
    per_batch = sweeps // batches
    chunk = max(1, min(per_batch, (1 << 22) // (2 * N)))
    C = np.zeros((batches, len(lags)))
    t = 0
    for b in range(batches):
        acc = np.zeros(len(lags))
        cnt = np.zeros(len(lags), np.int64)
        done = 0
        while done < per_batch:
            k = min(chunk, per_batch - done)
            U = gen.random((k, 2, N))
            _autocorr_chunk(ch.sigma, ch._nbr, ch._fld, ch._table, U, ring, t, lags, every, acc, cnt)
            t += k
            done += k
        C[b] = acc / np.maximum(cnt, 1)
    return lags, C.mean(axis=0), C.std(axis=0, ddof=1) / np.sqrt(batches)


def default_lags(n: int, t_min: int = 4, count: int = 12) -> np.ndarray:
    t_max = max(t_min + 2, n * n // 16)
    return np.unique(np.round(np.geomspace(t_min, t_max, count)).astype(np.int64))


def fit_autocorrelation(lags, C, err, min_points: int = 3) -> AutocorrFit:
    """Weighted fits of ``log C`` against ``log t`` (power) and ``t`` (exponential)."""
    lags = np.asarray(lags, float)
    ok = C > 3 * err
    if ok.sum() < min_points:
        raise FitWindowError(f"only {int(ok.sum())} lags carry a resolvable correlation")
    t, c, e = lags[ok], C[ok], err[ok]
    y = np.log(c)
    w = (c / e) ** 2

    def wls(x):
        X = np.vstack([np.ones_like(x), x]).T
        cov = np.linalg.inv(X.T @ (X * w[:, None]))
        coef = cov @ (X * w[:, None]).T @ y
        chi2 = float(np.sum(w * (y - X @ coef) ** 2))
        dof = max(1, len(x) - 2)
        return coef, float(np.sqrt(cov[1, 1] * max(1.0, chi2 / dof))), chi2 / dof

    (a1, b1), se1, chi_p = wls(np.log(t))
    (a2, b2), _, chi_e = wls(t)
    return AutocorrFit(-float(b1), se1, lags, C, err, chi_p, chi_e, -float(b2), (float(t[0]), float(t[-1])))


def autocorr_exponent(n: int, bc_spec: str = "periodic", sweeps: int = 100_000, rng=0, beta: float = BETA_C,
                      lags=None, every: int = 4, burnin: int | None = None) -> AutocorrFit:
    """Power of the decay of the spin autocorrelation over the lag window ``[4, n^2/16]``."""
    lg, C, err = spin_autocorrelation(n, bc_spec, sweeps, rng, beta, lags, every, burnin)
    return fit_autocorrelation(lg, C, err)


# ----------------------------------------------------------------------
# antiferromagnetic reduction
# ----------------------------------------------------------------------
def odd_sites(lat: Lattice) -> np.ndarray:
    c = lat.coords
    return (c[:, 0] + c[:, 1]) % 2 == 1


def antiferro_map(sigma, bc: BoundaryCondition):
    """Negate spins at odd sites (``x + y`` odd), boundary spins included."""
    lat = bc.lattice
    odd = odd_sites(lat)
    s = np.array(sigma, dtype=np.int8)
    s[odd[: lat.n_sites]] *= -1
    v = bc.values.copy()
    v[odd[lat.n_sites:]] *= -1
    return s, bc.with_values(v, label=f"staggered({bc.label})")


def antiferro_transport_error(lat: Lattice, bc: BoundaryCondition, beta: float = BETA_C) -> float:
    """``max |mu_{-beta}^{bc}(sigma) - mu_{beta}^{map bc}(map sigma)|`` over all configurations."""
    from .ising import encode, gibbs_exact

    neg = gibbs_exact(lat, bc, -beta)
    _, mbc = antiferro_map(np.ones(lat.n_sites, np.int8), bc)
    pos = gibbs_exact(lat, mbc, beta)
    worst = 0.0
    for code, cfg in enumerate(neg.configs()):
        m, _ = antiferro_map(cfg, bc)
        worst = max(worst, abs(neg.probs[code] - pos.probs[encode(m)]))
    return worst


def dual_disconnect_magnetization(n: int, bc_spec: str, samples: int = 1000, rng=0, beta: float = BETA_C,
                                  burnin: int = 200, inner_side: int | None = None) -> tuple:
    """Mean spin at the centre over samples where a central square is cut off from the boundary.

    The square has side ``inner_side`` (default ``max(1, n // 4)``) and
    contains the centre site. Returns ``(mean, stderr, count)``. Spins of clusters that avoid the
    boundary are fair, so the mean should vanish.
    """
    from .crossing import Rect, dual_disconnect

    lat, bc = build_box(n, n, bc_spec)
    p = beta_to_p(beta)
    src = as_source(rng)
    sampler = ConditionedFKSampler(lat, bc, p, src, burnin=burnin)
    side = max(1, n // 4) if inner_side is None else int(inner_side)
    c = (n + 1) // 2
    lo = max(2, c - (side - 1) // 2)
    hi = min(n - 1, lo + side - 1)
    inner = Rect(lo, hi, lo, hi)
    wiring = sampler.wiring
    centre = lat.index(c, c)
    vals = []
    for i in range(samples):
        om = sampler.sample(1)[0]
        if dual_disconnect(om, sampler.graph, inner, bc):
            _, cs = count_clusters(om, sampler.graph, wiring)
            u = src.uniforms("cluster-spin", i, size=lat.n_bar)
            vals.append(1.0 if u[cs.labels[centre]] < 0.5 else -1.0)
    v = np.array(vals)
    if len(v) < 2:
        return float("nan"), float("nan"), len(v)
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(len(v))), len(v)

