"""Experiment orchestration: validated configs, a registry and persisted reports.

An experiment is a pure function of its :class:`ExperimentConfig`. Its
rows go to a CSV file with a one-line header; a ``key = value`` manifest
beside it records the configuration, the package version, summary
statistics and the wall time. Both files are written atomically.
"""

from __future__ import annotations

import csv
import io
import math
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .ising import BETA_C
from .lattice import build_box

THREADS_ENV = "ISING_LAB_THREADS"


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


# ----------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------
def _int_list(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    return tuple(int(v) for v in str(text).replace(",", " ").split())


def _float_list(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    return tuple(float(v) for v in str(text).replace(",", " ").split())


def parse_size(text: str) -> tuple:
    """``"R"`` or ``"RxR'"`` to ``(R, R')``."""
    parts = str(text).lower().split("x")
    try:
        vals = [int(p) for p in parts]
    except ValueError:
        raise ConfigError(f"bad size {text!r}; expected R or RxR'") from None
    if len(vals) == 1:
        vals = vals * 2
    if len(vals) != 2 or min(vals) < 1:
        raise ConfigError(f"bad size {text!r}")
    return tuple(vals)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything an experiment run depends on.

    ``sizes``, ``rhos``, ``sweeps``, ``reps``, ``rho``, ``xi``, ``eta``,
    ``ell``, ``coupling`` and ``thin`` are consulted only by the
    experiments that need them.
    """

    experiment: str
    size: tuple = (4, 4)
    bc: str = "free"
    beta: float = BETA_C
    seed: int = 0
    samples: int = 1000
    burnin: int = 200
    out: str = "results.csv"
    sizes: tuple = ()
    rhos: tuple = (1.0, 2.0, 3.0)
    rho: float = 1.0
    sweeps: int = 100_000
    reps: int = 30
    xi: str = "bottom:-,else:+"
    eta: str = "all:+"
    ell: int = 1
    coupling: str = "maximal"
    thin: int = 1

    def validate(self) -> "ExperimentConfig":
        if self.experiment not in REGISTRY:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {', '.join(sorted(REGISTRY))}")
        r, rp = self.size
        if r < 1 or rp < 1:
            raise ConfigError("lattice dimensions must be positive")
        if not math.isfinite(self.beta):
            raise ConfigError("beta must be finite")
        if self.seed < 0 or self.seed >= 1 << 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        for name in ("samples", "sweeps", "reps", "thin", "ell"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.burnin < 0:
            raise ConfigError("burnin must be non-negative")
        if self.coupling not in ("maximal", "monotone"):
            raise ConfigError("coupling must be 'maximal' or 'monotone'")
        try:
            build_box(r, rp, self.bc)
            if self.experiment == "couple":
                build_box(r, rp, self.xi)
                build_box(r, rp, self.eta)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.experiment in ("var-scale", "gap-lb") and len(self.sizes) < 3:
            raise ConfigError(f"{self.experiment} needs at least three sizes")
        return self

    @property
    def manifest_path(self) -> Path:
        return Path(self.out).with_suffix(".manifest")

    def items(self) -> list:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "size":
                v = f"{v[0]}x{v[1]}"
            elif isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            out.append((f.name, str(v)))
        return out


_CONVERT = {
    "experiment": str, "size": parse_size, "bc": str, "beta": float, "seed": int, "samples": int,
    "burnin": int, "out": str, "sizes": _int_list, "rhos": _float_list, "rho": float, "sweeps": int,
    "reps": int, "xi": str, "eta": str, "ell": int, "coupling": str, "thin": int,
}


def make_config(**kw) -> ExperimentConfig:
    """Build and validate a config from loosely typed keyword values."""
    vals = {}
    for k, v in kw.items():
        if v is None:
            continue
        if k not in _CONVERT:
            raise ConfigError(f"unknown config key {k!r}")
        try:
            vals[k] = _CONVERT[k](v)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {k}: {v!r}") from exc
    if "experiment" not in vals:
        raise ConfigError("config needs an experiment name")
    return ExperimentConfig(**vals).validate()


def config_entries(text: str) -> dict:
    """Raw ``key -> value`` strings of flat ``key = value`` text; ``#`` starts a comment."""
    kw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        if k in kw:
            raise ConfigError(f"line {lineno}: duplicate key {k!r}")
        kw[k] = v
    return kw


def parse_config(text: str) -> ExperimentConfig:
    return make_config(**config_entries(text))


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def format_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in cfg.items())


# ----------------------------------------------------------------------
# results and persistence
# ----------------------------------------------------------------------
@dataclass
class Table:
    columns: list
    rows: list
    summary: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            vals = [row[c] for c in self.columns] if isinstance(row, dict) else row
            w.writerow([_fmt(v) for v in vals])
        return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def atomic_write(path, text: str) -> None:
    """Write through a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def code_version() -> str:
    from . import __version__

    return __version__


@dataclass
class Report:
    config: ExperimentConfig
    table: Table
    csv_path: Path
    manifest_path: Path
    wall_time: float


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> Report:
    """Validate, run and persist one experiment.

    Sampler failures propagate unchanged; nothing is written for a run
    that raised.
    """
    cfg.validate()
    t0 = time.perf_counter()
    table = REGISTRY[cfg.experiment](cfg)
    wall = time.perf_counter() - t0
    rep = Report(cfg, table, Path(cfg.out), cfg.manifest_path, wall)
    if write:
        atomic_write(rep.csv_path, table.to_csv())
        lines = [f"{k} = {v}" for k, v in cfg.items()]
        lines.append(f"code_version = {code_version()}")
        lines += [f"summary.{k} = {_fmt(v)}" for k, v in table.summary.items()]
        lines.append(f"wall_time = {wall:.3f}")
        atomic_write(rep.manifest_path, "\n".join(lines) + "\n")
    return rep


def max_workers() -> int:
    """Parallel chain cap from ``ISING_LAB_THREADS`` (default 1)."""
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def parallel_map(fn, items) -> list:
    """Map over independent jobs; results come back in input order.

    Each job owns its random stream, so the answer does not depend on the
    number of workers.
    """
    items = list(items)
    k = min(max_workers(), len(items))
    if k <= 1:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=k) as ex:
        futs = [ex.submit(fn, *it) for it in items]
        return [f.result() for f in futs]


# ----------------------------------------------------------------------
# experiments
# ----------------------------------------------------------------------
def _box(cfg):
    return build_box(cfg.size[0], cfg.size[1], cfg.bc)


def exp_exact_check(cfg) -> Table:
    from .glauber import (RateFamily, exact_generator_gap, exact_mixing_time, generator_matrix,
                          mixing_time_bound, variational_gap)
    from .ising import gibbs_exact

    lat, bc = _box(cfg)
    dist = gibbs_exact(lat, bc, cfg.beta)
    rows = []
    for kind in ("heat-bath", "metropolis"):
        fam = RateFamily(kind, cfg.beta)
        L = generator_matrix(lat, bc, fam)
        stat = float(np.max(np.abs(dist.probs @ L)))
        gap = exact_generator_gap(lat, bc, fam)
        tm = exact_mixing_time(lat, bc, fam)
        rows.append([kind, gap, variational_gap(dist, fam), stat, tm,
                     mixing_time_bound(gap, float(dist.probs.min()))])
    cols = ["rates", "gap", "variational_gap", "stationarity_residual", "t_mix", "t_mix_bound"]
    return Table(cols, rows, {"states": dist.probs.size})


def exp_sample(cfg) -> Table:
    from .glauber import GlauberChain, RateFamily

    lat, bc = _box(cfg)
    ch = GlauberChain(bc, RateFamily("heat-bath", cfg.beta), cfg.seed)
    ch.run(cfg.burnin)
    traj = ch.trajectory(cfg.samples * cfg.thin, cfg.thin)
    rows = [[float(s), int(m), int(e)] for s, m, e in traj]
    return Table(["sweep", "magnetization", "energy"], rows,
                 {"mean_abs_magnetization": float(np.abs(traj[:, 1]).mean()) / lat.n_sites})


def exp_fk_sample(cfg) -> Table:
    from .crossing import vertical_crossing
    from .es import wiring_from_bc
    from .fk import FKChain, beta_to_p, count_clusters, fk_graph

    lat, bc = _box(cfg)
    graph, wiring = fk_graph(lat, bc), wiring_from_bc(bc)
    chain = FKChain(graph, wiring, beta_to_p(cfg.beta), cfg.seed)
    chain.sweep(cfg.burnin)
    rows = []
    for i in range(cfg.samples):
        chain.sweep(cfg.thin)
        k, _ = count_clusters(chain.omega, graph, wiring)
        rows.append([chain.sweeps, int(chain.omega.sum()), k, int(vertical_crossing(chain.omega, graph))])
    dens = float(np.mean([r[1] for r in rows])) / max(graph.n_edges, 1)
    return Table(["sweep", "open_edges", "clusters", "vertical_crossing"], rows, {"open_density": dens})


def _cftp_size(n, bc_spec, reps, seed, beta):
    from .cftp import cftp_run
    from .rng import RandomSource

    lat, bc = build_box(n, n, bc_spec)
    src = RandomSource(seed).spawn(n)
    out = []
    for k in range(reps):
        run = cftp_run(lat, bc, beta, src, k)
        out.append([n, k, run.sweeps_to_coalesce, run.total_updates, int(run.result.sum()), run.violations])
    return out


def exp_cftp(cfg) -> Table:
    from .stats import fit_power_law

    sizes = cfg.sizes or (cfg.size[0],)
    parts = parallel_map(_cftp_size, [(n, cfg.bc, cfg.reps, cfg.seed, cfg.beta) for n in sizes])
    rows = [r for part in parts for r in part]
    summary = {}
    if len(sizes) >= 3:
        means = [np.mean([r[2] for r in part]) for part in parts]
        ses = [np.std([r[2] for r in part], ddof=1) / math.sqrt(cfg.reps) for part in parts]
        fit = fit_power_law(sizes, means, np.maximum(ses, 1e-3 * np.array(means)))
        summary = {"exponent": fit.exponent, "exponent_stderr": fit.stderr}
    cols = ["n", "run", "sweeps_to_coalesce", "updates", "magnetization", "order_violations"]
    return Table(cols, rows, summary)


def exp_crossing(cfg) -> Table:
    from .crossing import estimate_crossing
    from .fk import beta_to_p

    sizes = cfg.sizes or (cfg.size[0],)
    rows = []
    for n in sizes:
        dims = (n, n) if cfg.sizes else cfg.size
        rep = estimate_crossing(dims, cfg.bc, beta_to_p(cfg.beta), cfg.samples, _child(cfg.seed, n),
                                cfg.burnin, cfg.thin)
        rows.append([dims[0], dims[1], cfg.bc, rep.p, rep.samples, rep.estimate, rep.stderr, rep.burnin,
                     int(rep.equilibrated)])
    cols = ["r", "r_prime", "bc", "p", "samples", "estimate", "stderr", "burnin_used", "equilibrated"]
    return Table(cols, rows)


def _child(seed, i):
    from .rng import RandomSource

    return RandomSource(seed).spawn(i)


def exp_strip_decay(cfg) -> Table:
    from .crossing import strip_decay_profile
    from .fk import beta_to_p

    reps = strip_decay_profile(cfg.size[0], cfg.rhos, cfg.bc, cfg.samples, cfg.seed, beta_to_p(cfg.beta),
                               cfg.burnin, cfg.thin)
    rows = [[rep.dims[0] - 2, rho, rep.dims[1], cfg.bc, rep.samples, rep.estimate, rep.stderr]
            for rho, rep in zip(cfg.rhos, reps)]
    return Table(["r", "rho", "height", "bc", "samples", "estimate", "stderr"], rows)


def exp_couple(cfg) -> Table:
    from .exposure import RUN_LOG_COLUMNS, closed_interface, exposure_runs, run_log_row
    from .fk import beta_to_p

    lat, xi = build_box(cfg.size[0], cfg.size[1], cfg.xi)
    _, eta = build_box(cfg.size[0], cfg.size[1], cfg.eta)
    rows = []
    bad_dom = bad_int = 0
    for gc in exposure_runs(lat, xi, eta, cfg.samples, cfg.seed, beta_to_p(cfg.beta)):
        row = run_log_row(gc, cfg.rho)
        if gc.conditioned:
            bad_dom += 1 - row["dominated"]
            bad_int += int(not closed_interface(gc))
        rows.append(row)
    conf = float(np.mean([r["confined(rho)"] for r in rows]))
    return Table(RUN_LOG_COLUMNS, rows, {"confinement_rate": conf, "domination_violations": bad_dom,
                                          "interface_violations": bad_int})


def exp_block_gap(cfg) -> Table:
    from .blocks import block_comparison, block_coupling_probability, make_blocks
    from .glauber import MAX_GENERATOR_SITES, RateFamily

    lat, bc = _box(cfg)
    pair = make_blocks(lat, cfg.ell)
    res = block_coupling_probability(lat, bc, cfg.samples, cfg.seed, cfg.ell, cfg.beta, coupling=cfg.coupling)
    row = {"upper": f"{pair.upper.y0}-{pair.upper.y1}", "lower": f"{pair.lower.y0}-{pair.lower.y1}",
           "coalescence": res.probability, "stderr": res.stderr, "exact": res.exact}
    cols = list(row)
    if lat.n_sites <= MAX_GENERATOR_SITES:
        cmp = block_comparison(lat, bc, [pair.upper, pair.lower], RateFamily("heat-bath", cfg.beta))
        row.update(single_gap=cmp["single_gap"], block_gap=cmp["block_gap"], bound=cmp["bound"],
                   holds=cmp["holds"])
        cols += ["single_gap", "block_gap", "bound", "holds"]
    return Table(cols, [row])


def exp_autocorr(cfg) -> Table:
    from .lowerbound import default_lags, fit_autocorrelation, spin_autocorrelation

    n = cfg.size[0]
    lags = None if cfg.beta != 0 else np.arange(1, 9)
    lags = default_lags(n) if lags is None else lags
    lg, C, err = spin_autocorrelation(n, cfg.bc, cfg.sweeps, cfg.seed, cfg.beta, lags,
                                      burnin=cfg.burnin if cfg.burnin else None)
    fit = fit_autocorrelation(lg, C, err)
    rows = [[int(a), b, c] for a, b, c in zip(lg, C, err)]
    return Table(["lag", "correlation", "stderr"], rows,
                 {"exponent": fit.exponent, "exponent_stderr": fit.stderr, "model": fit.model,
                  "power_chi2": fit.power_chi2, "exp_chi2": fit.exp_chi2})


def _variance_one(n, bc_spec, samples, seed, beta, burnin, thin):
    from .lowerbound import estimate_variance

    return estimate_variance(n, bc_spec, samples, _child(seed, n), beta, burnin, thin)


def _variance_table(cfg, which) -> Table:
    from .stats import fit_power_law

    ests = parallel_map(_variance_one, [(n, cfg.bc, cfg.samples, cfg.seed, cfg.beta, cfg.burnin, cfg.thin)
                                        for n in cfg.sizes])
    rows = [[e.n, e.var, e.var_err, e.dirichlet, e.dirichlet_err, e.ratio, e.ratio_err, int(e.lipschitz_ok)]
            for e in ests]
    if which == "var":
        fit = fit_power_law(cfg.sizes, [e.var for e in ests], [e.var_err for e in ests])
    else:
        fit = fit_power_law(cfg.sizes, [e.ratio for e in ests], [e.ratio_err for e in ests])
    cols = ["n", "var", "var_stderr", "dirichlet", "dirichlet_stderr", "ratio", "ratio_stderr", "lipschitz_ok"]
    return Table(cols, rows, {"slope": fit.slope, "slope_stderr": fit.stderr, "intercept": fit.intercept})


def exp_var_scale(cfg) -> Table:
    return _variance_table(cfg, "var")


def exp_gap_lb(cfg) -> Table:
    return _variance_table(cfg, "ratio")


def exp_antiferro_check(cfg) -> Table:
    from .lowerbound import antiferro_transport_error

    lat, bc = _box(cfg)
    err = antiferro_transport_error(lat, bc, cfg.beta)
    return Table(["r", "r_prime", "bc", "beta", "max_abs_difference"], [[lat.r, lat.rp, cfg.bc, cfg.beta, err]])


REGISTRY = {
    "exact-check": exp_exact_check,
    "sample": exp_sample,
    "fk-sample": exp_fk_sample,
    "cftp": exp_cftp,
    "crossing": exp_crossing,
    "strip-decay": exp_strip_decay,
    "couple": exp_couple,
    "block-gap": exp_block_gap,
    "autocorr": exp_autocorr,
    "var-scale": exp_var_scale,
    "gap-lb": exp_gap_lb,
    "antiferro-check": exp_antiferro_check,
}


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None}).validate()
