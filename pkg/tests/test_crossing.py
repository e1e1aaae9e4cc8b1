import itertools
import json
from pathlib import Path

import numpy as np
import pytest

from isinglab.crossing import (
    Rect,
    dual_disconnect,
    estimate_crossing,
    graph_connectivity,
    strip_decay_profile,
    two_point_connectivity,
    vertical_crossing,
    write_crossing_csv,
)
from isinglab.fk import P_SD, fk_exact, fk_graph, single_edge_graph
from isinglab.lattice import build_box

FIXTURES = Path(__file__).parent / "fixtures"


def _graph(n, m, spec):
    lat, bc = build_box(n, m, spec)
    return lat, bc, fk_graph(lat, bc)


# ----------------------------------------------------------------------
# vertical crossing
# ----------------------------------------------------------------------
def test_all_open_crosses():
    _, _, g = _graph(5, 4, "all:+")
    assert vertical_crossing(np.ones(g.n_edges, np.int8), g)


@pytest.mark.parametrize("spec", ["all:+", "free", "bottom:-,else:+"])
def test_all_closed_does_not_cross(spec):
    _, _, g = _graph(4, 3, spec)
    assert not vertical_crossing(np.zeros(g.n_edges, np.int8), g)


def test_single_open_column_crosses():
    lat, _, g = _graph(5, 6, "all:+")
    xy = lat.coords
    a, b = g.edges[:, 0], g.edges[:, 1]
    column = (xy[a, 0] == 3) & (xy[b, 0] == 3)
    assert vertical_crossing(column.astype(np.int8), g)
    # the ring edges alone never count: connectivity inside the box only
    ring = ~((xy[a, 0] >= 1) & (xy[a, 0] <= 5) & (xy[a, 1] >= 1) & (xy[a, 1] <= 6)
             & (xy[b, 0] >= 1) & (xy[b, 0] <= 5) & (xy[b, 1] >= 1) & (xy[b, 1] <= 6))
    assert not vertical_crossing(ring.astype(np.int8), g)


@pytest.mark.parametrize("spec", ["all:+", "free"])
def test_crossing_is_increasing_exhaustive_2x2(spec):
    _, _, g = _graph(2, 2, spec)
    m = g.n_edges
    configs = np.array(list(itertools.product((0, 1), repeat=m)), np.int8)
    val = np.array([vertical_crossing(c, g) for c in configs])
    for i, c in enumerate(configs):
        if not val[i]:
            continue
        for e in np.flatnonzero(c == 0):
            up = c.copy()
            up[e] = 1
            j = int("".join(map(str, up)), 2)
            assert val[j]


def test_crossing_of_sub_rectangle():
    lat, _, g = _graph(6, 6, "free")
    xy = lat.coords
    a, b = g.edges[:, 0], g.edges[:, 1]
    om = ((xy[a, 0] == 2) & (xy[b, 0] == 2) & (xy[a, 1] <= 4) & (xy[b, 1] <= 4)).astype(np.int8)
    assert vertical_crossing(om, g, Rect(1, 3, 1, 4))
    assert not vertical_crossing(om, g)
    assert not vertical_crossing(om, g, Rect(3, 6, 1, 4))


# ----------------------------------------------------------------------
# crossing estimates
# ----------------------------------------------------------------------
@pytest.mark.parametrize("p, expected", [(1.0, 1.0), (0.0, 0.0)])
def test_degenerate_p(p, expected):
    rep = estimate_crossing((6, 6), "all:+", p=p, samples=10)
    assert rep.estimate == expected
    assert rep.stderr == 0.0


def test_n16_wired_crossing_matches_reference_fixture():
    ref = json.loads((FIXTURES / "crossing_n16.json").read_text())
    assert ref["sweeps"] >= 10**6
    rep = estimate_crossing((16, 16), "all:+", samples=4000, rng=11, thin=2)
    assert rep.equilibrated
    tol = 3 * np.hypot(rep.stderr, ref["stderr"])
    assert abs(rep.estimate - ref["estimate"]) < tol


def test_crossing_estimate_deterministic():
    a = estimate_crossing((6, 6), samples=200, rng=5)
    b = estimate_crossing((6, 6), samples=200, rng=5)
    assert a.estimate == b.estimate and a.burnin == b.burnin


# ----------------------------------------------------------------------
# strip decay
# ----------------------------------------------------------------------
def test_strip_decay_zero_p():
    reps = strip_decay_profile(6, (1, 2, 3), p=0.0, samples=10)
    assert [r.estimate for r in reps] == [0.0, 0.0, 0.0]


def test_strip_decay_profile_shape():
    reps = strip_decay_profile(8, (1, 2, 4), samples=3000, rng=21)
    est = np.array([r.estimate for r in reps])
    se = np.array([r.stderr for r in reps])
    assert np.all(np.diff(np.log(est)) < 0)
    assert [r.dims for r in reps] == [(10, 8), (10, 16), (10, 32)]
    # doubling the height at most squares the crossing probability
    assert est[1] <= est[0] ** 2 + 3 * np.hypot(se[1], 2 * est[0] * se[0])
    assert est[2] <= est[1] ** 2 + 3 * np.hypot(se[2], 2 * est[1] * se[1])


def test_crossing_csv(tmp_path):
    reps = strip_decay_profile(4, (1, 2), samples=50, rng=2)
    path = tmp_path / "c.csv"
    write_crossing_csv(path, reps, rhos=[1, 2])
    lines = path.read_text().splitlines()
    assert lines[0] == "r,rho,bc,p,samples,estimate,stderr"
    assert len(lines) == 3 and lines[2].startswith("6,2,all:+,")


# ----------------------------------------------------------------------
# dual disconnection
# ----------------------------------------------------------------------
INNER = Rect(3, 4, 3, 4)


@pytest.mark.parametrize("spec", ["all:+", "free", "bottom:-,else:+"])
def test_dual_disconnect_extremes(spec):
    _, bc, g = _graph(6, 6, spec)
    assert dual_disconnect(np.zeros(g.n_edges, np.int8), g, INNER, bc)
    assert not dual_disconnect(np.ones(g.n_edges, np.int8), g, INNER, bc)


def test_dual_disconnect_requires_strict_interior():
    _, bc, g = _graph(6, 6, "free")
    with pytest.raises(ValueError):
        dual_disconnect(np.zeros(g.n_edges, np.int8), g, Rect(1, 3, 3, 4), bc)


def test_duality_sanity_random_configurations():
    """A cut-off inner square blocks every vertical crossing of the strip above and below it."""
    lat, bc, g = _graph(8, 8, "free")
    inner = Rect(3, 6, 3, 6)
    strip = Rect(inner.x0, inner.x1, 1, lat.rp)
    rng = np.random.default_rng(4)
    seen = 0
    for _ in range(3000):
        om = (rng.random(g.n_edges) < rng.uniform(0.2, 0.8)).astype(np.int8)
        if dual_disconnect(om, g, inner, bc):
            seen += 1
            assert not vertical_crossing(om, g, strip)
    assert seen > 50


def test_dual_disconnect_reference_fixture():
    ref = json.loads((FIXTURES / "dual_disconnect_n16.json").read_text())
    assert ref["c1_witness"] > 0
    for run in ref["runs"].values():
        assert run["estimate"] >= ref["c1_witness"]
        assert run["estimate"] > 3 * run["stderr"]


# ----------------------------------------------------------------------
# two-point connectivity
# ----------------------------------------------------------------------
def test_two_point_same_site():
    lat, bc = build_box(4, 4, "free")
    assert two_point_connectivity(lat, bc, 5, 5) == (1.0, 0.0)


def test_single_edge_connectivity():
    g = single_edge_graph()
    exact = fk_exact(g, p=P_SD).prob([1])
    assert exact == pytest.approx(np.sqrt(2) - 1, abs=1e-12)
    est, se = graph_connectivity(g, 0, 1, samples=40000, rng=8)
    assert abs(est - exact) < 4 * se


def test_two_point_decay_slope():
    ms = (8, 16, 32)
    vals = []
    for m in ms:
        lat, bc = build_box(m, m, "all:+")
        x, y = lat.index(m // 4, m // 4), lat.index(3 * m // 4, 3 * m // 4)
        vals.append(two_point_connectivity(lat, bc, x, y, samples=3000, rng=m)[0])
    slope = np.polyfit(np.log(ms), np.log(vals), 1)[0]
    assert -0.35 <= slope < 0
