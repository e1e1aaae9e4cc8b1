import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isinglab.lattice import (FREE, MINUS, PLUS, BoundarySpecError, Lattice, bc_spec_from_values,
                              boundary_partition, build_box, neighbors, parse_bc, wired_bc)


def test_all_plus_2x2_counts():
    lat, bc = build_box(2, 2, "all:+")
    assert lat.n_sites == 4
    assert lat.n_boundary == 12 - 4  # corners are not part of the ring
    assert lat.n_boundary == 2 * 2 + 2 * 2
    assert np.all(bc.values == PLUS)


def test_all_plus_2x2_edge_count():
    lat, _ = build_box(2, 2, "all:+")
    # 4 edges inside the box and one edge per ring site
    assert lat.n_interior_edges == 4
    assert lat.n_edges - lat.n_interior_edges == 8


def test_single_site_free():
    lat, bc = build_box(1, 1, "free")
    assert lat.n_sites == 1
    assert lat.n_interior_edges == 0
    assert bc.is_free


def test_mixed_partition_4x8():
    lat, bc = build_box(4, 8, "bottom:-,top:+,left:free,right:free")
    P, M, F = boundary_partition(bc)
    assert P == set(lat.sites_on_side("top").tolist())
    assert M == set(lat.sites_on_side("bottom").tolist())
    assert len(F) == 16


def test_partition_examples():
    _, bc = build_box(4, 4, "all:+")
    P, M, F = boundary_partition(bc)
    assert not M and not F
    lat, bc = build_box(4, 4, "bottom:-,else:+")
    P, M, F = boundary_partition(bc)
    assert len(M) == 4 and M == set(lat.sites_on_side("bottom").tolist())
    assert len(P) == 12
    _, bc = build_box(3, 3, "free")
    P, M, _ = boundary_partition(bc)
    assert not P and not M


def test_neighbors_corner_center():
    lat, bc = build_box(3, 3, "free")
    kinds = [k for _, k in neighbors(lat, bc, lat.index(1, 1))]
    assert kinds.count("interior") == 2 and kinds.count("absent") == 2
    assert [k for _, k in neighbors(lat, bc, lat.index(2, 2))] == ["interior"] * 4
    lat, bc = build_box(3, 3, "periodic")
    assert [k for _, k in neighbors(lat, bc, lat.index(1, 1))] == ["interior"] * 4
    lat, bc = build_box(3, 3, "bottom:-,else:+")
    assert [k for _, k in neighbors(lat, bc, lat.index(2, 2))] == ["interior"] * 4


def test_edge_order_horizontal_first_row_major():
    lat = Lattice(3, 2)
    e = [(tuple(lat.coords[a]), tuple(lat.coords[b])) for a, b in lat.edges]
    horiz = [p for p in e if p[0][1] == p[1][1]]
    assert e[: len(horiz)] == horiz
    assert [p[0][1] for p in horiz] == sorted(p[0][1] for p in horiz)
    assert np.array_equal(lat.edges, Lattice(3, 2).edges)


def test_site_indices_row_major():
    lat = Lattice(3, 2)
    assert lat.index(1, 1) == 0 and lat.index(2, 1) == 1 and lat.index(1, 2) == 3


@given(st.integers(1, 6), st.integers(1, 6))
@settings(max_examples=30, deadline=None)
def test_open_box_ring_properties(r, rp):
    lat, _ = build_box(r, rp, "free")
    assert lat.n_boundary == 2 * r + 2 * rp
    ring_degree = np.bincount(lat.edges.ravel(), minlength=lat.n_bar)[lat.n_sites:]
    assert np.all(ring_degree == 1)


@given(st.integers(2, 6), st.integers(2, 6))
@settings(max_examples=20, deadline=None)
def test_torus_neighbour_symmetry(r, rp):
    lat, _ = build_box(r, rp, "periodic")
    assert lat.n_boundary == 0
    t = lat.neighbor_table
    # right then left, up then down return to the start
    for x in range(lat.n_sites):
        assert t[t[x, 0], 1] == x and t[t[x, 2], 3] == x


def test_site_override_after_side_default():
    lat, bc = build_box(3, 3, "all:+,site:2,0:-")
    s = lat.index(2, 0)
    assert bc.value(s) == MINUS
    assert int(np.sum(bc.values == MINUS)) == 1


def test_bad_specs_raise():
    lat = Lattice(2, 2)
    for spec in ("bottom:?", "sideways:+", "site:0,0:+", "left:periodic"):
        with pytest.raises(BoundarySpecError):
            parse_bc(lat, spec)


def test_spec_round_trip_and_wiring():
    lat, bc = build_box(3, 4, "bottom:-,left:free,else:+,site:2,5:-")
    lat2, bc2 = build_box(3, 4, bc_spec_from_values(bc))
    assert bc2 == bc
    w = wired_bc(bc)
    assert set(np.unique(w.values)) <= {PLUS, FREE}
    assert np.array_equal(w.values == FREE, bc.values == FREE)


def test_free_sides():
    _, bc = build_box(3, 3, "left:free,right:free,else:+")
    assert bc.free_sides() == {"left", "right"}
    assert bc.flipped().value(bc.lattice.n_sites) == -bc.value(bc.lattice.n_sites)
    assert FREE == 0
