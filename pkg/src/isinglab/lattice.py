"""Rectangular boxes, their boundary ring, edge enumeration and boundary conditions.

Coordinates follow the box ``[1, r] x [1, r']``: ``x`` is the column
(1..r), ``y`` the row (1..r', bottom row first). The outer ring of
neighbouring sites uses ``x in {0, r+1}`` or ``y in {0, r'+1}``; the four
corners of the bounding rectangle touch no interior site and are left out.

Site indices
    interior sites row-major from (1, 1): ``(y-1)*r + (x-1)``; then the
    boundary sites side by side in the order bottom, top, left, right
    (sides that wrap have no boundary sites).
Edge indices
    horizontal edges first, then vertical ones, each row-major.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

PLUS, MINUS, FREE = 1, -1, 0
SIDES = ("bottom", "top", "left", "right")
_OPPOSITE = {"bottom": "top", "top": "bottom", "left": "right", "right": "left"}


class BoundarySpecError(ValueError):
    """Raised for a malformed boundary-condition specification."""


@dataclass(frozen=True)
class Lattice:
    """Box ``[1, r] x [1, rp]`` with optional periodic identification."""

    r: int
    rp: int
    hwrap: bool = False
    vwrap: bool = False

    def __post_init__(self):
        if self.r < 1 or self.rp < 1:
            raise ValueError("box dimensions must be positive")
        if (self.hwrap and self.r < 2) or (self.vwrap and self.rp < 2):
            raise ValueError("a wrapped direction needs at least 2 sites")

    # -- sites ---------------------------------------------------------
    @property
    def n_sites(self) -> int:
        return self.r * self.rp

    @cached_property
    def boundary_coords(self) -> tuple:
        out = []
        if not self.vwrap:
            out += [(x, 0) for x in range(1, self.r + 1)]
            out += [(x, self.rp + 1) for x in range(1, self.r + 1)]
        if not self.hwrap:
            out += [(0, y) for y in range(1, self.rp + 1)]
            out += [(self.r + 1, y) for y in range(1, self.rp + 1)]
        return tuple(out)

    @property
    def n_boundary(self) -> int:
        return len(self.boundary_coords)

    @property
    def n_bar(self) -> int:
        """Number of sites of the box together with its boundary ring."""
        return self.n_sites + self.n_boundary

    @cached_property
    def coords(self) -> np.ndarray:
        """``(n_bar, 2)`` array of ``(x, y)`` for every site index."""
        c = np.empty((self.n_bar, 2), dtype=np.int64)
        idx = np.arange(self.n_sites)
        c[: self.n_sites, 0] = idx % self.r + 1
        c[: self.n_sites, 1] = idx // self.r + 1
        if self.n_boundary:
            c[self.n_sites:] = np.array(self.boundary_coords, dtype=np.int64)
        return c

    @cached_property
    def _boundary_index(self) -> dict:
        return {xy: self.n_sites + i for i, xy in enumerate(self.boundary_coords)}

    def _wrap(self, x: int, y: int) -> tuple:
        if self.hwrap:
            x = (x - 1) % self.r + 1
        if self.vwrap:
            y = (y - 1) % self.rp + 1
        return x, y

    def index(self, x: int, y: int) -> int:
        """Site index of ``(x, y)``; periodic directions are reduced first."""
        x, y = self._wrap(x, y)
        if 1 <= x <= self.r and 1 <= y <= self.rp:
            return (y - 1) * self.r + (x - 1)
        try:
            return self._boundary_index[(x, y)]
        except KeyError:
            raise KeyError(f"({x}, {y}) is not a site of the box or its boundary") from None

    def is_interior(self, site: int) -> bool:
        return 0 <= site < self.n_sites

    def side_of(self, site: int) -> str:
        """Which side of the ring a boundary site sits on."""
        x, y = self.coords[site]
        if site < self.n_sites:
            raise ValueError("interior site has no side")
        if y == 0:
            return "bottom"
        if y == self.rp + 1:
            return "top"
        return "left" if x == 0 else "right"

    def sites_on_side(self, side: str) -> np.ndarray:
        c = self.coords[self.n_sites:]
        if side == "bottom":
            m = c[:, 1] == 0
        elif side == "top":
            m = c[:, 1] == self.rp + 1
        elif side == "left":
            m = c[:, 0] == 0
        elif side == "right":
            m = c[:, 0] == self.r + 1
        else:
            raise ValueError(side)
        return np.flatnonzero(m) + self.n_sites

    # -- edges ---------------------------------------------------------
    @cached_property
    def edges(self) -> np.ndarray:
        """``(m, 2)`` array of interior-incident edges, in canonical order."""
        r, rp = self.r, self.rp
        out = []
        xs = range(1, r + 1) if self.hwrap else range(0, r + 1)
        for y in range(1, rp + 1):
            for x in xs:
                out.append((self.index(x, y), self.index(x + 1, y)))
        ys = range(1, rp + 1) if self.vwrap else range(0, rp + 1)
        for y in ys:
            for x in range(1, r + 1):
                out.append((self.index(x, y), self.index(x, y + 1)))
        return np.array(out, dtype=np.int64).reshape(-1, 2)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def n_interior_edges(self) -> int:
        e = self.edges
        return int(np.sum((e[:, 0] < self.n_sites) & (e[:, 1] < self.n_sites)))

    @cached_property
    def neighbor_table(self) -> np.ndarray:
        """``(n_sites, 4)`` neighbour site indices (right, left, up, down) in the ring."""
        t = np.empty((self.n_sites, 4), dtype=np.int64)
        for s in range(self.n_sites):
            x, y = self.coords[s]
            for k, (dx, dy) in enumerate(((1, 0), (-1, 0), (0, 1), (0, -1))):
                t[s, k] = self.index(x + dx, y + dy)
        return t

    def sub_rectangle_sites(self, x0: int, x1: int, y0: int, y1: int) -> np.ndarray:
        """Interior site indices of ``[x0, x1] x [y0, y1]`` (clipped to the box)."""
        xs = np.arange(max(x0, 1), min(x1, self.r) + 1)
        ys = np.arange(max(y0, 1), min(y1, self.rp) + 1)
        X, Y = np.meshgrid(xs, ys)
        return ((Y - 1) * self.r + (X - 1)).ravel()


@dataclass(frozen=True, eq=False)
class BoundaryCondition:
    """Per-boundary-site values in {PLUS, MINUS, FREE} on a given lattice.

    Periodic sides are encoded in the lattice itself (they carry no sites).
    """

    lattice: Lattice
    values: np.ndarray = field(repr=False)
    label: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.int8)
        if v.shape != (self.lattice.n_boundary,):
            raise ValueError("one value per boundary site is required")
        if not np.isin(v, (PLUS, MINUS, FREE)).all():
            raise ValueError("boundary values must be +1, -1 or 0")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __eq__(self, other):
        return (
            isinstance(other, BoundaryCondition)
            and self.lattice == other.lattice
            and np.array_equal(self.values, other.values)
        )

    def __hash__(self):
        return hash((self.lattice, self.values.tobytes()))

    def value(self, site: int) -> int:
        """Boundary value at a ring site (interior sites raise)."""
        n = self.lattice.n_sites
        if site < n:
            raise ValueError("interior site")
        return int(self.values[site - n])

    @cached_property
    def site_values(self) -> np.ndarray:
        """Values over all ``n_bar`` site indices; interior entries are 0."""
        out = np.zeros(self.lattice.n_bar, dtype=np.int8)
        out[self.lattice.n_sites:] = self.values
        return out

    @cached_property
    def field(self) -> np.ndarray:
        """Sum of fixed boundary spins adjacent to each interior site."""
        lat = self.lattice
        f = np.zeros(lat.n_sites, dtype=np.int64)
        sv = self.site_values
        for a, b in lat.edges:
            if b >= lat.n_sites:
                f[a] += sv[b]
            elif a >= lat.n_sites:
                f[b] += sv[a]
        return f

    @cached_property
    def ising_neighbors(self) -> np.ndarray:
        """Neighbour table with ring sites replaced by -1 (their spin enters via ``field``)."""
        t = self.lattice.neighbor_table.copy()
        t[t >= self.lattice.n_sites] = -1
        return t

    def flipped(self) -> "BoundaryCondition":
        return BoundaryCondition(self.lattice, -self.values, label=f"flip({self.label})")

    def with_values(self, values, label: str = "") -> "BoundaryCondition":
        return BoundaryCondition(self.lattice, np.asarray(values), label=label)

    @property
    def is_free(self) -> bool:
        return bool(np.all(self.values == FREE))

    def free_sides(self) -> set:
        lat = self.lattice
        out = set()
        for side in SIDES:
            s = lat.sites_on_side(side)
            if len(s) and np.all(self.site_values[s] == FREE):
                out.add(side)
        return out

    def __repr__(self) -> str:
        lat = self.lattice
        return f"BoundaryCondition({lat.r}x{lat.rp}, {self.label!r})"


# ----------------------------------------------------------------------
# bc-spec parsing
# ----------------------------------------------------------------------
_SITE_RE = re.compile(r"site:(-?\d+),(-?\d+):([+-])")
_VALUE = {"+": PLUS, "-": MINUS, "free": FREE, "periodic": None}


def _parse_spec(spec: str):
    text = spec.strip().lower().replace(" ", "")
    if not text:
        raise BoundarySpecError("empty boundary specification")
    overrides = [(int(x), int(y), PLUS if s == "+" else MINUS) for x, y, s in _SITE_RE.findall(text)]
    rest = _SITE_RE.sub("", text)
    sides: dict = {}
    default = None
    other = None
    for tok in filter(None, rest.split(",")):
        if tok == "free":
            default = FREE
        elif tok == "periodic":
            default = "periodic"
        elif ":" in tok:
            key, val = tok.split(":", 1)
            if val not in _VALUE:
                raise BoundarySpecError(f"bad value in {tok!r}")
            v = "periodic" if val == "periodic" else _VALUE[val]
            if key == "all":
                if v == "periodic":
                    raise BoundarySpecError("use 'periodic' for a torus")
                default = v
            elif key == "else":
                other = v
            elif key in SIDES:
                if key in sides:
                    raise BoundarySpecError(f"side {key!r} given twice")
                sides[key] = v
            else:
                raise BoundarySpecError(f"unknown key in {tok!r}")
        else:
            raise BoundarySpecError(f"unrecognised token {tok!r}")
    resolved = {}
    for side in SIDES:
        if side in sides:
            resolved[side] = sides[side]
        elif other is not None:
            resolved[side] = other
        elif default is not None:
            resolved[side] = default
        else:
            raise BoundarySpecError(f"side {side!r} is unspecified (add 'else:...')")
    for side, v in resolved.items():
        if (v == "periodic") != (resolved[_OPPOSITE[side]] == "periodic"):
            raise BoundarySpecError(f"periodic {side!r} without periodic {_OPPOSITE[side]!r}")
    return resolved, overrides


def parse_bc(lat: Lattice, spec: str) -> BoundaryCondition:
    """Boundary condition on an existing lattice; wrap flags must match the spec string."""
    resolved, overrides = _parse_spec(spec)
    hwrap = resolved["left"] == "periodic"
    vwrap = resolved["bottom"] == "periodic"
    if (hwrap, vwrap) != (lat.hwrap, lat.vwrap):
        raise BoundarySpecError("periodic sides do not match the lattice")
    vals = np.zeros(lat.n_boundary, dtype=np.int8)
    for side, v in resolved.items():
        if v != "periodic":
            vals[lat.sites_on_side(side) - lat.n_sites] = v
    for x, y, s in overrides:
        if (x, y) not in lat._boundary_index:
            raise BoundarySpecError(f"site override ({x},{y}) is not a boundary site")
        vals[lat._boundary_index[(x, y)] - lat.n_sites] = s
    return BoundaryCondition(lat, vals, label=spec.strip())


def build_box(r: int, rp: int, spec: str) -> tuple:
    """Build the ``r x rp`` box and its boundary condition from a bc-spec.

    >>> lat, bc = build_box(2, 2, "all:+")
    >>> lat.n_sites, lat.n_boundary
    (4, 8)
    """
    resolved, _ = _parse_spec(spec)
    lat = Lattice(r, rp, hwrap=resolved["left"] == "periodic", vwrap=resolved["bottom"] == "periodic")
    return lat, parse_bc(lat, spec)


def neighbors(lat: Lattice, bc: BoundaryCondition, x: int) -> list:
    """Neighbours of interior site ``x`` as ``(site, kind)`` pairs.

    ``kind`` is ``"interior"``, ``"boundary"`` (fixed spin) or ``"absent"``
    (free boundary, no interaction).
    """
    if not lat.is_interior(x):
        raise ValueError(f"site {x} is not in the box")
    out = []
    for y in lat.neighbor_table[x]:
        y = int(y)
        if lat.is_interior(y):
            out.append((y, "interior"))
        elif bc.site_values[y] == FREE:
            out.append((y, "absent"))
        else:
            out.append((y, "boundary"))
    return out


def boundary_partition(bc: BoundaryCondition) -> tuple:
    """Split the boundary ring into plus, minus and free site sets."""
    n = bc.lattice.n_sites
    v = bc.values
    P = frozenset(int(i) + n for i in np.flatnonzero(v == PLUS))
    M = frozenset(int(i) + n for i in np.flatnonzero(v == MINUS))
    F = frozenset(int(i) + n for i in np.flatnonzero(v == FREE))
    return P, M, F


def wired_bc(bc: BoundaryCondition) -> BoundaryCondition:
    """Every non-free ring site set to PLUS (the fully wired counterpart)."""
    v = np.where(bc.values == FREE, FREE, PLUS)
    return bc.with_values(v, label="wired")


def bc_spec_from_values(bc: BoundaryCondition) -> str:
    """Canonical spec text reproducing ``bc`` (sides plus site overrides)."""
    lat = bc.lattice
    parts = []
    overrides = []
    for side in SIDES:
        s = lat.sites_on_side(side)
        if not len(s):
            parts.append(f"{side}:periodic")
            continue
        vals = bc.site_values[s]
        counts = {v: int(np.sum(vals == v)) for v in (PLUS, MINUS, FREE)}
        major = max(counts, key=lambda v: counts[v])
        parts.append(f"{side}:" + {PLUS: "+", MINUS: "-", FREE: "free"}[major])
        for site, v in zip(s, vals):
            if v != major:
                if v == FREE:
                    raise BoundarySpecError("free site overrides are not expressible")
                x, y = lat.coords[site]
                overrides.append(f"site:{x},{y}:" + ("+" if v == PLUS else "-"))
    return ",".join(parts + overrides)
