"""Grain kinematics: slip-system decompositions and perfect-grain slip fields.

A grain is a connected vertex set G rotated rigidly by a skew matrix S:
u_S(x) = S x + tau on G and 0 elsewhere.  The slip field sigma_S lives on
the bonds leaving G and absorbs the integer part of the rotation, so the
energy of (u_S, sigma_S) only sees fractional parts along the boundary.

Bond convention: for a bond x -> y, (d u)(x, y) = u(y) - u(x); a canonical
edge (a, l) is the bond a -> a + b_l.
"""
from __future__ import annotations

import io
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .complex import (DIRICHLET, FCC3D, NEUMANN, PERIODIC, TRI2D, CellComplex, LatticeSpec,
                      bond_coords, bond_vectors, build_complex, dim_of, dual_basis, positions,
                      templates)
from .energy import ao_energy
from .forms import LatticeForm, PForm, SlipField, as_real, d


class GrainError(ValueError):
    pass


# ---------------------------------------------------------------------------
# slip systems
# ---------------------------------------------------------------------------

# (l, n), 1-based as in the usual crystallographic labelling
FCC_SYSTEMS = ((1, 2), (1, 3), (2, 1), (2, 3), (3, 1), (3, 2),
               (4, 1), (4, 4), (5, 2), (5, 4), (6, 3), (6, 4))
TRI_SYSTEMS = ((1, 2), (2, 1), (3, 3))

# integer functionals: x . m_n = 2 pi * (coords @ _MCOORD[:, n-1])
_MCOORD = {
    FCC3D: np.array([[1, 0, 0, 1], [0, 1, 0, 1], [0, 0, 1, 1]], dtype=np.int64),
    TRI2D: np.array([[1, 0, 1], [0, 1, -1]], dtype=np.int64),
}

# 2 pi xi for each FCC system as (S entry, sign); each S_ij feeds four systems
_FCC_RATES = {
    (3, 1): ((0, 1), 1), (3, 2): ((0, 1), -1), (6, 3): ((0, 1), 1), (6, 4): ((0, 1), 1),
    (2, 1): ((0, 2), 1), (2, 3): ((0, 2), -1), (5, 2): ((0, 2), -1), (5, 4): ((0, 2), -1),
    (1, 2): ((1, 2), 1), (1, 3): ((1, 2), -1), (4, 1): ((1, 2), 1), (4, 4): ((1, 2), 1),
}


def _systems(kind):
    return FCC_SYSTEMS if kind == FCC3D else TRI_SYSTEMS


@dataclass
class SlipSystemDecomposition:
    """Amplitudes xi_(l,n) with S = sum xi b_l (x) m_n.

    ``rates`` stores 2 pi xi, which is what multiplies the integer
    x . m_n / (2 pi); keeping it separately avoids a round trip through pi.
    """
    kind: str
    systems: tuple
    rates: np.ndarray

    @property
    def xi(self) -> np.ndarray:
        return self.rates / (2 * np.pi)

    def matrix(self) -> np.ndarray:
        b = bond_vectors(self.kind)
        m = dual_basis(self.kind)
        out = np.zeros((dim_of(self.kind),) * 2)
        for (l, n), x in zip(self.systems, self.xi):
            out += x * np.outer(b[l - 1], m[n - 1])
        return out

    def residual(self, S) -> float:
        return float(np.linalg.norm(self.matrix() - np.asarray(S)))

    def as_dict(self):
        return {f"({l},{n})": float(x) for (l, n), x in zip(self.systems, self.xi)}


def _check_skew(S, k):
    S = np.asarray(S, dtype=float)
    if S.shape != (k, k):
        raise GrainError(f"S must be {k}x{k}, got shape {S.shape}")
    if np.max(np.abs(S + S.T), initial=0.0) > 1e-12 * max(1.0, np.abs(S).max()):
        raise GrainError("S must be skew symmetric")
    return S


def slip_decompose(S, kind=FCC3D) -> SlipSystemDecomposition:
    """Decompose a skew matrix into the standard slip systems of ``kind``."""
    kind = str(kind).upper()
    S = _check_skew(S, dim_of(kind))
    if kind == FCC3D:
        rates = np.array([sgn * S[ij] / 2 for ij, sgn in (_FCC_RATES[s] for s in FCC_SYSTEMS)])
        return SlipSystemDecomposition(kind, FCC_SYSTEMS, rates)
    # S = sqrt(3) theta [[0, 1], [-1, 0]]  and  2 pi xi = theta (1, -1, 1)
    theta = S[0, 1] / np.sqrt(3.0)
    return SlipSystemDecomposition(kind, TRI_SYSTEMS, theta * np.array([1.0, -1.0, 1.0]))


def tri_rotation(theta: float) -> np.ndarray:
    """The 2D skew matrix sqrt(3) theta [[0, 1], [-1, 0]]."""
    return np.sqrt(3.0) * theta * np.array([[0.0, 1.0], [-1.0, 0.0]])


def nearest_int(x):
    """<x> = floor(x + 1/2)."""
    return np.floor(np.asarray(x) + 0.5)


ROUNDING = {"floor": np.floor, "nearest": nearest_int}


def slip_phases(dec: SlipSystemDecomposition, coords) -> np.ndarray:
    """xi_(l,n) x . m_n for every site (rows) and system (columns)."""
    M = _MCOORD[dec.kind][:, [n - 1 for _, n in dec.systems]]
    return (np.asarray(coords, dtype=np.int64) @ M) * dec.rates[None, :]


def integer_slip(dec: SlipSystemDecomposition, coords, rounding="floor") -> np.ndarray:
    """sum b_l round(xi x . m_n) in integer coordinates, one row per site."""
    if rounding not in ROUNDING:
        raise GrainError(f"unknown rounding {rounding!r}")
    k = ROUNDING[rounding](slip_phases(dec, coords)).astype(np.int64)
    bl = bond_coords(dec.kind)[[l - 1 for l, _ in dec.systems]]
    return k @ bl


# ---------------------------------------------------------------------------
# grains in a box
# ---------------------------------------------------------------------------

@dataclass
class GrainSpec:
    """A connected vertex set ``region`` (integer coordinates) in ``cx``,
    rotated by the skew matrix ``S`` and shifted by ``tau``."""
    cx: CellComplex
    region: np.ndarray
    S: np.ndarray
    tau: np.ndarray | None = None
    rounding: str = "floor"
    mask: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        cx = self.cx
        self.S = _check_skew(self.S, cx.dim)
        self.tau = np.zeros(cx.dim) if self.tau is None else np.asarray(self.tau, dtype=float)
        if self.rounding not in ROUNDING:
            raise GrainError(f"unknown rounding {self.rounding!r}")
        if cx.spec.bc == PERIODIC:
            raise GrainError("grains need a Dirichlet or Neumann box")
        reg = np.unique(np.atleast_2d(np.asarray(self.region, dtype=np.int64)), axis=0)
        if reg.size == 0:
            raise GrainError("empty grain")
        ids = cx.cells[0].encode(reg, np.zeros(len(reg), dtype=np.int64))
        if np.any(ids < 0):
            raise GrainError("grain has vertices outside the box")
        mask = np.zeros(cx.n_cells(0), dtype=bool)
        mask[ids] = True
        nb = (reg[:, None, :] + np.concatenate([bond_coords(cx.kind), -bond_coords(cx.kind)])[None]).reshape(-1, cx.dim)
        if np.any(cx.cells[0].encode(nb, np.zeros(len(nb), dtype=np.int64)) < 0):
            raise GrainError("grain touches the box boundary: a boundary bond leaves the box")
        if not _connected(cx.kind, reg):
            raise GrainError("grain must be connected")
        self.region = reg
        self.mask = mask


def _connected(kind, reg):
    sites = {tuple(r) for r in reg}
    steps = np.concatenate([bond_coords(kind), -bond_coords(kind)])
    start = next(iter(sites))
    seen, stack = {start}, [start]
    while stack:
        x = np.array(stack.pop())
        for s in steps:
            y = tuple(x + s)
            if y in sites and y not in seen:
                seen.add(y)
                stack.append(y)
    return len(seen) == len(sites)


def edge_classes(spec: GrainSpec):
    """Split canonical edges into (inside, outside, boundary) boolean masks.

    Edges with a missing endpoint (Dirichlet edges leaving the box) count as
    outside; they never touch G by the GrainSpec precondition.
    """
    cx = spec.cx
    tab = cx.cells[1]
    ends = np.stack([tab.anchors, tab.anchors + bond_coords(cx.kind)[tab.types]], axis=1)
    ids = cx.cells[0].encode(ends.reshape(-1, cx.dim), np.zeros(2 * len(tab), dtype=np.int64)).reshape(-1, 2)
    ing = np.where(ids >= 0, spec.mask[np.maximum(ids, 0)], False)
    inside = ing.all(axis=1)
    bnd = ing[:, 0] != ing[:, 1]
    return inside, ~(inside | bnd), bnd


def boundary_bond_count(spec: GrainSpec) -> int:
    """|E_1^b(G)|, unordered bonds."""
    return int(edge_classes(spec)[2].sum())


def grain_displacement(spec: GrainSpec, tau=None) -> PForm:
    """u_S = S x + tau on G, 0 elsewhere."""
    cx = spec.cx
    tau = spec.tau if tau is None else np.asarray(tau, dtype=float)
    x = cx.vertex_positions()
    u = np.where(spec.mask[:, None], x @ spec.S.T + tau, 0.0)
    return PForm(cx, 0, u)


def _grain_site_of_edges(spec, bnd):
    """For boundary edges: grain endpoint coordinates and orientation sign.

    The sign is +1 when the canonical edge points out of G (x -> y with
    x in G), -1 otherwise.
    """
    cx = spec.cx
    tab = cx.cells[1]
    idx = np.nonzero(bnd)[0]
    a = tab.anchors[idx]
    b = a + bond_coords(cx.kind)[tab.types[idx]]
    a_in = spec.mask[cx.cells[0].encode(a, np.zeros(len(a), dtype=np.int64))]
    x = np.where(a_in[:, None], a, b)
    return idx, x, np.where(a_in, 1, -1)


def build_grain(spec: GrainSpec):
    """(u_S, sigma_S) with sigma_S(x, y) = -sum b_l round(xi x . m_n) on the
    bonds x -> y leaving G and zero elsewhere."""
    cx = spec.cx
    dec = slip_decompose(spec.S, cx.kind)
    _, _, bnd = edge_classes(spec)
    idx, x, sgn = _grain_site_of_edges(spec, bnd)
    coeffs = np.zeros((cx.n_cells(1), cx.dim), dtype=np.int64)
    coeffs[idx] = -sgn[:, None] * integer_slip(dec, x, spec.rounding)
    return grain_displacement(spec), SlipField(cx, coeffs)


@dataclass
class BoundaryTerms:
    """Per-boundary-bond data of the grain energy.

    ``fracs[i, s]`` is xi_s x . m_s - round(xi_s x . m_s) at the grain
    endpoint; ``proj[i, s]`` is (x - y) . b_l.  The exact bond energy is
    1/2 (sum_s proj fracs)^2; ``sum_of_squares`` is 1/2 sum_s (proj fracs)^2.
    """
    edges: np.ndarray
    fracs: np.ndarray
    proj: np.ndarray

    @property
    def exact(self) -> np.ndarray:
        return 0.5 * np.sum(self.proj * self.fracs, axis=1) ** 2

    @property
    def sum_of_squares(self) -> np.ndarray:
        return 0.5 * np.sum((self.proj * self.fracs) ** 2, axis=1)


def boundary_terms(spec: GrainSpec) -> BoundaryTerms:
    cx = spec.cx
    dec = slip_decompose(spec.S, cx.kind)
    _, _, bnd = edge_classes(spec)
    idx, x, sgn = _grain_site_of_edges(spec, bnd)
    ph = slip_phases(dec, x)
    fr = ph - ROUNDING[spec.rounding](ph)
    # x - y = -sgn * delta_e
    de = bond_vectors(cx.kind)[cx.cells[1].types[idx]]
    bl = bond_vectors(cx.kind)[[l - 1 for l, _ in dec.systems]]
    proj = -sgn[:, None] * (de @ bl.T)
    return BoundaryTerms(idx, fr, proj)


def bounded_representative(u_S, sigma_S, spec: GrainSpec):
    """Gauge transform by v_S = -sum b_l round(xi x . m_n) on G.

    The result has |u| <= 6 on G, u = 0 off G, and slip supported on the
    bonds inside G; the energy is unchanged.
    """
    cx = spec.cx
    dec = slip_decompose(spec.S, cx.kind)
    v = np.zeros((cx.n_cells(0), cx.dim), dtype=np.int64)
    v[spec.mask] = -integer_slip(dec, cx.vertex_coords()[spec.mask], spec.rounding)
    vS = LatticeForm(cx, 0, v)
    return as_real(u_S) + vS.real(), sigma_S + d(vS)


def naive_grain_energy(spec: GrainSpec):
    """min over tau of H(u_S, 0); returns (energy, tau).

    Only boundary bonds carry energy, and the bond strain there is affine
    in tau, so this is a small least-squares problem.
    """
    cx = spec.cx
    _, _, bnd = edge_classes(spec)
    idx, x, sgn = _grain_site_of_edges(spec, bnd)
    de = bond_vectors(cx.kind)[cx.cells[1].types[idx]]
    Sx = positions(cx.kind, x) @ spec.S.T
    # strain = sgn-independent: ((S x + tau) . delta_e)^2
    rhs = -np.sum(Sx * de, axis=1)
    tau, *_ = np.linalg.lstsq(de, rhs, rcond=None)
    r = de @ tau - rhs
    return 0.5 * float(r @ r), tau


def grain_energy(spec: GrainSpec) -> float:
    u, s = build_grain(spec)
    return ao_energy(u, s)


# ---------------------------------------------------------------------------
# region generators
# ---------------------------------------------------------------------------

def interior_sites(cx: CellComplex) -> np.ndarray:
    """Vertices all of whose neighbours are in the box."""
    c = cx.vertex_coords()
    steps = np.concatenate([bond_coords(cx.kind), -bond_coords(cx.kind)])
    ok = np.ones(len(c), dtype=bool)
    for s in steps:
        ok &= cx.cells[0].encode(c + s, np.zeros(len(c), dtype=np.int64)) >= 0
    return c[ok]


def random_region(cx: CellComplex, size: int, rng=None) -> np.ndarray:
    """Random connected set of at most ``size`` interior vertices, grown by
    attaching uniformly chosen frontier sites to a seed near the center."""
    rng = np.random.default_rng(rng)
    allowed = {tuple(r) for r in interior_sites(cx)}
    if not allowed:
        raise GrainError("box has no interior vertices")
    steps = np.concatenate([bond_coords(cx.kind), -bond_coords(cx.kind)])
    pts = np.array(sorted(allowed))
    seed = tuple(pts[np.argmin(np.abs(pts).sum(axis=1))])
    region = [seed]
    inset = {seed}
    frontier = []
    fset = set()

    def grow(x):
        for s in steps:
            y = tuple(np.array(x) + s)
            if y in allowed and y not in inset and y not in fset:
                frontier.append(y)
                fset.add(y)

    grow(seed)
    while len(region) < size and frontier:
        i = int(rng.integers(len(frontier)))
        y = frontier[i]
        frontier[i] = frontier[-1]
        frontier.pop()
        fset.discard(y)
        region.append(y)
        inset.add(y)
        grow(y)
    return np.array(region, dtype=np.int64)


def ball_region(cx: CellComplex, radius: float, center=None, strict=False) -> np.ndarray:
    """Interior vertices within Euclidean distance ``radius`` of ``center``.

    With ``strict`` the ball must not reach the outer layer of the box.
    """
    center = np.zeros(cx.dim) if center is None else np.asarray(center, dtype=float)

    def ball(c):
        return c[np.linalg.norm(positions(cx.kind, c) - center, axis=1) <= radius]

    inner = ball(interior_sites(cx))
    if strict and len(inner) != len(ball(cx.vertex_coords())):
        raise GrainError(f"a grain of radius {radius} does not fit in the box (N={cx.spec.N})")
    return inner


def random_skew(dim: int, rng=None, max_norm=1.0) -> np.ndarray:
    """Random skew matrix with Frobenius norm at most ``max_norm``."""
    rng = np.random.default_rng(rng)
    A = rng.normal(size=(dim, dim))
    S = A - A.T
    return S * (rng.uniform() * max_norm / np.linalg.norm(S))


# ---------------------------------------------------------------------------
# the 2D strip grain
# ---------------------------------------------------------------------------

# site (n1, n2, j) of the strip: n1 b1 + n2 (b2 - b3) + j b2, i.e. the integer
# coordinates (n1 + n2, 2 n2 + j); 0 <= n1 <= n, j in {0, 1}
def strip_sites(n: int, n2: int) -> np.ndarray:
    n1 = np.arange(n + 1)
    a = np.stack([n1 + n2, np.full_like(n1, 2 * n2)], axis=1)
    return np.concatenate([a, a + [0, 1]])


def _in_strip(n, c):
    c = np.atleast_2d(c)
    n2 = c[:, 1] // 2
    n1 = c[:, 0] - n2
    return (n1 >= 0) & (n1 <= n)


def strip_wall_bonds(n: int, n2_range, side: str):
    """Bonds x -> y from the strip (rows n2 in ``n2_range``) to the left or
    right complement; returns (x coords, y coords, n2 per bond)."""
    steps = np.concatenate([bond_coords(TRI2D), -bond_coords(TRI2D)])
    xs, ys, rows = [], [], []
    for n2 in n2_range:
        col = 0 if side == "left" else n
        a = np.array([col + n2, 2 * n2])
        for x in (a, a + [0, 1]):
            for s in steps:
                y = x + s
                if _in_strip(n, y)[0]:
                    continue
                # left complement has n1 < 0 for the row of y
                yn1 = y[0] - y[1] // 2
                if (side == "left") != (yn1 < 0):
                    continue
                xs.append(x)
                ys.append(y)
                rows.append(n2)
    return np.array(xs), np.array(ys), np.array(rows)


def strip_slip_values(n, theta, xs, rows, side, form="wall", tau_R=(0, 0)):
    """Slip sigma(x, y) (integer coordinates) on strip boundary bonds.

    ``form="wall"`` uses -/+ b_1 (<2 theta n2> + <theta n2>) on the
    left/right wall; ``form="general"`` uses -sum b_l <xi_l x . m_n(l)> at
    the grain endpoint, plus ``tau_R`` on bonds into the right complement.
    """
    b1 = bond_coords(TRI2D)[0]
    if form == "wall":
        k = (nearest_int(2 * theta * rows) + nearest_int(theta * rows)).astype(np.int64)
        sgn = -1 if side == "left" else 1
        return sgn * k[:, None] * b1[None, :]
    if form == "general":
        dec = slip_decompose(tri_rotation(theta), TRI2D)
        out = -integer_slip(dec, xs, "nearest")
        if side == "right":
            out = out + np.asarray(tau_R, dtype=np.int64)
        return out
    raise GrainError(f"unknown strip form {form!r}")


def strip_bond_field(n, theta, n2_range, form="wall", tau_R=(0, 0)) -> dict:
    """Strip slip field on the infinite lattice as {(anchor, l): coeffs}."""
    out = {}
    bonds = bond_coords(TRI2D)
    for side in ("left", "right"):
        xs, ys, rows = strip_wall_bonds(n, n2_range, side)
        if len(xs) == 0:
            continue
        vals = strip_slip_values(n, theta, xs, rows, side, form, tau_R)
        for x, y, v in zip(xs, ys, vals):
            dxy = y - x
            hit = np.where((bonds == dxy).all(axis=1))[0]
            if hit.size:
                key, s = (tuple(int(c) for c in x), int(hit[0])), 1
            else:
                l = int(np.where((bonds == -dxy).all(axis=1))[0][0])
                key, s = (tuple(int(c) for c in y), l), -1
            out[key] = s * v
    return out


def sparse_d(kind: str, bond_field: dict) -> dict:
    """d of a finitely supported 1-form on the infinite lattice.

    Returns {(anchor, face type): coeffs} restricted to nonzero faces.
    """
    acc = defaultdict(lambda: np.zeros(dim_of(kind), dtype=np.int64))
    faces = templates(kind)[2]
    for (anchor, l), v in bond_field.items():
        a = np.array(anchor)
        for t, entries in enumerate(faces):
            for off, lt, s in entries:
                if lt == l:
                    acc[(tuple(int(c) for c in a - off), t)] += s * np.asarray(v, dtype=np.int64)
    return {k: v for k, v in acc.items() if np.any(v != 0)}


def strip_rows_in_box(n: int, N: int) -> range:
    """Rows n2 for which the strip sites and their neighbours fit in the box."""
    from .complex import box_range
    lo, hi = box_range(N)
    rows = [n2 for n2 in range(lo, hi + 1)
            if 2 * n2 - 1 >= lo and 2 * n2 + 2 <= hi and n2 - 1 >= lo and n2 + n + 1 <= hi]
    if not rows:
        raise GrainError(f"a strip of width {n} does not fit in a box of side {N}")
    return range(rows[0], rows[-1] + 1)


def strip_grain_2d(n: int, theta: float, N: int, bc=DIRICHLET, form="wall") -> SlipField:
    """Slip field of a vertical strip grain of width ``n`` in a TRI2D box.

    The strip covers every row that fits in the box; its top and bottom
    ends carry no slip.  The complex is available as ``result.cx``.
    """
    if n < 1:
        raise GrainError("strip width must be >= 1")
    cx = build_complex(LatticeSpec(TRI2D, N, bc))
    return strip_grain_on(cx, n, theta, form)


def strip_grain_on(cx: CellComplex, n: int, theta: float, form="wall") -> SlipField:
    rows = strip_rows_in_box(n, cx.spec.N)
    coeffs = np.zeros((cx.n_cells(1), 2), dtype=np.int64)
    for (anchor, l), v in strip_bond_field(n, theta, rows, form).items():
        eid = cx.cell_id(1, np.array(anchor), l)
        if eid < 0:
            raise GrainError("strip bond outside the box")
        coeffs[eid] = v
    return SlipField(cx, coeffs)


def wall_charge_profile(n, theta, n2_range, side="left", form="wall"):
    """Charges of the strip slip field near one wall, on the infinite lattice.

    Returns a list of (face anchor, face type, coeffs) sorted by height.
    Only faces strictly between the first and last row are kept, so the end
    charges of the truncated strip are dropped.
    """
    q = sparse_d(TRI2D, strip_bond_field(n, theta, n2_range, form))
    lo, hi = 2 * n2_range[0] + 1, 2 * n2_range[-1]
    out = []
    for (a, t), v in q.items():
        rowc = a[1]
        if not lo <= rowc <= hi:
            continue
        n1 = a[0] - a[1] // 2
        on_left = n1 <= n // 2
        if on_left == (side == "left"):
            out.append((a, t, v))
    out.sort(key=lambda r: (r[0][1], r[0][0], r[1]))
    return out


def wall_charge_density(n, theta, rows=600, side="left", form="wall") -> float:
    """Total |charge| (in units of |b_1|) per row n2 on one wall."""
    prof = wall_charge_profile(n, theta, range(0, rows + 1), side, form)
    b = bond_coords(TRI2D)[0]
    total = 0.0
    for _, _, v in prof:
        k = v[0] if b[0] else 0
        if np.any(v != k * b):
            raise GrainError(f"wall charge {v} is not a multiple of b_1")
        total += abs(int(k))
    return total / rows


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def grain_to_csv(u: PForm, spec: GrainSpec) -> str:
    """Displacement on the grain: one CRLF row per grain vertex."""
    cx = spec.cx
    buf = io.StringIO()
    dd = cx.dim
    buf.write(",".join([f"n{i + 1}" for i in range(dd)] + [f"u{i + 1}" for i in range(dd)]) + "\r\n")
    ids = np.nonzero(spec.mask)[0]
    for i in ids:
        c = cx.vertex_coords()[i]
        buf.write(",".join([str(int(v)) for v in c] + [repr(float(v)) for v in u.values[i]]) + "\r\n")
    return buf.getvalue()
