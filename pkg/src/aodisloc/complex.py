"""Lattice cellular complexes for the FCC and triangular lattices.

Vertices are labelled by integer coordinates ``n`` in the primitive basis,
so the position of a vertex is ``n @ basis(kind)``.  Every cell of degree
``p >= 1`` is stored once, in a canonical orientation, as a pair
``(anchor, type)``: its vertices are ``anchor + offsets[type]``.

Canonical orientations
----------------------
* edges ``(x, l)`` run from ``x`` to ``x + b_l``;
* triangular faces are oriented so that ``(x2 - x1) x (x3 - x1)`` is a
  positive multiple of the dual vector ``m_j`` attached to the face family
  (FCC), or counter-clockwise (TRI2D);
* volumes carry the outward orientation, so the incidence sign of a face is
  ``sign((G(f) - G(v)) . o(f))`` with ``G`` the barycenter.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
import numpy as np
import scipy.sparse as sp

FCC3D = "FCC3D"
TRI2D = "TRI2D"
DIRICHLET = "dirichlet"
NEUMANN = "neumann"
PERIODIC = "periodic"

KINDS = (FCC3D, TRI2D)
BCS = (DIRICHLET, NEUMANN, PERIODIC)

SQ2 = np.sqrt(2.0)
SQ3 = np.sqrt(3.0)


class ComplexError(ValueError):
    pass


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------

# bond vectors b_1..b_L in integer coordinates of the primitive basis
_BONDS = {
    FCC3D: np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1],
                     [0, -1, 1], [1, 0, -1], [-1, 1, 0]], dtype=np.int64),
    TRI2D: np.array([[1, 0], [0, 1], [-1, -1]], dtype=np.int64),
}

_BASIS = {
    FCC3D: np.array([[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]]) / SQ2,
    TRI2D: np.array([[1.0, 0.0], [-0.5, SQ3 / 2]]),
}

# face offsets; FCC order is f1..f8, each pair sharing the normal m_ceil(j/2)
_FACES = {
    FCC3D: np.array([
        [[0, 0, 0], [0, 1, 0], [0, 0, 1]],
        [[0, 0, 0], [0, -1, 0], [0, 0, -1]],
        [[0, 0, 0], [0, 0, 1], [1, 0, 0]],
        [[0, 0, 0], [0, 0, -1], [-1, 0, 0]],
        [[0, 0, 0], [1, 0, 0], [0, 1, 0]],
        [[0, 0, 0], [-1, 0, 0], [0, -1, 0]],
        [[0, 0, 0], [-1, 1, 0], [-1, 0, 1]],
        [[0, 0, 0], [1, -1, 0], [1, 0, -1]],
    ], dtype=np.int64),
    # (x, x+b1, x-b3) and (x, x-b2, x+b1), both counter-clockwise
    TRI2D: np.array([
        [[0, 0], [1, 0], [1, 1]],
        [[0, 0], [0, -1], [1, 0]],
    ], dtype=np.int64),
}

_VOLUMES = {
    FCC3D: [
        np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=np.int64),
        np.array([[0, 0, 0], [-1, 0, 0], [0, -1, 0], [0, 0, -1]], dtype=np.int64),
        np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1],
                  [1, 1, 0], [1, 0, 1], [0, 1, 1]], dtype=np.int64),
    ],
    TRI2D: [],
}

VOLUME_NAMES = ("r-tetrahedron", "g-tetrahedron", "octahedron")


def dim_of(kind: str) -> int:
    return 3 if kind == FCC3D else 2


def basis(kind: str) -> np.ndarray:
    """Primitive basis, one vector per row."""
    return _BASIS[kind].copy()


def bond_coords(kind: str) -> np.ndarray:
    """Integer coordinates of b_1..b_L (L = 6 for FCC, 3 for TRI2D)."""
    return _BONDS[kind].copy()


def bond_vectors(kind: str) -> np.ndarray:
    """Cartesian bond vectors b_1..b_L, one per row; all have unit length."""
    return _BONDS[kind] @ _BASIS[kind]


def dual_basis(kind: str) -> np.ndarray:
    """Dual vectors m_j with b_i . m_j = 2 pi delta_ij.

    FCC returns m_1..m_4 with m_4 = m_1 + m_2 + m_3; TRI2D returns m_1, m_2
    and m_3 = m_1 - m_2.
    """
    m = 2 * np.pi * np.linalg.inv(_BASIS[kind]).T
    if kind == FCC3D:
        return np.vstack([m, m.sum(axis=0)])
    return np.vstack([m, m[0] - m[1]])


def positions(kind: str, coords: np.ndarray) -> np.ndarray:
    return np.asarray(coords) @ _BASIS[kind]


def face_offsets(kind: str) -> np.ndarray:
    return _FACES[kind].copy()


def volume_offsets(kind: str) -> list:
    return [v.copy() for v in _VOLUMES[kind]]


def face_normal(kind: str, t: int) -> np.ndarray:
    """o(f) = (x2 - x1) x (x3 - x1) for the canonical face of type t."""
    x = positions(kind, _FACES[kind][t])
    a, b = x[1] - x[0], x[2] - x[0]
    if kind == FCC3D:
        return np.cross(a, b)
    return np.array([a[0] * b[1] - a[1] * b[0]])


def box_range(N: int) -> tuple[int, int]:
    """Coordinates of the box run from floor(-N/2 + 1) to floor(N/2)."""
    return int(np.floor(-N / 2 + 1)), int(np.floor(N / 2))


@dataclass(frozen=True)
class LatticeSpec:
    kind: str
    N: int
    bc: str

    def __post_init__(self):
        kind = str(self.kind).upper()
        bc = str(self.bc).lower()
        if kind not in KINDS:
            raise ComplexError(f"unknown lattice kind {self.kind!r}")
        if bc not in BCS:
            raise ComplexError(f"unknown boundary condition {self.bc!r}")
        if not isinstance(self.N, (int, np.integer)) or self.N < 2:
            raise ComplexError(f"box side N must be an integer >= 2, got {self.N!r}")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "bc", bc)
        object.__setattr__(self, "N", int(self.N))

    @property
    def dim(self) -> int:
        return dim_of(self.kind)


@dataclass(frozen=True)
class Cell:
    p: int
    id: int
    vertices: tuple
    orientation: int = 1

    def flipped(self) -> "Cell":
        if self.p == 0:
            return self
        return Cell(self.p, self.id, self.vertices, -self.orientation)


# ---------------------------------------------------------------------------
# templates: boundary of each cell type in terms of (offset, type, sign)
# ---------------------------------------------------------------------------

def _edge_of(kind, a, b):
    """Canonical edge (anchor, l, sign) for the oriented pair a -> b."""
    d = np.asarray(b) - np.asarray(a)
    bonds = _BONDS[kind]
    hit = np.where((bonds == d).all(axis=1))[0]
    if hit.size:
        return np.asarray(a), int(hit[0]), 1
    hit = np.where((bonds == -d).all(axis=1))[0]
    if hit.size:
        return np.asarray(b), int(hit[0]), -1
    raise ComplexError(f"{a} and {b} are not nearest neighbours")


def _templates(kind):
    """Return {p: [list over types of [(offset, type, sign), ...]]}."""
    tmpl = {1: [[(np.zeros(dim_of(kind), dtype=np.int64), -1, -1),
                 (_BONDS[kind][l], -1, 1)] for l in range(len(_BONDS[kind]))]}
    faces = []
    for verts in _FACES[kind]:
        rows = []
        for i in range(3):
            a, l, s = _edge_of(kind, verts[i], verts[(i + 1) % 3])
            rows.append((a, l, s))
        faces.append(rows)
    tmpl[2] = faces
    vols = []
    for verts in _VOLUMES[kind]:
        vset = {tuple(v) for v in verts}
        g_v = positions(kind, verts).mean(axis=0)
        rows = []
        for t, foff in enumerate(_FACES[kind]):
            for v in verts:
                fv = v + foff
                if all(tuple(w) in vset for w in fv):
                    g_f = positions(kind, fv).mean(axis=0)
                    s = np.sign(np.dot(g_f - g_v, face_normal(kind, t)))
                    rows.append((v.copy(), t, int(s)))
        vols.append(rows)
    tmpl[3] = vols
    return tmpl


_TEMPLATE_CACHE: dict = {}


def templates(kind):
    if kind not in _TEMPLATE_CACHE:
        _TEMPLATE_CACHE[kind] = _templates(kind)
    return _TEMPLATE_CACHE[kind]


# ---------------------------------------------------------------------------
# the complex
# ---------------------------------------------------------------------------

@dataclass
class CellTable:
    """Cells of one degree: anchors (n, d) int and types (n,) int."""
    anchors: np.ndarray
    types: np.ndarray
    lookup: np.ndarray      # dense codec over the padded anchor box
    pad_lo: int
    width: int

    def __len__(self):
        return len(self.types)

    def encode(self, anchors, types):
        """Ids of (anchor, type) pairs, -1 where the cell is absent."""
        a = np.atleast_2d(anchors) - self.pad_lo
        t = np.asarray(types)
        ok = ((a >= 0) & (a < self.width)).all(axis=1)
        flat = np.zeros(len(a), dtype=np.int64)
        ntypes = self.lookup.shape[-1]
        for j in range(a.shape[1]):
            flat = flat * self.width + np.where(ok, a[:, j], 0)
        out = np.where(ok, self.lookup.reshape(-1, ntypes)[flat, np.where(ok, t, 0)], -1)
        return out


@dataclass
class CellComplex:
    spec: LatticeSpec
    cells: list                       # CellTable per degree
    incidence: list                   # incidence[p]: (n_{p+1} x n_p) int csr
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def kind(self):
        return self.spec.kind

    @property
    def dim(self):
        return self.spec.dim

    @property
    def top(self):
        return self.dim

    def n_cells(self, p):
        return len(self.cells[p])

    def counts(self):
        return [self.n_cells(p) for p in range(self.top + 1)]

    def vertex_coords(self):
        return self.cells[0].anchors

    def vertex_positions(self):
        return positions(self.kind, self.cells[0].anchors)

    def cell_vertices(self, p, ids=None):
        """Integer vertex coordinates of p-cells, shape (n, k, d)."""
        tab = self.cells[p]
        ids = np.arange(len(tab)) if ids is None else np.asarray(ids)
        anchors, types = tab.anchors[ids], tab.types[ids]
        if p == 0:
            return anchors[:, None, :]
        if p == 1:
            return np.stack([anchors, anchors + _BONDS[self.kind][types]], axis=1)
        if p == 2:
            return anchors[:, None, :] + _FACES[self.kind][types]
        out = np.empty(len(ids), dtype=object)
        for i, (a, t) in enumerate(zip(anchors, types)):
            out[i] = a + _VOLUMES[self.kind][t]
        return out

    def edge_vectors(self):
        """Unit vector delta-e of every canonical edge, shape (n1, d)."""
        return bond_vectors(self.kind)[self.cells[1].types]

    def cell(self, p, cid, orientation=1):
        verts = self.cell_vertices(p, [cid])[0]
        return Cell(p, int(cid), tuple(tuple(int(c) for c in v) for v in verts), orientation)

    def cell_id(self, p, anchor, t=0):
        return int(self.cells[p].encode(np.asarray(anchor)[None, :], [t])[0])

    def wrap(self, coords):
        if self.spec.bc != PERIODIC:
            return coords
        lo, _ = box_range(self.spec.N)
        return (coords - lo) % self.spec.N + lo

    def in_box(self, coords):
        lo, hi = box_range(self.spec.N)
        c = np.atleast_2d(coords)
        return ((c >= lo) & (c <= hi)).all(axis=1)

    def summary(self) -> dict:
        h = hashlib.sha256()
        for p in range(self.top + 1):
            h.update(np.ascontiguousarray(self.cells[p].anchors, dtype="<i8").tobytes())
            h.update(np.ascontiguousarray(self.cells[p].types, dtype="<i8").tobytes())
        for D in self.incidence:
            D = D.tocoo()
            h.update(np.ascontiguousarray(D.row, dtype="<i8").tobytes())
            h.update(np.ascontiguousarray(D.col, dtype="<i8").tobytes())
            h.update(np.ascontiguousarray(D.data, dtype="<i8").tobytes())
        return {"kind": self.kind, "N": self.spec.N, "bc": self.spec.bc,
                "counts": {str(p): n for p, n in enumerate(self.counts())},
                "content_hash": h.hexdigest()}

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)


def _enumerate(spec, p, ntypes, verts_of):
    """Anchors/types of all p-cells admitted by the boundary condition."""
    d = spec.dim
    lo, hi = box_range(spec.N)
    pad = 0 if spec.bc == PERIODIC else 2
    rng = np.arange(lo - pad, hi + pad + 1)
    grid = np.stack(np.meshgrid(*([rng] * d), indexing="ij"), axis=-1).reshape(-1, d).astype(np.int64)
    anchors = np.repeat(grid, ntypes, axis=0)
    types = np.tile(np.arange(ntypes), len(grid))
    if spec.bc != PERIODIC:
        inside = np.zeros(len(types), dtype=bool)
        allin = np.ones(len(types), dtype=bool)
        for t in range(ntypes):
            sel = types == t
            vs = anchors[sel][:, None, :] + verts_of(t)[None]
            inb = ((vs >= lo) & (vs <= hi)).all(axis=2)
            inside[sel] = inb.any(axis=1)
            allin[sel] = inb.all(axis=1)
        keep = inside if spec.bc == DIRICHLET else allin
        anchors, types = anchors[keep], types[keep]
    width = len(rng)
    lookup = -np.ones((width,) * d + (ntypes,), dtype=np.int64)
    idx = tuple((anchors - (lo - pad)).T) + (types,)
    lookup[idx] = np.arange(len(types))
    return CellTable(anchors, types, lookup, lo - pad, width)


def build_complex(spec: LatticeSpec) -> CellComplex:
    """Enumerate all cells of the box and assemble the signed incidence maps."""
    if not isinstance(spec, LatticeSpec):
        raise ComplexError("build_complex expects a LatticeSpec")
    kind = spec.kind
    d = spec.dim
    vert_sets = {
        0: (1, lambda t: np.zeros((1, d), dtype=np.int64)),
        1: (len(_BONDS[kind]), lambda t: np.stack([np.zeros(d, dtype=np.int64), _BONDS[kind][t]])),
        2: (len(_FACES[kind]), lambda t: _FACES[kind][t]),
    }
    if kind == FCC3D:
        vert_sets[3] = (3, lambda t: _VOLUMES[kind][t])
    cells = [_enumerate(spec, p, *vert_sets[p]) for p in range(d + 1)]

    tmpl = templates(kind)
    lo, _ = box_range(spec.N)
    incidence = []
    for p in range(1, d + 1):
        hi_tab, lo_tab = cells[p], cells[p - 1]
        rows, cols, vals = [], [], []
        for t, entries in enumerate(tmpl[p]):
            sel = np.where(hi_tab.types == t)[0]
            if sel.size == 0:
                continue
            for off, t_low, s in entries:
                target = hi_tab.anchors[sel] + off
                if spec.bc == PERIODIC:
                    target = (target - lo) % spec.N + lo
                tl = np.full(len(sel), max(t_low, 0))
                ids = lo_tab.encode(target, tl)
                ok = ids >= 0
                rows.append(sel[ok])
                cols.append(ids[ok])
                vals.append(np.full(ok.sum(), s, dtype=np.int64))
        r, c, v = (np.concatenate(x) for x in (rows, cols, vals))
        D = sp.csr_matrix((v, (r, c)), shape=(len(hi_tab), len(lo_tab)), dtype=np.int64)
        D.sum_duplicates()
        D.eliminate_zeros()
        incidence.append(D)
    return CellComplex(spec, cells, incidence)


def boundary(cx: CellComplex, c: Cell) -> list:
    """Signed list of (sign, Cell) forming the boundary of a p-cell."""
    if c.p == 0:
        raise ComplexError("no boundary: 0-cells have an empty boundary")
    row = cx.incidence[c.p - 1].getrow(c.id)
    out = []
    for j, s in sorted(zip(row.indices, row.data)):
        out.append((int(s) * c.orientation, cx.cell(c.p - 1, j)))
    return out


def d_matrix(cx: CellComplex, p: int) -> sp.csr_matrix:
    """Scalar coboundary d_p: C^p -> C^{p+1} (transpose of the boundary map)."""
    if p < 0:
        return sp.csr_matrix((cx.n_cells(0), 0), dtype=np.int64)
    if p >= cx.top:
        return sp.csr_matrix((0, cx.n_cells(p)), dtype=np.int64)
    return cx.incidence[p]


# ---------------------------------------------------------------------------
# cohomology
# ---------------------------------------------------------------------------

_PRIMES = (2147483647, 1000000007)


def rank_mod_p(M, prime: int) -> int:
    """Rank of an integer matrix over GF(prime) by dense Gaussian elimination."""
    A = np.asarray(M.toarray() if sp.issparse(M) else M, dtype=np.int64) % prime
    if A.shape[0] < A.shape[1]:
        A = A.T.copy()
    nrow, ncol = A.shape
    r = 0
    for c in range(ncol):
        if r == nrow:
            break
        nz = np.nonzero(A[r:, c])[0]
        if nz.size == 0:
            continue
        piv = r + nz[0]
        if piv != r:
            A[[r, piv]] = A[[piv, r]]
        inv = pow(int(A[r, c]), prime - 2, prime)
        A[r, c:] = (A[r, c:] * inv) % prime
        below = r + 1 + np.nonzero(A[r + 1:, c])[0]
        if below.size:
            f = A[below, c][:, None]
            A[below, c:] = (A[below, c:] - (f * A[r, c:][None, :]) % prime) % prime
        r += 1
    return r


def integer_rank(M) -> int:
    """Rank over Q of an integer matrix.

    Ranks over GF(p) never exceed the rational rank and agree with it for
    all but finitely many primes; the maximum over two large primes is
    returned.
    """
    if min(M.shape) == 0:
        return 0
    return max(rank_mod_p(M, q) for q in _PRIMES)


def cohomology_dims(cx: CellComplex) -> tuple:
    """Per-component dimensions of H^p for p = 0..top."""
    n = cx.counts()
    ranks = [integer_rank(cx.incidence[p]) for p in range(cx.top)]
    dims = []
    for p in range(cx.top + 1):
        r_out = ranks[p] if p < cx.top else 0
        r_in = ranks[p - 1] if p > 0 else 0
        dims.append(n[p] - r_out - r_in)
    return tuple(dims)
