"""Vector-valued discrete forms and the operators d, d*, Laplacian, Hodge split.

A p-form stores one vector per canonical p-cell; evaluating on the
opposite orientation flips the sign, so oddness is structural.  Lattice
valued forms (slips, charges) keep exact integer coefficients in the
primitive basis b_1..b_d.

Serialization (``to_csv`` / ``to_bytes``) writes rows in cell-id order;
the binary layout is little-endian float64 (int64 for lattice forms),
row-major with shape (n_cells, d).
"""
from __future__ import annotations

import heapq
import io

import numpy as np
import scipy.sparse as sp

from .complex import CellComplex, DIRICHLET, NEUMANN, PERIODIC, basis
from .linalg import DEFAULT_RTOL, cg


class FormError(ValueError):
    pass


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------

class PForm:
    """Real vector-valued p-form on a complex."""

    def __init__(self, cx: CellComplex, p: int, values):
        self.cx = cx
        self.p = p
        vals = np.asarray(values, dtype=float)
        n = cx.n_cells(p) if 0 <= p <= cx.top else 0
        if vals.shape != (n, cx.dim):
            raise FormError(f"{p}-form values must have shape {(n, cx.dim)}, got {vals.shape}")
        self.values = vals

    @classmethod
    def zeros(cls, cx, p):
        return cls(cx, p, np.zeros((cx.n_cells(p), cx.dim)))

    @classmethod
    def random(cls, cx, p, rng):
        return cls(cx, p, rng.standard_normal((cx.n_cells(p), cx.dim)))

    def at(self, cid, orientation=1):
        return orientation * self.values[cid]

    def _check(self, other):
        if other.cx is not self.cx or other.p != self.p:
            raise FormError("forms live on different complexes or degrees")

    def __add__(self, other):
        self._check(other)
        return PForm(self.cx, self.p, self.values + as_real(other).values)

    def __sub__(self, other):
        self._check(other)
        return PForm(self.cx, self.p, self.values - as_real(other).values)

    def __neg__(self):
        return PForm(self.cx, self.p, -self.values)

    def __mul__(self, s):
        return PForm(self.cx, self.p, s * self.values)

    __rmul__ = __mul__

    def dot(self, other) -> float:
        self._check(other)
        return float(np.sum(self.values * as_real(other).values))

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.values ** 2)))

    # serialization
    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("cell_id," + ",".join(f"c{i}" for i in range(self.cx.dim)) + "\r\n")
        for i, row in enumerate(self.values):
            buf.write(str(i) + "," + ",".join(repr(float(v)) for v in row) + "\r\n")
        return buf.getvalue()

    def to_bytes(self) -> bytes:
        return np.ascontiguousarray(self.values, dtype="<f8").tobytes()

    @classmethod
    def from_bytes(cls, cx, p, data: bytes):
        vals = np.frombuffer(data, dtype="<f8").reshape(-1, cx.dim)
        return cls(cx, p, vals.copy())

    @classmethod
    def from_csv(cls, cx, p, text: str):
        rows = [r for r in text.strip().splitlines()[1:] if r]
        vals = np.array([[float(v) for v in r.split(",")[1:]] for r in rows]).reshape(-1, cx.dim)
        return cls(cx, p, vals)


class LatticeForm:
    """Lattice-valued p-form: integer coefficients in the primitive basis."""

    def __init__(self, cx: CellComplex, p: int, coeffs):
        c = np.asarray(coeffs)
        if c.dtype.kind == "f":
            if not np.all(c == np.round(c)):
                raise FormError("lattice form coefficients must be integers")
            c = np.round(c)
        c = c.astype(np.int64)
        if c.shape != (cx.n_cells(p), cx.dim):
            raise FormError(f"coefficients must have shape {(cx.n_cells(p), cx.dim)}, got {c.shape}")
        self.cx = cx
        self.p = p
        self.coeffs = c

    @classmethod
    def zeros(cls, cx, p=None):
        p = cls._default_p() if p is None else p
        return cls._make(cx, p, np.zeros((cx.n_cells(p), cx.dim), dtype=np.int64))

    @staticmethod
    def _default_p():
        return 0

    @classmethod
    def _make(cls, cx, p, coeffs):
        if cls is LatticeForm:
            return LatticeForm(cx, p, coeffs)
        return cls(cx, coeffs)

    @property
    def values(self) -> np.ndarray:
        return self.coeffs @ basis(self.cx.kind)

    def real(self) -> PForm:
        return PForm(self.cx, self.p, self.values)

    def support(self):
        return np.nonzero(np.any(self.coeffs != 0, axis=1))[0]

    def __add__(self, other):
        if isinstance(other, LatticeForm):
            if other.cx is not self.cx or other.p != self.p:
                raise FormError("forms live on different complexes or degrees")
            return lattice_form(self.cx, self.p, self.coeffs + other.coeffs)
        return self.real() + other

    def __sub__(self, other):
        if isinstance(other, LatticeForm):
            return self + (-other)
        return self.real() - other

    def __neg__(self):
        return lattice_form(self.cx, self.p, -self.coeffs)

    def __eq__(self, other):
        return (isinstance(other, LatticeForm) and other.cx is self.cx
                and other.p == self.p and np.array_equal(other.coeffs, self.coeffs))

    __hash__ = None

    def dot(self, other) -> float:
        return self.real().dot(as_real(other))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("cell_id," + ",".join(f"n{i + 1}" for i in range(self.cx.dim)) + "\r\n")
        for i in self.support():
            buf.write(str(int(i)) + "," + ",".join(str(int(v)) for v in self.coeffs[i]) + "\r\n")
        return buf.getvalue()

    def to_bytes(self) -> bytes:
        return np.ascontiguousarray(self.coeffs, dtype="<i8").tobytes()


class SlipField(LatticeForm):
    """Lattice-valued 1-form sigma."""

    def __init__(self, cx, coeffs):
        super().__init__(cx, 1, coeffs)

    @staticmethod
    def _default_p():
        return 1


class ChargeField(LatticeForm):
    """Closed lattice-valued 2-form q; closedness is checked on construction."""

    def __init__(self, cx, coeffs, check=True):
        super().__init__(cx, 2, coeffs)
        if check and cx.top > 2:
            dq = cx.incidence[2] @ self.coeffs
            if np.any(dq != 0):
                raise FormError("charge not closed: dq != 0")

    @staticmethod
    def _default_p():
        return 2


def lattice_form(cx, p, coeffs):
    if p == 1:
        return SlipField(cx, coeffs)
    if p == 2:
        return ChargeField(cx, coeffs, check=False)
    return LatticeForm(cx, p, coeffs)


def as_real(u) -> PForm:
    return u.real() if isinstance(u, LatticeForm) else u


def lattice_from_vectors(cx, p, vectors) -> LatticeForm:
    """Convert Cartesian lattice vectors to coefficients; errors off-lattice."""
    c = np.asarray(vectors, dtype=float) @ np.linalg.inv(basis(cx.kind))
    r = np.round(c)
    if np.max(np.abs(c - r), initial=0.0) > 1e-9:
        raise FormError("values are not lattice vectors")
    return lattice_form(cx, p, r.astype(np.int64))


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------

def _dmat(cx, p, real=True):
    key = ("d", p, real)
    if key not in cx._cache:
        D = cx.incidence[p]
        cx._cache[key] = D.astype(float).tocsr() if real else D
    return cx._cache[key]


def laplacian_matrix(cx, p):
    """Scalar Delta_p = d_{p-1} d*_{p-1} + d*_p d_p as a sparse matrix."""
    key = ("lap", p)
    if key not in cx._cache:
        n = cx.n_cells(p)
        L = sp.csr_matrix((n, n))
        if p > 0:
            D = _dmat(cx, p - 1)
            L = L + D @ D.T
        if p < cx.top:
            D = _dmat(cx, p)
            L = L + D.T @ D
        cx._cache[key] = L.tocsr()
    return cx._cache[key]


def d(u, allow_top=False):
    """Exterior derivative; integer arithmetic for lattice forms."""
    cx, p = u.cx, u.p
    if p >= cx.top:
        if allow_top:
            return PForm(cx, p + 1, np.zeros((0, cx.dim)))
        raise FormError(f"d is not defined on top-degree {p}-forms (d_top := 0)")
    if isinstance(u, LatticeForm):
        return lattice_form(cx, p + 1, cx.incidence[p] @ u.coeffs)
    return PForm(cx, p + 1, _dmat(cx, p) @ u.values)


def codifferential(u):
    """Adjoint of d with respect to the canonical inner product."""
    cx, p = u.cx, u.p
    if p == 0:
        return PForm(cx, -1, np.zeros((0, cx.dim)))
    if isinstance(u, LatticeForm):
        return lattice_form(cx, p - 1, cx.incidence[p - 1].T @ u.coeffs)
    return PForm(cx, p - 1, _dmat(cx, p - 1).T @ u.values)


def laplacian(u) -> PForm:
    u = as_real(u)
    return PForm(u.cx, u.p, laplacian_matrix(u.cx, u.p) @ u.values)


def has_trivial_cohomology(cx, p) -> bool:
    bc = cx.spec.bc
    if bc == PERIODIC:
        return False
    if bc == DIRICHLET:
        return p < cx.top
    return p > 0


def solve_laplacian(u, rtol=DEFAULT_RTOL, in_range=False):
    """Delta_p^{-1} u by conjugate gradients; returns (PForm, SolveInfo).

    With ``in_range=True`` a singular Delta_p is accepted; the caller
    guarantees u is orthogonal to the harmonic forms (e.g. u = dv), and the
    minimum-norm solution is returned.
    """
    u = as_real(u)
    if not in_range and not has_trivial_cohomology(u.cx, u.p):
        raise FormError(f"nontrivial cohomology: Delta_{u.p} is singular for {u.cx.spec.bc} bc")
    x, info = cg(laplacian_matrix(u.cx, u.p), u.values, rtol=rtol)
    return PForm(u.cx, u.p, x), info


def hodge_decompose(u, rtol=DEFAULT_RTOL):
    """Split u = d d* Delta^{-1} u + d* d Delta^{-1} u (exact, coexact)."""
    u = as_real(u)
    cx, p = u.cx, u.p
    w, _ = solve_laplacian(u, rtol=rtol)
    exact = d(codifferential(w)) if p > 0 else PForm.zeros(cx, p)
    coexact = codifferential(d(w)) if p < cx.top else PForm.zeros(cx, p)
    return exact, coexact


# ---------------------------------------------------------------------------
# integer Poincare lift
# ---------------------------------------------------------------------------

class LiftError(FormError):
    pass


def lift_bounding_box(q: LatticeForm):
    """Smallest coordinate box (lo, hi) containing the vertices of supp q."""
    cx = q.cx
    supp = q.support()
    verts = cx.cell_vertices(2, supp).reshape(-1, cx.dim)
    return verts.min(axis=0), verts.max(axis=0)


def poincare_lift(q: LatticeForm) -> SlipField:
    """Integer 1-form n with dn = q, supported on edges inside the box of supp q.

    The linear system is reduced by elementary collapses: first (volume,
    free face) pairs, whose face equations follow from dq = 0, then (face,
    free edge) pairs, each fixing one edge value.  Cells are always taken
    in decreasing id order, i.e. the box is peeled from its far corner,
    slab by slab in the last coordinate.  Edges never paired are set to 0.
    When no free cell exists one cell is dropped unpaired (this happens
    once, for the top cohomology class of the relative complex); its
    equation is checked at the end.
    """
    cx = q.cx
    if cx.spec.bc == PERIODIC:
        raise LiftError("poincare_lift needs Dirichlet or Neumann boundary conditions")
    if q.p != 2:
        raise LiftError("poincare_lift expects a 2-form")
    if not isinstance(q, LatticeForm):
        raise LiftError("poincare_lift expects an integer (lattice-valued) charge")
    if cx.top > 2 and np.any(cx.incidence[2] @ q.coeffs != 0):
        raise LiftError("charge not closed: dq != 0")
    n = np.zeros((cx.n_cells(1), cx.dim), dtype=np.int64)
    if q.support().size == 0:
        return SlipField(cx, n)

    lo, hi = lift_bounding_box(q)
    ev = cx.cell_vertices(1)
    allowed = np.all((ev >= lo) & (ev <= hi), axis=(1, 2))
    D1 = cx.incidence[1].tocsr()
    D1a = D1[:, allowed]
    faces = np.unique(D1a.tocoo().row)
    edges = np.nonzero(allowed)[0]

    fe = D1[faces][:, edges].tocsr()            # local face x edge incidence
    face_edges = [list(zip(fe.indices[fe.indptr[i]:fe.indptr[i + 1]],
                           fe.data[fe.indptr[i]:fe.indptr[i + 1]])) for i in range(len(faces))]
    edge_faces = [set() for _ in range(len(edges))]
    for i, row in enumerate(face_edges):
        for e, _ in row:
            edge_faces[e].add(i)

    alive_f = np.ones(len(faces), dtype=bool)
    if cx.top > 2:
        D2 = cx.incidence[2].tocsr()
        vf = D2[:, faces].tocsr()
        vols = np.unique(vf.tocoo().row)
        vf = vf[vols].tocsr()
        vol_faces = [list(vf.indices[vf.indptr[i]:vf.indptr[i + 1]]) for i in range(len(vols))]
        face_vols = [set() for _ in range(len(faces))]
        for i, row in enumerate(vol_faces):
            for f in row:
                face_vols[f].add(i)
        alive_v = np.ones(len(vols), dtype=bool)
        heap = [-f for f in range(len(faces)) if len(face_vols[f]) == 1]
        heapq.heapify(heap)
        remaining = len(vols)
        while remaining:
            f = None
            while heap:
                c = -heapq.heappop(heap)
                if alive_f[c] and len(face_vols[c]) == 1:
                    f = c
                    break
            if f is None:
                v = int(np.nonzero(alive_v)[0][-1])      # unpaired removal
            else:
                v = next(iter(face_vols[f]))
                alive_f[f] = False
                for e, _ in face_edges[f]:
                    edge_faces[e].discard(f)
            alive_v[v] = False
            remaining -= 1
            for g in vol_faces[v]:
                face_vols[g].discard(v)
                if alive_f[g] and len(face_vols[g]) == 1:
                    heapq.heappush(heap, -g)

    pairs = []
    unpaired = []
    heap = [-e for e in range(len(edges)) if len(edge_faces[e]) == 1]
    heapq.heapify(heap)
    remaining = int(alive_f.sum())
    while remaining:
        e = None
        while heap:
            c = -heapq.heappop(heap)
            if len(edge_faces[c]) == 1:
                e = c
                break
        if e is None:
            f = int(np.nonzero(alive_f)[0][-1])
            unpaired.append(f)
        else:
            f = next(iter(edge_faces[e]))
            pairs.append((f, e))
        alive_f[f] = False
        remaining -= 1
        for g, _ in face_edges[f]:
            edge_faces[g].discard(f)
            if len(edge_faces[g]) == 1:
                heapq.heappush(heap, -g)

    qv = q.coeffs[faces]
    nloc = np.zeros((len(edges), cx.dim), dtype=np.int64)
    for f, e in reversed(pairs):
        acc = qv[f].copy()
        s_e = 0
        for g, s in face_edges[f]:
            if g == e:
                s_e = s
            else:
                acc -= s * nloc[g]
        nloc[e] = s_e * acc
    n[edges] = nloc
    lifted = SlipField(cx, n)
    if np.any(D1 @ n != q.coeffs):
        raise LiftError("charge cannot be lifted inside its bounding box "
                        "(nonzero total charge in 2D?)")
    return lifted
