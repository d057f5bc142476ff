"""Quadratic lattice energy of displacement/slip pairs and its decomposition.

H(u, sigma) = 1/2 sum over unordered bonds [(du - sigma)(e) . delta_e]^2
            = 1/2 <du - sigma, B (du - sigma)>,

with B the per-bond projector delta_e (x) delta_e.  The minimum over u
depends on sigma only through q = d sigma; ``sigma_q`` returns the
minimizer of <v, B v> subject to dv = q.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np
import scipy.sparse as sp

from .complex import DIRICHLET, NEUMANN, PERIODIC, CellComplex, positions
from .forms import (ChargeField, FormError, LatticeForm, PForm, SlipField, as_real,
                    codifferential, d, lattice_form, solve_laplacian, _dmat)
from .linalg import DEFAULT_RTOL, SolveInfo, cg


class EnergyError(ValueError):
    pass


# ---------------------------------------------------------------------------
# operators B and A
# ---------------------------------------------------------------------------

def bond_projector(cx: CellComplex) -> sp.csr_matrix:
    """B on flattened 1-form values: block diagonal, blocks delta_e delta_e^T."""
    key = ("B",)
    if key not in cx._cache:
        de = cx.edge_vectors()
        n, k = de.shape
        blocks = de[:, :, None] * de[:, None, :]
        rows = np.repeat(np.arange(n * k).reshape(n, k), k, axis=1).ravel()
        cols = np.tile(np.arange(n * k).reshape(n, k), (1, k)).ravel()
        cx._cache[key] = sp.csr_matrix((blocks.ravel(), (rows, cols)), shape=(n * k, n * k))
    return cx._cache[key]


def _dvec(cx, p):
    key = ("dvec", p)
    if key not in cx._cache:
        cx._cache[key] = sp.kron(_dmat(cx, p), sp.identity(cx.dim), format="csr")
    return cx._cache[key]


def stiffness(cx: CellComplex) -> sp.csr_matrix:
    """A = d* B d acting on flattened vector 0-forms."""
    key = ("A",)
    if key not in cx._cache:
        D = _dvec(cx, 0)
        cx._cache[key] = (D.T @ bond_projector(cx) @ D).tocsr()
    return cx._cache[key]


def apply_B(sigma) -> PForm:
    s = as_real(sigma)
    de = s.cx.edge_vectors()
    return PForm(s.cx, 1, np.sum(s.values * de, axis=1)[:, None] * de)


def apply_A(u) -> PForm:
    u = as_real(u)
    return codifferential(apply_B(d(u)))


def bond_strain(u, sigma) -> np.ndarray:
    """(du - sigma)(e) . delta_e for every canonical edge."""
    _same(u, sigma)
    r = d(as_real(u)).values - as_real(sigma).values
    return np.sum(r * u.cx.edge_vectors(), axis=1)


def _same(u, sigma):
    if u.cx is not sigma.cx:
        raise EnergyError("u and sigma live on different complexes")
    if u.p != 0 or sigma.p != 1:
        raise EnergyError("expected a 0-form u and a 1-form sigma")


def ao_energy(u, sigma) -> float:
    """H(u, sigma); each unordered nearest-neighbour pair counted once."""
    r = bond_strain(u, sigma)
    return 0.5 * float(np.dot(r, r))


def quad_B(v) -> float:
    """<v, B v>."""
    v = as_real(v)
    r = np.sum(v.values * v.cx.edge_vectors(), axis=1)
    return float(np.dot(r, r))


# ---------------------------------------------------------------------------
# relaxation
# ---------------------------------------------------------------------------

@dataclass
class RelaxResult:
    u: PForm
    energy: float
    energy_formula: float
    iterations: int
    residual: float

    def to_dict(self):
        return {"energy": self.energy, "energy_formula": self.energy_formula,
                "iterations": self.iterations, "residual": self.residual}


def rigid_modes(cx: CellComplex, rotations=True) -> np.ndarray:
    """Orthonormal basis (columns) of translations and linearized rotations."""
    x = cx.vertex_positions()
    n, k = x.shape
    modes = []
    for i in range(k):
        m = np.zeros((n, k))
        m[:, i] = 1.0
        modes.append(m.ravel())
    for i in range(k if rotations else 0):
        for j in range(i + 1, k):
            m = np.zeros((n, k))
            m[:, i] = x[:, j]
            m[:, j] = -x[:, i]
            modes.append(m.ravel())
    Q, _ = np.linalg.qr(np.array(modes).T)
    return Q


def solve_A(rhs: PForm, rtol=DEFAULT_RTOL, project_kernel=False):
    """A^{-1} rhs; returns (PForm, SolveInfo)."""
    cx = rhs.cx
    if cx.spec.bc != DIRICHLET and not project_kernel:
        raise EnergyError("A singular; project out kernel first (pass project_kernel=True)")
    b = rhs.values.ravel()
    Q = None
    if cx.spec.bc != DIRICHLET:
        Q = rigid_modes(cx, rotations=cx.spec.bc == NEUMANN)
        b = b - Q @ (Q.T @ b)
    x, info = cg(stiffness(cx), b, rtol=rtol)
    if Q is not None:
        x = x - Q @ (Q.T @ x)
    return PForm(cx, 0, x.reshape(-1, cx.dim)), info


def relax(sigma, rtol=DEFAULT_RTOL, project_kernel=False) -> RelaxResult:
    """Minimize H(., sigma) over u by solving A u = d* B sigma.

    For Neumann or periodic boxes A has the rigid motions in its kernel;
    with ``project_kernel=True`` the solution orthogonal to them is returned.
    """
    s = as_real(sigma)
    rhs = codifferential(apply_B(s))
    u, info = solve_A(rhs, rtol=rtol, project_kernel=project_kernel)
    energy = ao_energy(u, sigma)
    formula = 0.5 * quad_B(s) - 0.5 * rhs.dot(u)
    return RelaxResult(u, energy, formula, info.iterations, info.residual)


# ---------------------------------------------------------------------------
# charges and the dislocation part
# ---------------------------------------------------------------------------

def dislocation_charge(sigma: SlipField) -> ChargeField:
    """q = d sigma in exact integer arithmetic."""
    q = d(sigma)
    return ChargeField(sigma.cx, q.coeffs)


def G_apply(q, rtol=DEFAULT_RTOL, project_kernel=None) -> PForm:
    """G q = (1 - d A^{-1} d* B) d* Delta^{-1} q, applied as a composition."""
    q = as_real(q)
    cx = q.cx
    pk = cx.spec.bc != DIRICHLET if project_kernel is None else project_kernel
    # on a 2D Dirichlet box Delta_2 has the top class in its kernel; charges
    # in the range of d are orthogonal to it
    w, _ = solve_laplacian(q, rtol=rtol, in_range=True)
    psi = codifferential(w)
    corr, _ = solve_A(codifferential(apply_B(psi)), rtol=rtol, project_kernel=pk)
    return psi - d(corr)


def G_adjoint_apply(v, rtol=DEFAULT_RTOL, project_kernel=None) -> PForm:
    """G* v = Delta^{-1} d (1 - B d A^{-1} d*) v."""
    v = as_real(v)
    cx = v.cx
    pk = cx.spec.bc != DIRICHLET if project_kernel is None else project_kernel
    a, _ = solve_A(codifferential(v), rtol=rtol, project_kernel=pk)
    w = v - apply_B(d(a))
    out, _ = solve_laplacian(d(w), rtol=rtol)
    return out


def sigma_q(q, rtol=DEFAULT_RTOL) -> PForm:
    """Minimizer of <v, B v> over real 1-forms v with dv = q.

    Dirichlet boxes use G q.  On Neumann boxes the same composition is used
    with A inverted on the complement of the rigid motions, which is the
    constrained minimizer since d* B psi is orthogonal to that kernel.
    """
    cx = q.cx
    if cx.spec.bc == PERIODIC:
        raise EnergyError("sigma_q needs Dirichlet or Neumann boundary conditions")
    if isinstance(q, LatticeForm) and cx.top > 2 and np.any(cx.incidence[2] @ q.coeffs != 0):
        raise EnergyError("charge not closed: dq != 0")
    if not isinstance(q, LatticeForm) and cx.top > 2:
        dq = _dmat(cx, 2) @ q.values
        if np.max(np.abs(dq), initial=0.0) > 1e-9 * max(1.0, np.abs(q.values).max(initial=0.0)):
            raise EnergyError("charge not closed: dq != 0")
    return G_apply(q, rtol=rtol)


@dataclass
class EnergyReport:
    total: float
    elastic: float
    dislocation: float
    residual: float

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def u_sigma(sigma, sq=None, rtol=DEFAULT_RTOL) -> PForm:
    """u_sigma = d* Delta_1^{-1} (sigma - sigma_q), so d u_sigma = sigma - sigma_q."""
    s = as_real(sigma)
    if sq is None:
        sq = sigma_q(dislocation_charge(sigma) if isinstance(sigma, LatticeForm) else d(s), rtol=rtol)
    w, _ = solve_laplacian(s - sq, rtol=rtol)
    return codifferential(w)


def decompose_energy(u, sigma, rtol=DEFAULT_RTOL) -> EnergyReport:
    """Split H(u, sigma) into elastic and dislocation parts."""
    _same(u, sigma)
    cx = u.cx
    if cx.spec.bc == PERIODIC:
        raise EnergyError("energy decomposition needs H^2 = 0 (Dirichlet or Neumann)")
    q = dislocation_charge(sigma) if isinstance(sigma, LatticeForm) else d(sigma)
    sq = sigma_q(q, rtol=rtol)
    us = u_sigma(sigma, sq, rtol=rtol)
    total = ao_energy(u, sigma)
    elastic = 0.5 * quad_B(d(as_real(u) - us))
    disl = 0.5 * quad_B(sq)
    return EnergyReport(total, elastic, disl, abs(total - elastic - disl))


def gauge_transform(u, sigma, v):
    """(u, sigma) -> (u + v, sigma + dv) for a lattice-valued 0-form v."""
    if not isinstance(v, LatticeForm) or v.p != 0:
        raise EnergyError("gauge transforms need a lattice-valued 0-form")
    dv = d(v)
    s2 = sigma + dv if isinstance(sigma, LatticeForm) else as_real(sigma) + dv.real()
    return as_real(u) + v.real(), s2


# ---------------------------------------------------------------------------
# coercivity witness
# ---------------------------------------------------------------------------

def korn_ratio(u) -> float:
    """<u, A u> / <du, du> for a nonzero 0-form u."""
    u = as_real(u)
    du = d(u)
    return quad_B(du) / du.dot(du)


def measured_korn_constant(cx, samples=200, rng=None) -> float:
    rng = np.random.default_rng(rng)
    return min(korn_ratio(PForm.random(cx, 0, rng)) for _ in range(samples))


def skew_field(cx, S, tau=None) -> PForm:
    """The 0-form x -> S x + tau on all vertices."""
    x = cx.vertex_positions()
    vals = x @ np.asarray(S).T
    if tau is not None:
        vals = vals + np.asarray(tau)
    return PForm(cx, 0, vals)
