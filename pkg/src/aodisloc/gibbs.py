"""Markov chain sampler for exp(-beta (H(u, sigma) + W(d sigma))) on a
Dirichlet box, with W(q) = w0 sum_f |q(f)|^2.

One sweep is a heat-bath pass over the displacements followed by a
Metropolis pass over the slip field:

* u(x) given everything else is Gaussian with precision beta M_x, where
  M_x = sum of delta_e delta_e^T over the bonds at x (the diagonal block
  of A).  Vertices of one colour of a proper colouring share no bond, so a
  whole colour class is resampled at once.
* sigma(e) gets an independent proposal drawn uniformly from the slip set
  and is accepted with probability min(1, exp(-beta dE)).  Edges of one
  colour share no face, so their moves are independent as well.

The measure is defined on classes of slip fields modulo exact forms; the
sampler walks over raw slip fields instead.  Every observable it records
(energies, cos((u(y) - u(x)) . v0) with v0 dual) is gauge invariant, so
their distribution is the same.
"""
from __future__ import annotations

import io
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from .complex import (DIRICHLET, FCC3D, CellComplex, LatticeSpec, basis, bond_coords,
                      build_complex)
from .energy import _dvec, bond_projector, stiffness
from .forms import PForm, SlipField, _dmat


class GibbsError(ValueError):
    pass


def slip_set(kind: str, radius: int = 1) -> np.ndarray:
    """Lattice vectors (integer coordinates) reachable by at most ``radius``
    nearest-neighbour steps, starting with 0."""
    if radius < 0:
        raise GibbsError("radius must be >= 0")
    b = bond_coords(kind)
    steps = np.concatenate([b, -b])
    out = {tuple(np.zeros(b.shape[1], dtype=np.int64))}
    frontier = set(out)
    for _ in range(radius):
        frontier = {tuple(np.array(v) + s) for v in frontier for s in steps} - out
        out |= frontier
    return np.array(sorted(out, key=lambda v: (sum(abs(c) for c in v), v)), dtype=np.int64)


@dataclass
class GibbsConfig:
    kind: str = FCC3D
    N: int = 4
    beta: float = 8.0
    w0: float = 1.0
    slip_radius: int = 1
    sweeps: int = 1000
    burn_in: int = 100
    seed: int = 0
    thin: int = 1

    def __post_init__(self):
        if not self.beta > 0:
            raise GibbsError("beta must be positive")
        if not self.w0 > 0:
            raise GibbsError("w0 must be positive")
        if self.sweeps < 1 or self.burn_in < 0 or self.thin < 1:
            raise GibbsError("sweeps >= 1, burn_in >= 0 and thin >= 1 required")

    def to_dict(self):
        return asdict(self)


def greedy_coloring(adj: sp.csr_matrix) -> np.ndarray:
    """Smallest-available-colour greedy colouring in index order."""
    n = adj.shape[0]
    color = -np.ones(n, dtype=np.int64)
    indptr, indices = adj.indptr, adj.indices
    for i in range(n):
        used = set(color[indices[indptr[i]:indptr[i + 1]]].tolist())
        c = 0
        while c in used:
            c += 1
        color[i] = c
    return color


@dataclass
class ChainState:
    u: np.ndarray                 # (n0, d) real displacements
    sigma: np.ndarray             # (n1, d) integer slip coordinates
    rng: np.random.Generator
    index: np.ndarray             # position of sigma(e) in the slip set
    proposed: int = 0
    accepted: int = 0
    sweeps: int = 0

    def acceptance(self) -> float:
        return self.accepted / self.proposed if self.proposed else float("nan")


class GibbsSampler:
    """Precomputed operators and colourings for one complex and config.

    ``active_edges`` (optional boolean mask) restricts the slip moves to a
    subset of edges; the others keep their initial slip.
    """

    def __init__(self, cx: CellComplex, config: GibbsConfig, slips=None, active_edges=None):
        if cx.spec.bc != DIRICHLET:
            raise GibbsError("the Gibbs measure needs Dirichlet boundary conditions "
                             "(otherwise u has flat directions)")
        self.cx, self.cfg = cx, config
        d = cx.dim
        self.d = d
        self.basis = basis(cx.kind)
        self.slips = slip_set(cx.kind, config.slip_radius) if slips is None else np.asarray(slips, dtype=np.int64)
        self.slip_vals = self.slips @ self.basis
        self.A = stiffness(cx)
        self.D = _dvec(cx, 0)
        self.DtB = (self.D.T @ bond_projector(cx)).tocsr()
        self.de = cx.edge_vectors()
        self.D1 = cx.incidence[1].tocsc()

        n0 = cx.n_cells(0)
        blocks = np.array([self.A[i * d:(i + 1) * d, i * d:(i + 1) * d].toarray() for i in range(n0)])
        if np.min(np.linalg.eigvalsh(blocks)) <= 1e-12:
            raise GibbsError("singular conditional covariance at some vertex")
        self.Minv = np.linalg.inv(blocks)
        self.chol = np.linalg.cholesky(self.Minv / config.beta)

        adj0 = (abs(cx.incidence[0]).T @ abs(cx.incidence[0])).tocsr()
        self.vcolor = greedy_coloring(adj0)
        self.vclasses = [np.nonzero(self.vcolor == c)[0] for c in range(self.vcolor.max() + 1)]
        self.vrows = []
        for V in self.vclasses:
            rows = (V[:, None] * d + np.arange(d)[None]).ravel()
            self.vrows.append((rows, self.A[rows]))

        D1 = abs(cx.incidence[1])
        adj1 = (D1.T @ D1).tocsr()
        self.ecolor = greedy_coloring(adj1)
        active = np.ones(cx.n_cells(1), dtype=bool) if active_edges is None else np.asarray(active_edges, bool)
        self.eclasses = []
        for c in range(self.ecolor.max() + 1):
            E = np.nonzero((self.ecolor == c) & active)[0]
            if E.size == 0:
                continue
            sub = self.D1[:, E].tocoo()
            self.eclasses.append((E, sub.row, sub.col, sub.data.astype(float)))

    # -- state --------------------------------------------------------------
    def init_state(self, sigma=None, u=None) -> ChainState:
        cx = self.cx
        rng = np.random.Generator(np.random.Philox(self.cfg.seed))
        s = np.zeros((cx.n_cells(1), self.d), dtype=np.int64) if sigma is None else np.array(
            sigma.coeffs if isinstance(sigma, SlipField) else sigma, dtype=np.int64)
        u0 = np.zeros((cx.n_cells(0), self.d)) if u is None else np.array(
            u.values if isinstance(u, PForm) else u, dtype=float)
        lookup = {tuple(v): i for i, v in enumerate(self.slips.tolist())}
        try:
            index = np.array([lookup[tuple(v)] for v in s.tolist()], dtype=np.int64)
        except KeyError:
            raise GibbsError("initial slip field takes values outside the slip set") from None
        return ChainState(u0, s, rng, index)

    # -- energies -----------------------------------------------------------
    def bond_energy(self, st: ChainState) -> float:
        r = np.sum(((self.D @ st.u.ravel()).reshape(-1, self.d) - st.sigma @ self.basis) * self.de, axis=1)
        return 0.5 * float(r @ r)

    def charges(self, st: ChainState) -> np.ndarray:
        return (self.cx.incidence[1] @ st.sigma) @ self.basis

    def core_energy(self, st: ChainState) -> float:
        q = self.charges(st)
        return self.cfg.w0 * float(np.sum(q * q))

    # -- moves --------------------------------------------------------------
    def update_u(self, st: ChainState):
        d = self.d
        beta_rhs = self.DtB @ (st.sigma @ self.basis).ravel()
        u = st.u.ravel()
        for V, (rows, Arows) in zip(self.vclasses, self.vrows):
            grad = (Arows @ u - beta_rhs[rows]).reshape(-1, d)
            step = np.einsum("nij,nj->ni", self.Minv[V], grad)
            z = st.rng.standard_normal((len(V), d))
            new = u.reshape(-1, d)[V] - step + np.einsum("nij,nj->ni", self.chol[V], z)
            u.reshape(-1, d)[V] = new
        st.u = u.reshape(-1, d)

    def update_sigma(self, st: ChainState):
        du = (self.D @ st.u.ravel()).reshape(-1, self.d)
        q = self.charges(st)
        w0, beta = self.cfg.w0, self.cfg.beta
        for E, frow, ecol, sgn in self.eclasses:
            # uniform over the slip values other than the current one
            K = len(self.slips)
            pick = (st.index[E] + 1 + st.rng.integers(K - 1, size=len(E))) % K
            logu = np.log(st.rng.random(len(E)))
            old = st.sigma[E] @ self.basis
            new = self.slip_vals[pick]
            de = self.de[E]
            r_old = np.sum((du[E] - old) * de, axis=1)
            r_new = np.sum((du[E] - new) * de, axis=1)
            dH = 0.5 * (r_new ** 2 - r_old ** 2)
            delta = new - old
            qf = q[frow]
            qn = qf + sgn[:, None] * delta[ecol]
            dW = np.zeros(len(E))
            np.add.at(dW, ecol, w0 * (np.sum(qn * qn, axis=1) - np.sum(qf * qf, axis=1)))
            acc = logu < -beta * (dH + dW)
            st.proposed += len(E)
            st.accepted += int(acc.sum())
            if acc.any():
                st.sigma[E[acc]] = self.slips[pick[acc]]
                st.index[E[acc]] = pick[acc]
                hit = acc[ecol]
                np.add.at(q, frow[hit], sgn[hit, None] * delta[ecol[hit]])

    def sweep(self, st: ChainState) -> ChainState:
        self.update_u(st)
        if self.eclasses and len(self.slips) > 1:
            self.update_sigma(st)
        st.sweeps += 1
        return st

    # -- runs ---------------------------------------------------------------
    def run(self, st: ChainState | None = None) -> "ChainResult":
        st = self.init_state() if st is None else st
        cfg = self.cfg
        for _ in range(cfg.burn_in):
            self.sweep(st)
        st.proposed = st.accepted = 0
        us, H, W, sig = [], [], [], []
        for i in range(cfg.sweeps):
            self.sweep(st)
            if i % cfg.thin == 0:
                us.append(st.u.copy())
                H.append(self.bond_energy(st))
                W.append(self.core_energy(st))
                sig.append(st.sigma.copy())
        return ChainResult(self.cx, cfg, np.array(us), np.array(H), np.array(W), np.array(sig),
                           st.acceptance(), st)


def sweep(state: ChainState, sampler: GibbsSampler) -> ChainState:
    return sampler.sweep(state)


@dataclass
class OrderEstimate:
    mean: float
    stderr: float
    samples: int
    batches: int
    flagged: bool
    reason: str = ""

    def to_dict(self):
        return asdict(self)


def batched_means(x, batches=20, min_per_batch=5) -> OrderEstimate:
    """Mean and batch-means standard error of a time series.

    Flags the estimate when there are too few samples per batch or when the
    batch means are still strongly correlated (lag-1 correlation > 0.5).
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    per = n // batches
    if per < min_per_batch:
        return OrderEstimate(float(x.mean()) if n else float("nan"), float("nan"), n, 0, True,
                             f"only {n} samples for {batches} batches")
    bm = x[: per * batches].reshape(batches, per).mean(axis=1)
    se = float(bm.std(ddof=1) / np.sqrt(batches))
    flagged, reason = False, ""
    if bm.std() > 1e-12 * max(1.0, abs(float(bm.mean()))):
        c = np.corrcoef(bm[:-1], bm[1:])[0, 1]
        if c > 0.5:
            flagged, reason = True, f"batch means correlated (lag-1 {c:.2f}); run longer"
    return OrderEstimate(float(x.mean()), se, n, batches, flagged, reason)


@dataclass
class ChainResult:
    cx: CellComplex
    config: GibbsConfig
    u: np.ndarray                 # (samples, n0, d)
    H: np.ndarray
    W: np.ndarray
    sigma: np.ndarray             # (samples, n1, d)
    acceptance: float
    state: ChainState = field(repr=False)

    def observable(self, x, y, v0) -> np.ndarray:
        """cos((u(y) - u(x)) . v0) per sample; x, y integer coordinates."""
        ix = self.cx.cell_id(0, np.asarray(x))
        iy = self.cx.cell_id(0, np.asarray(y))
        if ix < 0 or iy < 0:
            raise GibbsError("x and y must be vertices of the box")
        return np.cos((self.u[:, iy] - self.u[:, ix]) @ np.asarray(v0, dtype=float))

    def observable_rb(self, x, y, v0) -> np.ndarray:
        """Rao-Blackwellised observable E[cos((u(y) - u(x)) . v0) | sigma].

        Given sigma, u is Gaussian with mean u*(sigma) = A^-1 d* B sigma and
        covariance (beta A)^-1, so the conditional mean is
        cos(<g, u*>) exp(-<g, A^-1 g> / 2 beta) with g = v0 (delta_y - delta_x).
        """
        from scipy.sparse.linalg import splu
        cx, d = self.cx, self.cx.dim
        ix = cx.cell_id(0, np.asarray(x))
        iy = cx.cell_id(0, np.asarray(y))
        if ix < 0 or iy < 0:
            raise GibbsError("x and y must be vertices of the box")
        g = np.zeros((cx.n_cells(0), d))
        g[iy] += v0
        g[ix] -= v0
        g = g.ravel()
        lu = splu(stiffness(cx).tocsc())
        Ag = lu.solve(g)
        damp = np.exp(-float(g @ Ag) / (2 * self.config.beta))
        # <g, A^-1 d* B s> = <B d A^-1 g, s>, one dot product per sample
        w = (bond_projector(cx) @ (_dvec(cx, 0) @ Ag)).reshape(-1, d) @ basis(cx.kind).T
        shift = np.einsum("sij,ij->s", self.sigma, w)
        return np.cos(shift) * damp

    def timeseries_csv(self, x=None, y=None, v0=None) -> str:
        buf = io.StringIO()
        obs = self.observable(x, y, v0) if x is not None else None
        buf.write("sweep,H_AO,W" + (",observable" if obs is not None else "") + "\r\n")
        for i in range(len(self.H)):
            row = [str(i * self.config.thin), repr(float(self.H[i])), repr(float(self.W[i]))]
            if obs is not None:
                row.append(repr(float(obs[i])))
            buf.write(",".join(row) + "\r\n")
        return buf.getvalue()


def estimate_order(chain: ChainResult, x, y, v0, batches=20, rao_blackwell=False) -> OrderEstimate:
    """Batched-means estimate of E cos((u(y) - u(x)) . v0).

    v0 = 0 gives exactly 1.  With ``rao_blackwell`` the displacement is
    integrated out analytically for each sampled slip field.
    """
    v0 = np.asarray(v0, dtype=float)
    if not np.any(v0):
        n = len(chain.H)
        return OrderEstimate(1.0, 0.0, n, batches, False, "v0 = 0")
    obs = chain.observable_rb(x, y, v0) if rao_blackwell else chain.observable(x, y, v0)
    return batched_means(obs, batches=batches)


def gaussian_oracle(cx: CellComplex, x, y, v0, beta) -> tuple[float, float]:
    """(<g, A^-1 g>, exp(-<g, A^-1 g> / 2 beta)) for g = v0 (delta_x - delta_y)
    on a Dirichlet box, by a direct sparse solve."""
    from scipy.sparse.linalg import spsolve
    d = cx.dim
    g = np.zeros((cx.n_cells(0), d))
    g[cx.cell_id(0, np.asarray(x))] += -np.asarray(v0, dtype=float)
    g[cx.cell_id(0, np.asarray(y))] += np.asarray(v0, dtype=float)
    sol = spsolve(stiffness(cx).tocsc(), g.ravel())
    val = float(g.ravel() @ sol)
    return val, float(np.exp(-val / (2 * beta)))


def relaxed_energy(cx: CellComplex, sigma_coeffs) -> float:
    """min over u of H(u, sigma), by a direct sparse solve."""
    from scipy.sparse.linalg import spsolve
    b = basis(cx.kind)
    s = (np.asarray(sigma_coeffs) @ b).ravel()
    Bm = bond_projector(cx)
    D = _dvec(cx, 0)
    rhs = D.T @ (Bm @ s)
    u = spsolve(stiffness(cx).tocsc(), rhs)
    r = D @ u - s
    return 0.5 * float(r @ (Bm @ r))


def toy_target(cx: CellComplex, edges, config: GibbsConfig, slips=None) -> tuple[np.ndarray, np.ndarray]:
    """Exact marginal law of sigma on a few active edges (others 0).

    Integrating out u leaves pi(sigma) proportional to
    exp(-beta (min_u H + W)), because the Gaussian normalisation does not
    depend on sigma.  Returns (states as slip indices, probabilities).
    """
    slips = slip_set(cx.kind, config.slip_radius) if slips is None else np.asarray(slips)
    edges = list(edges)
    grids = np.stack(np.meshgrid(*([np.arange(len(slips))] * len(edges)), indexing="ij"), -1).reshape(-1, len(edges))
    b = basis(cx.kind)
    logp = []
    for st in grids:
        s = np.zeros((cx.n_cells(1), cx.dim), dtype=np.int64)
        s[edges] = slips[st]
        q = (cx.incidence[1] @ s) @ b
        logp.append(-config.beta * (relaxed_energy(cx, s) + config.w0 * float(np.sum(q * q))))
    logp = np.array(logp)
    p = np.exp(logp - logp.max())
    return grids, p / p.sum()


def make_sampler(config: GibbsConfig, **kw) -> GibbsSampler:
    cx = build_complex(LatticeSpec(config.kind, config.N, DIRICHLET))
    return GibbsSampler(cx, config, **kw)
