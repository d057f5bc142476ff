"""Fourier symbols and Brillouin-zone quadrature.

Conventions: u(x) = int_B dk/|B| u^(k) exp(-i k.x), so the stiffness
A = d* B d has the symbol A^(k) = 2 sum_l Pi_l (1 - cos k.b_l) with
Pi_l = b_l (x) b_l.  Every ``1 - cos`` is evaluated as ``2 sin^2(./2)`` to
keep relative accuracy near k = 0.

Quadrature is composite Gauss-Legendre.  Panels are refined geometrically
toward the singular point k = 0 (and its images) and are at most pi/n wide
when an oscillating factor cos(n k1) is present.  Each routine evaluates
the integral at two Gauss orders; the higher order is returned and the
difference is the error estimate.  Sums use numpy's pairwise summation in a
fixed node order, so results are reproducible bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import stats

from .complex import FCC3D, TRI2D, bond_vectors, dual_basis

SQ3 = np.sqrt(3.0)
TRI_AREA = 8 * np.pi ** 2 / SQ3
L2 = 2 * np.pi / SQ3          # half height of the centered 2D zone
C0_BOUND = (3 - np.sqrt(5.0)) / 4
DIPOLE_SLOPE = 1 / (2 * np.pi * SQ3)
RS_SLOPE = 1 / (6 * np.pi)
CAP_DIPOLE_SLOPE = SQ3 / (2 * np.pi)


class FourierError(ValueError):
    pass


class QuadratureError(FourierError):
    pass


@dataclass
class QuadResult:
    value: float
    error: float

    def to_dict(self):
        return {"value": self.value, "error": self.error}


def _sin2(x):
    """1 - cos x, computed as 2 sin^2(x/2)."""
    s = np.sin(0.5 * x)
    return 2 * s * s


# ---------------------------------------------------------------------------
# symbols
# ---------------------------------------------------------------------------

def symbol_A(kind: str, k) -> np.ndarray:
    """A^(k) for an array of wave vectors, shape (..., d) -> (..., d, d)."""
    b = bond_vectors(kind)
    k = np.asarray(k, dtype=float)
    if k.shape[-1] != b.shape[1]:
        raise FourierError(f"k must have {b.shape[1]} components for {kind}")
    a = _sin2(k @ b.T)                              # (..., L)
    P = b[:, :, None] * b[:, None, :]               # (L, d, d)
    return 2 * np.einsum("...l,lij->...ij", a, P)


def symbol_A0(k) -> np.ndarray:
    """Leading small-k part of the 3D symbol."""
    k = np.asarray(k, dtype=float)
    k2 = np.sum(k * k, axis=-1)[..., None, None]
    eye = np.eye(3)
    return 0.5 * k2 * eye + k[..., :, None] * k[..., None, :] - 0.5 * eye * (k * k)[..., None, :]


def alphas(k) -> np.ndarray:
    """alpha_l = 1 - cos(k . b_l) for the six FCC bonds."""
    return _sin2(np.asarray(k, dtype=float) @ bond_vectors(FCC3D).T)


_DET_TRIPLES = ((1, 2, 3), (1, 2, 4), (1, 2, 5), (1, 3, 4), (1, 3, 6), (1, 4, 5), (1, 4, 6),
                (1, 5, 6), (2, 3, 5), (2, 3, 6), (2, 4, 5), (2, 4, 6), (2, 5, 6), (3, 4, 5),
                (3, 4, 6), (3, 5, 6))


def det_formula_3d(k) -> np.ndarray:
    """det A^(k) as 4 times a sum of 16 products of three alphas."""
    a = alphas(k)
    return 4 * sum(a[..., i - 1] * a[..., j - 1] * a[..., l - 1] for i, j, l in _DET_TRIPLES)


def det_formula_2d(k) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    c1, c2 = np.cos(k[..., 0] / 2), np.cos(SQ3 * k[..., 1] / 2)
    return 3 * (c1 - c2) ** 2 + 6 * (1 - c1 * c2) * _sin2(k[..., 0])


def symbol_A_2d_closed(k) -> np.ndarray:
    """The 2D symbol written out in k1, k2."""
    k = np.asarray(k, dtype=float)
    k1, k2 = k[..., 0], k[..., 1]
    c = np.cos(k1 / 2) * np.cos(SQ3 * k2 / 2)
    off = SQ3 * np.sin(k1 / 2) * np.sin(SQ3 * k2 / 2)
    out = np.empty(k.shape[:-1] + (2, 2))
    out[..., 0, 0] = 3 - 2 * np.cos(k1) - c
    out[..., 0, 1] = out[..., 1, 0] = off
    out[..., 1, 1] = 3 - 3 * c
    return out


def is_singular(kind: str, k, tol=1e-12) -> np.ndarray:
    """True where k is congruent to 0 modulo the dual lattice."""
    b = bond_vectors(kind)[: (3 if kind == FCC3D else 2)]
    x = np.asarray(k, dtype=float) @ b.T / (2 * np.pi)
    return np.all(np.abs(x - np.round(x)) < tol, axis=-1)


@dataclass
class SymbolBounds:
    lam_min: float          # min of lambda_min(A0(k)) / k^2
    lam_max: float          # max of lambda_max(A0(k)) / k^2
    b0_min: float           # min of lambda_min(A0(k) - k^2/2) / k^2
    det_min: float          # min of det A^(k) on the grid (k != 0)
    det_formula_err: float  # max |det A^(k) - formula| / max(1, |det|)
    points: int

    def to_dict(self):
        return dict(self.__dict__)


def bz_grid(kind: str, L: int, centered=True) -> np.ndarray:
    """k = sum xi_j m_j on an L^d grid of xi, excluding xi = 0."""
    d = 3 if kind == FCC3D else 2
    m = dual_basis(kind)[:d]
    j = np.arange(L) / L
    if centered:
        j = np.where(j >= 0.5, j - 1.0, j)
    xi = np.stack(np.meshgrid(*([j] * d), indexing="ij"), axis=-1).reshape(-1, d)
    xi = xi[np.any(xi != 0, axis=1)]
    return xi @ m


def c0_bound_scan(L: int = 64) -> SymbolBounds:
    """Extreme eigenvalues of A0(k)/k^2 and det A^(k) over a BZ grid."""
    k = bz_grid(FCC3D, L)
    k2 = np.sum(k * k, axis=1)
    lam_min, lam_max, b0_min, det_min, det_err = np.inf, -np.inf, np.inf, np.inf, 0.0
    for s in range(0, len(k), 200_000):
        kk, qq = k[s:s + 200_000], k2[s:s + 200_000]
        w = np.linalg.eigvalsh(symbol_A0(kk)) / qq[:, None]
        lam_min = min(lam_min, w[:, 0].min())
        lam_max = max(lam_max, w[:, -1].max())
        b0_min = min(b0_min, w[:, 0].min() - 0.5)
        A = symbol_A(FCC3D, kk)
        det = np.linalg.det(A)
        det_min = min(det_min, det.min())
        det_err = max(det_err, np.max(np.abs(det - det_formula_3d(kk)) / np.maximum(1.0, np.abs(det))))
    return SymbolBounds(float(lam_min), float(lam_max), float(b0_min), float(det_min), float(det_err), len(k))


# ---------------------------------------------------------------------------
# the dipole function F(k)
# ---------------------------------------------------------------------------

_TB = bond_vectors(TRI2D)


def _w_vector(k):
    """(e^{i k.b2} - 1) b2 - (1 - e^{-i k.b3}) b3, shape (..., 2) complex."""
    p2 = k @ _TB[1]
    p3 = k @ _TB[2]
    e2 = 2j * np.sin(p2 / 2) * np.exp(0.5j * p2)         # e^{ip} - 1
    e3 = 2j * np.sin(p3 / 2) * np.exp(-0.5j * p3)        # 1 - e^{-ip}
    return e2[..., None] * _TB[1] - e3[..., None] * _TB[2]


def _F_raw(k):
    A = symbol_A(TRI2D, k)
    w = _w_vector(k)
    a, b, c = A[..., 0, 0], A[..., 0, 1], A[..., 1, 1]
    det = a * c - b * b
    y0 = (c * w[..., 0] - b * w[..., 1]) / det
    y1 = (a * w[..., 1] - b * w[..., 0]) / det
    return np.conj(w[..., 0]) * y0 + np.conj(w[..., 1]) * y1


def F_of_k(k) -> np.ndarray:
    """F(k) = conj(w) . A^(k)^{-1} w for the horizontal dipole; real and even."""
    k = np.asarray(k, dtype=float)
    if np.any(is_singular(TRI2D, k)):
        raise FourierError("F is singular at k = 0 mod the dual lattice")
    F = _F_raw(k)
    if np.max(np.abs(F.imag), initial=0.0) > 1e-10 * max(1.0, np.max(np.abs(F.real), initial=0.0)):
        raise FourierError("F(k) has a non-negligible imaginary part")
    return F.real


def two_minus_F(k1, k2) -> np.ndarray:
    return 2.0 - _F_raw(np.stack(np.broadcast_arrays(k1, k2), axis=-1)).real


def omega_gap(k) -> np.ndarray:
    """9 - |Omega(k)|^2 = 4 sum_l sin^2(k . b_l / 2)."""
    k = np.asarray(k, dtype=float)
    s = np.sin(0.5 * (k @ _TB.T))
    return 4 * np.sum(s * s, axis=-1)


def omega(k) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    return 1 + np.exp(-1j * (k @ _TB[1])) + np.exp(1j * (k @ _TB[2]))


# ---------------------------------------------------------------------------
# quadrature helpers
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _gl(q):
    x, w = np.polynomial.legendre.leggauss(q)
    return x, w


def gl_nodes(breaks, q):
    """Nodes and weights of composite Gauss-Legendre on the given breakpoints."""
    breaks = np.asarray(breaks, dtype=float)
    x, w = _gl(q)
    a, b = breaks[:-1, None], breaks[1:, None]
    h = 0.5 * (b - a)
    return (a + h * (x + 1)).ravel(), (h * w).ravel()


def geometric_breaks(a, b, scale_a=None, scale_b=None, max_width=None, levels=8):
    """Breakpoints on [a, b], dyadic toward each endpoint with a given scale.

    Near ``a`` the points a + scale_a * 2^j (j >= -levels) are inserted, and
    likewise below ``b``; remaining gaps are cut to at most ``max_width``.
    """
    pts = {a, b}
    half = 0.5 * (b - a)
    for end, sc, sgn in ((a, scale_a, 1), (b, scale_b, -1)):
        if sc is None or sc <= 0:
            continue
        t = sc * 2.0 ** -levels
        while t < half:
            pts.add(end + sgn * t)
            t *= 2
    pts = np.array(sorted(pts))
    if max_width:
        out = [pts[0]]
        for lo, hi in zip(pts[:-1], pts[1:]):
            n = int(np.ceil((hi - lo) / max_width - 1e-12))
            out.extend(lo + (hi - lo) * np.arange(1, n + 1) / n)
        pts = np.array(out)
    return pts


def _reduce(values, counts):
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    return np.add.reduceat(values, starts) if len(values) else np.zeros(len(counts))


# ---------------------------------------------------------------------------
# 2D: inner k2 integrals on the centered zone [-pi, pi) x [-L2, L2)
# ---------------------------------------------------------------------------

def _inner_k2(k1, func, q, symmetric=True):
    """int dk2 func(k1, k2) over [-L2, L2) for every k1 (geometric at |k1|)."""
    xs, ws, counts = [], [], []
    for a in np.atleast_1d(k1):
        br = geometric_breaks(0.0, L2, scale_a=abs(a), max_width=L2 / 4, levels=4)
        x, w = gl_nodes(br, q)
        if not symmetric:
            x, w = np.concatenate([-x[::-1], x]), np.concatenate([w[::-1], w]) * 0.5
        xs.append(x)
        ws.append(w)
        counts.append(len(x))
    X = np.concatenate(xs)
    K1 = np.repeat(np.atleast_1d(k1), counts)
    vals = np.empty(len(X))
    for s in range(0, len(X), 1 << 20):
        vals[s:s + (1 << 20)] = func(K1[s:s + (1 << 20)], X[s:s + (1 << 20)])
    return 2 * _reduce(vals * np.concatenate(ws), counts)


def dipole_inner(k1, q=12):
    """h(k1) = int dk2 (2 - F(k1, k2)) over the zone."""
    return _inner_k2(k1, two_minus_F, q)


def capacitor_inner(k1, q=12):
    """h_c(k1) = int dk2 / (9 - |Omega|^2) over the zone."""
    return _inner_k2(k1, lambda a, b: 1.0 / omega_gap(np.stack([a, b], axis=-1)), q)


def _fejer(n, k1):
    """(1 - cos n k) / (1 - cos k)."""
    s = np.sin(0.5 * k1)
    return np.where(np.abs(s) > 1e-300, (np.sin(0.5 * n * k1) / np.where(s == 0, 1, s)) ** 2, float(n * n))


def _outer_breaks(n_max, levels=6):
    return geometric_breaks(0.0, np.pi, scale_a=np.pi / n_max, max_width=np.pi / n_max, levels=levels)


def dipole_energies(ns, orders=(8, 12)) -> list:
    """E_dip(n) = (1 / 8|B|) int dk1 K_n(k1) h(k1) for every n in ``ns``.

    K_n = (1 - cos n k1)/(1 - cos k1); both k1 and k2 parities are used to
    integrate over a quarter of the zone.  Nodes are shared across n.
    """
    ns = np.atleast_1d(np.asarray(ns, dtype=int))
    if np.any(ns < 1):
        raise FourierError("n must be >= 1")
    br = _outer_breaks(int(ns.max()))
    res = []
    for q in orders:
        x, w = gl_nodes(br, q)
        h = dipole_inner(x, q)
        res.append([2 * np.sum(w * _fejer(n, x) * h) / (8 * TRI_AREA) for n in ns])
    lo, hi = np.array(res[0]), np.array(res[1])
    return [QuadResult(float(v), float(abs(v - u))) for v, u in zip(hi, lo)]


def dipole_energy(n, orders=(8, 12), max_error=None) -> QuadResult:
    r = dipole_energies([n], orders)[0]
    if max_error is not None and r.error > max_error:
        raise QuadratureError(f"E_dip({n}) = {r.value} with error estimate {r.error:.2e} > {max_error:.2e}")
    return r


def capacitor_dipole_energies(ns, orders=(8, 12)) -> list:
    """Scalar model: 3 int dk/|B| (1 - cos n k1) / (9 - |Omega|^2)."""
    ns = np.atleast_1d(np.asarray(ns, dtype=int))
    br = _outer_breaks(int(ns.max()))
    res = []
    for q in orders:
        x, w = gl_nodes(br, q)
        h = capacitor_inner(x, q)
        res.append([3 * 2 * np.sum(w * _sin2(n * x) * h) / TRI_AREA for n in ns])
    lo, hi = np.array(res[0]), np.array(res[1])
    return [QuadResult(float(v), float(abs(v - u))) for v, u in zip(hi, lo)]


# ---------------------------------------------------------------------------
# 2D: walls (sums over lines k2 = p_j)
# ---------------------------------------------------------------------------

def wall_lines(m: int) -> np.ndarray:
    """p_j = 2 pi j / (m sqrt 3), j = 0 .. 2m-1."""
    return 2 * np.pi * np.arange(2 * m) / (m * SQ3)


def _line_scales(m, j):
    """Distance of the line k2 = p_j to the singular points at k1 = 0 and 2 pi."""
    p = 2 * np.pi / (m * SQ3)
    s0 = p * min(j, 2 * m - j)
    s1 = p * abs(j - m)
    return s0, s1


def _line_integral(m, integrand, q, n=None):
    """sum_j int_0^{2 pi} dk1 integrand(k1, p_j)."""
    ps = wall_lines(m)
    total_x, total_y, total_w = [], [], []
    for j, p in enumerate(ps):
        s0, s1 = _line_scales(m, j)
        mw = np.pi / 8 if n is None else min(np.pi / 8, np.pi / n)
        br = geometric_breaks(0.0, 2 * np.pi, scale_a=s0 or (np.pi / n if n else None),
                              scale_b=s1 or (np.pi / n if n else None), max_width=mw, levels=10)
        x, w = gl_nodes(br, q)
        total_x.append(x)
        total_y.append(np.full_like(x, p))
        total_w.append(w)
    x, y, w = (np.concatenate(a) for a in (total_x, total_y, total_w))
    return float(np.sum(w * integrand(x, y)))


def _rs_integrand(k1, k2):
    return two_minus_F(k1, k2) / _sin2(k1)


def grain_wall_limit(m: int, orders=(10, 16)) -> QuadResult:
    """lim_n E_grain(n, m) = (1 / 32 sqrt3 pi m^2) sum_j int (2 - F)/(1 - cos k1)."""
    if m < 1:
        raise FourierError("m must be >= 1")
    pref = 1 / (32 * SQ3 * np.pi * m * m)
    v = [pref * _line_integral(m, _rs_integrand, q) for q in orders]
    return QuadResult(v[1], abs(v[1] - v[0]))


def grain_wall_energy_density(n: int, m: int, orders=(10, 16)) -> QuadResult:
    """E_grain(n, m) = (1 / 32 sqrt3 pi m^2) sum_j int K_n(k1) (2 - F(k1, p_j))."""
    if n < 1 or m < 1:
        raise FourierError("n and m must be >= 1")
    pref = 1 / (32 * SQ3 * np.pi * m * m)

    def f(k1, k2):
        return _fejer(n, k1) * two_minus_F(k1, k2)

    v = [pref * _line_integral(m, f, q, n=n) for q in orders]
    return QuadResult(v[1], abs(v[1] - v[0]))


def capacitor_energy(n: int, m: int, orders=(10, 16)) -> QuadResult:
    """Scalar-model wall pair: (sqrt3 / 4 pi m^2) sum_j int (1 - cos n k1)/(9 - |Omega|^2)."""
    if n < 1 or m < 1:
        raise FourierError("n and m must be >= 1")
    pref = SQ3 / (4 * np.pi * m * m)

    def f(k1, k2):
        return _sin2(n * k1) / omega_gap(np.stack([k1, k2], axis=-1))

    v = [pref * _line_integral(m, f, q, n=n) for q in orders]
    return QuadResult(v[1], abs(v[1] - v[0]))


def capacitor_limit_constant(m: int) -> float:
    """lim_n E/n for the scalar wall pair: int (1 - cos n k)/(3k^2/2) dk = 2 pi n / 3."""
    return SQ3 / (6 * m * m)


# ---------------------------------------------------------------------------
# 3D: spin-wave constant and the two-point function
# ---------------------------------------------------------------------------

def _phi(v0, k):
    """v0 . A^(k)^{-1} v0."""
    A = symbol_A(FCC3D, k)
    y = np.linalg.solve(A, np.broadcast_to(v0, k.shape)[..., None])[..., 0]
    return y @ v0


def _cube_rule(center, side, q):
    x, w = _gl(q)
    g = np.stack(np.meshgrid(x, x, x, indexing="ij"), axis=-1).reshape(-1, 3)
    wg = (w[:, None, None] * w[None, :, None] * w[None, None, :]).ravel()
    return center + 0.5 * side * g, wg * (0.5 * side) ** 3


def _shell_integral(v0, m, level, q):
    """Integral over the 26 outer sub-cubes of the cube of half-width 3^-level / 2."""
    side = 3.0 ** -level / 3
    offs = np.array([(i, j, l) for i in (-1, 0, 1) for j in (-1, 0, 1) for l in (-1, 0, 1)
                     if (i, j, l) != (0, 0, 0)], dtype=float)
    xs, ws = [], []
    for o in offs:
        x, w = _cube_rule(o * side, side, q)
        xs.append(x)
        ws.append(w)
    xi = np.concatenate(xs)
    return float(np.sum(np.concatenate(ws) * _phi(v0, xi @ m)))


def spin_wave_constant(v0, kind=FCC3D, levels=14, orders=(8, 12)) -> QuadResult:
    """C0 = int_B dk/|B| v0 . A^(k)^{-1} v0 in the xi-cube [-1/2, 1/2)^3.

    The cube is peeled into shells of 26 sub-cubes shrinking by 3 toward
    k = 0.  The integrand is homogeneous of degree -2 at small k, so each
    shell contributes a third of the previous one and the untouched core
    is replaced by half of the last shell.
    """
    if str(kind).upper() != FCC3D:
        raise FourierError("C0 is logarithmically divergent in two dimensions")
    v0 = np.asarray(v0, dtype=float)
    m = dual_basis(FCC3D)[:3]
    vals = []
    for q in orders:
        shells = [_shell_integral(v0, m, s, q) for s in range(levels)]
        vals.append(sum(shells) + 0.5 * shells[-1])
    return QuadResult(vals[1], abs(vals[1] - vals[0]))


def _periodic_green(v0, L):
    """(mean, ifft) of v0 . A^-1 v0 on the L^3 grid of the zone, xi = 0 dropped."""
    m = dual_basis(FCC3D)[:3]
    j = np.arange(L) / L
    phi = np.zeros((L,) * 3)
    for a in range(L):
        xi = np.stack(np.meshgrid([j[a]], j, j, indexing="ij"), axis=-1).reshape(-1, 3)
        sing = np.all(xi == 0, axis=1)
        xi[sing] = 0.5              # placeholder, zeroed below
        f = _phi(v0, xi @ m)
        f[sing] = 0.0
        phi[a] = f.reshape(L, L)
    return float(phi.mean()), np.fft.ifftn(phi).real


class TwoPointFunction:
    """G(r) = int dk/|B| v0 . A^-1 v0 (1 - cos k.r) on lattice displacements r.

    Riemann sums over L^3 and (L/2)^3 grids of the zone (xi = 0 left out;
    the integrand vanishes there to second order), each via one FFT.  The
    grid error behaves like r^2 / L^3, so the two are combined by
    Richardson extrapolation; ``error`` is the size of that correction.
    Reliable for |r| up to about L/8.  Then <g, A^{-1} g> = 2 G(x - y).
    """

    def __init__(self, v0, L=128):
        if L % 2:
            raise FourierError("L must be even")
        self.v0 = np.asarray(v0, dtype=float)
        self.L = int(L)
        self._fine = _periodic_green(self.v0, self.L)
        self._coarse = _periodic_green(self.v0, self.L // 2)

    @staticmethod
    def _eval(data, r, L):
        mean, corr = data
        r = r % L
        return mean - corr[r[:, 0], r[:, 1], r[:, 2]]

    def evaluate(self, r_coords):
        """(value, error) arrays for integer displacements."""
        r = np.atleast_2d(np.asarray(r_coords, dtype=np.int64))
        f = self._eval(self._fine, r, self.L)
        c = self._eval(self._coarse, r, self.L // 2)
        corr = (f - c) / 7.0
        return f + corr, np.abs(corr)

    def __call__(self, r_coords) -> np.ndarray:
        return self.evaluate(r_coords)[0]


@lru_cache(maxsize=8)
def _two_point(v0_key, L):
    return TwoPointFunction(np.array(v0_key), L)


def g_quadratic_form(x, y, v0, L=128) -> float:
    """<g, A^{-1} g> in infinite volume, g the dipole v0 (delta_x - delta_y)."""
    r = np.asarray(x, dtype=np.int64) - np.asarray(y, dtype=np.int64)
    return 2 * float(_two_point(tuple(np.asarray(v0, dtype=float)), L)(r)[0])


def spin_wave_correlation(x, y, v0, beta, L=128) -> float:
    """exp(-<g, A^{-1} g> / 2 beta) for integer lattice sites x != y."""
    if np.array_equal(np.asarray(x), np.asarray(y)):
        raise FourierError("x and y must differ")
    if beta <= 0:
        raise FourierError("beta must be positive")
    return float(np.exp(-g_quadratic_form(x, y, v0, L) / (2 * beta)))


# ---------------------------------------------------------------------------
# fits
# ---------------------------------------------------------------------------

@dataclass
class LogFit:
    slope: float
    intercept: float
    stderr: float
    max_residual: float

    def to_dict(self):
        return dict(self.__dict__)


def fit_log_slope(xs, ys) -> LogFit:
    """Least squares y = a + s log x."""
    lx = np.log(np.asarray(xs, dtype=float))
    ys = np.asarray(ys, dtype=float)
    r = stats.linregress(lx, ys)
    res = ys - (r.intercept + r.slope * lx)
    return LogFit(float(r.slope), float(r.intercept), float(r.stderr), float(np.max(np.abs(res))))
