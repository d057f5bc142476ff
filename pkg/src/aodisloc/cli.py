"""Command-line front end.

Every run writes one output directory holding CSV files and a
``manifest.json`` with the tool version, the resolved configuration, its
hash and a sha256 per output file.  Parameters come from an optional JSON
config file; command-line flags override it.

Exit codes: 0 success, 2 configuration or usage error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import io
import json
import sys
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from .complex import (DIRICHLET, FCC3D, NEUMANN, TRI2D, ComplexError, LatticeSpec,
                      build_complex, dual_basis)
from .energy import EnergyError, ao_energy, relax
from .forms import FormError, d
from .fourier import (FourierError, QuadratureError, capacitor_energy, capacitor_limit_constant,
                      dipole_energies, fit_log_slope, grain_wall_limit, spin_wave_constant)
from .gibbs import (GibbsConfig, GibbsError, GibbsSampler, estimate_order, gaussian_oracle)
from .grains import (GrainError, GrainSpec, ball_region, boundary_bond_count,
                     bounded_representative, build_grain)
from .linalg import SolverError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "dipole-scan": {"n_list": [64, 128, 256, 512, 1024, 2048], "orders": [8, 12], "max_error": None},
    "rs-scan": {"m_list": [4, 8, 16, 32, 64], "capacitor": False, "n": 512, "orders": [10, 16],
                "max_error": None},
    "grain-demo": {"N": 24, "radius": 7.0, "scale": 0.2, "bc": NEUMANN},
    "mc": {"kind": FCC3D, "N": 4, "beta": 8.0, "w0": 1.0, "slip_radius": 1, "sweeps": 1000,
           "burn_in": 100, "seed": 0, "thin": 1, "x": None, "y": None, "v0": 0,
           "batches": 20},
}


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def csv_text(header, rows) -> str:
    """RFC 4180 style: CRLF line ends, floats written with repr."""
    def fmt(v):
        if isinstance(v, (bool, np.bool_)):
            return "true" if v else "false"
        if isinstance(v, (float, np.floating)):
            return repr(float(v))
        if isinstance(v, (int, np.integer)):
            return str(int(v))
        s = str(v)
        return '"' + s.replace('"', '""') + '"' if any(c in s for c in ',"\r\n') else s
    buf = io.StringIO()
    buf.write(",".join(header) + "\r\n")
    for r in rows:
        buf.write(",".join(fmt(v) for v in r) + "\r\n")
    return buf.getvalue()


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serialisable: {type(o)}")


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=_jsonable).encode()).hexdigest()


class Output:
    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files = {}

    def write(self, name: str, text: str):
        data = text.encode("utf-8")
        (self.root / name).write_bytes(data)
        self.files[name] = hashlib.sha256(data).hexdigest()

    def manifest(self, command: str, cfg: dict):
        m = {"tool": "aodisloc", "version": __version__, "command": command, "config": cfg,
             "config_sha256": config_hash(cfg), "outputs": dict(sorted(self.files.items()))}
        (self.root / "manifest.json").write_text(_dumps(m))
        return m


# ---------------------------------------------------------------------------
# config resolution
# ---------------------------------------------------------------------------

def _int_list(v, name):
    if isinstance(v, str):
        v = [p for p in v.replace(" ", "").split(",") if p]
    try:
        out = [int(x) for x in v]
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a list of integers") from None
    if not out:
        raise ConfigError(f"{name} must not be empty")
    if any(x < 1 for x in out):
        raise ConfigError(f"{name} entries must be >= 1")
    return out


def resolve_config(command: str, file_cfg: dict, overrides: dict) -> dict:
    cfg = dict(DEFAULTS[command])
    unknown = set(file_cfg) - set(cfg)
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {sorted(unknown)}")
    cfg.update(file_cfg)
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    if cfg.get("max_error") is not None:
        cfg["max_error"] = float(cfg["max_error"])
        if not cfg["max_error"] > 0:
            raise ConfigError("max_error must be positive")
    if command == "dipole-scan":
        cfg["n_list"] = _int_list(cfg["n_list"], "n_list")
        cfg["orders"] = _int_list(cfg["orders"], "orders")
    elif command == "rs-scan":
        cfg["m_list"] = _int_list(cfg["m_list"], "m_list")
        cfg["orders"] = _int_list(cfg["orders"], "orders")
        cfg["capacitor"] = bool(cfg["capacitor"])
        cfg["n"] = int(cfg["n"])
        if cfg["n"] < 1:
            raise ConfigError("n must be >= 1")
    elif command == "grain-demo":
        cfg["N"] = int(cfg["N"])
        cfg["radius"] = float(cfg["radius"])
        cfg["scale"] = float(cfg["scale"])
        if cfg["bc"] not in (DIRICHLET, NEUMANN):
            raise ConfigError("bc must be 'dirichlet' or 'neumann'")
    elif command == "mc":
        for k in ("N", "slip_radius", "sweeps", "burn_in", "seed", "thin", "batches"):
            cfg[k] = int(cfg[k])
        cfg["beta"], cfg["w0"] = float(cfg["beta"]), float(cfg["w0"])
        cfg["kind"] = str(cfg["kind"]).upper()
        if cfg["kind"] not in (FCC3D, TRI2D):
            raise ConfigError(f"unknown lattice kind {cfg['kind']!r}")
        dim = 3 if cfg["kind"] == FCC3D else 2
        for k in ("x", "y"):
            if cfg[k] is None:
                cfg[k] = [0] * dim if k == "x" else [cfg["N"] // 2] + [0] * (dim - 1)
            cfg[k] = [int(c) for c in (cfg[k].split(",") if isinstance(cfg[k], str) else cfg[k])]
            if len(cfg[k]) != dim:
                raise ConfigError(f"{k} needs {dim} integer coordinates")
        v0 = cfg["v0"]
        if isinstance(v0, str) and "," not in v0:
            v0 = int(v0)
        if isinstance(v0, (int, np.integer)):
            if not 0 <= v0 < len(dual_basis(cfg["kind"])):
                raise ConfigError("v0 index out of range")
        else:
            raise ConfigError("v0 is the index of a dual basis vector")
        cfg["v0"] = int(v0)
        if cfg["batches"] < 2:
            raise ConfigError("batches must be >= 2")
    return cfg


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _fit_summary(xs, ys):
    fit = fit_log_slope(xs, ys)
    dof = max(len(xs) - 2, 1)
    t = float(stats.t.ppf(0.975, dof))
    out = fit.to_dict()
    out["ci95"] = [fit.slope - t * fit.stderr, fit.slope + t * fit.stderr]
    return out


def _within(err, cfg):
    return cfg["max_error"] is None or err <= cfg["max_error"]


def _check_rows(rows, cfg, what):
    """Rows are written first; a failed row then turns into a numerical error."""
    bad = [r[0] for r in rows if not r[-1]]
    if bad:
        raise QuadratureError(f"{what}: error estimate above max_error={cfg['max_error']} for {bad}")


def cmd_dipole_scan(cfg: dict, out: Output):
    res = dipole_energies(cfg["n_list"], orders=tuple(cfg["orders"]))
    rows = [(n, r.value, r.error, _within(r.error, cfg)) for n, r in zip(cfg["n_list"], res)]
    out.write("dipole.csv", csv_text(["n", "E_dip", "err", "within_tol"], rows))
    summary = {"reference_slope": 1 / (2 * np.pi * np.sqrt(3))}
    if len(rows) >= 2:
        summary.update(_fit_summary([r[0] for r in rows], [r[1] for r in rows]))
    out.write("fit.json", _dumps(summary))
    _check_rows(rows, cfg, "dipole-scan")


def cmd_rs_scan(cfg: dict, out: Output):
    ms = cfg["m_list"]
    if cfg["capacitor"]:
        n = cfg["n"]
        rows = []
        for m in ms:
            r = capacitor_energy(n, m, orders=tuple(cfg["orders"]))
            rows.append((m, n, r.value / n, r.error / n, np.sqrt(3) / (2 * m * m),
                         capacitor_limit_constant(m), _within(r.error / n, cfg)))
        out.write("capacitor.csv", csv_text(
            ["m", "n", "E_per_n", "err", "reference_sqrt3_over_2m2", "continuum_limit", "within_tol"], rows))
        _check_rows(rows, cfg, "rs-scan --capacitor")
        return
    rows = []
    for m in ms:
        r = grain_wall_limit(m, orders=tuple(cfg["orders"]))
        rows.append((m, r.value, r.error, _within(r.error, cfg)))
    out.write("rs.csv", csv_text(["m", "E_grain_limit", "err", "within_tol"], rows))
    summary = {"reference_slope": 1 / (6 * np.pi)}
    if len(rows) >= 2:
        summary.update(_fit_summary(ms, [m * r[1] for m, r in zip(ms, rows)]))
    out.write("fit.json", _dumps(summary))
    _check_rows(rows, cfg, "rs-scan")


def grain_demo_data(cfg: dict):
    """Vertex displacements before and after relaxation, the charge support
    and the energy bound row for a disc-shaped 2D grain."""
    cx = build_complex(LatticeSpec(TRI2D, cfg["N"], cfg["bc"]))
    S = cfg["scale"] * np.array([[0.0, -1.0], [1.0, 0.0]])
    spec = GrainSpec(cx, ball_region(cx, cfg["radius"], strict=True), S)
    uS, sS = build_grain(spec)
    u, sigma = bounded_representative(uS, sS, spec)
    before = ao_energy(u, sigma)
    rel = relax(sigma, project_kernel=cfg["bc"] != DIRICHLET)
    q = d(sigma)
    return cx, spec, u, sigma, rel, before, q


def cmd_grain_demo(cfg: dict, out: Output):
    cx, spec, u, sigma, rel, before, q = grain_demo_data(cfg)
    coords = cx.vertex_coords()
    pos = cx.vertex_positions()
    for name, field in (("displacement_before.csv", u.values), ("displacement_after.csv", rel.u.values)):
        rows = [(int(c[0]), int(c[1]), p[0], p[1], f[0], f[1], bool(g))
                for c, p, f, g in zip(coords, pos, field, spec.mask)]
        out.write(name, csv_text(["n1", "n2", "x", "y", "u1", "u2", "in_grain"], rows))
    tab = cx.cells[2]
    nz = np.nonzero(np.any(q.coeffs != 0, axis=1))[0]
    out.write("charges.csv", csv_text(
        ["face", "n1", "n2", "type", "q1", "q2"],
        [(int(f), int(tab.anchors[f, 0]), int(tab.anchors[f, 1]), int(tab.types[f]),
          int(q.coeffs[f, 0]), int(q.coeffs[f, 1])) for f in nz]))
    nb = boundary_bond_count(spec)
    out.write("energy.csv", csv_text(
        ["grain_sites", "boundary_bonds", "energy_before", "energy_relaxed", "bound_6E1b", "bound_holds"],
        [(int(spec.mask.sum()), nb, before, rel.energy, 6.0 * nb, bool(before <= 6.0 * nb))]))


def cmd_mc(cfg: dict, out: Output):
    gc = GibbsConfig(kind=cfg["kind"], N=cfg["N"], beta=cfg["beta"], w0=cfg["w0"],
                     slip_radius=cfg["slip_radius"], sweeps=cfg["sweeps"],
                     burn_in=cfg["burn_in"], seed=cfg["seed"], thin=cfg["thin"])
    cx = build_complex(LatticeSpec(gc.kind, gc.N, DIRICHLET))
    x, y = np.array(cfg["x"]), np.array(cfg["y"])
    if cx.cell_id(0, x) < 0 or cx.cell_id(0, y) < 0:
        raise ConfigError("x and y must be vertices of the box")
    if np.array_equal(x, y):
        raise ConfigError("x and y must differ")
    v0 = dual_basis(gc.kind)[cfg["v0"]]
    sampler = GibbsSampler(cx, gc)
    chain = sampler.run()
    out.write("timeseries.csv", chain.timeseries_csv(x, y, v0))
    raw = estimate_order(chain, x, y, v0, batches=cfg["batches"])
    rb = estimate_order(chain, x, y, v0, batches=cfg["batches"], rao_blackwell=True)
    _, box_ref = gaussian_oracle(cx, x, y, v0, gc.beta)
    plateau = float("nan")
    if gc.kind == FCC3D:
        plateau = float(np.exp(-spin_wave_constant(v0).value / gc.beta))
    out.write("estimate.csv", csv_text(
        ["estimator", "mean", "stderr", "samples", "flagged", "reason", "spin_wave_box", "plateau_exp_minus_C0_over_beta"],
        [("raw", raw.mean, raw.stderr, raw.samples, raw.flagged, raw.reason, box_ref, plateau),
         ("rao_blackwell", rb.mean, rb.stderr, rb.samples, rb.flagged, rb.reason, box_ref, plateau)]))
    h = hashlib.sha256()
    for a in (cx.cells[0].anchors, cx.cells[1].anchors, cx.cells[1].types):
        h.update(np.ascontiguousarray(a, dtype=np.int64).tobytes())
    out.write("chain.json", _dumps({"config": gc.to_dict(), "seed": gc.seed, "complex_sha256": h.hexdigest(),
                                    "acceptance": chain.acceptance,
                                    "colours": {"vertices": len(sampler.vclasses),
                                                "edges": len(sampler.eclasses)}}))


COMMANDS = {"dipole-scan": cmd_dipole_scan, "rs-scan": cmd_rs_scan,
            "grain-demo": cmd_grain_demo, "mc": cmd_mc}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="aodisloc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"aodisloc {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", type=Path, help="JSON file with parameters")
        sp.add_argument("--out", type=Path, required=True, help="output directory")

    s = sub.add_parser("dipole-scan", help="dipole energy E_dip(n) and its log slope")
    common(s)
    s.add_argument("--n-list", dest="n_list", help="comma separated n values")
    s.add_argument("--orders", help="two Gauss-Legendre orders, e.g. 8,12")
    s.add_argument("--max-error", dest="max_error", type=float,
                   help="fail (exit 3) when a row's error estimate exceeds this")

    s = sub.add_parser("rs-scan", help="low-angle wall energy vs m (or scalar capacitor)")
    common(s)
    s.add_argument("--m-list", dest="m_list", help="comma separated m values")
    s.add_argument("--capacitor", action="store_const", const=True, default=None,
                   help="scalar-model wall pair E/n instead")
    s.add_argument("--n", type=int, help="wall separation for --capacitor")
    s.add_argument("--orders", help="two Gauss-Legendre orders")
    s.add_argument("--max-error", dest="max_error", type=float,
                   help="fail (exit 3) when a row's error estimate exceeds this")

    s = sub.add_parser("grain-demo", help="2D rotated grain before/after relaxation")
    common(s)
    s.add_argument("--N", type=int)
    s.add_argument("--radius", type=float)
    s.add_argument("--scale", type=float, help="rotation rate of the skew matrix")
    s.add_argument("--bc", choices=[DIRICHLET, NEUMANN])

    s = sub.add_parser("mc", help="Gibbs sampler estimate of the order parameter")
    common(s)
    s.add_argument("--kind", choices=[FCC3D, TRI2D])
    s.add_argument("--N", type=int)
    s.add_argument("--beta", type=float)
    s.add_argument("--w0", type=float)
    s.add_argument("--slip-radius", dest="slip_radius", type=int)
    s.add_argument("--sweeps", type=int)
    s.add_argument("--burn-in", dest="burn_in", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--thin", type=int)
    s.add_argument("--x", help="comma separated vertex coordinates")
    s.add_argument("--y", help="comma separated vertex coordinates")
    s.add_argument("--v0", type=int, help="index of the dual basis vector")
    s.add_argument("--batches", type=int)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_CONFIG
    ns = vars(args)
    command = ns.pop("command")
    cfg_path, out_dir = ns.pop("config"), ns.pop("out")
    try:
        file_cfg = {}
        if cfg_path is not None:
            file_cfg = json.loads(Path(cfg_path).read_text())
            if not isinstance(file_cfg, dict):
                raise ConfigError("config file must hold a JSON object")
        cfg = resolve_config(command, file_cfg, ns)
        if command == "mc":
            GibbsConfig(beta=cfg["beta"], w0=cfg["w0"], sweeps=cfg["sweeps"],
                        burn_in=cfg["burn_in"], thin=cfg["thin"])
    except (ConfigError, GibbsError, OSError, json.JSONDecodeError, ValueError, TypeError) as e:
        print(f"aodisloc: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    out = Output(out_dir)
    try:
        COMMANDS[command](cfg, out)
    except ConfigError as e:
        print(f"aodisloc: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ComplexError, GrainError) as e:
        print(f"aodisloc: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FourierError, SolverError, EnergyError, FormError, GibbsError,
            FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"aodisloc: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    out.manifest(command, cfg)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
