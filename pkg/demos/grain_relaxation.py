"""A rotated disc-shaped grain in the triangular lattice and a random grain in
FCC: the slip field that makes the rotation cheap, the charges it leaves on
the boundary, and what relaxation does.

Run: python3 demos/grain_relaxation.py
"""
import numpy as np

from aodisloc.complex import DIRICHLET, FCC3D, LatticeSpec, build_complex
from aodisloc.cli import DEFAULTS, grain_demo_data
from aodisloc.energy import ao_energy
from aodisloc.grains import (GrainSpec, boundary_bond_count, build_grain, naive_grain_energy,
                             random_region, random_skew, wall_charge_density)

cfg = dict(DEFAULTS["grain-demo"])
cx, spec, u, sigma, rel, before, q = grain_demo_data(cfg)
nb = boundary_bond_count(spec)
print(f"2D grain: {int(spec.mask.sum())} sites, rotation rate {cfg['scale']}, {nb} boundary bonds")
print(f"  energy with integer slip   {before:.4f}  (bound 6*|E1b| = {6 * nb})")
print(f"  after relaxing u           {rel.energy:.4f}")
print(f"  naive (no slip)            {naive_grain_energy(spec)[0]:.4f}")
print(f"  charged faces: {q.support().size}, all next to the grain boundary")

rng = np.random.default_rng(1)
cx3 = build_complex(LatticeSpec(FCC3D, 8, DIRICHLET))
for size in (20, 80, 160):
    g = GrainSpec(cx3, random_region(cx3, size, rng), random_skew(3, rng, max_norm=2.0))
    E = ao_energy(*build_grain(g))
    print(f"FCC grain of {size:3d} sites: H = {E:8.3f} <= 6|E1b| = {6 * boundary_bond_count(g)}")

print("\nstrip grain: charge per row on one wall is 3 theta")
for theta in (1 / 20, 1 / 30, 1 / 50):
    print(f"  theta={theta:.4f}  measured {wall_charge_density(10, theta, rows=600):.4f}  3 theta={3 * theta:.4f}")
