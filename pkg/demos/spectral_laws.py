"""Dipole energy, low-angle wall energy and the scalar capacitor, from the
Brillouin-zone quadratures.

Run: python3 demos/spectral_laws.py
"""
import numpy as np

from aodisloc.fourier import (capacitor_dipole_energies, capacitor_energy, capacitor_limit_constant,
                              dipole_energies, fit_log_slope, grain_wall_limit)

ns = [64, 128, 256, 512, 1024, 2048]
dip = dipole_energies(ns)
print("dipole energy E_dip(n)")
for n, r in zip(ns, dip):
    print(f"  n={n:5d}  E={r.value:.10f}  err={r.error:.1e}")
fit = fit_log_slope(ns, [r.value for r in dip])
print(f"  slope vs log n: {fit.slope:.7f}   (1/(2 pi sqrt3) = {1 / (2 * np.pi * np.sqrt(3)):.7f})")

ms = [4, 8, 16, 32, 64]
walls = [grain_wall_limit(m).value for m in ms]
print("\nwall-pair energy per unit length, n -> infinity")
for m, e in zip(ms, walls):
    print(f"  m={m:3d}  E={e:.8f}  m*E={m * e:.8f}")
fit = fit_log_slope(ms, [m * e for m, e in zip(ms, walls)])
print(f"  slope of m*E vs log m: {fit.slope:.7f}   (1/(6 pi) = {1 / (6 * np.pi):.7f})")
print("  the wall pair costs the same at any separation: a grain boundary, not a capacitor")

print("\nscalar (Coulomb) model for contrast")
cd = capacitor_dipole_energies(ns)
fit = fit_log_slope(ns, [r.value for r in cd])
print(f"  dipole slope: {fit.slope:.6f}   (sqrt3/(2 pi) = {np.sqrt(3) / (2 * np.pi):.6f})")
for n in (64, 128, 256, 512):
    e = capacitor_energy(n, 4).value
    print(f"  m=4 n={n:4d}  E/n={e / n:.6f}")
print(f"  continuum limit sqrt3/(6 m^2) = {capacitor_limit_constant(4):.6f}; "
      f"sqrt3/(2 m^2) = {np.sqrt(3) / 32:.6f} is three times larger")
