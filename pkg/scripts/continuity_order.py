"""Continuity residual of the spectral free-packet run as dt is halved.

sigma0 = 1, 1024 nodes on [-40, 40); for states taken along the run, one
step of dt, dt/2, dt/4 is compared and the observed order printed.

    python scripts/continuity_order.py [--dt 1e-3]
"""
import argparse

import numpy as np

from bohmflow.analysis import continuity_residual
from bohmflow.analytic import GaussianParams, SuperpositionSpec
from bohmflow.grid import GridGeometry, PotentialSpec, initialize_grid, propagate

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--dt", type=float, default=1e-3)
    ap.add_argument("--v0", type=float, default=0.0)
    args = ap.parse_args()
    free = PotentialSpec("free")
    g = GridGeometry.line(-40, 40, 1024)
    snaps = propagate(initialize_grid(SuperpositionSpec.single(GaussianParams(v0=args.v0)), g), free,
                      1e-3, 10000, 500)
    dts = args.dt / np.array([1, 2, 4])
    print(f"{'t':>5} " + " ".join(f"R(dt={d:.2e})" for d in dts) + "   order(1) order(2) overall")
    for s in snaps[1:]:
        r = np.array([continuity_residual(s, propagate(s, free, d, 1, 1)[-1]) for d in dts])
        o = np.log2(r[:-1] / r[1:])
        print(f"{s.t:5.1f} " + " ".join(f"{v:14.3e}" for v in r)
              + f"   {o[0]:8.4f} {o[1]:8.4f} {0.5 * np.log2(r[0] / r[2]):7.4f}")
