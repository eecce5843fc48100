"""Endpoint error of the trajectory integrator against the closed-form path
as the tolerance is tightened (free packet, 20 quantile starts, t in [0, 10 tau]).

    python scripts/integrator_tolerance.py
"""
import numpy as np

from bohmflow.analytic import GaussianParams, SuperpositionSpec, closed_form_trajectory
from bohmflow.trajectories import AnalyticProvider, integrate_ensemble, sample_initial_positions

if __name__ == "__main__":
    p = GaussianParams(v0=0.3)
    tau = float(p.tau)
    x0 = sample_initial_positions(p, 20)
    prov = AnalyticProvider(SuperpositionSpec.single(p))
    print(f"{'tol':>8} {'max |dx|':>10} {'dx / tol':>9}")
    for tol in 10.0 ** -np.arange(4, 13, 2):
        ens = integrate_ensemble(prov, x0, (0, 10 * tau), tol=tol, n_times=2)
        err = float(np.max(np.abs(ens.paths[:, -1] - closed_form_trajectory(p, x0, 10 * tau))))
        print(f"{tol:8.0e} {err:10.2e} {err / tol:9.2f}")
