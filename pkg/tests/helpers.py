"""Shared oracles for the test suite."""
from pathlib import Path

import numpy as np

from bohmflow.analytic import component_polar


def current_term_scale(spec, x, t):
    """(hbar/m)(|psi_1| + |psi_2|)(|grad psi_1| + |grad psi_2|).

    Bounds every product entering either the assembled or the direct
    two-packet current, so it is the natural yardstick for a relative error
    in J: J itself passes through zero where terms cancel, and in a far tail
    the direct evaluation carries round-off of size eps |psi_i| |grad psi_i|
    even when the exact term vanishes.
    """
    comps = component_polar(spec, x, t)
    amp = sum(np.sqrt(c["rho"]) for c in comps)
    # |grad psi| = |psi| |grad log psi| = sqrt(rho) |(grad sqrt rho)/sqrt rho + i grad S / hbar|
    grad = sum(np.hypot(c["grad_sqrt_rho"][..., 0], np.sqrt(c["rho"]) * c["grad_S"][..., 0] / spec.hbar)
               for c in comps)
    return spec.hbar / spec.mass * amp * grad


CONFIGS = Path(__file__).resolve().parents[1] / "configs"
