import numpy as np
import pytest

from kklobs.model import DomainSpec, ObserverDesign, SaturatedSystem, benchmark
from kklobs.transform import amplitude_bound, select_horizon, tabulate


# Box margins wide enough that the cutoff stays 1 along every backward
# harmonic flow started in the box (worst-case excursion ~0.414 from a
# corner of [-1.2, 1.2]^2).
HARMONIC_MARGINS = (0.25, 0.5, 0.8)


@pytest.fixture(scope="session")
def harmonic_sat():
    model = benchmark("harmonic")
    dom = DomainSpec.box([-1.2, -1.2], [1.2, 1.2], margins=HARMONIC_MARGINS)
    return SaturatedSystem(model, dom)


@pytest.fixture(scope="session")
def harmonic_design():
    return ObserverDesign(np.array([-1.0, -2.0], dtype=complex), ell=-0.5)


@pytest.fixture(scope="session")
def harmonic_table(harmonic_sat, harmonic_design):
    amp = amplitude_bound(harmonic_sat, harmonic_design)
    horizon = select_horizon(harmonic_design, amp, 1e-9)
    return tabulate(harmonic_sat, harmonic_design, 11, horizon, 1e-9)


def sylvester_oracle(lam, x):
    """Transform rows for the harmonic oscillator: -(lam*x1 + x2)/(1+lam^2)."""
    lam = np.asarray(lam, dtype=complex)[:, None]
    x = np.asarray(x, dtype=float)
    return -(lam * x[..., None, 0:1] + x[..., None, 1:2]) / (1.0 + lam ** 2)
