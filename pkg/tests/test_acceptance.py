"""End-to-end acceptance checks, one test per advertised guarantee.

Every test prints a PASS line with the measured figure of merit so the
suite doubles as a quick benchmark report when run with -s.
"""

import hashlib
import json

import numpy as np
import pytest

from conftest import sylvester_oracle
from kklobs.cli import main as cli_main
from kklobs.highgain import approx_error_batch, build_Ta_batch, certify_gain
from kklobs.injectivity import injectivity_modulus, sample_eigenvalues
from kklobs.inversion import invert_batch
from kklobs.model import DomainSpec, ObserverDesign, SaturatedSystem, benchmark
from kklobs.numerics import integrate
from kklobs.runtime import (RescaleSpec, estimate_rate, lyapunov_trace,
                            simulate)
from kklobs.transform import (amplitude_bound, eval_T, eval_T_batch,
                              select_horizon, tabulate)


def _vdp_setup(seed=0):
    model = benchmark("van_der_pol", mu=1.0)
    dom = DomainSpec.box([-3.0, -3.0], [3.0, 3.0], margins=(0.25, 0.5, 0.8))
    lam = sample_eigenvalues(2, -1.0, seed=seed, conjugate_closed=True)
    return SaturatedSystem(model, dom), ObserverDesign(lam, ell=-1.0)


def test_acceptance_1_sylvester_oracle():
    """Tabulated transform matches the linear-plant closed form."""
    sat = SaturatedSystem(
        benchmark("harmonic"),
        DomainSpec.box([-1.0, -1.0], [1.0, 1.0], margins=(0.25, 0.5, 0.8)))
    lam = np.array([-1.0, -2.0, -1.0 + 1j, -1.0 - 1j])
    design = ObserverDesign(lam, ell=-0.5)
    horizon = select_horizon(design, amplitude_bound(sat, design), 1e-9)
    grid = sat.domain.grid_nodes(21)
    values = eval_T_batch(sat, design, grid, horizon, 1e-9)
    oracle = sylvester_oracle(lam, grid)
    err = np.max(np.abs(values - oracle))
    assert err <= 1e-6
    print(f"PASS acceptance 1: Sylvester-oracle max error {err:.3g} <= 1e-6")


def test_acceptance_2_constant_oracle():
    """Zero-drift scalar plant: T(x) = -x / lambda from the closed integral."""
    sat = SaturatedSystem(
        benchmark("constant", n=1),
        DomainSpec.box([-2.0], [2.0], margins=(0.1, 0.2, 0.4)))
    design = ObserverDesign(np.array([-2.0 + 0j]), ell=-0.5)
    xs = np.linspace(-2.0, 2.0, 9)[:, None]
    vals = eval_T_batch(sat, design, xs, horizon=15.0, tol=1e-11)
    err = np.max(np.abs(vals[:, 0, 0] - xs[:, 0] / 2.0))
    assert err <= 1e-9
    print(f"PASS acceptance 2: constant-system max error {err:.3g} <= 1e-9")


def test_acceptance_3_edf_residual_van_der_pol():
    """Finite-difference defect of the defining identity at interior points."""
    sat, design = _vdp_setup(seed=0)
    horizon = select_horizon(design, amplitude_bound(sat, design), 1e-9)
    rng = np.random.default_rng(3)
    xs = rng.uniform(-2.5, 2.5, size=(50, 2))
    dt = 1e-4
    flows = np.stack([integrate(sat.base.drift, x, 0.0, dt, 1e-12).final_state
                      for x in xs])
    both = eval_T_batch(sat, design, np.concatenate([xs, flows]), horizon, 1e-8)
    Tx, Tx_dt = both[:50], both[50:]
    w = np.asarray(sat.output(xs), dtype=complex)[:, None, :]
    res = (Tx_dt - Tx) / dt - (design.eigenvalues[None, :, None] * Tx + w)
    worst = np.max(np.linalg.norm(res.reshape(50, -1), axis=1))
    assert worst <= 1e-3
    print(f"PASS acceptance 3: worst EDF residual {worst:.3g} <= 1e-3 "
          f"over 50 interior points")


def test_acceptance_4_error_identity_exact_mode():
    """Transform-space error of the exact observer obeys e(t) = exp(At) e(0)."""
    sat, design = _vdp_setup(seed=0)
    horizon = select_horizon(design, amplitude_bound(sat, design), 1e-9)
    table = tabulate(sat, design, 5, horizon, 1e-10)
    tr = simulate("exact", sat, design, [1.0, 0.5], t_end=8.0, tol=1e-10,
                  sample_dt=0.25, table=table)
    assert not tr.escaped
    pred = np.exp(design.eigenvalues[None, :, None] * tr.times[:, None, None])
    dev = np.max(np.abs(tr.e - pred * tr.e[0][None]))
    assert dev <= 1e-6
    rate = estimate_rate(tr)
    target = float(np.max(design.eigenvalues.real))
    assert abs(rate - target) <= 0.1 * abs(target)
    print(f"PASS acceptance 4: identity deviation {dev:.3g} <= 1e-6, "
          f"rate {rate:.4f} vs slowest pole {target:.4f}")


def test_acceptance_5_injectivity_and_round_trip():
    """Seeded filter draws stay injective; inversion recovers grid points."""
    model = benchmark("van_der_pol", mu=1.0)
    dom = DomainSpec.box([-3.0, -3.0], [3.0, 3.0], margins=(0.25, 0.5, 0.8))
    sat = SaturatedSystem(model, dom)
    positive = 0
    for seed in range(100):
        lam = sample_eigenvalues(2, -1.0, seed=seed, conjugate_closed=True)
        design = ObserverDesign(lam, ell=-1.0)
        horizon = select_horizon(design, amplitude_bound(sat, design), 1e-6)
        table = tabulate(sat, design, 5, horizon, 1e-6)
        if injectivity_modulus(table).modulus > 0:
            positive += 1
    assert positive >= 95

    sat, design = _vdp_setup(seed=0)
    horizon = select_horizon(design, amplitude_bound(sat, design), 1e-8)
    table = tabulate(sat, design, 9, horizon, 1e-8)
    interior = np.all(np.abs(table.nodes) < 3.0 - 1e-9, axis=1)
    nodes = table.nodes[interior]
    queries = invert_batch(table, sat, design, table.values[interior],
                           tol=1e-9)
    errors = np.array([np.linalg.norm(q.x_hat - x)
                       for q, x in zip(queries, nodes)])
    med = float(np.median(errors))
    assert med <= 1e-4
    print(f"PASS acceptance 5: modulus > 0 for {positive}/100 seeds, "
          f"round-trip median error {med:.3g} <= 1e-4")


def test_acceptance_6_highgain_certificate_and_convergence():
    """Small-gain certificate on Duffing, then convergence at twice the gain."""
    model = benchmark("duffing")
    dom = DomainSpec.box([-2.0, -2.0], [2.0, 2.0], margins=(0.25, 0.5, 0.8))
    design = ObserverDesign(np.array([-1.0, -2.0], dtype=complex), ell=-0.5)
    cert = certify_gain(model, dom, design, nodes_per_axis=15)
    assert cert.L <= 11.0 + 1e-9
    assert cert.satisfied and np.isfinite(cert.k)

    sat = SaturatedSystem(model, dom)
    rng = np.random.default_rng(6)
    terminal = []
    for x0 in rng.uniform(-1.2, 1.2, size=(10, 2)):
        tr = simulate("highgain", sat, design.with_gain(2 * cert.k), x0,
                      t_end=20.0, tol=1e-7, sample_dt=0.1, cert=cert)
        assert not tr.escaped
        assert np.max(np.abs(tr.x)) <= 2.0        # plant stayed in the region
        _, monotone = lyapunov_trace(tr)
        assert monotone
        assert tr.err_state[-1] <= 1e-2
        terminal.append(tr.err_state[-1])
    print(f"PASS acceptance 6: L = {cert.L:.3g} <= 11, k* = {cert.k:g}, "
          f"worst terminal error {max(terminal):.3g} <= 1e-2 at 2k*")


def test_acceptance_7_zero_defect_chain():
    """Triangular chain: zero defect, exact identity, advertised decay rate."""
    model = benchmark("integrator_chain", m=3)
    dom = DomainSpec.box([-1.0] * 3, [1.0] * 3, margins=(0.25, 0.5, 0.8))
    design = ObserverDesign(np.array([-1.0, -2.0, -3.0], dtype=complex),
                            ell=-0.5)
    cert = certify_gain(model, dom, design, nodes_per_axis=5)
    assert cert.N_analytic == 0.0 and cert.k == 1.0

    rng = np.random.default_rng(7)
    xs = rng.uniform(-0.9, 0.9, size=(20, 3))
    assert np.max(np.abs(approx_error_batch(model, design, xs))) == 0.0
    dt = 1e-4
    fwd = np.stack([integrate(model.drift, x, 0.0, dt, 1e-13).final_state
                    for x in xs])
    bwd = np.stack([integrate(model.drift, x, 0.0, -dt, 1e-13).final_state
                    for x in xs])
    lhs = (build_Ta_batch(model, design, fwd)
           - build_Ta_batch(model, design, bwd)) / (2 * dt)
    w = np.asarray(model.output(xs), dtype=complex)[:, None, :]
    rhs = design.eigenvalues[None, :, None] * build_Ta_batch(model, design, xs) + w
    residual = np.max(np.abs(lhs - rhs))
    assert residual <= 1e-10

    sat = SaturatedSystem(model, dom)
    tr = simulate("highgain", sat, design, [0.5, -0.3, 0.05], t_end=6.0,
                  tol=1e-10, sample_dt=0.25, cert=cert)
    rate = estimate_rate(tr)
    target = cert.k * float(np.max(design.eigenvalues.real))
    assert abs(rate - target) <= 0.1 * abs(target)
    print(f"PASS acceptance 7: defect 0, identity residual {residual:.3g} "
          f"<= 1e-10, decay rate {rate:.4f} vs {target:.4f}")


def test_acceptance_8_rescaled_observer(harmonic_sat, harmonic_design,
                                        harmonic_table):
    """Unit rescaling reproduces exact mode; quadratic rescaling survives escape."""
    kw = dict(x0=[0.4, -0.6], t_end=2.0, tol=1e-11, sample_dt=0.25,
              table=harmonic_table)
    a = simulate("exact", harmonic_sat, harmonic_design, **kw)
    b = simulate("rescaled", harmonic_sat, harmonic_design,
                 rescale=RescaleSpec(lambda y: 1.0, label="unit"), **kw)
    agree = np.max(np.abs(a.z - b.z))
    assert agree <= 1e-10

    dom = DomainSpec.box([-2.0], [2.0], margins=(0.1, 0.2, 0.4))
    sat = SaturatedSystem(benchmark("escape1d"), dom)
    design = ObserverDesign(np.array([-1.0 + 0j]), ell=-0.5)
    tr = simulate("rescaled", sat, design, [0.0], t_end=2.0, tol=1e-10,
                  sample_dt=0.01,
                  rescale=RescaleSpec(lambda y: 1.0 + 2.0 * float(y[0]) ** 2,
                                      label="quadratic"))
    assert tr.escaped
    gap = abs(tr.escape_time - np.pi / 2)
    assert gap <= 1e-3
    assert tr.gamma_integral[-1] > 1e3
    assert np.all(np.isfinite(tr.z.real)) and np.all(np.isfinite(tr.z.imag))
    print(f"PASS acceptance 8: unit-gamma agreement {agree:.3g} <= 1e-10, "
          f"escape detected within {gap:.3g} of pi/2, "
          f"time dilation {tr.gamma_integral[-1]:.3g} > 1e3")


SCENARIO = """\
version = 1

[model]
name = "harmonic"

[domain]
kind = "box"
lower = [-1.2, -1.2]
upper = [1.2, 1.2]
margins = [0.25, 0.5, 0.8]

[design]
mode = "exact"
ell = -0.5
eigenvalues_re = [-1.0, -2.0]
seed = 17

[grid]
nodes_per_axis = 7

[tolerances]
tail = 1e-6
quad = 1e-7
sim = 1e-8

[simulation]
x0 = [[1.0, 0.5]]
t_end = 5.0
sample_dt = 0.25
mode = "exact"
"""


def test_acceptance_9_determinism(tmp_path):
    """Fixed scenario and seed reproduce every artifact byte for byte."""
    cfg = tmp_path / "scenario.toml"
    cfg.write_text(SCENARIO)
    outs = [tmp_path / "run1", tmp_path / "run2"]
    for out in outs:
        assert cli_main(["bench", "--config", str(cfg),
                         "--out", str(out)]) == 0
    names = sorted(p.name for p in outs[0].iterdir())
    assert names == sorted(p.name for p in outs[1].iterdir())
    for name in names:
        d1 = hashlib.blake2b((outs[0] / name).read_bytes()).hexdigest()
        d2 = hashlib.blake2b((outs[1] / name).read_bytes()).hexdigest()
        assert d1 == d2, name
    doc = json.loads((outs[0] / "summary.json").read_text())
    assert doc["traces"][0]["escaped"] is False
    print(f"PASS acceptance 9: {len(names)} artifacts byte-identical "
          f"across reruns")
