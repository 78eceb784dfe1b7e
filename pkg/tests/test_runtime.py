import numpy as np
import pytest

from kklobs.highgain import certify_gain
from kklobs.model import DomainSpec, ObserverDesign, SaturatedSystem, benchmark
from kklobs.runtime import (MODES, RescaleSpec, estimate_rate, lyapunov_trace,
                            simulate)
from kklobs.transform import eval_T


class TestExactMode:
    def test_matched_start_stays_matched(self, harmonic_sat, harmonic_design,
                                         harmonic_table):
        x0 = np.array([0.5, 0.3])
        z0 = eval_T(harmonic_sat, harmonic_design, x0, 25.0, 1e-11)
        tr = simulate("exact", harmonic_sat, harmonic_design, x0, z0=z0,
                      t_end=3.0, tol=1e-10, sample_dt=0.1,
                      table=harmonic_table)
        assert not tr.escaped
        assert np.max(tr.err_transform) <= 1e-7
        assert np.max(tr.err_state[1:]) <= 1e-4

    def test_zero_start_error_factors(self, harmonic_sat, harmonic_design,
                                      harmonic_table):
        # e(t) = exp(At) e(0) componentwise; at t=1 the moduli shrink by
        # e^-1 and e^-2 for the two filter poles.
        x0 = np.array([0.8, -0.2])
        tr = simulate("exact", harmonic_sat, harmonic_design, x0, t_end=1.0,
                      tol=1e-11, sample_dt=0.5, table=harmonic_table)
        e0 = tr.e[0]
        eT = tr.e[-1]
        pred = np.exp(harmonic_design.eigenvalues)[:, None] * e0
        assert np.max(np.abs(eT - pred)) <= 1e-8

    def test_lyapunov_monotone(self, harmonic_sat, harmonic_design,
                               harmonic_table):
        tr = simulate("exact", harmonic_sat, harmonic_design, [0.9, 0.1],
                      t_end=5.0, tol=1e-9, sample_dt=0.25,
                      table=harmonic_table)
        U, ok = lyapunov_trace(tr)
        assert ok
        assert U[0] > U[-1]

    def test_nan_series_without_table(self, harmonic_sat, harmonic_design):
        tr = simulate("exact", harmonic_sat, harmonic_design, [0.5, 0.5],
                      t_end=1.0, tol=1e-9, sample_dt=0.5)
        assert np.all(np.isnan(tr.xhat))
        assert np.all(np.isnan(tr.err_transform))
        with pytest.raises(ValueError):
            lyapunov_trace(tr)


class TestRescaledMode:
    def test_unit_gamma_matches_exact(self, harmonic_sat, harmonic_design,
                                      harmonic_table):
        kw = dict(x0=[0.4, -0.6], t_end=2.0, tol=1e-11, sample_dt=0.25,
                  table=harmonic_table)
        a = simulate("exact", harmonic_sat, harmonic_design, **kw)
        b = simulate("rescaled", harmonic_sat, harmonic_design,
                     rescale=RescaleSpec(lambda y: 1.0, label="unit"), **kw)
        assert np.max(np.abs(a.z - b.z)) <= 1e-10
        np.testing.assert_allclose(b.gamma_integral[-1], 2.0, atol=1e-8)

    def test_escape_tracking(self):
        dom = DomainSpec.box([-2.0], [2.0], margins=(0.1, 0.2, 0.4))
        sat = SaturatedSystem(benchmark("escape1d"), dom)
        design = ObserverDesign(np.array([-1.0 + 0j]), ell=-0.5)
        spec = RescaleSpec(lambda y: 1.0 + 2.0 * float(y[0]) ** 2,
                           label="quadratic")
        tr = simulate("rescaled", sat, design, [0.0], t_end=2.0, tol=1e-10,
                      sample_dt=0.01, rescale=spec)
        assert tr.escaped
        assert abs(tr.escape_time - np.pi / 2) <= 1e-3
        assert tr.gamma_integral[-1] > 1e3
        assert np.all(np.isfinite(tr.z.view(float)))

    def test_gamma_below_one_rejected(self, harmonic_sat, harmonic_design):
        spec = RescaleSpec(lambda y: 0.5, label="bad")
        with pytest.raises(ValueError):
            simulate("rescaled", harmonic_sat, harmonic_design, [0.1, 0.1],
                     t_end=0.5, tol=1e-8, rescale=spec)


@pytest.fixture(scope="module")
def duffing_setup():
    model = benchmark("duffing")
    dom = DomainSpec.box([-2.0, -2.0], [2.0, 2.0], margins=(0.25, 0.5, 0.8))
    design = ObserverDesign(np.array([-1.0, -2.0], dtype=complex), ell=-0.5)
    cert = certify_gain(model, dom, design, nodes_per_axis=9)
    return SaturatedSystem(model, dom), design, cert


class TestDefectFeedbackModes:
    def test_highgain_converges(self, duffing_setup):
        sat, design, cert = duffing_setup
        tr = simulate("highgain", sat, design.with_gain(2 * cert.k),
                      [0.9, -0.4], t_end=8.0, tol=1e-7, sample_dt=0.25,
                      cert=cert)
        assert not tr.escaped
        assert tr.err_state[-1] <= 1e-3
        _, ok = lyapunov_trace(tr)
        assert ok

    def test_cert_required(self, duffing_setup):
        sat, design, _ = duffing_setup
        with pytest.raises(ValueError):
            simulate("approx", sat, design, [0.1, 0.1], t_end=0.5)

    def test_override_warns(self, duffing_setup):
        sat, design, _ = duffing_setup
        with pytest.warns(UserWarning):
            simulate("approx", sat, design, [0.1, 0.1], t_end=0.2, tol=1e-6,
                     sample_dt=0.1, override_cert=True)

    def test_unknown_mode(self, duffing_setup):
        sat, design, _ = duffing_setup
        with pytest.raises(ValueError):
            simulate("luenberger", sat, design, [0.0, 0.0])
        assert "exact" in MODES


class TestRateEstimation:
    def test_single_mode_rate(self, harmonic_sat, harmonic_design,
                              harmonic_table):
        tr = simulate("exact", harmonic_sat, harmonic_design, [1.0, 0.0],
                      t_end=8.0, tol=1e-11, sample_dt=0.25,
                      table=harmonic_table)
        # slow pole dominates the tail
        assert estimate_rate(tr) == pytest.approx(-1.0, rel=0.01)

    def test_noise_floor_raises(self, harmonic_sat, harmonic_design,
                                harmonic_table):
        import dataclasses
        tr = simulate("exact", harmonic_sat, harmonic_design, [0.5, 0.3],
                      t_end=1.0, tol=1e-8, sample_dt=0.25,
                      table=harmonic_table)
        quiet = dataclasses.replace(
            tr, err_transform=np.full_like(tr.err_transform, 1e-15))
        with pytest.raises(ValueError):
            estimate_rate(quiet)


class TestCsvExport:
    def test_header_and_metadata(self, harmonic_sat, harmonic_design,
                                 harmonic_table, tmp_path):
        tr = simulate("exact", harmonic_sat, harmonic_design, [0.3, 0.3],
                      t_end=0.5, tol=1e-8, sample_dt=0.25,
                      table=harmonic_table, config_hash=0xDEAD, seed=5)
        path = tmp_path / "trace.csv"
        tr.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0].startswith("# config_hash=0x000000000000dead seed=5")
        assert lines[1] == ("t, x_1, x_2, re_z_11, im_z_11, re_z_21, im_z_21, "
                            "xhat_1, xhat_2, err_state, err_transform, U")
        assert len(lines) == 2 + len(tr.times)

    def test_gamma_column_present(self, harmonic_sat, harmonic_design, tmp_path):
        tr = simulate("rescaled", harmonic_sat, harmonic_design, [0.2, 0.2],
                      t_end=0.5, tol=1e-8, sample_dt=0.25)
        path = tmp_path / "trace.csv"
        tr.to_csv(path)
        header = path.read_text().splitlines()[1]
        assert header.endswith("gamma_integral")

    def test_summary_json_fields(self, harmonic_sat, harmonic_design,
                                 harmonic_table):
        import json
        tr = simulate("exact", harmonic_sat, harmonic_design, [0.3, -0.1],
                      t_end=1.0, tol=1e-8, sample_dt=0.25,
                      table=harmonic_table)
        doc = json.loads(tr.summary_json())
        assert doc["mode"] == "exact"
        assert doc["escaped"] is False
        assert doc["final_err_state"] is not None
