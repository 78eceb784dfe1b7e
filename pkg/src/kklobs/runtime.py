"""Coupled plant/observer simulation and convergence diagnostics.

Four observer modes share one adaptive integration of the joint state:
``exact`` (stable filter driven by the injected output), ``approx`` and
``highgain`` (same filter plus the defect feedback evaluated at the current
inverse estimate, at unit and selected gain respectively), and ``rescaled``
(filter right-hand side multiplied by an output-dependent factor gamma >= 1,
with the integral of gamma carried as a diagnostic co-state). The plant
always runs the unmodified drift; convergence claims only make sense while
it stays in the region, and finite escape truncates the trace.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .highgain import GainCert, approx_error_batch, build_Ta_batch
from .inversion import gauss_newton_invert, invert_batch
from .model import ObserverDesign, SaturatedSystem
from .numerics import as_complex, as_real, integrate, solve_lyapunov
from .transform import TransformTable, eval_T_batch

__all__ = [
    "SimTrace",
    "RescaleSpec",
    "simulate",
    "estimate_rate",
    "lyapunov_trace",
    "MODES",
]

MODES = ("exact", "approx", "highgain", "rescaled")
_DEFAULT_SAMPLE_DT = 0.01


@dataclass(frozen=True)
class RescaleSpec:
    """Output-dependent time rescaling gamma(y) >= 1 with a provenance note.

    The growth-domination hypothesis behind the rescaled observer is the
    caller's obligation and cannot be checked here; gamma >= 1 is verified
    on every queried output.
    """

    gamma: Callable[[np.ndarray], float]
    note: str = "user-supplied"
    label: str = "custom"


@dataclass(frozen=True)
class SimTrace:
    """Shared-time-axis simulation record of plant, observer and estimates."""

    mode: str
    times: np.ndarray                  # (N,)
    x: np.ndarray                      # (N, n)
    z: np.ndarray                      # (N, m, p) complex
    xhat: np.ndarray                   # (N, n); NaN when no inverse is available
    err_state: np.ndarray              # (N,) |xhat - x|
    err_transform: np.ndarray          # (N,) |T(x) - z| (or the approximate T)
    U: np.ndarray                      # (N,) Lyapunov values, NaN when unavailable
    e: np.ndarray                      # (N, m, p) complex transform-space error
    gamma_integral: Optional[np.ndarray] = None   # (N,) rescaled mode only
    escaped: bool = False
    escape_time: Optional[float] = None
    tol: float = 1e-9
    config_hash: int = 0
    seed: int = 0

    @property
    def t_final(self) -> float:
        return float(self.times[-1])

    def to_csv(self, path) -> None:
        """Delimited export; one comment line binds the trace to its scenario."""
        n = self.x.shape[1]
        m, p = self.z.shape[1], self.z.shape[2]
        cols = ["t"]
        cols += [f"x_{i}" for i in range(1, n + 1)]
        for i in range(1, m + 1):
            for j in range(1, p + 1):
                cols += [f"re_z_{i}{j}", f"im_z_{i}{j}"]
        cols += [f"xhat_{i}" for i in range(1, n + 1)]
        cols += ["err_state", "err_transform", "U"]
        if self.gamma_integral is not None:
            cols.append("gamma_integral")
        zr = as_real(self.z).reshape(len(self.times), -1)
        blocks = [self.times[:, None], self.x, zr, self.xhat,
                  self.err_state[:, None], self.err_transform[:, None],
                  self.U[:, None]]
        if self.gamma_integral is not None:
            blocks.append(self.gamma_integral[:, None])
        data = np.concatenate(blocks, axis=1)
        header = ", ".join(cols)
        with open(path, "w") as fh:
            fh.write(f"# config_hash={self.config_hash:#018x} seed={self.seed} "
                     f"mode={self.mode}\n")
            fh.write(header + "\n")
            np.savetxt(fh, data, fmt="%.17g", delimiter=", ")

    def summary(self) -> dict:
        out = {
            "mode": self.mode,
            "t_final": self.t_final,
            "escaped": self.escaped,
            "escape_time": self.escape_time,
            "final_err_state": _last_finite(self.err_state),
            "final_err_transform": _last_finite(self.err_transform),
            "config_hash": self.config_hash,
            "seed": self.seed,
        }
        if self.gamma_integral is not None:
            out["gamma_integral"] = float(self.gamma_integral[-1])
        try:
            out["rate"] = estimate_rate(self)
        except ValueError:
            out["rate"] = None
        return out

    def summary_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True, indent=2)


def _last_finite(series: np.ndarray):
    fin = series[np.isfinite(series)]
    return float(fin[-1]) if len(fin) else None


def _ta_inverter(sat: SaturatedSystem, design: ObserverDesign):
    """Warm-started closed-form-transform inverter for the defect feedback.

    Runs inside the observer right-hand side, so it is tuned for a stream
    of nearby queries: the estimate and the finite-difference Jacobian are
    carried over between calls, and the Jacobian is refreshed only when a
    step fails to reduce the residual.
    """
    dom = sat.domain
    n = sat.base.n
    x_start = np.asarray(dom.project(
        np.zeros(n) if dom.kind == "ball" else
        0.5 * (dom.lower + dom.upper)), dtype=float)
    state = {"x": x_start, "J": None}

    def fn_batch(X):
        return build_Ta_batch(sat.base, design, X)

    def residual(x, z):
        d = (fn_batch(x[None])[0] - z).ravel()
        return np.concatenate([d.real, d.imag])

    def jacobian(x):
        h = 1e-6 * (1.0 + np.abs(x))
        stencil = np.repeat(x[None], 2 * n, axis=0)
        for j in range(n):
            stencil[2 * j, j] += h[j]
            stencil[2 * j + 1, j] -= h[j]
        vals = fn_batch(stencil).reshape(2 * n, -1)
        J = np.empty((vals.shape[1] * 2, n))
        for j in range(n):
            col = (vals[2 * j] - vals[2 * j + 1]) / (2 * h[j])
            J[: vals.shape[1], j] = col.real
            J[vals.shape[1]:, j] = col.imag
        return J

    def invert_one(z: np.ndarray) -> np.ndarray:
        x = state["x"]
        if state["J"] is None:
            state["J"] = jacobian(x)
        r = residual(x, z)
        best = float(np.linalg.norm(r))
        refreshed = False
        for _ in range(25):
            step = np.linalg.lstsq(state["J"], -r, rcond=None)[0]
            moved = False
            for alpha in (1.0, 0.5, 0.25, 0.125, 0.0625):
                trial = dom.project(x + alpha * step)
                r_t = residual(trial, z)
                nrm = float(np.linalg.norm(r_t))
                if nrm < best:
                    x, r, best, moved = trial, r_t, nrm, True
                    break
            if not moved:
                if refreshed:
                    break
                state["J"] = jacobian(x)
                refreshed = True
                continue
            if np.linalg.norm(alpha * step) < 1e-11:
                break
        state["x"] = x
        return x

    return fn_batch, invert_one


def simulate(mode: str, sat: SaturatedSystem, design: ObserverDesign,
             x0, z0=None, t_end: float = 10.0, tol: float = 1e-9,
             sample_dt: float = _DEFAULT_SAMPLE_DT,
             table: Optional[TransformTable] = None,
             cert: Optional[GainCert] = None,
             rescale: Optional[RescaleSpec] = None,
             override_cert: bool = False,
             invert_tol: float = 1e-8,
             config_hash: int = 0, seed: int = 0) -> SimTrace:
    """Co-integrate the plant and the observer and measure the errors.

    ``table`` supplies the exact transform (and its inverse) for the exact
    and rescaled modes; without it those series are NaN. The approx and
    highgain modes require a satisfied certificate unless ``override_cert``
    (which only warns). Estimates are sampled every ``sample_dt`` time
    units, decoupled from the integrator steps.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if mode in ("approx", "highgain"):
        if cert is None or not cert.satisfied:
            if not override_cert:
                raise ValueError(
                    f"mode {mode!r} requires a satisfied gain certificate "
                    f"(pass override_cert=True to simulate anyway)")
            warnings.warn("simulating an uncertified defect-feedback observer",
                          stacklevel=2)
    if mode == "rescaled" and rescale is None:
        rescale = RescaleSpec(gamma=lambda y: 1.0, note="default", label="unit")

    x0 = np.asarray(x0, dtype=float).ravel()
    n = sat.base.n
    m = design.m
    y0 = np.atleast_1d(sat.output(x0))
    p = len(np.atleast_1d(np.asarray(design.b(y0))))
    if z0 is None:
        z0 = np.zeros((m, p), dtype=complex)
    z0 = np.asarray(z0, dtype=complex).reshape(m, p)

    k_eff = design.k if mode == "highgain" else 1.0
    lam_eff = k_eff * design.eigenvalues
    if mode == "exact" and table is not None and table.fingerprint == 0:
        raise ValueError("table carries no fingerprint")

    fn_ta, invert_ta = _ta_inverter(sat, design.with_gain(k_eff)
                                    if k_eff != design.k else design)
    ta_design = design.with_gain(k_eff) if k_eff != design.k else design

    def rhs(v):
        x = v[:n]
        z = as_complex(v[n:n + 2 * m * p]).reshape(m, p)
        dx = sat.base.drift(x)
        y = np.atleast_1d(sat.output(x))
        w = np.asarray(design.b(y), dtype=complex)
        dz = lam_eff[:, None] * z + w[None, :]
        if mode in ("approx", "highgain"):
            xh = invert_ta(z)
            dz = dz + approx_error_batch(sat.base, ta_design, xh[None])[0]
        extra = ()
        if mode == "rescaled":
            g = float(rescale.gamma(y))
            if g < 1.0:
                raise ValueError(f"rescaling gamma(y) = {g} < 1 at y = {y}")
            dz = g * dz
            extra = (np.array([g]),)
        return np.concatenate([np.asarray(dx, float).ravel(),
                               as_real(dz).ravel(), *extra])

    v0 = np.concatenate([x0, as_real(z0).ravel()]
                        + ([np.zeros(1)] if mode == "rescaled" else []))
    traj = integrate(rhs, v0, 0.0, float(t_end), tol)

    t_stop = traj.final_time
    ts = np.arange(0.0, t_end + 0.5 * sample_dt, sample_dt)
    ts = ts[ts <= t_stop + 1e-12]
    if len(ts) == 0 or ts[-1] < t_stop - 1e-12:
        ts = np.append(ts, t_stop)
    V = np.atleast_2d(traj.at(ts))
    X = V[:, :n]
    Z = as_complex(np.ascontiguousarray(V[:, n:n + 2 * m * p])).reshape(-1, m, p)
    gamma_int = V[:, -1] if mode == "rescaled" else None

    if mode in ("approx", "highgain"):
        Tx = build_Ta_batch(sat.base, ta_design, X)
        seeds = sat.domain.project(X)
        xhat, _, _ = gauss_newton_invert(
            lambda q: build_Ta_batch(sat.base, ta_design, q),
            sat.domain, seeds, Z, tol=invert_tol)
    elif table is not None:
        Tx = eval_T_batch(sat, design, X, table.horizon, table.quad_tol)
        queries = invert_batch(table, sat, design, Z, tol=invert_tol)
        xhat = np.stack([q.x_hat for q in queries])
    else:
        Tx = np.full_like(Z, np.nan)
        xhat = np.full_like(X, np.nan)

    E = Tx - Z
    err_transform = np.linalg.norm(E.reshape(len(ts), -1), axis=1)
    err_state = np.linalg.norm(xhat - X, axis=1)
    if np.all(np.isfinite(as_real(E))):
        lyap = solve_lyapunov(lam_eff)
        U = np.array([lyap.quadratic_form(e) for e in E])
    else:
        U = np.full(len(ts), np.nan)

    return SimTrace(mode=mode, times=ts, x=X, z=Z, xhat=xhat,
                    err_state=err_state, err_transform=err_transform,
                    U=U, e=E, gamma_integral=gamma_int,
                    escaped=traj.escaped, escape_time=traj.escape_time,
                    tol=tol, config_hash=config_hash, seed=seed)


def estimate_rate(trace: SimTrace, window: Optional[tuple] = None) -> float:
    """Least-squares slope of log |e(t)| over the window (default: last half).

    Raises when the error is at the noise floor (< 1e-13) throughout the
    window, where no rate is identifiable.
    """
    ts = trace.times
    err = trace.err_transform
    if window is None:
        window = (ts[0] + 0.5 * (ts[-1] - ts[0]), ts[-1])
    a, b = window
    mask = (ts >= a) & (ts <= b) & np.isfinite(err) & (err > 1e-13)
    if mask.sum() < 2:
        raise ValueError("transform-space error below 1e-13; rate unidentifiable")
    coef = np.polyfit(ts[mask], np.log(err[mask]), 1)
    return float(coef[0])


def lyapunov_trace(trace: SimTrace, tol: Optional[float] = None,
                   floor: Optional[float] = None) -> tuple:
    """Lyapunov series with a per-step monotonicity verdict.

    Verdict true iff U(t_{j+1}) <= U(t_j)(1 + 10 tol) + floor at every
    recorded step. The additive floor covers integration roundoff once U
    reaches the noise level (error per component scales like tol times the
    elapsed time, and U is quadratic in it); it defaults to that estimate.
    """
    tol = trace.tol if tol is None else tol
    U = trace.U
    if not np.all(np.isfinite(U)):
        raise ValueError("Lyapunov series unavailable for this trace")
    if floor is None:
        span = trace.times[-1] - trace.times[0]
        comps = trace.e.shape[1] * trace.e.shape[2]
        floor = comps * (10.0 * tol * max(span, 1.0)) ** 2
    ok = bool(np.all(U[1:] <= U[:-1] * (1.0 + 10.0 * tol) + floor))
    return U, ok
