"""Left inversion of the transform by grid seeding plus projected Gauss-Newton.

The inverse is realized as a nearest-point map: queries are seeded at the
table node closest in value space and refined by damped Gauss-Newton on the
squared value-space residual, with finite-difference Jacobians and closed
form projection onto the closed region after every step. The refined
residual never exceeds the seed residual (steps are accepted only on
improvement), and the result always lies in the region.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .model import DomainSpec, ObserverDesign, SaturatedSystem
from .transform import TransformTable, eval_T_batch, fingerprint

__all__ = [
    "InverseQuery",
    "invert",
    "invert_batch",
    "gauss_newton_invert",
    "check_uniform_continuity",
    "UniformContinuityStats",
]

_MAX_ITER = 50
_FD_STEP = 1e-5
_LINE_SEARCH = (1.0, 0.5, 0.25, 0.125, 0.0625)


@dataclass(frozen=True)
class InverseQuery:
    z: np.ndarray
    x_hat: np.ndarray
    residual: float
    iterations: int


def _flatten_residual(vals: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Realified residuals, shape (N, 2mp)."""
    d = (vals - targets).reshape(len(vals), -1)
    return np.concatenate([d.real, d.imag], axis=1)


def gauss_newton_invert(fn_batch: Callable[[np.ndarray], np.ndarray],
                        domain: DomainSpec,
                        seeds: np.ndarray, targets: np.ndarray,
                        tol: float = 1e-8,
                        max_iter: int = _MAX_ITER) -> tuple:
    """Batched damped Gauss-Newton on x -> |fn(x) - target|^2, projected onto cl(O).

    ``fn_batch`` maps (N, n) states to (N, m, p) complex values; every
    iteration evaluates the whole stencil of all still-active queries in a
    single call. Returns (x_hat (N,n), residual (N,), iterations (N,)).
    """
    X = domain.project(np.atleast_2d(np.asarray(seeds, dtype=float)).copy())
    Z = np.asarray(targets, dtype=complex)
    N, n = X.shape
    res = np.linalg.norm(_flatten_residual(fn_batch(X), Z), axis=1)
    iters = np.zeros(N, dtype=int)
    active = np.ones(N, dtype=bool)

    for _ in range(max_iter):
        if not active.any():
            break
        ia = np.flatnonzero(active)
        Xa, Za = X[ia], Z[ia]
        h = _FD_STEP * (1.0 + np.linalg.norm(Xa, axis=1))

        # central-difference Jacobian: stencil of 2n evaluations per query
        stencil = np.repeat(Xa[:, None, :], 2 * n, axis=1)
        for j in range(n):
            stencil[:, 2 * j, j] += h
            stencil[:, 2 * j + 1, j] -= h
        vals = fn_batch(stencil.reshape(-1, n)).reshape(len(ia), 2 * n, -1)
        J = np.empty((len(ia), vals.shape[2] * 2, n))
        for j in range(n):
            col = (vals[:, 2 * j] - vals[:, 2 * j + 1]) / (2 * h[:, None])
            J[:, : vals.shape[2], j] = col.real
            J[:, vals.shape[2]:, j] = col.imag

        r = _flatten_residual(fn_batch(Xa).reshape(len(ia), *Z.shape[1:]), Za)
        steps = np.empty_like(Xa)
        for q in range(len(ia)):
            steps[q] = np.linalg.lstsq(J[q], -r[q], rcond=None)[0]

        improved = np.zeros(len(ia), dtype=bool)
        X_new = Xa.copy()
        res_new = res[ia].copy()
        for alpha in _LINE_SEARCH:
            pending = ~improved
            if not pending.any():
                break
            trial = domain.project(Xa[pending] + alpha * steps[pending])
            r_t = np.linalg.norm(
                _flatten_residual(fn_batch(trial).reshape(len(trial), *Z.shape[1:]),
                                  Za[pending]), axis=1)
            ok = r_t < res_new[pending]
            sub = np.flatnonzero(pending)[ok]
            X_new[sub] = trial[ok]
            res_new[sub] = r_t[ok]
            improved[sub] = True

        moved = np.linalg.norm(X_new - Xa, axis=1)
        X[ia] = X_new
        res[ia] = res_new
        iters[ia] += 1
        done = (~improved) | (moved < tol)
        active[ia[done]] = False

    return X, res, iters


def invert_batch(table: TransformTable, sat: SaturatedSystem,
                 design: ObserverDesign, zs: np.ndarray,
                 tol: float = 1e-8) -> list[InverseQuery]:
    """Invert a batch of value-space queries against a tabulated transform."""
    expected = fingerprint(sat.base.label, sat.domain, design,
                           table.horizon, table.quad_tol)
    if expected != table.fingerprint:
        raise ValueError(
            f"table fingerprint {table.fingerprint:#018x} does not match the "
            f"(model, domain, design) triple ({expected:#018x})"
        )
    zs = np.asarray(zs, dtype=complex)
    if zs.ndim == 2:
        zs = zs[None]
    seeds = table.nodes[[table.seed_index(z) for z in zs]]

    def fn_batch(X):
        return eval_T_batch(sat, design, X, table.horizon, table.quad_tol)

    X, res, iters = gauss_newton_invert(fn_batch, sat.domain, seeds, zs, tol=tol)
    return [InverseQuery(z=zs[i], x_hat=X[i], residual=float(res[i]),
                         iterations=int(iters[i])) for i in range(len(zs))]


def invert(table: TransformTable, sat: SaturatedSystem, design: ObserverDesign,
           z: np.ndarray, tol: float = 1e-8) -> InverseQuery:
    """Nearest-point inverse of one value-space query; result lies in cl(O)."""
    return invert_batch(table, sat, design, np.asarray(z, dtype=complex), tol=tol)[0]


@dataclass(frozen=True)
class UniformContinuityStats:
    violations: int
    samples: int
    worst_margin: float    # most negative slack observed (bound - error)

    @property
    def violation_fraction(self) -> float:
        return self.violations / max(self.samples, 1)


def check_uniform_continuity(table: TransformTable, sat: SaturatedSystem,
                             design: ObserverDesign, report,
                             samples: int = 50, seed: int = 0,
                             perturbation: float = 0.05,
                             tol: float = 1e-8) -> UniformContinuityStats:
    """Sampled check of the inverse-continuity bound.

    Draws states x in the region and perturbed queries z = T(x) + w, then
    verifies |invert(z) - x| <= rho(2 |T(x) - z|) + grid spacing, with rho
    the fitted injectivity envelope.
    """
    rng = np.random.default_rng(seed)
    dom = sat.domain
    if dom.kind == "box":
        xs = rng.uniform(dom.lower, dom.upper, size=(samples, dom.dim))
    else:
        raw = rng.normal(size=(samples, dom.dim))
        raw *= (rng.uniform(0, 1, size=(samples, 1)) ** (1 / dom.dim)
                * dom.radius / np.linalg.norm(raw, axis=1, keepdims=True))
        xs = dom.center + raw
    Tx = eval_T_batch(sat, design, xs, table.horizon, table.quad_tol)
    w = rng.normal(size=Tx.shape) + 1j * rng.normal(size=Tx.shape)
    w *= perturbation / np.maximum(
        np.linalg.norm(w.reshape(samples, -1), axis=1), 1e-300)[:, None, None]
    zs = Tx + w
    queries = invert_batch(table, sat, design, zs, tol=tol)
    spacing = table.node_spacing()
    violations = 0
    worst = np.inf
    for i, q in enumerate(queries):
        dist = np.linalg.norm((Tx[i] - zs[i]).ravel())
        bound = float(report.rho(2.0 * dist)) + spacing
        err = float(np.linalg.norm(q.x_hat - xs[i]))
        slack = bound - err
        worst = min(worst, slack)
        if slack < 0:
            violations += 1
    return UniformContinuityStats(violations=violations, samples=samples,
                                  worst_margin=float(worst))
