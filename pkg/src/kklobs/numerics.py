"""Dense complex linear algebra helpers and the shared adaptive ODE engine.

The filter matrices are diagonal throughout, so the Lyapunov solve and the
matrix exponential are closed-form. The integrator is a Dormand-Prince 5(4)
embedded pair with PI step control, cubic-Hermite dense output and
finite-escape detection via step-size underflow. Error control targets
error-per-unit-time <= tol so that the global error over a horizon T stays
near tol*T and forward/backward round trips land within a few tol.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

__all__ = [
    "LyapunovSolution",
    "GainMatrices",
    "Trajectory",
    "solve_lyapunov",
    "gain_matrices",
    "integrate",
    "as_real",
    "as_complex",
]


class NonHurwitzError(ValueError):
    """Raised when a filter matrix has an eigenvalue with nonnegative real part."""


def as_real(z: np.ndarray) -> np.ndarray:
    """View a complex array as interleaved re/im float64 (last axis doubled)."""
    return np.ascontiguousarray(z, dtype=complex).view(np.float64)


def as_complex(v: np.ndarray) -> np.ndarray:
    """Inverse of :func:`as_real`."""
    return np.ascontiguousarray(v, dtype=np.float64).view(np.complex128)


@dataclass(frozen=True)
class LyapunovSolution:
    P: np.ndarray           # Hermitian (here diagonal real) m x m
    lam_max: float
    lam_min: float
    residual: float

    def quadratic_form(self, e: np.ndarray) -> float:
        """U(e) = sum over columns of conj(e_i)^T P e_i, for e of shape (m, p)."""
        e = np.atleast_2d(e)
        return float(np.real(np.einsum("ij,ik,kj->", np.conj(e), self.P, e)))


def solve_lyapunov(eigenvalues) -> LyapunovSolution:
    """Solve conj(A)^T P + P A = -I for diagonal A = diag(eigenvalues).

    For diagonal Hurwitz A the solution is the real diagonal matrix with
    entries -1/(2 Re lambda_i).
    """
    lam = np.atleast_1d(np.asarray(eigenvalues, dtype=complex))
    if np.any(lam.real >= 0):
        bad = lam[lam.real >= 0][0]
        raise NonHurwitzError(f"eigenvalue {bad} has nonnegative real part")
    diag = -1.0 / (2.0 * lam.real)
    P = np.diag(diag).astype(complex)
    A = np.diag(lam)
    residual = float(np.max(np.abs(np.conj(A).T @ P + P @ A + np.eye(len(lam)))))
    return LyapunovSolution(P=P, lam_max=float(diag.max()),
                            lam_min=float(diag.min()), residual=residual)


@dataclass(frozen=True)
class GainMatrices:
    S: np.ndarray
    K: np.ndarray
    S_inv: np.ndarray
    cond_S: float
    norm_S_inv: float   # spectral norm


def gain_matrices(eigenvalues, k: float) -> GainMatrices:
    """Inverse-power matrix S_ij = lambda_i^-j and gain ladder K = diag(k..k^m)."""
    lam = np.atleast_1d(np.asarray(eigenvalues, dtype=complex))
    if np.any(lam == 0):
        raise ValueError("eigenvalues must be nonzero")
    m = len(lam)
    if len(np.unique(lam)) != m:
        raise ValueError("repeated eigenvalues make S singular")
    if not k > 0:
        raise ValueError("gain k must be positive")
    j = np.arange(1, m + 1)
    S = lam[:, None] ** (-j[None, :])
    K = np.diag((float(k) ** j).astype(complex))
    S_inv = np.linalg.inv(S)
    return GainMatrices(S=S, K=K, S_inv=S_inv,
                        cond_S=float(np.linalg.cond(S)),
                        norm_S_inv=float(np.linalg.norm(S_inv, 2)))


@dataclass(frozen=True)
class Trajectory:
    """Accepted integration steps with derivatives for dense evaluation."""

    times: np.ndarray       # strictly monotone (increasing or decreasing)
    states: np.ndarray      # (N, d)
    derivs: np.ndarray      # (N, d) field values at the nodes
    escaped: bool = False
    escape_time: Optional[float] = None

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def final_time(self) -> float:
        return float(self.times[-1])

    def at(self, t) -> np.ndarray:
        """Dense output by cubic Hermite interpolation (4th-order accurate)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        ts = self.times
        forward = ts[-1] >= ts[0]
        key = ts if forward else -ts
        q = t if forward else -t
        idx = np.clip(np.searchsorted(key, q, side="right") - 1, 0, len(ts) - 2)
        t0, t1 = ts[idx], ts[idx + 1]
        h = t1 - t0
        s = np.where(h != 0, (t - t0) / np.where(h == 0, 1.0, h), 0.0)[:, None]
        y0, y1 = self.states[idx], self.states[idx + 1]
        f0, f1 = self.derivs[idx], self.derivs[idx + 1]
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        out = h00 * y0 + h10 * h[:, None] * f0 + h01 * y1 + h11 * h[:, None] * f1
        return out if out.shape[0] > 1 else out[0]


# Dormand-Prince 5(4) coefficients (FSAL).
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = _B5 - np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640,
                     -92097 / 339200, 187 / 2100, 1 / 40])

_SAFETY = 0.9
_TARGET = 0.5          # aim local error at 0.5*tol*|h| for round-trip headroom
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0


class IntegrationError(RuntimeError):
    pass


def integrate(field: Callable[[np.ndarray], np.ndarray], x0, t0: float, t1: float,
              tol: float = 1e-9, max_steps: int = 2_000_000) -> Trajectory:
    """Adaptive DP5(4) integration of the autonomous field from t0 to t1.

    t1 < t0 integrates backward. When the step size underflows (finite
    escape or a singular field) the trajectory is returned truncated with
    ``escaped`` set and ``escape_time`` the last valid time.
    """
    y = np.array(x0, dtype=float).ravel()
    t0, t1 = float(t0), float(t1)
    if not tol > 0:
        raise ValueError("tol must be positive")
    span = t1 - t0
    if span == 0.0:
        f = field(y)
        return Trajectory(np.array([t0]), y[None, :], np.asarray(f, float)[None, :])
    direction = 1.0 if span > 0 else -1.0
    hmax = abs(span)
    hmin = 1e-13 * max(1.0, abs(t0), abs(t1))

    ts = [t0]
    ys = [y.copy()]
    f = np.asarray(field(y), dtype=float).ravel()
    if not np.all(np.isfinite(f)):
        raise IntegrationError("field not finite at the initial state")
    fs = [f.copy()]

    h = direction * min(hmax, max(1e-3 * abs(span), hmin * 10))
    t = t0
    escaped = False
    prev_err = None
    reject_streak = []   # (|h|, err) of consecutive rejections

    for _ in range(max_steps):
        if (t1 - (t + h)) * direction < 0:
            h = t1 - t
        k = np.empty((7, len(y)))
        k[0] = f
        bad = False
        for i in range(1, 7):
            yi = y + h * (k[:i].T @ _A[i])
            fi = np.asarray(field(yi), dtype=float).ravel()
            if not np.all(np.isfinite(fi)):
                bad = True
                break
            k[i] = fi
        if not bad:
            y_new = y + h * (k.T @ _B5)
            err_vec = h * (k.T @ _E)
            scale = 1.0 + np.maximum(np.abs(y), np.abs(y_new))
            err = float(np.sqrt(np.mean((err_vec / scale) ** 2)))
            good = np.isfinite(err) and err <= _TARGET * tol * abs(h)
        else:
            err = np.inf
            good = False

        jump_accept = False
        if not good and np.isfinite(err):
            # A rejection streak where err scales linearly with h means the
            # field has a jump (e.g. an iterative feedback term): no step
            # size can satisfy error-per-unit-time there. Crossing the jump
            # costs an absolute error of only `err`, so accept the step.
            reject_streak.append((abs(h), err))
            if len(reject_streak) >= 3:
                hs = np.array([r[0] for r in reject_streak[-3:]])
                es = np.array([r[1] for r in reject_streak[-3:]])
                ratios = np.log(es[1:] / es[:-1]) - np.log(hs[1:] / hs[:-1])
                jump_accept = bool(np.all(np.abs(ratios) < 0.3))
                good = jump_accept

        if good:
            reject_streak.clear()
            t = t + h
            y = y_new
            f = k[6].copy()   # FSAL
            ts.append(t)
            ys.append(y.copy())
            fs.append(f.copy())
            if (t1 - t) * direction <= 0 or t == t1:
                break
            if jump_accept:
                # past the jump; regrow toward the pre-rejection step size
                h = direction * min(2.0 * abs(h), hmax)
                prev_err = None
                continue
            target = _TARGET * tol * abs(h)
            if err == 0.0:
                factor = _MAX_FACTOR
            else:
                factor = _SAFETY * (target / err) ** 0.2
                if prev_err is not None and prev_err > 0:
                    factor *= (prev_err / err) ** 0.08
                factor = min(max(factor, _MIN_FACTOR), _MAX_FACTOR)
            prev_err = err
            h = direction * min(abs(h) * factor, hmax)
        else:
            shrink = 0.25 if not np.isfinite(err) else \
                max(_MIN_FACTOR, _SAFETY * (_TARGET * tol * abs(h) / err) ** 0.2)
            h = h * shrink
            if abs(h) < hmin:
                escaped = True
                break
    else:
        raise IntegrationError(f"step budget {max_steps} exhausted at t={t}")

    return Trajectory(times=np.array(ts), states=np.array(ys), derivs=np.array(fs),
                      escaped=escaped, escape_time=(t if escaped else None))
