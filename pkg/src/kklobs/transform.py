"""Evaluation and tabulation of the observer transform on the operating region.

The transform value at x is obtained by backward integration of the
saturated plant over a finite horizon followed by forward co-integration of
the stable linear filter driven by the injected output; by variation of
constants this equals the truncated defining integral, with an
exponentially small tail controlled by the horizon. Node evaluations are
batched through one shared adaptive integration.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .model import DomainSpec, ObserverDesign, SaturatedSystem
from .numerics import Trajectory, as_complex, as_real, integrate

__all__ = [
    "TransformTable",
    "eval_T",
    "eval_T_batch",
    "select_horizon",
    "amplitude_bound",
    "tabulate",
    "edf_residual",
    "fingerprint",
]

_MAGIC = b"KKLT"
_FORMAT_VERSION = 1


def fingerprint(model_label: str, domain: DomainSpec, design: ObserverDesign,
                horizon: float, tol: float) -> int:
    """64-bit hash binding a table to its model, region, design and accuracy."""
    text = "|".join([
        model_label,
        domain.descriptor(),
        design.descriptor(),
        repr(float(horizon)),
        repr(float(tol)),
    ])
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "big")


def amplitude_bound(sat: SaturatedSystem, design: ObserverDesign,
                    nodes_per_axis: int = 25) -> float:
    """Grid-sampled upper bound for the injected-output magnitude on the collar.

    Heuristic stand-in for the uncomputable tail constant: samples
    |ones_m * b(h(x))|_F = sqrt(m) |b(h(x))| over the outer-collar bounding box.
    """
    dom = sat.domain
    if dom.kind == "box":
        lo = dom.lower - dom.delta_zero
        hi = dom.upper + dom.delta_zero
    else:
        lo = dom.center - dom.radius - dom.delta_zero
        hi = dom.center + dom.radius + dom.delta_zero
    axes = [np.linspace(lo[i], hi[i], nodes_per_axis) for i in range(dom.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    w = np.abs(design.b(np.atleast_2d(sat.output(pts))))
    return float(np.sqrt(design.m) * np.max(np.linalg.norm(w, axis=-1)))


def select_horizon(design: ObserverDesign, amp_bound: float, tol: float) -> float:
    """Horizon making the geometric truncation tail of the integral <= tol."""
    if not (amp_bound > 0 and tol > 0):
        raise ValueError("amplitude bound and tolerance must be positive")
    rate = -design.slowest_decay
    return float(np.log(amp_bound / (tol * rate)) / rate)


def eval_T_batch(sat: SaturatedSystem, design: ObserverDesign, xs: np.ndarray,
                 horizon: float, tol: float) -> np.ndarray:
    """Transform values at a batch of states, shape (N, n) -> (N, m, p) complex.

    All points share one adaptive backward leg and one forward co-integration,
    so neighbouring evaluations carry correlated integration error.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    N, n = xs.shape
    m = design.m
    lam = design.eigenvalues
    y0 = sat.output(xs)
    p = np.atleast_2d(y0).shape[-1]

    def backward_field(v):
        return sat.field(v.reshape(N, n)).ravel()

    leg1 = integrate(backward_field, xs.ravel(), 0.0, -horizon, tol)
    if leg1.escaped:
        raise RuntimeError("backward leg escaped; saturated field should be bounded")
    xb = leg1.final_state.reshape(N, n)

    nx = N * n

    def coupled_field(v):
        x = v[:nx].reshape(N, n)
        z = as_complex(v[nx:]).reshape(N, m, p)
        dx = sat.field(x)
        w = np.asarray(design.b(np.atleast_2d(sat.output(x))), dtype=complex)
        dz = lam[None, :, None] * z + w[:, None, :]
        return np.concatenate([dx.ravel(), as_real(dz).ravel()])

    v0 = np.concatenate([xb.ravel(), np.zeros(2 * N * m * p)])
    leg2 = integrate(coupled_field, v0, -horizon, 0.0, tol)
    if leg2.escaped:
        raise RuntimeError("forward co-integration escaped")
    return as_complex(leg2.final_state[nx:]).reshape(N, m, p)


def eval_T(sat: SaturatedSystem, design: ObserverDesign, x,
           horizon: float, tol: float) -> np.ndarray:
    """Transform value at one state, shape (m, p) complex."""
    return eval_T_batch(sat, design, np.atleast_2d(x), horizon, tol)[0]


@dataclass(frozen=True)
class TransformTable:
    """Sampled transform over a tensor grid on the closed region."""

    axes: tuple               # per-axis node coordinates
    nodes: np.ndarray         # (N, n)
    values: np.ndarray        # (N, m, p) complex
    horizon: float
    quad_tol: float
    fingerprint: int
    config_hash: int = 0
    seed: int = 0

    @property
    def n(self) -> int:
        return self.nodes.shape[1]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def p(self) -> int:
        return self.values.shape[2]

    def node_spacing(self) -> float:
        return max(float(np.max(np.diff(ax))) if len(ax) > 1 else 0.0
                   for ax in self.axes)

    def seed_index(self, z: np.ndarray) -> int:
        """Grid node minimizing the value-space distance (ties: lowest index)."""
        d = np.linalg.norm((self.values - z[None]).reshape(len(self.nodes), -1), axis=1)
        return int(np.argmin(d))

    # Binary layout (all little-endian), documented in the README:
    #   magic 'KKLT', u32 version, u64 fingerprint, u64 config_hash, u64 seed,
    #   u32 n, u32 m, u32 p, u32 n_axes, u32 counts[n_axes],
    #   f64 horizon, f64 quad_tol,
    #   f64 lambda re/im pairs (m of them),
    #   f64 axis coordinates (concatenated),
    #   u64 n_nodes, f64 nodes row-major (n_nodes*n),
    #   f64 values row-major interleaved re/im (n_nodes*m*p*2).
    def save(self, path, eigenvalues: np.ndarray) -> None:
        lam = np.asarray(eigenvalues, dtype=complex)
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<I", _FORMAT_VERSION))
            fh.write(struct.pack("<QQQ", self.fingerprint, self.config_hash, self.seed))
            fh.write(struct.pack("<IIII", self.n, self.m, self.p, len(self.axes)))
            fh.write(struct.pack(f"<{len(self.axes)}I", *(len(ax) for ax in self.axes)))
            fh.write(struct.pack("<dd", self.horizon, self.quad_tol))
            fh.write(as_real(lam).astype("<f8").tobytes())
            for ax in self.axes:
                fh.write(np.asarray(ax, dtype="<f8").tobytes())
            fh.write(struct.pack("<Q", len(self.nodes)))
            fh.write(np.asarray(self.nodes, dtype="<f8").tobytes())
            fh.write(as_real(self.values).astype("<f8").tobytes())

    @classmethod
    def load(cls, path, expected_fingerprint: Optional[int] = None):
        """Load a table; returns (table, eigenvalues). Fingerprint mismatch is an error."""
        with open(path, "rb") as fh:
            if fh.read(4) != _MAGIC:
                raise ValueError(f"{path}: not a transform table file")
            (version,) = struct.unpack("<I", fh.read(4))
            if version != _FORMAT_VERSION:
                raise ValueError(f"{path}: unsupported format version {version}")
            fp, config_hash, seed = struct.unpack("<QQQ", fh.read(24))
            n, m, p, n_axes = struct.unpack("<IIII", fh.read(16))
            counts = struct.unpack(f"<{n_axes}I", fh.read(4 * n_axes))
            horizon, quad_tol = struct.unpack("<dd", fh.read(16))
            lam = as_complex(np.frombuffer(fh.read(16 * m), dtype="<f8"))
            axes = tuple(np.frombuffer(fh.read(8 * c), dtype="<f8") for c in counts)
            (n_nodes,) = struct.unpack("<Q", fh.read(8))
            nodes = np.frombuffer(fh.read(8 * n_nodes * n), dtype="<f8").reshape(n_nodes, n)
            raw = np.frombuffer(fh.read(16 * n_nodes * m * p), dtype="<f8")
            values = as_complex(raw).reshape(n_nodes, m, p)
        if expected_fingerprint is not None and fp != expected_fingerprint:
            raise ValueError(
                f"{path}: fingerprint {fp:#018x} does not match expected "
                f"{expected_fingerprint:#018x}"
            )
        table = cls(axes=axes, nodes=nodes, values=values, horizon=horizon,
                    quad_tol=quad_tol, fingerprint=fp,
                    config_hash=config_hash, seed=seed)
        return table, lam


def tabulate(sat: SaturatedSystem, design: ObserverDesign,
             nodes_per_axis, horizon: float, tol: float,
             config_hash: int = 0, seed: int = 0) -> TransformTable:
    """Evaluate the transform on a tensor grid covering the closed region."""
    dom = sat.domain
    axes = tuple(dom.grid_axes(nodes_per_axis))
    nodes = dom.grid_nodes(nodes_per_axis)
    values = eval_T_batch(sat, design, nodes, horizon, tol)
    if not np.all(np.isfinite(values)):
        bad = int(np.argwhere(~np.isfinite(values).all(axis=(1, 2)))[0, 0])
        raise RuntimeError(f"non-finite transform value at node {bad}")
    fp = fingerprint(sat.base.label, dom, design, horizon, tol)
    return TransformTable(axes=axes, nodes=nodes, values=values, horizon=horizon,
                          quad_tol=tol, fingerprint=fp,
                          config_hash=config_hash, seed=seed)


def edf_residual(sat: SaturatedSystem, design: ObserverDesign,
                 T_eval: Callable[[np.ndarray], np.ndarray], x, dt: float,
                 flow_tol: float = 1e-12) -> np.ndarray:
    """Finite-difference defect of the defining identity at x.

    Returns [T(X(x,dt)) - T(x)]/dt - [A T(x) + ones_m b(h(x))]; for an exact
    transform the magnitude is O(dt) plus the quadrature error of T_eval.
    """
    x = np.asarray(x, dtype=float)
    flow = integrate(lambda v: sat.base.drift(v), x, 0.0, dt, flow_tol)
    x_dt = flow.final_state
    if sat.domain.distance(x_dt) > 0:
        raise RuntimeError("forward flow exits the region within dt")
    Tx = np.asarray(T_eval(x), dtype=complex)
    Tx_dt = np.asarray(T_eval(x_dt), dtype=complex)
    w = np.asarray(design.b(np.atleast_1d(sat.output(x))), dtype=complex)
    rhs = design.eigenvalues[:, None] * Tx + w[None, :]
    return (Tx_dt - Tx) / dt - rhs
