"""Plant models, operating regions, cutoff saturation and benchmark systems.

A plant is the pair (f, h): a drift vector field and an output map. The
operating region is an axis-aligned box or a ball, carrying three collar
widths ``delta_probe < delta_one < delta_zero``. The cutoff multiplies the
drift by a C^1 ramp of the distance to the region: 1 on the inner collar,
0 outside the outer collar, so every backward solution of the saturated
field is bounded by construction.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "DomainSpec",
    "SystemModel",
    "ObserverDesign",
    "SaturatedSystem",
    "cutoff",
    "benchmark",
    "BENCHMARK_NAMES",
]


@dataclass(frozen=True)
class DomainSpec:
    """Operating region: box (lower/upper) or ball (center/radius), plus collars.

    ``delta_probe`` bounds where distinguishability pairs are drawn,
    ``delta_one`` is the distance up to which the cutoff stays 1, and
    ``delta_zero`` the distance beyond which it vanishes. They must satisfy
    0 < delta_probe < delta_one < delta_zero.
    """

    kind: str  # "box" | "ball"
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    center: Optional[np.ndarray] = None
    radius: float = 0.0
    delta_probe: float = 0.0
    delta_one: float = 0.0
    delta_zero: float = 0.0

    def __post_init__(self):
        if self.kind not in ("box", "ball"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.kind == "box":
            lo = np.asarray(self.lower, dtype=float)
            hi = np.asarray(self.upper, dtype=float)
            if lo.shape != hi.shape or lo.ndim != 1:
                raise ValueError("box bounds must be 1-d arrays of equal length")
            if not np.all(lo < hi):
                raise ValueError("box lower bounds must be strictly below upper bounds")
            object.__setattr__(self, "lower", lo)
            object.__setattr__(self, "upper", hi)
        else:
            c = np.asarray(self.center, dtype=float)
            if c.ndim != 1:
                raise ValueError("ball center must be a 1-d array")
            if not self.radius > 0:
                raise ValueError("ball radius must be positive")
            object.__setattr__(self, "center", c)
        d_p, d_1, d_0 = self.delta_probe, self.delta_one, self.delta_zero
        if not (0.0 < d_p < d_1 < d_0):
            raise ValueError(
                f"collar widths must satisfy 0 < probe < one < zero, "
                f"got ({d_p}, {d_1}, {d_0})"
            )

    @classmethod
    def box(cls, lower, upper, margins=None) -> "DomainSpec":
        lo = np.asarray(lower, dtype=float)
        hi = np.asarray(upper, dtype=float)
        d_p, d_1, d_0 = _default_margins(float(np.linalg.norm(hi - lo)), margins)
        return cls(kind="box", lower=lo, upper=hi,
                   delta_probe=d_p, delta_one=d_1, delta_zero=d_0)

    @classmethod
    def ball(cls, center, radius, margins=None) -> "DomainSpec":
        d_p, d_1, d_0 = _default_margins(2.0 * float(radius), margins)
        return cls(kind="ball", center=np.asarray(center, dtype=float),
                   radius=float(radius),
                   delta_probe=d_p, delta_one=d_1, delta_zero=d_0)

    @property
    def dim(self) -> int:
        return len(self.lower) if self.kind == "box" else len(self.center)

    @property
    def diameter(self) -> float:
        if self.kind == "box":
            return float(np.linalg.norm(self.upper - self.lower))
        return 2.0 * self.radius

    def distance(self, x) -> np.ndarray:
        """Exact Euclidean distance from x (shape (..., n)) to the closed region."""
        x = np.asarray(x, dtype=float)
        if self.kind == "box":
            excess = np.maximum(self.lower - x, 0.0) + np.maximum(x - self.upper, 0.0)
            return np.linalg.norm(excess, axis=-1)
        return np.maximum(np.linalg.norm(x - self.center, axis=-1) - self.radius, 0.0)

    def project(self, x) -> np.ndarray:
        """Closest point of the closed region (componentwise clamp / radial pull)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "box":
            return np.clip(x, self.lower, self.upper)
        delta = x - self.center
        r = np.linalg.norm(delta, axis=-1, keepdims=True)
        scale = np.where(r > self.radius, self.radius / np.maximum(r, 1e-300), 1.0)
        return self.center + delta * scale

    def contains(self, x, margin: float = 0.0) -> np.ndarray:
        return self.distance(x) <= margin

    def grid_axes(self, nodes_per_axis) -> list[np.ndarray]:
        """Tensor-grid axis coordinates spanning the closure of the region."""
        counts = np.broadcast_to(np.asarray(nodes_per_axis, dtype=int), (self.dim,))
        if self.kind == "box":
            lo, hi = self.lower, self.upper
        else:
            lo = self.center - self.radius
            hi = self.center + self.radius
        return [np.linspace(lo[i], hi[i], int(counts[i])) for i in range(self.dim)]

    def grid_nodes(self, nodes_per_axis) -> np.ndarray:
        """Flattened tensor grid (row-major), restricted to the region for balls."""
        axes = self.grid_axes(nodes_per_axis)
        mesh = np.meshgrid(*axes, indexing="ij")
        nodes = np.stack([m.ravel() for m in mesh], axis=-1)
        if self.kind == "ball":
            nodes = nodes[self.distance(nodes) <= 1e-12]
        return nodes

    def descriptor(self) -> str:
        """Canonical string used in table fingerprints."""
        if self.kind == "box":
            geo = "box:" + ",".join(repr(v) for v in self.lower) + ";" + \
                  ",".join(repr(v) for v in self.upper)
        else:
            geo = "ball:" + ",".join(repr(v) for v in self.center) + ";" + repr(self.radius)
        return f"{geo}|{self.delta_probe!r},{self.delta_one!r},{self.delta_zero!r}"


def _default_margins(diameter, margins):
    # Default collar widths are fractions of the region diameter, overridable.
    if margins is not None:
        return tuple(float(m) for m in margins)
    return 0.05 * diameter, 0.1 * diameter, 0.2 * diameter


@dataclass(frozen=True)
class SystemModel:
    """Plant (f, h) with dimensions and optional closed-form Lie derivatives.

    ``drift`` and ``output`` are vectorized over leading axes: (..., n) in,
    (..., n) resp. (..., p) out. ``lie_provider(order, x)`` returns the
    iterated derivative of the output along the drift, or None when the
    order is not available in closed form (callers then fall back to finite
    differences along the flow).
    """

    n: int
    p: int
    drift: Callable[[np.ndarray], np.ndarray]
    output: Callable[[np.ndarray], np.ndarray]
    lie_provider: Optional[Callable[[int, np.ndarray], Optional[np.ndarray]]] = None
    label: str = "custom"

    def check_local_lipschitz(self, domain: DomainSpec, samples: int = 10_000,
                              seed: int = 0, bound: float = 1e6) -> float:
        """Empirical difference-quotient bound for f and h over the outer collar.

        Failure warns instead of raising: smoothness hypotheses cannot be
        proven by sampling.
        """
        rng = np.random.default_rng(seed)
        lo, hi = _bounding_box(domain, domain.delta_zero)
        a = rng.uniform(lo, hi, size=(samples, self.n))
        b = a + rng.normal(scale=1e-4, size=a.shape)
        dx = np.linalg.norm(b - a, axis=-1)
        df = np.linalg.norm(self.drift(b) - self.drift(a), axis=-1)
        dh = np.linalg.norm(np.atleast_1d(self.output(b)) - np.atleast_1d(self.output(a)),
                            axis=-1)
        quot = np.max((df + dh) / np.maximum(dx, 1e-300))
        if not np.isfinite(quot) or quot > bound:
            warnings.warn(
                f"model {self.label!r}: sampled difference quotient {quot:.3g} "
                f"exceeds {bound:.3g}; local Lipschitz hypothesis is doubtful",
                stacklevel=2,
            )
        return float(quot)


def _bounding_box(domain: DomainSpec, inflate: float):
    if domain.kind == "box":
        return domain.lower - inflate, domain.upper + inflate
    return (domain.center - domain.radius - inflate,
            domain.center + domain.radius + inflate)


def _identity_injection(y):
    return np.asarray(y, dtype=complex)


@dataclass(frozen=True)
class ObserverDesign:
    """Filter design: diagonal Hurwitz eigenvalues, output injection and gain.

    The filter matrix is diag(eigenvalues); the injection is the all-ones
    column times ``b(y)`` (linear ``b`` suffices on a bounded region, and the
    identity is the default). ``ell`` is the decay bound the eigenvalues'
    real parts must stay below; ``k`` the high-gain factor.
    """

    eigenvalues: np.ndarray
    k: float = 1.0
    ell: float = -1e-12
    b: Callable[[np.ndarray], np.ndarray] = _identity_injection
    b_label: str = "id"

    def __post_init__(self):
        lam = np.atleast_1d(np.asarray(self.eigenvalues, dtype=complex))
        object.__setattr__(self, "eigenvalues", lam)
        if np.any(lam.real >= 0):
            bad = lam[lam.real >= 0][0]
            raise ValueError(f"eigenvalue {bad} is not Hurwitz")
        if np.any(lam.real >= self.ell):
            bad = lam[lam.real >= self.ell][0]
            raise ValueError(f"eigenvalue {bad} has real part above the decay bound {self.ell}")
        if self.k <= 0:
            raise ValueError("gain k must be positive")

    @property
    def m(self) -> int:
        return len(self.eigenvalues)

    @property
    def slowest_decay(self) -> float:
        """max_i Re(lambda_i), a negative number."""
        return float(np.max(self.eigenvalues.real))

    def with_gain(self, k: float) -> "ObserverDesign":
        return ObserverDesign(self.eigenvalues, k=k, ell=self.ell,
                              b=self.b, b_label=self.b_label)

    def descriptor(self) -> str:
        lam = ";".join(f"{v.real!r},{v.imag!r}" for v in self.eigenvalues)
        return f"lam:{lam}|b:{self.b_label}"


def smoothstep(t):
    """C^1 ramp 3t^2 - 2t^3 clamped to [0, 1]."""
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def cutoff(x, domain: DomainSpec) -> np.ndarray:
    """Cutoff value in [0,1]: 1 within the inner collar, 0 beyond the outer one.

    Between the collars it is the smoothstep of the normalized remaining
    distance, hence globally Lipschitz with constant 1.5/(delta_zero-delta_one).
    """
    d = domain.distance(x)
    t = (domain.delta_zero - d) / (domain.delta_zero - domain.delta_one)
    return smoothstep(t)


@dataclass(frozen=True)
class SaturatedSystem:
    """Plant with drift multiplied by the region cutoff (frozen outside the collar)."""

    base: SystemModel
    domain: DomainSpec

    def field(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        chi = cutoff(x, self.domain)
        return chi[..., None] * self.base.drift(x)

    def output(self, x) -> np.ndarray:
        return self.base.output(np.asarray(x, dtype=float))


# --- benchmark library ------------------------------------------------------

def _harmonic():
    def drift(x):
        x = np.asarray(x, dtype=float)
        return np.stack([x[..., 1], -x[..., 0]], axis=-1)

    def output(x):
        return x[..., :1]

    def lie(order, x):
        # d/dt of cos-sin rotation: cycle x1 -> x2 -> -x1 -> -x2
        sign = -1.0 if (order % 4) in (2, 3) else 1.0
        comp = 0 if order % 2 == 0 else 1
        return sign * x[..., comp:comp + 1]

    return SystemModel(2, 1, drift, output, lie, "harmonic")


def _constant(n=1):
    def drift(x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def output(x):
        return x

    def lie(order, x):
        return x if order == 0 else np.zeros_like(x)

    return SystemModel(n, n, drift, output, lie, f"constant({n})")


def _integrator_chain(m):
    m = int(m)

    def drift(x):
        x = np.asarray(x, dtype=float)
        dx = np.zeros_like(x)
        dx[..., :-1] = x[..., 1:]
        return dx

    def output(x):
        return x[..., :1]

    def lie(order, x):
        if order < m:
            return x[..., order:order + 1]
        return np.zeros(x.shape[:-1] + (1,))

    return SystemModel(m, 1, drift, output, lie, f"integrator_chain({m})")


def _van_der_pol(mu=1.0):
    mu = float(mu)

    def drift(x):
        x = np.asarray(x, dtype=float)
        x1, x2 = x[..., 0], x[..., 1]
        return np.stack([x2, mu * (1.0 - x1 * x1) * x2 - x1], axis=-1)

    def lie(order, x):
        x1, x2 = x[..., 0], x[..., 1]
        if order == 0:
            v = x1
        elif order == 1:
            v = x2
        elif order == 2:
            v = mu * (1.0 - x1 * x1) * x2 - x1
        elif order == 3:
            a2 = mu * (1.0 - x1 * x1) * x2 - x1
            v = (-2.0 * mu * x1 * x2 - 1.0) * x2 + mu * (1.0 - x1 * x1) * a2
        else:
            return None
        return v[..., None]

    def output(x):
        return x[..., :1]

    return SystemModel(2, 1, drift, output, lie, f"van_der_pol({mu!r})")


def _duffing():
    def drift(x):
        x = np.asarray(x, dtype=float)
        x1, x2 = x[..., 0], x[..., 1]
        return np.stack([x2, x1 - x1 ** 3], axis=-1)

    def lie(order, x):
        x1, x2 = x[..., 0], x[..., 1]
        if order == 0:
            v = x1
        elif order == 1:
            v = x2
        elif order == 2:
            v = x1 - x1 ** 3
        elif order == 3:
            v = (1.0 - 3.0 * x1 * x1) * x2
        else:
            return None
        return v[..., None]

    def output(x):
        return x[..., :1]

    return SystemModel(2, 1, drift, output, lie, "duffing")


def _escape1d():
    # Finite forward escape: x(t) = tan(t + atan(x0)). Used by the rescaled runtime.
    def drift(x):
        x = np.asarray(x, dtype=float)
        return 1.0 + x * x

    def output(x):
        return x

    def lie(order, x):
        if order == 0:
            return x
        if order == 1:
            return 1.0 + x * x
        if order == 2:
            return 2.0 * x * (1.0 + x * x)
        return None

    return SystemModel(1, 1, drift, output, lie, "escape1d")


_BENCHMARKS = {
    "harmonic": _harmonic,
    "constant": _constant,
    "integrator_chain": _integrator_chain,
    "van_der_pol": _van_der_pol,
    "duffing": _duffing,
    "escape1d": _escape1d,
}

BENCHMARK_NAMES = tuple(sorted(_BENCHMARKS))


def benchmark(name: str, **params) -> SystemModel:
    """Named benchmark model; raises KeyError for unknown names."""
    try:
        factory = _BENCHMARKS[name]
    except KeyError:
        raise KeyError(
            f"unknown benchmark {name!r}; available: {', '.join(BENCHMARK_NAMES)}"
        ) from None
    return factory(**params)
