"""Scenario configuration: versioned TOML schema with strict key checking.

A scenario bundles everything one CLI run needs: the benchmark model, the
operating region, the filter design (explicit eigenvalues or a seeded
draw), grid and tolerance settings, and the simulation plan. Unknown keys
are rejected so that typos fail loudly, and the raw file bytes are hashed
into every artifact the run produces.
"""

from __future__ import annotations

import hashlib
import sys
from dataclasses import dataclass
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .model import BENCHMARK_NAMES, DomainSpec, ObserverDesign, SystemModel, benchmark

__all__ = ["Scenario", "ConfigError", "load_scenario", "GAMMA_REGISTRY"]

SCHEMA_VERSION = 1


def _gamma_unit(y):
    return 1.0


def _gamma_quadratic(y):
    return 1.0 + 2.0 * float(np.ravel(y)[0]) ** 2


GAMMA_REGISTRY = {
    "unit": _gamma_unit,
    "quadratic": _gamma_quadratic,
}

# section -> allowed keys; None marks free-form subtables
_SCHEMA = {
    "": {"version"},
    "model": {"name", "params"},
    "domain": {"kind", "lower", "upper", "center", "radius", "margins"},
    "design": {"mode", "ell", "seed", "eigenvalues_re", "eigenvalues_im",
               "m", "b", "k_ladder", "conjugate_closed"},
    "grid": {"nodes_per_axis"},
    "tolerances": {"tail", "quad", "invert", "sim"},
    "simulation": {"x0", "z0", "t_end", "sample_dt", "mode", "gamma"},
    "invert": {"z_re", "z_im"},
}


class ConfigError(ValueError):
    """Configuration file failed to parse or validate."""


@dataclass(frozen=True)
class Scenario:
    model: SystemModel
    domain: DomainSpec
    design_mode: str                      # "exact" | "highgain"
    ell: float
    seed: int
    eigenvalues: Optional[np.ndarray]     # explicit, or None for a seeded draw
    m: Optional[int]
    b_label: str
    k_ladder: Optional[tuple]
    conjugate_closed: bool
    nodes_per_axis: int
    tol_tail: float
    tol_quad: float
    tol_invert: float
    tol_sim: float
    x0_list: tuple
    z0: Optional[np.ndarray]
    t_end: float
    sample_dt: float
    sim_mode: str
    gamma_label: str
    invert_z: Optional[np.ndarray]
    config_hash: int

    def design(self, eigenvalues: np.ndarray) -> ObserverDesign:
        if self.b_label != "id":
            raise ConfigError(f"unknown output injection {self.b_label!r}")
        return ObserverDesign(np.asarray(eigenvalues, dtype=complex),
                              ell=self.ell, b_label="id")


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


def _check_keys(doc: dict):
    top_unknown = set(doc) - set(_SCHEMA) - {""}
    top_unknown -= {k for k in doc if not isinstance(doc[k], dict)}
    for key, value in doc.items():
        if not isinstance(value, dict):
            if key not in _SCHEMA[""]:
                raise ConfigError(f"unknown top-level key {key!r}")
            continue
        if key not in _SCHEMA:
            raise ConfigError(f"unknown section [{key}]")
        allowed = _SCHEMA[key]
        for sub in value:
            if sub not in allowed:
                if key == "model" and sub == "params":
                    continue
                raise ConfigError(f"unknown key {sub!r} in section [{key}]")


def load_scenario(path) -> Scenario:
    """Parse and validate a scenario file."""
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        doc = tomllib.loads(raw.decode())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    _check_keys(doc)
    _require(doc.get("version") == SCHEMA_VERSION,
             f"{path}: version must be {SCHEMA_VERSION}")
    config_hash = int.from_bytes(
        hashlib.blake2b(raw, digest_size=8).digest(), "big")

    msec = doc.get("model", {})
    name = msec.get("name")
    _require(name in BENCHMARK_NAMES,
             f"unknown benchmark {name!r}; available: {', '.join(BENCHMARK_NAMES)}")
    model = benchmark(name, **msec.get("params", {}))

    dsec = doc.get("domain", {})
    kind = dsec.get("kind", "box")
    margins = dsec.get("margins")
    if kind == "box":
        _require("lower" in dsec and "upper" in dsec,
                 "box domain needs 'lower' and 'upper'")
        domain = DomainSpec.box(dsec["lower"], dsec["upper"], margins=margins)
    elif kind == "ball":
        _require("center" in dsec and "radius" in dsec,
                 "ball domain needs 'center' and 'radius'")
        domain = DomainSpec.ball(dsec["center"], dsec["radius"], margins=margins)
    else:
        raise ConfigError(f"unknown domain kind {kind!r}")
    _require(domain.dim == model.n,
             f"domain dimension {domain.dim} != model dimension {model.n}")

    gsec = doc.get("design", {})
    design_mode = gsec.get("mode", "exact")
    _require(design_mode in ("exact", "highgain"),
             f"design mode must be 'exact' or 'highgain', got {design_mode!r}")
    ell = float(gsec.get("ell", -0.5))
    _require(ell < 0, "decay bound ell must be negative")
    eig = None
    if "eigenvalues_re" in gsec:
        re = np.asarray(gsec["eigenvalues_re"], dtype=float)
        im = np.asarray(gsec.get("eigenvalues_im", np.zeros_like(re)), dtype=float)
        _require(len(re) == len(im), "eigenvalue re/im lists differ in length")
        eig = re + 1j * im
    k_ladder = gsec.get("k_ladder")
    if k_ladder is not None:
        k_ladder = tuple(float(k) for k in k_ladder)
        _require(all(k >= 1 for k in k_ladder), "gain candidates must be >= 1")

    tsec = doc.get("tolerances", {})
    tols = {k: float(tsec.get(k, d)) for k, d in
            (("tail", 1e-9), ("quad", 1e-8), ("invert", 1e-8), ("sim", 1e-9))}
    _require(all(v > 0 for v in tols.values()), "tolerances must be positive")

    ssec = doc.get("simulation", {})
    x0_list = tuple(tuple(float(v) for v in x) for x in ssec.get("x0", []))
    for x0 in x0_list:
        _require(len(x0) == model.n, f"x0 {x0} has wrong dimension")
    z0_raw = ssec.get("z0", "zero")
    z0 = None if z0_raw == "zero" else np.asarray(z0_raw, dtype=float)
    sim_mode = ssec.get("mode", "exact")
    _require(sim_mode in ("exact", "approx", "highgain", "rescaled"),
             f"unknown simulation mode {sim_mode!r}")
    gamma_label = ssec.get("gamma", "unit")
    _require(gamma_label in GAMMA_REGISTRY,
             f"unknown gamma {gamma_label!r}; available: "
             f"{', '.join(sorted(GAMMA_REGISTRY))}")

    isec = doc.get("invert", {})
    invert_z = None
    if "z_re" in isec:
        zr = np.asarray(isec["z_re"], dtype=float)
        zi = np.asarray(isec.get("z_im", np.zeros_like(zr)), dtype=float)
        invert_z = (zr + 1j * zi)[:, None]

    return Scenario(
        model=model, domain=domain, design_mode=design_mode, ell=ell,
        seed=int(gsec.get("seed", 0)), eigenvalues=eig,
        m=int(gsec["m"]) if "m" in gsec else None,
        b_label=gsec.get("b", "id"), k_ladder=k_ladder,
        conjugate_closed=bool(gsec.get("conjugate_closed", False)),
        nodes_per_axis=int(doc.get("grid", {}).get("nodes_per_axis", 11)),
        tol_tail=tols["tail"], tol_quad=tols["quad"],
        tol_invert=tols["invert"], tol_sim=tols["sim"],
        x0_list=x0_list, z0=z0,
        t_end=float(ssec.get("t_end", 10.0)),
        sample_dt=float(ssec.get("sample_dt", 0.01)),
        sim_mode=sim_mode, gamma_label=gamma_label,
        invert_z=invert_z, config_hash=config_hash,
    )
