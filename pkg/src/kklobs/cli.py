"""Command-line entry point: synthesize, certify, invert, simulate, bench.

Every run is driven by one scenario file and one seed; all artifacts embed
the scenario's config hash and the seed so that outputs from different
configurations can never be compared silently.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config import GAMMA_REGISTRY, ConfigError, Scenario, load_scenario
from .highgain import CertificationError, certify_gain
from .injectivity import injectivity_modulus, sample_eigenvalues
from .inversion import invert_batch
from .model import ObserverDesign, SaturatedSystem
from .runtime import RescaleSpec, lyapunov_trace, simulate
from .transform import TransformTable, amplitude_bound, select_horizon, tabulate

TABLE_FILE = "table.kklt"


def _eigenvalues(scn: Scenario, seed: int) -> np.ndarray:
    if scn.eigenvalues is not None:
        return scn.eigenvalues
    m = scn.m if scn.m is not None else scn.model.n + 1
    return sample_eigenvalues(m - 1, scn.ell, seed,
                              conjugate_closed=scn.conjugate_closed)


def _write_json(path, payload: dict, scn: Scenario, seed: int) -> None:
    payload = dict(payload)
    payload["config_hash"] = scn.config_hash
    payload["seed"] = seed
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _table_path(out):
    return os.path.join(out, TABLE_FILE)


def _synth(scn: Scenario, seed: int, out: str):
    lam = _eigenvalues(scn, seed)
    design = scn.design(lam)
    sat = SaturatedSystem(scn.model, scn.domain)
    amp = amplitude_bound(sat, design)
    horizon = select_horizon(design, amp, scn.tol_tail)
    table = tabulate(sat, design, scn.nodes_per_axis, horizon, scn.tol_quad,
                     config_hash=scn.config_hash, seed=seed)
    table.save(_table_path(out), design.eigenvalues)
    rep = injectivity_modulus(table, seed=seed)
    _write_json(os.path.join(out, "injectivity.json"), {
        "modulus": rep.modulus,
        "pair_count": rep.pair_count,
        "worst_pair": list(rep.worst_pair),
        "envelope_knots": rep.rho_knots.tolist(),
        "horizon": horizon,
        "eigenvalues_re": lam.real.tolist(),
        "eigenvalues_im": lam.imag.tolist(),
    }, scn, seed)
    from .report import fig_injectivity
    fig_injectivity(rep, os.path.join(out, "injectivity.png"), scn.config_hash)
    print(f"synth: modulus {rep.modulus:.6g}, horizon {horizon:.4g}, "
          f"table {_table_path(out)}")
    return table, design


def _load_or_synth(scn: Scenario, seed: int, out: str):
    path = _table_path(out)
    if os.path.exists(path):
        table, lam = TransformTable.load(path)
        if table.config_hash != scn.config_hash:
            raise ValueError(
                f"{path}: config hash {table.config_hash:#018x} does not "
                f"match this scenario ({scn.config_hash:#018x})")
        return table, scn.design(lam)
    return _synth(scn, seed, out)


def _certify(scn: Scenario, seed: int, out: str):
    lam = _eigenvalues(scn, seed)
    design = scn.design(lam)
    ladder = scn.k_ladder
    kwargs = {"k_candidates": ladder} if ladder else {}
    cert = certify_gain(scn.model, scn.domain, design, **kwargs)
    with open(os.path.join(out, "cert.json"), "w") as fh:
        payload = json.loads(cert.to_json())
        payload["config_hash"] = scn.config_hash
        payload["seed"] = seed
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"certify: satisfied, k = {cert.k:g}, N = {cert.N_analytic:.6g}, "
          f"epsilon = {cert.epsilon:.6g}")
    return cert, design


def _cmd_synth(scn, seed, out, args):
    _synth(scn, seed, out)
    return 0


def _cmd_certify(scn, seed, out, args):
    try:
        _certify(scn, seed, out)
    except CertificationError as exc:
        _write_json(os.path.join(out, "cert.json"), {
            "satisfied": False,
            "required_k": exc.required_k,
            "message": str(exc),
        }, scn, seed)
        print(f"certify: FAILED ({exc})", file=sys.stderr)
        return 2
    return 0


def _cmd_invert(scn, seed, out, args):
    if scn.invert_z is None:
        raise ConfigError("invert command needs an [invert] section with z_re")
    table, design = _load_or_synth(scn, seed, out)
    sat = SaturatedSystem(scn.model, scn.domain)
    query = invert_batch(table, sat, design, scn.invert_z,
                         tol=scn.tol_invert)[0]
    _write_json(os.path.join(out, "invert.json"), {
        "z_re": scn.invert_z.real.ravel().tolist(),
        "z_im": scn.invert_z.imag.ravel().tolist(),
        "x_hat": query.x_hat.tolist(),
        "residual": query.residual,
        "iterations": query.iterations,
    }, scn, seed)
    print(f"invert: x_hat = {query.x_hat}, residual {query.residual:.3g}")
    return 0


def _cmd_simulate(scn, seed, out, args):
    sat = SaturatedSystem(scn.model, scn.domain)
    mode = scn.sim_mode
    table = None
    cert = None
    if mode in ("exact", "rescaled"):
        table, design = _load_or_synth(scn, seed, out)
    else:
        try:
            cert, design = _certify(scn, seed, out)
            if mode == "highgain":
                design = design.with_gain(cert.k)
        except CertificationError as exc:
            if not args.override_cert:
                print(f"simulate: certification failed ({exc}); "
                      f"pass --override-cert to run anyway", file=sys.stderr)
                return 2
            design = scn.design(_eigenvalues(scn, seed))
    rescale = RescaleSpec(gamma=GAMMA_REGISTRY[scn.gamma_label],
                          label=scn.gamma_label) if mode == "rescaled" else None
    if not scn.x0_list:
        raise ConfigError("simulation needs at least one x0")
    summaries = []
    from .report import render_trace_figures
    for i, x0 in enumerate(scn.x0_list):
        trace = simulate(mode, sat, design, x0, z0=scn.z0, t_end=scn.t_end,
                         tol=scn.tol_sim, sample_dt=scn.sample_dt,
                         table=table, cert=cert, rescale=rescale,
                         override_cert=args.override_cert,
                         invert_tol=scn.tol_invert,
                         config_hash=scn.config_hash, seed=seed)
        trace.to_csv(os.path.join(out, f"trace_{i}.csv"))
        info = trace.summary()
        if np.all(np.isfinite(trace.U)):
            _, info["lyapunov_monotone"] = lyapunov_trace(trace)
        summaries.append(info)
        render_trace_figures(trace, out, f"trace_{i}")
        print(f"simulate[{i}]: x0 = {list(x0)}, final state error "
              f"{info['final_err_state']}, escaped = {trace.escaped}")
    _write_json(os.path.join(out, "summary.json"),
                {"mode": mode, "traces": summaries}, scn, seed)
    return 0


def _cmd_bench(scn, seed, out, args):
    """Full pipeline on one scenario, with artifact-hash consistency checks."""
    status = {"synth": None, "certify": None, "simulate": None}
    table, design = _load_or_synth(scn, seed, out)
    status["synth"] = "ok"
    if scn.design_mode == "highgain":
        rc = _cmd_certify(scn, seed, out, args)
        status["certify"] = "ok" if rc == 0 else "failed"
        if rc != 0 and not args.override_cert:
            _write_json(os.path.join(out, "bench.json"), {"stages": status},
                        scn, seed)
            return 2
    if scn.x0_list:
        rc = _cmd_simulate(scn, seed, out, args)
        status["simulate"] = "ok" if rc == 0 else "failed"
    hashes = set()
    for name in os.listdir(out):
        path = os.path.join(out, name)
        if name.endswith(".json"):
            with open(path) as fh:
                hashes.add(json.load(fh).get("config_hash"))
        elif name == TABLE_FILE:
            t, _ = TransformTable.load(path)
            hashes.add(t.config_hash)
    if len(hashes) > 1:
        print(f"bench: artifact config hashes disagree: {sorted(hashes)}",
              file=sys.stderr)
        return 1
    _write_json(os.path.join(out, "bench.json"), {"stages": status}, scn, seed)
    print(f"bench: {status}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "certify": _cmd_certify,
    "invert": _cmd_invert,
    "simulate": _cmd_simulate,
    "bench": _cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kkl",
        description="Observer synthesis for nonlinear systems on bounded "
                    "regions: transform tabulation, injectivity and gain "
                    "certificates, inversion and simulation.")
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="scenario TOML file")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the scenario seed")
    parser.add_argument("--out", default="out", help="artifact directory")
    parser.add_argument("--override-cert", action="store_true",
                        help="simulate even when certification fails (warns)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        scn = load_scenario(args.config)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    seed = args.seed if args.seed is not None else scn.seed
    os.makedirs(args.out, exist_ok=True)
    try:
        return _COMMANDS[args.command](scn, seed, args.out, args)
    except (ConfigError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
