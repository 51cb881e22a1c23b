"""Command-line front end: config parsing, run directories, manifests.

Config files are TOML with four sections (potential, box, mc, variational),
every key optional with documented defaults, unknown keys rejected with
their full path.  Each run writes its outputs plus a manifest.json that
echoes the fully resolved config and arguments; nothing time-dependent goes
into artifacts, so reruns with one seed are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np
import tomli

from . import cluster_thermo, gibbs_mc, ground_state, oracle, variational
from .cluster_geometry import Configuration
from .common import ClusterGasError, ParameterError, canonical_json, fmt, write_csv
from .gibbs_mc import MCParams
from .ground_state import MinimizeOpts
from .potential import (PotentialSpec, default_spec, spec_from_mapping, spec_to_mapping,
                        validate_assumption_v)

__all__ = ["cli", "main", "load_config", "Config"]

_POTENTIAL_DEFAULTS = spec_to_mapping(default_spec())
_BOX_DEFAULTS = {"dim": 1, "side": 10.0, "connect_radius": None}
_MC_DEFAULTS = {"n_sweeps": 20000, "burn_in_sweeps": 4000, "step_size": 0.5,
                "measure_every": 20, "replicas": 2, "seed": 0, "track_k_max": 10}
_VAR_DEFAULTS = {"nu_min": 0.05, "nu_max": 2.0, "grid_count": 200}


@dataclass(frozen=True)
class Config:
    potential: PotentialSpec
    box: dict
    mc: dict
    variational: dict

    @property
    def dim(self) -> int:
        return int(self.box["dim"])

    @property
    def connect_radius(self) -> float:
        r = self.box["connect_radius"]
        return 1.1 * self.potential.b if r is None else float(r)

    def to_mapping(self) -> dict:
        return {
            "potential": spec_to_mapping(self.potential),
            "box": dict(self.box),
            "mc": dict(self.mc),
            "variational": dict(self.variational),
        }


def _merge_section(name: str, defaults: dict, given: dict) -> dict:
    unknown = set(given) - set(defaults)
    if unknown:
        raise ParameterError(f"unknown key {name}.{sorted(unknown)[0]}")
    out = dict(defaults)
    out.update(given)
    return out


def load_config(path_or_mapping) -> Config:
    """Parse and validate a config file (or an already-parsed mapping)."""
    if isinstance(path_or_mapping, dict):
        raw = path_or_mapping
    else:
        if not os.path.exists(path_or_mapping):
            raise ParameterError(f"config file not found: {path_or_mapping}")
        with open(path_or_mapping, "rb") as fh:
            raw = tomli.load(fh)
    known = {"potential", "box", "mc", "variational"}
    unknown = set(raw) - known
    if unknown:
        raise ParameterError(f"unknown config section {sorted(unknown)[0]!r}")
    pot = _merge_section("potential", _POTENTIAL_DEFAULTS, raw.get("potential", {}))
    box = _merge_section("box", _BOX_DEFAULTS, raw.get("box", {}))
    mc = _merge_section("mc", _MC_DEFAULTS, raw.get("mc", {}))
    var = _merge_section("variational", _VAR_DEFAULTS, raw.get("variational", {}))
    return Config(potential=spec_from_mapping(pot), box=box, mc=mc, variational=var)


def _mc_params(cfg: Config, seed=None, **overrides) -> MCParams:
    kw = dict(cfg.mc)
    if seed is not None:
        kw["seed"] = seed
    kw.update(overrides)
    return MCParams(**{k: (int(v) if k != "step_size" else float(v)) for k, v in kw.items()})


def _parse_range(text: str) -> tuple[float, float, int]:
    parts = text.split(":")
    if len(parts) != 3:
        raise ParameterError(f"range must be start:stop:count, got {text!r}")
    return float(parts[0]), float(parts[1]), int(parts[2])


def _parse_list(text: str, cast=float) -> list:
    return [cast(tok) for tok in text.split(",") if tok]


def _run_dir(args, command: str) -> str:
    out = args.out or os.path.join("runs", command)
    os.makedirs(out, exist_ok=True)
    return out


def _write_manifest(out_dir: str, command: str, cfg: Config | None, params: dict,
                    outputs: list) -> None:
    manifest = {
        "command": command,
        "config": cfg.to_mapping() if cfg is not None else None,
        "params": params,
        "outputs": outputs,
        "threads": params.get("threads", 1),
        "format_version": 1,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", newline="\n") as fh:
        fh.write(canonical_json(manifest))


def _threads(args) -> int:
    env = os.environ.get("CLUSTERGAS_THREADS")
    if args.threads is not None:
        return max(1, args.threads)
    if env:
        return max(1, int(env))
    return 1


def _cmd_validate_potential(args) -> int:
    cfg = load_config(args.config)
    report = validate_assumption_v(cfg.potential,
                                   probe_sizes=_parse_list(args.probe_sizes, int),
                                   probe_budget=args.probe_budget, d=cfg.dim,
                                   seed=args.seed)
    out = _run_dir(args, "validate-potential")
    payload = {
        "spec_id": cfg.potential.spec_id,
        "checks": [{"name": n, "pass": ok, "witness": w} for n, ok, w in report.checks],
        "stability_evidence": [{"N": n, "E_over_N": e} for n, e in report.stability_evidence],
        "all_passed": report.all_passed,
    }
    path = os.path.join(out, "validation.json")
    with open(path, "w", newline="\n") as fh:
        fh.write(canonical_json(payload))
    _write_manifest(out, "validate-potential", cfg,
                    {"seed": args.seed, "probe_sizes": args.probe_sizes,
                     "probe_budget": args.probe_budget, "threads": _threads(args)},
                    ["validation.json"])
    for name, ok, witness in report.checks:
        print(f"{name}: {'pass' if ok else 'FAIL'} (witness {witness})")
    return 0 if report.all_passed else 1


def _cmd_ground_state(args) -> int:
    cfg = load_config(args.config)
    opts = MinimizeOpts(multistarts=args.multistarts,
                        connect_radius=cfg.connect_radius)
    table = ground_state.build_table(cfg.potential, args.k_max, opts,
                                     seed=args.seed, d=cfg.dim)
    out = _run_dir(args, "ground-state")
    with open(os.path.join(out, "table.json"), "w", newline="\n") as fh:
        fh.write(ground_state.table_to_json(table))
    rows = [(k, e.energy, e.energy / k,
             float("nan") if e.r_min_observed is None else e.r_min_observed,
             e.diameter, int(e.converged))
            for k, e in sorted(table.entries.items())]
    write_csv(os.path.join(out, "table_summary.csv"),
              ["k", "E", "E_over_k", "r_min", "diameter", "converged"], rows)
    _write_manifest(out, "ground-state", cfg,
                    {"k_max": args.k_max, "seed": args.seed,
                     "multistarts": args.multistarts, "threads": _threads(args)},
                    ["table.json", "table_summary.csv"])
    if table.nu_star is not None:
        caveat = " (argmin at k_max: tabulation-limited)" if table.nu_star_truncated else ""
        print(f"e_infty = {fmt(table.e_infty)}, nu_star = {fmt(table.nu_star)}{caveat}")
    if table.warning:
        print(f"warning: {table.warning}")
    return 0


def _load_table(path: str) -> ground_state.GroundStateTable:
    with open(path) as fh:
        return ground_state.table_from_json(fh.read())


def _cmd_variational_profile(args) -> int:
    table = _load_table(args.table)
    nu_min, nu_max, count = _parse_range(args.nu)
    prof = variational.profile(table, nu_min, nu_max, count)
    out = _run_dir(args, "variational-profile")
    variational.profile_to_csv(prof, os.path.join(out, "profile.csv"))
    variational.kinks_to_csv(prof, os.path.join(out, "kinks.csv"))
    _write_manifest(out, "variational-profile", None,
                    {"table": os.path.basename(args.table), "nu": args.nu,
                     "threads": _threads(args)},
                    ["profile.csv", "kinks.csv"])
    print(f"{len(prof.kinks)} kink(s); smallest at nu = "
          f"{fmt(prof.kinks[0].nu) if prof.kinks else 'n/a'}")
    return 0


def _cmd_cluster_z(args) -> int:
    cfg = load_config(args.config)
    table = _load_table(args.table) if args.table else None
    R = cfg.connect_radius
    estimates = []
    for k in _parse_list(args.k, int):
        for beta in _parse_list(args.betas):
            a = None
            if args.a == "auto":
                delta = (R - cfg.potential.r_hc) / 6.0
                a = delta + k ** (1.0 / cfg.dim) * (cfg.potential.r_hc + 2 * delta) + 1.0
            elif args.a not in (None, "none"):
                a = float(args.a)
            e_k = table.entries[k].energy if table and k in table.entries else None
            estimates.append(cluster_thermo.z_cluster(
                cfg.potential, k, beta, cfg.dim, R, a=a, method=args.method,
                budget=args.budget, seed=args.seed, e_k=e_k))
    out = _run_dir(args, "cluster-z")
    with open(os.path.join(out, "estimates.json"), "w", newline="\n") as fh:
        fh.write(cluster_thermo.estimates_to_json(estimates))
    cluster_thermo.estimates_to_csv(estimates, os.path.join(out, "estimates.csv"))
    _write_manifest(out, "cluster-z", cfg,
                    {"k": args.k, "betas": args.betas, "a": args.a,
                     "method": args.method, "budget": args.budget, "seed": args.seed,
                     "table": args.table, "threads": _threads(args)},
                    ["estimates.json", "estimates.csv"])
    for e in estimates:
        print(f"k={e.k} beta={fmt(e.beta)} a={e.a} z={fmt(e.z.value)} "
              f"+- {fmt(e.z.stderr)} [{e.method}]")
    return 0


def _cmd_sandwich(args) -> int:
    cfg = load_config(args.config)
    R = cfg.connect_radius
    model = cluster_thermo.build_ideal_model(
        cfg.potential, cfg.dim, args.beta, args.rho, R, k_max=args.k_max_model,
        budget=args.budget, seed=args.seed)
    support = _parse_list(args.support, int)
    mass_fraction = args.mass_fraction
    rho_vec = {k: mass_fraction * args.rho / (len(support) * k) for k in support}
    a_choice = {k: cluster_thermo.default_a_choice(k, args.rho, R, cfg.dim)
                for k in support}
    lk = (args.k_max_model / args.rho) ** (1.0 / cfg.dim)
    f_inf_upper = cluster_thermo.z_cluster(
        cfg.potential, args.k_max_model, args.beta, cfg.dim, R, a=lk,
        budget=args.budget, seed=args.seed).f
    result = cluster_thermo.sandwich(model, rho_vec, a_choice, f_inf_upper)
    out = _run_dir(args, "sandwich")
    payload = {
        "beta": args.beta, "rho": args.rho, "rho_vec": {str(k): v for k, v in rho_vec.items()},
        "lower": result.lower, "upper": result.upper,
        "lower_err": result.lower_err, "upper_err": result.upper_err,
        "gap": result.gap,
        "f_inf_lower_provenance": model.f_inf_provenance,
    }
    with open(os.path.join(out, "sandwich.json"), "w", newline="\n") as fh:
        fh.write(canonical_json(payload))
    _write_manifest(out, "sandwich", cfg,
                    {"beta": args.beta, "rho": args.rho, "support": args.support,
                     "mass_fraction": args.mass_fraction, "k_max_model": args.k_max_model,
                     "budget": args.budget, "seed": args.seed, "threads": _threads(args)},
                    ["sandwich.json"])
    print(f"lower = {fmt(result.lower)}, upper = {fmt(result.upper)}, gap = {fmt(result.gap)}")
    return 0


def _cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    params = _mc_params(cfg, seed=args.seed)
    L = float(args.box_side if args.box_side is not None else cfg.box["side"])
    result = gibbs_mc.run_canonical(cfg.potential, args.n, L, args.beta,
                                    cfg.connect_radius, params, d=cfg.dim)
    out = _run_dir(args, "simulate")
    with open(os.path.join(out, "result.json"), "w", newline="\n") as fh:
        fh.write(gibbs_mc.result_to_json(result))
    gibbs_mc.trace_to_csv(result, os.path.join(out, "trace.csv"), replica=0)
    _write_manifest(out, "simulate", cfg,
                    {"n": args.n, "beta": args.beta, "box_side": L, "seed": args.seed,
                     "threads": _threads(args)},
                    ["result.json", "trace.csv"])
    print(f"acceptance {result.acceptance_rate:.3f}; "
          f"equilibration pass: {result.equilibration['pass']}")
    return 0


def _cmd_lln(args) -> int:
    cfg = load_config(args.config)
    table = _load_table(args.table)
    params = _mc_params(cfg, seed=args.seed)
    report = gibbs_mc.lln_experiment(cfg.potential, table, args.nu,
                                     _parse_list(args.betas), args.n, params,
                                     d=cfg.dim, K=args.K)
    out = _run_dir(args, "lln")
    payload = {
        "nu": report.nu, "nu_star": report.nu_star, "regime": report.regime,
        "target_k": report.target_k, "prediction": list(report.prediction),
        "K": report.K,
        "rows": [{"beta": b, "rho": r, "L": L, "observable": o, "stderr": s}
                 for b, r, L, o, s in report.rows],
        "improvements": [list(t) for t in report.improvements],
    }
    with open(os.path.join(out, "lln.json"), "w", newline="\n") as fh:
        fh.write(canonical_json(payload))
    _write_manifest(out, "lln", cfg,
                    {"table": os.path.basename(args.table), "nu": args.nu,
                     "betas": args.betas, "n": args.n, "K": args.K, "seed": args.seed,
                     "threads": _threads(args)},
                    ["lln.json"])
    for beta, rho, L, obs, se in report.rows:
        print(f"beta={fmt(beta)} rho={fmt(rho)}: observable = {fmt(obs)} +- {fmt(se)}")
    return 0


def _cmd_oracle(args) -> int:
    cfg = load_config(args.config)
    spec = cfg.potential
    rows = []
    ok = True
    for beta in _parse_list(args.betas):
        for n1, n2 in ((1, 1), (2, 1), (2, 2), (3, 1)):
            rep = oracle.check_supermultiplicativity(
                spec, n1, n2, (0.0, 3.0), (3.0 + spec.b + 0.5, 10.0 + spec.b),
                (0.0, 12.0 + spec.b), beta)
            ok = ok and rep.holds
            rows.append((beta, n1, n2, rep.joint, rep.split, rep.margin, int(rep.holds)))
    out = _run_dir(args, "oracle")
    write_csv(os.path.join(out, "supermultiplicativity.csv"),
              ["beta", "N1", "N2", "joint", "split", "margin", "holds"], rows)
    _write_manifest(out, "oracle", cfg,
                    {"betas": args.betas, "threads": _threads(args)},
                    ["supermultiplicativity.csv"])
    print("supermultiplicativity " + ("holds on all cases" if ok else "VIOLATED"))
    return 0 if ok else 1


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clustergas",
                                description="cluster-size statistics toolkit")
    p.add_argument("--threads", type=int, default=None,
                   help="cap worker count (env CLUSTERGAS_THREADS)")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, **flags):
        sp = sub.add_parser(name)
        sp.set_defaults(fn=fn)
        sp.add_argument("--out", default=None, help="run directory")
        sp.add_argument("--threads", type=int, default=None)
        for flag, kw in flags.items():
            sp.add_argument(flag, **kw)
        return sp

    add("validate-potential", _cmd_validate_potential,
        **{"--config": dict(required=True), "--seed": dict(type=int, default=0),
           "--probe-sizes": dict(default="2,3,4,5,6", dest="probe_sizes"),
           "--probe-budget": dict(type=int, default=40, dest="probe_budget")})
    add("ground-state", _cmd_ground_state,
        **{"--config": dict(required=True), "--k-max": dict(type=int, required=True, dest="k_max"),
           "--seed": dict(type=int, default=0),
           "--multistarts": dict(type=int, default=None)})
    add("variational-profile", _cmd_variational_profile,
        **{"--table": dict(required=True), "--nu": dict(required=True)})
    add("cluster-z", _cmd_cluster_z,
        **{"--config": dict(required=True), "--k": dict(required=True),
           "--betas": dict(required=True), "--a": dict(default="none"),
           "--method": dict(default="auto"), "--budget": dict(type=int, default=20000),
           "--seed": dict(type=int, default=0), "--table": dict(default=None)})
    add("sandwich", _cmd_sandwich,
        **{"--config": dict(required=True), "--beta": dict(type=float, required=True),
           "--rho": dict(type=float, required=True), "--support": dict(default="2"),
           "--mass-fraction": dict(type=float, default=0.5, dest="mass_fraction"),
           "--k-max-model": dict(type=int, default=4, dest="k_max_model"),
           "--budget": dict(type=int, default=20000), "--seed": dict(type=int, default=0)})
    add("simulate", _cmd_simulate,
        **{"--config": dict(required=True), "--n": dict(type=int, required=True),
           "--beta": dict(type=float, required=True),
           "--box-side": dict(type=float, default=None, dest="box_side"),
           "--seed": dict(type=int, default=0)})
    add("lln", _cmd_lln,
        **{"--config": dict(required=True), "--table": dict(required=True),
           "--nu": dict(type=float, required=True), "--betas": dict(required=True),
           "--n": dict(type=int, required=True), "--K": dict(type=int, default=3),
           "--seed": dict(type=int, default=0)})
    add("oracle", _cmd_oracle,
        **{"--config": dict(required=True), "--betas": dict(default="0.5,2")})
    return p


def cli(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except (ClusterGasError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli())
