"""Command-line entry point: ``nlsgibbs <subcommand> [options] [key=value ...]``.

Every flag has an environment override with the ``NLSGIBBS_`` prefix:
``NLSGIBBS_CONFIG``, ``NLSGIBBS_SEED``, ``NLSGIBBS_OUT``,
``NLSGIBBS_SEQUENTIAL`` (any non-empty value other than 0) and
``NLSGIBBS_THREADS``.  Explicit flags win over the environment.

Exit status: 0 when every check passes, 1 when a check fails, 2 for
configuration or I/O errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import graphs, harness
from .config import ConfigError, RunConfig, RunManifest, default_config, load_config
from .expansion import (
    Observable,
    coeff_classical,
    coeff_quantum,
    convergence_scan,
    write_coefficients_csv,
    write_scan_csv,
)
from .montecarlo import mc_moments, mc_state_expectation, write_estimates_csv
from .potentials import (
    build_constant,
    build_endpoint_square,
    build_power_fourier,
    build_power_square,
    build_self_convolution,
    mollify,
    potential_to_csv,
    verify_potential,
)
from .spectral import TorusSpec, classical_green, kernel_to_csv, quantum_kernels

ENV_PREFIX = "NLSGIBBS_"
EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
SUBCOMMANDS = ("kernels", "potential", "graphs", "coeffs", "mc", "bounds", "compare", "suite")


def _err(msg: str) -> None:
    print(f"nlsgibbs: {msg}", file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file (sectioned key/value or JSON)")
    common.add_argument("--seed", type=int, help="64-bit seed for every random stream")
    common.add_argument("--out", help="output directory")
    common.add_argument("--sequential", action="store_true", default=None, help="single thread, bit-exact mode")
    common.add_argument("--threads", type=int, help="worker threads for independent subtasks")
    common.add_argument("overrides", nargs="*", metavar="KEY=VALUE", help="config overrides such as torus.K=2")
    parser = argparse.ArgumentParser(prog="nlsgibbs", description="Quantum-to-classical Gibbs state numerics.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "kernels": "export spectral kernels as coefficient CSVs",
        "potential": "build, mollify and verify the configured potential",
        "graphs": "enumerate pairings and export collapsed multigraphs",
        "coeffs": "classical and quantum expansion coefficient tables",
        "mc": "Monte Carlo moments and interacting expectations",
        "bounds": "kernel bound suite and Green-function convergence",
        "compare": "series against Monte Carlo, and the temperature scan",
        "suite": "full acceptance gate",
    }
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name, parents=[common], help=helps[name])
        if name == "suite":
            sp.add_argument("--only", nargs="*", help="subset of criteria, e.g. C1 C3")
    return parser


def _env_default(args) -> None:
    env = os.environ
    if args.config is None and env.get(ENV_PREFIX + "CONFIG"):
        args.config = env[ENV_PREFIX + "CONFIG"]
    if args.seed is None and env.get(ENV_PREFIX + "SEED"):
        args.seed = int(env[ENV_PREFIX + "SEED"])
    if args.out is None and env.get(ENV_PREFIX + "OUT"):
        args.out = env[ENV_PREFIX + "OUT"]
    if args.sequential is None:
        args.sequential = env.get(ENV_PREFIX + "SEQUENTIAL", "") not in ("", "0")
    if args.threads is None and env.get(ENV_PREFIX + "THREADS"):
        args.threads = int(env[ENV_PREFIX + "THREADS"])


GRAPH_KEYS = ("m", "r", "d", "family", "observable")


def _split_overrides(command: str, items) -> tuple[dict, dict]:
    cfg_over, local = {}, {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"{item}: expected KEY=VALUE")
        key, value = item.split("=", 1)
        if command == "graphs" and key in GRAPH_KEYS:
            local[key] = value
        else:
            cfg_over[key] = value
    return cfg_over, local


def resolve_config(args) -> tuple[RunConfig, dict]:
    _env_default(args)
    cfg = load_config(args.config) if args.config else default_config()
    cfg_over, local = _split_overrides(args.command, args.overrides)
    if args.seed is not None:
        cfg_over["seed"] = str(args.seed)
    if args.out is not None:
        cfg_over["out"] = args.out
    if cfg_over:
        cfg = cfg.with_overrides(cfg_over)
    return cfg, local


def _workers(args) -> int | None:
    if args.sequential or not args.threads or args.threads <= 1:
        return None
    return args.threads


# ------------------------------------------------------------------ builders


def torus_of(cfg: RunConfig) -> TorusSpec:
    return TorusSpec(cfg.torus.d, cfg.torus.kappa, cfg.torus.K)


def potential_of(cfg: RunConfig):
    spec = torus_of(cfg)
    pot = cfg.potential
    wspec = spec.with_cutoff(2 * spec.cutoff)
    if pot.variant == "constant":
        return build_constant(wspec, pot.c)
    if pot.variant == "powerFourier":
        return build_power_fourier(wspec, pot.q, pot.p)
    if pot.variant == "selfConvolution":
        return build_self_convolution(wspec, pot.q, pot.p)
    if pot.variant == "endpointSquare":
        return build_endpoint_square(spec, pot.eps)
    return build_power_square(spec, pot.exponent)


def observable_of(cfg: RunConfig) -> Observable:
    spec = torus_of(cfg)
    r = cfg.expansion.r
    if r == 0:
        return Observable.empty(spec)
    if r == 1:
        return Observable.unit(spec)
    proj = Observable.unit(spec).tensor
    return Observable.from_products(spec, [(proj, proj)], name="unit2")


# ------------------------------------------------------------------ subcommands


def cmd_kernels(cfg, local, out: Path, manifest, workers) -> int:
    spec = torus_of(cfg)
    t = cfg.bounds.t
    path = out / "G.csv"
    kernel_to_csv(classical_green(spec), path, {"kind": "classicalGreen", "d": spec.d, "kappa": spec.kappa, "cutoff": spec.cutoff})
    manifest.add("G", path)
    for tau in cfg.expansion.taus:
        q1, q2 = quantum_kernels(spec, tau, t)
        for name, kern in (("Q1", q1), ("Q2", q2)):
            path = out / f"{name}_tau{tau:g}_t{t:g}.csv"
            kernel_to_csv(kern, path, {"kind": name, "d": spec.d, "kappa": spec.kappa, "cutoff": spec.cutoff, "tau": tau, "t": t})
            manifest.add(f"{name}@{tau:g}", path)
    return EXIT_OK


def cmd_potential(cfg, local, out: Path, manifest, workers) -> int:
    w = potential_of(cfg)
    path = out / "potential.csv"
    potential_to_csv(w, path)
    manifest.add("potential", path)
    reports = {}
    ok = True
    for tau in cfg.expansion.taus:
        w_tau = mollify(w, tau, cfg.potential.beta, cfg.potential.p)
        rep = verify_potential(w, w_tau, cfg.potential.p)
        reports[f"{tau:g}"] = rep.to_dict()
        ok &= rep.passed
        path = out / f"potential_tau{tau:g}.csv"
        potential_to_csv(w_tau, path)
        manifest.add(f"potential@{tau:g}", path)
    path = out / "potential_report.json"
    path.write_text(json.dumps(reports, indent=2))
    manifest.add("report", path)
    print(f"potential {w.variant}: {'all clauses pass' if ok else 'clause failure'}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_graphs(cfg, local, out: Path, manifest, workers) -> int:
    try:
        m = int(local.get("m", cfg.expansion.m_max))
        r = int(local.get("r", cfg.expansion.r))
        d = int(local.get("d", cfg.torus.d))
    except ValueError as exc:
        raise ConfigError(f"graphs: {exc}") from None
    family = local.get("family", graphs.default_family(d))
    kind = local.get("observable", "general")
    if family not in graphs.FAMILIES:
        raise ConfigError(f"family: must be one of {', '.join(graphs.FAMILIES)}, got {family!r}")
    if not (0 <= m <= 3 and 0 <= r <= 2):
        raise ConfigError(f"graphs: need m <= 3 and r <= 2, got m={m}, r={r}")
    try:
        pairings = graphs.pairings_for(m, r, d, kind, family)
    except ValueError as exc:
        raise ConfigError(f"graphs: {exc}") from None
    path = out / f"pairings_m{m}_r{r}_{family}.csv"
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["index", "edges"])
        for j, p in enumerate(pairings):
            wr.writerow([j, " ".join(f"{u.label()}-{v.label()}" for u, v in p.vertex_pairs())])
    manifest.add("pairings", path)
    if family == graphs.default_family(d):
        gpath = out / f"multigraphs_m{m}_r{r}_{family}.txt"
        with open(gpath, "w") as fh:
            for p in pairings:
                fh.write(graphs.collapse(p).to_edge_list())
        manifest.add("multigraphs", gpath)
    print(f"{len(pairings)} pairings (m={m}, r={r}, family={family}, d={d})")
    return EXIT_OK


def cmd_coeffs(cfg, local, out: Path, manifest, workers) -> int:
    spec = torus_of(cfg)
    w = potential_of(cfg)
    obs = observable_of(cfg)
    records = [coeff_classical(m, obs, w, spec, workers) for m in range(cfg.expansion.m_max + 1)]
    for tau in cfg.expansion.taus:
        w_tau = mollify(w, tau, cfg.potential.beta, cfg.potential.p)
        for m in range(cfg.expansion.m_max + 1):
            records.append(coeff_quantum(m, obs, tau, w_tau, spec, cfg.expansion.eta, cfg.expansion.quad_order, workers=workers))
    path = out / "coefficients.csv"
    write_coefficients_csv(records, path)
    manifest.add("coefficients", path)
    for rec in records:
        print(f"m={rec.m} tau={rec.tau:g} a={rec.value:.12g} quad_err={rec.quadrature_error:.2e}")
    return EXIT_OK


def cmd_mc(cfg, local, out: Path, manifest, workers) -> int:
    w = potential_of(cfg)
    obs = observable_of(cfg)
    ms = list(range(min(cfg.expansion.m_max, 4) + 1))
    rows = []
    moments = mc_moments(obs, w, ms, cfg.mc.n, cfg.seed, workers)
    rows += [(obs.name, f"m={m}", est) for m, est in moments.items()]
    for z in cfg.mc.z:
        rows.append((obs.name, f"z={z:g}", mc_state_expectation(obs, w, z, cfg.mc.n, cfg.seed, workers)))
    path = out / "estimates.csv"
    write_estimates_csv(rows, path)
    manifest.add("estimates", path)
    for name, idx, est in rows:
        print(f"{name} {idx}: {est.mean:.8g} +/- {est.stderr:.2g}")
    return EXIT_OK


def _write_reports(reports, path: Path) -> None:
    path.write_text(json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True))


def cmd_bounds(cfg, local, out: Path, manifest, workers) -> int:
    d, kappa, K = cfg.torus.d, cfg.torus.kappa, cfg.bounds.K
    reports = [
        harness.q_bound_suite(d, kappa),
        harness.green_convergence(d, kappa, K, cfg.bounds.q, cfg.bounds.t, cfg.expansion.taus),
        harness.truncation_convergence(d, kappa, cfg.bounds.q, tuple(k for k in (1, 2, 4, 8) if k < K) + (K,)),
        harness.exact_identities(kappa),
    ]
    path = out / "bounds.json"
    _write_reports(reports, path)
    manifest.add("bounds", path)
    for r in reports:
        print(r.line())
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


def cmd_compare(cfg, local, out: Path, manifest, workers) -> int:
    spec = torus_of(cfg)
    w = potential_of(cfg)
    obs = Observable.identity_op(spec, 1) if spec.d == 1 and cfg.expansion.r == 1 else observable_of(cfg)
    z = min(cfg.mc.z[0], 0.5) or 0.1
    coeffs = [coeff_classical(m, obs, w, spec, workers) for m in range(4)]
    fit = harness.factorial_growth_fit(coeffs)
    reports = [harness.series_vs_mc(obs, w, z, M, cfg.mc.n, cfg.seed, coeffs, fit) for M in (1, 2)]
    limit, rows = convergence_scan(
        1, observable_of(cfg), cfg.expansion.taus, w, spec, cfg.potential.beta, cfg.potential.p,
        order=cfg.expansion.quad_order, workers=workers,
    )
    path = out / "scan.csv"
    write_scan_csv(rows, path)
    manifest.add("scan", path)
    path = out / "compare.json"
    _write_reports(reports, path)
    manifest.add("compare", path)
    for r in reports:
        print(r.line())
    for row in rows:
        print(f"tau={row.tau:g} gap={row.gap:.3e} quad_err={row.quadrature_error:.1e}")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


def cmd_suite(cfg, local, out: Path, manifest, workers, only=None) -> int:
    ok, reports = harness.run_suite(out, only=only, workers=workers)
    manifest.add("summary", out / "summary.json")
    for r in reports:
        for a in r.artifacts:
            manifest.add(r.check_id, a)
        print(r.line())
    print("suite: " + ("PASS" if ok else "FAIL"))
    return EXIT_OK if ok else EXIT_FAIL


HANDLERS = {
    "kernels": cmd_kernels,
    "potential": cmd_potential,
    "graphs": cmd_graphs,
    "coeffs": cmd_coeffs,
    "mc": cmd_mc,
    "bounds": cmd_bounds,
    "compare": cmd_compare,
    "suite": cmd_suite,
}


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg, local = resolve_config(args)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.ini").write_text(cfg.to_ini())
        manifest = RunManifest.start(cfg, args.command)
        manifest.write(out)
    except (ConfigError, OSError, ValueError) as exc:
        _err(str(exc))
        return EXIT_CONFIG
    workers = _workers(args)
    try:
        if args.command == "suite":
            status = cmd_suite(cfg, local, out, manifest, workers, only=args.only)
        else:
            status = HANDLERS[args.command](cfg, local, out, manifest, workers)
    except ConfigError as exc:
        _err(str(exc))
        status = EXIT_CONFIG
    except OSError as exc:
        _err(f"I/O error: {exc}")
        status = EXIT_CONFIG
    except ValueError as exc:
        _err(f"invalid parameters: {exc}")
        status = EXIT_CONFIG
    try:
        manifest.finish(out, {EXIT_OK: "pass", EXIT_FAIL: "fail"}.get(status, "error"))
    except OSError as exc:
        _err(f"I/O error writing manifest: {exc}")
        return EXIT_CONFIG
    return status


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
