"""Command-line interface.

Subcommands: validate, solve, ensemble, norms, cascade, verify.  All read
one configuration (defaults, optional INI file, SPDELAB_* environment,
flags) and echo it on request, print deterministic output in csv, bin (npz)
or json form, and use exit codes

    0  success
    1  a validation or verification check failed
    2  usage or configuration error
    3  numerical failure (instability, blow-up, unresolved scales)
"""

import argparse
import io
import os
import sys
import time as _time

import numpy as np

from . import _kernels
from .cascade import (CascadeConfig, check_difference_decay,
                      check_second_derivative_convergence,
                      energy_estimate_check, run_cascade)
from .config import ConfigError, echo_config, load_config
from .model import (StructuralError, check_coefficient_bounds,
                    default_sample_points, validate_parabolicity)
from .noise import NoiseConfig, sample_path
from .norms import (DegenerateRegionError, holder_norm_x,
                    lattice_from_ensemble, parabolic_holder_norm)
from .solver import (BlowUpError, ResolutionError, StabilityError,
                     ensemble_to_npz, make_grid, run_ensemble,
                     solution_to_csv, solution_to_npz, solve_realization,
                     stability_check)
from .util import fmt_float, to_json_text
from .verify import (ExperimentResult, append_jsonl, convergence_study,
                     linearity_test, oracle_characteristics)


def _add_common(sub):
    sub.add_argument("--config", default=None, help="INI configuration file")
    sub.add_argument("--seed", type=int, default=None,
                     help="override run.master_seed")
    sub.add_argument("--out", default="-",
                     help="output file, or a directory to also receive the "
                          "effective config ('-' = stdout; bin format needs "
                          "a path)")
    sub.add_argument("--workers", type=int, default=None,
                     help="override run.workers")
    sub.add_argument("--format", choices=("csv", "bin", "json"), default=None,
                     help="override output.format")
    sub.add_argument("--echo-config", action="store_true",
                     help="print the effective configuration to stderr")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="spdelab",
        description="stochastic parabolic equations on the torus: solve, "
                    "measure, and check estimates")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("validate", help="check problem structure and bounds")
    _add_common(p)
    p = sub.add_parser("solve", help="march one realization")
    _add_common(p)
    p.add_argument("--sample", type=int, default=0, dest="sample_index",
                   help="realization index within the seeded ensemble")
    p = sub.add_parser("ensemble", help="march independent realizations")
    _add_common(p)
    p = sub.add_parser("norms", help="Holder norm report for an ensemble")
    _add_common(p)
    p = sub.add_parser("cascade", help="nested frozen-coefficient solves")
    _add_common(p)
    p = sub.add_parser("verify", help="linearity / convergence / energy checks")
    _add_common(p)
    p.add_argument("--checks", default="linearity",
                   help="comma list from: linearity, convergence, energy")
    return parser


def _effective_config(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.run.master_seed = int(args.seed)
    if args.workers is not None:
        cfg.run.workers = int(args.workers)
    if args.format is not None:
        cfg.output.format = args.format
    if args.echo_config:
        sys.stderr.write(echo_config(cfg))
    return cfg


def _parse_store(text):
    if text in ("all", "final"):
        return text
    try:
        return int(text)
    except ValueError:
        raise ConfigError("run.store must be 'all', 'final' or a stride, got %r"
                          % text)


class _Sink:
    """Output target: stdout, a file, or a directory.

    A directory target resolves to default_name inside it and additionally
    receives the effective configuration as config.ini so the run can be
    reproduced from its artifacts alone.
    """

    def __init__(self, path, binary, default_name, cfg):
        if path != "-" and os.path.isdir(path):
            with open(os.path.join(path, "config.ini"), "w") as fp:
                fp.write(echo_config(cfg))
            path = os.path.join(path, default_name)
        self.path = path
        if binary and path == "-":
            raise ConfigError("bin format requires --out PATH")

    def write_text(self, text):
        if self.path == "-":
            sys.stdout.write(text)
        else:
            with open(self.path, "w") as fp:
                fp.write(text)

    def write_with(self, writer):
        if self.path == "-":
            writer(sys.stdout)
        else:
            with open(self.path, "w") as fp:
                writer(fp)


def _make_sink(args, cfg, stem):
    fmt = cfg.output.format
    ext = {"csv": "csv", "bin": "npz", "json": "json"}[fmt]
    return _Sink(args.out, fmt == "bin", "%s.%s" % (stem, ext), cfg)


def _emit(sink, fmt, as_json, as_csv, as_npz):
    """Dispatch one report to the requested format; callables are invoked
    lazily so unused representations are never built."""
    if fmt == "json":
        sink.write_text(to_json_text(as_json(), indent=2) + "\n")
    elif fmt == "csv":
        sink.write_with(as_csv)
    else:
        as_npz(sink.path)


# ---------------------------------------------------------------------------
# subcommands

def _cmd_validate(args, cfg):
    spec = cfg.build_spec()
    points = default_sample_points(spec)
    margin = validate_parabolicity(spec, points)
    bounds = check_coefficient_bounds(spec)
    ok = margin.ok and bounds.ok
    report = {
        "ok": ok,
        "parabolicity": {"ok": margin.ok, "margin": margin.margin,
                         "worst_point": list(margin.worst_point),
                         "lam": margin.lam, "n_points": margin.n_points},
        "bounds": {"ok": bounds.ok, "worst_field": bounds.worst_field,
                   "worst_value": bounds.worst_value, "K": bounds.K,
                   "table": bounds.table},
        "backend": _kernels.BACKEND,
    }
    as_json = cfg.output.format == "json"
    sink = _Sink(args.out, False,
                 "validate.json" if as_json else "validate.txt", cfg)
    if as_json:
        sink.write_text(to_json_text(report, indent=2) + "\n")
    else:
        sink.write_text("%s\n%s\nbackend: %s\n"
                        % (margin, bounds, _kernels.BACKEND))
    return 0 if ok else 1


def _solution_json(sol):
    return {"xs": sol.xs, "times": sol.times,
            "state_indices": sol.state_indices, "values": sol.values,
            "h": sol.h, "dt": sol.dt, "periodic": sol.periodic}


def _cmd_solve(args, cfg):
    spec = cfg.build_spec()
    grid = make_grid(spec, cfg.grid.n_points, c_stab=cfg.grid.c_stab)
    cert = stability_check(spec, grid, c_stab=cfg.grid.c_stab)
    if not cert.granted:
        raise StabilityError(str(cert))
    ncfg = NoiseConfig(spec.modes, grid.n_steps, grid.horizon)
    path = sample_path(ncfg, cfg.run.master_seed, args.sample_index)
    t0 = _time.perf_counter()
    sol = solve_realization(spec, path, grid, store=_parse_store(cfg.run.store),
                            chunk_steps=cfg.run.chunk_steps,
                            blowup=cfg.run.blowup, certificate=cert)
    elapsed = _time.perf_counter() - t0
    sink = _make_sink(args, cfg, "solve")
    _emit(sink, cfg.output.format,
          lambda: _solution_json(sol),
          lambda fp: solution_to_csv(sol, fp),
          lambda path_: solution_to_npz(sol, path_))
    sys.stderr.write("max|u| = %s, runtime %.3fs\n"
                     % (fmt_float(float(np.max(np.abs(sol.values)))), elapsed))
    return 0


def _run_configured_ensemble(cfg, spec, grid):
    return run_ensemble(spec, grid, cfg.run.master_seed, cfg.run.n_samples,
                        store=_parse_store(cfg.run.store),
                        workers=cfg.run.workers,
                        chunk_steps=cfg.run.chunk_steps, blowup=cfg.run.blowup)


def _ensemble_csv(ens, fp):
    fp.write("sample,state_index,t,x,value\n")
    for i in range(ens.n_samples):
        vals = ens.stacked[i]
        for r, s in enumerate(ens.state_indices):
            t = ens.times[r]
            for j, x in enumerate(ens.xs):
                fp.write("%d,%d,%s,%s,%s\n" % (i, s, fmt_float(t), fmt_float(x),
                                               fmt_float(vals[r, j])))


def _cmd_ensemble(args, cfg):
    spec = cfg.build_spec()
    grid = make_grid(spec, cfg.grid.n_points, c_stab=cfg.grid.c_stab)
    ens, _ = _run_configured_ensemble(cfg, spec, grid)
    sink = _make_sink(args, cfg, "ensemble")
    _emit(sink, cfg.output.format,
          lambda: {"master_seed": ens.master_seed, "xs": ens.xs,
                   "times": ens.times, "state_indices": ens.state_indices,
                   "stacked": ens.stacked},
          lambda fp: _ensemble_csv(ens, fp),
          lambda path_: ensemble_to_npz(ens, path_))
    return 0


def _cmd_norms(args, cfg):
    spec = cfg.build_spec()
    grid = make_grid(spec, cfg.grid.n_points, c_stab=cfg.grid.c_stab)
    ens, _ = _run_configured_ensemble(cfg, spec, grid)
    lat = lattice_from_ensemble(ens)
    ns = cfg.norms
    rep_x = holder_norm_x(lat, m=ns.m, alpha=ns.alpha, p=ns.p,
                          pair_budget=ns.pair_budget, seed=ns.subsample_seed)
    rep_pt = parabolic_holder_norm(lat, m=ns.m, alpha=ns.alpha, p=ns.p,
                                   pair_budget=ns.pair_budget,
                                   seed=ns.subsample_seed)
    rows = [("space", rep_x), ("parabolic", rep_pt)]

    def as_json():
        return {name: rep.to_dict() for name, rep in rows}

    def as_csv(fp):
        fp.write("kind,sup_part,seminorm,norm\n")
        for name, rep in rows:
            semi = rep.seminorm_x if name == "space" else rep.seminorm_parabolic
            norm = rep.norm_x if name == "space" else rep.norm_parabolic
            fp.write("%s,%s,%s,%s\n" % (name, fmt_float(rep.sup_part),
                                        fmt_float(semi), fmt_float(norm)))

    def as_npz(path_):
        np.savez_compressed(path_, **{
            name + "_" + key: np.float64(val)
            for name, rep in rows
            for key, val in (("sup", rep.sup_part),
                             ("norm", rep.norm_x if name == "space"
                              else rep.norm_parabolic))})

    sink = _make_sink(args, cfg, "norms")
    _emit(sink, cfg.output.format, as_json, as_csv, as_npz)
    return 0


def _cmd_cascade(args, cfg):
    spec = cfg.build_spec()
    cas = cfg.cascade
    ccfg = CascadeConfig(center_x=cas.center_x, rho=cas.rho, levels=cas.levels,
                         radius=cas.radius, n_points=cas.n_points,
                         n_samples=cas.n_samples,
                         master_seed=cfg.run.master_seed,
                         c_stab=cfg.grid.c_stab, chunk_steps=cas.chunk_steps,
                         refine_max=cas.refine_max,
                         store_slices=cas.store_slices,
                         eval_slices=cas.eval_slices, blowup=cfg.run.blowup,
                         workers=cfg.run.workers)
    rep = run_cascade(spec, ccfg)
    decay = check_difference_decay(rep)
    conv = check_second_derivative_convergence(rep)

    def as_json():
        rec = rep.to_dict()
        del rec["runtime_s"]  # keep the record reproducible byte for byte
        rec["checks"] = {
            "difference_decay": {"ok": decay.ok, **decay.values},
            "uxx_convergence": {"ok": conv.ok, **conv.values},
        }
        return rec

    def as_npz(path_):
        np.savez_compressed(
            path_,
            level=np.array([r["level"] for r in rep.level_rows]),
            radius=np.array([r["radius"] for r in rep.level_rows]),
            mean_square_gap=np.array([r["mean_square_gap"] for r in rep.level_rows]),
            diff_sup_d1=np.array([r["diff_sup_d1"] for r in rep.level_rows]),
            diff_sup_d2=np.array([r["diff_sup_d2"] for r in rep.level_rows]),
            decay_ratio_d1=np.array([r["decay_ratio_d1"] for r in rep.level_rows]),
            decay_ratio_d2=np.array([r["decay_ratio_d2"] for r in rep.level_rows]),
            omega_radii=rep.omega.radii, omega=rep.omega.omega)

    sink = _make_sink(args, cfg, "cascade")
    _emit(sink, cfg.output.format, as_json,
          lambda fp: rep.levels_csv(fp), as_npz)
    for check in (decay, conv):
        sys.stderr.write(str(check) + "\n")
    return 0 if decay.ok and conv.ok else 1


def _oracle_compatible(spec):
    """The characteristics oracle covers constant a and one constant sigma
    mode with no other terms."""
    from .model import ZeroPathView
    z = ZeroPathView(spec.modes)
    xs = np.linspace(0.0, spec.length, 7, endpoint=False)
    for name in ("a", "b", "c", "f", "sigma", "nu", "g"):
        fld = getattr(spec, name)
        if fld.depends_x or fld.depends_t or fld.depends_path:
            return None
    for name in ("b", "c", "f", "nu", "g"):
        if np.any(getattr(spec, name).on_grid(xs, 0.0, z)):
            return None
    a = float(spec.a.on_grid(xs[:1], 0.0, z)[0])
    sig = spec.sigma.on_grid(xs[:1], 0.0, z)
    if np.any(sig[1:]):
        return None
    return a, float(sig[0, 0])


def _cmd_verify(args, cfg):
    spec = cfg.build_spec()
    checks = [c.strip() for c in args.checks.split(",") if c.strip()]
    known = {"linearity", "convergence", "energy"}
    bad = sorted(set(checks) - known)
    if bad:
        raise ConfigError("unknown verify checks %s; known: %s"
                          % (bad, ", ".join(sorted(known))))
    results = []
    for check in checks:
        t0 = _time.perf_counter()
        if check == "linearity":
            grid = make_grid(spec, cfg.grid.n_points, c_stab=cfg.grid.c_stab)
            out = linearity_test(spec, list(cfg.verify.scalars), grid,
                                 cfg.run.master_seed,
                                 n_samples=cfg.verify.n_samples,
                                 workers=cfg.run.workers)
            verdict = out["max_rel_dev"] <= 1e-9
            values = {"max_rel_dev": out["max_rel_dev"],
                      "scalars": list(cfg.verify.scalars)}
        elif check == "convergence":
            pair = _oracle_compatible(spec)
            if pair is None:
                raise ConfigError(
                    "convergence check needs constant a and a single constant "
                    "sigma mode with b = c = f = nu = g = 0")
            a, sig = pair
            grids = [make_grid(spec, n, c_stab=cfg.grid.c_stab)
                     for n in cfg.verify.grids]

            def oracle_final(path, grid):
                return oracle_characteristics(a, sig, [(1, 1.0, 0.0)], path,
                                              grid, store="final").values[-1]

            out = convergence_study(spec, grids, oracle_final,
                                    cfg.run.master_seed, cfg.verify.n_samples,
                                    initial_state=lambda xs: np.cos(xs),
                                    workers=cfg.run.workers)
            ratios = [r["ratio_vs_prev"] for r in out["rows"][1:]]
            verdict = (out["rows"][-1]["rel_err"] <= 0.05
                       and all(r >= 1.5 for r in ratios))
            values = {"rows": out["rows"], "rate": out["rate"]}
        else:  # energy
            cas = cfg.cascade
            ccfg = CascadeConfig(center_x=cas.center_x, n_points=cas.n_points,
                                 n_samples=cas.n_samples,
                                 master_seed=cfg.run.master_seed,
                                 c_stab=cfg.grid.c_stab,
                                 chunk_steps=cas.chunk_steps,
                                 workers=cfg.run.workers)
            out = energy_estimate_check(spec, list(cas.radii), ccfg)
            spreads = [v["spread"] for v in out["variants"].values()
                       if "spread" in v]
            verdict = bool(spreads) and all(s <= cfg.verify.spread_max
                                            for s in spreads)
            values = {"variants": out["variants"], "radii": out["radii"]}
        results.append(ExperimentResult(
            name=check, config={"problem": dict(cfg.problem)},
            seed=cfg.run.master_seed, values=values, verdict=bool(verdict),
            runtime_s=_time.perf_counter() - t0))

    sink = _Sink(args.out, cfg.output.format == "bin",
                 "verify.jsonl" if cfg.output.format == "json" else "verify.csv",
                 cfg)
    if cfg.output.format == "json":
        buf = io.StringIO()
        append_jsonl(results, buf)
        sink.write_text(buf.getvalue())
    elif cfg.output.format == "csv":
        def as_csv(fp):
            fp.write("check,verdict\n")
            for r in results:
                fp.write("%s,%s\n" % (r.name, "pass" if r.verdict else "fail"))
        sink.write_with(as_csv)
    else:
        raise ConfigError("verify supports csv and json output")
    return 0 if all(r.verdict for r in results) else 1


_COMMANDS = {
    "validate": _cmd_validate,
    "solve": _cmd_solve,
    "ensemble": _cmd_ensemble,
    "norms": _cmd_norms,
    "cascade": _cmd_cascade,
    "verify": _cmd_verify,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _effective_config(args)
        return _COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        sys.stderr.write("configuration error: %s\n" % exc)
        return 2
    except StructuralError as exc:
        sys.stderr.write("invalid problem: %s\n" % exc)
        return 1
    except (StabilityError, BlowUpError, ResolutionError,
            DegenerateRegionError) as exc:
        sys.stderr.write("numerical failure: %s\n" % exc)
        return 3


if __name__ == "__main__":
    sys.exit(main())
