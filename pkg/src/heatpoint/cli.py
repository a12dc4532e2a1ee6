"""Command line entry point.

    heatpoint run CONFIG [--output-dir DIR] [--no-thinning] [--literal-noise-norm]
    heatpoint sweep CONFIG --seeds K [--output-dir DIR] [--no-thinning] [--literal-noise-norm]
    heatpoint verify-forward [--cases N] [--grid-n N] [--seed S] [--output-dir DIR]
    heatpoint ppp-diagnostics [--intensity L] [--retention T] [--replications N] [--output-dir DIR]

CONFIG is a YAML file or the name of a bundled config (``heatpoint list``).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments
from .forward import DEFAULT_MODES, PointSourceSet, fd_oracle_fluxes, spectral_flux_matrix
from .geometry import ConfigurationError, Domain, build_mesh, make_observation_plan

logger = logging.getLogger("heatpoint")


def _load(args) -> experiments.ExperimentConfig:
    cfg = experiments.load_config(args.config)
    changes = {}
    if args.no_thinning:
        changes["thinning"] = False
    if args.literal_noise_norm:
        changes["noise_norm"] = "euclidean"
    if args.seed is not None:
        changes["seed"] = args.seed
    return cfg.with_overrides(**changes) if changes else cfg


def _default_out(cfg, args, suffix=""):
    if args.output_dir:
        return Path(args.output_dir)
    if cfg.output_dir:
        return Path(cfg.output_dir)
    return Path("results") / (cfg.name + suffix)


def cmd_run(args) -> int:
    cfg = _load(args)
    if args.verify_forward:
        check = verify_modes(cfg)
        print(f"forward truncation self-test: max relative change {check:.2e} when doubling modes")
        if check > 1e-8:
            print("forward self-test failed", file=sys.stderr)
            return 1
    out = _default_out(cfg, args, "" if cfg.sampler.thinning else "_no_thinning")
    res = experiments.run_experiment(cfg, out, figures=not args.no_figures)
    print(experiments.table_text(res), end="")
    print(f"outputs written to {out}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    out = _default_out(cfg, args, "_sweep" if cfg.sampler.thinning else "_sweep_no_thinning")
    results = experiments.sweep(cfg, args.seeds, out, figures=not args.no_figures)
    errs = np.array([r.final_relative_error for r in results])
    exact = sum(bool(r.match and r.match.exact_positions) for r in results)
    print(f"{cfg.name}: {len(results)} seeds, median relative error {np.median(errs):.4f}, "
          f"exact positions in {exact}/{len(results)}")
    print(f"sweep table written to {out / 'sweep.csv'}")
    return 0


def verify_modes(cfg: experiments.ExperimentConfig) -> float:
    """Relative change of the observation matrix when the mode count doubles."""
    problem = experiments.build_problem(cfg)
    A2 = spectral_flux_matrix(problem.mesh.nodes, problem.plan, 2 * cfg.modes)
    A1 = problem.A.entries
    return float(np.max(np.abs(A2 - A1)) / np.max(np.abs(A1)))


def cmd_verify_forward(args) -> int:
    domain = Domain(1.0)
    mesh = build_mesh(domain, 0.125)
    plan = make_observation_plan(domain, args.sensors, fixed_time=1.0)
    rng = np.random.default_rng(args.seed)
    a = domain.half_width
    far = mesh.nodes[np.max(np.abs(mesh.nodes), axis=1) <= a - 0.25 + 1e-12]
    picks = far[rng.choice(len(far), size=args.cases, replace=False)]
    cases = [PointSourceSet(p[None, :], [1.0]) for p in picks]
    spectral = spectral_flux_matrix(picks, plan, DEFAULT_MODES)
    oracle = fd_oracle_fluxes(cases, plan, grid_n=args.grid_n, dt=1e-3)
    rows, ok = [], True
    for k, p in enumerate(picks):
        rel = float(np.linalg.norm(oracle[:, k] - spectral[:, k]) / np.linalg.norm(spectral[:, k]))
        ok &= rel < args.tol
        rows.append({"x": float(p[0]), "y": float(p[1]), "relative_l2": rel})
        print(f"source ({p[0]:+.3f}, {p[1]:+.3f})  relative L2 discrepancy {rel:.2e}  "
              f"{'PASS' if rel < args.tol else 'FAIL'}")
    if args.output_dir:
        out = Path(args.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "verify_forward.json").write_text(json.dumps(rows, indent=2) + "\n")
    return 0 if ok else 1


def cmd_ppp(args) -> int:
    from . import ppp

    domain = Domain(1.0)
    lam = ppp.IntensityFn.homogeneous(args.intensity)
    rects = [(-1.0, 0.0, -1.0, 1.0), (0.0, 1.0, -1.0, 1.0)]
    rng = np.random.default_rng(args.seed)
    base = ppp.replicate_counts(lambda r: ppp.sample_ppp(lam, domain, r), rects, args.replications, rng)
    thinned = ppp.replicate_counts(
        lambda r: ppp.thin_ppp(ppp.sample_ppp(lam, domain, r), args.retention, r),
        rects, args.replications, rng,
    )
    lines = []
    for label, counts, mean in (
        ("sample", base.sum(axis=1), args.intensity * domain.area),
        ("thin", thinned.sum(axis=1), args.retention * args.intensity * domain.area),
    ):
        stat, p = ppp.poisson_chisquare(counts, mean)
        lines.append(f"{label:7s} mean count {counts.mean():.3f} (expected {mean:.3f})  chi2 {stat:.2f}  p={p:.3f}")
    rho = np.corrcoef(base[:, 0], base[:, 1])[0, 1]
    lines.append(f"count correlation between halves {rho:+.4f}")
    print("\n".join(lines))
    if args.output_dir:
        out = Path(args.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        pts = ppp.sample_ppp(lam, domain, np.random.default_rng(args.seed))
        kept = ppp.thin_ppp(pts, args.retention, np.random.default_rng(args.seed + 1))
        experiments._write_csv(out / "ppp_sample.csv", ["x", "y"], pts.tolist())
        experiments._write_csv(out / "ppp_thinned.csv", ["x", "y"], kept.tolist())
        experiments._write_csv(
            out / "ppp_counts.csv", ["replication", "left", "right"],
            ([i, int(c[0]), int(c[1])] for i, c in enumerate(base)),
        )
        (out / "ppp_summary.txt").write_text("\n".join(lines) + "\n")
    return 0


def cmd_list(args) -> int:
    for name in experiments.bundled_configs():
        print(name)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="heatpoint", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def run_flags(sp):
        sp.add_argument("config")
        sp.add_argument("--output-dir")
        sp.add_argument("--no-thinning", action="store_true", help="pCN level-set updates only")
        sp.add_argument("--literal-noise-norm", action="store_true",
                        help="scale noise by the Euclidean norm of the clean data, not its RMS")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--no-figures", action="store_true")

    sp = sub.add_parser("run", help="run one experiment")
    run_flags(sp)
    sp.add_argument("--verify-forward", action="store_true",
                    help="check the observation matrix against a doubled mode count first")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="run an experiment over consecutive seeds")
    run_flags(sp)
    sp.add_argument("--seeds", type=int, required=True)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("verify-forward", help="spectral forward map vs finite differences")
    sp.add_argument("--cases", type=int, default=5)
    sp.add_argument("--sensors", type=int, default=10)
    sp.add_argument("--grid-n", type=int, default=256)
    sp.add_argument("--tol", type=float, default=1e-3)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--output-dir")
    sp.set_defaults(func=cmd_verify_forward)

    sp = sub.add_parser("ppp-diagnostics", help="Poisson point process sampling checks")
    sp.add_argument("--intensity", type=float, default=5.0)
    sp.add_argument("--retention", type=float, default=0.3)
    sp.add_argument("--replications", type=int, default=10000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--output-dir")
    sp.set_defaults(func=cmd_ppp)

    sp = sub.add_parser("list", help="list bundled configs")
    sp.set_defaults(func=cmd_list)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # any module failure -> nonzero exit with a diagnostic
        logger.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
