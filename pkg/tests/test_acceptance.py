"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``CRITERION k: PASS|FAIL`` line with the measured
numbers, then asserts.  The reconstruction criteria run full seeded sweeps
of the bundled configs and take several minutes each on one core.
"""

import math
import statistics

import numpy as np
import pytest

from heatpoint.experiments import bundled_configs, build_problem, load_config, reconstruct, write_outputs
from heatpoint.forward import PointSourceSet, fd_oracle_fluxes, spectral_flux_matrix
from heatpoint.geometry import Domain, build_mesh, make_observation_plan
from heatpoint.inference import FluxData, Likelihood, initial_state, pcn_step
from heatpoint.levelset import ThresholdSpec
from heatpoint.ppp import IntensityFn, poisson_chisquare, replicate_counts, sample_ppp, superpose, thin_ppp
from heatpoint.prior import CovarianceSpec, build_prior

SEEDS = range(10)
TOL = 0.05

# seed-0 output directories of full runs, reused by the replay check
_FIRST_RUNS = {}


def report(capsys, k, ok, detail):
    with capsys.disabled():
        print(f"\nCRITERION {k}: {'PASS' if ok else 'FAIL'}  {detail}")


def _sweep(name, seeds, tmp_root, **overrides):
    cfg = load_config(name)
    if overrides:
        cfg = cfg.with_overrides(**overrides)
    problem = build_problem(cfg)
    results = []
    for s in seeds:
        res = reconstruct(cfg.with_overrides(seed=s), problem)
        if s == 0 and not overrides:
            out = tmp_root / f"{name}_first"
            write_outputs(res, out, figures=True)
            _FIRST_RUNS[name] = out
        results.append(res)
    return results


def _describe(res):
    return "[" + ", ".join(f"({x:+.3f},{y:+.3f}):{w:.4f}" for (x, y), w in res.estimate) + "]"


@pytest.fixture(scope="module")
def runs_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance_runs")


def test_criterion_1_single_source(runs_dir, capsys):
    results = _sweep("example3_n1", SEEDS, runs_dir)
    hits = sum(r.match.exact_recovery(TOL) for r in results)
    ok = hits >= 8
    detail = f"example3_n1 exact in {hits}/10 seeds (need >= 8); " + "; ".join(
        f"s{r.config.seed}={_describe(r)}" for r in results
    )
    report(capsys, 1, ok, detail)
    assert ok


def test_criterion_2_two_and_three_sources(runs_dir, capsys):
    lines, ok = [], True
    for name in ("example3_n2", "example3_n3"):
        results = _sweep(name, SEEDS, runs_dir)
        hits = sum(r.match.exact_recovery(TOL) for r in results)
        ok &= hits >= 7
        lines.append(f"{name} exact in {hits}/10 (need >= 7)")
        lines += [f"  s{r.config.seed}={_describe(r)}" for r in results]
    report(capsys, 2, ok, "\n".join(lines))
    assert ok


def test_criterion_3_four_sources(runs_dir, capsys):
    results = _sweep("example3_n4", SEEDS, runs_dir)
    hits = sum(r.match.exact_positions for r in results)
    ok = hits >= 5
    lines = [f"example3_n4 all four positions found in {hits}/10 (need >= 5)"]
    for r in results:
        errs = ", ".join(f"{p.position_error_cells:.2f} cells/{p.intensity_error:+.4f}" for p in r.match.pairs)
        spur = ", ".join(f"({x:+.3f},{y:+.3f}):{w:.4f}" for (x, y), w in r.match.spurious)
        lines.append(f"  s{r.config.seed}: position/intensity errors [{errs}] spurious [{spur}] missed {len(r.match.missed)}")
    report(capsys, 3, ok, "\n".join(lines))
    assert ok


def test_criterion_4_thinning_ablation(capsys):
    seeds = range(20)
    cfg = load_config("example2_n2")
    problem = build_problem(cfg)
    with_t = [reconstruct(cfg.with_overrides(seed=s), problem).final_relative_error for s in seeds]
    no_cfg = cfg.with_overrides(thinning=False)
    without = [reconstruct(no_cfg.with_overrides(seed=s), problem).final_relative_error for s in seeds]
    m_with, m_without = statistics.median(with_t), statistics.median(without)
    ok = m_with < m_without
    report(capsys, 4, ok, f"example2_n2 median relative error {m_with:.4f} with thinning vs {m_without:.4f} without")
    assert ok


def test_criterion_5_forward_oracle(capsys):
    domain = Domain(1.0)
    mesh = build_mesh(domain, 0.125)
    plan = make_observation_plan(domain, 10, fixed_time=1.0)
    rng = np.random.default_rng(2024)
    far = mesh.nodes[np.max(np.abs(mesh.nodes), axis=1) <= 0.75 + 1e-12]
    picks = far[rng.choice(len(far), size=10, replace=False)]
    cases = [PointSourceSet(p[None, :], [1.0]) for p in picks]
    spectral = spectral_flux_matrix(picks, plan)
    # the finest grid of the refinement study serves as the oracle
    f64 = fd_oracle_fluxes(cases, plan, grid_n=64)
    f128 = fd_oracle_fluxes(cases, plan, grid_n=128)
    f256 = fd_oracle_fluxes(cases, plan, grid_n=256)
    rel = np.linalg.norm(f256 - spectral, axis=0) / np.linalg.norm(spectral, axis=0)
    ratio = np.linalg.norm(f64 - f128, axis=0) / np.linalg.norm(f128 - f256, axis=0)
    ok = bool(np.all(rel < 1e-3) and np.all((ratio >= 3) & (ratio <= 5)))
    detail = (
        f"max relative L2 {rel.max():.2e} (need < 1e-3); refinement ratios "
        f"{np.round(ratio, 2).tolist()} (need in [3, 5])"
    )
    report(capsys, 5, ok, detail)
    assert ok


def test_criterion_6_pcn_prior_invariance(A10, mesh, capsys):
    # 10^4 independent replicas, each advanced by pCN steps under Phi == 0;
    # the replica endpoints are the chain iterates whose spread is measured
    n_rep, n_steps, beta = 10_000, 20, 0.1
    spec = CovarianceSpec()
    like = Likelihood(A10, FluxData(np.zeros(A10.shape[0]), 1.0), data_weight=0.0)
    thr = ThresholdSpec()
    prior = build_prior(mesh, spec, np.random.default_rng(7))
    accept_rng = np.random.default_rng(8)
    finals = np.empty((n_rep, mesh.node_count))
    accepted = proposed = 0
    for i in range(n_rep):
        st = initial_state(prior.draw(), like, thr)
        for xi in prior.draw(n_steps):
            st = pcn_step(st, beta, prior, like, thr, accept_rng, xi)
        finals[i] = st.phi
        accepted += st.accepted
        proposed += st.proposed
    var = finals.var(axis=0)
    worst = float(np.max(np.abs(var - spec.variance)) / spec.variance)
    rate = accepted / proposed
    ok = worst < 0.05 and rate == 1.0
    report(capsys, 6, ok, f"max per-node variance deviation {worst:.4f} (need < 0.05); acceptance rate {rate}")
    assert ok


def test_criterion_7_ppp_statistics(capsys):
    D = Domain(1.0)
    n = 10_000
    whole = [(-1.0, 1.0, -1.0, 1.0)]
    void_rect = (-0.5, 0.0, -0.5, 0.5)
    lam5 = IntensityFn.homogeneous(5.0)
    counts_h = replicate_counts(lambda r: sample_ppp(lam5, D, r), whole + [void_rect], n, 100)
    counts_t = replicate_counts(lambda r: thin_ppp(sample_ppp(IntensityFn.homogeneous(10.0), D, r), 0.3, r),
                                whole, n, 101)
    counts_s = replicate_counts(
        lambda r: superpose(sample_ppp(IntensityFn.homogeneous(2.0), D, r),
                            sample_ppp(IntensityFn.homogeneous(3.0), D, r)),
        whole, n, 102)
    p_h = poisson_chisquare(counts_h[:, 0], 20.0)[1]
    p_t = poisson_chisquare(counts_t[:, 0], 12.0)[1]
    p_s = poisson_chisquare(counts_s[:, 0], 20.0)[1]
    p_void = math.exp(-5.0 * 0.5)
    p_hat = float(np.mean(counts_h[:, 1] == 0))
    se = math.sqrt(p_void * (1 - p_void) / n)
    ok = p_h > 0.01 and p_t > 0.01 and p_s > 0.01 and abs(p_hat - p_void) < 3 * se
    detail = (
        f"chi-square p: sample {p_h:.3f}, thin {p_t:.3f}, superpose {p_s:.3f} (need > 0.01); "
        f"void {p_hat:.4f} vs {p_void:.4f} (3 s.e. = {3 * se:.4f})"
    )
    report(capsys, 7, ok, detail)
    assert ok


def test_criterion_8_replay(runs_dir, capsys):
    mismatched = []
    names = bundled_configs()
    for name in names:
        cfg = load_config(name)
        problem = build_problem(cfg)
        dirs = []
        if name in _FIRST_RUNS:
            dirs.append(_FIRST_RUNS[name])
        while len(dirs) < 2:
            out = runs_dir / f"{name}_replay{len(dirs)}"
            write_outputs(reconstruct(cfg, problem), out, figures=True)
            dirs.append(out)
        a, b = dirs
        files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
        if files_a != files_b or any((a / f).read_bytes() != (b / f).read_bytes() for f in files_a):
            mismatched.append(name)
    ok = not mismatched
    report(capsys, 8, ok, f"{len(names) - len(mismatched)}/{len(names)} bundled configs replay byte-identically"
           + (f"; differing: {mismatched}" if mismatched else ""))
    assert ok
