"""Config-driven experiments: synthetic data, reconstruction runs, reports.

A config is a YAML document::

    name: example3_n1
    seed: 0
    domain: {half_width: 1.0}
    mesh: {spacing: 0.125}
    observation: {n_sensors: 10, fixed_time: 1.0}   # or dt + t_final, or sensors: [[x, y], ...]
    forward: {modes: 60, cache_dir: null}
    truth:
      - {x: -0.875, y: 0.0, intensity: 0.7}
    noise: {level: 0.01, norm: rms}                 # norm: rms | euclidean
    prior: {variance: 0.25, length_scale: 0.1, nugget: 1.0e-8}
    threshold: {c: 0.01, variant: weighted, clearance: 0.01}
    sampler: {beta: 0.01, k_pcn: 50, n_max: 1000, thinning: true, prior_factor: 20.0}
    output: {directory: results/example3_n1, figures: true}

Missing sections fall back to the defaults of the corresponding dataclass.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml

from .forward import (
    DEFAULT_MODES,
    PointSourceSet,
    cached_observation_matrix,
    forward_flux,
)
from .geometry import ConfigurationError, Domain, Mesh, build_mesh, make_observation_plan
from .inference import (
    FluxData,
    Likelihood,
    RandomStreams,
    SamplerSettings,
    ThinningState,
    bayesian_thinning_run,
    relative_error,
)
from .levelset import ThresholdSpec
from .prior import CovarianceSpec, build_prior

logger = logging.getLogger(__name__)

NOISE_NORMS = ("rms", "euclidean")


@dataclass(frozen=True)
class ObservationSpec:
    n_sensors: int = 10
    fixed_time: Optional[float] = 1.0
    dt: Optional[float] = None
    t_final: Optional[float] = None
    sensors: Optional[Tuple[Tuple[float, float], ...]] = None


@dataclass(frozen=True)
class NoiseSpec:
    level: float = 0.01
    norm: str = "rms"

    def __post_init__(self):
        if not self.level >= 0:
            raise ConfigurationError(f"noise level must be non-negative, got {self.level}")
        if self.norm not in NOISE_NORMS:
            raise ConfigurationError(f"noise norm must be one of {NOISE_NORMS}")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    half_width: float = 1.0
    spacing: float = 0.125
    observation: ObservationSpec = ObservationSpec()
    modes: int = DEFAULT_MODES
    cache_dir: Optional[str] = None
    truth: PointSourceSet = field(default_factory=PointSourceSet)
    noise: NoiseSpec = NoiseSpec()
    prior: CovarianceSpec = CovarianceSpec()
    threshold: ThresholdSpec = ThresholdSpec()
    sampler: SamplerSettings = SamplerSettings()
    output_dir: Optional[str] = None
    figures: bool = True

    def with_overrides(self, **changes) -> "ExperimentConfig":
        """Copy with top-level fields replaced; ``thinning``/``noise_norm`` reach into sections."""
        if "thinning" in changes:
            changes["sampler"] = dataclasses.replace(self.sampler, thinning=changes.pop("thinning"))
        if "noise_norm" in changes:
            changes["noise"] = dataclasses.replace(self.noise, norm=changes.pop("noise_norm"))
        return dataclasses.replace(self, **changes)


def _section(raw: dict, key: str, cls, rename=None):
    data = dict(raw.get(key) or {})
    for old, new in (rename or {}).items():
        if old in data:
            data[new] = data.pop(old)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigurationError(f"unknown keys in [{key}]: {sorted(unknown)}")
    return cls(**data)


def config_from_dict(raw: dict) -> ExperimentConfig:
    known = {
        "name", "seed", "domain", "mesh", "observation", "forward", "truth",
        "noise", "prior", "threshold", "sampler", "output",
    }
    unknown = set(raw) - known
    if unknown:
        raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")
    obs = dict(raw.get("observation") or {})
    if obs.get("sensors") is not None:
        obs["sensors"] = tuple(tuple(float(v) for v in p) for p in obs["sensors"])
    if "dt" in obs and "fixed_time" not in obs:
        obs["fixed_time"] = None
    observation = _section({"observation": obs}, "observation", ObservationSpec)
    truth_rows = raw.get("truth") or []
    truth = PointSourceSet.from_pairs(
        ((float(r["x"]), float(r["y"])), float(r.get("intensity", 1.0))) for r in truth_rows
    )
    fwd = raw.get("forward") or {}
    out = raw.get("output") or {}
    return ExperimentConfig(
        name=str(raw.get("name", "experiment")),
        seed=int(raw.get("seed", 0)),
        half_width=float((raw.get("domain") or {}).get("half_width", 1.0)),
        spacing=float((raw.get("mesh") or {}).get("spacing", 0.125)),
        observation=observation,
        modes=int(fwd.get("modes", DEFAULT_MODES)),
        cache_dir=fwd.get("cache_dir"),
        truth=truth,
        noise=_section(raw, "noise", NoiseSpec),
        prior=_section(raw, "prior", CovarianceSpec),
        threshold=_section(raw, "threshold", ThresholdSpec),
        sampler=_section(raw, "sampler", SamplerSettings),
        output_dir=out.get("directory"),
        figures=bool(out.get("figures", True)),
    )


def bundled_configs() -> List[str]:
    root = resources.files("heatpoint") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_config(source: Union[str, Path]) -> ExperimentConfig:
    """Load a YAML config from a path, or a bundled config by name."""
    path = Path(source)
    if path.is_file():
        text = path.read_text()
    else:
        name = str(source)
        if name.endswith(".yaml"):
            name = name[:-5]
        candidate = resources.files("heatpoint") / "configs" / f"{name}.yaml"
        if not candidate.is_file():
            raise ConfigurationError(
                f"no config file {source!r} and no bundled config of that name "
                f"(bundled: {', '.join(bundled_configs())})"
            )
        text = candidate.read_text()
    raw = yaml.safe_load(text) or {}
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a mapping")
    return config_from_dict(raw)


# --- problem assembly ----------------------------------------------------------


@dataclass(eq=False)
class Problem:
    config: ExperimentConfig
    domain: Domain
    mesh: Mesh
    plan: object
    A: object


def build_problem(config: ExperimentConfig) -> Problem:
    domain = Domain(config.half_width)
    mesh = build_mesh(domain, config.spacing)
    obs = config.observation
    plan = make_observation_plan(
        domain,
        obs.n_sensors,
        fixed_time=obs.fixed_time,
        dt=obs.dt,
        t_final=obs.t_final,
        sensors=obs.sensors,
    )
    truth = config.truth
    if truth.count:
        gap = domain.half_width - np.max(np.abs(truth.locations), axis=1)
        if np.any(gap < config.spacing - 1e-12):
            raise ConfigurationError("true sources must be at least one mesh cell from the boundary")
    A = cached_observation_matrix(mesh, plan, config.modes, config.cache_dir)
    return Problem(config, domain, mesh, plan, A)


def generate_data(
    truth: PointSourceSet,
    plan,
    delta: float,
    rng: Union[int, np.random.Generator, None] = None,
    norm: str = "rms",
    modes: int = DEFAULT_MODES,
) -> FluxData:
    """Synthetic data ``g = K(truth) + sigma * xi`` with ``sigma = delta * |K(truth)|``.

    ``norm="rms"`` takes the root-mean-square of the clean flux vector;
    ``norm="euclidean"`` takes its plain 2-norm.
    """
    if not delta >= 0:
        raise ConfigurationError("noise level must be non-negative")
    if norm not in NOISE_NORMS:
        raise ConfigurationError(f"noise norm must be one of {NOISE_NORMS}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    clean = forward_flux(truth, plan, modes)
    scale = float(np.linalg.norm(clean))
    if norm == "rms":
        scale /= math.sqrt(len(clean))
    if delta > 0 and scale == 0:
        raise ConfigurationError("relative noise is undefined for a zero signal")
    sigma = delta * scale
    xi = rng.standard_normal(len(clean))
    g = clean + sigma * xi
    # a noise-free run still needs a positive sigma for the likelihood
    return FluxData(g=g, sigma=sigma if sigma > 0 else 1e-12 * max(scale, 1.0), plan=plan)


# --- matching ------------------------------------------------------------------


@dataclass(frozen=True)
class MatchedPair:
    true_location: Tuple[float, float]
    true_intensity: float
    est_location: Tuple[float, float]
    est_intensity: float
    position_error_cells: float
    intensity_error: float


@dataclass(frozen=True)
class MatchReport:
    pairs: Tuple[MatchedPair, ...]
    spurious: Tuple[Tuple[Tuple[float, float], float], ...]
    missed: Tuple[Tuple[Tuple[float, float], float], ...]

    @property
    def exact_positions(self) -> bool:
        return not self.missed and all(p.position_error_cells == 0 for p in self.pairs)

    def all_true_positions_found(self) -> bool:
        return self.exact_positions

    def exact_recovery(self, intensity_tol: float) -> bool:
        """Same count, exact nodes, every intensity within ``intensity_tol``."""
        return (
            self.exact_positions
            and not self.spurious
            and all(abs(p.intensity_error) <= intensity_tol for p in self.pairs)
        )


def match_sources(
    est: PointSourceSet,
    truth: PointSourceSet,
    spacing: float = 0.125,
    max_cells: float = 2.0,
) -> MatchReport:
    """Greedy closest-pair assignment between estimate and truth.

    Pairs further apart than ``max_cells`` mesh cells are not matched; the
    leftover estimates are spurious and leftover truths missed.
    """
    est_pts = list(est)
    true_pts = list(truth)
    cand = []
    for i, (tp, tw) in enumerate(true_pts):
        for j, (ep, ew) in enumerate(est_pts):
            d = math.hypot(tp[0] - ep[0], tp[1] - ep[1]) / spacing
            if d <= max_cells + 1e-9:
                cand.append((round(d, 9), i, j))
    cand.sort()
    used_t, used_e, pairs = set(), set(), []
    for d, i, j in cand:
        if i in used_t or j in used_e:
            continue
        used_t.add(i)
        used_e.add(j)
        (tp, tw), (ep, ew) = true_pts[i], est_pts[j]
        pairs.append((i, MatchedPair(tp, tw, ep, ew, float(d), ew - tw)))
    pairs = [p for _, p in sorted(pairs, key=lambda t: t[0])]
    spurious = tuple(est_pts[j] for j in range(len(est_pts)) if j not in used_e)
    missed = tuple(true_pts[i] for i in range(len(true_pts)) if i not in used_t)
    return MatchReport(tuple(pairs), spurious, missed)


# --- running -------------------------------------------------------------------


@dataclass(eq=False)
class ExperimentResult:
    config: ExperimentConfig
    problem: Problem
    data: FluxData
    state: ThinningState
    estimate: PointSourceSet
    match: Optional[MatchReport]
    final_relative_error: float
    final_misfit: float
    reference: Optional["ExperimentResult"] = None
    files: List[Path] = field(default_factory=list)

    def summary(self) -> dict:
        out = {
            "name": self.config.name,
            "seed": self.config.seed,
            "thinning": self.config.sampler.thinning,
            "noise_norm": self.config.noise.norm,
            "noise_sigma": self.data.sigma,
            "source_count": self.estimate.count,
            "final_relative_error": self.final_relative_error,
            "final_misfit": self.final_misfit,
            "final_potential": float(self.state.potential),
            "acceptance_rate": self.state.accepted / self.state.proposed if self.state.proposed else None,
            "estimate": self.estimate.to_records(),
            "truth": self.config.truth.to_records(),
        }
        if self.match is not None:
            out["match"] = {
                "pairs": [dataclasses.asdict(p) for p in self.match.pairs],
                "spurious": [{"x": p[0], "y": p[1], "intensity": w} for p, w in self.match.spurious],
                "missed": [{"x": p[0], "y": p[1], "intensity": w} for p, w in self.match.missed],
                "exact_positions": self.match.exact_positions,
            }
        if self.reference is not None:
            ref = self.reference
            out["ablation"] = {
                "reference_thinning": ref.config.sampler.thinning,
                "reference_final_misfit": ref.final_misfit,
                "reference_final_relative_error": ref.final_relative_error,
                "misfit_worse_than_reference": self.final_misfit > ref.final_misfit,
                "error_worse_than_reference": self.final_relative_error
                > ref.final_relative_error,
            }
        return _clean(out)


def _clean(obj):
    """Plain-Python, JSON-safe copy (NaN -> None, numpy scalars -> floats)."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return None if math.isnan(v) else v
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def reconstruct(config: ExperimentConfig, problem: Optional[Problem] = None) -> ExperimentResult:
    """Generate data and run the sampler; no files are written."""
    problem = problem or build_problem(config)
    streams = RandomStreams.from_seed(config.seed)
    data = generate_data(
        config.truth, problem.plan, config.noise.level, streams.noise, config.noise.norm, config.modes
    )
    like = Likelihood(problem.A, data)
    prior = build_prior(problem.mesh, config.prior, streams.prior)
    truth = config.truth if config.truth.count else None
    state = bayesian_thinning_run(prior, like, config.threshold, config.sampler, streams, truth)
    est = state.theta(problem.mesh)
    match = match_sources(est, config.truth, config.spacing) if truth is not None else None
    err = relative_error(est, config.truth, problem.mesh) if truth is not None else math.nan
    return ExperimentResult(
        config=config,
        problem=problem,
        data=data,
        state=state,
        estimate=est,
        match=match,
        final_relative_error=err,
        final_misfit=like.misfit(state.nodes, state.weights),
    )


def run_experiment(
    config: ExperimentConfig,
    output_dir: Union[str, Path, None] = None,
    figures: Optional[bool] = None,
) -> ExperimentResult:
    """Reconstruct and write every report file.

    Without thinning, the thinning run with the same seed is also performed
    and the summary records how the two compare.
    """
    problem = build_problem(config)
    result = reconstruct(config, problem)
    if not config.sampler.thinning:
        result.reference = reconstruct(config.with_overrides(thinning=True), problem)
    out = output_dir or config.output_dir
    if out is not None:
        want_figs = config.figures if figures is None else figures
        result.files = write_outputs(result, Path(out), want_figs)
    return result


def sweep(
    config: ExperimentConfig,
    n_seeds: int,
    output_dir: Union[str, Path, None] = None,
    figures: bool = False,
) -> List[ExperimentResult]:
    """Run seeds ``config.seed .. config.seed + n_seeds - 1``; writes a sweep table if asked."""
    problem = build_problem(config)
    results = []
    for k in range(n_seeds):
        cfg = config.with_overrides(seed=config.seed + k)
        res = reconstruct(cfg, problem)
        if output_dir is not None:
            res.files = write_outputs(res, Path(output_dir) / f"seed_{cfg.seed:04d}", figures)
        results.append(res)
    if output_dir is not None:
        write_sweep_table(results, Path(output_dir) / "sweep.csv")
    return results


# --- output files --------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else repr(float(v))
    return str(v)


def _write_csv(path: Path, header: Sequence[str], rows) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    path.write_text(buf.getvalue())
    return path


def table_text(result: ExperimentResult) -> str:
    """Plain-text table: exact position/intensity beside the reconstruction."""
    lines = [
        f"{result.config.name}  seed={result.config.seed}  "
        f"thinning={'on' if result.config.sampler.thinning else 'off'}",
        f"{'Exact position':>20} {'Intensity':>10} | {'Reconstructed position':>24} {'Intensity':>10}",
        "-" * 70,
    ]

    def pos(p):
        return f"({p[0]:.3f}, {p[1]:.3f})"

    m = result.match
    if m is not None:
        for p in m.pairs:
            lines.append(
                f"{pos(p.true_location):>20} {p.true_intensity:>10.4f} | "
                f"{pos(p.est_location):>24} {p.est_intensity:>10.4f}"
            )
        for loc, w in m.missed:
            lines.append(f"{pos(loc):>20} {w:>10.4f} | {'(missed)':>24} {'':>10}")
        for loc, w in m.spurious:
            lines.append(f"{'':>20} {'':>10} | {pos(loc):>24} {w:>10.4f}")
    else:
        for loc, w in result.estimate:
            lines.append(f"{'':>20} {'':>10} | {pos(loc):>24} {w:>10.4f}")
    lines.append("-" * 70)
    lines.append(f"relative error {result.final_relative_error:.4f}   data misfit {result.final_misfit:.4e}")
    if result.reference is not None:
        ref = result.reference
        verdict = "worse" if result.final_misfit > ref.final_misfit else "not worse"
        lines.append(
            f"without thinning: misfit {result.final_misfit:.4e} vs {ref.final_misfit:.4e} "
            f"with thinning ({verdict}); relative error {result.final_relative_error:.4f} "
            f"vs {ref.final_relative_error:.4f}"
        )
    return "\n".join(lines) + "\n"


def write_outputs(result: ExperimentResult, out: Path, figures: bool = True) -> List[Path]:
    out.mkdir(parents=True, exist_ok=True)
    files = []
    st = result.state
    files.append(
        _write_csv(
            out / "trace.csv",
            ["iteration", "relative_error", "J", "potential", "acceptance_rate", "misfit"],
            (
                (r.iteration, r.relative_error, r.count, r.potential, r.acceptance_rate, r.misfit)
                for r in st.trace
            ),
        )
    )
    (out / "sources.json").write_text(json.dumps(_clean(result.estimate.to_records()), indent=2) + "\n")
    files.append(out / "sources.json")
    (out / "summary.json").write_text(json.dumps(result.summary(), indent=2, sort_keys=True) + "\n")
    files.append(out / "summary.json")
    (out / "summary.txt").write_text(table_text(result))
    files.append(out / "summary.txt")
    mesh = result.problem.mesh
    files.append(
        _write_csv(
            out / "field.csv",
            ["node", "x", "y", "phi"],
            ((k, mesh.nodes[k, 0], mesh.nodes[k, 1], st.phi[k]) for k in range(mesh.node_count)),
        )
    )
    rows = [("truth", x, y, w) for (x, y), w in result.config.truth]
    rows += [("estimate", x, y, w) for (x, y), w in result.estimate]
    rows += [("sensor", x, y, "") for x, y in result.problem.plan.sensors]
    files.append(_write_csv(out / "points.csv", ["role", "x", "y", "intensity"], rows))
    plan = result.problem.plan
    clean = forward_flux(result.config.truth, plan, result.config.modes)
    files.append(
        _write_csv(
            out / "observations.csv",
            ["sensor_x", "sensor_y", "time", "clean", "observed"],
            (
                (plan.sensors[i // plan.n_times][0], plan.sensors[i // plan.n_times][1],
                 plan.times[i % plan.n_times], clean[i], result.data.g[i])
                for i in range(plan.obs_count)
            ),
        )
    )
    if result.reference is not None:
        ref_dir = out / "with_thinning"
        files += write_outputs(result.reference, ref_dir, figures=False)
    if figures:
        from .plotting import plot_error_trace, plot_sources

        files.append(plot_sources(result, out / "sources.png"))
        files.append(plot_error_trace(result, out / "error_trace.png"))
    return files


def write_sweep_table(results: Sequence[ExperimentResult], path: Path) -> Path:
    rows = []
    for r in results:
        m = r.match
        rows.append(
            (
                r.config.seed,
                r.config.sampler.thinning,
                r.estimate.count,
                r.final_relative_error,
                r.final_misfit,
                m.exact_positions if m else "",
                len(m.spurious) if m else "",
                len(m.missed) if m else "",
            )
        )
    return _write_csv(
        path,
        ["seed", "thinning", "J", "relative_error", "misfit", "exact_positions", "spurious", "missed"],
        rows,
    )
