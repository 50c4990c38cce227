"""Three-step GMsFEM-POD pipelines, error metrics and ensemble statistics.

Step 1 builds a multiscale space on the mean field (offline stages 1 and 2),
Step 2 solves every training sample in it to fill the snapshot bank, and
Step 3 compresses the bank by POD and solves every evaluation sample in the
POD space.  Errors are always measured against per-sample fine solves.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from dataclasses import field as _field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import assembly as fem
from .assembly import Forcing, PermeabilityField, TimeGrid, Trajectory
from .enrichment import EnrichmentConfig, LocalResidualSolver, enrich_timestep, run_enrichment
from .errors import ConfigError, MsromError
from .gmsfem import ReducedSpace, ReducedStepper, assemble_multiscale_space, check_gram, solve_coarse_trajectory
from .grid import TwoScaleMesh, build_two_scale_mesh
from .pod import PODSpace, build_snapshot_bank, compute_pod, solve_pod_trajectory
from .randfield import (
    CovarianceSpec,
    KLEModel,
    build_kle,
    draw_coefficients,
    ingest_raster,
    sample_field,
    synth_high_contrast,
    synth_lognormal,
)

log = logging.getLogger(__name__)

STEP1, STEP2, STEP3 = "Step1", "Step2", "Step3"
MEAN_SAMPLE = -1


# configuration ---------------------------------------------------------------


@dataclass(frozen=True)
class MeshConfig:
    lx: float = 1.0
    ly: float = 1.0
    nx: int = 40
    ny: int = 40
    NX: int = 8
    NY: int = 8


@dataclass(frozen=True)
class FieldConfig:
    """Mean log-field source plus the KLE perturbation around it."""

    mean: str = "synthetic"          # constant | synthetic | lognormal | raster
    mean_value: float = 1.0          # kappa for mean = constant
    raster: str = ""
    contrast: float = 1e4
    pattern_seed: int = 0
    sigma2: float = 1.0
    eta1: float = 0.1
    eta2: float = 0.1
    kle_modes: int = 0               # 0: truncate by energy fraction
    kle_energy: float = 0.95
    kle_max_modes: int = 100
    kle_nx: int = 0                  # 0: automatic KLE grid
    kle_ny: int = 0


@dataclass(frozen=True)
class TimeConfig:
    dt: float = 0.01
    T: float = 1.0


@dataclass(frozen=True)
class ForcingConfig:
    f: float = 1.0
    g: float = 0.0


@dataclass(frozen=True)
class BasisConfig:
    counts: str = "2+3"


@dataclass(frozen=True)
class EnrichConfig:
    theta: float = 1.0
    tol: float = 1e-10
    strategy: str = "reset"
    steps: str = "1"
    non_overlap: bool = False


@dataclass(frozen=True)
class PodConfig:
    l: int = 20


@dataclass(frozen=True)
class SamplesConfig:
    n_train: int = 10
    n_eval: int = 100
    train_seed: int = 1
    eval_seed: int = 2
    selection: str = "iid"           # iid | farthest
    allow_overlap: bool = False


@dataclass(frozen=True)
class SolverConfig:
    direct_limit: int = fem.DIRECT_SOLVE_LIMIT
    rtol: float = 1e-10


@dataclass(frozen=True)
class RunConfig:
    mesh: MeshConfig = _field(default_factory=MeshConfig)
    field: FieldConfig = _field(default_factory=FieldConfig)
    time: TimeConfig = _field(default_factory=TimeConfig)
    forcing: ForcingConfig = _field(default_factory=ForcingConfig)
    basis: BasisConfig = _field(default_factory=BasisConfig)
    enrichment: EnrichConfig = _field(default_factory=EnrichConfig)
    pod: PodConfig = _field(default_factory=PodConfig)
    samples: SamplesConfig = _field(default_factory=SamplesConfig)
    solver: SolverConfig = _field(default_factory=SolverConfig)

    def __post_init__(self):
        parse_counts(self.basis.counts)
        s = self.samples
        if s.n_train < 1 or s.n_eval < 1:
            raise ConfigError("samples.n_train and samples.n_eval must be positive")
        if s.selection not in ("iid", "farthest"):
            raise ConfigError(f"samples.selection must be 'iid' or 'farthest', got {s.selection!r}")
        if s.train_seed == s.eval_seed and not s.allow_overlap:
            raise ConfigError("samples.train_seed and samples.eval_seed coincide; "
                              "set samples.allow_overlap = true to permit shared samples")
        if self.pod.l < 1:
            raise ConfigError("pod.l must be positive")
        if self.field.mean not in ("constant", "synthetic", "lognormal", "raster"):
            raise ConfigError(f"field.mean must be constant|synthetic|lognormal|raster, got {self.field.mean!r}")
        self.enrichment_config(0)

    def to_dict(self) -> dict:
        return asdict(self)

    def build_mesh(self) -> TwoScaleMesh:
        m = self.mesh
        return build_two_scale_mesh((m.lx, m.ly), m.nx, m.ny, m.NX, m.NY)

    def timegrid(self) -> TimeGrid:
        return TimeGrid.from_final_time(self.time.dt, self.time.T)

    def forcing_(self) -> Forcing:
        return Forcing(self.forcing.f, self.forcing.g)

    def enrichment_config(self, levels: int) -> EnrichmentConfig:
        e = self.enrichment
        try:
            steps = tuple(int(s) for s in str(e.steps).replace(",", " ").split())
        except ValueError as exc:
            raise ConfigError(f"enrichment.steps must be integers, got {e.steps!r}") from exc
        return EnrichmentConfig(theta=e.theta, tol=e.tol, max_levels=levels, strategy=e.strategy,
                                steps=steps or (1,), non_overlap=e.non_overlap)


def parse_counts(text: str) -> tuple[int, list[int]]:
    """'2+3' -> (2, [3]); '2+1+1+1' -> (2, [1, 1, 1]); '5' or '5+0' -> (5, [])."""
    try:
        parts = [int(p) for p in str(text).split("+")]
    except ValueError:
        raise ConfigError(f"basis counts must look like 'A+B[+C...]', got {text!r}") from None
    if parts[0] < 1 or any(p < 0 for p in parts):
        raise ConfigError(f"basis counts must be positive, got {text!r}")
    return parts[0], [p for p in parts[1:] if p > 0]


# error metrics ---------------------------------------------------------------


def compute_errors(approx: np.ndarray, reference: np.ndarray, A, M) -> tuple[np.ndarray, np.ndarray]:
    """Relative energy and L2 errors per row (time level); NaN where the reference vanishes."""
    diff = np.atleast_2d(approx) - np.atleast_2d(reference)
    ref = np.atleast_2d(reference)
    num_a, den_a = fem.energy_norm(A, diff), fem.energy_norm(A, ref)
    num_l, den_l = fem.l2_norm(M, diff), fem.l2_norm(M, ref)
    zero = (den_a == 0) | (den_l == 0)
    if np.any(zero):
        warnings.warn(f"reference solution vanishes at {int(zero.sum())} time level(s); "
                      "relative error undefined there (NaN)", RuntimeWarning, stacklevel=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        e_a = np.where(den_a > 0, num_a / np.where(den_a > 0, den_a, 1.0), np.nan)
        e_l = np.where(den_l > 0, num_l / np.where(den_l > 0, den_l, 1.0), np.nan)
    return e_a, e_l


@dataclass
class ErrorReport:
    """Per-sample error curves, keyed by step label."""

    times: np.ndarray
    sample_ids: dict[str, list[int]] = _field(default_factory=dict)
    e_a: dict[str, list[np.ndarray]] = _field(default_factory=dict)
    e_l2: dict[str, list[np.ndarray]] = _field(default_factory=dict)

    def add(self, step: str, sample_id: int, e_a: np.ndarray, e_l2: np.ndarray) -> None:
        self.sample_ids.setdefault(step, []).append(int(sample_id))
        self.e_a.setdefault(step, []).append(np.asarray(e_a, dtype=float))
        self.e_l2.setdefault(step, []).append(np.asarray(e_l2, dtype=float))

    @property
    def steps(self) -> list[str]:
        return list(self.e_a)

    def stats(self, step: str) -> dict[str, np.ndarray]:
        mean_a, var_a = ensemble_stats(self.e_a[step])
        mean_l, var_l = ensemble_stats(self.e_l2[step])
        return {"mean_ea": mean_a, "var_ea": var_a, "mean_el2": mean_l, "var_el2": var_l}

    def final_mean_energy(self, step: str) -> float:
        return float(self.stats(step)["mean_ea"][-1])


def ensemble_stats(curves: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise mean and unbiased variance across samples (variance 0 for one sample)."""
    X = np.atleast_2d(np.asarray(curves, dtype=float))
    if X.shape[0] == 0:
        raise ValueError("ensemble_stats needs at least one curve")
    mean = X.mean(axis=0)
    if X.shape[0] == 1:
        return mean, np.zeros_like(mean)
    return mean, X.var(axis=0, ddof=1)


# problem setup ----------------------------------------------------------------


def mean_log_field(cfg: RunConfig, mesh: TwoScaleMesh) -> np.ndarray:
    f = cfg.field
    if f.mean == "constant":
        if f.mean_value <= 0:
            raise ConfigError("field.mean_value must be positive")
        return np.full((mesh.ny, mesh.nx), np.log(f.mean_value))
    if f.mean == "synthetic":
        return np.log(synth_high_contrast(mesh, f.contrast, f.pattern_seed).values)
    if f.mean == "lognormal":
        return np.log(synth_lognormal(mesh, f.contrast, f.pattern_seed).values)
    return np.log(ingest_raster(f.raster, (mesh.nx, mesh.ny)).values)


def build_kle_model(cfg: RunConfig, mesh: TwoScaleMesh) -> KLEModel:
    f = cfg.field
    grid = (f.kle_nx, f.kle_ny) if f.kle_nx > 0 and f.kle_ny > 0 else None
    return build_kle(mesh, mean_log_field(cfg, mesh), CovarianceSpec(f.sigma2, f.eta1, f.eta2),
                     n_modes=f.kle_modes or None, energy=f.kle_energy, max_modes=f.kle_max_modes,
                     kle_grid=grid)


def sample_kappa(kle: KLEModel, seed: int, index: int) -> PermeabilityField:
    return sample_field(kle, draw_coefficients(kle, seed, index))


def training_indices(cfg: RunConfig, kle: KLEModel) -> list[int]:
    """Stream indices (under train_seed) of the training samples."""
    s = cfg.samples
    if s.selection == "iid":
        return list(range(s.n_train))
    # greedy farthest-point selection in L-infinity distance of kappa over a 4x candidate pool
    pool = list(range(4 * s.n_train))
    fields = [sample_kappa(kle, s.train_seed, i).values for i in pool]
    chosen = [0]
    dist = np.array([np.abs(fk - fields[0]).max() for fk in fields])
    while len(chosen) < s.n_train:
        j = int(np.argmax(dist))
        chosen.append(j)
        dist = np.minimum(dist, [np.abs(fk - fields[j]).max() for fk in fields])
    return chosen


# worker pool -----------------------------------------------------------------

_CTX: dict = {}


def _init_worker(ctx: dict) -> None:
    _CTX.clear()
    _CTX.update(ctx)


def _pool_map(fn: Callable, items: Sequence, ctx: dict, workers: int) -> list:
    """Ordered map; a process pool when workers > 1, otherwise in-process."""
    if workers <= 1 or len(items) <= 1:
        _init_worker(ctx)
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(ctx,)) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


def resolve_workers(workers: int | None) -> int:
    if workers is None or workers <= 0:
        return os.cpu_count() or 1
    return int(workers)


@dataclass(frozen=True)
class Problem:
    mesh: TwoScaleMesh
    timegrid: TimeGrid
    forcing: Forcing
    M: object
    loads: np.ndarray
    G: np.ndarray
    direct_limit: int = fem.DIRECT_SOLVE_LIMIT
    rtol: float = 1e-10

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "Problem":
        mesh = cfg.build_mesh()
        tg = cfg.timegrid()
        fo = cfg.forcing_()
        return cls(mesh, tg, fo, fem.assemble_mass(mesh), np.ascontiguousarray(fo.loads(mesh, tg)),
                   fo.initial_rhs(mesh), cfg.solver.direct_limit, cfg.solver.rtol)

    def stiffness(self, kappa):
        return fem.assemble_stiffness(self.mesh, kappa)

    def fine(self, A) -> Trajectory:
        return fem.solve_fine_trajectory(A, self.M, self.loads, self.G, self.timegrid,
                                         self.direct_limit, self.rtol)

    def reduced(self, V: np.ndarray, A) -> Trajectory:
        return ReducedStepper(V, A, self.M, self.timegrid.dt).run(self.loads, self.G, self.timegrid)[0]


def _train_task(index: int):
    c = _CTX
    kappa = sample_kappa(c["kle"], c["seed"], index)
    A = c["problem"].stiffness(kappa)
    traj = c["problem"].reduced(c["V"], A)
    return traj, fem.estimate_poincare_Q(A, c["problem"].M)


def _eval_task(index: int):
    c = _CTX
    p: Problem = c["problem"]
    kappa = sample_kappa(c["kle"], c["seed"], index)
    A = p.stiffness(kappa)
    ref = p.fine(A).states[1:]
    out = {}
    t0 = time.perf_counter()
    out[STEP2] = compute_errors(p.reduced(c["V"], A).states[1:], ref, A, p.M)
    t_ms = time.perf_counter() - t0
    for label, Psi in c["pods"].items():
        out[label] = compute_errors(p.reduced(Psi, A).states[1:], ref, A, p.M)
    return out, t_ms


# pipelines -------------------------------------------------------------------


@dataclass
class RunResult:
    config: RunConfig
    report: ErrorReport
    space: ReducedSpace
    pod: PODSpace
    artifacts: dict = _field(default_factory=dict)


def _step1_report(problem: Problem, kbar: PermeabilityField, space: ReducedSpace,
                  report: ErrorReport) -> None:
    A = problem.stiffness(kbar)
    ref = problem.fine(A).states[1:]
    approx = solve_coarse_trajectory(space, A, problem.M, problem.loads, problem.G, problem.timegrid)
    report.add(STEP1, MEAN_SAMPLE, *compute_errors(approx.states[1:], ref, A, problem.M))


def _steps23(cfg: RunConfig, problem: Problem, kle: KLEModel, space: ReducedSpace, report: ErrorReport,
             workers: int, l_values: Sequence[int], artifacts: dict) -> PODSpace:
    s = cfg.samples
    t0 = time.perf_counter()
    train = training_indices(cfg, kle)
    ctx = {"problem": problem, "kle": kle, "seed": s.train_seed, "V": space.basis}
    results = _pool_map(_train_task, train, ctx, workers)
    Q = max(q for _, q in results)
    bank = build_snapshot_bank([tr for tr, _ in results], problem.timegrid.dt, Q,
                               [(s.train_seed, i) for i in train])
    A_bar = problem.stiffness(kle.mean_field)
    B_bar = fem.energy_factor(problem.mesh, kle.mean_field)
    lmax = max(l_values)
    pod = compute_pod(bank, A_bar, lmax, B_bar)
    artifacts["timings"]["step2_train"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    labels = {l: STEP3 if l == cfg.pod.l else f"{STEP3}[l={l}]" for l in l_values}
    pods = {labels[l]: pod.basis[:, :l] for l in l_values}
    ctx = {"problem": problem, "kle": kle, "seed": s.eval_seed, "V": space.basis, "pods": pods}
    evals = _pool_map(_eval_task, list(range(s.n_eval)), ctx, workers)
    for step in [STEP2] + [labels[l] for l in l_values]:
        for i, (out, _) in enumerate(evals):
            report.add(step, i, *out[step])
    artifacts["timings"]["steps23_eval"] = time.perf_counter() - t0
    artifacts["Q"] = Q
    artifacts["training_samples"] = [int(i) for i in train]
    artifacts["pod"] = {"l": cfg.pod.l, "rank": pod.rank, "bank_columns": bank.n_columns,
                        "eigenvalues_head": [float(v) for v in pod.eigenvalues[:min(40, len(pod.eigenvalues))]],
                        "tail_after_l": pod.tail(cfg.pod.l)}
    return pod.truncate(cfg.pod.l) if cfg.pod.l <= pod.l else pod


def _space_artifacts(space: ReducedSpace, counts: str) -> dict:
    return {"counts": counts, "dimension": space.dim, "spectral": space.n_spectral,
            "residual": space.n_residual, "Lambda": space.Lambda}


def _start(cfg: RunConfig):
    problem = Problem.from_config(cfg)
    t0 = time.perf_counter()
    kle = build_kle_model(cfg, problem.mesh)
    timings = {"kle": time.perf_counter() - t0}
    kbar = kle.mean_field
    A_bar = problem.stiffness(kbar)
    t0 = time.perf_counter()
    a, rounds = parse_counts(cfg.basis.counts)
    stage1 = assemble_multiscale_space(problem.mesh, kbar, a, A_bar)
    timings["offline_stage1"] = time.perf_counter() - t0
    return problem, kle, kbar, A_bar, stage1, rounds, timings


def run_method1(cfg: RunConfig, workers: int | None = 1, l_values: Sequence[int] | None = None) -> RunResult:
    """GMsFEM-POD method 1: both offline stages on the mean field."""
    workers = resolve_workers(workers)
    problem, kle, kbar, A_bar, stage1, rounds, timings = _start(cfg)
    t0 = time.perf_counter()
    enr = run_enrichment(problem.mesh, stage1, A_bar, problem.M, problem.loads, problem.G,
                         problem.timegrid, cfg.enrichment_config(sum(rounds)), stop_after_last=True)
    space = enr.space
    check_gram(space, A_bar)
    timings["offline_stage2"] = time.perf_counter() - t0
    report = ErrorReport(problem.timegrid.times[1:])
    _step1_report(problem, kbar, space, report)
    artifacts = {"timings": timings, "space": _space_artifacts(space, cfg.basis.counts),
                 "enrichment": [{"step": st.step, "levels": st.levels, "residuals": st.residual_norms}
                                for st in enr.trace],
                 "kle_modes": kle.n_modes}
    pod = _steps23(cfg, problem, kle, space, report, workers, sorted(set(l_values or [cfg.pod.l]) | {cfg.pod.l}),
                   artifacts)
    return RunResult(cfg, report, space, pod, artifacts)


def hierarchical_enrichment(problem: Problem, stage1: ReducedSpace, candidates: Sequence[PermeabilityField],
                            rounds: Sequence[int], config: EnrichmentConfig) -> tuple[ReducedSpace, list[dict]]:
    """Enrich round by round with the candidate field of largest global residual."""
    step = min(config.steps)
    tg = problem.timegrid
    space = stage1
    trace = []
    mats = [problem.stiffness(k) for k in candidates]
    locals_ = [LocalResidualSolver(problem.mesh, A) for A in mats]
    for levels in rounds:
        norms, prevs = [], []
        for A, local in zip(mats, locals_):
            stepper = ReducedStepper(space.basis, A, problem.M, tg.dt)
            u = space.basis @ stepper.initial(problem.G)
            for n in range(1, step):
                u = space.basis @ stepper.step_from_fine(u, problem.loads[n])
            prevs.append(u)
            _, _, st = enrich_timestep(space, A, problem.M, u, problem.loads[step], tg.dt, config, local,
                                       step=step, max_levels=0)
            norms.append(st.reports[0].norm)
        p = int(np.argmax(norms))
        entry = {"candidate": p, "residual": float(norms[p]), "levels": int(levels)}
        trace.append(entry)
        if norms[p] <= config.tol:
            entry["levels"] = 0
            break
        space, _, st = enrich_timestep(space, mats[p], problem.M, prevs[p], problem.loads[step], tg.dt,
                                       config, locals_[p], step=step, max_levels=levels)
        entry["residuals"] = st.residual_norms
    return space, trace


def run_method2(cfg: RunConfig, workers: int | None = 1, l_values: Sequence[int] | None = None) -> RunResult:
    """GMsFEM-POD method 2: stage 1 on the mean field, stage 2 driven by sampled fields."""
    workers = resolve_workers(workers)
    problem, kle, kbar, A_bar, stage1, rounds, timings = _start(cfg)
    t0 = time.perf_counter()
    s = cfg.samples
    candidates = [sample_kappa(kle, s.train_seed, i) for i in training_indices(cfg, kle)]
    space, trace = hierarchical_enrichment(problem, stage1, candidates, rounds,
                                           cfg.enrichment_config(max(rounds, default=0)))
    check_gram(space, A_bar)
    timings["offline_stage2"] = time.perf_counter() - t0
    report = ErrorReport(problem.timegrid.times[1:])
    _step1_report(problem, kbar, space, report)
    artifacts = {"timings": timings, "space": _space_artifacts(space, cfg.basis.counts),
                 "rounds": trace, "kle_modes": kle.n_modes}
    pod = _steps23(cfg, problem, kle, space, report, workers, sorted(set(l_values or [cfg.pod.l]) | {cfg.pod.l}),
                   artifacts)
    return RunResult(cfg, report, space, pod, artifacts)


def run_fine(cfg: RunConfig) -> tuple[ErrorReport, Trajectory]:
    """Fine solve on the mean field, scored against itself."""
    problem = Problem.from_config(cfg)
    kbar = PermeabilityField(np.exp(mean_log_field(cfg, problem.mesh)))
    A = problem.stiffness(kbar)
    traj = problem.fine(A)
    report = ErrorReport(problem.timegrid.times[1:])
    report.add("Fine", MEAN_SAMPLE, *compute_errors(traj.states[1:], traj.states[1:], A, problem.M))
    return report, traj


def run_gmsfem(cfg: RunConfig) -> tuple[ErrorReport, ReducedSpace, list]:
    """Offline stages 1-2 on the mean field and the Step-1 error only."""
    problem = Problem.from_config(cfg)
    kbar = PermeabilityField(np.exp(mean_log_field(cfg, problem.mesh)))
    A = problem.stiffness(kbar)
    a, rounds = parse_counts(cfg.basis.counts)
    stage1 = assemble_multiscale_space(problem.mesh, kbar, a, A)
    enr = run_enrichment(problem.mesh, stage1, A, problem.M, problem.loads, problem.G, problem.timegrid,
                         cfg.enrichment_config(sum(rounds)), stop_after_last=True)
    report = ErrorReport(problem.timegrid.times[1:])
    _step1_report(problem, kbar, enr.space, report)
    return report, enr.space, enr.trace


# error decomposition ----------------------------------------------------------


def error_split(problem: Problem, kappa: PermeabilityField, kappa_train: PermeabilityField,
                space: ReducedSpace, pod: PODSpace) -> dict[str, np.ndarray]:
    """L2 norms per time of u_h(w) - p_l(w) and of its four parts e1..e4."""
    A, Ai = problem.stiffness(kappa), problem.stiffness(kappa_train)
    uh, uhi = problem.fine(A).states, problem.fine(Ai).states
    uHi = problem.reduced(space.basis, Ai).states
    pli, pl = problem.reduced(pod.basis, Ai).states, problem.reduced(pod.basis, A).states
    M = problem.M
    parts = {"total": uh - pl, "e1": uh - uhi, "e2": uhi - uHi, "e3": uHi - pli, "e4": pli - pl}
    return {k: fem.l2_norm(M, v) for k, v in parts.items()}


__all__ = [
    "RunConfig", "MeshConfig", "FieldConfig", "TimeConfig", "ForcingConfig", "BasisConfig", "EnrichConfig",
    "PodConfig", "SamplesConfig", "SolverConfig", "ErrorReport", "RunResult", "Problem",
    "compute_errors", "ensemble_stats", "parse_counts", "run_method1", "run_method2", "run_fine",
    "run_gmsfem", "error_split", "hierarchical_enrichment", "MsromError",
]


# artifacts --------------------------------------------------------------------

ERRORS_SCHEMA = "msrom-errors v1"
STATS_SCHEMA = "msrom-stats v1"
RUN_SCHEMA = "msrom-run v1"


def _g(x: float) -> str:
    return format(float(x), ".17g")


def write_errors_csv(path, report: ErrorReport) -> None:
    lines = [f"# schema: {ERRORS_SCHEMA}", "step,sample_id,t,e_a,e_l2"]
    for step in report.steps:
        for sid, ea, el in zip(report.sample_ids[step], report.e_a[step], report.e_l2[step]):
            for t, a, b in zip(report.times, ea, el):
                lines.append(f"{step},{sid},{_g(t)},{_g(a)},{_g(b)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_errors_csv(path) -> ErrorReport:
    rows: dict[tuple[str, int], list[tuple[float, float, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader, None)
        if header != ["step", "sample_id", "t", "e_a", "e_l2"]:
            raise ConfigError(f"{path}: not an errors table (header {header})")
        for rec in reader:
            if not rec:
                continue
            try:
                rows.setdefault((rec[0], int(rec[1])), []).append(tuple(float(v) for v in rec[2:5]))
            except (ValueError, IndexError) as exc:
                raise ConfigError(f"{path}: malformed row {rec}") from exc
    if not rows:
        raise ConfigError(f"{path}: no error rows")
    times = np.array([r[0] for r in next(iter(rows.values()))])
    report = ErrorReport(times)
    for (step, sid), recs in rows.items():
        arr = np.array(recs)
        if arr.shape[0] != len(times) or not np.array_equal(arr[:, 0], times):
            raise ConfigError(f"{path}: step {step} sample {sid} has a different time grid")
        report.add(step, sid, arr[:, 1], arr[:, 2])
    return report


def write_stats_csv(path, report: ErrorReport) -> None:
    lines = [f"# schema: {STATS_SCHEMA}", "t,step,mean_ea,var_ea,mean_el2,var_el2"]
    for step in report.steps:
        s = report.stats(step)
        for k, t in enumerate(report.times):
            lines.append(",".join([_g(t), step] + [_g(s[c][k]) for c in ("mean_ea", "var_ea", "mean_el2", "var_el2")]))
    Path(path).write_text("\n".join(lines) + "\n")


def write_run_json(path, cfg: RunConfig, artifacts: dict, extra: dict | None = None) -> None:
    doc = {"schema": RUN_SCHEMA, "config": cfg.to_dict(), "units": UNITS,
           "artifacts": {"errors.csv": ERRORS_SCHEMA, "stats.csv": STATS_SCHEMA}}
    doc.update(_jsonable(artifacts))
    if extra:
        doc.update(_jsonable(extra))
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


UNITS = {
    "mesh.lx": "length", "mesh.ly": "length", "time.dt": "time", "time.T": "time",
    "forcing.f": "source per unit area and time", "forcing.g": "initial pressure",
    "field.eta1": "length", "field.eta2": "length", "field.sigma2": "variance of log-permeability",
}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    return obj
