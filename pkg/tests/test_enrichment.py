import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msrom import assembly as fem
from msrom.enrichment import (
    EnrichmentConfig,
    LocalResidualSolver,
    enrich_timestep,
    local_residual_basis,
    residual_vector,
    run_enrichment,
    select_neighborhoods,
)
from msrom.errors import ConfigError
from msrom.gmsfem import ReducedStepper, assemble_multiscale_space
from msrom.grid import build_two_scale_mesh


@pytest.fixture(scope="module")
def problem(desk_mesh, desk_kappa):
    A, M = fem.assemble_stiffness(desk_mesh, desk_kappa), fem.assemble_mass(desk_mesh)
    tg = fem.TimeGrid(0.01, 10)
    fo = fem.Forcing(1.0, 0.0)
    stage1 = assemble_multiscale_space(desk_mesh, desk_kappa, 2, A)
    return desk_mesh, A, M, fo.loads(desk_mesh, tg), fo.initial_rhs(desk_mesh), tg, stage1


def test_select_examples():
    assert select_neighborhoods([3, 2, 1], 0.0) == []
    assert select_neighborhoods([3, 0, 2, 1], 1.0) == [0, 2, 3]
    assert select_neighborhoods(np.sqrt([9, 4, 1]), np.sqrt(0.7)) == [0, 1]
    assert select_neighborhoods([1, 2, 2, 1], 0.8) == [1, 2]     # ties by ascending index
    assert select_neighborhoods([1, 2, 2, 1], 0.5) == [1]
    assert select_neighborhoods([0, 0], 0.9) == []


@settings(max_examples=60, deadline=None)
@given(norms=st.lists(st.floats(0, 10), min_size=1, max_size=12), theta=st.floats(0.01, 0.99))
def test_select_is_shortest_sufficient_prefix(norms, theta):
    r2 = np.asarray(norms) ** 2
    chosen = select_neighborhoods(norms, theta)
    if r2.sum() == 0:
        assert chosen == []
        return
    got = r2[chosen].sum()
    assert got >= theta ** 2 * r2.sum() * (1 - 1e-9)
    # dropping the smallest chosen entry falls short, and nothing unchosen beats anything chosen
    if len(chosen) > 1:
        assert got - r2[chosen[-1]] < theta ** 2 * r2.sum()
    rest = [i for i in range(len(r2)) if i not in chosen]
    if rest and chosen:
        assert r2[rest].max() <= r2[chosen].min()


def test_non_overlap_filter():
    mesh = build_two_scale_mesh((1.0, 1.0), 8, 8, 4, 4)   # 3x3 interior coarse nodes
    chosen = select_neighborhoods([1, 9, 1, 1, 8, 1, 1, 1, 7], 1.0, mesh, non_overlap=True)
    assert chosen == [1, 8, 6]


def test_config_validation():
    for bad in ({"theta": 1.5}, {"tol": 0.0}, {"strategy": "sometimes"}, {"steps": (0,)}, {"max_levels": -1}):
        with pytest.raises(ConfigError):
            EnrichmentConfig(**bad)


def test_exact_state_has_zero_residual(problem):
    mesh, A, M, loads, G, tg, _ = problem
    fine = fem.solve_fine_trajectory(A, M, loads, G, tg, rtol=1e-14)
    beta, norm = local_residual_basis(mesh, A, M, fine.states[1], fine.states[0], loads[1], tg.dt, 4)
    assert norm <= 1e-10 * np.linalg.norm(loads[1])
    assert np.max(np.abs(beta)) <= 1e-8


def test_riesz_identity_and_support(problem):
    mesh, A, M, loads, G, tg, stage1 = problem
    st_ = ReducedStepper(stage1.basis, A, M, tg.dt)
    u = stage1.basis @ st_.step_from_fine(np.zeros(mesh.m), loads[1])
    r = residual_vector(A, M, u, np.zeros(mesh.m), loads[1], tg.dt)
    local = LocalResidualSolver(mesh, A)
    for i in (0, 4, 8):
        beta, norm = local.beta(i, r)
        assert norm ** 2 == pytest.approx(r @ beta, rel=1e-10)
        assert norm == pytest.approx(fem.energy_norm(A, beta), rel=1e-10)
        outside = np.setdiff1d(np.arange(mesh.m), local.dofs(i))
        assert not np.any(beta[outside])


def test_galerkin_orthogonality_after_enrichment(problem):
    mesh, A, M, loads, G, tg, stage1 = problem
    u0 = np.zeros(mesh.m)
    local = LocalResidualSolver(mesh, A)
    cfg = EnrichmentConfig(theta=1.0, tol=1e-12, max_levels=1)
    space, u, trace = enrich_timestep(stage1, A, M, u0, loads[1], tg.dt, cfg, local)
    new = space.basis[:, stage1.dim:]
    r = residual_vector(A, M, u, u0, loads[1], tg.dt)
    assert np.max(np.abs(new.T @ r)) <= 1e-8 * np.linalg.norm(loads[1])
    assert space.dim == stage1.dim + len(trace.added[0])
    assert np.array_equal(space.basis[:, :stage1.dim], stage1.basis)


def test_huge_tolerance_means_no_enrichment(problem):
    mesh, A, M, loads, G, tg, stage1 = problem
    cfg = EnrichmentConfig(tol=1e30, max_levels=5)
    space, _, trace = enrich_timestep(stage1, A, M, np.zeros(mesh.m), loads[1], tg.dt, cfg,
                                      LocalResidualSolver(mesh, A))
    assert trace.levels == 0 and space is stage1


def test_levels_decrease_residual_and_error(problem):
    mesh, A, M, loads, G, tg, stage1 = problem
    u0 = np.zeros(mesh.m)
    exact = fem.solve_fine_trajectory(A, M, loads, G, tg).states[1]
    local = LocalResidualSolver(mesh, A)
    cfg = EnrichmentConfig(theta=0.7, tol=1e-14, max_levels=4)
    space, _, trace = enrich_timestep(stage1, A, M, u0, loads[1], tg.dt, cfg, local)
    res = trace.residual_norms
    assert len(res) == 5
    assert res[1] < res[0]
    assert all(b <= a * (1 + 1e-10) for a, b in zip(res, res[1:]))
    dims = [stage1.dim] + list(np.cumsum([len(a) for a in trace.added]) + stage1.dim)
    errs = []
    for d in dims:
        V = space.basis[:, :d]
        u = V @ ReducedStepper(V, A, M, tg.dt).step_from_fine(u0, loads[1])
        errs.append(fem.energy_norm(A, u - exact))
    assert all(b <= a * (1 + 1e-10) for a, b in zip(errs, errs[1:]))


def test_reset_vs_accumulate(problem):
    mesh, A, M, loads, G, tg, stage1 = problem
    base = dict(theta=1.0, max_levels=2, steps=(1, 2, 3))
    reset = run_enrichment(mesh, stage1, A, M, loads, G, tg, EnrichmentConfig(strategy="reset", tol=1e-14, **base))
    acc = run_enrichment(mesh, stage1, A, M, loads, G, tg,
                         EnrichmentConfig(strategy="accumulate", tol=1e-14, **base))
    assert reset.space.n_residual <= 2 * mesh.n_in
    assert acc.space.n_residual > reset.space.n_residual
    assert len(reset.trace) == len(acc.trace) == 3


def test_accumulate_stops_enriching_once_tolerance_is_met(problem):
    mesh, A, M, loads, G, tg, stage1 = problem
    first = run_enrichment(mesh, stage1, A, M, loads, G, tg, EnrichmentConfig(max_levels=0, tol=1e-14))
    r0 = first.trace[0].residual_norms[0] if first.trace else None
    cfg = EnrichmentConfig(theta=1.0, tol=1e-3 * r0, max_levels=6, strategy="accumulate",
                           steps=tuple(range(1, 11)))
    res = run_enrichment(mesh, stage1, A, M, loads, G, tg, cfg)
    levels = [st.levels for st in res.trace]
    assert levels[0] > 0
    # the accumulated space eventually suffices: a trailing run of steps adds nothing
    tail = len(levels) - max(i for i, v in enumerate(levels) if v > 0) - 1
    assert tail >= 2
    assert sum(levels[1:]) < 2 * levels[0]


def test_enrichment_trajectory_runs_past_last_step(problem):
    mesh, A, M, loads, G, tg, stage1 = problem
    res = run_enrichment(mesh, stage1, A, M, loads, G, tg, EnrichmentConfig(max_levels=1))
    assert np.all(np.isfinite(res.trajectory.states)) and np.any(res.trajectory.states[-1])
    short = run_enrichment(mesh, stage1, A, M, loads, G, tg, EnrichmentConfig(max_levels=1), stop_after_last=True)
    assert np.array_equal(short.space.basis, res.space.basis)


def test_cap_warning_logged(problem, caplog):
    mesh, A, M, loads, G, tg, stage1 = problem
    with caplog.at_level("WARNING"):
        enrich_timestep(stage1, A, M, np.zeros(mesh.m), loads[1], tg.dt, EnrichmentConfig(max_levels=1),
                        LocalResidualSolver(mesh, A))
    assert "level cap" in caplog.text
