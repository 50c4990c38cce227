"""Online cost per time step: fine solve vs GMsFEM vs POD, across fine resolutions.

    python3 scripts/speedup.py --n 40 80 100
"""

import argparse
import time

import numpy as np

from msrom import assembly as fem
from msrom.gmsfem import ReducedStepper, assemble_multiscale_space
from msrom.grid import build_two_scale_mesh
from msrom.pod import build_snapshot_bank, compute_pod
from msrom.randfield import synth_high_contrast


def best_time(fn, repeat=5, number=20):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        for _ in range(number):
            fn()
        best = min(best, (time.perf_counter() - t0) / number)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[40, 80, 100])
    ap.add_argument("--coarse", type=int, default=10, help="coarse cells per direction")
    ap.add_argument("--l", type=int, default=20)
    ap.add_argument("--dt", type=float, default=0.02)
    args = ap.parse_args()

    print(f"{'n':>5} {'dofs':>7} {'fine ms':>9} {'gms dim':>8} {'gms ms':>8} {'pod ms':>8} {'fine/pod':>9}")
    for n in args.n:
        mesh = build_two_scale_mesh((1.0, 1.0), n, n, args.coarse, args.coarse)
        kappa = synth_high_contrast(mesh, 1e4, seed=0)
        A, M = fem.assemble_stiffness(mesh, kappa), fem.assemble_mass(mesh)
        tg = fem.TimeGrid.from_final_time(args.dt, 1.0)
        fo = fem.Forcing(lambda t, x, y: 1.0 + np.sin(4 * np.pi * t) * x * y, 0.0)
        loads, G = fo.loads(mesh, tg), fo.initial_rhs(mesh)
        space = assemble_multiscale_space(mesh, kappa, 5, A)
        trajs = [fem.solve_fine_trajectory(fem.assemble_stiffness(mesh, synth_high_contrast(mesh, 1e4, seed=s)),
                                           M, loads, G, tg) for s in range(3)]
        pod = compute_pod(build_snapshot_bank(trajs, tg.dt, 1.0), A, args.l, fem.energy_factor(mesh, kappa))

        solver = fem.SparseSPDSolver(M + tg.dt * A)
        c, F = trajs[0].states[5], loads[6]
        fine = best_time(lambda: solver.solve(M @ c + tg.dt * F))
        gms = ReducedStepper(space.basis, A, M, tg.dt)
        Ug = np.zeros(space.dim)
        t_gms = best_time(lambda: gms.step_reduced(Ug, space.basis.T @ F))
        red = ReducedStepper(pod.basis, A, M, tg.dt)
        Up = np.zeros(args.l)
        t_pod = best_time(lambda: red.step_reduced(Up, pod.basis.T @ F))
        print(f"{n:5d} {mesh.m:7d} {1e3 * fine:9.3f} {space.dim:8d} {1e3 * t_gms:8.3f} {1e3 * t_pod:8.4f} "
              f"{fine / t_pod:9.1f}")


if __name__ == "__main__":
    main()
