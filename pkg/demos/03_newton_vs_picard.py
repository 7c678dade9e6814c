# Register the synthetic sinusoid with Gauss-Newton-Krylov and with the
# preconditioned gradient (Picard) scheme, and compare the PDE solve budget.
from flowreg.diagnostics import compute_measures
from flowreg.optimality import ReducedProblem
from flowreg.optimizer import SolverConfig, outer_loop
from flowreg.problems import synth_sinusoidal
from flowreg.spectral import Grid2, RegConfig
from flowreg.transport import TimeGrid

grid, tg = Grid2.square(32), TimeGrid(128)
prob, _ = synth_sinusoidal(grid, tg)
P = ReducedProblem(prob.m_template, prob.m_reference, RegConfig("h2", 1e-3), grid, tg)


def show(rec):
    print(f"  k={rec.k:3d}  J={rec.j:.6e}  |g|={rec.grad_inf:.3e}  alpha={rec.alpha:.3g}  n_PDE={rec.n_pde}")


print("Gauss-Newton-PCG")
gn = outer_loop(P, SolverConfig(method="gnpcg", stop="gradred", grad_tol=1e-3), callback=show)
print("Picard, first 30 iterations")
pic = outer_loop(P, SolverConfig(method="picard", stop="gradred", grad_tol=1e-3, n_opt=30), callback=show)

for name, res in (("GN-PCG", gn), ("Picard", pic)):
    m = compute_measures(P, res.vc, res.state.m_traj, res.log)
    print(f"{name:7s} status={res.status:10s} ({res.reason})\n        iterations={res.log.iterations:3d} n_PDE={res.log.n_pde:5d} l2_rel={m.l2_rel:.3e}")
