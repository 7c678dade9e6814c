# Lower beta until the deformation would fold cells below the det F_1 bound,
# then bisect towards the breach.
from flowreg.continuation import ContinuationConfig, run_continuation
from flowreg.optimality import ReducedProblem
from flowreg.optimizer import SolverConfig
from flowreg.problems import synth_sinusoidal
from flowreg.spectral import Grid2, RegConfig
from flowreg.transport import TimeGrid

grid, tg = Grid2.square(32), TimeGrid(128)
prob, _ = synth_sinusoidal(grid, tg)
P = ReducedProblem(prob.m_template, prob.m_reference, RegConfig("h2", 1.0), grid, tg)


def show(row):
    mark = "ok " if row.accepted else "bad"
    print(f"  phase {row.phase}  beta={row.beta:.6e}  min det={row.min_det:+.4f}  l2_rel={row.l2_rel:.3e}  {mark}")


res = run_continuation(P, ContinuationConfig(eps_f=0.5), SolverConfig(stop="gradred", grad_tol=1e-3), show)
print(f"beta* = {res.beta_star:.6e}, first breach at {res.beta_breach}, stop: {res.reason}")
