# A time-dependent velocity (several Chebyshev coefficient fields) buys
# essentially nothing on a two-image problem: the energy sits in the
# stationary coefficient and the match is the same.
from flowreg.diagnostics import compute_measures
from flowreg.optimality import ReducedProblem
from flowreg.optimizer import SolverConfig, outer_loop
from flowreg.problems import synth_sinusoidal
from flowreg.spectral import Grid2, RegConfig
from flowreg.timebasis import ChebBasis
from flowreg.transport import TimeGrid

grid, tg = Grid2.square(32), TimeGrid(128)
prob, _ = synth_sinusoidal(grid, tg)
for n_c in (1, 2, 4):
    P = ReducedProblem(prob.m_template, prob.m_reference, RegConfig("h2", 1e-3), grid, tg, ChebBasis(n_c))
    res = outer_loop(P, SolverConfig(stop="gradred", grad_tol=1e-3))
    m = compute_measures(P, res.vc, res.state.m_traj, res.log)
    power = ", ".join(f"{p:.2e}" for p in m.power_spectrum)
    print(f"n_c={n_c}  iterations={res.log.iterations}  l2_rel={m.l2_rel:.4e}  coefficient power: {power}")
