# The reduced gradient is the exact derivative of the discrete objective, so a
# central finite difference agrees with <g, w> to rounding level.
import numpy as np

from flowreg.optimality import ReducedProblem
from flowreg.problems import synth_sinusoidal
from flowreg.spectral import Grid2, RegConfig
from flowreg.transport import TimeGrid

grid, tg = Grid2.square(32), TimeGrid(128)
prob, v_star = synth_sinusoidal(grid, tg)
P = ReducedProblem(prob.m_template, prob.m_reference, RegConfig("h2", 1e-3), grid, tg)

v = 0.5 * v_star
state = P.linearize(v)
w = 0.1 * np.random.default_rng(0).standard_normal(P.coeff_shape)
for eps in (1e-2, 1e-3, 1e-4, 1e-5):
    fd = (P.evaluate_objective(v + eps * w)[0].j - P.evaluate_objective(v - eps * w)[0].j) / (2 * eps)
    ad = P.inner(state.gradient, w)
    print(f"eps={eps:.0e}  fd={fd:+.10e}  adjoint={ad:+.10e}  rel={abs(fd - ad) / abs(ad):.2e}")
