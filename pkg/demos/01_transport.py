# Transport a smooth image under a fixed velocity and watch the time stepper
# converge at second order as the step is halved.
import numpy as np

from flowreg.spectral import Grid2
from flowreg.transport import TimeGrid, cfl_max_dt, solve_state

grid = Grid2.square(32)
x1, x2 = grid.coords
m0 = 0.5 + 0.5 * np.sin(2 * x1) * np.cos(x2)
v = np.stack([0.5 * np.sin(x2), 0.4 * np.cos(x1)])

# the largest stable step for this velocity
print("CFL-limited time step:", cfl_max_dt(np.abs(v).max(axis=(1, 2)), grid))


def final(n_t):
    return solve_state(m0, np.broadcast_to(v, (n_t + 1, *v.shape)), grid, TimeGrid(n_t)).final


ref = final(1024)
prev = None
for n_t in (32, 64, 128):
    err = np.abs(final(n_t) - ref).max()
    note = "" if prev is None else f"  ratio {prev / err:.2f}"
    print(f"n_t={n_t:4d}  max error {err:.3e}{note}")
    prev = err
