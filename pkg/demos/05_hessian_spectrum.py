# Assemble the dense reduced Hessian at the true solution of a small problem.
# Without regularization it is singular; the regularization shifts the
# spectrum so that its smallest eigenvalue equals beta.
from flowreg.diagnostics import spectrum_report
from flowreg.optimality import ReducedProblem
from flowreg.problems import synth_sinusoidal
from flowreg.spectral import Grid2, RegConfig
from flowreg.transport import TimeGrid

grid, tg = Grid2.square(16), TimeGrid(64)
for stokes, betas in ((False, (0.0, 1e-3, 1e6)), (True, (1e-3,))):
    prob, v_star = synth_sinusoidal(grid, tg, stokes=stokes, exact=True)
    for beta in betas:
        reg = RegConfig.stokes(beta) if stokes else RegConfig("h2", beta)
        P = ReducedProblem(prob.m_template, prob.m_reference, reg, grid, tg)
        rep = spectrum_report(P, P.linearize(v_star), vectors=False)
        print(
            f"{'stokes' if stokes else 'h2    '} beta={beta:<6g} n={rep.order}  min Re={rep.min_re:+.4e}"
            f"  max Re={rep.max_re:.4e}  max|Im|={rep.max_abs_im:.1e}"
        )
