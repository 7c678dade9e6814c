"""Command-line front end: ``flowreg {register,continuation,spectrum,synth}``.

Options can also come from a ``key = value`` file passed with ``--config``;
explicit flags override file values. Exit status is 0 on convergence, 2 on
stagnation and 1 on any error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .continuation import BoundViolatedAtStart, ContinuationConfig, TraceRow, run_continuation
from .diagnostics import IdenticalImages, TooLarge, compute_measures, export_maps, spectrum_report
from .optimality import AdaptiveTime, ReducedProblem
from .optimizer import IterationRecord, LineSearchFailure, SolverConfig, outer_loop
from .problems import FormatError, IoError, emit_field, ingest_image, synth_sinusoidal, write_sidecar
from .spectral import Grid2, RegConfig
from .timebasis import ChebBasis
from .transport import CflViolation, TimeGrid

__all__ = ["main", "build_parser"]

EXIT_OK, EXIT_ERROR, EXIT_STAGNATION = 0, 1, 2
EIGVEC_INDICES = (1, 5, 20, 100, 1000)

log = logging.getLogger("flowreg")


class ConfigError(ValueError):
    pass


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _grid_arg(text: str) -> tuple[int, int]:
    parts = text.lower().replace("x", ",").split(",")
    try:
        n = tuple(int(p) for p in parts if p)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid size {text!r}") from None
    if len(n) == 1:
        n = (n[0], n[0])
    if len(n) != 2:
        raise argparse.ArgumentTypeError(f"bad grid size {text!r}")
    return n


def _beta_list(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _add_common(p: argparse.ArgumentParser, grid_default: int = 64) -> None:
    p.add_argument("--config", type=Path, help="key = value file; flags override it")
    p.add_argument("--grid", type=_grid_arg, default=(grid_default, grid_default), help="grid size N or N1xN2")
    p.add_argument("--nt", type=int, default=None, help="time steps (default 4 * max grid size)")
    p.add_argument("--cfl-adaptive", action="store_true", help="choose n_t from the CFL condition for every velocity")
    p.add_argument("--reg", choices=("h1", "h2"), default=None, help="regularization operator (default h2)")
    p.add_argument("--stokes", action="store_true", help="incompressible scheme (H1 plus divergence-free velocity)")
    p.add_argument("--nc", type=int, default=1, help="number of time coefficient fields")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--verbose", "-v", action="store_true")


def _add_solver(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", choices=("picard", "npcg", "gnpcg"), default="gnpcg")
    p.add_argument("--stop", choices=("battery", "gradred", "stagnation"), default="battery")
    p.add_argument("--tol", type=float, default=None, help="tau_J (battery) or relative gradient reduction")
    p.add_argument("--max-iter", type=int, default=1_000_000, help="maximal number of outer iterations")
    p.add_argument("--template", type=Path, help="template image (synthetic problem if omitted)")
    p.add_argument("--reference", type=Path, help="reference image (synthetic problem if omitted)")
    p.add_argument("--sigma", type=float, default=None, help="smoothing width (default 2 pi / min n)")
    p.add_argument("--sharp", action="store_true", help="double the smoothing width")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowreg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("register", help="solve one registration problem")
    _add_common(p)
    _add_solver(p)
    p.add_argument("--beta", type=float, default=None, help="regularization weight (default 1e-3)")

    p = sub.add_parser("continuation", help="search the regularization weight by continuation")
    _add_common(p)
    _add_solver(p)
    p.add_argument("--beta", type=float, default=None, help=argparse.SUPPRESS)
    p.add_argument("--eps-f", type=float, default=0.1, help="lower bound on det F_1")
    p.add_argument("--eps-theta", type=float, default=math.pi / 16, help="lower bound on deformed-cell angles")

    p = sub.add_parser("spectrum", help="dense Hessian eigenvalues at the true solution of a synthetic problem")
    _add_common(p, grid_default=16)
    p.add_argument("--betas", type=_beta_list, default=[0.0, 1e-3, 1e6], help="comma-separated beta values")
    p.add_argument("--gn", action="store_true", help="Gauss-Newton instead of the full Hessian")

    p = sub.add_parser("synth", help="write the synthetic sinusoidal problem")
    _add_common(p)
    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config", type=Path)
    known, _ = pre.parse_known_args(argv)
    if known.config is None or known.command is None:
        return parser.parse_args(argv)
    try:
        lines = known.config.read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    tokens: list[str] = []
    for raw in lines:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line without '=': {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        flag = "--" + key.replace("_", "-")
        if value.lower() in ("true", "yes", "on"):
            tokens.append(flag)
        elif value.lower() in ("false", "no", "off"):
            continue
        else:
            tokens += [flag, value]
    # file values first, so later command-line flags win
    cmd_idx = list(argv).index(known.command)
    return parser.parse_args([*argv[: cmd_idx + 1], *tokens, *argv[cmd_idx + 1 :]])


def _reg_from(args) -> RegConfig:
    beta = 1e-3 if args.beta is None else args.beta
    if args.stokes:
        if args.reg == "h2":
            raise ConfigError("the incompressible scheme requires --reg h1")
        return RegConfig.stokes(beta)
    return RegConfig(args.reg or "h2", beta)


def _time_from(args, grid: Grid2):
    if args.cfl_adaptive:
        return AdaptiveTime()
    return TimeGrid(args.nt or 4 * max(grid.n))


def _synth_time(args, grid: Grid2) -> TimeGrid:
    return TimeGrid(args.nt or 4 * max(grid.n))


def _problem_from(args, grid: Grid2, reg: RegConfig) -> ReducedProblem:
    if (args.template is None) != (args.reference is None):
        raise ConfigError("give both --template and --reference, or neither")
    if args.template is None:
        prob, _ = synth_sinusoidal(grid, _synth_time(args, grid), stokes=args.stokes)
        mt, mr = prob.m_template, prob.m_reference
    else:
        mt = ingest_image(args.template, grid, args.sigma, sharp=args.sharp)
        mr = ingest_image(args.reference, grid, args.sigma, sharp=args.sharp)
    return ReducedProblem(mt, mr, reg, grid, _time_from(args, grid), ChebBasis(args.nc))


def _solver_from(args) -> SolverConfig:
    kw = dict(method=args.method, stop=args.stop, n_opt=args.max_iter)
    if args.tol is not None:
        kw["tau_j" if args.stop == "battery" else "grad_tol"] = args.tol
    return SolverConfig(**kw)


def _write_resolved(out: Path, args, extra: Optional[dict] = None) -> None:
    items = {k: v for k, v in vars(args).items() if k != "config"}
    items.update(extra or {})
    with open(out / "config.resolved", "w") as fh:
        for k in sorted(items):
            v = items[k]
            if isinstance(v, (list, tuple)):
                v = ",".join(_fmt(x) for x in v)
            fh.write(f"{k} = {_fmt(v)}\n")


def _write_log(out: Path, records: Sequence[IterationRecord]) -> None:
    write_csv(out / "log.csv", IterationRecord.FIELDS, ([getattr(r, f) for f in IterationRecord.FIELDS] for r in records))


def _write_measures(out: Path, problem: ReducedProblem, vc, res, status: str) -> None:
    try:
        ms = compute_measures(problem, vc, res.state.m_traj, res.log)
        d = ms.as_dict()
    except IdenticalImages:
        d = {"l2_rel": float("nan"), "dj_rel": float("nan"), "grad_rel_inf": float("nan")}
        status = "identical-images"
    d = {"status": status, "iterations": res.log.iterations, "n_pde": res.log.n_pde, **d}
    write_csv(out / "measures.csv", list(d), [list(d.values())])


def _write_maps(out: Path, problem: ReducedProblem, vc) -> None:
    maps = export_maps(problem, vc)
    emit_field(maps["m1"], out / "m1.pgm", clamp=(0.0, 1.0))
    emit_field(maps["residual"], out / "residual.pgm")
    emit_field(maps["det_clamped"], out / "detF.pgm", clamp=(0.0, 2.0), sidecar=False)
    write_sidecar(maps["det"], out / "detF.f64")


def _status_exit(status: str) -> int:
    return EXIT_OK if status == "converged" else EXIT_STAGNATION


def cmd_register(args) -> int:
    grid = Grid2(args.grid)
    reg = _reg_from(args)
    problem = _problem_from(args, grid, reg)
    args.out.mkdir(parents=True, exist_ok=True)
    _write_resolved(args.out, args, {"beta": reg.beta, "reg": reg.kind, "gamma": reg.gamma})
    res = outer_loop(problem, _solver_from(args))
    _write_log(args.out, res.log.records)
    _write_measures(args.out, problem, res.vc, res, res.status)
    _write_maps(args.out, problem, res.vc)
    print(f"{res.status}: {res.reason} after {res.log.iterations} iterations, n_PDE = {res.log.n_pde}")
    return _status_exit(res.status)


def cmd_continuation(args) -> int:
    if args.beta is not None:
        raise ConfigError("--beta cannot be combined with continuation")
    grid = Grid2(args.grid)
    args.beta = 1.0
    reg = _reg_from(args)
    problem = _problem_from(args, grid, reg)
    cfg = ContinuationConfig(eps_f=args.eps_f, eps_theta=args.eps_theta)
    args.out.mkdir(parents=True, exist_ok=True)
    _write_resolved(args.out, args, {"reg": reg.kind, "gamma": reg.gamma})
    result = run_continuation(problem, cfg, _solver_from(args))
    write_csv(args.out / "trace.csv", TraceRow.FIELDS, ([getattr(r, f) for f in TraceRow.FIELDS] for r in result.trace))
    final = problem.with_reg(reg.with_beta(result.beta_star))
    _write_log(args.out, result.solve.log.records)
    _write_measures(args.out, final, result.vc, result.solve, result.solve.status)
    _write_maps(args.out, final, result.vc)
    print(f"beta* = {result.beta_star:.6e} ({result.reason}), {len(result.trace)} solves")
    return _status_exit(result.solve.status)


def cmd_spectrum(args) -> int:
    grid = Grid2(args.grid)
    args.out.mkdir(parents=True, exist_ok=True)
    _write_resolved(args.out, args)
    if not args.betas:
        return EXIT_OK
    tg = _synth_time(args, grid)
    prob, v_star = synth_sinusoidal(grid, tg, stokes=args.stokes, exact=True)
    basis = ChebBasis(args.nc)
    vc = np.zeros((args.nc, 2, *grid.n))
    vc[0] = v_star[0]  # b_1 = 1, so the stationary field is the first coefficient
    for beta in args.betas:
        args.beta = beta
        reg = _reg_from(args)
        problem = ReducedProblem(prob.m_template, prob.m_reference, reg, grid, tg, basis)
        state = problem.linearize(vc)
        rep = spectrum_report(problem, state, gn=args.gn)
        tag = format(beta, "g")
        write_csv(
            args.out / f"eig_{tag}.csv",
            ("index", "real", "imag"),
            ((i + 1, z.real, z.imag) for i, z in enumerate(rep.eigenvalues)),
        )
        for idx in EIGVEC_INDICES:
            if idx <= rep.order:
                vec = rep.eigenvectors[:, idx - 1].real.reshape(problem.coeff_shape)
                emit_field(np.sqrt(np.sum(vec**2, axis=(0, 1))), args.out / f"eigvec_{tag}_{idx}.pgm")
        print(f"beta={tag}: n={rep.order} min Re={rep.min_re:.6e} max Re={rep.max_re:.6e} max|Im|={rep.max_abs_im:.6e}")
    return EXIT_OK


def cmd_synth(args) -> int:
    grid = Grid2(args.grid)
    prob, v_star = synth_sinusoidal(grid, _synth_time(args, grid), stokes=args.stokes)
    args.out.mkdir(parents=True, exist_ok=True)
    _write_resolved(args.out, args)
    emit_field(prob.m_template, args.out / "template.pgm", clamp=(0.0, 1.0))
    emit_field(prob.m_reference, args.out / "reference.pgm", clamp=(0.0, 1.0))
    for i, comp in enumerate(v_star[0], start=1):
        emit_field(comp, args.out / f"v_star_{i}.pgm")
    return EXIT_OK


COMMANDS = {"register": cmd_register, "continuation": cmd_continuation, "spectrum": cmd_spectrum, "synth": cmd_synth}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config_file(parser, argv)
    except ConfigError as exc:
        print(f"flowreg: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, IoError, FormatError, TooLarge, BoundViolatedAtStart, CflViolation, LineSearchFailure, ValueError) as exc:
        print(f"flowreg: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
