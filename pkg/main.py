"""
Lévy Portfolio Solver - Main Entry Point
Power-utility portfolios for constrained exponential Lévy markets
"""
import argparse
import copy
import dataclasses
import hashlib
import json
import math
import os
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import pandas as pd
import scipy
import yaml

from checks.acceptance import AcceptanceChecker
from db.database import RunStore
from geometry.arbitrage import ConstraintGeometry, analyze_geometry, dense_strict_interior
from geometry.constraints import Reals
from market.levy import total_activity, validate_model
from market.loader import ModelFile, dump_model, load_model, model_to_dict
from market.problem import Tolerances
from simulation.paths import BLOCK_SIZE, simulate_paths
from simulation.wealth import (
    UtilityEstimate,
    density_terminal,
    expected_utility,
    perturbation_panel,
    verification_test,
    wealth_paths,
)
from solver.curves import SolutionCurves, build_curves, verify_bellman_ode
from solver.objective import GObjective, _json_real
from solver.optimizer import OptimizerSettings, PortfolioSolution, classify_finiteness
from solver.pipeline import solve_portfolio
from solver.qmeasure import q_optimal_exists
from solver.transform import build_transform, transform_triplet
from utils.errors import DomainError, ModelValidationError, PreconditionFailed, SolverError
from utils.logger import setup_logger

__version__ = "1.0.0"

EXIT_OK = 0
EXIT_SOLVER_ERROR = 1
EXIT_UNEXPECTED = 2
EXIT_VERIFY_FAILED = 3

OUTPUT_ENV = "LEVY_SOLVER_OUT"
LOGGER_NAMES = ('levy_solver', 'market', 'geometry', 'solver', 'simulation', 'checks', 'db')

DEFAULT_SETTINGS: Dict[str, Any] = {
    'logging': {'file': './runs/solver.log', 'level': 'INFO'},
    'output': {'directory': './runs'},
    'database': {'path': './runs/ledger.db'},
    'tolerances': {},
    'optimizer': {},
    'simulation': {'paths': 20000, 'grid_steps': 50, 'seed': 0, 'block_size': BLOCK_SIZE},
    'curves': {'points': 101},
    'gscan': {'span': 5.0, 'points': 101},
    'acceptance': {'n_sigma': 3.0, 'dominance_sigma': 2.0, 'perturbations': 20, 'samples': 100,
                   'concavity_samples': 1000},
}

logger = None


def _merge(base: Dict, overrides: Dict) -> Dict:
    out = copy.deepcopy(base)
    for key, value in (overrides or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(config_path: str = 'settings.yaml') -> dict:
    """
    Load run settings from YAML, on top of the built-in defaults.

    Args:
        config_path: Path to settings file

    Returns:
        Settings dictionary
    """
    try:
        with open(config_path, 'r') as f:
            conf = yaml.safe_load(f) or {}
        logger.info(f"Settings loaded from {config_path}")
        return _merge(DEFAULT_SETTINGS, conf)
    except FileNotFoundError:
        logger.warning(f"Settings file not found: {config_path}; using defaults")
        return copy.deepcopy(DEFAULT_SETTINGS)


def configure_logging(log_file: Optional[str], level: str):
    global logger
    for name in LOGGER_NAMES:
        setup_logger(name, log_file=log_file, level=level)
    logger = setup_logger('levy_solver', log_file=log_file, level=level)
    return logger


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return _json_real(float(value))
    return value


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def parse_vector(text: str) -> np.ndarray:
    """'0.5,0.2' -> array([0.5, 0.2])."""
    try:
        return np.array([float(v) for v in text.split(',') if v.strip()], dtype=float)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


@dataclass
class RunContext:
    """State of one CLI run: model, settings, output directory and ledger."""

    subcommand: str
    model: ModelFile
    settings: Dict
    out_dir: Path
    seed: int
    args: argparse.Namespace
    store: Optional[RunStore] = None
    run_id: Optional[int] = None
    artifacts: Dict[str, str] = field(default_factory=dict)
    _solution: Optional[PortfolioSolution] = None
    _geometry: Optional[ConstraintGeometry] = None

    @property
    def triplet(self):
        return self.model.triplet

    @property
    def problem(self):
        return self.model.problem

    def geometry(self) -> ConstraintGeometry:
        if self._geometry is None:
            self._geometry = analyze_geometry(self.triplet, self.problem.constraints, self.problem.tolerances.kernel)
        return self._geometry

    def solution(self) -> PortfolioSolution:
        if self._solution is None:
            settings = OptimizerSettings.from_dict(self.settings.get('optimizer'))
            self._solution = solve_portfolio(self.triplet, self.problem, settings, self.geometry())
            if self.store is not None:
                self.store.save_solution(self.run_id, self._solution.to_dict())
        return self._solution

    def curves(self) -> SolutionCurves:
        solution = self.solution()
        if not math.isfinite(solution.g_star):
            raise PreconditionFailed(f"no finite optimal value (verdict {solution.verdict})")
        problem = self.problem
        return build_curves(solution.g_star, problem.p, problem.delta, problem.T, problem.x0)

    def _register(self, name: str, path: Path) -> None:
        digest = _sha256(path)
        self.artifacts[name] = digest
        if self.store is not None:
            self.store.save_artifact(self.run_id, name, str(path), digest)
        logger.info(f"Wrote {path}")

    def write_json(self, name: str, data: Dict) -> Path:
        path = self.out_dir / name
        path.write_text(json.dumps(_jsonable(data), sort_keys=True, indent=2, allow_nan=False) + "\n",
                        encoding="utf-8")
        self._register(name, path)
        return path

    def write_csv(self, name: str, frame: pd.DataFrame) -> Path:
        path = self.out_dir / name
        frame.to_csv(path, index=False, float_format="%.12g")
        self._register(name, path)
        return path

    def write_model(self, name: str, data: Dict) -> Path:
        path = self.out_dir / name
        dump_model(data, str(path))
        self._register(name, path)
        return path

    def save_estimate(self, label: str, estimate: UtilityEstimate) -> None:
        if self.store is not None:
            self.store.save_estimate(self.run_id, label, estimate.to_dict())


# -- subcommands ----------------------------------------------------------------


def run_validate(ctx: RunContext) -> int:
    """Check the Lévy triplet and write validate.json; exit 1 when it is invalid."""
    report = validate_model(ctx.triplet, ctx.problem.tolerances.psd)
    ctx.write_json("validate.json", {
        'model': ctx.model.name,
        'dim': ctx.triplet.dim,
        'report': report.to_dict(),
        'total_activity': total_activity(ctx.triplet),
        'triplet': ctx.triplet.to_dict(),
        'problem': ctx.problem.to_dict(),
    })
    if not report.valid:
        raise ModelValidationError(report.violations)
    logger.info(f"Model '{ctx.model.name}' is valid")
    return EXIT_OK


def run_geometry(ctx: RunContext) -> int:
    """Natural constraints, null investments, NUIP and closedness of the projection."""
    geometry = ctx.geometry()
    C = ctx.problem.constraints
    data = geometry.to_dict()
    data['dense_strict_interior'] = dense_strict_interior(C, geometry.natural)
    data['finiteness'] = classify_finiteness(ctx.triplet, C, ctx.problem.p, geometry)
    data['constraints'] = C.to_dict()
    ctx.write_json("geometry.json", data)
    return EXIT_OK


def run_nuip(ctx: RunContext) -> int:
    """Decide the no-unbounded-increasing-profit condition and print the verdict."""
    verdict = ctx.geometry().nuip
    ctx.write_json("nuip.json", verdict.to_dict())
    line = f"NUIP {verdict.status}"
    if verdict.witness is not None:
        line += f"; witness {np.round(verdict.witness, 12).tolist()}"
    print(line)
    return EXIT_OK


def run_transform(ctx: RunContext) -> int:
    """Apply the default-removing transformation and write the transformed triplet."""
    transform = build_transform(ctx.triplet, ctx.problem.constraints, ctx.problem.tolerances.membership)
    transformed = transform_triplet(ctx.triplet, transform.Lambda)
    data = transform.to_dict()
    data['triplet'] = transformed.to_dict()
    data['validation'] = validate_model(transformed, ctx.problem.tolerances.psd).to_dict()
    ctx.write_json("transform.json", data)
    return EXIT_OK


def run_gscan(ctx: RunContext) -> int:
    """Tabulate g and its directional derivative at 0 on a grid (d <= 2)."""
    d = ctx.triplet.dim
    if d > 2:
        raise PreconditionFailed(f"g-scan is limited to d <= 2, model has d = {d}")
    scan = ctx.settings['gscan']
    span = float(ctx.args.span if ctx.args.span is not None else scan['span'])
    points = int(ctx.args.points if ctx.args.points is not None else scan['points'])
    axis = np.linspace(-span, span, points)
    mesh = np.array(np.meshgrid(*([axis] * d), indexing='ij')).reshape(d, -1).T
    objective = GObjective(ctx.triplet, ctx.problem.p, ctx.problem.tolerances)
    zero = np.zeros(d)
    rows = []
    for y in mesh:
        try:
            g = objective.value(y).value
            G0 = objective.directional(zero, y)
        except DomainError:
            g, G0 = -math.inf, math.nan
        row = {f"y{i + 1}": float(y[i]) for i in range(d)}
        row.update({'g': g, 'G0': G0, 'in_C': bool(ctx.problem.constraints.contains(y))})
        rows.append(row)
    ctx.write_csv("g_scan.csv", pd.DataFrame(rows))
    return EXIT_OK


def run_solve(ctx: RunContext) -> int:
    """Solve the reduced problem and print the optimal portfolio and g*."""
    solution = ctx.solution()
    data = solution.to_dict()
    data['finiteness'] = classify_finiteness(ctx.triplet, ctx.problem.constraints, ctx.problem.p, ctx.geometry())
    ctx.write_json("solution.json", data)
    pi = None if solution.pi_hat is None else np.round(solution.pi_hat, 10).tolist()
    print(f"pi_hat = {pi}, g* = {solution.g_star:.12g}, a = {solution.a:.12g} ({solution.verdict})")
    return EXIT_OK


def run_curves(ctx: RunContext) -> int:
    """Build the value and consumption curves and check the Bellman ODE."""
    curves = ctx.curves()
    data = curves.to_dict()
    data['bellman_residual'] = verify_bellman_ode(curves)
    ctx.write_json("curves.json", data)
    points = int(ctx.settings['curves']['points'])
    ctx.write_csv("curves.csv", curves.sample(np.linspace(0.0, ctx.problem.T, points)))
    return EXIT_OK


def run_qmeasure(ctx: RunContext) -> int:
    """Test existence of the q-optimal measure and write the model under Q."""
    report = q_optimal_exists(ctx.triplet, ctx.problem.p, ctx.solution(), ctx.problem)
    ctx.write_json("qmeasure.json", report.to_dict())
    if report.triplet_under_Q is not None:
        ctx.write_model("q_model.yaml", model_to_dict(report.triplet_under_Q, ctx.problem,
                                                      name=f"{ctx.model.name}_Q",
                                                      description=f"{ctx.model.name} under the q-optimal measure"))
    return EXIT_OK


def _simulate(ctx: RunContext):
    sim = ctx.settings['simulation']
    paths = int(ctx.args.paths if ctx.args.paths is not None else sim['paths'])
    grid = int(ctx.args.grid if ctx.args.grid is not None else sim['grid_steps'])
    return simulate_paths(ctx.triplet, ctx.problem.T, paths, grid, ctx.seed, int(sim['block_size']))


def _policy(ctx: RunContext) -> np.ndarray:
    policy = ctx.args.policy
    if policy == 'zero':
        return np.zeros(ctx.triplet.dim)
    if policy == 'file':
        if ctx.args.pi is None:
            raise PreconditionFailed("--policy file needs --pi")
        pi = ctx.args.pi
        if pi.shape[0] != ctx.triplet.dim:
            raise PreconditionFailed(f"--pi has {pi.shape[0]} entries, model has d = {ctx.triplet.dim}")
        return pi
    solution = ctx.solution()
    if solution.pi_hat is None:
        raise PreconditionFailed(f"no optimal portfolio to simulate (verdict {solution.verdict})")
    return np.asarray(solution.pi_hat, dtype=float)


def run_simulate(ctx: RunContext) -> int:
    """Simulate wealth under a constant portfolio and estimate expected utility."""
    pi = _policy(ctx)
    problem = ctx.problem
    needs_curves = (problem.delta == 1 and ctx.args.kappa == 'optimal') or ctx.args.policy == 'optimal'
    curves = ctx.curves() if needs_curves else None
    batch = _simulate(ctx)

    if problem.delta == 1 and ctx.args.kappa == 'zero':
        wealth = wealth_paths(batch, pi, None, problem.x0)
        if problem.p < 0:
            # U(0) = -inf on every path
            estimate = UtilityEstimate(mean=-math.inf, se=math.nan, n_paths=batch.n_paths,
                                       absorbed=int(wealth.absorbed.sum()))
        else:
            estimate = expected_utility(batch, pi, None, dataclasses.replace(problem, delta=0))
    else:
        wealth = wealth_paths(batch, pi, curves if problem.delta == 1 else None, problem.x0)
        estimate = expected_utility(batch, pi, curves, problem)
    ctx.save_estimate(f"policy={ctx.args.policy}", estimate)

    data = {'policy': ctx.args.policy, 'pi': pi, 'kappa': ctx.args.kappa if problem.delta == 1 else None,
            'estimate': estimate.to_dict(), 'seed': ctx.seed, 'grid_steps': batch.grid.size - 1}
    if curves is not None:
        data['u_x0'] = curves.u_x0
    ctx.write_json("simulate.json", data)
    ctx.write_csv("estimates.csv", pd.DataFrame([{'label': f"policy={ctx.args.policy}", **estimate.to_dict()}]))
    values = wealth.values
    ctx.write_csv("wealth.csv", pd.DataFrame({
        't': wealth.grid,
        'mean': values.mean(axis=0),
        'q05': np.quantile(values, 0.05, axis=0),
        'median': np.median(values, axis=0),
        'q95': np.quantile(values, 0.95, axis=0),
    }))
    return EXIT_OK


def run_verify(ctx: RunContext) -> int:
    """Full pipeline with every acceptance rule; exit 3 when any rule fails."""
    checker = AcceptanceChecker({**ctx.settings['acceptance'], 'seed': ctx.seed})
    record = checker.record
    problem = ctx.problem
    C = problem.constraints
    records: List[Dict] = []

    report = validate_model(ctx.triplet, problem.tolerances.psd)
    records.append(record("model_valid", (report.valid, "; ".join(report.violations) or "valid")))
    if not report.valid:
        return _finish_verify(ctx, records)

    geometry = ctx.geometry()
    records.append(record("nuip", (geometry.nuip.holds, geometry.nuip.reason or geometry.nuip.status)))
    solution = ctx.solution()
    if solution.pi_hat is None and solution.approach is not None and math.isfinite(solution.g_star):
        # finite supremum approached along a non-closed projection: no maximizer is the expected outcome
        records.append(record("maximizer_attained",
                              (True, f"supremum {solution.g_star:.12g} not attained; projection onto N-perp "
                                     f"not closed, as expected")))
        return _finish_verify(ctx, records)
    records.append(record("maximizer_attained",
                          (solution.pi_hat is not None, f"verdict {solution.verdict}, location {solution.location}")))
    if solution.pi_hat is None:
        return _finish_verify(ctx, records)

    objective = GObjective(ctx.triplet, problem.p, problem.tolerances)
    natural = geometry.natural
    radius = max(1.0, 2.0 * float(np.linalg.norm(solution.pi_hat)))
    records.append(record("first_order", checker.check_first_order(solution, objective, C, natural)))
    records.append(record("gradient", checker.check_gradient(objective, C, natural, radius)))
    records.append(record("concavity", checker.check_concavity(objective, C, natural, radius)))

    curves = ctx.curves()
    records.append(record("bellman_ode", checker.check_bellman(curves)))

    batch = _simulate(ctx)
    at_optimum = expected_utility(batch, solution.pi_hat, curves, problem)
    ctx.save_estimate("pi_hat", at_optimum)
    records.append(record("expected_utility", checker.check_utility(at_optimum, curves)))

    panel = perturbation_panel(solution.pi_hat, int(ctx.settings['acceptance']['perturbations']), ctx.seed,
                               C, natural)
    perturbed = []
    for k, pi in enumerate(panel):
        estimate = expected_utility(batch, pi, curves, problem)
        ctx.save_estimate(f"perturbation_{k}", estimate)
        perturbed.append(estimate)
    records.append(record("dominance", checker.check_dominance(at_optimum, perturbed)))
    records.append(record("verification", checker.check_verification(
        verification_test(batch, solution, curves, problem, checker.n_sigma))))

    if problem.delta == 0 and isinstance(C, Reals):
        q_report = q_optimal_exists(ctx.triplet, problem.p, solution, problem)
        records.append(record("q_measure", checker.check_q_measure(q_report)))
        if q_report.exists:
            records.append(record("density_mass", checker.check_density_mass(density_terminal(batch, q_report))))

    ctx.write_csv("estimates.csv", pd.DataFrame(
        [{'label': 'pi_hat', **at_optimum.to_dict()}]
        + [{'label': f"perturbation_{k}", **e.to_dict()} for k, e in enumerate(perturbed)]))
    return _finish_verify(ctx, records)


def _finish_verify(ctx: RunContext, records: List[Dict]) -> int:
    passed = all(r['passed'] for r in records)
    ctx.write_json("verify.json", {'passed': passed, 'checks': records})
    print(f"verify: {sum(r['passed'] for r in records)}/{len(records)} checks passed")
    return EXIT_OK if passed else EXIT_VERIFY_FAILED


SUBCOMMANDS: Dict[str, Callable[[RunContext], int]] = {
    'validate': run_validate,
    'geometry': run_geometry,
    'nuip': run_nuip,
    'transform': run_transform,
    'g-scan': run_gscan,
    'solve': run_solve,
    'curves': run_curves,
    'qmeasure': run_qmeasure,
    'simulate': run_simulate,
    'verify': run_verify,
}


# -- entry point -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('model', help='Model file (path or name in models/)')
    common.add_argument('--settings', default='settings.yaml', help='Path to settings file')
    common.add_argument('--out', default=None, help=f'Output directory (default: ${OUTPUT_ENV} or settings)')
    common.add_argument('--seed', type=int, default=None, help='Seed of the Monte Carlo streams')
    common.add_argument('--paths', type=int, default=None, help='Number of simulated paths')
    common.add_argument('--grid', type=int, default=None, help='Time steps of the simulation grid')
    common.add_argument('--policy', choices=['optimal', 'zero', 'file'], default='optimal',
                        help='Portfolio used by simulate')
    common.add_argument('--pi', type=parse_vector, default=None, help='Portfolio for --policy file, e.g. 0.5,0.2')
    common.add_argument('--kappa', choices=['optimal', 'zero'], default='optimal',
                        help='Consumption used by simulate (consumption problems)')
    common.add_argument('--span', type=float, default=None, help='Half-width of the g-scan grid')
    common.add_argument('--points', type=int, default=None, help='Points per axis of the g-scan grid')
    common.add_argument('--log-level', default=None, help='Override the logging level')

    parser = argparse.ArgumentParser(description='Power-utility portfolio solver for exponential Lévy markets')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    subparsers = parser.add_subparsers(dest='subcommand', required=True)
    for name, func in SUBCOMMANDS.items():
        subparsers.add_parser(name, parents=[common], help=(func.__doc__ or name).strip().splitlines()[0])
    return parser


def _manifest(ctx: RunContext) -> Dict:
    return {
        'subcommand': ctx.subcommand,
        'model': ctx.model.name,
        'model_sha256': ctx.model.sha256,
        'seed': ctx.seed,
        'artifacts': dict(sorted(ctx.artifacts.items())),
        'versions': {
            'levy_solver': __version__,
            'python': platform.python_version(),
            'numpy': np.__version__,
            'scipy': scipy.__version__,
            'pandas': pd.__version__,
            'pyyaml': yaml.__version__,
        },
    }


def run(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run one subcommand and return its exit code."""
    args = build_parser().parse_args(argv)
    configure_logging(None, args.log_level or 'INFO')
    config = load_config(args.settings)
    configure_logging(config['logging'].get('file'), args.log_level or config['logging'].get('level', 'INFO'))

    store = None
    run_id = None
    exit_code = EXIT_UNEXPECTED
    message = ""
    try:
        model = load_model(args.model)
        tolerances = Tolerances.from_dict(config.get('tolerances')).merged(
            {k: v for k, v in model.problem.tolerances.to_dict().items() if v != getattr(Tolerances(), k)})
        model = dataclasses.replace(model, problem=dataclasses.replace(model.problem, tolerances=tolerances))

        base = args.out or os.environ.get(OUTPUT_ENV) or config['output']['directory']
        out_dir = Path(base) / model.name / args.subcommand
        out_dir.mkdir(parents=True, exist_ok=True)
        seed = int(args.seed if args.seed is not None else config['simulation']['seed'])

        store = RunStore(config['database']['path'])
        run_id = store.start_run({'subcommand': args.subcommand, 'model_name': model.name,
                                  'model_sha256': model.sha256, 'seed': seed, 'output_dir': str(out_dir)})
        ctx = RunContext(subcommand=args.subcommand, model=model, settings=config, out_dir=out_dir,
                         seed=seed, args=args, store=store, run_id=run_id)
        logger.info(f"Running {args.subcommand} on '{model.name}' (seed {seed}, output {out_dir})")
        exit_code = SUBCOMMANDS[args.subcommand](ctx)
        ctx.write_json("manifest.json", _manifest(ctx))
        message = "ok" if exit_code == EXIT_OK else "acceptance checks failed"
    except SolverError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"error: {e}", file=sys.stderr)
        exit_code, message = EXIT_SOLVER_ERROR, f"{type(e).__name__}: {e}"
    except Exception as e:
        logger.error(f"Unexpected error: {e}", exc_info=True)
        exit_code, message = EXIT_UNEXPECTED, f"{type(e).__name__}: {e}"
    finally:
        if store is not None:
            if run_id is not None:
                store.finish_run(run_id, exit_code, message)
            store.close()
    return exit_code


def main():
    """Main entry point."""
    sys.exit(run())


if __name__ == "__main__":
    main()
