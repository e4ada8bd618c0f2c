"""
YAML model files (schema_version 1).

A model file holds the triplet, its atoms and ray densities, the problem
(p, delta, T, x0), the constraint set and optional tolerance overrides. See
MODEL_FILES.md for the format.
"""
import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import yaml

from geometry.constraints import constraint_from_dict
from market.densities import DENSITY_KINDS, DensityPart, QuadGrid, TailModel, TiltedDensity
from market.levy import Atom, JumpMeasure, LevyTriplet
from market.problem import ProblemSpec, Tolerances
from utils.errors import ModelFileError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MODEL_SUFFIXES = (".yaml", ".yml")

DENSITY_PARAMS = {
    'uniform': ('rate',),
    'pareto': ('alpha', 'scale'),
    'exponential': ('rate', 'scale'),
    'gaussian': ('mean', 'std', 'scale'),
    'cgmy': ('C', 'G', 'M', 'Y'),
}


@dataclass(frozen=True, eq=False)
class ModelFile:
    """Parsed model file."""

    name: str
    description: str
    triplet: LevyTriplet
    problem: ProblemSpec
    source: str
    sha256: str


def _line_index(node, path: str, out: Dict[str, int]) -> None:
    """Map dotted field paths to 1-based line numbers."""
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for key, value in node.value:
            child = f"{path}.{key.value}" if path else str(key.value)
            out[child] = key.start_mark.line + 1
            _line_index(value, child, out)
            out[child] = key.start_mark.line + 1
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            _line_index(item, f"{path}[{i}]", out)


class _Reader:
    """Typed access to the raw mapping with line-aware errors."""

    def __init__(self, data: Dict, lines: Dict[str, int]):
        self.data = data
        self.lines = lines

    def error(self, path: str, message: str) -> ModelFileError:
        probe = path
        while probe and probe not in self.lines:
            probe = probe.rsplit('.', 1)[0] if '.' in probe else ""
        return ModelFileError(message, field=path, line=self.lines.get(probe))

    def number(self, value: Any, path: str) -> float:
        if isinstance(value, bool) or value is None:
            raise self.error(path, f"expected a number, got {value!r}")
        try:
            # YAML 1.1 reads 1e-9 (no dot) as a string
            return float(value)
        except (TypeError, ValueError):
            raise self.error(path, f"expected a number, got {value!r}")

    def vector(self, value: Any, path: str, dim: Optional[int] = None) -> np.ndarray:
        if not isinstance(value, list):
            value = [value]
        out = np.array([self.number(v, f"{path}[{i}]") for i, v in enumerate(value)], dtype=float)
        if dim is not None and out.shape[0] != dim:
            raise self.error(path, f"expected length {dim}, got {out.shape[0]}")
        return out

    def matrix(self, value: Any, path: str, dim: int) -> np.ndarray:
        if not isinstance(value, list):
            raise self.error(path, "expected a list of rows")
        rows = [self.vector(row, f"{path}[{i}]", dim) for i, row in enumerate(value)]
        if len(rows) != dim:
            raise self.error(path, f"expected {dim} rows, got {len(rows)}")
        return np.vstack(rows) if rows else np.zeros((0, dim))

    def section(self, key: str, required: bool = True) -> Any:
        if key not in self.data:
            if required:
                raise ModelFileError(f"missing section '{key}'", field=key, line=None)
            return None
        return self.data[key]


def _density(reader: _Reader, raw: Dict, path: str, dim: int) -> DensityPart:
    if not isinstance(raw, dict):
        raise reader.error(path, "density entry must be a mapping")
    kind = raw.get('kind')
    direction = reader.vector(raw.get('direction', [1.0] * dim), f"{path}.direction", dim)
    support = reader.vector(raw.get('support'), f"{path}.support", 2) if 'support' in raw else None
    tail = None
    if 'tail' in raw:
        try:
            tail = TailModel(str(raw['tail'].get('kind')), reader.number(raw['tail'].get('rate'), f"{path}.tail.rate"))
        except (AttributeError, ValueError) as e:
            raise reader.error(f"{path}.tail", str(e))
    grid = None
    if 'grid' in raw:
        g = raw['grid'] or {}
        points = tuple(reader.vector(g.get('points', []), f"{path}.grid.points")) if g.get('points') else ()
        grid = QuadGrid(limit=int(reader.number(g.get('limit', 200), f"{path}.grid.limit")), points=points)
    params = raw.get('params') or {}

    if kind == 'tilted':
        base = _density(reader, params.get('base'), f"{path}.params.base", dim)
        base = base.with_direction(direction)
        weight = reader.number(params.get('weight'), f"{path}.params.weight")
        exponent = reader.number(params.get('exponent'), f"{path}.params.exponent")
        return TiltedDensity(base, weight, exponent, grid)
    if kind not in DENSITY_KINDS:
        raise reader.error(f"{path}.kind", f"unknown density kind {kind!r}; expected one of {sorted(DENSITY_KINDS)}")
    if support is None:
        raise reader.error(f"{path}.support", "missing support [lo, hi]")
    values = {}
    for name in DENSITY_PARAMS[kind]:
        if name not in params:
            raise reader.error(f"{path}.params", f"missing parameter '{name}' for {kind} density")
        values[name] = reader.number(params[name], f"{path}.params.{name}")
    try:
        return DENSITY_KINDS[kind](**values, direction=direction, support=tuple(support), tail=tail, grid=grid)
    except ValueError as e:
        raise reader.error(path, str(e))


def parse_model(text: str, source: str = "<string>") -> ModelFile:
    """
    Parse a model file from text.

    Raises:
        ModelFileError: YAML syntax errors or invalid fields (with line numbers)
    """
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, 'problem_mark', None)
        raise ModelFileError(f"invalid YAML: {getattr(e, 'problem', e)}", line=None if mark is None else mark.line + 1)
    if not isinstance(data, dict):
        raise ModelFileError("model file must be a mapping", line=1)
    lines: Dict[str, int] = {}
    _line_index(root, "", lines)
    reader = _Reader(data, lines)

    version = data.get('schema_version')
    if version != SCHEMA_VERSION:
        raise reader.error('schema_version', f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")

    raw_triplet = reader.section('triplet')
    if not isinstance(raw_triplet, dict) or 'b' not in raw_triplet:
        raise reader.error('triplet', "triplet needs a drift 'b'")
    b = reader.vector(raw_triplet['b'], 'triplet.b')
    dim = b.shape[0]
    c = reader.matrix(raw_triplet.get('c', [[0.0] * dim for _ in range(dim)]), 'triplet.c', dim)

    atoms: List[Atom] = []
    for i, raw in enumerate(data.get('atoms') or []):
        path = f"atoms[{i}]"
        if not isinstance(raw, dict) or 'x' not in raw or 'lambda' not in raw:
            raise reader.error(path, "atom needs 'x' and 'lambda'")
        atoms.append(Atom(reader.vector(raw['x'], f"{path}.x", dim), reader.number(raw['lambda'], f"{path}.lambda")))
    densities = [_density(reader, raw, f"densities[{i}]", dim) for i, raw in enumerate(data.get('densities') or [])]
    triplet = LevyTriplet(b=b, c=c, jumps=JumpMeasure(atoms, densities))

    tolerances = Tolerances()
    if data.get('tolerances'):
        overrides = {k: reader.number(v, f"tolerances.{k}") for k, v in data['tolerances'].items()}
        tolerances = Tolerances.from_dict(overrides)

    raw_constraints = data.get('constraints') or {'kind': 'reals'}
    try:
        constraints = constraint_from_dict(raw_constraints, dim)
    except (KeyError, ValueError, TypeError) as e:
        raise reader.error('constraints', f"invalid constraint set: {e}")
    if constraints.dim != dim:
        raise reader.error('constraints', f"constraint dimension {constraints.dim} does not match model dimension {dim}")

    raw_problem = reader.section('problem')
    if not isinstance(raw_problem, dict) or 'p' not in raw_problem:
        raise reader.error('problem', "problem needs the utility exponent 'p'")
    try:
        problem = ProblemSpec(
            p=reader.number(raw_problem['p'], 'problem.p'),
            delta=int(reader.number(raw_problem.get('delta', 0), 'problem.delta')),
            T=reader.number(raw_problem.get('T', 1.0), 'problem.T'),
            x0=reader.number(raw_problem.get('x0', 1.0), 'problem.x0'),
            constraints=constraints,
            tolerances=tolerances,
        )
    except ValueError as e:
        raise reader.error('problem', str(e))

    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
    name = str(data.get('name') or Path(source).stem)
    logger.info(f"Model '{name}' loaded from {source}: dim {dim}, {len(atoms)} atom(s), {len(densities)} density part(s)")
    return ModelFile(name=name, description=str(data.get('description', '')), triplet=triplet,
                     problem=problem, source=source, sha256=digest)


def resolve_model_path(path: str) -> Path:
    """Accept a file path or a model name without suffix (looked up as given, then in models/)."""
    candidate = Path(path)
    if candidate.is_file():
        return candidate
    roots = [candidate.parent, Path(__file__).resolve().parent.parent / "models"]
    for root in roots:
        for suffix in MODEL_SUFFIXES:
            probe = root / f"{candidate.name}{suffix}"
            if probe.is_file():
                return probe
    raise ModelFileError(f"model file not found: {path}")


def load_model(path: str) -> ModelFile:
    resolved = resolve_model_path(path)
    with open(resolved, 'r', encoding='utf-8') as f:
        text = f.read()
    return parse_model(text, str(resolved))


def model_to_dict(triplet: LevyTriplet, problem: Optional[ProblemSpec] = None, name: str = "",
                  description: str = "") -> Dict:
    """Model-file mapping for a triplet (and problem), e.g. the triplet under Q̂."""
    out: Dict[str, Any] = {'schema_version': SCHEMA_VERSION}
    if name:
        out['name'] = name
    if description:
        out['description'] = description
    out['triplet'] = {'b': [float(v) for v in triplet.b], 'c': [[float(v) for v in row] for row in triplet.c]}
    out['atoms'] = [{'x': [float(v) for v in a.x], 'lambda': float(a.lam)} for a in triplet.jumps.atoms]
    out['densities'] = [part.to_dict() for part in triplet.jumps.densities]
    if problem is not None:
        out['problem'] = {'p': problem.p, 'delta': problem.delta, 'T': problem.T, 'x0': problem.x0}
        out['constraints'] = problem.constraints.to_dict()
    return out


def dump_model(data: Dict, path: str) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with open(target, 'w', encoding='utf-8') as f:
        yaml.safe_dump(data, f, sort_keys=False, default_flow_style=None)
    logger.info(f"Model written to {target}")
