"""Scenario files (YAML) and machine-readable result documents (JSON).

A scenario file has the sections ``params``, ``resources``, ``agents``,
``energy_constraints``, ``sweeps`` (or a single ``sweep``) and ``solver``. Any
numeric field may be written as an arithmetic expression over ``$name``
references into ``params``, e.g. ``budget: "1 - $budget_radio"``. See the
README for the full schema.
"""

from __future__ import annotations

import ast
import copy
import json
import logging
import math
import operator
from dataclasses import asdict, dataclass, field
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import yaml

from egmarket.model import (
    UNBOUNDED, Agent, EnergyConstraint, MarketScenario, Resource, ResourceId, validate_scenario,
)
from egmarket.solver import SolverConfig
from egmarket.utility import CES, CobbDouglas, Leontief, Linear, Nest, UtilitySpec

logger = logging.getLogger(__name__)

RESULT_FORMAT = "egmarket-result/1"


class ScenarioFileError(ValueError):
    pass


@dataclass(frozen=True)
class SweepSpec:
    name: str
    parameter: str
    start: float
    stop: float
    steps: int
    overrides: dict = field(default_factory=dict)

    def values(self) -> np.ndarray:
        if self.steps == 1:
            return np.array([self.start])
        return np.linspace(self.start, self.stop, self.steps)


@dataclass
class ScenarioSource:
    """A parsed scenario document that can be re-instantiated with new values."""

    doc: dict
    path: str = "<memory>"

    def scenario(self) -> MarketScenario:
        return build_scenario(self.doc, self.path)

    def sweeps(self) -> list[SweepSpec]:
        return parse_sweeps(self.doc)

    def solver_config(self) -> SolverConfig:
        return parse_solver(self.doc)

    def with_value(self, parameter: str, value: float) -> "ScenarioSource":
        doc = copy.deepcopy(self.doc)
        _set_path(doc, parameter, float(value))
        return ScenarioSource(doc, self.path)

    def with_overrides(self, overrides: dict) -> "ScenarioSource":
        src = self
        for p, v in overrides.items():
            src = src.with_value(p, v)
        return src


_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNOPS = {ast.USub: operator.neg, ast.UAdd: operator.pos}


def _eval_expr(text: str, params: dict, where: str) -> float:
    src = text.replace("$", "")
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError as exc:
        raise ScenarioFileError(f"{where}: cannot parse expression {text!r}") from exc

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name):
            if node.id not in params:
                raise ScenarioFileError(f"{where}: unknown parameter ${node.id}")
            return number(params[node.id], {}, f"params.{node.id}")
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
            return _UNOPS[type(node.op)](ev(node.operand))
        raise ScenarioFileError(f"{where}: unsupported expression {text!r}")

    return ev(tree)


def number(value, params: dict, where: str) -> float:
    if isinstance(value, bool):
        raise ScenarioFileError(f"{where}: expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        if value.strip().lower() in ("unbounded", "inf", "infinity"):
            return UNBOUNDED
        return _eval_expr(value, params, where)
    raise ScenarioFileError(f"{where}: expected a number, got {value!r}")


def _weights(mapping, names: dict, params: dict, where: str) -> dict[int, float]:
    if not isinstance(mapping, dict) or not mapping:
        raise ScenarioFileError(f"{where}: expected a non-empty mapping of resource -> weight")
    out = {}
    for rname, w in mapping.items():
        if rname not in names:
            raise ScenarioFileError(f"{where}: unknown resource {rname!r}")
        out[names[rname]] = number(w, params, f"{where}.{rname}")
    return out


def parse_utility(node, names: dict, params: dict, where: str) -> UtilitySpec:
    if not isinstance(node, dict) or len(node) != 1:
        raise ScenarioFileError(f"{where}: a utility is a single-key mapping (leontief, linear, "
                                f"cobb_douglas, ces, sum, nest)")
    (kind, body), = node.items()
    if kind == "leontief":
        return Leontief(_weights(body, names, params, f"{where}.leontief"))
    if kind == "linear":
        return Linear(_weights(body, names, params, f"{where}.linear"))
    if kind == "cobb_douglas":
        return CobbDouglas(_weights(body, names, params, f"{where}.cobb_douglas"))
    if kind == "ces":
        if not isinstance(body, dict) or "rho" not in body or "weights" not in body:
            raise ScenarioFileError(f"{where}.ces: needs 'rho' and 'weights'")
        return CES(_weights(body["weights"], names, params, f"{where}.ces.weights"),
                   number(body["rho"], params, f"{where}.ces.rho"))
    if kind == "sum":
        if not isinstance(body, list) or not body:
            raise ScenarioFileError(f"{where}.sum: expected a non-empty list")
        return Nest(1.0, tuple((1.0, parse_utility(c, names, params, f"{where}.sum[{i}]"))
                               for i, c in enumerate(body)))
    if kind == "nest":
        if not isinstance(body, dict) or "rho" not in body or "children" not in body:
            raise ScenarioFileError(f"{where}.nest: needs 'rho' and 'children'")
        kids = []
        for i, c in enumerate(body["children"]):
            p = f"{where}.nest.children[{i}]"
            if not isinstance(c, dict) or "utility" not in c:
                raise ScenarioFileError(f"{p}: needs 'utility' (and optional 'weight')")
            kids.append((number(c.get("weight", 1.0), params, f"{p}.weight"),
                         parse_utility(c["utility"], names, params, f"{p}.utility")))
        return Nest(number(body["rho"], params, f"{where}.nest.rho"), tuple(kids))
    raise ScenarioFileError(f"{where}: unknown utility kind {kind!r}")


def _section(doc, key, where):
    val = doc.get(key)
    if val is None:
        return []
    if not isinstance(val, list):
        raise ScenarioFileError(f"{where}: section {key!r} must be a list")
    return val


def build_scenario(doc: dict, path: str = "<memory>", validate: bool = True) -> MarketScenario:
    params = doc.get("params") or {}
    resources = []
    names: dict[str, int] = {}
    for i, r in enumerate(_section(doc, "resources", path)):
        if not isinstance(r, dict) or "name" not in r:
            raise ScenarioFileError(f"{path}: resources[{i}] needs a name")
        cap = number(r.get("capacity", "unbounded"), params, f"resources[{i}].capacity")
        names[str(r["name"])] = i
        resources.append(Resource(ResourceId(i, str(r["name"])), cap))
    agents = []
    for n, a in enumerate(_section(doc, "agents", path)):
        if not isinstance(a, dict) or not {"name", "budget", "utility"} <= set(a):
            raise ScenarioFileError(f"{path}: agents[{n}] needs name, budget and utility")
        agents.append(Agent(str(a["name"]), number(a["budget"], params, f"agents[{n}].budget"),
                            parse_utility(a["utility"], names, params, f"agents[{n}].utility")))
    ecs = []
    for i, e in enumerate(_section(doc, "energy_constraints", path)):
        if not isinstance(e, dict) or not {"limit", "exponents"} <= set(e):
            raise ScenarioFileError(f"{path}: energy_constraints[{i}] needs limit and exponents")
        ex = _weights(e["exponents"], names, params, f"energy_constraints[{i}].exponents")
        ecs.append(EnergyConstraint(i, ex, number(e["limit"], params, f"energy_constraints[{i}].limit"),
                                    str(e.get("name", f"e{i}"))))
    s = MarketScenario(tuple(agents), tuple(resources), tuple(ecs))
    if validate:
        rep = validate_scenario(s)
        if not rep.ok:
            raise ScenarioFileError(f"{path}: invalid scenario:\n  " + "\n  ".join(rep.violations))
    return s


def parse_sweeps(doc: dict) -> list[SweepSpec]:
    raw = doc.get("sweeps", doc.get("sweep"))
    if raw is None:
        return []
    if isinstance(raw, dict):
        raw = [raw]
    out = []
    for i, sw in enumerate(raw):
        where = f"sweeps[{i}]"
        if not isinstance(sw, dict) or not {"parameter", "from", "to", "steps"} <= set(sw):
            raise ScenarioFileError(f"{where}: needs parameter, from, to, steps")
        spec = SweepSpec(str(sw.get("name", f"sweep{i}")), str(sw["parameter"]),
                         number(sw["from"], {}, f"{where}.from"), number(sw["to"], {}, f"{where}.to"),
                         int(sw["steps"]), dict(sw.get("overrides") or {}))
        if spec.steps < 1:
            raise ScenarioFileError(f"{where}: steps must be >= 1")
        _resolve(doc, spec.parameter)
        for p in spec.overrides:
            _resolve(doc, p)
        out.append(spec)
    return out


def parse_solver(doc: dict) -> SolverConfig:
    raw = doc.get("solver") or {}
    known = set(SolverConfig.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ScenarioFileError(f"solver: unknown settings {sorted(unknown)}")
    kwargs = {}
    for k, v in raw.items():
        kind = SolverConfig.__dataclass_fields__[k].type
        kwargs[k] = int(number(v, {}, f"solver.{k}")) if kind == "int" else number(v, {}, f"solver.{k}")
    cfg = SolverConfig(**kwargs)
    logger.info("solver settings: %s", asdict(cfg))
    return cfg


def _named(items, name, where):
    hits = [it for it in items if isinstance(it, dict) and str(it.get("name")) == name]
    if len(hits) != 1:
        raise ScenarioFileError(f"unknown parameter {where!r}")
    return hits[0]


def _resolve(doc: dict, path: str):
    """Return (container, key) of the numeric field addressed by ``path``."""
    parts = path.split(".")
    head = parts[0]
    try:
        if head == "params" and len(parts) == 2:
            params = doc.get("params") or {}
            if parts[1] not in params:
                raise ScenarioFileError(f"unknown parameter {path!r}")
            return params, parts[1]
        if head == "agents" and len(parts) == 3 and parts[2] == "budget":
            return _named(doc.get("agents") or [], parts[1], path), "budget"
        if head == "resources" and len(parts) == 3 and parts[2] == "capacity":
            return _named(doc.get("resources") or [], parts[1], path), "capacity"
        if head == "energy_constraints" and len(parts) == 3 and parts[2] == "limit":
            return _named(doc.get("energy_constraints") or [], parts[1], path), "limit"
        if head == "energy_constraints" and len(parts) == 4 and parts[2] == "exponents":
            ex = _named(doc.get("energy_constraints") or [], parts[1], path)["exponents"]
            if parts[3] not in ex:
                raise ScenarioFileError(f"unknown parameter {path!r}")
            return ex, parts[3]
    except (TypeError, KeyError) as exc:
        raise ScenarioFileError(f"unknown parameter {path!r}") from exc
    raise ScenarioFileError(f"unknown parameter {path!r}")


def _set_path(doc: dict, path: str, value: float) -> None:
    container, key = _resolve(doc, path)
    container[key] = value


def parse_document(text: str, path: str = "<memory>") -> dict:
    try:
        doc = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        loc = f"{path}:{mark.line + 1}:{mark.column + 1}" if mark else path
        raise ScenarioFileError(f"{loc}: parse error: {exc.problem}") from exc
    except yaml.YAMLError as exc:
        raise ScenarioFileError(f"{path}: parse error: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScenarioFileError(f"{path}: top level must be a mapping")
    return doc


def load_source(path) -> ScenarioSource:
    path = Path(path)
    src = ScenarioSource(parse_document(path.read_text(), str(path)), str(path))
    src.scenario()
    src.sweeps()
    return src


def load_scenario(path) -> tuple[MarketScenario, list[SweepSpec]]:
    """Parse and validate a scenario file; returns the scenario and its sweeps."""
    src = load_source(path)
    return src.scenario(), src.sweeps()


def bundled_path(name: str) -> Path:
    return Path(__file__).parent / "data" / name


def bundled_scenarios() -> list[Path]:
    return sorted((Path(__file__).parent / "data").glob("*.scenario"))


# result documents


def _floats(a):
    return np.asarray(a, dtype=float).tolist()


def result_document(s: MarketScenario, r, certificate=None) -> dict:
    doc = {
        "format": RESULT_FORMAT,
        "resources": s.resource_names,
        "agents": [a.name for a in s.agents],
        "energy_constraints": [c.label for c in s.energy_constraints],
        "allocation": _floats(r.allocation),
        "prices": _floats(r.prices),
        "capacity_duals": _floats(r.capacity_duals),
        "energy_duals": _floats(r.energy_duals),
        "taxes": _floats(r.decomposition.taxes),
        "utilities": _floats(r.utilities),
        "objective": float(r.objective),
        "solver_stats": {k: v for k, v in r.solver_stats.items() if k != "objective_history"},
    }
    if certificate is not None:
        doc["certificate"] = {
            "passed": certificate.passed,
            "tol": certificate.tol,
            "c1_gaps": _floats(certificate.c1_gaps),
            "stationarity": certificate.stationarity,
            "slackness": certificate.slackness,
            "feasibility": certificate.feasibility,
            "budget_residuals": _floats(certificate.budget_residuals),
            "nash_welfare": certificate.nash_welfare,
        }
    return doc


def write_result(path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=False, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def load_result(path, s: MarketScenario | None = None) -> SimpleNamespace:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != RESULT_FORMAT:
        raise ScenarioFileError(f"{path}: not a result document ({doc.get('format')!r})")
    if s is not None and doc["resources"] != s.resource_names:
        raise ScenarioFileError(f"{path}: resources do not match the scenario")
    return SimpleNamespace(
        allocation=np.array(doc["allocation"], dtype=float),
        prices=np.array(doc["prices"], dtype=float),
        capacity_duals=np.array(doc["capacity_duals"], dtype=float),
        energy_duals=np.array(doc["energy_duals"], dtype=float),
        utilities=np.array(doc["utilities"], dtype=float),
        objective=float(doc["objective"]),
    )
