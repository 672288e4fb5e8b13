"""King-move grid worlds with planted ground-truth constraints.

Cells are addressed as ``(x, y)`` with ``y = 0`` the bottom row; state
index is ``y * width + x``. The goal is absorbing: its only action is
``stay``, which produces no features.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .inference import InferenceResult, false_positive_rate, greedy_iterative_inference
from .maxent import DemoSet, InfeasibleDemo, backward_pass, sample_trajectories
from .mdp import (ConstraintSet, FullyConstrained, Mdp, MdpError, MinimalConstraint, Trajectory,
                  apply_constraints, augment_features, validate_trajectory)

ACTIONS = (
    ("up", 0, 1), ("down", 0, -1), ("left", -1, 0), ("right", 1, 0),
    ("up_left", -1, 1), ("up_right", 1, 1), ("down_left", -1, -1), ("down_right", 1, -1),
    ("stay", 0, 0),
)
ACTION_NAMES = tuple(a[0] for a in ACTIONS)
MOVES = {name: (dx, dy) for name, dx, dy in ACTIONS}
STAY = ACTION_NAMES.index("stay")
SHIPPED_CONFIGS = ("paper_9x9", "tiny_3x3_oracle", "human_room_grid")


class InvalidConfig(MdpError):
    pass


@dataclass(frozen=True)
class GridConfig:
    width: int
    height: int
    start: tuple[int, int]
    goal: tuple[int, int]
    horizon: int | None = None  # defaults to 2 * width
    diagonal_cost: float = math.sqrt(2)
    features: dict[str, list[tuple[int, int]]] = field(default_factory=dict)
    weights: dict[str, float] = field(default_factory=lambda: {"distance": -1.0})
    rationality: float = 1.0
    discount: float = 1.0
    slip: float = 0.0
    true_states: list[tuple[int, int]] = field(default_factory=list)
    true_actions: list[str] = field(default_factory=list)
    true_features: list[str] = field(default_factory=list)
    name: str = "grid"
    note: str = ""

    @property
    def T(self) -> int:
        return self.horizon if self.horizon is not None else 2 * self.width

    @property
    def feature_names(self) -> tuple[str, ...]:
        return ("distance",) + tuple(self.features)

    def state(self, cell) -> int:
        x, y = cell
        if not (0 <= x < self.width and 0 <= y < self.height):
            raise InvalidConfig(f"cell {cell} lies outside the {self.width}x{self.height} grid")
        return y * self.width + x

    def cell(self, s: int) -> tuple[int, int]:
        return s % self.width, s // self.width

    @classmethod
    def from_dict(cls, d: dict) -> "GridConfig":
        d = dict(d)
        d.pop("schema", None)
        cells = lambda v: [tuple(c) for c in v]
        truth = d.pop("constraints", {})
        try:
            return cls(
                width=int(d.pop("width")), height=int(d.pop("height")),
                start=tuple(d.pop("start")), goal=tuple(d.pop("goal")),
                features={k: cells(v) for k, v in d.pop("features", {}).items()},
                true_states=cells(truth.get("states", [])),
                true_actions=list(truth.get("actions", [])),
                true_features=list(truth.get("features", [])),
                **d,
            )
        except (KeyError, TypeError) as e:
            raise InvalidConfig(f"bad grid config: {e}") from None

    def to_dict(self) -> dict:
        return {
            "schema": "mlci-grid/1", "name": self.name, "note": self.note,
            "width": self.width, "height": self.height,
            "start": list(self.start), "goal": list(self.goal), "horizon": self.horizon,
            "diagonal_cost": self.diagonal_cost,
            "features": {k: [list(c) for c in v] for k, v in self.features.items()},
            "weights": dict(self.weights), "rationality": self.rationality,
            "discount": self.discount, "slip": self.slip,
            "constraints": {"states": [list(c) for c in self.true_states],
                            "actions": list(self.true_actions),
                            "features": list(self.true_features)},
        }


def load_config(name_or_path) -> GridConfig:
    """Load a shipped config by name, or a JSON/TOML grid config file."""
    if str(name_or_path) in SHIPPED_CONFIGS:
        text = resources.files("mlci.configs").joinpath(f"{name_or_path}.json").read_text()
        return GridConfig.from_dict(json.loads(text))
    path = Path(name_or_path)
    if path.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        return GridConfig.from_dict(tomllib.loads(path.read_text()))
    return GridConfig.from_dict(json.loads(path.read_text()))


def _move(cfg: GridConfig, x, y, dx, dy):
    nx, ny = x + dx, y + dy
    if 0 <= nx < cfg.width and 0 <= ny < cfg.height:
        return nx, ny
    return None


_COMPASS = ((1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1))


def _rotations(dx, dy):
    """The two king moves 45 degrees either side of ``(dx, dy)``."""
    i = _COMPASS.index((dx, dy))
    return [_COMPASS[(i + 1) % 8], _COMPASS[(i - 1) % 8]]


def truth_constraints(cfg: GridConfig) -> ConstraintSet:
    names = cfg.feature_names
    items = [MinimalConstraint.state(cfg.state(c)) for c in cfg.true_states]
    for a in cfg.true_actions:
        if a not in ACTION_NAMES:
            raise InvalidConfig(f"unknown action {a!r}")
        items.append(MinimalConstraint.action(ACTION_NAMES.index(a)))
    for f in cfg.true_features:
        if f not in names:
            raise InvalidConfig(f"unknown feature {f!r}")
        items.append(MinimalConstraint.feature(names.index(f)))
    return ConstraintSet(tuple(items))


def build_gridworld(cfg: GridConfig) -> tuple[Mdp, ConstraintSet]:
    """Nominal grid MDP and the ground-truth constraint set.

    Raises:
        InvalidConfig: for malformed configs or planted constraints that
            leave no feasible trajectory from the start.
    """
    W, H = cfg.width, cfg.height
    if W < 1 or H < 1:
        raise InvalidConfig("grid must be at least 1x1")
    start, goal = cfg.state(cfg.start), cfg.state(cfg.goal)
    if start == goal:
        raise InvalidConfig("start and goal must differ")
    if not 0 <= cfg.slip < 1:
        raise InvalidConfig("slip must lie in [0, 1)")
    unknown = set(cfg.weights) - set(cfg.feature_names)
    if unknown:
        raise InvalidConfig(f"weights for unknown features: {sorted(unknown)}")
    S, A, k = W * H, len(ACTIONS), len(cfg.feature_names)
    P = np.zeros((S, A, S))
    avail = np.zeros((S, A), dtype=bool)
    phi = np.zeros((S, A, k))
    color_cells = [{cfg.state(c) for c in cells} for cells in cfg.features.values()]
    for s in range(S):
        x, y = cfg.cell(s)
        if s == goal:
            avail[s, STAY] = True
            P[s, STAY, s] = 1.0
            continue
        for a, (name, dx, dy) in enumerate(ACTIONS):
            if name == "stay":
                continue
            target = _move(cfg, x, y, dx, dy)
            if target is None:
                continue
            avail[s, a] = True
            P[s, a, cfg.state(target)] += 1.0 - cfg.slip
            if cfg.slip:
                for rx, ry in _rotations(dx, dy):
                    t2 = _move(cfg, x, y, rx, ry)
                    P[s, a, cfg.state(t2) if t2 else s] += cfg.slip / 2
            phi[s, a, 0] = cfg.diagonal_cost if dx and dy else 1.0
            for j, cells in enumerate(color_cells):
                if s in cells:
                    phi[s, a, 1 + j] = 1.0
    init = np.zeros(S)
    init[start] = 1.0
    w = np.array([cfg.weights.get(f, 0.0) for f in cfg.feature_names])
    mdp = Mdp(P, avail, init, phi, w, horizon=cfg.T, discount=cfg.discount,
              rationality=cfg.rationality, goal_states={goal},
              state_names=tuple(f"({x},{y})" for x, y in map(cfg.cell, range(S))),
              action_names=ACTION_NAMES, feature_names=cfg.feature_names,
              grid_shape=(W, H))
    truth = truth_constraints(cfg)
    try:
        true_mdp = apply_constraints(mdp, truth)
        backward_pass(true_mdp)
    except MdpError as e:
        raise InvalidConfig(f"planted constraints leave no feasible trajectory: {e}") from None
    if not true_mdp.available[start].any():
        raise InvalidConfig("planted constraints block the start state")
    return mdp, truth


@dataclass
class ExperimentReport:
    seed: int
    n_demos: int
    d_kl: float
    result: InferenceResult
    false_positive_rate: float
    final_kl: float
    demos: DemoSet


def paper_experiment(seed: int, n_demos: int = 100, d_kl: float = 0.1,
                     cfg: GridConfig | str = "paper_9x9",
                     max_iters: int | None = None) -> ExperimentReport:
    """Sample demos from the true grid, infer constraints on the nominal grid, score them."""
    cfg = load_config(cfg) if isinstance(cfg, str) else cfg
    nominal, truth = build_gridworld(cfg)
    aug = augment_features(nominal)
    true_mdp = apply_constraints(nominal, truth, aug)
    pol, _ = backward_pass(true_mdp)
    demos = sample_trajectories(true_mdp, pol, n_demos, seed)
    result = greedy_iterative_inference(nominal, demos, d_kl, max_iters=max_iters, aug=aug)
    fp = false_positive_rate(result, truth, nominal, aug)
    return ExperimentReport(seed, n_demos, d_kl, result, fp, result.final_kl, demos)


def _as_state(cfg: GridConfig, v) -> int:
    if isinstance(v, (list, tuple)):
        return cfg.state(tuple(int(c) for c in v))
    return int(v)


def _move_action(cfg: GridConfig, s0: int, s1: int, step: int, index: int) -> int:
    (x0, y0), (x1, y1) = cfg.cell(s0), cfg.cell(s1)
    d = (x1 - x0, y1 - y0)
    if d == (0, 0):
        return STAY
    for a, (name, dx, dy) in enumerate(ACTIONS):
        if (dx, dy) == d:
            return a
    raise InfeasibleDemo(index, _violation(step, "transition",
                                           f"jump from {cfg.cell(s0)} to {cfg.cell(s1)} is not a king move"))


def _violation(step, reason, detail):
    from .mdp import Violation
    return Violation(step, reason, detail)


def ingest_external_demos(path, grid: GridConfig | str) -> DemoSet:
    """Read discretized cell sequences (``mlci-demos/1``) and validate them on the grid.

    States may be state indices or ``[x, y]`` cells. Actions may be omitted
    (derived from consecutive cells) or given as indices or names. Sequences
    that reach the goal early are padded with ``stay`` up to the horizon.

    Raises:
        SchemaError: for malformed files or an empty demonstration list.
        InfeasibleDemo: naming the first offending demonstration and step.
    """
    from .io import SchemaError, read_json

    cfg = load_config(grid) if isinstance(grid, str) else grid
    mdp, _ = build_gridworld(cfg)
    doc = read_json(path)
    records = doc.get("demos") if isinstance(doc, dict) else doc
    if isinstance(doc, dict) and doc.get("schema", "mlci-demos/1") != "mlci-demos/1":
        raise SchemaError(f"expected schema mlci-demos/1, got {doc.get('schema')!r}")
    if not isinstance(records, list) or not records:
        raise SchemaError("demonstration file must contain at least one trajectory")
    goal = cfg.state(cfg.goal)
    out = []
    for i, rec in enumerate(records):
        if not isinstance(rec, dict) or "states" not in rec:
            raise SchemaError(f"demo {i}: expected an object with a 'states' list")
        try:
            states = [_as_state(cfg, v) for v in rec["states"]]
        except (InvalidConfig, TypeError, ValueError) as e:
            raise InfeasibleDemo(i, _violation(0, "range", str(e))) from None
        if "actions" in rec and rec["actions"] is not None:
            actions = [ACTION_NAMES.index(a) if isinstance(a, str) else int(a) for a in rec["actions"]]
        else:
            actions = [_move_action(cfg, states[t], states[t + 1], t, i) for t in range(len(states) - 1)]
        while len(actions) < cfg.T and states[-1] == goal:
            states.append(goal)
            actions.append(STAY)
        try:
            xi = Trajectory(states, actions)
        except MdpError as e:
            raise SchemaError(f"demo {i}: {e}") from None
        f = validate_trajectory(mdp, xi)
        if not f:
            raise InfeasibleDemo(i, f.violation)
        out.append(xi)
    return DemoSet(out)
