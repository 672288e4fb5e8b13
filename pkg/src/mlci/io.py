"""Versioned JSON schemas, run manifests and atomic output files.

Schemas: ``mlci-mdp/1``, ``mlci-demos/1``, ``mlci-policy/1``,
``mlci-result/1``, ``mlci-constraints/1``, ``mlci-accrual/1``,
``mlci-weights/1`` (see ``docs/formats.md``).
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .accrual import AccrualHistory
from .inference import InferenceResult, IterationRecord
from .maxent import DemoSet, PartitionValue, TimeVaryingPolicy
from .mdp import (AugmentedFeatureMap, ConstraintKind, ConstraintSet, InvalidMdp, Mdp, MdpError,
                  MinimalConstraint, Trajectory)

MDP_SCHEMA = "mlci-mdp/1"
DEMOS_SCHEMA = "mlci-demos/1"
POLICY_SCHEMA = "mlci-policy/1"
RESULT_SCHEMA = "mlci-result/1"
CONSTRAINTS_SCHEMA = "mlci-constraints/1"
ACCRUAL_SCHEMA = "mlci-accrual/1"
WEIGHTS_SCHEMA = "mlci-weights/1"
GRID_SCHEMA = "mlci-grid/1"


class SchemaError(MdpError):
    pass


def dumps(doc) -> str:
    return json.dumps(doc, indent=1, allow_nan=False) + "\n"


def read_json(path) -> Any:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, UnicodeDecodeError) as e:
        raise SchemaError(f"cannot read {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path} is not valid JSON: {e}") from None


def write_atomic(path, text: str):
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def file_digest(path) -> str:
    return "sha256:" + hashlib.sha256(Path(path).read_bytes()).hexdigest()


def manifest(command: str, schemas: list[str], inputs: dict[str, str | None], seed: int | None,
             parameters: dict, stop_reason: str | None = None) -> dict:
    """Run manifest embedded in every output; contains no timing so reruns are byte-identical."""
    return {
        "command": command,
        "schemas": sorted(schemas),
        "inputs": {k: (file_digest(v) if v and Path(v).is_file() else v) for k, v in sorted(inputs.items())},
        "seed": seed,
        "parameters": parameters,
        "tool_version": __version__,
        "stop_reason": stop_reason,
    }


def _expect(doc, schema: str):
    if not isinstance(doc, dict):
        raise SchemaError(f"expected a JSON object with schema {schema!r}")
    if doc.get("schema") != schema:
        raise SchemaError(f"expected schema {schema!r}, got {doc.get('schema')!r}")


def _field(doc, key, kind=None):
    if key not in doc:
        raise SchemaError(f"missing field {key!r}")
    v = doc[key]
    if kind is not None and not isinstance(v, kind):
        raise SchemaError(f"field {key!r} has the wrong type")
    return v


def _floats(a) -> list:
    return np.asarray(a, dtype=float).tolist()


# ---------------------------------------------------------------------------
# MDP
# ---------------------------------------------------------------------------


def mdp_to_json(mdp: Mdp) -> dict:
    avail = mdp.available
    transitions = []
    for s, a in zip(*np.nonzero(avail)):
        row = mdp.transitions[s, a]
        nz = np.flatnonzero(row)
        transitions.append({"s": int(s), "a": int(a),
                            "successors": [{"next": int(n), "p": float(row[n])} for n in nz]})
    doc = {
        "schema": MDP_SCHEMA,
        "n_states": mdp.n_states,
        "n_actions": mdp.n_actions,
        "available": [np.flatnonzero(avail[s]).tolist() for s in range(mdp.n_states)],
        "transitions": transitions,
        "initial": _floats(mdp.initial),
        "features": _floats(mdp.features),
        "reward_weights": _floats(mdp.reward_weights),
        "reward_table": None if mdp.reward_table is None else _floats(mdp.reward_table),
        "horizon": mdp.horizon,
        "discount": mdp.discount,
        "rationality": mdp.rationality,
        "goal_states": sorted(mdp.goal_states),
        "state_names": None if mdp.state_names is None else list(mdp.state_names),
        "action_names": None if mdp.action_names is None else list(mdp.action_names),
        "feature_names": None if mdp.feature_names is None else list(mdp.feature_names),
        "grid_shape": None if mdp.grid_shape is None else list(mdp.grid_shape),
    }
    return doc


def mdp_from_json(doc) -> Mdp:
    _expect(doc, MDP_SCHEMA)
    try:
        S = int(_field(doc, "n_states"))
        A = int(_field(doc, "n_actions"))
        avail = np.zeros((S, A), dtype=bool)
        for s, acts in enumerate(_field(doc, "available", list)):
            avail[s, acts] = True
        P = np.zeros((S, A, S))
        for tr in _field(doc, "transitions", list):
            for succ in tr["successors"]:
                P[tr["s"], tr["a"], succ["next"]] = succ["p"]
        opt = lambda k: doc.get(k)
        names = lambda k: None if opt(k) is None else tuple(opt(k))
        return Mdp(
            transitions=P, available=avail,
            initial=np.asarray(_field(doc, "initial", list), dtype=float),
            features=np.asarray(_field(doc, "features", list), dtype=float).reshape(S, A, -1),
            reward_weights=np.asarray(_field(doc, "reward_weights", list), dtype=float),
            horizon=int(_field(doc, "horizon")),
            discount=float(doc.get("discount", 1.0)),
            rationality=float(doc.get("rationality", 1.0)),
            reward_table=None if opt("reward_table") is None else np.asarray(opt("reward_table")),
            goal_states=frozenset(doc.get("goal_states") or ()),
            state_names=names("state_names"), action_names=names("action_names"),
            feature_names=names("feature_names"),
            grid_shape=None if opt("grid_shape") is None else tuple(opt("grid_shape")),
        )
    except SchemaError:
        raise
    except (InvalidMdp, KeyError, IndexError, TypeError, ValueError) as e:
        raise SchemaError(f"invalid MDP document: {e}") from None


def load_mdp(source) -> Mdp:
    """Load an MDP from an ``mlci-mdp/1`` file, a grid config file or a shipped config name."""
    from .gridworld import SHIPPED_CONFIGS, GridConfig, InvalidConfig, build_gridworld, load_config

    if str(source) in SHIPPED_CONFIGS:
        return build_gridworld(load_config(source))[0]
    doc = read_json(source)
    if isinstance(doc, dict) and doc.get("schema") == GRID_SCHEMA:
        try:
            return build_gridworld(GridConfig.from_dict(doc))[0]
        except InvalidConfig as e:
            raise SchemaError(str(e)) from None
    return mdp_from_json(doc)


# ---------------------------------------------------------------------------
# Demonstrations
# ---------------------------------------------------------------------------


def demos_to_json(demos: DemoSet, manifest_doc: dict | None = None) -> dict:
    doc = {"schema": DEMOS_SCHEMA,
           "demos": [{"states": list(xi.states), "actions": list(xi.actions)} for xi in demos]}
    if manifest_doc is not None:
        doc["manifest"] = manifest_doc
    return doc


def demos_from_json(doc) -> DemoSet:
    records = doc.get("demos") if isinstance(doc, dict) else doc
    if isinstance(doc, dict):
        _expect(doc, DEMOS_SCHEMA)
    if not isinstance(records, list) or not records:
        raise SchemaError("demonstration file must contain at least one trajectory")
    out = []
    for i, rec in enumerate(records):
        try:
            out.append(Trajectory(tuple(rec["states"]), tuple(rec["actions"])))
        except (KeyError, TypeError, ValueError, MdpError) as e:
            raise SchemaError(f"demo {i}: {e}") from None
    return DemoSet(out)


def load_demos(path) -> DemoSet:
    return demos_from_json(read_json(path))


# ---------------------------------------------------------------------------
# Constraints
# ---------------------------------------------------------------------------


def constraint_to_json(c: MinimalConstraint, mdp: Mdp | None = None) -> dict:
    doc = {"kind": c.kind.name.lower(), "index": c.index}
    if mdp is not None:
        names = {ConstraintKind.STATE: mdp.state_names, ConstraintKind.ACTION: mdp.action_names,
                 ConstraintKind.FEATURE: mdp.feature_names}[c.kind]
        if names is not None:
            doc["name"] = names[c.index]
    return doc


def constraint_from_json(doc) -> MinimalConstraint:
    try:
        return MinimalConstraint(ConstraintKind[doc["kind"].upper()], int(doc["index"]))
    except (KeyError, TypeError, ValueError, AttributeError) as e:
        raise SchemaError(f"bad constraint entry {doc!r}: {e}") from None


def constraints_to_json(c: ConstraintSet, mdp: Mdp | None = None) -> dict:
    return {"schema": CONSTRAINTS_SCHEMA, "constraints": [constraint_to_json(x, mdp) for x in c]}


def load_constraints(source) -> ConstraintSet:
    """Constraint set from an ``mlci-constraints/1`` file or a grid config's planted truth."""
    from .gridworld import SHIPPED_CONFIGS, GridConfig, load_config, truth_constraints

    if str(source) in SHIPPED_CONFIGS:
        return truth_constraints(load_config(source))
    doc = read_json(source)
    if isinstance(doc, dict) and doc.get("schema") == GRID_SCHEMA:
        return truth_constraints(GridConfig.from_dict(doc))
    _expect(doc, CONSTRAINTS_SCHEMA)
    return ConstraintSet(tuple(constraint_from_json(x) for x in _field(doc, "constraints", list)))


# ---------------------------------------------------------------------------
# Policy, accrual, result, weights
# ---------------------------------------------------------------------------


def policy_to_json(pol: TimeVaryingPolicy, z: PartitionValue) -> dict:
    return {"schema": POLICY_SCHEMA, "horizon": pol.horizon, "log_Z": z.log_Z,
            "log_state_values": [[v if np.isfinite(v) else None for v in row]
                                 for row in z.log_state_values.tolist()],
            "policy": _floats(pol.probs)}


def accrual_to_json(hist: AccrualHistory, aug: AugmentedFeatureMap,
                    marked: list[MinimalConstraint] = (), manifest_doc: dict | None = None) -> dict:
    doc = {"schema": ACCRUAL_SCHEMA,
           "layout": {"n_native": aug.n_native, "n_states": aug.n_states, "n_actions": aug.n_actions},
           "phi": _floats(hist.phi), "visitation": _floats(hist.visitation),
           "marked": [constraint_to_json(c) for c in marked]}
    if manifest_doc is not None:
        doc["manifest"] = manifest_doc
    return doc


def accrual_from_json(doc) -> tuple[np.ndarray, dict, list[MinimalConstraint]]:
    """Return ``(final, layout, marked)`` from an accrual document."""
    _expect(doc, ACCRUAL_SCHEMA)
    try:
        phi = np.asarray(_field(doc, "phi", list), dtype=float)
        layout = _field(doc, "layout", dict)
        marked = [constraint_from_json(c) for c in doc.get("marked", [])]
        final = phi[:, -1] if phi.ndim == 2 else phi
    except (TypeError, ValueError, IndexError) as e:
        raise SchemaError(f"invalid accrual document: {e}") from None
    return final, layout, marked


def _record_to_json(rec: IterationRecord, mdp: Mdp | None) -> dict:
    return {"iteration": rec.iteration, "constraint": constraint_to_json(rec.constraint, mdp),
            "eliminated_mass": rec.eliminated_mass, "kl_before": rec.kl_before,
            "kl_after": rec.kl_after, "delta_kl": rec.delta_kl, "delta_log_z": rec.delta_log_z}


def _record_from_json(d) -> IterationRecord:
    return IterationRecord(d["iteration"], constraint_from_json(d["constraint"]), d["eliminated_mass"],
                           d["kl_before"], d["kl_after"], d["delta_kl"], d["delta_log_z"])


def result_to_json(result: InferenceResult, mdp: Mdp | None = None,
                   manifest_doc: dict | None = None) -> dict:
    doc = {
        "schema": RESULT_SCHEMA,
        "selected": [constraint_to_json(c, mdp) for c in result.selected],
        "iterations": [_record_to_json(r, mdp) for r in result.iterations],
        "rejected": None if result.rejected is None else _record_to_json(result.rejected, mdp),
        "skipped": [constraint_to_json(c, mdp) for c in result.skipped],
        "stop_reason": result.stop_reason,
        "initial_kl": result.initial_kl,
        "final_kl": result.final_kl,
    }
    if manifest_doc is not None:
        doc["manifest"] = manifest_doc
    return doc


def result_from_json(doc) -> InferenceResult:
    _expect(doc, RESULT_SCHEMA)
    try:
        return InferenceResult(
            selected=[constraint_from_json(c) for c in _field(doc, "selected", list)],
            iterations=[_record_from_json(r) for r in _field(doc, "iterations", list)],
            stop_reason=_field(doc, "stop_reason", str),
            initial_kl=float(_field(doc, "initial_kl")),
            final_kl=float(_field(doc, "final_kl")),
            rejected=None if doc.get("rejected") is None else _record_from_json(doc["rejected"]),
            skipped=[constraint_from_json(c) for c in doc.get("skipped", [])],
        )
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"invalid result document: {e}") from None


def load_result(path) -> tuple[InferenceResult, dict]:
    doc = read_json(path)
    return result_from_json(doc), doc


def weights_to_json(weights, history: list[dict], mdp: Mdp | None = None,
                    manifest_doc: dict | None = None) -> dict:
    doc = {"schema": WEIGHTS_SCHEMA, "weights": _floats(weights),
           "feature_names": None if mdp is None or mdp.feature_names is None else list(mdp.feature_names),
           "history": history}
    if manifest_doc is not None:
        doc["manifest"] = manifest_doc
    return doc
