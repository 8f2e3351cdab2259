"""Discrete limited-memory influence diagrams with exact inference.

A diagram is a DAG of chance, decision, and utility nodes.  Chance nodes
carry conditional probability tables, utility nodes carry value tables,
decision nodes enumerate options (optionally bound to numeric bins of an
actuator, which double as the safety interval handed to the operator).

Inference is exact enumeration: the diagrams in this stack are desk
scale (about a dozen nodes, a handful of states each), so enumeration is
both fast and trivially auditable.  Expected utility follows

    EU(a) = sum_j U(a, h_j) * P(h_j | evidence)

with the optimal action chosen by maximum expected utility; ties break
to the lowest option index.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

from .errors import (
    ConfigError,
    CptRowNotNormalized,
    CyclicGraph,
    MissingTable,
    UnknownActuator,
    UnknownHypothesis,
    ZeroProbabilityEvidence,
)

_PROB_TOL = 1e-9


@dataclass(frozen=True)
class ChanceNode:
    name: str
    states: tuple
    parents: tuple = ()
    cpt: dict = None  # parent-state tuple -> tuple of probabilities


@dataclass(frozen=True)
class DecisionNode:
    name: str
    options: tuple
    bins: tuple = None       # per-option (low, high) numeric bounds
    actuator: str = None


@dataclass(frozen=True)
class UtilityNode:
    name: str
    parents: tuple = ()
    table: dict = None       # parent-state tuple -> float


@dataclass(frozen=True)
class ValueInterval:
    low: float
    high: float

    def __post_init__(self):
        if self.low > self.high:
            raise ConfigError(f"interval low {self.low} > high {self.high}")

    def contains(self, value: float) -> bool:
        return self.low <= value <= self.high


class InfluenceDiagram:
    """Node container with cached topological order over chance nodes."""

    def __init__(self, nodes):
        self.nodes = {n.name: n for n in nodes}
        if len(self.nodes) != len(nodes):
            raise ConfigError("duplicate node names")
        self.chance = {n.name: n for n in nodes if isinstance(n, ChanceNode)}
        self.decisions = {n.name: n for n in nodes if isinstance(n, DecisionNode)}
        self.utilities = {n.name: n for n in nodes if isinstance(n, UtilityNode)}
        self._topo = None

    def topo_chance(self):
        if self._topo is None:
            self._topo = _toposort(self)
        return [n for n in self._topo if n in self.chance]

    def states_of(self, name):
        node = self.nodes[name]
        if isinstance(node, ChanceNode):
            return node.states
        if isinstance(node, DecisionNode):
            return node.options
        raise ConfigError(f"{name} is a utility node; it has no states")


def _toposort(d: InfluenceDiagram):
    parents = {
        name: tuple(getattr(node, "parents", ()) or ())
        for name, node in d.nodes.items()
    }
    order, mark = [], {}

    def visit(name):
        state = mark.get(name)
        if state == "done":
            return
        if state == "visiting":
            raise CyclicGraph(f"cycle through node {name!r}")
        mark[name] = "visiting"
        for p in parents.get(name, ()):
            if p not in d.nodes:
                raise ConfigError(f"unknown parent {p!r} of {name!r}")
            visit(p)
        mark[name] = "done"
        order.append(name)

    for name in d.nodes:
        visit(name)
    return order


def validate_diagram(d: InfluenceDiagram) -> bool:
    """Check all structural invariants; raises on the first violation class.

    Collects every CPT-row violation for the offending node rather than
    stopping at the first row.
    """
    _toposort(d)  # raises CyclicGraph
    for node in d.chance.values():
        if not node.states:
            raise ConfigError(f"chance node {node.name!r} has no states")
        if node.cpt is None:
            raise MissingTable(f"chance node {node.name!r} has no CPT")
        expected_rows = list(_parent_assignments(d, node.parents))
        bad_rows = []
        for row_key in expected_rows:
            if row_key not in node.cpt:
                raise MissingTable(
                    f"node {node.name!r} missing CPT row {row_key!r}"
                )
            dist = node.cpt[row_key]
            if len(dist) != len(node.states):
                raise MissingTable(
                    f"node {node.name!r} row {row_key!r} has wrong arity"
                )
            if abs(sum(dist) - 1.0) > _PROB_TOL or any(p < 0 for p in dist):
                bad_rows.append(row_key)
        if bad_rows:
            raise CptRowNotNormalized(node.name, bad_rows[0])
    for node in d.decisions.values():
        if not node.options:
            raise ConfigError(f"decision node {node.name!r} has no options")
        if node.bins is not None and len(node.bins) != len(node.options):
            raise ConfigError(f"decision node {node.name!r} bins/options mismatch")
    for node in d.utilities.values():
        if node.table is None:
            raise MissingTable(f"utility node {node.name!r} has no table")
        for row_key in _parent_assignments(d, node.parents):
            if row_key not in node.table:
                raise MissingTable(
                    f"utility node {node.name!r} missing entry {row_key!r}"
                )
            value = node.table[row_key]
            if not _finite(value):
                raise MissingTable(
                    f"utility node {node.name!r} entry {row_key!r} not finite"
                )
    return True


def _finite(x):
    return isinstance(x, (int, float)) and x == x and abs(x) != float("inf")


def _parent_assignments(d: InfluenceDiagram, parents):
    spaces = [d.states_of(p) for p in parents]
    if not spaces:
        yield ()
        return
    yield from itertools.product(*spaces)


def _enumerate_joint(d, fixed):
    """Depth-first enumeration over unfixed chance nodes.

    Yields (assignment, probability) for assignments consistent with
    ``fixed`` (evidence plus decision choices), probability being the
    product of CPT entries of chance nodes only.
    """
    order = d.topo_chance()

    def rec(idx, assignment, weight):
        if weight == 0.0:
            return
        if idx == len(order):
            yield dict(assignment), weight
            return
        name = order[idx]
        node = d.chance[name]
        row = tuple(assignment[p] for p in node.parents)
        dist = node.cpt[row]
        if name in fixed:
            s = fixed[name]
            p = dist[node.states.index(s)]
            assignment[name] = s
            yield from rec(idx + 1, assignment, weight * p)
            del assignment[name]
        else:
            for s, p in zip(node.states, dist):
                assignment[name] = s
                yield from rec(idx + 1, assignment, weight * p)
                del assignment[name]

    base = {k: v for k, v in fixed.items() if k in d.decisions}
    yield from rec(0, dict(base), 1.0)


def _check_fixed(d, fixed):
    for name, state in fixed.items():
        if name not in d.nodes:
            raise ConfigError(f"evidence names unknown node {name!r}")
        if state not in d.states_of(name):
            raise ConfigError(f"state {state!r} not in node {name!r}")
    # Chance nodes conditioned on decisions need those decisions fixed.
    for node in d.chance.values():
        for p in node.parents:
            if p in d.decisions and p not in fixed:
                raise ConfigError(
                    f"chance node {node.name!r} depends on unfixed decision {p!r}"
                )


def posterior(d: InfluenceDiagram, evidence: dict, query: str,
              decisions: dict = None) -> dict:
    """Exact P(query | evidence) by enumeration.

    ``decisions`` fixes decision nodes that chance nodes condition on.
    """
    if query not in d.chance:
        raise ConfigError(f"query {query!r} is not a chance node")
    fixed = dict(evidence)
    if decisions:
        fixed.update(decisions)
    _check_fixed(d, fixed)
    weights = {s: 0.0 for s in d.chance[query].states}
    total = 0.0
    for assignment, w in _enumerate_joint(d, fixed):
        weights[assignment[query]] += w
        total += w
    if total <= 0.0:
        raise ZeroProbabilityEvidence(f"P(evidence) = 0 for {evidence!r}")
    return {s: w / total for s, w in weights.items()}


def expected_utility(d: InfluenceDiagram, action: dict, evidence: dict) -> float:
    """EU(action) = sum over hypotheses of total utility times posterior."""
    for name in action:
        if name not in d.decisions:
            raise ConfigError(f"{name!r} is not a decision node")
    fixed = dict(evidence)
    fixed.update(action)
    _check_fixed(d, fixed)
    for name in d.decisions:
        if name not in fixed:
            raise ConfigError(f"decision node {name!r} not assigned")
    num = 0.0
    total = 0.0
    for assignment, w in _enumerate_joint(d, fixed):
        u = 0.0
        for util in d.utilities.values():
            row = tuple(assignment[p] for p in util.parents)
            u += util.table[row]
        num += w * u
        total += w
    if total <= 0.0:
        raise ZeroProbabilityEvidence(f"P(evidence) = 0 for {evidence!r}")
    return num / total


def best_action(d: InfluenceDiagram, evidence: dict):
    """Maximum-expected-utility joint decision; ties break to the first
    (lowest-index) option combination."""
    names = list(d.decisions.keys())
    if not names or any(not d.decisions[n].options for n in names):
        raise ConfigError("no decision options to optimize")
    best = None
    best_eu = None
    for combo in itertools.product(*(d.decisions[n].options for n in names)):
        action = dict(zip(names, combo))
        eu = expected_utility(d, action, evidence)
        if best_eu is None or eu > best_eu:
            best, best_eu = action, eu
    return best, best_eu


def unroll(template: InfluenceDiagram, horizon: int, inter_slice=()):
    """Replicate the template across ``horizon`` time slices.

    Slice-0 nodes keep the template's priors; in later slices, nodes
    named by an InterSliceLink take their listed source nodes from the
    previous slice (prepended to their intra-slice parents) and use the
    link's transition CPT.  horizon=1 returns a copy of the template.
    """
    if horizon < 1:
        raise ConfigError("horizon must be >= 1")
    links = {link.dst: link for link in inter_slice}
    for link in inter_slice:
        if link.dst not in template.chance:
            raise ConfigError(f"inter-slice dst {link.dst!r} not a chance node")
        for s in link.srcs:
            if s not in template.nodes:
                raise ConfigError(f"inter-slice src {s!r} unknown")

    def slice_name(name, k):
        return f"{name}@{k}"

    out = []
    for k in range(horizon):
        for name, node in template.nodes.items():
            if isinstance(node, ChanceNode):
                link = links.get(name)
                if k > 0 and link is not None:
                    parents = tuple(slice_name(s, k - 1) for s in link.srcs)
                    parents += tuple(slice_name(p, k) for p in node.parents)
                    cpt = link.cpt
                else:
                    parents = tuple(slice_name(p, k) for p in node.parents)
                    cpt = node.cpt
                out.append(ChanceNode(slice_name(name, k), node.states, parents, cpt))
            elif isinstance(node, DecisionNode):
                out.append(DecisionNode(slice_name(name, k), node.options,
                                        node.bins, node.actuator))
            else:
                parents = tuple(slice_name(p, k) for p in node.parents)
                out.append(UtilityNode(slice_name(name, k), parents, node.table))
    unrolled = InfluenceDiagram(out)
    validate_diagram(unrolled)
    return unrolled


@dataclass(frozen=True)
class InterSliceLink:
    dst: str
    srcs: tuple
    cpt: dict  # (src states..., intra-parent states...) -> distribution


# ---------------------------------------------------------------------------
# Abnormality detection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AbnormalityFinding:
    hypothesis: str
    posterior: float
    time: float


class AbnormalityMonitor:
    """Debounced threshold watch on the failure-hypothesis posterior.

    Fires when the max-posterior non-normal hypothesis stays above the
    trigger threshold for ``debounce`` consecutive evaluations; the
    active finding releases when that hypothesis' posterior stays below
    the release threshold for the same number of evaluations.
    """

    def __init__(self, diagram: InfluenceDiagram, hypothesis_node: str,
                 normal_state: str = "none", trigger: float = 0.8,
                 debounce: int = 2, release: float = 0.5,
                 release_debounce: int = 30, posterior_fn=None):
        if hypothesis_node not in diagram.chance:
            raise ConfigError(f"hypothesis node {hypothesis_node!r} missing")
        self.diagram = diagram
        self.hypothesis_node = hypothesis_node
        self.normal_state = normal_state
        self.trigger = trigger
        self.debounce = debounce
        self.release = release
        # Releasing much slower than triggering keeps the trailing
        # procedure steps (trim actions) visible while the plant settles.
        self.release_debounce = release_debounce
        self._posterior_fn = posterior_fn or (
            lambda evidence: posterior(diagram, evidence, hypothesis_node)
        )
        self.active: AbnormalityFinding | None = None
        self._above = {}
        self._below = 0

    def update(self, evidence: dict, t: float = 0.0):
        dist = self._posterior_fn(evidence)
        abnormal = {s: p for s, p in dist.items() if s != self.normal_state}
        s_star = max(abnormal, key=abnormal.get)  # first max in state order
        p_star = abnormal[s_star]

        if self.active is None:
            if p_star > self.trigger:
                self._above[s_star] = self._above.get(s_star, 0) + 1
                for other in list(self._above):
                    if other != s_star:
                        del self._above[other]
            else:
                self._above.clear()
            if self._above.get(s_star, 0) >= self.debounce:
                self.active = AbnormalityFinding(s_star, p_star, t)
                self._above.clear()
        else:
            current = dist.get(self.active.hypothesis, 0.0)
            if current < self.release:
                self._below += 1
            else:
                self._below = 0
            if self._below >= self.release_debounce:
                self.active = None
                self._below = 0
            elif current >= self.release:
                self.active = AbnormalityFinding(
                    self.active.hypothesis, current, self.active.time
                )
        return self.active

    def reset(self):
        self.active = None
        self._above.clear()
        self._below = 0


def detect_abnormality(diagram: InfluenceDiagram, evidence_stream,
                       hypothesis_node: str, normal_state: str = "none",
                       trigger: float = 0.8, debounce: int = 2):
    """Replay an evidence stream; return the first finding or None."""
    monitor = AbnormalityMonitor(diagram, hypothesis_node, normal_state,
                                 trigger, debounce)
    for i, evidence in enumerate(evidence_stream):
        finding = monitor.update(evidence, t=float(i))
        if finding is not None:
            return finding
    return None


# ---------------------------------------------------------------------------
# Procedures and interval recommendation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProcedureStep:
    text: str
    target_actuator: str = None
    expected_interval: tuple = None   # (low, high) or None
    require: dict = field(default_factory=dict)  # node -> allowed states
    exclude: dict = field(default_factory=dict)  # node -> excluded states

    def applicable(self, evidence: dict) -> bool:
        for node, states in self.exclude.items():
            if evidence.get(node) in set(states):
                return False
        for node, allowed in self.require.items():
            if node in evidence and evidence[node] not in set(allowed):
                return False
        return True


class ProcedureLibrary:
    """Ordered intervention steps per failure hypothesis."""

    def __init__(self, entries: dict):
        self.entries = {k: tuple(v) for k, v in entries.items()}

    def hypotheses(self):
        return tuple(self.entries.keys())

    def steps_for(self, hypothesis: str):
        if hypothesis not in self.entries:
            raise UnknownHypothesis(f"no procedure for {hypothesis!r}")
        return self.entries[hypothesis]


def prune_procedure(lib: ProcedureLibrary, s_star: str, evidence: dict):
    """Steps applicable under the current evidence, original order kept."""
    return [step for step in lib.steps_for(s_star) if step.applicable(evidence)]


def recommend_interval(d: InfluenceDiagram, s_star: str, evidence: dict,
                       target_actuator: str) -> ValueInterval:
    """Discretization-bin bounds of the MEU choice for one actuator."""
    node = next(
        (n for n in d.decisions.values() if n.actuator == target_actuator),
        None,
    )
    if node is None or node.bins is None:
        raise UnknownActuator(
            f"no binned decision node for actuator {target_actuator!r}"
        )
    action, _ = best_action(d, evidence)
    idx = node.options.index(action[node.name])
    low, high = node.bins[idx]
    return ValueInterval(float(low), float(high))


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def _key_to_str(key: tuple) -> str:
    return "|".join(key)


def _str_to_key(s: str) -> tuple:
    return tuple(s.split("|")) if s else ()


def diagram_to_dict(d: InfluenceDiagram, hypothesis_node=None,
                    normal_state=None) -> dict:
    nodes = []
    for name, node in d.nodes.items():
        if isinstance(node, ChanceNode):
            nodes.append({
                "name": name, "kind": "chance",
                "states": list(node.states), "parents": list(node.parents),
                "cpt": {_key_to_str(k): list(v) for k, v in node.cpt.items()},
            })
        elif isinstance(node, DecisionNode):
            nodes.append({
                "name": name, "kind": "decision",
                "options": list(node.options),
                "bins": [list(b) for b in node.bins] if node.bins else None,
                "actuator": node.actuator,
            })
        else:
            nodes.append({
                "name": name, "kind": "utility",
                "parents": list(node.parents),
                "table": {_key_to_str(k): v for k, v in node.table.items()},
            })
    payload = {"version": 1, "nodes": nodes}
    if hypothesis_node:
        payload["hypothesis_node"] = hypothesis_node
    if normal_state:
        payload["normal_state"] = normal_state
    return payload


def diagram_from_dict(payload: dict):
    nodes = []
    for spec in payload["nodes"]:
        kind = spec["kind"]
        if kind == "chance":
            nodes.append(ChanceNode(
                spec["name"], tuple(spec["states"]),
                tuple(spec.get("parents", ())),
                {_str_to_key(k): tuple(v) for k, v in spec["cpt"].items()},
            ))
        elif kind == "decision":
            bins = spec.get("bins")
            nodes.append(DecisionNode(
                spec["name"], tuple(spec["options"]),
                tuple(tuple(b) for b in bins) if bins else None,
                spec.get("actuator"),
            ))
        elif kind == "utility":
            nodes.append(UtilityNode(
                spec["name"], tuple(spec.get("parents", ())),
                {_str_to_key(k): float(v) for k, v in spec["table"].items()},
            ))
        else:
            raise ConfigError(f"unknown node kind {kind!r}")
    d = InfluenceDiagram(nodes)
    validate_diagram(d)
    meta = {
        "hypothesis_node": payload.get("hypothesis_node"),
        "normal_state": payload.get("normal_state", "none"),
    }
    return d, meta


def load_diagram(path):
    with open(path, "r", encoding="utf-8") as fh:
        return diagram_from_dict(json.load(fh))


def save_diagram(d, path, hypothesis_node=None, normal_state=None):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(diagram_to_dict(d, hypothesis_node, normal_state), fh, indent=2)
        fh.write("\n")


def load_procedures(path) -> ProcedureLibrary:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    entries = {}
    for hypothesis, steps in payload.items():
        entries[hypothesis] = [
            ProcedureStep(
                text=s["text"],
                target_actuator=s.get("target_actuator"),
                expected_interval=tuple(s["expected_interval"])
                if s.get("expected_interval") else None,
                require={k: tuple(v) for k, v in s.get("require", {}).items()},
                exclude={k: tuple(v) for k, v in s.get("exclude", {}).items()},
            )
            for s in steps
        ]
    return ProcedureLibrary(entries)
