"""Kuhn (extensive-form) tree of the attacker/defender game and its solution."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Mapping, NamedTuple

from ..errors import MalformedTreeError, MissingStageError
from .normal_form import NormalForm2x2, pure_nash
from .utility import ATTACKS, DEFENSES, GameConfig, PayoffPair, utility_from_accuracy

ATTACKER, DEFENDER, LEAF = "attacker", "defender", "leaf"


@dataclass(frozen=True)
class AttackStages:
    """Accuracies observed for one attack: after the attack and after each retrain round."""

    post_attack: float
    retrain: tuple[float, ...]
    clean: float | None = None

    @property
    def final_retrain(self) -> float:
        return self.retrain[-1]


@dataclass
class KuhnNode:
    id: str
    kind: str
    children: list[tuple[str, KuhnNode]] = field(default_factory=list)
    info_set: str | None = None
    payoff: PayoffPair | None = None

    @property
    def is_leaf(self) -> bool:
        return self.kind == LEAF

    @property
    def actions(self) -> tuple[str, ...]:
        return tuple(a for a, _ in self.children)

    def iter_nodes(self) -> Iterator[KuhnNode]:
        yield self
        for _, child in self.children:
            yield from child.iter_nodes()

    def leaves(self) -> list[KuhnNode]:
        return [n for n in self.iter_nodes() if n.is_leaf]

    def to_dict(self) -> dict:
        d = {"id": self.id, "kind": self.kind}
        if self.is_leaf:
            d["payoff"] = [self.payoff.attacker, self.payoff.defender]
        else:
            d["info_set"] = self.info_set
            d["children"] = [{"action": a, "node": c.to_dict()} for a, c in self.children]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> KuhnNode:
        if d["kind"] == LEAF:
            return cls(d["id"], LEAF, payoff=PayoffPair(*d["payoff"]))
        return cls(d["id"], d["kind"], info_set=d.get("info_set"),
                   children=[(c["action"], cls.from_dict(c["node"])) for c in d["children"]])


def leaf(node_id: str, payoff: PayoffPair) -> KuhnNode:
    return KuhnNode(node_id, LEAF, payoff=payoff)


def decision(node_id: str, kind: str, children, info_set: str | None = None) -> KuhnNode:
    return KuhnNode(node_id, kind, list(children), info_set or node_id)


def build_kuhn_tree(stage_data: Mapping[str, AttackStages], cfg: GameConfig = GameConfig(),
                    perfect_information: bool = False) -> KuhnNode:
    """Attacker picks an attack; the defender, not seeing which, keeps the
    original model or retrains.  Leaves hold the utilities of the accuracy
    after the attack (Original) or after the final retraining round (Retrain).
    """
    missing = [a for a in ATTACKS if a not in stage_data]
    if missing:
        raise MissingStageError(f"no stage data for attacks {missing}")
    subtrees = []
    for attack in ATTACKS:
        stages = stage_data[attack]
        if stages.post_attack is None or not stages.retrain:
            raise MissingStageError(f"{attack}: need post-attack and at least one retrain accuracy")
        node_id = f"D:{attack}"
        info_set = node_id if perfect_information else "D"
        accuracies = {"Original": stages.post_attack, "Retrain": stages.final_retrain}
        children = [(d, leaf(f"{attack}/{d}", utility_from_accuracy(accuracies[d], cfg)))
                    for d in DEFENSES]
        subtrees.append((attack, decision(node_id, DEFENDER, children, info_set)))
    return decision("A", ATTACKER, subtrees)


def validate_tree(tree: KuhnNode) -> None:
    seen: set[int] = set()
    ids: set[str] = set()
    info_sets: dict[str, tuple[str, tuple[str, ...]]] = {}

    def visit(node: KuhnNode) -> None:
        if id(node) in seen:
            raise MalformedTreeError(f"node {node.id!r} reached twice (cycle or shared subtree)")
        seen.add(id(node))
        if node.id in ids:
            raise MalformedTreeError(f"duplicate node id {node.id!r}")
        ids.add(node.id)
        if node.is_leaf:
            if node.payoff is None or node.children:
                raise MalformedTreeError(f"leaf {node.id!r} needs a payoff and no children")
            return
        if node.kind not in (ATTACKER, DEFENDER):
            raise MalformedTreeError(f"node {node.id!r} has unknown kind {node.kind!r}")
        if len(node.children) < 2:
            raise MalformedTreeError(f"decision node {node.id!r} has fewer than two children")
        key = node.info_set or node.id
        signature = (node.kind, node.actions)
        if info_sets.setdefault(key, signature) != signature:
            raise MalformedTreeError(f"information set {key!r} mixes players or action sets")
        for _, child in node.children:
            visit(child)

    visit(tree)


class Solution(NamedTuple):
    value: PayoffPair
    path: dict[str, str]


def _mover_value(kind: str, payoff: PayoffPair) -> float:
    return payoff.attacker if kind == ATTACKER else payoff.defender


def _solve_perfect(node: KuhnNode, path: dict[str, str]) -> PayoffPair:
    if node.is_leaf:
        return node.payoff
    best_action, best_value = None, None
    for action, child in node.children:
        value = _solve_perfect(child, path)
        if best_value is None or _mover_value(node.kind, value) > _mover_value(node.kind, best_value):
            best_action, best_value = action, value
    path[node.id] = best_action
    return best_value


def _info_set_groups(tree: KuhnNode) -> dict[str, list[KuhnNode]]:
    groups: dict[str, list[KuhnNode]] = {}
    for node in tree.iter_nodes():
        if not node.is_leaf:
            groups.setdefault(node.info_set or node.id, []).append(node)
    return groups


def to_normal_form(tree: KuhnNode) -> NormalForm2x2:
    """Bimatrix of a two-level tree: attacker at the root, defender below, leaves last."""
    if tree.kind != ATTACKER:
        raise MalformedTreeError("normal-form reduction needs the attacker at the root")
    subs = [child for _, child in tree.children]
    if any(s.is_leaf or s.kind != DEFENDER for s in subs):
        raise MalformedTreeError("every attacker action must lead to a defender decision")
    if any(not c.is_leaf for s in subs for _, c in s.children):
        raise MalformedTreeError("normal-form reduction supports two-level trees only")
    cols = subs[0].actions
    if any(s.actions != cols for s in subs):
        raise MalformedTreeError("defender nodes offer different actions")
    cells = tuple(tuple(c.payoff for _, c in s.children) for s in subs)
    return NormalForm2x2(cells, tree.actions, cols)


def backward_induction(tree: KuhnNode) -> Solution:
    """Solve bottom-up.

    Singleton information sets: each mover takes the child best for itself,
    earliest action on ties.  A defender information set spanning several
    nodes (the attack is not observed) is solved through the bimatrix form:
    the first pure Nash equilibrium in row-major order is returned.  If the
    bimatrix has none, the leader-follower solution is returned instead.
    """
    validate_tree(tree)
    path: dict[str, str] = {}
    if tree.is_leaf:
        return Solution(tree.payoff, path)
    shared = [nodes for nodes in _info_set_groups(tree).values() if len(nodes) > 1]
    if not shared:
        return Solution(_solve_perfect(tree, path), path)
    nf = to_normal_form(tree)
    if len(shared) != 1 or len(shared[0]) != len(tree.children):
        raise MalformedTreeError("only a single information set covering all defender nodes "
                                 "is supported for imperfect information")
    equilibria = pure_nash(nf)
    if not equilibria:
        return Solution(_solve_perfect(tree, path), path)
    eq = equilibria[0]
    path[tree.id] = eq.row
    for _, child in tree.children:
        path[child.id] = eq.col
    return Solution(eq.payoff, path)


def render_tree(tree: KuhnNode) -> str:
    """Plain-text drawing of the tree, one node per line."""
    names = {ATTACKER: "Attacker", DEFENDER: "Defender"}
    lines: list[str] = []

    def label(node: KuhnNode) -> str:
        if node.is_leaf:
            return f"{node.payoff.attacker:.2f}, {node.payoff.defender:.2f}"
        return f"{names[node.kind]} [{node.id}, info set {node.info_set}]"

    def walk(node: KuhnNode, prefix: str) -> None:
        for k, (action, child) in enumerate(node.children):
            last = k == len(node.children) - 1
            lines.append(f"{prefix}{'`-- ' if last else '|-- '}{action} -> {label(child)}")
            walk(child, prefix + ("    " if last else "|   "))

    lines.append(label(tree))
    walk(tree, "")
    return "\n".join(lines)
