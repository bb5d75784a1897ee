"""Attacker/defender game: utilities, bimatrix form and Kuhn tree."""

from .normal_form import (Equilibrium, NormalForm2x2, StackelbergSolution, pure_nash,
                          stackelberg_objective)
from .tree import (ATTACKER, DEFENDER, LEAF, AttackStages, KuhnNode, Solution,
                   backward_induction, build_kuhn_tree, decision, leaf, render_tree,
                   to_normal_form, validate_tree)
from .utility import (ATTACKS, DEFENSES, LOSS_CEILING, AttackResult, BinomialQuery, CostPair,
                      DefenseResult, GameConfig, PayoffPair, binomial_pmf, classify_attack,
                      classify_defense, cost_pair, utility_from_accuracy)

__all__ = [
    "ATTACKER", "ATTACKS", "AttackResult", "AttackStages", "BinomialQuery", "CostPair",
    "DEFENDER", "DEFENSES", "DefenseResult", "Equilibrium", "GameConfig", "KuhnNode", "LEAF",
    "LOSS_CEILING", "NormalForm2x2", "PayoffPair", "Solution", "StackelbergSolution",
    "backward_induction", "binomial_pmf", "build_kuhn_tree", "classify_attack",
    "classify_defense", "cost_pair", "decision", "leaf", "pure_nash", "render_tree",
    "stackelberg_objective", "to_normal_form", "utility_from_accuracy", "validate_tree",
]
