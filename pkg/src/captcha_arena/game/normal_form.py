"""Bimatrix form of the attacker/defender game and its pure equilibria."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, NamedTuple

import numpy as np

from ..errors import IncompleteTableError
from .utility import ATTACKS, DEFENSES, CostPair, GameConfig, PayoffPair


class Equilibrium(NamedTuple):
    row: str
    col: str
    payoff: PayoffPair


@dataclass(frozen=True)
class NormalForm2x2:
    """Rows are attacker actions, columns defender actions; cells are PayoffPairs."""

    cells: tuple[tuple[PayoffPair, ...], ...]
    rows: tuple[str, ...] = ATTACKS
    cols: tuple[str, ...] = DEFENSES

    def __post_init__(self):
        if len(self.cells) != len(self.rows) or any(len(r) != len(self.cols) for r in self.cells):
            raise IncompleteTableError("cell grid does not match the action sets")
        for row in self.cells:
            for cell in row:
                if not (np.isfinite(cell.attacker) and np.isfinite(cell.defender)):
                    raise ValueError(f"non-finite payoff {cell}")

    @classmethod
    def from_arrays(cls, attacker, defender, rows=ATTACKS, cols=DEFENSES) -> NormalForm2x2:
        a, b = np.asarray(attacker, dtype=float), np.asarray(defender, dtype=float)
        cells = tuple(tuple(PayoffPair(float(a[i, j]), float(b[i, j])) for j in range(a.shape[1]))
                      for i in range(a.shape[0]))
        return cls(cells, tuple(rows), tuple(cols))

    @classmethod
    def from_table(cls, table: Mapping[tuple[str, str], PayoffPair],
                   rows=ATTACKS, cols=DEFENSES) -> NormalForm2x2:
        missing = [(r, c) for r in rows for c in cols if (r, c) not in table]
        if missing:
            raise IncompleteTableError(f"payoff table lacks cells {missing}")
        return cls(tuple(tuple(table[r, c] for c in cols) for r in rows), tuple(rows), tuple(cols))

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        a = np.array([[c.attacker for c in row] for row in self.cells])
        b = np.array([[c.defender for c in row] for row in self.cells])
        return a, b

    def payoff(self, row: str, col: str) -> PayoffPair:
        return self.cells[self.rows.index(row)][self.cols.index(col)]

    def to_dict(self) -> dict:
        return {"rows": list(self.rows), "cols": list(self.cols),
                "cells": [[[c.attacker, c.defender] for c in row] for row in self.cells]}

    def render(self) -> str:
        width = max(len(r) for r in self.rows)
        cells = [[f"{c.attacker:.2f}, {c.defender:.2f}" for c in row] for row in self.cells]
        colw = max(max(len(c) for c in self.cols), max(len(c) for row in cells for c in row))
        lines = [" " * width + " | " + " | ".join(c.ljust(colw) for c in self.cols)]
        lines.append("-" * len(lines[0]))
        for name, row in zip(self.rows, cells):
            lines.append(name.ljust(width) + " | " + " | ".join(c.ljust(colw) for c in row))
        return "\n".join(lines)


def pure_nash(g: NormalForm2x2) -> list[Equilibrium]:
    """All cells where each player is (weakly) best-responding, in row-major order."""
    a, b = g.arrays()
    found = []
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            if a[i, j] >= a[:, j].max() and b[i, j] >= b[i, :].max():
                found.append(Equilibrium(g.rows[i], g.cols[j], g.cells[i][j]))
    return found


@dataclass(frozen=True)
class StackelbergSolution:
    attack: str
    defense: str
    value: PayoffPair
    follower_response: dict[str, str]


def stackelberg_objective(table: Mapping[tuple[str, str], PayoffPair],
                          cfg: GameConfig = GameConfig(),
                          costs: Mapping[tuple[str, str], CostPair] | None = None,
                          attacks=ATTACKS, defenses=DEFENSES) -> StackelbergSolution:
    """Leader-follower solution: the defender best-responds to each attack,
    the attacker then picks the attack whose induced outcome pays it most.

    Without ``costs`` the defender maximises its own utility.  With ``costs``
    the follower's score for a cell is ``sigma + C_L + C_F - J_F`` instead.
    Ties go to the earlier action in ``attacks`` / ``defenses``.
    """
    missing = [(a, d) for a in attacks for d in defenses if (a, d) not in table]
    if missing:
        raise IncompleteTableError(f"payoff table lacks cells {missing}")
    if costs is not None:
        lacking = [(a, d) for a in attacks for d in defenses if (a, d) not in costs]
        if lacking:
            raise IncompleteTableError(f"cost table lacks cells {lacking}")

    def follower_score(a: str, d: str) -> float:
        j_f = table[a, d].defender
        if costs is None:
            return j_f
        c = costs[a, d]
        return cfg.sigma + c.leader + c.follower - j_f

    response = {}
    for a in attacks:
        best = defenses[0]
        for d in defenses[1:]:
            if follower_score(a, d) > follower_score(a, best):
                best = d
        response[a] = best
    attack = attacks[0]
    for a in attacks[1:]:
        if table[a, response[a]].attacker > table[attack, response[attack]].attacker:
            attack = a
    return StackelbergSolution(attack, response[attack], table[attack, response[attack]], response)
