"""DE/rand/1 differential evolution without crossover.

Each generation builds, for every population index ``i``, the mutant
``x_r1 + F * (x_r2 - x_r3)`` from three distinct indices that are all
different from ``i``, clips it to the box bounds and keeps it only if its
fitness is strictly lower than the parent's (minimisation).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import ConfigError

Objective = Callable[[np.ndarray], np.ndarray]


@dataclass
class DeState:
    generation: int
    population: np.ndarray  # (pop_size, dim)
    fitness: np.ndarray  # (pop_size,)

    @property
    def best_index(self) -> int:
        return int(np.argmin(self.fitness))

    @property
    def best(self) -> tuple[np.ndarray, float]:
        i = self.best_index
        return self.population[i].copy(), float(self.fitness[i])


def draw_indices(i: int, pop_size: int, rng: np.random.Generator) -> tuple[int, int, int]:
    """Three distinct population indices, none equal to ``i``."""
    picks = rng.choice(pop_size - 1, size=3, replace=False)
    picks = picks + (picks >= i)
    return int(picks[0]), int(picks[1]), int(picks[2])


def init_state(objective: Objective, bounds: np.ndarray, pop_size: int,
               rng: np.random.Generator) -> DeState:
    bounds = np.asarray(bounds, dtype=np.float64)
    if pop_size < 4:
        raise ConfigError(f"pop_size must be >= 4, got {pop_size}")
    lo, hi = bounds[:, 0], bounds[:, 1]
    population = lo + rng.random((pop_size, len(bounds))) * (hi - lo)
    return DeState(0, population, np.asarray(objective(population), dtype=np.float64))


def de_step(state: DeState, objective: Objective, bounds: np.ndarray,
            rng: np.random.Generator, scale: float = 0.5) -> DeState:
    """Advance one generation; the input state is left untouched."""
    pop = state.population
    pop_size = len(pop)
    if pop_size < 4:
        raise ConfigError(f"pop_size must be >= 4, got {pop_size}")
    bounds = np.asarray(bounds, dtype=np.float64)
    idx = np.array([draw_indices(i, pop_size, rng) for i in range(pop_size)])
    mutants = pop[idx[:, 0]] + scale * (pop[idx[:, 1]] - pop[idx[:, 2]])
    np.clip(mutants, bounds[:, 0], bounds[:, 1], out=mutants)
    trial_fitness = np.asarray(objective(mutants), dtype=np.float64)
    better = trial_fitness < state.fitness
    population = np.where(better[:, None], mutants, pop)
    fitness = np.where(better, trial_fitness, state.fitness)
    return DeState(state.generation + 1, population, fitness)


def differential_evolution(objective: Objective, bounds, pop_size: int, generations: int,
                           scale: float = 0.5, seed: int = 0,
                           stop: Callable[[DeState], bool] | None = None
                           ) -> tuple[DeState, list[float]]:
    """Run DE for ``generations`` steps.

    Returns the final state and the best fitness after initialisation and
    after every generation.  ``stop`` may end the run early.
    """
    if generations < 1:
        raise ConfigError("generations must be >= 1")
    if scale <= 0:
        raise ConfigError("scale F must be positive")
    rng = np.random.default_rng(seed)
    state = init_state(objective, bounds, pop_size, rng)
    history = [float(state.fitness.min())]
    for _ in range(generations):
        if stop is not None and stop(state):
            break
        state = de_step(state, objective, bounds, rng, scale)
        history.append(float(state.fitness.min()))
    return state, history
