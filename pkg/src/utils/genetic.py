"""
Genetic algorithm for fixed-size subset minimization.
Chromosomes are sorted k-subsets of {0..n-1}; the objective is evaluated on
batches of chromosomes so that callers can vectorize it.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Tuple

import numpy as np

from src.errors import ValidationError

logger = logging.getLogger(__name__)

BatchObjective = Callable[[np.ndarray], np.ndarray]


@dataclass
class GaParams:
    population: int = 50
    generations: int = 100
    tournament: int = 3
    mutation_rate: float = 0.1
    elitism: int = 2
    patience: int = 25

    def validate(self) -> "GaParams":
        if self.population < 2:
            raise ValidationError(f"GA population must be at least 2, got {self.population}")
        if self.generations < 1 or self.tournament < 1 or self.patience < 1:
            raise ValidationError("GA generations, tournament size and patience must be positive")
        if not 0.0 <= self.mutation_rate <= 1.0:
            raise ValidationError(f"GA mutation rate must lie in [0, 1], got {self.mutation_rate}")
        if not 0 <= self.elitism < self.population:
            raise ValidationError(f"GA elitism must lie in [0, population), got {self.elitism}")
        return self


@dataclass
class GaResult:
    subset: Tuple[int, ...]
    value: float
    generations: int
    evaluations: int


class FixedSizeSubsetGA:
    """Minimize a set function over all k-subsets of n items.

    Crossover keeps the parents' common items and fills the rest at random
    from their symmetric difference; mutation swaps one item for an outside one.
    """

    def __init__(self, objective: BatchObjective, n_items: int, k: int, params: GaParams, rng: np.random.Generator):
        if not 1 <= k <= n_items:
            raise ValidationError(f"Subset size {k} must lie in 1..{n_items}")
        self.objective = objective
        self.n_items = n_items
        self.k = k
        self.params = params.validate()
        self.rng = rng
        self._values: Dict[Tuple[int, ...], float] = {}

    def _evaluate(self, population: np.ndarray) -> np.ndarray:
        keys = [tuple(int(i) for i in row) for row in population]
        missing = sorted({key for key in keys if key not in self._values})
        if missing:
            values = self.objective(np.array(missing, dtype=int))
            for key, value in zip(missing, values):
                self._values[key] = float(value)
        return np.array([self._values[key] for key in keys])

    def _random_individual(self) -> np.ndarray:
        return np.sort(self.rng.choice(self.n_items, size=self.k, replace=False))

    def _tournament(self, fitness: np.ndarray) -> int:
        entrants = self.rng.choice(fitness.shape[0], size=min(self.params.tournament, fitness.shape[0]), replace=False)
        entrants = np.sort(entrants)
        return int(entrants[np.argmin(fitness[entrants])])

    def _crossover(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        common = np.intersect1d(a, b)
        pool = np.setxor1d(a, b)
        fill = self.rng.choice(pool, size=self.k - common.size, replace=False) if pool.size else np.empty(0, dtype=int)
        return np.sort(np.concatenate([common, fill]).astype(int))

    def _mutate(self, child: np.ndarray) -> np.ndarray:
        if self.k == self.n_items or self.rng.random() >= self.params.mutation_rate:
            return child
        outside = np.setdiff1d(np.arange(self.n_items), child)
        child = child.copy()
        child[self.rng.integers(self.k)] = self.rng.choice(outside)
        return np.sort(child)

    def run(self) -> GaResult:
        params = self.params
        population = np.stack([self._random_individual() for _ in range(params.population)])
        fitness = self._evaluate(population)
        best_index = int(np.argmin(fitness))
        best_subset, best_value = population[best_index].copy(), float(fitness[best_index])
        stagnant = 0
        generation = 0

        for generation in range(1, params.generations + 1):
            order = np.argsort(fitness, kind="stable")
            children = [population[i].copy() for i in order[: params.elitism]]
            while len(children) < params.population:
                a = population[self._tournament(fitness)]
                b = population[self._tournament(fitness)]
                children.append(self._mutate(self._crossover(a, b)))
            population = np.stack(children)
            fitness = self._evaluate(population)

            index = int(np.argmin(fitness))
            if fitness[index] < best_value:
                best_subset, best_value = population[index].copy(), float(fitness[index])
                stagnant = 0
            else:
                stagnant += 1
            if stagnant >= params.patience:
                break

        logger.debug(f"GA stopped after {generation} generations, best value {best_value:.6f}")
        return GaResult(
            subset=tuple(int(i) for i in best_subset),
            value=best_value,
            generations=generation,
            evaluations=len(self._values),
        )
