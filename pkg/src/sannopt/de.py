"""Differential evolution (rand/1/bin) in ask/tell form.

Runs the exploration stream of the optimiser: a Latin-hypercube initial
design seeds the population, after which ask() emits one trial vector at a
time and tell() applies greedy selection. Observations coming from the other
proposal stream are folded in as well (replace-worst), so the population
tracks the whole dataset. Hyperparameters default to the exploration-leaning
F = 0.9, CR = 0.9.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spaces import ParameterSpace


@dataclass
class DeConfig:
    population: int | None = None  # None -> max(15, 2N), resolved per space
    weight_f: float = 0.9
    crossover_cr: float = 0.9
    strategy: str = "rand_1_bin"
    init: str = "lhs"  # or "uniform"
    seed: int = 0

    def __post_init__(self):
        # F = 0 admitted as the degenerate no-mutation case
        if not 0.0 <= self.weight_f <= 2.0:
            raise ValueError("weight_f must lie in [0, 2]")
        if not 0.0 <= self.crossover_cr <= 1.0:
            raise ValueError("crossover_cr must lie in [0, 1]")
        if self.strategy != "rand_1_bin":
            raise ValueError(f"unsupported strategy {self.strategy!r}")
        if self.init not in ("lhs", "uniform"):
            raise ValueError("init must be 'lhs' or 'uniform'")
        if self.population is not None and self.population < 4:
            raise ValueError("population must be at least 4")


def initial_design(
    space: ParameterSpace,
    rng: np.random.Generator,
    n: int | None = None,
    stratified: bool = True,
) -> np.ndarray:
    """2N-point exploration design over the box, shape (n, dim).

    Latin-hypercube stratification by default: each dimension is cut into n
    equal bins and every bin holds exactly one point, which gives the frozen
    normalizer decent per-dimension coverage. Plain uniform available too.
    """
    n = 2 * space.dim if n is None else int(n)
    if n < 1:
        raise ValueError("design size must be positive")
    if not stratified:
        return space.uniform(rng, n)
    u = np.empty((n, space.dim))
    for j in range(space.dim):
        u[:, j] = (rng.permutation(n) + rng.uniform(size=n)) / n
    return space.lower + u * (space.upper - space.lower)


class DeState:
    """Mutable population owned by a single controller thread."""

    def __init__(self, space: ParameterSpace, config: DeConfig | None = None):
        self.space = space
        self.config = config or DeConfig()
        self.pop_size = self.config.population or max(15, 2 * space.dim)
        self.pop_x: list[np.ndarray] = []
        self.pop_f: list[float] = []
        self.pending: list[tuple[np.ndarray, int]] = []
        self.generation = 0
        self._cursor = 0
        self._rng = np.random.default_rng(self.config.seed)

    def __len__(self) -> int:
        return len(self.pop_x)

    @property
    def best_cost(self) -> float:
        return min(self.pop_f) if self.pop_f else np.inf

    def ask(self) -> np.ndarray:
        """Next rand/1/bin trial vector, clamped to the box."""
        m = len(self.pop_x)
        if m < 4:
            raise RuntimeError("population too small: need at least 4 members to mutate")
        target = self._cursor
        self._cursor += 1
        if self._cursor >= m:
            self._cursor = 0
            self.generation += 1
        candidates = [i for i in range(m) if i != target]
        a, b, c = self._rng.choice(candidates, size=3, replace=False)
        mutant = self.pop_x[a] + self.config.weight_f * (self.pop_x[b] - self.pop_x[c])
        cross = self._rng.random(self.space.dim) < self.config.crossover_cr
        cross[self._rng.integers(self.space.dim)] = True  # at least one mutant gene
        trial = np.where(cross, mutant, self.pop_x[target])
        trial = self.space.clamp(trial)
        self.pending.append((trial.copy(), target))
        return trial

    def tell(self, x, cost: float) -> None:
        """Greedy selection for own trials; replace-worst for external points."""
        x = np.asarray(x, dtype=float)
        cost = float(cost)
        for k, (trial, target) in enumerate(self.pending):
            if np.array_equal(trial, x):
                del self.pending[k]
                if cost <= self.pop_f[target]:
                    self.pop_x[target] = self.space.clamp(x)
                    self.pop_f[target] = cost
                return
        if len(self.pop_x) < self.pop_size:
            self.pop_x.append(self.space.clamp(x))
            self.pop_f.append(cost)
        else:
            worst = int(np.argmax(self.pop_f))
            if cost < self.pop_f[worst]:
                self.pop_x[worst] = self.space.clamp(x)
                self.pop_f[worst] = cost
