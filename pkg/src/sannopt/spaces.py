"""Parameter spaces, observations and datasets shared by every optimiser component."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class SpaceMismatchError(ValueError):
    """A vector's length does not match the parameter space dimension."""


class NoValidObservationError(LookupError):
    """The dataset holds no non-bad observation."""


class Source(str, Enum):
    """Which proposal stream produced an observation."""

    INIT_DE = "init_de"
    DE = "de"
    NET_0 = "net_0"
    NET_1 = "net_1"
    NET_2 = "net_2"
    MANUAL = "manual"

    @staticmethod
    def net(index: int) -> "Source":
        return Source(f"net_{index}")

    @property
    def is_net(self) -> bool:
        return self.value.startswith("net_")


@dataclass(frozen=True)
class ParameterSpace:
    """Box-bounded domain: N dimensions with per-dimension [lower, upper] bounds."""

    lower: np.ndarray
    upper: np.ndarray
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if lower.ndim != 1 or upper.shape != lower.shape:
            raise SpaceMismatchError("bounds must be 1-D arrays of equal length")
        if lower.size < 1:
            raise ValueError("dimension must be >= 1")
        if not np.all(lower < upper):
            raise ValueError("every lower bound must be strictly below its upper bound")
        if self.names is not None:
            names = tuple(str(n) for n in self.names)
            if len(names) != lower.size:
                raise ValueError("names length must match dimension")
            object.__setattr__(self, "names", names)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def clamp(self, x) -> np.ndarray:
        """Project a vector componentwise onto the box.

        Out-of-bounds proposals are clamped rather than rejected: the physical
        actuators saturate, and boundary points are legitimate solutions.
        """
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise SpaceMismatchError(
                f"expected vector of length {self.dim}, got shape {x.shape}"
            )
        return np.clip(x, self.lower, self.upper)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return x.shape == (self.dim,) and bool(
            np.all(x >= self.lower) and np.all(x <= self.upper)
        )

    def uniform(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """n box-uniform samples, shape (n, dim)."""
        return rng.uniform(self.lower, self.upper, size=(n, self.dim))


@dataclass
class Observation:
    """One experimental evaluation."""

    run_index: int
    params: np.ndarray
    raw_cost: float
    scaled_cost: float
    bad: bool
    source: Source
    wall_time: float = 0.0

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=float)
        self.run_index = int(self.run_index)
        self.raw_cost = float(self.raw_cost)
        self.scaled_cost = float(self.scaled_cost)
        self.bad = bool(self.bad)
        self.source = Source(self.source)
        self.wall_time = float(self.wall_time)
        if self.run_index < 0:
            raise ValueError("run_index must be >= 0")
        if self.bad and self.scaled_cost != 1.0:
            raise ValueError("a bad observation must carry scaled_cost = 1.0")


@dataclass
class Dataset:
    """Ordered collection of observations over one parameter space.

    A value type: the controller is the single writer, readers copy snapshots.
    """

    space: ParameterSpace
    observations: list[Observation] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.observations)

    def __iter__(self):
        return iter(self.observations)

    def append(self, obs: Observation) -> None:
        if obs.params.shape != (self.space.dim,):
            raise SpaceMismatchError("observation dimension does not match space")
        if self.observations and obs.run_index <= self.observations[-1].run_index:
            raise ValueError("run_index must be strictly increasing")
        self.observations.append(obs)

    def best(self) -> Observation:
        """Non-bad observation of minimum raw cost; earliest run_index wins ties."""
        best = None
        for obs in self.observations:
            if obs.bad:
                continue
            if best is None or obs.raw_cost < best.raw_cost:
                best = obs
        if best is None:
            raise NoValidObservationError("no valid (non-bad) observation in dataset")
        return best

    def params_matrix(self) -> np.ndarray:
        return np.stack([o.params for o in self.observations]) if self.observations else np.empty((0, self.space.dim))

    def raw_costs(self) -> np.ndarray:
        return np.array([o.raw_cost for o in self.observations], dtype=float)

    def rescaled_costs(self, failure_raw: float) -> np.ndarray:
        """Scaled costs recomputed against the final session best.

        The archive stores the scaled cost seen live (relative to the running
        best); reports recompute against the final best so that scaled cost is
        monotone in raw cost across the whole session.
        """
        try:
            best_raw = self.best().raw_cost
        except NoValidObservationError:
            best_raw = failure_raw
        out = np.empty(len(self.observations))
        denom = failure_raw - best_raw
        for i, obs in enumerate(self.observations):
            if obs.bad:
                out[i] = 1.0
            elif denom <= 0:
                out[i] = 0.0
            else:
                out[i] = min(1.0, max(0.0, (obs.raw_cost - best_raw) / denom))
        return out

    def snapshot(self) -> "Dataset":
        return Dataset(self.space, list(self.observations))


def clamp(space: ParameterSpace, x) -> np.ndarray:
    """Componentwise projection of x onto the space's box."""
    return space.clamp(x)


def best_observation(dataset: Dataset) -> Observation:
    """The non-bad observation with minimal raw cost (earliest on ties)."""
    return dataset.best()
