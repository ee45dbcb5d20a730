"""The online optimisation loop.

Phase 1 evaluates a 2N-point exploration design, fits the (then frozen)
normalizer on exactly those runs and trains the ensemble. Phase 2 cycles
proposals net_0, net_1, net_2, de: each network proposal minimises the
Thompson-sampled member's predicted cost landscape from multiple starts,
every fourth run comes from differential evolution so the networks keep
receiving unbiased data. Every observation is appended (and flushed) to the
archive before the next one starts, so a session can be killed and resumed
at any point.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .archive import RunArchive
from .de import DeConfig, DeState, initial_design
from .ensemble import SannEnsemble
from .experiment import TransportError
from .minimize import MinimizeOptions, multistart_minimize
from .mlp import MlpConfig, fit_normalizer, forward, input_gradient
from .spaces import Dataset, NoValidObservationError, Observation, ParameterSpace, Source

_DUPLICATE_TOL = 1e-9


class SessionSuspendedError(RuntimeError):
    """The experiment became unreachable; the archive is intact for resume."""


@dataclass
class ControllerConfig:
    max_runs: int = 703
    initial_runs: int | None = None  # None -> 2N
    retrain_every: int = 1
    stall_window: int = 150  # <= 0 disables the stall stop
    stall_tolerance: float = 0.0
    failure_cost: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.retrain_every < 1:
            raise ValueError("retrain_every must be >= 1")
        if self.initial_runs is not None and self.initial_runs < 1:
            raise ValueError("initial_runs must be positive")


@dataclass
class ProposalSchedule:
    """Fixed rotation net_0, net_1, net_2, de for post-design proposals."""

    position: int = 0
    cycle: tuple[Source, ...] = (Source.NET_0, Source.NET_1, Source.NET_2, Source.DE)

    def next(self) -> Source:
        source = self.cycle[self.position % len(self.cycle)]
        self.position += 1
        return source


def scale_cost(raw: float, best_raw: float, failure_raw: float) -> float:
    """Linear map of a raw cost onto [0, 1].

    1 is the failure level ("no atoms trapped"), 0 the best known cost; the
    result is clipped, so a raw cost beating best_raw still reads 0.
    """
    denom = failure_raw - best_raw
    if denom <= 0:
        return 0.0
    return float(min(1.0, max(0.0, (raw - best_raw) / denom)))


@dataclass
class SessionConfig:
    """Everything the loop needs besides the space and the experiment."""

    mlp: MlpConfig = field(default_factory=MlpConfig)
    de: DeConfig = field(default_factory=DeConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    minimizer: MinimizeOptions = field(default_factory=MinimizeOptions)
    ensemble_size: int = 3


def _derive_seeds(config: SessionConfig) -> SessionConfig:
    """One master seed (controller.seed) drives every stochastic component."""
    ss = np.random.SeedSequence(config.controller.seed)
    design, de_seed, mlp_seed, ms_seed = ss.generate_state(4, dtype=np.uint64)
    return replace(
        config,
        mlp=replace(config.mlp, seed=int(mlp_seed)),
        de=replace(config.de, seed=int(de_seed)),
        minimizer=replace(config.minimizer, seed=int(ms_seed)),
    ), int(design)


class _Session:
    def __init__(self, experiment, space: ParameterSpace, config: SessionConfig, archive: RunArchive):
        self.experiment = experiment
        self.space = space
        self.archive = archive
        config, design_seed = _derive_seeds(config)
        self.config = config
        self.ctrl = config.controller
        self.initial_runs = self.ctrl.initial_runs or 2 * space.dim
        if self.ctrl.max_runs <= self.initial_runs:
            raise ValueError("max_runs must exceed initial_runs")
        self.dataset = archive.dataset()
        self.design = initial_design(
            space,
            np.random.default_rng(design_seed),
            n=self.initial_runs,
            stratified=config.de.init == "lhs",
        )
        self.de = DeState(space, config.de)
        for obs in self.dataset:
            self.de.tell(obs.params, obs.raw_cost)
        self.ensemble: SannEnsemble | None = None
        self.schedule = ProposalSchedule(position=max(0, len(self.dataset) - self.initial_runs))
        self.best_raw = None
        self.best_history: list[float] = []
        for obs in self.dataset:
            self._track_best(obs)
        # a fresh seed per proposal keeps multistart restarts from repeating
        self._ms_seed_rng = np.random.default_rng(config.minimizer.seed)
        self._pending_retrain = 0

    # -- bookkeeping -------------------------------------------------------

    def _track_best(self, obs: Observation) -> None:
        if not obs.bad and (self.best_raw is None or obs.raw_cost < self.best_raw):
            self.best_raw = obs.raw_cost
        self.best_history.append(self.best_raw if self.best_raw is not None else np.inf)

    def _stalled(self) -> bool:
        window = self.ctrl.stall_window
        if window <= 0 or len(self.best_history) <= window:
            return False
        old = self.best_history[-window - 1]
        new = self.best_history[-1]
        if not np.isfinite(old) or not np.isfinite(new):
            return False
        denom = self.ctrl.failure_cost - new
        improvement = (old - new) / denom if denom > 0 else (old - new)
        return improvement <= self.ctrl.stall_tolerance

    def _is_duplicate(self, x: np.ndarray) -> bool:
        if not self.dataset.observations:
            return False
        previous = self.dataset.params_matrix()
        return bool(np.min(np.max(np.abs(previous - x), axis=1)) <= _DUPLICATE_TOL)

    def _evaluate(self, x: np.ndarray) -> tuple[float, bool, float]:
        start = time.perf_counter()
        try:
            raw, bad = self.experiment.evaluate(x)
        except TransportError:
            try:
                self.experiment.reset()
                raw, bad = self.experiment.evaluate(x)
            except TransportError as exc:
                raise SessionSuspendedError(
                    f"experiment unreachable after retry: {exc}"
                ) from exc
        return raw, bad, time.perf_counter() - start

    def _record(self, x: np.ndarray, source: Source) -> Observation:
        raw, bad, wall = self._evaluate(x)
        if bad:
            raw = self.ctrl.failure_cost
            scaled = 1.0
        else:
            running_best = raw if self.best_raw is None else min(self.best_raw, raw)
            scaled = scale_cost(raw, running_best, self.ctrl.failure_cost)
        obs = Observation(
            run_index=len(self.dataset),
            params=x,
            raw_cost=raw,
            scaled_cost=scaled,
            bad=bad,
            source=source,
            wall_time=wall,
        )
        self.archive.append(obs)
        self.dataset.append(obs)
        self._track_best(obs)
        self.de.tell(x, raw)
        return obs

    # -- phases ------------------------------------------------------------

    def run_initial_design(self) -> None:
        while len(self.dataset) < self.initial_runs:
            x = self.space.clamp(self.design[len(self.dataset)])
            self._record(x, Source.INIT_DE)

    def build_ensemble(self) -> None:
        initial = Dataset(self.space, list(self.dataset.observations[: self.initial_runs]))
        normalizer = fit_normalizer(initial)
        self.ensemble = SannEnsemble.create(
            self.space.dim, self.config.mlp, normalizer, self.config.ensemble_size
        )
        self.ensemble.next_member = sum(1 for o in self.dataset if o.source.is_net) % len(
            self.ensemble
        )
        self.ensemble.retrain_all(self.dataset.snapshot())

    def _network_proposal(self) -> tuple[np.ndarray, int]:
        member_index = self.ensemble.thompson_sample()
        member = self.ensemble.members[member_index]
        normalizer = self.ensemble.normalizer
        cache: dict = {"x": None}

        def refresh(x):
            # objective and gradient share one forward walk per point
            if cache["x"] is None or not np.array_equal(cache["x"], x):
                cache["x"] = x.copy()
                cache["f"] = forward(member, normalizer, x)
                cache["g"] = None
            return cache

        def objective(x):
            return refresh(x)["f"]

        def gradient(x):
            c = refresh(x)
            if c["g"] is None:
                c["g"] = input_gradient(member, normalizer, x)
            return c["g"]

        starts = []
        try:
            starts.append(self.dataset.best().params)
        except NoValidObservationError:
            pass
        opts = replace(self.config.minimizer, seed=int(self._ms_seed_rng.integers(2**63)))
        result = multistart_minimize(objective, gradient, self.space, starts, opts)
        return result.x_min, member_index

    def _de_proposal(self) -> np.ndarray:
        if len(self.de) >= 4:
            return self.de.ask()
        rng = np.random.default_rng(self._ms_seed_rng.integers(2**63))
        return self.space.uniform(rng, 1)[0]

    def run_main_loop(self) -> None:
        while len(self.dataset) < self.ctrl.max_runs and not self._stalled():
            slot = self.schedule.next()
            if slot is Source.DE:
                x = self._de_proposal()
            else:
                x, member_index = self._network_proposal()
                assert Source.net(member_index) is slot
            x = self.space.clamp(x)
            if self._is_duplicate(x):
                # physical evaluations are expensive; spend the run exploring
                x = self.space.clamp(self._de_proposal())
            self._record(x, slot)
            self._pending_retrain += 1
            if self._pending_retrain >= self.ctrl.retrain_every:
                self.ensemble.retrain_all(self.dataset.snapshot())
                self._pending_retrain = 0


def run_optimization(
    experiment,
    space: ParameterSpace,
    config: SessionConfig,
    archive_path,
    resume: bool = False,
) -> Dataset:
    """Drive a full session; returns the final dataset (archive stays on disk)."""
    if resume:
        archive = RunArchive.resume(archive_path)
        if archive.space.dim != space.dim or not np.array_equal(archive.space.lower, space.lower):
            raise ValueError("archive space does not match session space")
    else:
        archive = RunArchive.create(archive_path, space, config.controller.failure_cost)
    try:
        session = _Session(experiment, space, config, archive)
        session.run_initial_design()
        session.build_ensemble()
        session.run_main_loop()
        return session.dataset
    finally:
        archive.close()
