"""Stochastic network ensemble: bagged perceptrons sampled round-robin.

Despite the bagging ancestry, every member trains on the full dataset; the
model-to-model variety that makes the ensemble "stochastic" comes from
independent He initialisations and independent shuffle streams. A sampled
member acts as one deterministic model whose predicted optimum is explored.
"""

from __future__ import annotations

import numpy as np

from .mlp import (
    MlpConfig,
    MlpNetwork,
    Normalizer,
    TrainingDivergedError,
    TrainReport,
    forward,
    he_init,
    train,
)
from .spaces import Dataset


class SannEnsemble:
    """A fixed-size set of networks sharing one normalizer and dataset."""

    def __init__(
        self,
        members: list[MlpNetwork],
        normalizer: Normalizer,
        config: MlpConfig,
        train_rngs: list[np.random.Generator],
        reinit_rng: np.random.Generator,
        next_member: int = 0,
    ):
        if len(members) != len(train_rngs) or not members:
            raise ValueError("one training stream per member required")
        self.members = members
        self.normalizer = normalizer
        self.config = config
        self.next_member = next_member % len(members)
        self._train_rngs = train_rngs
        self._reinit_rng = reinit_rng

    @classmethod
    def create(
        cls,
        space_dim: int,
        config: MlpConfig,
        normalizer: Normalizer,
        n_members: int = 3,
    ) -> "SannEnsemble":
        """Build n_members networks with independent seeds derived from config.seed."""
        ss = np.random.SeedSequence(config.seed)
        init_seeds = ss.spawn(n_members)
        train_seeds = ss.spawn(n_members)
        reinit_seed = ss.spawn(1)[0]
        members = [
            he_init(config, space_dim, np.random.default_rng(s)) for s in init_seeds
        ]
        train_rngs = [np.random.default_rng(s) for s in train_seeds]
        return cls(members, normalizer, config, train_rngs, np.random.default_rng(reinit_seed))

    def __len__(self) -> int:
        return len(self.members)

    def retrain_all(self, dataset: Dataset) -> list[TrainReport]:
        """Warm-start train every member on the complete dataset.

        A member whose training diverges is re-initialised from a fresh seed
        and trained once more; a second divergence propagates.
        """
        reports = []
        for i, member in enumerate(self.members):
            try:
                reports.append(train(member, self.normalizer, dataset, self.config, self._train_rngs[i]))
            except TrainingDivergedError:
                fresh = he_init(self.config, member.input_dim, self._reinit_rng)
                reports.append(train(fresh, self.normalizer, dataset, self.config, self._train_rngs[i]))
                self.members[i] = fresh
        return reports

    def thompson_sample(self) -> int:
        """Next member index under deterministic rotation.

        Round-robin rather than uniform-random, so that each member is probed
        exactly once per full cycle and archived sessions replay exactly.
        """
        index = self.next_member
        self.next_member = (index + 1) % len(self.members)
        return index

    def predict(self, x) -> dict:
        """Mean, population spread and per-member predicted raw costs at x."""
        per_member = np.array([forward(m, self.normalizer, x) for m in self.members])
        return {
            "mean": float(per_member.mean()),
            "spread": float(per_member.std()),
            "per_member": per_member,
        }
