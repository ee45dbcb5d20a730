"""In-process test experiments.

Three families: random positive-definite quadratic landscapes (the tuning
testbed), classic benchmark functions, and a toy magneto-optical-trap
compression surrogate that maps a 63-parameter ramp sequence to an optical
depth and a transmission cost. The surrogate dynamics are invented: the
constants were picked so the landscape has failure plateaus and a nontrivial
interior optimum, with no claim of physical fidelity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spaces import ParameterSpace


def transmission(od: float, delta_mhz: float, gamma_mhz: float) -> float:
    """Lorentzian-line transmitted intensity fraction exp(-od * L(delta)).

    L = (gamma^2/4) / (delta^2 + gamma^2/4); larger optical depth or smaller
    detuning means deeper absorption. Always in (0, 1] for od >= 0.
    """
    if gamma_mhz <= 0:
        raise ValueError("gamma must be positive")
    lorentz = (gamma_mhz**2 / 4.0) / (delta_mhz**2 + gamma_mhz**2 / 4.0)
    return float(np.exp(-od * lorentz))


@dataclass
class QuadraticLandscape:
    """Random strictly convex bowl (x-c)' A (x-c) on the unit box."""

    dim: int = 10
    seed: int = 0
    center: np.ndarray = field(init=False)
    curvature: np.ndarray = field(init=False)

    def __post_init__(self):
        rng = np.random.default_rng(self.seed)
        self.center = rng.uniform(0.0, 1.0, self.dim)
        gauss = rng.normal(size=(self.dim, self.dim))
        q, _ = np.linalg.qr(gauss)
        eigs = rng.uniform(0.5, 2.0, self.dim)
        self.curvature = (q * eigs) @ q.T
        self.curvature = 0.5 * (self.curvature + self.curvature.T)

    def space(self) -> ParameterSpace:
        return ParameterSpace(np.zeros(self.dim), np.ones(self.dim))

    def cost(self, x) -> float:
        d = np.asarray(x, dtype=float) - self.center
        return float(d @ self.curvature @ d)

    def evaluate(self, x) -> tuple[float, bool]:
        return self.cost(x), False


def quadratic_cost(landscape: QuadraticLandscape, x) -> float:
    return landscape.cost(x)


def sphere_cost(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.sum(x * x))


def sphere_space(dim: int) -> ParameterSpace:
    return ParameterSpace(np.full(dim, -5.0), np.full(dim, 5.0))


def rosenbrock_cost(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.sum(100.0 * (x[1:] - x[:-1] ** 2) ** 2 + (1.0 - x[:-1]) ** 2))


def rosenbrock_space(dim: int) -> ParameterSpace:
    return ParameterSpace(np.full(dim, -2.0), np.full(dim, 2.0))


# --- MOT compression surrogate -------------------------------------------------

MOT_BINS = 21
MOT_DT = 1.0  # ms per bin
MOT_GAMMA_SIM = 6.0  # MHz, linewidth used inside the ramp dynamics
MOT_T0 = 100.0  # uK, loading temperature
MOT_R0 = 2.0  # mm, loading radius
MOT_A_HEAT = 40.0  # uK/ms
MOT_A_COOL = 0.8  # 1/ms
MOT_T_FLOOR = 10.0  # uK
MOT_C_EXPAND = 0.02  # mm/(sqrt(uK) ms)
MOT_C_COMPRESS = 0.35  # 1/ms
MOT_L_LIGHT = 0.01  # 1/ms
MOT_L_DENSITY = 0.05  # mm^3/ms
MOT_K_OD = 1000.0
MOT_R_FLOOR = 0.1  # mm
MOT_PROBE_DETUNING = 90.0  # MHz
MOT_GAMMA_PHYS = 5.75  # MHz, probe transition linewidth
MOT_BAD_OD = 1.0  # below this the run counts as a failure to trap


@dataclass
class MotResult:
    od: float
    cost: float
    bad: bool


@dataclass
class MotSurrogate:
    """21-bin compression-ramp model: (trap detuning, repump detuning, coil drive).

    The 63-vector ramp is ordered [u_t(1..21), u_r(1..21), u_b(1..21)] with
    u_t, u_r in [-40, 0] MHz and u_b in [0, 1]. A three-variable state
    (trapped fraction n, temperature T, radius r) is stepped once per bin and
    converted to an optical depth, then to a probe transmission cost where
    larger transmission = worse. noise_sigma adds relative Gaussian noise.
    """

    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self._rng = np.random.default_rng(self.seed)

    @property
    def dim(self) -> int:
        return 3 * MOT_BINS

    def space(self) -> ParameterSpace:
        lower = np.concatenate([np.full(MOT_BINS, -40.0), np.full(MOT_BINS, -40.0), np.zeros(MOT_BINS)])
        upper = np.concatenate([np.zeros(MOT_BINS), np.zeros(MOT_BINS), np.ones(MOT_BINS)])
        names = tuple(
            [f"trap_detuning_{k}" for k in range(MOT_BINS)]
            + [f"repump_detuning_{k}" for k in range(MOT_BINS)]
            + [f"coil_drive_{k}" for k in range(MOT_BINS)]
        )
        return ParameterSpace(lower, upper, names)

    def evolve(self, ramps) -> MotResult:
        ramps = np.asarray(ramps, dtype=float)
        if ramps.shape != (self.dim,):
            raise ValueError(f"expected {self.dim} ramp values, got {ramps.shape}")
        u_t = ramps[:MOT_BINS]
        u_r = ramps[MOT_BINS : 2 * MOT_BINS]
        u_b = ramps[2 * MOT_BINS :]
        n, T, r = 1.0, MOT_T0, MOT_R0
        for k in range(MOT_BINS):
            s = 1.0 / (1.0 + (2.0 * u_t[k] / MOT_GAMMA_SIM) ** 2)
            bright = 1.0 / (1.0 + (2.0 * u_r[k] / MOT_GAMMA_SIM) ** 2)
            x = -u_t[k] / MOT_GAMMA_SIM
            cool = 4.0 * x / (1.0 + 4.0 * x * x) ** 2
            T = max(MOT_T_FLOOR, T + MOT_DT * (MOT_A_HEAT * s * bright - MOT_A_COOL * cool * bright * (T - MOT_T_FLOOR)))
            r = max(MOT_R_FLOOR, r + MOT_DT * (MOT_C_EXPAND * np.sqrt(T) - MOT_C_COMPRESS * u_b[k] * s * bright * r))
            n = n * np.exp(-MOT_DT * (MOT_L_LIGHT * s * bright + MOT_L_DENSITY * n * u_b[k] / r**3))
        od = MOT_K_OD * n / (r * r * np.sqrt(T / MOT_T0))
        cost = transmission(od, MOT_PROBE_DETUNING, MOT_GAMMA_PHYS)
        if self.noise_sigma:
            cost *= 1.0 + self._rng.normal() * self.noise_sigma
        return MotResult(od=float(od), cost=float(cost), bad=bool(od < MOT_BAD_OD))

    def evaluate(self, x) -> tuple[float, bool]:
        result = self.evolve(x)
        return result.cost, result.bad


def mot_evolve(surrogate: MotSurrogate, ramps) -> MotResult:
    return surrogate.evolve(ramps)


def baseline_compression_ramp() -> np.ndarray:
    """Conventional monotonic strategy: ramp the trap out, darken the repump,
    drive the coils up. Serves as the human-style reference solution."""
    u_t = np.linspace(-31.0, -40.0, MOT_BINS)
    u_r = np.linspace(0.0, -40.0, MOT_BINS)
    u_b = np.linspace(0.3, 1.0, MOT_BINS)
    return np.concatenate([u_t, u_r, u_b])
