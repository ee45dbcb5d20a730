"""Dense multilayer perceptron regression, written directly in numpy.

One network maps a parameter vector to a predicted raw cost. The default
topology is 5 hidden layers of 64 GELU units with a linear head. Training is
shuffled mini-batch Adam on z-score-normalised data with L2 regularisation
and a threshold early-stopping rule: each training iteration runs a fixed
number of epochs and training continues only while the full-dataset loss
keeps dropping below 80% of its value at the iteration start.

Everything is float64 and deterministic given (seed, dataset, config). All
parameters live in one flat buffer (layer matrices are views into it) so the
Adam update is a handful of vectorised operations rather than a per-layer
Python loop; these networks retrain after every experimental run, so the
small-matrix overhead matters.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import erf

from .spaces import Dataset

_SQRT2 = float(np.sqrt(2.0))
_INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))


class TrainingDivergedError(RuntimeError):
    """Training hit a non-finite loss; the network was rolled back."""


def gelu(z):
    """Gaussian error linear unit z * Phi(z), exact error-function form."""
    z = np.asarray(z, dtype=float)
    return z * (0.5 * (1.0 + erf(z / _SQRT2)))


def gelu_grad(z):
    """d/dz of gelu: Phi(z) + z * phi(z)."""
    z = np.asarray(z, dtype=float)
    return 0.5 * (1.0 + erf(z / _SQRT2)) + z * (_INV_SQRT_2PI * np.exp(-0.5 * z * z))


@dataclass
class MlpConfig:
    hidden_layers: int = 5
    hidden_width: int = 64
    l2_coefficient: float = 1e-8
    batch_size: int = 16
    epochs_per_iteration: int = 100
    continue_threshold_ratio: float = 0.8
    max_training_iterations: int = 50
    adam_step: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.hidden_layers < 0 or self.hidden_width < 1:
            raise ValueError("hidden topology must be non-negative layers of width >= 1")
        if not 0.0 < self.continue_threshold_ratio < 1.0:
            raise ValueError("continue_threshold_ratio must lie strictly in (0, 1)")
        for name in ("batch_size", "epochs_per_iteration", "max_training_iterations"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("l2_coefficient", "adam_step", "adam_beta1", "adam_beta2", "adam_epsilon"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class Normalizer:
    """Frozen z-score transform fitted once on the initial-design data."""

    input_mean: np.ndarray
    input_std: np.ndarray
    cost_mean: float
    cost_std: float

    def __post_init__(self):
        self.input_mean = np.asarray(self.input_mean, dtype=float)
        self.input_std = np.asarray(self.input_std, dtype=float)
        self.cost_mean = float(self.cost_mean)
        self.cost_std = float(self.cost_std)
        if np.any(self.input_std <= 0) or self.cost_std <= 0:
            raise ValueError("normalizer stds must be positive")

    def norm_inputs(self, x: np.ndarray) -> np.ndarray:
        return (x - self.input_mean) / self.input_std

    def norm_cost(self, cost):
        return (np.asarray(cost, dtype=float) - self.cost_mean) / self.cost_std

    def denorm_cost(self, normed):
        return self.cost_mean + self.cost_std * np.asarray(normed, dtype=float)

    @staticmethod
    def identity(dim: int) -> "Normalizer":
        return Normalizer(np.zeros(dim), np.ones(dim), 0.0, 1.0)


def fit_normalizer(dataset: Dataset) -> Normalizer:
    """Population-moment (divide-by-M) z-scores over the given observations.

    Zero-variance columns store std 1 so constant inputs pass through centred.
    """
    if len(dataset) == 0:
        raise ValueError("cannot fit a normalizer on an empty dataset")
    X = dataset.params_matrix()
    y = dataset.raw_costs()
    input_std = X.std(axis=0)
    input_std[input_std == 0.0] = 1.0
    cost_std = float(y.std())
    if cost_std == 0.0:
        cost_std = 1.0
    return Normalizer(X.mean(axis=0), input_std, float(y.mean()), cost_std)


class MlpNetwork:
    """Layer weights/biases (views into one flat vector) plus Adam state."""

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray]):
        w_shapes = [w.shape for w in weights]
        b_shapes = [b.shape for b in biases]
        n_w = sum(int(np.prod(s)) for s in w_shapes)
        n_b = sum(int(np.prod(s)) for s in b_shapes)
        self.flat = np.empty(n_w + n_b)
        self.n_weight_params = n_w
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        offset = 0
        for w, shape in zip(weights, w_shapes):
            size = int(np.prod(shape))
            view = self.flat[offset : offset + size].reshape(shape)
            view[...] = w
            self.weights.append(view)
            offset += size
        for b, shape in zip(biases, b_shapes):
            size = int(np.prod(shape))
            view = self.flat[offset : offset + size].reshape(shape)
            view[...] = b
            self.biases.append(view)
            offset += size
        self.adam_m = np.zeros_like(self.flat)
        self.adam_v = np.zeros_like(self.flat)
        self.adam_t = 0
        # scratch buffers: gradient (laid out exactly like flat) + Adam temporaries
        self._grad = np.zeros_like(self.flat)
        self._scratch1 = np.zeros_like(self.flat)
        self._scratch2 = np.zeros_like(self.flat)
        self._grad_w: list[np.ndarray] = []
        self._grad_b: list[np.ndarray] = []
        offset = 0
        for shape in w_shapes:
            size = int(np.prod(shape))
            self._grad_w.append(self._grad[offset : offset + size].reshape(shape))
            offset += size
        for shape in b_shapes:
            size = int(np.prod(shape))
            self._grad_b.append(self._grad[offset : offset + size].reshape(shape))
            offset += size

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "MlpNetwork":
        dup = MlpNetwork(self.weights, self.biases)
        dup.adam_m[...] = self.adam_m
        dup.adam_v[...] = self.adam_v
        dup.adam_t = self.adam_t
        return dup

    def restore(self, other: "MlpNetwork") -> None:
        self.flat[...] = other.flat
        self.adam_m[...] = other.adam_m
        self.adam_v[...] = other.adam_v
        self.adam_t = other.adam_t

    def all_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.flat)))


def he_init(config: MlpConfig, space_dim: int, rng: np.random.Generator) -> MlpNetwork:
    """Fresh network with N(0, 2/fan_in) weights and zero biases."""
    dims = [space_dim] + [config.hidden_width] * config.hidden_layers + [1]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        scale = np.sqrt(2.0 / fan_in)
        weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpNetwork(weights, biases)


def _hidden_pass(net: MlpNetwork, Xn: np.ndarray, want_caches: bool):
    """Shared forward walk; optionally keeps z and Phi(z) per hidden layer."""
    a = Xn
    last = net.n_layers - 1
    zs = [] if want_caches else None
    cdfs = [] if want_caches else None
    acts = [Xn] if want_caches else None
    for l in range(last):
        z = a @ net.weights[l] + net.biases[l]
        cdf = 0.5 * (1.0 + erf(z * (1.0 / _SQRT2)))
        a = z * cdf
        if want_caches:
            zs.append(z)
            cdfs.append(cdf)
            acts.append(a)
    out = a @ net.weights[last] + net.biases[last]
    if want_caches:
        acts.append(out)
    return out[:, 0], zs, cdfs, acts


def _forward_normalized(net: MlpNetwork, Xn: np.ndarray) -> np.ndarray:
    """Batched forward pass in normalised units. Xn: (M, N) -> (M,)."""
    return _hidden_pass(net, Xn, want_caches=False)[0]


def forward(net: MlpNetwork, norm: Normalizer, x) -> float:
    """Predicted raw cost at one parameter vector."""
    x = np.asarray(x, dtype=float)
    if x.shape != (net.input_dim,):
        raise ValueError(f"expected input of length {net.input_dim}, got {x.shape}")
    out = _forward_normalized(net, norm.norm_inputs(x)[None, :])[0]
    return float(norm.denorm_cost(out))


def input_gradient(net: MlpNetwork, norm: Normalizer, x) -> np.ndarray:
    """Analytic gradient of forward() with respect to x (chain rule throughout)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (net.input_dim,):
        raise ValueError(f"expected input of length {net.input_dim}, got {x.shape}")
    _, zs, cdfs, _ = _hidden_pass(net, norm.norm_inputs(x)[None, :], want_caches=True)
    last = net.n_layers - 1
    v = net.weights[last][:, 0]
    for l in range(last - 1, -1, -1):
        z = zs[l][0]
        dgelu = cdfs[l][0] + z * (_INV_SQRT_2PI * np.exp(-0.5 * z * z))
        v = net.weights[l] @ (dgelu * v)
    return v * (norm.cost_std / norm.input_std)


@dataclass
class TrainReport:
    iterations: int
    initial_loss: float
    final_loss: float


def should_continue(previous_loss: float, new_loss: float, ratio: float) -> bool:
    """Early-stopping rule: continue only if the loss fell below ratio * previous."""
    return new_loss < ratio * previous_loss


def _full_loss(net: MlpNetwork, Xn: np.ndarray, yn: np.ndarray, l2: float) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        pred = _forward_normalized(net, Xn)
        mse = float(np.mean((pred - yn) ** 2))
        reg = l2 * float(np.dot(net.flat[: net.n_weight_params], net.flat[: net.n_weight_params]))
    return mse + reg


def _batch_gradients(net: MlpNetwork, Xn: np.ndarray, yn: np.ndarray, l2: float) -> np.ndarray:
    """Backprop of batch MSE into the network's flat gradient buffer."""
    pred, zs, cdfs, acts = _hidden_pass(net, Xn, want_caches=True)
    batch = Xn.shape[0]
    delta = ((2.0 / batch) * (pred - yn))[:, None]
    last = net.n_layers - 1
    for l in range(last, -1, -1):
        np.matmul(acts[l].T, delta, out=net._grad_w[l])
        np.sum(delta, axis=0, out=net._grad_b[l])
        if l > 0:
            z = zs[l - 1]
            dgelu = cdfs[l - 1] + z * (_INV_SQRT_2PI * np.exp(-0.5 * z * z))
            delta = (delta @ net.weights[l].T) * dgelu
    # L2 acts on weights only; they sit at the front of the flat layout
    n_w = net.n_weight_params
    net._grad[:n_w] += (2.0 * l2) * net.flat[:n_w]
    return net._grad


def _adam_step(net: MlpNetwork, grad: np.ndarray, config: MlpConfig) -> None:
    net.adam_t += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    m, v, s1, s2 = net.adam_m, net.adam_v, net._scratch1, net._scratch2
    m *= b1
    np.multiply(grad, 1.0 - b1, out=s1)
    m += s1
    v *= b2
    np.multiply(grad, grad, out=s1)
    s1 *= 1.0 - b2
    v += s1
    # bias-corrected update, all in scratch space
    np.divide(v, 1.0 - b2**net.adam_t, out=s2)
    np.sqrt(s2, out=s2)
    s2 += config.adam_epsilon
    np.divide(m, 1.0 - b1**net.adam_t, out=s1)
    s1 /= s2
    s1 *= config.adam_step
    net.flat -= s1


def _run_epochs(net: MlpNetwork, Xn, yn, config: MlpConfig, rng: np.random.Generator) -> None:
    """One training iteration: epochs_per_iteration shuffled passes of Adam."""
    m = Xn.shape[0]
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(config.epochs_per_iteration):
            order = rng.permutation(m)
            for start in range(0, m, config.batch_size):
                idx = order[start : start + config.batch_size]
                grad = _batch_gradients(net, Xn[idx], yn[idx], config.l2_coefficient)
                _adam_step(net, grad, config)


def train(
    net: MlpNetwork,
    norm: Normalizer,
    dataset: Dataset,
    config: MlpConfig,
    rng: np.random.Generator,
) -> TrainReport:
    """Threshold-early-stopped Adam training on the full dataset.

    Bad observations take part at their recorded failure cost, so the network
    learns the failure plateau. Raises TrainingDivergedError (after rolling the
    network back to its entry state) if the loss ever goes non-finite.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    Xn = norm.norm_inputs(dataset.params_matrix())
    yn = norm.norm_cost(dataset.raw_costs())
    snapshot = net.copy()

    loss = _full_loss(net, Xn, yn, config.l2_coefficient)
    if not np.isfinite(loss):
        net.restore(snapshot)
        raise TrainingDivergedError("training diverged: non-finite loss at start")
    initial_loss = loss
    iterations = 0
    while iterations < config.max_training_iterations:
        _run_epochs(net, Xn, yn, config, rng)
        iterations += 1
        new_loss = _full_loss(net, Xn, yn, config.l2_coefficient)
        if not np.isfinite(new_loss):
            net.restore(snapshot)
            raise TrainingDivergedError("training diverged: non-finite loss")
        go_on = should_continue(loss, new_loss, config.continue_threshold_ratio)
        loss = new_loss
        if not go_on:
            break
    return TrainReport(iterations=iterations, initial_loss=initial_loss, final_loss=loss)


def save_checkpoint(path, net: MlpNetwork, config: MlpConfig, norm: Normalizer) -> None:
    """Debug/replay checkpoint: {config, normalizer, layers:[{w,b}]}."""
    payload = {
        "config": asdict(config),
        "normalizer": {
            "input_mean": norm.input_mean.tolist(),
            "input_std": norm.input_std.tolist(),
            "cost_mean": norm.cost_mean,
            "cost_std": norm.cost_std,
        },
        "layers": [
            {"w": w.tolist(), "b": b.tolist()} for w, b in zip(net.weights, net.biases)
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_checkpoint(path) -> tuple[MlpNetwork, MlpConfig, Normalizer]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    config = MlpConfig(**payload["config"])
    norm = Normalizer(**payload["normalizer"])
    weights = [np.asarray(layer["w"], dtype=float) for layer in payload["layers"]]
    biases = [np.asarray(layer["b"], dtype=float) for layer in payload["layers"]]
    return MlpNetwork(weights, biases), config, norm
