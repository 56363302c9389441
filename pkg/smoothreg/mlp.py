"""Two-hidden-layer ReLU regressor trained by SGD with momentum on augmented inputs.

Backpropagation is written out by hand for the squared loss
1/2 (f(x) - y)^2; parameters are float64 throughout.
"""
import copy
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from smoothreg import noise as noise_mod
from smoothreg.errors import ConfigError, DivergenceError
from smoothreg.noise import NoiseSpec

logger = logging.getLogger(__name__)

HIDDEN = (100, 100)
WEIGHT_DECAY_CANDIDATES = (1e-3, 1e-4, 1e-5)


class MlpModel:
    """Fully connected ReLU network [D, *hidden, 1] with Kaiming fan-in init."""

    def __init__(self, dim: int, hidden: Sequence[int] = HIDDEN, rng: Optional[np.random.Generator] = None):
        self.widths = [int(dim), *[int(h) for h in hidden], 1]
        self.weights: List[np.ndarray] = []
        self.biases: List[np.ndarray] = []
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            if rng is None:
                W = np.zeros((fan_out, fan_in))
            else:
                W = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
            self.weights.append(W)
            self.biases.append(np.zeros(fan_out))

    @property
    def dim(self) -> int:
        return self.widths[0]

    def copy(self) -> "MlpModel":
        return copy.deepcopy(self)

    def parameters(self) -> List[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def set_flat(self, flat: np.ndarray):
        offset = 0
        for p in self.parameters():
            p[...] = flat[offset:offset + p.size].reshape(p.shape)
            offset += p.size

    def _forward_cache(self, X: np.ndarray):
        activations = [X]
        preacts = []
        h = X
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W.T + b
            preacts.append(z)
            h = z if i == len(self.weights) - 1 else np.maximum(z, 0.0)
            activations.append(h)
        return activations, preacts

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        activations, _ = self._forward_cache(X)
        return activations[-1][:, 0]

    def forward(self, x) -> float:
        return float(self.predict(np.atleast_1d(np.asarray(x, dtype=float)))[0])

    def preactivations(self, X) -> List[np.ndarray]:
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        return self._forward_cache(X)[1][:-1]

    def loss_and_grads(self, X, y) -> Tuple[float, List[np.ndarray]]:
        """Mean of 1/2 (f(x) - y)^2 over the rows and its gradient per parameter."""
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        y = np.asarray(y, dtype=float).reshape(-1)
        activations, preacts = self._forward_cache(X)
        resid = activations[-1][:, 0] - y
        loss = 0.5 * float(np.mean(resid ** 2))
        delta = resid[:, None] / len(y)
        grads_w, grads_b = [], []
        for i in range(len(self.weights) - 1, -1, -1):
            grads_w.append(delta.T @ activations[i])
            grads_b.append(delta.sum(axis=0))
            if i > 0:
                delta = (delta @ self.weights[i]) * (preacts[i - 1] > 0.0)
        grads_w.reverse()
        grads_b.reverse()
        return loss, [g for pair in zip(grads_w, grads_b) for g in pair]

    def to_arrays(self) -> dict:
        out = {"widths": np.asarray(self.widths)}
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            out[f"W{i}"] = W
            out[f"b{i}"] = b
        return out

    @classmethod
    def from_arrays(cls, arrays) -> "MlpModel":
        widths = [int(w) for w in arrays["widths"]]
        model = cls(widths[0], widths[1:-1])
        for i in range(len(model.weights)):
            model.weights[i] = np.array(arrays[f"W{i}"], dtype=float)
            model.biases[i] = np.array(arrays[f"b{i}"], dtype=float)
        return model


def forward(model: MlpModel, x) -> float:
    """ReLU-ReLU-linear forward pass at a single point."""
    return model.forward(x)


@dataclass(frozen=True)
class SgdConfig:
    """SGD with PyTorch-style momentum and coupled weight decay.

    ``aug_subsample`` augmentations are drawn per batch element from the
    stored list; ``eval_augmentations`` = 0 validates with h itself,
    otherwise with the average over that many stored augmentations.
    ``loss`` is "per_augmentation" (L'_n) or "averaged" (L_n on the
    subsampled average).
    """
    lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 10
    weight_decay: float = 0.0
    max_iters: int = 100_000
    eval_every: int = 200
    seed: int = 0
    aug_subsample: int = 8
    eval_augmentations: int = 0
    keep_best: bool = True
    loss: str = "per_augmentation"
    divergence_threshold: float = 1e6

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.batch_size < 1 or self.max_iters < 0 or self.eval_every < 1 or self.aug_subsample < 1:
            raise ConfigError("batch_size, eval_every and aug_subsample must be >= 1")
        if self.loss not in ("per_augmentation", "averaged"):
            raise ConfigError(f"unknown loss {self.loss!r}")

    @classmethod
    def early_stopping(cls, **overrides) -> "SgdConfig":
        """No weight decay, 100,000 iterations, best validation snapshot."""
        base = dict(weight_decay=0.0, max_iters=100_000, keep_best=True)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def with_weight_decay(cls, weight_decay: float = 1e-4, **overrides) -> "SgdConfig":
        """Constant weight decay, 10,000 iterations, final model."""
        base = dict(weight_decay=weight_decay, max_iters=10_000, keep_best=False)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    model: MlpModel
    best_iter: int
    train_curve: List[Tuple[int, float]] = field(default_factory=list)
    val_curve: List[Tuple[int, float]] = field(default_factory=list)
    noise_used: Optional[np.ndarray] = None

    @property
    def best_val(self) -> float:
        return dict(self.val_curve).get(self.best_iter, math.nan)


def smoothed_predict(model: MlpModel, X, noise: Optional[np.ndarray], count: int) -> np.ndarray:
    """(1/count) sum_k h(x + eps_k) over the first ``count`` stored augmentations; h(x) if count = 0."""
    X = np.asarray(X, dtype=float).reshape(-1, model.dim)
    if count <= 0 or noise is None:
        return model.predict(X)
    eps = noise[:count]
    aug = (X[:, None, :] + eps[None, :, :]).reshape(-1, model.dim)
    return model.predict(aug).reshape(len(X), len(eps)).mean(axis=1)


def train_augmented(model: MlpModel, X, y, noise: NoiseSpec, N: int, cfg: SgdConfig,
                    val_set: Optional[Tuple[np.ndarray, np.ndarray]] = None,
                    rng: Optional[np.random.Generator] = None) -> TrainResult:
    """Minibatch SGD with momentum on randomly smoothed inputs.

    N augmentations are drawn once; each step resamples ``aug_subsample`` of
    them per batch element. Validation runs every ``eval_every`` steps.

    Raises:
        DivergenceError: if the minibatch loss exceeds the threshold or is not finite.
    """
    if N < 1:
        raise ConfigError(f"need N >= 1 augmentations, got {N}")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    X = np.asarray(X, dtype=float).reshape(-1, model.dim)
    y = np.asarray(y, dtype=float)
    n = len(y)
    eps = noise_mod.sample(noise, N, rng)
    A = min(cfg.aug_subsample, N)
    params = model.parameters()
    velocity = [np.zeros_like(p) for p in params]
    result = TrainResult(model=model, best_iter=-1, noise_used=eps)
    best_val = math.inf
    best_state = None

    def evaluate(it):
        nonlocal best_val, best_state
        if val_set is None:
            return
        pred = smoothed_predict(model, val_set[0], eps, cfg.eval_augmentations)
        val = float(np.mean((pred - val_set[1]) ** 2))
        result.val_curve.append((it, val))
        if val < best_val:
            best_val = val
            result.best_iter = it
            if cfg.keep_best:
                best_state = model.get_flat()

    evaluate(0)
    batch = min(cfg.batch_size, n)
    for it in range(1, cfg.max_iters + 1):
        idx = rng.choice(n, size=batch, replace=False)
        picks = rng.integers(0, N, size=(batch, A))
        xb = (X[idx][:, None, :] + eps[picks]).reshape(-1, model.dim)
        if cfg.loss == "per_augmentation":
            loss, grads = model.loss_and_grads(xb, np.repeat(y[idx], A))
        else:
            loss, grads = _averaged_loss_and_grads(model, xb, y[idx], A)
        if not np.isfinite(loss) or loss > cfg.divergence_threshold:
            raise DivergenceError(f"training loss {loss:.4g} at iteration {it}")
        for p, g, v in zip(params, grads, velocity):
            v *= cfg.momentum
            v += g + cfg.weight_decay * p
            p -= cfg.lr * v
        if it % cfg.eval_every == 0 or it == cfg.max_iters:
            result.train_curve.append((it, loss))
            evaluate(it)

    if cfg.keep_best and best_state is not None:
        model.set_flat(best_state)
    elif not cfg.keep_best:
        result.best_iter = cfg.max_iters
    logger.debug(f"train_augmented: best_iter={result.best_iter} best_val={best_val:.4e}")
    return result


def _averaged_loss_and_grads(model: MlpModel, xb: np.ndarray, yb: np.ndarray, A: int):
    """1/2 (mean_a h(x + eps_a) - y)^2 averaged over the batch, via the chain rule."""
    activations, preacts = model._forward_cache(xb)
    out = activations[-1][:, 0].reshape(len(yb), A)
    resid = out.mean(axis=1) - yb
    loss = 0.5 * float(np.mean(resid ** 2))
    delta = (np.repeat(resid, A) / (A * len(yb)))[:, None]
    grads_w, grads_b = [], []
    for i in range(len(model.weights) - 1, -1, -1):
        grads_w.append(delta.T @ activations[i])
        grads_b.append(delta.sum(axis=0))
        if i > 0:
            delta = (delta @ model.weights[i]) * (preacts[i - 1] > 0.0)
    grads_w.reverse()
    grads_b.reverse()
    return loss, [g for pair in zip(grads_w, grads_b) for g in pair]


def select_weight_decay(dim: int, X, y, noise: NoiseSpec, N: int, base: SgdConfig,
                        val_set: Tuple[np.ndarray, np.ndarray], rng_seed: int,
                        candidates: Sequence[float] = WEIGHT_DECAY_CANDIDATES,
                        hidden: Sequence[int] = HIDDEN) -> Tuple[float, TrainResult]:
    """Train one model per weight-decay candidate and keep the lowest final validation loss."""
    best: Optional[Tuple[float, float, TrainResult]] = None
    for wd in candidates:
        rng = np.random.default_rng(rng_seed)
        model = MlpModel(dim, hidden, rng=rng)
        cfg = SgdConfig(**{**base.to_dict(), "weight_decay": wd, "keep_best": False})
        res = train_augmented(model, X, y, noise, N, cfg, val_set, rng)
        val = res.val_curve[-1][1] if res.val_curve else math.inf
        if best is None or val < best[0]:
            best = (val, wd, res)
    return best[1], best[2]


def grad_check(model: MlpModel, x, y: float, h: float = 1e-5) -> float:
    """Max relative error between backprop and central differences of 1/2 (f(x) - y)^2."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    _, grads = model.loss_and_grads(x[None, :], [y])
    analytic = np.concatenate([g.ravel() for g in grads])
    flat = model.get_flat()
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        model.set_flat(flat)
        up = 0.5 * (model.forward(x) - y) ** 2
        flat[i] = orig - h
        model.set_flat(flat)
        down = 0.5 * (model.forward(x) - y) ** 2
        flat[i] = orig
        numeric[i] = (up - down) / (2.0 * h)
    model.set_flat(flat)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / scale))


def min_preactivation_margin(model: MlpModel, x) -> float:
    """Smallest |pre-activation| over hidden units at x; small values sit near a ReLU kink."""
    pre = model.preactivations(np.atleast_1d(np.asarray(x, dtype=float)))
    return float(min(np.abs(p).min() for p in pre))
