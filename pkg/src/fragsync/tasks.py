"""Desk-scale learning tasks with non-IID worker shards.

Three task kinds stand in for large-scale language modeling: least-squares
regression, multinomial logistic regression, and a tiny tanh MLP classifier.
Each provides the exact analytic gradient of its minibatch loss, a held-out
validation split, and a per-worker data shard. Classification shards are made
non-IID by drawing per-worker label proportions from a Dirichlet; regression
shards by shifting each worker's feature distribution. The concentration
parameter ``noniid_alpha`` controls both (``inf`` = IID).

Validation "perplexity" is exp(mean loss) so threshold-crossing logic works
the same way it does for language models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

_TRUTH_STREAM = 21
_DATA_STREAM = 22
_SHARD_SEED_STREAM = 23
_VAL_STREAM = 24
_INIT_STREAM = 11

TASK_KINDS = ("least_squares", "logistic_regression", "mlp_classifier")


@dataclass(frozen=True)
class TaskConfig:
    kind: str = "logistic_regression"
    dim: int = 32
    num_classes: int = 16
    hidden_sizes: tuple[int, ...] = ()
    num_layers: int = 12
    num_workers: int = 4
    samples_per_worker: int = 512
    val_samples: int = 1024
    batch_size: int = 8
    noise: float = 0.5
    noniid_alpha: float = math.inf
    seed: int = 0

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ConfigError(f"task: unknown kind {self.kind!r}, expected one of {TASK_KINDS}")
        if self.dim < 1:
            raise ConfigError(f"dim: must be >= 1, got {self.dim}")
        if self.num_workers < 1:
            raise ConfigError(f"num_workers: must be >= 1, got {self.num_workers}")
        if self.samples_per_worker < self.batch_size or self.batch_size < 1:
            raise ConfigError(
                f"batch_size: need 1 <= batch_size <= samples_per_worker, "
                f"got {self.batch_size} vs {self.samples_per_worker}"
            )
        if self.val_samples < 1:
            raise ConfigError(f"val_samples: must be >= 1, got {self.val_samples}")
        if self.noniid_alpha <= 0:
            raise ConfigError(f"noniid_alpha: must be > 0 (or inf), got {self.noniid_alpha}")


@dataclass
class WorkerShard:
    worker_id: int
    features: np.ndarray  # (n, dim)
    targets: np.ndarray  # (n,) float targets or int labels
    seed: int  # root of this shard's minibatch stream


@dataclass(frozen=True)
class EvalReport:
    step: int
    val_loss: float
    val_ppl: float


def _even_layer_sizes(total: int, num_layers: int) -> tuple[int, ...]:
    if num_layers < 1 or num_layers > total:
        raise ConfigError(
            f"num_layers: must be in [1, parameter count {total}], got {num_layers}"
        )
    base, extra = divmod(total, num_layers)
    return tuple(base + 1 if i < extra else base for i in range(num_layers))


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _cross_entropy_and_dlogits(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    n = logits.shape[0]
    probs = _softmax(logits)
    loss = float(-np.mean(np.log(probs[np.arange(n), labels] + 1e-300)))
    dlogits = probs
    dlogits[np.arange(n), labels] -= 1.0
    return loss, dlogits / n


class SyntheticTask:
    """Base: holds config, data shards, validation split and the flat-parameter
    loss/gradient oracle of one task kind."""

    kind: str

    def __init__(self, config: TaskConfig):
        self.config = config
        self.layer_sizes: tuple[int, ...] = ()
        self.param_dim: int = 0
        self.shards: list[WorkerShard] = []
        self.val_features: np.ndarray | None = None
        self.val_targets: np.ndarray | None = None

    def loss_and_grad(self, params: np.ndarray, X: np.ndarray, y: np.ndarray):
        raise NotImplementedError

    def init_params(self, seed: int) -> np.ndarray:
        """Common starting point for every worker, derived from the run seed."""
        raise NotImplementedError

    def _finish(self, num_layers: int):
        self.layer_sizes = _even_layer_sizes(self.param_dim, num_layers)

    def _shard_seeds(self) -> list[int]:
        rng = np.random.default_rng((self.config.seed, _SHARD_SEED_STREAM))
        return [int(s) for s in rng.integers(0, 2**31 - 1, size=self.config.num_workers)]

    def _worker_shift(self, rng: np.random.Generator) -> np.ndarray:
        # Feature-distribution shift for regression-style non-IID; vanishes as
        # the concentration grows.
        alpha = self.config.noniid_alpha
        scale = 0.0 if math.isinf(alpha) else 1.0 / math.sqrt(alpha)
        return scale * rng.standard_normal(self.config.dim)

    def _label_proportions(self, rng: np.random.Generator) -> np.ndarray:
        c = self.config.num_classes
        alpha = self.config.noniid_alpha
        if math.isinf(alpha):
            return np.full(c, 1.0 / c)
        return rng.dirichlet(np.full(c, alpha))


class LeastSquaresTask(SyntheticTask):
    kind = "least_squares"

    def __init__(self, config: TaskConfig):
        super().__init__(config)
        self.param_dim = config.dim
        truth_rng = np.random.default_rng((config.seed, _TRUTH_STREAM))
        self.truth = truth_rng.standard_normal(config.dim)

        data_rng = np.random.default_rng((config.seed, _DATA_STREAM))
        seeds = self._shard_seeds()
        for m in range(config.num_workers):
            shift = self._worker_shift(data_rng)
            X = data_rng.standard_normal((config.samples_per_worker, config.dim)) + shift
            y = X @ self.truth + config.noise * data_rng.standard_normal(config.samples_per_worker)
            self.shards.append(WorkerShard(m, X, y, seeds[m]))

        val_rng = np.random.default_rng((config.seed, _VAL_STREAM))
        self.val_features = val_rng.standard_normal((config.val_samples, config.dim))
        self.val_targets = self.val_features @ self.truth + config.noise * val_rng.standard_normal(
            config.val_samples
        )
        self._finish(config.num_layers)

    def loss_and_grad(self, params, X, y):
        residual = X @ params - y
        loss = 0.5 * float(np.mean(residual**2))
        grad = X.T @ residual / X.shape[0]
        return loss, grad

    def init_params(self, seed: int) -> np.ndarray:
        return np.zeros(self.param_dim)


class _BlobClassificationMixin:
    """Gaussian class blobs with Dirichlet label mixtures per worker."""

    def _build_data(self):
        cfg = self.config
        truth_rng = np.random.default_rng((cfg.seed, _TRUTH_STREAM))
        # Class means roughly 2 apart in expectation, independent of dim.
        self.class_means = 2.0 * truth_rng.standard_normal((cfg.num_classes, cfg.dim)) / math.sqrt(cfg.dim)

        data_rng = np.random.default_rng((cfg.seed, _DATA_STREAM))
        seeds = self._shard_seeds()
        for m in range(cfg.num_workers):
            props = self._label_proportions(data_rng)
            labels = data_rng.choice(cfg.num_classes, size=cfg.samples_per_worker, p=props)
            X = self.class_means[labels] + cfg.noise * data_rng.standard_normal(
                (cfg.samples_per_worker, cfg.dim)
            )
            self.shards.append(WorkerShard(m, X, labels, seeds[m]))

        val_rng = np.random.default_rng((cfg.seed, _VAL_STREAM))
        val_labels = val_rng.integers(0, cfg.num_classes, size=cfg.val_samples)
        self.val_features = self.class_means[val_labels] + cfg.noise * val_rng.standard_normal(
            (cfg.val_samples, cfg.dim)
        )
        self.val_targets = val_labels


class LogisticRegressionTask(_BlobClassificationMixin, SyntheticTask):
    kind = "logistic_regression"

    def __init__(self, config: TaskConfig):
        super().__init__(config)
        self.param_dim = config.num_classes * config.dim
        self._build_data()
        self._finish(config.num_layers)

    def loss_and_grad(self, params, X, y):
        W = params.reshape(self.config.num_classes, self.config.dim)
        loss, dlogits = _cross_entropy_and_dlogits(X @ W.T, y)
        return loss, (dlogits.T @ X).reshape(-1)

    def init_params(self, seed: int) -> np.ndarray:
        return np.zeros(self.param_dim)


class MlpClassifierTask(_BlobClassificationMixin, SyntheticTask):
    kind = "mlp_classifier"

    def __init__(self, config: TaskConfig):
        super().__init__(config)
        if not config.hidden_sizes:
            raise ConfigError("hidden_sizes: mlp_classifier needs at least one hidden layer")
        self.dims = (config.dim, *config.hidden_sizes, config.num_classes)
        self.shapes = [
            (self.dims[i + 1], self.dims[i]) for i in range(len(self.dims) - 1)
        ]
        # One "layer" per parameter tensor: weight matrix then bias, per linear map.
        sizes = []
        for out_dim, in_dim in self.shapes:
            sizes.extend([out_dim * in_dim, out_dim])
        self.layer_sizes = tuple(sizes)
        self.param_dim = sum(sizes)
        self._build_data()

    def _unpack(self, params: np.ndarray):
        weights, biases, ofs = [], [], 0
        for out_dim, in_dim in self.shapes:
            weights.append(params[ofs : ofs + out_dim * in_dim].reshape(out_dim, in_dim))
            ofs += out_dim * in_dim
            biases.append(params[ofs : ofs + out_dim])
            ofs += out_dim
        return weights, biases

    def loss_and_grad(self, params, X, y):
        weights, biases = self._unpack(params)
        activations = [X]
        a = X
        for i, (W, b) in enumerate(zip(weights, biases)):
            z = a @ W.T + b
            a = z if i == len(weights) - 1 else np.tanh(z)
            activations.append(a)
        loss, delta = _cross_entropy_and_dlogits(activations[-1], y)

        grads = np.empty_like(params)
        ofs = params.shape[0]
        for i in range(len(weights) - 1, -1, -1):
            a_in = activations[i]
            gW = delta.T @ a_in
            gb = delta.sum(axis=0)
            ofs -= gb.shape[0]
            grads[ofs : ofs + gb.shape[0]] = gb
            ofs -= gW.size
            grads[ofs : ofs + gW.size] = gW.reshape(-1)
            if i > 0:
                delta = (delta @ weights[i]) * (1.0 - activations[i] ** 2)
        return loss, grads

    def init_params(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng((seed, _INIT_STREAM))
        chunks = []
        for out_dim, in_dim in self.shapes:
            chunks.append(rng.standard_normal(out_dim * in_dim) / math.sqrt(in_dim))
            chunks.append(np.zeros(out_dim))
        return np.concatenate(chunks)


def make_task(config: TaskConfig) -> SyntheticTask:
    """Build a task deterministically from its config (data, shards, val split)."""
    cls = {
        "least_squares": LeastSquaresTask,
        "logistic_regression": LogisticRegressionTask,
        "mlp_classifier": MlpClassifierTask,
    }[config.kind]
    return cls(config)


def minibatch_grad(
    task: SyntheticTask, shard: WorkerShard, params: np.ndarray, batch_seed
) -> tuple[float, np.ndarray]:
    """Exact analytic gradient of one minibatch loss; batch drawn with
    replacement, deterministic in ``batch_seed``."""
    rng = np.random.default_rng(batch_seed)
    idx = rng.integers(0, shard.features.shape[0], size=task.config.batch_size)
    return task.loss_and_grad(params, shard.features[idx], shard.targets[idx])


def evaluate(task: SyntheticTask, params: np.ndarray, step: int = 0) -> EvalReport:
    """Mean loss over the full validation split; perplexity = exp(loss)."""
    loss, _ = task.loss_and_grad(params, task.val_features, task.val_targets)
    try:
        ppl = math.exp(loss)
    except OverflowError:  # exp saturates in float64 well before loss does
        ppl = math.inf
    return EvalReport(step=step, val_loss=loss, val_ppl=ppl)


def label_distribution(shard: WorkerShard, num_classes: int) -> np.ndarray:
    """Empirical label frequencies of a classification shard."""
    counts = np.bincount(np.asarray(shard.targets, dtype=np.int64), minlength=num_classes)
    return counts / counts.sum()
