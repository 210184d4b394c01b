"""Desk-scale neural substrate: synthetic tasks, a two-layer MLP with manual
forward/backward, SGD fine-tuning from a shared base, and accuracy evaluation.

Everything is float64 and bitwise reproducible given seeds.  Tasks are
nearest-prototype classification problems: each task draws its own class
prototypes from a seeded standard normal and perturbs them with Gaussian
noise, so tasks are easy in isolation but mutually conflicting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyBatch, InvalidHyper, InvalidSpec, ShapeMismatch
from .tensor import ParamSet

PARAM_NAMES = ("layer1.bias", "layer1.weight", "layer2.bias", "layer2.weight")


@dataclass(frozen=True)
class SyntheticTaskSpec:
    task_id: str
    input_dim: int = 16
    num_classes: int = 8
    prototype_seed: int = 0
    noise_sigma: float = 0.3
    train_size: int = 2048
    test_size: int = 512

    def __post_init__(self):
        if not self.task_id:
            raise InvalidSpec("task_id must be non-empty")
        if self.input_dim < 1 or self.num_classes < 2:
            raise InvalidSpec("need input_dim >= 1 and num_classes >= 2")
        if self.noise_sigma < 0:
            raise InvalidSpec("noise_sigma must be non-negative")
        if self.train_size < 1 or self.test_size < 1:
            raise InvalidSpec("train_size and test_size must be positive")


@dataclass(frozen=True)
class SampleBatch:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.labels.ndim != 1:
            raise ShapeMismatch("inputs must be (n, d) and labels (n,)")
        if self.inputs.shape[0] == 0:
            raise EmptyBatch("batch must contain at least one sample")
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ShapeMismatch("inputs and labels must share the sample count")
        if np.any(self.labels < 0):
            raise ShapeMismatch("labels must be non-negative class indices")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def take(self, indices: np.ndarray) -> "SampleBatch":
        return SampleBatch(self.inputs[indices], self.labels[indices])


def class_prototypes(spec: SyntheticTaskSpec) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(spec.prototype_seed).spawn(3)[0])
    return rng.standard_normal((spec.num_classes, spec.input_dim))


def gen_task(spec: SyntheticTaskSpec) -> tuple[SampleBatch, SampleBatch]:
    """Deterministic train/test batches; test uses an independent noise stream."""
    streams = np.random.SeedSequence(spec.prototype_seed).spawn(3)
    proto_rng = np.random.default_rng(streams[0])
    prototypes = proto_rng.standard_normal((spec.num_classes, spec.input_dim))

    def build(size: int, rng: np.random.Generator) -> SampleBatch:
        labels = rng.permutation(np.arange(size) % spec.num_classes)
        noise = rng.standard_normal((size, spec.input_dim))
        return SampleBatch(prototypes[labels] + spec.noise_sigma * noise, labels)

    train = build(spec.train_size, np.random.default_rng(streams[1]))
    test = build(spec.test_size, np.random.default_rng(streams[2]))
    return train, test


def concat_batches(batches: list[SampleBatch]) -> SampleBatch:
    return SampleBatch(
        np.concatenate([b.inputs for b in batches]),
        np.concatenate([b.labels for b in batches]),
    )


def init_mlp(input_dim: int, hidden_dim: int, num_classes: int, seed: int) -> ParamSet:
    """Random two-layer ReLU MLP parameters (1/sqrt(fan-in) weight scale)."""
    rng = np.random.default_rng(seed)
    return ParamSet(
        {
            "layer1.weight": rng.standard_normal((input_dim, hidden_dim))
            / np.sqrt(input_dim),
            "layer1.bias": np.zeros(hidden_dim),
            "layer2.weight": rng.standard_normal((hidden_dim, num_classes))
            / np.sqrt(hidden_dim),
            "layer2.bias": np.zeros(num_classes),
        },
        copy=False,
    )


def _unpack(params: ParamSet):
    try:
        w1 = params["layer1.weight"]
        b1 = params["layer1.bias"]
        w2 = params["layer2.weight"]
        b2 = params["layer2.bias"]
    except KeyError as exc:
        raise ShapeMismatch(f"MLP parameter tensor missing: {exc}") from exc
    if w1.shape[1] != b1.shape[0] or w2.shape[0] != b1.shape[0] or w2.shape[1] != b2.shape[0]:
        raise ShapeMismatch("inconsistent MLP parameter shapes")
    return w1, b1, w2, b2


def _forward(w1, b1, w2, b2, x):
    z1 = x @ w1 + b1
    a1 = np.maximum(z1, 0.0)
    return z1, a1, a1 @ w2 + b2


def _cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    m = logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
    return float(np.mean(lse - logits[np.arange(len(labels)), labels]))


def _softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _check_batch(w1, w2, batch: SampleBatch) -> None:
    if batch.inputs.shape[1] != w1.shape[0]:
        raise ShapeMismatch("input dimension does not match layer1.weight")
    if np.any(batch.labels >= w2.shape[1]):
        raise ShapeMismatch("label outside the class range of layer2")


def forward_loss(params: ParamSet, batch: SampleBatch) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and the logits for a batch."""
    w1, b1, w2, b2 = _unpack(params)
    _check_batch(w1, w2, batch)
    _, _, logits = _forward(w1, b1, w2, b2, batch.inputs)
    return _cross_entropy(logits, batch.labels), logits


def _backward(w1, b1, w2, b2, batch: SampleBatch) -> dict[str, np.ndarray]:
    x, y = batch.inputs, batch.labels
    n = x.shape[0]
    z1, a1, logits = _forward(w1, b1, w2, b2, x)
    dlogits = _softmax(logits)
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    # ReLU subgradient at exactly 0 is taken as 0.
    da1 = dlogits @ w2.T
    dz1 = np.where(z1 > 0.0, da1, 0.0)
    return {
        "layer1.weight": x.T @ dz1,
        "layer1.bias": dz1.sum(axis=0),
        "layer2.weight": a1.T @ dlogits,
        "layer2.bias": dlogits.sum(axis=0),
    }


def backward(params: ParamSet, batch: SampleBatch) -> ParamSet:
    """Exact analytic gradient of the mean batch loss, same schema as params."""
    w1, b1, w2, b2 = _unpack(params)
    _check_batch(w1, w2, batch)
    return ParamSet(_backward(w1, b1, w2, b2, batch), copy=False)


def sgd_finetune(
    init: ParamSet,
    train: SampleBatch,
    steps: int = 300,
    lr: float = 0.05,
    batch_size: int = 64,
    seed: int = 0,
) -> ParamSet:
    """Plain minibatch SGD from ``init``; deterministic given the seed."""
    if steps < 0 or lr <= 0 or batch_size < 1:
        raise InvalidHyper("need steps >= 0, lr > 0, batch_size >= 1")
    work = {name: arr.copy() for name, arr in init.items()}
    w1, b1, w2, b2 = _unpack(init)
    _check_batch(w1, w2, train)
    rng = np.random.default_rng(seed)
    n = len(train)
    take = min(batch_size, n)
    for _ in range(steps):
        idx = rng.choice(n, size=take, replace=False)
        grads = _backward(
            work["layer1.weight"],
            work["layer1.bias"],
            work["layer2.weight"],
            work["layer2.bias"],
            train.take(idx),
        )
        for name in work:
            work[name] -= lr * grads[name]
    return ParamSet(work, copy=False)


def evaluate(params: ParamSet, test: SampleBatch) -> float:
    """Fraction of argmax-correct predictions; argmax ties go to the lowest class."""
    w1, b1, w2, b2 = _unpack(params)
    _check_batch(w1, w2, test)
    _, _, logits = _forward(w1, b1, w2, b2, test.inputs)
    return float(np.mean(np.argmax(logits, axis=1) == test.labels))


@dataclass(frozen=True)
class BenchmarkSpec:
    """A multi-task synthetic benchmark sharing one pretrained base.

    Fine-tuning defaults to a tenth of the pretraining rate: merged models
    only behave when the per-task deltas stay small relative to the base.
    ``mixture_fractions`` limits how much of each task's training set the
    pretraining mixture sees (the forgetting scenario wants a base with only
    weak ability on the target task).
    """

    num_tasks: int = 4
    input_dim: int = 16
    hidden_dim: int = 32
    num_classes: int = 8
    noise_sigma: float = 0.3
    train_size: int = 2048
    test_size: int = 512
    pretrain_steps: int = 150
    finetune_steps: int = 300
    pretrain_lr: float = 0.05
    finetune_lr: float = 0.005
    batch_size: int = 64
    mixture_fractions: tuple[float, ...] | None = None
    task_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if self.num_tasks < 2:
            raise InvalidSpec("benchmark needs at least 2 tasks")
        ids = self.task_ids or tuple(f"task{i}" for i in range(self.num_tasks))
        if len(ids) != self.num_tasks or len(set(ids)) != len(ids):
            raise InvalidSpec("task_ids must be unique and match num_tasks")
        object.__setattr__(self, "task_ids", tuple(ids))
        if self.mixture_fractions is not None:
            fracs = tuple(float(f) for f in self.mixture_fractions)
            if len(fracs) != self.num_tasks or any(not (0 < f <= 1) for f in fracs):
                raise InvalidSpec("mixture_fractions must be num_tasks values in (0, 1]")
            object.__setattr__(self, "mixture_fractions", fracs)


@dataclass
class BenchmarkRun:
    spec: BenchmarkSpec
    base: ParamSet
    task_specs: list[SyntheticTaskSpec]
    trains: list[SampleBatch]
    tests: list[SampleBatch]
    finetuned: list[ParamSet] = field(default_factory=list)

    @property
    def task_ids(self) -> tuple[str, ...]:
        return self.spec.task_ids

    def mixture_test(self) -> SampleBatch:
        return concat_batches(self.tests)


def build_benchmark(spec: BenchmarkSpec, seed: int) -> BenchmarkRun:
    """Generate tasks, pretrain the shared base on their mixture, fine-tune each.

    The base is trained on the concatenation of all task training sets so
    that the fine-tuned models genuinely share structure, then every task
    fine-tunes from that base with its own seeded SGD stream.
    """
    state = np.random.SeedSequence(seed).generate_state(2 * spec.num_tasks + 2, np.uint64)
    task_specs = [
        SyntheticTaskSpec(
            task_id=spec.task_ids[i],
            input_dim=spec.input_dim,
            num_classes=spec.num_classes,
            prototype_seed=int(state[i]),
            noise_sigma=spec.noise_sigma,
            train_size=spec.train_size,
            test_size=spec.test_size,
        )
        for i in range(spec.num_tasks)
    ]
    pairs = [gen_task(ts) for ts in task_specs]
    trains = [p[0] for p in pairs]
    tests = [p[1] for p in pairs]

    if spec.mixture_fractions is None:
        mixture_parts = trains
    else:
        mixture_parts = [
            train.take(np.arange(max(1, int(frac * len(train)))))
            for train, frac in zip(trains, spec.mixture_fractions)
        ]
    init = init_mlp(spec.input_dim, spec.hidden_dim, spec.num_classes, int(state[-2]))
    base = sgd_finetune(
        init,
        concat_batches(mixture_parts),
        steps=spec.pretrain_steps,
        lr=spec.pretrain_lr,
        batch_size=spec.batch_size,
        seed=int(state[-1]),
    )
    run = BenchmarkRun(spec, base, task_specs, trains, tests)
    for i, train in enumerate(trains):
        run.finetuned.append(
            sgd_finetune(
                base,
                train,
                steps=spec.finetune_steps,
                lr=spec.finetune_lr,
                batch_size=spec.batch_size,
                seed=int(state[spec.num_tasks + i]),
            )
        )
    return run


def batch_to_paramset(batch: SampleBatch) -> ParamSet:
    """Dataset fixture as tensors (labels stored as integral float64)."""
    return ParamSet(
        {"inputs": batch.inputs, "labels": batch.labels.astype(np.float64)}
    )


def paramset_to_batch(ps: ParamSet) -> SampleBatch:
    if "inputs" not in ps or "labels" not in ps:
        raise ShapeMismatch("dataset fixture needs 'inputs' and 'labels' tensors")
    return SampleBatch(np.asarray(ps["inputs"]), ps["labels"].astype(np.int64))
