"""Desk-scale classifier zoo, cut-point partitioning, and split inference.

A model is a flat list of layers. Partitioning at index n (1-based,
inclusive) yields a head covering layers 1..n and a tail covering
n+1..L; running head then tail must match running the full stack.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .errors import ConfigurationError, DataError, PartitionError, ShapeError

CHECKPOINT_MANIFEST = "manifest.json"


@dataclass
class LayerSpec:
    index: int  # 1-based, consecutive
    name: str
    kind: str
    output_shape: tuple[int, ...]


@dataclass
class ActivationTensor:
    """Feature tensor crossing the device/server boundary.

    source_layer is trusted-side bookkeeping; the attacker-facing views
    built from wire bytes never carry it.
    """

    values: np.ndarray
    source_layer: int | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.values).all())


@dataclass
class ClassificationResult:
    predicted_class: int
    confidence: float
    full_distribution: np.ndarray


@dataclass
class ModelSpec:
    model_id: str
    layers: list[LayerSpec]
    num_classes: int
    input_shape: tuple[int, int, int]
    baseline_accuracy: float | None = None
    seed: int | None = None
    impl: list[nn.Layer] = field(default_factory=list, repr=False)

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def copy(self) -> "ModelSpec":
        return ModelSpec(
            model_id=self.model_id,
            layers=[LayerSpec(s.index, s.name, s.kind, tuple(s.output_shape))
                    for s in self.layers],
            num_classes=self.num_classes,
            input_shape=tuple(self.input_shape),
            baseline_accuracy=self.baseline_accuracy,
            seed=self.seed,
            impl=[l.copy() for l in self.impl],
        )


@dataclass
class ModelPartition:
    model_id: str
    cut_index: int
    head: list[nn.Layer]
    tail: list[nn.Layer]
    head_specs: list[LayerSpec]
    tail_specs: list[LayerSpec]
    input_shape: tuple[int, int, int]
    num_classes: int

    @property
    def cut_shape(self) -> tuple[int, ...]:
        return tuple(self.head_specs[-1].output_shape)


def _tinynet_layers(rng: np.random.Generator) -> list[nn.Layer]:
    return [
        nn.Conv2D("conv1", 3, 16, rng=rng),
        nn.ReLU("relu1"),
        nn.MaxPool2D("pool1"),
        nn.Conv2D("conv2", 16, 32, rng=rng),
        nn.ReLU("relu2"),
        nn.MaxPool2D("pool2"),
        nn.Conv2D("conv3", 32, 64, rng=rng),
        nn.ReLU("relu3"),
        nn.MaxPool2D("pool3"),
        nn.Flatten("flatten"),
        nn.Dense("dense1", 4 * 4 * 64, 10, rng=rng),
        nn.Softmax("softmax"),
    ]


def _tinydwnet_layers(rng: np.random.Generator) -> list[nn.Layer]:
    """Depthwise-separable variant of tinynet, mobilenet-flavored."""
    return [
        nn.Conv2D("conv1", 3, 16, rng=rng),
        nn.ReLU("relu1"),
        nn.MaxPool2D("pool1"),
        nn.DepthwiseConv2D("dw1", 16, rng=rng),
        nn.ReLU("relu2"),
        nn.Conv2D("pw1", 16, 32, kernel=1, pad=0, rng=rng),
        nn.ReLU("relu3"),
        nn.MaxPool2D("pool2"),
        nn.DepthwiseConv2D("dw2", 32, rng=rng),
        nn.ReLU("relu4"),
        nn.Conv2D("pw2", 32, 64, kernel=1, pad=0, rng=rng),
        nn.ReLU("relu5"),
        nn.MaxPool2D("pool3"),
        nn.Flatten("flatten"),
        nn.Dense("dense1", 4 * 4 * 64, 10, rng=rng),
        nn.Softmax("softmax"),
    ]


REGISTRY = {
    "tinynet": _tinynet_layers,
    "tinydwnet": _tinydwnet_layers,
}

INPUT_SHAPE = (32, 32, 3)
NUM_CLASSES = 10


def _spec_from_impl(impl: list[nn.Layer],
                    input_shape: tuple[int, int, int]) -> list[LayerSpec]:
    specs = []
    shape = tuple(input_shape)
    for i, layer in enumerate(impl, start=1):
        shape = layer.output_shape(shape)
        specs.append(LayerSpec(index=i, name=layer.name, kind=layer.kind,
                               output_shape=tuple(shape)))
    return specs


def build_model(spec_name: str, seed: int) -> ModelSpec:
    """Deterministically initialized model; same (name, seed) -> same bits."""
    if spec_name not in REGISTRY:
        raise ConfigurationError(
            f"unknown model spec {spec_name!r}; registered: {sorted(REGISTRY)}")
    rng = np.random.default_rng(seed)
    impl = REGISTRY[spec_name](rng)
    return ModelSpec(
        model_id=spec_name,
        layers=_spec_from_impl(impl, INPUT_SHAPE),
        num_classes=NUM_CLASSES,
        input_shape=INPUT_SHAPE,
        seed=seed,
        impl=impl,
    )


def _check_labels(labels: np.ndarray, num_classes: int):
    if labels.size == 0:
        raise DataError("empty dataset")
    lo, hi = int(labels.min()), int(labels.max())
    if lo < 0 or hi >= num_classes:
        raise DataError(
            f"labels must lie in [0, {num_classes}); saw range [{lo}, {hi}]")


def train_model(model: ModelSpec, train_data, epochs: int, seed: int,
                test_data=None, batch_size: int = 64,
                learning_rate: float = 1e-3) -> ModelSpec:
    """Supervised training with Adam on a copy; the input model is untouched.

    train_data/test_data expose .images (N,H,W,C float32 in [0,1]) and
    .labels (N int). Records baseline_accuracy when test_data is given.
    """
    images = np.asarray(train_data.images, dtype=np.float32)
    labels = np.asarray(train_data.labels)
    _check_labels(labels, model.num_classes)
    if images.shape[1:] != tuple(model.input_shape):
        raise ShapeError(
            f"training images shaped {images.shape[1:]}, "
            f"model expects {tuple(model.input_shape)}")

    trained = model.copy()
    if epochs > 0:
        # The closing softmax is folded into the cross-entropy loss, so
        # training runs the stack only up to the logits.
        body = trained.impl[:-1]
        assert trained.impl[-1].kind == "softmax"
        opt = nn.Adam(body, lr=learning_rate)
        rng = np.random.default_rng(seed)
        n = images.shape[0]
        for _ in range(epochs):
            order = rng.permutation(n)
            for start in range(0, n, batch_size):
                idx = order[start:start + batch_size]
                logits = nn.run_layers(body, images[idx], train=True)
                _, grad = nn.cross_entropy(logits, labels[idx])
                for layer in reversed(body):
                    grad = layer.backward(grad)
                opt.step()
    if test_data is not None:
        trained.baseline_accuracy = evaluate_accuracy(trained, test_data)
    return trained


def evaluate_accuracy(model: ModelSpec, data, batch_size: int = 256) -> float:
    images = np.asarray(data.images, dtype=np.float32)
    labels = np.asarray(data.labels)
    _check_labels(labels, model.num_classes)
    correct = 0
    for start in range(0, images.shape[0], batch_size):
        probs = predict_proba(model, images[start:start + batch_size])
        correct += int((probs.argmax(axis=1) ==
                        labels[start:start + batch_size]).sum())
    return correct / images.shape[0]


def predict_proba(model: ModelSpec, batch: np.ndarray) -> np.ndarray:
    """Inference over a batch of images, returns (N, num_classes) probs."""
    batch = np.asarray(batch, dtype=np.float32)
    if batch.shape[1:] != tuple(model.input_shape):
        raise ShapeError(
            f"batch shaped {batch.shape[1:]}, "
            f"model expects {tuple(model.input_shape)}")
    return nn.run_layers(model.impl, batch)


def _result_from_probs(probs: np.ndarray) -> ClassificationResult:
    pred = int(probs.argmax())
    return ClassificationResult(predicted_class=pred,
                                confidence=float(probs[pred]),
                                full_distribution=probs)


def forward_full(model: ModelSpec, x: np.ndarray) -> ClassificationResult:
    x = np.asarray(x, dtype=np.float32)
    if x.shape != tuple(model.input_shape):
        raise ShapeError(
            f"input shaped {x.shape}, model expects {tuple(model.input_shape)}")
    probs = nn.run_layers(model.impl, x[None])[0]
    return _result_from_probs(probs)


def partition(model: ModelSpec, cut_index: int) -> ModelPartition:
    """Split at layer cut_index: head = layers 1..n, tail = n+1..L."""
    n_layers = len(model.impl)
    if not 1 <= cut_index < n_layers:
        raise PartitionError(
            f"cut_index {cut_index} outside [1, {n_layers - 1}] "
            f"for {model.model_id}")
    return ModelPartition(
        model_id=model.model_id,
        cut_index=cut_index,
        head=model.impl[:cut_index],
        tail=model.impl[cut_index:],
        head_specs=model.layers[:cut_index],
        tail_specs=model.layers[cut_index:],
        input_shape=tuple(model.input_shape),
        num_classes=model.num_classes,
    )


def forward_head(part: ModelPartition, x: np.ndarray) -> ActivationTensor:
    x = np.asarray(x, dtype=np.float32)
    if x.shape != tuple(part.input_shape):
        raise ShapeError(
            f"input shaped {x.shape}, head expects {tuple(part.input_shape)}")
    h = nn.run_layers(part.head, x[None])[0]
    return ActivationTensor(values=h, source_layer=part.cut_index)


def forward_head_batch(part: ModelPartition, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float32)
    if batch.shape[1:] != tuple(part.input_shape):
        raise ShapeError(
            f"batch shaped {batch.shape[1:]}, "
            f"head expects {tuple(part.input_shape)}")
    return nn.run_layers(part.head, batch)


def forward_tail(part: ModelPartition, h: ActivationTensor) -> ClassificationResult:
    if h.shape != part.cut_shape:
        raise ShapeError(
            f"activation shaped {h.shape}, cut layer emits {part.cut_shape}")
    if not h.is_finite():
        raise DataError("activation contains NaN or Inf")
    probs = nn.run_layers(part.tail, h.values[None])[0]
    return _result_from_probs(probs)


def forward_tail_batch(part: ModelPartition, hs: np.ndarray) -> np.ndarray:
    hs = np.asarray(hs, dtype=np.float32)
    if hs.shape[1:] != part.cut_shape:
        raise ShapeError(
            f"activations shaped {hs.shape[1:]}, cut layer emits {part.cut_shape}")
    if not np.isfinite(hs).all():
        raise DataError("activation batch contains NaN or Inf")
    return nn.run_layers(part.tail, hs)


# -- checkpoint persistence ---------------------------------------------------

def _layer_config(layer: nn.Layer) -> dict:
    if isinstance(layer, nn.Conv2D):
        return {"in_channels": layer.in_channels,
                "out_channels": layer.out_channels,
                "kernel": layer.kernel, "stride": layer.stride,
                "pad": layer.pad}
    if isinstance(layer, nn.DepthwiseConv2D):
        return {"channels": layer.channels, "kernel": layer.kernel,
                "stride": layer.stride, "pad": layer.pad}
    if isinstance(layer, nn.MaxPool2D):
        return {"size": layer.size}
    if isinstance(layer, nn.Dense):
        return {"in_features": layer.in_features,
                "out_features": layer.out_features}
    return {}


def _layer_from_config(kind: str, name: str, config: dict) -> nn.Layer:
    rng = np.random.default_rng(0)
    if kind == "conv":
        return nn.Conv2D(name, rng=rng, **config)
    if kind == "depthwise-conv":
        return nn.DepthwiseConv2D(name, rng=rng, **config)
    if kind == "pool":
        return nn.MaxPool2D(name, **config)
    if kind == "relu":
        return nn.ReLU(name)
    if kind == "flatten":
        return nn.Flatten(name)
    if kind == "dense":
        return nn.Dense(name, rng=rng, **config)
    if kind == "softmax":
        return nn.Softmax(name)
    raise ConfigurationError(f"unknown layer kind {kind!r} in checkpoint")


def save_checkpoint(model: ModelSpec, path) -> Path:
    """Write manifest + one float32 blob per parameterized layer."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": "splitlab-model",
        "version": 1,
        "model_id": model.model_id,
        "seed": model.seed,
        "input_shape": list(model.input_shape),
        "num_classes": model.num_classes,
        "baseline_accuracy": model.baseline_accuracy,
        "layers": [
            {"index": spec.index, "name": spec.name, "kind": spec.kind,
             "output_shape": list(spec.output_shape),
             "config": _layer_config(layer)}
            for spec, layer in zip(model.layers, model.impl)
        ],
    }
    (path / CHECKPOINT_MANIFEST).write_text(json.dumps(manifest, indent=2))
    for spec, layer in zip(model.layers, model.impl):
        if not layer.params:
            continue
        blob = b"".join(layer.params[k].astype("<f4").tobytes()
                        for k in sorted(layer.params))
        (path / f"layer_{spec.index:02d}.bin").write_bytes(blob)
    return path


def load_checkpoint(path) -> ModelSpec:
    path = Path(path)
    manifest_path = path / CHECKPOINT_MANIFEST
    if not manifest_path.exists():
        raise ConfigurationError(f"no model manifest under {path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != "splitlab-model":
        raise ConfigurationError(f"{manifest_path} is not a model checkpoint")
    impl = []
    specs = []
    for entry in manifest["layers"]:
        layer = _layer_from_config(entry["kind"], entry["name"],
                                   entry["config"])
        if layer.params:
            blob = (path / f"layer_{entry['index']:02d}.bin").read_bytes()
            offset = 0
            for key in sorted(layer.params):
                param = layer.params[key]
                nbytes = param.size * 4
                flat = np.frombuffer(blob[offset:offset + nbytes], dtype="<f4")
                if flat.size != param.size:
                    raise ConfigurationError(
                        f"truncated weight blob for layer {entry['index']}")
                layer.params[key] = flat.reshape(param.shape).copy()
                offset += nbytes
        impl.append(layer)
        specs.append(LayerSpec(index=entry["index"], name=entry["name"],
                               kind=entry["kind"],
                               output_shape=tuple(entry["output_shape"])))
    return ModelSpec(
        model_id=manifest["model_id"],
        layers=specs,
        num_classes=manifest["num_classes"],
        input_shape=tuple(manifest["input_shape"]),
        baseline_accuracy=manifest["baseline_accuracy"],
        seed=manifest["seed"],
        impl=impl,
    )
