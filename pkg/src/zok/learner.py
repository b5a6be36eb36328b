"""Softmax classifiers over zoom-out features.

A feed-forward network with 0..2 ReLU hidden layers and a softmax output,
trained by momentum SGD on the class-rebalanced log-loss

    loss = -(1/N) * sum_i (1/f_{y_i}) * log p_hat(y_i | x_i)

where f_c is the frequency of class c in the training data (sum 1).  With
uniform frequencies this reduces to C times the plain mean log-loss.  The
model stores per-dimension normalization statistics applied inside
forward(), and serializes to the little-endian "ZOM1" format.

Parameters are held in float64 for exact, reproducible arithmetic and are
written to disk as float32.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

_STD_FLOOR = 1e-8
_PROB_FLOOR = 1e-12


@dataclass
class ClassFrequencies:
    f: np.ndarray  # per-class frequency; zero for absent classes, rest sums to 1
    basis: str = "pixels"


@dataclass
class MlpModel:
    weights: list            # per layer (out, in) float64
    biases: list             # per layer (out,) float64
    mean: np.ndarray         # (D,) feature normalization
    std: np.ndarray          # (D,) feature normalization, floored > 0
    epoch_losses: list = field(default_factory=list)

    @property
    def sizes(self):
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def num_classes(self):
        return self.weights[-1].shape[0]


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 1e-4
    momentum: float = 0.9
    weight_decay: float = 1e-3
    dropout: float = 0.0
    seed: int = 0
    loss: str = "asymmetric"   # or "symmetric"
    hidden: tuple = ()

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be > 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.loss not in ("asymmetric", "symmetric"):
            raise ValueError(f"unknown loss {self.loss!r}")


def compute_class_frequencies(labels, weights=None, num_classes=None, ignore=None, basis="pixels"):
    """Weighted per-class frequencies, normalized over present classes.

    weights defaults to 1 per sample; pass superpixel pixel counts for the
    pixel basis.  Samples labeled `ignore` are excluded.
    """
    labels = np.asarray(labels)
    if weights is None:
        weights = np.ones(labels.shape, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if ignore is not None:
        keep = labels != ignore
        labels, weights = labels[keep], weights[keep]
    if labels.size == 0:
        raise ValueError("no labeled samples")
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    counts = np.bincount(labels, weights=weights, minlength=num_classes)
    return ClassFrequencies(counts / counts.sum(), basis)


def init_model(layer_sizes, seed, mean=None, std=None):
    """Glorot-uniform initialized model; biases start at zero."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    d = layer_sizes[0]
    if mean is None:
        mean = np.zeros(d)
    if std is None:
        std = np.ones(d)
    return MlpModel(weights, biases, np.asarray(mean, dtype=np.float64),
                    np.maximum(np.asarray(std, dtype=np.float64), _STD_FLOOR))


def _softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward_pass(model, x, dropout_masks=None):
    """Returns (activations per layer incl. normalized input, probs)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != model.weights[0].shape[1]:
        raise ValueError(f"feature dim {x.shape[1]} != model dim {model.weights[0].shape[1]}")
    a = (x - model.mean) / model.std
    acts = [a]
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w.T + b
        if i < last:
            a = np.maximum(z, 0.0)
            if dropout_masks is not None:
                a = a * dropout_masks[i]
            acts.append(a)
        else:
            return acts, _softmax(z)


def logits(model, x):
    """Pre-softmax scores; used by score-field heads."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    a = (x - model.mean) / model.std
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w.T + b
        if i == last:
            return z
        a = np.maximum(z, 0.0)


def forward(model, x):
    """Class probabilities for (N, D) or (D,) features; rows sum to 1."""
    single = np.asarray(x).ndim == 1
    _, probs = _forward_pass(model, x)
    return probs[0] if single else probs


def asymmetric_loss(probs, labels, freqs):
    """Inverse-frequency weighted log-loss over a batch.

    probs: (N, C) predicted distributions; freqs: ClassFrequencies or a
    per-class frequency array.  Probabilities are floored at 1e-12 inside
    the log.
    """
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    labels = np.asarray(labels)
    f = freqs.f if isinstance(freqs, ClassFrequencies) else np.asarray(freqs, dtype=np.float64)
    if np.any(f[labels] <= 0):
        raise ValueError("label with zero recorded frequency")
    p = np.clip(probs[np.arange(len(labels)), labels], _PROB_FLOOR, None)
    return float(-(np.log(p) / f[labels]).mean())


def _per_sample_weights(labels, freqs, n):
    f = freqs.f if isinstance(freqs, ClassFrequencies) else np.asarray(freqs, dtype=np.float64)
    return 1.0 / (f[labels] * n)


def backprop(model, x, output_delta, dropout_masks=None):
    """Gradients of all weights/biases given dLoss/dLogits rows.

    Shared by the classification loss and the score-field heads, which
    supply their own output deltas.
    """
    acts, _ = _forward_pass(model, x, dropout_masks)
    grads_w = [None] * len(model.weights)
    grads_b = [None] * len(model.biases)
    delta = output_delta
    for i in range(len(model.weights) - 1, -1, -1):
        grads_w[i] = delta.T @ acts[i]
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ model.weights[i]
            if dropout_masks is not None:
                delta = delta * dropout_masks[i - 1]
            delta = delta * (acts[i] > 0)
    return grads_w, grads_b


def loss_gradient(model, x, labels, freqs, dropout_masks=None):
    """Analytic gradient of asymmetric_loss(forward(model, x), labels, f).

    Output-layer error is (1/(N * f_y)) * (p_hat - onehot(y)).
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    labels = np.asarray(labels)
    _, probs = _forward_pass(model, x, dropout_masks)
    delta = probs.copy()
    delta[np.arange(len(labels)), labels] -= 1.0
    delta *= _per_sample_weights(labels, freqs, len(labels))[:, None]
    return backprop(model, x, delta, dropout_masks)


def zero_velocity(model):
    return ([np.zeros_like(w) for w in model.weights],
            [np.zeros_like(b) for b in model.biases])


def sgd_step(model, grads, cfg, velocity=None):
    """Classical momentum update: v <- mu*v - lr*(g + wd*w); w <- w + v.

    Mutates the model (and velocity) in place and returns the model.
    """
    grads_w, grads_b = grads
    if velocity is None:
        velocity = zero_velocity(model)
    vw, vb = velocity
    for i in range(len(model.weights)):
        vw[i] *= cfg.momentum
        vw[i] -= cfg.learning_rate * (grads_w[i] + cfg.weight_decay * model.weights[i])
        model.weights[i] += vw[i]
        vb[i] *= cfg.momentum
        vb[i] -= cfg.learning_rate * (grads_b[i] + cfg.weight_decay * model.biases[i])
        model.biases[i] += vb[i]
    return model


def train(features, labels, cfg, num_classes=None, sample_weights=None):
    """Train an MLP classifier; deterministic for a fixed seed.

    features: (N, D); labels: (N,) ints.  sample_weights feed the class
    frequency computation (pixel basis).  Normalization statistics come
    from the training features.  Records the full-dataset loss after each
    epoch in model.epoch_losses.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.ndim != 2 or len(features) == 0:
        raise ValueError("features must be a nonempty (N, D) matrix")
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    mean = features.mean(axis=0)
    std = np.maximum(features.std(axis=0), _STD_FLOOR)
    sizes = [features.shape[1], *cfg.hidden, num_classes]
    model = init_model(sizes, cfg.seed, mean, std)
    if cfg.loss == "asymmetric":
        freqs = compute_class_frequencies(
            labels, sample_weights, num_classes,
            basis="pixels" if sample_weights is not None else "superpixels")
        f = freqs.f.copy()
        f[f == 0] = 1.0  # absent classes never occur in labels
    else:
        # Plain mean log-loss: constant unit weight per sample.
        f = np.ones(num_classes)
    rng = np.random.default_rng(cfg.seed)
    velocity = zero_velocity(model)
    n = len(features)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            masks = None
            if cfg.dropout > 0 and len(cfg.hidden) > 0:
                # Inverted dropout on hidden activations.
                masks = [
                    (rng.random((len(idx), hsize)) >= cfg.dropout) / (1.0 - cfg.dropout)
                    for hsize in cfg.hidden
                ]
            grads = loss_gradient(model, features[idx], labels[idx], f, masks)
            sgd_step(model, grads, cfg, velocity)
        probs = forward(model, features)
        model.epoch_losses.append(asymmetric_loss(probs, labels, f))
    return model


def predict_labels(model, features):
    """Argmax class per row; ties go to the smallest class id."""
    probs = np.atleast_2d(forward(model, features))
    return np.argmax(probs, axis=1)


def write_model(model, path):
    """Serialize to ZOM1: magic, u32 C, u32 L, per-layer dims + f32 params,
    then f32 mean and std vectors."""
    with open(path, "wb") as fh:
        fh.write(b"ZOM1")
        fh.write(struct.pack("<II", model.num_classes, len(model.weights)))
        for w, b in zip(model.weights, model.biases):
            out_dim, in_dim = w.shape
            fh.write(struct.pack("<II", in_dim, out_dim))
            fh.write(w.astype("<f4").tobytes())
            fh.write(b.astype("<f4").tobytes())
        fh.write(model.mean.astype("<f4").tobytes())
        fh.write(model.std.astype("<f4").tobytes())


def read_model(path):
    """Read a ZOM1 model file."""
    from .core_io import FormatError

    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != b"ZOM1":
        raise FormatError(f"wrong magic: {data[:4]!r}")
    num_classes, nlayers = struct.unpack("<II", data[4:12])
    pos = 12
    weights, biases = [], []
    for _ in range(nlayers):
        in_dim, out_dim = struct.unpack("<II", data[pos : pos + 8])
        pos += 8
        wlen = in_dim * out_dim * 4
        weights.append(
            np.frombuffer(data[pos : pos + wlen], dtype="<f4").reshape(out_dim, in_dim).astype(np.float64)
        )
        pos += wlen
        biases.append(np.frombuffer(data[pos : pos + out_dim * 4], dtype="<f4").astype(np.float64))
        pos += out_dim * 4
    d = weights[0].shape[1]
    mean = np.frombuffer(data[pos : pos + d * 4], dtype="<f4").astype(np.float64)
    pos += d * 4
    std = np.frombuffer(data[pos : pos + d * 4], dtype="<f4").astype(np.float64)
    pos += d * 4
    if pos != len(data):
        raise FormatError("payload size mismatch")
    if weights[-1].shape[0] != num_classes:
        raise FormatError("declared class count disagrees with final layer")
    return MlpModel(weights, biases, mean, std)
