"""Self-ONN (generative neuron) layers and the beat classifier built from them."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .beats import Standardizer
from .dsp import RowStandardizer


class SelfONN1d(nn.Layer):
    """Generative-neuron convolution: ``b + sum_q conv1d(w_q, x**q)``.

    ``weight`` has shape ``(Q, C_out, C_in, K)``; ``weight[q-1]`` is the kernel
    applied to the q-th elementwise power of the input. With ``Q = 1`` this is
    an ordinary convolution. Padding is "same".
    """

    def __init__(self, in_channels, out_channels, kernel_size=3, q_order=3,
                 rng=None, dtype=np.float32, scale_by_factorial=True):
        super().__init__()
        if q_order < 1:
            raise ValueError("q_order must be >= 1")
        rng = rng or np.random.default_rng(0)
        self.q_order = q_order
        self.padding = nn.same_padding(kernel_size)
        std = math.sqrt(2.0 / (in_channels * kernel_size))
        w = rng.standard_normal((q_order, out_channels, in_channels, kernel_size)) * std
        if scale_by_factorial:
            w /= np.array([math.factorial(q) for q in range(1, q_order + 1)])[:, None, None, None]
        self.params = {"weight": w.astype(dtype), "bias": np.zeros(out_channels, dtype=dtype)}

    @staticmethod
    def powers(x, q_order):
        out = [x]
        for _ in range(q_order - 1):
            out.append(out[-1] * x)
        return out

    def _stacked_weight(self, w):
        Q, O, C, K = w.shape
        return w.transpose(1, 0, 2, 3).reshape(O, Q * C, K)

    def forward(self, x, train=False):
        w, b = self.params["weight"], self.params["bias"]
        if x.ndim != 3 or x.shape[1] != w.shape[2]:
            raise nn.ShapeError(f"SelfONN1d: input {x.shape} incompatible with weight {w.shape}")
        pw = self.powers(x, self.q_order)
        out, conv_cache = nn.conv1d(np.concatenate(pw, axis=1), self._stacked_weight(w), self.padding)
        self._cache = (pw, conv_cache, w.copy())
        return out + b[None, :, None]

    def backward(self, grad):
        pw, conv_cache, w_used = self._take_cache()
        if not np.array_equal(w_used, self.params["weight"]):
            raise nn.StaleCacheError("SelfONN1d weights changed between forward and backward")
        Q, O, C, K = w_used.shape
        dp, dw = nn.conv1d_backward(grad, conv_cache)
        self.grads = {"weight": dw.reshape(O, Q, C, K).transpose(1, 0, 2, 3).copy(),
                      "bias": grad.sum(axis=(0, 2))}
        dx = dp[:, :C].copy()
        for q in range(2, Q + 1):
            dx += q * pw[q - 2] * dp[:, (q - 1) * C:q * C]
        return dx


@dataclass
class ModelConfig:
    q_order: int = 3
    in_channels: int = 9
    channels: tuple = (32, 64)
    kernel: int = 3
    pool: int = 7
    temporal_dim: int = 4
    hidden: int = 32
    classes: int = 3
    factorial_init: bool = True

    def __post_init__(self):
        self.channels = tuple(self.channels)
        for name in ("q_order", "in_channels", "kernel", "pool", "hidden", "classes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.temporal_dim < 0:
            raise ValueError("temporal_dim must be >= 0")
        if len(self.channels) != 2 or min(self.channels) < 1:
            raise ValueError("channels must hold two positive layer widths")


class SelfONNClassifier:
    """scalogram -> SelfONN -> BN -> tanh -> maxpool -> SelfONN -> BN -> tanh
    -> global max -> concat temporal -> dense -> ReLU -> dense (logits).

    ``scalogram_norm`` and ``temporal_norm`` hold training-set statistics and
    are applied by :func:`predict`; the layer chain itself expects
    standardized inputs.
    """

    def __init__(self, config: ModelConfig, seed=0, dtype=np.float32):
        self.config = config
        self.seed = seed
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        c1, c2 = config.channels
        self.layers = {
            "onn1": SelfONN1d(config.in_channels, c1, config.kernel, config.q_order, rng, dtype,
                              config.factorial_init),
            "bn1": nn.BatchNorm1d(c1, dtype=dtype),
            "act1": nn.Tanh(),
            "pool1": nn.MaxPool1d(config.pool),
            "onn2": SelfONN1d(c1, c2, config.kernel, config.q_order, rng, dtype, config.factorial_init),
            "bn2": nn.BatchNorm1d(c2, dtype=dtype),
            "act2": nn.Tanh(),
            "pool2": nn.AdaptiveMaxPool1d(),
            "fc1": nn.Dense(c2 + config.temporal_dim, config.hidden, rng, dtype),
            "act3": nn.ReLU(),
            "fc2": nn.Dense(config.hidden, config.classes, rng, dtype),
        }
        self.scalogram_norm = RowStandardizer(np.zeros(config.in_channels), np.ones(config.in_channels))
        self.temporal_norm = Standardizer.identity(config.temporal_dim)

    _CONV_PART = ("onn1", "bn1", "act1", "pool1", "onn2", "bn2", "act2", "pool2")
    _HEAD = ("fc1", "act3", "fc2")

    def forward(self, scalograms, temporal, train=False):
        """Logits for standardized inputs ``(B, 9, L)`` and ``(B, 4)``."""
        h = np.asarray(scalograms, dtype=self.dtype)
        for name in self._CONV_PART:
            h = self.layers[name].forward(h, train)
        feats = h[:, :, 0]
        t = np.asarray(temporal, dtype=self.dtype).reshape(len(feats), self.config.temporal_dim)
        # temporal features occupy slots c2 .. c2 + temporal_dim - 1
        h = np.concatenate([feats, t], axis=1)
        for name in self._HEAD:
            h = self.layers[name].forward(h, train)
        return h

    def backward(self, dlogits):
        """Backpropagate; returns gradients w.r.t. (scalograms, temporal)."""
        g = dlogits
        for name in reversed(self._HEAD):
            g = self.layers[name].backward(g)
        c2 = self.config.channels[1]
        d_temporal = g[:, c2:]
        g = g[:, :c2, None]
        for name in reversed(self._CONV_PART):
            g = self.layers[name].backward(g)
        return g, d_temporal

    def parameters(self):
        return {f"{ln}.{pn}": p for ln, layer in self.layers.items() for pn, p in layer.params.items()}

    def gradients(self):
        return {f"{ln}.{pn}": layer.grads[pn] for ln, layer in self.layers.items()
                for pn in layer.params}

    def buffers(self):
        return {f"{ln}.{bn}": b for ln, layer in self.layers.items() for bn, b in layer.buffers().items()}

    def count_params(self):
        return int(sum(p.size for p in self.parameters().values()))

    def state_arrays(self):
        return {**self.parameters(), **self.buffers()}


def build_model(config: ModelConfig | None = None, seed=0, dtype=np.float32) -> SelfONNClassifier:
    return SelfONNClassifier(config or ModelConfig(), seed=seed, dtype=dtype)


def count_params(config: ModelConfig | None = None) -> int:
    """Trainable parameter count implied by ``config`` (no model is built)."""
    c = config or ModelConfig()
    c1, c2 = c.channels
    onn1 = c.q_order * c.in_channels * c1 * c.kernel + c1
    onn2 = c.q_order * c1 * c2 * c.kernel + c2
    bn = 2 * (c1 + c2)
    fc1 = (c2 + c.temporal_dim) * c.hidden + c.hidden
    fc2 = c.hidden * c.classes + c.classes
    return onn1 + onn2 + bn + fc1 + fc2


class PredictionInputError(ValueError):
    pass


def predict(model: SelfONNClassifier, scalograms, temporal, batch_size=512):
    """Classify raw (unstandardized) beats in eval mode.

    Returns ``(classes, scores)``: argmax indices (ties -> lowest index) and
    softmax probabilities of shape ``(n, 3)`` in float64.
    """
    scalograms = np.asarray(scalograms)
    temporal = np.asarray(temporal, dtype=np.float64)
    single = scalograms.ndim == 2
    if single:
        scalograms, temporal = scalograms[None], temporal[None]
    if not (np.all(np.isfinite(scalograms)) and np.all(np.isfinite(temporal))):
        raise PredictionInputError("non-finite values in prediction input")
    x = model.scalogram_norm.transform(scalograms.astype(np.float64))
    t = model.temporal_norm.transform(temporal)
    logits = []
    for s in range(0, len(x), batch_size):
        logits.append(model.forward(x[s:s + batch_size], t[s:s + batch_size], train=False))
    logits = np.concatenate(logits).astype(np.float64) if logits else np.zeros((0, model.config.classes))
    nn.check_finite(logits, "model forward")
    scores = nn.softmax(logits)
    classes = scores.argmax(axis=1)
    if single:
        return int(classes[0]), scores[0]
    return classes, scores


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(model: SelfONNClassifier, path, epoch=None, metrics=None, extra=None):
    """Write ``<path>.json`` (manifest) and ``<path>.bin`` (float32 LE blob)."""
    path = Path(path)
    arrays = model.state_arrays()
    entries = []
    offset = 0
    chunks = []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset,
                        "trainable": name in model.parameters()})
        offset += a.nbytes
        chunks.append(a.tobytes())
    manifest = {
        "format": "selfonn-ecg-checkpoint/1",
        "config": asdict(model.config),
        "seed": model.seed,
        "epoch": epoch,
        "metrics": metrics or {},
        "n_trainable": model.count_params(),
        "scalogram_norm": model.scalogram_norm.to_dict(),
        "temporal_norm": model.temporal_norm.to_dict(),
        "blob": path.with_suffix(".bin").name,
        "arrays": entries,
        **(extra or {}),
    }
    path.with_suffix(".bin").write_bytes(b"".join(chunks))
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2))
    return manifest


def load_checkpoint(path, dtype=np.float32) -> SelfONNClassifier:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    cfg = ModelConfig(**manifest["config"])
    model = SelfONNClassifier(cfg, seed=manifest.get("seed", 0), dtype=dtype)
    blob = (path.parent / manifest["blob"]).read_bytes()
    state = model.state_arrays()
    for entry in manifest["arrays"]:
        target = state[entry["name"]]
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        vals = np.frombuffer(blob, dtype="<f4", count=n, offset=entry["offset"])
        if list(target.shape) != entry["shape"]:
            raise ValueError(f"checkpoint array {entry['name']} has shape {entry['shape']}, "
                             f"model expects {list(target.shape)}")
        target[...] = vals.reshape(target.shape)
    model.scalogram_norm = RowStandardizer.from_dict(manifest["scalogram_norm"])
    model.temporal_norm = Standardizer.from_dict(manifest["temporal_norm"])
    return model
