"""Convolutional regression network, implemented directly in numpy.

The network maps an encoded trial image to a small vector of regression
targets under a Euclidean loss. Everything needed by the pipeline is here:
architecture descriptors with shape validation, He-style seeded
initialization, im2col convolution with exact backprop, overlapping max
pooling, inverted dropout, minibatch SGD with momentum, and layer transfer
between models (the donor's layers arrive tagged so they can train at a
reduced learning rate).

Determinism: weight init, epoch shuffling and dropout all derive from one
seeded generator, so identical inputs and seeds give bit-identical models.
Internally data is laid out NCHW; the public entry points take images as
(height, width, channels) with values in [0, 255], scaled by a fixed
1/255 at the input (part of the architecture, serialized with it).

Targets are standardized per output during training (mean/std fitted on
the training targets) and de-standardized in predict; an untrained model
has the identity transform, so its output is exactly the output-layer
bias.
"""

import copy
import hashlib
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    DivergenceDetected,
    IncompatibleArchitecture,
    ShapeMismatch,
    TooFewSamples,
)

__all__ = [
    "Conv",
    "MaxPool",
    "FullyConnected",
    "Output",
    "ArchitectureSpec",
    "desk_architecture",
    "reference_architecture",
    "TrainConfig",
    "RegressionModel",
    "build",
    "euclidean_loss",
    "loss_and_gradients",
    "train",
    "predict",
    "transfer",
    "model_id",
]


# --------------------------------------------------------------------------
# architecture
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Conv:
    out_channels: int
    kernel: int
    stride: int = 1
    pad: int = 0
    relu: bool = True


@dataclass(frozen=True)
class MaxPool:
    kernel: int
    stride: int


@dataclass(frozen=True)
class FullyConnected:
    out_features: int
    relu: bool = True
    dropout_p: float = 0.0


@dataclass(frozen=True)
class Output:
    """Linear regression head; always the last layer."""

    out_features: int


@dataclass(frozen=True)
class ArchitectureSpec:
    """Layer chain plus input geometry.

    input_shape is (height, width, channels); input_scale is applied to
    pixels at the network entry (after the model's mean image, when one
    was fitted, has been subtracted).
    """

    layers: tuple
    input_shape: tuple = (227, 227, 3)
    input_scale: float = 1.0 / 255.0

    def validate(self):
        if not self.layers or not isinstance(self.layers[-1], Output):
            raise IncompatibleArchitecture("last layer must be the Output head")
        if sum(isinstance(l, Output) for l in self.layers) != 1:
            raise IncompatibleArchitecture("exactly one Output layer is allowed")
        for l in self.layers:
            if isinstance(l, FullyConnected) and not 0.0 <= l.dropout_p < 1.0:
                raise IncompatibleArchitecture(
                    f"dropout probability {l.dropout_p} outside [0, 1)"
                )
        self.shape_chain()

    def shape_chain(self):
        """Feature shape after each layer; raises when the chain breaks."""
        h, w, c = self.input_shape
        shape = (c, h, w)
        chain = []
        for l in self.layers:
            if isinstance(l, Conv):
                c_in, hh, ww = shape
                ho = (hh + 2 * l.pad - l.kernel) // l.stride + 1
                wo = (ww + 2 * l.pad - l.kernel) // l.stride + 1
                if l.kernel > hh + 2 * l.pad or ho < 1 or wo < 1:
                    raise IncompatibleArchitecture(
                        f"conv kernel {l.kernel} does not fit {shape}"
                    )
                shape = (l.out_channels, ho, wo)
            elif isinstance(l, MaxPool):
                c_in, hh, ww = shape
                ho = (hh - l.kernel) // l.stride + 1
                wo = (ww - l.kernel) // l.stride + 1
                if l.kernel > hh or ho < 1 or wo < 1:
                    raise IncompatibleArchitecture(
                        f"pool kernel {l.kernel} does not fit {shape}"
                    )
                shape = (c_in, ho, wo)
            elif isinstance(l, (FullyConnected, Output)):
                feats = int(np.prod(shape)) if isinstance(shape, tuple) else shape
                shape = l.out_features
                if shape < 1:
                    raise IncompatibleArchitecture("layer width must be positive")
            else:
                raise IncompatibleArchitecture(f"unknown layer {l!r}")
            chain.append(shape)
        return chain

    @property
    def output_dim(self):
        return self.layers[-1].out_features


def desk_architecture(output_dim):
    """Small preset that trains in minutes on one core."""
    return ArchitectureSpec(
        layers=(
            Conv(16, 7, stride=4),
            MaxPool(3, 2),
            Conv(32, 5, stride=1, pad=2),
            MaxPool(3, 2),
            FullyConnected(256),
            Output(output_dim),
        )
    )


def reference_architecture(output_dim):
    """Full-size preset: five conv + three fully connected stages."""
    return ArchitectureSpec(
        layers=(
            Conv(96, 11, stride=4),
            MaxPool(3, 2),
            Conv(256, 5, stride=1, pad=2),
            MaxPool(3, 2),
            Conv(384, 3, stride=1, pad=1),
            Conv(384, 3, stride=1, pad=1),
            Conv(256, 3, stride=1, pad=1),
            MaxPool(3, 2),
            FullyConnected(4096, dropout_p=0.5),
            FullyConnected(4096, dropout_p=0.5),
            Output(output_dim),
        )
    )


ARCHITECTURES = {"desk": desk_architecture, "reference": reference_architecture}


# --------------------------------------------------------------------------
# model container
# --------------------------------------------------------------------------

@dataclass
class RegressionModel:
    """Architecture plus per-layer weights and training metadata.

    params maps layer index -> {"W", "b", "transferred"}. provenance is the
    chain of training stages this weight lineage has passed through
    (scratch -> finetune -> cascade). target_center/target_scale hold the
    output standardization fitted during training (None = identity);
    pixel_mean is the training-set mean image subtracted at the network
    entry (None = no centering). A transferred model keeps its donor's
    mean image, since that is the input distribution the inherited
    features were fitted on.
    """

    arch: ArchitectureSpec
    params: dict
    provenance: tuple = ("scratch",)
    donor: str = None
    target_center: np.ndarray = None
    target_scale: np.ndarray = None
    pixel_mean: np.ndarray = None

    @property
    def dtype(self):
        first = next(iter(self.params.values()))
        return first["W"].dtype

    def copy(self):
        return copy.deepcopy(self)


def _parameterized(arch):
    """(index, layer, fan_in, weight shape) for every weighted layer."""
    h, w, c = arch.input_shape
    shape = (c, h, w)
    out = []
    for i, l in enumerate(arch.layers):
        if isinstance(l, Conv):
            c_in = shape[0]
            fan_in = c_in * l.kernel * l.kernel
            out.append((i, l, fan_in, (l.out_channels, c_in, l.kernel, l.kernel)))
            hh = (shape[1] + 2 * l.pad - l.kernel) // l.stride + 1
            ww = (shape[2] + 2 * l.pad - l.kernel) // l.stride + 1
            shape = (l.out_channels, hh, ww)
        elif isinstance(l, MaxPool):
            hh = (shape[1] - l.kernel) // l.stride + 1
            ww = (shape[2] - l.kernel) // l.stride + 1
            shape = (shape[0], hh, ww)
        else:
            feats = int(np.prod(shape)) if isinstance(shape, tuple) else shape
            out.append((i, l, feats, (feats, l.out_features)))
            shape = l.out_features
    return out


def build(arch, seed, dtype=np.float32):
    """Fresh model with variance-scaled zero-mean weights and zero biases.

    ReLU layers draw with std sqrt(2/fan_in), linear layers with
    sqrt(1/fan_in). Identical (arch, seed, dtype) give identical weights.
    """
    arch.validate()
    rng = np.random.default_rng(seed)
    params = {}
    for i, l, fan_in, wshape in _parameterized(arch):
        gain = 2.0 if getattr(l, "relu", False) else 1.0
        std = np.sqrt(gain / fan_in)
        W = (rng.standard_normal(wshape) * std).astype(dtype)
        b_len = wshape[0] if isinstance(l, Conv) else wshape[1]
        params[i] = {
            "W": W,
            "b": np.zeros(b_len, dtype=dtype),
            "transferred": False,
        }
    return RegressionModel(arch=arch, params=params)


def model_id(model):
    """Digest of the weight payload, used to record transfer donors."""
    h = hashlib.sha256()
    for i in sorted(model.params):
        h.update(model.params[i]["W"].tobytes())
        h.update(model.params[i]["b"].tobytes())
    return h.hexdigest()[:16]


# --------------------------------------------------------------------------
# layer math
# --------------------------------------------------------------------------

def _conv_forward(x, W, b, stride, pad):
    n, c, h, w = x.shape
    o, _, kh, kw = W.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :ho, :wo]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n * ho * wo, c * kh * kw
    )
    out = cols @ W.reshape(o, -1).T + b
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    cache = (cols, (n, c, h, w), stride, pad, (ho, wo))
    return out, cache


def _conv_backward(dout, W, cache):
    cols, (n, c, h, w), stride, pad, (ho, wo) = cache
    o, _, kh, kw = W.shape
    dflat = np.ascontiguousarray(dout.transpose(0, 2, 3, 1)).reshape(-1, o)
    dW = (dflat.T @ cols).reshape(W.shape)
    db = dflat.sum(axis=0)
    dcols = dflat @ W.reshape(o, -1)
    dcols = dcols.reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=dout.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                dcols[:, :, :, :, i, j]
            )
    dx = dxp[:, :, pad:pad + h, pad:pad + w] if pad else dxp
    return dx, dW, db


def _pool_forward(x, kernel, stride):
    n, c, h, w = x.shape
    ho = (h - kernel) // stride + 1
    wo = (w - kernel) // stride + 1
    win = sliding_window_view(x, (kernel, kernel), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :ho, :wo]
    flat = np.ascontiguousarray(win).reshape(n, c, ho, wo, kernel * kernel)
    am = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, am[..., None], axis=-1)[..., 0]
    cache = (am, (n, c, h, w), kernel, stride, (ho, wo))
    return out, cache


def _pool_backward(dout, cache):
    am, (n, c, h, w), kernel, stride, (ho, wo) = cache
    rows = (np.arange(ho) * stride)[None, None, :, None] + am // kernel
    colz = (np.arange(wo) * stride)[None, None, None, :] + am % kernel
    ncoff = (np.arange(n)[:, None, None, None] * c
             + np.arange(c)[None, :, None, None])
    flat_idx = (ncoff * h + rows) * w + colz
    dx = np.zeros(n * c * h * w, dtype=dout.dtype)
    np.add.at(dx, flat_idx.ravel(), dout.ravel())
    return dx.reshape(n, c, h, w)


def _forward(model, x, rng=None):
    """Run the layer chain; returns (pred, caches). rng enables dropout."""
    dtype = model.dtype
    x = np.ascontiguousarray(x, dtype=dtype)
    if x.ndim != 4 or x.shape[1:] != model.arch.input_shape:
        raise ShapeMismatch(
            f"images shaped {x.shape[1:]}, architecture wants "
            f"{model.arch.input_shape}"
        )
    if model.pixel_mean is not None:
        x = x - model.pixel_mean
    a = x.transpose(0, 3, 1, 2) * dtype.type(model.arch.input_scale)
    caches = []
    for i, l in enumerate(model.arch.layers):
        if isinstance(l, Conv):
            p = model.params[i]
            a, cache = _conv_forward(a, p["W"], p["b"], l.stride, l.pad)
            mask = None
            if l.relu:
                mask = a > 0
                a = a * mask
            caches.append(("conv", cache, mask, None))
        elif isinstance(l, MaxPool):
            a, cache = _pool_forward(a, l.kernel, l.stride)
            caches.append(("pool", cache, None, None))
        else:
            if a.ndim != 2:
                shape4 = a.shape
                a = np.ascontiguousarray(a).reshape(a.shape[0], -1)
            else:
                shape4 = None
            p = model.params[i]
            x_in = a
            a = a @ p["W"] + p["b"]
            mask = None
            if isinstance(l, FullyConnected):
                if l.relu:
                    mask = a > 0
                    a = a * mask
                if l.dropout_p > 0.0 and rng is not None:
                    keep = (rng.random(a.shape) >= l.dropout_p).astype(a.dtype)
                    keep /= dtype.type(1.0 - l.dropout_p)
                    a = a * keep
                    caches.append(("fc", (x_in, shape4), mask, keep))
                    continue
            caches.append(("fc", (x_in, shape4), mask, None))
    return a, caches


def _backward(model, dpred, caches):
    grads = {}
    da = dpred
    for i in range(len(model.arch.layers) - 1, -1, -1):
        kind, cache, mask, keep = caches[i]
        l = model.arch.layers[i]
        if kind == "fc":
            if keep is not None:
                da = da * keep
            if mask is not None:
                da = da * mask
            x_in, shape4 = cache
            p = model.params[i]
            grads[i] = (x_in.T @ da, da.sum(axis=0))
            da = da @ p["W"].T
            if shape4 is not None:
                da = da.reshape(shape4)
        elif kind == "pool":
            da = _pool_backward(da, cache)
        else:
            if mask is not None:
                da = da * mask
            dx, dW, db = _conv_backward(da, model.params[i]["W"], cache)
            grads[i] = (dW, db)
            da = dx
    return grads


# --------------------------------------------------------------------------
# loss / training
# --------------------------------------------------------------------------

def euclidean_loss(pred, target):
    """Half squared error of one prediction: (loss, gradient wrt pred)."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs target {target.shape}")
    diff = pred - target
    return 0.5 * float(diff @ diff), diff


def loss_and_gradients(model, images, targets, rng=None):
    """Mean per-sample Euclidean loss over a batch and its weight gradients.

    This is the seam training steps run through; it is also what numeric
    gradient checks should difference, since the loss value only exercises
    the forward pass. Targets are used as given (no standardization here).
    """
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[None]
    targets = np.asarray(targets, dtype=float)
    if targets.ndim == 1:
        targets = targets[None]
    n = images.shape[0]
    if targets.shape[0] != n:
        raise ShapeMismatch(f"{n} images vs {targets.shape[0]} targets")
    pred, caches = _forward(model, images, rng=rng)
    diff = pred.astype(float) - targets
    loss = 0.5 * float(np.einsum("ij,ij->", diff, diff)) / n
    dpred = (diff / n).astype(model.dtype)
    grads = _backward(model, dpred, caches)
    return loss, grads


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    learning_rate: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 32
    transferred_lr_multiplier: float = 0.1
    seed: int = 0
    standardize_targets: bool = True
    center_inputs: bool = True


def _mean_image(images, dtype, chunk=64):
    """Mean over the sample axis, accumulated in float64, batch by batch."""
    n = len(images)
    total = None
    for start in range(0, n, chunk):
        batch = np.asarray(images[np.arange(start, min(start + chunk, n))])
        s = batch.sum(axis=0, dtype=np.float64)
        total = s if total is None else total + s
    return (total / n).astype(dtype)


def train(model, images, targets, config):
    """SGD with momentum over shuffled minibatches.

    images: ndarray (n, H, W, C) or any indexable returning image batches
    for an integer index array (lazy encoders qualify). targets: (n, k) raw
    values; a per-output standardization is fitted here and stored on the
    returned model. Unless the model already carries a mean image (a
    transferred one does), the training-set mean image is computed up front
    and stored for input centering. The trailing short batch of each epoch
    is consumed. Returns (trained copy, per-epoch mean loss list); the
    input model is not modified. Raises DivergenceDetected (carrying the
    last finite state) when the loss leaves the reals.
    """
    n = len(images)
    targets = np.asarray(targets, dtype=float)
    if targets.ndim == 1:
        targets = targets[:, None]
    if targets.shape[0] != n:
        raise ShapeMismatch(f"{n} images vs {targets.shape[0]} targets")
    if config.batch_size < 1 or config.batch_size > n:
        raise TooFewSamples(
            f"batch size {config.batch_size} does not fit {n} samples"
        )
    if config.epochs < 0:
        raise ValueError("epochs must be non-negative")

    model = model.copy()
    if config.center_inputs and model.pixel_mean is None:
        model.pixel_mean = _mean_image(images, model.dtype)
    if config.standardize_targets:
        center = targets.mean(axis=0)
        scale = targets.std(axis=0)
        scale[scale == 0.0] = 1.0
        model.target_center = center
        model.target_scale = scale
        targets_std = (targets - center) / scale
    else:
        model.target_center = None
        model.target_scale = None
        targets_std = targets

    rng = np.random.default_rng(config.seed)
    velocity = {
        i: (np.zeros_like(p["W"]), np.zeros_like(p["b"]))
        for i, p in model.params.items()
    }
    rates = {
        i: config.learning_rate
        * (config.transferred_lr_multiplier if p["transferred"] else 1.0)
        for i, p in model.params.items()
    }

    history = []
    shadow = None
    for _ in range(config.epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            batch = images[idx]
            loss, grads = loss_and_gradients(
                model, batch, targets_std[idx], rng=rng
            )
            if not np.isfinite(loss):
                weights_ok = all(
                    np.isfinite(p["W"]).all() and np.isfinite(p["b"]).all()
                    for p in model.params.values()
                )
                if not weights_ok and shadow is not None:
                    for i, (W, b) in shadow.items():
                        model.params[i]["W"] = W
                        model.params[i]["b"] = b
                raise DivergenceDetected(
                    f"loss {loss} after {len(history)} epochs",
                    model=model,
                    loss_history=history,
                )
            shadow = {
                i: (p["W"].copy(), p["b"].copy())
                for i, p in model.params.items()
            }
            for i, (dW, db) in grads.items():
                vW, vb = velocity[i]
                vW *= config.momentum
                vW -= rates[i] * dW
                vb *= config.momentum
                vb -= rates[i] * db
                model.params[i]["W"] += vW
                model.params[i]["b"] += vb
            epoch_loss += loss * len(idx)
        history.append(epoch_loss / n)
    return model, history


def predict(model, images):
    """Network output for one image (H, W, C) or a batch (n, H, W, C).

    Dropout is disabled and the training-time target standardization is
    inverted, so outputs are in raw target units.
    """
    images = np.asarray(images)
    single = images.ndim == 3
    if single:
        images = images[None]
    pred, _ = _forward(model, images, rng=None)
    pred = pred.astype(float)
    if model.target_scale is not None:
        pred = pred * model.target_scale + model.target_center
    return pred[0] if single else pred


# --------------------------------------------------------------------------
# transfer
# --------------------------------------------------------------------------

_STAGES = ("scratch", "finetune", "cascade")


def transfer(donor, arch, new_output_dim, seed):
    """New model that inherits every non-Output layer from the donor.

    The target architecture must match the donor's except for the Output
    width. Inherited layers are tagged transferred (they train at the
    reduced rate); the Output head is freshly initialized under `seed`.
    The provenance chain advances one stage and the donor's weight digest
    is recorded.
    """
    arch = replace(
        arch, layers=tuple(arch.layers[:-1]) + (Output(new_output_dim),)
    )
    arch.validate()
    if (
        arch.layers[:-1] != donor.arch.layers[:-1]
        or arch.input_shape != donor.arch.input_shape
        or arch.input_scale != donor.arch.input_scale
    ):
        raise ShapeMismatch(
            "donor and target agree only up to the Output layer; "
            "body layers or input geometry differ"
        )
    out = build(arch, seed, dtype=donor.dtype)
    out_idx = len(arch.layers) - 1
    for i, p in donor.params.items():
        if i == out_idx:
            continue
        out.params[i] = {
            "W": p["W"].copy(),
            "b": p["b"].copy(),
            "transferred": True,
        }
    if donor.pixel_mean is not None:
        out.pixel_mean = donor.pixel_mean.copy()
    stage = _STAGES[min(_STAGES.index(donor.provenance[-1]) + 1, len(_STAGES) - 1)]
    out.provenance = tuple(donor.provenance) + (stage,)
    out.donor = model_id(donor)
    return out
