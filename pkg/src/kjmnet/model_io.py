"""Model bundle serialization.

A trained model travels as one file (magic "KWT1"): a JSON header holding
the architecture, layer shapes, provenance chain, per-waveform compression
models, the image scaler and free metadata, followed by the float32
little-endian weight payload (W then b per layer, in layer order). Scaler
and compression arrays live in the header as JSON numbers, which round-trip
float64 exactly; weights are float32, so loading after saving reproduces a
float32 model bit for bit and its predictions exactly.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptFile
from .imaging import ScalerParams
from .network import (
    ArchitectureSpec,
    Conv,
    FullyConnected,
    MaxPool,
    Output,
    RegressionModel,
)
from .pca import PcaModel

__all__ = ["ModelBundle", "save_model", "load_model"]

_KWT_MAGIC = b"KWT1"
_KWT_VERSION = 1


@dataclass
class ModelBundle:
    """Everything needed to predict curves from raw predictor rows."""

    model: RegressionModel
    pca: list  # PcaModel per predicted waveform
    scaler: ScalerParams
    metadata: dict = field(default_factory=dict)


def _layer_to_json(layer):
    if isinstance(layer, Conv):
        return {
            "kind": "conv",
            "out_channels": layer.out_channels,
            "kernel": layer.kernel,
            "stride": layer.stride,
            "pad": layer.pad,
            "relu": layer.relu,
        }
    if isinstance(layer, MaxPool):
        return {"kind": "pool", "kernel": layer.kernel, "stride": layer.stride}
    if isinstance(layer, FullyConnected):
        return {
            "kind": "fc",
            "out_features": layer.out_features,
            "relu": layer.relu,
            "dropout_p": layer.dropout_p,
        }
    if isinstance(layer, Output):
        return {"kind": "output", "out_features": layer.out_features}
    raise CorruptFile(f"unknown layer {layer!r}")


def _layer_from_json(d):
    kind = d.get("kind")
    if kind == "conv":
        return Conv(d["out_channels"], d["kernel"], d["stride"], d["pad"], d["relu"])
    if kind == "pool":
        return MaxPool(d["kernel"], d["stride"])
    if kind == "fc":
        return FullyConnected(d["out_features"], d["relu"], d["dropout_p"])
    if kind == "output":
        return Output(d["out_features"])
    raise CorruptFile(f"unknown layer kind {kind!r}")


def save_model(bundle, path):
    """Write a ModelBundle to the KWT1 format.

    Weights are stored as float32; a float64 model is narrowed on save.
    """
    model = bundle.model
    order = sorted(model.params)
    layer_meta, blobs = [], []
    for i in order:
        p = model.params[i]
        W = np.ascontiguousarray(p["W"], dtype="<f4")
        b = np.ascontiguousarray(p["b"], dtype="<f4")
        layer_meta.append(
            {
                "layer": i,
                "w_shape": list(W.shape),
                "b_shape": list(b.shape),
                "transferred": bool(p["transferred"]),
            }
        )
        blobs.append(W.tobytes())
        blobs.append(b.tobytes())
    if model.pixel_mean is None:
        mean_shape = None
    else:
        mean = np.ascontiguousarray(model.pixel_mean, dtype="<f4")
        mean_shape = list(mean.shape)
        blobs.append(mean.tobytes())

    header = {
        "version": _KWT_VERSION,
        "architecture": {
            "input_shape": list(model.arch.input_shape),
            "input_scale": model.arch.input_scale,
            "layers": [_layer_to_json(l) for l in model.arch.layers],
        },
        "pixel_mean_shape": mean_shape,
        "params": layer_meta,
        "provenance": list(model.provenance),
        "donor": model.donor,
        "target_transform": (
            None
            if model.target_center is None
            else {
                "center": np.asarray(model.target_center, dtype=float).tolist(),
                "scale": np.asarray(model.target_scale, dtype=float).tolist(),
            }
        ),
        "pca": [
            {
                "waveform": m.waveform,
                "mean": m.mean.tolist(),
                "basis": m.basis.tolist(),
                "explained": m.explained.tolist(),
                "threshold": m.threshold,
            }
            for m in bundle.pca
        ],
        "scaler": (
            None
            if bundle.scaler is None
            else {
                "axis_min": list(bundle.scaler.axis_min),
                "axis_max": list(bundle.scaler.axis_max),
            }
        ),
        "metadata": bundle.metadata,
    }
    hbytes = json.dumps(
        header, sort_keys=True, separators=(",", ":"), allow_nan=False
    ).encode()
    with open(path, "wb") as fh:
        fh.write(_KWT_MAGIC)
        fh.write(_KWT_VERSION.to_bytes(2, "little"))
        fh.write(len(hbytes).to_bytes(4, "little"))
        fh.write(hbytes)
        for blob in blobs:
            fh.write(blob)


def load_model(path):
    """Read a KWT1 bundle; raises CorruptFile on any structural problem."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _KWT_MAGIC:
        raise CorruptFile(f"bad magic {data[:4]!r}")
    version = int.from_bytes(data[4:6], "little")
    if version != _KWT_VERSION:
        raise CorruptFile(f"unsupported bundle version {version}")
    hlen = int.from_bytes(data[6:10], "little")
    if 10 + hlen > len(data):
        raise CorruptFile("header runs past end of file")
    try:
        header = json.loads(data[10:10 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFile(f"header is not valid JSON: {exc}") from exc

    ad = header["architecture"]
    arch = ArchitectureSpec(
        layers=tuple(_layer_from_json(l) for l in ad["layers"]),
        input_shape=tuple(ad["input_shape"]),
        input_scale=ad["input_scale"],
    )
    try:
        arch.validate()
    except Exception as exc:
        raise CorruptFile(f"stored architecture invalid: {exc}") from exc

    params = {}
    pos = 10 + hlen
    for meta in header["params"]:
        wn = int(np.prod(meta["w_shape"]))
        bn = int(np.prod(meta["b_shape"]))
        need = 4 * (wn + bn)
        if pos + need > len(data):
            raise CorruptFile(f"weights for layer {meta['layer']} truncated")
        W = np.frombuffer(data, dtype="<f4", count=wn, offset=pos).reshape(
            meta["w_shape"]
        ).copy()
        b = np.frombuffer(
            data, dtype="<f4", count=bn, offset=pos + 4 * wn
        ).reshape(meta["b_shape"]).copy()
        params[int(meta["layer"])] = {
            "W": W,
            "b": b,
            "transferred": bool(meta["transferred"]),
        }
        pos += need

    mean_shape = header.get("pixel_mean_shape")
    pixel_mean = None
    if mean_shape is not None:
        mn = int(np.prod(mean_shape))
        if pos + 4 * mn > len(data):
            raise CorruptFile("mean image truncated")
        pixel_mean = np.frombuffer(
            data, dtype="<f4", count=mn, offset=pos
        ).reshape(mean_shape).copy()
        pos += 4 * mn

    # Shape audit against the architecture itself.
    from .network import _parameterized

    expected = {i: wshape for i, _, _, wshape in _parameterized(arch)}
    if set(expected) != set(params):
        raise CorruptFile("stored layers do not match the architecture")
    for i, wshape in expected.items():
        if tuple(params[i]["W"].shape) != tuple(wshape):
            raise CorruptFile(
                f"layer {i} weights shaped {params[i]['W'].shape}, "
                f"architecture wants {wshape}"
            )

    tt = header.get("target_transform")
    model = RegressionModel(
        arch=arch,
        params=params,
        provenance=tuple(header["provenance"]),
        donor=header.get("donor"),
        target_center=None if tt is None else np.asarray(tt["center"], dtype=float),
        target_scale=None if tt is None else np.asarray(tt["scale"], dtype=float),
        pixel_mean=pixel_mean,
    )
    pca_models = []
    for d in header["pca"]:
        length = len(d["mean"])
        basis = np.asarray(d["basis"], dtype=float)
        if basis.size == 0:
            basis = np.zeros((length, 0))
        pca_models.append(
            PcaModel(
                waveform=d["waveform"],
                mean=np.asarray(d["mean"], dtype=float),
                basis=basis.reshape(length, -1),
                explained=np.asarray(d["explained"], dtype=float),
                threshold=d["threshold"],
            )
        )
    sc = header.get("scaler")
    scaler = (
        None
        if sc is None
        else ScalerParams(axis_min=tuple(sc["axis_min"]), axis_max=tuple(sc["axis_max"]))
    )
    return ModelBundle(
        model=model,
        pca=pca_models,
        scaler=scaler,
        metadata=header.get("metadata", {}),
    )
