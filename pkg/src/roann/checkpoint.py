"""JSON checkpoint container shared by both model families.

Each array is stored as ``{"shape": [...], "data": <base64 little-endian f64>}``
next to the scalar settings needed to rebuild the model, so files are
portable and human-inspectable.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from .fnn import RoaFnnModel
from .optim import OptimizerState
from .rnn import RoaRnnModel

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_array(a) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_array(obj: dict) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in obj["shape"])
        raw = base64.b64decode(obj["data"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed array entry: {exc}") from exc
    count = int(np.prod(shape)) if shape else 1
    if len(raw) != 8 * count:
        raise CheckpointError(f"payload of {len(raw)} bytes does not fit shape {shape}")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)


def model_to_dict(model) -> dict:
    if isinstance(model, RoaFnnModel):
        return {
            "type": "roafnn",
            "alpha": model.alpha,
            "rho": model.rho,
            "activation": model.activation.value,
            "weights": [encode_array(w) for w in model.weights],
            "biases": [encode_array(b) for b in model.biases],
            "filters": [encode_array(o) for o in model.filters],
        }
    if isinstance(model, RoaRnnModel):
        out = {
            "type": "roarnn",
            "alpha": model.alpha,
            "rho": model.rho,
            "activation": model.activation.value,
            "readout": model.readout.value,
        }
        for name in ("W_h", "b_h", "W_i", "W_o", "b_o", "O"):
            out[name] = encode_array(getattr(model, name))
        return out
    raise TypeError(f"cannot serialize {type(model).__name__}")


def model_from_dict(obj: dict):
    kind = obj.get("type")
    try:
        if kind == "roafnn":
            return RoaFnnModel(
                [decode_array(w) for w in obj["weights"]],
                [decode_array(b) for b in obj["biases"]],
                [decode_array(o) for o in obj["filters"]],
                float(obj["alpha"]), obj["activation"], obj.get("rho"),
            )
        if kind == "roarnn":
            arrays = {name: decode_array(obj[name]) for name in ("W_h", "b_h", "W_i", "W_o", "b_o", "O")}
            return RoaRnnModel(**arrays, alpha=float(obj["alpha"]), activation=obj["activation"],
                               readout=obj["readout"], rho=obj.get("rho"))
    except KeyError as exc:
        raise CheckpointError(f"checkpoint is missing field {exc}") from exc
    raise CheckpointError(f"unknown model type {kind!r}")


def save_checkpoint(path, model, optimizer_state: OptimizerState | None = None,
                    metadata: dict | None = None) -> None:
    payload = {"format": FORMAT_VERSION, "model": model_to_dict(model), "metadata": metadata or {}}
    if optimizer_state is not None:
        payload["optimizer"] = {
            "step": optimizer_state.step,
            "buffers": {p: {k: encode_array(v) for k, v in bufs.items()}
                        for p, bufs in optimizer_state.buffers.items()},
        }
    Path(path).write_text(json.dumps(payload))


def load_checkpoint(path):
    """Return ``(model, optimizer_state or None, metadata)``."""
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not a JSON checkpoint ({exc})") from exc
    if payload.get("format") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format {payload.get('format')!r}")
    model = model_from_dict(payload["model"])
    state = None
    if "optimizer" in payload:
        opt = payload["optimizer"]
        state = OptimizerState(int(opt["step"]), {
            p: {k: decode_array(v) for k, v in bufs.items()} for p, bufs in opt["buffers"].items()})
    return model, state, payload.get("metadata", {})


def describe(path) -> dict:
    """Shapes and settings of a checkpoint without the payloads."""
    payload = json.loads(Path(path).read_text())
    m = payload["model"]
    out = {"format": payload.get("format"), "type": m.get("type"), "alpha": m.get("alpha"),
           "rho": m.get("rho"), "activation": m.get("activation"), "metadata": payload.get("metadata", {})}
    shapes = {}
    for key, value in m.items():
        if isinstance(value, dict) and "shape" in value:
            shapes[key] = value["shape"]
        elif isinstance(value, list) and value and isinstance(value[0], dict):
            shapes[key] = [v["shape"] for v in value]
    out["shapes"] = shapes
    if "optimizer" in payload:
        out["optimizer_step"] = payload["optimizer"]["step"]
    return out
