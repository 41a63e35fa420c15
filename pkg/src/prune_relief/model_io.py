"""Model checkpoint directory format.

A checkpoint is a directory holding ``model.json`` (architecture plus a tensor
manifest) and ``weights.bin`` (raw little-endian float32 parameter blobs in
manifest order, followed by the masks as uint8 0/1). Every blob records its
byte offset, length, and CRC32 so loads can reject torn or tampered files.
Round-tripping a network through save/load is bit-exact.
"""

import json
import zlib
from pathlib import Path

import numpy as np

from .errors import FormatError
from .layers import ConvLayer, DenseLayer, Flatten, MaxPool2D
from .network import Network

FORMAT_NAME = "prune-relief-model"
FORMAT_VERSION = 1

_FLOAT = "f32le"
_MASK = "u8"


def _layer_record(layer) -> dict:
    if isinstance(layer, DenseLayer):
        return {"kind": "dense", "activation": layer.activation,
                "out": layer.fan_out, "in": layer.fan_in}
    if isinstance(layer, ConvLayer):
        return {"kind": "conv", "activation": layer.activation,
                "out": layer.out_channels, "in": layer.in_channels,
                "kernel": layer.kernel_size,
                "stride": list(layer.stride), "padding": list(layer.padding)}
    if isinstance(layer, MaxPool2D):
        return {"kind": "maxpool", "window": list(layer.window),
                "stride": list(layer.stride)}
    if isinstance(layer, Flatten):
        return {"kind": "flatten"}
    raise FormatError(f"cannot serialize layer kind {type(layer).__name__}")


def save_model(net: Network, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    blobs: list[tuple[str, str, np.ndarray]] = []
    for i, layer in enumerate(net.layers):
        for pname, arr in layer.params().items():
            blobs.append((f"layers.{i}.{pname}", _FLOAT,
                          np.ascontiguousarray(arr, dtype="<f4")))
    for i, layer in enumerate(net.layers):
        for mname, arr in layer.stored_masks().items():
            blobs.append((f"layers.{i}.{mname}", _MASK,
                          np.ascontiguousarray(arr, dtype=np.uint8)))
    tensors = []
    chunks = []
    offset = 0
    for name, kind, arr in blobs:
        raw = arr.tobytes()
        tensors.append({
            "name": name,
            "kind": kind,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
            "crc32": zlib.crc32(raw),
        })
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "input_shape": list(net.input_shape),
        "classes": net.classes,
        "layers": [_layer_record(l) for l in net.layers],
        "tensors": tensors,
    }
    (path / "model.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    (path / "weights.bin").write_bytes(b"".join(chunks))


def _read_manifest(path: Path) -> dict:
    mpath = path / "model.json"
    if not mpath.is_file():
        raise FormatError(f"{mpath} does not exist")
    try:
        manifest = json.loads(mpath.read_text())
    except (OSError, ValueError) as e:
        raise FormatError(f"cannot parse {mpath}: {e}") from e
    if not isinstance(manifest, dict):
        raise FormatError(f"{mpath} is not a JSON object")
    if manifest.get("format") != FORMAT_NAME:
        raise FormatError(f"{mpath} has format {manifest.get('format')!r}, "
                          f"expected {FORMAT_NAME!r}")
    if manifest.get("version") != FORMAT_VERSION:
        raise FormatError(f"{mpath} has version {manifest.get('version')!r}, "
                          f"expected {FORMAT_VERSION}")
    return manifest


def _extract(blob: bytes, rec: dict, path: Path) -> np.ndarray:
    try:
        name = rec["name"]
        kind = rec["kind"]
        shape = tuple(int(d) for d in rec["shape"])
        offset = int(rec["offset"])
        nbytes = int(rec["nbytes"])
        crc = int(rec["crc32"])
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"malformed tensor record in {path}: {e}") from e
    if kind == _FLOAT:
        dtype = np.dtype("<f4")
    elif kind == _MASK:
        dtype = np.dtype(np.uint8)
    else:
        raise FormatError(f"tensor {name}: unknown kind {kind!r}")
    if offset < 0 or offset + nbytes > len(blob):
        raise FormatError(f"tensor {name}: range [{offset}, {offset + nbytes}) "
                          f"outside weights.bin of {len(blob)} bytes")
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if nbytes != expected:
        raise FormatError(f"tensor {name}: {nbytes} bytes recorded but shape "
                          f"{shape} needs {expected}")
    raw = blob[offset:offset + nbytes]
    if zlib.crc32(raw) != crc:
        raise FormatError(f"tensor {name}: CRC32 mismatch, file is corrupt")
    arr = np.frombuffer(raw, dtype=dtype).reshape(shape)
    if kind == _FLOAT:
        return arr.astype(np.float32, copy=True)
    return arr.copy()


def load_model(path) -> Network:
    path = Path(path)
    manifest = _read_manifest(path)
    bpath = path / "weights.bin"
    if not bpath.is_file():
        raise FormatError(f"{bpath} does not exist")
    blob = bpath.read_bytes()
    total = sum(int(t.get("nbytes", 0)) for t in manifest.get("tensors", []))
    if total != len(blob):
        raise FormatError(f"{bpath} holds {len(blob)} bytes but the manifest "
                          f"declares {total}")
    tensors = {}
    for rec in manifest.get("tensors", []):
        arr = _extract(blob, rec, path)
        tensors[rec["name"]] = arr

    def take(name, expect_shape=None):
        if name not in tensors:
            raise FormatError(f"manifest is missing tensor {name}")
        arr = tensors.pop(name)
        if expect_shape is not None and arr.shape != tuple(expect_shape):
            raise FormatError(f"tensor {name} has shape {arr.shape}, layer "
                              f"declaration implies {tuple(expect_shape)}")
        return arr

    layers = []
    try:
        for i, rec in enumerate(manifest.get("layers", [])):
            kind = rec.get("kind")
            if kind == "dense":
                o, n = int(rec["out"]), int(rec["in"])
                layers.append(DenseLayer(
                    take(f"layers.{i}.weights", (o, n)),
                    take(f"layers.{i}.bias", (o,)),
                    rec["activation"],
                    take(f"layers.{i}.weight_mask", (o, n)).astype(np.float32),
                    take(f"layers.{i}.bias_mask", (o,)).astype(np.float32)))
            elif kind == "conv":
                o, n, r = int(rec["out"]), int(rec["in"]), int(rec["kernel"])
                layers.append(ConvLayer(
                    take(f"layers.{i}.kernels", (o, n, r, r)),
                    take(f"layers.{i}.bias", (o,)),
                    rec["activation"],
                    tuple(rec["stride"]), tuple(rec["padding"]),
                    take(f"layers.{i}.kernel_mask", (o, n)).astype(np.float32),
                    take(f"layers.{i}.bias_mask", (o,)).astype(np.float32)))
            elif kind == "maxpool":
                layers.append(MaxPool2D(tuple(rec["window"]), tuple(rec["stride"])))
            elif kind == "flatten":
                layers.append(Flatten())
            else:
                raise FormatError(f"layer {i}: unknown kind {kind!r}")
    except (KeyError, TypeError) as e:
        raise FormatError(f"malformed layer record in {path}: {e}") from e
    except ValueError as e:
        # mask/value invariant violations surface as ValueError from layers
        raise FormatError(f"invalid checkpoint {path}: {e}") from e
    if tensors:
        raise FormatError(f"manifest declares tensors not owned by any layer: "
                          f"{sorted(tensors)}")
    try:
        return Network(layers, manifest["input_shape"], manifest["classes"],
                       strict=False)
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"invalid checkpoint {path}: {e}") from e
