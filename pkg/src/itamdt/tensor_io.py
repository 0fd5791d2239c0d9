"""Raw little-endian float32 blobs with JSON sidecars, plus PNG helpers."""

import json
from pathlib import Path

import numpy as np
from PIL import Image


def save_tensor(path, array, **meta):
    """Write ``array`` to ``path`` as raw <f4 bytes and ``path.json`` as sidecar.

    Extra keyword arguments land in the sidecar next to ``shape`` and ``dtype``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.array(array, dtype="<f4", order="C")
    path.write_bytes(arr.tobytes())
    sidecar = {"shape": list(arr.shape), "dtype": "float32-le", **meta}
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return sidecar


def load_tensor(path):
    """Read a blob written by :func:`save_tensor`; returns ``(array, sidecar)``."""
    path = Path(path)
    sidecar = json.loads(Path(str(path) + ".json").read_text())
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    shape = tuple(sidecar["shape"])
    if raw.size != int(np.prod(shape)):
        raise ValueError(f"{path}: blob holds {raw.size} floats, sidecar says {shape}")
    return raw.reshape(shape).astype(np.float32), sidecar


def to_uint8(image):
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(path, image):
    """Save a C×H×W float image in [0, 1] (C = 1 or 3) as an 8-bit PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[None]
    data = to_uint8(image)
    if data.shape[0] == 1:
        Image.fromarray(data[0], mode="L").save(path)
    else:
        Image.fromarray(np.transpose(data, (1, 2, 0)), mode="RGB").save(path)


def load_png(path):
    """Load a PNG as a C×H×W float32 array in [0, 1]."""
    with Image.open(path) as img:
        data = np.asarray(img)
    if data.ndim == 2:
        data = data[None]
    else:
        data = np.transpose(data[..., :3], (2, 0, 1))
    return data.astype(np.float32) / 255.0
