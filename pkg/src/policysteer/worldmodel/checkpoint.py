"""World-model checkpoints: a JSON manifest next to a little-endian float32 blob.

The manifest records dimensions, loss weights, seed, the training-data hash,
and the byte layout of every tensor. Loading checks the blob's sha256 and each
tensor's shape before anything is handed back.
"""

import hashlib
import json
import os

import numpy as np

from .._validation import D_ACT, D_OBS
from ..exceptions import CheckpointError, ConfigurationError
from .model import WorldModelParams

FORMAT = "policysteer.worldmodel/1"
_DTYPE = np.dtype("<f4")
_NORM = ("obs_mean", "obs_std", "act_mean", "act_std")


def _tensors(params):
    for name in sorted(params.weights):
        yield name, params.weights[name]
    for name in _NORM:
        yield "norm/" + name, np.asarray(getattr(params, name))


def save_checkpoint(params, path):
    """Write ``path`` (manifest) and ``path`` with a ``.bin`` suffix (blob)."""
    params.validate()
    blob_path = os.path.splitext(path)[0] + ".bin"
    layout, chunks, offset = [], [], 0
    for name, arr in _tensors(params):
        data = np.ascontiguousarray(arr, dtype=_DTYPE).tobytes()
        layout.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    blob = b"".join(chunks)
    manifest = {
        "format": FORMAT,
        "dims": {"d_obs": D_OBS, "d_act": D_ACT, "d_h": params.d_h, "d_z": params.d_z, "d_hidden": params.d_hidden},
        "loss_weights": dict(zip(("alpha_dyn", "alpha_rep", "alpha_pred"), map(float, params.loss_weights))),
        "seed": int(params.seed),
        "data_hash": params.data_hash,
        "blob": os.path.basename(blob_path),
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
        "dtype": "float32-le",
        "tensors": layout,
        "history": params.history,
    }
    with open(blob_path, "wb") as fh:
        fh.write(blob)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest


def load_checkpoint(path):
    try:
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read world-model manifest {path!r}: {exc}") from exc
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"unexpected world-model format {manifest.get('format')!r}")
    try:
        dims = manifest["dims"]
        if dims["d_obs"] != D_OBS or dims["d_act"] != D_ACT:
            raise CheckpointError("observation/action dimensions do not match this build")
        blob_path = os.path.join(os.path.dirname(path), manifest["blob"])
        with open(blob_path, "rb") as fh:
            blob = fh.read()
        if hashlib.sha256(blob).hexdigest() != manifest["blob_sha256"]:
            raise CheckpointError("tensor blob does not match the manifest hash")
        tensors = {}
        for entry in manifest["tensors"]:
            start, n = entry["offset"], entry["nbytes"]
            if start + n > len(blob):
                raise CheckpointError(f"tensor {entry['name']!r} runs past the end of the blob")
            arr = np.frombuffer(blob[start : start + n], dtype=_DTYPE).astype(np.float64)
            tensors[entry["name"]] = arr.reshape(entry["shape"])
        w = manifest["loss_weights"]
        params = WorldModelParams(
            weights={k: v for k, v in tensors.items() if not k.startswith("norm/")},
            d_h=int(dims["d_h"]),
            d_z=int(dims["d_z"]),
            d_hidden=int(dims["d_hidden"]),
            loss_weights=(w["alpha_dyn"], w["alpha_rep"], w["alpha_pred"]),
            seed=int(manifest["seed"]),
            data_hash=manifest["data_hash"],
            history=manifest.get("history", {}),
            **{name: tensors["norm/" + name] for name in _NORM},
        )
        return params.validate()
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError, OSError, ConfigurationError) as exc:
        raise CheckpointError(f"invalid world-model checkpoint: {exc}") from exc
