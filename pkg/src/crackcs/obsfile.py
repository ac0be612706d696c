"""Observation files: text header, then raw little-endian float64 payload."""

from __future__ import annotations

import numpy as np

from .errors import IntegrityError

_SEPARATOR = b"---\n"


def save_observation(path, obs, descriptor, image_shape):
    obs = np.asarray(obs, dtype=np.float64)
    header = (
        "crackcs-observation 1\n"
        f"image_shape {','.join(str(s) for s in image_shape)}\n"
        f"obs_shape {','.join(str(s) for s in obs.shape)}\n"
        f"operator {descriptor}\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8"))
        fh.write(_SEPARATOR)
        fh.write(np.ascontiguousarray(obs, dtype="<f8").tobytes())


def load_observation(path):
    """Returns (observation array, descriptor string, image shape tuple)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    sep = blob.find(_SEPARATOR)
    if sep < 0:
        raise IntegrityError(f"{path}: missing header separator")
    header = blob[:sep].decode("utf-8")
    payload = blob[sep + len(_SEPARATOR):]
    fields = {}
    for i, line in enumerate(header.splitlines()):
        if i == 0:
            if line != "crackcs-observation 1":
                raise IntegrityError(f"{path}: not a crackcs observation file")
            continue
        key, _, value = line.partition(" ")
        fields[key] = value
    image_shape = tuple(int(v) for v in fields["image_shape"].split(","))
    obs_shape = tuple(int(v) for v in fields["obs_shape"].split(","))
    count = int(np.prod(obs_shape))
    if len(payload) != 8 * count:
        raise IntegrityError(f"{path}: payload size {len(payload)} != 8*{count}")
    obs = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(obs_shape)
    return obs, fields["operator"], image_shape
