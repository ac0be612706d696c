"""Binary model serialization: magic "GPCS", version, manifest, payload, CRC.

Layout: ``b"GPCS" | u32 version | u64 manifest length | manifest utf-8 |
payload | u32 crc32(payload)``.  The manifest is structured text listing
metadata, networks, layers, and tensor shapes; the payload is the tensors'
little-endian float64 bytes in manifest order, so a load/save round trip
reproduces inference outputs bit-identically.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .errors import IntegrityError
from .gan import DiscriminatorModel, GeneratorModel
from .nn import BatchNorm2d, Network, layer_from_spec

MAGIC = b"GPCS"
VERSION = 1


def _layer_line(layer):
    spec = layer.spec()
    kind = spec.pop("kind")
    parts = [f"{k}={v}" for k, v in sorted(spec.items())]
    return f"layer {kind}" + ("" if not parts else " " + " ".join(parts))


def _network_tensors(prefix, net):
    """(name, array) pairs in serialization order: params then batchnorm stats."""
    out = []
    for i, layer in enumerate(net.layers):
        for name in sorted(layer.params):
            out.append((f"{prefix}.{i}.{name}", layer.params[name]))
        if isinstance(layer, BatchNorm2d):
            for name, arr in sorted(layer.state_tensors().items()):
                out.append((f"{prefix}.{i}.{name}", arr))
    return out


def save_model(path, generator, discriminator=None, metadata=None):
    """Write generator (and optionally discriminator) with metadata."""
    networks = [("generator", generator.net)]
    if discriminator is not None:
        networks.append(("discriminator", discriminator.net))
    lines = []
    meta = {
        "image_size": f"{generator.image_size[0]} {generator.image_size[1]}",
        "channels": str(generator.channels),
        "latent_dim": str(generator.latent_dim),
    }
    meta.update({k: str(v) for k, v in (metadata or {}).items()})
    for key in sorted(meta):
        lines.append(f"meta {key} {meta[key]}")
    tensors = []
    for name, net in networks:
        lines.append(f"network {name} mode={net.mode} input={','.join(map(str, net.input_shape))}")
        for layer in net.layers:
            lines.append(_layer_line(layer))
        for tensor_name, arr in _network_tensors(name, net):
            lines.append(f"tensor {tensor_name} {' '.join(str(s) for s in arr.shape)}")
            tensors.append(arr)
    manifest = ("\n".join(lines) + "\n").encode("utf-8")
    payload = b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes() for arr in tensors)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload)))


class ModelBundle:
    def __init__(self, generator, discriminator, metadata):
        self.generator = generator
        self.discriminator = discriminator
        self.metadata = metadata


def _parse_kv(parts):
    out = {}
    for part in parts:
        key, _, value = part.partition("=")
        out[key] = value
    return out


def load_model(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise IntegrityError(f"{path}: bad magic bytes (not a model file)")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != VERSION:
        raise IntegrityError(f"{path}: unsupported model version {version} (expected {VERSION})")
    (manifest_len,) = struct.unpack("<Q", blob[8:16])
    manifest_end = 16 + manifest_len
    if manifest_end + 4 > len(blob):
        raise IntegrityError(f"{path}: truncated file")
    try:
        manifest = blob[16:manifest_end].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise IntegrityError(f"{path}: manifest is not valid UTF-8 ({exc})") from None
    payload = blob[manifest_end:-4]
    (crc_stored,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) != crc_stored:
        raise IntegrityError(f"{path}: payload CRC mismatch")

    metadata = {}
    networks = {}  # name -> (mode, input_shape, [layer specs], [(tensor name, shape)])
    current = None
    for line in manifest.splitlines():
        if not line.strip():
            continue
        kind, _, rest = line.partition(" ")
        if kind == "meta":
            key, _, value = rest.partition(" ")
            metadata[key] = value
        elif kind == "network":
            name, *attrs = rest.split()
            kv = _parse_kv(attrs)
            input_shape = tuple(int(v) for v in kv["input"].split(","))
            current = {"mode": kv["mode"], "input": input_shape, "layers": [], "tensors": []}
            networks[name] = current
        elif kind == "layer":
            layer_kind, *attrs = rest.split()
            spec = {"kind": layer_kind}
            spec.update(_parse_kv(attrs))
            current["layers"].append(spec)
        elif kind == "tensor":
            name, *shape = rest.split()
            current["tensors"].append((name, tuple(int(s) for s in shape)))
        else:
            raise IntegrityError(f"{path}: unknown manifest record {kind!r}")

    offset = 0
    built = {}
    for name, info in networks.items():
        layers = [layer_from_spec(spec) for spec in info["layers"]]
        net = Network(layers, input_shape=info["input"], mode=info["mode"])
        for tensor_name, shape in info["tensors"]:
            count = int(np.prod(shape)) if shape else 1
            end = offset + 8 * count
            if end > len(payload):
                raise IntegrityError(f"{path}: payload shorter than manifest describes")
            arr = np.frombuffer(payload[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
            offset = end
            _, idx, pname = tensor_name.split(".", 2)
            layer = net.layers[int(idx)]
            if pname in layer.params:
                if layer.params[pname].shape != arr.shape:
                    raise IntegrityError(f"{path}: tensor {tensor_name} has unexpected shape {arr.shape}")
                layer.params[pname] = arr
            elif isinstance(layer, BatchNorm2d):
                layer.set_state_tensor(pname, arr)
            else:
                raise IntegrityError(f"{path}: tensor {tensor_name} does not match any parameter")
        built[name] = net
    if offset != len(payload):
        raise IntegrityError(f"{path}: payload longer than manifest describes")

    image_size = tuple(int(v) for v in metadata["image_size"].split())
    channels = int(metadata["channels"])
    generator = GeneratorModel(
        net=built["generator"],
        latent_dim=int(metadata["latent_dim"]),
        image_size=image_size,
        channels=channels,
    )
    discriminator = None
    if "discriminator" in built:
        discriminator = DiscriminatorModel(
            net=built["discriminator"], image_size=image_size, channels=channels
        )
    return ModelBundle(generator=generator, discriminator=discriminator, metadata=metadata)
