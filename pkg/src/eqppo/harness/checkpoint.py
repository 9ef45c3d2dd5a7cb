"""Versioned binary checkpoints.

Single-network format (``.net``), little-endian throughout::

    offset  size          field
    0       4             magic b"EQN1"
    4       4             uint32 format version (currently 1)
    8       1             uint8 dtype code: 0 = float32, 1 = float64
    9       3             zero padding
    12      4             uint32 L = number of layers
    16      4*L           uint32 layer sizes s_0 .. s_{L-1}
    16+4L   8             uint64 init seed
    then, for each weight layer l in 0..L-2, in order:
        s_l * s_{l+1} * itemsize   W_l, row-major (rows = layer l)
        s_{l+1} * itemsize         b_l

A training bundle (``.bundle``) is a standard zip archive holding
``config.yaml``, ``meta.yaml`` (config hash, sample/update counters),
``policy.net``, ``value.net``, and ``state.npz`` with the log-std vector,
both running-normalizer states, and all optimizer slots.  Everything needed
to resume bit-exactly or to roll a policy back.
"""

from __future__ import annotations

import io
import struct
import zipfile

import numpy as np
import yaml

from ..eqprop import LayeredEnergyNet
from ..errors import CheckpointError

NET_MAGIC = b"EQN1"
NET_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def net_to_bytes(net: LayeredEnergyNet) -> bytes:
    code = _DTYPE_CODES.get(np.dtype(net.dtype))
    if code is None:
        raise CheckpointError(f"unsupported parameter dtype {net.dtype}")
    out = io.BytesIO()
    out.write(NET_MAGIC)
    out.write(struct.pack("<IBxxxI", NET_VERSION, code, len(net.sizes)))
    out.write(struct.pack(f"<{len(net.sizes)}I", *net.sizes))
    out.write(struct.pack("<Q", net.seed))
    dt = _DTYPES[code]
    for w, b in zip(net.weights, net.biases):
        out.write(np.ascontiguousarray(w, dtype=dt).tobytes())
        out.write(np.ascontiguousarray(b, dtype=dt).tobytes())
    return out.getvalue()


def net_from_bytes(blob: bytes) -> LayeredEnergyNet:
    if blob[:4] != NET_MAGIC:
        raise CheckpointError("not a network checkpoint (bad magic)")
    version, code, n_layers = struct.unpack_from("<IBxxxI", blob, 4)
    if version != NET_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if code not in _DTYPES:
        raise CheckpointError(f"unknown dtype code {code}")
    off = 16
    sizes = struct.unpack_from(f"<{n_layers}I", blob, off)
    off += 4 * n_layers
    (seed,) = struct.unpack_from("<Q", blob, off)
    off += 8
    dt = _DTYPES[code]
    weights, biases = [], []
    for l in range(n_layers - 1):
        n = sizes[l] * sizes[l + 1]
        w = np.frombuffer(blob, dtype=dt, count=n, offset=off).reshape(sizes[l], sizes[l + 1])
        off += n * dt.itemsize
        b = np.frombuffer(blob, dtype=dt, count=sizes[l + 1], offset=off)
        off += sizes[l + 1] * dt.itemsize
        weights.append(w.copy())
        biases.append(b.copy())
    if off != len(blob):
        raise CheckpointError(f"trailing bytes in checkpoint ({len(blob) - off})")
    return LayeredEnergyNet(sizes, weights, biases, dt, seed)


def save_net(path, net: LayeredEnergyNet) -> None:
    with open(path, "wb") as fh:
        fh.write(net_to_bytes(net))


def load_net(path) -> LayeredEnergyNet:
    with open(path, "rb") as fh:
        return net_from_bytes(fh.read())


def save_bundle(path, config_yaml: str, config_hash: str, policy: LayeredEnergyNet,
                value: LayeredEnergyNet, state_arrays: dict[str, np.ndarray],
                sample_count: int, update_count: int) -> None:
    """Write the full training bundle; ``state_arrays`` carries log_sigma,
    normalizer statistics, and optimizer slots under flat string keys."""
    with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("config.yaml", config_yaml)
        zf.writestr("meta.yaml", yaml.safe_dump(
            dict(config_hash=config_hash, sample_count=int(sample_count),
                 update_count=int(update_count))))
        zf.writestr("policy.net", net_to_bytes(policy))
        zf.writestr("value.net", net_to_bytes(value))
        buf = io.BytesIO()
        np.savez(buf, **state_arrays)
        zf.writestr("state.npz", buf.getvalue())


def load_bundle(path) -> dict:
    """Read a bundle back; returns config_yaml, meta, policy, value, state."""
    try:
        zf = zipfile.ZipFile(path)
    except (OSError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"cannot open bundle {path}: {exc}") from exc
    with zf:
        names = set(zf.namelist())
        required = {"config.yaml", "meta.yaml", "policy.net", "value.net", "state.npz"}
        missing = required - names
        if missing:
            raise CheckpointError(f"bundle {path} is missing {sorted(missing)}")
        with np.load(io.BytesIO(zf.read("state.npz"))) as npz:
            state = {k: npz[k] for k in npz.files}
        return dict(
            config_yaml=zf.read("config.yaml").decode(),
            meta=yaml.safe_load(zf.read("meta.yaml")),
            policy=net_from_bytes(zf.read("policy.net")),
            value=net_from_bytes(zf.read("value.net")),
            state=state,
        )
