"""Deterministic checkpoint container.

Layout: magic line, 8-byte little-endian manifest length, UTF-8 JSON manifest
(sorted keys), then the raw little-endian float32 parameter arrays in the
manifest's layer order. The manifest records the architecture, stage index,
team sizes trained, RNG state, and a SHA-256 of the payload; loading verifies
the digest and raises ChecksumMismatch on corruption. Round-trips are
bit-exact and the bytes contain no timestamps.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import torch

from .nets import ActorNet, CriticNet

MAGIC = b"CABLETOW-CKPT-1\n"


class ChecksumMismatch(RuntimeError):
    """Checkpoint payload does not match its manifest digest."""


def _arrays_of(net: torch.nn.Module) -> dict[str, np.ndarray]:
    return {
        name: p.detach().cpu().numpy().astype("<f4")
        for name, p in net.named_parameters()
    }


def save_checkpoint(path: str | Path, actor: ActorNet,
                    manifest_extra: dict | None = None,
                    critic: CriticNet | None = None) -> None:
    arrays = {f"actor/{k}": v for k, v in _arrays_of(actor).items()}
    if critic is not None:
        arrays.update({f"critic/{k}": v for k, v in _arrays_of(critic).items()})
    layers = [{"name": k, "shape": list(v.shape)} for k, v in arrays.items()]
    payload = b"".join(arrays[l["name"]].tobytes() for l in layers)
    manifest = {
        "format": 1,
        "arch": {
            "actor": {"sigma_min": actor.sigma_min, "sigma_max": actor.sigma_max},
            "critic": None if critic is None else {
                "team_size": critic.team_size, "local_scope": critic.local_scope,
            },
        },
        "layers": layers,
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    manifest.update(manifest_extra or {})
    blob = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(len(blob).to_bytes(8, "little"))
        f.write(blob)
        f.write(payload)


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(path)
    raw = path.read_bytes()
    if not raw.startswith(MAGIC):
        raise ChecksumMismatch(f"{path}: bad magic, not a checkpoint")
    off = len(MAGIC)
    blob_len = int.from_bytes(raw[off:off + 8], "little")
    off += 8
    manifest = json.loads(raw[off:off + blob_len].decode())
    payload = raw[off + blob_len:]
    if hashlib.sha256(payload).hexdigest() != manifest["sha256"]:
        raise ChecksumMismatch(f"{path}: payload digest mismatch")
    arrays: dict[str, np.ndarray] = {}
    pos = 0
    for layer in manifest["layers"]:
        count = int(np.prod(layer["shape"])) if layer["shape"] else 1
        nbytes = count * 4
        arrays[layer["name"]] = np.frombuffer(
            payload[pos:pos + nbytes], dtype="<f4"
        ).reshape(layer["shape"]).copy()
        pos += nbytes
    if pos != len(payload):
        raise ChecksumMismatch(f"{path}: payload length mismatch")
    return manifest, arrays


def _load_into(net: torch.nn.Module, arrays: dict[str, np.ndarray], prefix: str) -> None:
    with torch.no_grad():
        for name, p in net.named_parameters():
            key = prefix + name
            if key not in arrays:
                raise ChecksumMismatch(f"missing layer {key} in checkpoint")
            a = arrays[key]
            if tuple(a.shape) != tuple(p.shape):
                raise ChecksumMismatch(f"layer {key} shape {a.shape} != {tuple(p.shape)}")
            p.copy_(torch.from_numpy(np.ascontiguousarray(a)))


def actor_from_checkpoint(path: str | Path) -> tuple[ActorNet, dict]:
    manifest, arrays = load_checkpoint(path)
    arch = manifest["arch"]["actor"]
    net = ActorNet(seed_or_rng=0, sigma_min=arch["sigma_min"],
                   sigma_max=arch.get("sigma_max"))
    _load_into(net, arrays, "actor/")
    net.eval()
    return net, manifest
