"""Bit-exact checkpointing of a model bundle.

Single-file layout: an 8-byte magic, a little-endian uint32 header
length, a JSON header (version, net topology, optimizer state names,
rng state, array directory, payload digest), then the concatenated raw
array payload as little-endian float64. Loading verifies the digest
before constructing anything, so a corrupted file never yields a
partially built bundle.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from crossrec.gan import Discriminator, EncoderPair, Generator
from crossrec.nn import Adam, AdamSlot, DenseNet, Layer
from crossrec.recommender import ItemEmbeddings
from crossrec.training import CHECKPOINT_VERSION, ModelBundle

MAGIC = b"XRCKPT\x01\n"


class CheckpointError(RuntimeError):
    """Unreadable, corrupted, or incompatible checkpoint file."""


def _net_meta(name, net, arrays):
    layers = []
    for k, layer in enumerate(net.layers):
        wname = f"{name}.layer{k}.weight"
        bname = f"{name}.layer{k}.bias"
        arrays[wname] = layer.weight
        arrays[bname] = layer.bias
        layers.append({"activation": layer.activation, "weight": wname, "bias": bname})
    return {"layers": layers, "dropout": net.dropout}


def _net_from_meta(meta, arrays):
    layers = [Layer(weight=arrays[l["weight"]], bias=arrays[l["bias"]],
                    activation=l["activation"]) for l in meta["layers"]]
    return DenseNet(layers, dropout=meta["dropout"])


def save_checkpoint(bundle: ModelBundle, path) -> None:
    arrays: dict[str, np.ndarray] = {}
    nets = {"e_tn": bundle.encoders.e_tn, "e_sn": bundle.encoders.e_sn, "phi": bundle.phi}
    if bundle.generator is not None:
        nets["g"] = bundle.generator.net
    if bundle.discriminator is not None:
        nets["d"] = bundle.discriminator.net
    net_meta = {name: _net_meta(name, net, arrays) for name, net in sorted(nets.items())}
    arrays["items.matrix"] = bundle.items.matrix

    slots_meta = {}
    for name in sorted(bundle.adam.slots):
        slot = bundle.adam.slots[name]
        m_names, v_names = [], []
        for i, (m, v) in enumerate(zip(slot.m, slot.v)):
            mn, vn = f"adam.{name}.m{i}", f"adam.{name}.v{i}"
            arrays[mn] = m
            arrays[vn] = v
            m_names.append(mn)
            v_names.append(vn)
        slots_meta[name] = {"step": slot.step, "m": m_names, "v": v_names}

    directory = []
    chunks = []
    offset = 0
    for name in sorted(arrays):
        raw = np.ascontiguousarray(arrays[name], dtype="<f8").tobytes()
        directory.append({"name": name, "shape": list(arrays[name].shape),
                          "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)

    header = {
        "version": CHECKPOINT_VERSION,
        "meta": {
            "variant": bundle.variant,
            "num_topics": bundle.num_topics,
            "num_items": bundle.num_items,
            "encoding_dim": bundle.encoding_dim,
            "latent_dim": bundle.latent_dim,
            "next_anchor": bundle.next_anchor,
            "counters": dict(sorted(bundle.counters.items())),
            "nets": net_meta,
            "adam": {
                "lr": bundle.adam.lr, "beta1": bundle.adam.beta1,
                "beta2": bundle.adam.beta2, "eps": bundle.adam.eps,
                "slots": slots_meta,
            },
            "rng_state": bundle.rng.bit_generator.state,
        },
        "arrays": directory,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)


def load_checkpoint(path) -> ModelBundle:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 4 or not blob.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (header_len,) = struct.unpack_from("<I", blob, len(MAGIC))
    header_start = len(MAGIC) + 4
    header_end = header_start + header_len
    if len(blob) < header_end:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[header_start:header_end].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header: {exc}") from None
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {header.get('version')!r} is not supported "
            f"(expected {CHECKPOINT_VERSION})")
    payload = blob[header_end:]
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise CheckpointError(f"{path}: payload digest mismatch, file is corrupted")

    arrays = {}
    for entry in header["arrays"]:
        raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise CheckpointError(f"{path}: truncated payload for {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8").astype(
            float).reshape(entry["shape"])

    meta = header["meta"]
    nets = {name: _net_from_meta(m, arrays) for name, m in meta["nets"].items()}
    adam_meta = meta["adam"]
    adam = Adam(lr=adam_meta["lr"], beta1=adam_meta["beta1"],
                beta2=adam_meta["beta2"], eps=adam_meta["eps"])
    for name, slot in adam_meta["slots"].items():
        adam.slots[name] = AdamSlot(m=[arrays[k] for k in slot["m"]],
                                    v=[arrays[k] for k in slot["v"]],
                                    step=slot["step"])

    rng = np.random.default_rng()
    state = meta["rng_state"]
    try:
        rng.bit_generator.state = state
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: invalid rng state: {exc}") from None

    return ModelBundle(
        variant=meta["variant"], num_topics=meta["num_topics"],
        num_items=meta["num_items"], encoding_dim=meta["encoding_dim"],
        latent_dim=meta["latent_dim"],
        encoders=EncoderPair(e_tn=nets["e_tn"], e_sn=nets["e_sn"]),
        generator=Generator(net=nets["g"]) if "g" in nets else None,
        discriminator=Discriminator(net=nets["d"]) if "d" in nets else None,
        phi=nets["phi"], items=ItemEmbeddings(matrix=arrays["items.matrix"]),
        adam=adam, rng=rng, next_anchor=meta["next_anchor"],
        counters=dict(meta["counters"]))
