"""Binary model container.

Layout: magic ``LEWISMDL``, u32 version, u32 header length, UTF-8 JSON
header (role, style, vocab hash, config, metadata, parameter table), then
little-endian f32 blobs in header order.
"""

import json
import os
import struct
from typing import Union

import numpy as np

from unstract.lewis.corpus import Vocabulary
from unstract.lewis.exceptions import FormatError, VocabMismatch
from unstract.lewis.neural.model import ModelBundle, ModelConfig, build_network

MAGIC = b"LEWISMDL"
VERSION = 1


def model_to_bytes(model: ModelBundle) -> bytes:
    params = list(model.net.named_parameters())
    header = model.header()
    header["parameters"] = [{"name": name, "shape": list(p.shape)} for name, p in params]
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    chunks = [MAGIC, struct.pack("<II", VERSION, len(header_bytes)), header_bytes]
    chunks.extend(np.ascontiguousarray(p, dtype="<f4").tobytes() for _, p in params)
    return b"".join(chunks)


def save(model: ModelBundle, path: Union[str, os.PathLike]) -> None:
    with open(path, "wb") as f:
        f.write(model_to_bytes(model))


def load(path: Union[str, os.PathLike], vocabulary: Vocabulary) -> ModelBundle:
    """Loads a model file and checks it against ``vocabulary``.

    Raises:
        FormatError: Bad magic, unsupported version or truncated content.
        VocabMismatch: The file was trained on a different vocabulary.
    """
    with open(path, "rb") as f:
        data = f.read()
    prefix = len(MAGIC) + 8
    if len(data) < prefix or data[: len(MAGIC)] != MAGIC:
        raise FormatError("Not a LEWIS model file", path=str(path))
    version, header_len = struct.unpack("<II", data[len(MAGIC) : prefix])
    if version != VERSION:
        raise FormatError("Unsupported model file version", path=str(path), version=version)
    if len(data) < prefix + header_len:
        raise FormatError("Truncated model header", path=str(path))
    try:
        header = json.loads(data[prefix : prefix + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError("Corrupt model header", path=str(path), detail=str(e)) from e
    missing = {"role", "style", "vocab_hash", "vocab_size", "config", "metadata", "parameters"} - set(header)
    if missing:
        raise FormatError("Model header is missing fields", path=str(path), fields=sorted(missing))
    if header["vocab_hash"] != vocabulary.hash:
        raise VocabMismatch(
            "Model was trained with a different vocabulary",
            path=str(path),
            expected=header["vocab_hash"],
            actual=vocabulary.hash,
        )
    config = ModelConfig(**header["config"])
    net = build_network(header["role"], header["vocab_size"], config, seed=0)
    expected_names = [name for name, _ in net.named_parameters()]
    if [entry["name"] for entry in header["parameters"]] != expected_names:
        raise FormatError("Parameter table does not match the declared config", path=str(path))
    offset = prefix + header_len
    for entry in header["parameters"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 4
        if offset + nbytes > len(data):
            raise FormatError("Truncated parameter data", path=str(path), parameter=entry["name"])
        blob = np.frombuffer(data, dtype="<f4", count=nbytes // 4, offset=offset)
        try:
            net.set_parameter(entry["name"], blob.astype(np.float32).reshape(shape))
        except ValueError as e:
            raise FormatError("Parameter shape does not match the config", path=str(path), detail=str(e)) from e
        offset += nbytes
    if offset != len(data):
        raise FormatError("Trailing bytes after parameter data", path=str(path))
    return ModelBundle(
        role=header["role"],
        config=config,
        vocab_hash=header["vocab_hash"],
        vocab_size=header["vocab_size"],
        net=net,
        style=header["style"],
        metadata=header["metadata"],
    )
