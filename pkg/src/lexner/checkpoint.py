"""Versioned binary checkpoints: config echo + vocab + named tensors.

Layout: a magic line, a JSON header line (config, vocabulary symbol lists,
tensor manifest), then the raw little-endian float64 bytes of each tensor
in manifest order. The writer is fully deterministic, so identical models
produce byte-identical files and round-trips are bit-exact.
"""
from __future__ import annotations

import json
from dataclasses import asdict

import numpy as np

from .autodiff import ConfigError, parameter
from .corpus import SymbolTable, Vocab
from .model import Model, ModelConfig

MAGIC = b"lexner-checkpoint v1\n"

# fields that must agree between a checkpoint and a requested configuration
STRUCTURAL = [f for f in ModelConfig.__dataclass_fields__]


def save(path: str, model: Model, extra: dict | None = None):
    header = {
        "config": asdict(model.config),
        "vocab": {
            "chars": model.vocab.chars.symbols,
            "segs": model.vocab.segs.symbols,
            "pos": model.vocab.pos.symbols,
            "types": model.vocab.types.symbols,
            "lex": model.vocab.lex.symbols,
        },
        "tensors": [{"name": k, "shape": list(v.values.shape)}
                    for k, v in model.params.items()],
        "extra": extra or {},
    }
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for k, v in model.params.items():
            fh.write(np.ascontiguousarray(v.values, dtype="<f8").tobytes())


def load(path: str) -> tuple[Model, dict]:
    with open(path, "rb") as fh:
        magic = fh.readline()
        if magic != MAGIC:
            raise ConfigError(f"{path}: not a recognized checkpoint file")
        header = json.loads(fh.readline().decode("utf-8"))
        config = ModelConfig(**header["config"])
        vocab = Vocab()
        vocab.chars = SymbolTable(header["vocab"]["chars"])
        vocab.segs = SymbolTable(header["vocab"]["segs"])
        vocab.pos = SymbolTable(header["vocab"]["pos"])
        vocab.types = SymbolTable(header["vocab"]["types"])
        vocab.lex = SymbolTable(header["vocab"]["lex"])
        params = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise ConfigError(f"{path}: truncated tensor {entry['name']}")
            params[entry["name"]] = parameter(
                np.frombuffer(raw, dtype="<f8").reshape(shape))
    return Model(config, vocab, params), header["extra"]


def check_structure(config: ModelConfig, loaded: ModelConfig,
                    overridden: set[str]):
    """Reject structural mismatches between a checkpoint and explicit flags."""
    for name in overridden & set(STRUCTURAL):
        if getattr(config, name) != getattr(loaded, name):
            raise ConfigError(
                f"checkpoint has {name}={getattr(loaded, name)!r} but "
                f"{name}={getattr(config, name)!r} was requested")
