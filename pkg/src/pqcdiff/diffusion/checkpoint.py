"""
Binary checkpoint format.

    b"PQCD" | u32 version | u32 header length | JSON header (UTF-8) | f32 LE weight blobs

The header lists every weight tensor (name, shape) in blob order.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..circuit import get_gateset
from ..codec import EmbeddingTable, build_table
from .model import Denoiser, DenoiserConfig
from .schedule import NoiseSchedule

MAGIC = b"PQCD"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    gateset_id: str
    d_c: int
    table_seed: int
    schedule: NoiseSchedule
    config: DenoiserConfig
    state: dict[str, torch.Tensor]
    meta: dict = field(default_factory=dict)
    gate_scale: float = 1.0

    def table(self) -> EmbeddingTable:
        return build_table(get_gateset(self.gateset_id), self.d_c, self.table_seed)

    def model(self) -> Denoiser:
        model = Denoiser(self.config)
        model.load_state_dict(self.state)
        model.eval()
        return model

    def header(self) -> dict:
        return {
            "gateset": self.gateset_id,
            "table": {"d_c": self.d_c, "seed": self.table_seed, "gate_scale": self.gate_scale},
            "schedule": self.schedule.to_json(),
            "config": self.config.to_json(),
            "meta": self.meta,
            "tensors": [{"name": k, "shape": list(v.shape)} for k, v in self.state.items()],
        }

    def to_bytes(self) -> bytes:
        head = json.dumps(self.header(), sort_keys=True).encode("utf-8")
        blobs = [v.detach().to(torch.float32).contiguous().numpy().astype("<f4").tobytes()
                 for v in self.state.values()]
        return MAGIC + struct.pack("<II", VERSION, len(head)) + head + b"".join(blobs)

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        if data[:4] != MAGIC:
            raise CheckpointError("not a PQCD checkpoint (bad magic)")
        if len(data) < 12:
            raise CheckpointError("truncated checkpoint header")
        version, hlen = struct.unpack_from("<II", data, 4)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
        try:
            head = json.loads(data[12:12 + hlen].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
        offset = 12 + hlen
        state = {}
        for spec in head["tensors"]:
            n = int(np.prod(spec["shape"], dtype=np.int64))
            end = offset + 4 * n
            if end > len(data):
                raise CheckpointError(f"truncated weights at {spec['name']}")
            arr = np.frombuffer(data, dtype="<f4", count=n, offset=offset).reshape(spec["shape"])
            state[spec["name"]] = torch.from_numpy(arr.astype(np.float32))
            offset = end
        if offset != len(data):
            raise CheckpointError("trailing bytes after weights")
        return cls(head["gateset"], int(head["table"]["d_c"]), int(head["table"]["seed"]),
                   NoiseSchedule.from_json(head["schedule"]), DenoiserConfig.from_json(head["config"]),
                   state, head.get("meta", {}), float(head["table"].get("gate_scale", 1.0)))

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())
