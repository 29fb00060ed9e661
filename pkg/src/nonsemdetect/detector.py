"""The detector backend and its checkpoint format.

Pipeline over a stacked embedding matrix (d x t): residual conv block,
optional frame-to-frame delta, two LSTM layers, per-frame projection,
multi-head attention pooling over time, and an MLP producing two logits
(spoof, bonafide). The detection score is logit difference, higher
meaning more bonafide.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, FormatError, NumericError
from .nn import LSTM, BatchNorm1d, Conv1d, Linear, MHAPool, Module, Tensor, selu, transpose
from .nn.optim import Adam, AdamState
from .nn.tensor import slice_axis, sub

CKPT_MAGIC = b"CKPT"
CKPT_VERSION = 1


@dataclass
class DetectorConfig:
    """Architecture hyperparameters; defaults are the full-scale sizes."""

    input_dim: int = 1024
    conv_kernel: int = 3
    conv_channels: int | None = None  # defaults to input_dim, required by the residual
    use_delta: bool = False
    lstm_hidden: int = 256
    lstm_layers: int = 2
    projection_dim: int = 1536
    attention_heads: int = 4
    mlp_hidden: int = 256
    num_classes: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.conv_channels is None:
            self.conv_channels = self.input_dim
        if self.input_dim < 1:
            raise ConfigurationError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.conv_kernel % 2 != 1:
            raise ConfigurationError(f"conv_kernel must be odd, got {self.conv_kernel}")
        if self.conv_channels != self.input_dim:
            raise ConfigurationError(
                f"conv_channels ({self.conv_channels}) must equal input_dim "
                f"({self.input_dim}) for the residual add"
            )
        if self.lstm_layers != 2:
            raise ConfigurationError("detector uses exactly two LSTM layers")
        if self.num_classes != 2:
            raise ConfigurationError("detector is a two-class model")
        if self.projection_dim % self.attention_heads != 0:
            raise ConfigurationError(
                f"projection_dim ({self.projection_dim}) must be divisible by "
                f"attention_heads ({self.attention_heads})"
            )

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DetectorConfig":
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"unparseable detector config: {exc}") from exc
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(payload) - known
        if unknown:
            raise FormatError(f"unknown detector config fields: {sorted(unknown)}")
        return cls(**payload)


class DetectorModel(Module):
    def __init__(self, config: DetectorConfig):
        super().__init__()
        self.config = config
        rng = np.random.default_rng(config.seed)
        d, k = config.input_dim, config.conv_kernel
        self.conv1 = self.add_module("conv1", Conv1d(d, config.conv_channels, k, rng))
        self.bn1 = self.add_module("bn1", BatchNorm1d(config.conv_channels))
        self.conv2 = self.add_module("conv2", Conv1d(config.conv_channels, d, k, rng))
        self.bn2 = self.add_module("bn2", BatchNorm1d(d))
        self.lstm1 = self.add_module("lstm1", LSTM(d, config.lstm_hidden, rng))
        self.lstm2 = self.add_module("lstm2", LSTM(config.lstm_hidden, config.lstm_hidden, rng))
        self.proj = self.add_module("proj", Linear(config.lstm_hidden, config.projection_dim, rng))
        self.pool = self.add_module("pool", MHAPool(config.projection_dim, config.attention_heads, rng))
        self.mlp1 = self.add_module("mlp1", Linear(config.projection_dim, config.mlp_hidden, rng))
        self.mlp2 = self.add_module("mlp2", Linear(config.mlp_hidden, config.num_classes, rng))
        self.finalize_names()

    # ------------------------------------------------------------------
    # forward pieces

    def conv_block(self, x: Tensor, training: bool) -> Tensor:
        """SELU(x + BN2(Conv2(SELU(BN1(Conv1(x)))))), length-preserving."""
        if x.data.ndim != 3 or x.data.shape[1] != self.config.input_dim:
            raise ConfigurationError(
                f"conv_block expects (n, {self.config.input_dim}, t), got {x.data.shape}"
            )
        h = self.conv1(x)
        h = self.bn1(h, training)
        h = selu(h)
        h = self.conv2(h)
        h = self.bn2(h, training)
        return selu(x + h)

    @staticmethod
    def delta(x: Tensor) -> Tensor:
        """Frame difference along time: out[.., tau] = x[.., tau+1] - x[.., tau]."""
        t = x.data.shape[-1]
        if t < 2:
            raise ConfigurationError("delta step needs at least 2 frames")
        return sub(slice_axis(x, x.data.ndim - 1, 1, t), slice_axis(x, x.data.ndim - 1, 0, t - 1))

    def forward(self, x, training: bool = False) -> Tensor:
        """(n, d, t) or (d, t) embeddings to (n, 2) or (2,) logits."""
        squeeze = False
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=np.float32))
        if x.data.ndim == 2:
            x = x.reshape((1,) + x.data.shape)
            squeeze = True
        if x.data.ndim != 3:
            raise ConfigurationError(f"forward expects (n, d, t) input, got shape {x.data.shape}")
        if self.config.use_delta and x.data.shape[2] < 2:
            raise ConfigurationError("use_delta requires at least 2 frames")
        h = self.conv_block(x, training)
        if self.config.use_delta:
            h = self.delta(h)
        h = transpose(h, (0, 2, 1))  # (n, t, d) for the recurrence
        h, _ = self.lstm1(h)
        h, _ = self.lstm2(h)
        h = self.proj(h)
        pooled, _ = self.pool(h)
        h = selu(self.mlp1(pooled))
        logits = self.mlp2(h)
        if squeeze:
            logits = logits.reshape((self.config.num_classes,))
        return logits

    __call__ = forward

    # ------------------------------------------------------------------
    # serialization helpers

    def bn_buffers(self) -> dict[str, np.ndarray]:
        return {
            "bn1.running_mean": self.bn1.running_mean,
            "bn1.running_var": self.bn1.running_var,
            "bn2.running_mean": self.bn2.running_mean,
            "bn2.running_var": self.bn2.running_var,
        }


def score(logits) -> np.ndarray:
    """Detection score: bonafide logit minus spoof logit (higher = more bonafide)."""
    arr = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    if not np.all(np.isfinite(arr)):
        raise NumericError("non-finite logits cannot be scored")
    return np.asarray(arr[..., 1] - arr[..., 0], dtype=np.float64)


# ---------------------------------------------------------------------------
# checkpoint format: magic "CKPT", u32 version, u32 config byte length,
# config JSON, then (u16 name length, name, u32 element count, f32 LE data)
# for each parameter in enumeration order, BN running stats under
# "::stats::" names, and optionally Adam state under "::adam::" names.


def _pack_entry(name: str, values: np.ndarray) -> bytes:
    encoded = name.encode("utf-8")
    if len(encoded) > 0xFFFF:
        raise FormatError(f"parameter name too long: {name}")
    payload = np.ascontiguousarray(values, dtype="<f4").tobytes()
    return struct.pack("<H", len(encoded)) + encoded + struct.pack("<I", values.size) + payload


def save_checkpoint(model: DetectorModel, path, adam: AdamState | None = None) -> None:
    config_json = model.config.to_json().encode("utf-8")
    blob = bytearray()
    blob += CKPT_MAGIC
    blob += struct.pack("<II", CKPT_VERSION, len(config_json))
    blob += config_json
    for name, param in model.named_parameters():
        blob += _pack_entry(name, param.data)
    for name, buf in model.bn_buffers().items():
        blob += _pack_entry(f"::stats::{name}", buf)
    if adam is not None:
        blob += _pack_entry("::adam::step", np.array([float(adam.step)], dtype=np.float32))
        for pname, m in adam.m.items():
            blob += _pack_entry(f"::adam::m::{pname}", m)
        for pname, v in adam.v.items():
            blob += _pack_entry(f"::adam::v::{pname}", v)
    Path(path).write_bytes(bytes(blob))


def _read_entries(blob: bytes, offset: int, source: str):
    entries = {}
    order = []
    while offset < len(blob):
        if offset + 2 > len(blob):
            raise FormatError(f"{source}: truncated entry header at byte offset {offset}")
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        if offset + name_len + 4 > len(blob):
            raise FormatError(f"{source}: truncated entry at byte offset {offset}")
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (count,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        end = offset + 4 * count
        if end > len(blob):
            raise FormatError(f"{source}: truncated payload for '{name}' at byte offset {offset}")
        entries[name] = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).copy()
        order.append(name)
        offset = end
    return entries, order


def load_checkpoint(path) -> tuple[DetectorModel, AdamState | None]:
    source = str(path)
    blob = Path(path).read_bytes()
    if len(blob) < 12 or blob[:4] != CKPT_MAGIC:
        raise FormatError(f"{source}: bad magic at byte offset 0")
    version, config_len = struct.unpack_from("<II", blob, 4)
    if version != CKPT_VERSION:
        raise FormatError(f"{source}: unsupported checkpoint version {version}")
    if len(blob) < 12 + config_len:
        raise FormatError(f"{source}: truncated config at byte offset {len(blob)}")
    config = DetectorConfig.from_json(blob[12 : 12 + config_len].decode("utf-8"))
    entries, _ = _read_entries(blob, 12 + config_len, source)

    model = DetectorModel(config)
    for name, param in model.named_parameters():
        if name not in entries:
            raise FormatError(f"{source}: missing parameter '{name}'")
        values = entries.pop(name)
        if values.size != param.data.size:
            raise FormatError(
                f"{source}: parameter '{name}' has {values.size} elements, expected {param.data.size}"
            )
        param.data = values.reshape(param.data.shape)
    for name, buf in model.bn_buffers().items():
        key = f"::stats::{name}"
        if key not in entries:
            raise FormatError(f"{source}: missing running stats '{key}'")
        values = entries.pop(key)
        if values.size != buf.size:
            raise FormatError(f"{source}: running stats '{key}' has wrong size")
        buf[:] = values

    adam = None
    if "::adam::step" in entries:
        adam = AdamState(step=int(entries.pop("::adam::step")[0]))
        for name, param in model.named_parameters():
            m = entries.pop(f"::adam::m::{name}", None)
            v = entries.pop(f"::adam::v::{name}", None)
            if m is None or v is None:
                raise FormatError(f"{source}: incomplete Adam state for '{name}'")
            adam.m[name] = m.reshape(param.data.shape)
            adam.v[name] = v.reshape(param.data.shape)
    if entries:
        raise FormatError(f"{source}: unexpected entries {sorted(entries)[:3]}")
    return model, adam


def make_optimizer(model: DetectorModel, state: AdamState | None = None) -> Adam:
    """Fresh Adam bound to the model's parameters, optionally resuming state."""
    opt = Adam(model.parameters())
    if state is not None:
        opt.state.step = state.step
        for name in opt.state.m:
            if name in state.m:
                opt.state.m[name] = state.m[name].astype(np.float32)
                opt.state.v[name] = state.v[name].astype(np.float32)
    return opt
