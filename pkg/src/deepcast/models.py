"""Forecasters: the encoder-decoder transformer and the RNN / LSTM baselines.

All models consume windows shaped ``(batch, time_lag, n_features)`` of
normalised values and produce ``(batch, horizon)`` normalised forecasts of the
first feature (the positive-case count).
"""
from __future__ import annotations

import dataclasses
import io
import json
import math
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError
from .nn import (
    FeedForward,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    NormPlacement,
    add_positional_encoding,
    residual_block,
)
from .tensor import Tensor

CHECKPOINT_FORMAT = "deepcast-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class TransformerConfig:
    d_model: int = 64
    n_encoder_blocks: int = 2
    n_decoder_blocks: int = 2
    n_heads: int = 1
    d_ff: int = 100
    d_prelayer: int = 50
    d_postlayer: int = 50
    dropout: float = 0.2
    attn_dropout: float = 0.0
    norm_placement: NormPlacement = NormPlacement.PRE_LN
    time_lag: int = 7
    horizon: int = 1
    n_features: int = 1
    # "autoregressive" feeds the decoder its own outputs at inference;
    # "zeros" fills positions >= 1 with zeros and decodes in one pass.
    decoder_feed: str = "autoregressive"

    def __post_init__(self):
        self.norm_placement = NormPlacement.parse(self.norm_placement)
        self.validate()

    def validate(self) -> None:
        for name in ("d_model", "n_encoder_blocks", "n_decoder_blocks", "n_heads", "d_ff",
                     "d_prelayer", "d_postlayer", "time_lag", "horizon", "n_features"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.d_model % 2:
            raise ConfigError(f"d_model must be even for positional encoding, got {self.d_model}")
        for name in ("dropout", "attn_dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {getattr(self, name)}")
        if self.decoder_feed not in ("autoregressive", "zeros"):
            raise ConfigError(f"decoder_feed must be 'autoregressive' or 'zeros', got {self.decoder_feed!r}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["norm_placement"] = self.norm_placement.value
        return d


@dataclass
class RecurrentConfig:
    """Baseline RNN / LSTM: ``hidden_size`` units in a single recurrent layer."""

    cell: str = "lstm"
    hidden_size: int = 16
    time_lag: int = 7
    horizon: int = 1
    n_features: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.cell not in ("rnn", "lstm"):
            raise ConfigError(f"cell must be 'rnn' or 'lstm', got {self.cell!r}")
        for name in ("hidden_size", "time_lag", "horizon", "n_features"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class Forecaster(Module):
    """Common contract: ``loss`` for training, ``predict`` for inference."""

    config: TransformerConfig | RecurrentConfig
    family: str

    @property
    def horizon(self) -> int:
        return self.config.horizon

    def check_window(self, x) -> np.ndarray:
        x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        cfg = self.config
        if x.ndim != 3 or x.shape[1] != cfg.time_lag or x.shape[2] != cfg.n_features:
            raise ContractError(
                f"window shape {x.shape[1:]} does not match "
                f"(time_lag={cfg.time_lag}, n_features={cfg.n_features})"
            )
        return x

    def forward(self, x: np.ndarray, y: np.ndarray | None = None) -> Tensor:
        raise NotImplementedError

    def loss(self, x, y) -> Tensor:
        """Mean squared error of the ``(batch, horizon)`` forecast against ``y``."""
        x = self.check_window(x)
        y = np.asarray(y, dtype=np.float64).reshape(x.shape[0], self.horizon)
        pred = self.forward(x, y)
        return T.mse(pred, Tensor(y))

    def predict(self, x) -> np.ndarray:
        raise NotImplementedError


class MLP(Module):
    """Two dense layers with ReLU and dropout between them (the Pre-/Post-Layer networks)."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int, dropout: float,
                 rng: np.random.Generator):
        self.fc1 = Linear(d_in, d_hidden, rng)
        self.fc2 = Linear(d_hidden, d_out, rng)
        self.dropout = dropout
        self.rng = rng

    def __call__(self, x: Tensor) -> Tensor:
        h = T.dropout(T.relu(self.fc1(x)), self.dropout, self.training, self.rng)
        return self.fc2(h)


class EncoderBlock(Module):
    def __init__(self, cfg: TransformerConfig, rng: np.random.Generator):
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, rng, cfg.attn_dropout)
        self.ffn = FeedForward(cfg.d_model, cfg.d_ff, rng)
        self.norm1 = LayerNorm(cfg.d_model)
        self.norm2 = LayerNorm(cfg.d_model)
        self.placement = cfg.norm_placement
        self.p = cfg.dropout
        self.rng = rng

    def __call__(self, x: Tensor) -> Tensor:
        x = residual_block(x, lambda h: self.self_attn(h, h, h), self.norm1, self.placement,
                           self.p, self.training, self.rng)
        return residual_block(x, self.ffn, self.norm2, self.placement,
                              self.p, self.training, self.rng)


class DecoderBlock(Module):
    def __init__(self, cfg: TransformerConfig, rng: np.random.Generator):
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, rng, cfg.attn_dropout)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, rng, cfg.attn_dropout)
        self.ffn = FeedForward(cfg.d_model, cfg.d_ff, rng)
        self.norm1 = LayerNorm(cfg.d_model)
        self.norm2 = LayerNorm(cfg.d_model)
        self.norm3 = LayerNorm(cfg.d_model)
        self.placement = cfg.norm_placement
        self.p = cfg.dropout
        self.rng = rng

    def __call__(self, x: Tensor, memory: Tensor) -> Tensor:
        args = (self.placement, self.p, self.training, self.rng)
        x = residual_block(x, lambda h: self.self_attn(h, h, h, causal=True), self.norm1, *args)
        x = residual_block(x, lambda h: self.cross_attn(h, memory, memory), self.norm2, *args)
        return residual_block(x, self.ffn, self.norm3, *args)


class DeepTransformer(Forecaster):
    """Encoder-decoder transformer with dense input and output networks.

    The encoder reads the lag window of all features.  The decoder reads the
    target series offset by one position: its first input is the last value
    of the encoder window, so output ``i`` only depends on targets ``< i``.
    Under Pre-LN the encoder and decoder stacks end with a layer norm, as the
    residual stream is otherwise never normalised.
    """

    family = "transformer"

    def __init__(self, config: TransformerConfig, rng: np.random.Generator):
        config.validate()
        self.config = config
        c = config
        self.enc_input = MLP(c.n_features, c.d_prelayer, c.d_model, c.dropout, rng)
        self.dec_input = MLP(1, c.d_prelayer, c.d_model, c.dropout, rng)
        self.encoder = [EncoderBlock(c, rng) for _ in range(c.n_encoder_blocks)]
        self.decoder = [DecoderBlock(c, rng) for _ in range(c.n_decoder_blocks)]
        if c.norm_placement is NormPlacement.PRE_LN:
            self.enc_norm = LayerNorm(c.d_model)
            self.dec_norm = LayerNorm(c.d_model)
        self.output = MLP(c.d_model, c.d_postlayer, 1, c.dropout, rng)
        self.rng = rng

    def _embed(self, mlp: MLP, x: np.ndarray) -> Tensor:
        h = add_positional_encoding(mlp(Tensor(x)))
        return T.dropout(h, self.config.dropout, self.training, self.rng)

    def encode(self, x: np.ndarray) -> Tensor:
        h = self._embed(self.enc_input, x)
        for block in self.encoder:
            h = block(h)
        return self.enc_norm(h) if hasattr(self, "enc_norm") else h

    def decode(self, dec_in: np.ndarray, memory: Tensor) -> Tensor:
        h = self._embed(self.dec_input, dec_in)
        for block in self.decoder:
            h = block(h, memory)
        if hasattr(self, "dec_norm"):
            h = self.dec_norm(h)
        out = self.output(h)
        return T.reshape(out, out.shape[:-1])

    def decoder_inputs(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Teacher-forcing input: last encoder value followed by ``y`` shifted right by one."""
        y = np.asarray(y, dtype=np.float64).reshape(x.shape[0], self.horizon)
        dec = np.concatenate([x[:, -1:, 0], y[:, :-1]], axis=1)
        return dec[..., None]

    def forward(self, x: np.ndarray, y: np.ndarray | None = None) -> Tensor:
        """Teacher-forced forward pass; returns ``(batch, horizon)``."""
        x = self.check_window(x)
        if y is None:
            raise ContractError("teacher-forced forward needs targets; use predict() for inference")
        return self.decode(self.decoder_inputs(x, y), self.encode(x))

    def forward_decoder(self, x, dec_in) -> Tensor:
        """Forward pass with an explicit decoder input of shape ``(batch, horizon[, 1])``."""
        x = self.check_window(x)
        dec_in = np.asarray(dec_in, dtype=np.float64).reshape(x.shape[0], -1, 1)
        if dec_in.shape[1] != self.horizon:
            raise DimensionError(f"decoder input length {dec_in.shape[1]} != horizon {self.horizon}")
        return self.decode(dec_in, self.encode(x))

    def predict(self, x) -> np.ndarray:
        x = self.check_window(x)
        memory = self.encode(x)
        h = self.horizon
        dec = np.zeros((x.shape[0], h, 1))
        dec[:, 0, 0] = x[:, -1, 0]
        if self.config.decoder_feed == "zeros":
            return self.decode(dec, memory).data.copy()
        out = np.empty((x.shape[0], h))
        for i in range(h):
            step = self.decode(dec[:, : i + 1], memory).data
            out[:, i] = step[:, i]
            if i + 1 < h:
                dec[:, i + 1, 0] = step[:, i]
        return out


class RNNForecaster(Forecaster):
    """Elman RNN with tanh state update and a linear head on the final state."""

    family = "rnn"

    def __init__(self, config: RecurrentConfig, rng: np.random.Generator):
        config.validate()
        self.config = config
        F, H = config.n_features, config.hidden_size
        self.W_xh = _uniform(rng, (F, H), H)
        self.W_hh = _uniform(rng, (H, H), H)
        self.b_h = _uniform(rng, (H,), H)
        self.W_ho = _uniform(rng, (H, config.horizon), H)
        self.b_o = _uniform(rng, (config.horizon,), H)

    def hidden(self, x: np.ndarray) -> Tensor:
        H = self.config.hidden_size
        h = Tensor(np.zeros((x.shape[0], H)))
        xs = Tensor(x)
        for t in range(x.shape[1]):
            pre = T.add(T.matmul(xs[:, t, :], self.W_xh), T.matmul(h, self.W_hh))
            h = T.tanh(T.add_bias(pre, self.b_h))
        return h

    def forward(self, x: np.ndarray, y: np.ndarray | None = None) -> Tensor:
        x = self.check_window(x)
        return T.add_bias(T.matmul(self.hidden(x), self.W_ho), self.b_o)

    def predict(self, x) -> np.ndarray:
        return self.forward(x).data.copy()


class LSTMForecaster(Forecaster):
    """Single-layer LSTM (input, forget, output gates and a tanh candidate) with a linear head."""

    family = "lstm"
    gates = ("i", "f", "o", "c")

    def __init__(self, config: RecurrentConfig, rng: np.random.Generator):
        config.validate()
        self.config = config
        F, H = config.n_features, config.hidden_size
        for g in self.gates:
            setattr(self, f"W_x{g}", _uniform(rng, (F, H), H))
            setattr(self, f"W_h{g}", _uniform(rng, (H, H), H))
            setattr(self, f"b_{g}", _uniform(rng, (H,), H))
        self.W_out = _uniform(rng, (H, config.horizon), H)
        self.b_out = _uniform(rng, (config.horizon,), H)

    def _gate(self, g: str, xt: Tensor, h: Tensor) -> Tensor:
        pre = T.add(T.matmul(xt, getattr(self, f"W_x{g}")), T.matmul(h, getattr(self, f"W_h{g}")))
        return T.add_bias(pre, getattr(self, f"b_{g}"))

    def hidden(self, x: np.ndarray) -> tuple[Tensor, Tensor]:
        H = self.config.hidden_size
        h = Tensor(np.zeros((x.shape[0], H)))
        c = Tensor(np.zeros((x.shape[0], H)))
        xs = Tensor(x)
        for t in range(x.shape[1]):
            xt = xs[:, t, :]
            i = T.sigmoid(self._gate("i", xt, h))
            f = T.sigmoid(self._gate("f", xt, h))
            o = T.sigmoid(self._gate("o", xt, h))
            c_tilde = T.tanh(self._gate("c", xt, h))
            c = T.add(T.mul(f, c), T.mul(i, c_tilde))
            h = T.mul(o, T.tanh(c))
        return h, c

    def forward(self, x: np.ndarray, y: np.ndarray | None = None) -> Tensor:
        x = self.check_window(x)
        h, _ = self.hidden(x)
        return T.add_bias(T.matmul(h, self.W_out), self.b_out)

    def predict(self, x) -> np.ndarray:
        return self.forward(x).data.copy()


def _uniform(rng: np.random.Generator, shape, hidden: int) -> Tensor:
    bound = 1.0 / math.sqrt(hidden)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def build_model(config: TransformerConfig | RecurrentConfig, rng: np.random.Generator) -> Forecaster:
    if isinstance(config, TransformerConfig):
        return DeepTransformer(config, rng)
    if isinstance(config, RecurrentConfig):
        return RNNForecaster(config, rng) if config.cell == "rnn" else LSTMForecaster(config, rng)
    raise ConfigError(f"unsupported model config {type(config).__name__}")


def transformer_forward(model: DeepTransformer, window, target_shifted) -> Tensor:
    """Run the transformer on one window with an explicit (already shifted) decoder input."""
    return model.forward_decoder(window, target_shifted)


def rnn_forward(model: RNNForecaster, window) -> Tensor:
    return model.forward(window)


def lstm_forward(model: LSTMForecaster, window) -> Tensor:
    return model.forward(window)


def predict_multistep(model: Forecaster, window, horizon: int, norm=None) -> np.ndarray:
    """Forecast ``horizon`` steps from one window; denormalised when ``norm`` is given.

    ``norm`` is a :class:`deepcast.data.NormalizationParams`.  The model must
    have been trained for exactly this horizon.
    """
    if horizon != model.horizon:
        raise ContractError(f"model was trained for horizon {model.horizon}, asked for {horizon}")
    model.eval()
    pred = model.predict(window)[0]
    return norm.denormalize(pred, feature=0) if norm is not None else pred


# ---------------------------------------------------------------------------
# checkpoints
#
# A checkpoint is an uncompressed .npz archive (fixed entry timestamps): one little-endian float64 array
# per parameter (keyed by its dotted attribute path) plus "__header__", a
# UTF-8 JSON document stored as a uint8 array:
#   {"format": "deepcast-checkpoint", "version": 1, "family": ...,
#    "config": {...}, "extra": {...}}


def save_checkpoint(model: Forecaster, path, extra: dict | None = None) -> Path:
    path = Path(path)
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "family": model.family,
        "config": model.config.to_dict(),
        "extra": extra or {},
    }
    arrays = {"__header__": np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)}
    for name, p in model.named_parameters():
        arrays[name] = p.data.astype("<f8")
    buf = io.BytesIO()
    # np.savez stamps entries with the current time; a fixed stamp keeps the bytes reproducible
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            member = io.BytesIO()
            np.lib.format.write_array(member, arr, allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0)), member.getvalue())
    path.write_bytes(buf.getvalue())
    return path


def load_checkpoint(path) -> tuple[Forecaster, dict]:
    """Return ``(model, extra)`` restored from :func:`save_checkpoint` output."""
    with np.load(Path(path)) as archive:
        header = json.loads(bytes(archive["__header__"]).decode())
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ContractError(f"{path}: not a deepcast checkpoint")
        if header.get("version") != CHECKPOINT_VERSION:
            raise ContractError(f"{path}: unsupported checkpoint version {header.get('version')}")
        if header["family"] == "transformer":
            config = TransformerConfig(**header["config"])
        else:
            config = RecurrentConfig(**header["config"])
        model = build_model(config, np.random.default_rng(0))
        for name, p in model.named_parameters():
            if name not in archive:
                raise ContractError(f"{path}: missing parameter {name}")
            data = archive[name].astype(np.float64)
            if data.shape != p.shape:
                raise DimensionError(f"{path}: {name} has shape {data.shape}, expected {p.shape}")
            p.data = data
    model.eval()
    return model, header.get("extra", {})
