"""Dataset -> RL state: per-column descriptor tokens, the sinusoidal
feature-kind encoding, and one self-attention encoder block."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .nnkernel import Array, EncoderBlock, Linear, _prefixed
from .tabular import DESCRIPTOR_DIM, Dataset, describe_values


@dataclass(frozen=True)
class EncodingConfig:
    """Encoder hyperparameters; defaults follow the reference configuration
    (8 heads, width 8, hidden 128)."""

    gamma_enc: float = 1.0
    d_model: int = 8
    heads: int = 8
    hidden: int = 128

    def __post_init__(self):
        if self.d_model < 2:
            raise ConfigError("d_model must be >= 2")
        if self.d_model % self.heads != 0:
            raise ConfigError(f"d_model={self.d_model} not divisible by heads={self.heads}")
        if self.hidden < 1:
            raise ConfigError("hidden must be >= 1")


def feature_encoding(p_f: int, i: int, cfg: EncodingConfig) -> float:
    """Kind marker value at dimension *i*: gamma * sin(p_f / 10^(i/(d-1))).

    p_f is -1 for discrete features, +1 for continuous ones and 0 for the
    target row; sin is odd, so discrete and continuous markers mirror each
    other around zero.
    """
    if not 0 <= i < cfg.d_model:
        raise ValueError(f"dimension index {i} out of range")
    return cfg.gamma_enc * float(np.sin(p_f / 10.0 ** (i / (cfg.d_model - 1))))


def encoding_vector(p_f: int, cfg: EncodingConfig) -> Array:
    i = np.arange(cfg.d_model)
    return cfg.gamma_enc * np.sin(p_f / 10.0 ** (i / (cfg.d_model - 1)))


def state_inputs(feature_values: list[np.ndarray], target_values: np.ndarray
                 ) -> tuple[Array, Array]:
    """Standardized descriptor matrix and kind flags for features + target.

    Descriptors are z-scored per statistic across all rows (constant
    statistics become zero), which keeps mixed scales from destabilizing
    attention.  Kind flags: +1 continuous, -1 discrete, 0 target.
    """
    rows = [describe_values(v) for v in feature_values]
    rows.append(describe_values(target_values))
    desc = np.stack(rows)
    mu = desc.mean(axis=0)
    sd = desc.std(axis=0)
    sd = np.where(sd == 0.0, 1.0, sd)
    kinds = np.array([-1.0 if v.dtype.kind in "iu" else 1.0 for v in feature_values]
                     + [0.0])
    return (desc - mu) / sd, kinds


class StateEncoder:
    """Projection + feature encoding + one attention encoder block.

    With ``attention=False`` the projection and block are dropped and the
    token is just the standardized descriptor plus the kind encoding (used by
    the no-attention ablation); this requires d_model == descriptor length.
    """

    def __init__(self, rng: np.random.Generator, cfg: EncodingConfig,
                 attention: bool = True):
        self.cfg = cfg
        self.attention = attention
        if attention:
            self.proj = Linear(rng, DESCRIPTOR_DIM, cfg.d_model)
            self.block = EncoderBlock(rng, cfg.d_model, cfg.heads, cfg.hidden)
        elif cfg.d_model != DESCRIPTOR_DIM:
            raise ConfigError(f"attention-free encoder needs d_model == {DESCRIPTOR_DIM}")
        enc = np.stack([encoding_vector(p, cfg) for p in (-1, 0, 1)])
        self._enc_by_kind = {-1: enc[0], 0: enc[1], 1: enc[2]}

    def parameters(self) -> dict[str, Array]:
        if not self.attention:
            return {}
        return {**_prefixed("proj.", self.proj.parameters()),
                **_prefixed("block.", self.block.parameters())}

    def _encodings(self, kinds: Array) -> Array:
        return np.stack([self._enc_by_kind[int(k)] for k in kinds])

    def forward(self, desc_std: Array, kinds: Array):
        enc = self._encodings(kinds)
        if not self.attention:
            return desc_std + enc, None
        proj, cp = self.proj.forward(desc_std)
        out, cb = self.block.forward(proj + enc)
        return out, (cp, cb)

    def backward(self, cache, dtokens: Array) -> dict[str, Array]:
        if not self.attention:
            return {}
        cp, cb = cache
        dproj, gb = self.block.backward(cb, dtokens)
        _, gp = self.proj.backward(cp, dproj)
        return {**_prefixed("proj.", gp), **_prefixed("block.", gb)}


def encode_dataset(d: Dataset, encoder: StateEncoder) -> Array:
    """Token matrix for a dataset: one row per feature plus the target row."""
    desc, kinds = state_inputs([c.values for c in d.features], d.target.values)
    tokens, _ = encoder.forward(desc, kinds)
    return tokens
