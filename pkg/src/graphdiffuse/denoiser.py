"""Small graph-conditioned denoising transformer.

Encoder reads the serialized-graph token ids; decoder reads the noisy latent
sequence plus a sinusoidal timestep embedding and predicts the clean latent.
Decoder-to-encoder cross-attention is surfaced as a per-position record: the
total attention mass each target position puts on the graph's content tokens
(entity/relation words, i.e. everything that is neither [PAD] nor a control
marker), averaged over heads and layers. [PAD] keys are masked everywhere,
so pad positions can never leak into non-pad outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from graphdiffuse import autodiff as ad
from graphdiffuse.autodiff import Tensor

_MASK_BIAS = -1e9
#: ids 1..4 are the control markers; 0 is [PAD] (see kg.RESERVED_TOKENS)
_FIRST_CONTENT_ID = 5


class NumericalDivergenceError(RuntimeError):
    """Raised when activations or losses stop being finite."""


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 32
    n_heads: int = 4
    d_ff: int = 64
    n_enc: int = 2
    n_dec: int = 2
    n_max: int = 16
    m_max: int = 32
    T: int = 2000
    tie_rounding: bool = True

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")


def sinusoidal_table(n_positions: int, d: int) -> np.ndarray:
    """Standard fixed sin/cos table, shape (n_positions, d)."""
    half = d // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    args = np.arange(n_positions, dtype=np.float64)[:, None] * freqs[None, :]
    table = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if table.shape[1] < d:
        table = np.concatenate([table, np.zeros((n_positions, 1))], axis=1)
    return table


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    scale = math.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, scale, size=(fan_in, fan_out))


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    """Fresh parameter dictionary; embedding rows are unit-variance normal."""
    d, f = cfg.d_model, cfg.d_ff
    params: dict[str, np.ndarray] = {}
    params["embed"] = rng.normal(0.0, 1.0, size=(cfg.vocab_size, d))
    params["time_w"] = _glorot(rng, d, d)
    params["time_b"] = np.zeros(d)
    for side, n_layers in (("enc", cfg.n_enc), ("dec", cfg.n_dec)):
        for layer in range(n_layers):
            pre = f"{side}{layer}"
            blocks = ["self"] if side == "enc" else ["self", "cross"]
            for block in blocks:
                for name in ("q", "k", "v", "o"):
                    params[f"{pre}.{block}.{name}"] = _glorot(rng, d, d)
                params[f"{pre}.{block}.ln_g"] = np.ones(d)
                params[f"{pre}.{block}.ln_b"] = np.zeros(d)
            params[f"{pre}.ff.w1"] = _glorot(rng, d, f)
            params[f"{pre}.ff.b1"] = np.zeros(f)
            params[f"{pre}.ff.w2"] = _glorot(rng, f, d)
            params[f"{pre}.ff.b2"] = np.zeros(d)
            params[f"{pre}.ff.ln_g"] = np.ones(d)
            params[f"{pre}.ff.ln_b"] = np.zeros(d)
    for side in ("enc", "dec"):
        params[f"{side}.final_ln_g"] = np.ones(d)
        params[f"{side}.final_ln_b"] = np.zeros(d)
    params["out_w"] = _glorot(rng, d, d)
    params["out_b"] = np.zeros(d)
    if not cfg.tie_rounding:
        params["round_w"] = rng.normal(0.0, 1.0, size=(cfg.vocab_size, d))
    return {name: ad.parameter(value) for name, value in params.items()}


def orthogonal_embeddings(cfg: ModelConfig, rng: np.random.Generator) -> np.ndarray:
    """Orthogonal embedding rows (requires vocab_size <= d_model)."""
    if cfg.vocab_size > cfg.d_model:
        raise ValueError("orthogonal rows need vocab_size <= d_model")
    a = rng.normal(size=(cfg.d_model, cfg.d_model))
    q, _ = np.linalg.qr(a)
    return q[: cfg.vocab_size]


class Denoiser:
    """Parameter bundle plus cached positional/timestep tables."""

    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor]):
        self.cfg = cfg
        self.params = params
        self.pos_enc = sinusoidal_table(cfg.m_max, cfg.d_model)
        self.pos_dec = sinusoidal_table(cfg.n_max, cfg.d_model)
        self.time_table = sinusoidal_table(cfg.T + 1, cfg.d_model)

    # -- attention ---------------------------------------------------------

    def _heads(self, x: Tensor, w: Tensor, batch: int, length: int) -> Tensor:
        h, dh = self.cfg.n_heads, self.cfg.d_model // self.cfg.n_heads
        proj = ad.reshape(x @ w, (batch, length, h, dh))
        return ad.transpose(proj, (0, 2, 1, 3))  # (B, H, L, dh)

    def _attention(
        self,
        prefix: str,
        x: Tensor,
        memory: Tensor,
        key_mask: np.ndarray,
    ) -> tuple[Tensor, np.ndarray]:
        """Pre-LN multi-head attention block with residual.

        Returns the block output and the raw attention probabilities
        (B, H, Lq, Lk) for record extraction.
        """
        p = self.params
        b, lq = x.shape[0], x.shape[1]
        lk = memory.shape[1]
        dh = self.cfg.d_model // self.cfg.n_heads
        normed = ad.layer_norm(x, p[f"{prefix}.ln_g"], p[f"{prefix}.ln_b"])
        normed_mem = normed if memory is x else memory
        q = self._heads(normed, p[f"{prefix}.q"], b, lq)
        k = self._heads(normed_mem, p[f"{prefix}.k"], b, lk)
        v = self._heads(normed_mem, p[f"{prefix}.v"], b, lk)
        scores = ad.mul(q @ ad.transpose(k, (0, 1, 3, 2)), 1.0 / math.sqrt(dh))
        bias = np.where(key_mask, 0.0, _MASK_BIAS)[:, None, None, :]  # (B,1,1,Lk)
        attn = ad.softmax(ad.add(scores, bias), axis=-1)
        ctx = ad.transpose(attn @ v, (0, 2, 1, 3))
        merged = ad.reshape(ctx, (b, lq, self.cfg.d_model))
        return ad.add(x, merged @ p[f"{prefix}.o"]), attn.value

    def _ffn(self, prefix: str, x: Tensor) -> Tensor:
        p = self.params
        normed = ad.layer_norm(x, p[f"{prefix}.ln_g"], p[f"{prefix}.ln_b"])
        hidden = ad.gelu(ad.add(normed @ p[f"{prefix}.w1"], p[f"{prefix}.b1"]))
        return ad.add(x, ad.add(hidden @ p[f"{prefix}.w2"], p[f"{prefix}.b2"]))

    # -- full forward ------------------------------------------------------

    def encode_graph(self, graph_ids: np.ndarray, graph_mask: np.ndarray) -> Tensor:
        p = self.params
        m = graph_ids.shape[1]
        x = ad.add(ad.gather(p["embed"], graph_ids), self.pos_enc[:m])
        for layer in range(self.cfg.n_enc):
            x, _ = self._attention(f"enc{layer}.self", x, x, graph_mask)
            x = self._ffn(f"enc{layer}.ff", x)
        return ad.layer_norm(x, p["enc.final_ln_g"], p["enc.final_ln_b"])

    def forward(
        self,
        z_t: Tensor | np.ndarray,
        t: np.ndarray,
        graph_ids: np.ndarray,
        graph_mask: np.ndarray,
        tgt_mask: np.ndarray | None = None,
        memory: Tensor | None = None,
    ) -> tuple[Tensor, np.ndarray]:
        """Predict the clean latent; also return the cross-attention record.

        ``t`` is one integer timestep per batch element. ``tgt_mask`` marks
        non-[PAD] target positions (all-true when generating). The record is
        the per-position mass on graph content tokens, averaged over heads
        and cross-attention layers, zeroed at [PAD] target positions.
        """
        p = self.params
        z_t = ad.constant(z_t)
        b, n = z_t.shape[0], z_t.shape[1]
        if tgt_mask is None:
            tgt_mask = np.ones((b, n), dtype=bool)
        if memory is None:
            memory = self.encode_graph(graph_ids, graph_mask)
        time_emb = ad.add(ad.constant(self.time_table[t]) @ p["time_w"], p["time_b"])
        x = ad.add(ad.add(z_t, self.pos_dec[:n]), ad.reshape(time_emb, (b, 1, self.cfg.d_model)))
        content_mask = graph_mask & (graph_ids >= _FIRST_CONTENT_ID)  # (B, M)
        record = np.zeros((b, n), dtype=np.float64)
        for layer in range(self.cfg.n_dec):
            x, _ = self._attention(f"dec{layer}.self", x, x, tgt_mask)
            x, attn = self._attention(f"dec{layer}.cross", x, memory, graph_mask)
            # attn: (B, H, N, M); mass on content keys, averaged over heads
            record += (attn * content_mask[:, None, None, :]).sum(axis=-1).mean(axis=1)
            x = self._ffn(f"dec{layer}.ff", x)
        record /= self.cfg.n_dec
        record = np.clip(record, 0.0, 1.0) * tgt_mask
        x = ad.layer_norm(x, p["dec.final_ln_g"], p["dec.final_ln_b"])
        z0_hat = ad.add(x @ p["out_w"], p["out_b"])
        if not np.isfinite(z0_hat.value).all():
            raise NumericalDivergenceError("numerical blow-up: non-finite denoiser output")
        return z0_hat, record

    def rounding_table(self) -> Tensor:
        """Projection used by the rounding distribution; tied to the embedding by default."""
        return self.params["embed"] if self.cfg.tie_rounding else self.params["round_w"]

    def rounding_logits(self, z: Tensor | np.ndarray) -> Tensor:
        table = self.rounding_table()
        return ad.constant(z) @ ad.transpose(table, (1, 0))
