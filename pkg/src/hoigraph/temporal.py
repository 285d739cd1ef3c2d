"""Bidirectional gated-recurrent enhancement of per-node frame features.

Each node's T-step feature sequence is scanned forward and backward by two
gated recurrent cells; the concatenated states are projected back to the
feature width and added to the input. With all parameters zero the module is
exactly the identity, so downstream stages can ignore it and the
on/off ablation is a pure toggle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ParamStore, Tensor, scaled_uniform


@dataclass
class GruCellParams:
    w_update: Tensor   # (Din, H)
    u_update: Tensor   # (H, H)
    b_update: Tensor   # (H,)
    w_reset: Tensor
    u_reset: Tensor
    b_reset: Tensor
    w_cand: Tensor
    u_cand: Tensor
    b_cand: Tensor

    @property
    def hidden(self) -> int:
        return self.w_update.shape[1]


@dataclass
class BiRnnParams:
    forward_cell: GruCellParams
    backward_cell: GruCellParams
    out_w: Tensor   # (2H, D)
    out_b: Tensor   # (D,)


def gru_step(x_t: Tensor, h: Tensor, cell: GruCellParams) -> Tensor:
    """One gated-recurrent update for a batch of node states (N, H)."""
    z = T.sigmoid(T.add(T.linear(x_t, cell.w_update, cell.b_update), T.matmul(h, cell.u_update)))
    r = T.sigmoid(T.add(T.linear(x_t, cell.w_reset, cell.b_reset), T.matmul(h, cell.u_reset)))
    c = T.tanh(T.add(T.linear(x_t, cell.w_cand, cell.b_cand),
                     T.matmul(T.mul(r, h), cell.u_cand)))
    return T.add(h, T.mul(z, T.sub(c, h)))   # (1 - z) * h + z * c


def gru_scan(stream: Tensor, cell: GruCellParams, reverse: bool = False) -> list[Tensor]:
    """Per-step hidden states over a (N, T, Din) stream, aligned to input order."""
    if stream.ndim != 3:
        raise T.ShapeError(f"gru_scan expects (N, T, Din), got {stream.shape}")
    n, frames, _ = stream.shape
    h = Tensor(np.zeros((n, cell.hidden)))
    states: list[Tensor | None] = [None] * frames
    order = range(frames - 1, -1, -1) if reverse else range(frames)
    for t in order:
        h = gru_step(T.take(stream, t, axis=1), h, cell)
        states[t] = h
    return states  # type: ignore[return-value]


def enhance(stream: Tensor, params: BiRnnParams) -> Tensor:
    """Residual bidirectional pass: input + project(forward state, backward state)."""
    fwd = gru_scan(stream, params.forward_cell)
    bwd = gru_scan(stream, params.backward_cell, reverse=True)
    states = T.concat([T.stack(fwd, axis=1), T.stack(bwd, axis=1)], axis=-1)
    return T.add(stream, T.linear(states, params.out_w, params.out_b))


def _init_cell(store: ParamStore, prefix: str, d_in: int, hidden: int,
               rng: np.random.Generator) -> GruCellParams:
    def w(name):
        return store.add(f"{prefix}.{name}", scaled_uniform(rng, (d_in, hidden), d_in))

    def u(name):
        return store.add(f"{prefix}.{name}", scaled_uniform(rng, (hidden, hidden), hidden))

    def b(name):
        return store.add(f"{prefix}.{name}", np.zeros(hidden))

    return GruCellParams(w("w_update"), u("u_update"), b("b_update"),
                         w("w_reset"), u("u_reset"), b("b_reset"),
                         w("w_cand"), u("u_cand"), b("b_cand"))


def _cell_from_store(store: ParamStore, prefix: str) -> GruCellParams:
    g = lambda name: store[f"{prefix}.{name}"]
    return GruCellParams(g("w_update"), g("u_update"), g("b_update"),
                         g("w_reset"), g("u_reset"), g("b_reset"),
                         g("w_cand"), g("u_cand"), g("b_cand"))


def init_birnn_params(store: ParamStore, prefix: str, dim: int,
                      rng: np.random.Generator) -> BiRnnParams:
    if dim % 2 != 0:
        raise ValueError(f"feature width must be even to split across directions, got {dim}")
    hidden = dim // 2
    return BiRnnParams(
        forward_cell=_init_cell(store, f"{prefix}.fwd", dim, hidden, rng),
        backward_cell=_init_cell(store, f"{prefix}.bwd", dim, hidden, rng),
        out_w=store.add(f"{prefix}.out_w", scaled_uniform(rng, (2 * hidden, dim), 2 * hidden)),
        out_b=store.add(f"{prefix}.out_b", np.zeros(dim)),
    )


def birnn_params_from_store(store: ParamStore, prefix: str) -> BiRnnParams:
    return BiRnnParams(_cell_from_store(store, f"{prefix}.fwd"),
                       _cell_from_store(store, f"{prefix}.bwd"),
                       store[f"{prefix}.out_w"], store[f"{prefix}.out_b"])


def init_rnn_cell(store: ParamStore, prefix: str, d_in: int, hidden: int,
                  rng: np.random.Generator) -> GruCellParams:
    """Standalone cell initializer (used by the recurrent pooling baseline)."""
    return _init_cell(store, prefix, d_in, hidden, rng)


def rnn_cell_from_store(store: ParamStore, prefix: str) -> GruCellParams:
    return _cell_from_store(store, prefix)
