"""Per-frame graph attention over the human-object graph.

Edge strengths are scored from concatenated node-pair features, normalized by
a masked softmax over each node's neighborhood (its graph neighbors plus a
self loop), and used to aggregate value-mapped neighbor features. A
fixed-weight graph-convolution baseline reuses the same aggregation with
uniform row-normalized adjacency, optionally fully connected.

Attention matrices are recorded per frame and per stream so the learned
relationship strengths can be exported and inspected.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import ParamStore, Tensor, scaled_uniform
from .data import StreamFeatures

SPATIAL_MODES = ("GAT", "GCN", "GCN-full")

LEAKY_SLOPE = 0.2


@dataclass
class GatParams:
    pair_w: Tensor | None    # (2*dim, 1) edge scorer; None for the GCN baseline
    value_w: Tensor          # (dim, dim)
    slope: float = LEAKY_SLOPE


@dataclass
class AttentionRecord:
    """Per-stream, per-frame N x N attention matrices for one video."""
    video_id: str
    streams: dict[str, list[np.ndarray]] = field(default_factory=dict)


def neighborhood_mask(adjacency: np.ndarray) -> np.ndarray:
    """Boolean neighborhoods: graph neighbors plus a self loop for every node."""
    a = np.asarray(adjacency, dtype=np.float64)
    return (a + np.eye(a.shape[0])) > 0.0


def gat_attention(x: Tensor, adjacency: np.ndarray, params: GatParams) -> Tensor:
    """Attention matrix over neighborhoods; rows are probability vectors."""
    n, d = x.shape
    src_w = T.slice_along(params.pair_w, 0, 0, d)
    dst_w = T.slice_along(params.pair_w, 0, d, 2 * d)
    src = T.matmul(x, src_w)                      # (N, 1)
    dst = T.reshape(T.matmul(x, dst_w), (1, n))   # (1, N)
    logits = T.leaky_relu(T.add(src, dst), params.slope)
    return T.softmax(logits, mask=neighborhood_mask(adjacency))


def gat_aggregate(x: Tensor, attention: Tensor, params: GatParams) -> Tensor:
    """Attention-weighted sum of value-mapped neighbor features, then relu."""
    return T.relu(T.matmul(attention, T.matmul(x, params.value_w)))


def gcn_attention(adjacency: np.ndarray, fully_connected: bool = False) -> np.ndarray:
    """Fixed row-normalized weights: neighborhood rows, or all-ones rows."""
    a = np.asarray(adjacency, dtype=np.float64)
    n = a.shape[0]
    m = np.ones((n, n)) if fully_connected else a + np.eye(n)
    return m / m.sum(axis=-1, keepdims=True)


def gcn_aggregate(x: Tensor, adjacency: np.ndarray, params: GatParams,
                  fully_connected: bool = False) -> Tensor:
    return gat_aggregate(x, Tensor(gcn_attention(adjacency, fully_connected)), params)


def parse_video(streams: StreamFeatures, adjacency: np.ndarray,
                params: dict[str, GatParams], mode: str = "GAT",
                video_id: str = "") -> tuple[StreamFeatures, AttentionRecord]:
    """Apply attention + aggregation independently per frame and per stream."""
    if mode not in SPATIAL_MODES:
        raise ValueError(f"unknown spatial mode {mode!r}; expected one of {SPATIAL_MODES}")
    record = AttentionRecord(video_id)
    parsed: dict[str, Tensor] = {}
    for name, feats in (("visual", streams.visual), ("semantic", streams.semantic)):
        p = params[name]
        frames_out, mats = [], []
        for t in range(feats.shape[1]):
            x = T.take(feats, t, axis=1)
            if mode == "GAT":
                att = gat_attention(x, adjacency, p)
                frames_out.append(gat_aggregate(x, att, p))
                mats.append(att.data.copy())
            else:
                fixed = gcn_attention(adjacency, fully_connected=(mode == "GCN-full"))
                frames_out.append(gat_aggregate(x, Tensor(fixed), p))
                mats.append(fixed)
        parsed[name] = T.stack(frames_out, axis=1)
        record.streams[name] = mats
    return StreamFeatures(parsed["visual"], parsed["semantic"]), record


def init_gat_params(store: ParamStore, prefix: str, dim: int, rng: np.random.Generator,
                    with_pair_scorer: bool = True) -> GatParams:
    pair = None
    if with_pair_scorer:
        pair = store.add(f"{prefix}.pair_w", scaled_uniform(rng, (2 * dim, 1), 2 * dim))
    value = store.add(f"{prefix}.value_w", scaled_uniform(rng, (dim, dim), dim))
    return GatParams(pair, value)


def gat_params_from_store(store: ParamStore, prefix: str) -> GatParams:
    pair = store[f"{prefix}.pair_w"] if f"{prefix}.pair_w" in store else None
    return GatParams(pair, store[f"{prefix}.value_w"])
