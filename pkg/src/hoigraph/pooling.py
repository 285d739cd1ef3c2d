"""Temporal fusion: temporal convolution alternated with dynamic window pooling.

The dynamic pooling step slides fixed windows (half-width tau, given stride)
over each node's frame sequence and collapses every window into one frame.
Window weights come from a softmax over two per-frame scores:

* a selection mask: minus the mean chain similarity of a frame to every other
  window frame, where the similarity of frames i < j is the sum of embedded
  inner products over the consecutive pairs between them (so redundant frames
  score high similarity and get suppressed), and
* a distinction score: a learned affine salience of the frame itself.

Uniform (average) and per-channel argmax (max) pooling over the same windows,
plus a single recurrent pass taking the last state, serve as baselines. All
paths are differentiable through the tape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ParamStore, ShapeError, Tensor, scaled_uniform
from .temporal import GruCellParams, gru_scan, init_rnn_cell, rnn_cell_from_store

POOLING_VARIANTS = ("DTP", "AvgP", "MaxP", "RNN", "none")
DTP_METRICS = ("S", "D", "S+D")


@dataclass
class DtpParams:
    sim_left: Tensor     # (C, E) embeds the earlier frame of a consecutive pair
    sim_right: Tensor    # (C, E) embeds the later frame
    salience_w: Tensor   # (C, 1)
    salience_b: Tensor   # (1,)
    tau: int = 1
    stride: int = 2


@dataclass
class TcnParams:
    k_before: Tensor   # (Cin, Cout) tap on frame t-1
    k_center: Tensor   # (Cin, Cout) tap on frame t
    k_after: Tensor    # (Cin, Cout) tap on frame t+1
    bias: Tensor       # (Cout,)


@dataclass
class RnnPoolParams:
    cell: GruCellParams


@dataclass
class DtmParams:
    tau: int
    stride: int
    tcn1: TcnParams | None = None
    dtp1: DtpParams | None = None
    tcn2: TcnParams | None = None
    dtp2: DtpParams | None = None
    rnn: RnnPoolParams | None = None


@dataclass
class PoolingWindow:
    """Snapshot of one pooling window (leading batch dims allowed)."""
    center: int
    members: np.ndarray            # [*, W, C]
    similarity: np.ndarray | None  # [*, W, W]
    selection: np.ndarray | None   # [*, W]
    distinction: np.ndarray | None  # [*, W]
    weights: np.ndarray            # [*, W]


def window_centers(frames: int, tau: int, stride: int) -> list[int]:
    """Valid window centers: tau, tau+stride, ... while the window fits."""
    if tau < 1 or stride < 1:
        raise ValueError("tau and stride must be positive")
    if frames < 2 * tau + 1:
        raise ShapeError(f"sequence of {frames} frames is shorter than the pooling window "
                         f"of {2 * tau + 1}; reduce tau or pad upstream")
    return list(range(tau, frames - tau, stride))


def pooled_length(frames: int, tau: int, stride: int) -> int:
    """Closed form for the number of windows: floor((T - 2*tau - 1)/stride) + 1."""
    if frames < 2 * tau + 1:
        raise ShapeError(f"sequence of {frames} frames is shorter than the pooling window")
    return (frames - 2 * tau - 1) // stride + 1


def pairwise_similarity(window: Tensor, params: DtpParams) -> Tensor:
    """Symmetric chain-similarity matrix of a window [*, W, C] -> [*, W, W].

    s[i, j] for i < j sums the inner products of the embedded consecutive
    pairs (k, k+1) for k in [i, j); s[j, i] mirrors it and the diagonal is
    zero. Chain additivity s[i, k] = s[i, j] + s[j, k] holds by construction.
    """
    w = window.shape[-2]
    lead = window.shape[:-2]
    left = T.linear(window, params.sim_left)
    right = T.linear(window, params.sim_right)
    pair = T.sum(T.mul(T.slice_along(left, -2, 0, w - 1),
                       T.slice_along(right, -2, 1, w)), axis=-1)       # [*, W-1]
    prefix = T.concat([Tensor(np.zeros(lead + (1,))), T.cumsum(pair, axis=-1)], axis=-1)
    col = T.reshape(prefix, lead + (1, w))
    row = T.reshape(prefix, lead + (w, 1))
    signs = np.sign(np.arange(w)[None, :] - np.arange(w)[:, None]).astype(np.float64)
    return T.mul(T.sub(col, row), Tensor(signs))


def selection_mask(similarity: Tensor) -> Tensor:
    """Per-frame mask: minus the mean similarity to the rest of the window."""
    w = similarity.shape[-1]
    return T.mul(T.sum(similarity, axis=-1), -1.0 / w)


def distinction(window: Tensor, params: DtpParams) -> Tensor:
    """Learned per-frame salience scores [*, W, C] -> [*, W]."""
    d = T.linear(window, params.salience_w, params.salience_b)
    return T.reshape(d, window.shape[:-1])


def dtp_pool(seq: Tensor, params: DtpParams, metric: str = "S+D",
             record: bool = False) -> tuple[Tensor, list[PoolingWindow]]:
    """Collapse each window of ``seq`` [*, T, C] into one weighted frame.

    Weights are softmax(selection + distinction) per window; the S-only and
    D-only modes zero out the omitted term. Returns [*, T', C] plus window
    snapshots when ``record`` is set.
    """
    if metric not in DTP_METRICS:
        raise ValueError(f"unknown metric {metric!r}; expected one of {DTP_METRICS}")
    frames = seq.shape[-2]
    centers = window_centers(frames, params.tau, params.stride)
    pooled, windows = [], []
    for c in centers:
        members = T.slice_along(seq, -2, c - params.tau, c + params.tau + 1)
        sim = sel = dist = None
        if metric != "D":
            sim = pairwise_similarity(members, params)
            sel = selection_mask(sim)
        if metric != "S":
            dist = distinction(members, params)
        if metric == "S":
            scores = sel
        elif metric == "D":
            scores = dist
        else:
            scores = T.add(dist, sel)
        weights = T.softmax(scores)
        pooled.append(T.sum(T.mul(T.reshape(weights, weights.shape + (1,)), members), axis=-2))
        if record:
            windows.append(PoolingWindow(
                center=c,
                members=members.data.copy(),
                similarity=None if sim is None else sim.data.copy(),
                selection=None if sel is None else sel.data.copy(),
                distinction=None if dist is None else dist.data.copy(),
                weights=weights.data.copy()))
    return T.stack(pooled, axis=-2), windows


def fixed_pool(seq: Tensor, tau: int, stride: int, kind: str) -> Tensor:
    """Average or per-channel max over the same windows the dynamic pool uses."""
    centers = window_centers(seq.shape[-2], tau, stride)
    outs = []
    for c in centers:
        members = T.slice_along(seq, -2, c - tau, c + tau + 1)
        outs.append(T.mean(members, axis=-2) if kind == "avg" else T.amax(members, axis=-2))
    return T.stack(outs, axis=-2)


def tcn_apply(seq: Tensor, params: TcnParams) -> Tensor:
    """Width-3 temporal convolution with same-length zero padding, then relu."""
    frames = seq.shape[-2]
    padded = T.pad_axis(seq, -2, 1, 1)
    y = T.add(T.add(T.linear(T.slice_along(padded, -2, 0, frames), params.k_before),
                    T.linear(T.slice_along(padded, -2, 1, frames + 1), params.k_center,
                             params.bias)),
              T.linear(T.slice_along(padded, -2, 2, frames + 2), params.k_after))
    return T.relu(y)


def rnn_pool(seq: Tensor, params: RnnPoolParams) -> Tensor:
    """Single recurrent pass over the frames, keeping the last state."""
    return gru_scan(seq, params.cell)[-1]


def dtm_forward(seq: Tensor, params: DtmParams, variant: str = "DTP", metric: str = "S+D",
                record: bool = False) -> tuple[Tensor, list[tuple[int, list[PoolingWindow]]]]:
    """Reduce [*, T, C] to one [*, C] vector per node.

    The main path is convolution, pooling, convolution, pooling, then a mean
    over whatever frames remain. ``AvgP``/``MaxP`` swap the dynamic weights for
    uniform/argmax selection over the same windows, ``RNN`` replaces the whole
    stack with a recurrent pass, and ``none`` runs the convolutions alone.
    """
    if variant not in POOLING_VARIANTS:
        raise ValueError(f"unknown pooling variant {variant!r}; expected one of {POOLING_VARIANTS}")
    squeeze = seq.ndim == 2
    if squeeze:
        seq = T.reshape(seq, (1,) + seq.shape)
    records: list[tuple[int, list[PoolingWindow]]] = []

    if variant == "RNN":
        out = rnn_pool(seq, params.rnn)
    else:
        y = tcn_apply(seq, params.tcn1)
        if variant == "DTP":
            y, w1 = dtp_pool(y, params.dtp1, metric, record)
            records.append((1, w1))
        elif variant in ("AvgP", "MaxP"):
            y = fixed_pool(y, params.tau, params.stride, "avg" if variant == "AvgP" else "max")
        y = tcn_apply(y, params.tcn2)
        if variant == "DTP":
            y, w2 = dtp_pool(y, params.dtp2, metric, record)
            records.append((2, w2))
        elif variant in ("AvgP", "MaxP"):
            y = fixed_pool(y, params.tau, params.stride, "avg" if variant == "AvgP" else "max")
        if y.shape[-2] > 1:
            out = T.mean(y, axis=-2)
        else:
            out = T.reshape(y, y.shape[:-2] + (y.shape[-1],))

    if squeeze:
        out = T.reshape(out, out.shape[1:])
    return out, records


def fuse_streams(visual_vec: Tensor, semantic_vec: Tensor) -> Tensor:
    """Concatenate the per-node stream vectors along the channel axis."""
    if visual_vec.shape != semantic_vec.shape:
        raise ShapeError(f"stream vectors disagree: {visual_vec.shape} vs {semantic_vec.shape}")
    return T.concat([visual_vec, semantic_vec], axis=-1)


def _init_tcn(store: ParamStore, prefix: str, c_in: int, c_out: int,
              rng: np.random.Generator) -> TcnParams:
    return TcnParams(
        k_before=store.add(f"{prefix}.k_before", scaled_uniform(rng, (c_in, c_out), c_in)),
        k_center=store.add(f"{prefix}.k_center", scaled_uniform(rng, (c_in, c_out), c_in)),
        k_after=store.add(f"{prefix}.k_after", scaled_uniform(rng, (c_in, c_out), c_in)),
        bias=store.add(f"{prefix}.bias", np.zeros(c_out)),
    )


def _tcn_from_store(store: ParamStore, prefix: str) -> TcnParams:
    return TcnParams(store[f"{prefix}.k_before"], store[f"{prefix}.k_center"],
                     store[f"{prefix}.k_after"], store[f"{prefix}.bias"])


def _init_dtp(store: ParamStore, prefix: str, channels: int, sim_dim: int,
              tau: int, stride: int, rng: np.random.Generator) -> DtpParams:
    return DtpParams(
        sim_left=store.add(f"{prefix}.sim_left", scaled_uniform(rng, (channels, sim_dim), channels)),
        sim_right=store.add(f"{prefix}.sim_right", scaled_uniform(rng, (channels, sim_dim), channels)),
        salience_w=store.add(f"{prefix}.salience_w", scaled_uniform(rng, (channels, 1), channels)),
        salience_b=store.add(f"{prefix}.salience_b", np.zeros(1)),
        tau=tau, stride=stride,
    )


def _dtp_from_store(store: ParamStore, prefix: str, tau: int, stride: int) -> DtpParams:
    return DtpParams(store[f"{prefix}.sim_left"], store[f"{prefix}.sim_right"],
                     store[f"{prefix}.salience_w"], store[f"{prefix}.salience_b"],
                     tau=tau, stride=stride)


def init_dtm_params(store: ParamStore, prefix: str, d_in: int, channels: int, sim_dim: int,
                    tau: int, stride: int, variant: str,
                    rng: np.random.Generator) -> DtmParams:
    if variant not in POOLING_VARIANTS:
        raise ValueError(f"unknown pooling variant {variant!r}")
    params = DtmParams(tau=tau, stride=stride)
    if variant == "RNN":
        params.rnn = RnnPoolParams(init_rnn_cell(store, f"{prefix}.rnn", d_in, channels, rng))
        return params
    params.tcn1 = _init_tcn(store, f"{prefix}.tcn1", d_in, channels, rng)
    params.tcn2 = _init_tcn(store, f"{prefix}.tcn2", channels, channels, rng)
    if variant == "DTP":
        params.dtp1 = _init_dtp(store, f"{prefix}.dtp1", channels, sim_dim, tau, stride, rng)
        params.dtp2 = _init_dtp(store, f"{prefix}.dtp2", channels, sim_dim, tau, stride, rng)
    return params


def dtm_params_from_store(store: ParamStore, prefix: str, tau: int, stride: int,
                          variant: str) -> DtmParams:
    params = DtmParams(tau=tau, stride=stride)
    if variant == "RNN":
        params.rnn = RnnPoolParams(rnn_cell_from_store(store, f"{prefix}.rnn"))
        return params
    params.tcn1 = _tcn_from_store(store, f"{prefix}.tcn1")
    params.tcn2 = _tcn_from_store(store, f"{prefix}.tcn2")
    if variant == "DTP":
        params.dtp1 = _dtp_from_store(store, f"{prefix}.dtp1", tau, stride)
        params.dtp2 = _dtp_from_store(store, f"{prefix}.dtp2", tau, stride)
    return params
