"""End-to-end model assembly, SGD training with step decay, and evaluation.

The forward pass per video: build the two feature streams, optionally enhance
them with the bidirectional recurrent pass, parse each frame's graph with
attention (or the fixed-weight baseline), reduce each node's frame sequence
with the configured temporal module, concatenate the two stream vectors per
node, and read out subactivity (human node) and affordance (per object)
logits.

Training accumulates per-sample gradients over a batch (videos vary in node
count, so no tensor batching), applies plain SGD with a stepped learning-rate
decay, and is deterministic given the config seed. A numerical abort during
an epoch raises TrainingDiverged carrying the last epoch's parameters.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import data as D
from . import heads as H
from . import pooling as P
from . import spatial as S
from . import temporal as R
from . import tensor as T
from .checkpoint import save_checkpoint, load_checkpoint
from .data import StreamFeatures, VideoGraphSample
from .spatial import SPATIAL_MODES, AttentionRecord
from .pooling import DTP_METRICS, POOLING_VARIANTS, PoolingWindow
from .tensor import NumericError, ParamStore, Tape, Tensor

STREAMS = ("visual", "semantic")


class ConfigError(ValueError):
    """A configuration value is missing, malformed, or outside its allowed set."""


class TrainingDiverged(ArithmeticError):
    """Training hit non-finite values; carries the last good parameters."""

    def __init__(self, message: str, last_good: ParamStore, epoch: int):
        super().__init__(message)
        self.last_good = last_good
        self.epoch = epoch


@dataclass
class TrainConfig:
    # model dimensions
    frames: int = 8                 # fixed frame count after uniform resampling
    model_dim: int = 64             # node feature width after stream projection
    channel_dim: int = 64           # temporal module channel width
    embed_dim: int = 8              # category embedding width
    sim_dim: int | None = None      # similarity embedding width; defaults to channel_dim
    mlp_hidden: int = 256
    tau: int = 1
    stride: int = 2
    # optimization
    affordance_loss_weight: float = 1.0
    lr: float = 1e-2                # desk-scale default; see configs/full_scale.cfg
    lr_decay: float = 0.8
    lr_decay_every: int = 20
    epochs: int = 100
    batch_size: int = 4
    seed: int = 0
    metrics_every: int = 25
    stop_at_train_acc: float | None = None   # stop early once both accuracies reach this
    # ablation switches
    spatial: str = "GAT"                    # GAT | GCN | GCN-full
    temporal_enhancement: bool = True
    pooling: str = "DTP"                    # DTP | AvgP | MaxP | RNN | none
    dtp_metric: str = "S+D"                 # S | D | S+D
    # dataset-derived dimensions (auto-filled from data when None)
    num_subactivities: int | None = None
    num_affordances: int | None = None
    num_categories: int | None = None
    visual_dim: int | None = None

    def validate(self) -> None:
        positive = ["frames", "model_dim", "channel_dim", "embed_dim", "mlp_hidden",
                    "tau", "stride", "lr", "lr_decay", "lr_decay_every", "epochs",
                    "batch_size", "metrics_every"]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.affordance_loss_weight < 0:
            raise ConfigError("affordance_loss_weight must be non-negative")
        if self.spatial not in SPATIAL_MODES:
            raise ConfigError(f"spatial={self.spatial!r}; allowed values: {', '.join(SPATIAL_MODES)}")
        if self.pooling not in POOLING_VARIANTS:
            raise ConfigError(f"pooling={self.pooling!r}; allowed values: {', '.join(POOLING_VARIANTS)}")
        if self.dtp_metric not in DTP_METRICS:
            raise ConfigError(f"dtp_metric={self.dtp_metric!r}; allowed values: {', '.join(DTP_METRICS)}")
        if self.temporal_enhancement and self.model_dim % 2 != 0:
            raise ConfigError("model_dim must be even when temporal_enhancement is on")

    def resolved_sim_dim(self) -> int:
        return self.channel_dim if self.sim_dim is None else self.sim_dim

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["num_objects_note"] = None
        del d["num_objects_note"]
        return d

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}; "
                              f"valid keys: {', '.join(sorted(known))}")
        cfg = cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in values.items()})
        return cfg


def resolve_config(config: TrainConfig, dataset: list[VideoGraphSample]) -> TrainConfig:
    """Fill dataset-derived dimensions that were left unset."""
    if not dataset:
        raise D.DataError("dataset is empty")
    cfg = dataclasses.replace(config)
    if cfg.num_subactivities is None:
        cfg.num_subactivities = max(s.subactivity_label for s in dataset) + 1
    if cfg.num_affordances is None:
        cfg.num_affordances = max(e.affordance_label for s in dataset
                                  for e in s.entities if not e.is_human) + 1
    if cfg.num_categories is None:
        cfg.num_categories = max(e.category_id for s in dataset for e in s.entities) + 1
    if cfg.visual_dim is None:
        dims = {e.visual_feature.shape[1] for s in dataset for e in s.entities
                if e.visual_feature is not None}
        if len(dims) > 1:
            raise D.DataError(f"inconsistent visual feature widths in dataset: {sorted(dims)}")
        cfg.visual_dim = dims.pop() if dims else cfg.embed_dim
    cfg.validate()
    return cfg


def init_params(config: TrainConfig, seed: int | None = None) -> ParamStore:
    """Fresh parameters for the configured model; deterministic per seed."""
    for name in ("num_subactivities", "num_affordances", "num_categories", "visual_dim"):
        if getattr(config, name) is None:
            raise ConfigError(f"config.{name} is unset; call resolve_config with the dataset first")
    config.validate()
    rng = np.random.Generator(np.random.PCG64(config.seed if seed is None else seed))
    store = ParamStore()
    D.init_stream_params(store, config.num_categories, config.embed_dim,
                         config.visual_dim, config.model_dim, rng)
    if config.temporal_enhancement:
        for stream in STREAMS:
            R.init_birnn_params(store, f"te.{stream}", config.model_dim, rng)
    for stream in STREAMS:
        S.init_gat_params(store, f"spatial.{stream}", config.model_dim, rng,
                          with_pair_scorer=(config.spatial == "GAT"))
    for stream in STREAMS:
        P.init_dtm_params(store, f"dtm.{stream}", config.model_dim, config.channel_dim,
                          config.resolved_sim_dim(), config.tau, config.stride,
                          config.pooling, rng)
    H.init_mlp_params(store, "head.subactivity", 2 * config.channel_dim,
                      config.mlp_hidden, config.num_subactivities, rng)
    H.init_mlp_params(store, "head.affordance", 4 * config.channel_dim,
                      config.mlp_hidden, config.num_affordances, rng)
    return store


@dataclass
class ForwardOutput:
    prediction: H.Prediction
    attention: AttentionRecord
    temporal_weights: dict[str, list[tuple[int, list[PoolingWindow]]]]


def forward(sample: VideoGraphSample, store: ParamStore, config: TrainConfig,
            record: bool = False) -> ForwardOutput:
    """One deterministic pass from a raw sample to logits."""
    feats = D.build_streams(sample, D.stream_params_from_store(store))
    if config.temporal_enhancement:
        feats = StreamFeatures(
            R.enhance(feats.visual, R.birnn_params_from_store(store, "te.visual")),
            R.enhance(feats.semantic, R.birnn_params_from_store(store, "te.semantic")))
    gat = {s: S.gat_params_from_store(store, f"spatial.{s}") for s in STREAMS}
    parsed, attention = S.parse_video(feats, sample.adjacency, gat,
                                      mode=config.spatial, video_id=sample.video_id)
    pooled = {}
    weights: dict[str, list[tuple[int, list[PoolingWindow]]]] = {}
    for name, seq in (("visual", parsed.visual), ("semantic", parsed.semantic)):
        dtm = P.dtm_params_from_store(store, f"dtm.{name}", config.tau, config.stride,
                                      config.pooling)
        vec, recs = P.dtm_forward(seq, dtm, config.pooling, config.dtp_metric, record)
        pooled[name] = vec
        weights[name] = recs
    fused = P.fuse_streams(pooled["visual"], pooled["semantic"])   # (N, 2C)

    h_vec = T.take(fused, sample.human_index, axis=0)
    sub_logits = H.subactivity_readout(h_vec, H.mlp_params_from_store(store, "head.subactivity"))
    aff_params = H.mlp_params_from_store(store, "head.affordance")
    aff_logits, object_ids = [], []
    for i in sample.object_indices:
        aff_logits.append(H.affordance_readout(h_vec, T.take(fused, i, axis=0), aff_params))
        object_ids.append(sample.entities[i].node_id)
    return ForwardOutput(H.Prediction(sub_logits, aff_logits, object_ids), attention, weights)


def sample_loss(sample: VideoGraphSample, store: ParamStore, config: TrainConfig) -> Tensor:
    out = forward(sample, store, config)
    labels = [sample.entities[i].affordance_label for i in sample.object_indices]
    return H.joint_loss(out.prediction, sample.subactivity_label, labels,
                        config.affordance_loss_weight)


def sgd_step(store: ParamStore, lr: float) -> None:
    """In-place update theta <- theta - lr * grad, then zero the gradients."""
    for name, t in store.items():
        if not np.isfinite(t.grad).all():
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        t.data -= lr * t.grad
    store.zero_grads()


def lr_at(config: TrainConfig, epoch: int) -> float:
    return config.lr * config.lr_decay ** (epoch // config.lr_decay_every)


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(seed * 1_000_003 + epoch + 1))
    return rng.permutation(n)


@dataclass
class TrainLog:
    entries: list[dict] = field(default_factory=list)
    wall_time_s: float = 0.0

    def write_jsonl(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for entry in self.entries:
                fh.write(json.dumps(entry))
                fh.write("\n")
            fh.write(json.dumps({"wall_time_s": self.wall_time_s}))
            fh.write("\n")

    @classmethod
    def read_jsonl(cls, path: str) -> "TrainLog":
        log = cls()
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                if "wall_time_s" in record and "epoch" not in record:
                    log.wall_time_s = record["wall_time_s"]
                else:
                    log.entries.append(record)
        return log


@dataclass
class TrainResult:
    store: ParamStore
    config: TrainConfig
    log: TrainLog


def train(config: TrainConfig, dataset: list[VideoGraphSample],
          checkpoint_path: str | None = None, log_path: str | None = None,
          resume_from: str | None = None) -> TrainResult:
    """Run the configured number of epochs; deterministic given the seed."""
    if not dataset:
        raise D.DataError("cannot train on an empty dataset")
    config = resolve_config(config, dataset)

    if resume_from is not None:
        store, extra = load_checkpoint(resume_from)
        start_epoch = int(extra.get("epoch", -1)) + 1
    else:
        store = init_params(config)
        start_epoch = 0

    log = TrainLog()
    started = time.perf_counter()
    last_good = store.copy()
    last_epoch = start_epoch - 1
    for epoch in range(start_epoch, config.epochs):
        lr = lr_at(config, epoch)
        order = _epoch_order(config.seed, epoch, len(dataset))
        total = 0.0
        try:
            for pos in range(0, len(order), config.batch_size):
                batch = order[pos:pos + config.batch_size]
                for idx in batch:
                    tape = Tape()
                    with tape:
                        loss = sample_loss(dataset[int(idx)], store, config)
                    total += loss.item()
                    tape.backward(loss, seed=1.0 / len(batch))
                sgd_step(store, lr)
        except NumericError as e:
            raise TrainingDiverged(f"epoch {epoch}: {e}", last_good, epoch - 1) from e
        mean_loss = total / len(dataset)
        entry = {"epoch": epoch, "loss": mean_loss, "lr": lr}

        want_metrics = ((epoch + 1) % config.metrics_every == 0 or epoch == config.epochs - 1
                        or config.stop_at_train_acc is not None
                        and (epoch + 1) % max(config.metrics_every // 2, 1) == 0)
        stop = False
        if want_metrics:
            report = evaluate(store, dataset, config, k_list=(1,))
            entry["train"] = report.summary()
            if config.stop_at_train_acc is not None:
                target = config.stop_at_train_acc
                stop = (report.subactivity_accuracy >= target
                        and report.affordance_accuracy >= target)
        log.entries.append(entry)
        last_good = store.copy()
        last_epoch = epoch
        if stop:
            break

    log.wall_time_s = time.perf_counter() - started
    if log.entries and "train" not in log.entries[-1]:
        report = evaluate(store, dataset, config, k_list=(1,))
        log.entries[-1]["train"] = report.summary()

    if checkpoint_path is not None:
        save_checkpoint(store, checkpoint_path,
                        extra={"epoch": last_epoch, "config": config.to_dict()})
    if log_path is not None:
        log.write_jsonl(log_path)
    return TrainResult(store, config, log)


def evaluate(store: ParamStore, dataset: list[VideoGraphSample], config: TrainConfig,
             k_list=(1,)) -> H.MetricsReport:
    """Metrics over a dataset with frozen parameters (no tape, no updates)."""
    if not dataset:
        raise D.DataError("cannot evaluate on an empty dataset")
    config = resolve_config(config, dataset)
    _check_dims(store, config)

    sub_logits, sub_labels = [], []
    aff_preds, aff_labels = [], []
    total_loss = 0.0
    for sample in dataset:
        out = forward(sample, store, config)
        labels = [sample.entities[i].affordance_label for i in sample.object_indices]
        loss = H.joint_loss(out.prediction, sample.subactivity_label, labels,
                            config.affordance_loss_weight)
        total_loss += loss.item()
        sub_logits.append(out.prediction.subactivity_logits.data)
        sub_labels.append(sample.subactivity_label)
        for logits, label in zip(out.prediction.affordance_logits, labels):
            aff_preds.append(int(np.argmax(logits.data)))
            aff_labels.append(label)
    sub_logit_mat = np.stack(sub_logits, axis=0)
    sub_preds = np.argmax(sub_logit_mat, axis=-1)

    topk = {}
    for k in k_list:
        topk[int(k)] = H.topk_accuracy(sub_logit_mat, sub_labels, int(k))
    return H.MetricsReport(
        subactivity=H.macro_f1(sub_preds, sub_labels, config.num_subactivities),
        affordance=H.macro_f1(aff_preds, aff_labels, config.num_affordances),
        topk=topk,
        mean_loss=total_loss / len(dataset),
        subactivity_accuracy=H.accuracy(sub_preds, sub_labels),
        affordance_accuracy=H.accuracy(aff_preds, aff_labels),
        subactivity_confusion=H.confusion_matrix(sub_preds, sub_labels,
                                                 config.num_subactivities).tolist(),
        affordance_confusion=H.confusion_matrix(aff_preds, aff_labels,
                                                config.num_affordances).tolist(),
        num_videos=len(dataset),
        num_objects=len(aff_labels),
    )


def _check_dims(store: ParamStore, config: TrainConfig) -> None:
    expected = (config.visual_dim + 4, config.model_dim)
    actual = store["stream.visual.proj_w"].shape
    if actual != expected:
        raise D.DataError(
            f"checkpoint tensor 'stream.visual.proj_w' has shape {actual} but the dataset/config "
            f"needs {expected}; the checkpoint was trained on different feature dimensions")
