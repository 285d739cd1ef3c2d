"""Video graph samples: entity tracks, adjacency, synthetic data, JSONL IO.

A sample is one video: T frames of N tracked entities (exactly one human),
each entity carrying normalized boxes per frame, an optional precomputed
appearance descriptor per frame, a category id, and (objects only) an
affordance label. Edges connect the human to every object and nothing else.

Dataset files are JSON lines, one sample per line; the schema is documented
in the README. Serialization uses shortest-repr floats, so a save/load round
trip is bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import ParamStore, Tensor, scaled_uniform

# Affordance class reserved for objects that take no part in the interaction.
STATIC_AFFORDANCE = 0


class DataError(ValueError):
    """A dataset record violates the documented schema."""


@dataclass
class EntityTrack:
    node_id: str
    is_human: bool
    category_id: int
    boxes: np.ndarray                      # (T, 4) normalized x1, y1, x2, y2
    visual_feature: np.ndarray | None = None   # (T, Dv) appearance descriptor
    affordance_label: int | None = None        # objects only

    def __post_init__(self):
        self.boxes = np.asarray(self.boxes, dtype=np.float64)
        if self.visual_feature is not None:
            self.visual_feature = np.asarray(self.visual_feature, dtype=np.float64)

    def validate(self, frames: int, video_id: str) -> None:
        where = f"video {video_id!r} entity {self.node_id!r}"
        if self.boxes.shape != (frames, 4):
            raise DataError(f"{where}: boxes shape {self.boxes.shape} != ({frames}, 4)")
        if np.any(self.boxes < 0.0) or np.any(self.boxes > 1.0):
            raise DataError(f"{where}: boxes must lie in [0, 1]")
        if np.any(self.boxes[:, 0] > self.boxes[:, 2]) or np.any(self.boxes[:, 1] > self.boxes[:, 3]):
            raise DataError(f"{where}: boxes must satisfy x1 <= x2 and y1 <= y2")
        if self.category_id < 0:
            raise DataError(f"{where}: category_id must be non-negative")
        if self.visual_feature is not None and (
                self.visual_feature.ndim != 2 or self.visual_feature.shape[0] != frames):
            raise DataError(f"{where}: visual_feature must be ({frames}, Dv)")
        if self.is_human and self.affordance_label is not None:
            raise DataError(f"{where}: the human carries no affordance label")
        if not self.is_human:
            if self.affordance_label is None:
                raise DataError(f"{where}: object is missing its affordance label")
            if self.affordance_label < 0:
                raise DataError(f"{where}: affordance label must be non-negative")


def init_adjacency(entities: list[EntityTrack]) -> np.ndarray:
    """Symmetric 0/1 matrix: human-object edges set, everything else zero."""
    humans = [i for i, e in enumerate(entities) if e.is_human]
    if len(humans) != 1:
        raise DataError(f"expected exactly one human entity, found {len(humans)}")
    n = len(entities)
    adj = np.zeros((n, n), dtype=np.float64)
    h = humans[0]
    adj[h, :] = 1.0
    adj[:, h] = 1.0
    adj[h, h] = 0.0
    return adj


@dataclass
class VideoGraphSample:
    video_id: str
    frames: int
    entities: list[EntityTrack]
    subactivity_label: int
    adjacency: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.frames < 1:
            raise DataError(f"video {self.video_id!r}: frame count must be >= 1")
        if len(self.entities) < 2:
            raise DataError(f"video {self.video_id!r}: need at least two entities")
        if self.subactivity_label < 0:
            raise DataError(f"video {self.video_id!r}: subactivity label must be non-negative")
        for e in self.entities:
            e.validate(self.frames, self.video_id)
        self.adjacency = init_adjacency(self.entities)

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def human_index(self) -> int:
        return next(i for i, e in enumerate(self.entities) if e.is_human)

    @property
    def object_indices(self) -> list[int]:
        return [i for i, e in enumerate(self.entities) if not e.is_human]


# ---------------------------------------------------------------------------
# two-stream node features


@dataclass
class StreamParams:
    embed_table: Tensor      # (num_categories, embed_dim)
    visual_proj_w: Tensor    # (visual_dim + 4, model_dim)
    visual_proj_b: Tensor    # (model_dim,)
    semantic_proj_w: Tensor  # (embed_dim + 4, model_dim)
    semantic_proj_b: Tensor  # (model_dim,)


@dataclass
class StreamFeatures:
    visual: Tensor    # (N, T, D)
    semantic: Tensor  # (N, T, D)


def init_stream_params(store: ParamStore, num_categories: int, embed_dim: int,
                       visual_dim: int, model_dim: int, rng: np.random.Generator) -> StreamParams:
    return StreamParams(
        embed_table=store.add("embed.table",
                              scaled_uniform(rng, (num_categories, embed_dim), embed_dim)),
        visual_proj_w=store.add("stream.visual.proj_w",
                                scaled_uniform(rng, (visual_dim + 4, model_dim), visual_dim + 4)),
        visual_proj_b=store.add("stream.visual.proj_b", np.zeros(model_dim)),
        semantic_proj_w=store.add("stream.semantic.proj_w",
                                  scaled_uniform(rng, (embed_dim + 4, model_dim), embed_dim + 4)),
        semantic_proj_b=store.add("stream.semantic.proj_b", np.zeros(model_dim)),
    )


def stream_params_from_store(store: ParamStore) -> StreamParams:
    return StreamParams(store["embed.table"],
                        store["stream.visual.proj_w"], store["stream.visual.proj_b"],
                        store["stream.semantic.proj_w"], store["stream.semantic.proj_b"])


def build_streams(sample: VideoGraphSample, params: StreamParams) -> StreamFeatures:
    """Project per-entity inputs into the visual and semantic feature streams.

    Visual input per frame is the appearance descriptor with the normalized
    box appended; when no descriptor is recorded the category embedding stands
    in for it. Semantic input is the category embedding with the box appended.
    """
    frames = sample.frames
    embed_dim = params.embed_table.shape[1]
    rows_v, rows_s = [], []
    for e in sample.entities:
        if e.category_id >= params.embed_table.shape[0]:
            raise DataError(f"video {sample.video_id!r} entity {e.node_id!r}: "
                            f"category {e.category_id} not covered by the embedding table")
        emb = T.take(params.embed_table, e.category_id, axis=0)
        emb_rows = T.broadcast_to(T.reshape(emb, (1, embed_dim)), (frames, embed_dim))
        boxes = Tensor(e.boxes)
        if e.visual_feature is not None:
            visual_in = T.concat([Tensor(e.visual_feature), boxes], axis=1)
        else:
            visual_in = T.concat([emb_rows, boxes], axis=1)
        semantic_in = T.concat([emb_rows, boxes], axis=1)
        rows_v.append(T.linear(visual_in, params.visual_proj_w, params.visual_proj_b))
        rows_s.append(T.linear(semantic_in, params.semantic_proj_w, params.semantic_proj_b))
    return StreamFeatures(T.stack(rows_v, axis=0), T.stack(rows_s, axis=0))


# ---------------------------------------------------------------------------
# synthetic data

# The generator separates classes by construction: the one "active" object of
# a video moves along a class-specific direction and carries a class-specific
# feature offset, while the human and all distractor objects are class-neutral.
# Every random draw goes through the integer helpers below so the byte stream
# is identical across platforms.


@dataclass
class SynthConfig:
    num_videos: int = 20
    frames: int = 8
    num_objects_range: tuple[int, int] = (2, 3)
    num_subactivities: int = 3
    num_affordances: int = 3       # class STATIC_AFFORDANCE is the distractor class
    num_categories: int = 4        # id 0 = human
    feature_dim: int = 12
    redundant_frames: int = 0      # frames overwritten with a copy of their predecessor
    seed: int = 0

    def validate(self) -> None:
        if self.num_videos < 1 or self.frames < 1:
            raise DataError("need at least one video and one frame")
        lo, hi = self.num_objects_range
        if not (1 <= lo <= hi):
            raise DataError(f"invalid object count range {self.num_objects_range}")
        if self.num_subactivities < 1:
            raise DataError("need at least one subactivity class")
        if self.num_affordances < 2:
            raise DataError("need the static class plus at least one active affordance")
        if self.num_categories < 2:
            raise DataError("need the human category plus at least one object category")
        if self.feature_dim < 1:
            raise DataError("feature_dim must be positive")
        if not 0 <= self.redundant_frames < self.frames:
            raise DataError("redundant_frames must lie in [0, frames)")


def _ri(rng: np.random.Generator, n: int) -> int:
    return int(rng.integers(0, n))


def _u(rng: np.random.Generator, lo: float, hi: float) -> float:
    # integer draw mapped onto [lo, hi); exact and platform-independent
    return lo + (hi - lo) * (int(rng.integers(0, 1 << 32)) / float(1 << 32))


def _uvec(rng: np.random.Generator, n: int, lo: float, hi: float) -> np.ndarray:
    return np.array([_u(rng, lo, hi) for _ in range(n)])


def _clip01(v: float) -> float:
    return min(max(v, 0.0), 1.0)


def _track_boxes(rng, frames: int, center: tuple[float, float], half: float,
                 velocity: tuple[float, float], noise: float) -> np.ndarray:
    rows = np.empty((frames, 4))
    for t in range(frames):
        cx = center[0] + velocity[0] * t + _u(rng, -noise, noise)
        cy = center[1] + velocity[1] * t + _u(rng, -noise, noise)
        rows[t] = (_clip01(cx - half), _clip01(cy - half),
                   _clip01(cx + half), _clip01(cy + half))
    return rows


def active_affordance_for(subactivity: int, num_affordances: int) -> int:
    """Affordance class assigned to the active object of a video."""
    return 1 + subactivity % (num_affordances - 1)


def synth_generate(config: SynthConfig) -> list[VideoGraphSample]:
    """Deterministic labeled dataset, separable by construction."""
    config.validate()
    rng = np.random.Generator(np.random.PCG64(config.seed))
    frames, dv = config.frames, config.feature_dim
    samples = []
    for v in range(config.num_videos):
        label = v % config.num_subactivities
        lo, hi = config.num_objects_range
        n_objects = lo + _ri(rng, hi - lo + 1)
        active = _ri(rng, n_objects)

        angle = 2.0 * np.pi * label / config.num_subactivities
        speed = 0.28 / max(frames - 1, 1)
        entities = [EntityTrack(
            node_id="human", is_human=True, category_id=0,
            boxes=_track_boxes(rng, frames, (_u(rng, 0.35, 0.65), _u(rng, 0.35, 0.65)),
                               _u(rng, 0.06, 0.10), (0.0, 0.0), 0.015),
            visual_feature=None, affordance_label=None)]
        features = [_entity_features(rng, frames, dv, offset_class=None)]

        for j in range(n_objects):
            if j == active:
                center = (_u(rng, 0.25, 0.45), _u(rng, 0.25, 0.45))
                velocity = (speed * np.cos(angle), speed * np.sin(angle))
                affordance = active_affordance_for(label, config.num_affordances)
                offset_class = label
            else:
                center = (_u(rng, 0.55, 0.80), _u(rng, 0.55, 0.80))
                velocity = (0.0, 0.0)
                affordance = STATIC_AFFORDANCE
                offset_class = None
            entities.append(EntityTrack(
                node_id=f"obj{j}", is_human=False,
                category_id=1 + _ri(rng, config.num_categories - 1),
                boxes=_track_boxes(rng, frames, center, _u(rng, 0.04, 0.07), velocity, 0.015),
                visual_feature=None, affordance_label=affordance))
            features.append(_entity_features(rng, frames, dv, offset_class))

        for e, f in zip(entities, features):
            e.visual_feature = f

        if config.redundant_frames:
            positions = sorted(_sample_positions(rng, config.redundant_frames, frames))
            for p in positions:
                for e in entities:
                    e.boxes[p] = e.boxes[p - 1]
                    e.visual_feature[p] = e.visual_feature[p - 1]

        samples.append(VideoGraphSample(video_id=f"v{v:04d}", frames=frames,
                                        entities=entities, subactivity_label=label))
    return samples


def _entity_features(rng, frames: int, dv: int, offset_class: int | None) -> np.ndarray:
    base = _uvec(rng, dv, -0.4, 0.4)
    feats = np.empty((frames, dv))
    for t in range(frames):
        feats[t] = base + _uvec(rng, dv, -0.05, 0.05)
    if offset_class is not None:
        feats[:, offset_class % dv] += 0.9
    return feats


def _sample_positions(rng, k: int, frames: int) -> list[int]:
    # k distinct positions in [1, frames)
    pool = list(range(1, frames))
    chosen = []
    for _ in range(k):
        chosen.append(pool.pop(_ri(rng, len(pool))))
    return chosen


# ---------------------------------------------------------------------------
# dataset files


def _sample_to_record(sample: VideoGraphSample) -> dict:
    return {
        "video_id": sample.video_id,
        "frames": sample.frames,
        "subactivity": sample.subactivity_label,
        "entities": [{
            "node_id": e.node_id,
            "is_human": e.is_human,
            "category": e.category_id,
            "boxes": e.boxes.tolist(),
            "visual": None if e.visual_feature is None else e.visual_feature.tolist(),
            "affordance": e.affordance_label,
        } for e in sample.entities],
    }


def _require(record: dict, key: str, video_id: str):
    if key not in record or record[key] is None:
        raise DataError(f"video {video_id!r}: record is missing field {key!r}")
    return record[key]


def _sample_from_record(record: dict) -> VideoGraphSample:
    video_id = record.get("video_id", "<missing id>")
    frames = _require(record, "frames", video_id)
    subactivity = _require(record, "subactivity", video_id)
    entities = []
    for raw in _require(record, "entities", video_id):
        node_id = raw.get("node_id", "<missing id>")
        is_human = _require(raw, "is_human", f"{video_id}:{node_id}")
        entities.append(EntityTrack(
            node_id=node_id,
            is_human=bool(is_human),
            category_id=int(_require(raw, "category", f"{video_id}:{node_id}")),
            boxes=np.asarray(_require(raw, "boxes", f"{video_id}:{node_id}"), dtype=np.float64),
            visual_feature=(None if raw.get("visual") is None
                            else np.asarray(raw["visual"], dtype=np.float64)),
            affordance_label=raw.get("affordance"),
        ))
    return VideoGraphSample(video_id=video_id, frames=int(frames),
                            entities=entities, subactivity_label=int(subactivity))


def save_dataset(samples: list[VideoGraphSample], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(_sample_to_record(s)))
            fh.write("\n")


def load_dataset(path: str, frames: int | None = None) -> list[VideoGraphSample]:
    """Read a JSONL dataset; ``frames`` uniformly resamples every video to a fixed length."""
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno}: not valid JSON ({e})") from None
            sample = _sample_from_record(record)
            if frames is not None:
                sample = resample_frames(sample, frames)
            samples.append(sample)
    return samples


def resample_frames(sample: VideoGraphSample, frames: int) -> VideoGraphSample:
    """Uniformly pick ``frames`` frame indices; identity when counts match."""
    if frames < 1:
        raise DataError("target frame count must be >= 1")
    if frames == sample.frames:
        return sample
    idx = np.round(np.linspace(0, sample.frames - 1, frames)).astype(int)
    entities = [EntityTrack(
        node_id=e.node_id, is_human=e.is_human, category_id=e.category_id,
        boxes=e.boxes[idx],
        visual_feature=None if e.visual_feature is None else e.visual_feature[idx],
        affordance_label=e.affordance_label,
    ) for e in sample.entities]
    return VideoGraphSample(video_id=sample.video_id, frames=frames,
                            entities=entities, subactivity_label=sample.subactivity_label)


def samples_equal(a: VideoGraphSample, b: VideoGraphSample) -> bool:
    """Bit-exact equality over every stored field."""
    if (a.video_id, a.frames, a.subactivity_label) != (b.video_id, b.frames, b.subactivity_label):
        return False
    if len(a.entities) != len(b.entities):
        return False
    for ea, eb in zip(a.entities, b.entities):
        if (ea.node_id, ea.is_human, ea.category_id, ea.affordance_label) != \
                (eb.node_id, eb.is_human, eb.category_id, eb.affordance_label):
            return False
        if not np.array_equal(ea.boxes, eb.boxes):
            return False
        if (ea.visual_feature is None) != (eb.visual_feature is None):
            return False
        if ea.visual_feature is not None and not np.array_equal(ea.visual_feature, eb.visual_feature):
            return False
    return True


def datasets_equal(a: list[VideoGraphSample], b: list[VideoGraphSample]) -> bool:
    return len(a) == len(b) and all(samples_equal(x, y) for x, y in zip(a, b))
