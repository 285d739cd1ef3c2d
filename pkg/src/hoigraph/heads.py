"""Readout heads, the joint loss, and evaluation metrics.

The subactivity head classifies the fused human-node vector; the affordance
head classifies each object from the concatenated human and object vectors
with shared weights. Both are two-layer MLPs. The joint loss adds the
subactivity cross-entropy and a weighted mean of the per-object affordance
cross-entropies.

Metric functions are plain numpy: per-class and macro F1, top-k accuracy with
a deterministic lower-index tie break, and row-normalized confusion matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import ParamStore, Tensor, scaled_uniform


@dataclass
class MlpParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class Prediction:
    subactivity_logits: Tensor        # (K_s,)
    affordance_logits: list[Tensor]   # one (K_a,) vector per object node
    object_ids: list[str] = field(default_factory=list)


def mlp_apply(x: Tensor, params: MlpParams) -> Tensor:
    return T.linear(T.relu(T.linear(x, params.w1, params.b1)), params.w2, params.b2)


def subactivity_readout(h_human: Tensor, params: MlpParams) -> Tensor:
    return mlp_apply(h_human, params)


def affordance_readout(h_human: Tensor, h_object: Tensor, params: MlpParams) -> Tensor:
    return mlp_apply(T.concat([h_human, h_object], axis=-1), params)


def joint_loss(pred: Prediction, subactivity_label: int, affordance_labels: list[int],
               affordance_weight: float = 1.0) -> Tensor:
    """Subactivity cross-entropy plus weighted mean object cross-entropy."""
    if affordance_weight < 0:
        raise ValueError("affordance loss weight must be non-negative")
    if len(pred.affordance_logits) != len(affordance_labels):
        raise ValueError(f"{len(pred.affordance_logits)} affordance predictions vs "
                         f"{len(affordance_labels)} labels")
    loss = T.cross_entropy(pred.subactivity_logits, subactivity_label)
    if affordance_labels:
        terms = [T.cross_entropy(logits, label)
                 for logits, label in zip(pred.affordance_logits, affordance_labels)]
        obj_mean = T.mean(T.stack(terms, axis=0))
        loss = T.add(loss, T.mul(obj_mean, affordance_weight))
    return loss


def init_mlp_params(store: ParamStore, prefix: str, d_in: int, hidden: int, d_out: int,
                    rng: np.random.Generator) -> MlpParams:
    return MlpParams(
        w1=store.add(f"{prefix}.w1", scaled_uniform(rng, (d_in, hidden), d_in)),
        b1=store.add(f"{prefix}.b1", np.zeros(hidden)),
        w2=store.add(f"{prefix}.w2", scaled_uniform(rng, (hidden, d_out), hidden)),
        b2=store.add(f"{prefix}.b2", np.zeros(d_out)),
    )


def mlp_params_from_store(store: ParamStore, prefix: str) -> MlpParams:
    return MlpParams(store[f"{prefix}.w1"], store[f"{prefix}.b1"],
                     store[f"{prefix}.w2"], store[f"{prefix}.b2"])


# ---------------------------------------------------------------------------
# metrics


def macro_f1(preds, labels, num_classes: int) -> dict:
    """Per-class precision/recall/F1 plus the unweighted mean over classes
    that appear in the labels. F1 is zero when precision + recall is zero."""
    preds = np.asarray(preds, dtype=int)
    labels = np.asarray(labels, dtype=int)
    if preds.size == 0 or preds.shape != labels.shape:
        raise ValueError("macro_f1 needs equal-length, non-empty prediction and label arrays")
    per_class = []
    macro_terms = []
    for k in range(num_classes):
        tp = int(np.sum((preds == k) & (labels == k)))
        fp = int(np.sum((preds == k) & (labels != k)))
        fn = int(np.sum((preds != k) & (labels == k)))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        support = int(np.sum(labels == k))
        per_class.append({"class": k, "precision": precision, "recall": recall,
                          "f1": f1, "support": support})
        if support:
            macro_terms.append(f1)
    return {"per_class": per_class,
            "macro_f1": float(np.mean(macro_terms)) if macro_terms else 0.0}


def topk_accuracy(logits, labels, k: int) -> float:
    """Fraction of rows whose label is among the k largest logits.

    Ties resolve toward the lower class index, so results are deterministic.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ValueError("topk_accuracy needs (M, K) logits and M labels")
    if not 1 <= k <= logits.shape[1]:
        raise ValueError(f"k={k} outside [1, {logits.shape[1]}]")
    ranked = np.argsort(-logits, axis=-1, kind="stable")[:, :k]
    hits = (ranked == labels[:, None]).any(axis=-1)
    return float(hits.mean())


def accuracy(preds, labels) -> float:
    preds = np.asarray(preds, dtype=int)
    labels = np.asarray(labels, dtype=int)
    return float((preds == labels).mean())


def confusion_matrix(preds, labels, num_classes: int) -> np.ndarray:
    """Row-normalized confusion: rows are truth, columns are predictions."""
    preds = np.asarray(preds, dtype=int)
    labels = np.asarray(labels, dtype=int)
    counts = np.zeros((num_classes, num_classes))
    for p, y in zip(preds, labels):
        counts[y, p] += 1.0
    sums = counts.sum(axis=-1, keepdims=True)
    return np.divide(counts, sums, out=np.zeros_like(counts), where=sums > 0)


@dataclass
class MetricsReport:
    subactivity: dict
    affordance: dict
    topk: dict[int, float]
    mean_loss: float
    subactivity_accuracy: float
    affordance_accuracy: float
    subactivity_confusion: list[list[float]]
    affordance_confusion: list[list[float]]
    num_videos: int
    num_objects: int

    def summary(self) -> dict:
        return {
            "loss": self.mean_loss,
            "subactivity_macro_f1": self.subactivity["macro_f1"],
            "affordance_macro_f1": self.affordance["macro_f1"],
            "subactivity_accuracy": self.subactivity_accuracy,
            "affordance_accuracy": self.affordance_accuracy,
        }

    def to_dict(self) -> dict:
        return {
            "subactivity": self.subactivity,
            "affordance": self.affordance,
            "topk": {str(k): v for k, v in self.topk.items()},
            "mean_loss": self.mean_loss,
            "subactivity_accuracy": self.subactivity_accuracy,
            "affordance_accuracy": self.affordance_accuracy,
            "subactivity_confusion": self.subactivity_confusion,
            "affordance_confusion": self.affordance_confusion,
            "num_videos": self.num_videos,
            "num_objects": self.num_objects,
        }
