"""Training objectives.

Contrastive terms operate on a batch of 2N unit-norm embeddings arranged so
the augmented counterpart of item i sits at index i XOR 1. For anchor i the
instance term contrasts the similarity to its counterpart against all 2N-1
others; the category term averages the same contrast over every other item
sharing i's label (labelled items only). Both share one denominator, the
sum of exp(sim/tau) over all n != i.

The clustering head is trained with a pairwise binary cross-entropy against
0/1 pseudo-labels, using the inner product of the two items' class
distributions as the match probability. A consistency term penalizes
squared differences between the class predictions of the two views, and the
joint objective blends the contrastive and consistency parts with an
epoch-dependent ramp weight.

All losses return scalar graph tensors: calling .backward() yields exact
gradients for every parameter feeding them.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import BatchError, ConfigError, DimensionError, NumericError, PreconditionError
from .numerics import Tensor, as_tensor

UNLABELLED = -1

BCE_CLAMP_EPS = 1e-7


@dataclass
class ModalitySelectors:
    """Which modality's embedding feeds each side of a contrastive pair."""

    g0: str = "visual"
    g1: str = "visual"

    def __post_init__(self):
        for name in (self.g0, self.g1):
            if name not in ("visual", "audio"):
                raise ConfigError(f"modality selector must be visual or audio, got {name!r}")


class ContrastiveBatch:
    """2N projected embeddings with view pairing i <-> i XOR 1.

    labels holds one entry per item, UNLABELLED for items without
    supervision; paired views must carry the same label. For multi-modal
    batches pass both z_visual and z_audio (same shape); single-modal
    batches carry only z_visual and any selector resolves to it.
    """

    def __init__(self, z_visual: Tensor, labels, tau: float, z_audio: Tensor | None = None):
        self.z_visual = as_tensor(z_visual)
        self.z_audio = as_tensor(z_audio) if z_audio is not None else None
        self.labels = np.asarray(labels, dtype=np.int64)
        self.tau = float(tau)
        n2 = self.z_visual.shape[0]
        if n2 < 2 or n2 % 2 != 0:
            raise BatchError(f"batch needs an even number >= 2 of items, got {n2}")
        if self.labels.shape != (n2,):
            raise BatchError(f"labels must have shape ({n2},), got {self.labels.shape}")
        if not np.array_equal(self.labels[0::2], self.labels[1::2]):
            raise BatchError("paired views must share a label")
        if self.tau <= 0:
            raise ConfigError(f"temperature must be positive, got {tau}")
        for z in (self.z_visual, self.z_audio):
            if z is None:
                continue
            if z.shape != self.z_visual.shape:
                raise BatchError("modalities must share one embedding shape")
            norms = np.sqrt((z.data * z.data).sum(axis=1))
            if np.any(np.abs(norms - 1.0) > 1e-6):
                raise BatchError("embedding rows must be unit-norm within 1e-6")

    @property
    def size(self) -> int:
        return self.z_visual.shape[0]

    def select(self, which: str) -> Tensor:
        # single-modal batches force every selector to the sole modality
        if self.z_audio is None:
            return self.z_visual
        return self.z_visual if which == "visual" else self.z_audio


def _nce_terms(batch: ContrastiveBatch, sel: ModalitySelectors) -> tuple[Tensor, Tensor]:
    """Instance and category contrastive losses sharing one denominator."""
    n2 = batch.size
    a = batch.select(sel.g0)
    b = batch.select(sel.g1)
    sims = a.matmul(b.T) * (1.0 / batch.tau)  # [2N, 2N]

    off_diag = 1.0 - np.eye(n2)
    # max over n != i, detached: the log-sum-exp value is shift-invariant
    masked = np.where(off_diag > 0, sims.data, -np.inf)
    row_max = masked.max(axis=1, keepdims=True)
    # push each diagonal entry well below its row max so its exp stays tiny
    # until the mask removes it (the raw diagonal may exceed the masked max)
    diag_adjust = np.diag(row_max.reshape(-1) - 50.0 - sims.data.diagonal())
    exps = (sims + diag_adjust - row_max).exp() * off_diag
    lse = exps.sum(axis=1).log() + row_max.reshape(-1)  # [2N]

    pair_idx = np.arange(n2) ^ 1
    pair_mask = np.zeros((n2, n2))
    pair_mask[np.arange(n2), pair_idx] = 1.0
    pair_scores = (sims * pair_mask).sum(axis=1)
    instance = (lse - pair_scores).mean()

    labels = batch.labels
    same = (labels[:, None] == labels[None, :]) & (labels[:, None] != UNLABELLED)
    q_mask = same.astype(np.float64) * off_diag
    q_counts = q_mask.sum(axis=1)
    active = (q_counts > 0).astype(np.float64)
    weights = q_mask / np.maximum(q_counts, 1.0)[:, None]
    category = ((lse - (sims * weights).sum(axis=1)) * active).mean()
    return instance, category


def nce_instance(batch: ContrastiveBatch, sel: ModalitySelectors | None = None) -> Tensor:
    """Instance discrimination: each item's sole positive is its other view."""
    instance, _ = _nce_terms(batch, sel or ModalitySelectors())
    return instance


def nce_category(batch: ContrastiveBatch, sel: ModalitySelectors | None = None) -> Tensor:
    """Category discrimination: same-label items are additional positives.

    Unlabelled items have no candidate set and contribute exactly zero; the
    outer mean still runs over all 2N items.
    """
    _, category = _nce_terms(batch, sel or ModalitySelectors())
    return category


def unified_cl(batch: ContrastiveBatch, sel: ModalitySelectors | None = None) -> Tensor:
    """Sum of the instance and category terms (identical denominators)."""
    instance, category = _nce_terms(batch, sel or ModalitySelectors())
    return instance + category


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-softmax of the true class, over the given rows."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(
            f"cross_entropy got logits {logits.shape} and labels {labels.shape}")
    n, c = logits.shape
    if n == 0:
        raise BatchError("cross_entropy needs at least one row")
    if labels.min() < 0 or labels.max() >= c:
        raise PreconditionError("class label out of range")
    row_max = logits.data.max(axis=1, keepdims=True)
    lse = (logits - row_max).exp().sum(axis=1).log() + row_max.reshape(-1)
    one_hot = np.zeros((n, c))
    one_hot[np.arange(n), labels] = 1.0
    true_scores = (logits * one_hot).sum(axis=1)
    return (lse - true_scores).mean()


def bce_pairwise(probs: Tensor, s: np.ndarray) -> Tensor:
    """Pairwise binary cross-entropy of inner-product match probabilities.

    probs rows are class distributions; p_ij = <p_i, p_j> clamped to
    [eps, 1-eps]. The mean runs over all M^2 ordered pairs, diagonal
    included.
    """
    probs = as_tensor(probs)
    s = np.asarray(s, dtype=np.float64)
    if probs.ndim != 2:
        raise DimensionError("bce_pairwise expects [M, C] probabilities")
    m = probs.shape[0]
    if s.shape != (m, m):
        raise DimensionError(f"pair labels must be [{m}, {m}], got {s.shape}")
    row_sums = probs.data.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > 1e-6) or np.any(probs.data < 0):
        raise PreconditionError("probability rows must be distributions")
    p = probs.matmul(probs.T).clamp(BCE_CLAMP_EPS, 1.0 - BCE_CLAMP_EPS)
    terms = s * p.log() + (1.0 - s) * (1.0 - p).log()
    return -terms.mean()


def mse_consistency(pred: Tensor, pred_other: Tensor) -> Tensor:
    """Mean squared difference between two sets of class predictions."""
    pred = as_tensor(pred)
    pred_other = as_tensor(pred_other)
    if pred.shape != pred_other.shape:
        raise DimensionError(
            f"prediction shapes differ: {pred.shape} vs {pred_other.shape}")
    diff = pred - pred_other
    return (diff * diff).mean()


@dataclass
class RampSchedule:
    """Epoch-dependent consistency weight lam * exp(-5 (1 - r/T)^2)."""

    lam: float
    total: float
    current: float

    def __post_init__(self):
        if self.lam <= 0:
            raise ConfigError(f"lambda must be positive, got {self.lam}")
        if self.total <= 0:
            raise ConfigError(f"total epochs must be positive, got {self.total}")


def ramp_weight(sched: RampSchedule) -> float:
    """Closed-form ramp value at the schedule's current epoch."""
    r = sched.current
    if r < 0 or r > sched.total:
        warnings.warn(f"ramp epoch {r} outside [0, {sched.total}], clamping")
        r = min(max(r, 0.0), sched.total)
    return sched.lam * math.exp(-5.0 * (1.0 - r / sched.total) ** 2)


def _check_component(value, name: str):
    if isinstance(value, Tensor):
        return  # tensor construction already guarantees finiteness
    if not math.isfinite(float(value)):
        raise NumericError(f"non-finite loss component {name}: {value}")


def joint_loss(ce, bce, cl, mse, sched: RampSchedule):
    """ce + bce + (1 - w) * cl + w * mse with w from the ramp schedule.

    Components may be floats or scalar graph tensors; the result follows.
    """
    for value, name in ((ce, "ce"), (bce, "bce"), (cl, "cl"), (mse, "mse")):
        _check_component(value, name)
    w = ramp_weight(sched)
    return ce + bce + (1.0 - w) * cl + w * mse
