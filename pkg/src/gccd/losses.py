"""Representation-learning objectives and their analytic gradients.

Contrastive terms (unsupervised and supervised) share one NT-Xent core over
cross-view cosine similarities; pseudo-labeling losses run through cosine
softmax against a trainable prototype bank; distillation is a mean squared
distance between projected and frozen embeddings. Every training-path loss
has a ``*_grad`` variant returning exact gradients, verified against central
finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, StateError
from .nn import l2_normalize, l2_normalize_grad

PROB_EPS = 1e-300   # guards log(0) on exactly one-hot rows


@dataclass
class LossConfig:
    """Temperatures and mixing weights for the phase-1 objective.

    tau drives both contrastive losses; tau_s / tau_t are the student and
    (sharper) teacher temperatures of the prototype soft labels; epsilon
    weighs the mean-entropy regularizer; alpha trades distillation against
    the rest and beta trades supervised against self-supervised terms.
    """

    tau: float = 0.07
    tau_s: float = 0.1
    tau_t: float = 0.05
    epsilon: float = 1.0
    alpha: float = 0.5
    beta: float = 0.35

    def __post_init__(self):
        if min(self.tau, self.tau_s, self.tau_t) <= 0:
            raise ValueError("temperatures must be positive")
        if self.tau_t >= self.tau_s:
            raise ValueError("teacher temperature must be sharper (smaller) than student")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise ValueError("alpha and beta must lie in [0, 1]")


@dataclass
class PrototypeBank:
    """Trainable class vectors used for cosine-similarity soft labeling."""

    prototypes: np.ndarray
    trainable: bool = True

    def __post_init__(self):
        self.prototypes = np.asarray(self.prototypes, dtype=np.float64)
        if self.prototypes.ndim != 2:
            raise DimensionError("prototype bank must be (K, d)")
        if not np.all(np.isfinite(self.prototypes)):
            raise ValueError("prototypes must be finite")

    @property
    def size(self) -> int:
        return self.prototypes.shape[0]

    @property
    def dim(self) -> int:
        return self.prototypes.shape[1]

    @classmethod
    def empty(cls, dim: int) -> "PrototypeBank":
        return cls(np.zeros((0, dim)))

    def add_classes(self, n: int, rng: np.random.Generator) -> None:
        """Append n randomly initialized unit rows."""
        rows = l2_normalize(rng.normal(size=(n, self.dim)))
        self.prototypes = np.vstack([self.prototypes, rows])


@dataclass
class ViewPair:
    """Two augmented views of one batch; labels cover the rows when present."""

    h: np.ndarray
    h_prime: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=np.float64)
        self.h_prime = np.asarray(self.h_prime, dtype=np.float64)
        if self.h.shape != self.h_prime.shape:
            raise DimensionError("views must have identical shape")
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if len(self.labels) != self.h.shape[0]:
                raise DimensionError("labels length must equal batch size")


# ---------------------------------------------------------------------------
# contrastive core
# ---------------------------------------------------------------------------

def _nt_xent(h, h_prime, tau, positive_sets):
    """Shared NT-Xent machinery over cross-view cosine similarities.

    For anchor i the loss is the average over its positive set Q_i of
    -log softmax(S_i)_q with S_in = cos(h_i, h'_n)/tau; the denominator runs
    over the full cross-view set including the positive. Returns
    (loss, d_h, d_h_prime) with gradients through the normalization.
    """
    m = h.shape[0]
    u = l2_normalize(h)
    v = l2_normalize(h_prime)
    s = u @ v.T / tau
    s_max = s.max(axis=1, keepdims=True)
    exp_s = np.exp(s - s_max)
    lse = np.log(exp_s.sum(axis=1)) + s_max[:, 0]
    p = exp_s / exp_s.sum(axis=1, keepdims=True)

    target = np.zeros_like(s)
    loss = 0.0
    for i, q in enumerate(positive_sets):
        target[i, q] = 1.0 / len(q)
        loss += lse[i] - s[i, q].mean()
    loss /= m

    d_s = (p - target) / m
    d_u = d_s @ v / tau
    d_v = d_s.T @ u / tau
    return loss, l2_normalize_grad(h, d_u), l2_normalize_grad(h_prime, d_v)


def simclr_loss_grad(views: ViewPair, tau: float):
    """Unsupervised contrastive loss; the sole positive is the same-index view."""
    if views.h.shape[0] < 2:
        raise ValueError("contrastive loss needs a batch of at least 2")
    positives = [[i] for i in range(views.h.shape[0])]
    return _nt_xent(views.h, views.h_prime, tau, positives)


def simclr_loss(views: ViewPair, tau: float) -> float:
    return simclr_loss_grad(views, tau)[0]


def supcon_loss_grad(views: ViewPair, tau: float):
    """Supervised contrastive loss over all same-label cross-view pairs.

    Anchors whose label appears only once fall back to their own-view
    positive so small labeled batches stay usable.
    """
    if views.labels is None:
        raise ValueError("supervised contrastive loss requires labels")
    labels = views.labels
    positives = []
    for i in range(len(labels)):
        q = [j for j in range(len(labels)) if j != i and labels[j] == labels[i]]
        positives.append(q if q else [i])
    return _nt_xent(views.h, views.h_prime, tau, positives)


def supcon_loss(views: ViewPair, tau: float) -> float:
    return supcon_loss_grad(views, tau)[0]


# ---------------------------------------------------------------------------
# prototype soft labeling
# ---------------------------------------------------------------------------

def _proto_logits(z, protos, temperature):
    u = l2_normalize(z)
    w = l2_normalize(protos)
    return u @ w.T / temperature


def _softmax(logits):
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def proto_soft_assign(z: np.ndarray, bank: PrototypeBank, temperature: float) -> np.ndarray:
    """Row-stochastic soft assignment of embeddings to prototypes by cosine similarity."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if bank.size == 0:
        raise StateError("prototype bank is empty")
    return _softmax(_proto_logits(np.asarray(z, dtype=np.float64), bank.prototypes, temperature))


def _proto_logits_backward(z, protos, temperature, d_logits):
    """Chain d(loss)/d(logits) back to raw embeddings and prototypes."""
    u = l2_normalize(z)
    w = l2_normalize(protos)
    d_u = d_logits @ w / temperature
    d_w = d_logits.T @ u / temperature
    return l2_normalize_grad(z, d_u), l2_normalize_grad(protos, d_w)


def pseudo_loss(student_probs: np.ndarray, teacher_probs: np.ndarray, epsilon: float) -> float:
    """Mean soft-label cross-entropy minus epsilon times the entropy of the mean prediction.

    Teacher rows are constants; students should stack every view so the mean
    prediction covers both.
    """
    p = np.asarray(student_probs, dtype=np.float64)
    q = np.asarray(teacher_probs, dtype=np.float64)
    if p.shape != q.shape:
        raise DimensionError(f"student {p.shape} vs teacher {q.shape}")
    ce = -(q * np.log(p + PROB_EPS)).sum(axis=1).mean()
    p_bar = p.mean(axis=0)
    entropy = -(p_bar * np.log(p_bar + PROB_EPS)).sum()
    return ce - epsilon * entropy


def proto_teachers(z: np.ndarray, z_prime: np.ndarray, bank: PrototypeBank,
                   cfg: LossConfig):
    """Sharp-temperature pseudo-labels for each view, produced by the other view."""
    t1 = _softmax(_proto_logits(z_prime, bank.prototypes, cfg.tau_t))
    t2 = _softmax(_proto_logits(z, bank.prototypes, cfg.tau_t))
    return t1, t2


def pseudo_loss_grad(z: np.ndarray, z_prime: np.ndarray, bank: PrototypeBank,
                     cfg: LossConfig, teachers=None):
    """Self-distillation loss on embeddings; both views act as students.

    Teachers come from the opposite view at the sharper temperature and are
    treated as constants; pass them explicitly to hold them fixed (this is
    what a finite-difference check must do). Returns
    (loss, d_z, d_z_prime, d_prototypes).
    """
    if bank.size == 0:
        raise StateError("prototype bank is empty")
    protos = bank.prototypes
    logits1 = _proto_logits(z, protos, cfg.tau_s)
    logits2 = _proto_logits(z_prime, protos, cfg.tau_s)
    p1, p2 = _softmax(logits1), _softmax(logits2)
    teachers1, teachers2 = teachers if teachers is not None else proto_teachers(z, z_prime, bank, cfg)

    students = np.vstack([p1, p2])
    teachers = np.vstack([teachers1, teachers2])
    loss = pseudo_loss(students, teachers, cfg.epsilon)

    m = students.shape[0]
    p_bar = students.mean(axis=0)
    log_bar = np.log(p_bar + PROB_EPS)
    d_logits = (students - teachers) / m
    d_logits += cfg.epsilon / m * students * (log_bar - (students * log_bar).sum(axis=1, keepdims=True))

    d_z, d_protos1 = _proto_logits_backward(z, protos, cfg.tau_s, d_logits[: len(z)])
    d_zp, d_protos2 = _proto_logits_backward(z_prime, protos, cfg.tau_s, d_logits[len(z):])
    return loss, d_z, d_zp, d_protos1 + d_protos2


def ce_loss(student_probs: np.ndarray, labels: Sequence[int]) -> float:
    """Mean negative log-probability of the true class."""
    p = np.asarray(student_probs, dtype=np.float64)
    labels = np.asarray(labels)
    if np.any(labels < 0) or np.any(labels >= p.shape[1]):
        raise ValueError("label outside [0, K)")
    return float(-np.log(p[np.arange(len(labels)), labels] + PROB_EPS).mean())


def ce_loss_grad(z: np.ndarray, z_prime: np.ndarray, labels: Sequence[int],
                 bank: PrototypeBank, cfg: LossConfig):
    """Hard-label cross-entropy on prototype soft assignments, averaged over views.

    Returns (loss, d_z, d_z_prime, d_prototypes).
    """
    if bank.size == 0:
        raise StateError("prototype bank is empty")
    labels = np.asarray(labels)
    protos = bank.prototypes
    logits1 = _proto_logits(z, protos, cfg.tau_s)
    logits2 = _proto_logits(z_prime, protos, cfg.tau_s)
    p = np.vstack([_softmax(logits1), _softmax(logits2)])
    lab2 = np.concatenate([labels, labels])
    loss = ce_loss(p, lab2)

    m = p.shape[0]
    d_logits = p.copy()
    d_logits[np.arange(m), lab2] -= 1.0
    d_logits /= m
    d_z, d_protos1 = _proto_logits_backward(z, protos, cfg.tau_s, d_logits[: len(z)])
    d_zp, d_protos2 = _proto_logits_backward(z_prime, protos, cfg.tau_s, d_logits[len(z):])
    return loss, d_z, d_zp, d_protos1 + d_protos2


# ---------------------------------------------------------------------------
# distillation and composition
# ---------------------------------------------------------------------------

def kd_loss(projected: np.ndarray, frozen: np.ndarray) -> float:
    """Mean squared Euclidean distance between projected and frozen embeddings."""
    projected = np.asarray(projected, dtype=np.float64)
    frozen = np.asarray(frozen, dtype=np.float64)
    if projected.shape != frozen.shape:
        raise DimensionError(f"projected {projected.shape} vs frozen {frozen.shape}")
    return float(((projected - frozen) ** 2).sum(axis=1).mean())


def kd_loss_grad(projected: np.ndarray, frozen: np.ndarray):
    loss = kd_loss(projected, frozen)
    d_proj = 2.0 * (np.asarray(projected) - np.asarray(frozen)) / projected.shape[0]
    return loss, d_proj


def total_loss(ssl: float, sl: float, kd: float, cfg: LossConfig) -> float:
    """Weighted phase-1 objective: (1-a)((1-b) ssl + b sl) + a kd."""
    return (1.0 - cfg.alpha) * ((1.0 - cfg.beta) * ssl + cfg.beta * sl) + cfg.alpha * kd
