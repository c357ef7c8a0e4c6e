"""Semi-supervised k-means, class-count estimation and matching-based accuracy.

Known classes get centroids pinned to their labeled samples for the whole
optimization; novel centroids are seeded by k-means++ with the known
centroids taking part in the distance computation, which pushes novel seeds
away from already-covered regions. Cluster-to-class matching for accuracy
uses the Hungarian algorithm on co-occurrence counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import StateError
from .nn import rng_for


@dataclass
class CentroidEntry:
    centroid: np.ndarray
    class_id: int
    task_id: int
    kind: str              # "known" | "novel"


@dataclass
class CentroidStore:
    """Per-class centroids with identity metadata; the NCC classifier's memory."""

    entries: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def matrix(self) -> np.ndarray:
        if not self.entries:
            raise StateError("centroid store is empty")
        return np.vstack([e.centroid for e in self.entries])

    def class_ids(self) -> np.ndarray:
        return np.asarray([e.class_id for e in self.entries])

    def copy(self) -> "CentroidStore":
        return CentroidStore([CentroidEntry(e.centroid.copy(), e.class_id, e.task_id, e.kind)
                              for e in self.entries])


@dataclass
class KMeansResult:
    centroids: np.ndarray          # known classes first, then novel clusters
    assignment: np.ndarray         # cluster index per unlabeled point
    labeled_assignment: np.ndarray
    inertia: float
    iterations: int
    n_known: int
    known_class_ids: list
    inertia_history: list = field(default_factory=list)


def _sq_dists(points, centers):
    return ((points[:, None, :] - centers[None, :, :]) ** 2).sum(-1)


def init_known_centroids(labeled):
    """Mean embedding per known class; returns (centroids, sorted class ids)."""
    feats, labels = labeled
    feats = np.asarray(feats, dtype=np.float64)
    labels = np.asarray(labels)
    if len(feats) != len(labels):
        raise ValueError("features and labels length mismatch")
    class_ids = sorted(np.unique(labels).tolist())
    if not class_ids:
        raise StateError("no labeled samples to initialize known centroids")
    cents = np.vstack([feats[labels == c].mean(axis=0) for c in class_ids])
    return cents, class_ids


def kmeanspp_init(unlabeled: np.ndarray, k: int, seed, fixed: Optional[np.ndarray] = None,
                  n_candidates: Optional[int] = None) -> np.ndarray:
    """Greedy k-means++ seeding over unlabeled points.

    Candidate points are sampled with probability proportional to the squared
    distance to the nearest existing center (fixed known centroids included),
    and the candidate that shrinks the total potential most wins; this is the
    standard greedy variant and is what keeps far small clusters reliably
    covered. n_candidates=1 recovers plain D^2 sampling.
    """
    X = np.asarray(unlabeled, dtype=np.float64)
    if k < 0:
        raise ValueError("k must be non-negative")
    if k == 0:
        return np.zeros((0, X.shape[1] if X.ndim == 2 else 0))
    if k > len(X):
        raise ValueError(f"requested {k} seeds from {len(X)} points")
    rng = seed if isinstance(seed, np.random.Generator) else rng_for(seed, "kmeanspp")
    if n_candidates is None:
        n_candidates = max(10, 2 + int(np.ceil(np.log2(k + 1))))

    if fixed is not None and len(fixed):
        d2 = _sq_dists(X, np.asarray(fixed)).min(axis=1)
    else:
        d2 = None
    chosen = []
    for _ in range(k):
        if d2 is None:
            idx = int(rng.integers(len(X)))   # nothing to measure against yet
            d2 = _sq_dists(X, X[idx][None]).min(axis=1)
        else:
            total = d2.sum()
            if total <= 0.0:
                remaining = [i for i in range(len(X)) if i not in set(chosen)]
                idx = int(remaining[rng.integers(len(remaining))])
                d2 = np.minimum(d2, _sq_dists(X, X[idx][None]).min(axis=1))
            else:
                cand = rng.choice(len(X), size=n_candidates, p=d2 / total)
                pots = [np.minimum(d2, ((X - X[c]) ** 2).sum(1)).sum() for c in cand]
                idx = int(cand[int(np.argmin(pots))])
                d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(1))
        chosen.append(idx)
    return X[chosen].copy()


def ss_kmeans(labeled, unlabeled, k_novel: int, max_iter: int = 200, tol: float = 1e-6,
              seed: int = 0, n_init: int = 10) -> KMeansResult:
    """Semi-supervised k-means with pinned labeled points.

    Labeled points are force-assigned to their class's cluster at every step;
    unlabeled points go to the nearest of all centroids. Runs n_init seeded
    novel initializations and keeps the lowest-inertia solution.
    """
    X_u = np.asarray(unlabeled, dtype=np.float64) if unlabeled is not None else np.zeros((0, 0))
    if labeled is not None and len(labeled[0]):
        known_cents, known_ids = init_known_centroids(labeled)
        feats, labels = np.asarray(labeled[0], dtype=np.float64), np.asarray(labeled[1])
    else:
        known_cents, known_ids = np.zeros((0, X_u.shape[1])), []
        feats = np.zeros((0, X_u.shape[1]))
        labels = np.zeros(0, dtype=int)
    if k_novel < 0:
        raise ValueError("k_novel must be non-negative")
    if k_novel > len(X_u):
        raise ValueError(f"k_novel={k_novel} exceeds {len(X_u)} unlabeled points")
    n_known = len(known_ids)
    if n_known + k_novel == 0:
        raise ValueError("no clusters requested")

    pinned_counts = np.array([(labels == c).sum() for c in known_ids], dtype=float)
    pinned_sums = [feats[labels == c].sum(axis=0) for c in known_ids]
    labeled_assign = np.asarray([known_ids.index(y) for y in labels], dtype=int)

    def run(attempt_seed, candidates):
        novel_init = kmeanspp_init(X_u, k_novel, attempt_seed,
                                   fixed=known_cents if n_known else None,
                                   n_candidates=candidates)
        centers = np.vstack([known_cents, novel_init]) if k_novel else known_cents.copy()
        k = len(centers)
        assign = np.zeros(len(X_u), dtype=int)
        history = []
        it = 0
        for it in range(1, max_iter + 1):
            if len(X_u):
                d2 = _sq_dists(X_u, centers)
                assign = d2.argmin(axis=1)
                point_d2 = d2[np.arange(len(X_u)), assign]
                inertia = float(point_d2.sum())
            else:
                point_d2 = np.zeros(0)
                inertia = 0.0
            for c, cid in enumerate(known_ids):
                member = feats[labels == cid]
                inertia += float(((member - centers[c]) ** 2).sum())
            history.append(inertia)

            new_centers = centers.copy()
            for c in range(k):
                total = pinned_counts[c] if c < n_known else 0.0
                vec = pinned_sums[c].copy() if c < n_known else np.zeros(centers.shape[1])
                members = assign == c
                if len(X_u) and members.any():
                    total += members.sum()
                    vec += X_u[members].sum(axis=0)
                if total > 0:
                    new_centers[c] = vec / total
                elif len(X_u):
                    new_centers[c] = X_u[int(np.argmax(point_d2))]
            shift = np.max(np.linalg.norm(new_centers - centers, axis=1))
            centers = new_centers
            if shift < tol:
                break
        # final inertia under the final centroids
        final = 0.0
        if len(X_u):
            d2 = _sq_dists(X_u, centers)
            assign = d2.argmin(axis=1)
            final = float(d2[np.arange(len(X_u)), assign].sum())
        for c, cid in enumerate(known_ids):
            member = feats[labels == cid]
            final += float(((member - centers[c]) ** 2).sum())
        history.append(final)
        return final, centers, assign, it, history

    best = None
    attempts = max(1, n_init if k_novel > 0 else 1)
    for a in range(attempts):
        # greedy seeding covers far clusters reliably but is nearly
        # deterministic; later restarts use plain D^2 draws for diversity
        outcome = run(rng_for(seed, "ss_kmeans", a), None if a == 0 else 1)
        if best is None or outcome[0] < best[0] - 1e-12:
            best = outcome
    inertia, centers, assign, iters, history = best
    return KMeansResult(centroids=centers, assignment=assign,
                        labeled_assignment=labeled_assign, inertia=inertia,
                        iterations=iters, n_known=n_known,
                        known_class_ids=list(known_ids), inertia_history=history)


def hungarian(cost: np.ndarray):
    """Minimum-cost perfect matching; rectangular inputs get zero-cost padding.

    Returns (assignment, total_cost) where assignment[i] is the column given
    to row i of the padded square matrix.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost must be a matrix")
    if not np.all(np.isfinite(cost)):
        raise ValueError("costs must be finite")
    n = max(cost.shape)
    padded = np.zeros((n, n))
    padded[: cost.shape[0], : cost.shape[1]] = cost
    rows, cols = linear_sum_assignment(padded)
    assignment = np.empty(n, dtype=int)
    assignment[rows] = cols
    real = (rows < cost.shape[0]) & (cols < cost.shape[1])
    total = float(cost[rows[real], cols[real]].sum())
    return assignment, total


def cluster_accuracy(pred_clusters, true_labels, fixed: Optional[dict] = None) -> float:
    """Fraction of samples whose matched class equals the true label.

    Clusters listed in ``fixed`` keep their class identity; the remaining
    clusters are matched one-to-one to the remaining classes by maximizing
    co-occurrence counts.
    """
    preds = np.asarray(pred_clusters)
    truth = np.asarray(true_labels)
    if len(preds) != len(truth):
        raise ValueError("length mismatch")
    if len(preds) == 0:
        return 0.0
    fixed = dict(fixed or {})
    if len(set(fixed.values())) != len(fixed):
        raise ValueError("fixed clusters must map to distinct classes")

    correct = 0
    for cluster, cls in fixed.items():
        correct += int(((preds == cluster) & (truth == cls)).sum())

    free_clusters = sorted(set(preds.tolist()) - set(fixed))
    free_classes = sorted(set(truth.tolist()) - set(fixed.values()))
    if free_clusters and free_classes:
        counts = np.zeros((len(free_clusters), len(free_classes)))
        for i, cl in enumerate(free_clusters):
            for j, cs in enumerate(free_classes):
                counts[i, j] = ((preds == cl) & (truth == cs)).sum()
        rows, cols = linear_sum_assignment(counts, maximize=True)
        correct += int(counts[rows, cols].sum())
    return correct / len(preds)


def estimate_class_count(task, encoder: Optional[Callable], k_min: int, k_max: int,
                         seed: int, n_init: int = 4, inertia_margin: float = 0.1) -> int:
    """Pick the cluster count that best explains held-out labeled data.

    For each candidate k, half of the labeled samples (stratified, seeded)
    keep their labels and pin known centroids; the other half joins the
    unlabeled pool with labels hidden, and clustering accuracy is measured
    on it. The best-accuracy k wins. Accuracy saturates on well-separated
    data, so exact ties are resolved by discarding tied candidates whose
    inertia exceeds the best tied inertia by more than inertia_margin
    (merged clusters leave a large inertia footprint), then taking the
    smallest k.
    """
    labels = np.asarray(task.labeled_y)
    class_ids = np.unique(labels)
    n_known = len(class_ids)
    if k_min > k_max:
        raise ValueError("empty candidate range")
    if k_min < n_known:
        raise ValueError(f"k_min={k_min} below the {n_known} known classes")

    rng = rng_for(seed, "elbow_split")
    visible_idx, hidden_idx = [], []
    for cid in class_ids:
        rows = np.flatnonzero(labels == cid)
        rows = rows[rng.permutation(len(rows))]
        half = max(1, int(np.ceil(len(rows) / 2)))
        visible_idx.extend(rows[:half])
        hidden_idx.extend(rows[half:])
    visible_idx = np.asarray(sorted(visible_idx))
    hidden_idx = np.asarray(sorted(hidden_idx))

    embed = encoder if encoder is not None else (lambda x: x)
    vis_x = embed(task.labeled_x[visible_idx])
    vis_y = labels[visible_idx]
    hid_x = embed(task.labeled_x[hidden_idx]) if len(hidden_idx) else np.zeros((0, vis_x.shape[1]))
    hid_y = labels[hidden_idx]
    pool = np.vstack([hid_x, embed(task.unlabeled_x)]) if len(task.unlabeled_x) \
        else hid_x

    scores = []
    for k in range(k_min, k_max + 1):
        child_seed = int(rng_for(seed, "elbow", k).integers(2 ** 63))
        res = ss_kmeans((vis_x, vis_y), pool, k_novel=k - n_known,
                        seed=child_seed, n_init=n_init)
        fixed = {i: cid for i, cid in enumerate(res.known_class_ids)}
        acc = cluster_accuracy(res.assignment[: len(hidden_idx)], hid_y, fixed) \
            if len(hidden_idx) else 0.0
        scores.append((k, acc, res.inertia))

    best_acc = max(acc for _, acc, _ in scores)
    tied = [(k, inertia) for k, acc, inertia in scores if acc == best_acc]
    floor = min(inertia for _, inertia in tied)
    allowed = [k for k, inertia in tied if inertia <= floor * (1.0 + inertia_margin) + 1e-12]
    return min(allowed)
