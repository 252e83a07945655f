"""Threshold-stopped AHC, spectral clustering and threshold sweeps."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractError, NumericalError, ParameterError
from .similarity import SimilarityMatrix

log = logging.getLogger(__name__)


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    k: int
    threshold: float | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)

    def __len__(self):
        return len(self.labels)


def dense_labels(raw) -> np.ndarray:
    """Relabel to 0..k-1 in order of first appearance."""
    mapping: dict = {}
    return np.array([mapping.setdefault(r, len(mapping)) for r in raw], dtype=np.int64)


def _values(S) -> np.ndarray:
    v = S.values if isinstance(S, SimilarityMatrix) else np.asarray(S, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] != v.shape[1]:
        raise ContractError(f"similarity matrix must be square, got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ContractError("similarity matrix has non-finite entries")
    return v


def ahc(S, stop_threshold: float, linkage: str = "average") -> ClusterAssignment:
    """Greedy bottom-up merging of the most similar cluster pair.

    Merging stops once the best inter-cluster similarity is below
    `stop_threshold` or a single cluster is left. Ties go to the
    lexicographically smallest (i, j), where a cluster's index is its
    smallest member.
    """
    v = _values(S)
    n = len(v)
    if n and np.max(np.abs(v - v.T)) > 1e-6:
        raise ContractError("AHC needs a symmetric similarity matrix")
    if linkage not in ("average", "single", "complete"):
        raise ParameterError(f"unknown linkage {linkage!r}")
    if n == 0:
        return ClusterAssignment(np.zeros(0, dtype=np.int64), 0, stop_threshold)
    # average linkage keeps pairwise sums, so equal averages compare equal
    sim = v.astype(np.float64).copy()
    sizes = np.ones(n)
    active = np.ones(n, dtype=bool)
    owner = np.arange(n)
    upper = np.triu(np.ones((n, n), dtype=bool), 1)
    while active.sum() > 1:
        valid = upper & active[:, None] & active[None, :]
        link = sim / np.outer(sizes, sizes) if linkage == "average" else sim
        masked = np.where(valid, link, -np.inf)
        flat = int(np.argmax(masked))
        i, j = divmod(flat, n)
        best = masked[i, j]
        if not valid[i, j] or best < stop_threshold:
            break
        if linkage == "average":
            row = sim[i] + sim[j]
        elif linkage == "single":
            row = np.maximum(sim[i], sim[j])
        else:
            row = np.minimum(sim[i], sim[j])
        sim[i, :] = row
        sim[:, i] = row
        sizes[i] += sizes[j]
        active[j] = False
        owner[owner == j] = i
    labels = dense_labels(owner)
    return ClusterAssignment(labels, int(labels.max()) + 1, stop_threshold)


# ---------------------------------------------------------------------------
# symmetric eigensolver


def _round_robin(m: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """m-1 rounds of m/2 disjoint pairs covering every pair once (m even)."""
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        p = np.array([min(players[i], players[m - 1 - i]) for i in range(m // 2)])
        q = np.array([max(players[i], players[m - 1 - i]) for i in range(m // 2)])
        rounds.append((p, q))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def jacobi_eigh(A, tol: float = 1e-14, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a real symmetric matrix by cyclic Jacobi rotations.

    Rotations on disjoint index pairs commute, so each round of the
    round-robin ordering is applied as one vectorized update. Returns
    ascending eigenvalues and the matching orthonormal eigenvectors (columns).
    """
    A = np.array(A, dtype=np.float64)
    n = len(A)
    if A.shape != (n, n):
        raise ContractError("jacobi_eigh needs a square matrix")
    if n == 0:
        return np.zeros(0), np.zeros((0, 0))
    A = 0.5 * (A + A.T)
    m = n + (n % 2)
    if m != n:
        A = np.pad(A, ((0, 1), (0, 1)))
    V = np.eye(m)
    scale = np.linalg.norm(A)
    rounds = _round_robin(m)
    converged = scale == 0.0
    for _ in range(max_sweeps):
        if converged:
            break
        for p, q in rounds:
            apq = A[p, q]
            app, aqq = A[p, p], A[q, q]
            nz = np.abs(apq) > 1e-300
            theta = np.where(nz, (aqq - app) / (2.0 * np.where(nz, apq, 1.0)), 0.0)
            t = np.where(nz, np.sign(theta) / (np.abs(theta) + np.hypot(theta, 1.0)), 0.0)
            t = np.where(nz & (theta == 0), 1.0, t)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            Ap, Aq = A[p, :].copy(), A[q, :].copy()
            A[p, :] = c[:, None] * Ap - s[:, None] * Aq
            A[q, :] = s[:, None] * Ap + c[:, None] * Aq
            Ap, Aq = A[:, p].copy(), A[:, q].copy()
            A[:, p] = Ap * c - Aq * s
            A[:, q] = Ap * s + Aq * c
            A[p, q] = 0.0
            A[q, p] = 0.0
            Vp, Vq = V[:, p].copy(), V[:, q].copy()
            V[:, p] = Vp * c - Vq * s
            V[:, q] = Vp * s + Vq * c
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        converged = off <= tol * scale
    if not converged:
        raise NumericalError(f"Jacobi eigensolver did not converge in {max_sweeps} sweeps")
    evals = np.diag(A)[:n].copy()
    # a padded dummy index only meets zero off-diagonals, so it never rotates
    V = V[:n, :n]
    order = np.argsort(evals, kind="stable")
    return evals[order], V[:, order]


# ---------------------------------------------------------------------------
# spectral clustering


@dataclass
class Laplacian:
    degrees: np.ndarray
    laplacian: np.ndarray  # L = D - A
    symmetric: np.ndarray  # D^-1/2 L D^-1/2


def laplacian(S, threshold: float | None = None) -> Laplacian:
    A = _values(S).copy()
    np.fill_diagonal(A, 0.0)
    if threshold is not None:
        A[A < threshold] = 0.0
    if np.any(A < 0):
        raise ContractError("spectral clustering needs non-negative similarities")
    deg = A.sum(axis=1)
    low = deg < 1e-10
    if low.any():
        log.warning("spectral clustering: %d isolated node(s); degree floored at 1e-10", int(low.sum()))
        deg = np.where(low, 1e-10, deg)
    L = np.diag(deg) - A
    inv_sqrt = 1.0 / np.sqrt(deg)
    Lsym = inv_sqrt[:, None] * L * inv_sqrt[None, :]
    return Laplacian(deg, L, 0.5 * (Lsym + Lsym.T))


def eigengap_k(evals: np.ndarray, max_k: int = 10) -> int:
    m = min(len(evals), max_k)
    if m < 2:
        return 1
    return int(np.argmax(np.diff(evals[:m]))) + 1


def kmeans(X, k: int, restarts: int = 10, seed: int = 0, max_iter: int = 300) -> tuple[np.ndarray, float]:
    """Lloyd's algorithm with k-means++ seeding; best of `restarts` by inertia."""
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    if not 1 <= k <= n:
        raise ParameterError(f"k={k} must be in [1, {n}]")
    rng = np.random.default_rng(seed)
    best_labels, best_inertia = None, np.inf
    for _ in range(max(1, restarts)):
        centers = [X[rng.integers(n)]]
        d2 = ((X - centers[0]) ** 2).sum(axis=1)
        for _ in range(1, k):
            total = d2.sum()
            idx = int(rng.choice(n, p=d2 / total)) if total > 0 else int(rng.integers(n))
            centers.append(X[idx])
            d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
        C = np.array(centers)
        labels = None
        for _ in range(max_iter):
            dist = ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
            new = dist.argmin(axis=1)
            if labels is not None and np.array_equal(new, labels):
                break
            labels = new
            for c in range(k):
                members = labels == c
                if members.any():
                    C[c] = X[members].mean(axis=0)
                else:
                    far = int(dist[np.arange(n), labels].argmax())
                    C[c] = X[far]
        inertia = float(((X - C[labels]) ** 2).sum())
        if inertia < best_inertia - 1e-12:
            best_labels, best_inertia = labels.copy(), inertia
    return best_labels, best_inertia


def spectral_cluster(
    S,
    k: int | None = None,
    kmeans_restarts: int = 10,
    seed: int = 0,
    threshold: float | None = None,
    max_k: int = 10,
    solver: str = "jacobi",
) -> ClusterAssignment:
    """Spectral clustering with the random-walk normalized Laplacian D^-1 (D - S).

    The eigenpairs come from the symmetric similar matrix D^-1/2 L D^-1/2 and
    are mapped back through D^-1/2. Entries below `threshold` are cut from the
    graph first. Without `k`, the largest eigengap among the first `max_k`
    eigenvalues picks the cluster count.
    """
    v = _values(S)
    n = len(v)
    if n < 2:
        raise ContractError("spectral clustering needs n >= 2")
    if np.max(np.abs(v - v.T)) > 1e-6:
        raise ContractError("spectral clustering needs a symmetric matrix")
    lap = laplacian(v, threshold)
    if solver == "jacobi":
        evals, U = jacobi_eigh(lap.symmetric)
    elif solver == "lapack":
        evals, U = np.linalg.eigh(lap.symmetric)
    else:
        raise ParameterError(f"unknown eigensolver {solver!r}")
    if k is None:
        k = eigengap_k(evals, max_k)
    if not 1 <= k <= n:
        raise ParameterError(f"k={k} must be in [1, {n}]")
    P = U[:, :k] / np.sqrt(lap.degrees)[:, None]
    labels, _ = kmeans(P, k, kmeans_restarts, seed)
    labels = dense_labels(labels)
    return ClusterAssignment(labels, int(labels.max()) + 1, threshold)


def cluster(S, method: str, threshold: float | None, **kw) -> ClusterAssignment:
    if method == "ahc":
        return ahc(S, threshold, **kw)
    if method in ("sc", "spectral"):
        return spectral_cluster(S, threshold=threshold, **kw)
    raise ParameterError(f"unknown clustering method {method!r}")


def threshold_grid(lo: float, hi: float, step: float) -> list[float]:
    if not step > 0 or hi < lo:
        raise ParameterError(f"empty threshold range [{lo}, {hi}] with step {step}")
    count = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return [round(lo + i * step, 10) for i in range(count)]


@dataclass
class SweepResult:
    best_threshold: float
    best_der: float
    table: list[tuple[float, float]]


def sweep_thresholds(
    items: Sequence[tuple],
    method: str,
    lo: float,
    hi: float,
    step: float,
    collar: float = 0.25,
    **cluster_kw,
) -> SweepResult:
    """Pooled DER at every threshold in [lo, hi]; argmin with ties to the smallest threshold.

    `items` holds ``(similarity, segments, reference)`` triples, one per
    recording. A single triple is accepted as well.
    """
    from .der import compute_der, pool_reports
    from .vad import segments_to_annotation

    if items and isinstance(items[0], (SimilarityMatrix, np.ndarray)):
        items = [tuple(items)]
    grid = threshold_grid(lo, hi, step)
    table = []
    for thr in grid:
        reports = []
        for S, segments, ref in items:
            assign = cluster(S, method, thr, **cluster_kw)
            hyp = segments_to_annotation(segments, [f"c{l}" for l in assign.labels], ref.recording_id)
            reports.append(compute_der(ref, hyp, collar))
        table.append((thr, pool_reports(reports).der_percent))
    best_thr, best_der = min(table, key=lambda r: (r[1], r[0]))
    return SweepResult(best_thr, best_der, table)
