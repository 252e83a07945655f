"""LDA + two-covariance PLDA scoring with logistic normalization."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import ContractError, DataError, FormatError, NumericalError
from .similarity import SimilarityMatrix

log = logging.getLogger(__name__)

LOGISTIC_SLOPE = 5.0


def _group(X, labels):
    labels = np.asarray(labels)
    classes = list(dict.fromkeys(labels.tolist()))
    return classes, [X[labels == c] for c in classes]


@dataclass
class LdaModel:
    mean: np.ndarray
    projection: np.ndarray  # (out_dim, in_dim)

    @property
    def out_dim(self) -> int:
        return self.projection.shape[0]

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) @ self.projection.T


def fit_lda(X, labels, out_dim: int, ridge: float = 1e-6) -> LdaModel:
    """Fisher LDA; the projected features have (near) identity within-class covariance."""
    X = np.asarray(X, dtype=np.float64)
    classes, groups = _group(X, labels)
    if out_dim < 1 or out_dim > len(classes) - 1:
        raise ContractError(f"LDA out_dim {out_dim} must be in [1, classes-1={len(classes) - 1}]")
    if out_dim > X.shape[1]:
        raise ContractError(f"LDA out_dim {out_dim} exceeds input dim {X.shape[1]}")
    small = [c for c, g in zip(classes, groups) if len(g) < 2]
    if small:
        raise ContractError(f"LDA needs >= 2 samples per class; too few for {small[:5]}")
    mean = X.mean(axis=0)
    N, d = X.shape
    Sw = np.zeros((d, d))
    Sb = np.zeros((d, d))
    for g in groups:
        m = g.mean(axis=0)
        c = g - m
        Sw += c.T @ c
        dm = (m - mean)[:, None]
        Sb += len(g) * (dm @ dm.T)
    Sw /= N
    Sb /= N
    Sw_reg = Sw + ridge * np.trace(Sw) / d * np.eye(d)
    try:
        evals, evecs = scipy.linalg.eigh(Sb, Sw_reg)
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"LDA generalized eigenproblem failed: {e}") from None
    top = np.argsort(evals)[::-1][:out_dim]
    V = evecs[:, top]
    # deterministic sign: largest-magnitude entry of each direction positive
    signs = np.sign(V[np.abs(V).argmax(axis=0), np.arange(V.shape[1])])
    V = V * np.where(signs == 0, 1.0, signs)
    return LdaModel(mean, V.T.copy())


@dataclass
class PldaModel:
    mean: np.ndarray
    between: np.ndarray
    within: np.ndarray

    def __post_init__(self):
        self._prepare()

    @property
    def dim(self) -> int:
        return len(self.mean)

    def _prepare(self):
        d = self.dim
        B, W = self.between, self.within
        tot = B + W
        same = np.block([[tot, B], [B, tot]])
        try:
            same_inv = np.linalg.inv(same)
            tot_inv = np.linalg.inv(tot)
        except np.linalg.LinAlgError as e:
            raise NumericalError(f"singular PLDA covariance: {e}") from None
        A, G = same_inv[:d, :d], same_inv[:d, d:]
        self._Q = 0.5 * ((A - tot_inv) + (A - tot_inv).T)
        self._P = 0.5 * (G + G.T)
        ld_same = np.linalg.slogdet(same)[1]
        ld_tot = np.linalg.slogdet(tot)[1]
        self._const = -0.5 * (ld_same - 2.0 * ld_tot)


def fit_plda(X, labels, ridge: float = 1e-6) -> PldaModel:
    """Closed-form two-covariance estimate (no EM).

    Within-class covariance is the pooled unbiased scatter; between-class is
    the covariance of class means minus the part explained by within-class
    noise, clipped to PSD.
    """
    X = np.asarray(X, dtype=np.float64)
    classes, groups = _group(X, labels)
    kept = []
    for c, g in zip(classes, groups):
        if len(g) < 2:
            log.warning("PLDA: dropping class %s with a single sample", c)
        else:
            kept.append(g)
    if len(kept) < 2:
        raise DataError("PLDA needs >= 2 classes with >= 2 samples each")
    allx = np.vstack(kept)
    d = allx.shape[1]
    mu = allx.mean(axis=0)
    sizes = np.array([len(g) for g in kept], dtype=np.float64)
    means = np.array([g.mean(axis=0) for g in kept])
    W = np.zeros((d, d))
    for g, m in zip(kept, means):
        c = g - m
        W += c.T @ c
    W /= len(allx) - len(kept)
    W = 0.5 * (W + W.T) + ridge * np.trace(W) / d * np.eye(d)
    cm = means - means.mean(axis=0)
    mean_cov = cm.T @ cm / (len(kept) - 1)
    # E[cov of class means] = B + mean(1/n_c) W
    B = mean_cov - np.mean(1.0 / sizes) * W
    B = 0.5 * (B + B.T)
    evals, evecs = np.linalg.eigh(B)
    B = (evecs * np.clip(evals, 0.0, None)) @ evecs.T
    B = 0.5 * (B + B.T)
    return PldaModel(mu, B, W)


def _llr(model: PldaModel, a, b) -> float:
    a = a - model.mean
    b = b - model.mean
    return float(-0.5 * (a @ model._Q @ a + b @ model._Q @ b) - a @ model._P @ b + model._const)


def plda_score(model: PldaModel, x_a, x_b) -> float:
    """log p(a, b | same speaker) - log p(a, b | different speakers)."""
    x_a = np.asarray(x_a, dtype=np.float64)
    x_b = np.asarray(x_b, dtype=np.float64)
    if x_a.shape != (model.dim,) or x_b.shape != (model.dim,):
        raise ContractError(f"PLDA expects {model.dim}-dim vectors, got {x_a.shape} and {x_b.shape}")
    # averaging both orders makes the result exactly symmetric in floating point
    return 0.5 * (_llr(model, x_a, x_b) + _llr(model, x_b, x_a))


def plda_llr_matrix(model: PldaModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.dim:
        raise ContractError(f"PLDA expects (n, {model.dim}) input, got {X.shape}")
    Xc = X - model.mean
    q = np.einsum("ij,jk,ik->i", Xc, model._Q, Xc)
    S = -0.5 * (q[:, None] + q[None, :]) - Xc @ model._P @ Xc.T + model._const
    return 0.5 * (S + S.T)


def normalize_score(x):
    """Logistic squashing 1 / (1 + exp(-5x))."""
    return 1.0 / (1.0 + np.exp(-LOGISTIC_SLOPE * np.asarray(x, dtype=np.float64)))


def max_abs_scale(S: np.ndarray) -> np.ndarray:
    """Divide by the largest off-diagonal magnitude, mapping scores into [-1, 1]."""
    S = np.asarray(S, dtype=np.float64)
    off = S[~np.eye(len(S), dtype=bool)]
    m = np.abs(off).max() if off.size else 0.0
    return S / m if m > 0 else S.copy()


def score_matrix(model: PldaModel, X, ids=None, rescale: bool = True, logistic: bool = True) -> SimilarityMatrix:
    """All-pairs PLDA similarities, rescaled to [-1, 1], squashed to (0, 1), unit diagonal."""
    X = np.asarray(X)
    if len(X) < 2:
        raise ContractError("need at least 2 embeddings to score")
    S = plda_llr_matrix(model, X)
    if rescale:
        S = max_abs_scale(S)
    if logistic:
        S = normalize_score(S)
    np.fill_diagonal(S, 1.0)
    return SimilarityMatrix(S, list(ids) if ids is not None else [])


# ---------------------------------------------------------------------------
# DKPL container (little-endian f64):
#   "DKPL" | u32 dim | u32 in_dim | u32 lda_out | mu | B | W | lda_mean | lda_projection
# lda_out == 0 means no LDA stage.


def save_plda(path, model: PldaModel, lda: LdaModel | None = None) -> None:
    d = model.dim
    in_dim = lda.projection.shape[1] if lda is not None else d
    lda_out = lda.out_dim if lda is not None else 0
    parts = [b"DKPL", struct.pack("<III", d, in_dim, lda_out)]
    for arr in (model.mean, model.between, model.within):
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    if lda is not None:
        parts.append(np.ascontiguousarray(lda.mean, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(lda.projection, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_plda(path) -> tuple[PldaModel, LdaModel | None]:
    data = Path(path).read_bytes()
    if data[:4] != b"DKPL" or len(data) < 16:
        raise FormatError(f"{path}: not a DKPL model")
    d, in_dim, lda_out = struct.unpack_from("<III", data, 4)
    need = 16 + 8 * (d + 2 * d * d + (in_dim + lda_out * in_dim if lda_out else 0))
    if len(data) != need:
        raise FormatError(f"{path}: expected {need} bytes, found {len(data)}")
    vals = np.frombuffer(data, dtype="<f8", offset=16).astype(np.float64)
    pos = 0

    def take(*shape):
        nonlocal pos
        n = int(np.prod(shape))
        out = vals[pos : pos + n].reshape(shape)
        pos += n
        return out

    model = PldaModel(take(d), take(d, d), take(d, d))
    lda = LdaModel(take(in_dim), take(lda_out, in_dim)) if lda_out else None
    return model, lda
