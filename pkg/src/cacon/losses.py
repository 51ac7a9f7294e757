"""Contrastive losses over L2-normalized embeddings.

Batch convention: embeddings arrive as v*B rows for v views of B source
images, view-major, so rows congruent mod B share a source. The triplet batch
loss averages the two-positive objective over all 3B anchors: for anchor r
with positives p1, p2,

    loss(r) = logsumexp_{b != r}(S[r, b] / tau)
              - log(exp(S[r, p1] / tau) + exp(S[r, p2] / tau))

computed with max-shifted log-sum-exp. The pair form is the same with a
single positive over 2B rows. Softmax shifts are recorded as constants, which
leaves gradients exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .autodiff import (
    Tape,
    Tensor,
    add,
    exp,
    l2_normalize,
    l2_normalize_rows,
    log,
    matmul,
    mul,
    scale,
    sub,
    sum_all,
    sum_axis,
    take,
    tensor,
    transpose,
)
from .errors import ContractError, DomainError, ShapeError


@dataclass
class EmbeddingBatch:
    """View-major embedding rows: n_views blocks of n_sources rows each."""

    z: Tensor
    n_sources: int
    n_views: int = 3

    def __post_init__(self):
        if self.z.ndim != 2:
            raise ShapeError(
                f"embedding batch must be 2-d, got {list(self.z.shape)}"
            )
        if self.n_sources < 1 or self.n_views < 2:
            raise ContractError(
                f"embedding batch needs n_sources >= 1 and n_views >= 2, got "
                f"{self.n_sources}, {self.n_views}"
            )
        if self.z.shape[0] != self.n_sources * self.n_views:
            raise ShapeError(
                f"embedding batch has {self.z.shape[0]} rows, expected "
                f"{self.n_views} views x {self.n_sources} sources"
            )

    @property
    def n_rows(self) -> int:
        return self.n_sources * self.n_views

    def positives(self, r: int) -> list:
        """Rows sharing r's source (congruent mod n_sources), excluding r."""
        if not (0 <= r < self.n_rows):
            raise ContractError(f"anchor {r} out of range [0, {self.n_rows})")
        q = r % self.n_sources
        return [q + v * self.n_sources for v in range(self.n_views)
                if q + v * self.n_sources != r]


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if tau <= 0.0:
        raise DomainError(f"temperature must be > 0, got {tau}")
    return tau


def cosine_sim(u: Tensor, v: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Cosine similarity of two vectors (dot of their unit normalizations)."""
    if u.shape != v.shape:
        raise ShapeError(
            f"cosine_sim operands differ in shape: {list(u.shape)} vs "
            f"{list(v.shape)}"
        )
    return sum_all(mul(l2_normalize(u, tape), l2_normalize(v, tape), tape), tape)


def sim_matrix(batch: Union[EmbeddingBatch, Tensor],
               tape: Optional[Tape] = None) -> Tensor:
    """All-pairs cosine similarity of the batch rows."""
    z = batch.z if isinstance(batch, EmbeddingBatch) else batch
    zn = l2_normalize_rows(z, tape)
    return matmul(zn, transpose(zn, tape), tape)


def validate_sim_matrix(s: np.ndarray, tol: float = 1e-6) -> None:
    """Check symmetry, unit diagonal, and the [-1, 1] range within tol."""
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ShapeError(f"similarity matrix must be square, got {list(s.shape)}")
    if np.abs(s - s.T).max() > tol:
        raise ContractError("similarity matrix is not symmetric")
    if np.abs(np.diag(s) - 1.0).max() > tol:
        raise ContractError("similarity matrix diagonal is not 1")
    if s.min() < -1.0 - tol or s.max() > 1.0 + tol:
        raise ContractError("similarity entries outside [-1, 1]")


def _rows_of(s: Tensor) -> int:
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ShapeError(f"similarity matrix must be square, got {list(s.shape)}")
    return s.shape[0]


def _lse_terms(vals: Tensor, tape: Optional[Tape]) -> Tensor:
    """Max-shifted log-sum-exp of a 1-d tensor, as a scalar tensor."""
    m = float(vals.data.max())
    shift = tensor(np.full(vals.shape, m))
    summed = sum_all(exp(sub(vals, shift, tape), tape), tape)
    return add(log(summed, tape), tensor(np.asarray(m)), tape)


def nt_xent_pair(anchor_row: int, pos_row: int, s: Tensor, tau: float,
                 tape: Optional[Tape] = None) -> Tensor:
    """Single-positive contrastive loss for one anchor row of S."""
    tau = _check_tau(tau)
    n = _rows_of(s)
    if not (0 <= anchor_row < n and 0 <= pos_row < n):
        raise ContractError(
            f"rows ({anchor_row}, {pos_row}) out of range [0, {n})"
        )
    if anchor_row == pos_row:
        raise ContractError("anchor and positive must be distinct rows")
    others = np.array([b for b in range(n) if b != anchor_row], dtype=np.int64)
    logits = scale(take(s, anchor_row * n + others, tape), 1.0 / tau, tape)
    den = _lse_terms(logits, tape)
    pos = scale(sum_all(take(s, [anchor_row * n + pos_row], tape), tape),
                1.0 / tau, tape)
    return sub(den, pos, tape)


def nt_xent_triplet(r: int, s: Tensor, tau: float,
                    tape: Optional[Tape] = None) -> Tensor:
    """Two-positive contrastive loss for anchor r of a 3B-row batch."""
    tau = _check_tau(tau)
    n = _rows_of(s)
    if n % 3 != 0 or n < 3:
        raise ContractError(
            f"triplet similarity matrix needs 3B rows, got {n}"
        )
    b = n // 3
    if not (0 <= r < n):
        raise ContractError(f"anchor {r} out of range [0, {n})")
    q = r % b
    pos = [q + v * b for v in range(3) if q + v * b != r]
    others = np.array([c for c in range(n) if c != r], dtype=np.int64)
    logits = scale(take(s, r * n + others, tape), 1.0 / tau, tape)
    den = _lse_terms(logits, tape)
    pos_logits = scale(take(s, [r * n + p for p in pos], tape), 1.0 / tau, tape)
    num = _lse_terms(pos_logits, tape)
    return sub(den, num, tape)


def _batch_loss_core(batch: EmbeddingBatch, tau: float,
                     tape: Optional[Tape]) -> Tensor:
    """Mean anchor loss, vectorized over all rows of the batch."""
    tau = _check_tau(tau)
    n, b, v = batch.n_rows, batch.n_sources, batch.n_views
    s = sim_matrix(batch, tape)
    logits = scale(s, 1.0 / tau, tape)
    ld = logits.data

    off = ~np.eye(n, dtype=bool)
    row_max = np.where(off, ld, -np.inf).max(axis=1)
    shift = tensor(np.broadcast_to(row_max[:, None], (n, n)).copy())
    e = exp(sub(logits, shift, tape), tape)
    e_off = mul(e, tensor(off.astype(np.float64)), tape)
    log_den = add(log(sum_axis(e_off, 1, tape), tape), tensor(row_max), tape)

    rows = np.arange(n)
    qs = rows % b
    pos_cols = np.stack([qs + w * b for w in range(v)], axis=1)
    pos_cols = np.sort(np.array(
        [[c for c in pos_cols[r] if c != r] for r in rows], dtype=np.int64),
        axis=1)
    if v == 2:
        log_num = take(logits, rows * n + pos_cols[:, 0], tape)
    else:
        pvals = [take(logits, rows * n + pos_cols[:, w], tape)
                 for w in range(v - 1)]
        cmax = np.maximum.reduce([p.data for p in pvals])
        cshift = tensor(cmax)
        total = None
        for p in pvals:
            term = exp(sub(p, cshift, tape), tape)
            total = term if total is None else add(total, term, tape)
        log_num = add(log(total, tape), cshift, tape)
    per_anchor = sub(log_den, log_num, tape)
    return scale(sum_all(per_anchor, tape), 1.0 / n, tape)


def batch_loss(batch: EmbeddingBatch, tau: float,
               tape: Optional[Tape] = None) -> Tensor:
    """Mean two-positive loss over all 3B anchors of a triplet batch."""
    if batch.n_views != 3:
        raise ContractError(
            f"batch_loss expects 3 views per source, got {batch.n_views}"
        )
    return _batch_loss_core(batch, tau, tape)


def batch_loss_pair(batch: EmbeddingBatch, tau: float,
                    tape: Optional[Tape] = None) -> Tensor:
    """Mean single-positive loss over all 2B anchors of a pair batch."""
    if batch.n_views != 2:
        raise ContractError(
            f"batch_loss_pair expects 2 views per source, got {batch.n_views}"
        )
    return _batch_loss_core(batch, tau, tape)


# ---------------------------------------------------------------------------
# adversarial triplet loss (standalone value function)

@dataclass
class TripletBatch:
    """Class-major embedding grid for the margin loss.

    Row t * images_per_class + s is image s of class t. Anchors run over all
    rows; for an anchor, positives are the other rows of its class and
    negatives are every row of the other classes.
    """

    embeddings: np.ndarray
    n_classes: int
    images_per_class: int
    margin: float = 0.5

    def __post_init__(self):
        emb = np.asarray(self.embeddings, dtype=np.float64)
        if emb.ndim != 2:
            raise ShapeError(
                f"triplet embeddings must be 2-d, got {list(emb.shape)}"
            )
        if self.n_classes < 2 or self.images_per_class < 2:
            raise ContractError(
                "triplet batch needs >= 2 classes and >= 2 images per class, "
                f"got {self.n_classes}, {self.images_per_class}"
            )
        if emb.shape[0] != self.n_classes * self.images_per_class:
            raise ShapeError(
                f"triplet batch has {emb.shape[0]} rows, expected "
                f"{self.n_classes} x {self.images_per_class}"
            )
        if self.margin < 0:
            raise DomainError(f"margin must be >= 0, got {self.margin}")
        self.embeddings = emb

    @property
    def anchors(self) -> np.ndarray:
        return self.embeddings

    def positive_rows(self, t: int, s: int) -> np.ndarray:
        base = t * self.images_per_class
        return np.array([base + j for j in range(self.images_per_class)
                         if j != s], dtype=np.int64)

    def negative_rows(self, t: int) -> np.ndarray:
        return np.array([r for r in range(self.embeddings.shape[0])
                         if r // self.images_per_class != t], dtype=np.int64)


def adversarial_triplet_loss(batch: TripletBatch) -> float:
    """Hardest-positive / hardest-negative margin loss, summed over anchors.

    For each anchor a: the hinged bracket [m + max_p D(a,p) - min_n D(a,n)]+
    plus the unhinged term D(n*, p*) - min_n D(a,n), where p* and n* are the
    argmax/argmin above (first index on ties) and D is squared Euclidean
    distance. Not tape-tracked: training never differentiates it.
    """
    emb = batch.embeddings
    # direct differences, not the Gram expansion: near-tied distances would
    # otherwise flip the argmin under cancellation noise
    diff = emb[:, None, :] - emb[None, :, :]
    d = np.sum(diff * diff, axis=-1)
    total = 0.0
    for t in range(batch.n_classes):
        for s_i in range(batch.images_per_class):
            a = t * batch.images_per_class + s_i
            pos = batch.positive_rows(t, s_i)
            neg = batch.negative_rows(t)
            dp = d[a, pos]
            dn = d[a, neg]
            p_star = pos[int(np.argmax(dp))]
            n_star = neg[int(np.argmin(dn))]
            max_p = float(dp.max())
            min_n = float(dn.min())
            total += max(batch.margin + max_p - min_n, 0.0)
            total += float(d[n_star, p_star]) - min_n
    return float(total)
