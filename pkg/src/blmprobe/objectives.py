"""Scoring rule, loss terms and latent sampling.

Everything here is differentiable through the autograd graph; the numpy
variants used at evaluation time live in ``select_answer`` and
``cosine_scores_np``.

Batch reductions: the answer loss and the reconstruction loss are averaged
over the batch; the KL term is summed over latent dimensions and then
batch-averaged. That keeps the default weights alpha=0.01 and beta=1
meaningful as pure scaling factors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .autograd import Tensor, _lift
from .errors import ContractError, DegenerateInputError, ShapeError

LATENT_SIZE = 5


@dataclass
class LatentCode:
    """Encoder output: per-dimension mean, log-variance, and the drawn sample."""

    mu: Tensor
    logvar: Tensor
    sample: Tensor


@dataclass(frozen=True)
class LossBreakdown:
    """Per-term loss values for one batch; kl/recon are None when the model
    kind does not produce them."""

    answer_loss: float
    kl_loss: Optional[float]
    recon_loss: Optional[float]
    alpha: float
    beta: float

    @property
    def total(self) -> float:
        t = self.answer_loss
        if self.recon_loss is not None:
            t += self.alpha * self.recon_loss
        if self.kl_loss is not None:
            t += self.beta * self.kl_loss
        return t


def _check_nonzero_norms(norms: np.ndarray, what: str) -> None:
    if np.any(norms == 0.0):
        raise DegenerateInputError(f"zero-norm {what} passed to cosine scoring")


def cosine_score(a, b):
    """Cosine of the angle between two vectors.

    Accepts Tensors (stays differentiable) or arrays (returns a float).
    """
    at, bt = _lift(a), _lift(b)
    if at.shape != bt.shape or at.ndim != 1:
        raise ShapeError(f"cosine_score expects equal-length vectors; got {at.shape} and {bt.shape}")
    _check_nonzero_norms(np.array([np.linalg.norm(at.data), np.linalg.norm(bt.data)]), "vector")
    dot = (at * bt).sum()
    denom = ((at * at).sum().sqrt() * (bt * bt).sum().sqrt())
    out = dot / denom
    if isinstance(a, Tensor) or isinstance(b, Tensor):
        return out
    return out.item()


def cosine_scores(pred: Tensor, candidates: Tensor) -> Tensor:
    """Batched cosine: pred [B,E] against candidates [B,K,E] -> scores [B,K]."""
    if pred.ndim != 2 or candidates.ndim != 3 or pred.shape[0] != candidates.shape[0] \
            or pred.shape[1] != candidates.shape[2]:
        raise ShapeError(f"cosine_scores: pred{pred.shape} candidates{candidates.shape}")
    b, e = pred.shape
    cand_norms = np.linalg.norm(candidates.data, axis=2)
    _check_nonzero_norms(cand_norms, "candidate")
    pred_norm = ((pred * pred).sum(axis=1, keepdims=True)).sqrt()    # [B,1]
    _check_nonzero_norms(pred_norm.data, "prediction")
    dots = (pred.reshape(b, 1, e) * candidates).sum(axis=2)          # [B,K]
    return dots / (pred_norm * _lift(cand_norms))


def cosine_scores_np(pred: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Evaluation-path cosine without graph recording."""
    pred_norm = np.linalg.norm(pred, axis=-1, keepdims=True)
    cand_norms = np.linalg.norm(candidates, axis=-1)
    _check_nonzero_norms(pred_norm, "prediction")
    _check_nonzero_norms(cand_norms, "candidate")
    dots = np.einsum("be,bke->bk", pred, candidates)
    return dots / (pred_norm * cand_norms)


def max_margin_loss(pred, correct, wrong: Sequence) -> Tensor:
    """Hinge ranking loss for one episode: sum over wrong answers of
    [1 - cos(correct, pred) + cos(wrong_i, pred)]^+."""
    if len(wrong) == 0:
        raise ContractError("max_margin_loss needs at least one wrong answer")
    pred = _lift(pred)
    s_c = cosine_score(_lift(correct), pred)
    total = None
    for w in wrong:
        term = (cosine_score(_lift(w), pred) - s_c + 1.0).relu()
        total = term if total is None else total + term
    return total


def max_margin_batch(pred: Tensor, candidates: Tensor, correct_mask: np.ndarray) -> Tensor:
    """Batch-averaged hinge ranking loss over a [B,K,E] candidate block.

    ``correct_mask`` is one-hot over K per row; the correct candidate's own
    hinge term is masked out.
    """
    scores = cosine_scores(pred, candidates)                     # [B,K]
    mask = _lift(correct_mask.astype(pred.data.dtype))
    s_c = (scores * mask).sum(axis=1, keepdims=True)             # [B,1]
    hinge = (scores - s_c + 1.0).relu() * _lift(1.0 - correct_mask.astype(pred.data.dtype))
    return hinge.sum() * (1.0 / pred.shape[0])


def kl_standard_normal(mu: Tensor, logvar: Tensor) -> Tensor:
    """KL(N(mu, exp(logvar)) || N(0, I)), summed over latent dims,
    averaged over the batch."""
    mu, logvar = _lift(mu), _lift(logvar)
    if mu.shape != logvar.shape:
        raise ShapeError(f"kl_standard_normal: mu{mu.shape} vs logvar{logvar.shape}")
    if not (np.all(np.isfinite(mu.data)) and np.all(np.isfinite(logvar.data))):
        raise ContractError("kl_standard_normal requires finite inputs")
    per_elem = (mu * mu + logvar.exp() - logvar - 1.0) * 0.5
    if per_elem.ndim == 1:
        return per_elem.sum()
    batch = per_elem.shape[0]
    return per_elem.sum() * (1.0 / batch)


def sample_latent(mu: Tensor, logvar: Tensor, rng: np.random.Generator) -> Tensor:
    """Reparameterized draw: mu + exp(logvar/2) * eps, eps ~ N(0, I).

    Differentiable with respect to mu and logvar; all randomness comes
    from ``rng``.
    """
    mu, logvar = _lift(mu), _lift(logvar)
    if mu.shape != logvar.shape:
        raise ShapeError(f"sample_latent: mu{mu.shape} vs logvar{logvar.shape}")
    eps = rng.standard_normal(mu.shape).astype(mu.data.dtype)
    return mu + (logvar * 0.5).exp() * _lift(eps)


def reconstruction_loss(x: Tensor, x_hat: Tensor) -> Tensor:
    """Mean squared elementwise difference."""
    x, x_hat = _lift(x), _lift(x_hat)
    if x.shape != x_hat.shape:
        raise ShapeError(f"reconstruction_loss shape mismatch: {x.shape} vs {x_hat.shape}")
    diff = x - x_hat
    return (diff * diff).mean()


def select_answer(pred: np.ndarray, candidates: np.ndarray) -> int:
    """Index of the highest-cosine candidate; ties go to the lowest index."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    cands = np.asarray(candidates, dtype=np.float64)
    if cands.ndim != 2 or cands.shape[1] != pred.shape[0]:
        raise ShapeError(f"select_answer: pred{pred.shape} candidates{cands.shape}")
    scores = cosine_scores_np(pred[None, :], cands[None, :, :])[0]
    return int(np.argmax(scores))


def select_answers_batch(pred: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Vectorized ``select_answer`` over a [B,E] / [B,K,E] block."""
    scores = cosine_scores_np(pred, candidates)
    return np.argmax(scores, axis=1)
