"""Per-input Dirichlet posteriors and their closed-form summaries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .special import digamma, log_gamma

# densities below this are treated as this value before scaling by N_c
DENSITY_FLOOR = 1e-300
LOG_DENSITY_FLOOR = float(np.log(DENSITY_FLOOR))
SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class ClassCounts:
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.float64)
        if counts.ndim != 1 or np.any(counts < 0) or counts.sum() <= 0:
            raise ValueError(f"class counts must be non-negative with a positive total, got {counts}")
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_labels(cls, labels, n_classes: int) -> "ClassCounts":
        return cls(np.bincount(np.asarray(labels, dtype=np.intp), minlength=n_classes).astype(np.float64))

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    def __len__(self) -> int:
        return len(self.counts)


@dataclass(frozen=True)
class DirichletParams:
    """Batch of Dirichlet posteriors: ``alpha = beta_prior + beta`` row-wise."""

    alpha: np.ndarray  # (B, K)
    beta_prior: np.ndarray  # (K,)

    def __post_init__(self):
        alpha = np.atleast_2d(np.asarray(self.alpha, dtype=np.float64))
        prior = np.asarray(self.beta_prior, dtype=np.float64)
        if alpha.shape[1] != prior.shape[0]:
            raise ValueError(f"alpha has {alpha.shape[1]} classes but prior has {prior.shape[0]}")
        if not np.all(alpha > 0):
            raise ValueError("Dirichlet concentrations must be positive")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta_prior", prior)

    @classmethod
    def from_alpha(cls, alpha, beta_prior=None) -> "DirichletParams":
        alpha = np.atleast_2d(np.asarray(alpha, dtype=np.float64))
        prior = np.ones(alpha.shape[1]) if beta_prior is None else beta_prior
        return cls(alpha, prior)

    @property
    def beta(self) -> np.ndarray:
        return self.alpha - self.beta_prior

    @property
    def alpha0(self) -> np.ndarray:
        return self.alpha.sum(axis=1)

    @property
    def n_classes(self) -> int:
        return self.alpha.shape[1]

    def __len__(self) -> int:
        return self.alpha.shape[0]


def posterior_params(densities, counts: ClassCounts, beta_prior=None) -> DirichletParams:
    densities = np.atleast_2d(np.asarray(densities, dtype=np.float64))
    if np.any(densities < 0):
        raise ValueError("class densities must be non-negative")
    prior = np.ones(densities.shape[1]) if beta_prior is None else np.asarray(beta_prior, dtype=np.float64)
    return DirichletParams(prior + counts.counts * densities, prior)


def posterior_alpha(log_densities: Tensor, counts: ClassCounts, beta_prior) -> Tensor:
    """Differentiable ``alpha = beta_prior + N_c * P(z|c)`` from log densities.

    The log density is floored at log(1e-300) so far-field inputs give a tiny
    positive evidence instead of an exact zero.
    """
    with np.errstate(divide="ignore"):
        log_counts = np.log(counts.counts)
    floored = ag.clamp_min(log_densities, LOG_DENSITY_FLOOR)
    evidence = ag.exp(ag.add_row(floored, ag.tensor(log_counts)))
    return ag.add_row(evidence, ag.tensor(np.asarray(beta_prior, dtype=np.float64)))


def _alpha(d) -> np.ndarray:
    return d.alpha if isinstance(d, DirichletParams) else np.asarray(d, dtype=np.float64)


def dirichlet_mean(d) -> np.ndarray:
    alpha = _alpha(d)
    return alpha / alpha.sum(axis=-1, keepdims=True)


def predict_class(d) -> np.ndarray | int:
    """Argmax of the mean; ties go to the lowest index."""
    alpha = _alpha(d)
    pred = np.argmax(alpha, axis=-1)
    return int(pred) if alpha.ndim == 1 else pred


def dirichlet_var_cov(d, c: int, c2: int) -> float | np.ndarray:
    """Var(p_c) when ``c == c2`` else Cov(p_c, p_c2)."""
    alpha = _alpha(d)
    k = alpha.shape[-1]
    if not (0 <= c < k and 0 <= c2 < k):
        raise IndexError(f"class indices ({c}, {c2}) out of range for K={k}")
    a0 = alpha.sum(axis=-1)
    denom = a0 * a0 * (a0 + 1.0)
    ac, ac2 = alpha[..., c], alpha[..., c2]
    if c == c2:
        return ac * (a0 - ac) / denom
    return -ac * ac2 / denom


def dirichlet_log_pdf(p, d) -> float | np.ndarray:
    """Log density of the normalized Dirichlet, Gamma(a0)/prod Gamma(a_c) * prod p^(a-1)."""
    alpha = _alpha(d)
    p = np.asarray(p, dtype=np.float64)
    if np.any(p <= 0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > SIMPLEX_TOL):
        raise ValueError("p must lie in the interior of the probability simplex")
    log_norm = log_gamma(alpha.sum(axis=-1)) - log_gamma(alpha).sum(axis=-1)
    return log_norm + ((alpha - 1.0) * np.log(p)).sum(axis=-1)


def dirichlet_entropy(d):
    """Differential entropy ``log B(a) + (a0 - K) psi(a0) - sum (a_c - 1) psi(a_c)``.

    Accepts a :class:`~postnet.autograd.Tensor` of shape (B, K) (and then
    returns a differentiable (B,) tensor) or an array / DirichletParams.
    """
    if isinstance(d, Tensor):
        return _entropy_tensor(d)
    alpha = _alpha(d)
    k = alpha.shape[-1]
    a0 = alpha.sum(axis=-1)
    log_beta = log_gamma(alpha).sum(axis=-1) - log_gamma(a0)
    return log_beta + (a0 - k) * digamma(a0) - ((alpha - 1.0) * digamma(alpha)).sum(axis=-1)


def _entropy_tensor(alpha: Tensor) -> Tensor:
    k = alpha.shape[1]
    a0 = ag.sum(alpha, axis=1)
    log_beta = ag.sum(ag.log_gamma(alpha), axis=1) - ag.log_gamma(a0)
    return log_beta + (a0 - float(k)) * ag.digamma(a0) - ag.sum((alpha - 1.0) * ag.digamma(alpha), axis=1)


def categorical_entropy(p) -> float | np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return -terms.sum(axis=-1)
