"""Posterior model, Bayesian loss, Adam and the training loops.

Training modes:

``joint``
    encoder and class flows trained together on the Bayesian loss.
``sequential``
    an encoder is first trained in ``no_flow`` mode, then frozen while only the
    class densities are fitted on its latents.
``no_flow``
    the density head is replaced by ``beta = exp(linear(z))``.
``no_bayes_loss``
    full architecture, plain cross-entropy on the Dirichlet mean.
"""

from __future__ import annotations

import json
import logging
import zlib
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable

import numpy as np

from . import autograd as ag
from .autograd import NumericalError, Tensor
from .data import DataError, LabeledDataset, MinMaxScaler
from .dirichlet import ClassCounts, DirichletParams, dirichlet_entropy, posterior_alpha
from .encoder import EncoderConfig, EncoderParams, encode, init_encoder
from .flows import ClassDensitySet

logger = logging.getLogger(__name__)

MODES = ("joint", "sequential", "no_flow", "no_bayes_loss")
_EVAL_CHUNK = 8192
_MAX_LOG_EVIDENCE = 600.0


def sub_seed(seed: int, name: str) -> int:
    """Named, independent seed derived from the run seed."""
    return int(np.random.SeedSequence([seed, zlib.crc32(name.encode())]).generate_state(1)[0])


# losses ---------------------------------------------------------------------


def _alpha_tensor(alpha) -> Tensor:
    if isinstance(alpha, Tensor):
        return alpha
    if isinstance(alpha, DirichletParams):
        return ag.tensor(alpha.alpha)
    return ag.tensor(np.atleast_2d(np.asarray(alpha, dtype=np.float64)))


def _labels(labels, n: int, k: int) -> np.ndarray:
    labels = np.atleast_1d(np.asarray(labels))
    if labels.shape != (n,) or not np.issubdtype(labels.dtype, np.integer):
        raise ValueError(f"expected {n} integer labels, got {labels!r}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    return labels.astype(np.intp)


def uce_loss(alpha, labels) -> Tensor:
    """Expected cross-entropy under Dir(alpha): ``psi(alpha_0) - psi(alpha_label)`` per row."""
    alpha = _alpha_tensor(alpha)
    labels = _labels(labels, alpha.shape[0], alpha.shape[1])
    return ag.digamma(ag.sum(alpha, axis=1)) - ag.take(ag.digamma(alpha), labels)


def bayesian_loss(alpha, labels, entropy_weight: float = 1e-5) -> Tensor:
    """Batch mean of ``UCE - entropy_weight * H(Dir(alpha))``."""
    alpha = _alpha_tensor(alpha)
    if alpha.shape[0] == 0:
        raise ValueError("empty batch")
    per_row = uce_loss(alpha, labels)
    if entropy_weight:
        per_row = per_row - dirichlet_entropy(alpha) * entropy_weight
    return ag.mean(per_row)


def mean_cross_entropy(alpha, labels) -> Tensor:
    """Cross-entropy of the Dirichlet mean, ``log alpha_0 - log alpha_label``."""
    alpha = _alpha_tensor(alpha)
    labels = _labels(labels, alpha.shape[0], alpha.shape[1])
    return ag.mean(ag.log(ag.sum(alpha, axis=1)) - ag.take(ag.log(alpha), labels))


# optimizer ------------------------------------------------------------------


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, params: Iterable[Tensor]) -> "AdamState":
        params = list(params)
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adam_step(params: list[Tensor], grads: list[np.ndarray | None], state: AdamState, lr: float) -> None:
    """In-place bias-corrected Adam update; ``None`` gradients count as zero."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state must have the same length")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**state.step
    corr2 = 1.0 - b2**state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter shape {p.shape}")
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        p.data = p.data - lr * (state.m[i] / corr1) / (np.sqrt(state.v[i] / corr2) + state.eps)


# model ------------------------------------------------------------------------


class EvidenceHead:
    """No-flow ablation head: ``beta = exp(z W + b)``."""

    kind = "linear_exp"

    def __init__(self, weight: Tensor, bias: Tensor):
        self.weight = weight
        self.bias = bias

    @classmethod
    def create(cls, dim: int, n_classes: int, rng: np.random.Generator) -> "EvidenceHead":
        bound = 1.0 / np.sqrt(dim)
        return cls(ag.parameter(rng.uniform(-bound, bound, (dim, n_classes))), ag.parameter(np.zeros(n_classes)))

    @property
    def n_classes(self) -> int:
        return self.weight.shape[1]

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]

    def alpha(self, z: Tensor, beta_prior: np.ndarray) -> Tensor:
        # capped so that far-away inputs give huge but finite evidence
        logits = ag.clamp_max(ag.add_row(ag.matmul(z, self.weight), self.bias), _MAX_LOG_EVIDENCE)
        evidence = ag.exp(logits)
        return ag.add_row(evidence, ag.tensor(beta_prior))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "weight": self.weight.data.tolist(), "bias": self.bias.data.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "EvidenceHead":
        return cls(ag.parameter(np.asarray(d["weight"])), ag.parameter(np.asarray(d["bias"])))


@dataclass
class PosteriorModel:
    encoder: EncoderParams
    head: ClassDensitySet | EvidenceHead
    counts: ClassCounts
    beta_prior: np.ndarray
    scaler: MinMaxScaler | None = None
    class_names: list[str] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    freeze_encoder: bool = False

    @property
    def n_classes(self) -> int:
        return len(self.counts)

    @property
    def input_dim(self) -> int:
        return self.encoder.config.input_dim

    def parameters(self) -> list[Tensor]:
        return self.encoder.parameters() + self.head.parameters()

    def trainable_parameters(self) -> list[Tensor]:
        return self.head.parameters() if self.freeze_encoder else self.parameters()

    def alpha_from_latent(self, z: Tensor) -> Tensor:
        if isinstance(self.head, EvidenceHead):
            return self.head.alpha(z, self.beta_prior)
        return posterior_alpha(self.head.log_densities(z), self.counts, self.beta_prior)

    def alpha(self, x, train: bool = False) -> Tensor:
        """Concentrations for already-scaled inputs."""
        z = encode(self.encoder, x, train=train and not self.freeze_encoder)
        return self.alpha_from_latent(z)

    def prepare(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return X if self.scaler is None else self.scaler.transform(X)

    def latent(self, X: np.ndarray, scaled: bool = False) -> np.ndarray:
        X = X if scaled else self.prepare(X)
        with ag.no_grad():
            return encode(self.encoder, X, train=False).data

    def posterior(self, X: np.ndarray, scaled: bool = False) -> DirichletParams:
        """Eval-mode Dirichlet posteriors for raw (or already scaled) inputs."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        X = X if scaled else self.prepare(X)
        if X.shape[0] == 0:
            return DirichletParams(np.empty((0, self.n_classes)), self.beta_prior)
        with ag.no_grad():
            chunks = [self.alpha(X[i : i + _EVAL_CHUNK]).data for i in range(0, X.shape[0], _EVAL_CHUNK)]
        alpha = np.concatenate(chunks)
        if not np.all(np.isfinite(alpha)):
            raise NumericalError("model produced non-finite concentration parameters")
        return DirichletParams(alpha, self.beta_prior)


# training -----------------------------------------------------------------------


@dataclass
class TrainConfig:
    mode: str = "joint"
    entropy_weight: float = 1e-5
    lr: float = 1e-3
    lr_grid: list[float] | None = None
    batch_size: int = 64
    max_epochs: int = 500
    eval_every: int = 2
    patience: int = 10
    seed: int = 0
    density_type: str = "radial"
    use_batchnorm: bool = True
    flow_length: int = 6
    n_components: int | None = None
    latent_dim: int = 6
    hidden_dims: list[int] = field(default_factory=lambda: [64, 64, 64])
    activation: str = "relu"
    scale_inputs: bool = True

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.entropy_weight < 0:
            raise ValueError("entropy_weight must be >= 0")
        if self.patience < 1 or self.eval_every < 1:
            raise ValueError("patience and eval_every must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch normalization)")
        if self.density_type not in ("radial", "mog"):
            raise ValueError(f"unknown density_type {self.density_type!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown training config keys: {unknown}")
        cfg = cls(**d)
        cfg.validate()
        return cfg


@dataclass
class TrainResult:
    model: PosteriorModel
    history: list[dict]
    best_val_loss: float
    lr: float
    stopped_epoch: int


LogFn = Callable[[dict], None]


def build_model(
    input_dim: int,
    counts: ClassCounts,
    cfg: TrainConfig,
    head: str | None = None,
    scaler: MinMaxScaler | None = None,
    class_names: list[str] | None = None,
) -> PosteriorModel:
    """Fresh model for ``cfg``; ``head`` overrides the head choice ('flow' or 'linear_exp')."""
    enc_cfg = EncoderConfig(
        input_dim=input_dim,
        hidden_dims=list(cfg.hidden_dims),
        latent_dim=cfg.latent_dim,
        activation=cfg.activation,
        final_batchnorm=cfg.use_batchnorm,
        seed=sub_seed(cfg.seed, "init/encoder"),
    )
    encoder = init_encoder(enc_cfg)
    head = head or ("linear_exp" if cfg.mode == "no_flow" else "flow")
    if head == "linear_exp":
        density = EvidenceHead.create(cfg.latent_dim, len(counts), np.random.default_rng(sub_seed(cfg.seed, "init/head")))
    else:
        density = ClassDensitySet.create(
            len(counts),
            cfg.latent_dim,
            cfg.density_type,
            cfg.flow_length,
            cfg.n_components,
            seed=sub_seed(cfg.seed, "init/density"),
        )
    return PosteriorModel(
        encoder,
        density,
        counts,
        np.ones(len(counts)),
        scaler,
        list(class_names or []),
        {"train": cfg.to_dict()},
    )


def _objective(mode: str, entropy_weight: float) -> Callable[[Tensor, np.ndarray], Tensor]:
    if mode == "no_bayes_loss":
        return mean_cross_entropy
    return lambda alpha, y: bayesian_loss(alpha, y, entropy_weight)


def _snapshot(model: PosteriorModel) -> tuple[list[np.ndarray], tuple | None]:
    values = [p.data.copy() for p in model.parameters()]
    bn = model.encoder.batchnorm
    stats = None if bn is None else (bn.running_mean.copy(), bn.running_var.copy(), bn.num_batches)
    return values, stats


def _restore(model: PosteriorModel, snap) -> None:
    values, stats = snap
    for p, v in zip(model.parameters(), values):
        p.data = v.copy()
    if stats is not None:
        bn = model.encoder.batchnorm
        bn.running_mean, bn.running_var, bn.num_batches = stats[0].copy(), stats[1].copy(), stats[2]


def fit(
    model: PosteriorModel,
    X_train: np.ndarray,
    y_train: np.ndarray,
    X_val: np.ndarray,
    y_val: np.ndarray,
    cfg: TrainConfig,
    lr: float,
    objective: Callable[[Tensor, np.ndarray], Tensor],
    log: LogFn | None = None,
    phase: str = "main",
) -> tuple[list[dict], float, int]:
    """Mini-batch Adam with validation-based early stopping; restores the best state.

    Inputs are already scaled. Returns ``(history, best_val_loss, last_epoch)``.
    """
    params = model.trainable_parameters()
    state = AdamState.create(params)
    n = X_train.shape[0]
    n_batches = max(1, -(-n // cfg.batch_size))
    if n < 2 * n_batches:
        n_batches = max(1, n // 2)
    shuffle_seed = sub_seed(cfg.seed, f"shuffle/{phase}")

    history: list[dict] = []
    best, best_snap = np.inf, _snapshot(model)
    bad_evals = 0
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        perm = np.random.default_rng([shuffle_seed, epoch]).permutation(n)
        losses = []
        for idx in np.array_split(perm, n_batches):
            for p in params:
                p.zero_grad()
            loss = objective(model.alpha(X_train[idx], train=True), y_train[idx])
            loss.backward()
            adam_step(params, [p.grad for p in params], state, lr)
            losses.append(loss.item())
        if epoch % cfg.eval_every:
            continue
        with ag.no_grad():
            val_loss = objective(model.alpha(X_val), y_val).item()
        if not np.isfinite(val_loss):
            raise NumericalError(f"validation loss became {val_loss} at epoch {epoch}")
        record = {"phase": phase, "epoch": epoch, "train_loss": float(np.mean(losses)), "val_loss": val_loss}
        history.append(record)
        if log is not None:
            log(record)
        if val_loss < best:
            best, best_snap, bad_evals = val_loss, _snapshot(model), 0
        else:
            bad_evals += 1
            if bad_evals >= cfg.patience:
                break
    _restore(model, best_snap)
    return history, float(best), epoch


def _check_splits(train: LabeledDataset, val: LabeledDataset) -> None:
    if len(train) == 0 or len(val) == 0:
        raise DataError("training and validation splits must be non-empty")
    if len(np.unique(train.y)) < 2:
        raise DataError("training data must contain at least two classes")
    if train.n_features != val.n_features:
        raise DataError(f"train has {train.n_features} features but validation has {val.n_features}")


def train_single(
    train: LabeledDataset, val: LabeledDataset, cfg: TrainConfig, lr: float | None = None, log: LogFn | None = None
) -> TrainResult:
    """Train one model at a single learning rate."""
    cfg.validate()
    _check_splits(train, val)
    lr = cfg.lr if lr is None else lr
    n_classes = train.n_classes
    counts = ClassCounts.from_labels(train.y, n_classes)
    scaler = MinMaxScaler.fit(train.X) if cfg.scale_inputs else None
    Xtr = train.X if scaler is None else scaler.transform(train.X)
    Xva = val.X if scaler is None else scaler.transform(val.X)
    names = list(train.class_names)

    if cfg.mode == "sequential":
        model = build_model(train.n_features, counts, cfg, head="linear_exp", scaler=scaler, class_names=names)
        pre_hist, _, _ = fit(
            model, Xtr, train.y, Xva, val.y, cfg, lr, _objective("no_flow", cfg.entropy_weight), log, "pretrain"
        )
        flows = build_model(train.n_features, counts, cfg, head="flow").head
        model.head = flows
        model.freeze_encoder = True
        hist, best, epoch = fit(
            model, Xtr, train.y, Xva, val.y, cfg, lr, _objective("joint", cfg.entropy_weight), log, "flows"
        )
        history = pre_hist + hist
    else:
        model = build_model(train.n_features, counts, cfg, scaler=scaler, class_names=names)
        history, best, epoch = fit(
            model, Xtr, train.y, Xva, val.y, cfg, lr, _objective(cfg.mode, cfg.entropy_weight), log
        )
    model.config = {"train": {**cfg.to_dict(), "lr": lr}}
    return TrainResult(model, history, best, lr, epoch)


def train(
    train_ds: LabeledDataset, val_ds: LabeledDataset, cfg: TrainConfig, log: LogFn | None = None
) -> TrainResult:
    """Train, selecting the learning rate from ``cfg.lr_grid`` by validation loss.

    Ties go to the smaller learning rate.
    """
    grid = cfg.lr_grid or [cfg.lr]
    best: TrainResult | None = None
    for lr in sorted(grid):
        result = train_single(train_ds, val_ds, cfg, lr, log)
        logger.info("lr=%g best validation loss %.6f", lr, result.best_val_loss)
        if best is None or result.best_val_loss < best.best_val_loss:
            best = result
    return best


def jsonl_logger(stream) -> LogFn:
    """Write each training record as one JSON line."""

    def write(record: dict) -> None:
        stream.write(json.dumps(record) + "\n")
        stream.flush()

    return write
