"""Normalized class-conditional densities on the latent space.

Two density families are provided:

* :class:`RadialFlowStack` - a stack of radial layers. Each layer maps a latent
  point towards the base space, ``z <- z + b * (z - z0) / (a + |z - z0|)``,
  and the density is the standard normal at the end of the stack times the
  absolute Jacobian determinants collected on the way. Sampling runs the stack
  backwards; every radial layer is inverted exactly by solving a quadratic in
  the radius.
* :class:`MoGDensity` - a diagonal-covariance Gaussian mixture.

Both are exact, normalized densities, which is what keeps the total evidence
of a class bounded by its training count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor

LOG_2PI = math.log(2.0 * math.pi)
# keeps d|z - z0|/dz finite when z sits exactly on a flow center
_RADIUS_EPS = 1e-24


def _std_normal_logpdf(z: Tensor) -> Tensor:
    dim = z.shape[1]
    return ag.sum(z * z, axis=1) * -0.5 + (-0.5 * dim * LOG_2PI)


@dataclass
class RadialLayer:
    center: Tensor  # (H,)
    alpha_raw: Tensor  # ()
    beta_raw: Tensor  # ()

    def effective(self) -> tuple[float, float]:
        alpha = float(np.logaddexp(0.0, self.alpha_raw.data))
        beta = -alpha + float(np.logaddexp(0.0, self.beta_raw.data))
        return alpha, beta

    def parameters(self) -> list[Tensor]:
        return [self.center, self.alpha_raw, self.beta_raw]

    def forward(self, z: Tensor) -> tuple[Tensor, Tensor]:
        """Transform ``z`` one step towards the base space; also return log|det J|."""
        dim = z.shape[1]
        alpha = ag.softplus(self.alpha_raw)
        beta = ag.softplus(self.beta_raw) - alpha
        diff = ag.add_row(z, -self.center)
        r = ag.sqrt(ag.sum(diff * diff, axis=1) + _RADIUS_EPS)
        h = 1.0 / (r + alpha)
        bh = beta * h
        out = z + ag.mul_col(diff, bh)
        # d/dr h = -h^2, so 1 + b*h + b*h'*r = 1 + b*h - b*h^2*r
        log_det = ag.log(1.0 + bh) * (dim - 1) + ag.log(1.0 + bh - bh * h * r)
        return out, log_det

    def forward_numpy(self, z: np.ndarray) -> np.ndarray:
        alpha, beta = self.effective()
        diff = z - self.center.data
        r = np.sqrt(np.sum(diff * diff, axis=1))
        return z + diff * (beta / (alpha + r))[:, None]

    def inverse_numpy(self, y: np.ndarray) -> np.ndarray:
        """Invert :meth:`forward_numpy`.

        With ``s = |y - z0|`` the pre-image radius solves
        ``r^2 + (a + b - s) r - s a = 0``; the positive root is taken in a
        cancellation-free form. The direction is unchanged by the layer.
        """
        alpha, beta = self.effective()
        diff = y - self.center.data
        s = np.sqrt(np.sum(diff * diff, axis=1))
        b = alpha + beta - s
        disc = np.sqrt(b * b + 4.0 * s * alpha)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(b >= 0, 2.0 * s * alpha / (b + disc), 0.5 * (disc - b))
            scale = np.where(s > 0, r / s, 0.0)
        return self.center.data + diff * scale[:, None]


class RadialFlowStack:
    """Radial flow density with a standard-normal base on R^H."""

    kind = "radial"

    def __init__(self, layers: list[RadialLayer], dim: int):
        self.layers = layers
        self.dim = dim

    @classmethod
    def create(cls, dim: int, length: int = 6, rng: np.random.Generator | None = None) -> "RadialFlowStack":
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / math.sqrt(dim)
        layers = [
            RadialLayer(
                center=ag.parameter(rng.uniform(-bound, bound, size=dim)),
                alpha_raw=ag.parameter(rng.uniform(-bound, bound)),
                beta_raw=ag.parameter(rng.uniform(-bound, bound)),
            )
            for _ in range(length)
        ]
        return cls(layers, dim)

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def log_density(self, z: Tensor | np.ndarray) -> Tensor:
        z = z if isinstance(z, Tensor) else ag.tensor(z)
        _check_latent(z, self.dim)
        total = None
        for layer in self.layers:
            z, log_det = layer.forward(z)
            total = log_det if total is None else total + log_det
        base = _std_normal_logpdf(z)
        return base if total is None else base + total

    def sample(self, n: int, seed: int) -> np.ndarray:
        if n < 1:
            raise ValueError(f"sample size must be >= 1, got {n}")
        z = np.random.default_rng(seed).standard_normal((n, self.dim))
        for layer in reversed(self.layers):
            z = layer.inverse_numpy(z)
        return z

    def to_base(self, z: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            z = layer.forward_numpy(z)
        return z

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "dim": self.dim,
            "layers": [
                {
                    "center": layer.center.data.tolist(),
                    "alpha_raw": float(layer.alpha_raw.data),
                    "beta_raw": float(layer.beta_raw.data),
                }
                for layer in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RadialFlowStack":
        layers = [
            RadialLayer(
                center=ag.parameter(np.asarray(layer["center"], dtype=np.float64)),
                alpha_raw=ag.parameter(layer["alpha_raw"]),
                beta_raw=ag.parameter(layer["beta_raw"]),
            )
            for layer in d["layers"]
        ]
        return cls(layers, int(d["dim"]))


class MoGDensity:
    """Mixture of diagonal Gaussians with softmax weights."""

    kind = "mog"

    def __init__(self, logits: Tensor, means: Tensor, log_vars: Tensor):
        if means.shape != log_vars.shape or logits.shape != (means.shape[0],):
            raise ag.ShapeError(
                f"inconsistent MoG shapes: logits {logits.shape}, means {means.shape}, log_vars {log_vars.shape}"
            )
        self.logits = logits
        self.means = means
        self.log_vars = log_vars
        self.dim = means.shape[1]

    @classmethod
    def create(cls, dim: int, components: int, rng: np.random.Generator | None = None) -> "MoGDensity":
        rng = rng if rng is not None else np.random.default_rng(0)
        return cls(
            ag.parameter(np.zeros(components)),
            ag.parameter(rng.standard_normal((components, dim))),
            ag.parameter(np.zeros((components, dim))),
        )

    def parameters(self) -> list[Tensor]:
        return [self.logits, self.means, self.log_vars]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def log_density(self, z: Tensor | np.ndarray) -> Tensor:
        z = z if isinstance(z, Tensor) else ag.tensor(z)
        _check_latent(z, self.dim)
        n_comp = self.means.shape[0]
        mean_rows = _rows(self.means, n_comp)
        logvar_rows = _rows(self.log_vars, n_comp)
        comps = []
        for mu, lv in zip(mean_rows, logvar_rows):
            diff = ag.add_row(z, -mu)
            maha = ag.sum(ag.mul_row(diff * diff, ag.exp(-lv)), axis=1)
            comps.append((maha + ag.sum(lv) + self.dim * LOG_2PI) * -0.5)
        joint = ag.add_row(ag.stack_cols(comps), ag.log_softmax(self.logits))
        return ag.logsumexp(joint, axis=1)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "dim": self.dim,
            "logits": self.logits.data.tolist(),
            "means": self.means.data.tolist(),
            "log_vars": self.log_vars.data.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MoGDensity":
        return cls(
            ag.parameter(np.asarray(d["logits"], dtype=np.float64)),
            ag.parameter(np.asarray(d["means"], dtype=np.float64)),
            ag.parameter(np.asarray(d["log_vars"], dtype=np.float64)),
        )


def _rows(matrix: Tensor, n: int) -> list[Tensor]:
    """Split a (n, H) parameter into differentiable row views."""
    out = []
    for j in range(n):
        onehot = np.zeros(n)
        onehot[j] = 1.0
        out.append(ag.sum(ag.mul_col(matrix, ag.tensor(onehot)), axis=0))
    return out


def _check_latent(z: Tensor, dim: int) -> None:
    if z.data.ndim != 2 or z.shape[1] != dim:
        raise ag.ShapeError(f"expected latent batch (B, {dim}), got {z.shape}")
    if not np.all(np.isfinite(z.data)):
        raise ValueError("latent input contains non-finite values")


def radial_log_density(flow: RadialFlowStack, z) -> Tensor:
    return flow.log_density(z)


def mog_log_density(mog: MoGDensity, z) -> Tensor:
    return mog.log_density(z)


def flow_sample(flow: RadialFlowStack, n: int, seed: int) -> np.ndarray:
    return flow.sample(n, seed)


class ClassDensitySet:
    """One normalized density per class, all on the same latent space."""

    def __init__(self, densities: list):
        if not densities:
            raise ValueError("need at least one class density")
        dims = {d.dim for d in densities}
        if len(dims) != 1:
            raise ValueError(f"class densities disagree on latent dimension: {sorted(dims)}")
        self.densities = densities
        self.dim = dims.pop()

    @classmethod
    def create(
        cls,
        n_classes: int,
        dim: int,
        density_type: str = "radial",
        flow_length: int = 6,
        n_components: int | None = None,
        seed: int = 0,
    ) -> "ClassDensitySet":
        rng = np.random.default_rng(seed)
        if density_type == "radial":
            dens = [RadialFlowStack.create(dim, flow_length, rng) for _ in range(n_classes)]
        elif density_type == "mog":
            comps = n_components if n_components is not None else n_classes
            dens = [MoGDensity.create(dim, comps, rng) for _ in range(n_classes)]
        else:
            raise ValueError(f"unknown density type {density_type!r}")
        return cls(dens)

    @property
    def n_classes(self) -> int:
        return len(self.densities)

    def parameters(self) -> list[Tensor]:
        return [p for d in self.densities for p in d.parameters()]

    def log_densities(self, z) -> Tensor:
        """(B, K) matrix of log P(z_i | c)."""
        return ag.stack_cols([d.log_density(z) for d in self.densities])

    def to_dict(self) -> dict:
        return {"densities": [d.to_dict() for d in self.densities]}

    @classmethod
    def from_dict(cls, d: dict) -> "ClassDensitySet":
        loaders = {"radial": RadialFlowStack.from_dict, "mog": MoGDensity.from_dict}
        return cls([loaders[item["kind"]](item) for item in d["densities"]])


def class_densities(density_set: ClassDensitySet, z) -> np.ndarray:
    """(B, K) matrix of P(z_i | c) >= 0."""
    return np.exp(density_set.log_densities(z).data)
