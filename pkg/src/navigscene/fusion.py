"""Navigation-guided fusion of VLM output distributions with BEV features.

A sparsity-reduction MLP maps the vocabulary-sized VLM output down to the BEV
width, the result is concatenated after the BEV features, and a fusion MLP
maps the concatenation back to the BEV width for the downstream task head.
The baseline path feeds BEV features straight into the head.

Every MLP has one ReLU hidden layer. Gradients are written out by hand so the
whole path can be checked against finite differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, ValidationError
from .gradcheck import FD_STEP, central_difference, loss_floor, max_relative_error

VLM_VOCAB_DIM = 32_000
BEV_DIM = 256
TASKS = ("perception", "prediction", "planning")


def as_feature(values, name: str = "feature") -> np.ndarray:
    x = np.asarray(values, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise ValidationError(f"{name} must be a non-empty vector, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValidationError(f"{name} has non-finite entries")
    return x


@dataclass
class MlpWeights:
    """``out = W2 @ relu(W1 @ x + b1) + b2``."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def __post_init__(self) -> None:
        self.W1, self.b1, self.W2, self.b2 = (np.asarray(a, dtype=float) for a in (self.W1, self.b1, self.W2, self.b2))
        hidden, _ = self.W1.shape
        if self.b1.shape != (hidden,) or self.W2.ndim != 2 or self.W2.shape[1] != hidden:
            raise DimMismatch(f"inconsistent MLP shapes W1{self.W1.shape} b1{self.b1.shape} W2{self.W2.shape}")
        if self.b2.shape != (self.W2.shape[0],):
            raise DimMismatch(f"b2 shape {self.b2.shape} does not match W2 {self.W2.shape}")
        if not all(np.all(np.isfinite(p)) for p in self.params()):
            raise ValidationError("MLP weights must be finite")

    @property
    def in_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def out_dim(self) -> int:
        return self.W2.shape[0]

    def params(self) -> list[np.ndarray]:
        return [self.W1, self.b1, self.W2, self.b2]

    def copy(self) -> MlpWeights:
        return MlpWeights(*(p.copy() for p in self.params()))

    def to_dict(self) -> dict:
        return {
            "in_dim": self.in_dim,
            "hidden_dim": self.hidden_dim,
            "out_dim": self.out_dim,
            "W1": self.W1.tolist(),
            "b1": self.b1.tolist(),
            "W2": self.W2.tolist(),
            "b2": self.b2.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> MlpWeights:
        mlp = cls(d["W1"], d["b1"], d["W2"], d["b2"])
        declared = (d.get("in_dim"), d.get("hidden_dim"), d.get("out_dim"))
        if declared != (None, None, None) and declared != (mlp.in_dim, mlp.hidden_dim, mlp.out_dim):
            raise DimMismatch(f"declared dims {declared} disagree with weight shapes")
        return mlp

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path) -> MlpWeights:
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


@dataclass
class TaskHead:
    task_id: str
    weights: MlpWeights

    def __post_init__(self) -> None:
        if self.task_id not in TASKS:
            raise ValidationError(f"unknown task {self.task_id!r}; expected one of {TASKS}")


def init_mlp(in_dim: int, out_dim: int, seed: int, hidden_dim: int | None = None) -> MlpWeights:
    """He-initialised MLP; ``hidden_dim`` defaults to ``out_dim``."""
    hidden = out_dim if hidden_dim is None else hidden_dim
    if min(in_dim, hidden, out_dim) < 1:
        raise ValidationError(f"MLP dims must be positive, got ({in_dim}, {hidden}, {out_dim})")
    rng = np.random.default_rng(seed)
    return MlpWeights(
        rng.standard_normal((hidden, in_dim)) * np.sqrt(2.0 / in_dim),
        0.1 * rng.standard_normal(hidden),
        rng.standard_normal((out_dim, hidden)) * np.sqrt(2.0 / hidden),
        0.1 * rng.standard_normal(out_dim),
    )


def zero_mlp(in_dim: int, out_dim: int, hidden_dim: int | None = None) -> MlpWeights:
    hidden = out_dim if hidden_dim is None else hidden_dim
    return MlpWeights(np.zeros((hidden, in_dim)), np.zeros(hidden), np.zeros((out_dim, hidden)), np.zeros(out_dim))


def identity_first_block(dim: int, in_dim: int | None = None) -> MlpWeights:
    """MLP returning the first ``dim`` inputs unchanged and ignoring the rest.

    ReLU cannot pass negative values through ``dim`` hidden units, so the
    hidden layer holds ``relu(x)`` and ``relu(-x)`` and the output takes their
    difference, which is exact in floating point.
    """
    in_dim = 2 * dim if in_dim is None else in_dim
    if in_dim < dim:
        raise DimMismatch(f"input width {in_dim} smaller than passthrough width {dim}")
    eye = np.eye(dim)
    W1 = np.zeros((2 * dim, in_dim))
    W1[:dim, :dim] = eye
    W1[dim:, :dim] = -eye
    W2 = np.hstack([eye, -eye])
    return MlpWeights(W1, np.zeros(2 * dim), W2, np.zeros(dim))


def _mlp_forward(x: np.ndarray, w: MlpWeights) -> tuple[np.ndarray, tuple]:
    if x.shape != (w.in_dim,):
        raise DimMismatch(f"input width {x.shape[0]} != MLP in_dim {w.in_dim}")
    z = w.W1 @ x + w.b1
    h = np.maximum(z, 0.0)
    return w.W2 @ h + w.b2, (x, z, h)


def _mlp_backward(dout: np.ndarray, w: MlpWeights, cache: tuple) -> tuple[np.ndarray, list[np.ndarray]]:
    x, z, h = cache
    dW2 = np.outer(dout, h)
    db2 = dout.copy()
    dz = (w.W2.T @ dout) * (z > 0)
    dW1 = np.outer(dz, x)
    db1 = dz
    return w.W1.T @ dz, [dW1, db1, dW2, db2]


def mlp(x, w: MlpWeights) -> np.ndarray:
    return _mlp_forward(as_feature(x), w)[0]


def _check_simplex(p: np.ndarray, tol: float = 1e-6) -> None:
    if np.any(p < -tol) or abs(p.sum() - 1.0) > tol:
        raise ValidationError("VLM output is not a probability distribution")


def reduce(vlm_dist, phi_red: MlpWeights, check_simplex: bool = False) -> np.ndarray:
    """Project a vocabulary-sized VLM output down to ``phi_red.out_dim``."""
    p = as_feature(vlm_dist, "vlm_dist")
    if check_simplex:
        _check_simplex(p)
    if p.shape[0] != phi_red.in_dim:
        raise DimMismatch(f"VLM output width {p.shape[0]} != reduction in_dim {phi_red.in_dim}")
    return _mlp_forward(p, phi_red)[0]


def _check_fuse_dims(bev: np.ndarray, reduced: np.ndarray, phi_fus: MlpWeights) -> None:
    if bev.shape != reduced.shape:
        raise DimMismatch(f"BEV width {bev.shape[0]} != reduced width {reduced.shape[0]}")
    if phi_fus.in_dim != 2 * bev.shape[0] or phi_fus.out_dim != bev.shape[0]:
        raise DimMismatch(
            f"fusion MLP must map {2 * bev.shape[0]} -> {bev.shape[0]}, "
            f"got {phi_fus.in_dim} -> {phi_fus.out_dim}"
        )


def fuse(bev, reduced, phi_fus: MlpWeights) -> np.ndarray:
    e, r = as_feature(bev, "bev"), as_feature(reduced, "reduced")
    _check_fuse_dims(e, r, phi_fus)
    return _mlp_forward(np.concatenate([e, r]), phi_fus)[0]


def _check_head(width: int, head: TaskHead) -> None:
    if head.weights.in_dim != width:
        raise DimMismatch(f"{head.task_id} head expects width {head.weights.in_dim}, got {width}")


def forward_conventional(bev, head: TaskHead) -> np.ndarray:
    """Task output from BEV features alone."""
    e = as_feature(bev, "bev")
    _check_head(e.shape[0], head)
    return _mlp_forward(e, head.weights)[0]


def forward_navigated(bev, vlm_dist, phi_red: MlpWeights, phi_fus: MlpWeights, head: TaskHead, check_simplex: bool = False) -> np.ndarray:
    """Task output from BEV features fused with the reduced VLM output."""
    return _navigated(bev, vlm_dist, phi_red, phi_fus, head, check_simplex)[0]


def _navigated(bev, vlm_dist, phi_red, phi_fus, head, check_simplex=False):
    e = as_feature(bev, "bev")
    p = as_feature(vlm_dist, "vlm_dist")
    if check_simplex:
        _check_simplex(p)
    if p.shape[0] != phi_red.in_dim:
        raise DimMismatch(f"VLM output width {p.shape[0]} != reduction in_dim {phi_red.in_dim}")
    r, c_red = _mlp_forward(p, phi_red)
    _check_fuse_dims(e, r, phi_fus)
    _check_head(phi_fus.out_dim, head)
    f, c_fus = _mlp_forward(np.concatenate([e, r]), phi_fus)
    o, c_head = _mlp_forward(f, head.weights)
    return o, (c_red, c_fus, c_head)


def navigated_loss(bev, vlm_dist, phi_red, phi_fus, head, scale: float = 1.0) -> float:
    """``scale * ||o_nav||^2``."""
    o = forward_navigated(bev, vlm_dist, phi_red, phi_fus, head)
    return float(scale * o @ o)


def navigated_loss_grads(bev, vlm_dist, phi_red: MlpWeights, phi_fus: MlpWeights, head: TaskHead, scale: float = 1.0) -> dict[str, list[np.ndarray]]:
    """Backpropagated gradients of :func:`navigated_loss` for every weight array.

    Keys are ``"phi_red"``, ``"phi_fus"`` and ``"head"``; each value lists the
    gradients of ``W1, b1, W2, b2``.
    """
    o, (c_red, c_fus, c_head) = _navigated(bev, vlm_dist, phi_red, phi_fus, head)
    d_f, g_head = _mlp_backward(2.0 * scale * o, head.weights, c_head)
    d_cat, g_fus = _mlp_backward(d_f, phi_fus, c_fus)
    bev_dim = phi_fus.out_dim
    _, g_red = _mlp_backward(d_cat[bev_dim:], phi_red, c_red)
    return {"phi_red": g_red, "phi_fus": g_fus, "head": g_head}


def grad_check(bev, vlm_dist, phi_red: MlpWeights, phi_fus: MlpWeights, head: TaskHead, h: float = FD_STEP, scale: float = 1.0) -> float:
    """Max relative error between backprop and central differences over all weights."""
    analytic = navigated_loss_grads(bev, vlm_dist, phi_red, phi_fus, head, scale)
    # difference-quotient roundoff grows with the loss value
    floor = loss_floor(navigated_loss(bev, vlm_dist, phi_red, phi_fus, head, scale))
    worst = 0.0
    for name, mlp_w in (("phi_red", phi_red), ("phi_fus", phi_fus), ("head", head.weights)):
        for param, grad in zip(mlp_w.params(), analytic[name]):
            numeric = central_difference(lambda: navigated_loss(bev, vlm_dist, phi_red, phi_fus, head, scale), param, h)
            worst = max(worst, max_relative_error(grad, numeric, floor))
    return worst


@dataclass
class FusionInstance:
    bev: np.ndarray
    vlm_dist: np.ndarray
    phi_red: MlpWeights
    phi_fus: MlpWeights
    head: TaskHead


def random_instance(vocab_dim: int = 64, bev_dim: int = 8, seed: int = 0, task: str = "planning", head_out: int | None = None) -> FusionInstance:
    """Seeded stand-ins for BEV features, a VLM softmax output and all weights."""
    if vocab_dim < 1 or bev_dim < 1:
        raise ValidationError(f"dims must be positive, got vocab_dim={vocab_dim}, bev_dim={bev_dim}")
    rng = np.random.default_rng(seed)
    bev = rng.standard_normal(bev_dim)
    logits = 2.0 * rng.standard_normal(vocab_dim)
    p = np.exp(logits - logits.max())
    p /= p.sum()
    ss = np.random.SeedSequence(seed).spawn(3)
    phi_red = init_mlp(vocab_dim, bev_dim, int(ss[0].generate_state(1)[0]))
    # the reduced block is tiny next to unit-scale BEV features; scale it up
    # so the fusion path actually depends on the VLM output
    phi_red.W1 *= np.sqrt(vocab_dim)
    phi_fus = init_mlp(2 * bev_dim, bev_dim, int(ss[1].generate_state(1)[0]))
    head = TaskHead(task, init_mlp(bev_dim, head_out or bev_dim, int(ss[2].generate_state(1)[0])))
    return FusionInstance(bev, p, phi_red, phi_fus, head)
