"""Navigation-guided preference optimisation on toy autoregressive models.

The learnable reward model and the frozen reference model are n-gram token
models stored as logit tables. A preference tuple pairs a detailed answer with
summaries decoded from each model; the summary reward adds a mutual-information
bonus that favours summaries which are short (likely) and make the navigation
guidance likely. Gradients are exact and treat the decoded summaries as fixed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyBatch, EmptySequence, TokenOutOfRange, ValidationError
from .gradcheck import FD_STEP, central_difference, loss_floor, max_relative_error

BOS = 0
UNK = 1
DEFAULT_MAX_LEN = 8
UNDERFLOW_FLOOR = -700.0

TokenSeq = tuple[int, ...]


def _log_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def log_sigmoid(z: float) -> float:
    return -float(np.logaddexp(0.0, -z))


def sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@dataclass
class ToyLM:
    """n-gram token model; row ``r`` of ``logits`` scores the token after history ``r``.

    With ``order`` k the history is the last k tokens (left-padded with BOS),
    flattened base ``vocab_size``; order 1 is a bigram table of shape V x V.
    """

    vocab_size: int
    logits: np.ndarray
    order: int = 1

    def __post_init__(self) -> None:
        self.logits = np.asarray(self.logits, dtype=float)
        if self.vocab_size < 2:
            raise ValidationError("vocab_size must be at least 2")
        if self.order < 1:
            raise ValidationError("order must be at least 1")
        shape = (self.vocab_size**self.order, self.vocab_size)
        if self.logits.shape != shape:
            raise ValidationError(f"logits shape {self.logits.shape} != {shape}")
        if not np.all(np.isfinite(self.logits)):
            raise ValidationError("logits must be finite")

    def copy(self) -> ToyLM:
        return ToyLM(self.vocab_size, self.logits.copy(), self.order)

    def log_probs(self) -> np.ndarray:
        return _log_softmax(self.logits)

    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs())

    def row(self, history: Sequence[int]) -> int:
        padded = [BOS] * self.order + list(history)
        r = 0
        for tok in padded[len(padded) - self.order:]:
            r = r * self.vocab_size + tok
        return r

    def check_tokens(self, seq: Iterable[int]) -> None:
        for tok in seq:
            if not 0 <= tok < self.vocab_size:
                raise TokenOutOfRange(f"token {tok} outside [0, {self.vocab_size})")

    def to_dict(self) -> dict:
        d = {"vocab_size": self.vocab_size, "logits": self.logits.ravel().tolist()}
        if self.order != 1:
            d["order"] = self.order
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ToyLM:
        v, order = int(d["vocab_size"]), int(d.get("order", 1))
        logits = np.asarray(d["logits"], dtype=float).reshape(v**order, v)
        return cls(v, logits, order)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path) -> ToyLM:
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def uniform_lm(vocab_size: int, order: int = 1) -> ToyLM:
    return ToyLM(vocab_size, np.zeros((vocab_size**order, vocab_size)), order)


def random_lm(vocab_size: int, seed: int, scale: float = 1.0, order: int = 1) -> ToyLM:
    rng = np.random.default_rng(seed)
    return ToyLM(vocab_size, scale * rng.standard_normal((vocab_size**order, vocab_size)), order)


@dataclass(frozen=True)
class PreferenceTuple:
    """One element of the preference dataset.

    ``context`` stands for the images plus question, encoded as tokens.
    """

    context: TokenSeq
    answer: TokenSeq
    summary_reward: TokenSeq
    summary_ref: TokenSeq
    guidance: TokenSeq

    def __post_init__(self) -> None:
        for name in ("context", "answer", "summary_reward", "summary_ref", "guidance"):
            object.__setattr__(self, name, tuple(int(t) for t in getattr(self, name)))

    def check(self, vocab_size: int) -> None:
        for name in ("context", "answer", "summary_reward", "summary_ref", "guidance"):
            for tok in getattr(self, name):
                if not 0 <= tok < vocab_size:
                    raise TokenOutOfRange(f"{name} token {tok} outside [0, {vocab_size})")

    def to_dict(self) -> dict:
        return {
            "context": list(self.context),
            "answer": list(self.answer),
            "summary_reward": list(self.summary_reward),
            "summary_ref": list(self.summary_ref),
            "guidance": list(self.guidance),
        }

    @classmethod
    def from_dict(cls, d: dict) -> PreferenceTuple:
        return cls(d["context"], d["answer"], d["summary_reward"], d["summary_ref"], d["guidance"])


@dataclass(frozen=True)
class NpoConfig:
    alpha: float = 0.6
    lr: float = 1e-4
    epochs: int = 10
    underflow_floor: float = UNDERFLOW_FLOOR
    weight_decay: float = 0.0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    steps_per_epoch: int = 1
    # tokens of the summarisation prompt, prepended to the answer when decoding summaries
    summary_prefix: TokenSeq = field(default=())

    def __post_init__(self) -> None:
        if self.alpha < 0:
            raise ValidationError(f"alpha must be >= 0, got {self.alpha}")
        if self.epochs < 0 or self.steps_per_epoch < 1:
            raise ValidationError("epochs must be >= 0 and steps_per_epoch >= 1")
        if not self.lr >= 0:
            raise ValidationError(f"learning rate must be >= 0, got {self.lr}")


# ---------------------------------------------------------------- scoring


def _transitions(model: ToyLM, context: Sequence[int], seq: Sequence[int]) -> list[tuple[int, int]]:
    history = list(context)
    out = []
    for tok in seq:
        out.append((model.row(history), tok))
        history.append(tok)
    return out


def seq_logprob(model: ToyLM, context: Sequence[int], seq: Sequence[int], log_probs: np.ndarray | None = None) -> float:
    """log p(seq | context); an empty context starts from BOS."""
    model.check_tokens(context)
    model.check_tokens(seq)
    lp = model.log_probs() if log_probs is None else log_probs
    return math.fsum(lp[r, t] for r, t in _transitions(model, context, seq))


def _seq_logprob_grad(model: ToyLM, context, seq, probs: np.ndarray, out: np.ndarray, scale: float) -> None:
    # d log p / d logits[r] = onehot(t) - softmax(logits[r]) per transition
    for r, t in _transitions(model, context, seq):
        out[r] -= scale * probs[r]
        out[r, t] += scale


def greedy_decode(model: ToyLM, context: Sequence[int], max_len: int) -> TokenSeq:
    if max_len < 1:
        raise ValidationError(f"max_len must be >= 1, got {max_len}")
    model.check_tokens(context)
    history = list(context)
    out = []
    for _ in range(max_len):
        tok = int(np.argmax(model.logits[model.row(history)]))
        history.append(tok)
        out.append(tok)
    return tuple(out)


def _mi_parts(model: ToyLM, s, g, floor: float, log_probs: np.ndarray) -> tuple[float, float, float]:
    if not s or not g:
        raise EmptySequence("summary and guidance must be non-empty")
    lp_s = seq_logprob(model, (), s, log_probs)
    lp_g_s = seq_logprob(model, s, g, log_probs)
    p_s = 0.0 if lp_s < floor else math.exp(lp_s)
    return lp_s, lp_g_s, p_s


def mutual_info_score(
    model: ToyLM,
    s: Sequence[int],
    g: Sequence[int],
    floor: float = UNDERFLOW_FLOOR,
    log_probs: np.ndarray | None = None,
) -> float:
    """-log p(s) - p(s) log p(g | s); the product term is dropped once log p(s) < floor."""
    lp = model.log_probs() if log_probs is None else log_probs
    lp_s, lp_g_s, p_s = _mi_parts(model, s, g, floor, lp)
    return -lp_s - p_s * lp_g_s


def _mi_grad(model: ToyLM, s, g, floor: float, lp: np.ndarray, probs: np.ndarray, out: np.ndarray, scale: float) -> None:
    lp_s, lp_g_s, p_s = _mi_parts(model, s, g, floor, lp)
    # d mi = -(1 + p_s * log p(g|s)) d log p(s) - p_s d log p(g|s)
    _seq_logprob_grad(model, (), s, probs, out, -scale * (1.0 + p_s * lp_g_s))
    if p_s:
        _seq_logprob_grad(model, s, g, probs, out, -scale * p_s)


def reward_summary(reward: ToyLM, ref: ToyLM, t: PreferenceTuple, alpha: float, floor: float = UNDERFLOW_FLOOR) -> float:
    lp_r, lp_f = reward.log_probs(), ref.log_probs()
    r = seq_logprob(reward, t.context, t.summary_reward, lp_r) - seq_logprob(ref, t.context, t.summary_ref, lp_f)
    if alpha:
        r += alpha * (
            mutual_info_score(reward, t.summary_reward, t.guidance, floor, lp_r)
            - mutual_info_score(ref, t.summary_ref, t.guidance, floor, lp_f)
        )
    return r


def reward_answer(reward: ToyLM, ref: ToyLM, t: PreferenceTuple) -> float:
    return seq_logprob(reward, t.context, t.answer) - seq_logprob(ref, t.context, t.answer)


def _check_batch(reward: ToyLM, ref: ToyLM, batch: Sequence[PreferenceTuple]) -> None:
    if not batch:
        raise EmptyBatch("preference batch is empty")
    if reward.vocab_size != ref.vocab_size or reward.order != ref.order:
        raise ValidationError("reward and reference models must share vocabulary and order")
    for t in batch:
        t.check(reward.vocab_size)


def _margins(reward: ToyLM, ref: ToyLM, batch: Sequence[PreferenceTuple], cfg: NpoConfig) -> list[float]:
    lp_r, lp_f = reward.log_probs(), ref.log_probs()
    out = []
    for t in batch:
        r_s = seq_logprob(reward, t.context, t.summary_reward, lp_r) - seq_logprob(ref, t.context, t.summary_ref, lp_f)
        if cfg.alpha:
            r_s += cfg.alpha * (
                mutual_info_score(reward, t.summary_reward, t.guidance, cfg.underflow_floor, lp_r)
                - mutual_info_score(ref, t.summary_ref, t.guidance, cfg.underflow_floor, lp_f)
            )
        r_a = seq_logprob(reward, t.context, t.answer, lp_r) - seq_logprob(ref, t.context, t.answer, lp_f)
        out.append(r_s - r_a)
    return out


def npo_tuple_losses(reward: ToyLM, ref: ToyLM, batch: Sequence[PreferenceTuple], cfg: NpoConfig = NpoConfig()) -> list[float]:
    _check_batch(reward, ref, batch)
    return [-log_sigmoid(z) for z in _margins(reward, ref, batch, cfg)]


def npo_loss(reward: ToyLM, ref: ToyLM, batch: Sequence[PreferenceTuple], cfg: NpoConfig = NpoConfig()) -> float:
    """Mean of -log sigmoid(r_s - r_a) over the batch."""
    losses = npo_tuple_losses(reward, ref, batch, cfg)
    return math.fsum(losses) / len(losses)


def npo_grad(reward: ToyLM, ref: ToyLM, batch: Sequence[PreferenceTuple], cfg: NpoConfig = NpoConfig()) -> np.ndarray:
    """Gradient of :func:`npo_loss` with respect to ``reward.logits``."""
    _check_batch(reward, ref, batch)
    lp = reward.log_probs()
    probs = np.exp(lp)
    grad = np.zeros_like(reward.logits)
    margins = _margins(reward, ref, batch, cfg)
    for t, z in zip(batch, margins):
        # d(-log sigmoid(z))/dz = sigmoid(z) - 1, averaged over the batch
        c = (sigmoid(z) - 1.0) / len(batch)
        _seq_logprob_grad(reward, t.context, t.summary_reward, probs, grad, c)
        if cfg.alpha:
            _mi_grad(reward, t.summary_reward, t.guidance, cfg.underflow_floor, lp, probs, grad, c * cfg.alpha)
        _seq_logprob_grad(reward, t.context, t.answer, probs, grad, -c)
    return grad


def npo_grad_check(reward: ToyLM, ref: ToyLM, batch: Sequence[PreferenceTuple], cfg: NpoConfig = NpoConfig(), h: float = FD_STEP) -> float:
    """Max relative error of :func:`npo_grad` against central differences."""
    analytic = npo_grad(reward, ref, batch, cfg)
    probe = reward.copy()
    numeric = central_difference(lambda: npo_loss(probe, ref, batch, cfg), probe.logits, h)
    return max_relative_error(analytic, numeric, loss_floor(npo_loss(reward, ref, batch, cfg)))


# ---------------------------------------------------------------- training


class AdamW:
    """Adam with decoupled weight decay on a single parameter array."""

    def __init__(self, lr: float, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m: np.ndarray | None = None
        self.v: np.ndarray | None = None
        self.t = 0

    def step(self, param: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(param)
            self.v = np.zeros_like(param)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        decayed = param * (1.0 - self.lr * self.weight_decay)
        return decayed - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def regenerate_summaries(reward: ToyLM, dataset: Sequence[PreferenceTuple], prefix: Sequence[int] = ()) -> list[PreferenceTuple]:
    """Re-decode each reward-model summary from ``prefix + answer``, keeping its length."""
    out = []
    for t in dataset:
        n = len(t.summary_reward) or DEFAULT_MAX_LEN
        s = greedy_decode(reward, tuple(prefix) + t.answer, n)
        out.append(replace(t, summary_reward=s))
    return out


@dataclass
class TrainResult:
    model: ToyLM
    losses: list[float]
    dataset: list[PreferenceTuple]


def train(reward: ToyLM, ref: ToyLM, dataset: Sequence[PreferenceTuple], cfg: NpoConfig = NpoConfig()) -> TrainResult:
    """Full-batch AdamW on the NPO loss.

    At the start of every epoch the reward-model summaries are decoded again
    from the current model. ``losses`` holds the loss at each epoch start
    followed by the loss of the final model, so it has ``epochs + 1`` entries.
    """
    _check_batch(reward, ref, dataset)
    model = reward.copy()
    if cfg.epochs == 0:
        return TrainResult(model, [npo_loss(model, ref, dataset, cfg)], list(dataset))
    opt = AdamW(cfg.lr, cfg.betas, cfg.eps, cfg.weight_decay)
    losses = []
    data = list(dataset)
    for _ in range(cfg.epochs):
        data = regenerate_summaries(model, data, cfg.summary_prefix)
        losses.append(npo_loss(model, ref, data, cfg))
        for _ in range(cfg.steps_per_epoch):
            model.logits = opt.step(model.logits, npo_grad(model, ref, data, cfg))
    data = regenerate_summaries(model, data, cfg.summary_prefix)
    losses.append(npo_loss(model, ref, data, cfg))
    return TrainResult(model, losses, data)


def toy_dataset(
    reward: ToyLM,
    ref: ToyLM,
    size: int,
    seed: int,
    max_len: int = 6,
    prefix: Sequence[int] = (),
) -> list[PreferenceTuple]:
    """Random contexts, answers and guidance with summaries decoded from each model."""
    if reward.vocab_size != ref.vocab_size:
        raise ValidationError("models must share a vocabulary")
    rng = np.random.default_rng(seed)
    V = reward.vocab_size
    out = []
    for _ in range(size):
        def draw(lo: int = 1) -> TokenSeq:
            return tuple(int(x) for x in rng.integers(1, V, size=int(rng.integers(lo, max_len + 1))))

        context, answer, guidance = draw(), draw(2), draw()
        s_len = int(rng.integers(1, max(2, len(answer))))
        out.append(
            PreferenceTuple(
                context,
                answer,
                greedy_decode(reward, tuple(prefix) + answer, s_len),
                greedy_decode(ref, tuple(prefix) + answer, s_len),
                guidance,
            )
        )
    return out
