"""Group-relative policy optimization on a toy softmax policy over {A, B, C, D, Invalid}.

The loss returned by :func:`grpo_loss_and_grad` is the *negated* GRPO
objective, so lower is better and plain gradient descent improves the policy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import AnomalyClass, ParsedLabel, TauError
from .rewards import classification_reward

OUTPUTS: tuple[Optional[AnomalyClass], ...] = (
    AnomalyClass.A, AnomalyClass.B, AnomalyClass.C, AnomalyClass.D, None,
)
INVALID_INDEX = 4
NUM_OUTPUTS = len(OUTPUTS)
LOG_RATIO_CLAMP = 30.0


@dataclass(frozen=True)
class GrpoConfig:
    epsilon: float = 0.2
    beta: float = 0.04
    group_size: int = 8
    advantage_epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if not self.beta >= 0:
            raise ValueError("beta must be >= 0")
        if not (isinstance(self.group_size, int) and self.group_size >= 2):
            raise ValueError("group_size must be an integer >= 2")
        if not self.advantage_epsilon >= 0:
            raise ValueError("advantage_epsilon must be >= 0")


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass
class ToyPolicy:
    """Linear-softmax policy: logits = features @ weights."""

    weights: np.ndarray
    role: str = "current"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValueError("weights must be a 2-D matrix [num_features x num_outputs]")

    @classmethod
    def uniform(cls, num_features: int, num_outputs: int = NUM_OUTPUTS, role: str = "current") -> "ToyPolicy":
        return cls(np.zeros((num_features, num_outputs)), role)

    @property
    def num_features(self) -> int:
        return self.weights.shape[0]

    @property
    def num_outputs(self) -> int:
        return self.weights.shape[1]

    def copy(self, role: Optional[str] = None) -> "ToyPolicy":
        return ToyPolicy(self.weights.copy(), role or self.role)

    def log_probs(self, context) -> np.ndarray:
        x = np.asarray(context, dtype=np.float64)
        if x.shape[-1] != self.num_features:
            raise ValueError(f"context has {x.shape[-1]} features, policy expects {self.num_features}")
        return _log_softmax(x @ self.weights)

    def probs(self, context) -> np.ndarray:
        return np.exp(self.log_probs(context))


def policy_ratio(logp_new: float, logp_old: float) -> float:
    if not (math.isfinite(logp_new) and math.isfinite(logp_old)):
        raise ValueError("log-probabilities must be finite")
    diff = min(max(logp_new - logp_old, -LOG_RATIO_CLAMP), LOG_RATIO_CLAMP)
    return math.exp(diff)


def group_advantages(rewards: Sequence[float], advantage_epsilon: float = 1e-8) -> list[float]:
    """Standardize rewards within the group: (r - mean) / (population std + eps).

    A group with identical rewards carries no signal and gets all-zero advantages.
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.size < 2:
        raise ValueError("group advantages need at least 2 rewards")
    std = r.std()
    if std == 0.0:
        return [0.0] * r.size
    return list((r - r.mean()) / (std + advantage_epsilon))


def clipped_surrogate(ratio: float, advantage: float, epsilon: float) -> float:
    clipped = min(max(ratio, 1.0 - epsilon), 1.0 + epsilon)
    return min(ratio * advantage, clipped * advantage)


def kl_to_reference(policy: ToyPolicy, reference: ToyPolicy, context) -> float:
    """Exact KL(policy || reference) of the categorical output distributions at ``context``."""
    if policy.weights.shape != reference.weights.shape:
        raise ValueError(f"policy shapes differ: {policy.weights.shape} vs {reference.weights.shape}")
    lp, lq = policy.log_probs(context), reference.log_probs(context)
    return max(float(np.sum(np.exp(lp) * (lp - lq))), 0.0)


@dataclass
class Response:
    output: int  # index into OUTPUTS
    logp_old: float
    reward: float = 0.0
    advantage: Optional[float] = None
    logp_new: Optional[float] = None

    @property
    def label(self) -> ParsedLabel:
        cls = OUTPUTS[self.output]
        return ParsedLabel(cls, cls.value if cls else "<invalid>")


@dataclass
class RolloutGroup:
    question_id: str
    context: np.ndarray
    responses: list[Response] = field(default_factory=list)

    def validate(self) -> None:
        if len(self.responses) < 2:
            raise ValueError("a rollout group needs at least 2 responses")
        for resp in self.responses:
            if not (math.isfinite(resp.logp_old) and resp.logp_old <= 0.0):
                raise ValueError(f"invalid old log-probability {resp.logp_old}")

    def assign_advantages(self, advantage_epsilon: float = 1e-8) -> None:
        for resp, adv in zip(self.responses, group_advantages([r.reward for r in self.responses], advantage_epsilon)):
            resp.advantage = adv


def grpo_loss_and_grad(group: RolloutGroup, policy: ToyPolicy, reference: ToyPolicy,
                       config: GrpoConfig) -> tuple[float, np.ndarray]:
    """Negated clipped-surrogate objective with KL penalty, and its exact gradient in the weights.

    ``logp_old`` and the advantages are constants. Where the clipped branch is
    active and the ratio lies outside the clip band, the gradient is zero.
    Fills in ``logp_new`` on every response.
    """
    group.validate()
    if policy.weights.shape != reference.weights.shape:
        raise ValueError("policy and reference shapes differ")
    x = np.asarray(group.context, dtype=np.float64)
    if x.shape != (policy.num_features,):
        raise ValueError(f"context shape {x.shape} does not match policy features {policy.num_features}")
    lp = policy.log_probs(x)
    p = np.exp(lp)
    eps = config.epsilon
    G = len(group.responses)

    objective = 0.0
    dlogits = np.zeros_like(p)
    for resp in group.responses:
        if resp.advantage is None:
            raise ValueError(f"response in group {group.question_id} has no advantage")
        resp.logp_new = float(lp[resp.output])
        diff = resp.logp_new - resp.logp_old
        ratio = policy_ratio(resp.logp_new, resp.logp_old)
        A = resp.advantage
        unclipped = ratio * A
        clipped = min(max(ratio, 1.0 - eps), 1.0 + eps) * A
        objective += min(unclipped, clipped)
        # gradient flows when the unclipped term is selected or the ratio sits inside the band
        inside_band = 1.0 - eps <= ratio <= 1.0 + eps
        live = (unclipped <= clipped) or inside_band
        if live and abs(diff) < LOG_RATIO_CLAMP:
            dlogp = -p.copy()
            dlogp[resp.output] += 1.0
            dlogits += A * ratio * dlogp
    objective /= G
    dlogits /= G

    if config.beta:
        lq = reference.log_probs(x)
        kl = float(np.sum(p * (lp - lq)))
        objective -= config.beta * kl
        dlogits -= config.beta * (p * (lp - lq) - p * kl)

    loss = -objective
    grad = -np.outer(x, dlogits)
    return loss, grad


# --- synthetic environment and training loop ---


@dataclass
class SyntheticEnv:
    contexts: np.ndarray  # [n, num_features]
    labels: list[AnomalyClass]
    class_mix: dict[AnomalyClass, float]

    def __post_init__(self):
        self.contexts = np.asarray(self.contexts, dtype=np.float64)
        if len(self.contexts) != len(self.labels):
            raise ValueError("contexts and labels differ in length")
        if abs(sum(self.class_mix.values()) - 1.0) > 1e-9:
            raise ValueError("class_mix proportions must sum to 1")

    @property
    def num_features(self) -> int:
        return self.contexts.shape[1]

    def __len__(self) -> int:
        return len(self.labels)


def parse_class_mix(text: str) -> dict[AnomalyClass, float]:
    """Parse ``"A:B:C:D"`` weights (e.g. ``"1:1:1:1"``) into normalized proportions."""
    parts = text.split(":")
    if len(parts) != 4:
        raise ValueError(f"class mix needs four ':'-separated weights, got {text!r}")
    weights = [float(p) for p in parts]
    if any(w < 0 for w in weights) or sum(weights) <= 0:
        raise ValueError(f"class mix weights must be non-negative with a positive sum: {text!r}")
    total = sum(weights)
    return {cls: w / total for cls, w in zip(AnomalyClass, weights)}


def make_synthetic_env(n_contexts: int = 400, class_mix: Optional[dict] = None, num_features: int = 5,
                       noise: float = 0.8, seed: int = 0) -> SyntheticEnv:
    """Noisy one-hot class prototypes plus a constant bias feature.

    The noise makes neighbouring classes overlap, so a trained policy still
    faces ambiguous contexts and has to trade misses against false alarms.
    """
    if n_contexts < 1:
        raise ValueError("n_contexts must be >= 1")
    if num_features < 5:
        raise ValueError("num_features must be >= 5 (four class directions plus bias)")
    mix = class_mix or {c: 0.25 for c in AnomalyClass}
    rng = np.random.default_rng(seed)
    classes = list(AnomalyClass)
    probs = np.array([mix.get(c, 0.0) for c in classes])
    idx = rng.choice(4, size=n_contexts, p=probs / probs.sum())
    protos = np.zeros((4, num_features))
    for k in range(4):
        protos[k, k] = 1.5
    x = protos[idx] + noise * rng.standard_normal((n_contexts, num_features))
    x[:, -1] = 1.0
    return SyntheticEnv(x, [classes[i] for i in idx], dict(zip(classes, probs / probs.sum())))


@dataclass
class IterationStats:
    iteration: int
    mean_reward: float
    fn_rate: float
    fp_rate: float


def _error_rates(outputs: Sequence[int], labels: Sequence[AnomalyClass]) -> tuple[float, float]:
    """(fn_rate, fp_rate); Invalid counts as a miss on either side."""
    abn = [o for o, y in zip(outputs, labels) if y.is_abnormal]
    nor = [o for o, y in zip(outputs, labels) if not y.is_abnormal]
    fn = sum(1 for o in abn if o in (0, INVALID_INDEX))
    fp = sum(1 for o in nor if o != 0)
    return (fn / len(abn) if abn else 0.0, fp / len(nor) if nor else 0.0)


def greedy_predictions(policy: ToyPolicy, contexts: np.ndarray) -> list[int]:
    return [int(i) for i in np.argmax(policy.log_probs(contexts), axis=-1)]


def binary_error_counts(policy: ToyPolicy, env: SyntheticEnv) -> tuple[int, int]:
    """(fn, fp) counts of the greedy policy on ``env``."""
    preds = greedy_predictions(policy, env.contexts)
    fn = sum(1 for o, y in zip(preds, env.labels) if y.is_abnormal and o in (0, INVALID_INDEX))
    fp = sum(1 for o, y in zip(preds, env.labels) if not y.is_abnormal and o != 0)
    return fn, fp


def train_toy_grpo(env: SyntheticEnv, config: GrpoConfig, iterations: int, learning_rate: float,
                   batch_size: int = 16, inner_steps: int = 1,
                   policy: Optional[ToyPolicy] = None) -> tuple[ToyPolicy, list[IterationStats]]:
    """Run GRPO against the classification reward; returns the policy and per-iteration stats.

    Each iteration freezes the old policy, samples ``batch_size`` contexts and
    ``group_size`` outputs per context, and takes ``inner_steps`` gradient steps.
    The reference policy is the initial one.
    """
    if len(env) == 0:
        raise TauError("synthetic environment has no contexts")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    rng = np.random.default_rng(config.seed)
    policy = policy.copy("current") if policy is not None else ToyPolicy.uniform(env.num_features)
    reference = policy.copy("reference")
    curve: list[IterationStats] = []

    for it in range(iterations):
        old = policy.copy("old")
        picks = rng.integers(0, len(env), size=batch_size)
        groups, rewards, outputs, labels = [], [], [], []
        for q in picks:
            x, y = env.contexts[q], env.labels[q]
            old_lp = old.log_probs(x)
            sampled = rng.choice(NUM_OUTPUTS, size=config.group_size, p=np.exp(old_lp))
            group = RolloutGroup(str(q), x)
            for o in sampled:
                r = classification_reward(OUTPUTS[o], y)
                group.responses.append(Response(int(o), float(old_lp[o]), r))
                rewards.append(r)
                outputs.append(int(o))
                labels.append(y)
            group.assign_advantages(config.advantage_epsilon)
            groups.append(group)
        for _ in range(inner_steps):
            grad = np.zeros_like(policy.weights)
            for group in groups:
                grad += grpo_loss_and_grad(group, policy, reference, config)[1]
            policy.weights -= learning_rate * grad / len(groups)
        fn_rate, fp_rate = _error_rates(outputs, labels)
        curve.append(IterationStats(it, float(np.mean(rewards)), fn_rate, fp_rate))
    return policy, curve
