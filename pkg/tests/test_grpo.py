import math

import numpy as np
import pytest

from tau_toolkit.core import AnomalyClass, TauError
from tau_toolkit.grpo import (
    INVALID_INDEX,
    GrpoConfig,
    Response,
    RolloutGroup,
    ToyPolicy,
    binary_error_counts,
    clipped_surrogate,
    greedy_predictions,
    group_advantages,
    grpo_loss_and_grad,
    kl_to_reference,
    make_synthetic_env,
    parse_class_mix,
    policy_ratio,
    train_toy_grpo,
)

from oracles import kl_oracle, standardize_oracle


def test_ratio_identity_and_clamp():
    assert policy_ratio(-1.3, -1.3) == 1.0
    assert policy_ratio(0.0, -100.0) == math.exp(30)
    assert policy_ratio(-100.0, 0.0) == math.exp(-30)
    with pytest.raises(ValueError):
        policy_ratio(float("nan"), 0.0)


def test_advantages_reference_group():
    got = group_advantages([1.5, -0.75, -1.5, 1.5])
    expected = [0.9801960514993455, -0.7001400367852468, -1.2602520662134442, 0.9801960514993455]
    assert got == pytest.approx(expected, abs=1e-12)
    assert got == pytest.approx(standardize_oracle([1.5, -0.75, -1.5, 1.5], 1e-8), abs=1e-12)


def test_advantages_degenerate():
    assert group_advantages([-2.0] * 8) == [0.0] * 8
    with pytest.raises(ValueError):
        group_advantages([1.0])


@pytest.mark.parametrize("ratio, adv, expected", [
    (1.5, 1.0, 1.2),
    (0.5, 1.0, 0.5),
    (1.5, -1.0, -1.5),
    (0.5, -1.0, -0.8),
    (1.1, 2.0, 2.2),
])
def test_clipped_surrogate(ratio, adv, expected):
    assert clipped_surrogate(ratio, adv, 0.2) == pytest.approx(expected)


def test_kl_two_point():
    policy = ToyPolicy(np.array([[math.log(0.9), math.log(0.1)]]))
    ref = ToyPolicy(np.zeros((1, 2)))
    x = np.array([1.0])
    assert kl_to_reference(policy, ref, x) == pytest.approx(0.3680642071684971, abs=1e-12)
    assert kl_to_reference(policy, ref, x) == pytest.approx(kl_oracle([0.9, 0.1], [0.5, 0.5]), abs=1e-12)
    assert kl_to_reference(policy, policy, x) == 0.0


def test_kl_shape_mismatch():
    with pytest.raises(ValueError):
        kl_to_reference(ToyPolicy.uniform(3), ToyPolicy.uniform(4), np.ones(3))


def _group(policy, rng, size=4):
    x = rng.standard_normal(policy.num_features)
    lp = policy.log_probs(x)
    g = RolloutGroup("q", x)
    for o in rng.integers(0, 5, size=size):
        g.responses.append(Response(int(o), float(lp[o]), float(rng.choice([-2, -1.5, -1.25, -0.75, 1.5]))))
    g.assign_advantages()
    return g


def test_loss_at_old_policy_equals_negative_mean_advantage():
    rng = np.random.default_rng(1)
    policy = ToyPolicy(rng.standard_normal((4, 5)))
    g = _group(policy, rng)
    loss, _ = grpo_loss_and_grad(g, policy, policy, GrpoConfig(beta=0.04))
    assert loss == pytest.approx(-np.mean([r.advantage for r in g.responses]), abs=1e-12)
    assert all(r.logp_new == pytest.approx(r.logp_old) for r in g.responses)


def test_group_validation():
    policy = ToyPolicy.uniform(3)
    g = RolloutGroup("q", np.ones(3), [Response(0, -1.0, 1.0, 0.0)])
    with pytest.raises(ValueError):
        grpo_loss_and_grad(g, policy, policy, GrpoConfig())
    g.responses.append(Response(1, 0.5, 1.0, 0.0))
    with pytest.raises(ValueError):
        grpo_loss_and_grad(g, policy, policy, GrpoConfig())
    g = RolloutGroup("q", np.ones(3), [Response(0, -1.0, 1.0), Response(1, -1.0, 0.0)])
    with pytest.raises(ValueError):
        grpo_loss_and_grad(g, policy, policy, GrpoConfig())


def test_config_validation():
    with pytest.raises(ValueError):
        GrpoConfig(epsilon=0)
    with pytest.raises(ValueError):
        GrpoConfig(group_size=1)


def test_class_mix():
    mix = parse_class_mix("1:1:2:0")
    assert mix[AnomalyClass.C] == 0.5 and mix[AnomalyClass.D] == 0.0
    for bad in ("1:1:1", "0:0:0:0", "-1:1:1:1"):
        with pytest.raises(ValueError):
            parse_class_mix(bad)


def test_all_b_environment_converges():
    env = make_synthetic_env(200, {c: float(c is AnomalyClass.B) for c in AnomalyClass}, seed=3)
    policy, curve = train_toy_grpo(env, GrpoConfig(seed=3), iterations=150, learning_rate=0.5)
    preds = greedy_predictions(policy, env.contexts)
    assert sum(1 for p in preds if p == 1) / len(preds) >= 0.95
    assert curve[-1].mean_reward > curve[0].mean_reward


def test_training_deterministic():
    env = make_synthetic_env(100, seed=0)
    p1, c1 = train_toy_grpo(env, GrpoConfig(seed=5), 20, 0.5)
    p2, c2 = train_toy_grpo(env, GrpoConfig(seed=5), 20, 0.5)
    assert np.array_equal(p1.weights, p2.weights)
    assert [s.mean_reward for s in c1] == [s.mean_reward for s in c2]


def test_training_input_validation():
    env = make_synthetic_env(10)
    with pytest.raises(ValueError):
        train_toy_grpo(env, GrpoConfig(), 0, 0.1)
    with pytest.raises(ValueError):
        make_synthetic_env(0)


def test_error_counts_for_always_normal_policy():
    env = make_synthetic_env(300, seed=1)
    w = np.zeros((env.num_features, 5))
    w[-1, 0] = 10.0
    fn, fp = binary_error_counts(ToyPolicy(w), env)
    assert fp == 0
    assert fn == sum(1 for y in env.labels if y.is_abnormal)
    w[-1, :] = 0
    w[-1, INVALID_INDEX] = 10.0
    fn, fp = binary_error_counts(ToyPolicy(w), env)
    assert fn + fp == len(env)


def test_empty_env_rejected():
    env = make_synthetic_env(5)
    env.contexts = env.contexts[:0]
    env.labels = []
    with pytest.raises(TauError):
        train_toy_grpo(env, GrpoConfig(), 1, 0.1)
