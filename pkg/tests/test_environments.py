import numpy as np
import pytest

from rdp_forge.environments import (
    ENVIRONMENTS,
    BehaviorPolicy,
    generate_dataset,
    ground_truth_rdp,
    make_env,
    optimal_return,
    uniform_policy,
)
from rdp_forge.exceptions import UnsupportedEnvironmentError, UsageError
from rdp_forge.oracles import pair_distance


def obs_code(a, sym):
    return int(a.obs_index([a.symbol_index(1, sym)]))


def test_tmaze_reset_signal_is_a_fair_coin():
    gt = ground_truth_rdp(make_env("tmaze", horizon=5, length=1))
    a = gt.alphabet
    p = gt.theta_o[0, a.start_index]
    assert p[obs_code(a, "110")] == p[obs_code(a, "011")] == 0.5
    assert p.sum() == 1.0


def test_tmaze_junction_rewards():
    env = make_env("tmaze", horizon=5, length=2)
    assert env.step_outcomes((2, "N"), "N")[0][-1] == 4
    assert env.step_outcomes((2, "N"), "S")[0][-1] == -1
    assert env.step_outcomes((2, "S"), "S")[0][-1] == 4
    # bumping into a wall costs -1 and keeps the position
    assert env.step_outcomes((0, "N"), "W") == [(1.0, (0, "N"), "110", -1)]
    assert env.step_outcomes((1, "N"), "E") == [(1.0, (2, "N"), "010", 0)]


def test_corridor_observations_name_column_row_and_enemy():
    env = make_env("corridor", horizon=5)
    outs = env.step_outcomes((0, 0, 0), "a0")
    assert [o for _, _, o, _ in outs] == ["c1r0e"]
    outs = env.step_outcomes((0, 0, 0), "a1")
    assert [o for _, _, o, _ in outs] == ["c1r1c"]


def test_unknown_environment_and_bad_params():
    with pytest.raises(UsageError):
        make_env("bogus")
    with pytest.raises(UsageError):
        make_env("tmaze", colour="red")
    with pytest.raises(UsageError):
        make_env("tmaze", horizon=0)


def test_generation_is_deterministic_and_fixed_length():
    env = make_env("tmaze", horizon=5, length=1)
    d1 = generate_dataset(env, uniform_policy(env), 1000, seed=7)
    d2 = generate_dataset(env, uniform_policy(env), 1000, seed=7)
    assert np.array_equal(d1.codes, d2.codes)
    assert d1.codes.shape[1] == env.horizon + 1
    assert np.all(d1.obs_indices()[:, -1] == env.alphabet.terminal_index)
    assert not np.array_equal(d1.codes, generate_dataset(env, uniform_policy(env), 1000, seed=8).codes)


def test_start_signal_frequency():
    env = make_env("tmaze", horizon=5, length=1)
    d = generate_dataset(env, uniform_policy(env), 1000, seed=7)
    frac = np.mean(d.obs_indices()[:, 0] == obs_code(env.alphabet, "110"))
    assert abs(frac - 0.5) <= 0.05


def test_uniform_policy():
    env = make_env("tmaze", horizon=5)
    pol = uniform_policy(env)
    assert pol.probs == (0.25,) * 4
    acts = pol.sample(np.random.default_rng(0), 10_000)
    assert np.all(np.abs(np.bincount(acts, minlength=4) / 10_000 - 0.25) <= 0.02)
    with pytest.raises(UsageError):
        BehaviorPolicy("bad", (0.5, 0.6))


@pytest.mark.parametrize("k", range(4))
def test_tmaze_signal_then_east_tracks_the_cell(k):
    gt = ground_truth_rdp(make_env("tmaze", horizon=6, length=4))
    a = gt.alphabet
    east = a.actions.index("E")
    q = gt.tau[0, a.start_index, obs_code(a, "110")]
    for i in range(k):
        q = gt.tau[q, east, obs_code(a, "010" if i + 1 == 4 else "101")]
    assert gt.layer_of[q] == 1 + k
    assert gt.labels[q] == {(k, "N"): 1.0}


@pytest.mark.parametrize("name,params", [("corridor", {"horizon": 5}), ("tmaze", {"horizon": 5, "length": 1}),
                                         ("tmaze", {"horizon": 6, "length": 3}), ("cookie", {"horizon": 6}),
                                         ("minihall", {"horizon": 4})])
def test_ground_truth_is_layered(name, params):
    gt = ground_truth_rdp(make_env(name, **params))
    src, _, _ = np.nonzero(gt.tau >= 0)
    dst = gt.tau[gt.tau >= 0]
    assert np.all(gt.layer_of[dst] == gt.layer_of[src] + 1)


@pytest.mark.parametrize("name,params", [("corridor", {"horizon": 5}), ("tmaze", {"horizon": 6, "length": 2}),
                                         ("cookie", {"horizon": 6})])
def test_ground_truth_matches_environment_frequencies(name, params):
    env = make_env(name, **params)
    gt = ground_truth_rdp(env)
    pol = uniform_policy(env)
    real = generate_dataset(env, pol, 10_000, seed=1).obs_indices()
    fake = gt.sample(pol, 10_000, seed=2).obs_indices()
    for t in range(env.horizon + 1):
        f1 = np.bincount(real[:, t], minlength=env.alphabet.n_obs) / 10_000
        f2 = np.bincount(fake[:, t], minlength=env.alphabet.n_obs) / 10_000
        assert np.max(np.abs(f1 - f2)) <= 0.03


@pytest.mark.parametrize("name,params", [("corridor", {"horizon": 5}), ("tmaze", {"horizon": 5, "length": 2}),
                                         ("cookie", {"horizon": 6})])
def test_ground_truth_is_minimal(name, params):
    gt = ground_truth_rdp(make_env(name, **params))
    pol = uniform_policy(gt.alphabet)
    for t, layer in enumerate(gt.layers[:-1]):
        for i, q1 in enumerate(layer):
            for q2 in layer[i + 1:]:
                assert pair_distance(gt, pol, q1, q2, "prefix") > 0, (t, q1, q2)


@pytest.mark.parametrize("name,params,size", [("corridor", {"horizon": 5}, 11),
                                              ("tmaze", {"horizon": 5, "length": 1}, 19),
                                              ("cookie", {"horizon": 9}, 64)])
def test_ground_truth_sizes(name, params, size):
    assert ground_truth_rdp(make_env(name, **params)).n_states == size


def test_cheese_has_no_exact_rdp():
    with pytest.raises(UnsupportedEnvironmentError):
        ground_truth_rdp(make_env("cheese", horizon=6))


@pytest.mark.parametrize("name,params,value", [
    ("corridor", {"horizon": 5}, 1.0),
    ("tmaze", {"horizon": 5, "length": 1}, 4.0),
    ("tmaze", {"horizon": 8, "length": 4}, 4.0),
    ("cookie", {"horizon": 9}, 1.0),
    ("cheese", {"horizon": 6}, 0.8951),
    ("minihall", {"horizon": 15}, 2.529),
])
def test_optimal_returns(name, params, value):
    assert optimal_return(make_env(name, **params)) == pytest.approx(value, abs=5e-4)


def test_registry():
    assert set(ENVIRONMENTS) == {"corridor", "tmaze", "cookie", "cheese", "minihall"}
