import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rdp_forge.environments import ground_truth_rdp, make_env, uniform_policy
from rdp_forge.exceptions import ConfigurationError, UndefinedEstimateError, UsageError
from rdp_forge.languages import build_family
from rdp_forge.metrics import (
    ExactStore,
    SketchStore,
    TesterConfig,
    cms_threshold,
    lang_metric,
    lang_threshold,
    prefix_linf,
    prefix_linf_cms,
    prefix_threshold,
    test_distinct_cms as distinct_cms,
    test_distinct_lang as distinct_lang,
    test_distinct_prefix as distinct_prefix,
)
from rdp_forge.environments import _pick
from rdp_forge.oracles import exact_suffix_distribution
from rdp_forge.trace import AlphabetSpec
from reductions import check_reductions

TINY = AlphabetSpec(("a", "b"), (("x", "y"),), (0, 1), 2, ("y",))


def store(rows, t=1, weights=None):
    """Rows are lists of (action, obs, reward) index triples for steps t..H."""
    return ExactStore(TINY, t, np.array(rows, dtype=np.int32), weights)


X = [[0, 0, 0], [1, 1, 0]]
Y = [[1, 0, 0], [1, 1, 0]]


def test_prefix_linf_examples():
    assert prefix_linf(store([X, X]), store([X, X])) == 0
    assert prefix_linf(store([X, X]), store([X, Y])) == 0.5
    assert prefix_linf(store([X]), store([Y])) == 1.0


def test_stores_must_share_a_layer():
    with pytest.raises(UsageError):
        prefix_linf(store([X]), ExactStore(TINY, 2, np.array([[X[1]]])))


def sketch(rows, eps=0.001, seed=0):
    codes = np.array(rows, dtype=np.int32)
    return SketchStore.from_codes(TINY, 1, codes, 0.01, eps, seed)


def test_prefix_linf_cms_examples():
    with pytest.raises(UndefinedEstimateError):
        prefix_linf_cms(SketchStore.empty(TINY, 1, 0.01, 0.1), SketchStore.empty(TINY, 1, 0.01, 0.1))
    assert prefix_linf_cms(sketch([X, Y]), sketch([X, Y])) == 0
    eps = 0.001
    assert abs(prefix_linf_cms(sketch([X, X], eps), sketch([X, Y], eps)) - 0.5) <= 2 * eps


def test_threshold_closed_forms():
    assert prefix_threshold(TINY, 1, 1000, 0.05) == pytest.approx(math.sqrt(2 * math.log(1280) / 1000))
    assert prefix_threshold(TINY, 1, 1000, 0.05) == pytest.approx(0.1196, abs=1e-4)
    assert cms_threshold(TINY, 1, 1000, 0.05) == pytest.approx(0.2506, abs=1e-4)
    assert lang_threshold(24, 1000, 0.05) == pytest.approx(0.1230, abs=1e-4)


@given(st.integers(0, 2), st.floats(1e-6, 0.5), st.integers(1, 10**6))
def test_cms_threshold_is_more_than_twice_the_exact_one(t, delta, n):
    k = (TINY.n_actions * TINY.n_obs * TINY.n_rewards) ** (TINY.horizon - t)
    ratio = cms_threshold(TINY, t, n, delta) / prefix_threshold(TINY, t, n, delta)
    assert ratio == pytest.approx(2 * math.sqrt(math.log(16 * k / delta) / math.log(8 * k / delta)))
    assert ratio > 2


def test_tests_on_identical_and_separated_samples():
    big_x, big_y = store([X] * 1000), store([Y] * 1000)
    assert distinct_prefix(1, big_x, big_y, 0.05)
    assert not distinct_prefix(1, big_x, big_x, 0.05)
    fam = build_family(TINY, 1, 1, 1, 6)
    assert distinct_lang(fam, big_x, big_y, 0.05)
    assert not distinct_lang(fam, big_x, big_x, 0.05)
    s = sketch([X] * 1000, eps=0.01)
    assert not distinct_cms(1, s, sketch([X] * 1000, eps=0.01), 0.05)
    assert distinct_cms(1, s, sketch([Y] * 1000, eps=0.01), 0.05)


def test_tiny_samples_never_fire():
    assert prefix_threshold(TINY, 1, 1, 0.05) > 1
    assert not distinct_prefix(1, store([X]), store([Y]), 0.05)


def test_tester_config_rejects_sketched_language_metric():
    with pytest.raises(ConfigurationError):
        TesterConfig("lang", store="sketch")
    with pytest.raises(ConfigurationError):
        TesterConfig("cms", store="exact")
    assert TesterConfig("cms").store == "sketch"


def _suffixes(env, hidden, t, n, rng):
    """Uniform-policy episode suffixes for steps ``t..H`` started from a hidden state."""
    a, tab = env.alphabet, env.table
    zero = a.rewards.index(0)
    codes = np.zeros((n, env.horizon - t + 1, 3), dtype=np.int32)
    h = np.full(n, tab.index[hidden])
    for i, step in enumerate(range(t, env.horizon + 1)):
        act = rng.integers(0, a.n_actions, n)
        if step == env.horizon:
            codes[:, i] = np.stack([act, np.full(n, a.terminal_index), np.full(n, zero)], axis=1)
            break
        k = _pick(tab.cum[h, act], rng.random(n))
        codes[:, i] = np.stack([act, tab.obs[h, act, k], tab.rew[h, act, k]], axis=1)
        h = tab.nxt[h, act, k]
    return ExactStore(a, t, codes)


def test_tmaze_mid_corridor_states_split_by_language_not_prefix():
    # five steps east of the start, goal up vs goal down; a long episode lets the
    # walk return to the start cell and see its signal again
    env = make_env("tmaze", length=8, horizon=80)
    a = env.alphabet
    rng = np.random.default_rng(0)
    s1, s2 = (_suffixes(env, (5, goal), 6, 500, rng) for goal in "NS")
    fam = build_family(a, 1, 1, 1, (env.horizon - 6 + 1) * a.n_slots)
    assert distinct_lang(fam, s1, s2, 0.05)
    assert not distinct_prefix(6, s1, s2, 0.05)


def test_tmaze_mid_corridor_short_episodes_look_alike():
    gt = ground_truth_rdp(make_env("tmaze", length=8, horizon=12))
    pol = uniform_policy(gt.alphabet)
    q_up, q_down = (next(q for q in gt.layers[6] if gt.labels[q] == {(5, g): 1.0}) for g in "NS")
    z = [exact_suffix_distribution(gt, pol, q, 6) for q in (q_up, q_down)]
    fam = build_family(gt.alphabet, 1, 1, 1, 7 * gt.alphabet.n_slots)
    assert lang_metric(fam, *z) == pytest.approx(0.00341796875)
    assert prefix_linf(*z) == pytest.approx(0.25**4)


# -- properties ------------------------------------------------------------------


def random_store(rng, n_rows=None):
    n = n_rows or int(rng.integers(1, 12))
    codes = np.stack([rng.integers(0, 2, size=(n, 2)), rng.integers(0, 2, size=(n, 2)),
                      rng.integers(0, 2, size=(n, 2))], axis=-1)
    return ExactStore(TINY, 1, codes, rng.random(n) + 0.01)


FAM = build_family(TINY, 1, 1, 1, 6)


def test_pseudometric_axioms_on_random_triples():
    rng = np.random.default_rng(20)
    for _ in range(1000):
        a, b, c = random_store(rng), random_store(rng), random_store(rng)
        for dist in (prefix_linf, lambda u, v: lang_metric(FAM, u, v)):
            assert dist(a, a) == pytest.approx(0, abs=1e-12)
            assert dist(a, b) == pytest.approx(dist(b, a), abs=1e-12)
            assert dist(a, c) <= dist(a, b) + dist(b, c) + 1e-12


@pytest.mark.parametrize("bigger", [(2, 1, 1), (1, 2, 1), (1, 1, 2)])
def test_metric_grows_with_the_family(bigger):
    rng = np.random.default_rng(21)
    fam2 = build_family(TINY, *bigger, 6)
    for _ in range(100):
        a, b = random_store(rng), random_store(rng)
        assert lang_metric(FAM, a, b) <= lang_metric(fam2, a, b) + 1e-12


def test_reduction_identities_small():
    errors = check_reductions(seed=5, pairs=2, powerset_max_strings=9)
    assert max(errors.values()) < 1e-12


@given(st.integers(0, 10**6))
def test_cms_distance_sandwich(seed):
    rng = np.random.default_rng(seed)
    z1, z2 = random_store(rng, 300), random_store(rng, 300)
    c1 = ExactStore(TINY, 1, z1.codes)
    c2 = ExactStore(TINY, 1, z2.codes)
    eps = 0.02
    k1 = SketchStore.from_codes(TINY, 1, c1.codes, 0.001, eps, seed)
    k2 = SketchStore.from_codes(TINY, 1, c2.codes, 0.001, eps, seed)
    exact = prefix_linf(c1, c2)
    assert abs(prefix_linf_cms(k1, k2) - exact) <= 2 * eps
