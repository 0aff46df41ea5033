"""Cross-module checks against exact suffix distributions of known automata."""
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rdp_forge.environments import BehaviorPolicy, ground_truth_rdp, make_env, uniform_policy
from rdp_forge.exceptions import EnumerationCapError, UsageError
from rdp_forge.learner import LearnedRdp, adact_h
from rdp_forge.oracles import (
    as_learned,
    cms_stream_trials,
    distinguishability_oracle,
    exact_suffix_distribution,
    isomorphic,
    pair_distance,
    random_minimal_rdp,
    random_rdp,
    run_lemma_checks,
)

INF = math.inf

# exact oracle output for the T-maze with corridor length 5 and H = 9, uniform policy
TMAZE5_PREFIX_BY_LAYER = [INF, 0.25, 0.25, 0.0625, 0.015625, 0.015625, 0.015625, 0.0625, 0.25, INF, INF]
TMAZE5_LANG_BY_LAYER = [INF, 0.9018096923828125, 0.5, 0.266845703125, 0.0654296875, 0.00390625,
                        0.0, 0.0, 0.0, INF, INF]
TMAZE_PREFIX_MIN = {2: 0.25, 3: 0.0625, 4: 0.0625, 5: 0.015625}


def tmaze(length, horizon):
    gt = ground_truth_rdp(make_env("tmaze", length=length, horizon=horizon))
    return gt, uniform_policy(gt.alphabet)


def mirrored(gt, t, cell):
    up = next(q for q in gt.layers[t] if gt.labels[q] == {(cell, "N"): 1.0})
    down = next(q for q in gt.layers[t] if gt.labels[q] == {(cell, "S"): 1.0})
    return up, down


@given(st.integers(0, 10**6))
def test_suffix_masses_sum_to_one(seed):
    gt = random_rdp(np.random.default_rng(seed), horizon=4, max_states=3)
    pol = uniform_policy(gt.alphabet)
    for t, layer in enumerate(gt.layers[:-1]):
        for q in layer:
            z = exact_suffix_distribution(gt, pol, q, t)
            assert abs(z.mass.sum() - 1) <= 1e-12
            assert np.all(z.mass > 0)


def test_deterministic_case_is_a_point_mass():
    gt = ground_truth_rdp(make_env("corridor", horizon=5))
    pol = BehaviorPolicy("always a0", (1.0, 0.0))
    for t in range(1, 6):
        for q in gt.layers[t]:
            assert exact_suffix_distribution(gt, pol, q, t).n == 1


def test_enumeration_errors():
    gt, pol = tmaze(3, 6)
    with pytest.raises(EnumerationCapError):
        exact_suffix_distribution(gt, pol, 0, 0, cap=10)
    with pytest.raises(UsageError):
        exact_suffix_distribution(gt, pol, 0, 1)


@pytest.mark.filterwarnings("ignore:tmaze. no positive reward")
@pytest.mark.parametrize("horizon", [4, 6])
def test_tmaze_mid_corridor_pair_differs_only_near_the_ends(horizon):
    gt, pol = tmaze(3, horizon)
    a = gt.alphabet
    q1, q2 = mirrored(gt, 2, 1)
    z1, z2 = (exact_suffix_distribution(gt, pol, q, 2) for q in (q1, q2))

    def as_dict(z):
        return {row.tobytes(): p for row, p in zip(z.codes, z.mass)}

    d1, d2 = as_dict(z1), as_dict(z2)
    signal = {a.symbol_index(1, "110"), a.symbol_index(1, "011")}
    end, four = a.terminal_index, a.rewards.index(4)
    for key in set(d1) | set(d2):
        rows = np.frombuffer(key, dtype=z1.codes.dtype).reshape(-1, a.n_slots)
        # the junction turn is the only step that ends an episode early and pays +4
        near_ends = bool(set(rows[:, 1]) & signal) or np.any(rows[:-1, 1] == end) or np.any(rows[:, -1] == four)
        differs = not math.isclose(d1.get(key, 0.0), d2.get(key, 0.0), abs_tol=1e-15)
        assert differs == near_ends


def test_tmaze_distinguishability_by_layer():
    gt, pol = tmaze(5, 9)
    assert distinguishability_oracle(gt, pol, "prefix") == pytest.approx(TMAZE5_PREFIX_BY_LAYER)
    assert distinguishability_oracle(gt, pol, "lang") == pytest.approx(TMAZE5_LANG_BY_LAYER)


@pytest.mark.parametrize("length", [2, 3, 4])
def test_tmaze_prefix_minimum_by_length(length):
    gt, pol = tmaze(length, length + 4)
    assert min(distinguishability_oracle(gt, pol, "prefix")) == TMAZE_PREFIX_MIN[length]


def test_tmaze_middle_pair_language_beats_prefix_fourfold():
    gt, pol = tmaze(5, 9)
    q1, q2 = mirrored(gt, 4, 3)
    assert pair_distance(gt, pol, q1, q2, "prefix") == 0.015625
    assert pair_distance(gt, pol, q1, q2, "lang") == pytest.approx(0.0654296875)


def test_isomorphism_check():
    gt, _ = tmaze(2, 5)
    rdp = as_learned(gt)
    assert isomorphic(rdp, gt)
    key = next(k for k in rdp.tau if k[0] != 0 and rdp.layer_of()[k[0]] == 2)
    other = next(q for q in rdp.layers[3] if q != rdp.tau[key])
    broken = LearnedRdp(rdp.alphabet, rdp.layers, {**rdp.tau, key: other}, rdp.sizes)
    assert not isomorphic(broken, gt)
    fewer = dict(rdp.tau)
    fewer.pop(key)
    assert not isomorphic(LearnedRdp(rdp.alphabet, rdp.layers, fewer, rdp.sizes), gt)


@pytest.mark.parametrize("seed", range(5))
def test_random_instances_are_distinguishable_and_recovered(seed):
    gt, mu = random_minimal_rdp(seed)
    assert min(mu) >= 0.2
    data = gt.sample(uniform_policy(gt.alphabet), 10_000, seed=1000 + seed)
    assert isomorphic(adact_h(data, 0.05), gt)


def test_lemma_rates_short_run():
    report = run_lemma_checks(seed=1, trials=100)
    assert report["passed"], report


def test_cms_stream_guarantees_short_run():
    report = cms_stream_trials(trials=20, seed=3)
    assert report["passed"] and report["underestimates"] == 0
