import itertools

import numpy as np
import pytest

from rnaforge.decoding import CHUNK, DecodeRequest, admissible_set, best_of_n, \
    curve_checkpoints, sample, sample_uniforms
from rnaforge.policy import Policy, PolicyConfig, log_prob, target_init_sample
from rnaforge.structure import is_valid_design, parse_structure
from rnaforge.thermo import EnergyParams

SMALL = PolicyConfig(n_layers=2, n_heads=2, d_model=16, d_ff=32, max_context=512)
P = EnergyParams()


@pytest.fixture(scope="module")
def policy():
    return Policy.initialize(SMALL, seed=11, std=0.5)


def test_admissible_set_examples():
    y = parse_structure("(.(...)).")
    assert admissible_set(1, y, "G") == set("ACGU")
    assert admissible_set(0, y, "") == set("ACGU")
    assert admissible_set(6, y, "GACAAA") == {"G"}
    assert admissible_set(7, y, "GACAAAG") == {"C", "U"}
    assert admissible_set(7, y, "AACAAAG") == {"U"}
    assert admissible_set(7, y, "UACAAAG") == {"A", "G"}


def test_constrained_validity_and_log_probs(policy):
    y = parse_structure("((((...))..((....))))...((...))")
    b = sample(policy, DecodeRequest(y, 300, 1.0, 3))
    assert all(b.validity) and all(len(x) == len(y) for x in b.sequences)
    for x, lp in list(zip(b.sequences, b.log_probs))[:40]:
        assert log_prob(policy, x, y, constrained=True) == pytest.approx(lp, abs=1e-9)


def test_temperature_log_probs(policy):
    y = parse_structure("((....))..")
    b = sample(policy, DecodeRequest(y, 20, 0.7, 1))
    for x, lp in zip(b.sequences, b.log_probs):
        assert log_prob(policy, x, y, True, temperature=0.7) == pytest.approx(lp, abs=1e-9)


def test_support_within_design_space(policy):
    y = parse_structure("(...)")
    space = {"".join(t) for t in itertools.product("ACGU", repeat=5)}
    space = {x for x in space if is_valid_design(x, y)}
    assert len(space) == 384
    assert set(sample(policy, DecodeRequest(y, 2000, 2.0, 0)).sequences) <= space


def test_greedy_is_deterministic(policy):
    y = parse_structure("((...))...")
    a = sample(policy, DecodeRequest(y, 3, seed=1, greedy=True)).sequences
    b = sample(policy, DecodeRequest(y, 1, seed=99, greedy=True)).sequences
    assert a == [b[0]] * 3


def test_sample_independent_of_batching(policy):
    y = parse_structure("((((....))))" * 2)
    full = sample(policy, DecodeRequest(y, CHUNK + 20, 1.0, 5))
    tail = sample(policy, DecodeRequest(y, 30, 1.0, 5, start_index=CHUNK - 10))
    assert full.sequences[CHUNK - 10: CHUNK + 20] == tail.sequences
    np.testing.assert_allclose(full.log_probs[CHUNK - 10: CHUNK + 20], tail.log_probs,
                               atol=1e-12)


def test_stream_keys():
    y = parse_structure("(...)")
    assert np.array_equal(sample_uniforms(1, y, 3, 5), sample_uniforms(1, y, 3, 5))
    assert not np.array_equal(sample_uniforms(1, y, 3, 5), sample_uniforms(1, y, 4, 5))
    assert not np.array_equal(sample_uniforms(1, y, 3, 5),
                              sample_uniforms(1, parse_structure("....."), 3, 5))


def test_uniform_unconstrained_validity():
    pol = Policy.zeros(SMALL)
    b = sample(pol, DecodeRequest(parse_structure("(...)"), 10000, 1.0, 0, constrained=False))
    rate = np.mean(b.validity)
    sigma = np.sqrt(0.375 * 0.625 / 10000)
    assert abs(rate - 0.375) < 4 * sigma
    free = sample(pol, DecodeRequest(parse_structure("....."), 200, 1.0, 0, False))
    assert all(free.validity)


def test_validity_decreases_with_pairs():
    pol = Policy.zeros(SMALL)
    rates = []
    for m in range(4):
        y = parse_structure("(" * m + "...." + ")" * m + "." * (8 - 2 * m))
        rates.append(np.mean(sample(pol, DecodeRequest(y, 4000, 1.0, 2, False)).validity))
    assert rates == sorted(rates, reverse=True)


def test_curve_checkpoints():
    assert curve_checkpoints(1) == [1]
    assert curve_checkpoints(10) == [1, 3, 10]
    assert curve_checkpoints(1000) == [1, 3, 10, 32, 100, 316, 1000]
    assert curve_checkpoints(50) == [1, 3, 10, 32, 50]


def test_best_of_n_prefix_and_monotone(policy):
    y = parse_structure("((((...))))..")
    long = best_of_n(policy, y, 100, "prob", P, seed=4)
    short = best_of_n(policy, y, 10, "prob", P, seed=4)
    assert dict(long.curve)[10] == short.curve[-1][1]
    vals = [v for _, v in long.curve]
    assert vals == sorted(vals)
    ned = best_of_n(policy, y, 32, "ned", P, seed=4)
    vals = [v for _, v in ned.curve]
    assert vals == sorted(vals, reverse=True)


def test_best_of_one_equals_single_sample(policy):
    y = parse_structure("((...))")
    res = best_of_n(policy, y, 1, "prob", P, seed=8)
    x = sample(policy, DecodeRequest(y, 1, 1.0, 8)).sequences[0]
    assert res.best_sequence == x and res.curve == [(1, res.best_evaluation.prob)]


def test_best_of_n_all_a_reaches_one():
    y = parse_structure("....")
    res = best_of_n(None, y, 1, "prob", P, 0, sampler=lambda y, k: "AAAA")
    assert res.curve == [(1, 1.0)]


def test_best_of_n_counts_invalid():
    y = parse_structure("(...)")
    res = best_of_n(None, y, 5, "prob", P, 0, sampler=lambda y, k: "AAAAA" if k % 2 else "GAAAC")
    assert res.invalid == 2 and res.best_sequence == "GAAAC"
    sampler = lambda y, k: target_init_sample(y, k)  # noqa: E731
    assert best_of_n(None, y, 4, "umfe", P, 0, sampler=sampler).invalid == 0


def test_request_validation():
    with pytest.raises(ValueError):
        DecodeRequest(parse_structure("...."), 0)
    with pytest.raises(ValueError):
        DecodeRequest(parse_structure("...."), 1, temperature=0)
    with pytest.raises(ValueError):
        best_of_n(None, parse_structure("...."), 3, "energy", P, 0, sampler=lambda y, k: "AAAA")
