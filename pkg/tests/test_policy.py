import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from rnaforge.errors import BadMagic, CheckpointError, ContextOverflow, InvalidDesign, \
    ShapeMismatch, VersionMismatch
from rnaforge.policy import VOCAB_SIZE, Policy, PolicyConfig, Token, encode_episode, \
    encode_prompt, grad_log_prob, load_checkpoint, log_prob, save_checkpoint, \
    sequence_log_probs, target_init_sample
from rnaforge.structure import is_valid_design, parse_structure

SMALL = PolicyConfig(n_layers=2, n_heads=2, d_model=16, d_ff=32, max_context=128)


def test_vocabulary_ids():
    assert VOCAB_SIZE == 12
    assert [int(Token[c]) for c in "ACGU"] == [1, 2, 3, 4]
    assert (Token.PAD, Token.DOT, Token.LPAREN, Token.RPAREN) == (0, 5, 6, 7)
    assert (Token.STRUCT_OPEN, Token.STRUCT_CLOSE, Token.BOS, Token.EOS) == (8, 9, 10, 11)


def test_prompt_example():
    assert encode_prompt(parse_structure("(.(...))")) == [8, 6, 5, 6, 5, 5, 5, 7, 7, 9, 10]
    episode = encode_episode(parse_structure("(.(...))"), "GACUUAGC")
    assert episode[11:] == [3, 1, 2, 4, 4, 1, 3, 2, 11]


def test_prompt_overflow():
    y = parse_structure("." * 500)
    assert len(encode_prompt(y, 1088)) == 503
    with pytest.raises(ContextOverflow):
        encode_prompt(parse_structure("." * 100), max_context=200)


def test_zero_policy_is_uniform():
    pol = Policy.zeros(SMALL)
    logits = pol.forward(encode_episode(parse_structure("(...)"), "GAAAC"))
    probs = torch.softmax(logits, dim=-1)
    assert torch.allclose(probs, torch.full_like(probs, 1 / 12), atol=1e-15)
    y = parse_structure("(...)")
    assert log_prob(pol, "GAAAC", y) == pytest.approx(-6 * math.log(12), abs=1e-12)
    # constrained: four free steps over ACGU; Comp(A) = {U} forces the last one
    assert log_prob(pol, "AAAAU", y, constrained=True) == pytest.approx(-4 * math.log(4))
    assert log_prob(pol, "GAAAC", y, constrained=True) == pytest.approx(
        -4 * math.log(4) - math.log(2))


def test_softmax_normalised():
    pol = Policy.initialize(SMALL, seed=3, std=0.5)
    logits = pol.forward(encode_episode(parse_structure("((...))."), "GCAAAGCA"))
    s = torch.softmax(logits, dim=-1).sum(dim=-1)
    assert torch.allclose(s, torch.ones_like(s), atol=1e-12)


@given(st.integers(0, 2**31 - 1), st.integers(1, 20))
def test_causality(seed, t):
    g = torch.Generator().manual_seed(seed)
    pol = Policy.initialize(SMALL, seed=1, std=0.3)
    tokens = torch.randint(0, 12, (1, 24), generator=g)
    other = tokens.clone()
    other[0, t + 1:] = torch.randint(0, 12, (23 - t,), generator=g)
    a = pol.forward(tokens)[0, : t + 1]
    b = pol.forward(other)[0, : t + 1]
    assert torch.equal(a, b)


def test_deterministic_init():
    a = Policy.initialize(SMALL, seed=7)
    b = Policy.initialize(SMALL, seed=7)
    assert a.parameters_equal(b)
    tokens = encode_episode(parse_structure("((...))"), "GCAAAGC")
    assert torch.equal(a.forward(tokens), b.forward(tokens))


def test_log_prob_recomputation():
    pol = Policy.initialize(SMALL, seed=2, std=0.4)
    y = parse_structure("((...))..(...)")
    x = "GUAAAACAAGAAAC"
    assert is_valid_design(x, y)
    for constrained in (False, True):
        with torch.no_grad():
            logits = pol.forward(encode_episode(y, x))
        start = len(y) + 2
        total = 0.0
        for t in range(len(y) + 1):
            row = logits[start + t].clone()
            tok = encode_episode(y, x)[start + t + 1]
            if constrained:
                mask = torch.zeros(12, dtype=torch.bool)
                if t == len(y):
                    mask[int(Token.EOS)] = True
                elif y.text[t] == ")":
                    partner = x[y.partner[t]]
                    mask[[int(Token[c]) for c in "ACGU" if partner + c in
                          {"CG", "GC", "AU", "UA", "GU", "UG"}]] = True
                else:
                    mask[1:5] = True
                row = row.masked_fill(~mask, float("-inf"))
            total += torch.softmax(row, -1)[tok].log().item()
        assert log_prob(pol, x, y, constrained) == pytest.approx(total, abs=1e-12)
        assert log_prob(pol, x, y, constrained) <= 0


def test_constrained_rejects_invalid():
    with pytest.raises(InvalidDesign):
        log_prob(Policy.zeros(SMALL), "GAAAA", parse_structure("(...)"), constrained=True)


def test_batched_log_probs_match_single():
    pol = Policy.initialize(SMALL, seed=4, std=0.3)
    pairs = [(parse_structure("(...)"), "GAAAC"), (parse_structure("((....)).."), "GCAAAAGCAA")]
    batch = sequence_log_probs(pol, pairs)
    for k, (y, x) in enumerate(pairs):
        assert batch[k].item() == pytest.approx(log_prob(pol, x, y), abs=1e-12)


def finite_difference_error(fn, params, n_coords=40, h=1e-4, seed=0):
    """Relative error between autograd and central differences on random coordinates."""
    rng = np.random.default_rng(seed)
    loss = fn()
    grads = torch.autograd.grad(loss, params)
    analytic, numeric = [], []
    for _ in range(n_coords):
        k = int(rng.integers(len(params)))
        prm = params[k]
        idx = tuple(int(rng.integers(s)) for s in prm.shape)
        with torch.no_grad():
            old = prm[idx].item()
            prm[idx] = old + h
            up = float(fn())
            prm[idx] = old - h
            down = float(fn())
            prm[idx] = old
        analytic.append(float(grads[k][idx]))
        numeric.append((up - down) / (2 * h))
    a, n = np.array(analytic), np.array(numeric)
    return np.linalg.norm(a - n) / max(np.linalg.norm(a), 1e-12)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("constrained", [False, True])
def test_gradient_matches_finite_differences(seed, constrained):
    pol = Policy.initialize(SMALL, seed=seed, std=0.3)
    y = parse_structure("((....))(...)")
    x = target_init_sample(y, seed)
    params = list(pol.model.parameters())
    fn = lambda: sequence_log_probs(pol, [(y, x)], constrained)[0]  # noqa: E731
    assert finite_difference_error(fn, params, seed=seed) < 1e-4


def test_grad_log_prob_linear_in_scale():
    pol = Policy.initialize(SMALL, seed=1, std=0.3)
    y = parse_structure("((...))")
    g1 = grad_log_prob(pol, "GCAAAGC", y)
    g3 = grad_log_prob(pol, "GCAAAGC", y, scale=-3.0)
    for k in g1:
        assert torch.allclose(g3[k], -3.0 * g1[k], atol=1e-13)


def test_fully_forced_steps_have_zero_gradient():
    pol = Policy.initialize(SMALL, seed=1, std=0.3)
    y = parse_structure("(...)")
    logits = pol.forward(encode_episode(y, "AAAAU"))
    # Comp(A) = {U}: the closing step's masked distribution has a single member
    row = logits[len(y) + 2 + 4]
    mask = torch.zeros(12, dtype=torch.bool)
    mask[int(Token.U)] = True
    term = torch.log_softmax(row.masked_fill(~mask, float("-inf")), -1)[int(Token.U)]
    assert term.item() == 0.0
    grads = torch.autograd.grad(term, list(pol.model.parameters()), allow_unused=True)
    assert all(g is None or not g.any() for g in grads)


def test_checkpoint_round_trip(tmp_path):
    pol = Policy.initialize(SMALL, seed=5)
    pol.train_meta["note"] = "x"
    path = tmp_path / "a.ckpt"
    save_checkpoint(pol, path)
    back = load_checkpoint(path)
    assert back.config == SMALL and back.parameters_equal(pol)
    assert back.train_meta["note"] == "x"
    save_checkpoint(back, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_checkpoint_corruption(tmp_path):
    pol = Policy.initialize(SMALL, seed=5)
    path = tmp_path / "a.ckpt"
    save_checkpoint(pol, path)
    data = path.read_bytes()
    for cut in (2, 10, 40, len(data) // 2, len(data) - 3):
        (tmp_path / "t.ckpt").write_bytes(data[:cut])
        with pytest.raises((BadMagic, ShapeMismatch)):
            load_checkpoint(tmp_path / "t.ckpt")
    (tmp_path / "m.ckpt").write_bytes(b"XXXX" + data[4:])
    with pytest.raises(BadMagic):
        load_checkpoint(tmp_path / "m.ckpt")
    (tmp_path / "v.ckpt").write_bytes(data[:4] + (99).to_bytes(4, "little") + data[8:])
    with pytest.raises(VersionMismatch):
        load_checkpoint(tmp_path / "v.ckpt")
    (tmp_path / "x.ckpt").write_bytes(data + b"\0")
    with pytest.raises(ShapeMismatch):
        load_checkpoint(tmp_path / "x.ckpt")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.ckpt")


def test_checkpoint_config_mismatch_names_tensor(tmp_path):
    path = tmp_path / "a.ckpt"
    save_checkpoint(Policy.initialize(SMALL), path)
    other = PolicyConfig(n_layers=2, n_heads=2, d_model=16, d_ff=64, max_context=128)
    with pytest.raises(ShapeMismatch, match="fc1"):
        load_checkpoint(path, config=other)


def test_target_init_frequencies():
    y = parse_structure("(" * 5 + "." * 10 + ")" * 5)
    rng = np.random.default_rng(0)
    unpaired = pairs = a = gc = 0
    for _ in range(10000):
        x = target_init_sample(y, rng)
        assert is_valid_design(x, y)
        a += sum(x[i] == "A" for i in y.unpaired)
        unpaired += len(y.unpaired)
        gc += sum(x[i] + x[j] in ("GC", "CG") for i, j in y.pairs)
        pairs += len(y.pairs)
    assert a / unpaired == pytest.approx(0.9, abs=0.01)
    assert gc / pairs == pytest.approx(7 / 12, abs=0.01)
