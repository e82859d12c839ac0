"""Constrained and unconstrained sampling from the policy.

Each sample owns a counter-based random stream keyed by
``(seed, structure hash, sample index)``, so a sample's sequence does not
depend on how samples are batched or which worker draws them.
"""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import AllMaskedLogitsNonFinite, EvaluationFailed
from .folding import fold_summary
from .policy import COMPLEMENT_MASK, NUC_OFFSET, KVCache, Policy, encode_prompt
from .structure import NUCLEOTIDES, Structure, is_valid_design
from .thermo import EnergyParams

# samples per forward batch; fixed so results never depend on worker layout
CHUNK = 256
METRICS = ("prob", "ned", "mfe", "umfe")

_COMP = {c: frozenset(NUCLEOTIDES[k] for k in np.flatnonzero(COMPLEMENT_MASK[i]))
         for i, c in enumerate(NUCLEOTIDES)}


def admissible_set(t: int, y: Structure, partial_x: str) -> frozenset:
    if y.text[t] == ")":
        return _COMP[partial_x[y.partner[t]]]
    return frozenset(NUCLEOTIDES)


@dataclass(frozen=True)
class DecodeRequest:
    target: Structure
    n_samples: int = 1
    temperature: float = 1.0
    seed: int = 0
    constrained: bool = True
    greedy: bool = False
    start_index: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")


@dataclass
class DecodeBatch:
    sequences: list
    log_probs: list
    validity: list
    seconds: float = 0.0


def structure_hash(y: Structure) -> int:
    return int.from_bytes(hashlib.blake2b(y.text.encode(), digest_size=8).digest(), "little")


def sample_uniforms(seed: int, y: Structure, index: int, n: int) -> np.ndarray:
    """The ``n`` uniforms driving sample ``index``; a pure function of its key."""
    key = np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, structure_hash(y), index])
    return np.random.Generator(np.random.Philox(key)).random(n)


def _decode_chunk(policy: Policy, y: Structure, uniforms: np.ndarray, constrained: bool,
                  temperature: float, greedy: bool):
    B, n = uniforms.shape
    prompt = torch.tensor([encode_prompt(y, policy.config.max_context)], dtype=torch.long)
    out = np.zeros((B, n), dtype=np.int64)
    total = np.zeros(B)
    partner = y.partner
    text = y.text
    with torch.no_grad():
        cache = KVCache(policy.config, B, n)
        logits = policy.model(prompt, cache)
        step = logits[:, -1, NUC_OFFSET: NUC_OFFSET + 4].expand(B, 4)
        for t in range(n):
            scores = step / temperature
            if constrained and text[t] == ")":
                allowed = torch.from_numpy(COMPLEMENT_MASK[out[:, partner[t]]])
                scores = scores.masked_fill(~allowed, float("-inf"))
            logp = torch.log_softmax(scores, dim=-1)
            lp = logp.numpy()
            if not np.all(np.isfinite(lp.max(axis=1))):
                raise AllMaskedLogitsNonFinite(f"non-finite logits at step {t}")
            if greedy:
                choice = lp.argmax(axis=1)
            else:
                cdf = np.cumsum(np.exp(lp), axis=1)
                u = uniforms[:, t:t + 1] * cdf[:, -1:]
                choice = (u < cdf).argmax(axis=1)
            out[:, t] = choice
            total += lp[np.arange(B), choice]
            if t + 1 < n:
                tok = torch.from_numpy(choice + NUC_OFFSET).unsqueeze(1)
                logits = policy.model(tok, cache)
                step = logits[:, -1, NUC_OFFSET: NUC_OFFSET + 4]
    # after position n only <eos> is admissible: it contributes log 1 = 0
    seqs = ["".join(NUCLEOTIDES[c] for c in row) for row in out]
    return seqs, total.tolist()


def sample(policy: Policy, req: DecodeRequest) -> DecodeBatch:
    """Draw ``req.n_samples`` sequences for ``req.target``.

    Constrained sampling draws from the admissible-set renormalised,
    temperature-adjusted nucleotide distribution; unconstrained sampling uses
    the temperature-adjusted distribution over the four nucleotides and
    reports pairing validity. Both stop after exactly ``len(target)`` steps.
    """
    y = req.target
    n = len(y)
    start = time.perf_counter()
    seqs, lps = [], []
    indices = range(req.start_index, req.start_index + req.n_samples)
    for lo in range(0, req.n_samples, CHUNK):
        idx = indices[lo: lo + CHUNK]
        u = np.stack([sample_uniforms(req.seed, y, k, n) for k in idx])
        s, lp = _decode_chunk(policy, y, u, req.constrained, req.temperature, req.greedy)
        seqs += s
        lps += lp
    validity = [is_valid_design(x, y) for x in seqs]
    return DecodeBatch(seqs, lps, validity, time.perf_counter() - start)


def constrained_sample(policy: Policy, req: DecodeRequest) -> DecodeBatch:
    if not req.constrained:
        raise ValueError("constrained_sample needs req.constrained=True")
    return sample(policy, req)


def unconstrained_sample(policy: Policy, req: DecodeRequest) -> DecodeBatch:
    if req.constrained:
        raise ValueError("unconstrained_sample needs req.constrained=False")
    return sample(policy, req)


# -- best-of-N --------------------------------------------------------------------


def curve_checkpoints(n: int) -> list[int]:
    """Half-decade grid 1, 3, 10, 32, 100, ... capped by (and ending at) ``n``."""
    points = []
    k = 0
    while True:
        v = int(round(10 ** (k / 2)))
        if v >= n:
            break
        points.append(v)
        k += 1
    points.append(n)
    return points


def metric_value(ev, metric: str) -> float:
    if metric == "prob":
        return ev.prob
    if metric == "ned":
        return ev.ned
    if metric == "mfe":
        return float(ev.is_mfe)
    if metric == "umfe":
        return float(ev.is_umfe)
    raise ValueError(f"unknown metric {metric!r}")


def better(metric: str, a: float, b: float | None) -> bool:
    """Whether ``a`` strictly improves on the incumbent ``b``."""
    if b is None:
        return True
    return a < b if metric == "ned" else a > b


@dataclass
class BestOfN:
    target: Structure
    metric: str
    best_sequence: str | None
    best_evaluation: object | None
    curve: list = field(default_factory=list)  # (N, running best)
    samples: int = 0
    failures: int = 0
    invalid: int = 0


def best_of_n(policy, y: Structure, n: int, metric: str, params: EnergyParams, seed: int,
              constrained: bool = True, temperature: float = 1.0, sampler=None) -> BestOfN:
    """Running best of ``metric`` over a fixed stream of ``n`` samples.

    ``sampler`` replaces the policy: a callable ``(y, index) -> sequence``
    used for baselines. Invalid (unconstrained) samples and evaluation
    failures are skipped and counted.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}")
    if sampler is None:
        seqs = sample(policy, DecodeRequest(y, n, temperature, seed, constrained)).sequences
    else:
        seqs = [sampler(y, k) for k in range(n)]
    checkpoints = set(curve_checkpoints(n))
    result = BestOfN(y, metric, None, None, samples=n)
    best = None
    for k, x in enumerate(seqs, start=1):
        if not is_valid_design(x, y):
            result.invalid += 1
        else:
            try:
                ev = fold_summary(x, y, params, with_pair_probs=metric == "ned")
                v = metric_value(ev, metric)
                if not math.isfinite(v):
                    raise EvaluationFailed("non-finite metric")
            except EvaluationFailed:
                result.failures += 1
            else:
                if better(metric, v, best):
                    best = v
                    result.best_sequence = x
                    result.best_evaluation = ev
        if k in checkpoints:
            result.curve.append((k, best))
    return result
