"""Structure-conditioned autoregressive policy.

A small pre-norm decoder-only transformer reads the prompt
``<struct> y_1 .. y_n </struct> <bos>`` and emits one nucleotide per step,
then ``<eos>``. All training paths run in float64.
"""

from __future__ import annotations

import copy
import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .errors import BadMagic, CheckpointError, ContextOverflow, InvalidDesign, ShapeMismatch, \
    VersionMismatch
from .structure import VALID_PAIRS, Structure, is_valid_design

DTYPE = torch.float64


class Token(IntEnum):
    PAD = 0
    A = 1
    C = 2
    G = 3
    U = 4
    DOT = 5
    LPAREN = 6
    RPAREN = 7
    STRUCT_OPEN = 8
    STRUCT_CLOSE = 9
    BOS = 10
    EOS = 11


VOCAB_SIZE = len(Token)
NUC_OFFSET = int(Token.A)  # nucleotide ids are NUC_OFFSET .. NUC_OFFSET + 3
NUC_TOKENS = {c: int(Token[c]) for c in "ACGU"}
STRUCT_TOKENS = {".": int(Token.DOT), "(": int(Token.LPAREN), ")": int(Token.RPAREN)}
# admissible partner for each nucleotide index (A, C, G, U order)
COMPLEMENT_MASK = np.array(
    [[a + b in VALID_PAIRS for b in "ACGU"] for a in "ACGU"], dtype=bool
)


def encode_prompt(y: Structure, max_context: int | None = None) -> list[int]:
    tokens = [int(Token.STRUCT_OPEN)]
    tokens += [STRUCT_TOKENS[c] for c in y.text]
    tokens += [int(Token.STRUCT_CLOSE), int(Token.BOS)]
    # the full episode also needs n nucleotides and EOS
    if max_context is not None and len(tokens) + len(y) > max_context:
        raise ContextOverflow(
            f"structure of length {len(y)} needs {len(tokens) + len(y)} tokens; "
            f"max_context is {max_context}"
        )
    return tokens


def encode_episode(y: Structure, x: str) -> list[int]:
    return encode_prompt(y) + [NUC_TOKENS[c] for c in x] + [int(Token.EOS)]


@dataclass(frozen=True)
class PolicyConfig:
    n_layers: int = 2
    n_heads: int = 4
    d_model: int = 64
    d_ff: int = 256
    max_context: int = 1088
    vocab_size: int = VOCAB_SIZE

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if min(self.n_layers, self.n_heads, self.d_model, self.d_ff, self.max_context) <= 0:
            raise ValueError("all PolicyConfig sizes must be positive")

    def as_tuple(self) -> tuple[int, ...]:
        return (self.n_layers, self.n_heads, self.d_model, self.d_ff, self.max_context,
                self.vocab_size)


class Block(nn.Module):
    def __init__(self, cfg: PolicyConfig):
        super().__init__()
        self.n_heads = cfg.n_heads
        self.ln1 = nn.LayerNorm(cfg.d_model, dtype=DTYPE)
        self.qkv = nn.Linear(cfg.d_model, 3 * cfg.d_model, dtype=DTYPE)
        self.proj = nn.Linear(cfg.d_model, cfg.d_model, dtype=DTYPE)
        self.ln2 = nn.LayerNorm(cfg.d_model, dtype=DTYPE)
        self.fc1 = nn.Linear(cfg.d_model, cfg.d_ff, dtype=DTYPE)
        self.fc2 = nn.Linear(cfg.d_ff, cfg.d_model, dtype=DTYPE)

    def forward(self, h, cache=None, layer=0):
        B, T, D = h.shape
        H = self.n_heads
        hd = D // H
        q, k, v = self.qkv(self.ln1(h)).split(D, dim=-1)
        q = q.view(B, T, H, hd).transpose(1, 2)
        k = k.view(B, T, H, hd).transpose(1, 2)
        v = v.view(B, T, H, hd).transpose(1, 2)
        scale = 1.0 / math.sqrt(hd)
        if cache is None or cache.prefix_k[layer] is None:
            if cache is not None:
                cache.prefix_k[layer], cache.prefix_v[layer] = k, v
            out = F.scaled_dot_product_attention(q, k, v, is_causal=T > 1, scale=scale)
        else:
            # shared prompt keys are read once for the whole batch
            L = cache.length
            cache.k[layer][:, :, L: L + T] = k
            cache.v[layer][:, :, L: L + T] = v
            gk = cache.k[layer][:, :, : L + T]
            gv = cache.v[layer][:, :, : L + T]
            pk, pv = cache.prefix_k[layer][0], cache.prefix_v[layer][0]
            P = pk.shape[1]
            qh = q.permute(1, 0, 2, 3).reshape(H, B * T, hd)
            att_p = (qh @ pk.transpose(-2, -1)).view(H, B, T, P).permute(1, 0, 2, 3)
            att_g = q @ gk.transpose(-2, -1)
            if T > 1:
                causal = torch.ones(T, L + T, dtype=torch.bool).triu(L + 1)
                att_g = att_g.masked_fill(causal, float("-inf"))
            att = torch.softmax(torch.cat([att_p, att_g], dim=-1) * scale, dim=-1)
            w_p, w_g = att[..., :P], att[..., P:]
            out_p = (w_p.permute(1, 0, 2, 3).reshape(H, B * T, P) @ pv).view(H, B, T, hd)
            out = out_p.permute(1, 0, 2, 3) + w_g @ gv
        out = out.transpose(1, 2).reshape(B, T, D)
        h = h + self.proj(out)
        h = h + self.fc2(F.gelu(self.fc1(self.ln2(h))))
        return h


class KVCache:
    """Key/value buffers for incremental decoding.

    The prompt is run once with batch size 1 and its keys/values are kept as
    a shared prefix; per-sample keys for generated tokens go into
    preallocated ``(batch, heads, capacity, head_dim)`` buffers.
    """

    def __init__(self, cfg: "PolicyConfig", batch: int, capacity: int):
        hd = cfg.d_model // cfg.n_heads
        shape = (batch, cfg.n_heads, capacity, hd)
        self.k = [torch.zeros(shape, dtype=DTYPE) for _ in range(cfg.n_layers)]
        self.v = [torch.zeros(shape, dtype=DTYPE) for _ in range(cfg.n_layers)]
        self.prefix_k = [None] * cfg.n_layers
        self.prefix_v = [None] * cfg.n_layers
        self.length = 0
        self.close = 0

    @property
    def prefix_length(self) -> int:
        return 0 if self.prefix_k[0] is None else self.prefix_k[0].shape[2]

    @property
    def offset(self) -> int:
        return self.prefix_length + self.length


def _first_close(tokens: torch.Tensor) -> torch.Tensor:
    T = tokens.shape[1]
    hit = tokens == int(Token.STRUCT_CLOSE)
    idx = torch.where(hit, torch.arange(T), torch.full((), T))
    return idx.min(dim=1).values


def position_ids(tokens: torch.Tensor) -> torch.Tensor:
    """Learned-position indices ``(B, T)`` aligned between structure and sequence.

    Prompt tokens up to ``</struct>`` use their own index. After it the count
    restarts at 1, so the input that predicts nucleotide ``t`` shares its
    position id with structure symbol ``t``. Only earlier tokens are consulted.
    """
    T = tokens.shape[1]
    ar = torch.arange(T).unsqueeze(0)
    close = _first_close(tokens).unsqueeze(1)
    return torch.where(ar > close, ar - close, ar)


class CausalTransformer(nn.Module):
    def __init__(self, cfg: PolicyConfig):
        super().__init__()
        self.cfg = cfg
        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.d_model, dtype=DTYPE)
        self.pos_emb = nn.Embedding(cfg.max_context, cfg.d_model, dtype=DTYPE)
        self.blocks = nn.ModuleList([Block(cfg) for _ in range(cfg.n_layers)])
        self.ln_f = nn.LayerNorm(cfg.d_model, dtype=DTYPE)
        self.head = nn.Linear(cfg.d_model, cfg.vocab_size, dtype=DTYPE)

    def forward(self, tokens, cache=None):
        """Logits for every position, optionally appending to a :class:`KVCache`."""
        B, T = tokens.shape
        offset = 0 if cache is None else cache.offset
        if offset + T > self.cfg.max_context:
            raise ContextOverflow(f"{offset + T} tokens exceed max_context {self.cfg.max_context}")
        prefill = cache is not None and cache.prefix_k[0] is None
        if cache is None or prefill:
            pos = position_ids(tokens)
            if cache is not None:
                cache.close = int(_first_close(tokens)[0])
        else:
            pos = torch.arange(offset, offset + T) - cache.close
        h = self.tok_emb(tokens) + self.pos_emb(pos)
        for li, block in enumerate(self.blocks):
            h = block(h, cache, li)
        if cache is not None and not prefill:
            cache.length += T
        return self.head(self.ln_f(h))


@dataclass
class Policy:
    """A policy checkpoint: configuration, parameters and training metadata."""

    config: PolicyConfig
    model: CausalTransformer
    train_meta: dict = field(default_factory=dict)

    @classmethod
    def initialize(cls, config: PolicyConfig | None = None, seed: int = 0, std: float = 0.02):
        """Scaled-normal weights (``std``), zero biases, unit LayerNorm gains."""
        config = config or PolicyConfig()
        model = CausalTransformer(config)
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for name, prm in sorted(model.named_parameters()):
                if ".ln" in name or name.startswith("ln_"):
                    prm.fill_(1.0 if name.endswith("weight") else 0.0)
                elif name.endswith("bias"):
                    prm.zero_()
                else:
                    prm.copy_(torch.randn(prm.shape, generator=gen, dtype=DTYPE) * std)
        return cls(config, model, {"init_seed": seed})

    @classmethod
    def zeros(cls, config: PolicyConfig | None = None):
        """All parameters zero: the next-token distribution is uniform."""
        config = config or PolicyConfig()
        model = CausalTransformer(config)
        with torch.no_grad():
            for prm in model.parameters():
                prm.zero_()
        return cls(config, model, {"init": "zeros"})

    def copy(self) -> "Policy":
        return Policy(self.config, copy.deepcopy(self.model), copy.deepcopy(self.train_meta))

    def named_tensors(self) -> dict[str, torch.Tensor]:
        return {k: v.detach() for k, v in sorted(self.model.state_dict().items())}

    def parameters_equal(self, other: "Policy") -> bool:
        a, b = self.named_tensors(), other.named_tensors()
        return a.keys() == b.keys() and all(torch.equal(a[k], b[k]) for k in a)

    def forward(self, tokens) -> torch.Tensor:
        """Logits ``(T, V)`` for one token list, or ``(B, T, V)`` for a batch."""
        t = torch.as_tensor(tokens, dtype=torch.long)
        squeeze = t.dim() == 1
        if squeeze:
            t = t.unsqueeze(0)
        logits = self.model(t)
        return logits[0] if squeeze else logits


# -- likelihoods -----------------------------------------------------------------


def _batch_tensors(pairs, constrained: bool):
    """Padded token batch, per-step nucleotide targets and admissibility masks."""
    episodes = [encode_episode(y, x) for y, x in pairs]
    T = max(len(e) for e in episodes)
    tokens = torch.full((len(pairs), T), int(Token.PAD), dtype=torch.long)
    for b, e in enumerate(episodes):
        tokens[b, : len(e)] = torch.tensor(e)
    n_max = max(len(y) for y, _ in pairs)
    # gather index of the logits that predict each nucleotide / the EOS
    pos = torch.zeros((len(pairs), n_max + 1), dtype=torch.long)
    target = torch.zeros((len(pairs), n_max + 1), dtype=torch.long)
    valid = torch.zeros((len(pairs), n_max + 1), dtype=torch.bool)
    allowed = torch.ones((len(pairs), n_max + 1, VOCAB_SIZE), dtype=torch.bool)
    for b, (y, x) in enumerate(pairs):
        n = len(y)
        start = n + 2  # index of <bos>
        idx = torch.arange(start, start + n + 1)
        pos[b, : n + 1] = idx
        target[b, : n + 1] = tokens[b, start + 1: start + n + 2]
        valid[b, : n + 1] = True
        if constrained:
            m = admissible_masks(y, x)
            allowed[b, :n, :] = False
            allowed[b, :n, NUC_OFFSET: NUC_OFFSET + 4] = torch.from_numpy(m)
            allowed[b, n, :] = False
            allowed[b, n, int(Token.EOS)] = True
    return tokens, pos, target, valid, allowed


def admissible_masks(y: Structure, x: str) -> np.ndarray:
    """Boolean ``(n, 4)`` admissible nucleotides at each step given the full prefix ``x``."""
    n = len(y)
    m = np.ones((n, 4), dtype=bool)
    partner = y.partner
    for t, ch in enumerate(y.text):
        if ch == ")":
            m[t] = COMPLEMENT_MASK["ACGU".index(x[partner[t]])]
    return m


def sequence_log_probs(policy: Policy, pairs, constrained: bool = False,
                       temperature: float = 1.0) -> torch.Tensor:
    """Differentiable ``log p(x | y)`` for each ``(y, x)`` in ``pairs``.

    Unconstrained: full-vocabulary softmax at every nucleotide step plus the
    EOS step. Constrained: softmax restricted to the admissible set, so fully
    forced steps (and the final EOS) contribute exactly zero.
    """
    if constrained:
        for y, x in pairs:
            if not is_valid_design(x, y):
                raise InvalidDesign(f"{x} is not a valid design for {y.text}")
    tokens, pos, target, valid, allowed = _batch_tensors(pairs, constrained)
    logits = policy.model(tokens)
    B = tokens.shape[0]
    step_logits = logits[torch.arange(B).unsqueeze(1), pos] / temperature
    step_logits = step_logits.masked_fill(~allowed, float("-inf"))
    logp = torch.log_softmax(step_logits, dim=-1)
    picked = logp.gather(-1, target.unsqueeze(-1)).squeeze(-1)
    picked = torch.where(valid, picked, torch.zeros((), dtype=DTYPE))
    return picked.sum(dim=1)


def log_prob(policy: Policy, x: str, y: Structure, constrained: bool = False,
             temperature: float = 1.0) -> float:
    with torch.no_grad():
        return sequence_log_probs(policy, [(y, x)], constrained, temperature)[0].item()


def grad_log_prob(policy: Policy, x: str, y: Structure, constrained: bool = False,
                  scale: float = 1.0) -> dict[str, torch.Tensor]:
    """Gradient of ``scale * log p(x | y)`` for every named parameter."""
    policy.model.zero_grad(set_to_none=True)
    value = sequence_log_probs(policy, [(y, x)], constrained)[0] * scale
    value.backward()
    grads = {
        name: (prm.grad.detach().clone() if prm.grad is not None else torch.zeros_like(prm))
        for name, prm in policy.model.named_parameters()
    }
    policy.model.zero_grad(set_to_none=True)
    return dict(sorted(grads.items()))


# -- checkpoint file ---------------------------------------------------------------

MAGIC = b"RNLM"
FORMAT_VERSION = 1


def save_checkpoint(policy: Policy, path) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    buf.write(struct.pack("<6I", *policy.config.as_tuple()))
    tensors = policy.named_tensors()
    buf.write(struct.pack("<I", len(tensors)))
    for name, t in tensors.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", t.dim()))
        buf.write(struct.pack(f"<{t.dim()}I", *t.shape))
        buf.write(t.to(DTYPE).contiguous().numpy().astype("<f8").tobytes())
    meta = json.dumps(policy.train_meta, sort_keys=True, default=str).encode("utf-8")
    buf.write(struct.pack("<I", len(meta)))
    buf.write(meta)
    try:
        Path(path).write_bytes(buf.getvalue())
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.at = 0

    def take(self, n: int) -> bytes:
        if self.at + n > len(self.data):
            raise EOFError
        chunk = self.data[self.at: self.at + n]
        self.at += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u32s(self, count: int) -> tuple[int, ...]:
        return struct.unpack(f"<{count}I", self.take(4 * count))


def load_checkpoint(path, config: PolicyConfig | None = None) -> Policy:
    """Read a checkpoint; with ``config`` given, tensor shapes must match it."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    r = _Reader(data)
    try:
        if r.take(4) != MAGIC:
            raise BadMagic(f"{path}: not an RNLM checkpoint")
        version = r.u32()
        if version != FORMAT_VERSION:
            raise VersionMismatch(f"{path}: format version {version}, expected {FORMAT_VERSION}")
        stored = PolicyConfig(*r.u32s(6))
        n_tensors = r.u32()
    except (EOFError, ValueError) as exc:
        raise BadMagic(f"{path}: truncated or corrupt header") from exc
    target = config or stored
    model = CausalTransformer(target)
    expected = model.state_dict()
    loaded = {}
    name = "<header>"
    try:
        for _ in range(n_tensors):
            name = r.take(r.u32()).decode("utf-8")
            shape = r.u32s(r.u32())
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape)
            if name not in expected:
                raise ShapeMismatch(f"{path}: unexpected tensor {name!r}")
            if tuple(expected[name].shape) != shape:
                raise ShapeMismatch(
                    f"{path}: tensor {name!r} has shape {shape}, "
                    f"expected {tuple(expected[name].shape)}"
                )
            if not np.all(np.isfinite(arr)):
                raise CheckpointError(f"{path}: tensor {name!r} holds non-finite values")
            loaded[name] = torch.from_numpy(arr.astype(np.float64))
        meta_len = r.u32()
        meta = json.loads(r.take(meta_len).decode("utf-8"))
    except EOFError:
        raise ShapeMismatch(f"{path}: file truncated while reading tensor {name!r}") from None
    missing = sorted(set(expected) - set(loaded))
    if missing:
        raise ShapeMismatch(f"{path}: missing tensor {missing[0]!r}")
    if r.at != len(data):
        raise ShapeMismatch(f"{path}: {len(data) - r.at} trailing bytes")
    model.load_state_dict(loaded)
    return Policy(target, model, meta)


# -- baseline sampler ----------------------------------------------------------------

_PAIR_CHOICES = ("GC", "CG", "AU", "UA", "GU", "UG")
# class weights 70:40:10 normalised to 7:4:1, split evenly inside each class
_PAIR_WEIGHTS = np.array([7, 7, 4, 4, 1, 1], dtype=float) / 24.0
_UNPAIRED_CHOICES = ("A", "C", "G", "U")
_UNPAIRED_WEIGHTS = np.array([0.9, 0.1 / 3, 0.1 / 3, 0.1 / 3])


def target_init_sample(y: Structure, seed) -> str:
    """Draw one sequence from the target-initialization baseline.

    ``seed`` is anything :func:`numpy.random.default_rng` accepts, including
    a ``Generator`` to continue an existing stream.
    """
    rng = np.random.default_rng(seed)
    out = ["A"] * len(y)
    unpaired = rng.choice(4, size=len(y.unpaired), p=_UNPAIRED_WEIGHTS)
    for i, c in zip(y.unpaired, unpaired):
        out[i] = _UNPAIRED_CHOICES[c]
    pairs = rng.choice(6, size=len(y.pairs), p=_PAIR_WEIGHTS)
    for (i, j), c in zip(y.pairs, pairs):
        out[i], out[j] = _PAIR_CHOICES[c]
    return "".join(out)


def config_dict(cfg: PolicyConfig) -> dict:
    return asdict(cfg)
