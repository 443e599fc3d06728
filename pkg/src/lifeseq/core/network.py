"""Decoder-only life-sequence transformer.

Embedding block (centred token embeddings plus sinusoidal positions and
bounded Time2Vec age/year streams behind ReZero gates), a stack of pre-norm
decoder blocks mixing exact local heads with causal Performer global heads,
and an untied vocabulary head.
"""

import math
from typing import Dict, List, Optional, Sequence

import torch
from torch import nn

from ..models.parameters import ModelConfig, derive_seed
from . import numerics
from .encoding import LifeSequence

ROPE_BASE = 10000.0
PERFORMER_EPS = 1e-9
PERFORMER_CHUNK = 64
RMS_EPS = 1e-8
REFERENCE_PARAMETER_COUNT = 10_100_000


def time2vec(x: torch.Tensor, w: torch.Tensor, phi: torch.Tensor, Z: int) -> torch.Tensor:
    """Bounded Time2Vec: tanh on the first d/Z components, sin on the rest.

    Args:
        x: Times of any shape
        w: Frequencies [d]
        phi: Phases [d]
        Z: Split ratio (2 for calendar year, 4 for age)

    Returns:
        Tensor of shape x.shape + (d,) with every component in [-1, 1]
    """
    d = w.shape[-1]
    if Z < 1 or d % Z != 0:
        raise ValueError(f"time2vec: d={d} is not divisible by Z={Z}")
    n_tanh = d // Z
    angles = x.unsqueeze(-1) * w + phi
    return numerics.concat([torch.tanh(angles[..., :n_tanh]), torch.sin(angles[..., n_tanh:])], dim=-1)


class Time2Vec(nn.Module):
    def __init__(self, d_model: int, Z: int):
        super().__init__()
        if d_model % Z != 0:
            raise ValueError(f"d_model={d_model} is not divisible by Z={Z}")
        self.Z = Z
        self.w = nn.Parameter(torch.randn(d_model) * 0.1)
        self.phi = nn.Parameter(torch.zeros(d_model))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return time2vec(x, self.w, self.phi, self.Z)


def sinusoidal_table(max_len: int, d_model: int) -> torch.Tensor:
    """Absolute sinusoidal position table [max_len, d_model]."""
    position = torch.arange(max_len, dtype=torch.float64).unsqueeze(1)
    div = torch.exp(torch.arange(0, d_model, 2, dtype=torch.float64) * (-math.log(10000.0) / d_model))
    table = torch.zeros(max_len, d_model, dtype=torch.float64)
    table[:, 0::2] = torch.sin(position * div)
    table[:, 1::2] = torch.cos(position * div)[:, : d_model // 2]
    return table


class Dropout(nn.Module):
    """Module wrapper over numerics.dropout with a mutable rate."""

    def __init__(self, rate: float):
        super().__init__()
        self.rate = rate

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return numerics.dropout(x, self.rate, training=self.training)


class EmbeddingBlock(nn.Module):
    """Token embeddings plus ReZero-gated position, age and year streams.

    Gates are ordered (position, age, year) and start at zero, so at
    initialisation the block returns the centred token embeddings exactly.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.max_len = config.max_len
        self.token_embedding = nn.Embedding(config.vocab_size, config.d_model)
        nn.init.normal_(self.token_embedding.weight, std=0.02)
        self.register_buffer("positional", sinusoidal_table(config.max_len, config.d_model).float())
        self.age_time2vec = Time2Vec(config.d_model, config.age_Z)
        self.year_time2vec = Time2Vec(config.d_model, config.year_Z)
        self.rezero_gates = nn.Parameter(torch.zeros(3))
        self.dropout = Dropout(config.dropout_rate)

    def centered_embeddings(self) -> torch.Tensor:
        weight = self.token_embedding.weight
        return weight - weight.mean(dim=1, keepdim=True)

    def forward(self, token_ids: torch.Tensor, year_index: torch.Tensor, age: torch.Tensor) -> torch.Tensor:
        length = token_ids.shape[-1]
        if length > self.max_len:
            raise ValueError(f"sequence length {length} exceeds max_len {self.max_len}")
        tokens = numerics.gather_rows(self.centered_embeddings(), token_ids)
        dtype = tokens.dtype
        gates = self.rezero_gates
        out = (
            tokens
            + gates[0] * self.positional[:length]
            + gates[1] * self.age_time2vec(age.to(dtype))
            + gates[2] * self.year_time2vec(year_index.to(dtype))
        )
        return self.dropout(out)


def rope_apply(x: torch.Tensor, positions: torch.Tensor, base: float = ROPE_BASE) -> torch.Tensor:
    """Rotate consecutive pairs (x[2j], x[2j+1]) by position * base^(-2j/d).

    Args:
        x: [..., L, d] with d even
        positions: [L] integer or real positions

    Raises:
        ValueError: If the last dimension is odd
    """
    d = x.shape[-1]
    if d % 2 != 0:
        raise ValueError(f"rope_apply: head dimension must be even, got {d}")
    theta = base ** (-torch.arange(0, d, 2, dtype=x.dtype, device=x.device) / d)
    angles = positions.to(x.dtype).unsqueeze(-1) * theta  # [L, d/2]
    cos, sin = torch.cos(angles), torch.sin(angles)
    even, odd = x[..., 0::2], x[..., 1::2]
    rotated = torch.stack((even * cos - odd * sin, even * sin + odd * cos), dim=-1)
    return rotated.flatten(-2)


def exact_causal_attention(
    q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, window: Optional[int] = None
) -> torch.Tensor:
    """Softmax attention where position i sees j <= i (and i - j < window when given)."""
    length, head_dim = q.shape[-2], q.shape[-1]
    scores = numerics.matmul(q, k.transpose(-2, -1)) / math.sqrt(head_dim)
    i = torch.arange(length, device=q.device).unsqueeze(1)
    j = torch.arange(length, device=q.device).unsqueeze(0)
    allowed = j <= i
    if window is not None:
        allowed = allowed & (i - j < window)
    scores = scores.masked_fill(~allowed, float("-inf"))
    return numerics.matmul(numerics.softmax(scores), v)


def local_causal_head(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, window: int = 36) -> torch.Tensor:
    if window < 1:
        raise ValueError(f"window must be at least 1, got {window}")
    return exact_causal_attention(q, k, v, window=window)


def orthogonal_random_features(
    n_features: int,
    head_dim: int,
    generator: Optional[torch.Generator] = None,
    dtype: torch.dtype = torch.float32,
) -> torch.Tensor:
    """Draw an [n_features, head_dim] projection with orthogonal blocks.

    Rows within each head_dim block are orthonormal; each row is then
    rescaled by the norm of an independent Gaussian vector.
    """
    blocks = []
    remaining = n_features
    while remaining > 0:
        gaussian = torch.randn(head_dim, head_dim, generator=generator, dtype=torch.float64)
        q, _ = torch.linalg.qr(gaussian)
        block = q.T
        blocks.append(block[: min(remaining, head_dim)])
        remaining -= head_dim
    directions = torch.cat(blocks, dim=0)
    norms = torch.randn(n_features, head_dim, generator=generator, dtype=torch.float64).norm(dim=1)
    return (norms.unsqueeze(1) * directions).to(dtype)


def _feature_logits(x: torch.Tensor, projection: torch.Tensor) -> torch.Tensor:
    """Exponents w.x - |x|^2 / 2 of the positive random features, x scaled by d^(-1/4)."""
    x = x * x.shape[-1] ** -0.25
    return x @ projection.T - (x * x).sum(dim=-1, keepdim=True) / 2.0


def performer_global_head(
    q: torch.Tensor,
    k: torch.Tensor,
    v: torch.Tensor,
    projection: torch.Tensor,
    eps: float = PERFORMER_EPS,
    diagnostics: Optional[Dict[str, int]] = None,
    chunk_size: int = PERFORMER_CHUNK,
) -> torch.Tensor:
    """Causal FAVOR+ attention with positive random features and prefix sums.

    Query features are stabilised by their own row maximum. Key features are
    stabilised by the running maximum over keys seen so far, and the prefix
    sums are carried chunk by chunk, rescaled to each query's running
    maximum. Every exponent is at most zero and no position's features
    depend on later keys.

    Args:
        q, k, v: [..., L, head_dim], RoPE already applied to q and k
        projection: [n_features, head_dim]
        eps: Floor for the normaliser
        diagnostics: Optional dict; "clamped_denominators" is incremented per clamped row
        chunk_size: Positions per block of the prefix-sum scan

    Returns:
        [..., L, head_dim]
    """
    if projection.shape[-1] != q.shape[-1]:
        raise ValueError(
            f"projection shape {tuple(projection.shape)} does not match head dim {q.shape[-1]}"
        )
    scale = 1.0 / math.sqrt(projection.shape[0])
    q_logits = _feature_logits(q, projection)
    q_features = torch.exp(q_logits - q_logits.amax(dim=-1, keepdim=True).detach()) * scale
    k_logits = _feature_logits(k, projection)
    running = torch.cummax(k_logits.amax(dim=-1).detach(), dim=-1).values  # [..., L]
    k_features = torch.exp(k_logits - running.unsqueeze(-1)) * scale

    numerators, denominators = [], []
    state = norm = reference = None
    length = q.shape[-2]
    for start in range(0, length, chunk_size):
        block = slice(start, min(start + chunk_size, length))
        qf, kf, vb, m = q_features[..., block, :], k_features[..., block, :], v[..., block, :], running[..., block]
        # key j reaches query i (j <= i) with factor exp(m_j - m_i) <= 1
        exponent = m.unsqueeze(-2) - m.unsqueeze(-1)
        size = m.shape[-1]
        causal = torch.ones(size, size, dtype=torch.bool, device=m.device).tril()
        weights = (qf @ kf.transpose(-2, -1)) * torch.exp(exponent.masked_fill(~causal, float("-inf")))
        numerator = weights @ vb
        denominator = weights.sum(dim=-1)
        if state is not None:
            carry = torch.exp(reference.unsqueeze(-1) - m)
            numerator = numerator + carry.unsqueeze(-1) * (qf @ state)
            denominator = denominator + carry * (qf @ norm.unsqueeze(-1)).squeeze(-1)
        numerators.append(numerator)
        denominators.append(denominator)

        last = m[..., -1]
        shifted = kf * torch.exp(m - last.unsqueeze(-1)).unsqueeze(-1)
        block_state, block_norm = shifted.transpose(-2, -1) @ vb, shifted.sum(dim=-2)
        if state is None:
            state, norm = block_state, block_norm
        else:
            rescale = torch.exp(reference - last)
            state = rescale[..., None, None] * state + block_state
            norm = rescale[..., None] * norm + block_norm
        reference = last

    numerator = torch.cat(numerators, dim=-2)
    denominator = torch.cat(denominators, dim=-1)
    small = denominator < eps
    if diagnostics is not None:
        diagnostics["clamped_denominators"] = diagnostics.get("clamped_denominators", 0) + int(small.sum())
    denominator = torch.where(small, torch.full_like(denominator, eps), denominator)
    return numerator / denominator.unsqueeze(-1)


def rmsnorm(x: torch.Tensor, gain: torch.Tensor, eps: float = RMS_EPS) -> torch.Tensor:
    rms = torch.sqrt((x * x).mean(dim=-1, keepdim=True) + eps)
    return x / rms * gain


class RMSNorm(nn.Module):
    def __init__(self, d_model: int, eps: float = RMS_EPS):
        super().__init__()
        self.eps = eps
        self.gain = nn.Parameter(torch.ones(d_model))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return rmsnorm(x, self.gain, self.eps)


class MultiHeadAttention(nn.Module):
    """Local exact heads followed by RoPE + Performer global heads."""

    def __init__(self, config: ModelConfig, generator: Optional[torch.Generator] = None):
        super().__init__()
        self.n_heads = config.n_heads
        self.n_local = config.n_local_heads
        self.window = config.local_window
        self.head_dim = config.resolved_head_dim
        inner = self.n_heads * self.head_dim
        self.q_proj = nn.Linear(config.d_model, inner, bias=False)
        self.k_proj = nn.Linear(config.d_model, inner, bias=False)
        self.v_proj = nn.Linear(config.d_model, inner, bias=False)
        self.out_proj = nn.Linear(inner, config.d_model)
        self.register_buffer(
            "projection",
            orthogonal_random_features(config.n_random_features, self.head_dim, generator),
        )

    def redraw(self, generator: Optional[torch.Generator] = None) -> None:
        fresh = orthogonal_random_features(
            self.projection.shape[0], self.head_dim, generator, dtype=self.projection.dtype
        )
        self.projection.copy_(fresh.to(self.projection.device))

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        batch, length, _ = x.shape
        return x.view(batch, length, self.n_heads, self.head_dim).transpose(1, 2)

    def forward(self, x: torch.Tensor, diagnostics: Optional[Dict[str, int]] = None) -> torch.Tensor:
        batch, length, _ = x.shape
        q, k, v = self._split(self.q_proj(x)), self._split(self.k_proj(x)), self._split(self.v_proj(x))
        outputs = []
        if self.n_local:
            local = slice(0, self.n_local)
            outputs.append(local_causal_head(q[:, local], k[:, local], v[:, local], self.window))
        if self.n_local < self.n_heads:
            glob = slice(self.n_local, self.n_heads)
            positions = torch.arange(length, device=x.device)
            outputs.append(
                performer_global_head(
                    rope_apply(q[:, glob], positions),
                    rope_apply(k[:, glob], positions),
                    v[:, glob],
                    self.projection,
                    diagnostics=diagnostics,
                )
            )
        heads = numerics.concat(outputs, dim=1)
        merged = heads.transpose(1, 2).reshape(batch, length, self.n_heads * self.head_dim)
        return self.out_proj(merged)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, d_ff: int):
        super().__init__()
        self.up = nn.Linear(d_model, d_ff)
        self.down = nn.Linear(d_ff, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.down(torch.nn.functional.gelu(self.up(x)))


class DecoderBlock(nn.Module):
    """Pre-norm block; dropout acts on sublayer outputs before the residual add."""

    def __init__(self, config: ModelConfig, generator: Optional[torch.Generator] = None):
        super().__init__()
        self.attn_norm = RMSNorm(config.d_model)
        self.attention = MultiHeadAttention(config, generator)
        self.ffn_norm = RMSNorm(config.d_model)
        self.feed_forward = FeedForward(config.d_model, config.d_ff)
        self.attn_dropout = Dropout(config.dropout_rate)
        self.ffn_dropout = Dropout(config.dropout_rate)

    def forward(self, x: torch.Tensor, diagnostics: Optional[Dict[str, int]] = None) -> torch.Tensor:
        x = x + self.attn_dropout(self.attention(self.attn_norm(x), diagnostics))
        return x + self.ffn_dropout(self.feed_forward(self.ffn_norm(x)))


class LifeSequenceTransformer(nn.Module):
    """Next-token model over life sequences.

    Args:
        config: Architecture; vocab_size must be set
        generator: Optional generator for the initial random-feature draw
    """

    def __init__(self, config: ModelConfig, generator: Optional[torch.Generator] = None):
        super().__init__()
        if config.vocab_size < 1:
            raise ValueError("ModelConfig.vocab_size must be set before building the model")
        self.config = config
        self.max_len = config.max_len
        self.embedding = EmbeddingBlock(config)
        self.layers = nn.ModuleList(DecoderBlock(config, generator) for _ in range(config.n_layers))
        self.head = nn.Linear(config.d_model, config.vocab_size)

    def forward(
        self,
        token_ids: torch.Tensor,
        year_index: torch.Tensor,
        age: torch.Tensor,
        diagnostics: Optional[Dict[str, int]] = None,
    ) -> torch.Tensor:
        """Logits [B, L, vocab_size] for [B, L] id, year and age streams."""
        if token_ids.dim() == 1:
            token_ids, year_index, age = token_ids[None], year_index[None], age[None]
        if not (token_ids.shape == year_index.shape == age.shape):
            raise ValueError(
                f"stream shapes differ: tokens {tuple(token_ids.shape)}, "
                f"year_index {tuple(year_index.shape)}, age {tuple(age.shape)}"
            )
        x = self.embedding(token_ids, year_index, age)
        for layer in self.layers:
            x = layer(x, diagnostics)
        return self.head(x)

    @torch.no_grad()
    def redraw_projections(self, generator: Optional[torch.Generator] = None) -> None:
        for layer in self.layers:
            layer.attention.redraw(generator)

    def projections(self) -> List[torch.Tensor]:
        """Copies of every layer's random-feature projection."""
        return [layer.attention.projection.clone() for layer in self.layers]

    @torch.no_grad()
    def set_projections(self, projections: Sequence[torch.Tensor]) -> None:
        if len(projections) != len(self.layers):
            raise ValueError(f"expected {len(self.layers)} projections, got {len(projections)}")
        for layer, projection in zip(self.layers, projections):
            layer.attention.projection.copy_(projection)

    def set_dropout(self, rate: float) -> None:
        if not 0 <= rate < 1:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        for module in self.modules():
            if isinstance(module, Dropout):
                module.rate = rate


def build_model(config: ModelConfig, seed: int) -> LifeSequenceTransformer:
    """Model whose initial weights and projections depend on seed alone.

    The global torch generator is seeded inside a forked RNG state, so the
    caller's random state is left as it was.
    """
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(derive_seed(seed, "init/weights"))
        projections = torch.Generator().manual_seed(derive_seed(seed, "init/projections"))
        return LifeSequenceTransformer(config, projections)


def sequence_tensors(seq: LifeSequence, device: Optional[torch.device] = None):
    """(token_ids, year_index, age) long tensors of shape [1, L]."""
    def as_tensor(values):
        return torch.tensor([values], dtype=torch.long, device=device)

    return as_tensor(seq.tokens), as_tensor(seq.year_index), as_tensor(seq.age)


def forward_sequence(model: LifeSequenceTransformer, seq: LifeSequence, mode: str = "eval") -> torch.Tensor:
    """Logits [L, vocab_size] for one sequence in train or eval mode."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    model.train(mode == "train")
    device = next(model.parameters()).device
    return model(*sequence_tensors(seq, device))[0]


def parameter_census(model: nn.Module) -> Dict[str, int]:
    """Trainable parameter counts per top-level component plus the total."""
    census: Dict[str, int] = {}
    for name, p in model.named_parameters():
        parts = name.split(".")
        component = ".".join(parts[:2]) if parts[0] == "layers" else parts[0]
        census[component] = census.get(component, 0) + p.numel()
    census["total"] = sum(p.numel() for p in model.parameters())
    return census


def census_deviation(total: int, reference: int = REFERENCE_PARAMETER_COUNT) -> float:
    """Relative deviation of a parameter count from the reference count."""
    return (total - reference) / reference
