"""Attention scoring functions mapping (query, keys) to per-token scores.

Two scorers: the classic additive form v . tanh(W_q q + W_k k_j), and a
transformer scorer that projects query and keys into a shared space, joins
them with a trainable separator vector, runs a small 2-layer encoder and
reads one scalar per key position off a feedforward head.  The transformer
scorer sees token positions (via a fixed sinusoidal table added to the key
slots only), which is what lets it resolve positional references between a
medication and its attribute phrases; the additive scorer is position-blind.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .nn import glorot, sinusoidal_positions, zeros
from .tensor import Tensor

__all__ = [
    "AdditiveScorerParams",
    "EncoderLayerParams",
    "TAScoreParams",
    "additive_score",
    "tascore",
    "score",
]


@dataclass
class AdditiveScorerParams:
    w_query: Tensor  # (m, m)
    w_key: Tensor  # (m, n_key)
    v: Tensor  # (m,)

    @classmethod
    def init(cls, query_dim: int, key_dim: int, rng: np.random.Generator) -> "AdditiveScorerParams":
        return cls(
            w_query=glorot(rng, query_dim, query_dim),
            w_key=glorot(rng, query_dim, key_dim, shape=(query_dim, key_dim)),
            v=glorot(rng, query_dim, 1, shape=(query_dim,)),
        )


def additive_score(q: Tensor, keys: Tensor, params: AdditiveScorerParams) -> Tensor:
    """s_j = v . tanh(W_q q + W_k k_j), one score per key row."""
    m = params.w_query.shape[0]
    if q.shape != (m,):
        raise T.ShapeError(f"additive_score: query shape {q.shape} does not match W_q {params.w_query.shape}")
    if keys.data.ndim != 2 or keys.shape[1] != params.w_key.shape[1]:
        raise T.ShapeError(f"additive_score: keys shape {keys.shape} does not match W_k {params.w_key.shape}")
    qp = T.matmul(params.w_query, q)  # (m,)
    kp = T.matmul(keys, T.transpose(params.w_key))  # (l, m)
    return T.matmul(T.tanh(T.add(kp, qp)), params.v)  # (l,)


@dataclass
class EncoderLayerParams:
    """One post-norm transformer encoder layer (single-head self-attention)."""

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    b_q: Tensor
    b_k: Tensor
    b_v: Tensor
    b_o: Tensor
    ln1_gain: Tensor
    ln1_bias: Tensor
    w_ff1: Tensor
    b_ff1: Tensor
    w_ff2: Tensor
    b_ff2: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor

    @classmethod
    def init(cls, dim: int, ff_dim: int, rng: np.random.Generator) -> "EncoderLayerParams":
        return cls(
            w_q=glorot(rng, dim, dim),
            w_k=glorot(rng, dim, dim),
            w_v=glorot(rng, dim, dim),
            w_o=glorot(rng, dim, dim),
            b_q=zeros(dim),
            b_k=zeros(dim),
            b_v=zeros(dim),
            b_o=zeros(dim),
            ln1_gain=Tensor(np.ones(dim), requires_grad=True),
            ln1_bias=zeros(dim),
            w_ff1=glorot(rng, dim, ff_dim),
            b_ff1=zeros(ff_dim),
            w_ff2=glorot(rng, ff_dim, dim),
            b_ff2=zeros(dim),
            ln2_gain=Tensor(np.ones(dim), requires_grad=True),
            ln2_bias=zeros(dim),
        )


@dataclass
class TAScoreParams:
    """Transformer attention scorer parameters.

    ``positional`` is a fixed sinusoidal table (not trained); everything else
    is trainable.  Defaults follow the reference configuration: hidden size
    32, two encoder layers, dropout 0.2 and a (16, 1) scalar head.
    """

    w_query_in: Tensor  # (n_query, dim)
    b_query_in: Tensor
    w_key_in: Tensor  # (n_key, dim)
    b_key_in: Tensor
    separator: Tensor  # (dim,)
    layers: list[EncoderLayerParams]
    w_head1: Tensor  # (dim, head_hidden)
    b_head1: Tensor
    w_head2: Tensor  # (head_hidden, 1)
    b_head2: Tensor
    positional: np.ndarray = field(repr=False, default=None)
    dropout_p: float = 0.2

    @classmethod
    def init(
        cls,
        query_dim: int,
        key_dim: int,
        rng: np.random.Generator,
        dim: int = 32,
        n_layers: int = 2,
        head_hidden: int = 16,
        dropout_p: float = 0.2,
        max_len: int = 256,
    ) -> "TAScoreParams":
        return cls(
            w_query_in=glorot(rng, query_dim, dim),
            b_query_in=zeros(dim),
            w_key_in=glorot(rng, key_dim, dim),
            b_key_in=zeros(dim),
            separator=Tensor(rng.normal(0.0, 0.1, dim), requires_grad=True),
            layers=[EncoderLayerParams.init(dim, dim, rng) for _ in range(n_layers)],
            w_head1=glorot(rng, dim, head_hidden),
            b_head1=zeros(head_hidden),
            w_head2=glorot(rng, head_hidden, 1),
            b_head2=zeros(1),
            positional=sinusoidal_positions(max_len, dim),
            dropout_p=dropout_p,
        )

    @property
    def dim(self) -> int:
        return self.separator.shape[0]

    @property
    def max_len(self) -> int:
        return self.positional.shape[0]


def _encoder_layer(x: Tensor, layer: EncoderLayerParams, p: float, rng) -> Tensor:
    d = layer.w_q.shape[0]
    q = T.add(T.matmul(x, layer.w_q), layer.b_q)
    k = T.add(T.matmul(x, layer.w_k), layer.b_k)
    v = T.add(T.matmul(x, layer.w_v), layer.b_v)
    attn = T.softmax_rows(T.mul(T.matmul(q, T.transpose(k)), 1.0 / np.sqrt(d)))
    attn = T.dropout(attn, p, rng)
    mixed = T.add(T.matmul(T.matmul(attn, v), layer.w_o), layer.b_o)
    x = T.layer_norm(T.add(x, T.dropout(mixed, p, rng)), layer.ln1_gain, layer.ln1_bias)
    ff = T.add(T.matmul(T.relu(T.add(T.matmul(x, layer.w_ff1), layer.b_ff1)), layer.w_ff2), layer.b_ff2)
    return T.layer_norm(T.add(x, T.dropout(ff, p, rng)), layer.ln2_gain, layer.ln2_bias)


def tascore(
    q: Tensor,
    keys: Tensor,
    params: TAScoreParams,
    rng: np.random.Generator | None = None,
    position_offset: int = 0,
) -> Tensor:
    """Transformer scorer: one scalar per key row.

    Sequence layout is [query slot; separator; key slots].  Positional
    embeddings are added to the key slots only; the query slot output is
    discarded (scores are read from key positions).  Pass ``rng`` to enable
    dropout (training); with ``rng=None`` the call is deterministic.
    """
    n_keys = keys.shape[0]
    if position_offset < 0 or position_offset + n_keys > params.max_len:
        raise ValueError(
            f"tascore: {n_keys} keys at offset {position_offset} exceed max length {params.max_len}"
        )
    p = params.dropout_p if rng is not None else 0.0
    q_in = T.add(T.matmul(q, params.w_query_in), params.b_query_in)  # (dim,)
    k_in = T.add(T.matmul(keys, params.w_key_in), params.b_key_in)  # (l, dim)
    k_in = T.add(k_in, Tensor(params.positional[position_offset : position_offset + n_keys]))
    x = T.concat(
        [T.reshape(q_in, (1, params.dim)), T.reshape(params.separator, (1, params.dim)), k_in],
        axis=0,
    )
    for layer in params.layers:
        x = _encoder_layer(x, layer, p, rng)
    h = x[2:]  # key positions only
    h = T.relu(T.add(T.matmul(h, params.w_head1), params.b_head1))
    h = T.dropout(h, p, rng)
    out = T.add(T.matmul(h, params.w_head2), params.b_head2)  # (l, 1)
    return T.reshape(out, (n_keys,))


def score(q: Tensor, keys: Tensor, params, rng=None) -> Tensor:
    """Dispatch on the parameter type."""
    if isinstance(params, AdditiveScorerParams):
        return additive_score(q, keys, params)
    return tascore(q, keys, params, rng=rng)
