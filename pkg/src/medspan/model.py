"""The identify -> classify -> extract pipeline.

A frozen embedder turns words into vectors, a trainable 2-d speaker
embedding is concatenated per token, the pooled medication representation
queries three independent attention functions (one per attribute), and each
attribute's classifier sees the input text only through its attention-
weighted context vector.  Spans fall out of the attention weights by
thresholding.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import ATTRIBUTES, CLASSES, SPEAKERS, DataPoint
from .nn import glorot, zeros
from .projections import ProjectionConfig, project
from .scorers import AdditiveScorerParams, TAScoreParams, additive_score, tascore
from .tensor import Tensor

__all__ = [
    "EmbeddingSource",
    "ExtractionThresholds",
    "AttentionResult",
    "ClassifierParams",
    "ModelConfig",
    "ModelParams",
    "encode_text",
    "pool_medication",
    "identify",
    "classify",
    "extract_spans",
    "forward",
    "make_predictor",
    "make_oracle_predictor",
    "write_embedding_file",
    "read_embedding_file",
]

SPEAKER_DIM = 2


# ---------------------------------------------------------------------------
# frozen embeddings


def _token_vector(token: str, dim: int, seed: int) -> np.ndarray:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    rng = np.random.default_rng([seed, int.from_bytes(digest, "little")])
    return rng.standard_normal(dim) / np.sqrt(dim)


@dataclass
class EmbeddingSource:
    """Where frozen word vectors come from.

    ``frozen_random`` derives a deterministic vector per word type from the
    seed and mixes a fixed window-3 average over neighbors to imitate
    contextualization; ``precomputed_file`` serves word vectors exported by
    an external contextual encoder.  Neither mode ever receives gradients.
    """

    mode: str = "frozen_random"
    dim: int = 64
    seed: int = 0
    max_seq_len: int = 256
    table: dict = field(default_factory=dict, repr=False)  # id -> (n_words, dim)
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_file(cls, path) -> "EmbeddingSource":
        dim, table = read_embedding_file(path)
        return cls(mode="precomputed_file", dim=dim, table=table)

    def embed(self, tokens: list[str], example_id: str | None = None) -> np.ndarray:
        """(l, dim) frozen word vectors for one example."""
        if len(tokens) > self.max_seq_len:
            raise ValueError(f"sequence of {len(tokens)} tokens exceeds max length {self.max_seq_len}")
        if self.mode == "precomputed_file":
            if example_id not in self.table:
                raise KeyError(f"no precomputed embeddings for example {example_id!r}")
            vecs = self.table[example_id]
            if vecs.shape != (len(tokens), self.dim):
                raise ValueError(
                    f"precomputed embeddings for {example_id!r} have shape {vecs.shape}, "
                    f"expected ({len(tokens)}, {self.dim})"
                )
            return vecs
        base = np.empty((len(tokens), self.dim))
        for i, tok in enumerate(tokens):
            vec = self._cache.get(tok)
            if vec is None:
                vec = _token_vector(tok, self.dim, self.seed)
                self._cache[tok] = vec
            base[i] = vec
        # fixed untrained local mixing, window 3, to imitate contextualization
        mixed = base.copy()
        if len(tokens) > 1:
            mixed[1:] += base[:-1]
            mixed[:-1] += base[1:]
            counts = np.full((len(tokens), 1), 3.0)
            counts[0, 0] = counts[-1, 0] = 2.0
            mixed /= counts
        return mixed


def write_embedding_file(path, dim: int, table: dict[str, np.ndarray]) -> None:
    """Plain-text embedding format: header, then id line + one line per word."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"dim={dim} count={len(table)}\n")
        for ex_id, vecs in table.items():
            fh.write(ex_id + "\n")
            for row in vecs:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_embedding_file(path):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        try:
            dim_part, count_part = header.split()
            dim = int(dim_part.removeprefix("dim="))
            count = int(count_part.removeprefix("count="))
        except ValueError:
            raise ValueError(f"{path}: bad embedding header {header!r}") from None
        table: dict[str, np.ndarray] = {}
        ex_id = None
        rows: list[list[float]] = []

        def flush():
            if ex_id is None:
                return
            if not rows:
                raise ValueError(f"{path}: example {ex_id!r} has no embedding rows")
            table[ex_id] = np.array(rows, dtype=np.float64)

        for raw in fh:
            line = raw.strip()
            if not line:
                continue
            parts = line.split()
            row = _parse_row(parts) if len(parts) == dim else None
            if row is not None:
                if ex_id is None:
                    raise ValueError(f"{path}: embedding row before any example id")
                rows.append(row)
            else:
                flush()
                ex_id, rows = line, []
        flush()
    if len(table) != count:
        raise ValueError(f"{path}: header says count={count} but found {len(table)} examples")
    return dim, table


def _parse_row(parts: list[str]) -> list[float] | None:
    try:
        return [float(x) for x in parts]
    except ValueError:
        return None


# ---------------------------------------------------------------------------
# model parameters


@dataclass
class ExtractionThresholds:
    """Per-attribute extraction thresholds; fusedmax pins all three to 0."""

    frequency: float = 0.0
    route: float = 0.0
    change: float = 0.0

    def __post_init__(self):
        for attr in ATTRIBUTES:
            if getattr(self, attr) < 0:
                raise ValueError(f"threshold for {attr} must be >= 0")

    def get(self, attr: str) -> float:
        return getattr(self, attr)

    @classmethod
    def zeros(cls) -> "ExtractionThresholds":
        return cls()


@dataclass
class AttentionResult:
    attribute: str
    scores: Tensor  # raw (l,)
    weights: Tensor  # simplex (l,)


@dataclass
class ClassifierParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    dropout_p: float = 0.2

    @classmethod
    def init(cls, in_dim: int, hidden: int, n_classes: int, rng, dropout_p: float = 0.2):
        return cls(
            w1=glorot(rng, in_dim, hidden),
            b1=zeros(hidden),
            w2=glorot(rng, hidden, n_classes),
            b2=zeros(n_classes),
            dropout_p=dropout_p,
        )


@dataclass
class ModelConfig:
    scorer: str = "tascore"  # or "additive"
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)
    embed_dim: int = 64
    seed: int = 0
    classifier_hidden: int = 512
    tascore_dim: int = 32
    tascore_layers: int = 2
    tascore_head_hidden: int = 16
    dropout_p: float = 0.2
    max_seq_len: int = 256

    @property
    def key_dim(self) -> int:
        return self.embed_dim + SPEAKER_DIM


@dataclass
class ModelParams:
    config: ModelConfig
    embedding: EmbeddingSource
    speaker_table: Tensor  # (4, 2)
    scorers: dict
    classifiers: dict

    @classmethod
    def init(cls, config: ModelConfig, embedding: EmbeddingSource | None = None) -> "ModelParams":
        rng = np.random.default_rng(config.seed)
        if embedding is None:
            embedding = EmbeddingSource(dim=config.embed_dim, seed=config.seed,
                                        max_seq_len=config.max_seq_len)
        elif embedding.dim != config.embed_dim:
            raise ValueError(
                f"embedding dim {embedding.dim} does not match configured embed_dim {config.embed_dim}"
            )
        scorers = {}
        for attr in ATTRIBUTES:  # no weight sharing across attributes
            if config.scorer == "additive":
                scorers[attr] = AdditiveScorerParams.init(config.embed_dim, config.key_dim, rng)
            elif config.scorer == "tascore":
                scorers[attr] = TAScoreParams.init(
                    config.embed_dim,
                    config.key_dim,
                    rng,
                    dim=config.tascore_dim,
                    n_layers=config.tascore_layers,
                    head_hidden=config.tascore_head_hidden,
                    dropout_p=config.dropout_p,
                    max_len=config.max_seq_len,
                )
            else:
                raise ValueError(f"unknown scorer {config.scorer!r}")
        classifiers = {
            attr: ClassifierParams.init(
                config.key_dim, config.classifier_hidden, len(CLASSES[attr]), rng, config.dropout_p
            )
            for attr in ATTRIBUTES
        }
        speaker_table = Tensor(rng.normal(0.0, 0.1, (len(SPEAKERS), SPEAKER_DIM)), requires_grad=True)
        return cls(config, embedding, speaker_table, scorers, classifiers)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        from .nn import collect_tensors

        params: list[tuple[str, Tensor]] = [("speaker_table", self.speaker_table)]
        for attr in ATTRIBUTES:
            params.extend(collect_tensors(self.scorers[attr], f"scorer.{attr}"))
            params.extend(collect_tensors(self.classifiers[attr], f"classifier.{attr}"))
        return params

    def zero_grad(self) -> None:
        for _, t in self.named_parameters():
            t.zero_grad()


# ---------------------------------------------------------------------------
# pipeline ops


def encode_text(tokens, speaker_ids, source: EmbeddingSource, speaker_table: Tensor,
                example_id: str | None = None) -> Tensor:
    """Per-token frozen embedding concatenated with the trainable speaker vector."""
    speaker_ids = np.asarray(speaker_ids)
    if speaker_ids.size and (speaker_ids.min() < 0 or speaker_ids.max() >= len(SPEAKERS)):
        raise ValueError(f"speaker ids must be in [0, {len(SPEAKERS)}), got {sorted(set(speaker_ids.tolist()))}")
    if len(tokens) != speaker_ids.size:
        raise ValueError(f"{len(tokens)} tokens but {speaker_ids.size} speaker ids")
    base = Tensor(source.embed(tokens, example_id))  # frozen: no grad
    spk = T.embedding_lookup(speaker_table, speaker_ids)
    return T.concat([base, spk], axis=1)


def pool_medication(med_token_embeddings: np.ndarray) -> np.ndarray:
    """Average pooling over the medication's token embeddings."""
    med_token_embeddings = np.asarray(med_token_embeddings, dtype=np.float64)
    if med_token_embeddings.ndim != 2 or med_token_embeddings.shape[0] == 0:
        raise ValueError("pool_medication: need at least one medication token embedding")
    return med_token_embeddings.mean(axis=0)


def identify(q: Tensor, keys: Tensor, params: ModelParams, proj_cfg: ProjectionConfig,
             rng=None) -> dict[str, AttentionResult]:
    """Three independent attention results, one per attribute."""
    out = {}
    for attr in ATTRIBUTES:
        scorer = params.scorers[attr]
        if isinstance(scorer, AdditiveScorerParams):
            scores = additive_score(q, keys, scorer)
        else:
            scores = tascore(q, keys, scorer, rng=rng)
        out[attr] = AttentionResult(attr, scores, project(scores, proj_cfg))
    return out


def classify(attn: dict[str, AttentionResult], keys: Tensor, classifiers: dict,
             rng=None) -> dict[str, Tensor]:
    """Per-attribute class probabilities from attention-weighted contexts."""
    probs = {}
    for attr in ATTRIBUTES:
        c = T.matmul(attn[attr].weights, keys)  # context vector (key_dim,)
        cl = classifiers[attr]
        h = T.relu(T.add(T.matmul(c, cl.w1), cl.b1))
        h = T.dropout(h, cl.dropout_p if rng is not None else 0.0, rng)
        logits = T.add(T.matmul(h, cl.w2), cl.b2)
        probs[attr] = T.softmax_rows(logits)
    return probs


def extract_spans(weights, threshold: float) -> np.ndarray:
    """Binary mask of tokens whose attention weight strictly exceeds the threshold."""
    if threshold < 0:
        raise ValueError(f"extraction threshold must be >= 0, got {threshold}")
    w = weights.weights.data if isinstance(weights, AttentionResult) else np.asarray(weights)
    return (w > threshold).astype(np.int8)


@dataclass
class ForwardResult:
    probs: dict[str, Tensor]
    attention: dict[str, AttentionResult]
    masks: dict[str, np.ndarray]
    keys: Tensor
    query: np.ndarray


def forward(point: DataPoint, params: ModelParams,
            thresholds: ExtractionThresholds | None = None,
            rng=None) -> ForwardResult:
    """Full pipeline on one datapoint; one tape, ready for backward."""
    thresholds = thresholds or ExtractionThresholds.zeros()
    keys = encode_text(point.tokens, point.speaker_ids, params.embedding,
                       params.speaker_table, example_id=point.id)
    emb = params.embedding.embed(point.tokens, point.id)
    q = Tensor(pool_medication(emb[point.medication.start : point.medication.end]))
    attn = identify(q, keys, params, params.config.projection, rng=rng)
    probs = classify(attn, keys, params.classifiers, rng=rng)
    masks = {attr: extract_spans(attn[attr], thresholds.get(attr)) for attr in ATTRIBUTES}
    return ForwardResult(probs, attn, masks, keys, q.data)


def make_predictor(params: ModelParams, thresholds: ExtractionThresholds | None = None):
    """Evaluation-mode callable: point -> (class ids, masks, weights)."""
    thresholds = thresholds or ExtractionThresholds.zeros()

    def predict(point: DataPoint):
        res = forward(point, params, thresholds, rng=None)
        classes = {attr: int(np.argmax(res.probs[attr].data)) for attr in ATTRIBUTES}
        weights = {attr: res.attention[attr].weights.data for attr in ATTRIBUTES}
        return classes, res.masks, weights

    return predict


def make_oracle_predictor():
    """Debug predictor that echoes the gold labels and spans."""

    def predict(point: DataPoint):
        classes = {attr: CLASSES[attr].index(point.labels[attr]) for attr in ATTRIBUTES}
        masks = {}
        weights = {}
        for attr in ATTRIBUTES:
            gold = point.mask(attr)
            masks[attr] = gold if gold is not None else np.zeros(point.n_tokens, dtype=np.int8)
            total = masks[attr].sum()
            weights[attr] = masks[attr] / total if total else np.full(point.n_tokens, 1.0 / point.n_tokens)
        return classes, masks, weights

    return predict
