"""Per-symbol vector embeddings and inter-model distances.

Two embedding sources share one container type: columns of a trained HMM's
observation matrix (one vector of length N per symbol), and a from-scratch
CBOW Word2Vec whose embeddings are the hidden-to-output weights. The
vocabulary here is tiny (M <= 31 opcodes), so the CBOW output layer is a
plain full softmax; none of the usual large-vocabulary speed-ups apply.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence, TypeVar

import numpy as np
from numba import njit

from .hmm import HmmModel

log = logging.getLogger(__name__)

T = TypeVar("T")

PERMUTATION_CAP = 6


class EmbeddingError(ValueError):
    """Raised for shape mismatches and degenerate vector inputs."""


@dataclass(frozen=True)
class EmbeddingSet:
    """Vocabulary-aligned matrix of per-symbol vectors; row i embeds symbol i."""

    vocab_size: int
    dim: int
    vectors: np.ndarray  # (M, dim)

    def __post_init__(self) -> None:
        if self.vectors.shape != (self.vocab_size, self.dim):
            raise EmbeddingError(
                f"vectors shaped {self.vectors.shape}, expected {(self.vocab_size, self.dim)}"
            )
        if not np.all(np.isfinite(self.vectors)):
            raise EmbeddingError("embedding vectors must be finite")

    def save(self, path: Path | str) -> None:
        """Text persistence: `EMB M dim`, then M rows in vocabulary order."""
        lines = [f"EMB {self.vocab_size} {self.dim}"]
        for row in self.vectors:
            lines.append(" ".join(f"{x:.17g}" for x in row))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path | str) -> "EmbeddingSet":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        tag, m, dim = lines[0].split()
        if tag != "EMB":
            raise EmbeddingError(f"{path}: not an embedding file")
        vectors = np.array([[float(x) for x in line.split()] for line in lines[1 : int(m) + 1]])
        return cls(vocab_size=int(m), dim=int(dim), vectors=vectors)


@dataclass(frozen=True)
class Word2VecConfig:
    dim: int = 2          # V, embedding length
    window: int = 5       # W, context words on each side
    epochs: int = 5
    learning_rate: float = 0.025
    min_learning_rate: float = 1e-4
    seed: int = 0

    def __post_init__(self) -> None:
        if self.dim < 1 or self.window < 1 or self.epochs < 1 or self.learning_rate <= 0:
            raise ValueError(f"bad word2vec config: {self}")


def hmm2vec(model: HmmModel) -> EmbeddingSet:
    """Embedding of symbol i = column i of the HMM's B matrix (length N)."""
    return EmbeddingSet(
        vocab_size=model.n_symbols,
        dim=model.n_states,
        vectors=np.ascontiguousarray(model.b.T),
    )


def cosine_similarity(x, y) -> float:
    """Dot product over the product of norms; errors on zero vectors rather
    than silently returning 0."""
    xv = np.asarray(x, dtype=float)
    yv = np.asarray(y, dtype=float)
    if xv.shape != yv.shape:
        raise EmbeddingError(f"shape mismatch: {xv.shape} vs {yv.shape}")
    nx = float(np.linalg.norm(xv))
    ny = float(np.linalg.norm(yv))
    if nx == 0.0 or ny == 0.0:
        raise EmbeddingError("cosine similarity is undefined for zero vectors")
    return float(np.dot(xv, yv) / (nx * ny))


def normalize(x) -> np.ndarray:
    """x / ||x||; cosine similarity of normalized vectors is their dot product."""
    xv = np.asarray(x, dtype=float)
    n = float(np.linalg.norm(xv))
    if n == 0.0:
        raise EmbeddingError("cannot normalize the zero vector")
    return xv / n


def one_hot(index: int, size: int) -> np.ndarray:
    v = np.zeros(size)
    v[index] = 1.0
    return v


def context_examples(seq: Sequence[T], window: int) -> Iterator[tuple[T, list[T]]]:
    """Yield (center, context) for every position with a non-empty context.

    The context is every word within `window` positions on either side, in
    left-to-right order. Never crosses the ends of `seq`, so callers feed
    one sample at a time and pairs never mix samples.
    """
    n = len(seq)
    for pos in range(n):
        lo = max(0, pos - window)
        hi = min(n, pos + window + 1)
        ctx = [seq[k] for k in range(lo, hi) if k != pos]
        if ctx:
            yield seq[pos], ctx


def training_pairs(seq: Sequence[T], window: int) -> list[tuple[T, T]]:
    """Flattened (center, context-word) pairs for one sequence."""
    return [(center, c) for center, ctx in context_examples(seq, window) for c in ctx]


def _cbow_loss_and_grads(
    w_in: np.ndarray, w_out: np.ndarray, context: Sequence[int], center: int
) -> tuple[float, np.ndarray, np.ndarray]:
    """Cross-entropy loss and analytic gradients for one CBOW example.

    Forward: hidden h = mean of the context rows of w_in; logits = w_out @ h;
    softmax over the vocabulary; loss = -log p(center). Used directly by the
    finite-difference gradient tests; the numba training kernel implements
    the same math.
    """
    ctx = np.asarray(context, dtype=np.int64)
    h = w_in[ctx].mean(axis=0)
    logits = w_out @ h
    logits -= logits.max()
    exp = np.exp(logits)
    probs = exp / exp.sum()
    loss = -math.log(probs[center])

    d_logits = probs.copy()
    d_logits[center] -= 1.0
    g_out = np.outer(d_logits, h)
    d_h = w_out.T @ d_logits
    g_in = np.zeros_like(w_in)
    for c in ctx:
        g_in[c] += d_h / len(ctx)
    return loss, g_in, g_out


@njit(cache=True)
def _cbow_train(w_in, w_out, tokens, starts, window, epochs, lr0, lr_min):  # pragma: no cover
    """SGD over all (context -> center) examples; returns mean loss per epoch.

    `tokens` is the concatenation of all sequences, `starts` the prefix
    offsets (len = n_seqs + 1); windows never cross sequence boundaries.
    Iteration order is fixed, so training is deterministic for fixed inits.
    """
    m, dim = w_out.shape
    n_seqs = starts.shape[0] - 1
    total_positions = 0
    for s in range(n_seqs):
        total_positions += starts[s + 1] - starts[s]
    total_steps = total_positions * epochs
    h = np.empty(dim)
    probs = np.empty(m)
    d_h = np.empty(dim)
    losses = np.zeros(epochs)
    step = 0
    for epoch in range(epochs):
        epoch_loss = 0.0
        n_examples = 0
        for s in range(n_seqs):
            seq_lo = starts[s]
            seq_hi = starts[s + 1]
            for pos in range(seq_lo, seq_hi):
                lo = max(seq_lo, pos - window)
                hi = min(seq_hi, pos + window + 1)
                n_ctx = hi - lo - 1
                if n_ctx <= 0:
                    step += 1
                    continue
                lr = lr0 + (lr_min - lr0) * (step / max(1, total_steps - 1))
                step += 1
                center = tokens[pos]
                for d in range(dim):
                    h[d] = 0.0
                for k in range(lo, hi):
                    if k == pos:
                        continue
                    tok = tokens[k]
                    for d in range(dim):
                        h[d] += w_in[tok, d]
                for d in range(dim):
                    h[d] /= n_ctx
                # softmax over logits = w_out @ h
                mx = -1e300
                for i in range(m):
                    acc = 0.0
                    for d in range(dim):
                        acc += w_out[i, d] * h[d]
                    probs[i] = acc
                    if acc > mx:
                        mx = acc
                z = 0.0
                for i in range(m):
                    probs[i] = np.exp(probs[i] - mx)
                    z += probs[i]
                for i in range(m):
                    probs[i] /= z
                epoch_loss += -np.log(probs[center])
                n_examples += 1
                # gradient: d_logits = probs - onehot(center)
                probs[center] -= 1.0
                for d in range(dim):
                    acc = 0.0
                    for i in range(m):
                        acc += w_out[i, d] * probs[i]
                    d_h[d] = acc
                for i in range(m):
                    for d in range(dim):
                        w_out[i, d] -= lr * probs[i] * h[d]
                g_scale = lr / n_ctx
                for k in range(lo, hi):
                    if k == pos:
                        continue
                    tok = tokens[k]
                    for d in range(dim):
                        w_in[tok, d] -= g_scale * d_h[d]
        losses[epoch] = epoch_loss / max(1, n_examples)
    return losses


def train_word2vec_cbow(seqs, vocab_size: int, config: Word2VecConfig) -> EmbeddingSet:
    """Train CBOW embeddings over index sequences with a full-softmax output.

    The embedding of symbol i is row i of the hidden-to-output weight matrix
    (the `dim` weights feeding output node i). Symbols that never occur keep
    their initialization and are reported via a warning log.
    """
    arrs = [np.asarray(s, dtype=np.int64) for s in seqs]
    if not arrs:
        raise EmbeddingError("no training sequences")
    for a in arrs:
        if a.size and a.max() >= vocab_size:
            raise EmbeddingError(f"token index {a.max()} out of range for vocab_size={vocab_size}")
    total = int(sum(a.size for a in arrs))
    if total <= 2 * config.window:
        raise EmbeddingError(
            f"need more than {2 * config.window} tokens to form context windows, got {total}"
        )
    rng = np.random.default_rng(config.seed)
    bound = 0.5 / config.dim
    w_in = rng.uniform(-bound, bound, size=(vocab_size, config.dim))
    w_out = rng.uniform(-bound, bound, size=(vocab_size, config.dim))

    tokens = np.concatenate(arrs)
    starts = np.zeros(len(arrs) + 1, dtype=np.int64)
    np.cumsum([a.size for a in arrs], out=starts[1:])
    _cbow_train(
        w_in, w_out, tokens, starts,
        config.window, config.epochs, config.learning_rate, config.min_learning_rate,
    )

    seen = np.zeros(vocab_size, dtype=bool)
    seen[np.unique(tokens)] = True
    if not seen.all():
        missing = np.flatnonzero(~seen).tolist()
        log.warning("symbols never observed during training, embeddings left at init: %s", missing)
    return EmbeddingSet(vocab_size=vocab_size, dim=config.dim, vectors=w_out)


def concat_distance(e1: EmbeddingSet, e2: EmbeddingSet) -> float:
    """Euclidean distance between the vocabulary-ordered concatenations."""
    if (e1.vocab_size, e1.dim) != (e2.vocab_size, e2.dim):
        raise EmbeddingError(
            f"embedding shapes differ: {(e1.vocab_size, e1.dim)} vs {(e2.vocab_size, e2.dim)}"
        )
    return float(np.linalg.norm(e1.vectors.ravel() - e2.vectors.ravel()))


def hmm2vec_distance(m1: HmmModel, m2: HmmModel) -> float:
    """Distance between two HMMs' B matrices, minimized over hidden-state order.

    Hidden states carry no inherent identity: retraining can deliver the same
    model with rows permuted, so the concatenated-row distance is taken as
    the minimum over all row orderings of the second matrix (the two-ordering
    rule for N=2, all N! orderings up to N=6). Per-permutation sums are
    accumulated over sorted row costs, which makes the result exactly
    symmetric in its arguments.
    """
    if (m1.n_states, m1.n_symbols) != (m2.n_states, m2.n_symbols):
        raise EmbeddingError(
            f"model shapes differ: {(m1.n_states, m1.n_symbols)} vs {(m2.n_states, m2.n_symbols)}"
        )
    n = m1.n_states
    if n > PERMUTATION_CAP:
        raise EmbeddingError(
            f"N={n} exceeds the permutation cap ({PERMUTATION_CAP}); "
            "use an assignment-based approximation instead"
        )
    # row_cost[i, j] = squared distance between row i of B1 and row j of B2
    diffs = m1.b[:, None, :] - m2.b[None, :, :]
    row_cost = np.einsum("ijk,ijk->ij", diffs, diffs)
    best = math.inf
    for perm in itertools.permutations(range(n)):
        total = float(np.sum(np.sort(row_cost[range(n), perm])))
        best = min(best, total)
    return math.sqrt(best)
