"""Discrete-observation hidden Markov models.

A model is the classic triple (A, B, pi): A is the N x N hidden-state
transition matrix, B the N x M observation matrix, pi the initial state
distribution; all rows are stochastic. Training is Baum-Welch over multiple
observation sequences with per-step scaling, so arbitrarily long sequences
score without underflow. The hot recursions are numba-compiled.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from numba import njit

PROB_FLOOR = 1e-10

IMPOSSIBLE = float("-inf")


class HmmError(ValueError):
    """Raised for dimension mismatches and malformed training input."""


@dataclass(frozen=True)
class HmmModel:
    n_states: int
    n_symbols: int
    a: np.ndarray   # (N, N) transitions
    b: np.ndarray   # (N, M) observation probabilities
    pi: np.ndarray  # (N,) initial distribution

    def validate(self, atol: float = 1e-9) -> None:
        for name, mat in (("a", self.a), ("b", self.b)):
            if mat.shape[0] != self.n_states:
                raise HmmError(f"{name} has {mat.shape[0]} rows, expected {self.n_states}")
            if np.any(mat < 0) or np.any(mat > 1):
                raise HmmError(f"{name} entries outside [0, 1]")
            if not np.allclose(mat.sum(axis=1), 1.0, rtol=0, atol=atol):
                raise HmmError(f"{name} rows do not sum to 1")
        if not math.isclose(float(self.pi.sum()), 1.0, rel_tol=0, abs_tol=atol):
            raise HmmError("pi does not sum to 1")

    def save(self, path: Path | str) -> None:
        """Text persistence: `HMM N M`, A rows, B rows, pi row (17 sig digits)."""
        lines = [f"HMM {self.n_states} {self.n_symbols}"]
        for row in self.a:
            lines.append(" ".join(f"{x:.17g}" for x in row))
        for row in self.b:
            lines.append(" ".join(f"{x:.17g}" for x in row))
        lines.append(" ".join(f"{x:.17g}" for x in self.pi))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path | str) -> "HmmModel":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        tag, n, m = lines[0].split()
        if tag != "HMM":
            raise HmmError(f"{path}: not an HMM model file")
        n, m = int(n), int(m)
        rows = [np.array([float(x) for x in line.split()]) for line in lines[1 : 2 * n + 2]]
        return cls(
            n_states=n,
            n_symbols=m,
            a=np.vstack(rows[:n]),
            b=np.vstack(rows[n : 2 * n]),
            pi=rows[2 * n],
        )


@dataclass(frozen=True)
class HmmTrainConfig:
    n_states: int = 2
    max_iters: int = 200
    tol: float = 1e-6
    seed: int = 0
    restarts: int = 1

    def __post_init__(self) -> None:
        if self.n_states < 1 or self.max_iters < 1 or self.tol <= 0 or self.restarts < 1:
            raise ValueError(f"bad training config: {self}")


def init_model(n_states: int, n_symbols: int, seed: int) -> HmmModel:
    """Near-uniform random initialization: each row is 1/dim perturbed by
    +-10% uniform noise, then renormalized. Deterministic for a fixed seed."""
    if n_states < 1 or n_symbols < 1:
        raise HmmError(f"bad dimensions N={n_states}, M={n_symbols}")
    rng = np.random.default_rng(seed)

    def rows(n_rows: int, dim: int) -> np.ndarray:
        base = 1.0 / dim
        noise = rng.uniform(-0.1 * base, 0.1 * base, size=(n_rows, dim))
        out = base + noise
        return out / out.sum(axis=1, keepdims=True)

    a = rows(n_states, n_states)
    b = rows(n_states, n_symbols)
    pi = rows(1, n_states)[0]
    return HmmModel(n_states=n_states, n_symbols=n_symbols, a=a, b=b, pi=pi)


@njit(cache=True)
def _forward_ll(a, b, pi, obs):  # pragma: no cover - exercised via wrappers
    """Scaled forward pass; returns ln P(O | model), -inf if impossible."""
    n = a.shape[0]
    t_len = obs.shape[0]
    alpha = np.empty(n)
    nxt = np.empty(n)
    ll = 0.0
    s = 0.0
    for i in range(n):
        alpha[i] = pi[i] * b[i, obs[0]]
        s += alpha[i]
    if s <= 0.0:
        return -np.inf
    ll += np.log(s)
    for i in range(n):
        alpha[i] /= s
    for t in range(1, t_len):
        s = 0.0
        for j in range(n):
            acc = 0.0
            for i in range(n):
                acc += alpha[i] * a[i, j]
            nxt[j] = acc * b[j, obs[t]]
            s += nxt[j]
        if s <= 0.0:
            return -np.inf
        ll += np.log(s)
        for j in range(n):
            alpha[j] = nxt[j] / s
        # swap not needed: alpha updated in place
    return ll


@njit(cache=True)
def _bw_accumulate(a, b, pi, obs, a_num, a_den, b_num, b_den, pi_acc):  # pragma: no cover
    """One sequence's E-step: scaled forward-backward, accumulating expected
    transition/emission/initial counts into the provided arrays.

    Returns the sequence log-likelihood under (a, b, pi), or -inf if the
    sequence is impossible (in which case nothing is accumulated).
    """
    n = a.shape[0]
    t_len = obs.shape[0]
    alpha = np.empty((t_len, n))
    scale = np.empty(t_len)

    # forward, normalizing each step so rows of alpha sum to 1
    s = 0.0
    for i in range(n):
        alpha[0, i] = pi[i] * b[i, obs[0]]
        s += alpha[0, i]
    if s <= 0.0:
        return -np.inf
    scale[0] = s
    for i in range(n):
        alpha[0, i] /= s
    for t in range(1, t_len):
        s = 0.0
        for j in range(n):
            acc = 0.0
            for i in range(n):
                acc += alpha[t - 1, i] * a[i, j]
            alpha[t, j] = acc * b[j, obs[t]]
            s += alpha[t, j]
        if s <= 0.0:
            return -np.inf
        scale[t] = s
        for j in range(n):
            alpha[t, j] /= s

    ll = 0.0
    for t in range(t_len):
        ll += np.log(scale[t])

    # backward with the same scale factors; beta[t] then satisfies
    # gamma[t, i] = alpha[t, i] * beta[t, i] with sum_i gamma[t, i] = 1
    beta = np.empty((t_len, n))
    for i in range(n):
        beta[t_len - 1, i] = 1.0
    for t in range(t_len - 2, -1, -1):
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += a[i, j] * b[j, obs[t + 1]] * beta[t + 1, j]
            beta[t, i] = acc / scale[t + 1]

    for i in range(n):
        pi_acc[i] += alpha[0, i] * beta[0, i]

    for t in range(t_len - 1):
        o_next = obs[t + 1]
        for i in range(n):
            gamma_i = alpha[t, i] * beta[t, i]
            a_den[i] += gamma_i
            b_num[i, obs[t]] += gamma_i
            b_den[i] += gamma_i
            for j in range(n):
                a_num[i, j] += alpha[t, i] * a[i, j] * b[j, o_next] * beta[t + 1, j] / scale[t + 1]
    # last step contributes to emissions only
    for i in range(n):
        gamma_i = alpha[t_len - 1, i] * beta[t_len - 1, i]
        b_num[i, obs[t_len - 1]] += gamma_i
        b_den[i] += gamma_i
    return ll


def _floor_rows(mat: np.ndarray) -> np.ndarray:
    out = np.maximum(mat, PROB_FLOOR)
    return out / out.sum(axis=1, keepdims=True)


def _as_obs(seq) -> np.ndarray:
    arr = np.asarray(seq, dtype=np.int64)
    if arr.ndim != 1 or arr.size == 0:
        raise HmmError("observation sequence must be a non-empty 1-D index array")
    return arr


def forward_log_likelihood(model: HmmModel, seq) -> float:
    """ln P(O | model) via the scaled forward algorithm.

    Returns the -inf sentinel when the sequence has zero probability under
    every hidden path; callers must treat that value as "impossible", never
    as an ordinary score.
    """
    obs = _as_obs(seq)
    if obs.max() >= model.n_symbols or obs.min() < 0:
        raise HmmError(f"observation index out of range for M={model.n_symbols}")
    return float(_forward_ll(model.a, model.b, model.pi, obs))


def llpo(model: HmmModel, seq) -> float:
    """Log-likelihood per opcode: forward log-likelihood / sequence length."""
    obs = _as_obs(seq)
    ll = forward_log_likelihood(model, obs)
    if ll == IMPOSSIBLE:
        return IMPOSSIBLE
    return ll / len(obs)


def _baum_welch_once(
    seqs: list[np.ndarray], n_symbols: int, config: HmmTrainConfig, seed: int
) -> tuple[HmmModel, list[float]]:
    model = init_model(config.n_states, n_symbols, seed)
    n = config.n_states
    trace: list[float] = []
    a, b, pi = model.a, model.b, model.pi
    for _ in range(config.max_iters):
        a_num = np.zeros((n, n))
        a_den = np.zeros(n)
        b_num = np.zeros((n, n_symbols))
        b_den = np.zeros(n)
        pi_acc = np.zeros(n)
        total_ll = 0.0
        for obs in seqs:
            ll = _bw_accumulate(a, b, pi, obs, a_num, a_den, b_num, b_den, pi_acc)
            total_ll += ll
        trace.append(total_ll)
        if not math.isfinite(total_ll):
            break
        if len(trace) >= 2 and trace[-1] - trace[-2] < config.tol:
            break
        a = _floor_rows(a_num / np.maximum(a_den, PROB_FLOOR)[:, None])
        b = _floor_rows(b_num / np.maximum(b_den, PROB_FLOOR)[:, None])
        pi = pi_acc / len(seqs)
        pi = np.maximum(pi, PROB_FLOOR)
        pi = pi / pi.sum()
    return replace(model, a=a, b=b, pi=pi), trace


def baum_welch(
    seqs, n_symbols: int, config: HmmTrainConfig
) -> tuple[HmmModel, list[float]]:
    """Train an HMM on one or more index sequences.

    Expected counts are aggregated across sequences each iteration (samples
    are independent; no artificial cross-sample transitions). Stops after
    `max_iters` iterations or when the total log-likelihood improves by less
    than `tol`. With `restarts > 1`, runs that many seeded initializations
    and keeps the model with the best final log-likelihood.

    Returns the trained model and the per-iteration log-likelihood trace of
    the winning run.
    """
    if n_symbols < 1:
        raise HmmError(f"n_symbols must be >= 1, got {n_symbols}")
    obs_list = [_as_obs(s) for s in seqs]
    if not obs_list:
        raise HmmError("no training sequences")
    for o in obs_list:
        if len(o) < 2:
            raise HmmError("every training sequence needs at least 2 symbols")
        if o.max() >= n_symbols:
            raise HmmError(f"observation index {o.max()} out of range for M={n_symbols}")
    best: tuple[HmmModel, list[float]] | None = None
    for r in range(config.restarts):
        run_seed = config.seed if config.restarts == 1 else int(np.random.default_rng((config.seed, r)).integers(2**63))
        model, trace = _baum_welch_once(obs_list, n_symbols, config, run_seed)
        if best is None or trace[-1] > best[1][-1]:
            best = (model, trace)
    assert best is not None
    return best
