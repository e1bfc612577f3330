"""Ground-truth synthetic families for quantitative evaluation.

Each family is drawn from per-era first-order Markov sources over a small
token alphabet; era boundaries are the known evolution points. Drift is
injected by blending a source's transition rows toward fresh random
distributions, so it perturbs sequential structure rather than just the
marginal token mix.
"""
from __future__ import annotations

import calendar
import datetime as dt
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .corpus import Month, Sample


class SynthError(ValueError):
    """Raised for malformed specs and spec files."""


@dataclass(frozen=True)
class MarkovSource:
    vocab_size: int
    transition: np.ndarray  # (V, V) row-stochastic
    initial: np.ndarray     # (V,)

    def validate(self, atol: float = 1e-9) -> None:
        v = self.vocab_size
        if self.transition.shape != (v, v) or self.initial.shape != (v,):
            raise SynthError(f"source shapes inconsistent with vocab_size={v}")
        if np.any(self.transition < 0) or np.any(self.initial < 0):
            raise SynthError("negative probabilities in source")
        if not np.allclose(self.transition.sum(axis=1), 1.0, rtol=0, atol=atol):
            raise SynthError("transition rows do not sum to 1")
        if not np.isclose(self.initial.sum(), 1.0, rtol=0, atol=atol):
            raise SynthError("initial distribution does not sum to 1")

    def stationary(self, iters: int = 10_000, tol: float = 1e-14) -> np.ndarray:
        """Stationary distribution by power iteration."""
        p = self.initial.copy()
        for _ in range(iters):
            nxt = p @ self.transition
            if np.max(np.abs(nxt - p)) < tol:
                return nxt
            p = nxt
        return p


@dataclass(frozen=True)
class Era:
    start_month: int  # inclusive month index within the family span
    end_month: int    # inclusive
    source: MarkovSource


@dataclass(frozen=True)
class FamilySpec:
    family: str
    eras: tuple[Era, ...]
    samples_per_month: int = 20
    length_range: tuple[int, int] = (400, 1600)
    seed: int = 0
    base_month: Month = Month(2009, 1)

    def __post_init__(self) -> None:
        if not self.eras or self.eras[0].start_month != 0:
            raise SynthError("eras must start at month 0")
        for prev, cur in zip(self.eras, self.eras[1:]):
            if cur.start_month != prev.end_month + 1:
                raise SynthError("eras must be contiguous and non-overlapping")
        for era in self.eras:
            if era.end_month < era.start_month:
                raise SynthError("era end precedes start")
        if self.samples_per_month < 1:
            raise SynthError("samples_per_month must be >= 1")
        lo, hi = self.length_range
        if not 2 <= lo <= hi:
            raise SynthError("length_range must satisfy 2 <= min <= max")

    @property
    def n_months(self) -> int:
        return self.eras[-1].end_month + 1

    @property
    def boundary_months(self) -> list[Month]:
        """Ground-truth evolution points: the first month of each later era."""
        return [self.base_month.plus(e.start_month) for e in self.eras[1:]]


def random_source(vocab_size: int, seed: int, concentration: float = 1.0) -> MarkovSource:
    """Random Markov source with Dirichlet rows.

    Lower concentration gives spikier rows, i.e. stronger sequential
    structure for models to learn.
    """
    if vocab_size < 2:
        raise SynthError("vocab_size must be >= 2")
    rng = np.random.default_rng(seed)
    alpha = np.full(vocab_size, concentration)
    transition = rng.dirichlet(alpha, size=vocab_size)
    initial = rng.dirichlet(alpha)
    return MarkovSource(vocab_size=vocab_size, transition=transition, initial=initial)


def perturb_source(source: MarkovSource, epsilon: float, seed: int) -> MarkovSource:
    """Blend every row toward an independent random distribution.

    row' = (1 - eps) * row + eps * random_simplex, so the total-variation
    distance moved per row is at most eps.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise SynthError(f"epsilon must be in [0, 1], got {epsilon}")
    rng = np.random.default_rng(seed)
    v = source.vocab_size
    noise_t = rng.dirichlet(np.ones(v), size=v)
    noise_i = rng.dirichlet(np.ones(v))
    return MarkovSource(
        vocab_size=v,
        transition=(1.0 - epsilon) * source.transition + epsilon * noise_t,
        initial=(1.0 - epsilon) * source.initial + epsilon * noise_i,
    )


@njit(cache=True)
def _walk(cum_transition, cum_initial, uniforms):  # pragma: no cover
    """Sample a Markov chain path by inverse-CDF lookup of pre-drawn uniforms."""
    n = uniforms.shape[0]
    out = np.empty(n, dtype=np.int64)
    state = np.searchsorted(cum_initial, uniforms[0], side="right")
    out[0] = state
    for t in range(1, n):
        state = np.searchsorted(cum_transition[state], uniforms[t], side="right")
        out[t] = state
    return out


def token_name(index: int) -> str:
    return f"op{index:02d}"


def generate_family(spec: FamilySpec) -> tuple[list[Sample], list[Month]]:
    """Materialize the family: per-month samples plus ground-truth months.

    Each month draws its own RNG from (seed, month-index), so generation is
    reproducible per month regardless of ordering or parallelism.
    """
    for era in spec.eras:
        era.source.validate()
    names = [token_name(i) for i in range(spec.eras[0].source.vocab_size)]
    lo, hi = spec.length_range
    samples: list[Sample] = []
    for era in spec.eras:
        cum_t = np.cumsum(era.source.transition, axis=1)
        cum_i = np.cumsum(era.source.initial)
        # guard against cumulative rounding pushing the last edge below 1.0
        cum_t[:, -1] = 1.0
        cum_i[-1] = 1.0
        for mi in range(era.start_month, era.end_month + 1):
            rng = np.random.default_rng((spec.seed, mi))
            month = spec.base_month.plus(mi)
            n_days = calendar.monthrange(month.year, month.month)[1]
            for k in range(spec.samples_per_month):
                length = int(rng.integers(lo, hi + 1))
                day = int(rng.integers(1, n_days + 1))
                idx = _walk(cum_t, cum_i, rng.random(length))
                samples.append(
                    Sample(
                        id=f"{spec.family}-{mi:03d}-{k:03d}",
                        family=spec.family,
                        timestamp=dt.date(month.year, month.month, day),
                        opcodes=tuple(names[i] for i in idx),
                    )
                )
    samples.sort(key=lambda s: (s.timestamp, s.id))
    return samples, spec.boundary_months


def two_era_spec(
    family: str = "synthetic",
    n_months: int = 24,
    boundary: int = 12,
    vocab_size: int = 31,
    epsilon: float = 0.3,
    samples_per_month: int = 20,
    length_range: tuple[int, int] = (400, 1600),
    seed: int = 0,
    base_month: Month = Month(2009, 1),
) -> FamilySpec:
    """The default evaluation fixture: one era boundary, drift of size epsilon."""
    base = random_source(vocab_size, seed=seed)
    drifted = perturb_source(base, epsilon, seed=seed + 1)
    return FamilySpec(
        family=family,
        eras=(Era(0, boundary - 1, base), Era(boundary, n_months - 1, drifted)),
        samples_per_month=samples_per_month,
        length_range=length_range,
        seed=seed,
        base_month=base_month,
    )


def parse_spec_file(path: Path | str) -> FamilySpec:
    """Read a flat key=value family spec.

    Keys: family, months, samples_per_month, min_length, max_length,
    vocab_size, seed, base_month (YYYY-MM), epsilon, boundaries
    (comma-separated month indices; empty or absent means a single era).
    Sources are derived from the seed: the base era is a random source and
    each subsequent era perturbs the previous one by epsilon.
    """
    raw: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise SynthError(f"{path}:{lineno}: expected key=value, got {stripped!r}")
        key, _, value = stripped.partition("=")
        raw[key.strip()] = value.strip()

    def get(key: str, default: str) -> str:
        return raw.get(key, default)

    try:
        months = int(get("months", "24"))
        vocab_size = int(get("vocab_size", "31"))
        seed = int(get("seed", "0"))
        epsilon = float(get("epsilon", "0.3"))
        samples_per_month = int(get("samples_per_month", "20"))
        length_range = (int(get("min_length", "400")), int(get("max_length", "1600")))
        base_month = Month.parse(get("base_month", "2009-01"))
        boundary_text = get("boundaries", "").strip()
        boundaries = [int(b) for b in boundary_text.split(",") if b.strip()] if boundary_text else []
    except ValueError as exc:
        raise SynthError(f"{path}: {exc}") from exc

    starts = [0] + sorted(boundaries)
    if len(set(starts)) != len(starts) or any(b <= 0 or b >= months for b in boundaries):
        raise SynthError(f"{path}: boundaries must be distinct and inside (0, months)")
    ends = [s - 1 for s in starts[1:]] + [months - 1]
    source = random_source(vocab_size, seed=seed)
    eras = []
    for i, (s, e) in enumerate(zip(starts, ends)):
        if i > 0:
            source = perturb_source(source, epsilon, seed=seed + i)
        eras.append(Era(s, e, source))
    return FamilySpec(
        family=get("family", "synthetic"),
        eras=tuple(eras),
        samples_per_month=samples_per_month,
        length_range=length_range,
        seed=seed,
        base_month=base_month,
    )


def write_dataset(samples: list[Sample], truth: list[Month], out_dir: Path | str) -> Path:
    """Write opcode files plus manifest in the exact format the corpus loader
    consumes; ground-truth boundary months go to ground_truth.txt."""
    out = Path(out_dir)
    (out / "opcodes").mkdir(parents=True, exist_ok=True)
    rows = []
    for s in samples:
        rel = f"opcodes/{s.id}.txt"
        (out / rel).write_text("".join(op + "\n" for op in s.opcodes), encoding="utf-8")
        rows.append(f"{rel},{s.family},{s.timestamp.isoformat()}")
    manifest = out / "manifest.csv"
    manifest.write_text("path,family,date\n" + "".join(r + "\n" for r in rows), encoding="utf-8")
    (out / "ground_truth.txt").write_text("".join(str(m) + "\n" for m in truth), encoding="utf-8")
    return manifest
