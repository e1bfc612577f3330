"""Timeline pipelines: train models over time windows, measure model change.

Four detectors share one output shape, a per-family Timeline of
(label, distance) points:

  lr       - logistic regression weight distance, month vs preceding year
  hmm1     - reserved first month scored (LLPO) under each month's HMM
  hmm2     - paired-month HMMs, averaged score-vector distance
  hmm2vec  - adjacent yearly-window HMM B-matrix distance
  w2v      - adjacent yearly-window CBOW embedding distance

Months too small to train on become recorded gaps rather than noisy points.
Spike detection uses median/MAD so that the spikes being sought cannot
inflate their own baseline.
"""
from __future__ import annotations

import dataclasses
import json
import math
import statistics
import zlib
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .corpus import (
    CorpusError,
    EncodedSample,
    Month,
    Sample,
    TimeWindow,
    Vocabulary,
    build_vocabulary,
    monthly_buckets,
    sliding_windows,
)
from .embeddings import (
    EmbeddingSet,
    Word2VecConfig,
    concat_distance,
    hmm2vec_distance,
    train_word2vec_cbow,
)
from .hmm import HmmModel, HmmTrainConfig, baum_welch, llpo
from .logreg import LogRegConfig, LogRegModel, featurize, train_logreg, weight_distance

MAD_SCALE = 1.4826  # MAD -> sigma under a normal baseline


class DetectorError(ValueError):
    """Raised for data that cannot support the requested pipeline."""


class InsufficientSpan(DetectorError):
    """Dataset does not cover enough months for the pipeline."""


class Method(str, Enum):
    LR = "lr"
    HMM1 = "hmm1"
    HMM2 = "hmm2"
    HMM2VEC = "hmm2vec"
    W2V = "w2v"

    def __str__(self) -> str:  # noqa: D105 - enum-to-CSV plumbing
        return self.value


def derive_seed(master: int, method: str, index: int) -> int:
    """Fan a master seed out per (method, window): master xor a stable hash.

    crc32 keeps the fan-out identical across platforms and runs, so adding a
    method never reshuffles another method's randomness.
    """
    return (master ^ zlib.crc32(f"{method}:{index}".encode())) & 0x7FFFFFFFFFFFFFFF


@dataclass(frozen=True)
class DetectorConfig:
    seed: int = 0
    top_k: int = 30
    min_samples: int = 3
    window_months: int = 12
    slide_months: int = 1
    spike_k: float = 2.0
    normalize_scorevec: bool = False
    aggregator: str = "mean"           # approach-1 score aggregation
    coarse_method: Method = Method.W2V  # two-phase first stage
    w2v_shared_init: bool = True
    hmm: HmmTrainConfig = field(default_factory=HmmTrainConfig)
    w2v: Word2VecConfig = field(default_factory=Word2VecConfig)
    logreg: LogRegConfig = field(default_factory=LogRegConfig)


@dataclass(frozen=True)
class TimelinePoint:
    label: str
    value: float


@dataclass(frozen=True)
class Timeline:
    family: str
    method: Method
    points: tuple[TimelinePoint, ...]
    gaps: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        labels = [p.label for p in self.points]
        if labels != sorted(labels):
            raise DetectorError("timeline labels must be chronological")
        if any(not math.isfinite(p.value) for p in self.points):
            raise DetectorError("timeline values must be finite")

    @property
    def values(self) -> list[float]:
        return [p.value for p in self.points]

    def write_csv(self, path: Path | str) -> None:
        rows = [f"{self.family},{self.method},{p.label},{p.value:.17g}" for p in self.points]
        Path(path).write_text("family,method,label,value\n" + "".join(r + "\n" for r in rows), encoding="utf-8")

    @classmethod
    def read_csv(cls, path: Path | str) -> "Timeline":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or lines[0] != "family,method,label,value":
            raise DetectorError(f"{path}: not a timeline CSV")
        family = ""
        method: Method | None = None
        points = []
        for line in lines[1:]:
            family, method_text, label, value = line.split(",")
            method = Method(method_text)
            points.append(TimelinePoint(label, float(value)))
        if method is None:
            raise DetectorError(f"{path}: empty timeline")
        return cls(family=family, method=method, points=tuple(points))


@dataclass(frozen=True)
class Spike:
    label: str
    value: float
    z_score: float


@dataclass(frozen=True)
class SpikeReport:
    family: str
    method: Method
    threshold_k: float
    spikes: tuple[Spike, ...]

    def write_json(self, path: Path | str) -> None:
        payload = {
            "family": self.family,
            "method": str(self.method),
            "threshold_k": self.threshold_k,
            "spikes": [
                {
                    "label": s.label,
                    "value": s.value,
                    "z_score": s.z_score if math.isfinite(s.z_score) else "inf",
                }
                for s in self.spikes
            ],
        }
        Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class TwoPhaseFinding:
    window_label: str
    spike_value: float
    z_score: float
    refined_month: str | None
    refined_value: float | None


@dataclass(frozen=True)
class TwoPhaseReport:
    family: str
    coarse_method: Method
    findings: tuple[TwoPhaseFinding, ...]

    def write_json(self, path: Path | str) -> None:
        payload = {
            "family": self.family,
            "coarse_method": str(self.coarse_method),
            "findings": [
                {
                    "window": f.window_label,
                    "spike_value": f.spike_value,
                    "z_score": f.z_score if math.isfinite(f.z_score) else "inf",
                    "refined_month": f.refined_month,
                    "refined_value": f.refined_value,
                }
                for f in self.findings
            ],
        }
        Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def _family_of(samples: list[Sample]) -> str:
    families = {s.family for s in samples}
    if len(families) != 1:
        raise DetectorError(f"expected a single family, got {sorted(families)}")
    return families.pop()


def _vocab_for(samples: list[Sample], config: DetectorConfig, vocab: Vocabulary | None) -> Vocabulary:
    return vocab if vocab is not None else build_vocabulary(samples, config.top_k)


def lr_timeline(
    samples: list[Sample],
    config: DetectorConfig,
    vocab: Vocabulary | None = None,
    models_out: dict[str, LogRegModel] | None = None,
) -> Timeline:
    """Weight distance between consecutive months' year-vs-month classifiers.

    For month m with a full preceding year of data: class 1 is everything in
    [m-12, m-1], class 0 is month m itself. The point at m is the distance
    between the m-1 and m classifiers' weight vectors.
    """
    family = _family_of(samples)
    vocab = _vocab_for(samples, config, vocab)
    buckets = monthly_buckets(samples, vocab)
    months = list(buckets)
    w = config.window_months
    if len(months) < w + 2:
        raise InsufficientSpan(f"lr timeline needs >= {w + 2} months, dataset spans {len(months)}")
    feats = {m: [featurize(e, vocab.size) for e in buckets[m]] for m in months}
    models: dict[int, LogRegModel] = {}
    for idx in range(w, len(months)):
        neg = feats[months[idx]]
        pos = [f for m in months[idx - w : idx] for f in feats[m]]
        if not neg or not pos:
            continue
        models[idx] = train_logreg(
            pos,
            neg,
            epochs=config.logreg.epochs,
            learning_rate=config.logreg.learning_rate,
            l2=config.logreg.l2,
            seed=derive_seed(config.seed, "lr", idx),
        )
        if models_out is not None:
            models_out[str(months[idx])] = models[idx]
    points, gaps = [], []
    for idx in range(w + 1, len(months)):
        label = str(months[idx])
        if idx in models and idx - 1 in models:
            value = weight_distance(
                models[idx - 1], models[idx], include_bias=config.logreg.include_bias_in_distance
            )
            points.append(TimelinePoint(label, value))
        else:
            gaps.append(label)
    return Timeline(family=family, method=Method.LR, points=tuple(points), gaps=tuple(gaps))


def _train_month_hmm(
    bucket: list[EncodedSample], vocab_size: int, config: DetectorConfig, seed: int
) -> HmmModel:
    cfg = dataclasses.replace(config.hmm, seed=seed)
    model, _ = baum_welch([e.indices for e in bucket], vocab_size, cfg)
    return model


def _aggregate(values: list[float], how: str) -> float:
    if how == "median":
        return float(statistics.median(values))
    if how == "mean":
        return float(statistics.fmean(values))
    raise DetectorError(f"unknown aggregator {how!r}")


def hmm_approach1(
    samples: list[Sample],
    config: DetectorConfig,
    vocab: Vocabulary | None = None,
    models_out: dict[str, HmmModel] | None = None,
) -> Timeline:
    """Reserve the first populated month; score it under each later month's HMM.

    The point at month m is the aggregate LLPO of every reserved sample under
    the model trained on m's samples. A level shift in this series marks the
    month where the family stopped resembling its earliest form.
    """
    family = _family_of(samples)
    vocab = _vocab_for(samples, config, vocab)
    buckets = monthly_buckets(samples, vocab)
    months = list(buckets)
    populated = [m for m in months if buckets[m]]
    if len(populated) < 3:
        raise InsufficientSpan(f"hmm1 needs >= 3 populated months, found {len(populated)}")
    reserved = buckets[months[0]]
    points, gaps = [], []
    for idx in range(1, len(months)):
        label = str(months[idx])
        bucket = buckets[months[idx]]
        if len(bucket) < config.min_samples:
            gaps.append(label)
            continue
        model = _train_month_hmm(bucket, vocab.size, config, derive_seed(config.seed, "hmm1", idx))
        if models_out is not None:
            models_out[label] = model
        scores = [llpo(model, e.indices) for e in reserved]
        if any(s == -math.inf for s in scores):
            gaps.append(label)
            continue
        points.append(TimelinePoint(label, _aggregate(scores, config.aggregator)))
    return Timeline(family=family, method=Method.HMM1, points=tuple(points), gaps=tuple(gaps))


def _split_75_25(
    bucket: list[EncodedSample], seed: int
) -> tuple[list[EncodedSample], list[EncodedSample]]:
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(bucket))
    n_test = max(1, len(bucket) // 4)
    test = [bucket[i] for i in order[:n_test]]
    train = [bucket[i] for i in order[n_test:]]
    return train, test


def _score_vector(model: HmmModel, test: list[EncodedSample]) -> np.ndarray | None:
    scores = np.array([llpo(model, e.indices) for e in test])
    if not np.all(np.isfinite(scores)):
        return None
    return scores


def hmm_approach2(
    samples: list[Sample],
    config: DetectorConfig,
    vocab: Vocabulary | None = None,
    models_out: dict[str, HmmModel] | None = None,
) -> Timeline:
    """Adjacent-month HMM pairs compared through held-out score vectors.

    Each month is split 75/25; for months X, Y the test samples of X are
    scored (LLPO) under both month models, giving two equal-length vectors
    whose Euclidean distance is d_X; d_Y mirrors it. The point at Y is
    (d_X + d_Y) / 2. `normalize_scorevec` divides each distance by the
    square root of its vector length, making unbalanced months comparable.
    """
    family = _family_of(samples)
    vocab = _vocab_for(samples, config, vocab)
    buckets = monthly_buckets(samples, vocab)
    months = list(buckets)
    if len(months) < 2:
        raise InsufficientSpan("hmm2 needs at least 2 months")
    min_month = max(4, config.min_samples)
    trained: dict[int, tuple[HmmModel, list[EncodedSample]]] = {}
    for idx, m in enumerate(months):
        bucket = buckets[m]
        if len(bucket) < min_month:
            continue
        train, test = _split_75_25(bucket, derive_seed(config.seed, "hmm2-split", idx))
        cfg = dataclasses.replace(config.hmm, seed=derive_seed(config.seed, "hmm2", idx))
        model, _ = baum_welch([e.indices for e in train], vocab.size, cfg)
        trained[idx] = (model, test)
        if models_out is not None:
            models_out[str(m)] = model
    points, gaps = [], []
    for idx in range(1, len(months)):
        label = str(months[idx])
        if idx - 1 not in trained or idx not in trained:
            gaps.append(label)
            continue
        model_x, test_x = trained[idx - 1]
        model_y, test_y = trained[idx]
        pairs = []
        for test in (test_x, test_y):
            own = _score_vector(model_x, test)
            other = _score_vector(model_y, test)
            if own is None or other is None:
                pairs = None
                break
            d = float(np.linalg.norm(own - other))
            if config.normalize_scorevec:
                d /= math.sqrt(len(test))
            pairs.append(d)
        if pairs is None:
            gaps.append(label)
            continue
        points.append(TimelinePoint(label, (pairs[0] + pairs[1]) / 2.0))
    return Timeline(family=family, method=Method.HMM2, points=tuple(points), gaps=tuple(gaps))


def _window_models_hmm(
    windows: list[tuple[TimeWindow, list[EncodedSample]]],
    vocab_size: int,
    config: DetectorConfig,
) -> dict[int, HmmModel]:
    models: dict[int, HmmModel] = {}
    for i, (_, content) in enumerate(windows):
        if len(content) < config.min_samples:
            continue
        cfg = dataclasses.replace(config.hmm, seed=derive_seed(config.seed, "hmm2vec", i))
        models[i], _ = baum_welch([e.indices for e in content], vocab_size, cfg)
    return models


def hmm2vec_timeline(
    samples: list[Sample],
    config: DetectorConfig,
    vocab: Vocabulary | None = None,
    models_out: dict[str, HmmModel] | None = None,
) -> Timeline:
    """Distance between adjacent sliding-window HMMs' B-matrix embeddings."""
    family = _family_of(samples)
    vocab = _vocab_for(samples, config, vocab)
    windows = _sliding_windows_checked(samples, vocab, config)
    models = _window_models_hmm(windows, vocab.size, config)
    if models_out is not None:
        models_out.update({windows[i][0].label: m for i, m in models.items()})
    points, gaps = [], []
    for i in range(1, len(windows)):
        label = windows[i][0].label
        if i - 1 in models and i in models:
            points.append(TimelinePoint(label, hmm2vec_distance(models[i - 1], models[i])))
        else:
            gaps.append(label)
    return Timeline(family=family, method=Method.HMM2VEC, points=tuple(points), gaps=tuple(gaps))


def _sliding_windows_checked(
    samples: list[Sample], vocab: Vocabulary, config: DetectorConfig
) -> list[tuple[TimeWindow, list[EncodedSample]]]:
    needed = config.window_months + config.slide_months
    try:
        windows = sliding_windows(samples, vocab, config.window_months, config.slide_months)
    except CorpusError as exc:
        raise InsufficientSpan(str(exc)) from exc
    if len(windows) < 2:
        raise InsufficientSpan(
            f"window timelines need a span of >= {needed} months "
            f"(window={config.window_months}, slide={config.slide_months})"
        )
    return windows


def word2vec_timeline(
    samples: list[Sample],
    config: DetectorConfig,
    vocab: Vocabulary | None = None,
    models_out: dict[str, EmbeddingSet] | None = None,
) -> Timeline:
    """Distance between adjacent sliding-window CBOW embedding sets.

    The vocabulary is built once for the whole family so window embeddings
    stay index-aligned. By default every window trains from the same
    initialization (`w2v_shared_init`): embeddings are only defined up to an
    invertible linear map, and a shared starting point keeps independently
    trained windows in one basin instead of in arbitrary orientations.
    """
    family = _family_of(samples)
    vocab = _vocab_for(samples, config, vocab)
    windows = _sliding_windows_checked(samples, vocab, config)
    models: dict[int, EmbeddingSet] = {}
    for i, (_, content) in enumerate(windows):
        if len(content) < config.min_samples:
            continue
        seed = derive_seed(config.seed, "w2v", 0 if config.w2v_shared_init else i)
        cfg = dataclasses.replace(config.w2v, seed=seed)
        models[i] = train_word2vec_cbow([e.indices for e in content], vocab.size, cfg)
        if models_out is not None:
            models_out[windows[i][0].label] = models[i]
    points, gaps = [], []
    for i in range(1, len(windows)):
        label = windows[i][0].label
        if i - 1 in models and i in models:
            points.append(TimelinePoint(label, concat_distance(models[i - 1], models[i])))
        else:
            gaps.append(label)
    return Timeline(family=family, method=Method.W2V, points=tuple(points), gaps=tuple(gaps))


def detect_spikes(timeline: Timeline, k: float = 2.0) -> SpikeReport:
    """Flag points above median + k * (1.4826 * MAD), sorted by z-score.

    A constant series has zero spread and produces no spikes. When the MAD
    is zero but some values still exceed the median, those points are flagged
    with an infinite z-score (their deviation is unmeasurable, not absent).
    """
    if len(timeline.points) < 4:
        raise DetectorError(f"spike detection needs >= 4 points, got {len(timeline.points)}")
    values = np.array(timeline.values)
    med = float(np.median(values))
    sigma = MAD_SCALE * float(np.median(np.abs(values - med)))
    spikes = []
    for p in timeline.points:
        if p.value > med + k * sigma:
            z = (p.value - med) / sigma if sigma > 0 else math.inf
            spikes.append(Spike(p.label, p.value, z))
    spikes.sort(key=lambda s: (-s.z_score, s.label))
    return SpikeReport(
        family=timeline.family, method=timeline.method, threshold_k=k, spikes=tuple(spikes)
    )


def parse_window_label(label: str) -> TimeWindow:
    try:
        start_text, end_text = label.split("..")
        return TimeWindow(Month.parse(start_text), Month.parse(end_text))
    except (ValueError, CorpusError) as exc:
        raise DetectorError(f"bad window label {label!r}") from exc


def two_phase(
    samples: list[Sample], config: DetectorConfig, vocab: Vocabulary | None = None
) -> TwoPhaseReport:
    """Coarse yearly-window detection, then monthly HMM refinement.

    Phase 1 runs the configured yearly-window timeline and its spike report.
    Phase 2 reruns the paired-month HMM detector on just the months of each
    spiking window; the refined month is the maximum point of the restricted
    timeline (the strongest in-window change).
    """
    family = _family_of(samples)
    vocab = _vocab_for(samples, config, vocab)
    if config.coarse_method is Method.HMM2VEC:
        coarse = hmm2vec_timeline(samples, config, vocab)
    elif config.coarse_method is Method.W2V:
        coarse = word2vec_timeline(samples, config, vocab)
    else:
        raise DetectorError(f"two-phase coarse method must be hmm2vec or w2v, got {config.coarse_method}")
    report = detect_spikes(coarse, config.spike_k)
    findings = []
    for spike in report.spikes:
        window = parse_window_label(spike.label)
        scoped = [s for s in samples if window.contains(s.month)]
        refined_month: str | None = None
        refined_value: float | None = None
        if scoped:
            try:
                fine = hmm_approach2(scoped, config, vocab)
            except DetectorError:
                fine = None
            if fine is not None and fine.points:
                best = max(fine.points, key=lambda p: p.value)
                refined_month, refined_value = best.label, best.value
        findings.append(
            TwoPhaseFinding(
                window_label=spike.label,
                spike_value=spike.value,
                z_score=spike.z_score,
                refined_month=refined_month,
                refined_value=refined_value,
            )
        )
    return TwoPhaseReport(family=family, coarse_method=config.coarse_method, findings=tuple(findings))


def run_method(
    samples: list[Sample],
    method: Method,
    config: DetectorConfig,
    vocab: Vocabulary | None = None,
    models_out: dict | None = None,
) -> Timeline:
    """Dispatch a single timeline pipeline by method name."""
    pipeline = {
        Method.LR: lr_timeline,
        Method.HMM1: hmm_approach1,
        Method.HMM2: hmm_approach2,
        Method.HMM2VEC: hmm2vec_timeline,
        Method.W2V: word2vec_timeline,
    }[method]
    return pipeline(samples, config, vocab, models_out=models_out)


def localize(timeline: Timeline, spike_k: float = 2.0) -> list[Month]:
    """Candidate evolution months implied by a timeline's strongest signal.

    Month-based methods point at a month directly: hmm1's signal is the
    largest absolute first difference (a level shift), lr/hmm2's the top
    spike. Window-based methods return the two months by which the top
    spike's window pair differ (the month that left and the month that
    entered), since those are the only months the comparison actually
    changed.
    """
    if timeline.method is Method.HMM1:
        if len(timeline.points) < 2:
            return []
        diffs = [
            (abs(b.value - a.value), b.label)
            for a, b in zip(timeline.points, timeline.points[1:])
        ]
        return [Month.parse(max(diffs)[1])]
    report = detect_spikes(timeline, spike_k)
    if not report.spikes:
        return []
    top = report.spikes[0]
    if timeline.method in (Method.LR, Method.HMM2):
        return [Month.parse(top.label)]
    window = parse_window_label(top.label)
    return [window.start.plus(-1), window.end]
