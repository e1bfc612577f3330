"""Command-line interface: ingest, run, synth, eval.

Exit codes: 0 success, 2 bad input, 3 insufficient data span,
4 internal numeric failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import CorpusError, Month, Sample, Vocabulary, build_vocabulary, load_manifest
from .detectors import (
    DetectorConfig,
    DetectorError,
    InsufficientSpan,
    Method,
    Timeline,
    detect_spikes,
    localize,
    run_method,
    two_phase,
)
from .embeddings import EmbeddingError, Word2VecConfig
from .hmm import HmmError, HmmTrainConfig
from .logreg import LogRegConfig, LogRegError
from .synthgen import SynthError, generate_family, parse_spec_file, write_dataset

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_INSUFFICIENT_SPAN = 3
EXIT_NUMERIC = 4

TWO_PHASE = "two-phase"
METHOD_CHOICES = [m.value for m in Method] + [TWO_PHASE]

# config-file keys and their parsers; CLI flags use the same names
CONFIG_KEYS = {
    "seed": int,
    "top_k": int,
    "min_samples": int,
    "window_months": int,
    "slide_months": int,
    "spike_k": float,
    "normalize_scorevec": lambda v: v.lower() in ("1", "true", "yes", "on"),
    "aggregator": str,
    "coarse_method": str,
    "w2v_shared_init": lambda v: v.lower() in ("1", "true", "yes", "on"),
    "n_states": int,
    "hmm_max_iters": int,
    "hmm_tol": float,
    "hmm_restarts": int,
    "w2v_dim": int,
    "w2v_window": int,
    "w2v_epochs": int,
    "w2v_learning_rate": float,
    "lr_epochs": int,
    "lr_learning_rate": float,
    "lr_l2": float,
}


def read_config_file(path: Path | str) -> dict:
    """Flat key=value config; '#' starts a comment line."""
    values: dict = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise CorpusError(f"{path}:{lineno}: expected key=value, got {stripped!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key == "methods":
            values[key] = [m.strip() for m in value.split(",") if m.strip()]
            continue
        if key not in CONFIG_KEYS:
            raise CorpusError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = CONFIG_KEYS[key](value.strip())
        except ValueError as exc:
            raise CorpusError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return values


def build_detector_config(opts: dict) -> DetectorConfig:
    return DetectorConfig(
        seed=opts["seed"],
        top_k=opts["top_k"],
        min_samples=opts["min_samples"],
        window_months=opts["window_months"],
        slide_months=opts["slide_months"],
        spike_k=opts["spike_k"],
        normalize_scorevec=opts["normalize_scorevec"],
        aggregator=opts["aggregator"],
        coarse_method=Method(opts["coarse_method"]),
        w2v_shared_init=opts["w2v_shared_init"],
        hmm=HmmTrainConfig(
            n_states=opts["n_states"],
            max_iters=opts["hmm_max_iters"],
            tol=opts["hmm_tol"],
            restarts=opts["hmm_restarts"],
        ),
        w2v=Word2VecConfig(
            dim=opts["w2v_dim"],
            window=opts["w2v_window"],
            epochs=opts["w2v_epochs"],
            learning_rate=opts["w2v_learning_rate"],
        ),
        logreg=LogRegConfig(
            epochs=opts["lr_epochs"],
            learning_rate=opts["lr_learning_rate"],
            l2=opts["lr_l2"],
        ),
    )


DEFAULT_OPTS = {
    "seed": 0,
    "top_k": 30,
    "min_samples": 3,
    "window_months": 12,
    "slide_months": 1,
    "spike_k": 2.0,
    "normalize_scorevec": False,
    "aggregator": "mean",
    "coarse_method": "w2v",
    "w2v_shared_init": True,
    "n_states": 2,
    "hmm_max_iters": 200,
    "hmm_tol": 1e-6,
    "hmm_restarts": 1,
    "w2v_dim": 2,
    "w2v_window": 5,
    "w2v_epochs": 5,
    "w2v_learning_rate": 0.025,
    "lr_epochs": 500,
    "lr_learning_rate": 0.1,
    "lr_l2": 1e-4,
}


def _atomic_write(path: Path, writer) -> None:
    """Write via a temp file and rename so partial runs never corrupt output."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    writer(tmp)
    os.replace(tmp, path)


def _by_family(samples: list[Sample]) -> dict[str, list[Sample]]:
    grouped: dict[str, list[Sample]] = {}
    for s in samples:
        grouped.setdefault(s.family, []).append(s)
    return dict(sorted(grouped.items()))


def cmd_ingest(args: argparse.Namespace) -> int:
    samples = load_manifest(args.manifest, lenient=args.lenient)
    if not samples:
        print("manifest contains no usable samples", file=sys.stderr)
        return EXIT_BAD_INPUT
    print(f"{'family':<20} {'samples':>8} {'months':>7}  span")
    for family, group in _by_family(samples).items():
        months = sorted({s.month for s in group})
        opcount = sum(len(s.opcodes) for s in group)
        span = f"{months[0]}..{months[-1]}"
        print(f"{family:<20} {len(group):>8} {len(months):>7}  {span}  ({opcount} opcodes)")
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    opts = dict(DEFAULT_OPTS)
    methods = None
    if args.config:
        file_opts = read_config_file(args.config)
        methods = file_opts.pop("methods", None)
        opts.update(file_opts)
    for key in CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            opts[key] = flag
    if args.seed is not None:
        opts["seed"] = args.seed
    if args.methods:
        methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    if not methods:
        print("no methods selected (use --methods)", file=sys.stderr)
        return EXIT_BAD_INPUT
    for m in methods:
        if m not in METHOD_CHOICES:
            print(f"unknown method {m!r}; choose from {METHOD_CHOICES}", file=sys.stderr)
            return EXIT_BAD_INPUT

    config = build_detector_config(opts)
    samples = load_manifest(args.manifest, lenient=args.lenient)
    out_root = Path(args.out)
    meta = {
        "version": __version__,
        "manifest": str(args.manifest),
        "methods": methods,
        "config": {**opts, "seed": config.seed},
    }
    _atomic_write(out_root / "run_meta.json", lambda p: p.write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8"))

    span_failures = 0
    for family, group in _by_family(samples).items():
        vocab = build_vocabulary(group, config.top_k)
        fam_dir = out_root / family
        _atomic_write(fam_dir / "vocabulary.txt", vocab.save)
        for method_name in methods:
            try:
                if method_name == TWO_PHASE:
                    report = two_phase(group, config, vocab)
                    _atomic_write(fam_dir / TWO_PHASE / "report.json", report.write_json)
                    print(f"{family} {method_name}: {len(report.findings)} finding(s)")
                    continue
                method = Method(method_name)
                models: dict = {}
                timeline = run_method(group, method, config, vocab, models_out=models)
                method_dir = fam_dir / method.value
                _atomic_write(method_dir / "timeline.csv", timeline.write_csv)
                if len(timeline.points) >= 4:
                    spikes = detect_spikes(timeline, config.spike_k)
                    _atomic_write(method_dir / "spikes.json", spikes.write_json)
                for label, model in models.items():
                    _atomic_write(method_dir / "models" / f"{label}.txt", model.save)
                print(
                    f"{family} {method_name}: {len(timeline.points)} points, "
                    f"{len(timeline.gaps)} gaps"
                )
            except InsufficientSpan as exc:
                print(f"{family} {method_name}: skipped ({exc})", file=sys.stderr)
                span_failures += 1
    if span_failures:
        return EXIT_INSUFFICIENT_SPAN
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    spec = parse_spec_file(args.spec)
    samples, truth = generate_family(spec)
    manifest = write_dataset(samples, truth, args.out)
    months = sorted({s.month for s in samples})
    print(
        f"wrote {len(samples)} samples ({spec.family}, {months[0]}..{months[-1]}) "
        f"to {manifest.parent}; ground truth: {[str(m) for m in truth] or 'none'}"
    )
    return EXIT_OK


def _read_truth(path: Path | str) -> list[Month]:
    months = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        stripped = line.strip()
        if stripped:
            months.append(Month.parse(stripped))
    return months


def cmd_eval(args: argparse.Namespace) -> int:
    truth = _read_truth(args.truth)
    csv_paths = sorted(Path(args.timelines).rglob("timeline.csv"))
    if not csv_paths:
        print(f"no timeline.csv files under {args.timelines}", file=sys.stderr)
        return EXIT_BAD_INPUT
    results = []
    for path in csv_paths:
        try:
            timeline = Timeline.read_csv(path)
        except DetectorError as exc:
            print(f"skipping {path}: {exc}", file=sys.stderr)
            continue
        try:
            candidates = localize(timeline, args.spike_k)
        except DetectorError as exc:
            print(f"{path}: {exc}", file=sys.stderr)
            candidates = []
        for t in truth:
            hit = any(abs(c.ordinal - t.ordinal) <= args.tolerance for c in candidates)
            results.append(
                {
                    "family": timeline.family,
                    "method": timeline.method.value,
                    "truth": str(t),
                    "candidates": [str(c) for c in candidates],
                    "pass": hit,
                }
            )
    for r in results:
        status = "PASS" if r["pass"] else "FAIL"
        print(f"{status} {r['family']} {r['method']} boundary={r['truth']} candidates={r['candidates']}")
    if args.out:
        payload = {"tolerance": args.tolerance, "results": results}
        _atomic_write(Path(args.out), lambda p: p.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8"))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="opdrift",
        description="Detect evolutionary change points in opcode-sequence families.",
    )
    parser.add_argument("--version", action="version", version=f"opdrift {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="enable debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="summarize a manifest's families")
    p_ingest.add_argument("--manifest", required=True)
    p_ingest.add_argument("--lenient", action="store_true", help="skip bad rows instead of failing")
    p_ingest.set_defaults(func=cmd_ingest)

    p_run = sub.add_parser("run", help="run detection pipelines and write reports")
    p_run.add_argument("--manifest", required=True)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--methods", help=f"comma-separated subset of {METHOD_CHOICES}")
    p_run.add_argument("--seed", type=int, help="master seed (default 0)")
    p_run.add_argument("--config", help="flat key=value config file; flags override it")
    p_run.add_argument("--lenient", action="store_true")
    p_run.add_argument("--top-k", dest="top_k", type=int)
    p_run.add_argument("--n-states", dest="n_states", type=int)
    p_run.add_argument("--min-samples", dest="min_samples", type=int)
    p_run.add_argument("--window-months", dest="window_months", type=int)
    p_run.add_argument("--slide-months", dest="slide_months", type=int)
    p_run.add_argument("--spike-k", dest="spike_k", type=float)
    p_run.add_argument("--normalize-scorevec", dest="normalize_scorevec", action="store_const", const=True)
    p_run.add_argument("--aggregator", choices=["mean", "median"])
    p_run.add_argument("--coarse-method", dest="coarse_method", choices=["w2v", "hmm2vec"])
    p_run.add_argument("--hmm-max-iters", dest="hmm_max_iters", type=int)
    p_run.add_argument("--hmm-tol", dest="hmm_tol", type=float)
    p_run.add_argument("--hmm-restarts", dest="hmm_restarts", type=int)
    p_run.add_argument("--w2v-dim", dest="w2v_dim", type=int, help="embedding length V")
    p_run.add_argument("--w2v-window", dest="w2v_window", type=int, help="context window W")
    p_run.add_argument("--w2v-epochs", dest="w2v_epochs", type=int)
    p_run.add_argument("--w2v-learning-rate", dest="w2v_learning_rate", type=float)
    p_run.add_argument("--lr-epochs", dest="lr_epochs", type=int)
    p_run.add_argument("--lr-learning-rate", dest="lr_learning_rate", type=float)
    p_run.add_argument("--lr-l2", dest="lr_l2", type=float)
    p_run.set_defaults(func=cmd_run)

    p_synth = sub.add_parser("synth", help="materialize a synthetic family")
    p_synth.add_argument("--spec", required=True, help="flat key=value family spec")
    p_synth.add_argument("--out", required=True)
    p_synth.set_defaults(func=cmd_synth)

    p_eval = sub.add_parser("eval", help="score timelines against ground truth")
    p_eval.add_argument("--timelines", required=True, help="directory containing timeline.csv files")
    p_eval.add_argument("--truth", required=True, help="file of ground-truth months, one YYYY-MM per line")
    p_eval.add_argument("--tolerance", type=int, default=1, help="match window in months")
    p_eval.add_argument("--spike-k", dest="spike_k", type=float, default=2.0)
    p_eval.add_argument("--out", help="also write the results as JSON")
    p_eval.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except InsufficientSpan as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INSUFFICIENT_SPAN
    except (
        CorpusError,
        SynthError,
        DetectorError,
        EmbeddingError,
        HmmError,
        LogRegError,
        FileNotFoundError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
