"""Cross-validated experiment driver and metrics.

An experiment fixes a feature mode (wl alone or wl fused with capability
vectors), a regime (closed-world over the proxy families, or open-world with
the ``non_proxy`` class included), a balancing mode, and a fold count. Folds
come from the DEX-grouped plan, so the split never leaks a DEX artifact
across the train/test boundary; the driver re-asserts that per fold and
records it in the report. Balancing and feature mode never perturb the fold
plan.

Macro-F1 averages per-class F1 with equal class weight. A class that is
absent from both truth and predictions in a fold is skipped (and flagged)
rather than averaged in as zero; a class that is present but never correctly
predicted contributes 0.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .classifier import LinearModel, TrainConfig, predict_batch, train
from .corpus import (
    Corpus,
    FeatureSet,
    FoldPlan,
    NON_PROXY_LABEL,
    Sample,
    build_capa_vocabulary,
    fuse_capa,
    group_by_dex,
    leakage_violations,
    plan_folds,
    upsample_training,
)
from .errors import ConfigError, DataError, InternalError
from .wl import FeatureVector

logger = logging.getLogger(__name__)

FEATURE_MODES = ("wl", "wl+capa")
REGIMES = ("closed", "open")
BALANCING = ("none", "upsampled")

# Stirs the fold index into per-fold training seeds.
_FOLD_SEED_MIX = 0x9E3779B97F4A7C15


@dataclass(frozen=True)
class ExperimentConfig:
    features: str = "wl"
    regime: str = "closed"
    balance: str = "none"
    k: int = 5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.features not in FEATURE_MODES:
            raise ConfigError(f"features must be one of {FEATURE_MODES}")
        if self.regime not in REGIMES:
            raise ConfigError(f"regime must be one of {REGIMES}")
        if self.balance not in BALANCING:
            raise ConfigError(f"balance must be one of {BALANCING}")
        if self.k < 2:
            raise ConfigError("k must be >= 2")


@dataclass(frozen=True)
class FoldResult:
    fold: int
    classes: tuple[str, ...]
    confusion: np.ndarray  # (K, K) counts, rows = truth
    macro_f1: float
    skipped_classes: tuple[str, ...]
    test_count: int
    leakage_ok: bool


@dataclass(frozen=True)
class ExperimentResult:
    config: ExperimentConfig
    classes: tuple[str, ...]
    plan: FoldPlan
    folds: tuple[FoldResult, ...]
    models: tuple[LinearModel, ...]
    macro_f1_mean: float
    macro_f1_std: float


def per_class_counts(confusion: np.ndarray) -> list[tuple[int, int, int]]:
    """(tp, fp, fn) per class from a confusion matrix."""
    confusion = np.asarray(confusion)
    tp = np.diag(confusion)
    fp = confusion.sum(axis=0) - tp
    fn = confusion.sum(axis=1) - tp
    return [(int(t), int(p), int(n)) for t, p, n in zip(tp, fp, fn)]


def macro_f1_detailed(confusion: np.ndarray) -> tuple[float, tuple[int, ...]]:
    """Macro-F1 plus the indices of classes skipped as absent."""
    counts = per_class_counts(confusion)
    if len(counts) < 2:
        raise ValueError("confusion matrix needs >= 2 classes")
    f1s: list[float] = []
    skipped: list[int] = []
    for idx, (tp, fp, fn) in enumerate(counts):
        if tp + fp + fn == 0:
            skipped.append(idx)
            continue
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        f1s.append(f1)
    if not f1s:
        return 0.0, tuple(skipped)
    return float(np.mean(f1s)), tuple(skipped)


def macro_f1(confusion: np.ndarray) -> float:
    return macro_f1_detailed(confusion)[0]


def confusion_matrix(
    truth: Sequence[str], predicted: Sequence[str], classes: Sequence[str]
) -> np.ndarray:
    index = {c: i for i, c in enumerate(classes)}
    out = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(truth, predicted):
        out[index[t], index[p]] += 1
    return out


def render_confusion(confusion: np.ndarray, classes: Sequence[str]) -> str:
    """Text table: row-normalized rates with raw counts parenthesized."""
    confusion = np.asarray(confusion)
    width = max(len(c) for c in classes)
    lines = []
    header = " " * (width + 2) + "  ".join(f"{c:>12}" for c in classes)
    lines.append(header)
    for i, cls in enumerate(classes):
        row = confusion[i]
        total = row.sum()
        cells = []
        for count in row:
            rate = count / total if total else 0.0
            cells.append(f"{rate:.3f} ({count})".rjust(12))
        lines.append(f"{cls:<{width}}  " + "  ".join(cells))
    return "\n".join(lines) + "\n"


def confusion_csv(confusion: np.ndarray, classes: Sequence[str]) -> str:
    confusion = np.asarray(confusion)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n", quoting=csv.QUOTE_NONNUMERIC)
    writer.writerow(["truth\\pred", *classes])
    for i, cls in enumerate(classes):
        row = confusion[i]
        total = row.sum()
        cells = [
            f"{(c / total if total else 0.0):.3f} ({c})" for c in row
        ]
        writer.writerow([cls, *cells])
    return buf.getvalue()


def _select_samples(corpus: Corpus, config: ExperimentConfig) -> list[Sample]:
    labeled = [s for s in corpus.samples if s.family is not None]
    if config.regime == "open":
        if not any(s.family == NON_PROXY_LABEL for s in labeled):
            raise ConfigError(
                "open-world regime requires non_proxy samples in the corpus"
            )
        return labeled
    return [s for s in labeled if s.family != NON_PROXY_LABEL]


def _feature_matrix(
    corpus: Corpus,
    samples: Sequence[Sample],
    features: FeatureSet,
    config: ExperimentConfig,
) -> tuple[list[Sample], np.ndarray, tuple[tuple[str, int, int], ...], tuple[str, ...]]:
    index = features.index_of()
    usable = [s for s in samples if s.id in index]
    missing = len(samples) - len(usable)
    if missing:
        logger.warning("%d samples missing from the feature cache; skipped", missing)
    base = np.stack([features.matrix[index[s.id]] for s in usable])
    if config.features == "wl":
        return usable, base, features.layout, ()
    vocab = build_capa_vocabulary(corpus.samples)
    fused_rows = []
    for s, row in zip(usable, base):
        fv = FeatureVector(row, features.layout)
        fused_rows.append(fuse_capa(fv, s.capa_rules, vocab).values)
    fused = np.stack(fused_rows)
    layout = features.layout + (("capa", features.dim, len(vocab)),)
    return usable, fused, layout, vocab


def run_experiment(
    corpus: Corpus,
    features: FeatureSet,
    config: ExperimentConfig,
    train_config: TrainConfig | None = None,
) -> ExperimentResult:
    """DEX-grouped K-fold cross-validation; deterministic given seeds."""
    train_config = train_config or TrainConfig(seed=config.seed)
    samples = _select_samples(corpus, config)
    samples, X, layout, vocab = _feature_matrix(corpus, samples, features, config)
    if not samples:
        raise DataError("no usable samples for the experiment")
    classes = tuple(sorted({s.family for s in samples}))
    groups = group_by_dex(samples)
    plan = plan_folds(groups, config.k, config.seed)
    by_id = {s.id: s for s in samples}
    row_of = {s.id: i for i, s in enumerate(samples)}
    violations = leakage_violations(samples, plan)

    folds: list[FoldResult] = []
    models: list[LinearModel] = []
    tested: set[str] = set()
    for fold in range(config.k):
        test_ids = [s.id for s in samples if plan.fold_of_sample(s.id) == fold]
        train_ids = [s.id for s in samples if plan.fold_of_sample(s.id) != fold]
        if not test_ids or not train_ids:
            raise InternalError(f"fold {fold} has an empty partition")
        leaks = [v for v in violations if v[0] == fold]
        if leaks:
            raise InternalError(f"DEX leakage in fold {fold}: {leaks[:3]}")
        if config.balance == "upsampled":
            try:
                train_multiset = upsample_training(
                    [by_id[i] for i in train_ids], classes, seed=config.seed
                )
            except DataError as exc:
                raise DataError(f"fold {fold}: {exc}") from exc
        else:
            train_multiset = train_ids
        X_train = X[[row_of[i] for i in train_multiset]]
        y_train = [by_id[i].family for i in train_multiset]
        fold_seed = (train_config.seed ^ (fold * _FOLD_SEED_MIX)) & 0xFFFFFFFFFFFFFFFF
        model = train(
            X_train,
            y_train,
            replace(train_config, seed=fold_seed),
            layout=layout,
            capa_vocab=vocab,
        )
        X_test = X[[row_of[i] for i in test_ids]]
        predicted, _ = predict_batch(model, X_test)
        truth = [by_id[i].family for i in test_ids]
        conf = confusion_matrix(truth, predicted, classes)
        score, skipped_idx = macro_f1_detailed(conf)
        folds.append(
            FoldResult(
                fold=fold,
                classes=classes,
                confusion=conf,
                macro_f1=score,
                skipped_classes=tuple(classes[i] for i in skipped_idx),
                test_count=len(test_ids),
                leakage_ok=not leaks,
            )
        )
        models.append(model)
        tested.update(test_ids)
    if tested != set(by_id):
        raise InternalError("test partitions do not cover the corpus")
    scores = np.array([f.macro_f1 for f in folds])
    return ExperimentResult(
        config=config,
        classes=classes,
        plan=plan,
        folds=tuple(folds),
        models=tuple(models),
        macro_f1_mean=float(scores.mean()),
        macro_f1_std=float(scores.std(ddof=1)) if len(scores) > 1 else 0.0,
    )


def report_csv(result: ExperimentResult) -> str:
    """Per-fold metric rows plus mean/std summary, config echoed as comments."""
    buf = io.StringIO()
    cfg = result.config
    buf.write(f"# features = {cfg.features}\n")
    buf.write(f"# regime = {cfg.regime}\n")
    buf.write(f"# balance = {cfg.balance}\n")
    buf.write(f"# k = {cfg.k}\n")
    buf.write(f"# seed = {cfg.seed}\n")
    leak_ok = all(f.leakage_ok for f in result.folds)
    buf.write(f"# leakage_check = {'pass' if leak_ok else 'FAIL'}\n")
    writer = csv.writer(buf, lineterminator="\n")
    per_class_cols: list[str] = []
    for cls in result.classes:
        per_class_cols += [f"{cls}_precision", f"{cls}_recall", f"{cls}_f1"]
    writer.writerow(
        ["fold", "test_count", "macro_f1", "leakage_ok", "skipped_classes", *per_class_cols]
    )
    for fr in result.folds:
        cells: list[str] = []
        for tp, fp, fn in per_class_counts(fr.confusion):
            if tp + fp + fn == 0:
                cells += ["", "", ""]
                continue
            p = tp / (tp + fp) if tp + fp else 0.0
            r = tp / (tp + fn) if tp + fn else 0.0
            f1 = 2 * p * r / (p + r) if p + r else 0.0
            cells += [f"{p:.6f}", f"{r:.6f}", f"{f1:.6f}"]
        writer.writerow(
            [
                fr.fold,
                fr.test_count,
                f"{fr.macro_f1:.6f}",
                "yes" if fr.leakage_ok else "NO",
                ";".join(fr.skipped_classes),
                *cells,
            ]
        )
    writer.writerow(
        ["mean", "", f"{result.macro_f1_mean:.6f}", "", "", *[""] * len(per_class_cols)]
    )
    writer.writerow(
        ["std", "", f"{result.macro_f1_std:.6f}", "", "", *[""] * len(per_class_cols)]
    )
    return buf.getvalue()


def write_report(out_dir: Path | str, result: ExperimentResult) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.csv").write_text(report_csv(result), encoding="utf-8")
    for fr in result.folds:
        (out_dir / f"confusion_fold{fr.fold}.csv").write_text(
            confusion_csv(fr.confusion, result.classes), encoding="utf-8"
        )


def summarize_grid(
    results: dict[tuple[str, str], ExperimentResult]
) -> str:
    """CSV grid of macro-F1 summaries, balancing x regime."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    regimes = sorted({regime for _, regime in results})
    writer.writerow(["balancing", *[f"{r}-world" for r in regimes]])
    for balance in sorted({b for b, _ in results}):
        row = [balance]
        for regime in regimes:
            res = results.get((balance, regime))
            row.append(
                f"{res.macro_f1_mean:.3f} +/- {res.macro_f1_std:.3f}" if res else ""
            )
        writer.writerow(row)
    return buf.getvalue()
