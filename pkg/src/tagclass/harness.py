"""Episode sampling, accuracy/macro-F1 metrics, and multi-seed aggregation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import TextAttributedGraph
from .prompting import (ClassPromptSet, DEFAULT_TEMPLATE, Prediction,
                        few_shot_tune, make_class_prompts, predict_nodes)
from .pretrain import TrainedModel


@dataclass(frozen=True)
class Episode:
    """One C-way K-shot task over a class subset of the graph."""

    classes: tuple[int, ...]
    support: tuple[tuple[int, int], ...]  # (node id, label), K per class
    query: tuple[tuple[int, int], ...]    # remaining labeled nodes of those classes


def sample_episode(graph: TextAttributedGraph, c: int, k: int, seed: int) -> Episode:
    """Uniform class subset and per-class support; everything else is query.

    Classes with fewer than K+1 nodes are ineligible. K=0 yields an empty
    support set (zero-shot).
    """
    if c < 1 or k < 0:
        raise ValueError("need c >= 1 and k >= 0")
    labels = np.asarray(graph.labels)
    counts = np.bincount(labels, minlength=graph.num_classes)
    eligible = np.flatnonzero(counts >= k + 1)
    if eligible.size < c:
        raise ValueError(f"only {eligible.size} classes have at least {k + 1} "
                         f"nodes; cannot sample {c}")
    rng = np.random.default_rng(seed)
    classes = np.sort(rng.choice(eligible, size=c, replace=False))

    support: list[tuple[int, int]] = []
    query: list[tuple[int, int]] = []
    for cls in classes:
        nodes = np.flatnonzero(labels == cls)
        chosen = rng.choice(nodes, size=k, replace=False) if k else np.empty(0, dtype=np.int64)
        support.extend((int(n), int(cls)) for n in chosen)
        rest = np.setdiff1d(nodes, chosen)
        query.extend((int(n), int(cls)) for n in rest)
    return Episode(tuple(int(x) for x in classes), tuple(support), tuple(query))


def evaluate(predictions, truths) -> tuple[float, float]:
    """Accuracy and macro-F1 over the classes present in the truths.

    A truth class that is never predicted contributes an F1 of 0; predicted
    classes absent from the truths are excluded from the mean.
    """
    predictions = np.asarray(predictions)
    truths = np.asarray(truths)
    if predictions.size == 0:
        raise ValueError("evaluate: empty predictions")
    if predictions.shape != truths.shape:
        raise ValueError(f"evaluate: {predictions.shape} predictions vs "
                         f"{truths.shape} truths")
    accuracy = float((predictions == truths).mean())

    f1s = []
    for cls in np.unique(truths):
        tp = int(((predictions == cls) & (truths == cls)).sum())
        fp = int(((predictions == cls) & (truths != cls)).sum())
        fn = int(((predictions != cls) & (truths == cls)).sum())
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(2 * precision * recall / (precision + recall)
                   if precision + recall else 0.0)
    return accuracy, float(np.mean(f1s))


@dataclass(frozen=True)
class TaskConfig:
    num_ways: int = 5
    num_shots: int = 5
    base_seed: int = 0
    template: str = DEFAULT_TEMPLATE
    prob_average: bool = False
    tune_epochs: int = 50
    tune_learning_rate: float = 0.01


@dataclass
class RunResult:
    episode: Episode
    predictions: list[Prediction]
    accuracy: float
    macro_f1: float


@dataclass
class MetricsReport:
    accuracies: list[float]
    f1s: list[float]
    runs: list[RunResult] = field(default_factory=list)

    @staticmethod
    def _mean_std(values: list[float]) -> tuple[float, float]:
        mean = float(np.mean(values))
        std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
        return mean, std

    @property
    def accuracy_mean_std(self) -> tuple[float, float]:
        return self._mean_std(self.accuracies)

    @property
    def f1_mean_std(self) -> tuple[float, float]:
        return self._mean_std(self.f1s)


def run_trials(model: TrainedModel, graph: TextAttributedGraph,
               task: TaskConfig, num_runs: int = 5) -> MetricsReport:
    """Episodes with seeds base_seed + run index; mean and sample std over runs."""
    if num_runs < 1:
        raise ValueError("num_runs must be at least 1")
    report = MetricsReport([], [])
    for run in range(num_runs):
        seed = task.base_seed + run
        episode = sample_episode(graph, task.num_ways, task.num_shots, seed)
        prompts = make_class_prompts(episode.classes, graph.class_names, task.template)
        if task.num_shots > 0:
            tuned = few_shot_tune(model, graph, list(episode.support), prompts,
                                  epochs=task.tune_epochs,
                                  learning_rate=task.tune_learning_rate, seed=seed)
            prompts = prompts.with_vectors(tuned.prompt_vectors)
            mode = "fewshot"
        else:
            mode = "zeroshot"
        node_ids = [n for n, _ in episode.query]
        truths = [lab for _, lab in episode.query]
        predictions = predict_nodes(model, graph, node_ids, prompts, mode,
                                    prob_average=task.prob_average if mode == "zeroshot" else None)
        accuracy, macro_f1 = evaluate([p.predicted for p in predictions], truths)
        report.accuracies.append(accuracy)
        report.f1s.append(macro_f1)
        report.runs.append(RunResult(episode, predictions, accuracy, macro_f1))
    return report


def format_report(report: MetricsReport) -> str:
    """Per-run ``run<TAB>acc<TAB>f1`` lines, then mean±std footers, 4 decimals."""
    lines = [f"{run}\t{acc:.4f}\t{f1:.4f}"
             for run, (acc, f1) in enumerate(zip(report.accuracies, report.f1s))]
    acc_mean, acc_std = report.accuracy_mean_std
    f1_mean, f1_std = report.f1_mean_std
    lines.append(f"acc\t{acc_mean:.4f}±{acc_std:.4f}")
    lines.append(f"f1\t{f1_mean:.4f}±{f1_std:.4f}")
    return "\n".join(lines) + "\n"
