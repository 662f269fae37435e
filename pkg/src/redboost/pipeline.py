"""End-to-end orchestration shared by the CLI, the experiments and the acceptance suite."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import evaluator, experiments, popularity, recommender
from .data_store import (
    TEST,
    InteractionGraph,
    SplitAssignment,
    TrackFeatureTable,
    split_peek_holdout,
    split_playlists,
)
from .popularity import PopularityIndex
from .trainer import TrainConfig, Trainer


@dataclass
class Dataset:
    graph: InteractionGraph
    features: TrackFeatureTable
    split: SplitAssignment  # with peek/holdout filled in
    index: PopularityIndex
    long_tail: np.ndarray
    lt_fraction: float = 0.2

    def peeks(self, which: int = TEST) -> dict[int, np.ndarray]:
        return {p: self.split.peek[p] for p in self.split.evaluated(which)}

    def holdouts(self, which: int = TEST) -> dict[int, np.ndarray]:
        return {p: self.split.holdout[p] for p in self.split.evaluated(which)}


def prepare(
    g: InteractionGraph,
    features: TrackFeatureTable,
    split: SplitAssignment | None = None,
    fractions=(0.8, 0.1, 0.1),
    split_seed: int = 0,
    peek_k: int = 5,
    lt_fraction: float = 0.2,
) -> Dataset:
    split = split or split_playlists(g, fractions, split_seed)
    split = split_peek_holdout(g, split, peek_k)
    index = popularity.popularity_index(g, split)
    return Dataset(g, features, split, index, popularity.long_tail_set(index, lt_fraction), lt_fraction)


def evaluate_run(ds: Dataset, run: recommender.RecommendationRun, k: int, config: dict | None = None, which: int = TEST):
    return evaluator.evaluate_all(
        run,
        ds.holdouts(which),
        ds.graph.track_artist,
        ds.graph.n_artists,
        ds.features.sonic_scaled(),
        ds.long_tail,
        playlist_names=ds.graph.playlist_names,
        config=config,
        k=k,
    )


def recommend(ds: Dataset, Z: np.ndarray, k: int, method: str = "model", which: int = TEST):
    return recommender.recommend_playlists(Z, ds.peeks(which), k, method)


def evaluate_embeddings(ds: Dataset, Z: np.ndarray, k: int = 100, config: dict | None = None, method: str = "model", which: int = TEST):
    run = recommend(ds, Z, k, method, which)
    return run, evaluate_run(ds, run, k, config, which)


def mostpop(ds: Dataset, k: int = 100, config: dict | None = None, which: int = TEST):
    run = recommender.mostpop_baseline(ds.index, ds.peeks(which), k)
    return run, evaluate_run(ds, run, k, config, which)


def features_run(ds: Dataset, k: int = 100, config: dict | None = None, which: int = TEST):
    Z = recommender.features_baseline(ds.features)
    return evaluate_embeddings(ds, Z, k, config, "features", which)


def gamma_sweep(ds: Dataset, cfg: TrainConfig, gammas, k: int = 100, which: int = TEST) -> list[dict]:
    """One stage-2 run per gamma, all branched from a shared stage-1 state.

    Rows come back in the order of ``gammas``, each holding every metric
    and the min-max model selection score across the sweep.
    """
    base = Trainer(ds.graph, ds.features, ds.split, cfg)
    base.run_epochs(cfg.stage1_epochs, 1, 0.0)
    rows = []
    for gamma in gammas:
        fair = dataclasses.replace(cfg.fairness, gamma=float(gamma))
        branch = base.fork(dataclasses.replace(cfg, fairness=fair))
        branch.begin_stage2(float(gamma))
        branch.run_epochs(cfg.stage2_epochs, 2, float(gamma))
        _, report = evaluate_embeddings(ds, branch.result().embeddings, k, which=which)
        rows.append({"gamma": float(gamma), **report.metrics})
    scores = evaluator.model_selection_score(rows)
    for row, s in zip(rows, scores):
        row["selection_score"] = s
    return rows


def counterfactual_experiment(
    ds: Dataset, methods: dict[str, TrainConfig], n_top: int = 100, seed: int = 0
) -> list[experiments.CentroidReport]:
    """Retrain each method on the graph augmented with degree-1 duplicates and compare centroids."""
    cf = experiments.counterfactual_duplicate(ds.graph, ds.features, ds.index, ds.split, n_top, seed)
    reports = []
    for name, cfg in methods.items():
        Z = Trainer(cf.graph, cf.features, cf.split, cfg).fit().embeddings
        report, _, _ = experiments.centroid_report(Z, cf.originals, cf.duplicates, name)
        reports.append(report)
    return reports
