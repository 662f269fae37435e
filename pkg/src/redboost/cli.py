"""Command-line entry point: ``redboost <subcommand> [--config FILE] [--key value ...]``.

Settings come from built-in defaults, then an optional flat ``key = value``
config file, then command-line flags (last one wins). Every JSON report
carries the fully resolved config and the seed.

Exit codes: 0 success, 1 usage/validation error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, checks, evaluator, experiments, pipeline, popularity, recommender
from .data_store import (
    SPLIT_NAMES,
    SynthSpec,
    generate_synthetic,
    load_dense,
    load_features,
    load_interactions,
    load_splits,
    split_playlists,
    write_dense,
    write_features,
    write_interactions,
    write_splits,
)
from .errors import CheckpointError, ConfigError, ParseError, RedboostError, ValidationError
from .io_utils import atomic_writer, dump_json, to_json
from .objective import FairnessConfig
from .trainer import TrainConfig, Trainer, save_checkpoint, write_train_log

logger = logging.getLogger("redboost")

COMMANDS = (
    "stats", "synth", "bins", "train", "recommend", "evaluate",
    "cf-sim", "artist-sim", "sweep", "visibility", "selftest",
)  # fmt: skip

# key: (type, default, help). Types are int, float, str or bool.
CONFIG_KEYS: dict[str, tuple[type, object, str]] = {
    # data paths
    "interactions": (str, "", "interaction CSV (playlist_id,track_id,artist_id,position)"),
    "features": (str, "", "track feature CSV (track_id,sonic_0..8,genre_0..19)"),
    "name_emb": (str, "", "optional precomputed track-name embedding CSV"),
    "image_emb": (str, "", "optional precomputed cover-image embedding CSV"),
    "splits": (str, "", "playlist split CSV; generated from split_seed when empty"),
    "embeddings": (str, "", "track embedding CSV written by train"),
    "run": (str, "", "recommendation run CSV written by recommend"),
    "out": (str, "", "output file, or directory for synth/train; empty prints JSON to stdout"),
    # splits and evaluation
    "seed": (int, 0, "master seed for training and sampling"),
    "split_seed": (int, 0, "seed of the playlist-level split"),
    "valid_fraction": (float, 0.1, "share of playlists held out for validation"),
    "test_fraction": (float, 0.1, "share of playlists held out for test"),
    "peek_k": (int, 5, "revealed prefix length of each evaluation playlist"),
    "lt_fraction": (float, 0.2, "share of tracks forming the short head"),
    "k": (int, 100, "recommendation list length"),
    "eval_split": (str, "test", "which held-out split to recommend for and evaluate (valid|test)"),
    "method": (str, "model", "recommend: model | features | mostpop"),
    # trainer
    "stage1_epochs": (int, 20, "utility-only epochs"),
    "stage2_epochs": (int, 20, "utility + gamma * fairness epochs"),
    "batch_size": (int, 64, "positive pairs per step"),
    "steps_per_epoch": (int, 0, "0 means train edges // batch_size"),
    "lr": (float, 0.003, "learning rate"),
    "optimizer": (str, "adam", "adam | sgd"),
    "beta1": (float, 0.9, "Adam first-moment decay"),
    "beta2": (float, 0.999, "Adam second-moment decay"),
    "adam_eps": (float, 1e-8, "Adam denominator offset"),
    "stage2_reset_optimizer": (bool, True, "fresh optimizer state when stage 2 adds the fairness term"),
    "hidden_dim": (int, 64, "hidden width of both aggregation layers"),
    "out_dim": (int, 64, "embedding dimension"),
    "walks": (int, 200, "random walks per track for neighbourhoods"),
    "walk_len": (int, 2, "hops per walk (even)"),
    "neighbors": (int, 20, "neighbours kept per track"),
    "focal_gamma": (float, 2.0, "focal loss focusing exponent"),
    "focal_alpha": (float, 0.5, "focal loss weight of positive pairs"),
    "fair_anchors": (int, 16, "anchors per fairness step"),
    "use_name_emb": (bool, False, "append name embeddings to the model input"),
    "use_image_emb": (bool, False, "append image embeddings to the model input"),
    # fairness
    "gamma": (float, 1.0, "fairness weight in the total loss"),
    "alpha": (float, 1.0, "sigmoid sharpness of learned pair probabilities"),
    "k_fair": (int, 10, "top-k list length of the fairness loss"),
    "boost": (bool, False, "add the popularity-bin distance inside the fairness loss"),
    "rescale_low": (float, 1.0, "lower end of the similarity rescale range"),
    "rescale_high": (float, 10.0, "upper end of the similarity rescale range"),
    "pool_size": (int, 64, "tracks per fairness candidate pool"),
    "weighting": (str, "delta_ndcg", "fairness pair weights: delta_ndcg | uniform"),
    # synthetic data
    "playlists": (int, 50, "synth: number of playlists"),
    "tracks": (int, 300, "synth: number of tracks"),
    "artists": (int, 60, "synth: number of artists"),
    "skew": (float, 1.0, "synth: power-law popularity exponent"),
    "clusters": (int, 6, "synth: number of genre/sonic clusters"),
    # analyses
    "n_top": (int, 20, "cf-sim: popular tracks duplicated"),
    "artist_n": (int, 100, "artist-sim: neighbours per top-bin artist"),
    "gammas": (str, "0,0.5,1,2,4", "sweep: comma-separated gamma grid"),
    "threads": (int, 0, "cap on BLAS worker threads; 0 leaves the library default"),
}


class UsageError(RedboostError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _coerce(key: str, raw):
    typ = CONFIG_KEYS[key][0]
    if not isinstance(raw, str):
        return typ(raw)
    try:
        if typ is bool:
            return _parse_bool(raw)
        return typ(raw.strip())
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {typ.__name__}") from None


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment, blank lines are skipped."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        out[key] = _coerce(key, value)
    return out


def resolve_config(file_values: dict, flag_values: dict) -> dict:
    cfg = {k: spec[1] for k, spec in CONFIG_KEYS.items()}
    cfg.update(file_values)
    cfg.update({k: v for k, v in flag_values.items() if v is not None})
    return cfg


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    for key, (typ, default, text) in CONFIG_KEYS.items():
        flag = "--" + key.replace("_", "-")
        if typ is bool:
            common.add_argument(flag, dest=key, action=argparse.BooleanOptionalAction, default=None,
                                help=f"{text} (default {default})")
        else:
            common.add_argument(flag, dest=key, type=str, default=None, metavar=typ.__name__.upper(),
                                help=f"{text} (default {default!r})")
    parser = _Parser(prog="redboost", description="Popularity-fair track embeddings for playlist continuation.")
    parser.add_argument("--version", action="version", version=f"redboost {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "stats": "graph size summary",
        "synth": "write a synthetic dataset (interactions, features, splits)",
        "bins": "popularity bins and long-tail membership of every track",
        "train": "two-stage training; writes checkpoint, embeddings and log",
        "recommend": "top-k recommendations for held-out playlists",
        "evaluate": "metrics of a recommendation run",
        "cf-sim": "counterfactual duplicate centroid distances",
        "artist-sim": "mean popularity of the nearest artists of top-bin artists",
        "sweep": "stage-2 gamma sweep from a shared stage-1 state",
        "visibility": "share of recommended slots per popularity bin",
        "selftest": "gradient checks and built-in oracles",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name], description=helps[name])
    return parser


# --------------------------------------------------------------------------- helpers


def _limit_threads(n: int):
    if n <= 0:
        return None
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(n)
        return None
    return threadpool_limits(limits=n)


def _need(cfg: dict, *keys: str) -> None:
    missing = [k for k in keys if not cfg[k]]
    if missing:
        flags = ", ".join("--" + k.replace("_", "-") for k in missing)
        raise UsageError(f"missing required setting(s): {flags}")


def _which(cfg: dict) -> int:
    if cfg["eval_split"] not in ("valid", "test"):
        raise ConfigError("eval_split must be valid or test")
    return SPLIT_NAMES.index(cfg["eval_split"])


def _fractions(cfg):
    v, t = cfg["valid_fraction"], cfg["test_fraction"]
    return (1.0 - v - t, v, t)


def train_config(cfg: dict) -> TrainConfig:
    fair = FairnessConfig(
        gamma=cfg["gamma"], alpha=cfg["alpha"], k_fair=cfg["k_fair"], boost=cfg["boost"],
        rescale=(cfg["rescale_low"], cfg["rescale_high"]), pool_size=cfg["pool_size"],
        weighting=cfg["weighting"],
    )
    names = [f.name for f in dataclasses.fields(TrainConfig) if f.name != "fairness"]
    return TrainConfig(**{n: cfg[n] for n in names}, fairness=fair)


def load_dataset(cfg: dict) -> pipeline.Dataset:
    _need(cfg, "interactions", "features")
    g = load_interactions(cfg["interactions"])
    feats = load_features(g, cfg["features"], cfg["name_emb"] or None, cfg["image_emb"] or None)
    split = load_splits(g, cfg["splits"]) if cfg["splits"] else split_playlists(g, _fractions(cfg), cfg["split_seed"])
    return pipeline.prepare(g, feats, split, peek_k=cfg["peek_k"], lt_fraction=cfg["lt_fraction"])


def _emit(report: dict, cfg: dict, path: str | None = None) -> None:
    report = {**report, "config": cfg, "seed": cfg["seed"]}
    target = cfg["out"] if path is None else path
    if target:
        dump_json(report, target)
    else:
        sys.stdout.write(to_json(report))


def _emit_csv(cfg: dict, header: list[str], rows) -> None:
    """Plot data next to the JSON report (same path, ``.csv`` suffix); skipped for stdout."""
    if not cfg["out"]:
        return
    with atomic_writer(Path(cfg["out"]).with_suffix(".csv")) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# --------------------------------------------------------------------------- subcommands


def cmd_stats(cfg):
    _need(cfg, "interactions")
    g = load_interactions(cfg["interactions"])
    lengths = np.array([len(t) for t in g.playlist_tracks])
    degrees = np.array([len(p) for p in g.track_playlists])
    stats = g.stats()
    stats.update(
        mean_playlist_length=float(lengths.mean()) if len(lengths) else 0.0,
        max_track_degree=int(degrees.max()) if len(degrees) else 0,
    )
    _emit({"stats": stats}, cfg)


def cmd_synth(cfg):
    _need(cfg, "out")
    spec = SynthSpec(
        n_playlists=cfg["playlists"], n_tracks=cfg["tracks"], n_artists=cfg["artists"],
        skew=cfg["skew"], n_clusters=cfg["clusters"],
    )
    g, feats = generate_synthetic(spec, seed=cfg["seed"])
    out = Path(cfg["out"])
    write_interactions(g, out / "interactions.csv")
    write_features(g, feats, out / "features.csv")
    write_splits(g, split_playlists(g, _fractions(cfg), cfg["split_seed"]), out / "splits.csv")
    _emit({"stats": g.stats(), "synth": dataclasses.asdict(spec)}, cfg, str(out / "synth.json"))


def cmd_bins(cfg):
    _need(cfg, "interactions")
    g = load_interactions(cfg["interactions"])
    split = load_splits(g, cfg["splits"]) if cfg["splits"] else split_playlists(g, _fractions(cfg), cfg["split_seed"])
    index = popularity.popularity_index(g, split)
    lt = set(popularity.long_tail_set(index, cfg["lt_fraction"]).tolist())
    tracks = {
        g.track_names[t]: {"count": int(index.counts[t]), "bin": int(index.bins[t]), "long_tail": t in lt}
        for t in range(g.n_tracks)
    }
    raw = popularity.breakdown_report(index)
    breakdown = {str(b): v for b, v in raw.items()}
    cols = sorted(next(iter(raw.values())).keys()) if raw else []
    _emit_csv(cfg, ["bin", *cols], [[b, *(v[c] for c in cols)] for b, v in sorted(raw.items())])
    _emit({"breakdown": breakdown, "tracks": tracks}, cfg)


def cmd_train(cfg):
    _need(cfg, "out")
    ds = load_dataset(cfg)
    tcfg = train_config(cfg)
    out = Path(cfg["out"])
    trainer = Trainer(ds.graph, ds.features, ds.split, tcfg)
    result = trainer.fit(checkpoint_path=out / "checkpoint.json")
    save_checkpoint(result.params, tcfg, out / "checkpoint.json")
    write_dense(ds.graph.track_names, result.embeddings, out / "embeddings.csv")
    write_train_log(result.log, out / "train_log.csv")
    write_splits(ds.graph, ds.split, out / "splits.csv")
    final = result.log[-1] if result.log else None
    summary = {
        "epochs": len(result.log),
        "final_utility": final.utility if final else None,
        "final_fairness": final.fairness if final else None,
        "train_config": tcfg.to_dict(),
    }
    _emit(summary, cfg, str(out / "train.json"))


def _embeddings(cfg, ds) -> np.ndarray:
    _need(cfg, "embeddings")
    return load_dense(ds.graph, cfg["embeddings"])


def _recommend(cfg, ds) -> recommender.RecommendationRun:
    which, k = _which(cfg), cfg["k"]
    method = cfg["method"]
    if method == "model":
        run = pipeline.recommend(ds, _embeddings(cfg, ds), k, "model", which)
    elif method == "features":
        run = pipeline.recommend(ds, recommender.features_baseline(ds.features), k, "features", which)
    elif method == "mostpop":
        run = recommender.mostpop_baseline(ds.index, ds.peeks(which), k)
    else:
        raise ConfigError(f"unknown method {method!r}")
    return run


def cmd_recommend(cfg):
    # the boost setting only shapes the training loss; retrieval ignores it
    _need(cfg, "out")
    ds = load_dataset(cfg)
    recommender.write_run(_recommend(cfg, ds), ds.graph, cfg["out"])


def cmd_evaluate(cfg):
    _need(cfg, "run")
    ds = load_dataset(cfg)
    run = recommender.load_run(ds.graph, cfg["run"])
    report = pipeline.evaluate_run(ds, run, cfg["k"], which=_which(cfg))
    _emit({"metrics": report.metrics, "per_playlist": report.per_playlist, "playlists": report.playlists}, cfg)


def cmd_cf_sim(cfg):
    ds = load_dataset(cfg)
    base = train_config(cfg)
    gamma = cfg["gamma"] or 1.0
    methods = {
        "gamma0": dataclasses.replace(base, fairness=dataclasses.replace(base.fairness, gamma=0.0, boost=False)),
        "redress": dataclasses.replace(base, fairness=dataclasses.replace(base.fairness, gamma=gamma, boost=False)),
        "boost": dataclasses.replace(base, fairness=dataclasses.replace(base.fairness, gamma=gamma, boost=True)),
    }
    reports = pipeline.counterfactual_experiment(ds, methods, n_top=cfg["n_top"], seed=cfg["seed"])
    _emit_csv(
        cfg,
        ["method", "distance", "orientation", "og_x", "og_y", "cf_x", "cf_y"],
        [[r.method, repr(r.distance), r.orientation, *map(repr, r.og_centroid), *map(repr, r.cf_centroid)] for r in reports],
    )
    _emit({"centroids": [dataclasses.asdict(r) for r in reports]}, cfg)


def cmd_artist_sim(cfg):
    ds = load_dataset(cfg)
    Z = _embeddings(cfg, ds)
    value = experiments.artist_analysis(Z, ds.graph, ds.index.counts, cfg["artist_n"])
    _emit_csv(cfg, ["n", "mean_neighbor_popularity"], [[cfg["artist_n"], repr(value)]])
    _emit({"mean_neighbor_popularity": value}, cfg)


def _gamma_grid(text: str) -> list[float]:
    try:
        grid = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"gammas: cannot parse {text!r}") from None
    if not grid or any(g < 0 for g in grid):
        raise ConfigError("gammas must be a non-empty list of non-negative numbers")
    return grid


def cmd_sweep(cfg):
    ds = load_dataset(cfg)
    rows = pipeline.gamma_sweep(ds, train_config(cfg), _gamma_grid(cfg["gammas"]), cfg["k"], _which(cfg))
    cols = ["gamma", *evaluator.METRICS, "selection_score"]
    _emit_csv(cfg, cols, [[repr(float(r[c])) for c in cols] for r in rows])
    _emit({"rows": rows}, cfg)


def cmd_visibility(cfg):
    _need(cfg, "run")
    ds = load_dataset(cfg)
    run = recommender.load_run(ds.graph, cfg["run"])
    shares = experiments.visibility_by_bin(run, ds.index)
    _emit_csv(cfg, ["bin", "share"], [[b, repr(float(x))] for b, x in enumerate(shares)])
    _emit({"shares": {str(b): float(s) for b, s in enumerate(shares)}}, cfg)


def cmd_selftest(cfg):
    results = {}
    for boost in (False, True):
        errs = checks.gradient_errors(cfg["seed"], boost=boost)
        for name, err in errs.items():
            results[f"grad_{name}{'_boost' if boost else ''}"] = {"value": float(err), "pass": bool(err < 1e-5)}
    gap = checks.fairness_oracle_gap(seed=cfg["seed"])
    results["fairness_bruteforce"] = {"value": float(gap), "pass": bool(gap < 1e-9)}
    bad = checks.binning_mismatches(seed=cfg["seed"])
    results["binning_oracle"] = {"value": bad, "pass": bad == 0}
    sig = checks.sigmoid_identity_gap()
    results["pair_probability_symmetry"] = {"value": float(sig), "pass": bool(sig < 1e-12)}
    a = np.array([1.3, 2.1, 0.4, 3.3, 1.0, 2.2, 0.7, 1.9])
    b = np.array([0.9, 2.5, 0.1, 2.0, 1.4, 1.0, 0.2, 1.1])
    p_dp = evaluator.wilcoxon_signed_rank(a, b).p_value
    p_enum = evaluator.wilcoxon_enumerate(a, b)
    gap = abs(p_dp - p_enum)
    results["wilcoxon_exact"] = {"value": float(gap), "pass": bool(gap < 1e-12)}
    ok = all(r["pass"] for r in results.values())
    _emit({"checks": results, "passed": ok}, cfg)
    return 0 if ok else 2


HANDLERS = {
    "stats": cmd_stats, "synth": cmd_synth, "bins": cmd_bins, "train": cmd_train,
    "recommend": cmd_recommend, "evaluate": cmd_evaluate, "cf-sim": cmd_cf_sim,
    "artist-sim": cmd_artist_sim, "sweep": cmd_sweep, "visibility": cmd_visibility,
    "selftest": cmd_selftest,
}  # fmt: skip


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        flags = {k: _coerce(k, getattr(args, k)) for k in CONFIG_KEYS if getattr(args, k) is not None}
        cfg = resolve_config(read_config_file(args.config) if args.config else {}, flags)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (UsageError, ConfigError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc, UsageError):
            parser.print_usage(sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    limiter = _limit_threads(cfg["threads"])
    try:
        code = HANDLERS[args.command](cfg)
        return int(code or 0)
    except (UsageError, ConfigError, ParseError, ValidationError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # anything else is a runtime failure, not bad input
        logger.debug("unhandled error", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    finally:
        if limiter is not None:
            limiter.restore_original_limits()


if __name__ == "__main__":
    sys.exit(main())
