"""Two-stage training: focal utility loss, then utility + gamma * fairness."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import encoder, objective, sampler
from .data_store import InteractionGraph, SplitAssignment, TrackFeatureTable
from .errors import CheckpointError, ConfigError, TrainingDiverged
from .io_utils import atomic_writer
from .objective import FairnessConfig
from .popularity import popularity_index

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "redboost-encoder"
CHECKPOINT_VERSION = 1

STREAM_POSITIVES, STREAM_NEGATIVES, STREAM_FAIRNESS = 0, 1, 2


@dataclass(frozen=True)
class TrainConfig:
    stage1_epochs: int = 20
    stage2_epochs: int = 20
    batch_size: int = 64
    steps_per_epoch: int = 0  # 0: train edges // batch_size
    lr: float = 0.003
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # stage-1 Adam moments are scaled to the small focal gradients; carrying them
    # into a gamma > 0 stage 2 inflates the first fairness steps
    stage2_reset_optimizer: bool = True
    seed: int = 0
    hidden_dim: int = 64
    out_dim: int = 64
    walks: int = 200
    walk_len: int = 2
    neighbors: int = 20
    focal_gamma: float = 2.0
    focal_alpha: float = 0.5
    fair_anchors: int = 16
    use_name_emb: bool = False
    use_image_emb: bool = False
    fairness: FairnessConfig = field(default_factory=FairnessConfig)

    def __post_init__(self):
        if self.stage1_epochs < 0 or self.stage2_epochs < 0:
            raise ConfigError("epoch counts must be >= 0")
        if self.lr <= 0:
            raise ConfigError("learning rate must be > 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size < 1 or self.fair_anchors < 1:
            raise ConfigError("batch_size and fair_anchors must be >= 1")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["fairness"]["rescale"] = list(self.fairness.rescale)
        return d


@dataclass
class EpochLog:
    epoch: int
    stage: int
    utility: float
    fairness: float
    total: float
    seconds: float


class Optimizer:
    """Plain SGD or Adam over the encoder's parameter arrays, updated in place."""

    def __init__(self, params: encoder.EncoderParams, cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.arrays().items()}
        self.v = {k: np.zeros_like(v) for k, v in params.arrays().items()}

    def step(self, params: encoder.EncoderParams, grads: dict[str, np.ndarray]) -> None:
        cfg = self.cfg
        self.t += 1
        for name in encoder.PARAM_NAMES:
            p, g = getattr(params, name), grads[name]
            if cfg.optimizer == "sgd":
                p -= cfg.lr * g
                continue
            m, v = self.m[name], self.v[name]
            m *= cfg.beta1
            m += (1 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1 - cfg.beta2) * g * g
            m_hat = m / (1 - cfg.beta1**self.t)
            v_hat = v / (1 - cfg.beta2**self.t)
            p -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        params.touch()

    def copy(self) -> "Optimizer":
        other = Optimizer.__new__(Optimizer)
        other.cfg, other.t = self.cfg, self.t
        other.m = {k: v.copy() for k, v in self.m.items()}
        other.v = {k: v.copy() for k, v in self.v.items()}
        return other


class Trainer:
    """Holds the train-only graph view, sampled neighbourhoods and optimiser state.

    Sampling streams are keyed by ``(seed, epoch, step)`` with a global
    epoch counter, so a stage-2 run at gamma 0 replays stage-1 training.
    """

    def __init__(
        self,
        g: InteractionGraph,
        features: TrackFeatureTable,
        split: SplitAssignment,
        cfg: TrainConfig,
        params: encoder.EncoderParams | None = None,
    ):
        self.cfg = cfg
        self.g = g
        self.train_graph = g.subgraph(split.train)
        self.X = encoder.build_input_features(features, cfg.use_name_emb, cfg.use_image_emb)
        self.sonic = features.sonic_scaled()
        self.bins = popularity_index(g, split).bins
        self.neighbors = sampler.build_neighbor_table(
            self.train_graph, cfg.walks, cfg.walk_len, cfg.neighbors, cfg.seed
        )
        self.params = params or encoder.init_params(self.X.shape[1], cfg.hidden_dim, cfg.out_dim, cfg.seed)
        self.optimizer = Optimizer(self.params, cfg)
        self.epoch = 0
        self.log: list[EpochLog] = []
        self._cooc: dict[int, np.ndarray] = {}
        n_edges = self.train_graph.n_edges
        self.steps_per_epoch = cfg.steps_per_epoch or max(1, n_edges // cfg.batch_size)

    # ------------------------------------------------------------------ sampling

    def _negatives(self, anchors: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        # rejection sampling: uniform over tracks not co-occurring with the anchor
        n_t = self.g.n_tracks
        out = np.empty(len(anchors), dtype=np.int64)
        for r, a in enumerate(anchors):
            a = int(a)
            if a not in self._cooc:
                self._cooc[a] = sampler.cooccurring(self.train_graph, a)
            cooc = self._cooc[a]
            for _ in range(64):
                c = int(rng.integers(n_t))
                if c != a and not _contains(cooc, c):
                    out[r] = c
                    break
            else:
                cand = sampler.negative_candidates(self.train_graph, a)
                if len(cand) == 0:
                    raise ConfigError(f"track {a} has no negative candidates")
                out[r] = cand[rng.integers(len(cand))]
        return out

    def _step_rng(self, stream: int, step: int) -> np.random.Generator:
        return np.random.default_rng([self.cfg.seed, self.epoch, step, stream])

    # ------------------------------------------------------------------ training

    def step(self, step: int, gamma: float) -> tuple[float, float, float]:
        cfg = self.cfg
        pos_seed = int(self._step_rng(STREAM_POSITIVES, step).integers(2**62))
        pos = sampler.sample_positive_pairs(self.train_graph, cfg.batch_size, pos_seed)
        neg = np.column_stack([pos[:, 0], self._negatives(pos[:, 0], self._step_rng(STREAM_NEGATIVES, step))])
        batch_tracks = np.unique(np.concatenate([pos.ravel(), neg.ravel()]))

        pool = anchors = None
        if gamma > 0:
            rng = self._step_rng(STREAM_FAIRNESS, step)
            n_anchor = min(cfg.fair_anchors, len(batch_tracks), cfg.fairness.pool_size)
            anchors = np.sort(rng.choice(batch_tracks, size=n_anchor, replace=False))
            pool_size = min(cfg.fairness.pool_size, self.g.n_tracks)
            anchors, pool = sampler.sample_fairness_batch(
                self.g.n_tracks, anchors, pool_size, int(rng.integers(2**62))
            )
            subset = np.union1d(batch_tracks, pool)
        else:
            subset = batch_tracks

        Z, cache = encoder.forward(self.params, self.X, self.neighbors, subset)
        u_loss, gZ = objective.utility_loss(
            Z, np.searchsorted(subset, pos), np.searchsorted(subset, neg), cfg.focal_gamma, cfg.focal_alpha
        )
        f_loss = 0.0
        if gamma > 0:
            pool_local = np.searchsorted(subset, pool)
            S_G = objective.apriori_similarity(pool, self.sonic)
            f_loss, g_pool, _ = objective.fairness_loss(
                Z[pool_local],
                S_G,
                np.searchsorted(pool, anchors),
                cfg.fairness,
                bins=self.bins[pool],
                reduction="mean",
            )
            gZ[pool_local] += gamma * g_pool
        total = u_loss + gamma * f_loss
        if not math.isfinite(total):
            return u_loss, f_loss, total
        grads = encoder.backward(self.params, cache, gZ)
        self.optimizer.step(self.params, grads)
        return u_loss, f_loss, total

    def run_epochs(self, n: int, stage: int, gamma: float, checkpoint_path=None) -> list[EpochLog]:
        out = []
        for _ in range(n):
            start = time.perf_counter()
            last_good = self.params.copy()
            sums = np.zeros(3)
            for s in range(self.steps_per_epoch):
                u, f, tot = self.step(s, gamma)
                if not math.isfinite(tot):
                    if checkpoint_path:
                        save_checkpoint(last_good, self.cfg, checkpoint_path)
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {self.epoch}, step {s}", params=last_good, epoch=self.epoch
                    )
                sums += (u, f, tot)
            means = sums / self.steps_per_epoch
            entry = EpochLog(self.epoch, stage, *map(float, means), time.perf_counter() - start)
            logger.info("epoch %d stage %d utility %.5f fairness %.5f", entry.epoch, stage, entry.utility, entry.fairness)
            self.log.append(entry)
            out.append(entry)
            self.epoch += 1
        return out

    def begin_stage2(self, gamma: float) -> None:
        """Reset the optimiser if stage 2 changes the objective; at gamma 0 training just continues."""
        if gamma > 0 and self.cfg.stage2_reset_optimizer:
            self.optimizer = Optimizer(self.params, self.cfg)

    def fit(self, checkpoint_path=None) -> "TrainResult":
        gamma = self.cfg.fairness.gamma
        self.run_epochs(self.cfg.stage1_epochs, 1, 0.0, checkpoint_path)
        self.begin_stage2(gamma)
        self.run_epochs(self.cfg.stage2_epochs, 2, gamma, checkpoint_path)
        return self.result()

    def result(self) -> "TrainResult":
        Z = encoder.embed_all(self.params, self.X, self.neighbors)
        return TrainResult(params=self.params, embeddings=Z, log=list(self.log))

    def fork(self, cfg: TrainConfig | None = None) -> "Trainer":
        """Independent copy sharing the immutable data, e.g. to branch stage 2 per gamma."""
        other = Trainer.__new__(Trainer)
        other.__dict__.update(self.__dict__)
        other.cfg = cfg or self.cfg
        other.params = self.params.copy()
        other.optimizer = self.optimizer.copy()
        other.optimizer.cfg = other.cfg
        other.log = list(self.log)
        other._cooc = self._cooc
        return other


def _contains(sorted_arr: np.ndarray, x: int) -> bool:
    i = np.searchsorted(sorted_arr, x)
    return bool(i < len(sorted_arr) and sorted_arr[i] == x)


@dataclass
class TrainResult:
    params: encoder.EncoderParams
    embeddings: np.ndarray
    log: list[EpochLog]


def train(g, features, split, cfg: TrainConfig, checkpoint_path=None) -> TrainResult:
    return Trainer(g, features, split, cfg).fit(checkpoint_path)


def write_train_log(log: list[EpochLog], path) -> None:
    with atomic_writer(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "stage", "utility", "fairness", "total", "seconds"])
        for e in log:
            w.writerow([e.epoch, e.stage, repr(e.utility), repr(e.fairness), repr(e.total), f"{e.seconds:.4f}"])


# --------------------------------------------------------------------------- checkpoints


def checkpoint_json(params: encoder.EncoderParams, cfg: TrainConfig | None) -> str:
    d_x, h, d = params.dims
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dims": {"input": d_x, "hidden": h, "output": d},
        "seed": cfg.seed if cfg else None,
        "config": cfg.to_dict() if cfg else None,
        "weights": {
            k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()} for k, v in params.arrays().items()
        },
    }
    return json.dumps(doc, sort_keys=True) + "\n"


def save_checkpoint(params: encoder.EncoderParams, cfg: TrainConfig | None, path) -> None:
    with atomic_writer(path) as fh:
        fh.write(checkpoint_json(params, cfg))


def load_checkpoint(path) -> encoder.EncoderParams:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not an encoder checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {doc.get('version')} != {CHECKPOINT_VERSION}")
    try:
        arrays = {
            k: np.asarray(doc["weights"][k]["data"], dtype=np.float64).reshape(doc["weights"][k]["shape"])
            for k in encoder.PARAM_NAMES
        }
    except (KeyError, ValueError, TypeError) as exc:
        raise CheckpointError(f"{path}: malformed weights ({exc})") from None
    params = encoder.EncoderParams(**arrays)
    try:
        params.validate()
    except Exception as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    return params
