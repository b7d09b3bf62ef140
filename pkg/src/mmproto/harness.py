"""Training loop, evaluation, metric reports, and ablation sweeps.

Reproducibility contract: every random draw flows from
SeedSequence([seed, phase, index]) — phase 0 is parameter init, 1
training episodes, 2 test episodes, 3 the reference-prototype pass, 4
validation episodes. Two runs with the same (config, seed) therefore
produce bitwise-identical parameters and reports; wall-clock fields are
the only exception and are excluded from canonical serializations.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, replace
from itertools import product
from pathlib import Path
from typing import Optional

import numpy as np

from . import tensor as T
from .episodes import sample_episode
from .errors import (
    ConfigurationError,
    DivergenceError,
    NumericError,
    UsageError,
)
from .mpe import MPE_MODES, MpeConfig
from .pipeline import (
    Model,
    ModelConfig,
    ModelParams,
    episode_ce,
    episode_pride_loss,
    init_model,
    params_from_bytes,
    params_to_bytes,
    update_bank_from_episode,
)
from .pride import (
    TrainingPrideBank,
    combined_loss,
    pride_score,
    real_prototype_pass,
)
from .store import EmbeddingStore
from .tensor import Tensor

CONFIG_VERSION = 1
LOSS_MODES = ("ce_only", "ce_plus_pride")

PHASE_INIT = 0
PHASE_TRAIN = 1
PHASE_TEST = 2
PHASE_PRIDE = 3
PHASE_VAL = 4


def episode_rng(seed: int, phase: int, index: int = 0) -> np.random.Generator:
    """Independent generator for one episode of one phase."""
    return np.random.default_rng(np.random.SeedSequence([seed, phase, index]))


@dataclass
class TrainConfig:
    """Everything a run needs; serializable to versioned JSON."""

    store: str = ""
    train_split: str = "base"
    val_split: str = "val"
    eval_split: str = "novel"
    n_way: int = 5
    k_shot: int = 5
    m_queries: int = 5
    omegas: tuple[int, ...] = (2,)
    d_k: int = 32
    d_p: int = 64
    se_heads: int = 4
    mpe_mode: str = "weighted_average"
    lam: float = 0.5
    mpe_heads: int = 8
    tau: float = 0.1
    loss_mode: str = "ce_only"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    ema_decay: float = 0.99
    train_episodes: int = 500
    val_episodes: int = 0          # 0 disables validation-based selection
    val_every: int = 500
    test_episodes: int = 10000
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.omegas, list):
            self.omegas = tuple(self.omegas)
        if self.loss_mode not in LOSS_MODES:
            raise ConfigurationError(
                f"loss_mode {self.loss_mode!r} not in {LOSS_MODES}")
        if self.mpe_mode not in MPE_MODES:
            raise ConfigurationError(
                f"mpe_mode {self.mpe_mode!r} not in {MPE_MODES}")
        for name in ("n_way", "k_shot", "m_queries", "d_k", "d_p", "se_heads",
                     "mpe_heads", "val_every"):
            if getattr(self, name) < 1:
                raise ConfigurationError(
                    f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("train_episodes", "val_episodes", "test_episodes"):
            if getattr(self, name) < 0:
                raise ConfigurationError(
                    f"{name} must be >= 0, got {getattr(self, name)}")
        if self.lr <= 0:
            raise ConfigurationError(f"lr must be > 0, got {self.lr}")
        for name in ("beta1", "beta2", "ema_decay"):
            if not (0.0 <= getattr(self, name) < 1.0):
                raise ConfigurationError(
                    f"{name} must be in [0, 1), got {getattr(self, name)}")
        if not (0.0 <= self.lam <= 1.0):
            raise ConfigurationError(f"lam must be in [0, 1], got {self.lam}")
        if self.tau <= 0:
            raise ConfigurationError(f"tau must be > 0, got {self.tau}")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            omegas=self.omegas,
            d_k=self.d_k,
            d_p=self.d_p,
            se_heads=self.se_heads,
            mpe=MpeConfig(mode=self.mpe_mode, lam=self.lam,
                          heads=self.mpe_heads),
            tau=self.tau,
        )

    def to_json_dict(self) -> dict:
        obj = {"config_version": CONFIG_VERSION}
        for key, value in self.__dict__.items():
            obj[key] = list(value) if isinstance(value, tuple) else value
        return obj

    @classmethod
    def from_json_dict(cls, obj: dict) -> "TrainConfig":
        obj = dict(obj)
        version = obj.pop("config_version", None)
        if version != CONFIG_VERSION:
            raise ConfigurationError(
                f"unsupported config_version {version!r}")
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ConfigurationError(f"unknown config fields: {sorted(unknown)}")
        return cls(**obj)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n",
            encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(obj, dict):
            raise ConfigurationError("config root must be a JSON object")
        return cls.from_json_dict(obj)


class Adam:
    """Adaptive-moment gradient descent over a fixed tensor list.

    Per-parameter step counts: a tensor that received no gradient this
    episode is skipped entirely (its moments and bias correction stay
    put), so unused parameter groups never drift.
    """

    def __init__(self, tensors: list[Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.tensors = tensors
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m = [np.zeros_like(p.data) for p in tensors]
        self._v = [np.zeros_like(p.data) for p in tensors]
        self._t = [0] * len(tensors)

    def step(self) -> None:
        for i, p in enumerate(self.tensors):
            if p.grad is None:
                continue
            g = p.grad
            self._t[i] += 1
            t = self._t[i]
            self._m[i] = self.beta1 * self._m[i] + (1.0 - self.beta1) * g
            self._v[i] = self.beta2 * self._v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self._m[i] / (1.0 - self.beta1 ** t)
            v_hat = self._v[i] / (1.0 - self.beta2 ** t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class _FrozenParams:
    """Temporarily drop requires_grad so evaluation skips tape building."""

    def __init__(self, params: ModelParams):
        self._tensors = params.tensors()

    def __enter__(self):
        for t in self._tensors:
            t.requires_grad = False
        return self

    def __exit__(self, *exc):
        for t in self._tensors:
            t.requires_grad = True
        return False


@dataclass
class TrainResult:
    params: ModelParams
    model: Model
    loss_curve: list[tuple[int, float]]
    val_history: list[tuple[int, float]]
    selected: str                  # "final" or "val@<episode>"


def train(store: EmbeddingStore, config: TrainConfig) -> TrainResult:
    """Episodic training; deterministic given (config, seed).

    Zero train_episodes returns the freshly initialized parameters. A
    non-finite loss or any non-finite intermediate aborts with a
    divergence error naming the episode.
    """
    model_config = config.model_config()
    params = init_model(config.seed, store.manifest.dim, model_config)
    model = Model(store, model_config, params)
    tensors = params.tensors()
    optimizer = Adam(tensors, lr=config.lr, beta1=config.beta1,
                     beta2=config.beta2, eps=config.adam_eps)
    use_pride = config.loss_mode == "ce_plus_pride"
    bank = (TrainingPrideBank(len(store.manifest.classes), config.d_p,
                              config.ema_decay) if use_pride else None)
    loss_curve: list[tuple[int, float]] = []
    val_history: list[tuple[int, float]] = []
    best_val = -1.0
    best_bytes: Optional[bytes] = None
    best_at = -1

    for index in range(config.train_episodes):
        rng = episode_rng(config.seed, PHASE_TRAIN, index)
        episode = sample_episode(store, config.train_split, config.n_way,
                                 config.k_shot, config.m_queries, rng)
        try:
            forward = model.forward_episode(episode)
            ce = episode_ce(forward.logits, episode.query_labels)
            if use_pride:
                prototypes = model.query_true_prototypes(forward, episode)
                update_bank_from_episode(bank, episode, prototypes)
                order, matrix = bank.snapshot(dtype=prototypes.dtype)
                positions = np.array(
                    [order.index(episode.class_indices[slot])
                     for slot in episode.query_labels])
                pride_term = episode_pride_loss(prototypes, positions,
                                                Tensor(matrix), config.tau)
                loss = combined_loss(ce, pride_term, params.mix)
            else:
                loss = ce
            if not np.isfinite(loss.data).all():
                raise DivergenceError(
                    f"non-finite loss at training episode {index}")
            T.zero_grads(tensors)
            T.backward(loss)
            optimizer.step()
        except NumericError as exc:
            raise DivergenceError(
                f"training diverged at episode {index}: {exc}") from exc
        loss_curve.append((index, float(loss.data)))

        if (config.val_episodes > 0
                and (index + 1) % config.val_every == 0):
            report = evaluate(model, config, split=config.val_split,
                              n_episodes=config.val_episodes, phase=PHASE_VAL)
            val_history.append((index + 1, report.accuracy))
            if report.accuracy > best_val:
                best_val = report.accuracy
                best_bytes = params_to_bytes(params)
                best_at = index + 1

    selected = "final"
    if best_bytes is not None:
        params_from_bytes(params, best_bytes)
        selected = f"val@{best_at}"
    return TrainResult(params=params, model=model, loss_curve=loss_curve,
                       val_history=val_history, selected=selected)


@dataclass
class EvalReport:
    accuracy: float
    ci95: float
    n_episodes: int
    n_queries: int
    per_class: dict[str, float]
    mean_pride: Optional[float]
    config: dict
    wall_clock_s: float

    def to_json_dict(self, include_wall_clock: bool = True) -> dict:
        obj = {
            "accuracy": self.accuracy,
            "ci95": self.ci95,
            "n_episodes": self.n_episodes,
            "n_queries": self.n_queries,
            "per_class": dict(sorted(self.per_class.items())),
            "mean_pride": self.mean_pride,
            "config": self.config,
        }
        if include_wall_clock:
            obj["wall_clock_s"] = self.wall_clock_s
        return obj

    def canonical_json(self, include_wall_clock: bool = False) -> str:
        """Byte-stable serialization; wall clock excluded by default so
        determinism checks compare apples to apples."""
        return json.dumps(self.to_json_dict(include_wall_clock),
                          sort_keys=True, indent=2) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.canonical_json(include_wall_clock=True),
                              encoding="utf-8")


def evaluate(model: Model, config: TrainConfig, split: Optional[str] = None,
             n_episodes: Optional[int] = None, phase: int = PHASE_TEST,
             with_pride: bool = False) -> EvalReport:
    """Accuracy over freshly sampled episodes of a split.

    Argmax ties break toward the lowest class slot. accuracy is the mean
    of per-episode accuracies (episodes are balanced, so this equals the
    overall query fraction); ci95 is the normal-approximation half-width
    over episodes.
    """
    split = config.eval_split if split is None else split
    n_episodes = config.test_episodes if n_episodes is None else n_episodes
    if n_episodes < 1:
        raise UsageError(f"evaluation needs >= 1 episode, got {n_episodes}")
    started = time.monotonic()
    episode_accs = np.empty(n_episodes, dtype=np.float64)
    class_correct: dict[int, int] = {}
    class_total: dict[int, int] = {}
    n_queries = 0
    with _FrozenParams(model.params):
        for index in range(n_episodes):
            rng = episode_rng(config.seed, phase, index)
            episode = sample_episode(model.store, split, config.n_way,
                                     config.k_shot, config.m_queries, rng)
            forward = model.forward_episode(episode)
            predictions = np.argmax(forward.logits.data, axis=1)
            labels = episode.query_labels
            hits = predictions == labels
            episode_accs[index] = hits.mean()
            n_queries += hits.size
            for slot, hit in zip(labels, hits):
                ci = episode.class_indices[slot]
                class_total[ci] = class_total.get(ci, 0) + 1
                class_correct[ci] = class_correct.get(ci, 0) + int(hit)
    accuracy = float(episode_accs.mean())
    if n_episodes > 1:
        ci95 = float(1.96 * episode_accs.std(ddof=1) / np.sqrt(n_episodes))
    else:
        ci95 = 0.0
    per_class = {model.store.manifest.classes[ci]:
                 class_correct[ci] / class_total[ci]
                 for ci in sorted(class_total)}
    mean_pride = None
    if with_pride:
        mean_pride = pride_report(model, config, split=split).overall_mean
    return EvalReport(
        accuracy=accuracy,
        ci95=ci95,
        n_episodes=n_episodes,
        n_queries=n_queries,
        per_class=per_class,
        mean_pride=mean_pride,
        config=config.to_json_dict(),
        wall_clock_s=time.monotonic() - started,
    )


@dataclass
class PrideReportResult:
    rows: list[tuple[str, float, int]]     # (class_name, mean_pride, n_videos)
    overall_mean: float
    per_video: dict[str, float]
    config: dict

    def save_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["class_name", "mean_pride", "n_videos"])
            for name, mean_val, count in self.rows:
                writer.writerow([name, repr(mean_val), count])


def pride_report(model: Model, config: TrainConfig,
                 split: Optional[str] = None) -> PrideReportResult:
    """Score every video of a split against the reference prototype bank."""
    split = config.eval_split if split is None else split
    class_indices = model.store.split_class_indices(split)
    if len(class_indices) < 2:
        raise ConfigurationError(
            f"the metric needs >= 2 classes in split {split!r}, "
            f"found {len(class_indices)}")
    rng = episode_rng(config.seed, PHASE_PRIDE, 0)
    with _FrozenParams(model.params):
        bank, per_video_protos, labels = real_prototype_pass(
            model.store, split, model, config.k_shot, rng)
    per_video: dict[str, float] = {}
    by_class: dict[int, list[float]] = {ci: [] for ci in bank.class_indices}
    for vid, proto in per_video_protos.items():
        score = pride_score(proto, labels[vid], bank)
        per_video[vid] = score
        by_class[labels[vid]].append(score)
    rows = [(model.store.manifest.classes[ci],
             float(np.mean(by_class[ci])), len(by_class[ci]))
            for ci in bank.class_indices]
    overall = float(np.mean(list(per_video.values())))
    return PrideReportResult(rows=rows, overall_mean=overall,
                             per_video=per_video,
                             config=config.to_json_dict())


@dataclass
class SweepRow:
    mode: str
    lam: float
    heads: int
    accuracy: float
    ci95: float
    cumulative_seconds: float


def sweep(store: EmbeddingStore, config: TrainConfig, modes: list[str],
          lams: list[float], heads_list: list[int]) -> list[SweepRow]:
    """Train+evaluate once per (mode, lam, heads) grid point, shared seed."""
    if not modes or not lams or not heads_list:
        raise ConfigurationError("sweep grid must be non-empty on every axis")
    started = time.monotonic()
    rows: list[SweepRow] = []
    for mode, lam, heads in product(modes, lams, heads_list):
        point = replace(config, mpe_mode=mode, lam=lam, mpe_heads=heads)
        result = train(store, point)
        report = evaluate(result.model, point, split=point.eval_split,
                          n_episodes=point.test_episodes, phase=PHASE_TEST)
        rows.append(SweepRow(
            mode=mode, lam=lam, heads=heads,
            accuracy=report.accuracy, ci95=report.ci95,
            cumulative_seconds=time.monotonic() - started,
        ))
    return rows


def write_sweep_csv(rows: list[SweepRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "lam", "heads", "accuracy", "ci95",
                         "cumulative_seconds"])
        for row in rows:
            writer.writerow([row.mode, repr(row.lam), row.heads,
                             repr(row.accuracy), repr(row.ci95),
                             repr(row.cumulative_seconds)])


def write_loss_curve_csv(curve: list[tuple[int, float]],
                         path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "loss"])
        for index, value in curve:
            writer.writerow([index, repr(value)])


def write_meta(path: str | Path, config: TrainConfig, **extra) -> None:
    """Sidecar JSON recording the exact config (and seed) of an artifact."""
    obj = {"config": config.to_json_dict()}
    obj.update(extra)
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n",
                          encoding="utf-8")
