"""Mini-batch Adam training with L2 regularization and early stopping."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .calendars import WINDOW_ANCHORS, CropKind
from .errors import ConfigError, DomainError, NumericError, TrainingError, YieldcastError
from .features import GddConfig
from .nn import (Network, NetworkArch, backward, forward, init_params, is_weight, mse_and_grad,
                 predict)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    batch_size: int = 280
    max_epochs: int = 500
    patience: int = 50
    l2_lambda: float = 1e-5
    noise_sigma: float = 0.3
    seed: int = 0
    loss: str = "mse"

    def __post_init__(self):
        for name in ("learning_rate", "adam_epsilon", "batch_size", "max_epochs", "patience"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("beta1", "beta2"):
            if not 0 <= getattr(self, name) < 1:
                raise ConfigError(f"{name} must lie in [0, 1)")
        if self.l2_lambda < 0 or self.noise_sigma < 0:
            raise ConfigError("l2_lambda and noise_sigma must be >= 0")
        if self.patience > self.max_epochs:
            raise ConfigError("patience must not exceed max_epochs")
        if self.loss != "mse":
            raise ConfigError(f"unsupported loss {self.loss!r}")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


ARCH_KEYS = ("lstm_sizes", "static_sizes", "head_sizes")


def parse_config_text(text: str, source: str = "<config>") -> tuple[TrainConfig, dict]:
    """Parse ``key = value`` lines into a TrainConfig plus extra job settings.

    Besides TrainConfig fields, ``lstm_sizes``/``static_sizes``/``head_sizes``
    (comma-separated ints), ``window_anchor``, ``gdd_base_<crop>`` and
    ``gdd_cap`` are accepted and returned in the second element.
    """
    types = {f.name: f.type for f in fields(TrainConfig)}
    values, extras = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if key in types:
                kind = types[key]
                values[key] = int(value) if kind == "int" else value if kind == "str" else float(value)
            elif key in ARCH_KEYS:
                extras[key] = tuple(int(v) for v in value.split(",") if v.strip())
            elif key == "window_anchor":
                if value not in WINDOW_ANCHORS:
                    raise ConfigError(f"{source}:{lineno}: window_anchor must be one of "
                                      f"{', '.join(WINDOW_ANCHORS)}")
                extras[key] = value
            elif key.startswith("gdd_base_"):
                try:
                    crop = CropKind.parse(key[len("gdd_base_"):])
                except YieldcastError:
                    raise ConfigError(f"{source}:{lineno}: unknown crop in {key!r}") from None
                extras.setdefault("gdd_base", {})[crop] = float(value)
            elif key == "gdd_cap":
                extras[key] = float(value)
            else:
                raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        except ValueError:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {value!r}") from None
    return TrainConfig(**values), extras


def load_train_config(path) -> tuple[TrainConfig, dict]:
    return parse_config_text(Path(path).read_text(encoding="utf-8"), str(path))


def gdd_from_extras(extras: dict):
    """GddConfig with any ``gdd_base``/``gdd_cap`` overrides from a config file."""
    base = dict(GddConfig().base)
    base.update(extras.get("gdd_base", {}))
    try:
        return GddConfig(base, extras.get("gdd_cap"))
    except DomainError as exc:
        raise ConfigError(str(exc)) from None


def loss_mse(pred, target) -> float:
    """Squared error for scalars; mean squared error for batches."""
    diff = np.asarray(pred, dtype=float) - np.asarray(target, dtype=float)
    return float(np.mean(diff * diff))


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict, grads: dict, state: AdamState, cfg: TrainConfig):
    """Apply one Adam update in place; L2 decay is added to weight gradients only."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in {name}")
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, theta in params.items():
        g = grads[name]
        if cfg.l2_lambda and is_weight(name):
            g = g + cfg.l2_lambda * theta
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        theta -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.adam_epsilon)
    return params, state


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1
    stop_epoch: int = -1
    stop_reason: str = ""

    @property
    def best_val_loss(self) -> float:
        return self.val_loss[self.best_epoch] if self.best_epoch >= 0 else math.inf

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss"]
        lines += [f"{e},{tr!r},{va!r}" for e, (tr, va) in
                  enumerate(zip(self.train_loss, self.val_loss))]
        return "\n".join(lines) + "\n"


def evaluate_loss(net: Network, dynamic, static, target, batch_size: int = 1024) -> float:
    """Eval-mode MSE over a whole set, independent of how it is batched."""
    mode = net.mode
    net.eval()
    try:
        sq = 0.0
        for start in range(0, len(target), batch_size):
            sl = slice(start, start + batch_size)
            pred, _ = forward(net, dynamic[sl], static[sl])
            sq += float(np.sum((pred - target[sl]) ** 2))
        return sq / len(target)
    finally:
        net.mode = mode


def fit_network(train_arrays, val_arrays, arch: NetworkArch, cfg: TrainConfig,
                seed: Optional[int] = None, progress=None) -> tuple[Network, TrainHistory]:
    """Train on normalized ``(dynamic, static, target)`` arrays.

    ``cfg.noise_sigma`` overrides ``arch.noise_sigma``. Returns the network
    restored to its best-validation epoch.
    """
    seed = cfg.seed if seed is None else seed
    Xd, Xs, y = (np.asarray(a, dtype=float) for a in train_arrays)
    Vd, Vs, vy = (np.asarray(a, dtype=float) for a in val_arrays)
    if len(y) == 0 or len(vy) == 0:
        raise TrainingError("training and validation sets must be non-empty")
    arch = replace(arch, noise_sigma=cfg.noise_sigma)
    net = init_params(arch, seed)
    shuffle_rng, noise_rng = (np.random.default_rng(s)
                              for s in np.random.SeedSequence(seed).spawn(2))
    state = AdamState.zeros_like(net.params)
    history = TrainHistory()
    best_params = {k: v.copy() for k, v in net.params.items()}
    n = len(y)

    for epoch in range(cfg.max_epochs):
        net.train()
        order = shuffle_rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            pred, cache = forward(net, Xd[idx], Xs[idx], noise_rng)
            _, dpred = mse_and_grad(pred, y[idx])
            grads = backward(net, cache, dpred)
            try:
                adam_step(net.params, grads, state, cfg)
            except NumericError as exc:
                history.stop_epoch, history.stop_reason = epoch, "diverged"
                raise TrainingError(str(exc), history) from exc
            net.touch()
        tr = evaluate_loss(net, Xd, Xs, y)
        va = evaluate_loss(net, Vd, Vs, vy)
        history.train_loss.append(tr)
        history.val_loss.append(va)
        if not (math.isfinite(tr) and math.isfinite(va)):
            history.stop_epoch, history.stop_reason = epoch, "diverged"
            raise TrainingError(f"non-finite loss at epoch {epoch}", history)
        if va < history.best_val_loss:
            history.best_epoch = epoch
            best_params = {k: v.copy() for k, v in net.params.items()}
        if progress is not None:
            progress(epoch, tr, va)
        if epoch - history.best_epoch >= cfg.patience:
            history.stop_epoch, history.stop_reason = epoch, "early_stopping"
            break
    else:
        history.stop_epoch, history.stop_reason = cfg.max_epochs - 1, "max_epochs"

    log.debug("seed %s stopped at epoch %d (%s), best %d val %.6g", seed, history.stop_epoch,
              history.stop_reason, history.best_epoch, history.best_val_loss)
    best = Network(arch, best_params)
    return best, history


def train(dataset, arch: NetworkArch, cfg: TrainConfig, seed: Optional[int] = None,
          progress=None) -> tuple[Network, TrainHistory]:
    """Train on a :class:`~yieldcast.dataset.SplitDataset` using its scaler."""
    return fit_network(dataset.arrays("train"), dataset.arrays("validation"), arch, cfg,
                       seed=seed, progress=progress)


def predict_kg_ha(net: Network, scaler, dynamic, static) -> np.ndarray:
    """De-normalized predictions for raw (unscaled) feature arrays."""
    pred = predict(net, scaler.transform_dynamic(dynamic), scaler.transform_static(static))
    return scaler.inverse_target(pred)


def jittered_loss(net: Network, dynamic, static, target, sigma: float, seed: int) -> float:
    """Eval-mode MSE after adding N(0, sigma^2) jitter to normalized dynamic inputs."""
    rng = np.random.default_rng(seed)
    noisy = dynamic + rng.normal(0.0, sigma, size=dynamic.shape)
    return evaluate_loss(net, noisy, static, target)


def run_experiment(dataset, arch: NetworkArch, cfg: TrainConfig, runs: int = 30,
                   test_jitter: Optional[float] = None, on_run=None, label: str = ""):
    """Train ``runs`` models with seeds ``cfg.seed + k`` and score each on the test split.

    ``on_run(k, seed, net, history, result)`` is called after every
    completed run. With ``test_jitter`` the report's ``extra`` also records
    each run's clean and jittered normalized test loss.
    """
    from .metrics import EvalResult, RunReport, config_fingerprint

    if runs < 1:
        raise ConfigError("runs must be >= 1")
    if not dataset.test:
        raise ConfigError(f"no test samples for year {dataset.test_year}")
    td, ts, ty = dataset.arrays("test")
    _, _, actual = dataset.arrays("test", normalized=False)
    report = RunReport([], [], config_fingerprint(cfg.to_dict(), arch.to_dict()), label)
    clean_losses, jitter_losses = [], []
    for k in range(runs):
        seed = cfg.seed + k
        report.seeds.append(seed)
        try:
            net, history = train(dataset, arch, cfg, seed=seed)
            pred = dataset.scaler.inverse_target(predict(net, td, ts))
            result = EvalResult.compute(pred, actual)
        except YieldcastError as exc:
            log.warning("run %d (seed %d) failed: %s", k, seed, exc)
            report.runs.append(None)
            report.errors[seed] = str(exc)
            continue
        report.runs.append(result)
        if test_jitter is not None:
            clean_losses.append(evaluate_loss(net, td, ts, ty))
            jitter_losses.append(jittered_loss(net, td, ts, ty, test_jitter, seed))
        if on_run is not None:
            on_run(k, seed, net, history, result)
        log.info("run %d seed %d: r=%.4f mape=%.3f (best epoch %d, stop %d)", k, seed,
                 result.correlation, result.mape, history.best_epoch, history.stop_epoch)
    if test_jitter is not None:
        report.extra.update({"test_jitter": test_jitter, "clean_test_loss": clean_losses,
                             "jittered_test_loss": jitter_losses})
    return report


def run_ablation(dataset, arch: NetworkArch, cfg: TrainConfig, runs: int = 30,
                 test_jitter: Optional[float] = None, on_run=None):
    """Paired experiments from identical seeds, with and without the noise layer."""
    with_noise = run_experiment(dataset, arch, cfg, runs, test_jitter,
                                on_run=None if on_run is None else
                                (lambda *a: on_run("noise", *a)), label="noise")
    without = run_experiment(dataset, arch, replace(cfg, noise_sigma=0.0), runs, test_jitter,
                             on_run=None if on_run is None else
                             (lambda *a: on_run("no_noise", *a)), label="no_noise")
    return with_noise, without
