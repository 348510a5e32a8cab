"""Sequential task training and the forgetting matrix.

Every task supervises a subset of the 16 action outputs. Inputs are the same
kind of scene rows for all tasks; only the label mask changes. After each
task the model is checkpointed and every task is evaluated on the test set,
giving a (tasks x stages) loss matrix. Column 0 holds the untrained model.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .data import Dataset, Split, SplitSpec, TaskSpec, Variant, split as make_split
from .loss import LossConfig, evaluate
from .model import BnnModel, ModelConfig, draw_noise, forward_batch, init_model, load_checkpoint, save_checkpoint
from .optimizer import OptimizerConfig, SchedulerState, scheduler_update, ucb_step
from .scenegen import ACTIONS
from .stats import rmse

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    eval_mc_samples: int = 10
    eval_seed: int = 2020
    # divide the complexity cost by the number of minibatches per epoch
    per_batch_complexity: bool = True
    reset_eta_per_task: bool = True
    per_epoch_test: bool = False


@dataclass
class EpochLog:
    task_id: int
    epoch: int
    train_loss: float
    val_loss: float
    eta: float
    test_loss: Optional[float] = None


def task_arrays(ds: Dataset, task: TaskSpec):
    """Rows of ``ds`` carrying labels of ``task``, with the mask restricted to its actions."""
    mask = np.zeros_like(ds.mask)
    acts = list(task.action_indices)
    mask[:, acts] = ds.mask[:, acts]
    rows = np.flatnonzero(mask.any(axis=1))
    return ds.features[rows], ds.labels[rows], mask[rows]


def _active_heads(model: BnnModel, task: TaskSpec):
    positions = {model.config.actions.index(a) for a in task.action_indices}
    return [k for k, g in enumerate(model.config.groups()) if positions & set(g)]


def _labels_for_model(model: BnnModel, y: np.ndarray, mask: np.ndarray):
    cols = list(model.config.actions)
    return y[:, cols], mask[:, cols]


def task_nll(model: BnnModel, ds: Dataset, task: TaskSpec, mc_samples: int, seed: int) -> float:
    x, y, m = task_arrays(ds, task)
    if len(x) == 0:
        return math.nan
    y, m = _labels_for_model(model, y, m)
    cfg = LossConfig(p1=0.0, p2=0.0, p3=1.0, mc_samples=mc_samples)
    return evaluate(model, x, y, m, cfg, seed=seed)[0].nll_term


def train_task(
    model: BnnModel,
    task: TaskSpec,
    train: Dataset,
    val: Optional[Dataset],
    loss_cfg: LossConfig = LossConfig(),
    opt_cfg: OptimizerConfig = OptimizerConfig(),
    train_cfg: TrainConfig = TrainConfig(),
    seed: int = 0,
    eta: Optional[float] = None,
    test: Optional[Dataset] = None,
) -> list[EpochLog]:
    """Minibatch training of ``model`` (in place) on one task.

    The scheduler watches the validation NLL of the task; without a
    validation set it watches the epoch's mean training loss.
    """
    x, y, m = task_arrays(train, task)
    y, m = _labels_for_model(model, y, m)
    n = len(x)
    if n == 0 or train_cfg.epochs == 0:
        return []
    rng = np.random.default_rng([seed, task.task_id, 3])
    n_batches = math.ceil(n / train_cfg.batch_size)
    cfg = replace(loss_cfg, complexity_scale=1.0 / n_batches if train_cfg.per_batch_complexity else 1.0)
    heads = _active_heads(model, task)
    state = replace(SchedulerState.start(opt_cfg), current_eta=eta if eta is not None else opt_cfg.eta)
    logs = []
    for epoch in range(train_cfg.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for b in range(n_batches):
            idx = perm[b * train_cfg.batch_size : (b + 1) * train_cfg.batch_size]
            noise = draw_noise(model, rng, cfg.mc_samples)
            try:
                bd, grads = evaluate(model, x[idx], y[idx], m[idx], cfg, noise=noise, with_grad=True, active_heads=heads)
                ucb_step(model.layers(), grads, state.current_eta, opt_cfg.ucb_enabled, opt_cfg.max_mu_lr)
            except FloatingPointError as exc:
                raise FloatingPointError(f"task {task.task_id}, epoch {epoch}, batch {b}: {exc}") from None
            total += bd.total
        if val is not None and len(task_arrays(val, task)[0]):
            val_loss = task_nll(model, val, task, train_cfg.eval_mc_samples, train_cfg.eval_seed)
        else:
            val_loss = total / n_batches
        state = scheduler_update(state, val_loss, opt_cfg)
        entry = EpochLog(task.task_id, epoch, total / n_batches, val_loss, state.current_eta)
        if train_cfg.per_epoch_test and test is not None:
            entry.test_loss = task_nll(model, test, task, train_cfg.eval_mc_samples, train_cfg.eval_seed)
        logs.append(entry)
        log.debug("task %d epoch %d loss %.5f val %.5f eta %.5g", task.task_id, epoch, entry.train_loss, val_loss, state.current_eta)
    return logs


# --------------------------------------------------------------------------
# evaluation


def predict_dataset(model: BnnModel, ds: Dataset, mc_samples: int = 10, seed: int = 2020, clamp: bool = False):
    """MC-averaged ``(mean_y, log_var, draws)`` over all 16 action columns of ``ds``.

    ``draws`` is the raw (S, N, n_actions, 2) output. Columns of actions the
    model does not predict are NaN.
    """
    out, _ = forward_batch(model, ds.features, draw_noise(model, np.random.default_rng(seed), mc_samples))
    mean_y = np.full((len(ds), 16), np.nan)
    log_var = np.full((len(ds), 16), np.nan)
    cols = list(model.config.actions)
    mean_y[:, cols] = out[..., 0].mean(axis=0)
    log_var[:, cols] = out[..., 1].mean(axis=0)
    if clamp:
        mean_y = np.clip(mean_y, 1.0, 5.0)
    return mean_y, log_var, out


def per_action_rmse(model: BnnModel, ds: Dataset, mc_samples: int = 10, seed: int = 2020, clamp: bool = False) -> np.ndarray:
    mean_y, _, _ = predict_dataset(model, ds, mc_samples, seed, clamp)
    res = np.full(16, np.nan)
    for a in range(16):
        keep = ds.mask[:, a]
        if keep.any():
            res[a] = rmse(mean_y[keep, a], ds.labels[keep, a])
    return res


def evaluate_tasks(model: BnnModel, ds: Dataset, tasks: list[TaskSpec], mc_samples: int, seed: int):
    """Test NLL and RMSE of every task from a single batched pass."""
    _, _, out = predict_dataset(model, ds, mc_samples, seed)
    cols = list(model.config.actions)
    y = ds.labels[:, cols]
    mask = ds.mask[:, cols]
    losses, rmses = [], []
    y_mean = out[..., 0].mean(axis=0)
    for t in tasks:
        pos = [cols.index(a) for a in t.action_indices]
        m = np.zeros_like(mask)
        m[:, pos] = mask[:, pos]
        if not m.any():
            losses.append(math.nan)
            rmses.append(math.nan)
            continue
        r = np.where(m, np.nan_to_num(y) - out[..., 0], 0.0)
        lv = np.where(m, out[..., 1], 0.0)
        nll = (0.5 * r * r * np.exp(-lv) + 0.5 * lv).sum(axis=(1, 2)) / m.sum()
        losses.append(float(nll.mean()))
        rmses.append(rmse(y_mean[m], y[m]))
    return np.array(losses), np.array(rmses)


@dataclass
class StageMetrics:
    """Column ``s + 1`` holds metrics after training task ``s``; column 0 is the untrained model."""

    variant: str
    tasks: list[TaskSpec]
    loss: np.ndarray  # (T, T + 1)
    rmse: np.ndarray  # (T, T + 1)
    per_action_rmse: np.ndarray  # (16,) after the final stage

    def at(self, task: int, stage: int) -> float:
        """Test loss of ``task`` after training stage ``stage`` (-1 = initialization)."""
        return float(self.loss[task, stage + 1])

    @property
    def mean_rmse(self) -> float:
        return float(np.nanmean(self.per_action_rmse))

    def to_dict(self) -> dict:
        def clean(a):
            return [[None if math.isnan(v) else float(v) for v in row] for row in np.atleast_2d(a)]

        return {
            "variant": self.variant,
            "tasks": [asdict(t) for t in self.tasks],
            "stages": ["init"] + [f"after_task_{t.task_id}" for t in self.tasks],
            "loss": clean(self.loss),
            "rmse": clean(self.rmse),
            "per_action_rmse": clean(self.per_action_rmse)[0],
            "mean_rmse": self.mean_rmse,
            "forgetting": forgetting_metrics(self)["per_task"],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StageMetrics":
        def arr(v):
            return np.array([[math.nan if t is None else t for t in row] for row in v], dtype=np.float64)

        return cls(
            d["variant"],
            [TaskSpec(t["task_id"], tuple(t["action_indices"]), t["label"]) for t in d["tasks"]],
            arr(d["loss"]),
            arr(d["rmse"]),
            arr([d["per_action_rmse"]])[0],
        )


def forgetting_metrics(m: StageMetrics) -> dict:
    """``loss(t, final) - min over stages s >= t of loss(t, s)`` per task, and its mean."""
    per_task = []
    for t in range(m.loss.shape[0]):
        row = m.loss[t, t + 1 :]
        per_task.append(float(row[-1] - np.min(row)))
    return {"per_task": per_task, "mean": float(np.mean(per_task))}


# --------------------------------------------------------------------------
# full regimes


@dataclass
class RunResult:
    metrics: StageMetrics
    model: BnnModel
    logs: list[EpochLog] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)


def run_sequence(
    variant: Variant,
    data: Dataset | Split,
    model_cfg: Optional[ModelConfig] = None,
    loss_cfg: LossConfig = LossConfig(),
    opt_cfg: OptimizerConfig = OptimizerConfig(),
    train_cfg: TrainConfig = TrainConfig(),
    seed: int = 0,
    checkpoint_dir=None,
    resume_from=None,
    stop_after: Optional[int] = None,
    split_spec: Optional[SplitSpec] = None,
) -> RunResult:
    """Train the tasks of ``variant`` in order and evaluate all of them after each stage.

    ``resume_from`` is a stage checkpoint written by an earlier call; training
    continues with the next task. ``stop_after`` ends the run after that task
    index (for interrupted runs).
    """
    variant = Variant(variant)
    sp = data if isinstance(data, Split) else make_split(data, split_spec or SplitSpec(variant), seed)
    tasks = sp.tasks
    n_tasks = len(tasks)
    loss = np.full((n_tasks, n_tasks + 1), np.nan)
    rm = np.full((n_tasks, n_tasks + 1), np.nan)
    start = 0
    eta = opt_cfg.eta
    if resume_from is not None:
        model, meta = load_checkpoint(resume_from)
        if meta.get("variant") != variant.value:
            raise ValueError(f"{resume_from}: checkpoint belongs to variant {meta.get('variant')}")
        start = int(meta["stage"]) + 1
        loss[:, : start + 1] = np.array(meta["loss"], dtype=np.float64)
        rm[:, : start + 1] = np.array(meta["rmse"], dtype=np.float64)
        eta = float(meta["eta"])
    else:
        model = init_model(model_cfg or ModelConfig.for_manners(), seed)
        loss[:, 0], rm[:, 0] = evaluate_tasks(model, sp.test, tasks, train_cfg.eval_mc_samples, train_cfg.eval_seed)

    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    result = RunResult(metrics=None, model=model)  # type: ignore[arg-type]
    last = n_tasks - 1 if stop_after is None else min(stop_after, n_tasks - 1)
    for s in range(start, last + 1):
        task = tasks[s]
        task_eta = opt_cfg.eta if train_cfg.reset_eta_per_task else eta
        logs = train_task(model, task, sp.train, sp.val[s], loss_cfg, opt_cfg, train_cfg, seed, task_eta, sp.test)
        result.logs.extend(logs)
        if logs:
            eta = logs[-1].eta
        loss[:, s + 1], rm[:, s + 1] = evaluate_tasks(model, sp.test, tasks, train_cfg.eval_mc_samples, train_cfg.eval_seed)
        log.info("%s stage %d/%d (%s): task loss %.4f", variant.value, s + 1, n_tasks, task.label, loss[s, s + 1])
        if ckpt_dir is not None:
            path = ckpt_dir / f"stage_{s:02d}.npz"
            meta = {
                "variant": variant.value,
                "stage": s,
                "seed": seed,
                "eta": eta,
                "loss": loss[:, : s + 2].tolist(),
                "rmse": rm[:, : s + 2].tolist(),
            }
            save_checkpoint(model, path, meta)
            result.checkpoints.append(path)

    result.metrics = StageMetrics(
        variant.value,
        tasks,
        loss,
        rm,
        per_action_rmse(model, sp.test, train_cfg.eval_mc_samples, train_cfg.eval_seed),
    )
    return result


def default_ucb(variant: Variant) -> bool:
    """Uncertainty-scaled learning rates are the continual-learning mechanism; the baseline trains with plain SGD."""
    return Variant(variant) is not Variant.BNN


def write_metrics(metrics: StageMetrics, out_dir) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jpath = out_dir / "stage_metrics.json"
    jpath.write_text(json.dumps(metrics.to_dict(), indent=2))
    cpath = out_dir / "rmse.csv"
    write_rmse_csv(metrics.per_action_rmse, cpath)
    return jpath, cpath


def write_rmse_csv(per_action: np.ndarray, path) -> None:
    """Per-action RMSE rows in table order followed by the mean over all actions."""
    lines = ["action_index,mode,action,rmse"]
    for a in ACTIONS:
        v = per_action[a.index]
        lines.append(f'{a.index},{a.mode.value},"{a.name}",{"" if math.isnan(v) else repr(float(v))}')
    lines.append(f',,"Mean over all actions",{float(np.nanmean(per_action))!r}')
    Path(path).write_text("\n".join(lines) + "\n")
