"""Command line entry point: ``socialbnn {generate,train,eval,stats}``.

Settings resolve in three layers: built-in defaults, then a flat
``key = value`` config file (``--config``), then explicit flags. The resolved
settings are written to every output directory as ``run_config.json`` and as
``run_config.cfg``, which ``--config`` accepts again to repeat the run.

Exit status: 0 on success, 1 on a runtime failure, 2 on a usage or
configuration error (including a missing input file).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from . import scenegen as sg
from .continual import TrainConfig, default_ucb, per_action_rmse, run_sequence, write_metrics, write_rmse_csv
from .data import (
    DataFormatError,
    SplitSpec,
    Variant,
    read_annotations,
    read_csv,
    split,
    tasks_for,
    write_annotations,
    write_csv,
)
from .loss import LossConfig
from .model import HeadMode, ModelConfig, load_checkpoint
from .optimizer import OptimizerConfig
from .stats import CORRELATION_FEATURES, alpha_by_mode, correlation_table

OUT_ENV = "SOCIALBNN_OUT"
log = logging.getLogger("socialbnn")


class UsageError(Exception):
    """Bad flags, config or input paths; exits with status 2."""


@dataclass
class RunConfig:
    command: str = ""
    seed: int = 7
    scenes: int = 750
    variant: str = "BNN"
    epochs: int = 200
    batch: int = 64
    eta: float = 0.06
    decay_factor: float = 3.0
    patience: int = 5
    ucb: Optional[bool] = None  # None: on for the continual variants, off for BNN
    hidden: str = "64,64"
    mc_samples: int = 10
    head_mode: str = "shared_output"
    mu_init_std: float = 0.1
    rho_init: float = -3.0
    p1: float = 0.001
    p2: float = 0.001
    p3: float = 0.05
    prior_sigma: float = 1.0
    noise_sd: float = sg.DEFAULT_NOISE_SD
    bias_sd: float = sg.DEFAULT_BIAS_SD
    eval_seed: int = 2020
    split: str = "test"
    clamp: bool = False
    data: str = ""
    annotations: str = ""
    checkpoint: str = ""
    resume: str = ""
    out: str = ""

    def hidden_dims(self) -> tuple[int, ...]:
        try:
            dims = tuple(int(h) for h in str(self.hidden).split(",") if h.strip())
        except ValueError:
            raise UsageError(f"--hidden must be comma-separated integers, got {self.hidden!r}") from None
        if not dims or min(dims) < 1:
            raise UsageError(f"--hidden must list positive widths, got {self.hidden!r}")
        return dims

    def use_ucb(self) -> bool:
        return default_ucb(Variant.parse(self.variant)) if self.ucb is None else self.ucb

    def model_config(self) -> ModelConfig:
        head_mode = HeadMode(self.head_mode)
        groups = None
        if head_mode is HeadMode.PER_TASK_HEADS:
            groups = tuple(t.action_indices for t in tasks_for(Variant.parse(self.variant)))
        return ModelConfig.for_manners(
            hidden_dims=self.hidden_dims(),
            mc_samples=self.mc_samples,
            head_mode=head_mode,
            head_groups=groups,
            mu_init_std=self.mu_init_std,
            rho_init=self.rho_init,
        )

    def loss_config(self) -> LossConfig:
        from .variational import PriorSpec

        return LossConfig(p1=self.p1, p2=self.p2, p3=self.p3, mc_samples=self.mc_samples, prior=PriorSpec(sigma1=self.prior_sigma))

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(eta=self.eta, decay_factor=self.decay_factor, patience=self.patience, ucb_enabled=self.use_ucb())

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch, eval_mc_samples=self.mc_samples, eval_seed=self.eval_seed)

    def to_flat(self) -> str:
        lines = [f"# socialbnn {__version__} resolved settings for '{self.command}'"]
        for f in fields(self)[1:]:
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {'' if v is None else v}")
        return "\n".join(lines) + "\n"


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    if "bool" in kind:
        low = raw.lower()
        if low in ("", "none", "auto") and "Optional" in kind:
            return None
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"{key}: expected a boolean, got {raw!r}")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    out = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELD_TYPES or key == "command":
            raise UsageError(f"{path}:{lineno}: unknown setting {key!r}")
        try:
            out[key] = _coerce(key, value)
        except (ValueError, UsageError):
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    return out


def resolve(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(command=args.command)
    if getattr(args, "config", None):
        cfg = replace(cfg, **read_config_file(args.config))
    explicit = {k: v for k, v in vars(args).items() if k in _FIELD_TYPES and k != "command" and v is not None}
    cfg = replace(cfg, **explicit)
    try:
        cfg.variant = Variant.parse(cfg.variant).value
    except ValueError:
        raise UsageError(f"unknown variant {cfg.variant!r}; use bnn, 2cl or 16cl") from None
    if not cfg.out:
        cfg.out = str(Path(os.environ.get(OUT_ENV, "runs")) / cfg.command)
    return cfg


def _require_file(path: str, what: str) -> Path:
    if not path:
        raise UsageError(f"{what} path is required")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {p}")
    return p


def _save_config(cfg: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_config.json").write_text(json.dumps(asdict(cfg), indent=2) + "\n")
    (out / "run_config.cfg").write_text(cfg.to_flat())


# --------------------------------------------------------------------------
# commands


def cmd_generate(cfg: RunConfig) -> int:
    if cfg.scenes < 0:
        raise UsageError("--scenes must be >= 0")
    out = Path(cfg.out)
    g = sg.generate(cfg.scenes, cfg.seed, noise_sd=cfg.noise_sd, bias_sd=cfg.bias_sd)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(g.dataset, out / "dataset.csv")
    write_annotations(g.ratings, out / "annotations.csv")
    manifest = {
        "seed": cfg.seed,
        "n_scenes": cfg.scenes,
        "n_rows": len(g.dataset),
        "n_ratings": int(g.ratings.size),
        "noise_sd": cfg.noise_sd,
        "bias_sd": cfg.bias_sd,
        "rater_biases": g.biases.tolist(),
        "oracle_sha256": g.oracle.digest(),
        "oracle": g.oracle.to_dict(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    _save_config(cfg, out)
    print(f"wrote {cfg.scenes} scenes ({len(g.dataset)} rows) to {out}")
    return 0


def _load_dataset(cfg: RunConfig):
    return read_csv(_require_file(cfg.data, "data file"))


def cmd_train(cfg: RunConfig) -> int:
    ds = _load_dataset(cfg)
    resume = _require_file(cfg.resume, "resume checkpoint") if cfg.resume else None
    variant = Variant.parse(cfg.variant)
    model_cfg = cfg.model_config()
    out = Path(cfg.out)
    _save_config(cfg, out)
    try:
        sp = split(ds, SplitSpec(variant), cfg.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    result = run_sequence(
        variant,
        sp,
        model_cfg=model_cfg,
        loss_cfg=cfg.loss_config(),
        opt_cfg=cfg.optimizer_config(),
        train_cfg=cfg.train_config(),
        seed=cfg.seed,
        checkpoint_dir=out / "checkpoints",
        resume_from=resume,
    )
    jpath, cpath = write_metrics(result.metrics, out)
    with open(out / "epochs.csv", "w", encoding="utf-8") as fh:
        fh.write("task_id,epoch,train_loss,val_loss,eta\n")
        for e in result.logs:
            fh.write(f"{e.task_id},{e.epoch},{e.train_loss!r},{e.val_loss!r},{e.eta!r}\n")
    print(f"{variant.value}: mean test RMSE {result.metrics.mean_rmse:.4f} over {len(sp.test.unique_scenes())} test scenes")
    print(f"wrote {jpath}, {cpath} and {len(result.checkpoints)} checkpoints")
    return 0


def format_table(per_action: np.ndarray) -> str:
    width = max(len(a.name) for a in sg.ACTIONS)
    lines = [f"{'#':>2}  {'mode':<6}  {'action':<{width}}  {'RMSE':>7}"]
    for a in sg.ACTIONS:
        v = per_action[a.index]
        lines.append(f"{a.index:>2}  {a.mode.value:<6}  {a.name:<{width}}  {'-' if math.isnan(v) else f'{v:7.4f}':>7}")
    lines.append(f"{'':>2}  {'':<6}  {'Mean over all actions':<{width}}  {float(np.nanmean(per_action)):7.4f}")
    return "\n".join(lines)


def cmd_eval(cfg: RunConfig) -> int:
    ckpt = _require_file(cfg.checkpoint, "checkpoint")
    ds = _load_dataset(cfg)
    try:
        model, meta = load_checkpoint(ckpt)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if model.config.input_dim != ds.features.shape[1]:
        raise UsageError(f"{ckpt}: model expects {model.config.input_dim} features, data has {ds.features.shape[1]}")
    if cfg.split != "all":
        seed = int(meta.get("seed", cfg.seed))
        variant = Variant(meta.get("variant", cfg.variant))
        try:
            sp = split(ds, SplitSpec(variant), seed)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        parts = {"train": sp.train, "val": sp.val_all, "test": sp.test}
        if cfg.split not in parts:
            raise UsageError(f"--split must be one of train, val, test, all; got {cfg.split!r}")
        ds = parts[cfg.split]
    per_action = per_action_rmse(model, ds, cfg.mc_samples, cfg.eval_seed, clamp=cfg.clamp)
    out = Path(cfg.out)
    _save_config(cfg, out)
    write_rmse_csv(per_action, out / "eval_rmse.csv")
    print(format_table(per_action))
    return 0


def cmd_stats(cfg: RunConfig) -> int:
    ds = _load_dataset(cfg)
    out = Path(cfg.out)
    lines = []
    if cfg.annotations:
        _, ratings = read_annotations(_require_file(cfg.annotations, "annotations file"))
        for mode, a in alpha_by_mode(ratings).items():
            lines.append(f"cronbach_alpha_{mode},{a!r}")
    table = correlation_table(ds.features, ds.labels)
    names = list(CORRELATION_FEATURES)
    csv_lines = ["action_index,action," + ",".join(names)]
    for a in sg.ACTIONS:
        row = table[a.index]
        csv_lines.append(f'{a.index},"{a.name}",' + ",".join("" if math.isnan(row[n]) else repr(row[n]) for n in names))
    _save_config(cfg, out)
    (out / "correlations.csv").write_text("\n".join(csv_lines) + "\n")
    if lines:
        (out / "alpha.csv").write_text("statistic,value\n" + "\n".join(lines) + "\n")
    print("\n".join(lines + csv_lines))
    return 0


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "stats": cmd_stats}


# --------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat 'key = value' settings file; flags override it")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<command> or runs/<command>)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--variant", help="bnn, 2cl or 16cl")
    model.add_argument("--mc-samples", dest="mc_samples", type=int)
    model.add_argument("--data", help="dataset CSV")

    p = _Parser(prog="socialbnn", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"socialbnn {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", parents=[common], help="sample scenes and simulated ratings")
    g.add_argument("--scenes", type=int)
    g.add_argument("--noise-sd", dest="noise_sd", type=float)
    g.add_argument("--bias-sd", dest="bias_sd", type=float)

    t = sub.add_parser("train", parents=[common, model], help="train a variant and record the stage metrics")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--eta", type=float)
    t.add_argument("--ucb", action=argparse.BooleanOptionalAction, default=None)
    t.add_argument("--hidden", help="comma-separated hidden widths, e.g. 64,64")
    t.add_argument("--head-mode", dest="head_mode", choices=[m.value for m in HeadMode])
    t.add_argument("--resume", help="stage checkpoint to continue from")

    e = sub.add_parser("eval", parents=[common, model], help="per-action RMSE of a checkpoint")
    e.add_argument("--checkpoint")
    e.add_argument("--split", choices=["train", "val", "test", "all"])
    e.add_argument("--clamp", action=argparse.BooleanOptionalAction, default=None)

    s = sub.add_parser("stats", parents=[common], help="rater reliability and feature correlations")
    s.add_argument("--data", help="dataset CSV")
    s.add_argument("--annotations", help="annotations CSV")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
        cfg = resolve(args)
        return COMMANDS[cfg.command](cfg)
    except UsageError as exc:
        print(f"socialbnn: error: {exc}", file=sys.stderr)
        return 2
    except (DataFormatError, OSError, FloatingPointError, ValueError) as exc:
        print(f"socialbnn: failed: {exc}", file=sys.stderr)
        return 1
