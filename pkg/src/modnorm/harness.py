"""Training loop, sweep runner, and record I/O."""

from __future__ import annotations

import itertools
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .arch import ArchSpec, build_architecture, loss_and_grad, loss_eval
from .data import Dataset, load_cifar10, synthetic_task, synthetic_token_task
from .modules import forward, initialize, vjp
from .optim import lr_linear_decay, make_optimizer_state, normed_update, unnormed_update

DIVERGENCE_LIMIT = 1e6

RECORD_COLUMNS = (
    "run_id", "width", "depth", "mass", "lr", "step", "train_loss", "test_loss", "wall_seconds",
)


class ConfigError(ValueError):
    """Invalid run configuration (CLI exit code 2)."""


@dataclass
class RunConfig:
    arch: ArchSpec = field(default_factory=ArchSpec)
    optimizer: str = "adam"
    normed: bool = True
    lr0: float = 0.1
    total_steps: int = 200
    batch_size: int = 128
    seed: int = 0
    dataset: str = "synthetic"
    cifar_path: str = ""
    loss: str = "cross_entropy"
    log_interval: int | None = None
    n_train: int = 2048
    n_test: int = 512

    def validate(self):
        if self.total_steps < 1:
            raise ConfigError("total_steps must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.dataset not in ("synthetic", "cifar10"):
            raise ConfigError(f"unknown dataset {self.dataset!r}")
        if self.loss not in ("square", "cross_entropy"):
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.dataset == "cifar10" and not self.cifar_path:
            raise ConfigError("cifar10 dataset needs cifar_path")
        return self

    def run_id(self) -> str:
        norm_tag = "normed" if self.normed else "raw"
        a = self.arch
        return (
            f"{a.family}-{self.optimizer}-{norm_tag}-w{a.width}-L{a.depth}"
            f"-m{a.block_mass:g}-lr{self.lr0:g}-seed{self.seed}"
        )

    def echo(self) -> dict:
        """Every resolved hyperparameter, including defaults."""
        a = self.arch
        out = {f"arch.{k}": getattr(a, k) for k in a.__dataclass_fields__}
        for k in ("optimizer", "normed", "lr0", "total_steps", "batch_size", "seed",
                  "dataset", "cifar_path", "loss", "n_train", "n_test"):
            out[k] = getattr(self, k)
        out["momentum_beta"] = 0.9
        out["adam_beta1"] = 0.9
        out["adam_beta2"] = 0.99
        out["adam_eps"] = 1e-8
        out["norm_eps"] = 1e-12
        out["lr_schedule"] = "linear_decay"
        out["weight_decay"] = 0.0
        out["input_normalization"] = "per_example_rms"
        out["augmentation"] = "none"
        return out


@dataclass
class RunRecord:
    run_id: str
    width: int
    depth: int
    mass: float
    lr: float
    step: int
    train_loss: float
    test_loss: float | None
    wall_seconds: float

    @property
    def diverged(self) -> bool:
        return not math.isfinite(self.train_loss)


def _resolve_dataset(config: RunConfig) -> Dataset:
    if config.dataset == "cifar10":
        if config.arch.family == "gpt":
            raise ConfigError("gpt consumes token sequences, not cifar10 images")
        if config.arch.family == "resmlp" and config.arch.d_in != 3 * 32 * 32:
            raise ConfigError(f"resmlp on cifar10 needs d_in={3 * 32 * 32}, got {config.arch.d_in}")
        data = load_cifar10(config.cifar_path)
        if config.arch.family == "resmlp":
            # flat-vector architectures consume flattened images
            data = Dataset(
                data.x_train.reshape(len(data.x_train), -1), data.y_train,
                data.x_test.reshape(len(data.x_test), -1), data.y_test,
            )
        return data
    if config.arch.family == "gpt":
        return synthetic_token_task(
            config.arch.vocab, config.arch.context, config.n_train, config.n_test, config.seed
        )
    return synthetic_task(
        config.arch.d_out, config.arch.d_in, config.n_train, config.n_test, config.seed
    )


def train_run(config: RunConfig, dataset: Dataset | None = None) -> list[RunRecord]:
    """Run one training loop and return its record rows.

    Per step: forward, loss, backward, base-optimizer direction, optional
    normalization, then w <- w - lr(step) * update with a linearly decaying
    learning rate. Non-finite or runaway losses terminate the run early with
    a record whose train_loss is infinite.
    """
    config.validate()
    data = dataset if dataset is not None else _resolve_dataset(config)
    tree = build_architecture(config.arch)
    w = initialize(tree, config.seed)
    state = make_optimizer_state(tree, w, config.optimizer, seed=config.seed)
    batch_rng = np.random.default_rng([config.seed, 101])
    interval = config.log_interval or max(1, config.total_steps // 100)
    records: list[RunRecord] = []
    n = len(data.x_train)
    started = time.perf_counter()

    eval_n = min(n, 512)
    test_n = min(len(data.x_test), 2048)

    def emit(step: int, batch_loss: float, with_test: bool):
        # recorded losses are measured on fixed slices, not the step's
        # minibatch, so final-loss comparisons across runs are low-variance
        train_loss = batch_loss
        test_loss = None
        if math.isfinite(batch_loss):
            logits = forward(tree, w, data.x_train[:eval_n])
            train_loss = loss_eval(config.loss, logits, data.y_train[:eval_n])
            if with_test:
                logits = forward(tree, w, data.x_test[:test_n])
                test_loss = loss_eval(config.loss, logits, data.y_test[:test_n])
        records.append(
            RunRecord(
                config.run_id(), config.arch.width, config.arch.depth,
                config.arch.block_mass, config.lr0, step, train_loss, test_loss,
                time.perf_counter() - started,
            )
        )

    for step in range(config.total_steps):
        idx = batch_rng.integers(0, n, size=config.batch_size)
        xb, yb = data.x_train[idx], data.y_train[idx]
        logits = forward(tree, w, xb)
        loss, cotangent = loss_and_grad(config.loss, logits, yb)
        if not math.isfinite(loss) or loss > DIVERGENCE_LIMIT:
            emit(step, math.inf, with_test=False)
            return records
        grads, _ = vjp(tree, w, xb, cotangent)
        lr = lr_linear_decay(step, config.total_steps, config.lr0)
        if config.normed:
            update = normed_update(tree, state, grads, config.optimizer, lr)
        else:
            update = unnormed_update(state, grads, lr)
        w = w - update
        if not w.allfinite():
            emit(step + 1, math.inf, with_test=False)
            return records
        last = step + 1 == config.total_steps
        if last or (step + 1) % interval == 0:
            emit(step + 1, loss, with_test=last)
    return records


def sweep(grid: dict, base: RunConfig) -> list[RunRecord]:
    """Cartesian product of {widths, depths, masses, lrs} over a base config.

    Cells are independent runs; results are concatenated in grid order
    (width, then depth, then mass, then lr) regardless of execution order.
    MODNORM_THREADS caps concurrency.
    """
    def axis(name, default):
        if name not in grid:
            return [default]
        values = list(grid[name])
        if not values:
            raise ConfigError(f"sweep axis {name!r} is empty")
        return values

    widths = axis("widths", base.arch.width)
    depths = axis("depths", base.arch.depth)
    masses = axis("masses", base.arch.block_mass)
    lrs = axis("lrs", base.lr0)
    cells = [
        replace(
            base,
            arch=replace(base.arch, width=w, depth=d, block_mass=m),
            lr0=lr,
        )
        for w, d, m, lr in itertools.product(widths, depths, masses, lrs)
    ]
    for c in cells:
        c.validate()
    shared = None
    if base.dataset == "synthetic" and len(set(widths)) >= 1:
        shared = _resolve_dataset(base)  # input dim independent of grid axes
    elif base.dataset == "cifar10":
        shared = _resolve_dataset(base)
    threads = int(os.environ.get("MODNORM_THREADS", "1") or "1")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda c: train_run(c, shared), cells))
    else:
        results = [train_run(c, shared) for c in cells]
    return [record for cell in results for record in cell]


def best_lr_per_group(records: list[RunRecord], group_key: str = "width",
                      metric: str = "train_loss") -> dict:
    """argmin learning rate per group value, over each run's final step."""
    finals: dict = {}
    for r in records:
        key = (getattr(r, group_key), r.lr)
        if key not in finals or r.step > finals[key].step:
            finals[key] = r
    best: dict = {}
    for (group, lr), rec in finals.items():
        value = getattr(rec, metric)
        if value is None or not math.isfinite(value):
            continue
        if group not in best or value < best[group][1]:
            best[group] = (lr, value)
    return {g: lr for g, (lr, _) in best.items()}


# ---------------------------------------------------------------------------
# record I/O
# ---------------------------------------------------------------------------

def _format_loss(v) -> str:
    if v is None:
        return ""
    if math.isinf(v):
        return "inf"
    return repr(float(v))


def write_records(records: list[RunRecord], path: str, fmt: str = "csv",
                  config_echo: dict | None = None) -> None:
    if fmt == "csv":
        lines = []
        if config_echo:
            lines.extend(f"# {k}={v}" for k, v in config_echo.items())
        lines.append(",".join(RECORD_COLUMNS))
        for r in records:
            lines.append(
                ",".join(
                    [
                        r.run_id, str(r.width), str(r.depth), repr(float(r.mass)),
                        repr(float(r.lr)), str(r.step), _format_loss(r.train_loss),
                        _format_loss(r.test_loss), repr(float(r.wall_seconds)),
                    ]
                )
            )
        body = "\n".join(lines) + "\n"
    elif fmt == "json":
        rows = [
            {
                "run_id": r.run_id, "width": r.width, "depth": r.depth, "mass": r.mass,
                "lr": r.lr, "step": r.step,
                "train_loss": ("inf" if math.isinf(r.train_loss) else r.train_loss),
                "test_loss": r.test_loss, "wall_seconds": r.wall_seconds,
            }
            for r in records
        ]
        body = json.dumps(rows, indent=1) + "\n"
    else:
        raise ConfigError(f"unknown record format {fmt!r}")
    try:
        with open(path, "w") as f:
            f.write(body)
    except OSError as e:
        raise OSError(f"cannot write records to {path}: {e}") from e


def read_records(path: str) -> list[RunRecord]:
    with open(path) as f:
        text = f.read()
    if path.endswith(".json") or text.lstrip().startswith("["):
        rows = json.loads(text)
        return [
            RunRecord(
                r["run_id"], int(r["width"]), int(r["depth"]), float(r["mass"]),
                float(r["lr"]), int(r["step"]),
                math.inf if r["train_loss"] == "inf" else float(r["train_loss"]),
                None if r["test_loss"] is None else float(r["test_loss"]),
                float(r["wall_seconds"]),
            )
            for r in rows
        ]
    out = []
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    header = lines[0].split(",")
    if tuple(header) != RECORD_COLUMNS:
        raise ValueError(f"{path}: unexpected columns {header}")
    for ln in lines[1:]:
        f = ln.split(",")
        out.append(
            RunRecord(
                f[0], int(f[1]), int(f[2]), float(f[3]), float(f[4]), int(f[5]),
                float(f[6]), (None if f[7] == "" else float(f[7])), float(f[8]),
            )
        )
    return out
