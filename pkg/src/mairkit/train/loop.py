"""Seeded training runs on synthetic data."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import tensor as T
from ..net import MaIR, ModelConfig, build_model, loss_charbonnier, loss_l1
from ..tensor import Tape, Tensor
from .data import DegradationSpec, degrade, synth_images
from .metrics import psnr, ssim
from .optim import AdamState, adam_step, cosine_lr

log = logging.getLogger(__name__)


@dataclass
class TrainRun:
    model: ModelConfig = field(default_factory=ModelConfig)
    degradation: DegradationSpec = field(default_factory=DegradationSpec)
    steps: int = 2000
    lr: float = 1e-3
    schedule: str = "constant"   # or "cosine"
    batch_size: int = 1
    patch: int = 32
    train_images: int = 256
    val_images: int = 8
    eval_every: int = 250
    seed: int = 0

    def __post_init__(self):
        if self.schedule not in ("constant", "cosine"):
            raise ValueError(f"schedule must be 'constant' or 'cosine', got {self.schedule!r}")
        task_head = "sr" if self.degradation.task == "sr" else "restore"
        if self.model.head != task_head:
            raise ValueError(f"task {self.degradation.task!r} needs the {task_head!r} head, "
                             f"model has the {self.model.head!r} head")
        if task_head == "sr" and self.model.scale != self.degradation.scale:
            raise ValueError(f"model scale {self.model.scale} != degradation scale "
                             f"{self.degradation.scale}")

    def manifest(self) -> dict:
        return {"model": self.model.to_dict(), "degradation": asdict(self.degradation),
                "steps": self.steps, "lr": self.lr, "schedule": self.schedule,
                "batch_size": self.batch_size, "patch": self.patch,
                "train_images": self.train_images, "val_images": self.val_images,
                "eval_every": self.eval_every, "seed": self.seed}

    def to_json(self) -> str:
        return json.dumps(self.manifest(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainRun":
        d = dict(d)
        model = ModelConfig.from_dict(d.pop("model", {}))
        deg = DegradationSpec(**d.pop("degradation", {}))
        return cls(model=model, degradation=deg, **d)


@dataclass
class TrainResult:
    model: MaIR
    log: list[dict]
    val_psnr: float
    val_ssim: float
    input_psnr: float
    wall_seconds: float


def make_validation(run: TrainRun) -> tuple[np.ndarray, np.ndarray]:
    """Held-out (degraded, clean) pairs, independent of the training pool."""
    clean = synth_images(run.val_images, run.patch, run.patch, seed=run.seed + 10_007)
    noisy = degrade(clean, run.degradation, np.random.default_rng(run.seed + 20_011))
    return noisy, clean


def baseline_output(run: TrainRun, degraded: np.ndarray) -> np.ndarray:
    """The trivial reconstruction the model has to beat: the input itself, or nearest upsampling."""
    if run.degradation.task == "sr":
        r = run.degradation.scale
        return degraded.repeat(r, axis=-2).repeat(r, axis=-1)
    return degraded


def predict(model: MaIR, x: np.ndarray, batch: int = 4) -> np.ndarray:
    outs = []
    for i in range(0, len(x), batch):
        outs.append(model(Tensor(x[i:i + batch].astype(np.float32))).data)
    return np.concatenate(outs)


def evaluate(model: MaIR, degraded: np.ndarray, clean: np.ndarray) -> tuple[float, float]:
    pred = predict(model, degraded)
    ps = float(np.mean([psnr(np.clip(p, 0, 1), c) for p, c in zip(pred, clean)]))
    ss = float(np.mean([ssim(np.clip(p, 0, 1), c) for p, c in zip(pred, clean)]))
    return ps, ss


def loss_fn(task: str):
    return loss_l1 if task == "sr" else loss_charbonnier


def train(run: TrainRun, model: MaIR | None = None) -> TrainResult:
    start = time.perf_counter()
    model = model if model is not None else build_model(run.model)
    rng = np.random.default_rng(run.seed)
    pool = synth_images(run.train_images, run.patch, run.patch, seed=run.seed)
    val_in, val_clean = make_validation(run)
    input_psnr = float(np.mean([psnr(np.clip(b, 0, 1), c)
                                for b, c in zip(baseline_output(run, val_in), val_clean)]))
    criterion = loss_fn(run.degradation.task)
    state = AdamState()
    names = [n for n, _ in model.named_parameters()]
    metric_log: list[dict] = []
    for step in range(run.steps):
        idx = rng.choice(len(pool), size=run.batch_size, replace=False)
        clean = pool[idx]
        if rng.random() < 0.5:
            clean = clean[..., ::-1]
        clean = np.ascontiguousarray(clean)
        degraded = degrade(clean, run.degradation, rng)
        with Tape() as tape:
            pred = model(Tensor(degraded))
            loss = criterion(pred, clean)
        grads = T.backward(tape, loss)
        params = dict(model.named_parameters())
        lr = run.lr if run.schedule == "constant" else cosine_lr(run.lr, step, run.steps)
        new, state = adam_step({n: params[n].data for n in names},
                               {n: grads[params[n]] for n in names}, state, lr)
        for n in names:
            model.set_parameter(n, Tensor(new[n]))
        entry = {"step": step, "loss": float(loss.item())}
        if (step + 1) % run.eval_every == 0 or step + 1 == run.steps:
            entry["val_psnr"], entry["val_ssim"] = evaluate(model, val_in, val_clean)
            log.info("step %d loss %.5f val_psnr %.3f", step, entry["loss"], entry["val_psnr"])
        metric_log.append(entry)
    val_psnr, val_ssim = evaluate(model, val_in, val_clean)
    return TrainResult(model, metric_log, val_psnr, val_ssim, input_psnr,
                       time.perf_counter() - start)
