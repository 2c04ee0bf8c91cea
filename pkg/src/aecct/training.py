"""Two-phase training: FP32 with HPSA + SPE, then AAP quantization-aware fine-tuning."""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .autodiff import adam_step, cosine_lr, load_checkpoint, save_checkpoint
from .channel import ebn0_to_sigma, preprocess, recover_codeword, transmit
from .codes import CodeMismatchError, ParityCheck
from .model import AAP, AECCT, ModelConfig

log = logging.getLogger(__name__)

PHASE1 = "phase1"
PHASE2 = "phase2"
LOSS_WINDOW = 1000


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 40
    batches_per_epoch: int = 1000
    batch_size: int = 128
    lr_max: float = 1e-4
    lr_min: float = 5e-7
    snr_range_db: tuple = (3.0, 7.0)
    seed: int = 0
    eval_every: int = 2000
    val_ebn0_db: tuple = (4.0, 5.0, 6.0)
    val_frames: int = 10000
    val_seed: int = 12345
    log_path: str | None = None

    def __post_init__(self):
        lo, hi = self.snr_range_db
        if lo > hi:
            raise ValueError("snr_range_db must be ordered")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def total_steps(self) -> int:
        return self.epochs * self.batches_per_epoch


def batch_rng(seed: int, phase: str, step: int) -> np.random.Generator:
    """Counter-based stream so any batch can be regenerated from (seed, phase, step)."""
    return np.random.default_rng([seed, 1 if phase == PHASE1 else 2, step])


def make_batch(pc: ParityCheck, batch_size: int, snr_range_db, rng: np.random.Generator):
    """All-zero codeword through AWGN at a per-sample uniform Eb/N0.

    Returns:
        (features, targets, ebn0_db) as numpy arrays.
    """
    lo, hi = snr_range_db
    ebn0 = rng.uniform(lo, hi, size=batch_size)
    sample = transmit(np.ones((batch_size, pc.n)), ebn0, pc.rate, rng)
    inp = preprocess(sample, pc)
    return inp.features, inp.target, ebn0


def loss_fn(logits, targets):
    """Mean binary cross-entropy with logits over all bits of the batch."""
    return F.binary_cross_entropy_with_logits(logits, torch.as_tensor(targets, dtype=logits.dtype))


def validation_frames(pc: ParityCheck, ebn0_db: float, frames: int, seed: int):
    rng = np.random.default_rng([seed, int(round(ebn0_db * 1000))])
    sigma = ebn0_to_sigma(ebn0_db, pc.rate)
    return 1.0 + sigma * rng.standard_normal((frames, pc.n))


def validate(decode_logits, pc: ParityCheck, cfg: TrainConfig, chunk: int = 2000) -> dict:
    """BER per validation Eb/N0 on fixed zero-codeword frames.

    Args:
        decode_logits: callable mapping channel outputs (frames, n) to noise logits.
    """
    out = {}
    for eb in cfg.val_ebn0_db:
        y = validation_frames(pc, eb, cfg.val_frames, cfg.val_seed)
        errors = 0
        for s in range(0, len(y), chunk):
            part = y[s:s + chunk]
            errors += int(recover_codeword(part, decode_logits(part)).sum())
        out[eb] = errors / (cfg.val_frames * pc.n)
    return out


def score(bers: dict, bits: int | None = None) -> float:
    """Mean -ln(BER) over the validation points.

    Args:
        bits: bits simulated per point; a zero-error point then counts as one
            error instead of scoring infinity.
    """
    vals = []
    for ber in bers.values():
        if ber == 0 and bits:
            ber = 1.0 / bits
        vals.append(-math.log(ber) if ber > 0 else math.inf)
    return float(np.mean(vals))


def _params(model):
    return [p for p in model.parameters() if p.requires_grad]


def _state_tensors(model, opt_state, best_state):
    tensors = {f"param.{k}": v for k, v in model.state_dict().items()}
    if opt_state:
        for i, (m, v) in enumerate(zip(opt_state["m"], opt_state["v"])):
            tensors[f"adam.m.{i}"] = m
            tensors[f"adam.v.{i}"] = v
    if best_state is not None:
        tensors.update({f"best.{k}": v for k, v in best_state.items()})
    return tensors


@dataclass
class Trainer:
    """Runs one training phase on one code; resumable and seed-deterministic."""

    model: AECCT
    cfg: TrainConfig
    phase: str = PHASE1
    step: int = 0
    opt_state: dict = field(default_factory=dict)
    best_score: float = -math.inf
    best_state: dict | None = None
    history: list = field(default_factory=list)
    select_best: bool = True
    loss_windows: list = field(default_factory=list)  # mean loss per LOSS_WINDOW steps
    _pending: list = field(default_factory=list)  # losses since the last eval point
    _window: list = field(default_factory=list)  # losses since the last loss window

    def _logits_fn(self):
        model = self.model

        def fn(y):
            return model.predict_logits(y)
        return fn

    def evaluate(self) -> dict:
        return validate(self._logits_fn(), self.model.pc, self.cfg)

    def _log(self, record):
        self.history.append(record)
        log.info(json.dumps(record))
        if self.cfg.log_path:
            with open(self.cfg.log_path, "a") as fh:
                fh.write(json.dumps(record, allow_nan=False) + "\n")

    def _eval_point(self, loss_value):
        bers = self.evaluate()
        s = score(bers, self.cfg.val_frames * self.model.pc.n)
        lr = cosine_lr(min(self.step, self.cfg.total_steps), self.cfg.total_steps,
                       self.cfg.lr_max, self.cfg.lr_min)
        self._log({"phase": self.phase, "step": self.step, "lr": lr, "loss": loss_value,
                   "ber": {str(k): v for k, v in bers.items()}, "score": s})
        if self.select_best and s > self.best_score:
            self.best_score = s
            self.best_state = copy.deepcopy(self.model.state_dict())
        return bers

    def run(self, until: int | None = None):
        """Train up to ``until`` steps (default: the full schedule)."""
        until = self.cfg.total_steps if until is None else min(until, self.cfg.total_steps)
        pc = self.model.pc
        self.model.train()
        params = _params(self.model)
        while self.step < until:
            rng = batch_rng(self.cfg.seed, self.phase, self.step)
            features, targets, _ = make_batch(pc, self.cfg.batch_size, self.cfg.snr_range_db, rng)
            logits = self.model(torch.as_tensor(features, dtype=torch.float32))
            loss = loss_fn(logits, targets)
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at step {self.step}")
            for p in params:
                p.grad = None
            loss.backward()
            lr = cosine_lr(self.step, self.cfg.total_steps, self.cfg.lr_max, self.cfg.lr_min)
            adam_step(params, [p.grad for p in params], self.opt_state, lr)
            self.model.clamp_deltas_()
            self.step += 1
            self._pending.append(loss.item())
            self._window.append(loss.item())
            if self.step % LOSS_WINDOW == 0:
                self.loss_windows.append(float(np.mean(self._window)))
                self._window = []
            if self.step % self.cfg.eval_every == 0 or self.step == self.cfg.total_steps:
                self._eval_point(float(np.mean(self._pending)))
                self._pending = []
                self.model.train()
        return self

    def result_model(self) -> AECCT:
        """Best-by-validation weights when selection is on, else the current weights."""
        if self.select_best and self.best_state is not None:
            self.model.load_state_dict(self.best_state)
        return self.model

    def save(self, path):
        meta = {
            "phase": self.phase,
            "step": self.step,
            "model_config": self.model.cfg.to_dict(),
            "train_config": {k: list(v) if isinstance(v, tuple) else v
                             for k, v in asdict(self.cfg).items()},
            "code_fingerprint": self.model.pc.fingerprint(),
            "code_name": self.model.pc.name,
            "best_score": self.best_score if math.isfinite(self.best_score) else None,
            "select_best": self.select_best,
            "adam_step": self.opt_state.get("step", 0),
            "history": self.history,
            "loss_windows": self.loss_windows,
            "pending_losses": self._pending,
            "window_losses": self._window,
        }
        save_checkpoint(path, _state_tensors(self.model, self.opt_state, self.best_state), meta)

    @classmethod
    def load(cls, path, pc: ParityCheck, cfg: TrainConfig | None = None) -> "Trainer":
        tensors, meta = load_checkpoint(path)
        model = model_from_checkpoint(tensors, meta, pc)
        if cfg is None:
            raw = dict(meta["train_config"])
            raw["snr_range_db"] = tuple(raw["snr_range_db"])
            raw["val_ebn0_db"] = tuple(raw["val_ebn0_db"])
            cfg = TrainConfig(**raw)
        trainer = cls(model=model, cfg=cfg, phase=meta["phase"], step=meta["step"],
                      select_best=meta.get("select_best", True), history=meta.get("history", []),
                      loss_windows=meta.get("loss_windows", []),
                      _pending=meta.get("pending_losses", []),
                      _window=meta.get("window_losses", []))
        n_params = len(_params(model))
        if meta.get("adam_step"):
            trainer.opt_state = {
                "step": meta["adam_step"],
                "m": [torch.as_tensor(tensors[f"adam.m.{i}"]) for i in range(n_params)],
                "v": [torch.as_tensor(tensors[f"adam.v.{i}"]) for i in range(n_params)],
            }
        best = {k[len("best."):]: torch.as_tensor(v) for k, v in tensors.items() if k.startswith("best.")}
        if best:
            trainer.best_state = best
            trainer.best_score = meta["best_score"] if meta["best_score"] is not None else -math.inf
        return trainer


def model_from_checkpoint(tensors: dict, meta: dict, pc: ParityCheck) -> AECCT:
    if meta["code_fingerprint"] != pc.fingerprint():
        raise CodeMismatchError(
            f"checkpoint trained on {meta.get('code_name')!r} does not match code {pc.name!r}")
    cfg = ModelConfig(**meta["model_config"])
    model = AECCT(pc, cfg, seed=None)
    state = {k[len("param."):]: torch.as_tensor(v) for k, v in tensors.items() if k.startswith("param.")}
    model.load_state_dict(state)
    return model


def save_model(model: AECCT, path, phase: str, extra: dict | None = None):
    """Model-only checkpoint (no optimizer state)."""
    meta = {
        "phase": phase,
        "model_config": model.cfg.to_dict(),
        "code_fingerprint": model.pc.fingerprint(),
        "code_name": model.pc.name,
        **(extra or {}),
    }
    save_checkpoint(path, {f"param.{k}": v for k, v in model.state_dict().items()}, meta)


def load_model(path, pc: ParityCheck) -> tuple[AECCT, dict]:
    tensors, meta = load_checkpoint(path)
    return model_from_checkpoint(tensors, meta, pc), meta


def train_phase1(pc: ParityCheck, model_cfg: ModelConfig, train_cfg: TrainConfig,
                 checkpoint_path=None) -> Trainer:
    """Train the FP32 decoder from scratch; the trainer's result model is the best checkpoint."""
    if model_cfg.quant_mode == AAP:
        raise ValueError("phase 1 trains the FP32 model")
    model = AECCT(pc, model_cfg, seed=train_cfg.seed)
    trainer = Trainer(model=model, cfg=train_cfg, phase=PHASE1)
    trainer.run()
    trainer.result_model()
    if checkpoint_path:
        save_model(trainer.model, checkpoint_path, PHASE1,
                   {"best_score": trainer.best_score, "history": trainer.history})
    return trainer


def train_phase2(phase1_model: AECCT, train_cfg: TrainConfig, checkpoint_path=None,
                 frozen_path=None) -> Trainer:
    """Quantization-aware fine-tuning from phase-1 weights, then freezing.

    The encoder-block linears become AAP layers (delta = 1) and the whole
    model keeps training with the same optimizer and schedule settings.
    """
    model = copy.deepcopy(phase1_model)
    model.quantize_()
    trainer = Trainer(model=model, cfg=train_cfg, phase=PHASE2, select_best=False)
    trainer._eval_point(None)  # step-0 quantization hit, before any QAT step
    trainer.run()
    if checkpoint_path:
        save_model(trainer.model, checkpoint_path, PHASE2, {"history": trainer.history})
    if frozen_path:
        model.freeze().save(frozen_path)
    return trainer
