"""Scikit-learn style decoders: ``fit`` trains, ``predict`` decodes, ``decision_function`` gives logits."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .bp import bp_decode
from .channel import ebn0_to_sigma
from .codes import ParityCheck, resolve_code


def resolve(code) -> ParityCheck:
    return code if isinstance(code, ParityCheck) else resolve_code(str(code))


def check_channel_output(Y, n: int) -> np.ndarray:
    """Validate a (samples, n) array of real channel outputs."""
    Y = check_array(Y, dtype=np.float64, ensure_2d=True)
    if Y.shape[1] != n:
        raise ValueError(f"expected {n} channel outputs per sample, got {Y.shape[1]}")
    return Y


class AECCTDecoder(BaseEstimator):
    """Transformer decoder trained on simulated zero-codeword traffic.

    ``fit`` ignores ``X``: training data is generated on the fly from the code
    and the channel model. With ``quantize=True`` a second QAT phase follows
    and prediction runs on the frozen integer model.

    Args:
        code: ParityCheck, bundled code key, or alist path.
        phase2_epochs: QAT budget in epochs (defaults to ``epochs``).
    """

    def __init__(self, code="bch_31_16", n_blocks=2, dim=32, heads=8, h_first=4, h_second=4,
                 d_spe=8, attention_mode="HPSA", quantize=False, epochs=40,
                 batches_per_epoch=1000, phase2_epochs=None, batch_size=128, lr_max=5e-4,
                 lr_min=5e-7, eval_every=2000, val_frames=10000, seed=0):
        self.code = code
        self.n_blocks = n_blocks
        self.dim = dim
        self.heads = heads
        self.h_first = h_first
        self.h_second = h_second
        self.d_spe = d_spe
        self.attention_mode = attention_mode
        self.quantize = quantize
        self.epochs = epochs
        self.batches_per_epoch = batches_per_epoch
        self.phase2_epochs = phase2_epochs
        self.batch_size = batch_size
        self.lr_max = lr_max
        self.lr_min = lr_min
        self.eval_every = eval_every
        self.val_frames = val_frames
        self.seed = seed

    def _model_config(self):
        from .model import ModelConfig

        return ModelConfig(n_blocks=self.n_blocks, dim=self.dim, heads=self.heads,
                           h_first=self.h_first, h_second=self.h_second, d_spe=self.d_spe,
                           attention_mode=self.attention_mode)

    def _train_config(self, epochs):
        from .training import TrainConfig

        return TrainConfig(epochs=epochs, batches_per_epoch=self.batches_per_epoch,
                           batch_size=self.batch_size, lr_max=self.lr_max, lr_min=self.lr_min,
                           seed=self.seed, eval_every=self.eval_every, val_frames=self.val_frames)

    def fit(self, X=None, y=None):
        from .training import train_phase1, train_phase2

        pc = resolve(self.code)
        trainer = train_phase1(pc, self._model_config(), self._train_config(self.epochs))
        self.model_ = trainer.model
        self.history_ = list(trainer.history)
        self.frozen_ = None
        if self.quantize:
            epochs = self.epochs if self.phase2_epochs is None else self.phase2_epochs
            qat = train_phase2(self.model_, self._train_config(epochs))
            self.model_ = qat.model
            self.history_ += qat.history
            self.frozen_ = self.model_.freeze()
        self.pc_ = pc
        return self

    @classmethod
    def from_model(cls, model, frozen=None) -> "AECCTDecoder":
        """Wrap an already trained model (torch AECCT) and/or a frozen copy."""
        src = model if model is not None else frozen
        cfg = src.cfg.to_dict() if model is not None else src.config
        est = cls(code=src.pc, n_blocks=cfg["n_blocks"], dim=cfg["dim"], heads=cfg["heads"],
                  h_first=cfg["h_first"], h_second=cfg["h_second"], d_spe=cfg["d_spe"],
                  attention_mode=cfg["attention_mode"], quantize=frozen is not None)
        est.model_, est.frozen_, est.pc_, est.history_ = model, frozen, src.pc, []
        return est

    def _engine(self):
        check_is_fitted(self, "pc_")
        return self.frozen_ if self.frozen_ is not None else self.model_

    def decision_function(self, Y):
        """Noise logits (samples, n); positive means the hard decision is flipped."""
        Y = check_channel_output(Y, resolve(self.code).n if not hasattr(self, "pc_") else self.pc_.n)
        return self._engine().predict_logits(Y)

    # models and the evaluation harness share this name
    predict_logits = decision_function

    def predict(self, Y):
        """Decoded codewords (samples, n) as uint8."""
        logits = self.decision_function(Y)
        return ((np.asarray(Y) < 0) ^ (logits > 0)).astype(np.uint8)


class BPDecoder(BaseEstimator):
    """Sum-product belief propagation; ``fit`` only resolves the code."""

    def __init__(self, code="bch_31_16", iters=5, ebn0_db=5.0, early_stop=True):
        self.code = code
        self.iters = iters
        self.ebn0_db = ebn0_db
        self.early_stop = early_stop

    def fit(self, X=None, y=None):
        if self.iters < 1:
            raise ValueError("iters must be >= 1")
        self.pc_ = resolve(self.code)
        self.sigma_ = float(ebn0_to_sigma(self.ebn0_db, self.pc_.rate))
        return self

    def _run(self, Y):
        check_is_fitted(self, "pc_")
        Y = check_channel_output(Y, self.pc_.n)
        return bp_decode(self.pc_, Y, self.sigma_, max_iters=self.iters, early_stop=self.early_stop)

    def decision_function(self, Y):
        """Posterior LLRs (positive favours bit 0)."""
        return self._run(Y).llr

    def predict(self, Y):
        return self._run(Y).bits
